//! Synthetic scenes: procedural worlds, a raycast LiDAR, a pinhole camera
//! renderer and point-to-pixel projection maps.

mod camera;
mod lidar;
mod perturb;
mod world;

pub use camera::{project_points, render_image, CameraModel, Image, Pixel, ProjectionMap, IMAGE_CHANNELS};
pub use lidar::{lidar_scan, LidarConfig};
pub use perturb::perturb_projections;
pub use world::{generate_world, Hit, Shape, World, WorldObject, WorldSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const NUM_CLASSES: usize = 5;

/// The five semantic classes shared by all domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Car = 0,
    Truck = 1,
    Bike = 2,
    Person = 3,
    Background = 4,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Car,
        Class::Truck,
        Class::Bike,
        Class::Person,
        Class::Background,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Car => "car",
            Class::Truck => "truck",
            Class::Bike => "bike",
            Class::Person => "person",
            Class::Background => "background",
        }
    }
}

/// One LiDAR return, in the sensor frame (x forward, y left, z up).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub position: [f32; 3],
    pub intensity: f32,
    pub beam_id: u16,
    pub label: Class,
}

impl Point {
    pub fn position_f64(&self) -> [f64; 3] {
        self.position.map(f64::from)
    }
}

/// A labeled point cloud paired with a rendered image and the projection
/// of every point into that image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub cloud: Vec<Point>,
    pub image: Image,
    pub projection: ProjectionMap,
    pub domain_tag: String,
}

impl ScenePair {
    /// Pairs a scan with an image, keeping only the points that project into
    /// the image (front camera only).
    pub fn new(
        cloud: Vec<Point>,
        image: Image,
        camera: &CameraModel,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        let full = project_points(&cloud, camera);
        let mut kept = Vec::with_capacity(cloud.len());
        for (p, px) in cloud.iter().zip(full.entries()) {
            if px.is_some() {
                kept.push(*p);
            }
        }
        Self::from_parts(kept, image, camera, domain_tag)
    }

    /// Builds a pair whose cloud must project entirely into the image.
    pub fn from_parts(
        cloud: Vec<Point>,
        image: Image,
        camera: &CameraModel,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Config("scene has no points in the camera view".into()));
        }
        let projection = project_points(&cloud, camera);
        if projection.len() != cloud.len() {
            return Err(Error::Shape(format!(
                "{} of {} points fall outside the image",
                cloud.len() - projection.len(),
                cloud.len()
            )));
        }
        Ok(Self {
            cloud,
            image,
            projection,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn with_projection(&self, projection: ProjectionMap) -> Result<Self> {
        if projection.entries().len() != self.cloud.len() {
            return Err(Error::Shape(format!(
                "projection has {} entries for {} points",
                projection.entries().len(),
                self.cloud.len()
            )));
        }
        Ok(Self {
            projection,
            ..self.clone()
        })
    }
}

/// Synthesizes one paired sample: world, scan, render, projection.
pub fn synthesize_pair(
    seed: u64,
    world_spec: &WorldSpec,
    lidar: &LidarConfig,
    camera: &CameraModel,
    render_noise: f64,
    domain_tag: &str,
) -> Result<ScenePair> {
    let world = generate_world(derive_seed(seed, "world"), world_spec)?;
    let cloud = lidar_scan(&world, lidar, derive_seed(seed, "lidar"))?;
    let image = render_image(
        &world,
        camera,
        lidar.sensor_height,
        render_noise,
        derive_seed(seed, "render"),
    )?;
    ScenePair::new(cloud, image, camera, domain_tag)
}
