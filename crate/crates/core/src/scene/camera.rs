use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Class, Point, World};
use crate::error::{Error, Result};
use crate::rng::rng;

/// Pinhole camera rigidly attached to the LiDAR. `rotation`/`translation`
/// map sensor coordinates into the camera frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

const LIDAR_TO_CAMERA_AXES: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];

impl Default for CameraModel {
    fn default() -> Self {
        Self::looking_forward(320, 240, 160.0, [0.1, 0.0, -0.3])
    }
}

impl CameraModel {
    /// Camera at `position` (sensor frame) whose optical axis is the sensor
    /// x axis, with the principal point at the image center.
    pub fn looking_forward(width: usize, height: usize, focal: f64, position: [f64; 3]) -> Self {
        let r = LIDAR_TO_CAMERA_AXES;
        let t = [0, 1, 2].map(|i| -(0..3).map(|j| r[i][j] * position[j]).sum::<f64>());
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: r,
            translation: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be > 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::Config("principal point outside the image".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::Config("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("rotation determinant is {det}, not +1")));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    /// Continuous pixel coordinates of a sensor-frame point, if it lies in
    /// front of the camera (bounds are not checked).
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let [x, y, z] = self.to_camera(p);
        if z <= 0.0 {
            return None;
        }
        Some((self.fx * x / z + self.cx, self.fy * y / z + self.cy))
    }

    fn center_in_sensor(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [0, 1, 2].map(|j| -(0..3).map(|i| r[i][j] * t[i]).sum::<f64>())
    }

    fn ray_in_sensor(&self, u: f64, v: f64) -> [f64; 3] {
        let dc = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let n = (dc[0] * dc[0] + dc[1] * dc[1] + 1.0).sqrt();
        let r = &self.rotation;
        [0, 1, 2].map(|j| (0..3).map(|i| r[i][j] * dc[i]).sum::<f64>() / n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f32,
    pub v: f32,
}

impl Pixel {
    /// Integer pixel containing this location.
    pub fn cell(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Point index -> pixel location; points that do not project are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMap {
    pub width: usize,
    pub height: usize,
    entries: Vec<Option<Pixel>>,
}

impl ProjectionMap {
    pub fn new(width: usize, height: usize, entries: Vec<Option<Pixel>>) -> Self {
        Self {
            width,
            height,
            entries,
        }
    }

    /// Number of projected points.
    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> &[Option<Pixel>] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<Pixel> {
        self.entries.get(index).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Pixel)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|p| (i, p)))
    }

    pub fn in_bounds(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && (p.u as f64) < self.width as f64 && (p.v as f64) < self.height as f64
    }
}

/// Pinhole projection of every point; keeps points in front of the camera
/// whose pixel lies inside the image.
pub fn project_points(cloud: &[Point], camera: &CameraModel) -> ProjectionMap {
    let mut map = ProjectionMap::new(camera.width, camera.height, Vec::with_capacity(cloud.len()));
    for p in cloud {
        let px = camera.project(p.position_f64()).and_then(|(u, v)| {
            let px = Pixel {
                u: u as f32,
                v: v as f32,
            };
            map.in_bounds(px).then_some(px)
        });
        map.entries.push(px);
    }
    map
}

/// Multi-channel synthetic image with per-pixel class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `height x width x channels`.
    pub data: Vec<f32>,
    pub labels: Vec<Class>,
}

pub const IMAGE_CHANNELS: usize = 3;
const MAX_DEPTH: f64 = 50.0;
const MAX_RAY: f64 = 200.0;

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn label(&self, x: usize, y: usize) -> Class {
        self.labels[y * self.width + x]
    }
}

/// Raycasts every pixel center. Channels are (normalized depth, surface
/// normal z, albedo + Gaussian noise); rays that escape get depth 1 and are
/// labeled background.
pub fn render_image(
    world: &World,
    camera: &CameraModel,
    sensor_height: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Image> {
    camera.validate()?;
    let noise = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("render noise: {e}")))?;
    let mut r = rng(seed);
    let c = camera.center_in_sensor();
    let origin = [c[0], c[1], c[2] + sensor_height];
    let (w, h) = (camera.width, camera.height);
    let mut data = Vec::with_capacity(w * h * IMAGE_CHANNELS);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d = camera.ray_in_sensor(x as f64 + 0.5, y as f64 + 0.5);
            let eps: f64 = noise.sample(&mut r);
            match world.intersect(origin, d, MAX_RAY) {
                Some(hit) => {
                    let depth = hit.t * camera.to_camera_dir(d)[2];
                    data.push((depth / MAX_DEPTH).min(1.0) as f32);
                    data.push(hit.normal_z as f32);
                    data.push((hit.albedo + eps) as f32);
                    labels.push(hit.class);
                }
                None => {
                    data.extend_from_slice(&[1.0, 0.0, eps as f32]);
                    labels.push(Class::Background);
                }
            }
        }
    }
    Ok(Image {
        height: h,
        width: w,
        channels: IMAGE_CHANNELS,
        data,
        labels,
    })
}

impl CameraModel {
    fn to_camera_dir(&self, d: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_world, Shape, WorldObject, WorldSpec};

    #[test]
    fn default_camera_is_valid() {
        CameraModel::default().validate().unwrap();
        let mut bad = CameraModel::default();
        bad.rotation[0][0] = 0.5;
        assert!(bad.validate().is_err());
        let mut reflect = CameraModel::default();
        reflect.rotation[0] = [0.0, 1.0, 0.0];
        assert!(reflect.validate().is_err());
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let cam = CameraModel::looking_forward(320, 240, 160.0, [0.0; 3]);
        let (u, v) = cam.project([5.0, 0.0, 0.0]).unwrap();
        assert_eq!((u, v), (cam.cx, cam.cy));
    }

    #[test]
    fn points_behind_camera_are_excluded() {
        let cam = CameraModel::default();
        let p = |x: f32| Point {
            position: [x, 0.0, 0.0],
            intensity: 0.0,
            beam_id: 0,
            label: Class::Car,
        };
        let map = project_points(&[p(-3.0), p(5.0), p(0.1)], &cam);
        assert_eq!(map.get(0), None);
        assert!(map.get(1).is_some());
        // depth 0 in the camera frame
        assert_eq!(map.get(2), None);
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn empty_world_renders_background() {
        let world = generate_world(7, &WorldSpec::default().empty()).unwrap();
        let cam = CameraModel::looking_forward(64, 48, 32.0, [0.0; 3]);
        let img = render_image(&world, &cam, 1.8, 0.05, 1).unwrap();
        assert!(img.labels.iter().all(|&l| l == Class::Background));
        let again = render_image(&world, &cam, 1.8, 0.05, 1).unwrap();
        assert_eq!(img, again);
    }

    // Independent slab test against an axis-aligned box.
    fn oracle_hits_box(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> bool {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for a in 0..3 {
            let t1 = (min[a] - o[a]) / d[a];
            let t2 = (max[a] - o[a]) / d[a];
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
        hi >= lo && hi > 0.0
    }

    #[test]
    fn box_footprint_labels_match_analytic_projection() {
        let mut world = generate_world(7, &WorldSpec::default().empty()).unwrap();
        let (min, max) = ([8.13, -1.37, 0.0], [12.2, 0.61, 1.47]);
        world.objects.push(WorldObject {
            shape: Shape::Box { min, max },
            class: Class::Car,
            albedo: 0.5,
            reflectivity: 0.5,
        });
        let cam = CameraModel::looking_forward(80, 60, 40.0, [0.0, 0.0, -0.3]);
        let img = render_image(&world, &cam, 1.8, 0.0, 0).unwrap();
        let c = cam.center_in_sensor();
        let o = [c[0], c[1], c[2] + 1.8];
        let mut car_pixels = 0;
        for y in 0..60 {
            for x in 0..80 {
                let d = cam.ray_in_sensor(x as f64 + 0.5, y as f64 + 0.5);
                let want = if oracle_hits_box(o, d, min, max) {
                    car_pixels += 1;
                    Class::Car
                } else {
                    Class::Background
                };
                assert_eq!(img.label(x, y), want, "pixel ({x}, {y})");
            }
        }
        assert!(car_pixels > 50);
    }
}
