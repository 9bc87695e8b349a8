use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Point, World};
use crate::error::{Error, Result};
use crate::rng::rng;

/// Spinning multi-beam LiDAR. Beam `k` of `n` points at elevation
/// `min + (max - min) * k / n`, so the 16-, 32- and 64-beam grids over the
/// same field of view are nested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub beam_count: u32,
    /// (min, max) elevation in degrees.
    pub vertical_fov: (f64, f64),
    /// Degrees between successive firings.
    pub azimuth_step: f64,
    pub max_range: f64,
    pub sensor_height: f64,
    pub dropout_rate: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beam_count: 64,
            vertical_fov: (-24.0, 4.0),
            azimuth_step: 1.5,
            max_range: 40.0,
            sensor_height: 1.8,
            dropout_rate: 0.0,
        }
    }
}

impl LidarConfig {
    pub fn with_beams(beam_count: u32) -> Self {
        Self {
            beam_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.vertical_fov;
        if self.beam_count == 0 {
            return Err(Error::Config("beam_count must be >= 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("vertical_fov {lo}..{hi} is empty")));
        }
        if !(self.azimuth_step.is_finite() && self.azimuth_step > 0.0) {
            return Err(Error::Config("azimuth_step must be > 0".into()));
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(Error::Config("max_range must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1]".into()));
        }
        if !self.sensor_height.is_finite() {
            return Err(Error::Config("sensor_height must be finite".into()));
        }
        Ok(())
    }

    pub fn elevation_deg(&self, beam: u32) -> f64 {
        let (lo, hi) = self.vertical_fov;
        lo + (hi - lo) * f64::from(beam) / f64::from(self.beam_count)
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step - 1e-9).ceil() as usize
    }

    /// Index of the firing azimuth that produced a return at `position`
    /// (sensor frame).
    pub fn azimuth_index(&self, position: [f64; 3]) -> usize {
        let deg = position[1].atan2(position[0]).to_degrees().rem_euclid(360.0);
        let n = self.azimuth_count();
        ((deg / self.azimuth_step).round() as usize) % n
    }

    pub fn ray_direction(&self, beam: u32, azimuth_index: usize) -> [f64; 3] {
        let e = self.elevation_deg(beam).to_radians();
        let a = (azimuth_index as f64 * self.azimuth_step).to_radians();
        [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()]
    }
}

/// Casts one ray per (beam, azimuth) and keeps the nearest hit within range.
/// Each return is dropped independently with probability `dropout_rate`.
pub fn lidar_scan(world: &World, lidar: &LidarConfig, seed: u64) -> Result<Vec<Point>> {
    lidar.validate()?;
    let mut r = rng(seed);
    let origin = [0.0, 0.0, lidar.sensor_height];
    let mut cloud = Vec::new();
    for beam in 0..lidar.beam_count {
        for az in 0..lidar.azimuth_count() {
            let d = lidar.ray_direction(beam, az);
            let Some(hit) = world.intersect(origin, d, lidar.max_range) else {
                continue;
            };
            let drop = r.random::<f64>() < lidar.dropout_rate;
            if drop {
                continue;
            }
            let intensity =
                (hit.reflectivity * (1.0 - 0.5 * hit.t / lidar.max_range)).clamp(0.0, 1.0);
            cloud.push(Point {
                position: [
                    (hit.t * d[0]) as f32,
                    (hit.t * d[1]) as f32,
                    (hit.t * d[2]) as f32,
                ],
                intensity: intensity as f32,
                beam_id: beam as u16,
                label: hit.class,
            });
        }
    }
    Ok(cloud)
}
