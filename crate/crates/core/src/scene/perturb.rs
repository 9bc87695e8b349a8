use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Pixel, ProjectionMap};
use crate::error::{Error, Result};
use crate::rng::rng;

const MAX_REDRAWS: usize = 64;

/// Displaces a seeded uniform subset of `ceil(fraction * |map|)` projections
/// by offsets drawn uniformly from the disk of radius `radius_px`, clamped to
/// the image.
///
/// The subset is a prefix of one seeded permutation and each entry's offset
/// is fixed by the seed, so for a given seed the perturbation at a larger
/// fraction extends the one at a smaller fraction.
pub fn perturb_projections(
    map: &ProjectionMap,
    fraction: f64,
    radius_px: f64,
    seed: u64,
) -> Result<ProjectionMap> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("perturbation fraction {fraction} outside [0, 1]")));
    }
    if !(radius_px >= 0.0 && radius_px.is_finite()) {
        return Err(Error::Config(format!("perturbation radius {radius_px} must be >= 0")));
    }
    let mut r = rng(seed);
    let mut present: Vec<usize> = map.iter().map(|(i, _)| i).collect();
    present.shuffle(&mut r);
    let draws: Vec<(f64, f64, u64)> = (0..present.len())
        .map(|_| (r.random(), r.random(), r.random()))
        .collect();
    let k = (fraction * present.len() as f64).ceil() as usize;
    let mut entries = map.entries().to_vec();
    if radius_px == 0.0 {
        return Ok(map.clone());
    }
    let u_max = (map.width as f32).next_down();
    let v_max = (map.height as f32).next_down();
    for (slot, &idx) in present.iter().take(k).enumerate() {
        let orig = entries[idx].expect("present entry");
        let (a0, b0, redraw_seed) = draws[slot];
        let mut redraw = rng(redraw_seed);
        let mut moved = orig;
        for attempt in 0..MAX_REDRAWS {
            // a clamped offset can land back on the original pixel
            let (a, b) = if attempt == 0 {
                (a0, b0)
            } else {
                (redraw.random::<f64>(), redraw.random::<f64>())
            };
            // uniform in the disk: radius ~ R sqrt(a), angle ~ 2 pi b
            let rho = radius_px * a.sqrt();
            let theta = std::f64::consts::TAU * b;
            let u = (f64::from(orig.u) + rho * theta.cos()) as f32;
            let v = (f64::from(orig.v) + rho * theta.sin()) as f32;
            moved = Pixel {
                u: u.clamp(0.0, u_max),
                v: v.clamp(0.0, v_max),
            };
            if moved != orig {
                break;
            }
        }
        entries[idx] = Some(moved);
    }
    Ok(ProjectionMap::new(map.width, map.height, entries))
}
