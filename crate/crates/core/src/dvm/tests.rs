use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::bev::{scatter_max_3d, GridSpec};
use crate::rng::rng;
use crate::scene::{generate_world, lidar_scan, Class, WorldSpec};
use crate::tensor::Matrix;

fn grid_with_counts(counts: &[u32], channels: usize, seed: u64) -> BevGrid {
    let spec = GridSpec::centered(0.5, counts.len(), 1);
    let mut g = BevGrid::zeros(spec, channels);
    let mut r = rng(seed);
    for (cell, &c) in counts.iter().enumerate() {
        g.counts[cell] = c;
        if c > 0 {
            for v in g.features.row_mut(cell) {
                *v = r.random_range(-1.0..3.0);
            }
        }
    }
    g
}

fn random_counts(n: usize, seed: u64) -> Vec<u32> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| match r.random_range(0..4) {
            0 => 0,
            1 => r.random_range(1..10),
            2 => r.random_range(10..50),
            _ => r.random_range(50..200),
        })
        .collect()
}

#[test]
fn histogram_examples() {
    let empty = grid_with_counts(&[0; 6], 2, 0);
    let h = area_histogram(&empty, &Bins::default());
    assert_eq!((h.n_low(), h.n_mid(), h.n_high(), h.n_all), (0, 0, 0, 0));
    let g = grid_with_counts(&[3, 12, 70, 0], 2, 0);
    let h = area_histogram(&g, &Bins::default());
    assert_eq!((h.n_low(), h.n_mid(), h.n_high(), h.n_all), (1, 1, 1, 3));
}

#[test]
fn histogram_matches_recount() {
    for seed in 0..100 {
        let counts = random_counts(64, seed);
        let h = area_histogram(&grid_with_counts(&counts, 1, seed), &Bins::default());
        let low = counts.iter().filter(|&&c| (1..10).contains(&c)).count();
        let mid = counts.iter().filter(|&&c| (10..50).contains(&c)).count();
        let high = counts.iter().filter(|&&c| c >= 50).count();
        assert_eq!(h.counts, vec![low, mid, high]);
        assert_eq!(h.n_all, counts.iter().filter(|&&c| c > 0).count());
    }
}

#[test]
fn bins_validation_and_parsing() {
    assert!(Bins::from_intervals(&[(1, Some(10)), (10, Some(50)), (50, None)]).is_ok());
    // gap
    assert!(Bins::from_intervals(&[(1, Some(10)), (12, None)]).is_err());
    // overlap
    assert!(Bins::from_intervals(&[(1, Some(10)), (8, None)]).is_err());
    // not starting at 1
    assert!(Bins::from_intervals(&[(2, None)]).is_err());
    // closed last interval
    assert!(Bins::from_intervals(&[(1, Some(10))]).is_err());
    let b: Bins = "1,5,20".parse().unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.bin_of(4), Some(0));
    assert_eq!(b.bin_of(5), Some(1));
    assert_eq!(b.bin_of(20), Some(2));
    assert_eq!(b.bin_of(0), None);
    assert_eq!(b.label(2), "[20,inf)");
    assert!("1,1,3".parse::<Bins>().is_err());
    assert!("0,4".parse::<Bins>().is_err());
    assert!("1,x".parse::<Bins>().is_err());
}

#[test]
fn single_cell_vector_is_its_feature_direction() {
    let g = grid_with_counts(&[0, 5, 0], 3, 4);
    let h = area_histogram(&g, &Bins::default());
    let raw = dvm_vector_unnormalized(&g, &h).unwrap();
    assert_eq!(raw, g.features.row(1));
    let v = dvm_vector(&g, &h, "s1").unwrap();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (a, b) in v.values.iter().zip(&raw) {
        assert!((a - b / n).abs() < 1e-15);
    }
    assert!((v.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_grid_gives_zero_vector() {
    let g = grid_with_counts(&[0, 0], 3, 0);
    let v = dvm_vector(&g, &area_histogram(&g, &Bins::default()), "t").unwrap();
    assert_eq!(v.values, vec![0.0; 3]);
}

#[test]
fn weights_sum_to_one() {
    for seed in 0..200 {
        let counts = random_counts(40, seed);
        let h = area_histogram(&grid_with_counts(&counts, 1, seed), &Bins::default());
        if h.n_all == 0 {
            continue;
        }
        assert_eq!(h.counts.iter().sum::<usize>(), h.n_all);
        let w = h.weights();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert_eq!(w.iter().sum::<f64>(), 1.0);
        for (x, &c) in w.iter().zip(&h.counts) {
            assert!((x - c as f64 / h.n_all as f64).abs() <= f64::EPSILON);
        }
    }
}

#[test]
fn vector_matches_per_bin_oracle() {
    for seed in 0..50 {
        let counts = random_counts(100, seed);
        let g = grid_with_counts(&counts, 4, seed + 1000);
        let h = area_histogram(&g, &Bins::default());
        let got = dvm_vector_unnormalized(&g, &h).unwrap();
        let n_all = counts.iter().filter(|&&c| c > 0).count() as f64;
        let mut want = [0.0f64; 4];
        for (lo, hi) in [(1u32, 10u32), (10, 50), (50, u32::MAX)] {
            let members: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] >= lo && counts[k] < hi).collect();
            if members.is_empty() {
                continue;
            }
            let w = members.len() as f64 / n_all;
            for (c, slot) in want.iter_mut().enumerate() {
                let m = members.iter().map(|&k| g.features.get(k, c)).fold(f64::NEG_INFINITY, f64::max);
                *slot += w * m;
            }
        }
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_histogram_rejected() {
    let g = grid_with_counts(&[3, 12], 2, 0);
    let other = area_histogram(&grid_with_counts(&[3, 0], 2, 0), &Bins::default());
    assert!(dvm_vector(&g, &other, "x").is_err());
}

proptest! {
    #[test]
    fn positive_homogeneity(seed in 0u64..500, scale in 0.01f64..100.0) {
        let counts = random_counts(30, seed);
        let g = grid_with_counts(&counts, 3, seed);
        let mut scaled = g.clone();
        scaled.features = Matrix::from_vec(30, 3, g.features.data().iter().map(|v| v * scale).collect());
        let h = area_histogram(&g, &Bins::default());
        let a = dvm_vector_unnormalized(&g, &h).unwrap();
        let b = dvm_vector_unnormalized(&scaled, &h).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * scale - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        let (na, nb) = (dvm_vector(&g, &h, "").unwrap(), dvm_vector(&scaled, &h, "").unwrap());
        for (x, y) in na.values.iter().zip(&nb.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

fn scan(world_seed: u64, beams: u32) -> (Vec<Point>, LidarConfig) {
    let world = generate_world(world_seed, &WorldSpec::default()).unwrap();
    let cfg = LidarConfig::with_beams(beams);
    (lidar_scan(&world, &cfg, 0).unwrap(), cfg)
}

#[test]
fn transfer_to_same_config_is_identity() {
    let (cloud, cfg) = scan(1, 32);
    assert_eq!(density_transfer(&cloud, &cfg, &cfg).unwrap(), cloud);
}

#[test]
fn decimation_keeps_shared_beams() {
    let (cloud, c64) = scan(2, 64);
    let c16 = LidarConfig::with_beams(16);
    let out = density_transfer(&cloud, &c64, &c16).unwrap();
    let shared = cloud.iter().filter(|p| p.beam_id % 4 == 0).count();
    assert_eq!(out.len(), shared);
    assert!(out.iter().all(|p| p.beam_id < 16));
    let labels_in: std::collections::HashSet<Class> = cloud.iter().map(|p| p.label).collect();
    assert!(out.iter().all(|p| labels_in.contains(&p.label)));
}

#[test]
fn decimation_equals_direct_scan() {
    for seed in 0..5 {
        let (cloud64, c64) = scan(seed, 64);
        let (cloud16, c16) = scan(seed, 16);
        assert_eq!(density_transfer(&cloud64, &c64, &c16).unwrap(), cloud16);
    }
}

#[test]
fn upsampling_interpolates_between_adjacent_beams() {
    let (cloud16, c16) = scan(3, 16);
    let c64 = LidarConfig::with_beams(64);
    let up = density_transfer(&cloud16, &c16, &c64).unwrap();
    assert!(up.len() > cloud16.len());
    assert!(up.len() <= 4 * cloud16.len());
    // originals keep their positions on the nested beams
    for (a, b) in cloud16.iter().zip(&up) {
        assert_eq!(a.position, b.position);
        assert_eq!(u32::from(b.beam_id), 4 * u32::from(a.beam_id));
    }
    let labels_in: std::collections::HashSet<Class> = cloud16.iter().map(|p| p.label).collect();
    assert!(up.iter().all(|p| labels_in.contains(&p.label) && p.beam_id < 64));
    // going back down recovers the original cloud
    assert_eq!(density_transfer(&up, &c64, &c16).unwrap()[..cloud16.len()], cloud16[..]);
}

#[test]
fn non_nested_grids_rejected() {
    let (cloud, c16) = scan(4, 16);
    let c24 = LidarConfig::with_beams(24);
    assert!(matches!(
        density_transfer(&cloud, &c16, &c24),
        Err(Error::NonNestedGrids { .. })
    ));
    let other_fov = LidarConfig {
        vertical_fov: (-20.0, 4.0),
        ..LidarConfig::with_beams(64)
    };
    assert!(density_transfer(&cloud, &c16, &other_fov).is_err());
}

#[test]
fn sparser_scans_never_add_points_to_a_pillar() {
    let spec = GridSpec::default();
    for seed in 0..20 {
        let counts = |beams| {
            let (cloud, _) = scan(seed, beams);
            scatter_max_3d(&Matrix::zeros(cloud.len(), 1), &cloud, &spec).unwrap().counts
        };
        let (c16, c32, c64) = (counts(16), counts(32), counts(64));
        for k in 0..spec.n_cells() {
            assert!(c16[k] <= c32[k] && c32[k] <= c64[k]);
        }
        // and the histogram shifts toward lower bins
        let bins = Bins::default();
        let (h16, h64) = (AreaHistogram::from_counts(&c16, &bins), AreaHistogram::from_counts(&c64, &bins));
        assert!(h16.n_high() <= h64.n_high());
    }
}
