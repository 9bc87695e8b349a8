use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::rng::rng;
use crate::scene::{Class, Pixel};

fn pt(x: f64, y: f64) -> Point {
    Point {
        position: [x as f32, y as f32, 0.0],
        intensity: 0.5,
        beam_id: 0,
        label: Class::Background,
    }
}

fn random_cloud(n: usize, spec: &GridSpec, seed: u64) -> Vec<Point> {
    let mut r = rng(seed);
    let (wx, wy) = (
        spec.cells_x as f64 * spec.cell_size,
        spec.cells_y as f64 * spec.cell_size,
    );
    // 10% margin on each side puts some points out of extent
    (0..n)
        .map(|_| {
            pt(
                spec.origin[0] + r.random_range(-0.1..1.1) * wx,
                spec.origin[1] + r.random_range(-0.1..1.1) * wy,
            )
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect())
}

// Cell membership straight from the pillar inequalities, scanning all cells.
fn oracle_cell(x: f64, y: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    let w = spec.cell_size;
    let (x, y) = (x - spec.origin[0], y - spec.origin[1]);
    let mut found = None;
    for i in 0..spec.cells_x {
        for j in 0..spec.cells_y {
            let (i1, j1) = ((i + 1) as f64, (j + 1) as f64);
            if i as f64 * w <= x && x < i1 * w && j as f64 * w <= y && y < j1 * w {
                assert!(found.is_none());
                found = Some((i, j));
            }
        }
    }
    found
}

// O(N W L) scatter-max.
fn oracle_scatter(features: &Matrix, xy: &[[f64; 2]], spec: &GridSpec) -> BevGrid {
    let mut grid = BevGrid::zeros(spec.clone(), features.cols());
    for i in 0..spec.cells_x {
        for j in 0..spec.cells_y {
            let cell = spec.linear((i, j));
            let mut best: Option<Vec<f64>> = None;
            let mut count = 0;
            for (n, p) in xy.iter().enumerate() {
                if oracle_cell(p[0], p[1], spec) == Some((i, j)) {
                    count += 1;
                    let f = features.row(n);
                    best = Some(match best {
                        None => f.to_vec(),
                        Some(b) => b.iter().zip(f).map(|(a, c)| a.max(*c)).collect(),
                    });
                }
            }
            if let Some(b) = best {
                grid.features.row_mut(cell).copy_from_slice(&b);
            }
            grid.counts[cell] = count;
        }
    }
    grid
}

fn xy_of(cloud: &[Point]) -> Vec<[f64; 2]> {
    cloud
        .iter()
        .map(|p| [f64::from(p.position[0]), f64::from(p.position[1])])
        .collect()
}

#[test]
fn assign_pillar_examples() {
    let spec = GridSpec {
        origin: [0.0, 0.0],
        cell_size: 0.5,
        cells_x: 64,
        cells_y: 64,
    };
    assert_eq!(assign_pillar([0.1, 0.1], &spec), Some((0, 0)));
    assert_eq!(assign_pillar([0.5, 0.0], &spec), Some((1, 0)));
    assert_eq!(assign_pillar([-0.01, 0.0], &spec), None);
    assert_eq!(assign_pillar([32.0, 0.0], &spec), None);
    assert_eq!(assign_pillar([f64::NAN, 0.0], &spec), None);
}

#[test]
fn assign_pillar_matches_inequality_oracle() {
    let spec = GridSpec {
        origin: [-3.0, 1.25],
        cell_size: 0.5,
        cells_x: 64,
        cells_y: 64,
    };
    for p in xy_of(&random_cloud(10_000, &spec, 1)) {
        assert_eq!(assign_pillar(p, &spec), oracle_cell(p[0], p[1], &spec), "{p:?}");
    }
}

#[test]
fn scatter_max_is_coordinatewise() {
    let spec = GridSpec::centered(0.5, 4, 4);
    let cloud = vec![pt(0.1, 0.1), pt(0.2, 0.3), pt(0.4, 0.05)];
    let feats = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]);
    let g = scatter_max_3d(&feats, &cloud, &spec).unwrap();
    let (i, j) = assign_pillar([0.1, 0.1], &spec).unwrap();
    assert_eq!(g.feature(i, j), &[1.0, 2.0]);
    assert_eq!(g.count(i, j), 3);
    assert_eq!(g.counts.iter().sum::<u32>(), 3);
}

#[test]
fn out_of_extent_points_leave_grid_empty() {
    let spec = GridSpec::centered(0.5, 8, 8);
    let cloud = vec![pt(-1.0, 0.0), pt(100.0, 0.0), pt(1.0, 50.0)];
    let g = scatter_max_3d(&random_matrix(3, 4, 2), &cloud, &spec).unwrap();
    assert!(g.features.data().iter().all(|&v| v == 0.0));
    assert!(g.counts.iter().all(|&c| c == 0));
}

#[test]
fn scatter_max_3d_matches_brute_force() {
    let spec = GridSpec::centered(0.5, 32, 32);
    let cloud = random_cloud(2_000, &spec, 3);
    let feats = random_matrix(2_000, 5, 4);
    let got = scatter_max_3d(&feats, &cloud, &spec).unwrap();
    assert_eq!(got, oracle_scatter(&feats, &xy_of(&cloud), &spec));
}

#[test]
fn scatter_max_length_mismatch() {
    let spec = GridSpec::default();
    assert!(scatter_max_3d(&random_matrix(2, 3, 0), &[pt(1.0, 1.0)], &spec).is_err());
}

fn full_projection(n: usize, seed: u64) -> ProjectionMap {
    let mut r = rng(seed);
    let entries = (0..n)
        .map(|_| {
            r.random_bool(0.8).then(|| Pixel {
                u: r.random_range(0.0..320.0),
                v: r.random_range(0.0..240.0),
            })
        })
        .collect();
    ProjectionMap::new(320, 240, entries)
}

#[test]
fn scatter_max_2d_single_pair() {
    let spec = GridSpec::centered(0.5, 4, 4);
    let cloud = vec![pt(0.7, 0.2)];
    let proj = ProjectionMap::new(320, 240, vec![Some(Pixel { u: 5.0, v: 6.0 })]);
    let f = Matrix::from_rows(&[vec![0.3, -0.2]]);
    let g = scatter_max_2d(&f, &proj, &cloud, &spec).unwrap();
    let (i, j) = assign_pillar([0.7, 0.2], &spec).unwrap();
    assert_eq!(g.feature(i, j), &[0.3, -0.2]);
    assert_eq!(g.count(i, j), 1);
}

#[test]
fn scatter_max_2d_uses_point_coordinates_not_pixels() {
    let spec = GridSpec::centered(0.5, 4, 4);
    let cloud = vec![pt(0.7, 0.2), pt(0.7, 0.2)];
    let proj = ProjectionMap::new(
        320,
        240,
        vec![Some(Pixel { u: 5.0, v: 6.0 }), Some(Pixel { u: 300.0, v: 200.0 })],
    );
    let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let g = scatter_max_2d(&f, &proj, &cloud, &spec).unwrap();
    let (i, j) = assign_pillar([0.7, 0.2], &spec).unwrap();
    assert_eq!(g.feature(i, j), &[1.0, 1.0]);
    assert_eq!(g.count(i, j), 2);
    assert_eq!(g.occupied(), 1);
}

#[test]
fn scatter_max_2d_matches_brute_force() {
    let spec = GridSpec::centered(0.5, 32, 32);
    let cloud = random_cloud(1_500, &spec, 5);
    let proj = full_projection(cloud.len(), 6);
    let feats = random_matrix(proj.len(), 3, 7);
    let got = scatter_max_2d(&feats, &proj, &cloud, &spec).unwrap();
    let xy: Vec<[f64; 2]> = proj
        .iter()
        .map(|(i, _)| [f64::from(cloud[i].position[0]), f64::from(cloud[i].position[1])])
        .collect();
    assert_eq!(got, oracle_scatter(&feats, &xy, &spec));
    assert!(scatter_max_2d(&random_matrix(3, 3, 0), &proj, &cloud, &spec).is_err());
}

fn layer(out: usize, inp: usize, seed: u64) -> LinearLayer {
    let mut r = rng(seed);
    LinearLayer::new(
        random_matrix(out, inp, seed),
        (0..out).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn fuse_bev_identity_concatenates() {
    let spec = GridSpec::centered(0.5, 4, 4);
    let cloud = random_cloud(30, &spec, 8);
    let proj = ProjectionMap::new(
        320,
        240,
        (0..30).map(|_| Some(Pixel { u: 1.0, v: 1.0 })).collect(),
    );
    let f2 = random_matrix(30, 2, 9);
    let f3 = random_matrix(30, 3, 10);
    let abs = |m: &Matrix| Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|v| v.abs()).collect());
    let b2 = scatter_max_2d(&abs(&f2), &proj, &cloud, &spec).unwrap();
    let b3 = scatter_max_3d(&abs(&f3), &cloud, &spec).unwrap();
    let mut eye = Matrix::zeros(5, 5);
    for k in 0..5 {
        eye.set(k, k, 1.0);
    }
    let fused = fuse_bev(&b2, &b3, &LinearLayer::new(eye, vec![0.0; 5]).unwrap()).unwrap();
    for cell in 0..spec.n_cells() {
        let row = fused.features.row(cell);
        assert_eq!(&row[..2], b2.features.row(cell));
        assert_eq!(&row[2..], b3.features.row(cell));
        assert_eq!(fused.counts[cell], b3.counts[cell]);
    }
}

#[test]
fn fuse_bev_zero_inputs_give_relu_bias_on_occupied_cells() {
    let spec = GridSpec::centered(0.5, 4, 4);
    let mut b2 = BevGrid::zeros(spec.clone(), 2);
    let mut b3 = BevGrid::zeros(spec.clone(), 2);
    b2.counts[3] = 1;
    b3.counts[3] = 1;
    b3.counts[7] = 2;
    let bias = vec![-1.0, 0.5, 2.0];
    let fc1 = LinearLayer::new(random_matrix(3, 4, 1), bias).unwrap();
    let fused = fuse_bev(&b2, &b3, &fc1).unwrap();
    for cell in 0..spec.n_cells() {
        let want: &[f64] = if cell == 3 || cell == 7 { &[0.0, 0.5, 2.0] } else { &[0.0; 3] };
        assert_eq!(fused.features.row(cell), want);
    }
    assert_eq!(fused.counts[7], 2);
}

#[test]
fn fuse_bev_matches_per_cell_oracle() {
    let spec = GridSpec::centered(0.5, 16, 16);
    let cloud = random_cloud(400, &spec, 11);
    let proj = ProjectionMap::new(
        320,
        240,
        (0..400).map(|k| Some(Pixel { u: (k % 320) as f32, v: 2.0 })).collect(),
    );
    let b2 = scatter_max_2d(&random_matrix(400, 3, 12), &proj, &cloud, &spec).unwrap();
    let b3 = scatter_max_3d(&random_matrix(400, 4, 13), &cloud, &spec).unwrap();
    let fc1 = layer(6, 7, 14);
    let fused = fuse_bev(&b2, &b3, &fc1).unwrap();
    for cell in 0..spec.n_cells() {
        if b3.counts[cell] == 0 {
            assert!(fused.features.row(cell).iter().all(|&v| v == 0.0));
            continue;
        }
        let x: Vec<f64> = b2.features.row(cell).iter().chain(b3.features.row(cell)).copied().collect();
        for o in 0..6 {
            let mut acc = fc1.bias.get(0, o);
            for (k, xv) in x.iter().enumerate() {
                acc += fc1.weight.get(o, k) * xv;
            }
            assert!((fused.features.get(cell, o) - acc.max(0.0)).abs() < 1e-12);
        }
    }
    assert!(fuse_bev(&b2, &b3, &layer(6, 5, 0)).is_err());
    let other = BevGrid::zeros(GridSpec::centered(0.25, 16, 16), 3);
    assert!(fuse_bev(&other, &b3, &fc1).is_err());
}

#[test]
fn fuse_point_area_rules() {
    let fc2 = layer(4, 5, 15);
    let h = [0.3, -0.1];
    let out = fuse_point_area(&h, None, &fc2).unwrap();
    assert_eq!(out, fc2.apply_relu(&[0.3, -0.1, 0.0, 0.0, 0.0]));
    let zero = LinearLayer::zeros(5, 4);
    assert_eq!(fuse_point_area(&h, Some(&[1.0, 2.0, 3.0]), &zero).unwrap(), vec![0.0; 4]);
    assert!(fuse_point_area(&h, Some(&[1.0]), &fc2).is_err());
}

#[test]
fn fuse_point_area_batch_matches_per_point_oracle() {
    let spec = GridSpec::centered(0.5, 16, 16);
    let cloud = random_cloud(500, &spec, 16);
    let feats = random_matrix(500, 3, 17);
    let bev = scatter_max_3d(&random_matrix(500, 4, 18).clone(), &cloud, &spec).unwrap();
    let fc2 = layer(5, 7, 19);
    let got = fuse_point_area_batch(&feats, &cloud, &bev, &fc2).unwrap();
    for (n, p) in xy_of(&cloud).iter().enumerate() {
        let cell: Vec<f64> = match oracle_cell(p[0], p[1], &spec) {
            Some((i, j)) => bev.feature(i, j).to_vec(),
            None => vec![0.0; 4],
        };
        for o in 0..5 {
            let mut acc = fc2.bias.get(0, o);
            for k in 0..3 {
                acc += fc2.weight.get(o, k) * feats.get(n, k);
            }
            for k in 0..4 {
                acc += fc2.weight.get(o, 3 + k) * cell[k];
            }
            assert!((got.get(n, o) - acc.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn count_conservation() {
    let spec = GridSpec::centered(0.5, 32, 32);
    let cloud = random_cloud(3_000, &spec, 20);
    let g = scatter_max_3d(&random_matrix(3_000, 2, 21), &cloud, &spec).unwrap();
    let in_extent = xy_of(&cloud).iter().filter(|p| assign_pillar(**p, &spec).is_some()).count();
    assert_eq!(g.counts.iter().map(|&c| c as usize).sum::<usize>(), in_extent);
}

#[test]
fn decimation_never_increases_counts_or_features() {
    let spec = GridSpec::centered(0.5, 16, 16);
    let cloud = random_cloud(800, &spec, 22);
    let feats = {
        let m = random_matrix(800, 3, 23);
        Matrix::from_vec(800, 3, m.data().iter().map(|v| v.abs()).collect())
    };
    let full = scatter_max_3d(&feats, &cloud, &spec).unwrap();
    let keep: Vec<usize> = (0..800).filter(|i| i % 3 != 0).collect();
    let sub_cloud: Vec<Point> = keep.iter().map(|&i| cloud[i]).collect();
    let sub_feats = Matrix::from_rows(&keep.iter().map(|&i| feats.row(i).to_vec()).collect::<Vec<_>>());
    let sub = scatter_max_3d(&sub_feats, &sub_cloud, &spec).unwrap();
    for cell in 0..spec.n_cells() {
        assert!(sub.counts[cell] <= full.counts[cell]);
        for (a, b) in sub.features.row(cell).iter().zip(full.features.row(cell)) {
            assert!(a <= b);
        }
    }
}

#[test]
fn same_cell_probability_under_fixed_displacement() {
    // area matching tolerates a displacement (dx, dy) with probability
    // (1 - |dx|/w)(1 - |dy|/w) for a point uniform in its cell
    let spec = GridSpec::centered(0.5, 8, 8);
    let (dx, dy) = (0.1, -0.15);
    let n = 100_000;
    let mut r = rng(99);
    let mut same = 0usize;
    for _ in 0..n {
        let p = [r.random_range(1.0..1.5), r.random_range(-0.5..0.0)];
        if assign_pillar(p, &spec) == assign_pillar([p[0] + dx, p[1] + dy], &spec) {
            same += 1;
        }
    }
    let prob = (1.0 - 0.1 / 0.5) * (1.0 - 0.15 / 0.5);
    let sigma = (prob * (1.0 - prob) / n as f64).sqrt();
    assert!((same as f64 / n as f64 - prob).abs() < 3.0 * sigma);
}

proptest! {
    #[test]
    fn scatter_max_is_permutation_invariant(seed in 0u64..1_000, n in 1usize..200) {
        let spec = GridSpec::centered(0.5, 8, 8);
        let cloud = random_cloud(n, &spec, seed);
        let feats = random_matrix(n, 3, seed + 1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut r = rng(seed + 2);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let pc: Vec<Point> = order.iter().map(|&i| cloud[i]).collect();
        let pf = Matrix::from_rows(&order.iter().map(|&i| feats.row(i).to_vec()).collect::<Vec<_>>());
        prop_assert_eq!(
            scatter_max_3d(&feats, &cloud, &spec).unwrap(),
            scatter_max_3d(&pf, &pc, &spec).unwrap()
        );
    }
}
