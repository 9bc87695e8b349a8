use super::*;
use crate::bev::{fuse_bev, fuse_point_area_batch, scatter_max_2d, scatter_max_3d, GridSpec};
use crate::dvm::{area_histogram, dvm_vector, Bins};
use crate::rng::rng;
use crate::scene::{synthesize_pair, CameraModel, LidarConfig, ScenePair, WorldSpec};
use crate::tensor::Matrix;
use rand::Rng as _;

pub(crate) fn small_dims() -> ModelDims {
    ModelDims {
        hidden: 6,
        c2d: 4,
        c3d: 5,
        fused: 6,
        head_in: 7,
        knn: 4,
    }
}

pub(crate) fn small_scene(seed: u64, beams: u32, keep: usize) -> ScenePair {
    let camera = CameraModel::looking_forward(80, 60, 40.0, [0.1, 0.0, -0.3]);
    let lidar = LidarConfig {
        azimuth_step: 3.0,
        ..LidarConfig::with_beams(beams)
    };
    let pair = synthesize_pair(seed, &WorldSpec::default(), &lidar, &camera, 0.02, "test").unwrap();
    let stride = (pair.cloud.len() / keep).max(1);
    let cloud: Vec<_> = pair.cloud.iter().step_by(stride).take(keep).copied().collect();
    ScenePair::from_parts(cloud, pair.image, &camera, "test").unwrap()
}

fn coarse_grid() -> GridSpec {
    GridSpec::centered(4.0, 8, 8)
}

#[test]
fn zero_params_give_uniform_probabilities() {
    let pair = small_scene(1, 16, 40);
    let inputs = SceneInputs::new(&pair, &coarse_grid(), 4).unwrap();
    let params = ModelParams::zeros(&small_dims());
    for fusion in [Fusion::None, Fusion::Area, Fusion::Point] {
        let out = forward(&inputs, &params, fusion, &Bins::default()).unwrap();
        for p in [&out.probs2d, &out.probs3d] {
            assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        }
        // zero fused features give the zero vector
        assert!(out.vector.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn probability_rows_sum_to_one() {
    let pair = small_scene(2, 32, 60);
    let inputs = SceneInputs::new(&pair, &coarse_grid(), 4).unwrap();
    let params = ModelParams::init(&small_dims(), 3);
    for fusion in [Fusion::None, Fusion::Area, Fusion::Point] {
        let out = forward(&inputs, &params, fusion, &Bins::default()).unwrap();
        for p in [&out.probs2d, &out.probs3d] {
            for r in 0..p.rows() {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!((out.vector.norm() - 1.0).abs() < 1e-12);
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

#[test]
fn single_point_matches_hand_composition() {
    let dims = small_dims();
    let params = ModelParams::init(&dims, 5);
    let mut r = rng(6);
    let x3: Vec<f64> = (0..POINT_INPUTS).map(|_| r.random_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = (0..PIXEL_INPUTS).map(|_| r.random_range(0.0..1.0)).collect();
    let inputs = SceneInputs {
        points: Matrix::from_vec(1, POINT_INPUTS, x3.clone()),
        pixels: Matrix::from_vec(1, PIXEL_INPUTS, x2.clone()),
        labels: vec![2],
        grid: coarse_grid(),
        cell_of_point: vec![Some(0)],
        cells: vec![9],
        cell_counts: vec![1],
        domain_tag: "one".into(),
    };
    let out = forward(&inputs, &params, Fusion::Area, &Bins::default()).unwrap();
    let f2 = params.net2d[1].apply_relu(&params.net2d[0].apply_relu(&x2));
    let f3 = params.net3d[1].apply_relu(&params.net3d[0].apply_relu(&x3));
    let cell = params.fc1.apply_relu(&cat(&f2, &f3));
    let p2 = softmax(&params.head2d.apply(&params.fc2_2d.apply_relu(&cat(&f2, &cell))));
    let p3 = softmax(&params.head3d.apply(&params.fc2_3d.apply_relu(&cat(&f3, &cell))));
    for (a, b) in out.probs2d.row(0).iter().zip(&p2).chain(out.probs3d.row(0).iter().zip(&p3)) {
        assert!((a - b).abs() < 1e-14);
    }
    // one cell in the lowest bin: the vector is the normalized cell feature
    let n = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (a, b) in out.vector.values.iter().zip(&cell) {
        assert!((a - b / n).abs() < 1e-14);
    }
    assert_eq!(out.bev.features.row(9), cell.as_slice());
}

#[test]
fn area_path_matches_bev_module_composition() {
    let pair = small_scene(7, 64, 300);
    let grid = GridSpec::centered(1.0, 32, 32);
    let dims = small_dims();
    let params = ModelParams::init(&dims, 8);
    let inputs = SceneInputs::new(&pair, &grid, dims.knn).unwrap();
    let bins = Bins::default();
    let out = forward(&inputs, &params, Fusion::Area, &bins).unwrap();

    let mlp = |l: &[crate::bev::LinearLayer; 2], x: &Matrix| {
        let rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| l[1].apply_relu(&l[0].apply_relu(x.row(r)))).collect();
        Matrix::from_rows(&rows)
    };
    let f2 = mlp(&params.net2d, &inputs.pixels);
    let f3 = mlp(&params.net3d, &inputs.points);
    let bev2 = scatter_max_2d(&f2, &pair.projection, &pair.cloud, &grid).unwrap();
    let bev3 = scatter_max_3d(&f3, &pair.cloud, &grid).unwrap();
    let fused = fuse_bev(&bev2, &bev3, &params.fc1).unwrap();
    assert_eq!(fused.counts, out.bev.counts);
    for (a, b) in fused.features.data().iter().zip(out.bev.features.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let h2 = fuse_point_area_batch(&f2, &pair.cloud, &fused, &params.fc2_2d).unwrap();
    for n in 0..pair.cloud.len() {
        let p = softmax(&params.head2d.apply(h2.row(n)));
        for (a, b) in out.probs2d.row(n).iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let v = dvm_vector(&fused, &area_histogram(&fused, &bins), "x").unwrap();
    for (a, b) in v.values.iter().zip(&out.vector.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn seg_loss_is_invariant_to_point_order() {
    let pair = small_scene(9, 16, 50);
    let inputs = SceneInputs::new(&pair, &coarse_grid(), 4).unwrap();
    let params = ModelParams::init(&small_dims(), 10);
    let out = forward(&inputs, &params, Fusion::Area, &Bins::default()).unwrap();
    let base = seg_loss(&out.probs3d, &inputs.labels).unwrap();
    let n = inputs.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let mut shuffled = Matrix::zeros(n, 5);
    let mut labels = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        shuffled.row_mut(k).copy_from_slice(out.probs3d.row(i));
        labels[k] = inputs.labels[i];
    }
    assert!((seg_loss(&shuffled, &labels).unwrap() - base).abs() < 1e-14);
}

pub(crate) struct GradCase {
    pub params: ModelParams,
    pub s1: Vec<(SceneInputs, SceneInputs)>,
    pub s2: Vec<(SceneInputs, SceneInputs)>,
}

/// Two 50-point scenes per source, each with a density-transferred twin.
pub(crate) fn grad_case(dims: &ModelDims, seed: u64) -> GradCase {
    let grid = coarse_grid();
    let lidar = |b| LidarConfig {
        azimuth_step: 3.0,
        ..LidarConfig::with_beams(b)
    };
    let camera = CameraModel::looking_forward(80, 60, 40.0, [0.1, 0.0, -0.3]);
    let make = |s: u64, from: u32, to: u32| {
        let pair = small_scene(s, from, 50);
        let twin = crate::dvm::transfer_scene(&pair, &lidar(from), &lidar(to), &camera).unwrap();
        (
            SceneInputs::new(&pair, &grid, dims.knn).unwrap(),
            SceneInputs::new(&twin, &grid, dims.knn).unwrap(),
        )
    };
    GradCase {
        params: ModelParams::init(dims, seed),
        s1: vec![make(seed + 1, 16, 64), make(seed + 2, 16, 64)],
        s2: vec![make(seed + 3, 64, 16), make(seed + 4, 64, 16)],
    }
}

pub(crate) fn batch_of(v: &[(SceneInputs, SceneInputs)]) -> Batch<'_> {
    v.iter().map(|(a, b)| (a, Some(b))).collect()
}

#[test]
fn constant_loss_has_zero_gradient() {
    let dims = small_dims();
    let case = grad_case(&dims, 20);
    let params = ModelParams::zeros(&dims);
    let hyper = Hyperparams {
        lambda_ct: 0.0,
        ..Hyperparams::default()
    };
    let opts = TrainOptions {
        fusion: Fusion::Area,
        bdcl: false,
        bins: Bins::default(),
    };
    // With zero weights every hidden unit sits at the ReLU kink, so only the
    // head biases can move the loss.
    let (_, g) = batch_objective(&params, [&batch_of(&case.s1), &batch_of(&case.s2)], &hyper, &opts, true).unwrap();
    let g = g.unwrap();
    for (name, l) in LAYER_NAMES.iter().zip(g.layers()) {
        if name.starts_with("head") {
            assert!(l.weight.data().iter().all(|&v| v == 0.0));
        } else {
            assert!(l.weight.data().iter().chain(l.bias.data()).all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn gradients_match_finite_differences_on_tiny_model() {
    let dims = small_dims();
    let case = grad_case(&dims, 30);
    let hyper = Hyperparams {
        tau: 0.5,
        lambda_ct: 0.3,
        ..Hyperparams::default()
    };
    let (b1, b2) = (batch_of(&case.s1), batch_of(&case.s2));
    for fusion in [Fusion::None, Fusion::Area, Fusion::Point] {
        let opts = TrainOptions {
            fusion,
            bdcl: true,
            bins: Bins::default(),
        };
        let (_, g) = batch_objective(&case.params, [&b1, &b2], &hyper, &opts, true).unwrap();
        let analytic = g.unwrap().flatten();
        let x0 = case.params.flatten();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in (0..x0.len()).step_by(3) {
            let eval = |d: f64| {
                let mut p = case.params.clone();
                let mut x = x0.clone();
                x[k] += d;
                p.unflatten(&x).unwrap();
                batch_objective(&p, [&b1, &b2], &hyper, &opts, false).unwrap().0.total
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let err = (analytic[k] - numeric).abs() / (analytic[k].abs().max(numeric.abs()).max(1e-6));
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{fusion:?}: worst relative error {worst}");
    }
}

fn tiny_training_setup() -> (TrainData, ModelDims) {
    let dims = small_dims();
    let case = grad_case(&dims, 40);
    let split = |v: Vec<(SceneInputs, SceneInputs)>| SourceStream {
        scenes: v.iter().map(|p| p.0.clone()).collect(),
        transferred: v.into_iter().map(|p| p.1).collect(),
    };
    let validation = vec![case.s1[0].0.clone()];
    (
        TrainData {
            source1: split(case.s1),
            source2: split(case.s2),
            validation,
        },
        dims,
    )
}

#[test]
fn zero_iterations_return_initial_params() {
    let (data, dims) = tiny_training_setup();
    let hyper = Hyperparams {
        iterations: 0,
        ..Hyperparams::default()
    };
    let opts = TrainOptions {
        fusion: Fusion::Area,
        bdcl: true,
        bins: Bins::default(),
    };
    let out = train(&data, &dims, &hyper, &opts, 11).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.params, ModelParams::init(&dims, crate::rng::derive_seed(11, "init")));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (data, dims) = tiny_training_setup();
    let hyper = Hyperparams {
        iterations: 60,
        batch_size: 2,
        lr: 1e-2,
        val_every: 20,
        ..Hyperparams::default()
    };
    let opts = TrainOptions {
        fusion: Fusion::Area,
        bdcl: true,
        bins: Bins::default(),
    };
    let a = train(&data, &dims, &hyper, &opts, 12).unwrap();
    let b = train(&data, &dims, &hyper, &opts, 12).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.iter().filter(|r| r.validation.is_some()).count(), 3);
    let median = |rows: &[MetricRow]| {
        let mut v: Vec<f64> = rows.iter().map(|r| r.loss.total).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(&a.log[54..]) < median(&a.log[..6]));
}

#[test]
fn bdcl_requires_transferred_scenes() {
    let (mut data, dims) = tiny_training_setup();
    data.source2.transferred.clear();
    let opts = TrainOptions {
        fusion: Fusion::None,
        bdcl: true,
        bins: Bins::default(),
    };
    assert!(train(&data, &dims, &Hyperparams::default(), &opts, 1).is_err());
}
