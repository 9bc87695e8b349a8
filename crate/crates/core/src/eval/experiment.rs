use crate::config::RunConfig;
use crate::dvm::{transfer_scene, AreaHistogram, Bins};
use crate::error::{Error, Result};
use crate::learn::{train, Fusion, SceneInputs, SourceStream, TrainData, TrainOptions};
use crate::rng::derive_seed;
use crate::scene::{perturb_projections, synthesize_pair, LidarConfig, ScenePair};

use super::{evaluate, Scores};

/// Seed of replicate `id` of an experiment; every replicate draws its own
/// scenes, initialization and batches.
pub fn replicate_seed(seed: u64, id: u64) -> u64 {
    derive_seed(seed, &format!("replicate/{id}"))
}

/// Domain roles in file names, manifests and seeds.
pub const ROLES: [&str; 3] = ["source1", "source2", "target"];

/// Seed of scene `index` of a role; independent of how many scenes are
/// drawn.
pub fn scene_seed(seed: u64, role: &str, index: usize) -> u64 {
    derive_seed(seed, &format!("scene/{role}/{index}"))
}

pub fn role_lidar<'a>(cfg: &'a RunConfig, role: &str) -> Result<&'a LidarConfig> {
    match role {
        "source1" => Ok(&cfg.lidar.source1),
        "source2" => Ok(&cfg.lidar.source2),
        "target" => Ok(&cfg.lidar.target),
        other => Err(Error::Config(format!("unknown domain role {other}"))),
    }
}

pub fn synthesize_scene(cfg: &RunConfig, seed: u64, role: &str, index: usize) -> Result<ScenePair> {
    let lidar = role_lidar(cfg, role)?;
    synthesize_pair(
        scene_seed(seed, role, index),
        &cfg.world,
        lidar,
        &cfg.camera,
        cfg.data.render_noise,
        &format!("{role}-{}", lidar.beam_count),
    )
}

/// Scene pairs of one experiment run.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source1: Vec<ScenePair>,
    pub source2: Vec<ScenePair>,
    pub validation: Vec<ScenePair>,
    pub test: Vec<ScenePair>,
}

impl Dataset {
    /// `train_scenes` per source and `val_scenes + test_scenes` target
    /// scenes (validation first).
    pub fn synthesize(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let gen = |role: &str, range: std::ops::Range<usize>| {
            range
                .map(|i| synthesize_scene(cfg, seed, role, i))
                .collect::<Result<Vec<_>>>()
        };
        let d = &cfg.data;
        Ok(Self {
            source1: gen("source1", 0..d.train_scenes)?,
            source2: gen("source2", 0..d.train_scenes)?,
            validation: gen("target", 0..d.val_scenes)?,
            test: gen("target", d.val_scenes..d.val_scenes + d.test_scenes)?,
        })
    }

    /// Network inputs for training; with `bdcl` each source scene also gets
    /// a twin transferred to the other source's beam structure.
    pub fn train_data(&self, cfg: &RunConfig, bdcl: bool) -> Result<TrainData> {
        let knn = cfg.model.knn;
        let stream = |scenes: &[ScenePair], from: &LidarConfig, to: &LidarConfig| -> Result<SourceStream> {
            let inputs = inputs_of(scenes, cfg)?;
            let transferred = if bdcl {
                scenes
                    .iter()
                    .map(|s| {
                        let twin = transfer_scene(s, from, to, &cfg.camera)?;
                        SceneInputs::new(&twin, &cfg.grid, knn)
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(SourceStream {
                scenes: inputs,
                transferred,
            })
        };
        let l = &cfg.lidar;
        Ok(TrainData {
            source1: stream(&self.source1, &l.source1, &l.source2)?,
            source2: stream(&self.source2, &l.source2, &l.source1)?,
            validation: inputs_of(&self.validation, cfg)?,
        })
    }
}

pub fn inputs_of(scenes: &[ScenePair], cfg: &RunConfig) -> Result<Vec<SceneInputs>> {
    scenes
        .iter()
        .map(|s| SceneInputs::new(s, &cfg.grid, cfg.model.knn))
        .collect()
}

pub const SWEEP_METHODS: [Fusion; 2] = [Fusion::Point, Fusion::Area];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Fusion,
    pub fraction: f64,
    /// Replicate id from the config.
    pub seed: u64,
    pub scores: Scores,
}

/// Test inputs with a fraction of projections perturbed. The perturbation
/// of scene `j` depends only on `(seed, j)`, so both methods see the same
/// displaced pixels and larger fractions extend smaller ones.
fn perturbed_inputs(
    scenes: &[ScenePair],
    clean: &[SceneInputs],
    fraction: f64,
    radius_px: f64,
    seed: u64,
) -> Result<Vec<SceneInputs>> {
    scenes
        .iter()
        .zip(clean)
        .enumerate()
        .map(|(j, (pair, inputs))| {
            let s = derive_seed(seed, &format!("perturb/{j}"));
            let moved = perturb_projections(&pair.projection, fraction, radius_px, s)?;
            inputs.with_projection(&pair.image, &moved)
        })
        .collect()
}

/// Trains the point-to-point and area-to-area models for every seed and
/// scores both on target scenes at every misalignment fraction. Rows are
/// ordered by seed, method, fraction.
pub fn misalignment_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let bins = cfg.bins()?;
    let bdcl = cfg.ablation.bdcl;
    let mut rows = Vec::new();
    for &id in &cfg.sweep.seeds {
        let seed = replicate_seed(cfg.seed, id);
        let data = Dataset::synthesize(cfg, seed)?;
        let train_data = data.train_data(cfg, bdcl)?;
        let clean = inputs_of(&data.test, cfg)?;
        let perturbed: Vec<Vec<SceneInputs>> = cfg
            .sweep
            .fractions
            .iter()
            .map(|&f| perturbed_inputs(&data.test, &clean, f, cfg.sweep.radius_px, seed))
            .collect::<Result<_>>()?;
        for method in SWEEP_METHODS {
            let opts = TrainOptions {
                fusion: method,
                bdcl,
                bins: bins.clone(),
            };
            let model = train(&train_data, &cfg.model, &cfg.train, &opts, seed)?;
            for (&fraction, inputs) in cfg.sweep.fractions.iter().zip(&perturbed) {
                rows.push(SweepRow {
                    method,
                    fraction,
                    seed: id,
                    scores: evaluate(&model.params, inputs, method, &bins)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Ablation variants, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub baf: bool,
    pub bdcl: bool,
}

pub const VARIANTS: [Variant; 4] = [
    Variant { name: "baseline", baf: false, bdcl: false },
    Variant { name: "+BAF", baf: true, bdcl: false },
    Variant { name: "+BDCL", baf: false, bdcl: true },
    Variant { name: "full", baf: true, bdcl: true },
];

#[derive(Clone, Debug, PartialEq)]
pub struct DgRow {
    pub variant: Variant,
    /// Replicate id from the config.
    pub seed: u64,
    pub scores: Scores,
}

/// Trains every variant on the two source densities and scores it on the
/// unseen target density. Rows are ordered by seed, then variant.
pub fn dg_experiment(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<DgRow>> {
    let bins = cfg.bins()?;
    let need_twins = variants.iter().any(|v| v.bdcl);
    let mut rows = Vec::new();
    for &id in &cfg.dg.seeds {
        let seed = replicate_seed(cfg.seed, id);
        let data = Dataset::synthesize(cfg, seed)?;
        let train_data = data.train_data(cfg, need_twins)?;
        let test = inputs_of(&data.test, cfg)?;
        for &variant in variants {
            let fusion = if variant.baf { Fusion::Area } else { Fusion::None };
            let opts = TrainOptions {
                fusion,
                bdcl: variant.bdcl,
                bins: bins.clone(),
            };
            let model = train(&train_data, &cfg.model, &cfg.train, &opts, seed)?;
            rows.push(DgRow {
                variant,
                seed: id,
                scores: evaluate(&model.params, &test, fusion, &bins)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistRow {
    pub domain_tag: String,
    pub hist: AreaHistogram,
}

impl HistRow {
    /// Share of non-empty pillars in each bin (zeros when there are none).
    pub fn shares(&self) -> Vec<f64> {
        self.hist
            .counts
            .iter()
            .map(|&c| {
                if self.hist.n_all == 0 {
                    0.0
                } else {
                    c as f64 / self.hist.n_all as f64
                }
            })
            .collect()
    }
}

/// Pooled pillar-population histogram of each domain's scenes.
pub fn histogram_report(
    domains: &[(String, Vec<ScenePair>)],
    cfg: &RunConfig,
    bins: &Bins,
) -> Result<Vec<HistRow>> {
    cfg.grid.validate()?;
    let mut rows = Vec::new();
    for (tag, scenes) in domains {
        if scenes.is_empty() {
            continue;
        }
        let mut hist = AreaHistogram::from_counts(&[], bins);
        for s in scenes {
            let mut counts = vec![0u32; cfg.grid.n_cells()];
            for p in &s.cloud {
                let q = p.position_f64();
                if let Some(c) = cfg.grid.cell_of([q[0], q[1]]) {
                    counts[c] += 1;
                }
            }
            hist.merge(&AreaHistogram::from_counts(&counts, bins))?;
        }
        rows.push(HistRow {
            domain_tag: tag.clone(),
            hist,
        });
    }
    Ok(rows)
}
