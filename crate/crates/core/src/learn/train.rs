use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dvm::Bins;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Scores};
use crate::rng::{derive_seed, rng, Rng};
use crate::scene::NUM_CLASSES;

use super::forward::{forward_scene, ParamVars};
use super::inputs::SceneInputs;
use super::loss::LossReport;
use super::model::{Fusion, ModelDims, ModelParams};
use super::optim::{adam_step, scheduled_lr, AdamConfig, AdamState};
use super::tape::{Tape, Var};

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive terms in the total loss.
    pub lambda_ct: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Scenes per source per iteration.
    pub batch_size: usize,
    pub iterations: usize,
    /// Fractions of `iterations` at which the learning rate is divided by 10.
    pub lr_drops: Vec<f64>,
    /// Validation interval in iterations; 0 disables periodic validation
    /// (the final iteration is still scored).
    pub val_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            tau: 0.01,
            lambda_ct: 0.01,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            iterations: 2000,
            lr_drops: vec![0.8, 0.9],
            val_every: 100,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if !(self.lambda_ct >= 0.0 && self.lambda_ct.is_finite()) {
            return bad("lambda_ct must be >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.lr_drops.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("lr_drops must be fractions in [0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Which modules are active.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub fusion: Fusion,
    pub bdcl: bool,
    pub bins: Bins,
}

/// Scenes of one source domain; with BDCL, `transferred[i]` is scene `i`
/// density-transferred to the other source's beam structure.
#[derive(Clone, Debug, Default)]
pub struct SourceStream {
    pub scenes: Vec<SceneInputs>,
    pub transferred: Vec<SceneInputs>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub source1: SourceStream,
    pub source2: SourceStream,
    /// Held-out target-domain scenes for periodic validation.
    pub validation: Vec<SceneInputs>,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss: LossReport,
    pub validation: Option<Scores>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<MetricRow>,
}

/// A batch of one source: each scene with its transferred twin when BDCL
/// is on.
pub type Batch<'a> = Vec<(&'a SceneInputs, Option<&'a SceneInputs>)>;

/// Segmentation (both modalities, mean over the batch) and contrastive
/// terms of one source batch, recorded on `tape`.
fn source_terms(
    tape: &mut Tape,
    p: &ParamVars,
    batch: &Batch<'_>,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<(Var, Option<Var>)> {
    let b = batch.len() as f64;
    let mut seg: Option<Var> = None;
    let mut vs = Vec::new();
    let mut vts = Vec::new();
    for (scene, twin) in batch {
        let want = opts.bdcl;
        let out = forward_scene(tape, p, scene, opts.fusion, &opts.bins, want)?;
        let scale = 1.0 / (scene.len() * NUM_CLASSES) as f64 / b;
        for logits in [out.logits2d, out.logits3d] {
            let ce = tape.cross_entropy_sum(logits, scene.labels.clone());
            let ce = tape.scale(ce, scale);
            seg = Some(match seg {
                Some(s) => tape.add(s, ce),
                None => ce,
            });
        }
        if opts.bdcl {
            let twin = twin.ok_or_else(|| Error::Config("BDCL needs density-transferred scenes".into()))?;
            let t = forward_scene(tape, p, twin, opts.fusion, &opts.bins, true)?;
            vs.push(out.vector.expect("vector requested"));
            vts.push(t.vector.expect("vector requested"));
        }
    }
    let seg = seg.ok_or_else(|| Error::Config("empty batch".into()))?;
    let ct = if opts.bdcl {
        let v = tape.stack_rows(vs);
        let vt = tape.stack_rows(vts);
        Some(tape.contrastive(v, vt, hyper.tau)?)
    } else {
        None
    };
    Ok((seg, ct))
}

struct Recorded {
    tape: Tape,
    params: ParamVars,
    total: Var,
    report: LossReport,
}

fn record(
    params: &ModelParams,
    batches: [&Batch<'_>; 2],
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<Recorded> {
    let mut tape = Tape::new();
    let p = ParamVars::push(&mut tape, params);
    let (seg1, ct1) = source_terms(&mut tape, &p, batches[0], hyper, opts)?;
    let (seg2, ct2) = source_terms(&mut tape, &p, batches[1], hyper, opts)?;
    let mut total = tape.add(seg1, seg2);
    for ct in [ct1, ct2].into_iter().flatten() {
        let w = tape.scale(ct, hyper.lambda_ct);
        total = tape.add(total, w);
    }
    let item = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let report = LossReport::new(
        item(Some(seg1)),
        item(Some(seg2)),
        item(ct1),
        item(ct2),
        hyper.lambda_ct,
    );
    if !report.is_finite() || !tape.value(total).is_finite() {
        return Err(Error::NonFinite(format!("loss {report:?}")));
    }
    Ok(Recorded {
        tape,
        params: p,
        total,
        report,
    })
}

/// Total loss of one iteration and, if requested, its gradient.
pub fn batch_objective(
    params: &ModelParams,
    batches: [&Batch<'_>; 2],
    hyper: &Hyperparams,
    opts: &TrainOptions,
    with_grad: bool,
) -> Result<(LossReport, Option<ModelParams>)> {
    let rec = record(params, batches, hyper, opts)?;
    let grads = if with_grad {
        let mut g = rec.tape.backward(rec.total)?;
        Some(rec.params.gradients(&mut g, params))
    } else {
        None
    };
    Ok((rec.report, grads))
}

/// [`Tape::activation_pattern`] of the iteration's forward pass.
pub fn activation_pattern(
    params: &ModelParams,
    batches: [&Batch<'_>; 2],
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<u64> {
    Ok(record(params, batches, hyper, opts)?.tape.activation_pattern())
}

/// Cycles through a seeded permutation of a stream, reshuffling per epoch.
struct Sampler {
    order: Vec<usize>,
    at: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            at: n,
        }
    }

    fn next(&mut self, r: &mut Rng) -> usize {
        if self.at == self.order.len() {
            self.order.shuffle(r);
            self.at = 0;
        }
        self.at += 1;
        self.order[self.at - 1]
    }
}

fn draw<'a>(stream: &'a SourceStream, sampler: &mut Sampler, r: &mut Rng, b: usize, bdcl: bool) -> Batch<'a> {
    (0..b)
        .map(|_| {
            let i = sampler.next(r);
            (&stream.scenes[i], bdcl.then(|| &stream.transferred[i]))
        })
        .collect()
}

/// Trains on both sources; every iteration takes one batch from each and
/// steps on the combined loss. Validation mIoU on the held-out stream is
/// logged every `val_every` iterations and at the last one.
pub fn train(
    data: &TrainData,
    dims: &ModelDims,
    hyper: &Hyperparams,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    dims.validate()?;
    for (name, s) in [("source1", &data.source1), ("source2", &data.source2)] {
        if s.scenes.is_empty() {
            return Err(Error::Config(format!("{name} has no scenes")));
        }
        if opts.bdcl && s.transferred.len() != s.scenes.len() {
            return Err(Error::Config(format!("{name} lacks density-transferred scenes")));
        }
    }
    let mut params = ModelParams::init(dims, derive_seed(seed, "init"));
    let mut state = AdamState::new(&params);
    let mut r = rng(derive_seed(seed, "batches"));
    let mut samplers = [
        Sampler::new(data.source1.scenes.len()),
        Sampler::new(data.source2.scenes.len()),
    ];
    let mut log = Vec::with_capacity(hyper.iterations);
    for it in 0..hyper.iterations {
        let b1 = draw(&data.source1, &mut samplers[0], &mut r, hyper.batch_size, opts.bdcl);
        let b2 = draw(&data.source2, &mut samplers[1], &mut r, hyper.batch_size, opts.bdcl);
        let (loss, grads) = batch_objective(&params, [&b1, &b2], hyper, opts, true)?;
        let lr = scheduled_lr(hyper.lr, it, hyper.iterations, &hyper.lr_drops);
        adam_step(&mut params, &grads.expect("gradient requested"), &mut state, &hyper.adam(lr))?;
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after iteration {}", it + 1)));
        }
        let n = it + 1;
        let due = (hyper.val_every > 0 && n % hyper.val_every == 0) || n == hyper.iterations;
        let validation = if due && !data.validation.is_empty() {
            Some(evaluate(&params, &data.validation, opts.fusion, &opts.bins)?)
        } else {
            None
        };
        log.push(MetricRow {
            iteration: n,
            loss,
            validation,
        });
    }
    Ok(TrainOutcome { params, log })
}
