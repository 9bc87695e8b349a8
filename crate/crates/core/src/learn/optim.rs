use crate::error::{Error, Result};

use super::model::ModelParams;

/// Adam moments; the step counter starts at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        let zero = |p: &ModelParams| {
            let mut z = p.clone();
            z.unflatten(&vec![0.0; p.num_scalars()]).expect("same layout");
            z
        };
        Self {
            m: zero(like),
            v: zero(like),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.num_scalars();
    if grads.num_scalars() != n || state.m.num_scalars() != n || state.v.num_scalars() != n {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let layers = params
        .layers_mut()
        .into_iter()
        .zip(grads.layers())
        .zip(state.m.layers_mut())
        .zip(state.v.layers_mut());
    for (((p, g), m), v) in layers {
        for (pm, gm, mm, vm) in [
            (&mut p.weight, &g.weight, &mut m.weight, &mut v.weight),
            (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias),
        ] {
            let it = pm
                .data_mut()
                .iter_mut()
                .zip(gm.data())
                .zip(mm.data_mut().iter_mut())
                .zip(vm.data_mut().iter_mut());
            for (((x, &g), m), v) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *x -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
    }
    Ok(())
}

/// Learning rate after dividing by 10 at each drop point (fractions of
/// `iterations`) already reached by `iteration` (0-based).
pub fn scheduled_lr(base: f64, iteration: usize, iterations: usize, drops: &[f64]) -> f64 {
    let passed = drops
        .iter()
        .filter(|&&f| iteration >= (f * iterations as f64).floor() as usize)
        .count();
    base / 10f64.powi(passed as i32)
}
