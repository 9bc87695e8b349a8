use crate::bev::BevGrid;
use crate::dvm::{AreaHistogram, BevVector, Bins};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::inputs::SceneInputs;
use super::model::{Fusion, ModelParams, PIXEL_INPUTS, POINT_INPUTS};
use super::tape::{softmax_rows, Gradients, Tape, Var};

/// Parameters placed on a tape as leaves, `(weight, bias)` per layer.
pub struct ParamVars {
    layers: [(Var, Var); 9],
}

impl ParamVars {
    pub fn push(tape: &mut Tape, params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))),
        }
    }

    fn layer(&self, k: usize) -> (Var, Var) {
        self.layers[k]
    }

    /// Gradients in the layout of `like`; zeros where the loss does not
    /// depend on a parameter.
    pub fn gradients(&self, grads: &mut Gradients, like: &ModelParams) -> ModelParams {
        let mut out = like.clone();
        for (layer, &(w, b)) in out.layers_mut().into_iter().zip(&self.layers) {
            layer.weight = grads.take(w, layer.weight.shape());
            layer.bias = grads.take(b, layer.bias.shape());
        }
        out
    }
}

const NET2D: usize = 0;
const NET3D: usize = 2;
const FC1: usize = 4;
const FC2_2D: usize = 5;
const FC2_3D: usize = 6;
const HEAD2D: usize = 7;
const HEAD3D: usize = 8;

/// Tape handles produced by one scene's forward pass.
pub struct SceneVars {
    pub logits2d: Var,
    pub logits3d: Var,
    /// Fused features of the occupied pillars, rows aligned with
    /// [`SceneInputs::cells`].
    pub fused_cells: Option<Var>,
    /// Normalized density-maintained vector (`1 x fused`).
    pub vector: Option<Var>,
}

fn dense(tape: &mut Tape, p: &ParamVars, k: usize, x: Var, relu: bool) -> Var {
    let (w, b) = p.layer(k);
    let y = tape.affine(x, w, b);
    if relu {
        tape.relu(y)
    } else {
        y
    }
}

fn mlp(tape: &mut Tape, p: &ParamVars, first: usize, x: Var) -> Var {
    let h = dense(tape, p, first, x, true);
    dense(tape, p, first + 1, h, true)
}

/// Records one scene on `tape`. With `want_vector` the area path is built
/// (whatever the fusion mode) so that the density-maintained vector is
/// available.
pub fn forward_scene(
    tape: &mut Tape,
    p: &ParamVars,
    inputs: &SceneInputs,
    fusion: Fusion,
    bins: &Bins,
    want_vector: bool,
) -> Result<SceneVars> {
    if inputs.points.cols() != POINT_INPUTS || inputs.pixels.cols() != PIXEL_INPUTS {
        return Err(Error::Shape("scene inputs have the wrong width".into()));
    }
    if inputs.points.rows() != inputs.pixels.rows() || inputs.points.rows() != inputs.labels.len() {
        return Err(Error::Shape("scene inputs disagree in length".into()));
    }
    let x2 = tape.leaf(inputs.pixels.clone());
    let x3 = tape.leaf(inputs.points.clone());
    let f2 = mlp(tape, p, NET2D, x2);
    let f3 = mlp(tape, p, NET3D, x3);

    let need_area = fusion == Fusion::Area || want_vector;
    let fused_cells = if need_area {
        let m = inputs.cells.len();
        let b2 = tape.scatter_max(f2, &inputs.cell_of_point, m);
        let b3 = tape.scatter_max(f3, &inputs.cell_of_point, m);
        let cat = tape.concat(b2, b3);
        Some(dense(tape, p, FC1, cat, true))
    } else {
        None
    };

    let fused_points = match fusion {
        Fusion::Area => tape.gather(fused_cells.expect("area path built"), inputs.cell_of_point.clone()),
        Fusion::Point => {
            let cat = tape.concat(f2, f3);
            dense(tape, p, FC1, cat, true)
        }
        Fusion::None => {
            let width = tape.value(p.layer(FC1).1).cols();
            tape.leaf(Matrix::zeros(inputs.len(), width))
        }
    };

    let h2 = tape.concat(f2, fused_points);
    let h2 = dense(tape, p, FC2_2D, h2, true);
    let logits2d = dense(tape, p, HEAD2D, h2, false);
    let h3 = tape.concat(f3, fused_points);
    let h3 = dense(tape, p, FC2_3D, h3, true);
    let logits3d = dense(tape, p, HEAD3D, h3, false);

    let vector = match (want_vector, fused_cells) {
        (true, Some(cells)) => Some(dvm_on_tape(tape, cells, &inputs.cell_counts, bins)),
        _ => None,
    };
    Ok(SceneVars {
        logits2d,
        logits3d,
        fused_cells,
        vector,
    })
}

/// Per-bin coordinate-wise max of the occupied pillars, weighted by bin
/// population and L2-normalized.
fn dvm_on_tape(tape: &mut Tape, cells: Var, counts: &[u32], bins: &Bins) -> Var {
    let hist = AreaHistogram::from_counts(counts, bins);
    let bin_of: Vec<Option<usize>> = counts.iter().map(|&c| bins.bin_of(c)).collect();
    let maxes = tape.scatter_max(cells, &bin_of, bins.len());
    let v = tape.weighted_row_sum(maxes, hist.weights());
    tape.normalize_rows(v)
}

/// Class probabilities of both modalities plus the fused BEV map and its
/// density-maintained vector.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs2d: Matrix,
    pub probs3d: Matrix,
    pub bev: BevGrid,
    pub vector: BevVector,
}

/// Inference pass. The BEV map and vector always come from the area path,
/// regardless of `fusion`.
pub fn forward(
    inputs: &SceneInputs,
    params: &ModelParams,
    fusion: Fusion,
    bins: &Bins,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let p = ParamVars::push(&mut tape, params);
    let vars = forward_scene(&mut tape, &p, inputs, fusion, bins, true)?;
    let cells = tape.value(vars.fused_cells.expect("vector requested"));
    let mut bev = BevGrid::zeros(inputs.grid.clone(), cells.cols());
    for (k, &cell) in inputs.cells.iter().enumerate() {
        bev.features.row_mut(cell).copy_from_slice(cells.row(k));
        bev.counts[cell] = inputs.cell_counts[k];
    }
    let vector = BevVector {
        values: tape.value(vars.vector.expect("vector requested")).row(0).to_vec(),
        domain_tag: inputs.domain_tag.clone(),
    };
    Ok(ForwardOutput {
        probs2d: softmax_rows(tape.value(vars.logits2d)),
        probs3d: softmax_rows(tape.value(vars.logits3d)),
        bev,
        vector,
    })
}

/// Logits only, skipping the vector; used for evaluation.
pub fn predict_logits(
    inputs: &SceneInputs,
    params: &ModelParams,
    fusion: Fusion,
    bins: &Bins,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let p = ParamVars::push(&mut tape, params);
    let vars = forward_scene(&mut tape, &p, inputs, fusion, bins, false)?;
    Ok((tape.value(vars.logits2d).clone(), tape.value(vars.logits3d).clone()))
}
