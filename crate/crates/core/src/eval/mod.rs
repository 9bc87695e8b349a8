//! Scoring and the experiment harnesses.

mod experiment;

pub use experiment::{
    inputs_of, replicate_seed, role_lidar, scene_seed, synthesize_scene, ROLES, VARIANTS,
    dg_experiment, histogram_report, misalignment_sweep, Dataset, DgRow, HistRow, SweepRow,
    Variant, SWEEP_METHODS,
};

use crate::dvm::Bins;
use crate::error::{Error, Result};
use crate::learn::{predict_logits, softmax_rows, Fusion, ModelParams, SceneInputs};
use crate::scene::NUM_CLASSES;
use crate::tensor::Matrix;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape("truth and prediction lengths differ".into()));
        }
        let mut m = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Shape(format!("class index {t} / {p} out of range")));
            }
            m.add(t, p);
        }
        Ok(m)
    }
}

/// Per-class IoU (`None` where the class has zero union) and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub mean: f64,
}

/// `IoU_c = TP / (TP + FP + FN)`, averaged over classes with a non-empty
/// union.
pub fn miou(conf: &ConfusionMatrix) -> Result<MiouReport> {
    if conf.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let mut per_class = [None; NUM_CLASSES];
    for (c, slot) in per_class.iter_mut().enumerate() {
        let tp = conf.counts[c][c];
        let fn_: u64 = conf.counts[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..NUM_CLASSES).map(|t| conf.counts[t][c]).sum::<u64>() - tp;
        let union = tp + fp + fn_;
        if union > 0 {
            *slot = Some(tp as f64 / union as f64);
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouReport { per_class, mean })
}

/// Elementwise mean of two probability matrices.
pub fn ensemble_avg(probs2d: &Matrix, probs3d: &Matrix) -> Result<Matrix> {
    if probs2d.shape() != probs3d.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?} probabilities",
            probs2d.shape(),
            probs3d.shape()
        )));
    }
    let data = probs2d
        .data()
        .iter()
        .zip(probs3d.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(Matrix::from_vec(probs2d.rows(), probs2d.cols(), data))
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// mIoU of the 2D head, the 3D head and their ensemble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub miou_2d: f64,
    pub miou_3d: f64,
    pub miou_avg: f64,
}

/// Confusion matrices (2D, 3D, ensemble) of a model over some scenes.
pub fn confusions(
    params: &ModelParams,
    scenes: &[SceneInputs],
    fusion: Fusion,
    bins: &Bins,
) -> Result<[ConfusionMatrix; 3]> {
    let mut conf: [ConfusionMatrix; 3] = Default::default();
    for s in scenes {
        let (l2, l3) = predict_logits(s, params, fusion, bins)?;
        let (p2, p3) = (softmax_rows(&l2), softmax_rows(&l3));
        let avg = ensemble_avg(&p2, &p3)?;
        for (c, p) in conf.iter_mut().zip([&p2, &p3, &avg]) {
            c.merge(&ConfusionMatrix::from_predictions(&s.labels, &argmax_rows(p))?);
        }
    }
    Ok(conf)
}

pub fn evaluate(
    params: &ModelParams,
    scenes: &[SceneInputs],
    fusion: Fusion,
    bins: &Bins,
) -> Result<Scores> {
    let [c2, c3, ca] = confusions(params, scenes, fusion, bins)?;
    Ok(Scores {
        miou_2d: miou(&c2)?.mean,
        miou_3d: miou(&c3)?.mean,
        miou_avg: miou(&ca)?.mean,
    })
}
