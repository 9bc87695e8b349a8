//! Pillar BEV maps and area-level fusion.
//!
//! Points are assigned to `w x w` pillars by their x/y coordinates. Both
//! modalities pool into the same pillars: a pixel's pillar is the pillar of
//! the 3D point that projects to it, never a location derived from the
//! pixel itself, so projection errors cannot move a pixel feature to another
//! area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Point, ProjectionMap};
use crate::tensor::Matrix;

/// Regular BEV grid; cell `(i, j)` spans
/// `[x0 + i w, x0 + (i + 1) w) x [y0 + j w, y0 + (j + 1) w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub cells_x: usize,
    pub cells_y: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::centered(0.5, 64, 64)
    }
}

impl GridSpec {
    /// Grid starting at x = 0 and centered on y = 0.
    pub fn centered(cell_size: f64, cells_x: usize, cells_y: usize) -> Self {
        Self {
            origin: [0.0, -(cells_y as f64) * cell_size / 2.0],
            cell_size,
            cells_x,
            cells_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config("cell_size must be > 0".into()));
        }
        if self.cells_x == 0 || self.cells_y == 0 {
            return Err(Error::Config("grid must have at least one cell per axis".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells_x * self.cells_y
    }

    /// Row-major linear index of cell `(i, j)`.
    pub fn linear(&self, (i, j): (usize, usize)) -> usize {
        i * self.cells_y + j
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<usize> {
        assign_pillar(p, self).map(|c| self.linear(c))
    }
}

/// Pillar containing `p`, or `None` when `p` lies outside the grid. A point
/// on a cell boundary belongs to the higher-index cell.
pub fn assign_pillar(p: [f64; 2], spec: &GridSpec) -> Option<(usize, usize)> {
    let fi = ((p[0] - spec.origin[0]) / spec.cell_size).floor();
    let fj = ((p[1] - spec.origin[1]) / spec.cell_size).floor();
    if !(fi >= 0.0 && fj >= 0.0 && fi < spec.cells_x as f64 && fj < spec.cells_y as f64) {
        return None;
    }
    Some((fi as usize, fj as usize))
}

/// Pillar features plus per-pillar point counts. Empty pillars hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    /// `n_cells x channels`, rows in [`GridSpec::linear`] order.
    pub features: Matrix,
    pub counts: Vec<u32>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        let n = spec.n_cells();
        Self {
            spec,
            features: Matrix::zeros(n, channels),
            counts: vec![0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn feature(&self, i: usize, j: usize) -> &[f64] {
        self.features.row(self.spec.linear((i, j)))
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[self.spec.linear((i, j))]
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Result of a scatter-max: pooled rows, member counts, and for every
/// (row, channel) the input row that supplied the max (`usize::MAX` when
/// the row is empty). Ties go to the lowest input row.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub features: Matrix,
    pub counts: Vec<u32>,
    pub argmax: Vec<usize>,
}

pub fn scatter_max_rows(features: &Matrix, targets: &[Option<usize>], n_targets: usize) -> Pooled {
    assert_eq!(features.rows(), targets.len(), "scatter targets");
    let c = features.cols();
    let mut out = Matrix::zeros(n_targets, c);
    let mut counts = vec![0u32; n_targets];
    let mut argmax = vec![usize::MAX; n_targets * c];
    for (row, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let src = features.row(row);
        let first = counts[t] == 0;
        counts[t] += 1;
        let dst = out.row_mut(t);
        for k in 0..c {
            if first || src[k] > dst[k] {
                dst[k] = src[k];
                argmax[t * c + k] = row;
            }
        }
    }
    Pooled {
        features: out,
        counts,
        argmax,
    }
}

/// Max-pools point features into pillars by point coordinates.
pub fn scatter_max_3d(point_features: &Matrix, cloud: &[Point], spec: &GridSpec) -> Result<BevGrid> {
    spec.validate()?;
    if point_features.rows() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} points",
            point_features.rows(),
            cloud.len()
        )));
    }
    let cells: Vec<Option<usize>> = cloud
        .iter()
        .map(|p| {
            let q = p.position_f64();
            spec.cell_of([q[0], q[1]])
        })
        .collect();
    let pooled = scatter_max_rows(point_features, &cells, spec.n_cells());
    Ok(BevGrid {
        spec: spec.clone(),
        features: pooled.features,
        counts: pooled.counts,
    })
}

/// Max-pools pixel features into pillars. Row `r` of `pixel_features`
/// belongs to the `r`-th projected point (ascending point index); its pillar
/// is taken from that point's coordinates.
pub fn scatter_max_2d(
    pixel_features: &Matrix,
    projection: &ProjectionMap,
    cloud: &[Point],
    spec: &GridSpec,
) -> Result<BevGrid> {
    spec.validate()?;
    if projection.entries().len() != cloud.len() {
        return Err(Error::Shape(format!(
            "projection covers {} points, cloud has {}",
            projection.entries().len(),
            cloud.len()
        )));
    }
    let cells: Vec<Option<usize>> = projection
        .iter()
        .map(|(idx, _)| {
            let q = cloud[idx].position_f64();
            spec.cell_of([q[0], q[1]])
        })
        .collect();
    if pixel_features.rows() != cells.len() {
        return Err(Error::Shape(format!(
            "{} pixel feature rows for {} projected points",
            pixel_features.rows(),
            cells.len()
        )));
    }
    let pooled = scatter_max_rows(pixel_features, &cells, spec.n_cells());
    Ok(BevGrid {
        spec: spec.clone(),
        features: pooled.features,
        counts: pooled.counts,
    })
}

/// Affine layer `y = W x + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        let out = bias.len();
        Ok(Self {
            weight,
            bias: Matrix::from_vec(1, out, bias),
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "linear layer input");
        // Bias first, then inputs in order: the same sum as `Tape::affine`.
        (0..self.out_dim())
            .map(|o| {
                let w = self.weight.row(o);
                x.iter().zip(w).fold(self.bias.get(0, o), |acc, (xk, wk)| acc + xk * wk)
            })
            .collect()
    }

    pub fn apply_relu(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x).into_iter().map(|v| v.max(0.0)).collect()
    }
}

/// Area-to-area fusion: every pillar non-empty in either map becomes
/// `ReLU(fc1(f2d ++ f3d))`. Pillars empty in both stay zero with count 0.
/// Output counts are the larger of the two input counts, which is the 3D
/// count whenever the pixels come from the 3D points.
pub fn fuse_bev(bev2d: &BevGrid, bev3d: &BevGrid, fc1: &LinearLayer) -> Result<BevGrid> {
    if bev2d.spec != bev3d.spec {
        return Err(Error::Shape("2D and 3D BEV maps use different grids".into()));
    }
    let (c2, c3) = (bev2d.channels(), bev3d.channels());
    if fc1.in_dim() != c2 + c3 {
        return Err(Error::Shape(format!(
            "fc1 expects {} inputs, maps provide {} + {}",
            fc1.in_dim(),
            c2,
            c3
        )));
    }
    let mut out = BevGrid::zeros(bev3d.spec.clone(), fc1.out_dim());
    let mut cat = vec![0.0; c2 + c3];
    for cell in 0..bev3d.spec.n_cells() {
        let count = bev2d.counts[cell].max(bev3d.counts[cell]);
        if count == 0 {
            continue;
        }
        cat[..c2].copy_from_slice(bev2d.features.row(cell));
        cat[c2..].copy_from_slice(bev3d.features.row(cell));
        out.features.row_mut(cell).copy_from_slice(&fc1.apply_relu(&cat));
        out.counts[cell] = count;
    }
    Ok(out)
}

/// Point-to-area fusion: `ReLU(fc2(point_feature ++ cell_feature))`, with a
/// zero cell feature for points outside the grid.
pub fn fuse_point_area(
    point_feature: &[f64],
    cell_feature: Option<&[f64]>,
    fc2: &LinearLayer,
) -> Result<Vec<f64>> {
    if point_feature.len() > fc2.in_dim() {
        return Err(Error::Shape("point feature wider than fc2 input".into()));
    }
    let cell_dim = fc2.in_dim() - point_feature.len();
    let mut cat = Vec::with_capacity(fc2.in_dim());
    cat.extend_from_slice(point_feature);
    match cell_feature {
        Some(f) if f.len() == cell_dim => cat.extend_from_slice(f),
        Some(f) => {
            return Err(Error::Shape(format!(
                "cell feature has {} channels, fc2 expects {}",
                f.len(),
                cell_dim
            )))
        }
        None => cat.resize(fc2.in_dim(), 0.0),
    }
    Ok(fc2.apply_relu(&cat))
}

/// [`fuse_point_area`] for every point of a cloud against a fused BEV map.
pub fn fuse_point_area_batch(
    point_features: &Matrix,
    cloud: &[Point],
    bev: &BevGrid,
    fc2: &LinearLayer,
) -> Result<Matrix> {
    if point_features.rows() != cloud.len() {
        return Err(Error::Shape("point features and cloud differ in length".into()));
    }
    let mut out = Matrix::zeros(cloud.len(), fc2.out_dim());
    for (n, p) in cloud.iter().enumerate() {
        let q = p.position_f64();
        let cell = bev.spec.cell_of([q[0], q[1]]).map(|c| bev.features.row(c));
        let fused = fuse_point_area(point_features.row(n), cell, fc2)?;
        out.row_mut(n).copy_from_slice(&fused);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
