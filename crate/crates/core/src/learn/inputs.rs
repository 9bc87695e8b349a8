use std::cmp::Ordering;

use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::scene::{Image, Point, ProjectionMap, ScenePair, IMAGE_CHANNELS};
use crate::tensor::Matrix;

use super::model::{PIXEL_INPUTS, POINT_INPUTS};

/// Network inputs of one scene, computed once and reused across
/// iterations. Row `n` of `points` and `pixels` belongs to point `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInputs {
    pub points: Matrix,
    pub pixels: Matrix,
    pub labels: Vec<usize>,
    pub grid: GridSpec,
    /// Index into `cells` of each point's pillar; `None` outside the grid.
    pub cell_of_point: Vec<Option<usize>>,
    /// Linear indices of the occupied pillars, ascending.
    pub cells: Vec<usize>,
    pub cell_counts: Vec<u32>,
    pub domain_tag: String,
}

fn point_row(p: &Point) -> [f64; 4] {
    let q = p.position_f64();
    [q[0] / 16.0, q[1] / 16.0, q[2] / 2.0, f64::from(p.intensity)]
}

/// Per-point `[x, y, z, intensity]` (scaled) followed by the mean of the
/// same over the `k` nearest other points (fewer if the cloud is small).
/// Distance ties go to the lower index.
pub fn point_inputs(cloud: &[Point], k: usize) -> Matrix {
    let rows: Vec<[f64; 4]> = cloud.iter().map(point_row).collect();
    let pos: Vec<[f64; 3]> = cloud.iter().map(Point::position_f64).collect();
    let buckets = Buckets::new(&pos);
    let mut out = Matrix::zeros(cloud.len(), POINT_INPUTS);
    let mut best = Vec::with_capacity(k + 1);
    for n in 0..cloud.len() {
        buckets.nearest(&pos, n, k, &mut best);
        let mut mean = [0.0; 4];
        for &(_, m) in &best {
            mean.iter_mut().zip(&rows[m]).for_each(|(a, v)| *a += v / best.len() as f64);
        }
        let row = out.row_mut(n);
        row[..4].copy_from_slice(&rows[n]);
        row[4..].copy_from_slice(&mean);
    }
    out
}

fn sq_dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    (0..3).map(|a| (q[a] - p[a]).powi(2)).sum()
}

fn closer(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Uniform xy grid over a cloud for exact nearest-neighbor queries.
struct Buckets {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    /// Point indices grouped by cell; `start[c]..start[c + 1]`.
    start: Vec<usize>,
    members: Vec<usize>,
}

impl Buckets {
    fn new(pos: &[[f64; 3]]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pos {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if pos.is_empty() {
            (lo, hi) = ([0.0; 2], [0.0; 2]);
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        // About four points per occupied-area cell, capped at 256 per side.
        let side = ((pos.len() as f64 / 4.0).sqrt().ceil() as usize).clamp(1, 256);
        let cell = extent / side as f64;
        let dims = [0, 1].map(|a| (((hi[a] - lo[a]) / cell) as usize + 1).min(side + 1));
        let mut this = Self {
            origin: lo,
            cell,
            dims,
            start: vec![0; dims[0] * dims[1] + 1],
            members: vec![0; pos.len()],
        };
        let ids: Vec<usize> = pos.iter().map(|p| this.cell_id(this.coords(p))).collect();
        for &c in &ids {
            this.start[c + 1] += 1;
        }
        for c in 0..dims[0] * dims[1] {
            this.start[c + 1] += this.start[c];
        }
        let mut fill = this.start.clone();
        for (i, &c) in ids.iter().enumerate() {
            this.members[fill[c]] = i;
            fill[c] += 1;
        }
        this
    }

    fn coords(&self, p: &[f64; 3]) -> [usize; 2] {
        [0, 1].map(|a| (((p[a] - self.origin[a]) / self.cell) as usize).min(self.dims[a] - 1))
    }

    fn cell_id(&self, c: [usize; 2]) -> usize {
        c[1] * self.dims[0] + c[0]
    }

    /// The `k` points nearest to `pos[n]` (excluding itself), sorted by
    /// distance then index.
    fn nearest(&self, pos: &[[f64; 3]], n: usize, k: usize, best: &mut Vec<(f64, usize)>) {
        best.clear();
        if k == 0 {
            return;
        }
        let c = self.coords(&pos[n]);
        let max_ring = self.dims[0].max(self.dims[1]);
        for ring in 0..=max_ring {
            self.visit_ring(c, ring, |cell| {
                for &m in &self.members[self.start[cell]..self.start[cell + 1]] {
                    if m == n {
                        continue;
                    }
                    let cand = (sq_dist(&pos[n], &pos[m]), m);
                    if best.len() == k && closer(&cand, &best[k - 1]).is_ge() {
                        continue;
                    }
                    let at = best.partition_point(|b| closer(b, &cand).is_lt());
                    best.insert(at, cand);
                    best.truncate(k);
                }
            });
            // Anything beyond this ring is at least `ring * cell` away in xy.
            let reach = ring as f64 * self.cell;
            if best.len() == k && reach * reach > best[k - 1].0 {
                break;
            }
        }
    }

    fn visit_ring(&self, c: [usize; 2], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let (cx, cy) = (c[0] as isize, c[1] as isize);
        let (w, h) = (self.dims[0] as isize, self.dims[1] as isize);
        for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
            let edge = y == cy - r || y == cy + r;
            let step = if edge || r == 0 { 1 } else { 2 * r };
            let mut x = cx - r;
            while x <= cx + r {
                if (0..w).contains(&x) {
                    f(self.cell_id([x as usize, y as usize]));
                }
                x += step;
            }
        }
    }
}

/// Image channels averaged over each pixel's 3x3 neighborhood (clipped at
/// the border).
fn box_mean(image: &Image) -> Vec<f64> {
    let (w, h, c) = (image.width, image.height, IMAGE_CHANNELS);
    let mut out = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0.0;
            let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    dst.iter_mut()
                        .zip(image.pixel(xx, yy))
                        .for_each(|(a, v)| *a += f64::from(*v));
                    n += 1.0;
                }
            }
            dst.iter_mut().for_each(|a| *a /= n);
        }
    }
    out
}

/// Per-point pixel channels and their 3x3 mean, sampled at each point's
/// projected pixel. Every point must project.
pub fn pixel_inputs(image: &Image, projection: &ProjectionMap) -> Result<Matrix> {
    if projection.len() != projection.entries().len() {
        return Err(Error::Shape("every point needs a pixel".into()));
    }
    if (projection.width, projection.height) != (image.width, image.height) {
        return Err(Error::Shape("projection and image sizes differ".into()));
    }
    let mean = box_mean(image);
    let c = IMAGE_CHANNELS;
    let mut out = Matrix::zeros(projection.entries().len(), PIXEL_INPUTS);
    for (n, px) in projection.iter() {
        let (x, y) = px.cell();
        let row = out.row_mut(n);
        for (a, v) in row[..c].iter_mut().zip(image.pixel(x, y)) {
            *a = f64::from(*v);
        }
        let at = (y * image.width + x) * c;
        row[c..].copy_from_slice(&mean[at..at + c]);
    }
    Ok(out)
}

impl SceneInputs {
    pub fn new(pair: &ScenePair, grid: &GridSpec, knn: usize) -> Result<Self> {
        grid.validate()?;
        let mut cell_of_point = Vec::with_capacity(pair.cloud.len());
        let mut linear: Vec<usize> = Vec::new();
        for p in &pair.cloud {
            let q = p.position_f64();
            let cell = grid.cell_of([q[0], q[1]]);
            if let Some(c) = cell {
                linear.push(c);
            }
            cell_of_point.push(cell);
        }
        linear.sort_unstable();
        linear.dedup();
        let mut cell_counts = vec![0u32; linear.len()];
        let cell_of_point: Vec<Option<usize>> = cell_of_point
            .into_iter()
            .map(|c| {
                c.map(|c| {
                    let k = linear.binary_search(&c).expect("cell collected above");
                    cell_counts[k] += 1;
                    k
                })
            })
            .collect();
        Ok(Self {
            points: point_inputs(&pair.cloud, knn),
            pixels: pixel_inputs(&pair.image, &pair.projection)?,
            labels: pair.cloud.iter().map(|p| p.label.index()).collect(),
            grid: grid.clone(),
            cell_of_point,
            cells: linear,
            cell_counts,
            domain_tag: pair.domain_tag.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same scene with pixel inputs resampled through another projection
    /// of the same points; point inputs are untouched.
    pub fn with_projection(&self, image: &Image, projection: &ProjectionMap) -> Result<Self> {
        if projection.entries().len() != self.len() {
            return Err(Error::Shape(format!(
                "projection has {} entries for {} points",
                projection.entries().len(),
                self.len()
            )));
        }
        Ok(Self {
            pixels: pixel_inputs(image, projection)?,
            ..self.clone()
        })
    }
}
