//! Density-aware global descriptors of a BEV map, and density transfer
//! between LiDAR beam configurations.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::scene::{CameraModel, LidarConfig, Point, ScenePair};

/// Half-open point-count intervals partitioning `[1, inf)`; stored as the
/// sorted lower bounds, the first of which is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bins {
    lower: Vec<u32>,
}

impl Default for Bins {
    /// `[1, 10)`, `[10, 50)`, `[50, inf)`.
    fn default() -> Self {
        Self {
            lower: vec![1, 10, 50],
        }
    }
}

impl Bins {
    pub fn from_edges(edges: &[u32]) -> Result<Self> {
        if edges.first() != Some(&1) {
            return Err(Error::InvalidBins("first bin must start at 1".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBins(format!("edges {edges:?} are not increasing")));
        }
        Ok(Self {
            lower: edges.to_vec(),
        })
    }

    /// Builds bins from explicit `[start, end)` intervals (`None` = open).
    pub fn from_intervals(intervals: &[(u32, Option<u32>)]) -> Result<Self> {
        let mut expected = 1;
        for (k, &(start, end)) in intervals.iter().enumerate() {
            if start != expected {
                return Err(Error::InvalidBins(format!(
                    "interval {k} starts at {start}, expected {expected} (gap or overlap)"
                )));
            }
            match end {
                Some(e) if e <= start => {
                    return Err(Error::InvalidBins(format!("interval {k} is empty")))
                }
                Some(e) => expected = e,
                None if k + 1 != intervals.len() => {
                    return Err(Error::InvalidBins("only the last interval may be open".into()))
                }
                None => {
                    return Ok(Self {
                        lower: intervals.iter().map(|i| i.0).collect(),
                    })
                }
            }
        }
        Err(Error::InvalidBins("last interval must be open-ended".into()))
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn edges(&self) -> &[u32] {
        &self.lower
    }

    /// Bin of a pillar holding `count` points; `None` for empty pillars.
    pub fn bin_of(&self, count: u32) -> Option<usize> {
        if count == 0 {
            return None;
        }
        Some(self.lower.partition_point(|&l| l <= count) - 1)
    }

    pub fn label(&self, k: usize) -> String {
        match self.lower.get(k + 1) {
            Some(hi) => format!("[{},{})", self.lower[k], hi),
            None => format!("[{},inf)", self.lower[k]),
        }
    }
}

impl FromStr for Bins {
    type Err = Error;

    /// Comma-separated lower edges, e.g. `"1,10,50"`.
    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|t| t.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidBins(format!("{s:?}: {e}")))?;
        Self::from_edges(&edges)
    }
}

impl fmt::Display for Bins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.lower.iter().map(u32::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Number of non-empty pillars per population bin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AreaHistogram {
    pub bins: Bins,
    pub counts: Vec<usize>,
    /// Number of non-empty pillars.
    pub n_all: usize,
}

impl AreaHistogram {
    pub fn from_counts(counts: &[u32], bins: &Bins) -> Self {
        let mut hist = vec![0; bins.len()];
        for &c in counts {
            if let Some(b) = bins.bin_of(c) {
                hist[b] += 1;
            }
        }
        Self {
            bins: bins.clone(),
            n_all: hist.iter().sum(),
            counts: hist,
        }
    }

    pub fn n_low(&self) -> usize {
        self.counts[0]
    }

    pub fn n_mid(&self) -> usize {
        self.counts.get(1).copied().unwrap_or(0)
    }

    pub fn n_high(&self) -> usize {
        self.counts.get(2).copied().unwrap_or(0)
    }

    /// `N_bin / N_all` per bin; all zero when no pillar is occupied.
    ///
    /// The last non-empty bin takes `1 - sum(earlier weights)`, so the
    /// weights sum to exactly 1.0 in floating point (plain quotients miss
    /// by an ulp on a few percent of grids).
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.counts.len()];
        let Some(last) = self.counts.iter().rposition(|&c| c > 0) else {
            return w;
        };
        let n = self.n_all as f64;
        let mut head = 0.0;
        for (wk, &c) in w[..last].iter_mut().zip(&self.counts) {
            *wk = c as f64 / n;
            head += *wk;
        }
        w[last] = 1.0 - head;
        w
    }

    /// Adds another histogram over the same bins.
    pub fn merge(&mut self, other: &AreaHistogram) -> Result<()> {
        if self.bins != other.bins {
            return Err(Error::InvalidBins("cannot merge histograms over different bins".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_all += other.n_all;
        Ok(())
    }
}

pub fn area_histogram(grid: &BevGrid, bins: &Bins) -> AreaHistogram {
    AreaHistogram::from_counts(&grid.counts, bins)
}

/// Global descriptor of one BEV map.
#[derive(Clone, Debug, PartialEq)]
pub struct BevVector {
    pub values: Vec<f64>,
    pub domain_tag: String,
}

impl BevVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Population-weighted sum of per-bin coordinate-wise maxima, before
/// normalization. Empty bins contribute zero.
pub fn dvm_vector_unnormalized(grid: &BevGrid, hist: &AreaHistogram) -> Result<Vec<f64>> {
    if area_histogram(grid, &hist.bins) != *hist {
        return Err(Error::Shape("histogram was not computed from this grid".into()));
    }
    let c = grid.channels();
    let mut maxes: Vec<Option<Vec<f64>>> = vec![None; hist.bins.len()];
    for (cell, &count) in grid.counts.iter().enumerate() {
        let Some(b) = hist.bins.bin_of(count) else { continue };
        let f = grid.features.row(cell);
        match &mut maxes[b] {
            Some(m) => m.iter_mut().zip(f).for_each(|(a, v)| *a = a.max(*v)),
            slot => *slot = Some(f.to_vec()),
        }
    }
    let mut v = vec![0.0; c];
    for (w, m) in hist.weights().into_iter().zip(maxes) {
        if let Some(m) = m {
            v.iter_mut().zip(m).for_each(|(a, x)| *a += w * x);
        }
    }
    Ok(v)
}

/// Density-maintained vector, L2-normalized (a zero vector stays zero).
pub fn dvm_vector(grid: &BevGrid, hist: &AreaHistogram, domain_tag: &str) -> Result<BevVector> {
    let mut values = dvm_vector_unnormalized(grid, hist)?;
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(BevVector {
        values,
        domain_tag: domain_tag.to_owned(),
    })
}

fn nesting_factor(source: &LidarConfig, target: &LidarConfig) -> Result<(bool, u32)> {
    let err = Error::NonNestedGrids {
        source_beams: source.beam_count,
        target_beams: target.beam_count,
    };
    if source.vertical_fov != target.vertical_fov || source.azimuth_step != target.azimuth_step {
        return Err(err);
    }
    let (s, t) = (source.beam_count, target.beam_count);
    if s >= t && s % t == 0 {
        Ok((false, s / t))
    } else if t > s && t % s == 0 {
        Ok((true, t / s))
    } else {
        Err(err)
    }
}

/// Re-samples `cloud` (scanned with `source`) to the beam structure of
/// `target`.
///
/// Fewer target beams: keeps exactly the returns on beams shared with the
/// target grid. More target beams: between vertically adjacent returns at
/// the same azimuth, inserts linearly interpolated points on each
/// intermediate target beam; the label comes from the nearer original
/// (the lower beam on a tie). Equal beam counts: identity.
pub fn density_transfer(cloud: &[Point], source: &LidarConfig, target: &LidarConfig) -> Result<Vec<Point>> {
    let (upsample, factor) = nesting_factor(source, target)?;
    if factor == 1 {
        return Ok(cloud.to_vec());
    }
    if !upsample {
        return Ok(cloud
            .iter()
            .filter(|p| u32::from(p.beam_id) % factor == 0)
            .map(|p| Point {
                beam_id: (u32::from(p.beam_id) / factor) as u16,
                ..*p
            })
            .collect());
    }
    let az: Vec<usize> = cloud
        .iter()
        .map(|p| source.azimuth_index(p.position_f64()))
        .collect();
    let mut at: HashMap<(u16, usize), usize> = HashMap::with_capacity(cloud.len());
    for (i, p) in cloud.iter().enumerate() {
        at.entry((p.beam_id, az[i])).or_insert(i);
    }
    let mut out: Vec<Point> = cloud
        .iter()
        .map(|p| Point {
            beam_id: (u32::from(p.beam_id) * factor) as u16,
            ..*p
        })
        .collect();
    for (i, lo) in cloud.iter().enumerate() {
        let Some(&j) = at.get(&(lo.beam_id + 1, az[i])) else { continue };
        let hi = &cloud[j];
        let (a, b) = (lo.position_f64(), hi.position_f64());
        for r in 1..factor {
            let f = f64::from(r) / f64::from(factor);
            let lerp = |x: f64, y: f64| x + f * (y - x);
            out.push(Point {
                position: [0, 1, 2].map(|k| lerp(a[k], b[k]) as f32),
                intensity: lerp(f64::from(lo.intensity), f64::from(hi.intensity)) as f32,
                beam_id: (u32::from(lo.beam_id) * factor + r) as u16,
                label: if f <= 0.5 { lo.label } else { hi.label },
            });
        }
    }
    Ok(out)
}

/// Density-transfers a scene's cloud; the image is kept and the projection
/// recomputed for the new cloud.
pub fn transfer_scene(
    pair: &ScenePair,
    source: &LidarConfig,
    target: &LidarConfig,
    camera: &CameraModel,
) -> Result<ScenePair> {
    let cloud = density_transfer(&pair.cloud, source, target)?;
    ScenePair::new(
        cloud,
        pair.image.clone(),
        camera,
        format!("{}->{}", pair.domain_tag, target.beam_count),
    )
}

#[cfg(test)]
mod tests;
