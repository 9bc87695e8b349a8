use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::LinearLayer;
use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scene::NUM_CLASSES;
use crate::tensor::Matrix;

/// Raw per-pixel channels plus their 3x3 neighborhood mean.
pub const PIXEL_INPUTS: usize = 6;
/// x, y, z, intensity plus the mean of the same over the k nearest points.
pub const POINT_INPUTS: usize = 8;

/// Layer widths of the stand-in networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub hidden: usize,
    pub c2d: usize,
    pub c3d: usize,
    /// Output width of fc1, which is also the width of fused cell features.
    pub fused: usize,
    /// Output width of fc2_2d / fc2_3d.
    pub head_in: usize,
    /// Neighbors averaged into each point's input.
    pub knn: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            hidden: 16,
            c2d: 16,
            c3d: 16,
            fused: 32,
            head_in: 32,
            knn: 8,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.hidden, self.c2d, self.c3d, self.fused, self.head_in];
        if widths.contains(&0) {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if self.knn == 0 {
            return Err(Error::Config("knn must be >= 1".into()));
        }
        Ok(())
    }
}

/// How the two modalities exchange information before the heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// No exchange; fc2 sees a zero fused feature.
    None,
    /// Area-to-area: fused pillar features, gathered back to points.
    Area,
    /// Point-to-point: fc1 applied to each point's own 2D and 3D features.
    Point,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::None => "none",
            Fusion::Area => "area",
            Fusion::Point => "point",
        }
    }
}

/// All trainable weights. The same layout holds gradients and optimizer
/// moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub net2d: [LinearLayer; 2],
    pub net3d: [LinearLayer; 2],
    pub fc1: LinearLayer,
    pub fc2_2d: LinearLayer,
    pub fc2_3d: LinearLayer,
    pub head2d: LinearLayer,
    pub head3d: LinearLayer,
}

pub const LAYER_NAMES: [&str; 9] = [
    "net2d.0", "net2d.1", "net3d.0", "net3d.1", "fc1", "fc2_2d", "fc2_3d", "head2d", "head3d",
];

impl ModelParams {
    /// Shapes `(in, out)` of every layer, in [`LAYER_NAMES`] order.
    pub fn layer_shapes(dims: &ModelDims) -> [(usize, usize); 9] {
        [
            (PIXEL_INPUTS, dims.hidden),
            (dims.hidden, dims.c2d),
            (POINT_INPUTS, dims.hidden),
            (dims.hidden, dims.c3d),
            (dims.c2d + dims.c3d, dims.fused),
            (dims.c2d + dims.fused, dims.head_in),
            (dims.c3d + dims.fused, dims.head_in),
            (dims.head_in, NUM_CLASSES),
            (dims.head_in, NUM_CLASSES),
        ]
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        Self::from_layers(Self::layer_shapes(dims).map(|(i, o)| LinearLayer::zeros(i, o)))
    }

    /// He-normal weights and zero biases.
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        let mut r = rng(seed);
        Self::from_layers(Self::layer_shapes(dims).map(|(i, o)| {
            let normal = Normal::new(0.0, (2.0 / i as f64).sqrt()).expect("finite std");
            let w = (0..i * o).map(|_| normal.sample(&mut r)).collect();
            LinearLayer {
                weight: Matrix::from_vec(o, i, w),
                bias: Matrix::zeros(1, o),
            }
        }))
    }

    pub fn from_layers(layers: [LinearLayer; 9]) -> Self {
        let [a, b, c, d, fc1, fc2_2d, fc2_3d, head2d, head3d] = layers;
        Self {
            net2d: [a, b],
            net3d: [c, d],
            fc1,
            fc2_2d,
            fc2_3d,
            head2d,
            head3d,
        }
    }

    pub fn layers(&self) -> [&LinearLayer; 9] {
        [
            &self.net2d[0],
            &self.net2d[1],
            &self.net3d[0],
            &self.net3d[1],
            &self.fc1,
            &self.fc2_2d,
            &self.fc2_3d,
            &self.head2d,
            &self.head3d,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut LinearLayer; 9] {
        let Self {
            net2d: [a, b],
            net3d: [c, d],
            fc1,
            fc2_2d,
            fc2_3d,
            head2d,
            head3d,
        } = self;
        [a, b, c, d, fc1, fc2_2d, fc2_3d, head2d, head3d]
    }

    /// Dimensions implied by the layer shapes; errors if they disagree.
    pub fn dims(&self, knn: usize) -> Result<ModelDims> {
        let dims = ModelDims {
            hidden: self.net2d[0].out_dim(),
            c2d: self.net2d[1].out_dim(),
            c3d: self.net3d[1].out_dim(),
            fused: self.fc1.out_dim(),
            head_in: self.fc2_2d.out_dim(),
            knn,
        };
        let want = Self::layer_shapes(&dims);
        for ((name, layer), (i, o)) in LAYER_NAMES.iter().zip(self.layers()).zip(want) {
            if (layer.in_dim(), layer.out_dim()) != (i, o) || layer.bias.shape() != (1, o) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {i}x{o}",
                    layer.in_dim(),
                    layer.out_dim()
                )));
            }
        }
        Ok(dims)
    }

    pub fn num_scalars(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Weights then bias of each layer, in [`LAYER_NAMES`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for l in self.layers() {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Inverse of [`ModelParams::flatten`] into the shapes of `self`.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            for m in [&mut l.weight, &mut l.bias] {
                let n = m.data().len();
                m.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}
