//! Image batch tensor and small numeric helpers shared across modules.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

/// A batch of images in NCHW layout with values expected in `[0, 1]`.
///
/// The type does not force the range on construction (intermediate
/// reconstructions may leave it), but [`ImageBatch::validated`] and
/// [`ImageBatch::clamped`] are available where the contract requires it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch(pub Array4<f32>);

impl ImageBatch {
    pub fn new(data: Array4<f32>) -> Self {
        ImageBatch(data)
    }

    /// Construct after checking every value is finite.
    pub fn validated(data: Array4<f32>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_input("image batch contains non-finite values"));
        }
        Ok(ImageBatch(data))
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.0.dim()
    }

    pub fn len(&self) -> usize {
        self.0.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        ImageBatch(self.0.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn view(&self) -> ndarray::ArrayView4<'_, f32> {
        self.0.view()
    }
}

/// Class labels aligned with an [`ImageBatch`].
pub type Labels = Array1<u8>;

/// Max absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Array4<f32>, b: &Array4<f32>) -> f32 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max)
}

/// Per-sample l-infinity norm of `a - b`, returned as one value per batch row.
pub fn linf_per_sample(a: &Array4<f32>, b: &Array4<f32>) -> Vec<f32> {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.dim().0;
    (0..n)
        .map(|i| {
            a.index_axis(ndarray::Axis(0), i)
                .iter()
                .zip(b.index_axis(ndarray::Axis(0), i).iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max)
        })
        .collect()
}

/// Mean squared error per sample between two batches, in whatever domain
/// the tensors live in.
pub fn mse_per_sample(a: &Array4<f32>, b: &Array4<f32>) -> Vec<f32> {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.dim().0;
    let per = (a.len() / n.max(1)) as f32;
    (0..n)
        .map(|i| {
            a.index_axis(ndarray::Axis(0), i)
                .iter()
                .zip(b.index_axis(ndarray::Axis(0), i).iter())
                .map(|(x, y)| {
                    let d = x - y;
                    (d * d) as f64
                })
                .sum::<f64>() as f32
                / per
        })
        .collect()
}

/// Flatten a `[N, C, H, W]` tensor into `[N, C*H*W]` rows.
pub fn flatten_batch(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    x.to_shape((n, c * h * w)).expect("contiguous NCHW").to_owned()
}

/// Tolerances and tags shared by reconstruction variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconVariant {
    /// PixelVAE output, no spectrum mixing.
    Pixel,
    /// Reconstructed phase with the original amplitude.
    Pha,
    /// Reconstructed amplitude with the original phase.
    Amp,
    /// Both components reconstructed.
    Joint,
}

impl std::fmt::Display for ReconVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReconVariant::Pixel => "pixel",
            ReconVariant::Pha => "pha",
            ReconVariant::Amp => "amp",
            ReconVariant::Joint => "joint",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ReconVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(ReconVariant::Pixel),
            "pha" => Ok(ReconVariant::Pha),
            "amp" => Ok(ReconVariant::Amp),
            "joint" => Ok(ReconVariant::Joint),
            other => Err(Error::invalid_config(format!("unknown variant '{other}'"))),
        }
    }
}
