//! Width-scalable CIFAR classifiers (ResNet18, VGG16, WideResNet28) with
//! named activation taps for feature extraction.
//!
//! Input normalization is owned by the model: every public entry point
//! takes `[0, 1]` pixel tensors, and gradients returned to attack code are
//! back in pixel units.

mod resnet;
mod vgg;
mod wrn;

pub use resnet::ResNet;
pub use vgg::Vgg;
pub use wrn::WideResNet;

use crate::error::{Error, Result};
use crate::nn::{Mode, ParamMut, ParamRef, Parameters};
use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

/// Per-channel input normalization baked into the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl InputNorm {
    /// The usual CIFAR statistics; fine for both CIFAR-10 and CIFAR-100.
    pub fn cifar() -> Self {
        InputNorm { mean: [0.4914, 0.4822, 0.4465], std: [0.2470, 0.2435, 0.2616] }
    }

    pub fn identity() -> Self {
        InputNorm { mean: [0.0; 3], std: [1.0; 3] }
    }

    pub fn apply(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut y = x.clone();
        let c = x.dim().1;
        for ci in 0..c {
            let (m, s) = (self.mean[ci % 3], self.std[ci % 3]);
            y.index_axis_mut(ndarray::Axis(1), ci).mapv_inplace(|v| (v - m) / s);
        }
        y
    }

    pub fn backward(&self, g: &Array4<f32>) -> Array4<f32> {
        let mut y = g.clone();
        let c = g.dim().1;
        for ci in 0..c {
            let s = self.std[ci % 3];
            y.index_axis_mut(ndarray::Axis(1), ci).mapv_inplace(|v| v / s);
        }
        y
    }
}

/// Network architecture of a victim or threat classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    Vgg16,
    ResNet18,
    Wrn28,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Vgg16 => f.write_str("vgg16"),
            Architecture::ResNet18 => f.write_str("resnet18"),
            Architecture::Wrn28 => f.write_str("wrn28"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg16" | "vgg" => Ok(Architecture::Vgg16),
            "resnet18" | "resnet" => Ok(Architecture::ResNet18),
            "wrn28" | "wrn" | "wideresnet28" => Ok(Architecture::Wrn28),
            other => Err(Error::invalid_config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Shape/width settings for one classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub arch: Architecture,
    /// Base channel width. Full scale: 64 for ResNet18/VGG16; for WRN28
    /// this is the widen factor times 16.
    pub width: usize,
    pub classes: usize,
    pub norm: InputNorm,
}

impl ClassifierConfig {
    pub fn new(arch: Architecture, width: usize, classes: usize) -> Self {
        ClassifierConfig { arch, width, classes, norm: InputNorm::cifar() }
    }
}

/// An activation captured at a named tap point.
#[derive(Debug, Clone)]
pub enum TapTensor {
    Spatial(Array4<f32>),
    Vector(Array2<f32>),
}

impl TapTensor {
    pub fn batch_len(&self) -> usize {
        match self {
            TapTensor::Spatial(t) => t.dim().0,
            TapTensor::Vector(t) => t.dim().0,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            TapTensor::Spatial(t) => t.dim().1,
            TapTensor::Vector(t) => t.dim().1,
        }
    }
}

/// One classifier with explicit forward/backward and tap access.
pub enum Classifier {
    ResNet(ResNet),
    Vgg(Vgg),
    Wrn(WideResNet),
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Self {
        match cfg.arch {
            Architecture::ResNet18 => Classifier::ResNet(ResNet::new18(cfg, seed)),
            Architecture::Vgg16 => Classifier::Vgg(Vgg::new16(cfg, seed)),
            Architecture::Wrn28 => Classifier::Wrn(WideResNet::new28(cfg, seed)),
        }
    }

    pub fn config(&self) -> &ClassifierConfig {
        match self {
            Classifier::ResNet(m) => &m.cfg,
            Classifier::Vgg(m) => &m.cfg,
            Classifier::Wrn(m) => &m.cfg,
        }
    }

    /// Forward pass that keeps caches for [`Classifier::backward`].
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        match self {
            Classifier::ResNet(m) => m.forward(x, mode),
            Classifier::Vgg(m) => m.forward(x, mode),
            Classifier::Wrn(m) => m.forward(x, mode),
        }
    }

    /// Backpropagate a logits gradient down to pixel space.
    pub fn backward(&mut self, glogits: &Array2<f32>) -> Array4<f32> {
        match self {
            Classifier::ResNet(m) => m.backward(glogits),
            Classifier::Vgg(m) => m.backward(glogits),
            Classifier::Wrn(m) => m.backward(glogits),
        }
    }

    /// Pure inference; safe to call concurrently on a shared reference.
    pub fn infer(&self, x: &Array4<f32>) -> Array2<f32> {
        self.infer_taps(x, &[]).0
    }

    /// Inference that also captures the named tap activations.
    pub fn infer_taps(&self, x: &Array4<f32>, taps: &[String]) -> (Array2<f32>, Vec<TapTensor>) {
        match self {
            Classifier::ResNet(m) => m.infer_taps(x, taps),
            Classifier::Vgg(m) => m.infer_taps(x, taps),
            Classifier::Wrn(m) => m.infer_taps(x, taps),
        }
    }

    /// Tap names in network order, bottom to top.
    pub fn tap_names(&self) -> Vec<&'static str> {
        match self {
            Classifier::ResNet(_) => ResNet::TAPS.to_vec(),
            Classifier::Vgg(_) => Vgg::TAPS.to_vec(),
            Classifier::Wrn(_) => WideResNet::TAPS.to_vec(),
        }
    }

    /// The top/middle-biased default: last three spatial stages plus the
    /// pooled penultimate feature.
    pub fn default_taps(&self) -> Vec<String> {
        let names = self.tap_names();
        names[names.len().saturating_sub(4)..].iter().map(|s| s.to_string()).collect()
    }

    pub fn validate_taps(&self, taps: &[String]) -> Result<()> {
        let known = self.tap_names();
        for t in taps {
            if !known.contains(&t.as_str()) {
                return Err(Error::invalid_config(format!(
                    "unknown layer id '{t}' for {}; known: {known:?}",
                    self.config().arch
                )));
            }
        }
        Ok(())
    }

    /// Argmax predictions on `[0, 1]` pixels.
    pub fn predict(&self, x: &Array4<f32>) -> Vec<u8> {
        let logits = self.infer(x);
        logits
            .axis_iter(ndarray::Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i as u8)
                    .unwrap()
            })
            .collect()
    }

    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        match self {
            Classifier::ResNet(m) => m.visit_stats(f),
            Classifier::Vgg(m) => m.visit_stats(f),
            Classifier::Wrn(m) => m.visit_stats(f),
        }
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        match self {
            Classifier::ResNet(m) => m.visit_stats_mut(f),
            Classifier::Vgg(m) => m.visit_stats_mut(f),
            Classifier::Wrn(m) => m.visit_stats_mut(f),
        }
    }
}

impl Parameters for Classifier {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        match self {
            Classifier::ResNet(m) => m.visit_mut(f),
            Classifier::Vgg(m) => m.visit_mut(f),
            Classifier::Wrn(m) => m.visit_mut(f),
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        match self {
            Classifier::ResNet(m) => m.visit(f),
            Classifier::Vgg(m) => m.visit(f),
            Classifier::Wrn(m) => m.visit(f),
        }
    }
}

pub const CLASSIFIER_KIND: &str = "classifier";

impl Classifier {
    /// Persist weights, normalization statistics, and config.
    pub fn save(&self, path: &std::path::Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config(),
            "extra": extra,
        });
        let mut c = crate::ckpt::Container::new(CLASSIFIER_KIND, meta);
        self.visit(&mut |name, p| c.push_f32(name, p.shape.clone(), p.value.to_vec()));
        self.visit_stats(&mut |name, arr| {
            c.push_f32(format!("stats.{name}"), vec![arr.len()], arr.to_vec())
        });
        c.save(path)
    }

    /// Load with a hard shape check of every tensor against the config.
    pub fn load(path: &std::path::Path) -> Result<(Classifier, serde_json::Value)> {
        let c = crate::ckpt::Container::load(path)?;
        c.expect_kind(CLASSIFIER_KIND)?;
        let cfg: ClassifierConfig = serde_json::from_value(c.meta["config"].clone())?;
        let mut model = Classifier::new(cfg, 0);
        let mut missing: Vec<String> = Vec::new();
        let mut shape_err: Option<Error> = None;
        model.visit_mut(&mut |name, p| match c.f32_shaped(name, &p.shape) {
            Ok(data) => p.value.copy_from_slice(data),
            Err(Error::Mismatch(m)) => shape_err = Some(Error::Mismatch(m)),
            Err(_) => missing.push(name.to_string()),
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        model.visit_stats_mut(&mut |name, arr| {
            match c.f32_shaped(&format!("stats.{name}"), &[arr.len()]) {
                Ok(data) => arr.as_slice_mut().unwrap().copy_from_slice(data),
                Err(_) => missing.push(name.to_string()),
            }
        });
        if !missing.is_empty() {
            return Err(Error::Format(format!("checkpoint missing tensors: {missing:?}")));
        }
        Ok((model, c.meta["extra"].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;
    use crate::nn::Mode;
    use ndarray::Array4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_batch(n: usize, hw: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, 3, hw, hw), |_| rng.random::<f32>())
    }

    fn tiny_cfg(arch: Architecture) -> ClassifierConfig {
        ClassifierConfig::new(arch, 4, 4)
    }

    #[test]
    fn all_archs_forward_backward_and_taps() {
        for arch in [Architecture::ResNet18, Architecture::Vgg16, Architecture::Wrn28] {
            let mut m = Classifier::new(tiny_cfg(arch), 7);
            // VGG pools five times, so it needs the full 32x32 extent
            let hw = if arch == Architecture::Vgg16 { 32 } else { 8 };
            let x = tiny_batch(3, hw, 11);
            let logits = m.forward(&x, Mode::Train);
            assert_eq!(logits.dim(), (3, 4), "{arch}");
            let (_, g) = softmax_cross_entropy(&logits, &[0, 1, 2]);
            let gin = m.backward(&g);
            assert_eq!(gin.dim(), x.dim(), "{arch}");
            assert!(gin.iter().all(|v| v.is_finite()), "{arch}");

            let taps: Vec<String> = m.tap_names().iter().map(|s| s.to_string()).collect();
            let (logits2, acts) = m.infer_taps(&x, &taps);
            assert_eq!(acts.len(), taps.len(), "{arch}");
            for a in &acts {
                assert_eq!(a.batch_len(), 3, "{arch}");
            }
            // eval-mode logits differ from train-mode (BN), but shapes agree
            assert_eq!(logits2.dim(), (3, 4), "{arch}");
            assert!(m.validate_taps(&["nope".to_string()]).is_err());
        }
    }

    #[test]
    fn inference_deterministic_and_matches_eval_forward() {
        let mut m = Classifier::new(tiny_cfg(Architecture::ResNet18), 3);
        let x = tiny_batch(2, 8, 5);
        // burn in some running stats
        for _ in 0..3 {
            m.forward(&x, Mode::Train);
        }
        let a = m.infer(&x);
        let b = m.infer(&x);
        assert_eq!(a, b);
        let c = m.forward(&x, Mode::EvalGrad);
        assert_eq!(a, c);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut m = Classifier::new(tiny_cfg(Architecture::ResNet18), 13);
        // needs enough samples per normalization channel: with a tiny
        // batch the running-stat unbias factor m/(m-1) makes eval and
        // train statistics genuinely diverge and FD turns vacuous
        let x = tiny_batch(8, 16, 17);
        for _ in 0..60 {
            m.forward(&x, Mode::Train);
        }
        let labels = [1u8, 3, 0, 2, 1, 1, 3, 0];
        let logits = m.forward(&x, Mode::EvalGrad);
        let (_, g) = softmax_cross_entropy(&logits, &labels);
        let gin = m.backward(&g);

        let mut xp = x.clone();
        let eps = 1e-3f32;
        for &idx in &[(0usize, 0usize, 0usize, 0usize), (1, 2, 15, 15), (0, 1, 3, 4)] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let (lp, _) = softmax_cross_entropy(&m.infer(&xp), &labels);
            xp[idx] = orig - eps;
            let (lm, _) = softmax_cross_entropy(&m.infer(&xp), &labels);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (gin[idx] - fd).abs() < 5e-2 * fd.abs().max(0.05),
                "{idx:?}: analytic {} vs fd {fd}",
                gin[idx]
            );
        }
    }

    #[test]
    fn identical_seed_gives_identical_weights() {
        let a = Classifier::new(tiny_cfg(Architecture::Vgg16), 99);
        let b = Classifier::new(tiny_cfg(Architecture::Vgg16), 99);
        let mut equal = true;
        a.visit(&mut |name, pa| {
            b.visit(&mut |name2, pb| {
                if name == name2 && pa.value != pb.value {
                    equal = false;
                }
            });
        });
        assert!(equal);
    }
}
