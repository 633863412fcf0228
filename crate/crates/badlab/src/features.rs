//! Layer-activation extraction and reconstruction-error features: per tap,
//! the elementwise absolute difference between an image's activations and
//! its reconstruction's, pooled over space to one value per channel, then
//! concatenated across taps.

use crate::ckpt::Container;
use crate::error::{Error, Result};
use crate::models::{Classifier, TapTensor};
use crate::nn::Parameters;
use crate::tensor::ImageBatch;
use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Feature extractor identity: victim (base variant) or an independent
/// pre-trained model (online variant). The pipeline is identical either
/// way; only the model reference differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorRole {
    Victim,
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolReducer {
    Avg,
    Max,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorSpec {
    /// Checkpoint id (logical name or path) of the backing model.
    pub model_ref: String,
    pub role: ExtractorRole,
    /// Ordered tap points; resolution is validated at construction.
    pub layer_ids: Vec<String>,
    pub pool: PoolReducer,
}

/// Reconstruction-error feature matrix `[N, D]` with tap provenance.
#[derive(Debug, Clone)]
pub struct ReconErrorFeature {
    pub vector: Array2<f32>,
    pub layer_ids: Vec<String>,
}

/// A classifier wrapped for feature extraction. Input normalization is
/// owned by the wrapped model; callers always pass `[0, 1]` pixels.
pub struct Extractor {
    pub spec: ExtractorSpec,
    model: Classifier,
    per_tap_dims: Vec<usize>,
}

impl Extractor {
    pub fn new(mut spec: ExtractorSpec, model: Classifier) -> Result<Self> {
        if spec.layer_ids.is_empty() {
            spec.layer_ids = model.default_taps();
        }
        model.validate_taps(&spec.layer_ids)?;
        // probe once: feature width is a pure function of the spec
        let (_, c, h, w) = (1, 3, 32, 32);
        let dummy = Array4::<f32>::zeros((1, c, h, w));
        let (_, taps) = model.infer_taps(&dummy, &spec.layer_ids);
        let per_tap_dims = taps.iter().map(|t| t.channels()).collect();
        Ok(Extractor { spec, model, per_tap_dims })
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    /// Total feature width D, independent of batch content.
    pub fn feature_dim(&self) -> usize {
        self.per_tap_dims.iter().sum()
    }

    /// Weights + spec digest, embedded in feature dumps so a detector can
    /// refuse features from a different extractor.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.spec).unwrap());
        self.model.visit(&mut |name, p| {
            hasher.update(name.as_bytes());
            for v in p.value {
                hasher.update(v.to_le_bytes());
            }
        });
        hex_digest(hasher)
    }

    /// Raw activation at one tap, deterministic (inference mode).
    pub fn extract_activation(&self, images: &ImageBatch, layer_id: &str) -> Result<TapTensor> {
        if !self.spec.layer_ids.iter().any(|l| l == layer_id) {
            return Err(Error::invalid_config(format!(
                "layer '{layer_id}' is not in this extractor's spec"
            )));
        }
        let ids = vec![layer_id.to_string()];
        let (_, mut taps) = self.model.infer_taps(&images.0, &ids);
        Ok(taps.remove(0))
    }

    /// Pool a |difference| tensor to one value per channel.
    fn pool_diff(&self, a: &TapTensor, b: &TapTensor) -> Array2<f32> {
        match (a, b) {
            (TapTensor::Spatial(x), TapTensor::Spatial(y)) => {
                let (n, c, h, w) = x.dim();
                let mut out = Array2::<f32>::zeros((n, c));
                for ni in 0..n {
                    for ci in 0..c {
                        let xa = x.index_axis(Axis(0), ni);
                        let xa = xa.index_axis(Axis(0), ci);
                        let xb = y.index_axis(Axis(0), ni);
                        let xb = xb.index_axis(Axis(0), ci);
                        let v = match self.spec.pool {
                            PoolReducer::Avg => {
                                xa.iter().zip(xb.iter()).map(|(p, q)| (p - q).abs()).sum::<f32>()
                                    / (h * w) as f32
                            }
                            PoolReducer::Max => xa
                                .iter()
                                .zip(xb.iter())
                                .map(|(p, q)| (p - q).abs())
                                .fold(0.0f32, f32::max),
                        };
                        out[(ni, ci)] = v;
                    }
                }
                out
            }
            (TapTensor::Vector(x), TapTensor::Vector(y)) => (x - y).mapv(f32::abs),
            _ => unreachable!("tap kinds agree for one layer id"),
        }
    }

    /// Algorithm: for each tap `l`, `| M_l(reconstruction) - M_l(original) |`
    /// pooled per channel; taps concatenated into `[N, D]`.
    pub fn reconstruction_error(
        &self,
        originals: &ImageBatch,
        reconstructions: &ImageBatch,
    ) -> Result<ReconErrorFeature> {
        if originals.dims() != reconstructions.dims() {
            return Err(Error::invalid_input(format!(
                "originals {:?} vs reconstructions {:?}",
                originals.dims(),
                reconstructions.dims()
            )));
        }
        let n = originals.len();
        let d = self.feature_dim();
        let mut out = Array2::<f32>::zeros((n, d));
        let chunk = 128usize;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let xo = ImageBatch::new(originals.0.slice(ndarray::s![start..end, .., .., ..]).to_owned());
            let xr = ImageBatch::new(
                reconstructions.0.slice(ndarray::s![start..end, .., .., ..]).to_owned(),
            );
            let (_, taps_o) = self.model.infer_taps(&xo.0, &self.spec.layer_ids);
            let (_, taps_r) = self.model.infer_taps(&xr.0, &self.spec.layer_ids);
            let mut col = 0usize;
            for (to, tr) in taps_o.iter().zip(taps_r.iter()) {
                let pooled = self.pool_diff(tr, to);
                let width = pooled.dim().1;
                out.slice_mut(ndarray::s![start..end, col..col + width]).assign(&pooled);
                col += width;
            }
            start = end;
        }
        Ok(ReconErrorFeature { vector: out, layer_ids: self.spec.layer_ids.clone() })
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub const FEATURES_KIND: &str = "features";

/// Persist a feature dump: features `[N, D]`, labels `[N]`, tap ids, and
/// the extractor fingerprint.
pub fn save_features(
    path: &Path,
    features: &Array2<f32>,
    labels: &[u8],
    layer_ids: &[String],
    fingerprint: &str,
) -> Result<()> {
    let (n, d) = features.dim();
    if n != labels.len() {
        return Err(Error::invalid_input("features/labels length mismatch"));
    }
    let meta = serde_json::json!({
        "layer_ids": layer_ids,
        "extractor_fingerprint": fingerprint,
    });
    let mut c = Container::new(FEATURES_KIND, meta);
    c.push_f32("features", vec![n, d], features.iter().copied().collect());
    c.push_u8("labels", vec![n], labels.to_vec());
    c.save(path)
}

pub struct FeatureDump {
    pub features: Array2<f32>,
    pub labels: Vec<u8>,
    pub layer_ids: Vec<String>,
    pub fingerprint: String,
}

pub fn load_features(path: &Path) -> Result<FeatureDump> {
    let c = Container::load(path)?;
    c.expect_kind(FEATURES_KIND)?;
    let (shape, data) = c.f32("features")?;
    if shape.len() != 2 {
        return Err(Error::Format("features tensor must be 2-D".into()));
    }
    let features = Array2::from_shape_vec((shape[0], shape[1]), data.to_vec())
        .map_err(|e| Error::Format(e.to_string()))?;
    let (_, labels) = c.u8("labels")?;
    let layer_ids: Vec<String> = serde_json::from_value(c.meta["layer_ids"].clone())?;
    let fingerprint = c.meta["extractor_fingerprint"].as_str().unwrap_or_default().to_string();
    Ok(FeatureDump { features, labels: labels.to_vec(), layer_ids, fingerprint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ClassifierConfig};
    use crate::nn::Mode;
    use ndarray::Array4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_extractor(seed: u64) -> Extractor {
        let mut model = Classifier::new(ClassifierConfig::new(Architecture::ResNet18, 4, 10), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn((8, 3, 32, 32), |_| rng.random::<f32>());
        for _ in 0..5 {
            model.forward(&x, Mode::Train);
        }
        model.backward(&ndarray::Array2::zeros((8, 10)));
        let spec = ExtractorSpec {
            model_ref: "test".into(),
            role: ExtractorRole::Victim,
            layer_ids: vec![],
            pool: PoolReducer::Avg,
        };
        Extractor::new(spec, model).unwrap()
    }

    fn batch(n: usize, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBatch::new(Array4::from_shape_fn((n, 3, 32, 32), |_| rng.random::<f32>()))
    }

    #[test]
    fn default_taps_and_dim_are_stable() {
        let ex = small_extractor(3);
        assert_eq!(ex.spec.layer_ids, vec!["stage2", "stage3", "stage4", "pool"]);
        // widths 4,8,16,32: stage2=8, stage3=16, stage4=32, pool=32
        assert_eq!(ex.feature_dim(), 8 + 16 + 32 + 32);
        // feature dim independent of batch content
        let f = ex.reconstruction_error(&batch(3, 5), &batch(3, 6)).unwrap();
        assert_eq!(f.vector.dim(), (3, ex.feature_dim()));
    }

    #[test]
    fn unknown_layer_rejected_at_construction() {
        let model = Classifier::new(ClassifierConfig::new(Architecture::ResNet18, 4, 10), 3);
        let spec = ExtractorSpec {
            model_ref: "x".into(),
            role: ExtractorRole::Victim,
            layer_ids: vec!["stage9".into()],
            pool: PoolReducer::Avg,
        };
        assert!(Extractor::new(spec, model).is_err());
    }

    #[test]
    fn identity_reconstruction_gives_zero_features() {
        let ex = small_extractor(7);
        let x = batch(4, 8);
        let f = ex.reconstruction_error(&x, &x).unwrap();
        assert!(f.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetry_and_nonnegativity() {
        let ex = small_extractor(9);
        let a = batch(4, 10);
        let b = batch(4, 11);
        let f1 = ex.reconstruction_error(&a, &b).unwrap();
        let f2 = ex.reconstruction_error(&b, &a).unwrap();
        assert_eq!(f1.vector, f2.vector);
        assert!(f1.vector.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn determinism_and_batch_shape() {
        let ex = small_extractor(13);
        let x = batch(5, 14);
        let t1 = ex.extract_activation(&x, "stage3").unwrap();
        let t2 = ex.extract_activation(&x, "stage3").unwrap();
        match (t1, t2) {
            (TapTensor::Spatial(a), TapTensor::Spatial(b)) => {
                assert_eq!(a, b);
                assert_eq!(a.dim().0, 5);
            }
            _ => panic!("stage3 is spatial"),
        }
        assert!(ex.extract_activation(&x, "stage1").is_err(), "not in spec layer_ids");
    }

    #[test]
    fn feature_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bdlb");
        let ex = small_extractor(15);
        let f = ex.reconstruction_error(&batch(3, 16), &batch(3, 17)).unwrap();
        let labels = vec![0u8, 1, 2];
        save_features(&path, &f.vector, &labels, &f.layer_ids, &ex.fingerprint()).unwrap();
        let dump = load_features(&path).unwrap();
        assert_eq!(dump.features, f.vector);
        assert_eq!(dump.labels, labels);
        assert_eq!(dump.layer_ids, f.layer_ids);
        assert_eq!(dump.fingerprint, ex.fingerprint());
    }
}
