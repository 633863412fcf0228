//! White-box and transfer attack crafting, magnitude-matched random noise,
//! and NT/AT classifier training.
//!
//! All attacks are non-targeted and operate on `[0, 1]` pixels; l-infinity
//! families project onto the epsilon ball after every step.

use crate::error::{Error, Result};
use crate::models::{Architecture, Classifier, ClassifierConfig};
use crate::nn::loss::{softmax, softmax_cross_entropy};
use crate::nn::optim::{cosine_lr, sgd_step, SgdConfig};
use crate::nn::{Mode, Parameters};
use crate::tensor::{linf_per_sample, ImageBatch, Labels};
use ndarray::{Array1, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackFamily {
    Fgsm,
    Bim,
    PgdLinf,
    PgdL2,
    DeepFool,
    Cw,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 6] = [
        AttackFamily::Fgsm,
        AttackFamily::Bim,
        AttackFamily::PgdLinf,
        AttackFamily::PgdL2,
        AttackFamily::DeepFool,
        AttackFamily::Cw,
    ];

    /// Families whose perturbation is bounded by an l-infinity budget.
    pub fn is_linf(self) -> bool {
        matches!(self, AttackFamily::Fgsm | AttackFamily::Bim | AttackFamily::PgdLinf)
    }
}

impl std::fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Bim => "bim",
            AttackFamily::PgdLinf => "pgd-linf",
            AttackFamily::PgdL2 => "pgd-l2",
            AttackFamily::DeepFool => "deepfool",
            AttackFamily::Cw => "cw",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AttackFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackFamily::Fgsm),
            "bim" => Ok(AttackFamily::Bim),
            "pgd-linf" | "pgd_linf" | "pgdlinf" | "pgd" => Ok(AttackFamily::PgdLinf),
            "pgd-l2" | "pgd_l2" | "pgdl2" => Ok(AttackFamily::PgdL2),
            "deepfool" | "df" => Ok(AttackFamily::DeepFool),
            "cw" | "c&w" => Ok(AttackFamily::Cw),
            other => Err(Error::invalid_config(format!("unknown attack family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackSpec {
    pub family: AttackFamily,
    /// l-infinity budget in pixel units for linf families, l2 budget for
    /// PGD-l2; advisory for DeepFool/C&W, which minimize distortion.
    pub epsilon: f32,
    pub steps: usize,
    /// Per-step size; `None` picks the family default (epsilon / 10 for
    /// the iterative linf attacks).
    pub step_size: Option<f32>,
    /// PGD random start inside the ball.
    pub random_start: bool,
    pub targeted: bool,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(family: AttackFamily, epsilon: f32) -> Self {
        let steps = match family {
            AttackFamily::Fgsm => 1,
            AttackFamily::Bim | AttackFamily::PgdLinf | AttackFamily::PgdL2 => 20,
            AttackFamily::DeepFool => 50,
            AttackFamily::Cw => 100,
        };
        AttackSpec {
            family,
            epsilon,
            steps,
            step_size: None,
            random_start: matches!(family, AttackFamily::PgdLinf | AttackFamily::PgdL2),
            targeted: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::invalid_config("epsilon must be non-negative and finite"));
        }
        if self.steps == 0 {
            return Err(Error::invalid_config("steps must be at least 1"));
        }
        if self.family == AttackFamily::Fgsm && self.steps != 1 {
            return Err(Error::invalid_config("FGSM is single-step by definition"));
        }
        if self.targeted {
            return Err(Error::invalid_config("only non-targeted attacks are supported"));
        }
        Ok(())
    }

    fn step_size(&self) -> f32 {
        self.step_size.unwrap_or(self.epsilon / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Natural (standard cross-entropy) training.
    Nt,
    /// PGD adversarial training.
    At,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Nt => "nt",
            Strategy::At => "at",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThreatMode {
    Single,
    Ensemble,
}

/// Who crafts the evaluation-time adversarial examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatModelSpec {
    pub architectures: Vec<Architecture>,
    pub strategy: Strategy,
    pub mode: ThreatMode,
}

impl ThreatModelSpec {
    pub fn single(arch: Architecture, strategy: Strategy) -> Self {
        ThreatModelSpec { architectures: vec![arch], strategy, mode: ThreatMode::Single }
    }

    pub fn ensemble(archs: Vec<Architecture>, strategy: Strategy) -> Self {
        ThreatModelSpec { architectures: archs, strategy, mode: ThreatMode::Ensemble }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ThreatMode::Single if self.architectures.len() != 1 => {
                Err(Error::invalid_config("single-model threat needs exactly one architecture"))
            }
            ThreatMode::Ensemble if self.architectures.len() < 2 => {
                Err(Error::invalid_config("ensemble threat needs at least two architectures"))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        let archs: Vec<String> = self.architectures.iter().map(|a| a.to_string()).collect();
        format!("{}-{}", archs.join("+"), self.strategy)
    }
}

/// Per-craft bookkeeping: how many samples fell back to the clean image.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CraftReport {
    pub fallbacks: usize,
}

/// Mean ensemble logits, CE loss, and the summed input gradient.
fn grad_batch(models: &mut [Classifier], x: &Array4<f32>, labels: &[u8]) -> (Array2<f32>, Array4<f32>) {
    let k = models.len() as f32;
    let mut mean_logits: Option<Array2<f32>> = None;
    for m in models.iter_mut() {
        let l = m.forward(x, Mode::EvalGrad);
        mean_logits = Some(match mean_logits {
            Some(acc) => acc + &l,
            None => l,
        });
    }
    let mean_logits = mean_logits.expect("at least one model").mapv(|v| v / k);
    let (_, glogits) = softmax_cross_entropy(&mean_logits, labels);
    let member_g = glogits.mapv(|v| v / k);
    let mut gin: Option<Array4<f32>> = None;
    for m in models.iter_mut() {
        let g = m.backward(&member_g);
        gin = Some(match gin {
            Some(acc) => acc + &g,
            None => g,
        });
    }
    (mean_logits, gin.unwrap())
}

fn ensemble_logits(models: &[Classifier], x: &Array4<f32>) -> Array2<f32> {
    let k = models.len() as f32;
    let mut acc: Option<Array2<f32>> = None;
    for m in models {
        let l = m.infer(x);
        acc = Some(match acc {
            Some(a) => a + &l,
            None => l,
        });
    }
    acc.unwrap().mapv(|v| v / k)
}

fn ensemble_predict(models: &[Classifier], x: &Array4<f32>) -> Vec<u8> {
    argmax_rows(&ensemble_logits(models, x))
}

pub fn argmax_rows(logits: &Array2<f32>) -> Vec<u8> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i as u8)
                .unwrap()
        })
        .collect()
}

fn clip01(x: &mut Array4<f32>) {
    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

fn project_linf(x: &mut Array4<f32>, origin: &Array4<f32>, eps: f32) {
    ndarray::Zip::from(x).and(origin).for_each(|v, &o| {
        *v = (*v).clamp(o - eps, o + eps);
    });
}

fn project_l2(x: &mut Array4<f32>, origin: &Array4<f32>, eps: f32) {
    let n = x.dim().0;
    for i in 0..n {
        let mut xi = x.index_axis_mut(Axis(0), i);
        let oi = origin.index_axis(Axis(0), i);
        let norm: f32 = xi
            .iter()
            .zip(oi.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt();
        if norm > eps {
            let scale = eps / norm;
            ndarray::Zip::from(&mut xi).and(&oi).for_each(|v, &o| {
                *v = o + (*v - o) * scale;
            });
        }
    }
}

/// Craft adversarial examples against one or more loaded threat models.
/// Ensembles average member logits before the loss.
pub fn craft(
    spec: &AttackSpec,
    models: &mut [Classifier],
    images: &ImageBatch,
    labels: &Labels,
) -> Result<(ImageBatch, CraftReport)> {
    spec.validate()?;
    if models.is_empty() {
        return Err(Error::invalid_config("craft needs at least one model"));
    }
    if images.len() != labels.len() {
        return Err(Error::invalid_input("images/labels length mismatch"));
    }
    let mut out = images.0.clone();
    let mut report = CraftReport::default();
    let chunk_size = 64usize;
    let n = images.len();
    let mut start = 0;
    let mut chunk_idx = 0u64;
    while start < n {
        let end = (start + chunk_size).min(n);
        let xb = images.0.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let yb: Vec<u8> = labels.as_slice().unwrap()[start..end].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0xA77AC4 + chunk_idx));
        let adv = match spec.family {
            AttackFamily::Fgsm => fgsm(spec, models, &xb, &yb),
            AttackFamily::Bim | AttackFamily::PgdLinf => pgd_linf(spec, models, &xb, &yb, &mut rng),
            AttackFamily::PgdL2 => pgd_l2(spec, models, &xb, &yb, &mut rng),
            AttackFamily::DeepFool => deepfool(spec, models, &xb, &yb, &mut report),
            AttackFamily::Cw => cw_l2(spec, models, &xb, &yb, &mut report),
        };
        out.slice_mut(ndarray::s![start..end, .., .., ..]).assign(&adv);
        start = end;
        chunk_idx += 1;
    }
    Ok((ImageBatch::new(out), report))
}

fn fgsm(spec: &AttackSpec, models: &mut [Classifier], x: &Array4<f32>, y: &[u8]) -> Array4<f32> {
    if spec.epsilon == 0.0 {
        return x.clone();
    }
    let (_, g) = grad_batch(models, x, y);
    let mut adv = x + &g.mapv(|v| spec.epsilon * v.signum());
    clip01(&mut adv);
    adv
}

fn pgd_linf(
    spec: &AttackSpec,
    models: &mut [Classifier],
    x: &Array4<f32>,
    y: &[u8],
    rng: &mut ChaCha8Rng,
) -> Array4<f32> {
    if spec.epsilon == 0.0 {
        return x.clone();
    }
    let alpha = spec.step_size();
    let mut adv = x.clone();
    if spec.family == AttackFamily::PgdLinf && spec.random_start {
        adv.mapv_inplace(|v| v); // keep layout
        ndarray::Zip::from(&mut adv).for_each(|v| {
            *v += rng.random_range(-spec.epsilon..=spec.epsilon);
        });
        clip01(&mut adv);
    }
    for _ in 0..spec.steps {
        let (_, g) = grad_batch(models, &adv, y);
        adv = &adv + &g.mapv(|v| alpha * v.signum());
        project_linf(&mut adv, x, spec.epsilon);
        clip01(&mut adv);
    }
    // projection once more: clipping cannot grow the ball, this is belt
    project_linf(&mut adv, x, spec.epsilon);
    adv
}

fn pgd_l2(
    spec: &AttackSpec,
    models: &mut [Classifier],
    x: &Array4<f32>,
    y: &[u8],
    rng: &mut ChaCha8Rng,
) -> Array4<f32> {
    if spec.epsilon == 0.0 {
        return x.clone();
    }
    let alpha = spec.step_size.unwrap_or(spec.epsilon / 4.0);
    let mut adv = x.clone();
    if spec.random_start {
        let mut delta = Array4::<f32>::zeros(x.dim());
        ndarray::Zip::from(&mut delta).for_each(|v| *v = rng.random_range(-1.0..1.0));
        let d = x.len() / x.dim().0;
        for i in 0..x.dim().0 {
            let mut di = delta.index_axis_mut(Axis(0), i);
            let norm = di.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            let radius = spec.epsilon * rng.random::<f32>().powf(1.0 / d as f32);
            di.mapv_inplace(|v| v * radius / norm);
        }
        adv += &delta;
        clip01(&mut adv);
    }
    for _ in 0..spec.steps {
        let (_, g) = grad_batch(models, &adv, y);
        // normalized gradient step per sample
        for i in 0..x.dim().0 {
            let gi = g.index_axis(Axis(0), i);
            let norm = gi.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            let mut ai = adv.index_axis_mut(Axis(0), i);
            ndarray::Zip::from(&mut ai).and(&gi).for_each(|a, &gv| {
                *a += alpha * gv / norm;
            });
        }
        project_l2(&mut adv, x, spec.epsilon);
        clip01(&mut adv);
    }
    project_l2(&mut adv, x, spec.epsilon);
    adv
}

fn deepfool(
    spec: &AttackSpec,
    models: &mut [Classifier],
    x: &Array4<f32>,
    y: &[u8],
    report: &mut CraftReport,
) -> Array4<f32> {
    let overshoot = 0.02f32;
    let n = x.dim().0;
    let mut adv = x.clone();
    let mut active: Vec<usize> = (0..n).collect();
    let mut dead: Vec<usize> = Vec::new();

    for _ in 0..spec.steps {
        if active.is_empty() {
            break;
        }
        let xb = gather4(&adv, &active);
        let classes = {
            let mut logits_sum: Option<Array2<f32>> = None;
            for m in models.iter_mut() {
                let l = m.forward(&xb, Mode::EvalGrad);
                // immediately release caches of this probe pass
                let _ = m.backward(&Array2::zeros(l.dim()));
                logits_sum = Some(match logits_sum {
                    Some(acc) => acc + &l,
                    None => l,
                });
            }
            logits_sum.unwrap().mapv(|v| v / models.len() as f32)
        };
        // drop samples whose label already flipped
        let preds = argmax_rows(&classes);
        let mut still: Vec<usize> = Vec::new();
        for (k, &i) in active.iter().enumerate() {
            if preds[k] == y[i] {
                still.push(i);
            }
        }
        if still.is_empty() {
            break;
        }
        active = still;
        let xb = gather4(&adv, &active);
        let yb: Vec<u8> = active.iter().map(|&i| y[i]).collect();
        let k_classes = classes.dim().1;

        // full Jacobian row per class: one backward pass per class
        let mut logits = None;
        let mut grads: Vec<Array4<f32>> = Vec::with_capacity(k_classes);
        for class in 0..k_classes {
            let mut mean_logits: Option<Array2<f32>> = None;
            for m in models.iter_mut() {
                let l = m.forward(&xb, Mode::EvalGrad);
                mean_logits = Some(match mean_logits {
                    Some(acc) => acc + &l,
                    None => l,
                });
            }
            let mean_logits = mean_logits.unwrap().mapv(|v| v / models.len() as f32);
            let mut onehot = Array2::<f32>::zeros(mean_logits.dim());
            onehot.slice_mut(ndarray::s![.., class]).fill(1.0 / models.len() as f32);
            let mut gin: Option<Array4<f32>> = None;
            for m in models.iter_mut() {
                let g = m.backward(&onehot);
                gin = Some(match gin {
                    Some(acc) => acc + &g,
                    None => g,
                });
            }
            grads.push(gin.unwrap());
            logits = Some(mean_logits);
        }
        let logits = logits.unwrap();

        // closest-hyperplane step per sample
        let mut finished: Vec<usize> = Vec::new();
        for (k, &i) in active.iter().enumerate() {
            let y0 = yb[k] as usize;
            let mut best: Option<(f32, usize, f32)> = None; // (ratio, class, wnorm2)
            for class in 0..k_classes {
                if class == y0 {
                    continue;
                }
                let f_k = logits[(k, class)] - logits[(k, y0)];
                let mut wnorm2 = 0.0f32;
                {
                    let gk = grads[class].index_axis(Axis(0), k);
                    let g0 = grads[y0].index_axis(Axis(0), k);
                    ndarray::Zip::from(&gk).and(&g0).for_each(|&a, &b| {
                        let w = a - b;
                        wnorm2 += w * w;
                    });
                }
                let wnorm = wnorm2.sqrt();
                if wnorm < 1e-10 {
                    continue;
                }
                let ratio = f_k.abs() / wnorm;
                if best.map_or(true, |(r, _, _)| ratio < r) {
                    best = Some((ratio, class, wnorm2));
                }
            }
            match best {
                Some((_, class, wnorm2)) => {
                    let f_k = (logits[(k, class)] - logits[(k, y0)]).abs() + 1e-6;
                    let scale = (1.0 + overshoot) * f_k / wnorm2;
                    let gk = grads[class].index_axis(Axis(0), k);
                    let g0 = grads[y0].index_axis(Axis(0), k);
                    let mut ai = adv.index_axis_mut(Axis(0), i);
                    ndarray::Zip::from(&mut ai).and(&gk).and(&g0).for_each(|a, &p, &q| {
                        *a = (*a + scale * (p - q)).clamp(0.0, 1.0);
                    });
                }
                None => {
                    // zero-gradient dead end: restore and stop touching it
                    let mut ai = adv.index_axis_mut(Axis(0), i);
                    ai.assign(&x.index_axis(Axis(0), i));
                    finished.push(i);
                    dead.push(i);
                }
            }
        }
        active.retain(|i| !finished.contains(i));
    }
    report.fallbacks += dead.len();
    adv
}

fn cw_l2(
    spec: &AttackSpec,
    models: &mut [Classifier],
    x: &Array4<f32>,
    y: &[u8],
    report: &mut CraftReport,
) -> Array4<f32> {
    let c = 1.0f32; // objective trade-off
    let confidence = 0.0f32;
    let lr = 0.01f32;
    let n = x.dim().0;

    // optimize in tanh space so the box constraint is implicit
    let x_clamped = x.mapv(|v| v.clamp(1e-4, 1.0 - 1e-4));
    let mut w = x_clamped.mapv(|v| (2.0 * v - 1.0).atanh());
    let mut m1 = Array4::<f32>::zeros(x.dim());
    let mut m2 = Array4::<f32>::zeros(x.dim());
    let (beta1, beta2, eps_adam) = (0.9f32, 0.999f32, 1e-8f32);

    let mut best_adv = x.clone();
    let mut best_l2 = vec![f32::INFINITY; n];
    let mut found = vec![false; n];

    for t in 1..=spec.steps {
        let adv = w.mapv(|v| 0.5 * (v.tanh() + 1.0));
        let k = models.len() as f32;
        let mut logits_acc: Option<Array2<f32>> = None;
        for m in models.iter_mut() {
            let l = m.forward(&adv, Mode::EvalGrad);
            logits_acc = Some(match logits_acc {
                Some(acc) => acc + &l,
                None => l,
            });
        }
        let logits = logits_acc.unwrap().mapv(|v| v / k);

        // margin objective: push the true logit below the runner-up
        let mut glogits = Array2::<f32>::zeros(logits.dim());
        for i in 0..n {
            let yi = y[i] as usize;
            let mut runner = f32::NEG_INFINITY;
            let mut runner_idx = 0usize;
            for cl in 0..logits.dim().1 {
                if cl != yi && logits[(i, cl)] > runner {
                    runner = logits[(i, cl)];
                    runner_idx = cl;
                }
            }
            let margin = logits[(i, yi)] - runner + confidence;
            let adversarial = logits[(i, yi)] < runner;
            if adversarial {
                let l2: f32 = adv
                    .index_axis(Axis(0), i)
                    .iter()
                    .zip(x.index_axis(Axis(0), i).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if l2 < best_l2[i] {
                    best_l2[i] = l2;
                    best_adv.index_axis_mut(Axis(0), i).assign(&adv.index_axis(Axis(0), i));
                    found[i] = true;
                }
            }
            if margin > 0.0 {
                glogits[(i, yi)] = c;
                glogits[(i, runner_idx)] = -c;
            }
        }

        let member_g = glogits.mapv(|v| v / k);
        let mut gin: Option<Array4<f32>> = None;
        for m in models.iter_mut() {
            let g = m.backward(&member_g);
            gin = Some(match gin {
                Some(acc) => acc + &g,
                None => g,
            });
        }
        let mut g_adv = gin.unwrap();
        // distance term d/d_adv ||adv - x||^2
        g_adv += &(&adv - x).mapv(|v| 2.0 * v);
        // through the tanh reparameterization
        let g_w = &g_adv * &w.mapv(|v| 0.5 * (1.0 - v.tanh().powi(2)));

        // Adam step
        let (b1t, b2t) = (1.0 - beta1.powi(t as i32), 1.0 - beta2.powi(t as i32));
        ndarray::Zip::from(&mut w).and(&g_w).and(&mut m1).and(&mut m2).for_each(|wv, &g, m1v, m2v| {
            *m1v = beta1 * *m1v + (1.0 - beta1) * g;
            *m2v = beta2 * *m2v + (1.0 - beta2) * g * g;
            *wv -= lr * (*m1v / b1t) / ((*m2v / b2t).sqrt() + eps_adam);
        });
    }

    for i in 0..n {
        if !found[i] {
            report.fallbacks += 1;
        }
    }
    best_adv
}

fn gather4(src: &Array4<f32>, idx: &[usize]) -> Array4<f32> {
    let (_, c, h, w) = src.dim();
    let mut out = Array4::<f32>::zeros((idx.len(), c, h, w));
    for (k, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), k).assign(&src.index_axis(Axis(0), i));
    }
    out
}

/// Uniform noise whose per-sample l-infinity magnitude equals that sample's
/// actual adversarial perturbation.
pub fn add_matched_noise(
    clean: &ImageBatch,
    adversarial: &ImageBatch,
    seed: u64,
) -> Result<ImageBatch> {
    if clean.dims() != adversarial.dims() {
        return Err(Error::invalid_input("clean/adversarial shape mismatch"));
    }
    let mags = linf_per_sample(&adversarial.0, &clean.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E6F6973);
    let mut out = clean.0.clone();
    let n = clean.len();
    for i in 0..n {
        let m = mags[i];
        if m == 0.0 {
            continue;
        }
        let mut xi = out.index_axis_mut(Axis(0), i);
        xi.mapv_inplace(|v| (v + rng.random_range(-m..=m)).clamp(0.0, 1.0));
        // pin one coordinate at the exact magnitude, on the side that
        // cannot clip, so the matching contract holds after clamping
        let x0 = clean.0[(i, 0, 0, 0)];
        let pinned = if x0 <= 1.0 - m { x0 + m } else { x0 - m };
        xi[(0, 0, 0)] = pinned;
    }
    Ok(ImageBatch::new(out))
}

/// Training settings for one victim or threat classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainClassifierConfig {
    pub model: ClassifierConfig,
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Random crop + horizontal flip augmentation.
    pub augment: bool,
    /// Inner-maximization attack for AT.
    pub at_attack: AttackSpec,
    /// Clean accuracy below this marks the checkpoint unusable.
    pub accuracy_floor: f32,
    pub seed: u64,
}

impl TrainClassifierConfig {
    pub fn new(model: ClassifierConfig, strategy: Strategy) -> Self {
        let mut at_attack = AttackSpec::new(AttackFamily::PgdLinf, 8.0 / 255.0);
        at_attack.steps = 7;
        at_attack.step_size = Some(2.0 / 255.0);
        TrainClassifierConfig {
            model,
            strategy,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: true,
            at_attack,
            accuracy_floor: 0.60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierTrainReport {
    pub epoch_losses: Vec<f32>,
    pub clean_accuracy: f32,
    /// Set when clean accuracy lands under the configured floor.
    pub unusable: bool,
}

fn random_crop_flip(x: &Array4<f32>, rng: &mut ChaCha8Rng) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    let pad = 4usize;
    let mut out = Array4::<f32>::zeros(x.dim());
    for i in 0..n {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.random::<bool>();
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let sy = yy as isize + dy;
                    let sx = xx as isize + dx;
                    let v = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                        x[(i, ci, sy as usize, sx)]
                    } else {
                        0.0
                    };
                    out[(i, ci, yy, xx)] = v;
                }
            }
        }
    }
    out
}

/// Evaluate plain accuracy of one model on `[0, 1]` pixels.
pub fn accuracy(model: &Classifier, images: &ImageBatch, labels: &Labels) -> f32 {
    let mut correct = 0usize;
    let n = images.len();
    let chunk = 256usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let xb = images.0.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let preds = model.predict(&xb);
        for (k, p) in preds.iter().enumerate() {
            if *p == labels[start + k] {
                correct += 1;
            }
        }
        start = end;
    }
    correct as f32 / n as f32
}

/// Train a classifier with natural or adversarial training.
pub fn train_classifier(
    images: &ImageBatch,
    labels: &Labels,
    eval: Option<(&ImageBatch, &Labels)>,
    cfg: &TrainClassifierConfig,
) -> Result<(Classifier, ClassifierTrainReport)> {
    if images.len() != labels.len() {
        return Err(Error::invalid_input("images/labels length mismatch"));
    }
    let mut model = Classifier::new(cfg.model, cfg.seed);
    let sgd_base = SgdConfig::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xC1A55));
    let n = images.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs, 0.02);
        let sgd = SgdConfig { lr, ..sgd_base };
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut xb = gather4(&images.0, chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            if cfg.augment {
                xb = random_crop_flip(&xb, &mut rng);
            }
            if cfg.strategy == Strategy::At {
                // inner maximization against the current weights
                let batch = ImageBatch::new(xb);
                let yb_arr = Array1::from_vec(yb.clone());
                let (adv, _) =
                    craft(&cfg.at_attack, std::slice::from_mut(&mut model), &batch, &yb_arr)?;
                xb = adv.0;
            }
            model.zero_grad();
            let logits = model.forward(&xb, Mode::Train);
            let (loss, glogits) = softmax_cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "classifier epoch {epoch}: non-finite loss (lr={lr})"
                )));
            }
            model.backward(&glogits);
            sgd_step(&mut model, &sgd);
            epoch_loss += loss as f64;
            batches += 1;
        }
        epoch_losses.push((epoch_loss / batches.max(1) as f64) as f32);
        log::info!(
            "classifier[{} {}] epoch {epoch}: loss {:.4}",
            cfg.model.arch,
            cfg.strategy,
            epoch_losses[epoch]
        );
    }

    let (eval_x, eval_y) = eval.unwrap_or((images, labels));
    let clean_accuracy = accuracy(&model, eval_x, eval_y);
    let unusable = clean_accuracy < cfg.accuracy_floor;
    if unusable {
        log::warn!(
            "classifier[{} {}] clean accuracy {clean_accuracy:.3} is below the {} floor",
            cfg.model.arch,
            cfg.strategy,
            cfg.accuracy_floor
        );
    }
    Ok((model, ClassifierTrainReport { epoch_losses, clean_accuracy, unusable }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ClassifierConfig, InputNorm};
    use ndarray::Array4;

    fn tiny_model(seed: u64) -> Classifier {
        let mut cfg = ClassifierConfig::new(Architecture::ResNet18, 4, 4);
        cfg.norm = InputNorm::identity();
        let mut m = Classifier::new(cfg, seed);
        // calibrate running stats so EvalGrad behaves
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn((16, 3, 16, 16), |_| rng.random::<f32>());
        for _ in 0..30 {
            m.forward(&x, Mode::Train);
        }
        m.backward(&Array2::zeros((16, 4)));
        m
    }

    fn batch(n: usize, seed: u64) -> (ImageBatch, Labels) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn((n, 3, 16, 16), |_| rng.random::<f32>());
        let y = Array1::from_shape_fn(n, |_| rng.random_range(0u8..4));
        (ImageBatch::new(x), y)
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let mut m = tiny_model(1);
        let (x, y) = batch(6, 2);
        let spec = AttackSpec::new(AttackFamily::Fgsm, 0.0);
        let (adv, _) = craft(&spec, std::slice::from_mut(&mut m), &x, &y).unwrap();
        assert_eq!(adv.0, x.0);
    }

    #[test]
    fn linf_budget_holds_samplewise() {
        for family in [AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::PgdLinf] {
            let mut m = tiny_model(3);
            let (x, y) = batch(8, 4);
            let eps = 8.0 / 255.0;
            let mut spec = AttackSpec::new(family, eps);
            spec.steps = if family == AttackFamily::Fgsm { 1 } else { 5 };
            let (adv, _) = craft(&spec, std::slice::from_mut(&mut m), &x, &y).unwrap();
            for (i, mag) in linf_per_sample(&adv.0, &x.0).iter().enumerate() {
                assert!(*mag <= eps + 1e-6, "{family} sample {i}: {mag} > {eps}");
            }
            assert!(adv.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn pgd_l2_budget_holds() {
        let mut m = tiny_model(5);
        let (x, y) = batch(6, 6);
        let mut spec = AttackSpec::new(AttackFamily::PgdL2, 0.5);
        spec.steps = 5;
        let (adv, _) = craft(&spec, std::slice::from_mut(&mut m), &x, &y).unwrap();
        for i in 0..x.len() {
            let l2: f32 = adv
                .0
                .index_axis(Axis(0), i)
                .iter()
                .zip(x.0.index_axis(Axis(0), i).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                .sqrt();
            assert!(l2 <= 0.5 + 1e-4, "sample {i}: {l2}");
        }
    }

    #[test]
    fn one_member_ensemble_equals_single_model() {
        let (x, y) = batch(5, 8);
        let mut spec = AttackSpec::new(AttackFamily::PgdLinf, 8.0 / 255.0);
        spec.steps = 3;
        let mut m1 = tiny_model(7);
        let (a, _) = craft(&spec, std::slice::from_mut(&mut m1), &x, &y).unwrap();
        let mut ensemble = vec![tiny_model(7)];
        let (b, _) = craft(&spec, &mut ensemble, &x, &y).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn craft_is_deterministic() {
        let (x, y) = batch(5, 9);
        let spec = AttackSpec::new(AttackFamily::PgdLinf, 8.0 / 255.0);
        let mut m = tiny_model(10);
        let (a, _) = craft(&spec, std::slice::from_mut(&mut m), &x, &y).unwrap();
        let mut m2 = tiny_model(10);
        let (b, _) = craft(&spec, std::slice::from_mut(&mut m2), &x, &y).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn deepfool_and_cw_run_and_report() {
        let (x, y) = batch(4, 11);
        let mut m = tiny_model(12);
        let mut df = AttackSpec::new(AttackFamily::DeepFool, 0.0);
        df.steps = 10;
        let (adv, rep) = craft(&df, std::slice::from_mut(&mut m), &x, &y).unwrap();
        assert!(adv.0.iter().all(|v| v.is_finite()));
        assert!(rep.fallbacks <= 4);

        let mut cw = AttackSpec::new(AttackFamily::Cw, 0.0);
        cw.steps = 20;
        let (adv, rep) = craft(&cw, std::slice::from_mut(&mut m), &x, &y).unwrap();
        assert!(adv.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(rep.fallbacks <= 4);
    }

    #[test]
    fn matched_noise_contract() {
        let (x, y) = batch(6, 13);
        let _ = y;
        // zero perturbation: noise output equals clean input
        let same = add_matched_noise(&x, &x, 1).unwrap();
        assert_eq!(same.0, x.0);

        let mut m = tiny_model(14);
        let spec = AttackSpec::new(AttackFamily::Fgsm, 8.0 / 255.0);
        let (adv, _) = craft(&spec, std::slice::from_mut(&mut m), &x, &y).unwrap();
        let noisy = add_matched_noise(&x, &adv, 2).unwrap();
        let want = linf_per_sample(&adv.0, &x.0);
        let got = linf_per_sample(&noisy.0, &x.0);
        for i in 0..x.len() {
            assert!(
                (want[i] - got[i]).abs() <= 1.0 / 255.0,
                "sample {i}: want {} got {}",
                want[i],
                got[i]
            );
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = AttackSpec::new(AttackFamily::Fgsm, 0.03);
        assert!(s.validate().is_ok());
        s.steps = 3;
        assert!(s.validate().is_err());
        let mut s = AttackSpec::new(AttackFamily::PgdLinf, -0.1);
        assert!(s.validate().is_err());
        s.epsilon = 0.03;
        s.steps = 0;
        assert!(s.validate().is_err());

        assert!(ThreatModelSpec::single(Architecture::Vgg16, Strategy::Nt).validate().is_ok());
        assert!(ThreatModelSpec::ensemble(vec![Architecture::Vgg16], Strategy::Nt)
            .validate()
            .is_err());
        let mut t = ThreatModelSpec::single(Architecture::Vgg16, Strategy::Nt);
        t.architectures.push(Architecture::Wrn28);
        assert!(t.validate().is_err());
    }
}
