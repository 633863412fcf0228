//! PixelVAE and FreqVAE: variational autoencoders over raw pixels or one
//! DFT component (amplitude or phase), trained on normal examples only.
//!
//! Whatever the target, the reconstruction term of the loss is a
//! pixel-domain MSE: frequency targets are recomposed with the original
//! complementary component and inverse-transformed before comparison, and
//! the gradient flows back through the inverse DFT.

use crate::ckpt::Container;
use crate::error::{Error, Result};
use crate::freq::{
    dft_decompose, idft_grad_amplitude, idft_grad_phase, idft_recompose, SpectrumPair,
};
use crate::nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Relu};
use crate::nn::loss::{kl_standard_normal, mse};
use crate::nn::optim::{sgd_step, SgdConfig};
use crate::nn::{Mode, ParamMut, ParamRef, Parameters};
use crate::tensor::{ImageBatch, ReconVariant};
use ndarray::{Array1, Array2, Array4, Axis, Ix2, Ix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which representation one VAE reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VaeTarget {
    Pixel,
    Amplitude,
    Phase,
}

impl std::fmt::Display for VaeTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VaeTarget::Pixel => f.write_str("pixel"),
            VaeTarget::Amplitude => f.write_str("amplitude"),
            VaeTarget::Phase => f.write_str("phase"),
        }
    }
}

impl std::str::FromStr for VaeTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(VaeTarget::Pixel),
            "amplitude" | "amp" => Ok(VaeTarget::Amplitude),
            "phase" | "pha" => Ok(VaeTarget::Phase),
            other => Err(Error::invalid_config(format!("unknown VAE target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeConfig {
    pub target: VaeTarget,
    pub latent_dim: usize,
    /// KL weight.
    pub beta: f32,
    pub epochs: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Encoder widths are `w, 2w, 4w, 8w`.
    pub base_width: usize,
    pub batch_size: usize,
    pub batchnorm: bool,
    pub seed: u64,
    /// `(C, H, W)` of the training target; checkpoints are coupled to this
    /// shape, never to a dataset identity.
    pub in_shape: (usize, usize, usize),
}

impl VaeConfig {
    pub fn new(target: VaeTarget) -> Self {
        VaeConfig {
            target,
            latent_dim: 128,
            beta: 1.0,
            epochs: 50,
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            base_width: 32,
            batch_size: 128,
            batchnorm: true,
            seed: 0,
            in_shape: (3, 32, 32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid_config("latent_dim must be positive"));
        }
        if self.beta < 0.0 {
            return Err(Error::invalid_config("beta must be non-negative"));
        }
        if self.in_shape.1 % 16 != 0 || self.in_shape.2 % 16 != 0 {
            return Err(Error::invalid_config("spatial dims must be divisible by 16"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid_config("batch_size must be at least 2"));
        }
        Ok(())
    }
}

struct EncBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    relu: Relu<Ix4>,
}

struct DecBlock {
    convt: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    relu: Option<Relu<Ix4>>,
}

/// Encoder/decoder pair for one reconstruction target.
pub struct Vae {
    pub config: VaeConfig,
    enc: Vec<EncBlock>,
    fc_mu: Linear,
    fc_logvar: Linear,
    fc_dec: Linear,
    dec: Vec<DecBlock>,
    // caches for backward
    flat_dims: Option<(usize, usize, usize, usize)>,
    dec_relu_in: Option<Relu<Ix2>>,
    sample_cache: Option<(Array2<f32>, Array2<f32>)>, // (eps, std)
}

impl Vae {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (cin, h, w) = config.in_shape;
        let wd = config.base_width;
        let widths = [wd, 2 * wd, 4 * wd, 8 * wd];

        let mut enc = Vec::new();
        let mut c_prev = cin;
        for (i, &c) in widths.iter().enumerate() {
            enc.push(EncBlock {
                conv: Conv2d::new(format!("enc{i}.conv"), c_prev, c, 3, 2, 1, !config.batchnorm, &mut rng),
                bn: config.batchnorm.then(|| BatchNorm2d::new(format!("enc{i}.bn"), c)),
                relu: Relu::new(),
            });
            c_prev = c;
        }
        let (hb, wb) = (h / 16, w / 16);
        let flat = 8 * wd * hb * wb;
        let fc_mu = Linear::new("fc_mu", flat, config.latent_dim, &mut rng);
        let fc_logvar = Linear::new("fc_logvar", flat, config.latent_dim, &mut rng);
        let fc_dec = Linear::new("fc_dec", config.latent_dim, flat, &mut rng);

        let mut dec = Vec::new();
        let dec_widths = [4 * wd, 2 * wd, wd];
        let mut c_prev = 8 * wd;
        for (i, &c) in dec_widths.iter().enumerate() {
            dec.push(DecBlock {
                convt: ConvTranspose2d::new(format!("dec{i}.convt"), c_prev, c, 4, 2, 1, !config.batchnorm, &mut rng),
                bn: config.batchnorm.then(|| BatchNorm2d::new(format!("dec{i}.bn"), c)),
                relu: Some(Relu::new()),
            });
            c_prev = c;
        }
        dec.push(DecBlock {
            convt: ConvTranspose2d::new("dec3.convt", c_prev, cin, 4, 2, 1, true, &mut rng),
            bn: None,
            relu: None,
        });

        Ok(Vae {
            config,
            enc,
            fc_mu,
            fc_logvar,
            fc_dec,
            dec,
            flat_dims: None,
            dec_relu_in: None,
            sample_cache: None,
        })
    }

    fn encode_mut(&mut self, x: &Array4<f32>, mode: Mode) -> (Array2<f32>, Array2<f32>) {
        let mut h = x.clone();
        for b in &mut self.enc {
            h = b.conv.forward(&h, mode);
            if let Some(bn) = &mut b.bn {
                h = bn.forward(&h, mode);
            }
            h = b.relu.forward(&h);
        }
        let dims = h.dim();
        self.flat_dims = Some(dims);
        let flat = h.to_shape((dims.0, dims.1 * dims.2 * dims.3)).unwrap().to_owned();
        let mu = self.fc_mu.forward(&flat);
        let logvar = self.fc_logvar.forward(&flat).mapv(|v| v.clamp(-10.0, 10.0));
        (mu, logvar)
    }

    /// Posterior mean and log-variance, pure path.
    pub fn encode(&self, x: &Array4<f32>) -> (Array2<f32>, Array2<f32>) {
        let mut h = x.clone();
        for b in &self.enc {
            h = b.conv.infer(&h);
            if let Some(bn) = &b.bn {
                h = bn.infer(&h);
            }
            h = b.relu.infer(&h);
        }
        let dims = h.dim();
        let flat = h.to_shape((dims.0, dims.1 * dims.2 * dims.3)).unwrap().to_owned();
        (self.fc_mu.infer(&flat), self.fc_logvar.infer(&flat).mapv(|v| v.clamp(-10.0, 10.0)))
    }

    fn decode_mut(&mut self, z: &Array2<f32>, mode: Mode) -> Array4<f32> {
        let flat = self.fc_dec.forward(z);
        let mut relu_in = Relu::new();
        let flat = relu_in.forward(&flat);
        self.dec_relu_in = Some(relu_in);
        let (_, h, w) = self.config.in_shape;
        let wd = self.config.base_width;
        let n = z.dim().0;
        let mut t = flat.to_shape((n, 8 * wd, h / 16, w / 16)).unwrap().to_owned();
        for b in &mut self.dec {
            t = b.convt.forward(&t, mode);
            if let Some(bn) = &mut b.bn {
                t = bn.forward(&t, mode);
            }
            if let Some(relu) = &mut b.relu {
                t = relu.forward(&t);
            }
        }
        t
    }

    /// Decode latent codes, pure path.
    pub fn decode(&self, z: &Array2<f32>) -> Array4<f32> {
        let flat = self.fc_dec.infer(z).mapv(|v| v.max(0.0));
        let (_, h, w) = self.config.in_shape;
        let wd = self.config.base_width;
        let n = z.dim().0;
        let mut t = flat.to_shape((n, 8 * wd, h / 16, w / 16)).unwrap().to_owned();
        for b in &self.dec {
            t = b.convt.infer(&t);
            if let Some(bn) = &b.bn {
                t = bn.infer(&t);
            }
            if let Some(relu) = &b.relu {
                t = relu.infer(&t);
            }
        }
        t
    }

    /// Training forward: sample `z = mu + eps * exp(logvar / 2)`.
    fn forward_train(
        &mut self,
        x: &Array4<f32>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f32>, Array2<f32>, Array4<f32>) {
        let (mu, logvar) = self.encode_mut(x, Mode::Train);
        let std = logvar.mapv(|v| (0.5 * v).exp());
        let eps = Array2::from_shape_simple_fn(mu.dim(), || {
            // Box-Muller keeps the sample count per element fixed, which
            // keeps training byte-reproducible across rng versions
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random::<f64>();
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
        });
        let z = &mu + &(&eps * &std);
        let y = self.decode_mut(&z, Mode::Train);
        self.sample_cache = Some((eps, std));
        (mu, logvar, y)
    }

    /// Backward from decoder-output gradient plus direct mu/logvar terms.
    fn backward(&mut self, gy: &Array4<f32>, gmu_extra: &Array2<f32>, glogvar_extra: &Array2<f32>) {
        let mut g = gy.clone();
        for b in self.dec.iter_mut().rev() {
            if let Some(relu) = &mut b.relu {
                g = relu.backward(&g);
            }
            if let Some(bn) = &mut b.bn {
                g = bn.backward(&g);
            }
            g = b.convt.backward(&g);
        }
        let dims = g.dim();
        let flat_g = g.to_shape((dims.0, dims.1 * dims.2 * dims.3)).unwrap().to_owned();
        let mut relu_in = self.dec_relu_in.take().expect("backward without forward");
        let flat_g = relu_in.backward(&flat_g);
        let gz = self.fc_dec.backward(&flat_g);

        let (eps, std) = self.sample_cache.take().expect("backward without forward");
        let gmu = &gz + gmu_extra;
        let glogvar = &(&gz * &(&eps * &std)) * 0.5 + glogvar_extra;

        let g_flat_mu = self.fc_mu.backward(&gmu);
        let g_flat_lv = self.fc_logvar.backward(&glogvar);
        let g_flat = &g_flat_mu + &g_flat_lv;
        let dims = self.flat_dims.take().expect("backward without forward");
        let mut g = g_flat.to_shape(dims).unwrap().to_owned();
        for b in self.enc.iter_mut().rev() {
            g = b.relu.backward(&g);
            if let Some(bn) = &mut b.bn {
                g = bn.backward(&g);
            }
            g = b.conv.backward(&g);
        }
    }

    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        for b in &self.enc {
            if let Some(bn) = &b.bn {
                bn.visit_stats(f);
            }
        }
        for b in &self.dec {
            if let Some(bn) = &b.bn {
                bn.visit_stats(f);
            }
        }
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        for b in &mut self.enc {
            if let Some(bn) = &mut b.bn {
                bn.visit_stats_mut(f);
            }
        }
        for b in &mut self.dec {
            if let Some(bn) = &mut b.bn {
                bn.visit_stats_mut(f);
            }
        }
    }

    pub const KIND: &'static str = "vae";

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({"config": self.config, "extra": extra});
        let mut c = Container::new(Self::KIND, meta);
        self.visit(&mut |name, p| c.push_f32(name, p.shape.clone(), p.value.to_vec()));
        self.visit_stats(&mut |name, arr| {
            c.push_f32(format!("stats.{name}"), vec![arr.len()], arr.to_vec())
        });
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<(Vae, serde_json::Value)> {
        let c = Container::load(path)?;
        c.expect_kind(Self::KIND)?;
        let cfg: VaeConfig = serde_json::from_value(c.meta["config"].clone())?;
        let mut vae = Vae::new(cfg)?;
        let mut missing: Vec<String> = Vec::new();
        let mut shape_err: Option<Error> = None;
        vae.visit_mut(&mut |name, p| match c.f32_shaped(name, &p.shape) {
            Ok(data) => p.value.copy_from_slice(data),
            Err(Error::Mismatch(m)) => shape_err = Some(Error::Mismatch(m)),
            Err(_) => missing.push(name.to_string()),
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        vae.visit_stats_mut(&mut |name, arr| {
            match c.f32_shaped(&format!("stats.{name}"), &[arr.len()]) {
                Ok(data) => arr.as_slice_mut().unwrap().copy_from_slice(data),
                Err(_) => missing.push(name.to_string()),
            }
        });
        if !missing.is_empty() {
            return Err(Error::Format(format!("VAE checkpoint missing tensors: {missing:?}")));
        }
        Ok((vae, c.meta["extra"].clone()))
    }
}

impl Parameters for Vae {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        for b in &mut self.enc {
            b.conv.visit_mut(f);
            if let Some(bn) = &mut b.bn {
                bn.visit_mut(f);
            }
        }
        self.fc_mu.visit_mut(f);
        self.fc_logvar.visit_mut(f);
        self.fc_dec.visit_mut(f);
        for b in &mut self.dec {
            b.convt.visit_mut(f);
            if let Some(bn) = &mut b.bn {
                bn.visit_mut(f);
            }
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        for b in &self.enc {
            b.conv.visit(f);
            if let Some(bn) = &b.bn {
                bn.visit(f);
            }
        }
        self.fc_mu.visit(f);
        self.fc_logvar.visit(f);
        self.fc_dec.visit(f);
        for b in &self.dec {
            b.convt.visit(f);
            if let Some(bn) = &b.bn {
                bn.visit(f);
            }
        }
    }
}

/// Decoder-output link per target: pixel squashes through a sigmoid,
/// amplitude decodes a log-scaled value through `expm1(softplus(y))` so it
/// stays positive, phase is raw.
fn apply_link(target: VaeTarget, y: &Array4<f32>) -> Array4<f32> {
    match target {
        VaeTarget::Pixel => y.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        VaeTarget::Amplitude => y.mapv(|v| softplus(v).exp_m1()),
        VaeTarget::Phase => y.clone(),
    }
}

/// d(link)/dy for the chain rule.
fn link_grad(target: VaeTarget, y: &Array4<f32>) -> Array4<f32> {
    match target {
        VaeTarget::Pixel => y.mapv(|v| {
            let s = 1.0 / (1.0 + (-v).exp());
            s * (1.0 - s)
        }),
        VaeTarget::Amplitude => y.mapv(|v| softplus(v).exp() * sigmoid(v)),
        VaeTarget::Phase => Array4::ones(y.dim()),
    }
}

fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        (1.0 + v.exp()).ln()
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Encoder input per target: pixel and phase are raw, amplitude is
/// log-scaled to tame its dynamic range.
fn encoder_input(target: VaeTarget, images: &ImageBatch, spec: Option<&SpectrumPair>) -> Array4<f32> {
    match target {
        VaeTarget::Pixel => images.0.clone(),
        VaeTarget::Amplitude => spec.expect("spectrum required").amplitude.mapv(f32::ln_1p),
        VaeTarget::Phase => spec.expect("spectrum required").phase.clone(),
    }
}

/// The training objective: pixel-domain MSE plus `beta` times the
/// closed-form KL to the standard-normal prior, both batch-averaged.
#[derive(Debug, Clone, Copy)]
pub struct VaeLossParts {
    pub total: f32,
    pub mse: f32,
    pub kl: f32,
}

pub fn vae_loss(
    reconstruction_pixel: &ImageBatch,
    original_pixel: &ImageBatch,
    mu: &Array2<f32>,
    logvar: &Array2<f32>,
    beta: f32,
) -> Result<VaeLossParts> {
    if reconstruction_pixel.dims() != original_pixel.dims() {
        return Err(Error::invalid_input("reconstruction/original shape mismatch"));
    }
    if mu.dim() != logvar.dim() {
        return Err(Error::invalid_input("mu/logvar shape mismatch"));
    }
    let (m, _) = mse(&reconstruction_pixel.0, &original_pixel.0);
    let (kl, _, _) = kl_standard_normal(mu, logvar);
    let total = m + beta * kl;
    if !total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss: mse={m}, kl={kl}, beta={beta}")));
    }
    Ok(VaeLossParts { total, mse: m, kl })
}

/// Per-epoch mean losses from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTrainReport {
    pub epoch_losses: Vec<f32>,
    pub final_mse: f32,
    pub final_kl: f32,
}

/// Train one VAE on normal examples. `checkpoint` persists the model and
/// config on success (and the last stable epoch on divergence).
pub fn train_vae(
    images: &ImageBatch,
    config: &VaeConfig,
    checkpoint: Option<&Path>,
) -> Result<(Vae, VaeTrainReport)> {
    config.validate()?;
    let (n, c, h, w) = images.dims();
    if (c, h, w) != config.in_shape {
        return Err(Error::invalid_input(format!(
            "images {:?} do not match configured shape {:?}",
            (c, h, w),
            config.in_shape
        )));
    }
    if n < config.batch_size {
        return Err(Error::invalid_input("dataset smaller than one batch"));
    }

    let needs_spec = config.target != VaeTarget::Pixel;
    let spec = if needs_spec { Some(dft_decompose(images)?) } else { None };
    let enc_in = encoder_input(config.target, images, spec.as_ref());

    let mut vae = Vae::new(config.clone())?;
    let sgd = SgdConfig::new(config.learning_rate, config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7261696e));

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut last_stable: Option<Vec<f32>> = None;
    let mut final_parts = (0.0f32, 0.0f32);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let xb = gather(&enc_in, chunk);
            let pixels = gather(&images.0, chunk);

            vae.zero_grad();
            let (mu, logvar, y) = vae.forward_train(&xb, &mut rng);

            // reconstruction in the pixel domain, whatever the target
            let (loss_mse, gy) = match config.target {
                VaeTarget::Pixel => {
                    let recon = apply_link(VaeTarget::Pixel, &y);
                    let (l, g_pix) = mse(&recon, &pixels);
                    (l, &g_pix * &link_grad(VaeTarget::Pixel, &y))
                }
                VaeTarget::Amplitude => {
                    let spec = spec.as_ref().unwrap();
                    let amp_r = apply_link(VaeTarget::Amplitude, &y);
                    let phase_o = gather(&spec.phase, chunk);
                    let recon = idft_recompose(&amp_r, &phase_o, false)?;
                    let (l, g_pix) = mse(&recon.0, &pixels);
                    let g_amp = idft_grad_amplitude(&g_pix, &phase_o);
                    (l, &g_amp * &link_grad(VaeTarget::Amplitude, &y))
                }
                VaeTarget::Phase => {
                    let spec = spec.as_ref().unwrap();
                    let amp_o = gather(&spec.amplitude, chunk);
                    let recon = idft_recompose(&amp_o, &y, false)?;
                    let (l, g_pix) = mse(&recon.0, &pixels);
                    (l, idft_grad_phase(&g_pix, &amp_o, &y))
                }
            };

            let (kl, gmu, glv) = kl_standard_normal(&mu, &logvar);
            let loss = loss_mse + config.beta * kl;
            if !loss.is_finite() {
                if let (Some(stable), Some(path)) = (&last_stable, checkpoint) {
                    let mut idx = 0;
                    vae.visit_mut(&mut |_, p| {
                        p.value.copy_from_slice(&stable[idx..idx + p.value.len()]);
                        idx += p.value.len();
                    });
                    let _ = vae.save(path, serde_json::json!({"diverged_at_epoch": epoch}));
                }
                return Err(Error::Diverged(format!(
                    "epoch {epoch}: loss non-finite (mse={loss_mse}, kl={kl}, lr={})",
                    config.learning_rate
                )));
            }
            epoch_loss += loss as f64;
            batches += 1;
            final_parts = (loss_mse, kl);

            let gmu = gmu.mapv(|v| v * config.beta);
            let glv = glv.mapv(|v| v * config.beta);
            vae.backward(&gy, &gmu, &glv);
            sgd_step(&mut vae, &sgd);
        }
        epoch_losses.push((epoch_loss / batches.max(1) as f64) as f32);
        log::info!("vae[{}] epoch {epoch}: loss {:.5}", config.target, epoch_losses[epoch]);

        let mut flat = Vec::with_capacity(vae.param_count());
        vae.visit(&mut |_, p| flat.extend_from_slice(p.value));
        last_stable = Some(flat);
    }

    let report =
        VaeTrainReport { epoch_losses, final_mse: final_parts.0, final_kl: final_parts.1 };
    if let Some(path) = checkpoint {
        vae.save(path, serde_json::json!({"report": report}))?;
    }
    Ok((vae, report))
}

fn gather(src: &Array4<f32>, idx: &[usize]) -> Array4<f32> {
    let (_, c, h, w) = src.dim();
    let mut out = Array4::<f32>::zeros((idx.len(), c, h, w));
    for (k, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), k).assign(&src.index_axis(Axis(0), i));
    }
    out
}

/// The trained models needed by [`reconstruct`].
#[derive(Default)]
pub struct VaeSet {
    pub pixel: Option<Vae>,
    pub amplitude: Option<Vae>,
    pub phase: Option<Vae>,
}

impl VaeSet {
    fn expect(&self, target: VaeTarget) -> Result<&Vae> {
        let slot = match target {
            VaeTarget::Pixel => &self.pixel,
            VaeTarget::Amplitude => &self.amplitude,
            VaeTarget::Phase => &self.phase,
        };
        slot.as_ref().ok_or_else(|| {
            Error::invalid_config(format!("variant requires the {target} VAE, which is not loaded"))
        })
    }
}

/// Reconstruct a batch with the requested variant. Inference uses the
/// posterior mean, so identical inputs give identical outputs.
pub fn reconstruct(models: &VaeSet, images: &ImageBatch, variant: ReconVariant) -> Result<ImageBatch> {
    // validate model availability before any compute
    match variant {
        ReconVariant::Pixel => {
            let vae = models.expect(VaeTarget::Pixel)?;
            let (mu, _) = vae.encode(&images.0);
            let y = vae.decode(&mu);
            Ok(ImageBatch::new(apply_link(VaeTarget::Pixel, &y)))
        }
        ReconVariant::Amp => {
            let vae = models.expect(VaeTarget::Amplitude)?;
            let spec = dft_decompose(images)?;
            let amp_r = decode_component(vae, &spec);
            idft_recompose(&amp_r, &spec.phase, false)
        }
        ReconVariant::Pha => {
            let vae = models.expect(VaeTarget::Phase)?;
            let spec = dft_decompose(images)?;
            let pha_r = decode_component(vae, &spec);
            idft_recompose(&spec.amplitude, &pha_r, false)
        }
        ReconVariant::Joint => {
            let amp_vae = models.expect(VaeTarget::Amplitude)?;
            let pha_vae = models.expect(VaeTarget::Phase)?;
            let spec = dft_decompose(images)?;
            let amp_r = decode_component(amp_vae, &spec);
            let pha_r = decode_component(pha_vae, &spec);
            idft_recompose(&amp_r, &pha_r, false)
        }
    }
}

/// Encode-decode one spectrum component with the matching VAE.
fn decode_component(vae: &Vae, spec: &SpectrumPair) -> Array4<f32> {
    let x_in = match vae.config.target {
        VaeTarget::Amplitude => spec.amplitude.mapv(f32::ln_1p),
        VaeTarget::Phase => spec.phase.clone(),
        VaeTarget::Pixel => unreachable!("pixel VAE has no spectrum component"),
    };
    let (mu, _) = vae.encode(&x_in);
    let y = vae.decode(&mu);
    apply_link(vae.config.target, &y)
}
