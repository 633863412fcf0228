//! Layers with explicit forward/backward passes and cached activations.
//!
//! `forward` with [`Mode`] keeps whatever the matching `backward` needs;
//! `infer` is the pure shared-reference path for concurrent scoring.

use super::conv::{conv2d_bwd_input, conv2d_bwd_weight, conv2d_fwd};
use super::init;
use super::{Mode, Param, ParamMut, ParamRef, Parameters};
use ndarray::{Array1, Array2, Array4, Axis, Dimension, Ix1, Ix2, Ix4};
use rand_chacha::ChaCha8Rng;

pub struct Conv2d {
    pub w: Param<Ix4>,
    pub b: Option<Param<Ix1>>,
    pub stride: usize,
    pub pad: usize,
    name: String,
    cache: Option<Array4<f32>>,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        Conv2d {
            w: Param::new(init::kaiming_normal((cout, cin, k, k), fan_in, rng)),
            b: bias.then(|| Param::new(init::uniform_fan(cout, fan_in, rng))),
            stride,
            pad,
            name: name.into(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, _mode: Mode) -> Array4<f32> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        conv2d_fwd(x, &self.w.v, self.b.as_ref().map(|b| &b.v), self.stride, self.pad)
    }

    pub fn backward(&mut self, gout: &Array4<f32>) -> Array4<f32> {
        let x = self.cache.take().expect("Conv2d::backward without forward");
        let (_, _, h, w) = x.dim();
        let k = self.w.v.dim().2;
        let (gw, gb) = conv2d_bwd_weight(&x, gout, self.stride, self.pad, k);
        self.w.g += &gw;
        if let Some(b) = &mut self.b {
            b.g += &gb;
        }
        conv2d_bwd_input(gout, &self.w.v, self.stride, self.pad, h, w)
    }
}

impl Parameters for Conv2d {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_mut());
        if let Some(b) = &mut self.b {
            f(&format!("{}.b", self.name), b.as_mut());
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_ref());
        if let Some(b) = &self.b {
            f(&format!("{}.b", self.name), b.as_ref());
        }
    }
}

/// Transposed convolution with weight layout `[Cin, Cout, K, K]`.
/// Output spatial size is `(H - 1) * stride - 2 * pad + K`.
pub struct ConvTranspose2d {
    pub w: Param<Ix4>,
    pub b: Option<Param<Ix1>>,
    pub stride: usize,
    pub pad: usize,
    name: String,
    cache: Option<Array4<f32>>,
}

impl ConvTranspose2d {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        ConvTranspose2d {
            w: Param::new(init::kaiming_normal((cin, cout, k, k), fan_in, rng)),
            b: bias.then(|| Param::new(init::uniform_fan(cout, fan_in, rng))),
            stride,
            pad,
            name: name.into(),
            cache: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.v.dim().2;
        (
            (h - 1) * self.stride + k - 2 * self.pad,
            (w - 1) * self.stride + k - 2 * self.pad,
        )
    }

    pub fn forward(&mut self, x: &Array4<f32>, _mode: Mode) -> Array4<f32> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let (_, _, h, w) = x.dim();
        let (ho, wo) = self.out_spatial(h, w);
        // a transposed conv IS the input-gradient map of a conv
        let mut y = conv2d_bwd_input(x, &self.w.v, self.stride, self.pad, ho, wo);
        if let Some(b) = &self.b {
            for (mut plane, &bias) in y.axis_iter_mut(Axis(1)).zip(b.v.iter()) {
                plane.mapv_inplace(|v| v + bias);
            }
        }
        y
    }

    pub fn backward(&mut self, gout: &Array4<f32>) -> Array4<f32> {
        let x = self.cache.take().expect("ConvTranspose2d::backward without forward");
        let k = self.w.v.dim().2;
        // weight grad: gout plays the conv-input role, x the conv-output role
        let (gw, _) = conv2d_bwd_weight(gout, &x, self.stride, self.pad, k);
        self.w.g += &gw;
        if let Some(b) = &mut self.b {
            b.g += &gout.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1));
        }
        conv2d_fwd(gout, &self.w.v, None, self.stride, self.pad)
    }
}

impl Parameters for ConvTranspose2d {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_mut());
        if let Some(b) = &mut self.b {
            f(&format!("{}.b", self.name), b.as_mut());
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_ref());
        if let Some(b) = &self.b {
            f(&format!("{}.b", self.name), b.as_ref());
        }
    }
}

struct BnCache {
    xhat: Array4<f32>,
    inv_std: Array1<f32>,
    train_mode: bool,
}

pub struct BatchNorm2d {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub eps: f32,
    pub momentum: f32,
    name: String,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
            name: name.into(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let (mean, var) = if mode.is_train() {
            let mut mean = Array1::<f32>::zeros(c);
            let mut var = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let plane = x.index_axis(Axis(1), ci);
                let mu: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / m;
                let v2: f64 = plane.iter().map(|&v| (v as f64 - mu) * (v as f64 - mu)).sum::<f64>() / m;
                mean[ci] = mu as f32;
                var[ci] = v2 as f32;
            }
            // torch-style running update with the unbiased variance
            let unbias = (m / (m - 1.0).max(1.0)) as f32;
            self.running_mean = &self.running_mean * (1.0 - self.momentum) + &(&mean * self.momentum);
            self.running_var =
                &self.running_var * (1.0 - self.momentum) + &(&var * (self.momentum * unbias));
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        for ci in 0..c {
            let (mu, is) = (mean[ci], inv_std[ci]);
            xhat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let (ga, be) = (self.gamma.v[ci], self.beta.v[ci]);
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| ga * v + be);
        }
        self.cache = Some(BnCache { xhat, inv_std, train_mode: mode.is_train() });
        y
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let c = x.dim().1;
        let mut y = x.clone();
        for ci in 0..c {
            let inv = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let (mu, ga, be) = (self.running_mean[ci], self.gamma.v[ci], self.beta.v[ci]);
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * inv * ga + be);
        }
        y
    }

    pub fn backward(&mut self, gout: &Array4<f32>) -> Array4<f32> {
        let BnCache { xhat, inv_std, train_mode } =
            self.cache.take().expect("BatchNorm2d::backward without forward");
        let (n, c, h, w) = gout.dim();
        let m = (n * h * w) as f32;

        let mut gin = gout.clone();
        for ci in 0..c {
            let g_c = gout.index_axis(Axis(1), ci);
            let xh_c = xhat.index_axis(Axis(1), ci);
            let sum_g: f64 = g_c.iter().map(|&v| v as f64).sum();
            let sum_gx: f64 = g_c.iter().zip(xh_c.iter()).map(|(&a, &b)| (a * b) as f64).sum();
            self.gamma.g[ci] += sum_gx as f32;
            self.beta.g[ci] += sum_g as f32;

            let scale = self.gamma.v[ci] * inv_std[ci];
            if train_mode {
                let (mg, mgx) = (sum_g as f32 / m, sum_gx as f32 / m);
                let mut gi = gin.index_axis_mut(Axis(1), ci);
                ndarray::Zip::from(&mut gi).and(&xh_c).for_each(|gi, &xh| {
                    *gi = scale * (*gi - mg - xh * mgx);
                });
            } else {
                gin.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * scale);
            }
        }
        gin
    }
}

impl Parameters for BatchNorm2d {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        f(&format!("{}.gamma", self.name), self.gamma.as_mut());
        f(&format!("{}.beta", self.name), self.beta.as_mut());
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        f(&format!("{}.gamma", self.name), self.gamma.as_ref());
        f(&format!("{}.beta", self.name), self.beta.as_ref());
    }
}

impl BatchNorm2d {
    /// Running statistics are state, not parameters; checkpoints persist
    /// them separately from the optimizer-visible tensors.
    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
    }
}

#[derive(Default)]
pub struct Relu<D: Dimension> {
    mask: Option<ndarray::Array<bool, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        self.mask = Some(x.mapv(|v| v > 0.0));
        x.mapv(|v| v.max(0.0))
    }

    pub fn infer(&self, x: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, gout: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        let mask = self.mask.take().expect("Relu::backward without forward");
        let mut g = gout.clone();
        ndarray::Zip::from(&mut g).and(&mask).for_each(|g, &m| {
            if !m {
                *g = 0.0;
            }
        });
        g
    }
}

/// 2x2 max pooling with stride 2.
#[derive(Default)]
pub struct MaxPool2 {
    cache: Option<(Array4<u8>, (usize, usize, usize, usize))>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { cache: None }
    }

    fn pool(x: &Array4<f32>) -> (Array4<f32>, Array4<u8>) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Array4::<f32>::zeros((n, c, ho, wo));
        let mut arg = Array4::<u8>::zeros((n, c, ho, wo));
        for ni in 0..n {
            for ci in 0..c {
                for p in 0..ho {
                    for q in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut code = 0u8;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[(ni, ci, 2 * p + dy, 2 * q + dx)];
                                if v > best {
                                    best = v;
                                    code = (dy * 2 + dx) as u8;
                                }
                            }
                        }
                        out[(ni, ci, p, q)] = best;
                        arg[(ni, ci, p, q)] = code;
                    }
                }
            }
        }
        (out, arg)
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (out, arg) = Self::pool(x);
        self.cache = Some((arg, x.dim()));
        out
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        Self::pool(x).0
    }

    pub fn backward(&mut self, gout: &Array4<f32>) -> Array4<f32> {
        let (arg, dims) = self.cache.take().expect("MaxPool2::backward without forward");
        let (n, c, ho, wo) = gout.dim();
        let mut gin = Array4::<f32>::zeros(dims);
        for ni in 0..n {
            for ci in 0..c {
                for p in 0..ho {
                    for q in 0..wo {
                        let code = arg[(ni, ci, p, q)] as usize;
                        let (dy, dx) = (code / 2, code % 2);
                        gin[(ni, ci, 2 * p + dy, 2 * q + dx)] += gout[(ni, ci, p, q)];
                    }
                }
            }
        }
        gin
    }
}

/// Global average pooling `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f32;
    let mut out = Array2::<f32>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            out[(ni, ci)] = x
                .index_axis(Axis(0), ni)
                .index_axis(Axis(0), ci)
                .iter()
                .sum::<f32>()
                * scale;
        }
    }
    out
}

pub fn global_avg_pool_backward(gout: &Array2<f32>, dims: (usize, usize, usize, usize)) -> Array4<f32> {
    let (n, c, h, w) = dims;
    let scale = 1.0 / (h * w) as f32;
    let mut gin = Array4::<f32>::zeros(dims);
    for ni in 0..n {
        for ci in 0..c {
            let v = gout[(ni, ci)] * scale;
            gin.index_axis_mut(Axis(0), ni).index_axis_mut(Axis(0), ci).fill(v);
        }
    }
    gin
}

pub struct Linear {
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    name: String,
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(name: impl Into<String>, fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::new(init::kaiming_normal((fout, fin), fin, rng)),
            b: Param::new(init::uniform_fan(fout, fin, rng)),
            name: name.into(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.w.v.t());
        y += &self.b.v;
        y
    }

    pub fn backward(&mut self, gout: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.take().expect("Linear::backward without forward");
        self.w.g += &gout.t().dot(&x);
        self.b.g += &gout.sum_axis(Axis(0));
        gout.dot(&self.w.v)
    }
}

impl Parameters for Linear {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_mut());
        f(&format!("{}.b", self.name), self.b.as_mut());
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        f(&format!("{}.w", self.name), self.w.as_ref());
        f(&format!("{}.b", self.name), self.b.as_ref());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut r = rng(seed);
        Array4::from_shape_fn(shape, |_| r.random::<f32>() - 0.5)
    }

    /// Scalar loss L = <y, g> lets finite differences check any layer.
    fn fd_check_input<F>(mut f: F, x: &Array4<f32>, gin: &Array4<f32>, probes: &[(usize, usize, usize, usize)])
    where
        F: FnMut(&Array4<f32>) -> f64,
    {
        let eps = 1e-3f32;
        let mut xp = x.clone();
        for &idx in probes {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = f(&xp);
            xp[idx] = orig - eps;
            let lm = f(&xp);
            xp[idx] = orig;
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!(
                (gin[idx] - fd).abs() < 3e-2 * fd.abs().max(1.0),
                "{idx:?}: analytic {} vs fd {fd}",
                gin[idx]
            );
        }
    }

    #[test]
    fn conv_transpose_shape_and_grad() {
        let mut r = rng(3);
        let mut ct = ConvTranspose2d::new("ct", 4, 2, 4, 2, 1, true, &mut r);
        let x = randn4((2, 4, 8, 8), 4);
        let y = ct.forward(&x, Mode::Train);
        assert_eq!(y.dim(), (2, 2, 16, 16));

        let g = randn4(y.dim(), 5);
        let gin = ct.backward(&g);
        let loss = |xx: &Array4<f32>| -> f64 {
            ct.infer(xx).iter().zip(g.iter()).map(|(a, b)| (a * b) as f64).sum()
        };
        fd_check_input(loss, &x, &gin, &[(0, 0, 0, 0), (1, 3, 7, 7), (0, 2, 4, 5)]);
    }

    #[test]
    fn conv_transpose_weight_grad_fd() {
        let mut r = rng(13);
        let mut ct = ConvTranspose2d::new("ct", 2, 3, 4, 2, 1, false, &mut r);
        let x = randn4((1, 2, 4, 4), 14);
        let y = ct.forward(&x, Mode::Train);
        let g = randn4(y.dim(), 15);
        ct.zero_grad();
        ct.backward(&g);

        let eps = 1e-3f32;
        for &idx in &[(0usize, 0usize, 0usize, 0usize), (1, 2, 3, 3), (0, 1, 2, 1)] {
            let orig = ct.w.v[idx];
            ct.w.v[idx] = orig + eps;
            // refresh cache before each probe
            let lp: f64 = {
                ct.forward(&x, Mode::Train);
                ct.infer(&x).iter().zip(g.iter()).map(|(a, b)| (a * b) as f64).sum()
            };
            ct.w.v[idx] = orig - eps;
            let lm: f64 = {
                ct.forward(&x, Mode::Train);
                ct.infer(&x).iter().zip(g.iter()).map(|(a, b)| (a * b) as f64).sum()
            };
            ct.w.v[idx] = orig;
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!(
                (ct.w.g[idx] - fd).abs() < 3e-2 * fd.abs().max(1.0),
                "w{idx:?}: {} vs {fd}",
                ct.w.g[idx]
            );
        }
    }

    #[test]
    fn batchnorm_train_backward_matches_fd() {
        let mut bn = BatchNorm2d::new("bn", 3);
        let x = randn4((4, 3, 5, 5), 21);
        let g = randn4((4, 3, 5, 5), 22);
        let _ = bn.forward(&x, Mode::Train);
        let gin = bn.backward(&g);

        // finite differences re-run the whole normalization (stats shift too)
        let loss = |xx: &Array4<f32>| -> f64 {
            let mut bn2 = BatchNorm2d::new("bn", 3);
            bn2.gamma.v.assign(&bn.gamma.v);
            bn2.beta.v.assign(&bn.beta.v);
            bn2.forward(xx, Mode::Train)
                .iter()
                .zip(g.iter())
                .map(|(a, b)| (a * b) as f64)
                .sum()
        };
        fd_check_input(loss, &x, &gin, &[(0, 0, 0, 0), (3, 2, 4, 4), (1, 1, 2, 3)]);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = randn4((8, 2, 4, 4), 31);
        for _ in 0..10 {
            bn.forward(&x, Mode::Train);
        }
        let y1 = bn.infer(&x);
        let y2 = bn.forward(&x, Mode::EvalGrad);
        assert_eq!(y1, y2);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut mp = MaxPool2::new();
        let mut x = Array4::<f32>::zeros((1, 1, 4, 4));
        x[(0, 0, 0, 1)] = 5.0;
        x[(0, 0, 3, 2)] = 7.0;
        let y = mp.forward(&x);
        assert_eq!(y[(0, 0, 0, 0)], 5.0);
        assert_eq!(y[(0, 0, 1, 1)], 7.0);
        let mut g = Array4::<f32>::zeros((1, 1, 2, 2));
        g[(0, 0, 0, 0)] = 1.0;
        g[(0, 0, 1, 1)] = 2.0;
        let gin = mp.backward(&g);
        assert_eq!(gin[(0, 0, 0, 1)], 1.0);
        assert_eq!(gin[(0, 0, 3, 2)], 2.0);
        assert_eq!(gin.sum(), 3.0);
    }

    #[test]
    fn linear_grads_match_fd() {
        let mut r = rng(41);
        let mut lin = Linear::new("fc", 6, 4, &mut r);
        let x = {
            let mut rr = rng(42);
            Array2::from_shape_fn((3, 6), |_| rr.random::<f32>() - 0.5)
        };
        let g = {
            let mut rr = rng(43);
            Array2::from_shape_fn((3, 4), |_| rr.random::<f32>() - 0.5)
        };
        let _ = lin.forward(&x);
        lin.zero_grad();
        let gin = lin.backward(&g);

        let eps = 1e-3f32;
        let loss = |l: &Linear, xx: &Array2<f32>| -> f64 {
            l.infer(xx).iter().zip(g.iter()).map(|(a, b)| (a * b) as f64).sum()
        };
        // input grad
        let mut xp = x.clone();
        for &idx in &[(0usize, 0usize), (2, 5)] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = loss(&lin, &xp);
            xp[idx] = orig - eps;
            let lm = loss(&lin, &xp);
            xp[idx] = orig;
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!((gin[idx] - fd).abs() < 1e-2 * fd.abs().max(1.0));
        }
        // weight grad
        for &idx in &[(0usize, 0usize), (3, 5)] {
            let orig = lin.w.v[idx];
            lin.w.v[idx] = orig + eps;
            let lp = loss(&lin, &x);
            lin.w.v[idx] = orig - eps;
            let lm = loss(&lin, &x);
            lin.w.v[idx] = orig;
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!((lin.w.g[idx] - fd).abs() < 1e-2 * fd.abs().max(1.0));
        }
    }
}
