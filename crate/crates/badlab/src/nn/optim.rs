//! SGD with momentum and decoupled-into-gradient weight decay, the
//! optimizer used for every model here.

use super::Parameters;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl SgdConfig {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        SgdConfig { lr, momentum, weight_decay }
    }
}

/// One update step: `g += wd * w; m = mu * m + g; w -= lr * m`.
pub fn sgd_step(model: &mut dyn Parameters, cfg: &SgdConfig) {
    let SgdConfig { lr, momentum, weight_decay } = *cfg;
    model.visit_mut(&mut |_, p| {
        for ((w, g), m) in p.value.iter_mut().zip(p.grad.iter()).zip(p.momentum.iter_mut()) {
            let g = g + weight_decay * *w;
            *m = momentum * *m + g;
            *w -= lr * *m;
        }
    });
}

/// Cosine decay from `base_lr` to `base_lr * floor_frac` over `total` epochs.
pub fn cosine_lr(base_lr: f32, epoch: usize, total: usize, floor_frac: f32) -> f32 {
    if total <= 1 {
        return base_lr;
    }
    let t = epoch as f32 / (total - 1) as f32;
    let floor = base_lr * floor_frac;
    floor + 0.5 * (base_lr - floor) * (1.0 + (std::f32::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::nn::Parameters;
    use rand::SeedableRng;

    #[test]
    fn sgd_descends_a_quadratic() {
        // minimize ||W||^2 by feeding grad = 2W each step
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::new("fc", 4, 4, &mut rng);
        let cfg = SgdConfig::new(0.1, 0.9, 0.0);
        let norm = |l: &Linear| l.w.v.iter().map(|v| v * v).sum::<f32>();
        let start = norm(&lin);
        for _ in 0..50 {
            lin.zero_grad();
            let g = lin.w.v.mapv(|v| 2.0 * v);
            lin.w.g.assign(&g);
            sgd_step(&mut lin, &cfg);
        }
        assert!(norm(&lin) < start * 1e-3);
    }

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(1.0, 0, 10, 0.01) - 1.0).abs() < 1e-6);
        assert!((cosine_lr(1.0, 9, 10, 0.01) - 0.01).abs() < 1e-6);
    }
}
