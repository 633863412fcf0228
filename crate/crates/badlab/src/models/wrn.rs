//! WideResNet-28: pre-activation blocks, three groups of four, widths
//! `16k/32k/64k` where `k` is the widen factor (`cfg.width / 16`ths of
//! the standard 16-channel stem, i.e. `cfg.width` IS `16 * k`).

use super::{ClassifierConfig, TapTensor};
use crate::nn::layers::{
    global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, Linear, Relu,
};
use crate::nn::{Mode, ParamMut, ParamRef, Parameters};
use ndarray::{Array1, Array2, Array4, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

struct PreactBlock {
    bn1: BatchNorm2d,
    relu1: Relu<Ix4>,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu<Ix4>,
    conv2: Conv2d,
    /// 1x1 shortcut applied to the pre-activated input when shape changes.
    down: Option<Conv2d>,
    cache_act1: Option<Array4<f32>>,
}

impl PreactBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let down = (stride != 1 || cin != cout)
            .then(|| Conv2d::new(format!("{name}.down"), cin, cout, 1, stride, 0, false, rng));
        PreactBlock {
            bn1: BatchNorm2d::new(format!("{name}.bn1"), cin),
            relu1: Relu::new(),
            conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(format!("{name}.bn2"), cout),
            relu2: Relu::new(),
            conv2: Conv2d::new(format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng),
            down,
            cache_act1: None,
        }
    }

    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let act1 = self.relu1.forward(&self.bn1.forward(x, mode));
        let main = self.conv1.forward(&act1, mode);
        let main = self.relu2.forward(&self.bn2.forward(&main, mode));
        let main = self.conv2.forward(&main, mode);
        match &mut self.down {
            Some(d) => {
                self.cache_act1 = Some(act1.clone());
                main + d.forward(&act1, mode)
            }
            None => main + x,
        }
    }

    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let act1 = self.relu1.infer(&self.bn1.infer(x));
        let main = self.conv1.infer(&act1);
        let main = self.relu2.infer(&self.bn2.infer(&main));
        let main = self.conv2.infer(&main);
        match &self.down {
            Some(d) => main + d.infer(&act1),
            None => main + x,
        }
    }

    fn backward(&mut self, g: &Array4<f32>) -> Array4<f32> {
        let g_main = self.conv2.backward(g);
        let g_main = self.bn2.backward(&self.relu2.backward(&g_main));
        let mut g_act1 = self.conv1.backward(&g_main);
        let mut g_identity: Option<Array4<f32>> = None;
        match &mut self.down {
            Some(d) => {
                self.cache_act1 = None;
                g_act1 += &d.backward(g);
            }
            None => g_identity = Some(g.clone()),
        }
        let mut gin = self.bn1.backward(&self.relu1.backward(&g_act1));
        if let Some(gi) = g_identity {
            gin += &gi;
        }
        gin
    }
}

impl Parameters for PreactBlock {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        self.bn1.visit_mut(f);
        self.conv1.visit_mut(f);
        self.bn2.visit_mut(f);
        self.conv2.visit_mut(f);
        if let Some(d) = &mut self.down {
            d.visit_mut(f);
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        self.bn1.visit(f);
        self.conv1.visit(f);
        self.bn2.visit(f);
        self.conv2.visit(f);
        if let Some(d) = &self.down {
            d.visit(f);
        }
    }
}

pub struct WideResNet {
    pub cfg: ClassifierConfig,
    stem: Conv2d,
    groups: Vec<Vec<PreactBlock>>,
    bn_final: BatchNorm2d,
    relu_final: Relu<Ix4>,
    fc: Linear,
    pool_dims: Option<(usize, usize, usize, usize)>,
}

impl WideResNet {
    pub const TAPS: [&'static str; 4] = ["group1", "group2", "group3", "pool"];

    pub fn new28(cfg: ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // widen factor k relative to the 16-channel baseline stem
        let base = cfg.width.max(1);
        let widths = [base, 2 * base, 4 * base];
        let blocks_per_group = 4; // (28 - 4) / 6
        let stem_width = (base / 4).max(8).min(16);
        let stem = Conv2d::new("stem", 3, stem_width, 3, 1, 1, false, &mut rng);
        let mut groups = Vec::new();
        let mut cin = stem_width;
        for (gi, &cout) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..blocks_per_group {
                let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(PreactBlock::new(
                    &format!("g{}.b{}", gi + 1, bi + 1),
                    cin,
                    cout,
                    stride,
                    &mut rng,
                ));
                cin = cout;
            }
            groups.push(blocks);
        }
        let bn_final = BatchNorm2d::new("bn_final", 4 * base);
        let fc = Linear::new("fc", 4 * base, cfg.classes, &mut rng);
        WideResNet { cfg, stem, groups, bn_final, relu_final: Relu::new(), fc, pool_dims: None }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        let x = self.cfg.norm.apply(x);
        let mut h = self.stem.forward(&x, mode);
        for group in &mut self.groups {
            for block in group {
                h = block.forward(&h, mode);
            }
        }
        let h = self.relu_final.forward(&self.bn_final.forward(&h, mode));
        self.pool_dims = Some(h.dim());
        self.fc.forward(&global_avg_pool(&h))
    }

    pub fn backward(&mut self, glogits: &Array2<f32>) -> Array4<f32> {
        let g = self.fc.backward(glogits);
        let dims = self.pool_dims.take().expect("WideResNet::backward without forward");
        let g = global_avg_pool_backward(&g, dims);
        let mut g = self.bn_final.backward(&self.relu_final.backward(&g));
        for group in self.groups.iter_mut().rev() {
            for block in group.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        let g = self.stem.backward(&g);
        self.cfg.norm.backward(&g)
    }

    pub fn infer_taps(&self, x: &Array4<f32>, taps: &[String]) -> (Array2<f32>, Vec<TapTensor>) {
        let x = self.cfg.norm.apply(x);
        let mut captured: HashMap<&str, TapTensor> = HashMap::new();
        let mut h = self.stem.infer(&x);
        for (gi, group) in self.groups.iter().enumerate() {
            for block in group {
                h = block.infer(&h);
            }
            let name = Self::TAPS[gi];
            if taps.iter().any(|t| t == name) {
                captured.insert(name, TapTensor::Spatial(h.clone()));
            }
        }
        let h = self.relu_final.infer(&self.bn_final.infer(&h));
        let pooled = global_avg_pool(&h);
        if taps.iter().any(|t| t == "pool") {
            captured.insert("pool", TapTensor::Vector(pooled.clone()));
        }
        let logits = self.fc.infer(&pooled);
        let acts = taps.iter().map(|t| captured.remove(t.as_str()).expect("validated tap")).collect();
        (logits, acts)
    }

    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        for group in &self.groups {
            for b in group {
                b.bn1.visit_stats(f);
                b.bn2.visit_stats(f);
            }
        }
        self.bn_final.visit_stats(f);
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        for group in &mut self.groups {
            for b in group {
                b.bn1.visit_stats_mut(f);
                b.bn2.visit_stats_mut(f);
            }
        }
        self.bn_final.visit_stats_mut(f);
    }
}

impl Parameters for WideResNet {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        self.stem.visit_mut(f);
        for group in &mut self.groups {
            for b in group {
                b.visit_mut(f);
            }
        }
        self.bn_final.visit_mut(f);
        self.fc.visit_mut(f);
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        self.stem.visit(f);
        for group in &self.groups {
            for b in group {
                b.visit(f);
            }
        }
        self.bn_final.visit(f);
        self.fc.visit(f);
    }
}
