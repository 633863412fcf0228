//! CIFAR-style ResNet18: 3x3 stem, four stages of two basic blocks,
//! global average pooling, linear head.

use super::{ClassifierConfig, TapTensor};
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, Linear, Relu};
use crate::nn::{Mode, ParamMut, ParamRef, Parameters};
use ndarray::{Array1, Array2, Array4, Ix4};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::HashMap;

pub(crate) struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(format!("{name}.conv"), cin, cout, k, stride, pad, false, rng),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let y = self.conv.forward(x, mode);
        self.bn.forward(&y, mode)
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.bn.infer(&self.conv.infer(x))
    }

    pub fn backward(&mut self, g: &Array4<f32>) -> Array4<f32> {
        let g = self.bn.backward(g);
        self.conv.backward(&g)
    }
}

impl Parameters for ConvBn {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }
}

struct BasicBlock {
    cb1: ConvBn,
    relu1: Relu<Ix4>,
    cb2: ConvBn,
    skip: Option<ConvBn>,
    relu_out: Relu<Ix4>,
}

impl BasicBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let skip = (stride != 1 || cin != cout)
            .then(|| ConvBn::new(&format!("{name}.down"), cin, cout, 1, stride, 0, rng));
        BasicBlock {
            cb1: ConvBn::new(&format!("{name}.1"), cin, cout, 3, stride, 1, rng),
            relu1: Relu::new(),
            cb2: ConvBn::new(&format!("{name}.2"), cout, cout, 3, 1, 1, rng),
            skip,
            relu_out: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let main = self.cb1.forward(x, mode);
        let main = self.relu1.forward(&main);
        let main = self.cb2.forward(&main, mode);
        let shortcut = match &mut self.skip {
            Some(s) => s.forward(x, mode),
            None => x.clone(),
        };
        self.relu_out.forward(&(main + shortcut))
    }

    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let main = self.cb2.infer(&self.relu1.infer(&self.cb1.infer(x)));
        let shortcut = match &self.skip {
            Some(s) => s.infer(x),
            None => x.clone(),
        };
        self.relu_out.infer(&(main + shortcut))
    }

    fn backward(&mut self, g: &Array4<f32>) -> Array4<f32> {
        let g = self.relu_out.backward(g);
        let g_main = self.cb2.backward(&g);
        let g_main = self.relu1.backward(&g_main);
        let g_main = self.cb1.backward(&g_main);
        let g_skip = match &mut self.skip {
            Some(s) => s.backward(&g),
            None => g,
        };
        g_main + g_skip
    }
}

impl Parameters for BasicBlock {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        self.cb1.visit_mut(f);
        self.cb2.visit_mut(f);
        if let Some(s) = &mut self.skip {
            s.visit_mut(f);
        }
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        self.cb1.visit(f);
        self.cb2.visit(f);
        if let Some(s) = &self.skip {
            s.visit(f);
        }
    }
}

pub struct ResNet {
    pub cfg: ClassifierConfig,
    stem: ConvBn,
    stem_relu: Relu<Ix4>,
    stages: Vec<Vec<BasicBlock>>,
    fc: Linear,
    pool_dims: Option<(usize, usize, usize, usize)>,
}

impl ResNet {
    pub const TAPS: [&'static str; 5] = ["stage1", "stage2", "stage3", "stage4", "pool"];

    pub fn new18(cfg: ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.width;
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let stem = ConvBn::new("stem", 3, w, 3, 1, 1, &mut rng);
        let mut stages = Vec::new();
        let mut cin = w;
        for (si, &cout) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..2 {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    &format!("s{}.b{}", si + 1, bi + 1),
                    cin,
                    cout,
                    stride,
                    &mut rng,
                ));
                cin = cout;
            }
            stages.push(blocks);
        }
        let fc = Linear::new("fc", 8 * w, cfg.classes, &mut rng);
        ResNet { cfg, stem, stem_relu: Relu::new(), stages, fc, pool_dims: None }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        let x = self.cfg.norm.apply(x);
        let mut h = self.stem_relu.forward(&self.stem.forward(&x, mode));
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(&h, mode);
            }
        }
        self.pool_dims = Some(h.dim());
        let pooled = global_avg_pool(&h);
        self.fc.forward(&pooled)
    }

    pub fn backward(&mut self, glogits: &Array2<f32>) -> Array4<f32> {
        let g = self.fc.backward(glogits);
        let dims = self.pool_dims.take().expect("ResNet::backward without forward");
        let mut g = global_avg_pool_backward(&g, dims);
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        let g = self.stem_relu.backward(&g);
        let g = self.stem.backward(&g);
        self.cfg.norm.backward(&g)
    }

    pub fn infer_taps(&self, x: &Array4<f32>, taps: &[String]) -> (Array2<f32>, Vec<TapTensor>) {
        let x = self.cfg.norm.apply(x);
        let mut captured: HashMap<&str, TapTensor> = HashMap::new();
        let mut h = self.stem_relu.infer(&self.stem.infer(&x));
        for (si, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.infer(&h);
            }
            let name = Self::TAPS[si];
            if taps.iter().any(|t| t == name) {
                captured.insert(name, TapTensor::Spatial(h.clone()));
            }
        }
        let pooled = global_avg_pool(&h);
        if taps.iter().any(|t| t == "pool") {
            captured.insert("pool", TapTensor::Vector(pooled.clone()));
        }
        let logits = self.fc.infer(&pooled);
        let acts = taps.iter().map(|t| captured.remove(t.as_str()).expect("validated tap")).collect();
        (logits, acts)
    }

    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        self.stem.bn.visit_stats(f);
        for stage in &self.stages {
            for b in stage {
                b.cb1.bn.visit_stats(f);
                b.cb2.bn.visit_stats(f);
                if let Some(s) = &b.skip {
                    s.bn.visit_stats(f);
                }
            }
        }
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        self.stem.bn.visit_stats_mut(f);
        for stage in &mut self.stages {
            for b in stage {
                b.cb1.bn.visit_stats_mut(f);
                b.cb2.bn.visit_stats_mut(f);
                if let Some(s) = &mut b.skip {
                    s.bn.visit_stats_mut(f);
                }
            }
        }
    }
}

impl Parameters for ResNet {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        self.stem.visit_mut(f);
        for stage in &mut self.stages {
            for b in stage {
                b.visit_mut(f);
            }
        }
        self.fc.visit_mut(f);
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        self.stem.visit(f);
        for stage in &self.stages {
            for b in stage {
                b.visit(f);
            }
        }
        self.fc.visit(f);
    }
}
