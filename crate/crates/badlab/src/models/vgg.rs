//! CIFAR-style VGG16 with batch normalization: five conv blocks, each
//! followed by 2x2 max pooling down to 1x1, then a linear head.

use super::resnet::ConvBn;
use super::{ClassifierConfig, TapTensor};
use crate::nn::layers::{Linear, MaxPool2, Relu};
use crate::nn::{Mode, ParamMut, ParamRef, Parameters};
use ndarray::{Array1, Array2, Array4, Ix4};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::HashMap;

struct VggBlock {
    convs: Vec<(ConvBn, Relu<Ix4>)>,
    pool: MaxPool2,
}

pub struct Vgg {
    pub cfg: ClassifierConfig,
    blocks: Vec<VggBlock>,
    fc: Linear,
    flat_dims: Option<(usize, usize, usize, usize)>,
}

impl Vgg {
    pub const TAPS: [&'static str; 6] = ["block1", "block2", "block3", "block4", "block5", "pool"];

    pub fn new16(cfg: ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.width;
        // conv counts and widths of the 13-conv VGG16 layout
        let plan: [(usize, usize); 5] = [(2, w), (2, 2 * w), (3, 4 * w), (3, 8 * w), (3, 8 * w)];
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (bi, &(count, cout)) in plan.iter().enumerate() {
            let mut convs = Vec::new();
            for ci in 0..count {
                convs.push((
                    ConvBn::new(&format!("b{}.c{}", bi + 1, ci + 1), cin, cout, 3, 1, 1, &mut rng),
                    Relu::new(),
                ));
                cin = cout;
            }
            blocks.push(VggBlock { convs, pool: MaxPool2::new() });
        }
        let fc = Linear::new("fc", 8 * w, cfg.classes, &mut rng);
        Vgg { cfg, blocks, fc, flat_dims: None }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        let mut h = self.cfg.norm.apply(x);
        for block in &mut self.blocks {
            for (cb, relu) in &mut block.convs {
                h = relu.forward(&cb.forward(&h, mode));
            }
            h = block.pool.forward(&h);
        }
        // 32x32 input exits the fifth pool at 1x1
        let dims = h.dim();
        self.flat_dims = Some(dims);
        let flat = h.to_shape((dims.0, dims.1 * dims.2 * dims.3)).unwrap().to_owned();
        self.fc.forward(&flat)
    }

    pub fn backward(&mut self, glogits: &Array2<f32>) -> Array4<f32> {
        let g = self.fc.backward(glogits);
        let dims = self.flat_dims.take().expect("Vgg::backward without forward");
        let mut g = g.to_shape(dims).unwrap().to_owned();
        for block in self.blocks.iter_mut().rev() {
            g = block.pool.backward(&g);
            for (cb, relu) in block.convs.iter_mut().rev() {
                g = cb.backward(&relu.backward(&g));
            }
        }
        self.cfg.norm.backward(&g)
    }

    pub fn infer_taps(&self, x: &Array4<f32>, taps: &[String]) -> (Array2<f32>, Vec<TapTensor>) {
        let mut h = self.cfg.norm.apply(x);
        let mut captured: HashMap<&str, TapTensor> = HashMap::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (cb, relu) in &block.convs {
                h = relu.infer(&cb.infer(&h));
            }
            h = block.pool.infer(&h);
            let name = Self::TAPS[bi];
            if taps.iter().any(|t| t == name) {
                captured.insert(name, TapTensor::Spatial(h.clone()));
            }
        }
        let dims = h.dim();
        let flat = h.to_shape((dims.0, dims.1 * dims.2 * dims.3)).unwrap().to_owned();
        if taps.iter().any(|t| t == "pool") {
            captured.insert("pool", TapTensor::Vector(flat.clone()));
        }
        let logits = self.fc.infer(&flat);
        let acts = taps.iter().map(|t| captured.remove(t.as_str()).expect("validated tap")).collect();
        (logits, acts)
    }

    pub fn visit_stats(&self, f: &mut dyn FnMut(&str, &Array1<f32>)) {
        for block in &self.blocks {
            for (cb, _) in &block.convs {
                cb.bn.visit_stats(f);
            }
        }
    }

    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array1<f32>)) {
        for block in &mut self.blocks {
            for (cb, _) in &mut block.convs {
                cb.bn.visit_stats_mut(f);
            }
        }
    }
}

impl Parameters for Vgg {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamMut<'_>)) {
        for block in &mut self.blocks {
            for (cb, _) in &mut block.convs {
                cb.visit_mut(f);
            }
        }
        self.fc.visit_mut(f);
    }
    fn visit(&self, f: &mut dyn FnMut(&str, ParamRef<'_>)) {
        for block in &self.blocks {
            for (cb, _) in &block.convs {
                cb.visit(f);
            }
        }
        self.fc.visit(f);
    }
}
