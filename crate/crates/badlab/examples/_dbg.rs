use badlab::models::*;
use badlab::nn::layers::BatchNorm2d;
use badlab::nn::Mode;
use ndarray::Array4;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Array4::from_shape_fn((4, 3, 6, 6), |_| rng.random::<f32>());
    // isolate: single BN warms to its input stats?
    let mut bn = BatchNorm2d::new("t", 3);
    for _ in 0..60 { bn.forward(&x, Mode::Train); }
    let yt = bn.forward(&x, Mode::Train);
    let ye = bn.infer(&x);
    let d: f32 = yt.iter().zip(ye.iter()).map(|(a,b)| (a-b).abs()).fold(0.0, f32::max);
    println!("single BN train-vs-eval maxdiff: {d}");
    println!("running_mean {:?}", bn.running_mean);

    // full model: train vs eval logits after warmup
    let x2 = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.random::<f32>());
    let mut m = Classifier::new(ClassifierConfig::new(Architecture::ResNet18, 4, 4), 13);
    for _ in 0..60 { m.forward(&x2, Mode::Train); }
    let lt = m.forward(&x2, Mode::Train);
    m.backward(&ndarray::Array2::zeros((2,4)));
    let le = m.infer(&x2);
    println!("train logits {:?}", lt.row(0));
    println!("eval  logits {:?}", le.row(0));
}
