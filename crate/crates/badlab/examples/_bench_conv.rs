// throwaway benchmark, deleted before finishing
use badlab::nn::conv::*;
use ndarray::Array4;
use std::time::Instant;

fn main() {
    for &(n, cin, cout, hw) in &[(64usize, 16usize, 16usize, 32usize), (64, 32, 32, 16), (64, 3, 16, 32), (64, 64, 64, 8)] {
        let x = Array4::<f32>::from_elem((n, cin, hw, hw), 0.3);
        let w = Array4::<f32>::from_elem((cout, cin, 3, 3), 0.01);
        let t = Instant::now();
        let iters = 20;
        for _ in 0..iters {
            let y = conv2d_fwd(&x, &w, None, 1, 1);
            std::hint::black_box(&y);
        }
        let dt = t.elapsed().as_secs_f64() / iters as f64;
        let flops = 2.0 * (n * cout * cin * 9 * hw * hw) as f64;
        println!("fwd  n={n} {cin}->{cout} {hw}x{hw}: {:.1} ms, {:.1} GFLOPS", dt * 1e3, flops / dt / 1e9);
        let g = Array4::<f32>::from_elem((n, cout, hw, hw), 0.1);
        let t = Instant::now();
        for _ in 0..iters {
            let (gw, _gb) = conv2d_bwd_weight(&x, &g, 1, 1, 3);
            std::hint::black_box(&gw);
        }
        let dt2 = t.elapsed().as_secs_f64() / iters as f64;
        println!("bwdw n={n} {cin}->{cout} {hw}x{hw}: {:.1} ms, {:.1} GFLOPS", dt2 * 1e3, flops / dt2 / 1e9);
        let t = Instant::now();
        for _ in 0..iters {
            let gi = conv2d_bwd_input(&g, &w, 1, 1, hw, hw);
            std::hint::black_box(&gi);
        }
        let dt3 = t.elapsed().as_secs_f64() / iters as f64;
        println!("bwdi n={n} {cin}->{cout} {hw}x{hw}: {:.1} ms, {:.1} GFLOPS", dt3 * 1e3, flops / dt3 / 1e9);
    }
}
