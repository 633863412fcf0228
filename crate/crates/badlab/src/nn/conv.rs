//! Convolution primitives: im2col/col2im plus the three linear maps
//! (forward, input-gradient, weight-gradient) that convolution and
//! transposed convolution are assembled from.
//!
//! Batch parallelism uses fixed-size chunks with sequential accumulation
//! inside each chunk, so results are bitwise identical regardless of
//! thread count.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, Zip};
use rayon::prelude::*;

/// Fixed chunk size for deterministic parallel reductions.
const REDUCE_CHUNK: usize = 16;

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one sample `[C, H, W]` into `[C*K*K, Ho*Wo]` columns.
fn im2col(x: &ArrayView3<'_, f32>, k: usize, stride: usize, pad: usize, cols: &mut Array2<f32>) {
    let (c, h, w) = x.dim();
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    debug_assert_eq!(cols.dim(), (c * k * k, ho * wo));
    let cols_slice = cols.as_slice_mut().expect("contiguous cols");
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for ku in 0..k {
            for kv in 0..k {
                let row = (ci * k + ku) * k + kv;
                let base = row * ho * wo;
                for p in 0..ho {
                    let iy = (p * stride + ku) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        cols_slice[base + p * wo..base + (p + 1) * wo].fill(0.0);
                        continue;
                    }
                    for q in 0..wo {
                        let ix = (q * stride + kv) as isize - pad as isize;
                        cols_slice[base + p * wo + q] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            plane[(iy as usize, ix as usize)]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `[C*K*K, Ho*Wo]` columns back into `[C, H, W]`, accumulating
/// overlapping contributions.
fn col2im(cols: &Array2<f32>, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Array3<f32> {
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(w, k, stride, pad);
    let mut out = Array3::<f32>::zeros((c, h, w));
    let cols_slice = cols.as_slice().expect("contiguous cols");
    for ci in 0..c {
        for ku in 0..k {
            for kv in 0..k {
                let row = (ci * k + ku) * k + kv;
                let base = row * ho * wo;
                for p in 0..ho {
                    let iy = (p * stride + ku) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for q in 0..wo {
                        let ix = (q * stride + kv) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[(ci, iy as usize, ix as usize)] += cols_slice[base + p * wo + q];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[n,co,p,q] = sum_{ci,u,v} x[n,ci,ps-pad+u,qs-pad+v] * w[co,ci,u,v] (+ b[co])`
pub fn conv2d_fwd(
    x: &Array4<f32>,
    w: &Array4<f32>,
    b: Option<&Array1<f32>>,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, cin, h, wd) = x.dim();
    let (cout, cin_w, k, _) = w.dim();
    assert_eq!(cin, cin_w, "conv2d_fwd channel mismatch");
    let ho = conv_out_dim(h, k, stride, pad);
    let wo = conv_out_dim(wd, k, stride, pad);
    let w2 = w.to_shape((cout, cin * k * k)).expect("contiguous weight");

    let mut out = Array4::<f32>::zeros((n, cout, ho, wo));
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(x.axis_iter(Axis(0)))
        .par_for_each(|mut on, xn| {
            let mut cols = Array2::<f32>::zeros((cin * k * k, ho * wo));
            im2col(&xn, k, stride, pad, &mut cols);
            let y = w2.dot(&cols); // [cout, ho*wo]
            let mut on2 = on.view_mut().into_shape_with_order((cout, ho * wo)).unwrap();
            on2.assign(&y);
            if let Some(b) = b {
                for co in 0..cout {
                    let bias = b[co];
                    on2.slice_mut(s![co, ..]).mapv_inplace(|v| v + bias);
                }
            }
        });
    out
}

/// Gradient of [`conv2d_fwd`] with respect to its input; also the forward
/// map of a transposed convolution.
pub fn conv2d_bwd_input(
    gout: &Array4<f32>,
    w: &Array4<f32>,
    stride: usize,
    pad: usize,
    h_in: usize,
    w_in: usize,
) -> Array4<f32> {
    let (n, cout, ho, wo) = gout.dim();
    let (cout_w, cin, k, _) = w.dim();
    assert_eq!(cout, cout_w, "conv2d_bwd_input channel mismatch");
    debug_assert_eq!(ho, conv_out_dim(h_in, k, stride, pad));
    debug_assert_eq!(wo, conv_out_dim(w_in, k, stride, pad));
    let w2 = w.to_shape((cout, cin * k * k)).expect("contiguous weight");

    let mut gin = Array4::<f32>::zeros((n, cin, h_in, w_in));
    Zip::from(gin.axis_iter_mut(Axis(0)))
        .and(gout.axis_iter(Axis(0)))
        .par_for_each(|mut gn, gon| {
            let go2 = gon.to_shape((cout, ho * wo)).expect("contiguous gout");
            let cols = w2.t().dot(&go2); // [cin*k*k, ho*wo]
            let folded = col2im(&cols, cin, h_in, w_in, k, stride, pad);
            gn.assign(&folded);
        });
    gin
}

/// Gradients of [`conv2d_fwd`] with respect to weight and bias.
pub fn conv2d_bwd_weight(
    x: &Array4<f32>,
    gout: &Array4<f32>,
    stride: usize,
    pad: usize,
    k: usize,
) -> (Array4<f32>, Array1<f32>) {
    let (n, cin, h, wd) = x.dim();
    let (n2, cout, ho, wo) = gout.dim();
    assert_eq!(n, n2);
    debug_assert_eq!(ho, conv_out_dim(h, k, stride, pad));
    debug_assert_eq!(wo, conv_out_dim(wd, k, stride, pad));

    let idx: Vec<usize> = (0..n).collect();
    let partials: Vec<(Array2<f32>, Array1<f32>)> = idx
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut gw = Array2::<f32>::zeros((cout, cin * k * k));
            let mut gb = Array1::<f32>::zeros(cout);
            let mut cols = Array2::<f32>::zeros((cin * k * k, ho * wo));
            for &i in chunk {
                im2col(&x.index_axis(Axis(0), i), k, stride, pad, &mut cols);
                let gview = gout.index_axis(Axis(0), i);
                let go2 = gview.to_shape((cout, ho * wo)).expect("contiguous gout");
                gw += &go2.dot(&cols.t());
                gb += &go2.sum_axis(Axis(1));
            }
            (gw, gb)
        })
        .collect();

    let mut gw = Array2::<f32>::zeros((cout, cin * k * k));
    let mut gb = Array1::<f32>::zeros(cout);
    for (pw, pb) in partials {
        gw += &pw;
        gb += &pb;
    }
    (gw.into_shape_with_order((cout, cin, k, k)).unwrap(), gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(shape, |_| rng.random::<f32>() - 0.5)
    }

    /// Direct 6-loop convolution, the oracle for the im2col/GEMM path.
    fn conv_naive(x: &Array4<f32>, w: &Array4<f32>, stride: usize, pad: usize) -> Array4<f32> {
        let (n, cin, h, wd) = x.dim();
        let (cout, _, k, _) = w.dim();
        let ho = conv_out_dim(h, k, stride, pad);
        let wo = conv_out_dim(wd, k, stride, pad);
        let mut out = Array4::<f32>::zeros((n, cout, ho, wo));
        for ni in 0..n {
            for co in 0..cout {
                for p in 0..ho {
                    for q in 0..wo {
                        let mut acc = 0.0f64;
                        for ci in 0..cin {
                            for u in 0..k {
                                for v in 0..k {
                                    let iy = (p * stride + u) as isize - pad as isize;
                                    let ix = (q * stride + v) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += (x[(ni, ci, iy as usize, ix as usize)]
                                            * w[(co, ci, u, v)])
                                            as f64;
                                    }
                                }
                            }
                        }
                        out[(ni, co, p, q)] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive() {
        for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0)] {
            let x = randn4((2, 3, 8, 8), 7);
            let w = randn4((4, 3, 3, 3), 8);
            let got = conv2d_fwd(&x, &w, None, stride, pad);
            let want = conv_naive(&x, &w, stride, pad);
            let diff = (&got - &want).iter().map(|v| v.abs()).fold(0.0f32, f32::max);
            assert!(diff < 1e-4, "stride={stride} pad={pad} diff={diff}");
        }
    }

    #[test]
    fn bwd_input_is_adjoint_of_forward() {
        // <conv(x), g> == <x, bwd_input(g)> for a linear map and random tensors
        let x = randn4((2, 3, 8, 8), 17);
        let w = randn4((5, 3, 3, 3), 18);
        let y = conv2d_fwd(&x, &w, None, 2, 1);
        let g = randn4(y.dim(), 19);
        let gin = conv2d_bwd_input(&g, &w, 2, 1, 8, 8);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(gin.iter()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn bwd_weight_matches_finite_difference() {
        let x = randn4((2, 2, 6, 6), 27);
        let mut w = randn4((3, 2, 3, 3), 28);
        let g = randn4((2, 3, 6, 6), 29);
        let (gw, _gb) = conv2d_bwd_weight(&x, &g, 1, 1, 3);

        let loss = |w: &Array4<f32>| -> f64 {
            conv2d_fwd(&x, w, None, 1, 1)
                .iter()
                .zip(g.iter())
                .map(|(a, b)| (a * b) as f64)
                .sum()
        };
        let eps = 1e-3f32;
        for &(co, ci, u, v) in &[(0usize, 0usize, 0usize, 0usize), (1, 1, 2, 0), (2, 0, 1, 1)] {
            let orig = w[(co, ci, u, v)];
            w[(co, ci, u, v)] = orig + eps;
            let lp = loss(&w);
            w[(co, ci, u, v)] = orig - eps;
            let lm = loss(&w);
            w[(co, ci, u, v)] = orig;
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!(
                (gw[(co, ci, u, v)] - fd).abs() < 2e-2 * fd.abs().max(1.0),
                "({co},{ci},{u},{v}): {} vs fd {fd}",
                gw[(co, ci, u, v)]
            );
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let x = randn4((33, 3, 16, 16), 37);
        let w = randn4((8, 3, 3, 3), 38);
        let a = conv2d_fwd(&x, &w, None, 1, 1);
        let b = conv2d_fwd(&x, &w, None, 1, 1);
        assert_eq!(a, b);
        let (gw1, gb1) = conv2d_bwd_weight(&x, &a, 1, 1, 3);
        let (gw2, gb2) = conv2d_bwd_weight(&x, &a, 1, 1, 3);
        assert_eq!(gw1, gw2);
        assert_eq!(gb1, gb2);
    }
}
