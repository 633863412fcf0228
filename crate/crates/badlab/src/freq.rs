//! Conversion between pixel and frequency domains, spectrum recomposition
//! variants, and patch-level substitution in either domain.
//!
//! Transforms are applied per channel with no frequency centering: spectra
//! stay in natural DFT order, so spectral patch indices refer to that order.
//! The forward transform is unnormalized; the inverse carries the whole
//! `1/(H*W)` factor, which puts `c*H*W` at the DC bin of a constant-`c` image.

use crate::error::{Error, Result};
use crate::tensor::{ImageBatch, ReconVariant};
use ndarray::{Array4, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Imaginary residue above this level on a supposedly real-origin spectrum
/// gets a warning (mixed spectra legitimately produce residue).
pub const IMAG_RESIDUE_WARN: f64 = 1e-3;

/// Per-channel amplitude and phase of an image batch.
///
/// Amplitude is non-negative everywhere; phase lies in `(-pi, pi]`.
#[derive(Debug, Clone)]
pub struct SpectrumPair {
    pub amplitude: Array4<f32>,
    pub phase: Array4<f32>,
}

impl SpectrumPair {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.amplitude.dim()
    }
}

/// Which component a spectral patch substitution touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchDomain {
    /// Additive application of the donor perturbation patch in pixel space.
    Pixel,
    /// Replace the patch of the amplitude spectrum, keep the base phase.
    Amplitude,
    /// Replace the patch of the phase spectrum, keep the base amplitude.
    Phase,
}

impl std::fmt::Display for PatchDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PatchDomain::Pixel => f.write_str("pixel"),
            PatchDomain::Amplitude => f.write_str("amplitude"),
            PatchDomain::Phase => f.write_str("phase"),
        }
    }
}

fn fft_2d(buf: &mut [Complex<f64>], h: usize, w: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut transposed = vec![Complex::default(); buf.len()];
    for r in 0..h {
        for c in 0..w {
            transposed[c * h + r] = buf[r * w + c];
        }
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    for col in transposed.chunks_exact_mut(h) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    for c in 0..w {
        for r in 0..h {
            buf[r * w + c] = transposed[c * h + r];
        }
    }
}

/// Decompose a batch into per-channel amplitude and phase spectra.
///
/// Amplitude is `sqrt(re^2 + im^2)`; phase is the full-quadrant two-argument
/// arctangent mapped onto `(-pi, pi]`.
pub fn dft_decompose(images: &ImageBatch) -> Result<SpectrumPair> {
    let (n, c, h, w) = images.dims();
    if c < 1 {
        return Err(Error::invalid_input("image batch needs at least one channel"));
    }
    if !images.0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid_input("dft_decompose: non-finite input"));
    }

    let mut amplitude = Array4::<f32>::zeros((n, c, h, w));
    let mut phase = Array4::<f32>::zeros((n, c, h, w));

    let amp_rows: Vec<_> = amplitude.axis_iter_mut(Axis(0)).collect();
    let pha_rows: Vec<_> = phase.axis_iter_mut(Axis(0)).collect();
    images
        .0
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(amp_rows)
        .zip(pha_rows)
        .for_each(|((img, mut amp), mut pha)| {
            let mut planner = FftPlanner::new();
            let mut buf = vec![Complex::default(); h * w];
            for ch in 0..c {
                for (dst, src) in buf.iter_mut().zip(img.index_axis(Axis(0), ch).iter()) {
                    *dst = Complex::new(*src as f64, 0.0);
                }
                fft_2d(&mut buf, h, w, &mut planner, false);
                for (i, v) in buf.iter().enumerate() {
                    let (r, cc) = (i / w, i % w);
                    amp[(ch, r, cc)] = v.norm() as f32;
                    let mut p = v.im.atan2(v.re);
                    if p <= -std::f64::consts::PI {
                        p = std::f64::consts::PI;
                    }
                    pha[(ch, r, cc)] = p as f32;
                }
            }
        });

    Ok(SpectrumPair { amplitude, phase })
}

/// Rebuild pixel images from `A * exp(i*P)` via the inverse transform.
///
/// The imaginary residue is discarded; when it exceeds
/// [`IMAG_RESIDUE_WARN`] a warning is logged (mixed spectra do this, a
/// spectrum of one real image should not). Clamping to `[0, 1]` is opt-in:
/// feature extraction wants the raw reconstruction, display and attack
/// inputs want valid pixels.
pub fn idft_recompose(amplitude: &Array4<f32>, phase: &Array4<f32>, clamp: bool) -> Result<ImageBatch> {
    let (images, residue) = idft_recompose_with_residue(amplitude, phase, clamp)?;
    if residue > IMAG_RESIDUE_WARN {
        log::warn!("idft_recompose: imaginary residue {residue:.3e} above {IMAG_RESIDUE_WARN:.0e}");
    }
    Ok(images)
}

/// Same as [`idft_recompose`] but also returns the max-abs imaginary residue.
pub fn idft_recompose_with_residue(
    amplitude: &Array4<f32>,
    phase: &Array4<f32>,
    clamp: bool,
) -> Result<(ImageBatch, f64)> {
    if amplitude.dim() != phase.dim() {
        return Err(Error::invalid_input(format!(
            "amplitude {:?} and phase {:?} shapes differ",
            amplitude.dim(),
            phase.dim()
        )));
    }
    if amplitude.iter().any(|&a| a < 0.0) {
        return Err(Error::invalid_input("amplitude must be non-negative"));
    }
    let (n, c, h, w) = amplitude.dim();
    let mut out = Array4::<f32>::zeros((n, c, h, w));

    let residues: Vec<f64> = out
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut dst)| {
            let mut planner = FftPlanner::new();
            let mut buf = vec![Complex::default(); h * w];
            let amp = amplitude.index_axis(Axis(0), i);
            let pha = phase.index_axis(Axis(0), i);
            let norm = 1.0 / (h * w) as f64;
            let mut residue = 0.0f64;
            for ch in 0..c {
                for r in 0..h {
                    for cc in 0..w {
                        let a = amp[(ch, r, cc)] as f64;
                        let p = pha[(ch, r, cc)] as f64;
                        buf[r * w + cc] = Complex::from_polar(a, p);
                    }
                }
                fft_2d(&mut buf, h, w, &mut planner, true);
                for r in 0..h {
                    for cc in 0..w {
                        let v = buf[r * w + cc] * norm;
                        residue = residue.max(v.im.abs());
                        let px = v.re as f32;
                        dst[(ch, r, cc)] = if clamp { px.clamp(0.0, 1.0) } else { px };
                    }
                }
            }
            residue
        })
        .collect();

    let residue = residues.into_iter().fold(0.0, f64::max);
    Ok((ImageBatch::new(out), residue))
}

/// Mix original and reconstructed spectra and return the pixel-domain image.
///
/// `pha` keeps the original amplitude, `amp` keeps the original phase,
/// `joint` takes both components from the reconstruction.
pub fn recompose_variant(
    original: &SpectrumPair,
    reconstructed: &SpectrumPair,
    variant: ReconVariant,
    clamp: bool,
) -> Result<ImageBatch> {
    if original.dims() != reconstructed.dims() {
        return Err(Error::invalid_input("spectrum shapes differ"));
    }
    match variant {
        ReconVariant::Pha => idft_recompose(&original.amplitude, &reconstructed.phase, clamp),
        ReconVariant::Amp => idft_recompose(&reconstructed.amplitude, &original.phase, clamp),
        ReconVariant::Joint => idft_recompose(&reconstructed.amplitude, &reconstructed.phase, clamp),
        ReconVariant::Pixel => Err(Error::invalid_config(
            "recompose_variant needs a spectrum-mixing variant (pha/amp/joint)",
        )),
    }
}

/// Unnormalized forward DFT of a real batch, returned as interleaved
/// (re, im) planes. Internal helper for the recomposition gradients.
fn forward_dft_complex(x: &Array4<f32>) -> (Array4<f64>, Array4<f64>) {
    let (n, c, h, w) = x.dim();
    let mut re = Array4::<f64>::zeros((n, c, h, w));
    let mut im = Array4::<f64>::zeros((n, c, h, w));
    let re_rows: Vec<_> = re.axis_iter_mut(Axis(0)).collect();
    let im_rows: Vec<_> = im.axis_iter_mut(Axis(0)).collect();
    x.axis_iter(Axis(0))
        .into_par_iter()
        .zip(re_rows)
        .zip(im_rows)
        .for_each(|((img, mut re_n), mut im_n)| {
            let mut planner = FftPlanner::new();
            let mut buf = vec![Complex::default(); h * w];
            for ch in 0..c {
                for (dst, src) in buf.iter_mut().zip(img.index_axis(Axis(0), ch).iter()) {
                    *dst = Complex::new(*src as f64, 0.0);
                }
                fft_2d(&mut buf, h, w, &mut planner, false);
                for (i, v) in buf.iter().enumerate() {
                    re_n[(ch, i / w, i % w)] = v.re;
                    im_n[(ch, i / w, i % w)] = v.im;
                }
            }
        });
    (re, im)
}

/// Gradient of `Re(IDFT(A * exp(iP)))` with respect to the amplitude, given
/// the gradient of a scalar loss with respect to the recomposed pixels.
///
/// With `G = DFT(grad_pixel)` (unnormalized forward), the chain rule gives
/// `dL/dA = (cos(P) * Re(G) + sin(P) * Im(G)) / (H*W)`.
pub fn idft_grad_amplitude(grad_pixel: &Array4<f32>, phase: &Array4<f32>) -> Array4<f32> {
    let (_, _, h, w) = grad_pixel.dim();
    let m = (h * w) as f64;
    let (gre, gim) = forward_dft_complex(grad_pixel);
    let mut out = Array4::<f32>::zeros(grad_pixel.dim());
    ndarray::Zip::from(&mut out)
        .and(phase)
        .and(&gre)
        .and(&gim)
        .for_each(|o, &p, &re, &im| {
            let p = p as f64;
            *o = ((p.cos() * re + p.sin() * im) / m) as f32;
        });
    out
}

/// Gradient of `Re(IDFT(A * exp(iP)))` with respect to the phase:
/// `dL/dP = A * (cos(P) * Im(G) - sin(P) * Re(G)) / (H*W)`.
pub fn idft_grad_phase(
    grad_pixel: &Array4<f32>,
    amplitude: &Array4<f32>,
    phase: &Array4<f32>,
) -> Array4<f32> {
    let (_, _, h, w) = grad_pixel.dim();
    let m = (h * w) as f64;
    let (gre, gim) = forward_dft_complex(grad_pixel);
    let mut out = Array4::<f32>::zeros(grad_pixel.dim());
    ndarray::Zip::from(&mut out)
        .and(amplitude)
        .and(phase)
        .and(&gre)
        .and(&gim)
        .for_each(|o, &a, &p, &re, &im| {
            let p = p as f64;
            *o = (a as f64 * (p.cos() * im - p.sin() * re) / m) as f32;
        });
    out
}

fn patch_bounds(
    h: usize,
    w: usize,
    patch_index: usize,
    grid: (usize, usize),
) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || h % rows != 0 || w % cols != 0 {
        return Err(Error::invalid_input(format!(
            "grid {rows}x{cols} does not tile {h}x{w} evenly"
        )));
    }
    if patch_index >= rows * cols {
        return Err(Error::invalid_input(format!(
            "patch index {patch_index} out of range for {rows}x{cols} grid"
        )));
    }
    let (ph, pw) = (h / rows, w / cols);
    let (r, c) = (patch_index / cols, patch_index % cols);
    Ok((r * ph..(r + 1) * ph, c * pw..(c + 1) * pw))
}

/// Substitute the `patch_index`-th patch of `base` with material from `donor`.
///
/// Pixel mode treats `donor` as a perturbation and *adds* its patch onto the
/// base image. Amplitude/phase modes decompose both batches, replace the
/// spectral patch of the named component, and inverse-transform with the
/// base's other component untouched.
pub fn patch_substitute(
    base: &ImageBatch,
    donor: &ImageBatch,
    patch_index: usize,
    domain: PatchDomain,
    grid: (usize, usize),
) -> Result<ImageBatch> {
    if base.dims() != donor.dims() {
        return Err(Error::invalid_input("base and donor shapes differ"));
    }
    let (_, _, h, w) = base.dims();
    let (rr, cr) = patch_bounds(h, w, patch_index, grid)?;

    match domain {
        PatchDomain::Pixel => {
            let mut out = base.0.clone();
            let mut region = out.slice_mut(ndarray::s![.., .., rr.clone(), cr.clone()]);
            region += &donor.0.slice(ndarray::s![.., .., rr, cr]);
            Ok(ImageBatch::new(out))
        }
        PatchDomain::Amplitude => {
            let base_spec = dft_decompose(base)?;
            let donor_spec = dft_decompose(donor)?;
            let mut amp = base_spec.amplitude;
            amp.slice_mut(ndarray::s![.., .., rr.clone(), cr.clone()])
                .assign(&donor_spec.amplitude.slice(ndarray::s![.., .., rr, cr]));
            idft_recompose(&amp, &base_spec.phase, false)
        }
        PatchDomain::Phase => {
            let base_spec = dft_decompose(base)?;
            let donor_spec = dft_decompose(donor)?;
            let mut pha = base_spec.phase;
            pha.slice_mut(ndarray::s![.., .., rr.clone(), cr.clone()])
                .assign(&donor_spec.phase.slice(ndarray::s![.., .., rr, cr]));
            idft_recompose(&base_spec.amplitude, &pha, false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;
    use ndarray::Array4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// O(N^2)-per-bin double-loop DFT, the independent oracle for the FFT path.
    fn brute_force_dft(img: &ndarray::ArrayView2<'_, f32>) -> Vec<Complex<f64>> {
        let (h, w) = img.dim();
        let mut out = vec![Complex::default(); h * w];
        for k in 0..h {
            for l in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for m in 0..h {
                    for n in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (k as f64 * m as f64 / h as f64 + l as f64 * n as f64 / w as f64);
                        acc += Complex::from_polar(img[(m, n)] as f64, ang);
                    }
                }
                out[k * w + l] = acc;
            }
        }
        out
    }

    /// Matching double-loop inverse used for the mixed-spectrum oracle.
    fn brute_force_idft(spec: &[Complex<f64>], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for m in 0..h {
            for n in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for k in 0..h {
                    for l in 0..w {
                        let ang = 2.0 * std::f64::consts::PI
                            * (k as f64 * m as f64 / h as f64 + l as f64 * n as f64 / w as f64);
                        acc += spec[k * w + l] * Complex::from_polar(1.0, ang);
                    }
                }
                out[m * w + n] = acc.re / (h * w) as f64;
            }
        }
        out
    }

    fn random_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBatch::new(Array4::from_shape_fn((n, c, h, w), |_| rng.random::<f32>()))
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.37f32;
        let batch = ImageBatch::new(Array4::from_elem((1, 1, 4, 4), c));
        let spec = dft_decompose(&batch).unwrap();
        assert!((spec.amplitude[(0, 0, 0, 0)] - c * 16.0).abs() < 1e-4);
        assert_eq!(spec.phase[(0, 0, 0, 0)], 0.0);
        for r in 0..4 {
            for cc in 0..4 {
                if (r, cc) != (0, 0) {
                    assert!(spec.amplitude[(0, 0, r, cc)].abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn forward_matches_double_loop_oracle() {
        let batch = random_batch(1, 1, 4, 4, 11);
        let spec = dft_decompose(&batch).unwrap();
        let oracle = brute_force_dft(&batch.0.index_axis(Axis(0), 0).index_axis(Axis(0), 0));
        for (i, v) in oracle.iter().enumerate() {
            let (r, cc) = (i / 4, i % 4);
            assert!(
                (spec.amplitude[(0, 0, r, cc)] as f64 - v.norm()).abs() < 1e-5,
                "amplitude bin ({r},{cc})"
            );
            // compare as complex values: phase alone is +-pi ambiguous at
            // the self-conjugate bins where the spectrum is (near) real
            let got = Complex::from_polar(
                spec.amplitude[(0, 0, r, cc)] as f64,
                spec.phase[(0, 0, r, cc)] as f64,
            );
            assert!((got - v).norm() < 1e-5, "complex bin ({r},{cc}): {got} vs {v}");
        }
    }

    #[test]
    fn round_trip_identity() {
        let batch = random_batch(3, 3, 8, 6, 5);
        let spec = dft_decompose(&batch).unwrap();
        let (back, residue) = idft_recompose_with_residue(&spec.amplitude, &spec.phase, false).unwrap();
        assert!(max_abs_diff(&back.0, &batch.0) < 1e-4);
        assert!(residue < 1e-3);
    }

    #[test]
    fn zero_amplitude_gives_zero_image() {
        let amp = Array4::<f32>::zeros((1, 1, 4, 4));
        let pha = Array4::from_elem((1, 1, 4, 4), 1.2f32);
        let img = idft_recompose(&amp, &pha, false).unwrap();
        assert!(img.0.iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn mixed_spectra_match_inverse_oracle() {
        let a = random_batch(1, 1, 4, 4, 21);
        let b = random_batch(1, 1, 4, 4, 22);
        let sa = dft_decompose(&a).unwrap();
        let sb = dft_decompose(&b).unwrap();
        let mixed = idft_recompose(&sa.amplitude, &sb.phase, false).unwrap();

        let mut spec = vec![Complex::default(); 16];
        for r in 0..4 {
            for c in 0..4 {
                spec[r * 4 + c] = Complex::from_polar(
                    sa.amplitude[(0, 0, r, c)] as f64,
                    sb.phase[(0, 0, r, c)] as f64,
                );
            }
        }
        let oracle = brute_force_idft(&spec, 4, 4);
        for r in 0..4 {
            for c in 0..4 {
                assert!((mixed.0[(0, 0, r, c)] as f64 - oracle[r * 4 + c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut data = Array4::<f32>::zeros((1, 1, 4, 4));
        data[(0, 0, 1, 1)] = f32::NAN;
        assert!(dft_decompose(&ImageBatch::new(data)).is_err());
    }

    #[test]
    fn recompose_variant_definitions() {
        let a = random_batch(2, 3, 8, 8, 31);
        let b = random_batch(2, 3, 8, 8, 32);
        let sa = dft_decompose(&a).unwrap();
        let sb = dft_decompose(&b).unwrap();

        // joint with reconstructed == original returns the original
        let joint = recompose_variant(&sa, &sa, ReconVariant::Joint, false).unwrap();
        assert!(max_abs_diff(&joint.0, &a.0) < 1e-4);

        // amp with identical amplitudes returns the original
        let mut same_amp = sb.clone();
        same_amp.amplitude = sa.amplitude.clone();
        let amp = recompose_variant(&sa, &same_amp, ReconVariant::Amp, false).unwrap();
        assert!(max_abs_diff(&amp.0, &a.0) < 1e-4);

        // pha is definitionally idft(A_original, P_reconstructed)
        let pha = recompose_variant(&sa, &sb, ReconVariant::Pha, false).unwrap();
        let direct = idft_recompose(&sa.amplitude, &sb.phase, false).unwrap();
        assert_eq!(pha.0, direct.0);

        assert!(recompose_variant(&sa, &sb, ReconVariant::Pixel, false).is_err());
    }

    #[test]
    fn pixel_patch_add_zero_is_identity() {
        let base = random_batch(2, 3, 8, 8, 41);
        let zeros = ImageBatch::new(Array4::zeros((2, 3, 8, 8)));
        let out = patch_substitute(&base, &zeros, 2, PatchDomain::Pixel, (2, 2)).unwrap();
        assert_eq!(out.0, base.0);
    }

    #[test]
    fn amplitude_self_substitution_recovers_base() {
        let base = random_batch(1, 3, 8, 8, 42);
        let out = patch_substitute(&base, &base, 1, PatchDomain::Amplitude, (2, 2)).unwrap();
        assert!(max_abs_diff(&out.0, &base.0) < 1e-4);
    }

    #[test]
    fn phase_patch_matches_manual_assembly() {
        let base = random_batch(1, 1, 8, 8, 43);
        let donor = random_batch(1, 1, 8, 8, 44);
        let out = patch_substitute(&base, &donor, 3, PatchDomain::Phase, (2, 2)).unwrap();

        // index-by-index assembly of the hybrid spectrum
        let sb = dft_decompose(&base).unwrap();
        let sd = dft_decompose(&donor).unwrap();
        let mut pha = sb.phase.clone();
        for r in 4..8 {
            for c in 4..8 {
                pha[(0, 0, r, c)] = sd.phase[(0, 0, r, c)];
            }
        }
        let oracle = idft_recompose(&sb.amplitude, &pha, false).unwrap();
        assert!(max_abs_diff(&out.0, &oracle.0) < 1e-5);
    }

    #[test]
    fn bad_grid_and_index_rejected() {
        let base = random_batch(1, 1, 8, 8, 45);
        assert!(patch_substitute(&base, &base, 0, PatchDomain::Pixel, (3, 2)).is_err());
        assert!(patch_substitute(&base, &base, 4, PatchDomain::Pixel, (2, 2)).is_err());
    }

    #[test]
    fn parseval_holds() {
        let batch = random_batch(2, 3, 8, 8, 46);
        let spec = dft_decompose(&batch).unwrap();
        let spatial: f64 = batch.0.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let spectral: f64 =
            spec.amplitude.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / 64.0;
        assert!((spatial - spectral).abs() / spatial < 1e-3);
    }

    #[test]
    fn recomposition_gradients_match_finite_difference() {
        // loss L = <idft(A, P), T> for a fixed random target T
        let x = random_batch(1, 1, 4, 4, 51);
        let spec = dft_decompose(&x).unwrap();
        let target = random_batch(1, 1, 4, 4, 52);
        let loss = |amp: &Array4<f32>, pha: &Array4<f32>| -> f64 {
            idft_recompose(amp, pha, false)
                .unwrap()
                .0
                .iter()
                .zip(target.0.iter())
                .map(|(a, b)| (a * b) as f64)
                .sum()
        };

        let ga = idft_grad_amplitude(&target.0, &spec.phase);
        let gp = idft_grad_phase(&target.0, &spec.amplitude, &spec.phase);

        let eps = 1e-2f32;
        for idx in [(0usize, 0usize, 0usize, 0usize), (0, 0, 1, 2), (0, 0, 3, 3)] {
            let mut amp = spec.amplitude.clone();
            amp[idx] += eps;
            let lp = loss(&amp, &spec.phase);
            amp[idx] -= 2.0 * eps;
            let lm = loss(&amp, &spec.phase);
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!((ga[idx] - fd).abs() < 1e-3, "amp {idx:?}: {} vs {fd}", ga[idx]);

            let mut pha = spec.phase.clone();
            pha[idx] += eps;
            let lp = loss(&spec.amplitude, &pha);
            pha[idx] -= 2.0 * eps;
            let lm = loss(&spec.amplitude, &pha);
            let fd = ((lp - lm) / (2.0 * eps as f64)) as f32;
            assert!((gp[idx] - fd).abs() < 1e-3 * fd.abs().max(1.0), "phase {idx:?}: {} vs {fd}", gp[idx]);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn prop_round_trip_and_ranges(seed in 0u64..1000) {
            let batch = random_batch(1, 3, 8, 8, seed);
            let spec = dft_decompose(&batch).unwrap();
            proptest::prop_assert!(spec.amplitude.iter().all(|&a| a >= 0.0));
            let phase_ok = spec.phase.iter().all(|&p| {
                p > -std::f32::consts::PI - 1e-6 && p <= std::f32::consts::PI + 1e-6
            });
            proptest::prop_assert!(phase_ok);
            let back = idft_recompose(&spec.amplitude, &spec.phase, false).unwrap();
            proptest::prop_assert!(max_abs_diff(&back.0, &batch.0) < 1e-4);
        }
    }
}
