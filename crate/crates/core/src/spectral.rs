//! Channel-wise real FFT, the static global-aware filter layer and its
//! direct-convolution ground truth.
//!
//! Half spectra keep `⌊T/2⌋ + 1` bins per channel. The inverse transform
//! Hermitian-extends the half spectrum and ignores the imaginary part of the
//! DC bin (and of the Nyquist bin when `T` is even), so any complex filter
//! applied to a half spectrum yields a real signal.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

fn forward_plan(len: usize) -> Arc<dyn RealToComplex<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse_plan(len: usize) -> Arc<dyn ComplexToReal<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Number of half-spectrum bins for a real signal of length `t`.
pub fn bins_for(t: usize) -> usize {
    t / 2 + 1
}

/// Complex tensor `batch × channels × bins` produced by [`rfft_channels`].
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    pub batch: usize,
    pub channels: usize,
    pub bins: usize,
    pub origin_length: usize,
    pub data: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn row(&self, b: usize, c: usize) -> &[Complex64] {
        let off = (b * self.channels + c) * self.bins;
        &self.data[off..off + self.bins]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [Complex64] {
        let off = (b * self.channels + c) * self.bins;
        &mut self.data[off..off + self.bins]
    }
}

/// One complex filter per channel, `channels × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFilter {
    pub channels: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl GlobalFilter {
    pub fn new(channels: usize, bins: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != channels * bins {
            return shape_err(format!(
                "filter {channels}x{bins} needs {} entries, got {}",
                channels * bins,
                data.len()
            ));
        }
        Ok(Self { channels, bins, data })
    }

    pub fn constant(channels: usize, bins: usize, value: Complex64) -> Self {
        Self { channels, bins, data: vec![value; channels * bins] }
    }

    /// All-pass filter for a signal of length `t`.
    pub fn identity(channels: usize, t: usize) -> Self {
        Self::constant(channels, bins_for(t), Complex64::new(1.0, 0.0))
    }

    pub fn row(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.bins..(c + 1) * self.bins]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c * self.bins..(c + 1) * self.bins]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Forward real FFT of each contiguous row of length `t`.
pub(crate) fn rfft_rows(rows: &[f64], t: usize) -> Vec<Complex64> {
    let nb = bins_for(t);
    let fft = forward_plan(t);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut out = Vec::with_capacity(rows.len() / t * nb);
    for row in rows.chunks_exact(t) {
        buf.copy_from_slice(row);
        fft.process_with_scratch(&mut buf, &mut spec, &mut scratch).expect("buffer sizes come from the plan");
        out.extend_from_slice(&spec);
    }
    out
}

/// Inverse of [`rfft_rows`]. The imaginary parts of the DC bin, and of the
/// Nyquist bin for even `t`, are ignored.
pub(crate) fn irfft_rows(spec: &[Complex64], t: usize) -> Vec<f64> {
    let nb = bins_for(t);
    let fft = inverse_plan(t);
    let mut half = fft.make_input_vec();
    let mut buf = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let scale = 1.0 / t as f64;
    let mut out = Vec::with_capacity(spec.len() / nb * t);
    for row in spec.chunks_exact(nb) {
        half.copy_from_slice(row);
        half[0].im = 0.0;
        if t % 2 == 0 {
            half[nb - 1].im = 0.0;
        }
        fft.process_with_scratch(&mut half, &mut buf, &mut scratch).expect("real-valued edge bins");
        out.extend(buf.iter().map(|v| v * scale));
    }
    out
}

pub fn rfft_channels(x: &Tensor) -> Result<HalfSpectrum> {
    let (b, c, t) = x.dims3()?;
    if t < 2 {
        return Err(Error::InvalidInput(format!("rfft needs at least 2 frames, got {t}")));
    }
    x.ensure_finite("rfft input")?;
    Ok(HalfSpectrum {
        batch: b,
        channels: c,
        bins: bins_for(t),
        origin_length: t,
        data: rfft_rows(x.data(), t),
    })
}

pub fn irfft_channels(s: &HalfSpectrum) -> Result<Tensor> {
    if s.origin_length < 1 || bins_for(s.origin_length) != s.bins {
        return shape_err(format!(
            "{} bins cannot come from a length-{} signal",
            s.bins, s.origin_length
        ));
    }
    if s.data.len() != s.batch * s.channels * s.bins {
        return shape_err("half spectrum storage does not match its dimensions");
    }
    Tensor::from_vec(
        &[s.batch, s.channels, s.origin_length],
        irfft_rows(&s.data, s.origin_length),
    )
}

/// Multiply every batch item's half spectrum by `f`, channel by channel.
pub fn modulate(s: &mut HalfSpectrum, f: &GlobalFilter) -> Result<()> {
    if f.channels != s.channels || f.bins != s.bins {
        return shape_err(format!(
            "filter {}x{} does not match spectrum {}x{}",
            f.channels, f.bins, s.channels, s.bins
        ));
    }
    for b in 0..s.batch {
        for c in 0..s.channels {
            for (z, w) in s.row_mut(b, c).iter_mut().zip(f.row(c)) {
                *z *= w;
            }
        }
    }
    Ok(())
}

/// Static global-aware filter layer: `irfft(f ⊙ rfft(x))` per channel.
pub fn gf_forward(x: &Tensor, f: &GlobalFilter) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    if f.channels != c {
        return shape_err(format!("filter has {} channels, input has {c}", f.channels));
    }
    if f.bins != bins_for(t) {
        return shape_err(format!(
            "filter has {} bins but a length-{t} input needs {}; interpolate first",
            f.bins,
            bins_for(t)
        ));
    }
    if t < 2 {
        return Err(Error::InvalidInput(format!("rfft needs at least 2 frames, got {t}")));
    }
    x.ensure_finite("rfft input")?;
    // One row at a time so each spectrum stays in cache between the two transforms.
    let (fwd, inv) = (forward_plan(t), inverse_plan(t));
    let mut buf = fwd.make_input_vec();
    let mut spec = fwd.make_output_vec();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_scratch_len().max(inv.get_scratch_len())];
    let nb = spec.len();
    let scale = 1.0 / t as f64;
    let mut out = Vec::with_capacity(b * c * t);
    for (i, row) in x.data().chunks_exact(t).enumerate() {
        buf.copy_from_slice(row);
        fwd.process_with_scratch(&mut buf, &mut spec, &mut scratch[..fwd.get_scratch_len()])
            .expect("buffer sizes come from the plan");
        spec.iter_mut().zip(f.row(i % c)).for_each(|(z, w)| *z *= w);
        spec[0].im = 0.0;
        if t % 2 == 0 {
            spec[nb - 1].im = 0.0;
        }
        inv.process_with_scratch(&mut spec, &mut buf, &mut scratch[..inv.get_scratch_len()])
            .expect("real-valued edge bins");
        out.extend(buf.iter().map(|v| v * scale));
    }
    Tensor::from_vec(&[b, c, t], out)
}

/// Direct circular convolution `out[m] = Σ_n x[n]·w[(m−n) mod T]`, O(T²) per channel.
pub fn circular_conv_oracle(x: &Tensor, w_g: &Tensor) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    let (wc, wt) = w_g.dims2()?;
    if wc != c || wt != t {
        return shape_err(format!("kernel {wc}x{wt} does not match input {c}x{t}"));
    }
    let mut out = Tensor::zeros(&[b, c, t]);
    for bi in 0..b {
        let src = x.slab(bi);
        let dst = out.slab_mut(bi);
        for ci in 0..c {
            let xr = &src[ci * t..(ci + 1) * t];
            let wr = &w_g.data()[ci * t..(ci + 1) * t];
            for m in 0..t {
                let mut acc = 0.0;
                for (n, &xv) in xr.iter().enumerate() {
                    acc += xv * wr[(m + t - n) % t];
                }
                dst[ci * t + m] = acc;
            }
        }
    }
    Ok(out)
}

/// Transform a spatial kernel `C × T` into the equivalent half-spectrum filter.
pub fn filter_from_kernel(w_g: &Tensor) -> Result<GlobalFilter> {
    let (c, t) = w_g.dims2()?;
    GlobalFilter::new(c, bins_for(t), rfft_rows(w_g.data(), t))
}

/// Source position and weight for linearly resampling `from` points onto `to` points
/// spread uniformly over the same interval.
pub(crate) fn interp_weights(from: usize, to: usize) -> Vec<(usize, usize, f64)> {
    (0..to)
        .map(|j| {
            if from == 1 || to == 1 {
                return (0, 0, 0.0);
            }
            let pos = j as f64 * (from - 1) as f64 / (to - 1) as f64;
            let lo = (pos.floor() as usize).min(from - 1);
            let hi = (lo + 1).min(from - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Resample `f` to serve a signal of length `target_length` by linear
/// interpolation of real and imaginary parts on normalized frequency `[0, 0.5]`.
pub fn interpolate_filter(f: &GlobalFilter, target_length: usize) -> Result<GlobalFilter> {
    if target_length < 2 {
        return Err(Error::InvalidInput(format!("target length {target_length} < 2")));
    }
    let to = bins_for(target_length);
    if to == f.bins {
        return Ok(f.clone());
    }
    let weights = interp_weights(f.bins, to);
    let mut out = Vec::with_capacity(f.channels * to);
    for c in 0..f.channels {
        let row = f.row(c);
        out.extend(weights.iter().map(|&(lo, hi, a)| row[lo] * (1.0 - a) + row[hi] * a));
    }
    GlobalFilter::new(f.channels, to, out)
}

/// Quadratic-time reference transforms used to validate the fast paths.
pub mod oracle {
    use std::f64::consts::PI;

    use rustfft::num_complex::Complex64;

    /// `X[k] = Σ_n x[n]·exp(−j2πkn/T)` for `k = 0..=⌊T/2⌋`.
    pub fn naive_rdft(x: &[f64]) -> Vec<Complex64> {
        let t = x.len();
        (0..=t / 2)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                    let ang = -2.0 * PI * (k * n % t) as f64 / t as f64;
                    acc + Complex64::from_polar(v, ang)
                })
            })
            .collect()
    }

    /// Inverse DFT over the full Hermitian extension of `half`, real part only.
    pub fn naive_irdft(half: &[Complex64], t: usize) -> Vec<f64> {
        let mut full = vec![Complex64::new(0.0, 0.0); t];
        full[0] = Complex64::new(half[0].re, 0.0);
        for k in 1..half.len() {
            if 2 * k == t {
                full[k] = Complex64::new(half[k].re, 0.0);
            } else {
                full[k] = half[k];
                full[t - k] = half[k].conj();
            }
        }
        (0..t)
            .map(|n| {
                let s = full.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (k, z)| {
                    let ang = 2.0 * PI * (k * n % t) as f64 / t as f64;
                    acc + z * Complex64::from_polar(1.0, ang)
                });
                s.re / t as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dc_signal_has_single_bin() {
        let x = Tensor::full(&[1, 1, 8], 1.0);
        let s = rfft_channels(&x).unwrap();
        assert_eq!(s.bins, 5);
        assert!((s.data[0] - c(8.0, 0.0)).norm() < 1e-12);
        assert!(s.data[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn cosine_lands_in_its_bin() {
        let x = Tensor::from_fn(&[1, 1, 8], |n| (2.0 * std::f64::consts::PI * 2.0 * n as f64 / 8.0).cos());
        let s = rfft_channels(&x).unwrap();
        let naive = oracle::naive_rdft(x.data());
        for (k, (a, b)) in s.data.iter().zip(&naive).enumerate() {
            assert!((a - b).norm() < 1e-12);
            let want = if k == 2 { 4.0 } else { 0.0 };
            assert!((a.re - want).abs() < 1e-12 && a.im.abs() < 1e-12, "bin {k}: {a}");
        }
    }

    #[test]
    fn odd_length_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[1, 1, 7]);
        let s = rfft_channels(&x).unwrap();
        let naive = oracle::naive_rdft(x.data());
        assert_eq!(s.bins, 4);
        let scale = naive.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in s.data.iter().zip(&naive) {
            assert!((a - b).norm() / scale < 1e-10);
        }
    }

    #[test]
    fn real_signal_has_real_dc_and_nyquist() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[2, 3, 10]);
        let s = rfft_channels(&x).unwrap();
        for b in 0..2 {
            for ch in 0..3 {
                let row = s.row(b, ch);
                assert!(row[0].im.abs() < 1e-12);
                assert!(row[5].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[4, 16, 100]);
        let y = irfft_channels(&rfft_channels(&x).unwrap()).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-10);
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let t = 9;
        let mut data = vec![c(0.0, 0.0); bins_for(t)];
        data[0] = c(t as f64, 0.0);
        let s = HalfSpectrum { batch: 1, channels: 1, bins: bins_for(t), origin_length: t, data };
        let y = irfft_channels(&s).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn inverse_matches_naive_idft() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for t in [6usize, 7, 16, 33] {
            let nb = bins_for(t);
            let mut half: Vec<Complex64> =
                (0..nb).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            half[0].im = 0.0;
            if t % 2 == 0 {
                half[nb - 1].im = 0.0;
            }
            let s = HalfSpectrum { batch: 1, channels: 1, bins: nb, origin_length: t, data: half.clone() };
            let fast = irfft_channels(&s).unwrap();
            let slow = oracle::naive_irdft(&half, t);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bin_count_mismatch_is_shape_error() {
        let s = HalfSpectrum { batch: 1, channels: 1, bins: 3, origin_length: 8, data: vec![c(0.0, 0.0); 3] };
        assert!(matches!(irfft_channels(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = Tensor::zeros(&[1, 1, 4]);
        x.data_mut()[2] = f64::NAN;
        assert!(matches!(rfft_channels(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn all_pass_and_null_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&mut rng, &[2, 3, 20]);
        let y = gf_forward(&x, &GlobalFilter::identity(3, 20)).unwrap();
        assert!(y.rel_diff(&x) <= 1e-10);
        let z = gf_forward(&x, &GlobalFilter::constant(3, 11, c(0.0, 0.0))).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn gf_matches_circular_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&mut rng, &[1, 4, 32]);
        let w = random_tensor(&mut rng, &[4, 32]);
        let f = filter_from_kernel(&w).unwrap();
        let fast = gf_forward(&x, &f).unwrap();
        let slow = circular_conv_oracle(&x, &w).unwrap();
        assert!(fast.rel_diff(&slow) < 1e-8);
    }

    #[test]
    fn impulse_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, &[1, 2, 6]);
        let mut delta = Tensor::zeros(&[2, 6]);
        delta.data_mut()[0] = 1.0;
        delta.data_mut()[6] = 1.0;
        assert_eq!(circular_conv_oracle(&x, &delta).unwrap(), x);

        let mut lag = Tensor::zeros(&[2, 6]);
        lag.data_mut()[1] = 1.0;
        lag.data_mut()[7] = 1.0;
        let y = circular_conv_oracle(&x, &lag).unwrap();
        for ch in 0..2 {
            for m in 0..6 {
                assert_eq!(y.data()[ch * 6 + m], x.data()[ch * 6 + (m + 5) % 6]);
            }
        }
    }

    #[test]
    fn kernel_length_mismatch_is_shape_error() {
        let x = Tensor::zeros(&[1, 2, 6]);
        let w = Tensor::zeros(&[2, 5]);
        assert!(matches!(circular_conv_oracle(&x, &w), Err(Error::Shape(_))));
        assert!(matches!(gf_forward(&x, &GlobalFilter::identity(3, 6)), Err(Error::Shape(_))));
    }

    #[test]
    fn interpolation_identity_and_constant() {
        let f = GlobalFilter::new(1, 5, (0..5).map(|k| c(k as f64, -(k as f64))).collect()).unwrap();
        assert_eq!(interpolate_filter(&f, 9).unwrap(), f);
        let k = GlobalFilter::constant(3, 5, c(0.7, -0.2));
        for t in [2, 3, 17, 100, 1001] {
            let g = interpolate_filter(&k, t).unwrap();
            assert_eq!(g.bins, bins_for(t));
            assert!(g.data.iter().all(|z| (z - c(0.7, -0.2)).norm() < 1e-15));
        }
    }

    #[test]
    fn ramp_midpoints_are_neighbor_means() {
        let f = GlobalFilter::new(1, 5, (0..5).map(|k| c(2.0 * k as f64 + 1.0, 0.5)).collect()).unwrap();
        let g = interpolate_filter(&f, 16).unwrap();
        assert_eq!(g.bins, 9);
        for j in 0..9 {
            let want = if j % 2 == 0 {
                f.data[j / 2].re
            } else {
                0.5 * (f.data[j / 2].re + f.data[j / 2 + 1].re)
            };
            assert!((g.data[j].re - want).abs() < 1e-12);
            assert!((g.data[j].im - 0.5).abs() < 1e-12);
        }
    }
}
