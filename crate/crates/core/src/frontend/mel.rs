//! 80-band log-Mel features from 16 kHz waveforms.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("waveform has non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Features of one utterance, `1 × channels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    /// Seconds between frames.
    pub frame_shift: f64,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    /// Frames `[start, start + len)` as a new map.
    pub fn crop(&self, start: usize, len: usize) -> Result<FeatureMap> {
        let (_, c, t) = self.data.dims3()?;
        if start + len > t {
            return Err(Error::InvalidInput(format!("crop {start}+{len} exceeds {t} frames")));
        }
        let src = self.data.data();
        let data = Tensor::from_fn(&[1, c, len], |i| src[(i / len) * t + start + i % len]);
        Ok(FeatureMap { data, frame_shift: self.frame_shift })
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_fft: usize,
    pub sample_rate: u32,
    /// `n_mels + 2` band edges in Hz; filter `m` spans `edges[m]..edges[m + 2]`.
    pub edges: Vec<f64>,
    /// `n_mels × (n_fft/2 + 1)` weights.
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, low: f64, high: f64) -> Self {
        let (lo, hi) = (hz_to_mel(low), hz_to_mel(high));
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
        let bins = n_fft / 2 + 1;
        let weights = (0..n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * sample_rate as f64 / n_fft as f64;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { n_fft, sample_rate, edges, weights }
    }

    pub fn band(&self, m: usize) -> (f64, f64) {
        (self.edges[m], self.edges[m + 2])
    }
}

/// `⌊(len − win)/hop⌋ + 1` frames, or `None` when the signal is shorter than a window.
pub fn frame_count(len: usize, win: usize, hop: usize) -> Option<usize> {
    (len >= win && hop > 0).then(|| (len - win) / hop + 1)
}

fn window_samples(w: &Waveform, win: f64, hop: f64) -> Result<(usize, usize)> {
    if !(win > hop && hop > 0.0) {
        return Err(Error::InvalidInput(format!("need win > hop > 0, got win={win}, hop={hop}")));
    }
    let sr = w.sample_rate as f64;
    Ok(((win * sr).round() as usize, (hop * sr).round() as usize))
}

/// Natural-log Mel energies floored at `LOG_FLOOR`, `n_mels × frames`, without normalization.
pub fn log_mel_energies(w: &Waveform, n_mels: usize, win: f64, hop: f64) -> Result<Tensor> {
    if n_mels == 0 {
        return Err(Error::InvalidInput("n_mels must be at least 1".into()));
    }
    let (wl, hl) = window_samples(w, win, hop)?;
    let frames = frame_count(w.samples.len(), wl, hl).ok_or_else(|| {
        Error::InvalidInput(format!("waveform of {} samples is shorter than one {wl}-sample window", w.samples.len()))
    })?;
    let n_fft = wl.next_power_of_two();
    let fb = MelFilterbank::new(n_mels, n_fft, w.sample_rate, MEL_LOW_HZ, MEL_HIGH_HZ.min(w.sample_rate as f64 / 2.0));
    let hamming: Vec<f64> =
        (0..wl).map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (wl - 1) as f64).cos()).collect();
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut out = Tensor::zeros(&[n_mels, frames]);
    for f in 0..frames {
        let seg = &w.samples[f * hl..f * hl + wl];
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (i, (&s, &h)) in seg.iter().zip(&hamming).enumerate() {
            buf[i] = Complex64::new(s * h, 0.0);
        }
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p = z.norm_sqr();
        }
        for (m, wts) in fb.weights.iter().enumerate() {
            let e: f64 = wts.iter().zip(&power).map(|(a, b)| a * b).sum();
            out.data_mut()[m * frames + f] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Log-Mel features with per-channel mean subtraction over the utterance.
pub fn compute_log_mel(w: &Waveform, n_mels: usize, win: f64, hop: f64) -> Result<FeatureMap> {
    let mut e = log_mel_energies(w, n_mels, win, hop)?;
    let (c, t) = e.dims2()?;
    for row in e.data_mut().chunks_exact_mut(t) {
        let m = row.iter().sum::<f64>() / t as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    Ok(FeatureMap { data: e.reshape(&[1, c, t])?, frame_shift: hop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_98_frames() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let f = compute_log_mel(&w, 80, 0.025, 0.010).unwrap();
        assert_eq!(f.data.shape(), &[1, 80, 98]);
        // Brute-force framing: count start offsets whose window fits.
        let fits = (0..16_000).step_by(160).filter(|s| s + 400 <= 16_000).count();
        assert_eq!(fits, 98);
    }

    #[test]
    fn silence_is_zero_after_normalization() {
        let w = Waveform::new(vec![0.0; 8_000], 16_000).unwrap();
        let raw = log_mel_energies(&w, 80, 0.025, 0.010).unwrap();
        assert!(raw.data().iter().all(|&v| v == LOG_FLOOR.ln()));
        let f = compute_log_mel(&w, 80, 0.025, 0.010).unwrap();
        assert!(f.data.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn sine_peaks_in_band_containing_it() {
        let w = Waveform::new(
            (0..16_000).map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin()).collect(),
            16_000,
        )
        .unwrap();
        let raw = log_mel_energies(&w, 80, 0.025, 0.010).unwrap();
        let t = raw.shape()[1];
        let mean: Vec<f64> = raw.data().chunks(t).map(|r| r.iter().sum::<f64>() / t as f64).collect();
        let best = (0..80).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        let fb = MelFilterbank::new(80, 512, 16_000, MEL_LOW_HZ, MEL_HIGH_HZ);
        let (lo, hi) = fb.band(best);
        assert!(lo < 440.0 && 440.0 < hi, "band {best} = [{lo}, {hi}]");
    }

    #[test]
    fn too_short_waveform_is_rejected() {
        let w = Waveform::new(vec![0.1; 399], 16_000).unwrap();
        assert!(matches!(compute_log_mel(&w, 80, 0.025, 0.010), Err(Error::InvalidInput(_))));
        let ok = Waveform::new(vec![0.1; 400], 16_000).unwrap();
        assert_eq!(compute_log_mel(&ok, 80, 0.025, 0.010).unwrap().frames(), 1);
    }

    #[test]
    fn window_must_exceed_hop() {
        let w = Waveform::new(vec![0.0; 1000], 16_000).unwrap();
        assert!(compute_log_mel(&w, 80, 0.01, 0.01).is_err());
    }

    #[test]
    fn framing_formula_matches_enumeration() {
        for len in [400usize, 401, 559, 560, 561, 12_345] {
            let enumerated = (0..len).step_by(160).filter(|s| s + 400 <= len).count();
            assert_eq!(frame_count(len, 400, 160), Some(enumerated));
        }
        assert_eq!(frame_count(399, 400, 160), None);
    }
}
