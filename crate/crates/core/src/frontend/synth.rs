//! Additive synthetic speakers: a harmonic source shaped by formant resonators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::mel::{log_mel_energies, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MIN_F0: f64 = 80.0;
pub const MAX_F0: f64 = 320.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerSpec {
    pub speaker_id: String,
    pub fundamental_freq: f64,
    pub formant_centers: Vec<f64>,
    /// dB per octave above the fundamental.
    pub spectral_tilt: f64,
    /// RMS of the shaped noise relative to the voiced part.
    pub noise_floor: f64,
    pub rng_seed: u64,
}

impl SyntheticSpeakerSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        let bad = |m: String| Err(Error::InvalidSpec(format!("{}: {m}", self.speaker_id)));
        if !(MIN_F0..=MAX_F0).contains(&self.fundamental_freq) {
            return bad(format!("fundamental {} Hz outside [{MIN_F0}, {MAX_F0}]", self.fundamental_freq));
        }
        if self.formant_centers.is_empty() {
            return bad("no formants".into());
        }
        if self.formant_centers.windows(2).any(|w| w[1] <= w[0]) {
            return bad("formant centers must be strictly increasing".into());
        }
        if let Some(&f) = self.formant_centers.iter().find(|&&f| !(f > 0.0 && f < nyq)) {
            return bad(format!("formant {f} Hz not inside (0, {nyq})"));
        }
        if !self.spectral_tilt.is_finite() || !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return bad("tilt and noise floor must be finite, noise floor non-negative".into());
        }
        Ok(())
    }
}

/// Within-speaker variability applied on top of a spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisStyle {
    pub sample_rate: u32,
    /// Segment length range in seconds; each segment draws new formant offsets.
    pub segment: (f64, f64),
    /// Relative half-range of the per-segment formant shift.
    pub formant_jitter: f64,
    /// Per-segment level range (linear).
    pub level: (f64, f64),
    /// Relative half-range of a per-utterance pitch offset.
    pub pitch_jitter: f64,
}

impl Default for SynthesisStyle {
    fn default() -> Self {
        Self { sample_rate: DEFAULT_SAMPLE_RATE, segment: (0.12, 0.3), formant_jitter: 0.12, level: (0.3, 1.0), pitch_jitter: 0.0 }
    }
}

impl SynthesisStyle {
    /// No segment-level variation: a stationary voiced sound.
    pub fn steady() -> Self {
        Self { formant_jitter: 0.0, level: (1.0, 1.0), ..Self::default() }
    }
}

fn bandwidth(f: f64) -> f64 {
    50.0 + 0.06 * f
}

/// Magnitude of a parallel resonator bank with source tilt, at `f` Hz.
fn envelope(f: f64, f0: f64, formants: &[f64], tilt: f64) -> f64 {
    let res: f64 = formants
        .iter()
        .map(|&c| {
            let d = (f - c) / (bandwidth(c) / 2.0);
            1.0 / (1.0 + d * d).sqrt()
        })
        .sum();
    let octaves = (f.max(1.0) / f0).log2().max(0.0);
    res * 10f64.powf(tilt * octaves / 20.0)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

pub fn synthesize_utterance<R: Rng + ?Sized>(s: &SyntheticSpeakerSpec, duration: f64, rng: &mut R) -> Result<Waveform> {
    synthesize_with_style(s, duration, &SynthesisStyle::default(), rng)
}

pub fn synthesize_with_style<R: Rng + ?Sized>(
    s: &SyntheticSpeakerSpec,
    duration: f64,
    style: &SynthesisStyle,
    rng: &mut R,
) -> Result<Waveform> {
    let sr = style.sample_rate as f64;
    s.validate(style.sample_rate)?;
    if !(1.0..=60.0).contains(&duration) {
        return Err(Error::InvalidInput(format!("duration {duration} s outside [1, 60]")));
    }
    let n = (duration * sr).round() as usize;
    let f0 = s.fundamental_freq * (1.0 + style.pitch_jitter * rng.random_range(-1.0..=1.0));
    let n_harm = ((0.95 * sr / 2.0) / f0).floor() as usize;

    // Segment boundaries with per-segment formant shifts and levels.
    let mut knots = Vec::new();
    let mut t = 0.0;
    while t < duration {
        let shift: Vec<f64> =
            s.formant_centers.iter().map(|_| 1.0 + style.formant_jitter * rng.random_range(-1.0..=1.0)).collect();
        let level = rng.random_range(style.level.0..=style.level.1);
        knots.push((t * sr, shift, level));
        t += rng.random_range(style.segment.0..=style.segment.1);
    }
    knots.push((n as f64, knots.last().unwrap().1.clone(), knots.last().unwrap().2));

    let nyq = sr / 2.0;
    // Harmonic amplitudes at each knot.
    let amps: Vec<Vec<f64>> = knots
        .iter()
        .map(|(_, shift, level)| {
            let fm: Vec<f64> =
                s.formant_centers.iter().zip(shift).map(|(c, k)| (c * k).min(nyq * 0.98)).collect();
            (1..=n_harm).map(|h| level * envelope(h as f64 * f0, f0, &fm, s.spectral_tilt)).collect()
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut voiced = vec![0.0; n];
    let mut seg = 0;
    for (i, v) in voiced.iter_mut().enumerate() {
        let x = i as f64;
        while seg + 2 < knots.len() && x >= knots[seg + 1].0 {
            seg += 1;
        }
        let (x0, x1) = (knots[seg].0, knots[seg + 1].0);
        // Raised-cosine crossfade between neighbouring knots.
        let a = if x1 > x0 { ((x - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 0.0 };
        let a = 0.5 - 0.5 * (PI * a).cos();
        let (lo, hi) = (&amps[seg], &amps[seg + 1]);
        let w = 2.0 * PI * f0 * x / sr;
        let mut acc = 0.0;
        for h in 0..n_harm {
            acc += ((1.0 - a) * lo[h] + a * hi[h]) * (w * (h + 1) as f64 + phases[h]).sin();
        }
        *v = acc;
    }
    let vr = rms(&voiced);
    if vr > 0.0 {
        voiced.iter_mut().for_each(|v| *v /= vr);
    }

    if s.noise_floor > 0.0 {
        let mut buf: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(StandardNormal.sample(rng), 0.0)).collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, z) in buf.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * sr / n as f64;
            *z *= envelope(f, f0, &s.formant_centers, s.spectral_tilt);
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        let noise: Vec<f64> = buf.iter().map(|z| z.re).collect();
        let nr = rms(&noise);
        if nr > 0.0 {
            for (v, e) in voiced.iter_mut().zip(&noise) {
                *v += s.noise_floor * e / nr;
            }
        }
    }

    let peak = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        voiced.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    Waveform::new(voiced, style.sample_rate)
}

/// Time-averaged log-Mel energies, 80 bands.
pub fn long_term_log_spectrum(w: &Waveform) -> Result<Vec<f64>> {
    let e = log_mel_energies(w, 80, 0.025, 0.010)?;
    let (c, t) = e.dims2()?;
    Ok((0..c).map(|m| e.data()[m * t..(m + 1) * t].iter().sum::<f64>() / t as f64).collect())
}

/// Cosine similarity of two spectra after removing each one's mean over frequency.
pub fn spectral_similarity(a: &[f64], b: &[f64]) -> f64 {
    let center = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (a, b) = (center(a), center(b));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
