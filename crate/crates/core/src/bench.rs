//! Wall-time and memory scaling of global filtering against direct
//! circular convolution and attention-style token mixing.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{circular_conv_oracle, filter_from_kernel, gf_forward, GlobalFilter};
use crate::tensor::Tensor;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

/// System allocator that tracks live and peak heap bytes. Install it with
/// `#[global_allocator]` to get nonzero `peak_bytes` in bench records.
pub struct TrackingAllocator;

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

fn peak_above(base: usize) -> usize {
    PEAK.load(Ordering::Relaxed).saturating_sub(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    /// FFT, element-wise filter, inverse FFT.
    Gf,
    /// Direct O(T²) circular convolution.
    DirectConv,
    /// Softmax dot-product mixing over all frame pairs.
    Attention,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gf => "gf",
            Self::DirectConv => "direct_conv",
            Self::Attention => "attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub primitive: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub reps: usize,
    pub median_s: f64,
    pub peak_bytes: usize,
}

/// Attention-style token mixing with queries, keys and values all equal to the input frames.
pub fn attention_mix(x: &Tensor) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = Tensor::zeros(&[b, c, t]);
    let mut frames = vec![0.0; t * c];
    let mut row = vec![0.0; t];
    for bi in 0..b {
        let src = x.slab(bi);
        for ci in 0..c {
            for ti in 0..t {
                frames[ti * c + ci] = src[ci * t + ti];
            }
        }
        let dst = out.slab_mut(bi);
        for q in 0..t {
            let fq = &frames[q * c..(q + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (k, r) in row.iter_mut().enumerate() {
                *r = scale * fq.iter().zip(&frames[k * c..(k + 1) * c]).map(|(a, b)| a * b).sum::<f64>();
                max = max.max(*r);
            }
            let mut z = 0.0;
            row.iter_mut().for_each(|r| {
                *r = (*r - max).exp();
                z += *r;
            });
            for ci in 0..c {
                dst[ci * t + q] = row.iter().enumerate().map(|(k, w)| w * frames[k * c + ci]).sum::<f64>() / z;
            }
        }
    }
    Ok(out)
}

struct Case {
    x: Tensor,
    kernel: Tensor,
    filter: GlobalFilter,
}

impl Case {
    fn new(batch: usize, c: usize, t: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[batch, c, t], |_| rng.random_range(-1.0..1.0));
        let kernel = Tensor::from_fn(&[c, t], |_| rng.random_range(-1.0..1.0) / t as f64);
        let filter = filter_from_kernel(&kernel).expect("kernel is C x T");
        Self { x, kernel, filter }
    }

    fn run(&self, p: Primitive) -> Result<Tensor> {
        match p {
            Primitive::Gf => gf_forward(&self.x, &self.filter),
            Primitive::DirectConv => circular_conv_oracle(&self.x, &self.kernel),
            Primitive::Attention => attention_mix(&self.x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub lengths: Vec<usize>,
    pub channels: usize,
    /// Timed samples per record.
    pub reps: usize,
    /// Samples shorter than this batch several calls together.
    pub min_sample_s: f64,
    /// Longest input for the quadratic primitives.
    pub direct_max_len: usize,
    pub attention_max_len: usize,
    /// Worker threads; above one, each sample runs that many items in parallel.
    pub threads: usize,
    /// Length at which channel doubling is measured.
    pub channel_probe_len: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            lengths: power_range(1024, 65536),
            channels: 4,
            reps: 7,
            min_sample_s: 0.02,
            direct_max_len: 16384,
            attention_max_len: 2048,
            threads: 1,
            channel_probe_len: 16384,
            seed: 0,
        }
    }
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn power_range(lo: usize, hi: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut t = lo.max(1);
    while t <= hi {
        v.push(t);
        t *= 2;
    }
    v
}

/// Parse `a..b` (powers of two) or a comma-separated list.
pub fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad length '{x}'")));
    let v = match s.split_once("..") {
        Some((a, b)) => power_range(num(a)?, num(b)?),
        None => s.split(',').map(num).collect::<Result<_>>()?,
    };
    if v.is_empty() || v.contains(&0) {
        return Err(Error::InvalidInput(format!("no usable lengths in '{s}'")));
    }
    Ok(v)
}

/// Time one primitive: a warm-up call, then `reps` samples, each long enough
/// to be well above timer resolution.
pub fn measure(p: Primitive, t: usize, c: usize, opts: &BenchOptions) -> Result<BenchRecord> {
    let threads = opts.threads.max(1);
    let case = Case::new(1, c, t, opts.seed ^ (t as u64) << 8 ^ c as u64);
    let once = || -> Result<()> {
        if threads > 1 {
            (0..threads).into_par_iter().try_for_each(|_| case.run(p).map(drop))
        } else {
            case.run(p).map(drop)
        }
    };
    let base = reset_peak();
    once()?;
    let peak_bytes = peak_above(base);

    let start = Instant::now();
    once()?;
    let single = start.elapsed().as_secs_f64();
    let inner = if single >= opts.min_sample_s { 1 } else { (opts.min_sample_s / single.max(1e-9)).ceil() as usize };

    let mut samples = Vec::with_capacity(opts.reps);
    for _ in 0..opts.reps.max(5) {
        let start = Instant::now();
        for _ in 0..inner {
            once()?;
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median_s = if n % 2 == 1 { samples[n / 2] } else { 0.5 * (samples[n / 2 - 1] + samples[n / 2]) };
    let primitive = if threads > 1 { format!("{}_mt{threads}", p.name()) } else { p.name().to_string() };
    Ok(BenchRecord { primitive, t, c, reps: n * inner, median_s, peak_bytes })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidInput("slope fit needs two or more positive points".into()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit needs distinct lengths".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// Fitted log-time versus log-length exponent per primitive.
    pub slopes: BTreeMap<String, f64>,
    /// Time ratio when doubling channels at `channel_probe_len`.
    pub channel_ratio: Option<f64>,
}

pub fn bench_scaling(opts: &BenchOptions) -> Result<BenchReport> {
    let lengths = &opts.lengths;
    let (lo, hi) = (*lengths.iter().min().unwrap_or(&0), *lengths.iter().max().unwrap_or(&0));
    if lo == 0 || hi < 16 * lo {
        return Err(Error::InvalidInput(format!("lengths must span at least 16x, got {lo}..{hi}")));
    }
    if opts.channels == 0 {
        return Err(Error::InvalidInput("channels must be positive".into()));
    }
    let mut records = Vec::new();
    let mut slopes = BTreeMap::new();
    for (p, cap) in [
        (Primitive::Gf, usize::MAX),
        (Primitive::DirectConv, opts.direct_max_len),
        (Primitive::Attention, opts.attention_max_len),
    ] {
        let mut pts = Vec::new();
        for &t in lengths.iter().filter(|&&t| t <= cap) {
            let r = measure(p, t, opts.channels, opts)?;
            log::info!("{} T={} C={} median {:.3e} s", r.primitive, t, r.c, r.median_s);
            pts.push((t as f64, r.median_s));
            records.push(r);
        }
        if pts.len() >= 2 {
            slopes.insert(p.name().to_string(), loglog_slope(&pts)?);
        }
    }
    // Alternate the two widths and keep the median ratio, so slow drift on the
    // host affects both sides alike.
    let channel_ratio = if opts.channel_probe_len > 0 {
        let mut ratios = Vec::new();
        for round in 0..3 {
            let a = measure(Primitive::Gf, opts.channel_probe_len, opts.channels, opts)?;
            let b = measure(Primitive::Gf, opts.channel_probe_len, 2 * opts.channels, opts)?;
            ratios.push(b.median_s / a.median_s);
            if round == 0 {
                records.push(a);
                records.push(b);
            }
        }
        ratios.sort_by(f64::total_cmp);
        Some(ratios[1])
    } else {
        None
    };
    Ok(BenchReport { records, slopes, channel_ratio })
}

pub fn write_bench_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
