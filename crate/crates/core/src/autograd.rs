//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every node keeps its forward value; ops that need more than their inputs'
//! values for the adjoint (batch norm, spectral filtering, pooling, the margin
//! loss) keep a small cache next to the op record.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rustfft::num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::spectral::{bins_for, interp_weights, irfft_rows, rfft_rows};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const ASP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch-norm statistics computed in a training forward, applied by the caller.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

/// Per-item sparse mask and scale applied inside a dynamic filter op.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseApplied {
    /// `batch × channels`, 1 keeps the dynamic filter row, 0 replaces it.
    pub keep: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv1d { x: Var, w: Var, b: Var, pad: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    BatchNorm(Box<BnCache>),
    Axpby { a: Var, b: Var, alpha: f64, beta: f64 },
    Narrow { x: Var, start: usize },
    Concat(Vec<Var>),
    MeanTime(Var),
    ChannelGate { x: Var, g: Var },
    Linear { x: Var, w: Var, b: Var },
    Softmax(Var),
    AspStats { h: Var, alpha: Var, clamped: Vec<bool> },
    DynamicFilter(Box<DgfCache>),
    AamLoss(Box<AamCache>),
    Sum(Var),
    MulConst { x: Var, c: Tensor },
}

#[derive(Debug)]
struct BnCache {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

#[derive(Debug)]
struct DgfCache {
    x: Var,
    bank: Var,
    scores: Var,
    experts: usize,
    base_bins: usize,
    /// Interpolated experts, `K × C × bins`.
    filters: Vec<Complex64>,
    /// Effective per-item filter after masking, `B × C × bins`.
    effective: Vec<Complex64>,
    spectrum: Vec<Complex64>,
    keep: Option<Vec<f64>>,
}

#[derive(Debug)]
struct AamCache {
    emb: Var,
    weight: Var,
    labels: Vec<usize>,
    emb_unit: Vec<f64>,
    emb_norm: Vec<f64>,
    w_unit: Vec<f64>,
    w_norm: Vec<f64>,
    cosines: Vec<f64>,
    probs: Vec<f64>,
    margin: f64,
    scale: f64,
    classes: usize,
    dim: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    bn_updates: Vec<BnUpdate>,
    sparse: Vec<SparseApplied>,
    kinks: DefaultHasher,
}

/// Gradients keyed by parameter id.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Element-wise sum of two gradient sets.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.grads[i] = Some(match self.grads[i].take() {
                    Some(mine) => mine.add(g)?,
                    None => g.clone(),
                });
            }
        }
        Ok(())
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    // Row-major A is m×k (or k×m when transposed), B is k×n (or n×k).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], ci: usize, t: usize, k: usize, pad: usize, cols: &mut [f64]) {
    for c in 0..ci {
        let row = &x[c * t..(c + 1) * t];
        for j in 0..k {
            let dst = &mut cols[(c * k + j) * t..(c * k + j + 1) * t];
            for (ti, d) in dst.iter_mut().enumerate() {
                let src = ti as isize + j as isize - pad as isize;
                *d = if src >= 0 && (src as usize) < t { row[src as usize] } else { 0.0 };
            }
        }
    }
}

fn col2im(cols: &[f64], ci: usize, t: usize, k: usize, pad: usize, dx: &mut [f64]) {
    for c in 0..ci {
        let row = &mut dx[c * t..(c + 1) * t];
        for j in 0..k {
            let src = &cols[(c * k + j) * t..(c * k + j + 1) * t];
            for (ti, &g) in src.iter().enumerate() {
                let dst = ti as isize + j as isize - pad as isize;
                if dst >= 0 && (dst as usize) < t {
                    row[dst as usize] += g;
                }
            }
        }
    }
}

/// `(batch, channels, frames)` view of a 2-d `batch × channels` or 3-d tensor.
fn bct(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[b, c] => Ok((b, c, 1)),
        &[b, c, f] => Ok((b, c, f)),
        s => shape_err(format!("expected 2-d or 3-d tensor, got {:?}", s)),
    }
}

impl Tape {
    /// `record = false` builds a forward-only tape on which `backward` is refused.
    pub fn new(record: bool) -> Self {
        Self {
            nodes: Vec::new(),
            record,
            bn_updates: Vec::new(),
            sparse: Vec::new(),
            kinks: DefaultHasher::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Masks and scales used by every dynamic filter op, in call order.
    pub fn sparse_applied(&self) -> &[SparseApplied] {
        &self.sparse
    }

    /// Hash of every branch decision taken at a non-smooth point (ReLU signs,
    /// variance floors, margin clamps). Two forwards with equal signatures ran
    /// through the same smooth piece of the loss.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.finish()
    }

    fn note_kinks(&mut self, bits: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut n = 0;
        for b in bits {
            word = (word << 1) | b as u64;
            n += 1;
            if n == 64 {
                self.kinks.write_u64(word);
                word = 0;
                n = 0;
            }
        }
        self.kinks.write_u64(word);
        self.kinks.write_u64(n);
    }

    /// 1-d convolution with stride 1, zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (bs, ci, t) = self.value(x).dims3()?;
        let (co, wci, k) = self.value(w).dims3()?;
        if wci != ci {
            return shape_err(format!("conv weight expects {wci} input channels, got {ci}"));
        }
        if self.value(b).len() != co {
            return shape_err("conv bias length differs from output channels");
        }
        let t_out = t + 2 * pad + 1 - k;
        if t_out != t {
            return shape_err(format!("kernel {k} with padding {pad} does not preserve length"));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = Tensor::zeros(&[bs, co, t]);
        let mut cols = vec![0.0; if k == 1 { 0 } else { ci * k * t }];
        for bi in 0..bs {
            let xs = &xv[bi * ci * t..(bi + 1) * ci * t];
            let dst = out.slab_mut(bi);
            for (o, &bias) in bv.iter().enumerate() {
                dst[o * t..(o + 1) * t].fill(bias);
            }
            let src: &[f64] = if k == 1 {
                xs
            } else {
                im2col(xs, ci, t, k, pad, &mut cols);
                &cols
            };
            gemm(co, ci * k, t, wv, false, src, false, 1.0, dst);
        }
        Ok(self.push(out, Op::Conv1d { x, w, b, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        if self.record {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&a| a > 0.0).collect();
            self.note_kinks(signs.into_iter());
        }
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| 1.0 / (1.0 + (-a).exp()));
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    /// Per-channel batch normalization over batch and frame axes.
    ///
    /// With `batch_stats` the current batch statistics normalize the input and
    /// a running-statistics update is queued; otherwise the running buffers are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: (ParamId, &Tensor),
        running_var: (ParamId, &Tensor),
        batch_stats: bool,
    ) -> Result<Var> {
        let (bs, c, t) = bct(self.value(x))?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return shape_err("batch-norm affine size differs from channel count");
        }
        let xv = self.value(x).data();
        let mut pending = None;
        let (mean, var) = if batch_stats {
            let n = (bs * t) as f64;
            if bs * t < 2 {
                return Err(Error::InvalidInput("batch statistics need at least 2 values per channel".into()));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..bs {
                for ch in 0..c {
                    let row = &xv[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                    mean[ch] += row.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..bs {
                for ch in 0..c {
                    let row = &xv[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                    var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1.0)).collect();
            var.iter_mut().for_each(|v| *v /= n);
            pending = Some(BnUpdate {
                running_mean: running_mean.0,
                running_var: running_var.0,
                batch_mean: mean.clone(),
                batch_var_unbiased: unbiased,
            });
            (mean, var)
        } else {
            (running_mean.1.data().to_vec(), running_var.1.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = Tensor::zeros(self.value(x).shape());
        let mut out = Tensor::zeros(self.value(x).shape());
        for bi in 0..bs {
            for ch in 0..c {
                let off = (bi * c + ch) * t;
                for i in off..off + t {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = h;
                    out.data_mut()[i] = g[ch] * h + be[ch];
                }
            }
        }
        self.bn_updates.extend(pending);
        let cache = BnCache { x, gamma, beta, xhat, inv_std, batch_stats };
        Ok(self.push(out, Op::BatchNorm(Box::new(cache))))
    }

    /// `alpha·a + beta·b`.
    pub fn axpby(&mut self, a: Var, b: Var, alpha: f64, beta: f64) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| alpha * x + beta * y)?;
        Ok(self.push(v, Op::Axpby { a, b, alpha, beta }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpby(a, b, 1.0, 1.0)
    }

    pub fn narrow(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let v = self.value(x).narrow_channels(start, count)?;
        Ok(self.push(v, Op::Narrow { x, start }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::concat_channels(&vals)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Mean over the frame axis: `B × C × T → B × C`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        let xv = self.value(x).data();
        let v = Tensor::from_fn(&[b, c], |i| xv[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64);
        Ok(self.push(v, Op::MeanTime(x)))
    }

    /// `y[b,c,t] = x[b,c,t]·g[b,c]`.
    pub fn channel_gate(&mut self, x: Var, g: Var) -> Result<Var> {
        let (b, c, t) = self.value(x).dims3()?;
        if self.value(g).shape() != [b, c] {
            return shape_err("gate shape differs from batch × channels");
        }
        let gv = self.value(g).data();
        let xv = self.value(x).data();
        let v = Tensor::from_fn(&[b, c, t], |i| xv[i] * gv[i / t]);
        Ok(self.push(v, Op::ChannelGate { x, g }))
    }

    /// `y = x·Wᵀ + b` for `x: B × I`, `W: O × I`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bs, i) = self.value(x).dims2()?;
        let (o, wi) = self.value(w).dims2()?;
        if wi != i || self.value(b).len() != o {
            return shape_err(format!("linear {o}x{wi} applied to input width {i}"));
        }
        let mut out = Tensor::zeros(&[bs, o]);
        let bv = self.value(b).data();
        for r in 0..bs {
            out.slab_mut(r).copy_from_slice(bv);
        }
        gemm(bs, i, o, self.value(x).data(), false, self.value(w).data(), true, 1.0, out.data_mut());
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let last = *xv.shape().last().ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(last) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Attention-weighted mean and standard deviation over frames.
    ///
    /// `h: B × C × T`, `alpha: B × 1 × T` → `B × 2C` laid out as `[μ̃ | σ̃]`, with
    /// `σ̃ = sqrt(max(Σα h² − μ̃², ε))`.
    pub fn asp_stats(&mut self, h: Var, alpha: Var) -> Result<Var> {
        let (b, c, t) = self.value(h).dims3()?;
        if self.value(alpha).shape() != [b, 1, t] {
            return shape_err("attention weights must be B × 1 × T");
        }
        let hv = self.value(h).data();
        let av = self.value(alpha).data();
        let mut out = Tensor::zeros(&[b, 2 * c]);
        let mut clamped = vec![false; b * c];
        for bi in 0..b {
            let a = &av[bi * t..(bi + 1) * t];
            for ch in 0..c {
                let row = &hv[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                let mu: f64 = row.iter().zip(a).map(|(x, w)| x * w).sum();
                let sq: f64 = row.iter().zip(a).map(|(x, w)| x * x * w).sum();
                let var = sq - mu * mu;
                let floor = var <= ASP_EPS;
                clamped[bi * c + ch] = floor;
                out.data_mut()[bi * 2 * c + ch] = mu;
                out.data_mut()[bi * 2 * c + c + ch] = if floor { ASP_EPS.sqrt() } else { var.sqrt() };
            }
        }
        if self.record {
            self.note_kinks(clamped.clone().into_iter());
        }
        Ok(self.push(out, Op::AspStats { h, alpha, clamped }))
    }

    /// Dynamic global-aware filtering of `x: B × C × T`.
    ///
    /// `bank` holds `K × C × B₀ × 2` expert filters sampled for `B₀` bins and is
    /// linearly resampled to the bin count of `T`. `scores: B × K` mixes the
    /// experts per item. With `sparse`, channel rows where `keep = 0` are
    /// replaced by an all-pass filter of gain `λ`, where `λ` is the mean
    /// magnitude of the item's mixed filter unless supplied explicitly.
    pub fn dynamic_filter(
        &mut self,
        x: Var,
        bank: Var,
        scores: Var,
        sparse: Option<(Vec<f64>, Option<Vec<f64>>)>,
    ) -> Result<Var> {
        let (bs, c, t) = self.value(x).dims3()?;
        let bank_shape = self.value(bank).shape().to_vec();
        let (k, base_bins) = match bank_shape.as_slice() {
            &[k, bc, bb, 2] if bc == c => (k, bb),
            s => return shape_err(format!("filter bank {:?} does not fit {c} channels", s)),
        };
        if self.value(scores).shape() != [bs, k] {
            return shape_err(format!("scores {:?} vs batch {bs}, experts {k}", self.value(scores).shape()));
        }
        let nb = bins_for(t);
        let raw = self.value(bank).data();
        let weights = interp_weights(base_bins, nb);
        let mut filters = Vec::with_capacity(k * c * nb);
        for row in 0..k * c {
            let base = &raw[row * base_bins * 2..(row + 1) * base_bins * 2];
            let at = |i: usize| Complex64::new(base[2 * i], base[2 * i + 1]);
            if base_bins == nb {
                filters.extend((0..nb).map(at));
            } else {
                filters.extend(weights.iter().map(|&(lo, hi, a)| at(lo) * (1.0 - a) + at(hi) * a));
            }
        }
        let sv = self.value(scores).data();
        let plane = c * nb;
        let mut effective = vec![Complex64::new(0.0, 0.0); bs * plane];
        for bi in 0..bs {
            let dst = &mut effective[bi * plane..(bi + 1) * plane];
            for e in 0..k {
                let w = sv[bi * k + e];
                for (d, f) in dst.iter_mut().zip(&filters[e * plane..(e + 1) * plane]) {
                    *d += f * w;
                }
            }
        }
        let keep = if let Some((keep, lambda)) = sparse {
            if keep.len() != bs * c {
                return shape_err("sparse mask must be batch × channels");
            }
            let lambda = match lambda {
                Some(l) if l.len() == bs => l,
                Some(_) => return shape_err("one sparse scale per batch item is required"),
                None => (0..bs)
                    .map(|bi| {
                        effective[bi * plane..(bi + 1) * plane].iter().map(|z| z.norm()).sum::<f64>()
                            / plane as f64
                    })
                    .collect(),
            };
            for bi in 0..bs {
                for ch in 0..c {
                    if keep[bi * c + ch] == 0.0 {
                        let row = &mut effective[(bi * c + ch) * nb..(bi * c + ch + 1) * nb];
                        row.fill(Complex64::new(lambda[bi], 0.0));
                    }
                }
            }
            self.sparse.push(SparseApplied { keep: keep.clone(), lambda });
            Some(keep)
        } else {
            None
        };
        let mut spectrum = rfft_rows(self.value(x).data(), t);
        let mut modulated = spectrum.clone();
        for (z, f) in modulated.iter_mut().zip(&effective) {
            *z *= f;
        }
        let out = Tensor::from_vec(&[bs, c, t], irfft_rows(&modulated, t))?;
        if !self.record {
            spectrum = Vec::new();
        }
        let cache = DgfCache { x, bank, scores, experts: k, base_bins, filters, effective, spectrum, keep };
        Ok(self.push(out, Op::DynamicFilter(Box::new(cache))))
    }

    /// Additive angular margin softmax loss, averaged over the batch.
    ///
    /// Returns the scalar loss node and the margin-free cosine matrix `B × N`.
    pub fn aam_loss(
        &mut self,
        emb: Var,
        weight: Var,
        labels: &[usize],
        margin: f64,
        scale: f64,
    ) -> Result<(Var, Tensor)> {
        let (bs, d) = self.value(emb).dims2()?;
        let (n, wd) = self.value(weight).dims2()?;
        if wd != d {
            return shape_err(format!("class weights have width {wd}, embeddings {d}"));
        }
        if labels.len() != bs {
            return shape_err("one label per embedding is required");
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::InvalidInput(format!("label {bad} outside {n} classes")));
        }
        let normalize = |data: &[f64], rows: usize| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut unit = data.to_vec();
            let mut norms = Vec::with_capacity(rows);
            for r in unit.chunks_exact_mut(d) {
                let nrm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(nrm > 1e-12) || !nrm.is_finite() {
                    return Err(Error::Numeric("zero or non-finite vector in margin loss".into()));
                }
                r.iter_mut().for_each(|v| *v /= nrm);
                norms.push(nrm);
            }
            Ok((unit, norms))
        };
        let (emb_unit, emb_norm) = normalize(self.value(emb).data(), bs)?;
        let (w_unit, w_norm) = normalize(self.value(weight).data(), n)?;
        let mut cosines = vec![0.0; bs * n];
        gemm(bs, d, n, &emb_unit, false, &w_unit, true, 0.0, &mut cosines);
        let mut probs = vec![0.0; bs * n];
        let mut loss = 0.0;
        let mut clamps = Vec::with_capacity(bs);
        for bi in 0..bs {
            let y = labels[bi];
            let row = &cosines[bi * n..(bi + 1) * n];
            let p = &mut probs[bi * n..(bi + 1) * n];
            for j in 0..n {
                p[j] = scale * if j == y { margin_cos(row[j], margin).0 } else { row[j] };
            }
            clamps.push(margin_cos(row[y], margin).2);
            let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + p.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - p[y];
            p.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        loss /= bs as f64;
        if self.record {
            self.note_kinks(clamps.into_iter());
        }
        let logits = Tensor::from_vec(&[bs, n], cosines.clone())?;
        let cache = AamCache {
            emb,
            weight,
            labels: labels.to_vec(),
            emb_unit,
            emb_norm,
            w_unit,
            w_norm,
            cosines,
            probs,
            margin,
            scale,
            classes: n,
            dim: d,
        };
        let node = self.push(Tensor::full(&[1], loss), Op::AamLoss(Box::new(cache)));
        Ok((node, logits))
    }

    /// Element-wise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let v = self.value(x).zip_map(&c, |a, b| a * b)?;
        Ok(self.push(v, Op::MulConst { x, c }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::full(&[1], s), Op::Sum(x))
    }

    /// Gradients of scalar node `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_full(loss).map(|(g, _)| g)
    }

    /// Like [`Tape::backward`] but also returns the adjoints of every node.
    pub fn backward_full(&self, loss: Var) -> Result<(Gradients, Vec<Option<Tensor>>)> {
        if !self.record {
            return Err(Error::Contract("backward on a tape that did not record the forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar loss");
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut params: Vec<Option<Tensor>> = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if params.len() <= id.0 {
                        params.resize(id.0 + 1, None);
                    }
                    acc_slot(&mut params[id.0], g.clone());
                }
                op => self.backward_op(op, &node.value, &g, &mut adj)?,
            }
            adj[idx] = Some(g);
        }
        Ok((Gradients { grads: params }, adj))
    }

    fn backward_op(&self, op: &Op, out: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d { x, w, b, pad } => {
                let (bs, ci, t) = self.value(*x).dims3()?;
                let (co, _, k) = self.value(*w).dims3()?;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = Tensor::zeros(&[bs, ci, t]);
                let mut dw = vec![0.0; co * ci * k];
                let mut db = vec![0.0; co];
                let mut cols = vec![0.0; ci * k * t];
                let mut dcols = vec![0.0; ci * k * t];
                for bi in 0..bs {
                    let gy = g.slab(bi);
                    for o in 0..co {
                        db[o] += gy[o * t..(o + 1) * t].iter().sum::<f64>();
                    }
                    let xs = &xv[bi * ci * t..(bi + 1) * ci * t];
                    if k == 1 {
                        gemm(co, t, ci, gy, false, xs, true, 1.0, &mut dw);
                        gemm(ci, co, t, wv, true, gy, false, 0.0, dx.slab_mut(bi));
                    } else {
                        im2col(xs, ci, t, k, *pad, &mut cols);
                        gemm(co, t, ci * k, gy, false, &cols, true, 1.0, &mut dw);
                        gemm(ci * k, co, t, wv, true, gy, false, 0.0, &mut dcols);
                        col2im(&dcols, ci, t, k, *pad, dx.slab_mut(bi));
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *w, Tensor::from_vec(&[co, ci, k], dw)?);
                acc(adj, *b, Tensor::from_vec(&[co], db)?);
            }
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                acc(adj, *x, d);
            }
            Op::Sigmoid(x) => {
                acc(adj, *x, g.zip_map(out, |gv, s| gv * s * (1.0 - s))?);
            }
            Op::Tanh(x) => {
                acc(adj, *x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))?);
            }
            Op::BatchNorm(c) => {
                let (bs, ch, t) = bct(&c.xhat)?;
                let gamma = self.value(c.gamma).data();
                let gd = g.data();
                let xh = c.xhat.data();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for bi in 0..bs {
                    for j in 0..ch {
                        let off = (bi * ch + j) * t;
                        for i in off..off + t {
                            dgamma[j] += gd[i] * xh[i];
                            dbeta[j] += gd[i];
                        }
                    }
                }
                let mut dx = Tensor::zeros(c.xhat.shape());
                let n = (bs * t) as f64;
                for bi in 0..bs {
                    for j in 0..ch {
                        let off = (bi * ch + j) * t;
                        for i in off..off + t {
                            dx.data_mut()[i] = if c.batch_stats {
                                gamma[j] * c.inv_std[j] * (gd[i] - dbeta[j] / n - xh[i] * dgamma[j] / n)
                            } else {
                                gamma[j] * c.inv_std[j] * gd[i]
                            };
                        }
                    }
                }
                acc(adj, c.x, dx);
                acc(adj, c.gamma, Tensor::from_vec(&[ch], dgamma)?);
                acc(adj, c.beta, Tensor::from_vec(&[ch], dbeta)?);
            }
            Op::Axpby { a, b, alpha, beta } => {
                acc(adj, *a, g.scale(*alpha));
                acc(adj, *b, g.scale(*beta));
            }
            Op::Narrow { x, start } => {
                let (bs, c, t) = self.value(*x).dims3()?;
                let (_, n, _) = g.dims3()?;
                let mut dx = Tensor::zeros(&[bs, c, t]);
                for bi in 0..bs {
                    dx.slab_mut(bi)[start * t..(start + n) * t].copy_from_slice(g.slab(bi));
                }
                acc(adj, *x, dx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let (_, c, _) = self.value(*p).dims3()?;
                    acc(adj, *p, g.narrow_channels(off, c)?);
                    off += c;
                }
            }
            Op::MeanTime(x) => {
                let (b, c, t) = self.value(*x).dims3()?;
                let gd = g.data();
                acc(adj, *x, Tensor::from_fn(&[b, c, t], |i| gd[i / t] / t as f64));
            }
            Op::ChannelGate { x, g: gate } => {
                let (b, c, t) = self.value(*x).dims3()?;
                let xv = self.value(*x).data();
                let gv = self.value(*gate).data();
                let gd = g.data();
                acc(adj, *x, Tensor::from_fn(&[b, c, t], |i| gd[i] * gv[i / t]));
                let dg = Tensor::from_fn(&[b, c], |r| {
                    (r * t..(r + 1) * t).map(|i| gd[i] * xv[i]).sum()
                });
                acc(adj, *gate, dg);
            }
            Op::Linear { x, w, b } => {
                let (bs, i) = self.value(*x).dims2()?;
                let (o, _) = self.value(*w).dims2()?;
                let mut dx = Tensor::zeros(&[bs, i]);
                gemm(bs, o, i, g.data(), false, self.value(*w).data(), false, 0.0, dx.data_mut());
                let mut dw = Tensor::zeros(&[o, i]);
                gemm(o, bs, i, g.data(), true, self.value(*x).data(), false, 0.0, dw.data_mut());
                let db = Tensor::from_fn(&[o], |j| (0..bs).map(|r| g.data()[r * o + j]).sum());
                acc(adj, *x, dx);
                acc(adj, *w, dw);
                acc(adj, *b, db);
            }
            Op::Softmax(x) => {
                let last = *out.shape().last().unwrap_or(&1);
                let mut dx = Tensor::zeros(out.shape());
                for ((dr, yr), gr) in dx
                    .data_mut()
                    .chunks_exact_mut(last)
                    .zip(out.data().chunks_exact(last))
                    .zip(g.data().chunks_exact(last))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (gv - dot);
                    }
                }
                acc(adj, *x, dx);
            }
            Op::AspStats { h, alpha, clamped } => {
                let (b, c, t) = self.value(*h).dims3()?;
                let hv = self.value(*h).data();
                let av = self.value(*alpha).data();
                let gd = g.data();
                let od = out.data();
                let mut dh = Tensor::zeros(&[b, c, t]);
                let mut da = Tensor::zeros(&[b, 1, t]);
                for bi in 0..b {
                    for ch in 0..c {
                        let mu = od[bi * 2 * c + ch];
                        let sigma = od[bi * 2 * c + c + ch];
                        let gmu = gd[bi * 2 * c + ch];
                        let gsig = if clamped[bi * c + ch] { 0.0 } else { gd[bi * 2 * c + c + ch] };
                        // σ² = Σαh² − μ², so ∂σ/∂μ = −μ/σ and ∂σ/∂(Σαh²) = 1/(2σ).
                        let gmu_total = gmu - if gsig != 0.0 { gsig * mu / sigma } else { 0.0 };
                        let gsq = if gsig != 0.0 { gsig / (2.0 * sigma) } else { 0.0 };
                        let off = (bi * c + ch) * t;
                        for ti in 0..t {
                            let hx = hv[off + ti];
                            let a = av[bi * t + ti];
                            dh.data_mut()[off + ti] = a * (gmu_total + 2.0 * gsq * hx);
                            da.data_mut()[bi * t + ti] += gmu_total * hx + gsq * hx * hx;
                        }
                    }
                }
                acc(adj, *h, dh);
                acc(adj, *alpha, da);
            }
            Op::DynamicFilter(c) => self.backward_dgf(c, g, adj)?,
            Op::AamLoss(c) => self.backward_aam(c, g.data()[0], adj)?,
            Op::MulConst { x, c } => {
                acc(adj, *x, g.zip_map(c, |a, b| a * b)?);
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                acc(adj, *x, Tensor::full(self.value(*x).shape(), s));
            }
        }
        Ok(())
    }

    fn backward_dgf(&self, c: &DgfCache, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let (bs, ch, t) = g.dims3()?;
        let nb = bins_for(t);
        let plane = ch * nb;
        let k = c.experts;
        let gy = rfft_rows(g.data(), t);
        // Adjoint of the input: irfft(rfft(dy) ⊙ conj(F)).
        let mut gx = gy.clone();
        for (z, f) in gx.iter_mut().zip(&c.effective) {
            *z *= f.conj();
        }
        acc(adj, c.x, Tensor::from_vec(&[bs, ch, t], irfft_rows(&gx, t))?);

        // Adjoint of the effective filter: (c_k/T)·rfft(dy) ⊙ conj(X), with c_k = 1
        // on the DC and Nyquist bins and 2 elsewhere.
        let inv_t = 1.0 / t as f64;
        let mut gfilt = vec![Complex64::new(0.0, 0.0); bs * plane];
        for (i, gf) in gfilt.iter_mut().enumerate() {
            let bin = i % nb;
            let weight = if bin == 0 || 2 * bin == t { inv_t } else { 2.0 * inv_t };
            *gf = gy[i] * c.spectrum[i].conj() * weight;
        }
        if let Some(keep) = &c.keep {
            for (row, &kv) in keep.iter().enumerate() {
                if kv == 0.0 {
                    gfilt[row * nb..(row + 1) * nb].fill(Complex64::new(0.0, 0.0));
                }
            }
        }
        let sv = self.value(c.scores).data();
        let mut dscores = Tensor::zeros(&[bs, k]);
        let mut dfilters = vec![Complex64::new(0.0, 0.0); k * plane];
        for bi in 0..bs {
            let gf = &gfilt[bi * plane..(bi + 1) * plane];
            for e in 0..k {
                let fe = &c.filters[e * plane..(e + 1) * plane];
                dscores.data_mut()[bi * k + e] =
                    gf.iter().zip(fe).map(|(a, f)| a.re * f.re + a.im * f.im).sum();
                let w = sv[bi * k + e];
                for (d, a) in dfilters[e * plane..(e + 1) * plane].iter_mut().zip(gf) {
                    *d += a * w;
                }
            }
        }
        acc(adj, c.scores, dscores);

        let bb = c.base_bins;
        let mut dbank = vec![0.0; k * ch * bb * 2];
        let weights = interp_weights(bb, nb);
        for row in 0..k * ch {
            let src = &dfilters[row * nb..(row + 1) * nb];
            let dst = &mut dbank[row * bb * 2..(row + 1) * bb * 2];
            if bb == nb {
                for (i, z) in src.iter().enumerate() {
                    dst[2 * i] += z.re;
                    dst[2 * i + 1] += z.im;
                }
            } else {
                for (z, &(lo, hi, a)) in src.iter().zip(&weights) {
                    dst[2 * lo] += z.re * (1.0 - a);
                    dst[2 * lo + 1] += z.im * (1.0 - a);
                    dst[2 * hi] += z.re * a;
                    dst[2 * hi + 1] += z.im * a;
                }
            }
        }
        acc(adj, c.bank, Tensor::from_vec(&[k, ch, bb, 2], dbank)?);
        Ok(())
    }

    fn backward_aam(&self, c: &AamCache, g: f64, adj: &mut [Option<Tensor>]) -> Result<()> {
        let bs = c.labels.len();
        let (n, d) = (c.classes, c.dim);
        // dL/dcos for every (item, class) pair.
        let mut dcos = vec![0.0; bs * n];
        for bi in 0..bs {
            let y = c.labels[bi];
            for j in 0..n {
                let dz = (c.probs[bi * n + j] - if j == y { 1.0 } else { 0.0 }) * g / bs as f64;
                let dlogit = if j == y { margin_cos(c.cosines[bi * n + j], c.margin).1 } else { 1.0 };
                dcos[bi * n + j] = dz * c.scale * dlogit;
            }
        }
        let mut de_unit = vec![0.0; bs * d];
        gemm(bs, n, d, &dcos, false, &c.w_unit, false, 0.0, &mut de_unit);
        let mut dw_unit = vec![0.0; n * d];
        gemm(n, bs, d, &dcos, true, &c.emb_unit, false, 0.0, &mut dw_unit);
        let unnormalize = |unit: &[f64], du: &[f64], norms: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; unit.len()];
            for (r, nrm) in norms.iter().enumerate() {
                let u = &unit[r * d..(r + 1) * d];
                let g = &du[r * d..(r + 1) * d];
                let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    out[r * d + i] = (g[i] - u[i] * dot) / nrm;
                }
            }
            out
        };
        acc(adj, c.emb, Tensor::from_vec(&[bs, d], unnormalize(&c.emb_unit, &de_unit, &c.emb_norm))?);
        acc(adj, c.weight, Tensor::from_vec(&[n, d], unnormalize(&c.w_unit, &dw_unit, &c.w_norm))?);
        Ok(())
    }
}

/// `cos(min(θ + m, π))` with `θ = acos(c)`, its derivative in `c`, and whether
/// the angle was clamped at π.
pub(crate) fn margin_cos(cosine: f64, margin: f64) -> (f64, f64, bool) {
    if margin == 0.0 {
        return (cosine, 1.0, false);
    }
    let c = cosine.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    let theta = c.acos();
    if theta + margin >= std::f64::consts::PI {
        return (-1.0, 0.0, true);
    }
    let sin_theta = (1.0 - c * c).sqrt();
    ((theta + margin).cos(), (theta + margin).sin() / sin_theta, false)
}

fn acc_slot(slot: &mut Option<Tensor>, g: Tensor) {
    *slot = Some(match slot.take() {
        Some(mut prev) => {
            for (p, v) in prev.data_mut().iter_mut().zip(g.data()) {
                *p += v;
            }
            prev
        }
        None => g,
    });
}

fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    acc_slot(&mut adj[v.0], g);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Compares the adjoint of every leaf against central differences of
    /// `Σ probe ⊙ build(leaves)`.
    fn check(leaves: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let run = |vals: &[Tensor], backward: bool| {
            let mut t = Tape::new(true);
            let vars: Vec<Var> = vals.iter().map(|v| t.input(v.clone())).collect();
            let y = build(&mut t, &vars);
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            let probe = rand_t(&mut rng, t.value(y).shape());
            let w = t.mul_const(y, probe).unwrap();
            let s = t.sum(w);
            let loss = t.value(s).data()[0];
            let adj = if backward {
                let (_, adj) = t.backward_full(s).unwrap();
                vars.iter().map(|v| adj[v.0].clone().unwrap_or_else(|| Tensor::zeros(vals[v.0].shape()))).collect()
            } else {
                Vec::new()
            };
            (loss, adj)
        };
        let (_, analytic) = run(&leaves, true);
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            for i in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[i] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[i] -= h;
                let fd = (run(&plus, false).0 - run(&minus, false).0) / (2.0 * h);
                let a = analytic[li].data()[i];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                    "leaf {li} index {i}: finite difference {fd} vs analytic {a}"
                );
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, pad) in [(1, 0), (3, 1), (7, 3)] {
            let leaves = vec![rand_t(&mut rng, &[2, 3, 9]), rand_t(&mut rng, &[4, 3, k]), rand_t(&mut rng, &[4])];
            check(leaves, |t, v| t.conv1d(v[0], v[1], v[2], pad).unwrap());
        }
    }

    #[test]
    fn pointwise_and_reshaping_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_t(&mut rng, &[2, 4, 5]);
        check(vec![x.clone()], |t, v| t.tanh(v[0]));
        check(vec![x.clone()], |t, v| t.sigmoid(v[0]));
        check(vec![x.clone()], |t, v| t.softmax(v[0]).unwrap());
        check(vec![x.clone(), rand_t(&mut rng, &[2, 4, 5])], |t, v| t.axpby(v[0], v[1], 0.8, 0.2).unwrap());
        check(vec![x.clone()], |t, v| {
            let a = t.narrow(v[0], 1, 2).unwrap();
            let b = t.narrow(v[0], 0, 3).unwrap();
            t.concat(&[a, b]).unwrap()
        });
        check(vec![x.clone(), rand_t(&mut rng, &[2, 4])], |t, v| t.channel_gate(v[0], v[1]).unwrap());
        check(vec![x], |t, v| t.mean_time(v[0]).unwrap());
        check(
            vec![rand_t(&mut rng, &[3, 5]), rand_t(&mut rng, &[2, 5]), rand_t(&mut rng, &[2])],
            |t, v| t.linear(v[0], v[1], v[2]).unwrap(),
        );
    }

    #[test]
    fn batch_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rm = Tensor::from_fn(&[3], |i| 0.1 * i as f64);
        let rv = Tensor::from_fn(&[3], |i| 1.0 + i as f64);
        for batch_stats in [true, false] {
            let leaves = vec![rand_t(&mut rng, &[2, 3, 4]), rand_t(&mut rng, &[3]), rand_t(&mut rng, &[3])];
            check(leaves, |t, v| {
                t.batch_norm(v[0], v[1], v[2], (ParamId(0), &rm), (ParamId(1), &rv), batch_stats).unwrap()
            });
        }
        let leaves = vec![rand_t(&mut rng, &[4, 3]), rand_t(&mut rng, &[3]), rand_t(&mut rng, &[3])];
        check(leaves, |t, v| t.batch_norm(v[0], v[1], v[2], (ParamId(0), &rm), (ParamId(1), &rv), true).unwrap());
    }

    #[test]
    fn asp_stats_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let leaves = vec![rand_t(&mut rng, &[2, 3, 6]), rand_t(&mut rng, &[2, 1, 6])];
        check(leaves, |t, v| {
            let a = t.softmax(v[1]).unwrap();
            t.asp_stats(v[0], a).unwrap()
        });
    }

    #[test]
    fn dynamic_filter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (t_len, base) in [(8usize, 5usize), (9, 5), (12, 4)] {
            let leaves = vec![
                rand_t(&mut rng, &[2, 3, t_len]),
                rand_t(&mut rng, &[2, 3, base, 2]),
                rand_t(&mut rng, &[2, 2]),
            ];
            check(leaves.clone(), |t, v| t.dynamic_filter(v[0], v[1], v[2], None).unwrap());
            let keep = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
            check(leaves, move |t, v| {
                t.dynamic_filter(v[0], v[1], v[2], Some((keep.clone(), Some(vec![0.7, 1.3])))).unwrap()
            });
        }
    }

    #[test]
    fn aam_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for margin in [0.0, 0.2] {
            let leaves = vec![rand_t(&mut rng, &[3, 4]), rand_t(&mut rng, &[5, 4])];
            check(leaves, |t, v| t.aam_loss(v[0], v[1], &[0, 3, 3], margin, 30.0).unwrap().0);
        }
    }

    #[test]
    fn backward_without_recording_is_contract_violation() {
        let mut t = Tape::new(false);
        let x = t.input(Tensor::full(&[1], 2.0));
        let s = t.sum(x);
        assert!(matches!(t.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn all_pass_filter_passes_unit_gradient() {
        let mut store = ParamStore::new();
        let mut bank = Tensor::zeros(&[1, 3, 6, 2]);
        for i in 0..18 {
            bank.data_mut()[2 * i] = 1.0;
        }
        let id = store.add("bank", ParamKind::Filter, bank);
        let mut t = Tape::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t.input(rand_t(&mut rng, &[2, 3, 10]));
        let bank = t.param(&store, id);
        let w = t.input(Tensor::full(&[2, 1], 1.0));
        let y = t.dynamic_filter(x, bank, w, None).unwrap();
        assert!(t.value(y).rel_diff(t.value(x)) < 1e-12);
        let s = t.sum(y);
        let (_, adj) = t.backward_full(s).unwrap();
        let gx = adj[x.0].as_ref().unwrap();
        assert!(gx.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
