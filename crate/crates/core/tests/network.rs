use dstdnn::autograd::{Tape, BN_EPS};
use dstdnn::network::*;
use dstdnn::params::ParamStore;
use dstdnn::tensor::Tensor;
use dstdnn::{Error, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn tiny(n: usize) -> ModelConfig {
    ModelConfig {
        channels: 8,
        scales: vec![2; n],
        experts: vec![2; n],
        sparse_ratios: vec![0.3; n],
        mfa_dim: 32,
        embedding_dim: 192,
        ..ModelConfig::toy()
    }
}

fn set(store: &mut ParamStore, name: &str, t: Tensor) {
    store.set(name, t).unwrap();
}

/// Batch norm that is the identity in eval mode.
fn identity_bn(store: &mut ParamStore, prefix: &str) {
    let c = store.by_name(&format!("{prefix}.weight")).unwrap().len();
    set(store, &format!("{prefix}.weight"), Tensor::full(&[c], 1.0));
    set(store, &format!("{prefix}.bias"), Tensor::zeros(&[c]));
    set(store, &format!("{prefix}.running_mean"), Tensor::zeros(&[c]));
    set(store, &format!("{prefix}.running_var"), Tensor::full(&[c], 1.0 - BN_EPS));
}

fn identity_conv(store: &mut ParamStore, prefix: &str) {
    let shape = store.by_name(&format!("{prefix}.weight")).unwrap().shape().to_vec();
    let (co, ci, k) = (shape[0], shape[1], shape[2]);
    set(store, &format!("{prefix}.weight"), Tensor::from_fn(&shape, |i| {
        let (o, rest) = (i / (ci * k), i % (ci * k));
        f64::from(o == rest / k && rest % k == k / 2)
    }));
    set(store, &format!("{prefix}.bias"), Tensor::zeros(&[co]));
}

fn identity_proj(store: &mut ParamStore, prefix: &str) {
    identity_conv(store, &format!("{prefix}.conv"));
    identity_bn(store, &format!("{prefix}.bn"));
}

fn model(cfg: &ModelConfig, seed: u64) -> Model {
    Model::new(cfg, &mut rng(seed)).unwrap()
}

fn close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max diff {d}");
}

#[test]
fn stem_shapes_zero_and_split() {
    let cfg = tiny(1);
    let mut m = model(&cfg, 1);
    let mut tape = Tape::new(false);
    let x = tape.input(random(&[2, 80, 50], 2));
    let (l, g) = m.net.stem(&mut tape, &m.store, x, false).unwrap();
    assert_eq!(tape.value(l).shape(), &[2, 4, 50]);
    assert_eq!(tape.value(g).shape(), &[2, 4, 50]);

    // Concatenating the halves gives the unsplit stem output.
    let whole = m.net.stem.forward(&mut tape, &m.store, x, false).unwrap();
    let cat = Tensor::concat_channels(&[tape.value(l), tape.value(g)]).unwrap();
    assert_eq!(&cat, tape.value(whole));

    set(&mut m.store, "stem.conv.bias", Tensor::zeros(&[8]));
    identity_bn(&mut m.store, "stem.bn");
    let z = tape.input(Tensor::zeros(&[1, 80, 50]));
    let (l, g) = m.net.stem(&mut tape, &m.store, z, false).unwrap();
    assert_eq!(tape.value(l).max_abs(), 0.0);
    assert_eq!(tape.value(g).max_abs(), 0.0);

    let wrong = tape.input(Tensor::zeros(&[1, 40, 50]));
    assert!(matches!(m.net.stem(&mut tape, &m.store, wrong, false), Err(Error::Shape(_))));
    assert!(matches!(Model::new(&ModelConfig { channels: 7, ..tiny(1) }, &mut rng(0)), Err(Error::Config(_))));
}

#[test]
fn res2conv_cases() {
    // s = 1: single passthrough group.
    let cfg = ModelConfig { scales: vec![1], ..tiny(1) };
    let m = model(&cfg, 3);
    let mut tape = Tape::new(false);
    let xt = random(&[1, 4, 5], 4);
    let x = tape.input(xt.clone());
    let y = m.net.local[0].res2.forward(&mut tape, &m.store, x, false).unwrap();
    assert_eq!(tape.value(y), &xt);

    // s = 2 with an identity kernel and identity batch norm.
    let cfg = tiny(1);
    let mut m = model(&cfg, 5);
    identity_conv(&mut m.store, "local.0.res2.1.conv");
    identity_bn(&mut m.store, "local.0.res2.1.bn");
    let x = tape.input(xt.clone());
    let y = m.net.local[0].res2.forward(&mut tape, &m.store, x, false).unwrap();
    let d = xt.data();
    let mut expect = d.to_vec();
    for i in 0..2 {
        for t in 0..5 {
            expect[(2 + i) * 5 + t] = (d[(2 + i) * 5 + t] + d[i * 5 + t]).max(0.0);
        }
    }
    close(tape.value(y), &Tensor::from_vec(&[1, 4, 5], expect).unwrap(), 1e-12);

    // Zero input with zero biases stays zero.
    set(&mut m.store, "local.0.res2.1.conv.bias", Tensor::zeros(&[2]));
    let z = tape.input(Tensor::zeros(&[1, 4, 5]));
    let y = m.net.local[0].res2.forward(&mut tape, &m.store, z, false).unwrap();
    assert_eq!(tape.value(y).max_abs(), 0.0);

    let bad = ModelConfig { scales: vec![3], ..tiny(1) };
    assert!(matches!(Model::new(&bad, &mut rng(0)), Err(Error::Config(_))));
}

#[test]
fn se_gates() {
    let cfg = tiny(1);
    let mut m = model(&cfg, 6);
    let xt = random(&[2, 4, 9], 7);
    let mut tape = Tape::new(false);

    let fresh_gates = |m: &Model, tape: &mut Tape, x: &Tensor| {
        let v = tape.input(x.clone());
        let g = m.net.local[0].se.gates(tape, &m.store, v).unwrap();
        tape.value(g).clone()
    };
    // Frame order does not affect the gates.
    let perm: Vec<usize> = vec![3, 8, 0, 5, 1, 7, 2, 6, 4];
    let d = xt.data();
    let permuted = Tensor::from_fn(&[2, 4, 9], |i| d[i - i % 9 + perm[i % 9]]);
    close(&fresh_gates(&m, &mut tape, &xt), &fresh_gates(&m, &mut tape, &permuted), 1e-12);

    for n in ["local.0.se.fc1", "local.0.se.fc2"] {
        let shape = m.store.by_name(&format!("{n}.weight")).unwrap().shape().to_vec();
        set(&mut m.store, &format!("{n}.weight"), Tensor::zeros(&shape));
        set(&mut m.store, &format!("{n}.bias"), Tensor::zeros(&[shape[0]]));
    }
    let x = tape.input(xt.clone());
    let y = m.net.local[0].se.forward(&mut tape, &m.store, x).unwrap();
    close(tape.value(y), &xt.scale(0.5), 1e-15);

    // Hand-set gates (0, 1, 0, 1) via saturated biases.
    set(&mut m.store, "local.0.se.fc2.bias", Tensor::from_vec(&[4], vec![-800.0, 800.0, -800.0, 800.0]).unwrap());
    let x = tape.input(xt.clone());
    let y = m.net.local[0].se.forward(&mut tape, &m.store, x).unwrap();
    let out = tape.value(y).data();
    for b in 0..2 {
        for c in 0..4 {
            for t in 0..9 {
                let i = (b * 4 + c) * 9 + t;
                let want = if c % 2 == 0 { 0.0 } else { d[i] };
                assert_eq!(out[i], want);
            }
        }
    }
}

#[test]
fn local_block_reduces_to_se_of_res2() {
    let cfg = tiny(1);
    let mut m = model(&cfg, 8);
    identity_proj(&mut m.store, "local.0.proj1");
    identity_proj(&mut m.store, "local.0.proj2");
    // Projections include ReLU, so use non-negative input; Res2Conv outputs are non-negative too.
    let xt = random(&[2, 4, 12], 9).map(f64::abs);
    let mut tape = Tape::new(false);
    let x = tape.input(xt.clone());
    let y = m.net.local[0].forward(&mut tape, &m.store, x, false).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 4, 12]);
    let x2 = tape.input(xt);
    let r = m.net.local[0].res2.forward(&mut tape, &m.store, x2, false).unwrap();
    let s = m.net.local[0].se.forward(&mut tape, &m.store, r).unwrap();
    close(tape.value(y), tape.value(s), 1e-12);
}

#[test]
fn global_block_behaviour() {
    let cfg = ModelConfig { experts: vec![1], ..tiny(1) };
    let mut m = model(&cfg, 10);
    identity_proj(&mut m.store, "global.0.proj1");
    identity_proj(&mut m.store, "global.0.proj2");
    let bins = dstdnn::spectral::bins_for(cfg.filter_frames);
    set(&mut m.store, "global.0.dgf.filters", Tensor::from_fn(&[1, 4, bins, 2], |i| f64::from(i % 2 == 0)));
    let xt = random(&[2, 4, 37], 11).map(f64::abs);
    let mut tape = Tape::new(false);
    let x = tape.input(xt.clone());
    let y = m.net.global[0].forward(&mut tape, &m.store, x, false, &mut Sparsity::Off).unwrap();
    close(tape.value(y), &xt.scale(2.0), 1e-12);

    let m = model(&tiny(1), 12);
    let xt = random(&[2, 4, 40], 13);
    let run = |sp: &mut Sparsity<'_>| {
        let mut tape = Tape::new(false);
        let x = tape.input(xt.clone());
        let y = m.net.global[0].forward(&mut tape, &m.store, x, false, sp).unwrap();
        tape.value(y).clone()
    };
    let a = run(&mut Sparsity::Off);
    assert_eq!(a, run(&mut Sparsity::Off));

    let mut dense = m.clone();
    dense.net.global[0].dgf.sparse_ratio = 0.0;
    let mut r = rng(1);
    let mut tape = Tape::new(false);
    let x = tape.input(xt.clone());
    let y = dense.net.global[0].forward(&mut tape, &dense.store, x, false, &mut Sparsity::Sample(&mut r)).unwrap();
    assert_eq!(tape.value(y), &a);

    let mut r = rng(1);
    assert_ne!(run(&mut Sparsity::Sample(&mut r)), a);
}

#[test]
fn fusion_is_convex() {
    let mut tape = Tape::new(false);
    let a = random(&[1, 4, 6], 1);
    let b = random(&[1, 4, 6], 2);
    let (va, vb) = (tape.input(a.clone()), tape.input(b.clone()));
    let (l, g) = fuse_branches(&mut tape, va, vb, 0.8).unwrap();
    assert!((tape.value(l).data()[7] - (0.8 * a.data()[7] + 0.2 * b.data()[7])).abs() < 1e-15);
    assert!((tape.value(g).data()[7] - (0.2 * a.data()[7] + 0.8 * b.data()[7])).abs() < 1e-15);

    let (l, g) = fuse_branches(&mut tape, va, va, 0.8).unwrap();
    close(tape.value(l), &a, 1e-15);
    close(tape.value(g), &a, 1e-15);

    let z = tape.input(Tensor::zeros(&[1, 4, 6]));
    let (l, _) = fuse_branches(&mut tape, va, z, 0.8).unwrap();
    close(tape.value(l), &a.scale(0.8), 0.0);

    let other = tape.input(Tensor::zeros(&[1, 4, 7]));
    assert!(matches!(fuse_branches(&mut tape, va, other, 0.8), Err(Error::Shape(_))));
}

#[test]
fn mfa_projection() {
    let cfg = ModelConfig { mfa_dim: 16, ..tiny(3) };
    let mut m = model(&cfg, 14);
    let mut tape = Tape::new(false);
    let blocks: Vec<(_, _)> = (0..3)
        .map(|i| (tape.input(random(&[1, 4, 5], 20 + i)), tape.input(random(&[1, 4, 5], 30 + i))))
        .collect();
    let y = m.net.mfa_project(&mut tape, &m.store, &blocks, false).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 16, 5]);

    // Identity rows pick the first 16 of the 24 concatenated channels.
    identity_proj(&mut m.store, "mfa");
    let y = m.net.mfa_project(&mut tape, &m.store, &blocks, false).unwrap();
    let mut parts: Vec<&Tensor> = blocks.iter().map(|b| tape.value(b.0)).collect();
    parts.extend(blocks.iter().map(|b| tape.value(b.1)));
    let cat = Tensor::concat_channels(&parts).unwrap();
    let want = cat.narrow_channels(0, 16).unwrap().map(|v| v.max(0.0));
    close(tape.value(y), &want, 1e-12);

    let zeros: Vec<(_, _)> = (0..3).map(|_| (tape.input(Tensor::zeros(&[1, 4, 5])), tape.input(Tensor::zeros(&[1, 4, 5])))).collect();
    let y = m.net.mfa_project(&mut tape, &m.store, &zeros, false).unwrap();
    assert_eq!(tape.value(y).max_abs(), 0.0);
}

#[test]
fn attentive_pooling() {
    let cfg = ModelConfig { mfa_dim: 1, ..tiny(1) };
    let mut m = model(&cfg, 15);
    let mut tape = Tape::new(false);

    // Zero attention weights give uniform frame weights whatever the offset.
    set(&mut m.store, "asp.attn.weight", Tensor::zeros(&[1, 1, 1]));
    set(&mut m.store, "asp.attn.bias", Tensor::zeros(&[1]));
    set(&mut m.store, "asp.score.bias", Tensor::from_vec(&[1], vec![3.7]).unwrap());
    let h = random(&[1, 1, 6], 16);
    let v = tape.input(h.clone());
    let p = m.net.asp.forward(&mut tape, &m.store, v).unwrap();
    assert!((tape.value(p).data()[0] - h.mean()).abs() < 1e-12);

    // Constant-in-time input: deviation floors at sqrt(1e-9).
    let v = tape.input(Tensor::full(&[1, 1, 6], 0.4));
    let p = m.net.asp.forward(&mut tape, &m.store, v).unwrap();
    assert!((tape.value(p).data()[1] - 1e-9f64.sqrt()).abs() < 1e-12);

    // alpha = (0.75, 0.25) on h = (2, -2): logits differ by ln 3.
    set(&mut m.store, "asp.attn.weight", Tensor::full(&[1, 1, 1], 1.0));
    set(&mut m.store, "asp.score.weight", Tensor::full(&[1, 1, 1], 3f64.ln() / (2f64.tanh() * 2.0)));
    let v = tape.input(Tensor::from_vec(&[1, 1, 2], vec![2.0, -2.0]).unwrap());
    let a = m.net.asp.weights(&mut tape, &m.store, v).unwrap();
    assert!((tape.value(a).data()[0] - 0.75).abs() < 1e-12);
    let p = m.net.asp.forward(&mut tape, &m.store, v).unwrap();
    assert!((tape.value(p).data()[0] - 1.0).abs() < 1e-12);
    assert!((tape.value(p).data()[1] - 3f64.sqrt()).abs() < 1e-12);

    let short = tape.input(Tensor::zeros(&[1, 1, 1]));
    assert!(matches!(m.net.asp.forward(&mut tape, &m.store, short), Err(Error::InvalidInput(_))));
}

#[test]
fn embedding_head() {
    let cfg = ModelConfig { mfa_dim: 96, ..tiny(1) };
    let mut m = model(&cfg, 17);
    let mut tape = Tape::new(false);
    set(&mut m.store, "head.linear.bias", Tensor::zeros(&[192]));
    let z = tape.input(Tensor::zeros(&[3, 192]));
    let e = m.net.embed(&mut tape, &m.store, z, false).unwrap();
    assert_eq!(tape.value(e).shape(), &[3, 192]);
    assert_eq!(tape.value(e).max_abs(), 0.0);

    // Identity projection: the embedding is the batch-normalized pooled vector.
    set(&mut m.store, "head.linear.weight", Tensor::from_fn(&[192, 192], |i| f64::from(i / 192 == i % 192)));
    let rm = random(&[192], 18);
    let rv = random(&[192], 19).map(|v| v.abs() + 0.5);
    set(&mut m.store, "head.bn.running_mean", rm.clone());
    set(&mut m.store, "head.bn.running_var", rv.clone());
    let pooled = random(&[2, 192], 20);
    let v = tape.input(pooled.clone());
    let e = m.net.embed(&mut tape, &m.store, v, false).unwrap();
    let want = Tensor::from_fn(&[2, 192], |i| (pooled.data()[i] - rm.data()[i % 192]) / (rv.data()[i % 192] + BN_EPS).sqrt());
    close(tape.value(e), &want, 1e-12);
}

#[test]
fn forward_determinism_batches_and_lengths() {
    let cfg = ModelConfig::toy();
    let m = model(&cfg, 21);
    let one = random(&[1, 80, 120], 22);
    let e1 = m.embed(&one).unwrap();
    assert_eq!(e1.shape(), &[1, 192]);
    assert_eq!(e1, m.embed(&one).unwrap());

    let two = Tensor::stack(&[one.reshape(&[80, 120]).unwrap(), random(&[80, 120], 23)]).unwrap();
    let e2 = m.embed(&two).unwrap();
    close(&Tensor::from_vec(&[1, 192], e2.data()[..192].to_vec()).unwrap(), &e1, 1e-12);

    let dup = Tensor::stack(&[random(&[80, 120], 24), random(&[80, 120], 24)]).unwrap();
    let e = m.embed(&dup).unwrap();
    assert_eq!(&e.data()[..192], &e.data()[192..]);

    for t in [100, 200] {
        let e = m.embed(&random(&[1, 80, t], 25)).unwrap();
        assert_eq!(e.shape(), &[1, 192]);
        assert!(e.all_finite());
    }
    assert!(matches!(m.embed(&random(&[1, 80, 1], 1)), Err(Error::InvalidInput(_))));

    let mut r = rng(1);
    let tr = m.forward(&random(&[4, 80, 50], 26), Mode::Train, &mut r).unwrap();
    assert_eq!(tr.shape(), &[4, 192]);
}

#[test]
fn branch_roles_are_symmetric() {
    // Mirror: stem halves exchanged, the first slot runs the global blocks and the
    // second the local blocks, MFA columns permuted to match. In the original labels
    // the mirrored local input weighs (0.2, 0.8) on (first slot, second slot).
    let cfg = ModelConfig { mfa_dim: 24, ..tiny(2) };
    let m = model(&cfg, 27);
    let x = random(&[2, 80, 30], 28);
    let reference = m.embed(&x).unwrap();

    let mut store = m.store.clone();
    let half = cfg.branch_channels();
    let swap_rows = |t: &Tensor| {
        let rows = t.shape()[0];
        let stride = t.len() / rows;
        Tensor::from_fn(t.shape(), |i| t.data()[((i / stride + half) % rows) * stride + i % stride])
    };
    for n in ["stem.conv.weight", "stem.conv.bias", "stem.bn.weight", "stem.bn.bias", "stem.bn.running_mean", "stem.bn.running_var"] {
        let t = swap_rows(store.by_name(n).unwrap());
        set(&mut store, n, t);
    }
    let w = store.by_name("mfa.conv.weight").unwrap().clone();
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    set(&mut store, "mfa.conv.weight", Tensor::from_fn(&[co, ci, 1], |i| {
        let (o, c) = (i / ci, i % ci);
        w.data()[o * ci + (c + ci / 2) % ci]
    }));

    let net = &m.net;
    let mut tape = Tape::new(false);
    let xv = tape.input(x);
    let (mut a, mut b) = net.stem(&mut tape, &store, xv, false).unwrap();
    let mut blocks = Vec::new();
    for (lb, gb) in net.local.iter().zip(&net.global) {
        let (ai, bi) = fuse_branches(&mut tape, a, b, cfg.fusion_weight).unwrap();
        a = gb.forward(&mut tape, &store, ai, false, &mut Sparsity::Off).unwrap();
        b = lb.forward(&mut tape, &store, bi, false).unwrap();
        blocks.push((a, b));
    }
    let h = net.mfa_project(&mut tape, &store, &blocks, false).unwrap();
    let p = net.asp.forward(&mut tape, &store, h).unwrap();
    let e = net.embed(&mut tape, &store, p, false).unwrap();
    close(tape.value(e), &reference, 1e-10);
}

#[test]
fn global_filter_path_is_shift_covariant() {
    let m = model(&ModelConfig::toy(), 29);
    let layer = &m.net.global[0].dgf;
    for t in [200usize, 150] {
        let xt = random(&[2, 32, t], 30);
        let shift = 17;
        let d = xt.data();
        let shifted = Tensor::from_fn(&[2, 32, t], |i| d[i - i % t + (i % t + t - shift) % t]);
        let run = |x: &Tensor| {
            let mut tape = Tape::new(false);
            let v = tape.input(x.clone());
            let y = layer.forward(&mut tape, &m.store, v, &mut Sparsity::Off).unwrap();
            tape.value(y).clone()
        };
        let y = run(&xt);
        let ys = run(&shifted);
        let yd = y.data();
        let want = Tensor::from_fn(&[2, 32, t], |i| yd[i - i % t + (i % t + t - shift) % t]);
        assert!(ys.max_abs_diff(&want) <= 1e-10 * y.max_abs().max(1.0));
    }
}

#[test]
fn parameter_counts() {
    // C = 8, N = 1, s = 2, K = 2, C_hat = 32, 101 filter bins, embedding 192.
    let stem = 8 * 80 * 7 + 8 + 2 * 8;
    let proj = 4 * 4 + 4 + 2 * 4;
    let local = proj + (2 * 2 * 3 + 2 + 2 * 2) + proj + (4 * 4 + 4) + (4 * 4 + 4);
    let global = proj + 2 * 4 * 101 * 2 + (2 * 4 + 2) + (2 * 2 + 2) + proj;
    let mfa = 32 * 8 + 32 + 2 * 32;
    let asp = 32 * 32 + 32 + 32 + 1;
    let head = 2 * 64 + 192 * 64 + 192;
    assert_eq!(count_parameters(&tiny(1)).unwrap(), stem + local + global + mfa + asp + head);

    // Only the MFA, pooling and head terms depend on C_hat.
    let f = |c: usize, n: usize, e: usize| c * (n * 8) + c + 2 * c + c * c + c + c + 1 + 4 * c + e * 2 * c + e;
    let small = ModelConfig { mfa_dim: 32, ..tiny(3) };
    let big = ModelConfig { mfa_dim: 64, ..tiny(3) };
    let delta = count_parameters(&big).unwrap() - count_parameters(&small).unwrap();
    assert_eq!(delta, f(64, 3, 192) - f(32, 3, 192));

    let base = count_parameters(&ModelConfig::base()).unwrap() as f64;
    assert!((base - 13.2e6).abs() <= 0.15 * 13.2e6, "{base}");

    let specs = param_specs(&ModelConfig::toy()).unwrap();
    let filters = specs.iter().find(|s| s.name == "global.2.dgf.filters").unwrap();
    assert_eq!(filters.numel(), 2 * 8 * 32 * 101);
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::toy();
    let m = model(&cfg, 31);

    let p64 = dir.path().join("m64.ckpt");
    save_checkpoint(&m.store, &cfg, &p64, Dtype::F64).unwrap();
    let (s, c) = load_checkpoint(&p64).unwrap();
    assert_eq!(c, cfg);
    for (a, b) in m.store.entries().iter().zip(s.entries()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let mut q = m.store.clone();
    quantize_f32(&mut q);
    let p32 = dir.path().join("m32.ckpt");
    save_checkpoint(&q, &cfg, &p32, Dtype::F32).unwrap();
    let (s, _) = load_checkpoint(&p32).unwrap();
    for (a, b) in q.entries().iter().zip(s.entries()) {
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let loaded = Model::from_store(&cfg, s).unwrap();
    let x = random(&[1, 80, 60], 32);
    assert_eq!(loaded.embed(&x).unwrap(), Model::from_store(&cfg, q).unwrap().embed(&x).unwrap());

    let bytes = std::fs::read(&p32).unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Integrity(_))));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    std::fs::write(&bad, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Integrity(_))));

    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&bad, &versioned).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Version { found: 99, .. })));

    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&bad).is_err());
}
