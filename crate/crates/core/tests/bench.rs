use dstdnn::bench::*;
use dstdnn::spectral::circular_conv_oracle;
use dstdnn::Tensor;

fn quick() -> BenchOptions {
    BenchOptions {
        lengths: power_range(64, 1024),
        channels: 2,
        reps: 5,
        min_sample_s: 1e-4,
        direct_max_len: 1024,
        attention_max_len: 256,
        channel_probe_len: 512,
        ..Default::default()
    }
}

#[test]
fn records_and_schema() {
    let r = bench_scaling(&quick()).unwrap();
    let count = |p: &str| r.records.iter().filter(|x| x.primitive == p).count();
    // gf over every length plus the channel pair.
    assert_eq!(count("gf"), 5 + 2);
    assert_eq!(count("direct_conv"), 5);
    assert_eq!(count("attention"), 3);
    assert!(r.records.iter().all(|x| x.reps >= 5 && x.median_s > 0.0));
    assert!(r.slopes.contains_key("gf") && r.slopes.contains_key("direct_conv"));
    assert!(r.channel_ratio.unwrap() > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.csv");
    write_bench_csv(&p, &r.records).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("primitive,T,C,reps,median_s,peak_bytes\n"));
    assert_eq!(text.lines().count(), r.records.len() + 1);
}

#[test]
fn narrow_ranges_rejected() {
    let o = BenchOptions { lengths: vec![64, 512], ..quick() };
    assert!(bench_scaling(&o).is_err());
    assert!(parse_lengths("0,4").is_err());
}

#[test]
fn fast_primitives_batch_calls() {
    let o = BenchOptions { min_sample_s: 5e-3, ..quick() };
    let r = measure(Primitive::Gf, 64, 1, &o).unwrap();
    assert!(r.reps > 5, "{r:?}");
    let o = BenchOptions { threads: 2, ..quick() };
    let r = measure(Primitive::Gf, 64, 1, &o).unwrap();
    assert_eq!(r.primitive, "gf_mt2");
}

#[test]
fn attention_rows_are_convex_mixes() {
    let x = Tensor::from_fn(&[1, 2, 6], |i| (i as f64 * 0.7).sin());
    let y = attention_mix(&x).unwrap();
    for c in 0..2 {
        let row = &x.data()[c * 6..(c + 1) * 6];
        let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(y.data()[c * 6..(c + 1) * 6].iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
    // Same shapes in and out for the convolution path.
    let w = Tensor::from_fn(&[2, 6], |i| i as f64);
    assert_eq!(circular_conv_oracle(&x, &w).unwrap().shape(), x.shape());
}
