use std::collections::BTreeSet;

use dstdnn::frontend::*;
use dstdnn::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn spec(f0: f64, formants: &[f64], tilt: f64, noise: f64) -> SyntheticSpeakerSpec {
    SyntheticSpeakerSpec {
        speaker_id: "s".into(),
        fundamental_freq: f0,
        formant_centers: formants.to_vec(),
        spectral_tilt: tilt,
        noise_floor: noise,
        rng_seed: 3,
    }
}

fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Complex64::new(v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|z| z.norm()).collect()
}

#[test]
fn harmonic_peaks_sit_on_multiples_of_f0() {
    let s = spec(100.0, &[1200.0], -3.0, 0.0);
    let w = synthesize_with_style(&s, 2.0, &SynthesisStyle::steady(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mag = magnitude_spectrum(&w.samples);
    let hz_per_bin = 16_000.0 / w.samples.len() as f64;
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let peaks: Vec<f64> = (1..mag.len() - 1)
        .filter(|&k| mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] && mag[k] > 0.01 * max)
        .map(|k| k as f64 * hz_per_bin)
        .collect();
    assert!(peaks.len() >= 10);
    for f in &peaks {
        let off = (f / 100.0 - (f / 100.0).round()).abs() * 100.0;
        assert!(off <= 1.0, "peak at {f} Hz is {off} Hz from a harmonic");
    }
}

#[test]
fn modulated_energy_stays_near_harmonics() {
    let s = spec(100.0, &[1200.0], -3.0, 0.0);
    let w = synthesize_utterance(&s, 2.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mag = magnitude_spectrum(&w.samples);
    let hz_per_bin = 16_000.0 / w.samples.len() as f64;
    let (mut near, mut total) = (0.0, 0.0);
    for (k, m) in mag.iter().enumerate() {
        let f = k as f64 * hz_per_bin;
        let e = m * m;
        total += e;
        if (f / 100.0 - (f / 100.0).round()).abs() * 100.0 <= 10.0 {
            near += e;
        }
    }
    assert!(near / total > 0.99, "{}", near / total);
}

#[test]
fn same_seed_is_bit_identical() {
    let s = spec(150.0, &[500.0, 1500.0, 2500.0], -6.0, 0.1);
    let a = synthesize_utterance(&s, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = synthesize_utterance(&s, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn different_seeds_share_the_envelope() {
    let s = spec(150.0, &[500.0, 1500.0, 2500.0, 3800.0], -6.0, 0.1);
    let a = synthesize_utterance(&s, 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = synthesize_utterance(&s, 3.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_ne!(a.samples, b.samples);
    let sim = spectral_similarity(&long_term_log_spectrum(&a).unwrap(), &long_term_log_spectrum(&b).unwrap());
    assert!(sim >= 0.9, "similarity {sim}");
}

#[test]
fn disjoint_formants_have_dissimilar_envelopes() {
    // Formants occupying non-overlapping frequency regions.
    let a = spec(150.0, &[400.0, 900.0, 1500.0], -6.0, 0.1);
    let b = spec(150.0, &[2600.0, 3600.0, 5000.0], -6.0, 0.1);
    let wa = synthesize_utterance(&a, 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let wb = synthesize_utterance(&b, 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let sim = spectral_similarity(&long_term_log_spectrum(&wa).unwrap(), &long_term_log_spectrum(&wb).unwrap());
    assert!(sim < 0.5, "similarity {sim}");
}

#[test]
fn invalid_specs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cases = [
        spec(150.0, &[500.0, 9000.0], -6.0, 0.0),
        spec(150.0, &[1500.0, 500.0], -6.0, 0.0),
        spec(60.0, &[500.0], -6.0, 0.0),
        spec(400.0, &[500.0], -6.0, 0.0),
    ];
    for s in &cases {
        assert!(matches!(synthesize_utterance(s, 1.0, &mut rng), Err(Error::InvalidSpec(_))), "{s:?}");
    }
    let ok = spec(150.0, &[500.0], -6.0, 0.0);
    assert!(matches!(synthesize_utterance(&ok, 0.5, &mut rng), Err(Error::InvalidInput(_))));
}

#[test]
fn synthesized_audio_stays_in_range() {
    for s in speaker_specs(6, 11) {
        let w = synthesize_utterance(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(s.rng_seed)).unwrap();
        assert!(w.samples.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(w.samples.len(), 16_000);
    }
}

#[test]
fn corpus_counts_trials_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig { n_speakers: 20, utts_per_speaker: 10, heldout_per_speaker: 3, duration_range: (1.0, 1.2), seed: 7, ..Default::default() };
    let c = generate_corpus(&cfg, dir.path()).unwrap();
    let rows = read_manifest(&c.train_manifest()).unwrap();
    assert_eq!(rows.len(), 200);
    let ids: BTreeSet<_> = rows.iter().map(|r| r.speaker_id.clone()).collect();
    assert_eq!(ids.len(), 20);

    let trials = read_trials(&c.trials_path()).unwrap();
    let targets = trials.iter().filter(|t| t.label == 1).count();
    let nontargets = trials.len() - targets;
    assert!(targets.abs_diff(nontargets) <= 1);
    assert_eq!(targets, 20 * 3);
    let heldout: BTreeSet<_> = read_manifest(&c.heldout_manifest()).unwrap().into_iter().map(|r| r.utt_id).collect();
    assert!(trials.iter().all(|t| heldout.contains(&t.enroll_utt) && heldout.contains(&t.test_utt)));

    let w = read_wav(&resolve(&c.train_manifest(), &rows[0])).unwrap();
    assert_eq!(w.sample_rate, 16_000);
    assert!((w.duration() - rows[0].duration).abs() < 1e-3);

    let dir2 = tempfile::tempdir().unwrap();
    let c2 = generate_corpus(&cfg, dir2.path()).unwrap();
    assert_eq!(file_hash(&c.train_manifest()).unwrap(), file_hash(&c2.train_manifest()).unwrap());
    assert_eq!(file_hash(&c.trials_path()).unwrap(), file_hash(&c2.trials_path()).unwrap());
    assert_eq!(file_hash(&resolve(&c.train_manifest(), &rows[5])).unwrap(), file_hash(&resolve(&c2.train_manifest(), &rows[5])).unwrap());
}

#[test]
fn corpus_rejects_single_speaker_and_unwritable_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig { n_speakers: 1, ..Default::default() };
    assert!(matches!(generate_corpus(&cfg, dir.path()), Err(Error::InvalidInput(_))));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let cfg = CorpusConfig { n_speakers: 2, utts_per_speaker: 1, heldout_per_speaker: 0, duration_range: (1.0, 1.0), ..Default::default() };
    assert!(matches!(generate_corpus(&cfg, &blocker.join("sub")), Err(Error::Io(_))));
}

#[test]
fn balanced_trials_from_records() {
    let recs: Vec<UttRecord> = (0..20)
        .flat_map(|s| (0..4).map(move |u| UttRecord { utt_id: format!("{s}-{u}"), speaker_id: s.to_string(), path: String::new(), duration: 1.0 }))
        .collect();
    let t = balanced_trials(&recs, 1);
    let pos = t.iter().filter(|t| t.label == 1).count();
    assert_eq!(pos, 20 * 6);
    assert_eq!(t.len(), 2 * pos);
    let uniq: BTreeSet<_> = t.iter().map(|t| (t.enroll_utt.clone(), t.test_utt.clone())).collect();
    assert_eq!(uniq.len(), t.len());
}

#[test]
fn malformed_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    std::fs::write(&p, "utt_id,speaker_id,path,duration\na,b,c,notanumber\n").unwrap();
    assert!(matches!(read_manifest(&p), Err(Error::Csv(_))));
    std::fs::write(&p, "enroll_utt,test_utt,label\na,b,3\n").unwrap();
    assert!(read_trials(&p).is_err());
}

#[test]
fn features_of_synthetic_speech() {
    let s = &speaker_specs(1, 4)[0];
    let w = synthesize_utterance(s, 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let f = compute_log_mel(&w, 80, 0.025, 0.010).unwrap();
    assert_eq!(f.data.shape(), &[1, 80, 198]);
    assert!(f.data.all_finite());
    let row_means: Vec<f64> = f.data.data().chunks(198).map(|r| r.iter().sum::<f64>() / 198.0).collect();
    assert!(row_means.iter().all(|m| m.abs() < 1e-9));
    let c = f.crop(10, 100).unwrap();
    assert_eq!(c.data.shape(), &[1, 80, 100]);
    assert_eq!(c.data.data()[0], f.data.data()[10]);
}
