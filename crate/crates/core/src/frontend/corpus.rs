//! Synthetic corpus on disk: WAV files, utterance manifests and a trial list.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mel::Waveform;
use super::synth::{synthesize_with_style, SyntheticSpeakerSpec, SynthesisStyle};
use crate::error::{Error, Result};

pub const TRAIN_MANIFEST: &str = "manifest.csv";
pub const HELDOUT_MANIFEST: &str = "heldout.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SPEAKERS_FILE: &str = "speakers.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttRecord {
    pub utt_id: String,
    pub speaker_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_utt: String,
    pub test_utt: String,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    /// Extra utterances per speaker kept out of training and used for trials.
    pub heldout_per_speaker: usize,
    pub duration_range: (f64, f64),
    pub seed: u64,
    pub style: SynthesisStyle,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts_per_speaker: 10,
            heldout_per_speaker: 5,
            duration_range: (2.5, 4.0),
            seed: 0,
            style: SynthesisStyle::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub speakers: Vec<SyntheticSpeakerSpec>,
    pub train: Vec<UttRecord>,
    pub heldout: Vec<UttRecord>,
    pub trials: Vec<Trial>,
}

impl Corpus {
    pub fn train_manifest(&self) -> PathBuf {
        self.root.join(TRAIN_MANIFEST)
    }

    pub fn heldout_manifest(&self) -> PathBuf {
        self.root.join(HELDOUT_MANIFEST)
    }

    pub fn trials_path(&self) -> PathBuf {
        self.root.join(TRIALS_FILE)
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Speaker specs drawn from a seed: f0, four formants, tilt and noise level.
/// Range speaker pitches are drawn from.
pub const SPEAKER_F0: (f64, f64) = (120.0, 180.0);

pub fn speaker_specs(n: usize, seed: u64) -> Vec<SyntheticSpeakerSpec> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed, i as u64));
            let f1 = rng.random_range(300.0..850.0);
            let f2 = rng.random_range(950.0..2300.0);
            let f3 = rng.random_range(2400.0..3300.0);
            let f4 = rng.random_range(3500.0..4600.0);
            SyntheticSpeakerSpec {
                speaker_id: format!("spk{i:03}"),
                fundamental_freq: rng.random_range(SPEAKER_F0.0..SPEAKER_F0.1),
                formant_centers: vec![f1, f2, f3, f4],
                spectral_tilt: rng.random_range(-9.0..-3.0),
                noise_floor: rng.random_range(0.05..0.3),
                rng_seed: rng.random(),
            }
        })
        .collect()
}

/// Every within-speaker pair as a target, plus as many distinct cross-speaker pairs.
pub fn balanced_trials(utts: &[UttRecord], seed: u64) -> Vec<Trial> {
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for (i, a) in utts.iter().enumerate() {
        for b in &utts[i + 1..] {
            let t = Trial {
                enroll_utt: a.utt_id.clone(),
                test_utt: b.utt_id.clone(),
                label: u8::from(a.speaker_id == b.speaker_id),
            };
            if t.label == 1 { targets.push(t) } else { nontargets.push(t) }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7717, 0));
    nontargets.shuffle(&mut rng);
    if targets.is_empty() {
        // Single utterance per speaker: nothing to balance against, keep one nontarget.
        nontargets.truncate(1);
    } else {
        nontargets.truncate(targets.len());
    }
    let mut all = targets;
    all.extend(nontargets);
    all.shuffle(&mut rng);
    all
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        out.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    out.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidInput(format!("{}: expected mono 16-bit PCM", path.display())));
    }
    let samples = r.samples::<i16>().map(|s| s.map(|v| v as f64 / i16::MAX as f64)).collect::<std::result::Result<_, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_manifest(path: &Path, rows: &[UttRecord]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<UttRecord>> {
    let rows: Vec<UttRecord> = read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty manifest", path.display())));
    }
    Ok(rows)
}

pub fn write_trials(path: &Path, rows: &[Trial]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let rows: Vec<Trial> = read_csv(path)?;
    if let Some(t) = rows.iter().find(|t| t.label > 1) {
        return Err(Error::InvalidInput(format!("trial label {} not in {{0, 1}}", t.label)));
    }
    Ok(rows)
}

/// Resolve a manifest path against the manifest's directory.
pub fn resolve(manifest: &Path, rec: &UttRecord) -> PathBuf {
    let p = Path::new(&rec.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

struct Job {
    spec_idx: usize,
    utt_idx: usize,
    heldout: bool,
}

/// Write the corpus under `out`: `wav/`, training and held-out manifests, trials and speaker specs.
pub fn generate_corpus(cfg: &CorpusConfig, out: &Path) -> Result<Corpus> {
    if cfg.n_speakers < 2 {
        return Err(Error::InvalidInput("need at least 2 speakers".into()));
    }
    if cfg.utts_per_speaker == 0 {
        return Err(Error::InvalidInput("need at least 1 utterance per speaker".into()));
    }
    let (lo, hi) = cfg.duration_range;
    if !(1.0..=60.0).contains(&lo) || !(lo..=60.0).contains(&hi) {
        return Err(Error::InvalidInput(format!("duration range ({lo}, {hi}) outside [1, 60]")));
    }
    let speakers = speaker_specs(cfg.n_speakers, cfg.seed);
    for s in &speakers {
        s.validate(cfg.style.sample_rate)?;
    }
    fs::create_dir_all(out.join("wav"))?;

    let per = cfg.utts_per_speaker + cfg.heldout_per_speaker;
    let jobs: Vec<Job> = (0..cfg.n_speakers)
        .flat_map(|s| (0..per).map(move |u| Job { spec_idx: s, utt_idx: u, heldout: u >= cfg.utts_per_speaker }))
        .collect();
    let records = jobs
        .par_iter()
        .map(|j| {
            let spec = &speakers[j.spec_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, spec.rng_seed, j.utt_idx as u64));
            let dur = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let dur = (dur * 100.0).round() / 100.0;
            let w = synthesize_with_style(spec, dur, &cfg.style, &mut rng)?;
            let utt_id = format!("{}-{:03}", spec.speaker_id, j.utt_idx);
            let rel = format!("wav/{utt_id}.wav");
            write_wav(&out.join(&rel), &w)?;
            Ok((j.heldout, UttRecord { utt_id, speaker_id: spec.speaker_id.clone(), path: rel, duration: dur }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (heldout, train): (Vec<_>, Vec<_>) = records.into_iter().partition(|(h, _)| *h);
    let train: Vec<UttRecord> = train.into_iter().map(|(_, r)| r).collect();
    let heldout: Vec<UttRecord> = heldout.into_iter().map(|(_, r)| r).collect();
    let trials = if heldout.is_empty() { balanced_trials(&train, cfg.seed) } else { balanced_trials(&heldout, cfg.seed) };

    write_manifest(&out.join(TRAIN_MANIFEST), &train)?;
    if !heldout.is_empty() {
        write_manifest(&out.join(HELDOUT_MANIFEST), &heldout)?;
    }
    write_trials(&out.join(TRIALS_FILE), &trials)?;
    fs::write(out.join(SPEAKERS_FILE), serde_json::to_string_pretty(&speakers)?)?;
    Ok(Corpus { root: out.to_path_buf(), speakers, train, heldout, trials })
}
