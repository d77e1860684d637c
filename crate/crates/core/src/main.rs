use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dstdnn::analysis::analyze_store;
use dstdnn::bench::{bench_scaling, parse_lengths, write_bench_csv, BenchOptions, TrackingAllocator};
use dstdnn::eval::{as_norm, compute_metrics, embed_features, score_trials, Metrics, P_TARGET};
use dstdnn::frontend::{generate_corpus, read_trials, CorpusConfig, HELDOUT_MANIFEST};
use dstdnn::network::{load_checkpoint, save_checkpoint, Dtype, Model, ModelConfig};
use dstdnn::training::{finite_diff_check, train, write_metrics, AamHead, Dataset, GradCheckOptions, TrainSchedule};
use dstdnn::{Error, Result, Tensor};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(name = "dstdnn", version, about = "Global-aware filter layers and DS-TDNN speaker embeddings")]
struct Cli {
    /// JSON file with optional sections per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a speaker corpus with manifests and a trial list.
    GenData(GenDataArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Embed, score a trial list and report EER / minDCF.
    Eval(EvalArgs),
    /// Classify the learned filters of a checkpoint.
    AnalyzeFilters(AnalyzeArgs),
    /// Time global filtering against quadratic mixing.
    Bench(BenchArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts: Option<usize>,
    #[arg(long)]
    heldout: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// toy, small, base or large.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Utterances referenced by the trials; defaults to the held-out manifest beside them.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Training manifest whose speaker averages form the normalization cohort.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// `lo..hi` in powers of two, or a comma list.
    #[arg(long)]
    lengths: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    gen_data: GenDataConfig,
    train: TrainConfig,
    eval: EvalConfig,
    analyze_filters: AnalyzeConfig,
    bench: BenchConfig,
    gradcheck: GradcheckConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataConfig {
    out: PathBuf,
    corpus: CorpusConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { out: "data".into(), corpus: CorpusConfig::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    manifest: Option<PathBuf>,
    out: PathBuf,
    preset: String,
    /// Full architecture; takes precedence over `preset`.
    model: Option<ModelConfig>,
    schedule: TrainSchedule,
    dtype: Dtype,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out: "run".into(),
            preset: "toy".into(),
            model: None,
            schedule: TrainSchedule::desk(),
            dtype: Dtype::F32,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    checkpoint: Option<PathBuf>,
    trials: Option<PathBuf>,
    manifest: Option<PathBuf>,
    cohort: Option<PathBuf>,
    top_k: usize,
    out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { checkpoint: None, trials: None, manifest: None, cohort: None, top_k: 600, out: "metrics.json".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeConfig {
    checkpoint: Option<PathBuf>,
    out: PathBuf,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { checkpoint: None, out: "filters".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct BenchConfig {
    #[serde(flatten)]
    options: BenchOptions,
    out: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { options: BenchOptions::default(), out: "bench.csv".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradcheckConfig {
    preset: String,
    batch: usize,
    frames: usize,
    options: GradCheckOptions,
    out: PathBuf,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            batch: 3,
            frames: 32,
            options: GradCheckOptions::default(),
            out: "gradcheck.json".into(),
        }
    }
}

/// Problems with how the tool was invoked, as opposed to failures while running.
fn is_usage(e: &Error) -> bool {
    matches!(e, Error::InvalidInput(_) | Error::Config(_) | Error::Csv(_) | Error::Json(_))
        || matches!(e, Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound)
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", p.display())))
        }
    }
}

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::InvalidInput(format!("missing --{flag}")))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn parse_dtype(s: &str) -> Result<Dtype> {
    match s {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(Error::InvalidInput(format!("unknown dtype '{other}'"))),
    }
}

fn gen_data(a: GenDataArgs, mut c: GenDataConfig, seed: u64) -> Result<()> {
    let out = a.out.unwrap_or(c.out);
    c.corpus.seed = seed;
    if let Some(n) = a.speakers {
        c.corpus.n_speakers = n;
    }
    if let Some(n) = a.utts {
        c.corpus.utts_per_speaker = n;
    }
    if let Some(n) = a.heldout {
        c.corpus.heldout_per_speaker = n;
    }
    let corpus = generate_corpus(&c.corpus, &out)?;
    println!(
        "{} training and {} held-out utterances, {} trials in {}",
        corpus.train.len(),
        corpus.heldout.len(),
        corpus.trials.len(),
        out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs, mut c: TrainConfig, seed: u64) -> Result<()> {
    let manifest = required(a.manifest.or(c.manifest.take()), "manifest")?;
    let out = a.out.unwrap_or(c.out.clone());
    let cfg = match (&a.preset, &c.model) {
        (Some(p), _) => ModelConfig::preset(p)?,
        (None, Some(m)) => m.clone(),
        (None, None) => ModelConfig::preset(&c.preset)?,
    };
    if let Some(e) = a.epochs {
        c.schedule.epochs = e;
    }
    if let Some(b) = a.batch_size {
        c.schedule.batch_size = b;
    }
    if let Some(lr) = a.lr {
        c.schedule.lr_start = lr;
    }
    if let Some(d) = &a.dtype {
        c.dtype = parse_dtype(d)?;
    }
    c.model = Some(cfg.clone());
    c.manifest = Some(manifest.clone());

    let data = Dataset::from_manifest(&manifest, cfg.n_mels)?;
    let outcome = train(&data, &cfg, &c.schedule, seed)?;
    fs::create_dir_all(&out)?;
    save_checkpoint(&outcome.model.store, &cfg, &out.join("model.ckpt"), c.dtype)?;
    write_metrics(&out.join("metrics.csv"), &outcome.metrics)?;
    write_json(&out.join("speakers.json"), &outcome.speakers)?;
    write_json(&out.join("train_config.json"), &c)?;
    if let Some(last) = outcome.metrics.last() {
        println!("epoch {} loss {:.4} acc {:.3}; checkpoint in {}", last.epoch, last.loss, last.acc, out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    eer: f64,
    min_dcf: f64,
    eer_threshold: f64,
    dcf_threshold: f64,
    p_target: f64,
    trials: usize,
    normalized: bool,
    raw: Metrics,
}

fn embed_manifest(model: &Model, path: &Path) -> Result<Dataset> {
    Dataset::from_manifest(path, model.config().n_mels)
}

fn run_eval(a: EvalArgs, c: EvalConfig) -> Result<()> {
    let ckpt = required(a.checkpoint.or(c.checkpoint), "checkpoint")?;
    let trials_path = required(a.trials.or(c.trials), "trials")?;
    let manifest = match a.manifest.or(c.manifest) {
        Some(m) => m,
        None => trials_path.parent().unwrap_or(Path::new(".")).join(HELDOUT_MANIFEST),
    };
    let out = a.out.unwrap_or(c.out);
    let top_k = a.top_k.unwrap_or(c.top_k);

    let (store, cfg) = load_checkpoint(&ckpt)?;
    let model = Model::from_store(&cfg, store)?;
    let trials = read_trials(&trials_path)?;
    let data = embed_manifest(&model, &manifest)?;
    let emb = embed_features(&model, &data.utt_ids, &data.features)?;
    let raw = score_trials(&trials, &emb)?;
    let raw_metrics = compute_metrics(&raw.raw_pairs())?;

    let scored = match a.cohort.or(c.cohort) {
        Some(cohort_manifest) => {
            let cohort_data = embed_manifest(&model, &cohort_manifest)?;
            let mut cohort_emb = embed_features(&model, &cohort_data.utt_ids, &cohort_data.features)?;
            let members: Vec<(String, String)> = cohort_data
                .utt_ids
                .iter()
                .zip(&cohort_data.labels)
                .map(|(u, &l)| (u.clone(), cohort_data.speakers[l].clone()))
                .collect();
            cohort_emb.average_speakers(members.iter().map(|(u, s)| (u.as_str(), s.as_str())))?;
            as_norm(&raw, &emb, &cohort_emb.speakers, top_k.min(cohort_emb.speakers.len()))?
        }
        None => raw,
    };
    let m = compute_metrics(&scored.pairs())?;
    let normalized = scored.rows.iter().all(|r| r.normalized.is_some());
    let report = EvalReport {
        eer: m.eer,
        min_dcf: m.min_dcf,
        eer_threshold: m.eer_threshold,
        dcf_threshold: m.dcf_threshold,
        p_target: P_TARGET,
        trials: scored.rows.len(),
        normalized,
        raw: raw_metrics,
    };
    write_json(&out, &report)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    scored.write_csv(&dir.join("scores.csv"))?;
    emb.save(&dir.join("embeddings.json"))?;
    println!("EER {:.2}%  minDCF {:.4}  ({} trials)", 100.0 * m.eer, m.min_dcf, report.trials);
    Ok(())
}

fn run_analyze(a: AnalyzeArgs, c: AnalyzeConfig) -> Result<()> {
    let ckpt = required(a.checkpoint.or(c.checkpoint), "checkpoint")?;
    let out = a.out.unwrap_or(c.out);
    let (store, _) = load_checkpoint(&ckpt)?;
    let report = analyze_store(&store)?;
    fs::create_dir_all(&out)?;
    report.save_json(&out.join("filter_report.json"))?;
    report.write_filters_csv(&out.join("filters.csv"))?;
    report.write_histogram_csv(&out.join("center_frequency_histogram.csv"))?;
    for l in &report.layers {
        let counts: Vec<String> = l.class_counts.iter().map(|(k, v)| format!("{}={v}", k.name())).collect();
        println!("{}: {}", l.layer, counts.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    slopes: BTreeMap<String, f64>,
    channel_ratio: Option<f64>,
    records: usize,
}

fn run_bench(a: BenchArgs, mut c: BenchConfig, seed: u64) -> Result<()> {
    let o = &mut c.options;
    o.seed = seed;
    if let Some(l) = &a.lengths {
        o.lengths = parse_lengths(l)?;
    }
    if let Some(ch) = a.channels {
        o.channels = ch;
    }
    if let Some(r) = a.reps {
        o.reps = r;
    }
    if let Some(t) = a.threads {
        o.threads = t;
    }
    let out = a.out.unwrap_or(c.out);
    let report = bench_scaling(&c.options)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_bench_csv(&out, &report.records)?;
    let summary = BenchSummary { slopes: report.slopes.clone(), channel_ratio: report.channel_ratio, records: report.records.len() };
    write_json(&out.with_extension("json"), &summary)?;
    for (p, s) in &report.slopes {
        println!("{p}: time ~ T^{s:.2}");
    }
    if let Some(r) = report.channel_ratio {
        println!("gf time ratio on doubling C: {r:.2}");
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs, mut c: GradcheckConfig, seed: u64) -> Result<()> {
    let cfg = ModelConfig::preset(a.preset.as_deref().unwrap_or(&c.preset))?;
    let batch = a.batch.unwrap_or(c.batch);
    let frames = a.frames.unwrap_or(c.frames);
    let out = a.out.unwrap_or(c.out);
    if batch < 2 {
        return Err(Error::InvalidInput("gradient check needs a batch of two or more".into()));
    }
    c.options.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(&cfg, &mut rng)?;
    let mut store = model.store.clone();
    let head = AamHead::attach(&mut store, batch, cfg.embedding_dim, 0.2, 30.0, &mut rng)?;
    let x = Tensor::from_fn(&[batch, cfg.n_mels, frames], |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..batch).collect();
    let report = finite_diff_check(&model.net, &store, &head, &x, &labels, &c.options)?;
    write_json(&out, &report)?;
    println!(
        "{} samples, max relative error {:.2e}, {} failures, {} resampled",
        report.samples.len(),
        report.max_rel_err,
        report.failures.len(),
        report.resampled
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::GradCheck(format!("{} mismatches: {}", report.failures.len(), report.failures.join("; "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.cmd {
        Cmd::GenData(a) => gen_data(a, file.gen_data, seed),
        Cmd::Train(a) => run_train(a, file.train, seed),
        Cmd::Eval(a) => run_eval(a, file.eval),
        Cmd::AnalyzeFilters(a) => run_analyze(a, file.analyze_filters),
        Cmd::Bench(a) => run_bench(a, file.bench, seed),
        Cmd::Gradcheck(a) => run_gradcheck(a, file.gradcheck, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
