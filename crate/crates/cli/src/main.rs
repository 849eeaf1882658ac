//! `gtmi` command-line tool: generate synthetic data, train, predict,
//! evaluate and inspect.

mod config;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use config::RunConfig;
use gtmi::corpus::{load_queries, load_stop_words, save_queries, LoadOptions};
use gtmi::evaluator::{self, EvalReport, Metric, ReportFormat, DEFAULT_EDGES_KM};
use gtmi::generator::{self, GenSpec, GroundTruthConfig, GroundTruthModel, TruthLabels};
use gtmi::model::{self, load_model, region_word_prob, save_model, topic_word_prob, MixtureCounts};
use gtmi::predictor::{self, load_predictions, save_predictions, PredictionRecord};
use gtmi::{Corpus, Hyperparams, Location, Mode, ModelState, PredictOptions, Query, TrainSchedule, WordRule};

#[derive(Parser)]
#[command(name = "gtmi", version, about = "Geographical multimodal topic model")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic corpus, truth labels and ground-truth parameters.
    Generate(GenerateArgs),
    /// Train a model on a corpus and write a snapshot.
    Train(TrainArgs),
    /// Predict locations for a query file.
    Predict(PredictArgs),
    /// Score predictions against true locations.
    Evaluate(EvaluateArgs),
    /// Summarize a trained model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of regions.
    #[arg(long)]
    r: Option<usize>,
    /// Number of topics.
    #[arg(long)]
    k: Option<usize>,
    /// Vocabulary size.
    #[arg(long)]
    w: Option<usize>,
    /// Patch feature dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Training images.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out query images, drawn from the same ground truth.
    #[arg(long)]
    queries: Option<usize>,
    /// Spacing of the region grid in degrees (default 5).
    #[arg(long)]
    separation: Option<f64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WordRuleArg {
    Normalized,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixtureArg {
    Words,
    WordsAndPatches,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus JSONL with locations.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output snapshot path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stop-word file, one word per line.
    #[arg(long)]
    stop_words: Option<PathBuf>,
    /// Number of regions.
    #[arg(long)]
    r: Option<usize>,
    /// Number of topics.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    /// Sweeps before per-image topic counts are averaged (default: half).
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Visit images in a new random order each sweep.
    #[arg(long)]
    shuffle: bool,
    /// Store latent assignments in the snapshot.
    #[arg(long)]
    keep_assignments: bool,
    #[arg(long, value_enum)]
    word_rule: Option<WordRuleArg>,
    #[arg(long, value_enum)]
    mixture_counts: Option<MixtureArg>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    geo_reg: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "tv")]
    TextVisual,
    #[value(alias = "v")]
    Visual,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::TextVisual => Mode::TextVisual,
            ModeArg::Visual => Mode::Visual,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Query JSONL; lat/lon, when present, are ignored.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output predictions JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Content used for prediction (default text-visual).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Neighbors to propagate from (default 4 text-visual, 8 visual).
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    fold_in_sweeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Return the selected region's location mean instead of propagating.
    #[arg(long)]
    mean_location: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
#[command(after_help = format!("CSV columns: {}\nOne bucket row per histogram bucket, then one summary row.", evaluator::CSV_HEADER))]
struct EvaluateArgs {
    /// Predictions JSONL.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// JSONL with the true `id`, `lat` and `lon` of every query.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report plain Euclidean distance in degrees instead of kilometers.
    #[arg(long)]
    euclidean_degrees: bool,
    /// Comma-separated histogram edges (default 1,10,30,60,100,150).
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Report path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truth labels of the queries; with --ground-truth and --model adds
    /// region accuracy.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Words listed per topic and region.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<gtmi::Error> for Failure {
    fn from(e: gtmi::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn required<T>(v: Option<T>, flag: &str, key: &str) -> Result<T, Failure> {
    v.ok_or_else(|| usage(format!("missing --{flag} (or {key} in the config file)")))
}

/// Argument validation failures are usage errors.
fn check(r: gtmi::Result<()>) -> CmdResult {
    r.map_err(|e| usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Predict(a) => cmd_predict(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_generate(a: GenerateArgs, cfg: &RunConfig) -> CmdResult {
    let g = &cfg.generate;
    let mut gt_cfg = GroundTruthConfig::new(
        required(a.r.or(g.r), "r", "generate.r")?,
        required(a.k.or(g.k), "k", "generate.k")?,
        required(a.w.or(g.w), "w", "generate.w")?,
        required(a.d.or(g.d), "d", "generate.d")?,
        required(a.seed.or(g.seed), "seed", "generate.seed")?,
        a.separation.or(g.separation).unwrap_or(5.0),
    );
    if let Some(x) = g.xi_concentration {
        gt_cfg.xi_concentration = x;
    }
    if let Some(x) = g.word_concentration {
        gt_cfg.word_concentration = x;
    }
    let mut spec = GenSpec::new(required(a.images.or(g.images), "images", "generate.images")?, gt_cfg.seed);
    if let Some(r) = g.words_per_image {
        spec.words_per_image = r;
    }
    if let Some(r) = g.patches_per_image {
        spec.patches_per_image = r;
    }
    check(spec.validate())?;
    let n_queries = a.queries.or(g.queries).unwrap_or(0);
    let out = a.out_dir.or(g.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));

    let gt = generator::make_ground_truth(&gt_cfg).map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (corpus, truth) = generator::generate_corpus(&gt, &spec)?;
    corpus.save(out.join("corpus.jsonl"))?;
    truth.save(out.join("truth.jsonl"))?;
    gt.save(out.join("ground_truth.json"))?;
    let mut written = vec!["corpus.jsonl", "truth.jsonl", "ground_truth.json"];
    if n_queries > 0 {
        let qspec = GenSpec {
            num_images: n_queries,
            seed: gt_cfg.seed.wrapping_add(1),
            id_prefix: "q".into(),
            ..spec.clone()
        };
        let (queries, qtruth) = generator::generate_corpus(&gt, &qspec)?;
        save_queries(out.join("queries.jsonl"), &queries.images, &queries.vocab)?;
        qtruth.save(out.join("queries.truth.jsonl"))?;
        written.extend(["queries.jsonl", "queries.truth.jsonl"]);
    }
    for f in written {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn hyperparams(a: &TrainArgs, m: &config::ModelConfig, feature_dim: usize) -> Result<Hyperparams, Failure> {
    let preset = if m.large_scale {
        Hyperparams::large_scale(feature_dim)
    } else {
        Hyperparams::new(0, 0, feature_dim)
    };
    let regions = a.r.or(m.regions).or((preset.regions > 0).then_some(preset.regions));
    let topics = a.k.or(m.topics).or((preset.topics > 0).then_some(preset.topics));
    let word_rule = match a.word_rule {
        Some(WordRuleArg::Normalized) => Some(WordRule::Normalized),
        Some(WordRuleArg::Literal) => Some(WordRule::Literal),
        None => m.word_rule,
    };
    let mixture_counts = match a.mixture_counts {
        Some(MixtureArg::Words) => Some(MixtureCounts::Words),
        Some(MixtureArg::WordsAndPatches) => Some(MixtureCounts::WordsAndPatches),
        None => m.mixture_counts,
    };
    let h = Hyperparams {
        regions: required(regions, "r", "model.regions")?,
        topics: required(topics, "k", "model.topics")?,
        a: a.a.or(m.a).unwrap_or(preset.a),
        b: a.b.or(m.b).unwrap_or(preset.b),
        c: a.c.or(m.c).unwrap_or(preset.c),
        alpha1: a.alpha1.or(m.alpha1).unwrap_or(preset.alpha1),
        alpha2: a.alpha2.or(m.alpha2).unwrap_or(preset.alpha2),
        epsilon: a.epsilon.or(m.epsilon).unwrap_or(preset.epsilon),
        var_floor: m.var_floor.unwrap_or(preset.var_floor),
        dof_floor: m.dof_floor.unwrap_or(preset.dof_floor),
        geo_reg: a.geo_reg.or(m.geo_reg).unwrap_or(preset.geo_reg),
        word_rule: word_rule.unwrap_or(preset.word_rule),
        mixture_counts: mixture_counts.unwrap_or(preset.mixture_counts),
        feature_dim,
    };
    check(h.validate())?;
    Ok(h)
}

fn cmd_train(a: TrainArgs, cfg: &RunConfig) -> CmdResult {
    let t = &cfg.train;
    let corpus_path = required(a.corpus.clone().or(t.corpus.clone()), "corpus", "train.corpus")?;
    let model_path = required(a.model.clone().or(t.model.clone()), "model", "train.model")?;
    let sweeps = a.sweeps.or(t.sweeps).unwrap_or(TrainSchedule::default().sweeps);
    let schedule = TrainSchedule {
        sweeps,
        burn_in: a.burn_in.or(t.burn_in).unwrap_or(sweeps / 2),
        seed: a.seed.or(t.seed).unwrap_or(0),
        log_every: a.log_every.or(t.log_every).unwrap_or(TrainSchedule::default().log_every),
        shuffle: a.shuffle || t.shuffle.unwrap_or(false),
        keep_assignments: a.keep_assignments || t.keep_assignments.unwrap_or(false),
    };
    check(schedule.validate())?;

    let mut opts = LoadOptions::default();
    if let Some(p) = a.stop_words.clone().or(t.stop_words.clone()) {
        opts.stop_words = load_stop_words(p)?;
    }
    let corpus = Corpus::load_with(&corpus_path, &opts)?;
    let hyper = hyperparams(&a, &cfg.model, corpus.feature_dim)?;
    let mut last = f64::NAN;
    let stdout = std::io::stdout();
    let state = gtmi::train_with_log(&corpus, hyper, &schedule, |log| {
        last = log.joint_ll;
        let _ = writeln!(stdout.lock(), "{log}");
    })?;
    save_model(&state, &model_path, schedule.keep_assignments)?;
    println!("final joint_ll={last}");
    println!("wrote {}", model_path.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs, cfg: &RunConfig) -> CmdResult {
    let p = &cfg.predict;
    let model_path = required(a.model.or(p.model.clone()), "model", "predict.model")?;
    let queries_path = required(a.queries.or(p.queries.clone()), "queries", "predict.queries")?;
    let out = required(a.out.or(p.out.clone()), "out", "predict.out")?;
    let mode = a.mode.map(Mode::from).or(p.mode).unwrap_or(Mode::TextVisual);
    let cfg_neighbors = match mode {
        Mode::Visual => p.neighbors_visual,
        Mode::TextVisual => p.neighbors_text_visual,
    };
    let mut opts = PredictOptions::new(mode, a.seed.or(p.seed).unwrap_or(0));
    opts.neighbors = a.neighbors.or(cfg_neighbors).unwrap_or(opts.neighbors);
    opts.fold_in_sweeps = a.fold_in_sweeps.or(p.fold_in_sweeps).unwrap_or(opts.fold_in_sweeps);
    opts.mean_location = a.mean_location || p.mean_location.unwrap_or(false);
    check(opts.validate())?;

    let model = load_model(&model_path)?;
    let (queries, dropped) = load_queries(&queries_path, &model.vocab, model.hyper.feature_dim)?;
    if dropped > 0 {
        eprintln!("warning: {dropped} query words are not in the model vocabulary and were ignored");
    }
    let records = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let stream = u32::try_from(i).context("too many queries")?;
            let pred = predictor::predict(&model, &Query::from(q), &opts, stream)
                .with_context(|| format!("query {:?}", q.id))?;
            Ok(PredictionRecord::new(&q.id, &pred))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    save_predictions(&out, &records)?;
    println!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

#[derive(Deserialize)]
struct TruthRecord {
    id: String,
    lat: Option<f64>,
    lon: Option<f64>,
}

fn load_truth_locations(path: &Path) -> anyhow::Result<Vec<(String, Location)>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if v.get("vocab").is_some() {
            continue;
        }
        let rec: TruthRecord =
            serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        match (rec.lat, rec.lon) {
            (Some(lat), Some(lon)) => out.push((rec.id, Location::new(lat, lon))),
            _ => anyhow::bail!("{}:{}: image {:?} has no location", path.display(), i + 1, rec.id),
        }
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &RunConfig) -> CmdResult {
    let e = &cfg.evaluate;
    let pred_path = required(a.predictions.or(e.predictions.clone()), "predictions", "evaluate.predictions")?;
    let truth_path = required(a.truth.or(e.truth.clone()), "truth", "evaluate.truth")?;
    let metric = if a.euclidean_degrees {
        Metric::EuclideanDegrees
    } else {
        e.metric.unwrap_or_default()
    };
    let (edges, source) = match a.edges.or(e.edges.clone()) {
        Some(v) => (v, "user"),
        None => (DEFAULT_EDGES_KM.to_vec(), "default"),
    };
    let format = match (a.format, e.format.as_deref()) {
        (Some(FormatArg::Json), _) | (None, None | Some("json")) => ReportFormat::Json,
        (Some(FormatArg::Csv), _) | (None, Some("csv")) => ReportFormat::Csv,
        (None, Some(other)) => return Err(usage(format!("unknown report format {other:?}"))),
    };
    check(evaluator::histogram_of(&[0.0], &edges).map(|_| ()))?;

    let preds = load_predictions(&pred_path)?;
    let truths = load_truth_locations(&truth_path)?;
    let pred_locs: Vec<(String, Location)> = preds.iter().map(|p| (p.id.clone(), p.location())).collect();
    let pairs = evaluator::align(&pred_locs, &truths)?;
    let mut report = EvalReport::build(&pairs, &edges, source, metric)?;

    let labels = a.labels.or(e.labels.clone());
    let gt_path = a.ground_truth.or(e.ground_truth.clone());
    let model_path = a.model.or(e.model.clone());
    match (labels, gt_path, model_path) {
        (Some(l), Some(g), Some(m)) => {
            let labels = TruthLabels::load(l)?;
            let gt = GroundTruthModel::load(g)?;
            let model = load_model(m)?;
            report.region_accuracy = Some(region_accuracy(&preds, &labels, &gt, &model)?);
        }
        (None, None, None) => {}
        _ => return Err(usage("region accuracy needs --labels, --ground-truth and --model together")),
    }

    let text = evaluator::render_report(&report, format)?;
    match a.out.or(e.out.clone()) {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("ade={} n_queries={}", report.ade, report.n_queries);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn region_accuracy(
    preds: &[PredictionRecord],
    labels: &TruthLabels,
    gt: &GroundTruthModel,
    model: &ModelState,
) -> anyhow::Result<f64> {
    let to_gt = generator::match_components(gt, model)?.learned_to_gt_region();
    let truth: HashMap<String, usize> = labels
        .images
        .iter()
        .map(|t| (t.id.clone(), t.region as usize))
        .collect();
    let predicted: Vec<(String, usize)> = preds.iter().map(|p| (p.id.clone(), p.region)).collect();
    Ok(evaluator::region_accuracy(&predicted, &truth, &to_gt)?)
}

fn top_indices(scores: impl Iterator<Item = f64>, n: usize) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = scores.enumerate().collect();
    v.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    v.truncate(n);
    v
}

fn fmt_words(model: &ModelState, top: &[(usize, f64)]) -> String {
    top.iter()
        .map(|&(w, p)| format!("{} {p:.4}", model.vocab.token(w as u32).unwrap_or("?")))
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    let m = load_model(&a.model)?;
    let (c, h) = (&m.counts, &m.hyper);
    let w_n = m.vocab_size();
    let mut s = String::new();
    writeln!(
        s,
        "regions={} topics={} vocab={} feature_dim={} images={}",
        m.regions(),
        m.topics(),
        w_n,
        h.feature_dim,
        m.images.len()
    )
    .unwrap();
    for r in 0..m.regions() {
        let e = m.geo.estimate(r);
        let [x0, x1] = c.region_switch[r];
        writeln!(
            s,
            "region {r}: images={} mean=({:.4}, {:.4}) region_words={x0} topic_words={x1}",
            c.region_images[r], e.mean[0], e.mean[1]
        )
        .unwrap();
        let top = top_indices((0..w_n).map(|w| region_word_prob(c, h, w, r)), a.top);
        writeln!(s, "  words: {}", fmt_words(&m, &top)).unwrap();
        let mix = model::region_topic_dist(c, h, r);
        let tops = top_indices(mix.into_iter(), 3.min(m.topics()));
        let tops: Vec<String> = tops.iter().map(|(k, p)| format!("{k} {p:.3}")).collect();
        writeln!(s, "  topics: {}", tops.join(", ")).unwrap();
    }
    for k in 0..m.topics() {
        writeln!(s, "topic {k}: patches={} words={}", c.patch_topic[k], c.topic_words[k]).unwrap();
        let top = top_indices((0..w_n).map(|w| topic_word_prob(c, h, w, k)), a.top);
        writeln!(s, "  words: {}", fmt_words(&m, &top)).unwrap();
        writeln!(s, "  visual mean: {}", fmt_vec(m.visual.predictive(k).mean())).unwrap();
    }
    print!("{s}");
    Ok(())
}
