use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use edu_attention::checkpoint::{self, Checkpoint};
use edu_attention::config::{parse_override_value, DataFormat, DatasetConfig, RunConfig};
use edu_attention::data::{self, EncodedSample, LabeledSample};
use edu_attention::labels::LabelRecord;
use edu_attention::metrics::{self, EvalReport};
use edu_attention::model::{self, Model};
use edu_attention::pipeline::{self, TrainedRun};
use edu_attention::segment::{self, SentenceRecord};
use edu_attention::train::TrainHooks;
use edu_attention::{Error, Polarity, Result};

const CONFIG_FILE: &str = "config.json";
const LOG_FILE: &str = "metrics.jsonl";
const CHECKPOINT_FILE: &str = "model.ckpt";
const SUMMARY_FILE: &str = "summary.json";
const PREDICTIONS_FILE: &str = "predictions.jsonl";

type Overrides = Vec<(String, Value)>;

/// Aspect-category sentiment analysis with EDU-level sparse attention.
///
/// Every configuration key can also be set as `--section.key value`, e.g.
/// `--train.lr_model 0.002`.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split sentences into EDUs and print JSONL.
    Segment(SegmentArgs),
    /// Train a model and write checkpoint, metric log, and effective config.
    Train(RunArgs),
    /// Score a checkpoint on labelled data and print the report as JSON.
    Eval(EvalArgs),
    /// Predict the polarity of given aspects for each input sentence.
    Predict(ModelInputArgs),
    /// Dump word- and EDU-level attention for each input sentence.
    Inspect(ModelInputArgs),
    /// Train with several seeds and report mean and standard deviation.
    Seeds(SeedsArgs),
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Input file; standard input when absent or `-`.
    input: Option<PathBuf>,
    /// Input is JSONL with EDU spans; only the conjunction split is applied.
    #[arg(long)]
    presegmented: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Flat dotted-key JSON config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the orthogonality term.
    #[arg(long = "no_reg", alias = "no-reg")]
    no_reg: bool,
    /// Drop the aspect-presence term.
    #[arg(long = "no_aux", alias = "no-aux")]
    no_aux: bool,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// Aspect-set preset: rest14 or mams.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    glove: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SeedsArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of seeds, counting up from `--seed` (default 1).
    #[arg(long, default_value_t = 5)]
    n: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labelled data (XML or JSONL by extension); the configured test file
    /// when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for the prediction dump.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelInputArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL (`text`, optional `edus`, and `aspects` or `labels`) or plain
    /// text lines; standard input when absent or `-`.
    input: Option<PathBuf>,
    /// A single sentence instead of an input file.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => return report(e),
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Train(a) => cmd_train(&a, &overrides),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Seeds(a) => cmd_seeds(&a, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

/// Pulls `--section.key value` and `--section.key=value` pairs out of the
/// arguments; clap sees the rest.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        let (key, raw) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
                (flag.to_string(), v)
            }
        };
        overrides.push((key, parse_override_value(&raw)));
    }
    Ok((rest, overrides))
}

fn resolve_config(a: &RunArgs, generic: &[(String, Value)]) -> Result<RunConfig> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => "{}".to_string(),
    };
    let mut overrides = Vec::new();
    if let Some(name) = &a.dataset {
        let preset = DatasetConfig::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown dataset preset `{name}` (known: rest14, mams)")))?;
        overrides.push(("dataset.name".to_string(), json!(preset.name)));
        overrides.push(("dataset.aspects".to_string(), json!(preset.aspects)));
        overrides.push(("dataset.aspect_words".to_string(), json!(preset.aspect_words)));
    }
    let flags = [
        ("train.seed", a.seed.map(|v| json!(v))),
        ("ablation.no_reg", a.no_reg.then_some(json!(true))),
        ("ablation.no_aux", a.no_aux.then_some(json!(true))),
        ("train.lambda1", a.lambda1.map(|v| json!(v))),
        ("train.lambda2", a.lambda2.map(|v| json!(v))),
        ("train.lambda3", a.lambda3.map(|v| json!(v))),
        ("dataset.glove", a.glove.as_ref().map(|p| json!(p))),
        ("out", a.out.as_ref().map(|p| json!(p))),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    overrides.extend(generic.iter().cloned());
    let cfg = RunConfig::from_flat_json(&text, &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).expect("value serializes");
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        _ => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Error::io("<stdin>", e))?;
            Ok(s)
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn cmd_segment(a: &SegmentArgs) -> Result<()> {
    let input = read_input(a.input.as_deref())?;
    let name = a.input.as_deref().unwrap_or(Path::new("<stdin>"));
    let out_name = a.out.as_deref().unwrap_or(Path::new("<stdout>"));
    let mut out = output(a.out.as_deref())?;
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            log::warn!("{}:{}: empty line skipped", name.display(), i + 1);
            continue;
        }
        let record = if a.presegmented {
            let record: SentenceRecord =
                serde_json::from_str(line).map_err(|e| Error::Validation(format!("{}:{}: {e}", name.display(), i + 1)))?;
            let sentence = segment::from_spans(&record.text, &record.edus)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", name.display(), i + 1)))?
                .resplit();
            SentenceRecord::from_sentence(&sentence, record.labels)
        } else {
            SentenceRecord::from_sentence(&segment::heuristic_segment(line)?, Vec::new())
        };
        let text = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{text}").map_err(|e| Error::io(out_name, e))?;
    }
    out.flush().map_err(|e| Error::io(out_name, e))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    seed: u64,
    steps: usize,
    epochs: usize,
    stopped_early: bool,
    best_step: Option<usize>,
    best_val: Option<&'a EvalReport>,
    tests: serde_json::Map<String, Value>,
}

fn train_into(cfg: &RunConfig, out: &Path) -> Result<TrainedRun> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(CONFIG_FILE), &cfg.to_flat_json())?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut save = |m: &Model, _: &EvalReport| checkpoint::save_checkpoint(&ckpt, m, cfg);
    let run = pipeline::run(
        cfg,
        TrainHooks {
            log_sink: Some(&mut log),
            on_best: Some(&mut save),
        },
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    // the restored best model, or the final one when there was no validation
    checkpoint::save_checkpoint(&ckpt, &run.model, cfg)?;
    let summary = TrainSummary {
        seed: cfg.train.seed,
        steps: run.outcome.steps,
        epochs: run.outcome.epochs,
        stopped_early: run.outcome.stopped_early,
        best_step: run.outcome.best_step,
        best_val: run.outcome.best_val.as_ref(),
        tests: run
            .tests
            .iter()
            .map(|(k, r)| (k.clone(), serde_json::to_value(r).expect("report serializes")))
            .collect(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(run)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_train(a: &RunArgs, overrides: &[(String, Value)]) -> Result<()> {
    let cfg = resolve_config(a, overrides)?;
    let out = out_dir(&cfg);
    train_into(&cfg, &out)?;
    let summary: Value = serde_json::from_str(
        &fs::read_to_string(out.join(SUMMARY_FILE)).map_err(|e| Error::io(out.join(SUMMARY_FILE), e))?,
    )
    .expect("summary was just written");
    print_json(&summary)
}

#[derive(Serialize)]
struct Spread {
    mean: f64,
    std: f64,
}

/// Mean and sample standard deviation.
fn spread(xs: &[f64]) -> Spread {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Spread { mean, std }
}

fn cmd_seeds(a: &SeedsArgs, overrides: &[(String, Value)]) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let base = resolve_config(&a.run, overrides)?;
    let out = out_dir(&base);
    let first = base.train.seed;
    let mut rows = Vec::new();
    let (mut accs, mut f1s) = (Vec::new(), Vec::new());
    for seed in first..first + a.n {
        let mut cfg = base.clone();
        cfg.train.seed = seed;
        let dir = out.join(format!("seed-{seed}"));
        cfg.out = Some(dir.clone());
        let run = train_into(&cfg, &dir)?;
        // test score when a test set exists, otherwise the best validation score
        let (set, report) = match run.tests.first() {
            Some((name, r)) => (name.clone(), r.clone()),
            None => (
                "val".to_string(),
                run.outcome
                    .best_val
                    .clone()
                    .ok_or_else(|| Error::Config("seeds needs a validation or test set".into()))?,
            ),
        };
        log::info!("seed {seed}: {set} accuracy {:.4}, macro-F1 {:.4}", report.accuracy, report.macro_f1);
        accs.push(report.accuracy);
        f1s.push(report.macro_f1);
        rows.push(json!({"seed": seed, "set": set, "accuracy": report.accuracy, "macro_f1": report.macro_f1}));
    }
    let (acc, f1) = (spread(&accs), spread(&f1s));
    eprintln!(
        "accuracy {:.2} ± {:.2}, macro-F1 {:.2} ± {:.2} over {} seeds",
        100.0 * acc.mean,
        100.0 * acc.std,
        100.0 * f1.mean,
        100.0 * f1.std,
        a.n
    );
    let summary = json!({"runs": rows, "accuracy": acc, "macro_f1": f1});
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    print_json(&summary)
}

fn load_labelled(cfg: &RunConfig, path: &Path) -> Result<Vec<LabeledSample>> {
    let mut ds = cfg.dataset.clone();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => ds.format = DataFormat::Jsonl,
        Some("xml") => ds.format = DataFormat::Xml,
        _ => {}
    }
    pipeline::load_split(&ds, path, cfg.model.max_edus)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let Checkpoint { model, config } = checkpoint::load_checkpoint(&a.checkpoint)?;
    let path = a
        .data
        .clone()
        .or_else(|| config.dataset.test.clone())
        .ok_or_else(|| Error::Config("no --data given and the checkpoint config has no test file".into()))?;
    let samples = load_labelled(&config, &path)?;
    let encoded: Vec<EncodedSample> = data::encode_all(&samples, &model.vocab);
    let (report, preds) = metrics::evaluate(&model.params, &encoded)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        metrics::write_predictions(&out.join(PREDICTIONS_FILE), &preds, &model.aspects)?;
    }
    print_json(&report)
}

/// One input sentence for `predict` and `inspect`.
#[derive(Deserialize)]
struct InputRecord {
    text: String,
    #[serde(default)]
    edus: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    aspects: Vec<String>,
    #[serde(default)]
    labels: Vec<LabelRecord>,
}

struct Input {
    sample: LabeledSample,
    /// Aspects to report; every aspect when empty.
    aspects: Vec<usize>,
}

fn parse_inputs(a: &ModelInputArgs, model: &Model) -> Result<Vec<Input>> {
    let content = match &a.text {
        Some(t) => t.clone(),
        None => read_input(a.input.as_deref())?,
    };
    let name = a.input.as_deref().unwrap_or(Path::new("<stdin>")).display().to_string();
    let aspect_id = |name: &str, line: usize| {
        model
            .aspects
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Validation(format!("line {line}: unknown aspect `{name}`")))
    };
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let at = |e: Error| Error::Validation(format!("{name}:{line_no}: {e}"));
        let (sentence, aspects, labels) = if trimmed.starts_with('{') {
            let r: InputRecord = serde_json::from_str(trimmed).map_err(|e| Error::Validation(format!("{name}:{line_no}: {e}")))?;
            let sentence = match &r.edus {
                Some(spans) => segment::from_spans(&r.text, spans).map_err(at)?.resplit(),
                None => segment::heuristic_segment(&r.text).map_err(at)?,
            };
            let labels = r
                .labels
                .iter()
                .map(|l| Ok((aspect_id(&l.aspect, line_no)?, l.polarity)))
                .collect::<Result<Vec<(usize, Polarity)>>>()?;
            let mut aspects = r
                .aspects
                .iter()
                .map(|n| aspect_id(n, line_no))
                .collect::<Result<Vec<_>>>()?;
            aspects.extend(labels.iter().map(|&(a, _)| a).filter(|a| !r.aspects.iter().any(|n| model.aspects[*a] == *n)));
            (sentence, aspects, labels)
        } else {
            (segment::heuristic_segment(trimmed).map_err(at)?, Vec::new(), Vec::new())
        };
        if sentence.edus.len() > model.config().max_edus {
            return Err(Error::Validation(format!(
                "{name}:{line_no}: {} EDUs, the model supports {}",
                sentence.edus.len(),
                model.config().max_edus
            )));
        }
        out.push(Input {
            sample: LabeledSample { sentence, labels },
            aspects,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct AspectPrediction<'a> {
    aspect: &'a str,
    polarity: Polarity,
    confidence: f64,
    probabilities: [f64; 3],
    /// Probability that the aspect is mentioned at all.
    presence: f64,
}

#[derive(Serialize)]
struct SentencePrediction<'a> {
    text: &'a str,
    predictions: Vec<AspectPrediction<'a>>,
}

fn cmd_predict(a: &ModelInputArgs) -> Result<()> {
    let Checkpoint { model, .. } = checkpoint::load_checkpoint(&a.checkpoint)?;
    let inputs = parse_inputs(a, &model)?;
    let mut out = io::stdout().lock();
    for input in &inputs {
        let encoded = EncodedSample::new(&input.sample, &model.vocab);
        let inf = model::infer(&model.params, &encoded)?;
        let aspects: Vec<usize> = if input.aspects.is_empty() {
            (0..model.num_aspects()).collect()
        } else {
            input.aspects.clone()
        };
        let predictions = aspects
            .iter()
            .map(|&k| {
                let probabilities = inf.probabilities[k];
                let polarity = model::argmax(&probabilities);
                AspectPrediction {
                    aspect: &model.aspects[k],
                    polarity,
                    confidence: probabilities[polarity.index()],
                    probabilities,
                    presence: inf.presence[k],
                }
            })
            .collect();
        let line = SentencePrediction {
            text: &input.sample.sentence.text,
            predictions,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("prediction serializes"))
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn cmd_inspect(a: &ModelInputArgs) -> Result<()> {
    let Checkpoint { model, .. } = checkpoint::load_checkpoint(&a.checkpoint)?;
    let inputs = parse_inputs(a, &model)?;
    let mut out = io::stdout().lock();
    for input in &inputs {
        let mut dump = model::attention_dump(&model, &input.sample)?;
        if !input.aspects.is_empty() {
            dump.aspects.retain(|d| input.aspects.iter().any(|&k| model.aspects[k] == d.aspect));
        }
        writeln!(out, "{}", serde_json::to_string(&dump).expect("dump serializes")).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}
