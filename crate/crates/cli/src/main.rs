use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use mambattention::bench::{self, BenchConfig, BenchOp};
use mambattention::datagen::{synth_desk_corpus, CorpusManifest, Split, MANIFEST_NAME};
use mambattention::dsp::{read_wav, write_wav, SAMPLE_RATE};
use mambattention::metrics::{estoi, si_sdr, ssnr, MetricReport};
use mambattention::net::{count_parameters, load_checkpoint, parameter_breakdown, Model, Variant};
use mambattention::train::{Pair, RunConfig, SelectMetric, Trainer};
use mambattention::Error;

/// Speech enhancement with dual-path selective state-space and attention blocks.
#[derive(Parser)]
#[command(name = "mambattention", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic noisy/clean corpus.
    Mix(MixArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score noisy and enhanced signals against clean references.
    Evaluate(EvaluateArgs),
    /// Time the selective scan against attention over sequence lengths.
    Bench(BenchArgs),
    /// Print trainable parameter counts.
    Params(ParamsArgs),
}

#[derive(Args)]
struct MixArgs {
    /// Output directory; must exist.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    clips: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Run configuration shared by `train` and `params`.
#[derive(Args)]
struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory holding manifest.tsv.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    select_metric: Option<SelectMetric>,
    /// Where the best checkpoint is written.
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    /// Log file; stderr when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional config the checkpoint must match.
    #[arg(long)]
    config: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model to enhance with; enhanced columns are NaN without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = Split::Test)]
    split: Split,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096, 8192, 16384])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    d_state: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Report every variant and the attention overhead.
    #[arg(long)]
    all: bool,
}

/// Failure that maps to the usage exit code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Numerical(_) => EXIT_NUMERICAL,
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    mambattention::runtime::tune_allocator();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let r = match cli.cmd {
        Cmd::Mix(a) => mix(a),
        Cmd::Train(a) => train(a),
        Cmd::Enhance(a) => enhance(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Params(a) => params(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn mix(a: MixArgs) -> anyhow::Result<()> {
    let m = synth_desk_corpus(&a.out, a.clips, a.duration, a.seed)?;
    for s in Split::ALL {
        eprintln!("event=mix split={s} clips={}", m.split(s).count());
    }
    Ok(())
}

fn run_config(c: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut rc = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("SEED") {
        rc.set("seed", &s).context("environment variable SEED")?;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        rc.set(k.trim(), v.trim())?;
    }
    if let Some(v) = c.variant {
        rc.model.variant = v;
    }
    Ok(rc)
}

fn load_pairs(dir: &Path, m: &CorpusManifest, split: Split) -> anyhow::Result<Vec<Pair>> {
    m.split(split)
        .map(|e| {
            let clean = read_wav(&dir.join(&e.clean))?;
            let noisy = read_wav(&dir.join(&e.noisy))?;
            if clean.len() != noisy.len() {
                bail!("{}: clean and noisy lengths differ", e.noisy.display());
            }
            Ok(Pair {
                id: e.spec.clean_id.clone(),
                clean,
                noisy,
            })
        })
        .collect()
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut rc = run_config(&a.cfg)?;
    if let Some(v) = a.steps {
        rc.steps = v;
    }
    if let Some(v) = a.batch_size {
        rc.batch_size = v;
    }
    if let Some(v) = a.lr {
        rc.optim.lr = v;
    }
    if let Some(v) = a.seed {
        rc.seed = v;
    }
    if let Some(v) = a.select_metric {
        rc.select_metric = v;
    }
    rc.validate()?;
    let manifest = CorpusManifest::read(&a.corpus.join(MANIFEST_NAME))?;
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .flat_map(|e| [&e.clean, &e.noisy])
        .filter(|p| !a.corpus.join(p).is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format {
            path: a.corpus.clone(),
            detail: format!("missing corpus files: {}", missing.join(", ")),
        }
        .into());
    }
    let train = load_pairs(&a.corpus, &manifest, Split::Train)?;
    let valid = load_pairs(&a.corpus, &manifest, Split::Valid)?;
    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating log {}", p.display()))?,
        )),
        None => Box::new(io::stderr()),
    };
    let pairs: Vec<String> = rc.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(log, "event=config {}", pairs.join(" "))?;
    let mut trainer = Trainer::new(rc)?;
    let best = trainer.fit(&train, &valid, Some(&a.checkpoint), &mut log)?;
    writeln!(
        log,
        "event=done steps={} best={} checkpoint={}",
        trainer.step,
        best.map_or("none".to_string(), |b| format!("{b:.6}")),
        a.checkpoint.display()
    )?;
    log.flush()?;
    Ok(())
}

fn enhance(a: EnhanceArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    if let Some(p) = &a.config {
        let rc = RunConfig::from_file(p)?;
        if rc.model != model.config {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model config than {}",
                a.checkpoint.display(),
                p.display()
            ))
            .into());
        }
    }
    let x = read_wav(&a.input)?;
    let y = model.enhance(&x)?;
    write_wav(&a.output, &y)?;
    Ok(())
}

fn scores(clean: &[f64], est: &[f64]) -> [f64; 3] {
    [
        si_sdr(clean, est).unwrap_or(f64::NAN),
        ssnr(clean, est).unwrap_or(f64::NAN),
        estoi(clean, est, SAMPLE_RATE).unwrap_or(f64::NAN),
    ]
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    eprintln!("pesq: unavailable");
    let manifest = CorpusManifest::read(&a.corpus.join(MANIFEST_NAME))?;
    let model: Option<Model> = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut report = MetricReport::new(&[
        "noisy_si_sdr",
        "noisy_ssnr",
        "noisy_estoi",
        "enhanced_si_sdr",
        "enhanced_ssnr",
        "enhanced_estoi",
    ]);
    let mut problems = Vec::new();
    for e in manifest.split(a.split) {
        let (clean, noisy) = match (read_wav(&a.corpus.join(&e.clean)), read_wav(&a.corpus.join(&e.noisy))) {
            (Ok(c), Ok(n)) => (c, n),
            (c, n) => {
                for err in [c.err(), n.err()].into_iter().flatten() {
                    eprintln!("missing: {err}");
                    problems.push(err.to_string());
                }
                continue;
            }
        };
        let mut row = scores(&clean, &noisy).to_vec();
        let enhanced = match &model {
            Some(m) => match m.enhance(&noisy) {
                Ok(y) => scores(&clean, &y),
                Err(err) => {
                    eprintln!("enhance failed: {}: {err}", e.noisy.display());
                    problems.push(err.to_string());
                    [f64::NAN; 3]
                }
            },
            None => [f64::NAN; 3],
        };
        row.extend(enhanced);
        report.push(e.spec.clean_id.clone(), row)?;
    }
    match &a.out {
        Some(p) => report.write_csv(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => report.write_csv(io::stdout().lock())?,
    }
    if !problems.is_empty() {
        bail!("{} file(s) could not be evaluated", problems.len());
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> anyhow::Result<()> {
    let cfg = BenchConfig {
        lengths: a.lengths,
        d_model: a.d_model,
        heads: a.heads,
        d_state: a.d_state,
        repeats: a.repeats,
        ..Default::default()
    };
    let t = bench::run(&cfg)?;
    match &a.out {
        Some(p) => bench::write_csv(&t, fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => bench::write_csv(&t, io::stdout().lock())?,
    }
    if cfg.lengths.len() >= 2 {
        eprintln!(
            "event=slopes selective_scan={:.3} multi_head_attention={:.3}",
            bench::slope(&t, BenchOp::Scan)?,
            bench::slope(&t, BenchOp::Attention)?
        );
    }
    Ok(())
}

fn params(a: ParamsArgs) -> anyhow::Result<()> {
    let rc = run_config(&a.cfg)?;
    rc.model.validate()?;
    let mut out = io::stdout().lock();
    if a.all {
        let mut counts = Vec::new();
        for v in Variant::ALL {
            let mut c = rc.model.clone();
            c.variant = v;
            let n = count_parameters(&c);
            writeln!(out, "variant={v} params={n}")?;
            counts.push((v, n));
        }
        let get = |v| counts.iter().find(|(w, _)| *w == v).map(|p| p.1).ok_or_else(|| anyhow!("missing {v}"));
        let (s, n) = (get(Variant::Shared)? as f64, get(Variant::NoAttention)? as f64);
        writeln!(out, "attention_overhead_percent={:.3}", 100.0 * (s - n) / n)?;
    } else {
        for (name, n) in parameter_breakdown(&rc.model) {
            writeln!(out, "component={name} params={n}")?;
        }
        writeln!(out, "variant={} params={}", rc.model.variant, count_parameters(&rc.model))?;
    }
    Ok(())
}
