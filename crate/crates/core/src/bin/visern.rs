//! Command-line front end: synthesize data, train, evaluate, check
//! gradients, export attention maps and run the normalization ablation.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use visern::ablation::{ablate, write_ablation_csv};
use visern::config::TrainConfig;
use visern::error::{exit_code, Error, Result};
use visern::eval::{attention_rows, evaluate, write_attention_csv, write_reports_csv};
use visern::graph::Normalization;
use visern::parallel::{build_pool, threads_from_env};
use visern::regions::{
    load_split, save_split, synth::synth_vocab, synth_dataset, write_vocab, Split, SplitFiles,
    SynthConfig,
};
use visern::trainer::{
    gradcheck_all, gradcheck_variants, prepare, train_with, write_log_csv, Checkpoint,
};

#[derive(Parser)]
#[command(
    name = "visern",
    version,
    about = "Random-walk graph reasoning for video-text retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (train, val and test splits plus vocabulary).
    Synth(SynthArgs),
    /// Train a model and write checkpoints and a loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split in both retrieval directions.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
    /// Export per-region attention scores for a split.
    Attn(AttnArgs),
    /// Train and evaluate once per normalization kind (none, row, sym, rw).
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Random seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Training pairs (at least 2).
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    /// Validation pairs [default: half of --pairs].
    #[arg(long)]
    val_pairs: Option<usize>,
    /// Test pairs [default: half of --pairs].
    #[arg(long)]
    test_pairs: Option<usize>,
    /// Frames per video.
    #[arg(long, default_value_t = visern::regions::DEFAULT_FRAMES)]
    frames: usize,
    /// Regions per frame.
    #[arg(long, default_value_t = visern::regions::DEFAULT_REGIONS)]
    n: usize,
    /// Region feature width.
    #[arg(long, default_value_t = visern::regions::DEFAULT_FEATURE_DIM)]
    d: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = 1000)]
    vocab: usize,
    /// Number of latent topics.
    #[arg(long, default_value_t = 20)]
    topics: usize,
    /// Tokens per caption.
    #[arg(long, default_value_t = 8)]
    caption_len: usize,
    /// Standard deviation of the per-region Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainingOptions {
    /// key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra config entry as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Normalization kind: rw, sym, row or none.
    #[arg(long)]
    normalization: Option<Normalization>,
}

impl TrainingOptions {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.normalization {
            cfg.normalization = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    options: TrainingOptions,
    /// Directory written by `synth` (or laid out the same way).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.vsck, best.vsck, train_log.csv and config.txt.
    #[arg(long)]
    out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data directory.
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write the report CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the attention CSV for the split here.
    #[arg(long)]
    attention: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed of the random instance.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also check every normalization kind under both adjacency modes.
    #[arg(long)]
    all_variants: bool,
}

#[derive(Args)]
struct AttnArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data directory.
    #[arg(long)]
    data: PathBuf,
    /// Split to export.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Only the first N videos.
    #[arg(long)]
    max_videos: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    options: TrainingOptions,
    /// Data directory with train, val and test splits.
    #[arg(long)]
    data: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let base = SynthConfig {
        seed: a.seed,
        num_pairs: a.pairs,
        frames: a.frames,
        n: a.n,
        d: a.d,
        vocab_size: a.vocab,
        noise_scale: a.noise,
        num_topics: a.topics,
        caption_len: a.caption_len,
    };
    base.validate()?;
    let half = (a.pairs / 2).max(2);
    fs::create_dir_all(&a.out)?;
    for (split, pairs) in [
        (Split::Train, a.pairs),
        (Split::Val, a.val_pairs.unwrap_or(half)),
        (Split::Test, a.test_pairs.unwrap_or(half)),
    ] {
        let ds = synth_dataset(
            &SynthConfig {
                num_pairs: pairs,
                ..base.clone()
            },
            split,
        )?;
        save_split(&a.out, &ds)?;
    }
    let mut w = BufWriter::new(fs::File::create(
        SplitFiles::new(&a.out, Split::Train).vocab,
    )?);
    write_vocab(&synth_vocab(a.vocab), &mut w)?;
    w.flush()?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = a.options.resolve()?;
    let train_set = load_split(&a.data, Split::Train)?;
    let val = load_split(&a.data, Split::Val)?;
    let quiet = a.quiet;
    let out = train_with(&train_set, &val, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train {:.6}  val {:.6}  lr {:e}",
                e.epoch, e.train_loss, e.val_loss, e.lr
            );
        }
    })?;
    fs::create_dir_all(&a.out)?;
    out.last.save(&a.out.join("checkpoint.vsck"))?;
    out.best.save(&a.out.join("best.vsck"))?;
    fs::write(a.out.join("config.txt"), cfg.dump())?;
    let mut log = BufWriter::new(fs::File::create(a.out.join("train_log.csv"))?);
    write_log_csv(&out.log, &mut log)?;
    log.flush()?;
    Ok(())
}

fn load_for(
    checkpoint: &Path,
    data: &Path,
    split: Split,
) -> Result<(Checkpoint, visern::regions::Dataset)> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = prepare(&load_split(data, split)?, ck.config.frames);
    Ok((ck, ds))
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let (ck, ds) = load_for(&a.checkpoint, &a.data, a.split)?;
    let ev = evaluate(&ck.model, &ds)?;
    let mut w = output(a.out.as_deref())?;
    write_reports_csv(ev.reports(), &mut w)?;
    w.flush()?;
    if let Some(path) = &a.attention {
        let rows = attention_rows(&ck.model, &ds, usize::MAX)?;
        let mut w = output(Some(path))?;
        write_attention_csv(&rows, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    let report = gradcheck_all(a.seed)?;
    println!(
        "max_rel_error={:e} tolerance={:e}",
        report.max_rel_error, report.tolerance
    );
    for (name, err) in &report.per_parameter_errors {
        println!("  {name:<10} {err:e}");
    }
    let mut passed = report.passed;
    if a.all_variants {
        for (kind, adjacency, r) in gradcheck_variants(a.seed)? {
            println!(
                "variant {kind}/{adjacency}: max_rel_error={:e}",
                r.max_rel_error
            );
            passed &= r.passed;
        }
    }
    if passed {
        println!("passed");
        Ok(())
    } else {
        Err(Error::Check(format!(
            "max relative gradient error {:e} exceeds {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn attn_cmd(a: &AttnArgs) -> Result<()> {
    let (ck, ds) = load_for(&a.checkpoint, &a.data, a.split)?;
    let rows = attention_rows(&ck.model, &ds, a.max_videos.unwrap_or(usize::MAX))?;
    let mut w = output(Some(&a.out))?;
    write_attention_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let cfg = a.options.resolve()?;
    let [train_set, val, test] = Split::ALL.map(|s| load_split(&a.data, s));
    let rows = ablate(&train_set?, &val?, &test?, &cfg)?;
    let mut w = output(a.out.as_deref())?;
    write_ablation_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let pool = build_pool(threads_from_env()?)?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Attn(a) => attn_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit_code::USAGE
            } else {
                exit_code::OK
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
