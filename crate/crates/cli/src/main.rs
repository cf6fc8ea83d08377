use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cuefsl::checkpoint::Checkpoint;
use cuefsl::config::RunConfig;
use cuefsl::context::{AttentionDump, ContextSource, LabelWeight};
use cuefsl::episodic::{
    evaluate, noise_sweep, strata_eval, train, EvalReport, ModelParams, ModelVariant,
};
use cuefsl::synthcorpus::{generate_corpus, Corpus};

#[derive(Parser)]
#[command(
    name = "cuefsl",
    version,
    about = "Context-aware few-shot classification experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact of the command.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<ModelVariant>,
    /// Training episodes for `train`, evaluation episodes otherwise.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    context_source: Option<SourceArg>,
    #[arg(long, global = true)]
    p_noise: Option<f64>,
    /// Existing corpus file instead of generating one.
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Cs,
    Ct,
    Union,
}

impl From<SourceArg> for ContextSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Cs => ContextSource::Cs,
            SourceArg::Ct => ContextSource::Ct,
            SourceArg::Union => ContextSource::Union,
        }
    }
}

fn parse_variant(s: &str) -> Result<ModelVariant, String> {
    s.parse().map_err(|e: cuefsl::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen,
    /// Train one variant and write a checkpoint and loss curve.
    Train,
    /// Evaluate a checkpoint on the test classes.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Also report accuracy per object-size bin, e.g. `0.001,0.01,0.1,1`.
        #[arg(long, value_delimiter = ',')]
        size_bins: Option<Vec<f64>>,
    },
    /// Accuracy grid over ways, shots and noise levels as CSV.
    Sweep {
        /// Evaluate this checkpoint in every cell instead of training per (ways, shots).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ways: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        /// Training episodes per cell when no checkpoint is given.
        #[arg(long)]
        train_episodes: Option<usize>,
    },
    /// Rank context labels by class-conditioned attention weight.
    Attend {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Focal class word.
        #[arg(long)]
        focal: String,
        /// Context labels; defaults to every class of the context source.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        /// Length of the top and bottom slices.
        #[arg(long, default_value_t = 3)]
        slice: usize,
    },
    /// Write per-instance embeddings as TSV.
    Export {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

/// Prints a line to stdout. Artifacts live in files, so a closed pipe is
/// not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Error category for the single-line report.
fn category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<cuefsl::Error>())
        .map(cuefsl::Error::category)
        .or_else(|| {
            err.chain()
                .any(|e| e.downcast_ref::<std::io::Error>().is_some())
                .then_some("io")
        })
        .unwrap_or("usage")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{}]: {message}", category(&err));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Gen => cmd_gen(c),
        Command::Train => cmd_train(c),
        Command::Eval {
            ref checkpoint,
            ref size_bins,
        } => cmd_eval(c, checkpoint, size_bins.as_deref()),
        Command::Sweep {
            ref checkpoint,
            ref ways,
            ref shots,
            ref noise,
            train_episodes,
        } => cmd_sweep(c, checkpoint.as_deref(), ways, shots, noise, train_episodes),
        Command::Attend {
            ref checkpoint,
            ref focal,
            ref labels,
            slice,
        } => cmd_attend(c, checkpoint, focal, labels.as_deref(), slice),
        Command::Export {
            ref checkpoint,
            split,
        } => cmd_export(c, checkpoint, split),
    }
}

/// Config file (or `base`), then command-line overrides. `episodes` names
/// which episode count `--episodes` sets.
fn resolve(c: &Common, base: Option<RunConfig>, train_count: bool) -> Result<RunConfig> {
    let mut cfg = match (&c.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(n) = c.episodes {
        if train_count {
            cfg.train_episodes = n;
        } else {
            cfg.eval_episodes = n;
        }
    }
    if let Some(k) = c.top_k {
        cfg.top_k = k;
    }
    if let Some(s) = c.context_source {
        cfg.episode.context_source = s.into();
    }
    if let Some(p) = c.p_noise {
        cfg.episode.p_noise = p;
    }
    if let Some(p) = &c.corpus {
        cfg.corpus_path = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates the output directory and records the resolved configuration.
fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let corpus = match &cfg.corpus_path {
        Some(p) => Corpus::load(p).with_context(|| format!("loading corpus {}", p.display()))?,
        None => generate_corpus(&cfg.corpus)?,
    };
    let d_f = corpus.instances.first().map_or(0, |i| i.features.len());
    if d_f != cfg.model.d_f || corpus.words.dim() != cfg.model.d_w {
        return Err(cuefsl::Error::Config(format!(
            "corpus has d_f {d_f}, d_w {}; model expects d_f {}, d_w {}",
            corpus.words.dim(),
            cfg.model.d_f,
            cfg.model.d_w
        ))
        .into());
    }
    Ok(corpus)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Resolves the configuration for a command that starts from a checkpoint;
/// the model itself always comes from the checkpoint.
fn from_checkpoint(c: &Common, path: &Path) -> Result<(RunConfig, ModelParams)> {
    let ck = load_checkpoint(path)?;
    let model = ck.to_model()?;
    let mut cfg = resolve(c, Some(ck.config.clone()), false)?;
    if c.variant.is_some_and(|v| v != model.variant()) {
        bail!(
            "--variant {} conflicts with checkpoint variant {}",
            cfg.variant,
            model.variant()
        );
    }
    cfg.variant = model.variant();
    cfg.model = model.net.config.clone();
    Ok((cfg, model))
}

fn cmd_gen(c: &Common) -> Result<()> {
    let cfg = resolve(c, None, true)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let dir = prepare_out(&cfg)?;
    corpus.save(&dir.join("corpus.jsonl"))?;
    let mut words = Vec::new();
    corpus.words.write(&mut words)?;
    write_file(&dir.join("words.txt"), words)?;
    say!(
        "corpus: {} instances, {} train / {} test classes -> {}",
        corpus.instances.len(),
        corpus.train.len(),
        corpus.test.len(),
        dir.join("corpus.jsonl").display()
    );
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = resolve(c, None, true)?;
    let corpus = load_corpus(&cfg)?;
    let mut model = ModelParams::new(cfg.variant, cfg.model.clone(), cfg.seed)?;
    let outcome = train(&mut model, &corpus, &cfg.train_options())?;
    let dir = prepare_out(&cfg)?;
    let ck = Checkpoint::from_model(&cfg, &model);
    ck.save(&dir.join("checkpoint.bin"))?;
    write_file(&dir.join("checkpoint.manifest.txt"), ck.manifest())?;
    let mut csv = String::from("episode,loss,lr\n");
    for (e, (l, lr)) in outcome.loss_curve.iter().zip(&outcome.lr_curve).enumerate() {
        writeln!(csv, "{e},{l},{lr}")?;
    }
    write_file(&dir.join("loss.csv"), csv)?;
    let tail = &outcome.loss_curve[outcome.loss_curve.len().saturating_sub(50)..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    say!(
        "{}: {} episodes, final loss {mean_tail:.4} -> {}",
        cfg.variant,
        cfg.train_episodes,
        dir.join("checkpoint.bin").display()
    );
    Ok(())
}

fn cmd_eval(c: &Common, checkpoint: &Path, size_bins: Option<&[f64]>) -> Result<()> {
    let (cfg, model) = from_checkpoint(c, checkpoint)?;
    let corpus = load_corpus(&cfg)?;
    let opts = cfg.eval_options();
    let report = evaluate(&model, &corpus, &opts)?;
    let strata = size_bins
        .map(|edges| strata_eval(&model, &corpus, &opts, edges))
        .transpose()?;
    let dir = prepare_out(&cfg)?;
    write_json(&dir.join("eval.json"), &report)?;
    if let Some(s) = &strata {
        write_json(&dir.join("strata.json"), s)?;
    }
    say!(
        "{}: {}-way {}-shot top-{} accuracy {:.4} ± {:.4} over {} episodes",
        report.variant,
        report.spec.ways,
        report.spec.shots,
        report.top_k,
        report.mean,
        report.ci95,
        report.n_episodes
    );
    Ok(())
}

fn csv_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        r.variant,
        r.spec.ways,
        r.spec.shots,
        r.spec.p_noise,
        r.spec.context_source,
        r.top_k,
        r.n_episodes,
        r.mean,
        r.ci95
    )
}

fn cmd_sweep(
    c: &Common,
    checkpoint: Option<&Path>,
    ways: &Option<Vec<usize>>,
    shots: &Option<Vec<usize>>,
    noise: &Option<Vec<f64>>,
    train_episodes: Option<usize>,
) -> Result<()> {
    let (mut cfg, fixed) = match checkpoint {
        Some(p) => {
            let (cfg, model) = from_checkpoint(c, p)?;
            (cfg, Some(model))
        }
        None => (resolve(c, None, false)?, None),
    };
    if let Some(n) = train_episodes {
        cfg.train_episodes = n;
    }
    let ways = ways.clone().unwrap_or_else(|| vec![cfg.episode.ways]);
    let shots = shots.clone().unwrap_or_else(|| vec![cfg.episode.shots]);
    let noise = noise.clone().unwrap_or_else(|| vec![cfg.episode.p_noise]);
    let corpus = load_corpus(&cfg)?;
    let mut csv =
        String::from("variant,ways,shots,p_noise,context_source,top_k,n_episodes,mean,ci95\n");
    for &m in &ways {
        for &k in &shots {
            let mut cell = cfg.clone();
            cell.episode.ways = m;
            cell.episode.shots = k;
            cell.validate()?;
            let model = match &fixed {
                Some(model) => model.clone(),
                None => {
                    let mut model = ModelParams::new(cell.variant, cell.model.clone(), cell.seed)?;
                    train(&mut model, &corpus, &cell.train_options())?;
                    model
                }
            };
            for r in noise_sweep(&model, &corpus, &cell.eval_options(), &noise)? {
                eprintln!(
                    "{}-way {}-shot p_noise {}: {:.4} ± {:.4}",
                    m, k, r.spec.p_noise, r.mean, r.ci95
                );
                csv.push_str(&csv_row(&r));
            }
        }
    }
    let dir = prepare_out(&cfg)?;
    write_file(&dir.join("sweep.csv"), &csv)?;
    say!("{}", csv.trim_end());
    Ok(())
}

#[derive(Serialize)]
struct AttendOutput<'a> {
    focal: &'a str,
    context_source: ContextSource,
    weights: &'a [LabelWeight],
    top: &'a [LabelWeight],
    bottom: &'a [LabelWeight],
}

fn cmd_attend(
    c: &Common,
    checkpoint: &Path,
    focal: &str,
    labels: Option<&[String]>,
    slice: usize,
) -> Result<()> {
    let (cfg, model) = from_checkpoint(c, checkpoint)?;
    let corpus = load_corpus(&cfg)?;
    let source = cfg.episode.context_source;
    let labels: Vec<String> = match labels {
        Some(l) => l.to_vec(),
        None => {
            let pool = match source {
                ContextSource::Cs => &corpus.train,
                ContextSource::Ct => &corpus.test,
                ContextSource::Union => &corpus.classes,
            };
            pool.iter()
                .filter(|l| l.as_str() != focal)
                .cloned()
                .collect()
        }
    };
    let result = model.attend(focal, &labels, &corpus.words)?;
    let dump = AttentionDump::from_result(focal, &result);
    let out = AttendOutput {
        focal,
        context_source: source,
        weights: &dump.weights,
        top: dump.top(slice),
        bottom: dump.bottom(slice),
    };
    let dir = prepare_out(&cfg)?;
    write_json(&dir.join("attend.json"), &out)?;
    say!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_export(c: &Common, checkpoint: &Path, split: SplitArg) -> Result<()> {
    let (cfg, model) = from_checkpoint(c, checkpoint)?;
    let corpus = load_corpus(&cfg)?;
    let train_set = corpus.train_set();
    let instances: Vec<_> = corpus
        .instances
        .iter()
        .filter(|i| match split {
            SplitArg::All => true,
            SplitArg::Train => train_set.contains(&i.class),
            SplitArg::Test => !train_set.contains(&i.class),
        })
        .cloned()
        .collect();
    let emb = model.embed(&instances, &corpus.words)?;
    let d_x = cfg.model.d_x;
    let mut tsv = String::from("index\tclass\tsplit\tkind");
    for j in 0..d_x {
        write!(tsv, "\tx{j}")?;
    }
    tsv.push('\n');
    let mut row = |i: usize, kind: &str, v: &[f64]| -> Result<()> {
        let inst = &instances[i];
        let split = if train_set.contains(&inst.class) {
            "train"
        } else {
            "test"
        };
        write!(tsv, "{i}\t{}\t{split}\t{kind}", inst.class)?;
        for x in v {
            write!(tsv, "\t{x}")?;
        }
        tsv.push('\n');
        Ok(())
    };
    for i in 0..instances.len() {
        row(i, "visual", &emb.visual[i])?;
        if let Some(f) = &emb.fused[i] {
            row(i, "fused", f)?;
        }
    }
    let dir = prepare_out(&cfg)?;
    write_file(&dir.join("embeddings.tsv"), &tsv)?;
    say!(
        "{} instances -> {}",
        instances.len(),
        dir.join("embeddings.tsv").display()
    );
    Ok(())
}
