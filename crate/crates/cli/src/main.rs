use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aasist2::config::{apply_override, RunConfig};
use aasist2::data::{duration_histogram, load_corpus, wav_durations, write_corpus, DurationHistogram, HistogramBins, SynthSpec};
use aasist2::eval::{evaluate_at_durations, write_scores, ReportFormat};
use aasist2::train::{append_log, detector, load_trained, save_outcome, train, TRAIN_LOG};
use aasist2::verify::gradcheck_suite;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] aasist2::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0} gradient checks failed")]
    GradCheck(usize),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::GradCheck(_) => "gradcheck",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "aasist2", version, about = "Anti-spoofing training, evaluation and corpus tools")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file: a run config (train, eval) or a corpus spec (synth-data).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "text"])]
    format: String,
    /// Override any config field, e.g. `--set optim.lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a detector; writes best/last checkpoints and a JSONL log.
    Train,
    /// Score the eval set at every duration condition.
    Eval,
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Render a synthetic bonafide/spoof corpus.
    SynthData,
    /// Duration histogram of the WAV files in a directory.
    Stats {
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(first_line(&e.to_string()))),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim_start_matches("error: ").to_owned()
}

fn fail(e: &CliError) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error kind={} message={msg}", e.kind());
    ExitCode::FAILURE
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let format: ReportFormat = c.format.parse()?;
    match &cli.cmd {
        Cmd::Train => cmd_train(c),
        Cmd::Eval => cmd_eval(c, format),
        Cmd::Gradcheck => cmd_gradcheck(format),
        Cmd::SynthData => cmd_synth(c),
        Cmd::Stats { dir } => cmd_stats(c, dir, format),
    }
}

fn overrides(c: &Common) -> Vec<String> {
    let mut o = c.set.clone();
    if let Some(s) = c.seed {
        o.push(format!("seed={s}"));
    }
    o
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    Ok(RunConfig::load(path, &overrides(c))?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| aasist2::Error::io(dir, e).into())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = run_config(c)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.data.checkpoint_dir.clone())
        .ok_or_else(|| CliError::Usage("--out or data.checkpoint_dir is required".into()))?;
    let train_set = load_corpus(cfg.require("train_protocol")?, cfg.require("train_audio")?)?;
    let dev_set = match (&cfg.data.dev_protocol, &cfg.data.dev_audio) {
        (Some(p), Some(a)) => load_corpus(p, a)?,
        _ => Vec::new(),
    };
    create_dir(&out)?;
    let log = out.join(TRAIN_LOG);
    if log.exists() {
        std::fs::remove_file(&log).map_err(|e| aasist2::Error::io(&log, e))?;
    }
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| aasist2::Error::io(&out, e))?;
    let outcome = train(&cfg, &train_set, &dev_set, |r| {
        eprintln!(
            "epoch {:>3}  train {:.4}  dev {}  dev_eer {}  chunk {:.0}",
            r.epoch,
            r.train_loss,
            r.dev_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.dev_eer.map_or("-".into(), |v| format!("{:.2}%", 100.0 * v)),
            r.chunk_mean,
        );
        append_log(&log, r)
    })?;
    save_outcome(&out, &cfg, &outcome)?;
    println!("best epoch {} -> {}", outcome.best_epoch, out.display());
    Ok(())
}

fn cmd_eval(c: &Common, format: ReportFormat) -> Result<()> {
    let ckpt = c
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let (trained, mut params) = load_trained(ckpt)?;
    // Architecture and loss always come from the checkpoint; data paths and
    // eval settings may come from --config and overrides.
    let mut cfg = match &c.config {
        Some(_) => run_config(c)?,
        None => {
            let mut doc = toml::Table::try_from(&trained).expect("config serializes");
            for o in overrides(c) {
                apply_override(&mut doc, &o)?;
            }
            let cfg: RunConfig = toml::Value::Table(doc)
                .try_into()
                .map_err(|e: toml::de::Error| aasist2::Error::Config(e.to_string()))?;
            cfg.validate()?;
            cfg
        }
    };
    cfg.encoder = trained.encoder;
    cfg.loss = trained.loss;
    let corpus = load_corpus(cfg.require("eval_protocol")?, cfg.require("eval_audio")?)?;
    let model = detector(&cfg)?;
    let conditions = cfg.eval.parsed_conditions()?;
    let (report, scored) = evaluate_at_durations(
        &mut model.scorer(&mut params),
        &cfg.eval.dataset,
        &corpus,
        &conditions,
        cfg.eval.batch_size,
    )?;
    let rendered = report.render(format);
    if let Some(out) = &c.out {
        create_dir(out)?;
        for cs in &scored {
            write_scores(out.join(format!("scores_{}.txt", cs.condition)), &cs.entries)?;
        }
        let ext = match format {
            ReportFormat::Csv => "csv",
            ReportFormat::Text => "txt",
        };
        report.write(out.join(format!("report.{ext}")), format)?;
        if format != ReportFormat::Csv {
            report.write(out.join("report.csv"), ReportFormat::Csv)?;
        }
    }
    print!("{rendered}");
    Ok(())
}

fn cmd_gradcheck(format: ReportFormat) -> Result<()> {
    let out = gradcheck_suite()?;
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            s.push_str("check,max_rel_error,tolerance,pass\n");
            for o in &out {
                writeln!(s, "{},{:e},{:e},{}", o.name, o.max_rel_error, o.tolerance, o.pass).unwrap();
            }
        }
        ReportFormat::Text => {
            let w = out.iter().map(|o| o.name.len()).max().unwrap_or(0);
            for o in &out {
                let verdict = if o.pass { "PASS" } else { "FAIL" };
                writeln!(s, "{verdict}  {:<w$}  {:.3e} < {:.0e}", o.name, o.max_rel_error, o.tolerance).unwrap();
            }
        }
    }
    print!("{s}");
    match out.iter().filter(|o| !o.pass).count() {
        0 => Ok(()),
        n => Err(CliError::GradCheck(n)),
    }
}

fn cmd_synth(c: &Common) -> Result<()> {
    let out = c
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let mut doc = match &c.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| aasist2::Error::io(p, e))?
            .parse::<toml::Table>()
            .map_err(|e| aasist2::Error::Config(e.to_string()))?,
        None => toml::Table::try_from(SynthSpec::default()).expect("spec serializes"),
    };
    for o in overrides(c) {
        apply_override(&mut doc, &o)?;
    }
    let spec = SynthSpec::from_toml(&toml::to_string(&doc).expect("table serializes"))?;
    let protocols = write_corpus(&spec, out)?;
    for p in protocols {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_stats(c: &Common, dir: &Path, format: ReportFormat) -> Result<()> {
    let durations: Vec<f64> = wav_durations(dir)?.into_iter().map(|(_, d)| d).collect();
    let h = duration_histogram(&durations, &HistogramBins::default())?;
    let rendered = match format {
        ReportFormat::Csv => h.to_csv(),
        ReportFormat::Text => histogram_text(&h),
    };
    match &c.out {
        Some(p) => std::fs::write(p, &rendered).map_err(|e| aasist2::Error::io(p, e))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn histogram_text(h: &DurationHistogram) -> String {
    let total = h.total().max(1) as f64;
    let mut s = String::new();
    for ((a, b), &n) in h.ranges.iter().zip(&h.counts) {
        let label = if b.is_infinite() { format!("{a:>4.1}s+") } else { format!("{a:>4.1}-{b:.1}s") };
        let share = n as f64 / total;
        writeln!(s, "{label:<10} {n:>6}  {:>5.1}%  {}", 100.0 * share, "#".repeat((share * 50.0).round() as usize)).unwrap();
    }
    writeln!(s, "total {}", h.total()).unwrap();
    s
}
