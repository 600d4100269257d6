use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pixdial::config::RunConfig;
use pixdial::pipeline;
use pixdial::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "pixdial", version, about = "Pixel-based language modelling experiments on dialect text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one setting by dotted key, e.g. `finetune.task=parse`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for pretraining and the only fine-tuning seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `paths.out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Masked-patch (or masked-token) pretraining on `paths.corpus`.
    Pretrain(Common),
    /// Fine-tune one model per seed on `paths.train`, selecting on `paths.dev`.
    Finetune(Common),
    /// Score the runs in `paths.runs` on `paths.test` at each perturbation rate.
    Evaluate(Common),
    /// Rebuild the summary and comparison table of an evaluation directory.
    Report(Common),
    /// Render text to patch images with a word-span dump.
    Render {
        #[command(flatten)]
        common: Common,
        /// Text to render instead of `paths.input`; newlines separate images.
        #[arg(long)]
        text: Option<String>,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("pretrain.seed={seed}"));
            overrides.push(format!("finetune.seeds=[{seed}]"));
        }
        if let Some(out) = &self.out {
            let out = serde_json::to_string(&out.display().to_string()).expect("string");
            overrides.push(format!("paths.out={out}"));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pretrain(c) => {
            let summary = pipeline::cmd_pretrain(&c.resolve()?)?;
            if let (Some(first), Some(last)) = (summary.curve.first(), summary.curve.last()) {
                println!("loss {:.5} -> {:.5} over {} steps", first.loss, last.loss, summary.curve.len());
            }
            println!("wrote {}", summary.dir.display());
        }
        Command::Finetune(c) => {
            let cfg = c.resolve()?;
            for run in pipeline::cmd_finetune(&cfg)? {
                println!(
                    "seed {}: best dev {} {:.1} at step {} -> {}",
                    run.seed,
                    cfg.finetune.task.metric(),
                    run.best_metric,
                    run.best_step,
                    run.dir.display()
                );
            }
        }
        Command::Evaluate(c) => {
            let out = pipeline::cmd_evaluate(&c.resolve()?)?;
            print!("{}", out.table);
            println!("wrote {}", out.dir.display());
        }
        Command::Report(c) => print!("{}", pipeline::cmd_report(&c.resolve()?)?),
        Command::Render { common, text } => {
            let written = pipeline::cmd_render(&common.resolve()?, text.as_deref())?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
