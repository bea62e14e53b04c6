//! Command-line surface. Exit codes: 0 success, 1 usage/config, 2 data/I/O,
//! 3 numerical abort.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DataSource, RunConfig, OUTPUT_DIR_ENV};
use crate::error::{Error, Result};
use crate::pqc::ShiftRule;
use crate::run::{self, AblationChoice, EvalSplit};
use crate::selfcheck::{self, SelfcheckOptions};

#[derive(Debug, Parser)]
#[command(name = "qfuse", version, about = "Hybrid quantum-classical image classifier")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Run seed (all random streams derive from it).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Where results and the resolved config are written.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset as a PNG directory tree plus manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset root (default: <output-dir>/dataset).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        /// Append augmented copies of the training positives
        /// (`data.positive_copies` per image).
        #[arg(long)]
        expand_positives: bool,
    },
    /// Train, then evaluate the best checkpoint on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Train on a directory tree instead of synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
    },
    /// Evaluate a checkpoint and write eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate every image under this directory tree.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split of the configured dataset to evaluate when --data is absent.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Classify one PNG image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Run the gradient and simulator oracles.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        circuits: usize,
        /// Use a wrong parameter-shift rule (checks that the self-check notices).
        #[arg(long, hide = true)]
        inject_shift_fault: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    None,
    ClassicalOnly,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.run.threads = t;
    }
    if let Some(d) = &c.output_dir {
        cfg.run.output_dir = d.clone();
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn execute(cli: Cli) -> Result<()> {
    let file_cfg = base_config(cli.config.as_ref());
    match cli.command {
        Command::Synth {
            common,
            out,
            n_per_class,
            patch_size,
            expand_positives,
        } => {
            let mut cfg = file_cfg?;
            apply_common(&mut cfg, &common);
            if let Some(n) = n_per_class {
                cfg.data.synthetic.n_per_class = n;
            }
            if let Some(p) = patch_size {
                cfg.data.synthetic.patch_size = p;
            }
            cfg.data.source = DataSource::Synthetic;
            cfg.validate()?;
            cfg.write_resolved()?;
            let root = out.unwrap_or_else(|| cfg.run.output_dir.join("dataset"));
            let rep = run::with_threads(cfg.run.threads, || run::cmd_synth(&cfg, &root, expand_positives))??;
            println!(
                "wrote {} negatives and {} positives ({} augmented) to {}",
                rep.negatives,
                rep.positives,
                rep.expanded,
                rep.root.display()
            );
        }
        Command::Train {
            common,
            epochs,
            batch_size,
            data,
            ablation,
        } => {
            let mut cfg = file_cfg?;
            apply_common(&mut cfg, &common);
            if let Some(e) = epochs {
                cfg.run.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.run.batch_size = b;
            }
            if let Some(d) = data {
                cfg.data.source = DataSource::Directory;
                cfg.data.path = Some(d);
            }
            let choice = match ablation {
                None => AblationChoice::Config,
                Some(AblationArg::None) => AblationChoice::None,
                Some(AblationArg::ClassicalOnly) => AblationChoice::ClassicalOnly,
                Some(AblationArg::Both) => AblationChoice::Both,
            };
            let summaries = run::with_threads(cfg.run.threads, || run::cmd_train(&cfg, choice))??;
            print!("{}", run::comparison_csv(&summaries));
            for s in &summaries {
                println!("{}: results in {}", s.label, s.output_dir.display());
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
        } => {
            let has_file = cli.config.is_some();
            let mut cfg = file_cfg?;
            apply_common(&mut cfg, &common);
            let expected = has_file.then(|| cfg.model.clone());
            cfg.write_resolved()?;
            let which = match split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Val => EvalSplit::Val,
                SplitArg::Test => EvalSplit::Test,
                SplitArg::All => EvalSplit::All,
            };
            let report = run::with_threads(cfg.run.threads, || {
                run::cmd_eval(&cfg, &checkpoint, expected.as_ref(), data.as_deref(), which)
            })??;
            let path = run::write_eval_report(&report, &cfg.run.output_dir)?;
            print_json(&report);
            log::info!("wrote {}", path.display());
        }
        Command::Predict {
            checkpoint,
            image,
            threshold,
        } => {
            let p = run::cmd_predict(&checkpoint, &image, threshold)?;
            let q: Vec<String> = p.q.iter().map(|v| format!("{v:.6}")).collect();
            println!("label: {}", p.label);
            println!("probability: {:.6}", p.probability);
            println!("q: [{}]", q.join(", "));
        }
        Command::Selfcheck {
            seed,
            circuits,
            inject_shift_fault,
        } => {
            let rule = if inject_shift_fault {
                ShiftRule { shift: 1.4, scale: 0.5 }
            } else {
                ShiftRule::default()
            };
            let results = selfcheck::run_all(&SelfcheckOptions { seed, circuits, rule })?;
            for r in &results {
                println!("{r}");
            }
            if let Some(bad) = results.iter().find(|r| !r.passed) {
                return Err(Error::Numerical(format!("self-check `{}` failed", bad.name)));
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
