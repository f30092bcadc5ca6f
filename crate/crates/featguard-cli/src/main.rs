//! Experiment driver for failure detection on a feature-density model.
//!
//! Exit codes: 0 success, 1 bad arguments or configuration, 2 runtime or
//! numeric failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use featguard::{Error, Result};

use featguard_cli::commands;
use featguard_cli::config::FileConfig;
use featguard_cli::pipeline::Experiment;

#[derive(Parser)]
#[command(
    name = "featguard",
    version,
    about = "Detect classifier failures by density scoring in feature space"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset and export the train/val/test splits as CSV
    GenData(Common),
    /// Train the classifier and save it as model.json
    Train(Common),
    /// Fit the feature-space mixture and save it as gmm.json
    FitGmm(Common),
    /// Score the test set and compare correct vs misclassified samples
    DetectMistakes(Common),
    /// Craft adversarial inputs from the test set
    Attack(Common),
    /// Compare clean vs adversarial scores
    DetectAdv(Common),
    /// Compare in-distribution vs out-of-distribution scores
    DetectOod(Common),
    /// Fit a softmax temperature and report calibration error
    Calibrate(Common),
    /// Run the purification grid and report accuracy per cell
    Purify(Common),
    /// Merge all reports in the output directory into report.json
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the data-parallel stages (EM, batch attacks)
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() {
    let code = match Cli::try_parse_from(std::env::args_os()) {
        Ok(cli) => match dispatch(cli) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("error: {err}");
                if err.is_validation() {
                    1
                } else {
                    2
                }
            }
        },
        // --help and --version arrive as "errors" that belong on stdout
        // with a zero exit; genuine usage errors go to stderr with 1.
        Err(err) => {
            if err.use_stderr() {
                eprint!("{err}");
                1
            } else {
                print!("{err}");
                0
            }
        }
    };
    std::process::exit(code);
}

type CommandFn = fn(&mut Experiment, Instant) -> Result<()>;

fn dispatch(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let (common, run): (&Common, CommandFn) = match &cli.command {
        Cmd::GenData(c) => (c, commands::gen_data),
        Cmd::Train(c) => (c, commands::train),
        Cmd::FitGmm(c) => (c, commands::fit_gmm),
        Cmd::DetectMistakes(c) => (c, commands::detect_mistakes),
        Cmd::Attack(c) => (c, commands::attack),
        Cmd::DetectAdv(c) => (c, commands::detect_adv),
        Cmd::DetectOod(c) => (c, commands::detect_ood),
        Cmd::Calibrate(c) => (c, commands::calibrate),
        Cmd::Purify(c) => (c, commands::purify),
        Cmd::Report(c) => (c, commands::report),
    };
    let cfg = FileConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::invalid("set out_dir in the config or pass --out"))?;
    if common.threads == 0 {
        return Err(Error::invalid("--threads must be >= 1"));
    }
    let mut exp = Experiment::new(cfg, seed, out, common.threads)?;
    run(&mut exp, started)
}
