use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wglab_cli::{dwt, run, spec, synth, CliError, CliResult};
use wglab_core::verify::{run_suite, VerifyOptions};
use wglab_core::wavelet::WaveletMode;

/// Causal multi-scale GPT experiments: data synthesis, training, comparison,
/// wavelet inspection and self-verification.
#[derive(Parser)]
#[command(name = "wglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Run spec (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a spec field, e.g. `--set train.batch_size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset into out_dir with a manifest.
    Synth(SpecArgs),
    /// Train one model.
    Train(SpecArgs),
    /// Train several wavelet modes on the same data and tabulate speedups.
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
        /// Modes to train; the first is the baseline.
        #[arg(long, value_delimiter = ',', default_value = "off,fixed,learnable,ema")]
        modes: Vec<WaveletMode>,
        /// One seed for all members or one per mode.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Members trained at the same time.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Haar pyramid and causal traces of a numeric sequence.
    Dwt {
        /// Whitespace or comma separated numbers.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient, causality and oracle checks.
    Verify {
        /// Break the backward rule of this gradient case (repeatable).
        #[arg(long)]
        corrupt: Vec<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec = spec::load(&a.config, &a.overrides)?;
            let m = synth::cmd_synth(&spec)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} training and {} held-out records to {}", m.train_samples, m.valid_samples, spec.out_dir.display());
        }
        Command::Train(a) => {
            let spec = spec::load(&a.config, &a.overrides)?;
            let s = run::cmd_train(&spec)?;
            println!(
                "final nll {} best nll {} params {} extra {} ({:.3}% of the rest)",
                s.final_nll.map_or("-".into(), |v| format!("{v:.4}")),
                s.best_nll.map_or("-".into(), |v| format!("{v:.4}")),
                s.param_count,
                s.extra_params,
                100.0 * s.extra_ratio
            );
        }
        Command::Compare { spec: a, modes, seeds, jobs } => {
            let spec = spec::load(&a.config, &a.overrides)?;
            let report = run::cmd_compare(&spec, &modes, &seeds, jobs)?;
            print!("{}", report.table());
            if report.failed() {
                return Err(CliError::Failed("one or more members failed; partial report written".into()));
            }
        }
        Command::Dwt { input, levels, out } => {
            let x = dwt::parse_signal(&std::fs::read_to_string(&input)?)?;
            let report = dwt::cmd_dwt(&x, levels)?;
            let text = serde_json::to_string_pretty(&report).map_err(wglab_core::Error::from)?;
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                // A closed pipe (`wglab dwt … | head`) is not an error.
                None => {
                    let _ = writeln!(std::io::stdout(), "{text}");
                }
            }
        }
        Command::Verify { corrupt, instances, seed, json } => {
            let known: Vec<String> = wglab_core::verify::gradient_cases().into_iter().map(|c| c.op).collect();
            if let Some(bad) = corrupt.iter().find(|c| !known.contains(c)) {
                return Err(CliError::Config(format!("no gradient case `{bad}`; known: {}", known.join(", "))));
            }
            let report = run_suite(&VerifyOptions { instances, seed, corrupt, ..VerifyOptions::default() });
            print!("{}", report.render());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&report).map_err(wglab_core::Error::from)?;
                std::fs::write(p, text + "\n")?;
            }
            if !report.all_passed() {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                return Err(CliError::Failed(format!("failed checks: {}", names.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
