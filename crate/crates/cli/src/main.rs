use std::process::ExitCode;

use clap::Parser;
use dsrl::selftest::{Fault, SelftestOptions};
use dsrl_cli::{cmd_eval, cmd_gen, cmd_selftest, cmd_train, parse_threads, Cli, CliError, Command, RunConfig, THREADS_ENV};

fn run(cli: &Cli) -> Result<(), CliError> {
    let threads = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    if let Command::Selftest { inject_fault, draws } = &cli.command {
        let opts = SelftestOptions {
            seed: cli.seed.unwrap_or(0),
            membership_draws: *draws,
            fault: inject_fault.map(|_| Fault::PerturbExpMap),
            ..SelftestOptions::default()
        };
        return match cmd_selftest(&opts) {
            Ok(report) => {
                println!("{report}");
                Ok(())
            }
            Err((report, e)) => {
                println!("{report}");
                Err(e)
            }
        };
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides())?;
    match &cli.command {
        Command::Gen { .. } => println!("{}", cmd_gen(&cfg)?),
        Command::Train { .. } => {
            let summary = cmd_train(&cfg, |e| {
                let val = e.val_ap.map_or_else(|| "n/a".to_string(), |ap| format!("{ap:.4}"));
                println!("epoch {:>3}  loss {:.6}  lr {:.3e}  val AP {val}", e.epoch, e.loss, e.lr);
            })?;
            println!("kept epoch {}", summary.log.best_epoch);
            println!("checkpoint: {}", summary.checkpoint.display());
            println!("log: {}", summary.log_path.display());
        }
        Command::Eval { .. } => {
            let s = cmd_eval(&cfg)?;
            println!("AP {:.4}  AUC {:.4}  ({} videos)", s.report.ap, s.report.auc, s.report.videos.len());
            println!("metrics: {}", s.metrics_path.display());
            println!("scores: {}", s.csv_dir.display());
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
