//! Word counting from the command line, and the scripted debugging
//! scenario over `got-node` processes.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use got_wordcount::cluster::{run_direct_local, sibling_binary, ProcessCluster};
use got_wordcount::driver::{run_scenario, Driver};
use got_wordcount::{demo_lines, render, MergeKind, Setup};
use gotcha::Mode;

#[derive(Parser)]
#[command(about = "Distributed word counting on GoT")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count the words of a file with in-process nodes.
    Count {
        file: PathBuf,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value = "fixed")]
        merge: MergeKind,
    },
    /// Replay the lost-update interleaving on three processes under a
    /// controller and print the schedule and the result.
    Scenario {
        merge: MergeKind,
        /// Print every granted phase.
        #[arg(long)]
        verbose: bool,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Count { file, workers, merge } => {
            let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let setup = Setup::new(text.lines().map(String::from).collect(), workers, merge);
            let counts = run_direct_local(&setup).map_err(|e| e.to_string())?;
            print!("{}", render(&counts));
        }
        Cmd::Scenario { merge, verbose } => {
            let bin = sibling_binary("got-node").ok_or("cannot find the got-node binary")?;
            let cluster = ProcessCluster::launch(&bin, &Setup::new(demo_lines(), 2, merge), Some(Mode::Paused))
                .map_err(|e| e.to_string())?;
            let ctl = cluster.controller.clone().expect("debug cluster");
            if !cluster.wait_registered(Duration::from_secs(20)) {
                return Err("nodes did not register".into());
            }
            let mut d = Driver::new(&*ctl);
            run_scenario(&mut d).map_err(|e| e.to_string())?;
            if verbose {
                for line in &d.transcript {
                    println!("{line}");
                }
            }
            println!("{} grants scripted", d.transcript.len());
            let counts = cluster.join().map_err(|e| e.to_string())?;
            print!("{}", render(&counts));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("got-wordcount: {e}");
            ExitCode::FAILURE
        }
    }
}
