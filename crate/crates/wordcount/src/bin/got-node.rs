//! One wordcount node per process.
//!
//! When it serves, the first stdout line is `listening <addr>`. A Grouper
//! then prints its tally.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use got_node::{Node, NodeConfig};
use got_wordcount::schema::registry;
use got_wordcount::{grouper_app, render, worker_app, MergeKind};

#[derive(Clone, Copy, ValueEnum)]
enum App {
    Grouper,
    Worker,
}

#[derive(Parser)]
#[command(about = "Run a Grouper or WordCounter node")]
struct Args {
    #[arg(long, value_enum)]
    app: App,
    #[arg(long)]
    name: String,
    /// Serve on 127.0.0.1:PORT (0 picks one).
    #[arg(long)]
    port: Option<u16>,
    /// Address of the Grouper (workers only).
    #[arg(long)]
    remote: Option<String>,
    /// Controller address; GOTCHA_GCN is used when absent.
    #[arg(long)]
    debug: Option<String>,
    #[arg(long, default_value = "fixed")]
    merge: MergeKind,
    #[arg(long, default_value_t = 2)]
    poll_ms: u64,
    /// grouper: <input-file> <workers>; worker: <index> <workers>
    rest: Vec<String>,
}

fn run(args: Args) -> Result<(), String> {
    let arg = |i: usize, what: &str| args.rest.get(i).cloned().ok_or(format!("missing <{what}>"));
    let num = |s: String, what: &str| s.parse::<usize>().map_err(|e| format!("bad <{what}>: {e}"));

    let mut cfg = NodeConfig::new(&args.name, registry()).debug(args.debug.as_deref());
    if let Some(port) = args.port {
        cfg = cfg.listen(&format!("127.0.0.1:{port}"));
    }
    if let Some(r) = &args.remote {
        cfg = cfg.remote(r);
    }
    if matches!(args.app, App::Grouper) {
        cfg = cfg.resolver(args.merge.resolver());
    }
    let node = Node::launch(cfg).map_err(|e| e.to_string())?;
    if let Some(addr) = node.address() {
        println!("listening {addr}");
        std::io::stdout().flush().map_err(|e| e.to_string())?;
    }
    match args.app {
        App::Grouper => {
            let path = PathBuf::from(arg(0, "input-file")?);
            let workers = num(arg(1, "workers")?, "workers")?;
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let lines: Vec<String> = text.lines().map(String::from).collect();
            let poll = Duration::from_millis(args.poll_ms);
            let counts = node
                .run(|df| grouper_app(df, &lines, workers, poll))
                .map_err(|e| e.to_string())?;
            print!("{}", render(&counts));
        }
        App::Worker => {
            if args.remote.is_none() {
                return Err("a worker needs --remote".into());
            }
            let index = num(arg(0, "index")?, "index")?;
            let workers = num(arg(1, "workers")?, "workers")?;
            node.run(|df| worker_app(df, index, workers)).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("got-node: {e}");
            ExitCode::FAILURE
        }
    }
}
