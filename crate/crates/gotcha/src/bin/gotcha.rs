use std::sync::Arc;

use clap::Parser;
use gotcha::{Controller, HttpTransport, Mode};

/// Debug controller for GoT nodes.
#[derive(Parser)]
#[command(name = "gotcha")]
struct Args {
    /// Address to serve the API on.
    #[arg(long, default_value = "127.0.0.1:7000")]
    listen: String,
    /// Start granting phases right away instead of paused.
    #[arg(long)]
    free_run: bool,
}

fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mode = if args.free_run { Mode::FreeRun } else { Mode::Paused };
    // the blocking http client must be built outside the runtime
    let ctl = Controller::new(Arc::new(HttpTransport::new()), mode);
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.listen).await?;
        log::info!("gotcha listening on {}", listener.local_addr()?);
        gotcha::server::serve(listener, ctl).await
    })
}
