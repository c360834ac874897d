//! `hdb`: serve the configured databases over HTTP.

use std::io::Read;
use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use hdb_core::SystemClock;
use hdb_server::{http, App, ServerConfig, StartError};

#[derive(Debug, Parser)]
#[command(name = "hdb", version, about = "Schema-transparent web administration for relational databases")]
struct Cli {
    /// Configuration file.
    #[arg(long, required_unless_present = "hash_password")]
    config: Option<PathBuf>,
    /// Overrides the configured port.
    #[arg(long)]
    port: Option<u16>,
    /// Serve one HTTP exchange on stdin/stdout and exit. The peer address is
    /// taken from REMOTE_HOST when set.
    #[arg(long)]
    single_request: bool,
    /// Read a password on stdin and print its hash for a `user` block.
    #[arg(long)]
    hash_password: bool,
}

fn run(cli: Cli) -> Result<(), String> {
    if cli.hash_password {
        let mut pw = String::new();
        std::io::stdin().read_to_string(&mut pw).map_err(|e| e.to_string())?;
        let pw = pw.trim_end_matches(['\r', '\n']);
        println!("{}", hdb_core::auth::hash_password(pw).map_err(|e| e.to_string())?);
        return Ok(());
    }
    let path = cli.config.expect("clap enforces --config");
    let mut cfg = ServerConfig::load(&path).map_err(|e| e.to_string())?;
    if let Some(port) = cli.port {
        cfg.port = port;
    }
    let app = Arc::new(App::new(cfg, Arc::new(SystemClock)).map_err(|e| e.to_string())?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let result: Result<(), StartError> = rt.block_on(async {
        if cli.single_request {
            let peer = std::env::var("REMOTE_HOST")
                .ok()
                .and_then(|h| h.parse::<IpAddr>().ok())
                .unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST));
            let io = tokio::io::join(tokio::io::stdin(), tokio::io::stdout());
            http::serve_one(app, io, peer).await
        } else {
            http::serve(app).await
        }
    });
    result.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hdb: {e}");
            ExitCode::FAILURE
        }
    }
}
