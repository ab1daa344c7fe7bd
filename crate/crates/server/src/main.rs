use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ideaspace_core::geometry::vectors;
use ideaspace_server::config::{Config, ProviderKind};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ideaspace-server", version, about = "Idea-space session server")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides provider.kind.
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Overrides server.port.
    #[arg(long)]
    port: Option<u16>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes shared geometry test vectors as JSON.
    Vectors {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    if let Some(Command::Vectors { count, seed, out }) = cli.command {
        let json = serde_json::to_string_pretty(&vectors::generate(count, seed))?;
        match out {
            Some(path) => std::fs::write(path, json + "\n")?,
            None => println!("{json}"),
        }
        return Ok(());
    }

    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.config.is_none() {
        config.provider.prompts_dir = ideaspace_core::engine::template::default_prompt_dir();
    }
    if let Some(kind) = cli.provider {
        config.provider.kind = kind;
    }
    if let Some(port) = cli.port {
        config.server.port = port;
    }

    let state = ideaspace_server::build_state(&config)?;
    ideaspace_server::serve(&config, state, |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .await?;
    Ok(())
}

