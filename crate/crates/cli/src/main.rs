use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use gam_cli::commands::{self, CliError, EXIT_FAILURE};
use gam_cli::config::ConfigLayer;
use gam_cli::service::{self, AppState};
use gam_cli::EngineConfig;
use gam_core::evalharness::EvalMode;
use gam_core::{Engine, SharedEngine};

/// Exit codes: 0 success, 1 configuration or I/O failure, 2 invalid input
/// (malformed row, out-of-order or empty session), 3 model backend failure.
#[derive(Debug, Parser)]
#[command(name = "gam", version, about = "Just-in-time agentic memory")]
struct Cli {
    /// Flat TOML config file. Defaults to ./gam.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory.
    #[arg(long = "store", alias = "store-path", global = true)]
    store_path: Option<PathBuf>,
    #[arg(long, global = true)]
    page_size: Option<usize>,
    #[arg(long, alias = "max-depth", global = true)]
    max_reflection_depth: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// integration-only, integration-with-page or integration-with-extraction.
    #[arg(long, alias = "format", global = true)]
    output_format: Option<String>,
    /// Comma-separated subset of bm25, embedding, page_id.
    #[arg(long, alias = "tools", value_delimiter = ',', global = true)]
    enabled_tools: Option<Vec<String>>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    api_key: Option<String>,
    /// Answer from a scripted-rule JSON file instead of an HTTP endpoint.
    #[arg(long, global = true)]
    scripted_rules: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Memorize and page a JSONL file of sessions into the store.
    Ingest { sessions: PathBuf },
    /// Research a request and print the final context.
    Research { request: String },
    /// Score a QA dataset and write report.json.
    Eval {
        dataset: PathBuf,
        #[arg(long, default_value = "gam")]
        mode: EvalMode,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

impl Cli {
    fn flags(&self) -> ConfigLayer {
        ConfigLayer {
            page_size: self.page_size,
            max_reflection_depth: self.max_reflection_depth,
            top_k: self.top_k,
            output_format: self.output_format.clone(),
            enabled_tools: self.enabled_tools.clone(),
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key: self.api_key.clone(),
            scripted_rules: self.scripted_rules.clone(),
            store_path: self.store_path.clone(),
        }
    }

    fn resolve(&self) -> Result<EngineConfig, CliError> {
        let file = match &self.config {
            Some(path) => ConfigLayer::read(path)?,
            None if Path::new("gam.toml").exists() => ConfigLayer::read(Path::new("gam.toml"))?,
            None => ConfigLayer::default(),
        };
        let env = ConfigLayer::from_env(|k| std::env::var(k).ok());
        Ok(EngineConfig::resolve(self.flags(), env, file)?)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.resolve()?;
    let backend = config.backend.build()?;
    match cli.command {
        Command::Ingest { sessions } => {
            let summary = commands::ingest(&config, &sessions, &backend)?;
            println!("{summary}");
        }
        Command::Research { request } => {
            let (out, trace) = commands::research(&config, &request, &backend)?;
            println!("{}", out.context);
            eprintln!("trace: {}", trace.display());
        }
        Command::Eval { dataset, mode, out } => {
            let report = commands::eval(&config, &dataset, mode, &out, &backend)?;
            print!("{}", report.to_table());
            eprintln!("report: {}", out.display());
        }
        Command::Serve { port, host } => {
            let engine = Engine::open_or_create(&config.store_path, config.engine_settings())
                .map_err(|source| CliError::Store {
                    path: config.store_path.clone(),
                    source,
                })?;
            let state = AppState {
                engine: Arc::new(SharedEngine::new(engine)),
                backend: Arc::from(backend),
                store_path: Some(config.store_path.clone()),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: PathBuf::from("<runtime>"),
                source,
            })?;
            runtime
                .block_on(service::serve(state, SocketAddr::new(host, port)))
                .map_err(|source| CliError::Io {
                    path: PathBuf::from(format!("{host}:{port}")),
                    source,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_FAILURE as u8))
        }
    }
}
