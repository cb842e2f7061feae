use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dialogforge::corpus::parse_stories;
use dialogforge::dialogue::{Conversations, EventLog};
use dialogforge::evalkit::{evaluate_entities, evaluate_nlu, evaluate_policy, precision_recall_f1};
use dialogforge_gateway::app;
use dialogforge_gateway::config::{Settings, DEFAULT_PORT};
use dialogforge_gateway::lanes::Lanes;
use dialogforge_gateway::messenger::{GraphApiSender, GRAPH_API_URL};
use dialogforge_gateway::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "dialogforge",
    version,
    about = "Train, evaluate and serve the enquiry chatbot"
)]
struct Cli {
    /// `key=value` file with channel credentials.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    /// Directory holding the trained model files.
    #[arg(long, global = true, default_value = "models")]
    model: PathBuf,
    /// Answer prayer and weather requests from the bundled fixtures.
    #[arg(long, global = true)]
    offline_fixtures: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train all models and write them to the model directory.
    Train {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Intent and entity metrics on an NLU dataset.
    EvaluateNlu {
        /// Defaults to the training examples.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "reports/nlu_report.json")]
        report: PathBuf,
    },
    /// Action confusion matrix from replaying stories.
    EvaluateCore {
        /// Defaults to the training stories.
        #[arg(long)]
        stories: Option<PathBuf>,
        #[arg(long, default_value = "reports/core_report.json")]
        report: PathBuf,
    },
    /// Chat on the terminal.
    Shell {
        #[arg(long, default_value = "shell")]
        sender: String,
    },
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Where conversation event logs are kept.
        #[arg(long, default_value = "conversations")]
        log_dir: PathBuf,
    },
}

fn write_report(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("report written to {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Train { seed } => {
            let t = Instant::now();
            app::train(&cli.data_dir, &cli.model, seed)?;
            println!(
                "trained in {:.1?}; models written to {}",
                t.elapsed(),
                cli.model.display()
            );
        }
        Command::EvaluateNlu { data, report } => {
            let domain = app::load_domain(&cli.data_dir)?;
            let models = app::load_models(&cli.model)?;
            let path = data.unwrap_or_else(|| cli.data_dir.join(app::NLU_FILE));
            let examples = app::load_examples(&path)?;
            let intents = evaluate_nlu(&models.intent, &examples)?;
            let entities = evaluate_entities(&models.crf, &examples, &domain)?;
            println!("intents\n{}\nentities\n{}", intents.to_table(), entities.to_table());
            write_report(
                &report,
                &serde_json::json!({ "intents": intents, "entities": entities }),
            )?;
        }
        Command::EvaluateCore { stories, report } => {
            let domain = app::load_domain(&cli.data_dir)?;
            let models = app::load_models(&cli.model)?;
            let path = stories.unwrap_or_else(|| cli.data_dir.join(app::STORIES_FILE));
            let doc = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let stories = parse_stories(&doc)?;
            let matrix = evaluate_policy(&models.memo, &models.rnn, &stories, &domain)?;
            let mut metrics = precision_recall_f1(&matrix);
            metrics.matrix = Some(matrix);
            println!("{}", metrics.to_table());
            write_report(&report, &serde_json::to_value(&metrics)?)?;
        }
        Command::Shell { sender } => {
            let engine = app::load_engine(&cli.data_dir, &cli.model, cli.offline_fixtures)?;
            let mut conversations = Conversations::new();
            let stdin = std::io::stdin();
            let mut out = std::io::stdout();
            loop {
                write!(out, "> ")?;
                out.flush()?;
                let mut line = String::new();
                if stdin.lock().read_line(&mut line)? == 0 {
                    break;
                }
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                for m in conversations.handle(&engine, &sender, line)? {
                    println!("{}", m.text);
                }
            }
        }
        Command::Serve { port, log_dir } => {
            let settings = Settings::load(cli.config.as_deref())?;
            let engine = app::load_engine(&cli.data_dir, &cli.model, cli.offline_fixtures)?;
            let url = settings
                .graph_api_url
                .clone()
                .unwrap_or_else(|| GRAPH_API_URL.to_string());
            let outbound = Arc::new(GraphApiSender::new(url, settings.credentials.page_access_token.clone()));
            let lanes = Lanes::new(Arc::new(engine), Some(EventLog::new(log_dir)?), outbound);
            let state = AppState {
                lanes: Arc::new(lanes),
                credentials: Arc::new(settings.credentials),
            };
            let port = port.or(settings.port).unwrap_or(DEFAULT_PORT);
            serve(router(state), SocketAddr::from(([0, 0, 0, 0], port)))?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn serve(app: axum::Router, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
