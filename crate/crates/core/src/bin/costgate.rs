use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use costgate::adapter::mock::MockConfig;
use costgate::catalog::Catalog;
use costgate::gateway::{server, GatewayConfig};
use costgate::replay::{self, curve, report, routing, ReplayOptions, Replayer};

#[derive(Parser)]
#[command(name = "costgate", version, about = "Cost-optimizing LLM gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080", env = "COSTGATE_ADDR")]
        addr: SocketAddr,
        #[arg(long, env = "COSTGATE_CONFIG")]
        config: Option<PathBuf>,
        /// Mock provider table (TOML, JSON or CSV) for models without credentials.
        #[arg(long)]
        mock: Option<PathBuf>,
    },
    /// Replay fixture conversations under several strategies.
    Replay {
        #[arg(long)]
        fixtures: PathBuf,
        /// Comma-separated service types or `plan:<filter plan>` entries.
        #[arg(long, default_value = "plan:lastk:0,plan:lastk:1,plan:lastk:5,smart_context")]
        strategies: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference strategy for judging.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        no_judge: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cumulative input tokens of a uniform conversation per last-k setting.
    Curve {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,5")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        i: u64,
        #[arg(long, default_value_t = 100)]
        o: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verification routing against fixed and random baselines.
    Route {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chunk and ingest every file of a directory into the persistent cache.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, env = "COSTGATE_CONFIG")]
        config: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { addr, config, mock } => {
            let mut cfg = GatewayConfig::load(config.as_deref())?;
            if mock.is_some() {
                cfg.mock_file = mock;
            }
            let gateway = cfg.build()?;
            server::serve(addr, gateway, cfg.token.clone()).await?;
        }
        Command::Replay {
            fixtures,
            strategies,
            reps,
            out,
            baseline,
            no_judge,
            config,
        } => {
            let cfg = GatewayConfig::load(config.as_deref())?;
            let mut opts = ReplayOptions {
                repetitions: reps,
                baseline: baseline.map(|b| b.parse()).transpose()?,
                judge: !no_judge,
                ..ReplayOptions::default()
            };
            if config.is_some() {
                opts.bindings = cfg.bindings.clone();
            }
            if let Some(path) = &cfg.mock_file {
                opts.mock = MockConfig::load(path)?;
            } else if let Some(m) = &cfg.mock {
                opts.mock = m.clone();
            }
            let strategies = replay::parse_strategies(&strategies)?;
            let fx = replay::load_fixtures(&fixtures)?;
            let replayer = Replayer::new(Arc::new(cfg.load_catalog()?), fx, &opts)?;
            let reports = replayer.replay(&strategies, &opts).await?;
            let summary = report::render_summary(&reports);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write(&dir.join("summary.csv"), &report::summary_csv(&reports)?)?;
                write(&dir.join("per_query.csv"), &report::per_query_csv(&reports)?)?;
                write(&dir.join("summary.txt"), &summary)?;
            }
            print!("{summary}");
        }
        Command::Curve { n, k, i, o, out } => {
            let c = curve::token_curve(n, &k, i, o)?;
            let csv = c.to_csv();
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(&base) = k.first() {
                for &kk in &k[1..] {
                    if let Some(r) = c.ratio(kk, base) {
                        eprintln!("final k={kk} / k={base}: {r:.4}x");
                    }
                }
            }
        }
        Command::Route { policy, fixtures, out } => {
            let policy = routing::RoutingPolicyFile::load(&policy)?;
            let fx = replay::load_fixtures(&fixtures)?;
            let r = routing::routing_report(Arc::new(Catalog::builtin()), &policy, &fx, MockConfig::default()).await?;
            let text = r.render();
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write(&dir.join("routing.csv"), &r.to_csv())?;
                write(&dir.join("routing.json"), &serde_json::to_string_pretty(&r)?)?;
                write(&dir.join("routing.txt"), &text)?;
            }
            print!("{text}");
        }
        Command::Ingest { dir, config } => {
            let cfg = GatewayConfig::load(config.as_deref())?;
            if cfg.data_dir.is_none() {
                bail!("ingest needs a persistent store: set COSTGATE_DATA or data_dir in the config");
            }
            let gateway = cfg.build()?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for path in files {
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                if text.trim().is_empty() {
                    continue;
                }
                let (put, trace) = gateway.ingest(&text).await?;
                println!(
                    "{}: {} chunks, {} degraded, {} entries, cost {} USD",
                    path.display(),
                    put.chunks,
                    put.degraded,
                    put.entry_ids.len(),
                    trace.cost()
                );
            }
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
