//! Command-line front end. Each subcommand is a thin layer over the session
//! manager or a core module.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use shaderbreed_core::audio::{decode_wav, feature_timeline};
use shaderbreed_core::evolution::{FirstPolicy, RandomKPolicy, SelectionPolicy};
use shaderbreed_core::genome::GenomeId;
use shaderbreed_core::glsl::{self, ValidationLimits};
use shaderbreed_core::operators::ProviderSpec;

use crate::config::{AppConfig, BackendChoice};
use crate::session::{CreateSession, EvolveSummary, SessionManager, DEFAULT_HOP_SECONDS};

#[derive(Debug, Parser)]
#[command(name = "shaderbreed", version, about = "Breed GLSL shaders with language-model operators")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Session directory (overrides the config file).
    #[arg(long, global = true)]
    pub sessions: Option<PathBuf>,
    /// Append every provider exchange to this JSONL transcript.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderKind {
    Mock,
    Openai,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyName {
    First,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Native,
    Accepting,
    None,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seed a new session and print its id.
    Init {
        #[arg(long)]
        session: Option<String>,
        /// Root seed for every random decision in the session.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        provider: Option<ProviderKind>,
        #[arg(long, default_value_t = 0)]
        mock_seed: u64,
        #[arg(long, default_value_t = 0.0)]
        failure_rate: f64,
        /// Transcript to answer from with `--provider replay`.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Select the given slots and run one generation.
    Evolve {
        #[arg(long)]
        session: String,
        /// Comma-separated slot indices.
        #[arg(long, value_delimiter = ',', required = true)]
        select: Vec<usize>,
    },
    /// Run generations with an automatic selection policy.
    Autopilot {
        #[arg(long)]
        session: String,
        #[arg(long, value_enum)]
        policy: PolicyName,
        #[arg(long)]
        generations: u64,
        /// Genomes the policy selects each generation.
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Run a shader file through the validation pipeline.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "native")]
        backend: BackendArg,
        #[arg(long)]
        max_length: Option<usize>,
    },
    /// Compute the audio feature timeline of a WAV file.
    Features {
        wav: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HOP_SECONDS)]
        hop: f64,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write the selected shaders of a session.
    Export {
        session: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(dir) = &cli.sessions {
        cfg.session_dir = dir.clone();
    }
    Ok(cfg)
}

fn manager(cli: &Cli, cfg: AppConfig) -> SessionManager {
    let m = SessionManager::new(cfg);
    match &cli.record {
        Some(path) => m.with_recording(path.clone()),
        None => m,
    }
}

fn print_summary(out: &mut dyn Write, s: &EvolveSummary) -> Result<()> {
    writeln!(
        out,
        "generation {}: replaced {}, fallbacks {}",
        s.generation, s.replaced, s.fallback_count
    )?;
    for w in &s.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

fn write_output(out: &mut dyn Write, path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Runs a parsed command, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Init {
            session,
            seed,
            provider,
            mock_seed,
            failure_rate,
            replay,
        } => {
            if !(0.0..=1.0).contains(failure_rate) {
                bail!("--failure-rate must be within [0, 1]");
            }
            match provider {
                Some(ProviderKind::Mock) => {
                    cfg.provider = ProviderSpec::Mock {
                        seed: *mock_seed,
                        failure_rate: *failure_rate,
                    }
                }
                Some(ProviderKind::Openai) => cfg.provider = ProviderSpec::OpenAi,
                Some(ProviderKind::Replay) => {
                    let path = replay.clone().context("--provider replay needs --replay <file>")?;
                    cfg.provider = ProviderSpec::Replay { path };
                }
                None => {}
            }
            let m = manager(&cli, cfg);
            let s = m.create(CreateSession {
                session_id: session.clone(),
                seed: *seed,
            })?;
            writeln!(out, "{}", s.id())?;
        }
        Command::Evolve { session, select } => {
            let m = manager(&cli, cfg);
            let s = m.get(session)?;
            let view = s.population_view();
            let ids = select
                .iter()
                .map(|&slot| {
                    view.genomes
                        .get(slot)
                        .map(|g| g.id.clone())
                        .with_context(|| format!("slot {slot} out of range 0..{}", view.genomes.len()))
                })
                .collect::<Result<Vec<GenomeId>>>()?;
            m.replace_selection(&s, &ids)?;
            let job = m.begin_evolve(&s)?;
            print_summary(out, &m.run_evolve(job)?)?;
        }
        Command::Autopilot {
            session,
            policy,
            generations,
            k,
        } => {
            if *k == 0 {
                bail!("--k must be positive");
            }
            let policy: Box<dyn SelectionPolicy> = match policy {
                PolicyName::First => Box::new(FirstPolicy { k: *k }),
                PolicyName::Random => Box::new(RandomKPolicy { k: *k }),
            };
            let m = manager(&cli, cfg);
            let s = m.get(session)?;
            for _ in 0..*generations {
                print_summary(out, &m.autopilot_step(&s, policy.as_ref())?)?;
            }
        }
        Command::Validate {
            file,
            backend,
            max_length,
        } => {
            let raw = fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))?;
            cfg.compile_backend = match backend {
                BackendArg::Native => BackendChoice::Native,
                BackendArg::Accepting => BackendChoice::Accepting,
                BackendArg::None => BackendChoice::None,
            };
            let limits = ValidationLimits {
                max_code_length: max_length.unwrap_or(cfg.max_code_length),
                required_entry: cfg.required_entry,
            };
            let backend = cfg.backend();
            match glsl::validate_candidate(&raw, &limits, backend.as_ref()) {
                Ok(v) => {
                    writeln!(out, "ok")?;
                    for d in &v.report.diagnostics {
                        writeln!(out, "note: {d}")?;
                    }
                }
                Err(report) => {
                    let stage = serde_json::to_value(report.stage_failed)?;
                    let mut msg = format!("invalid at stage {}", stage.as_str().unwrap_or("?"));
                    for d in &report.diagnostics {
                        msg.push_str(&format!("\n  {d}"));
                    }
                    bail!(msg);
                }
            }
        }
        Command::Features { wav, hop, out: path } => {
            let bytes = fs::read(wav).with_context(|| format!("reading {}", wav.display()))?;
            let clip = decode_wav(&bytes).with_context(|| wav.display().to_string())?;
            let timeline = feature_timeline(&clip, *hop)?;
            write_output(out, path.as_ref(), &timeline.to_text())?;
        }
        Command::Export { session, out: path } => {
            let m = manager(&cli, cfg);
            let s = m.get(session)?;
            write_output(out, path.as_ref(), &m.export(&s)?)?;
        }
        Command::Serve { addr } => {
            let m = Arc::new(manager(&cli, cfg));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, crate::api::router(m))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
