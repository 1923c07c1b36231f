use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bfftrace::control::{api, load_config, Controller, Phase};
use bfftrace::harness::{start_harness, FaultSchedule, HarnessPorts, Service, DEFAULT_SCHEDULE};
use bfftrace::store::{RunFilter, RunStore};
use bfftrace_core::capture::LogDialect;
use bfftrace_core::report::{build_graph, export_report, render_error_report, ReportFormat};
use bfftrace_core::run::{RunConfig, RunState};
use bfftrace_core::Endpoint;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bfftrace", version, about = "Fuzz a BFF and trace its errors back to the backends")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a test from a JSON or YAML config and wait for it to finish.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "./runs")]
        store: PathBuf,
    },
    /// Write report.json, report.txt and a graph per finding-bearing trace.
    Report {
        run_id: String,
        /// Format printed to stdout.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Output directory; defaults to the run's directory in the store.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "./runs")]
        store: PathBuf,
    },
    /// List stored runs, newest first.
    List {
        #[arg(long)]
        status: Option<String>,
        /// Only runs created at or after this time (ms since the epoch).
        #[arg(long)]
        since: Option<u64>,
        #[arg(long, default_value = "./runs")]
        store: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "./runs")]
        store: PathBuf,
    },
    /// Analyze a captured log without sending any request.
    Ingest {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "zeek-http")]
        dialect: LogDialect,
        #[arg(long)]
        bff: Endpoint,
        /// OpenAPI document, for coverage.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Extra leak patterns (JSON lines).
        #[arg(long)]
        patterns: Option<PathBuf>,
        #[arg(long, default_value = "./runs")]
        store: PathBuf,
    },
    /// Start the testbed BFF and its three backends.
    Harness {
        /// Fault schedule; the bundled default when omitted.
        #[arg(long)]
        faults: Option<PathBuf>,
        /// BFF port; the backends take the next three. 0 picks free ports.
        #[arg(long, default_value_t = 8700)]
        base_port: u16,
        /// Send the BFF's backend calls to capture proxies on this port and
        /// the next two, and print the matching `backend_proxies` entries.
        #[arg(long)]
        proxy_base: Option<u16>,
    },
}

fn parse_status(s: &str) -> Result<RunState> {
    Ok(match s {
        "running" => RunState::Running,
        "completed" => RunState::Completed,
        "aborted" => RunState::Aborted,
        other => bail!("unknown status `{other}` (running, completed or aborted)"),
    })
}

async fn run_to_end(controller: &Controller, config: RunConfig) -> Result<()> {
    let run_id = controller.start_run(config).await?;
    eprintln!("run {run_id} started");
    let status = controller.wait(&run_id).await?;
    println!("{run_id}");
    if status.phase == Phase::Failed {
        bail!("run {run_id} failed: {}", status.last_error.unwrap_or_default());
    }
    let report = controller.report(&run_id)?;
    print!("{}", String::from_utf8_lossy(&export_report(&report, ReportFormat::Text)));
    Ok(())
}

fn write_report(store: &RunStore, run_id: &str, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let record = store.load_run(run_id)?;
    let report = render_error_report(&record);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| store.run_dir(run_id));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), export_report(&report, ReportFormat::Json))?;
    std::fs::write(dir.join("report.txt"), export_report(&report, ReportFormat::Text))?;
    let mut graphs = 0;
    if let Some(map) = &record.trace_map {
        for entry in &map.entries {
            if record.findings.iter().any(|f| f.trace_id == entry.id) {
                let graph = build_graph(entry, &record.findings);
                std::fs::write(
                    dir.join(format!("graph-{}.json", entry.id)),
                    serde_json::to_vec_pretty(&graph)?,
                )?;
                graphs += 1;
            }
        }
    }
    print!("{}", String::from_utf8_lossy(&export_report(&report, format)));
    eprintln!("wrote report.json, report.txt and {graphs} graph(s) to {}", dir.display());
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose {
            tracing::Level::DEBUG
        } else {
            tracing::Level::WARN
        })
        .init();

    match cli.command {
        Command::Run { config, store } => {
            let config = load_config(&config)?;
            run_to_end(&Controller::new(RunStore::open(store)?), config).await
        }
        Command::Report {
            run_id,
            format,
            out,
            store,
        } => write_report(&RunStore::open(store)?, &run_id, format, out.as_deref()),
        Command::List { status, since, store } => {
            let filter = RunFilter {
                status: status.as_deref().map(parse_status).transpose()?,
                since,
            };
            for s in RunStore::open(store)?.list_runs(&filter)? {
                let c = s.finding_counts;
                println!(
                    "{}  {:<10} {:>13}  leak-both={} leak-main={} leak-sub={} 5xx={}",
                    s.run_id,
                    format!("{:?}", s.status).to_lowercase(),
                    s.created_at,
                    c.leak_both,
                    c.leak_main_only,
                    c.leak_sub_only,
                    c.server_error_5xx
                );
            }
            Ok(())
        }
        Command::Serve { port, store } => {
            let controller = Controller::new(RunStore::open(store)?);
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            eprintln!("serving on http://{}", listener.local_addr()?);
            axum::serve(listener, api::router(controller))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
            Ok(())
        }
        Command::Ingest {
            log,
            dialect,
            bff,
            spec,
            patterns,
            store,
        } => {
            let mut config = RunConfig::ingest_only(bff, log, dialect);
            config.spec_path = spec;
            config.patterns_path = patterns;
            run_to_end(&Controller::new(RunStore::open(store)?), config).await
        }
        Command::Harness {
            faults,
            base_port,
            proxy_base,
        } => {
            let schedule = match faults {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    FaultSchedule::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => FaultSchedule::from_json(DEFAULT_SCHEDULE)?,
            };
            let harness = start_harness(&schedule, HarnessPorts::from_base(base_port)).await?;
            for s in Service::ALL {
                println!("{:<9} http://{}", s.name(), harness.addr(s));
            }
            println!("spec      http://{}/openapi.json", harness.addr(Service::Bff));
            if let Some(base) = proxy_base {
                println!("backend_proxies:");
                for (i, s) in Service::BACKENDS.into_iter().enumerate() {
                    let listen = SocketAddr::from((Ipv4Addr::LOCALHOST, base + i as u16));
                    harness.set_upstream(s, listen);
                    println!("  - {{ listen: \"{listen}\", upstream: \"{}\" }}", harness.addr(s));
                }
            }
            tokio::signal::ctrl_c().await?;
            harness.stop().await;
            Ok(())
        }
    }
}
