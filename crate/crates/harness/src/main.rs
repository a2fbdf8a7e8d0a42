use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cowpnp::report::{emit_optimum, emit_sweep, OptimumRow, SweepRow};
use cowpnp::{emit_report, exit, parse_config_with, Config, Format, Mode, Preset, SessionReport};
use cowpnp_core::security::{optimize_mu, r_sec, sweep_distance, Qber};

#[derive(Parser)]
#[command(name = "cowpnp", version, about = "COW plug-and-play QKD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base preset: paper30km, demo or drifting.
    #[arg(long, value_name = "NAME")]
    preset: Option<Preset>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    frames: Option<u32>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "json|csv", default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session in this process.
    Run(Common),
    /// Analytic rates versus fiber length.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Fiber lengths in km.
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50,60,70,80")]
        km: Vec<f64>,
    },
    /// Intensity that maximizes the analytic secret rate.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        mu_min: f64,
        #[arg(long, default_value_t = 2.0)]
        mu_max: f64,
    },
    /// Act as Bob and wait for clients.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Address to listen on.
        #[arg(default_value = "127.0.0.1:7373")]
        endpoint: String,
        /// Sessions to serve before exiting; 0 serves forever.
        #[arg(long, default_value_t = 1)]
        sessions: usize,
    },
    /// Act as Alice against a server.
    Connect {
        #[command(flatten)]
        common: Common,
        #[arg(default_value = "127.0.0.1:7373")]
        endpoint: String,
    },
}

fn load(common: &Common, mode: Mode) -> Result<Config, String> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, common.preset).map_err(|e| e.to_string())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.frames {
        cfg.set("n_frames", &n.to_string()).map_err(|e| e.to_string())?;
    }
    cfg.mode = mode;
    cfg.check().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn write_out(common: &Common, bytes: &[u8]) -> Result<(), String> {
    match &common.out {
        Some(p) => fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().write_all(bytes).map_err(|e| e.to_string()),
    }
}

fn finish_session(common: &Common, report: &SessionReport) -> i32 {
    if let Err(e) = write_out(common, &emit_report(report, common.format)) {
        eprintln!("error: {e}");
        return exit::PROTOCOL;
    }
    if report.aborted {
        eprintln!("session aborted: visibility below abort_v_min");
        exit::ABORT
    } else {
        exit::OK
    }
}

fn run(cli: Cli) -> i32 {
    let (common, mode) = match &cli.command {
        Command::Run(c) | Command::Sweep { common: c, .. } | Command::Optimize { common: c, .. } => (c, Mode::Single),
        Command::Serve { common, .. } => (common, Mode::Serve),
        Command::Connect { common, .. } => (common, Mode::Connect),
    };
    let cfg = match load(common, mode) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return exit::CONFIG;
        }
    };
    let q = Qber::Measured(cfg.q_op);
    match &cli.command {
        Command::Run(_) => match cowpnp::run_single(&cfg) {
            Ok(r) => finish_session(common, &r),
            Err(e) => {
                eprintln!("error: {e}");
                exit::PROTOCOL
            }
        },
        Command::Sweep { km, .. } => match sweep_distance(&cfg.link, q, km) {
            Ok(rs) => {
                let rows: Vec<SweepRow> = km.iter().zip(&rs).map(|(&k, r)| SweepRow::new(k, r)).collect();
                report_bytes(common, &emit_sweep(&rows, common.format))
            }
            Err(e) => {
                eprintln!("config error: {e}");
                exit::CONFIG
            }
        },
        Command::Optimize { mu_min, mu_max, .. } => {
            let result = optimize_mu(&cfg.link, q, (*mu_min, *mu_max))
                .and_then(|(mu, r)| r_sec(&cfg.link, q).map(|at| (mu, r, at.r_sec)));
            match result {
                Ok((mu, r, at)) => {
                    use cowpnp::report::round6;
                    let row = OptimumRow {
                        loss_db: round6(cfg.link.loss_db),
                        q_used: round6(cfg.q_op),
                        mu_opt: round6(mu),
                        r_sec_opt: round6(r),
                        r_sec_at_config_mu: round6(at),
                    };
                    report_bytes(common, &emit_optimum(&row, common.format))
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    exit::CONFIG
                }
            }
        }
        Command::Serve { endpoint, sessions, .. } => {
            let listener = match TcpListener::bind(endpoint) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: cannot listen on {endpoint}: {e}");
                    return exit::PROTOCOL;
                }
            };
            eprintln!("listening on {}", listener.local_addr().map_or(endpoint.clone(), |a| a.to_string()));
            let code = std::sync::Arc::new(std::sync::atomic::AtomicI32::new(exit::OK));
            let (c2, common2) = (code.clone(), common.clone());
            let served = cowpnp::serve(&listener, &cfg, *sessions, move |res| {
                let rc = match res {
                    Ok(o) => finish_session(&common2, &o.report),
                    Err(e) => {
                        eprintln!("session error: {e}");
                        exit::PROTOCOL
                    }
                };
                c2.fetch_max(rc, std::sync::atomic::Ordering::SeqCst);
            });
            if let Err(e) = served {
                eprintln!("error: {e}");
                return exit::PROTOCOL;
            }
            code.load(std::sync::atomic::Ordering::SeqCst)
        }
        Command::Connect { endpoint, .. } => match cowpnp::connect(endpoint.as_str(), &cfg) {
            Ok(o) => finish_session(common, &o.report),
            Err(e) => {
                eprintln!("error: {e}");
                exit::PROTOCOL
            }
        },
    }
}

fn report_bytes(common: &Common, bytes: &[u8]) -> i32 {
    match write_out(common, bytes) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit::PROTOCOL
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli) as u8)
}
