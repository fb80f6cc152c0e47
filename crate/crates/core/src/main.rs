use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use edge_session::config::{ConfigError, ConfigPaths, DEFAULT_LAN};
use edge_session::harness::{
    bench_packets, compare, compare_pipelines, generate_packets, render_verdicts, run,
    run_pipeline, PipelineKind, TraceSpec, CSV_HEADER,
};
use edge_session::nat::{parse_nat_config, NatConfig};
use edge_session::packet::{parse_trace, render_trace, Packet};
use edge_session::pipeline::Mutation;
use edge_session::{BaselinePipeline, IntegratedPipeline, RouterConfig};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRACE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edge-session",
    version,
    about = "Edge router session-table pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic trace.
    Gen {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        nat: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a trace through one pipeline.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        pipeline: Kind,
        /// Metrics CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-packet verdict stream destination.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Dump the integrated session table after the run.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run a trace through both pipelines and check the verdicts agree.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        trace: PathBuf,
        /// Compare against an integrated pipeline that skips re-marking hits.
        #[arg(long, hide = true)]
        mutant: bool,
    },
    /// Time both pipelines over repeated runs.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Use this trace instead of generating one.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        gen: TraceArgs,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Baseline,
    Integrated,
}

impl From<Kind> for PipelineKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Baseline => PipelineKind::Baseline,
            Kind::Integrated => PipelineKind::Integrated,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    routes: Option<PathBuf>,
    #[arg(long)]
    nat: Option<PathBuf>,
    #[arg(long)]
    qos: Option<PathBuf>,
    #[arg(long)]
    lan_prefix: Option<String>,
    /// Session table capacity.
    #[arg(long)]
    capacity: Option<usize>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, default_value_t = 10)]
    sessions: usize,
    /// Packets per session.
    #[arg(long, default_value_t = 1000)]
    packets: usize,
    /// Fraction of sessions that are TCP.
    #[arg(long, default_value_t = 0.5)]
    mix: f64,
    #[arg(long = "gen-lan", default_value = DEFAULT_LAN)]
    gen_lan: String,
    /// Comma-separated peer addresses.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<Ipv4Addr>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

enum Failure {
    Config(String),
    Trace(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Trace(_) => EXIT_TRACE,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(a: &ConfigArgs) -> Result<Arc<RouterConfig>, Failure> {
    let paths = ConfigPaths {
        rules: a.rules.as_deref(),
        routes: a.routes.as_deref(),
        nat: a.nat.as_deref(),
        qos: a.qos.as_deref(),
    };
    let mut cfg = RouterConfig::load(&paths, a.lan_prefix.as_deref())?;
    if let Some(c) = a.capacity {
        cfg.capacity = c;
        cfg.validate()?;
    }
    Ok(Arc::new(cfg))
}

fn load_trace(path: &Path) -> Result<Vec<Packet>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Trace(format!("{}: {e}", path.display())))?;
    parse_trace(&text).map_err(|e| Failure::Trace(format!("{}: {e}", path.display())))
}

fn trace_spec(a: &TraceArgs, nat: NatConfig) -> Result<TraceSpec, Failure> {
    let lan_prefix = a
        .gen_lan
        .parse()
        .map_err(|_| Failure::Config(format!("bad LAN prefix `{}`", a.gen_lan)))?;
    let defaults = TraceSpec::default();
    Ok(TraceSpec {
        session_count: a.sessions,
        packets_per_session: a.packets,
        tcp_fraction: a.mix,
        lan_prefix,
        peer_pool: if a.peers.is_empty() {
            defaults.peer_pool
        } else {
            a.peers.clone()
        },
        nat,
        seed: a.seed,
    })
}

fn generate(spec: &TraceSpec) -> Result<Vec<Packet>, Failure> {
    generate_packets(spec).map_err(|e| Failure::Config(e.to_string()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Gen { trace, nat, out } => {
            let nat = match nat {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                    parse_nat_config(&text).map_err(|e| Failure::Config(e.to_string()))?
                }
                None => NatConfig::default(),
            };
            let packets = generate(&trace_spec(&trace, nat)?)?;
            write_out(out.as_deref(), &render_trace(&packets))?;
            Ok(true)
        }
        Command::Run {
            config,
            trace,
            pipeline,
            out,
            verdicts,
            dump,
        } => {
            let cfg = load_config(&config)?;
            let packets = load_trace(&trace)?;
            let kind = PipelineKind::from(pipeline);
            let (report, stream) = match (kind, &dump) {
                (PipelineKind::Integrated, Some(path)) => {
                    let mut p = IntegratedPipeline::new(cfg);
                    let result = run_pipeline(&mut p, &packets);
                    fs::write(path, p.table().dump_csv())
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    result
                }
                (PipelineKind::Baseline, Some(_)) => {
                    return Err(Failure::Config(
                        "--dump needs the integrated pipeline".into(),
                    ))
                }
                _ => run(kind, cfg, &packets),
            };
            if let Some(path) = verdicts {
                fs::write(&path, render_verdicts(&stream))
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            }
            match out {
                Some(_) => {
                    let csv = format!("{CSV_HEADER}\n{}\n", report.csv_row(&report.pipeline));
                    write_out(out.as_deref(), &csv)?;
                    eprintln!("{report}");
                }
                None => println!("{report}"),
            }
            Ok(true)
        }
        Command::Compare {
            config,
            trace,
            mutant,
        } => {
            let cfg = load_config(&config)?;
            let packets = load_trace(&trace)?;
            let report = if mutant {
                let mut b = BaselinePipeline::new(cfg.clone());
                let mut i = IntegratedPipeline::new(cfg).with_mutation(Mutation::SkipHitDscp);
                compare_pipelines(&mut b, &mut i, &packets)
            } else {
                compare(cfg, &packets)
            };
            println!("{report}");
            Ok(report.passed())
        }
        Command::Bench {
            config,
            trace,
            gen,
            reps,
            out,
        } => {
            let cfg = load_config(&config)?;
            let packets = match trace {
                Some(path) => load_trace(&path)?,
                None => generate(&trace_spec(&gen, cfg.nat)?)?,
            };
            let report = bench_packets(cfg, &packets, reps);
            write_out(out.as_deref(), &report.to_csv())?;
            eprintln!("{report}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(f) => {
            let (Failure::Config(msg) | Failure::Trace(msg)) = &f;
            eprintln!("edge-session: {msg}");
            ExitCode::from(f.code())
        }
    }
}
