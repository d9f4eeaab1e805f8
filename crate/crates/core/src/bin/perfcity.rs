use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use perfcity::protocol::parse_package_prefix;
use perfcity::server::{self, ServerConfig};
use perfcity::workload::{self, DriveConfig, Pacing, Scenario, ScenarioKind};
use perfcity::Error;

#[derive(Parser)]
#[command(name = "perfcity", version, about = "Live software-city profiler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accept producers and stream the city to clients.
    Serve(ServeArgs),
    /// Serve, and tee every ingested message to a trace file.
    Record {
        /// Output trace (conventionally `*.trace.ndjson`).
        file: PathBuf,
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Generate a synthetic workload.
    Simulate(SimulateArgs),
    /// Send a recorded trace to a server.
    Replay {
        file: PathBuf,
        /// Playback speed factor; 10 plays ten times faster.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value = "127.0.0.1:7071")]
        endpoint: String,
    },
    /// Summarize a trace: peak elevation, self time and threads per method.
    Analyze {
        file: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Sliding window length.
    #[arg(long, default_value_t = 3000)]
    window_ms: u64,
    #[arg(long, default_value_t = 100)]
    tick_ms: u64,
    /// Drop events of this package prefix (e.g. `org.ini4j`). Repeatable.
    #[arg(long = "exclude", value_name = "PACKAGE.PREFIX")]
    exclude: Vec<String>,
}

impl EngineArgs {
    fn drive_config(&self) -> Result<DriveConfig, Error> {
        if self.window_ms == 0 || self.tick_ms == 0 {
            return Err(Error::InvalidArgument("--window-ms and --tick-ms must be positive".into()));
        }
        Ok(DriveConfig {
            window_micros: self.window_ms * 1000,
            tick_micros: self.tick_ms * 1000,
            exclude: self.exclude.iter().map(|p| parse_package_prefix(p)).collect(),
        })
    }
}

#[derive(Args, Clone)]
struct ServeArgs {
    #[arg(long, default_value_t = 7071)]
    ingest_port: u16,
    #[arg(long, default_value_t = 7072)]
    ui_port: u16,
    #[arg(long, default_value_t = 7073)]
    mirror_port: u16,
    /// Address to bind all endpoints on.
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_parser = parse_scenario)]
    scenario: ScenarioKind,
    #[arg(long, default_value_t = 16)]
    restarts: u32,
    #[arg(long, default_value_t = 100)]
    restart_interval_ms: u64,
    /// Duty fraction for duty-cycle.
    #[arg(long, default_value_t = 0.3)]
    duty: f64,
    #[arg(long, default_value_t = 1000)]
    period_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    duration_ms: u64,
    #[arg(long, default_value_t = 50)]
    batch_ms: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Pace::Real)]
    pace: Pace,
    /// Write the trace to a file instead of sending it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7071")]
    endpoint: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pace {
    Real,
    Fast,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn serve(args: &ServeArgs, record: Option<PathBuf>) -> Result<(), Error> {
    let drive = args.engine.drive_config()?;
    let config = ServerConfig {
        ingest_addr: SocketAddr::new(args.bind, args.ingest_port),
        ui_addr: SocketAddr::new(args.bind, args.ui_port),
        mirror_addr: SocketAddr::new(args.bind, args.mirror_port),
        window_micros: drive.window_micros,
        tick_micros: drive.tick_micros,
        exclude: drive.exclude,
        record,
    };
    let handle = server::start(config)?;
    eprintln!(
        "ingest on {}, ui on ws://{}/stream, mirror on {}",
        handle.ingest_addr(),
        handle.ui_addr(),
        handle.mirror_addr()
    );
    handle.wait();
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let scenario = Scenario {
        kind: args.scenario,
        restarts: args.restarts,
        restart_interval_micros: args.restart_interval_ms * 1000,
        duty: args.duty,
        period_micros: args.period_ms * 1000,
        duration_micros: args.duration_ms * 1000,
        batch_micros: args.batch_ms * 1000,
        seed: args.seed,
    };
    let pacing = match args.pace {
        Pace::Real => Pacing::Scaled(1.0),
        Pace::Fast => Pacing::Fast,
    };
    let sent = match &args.out {
        Some(path) => {
            scenario.write_trace(path)?;
            scenario.messages()?.len()
        }
        None => workload::simulate_to(&scenario, &args.endpoint, pacing)?,
    };
    eprintln!("{}: {sent} messages", args.scenario.name());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Serve(args) => serve(&args, None),
        Command::Record { file, serve: args } => serve(&args, Some(file)),
        Command::Simulate(args) => simulate(&args),
        Command::Replay { file, speed, endpoint } => {
            let sent = workload::replay_to(file, speed, &endpoint)?;
            eprintln!("replayed {sent} messages");
            Ok(())
        }
        Command::Analyze { file, engine, format } => {
            let report = workload::analyze_file(file, &engine.drive_config()?)?;
            let text = match format {
                Format::Table => report.to_table(),
                Format::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
            };
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("perfcity: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
