use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orthosis_bridge::server::{serve, BridgeError, ServerOptions, DEFAULT_PORT};
use orthosis_core::control::ControlMode;
use orthosis_core::parallel::Execution;
use orthosis_core::session::protocol::COMPARE_MODES;
use orthosis_core::session::summary::{write_summary_to, SummaryRow};
use orthosis_core::session::{load_config, read_log, replay, Session, SessionConfig, SessionDir, OUT_DIR_ENV};
use orthosis_core::trials::TargetSpec;

#[derive(Debug, Parser)]
#[command(name = "orthosis-sim", version, about = "Wrist-driven grasping orthosis simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// Session config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Control mode: twa, bwa, pwa or passive.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Base seed for the virtual participant.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config and the environment).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Max-force trials and modulation repeats per target.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Solve plant gains from the calibration anchors and write them out.
    Calibrate,
    /// Max-force trials in one mode.
    Maxforce,
    /// Max-force trials, then the three-target modulation battery.
    Modulate,
    /// Grasp-and-release battery in the selected mode and without a device.
    Grt,
    /// Modulation battery under every control mode.
    Compare {
        /// Seeds (repeats per target) per mode.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Re-run a trial log's wrist angles and compare the outputs.
    Replay {
        /// Trial log CSV to replay.
        log: PathBuf,
        /// Target percent, to recompute the in-band column.
        #[arg(long, requires = "max_force")]
        percent: Option<u32>,
        /// Reference max force for `--percent`, N.
        #[arg(long)]
        max_force: Option<f64>,
    },
    /// Run the real-time bridge.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Write finished live trials under the output directory.
        #[arg(long)]
        record: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl From<orthosis_core::Error> for Failure {
    fn from(e: orthosis_core::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

impl From<BridgeError> for Failure {
    fn from(e: BridgeError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Common) -> Result<SessionConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => SessionConfig::default(),
    };
    if let Some(m) = &common.mode {
        cfg.mode = m.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.trials {
        cfg.trials.max_force_trials = n;
        cfg.trials.modulation_repeats = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &SessionConfig) -> PathBuf {
    let env = std::env::var(OUT_DIR_ENV).ok();
    cfg.resolve_out_dir(common.out.as_deref(), env.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load(&cli.common)?;
    let root = out_dir(&cli.common, &cfg);
    let mode = cfg.control_mode()?;
    let session = Session::new(cfg.clone(), Execution::default())?;
    match cli.command {
        Cmd::Calibrate => {
            let dir = SessionDir::create(&root)?;
            let p = session.calibrate(&dir)?;
            println!("tenodesis max force   {:.4} N", p.tenodesis.max_force);
            println!("device stiffness      {:.4} N/unit", p.contact.device_stiffness);
            println!("written to {}", dir.root().display());
        }
        Cmd::Maxforce => {
            let dir = SessionDir::create(&root)?;
            let run = session.max_force(mode, &dir)?;
            let r = &run.result;
            let peaks: Vec<String> = r.peaks.iter().map(|p| format!("{p:.2}")).collect();
            println!("{mode}: peaks [{}] N", peaks.join(", "));
            println!("average {:.2} N, highest {:.2} N", r.average_max, r.highest_max);
        }
        Cmd::Modulate => {
            let dir = SessionDir::create(&root)?;
            let report = session.modulate(mode, &dir)?;
            print_table(&report.summary())?;
        }
        Cmd::Compare { seeds } => {
            let dir = SessionDir::create(&root)?;
            let reports = session.compare(seeds, &dir)?;
            let rows: Vec<SummaryRow> = reports.iter().flat_map(|r| r.summary()).collect();
            print_table(&rows)?;
            debug_assert_eq!(reports.len(), COMPARE_MODES.len());
        }
        Cmd::Grt => {
            let dir = SessionDir::create(&root)?;
            let mut modes = vec![mode];
            if mode.is_assisted() {
                modes.push(ControlMode::Passive);
            }
            let scores = session.grt(&modes, &dir)?;
            for (m, s) in modes.iter().zip(&scores) {
                let per: Vec<String> = s.per_object.iter().map(|o| format!("{} {}", o.name, o.successes)).collect();
                println!("{m}: total {} ({})", s.total, per.join(", "));
            }
        }
        Cmd::Replay {
            log,
            percent,
            max_force,
        } => replay_cmd(&session, mode, &log, percent.zip(max_force), &root)?,
        Cmd::Serve { port, record } => {
            let opts = ServerOptions {
                port,
                record_dir: record.then(|| root.clone()),
                ..ServerOptions::default()
            };
            let handle = serve(&cfg, opts)?;
            println!("bridge listening on {} (mode {mode})", handle.local_addr());
            handle.wait()?;
        }
    }
    Ok(())
}

fn replay_cmd(
    session: &Session,
    mode: ControlMode,
    log: &Path,
    target: Option<(u32, f64)>,
    root: &Path,
) -> Result<(), Failure> {
    let original = read_log(log)?;
    let target = target.map(|(p, f)| TargetSpec::new(p, f));
    let replayed = replay(&session.rig, mode, &original, target.as_ref())?;
    let differing = original
        .iter()
        .zip(&replayed)
        .filter(|(a, b)| {
            (a.t, a.region, a.motor_position, a.true_force, a.measured_force)
                != (b.t, b.region, b.motor_position, b.true_force, b.measured_force)
                || (target.is_some() && a.in_band != b.in_band)
        })
        .count();
    let dir = SessionDir::create(root)?;
    let name = log
        .file_stem()
        .map_or_else(|| "replay".to_string(), |s| s.to_string_lossy().into_owned());
    let out = dir.root().join(format!("{name}.replay.csv"));
    orthosis_core::session::write_log(&out, &replayed)?;
    println!(
        "replayed {} rows under {mode}: {differing} differ from the log; written to {}",
        replayed.len(),
        out.display()
    );
    Ok(())
}

fn print_table(rows: &[SummaryRow]) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    write_summary_to(stdout.lock(), rows)?;
    Ok(())
}
