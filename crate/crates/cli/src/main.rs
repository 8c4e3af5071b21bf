//! `pdtarget`: simulate PD-target scans, calibrate from them, run the
//! yaw/displacement sweeps and print accuracy/precision tables.
//!
//! Exit status is 0 on success, 1 for bad input (arguments, config or frame
//! files) and 2 when the pipeline itself fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use pdtarget_core::harness::config::{SceneConfig, SweepConfig};
use pdtarget_core::harness::frame_io::{load_frames, save_frames};
use pdtarget_core::harness::report::{layout_label, table_text, write_report, write_summary, Run, StatsFile};
use pdtarget_core::harness::single::{run_single, simulate_frames, single_report};
use pdtarget_core::harness::sweep::run_sweep;
use pdtarget_core::pose_solver::SolverConfig;
use pdtarget_core::scene_sim::PdLayout;
use pdtarget_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pdtarget", version, about = "LiDAR extrinsic calibration with a photodetector target board")]
struct Cli {
    /// More log output (-v warnings, -vv progress, -vvv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Orientation {
    Horizontal,
    Vertical,
    All,
}

#[derive(clap::Args, Debug)]
struct SceneArgs {
    /// Scene config (TOML). Defaults to the built-in example scene.
    #[arg(long)]
    scene: Option<PathBuf>,

    /// Seed overriding the one in the config files.
    #[arg(long)]
    seed: Option<u64>,

    /// PD orientation; `all` runs horizontal and vertical boards in turn.
    #[arg(long, value_enum)]
    pd_orientation: Option<Orientation>,

    /// Use the damped step size of the reference solver (much slower).
    #[arg(long)]
    paper_faithful: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate scans at the scene's base pose and write them as frame files.
    Simulate {
        #[command(flatten)]
        scene: SceneArgs,
        /// Number of scans.
        #[arg(long, default_value_t = 50)]
        scans: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Calibrate from a frame file, or from freshly simulated scans.
    Calibrate {
        #[command(flatten)]
        scene: SceneArgs,
        /// Frame file written by `simulate`. Simulates when absent.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Number of scans to simulate when no frame file is given.
        #[arg(long, default_value_t = 50)]
        scans: usize,
        /// Also write the report to `<out>/calibration.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sweeps and write CSV, JSON and table reports.
    Sweep {
        #[command(flatten)]
        scene: SceneArgs,
        /// Sweep config (TOML). Defaults to the yaw and x-position sweeps.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render the summary table from a `stats.json` written by `sweep`.
    Report {
        /// Statistics file.
        stats: PathBuf,
        /// Also write `summary.csv` and `table.txt` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Errors that map onto the two failure exit codes.
enum Failure {
    Input(String),
    Pipeline(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Config(_) | Error::Input(_) | Error::Io(_) => Failure::Input(e.to_string()),
            other => Failure::Pipeline(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn layouts(arg: Option<Orientation>, configured: PdLayout, default_all: bool) -> Vec<PdLayout> {
    match arg {
        Some(Orientation::Horizontal) => vec![PdLayout::Horizontal],
        Some(Orientation::Vertical) => vec![PdLayout::Vertical],
        Some(Orientation::All) => vec![PdLayout::Horizontal, PdLayout::Vertical],
        None if default_all => vec![PdLayout::Horizontal, PdLayout::Vertical],
        None => vec![configured],
    }
}

fn layout_name(l: PdLayout) -> &'static str {
    match l {
        PdLayout::Horizontal => "horizontal",
        PdLayout::Vertical => "vertical",
        PdLayout::Mixed => "mixed",
    }
}

fn load_scene(args: &SceneArgs) -> CliResult<SceneConfig> {
    let mut cfg = match &args.scene {
        Some(p) => SceneConfig::load(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.paper_faithful {
        let pf = SolverConfig::paper_faithful();
        cfg.pipeline.solver.eta = pf.eta;
        cfg.pipeline.solver.max_iters = cfg.pipeline.solver.max_iters.max(pf.max_iters);
    }
    Ok(cfg)
}

/// Layout to build the board with: forced by the flag, else from the config.
fn forced(arg: Option<Orientation>, layout: PdLayout) -> Option<PdLayout> {
    arg.map(|_| layout)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn simulate(args: &SceneArgs, scans: usize, out: &Path) -> CliResult {
    let cfg = load_scene(args)?;
    if scans == 0 {
        return Err(Failure::Input("--scans must be at least 1".into()));
    }
    std::fs::create_dir_all(out).map_err(Error::from)?;
    for layout in layouts(args.pd_orientation, cfg.board.layout, false) {
        let scene = cfg.scene(forced(args.pd_orientation, layout))?;
        let frames = simulate_frames(&scene, &cfg.base_pose.pose(), scans, cfg.seed)?;
        let path = out.join(format!("frames_{}.csv", layout_name(layout)));
        save_frames(&path, &frames)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn calibrate(args: &SceneArgs, frames_path: Option<&Path>, scans: usize, out: Option<&Path>) -> CliResult {
    let cfg = load_scene(args)?;
    let targets = layouts(args.pd_orientation, cfg.board.layout, false);
    if frames_path.is_some() && targets.len() > 1 {
        return Err(Failure::Input("a frame file holds one board; pick a single --pd-orientation".into()));
    }
    let mut text = String::new();
    for layout in targets {
        let scene = cfg.scene(forced(args.pd_orientation, layout))?;
        let frames = match frames_path {
            Some(p) => load_frames(p)?,
            None => simulate_frames(&scene, &cfg.base_pose.pose(), scans, cfg.seed)?,
        };
        if frames.is_empty() {
            return Err(Failure::Input("no frames to calibrate".into()));
        }
        let batch = run_single(&frames, &scene, &cfg.pipeline)?;
        text.push_str(&format!("[{}]\n", layout_label(layout)));
        text.push_str(&single_report(&frames, &batch));
    }
    print!("{text}");
    if let Some(dir) = out {
        write_text(&dir.join("calibration.txt"), &text)?;
    }
    Ok(())
}

fn sweep(args: &SceneArgs, sweep_path: Option<&Path>, out: &Path) -> CliResult {
    let cfg = load_scene(args)?;
    let mut sweeps = match sweep_path {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = args.seed {
        sweeps = sweeps.with_seed(seed);
    }
    let base = cfg.base_pose.pose();
    let mut runs = Vec::new();
    for layout in layouts(args.pd_orientation, cfg.board.layout, true) {
        let scene = cfg.scene(Some(layout))?;
        let mut results = Vec::new();
        for spec in &sweeps.sweeps {
            let t = Instant::now();
            results.push(run_sweep(spec, &scene, &base, &cfg.pipeline)?);
            info!("{} {} sweep took {:.1?}", layout_label(layout), spec.parameter.label(), t.elapsed());
        }
        runs.push(Run {
            label: layout_label(layout).to_string(),
            results,
        });
    }
    for path in write_report(out, &runs)? {
        info!("wrote {}", path.display());
    }
    print!("{}", table_text(&StatsFile::from_runs(&runs)?)?);
    Ok(())
}

fn report(stats: &Path, out: Option<&Path>) -> CliResult {
    let text = std::fs::read_to_string(stats).map_err(|e| Failure::Input(format!("{}: {e}", stats.display())))?;
    let stats = StatsFile::from_json(&text).map_err(|e| Failure::Input(e.to_string()))?;
    print!("{}", table_text(&stats)?);
    if let Some(dir) = out {
        write_summary(dir, &stats)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = ["error", "warn", "info", "debug"][usize::from(cli.verbose.min(3))];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Simulate { scene, scans, out } => simulate(scene, *scans, out),
        Command::Calibrate { scene, frames, scans, out } => calibrate(scene, frames.as_deref(), *scans, out.as_deref()),
        Command::Sweep { scene, sweep: s, out } => sweep(scene, s.as_deref(), out),
        Command::Report { stats, out } => report(stats, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("pipeline failure: {msg}");
            ExitCode::from(2)
        }
    }
}
