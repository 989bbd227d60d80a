use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};
use rvoik::chain::pose_from_parts;
use rvoik::planner::{generate_ik_solution, ArmRequest, PlanRequest};
use rvoik::sim::{benchmark, oracle_check, run, BenchReport, Overrides, RunOptions, Scene, TrajectoryLog};
use rvoik::{ChainError, JointConfig, LogError, PlanError, Pose, SceneError};
use serde_json::{json, Value};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_DEGRADED: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

/// Collision-free inverse kinematics for redundant manipulators.
///
/// Exit codes: 0 success, 1 input or solver error, 2 degraded solution,
/// 3 verification failure.
#[derive(Debug, Parser)]
#[command(name = "rvoik", version)]
struct Cli {
    /// Print more detail to standard error
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Directory searched for scene files not found at the given path
    #[arg(long, global = true, env = "RVOIK_SCENE_DIR")]
    scene_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a scene and report whether it is valid
    Validate {
        scene: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Plan a single tick from the scene's initial state
    Solve(SolveArgs),
    /// Run a scene and verify the trajectory
    Simulate {
        scene: PathBuf,
        /// Write the trajectory log here instead of standard output
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Verify a trajectory log with the collision oracle
    Check { log: PathBuf },
    /// Time the planner on one or more scenes and print CSV
    Bench {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        /// Runs per scene
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
        reps: u32,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Debug, Args)]
struct SolveArgs {
    scene: PathBuf,
    /// Manipulator whose target the flags below replace
    #[arg(long, default_value_t = 0)]
    manipulator: usize,
    /// Target position `x,y,z` in meters; keeps the current orientation
    /// unless --rpy is given
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    position: Option<[f64; 3]>,
    /// Target orientation `roll,pitch,yaw` in radians
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, requires = "position")]
    rpy: Option<[f64; 3]>,
    /// Target given as the joint configuration whose pose it is
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "position")]
    config: Option<Vec<f64>>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Debug, Default, Args)]
struct OverrideArgs {
    /// Swarm seed
    #[arg(long)]
    seed: Option<u64>,
    /// Time step in seconds
    #[arg(long)]
    dt: Option<f64>,
    /// Prediction horizon in seconds
    #[arg(long)]
    tau: Option<f64>,
    /// Number of particles
    #[arg(short = 'N', long = "particles")]
    particles: Option<usize>,
    /// Swarm rounds
    #[arg(short = 'T', long = "iterations")]
    iterations: Option<usize>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            rng_seed: a.seed,
            dt: a.dt,
            tau: a.tau,
            particles: a.particles,
            iterations: a.iterations,
        }
    }
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(values).map_err(|v| format!("expected 3 comma-separated values, got {}", v.len()))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Scene(SceneError),
    Log(LogError),
    Plan(PlanError),
    Chain(ChainError),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Scene(e) => e.kind(),
            CliError::Log(e) => e.kind(),
            CliError::Plan(e) => e.kind(),
            CliError::Chain(_) => "InvalidTarget",
            CliError::Io { .. } => "Io",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Scene(e) => e.to_string(),
            CliError::Log(e) => e.to_string(),
            CliError::Plan(e) => e.to_string(),
            CliError::Chain(e) => e.to_string(),
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Scene(e)
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        CliError::Log(e)
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Plan(e)
    }
}

struct Context {
    verbose: u8,
    scene_dir: Option<PathBuf>,
}

impl Context {
    fn note(&self, level: u8, message: impl AsRef<str>) {
        if self.verbose >= level {
            eprintln!("{}", message.as_ref());
        }
    }

    /// The path as given if it exists, otherwise the same name under the
    /// scene directory, with or without a `.json` suffix.
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.exists() || path.is_absolute() {
            return path.to_path_buf();
        }
        if let Some(dir) = &self.scene_dir {
            let joined = dir.join(path);
            if joined.exists() {
                return joined;
            }
            let with_ext = joined.with_extension("json");
            if with_ext.exists() {
                return with_ext;
            }
        }
        path.to_path_buf()
    }

    fn load(&self, path: &Path, overrides: &OverrideArgs) -> Result<Scene, CliError> {
        let path = self.resolve(path);
        self.note(1, format!("loading {}", path.display()));
        let scene = Scene::from_file_with(&path, &overrides.into())?;
        self.note(1, format!("effective config: {}", scene.effective_config()));
        Ok(scene)
    }
}

fn print_json(value: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

fn pose_json(pose: &Pose) -> Value {
    let t = pose.translation.vector;
    let q = pose.rotation;
    json!({"position": [t.x, t.y, t.z], "quaternion": [q.w, q.i, q.j, q.k]})
}

fn validate(ctx: &Context, path: &Path, overrides: &OverrideArgs) -> Result<u8, CliError> {
    let scene = ctx.load(path, overrides)?;
    let manipulators: Vec<Value> = scene
        .manipulators
        .iter()
        .map(|m| json!({"name": m.name, "dof": m.chain.dof(), "waypoints": m.waypoints.len()}))
        .collect();
    print_json(&json!({
        "valid": true,
        "scene": scene.name,
        "config": scene.effective_config(),
        "manipulators": manipulators,
        "obstacles": scene.obstacles.len(),
        "spheres": scene.spheres_at_start().len(),
        "ticks": scene.ticks(),
    }));
    eprintln!("{}: valid, {} DOF, {} ticks", scene.name, scene.total_dof(), scene.ticks());
    Ok(EXIT_OK)
}

fn solve(ctx: &Context, args: &SolveArgs) -> Result<u8, CliError> {
    let scene = ctx.load(&args.scene, &args.overrides)?;
    let Some(chosen) = scene.manipulators.get(args.manipulator) else {
        return Err(CliError::Usage(format!(
            "manipulator {} does not exist, the scene has {}",
            args.manipulator,
            scene.manipulators.len()
        )));
    };
    let mut targets: Vec<Pose> = scene.manipulators.iter().map(|m| m.target(scene.dt)).collect();
    if let Some(q) = &args.config {
        targets[args.manipulator] = chosen
            .chain
            .forward_kinematics(&JointConfig::new(q.clone()))
            .map_err(CliError::Chain)?;
    } else if let Some(p) = args.position {
        targets[args.manipulator] = match args.rpy {
            Some(rpy) => pose_from_parts(p, rpy),
            None => {
                let mut pose = chosen
                    .chain
                    .forward_kinematics(&chosen.initial)
                    .map_err(CliError::Chain)?;
                pose.translation.x = p[0];
                pose.translation.y = p[1];
                pose.translation.z = p[2];
                pose
            }
        };
    }

    let req = PlanRequest {
        arms: scene
            .manipulators
            .iter()
            .zip(&targets)
            .map(|(m, target)| ArmRequest {
                chain: &m.chain,
                current: m.initial.clone(),
                previous: m.initial.clone(),
                target: *target,
            })
            .collect(),
        obstacles: scene.obstacle_spheres(0.0),
        dt: scene.dt,
        tick: 0,
    };
    let result = generate_ik_solution(&req, &scene.planner)?;

    let mut first_error: Option<&PlanError> = None;
    let mut degraded = false;
    let mut arms = Vec::with_capacity(result.arms.len());
    for ((m, plan), target) in scene.manipulators.iter().zip(&result.arms).zip(&targets) {
        if let Some(e) = &plan.degraded {
            degraded = true;
            if !matches!(e, PlanError::NoSafeSolution { .. }) && first_error.is_none() {
                first_error = Some(e);
            }
            eprintln!("{}: {} ({})", m.name, e.kind(), e);
        }
        let pose = m.chain.forward_kinematics(&plan.config).map_err(CliError::Chain)?;
        arms.push(json!({
            "name": m.name,
            "config": plan.config,
            "target": pose_json(target),
            "end_effector": pose_json(&pose),
            "degraded": plan.degraded.as_ref().map(|e| json!({"kind": e.kind(), "message": e.to_string()})),
            "diagnostics": plan.diagnostics,
        }));
    }
    let (status, code) = match (first_error, degraded) {
        (Some(_), _) => ("error", EXIT_ERROR),
        (None, true) => ("degraded", EXIT_DEGRADED),
        (None, false) => ("safe", EXIT_OK),
    };
    let mut out = json!({
        "status": status,
        "config": scene.effective_config(),
        "solve_ms": result.solve_ms,
        "manipulators": arms,
    });
    if let Some(e) = first_error {
        out["error"] = json!({"kind": e.kind(), "message": e.to_string()});
    }
    print_json(&out);
    eprintln!("{}: {status} in {:.3} ms", scene.name, result.solve_ms);
    Ok(code)
}

fn simulate(ctx: &Context, path: &Path, out: Option<&Path>, overrides: &OverrideArgs) -> Result<u8, CliError> {
    let scene = ctx.load(path, overrides)?;
    let clock = Instant::now();
    let log = run(&scene, RunOptions::default())?;
    let elapsed = clock.elapsed().as_secs_f64();
    let report = oracle_check(&log);
    for d in &log.header.degraded {
        ctx.note(2, format!("tick {} m{}: {}", d.tick, d.manipulator, d.message));
    }
    let summary = json!({
        "scene": scene.name,
        "config": scene.effective_config(),
        "ticks": log.records.len(),
        "degraded_ticks": log.header.degraded.len(),
        "searches": log.header.searches.len(),
        "elapsed_s": elapsed,
        "log": out.map(|p| p.display().to_string()),
        "oracle": report,
    });
    match out {
        Some(p) => {
            log.save(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            print_json(&summary);
        }
        None => {
            log.write_to(std::io::stdout().lock()).map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            })?;
            ctx.note(1, summary.to_string());
        }
    }
    eprintln!(
        "{}: {} ticks in {elapsed:.2} s, {} degraded, {}",
        scene.name,
        log.records.len(),
        log.header.degraded.len(),
        describe(&report)
    );
    Ok(if report.is_clean() { EXIT_OK } else { EXIT_VIOLATION })
}

fn describe(report: &rvoik::sim::OracleReport) -> String {
    match (&report.first_violation, report.min_clearance) {
        (Some(v), _) => format!(
            "{} violations, first at tick {} ({} / {})",
            report.violation_count, v.tick, v.a, v.b
        ),
        (None, Some(c)) => format!("clean, min clearance {c:.4} m"),
        (None, None) => "clean, no interacting pairs".to_string(),
    }
}

fn check(path: &Path) -> Result<u8, CliError> {
    let log = TrajectoryLog::load(path)?;
    let report = oracle_check(&log);
    print_json(&json!({
        "log": path.display().to_string(),
        "scene": log.header.scene,
        "config": log.header.config,
        "oracle": report,
    }));
    eprintln!("{}: {}", path.display(), describe(&report));
    Ok(if report.is_clean() { EXIT_OK } else { EXIT_VIOLATION })
}

fn bench(ctx: &Context, paths: &[PathBuf], reps: u32, overrides: &OverrideArgs) -> Result<u8, CliError> {
    let scenes: Vec<Scene> = paths
        .iter()
        .map(|p| ctx.load(p, overrides))
        .collect::<Result<_, _>>()?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", BenchReport::CSV_HEADER);
    for scene in &scenes {
        let report = benchmark(scene, reps as usize)?;
        let _ = writeln!(out, "{}", report.csv_row());
        let _ = out.flush();
        eprintln!(
            "{}: {} DOF, median {:.4} ms, p95 {:.4} ms over {} ticks",
            report.scene,
            report.dof,
            report.median_ms,
            report.p95_ms,
            report.samples_ms.len()
        );
    }
    Ok(EXIT_OK)
}

fn report_error(e: &CliError) {
    print_json(&json!({"error": {"kind": e.kind(), "message": e.message()}}));
    eprintln!("error: {}", e.message());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report_error(&CliError::Usage(e.kind().to_string()));
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let ctx = Context {
        verbose: cli.verbose,
        scene_dir: cli.scene_dir,
    };
    let outcome = match &cli.command {
        Command::Validate { scene, overrides } => validate(&ctx, scene, overrides),
        Command::Solve(args) => solve(&ctx, args),
        Command::Simulate {
            scene,
            out,
            overrides,
        } => simulate(&ctx, scene, out.as_deref(), overrides),
        Command::Check { log } => check(log),
        Command::Bench {
            scenes,
            reps,
            overrides,
        } => bench(&ctx, scenes, *reps, overrides),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(&e);
            ExitCode::from(EXIT_ERROR)
        }
    }
}
