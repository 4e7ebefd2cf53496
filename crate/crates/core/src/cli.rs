//! Command-line front end: design-space sweeps, the tilt-angle optimization,
//! closed-loop scenario runs, and estimator log replay.
//!
//! Every subcommand loads its configuration first, computes everything in
//! memory, and only then writes its artifacts (temp file + rename, so an
//! interrupted run never leaves a half-written file and reruns are
//! idempotent). Floats are printed with Rust's shortest round-trip
//! formatting, so written values parse back exactly.
//!
//! Exit codes: `0` success, `2` configuration or input error (including
//! malformed spec/scenario/log files), `3` simulation divergence (the message
//! carries the divergence time).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::config::{ControlConfig, EstimatorConfig, JointConfig, RobotSpec};
use crate::design::{
    self, DEFAULT_OPT_WEIGHTS, DEFAULT_TAU_THRESHOLD, DEFAULT_U_THRESHOLD,
};
use crate::estimation::{
    Estimator, GeoReference, ImuSample, MeasurementKind, StampedMeasurement,
};
use crate::model::allocation;
use crate::numerics::{rot_x, rot_y, rot_z};
use crate::sim::{run_scenario, RunOptions, Scenario};
use crate::{Error, Result};

/// Shared output/parallelism flags.
#[derive(Debug, Args)]
struct OutputArgs {
    /// Robot description file (`key = value` lines); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Directory for written artifacts (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads for sweep evaluation (defaults to all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(
    name = "tiltlink",
    version,
    about = "Design, simulate, and replay a four-link aerial robot with tilted rotors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design-space sweeps and the rotor tilt-angle optimization.
    #[command(subcommand)]
    Design(DesignCommand),
    /// Run a scenario closed loop and write the tick log plus a summary.
    Run(RunArgs),
    /// Feed a recorded measurement log through the state estimator.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
enum DesignCommand {
    /// Sweep the rotor tilt angle; one CSV row per angle.
    SweepBeta {
        #[command(flatten)]
        output: OutputArgs,
        /// First tilt angle (rad).
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        /// Last tilt angle (rad, exclusive of the vertical-thrust singularity at pi/2).
        #[arg(long, default_value_t = 0.8)]
        to: f64,
        /// Grid spacing (rad).
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Classify hover feasibility over a joint-angle grid.
    SweepJoints {
        #[command(flatten)]
        output: OutputArgs,
        /// Points per joint axis.
        #[arg(long, default_value_t = 33)]
        grid: usize,
        /// Minimum admissible rotor thrust margin (N).
        #[arg(long, default_value_t = DEFAULT_U_THRESHOLD)]
        u_threshold: f64,
        /// Minimum admissible guaranteed control torque (N·m).
        #[arg(long, default_value_t = DEFAULT_TAU_THRESHOLD)]
        tau_threshold: f64,
    },
    /// Map the guaranteed minimum control torque over a joint-angle grid.
    TauMinMap {
        #[command(flatten)]
        output: OutputArgs,
        /// Points per joint axis.
        #[arg(long, default_value_t = 33)]
        grid: usize,
    },
    /// Pick the tilt angle by a weighted sum of range-normalized design metrics.
    Optimize {
        #[command(flatten)]
        output: OutputArgs,
        /// Comma-separated weights: hover thrust, yaw-torque span,
        /// lateral-force cost, aerodynamic-interference cost.
        #[arg(long, value_delimiter = ',', value_name = "W1,W2,W3,W4")]
        weights: Option<Vec<f64>>,
        /// First tilt angle of the search grid (rad).
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        /// Last tilt angle of the search grid (rad).
        #[arg(long, default_value_t = 0.8)]
        to: f64,
        /// Search grid spacing (rad).
        #[arg(long, default_value_t = 0.005)]
        step: f64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Controller gain file (`key = value` lines).
    #[arg(long, value_name = "FILE")]
    gains: Option<PathBuf>,
    /// Estimator configuration file (`key = value` lines).
    #[arg(long, value_name = "FILE")]
    estimator: Option<PathBuf>,
    /// Built-in scenario name or a scenario file path.
    #[arg(long, value_name = "NAME|FILE")]
    scenario: String,
    /// Seed of the sensor-noise stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constant accelerometer bias injected into the simulated sensor (m/s²).
    #[arg(long, value_delimiter = ',', value_name = "BX,BY,BZ")]
    accel_bias: Option<Vec<f64>>,
    /// Let the injected accelerometer bias random-walk instead of staying constant.
    #[arg(long)]
    bias_walk: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// Estimator configuration file (`key = value` lines).
    #[arg(long, value_name = "FILE")]
    estimator: Option<PathBuf>,
    /// Measurement log: CSV lines `stamp,kind,values...`.
    #[arg(value_name = "LOG")]
    log: PathBuf,
    /// Replay in stamp order instead of arrival order.
    #[arg(long)]
    sorted: bool,
}

/// Parses the process arguments, dispatches, and maps errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::NonFiniteState { .. } => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(cmd) => match cmd {
            DesignCommand::SweepBeta { output, from, to, step } => {
                sweep_beta(&output, from, to, step)
            }
            DesignCommand::SweepJoints { output, grid, u_threshold, tau_threshold } => {
                sweep_joints(&output, grid, u_threshold, tau_threshold)
            }
            DesignCommand::TauMinMap { output, grid } => tau_min_map(&output, grid),
            DesignCommand::Optimize { output, weights, from, to, step } => {
                optimize(&output, weights.as_deref(), from, to, step)
            }
        },
        Command::Run(args) => run_command(&args),
        Command::Replay(args) => replay_command(&args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Folds the file name into i/o errors, which otherwise carry only the errno.
fn named(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn load_spec(path: Option<&Path>) -> Result<RobotSpec> {
    match path {
        Some(p) => RobotSpec::load(p).map_err(|e| named(e, p)),
        None => Ok(RobotSpec::default()),
    }
}

/// Writes `contents` to a sibling temp file and renames it into place, so the
/// destination is either absent or complete.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs `f` on a dedicated thread pool of `jobs` workers, or on the global
/// pool when no count was requested.
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Evenly spaced values from `from` to `to` inclusive.
fn linear_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    if !(from.is_finite() && to.is_finite() && to >= from) {
        return Err(Error::Config(format!("need finite bounds with to >= from, got {from}..{to}")));
    }
    let n = ((to - from) / step).round() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

fn push_floats(buf: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        let _ = write!(buf, "{v}");
    }
    buf.push('\n');
}

// ---------------------------------------------------------------------------
// design
// ---------------------------------------------------------------------------

/// Per-angle hover and envelope metrics at the reference square form.
fn sweep_beta(output: &OutputArgs, from: f64, to: f64, step: f64) -> Result<()> {
    let spec = load_spec(output.spec.as_deref())?;
    let betas = linear_grid(from, to, step)?;
    if betas.last().is_some_and(|b| *b >= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Config(format!(
            "tilt angles must stay below pi/2, sweep reaches {}",
            betas.last().unwrap()
        )));
    }
    let q = JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let tau_probe = Vector3::new(1.0, 1.0, 1.0);

    let rows: Vec<[f64; 7]> = with_pool(output.jobs, || {
        betas
            .par_iter()
            .map(|&beta| -> Result<[f64; 7]> {
                let mut tilted = spec.clone();
                tilted.tilt_angle = beta;
                let alloc = allocation(&tilted, &q)?;
                let hover = design::hovering_thrust(&alloc, &tilted)?;
                let env = design::torque_envelope(&alloc, &tilted, &tau_probe)?;
                Ok([
                    beta,
                    hover.u_s_min,
                    hover.u_s_max,
                    env.tau_z_min,
                    env.tau_z_max,
                    env.f_xy_norm,
                    env.l_air,
                ])
            })
            .collect::<Result<_>>()
    })??;

    let mut csv = String::from("beta,u_s_min,u_s_max,tau_z_min,tau_z_max,f_xy_norm,l_air\n");
    for row in &rows {
        push_floats(&mut csv, row);
    }
    let path = output.out.join("beta_sweep.csv");
    write_atomic(&path, &csv)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

/// Joint-grid rows shared by `sweep-joints` and `tau-min-map`:
/// `(q1, q2, feasible, u_s_min, u_s_max, tau_min)`, with NaN metrics where
/// the hover allocation is singular.
fn joint_grid_rows(
    spec: &RobotSpec,
    grid: usize,
    jobs: Option<usize>,
    u_threshold: f64,
    tau_threshold: f64,
) -> Result<Vec<(f64, f64, bool, f64, f64, f64)>> {
    if grid < 2 {
        return Err(Error::Config(format!("grid must have at least 2 points, got {grid}")));
    }
    let q1s = design::uniform_grid(grid);
    let q2s = design::uniform_grid(grid);
    let pairs: Vec<(f64, f64)> =
        q1s.iter().flat_map(|&q1| q2s.iter().map(move |&q2| (q1, q2))).collect();
    with_pool(jobs, || {
        pairs
            .par_iter()
            .map(|&(q1, q2)| {
                let q = JointConfig::new(q1, q2);
                let metrics = allocation(spec, &q).ok().map(|alloc| {
                    let hover = design::hovering_thrust(&alloc, spec);
                    let convex = design::torque_convex(&alloc, spec.u_max);
                    (
                        hover.as_ref().map_or(f64::NAN, |h| h.u_s_min),
                        hover.as_ref().map_or(f64::NAN, |h| h.u_s_max),
                        convex.map_or(f64::NAN, |c| c.tau_min),
                    )
                });
                let (u_min, u_max, tau_min) = metrics.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                let valid = design::form_is_valid(spec, &q, u_threshold, tau_threshold);
                (q1, q2, valid, u_min, u_max, tau_min)
            })
            .collect()
    })
}

fn sweep_joints(output: &OutputArgs, grid: usize, u_thre: f64, tau_thre: f64) -> Result<()> {
    let spec = load_spec(output.spec.as_deref())?;
    let rows = joint_grid_rows(&spec, grid, output.jobs, u_thre, tau_thre)?;
    let feasible = rows.iter().filter(|r| r.2).count();

    let mut csv = String::from("q1,q2,valid,u_s_min,u_s_max,tau_min\n");
    for &(q1, q2, valid, u_min, u_max, tau_min) in &rows {
        let _ = write!(csv, "{q1},{q2},{}", u8::from(valid));
        csv.push(',');
        push_floats(&mut csv, &[u_min, u_max, tau_min]);
    }
    let path = output.out.join("joint_sweep.csv");
    write_atomic(&path, &csv)?;
    println!(
        "wrote {} ({} rows, {:.1}% feasible)",
        path.display(),
        rows.len(),
        100.0 * feasible as f64 / rows.len() as f64
    );
    Ok(())
}

fn tau_min_map(output: &OutputArgs, grid: usize) -> Result<()> {
    let spec = load_spec(output.spec.as_deref())?;
    let rows =
        joint_grid_rows(&spec, grid, output.jobs, DEFAULT_U_THRESHOLD, DEFAULT_TAU_THRESHOLD)?;

    let mut csv = String::from("q1,q2,tau_min\n");
    for &(q1, q2, _, _, _, tau_min) in &rows {
        push_floats(&mut csv, &[q1, q2, tau_min]);
    }
    let path = output.out.join("tau_min_map.csv");
    write_atomic(&path, &csv)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn optimize(
    output: &OutputArgs,
    weights: Option<&[f64]>,
    from: f64,
    to: f64,
    step: f64,
) -> Result<()> {
    let spec = load_spec(output.spec.as_deref())?;
    let weights: [f64; 4] = match weights {
        None => DEFAULT_OPT_WEIGHTS,
        Some(w) => w.try_into().map_err(|_| {
            Error::Config(format!("--weights takes exactly 4 values, got {}", w.len()))
        })?,
    };
    let grid = linear_grid(from, to, step)?;
    let opt = with_pool(output.jobs, || design::optimize_tilt(&spec, &weights, &grid))??;

    let mut csv = String::from(
        "beta,thrust_metric,yaw_span_metric,lateral_metric,interference_metric,objective\n",
    );
    for s in &opt.trace {
        push_floats(
            &mut csv,
            &[s.beta, s.metrics[0], s.metrics[1], s.metrics[2], s.metrics[3], s.objective],
        );
    }
    let path = output.out.join("tilt_trace.csv");
    write_atomic(&path, &csv)?;
    println!("beta_opt = {} rad ({:.2} deg)", opt.beta_opt, opt.beta_opt.to_degrees());
    println!("wrote {} ({} rows)", path.display(), opt.trace.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn resolve_scenario(name: &str) -> Result<(Scenario, String)> {
    let path = Path::new(name);
    if path.exists() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        return Ok((Scenario::load(path).map_err(|e| named(e, path))?, stem));
    }
    match Scenario::builtin(name) {
        Some(s) => Ok((s, name.to_string())),
        None => Err(Error::Config(format!(
            "unknown scenario '{name}': no such file, and built-ins are {}",
            Scenario::builtin_names().join(", ")
        ))),
    }
}

fn run_command(args: &RunArgs) -> Result<()> {
    let spec = load_spec(args.output.spec.as_deref())?;
    let control = match &args.gains {
        Some(p) => ControlConfig::load(p).map_err(|e| named(e, p))?,
        None => ControlConfig::default(),
    };
    let est_cfg = match &args.estimator {
        Some(p) => EstimatorConfig::load(p).map_err(|e| named(e, p))?,
        None => EstimatorConfig::default(),
    };
    let (scenario, stem) = resolve_scenario(&args.scenario)?;

    let mut opts = RunOptions { seed: args.seed, ..RunOptions::default() };
    if let Some(bias) = &args.accel_bias {
        let b: [f64; 3] = bias.as_slice().try_into().map_err(|_| {
            Error::Config(format!("--accel-bias takes exactly 3 values, got {}", bias.len()))
        })?;
        opts.accel_bias = Vector3::from(b);
    }
    opts.bias_walk = args.bias_walk;

    let log = run_scenario(&spec, &control, &est_cfg, &scenario, &opts)?;

    let csv_path = args.output.out.join(format!("{stem}_seed{}.csv", args.seed));
    write_atomic(&csv_path, &log.csv_string())?;
    let summary = serde_json::to_string_pretty(&log.summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    let json_path = args.output.out.join(format!("{stem}_seed{}_summary.json", args.seed));
    write_atomic(&json_path, &summary)?;
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

/// Per-measurement estimator output; `nan` where the filter or the embedded
/// truth has nothing to report yet.
const REPLAY_HEADER: &str = "stamp,kind,x_est,y_est,z_est,vx_est,vy_est,vz_est,\
bx_est,by_est,bz_est,x_true,y_true,z_true,vx_true,vy_true,vz_true";

enum LogEntry {
    /// Geodetic origin of the local world frame.
    Reference { lat: f64, lon: f64 },
    /// Seeds the filter: inertial-unit position, velocity, and attitude
    /// (roll, pitch, yaw).
    Init { p: Vector3<f64>, v: Vector3<f64>, rpy: Vector3<f64> },
    /// Joint angles from here on (sensor lever arms depend on them).
    Joints { q1: f64, q2: f64 },
    /// Reference trajectory sample (inertial-unit frame origin) for the
    /// `*_true` output columns.
    Truth { p: Vector3<f64>, v: Vector3<f64> },
    Measurement(Box<StampedMeasurement>),
}

struct LogRow {
    line: usize,
    stamp: f64,
    entry: LogEntry,
}

/// The log token for a measurement kind (inverse of [`parse_log`]'s match).
fn kind_token(kind: &MeasurementKind) -> &'static str {
    match kind {
        MeasurementKind::ImuSample => "imu",
        MeasurementKind::GpsPos => "gps_pos",
        MeasurementKind::GpsVel => "gps_vel",
        MeasurementKind::VioVel => "vio_vel",
        MeasurementKind::LidarHeight => "lidar",
    }
}

fn parse_log(text: &str, cfg: &EstimatorConfig) -> Result<Vec<LogRow>> {
    // The filter needs a covariance weight per observation; a recorded log
    // carries none, so the configured 1σ levels stand in (floored away from
    // zero to keep the weights well defined).
    let sig = |s: f64| s.max(f64::MIN_POSITIVE);
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if line == 1 && trimmed.starts_with("stamp,") {
            continue; // column header
        }
        let bad = |what: &str| Error::Config(format!("log line {line}: {what}"));
        let mut fields = trimmed.split(',');
        let stamp: f64 = fields
            .next()
            .expect("split yields at least one field")
            .trim()
            .parse()
            .map_err(|_| bad("stamp is not a number"))?;
        if !stamp.is_finite() {
            return Err(bad("stamp must be finite"));
        }
        let kind = fields.next().ok_or_else(|| bad("missing kind field"))?.trim();
        let values = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(&format!("bad number '{}'", f.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        let expect = |n: usize| {
            if values.len() == n {
                Ok(())
            } else {
                Err(bad(&format!("kind '{kind}' takes {n} values, got {}", values.len())))
            }
        };
        let v3 = |i: usize| Vector3::new(values[i], values[i + 1], values[i + 2]);
        let entry = match kind {
            "ref" => {
                expect(2)?;
                LogEntry::Reference { lat: values[0], lon: values[1] }
            }
            "init" => {
                expect(9)?;
                LogEntry::Init { p: v3(0), v: v3(3), rpy: v3(6) }
            }
            "joints" => {
                expect(2)?;
                LogEntry::Joints { q1: values[0], q2: values[1] }
            }
            "truth" => {
                expect(6)?;
                LogEntry::Truth { p: v3(0), v: v3(3) }
            }
            "imu" => {
                expect(9)?;
                let sample = ImuSample { accel: v3(0), gyro: v3(3), mag: v3(6) };
                LogEntry::Measurement(Box::new(StampedMeasurement::imu(
                    stamp,
                    sample,
                    [sig(cfg.sigma_accel), sig(cfg.sigma_gyro), sig(cfg.sigma_mag)],
                )))
            }
            "gps_pos" => {
                expect(2)?;
                LogEntry::Measurement(Box::new(StampedMeasurement::gps_pos(
                    stamp,
                    values[0],
                    values[1],
                    sig(cfg.sigma_gps_pos),
                )))
            }
            "gps_vel" => {
                expect(3)?;
                LogEntry::Measurement(Box::new(StampedMeasurement::gps_vel(
                    stamp,
                    v3(0),
                    sig(cfg.sigma_gps_vel),
                )))
            }
            "vio_vel" => {
                expect(3)?;
                LogEntry::Measurement(Box::new(StampedMeasurement::vio_vel(
                    stamp,
                    v3(0),
                    sig(cfg.sigma_vio_vel),
                )))
            }
            "lidar" => {
                expect(1)?;
                LogEntry::Measurement(Box::new(StampedMeasurement::lidar(
                    stamp,
                    values[0],
                    sig(cfg.sigma_lidar),
                )))
            }
            other => return Err(bad(&format!("unknown kind '{other}'"))),
        };
        rows.push(LogRow { line, stamp, entry });
    }
    Ok(rows)
}

fn replay_command(args: &ReplayArgs) -> Result<()> {
    let spec = load_spec(args.output.spec.as_deref())?;
    let cfg = match &args.estimator {
        Some(p) => EstimatorConfig::load(p).map_err(|e| named(e, p))?,
        None => EstimatorConfig::default(),
    };
    let text =
        std::fs::read_to_string(&args.log).map_err(|e| named(Error::Io(e), &args.log))?;
    let mut rows = parse_log(&text, &cfg)?;
    if args.sorted {
        // Stable, so simultaneous rows keep their recorded order.
        rows.sort_by(|a, b| a.stamp.partial_cmp(&b.stamp).expect("stamps validated finite"));
    }

    let mut est = Estimator::new(&spec, &cfg)?;
    let mut q = JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let mut truth: Option<(Vector3<f64>, Vector3<f64>)> = None;
    let mut csv = String::from(REPLAY_HEADER);
    csv.push('\n');
    let mut measurements = 0_usize;

    for row in &rows {
        match &row.entry {
            LogEntry::Reference { lat, lon } => {
                est.set_reference(GeoReference { lat: *lat, lon: *lon });
            }
            LogEntry::Joints { q1, q2 } => q = JointConfig::new(*q1, *q2),
            LogEntry::Truth { p, v } => truth = Some((*p, *v)),
            LogEntry::Init { p, v, rpy } => {
                let r = rot_z(rpy.z) * rot_y(rpy.y) * rot_x(rpy.x);
                est.initialize(row.stamp, *p, *v, &r, None);
            }
            LogEntry::Measurement(meas) => {
                match est.process(meas, &q) {
                    Ok(()) => {}
                    // Dropped and counted by the filter; the log keeps playing.
                    Err(Error::StaleMeasurement { .. }) => {}
                    Err(e) => return Err(Error::Config(format!("log line {}: {e}", row.line))),
                }
                measurements += 1;
                let _ = write!(csv, "{},{}", row.stamp, kind_token(&meas.kind));
                let nan3 = Vector3::from_element(f64::NAN);
                let (p_est, v_est, b_est) = est
                    .state()
                    .map_or((nan3, nan3, nan3), |s| (s.p, s.v, s.b_acc));
                let (p_true, v_true) = truth.unwrap_or((nan3, nan3));
                for block in [p_est, v_est, b_est, p_true, v_true] {
                    let _ = write!(csv, ",{},{},{}", block.x, block.y, block.z);
                }
                csv.push('\n');
            }
        }
    }

    let path = args.output.out.join("replay.csv");
    write_atomic(&path, &csv)?;
    println!(
        "replayed {measurements} measurements ({} stale) -> {}",
        est.stale_count(),
        path.display()
    );
    Ok(())
}
