//! Rigid-body plant, sensor emulation, disturbance/payload injection, and
//! scripted closed-loop scenarios.
//!
//! The plant integrates the full nonlinear rigid-body dynamics with RK4 about
//! the *combined* center of mass (robot + any attached payload), entirely in
//! the structure frame `{C}`. Joints are quasi-static: they follow the
//! scripted trajectory exactly and re-shape the geometry (allocation,
//! inertia, CoM offset) without feeding rates back into the dynamics. The
//! public [`RigidBodyState`] is always the robot's `{CoG}` truth, which stays
//! continuous across payload attach/release and joint motion.
//!
//! [`SensorEmulator`] produces GPS/VIO/LiDAR/IMU measurements from truth with
//! configurable noise, rates, and transport delays; [`run_scenario`] closes
//! the loop (1 kHz plant, 100 Hz control, optionally the full estimation
//! stack) and returns a [`RunLog`] with per-tick rows and a summary.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{ControlConfig, EstimatorConfig, JointConfig, RobotSpec};
use crate::control::{rpy_of, wrap_angle, Controller, Feedback, Setpoint};
use crate::estimation::{
    enu_to_gps, Estimator, FrameRegistry, GeoReference, ImuSample, StampedMeasurement,
};
use crate::model::{allocation, forward_kinematics, inertia, AllocationSet, Kinematics};
use crate::{Error, Result};

/// Geodetic anchor of the simulated world origin.
pub const SIM_GEO_REFERENCE: GeoReference = GeoReference { lat: 35.3, lon: 139.5 };

/// World-frame rigid-body state of the `{CoG}` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    /// Position of the CoG (m).
    pub r: Vector3<f64>,
    /// Velocity of the CoG (m/s).
    pub v: Vector3<f64>,
    /// Attitude: rotates `{CoG}`-frame vectors into the world frame. Kept at
    /// unit norm (renormalized every integration step).
    pub attitude: UnitQuaternion<f64>,
    /// Angular rates expressed in `{CoG}` (rad/s).
    pub omega: Vector3<f64>,
    /// Joint angles at this instant (rad).
    pub q_joints: JointConfig,
    /// Time (s).
    pub t: f64,
}

impl RigidBodyState {
    /// Level state at rest at `r` with joints `q`, `t = 0`.
    pub fn at_rest(r: Vector3<f64>, q: JointConfig) -> Self {
        Self {
            r,
            v: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            omega: Vector3::zeros(),
            q_joints: q,
            t: 0.0,
        }
    }

    /// Attitude as a rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.attitude.to_rotation_matrix().into_inner()
    }
}

/// A windowed sinusoidal disturbance component: zero outside
/// `[t_start, t_end)`, `amplitude · sin(2πf(t − t_start))` inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinePulse {
    pub amplitude: Vector3<f64>,
    /// Frequency (Hz).
    pub frequency: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl SinePulse {
    fn at(&self, t: f64) -> Vector3<f64> {
        if t >= self.t_start && t < self.t_end {
            self.amplitude * (std::f64::consts::TAU * self.frequency * (t - self.t_start)).sin()
        } else {
            Vector3::zeros()
        }
    }
}

/// A finite-duration wrench pulse: active on `[time, time + duration)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseEvent {
    pub time: f64,
    pub duration: f64,
    /// Force, world frame (N).
    pub force: Vector3<f64>,
    /// Torque, `{CoG}` frame (N·m).
    pub torque: Vector3<f64>,
}

/// A rigid point-mass payload carried between `attach` and `release`.
///
/// The offset anchors the payload in the `{CoG}` frame at the current joint
/// configuration; only the truth dynamics see the extra mass (the controller
/// keeps its nominal model and absorbs the mismatch through integral action).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadEvent {
    /// Payload mass (kg).
    pub mass: f64,
    /// Payload position relative to the robot CoG, `{CoG}` frame (m).
    pub offset: Vector3<f64>,
    /// Attach time (s).
    pub attach: f64,
    /// Release time (s).
    pub release: f64,
}

/// External disturbances acting on the truth dynamics. Forces act at the
/// combined center of mass; torques are pure couples.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    /// Constant world-frame force (N).
    pub delta_tran: Vector3<f64>,
    /// Constant `{CoG}`-frame torque (N·m).
    pub delta_rot: Vector3<f64>,
    /// Windowed sinusoidal world-frame force.
    pub sine_tran: Option<SinePulse>,
    /// Windowed sinusoidal `{CoG}`-frame torque.
    pub sine_rot: Option<SinePulse>,
    /// Finite wrench pulses.
    pub impulses: Vec<ImpulseEvent>,
    /// Carried payload, if any.
    pub payload: Option<PayloadEvent>,
}

impl Default for Disturbance {
    fn default() -> Self {
        Self {
            delta_tran: Vector3::zeros(),
            delta_rot: Vector3::zeros(),
            sine_tran: None,
            sine_rot: None,
            impulses: Vec::new(),
            payload: None,
        }
    }
}

impl Disturbance {
    /// Total disturbance force at `t`, world frame.
    pub fn force_world(&self, t: f64) -> Vector3<f64> {
        let mut f = self.delta_tran;
        if let Some(s) = &self.sine_tran {
            f += s.at(t);
        }
        for imp in &self.impulses {
            if t >= imp.time && t < imp.time + imp.duration {
                f += imp.force;
            }
        }
        f
    }

    /// Total disturbance torque at `t`, `{CoG}` frame.
    pub fn torque_body(&self, t: f64) -> Vector3<f64> {
        let mut tau = self.delta_rot;
        if let Some(s) = &self.sine_rot {
            tau += s.at(t);
        }
        for imp in &self.impulses {
            if t >= imp.time && t < imp.time + imp.duration {
                tau += imp.torque;
            }
        }
        tau
    }

    /// Mass and `{CoG}`-frame offset of the payload if attached at `t`.
    pub fn payload_at(&self, t: f64) -> Option<(f64, Vector3<f64>)> {
        self.payload
            .filter(|p| t >= p.attach && t < p.release)
            .map(|p| (p.mass, p.offset))
    }
}

/// Mass/inertia geometry of the vehicle (plus payload) at one joint
/// configuration, referenced to the combined center of mass in `{C}`.
#[derive(Debug, Clone)]
pub struct PlantGeometry {
    pub alloc: AllocationSet,
    /// Total mass including any payload (kg).
    pub mass_total: f64,
    /// Combined CoM relative to the robot CoG, `{C}` frame (m).
    pub rho_c: Vector3<f64>,
    /// Inertia about the combined CoM, `{C}` axes (kg·m²).
    pub inertia_com_c: Matrix3<f64>,
}

fn point_inertia(d: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() * d.dot(d) - d * d.transpose()
}

/// Builds the plant geometry at `q`, optionally with a point-mass payload at
/// the given `{CoG}`-frame offset.
///
/// # Errors
/// [`Error::SingularForm`] from the allocation when the form cannot hover.
pub fn plant_geometry(
    spec: &RobotSpec,
    q: &JointConfig,
    payload: Option<(f64, Vector3<f64>)>,
) -> Result<PlantGeometry> {
    let alloc = allocation(spec, q)?;
    let inertia_model = inertia(spec, q);
    // The inertia model is expressed in {CoG}; bring it back to {C} axes.
    let i_robot_c = alloc.r_cog_c.transpose() * inertia_model.i_sigma * alloc.r_cog_c;
    let m_robot = spec.mass_total();
    match payload {
        None => Ok(PlantGeometry {
            alloc,
            mass_total: m_robot,
            rho_c: Vector3::zeros(),
            inertia_com_c: i_robot_c,
        }),
        Some((m_p, offset_cog)) => {
            let s_c = alloc.r_cog_c.transpose() * offset_cog;
            let m_tot = m_robot + m_p;
            let rho_c = s_c * (m_p / m_tot);
            let inertia_com_c = i_robot_c
                + m_robot * point_inertia(&(-rho_c))
                + m_p * point_inertia(&(s_c - rho_c));
            Ok(PlantGeometry { alloc, mass_total: m_tot, rho_c, inertia_com_c })
        }
    }
}

/// Integration state about the combined CoM: world position/velocity of the
/// CoM, `{C}` attitude quaternion (non-unit during RK4 stages), body rates in
/// `{C}`.
#[derive(Debug, Clone, Copy)]
struct ComState {
    r: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ComDeriv {
    r: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

fn com_add(y: &ComState, d: &ComDeriv, h: f64) -> ComState {
    ComState { r: y.r + d.r * h, v: y.v + d.v * h, q: y.q + d.q * h, w: y.w + d.w * h }
}

fn to_com(state: &RigidBodyState, geom: &PlantGeometry) -> ComState {
    let q_cog_c = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        geom.alloc.r_cog_c,
    ));
    let q_w_c = state.attitude * q_cog_c;
    let r_w_c = q_w_c.to_rotation_matrix().into_inner();
    let w_c = geom.alloc.r_cog_c.transpose() * state.omega;
    ComState {
        r: state.r + r_w_c * geom.rho_c,
        v: state.v + r_w_c * w_c.cross(&geom.rho_c),
        q: q_w_c.into_inner(),
        w: w_c,
    }
}

fn from_com(y: &ComState, geom: &PlantGeometry, q_joints: JointConfig, t: f64) -> RigidBodyState {
    let q_w_c = UnitQuaternion::new_normalize(y.q);
    let r_w_c = q_w_c.to_rotation_matrix().into_inner();
    let q_cog_c = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        geom.alloc.r_cog_c,
    ));
    RigidBodyState {
        r: y.r - r_w_c * geom.rho_c,
        v: y.v - r_w_c * y.w.cross(&geom.rho_c),
        attitude: q_w_c * q_cog_c.inverse(),
        omega: geom.alloc.r_cog_c * y.w,
        q_joints,
        t,
    }
}

/// Instantaneous rigid-body dynamics at state `y`, time `t`.
fn com_dynamics(
    geom: &PlantGeometry,
    inertia_inv: &Matrix3<f64>,
    gravity: f64,
    u: &Vector4<f64>,
    disturbance: &Disturbance,
    t: f64,
    y: &ComState,
) -> ComDeriv {
    let r_w_c = UnitQuaternion::new_normalize(y.q).to_rotation_matrix().into_inner();
    let f_c = geom.alloc.q_tran_c * u;
    let force_world = r_w_c * f_c + disturbance.force_world(t);
    let accel = force_world / geom.mass_total - Vector3::new(0.0, 0.0, gravity);
    let tau_c = geom.alloc.q_rot_c * u - geom.rho_c.cross(&f_c)
        + geom.alloc.r_cog_c.transpose() * disturbance.torque_body(t);
    let w_dot = inertia_inv * (tau_c - y.w.cross(&(geom.inertia_com_c * y.w)));
    let q_dot = y.q * Quaternion::from_imag(y.w) * 0.5;
    ComDeriv { r: y.v, v: accel, q: q_dot, w: w_dot }
}

fn inertia_inverse_c(geom: &PlantGeometry) -> Result<Matrix3<f64>> {
    geom.inertia_com_c.try_inverse().ok_or_else(|| {
        Error::Config("inertia tensor is singular at this joint configuration".into())
    })
}

fn check_finite(y: &ComState, t: f64) -> Result<()> {
    let checks: [(&str, bool); 4] = [
        ("position", y.r.iter().all(|x| x.is_finite())),
        ("velocity", y.v.iter().all(|x| x.is_finite())),
        ("attitude", y.q.coords.iter().all(|x| x.is_finite()) && y.q.norm() > 1e-12),
        ("angular rate", y.w.iter().all(|x| x.is_finite())),
    ];
    for (what, ok) in checks {
        if !ok {
            return Err(Error::NonFiniteState { t, what: what.to_string() });
        }
    }
    Ok(())
}

/// One RK4 step of the truth dynamics over `[state.t, state.t + dt]` under
/// constant rotor thrusts `u`, with joints quasi-static at `state.q_joints`.
/// The returned state keeps those joints; the caller advances them along the
/// scripted trajectory between steps.
///
/// # Errors
/// * [`Error::SingularForm`] when the form cannot hover (geometry undefined).
/// * [`Error::NonFiniteState`] when the integration produced a non-finite
///   component (divergence), tagged with the time and the offending field.
pub fn plant_step(
    spec: &RobotSpec,
    state: &RigidBodyState,
    u: &Vector4<f64>,
    disturbance: &Disturbance,
    dt: f64,
) -> Result<RigidBodyState> {
    assert!(dt > 0.0, "plant step requires dt > 0");
    let geom = plant_geometry(spec, &state.q_joints, disturbance.payload_at(state.t))?;
    let inv = inertia_inverse_c(&geom)?;
    let t = state.t;
    let y0 = to_com(state, &geom);

    let k1 = com_dynamics(&geom, &inv, spec.gravity, u, disturbance, t, &y0);
    let k2 = com_dynamics(
        &geom,
        &inv,
        spec.gravity,
        u,
        disturbance,
        t + dt / 2.0,
        &com_add(&y0, &k1, dt / 2.0),
    );
    let k3 = com_dynamics(
        &geom,
        &inv,
        spec.gravity,
        u,
        disturbance,
        t + dt / 2.0,
        &com_add(&y0, &k2, dt / 2.0),
    );
    let k4 =
        com_dynamics(&geom, &inv, spec.gravity, u, disturbance, t + dt, &com_add(&y0, &k3, dt));

    let sixth = dt / 6.0;
    let y = ComState {
        r: y0.r + (k1.r + k2.r * 2.0 + k3.r * 2.0 + k4.r) * sixth,
        v: y0.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * sixth,
        q: y0.q + (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) * sixth,
        w: y0.w + (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * sixth,
    };
    check_finite(&y, t + dt)?;
    Ok(from_com(&y, &geom, state.q_joints, t + dt))
}

/// Instantaneous accelerations of the truth dynamics, used by the inertial
/// sensor emulation (rigid-body transport to off-CoM mount points).
#[derive(Debug, Clone, Copy)]
pub struct Accels {
    /// Kinematic world acceleration of the combined CoM (m/s²).
    pub accel_com_world: Vector3<f64>,
    /// Angular acceleration, `{C}` frame (rad/s²).
    pub omega_dot_c: Vector3<f64>,
    /// Angular rate, `{C}` frame (rad/s).
    pub omega_c: Vector3<f64>,
    /// `{C}` → world rotation.
    pub r_w_c: Matrix3<f64>,
    /// Combined CoM relative to the robot CoG, `{C}` frame (m).
    pub rho_c: Vector3<f64>,
}

/// Evaluates the instantaneous accelerations at `state.t` under thrusts `u`.
pub fn plant_accels(
    spec: &RobotSpec,
    state: &RigidBodyState,
    u: &Vector4<f64>,
    disturbance: &Disturbance,
) -> Result<Accels> {
    let geom = plant_geometry(spec, &state.q_joints, disturbance.payload_at(state.t))?;
    let inv = inertia_inverse_c(&geom)?;
    let y = to_com(state, &geom);
    let d = com_dynamics(&geom, &inv, spec.gravity, u, disturbance, state.t, &y);
    Ok(Accels {
        accel_com_world: d.v,
        omega_dot_c: d.w,
        omega_c: y.w,
        r_w_c: UnitQuaternion::new_normalize(y.q).to_rotation_matrix().into_inner(),
        rho_c: geom.rho_c,
    })
}

/// Thrusts that hold the form in exact static hover at level `{CoG}`
/// attitude: the hover solution, whose net rotor force magnitude equals the
/// weight by construction.
pub fn hover_equilibrium(spec: &RobotSpec, q: &JointConfig) -> Result<Vector4<f64>> {
    Ok(allocation(spec, q)?.hover_thrust)
}

// ---------------------------------------------------------------------------
// Sensor emulation
// ---------------------------------------------------------------------------

struct Delivery {
    deliver_at: f64,
    seq: u64,
    meas: StampedMeasurement,
}

/// Generates GPS/VIO/LiDAR/IMU measurements from truth with configured noise
/// levels and transport delays. All noise comes from one seeded stream; a
/// draw happens for every potential sample (even at zero noise or when a
/// sample is discarded), so a given seed produces the same measurement
/// sequence regardless of the noise levels.
pub struct SensorEmulator {
    cfg: EstimatorConfig,
    registry: FrameRegistry,
    geo: GeoReference,
    gravity: f64,
    rng: ChaCha8Rng,
    accel_bias: Vector3<f64>,
    bias_walk: bool,
    queue: VecDeque<Delivery>,
    seq: u64,
}

impl SensorEmulator {
    pub fn new(
        spec: &RobotSpec,
        cfg: &EstimatorConfig,
        geo: GeoReference,
        seed: u64,
        accel_bias: Vector3<f64>,
        bias_walk: bool,
    ) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            registry: FrameRegistry::from_config(cfg)?,
            geo,
            gravity: spec.gravity,
            rng: ChaCha8Rng::seed_from_u64(seed),
            accel_bias,
            bias_walk,
            queue: VecDeque::new(),
            seq: 0,
        })
    }

    /// Current (possibly walked) accelerometer bias.
    pub fn accel_bias(&self) -> Vector3<f64> {
        self.accel_bias
    }

    fn randn(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn randn3(&mut self) -> Vector3<f64> {
        Vector3::new(self.randn(), self.randn(), self.randn())
    }

    /// World pose/twist of a registered sensor frame from the truth state.
    fn sensor_world(
        &self,
        name: &str,
        state: &RigidBodyState,
        kin: &Kinematics,
        alloc: &AllocationSet,
    ) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
        let pose = self.registry.resolve(name, kin).expect("standard frames registered");
        let r_w_cog = state.rotation();
        let r_w_c = r_w_cog * alloc.r_cog_c;
        let omega_w = r_w_cog * state.omega;
        let arm = r_w_c * pose.translation;
        (state.r + arm, state.v + omega_w.cross(&arm), r_w_c * pose.rotation)
    }

    fn push(&mut self, deliver_at: f64, meas: StampedMeasurement) {
        let seq = self.seq;
        self.seq += 1;
        let pos = self
            .queue
            .partition_point(|d| (d.deliver_at, d.seq) <= (deliver_at, seq));
        self.queue.insert(pos, Delivery { deliver_at, seq, meas });
    }

    /// Samples the inertial unit at `t` (delivered immediately): specific
    /// force with bias and white noise, angular rate, magnetic field
    /// direction (world x-axis).
    pub fn sample_imu(&mut self, kin: &Kinematics, aux: &Accels, t: f64) -> StampedMeasurement {
        let pose = self.registry.resolve("imu", kin).expect("imu frame registered");
        let d = pose.translation - aux.rho_c;
        let a_point_w = aux.accel_com_world
            + aux.r_w_c * (aux.omega_dot_c.cross(&d) + aux.omega_c.cross(&aux.omega_c.cross(&d)));
        let r_w_imu = aux.r_w_c * pose.rotation;
        let dt = 1.0 / self.cfg.imu_rate;

        let walk = self.randn3();
        if self.bias_walk {
            self.accel_bias += walk * (self.cfg.sigma_accel_walk * dt.sqrt());
        }
        let specific = r_w_imu.transpose() * (a_point_w + Vector3::new(0.0, 0.0, self.gravity));
        let sigma_sample = self.cfg.sigma_accel / dt.sqrt();
        let accel = specific + self.accel_bias + self.randn3() * sigma_sample;
        let gyro = pose.rotation.transpose() * aux.omega_c + self.randn3() * self.cfg.sigma_gyro;
        let mag = r_w_imu.transpose() * Vector3::x() + self.randn3() * self.cfg.sigma_mag;
        StampedMeasurement::imu(
            t,
            ImuSample { accel, gyro, mag },
            [
                sigma_sample.max(f64::MIN_POSITIVE),
                self.cfg.sigma_gyro.max(f64::MIN_POSITIVE),
                self.cfg.sigma_mag.max(f64::MIN_POSITIVE),
            ],
        )
    }

    /// Samples the geodetic receiver at `t`: a horizontal position fix and a
    /// world-frame velocity fix, both delivered after the configured delay.
    pub fn sample_gps(
        &mut self,
        state: &RigidBodyState,
        kin: &Kinematics,
        alloc: &AllocationSet,
        t: f64,
    ) {
        let (p, v, _) = self.sensor_world("gps", state, kin, alloc);
        let noise = Vector2::new(self.randn(), self.randn()) * self.cfg.sigma_gps_pos;
        let ll = enu_to_gps(&(Vector2::new(p.x, p.y) + noise), &self.geo);
        let pos = StampedMeasurement::gps_pos(t, ll[0], ll[1], self.cfg.sigma_gps_pos);
        let vel =
            StampedMeasurement::gps_vel(t, v + self.randn3() * self.cfg.sigma_gps_vel, self.cfg.sigma_gps_vel);
        self.push(t + self.cfg.gps_delay, pos);
        self.push(t + self.cfg.gps_delay, vel);
    }

    /// Samples the visual-odometry unit at `t`: sensor-frame velocity of the
    /// mount point (including the lever-arm rate), delivered after its delay.
    pub fn sample_vio(
        &mut self,
        state: &RigidBodyState,
        kin: &Kinematics,
        alloc: &AllocationSet,
        t: f64,
    ) {
        let (_, v, r_w_s) = self.sensor_world("vio", state, kin, alloc);
        let v_sensor = r_w_s.transpose() * v + self.randn3() * self.cfg.sigma_vio_vel;
        let meas = StampedMeasurement::vio_vel(t, v_sensor, self.cfg.sigma_vio_vel);
        self.push(t + self.cfg.vio_delay, meas);
    }

    /// Samples the ranging sensor at `t`: slant range to the `z = 0` ground
    /// plane along the emission axis. No return is produced when the beam
    /// points near or above the horizon.
    pub fn sample_lidar(
        &mut self,
        state: &RigidBodyState,
        kin: &Kinematics,
        alloc: &AllocationSet,
        t: f64,
    ) {
        let (p, _, r_w_s) = self.sensor_world("lidar", state, kin, alloc);
        let n = self.randn();
        let emission = r_w_s * Vector3::x();
        if emission.z >= -0.05 {
            return;
        }
        let d = (-p.z / emission.z + n * self.cfg.sigma_lidar).max(0.0);
        let meas = StampedMeasurement::lidar(t, d, self.cfg.sigma_lidar);
        self.push(t + self.cfg.lidar_delay, meas);
    }

    /// Pops every queued measurement whose delivery time has passed, in
    /// delivery order.
    pub fn take_due(&mut self, t: f64) -> Vec<StampedMeasurement> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|d| d.deliver_at <= t) {
            out.push(self.queue.pop_front().expect("front checked").meas);
        }
        out
    }

    /// Number of measurements still in flight.
    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// How the control loop is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorMode {
    /// Controller sees the truth state directly.
    Perfect,
    /// Full pipeline: emulated sensors → estimation stack → controller.
    Filtered,
}

/// One knot of the scripted (piecewise-linear) joint trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointKnot {
    pub t: f64,
    pub q: JointConfig,
}

/// One knot of the piecewise-linear position/yaw reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub r: Vector3<f64>,
    pub yaw: f64,
}

/// Analytic circular reference: constant height, speed ramping linearly in
/// time from `speed_start` to `speed_end` over `ramp_laps` laps, then holding
/// `speed_end`. Desired yaw tracks the tangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleProfile {
    pub radius: f64,
    pub height: f64,
    pub speed_start: f64,
    pub speed_end: f64,
    pub ramp_laps: f64,
    pub hold_laps: f64,
}

impl CircleProfile {
    /// Duration of the speed ramp (s).
    pub fn ramp_time(&self) -> f64 {
        self.ramp_laps * std::f64::consts::TAU * self.radius
            / (0.5 * (self.speed_start + self.speed_end))
    }

    /// Natural scenario duration: ramp plus the hold laps (s).
    pub fn duration(&self) -> f64 {
        self.ramp_time() + self.hold_laps * std::f64::consts::TAU * self.radius / self.speed_end
    }

    /// Reference at time `t`. No acceleration feedforward is produced.
    pub fn setpoint_at(&self, t: f64) -> Setpoint {
        let t_ramp = self.ramp_time();
        let (speed, arc) = if t < t_ramp {
            let v = self.speed_start + (self.speed_end - self.speed_start) * t / t_ramp;
            (v, self.speed_start * t + 0.5 * (self.speed_end - self.speed_start) * t * t / t_ramp)
        } else {
            let arc_ramp = 0.5 * (self.speed_start + self.speed_end) * t_ramp;
            (self.speed_end, arc_ramp + self.speed_end * (t - t_ramp))
        };
        let theta = arc / self.radius;
        let (sin, cos) = theta.sin_cos();
        Setpoint {
            r_des: Vector3::new(self.radius * cos, self.radius * sin, self.height),
            v_des: Vector3::new(-speed * sin, speed * cos, 0.0),
            a_des: Vector3::zeros(),
            yaw_des: wrap_angle(theta + std::f64::consts::FRAC_PI_2),
        }
    }
}

/// A scripted closed-loop experiment: initial state, joint trajectory,
/// reference, disturbances, sensor mode, and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Total simulated time (s).
    pub duration: f64,
    /// Plant integration step (s).
    pub step: f64,
    /// Control (and inertial sampling) rate (Hz); its period must be an
    /// integer multiple of `step`.
    pub control_rate: f64,
    pub sensors: SensorMode,
    /// When set, the position proportional gains are zeroed and the loop
    /// tracks the velocity reference.
    pub velocity_mode: bool,
    /// Initial CoG position (m).
    pub start: Vector3<f64>,
    /// Initial yaw (rad); the vehicle starts level and at rest.
    pub start_yaw: f64,
    /// Joint trajectory knots (strictly increasing times; piecewise linear,
    /// clamped outside).
    pub joints: Vec<JointKnot>,
    /// Position/yaw reference knots (piecewise linear, clamped outside).
    /// Ignored when `circle` is set.
    pub waypoints: Vec<Waypoint>,
    /// Analytic circular reference, overriding `waypoints`.
    pub circle: Option<CircleProfile>,
    pub disturbance: Disturbance,
}

impl Scenario {
    /// A 10-second hold at `[0,0,1]` in the square form with perfect
    /// feedback; the base most built-ins modify.
    fn base(name: &str) -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        Self {
            name: name.to_string(),
            duration: 10.0,
            step: 1e-3,
            control_rate: 100.0,
            sensors: SensorMode::Perfect,
            velocity_mode: false,
            start: Vector3::new(0.0, 0.0, 1.0),
            start_yaw: 0.0,
            joints: vec![JointKnot { t: 0.0, q: JointConfig::new(h, h) }],
            waypoints: vec![Waypoint { t: 0.0, r: Vector3::new(0.0, 0.0, 1.0), yaw: 0.0 }],
            circle: None,
            disturbance: Disturbance::default(),
        }
    }

    /// The named built-in scenario, if it exists.
    ///
    /// * `hover` — hold `[0,0,1]` in the square form (10 s).
    /// * `deform` — hover while sweeping the joints through three forms (30 s).
    /// * `grasp` — attach a 1 kg payload at t=5, release at t=32 (55 s).
    /// * `kick` — a 20 N, 0.1 s lateral shove at t=5 (20 s).
    /// * `circle` — 8 m radius at 4 m height, ramping 0.5→3 m/s over three
    ///   laps plus a holding lap, flown on the full estimation stack (103 s).
    /// * `sheet` — windowed sinusoidal force/torque disturbance (30 s).
    pub fn builtin(name: &str) -> Option<Self> {
        let h = std::f64::consts::FRAC_PI_2;
        let q4 = std::f64::consts::FRAC_PI_4;
        match name {
            "hover" => Some(Self::base("hover")),
            "deform" => {
                let mut s = Self::base("deform");
                s.duration = 30.0;
                s.joints = vec![
                    JointKnot { t: 0.0, q: JointConfig::new(h, h) },
                    JointKnot { t: 5.0, q: JointConfig::new(h, h) },
                    JointKnot { t: 15.0, q: JointConfig::new(-q4, h) },
                    JointKnot { t: 25.0, q: JointConfig::new(q4, q4) },
                ];
                Some(s)
            }
            "grasp" => {
                let mut s = Self::base("grasp");
                s.duration = 55.0;
                s.disturbance.payload = Some(PayloadEvent {
                    mass: 1.0,
                    offset: Vector3::new(0.0, 0.0, -0.12),
                    attach: 5.0,
                    release: 32.0,
                });
                Some(s)
            }
            "kick" => {
                let mut s = Self::base("kick");
                s.duration = 20.0;
                s.disturbance.impulses = vec![ImpulseEvent {
                    time: 5.0,
                    duration: 0.1,
                    force: Vector3::new(0.0, 20.0, 0.0),
                    torque: Vector3::zeros(),
                }];
                Some(s)
            }
            "circle" => {
                let mut s = Self::base("circle");
                s.duration = 103.0;
                s.sensors = SensorMode::Filtered;
                s.start = Vector3::new(8.0, 0.0, 4.0);
                s.start_yaw = h;
                s.waypoints.clear();
                s.circle = Some(CircleProfile {
                    radius: 8.0,
                    height: 4.0,
                    speed_start: 0.5,
                    speed_end: 3.0,
                    ramp_laps: 3.0,
                    hold_laps: 1.0,
                });
                Some(s)
            }
            "sheet" => {
                let mut s = Self::base("sheet");
                s.duration = 30.0;
                s.disturbance.sine_tran = Some(SinePulse {
                    amplitude: Vector3::new(1.2, 0.0, 0.6),
                    frequency: 0.4,
                    t_start: 5.0,
                    t_end: 25.0,
                });
                s.disturbance.sine_rot = Some(SinePulse {
                    amplitude: Vector3::new(0.1, 0.1, 0.05),
                    frequency: 0.4,
                    t_start: 5.0,
                    t_end: 25.0,
                });
                Some(s)
            }
            _ => None,
        }
    }

    /// Names of the built-in scenarios.
    pub fn builtin_names() -> &'static [&'static str] {
        &["hover", "deform", "grasp", "kick", "circle", "sheet"]
    }

    /// Loads a scenario from a `key = value` file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses a scenario from `key = value` text. Repeatable keys: `joint`,
    /// `waypoint`, `impulse`.
    pub fn parse(text: &str) -> Result<Self> {
        use crate::config::KvFile;
        let kv = KvFile::parse(text)?;
        let mut s = Self::base("custom");
        s.joints.clear();
        s.waypoints.clear();
        let mut seen_single: Vec<String> = Vec::new();
        let mut single = |key: &str| -> Result<()> {
            if seen_single.iter().any(|s| s == key) {
                return Err(Error::Config(format!("key `{key}` given more than once")));
            }
            seen_single.push(key.to_string());
            Ok(())
        };
        for (key, value) in kv.entries() {
            let value = value.as_str();
            match key.as_str() {
                "name" => {
                    single("name")?;
                    s.name = value.to_string();
                }
                "duration" => {
                    single("duration")?;
                    s.duration = parse_f64(key, value)?;
                }
                "step" => {
                    single("step")?;
                    s.step = parse_f64(key, value)?;
                }
                "control_rate" => {
                    single("control_rate")?;
                    s.control_rate = parse_f64(key, value)?;
                }
                "sensors" => {
                    single("sensors")?;
                    s.sensors = match value {
                        "perfect" => SensorMode::Perfect,
                        "filtered" => SensorMode::Filtered,
                        other => {
                            return Err(Error::Config(format!(
                                "key `sensors`: expected `perfect` or `filtered`, got `{other}`"
                            )))
                        }
                    };
                }
                "velocity_mode" => {
                    single("velocity_mode")?;
                    s.velocity_mode = crate::config::parse_bool(key, value)?;
                }
                "start" => {
                    single("start")?;
                    let v = parse_array::<3>(key, value)?;
                    s.start = Vector3::from_column_slice(&v);
                }
                "start_yaw" => {
                    single("start_yaw")?;
                    s.start_yaw = parse_f64(key, value)?;
                }
                "joint" => {
                    let v = parse_array::<3>(key, value)?;
                    s.joints.push(JointKnot { t: v[0], q: JointConfig::new(v[1], v[2]) });
                }
                "waypoint" => {
                    let v = parse_array::<5>(key, value)?;
                    s.waypoints.push(Waypoint {
                        t: v[0],
                        r: Vector3::new(v[1], v[2], v[3]),
                        yaw: v[4],
                    });
                }
                "circle" => {
                    single("circle")?;
                    let v = parse_array::<6>(key, value)?;
                    s.circle = Some(CircleProfile {
                        radius: v[0],
                        height: v[1],
                        speed_start: v[2],
                        speed_end: v[3],
                        ramp_laps: v[4],
                        hold_laps: v[5],
                    });
                }
                "delta_tran" => {
                    single("delta_tran")?;
                    let v = parse_array::<3>(key, value)?;
                    s.disturbance.delta_tran = Vector3::from_column_slice(&v);
                }
                "delta_rot" => {
                    single("delta_rot")?;
                    let v = parse_array::<3>(key, value)?;
                    s.disturbance.delta_rot = Vector3::from_column_slice(&v);
                }
                "sine_tran" => {
                    single("sine_tran")?;
                    s.disturbance.sine_tran = Some(parse_sine(key, value)?);
                }
                "sine_rot" => {
                    single("sine_rot")?;
                    s.disturbance.sine_rot = Some(parse_sine(key, value)?);
                }
                "impulse" => {
                    let v = parse_array::<8>(key, value)?;
                    s.disturbance.impulses.push(ImpulseEvent {
                        time: v[0],
                        duration: v[1],
                        force: Vector3::new(v[2], v[3], v[4]),
                        torque: Vector3::new(v[5], v[6], v[7]),
                    });
                }
                "payload" => {
                    single("payload")?;
                    let v = parse_array::<6>(key, value)?;
                    s.disturbance.payload = Some(PayloadEvent {
                        mass: v[0],
                        offset: Vector3::new(v[1], v[2], v[3]),
                        attach: v[4],
                        release: v[5],
                    });
                }
                other => {
                    return Err(Error::Config(format!("unknown scenario key `{other}`")));
                }
            }
        }
        if s.joints.is_empty() {
            let h = std::f64::consts::FRAC_PI_2;
            s.joints.push(JointKnot { t: 0.0, q: JointConfig::new(h, h) });
        }
        if s.waypoints.is_empty() && s.circle.is_none() {
            s.waypoints.push(Waypoint { t: 0.0, r: s.start, yaw: s.start_yaw });
        }
        s.validate()?;
        Ok(s)
    }

    /// Serializes to the `key = value` format accepted by [`Scenario::parse`].
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "duration = {}", self.duration);
        let _ = writeln!(out, "step = {}", self.step);
        let _ = writeln!(out, "control_rate = {}", self.control_rate);
        let mode = match self.sensors {
            SensorMode::Perfect => "perfect",
            SensorMode::Filtered => "filtered",
        };
        let _ = writeln!(out, "sensors = {mode}");
        let _ = writeln!(out, "velocity_mode = {}", self.velocity_mode);
        let _ = writeln!(out, "start = {} {} {}", self.start.x, self.start.y, self.start.z);
        let _ = writeln!(out, "start_yaw = {}", self.start_yaw);
        for k in &self.joints {
            let _ = writeln!(out, "joint = {} {} {}", k.t, k.q.q1, k.q.q2);
        }
        for w in &self.waypoints {
            let _ = writeln!(out, "waypoint = {} {} {} {} {}", w.t, w.r.x, w.r.y, w.r.z, w.yaw);
        }
        if let Some(c) = &self.circle {
            let _ = writeln!(
                out,
                "circle = {} {} {} {} {} {}",
                c.radius, c.height, c.speed_start, c.speed_end, c.ramp_laps, c.hold_laps
            );
        }
        let d = &self.disturbance;
        if d.delta_tran != Vector3::zeros() {
            let _ = writeln!(
                out,
                "delta_tran = {} {} {}",
                d.delta_tran.x, d.delta_tran.y, d.delta_tran.z
            );
        }
        if d.delta_rot != Vector3::zeros() {
            let _ =
                writeln!(out, "delta_rot = {} {} {}", d.delta_rot.x, d.delta_rot.y, d.delta_rot.z);
        }
        if let Some(sp) = &d.sine_tran {
            let _ = writeln!(
                out,
                "sine_tran = {} {} {} {} {} {}",
                sp.amplitude.x, sp.amplitude.y, sp.amplitude.z, sp.frequency, sp.t_start, sp.t_end
            );
        }
        if let Some(sp) = &d.sine_rot {
            let _ = writeln!(
                out,
                "sine_rot = {} {} {} {} {} {}",
                sp.amplitude.x, sp.amplitude.y, sp.amplitude.z, sp.frequency, sp.t_start, sp.t_end
            );
        }
        for imp in &d.impulses {
            let _ = writeln!(
                out,
                "impulse = {} {} {} {} {} {} {} {}",
                imp.time,
                imp.duration,
                imp.force.x,
                imp.force.y,
                imp.force.z,
                imp.torque.x,
                imp.torque.y,
                imp.torque.z
            );
        }
        if let Some(p) = &d.payload {
            let _ = writeln!(
                out,
                "payload = {} {} {} {} {} {}",
                p.mass, p.offset.x, p.offset.y, p.offset.z, p.attach, p.release
            );
        }
        out
    }

    /// Checks timing, ordering, and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::ScenarioConfig("duration must be positive".into()));
        }
        if !(self.step > 0.0) || !(self.control_rate > 0.0) {
            return Err(Error::ScenarioConfig("step and control_rate must be positive".into()));
        }
        let ratio = 1.0 / (self.control_rate * self.step);
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::ScenarioConfig(
                "the control period must be an integer multiple of the plant step".into(),
            ));
        }
        if self.joints.is_empty() {
            return Err(Error::ScenarioConfig("at least one joint knot is required".into()));
        }
        if self.joints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::ScenarioConfig("joint knots must strictly increase in time".into()));
        }
        if self.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::ScenarioConfig("waypoints must strictly increase in time".into()));
        }
        if self.waypoints.is_empty() && self.circle.is_none() {
            return Err(Error::ScenarioConfig("a reference (waypoints or circle) is required".into()));
        }
        if let Some(c) = &self.circle {
            if !(c.radius > 0.0 && c.speed_start > 0.0 && c.speed_end > 0.0 && c.ramp_laps > 0.0) {
                return Err(Error::ScenarioConfig("circle parameters must be positive".into()));
            }
        }
        for s in [&self.disturbance.sine_tran, &self.disturbance.sine_rot].into_iter().flatten() {
            if !(s.frequency > 0.0) || !(s.t_end > s.t_start) {
                return Err(Error::ScenarioConfig(
                    "sinusoidal disturbances need positive frequency and a nonempty window".into(),
                ));
            }
        }
        for imp in &self.disturbance.impulses {
            if !(imp.duration >= 0.0) {
                return Err(Error::ScenarioConfig("impulse durations must be nonnegative".into()));
            }
        }
        if let Some(p) = &self.disturbance.payload {
            if !(p.mass > 0.0) || !(p.release > p.attach) {
                return Err(Error::ScenarioConfig(
                    "payload needs positive mass and release after attach".into(),
                ));
            }
        }
        Ok(())
    }

    /// Joint command at `t` (piecewise linear, clamped to the end knots).
    pub fn joints_at(&self, t: f64) -> JointConfig {
        piecewise(&self.joints, t, |k| k.t, |a, b, s| {
            JointConfig::new(a.q.q1 + (b.q.q1 - a.q.q1) * s, a.q.q2 + (b.q.q2 - a.q.q2) * s)
        })
        .unwrap_or_else(|| self.joints.last().expect("joints validated nonempty").q)
    }

    /// Reference setpoint at `t`.
    pub fn setpoint_at(&self, t: f64) -> Setpoint {
        if let Some(c) = &self.circle {
            return c.setpoint_at(t);
        }
        let wps = &self.waypoints;
        if t <= wps[0].t {
            return Setpoint::hold(wps[0].r, wps[0].yaw);
        }
        if t >= wps[wps.len() - 1].t {
            let last = &wps[wps.len() - 1];
            return Setpoint::hold(last.r, last.yaw);
        }
        let i = wps.partition_point(|w| w.t <= t) - 1;
        let (a, b) = (&wps[i], &wps[i + 1]);
        let dt = b.t - a.t;
        let s = (t - a.t) / dt;
        Setpoint {
            r_des: a.r + (b.r - a.r) * s,
            v_des: (b.r - a.r) / dt,
            a_des: Vector3::zeros(),
            yaw_des: wrap_angle(a.yaw + wrap_angle(b.yaw - a.yaw) * s),
        }
    }

    /// Initial truth state.
    pub fn initial_state(&self) -> RigidBodyState {
        RigidBodyState {
            r: self.start,
            v: Vector3::zeros(),
            attitude: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.start_yaw),
            omega: Vector3::zeros(),
            q_joints: self.joints_at(0.0),
            t: 0.0,
        }
    }
}

/// Piecewise-linear interpolation over knots sorted by time; `None` before
/// clamping can apply (empty list).
fn piecewise<K, F, G, T>(knots: &[K], t: f64, time: F, lerp: G) -> Option<T>
where
    F: Fn(&K) -> f64,
    G: Fn(&K, &K, f64) -> T,
{
    if knots.is_empty() {
        return None;
    }
    if t <= time(&knots[0]) {
        return Some(lerp(&knots[0], &knots[0], 0.0));
    }
    if t >= time(&knots[knots.len() - 1]) {
        let last = &knots[knots.len() - 1];
        return Some(lerp(last, last, 0.0));
    }
    let i = knots.partition_point(|k| time(k) <= t) - 1;
    let (a, b) = (&knots[i], &knots[i + 1]);
    let s = (t - time(a)) / (time(b) - time(a));
    Some(lerp(a, b, s))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    crate::config::parse_f64(key, value)
}

fn parse_array<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    crate::config::parse_array::<N>(key, value)
}

fn parse_sine(key: &str, value: &str) -> Result<SinePulse> {
    let v = parse_array::<6>(key, value)?;
    Ok(SinePulse {
        amplitude: Vector3::new(v[0], v[1], v[2]),
        frequency: v[3],
        t_start: v[4],
        t_end: v[5],
    })
}

// ---------------------------------------------------------------------------
// Closed-loop runner
// ---------------------------------------------------------------------------

/// Extra knobs for a run that are not part of the scenario script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Seed of the sensor noise stream.
    pub seed: u64,
    /// Constant accelerometer bias injected into the truth IMU.
    pub accel_bias: Vector3<f64>,
    /// Let the injected bias random-walk (off by default so bias-estimation
    /// checks compare against a constant).
    pub bias_walk: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, accel_bias: Vector3::zeros(), bias_walk: false }
    }
}

/// One logged control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub truth_r: [f64; 3],
    pub truth_v: [f64; 3],
    pub truth_rpy: [f64; 3],
    pub est_r: [f64; 3],
    pub est_v: [f64; 3],
    /// Reference minus truth position (m).
    pub e_r: [f64; 3],
    /// Reference minus truth yaw, wrapped (rad).
    pub e_yaw: f64,
    pub u: [f64; 4],
    /// Bit `i` set when rotor `i+1` hit a thrust bound this tick.
    pub sat_mask: u8,
}

/// Aggregate statistics of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration: f64,
    pub rows: usize,
    /// Max ‖e_r‖ over the run (m).
    pub max_pos_error: f64,
    /// Max horizontal ‖e_r‖ (m).
    pub max_horiz_error: f64,
    /// Max |e_z| (m).
    pub max_vert_error: f64,
    /// ‖e_r‖ at the final tick (m).
    pub final_pos_error: f64,
    /// Max |e_yaw| (rad).
    pub max_yaw_error: f64,
    /// Fraction of control ticks with at least one rotor at a thrust bound.
    pub saturation_fraction: f64,
    /// Measurements dropped for predating the estimation buffer.
    pub stale_measurements: u64,
    /// RMS distance between estimated and truth position (m); zero with
    /// perfect feedback.
    pub estimate_rms_error: f64,
    /// Final accelerometer bias estimate (filtered runs only).
    pub accel_bias_estimate: Option<[f64; 3]>,
}

/// Full output of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
}

impl RunLog {
    /// CSV header matching [`RunLog::write_csv`].
    pub const CSV_HEADER: &'static str = "t,x,y,z,vx,vy,vz,roll,pitch,yaw,\
x_est,y_est,z_est,vx_est,vy_est,vz_est,err_x,err_y,err_z,err_yaw,u1,u2,u3,u4,sat_mask";

    /// Writes the per-tick log as CSV. Floats are written with shortest
    /// round-trip precision, so a parsed copy reproduces the run bit-exactly.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            write!(w, "{}", r.t)?;
            for v in r
                .truth_r
                .iter()
                .chain(&r.truth_v)
                .chain(&r.truth_rpy)
                .chain(&r.est_r)
                .chain(&r.est_v)
                .chain(&r.e_r)
                .chain(std::iter::once(&r.e_yaw))
                .chain(&r.u)
            {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", r.sat_mask)?;
        }
        Ok(())
    }

    /// The CSV log as a string.
    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    /// Max ‖e_r‖ over rows with `t0 <= t <= t1`.
    pub fn max_pos_error_between(&self, t0: f64, t1: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.t >= t0 && r.t <= t1)
            .map(|r| Vector3::from_column_slice(&r.e_r).norm())
            .fold(0.0, f64::max)
    }
}

struct EstimationLoop {
    emulator: SensorEmulator,
    estimator: Estimator,
    gps_every: usize,
    vio_every: usize,
    lidar_every: usize,
    imu_every: usize,
}

fn cadence(rate: f64, step: f64, what: &str) -> Result<usize> {
    let ratio = 1.0 / (rate * step);
    if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
        return Err(Error::ScenarioConfig(format!(
            "{what} period must be an integer multiple of the plant step"
        )));
    }
    Ok(ratio.round() as usize)
}

/// World pose of the inertial unit derived from the truth `{CoG}` state.
fn imu_truth(
    state: &RigidBodyState,
    kin: &Kinematics,
    alloc: &AllocationSet,
    registry: &FrameRegistry,
) -> Result<(Vector3<f64>, Vector3<f64>, Matrix3<f64>)> {
    let pose = registry.resolve("imu", kin)?;
    let r_w_cog = state.rotation();
    let r_w_c = r_w_cog * alloc.r_cog_c;
    let arm = r_w_c * pose.translation;
    let omega_w = r_w_cog * state.omega;
    Ok((state.r + arm, state.v + omega_w.cross(&arm), r_w_c * pose.rotation))
}

/// Runs a scenario closed-loop and returns the log.
///
/// The plant integrates at `scenario.step`; the controller (and, in filtered
/// mode, the inertial pipeline) runs at `scenario.control_rate` with the
/// inertial sample processed before the control law; slower sensors fire on
/// their own cadence and arrive after their configured delays.
///
/// # Errors
/// Configuration errors up front; [`Error::NonFiniteState`] (with the
/// divergence time) if the plant diverges; controller/estimator errors as
/// they occur.
pub fn run_scenario(
    spec: &RobotSpec,
    control: &ControlConfig,
    est_cfg: &EstimatorConfig,
    scenario: &Scenario,
    opts: &RunOptions,
) -> Result<RunLog> {
    scenario.validate()?;
    let dt = scenario.step;
    let ctrl_every = cadence(scenario.control_rate, dt, "control")?;
    let ctrl_dt = dt * ctrl_every as f64;
    let n_steps = (scenario.duration / dt).round() as usize;

    let mut ctrl_cfg = control.clone();
    if scenario.velocity_mode {
        ctrl_cfg.kp = [0.0; 3];
    }
    let mut controller = Controller::new(spec.clone(), ctrl_cfg);

    let mut state = scenario.initial_state();
    let mut u = allocation(spec, &state.q_joints)?.hover_thrust;

    let mut est_loop = match scenario.sensors {
        SensorMode::Perfect => None,
        SensorMode::Filtered => {
            let emulator = SensorEmulator::new(
                spec,
                est_cfg,
                SIM_GEO_REFERENCE,
                opts.seed,
                opts.accel_bias,
                opts.bias_walk,
            )?;
            let mut estimator = Estimator::new(spec, est_cfg)?;
            estimator.set_reference(SIM_GEO_REFERENCE);
            let kin = forward_kinematics(spec, &state.q_joints);
            let alloc = allocation(spec, &state.q_joints)?;
            let (p_imu, v_imu, r_w_imu) = imu_truth(&state, &kin, &alloc, estimator.registry())?;
            estimator.initialize(0.0, p_imu, v_imu, &r_w_imu, None);
            Some(EstimationLoop {
                emulator,
                estimator,
                gps_every: cadence(est_cfg.gps_rate, dt, "gps")?,
                vio_every: cadence(est_cfg.vio_rate, dt, "vio")?,
                lidar_every: cadence(est_cfg.lidar_rate, dt, "lidar")?,
                imu_every: cadence(est_cfg.imu_rate, dt, "imu")?,
            })
        }
    };

    let mut rows = Vec::with_capacity(n_steps / ctrl_every + 1);
    let mut sat_ticks = 0usize;
    let mut est_sq_sum = 0.0;

    for k in 0..n_steps {
        let t = k as f64 * dt;
        let q = state.q_joints;

        let mut estimate: Option<RigidBodyState> = None;
        if let Some(el) = &mut est_loop {
            let samples_due = k % el.gps_every == 0
                || k % el.vio_every == 0
                || k % el.lidar_every == 0
                || k % el.imu_every == 0;
            if samples_due {
                let kin = forward_kinematics(spec, &q);
                let alloc = allocation(spec, &q)?;
                if k % el.gps_every == 0 {
                    el.emulator.sample_gps(&state, &kin, &alloc, t);
                }
                if k % el.vio_every == 0 {
                    el.emulator.sample_vio(&state, &kin, &alloc, t);
                }
                if k % el.lidar_every == 0 {
                    el.emulator.sample_lidar(&state, &kin, &alloc, t);
                }
                if k % el.imu_every == 0 {
                    let aux = plant_accels(spec, &state, &u, &scenario.disturbance)?;
                    let imu = el.emulator.sample_imu(&kin, &aux, t);
                    el.estimator.process(&imu, &q)?;
                    for meas in el.emulator.take_due(t) {
                        match el.estimator.process(&meas, &q) {
                            // Stale drops are counted by the filter itself.
                            Err(Error::StaleMeasurement { .. }) => {}
                            other => other?,
                        }
                    }
                }
            }
            if k % ctrl_every == 0 {
                estimate = Some(el.estimator.cog_state(&q)?);
            }
        }

        if k % ctrl_every == 0 {
            let fb_state = estimate.as_ref().unwrap_or(&state);
            let fb = Feedback {
                r: fb_state.r,
                v: fb_state.v,
                rotation: fb_state.rotation(),
                omega: fb_state.omega,
            };
            let sp = scenario.setpoint_at(t);
            let out = controller.step(&q, &sp, &fb, ctrl_dt)?;
            u = out.u_des;
            let sat = out.saturated;
            if sat.iter().any(|&s| s) {
                sat_ticks += 1;
            }

            let rpy = rpy_of(&state.rotation());
            let e_r = sp.r_des - state.r;
            let est_err = fb_state.r - state.r;
            est_sq_sum += est_err.norm_squared();
            rows.push(RunRow {
                t,
                truth_r: state.r.into(),
                truth_v: state.v.into(),
                truth_rpy: rpy.into(),
                est_r: fb_state.r.into(),
                est_v: fb_state.v.into(),
                e_r: e_r.into(),
                e_yaw: wrap_angle(sp.yaw_des - rpy.z),
                u: u.into(),
                sat_mask: sat
                    .iter()
                    .enumerate()
                    .fold(0u8, |m, (i, &s)| if s { m | (1 << i) } else { m }),
            });
        }

        state = plant_step(spec, &state, &u, &scenario.disturbance, dt)?;
        state.q_joints = scenario.joints_at(state.t);
    }

    let ticks = rows.len().max(1);
    let mut max_pos: f64 = 0.0;
    let mut max_horiz: f64 = 0.0;
    let mut max_vert: f64 = 0.0;
    let mut max_yaw: f64 = 0.0;
    for r in &rows {
        let e = Vector3::from_column_slice(&r.e_r);
        max_pos = max_pos.max(e.norm());
        max_horiz = max_horiz.max(e.xy().norm());
        max_vert = max_vert.max(e.z.abs());
        max_yaw = max_yaw.max(r.e_yaw.abs());
    }
    let summary = RunSummary {
        scenario: scenario.name.clone(),
        seed: opts.seed,
        duration: scenario.duration,
        rows: rows.len(),
        max_pos_error: max_pos,
        max_horiz_error: max_horiz,
        max_vert_error: max_vert,
        final_pos_error: rows
            .last()
            .map(|r| Vector3::from_column_slice(&r.e_r).norm())
            .unwrap_or(0.0),
        max_yaw_error: max_yaw,
        saturation_fraction: sat_ticks as f64 / ticks as f64,
        stale_measurements: est_loop.as_ref().map(|e| e.estimator.stale_count()).unwrap_or(0),
        estimate_rms_error: (est_sq_sum / ticks as f64).sqrt(),
        accel_bias_estimate: est_loop
            .as_ref()
            .and_then(|e| e.estimator.state())
            .map(|s| s.b_acc.into()),
    };
    Ok(RunLog { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{to_imu_frame, ImuObservation, MeasurementValue};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn spec() -> RobotSpec {
        RobotSpec::default()
    }

    fn square() -> JointConfig {
        JointConfig::new(FRAC_PI_2, FRAC_PI_2)
    }

    /// Steps the plant `n` times with fixed thrusts and quasi-static joints.
    fn roll(
        spec: &RobotSpec,
        state: &RigidBodyState,
        u: &Vector4<f64>,
        dist: &Disturbance,
        dt: f64,
        n: usize,
    ) -> RigidBodyState {
        let mut s = state.clone();
        for _ in 0..n {
            s = plant_step(spec, &s, u, dist, dt).expect("plant step");
        }
        s
    }

    #[test]
    fn free_fall_matches_the_closed_form() {
        let spec = spec();
        let state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 100.0), square());
        let dist = Disturbance::default();
        let end = roll(&spec, &state, &Vector4::zeros(), &dist, 1e-3, 2000);
        let t = 2.0;
        assert_relative_eq!(end.t, t, epsilon = 1e-12);
        assert_relative_eq!(end.v.z, -spec.gravity * t, epsilon = 1e-9);
        assert_relative_eq!(end.r.z, 100.0 - 0.5 * spec.gravity * t * t, epsilon = 1e-9);
        assert!(end.v.xy().norm() < 1e-12 && end.omega.norm() < 1e-12);
    }

    #[test]
    fn hover_equilibrium_is_a_fixed_point() {
        let spec = spec();
        let q = JointConfig::new(FRAC_PI_4, FRAC_PI_4);
        let u = hover_equilibrium(&spec, &q).unwrap();
        let state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0), q);
        let end = roll(&spec, &state, &u, &Disturbance::default(), 1e-3, 1000);
        assert!((end.r - state.r).norm() < 1e-9, "drifted {}", (end.r - state.r).norm());
        assert!(end.v.norm() < 1e-9);
        assert!(end.omega.norm() < 1e-9);
        assert!(end.attitude.angle_to(&state.attitude) < 1e-9);
    }

    #[test]
    fn angular_momentum_is_conserved_in_a_free_tumble() {
        let spec = spec();
        let q = JointConfig::new(FRAC_PI_4, FRAC_PI_2);
        let geom = plant_geometry(&spec, &q, None).unwrap();
        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 500.0), q);
        state.omega = geom.alloc.r_cog_c * Vector3::new(0.7, -0.4, 1.1);
        let momentum = |s: &RigidBodyState| {
            let w_c = geom.alloc.r_cog_c.transpose() * s.omega;
            s.rotation() * geom.alloc.r_cog_c * (geom.inertia_com_c * w_c)
        };
        let l0 = momentum(&state);
        let end = roll(&spec, &state, &Vector4::zeros(), &Disturbance::default(), 1e-3, 10_000);
        let l1 = momentum(&end);
        assert!(
            (l1 - l0).norm() / l0.norm() < 1e-6,
            "momentum drifted by {:e}",
            (l1 - l0).norm() / l0.norm()
        );
    }

    #[test]
    fn attitude_stays_orthonormal_through_a_long_tumble() {
        let spec = spec();
        let q = JointConfig::new(FRAC_PI_4, FRAC_PI_2);
        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 500.0), q);
        state.omega = Vector3::new(0.9, -0.6, 1.3);
        let end = roll(&spec, &state, &Vector4::zeros(), &Disturbance::default(), 1e-3, 10_000);
        let r = end.rotation();
        let defect = (r * r.transpose() - Matrix3::identity()).norm();
        assert!(defect < 1e-12, "orthonormality defect {defect:e}");
    }

    #[test]
    fn payload_shifts_the_weight_without_torque_at_the_square_form() {
        let spec = spec();
        let u = hover_equilibrium(&spec, &square()).unwrap();
        let mut dist = Disturbance::default();
        dist.payload = Some(PayloadEvent {
            mass: 1.0,
            offset: Vector3::new(0.0, 0.0, -0.12),
            attach: 0.0,
            release: 10.0,
        });
        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0), square());
        state.t = 1.0;
        let aux = plant_accels(&spec, &state, &u, &dist).unwrap();
        let m_tot = spec.mass_total() + 1.0;
        assert_relative_eq!(
            aux.accel_com_world.z,
            -spec.gravity * 1.0 / m_tot,
            epsilon = 1e-9
        );
        assert!(aux.accel_com_world.xy().norm() < 1e-9);
        assert!(aux.omega_dot_c.norm() < 1e-9, "residual torque {:?}", aux.omega_dot_c);
        // Outside the carry window the payload has no effect.
        state.t = 20.0;
        let aux = plant_accels(&spec, &state, &u, &dist).unwrap();
        assert!(aux.accel_com_world.norm() < 1e-9);
    }

    #[test]
    fn an_impulse_transfers_its_momentum_integral() {
        let spec = spec();
        let u = hover_equilibrium(&spec, &square()).unwrap();
        let mut dist = Disturbance::default();
        dist.impulses.push(ImpulseEvent {
            time: 0.05,
            duration: 0.1,
            force: Vector3::new(0.0, 20.0, 0.0),
            torque: Vector3::zeros(),
        });
        let state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0), square());
        let end = roll(&spec, &state, &u, &dist, 1e-3, 250);
        let expected = 20.0 * 0.1 / spec.mass_total();
        assert_relative_eq!(end.v.y, expected, max_relative = 0.01);
        assert!(end.v.x.abs() < 1e-9 && end.omega.norm() < 1e-9);
    }

    #[test]
    fn plant_stepping_is_a_pure_function() {
        let spec = spec();
        let q = JointConfig::new(0.3, -0.7);
        let mut state = RigidBodyState::at_rest(Vector3::new(1.0, -2.0, 3.0), q);
        state.v = Vector3::new(0.4, 0.1, -0.2);
        state.omega = Vector3::new(0.2, -0.1, 0.5);
        let u = Vector4::new(3.0, 5.0, 4.0, 6.0);
        let dist = Disturbance::default();
        let a = plant_step(&spec, &state, &u, &dist, 1e-3).unwrap();
        let b = plant_step(&spec, &state, &u, &dist, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn body_rates_match_euler_rates_near_hover() {
        let spec = spec();
        let u = hover_equilibrium(&spec, &square()).unwrap();
        let omega = Vector3::new(0.01, -0.02, 0.015);
        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0), square());
        state.omega = omega;
        let end = roll(&spec, &state, &u, &Disturbance::default(), 1e-3, 100);
        let drpy = rpy_of(&end.rotation());
        let expected = omega * 0.1;
        assert!(
            (drpy - expected).norm() < 0.01 * expected.norm(),
            "rpy change {drpy:?} vs {expected:?}"
        );
    }

    fn zero_noise_config() -> EstimatorConfig {
        let mut cfg = EstimatorConfig::default();
        cfg.sigma_accel = 0.0;
        cfg.sigma_accel_walk = 0.0;
        cfg.sigma_gyro = 0.0;
        cfg.sigma_mag = 0.0;
        cfg.sigma_gps_pos = 0.0;
        cfg.sigma_gps_vel = 0.0;
        cfg.sigma_vio_vel = 0.0;
        cfg.sigma_lidar = 0.0;
        cfg
    }

    /// With zero noise, every emulated measurement converts back (through the
    /// estimation stack's frame converter) to the exact truth state of the
    /// inertial unit's origin — the emulator and the converter agree on the
    /// same rigid-body model.
    #[test]
    fn emulator_and_converter_agree_on_the_rigid_body() {
        let spec = spec();
        let cfg = zero_noise_config();
        let q = JointConfig::new(0.9, 0.4);
        let kin = forward_kinematics(&spec, &q);
        let alloc = allocation(&spec, &q).unwrap();
        let registry = FrameRegistry::from_config(&cfg).unwrap();

        let mut state = RigidBodyState::at_rest(Vector3::new(1.0, 2.0, 5.0), q);
        state.attitude = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.4)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.05);
        state.v = Vector3::new(0.1, -0.2, 0.05);
        state.omega = Vector3::new(0.01, 0.02, -0.03);

        let (p_imu, v_imu, r_w_imu) = imu_truth(&state, &kin, &alloc, &registry).unwrap();
        let imu_pose = registry.resolve("imu", &kin).unwrap();
        let omega_imu =
            imu_pose.rotation.transpose() * (alloc.r_cog_c.transpose() * state.omega);

        let mut emu =
            SensorEmulator::new(&spec, &cfg, SIM_GEO_REFERENCE, 1, Vector3::zeros(), false)
                .unwrap();
        emu.sample_gps(&state, &kin, &alloc, 0.0);
        emu.sample_vio(&state, &kin, &alloc, 0.0);
        emu.sample_lidar(&state, &kin, &alloc, 0.0);
        let delivered = emu.take_due(1.0);
        assert_eq!(delivered.len(), 4, "lidar, vio, gps pos, gps vel");

        for meas in &delivered {
            let obs = to_imu_frame(
                meas,
                &registry,
                &kin,
                &r_w_imu,
                &omega_imu,
                Some(&SIM_GEO_REFERENCE),
            )
            .unwrap();
            assert_eq!(obs.stamp, 0.0);
            match obs.value {
                ImuObservation::PosXy(p) => {
                    assert_relative_eq!(p.x, p_imu.x, epsilon = 2e-8);
                    assert_relative_eq!(p.y, p_imu.y, epsilon = 2e-8);
                }
                ImuObservation::Height(h) => assert_relative_eq!(h, p_imu.z, epsilon = 1e-9),
                ImuObservation::Velocity(v) => {
                    assert!((v - v_imu).norm() < 1e-9, "velocity {v:?} vs {v_imu:?}");
                }
            }
        }
    }

    #[test]
    fn static_inertial_samples_read_gravity_bias_and_the_field() {
        let spec = spec();
        let cfg = zero_noise_config();
        let q = square();
        let kin = forward_kinematics(&spec, &q);
        let alloc = allocation(&spec, &q).unwrap();
        let registry = FrameRegistry::from_config(&cfg).unwrap();
        let u = hover_equilibrium(&spec, &q).unwrap();

        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0), q);
        state.attitude = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3);

        let bias = Vector3::new(0.05, -0.03, 0.02);
        let mut emu = SensorEmulator::new(&spec, &cfg, SIM_GEO_REFERENCE, 1, bias, false).unwrap();
        let aux = plant_accels(&spec, &state, &u, &Disturbance::default()).unwrap();
        let meas = emu.sample_imu(&kin, &aux, 0.0);
        let MeasurementValue::Inertial(sample) = &meas.value else {
            panic!("inertial sample expected");
        };

        let (_, _, r_w_imu) = imu_truth(&state, &kin, &alloc, &registry).unwrap();
        let expected_accel =
            r_w_imu.transpose() * Vector3::new(0.0, 0.0, spec.gravity) + bias;
        assert!((sample.accel - expected_accel).norm() < 1e-9);
        assert!(sample.gyro.norm() < 1e-12);
        let expected_mag = r_w_imu.transpose() * Vector3::x();
        assert!((sample.mag - expected_mag).norm() < 1e-12);
    }

    #[test]
    fn emulator_noise_statistics_match_the_configuration() {
        let spec = spec();
        let cfg = EstimatorConfig::default();
        let q = square();
        let kin = forward_kinematics(&spec, &q);
        let alloc = allocation(&spec, &q).unwrap();
        let state = RigidBodyState::at_rest(Vector3::new(3.0, -2.0, 5.0), q);
        let registry = FrameRegistry::from_config(&cfg).unwrap();
        let imu_pose = registry.resolve("imu", &kin).unwrap();
        let truth = state.r + state.rotation() * alloc.r_cog_c * imu_pose.translation;

        let mut emu =
            SensorEmulator::new(&spec, &cfg, SIM_GEO_REFERENCE, 42, Vector3::zeros(), false)
                .unwrap();
        let n = 10_000;
        let mut north = Vec::with_capacity(n);
        let mut east = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64;
            emu.sample_gps(&state, &kin, &alloc, t);
            for meas in emu.take_due(t + 1.0) {
                if let MeasurementValue::LatLon(ll) = meas.value {
                    let enu = gps_to_enu_pair(&ll);
                    north.push(enu.x - truth.x);
                    east.push(enu.y - truth.y);
                }
            }
        }
        assert_eq!(north.len(), n);
        let std = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64)
                .sqrt()
        };
        assert_relative_eq!(std(&north), cfg.sigma_gps_pos, max_relative = 0.05);
        assert_relative_eq!(std(&east), cfg.sigma_gps_pos, max_relative = 0.05);
    }

    fn gps_to_enu_pair(ll: &[f64; 2]) -> Vector2<f64> {
        crate::estimation::gps_to_enu(ll, Some(&SIM_GEO_REFERENCE)).unwrap()
    }

    #[test]
    fn deliveries_respect_delays_and_arrive_in_order() {
        let spec = spec();
        let cfg = EstimatorConfig::default();
        let q = square();
        let kin = forward_kinematics(&spec, &q);
        let alloc = allocation(&spec, &q).unwrap();
        let state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 5.0), q);
        let mut emu =
            SensorEmulator::new(&spec, &cfg, SIM_GEO_REFERENCE, 3, Vector3::zeros(), false)
                .unwrap();
        emu.sample_gps(&state, &kin, &alloc, 0.0);
        emu.sample_vio(&state, &kin, &alloc, 0.0);
        emu.sample_lidar(&state, &kin, &alloc, 0.0);
        assert_eq!(emu.in_flight(), 4);
        assert!(emu.take_due(0.015).is_empty());
        let first = emu.take_due(0.021);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].kind, crate::estimation::MeasurementKind::LidarHeight);
        let second = emu.take_due(0.051);
        assert_eq!(second.len(), 1);
        assert_eq!(second[0].kind, crate::estimation::MeasurementKind::VioVel);
        let third = emu.take_due(0.31);
        assert_eq!(third.len(), 2);
        assert_eq!(third[0].kind, crate::estimation::MeasurementKind::GpsPos);
        assert_eq!(third[1].kind, crate::estimation::MeasurementKind::GpsVel);
        for m in first.iter().chain(&second).chain(&third) {
            assert_eq!(m.stamp, 0.0, "stamps carry acquisition time, not delivery time");
        }
    }

    #[test]
    fn builtin_scenarios_validate_and_round_trip() {
        for name in Scenario::builtin_names() {
            let s = Scenario::builtin(name).expect("builtin exists");
            s.validate().expect("builtin validates");
            let parsed = Scenario::parse(&s.to_text()).expect("round-trip parses");
            assert_eq!(parsed, s, "{name} round-trips");
        }
        assert!(Scenario::builtin("no-such").is_none());
    }

    #[test]
    fn scenario_parsing_rejects_malformed_input() {
        assert!(Scenario::parse("nonsense = 1").is_err());
        assert!(Scenario::parse("duration = 5\nduration = 6").is_err());
        assert!(Scenario::parse("sensors = maybe").is_err());
        assert!(Scenario::parse("waypoint = 0 1 2").is_err());
        assert!(Scenario::parse("duration = -3").is_err());
        assert!(Scenario::parse("step = 0.001\ncontrol_rate = 300").is_err());
        assert!(Scenario::parse("joint = 5 0 0\njoint = 5 1 1").is_err());
        assert!(Scenario::parse("payload = 1 0 0 0 9 4").is_err());
    }

    #[test]
    fn interpolation_is_piecewise_linear_with_clamped_ends() {
        let text = "name = interp\nduration = 20\n\
                    joint = 0 1.5707963267948966 1.5707963267948966\n\
                    joint = 10 0.7853981633974483 1.5707963267948966\n\
                    waypoint = 0 0 0 1 3.0\n\
                    waypoint = 10 1 2 2 -3.0\n";
        let s = Scenario::parse(text).unwrap();
        let mid = s.joints_at(5.0);
        assert_relative_eq!(mid.q1, 3.0 * std::f64::consts::PI / 8.0, epsilon = 1e-12);
        assert_relative_eq!(mid.q2, FRAC_PI_2, epsilon = 1e-12);
        let clamped = s.joints_at(15.0);
        assert_relative_eq!(clamped.q1, FRAC_PI_4, epsilon = 1e-12);

        let sp = s.setpoint_at(2.5);
        assert!((sp.r_des - Vector3::new(0.25, 0.5, 1.25)).norm() < 1e-12);
        assert!((sp.v_des - Vector3::new(0.1, 0.2, 0.1)).norm() < 1e-12);
        let expected_yaw = 3.0 + 0.25 * wrap_angle(-6.0);
        assert_relative_eq!(sp.yaw_des, wrap_angle(expected_yaw), epsilon = 1e-12);

        let before = s.setpoint_at(-1.0);
        assert!((before.r_des - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(before.v_des.norm() < 1e-12);
        let after = s.setpoint_at(11.0);
        assert!((after.r_des - Vector3::new(1.0, 2.0, 2.0)).norm() < 1e-12);
        assert!(after.v_des.norm() < 1e-12);
    }

    #[test]
    fn circle_reference_ramps_smoothly() {
        let c = Scenario::builtin("circle").unwrap().circle.unwrap();
        let t_ramp = c.ramp_time();

        let sp0 = c.setpoint_at(0.0);
        assert!((sp0.r_des - Vector3::new(8.0, 0.0, 4.0)).norm() < 1e-12);
        assert_relative_eq!(sp0.v_des.norm(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(sp0.yaw_des, FRAC_PI_2, epsilon = 1e-12);

        // Three full laps fit exactly into the ramp, so the ramp ends back at
        // the start point at full speed.
        let sp_end = c.setpoint_at(t_ramp);
        assert!((sp_end.r_des - Vector3::new(8.0, 0.0, 4.0)).norm() < 1e-9);
        assert_relative_eq!(sp_end.v_des.norm(), 3.0, epsilon = 1e-9);

        for k in 0..50 {
            let t = t_ramp * k as f64 / 49.0;
            let sp = c.setpoint_at(t);
            assert_relative_eq!(sp.r_des.xy().norm(), 8.0, epsilon = 1e-9);
            assert_relative_eq!(sp.r_des.z, 4.0, epsilon = 1e-12);
            assert!(sp.r_des.xy().dot(&sp.v_des.xy()).abs() < 1e-9, "velocity is tangent");
        }

        let before = c.setpoint_at(t_ramp - 1e-6);
        let after = c.setpoint_at(t_ramp + 1e-6);
        assert!((before.r_des - after.r_des).norm() < 1e-4);
        assert!((before.v_des - after.v_des).norm() < 1e-4);
    }

    #[test]
    fn hover_scenario_holds_the_reference() {
        let spec = spec();
        let scenario = Scenario::builtin("hover").unwrap();
        let log = run_scenario(
            &spec,
            &ControlConfig::default(),
            &EstimatorConfig::default(),
            &scenario,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(log.summary.rows, 1000);
        assert!(
            log.summary.final_pos_error < 1e-3,
            "final error {}",
            log.summary.final_pos_error
        );
        assert!(log.summary.max_pos_error < 1e-3, "never leaves the fixed point");
        assert!(log.summary.max_yaw_error < 1e-3);
        assert_eq!(log.summary.saturation_fraction, 0.0);
        assert_eq!(log.summary.stale_measurements, 0);
        assert_eq!(log.summary.estimate_rms_error, 0.0, "perfect feedback logs truth");
    }

    /// Settling from a half-meter offset: the composite-error integral
    /// carries an intrinsic slow washout mode (pole near `−c·kI/(kP+kI)`),
    /// so convergence past the decimeter level takes tens of seconds; the
    /// transient itself must stay well-behaved.
    #[test]
    fn offset_start_converges_through_the_slow_washout() {
        let spec = spec();
        let mut scenario = Scenario::builtin("hover").unwrap();
        scenario.start = Vector3::new(0.2, -0.2, 0.5);
        let log = run_scenario(
            &spec,
            &ControlConfig::default(),
            &EstimatorConfig::default(),
            &scenario,
            &RunOptions::default(),
        )
        .unwrap();
        let start_err = (scenario.start - Vector3::new(0.0, 0.0, 1.0)).norm();
        assert!(log.summary.max_pos_error < 1.2 * start_err, "no large overshoot");
        assert!(log.summary.final_pos_error < 0.12, "got {}", log.summary.final_pos_error);
        assert!(
            log.summary.final_pos_error < log.max_pos_error_between(2.0, 4.0),
            "error keeps shrinking"
        );
        assert_eq!(log.summary.saturation_fraction, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = spec();
        let mut scenario = Scenario::builtin("hover").unwrap();
        scenario.duration = 3.0;
        scenario.sensors = SensorMode::Filtered;
        let opts = RunOptions {
            seed: 7,
            accel_bias: Vector3::new(0.05, -0.03, 0.02),
            bias_walk: false,
        };
        let run = || {
            run_scenario(
                &spec,
                &ControlConfig::default(),
                &EstimatorConfig::default(),
                &scenario,
                &opts,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.csv_string(), b.csv_string(), "same seed, same bytes");
    }

    #[test]
    fn perfect_feedback_outperforms_the_filtered_loop() {
        let spec = spec();
        let scenario = Scenario::builtin("hover").unwrap();
        let mut filtered = scenario.clone();
        filtered.sensors = SensorMode::Filtered;
        let perfect = run_scenario(
            &spec,
            &ControlConfig::default(),
            &EstimatorConfig::default(),
            &scenario,
            &RunOptions::default(),
        )
        .unwrap();
        let noisy = run_scenario(
            &spec,
            &ControlConfig::default(),
            &EstimatorConfig::default(),
            &filtered,
            &RunOptions { seed: 1, ..RunOptions::default() },
        )
        .unwrap();
        assert!(perfect.summary.final_pos_error < noisy.summary.final_pos_error);
        assert!(noisy.summary.estimate_rms_error > 0.0);
        assert!(
            noisy.summary.max_pos_error < 2.5,
            "filtered hover stayed bounded, got {}",
            noisy.summary.max_pos_error
        );
        assert_eq!(noisy.summary.stale_measurements, 0);
        assert!(noisy.summary.accel_bias_estimate.is_some());
    }
}
