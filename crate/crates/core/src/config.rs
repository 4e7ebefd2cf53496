//! Platform, controller, and estimator configuration plus the shared
//! plain-text `key = value` file format.
//!
//! Every file the tools read uses the same syntax: one `key = value` pair per
//! line, `#` starts a comment, values are SI-unit numbers (whitespace-separated
//! when the key is a vector), and keys may repeat where noted (e.g. scenario
//! waypoints). Unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;

use crate::{Error, Result};

/// Geometric, mass, and thrust parameters of the four-link platform.
///
/// Defaults embed the reference platform: 0.6 m links, 3.4 kg total mass,
/// 16 N maximum thrust per rotor, 0.1745 rad tilt angle, and a 0.3556 m
/// (14-inch) propeller.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSpec {
    /// Length of each link (m).
    pub link_length: f64,
    /// Mass of each link including its rotor (kg).
    pub link_masses: [f64; 4],
    /// Fixed rotor tilt angle `beta` (rad); rotor `i` is tilted by
    /// `(-1)^i * beta` about its link axis.
    pub tilt_angle: f64,
    /// Maximum thrust per rotor (N).
    pub u_max: f64,
    /// Propeller diameter (m).
    pub prop_diameter: f64,
    /// Rotor mount position expressed in each link frame (m).
    pub rotor_offsets: [Vector3<f64>; 4],
    /// Fraction of each link's mass lumped as a point mass at the rotor
    /// mount; the remainder is a uniform rod over the link length.
    pub rotor_mass_fraction: f64,
    /// Rotor spin direction per link (+1 ccw / −1 cw). Neighboring rotors
    /// spin oppositely; the torque model contains no drag-moment term, so
    /// this is recorded but produces no wrench contribution.
    pub spin_directions: [i8; 4],
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            link_length: 0.6,
            link_masses: [0.85; 4],
            tilt_angle: 0.1745,
            u_max: 16.0,
            prop_diameter: 0.3556,
            rotor_offsets: [
                Vector3::new(0.2, 0.0, 0.0),
                Vector3::new(0.2, 0.0, 0.0),
                Vector3::new(0.4, 0.0, 0.0),
                Vector3::new(0.4, 0.0, 0.0),
            ],
            rotor_mass_fraction: 0.5,
            spin_directions: [1, -1, 1, -1],
            gravity: 9.81,
        }
    }
}

impl RobotSpec {
    /// Total mass `m_Σ` (kg).
    pub fn mass_total(&self) -> f64 {
        self.link_masses.iter().sum()
    }

    /// Total weight `m_Σ g` (N).
    pub fn weight(&self) -> f64 {
        self.mass_total() * self.gravity
    }

    /// Checks the structural invariants.
    ///
    /// # Errors
    /// [`Error::Config`] if any length/mass/thrust is non-positive, the tilt
    /// angle is outside `[0, π/2)`, or the rotor mass fraction is outside
    /// `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.link_length > 0.0) {
            return Err(Error::Config("link_length must be > 0".into()));
        }
        if self.link_masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("all link_masses must be > 0".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::Config("u_max must be > 0".into()));
        }
        if !(self.prop_diameter > 0.0) {
            return Err(Error::Config("prop_diameter must be > 0".into()));
        }
        if !(self.tilt_angle >= 0.0 && self.tilt_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("tilt_angle must lie in [0, pi/2)".into()));
        }
        if !(self.rotor_mass_fraction >= 0.0 && self.rotor_mass_fraction <= 1.0) {
            return Err(Error::Config("rotor_mass_fraction must lie in [0, 1]".into()));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::Config("gravity must be > 0".into()));
        }
        Ok(())
    }

    /// Loads a spec from a `key = value` file; unspecified keys keep their
    /// defaults.
    ///
    /// # Errors
    /// [`Error::Io`] on read failure, [`Error::Config`] on parse/validation
    /// failure.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses a spec from `key = value` text.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut spec = Self::default();
        for (key, values) in kv.entries() {
            let value = kv.single(key)?;
            match key.as_str() {
                "link_length" => spec.link_length = parse_f64(key, value)?,
                "link_masses" => spec.link_masses = parse_array::<4>(key, value)?,
                "tilt_angle" => spec.tilt_angle = parse_f64(key, value)?,
                "u_max" => spec.u_max = parse_f64(key, value)?,
                "prop_diameter" => spec.prop_diameter = parse_f64(key, value)?,
                "rotor_offset" => {
                    let v = parse_array::<3>(key, value)?;
                    spec.rotor_offsets = [Vector3::from_column_slice(&v); 4];
                }
                "rotor_offsets_x" => {
                    let v = parse_array::<4>(key, value)?;
                    for (dst, x) in spec.rotor_offsets.iter_mut().zip(v) {
                        *dst = Vector3::new(x, 0.0, 0.0);
                    }
                }
                "rotor_mass_fraction" => spec.rotor_mass_fraction = parse_f64(key, value)?,
                "spin_directions" => {
                    let v = parse_array::<4>(key, value)?;
                    for (dst, src) in spec.spin_directions.iter_mut().zip(v) {
                        *dst = if src >= 0.0 { 1 } else { -1 };
                    }
                }
                "gravity" => spec.gravity = parse_f64(key, value)?,
                _ => {
                    return Err(Error::Config(format!("unknown robot spec key `{key}`")));
                }
            }
            let _ = values;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Joint vector `q = [q1, q2]` (rad).
///
/// The design sweeps use the domain `[−π/2, π/2]²`; the operations themselves
/// only require finite angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    pub q1: f64,
    pub q2: f64,
}

impl JointConfig {
    pub fn new(q1: f64, q2: f64) -> Self {
        Self { q1, q2 }
    }

    /// True when both joints lie in the sweep domain `[−π/2, π/2]`.
    pub fn in_sweep_domain(&self) -> bool {
        let h = std::f64::consts::FRAC_PI_2 + 1e-12;
        self.q1.abs() <= h && self.q2.abs() <= h
    }
}

/// Controller weights and gains (attitude LQI weights + position PID gains).
///
/// Defaults are the reference platform's flight-test values:
/// `M = diag(1100, 80, 1100, 80, 100, 50, 10, 10, 0.5)`, `W1 = I₄`,
/// `W2 = diag(100, 100, 100)`, `K_P = diag(2.3, 2.3, 3.6)`,
/// `K_I = diag(0.02, 0.02, 3.4)`, `K_D = diag(4.0, 4.0, 1.55)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// Diagonal of the 9×9 LQI state weight `M` over
    /// `[e_αx, e_α̇x, e_αy, e_α̇y, e_αz, e_α̇z, e_Iαx, e_Iαy, e_Iαz]`.
    pub m_diag: [f64; 9],
    /// Diagonal of the 4×4 direct input weight `W1`.
    pub w1_diag: [f64; 4],
    /// Diagonal of the 3×3 translational-force weight `W2`: the input cost is
    /// `uᵀ(W1 + Q_tranᵀ W2 Q_tran)u`.
    pub w2_diag: [f64; 3],
    /// Position proportional gain diagonal (1/s²).
    pub kp: [f64; 3],
    /// Position integral gain diagonal (1/s³).
    pub ki: [f64; 3],
    /// Position derivative gain diagonal (1/s).
    pub kd: [f64; 3],
    /// Integral-leak coefficient: `ė_{I_r} = ė_r + c·e_r`.
    pub c: f64,
    /// Whether the position law adds the `m_Σ g ẑ` gravity feedforward.
    pub gravity_feedforward: bool,
    /// Anti-windup clamp on each attitude-integral component (rad·s).
    pub integral_limit_att: f64,
    /// Anti-windup clamp on each position-integral component (m·s).
    pub integral_limit_pos: f64,
    /// Re-synthesize `K_x` when the joints moved more than this since the
    /// last synthesis (rad).
    pub resynth_threshold: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            m_diag: [1100.0, 80.0, 1100.0, 80.0, 100.0, 50.0, 10.0, 10.0, 0.5],
            w1_diag: [1.0; 4],
            w2_diag: [100.0; 3],
            kp: [2.3, 2.3, 3.6],
            ki: [0.02, 0.02, 3.4],
            kd: [4.0, 4.0, 1.55],
            c: 0.25,
            gravity_feedforward: true,
            integral_limit_att: 1.0,
            integral_limit_pos: 2.0,
            resynth_threshold: 0.02,
        }
    }
}

impl ControlConfig {
    /// Loads gains from a `key = value` file; unspecified keys keep defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses gains from `key = value` text.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut cfg = Self::default();
        for (key, _) in kv.entries() {
            let value = kv.single(key)?;
            match key.as_str() {
                "att_m" => cfg.m_diag = parse_array::<9>(key, value)?,
                "att_w1" => cfg.w1_diag = parse_array::<4>(key, value)?,
                "att_w2" => cfg.w2_diag = parse_array::<3>(key, value)?,
                "pos_kp" => cfg.kp = parse_array::<3>(key, value)?,
                "pos_ki" => cfg.ki = parse_array::<3>(key, value)?,
                "pos_kd" => cfg.kd = parse_array::<3>(key, value)?,
                "pos_c" => cfg.c = parse_f64(key, value)?,
                "gravity_feedforward" => cfg.gravity_feedforward = parse_bool(key, value)?,
                "integral_limit_att" => cfg.integral_limit_att = parse_f64(key, value)?,
                "integral_limit_pos" => cfg.integral_limit_pos = parse_f64(key, value)?,
                "resynth_threshold" => cfg.resynth_threshold = parse_f64(key, value)?,
                _ => return Err(Error::Config(format!("unknown gains key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks positivity invariants.
    pub fn validate(&self) -> Result<()> {
        if self.m_diag.iter().any(|&x| x < 0.0)
            || self.w1_diag.iter().any(|&x| x < 0.0)
            || self.w2_diag.iter().any(|&x| x < 0.0)
        {
            return Err(Error::Config("LQI weights must be nonnegative".into()));
        }
        if self.kp.iter().chain(&self.ki).chain(&self.kd).any(|&x| !(x > 0.0)) {
            return Err(Error::Config("position gains must be positive".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config("integral coefficient c must be positive".into()));
        }
        Ok(())
    }
}

/// Where a sensor is mounted: the carrying link (1-based) and the mount
/// position in that link's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorMount {
    pub link: usize,
    pub offset: Vector3<f64>,
}

/// Sensor noise levels, rates, delays, and mount geometry for the estimator
/// and the sensor emulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// GPS horizontal position noise, 1σ per axis (m).
    pub sigma_gps_pos: f64,
    /// GPS velocity noise, 1σ per axis (m/s).
    pub sigma_gps_vel: f64,
    /// VIO velocity noise, 1σ per axis (m/s).
    pub sigma_vio_vel: f64,
    /// LiDAR range noise, 1σ (m).
    pub sigma_lidar: f64,
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub sigma_accel: f64,
    /// Accelerometer bias random-walk density (m/s³/√Hz).
    pub sigma_accel_walk: f64,
    /// Gyro white noise, 1σ per axis (rad/s).
    pub sigma_gyro: f64,
    /// Magnetometer direction noise, 1σ per axis (unitless).
    pub sigma_mag: f64,
    /// Sensor sample rates (Hz).
    pub imu_rate: f64,
    pub gps_rate: f64,
    pub vio_rate: f64,
    pub lidar_rate: f64,
    /// Constant transport/processing delays between acquisition and delivery (s).
    pub gps_delay: f64,
    pub vio_delay: f64,
    pub lidar_delay: f64,
    /// FIFO capacity of the time-synchronized filter (IMU nodes).
    pub buffer_capacity: usize,
    /// Complementary-filter accelerometer correction gain (1/s).
    pub k_acc: f64,
    /// Complementary-filter magnetometer correction gain (1/s).
    pub k_mag: f64,
    /// Mount geometry. The IMU mount defines the `{IMU}` frame the filter
    /// estimates; the others are lever arms relative to it through the
    /// articulated chain.
    pub imu_mount: SensorMount,
    pub gps_mount: SensorMount,
    pub vio_mount: SensorMount,
    pub lidar_mount: SensorMount,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sigma_gps_pos: 1.5,
            sigma_gps_vel: 0.1,
            sigma_vio_vel: 0.05,
            sigma_lidar: 0.03,
            sigma_accel: 0.05,
            sigma_accel_walk: 0.001,
            sigma_gyro: 0.002,
            sigma_mag: 0.01,
            imu_rate: 100.0,
            gps_rate: 5.0,
            vio_rate: 20.0,
            lidar_rate: 40.0,
            gps_delay: 0.3,
            vio_delay: 0.05,
            lidar_delay: 0.02,
            buffer_capacity: 200,
            k_acc: 0.05,
            k_mag: 0.2,
            imu_mount: SensorMount { link: 2, offset: Vector3::new(0.3, 0.0, 0.0) },
            gps_mount: SensorMount { link: 2, offset: Vector3::new(0.3, 0.0, 0.1) },
            vio_mount: SensorMount { link: 3, offset: Vector3::new(0.1, 0.0, -0.05) },
            lidar_mount: SensorMount { link: 2, offset: Vector3::new(0.4, 0.0, -0.05) },
        }
    }
}

impl EstimatorConfig {
    /// Loads estimator settings from a `key = value` file; unspecified keys
    /// keep defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses estimator settings from `key = value` text. Mounts are given as
    /// `<sensor>_mount = link ox oy oz`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut cfg = Self::default();
        for (key, _) in kv.entries() {
            let value = kv.single(key)?;
            match key.as_str() {
                "sigma_gps_pos" => cfg.sigma_gps_pos = parse_f64(key, value)?,
                "sigma_gps_vel" => cfg.sigma_gps_vel = parse_f64(key, value)?,
                "sigma_vio_vel" => cfg.sigma_vio_vel = parse_f64(key, value)?,
                "sigma_lidar" => cfg.sigma_lidar = parse_f64(key, value)?,
                "sigma_accel" => cfg.sigma_accel = parse_f64(key, value)?,
                "sigma_accel_walk" => cfg.sigma_accel_walk = parse_f64(key, value)?,
                "sigma_gyro" => cfg.sigma_gyro = parse_f64(key, value)?,
                "sigma_mag" => cfg.sigma_mag = parse_f64(key, value)?,
                "imu_rate" => cfg.imu_rate = parse_f64(key, value)?,
                "gps_rate" => cfg.gps_rate = parse_f64(key, value)?,
                "vio_rate" => cfg.vio_rate = parse_f64(key, value)?,
                "lidar_rate" => cfg.lidar_rate = parse_f64(key, value)?,
                "gps_delay" => cfg.gps_delay = parse_f64(key, value)?,
                "vio_delay" => cfg.vio_delay = parse_f64(key, value)?,
                "lidar_delay" => cfg.lidar_delay = parse_f64(key, value)?,
                "buffer_capacity" => {
                    let n = parse_f64(key, value)?;
                    if n.fract() != 0.0 || n < 0.0 {
                        return Err(Error::Config(format!(
                            "key `{key}`: expected a nonnegative integer, got `{value}`"
                        )));
                    }
                    cfg.buffer_capacity = n as usize;
                }
                "k_acc" => cfg.k_acc = parse_f64(key, value)?,
                "k_mag" => cfg.k_mag = parse_f64(key, value)?,
                "imu_mount" => cfg.imu_mount = parse_mount(key, value)?,
                "gps_mount" => cfg.gps_mount = parse_mount(key, value)?,
                "vio_mount" => cfg.vio_mount = parse_mount(key, value)?,
                "lidar_mount" => cfg.lidar_mount = parse_mount(key, value)?,
                _ => return Err(Error::Config(format!("unknown estimator key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks positivity/range invariants.
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_gps_pos,
            self.sigma_gps_vel,
            self.sigma_vio_vel,
            self.sigma_lidar,
            self.sigma_accel,
            self.sigma_accel_walk,
            self.sigma_gyro,
            self.sigma_mag,
        ];
        if sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("all sensor noise levels must be positive".into()));
        }
        let rates = [self.imu_rate, self.gps_rate, self.vio_rate, self.lidar_rate];
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("all sensor rates must be positive".into()));
        }
        let delays = [self.gps_delay, self.vio_delay, self.lidar_delay];
        if delays.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Config("sensor delays must be nonnegative".into()));
        }
        if self.buffer_capacity < 2 {
            return Err(Error::Config("buffer_capacity must be at least 2".into()));
        }
        for (name, mount) in [
            ("imu", &self.imu_mount),
            ("gps", &self.gps_mount),
            ("vio", &self.vio_mount),
            ("lidar", &self.lidar_mount),
        ] {
            if !(1..=4).contains(&mount.link) {
                return Err(Error::Config(format!(
                    "{name}_mount link {} out of range (expected 1-4)",
                    mount.link
                )));
            }
        }
        Ok(())
    }
}

/// Parses `link ox oy oz` into a [`SensorMount`].
fn parse_mount(key: &str, value: &str) -> Result<SensorMount> {
    let v = parse_array::<4>(key, value)?;
    if v[0].fract() != 0.0 {
        return Err(Error::Config(format!("key `{key}`: link index must be an integer")));
    }
    Ok(SensorMount {
        link: v[0] as usize,
        offset: Vector3::new(v[1], v[2], v[3]),
    })
}

/// One parsed `key = value` file: keys in file order, repeatable.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    /// Parses `key = value` text (comments `#`, blank lines allowed).
    ///
    /// # Errors
    /// [`Error::Config`] with the offending line number on any line that is
    /// not blank, comment, or `key = value`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    idx + 1
                )));
            };
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// All entries in file order.
    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter().map(|(k, v)| (k, v))
    }

    /// All values recorded for `key`, in file order.
    pub fn all(&self, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    /// The unique value for `key`.
    ///
    /// # Errors
    /// [`Error::Config`] if the key repeats.
    pub fn single(&self, key: &str) -> Result<&str> {
        let values = self.all(key);
        match values.as_slice() {
            [v] => Ok(v),
            [] => Err(Error::Config(format!("missing key `{key}`"))),
            _ => Err(Error::Config(format!("key `{key}` given more than once"))),
        }
    }

    /// Collects the distinct keys present.
    pub fn keys(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (k, _) in &self.entries {
            *map.entry(k.as_str()).or_insert(0) += 1;
        }
        map
    }
}

/// Parses one float value.
pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key `{key}`: `{value}` is not a number")))
}

/// Parses a whitespace-separated fixed-length numeric vector.
pub(crate) fn parse_array<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(Error::Config(format!(
            "key `{key}`: expected {N} numbers, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; N];
    for (dst, part) in out.iter_mut().zip(parts) {
        *dst = parse_f64(key, part)?;
    }
    Ok(out)
}

/// Parses `true`/`false`/`1`/`0`.
pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: `{value}` is not a boolean"))),
    }
}
