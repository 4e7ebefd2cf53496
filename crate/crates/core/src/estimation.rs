//! Multi-sensor state estimation.
//!
//! The estimation stack has four stages:
//!
//! 1. raw sensor values are re-expressed for the inertial unit's origin using
//!    the joint kinematics ([`to_imu_frame`], [`gps_to_enu`], [`lidar_height`]);
//! 2. attitude comes from a complementary filter on gyro, accelerometer, and
//!    magnetometer ([`complementary_update`]);
//! 3. position, velocity, and accelerometer bias are fused by a
//!    time-synchronized EKF ([`TimeSyncEkf`]) whose fixed-capacity FIFO of
//!    inertial nodes accepts delayed and out-of-order measurements by
//!    replaying predictions and corrections from the measurement's true
//!    timestamp;
//! 4. the fused odometry is converted to the `{CoG}` frame for the controller
//!    ([`to_cog_frame`]).
//!
//! [`Estimator`] wires the stages together behind a single `process` call.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{
    DMatrix, DVector, Matrix3, Rotation3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3,
};

use crate::config::{EstimatorConfig, JointConfig, RobotSpec, SensorMount};
use crate::model::{allocation, forward_kinematics, FramePose, Kinematics};
use crate::numerics::rot_y;
use crate::sim::RigidBodyState;
use crate::{Error, Result};

/// WGS84 semi-major axis (m).
pub const WGS84_SEMI_MAJOR: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_FLATTENING: f64 = 1.0 / 298.257_223_563;

/// Default 1σ of the initial position/velocity/bias uncertainty when the
/// filter is seeded from a known pose.
pub const DEFAULT_INITIAL_STD: [f64; 3] = [0.1, 0.1, 0.1];

/// Geodetic reference point (degrees) anchoring the local tangent plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoReference {
    /// Latitude (degrees).
    pub lat: f64,
    /// Longitude (degrees).
    pub lon: f64,
}

/// Meridian and prime-vertical radii of curvature at a geodetic latitude.
fn curvature_radii(lat_rad: f64) -> (f64, f64) {
    let e2 = WGS84_FLATTENING * (2.0 - WGS84_FLATTENING);
    let s2 = lat_rad.sin().powi(2);
    let w = (1.0 - e2 * s2).sqrt();
    let meridian = WGS84_SEMI_MAJOR * (1.0 - e2) / (w * w * w);
    let prime_vertical = WGS84_SEMI_MAJOR / w;
    (meridian, prime_vertical)
}

/// Converts geodetic latitude/longitude (degrees) to local tangent-plane
/// coordinates around `reference`: x = north, y = east (the world-frame
/// horizontal axes).
///
/// # Errors
/// [`Error::NoReference`] when no reference point is supplied.
///
/// # Example
/// ```
/// use tiltlink::estimation::{gps_to_enu, GeoReference};
///
/// let origin = GeoReference { lat: 35.0, lon: 139.0 };
/// let p = gps_to_enu(&[35.0, 139.0], Some(&origin)).unwrap();
/// assert_eq!(p, nalgebra::Vector2::zeros());
/// ```
pub fn gps_to_enu(lat_lon: &[f64; 2], reference: Option<&GeoReference>) -> Result<Vector2<f64>> {
    let r = reference.ok_or(Error::NoReference)?;
    let lat0 = r.lat.to_radians();
    let (meridian, prime_vertical) = curvature_radii(lat0);
    let north = (lat_lon[0] - r.lat).to_radians() * meridian;
    let east = (lat_lon[1] - r.lon).to_radians() * prime_vertical * lat0.cos();
    Ok(Vector2::new(north, east))
}

/// Inverse of [`gps_to_enu`]: tangent-plane `(north, east)` back to geodetic
/// degrees. Used by the sensor emulator.
pub fn enu_to_gps(north_east: &Vector2<f64>, reference: &GeoReference) -> [f64; 2] {
    let lat0 = reference.lat.to_radians();
    let (meridian, prime_vertical) = curvature_radii(lat0);
    [
        reference.lat + (north_east.x / meridian).to_degrees(),
        reference.lon + (north_east.y / (prime_vertical * lat0.cos())).to_degrees(),
    ]
}

/// Height above flat ground from a slant range `d` measured along the ranging
/// sensor's x-axis (its emission direction).
///
/// The ray end point sits at `R·[d,0,0]` relative to the sensor, so for a
/// downward emission the sensor is `−(R·[d,0,0])_z` above the ground.
///
/// # Example
/// ```
/// use tiltlink::estimation::lidar_height;
/// use tiltlink::numerics::rot_y;
///
/// // Emission straight down (sensor x-axis mapped onto world −z).
/// let r = rot_y(std::f64::consts::FRAC_PI_2);
/// assert!((lidar_height(2.0, &r) - 2.0).abs() < 1e-12);
/// ```
pub fn lidar_height(d: f64, r_w_lidar: &Matrix3<f64>) -> f64 {
    debug_assert!(d >= 0.0, "slant range must be non-negative");
    -(r_w_lidar * Vector3::new(d, 0.0, 0.0)).z
}

/// Sensor channel of a raw measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    /// Geodetic horizontal position.
    GpsPos,
    /// World-frame velocity from the satellite receiver.
    GpsVel,
    /// Sensor-frame velocity from the visual-odometry module.
    VioVel,
    /// Slant range from the downward ranging sensor.
    LidarHeight,
    /// Inertial sample (specific force, angular rate, field direction).
    ImuSample,
}

impl MeasurementKind {
    /// Registry name of the mount frame producing this measurement.
    pub fn frame_name(&self) -> &'static str {
        match self {
            MeasurementKind::GpsPos | MeasurementKind::GpsVel => "gps",
            MeasurementKind::VioVel => "vio",
            MeasurementKind::LidarHeight => "lidar",
            MeasurementKind::ImuSample => "imu",
        }
    }
}

/// One raw inertial sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSample {
    /// Specific force in the inertial unit's frame (m/s²).
    pub accel: Vector3<f64>,
    /// Angular rate in the inertial unit's frame (rad/s).
    pub gyro: Vector3<f64>,
    /// Magnetic field direction in the inertial unit's frame (unit-nominal).
    pub mag: Vector3<f64>,
}

/// Kind-specific payload of a raw measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementValue {
    /// Geodetic latitude/longitude (degrees).
    LatLon([f64; 2]),
    /// 3-velocity (m/s): world-frame for [`MeasurementKind::GpsVel`],
    /// sensor-frame for [`MeasurementKind::VioVel`].
    Velocity(Vector3<f64>),
    /// Slant range along the emission axis (m).
    Range(f64),
    /// Inertial sample.
    Inertial(ImuSample),
}

/// A stamped raw sensor measurement with per-component noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedMeasurement {
    pub kind: MeasurementKind,
    pub value: MeasurementValue,
    /// Acquisition time (s); delivery to the filter may happen later.
    pub stamp: f64,
    /// 1σ per component of `value`.
    pub noise: Vec<f64>,
}

impl StampedMeasurement {
    /// Geodetic horizontal position fix.
    pub fn gps_pos(stamp: f64, lat: f64, lon: f64, sigma: f64) -> Self {
        Self {
            kind: MeasurementKind::GpsPos,
            value: MeasurementValue::LatLon([lat, lon]),
            stamp,
            noise: vec![sigma, sigma],
        }
    }

    /// World-frame velocity fix.
    pub fn gps_vel(stamp: f64, v: Vector3<f64>, sigma: f64) -> Self {
        Self {
            kind: MeasurementKind::GpsVel,
            value: MeasurementValue::Velocity(v),
            stamp,
            noise: vec![sigma, sigma, sigma],
        }
    }

    /// Sensor-frame velocity from the visual-odometry module.
    pub fn vio_vel(stamp: f64, v: Vector3<f64>, sigma: f64) -> Self {
        Self {
            kind: MeasurementKind::VioVel,
            value: MeasurementValue::Velocity(v),
            stamp,
            noise: vec![sigma, sigma, sigma],
        }
    }

    /// Slant range from the downward ranging sensor.
    pub fn lidar(stamp: f64, d: f64, sigma: f64) -> Self {
        Self {
            kind: MeasurementKind::LidarHeight,
            value: MeasurementValue::Range(d),
            stamp,
            noise: vec![sigma],
        }
    }

    /// Inertial sample; `noise` records the accel/gyro/mag 1σ levels.
    pub fn imu(stamp: f64, sample: ImuSample, noise: [f64; 3]) -> Self {
        Self {
            kind: MeasurementKind::ImuSample,
            value: MeasurementValue::Inertial(sample),
            stamp,
            noise: noise.to_vec(),
        }
    }

    /// Checks the stamp is finite, all value components are finite, and all
    /// noise entries are positive.
    pub fn validate(&self) -> Result<()> {
        if !self.stamp.is_finite() {
            return Err(Error::Config(format!(
                "measurement stamp must be finite, got {}",
                self.stamp
            )));
        }
        if self.noise.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config(
                "measurement noise entries must be positive and finite".into(),
            ));
        }
        let finite = match &self.value {
            MeasurementValue::LatLon(ll) => ll.iter().all(|x| x.is_finite()),
            MeasurementValue::Velocity(v) => v.iter().all(|x| x.is_finite()),
            MeasurementValue::Range(d) => d.is_finite(),
            MeasurementValue::Inertial(s) => {
                s.accel.iter().chain(s.gyro.iter()).chain(s.mag.iter()).all(|x| x.is_finite())
            }
        };
        if !finite {
            return Err(Error::Config("measurement value must be finite".into()));
        }
        Ok(())
    }
}

/// A sensor frame: mounted on a link at a fixed offset with a fixed rotation
/// relative to the link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub mount: SensorMount,
    /// Rotation from the sensor frame to its link frame.
    pub rotation: Matrix3<f64>,
}

/// Registered sensor mount frames, resolvable to poses in `{C}` through the
/// joint kinematics.
#[derive(Debug, Clone)]
pub struct FrameRegistry {
    frames: BTreeMap<String, SensorFrame>,
}

impl FrameRegistry {
    /// Empty registry.
    pub fn new() -> Self {
        Self { frames: BTreeMap::new() }
    }

    /// Builds the standard four-frame registry from mount configuration.
    ///
    /// The ranging sensor's frame is pitched +90° about its link's y-axis so
    /// that its x-axis (the emission direction) points along the link's −z:
    /// a downward beam when the vehicle is level.
    pub fn from_config(cfg: &EstimatorConfig) -> Result<Self> {
        let mut reg = Self::new();
        reg.register("imu", cfg.imu_mount.clone(), Matrix3::identity())?;
        reg.register("gps", cfg.gps_mount.clone(), Matrix3::identity())?;
        reg.register("vio", cfg.vio_mount.clone(), Matrix3::identity())?;
        reg.register("lidar", cfg.lidar_mount.clone(), rot_y(std::f64::consts::FRAC_PI_2))?;
        Ok(reg)
    }

    /// Registers (or replaces) a sensor frame.
    pub fn register(&mut self, name: &str, mount: SensorMount, rotation: Matrix3<f64>) -> Result<()> {
        if !(1..=4).contains(&mount.link) {
            return Err(Error::Config(format!(
                "sensor frame '{name}' mounted on invalid link {} (expected 1-4)",
                mount.link
            )));
        }
        self.frames.insert(name.to_string(), SensorFrame { mount, rotation });
        Ok(())
    }

    /// Looks up a registered frame.
    pub fn frame(&self, name: &str) -> Result<&SensorFrame> {
        self.frames.get(name).ok_or_else(|| Error::UnknownFrame { name: name.to_string() })
    }

    /// Pose of the named frame in `{C}` (origin relative to the CoG).
    pub fn resolve(&self, name: &str, kin: &Kinematics) -> Result<FramePose> {
        let f = self.frame(name)?;
        Ok(FramePose {
            rotation: kin.link_frames[f.mount.link - 1].rotation * f.rotation,
            translation: kin.point_on_link_in_c(f.mount.link, &f.mount.offset),
        })
    }

    /// Lever arm and orientation of `name` relative to the inertial unit,
    /// both expressed in the inertial unit's frame.
    pub fn relative_to_imu(&self, name: &str, kin: &Kinematics) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let imu = self.resolve("imu", kin)?;
        let s = self.resolve(name, kin)?;
        let lever = imu.rotation.transpose() * (s.translation - imu.translation);
        let rotation = imu.rotation.transpose() * s.rotation;
        Ok((lever, rotation))
    }
}

impl Default for FrameRegistry {
    fn default() -> Self {
        Self::new()
    }
}

/// A measurement re-expressed for the inertial unit's origin in the world
/// frame, ready for the filter.
#[derive(Debug, Clone, PartialEq)]
pub enum ImuObservation {
    /// Horizontal position (x = north, y = east), m.
    PosXy(Vector2<f64>),
    /// Height, m.
    Height(f64),
    /// Velocity, m/s.
    Velocity(Vector3<f64>),
}

/// A converted observation with its acquisition stamp and noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedObservation {
    pub value: ImuObservation,
    pub stamp: f64,
    /// 1σ per component of `value`.
    pub noise: Vec<f64>,
}

/// Converts a raw measurement into world-frame quantities of the inertial
/// unit's origin.
///
/// Positions shift by the world-frame lever arm: `ᵂp_IMU = ᵂp_S − ᵂR_IMU·p`,
/// where `p` is the sensor's position relative to the inertial unit (in the
/// inertial unit's frame, a function of the joints). Sensor-frame velocities
/// transport by `ᵂv_IMU = ᵂR_IMU·(R_S·ˢv − ω×p)`; world-frame velocities only
/// need the `ω×p` term removed.
///
/// # Errors
/// * [`Error::UnknownFrame`] if the producing sensor's frame is unregistered.
/// * [`Error::NoReference`] for geodetic fixes without a reference point.
/// * [`Error::Config`] when `kind` and `value` disagree (including inertial
///   samples, which drive prediction and are never converted here).
pub fn to_imu_frame(
    meas: &StampedMeasurement,
    registry: &FrameRegistry,
    kin: &Kinematics,
    r_w_imu: &Matrix3<f64>,
    omega_imu: &Vector3<f64>,
    reference: Option<&GeoReference>,
) -> Result<StampedObservation> {
    let (lever, r_imu_s) = registry.relative_to_imu(meas.kind.frame_name(), kin)?;
    let value = match (&meas.kind, &meas.value) {
        (MeasurementKind::GpsPos, MeasurementValue::LatLon(ll)) => {
            let p_s = gps_to_enu(ll, reference)?;
            let shift = r_w_imu * lever;
            ImuObservation::PosXy(Vector2::new(p_s.x - shift.x, p_s.y - shift.y))
        }
        (MeasurementKind::GpsVel, MeasurementValue::Velocity(v_world)) => {
            ImuObservation::Velocity(v_world - r_w_imu * omega_imu.cross(&lever))
        }
        (MeasurementKind::VioVel, MeasurementValue::Velocity(v_sensor)) => {
            ImuObservation::Velocity(r_w_imu * (r_imu_s * v_sensor - omega_imu.cross(&lever)))
        }
        (MeasurementKind::LidarHeight, MeasurementValue::Range(d)) => {
            let r_w_s = r_w_imu * r_imu_s;
            let height_sensor = lidar_height(*d, &r_w_s);
            ImuObservation::Height(height_sensor - (r_w_imu * lever).z)
        }
        (kind, _) => {
            return Err(Error::Config(format!(
                "measurement kind {kind:?} does not match its value payload or is not a correction"
            )))
        }
    };
    Ok(StampedObservation { value, stamp: meas.stamp, noise: meas.noise.clone() })
}

/// Attitude estimate of the inertial unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeEstimate {
    /// Rotation from the inertial unit's frame to the world frame.
    pub r_w_imu: Matrix3<f64>,
    /// Latest angular rate in the inertial unit's frame (rad/s).
    pub omega_imu: Vector3<f64>,
}

impl AttitudeEstimate {
    /// Identity attitude at rest.
    pub fn identity() -> Self {
        Self { r_w_imu: Matrix3::identity(), omega_imu: Vector3::zeros() }
    }
}

/// Which corrections a complementary update actually applied. A field is
/// `false` when its sensor input was degenerate (‖accel‖ below 0.1 g or field
/// norm below 0.1 of nominal) and the correction was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AppliedCorrections {
    pub accel: bool,
    pub mag: bool,
}

/// One complementary-filter step: integrates the gyro on the rotation
/// manifold, then pulls roll/pitch toward the measured gravity direction with
/// gain `k_acc` (1/s) and yaw toward magnetic north (world x-axis) with gain
/// `k_mag` (1/s).
///
/// Degenerate inputs (free fall, magnetic blackout) skip their correction —
/// integration still proceeds — and are reported in [`AppliedCorrections`].
/// The returned rotation is re-orthonormalized.
pub fn complementary_update(
    att: &AttitudeEstimate,
    sample: &ImuSample,
    k_acc: f64,
    k_mag: f64,
    gravity: f64,
    dt: f64,
) -> (AttitudeEstimate, AppliedCorrections) {
    assert!(dt > 0.0, "complementary update requires dt > 0");
    let mut r = att.r_w_imu * Rotation3::new(sample.gyro * dt).into_inner();
    let mut applied = AppliedCorrections::default();

    let a_norm = sample.accel.norm();
    if a_norm >= 0.1 * gravity {
        let a_hat = sample.accel / a_norm;
        // Predicted gravity direction in the body frame is Rᵀẑ; rotate it
        // toward the measured direction.
        let g_pred = r.transpose() * Vector3::z();
        let delta = a_hat.cross(&g_pred) * (k_acc * dt);
        r *= Rotation3::new(delta).into_inner();
        applied.accel = true;
    }

    let m_norm = sample.mag.norm();
    if m_norm >= 0.1 {
        let m_world = r * sample.mag;
        let yaw_err = m_world.y.atan2(m_world.x);
        r = Rotation3::new(Vector3::z() * (-k_mag * dt * yaw_err)).into_inner() * r;
        applied.mag = true;
    }

    // One Newton orthonormalization step: R ← R(3I − RᵀR)/2. Keeps the
    // accumulated drift far below 1e-9 per million updates.
    let rt_r = r.transpose() * r;
    r *= Matrix3::identity() * 1.5 - rt_r * 0.5;

    (AttitudeEstimate { r_w_imu: r, omega_imu: sample.gyro }, applied)
}

/// Filter mean: `[p; v; b_acc]`.
pub type EkfMean = SVector<f64, 9>;
/// Filter covariance.
pub type EkfCov = SMatrix<f64, 9, 9>;

/// Snapshot of the translational filter: position/velocity of the inertial
/// unit in the world frame plus the accelerometer bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub b_acc: Vector3<f64>,
    /// Covariance of `[p; v; b_acc]` (symmetric PSD).
    pub cov: EkfCov,
}

impl EkfState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, b_acc: Vector3<f64>, cov: EkfCov) -> Self {
        Self { p, v, b_acc, cov }
    }

    /// Stacked mean `[p; v; b_acc]`.
    pub fn mean(&self) -> EkfMean {
        let mut m = EkfMean::zeros();
        m.fixed_rows_mut::<3>(0).copy_from(&self.p);
        m.fixed_rows_mut::<3>(3).copy_from(&self.v);
        m.fixed_rows_mut::<3>(6).copy_from(&self.b_acc);
        m
    }

    /// Builds a state from a stacked mean and covariance.
    pub fn from_mean(mean: &EkfMean, cov: EkfCov) -> Self {
        Self {
            p: mean.fixed_rows::<3>(0).into(),
            v: mean.fixed_rows::<3>(3).into(),
            b_acc: mean.fixed_rows::<3>(6).into(),
            cov,
        }
    }
}

/// Process-noise densities for prediction (per √Hz, discretized by `dt`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub sigma_accel: f64,
    /// Accelerometer bias random-walk density (m/s³/√Hz).
    pub sigma_bias_walk: f64,
}

impl ProcessNoise {
    pub fn from_config(cfg: &EstimatorConfig) -> Self {
        Self { sigma_accel: cfg.sigma_accel, sigma_bias_walk: cfg.sigma_accel_walk }
    }
}

/// One prediction step: the world acceleration is
/// `a = R·(a_meas − b_acc) − g·ẑ`, position and velocity integrate it over
/// `dt`, and the bias mean is unchanged (random walk).
///
/// The covariance is propagated only when `with_covariance` is set; the
/// time-synchronized filter predicts covariance on demand during correction
/// replays and skips it on the plain inertial path.
pub fn ekf_predict(
    state: &EkfState,
    accel: &Vector3<f64>,
    r_w_imu: &Matrix3<f64>,
    dt: f64,
    noise: &ProcessNoise,
    gravity: f64,
    with_covariance: bool,
) -> EkfState {
    assert!(dt > 0.0, "prediction requires dt > 0");
    let a_world = r_w_imu * (accel - state.b_acc) - Vector3::new(0.0, 0.0, gravity);
    let p = state.p + state.v * dt + a_world * (0.5 * dt * dt);
    let v = state.v + a_world * dt;
    let mut cov = state.cov;
    if with_covariance {
        let mut f = EkfCov::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-r_w_imu * (0.5 * dt * dt)));
        f.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-r_w_imu * dt));
        let mut g = SMatrix::<f64, 9, 3>::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r_w_imu * (0.5 * dt * dt)));
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r_w_imu * dt));
        cov = f * cov * f.transpose() + g * g.transpose() * (noise.sigma_accel.powi(2) / dt);
        let q_bias = noise.sigma_bias_walk.powi(2) * dt;
        for i in 6..9 {
            cov[(i, i)] += q_bias;
        }
        cov = (cov + cov.transpose()) * 0.5;
    }
    EkfState { p, v, b_acc: state.b_acc, cov }
}

/// Observation matrix and vector for a converted observation. Rows select
/// position or velocity components of `[p; v; b_acc]`; height observes only
/// the third position row (the geodetic fix never contributes to height).
fn observation_rows(value: &ImuObservation) -> (DMatrix<f64>, DVector<f64>) {
    match value {
        ImuObservation::PosXy(p) => {
            let mut h = DMatrix::zeros(2, 9);
            h[(0, 0)] = 1.0;
            h[(1, 1)] = 1.0;
            (h, DVector::from_column_slice(&[p.x, p.y]))
        }
        ImuObservation::Height(z) => {
            let mut h = DMatrix::zeros(1, 9);
            h[(0, 2)] = 1.0;
            (h, DVector::from_column_slice(&[*z]))
        }
        ImuObservation::Velocity(v) => {
            let mut h = DMatrix::zeros(3, 9);
            for i in 0..3 {
                h[(i, 3 + i)] = 1.0;
            }
            (h, DVector::from_column_slice(&[v.x, v.y, v.z]))
        }
    }
}

/// Joseph-form measurement update (keeps the covariance symmetric PSD).
fn joseph_update(mean: &mut EkfMean, cov: &mut EkfCov, obs: &StampedObservation) {
    let (h, z) = observation_rows(&obs.value);
    let dim = z.len();
    debug_assert_eq!(obs.noise.len(), dim, "noise entries must match the observation size");
    let r = DMatrix::from_fn(dim, dim, |i, j| if i == j { obs.noise[i].powi(2) } else { 0.0 });
    let p = DMatrix::from_iterator(9, 9, cov.iter().cloned());
    let x = DVector::from_iterator(9, mean.iter().cloned());

    let s = &h * &p * h.transpose() + &r;
    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
    let k = &p * h.transpose() * s_inv;
    let innovation = z - &h * &x;
    let x_new = &x + &k * innovation;
    let a = DMatrix::<f64>::identity(9, 9) - &k * &h;
    let p_new = &a * &p * a.transpose() + &k * r * k.transpose();

    for i in 0..9 {
        mean[i] = x_new[i];
    }
    *cov = EkfCov::from_iterator(p_new.iter().cloned());
    *cov = (*cov + cov.transpose()) * 0.5;
}

/// One node of the filter FIFO: the inertial input that led into this stamp
/// and the state at this stamp (with covariance only where it has been needed
/// so far).
#[derive(Debug, Clone)]
struct FilterNode {
    stamp: f64,
    /// Specific-force sample used to predict from the previous node into this
    /// one.
    accel: Vector3<f64>,
    /// Attitude used for that prediction.
    r_w_imu: Matrix3<f64>,
    mean: EkfMean,
    cov: Option<EkfCov>,
    /// Corrections assigned to this node, ordered by (stamp, arrival).
    corrections: Vec<PendingCorrection>,
}

#[derive(Debug, Clone)]
struct PendingCorrection {
    seq: u64,
    obs: StampedObservation,
}

/// Time-synchronized EKF: a fixed-capacity FIFO of inertial nodes.
///
/// Each new inertial sample pushes a node and advances the mean only
/// (covariance prediction is deferred). A measurement is assigned to the node
/// at or just before its acquisition stamp; inserting one replays
/// prediction + correction (with covariance) from that node through the
/// newest corrected node, then re-predicts means up to the head. Any arrival
/// order consistent with the buffer span therefore yields the same head state
/// as a chronologically sorted sequential filter.
///
/// Measurements older than the oldest buffered node are dropped and counted
/// ([`Error::StaleMeasurement`]).
#[derive(Debug, Clone)]
pub struct TimeSyncEkf {
    nodes: VecDeque<FilterNode>,
    capacity: usize,
    noise: ProcessNoise,
    gravity: f64,
    /// State of the root node before its own corrections (the replay base).
    root_mean: EkfMean,
    root_cov: EkfCov,
    /// Index of the newest node whose stored state includes its corrections;
    /// covariance is valid on every node up to and including it.
    frontier: usize,
    seq: u64,
    stale: u64,
}

impl TimeSyncEkf {
    /// Creates the filter with one root node at `stamp`.
    pub fn new(
        initial: EkfState,
        stamp: f64,
        r_w_imu: &Matrix3<f64>,
        capacity: usize,
        noise: ProcessNoise,
        gravity: f64,
    ) -> Self {
        assert!(capacity >= 2, "filter buffer needs at least two nodes");
        let mean = initial.mean();
        let cov = initial.cov;
        let mut nodes = VecDeque::with_capacity(capacity + 1);
        nodes.push_back(FilterNode {
            stamp,
            accel: Vector3::zeros(),
            r_w_imu: *r_w_imu,
            mean,
            cov: Some(cov),
            corrections: Vec::new(),
        });
        Self {
            nodes,
            capacity,
            noise,
            gravity,
            root_mean: mean,
            root_cov: cov,
            frontier: 0,
            seq: 0,
            stale: 0,
        }
    }

    /// Number of buffered nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when no nodes are buffered (never the case after construction).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node capacity.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stamp of the newest node.
    pub fn head_stamp(&self) -> f64 {
        self.nodes.back().expect("filter always has nodes").stamp
    }

    /// Stamp of the oldest node.
    pub fn oldest_stamp(&self) -> f64 {
        self.nodes.front().expect("filter always has nodes").stamp
    }

    /// Number of measurements dropped for predating the buffer.
    pub fn stale_count(&self) -> u64 {
        self.stale
    }

    /// State at the newest node. The mean is current through the latest
    /// inertial sample; the covariance is the one at the newest corrected
    /// node (covariance beyond it has not been needed).
    pub fn head(&self) -> EkfState {
        let head = self.nodes.back().expect("filter always has nodes");
        let cov = self.nodes[self.frontier].cov.expect("frontier node keeps covariance");
        EkfState::from_mean(&head.mean, cov)
    }

    /// Pushes a new inertial sample: mean-only prediction into a new head
    /// node. Pops the oldest node when the capacity is exceeded.
    pub fn push_imu(&mut self, stamp: f64, accel: &Vector3<f64>, r_w_imu: &Matrix3<f64>) {
        let head = self.nodes.back().expect("filter always has nodes");
        assert!(stamp > head.stamp, "inertial stamps must be strictly increasing");
        let dt = stamp - head.stamp;
        let prev = EkfState::from_mean(&head.mean, EkfCov::zeros());
        let pred = ekf_predict(&prev, accel, r_w_imu, dt, &self.noise, self.gravity, false);
        self.nodes.push_back(FilterNode {
            stamp,
            accel: *accel,
            r_w_imu: *r_w_imu,
            mean: pred.mean(),
            cov: None,
            corrections: Vec::new(),
        });
        if self.nodes.len() > self.capacity {
            self.pop_root();
        }
    }

    /// Drops the oldest node, promoting the next one to root. The promoted
    /// node's state (with covariance) becomes the new replay base and its
    /// corrections are considered baked in.
    fn pop_root(&mut self) {
        if self.frontier == 0 {
            // No corrections beyond the root yet: bring the covariance
            // forward so the promoted node can serve as the replay base.
            debug_assert!(self.nodes[1].corrections.is_empty());
            let prev = EkfState::from_mean(
                &self.nodes[0].mean,
                self.nodes[0].cov.expect("root keeps covariance"),
            );
            let dt = self.nodes[1].stamp - self.nodes[0].stamp;
            let accel = self.nodes[1].accel;
            let rot = self.nodes[1].r_w_imu;
            let pred = ekf_predict(&prev, &accel, &rot, dt, &self.noise, self.gravity, true);
            self.nodes[1].mean = pred.mean();
            self.nodes[1].cov = Some(pred.cov);
        }
        self.nodes.pop_front();
        self.frontier = self.frontier.saturating_sub(1);
        self.root_mean = self.nodes[0].mean;
        self.root_cov = self.nodes[0].cov.expect("promoted root keeps covariance");
        self.nodes[0].corrections.clear();
    }

    /// Inserts a converted observation and returns the updated head state.
    ///
    /// # Errors
    /// [`Error::StaleMeasurement`] when the stamp predates the oldest node;
    /// the measurement is dropped, counted, and the state is unchanged.
    pub fn insert(&mut self, obs: StampedObservation) -> Result<EkfState> {
        let oldest = self.oldest_stamp();
        if obs.stamp < oldest {
            self.stale += 1;
            return Err(Error::StaleMeasurement { stamp: obs.stamp, oldest });
        }
        let assigned = self
            .nodes
            .iter()
            .rposition(|n| n.stamp <= obs.stamp)
            .expect("stamp at or after the oldest node");
        let seq = self.seq;
        self.seq += 1;
        let list = &mut self.nodes[assigned].corrections;
        let pos = list.partition_point(|c| {
            c.obs.stamp < obs.stamp || (c.obs.stamp == obs.stamp && c.seq <= seq)
        });
        list.insert(pos, PendingCorrection { seq, obs });

        let newest_corrected = self.frontier.max(assigned);
        let start = assigned.min(self.frontier + 1);
        self.replay(start, newest_corrected);
        self.frontier = newest_corrected;
        self.repredict_means(newest_corrected);
        Ok(self.head())
    }

    /// Re-runs prediction (with covariance) and correction through nodes
    /// `start..=end`, storing state at each node.
    fn replay(&mut self, start: usize, end: usize) {
        let mut begin = start;
        if start == 0 {
            let mut mean = self.root_mean;
            let mut cov = self.root_cov;
            for c in &self.nodes[0].corrections {
                joseph_update(&mut mean, &mut cov, &c.obs);
            }
            self.nodes[0].mean = mean;
            self.nodes[0].cov = Some(cov);
            begin = 1;
        }
        for i in begin..=end {
            let prev = EkfState::from_mean(
                &self.nodes[i - 1].mean,
                self.nodes[i - 1].cov.expect("replay predecessor keeps covariance"),
            );
            let dt = self.nodes[i].stamp - self.nodes[i - 1].stamp;
            let accel = self.nodes[i].accel;
            let rot = self.nodes[i].r_w_imu;
            let pred = ekf_predict(&prev, &accel, &rot, dt, &self.noise, self.gravity, true);
            let mut mean = pred.mean();
            let mut cov = pred.cov;
            for c in &self.nodes[i].corrections {
                joseph_update(&mut mean, &mut cov, &c.obs);
            }
            self.nodes[i].mean = mean;
            self.nodes[i].cov = Some(cov);
        }
    }

    /// Mean-only re-prediction from node `from` to the head.
    fn repredict_means(&mut self, from: usize) {
        for i in (from + 1)..self.nodes.len() {
            let prev = EkfState::from_mean(&self.nodes[i - 1].mean, EkfCov::zeros());
            let dt = self.nodes[i].stamp - self.nodes[i - 1].stamp;
            let accel = self.nodes[i].accel;
            let rot = self.nodes[i].r_w_imu;
            let pred = ekf_predict(&prev, &accel, &rot, dt, &self.noise, self.gravity, false);
            self.nodes[i].mean = pred.mean();
        }
    }
}

/// Converts the fused inertial-unit odometry to a `{CoG}`-frame rigid-body
/// state: rotation composes through the chain, angular velocity re-expresses
/// in `{CoG}` axes, and position/velocity shift by the (joint-dependent)
/// lever arm including the `ω×p` term.
pub fn to_cog_frame(
    est: &EkfState,
    att: &AttitudeEstimate,
    kin: &Kinematics,
    r_cog_c: &Matrix3<f64>,
    registry: &FrameRegistry,
    q: &JointConfig,
    stamp: f64,
) -> Result<RigidBodyState> {
    let imu = registry.resolve("imu", kin)?;
    // {CoG} axes seen from the inertial unit, and the CoG position relative
    // to it (the {C} origin sits at the CoG).
    let r_imu_cog = imu.rotation.transpose() * r_cog_c.transpose();
    let p_imu_cog = imu.rotation.transpose() * (-imu.translation);

    let r_w_cog = att.r_w_imu * r_imu_cog;
    let omega_cog = r_imu_cog.transpose() * att.omega_imu;
    let r = est.p + att.r_w_imu * p_imu_cog;
    let v = est.v + att.r_w_imu * att.omega_imu.cross(&p_imu_cog);
    Ok(RigidBodyState {
        r,
        v,
        attitude: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_w_cog)),
        omega: omega_cog,
        q_joints: *q,
        t: stamp,
    })
}

/// The full estimation stack behind one `process` call: complementary
/// attitude filter, frame conversion, and the time-synchronized filter.
#[derive(Debug, Clone)]
pub struct Estimator {
    spec: RobotSpec,
    cfg: EstimatorConfig,
    registry: FrameRegistry,
    reference: Option<GeoReference>,
    att: AttitudeEstimate,
    ekf: Option<TimeSyncEkf>,
    last_imu_stamp: Option<f64>,
}

impl Estimator {
    /// Builds the stack with the standard sensor registry.
    pub fn new(spec: &RobotSpec, cfg: &EstimatorConfig) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            registry: FrameRegistry::from_config(cfg)?,
            reference: None,
            att: AttitudeEstimate::identity(),
            ekf: None,
            last_imu_stamp: None,
        })
    }

    /// Sets the geodetic reference for horizontal-position fixes.
    pub fn set_reference(&mut self, reference: GeoReference) {
        self.reference = Some(reference);
    }

    /// Current geodetic reference, if any.
    pub fn reference(&self) -> Option<&GeoReference> {
        self.reference.as_ref()
    }

    /// Sensor frame registry.
    pub fn registry(&self) -> &FrameRegistry {
        &self.registry
    }

    /// Seeds the filter at `stamp` from a known inertial-unit pose. The bias
    /// starts at zero; `cov` defaults to `diag(0.1²)` blocks.
    pub fn initialize(
        &mut self,
        stamp: f64,
        p_imu: Vector3<f64>,
        v_imu: Vector3<f64>,
        r_w_imu: &Matrix3<f64>,
        cov: Option<EkfCov>,
    ) {
        let cov = cov.unwrap_or_else(|| {
            let mut c = EkfCov::zeros();
            for i in 0..9 {
                c[(i, i)] = DEFAULT_INITIAL_STD[i / 3].powi(2);
            }
            c
        });
        let initial = EkfState::new(p_imu, v_imu, Vector3::zeros(), cov);
        self.att = AttitudeEstimate { r_w_imu: *r_w_imu, omega_imu: Vector3::zeros() };
        self.ekf = Some(TimeSyncEkf::new(
            initial,
            stamp,
            r_w_imu,
            self.cfg.buffer_capacity,
            ProcessNoise::from_config(&self.cfg),
            self.spec.gravity,
        ));
        self.last_imu_stamp = Some(stamp);
    }

    /// True once [`Estimator::initialize`] has run.
    pub fn is_initialized(&self) -> bool {
        self.ekf.is_some()
    }

    /// Routes one measurement: inertial samples update the attitude and push
    /// a prediction node; everything else is converted to the inertial
    /// unit's origin and inserted as a correction.
    pub fn process(&mut self, meas: &StampedMeasurement, q: &JointConfig) -> Result<()> {
        meas.validate()?;
        match (&meas.kind, &meas.value) {
            (MeasurementKind::ImuSample, MeasurementValue::Inertial(sample)) => {
                if let Some(last) = self.last_imu_stamp {
                    if meas.stamp > last {
                        let (att, _applied) = complementary_update(
                            &self.att,
                            sample,
                            self.cfg.k_acc,
                            self.cfg.k_mag,
                            self.spec.gravity,
                            meas.stamp - last,
                        );
                        self.att = att;
                    }
                } else {
                    self.att.omega_imu = sample.gyro;
                }
                self.last_imu_stamp = Some(meas.stamp);
                let rot = self.att.r_w_imu;
                if let Some(ekf) = &mut self.ekf {
                    if meas.stamp > ekf.head_stamp() {
                        ekf.push_imu(meas.stamp, &sample.accel, &rot);
                    }
                }
                Ok(())
            }
            _ => {
                let ekf = self
                    .ekf
                    .as_mut()
                    .ok_or_else(|| Error::Config("estimator not initialized".into()))?;
                let kin = forward_kinematics(&self.spec, q);
                let obs = to_imu_frame(
                    meas,
                    &self.registry,
                    &kin,
                    &self.att.r_w_imu,
                    &self.att.omega_imu,
                    self.reference.as_ref(),
                )?;
                ekf.insert(obs)?;
                Ok(())
            }
        }
    }

    /// Latest attitude estimate.
    pub fn attitude(&self) -> &AttitudeEstimate {
        &self.att
    }

    /// Latest fused inertial-unit state, if initialized.
    pub fn state(&self) -> Option<EkfState> {
        self.ekf.as_ref().map(|e| e.head())
    }

    /// Stamp of the newest prediction node, if initialized.
    pub fn head_stamp(&self) -> Option<f64> {
        self.ekf.as_ref().map(|e| e.head_stamp())
    }

    /// Measurements dropped as stale so far.
    pub fn stale_count(&self) -> u64 {
        self.ekf.as_ref().map(|e| e.stale_count()).unwrap_or(0)
    }

    /// Full odometry converted to the `{CoG}` frame at the current joints.
    pub fn cog_state(&self, q: &JointConfig) -> Result<RigidBodyState> {
        let ekf = self
            .ekf
            .as_ref()
            .ok_or_else(|| Error::Config("estimator not initialized".into()))?;
        let kin = forward_kinematics(&self.spec, q);
        let alloc = allocation(&self.spec, q)?;
        to_cog_frame(
            &ekf.head(),
            &self.att,
            &kin,
            &alloc.r_cog_c,
            &self.registry,
            q,
            ekf.head_stamp(),
        )
    }
}
