//! Cascaded flight controller: LQI attitude control with a thrust-force
//! penalty in the input cost, PID position control with
//! attitude-induced-force compensation, thrust aggregation, and the
//! gain-constraint validator for the complete-stability conditions.
//!
//! All wrench matrices here are in the hover-level `{CoG}` frame (the
//! unprimed allocation rows). The attitude state is
//! `x = [α_x, α̇_x, α_y, α̇_y, α_z, α̇_z]` and the LQI design extends it with
//! the attitude-error integral to `x̄ = [e_x; e_{I_α}] ∈ R⁹`.

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};

use crate::config::{ControlConfig, JointConfig, RobotSpec};
use crate::model::{allocation, inertia, AllocationSet, InertiaModel};
use crate::numerics::{care_residual, care_solve, rot_z};
use crate::{Error, Result};

/// LQI weights and the synthesized attitude feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeGains {
    /// 9×9 state weight.
    pub m: SMatrix<f64, 9, 9>,
    /// 4×4 direct input weight.
    pub w1: Matrix4<f64>,
    /// 3×3 translational-force weight.
    pub w2: Matrix3<f64>,
    /// Effective input weight `N = W1 + Q_tranᵀ W2 Q_tran`.
    pub n: Matrix4<f64>,
    /// Feedback gain: `u_att = K_x·x̄` (+ gyroscopic feedforward).
    pub k_x: SMatrix<f64, 4, 9>,
    /// Frobenius norm of the Riccati residual at the returned solution.
    pub residual: f64,
}

impl AttitudeGains {
    /// Right three columns of `K_x`: the gain acting on the integral state.
    pub fn k_x_i(&self) -> SMatrix<f64, 4, 3> {
        self.k_x.fixed_columns::<3>(6).into_owned()
    }
}

/// Diagonal position-control gains.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGains {
    pub k_p: Matrix3<f64>,
    pub k_i: Matrix3<f64>,
    pub k_d: Matrix3<f64>,
    /// Integral-leak coefficient of `ė_{I_r} = ė_r + c·e_r`.
    pub c: f64,
}

impl PositionGains {
    pub fn from_config(cfg: &ControlConfig) -> Self {
        Self {
            k_p: Matrix3::from_diagonal(&Vector3::from_row_slice(&cfg.kp)),
            k_i: Matrix3::from_diagonal(&Vector3::from_row_slice(&cfg.ki)),
            k_d: Matrix3::from_diagonal(&Vector3::from_row_slice(&cfg.kd)),
            c: cfg.c,
        }
    }
}

/// Integrator state carried between control steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlState {
    /// Attitude-error integral `e_{I_α}` (rad·s), clamped per config.
    pub e_i_alpha: Vector3<f64>,
    /// Position-error integral `e_{I_r}` (m·s), clamped per config.
    pub e_i_r: Vector3<f64>,
    /// Most recent desired attitude (roll, pitch, yaw) (rad), used to
    /// difference the desired attitude rate; `None` until the first step.
    pub last_alpha_des: Option<Vector3<f64>>,
}

/// One full controller output.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    /// Per-rotor thrust command, clipped to `[0, u_max]` (N).
    pub u_des: Vector4<f64>,
    /// Desired total force in world frame (N).
    pub f_des: Vector3<f64>,
    /// Desired attitude (roll, pitch, yaw) (rad).
    pub alpha_des: Vector3<f64>,
    /// Desired collective thrust (N).
    pub f_t: f64,
    /// Which rotors hit a clip bound this step.
    pub saturated: [bool; 4],
    /// Attitude-loop contribution before clipping (N).
    pub u_att: Vector4<f64>,
    /// Position-loop contribution before clipping (N).
    pub u_pos: Vector4<f64>,
}

/// Position/velocity/acceleration reference plus desired yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub r_des: Vector3<f64>,
    pub v_des: Vector3<f64>,
    pub a_des: Vector3<f64>,
    pub yaw_des: f64,
}

impl Setpoint {
    /// Hold a fixed position at a fixed yaw.
    pub fn hold(r_des: Vector3<f64>, yaw_des: f64) -> Self {
        Self { r_des, v_des: Vector3::zeros(), a_des: Vector3::zeros(), yaw_des }
    }
}

/// Plant feedback consumed by the controller: world pose/twist of `{CoG}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    /// World attitude of the hover-level frame.
    pub rotation: Matrix3<f64>,
    /// Body angular velocity in `{CoG}` (rad/s).
    pub omega: Vector3<f64>,
}

/// Builds the extended attitude state-space pair `(Ā, B̄)` for one form:
/// double integrators per axis driven through `I_Σ⁻¹ Q_rot`, augmented with
/// the output integral.
pub fn attitude_state_matrices(
    alloc: &AllocationSet,
    inertia_model: &InertiaModel,
) -> (SMatrix<f64, 9, 9>, SMatrix<f64, 9, 4>) {
    let angular_gain = inertia_inverse(inertia_model) * alloc.q_rot;
    let mut a_bar = SMatrix::<f64, 9, 9>::zeros();
    let mut b_bar = SMatrix::<f64, 9, 4>::zeros();
    for axis in 0..3 {
        // ė_α = e_α̇ ; integral rows pick up e_α.
        a_bar[(2 * axis, 2 * axis + 1)] = 1.0;
        a_bar[(6 + axis, 2 * axis)] = 1.0;
        for col in 0..4 {
            b_bar[(2 * axis + 1, col)] = -angular_gain[(axis, col)];
        }
    }
    (a_bar, b_bar)
}

/// Synthesizes the LQI attitude gain for one form by solving the algebraic
/// Riccati equation of `(Ā, B̄)` under the state weight `M` and the input
/// weight `N = W1 + Q_tranᵀ W2 Q_tran`.
///
/// # Errors
/// [`Error::NotStabilizable`] when the Riccati solve does not converge to the
/// required residual (invalid form/weights pairing).
///
/// # Example
/// ```
/// use tiltlink::config::{ControlConfig, JointConfig, RobotSpec};
/// use tiltlink::control::lqi_synthesize;
/// use tiltlink::model::{allocation, inertia};
///
/// let spec = RobotSpec::default();
/// let q = JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
/// let alloc = allocation(&spec, &q).unwrap();
/// let gains = lqi_synthesize(&alloc, &inertia(&spec, &q), &ControlConfig::default()).unwrap();
/// assert!(gains.residual < 1e-8);
/// ```
pub fn lqi_synthesize(
    alloc: &AllocationSet,
    inertia_model: &InertiaModel,
    cfg: &ControlConfig,
) -> Result<AttitudeGains> {
    let m = SMatrix::<f64, 9, 9>::from_diagonal(&SVector::from_row_slice(&cfg.m_diag));
    let w1 = Matrix4::from_diagonal(&Vector4::from_row_slice(&cfg.w1_diag));
    let w2 = Matrix3::from_diagonal(&Vector3::from_row_slice(&cfg.w2_diag));
    let n = w1 + alloc.q_tran.transpose() * w2 * alloc.q_tran;

    let (a_bar, b_bar) = attitude_state_matrices(alloc, inertia_model);
    let a_dyn = DMatrix::from_iterator(9, 9, a_bar.iter().cloned());
    let b_dyn = DMatrix::from_iterator(9, 4, b_bar.iter().cloned());
    let m_dyn = DMatrix::from_iterator(9, 9, m.iter().cloned());
    let n_dyn = DMatrix::from_iterator(4, 4, n.iter().cloned());

    let (p, k) = care_solve(&a_dyn, &b_dyn, &m_dyn, &n_dyn)?;
    let n_inv = n_dyn
        .clone()
        .try_inverse()
        .ok_or(Error::NotStabilizable { iterations: 0, residual: f64::INFINITY })?;
    let residual = care_residual(&a_dyn, &b_dyn, &m_dyn, &n_inv, &p);
    // care_solve returns K with the u = −Kx convention; the attitude law is
    // written u = K_x·x̄.
    let k_x = -SMatrix::<f64, 4, 9>::from_iterator(k.iter().cloned());
    Ok(AttitudeGains { m, w1, w2, n, k_x, residual })
}

/// Inverse of the inertia tensor, falling back to the pseudo-inverse for
/// (physically degenerate) semi-definite tensors.
fn inertia_inverse(inertia_model: &InertiaModel) -> Matrix3<f64> {
    inertia_model.i_sigma.try_inverse().unwrap_or_else(|| {
        inertia_model
            .i_sigma
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| Matrix3::zeros())
    })
}

/// Minimum-norm right inverse of the torque allocation.
fn q_rot_pinv(alloc: &AllocationSet) -> SMatrix<f64, 4, 3> {
    let svd = alloc.q_rot.svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(1e-12 * smax.max(1.0))
        .map(|p| SMatrix::<f64, 4, 3>::from_iterator(p.iter().cloned()))
        .unwrap_or_else(|_| SMatrix::zeros())
}

/// The gyroscopic coupling vector `(I⁻¹ω) × (Iω)` compensated by both loops.
fn gyroscopic_term(inertia_model: &InertiaModel, omega: &Vector3<f64>) -> Vector3<f64> {
    let i = &inertia_model.i_sigma;
    (inertia_inverse(inertia_model) * omega).cross(&(i * omega))
}

fn clamp_vector(v: &mut Vector3<f64>, limit: f64) {
    for x in v.iter_mut() {
        *x = x.clamp(-limit, limit);
    }
}

/// One attitude-loop step: LQI feedback on `x̄ = [e_x; e_{I_α}]` plus
/// gyroscopic feedforward, then the integral advance
/// `e_{I_α} += (C·e_x)·dt` with anti-windup clamping.
///
/// `e_x` is the 6-vector tracking error
/// `[e_αx, e_α̇x, e_αy, e_α̇y, e_αz, e_α̇z]`.
pub fn attitude_step(
    state: &mut ControlState,
    e_x: &SVector<f64, 6>,
    omega: &Vector3<f64>,
    inertia_model: &InertiaModel,
    alloc: &AllocationSet,
    gains: &AttitudeGains,
    dt: f64,
    integral_limit: f64,
) -> Vector4<f64> {
    let mut x_bar = SVector::<f64, 9>::zeros();
    x_bar.fixed_rows_mut::<6>(0).copy_from(e_x);
    x_bar.fixed_rows_mut::<3>(6).copy_from(&state.e_i_alpha);

    let u_att = gains.k_x * x_bar + q_rot_pinv(alloc) * gyroscopic_term(inertia_model, omega);

    let e_alpha = Vector3::new(e_x[0], e_x[2], e_x[4]);
    state.e_i_alpha += e_alpha * dt;
    clamp_vector(&mut state.e_i_alpha, integral_limit);
    u_att
}

/// Output of one position-loop step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionOutput {
    /// Desired total force in world frame (N).
    pub f_des: Vector3<f64>,
    /// Desired roll (rad).
    pub alpha_x_des: f64,
    /// Desired pitch (rad).
    pub alpha_y_des: f64,
    /// Desired collective thrust (N).
    pub f_t: f64,
    /// Position-loop thrust contribution (N).
    pub u_pos: Vector4<f64>,
}

/// One position-loop step: PID force with gravity feedforward (toggleable)
/// and the offset `φ = −R·Q_tran·pinv(Q_rot)·(I⁻¹ω × Iω)` that cancels the
/// translational force produced by the attitude loop's gyroscopic term; then
/// extraction of the desired roll/pitch in the yaw-aligned frame, the
/// collective thrust `f_T = (R ẑ)ᵀ f_des`, and the thrust split
/// `u_pos = u_s·f_T/(m_Σ g)`. Advances `e_{I_r}` by `(ė_r + c·e_r)·dt`.
///
/// # Errors
/// [`Error::DegenerateForce`] when `‖f_des‖ < 1e-6` N (the desired-attitude
/// extraction is undefined).
pub fn position_step(
    state: &mut ControlState,
    sp: &Setpoint,
    fb: &Feedback,
    alloc: &AllocationSet,
    inertia_model: &InertiaModel,
    cfg: &ControlConfig,
    spec: &RobotSpec,
    dt: f64,
) -> Result<PositionOutput> {
    let gains = PositionGains::from_config(cfg);
    let m = spec.mass_total();
    let e_r = sp.r_des - fb.r;
    let e_dr = sp.v_des - fb.v;

    let phi = -fb.rotation
        * alloc.q_tran
        * (q_rot_pinv(alloc) * gyroscopic_term(inertia_model, &fb.omega));
    let mut f_des =
        m * (gains.k_p * e_r + gains.k_i * state.e_i_r + gains.k_d * e_dr + sp.a_des) + phi;
    if cfg.gravity_feedforward {
        f_des += m * spec.gravity * Vector3::z();
    }
    let norm = f_des.norm();
    if norm < 1e-6 {
        return Err(Error::DegenerateForce { norm });
    }

    let f_bar = rot_z(sp.yaw_des).transpose() * f_des;
    let alpha_x_des = (-f_bar.y).atan2(f_bar.x.hypot(f_bar.z));
    let alpha_y_des = f_bar.x.atan2(f_bar.z);
    let f_t = (fb.rotation * Vector3::z()).dot(&f_des);
    let u_pos = alloc.hover_thrust * (f_t / spec.weight());

    state.e_i_r += (e_dr + gains.c * e_r) * dt;
    clamp_vector(&mut state.e_i_r, cfg.integral_limit_pos);

    Ok(PositionOutput { f_des, alpha_x_des, alpha_y_des, f_t, u_pos })
}

/// Sums the loop contributions and clips to the actuator range `[0, u_max]`,
/// reporting which rotors saturated.
pub fn aggregate(
    u_att: &Vector4<f64>,
    u_pos: &Vector4<f64>,
    u_max: f64,
) -> (Vector4<f64>, [bool; 4]) {
    let sum = u_att + u_pos;
    let mut clipped = sum;
    let mut saturated = [false; 4];
    for i in 0..4 {
        clipped[i] = sum[i].clamp(0.0, u_max);
        saturated[i] = clipped[i] != sum[i];
    }
    (clipped, saturated)
}

/// Per-constraint outcome of the complete-stability gain check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCheck {
    /// All three constraints hold strictly.
    pub satisfied: bool,
    /// Slack of `k_P_min > γ·k_P_max` (positive when satisfied).
    pub kp_margin: f64,
    /// The three-term upper bound on `c`.
    pub c_bound: f64,
    /// Slack of `c < c_bound`.
    pub c_margin: f64,
    /// Left side `λ_min(W1)·λ_min(W2)` of the convergence constraint.
    pub convergence_lhs: f64,
    /// Right side `σ²_max(W12)/4`.
    pub convergence_rhs: f64,
    /// `convergence_lhs − convergence_rhs`.
    pub convergence_margin: f64,
}

/// Evaluates the three complete-stability gain constraints for one form.
///
/// Constraint (a): `k_P_min > γ·k_P_max`. Constraint (b): `c` below the
/// three-term bound
/// `min{4(k_P_min−γk_P_max)(k_D_min−γk_D_max)/(k_D_max²(1+γ)²+4(k_P_min−γk_P_max)),
/// k_D_min−γk_D_max, √k_P_min}`. Constraint (c):
/// `λ_min(W1)·λ_min(W2) > σ²_max(W12)/4` with
///
/// * `W1 = ½[[c(k_P_min−γk_P_max), −c·k_D_max(1+γ)/2], [·, −c+k_D_min−γk_D_max]]`,
/// * `W12 = [c(σ_max(Q_tran K_x)+O)/m, (σ_max(Q_tran K_x)+O)/m + k_P_max·e_r_max]ᵀ`,
/// * `W2 = −(Ā+B̄K_x)`, `λ_min` taken over its symmetric part.
///
/// `gamma` bounds the sine of the attitude error, `o_bound` the residual
/// translational acceleration, and `e_r_max` the position error. This is a
/// diagnostic: it always returns the margins, satisfied or not.
#[allow(clippy::too_many_arguments)]
pub fn gain_check(
    pos: &PositionGains,
    k_x: &SMatrix<f64, 4, 9>,
    alloc: &AllocationSet,
    inertia_model: &InertiaModel,
    gamma: f64,
    o_bound: f64,
    e_r_max: f64,
    mass: f64,
) -> GainCheck {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    assert!(o_bound > 0.0 && e_r_max > 0.0 && mass > 0.0);

    let kp = pos.k_p.diagonal();
    let kd = pos.k_d.diagonal();
    let (kp_min, kp_max) = (kp.min(), kp.max());
    let (kd_min, kd_max) = (kd.min(), kd.max());

    let kp_margin = kp_min - gamma * kp_max;
    let kd_slack = kd_min - gamma * kd_max;

    let quad = 4.0 * kp_margin * kd_slack
        / (kd_max * kd_max * (1.0 + gamma).powi(2) + 4.0 * kp_margin);
    let c_bound = quad.min(kd_slack).min(kp_min.sqrt());
    let c_margin = c_bound - pos.c;

    let w1 = 0.5
        * nalgebra::Matrix2::new(
            pos.c * kp_margin,
            -pos.c * kd_max * (1.0 + gamma) / 2.0,
            -pos.c * kd_max * (1.0 + gamma) / 2.0,
            -pos.c + kd_slack,
        );
    let sigma_qk = (alloc.q_tran * k_x).svd(false, false).singular_values.max();
    let w12 = nalgebra::Vector2::new(
        pos.c * (sigma_qk + o_bound) / mass,
        (sigma_qk + o_bound) / mass + kp_max * e_r_max,
    );
    let (a_bar, b_bar) = attitude_state_matrices(alloc, inertia_model);
    let w2 = -(a_bar + b_bar * k_x);
    let w2_sym = (w2 + w2.transpose()) * 0.5;

    let convergence_lhs = w1.symmetric_eigenvalues().min() * w2_sym.symmetric_eigenvalues().min();
    let convergence_rhs = w12.norm_squared() / 4.0;
    let convergence_margin = convergence_lhs - convergence_rhs;

    GainCheck {
        satisfied: kp_margin > 0.0 && c_margin > 0.0 && convergence_margin > 0.0,
        kp_margin,
        c_bound,
        c_margin,
        convergence_lhs,
        convergence_rhs,
        convergence_margin,
    }
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

/// Roll-pitch-yaw of a world rotation under the z-y-x convention used by the
/// attitude state.
pub fn rpy_of(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) =
        nalgebra::Rotation3::from_matrix_unchecked(*rotation).euler_angles();
    Vector3::new(roll, pitch, yaw)
}

struct GainCache {
    q: JointConfig,
    gains: AttitudeGains,
}

/// Stateful cascaded controller: position loop, attitude loop, aggregation,
/// with the attitude gain re-synthesized whenever the joints move more than
/// the configured threshold since the last synthesis.
///
/// Single-writer: one `step` call at a time.
pub struct Controller {
    spec: RobotSpec,
    cfg: ControlConfig,
    state: ControlState,
    cache: Option<GainCache>,
}

impl Controller {
    pub fn new(spec: RobotSpec, cfg: ControlConfig) -> Self {
        Self { spec, cfg, state: ControlState::default(), cache: None }
    }

    pub fn state(&self) -> &ControlState {
        &self.state
    }

    pub fn config(&self) -> &ControlConfig {
        &self.cfg
    }

    /// The currently cached attitude gains, if any step ran yet.
    pub fn gains(&self) -> Option<&AttitudeGains> {
        self.cache.as_ref().map(|c| &c.gains)
    }

    /// Resets the integrators (e.g. on arming or mode switches).
    pub fn reset(&mut self) {
        self.state = ControlState::default();
    }

    /// Runs one full cascaded step at the given joint configuration.
    ///
    /// # Errors
    /// Propagates [`Error::SingularForm`] from allocation,
    /// [`Error::NotStabilizable`] from gain synthesis, and
    /// [`Error::DegenerateForce`] from the position loop.
    pub fn step(
        &mut self,
        q: &JointConfig,
        sp: &Setpoint,
        fb: &Feedback,
        dt: f64,
    ) -> Result<ControlOutput> {
        let alloc = allocation(&self.spec, q)?;
        let inertia_model = inertia(&self.spec, q);

        let needs_synth = match &self.cache {
            None => true,
            Some(cache) => {
                let dq = (q.q1 - cache.q.q1).hypot(q.q2 - cache.q.q2);
                dq > self.cfg.resynth_threshold
            }
        };
        if needs_synth {
            let gains = lqi_synthesize(&alloc, &inertia_model, &self.cfg)?;
            self.cache = Some(GainCache { q: *q, gains });
        }
        let gains = &self.cache.as_ref().expect("gains synthesized above").gains;

        let pos =
            position_step(&mut self.state, sp, fb, &alloc, &inertia_model, &self.cfg, &self.spec, dt)?;

        let rpy = rpy_of(&fb.rotation);
        let alpha_des = Vector3::new(pos.alpha_x_des, pos.alpha_y_des, sp.yaw_des);
        let e_alpha = Vector3::new(
            wrap_angle(alpha_des.x - rpy.x),
            wrap_angle(alpha_des.y - rpy.y),
            wrap_angle(alpha_des.z - rpy.z),
        );
        // The error state tracks both the desired attitude and its rate; the
        // rate reference is differenced from consecutive desired attitudes so
        // a moving reference (e.g. a spinning yaw) leaves no ramp error.
        let alpha_dot_des = match self.state.last_alpha_des {
            Some(last) if dt > 0.0 => Vector3::new(
                wrap_angle(alpha_des.x - last.x) / dt,
                wrap_angle(alpha_des.y - last.y) / dt,
                wrap_angle(alpha_des.z - last.z) / dt,
            ),
            _ => Vector3::zeros(),
        };
        let e_x = SVector::<f64, 6>::from_column_slice(&[
            e_alpha.x,
            alpha_dot_des.x - fb.omega.x,
            e_alpha.y,
            alpha_dot_des.y - fb.omega.y,
            e_alpha.z,
            alpha_dot_des.z - fb.omega.z,
        ]);
        let u_att = attitude_step(
            &mut self.state,
            &e_x,
            &fb.omega,
            &inertia_model,
            &alloc,
            gains,
            dt,
            self.cfg.integral_limit_att,
        );

        let (u_des, saturated) = aggregate(&u_att, &pos.u_pos, self.spec.u_max);
        self.state.last_alpha_des = Some(alpha_des);
        Ok(ControlOutput {
            u_des,
            f_des: pos.f_des,
            alpha_des,
            f_t: pos.f_t,
            saturated,
            u_att,
            u_pos: pos.u_pos,
        })
    }
}
