//! Joint-dependent kinematics of the four-link chain: link and rotor frames,
//! the center-of-gravity frame `{C}`, the hover-level frame `{CoG}`,
//! allocation matrices, and the total inertia tensor.
//!
//! Geometry. Links 1–4 are equal rods chained tip-to-tail in the body plane.
//! Joint `q1` sits between links 1 and 2, links 2 and 3 are rigidly joined,
//! and joint `q2` sits between links 3 and 4, so the link headings relative
//! to link 1 are `θ = [0, q1, q1, q1 − q2]`. Rotor `i` is mounted on link `i`
//! (at the mid-link position by default) and tilted by the fixed angle
//! `(−1)^i · β` about the link axis, so thrust directions alternate between
//! leaning toward `−ŷ_i` and `+ŷ_i` of their carrying link.
//!
//! Frame `{C}` has its origin at the total center of gravity and the
//! orientation of link 1. Frame `{CoG}` shares the origin and is rotated by
//! roll `α_x` then pitch `α_y` so that the hovering thrust resultant is
//! purely vertical ("level in hovering state").

use nalgebra::{Matrix3, Matrix4, RowVector4, SMatrix, Vector3, Vector4};

use crate::config::{JointConfig, RobotSpec};
use crate::numerics::{rot_x, rot_z};
use crate::{Error, Result};

/// A rigid transform `{A}→{B}`: `p_A = rotation · p_B + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl FramePose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Maps a point expressed in the child frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Tilt sign `(−1)^i` of rotor `i` (1-based link index).
pub fn tilt_sign(link: usize) -> f64 {
    if link % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Forward-kinematics snapshot for one joint configuration, expressed in the
/// link-1 frame `{L1}` (chain root at the proximal end of link 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    /// Link headings `θ_i` relative to link 1 (rad).
    pub headings: [f64; 4],
    /// Pose of each link frame `{L_i}` in `{L1}`.
    pub link_frames: [FramePose; 4],
    /// Pose of each rotor frame `{F_i}` in `{L1}` (tilted by `(−1)^i β`).
    pub rotor_frames: [FramePose; 4],
    /// Per-link center of gravity (rod + rotor point mass) in `{L1}`.
    pub link_cogs: [Vector3<f64>; 4],
    /// Pose of `{C}` in `{L1}`: identity rotation, origin at the total CoG.
    pub c_pose: FramePose,
}

impl Kinematics {
    /// Rotor position expressed in `{C}` (1-based link index).
    pub fn rotor_position_in_c(&self, link: usize) -> Vector3<f64> {
        self.rotor_frames[link - 1].translation - self.c_pose.translation
    }

    /// Rotor orientation in `{C}` (identical to its `{L1}` orientation since
    /// `{C}` carries the link-1 orientation).
    pub fn rotor_rotation_in_c(&self, link: usize) -> Matrix3<f64> {
        self.rotor_frames[link - 1].rotation
    }

    /// Position of an arbitrary mount point on a link, expressed in `{C}`.
    pub fn point_on_link_in_c(&self, link: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        self.link_frames[link - 1].transform_point(offset) - self.c_pose.translation
    }
}

/// Computes link frames, rotor frames, per-link CoGs, and the `{C}` pose.
///
/// # Arguments
/// * `spec` — platform parameters.
/// * `q` — joint configuration (must be finite).
///
/// # Example
/// ```
/// use tiltlink::config::{JointConfig, RobotSpec};
/// use tiltlink::model::forward_kinematics;
///
/// let kin = forward_kinematics(&RobotSpec::default(), &JointConfig::new(0.0, 0.0));
/// // Straight chain: every heading is zero and the CoG lies on the x-axis.
/// assert!(kin.headings.iter().all(|&t| t == 0.0));
/// assert!(kin.c_pose.translation.y.abs() < 1e-15);
/// ```
pub fn forward_kinematics(spec: &RobotSpec, q: &JointConfig) -> Kinematics {
    assert!(q.q1.is_finite() && q.q2.is_finite(), "joint angles must be finite");
    let headings = [0.0, q.q1, q.q1, q.q1 - q.q2];
    let l = spec.link_length;

    let mut link_frames = [FramePose::identity(); 4];
    let mut origin = Vector3::zeros();
    for (i, &theta) in headings.iter().enumerate() {
        let rotation = rot_z(theta);
        link_frames[i] = FramePose { rotation, translation: origin };
        origin += rotation * Vector3::new(l, 0.0, 0.0);
    }

    let mut rotor_frames = [FramePose::identity(); 4];
    let mut link_cogs = [Vector3::zeros(); 4];
    let f = spec.rotor_mass_fraction;
    for i in 0..4 {
        let link = &link_frames[i];
        let mount = link.transform_point(&spec.rotor_offsets[i]);
        rotor_frames[i] = FramePose {
            rotation: link.rotation * rot_x(tilt_sign(i + 1) * spec.tilt_angle),
            translation: mount,
        };
        let rod_center = link.transform_point(&Vector3::new(l / 2.0, 0.0, 0.0));
        link_cogs[i] = rod_center * (1.0 - f) + mount * f;
    }

    let m_total = spec.mass_total();
    let mut cog = Vector3::zeros();
    for (mass, lc) in spec.link_masses.iter().zip(&link_cogs) {
        cog += lc * *mass;
    }
    cog /= m_total;

    Kinematics {
        headings,
        link_frames,
        rotor_frames,
        link_cogs,
        c_pose: FramePose { rotation: Matrix3::identity(), translation: cog },
    }
}

/// Allocation matrices of one joint configuration in frames `{C}` and
/// `{CoG}`, plus the level-frame rotation between them.
///
/// Columns of `q_tran_c`/`q_rot_c` are the unit-thrust force and torque of
/// each rotor about the CoG, in `{C}`; `q_tran`/`q_rot` are the same rows
/// rotated into `{CoG}` by `r_cog_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSet {
    pub q_tran_c: SMatrix<f64, 3, 4>,
    pub q_rot_c: SMatrix<f64, 3, 4>,
    pub r_cog_c: Matrix3<f64>,
    pub q_tran: SMatrix<f64, 3, 4>,
    pub q_rot: SMatrix<f64, 3, 4>,
    /// Roll of `{CoG}` relative to `{C}` (rad).
    pub alpha_x: f64,
    /// Pitch of `{CoG}` relative to `{C}` (rad).
    pub alpha_y: f64,
    /// Hovering thrust vector `u_s` (N), solved during construction: the only
    /// thrust combination whose torque vanishes, scaled so the force
    /// magnitude equals the weight `m_Σ g`. Its direction defines the lean
    /// angles `α_x`, `α_y`, so in the `{CoG}` frame the force is exactly
    /// `[0, 0, m_Σ g]`.
    pub hover_thrust: Vector4<f64>,
    /// Analytic z-torque gradient: `q_rot_c` row 3 equals `sin β · w`.
    pub w_gradient: RowVector4<f64>,
    /// Condition number of the hover-balance system.
    pub condition: f64,
}

/// Solves the 4×4 hover-balance system for the given wrench rows.
///
/// The stacked system of the vertical-force row and the three torque rows is
/// used, except that the z-torque row (which carries a global `sin β` factor
/// and therefore degenerates at `β = 0` although the balance itself does not)
/// is replaced by its analytic gradient `w`; for `β > 0` this is an exact row
/// rescaling with identical solution, and at `β = 0` it selects the
/// continuous limit.
pub(crate) fn hover_solve(
    q_tran_c: &SMatrix<f64, 3, 4>,
    q_rot_c: &SMatrix<f64, 3, 4>,
    w_gradient: &RowVector4<f64>,
    weight: f64,
) -> Result<(Vector4<f64>, f64)> {
    let mut system = Matrix4::<f64>::zeros();
    system.row_mut(0).copy_from(&q_tran_c.row(2));
    system.row_mut(1).copy_from(&q_rot_c.row(0));
    system.row_mut(2).copy_from(&q_rot_c.row(1));
    system.row_mut(3).copy_from(w_gradient);

    let svd = system.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= 1e12) {
        return Err(Error::SingularForm { cond: condition });
    }

    let rhs = Vector4::new(1.0, 0.0, 0.0, 0.0);
    let u_dash = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularForm { cond: condition })?;
    // `u′` balances the torques with unit vertical force in `{C}`; at
    // asymmetric forms its lateral force does not cancel, so the magnitude
    // `‖Q′_tran u′‖` exceeds the vertical component. Rescaling by the weight
    // over that magnitude makes the hover force support exactly `m_Σ g`.
    let scale = weight / (q_tran_c * u_dash).norm();
    Ok((u_dash * scale, condition))
}

/// Builds the allocation set for one joint configuration.
///
/// # Arguments
/// * `spec` — platform parameters.
/// * `q` — joint configuration.
///
/// # Errors
/// [`Error::SingularForm`] when the hover-balance system is rank-deficient
/// (condition number above 1e12), e.g. the straight chain where all rotors
/// are collinear and roll authority vanishes.
///
/// # Example
/// ```
/// use tiltlink::config::{JointConfig, RobotSpec};
/// use tiltlink::model::allocation;
///
/// let alloc = allocation(
///     &RobotSpec::default(),
///     &JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
/// )
/// .unwrap();
/// // The symmetric staircase form hovers level: equal thrusts, no lean.
/// assert!(alloc.alpha_x.abs() < 1e-9 && alloc.alpha_y.abs() < 1e-9);
/// ```
pub fn allocation(spec: &RobotSpec, q: &JointConfig) -> Result<AllocationSet> {
    allocation_from_kinematics(spec, &forward_kinematics(spec, q))
}

/// Builds the allocation set from an existing kinematics snapshot.
pub fn allocation_from_kinematics(spec: &RobotSpec, kin: &Kinematics) -> Result<AllocationSet> {
    let mut q_tran_c = SMatrix::<f64, 3, 4>::zeros();
    let mut q_rot_c = SMatrix::<f64, 3, 4>::zeros();
    let mut w_gradient = RowVector4::<f64>::zeros();
    for i in 1..=4 {
        let p = kin.rotor_position_in_c(i);
        let r_f = kin.rotor_rotation_in_c(i);
        let thrust_dir = r_f * Vector3::z();
        q_tran_c.set_column(i - 1, &thrust_dir);
        q_rot_c.set_column(i - 1, &p.cross(&thrust_dir));
        let x_link = kin.link_frames[i - 1].rotation * Vector3::x();
        w_gradient[i - 1] = -tilt_sign(i) * p.dot(&x_link);
    }

    let (hover_thrust, condition) = hover_solve(&q_tran_c, &q_rot_c, &w_gradient, spec.weight())?;

    let f_s = q_tran_c * hover_thrust;
    let alpha_x = f_s.y.atan2(f_s.z);
    let alpha_y = (-f_s.x).atan2(f_s.y.hypot(f_s.z));
    let r_cog_c = crate::numerics::rot_y(alpha_y) * rot_x(alpha_x);

    Ok(AllocationSet {
        q_tran_c,
        q_rot_c,
        r_cog_c,
        q_tran: r_cog_c * q_tran_c,
        q_rot: r_cog_c * q_rot_c,
        alpha_x,
        alpha_y,
        hover_thrust,
        w_gradient,
        condition,
    })
}

/// Total inertia about the CoG.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaModel {
    /// Inertia tensor in the `{CoG}` frame (kg·m²).
    pub i_sigma: Matrix3<f64>,
    /// `{C}` origin (the total CoG) expressed in `{L1}` (m).
    pub cog_offset_in_l1: Vector3<f64>,
}

/// Assembles the total inertia tensor about the CoG.
///
/// Each link contributes a uniform thin rod over its length plus a point mass
/// (`rotor_mass_fraction` of the link mass) at the rotor mount, transported by
/// the parallel-axis theorem. The tensor is expressed in the `{CoG}` frame;
/// at singular forms (where the level frame is undefined because hovering is
/// impossible) the `{C}` axes are used unrotated.
///
/// # Example
/// ```
/// use tiltlink::config::{JointConfig, RobotSpec};
/// use tiltlink::model::inertia;
///
/// let model = inertia(&RobotSpec::default(), &JointConfig::new(0.0, 0.0));
/// // Straight chain along x: spinning about x is easiest.
/// let i = model.i_sigma;
/// assert!(i[(0, 0)] < i[(1, 1)] && i[(0, 0)] < i[(2, 2)]);
/// ```
pub fn inertia(spec: &RobotSpec, q: &JointConfig) -> InertiaModel {
    let kin = forward_kinematics(spec, q);
    let cog = kin.c_pose.translation;
    let l = spec.link_length;
    let f = spec.rotor_mass_fraction;

    let mut i_c = Matrix3::<f64>::zeros();
    for i in 0..4 {
        let m_rod = spec.link_masses[i] * (1.0 - f);
        let m_pt = spec.link_masses[i] * f;
        let u = kin.link_frames[i].rotation * Vector3::x();
        let rod_center = kin.link_frames[i].transform_point(&Vector3::new(l / 2.0, 0.0, 0.0));

        // Thin rod about its own center, then parallel-axis to the CoG.
        let i_own = m_rod * l * l / 12.0;
        i_c += i_own * (Matrix3::identity() - u * u.transpose());
        for (mass, point) in [(m_rod, rod_center), (m_pt, kin.rotor_frames[i].translation)] {
            let d = point - cog;
            i_c += mass * (d.dot(&d) * Matrix3::identity() - d * d.transpose());
        }
    }

    let r = allocation_from_kinematics(spec, &kin)
        .map(|a| a.r_cog_c)
        .unwrap_or_else(|_| Matrix3::identity());
    InertiaModel { i_sigma: r * i_c * r.transpose(), cog_offset_in_l1: cog }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn spec() -> RobotSpec {
        RobotSpec::default()
    }

    #[test]
    fn straight_form_is_collinear_with_cog_on_axis() {
        let kin = forward_kinematics(&spec(), &JointConfig::new(0.0, 0.0));
        for i in 1..=4 {
            let p = kin.rotor_frames[i - 1].translation;
            assert_eq!(p.y, 0.0);
            assert_eq!(p.z, 0.0);
        }
        assert_eq!(kin.c_pose.translation.y, 0.0);
    }

    #[test]
    fn symmetric_form_cog_is_centroid_of_link_cogs() {
        let kin = forward_kinematics(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2));
        let centroid = kin.link_cogs.iter().sum::<Vector3<f64>>() / 4.0;
        assert_relative_eq!(kin.c_pose.translation, centroid, epsilon = 1e-14);
    }

    #[test]
    fn rotor_positions_match_independent_transform_chain() {
        // Independent oracle: compose homogeneous transforms link by link and
        // cross-check positions frozen from a scripted reference computation.
        let s = spec();
        let q = JointConfig::new(FRAC_PI_4, FRAC_PI_4);
        let kin = forward_kinematics(&s, &q);

        let mut rot = Matrix3::<f64>::identity();
        let mut origin = Vector3::<f64>::zeros();
        let mut oracle = Vec::new();
        let rel = [0.0, q.q1, 0.0, -q.q2]; // joint rotations between consecutive links
        for i in 0..4 {
            rot *= rot_z(rel[i]);
            oracle.push(origin + rot * s.rotor_offsets[i]);
            origin += rot * Vector3::new(s.link_length, 0.0, 0.0);
        }
        for i in 0..4 {
            assert_relative_eq!(kin.rotor_frames[i].translation, oracle[i], epsilon = 1e-12);
        }

        // Frozen reference values for the same configuration.
        let frozen = [
            Vector3::new(0.2, 0.0, 0.0),
            Vector3::new(0.741421356237310, 0.141421356237310, 0.0),
            Vector3::new(1.307106781186548, 0.707106781186548, 0.0),
            Vector3::new(1.848528137423857, 0.848528137423857, 0.0),
        ];
        for i in 0..4 {
            assert_relative_eq!(kin.rotor_frames[i].translation, frozen[i], epsilon = 1e-12);
        }
        assert_relative_eq!(
            kin.c_pose.translation,
            Vector3::new(1.024264068711929, 0.424264068711928, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn frames_are_orthonormal() {
        let qs = [(0.3, -0.8), (1.2, 0.4), (-1.5, 1.5), (0.0, 1.0)];
        for (q1, q2) in qs {
            let kin = forward_kinematics(&spec(), &JointConfig::new(q1, q2));
            for frame in kin.link_frames.iter().chain(&kin.rotor_frames) {
                let r = frame.rotation;
                assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-10);
                assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn untilted_rotors_thrust_straight_up() {
        let mut s = spec();
        s.tilt_angle = 0.0;
        let alloc = allocation(&s, &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        for col in 0..4 {
            assert_relative_eq!(
                Vector3::from(alloc.q_tran_c.column(col)),
                Vector3::z(),
                epsilon = 1e-14
            );
        }
        assert_eq!(alloc.alpha_x, 0.0);
        assert_eq!(alloc.alpha_y, 0.0);
        // Rows 1–2 of the level-frame force map vanish.
        assert!(alloc.q_tran.row(0).norm() < 1e-14);
        assert!(alloc.q_tran.row(1).norm() < 1e-14);
    }

    #[test]
    fn symmetric_form_hovers_level() {
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        assert!(alloc.alpha_x.abs() < 1e-9);
        assert!(alloc.alpha_y.abs() < 1e-9);
        for i in 0..4 {
            assert_relative_eq!(alloc.hover_thrust[i], 8.467085651278, epsilon = 1e-9);
        }
    }

    #[test]
    fn level_frame_balances_hover_wrench() {
        for (q1, q2) in [(FRAC_PI_2, FRAC_PI_2), (FRAC_PI_4, FRAC_PI_4), (FRAC_PI_2, 0.0)] {
            let alloc = allocation(&spec(), &JointConfig::new(q1, q2)).unwrap();
            let force = alloc.q_tran * alloc.hover_thrust;
            let torque = alloc.q_rot * alloc.hover_thrust;
            // Force is purely vertical in {CoG} by construction of the level
            // rotation; torque balance is part of the hover solve.
            assert!(force.x.abs() < 1e-9, "lateral x force {}", force.x);
            assert!(force.y.abs() < 1e-9, "lateral y force {}", force.y);
            assert!(torque.norm() < 1e-9, "hover torque {}", torque.norm());
        }
        // At lateral-balanced (symmetric) forms the vertical component is the
        // exact weight.
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        let force = alloc.q_tran * alloc.hover_thrust;
        assert_relative_eq!(force.z, spec().weight(), epsilon = 1e-9);
    }

    #[test]
    fn level_rotation_maps_thrust_resultant_to_vertical() {
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, 0.0)).unwrap();
        assert_relative_eq!(alloc.alpha_x, 0.038545000415462, epsilon = 1e-12);
        assert_relative_eq!(alloc.alpha_y, -0.014312192294491, epsilon = 1e-12);
        let f_s = alloc.q_tran_c * alloc.hover_thrust;
        let lifted = alloc.r_cog_c * f_s;
        assert!(lifted.x.abs() < 1e-12 && lifted.y.abs() < 1e-12);
        assert_relative_eq!(lifted.z, f_s.norm(), epsilon = 1e-12);
        // The hover force magnitude is normalized to the exact weight, so the
        // lifted vertical component is the weight itself.
        assert_relative_eq!(lifted.z, spec().weight(), epsilon = 1e-9);
        // Third row of the rotation is the normalized resultant direction.
        let row3 = alloc.r_cog_c.row(2).transpose();
        assert_relative_eq!(row3, f_s.normalize(), epsilon = 1e-12);
    }

    #[test]
    fn torque_columns_match_cross_product_oracle() {
        let s = spec();
        let q = JointConfig::new(0.7, -0.4);
        let kin = forward_kinematics(&s, &q);
        let alloc = allocation_from_kinematics(&s, &kin).unwrap();
        for i in 1..=4 {
            let p = kin.rotor_position_in_c(i);
            let f = kin.rotor_rotation_in_c(i) * Vector3::z();
            assert_relative_eq!(
                Vector3::from(alloc.q_rot_c.column(i - 1)),
                p.cross(&f),
                epsilon = 1e-14
            );
        }
        // The z-torque row is exactly sin β times the analytic gradient row.
        let scaled = alloc.w_gradient * s.tilt_angle.sin();
        assert_relative_eq!(
            RowVector4::from(alloc.q_rot_c.row(2)),
            scaled,
            epsilon = 1e-13
        );
    }

    #[test]
    fn straight_form_is_singular() {
        match allocation(&spec(), &JointConfig::new(0.0, 0.0)) {
            Err(Error::SingularForm { cond }) => assert!(cond > 1e12),
            other => panic!("expected SingularForm, got {other:?}"),
        }
    }

    #[test]
    fn allocation_is_deterministic() {
        let q = JointConfig::new(0.9, -1.1);
        let a = allocation(&spec(), &q).unwrap();
        let b = allocation(&spec(), &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_matches_frozen_reference_values() {
        let i_sym = inertia(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).i_sigma;
        assert_relative_eq!(i_sym[(0, 0)], 0.85, epsilon = 1e-12);
        assert_relative_eq!(i_sym[(1, 1)], 0.238, epsilon = 1e-12);
        assert_relative_eq!(i_sym[(2, 2)], 1.088, epsilon = 1e-12);
        assert_relative_eq!(i_sym[(0, 1)], -0.357, epsilon = 1e-12);

        let i_q = inertia(&spec(), &JointConfig::new(FRAC_PI_4, FRAC_PI_4)).i_sigma;
        assert_relative_eq!(i_q[(0, 0)], 0.425000000000000, epsilon = 1e-9);
        assert_relative_eq!(i_q[(1, 1)], 1.167874241767195, epsilon = 1e-9);
        assert_relative_eq!(i_q[(2, 2)], 1.592874241767195, epsilon = 1e-9);
    }

    #[test]
    fn inertia_is_spd_with_planar_identity() {
        for (q1, q2) in [(FRAC_PI_2, FRAC_PI_2), (0.8, -1.3)] {
            let i = inertia(&spec(), &JointConfig::new(q1, q2)).i_sigma;
            assert_relative_eq!(i, i.transpose(), epsilon = 1e-12);
            let eig = i.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "inertia not positive definite at ({q1},{q2})");
        }
        // The straight chain puts all mass on the roll axis: the tensor is
        // only positive semi-definite there (zero roll inertia).
        let straight = inertia(&spec(), &JointConfig::new(0.0, 0.0)).i_sigma;
        assert!(straight.symmetric_eigenvalues().min() >= -1e-12);
        assert!(straight[(0, 0)].abs() < 1e-12);
        // Planar mass distribution (zero mount height): I_zz = I_xx + I_yy in
        // the in-plane axes.
        let i = inertia(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).i_sigma;
        assert_relative_eq!(i[(2, 2)], i[(0, 0)] + i[(1, 1)], epsilon = 1e-12);
    }

    #[test]
    fn straight_form_minimizes_roll_inertia() {
        let i = inertia(&spec(), &JointConfig::new(0.0, 0.0)).i_sigma;
        assert!(i[(0, 0)] < i[(1, 1)]);
        assert!(i[(0, 0)] < i[(2, 2)]);
    }

    #[test]
    fn doubling_masses_doubles_inertia() {
        let q = JointConfig::new(0.6, -0.9);
        let base = inertia(&spec(), &q).i_sigma;
        let mut heavy = spec();
        heavy.link_masses = [1.7; 4];
        let doubled = inertia(&heavy, &q).i_sigma;
        assert_relative_eq!(doubled, base * 2.0, epsilon = 1e-12);
    }
}
