//! Tilt-angle design study and deformation-validity analysis: hovering
//! thrust, z-torque extremes, residual horizontal force, aerodynamic
//! interference range, weighted-sum tilt optimization, the feasible
//! control-torque convex, and the valid joint range.
//!
//! All wrench quantities here are expressed in `{C}` (the un-leveled CoG
//! frame), i.e. they use the primed allocation rows.

use nalgebra::{Vector3, Vector4};
use rayon::prelude::*;

use crate::config::{JointConfig, RobotSpec};
use crate::model::{allocation, AllocationSet};
use crate::{Error, Result};

/// Default lower margin on every hovering-thrust component (N).
pub const DEFAULT_U_THRESHOLD: f64 = 0.5;
/// Default lower bound on the guaranteed control torque (N·m).
pub const DEFAULT_TAU_THRESHOLD: f64 = 0.05;
/// Default weighted-sum objective weights over
/// `[thrust level, yaw-torque span, horizontal force, interference range]`;
/// the third entry is heaviest to favor horizontal-force suppression.
pub const DEFAULT_OPT_WEIGHTS: [f64; 4] = [1.0, 1.0, 4.0, 1.0];

/// The hovering thrust vector and its component extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct HoverThrust {
    /// Thrust per rotor that balances gravity with zero torque (N).
    pub u_s: Vector4<f64>,
    /// Smallest component (N).
    pub u_s_min: f64,
    /// Largest component (N).
    pub u_s_max: f64,
}

/// Extracts the hovering thrust solved during allocation.
///
/// The thrust combination is the unique solution of the vertical-force /
/// zero-torque balance, scaled so the force magnitude equals the weight
/// `m_Σ g` (the direction of that force sets the platform's hovering lean).
///
/// # Errors
/// [`Error::SingularForm`] when the balance system's condition number
/// exceeds 1e12 (all rotors collinear, no roll authority); such forms cannot
/// hover.
///
/// # Example
/// ```
/// use tiltlink::config::{JointConfig, RobotSpec};
/// use tiltlink::design::hovering_thrust;
/// use tiltlink::model::allocation;
///
/// let spec = RobotSpec::default();
/// let q = JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
/// let hover = hovering_thrust(&allocation(&spec, &q).unwrap(), &spec).unwrap();
/// assert!((hover.u_s_max - hover.u_s_min).abs() < 1e-9); // symmetric form
/// ```
pub fn hovering_thrust(alloc: &AllocationSet, spec: &RobotSpec) -> Result<HoverThrust> {
    if !(alloc.condition <= 1e12) {
        return Err(Error::SingularForm { cond: alloc.condition });
    }
    let _ = spec;
    let u_s = alloc.hover_thrust;
    Ok(HoverThrust { u_s, u_s_min: u_s.min(), u_s_max: u_s.max() })
}

/// Extreme achievable z-torques over the thrust box `0 ≤ uᵢ ≤ u_max`.
///
/// The objective `c·u` with `c` the z-torque row is linear, so the box LP has
/// the closed-form solution `min = Σ min(0, cᵢ)·u_max`,
/// `max = Σ max(0, cᵢ)·u_max`.
pub fn tau_z_extremes(alloc: &AllocationSet, u_max: f64) -> (f64, f64) {
    assert!(u_max > 0.0, "u_max must be positive");
    let c = alloc.q_rot_c.row(2);
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..4 {
        lo += c[i].min(0.0) * u_max;
        hi += c[i].max(0.0) * u_max;
    }
    (lo, hi)
}

/// Norm of the horizontal force that unavoidably accompanies a desired
/// torque: `‖Q′_tran,xy · pinv(Q′_rot) · τ_des‖` with the minimum-norm
/// right inverse.
///
/// # Errors
/// [`Error::RankDeficient`] when the torque map has row rank below 3 while
/// the lateral force rows are nonzero (near-singular forms make this value
/// diverge). With untilted rotors the lateral rows vanish identically and the
/// result is exactly zero.
pub fn horizontal_force_norm(alloc: &AllocationSet, tau_des: &Vector3<f64>) -> Result<f64> {
    let svd = alloc.q_rot_c.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax.max(1.0))
        .count();
    if rank < 3 {
        let xy_mag = alloc.q_tran_c.row(0).norm() + alloc.q_tran_c.row(1).norm();
        if xy_mag < 1e-12 {
            return Ok(0.0);
        }
        return Err(Error::RankDeficient { rank });
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|_| Error::RankDeficient { rank })?;
    let u = pinv * tau_des;
    let f = alloc.q_tran_c * u;
    Ok(f.fixed_rows::<2>(0).norm())
}

/// Diameter of the airflow influence region of one tilted propeller:
/// `D_prop / cos β`.
pub fn aero_interference(spec: &RobotSpec, beta: f64) -> f64 {
    assert!(
        (0.0..std::f64::consts::FRAC_PI_2).contains(&beta),
        "tilt angle must lie in [0, pi/2)"
    );
    spec.prop_diameter / beta.cos()
}

/// Torque-related design quantities of one form at one tilt angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueEnvelope {
    pub tau_z_min: f64,
    pub tau_z_max: f64,
    /// Residual horizontal-force norm for the probe torque (N).
    pub f_xy_norm: f64,
    /// Airflow influence diameter (m).
    pub l_air: f64,
}

/// Assembles the torque envelope (z-torque extremes, horizontal force for
/// `tau_des`, interference range) for one allocation.
///
/// # Errors
/// Propagates [`Error::RankDeficient`] from the horizontal-force solve.
pub fn torque_envelope(
    alloc: &AllocationSet,
    spec: &RobotSpec,
    tau_des: &Vector3<f64>,
) -> Result<TorqueEnvelope> {
    let (tau_z_min, tau_z_max) = tau_z_extremes(alloc, spec.u_max);
    Ok(TorqueEnvelope {
        tau_z_min,
        tau_z_max,
        f_xy_norm: horizontal_force_norm(alloc, tau_des)?,
        l_air: aero_interference(spec, spec.tilt_angle),
    })
}

/// The feasible control-torque convex (a zonotope spanned by the unit-thrust
/// torque generators) and its guaranteed inner radius.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueConvex {
    /// Unit-thrust torque of each rotor in `{C}` (N·m per N).
    pub generators: [Vector3<f64>; 4],
    /// Guaranteed minimum control torque: radius of the largest origin-centered
    /// ball inside the convex (N·m).
    pub tau_min: f64,
    /// Distance to the face spanned by each ordered generator pair `(i, j)`
    /// (1-based rotor indices); parallel pairs are skipped.
    pub face_distances: Vec<((usize, usize), f64)>,
}

/// Support function of the thrust-box torque set in direction `dir`
/// (need not be normalized beyond what the caller wants):
/// `Σ_k max(0, dir·v_k)·u_max`.
pub fn support_distance(generators: &[Vector3<f64>; 4], u_max: f64, dir: &Vector3<f64>) -> f64 {
    generators.iter().map(|v| dir.dot(v).max(0.0) * u_max).sum()
}

/// Builds the feasible control-torque convex and the guaranteed minimum
/// control torque.
///
/// Face normals of the zonotope are the normalized cross products of ordered
/// generator pairs; the distance of each face from the origin is the support
/// function in its normal direction, and `tau_min` is the minimum over all
/// faces.
///
/// # Errors
/// [`Error::DegenerateConvex`] when every generator pair is parallel (the
/// convex collapses to a segment and contains no ball).
pub fn torque_convex(alloc: &AllocationSet, u_max: f64) -> Result<TorqueConvex> {
    assert!(u_max > 0.0, "u_max must be positive");
    let generators = [
        Vector3::from(alloc.q_rot_c.column(0)),
        Vector3::from(alloc.q_rot_c.column(1)),
        Vector3::from(alloc.q_rot_c.column(2)),
        Vector3::from(alloc.q_rot_c.column(3)),
    ];
    let mut face_distances = Vec::new();
    let mut tau_min = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let cross = generators[i].cross(&generators[j]);
            let norm = cross.norm();
            if norm <= 1e-9 {
                continue;
            }
            let d = support_distance(&generators, u_max, &(cross / norm));
            face_distances.push(((i + 1, j + 1), d));
            tau_min = tau_min.min(d);
        }
    }
    if face_distances.is_empty() {
        return Err(Error::DegenerateConvex);
    }
    Ok(TorqueConvex { generators, tau_min, face_distances })
}

/// One evaluated grid point of the tilt optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltSample {
    pub beta: f64,
    /// Raw objective components
    /// `[−(u_s_max+u_s_min), τ_z_max−τ_z_min, −‖f_xy‖, −l_air]`.
    pub metrics: [f64; 4],
    /// Range-normalized weighted sum (higher is better).
    pub objective: f64,
}

/// Result of the weighted-sum tilt-angle optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltOptimum {
    pub beta_opt: f64,
    pub trace: Vec<TiltSample>,
}

/// Default tilt-angle grid: 0 to 0.8 rad in steps of 0.005 rad.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=160).map(|i| i as f64 * 0.005).collect()
}

/// Optimizes the tilt angle by a weighted sum over a grid, with the joints
/// fixed at the maximally-folded form `q = (π/2, π/2)`.
///
/// Each grid point is scored on `[−(u_s_max+u_s_min), τ_z_max−τ_z_min,
/// −‖f_xy‖, −l_air]` (horizontal force probed with `τ_des = [1,1,1]`); every
/// component is normalized by its range over the grid before the weights
/// apply, so the weights express relative importance independent of units.
/// Ties resolve to the first (smallest) grid angle.
///
/// # Errors
/// Propagates [`Error::SingularForm`]/[`Error::RankDeficient`] from the inner
/// solves.
///
/// # Example
/// ```
/// use tiltlink::config::RobotSpec;
/// use tiltlink::design::optimize_tilt;
///
/// // Weighting only the yaw-torque span favors the steepest tilt.
/// let grid = [0.0, 0.2, 0.4, 0.6];
/// let opt = optimize_tilt(&RobotSpec::default(), &[0.0, 1.0, 0.0, 0.0], &grid).unwrap();
/// assert_eq!(opt.beta_opt, 0.6);
/// ```
pub fn optimize_tilt(
    spec: &RobotSpec,
    weights: &[f64; 4],
    beta_grid: &[f64],
) -> Result<TiltOptimum> {
    assert!(!beta_grid.is_empty(), "tilt grid must be nonempty");
    let q = JointConfig::new(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let tau_probe = Vector3::new(1.0, 1.0, 1.0);

    let raw: Vec<(f64, [f64; 4])> = beta_grid
        .par_iter()
        .map(|&beta| -> Result<(f64, [f64; 4])> {
            let mut tilted = spec.clone();
            tilted.tilt_angle = beta;
            let alloc = allocation(&tilted, &q)?;
            let hover = hovering_thrust(&alloc, &tilted)?;
            let env = torque_envelope(&alloc, &tilted, &tau_probe)?;
            Ok((
                beta,
                [
                    -(hover.u_s_max + hover.u_s_min),
                    env.tau_z_max - env.tau_z_min,
                    -env.f_xy_norm,
                    -env.l_air,
                ],
            ))
        })
        .collect::<Result<_>>()?;

    // Range-normalize each component over the grid.
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for (_, x) in &raw {
        for k in 0..4 {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    let trace: Vec<TiltSample> = raw
        .into_iter()
        .map(|(beta, metrics)| {
            let mut objective = 0.0;
            for k in 0..4 {
                let range = hi[k] - lo[k];
                let scaled = if range > 0.0 { (metrics[k] - lo[k]) / range } else { 0.0 };
                objective += weights[k] * scaled;
            }
            TiltSample { beta, metrics, objective }
        })
        .collect();

    let mut best = 0;
    for (idx, sample) in trace.iter().enumerate() {
        if sample.objective > trace[best].objective {
            best = idx;
        }
    }
    Ok(TiltOptimum { beta_opt: trace[best].beta, trace })
}

/// Membership map of the valid joint range over a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMap {
    pub q1_values: Vec<f64>,
    pub q2_values: Vec<f64>,
    /// `valid[i][j]` corresponds to `(q1_values[i], q2_values[j])`.
    pub valid: Vec<Vec<bool>>,
}

impl ValidityMap {
    /// Fraction of grid points inside the valid range.
    pub fn fraction(&self) -> f64 {
        let total: usize = self.valid.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let hits: usize = self.valid.iter().flatten().filter(|&&b| b).count();
        hits as f64 / total as f64
    }
}

/// Uniform grid of `n ≥ 2` joint values spanning `[−π/2, π/2]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = std::f64::consts::FRAC_PI_2;
    (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect()
}

/// Whether one form satisfies all three validity conditions: enough thrust
/// margin below every hover component, enough headroom above, and a
/// guaranteed control torque of at least `tau_thre`. Singular forms are
/// invalid.
pub fn form_is_valid(spec: &RobotSpec, q: &JointConfig, u_thre: f64, tau_thre: f64) -> bool {
    assert!(u_thre >= 0.0 && tau_thre >= 0.0, "thresholds must be nonnegative");
    let Ok(alloc) = allocation(spec, q) else {
        return false;
    };
    let Ok(hover) = hovering_thrust(&alloc, spec) else {
        return false;
    };
    let Ok(convex) = torque_convex(&alloc, spec.u_max) else {
        return false;
    };
    hover.u_s_min >= u_thre && hover.u_s_max <= spec.u_max - u_thre && convex.tau_min >= tau_thre
}

/// Evaluates the valid joint range over a grid. Rows are computed in
/// parallel; the result layout and values are deterministic.
pub fn valid_joint_range(
    spec: &RobotSpec,
    q1_values: &[f64],
    q2_values: &[f64],
    u_thre: f64,
    tau_thre: f64,
) -> ValidityMap {
    let valid: Vec<Vec<bool>> = q1_values
        .par_iter()
        .map(|&q1| {
            q2_values
                .iter()
                .map(|&q2| form_is_valid(spec, &JointConfig::new(q1, q2), u_thre, tau_thre))
                .collect()
        })
        .collect();
    ValidityMap {
        q1_values: q1_values.to_vec(),
        q2_values: q2_values.to_vec(),
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn spec() -> RobotSpec {
        RobotSpec::default()
    }

    fn spec_with_beta(beta: f64) -> RobotSpec {
        let mut s = spec();
        s.tilt_angle = beta;
        s
    }

    fn hover_at(s: &RobotSpec, q1: f64, q2: f64) -> HoverThrust {
        let alloc = allocation(s, &JointConfig::new(q1, q2)).unwrap();
        hovering_thrust(&alloc, s).unwrap()
    }

    #[test]
    fn untilted_symmetric_form_shares_weight_equally() {
        let s = spec_with_beta(0.0);
        let hover = hover_at(&s, FRAC_PI_2, FRAC_PI_2);
        for i in 0..4 {
            assert_relative_eq!(hover.u_s[i], s.weight() / 4.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn tilting_rescales_hover_thrust_without_redistributing_it() {
        // Tilting by β scales the force/torque balance rows by
        // (cos β, cos β, cos β, 1), so the hover solution stays parallel to
        // its untilted direction: no thrust is redistributed between rotors.
        // The magnitude normalization makes the common factor
        // 1/(cos β · √(1 + (‖f_xy‖/f_z)²)); at laterally balanced forms the
        // horizontal components cancel and the factor is exactly 1/cos β.
        let beta = 0.1745_f64;
        for (q1, q2) in [(FRAC_PI_2, FRAC_PI_2), (FRAC_PI_4, FRAC_PI_4)] {
            let tilted = hover_at(&spec(), q1, q2);
            let flat = hover_at(&spec_with_beta(0.0), q1, q2);
            for i in 0..4 {
                assert_relative_eq!(tilted.u_s[i], flat.u_s[i] / beta.cos(), epsilon = 1e-9);
            }
        }

        // Laterally unbalanced form: same scalar law with the correction
        // factor, strictly below 1/cos β.
        let s = spec();
        let alloc = allocation(&s, &JointConfig::new(FRAC_PI_2, 0.0)).unwrap();
        let tilted = hovering_thrust(&alloc, &s).unwrap();
        let flat = hover_at(&spec_with_beta(0.0), FRAC_PI_2, 0.0);
        let f = alloc.q_tran_c * tilted.u_s;
        let lateral = f.xy().norm() / f.z;
        let factor = 1.0 / (beta.cos() * (1.0 + lateral * lateral).sqrt());
        for i in 0..4 {
            assert_relative_eq!(tilted.u_s[i], flat.u_s[i] * factor, epsilon = 1e-9);
            assert!(tilted.u_s[i] < flat.u_s[i] / beta.cos());
        }
    }

    #[test]
    fn hover_thrust_matches_frozen_references() {
        let quarter = hover_at(&spec(), FRAC_PI_4, FRAC_PI_4);
        let expected = [
            5.532849239093,
            11.401322063462,
            11.401322063462,
            5.532849239093,
        ];
        for i in 0..4 {
            assert_relative_eq!(quarter.u_s[i], expected[i], epsilon = 1e-9);
        }

        let hook = hover_at(&spec(), -FRAC_PI_4, FRAC_PI_2);
        let expected = [
            9.219193520979,
            6.204799554113,
            12.224874147169,
            6.074259898425,
        ];
        for i in 0..4 {
            assert_relative_eq!(hook.u_s[i], expected[i], epsilon = 1e-9);
        }
        assert_relative_eq!(hook.u_s_min, 6.074259898425, epsilon = 1e-9);
        assert_relative_eq!(hook.u_s_max, 12.224874147169, epsilon = 1e-9);
    }

    #[test]
    fn hover_thrust_balances_torque_and_weight() {
        for (q1, q2) in [(FRAC_PI_2, FRAC_PI_2), (0.7, -0.4), (-FRAC_PI_4, FRAC_PI_2)] {
            let s = spec();
            let alloc = allocation(&s, &JointConfig::new(q1, q2)).unwrap();
            let hover = hovering_thrust(&alloc, &s).unwrap();
            assert!((alloc.q_rot_c * hover.u_s).norm() < 1e-9);
            // The force magnitude is the exact weight; the vertical component
            // alone falls short wherever the lateral components don't cancel.
            let f = alloc.q_tran_c * hover.u_s;
            assert_relative_eq!(f.norm(), s.weight(), epsilon = 1e-9);
            assert!(f.z <= s.weight() + 1e-12);
        }
    }

    #[test]
    fn thrust_gap_grows_approaching_the_singular_corner() {
        // With q2 = π/2 fixed, forms approach the singular corner as
        // q1 → −π/2 and the spread between the largest and smallest hover
        // component blows up.
        let gaps: Vec<f64> = [FRAC_PI_2, FRAC_PI_4, 0.0, -1.3, -1.45]
            .iter()
            .map(|&q1| {
                let h = hover_at(&spec(), q1, FRAC_PI_2);
                h.u_s_max - h.u_s_min
            })
            .collect();
        for pair in gaps.windows(2) {
            assert!(pair[1] > pair[0], "gap sequence not increasing: {gaps:?}");
        }
    }

    #[test]
    fn zero_tilt_gives_zero_yaw_torque() {
        let s = spec_with_beta(0.0);
        for (q1, q2) in [(FRAC_PI_2, FRAC_PI_2), (0.9, -0.7)] {
            let alloc = allocation(&s, &JointConfig::new(q1, q2)).unwrap();
            let (lo, hi) = tau_z_extremes(&alloc, s.u_max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 0.0);
        }
    }

    #[test]
    fn yaw_torque_extremes_are_symmetric_and_match_reference() {
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        let (lo, hi) = tau_z_extremes(&alloc, 16.0);
        assert_relative_eq!(hi, 2.222281633038616, epsilon = 1e-9);
        assert_relative_eq!(lo, -hi, epsilon = 1e-9);
    }

    #[test]
    fn yaw_torque_span_is_monotone_in_tilt() {
        let q = JointConfig::new(FRAC_PI_2, FRAC_PI_2);
        let mut prev = -1.0;
        for i in 0..=16 {
            let s = spec_with_beta(i as f64 * 0.05);
            let alloc = allocation(&s, &q).unwrap();
            let (_, hi) = tau_z_extremes(&alloc, s.u_max);
            assert!(hi >= prev - 1e-12, "span decreased at beta={}", i as f64 * 0.05);
            prev = hi;
        }
    }

    #[test]
    fn box_lp_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 50 {
            let q = JointConfig::new(
                rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                rng.random_range(-FRAC_PI_2..FRAC_PI_2),
            );
            let Ok(alloc) = allocation(&spec(), &q) else { continue };
            let (lo, hi) = tau_z_extremes(&alloc, 16.0);
            let c = alloc.q_rot_c.row(2);
            let mut best_lo = f64::INFINITY;
            let mut best_hi = f64::NEG_INFINITY;
            for mask in 0..16u32 {
                let mut value = 0.0;
                for i in 0..4 {
                    let u = if mask & (1 << i) != 0 { 16.0 } else { 0.0 };
                    value += c[i] * u;
                }
                best_lo = best_lo.min(value);
                best_hi = best_hi.max(value);
            }
            assert_eq!(lo, best_lo);
            assert_eq!(hi, best_hi);
            checked += 1;
        }
    }

    #[test]
    fn horizontal_force_vanishes_without_tilt_or_demand() {
        let flat = allocation(&spec_with_beta(0.0), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        assert_eq!(
            horizontal_force_norm(&flat, &Vector3::new(1.0, 1.0, 1.0)).unwrap(),
            0.0
        );
        let tilted = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        assert_eq!(horizontal_force_norm(&tilted, &Vector3::zeros()).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_force_matches_frozen_reference() {
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        let norm = horizontal_force_norm(&alloc, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(norm, 1.186708789734994, epsilon = 1e-9);
    }

    #[test]
    fn horizontal_force_grows_like_tangent_of_tilt() {
        let q = JointConfig::new(FRAC_PI_2, FRAC_PI_2);
        let tau = Vector3::new(1.0, 1.0, 1.0);
        let mut ratios = Vec::new();
        let mut beta = 0.05;
        while beta <= 0.6 + 1e-12 {
            let alloc = allocation(&spec_with_beta(beta), &q).unwrap();
            ratios.push(horizontal_force_norm(&alloc, &tau).unwrap() / beta.tan());
            beta += 0.05;
        }
        let first = ratios[0];
        for r in &ratios {
            assert!((r / first - 1.0).abs() < 0.05, "ratio drifted: {ratios:?}");
        }
    }

    #[test]
    fn interference_range_widens_with_tilt() {
        let s = spec();
        assert_eq!(aero_interference(&s, 0.0), s.prop_diameter);
        assert_relative_eq!(
            aero_interference(&s, std::f64::consts::FRAC_PI_3),
            2.0 * s.prop_diameter,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            aero_interference(&s, 10.0_f64.to_radians()),
            0.3611,
            epsilon = 1e-4
        );
        assert_relative_eq!(aero_interference(&s, 0.1745), 0.361083607074939, epsilon = 1e-12);
        assert!(aero_interference(&s, 0.4) >= s.prop_diameter);
    }

    #[test]
    fn guaranteed_torque_matches_frozen_references_and_ordering() {
        let folded = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        let folded_convex = torque_convex(&folded, 16.0).unwrap();
        assert_relative_eq!(folded_convex.tau_min, 2.007583181801571, epsilon = 1e-9);

        let hook = allocation(&spec(), &JointConfig::new(-FRAC_PI_4, FRAC_PI_2)).unwrap();
        let hook_convex = torque_convex(&hook, 16.0).unwrap();
        assert_relative_eq!(hook_convex.tau_min, 0.213104803269652, epsilon = 1e-9);
        assert!(folded_convex.tau_min > hook_convex.tau_min);

        let staircase = allocation(&spec(), &JointConfig::new(FRAC_PI_4, FRAC_PI_4)).unwrap();
        let staircase_convex = torque_convex(&staircase, 16.0).unwrap();
        assert_relative_eq!(staircase_convex.tau_min, 1.510944193628078, epsilon = 1e-9);
    }

    #[test]
    fn guaranteed_torque_is_homogeneous_in_thrust_limit() {
        let alloc = allocation(&spec(), &JointConfig::new(0.8, -0.5)).unwrap();
        let base = torque_convex(&alloc, 16.0).unwrap();
        let doubled = torque_convex(&alloc, 32.0).unwrap();
        assert_relative_eq!(doubled.tau_min, 2.0 * base.tau_min, epsilon = 1e-12);
        let min_face = base
            .face_distances
            .iter()
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(base.tau_min, min_face);
    }

    #[test]
    fn support_function_bounds_guaranteed_torque() {
        let alloc = allocation(&spec(), &JointConfig::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
        let convex = torque_convex(&alloc, 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let dir: [f64; 3] = rng.sample(rand_distr::UnitSphere);
            let support = support_distance(&convex.generators, 16.0, &Vector3::from(dir));
            assert!(
                support >= convex.tau_min - 1e-9,
                "support {support} below tau_min {}",
                convex.tau_min
            );
        }
    }

    #[test]
    fn parallel_generators_are_degenerate() {
        let mut q_rot_c = SMatrix::<f64, 3, 4>::zeros();
        for col in 0..4 {
            q_rot_c.set_column(col, &(Vector3::y() * (col as f64 + 1.0)));
        }
        let alloc = AllocationSet {
            q_tran_c: SMatrix::zeros(),
            q_rot_c,
            r_cog_c: nalgebra::Matrix3::identity(),
            q_tran: SMatrix::zeros(),
            q_rot: q_rot_c,
            alpha_x: 0.0,
            alpha_y: 0.0,
            hover_thrust: Vector4::zeros(),
            w_gradient: nalgebra::RowVector4::zeros(),
            condition: 1.0,
        };
        assert!(matches!(torque_convex(&alloc, 16.0), Err(Error::DegenerateConvex)));
    }

    #[test]
    fn yaw_weight_prefers_steepest_tilt_and_force_weight_prefers_flat() {
        let grid = [0.0, 0.2, 0.4, 0.6, 0.8];
        let yaw = optimize_tilt(&spec(), &[0.0, 1.0, 0.0, 0.0], &grid).unwrap();
        assert_eq!(yaw.beta_opt, 0.8);
        let force = optimize_tilt(&spec(), &[0.0, 0.0, 1.0, 0.0], &grid).unwrap();
        assert_eq!(force.beta_opt, 0.0);
    }

    #[test]
    fn reference_tilt_angle_is_grid_achievable() {
        let grid = [0.0, 0.05, 0.1, 0.1745, 0.25, 0.4];
        let opt = optimize_tilt(&spec(), &DEFAULT_OPT_WEIGHTS, &grid).unwrap();
        assert!(grid.contains(&opt.beta_opt));
        assert!(grid.iter().any(|&b| b == 0.1745));
        for sample in &opt.trace {
            assert!(sample.objective.is_finite());
            assert!(sample.metrics.iter().all(|m| m.is_finite()));
        }
    }

    #[test]
    fn default_grid_spans_plot_range() {
        let grid = default_beta_grid();
        assert_eq!(grid.len(), 161);
        assert_eq!(grid[0], 0.0);
        assert_relative_eq!(grid[160], 0.8, epsilon = 1e-12);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn folded_form_is_valid_and_straight_form_is_not() {
        let s = spec();
        assert!(form_is_valid(&s, &JointConfig::new(FRAC_PI_2, FRAC_PI_2), 0.0, 0.0));
        assert!(form_is_valid(
            &s,
            &JointConfig::new(FRAC_PI_2, FRAC_PI_2),
            DEFAULT_U_THRESHOLD,
            DEFAULT_TAU_THRESHOLD
        ));
        // The straight chain is singular: cannot hover, marked invalid.
        assert!(!form_is_valid(&s, &JointConfig::new(0.0, 0.0), 0.0, 0.0));
        // The asymmetric hook form stays inside the thrust box with margin.
        assert!(form_is_valid(
            &s,
            &JointConfig::new(-FRAC_PI_4, FRAC_PI_2),
            DEFAULT_U_THRESHOLD,
            DEFAULT_TAU_THRESHOLD
        ));
        // Close to the singular band the balance demands negative thrust on
        // one rotor and far more than u_max on another.
        assert!(!form_is_valid(
            &s,
            &JointConfig::new(-1.3, FRAC_PI_2),
            DEFAULT_U_THRESHOLD,
            DEFAULT_TAU_THRESHOLD
        ));
    }

    #[test]
    fn overlapping_thresholds_empty_the_valid_range() {
        let s = spec();
        let grid = uniform_grid(7);
        let map = valid_joint_range(&s, &grid, &grid, s.u_max / 2.0 + 0.1, 0.0);
        assert_eq!(map.fraction(), 0.0);
    }

    #[test]
    fn default_thresholds_give_partial_coverage() {
        let s = spec();
        let grid = uniform_grid(9);
        let map = valid_joint_range(&s, &grid, &grid, DEFAULT_U_THRESHOLD, DEFAULT_TAU_THRESHOLD);
        let f = map.fraction();
        assert!(f > 0.05 && f < 0.95, "unexpected valid fraction {f}");
        // Both fully-folded corners are valid; the straight form is not.
        let mid = grid.len() / 2;
        assert!(map.valid[grid.len() - 1][grid.len() - 1]);
        assert!(!map.valid[mid][mid]);
    }
}
