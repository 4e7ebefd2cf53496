// debug: trace the deform scenario tick by tick
use tiltlink::config::{ControlConfig, EstimatorConfig, RobotSpec};
use tiltlink::sim::{run_scenario, RunOptions, Scenario};

fn main() {
    let spec = RobotSpec::default();
    let mut scenario = Scenario::builtin("deform").unwrap();
    scenario.duration = 16.0;
    let log = run_scenario(
        &spec,
        &ControlConfig::default(),
        &EstimatorConfig::default(),
        &scenario,
        &RunOptions::default(),
    )
    .unwrap();
    for r in log.rows.iter().skip(900).step_by(10).take(60) {
        let q = scenario.joints_at(r.t);
        println!(
            "t={:5.2} q=({:+.3},{:+.3}) e=[{:+.4} {:+.4} {:+.4}] rpy=[{:+.3} {:+.3} {:+.3}] u=[{:5.2} {:5.2} {:5.2} {:5.2}] sat={:04b}",
            r.t, q.q1, q.q2, r.e_r[0], r.e_r[1], r.e_r[2],
            r.truth_rpy[0], r.truth_rpy[1], r.truth_rpy[2],
            r.u[0], r.u[1], r.u[2], r.u[3], r.sat_mask
        );
    }
}
