// debug: circle scenario under perfect vs filtered feedback
use tiltlink::config::{ControlConfig, EstimatorConfig, RobotSpec};
use tiltlink::sim::{run_scenario, RunOptions, Scenario, SensorMode};

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn main() {
    let spec = RobotSpec::default();
    let ctrl = ControlConfig::default();
    let est = EstimatorConfig::default();
    let mode = std::env::args().nth(1).unwrap_or_else(|| "perfect".into());
    let mut sc = Scenario::builtin("circle").unwrap();
    if mode == "perfect" {
        sc.sensors = SensorMode::Perfect;
    }
    if let Some(t) = std::env::args().nth(2).and_then(|s| s.parse::<f64>().ok()) {
        sc.duration = t;
    }
    let log = run_scenario(&spec, &ctrl, &est, &sc, &RunOptions::default()).unwrap();
    println!("{}", serde_json::to_string_pretty(&log.summary).unwrap());
    // first row with error beyond 0.5 m and a sparse trace
    if let Some(row) = log.rows.iter().find(|r| norm(&r.e_r) > 0.5) {
        println!("first e>0.5 at t={:.2}", row.t);
    }
    for row in log.rows.iter().step_by(200) {
        println!(
            "t={:6.2} truth=({:7.2},{:7.2},{:6.2}) est=({:7.2},{:7.2},{:6.2}) e={:8.3} yaw_e={:6.3} u=[{:5.1} {:5.1} {:5.1} {:5.1}] sat={:04b}",
            row.t, row.truth_r[0], row.truth_r[1], row.truth_r[2],
            row.est_r[0], row.est_r[1], row.est_r[2],
            norm(&row.e_r), row.e_yaw, row.u[0], row.u[1], row.u[2], row.u[3], row.sat_mask
        );
    }
}
