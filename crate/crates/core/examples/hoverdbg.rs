// debug: run every builtin scenario and print summary statistics
use tiltlink::config::{ControlConfig, EstimatorConfig, RobotSpec};
use tiltlink::sim::{run_scenario, RunOptions, Scenario};

fn main() {
    let spec = RobotSpec::default();
    let names: Vec<String> = std::env::args().skip(1).collect();
    let names: Vec<&str> = if names.is_empty() {
        Scenario::builtin_names().to_vec()
    } else {
        names.iter().map(|s| s.as_str()).collect()
    };
    for name in names {
        let scenario = Scenario::builtin(name).unwrap();
        let t0 = std::time::Instant::now();
        let log = run_scenario(
            &spec,
            &ControlConfig::default(),
            &EstimatorConfig::default(),
            &scenario,
            &RunOptions { seed: 1, ..RunOptions::default() },
        )
        .unwrap();
        let s = &log.summary;
        println!(
            "{:7}  rows={:6}  max={:8.4}  horiz={:8.4}  vert={:8.4}  final={:9.5}  yaw={:7.4}  sat={:6.4}  est_rms={:8.4}  stale={}  [{:.1}s wall]",
            name, s.rows, s.max_pos_error, s.max_horiz_error, s.max_vert_error,
            s.final_pos_error, s.max_yaw_error, s.saturation_fraction, s.estimate_rms_error,
            s.stale_measurements, t0.elapsed().as_secs_f64()
        );
        // per-phase error detail for the longer scenarios
        if name == "grasp" {
            for (a, b) in [(4.0, 5.5), (9.0, 11.0), (28.0, 30.0), (31.5, 33.5), (40.0, 42.0), (50.0, 52.0)] {
                println!("      grasp |e| in [{a},{b}] = {:.4}", log.max_pos_error_between(a, b));
            }
        }
        if name == "deform" {
            for (a, b) in [(0.0, 5.0), (5.0, 15.0), (15.0, 25.0), (25.0, 30.0)] {
                println!("      deform |e| in [{a},{b}] = {:.4}", log.max_pos_error_between(a, b));
            }
        }
        if name == "kick" {
            for (a, b) in [(5.0, 7.0), (10.0, 12.0), (18.0, 20.0)] {
                println!("      kick |e| in [{a},{b}] = {:.4}", log.max_pos_error_between(a, b));
            }
        }
        if name == "circle" {
            // split by phase: ramp vs hold at full speed
            let c = scenario.circle.unwrap();
            let t_ramp = c.ramp_time();
            let horiz = |lo: f64, hi: f64| {
                log.rows
                    .iter()
                    .filter(|r| r.t >= lo && r.t <= hi)
                    .map(|r| (r.e_r[0].powi(2) + r.e_r[1].powi(2)).sqrt())
                    .fold(0.0f64, f64::max)
            };
            let vert = |lo: f64, hi: f64| {
                log.rows
                    .iter()
                    .filter(|r| r.t >= lo && r.t <= hi)
                    .map(|r| r.e_r[2].abs())
                    .fold(0.0f64, f64::max)
            };
            println!(
                "      circle ramp ends {t_ramp:.1}s; horiz ramp={:.3} hold={:.3}; vert ramp={:.3} hold={:.3}",
                horiz(0.0, t_ramp), horiz(t_ramp, 103.0), vert(0.0, t_ramp), vert(t_ramp, 103.0)
            );
        }
    }
}
