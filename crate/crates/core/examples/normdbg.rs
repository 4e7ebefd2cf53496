// debug: probe allocation features across joint forms for convention checks
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use nalgebra::Vector3;
use tiltlink::config::{JointConfig, RobotSpec};
use tiltlink::design::{horizontal_force_norm, hovering_thrust, torque_convex};
use tiltlink::model::allocation;

fn main() {
    let spec = RobotSpec::default();
    let forms = [
        ("square   ( pi/2, pi/2)", FRAC_PI_2, FRAC_PI_2),
        ("deform   (-pi/4, pi/2)", -FRAC_PI_4, FRAC_PI_2),
        ("grasp    ( pi/4, pi/4)", FRAC_PI_4, FRAC_PI_4),
        ("paperSing(-pi/2,-pi/2)", -FRAC_PI_2, -FRAC_PI_2),
        ("mirror   (-pi/2, pi/2)", -FRAC_PI_2, FRAC_PI_2),
        ("line     (  0.0,  0.0)", 0.0, 0.0),
        ("nearSing (-1.47,-1.47)", -1.47, -1.47),
        ("nearSing2(-1.47, 1.47)", -1.47, 1.47),
    ];
    for (name, q1, q2) in forms {
        let q = JointConfig::new(q1, q2);
        match allocation(&spec, &q) {
            Ok(alloc) => {
                let hover = hovering_thrust(&alloc, &spec).unwrap();
                let tau = torque_convex(&alloc, spec.u_max)
                    .map(|c| c.tau_min)
                    .unwrap_or(f64::NAN);
                let fxy = horizontal_force_norm(&alloc, &Vector3::new(1.0, 1.0, 1.0))
                    .unwrap_or(f64::NAN);
                println!(
                    "{name}: u_s=[{:7.3} {:7.3} {:7.3} {:7.3}]  tau_min={:7.4}  |f_xy|={:8.3}",
                    hover.u_s[0], hover.u_s[1], hover.u_s[2], hover.u_s[3], tau, fxy
                );
            }
            Err(e) => println!("{name}: ERROR {e}"),
        }
    }
}
