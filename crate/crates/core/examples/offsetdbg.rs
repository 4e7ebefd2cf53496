// debug: scan rotor mount offsets for deform-form feasibility
use nalgebra::Vector3;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use tiltlink::config::{JointConfig, RobotSpec};
use tiltlink::design::{hovering_thrust, torque_convex};
use tiltlink::model::allocation;

fn probe(spec: &RobotSpec, q1: f64, q2: f64) -> Option<(f64, f64, f64)> {
    let alloc = allocation(spec, &JointConfig::new(q1, q2)).ok()?;
    let hover = hovering_thrust(&alloc, spec).ok()?;
    let tau = torque_convex(&alloc, spec.u_max).ok()?;
    Some((hover.u_s_max, hover.u_s_min, tau.tau_min))
}

fn main() {
    let square = (FRAC_PI_2, FRAC_PI_2);
    let deform = (-FRAC_PI_4, FRAC_PI_2);
    let grasp = (FRAC_PI_4, FRAC_PI_4);
    println!("c1    c2    | square u(max,min) tau | deform u(max,min) tau | grasp u(max,min) tau");
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 1..12 {
        for j in 1..12 {
            let c1 = 0.05 * i as f64;
            let c2 = 0.05 * j as f64;
            let mut spec = RobotSpec::default();
            spec.rotor_offsets = [
                Vector3::new(c1, 0.0, 0.0),
                Vector3::new(c2, 0.0, 0.0),
                Vector3::new(0.6 - c2, 0.0, 0.0),
                Vector3::new(0.6 - c1, 0.0, 0.0),
            ];
            let (Some(s), Some(d), Some(g)) = (
                probe(&spec, square.0, square.1),
                probe(&spec, deform.0, deform.1),
                probe(&spec, grasp.0, grasp.1),
            ) else {
                continue;
            };
            // feasibility score: deform headroom + torque health, require orderings
            let ok = d.0 <= 15.0 && d.1 >= 0.5 && d.2 > 0.05 && d.2 < g.2 && g.2 < s.2;
            if ok {
                println!(
                    "{c1:.2}  {c2:.2}  | {:6.3} {:6.3} {:6.3} | {:6.3} {:6.3} {:7.4} | {:6.3} {:6.3} {:6.3}",
                    s.0, s.1, s.2, d.0, d.1, d.2, g.0, g.1, g.2
                );
                let score = (16.0 - d.0) + 10.0 * d.2;
                if best.map_or(true, |b| score > b.2) {
                    best = Some((c1, c2, score));
                }
            }
        }
    }
    match best {
        Some((c1, c2, s)) => println!("best: c1={c1:.2} c2={c2:.2} score={s:.3}"),
        None => println!("no mirrored pattern satisfies the feasibility targets"),
    }
}
