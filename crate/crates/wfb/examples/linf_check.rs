// temp: full-annulus Linf
use wfb::elliptic::{assemble, SolverParams};
use wfb::grid::{build_grid, norm2, BoundaryData, BoundarySpec, NodeClass};
use wfb::penalized::{minimize_penalized, Algorithm, MinimizeConfig, PenaltyParams};
use wfb::weights::{build_weight_field, WeightFamily, WeightSpec};

fn main() {
    for (name, family, r_star) in [
        ("case1", WeightFamily::Constant { value: 1.0 }, 1.0 / 2.0f64.sqrt()),
        ("case2", WeightFamily::Power { beta: -1.0 }, 0.5),
    ] {
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(&WeightSpec::family(family.clone()), &grid, 3).unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let solver = SolverParams::default();
        let exact = |r: f64| -> f64 {
            if r <= r_star { 0.0 } else {
                match family {
                    WeightFamily::Constant { .. } => (r / r_star).ln() / (1.0 / r_star).ln(),
                    _ => 2.0 * r - 1.0,
                }
            }
        };
        for algorithm in [Algorithm::ReplaceTruncate, Algorithm::SmoothedDescent] {
            let p = PenaltyParams::from_fraction(0.015625, 0.5, &wf).unwrap();
            let cfg = MinimizeConfig { algorithm, ..Default::default() };
            let (field, rep) = minimize_penalized(&op, &wf, &bd, &p, &cfg, &solver, None).unwrap();
            let mut linf_full: f64 = 0.0;
            let mut linf_strict: f64 = 0.0;
            let mut argmax = 0.0;
            for idx in 0..grid.nodes.len {
                if grid.class(idx) != NodeClass::Interior { continue; }
                let r = norm2(&grid.node_coords(idx), 2);
                if r > r_star {
                    let e = (field.values[idx] - exact(r)).abs();
                    if e > linf_full { linf_full = e; argmax = r; }
                }
                if r > r_star + 2.0 * grid.h {
                    linf_strict = linf_strict.max((field.values[idx] - exact(r)).abs());
                }
            }
            println!("{name} {algorithm:?}: linf_full={linf_full:.5} (at r={argmax:.4}) linf_strict={linf_strict:.5} 5h={:.5} fb=[{:.4},{:.4}]",
                5.0 * grid.h, rep.fb_radius_stats.min, rep.fb_radius_stats.max);
        }
    }
}
