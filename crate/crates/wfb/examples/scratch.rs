// Scratch diagnostics for calibrating the acceptance tolerances. Not shipped.
use std::time::Instant;

use wfb::elliptic::{assemble, estimate_poincare, harnack_ratio, solve_dirichlet, SolverParams};
use wfb::grid::{build_grid, norm2, sample_boundary, BoundaryData, BoundarySpec, ScalarField};
use wfb::penalized::{
    evaluate_j, minimize_penalized, probe_truncation_inequality, sweep_epsilon, Algorithm,
    MinimizeConfig, PenaltyParams,
};
use wfb::regularity::{campanato_decay, extract_free_boundary, CampanatoMode};
use wfb::weights::{build_weight_field, WeightFamily, WeightSpec};

fn main() {
    let solver = SolverParams::default();

    // (a) eps = 1 anchored on the unconstrained extension.
    for (name, family) in [
        ("case1", WeightFamily::Constant { value: 1.0 }),
        ("case2", WeightFamily::Power { beta: -1.0 }),
    ] {
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(&WeightSpec::family(family), &grid, 3).unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let (ext, _) = solve_dirichlet(&op, &g, None, &solver, None).unwrap();
        let p1 = PenaltyParams::from_fraction(1.0, 0.5, &wf).unwrap();
        let cfg = MinimizeConfig { algorithm: Algorithm::SmoothedDescent, ..Default::default() };
        let t0 = Instant::now();
        let (u, report) = minimize_penalized(&op, &wf, &bd, &p1, &cfg, &solver, Some(&ext)).unwrap();
        let bk = evaluate_j(&u, &wf, &p1, report.delta_pos);
        let vr = wfb::penalized::initial_guess_vr(&op, &wf, &bd, &p1, &solver).unwrap();
        let probe = probe_truncation_inequality(&u, &wf, &p1, vr.dirichlet, bd.gamma, 0.01, report.delta_pos);
        println!(
            "(a) {name}: {:.2}s conv={} measure={:.4} m={:.4} applicable={} holds={} lhs={:.3e} rhs={:.3e}",
            t0.elapsed().as_secs_f64(), report.converged, bk.measure, p1.m, probe.applicable, probe.holds, probe.lhs, probe.rhs
        );
    }

    // (b) Poincare at N=257.
    {
        let grid = build_grid(2, 257).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            2,
        )
        .unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let t0 = Instant::now();
        let est = estimate_poincare(&op, &wf, 1.0, &solver).unwrap();
        println!(
            "(b) poincare N=257: {:.2}s lambda1={:.6} (target 5.7832, rel err {:.4})",
            t0.elapsed().as_secs_f64(),
            est.lambda1,
            (est.lambda1 - 5.7832f64).abs() / 5.7832
        );
    }

    // (d) Harnack ratios across resolutions, both weights.
    for (name, family) in [
        ("w=1", WeightFamily::Constant { value: 1.0 }),
        ("w=|x|^-1", WeightFamily::Power { beta: -1.0 }),
    ] {
        let mut ratios = Vec::new();
        for res in [129usize, 257] {
            let grid = build_grid(2, res).unwrap();
            let wf = build_weight_field(&WeightSpec::family(family.clone()), &grid, 3).unwrap();
            let op = assemble(&grid, &wf).unwrap();
            let bd =
                BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
                    .unwrap();
            let g = sample_boundary(&bd, &grid).unwrap();
            let (h, _) = solve_dirichlet(&op, &g, None, &solver, None).unwrap();
            ratios.push(harnack_ratio(&h, &op, &solver).unwrap());
        }
        println!(
            "(d) harnack {name}: N129={:.5} N257={:.5} rel diff={:.4}",
            ratios[0],
            ratios[1],
            (ratios[0] - ratios[1]).abs() / ratios[1]
        );
    }

    // (c) N=257 case-1 solve + campanato at a free-boundary cell.
    {
        let grid = build_grid(2, 257).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            2,
        )
        .unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let p = PenaltyParams::from_fraction(0.015625, 0.5, &wf).unwrap();
        let cfg = MinimizeConfig::default();
        let t0 = Instant::now();
        let (u, report) = minimize_penalized(&op, &wf, &bd, &p, &cfg, &solver, None).unwrap();
        let fb = extract_free_boundary(&u, report.delta_pos);
        // Pick the straddling cell closest to the positive x axis.
        let mut center = [0.0; 3];
        let mut best = f64::INFINITY;
        for &c in &fb.cells {
            let x = grid.cell_center(c);
            let score = x[1].abs() + (x[0] - 0.7071).abs();
            if x[0] > 0.0 && score < best {
                best = score;
                center = x;
            }
        }
        center[2] = 0.0;
        let tr = campanato_decay(&u, &wf, &center, 0.49, 10, None, CampanatoMode::WeightedMean)
            .unwrap();
        println!(
            "(c) N=257 solve {:.2}s fb_mean={:.5}; campanato at ({:.4},{:.4}): levels={} alpha={:?} ds={:?}",
            t0.elapsed().as_secs_f64(),
            report.fb_radius_stats.mean,
            center[0],
            center[1],
            tr.levels.len(),
            tr.fitted_alpha,
            tr.levels.iter().map(|l| l.d).collect::<Vec<_>>()
        );
        // (f) linear field alpha at N=129.
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            2,
        )
        .unwrap();
        let lin = ScalarField::from_fn(&grid, |x| x[0]);
        let tr = campanato_decay(&lin, &wf, &[0.0; 3], 0.49, 10, Some(0.99), CampanatoMode::WeightedMean)
            .unwrap();
        println!("(f) linear alpha = {:?} levels={}", tr.fitted_alpha, tr.levels.len());
    }

    // (e) full B-sweep at N=129, case 1.
    {
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            3,
        )
        .unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let cfg = MinimizeConfig::default();
        let schedule: Vec<f64> = (0..=12).map(|k| 0.5f64.powi(k)).collect();
        let t0 = Instant::now();
        let out = sweep_epsilon(&op, &wf, &bd, 0.5, &schedule, &cfg, &solver, 0.01, 0.02 * wf.total_mass)
            .unwrap();
        println!(
            "(e) sweep 13 rows: {:.2}s eps*={:?} final_residual={:.4e} applicable rows={} nonvacuous holds={}",
            t0.elapsed().as_secs_f64(),
            out.epsilon_star,
            out.rows.last().unwrap().residual,
            out.rows.iter().filter(|r| r.probe.applicable).count(),
            out.rows.iter().filter(|r| r.probe.applicable && r.probe.holds).count(),
        );
        let r = norm2(&[0.5, 0.5, 0.0], 2);
        let _ = r;
    }
}
