//! Configuration-driven entry points: `solve`, `sweep`, `verify`, `weights`.
//!
//! Configs are flat `key = value` text with sectioned keys
//! (`weight.family = power`), chosen over nested formats for diff-friendliness
//! and zero-dependency parsing. All randomness flows from the single `seed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::elliptic::{assemble, estimate_poincare, SolverParams, StencilOperator};
use crate::error::{Error, Result};
use crate::grid::{
    build_grid, read_field, sample_boundary, write_field, BoundaryData, BoundarySpec, Grid,
    NodeClass, ScalarField,
};
use crate::penalized::{
    default_epsilon_schedule, evaluate_j, minimize_penalized, probe_truncation_inequality,
    sweep_epsilon, sweep_row_csv, Algorithm, MinimizeConfig, PenaltyParams, SWEEP_CSV_HEADER,
};
use crate::regularity::{
    campanato_decay, compute_constants, constants_report, constants_satisfy,
    extract_free_boundary, fit_harmonic_regularity, holder_seminorm, verify_harnack_on_solution,
    CampanatoMode,
};
use crate::weights::{
    build_weight_field, check_admissibility, estimate_a2, A2Report, BallSampler, WeightFamily,
    WeightSpec, ZPrimitive,
};

/// Process exit codes of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dimension: usize,
    pub resolution: usize,
    pub weight: WeightSpec,
    pub weight_name: String,
    pub boundary: BoundarySpec,
    pub m_fraction: f64,
    pub epsilon: f64,
    pub epsilon_schedule: Vec<f64>,
    pub minimize: MinimizeConfig,
    pub solver: SolverParams,
    pub quadrature_order: usize,
    pub sampler_depth: usize,
    pub probe_t: f64,
    pub measure_tol_fraction: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParam { key: key.into(), reason: reason.into() }
}

/// Parse flat `key = value` text. `#` starts a comment; blank lines ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(
                &format!("line {}", lineno + 1),
                format!("expected `key = value`, got `{raw}`"),
            ));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Cfg {
    map: BTreeMap<String, String>,
}

impl Cfg {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| invalid(key, format!("cannot parse `{s}`"))),
        }
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| invalid(key, "missing required key"))
    }
}

fn parse_point(key: &str, s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(invalid(key, format!("expected `x,y[,z]`, got `{s}`")));
    }
    let mut p = [0.0; 3];
    for (i, t) in parts.iter().enumerate() {
        p[i] = t.parse().map_err(|_| invalid(key, format!("bad coordinate `{t}`")))?;
    }
    Ok(p)
}

/// Z-set syntax: primitives separated by `;`. A point is `x,y`; a segment is
/// `x1,y1 -> x2,y2`.
fn parse_zset(key: &str, s: &str) -> Result<Vec<ZPrimitive>> {
    let mut out = Vec::new();
    for part in s.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((a, b)) = part.split_once("->") {
            out.push(ZPrimitive::Segment(parse_point(key, a)?, parse_point(key, b)?));
        } else {
            out.push(ZPrimitive::Point(parse_point(key, part)?));
        }
    }
    if out.is_empty() {
        return Err(invalid(key, "empty Z set"));
    }
    Ok(out)
}

/// Build and validate a [`RunConfig`] from config text. Every module-level
/// precondition is checked here, before any work happens; errors name the
/// offending key.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let cfg = Cfg { map: parse_key_values(text)? };

    let dimension: usize = cfg.parse("dimension", 2)?;
    if dimension != 2 && dimension != 3 {
        return Err(invalid("dimension", format!("must be 2 or 3, got {dimension}")));
    }
    let resolution: usize = cfg.parse("resolution", 129)?;
    if resolution % 2 == 0 || resolution < 17 {
        return Err(invalid("resolution", format!("must be odd and >= 17, got {resolution}")));
    }

    let family = cfg.require("weight.family")?;
    let weight_family = match family {
        "constant" => WeightFamily::Constant { value: cfg.parse("weight.value", 1.0)? },
        "power" => WeightFamily::Power { beta: cfg.parse("weight.beta", -1.0)? },
        "distance_power" => WeightFamily::DistancePower {
            alpha: cfg.parse("weight.alpha", 0.5)?,
            zset: parse_zset("weight.zset", cfg.require("weight.zset")?)?,
        },
        "extension" => WeightFamily::Extension { s: cfg.parse("weight.s", 0.75)? },
        other => {
            return Err(invalid(
                "weight.family",
                format!("unknown family `{other}` (constant|power|distance_power|extension)"),
            ))
        }
    };
    let weight = match cfg.get("weight.rescale_center") {
        Some(c) => WeightSpec::rescaled(
            weight_family,
            parse_point("weight.rescale_center", c)?,
            cfg.parse("weight.rescale_radius", 1.0)?,
        ),
        None => WeightSpec::family(weight_family),
    };
    weight.validate(dimension)?;

    let boundary = match cfg.parse::<String>("boundary.kind", "constant".into())?.as_str() {
        "constant" => BoundarySpec::Constant(cfg.parse("boundary.value", 1.0)?),
        "cosine" => BoundarySpec::Cosine {
            offset: cfg.parse("boundary.offset", 2.0)?,
            amplitude: cfg.parse("boundary.amplitude", 1.0)?,
            mode: cfg.parse("boundary.mode", 1)?,
        },
        other => {
            return Err(invalid("boundary.kind", format!("unknown kind `{other}` (constant|cosine)")))
        }
    };
    BoundaryData::new(boundary.clone()).map_err(|e| match e {
        Error::InvalidBoundary(msg) => invalid("boundary", msg),
        other => other,
    })?;

    let m_fraction: f64 = cfg.parse("m_fraction", 0.5)?;
    if !(m_fraction > 0.0 && m_fraction < 1.0) {
        return Err(invalid("m_fraction", format!("must lie strictly inside (0, 1), got {m_fraction}")));
    }

    let epsilon: f64 = cfg.parse("epsilon", 0.015625)?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let epsilon_schedule = match cfg.get("epsilon.schedule") {
        None => default_epsilon_schedule(),
        Some(s) => {
            let mut sched = Vec::new();
            for t in s.split(',') {
                let v: f64 = t
                    .trim()
                    .parse()
                    .map_err(|_| invalid("epsilon.schedule", format!("bad value `{t}`")))?;
                sched.push(v);
            }
            sched
        }
    };
    for w in epsilon_schedule.windows(2) {
        if !(w[1] < w[0]) {
            return Err(invalid("epsilon.schedule", "must be strictly decreasing"));
        }
    }
    if epsilon_schedule.is_empty() || epsilon_schedule[epsilon_schedule.len() - 1] <= 0.0 {
        return Err(invalid("epsilon.schedule", "must be nonempty and positive"));
    }

    let algorithm = match cfg.parse::<String>("algorithm", "replace_truncate".into())?.as_str() {
        "replace_truncate" => Algorithm::ReplaceTruncate,
        "smoothed_descent" => Algorithm::SmoothedDescent,
        other => {
            return Err(invalid(
                "algorithm",
                format!("unknown algorithm `{other}` (replace_truncate|smoothed_descent)"),
            ))
        }
    };
    let defaults = MinimizeConfig::default();
    let minimize = MinimizeConfig {
        algorithm,
        smoothing_sigma: cfg.parse("minimize.smoothing_sigma", defaults.smoothing_sigma)?,
        anneal_factor: cfg.parse("minimize.anneal_factor", defaults.anneal_factor)?,
        outer_iterations: cfg.parse("minimize.outer_iterations", defaults.outer_iterations)?,
        inner_iterations: cfg.parse("minimize.inner_iterations", defaults.inner_iterations)?,
        armijo: cfg.parse("minimize.armijo", defaults.armijo)?,
        step_shrink: cfg.parse("minimize.step_shrink", defaults.step_shrink)?,
        max_backtracks: cfg.parse("minimize.max_backtracks", defaults.max_backtracks)?,
        delta_pos: match cfg.get("minimize.delta_pos") {
            None => None,
            Some(s) => {
                Some(s.parse().map_err(|_| invalid("minimize.delta_pos", "cannot parse"))?)
            }
        },
    };
    minimize.validate()?;

    let solver = SolverParams {
        tolerance: cfg.parse("solver.tolerance", 1e-10)?,
        max_iterations: cfg.parse("solver.max_iterations", 50_000)?,
    };
    solver.validate()?;

    let quadrature_order: usize = cfg.parse("quadrature.order", 3)?;
    if quadrature_order < 1 || quadrature_order > 16 {
        return Err(invalid("quadrature.order", "must lie in 1..=16"));
    }
    let sampler_depth: usize = cfg.parse("sampler.depth", 3)?;
    if sampler_depth > 6 {
        return Err(invalid("sampler.depth", "must be at most 6"));
    }
    let probe_t: f64 = cfg.parse("probe_t", 0.01)?;
    if !(probe_t > 0.0 && probe_t < 1.0) {
        return Err(invalid("probe_t", "must lie in (0, 1)"));
    }
    let measure_tol_fraction: f64 = cfg.parse("measure_tol", 0.02)?;
    if !(measure_tol_fraction > 0.0 && measure_tol_fraction < 1.0) {
        return Err(invalid("measure_tol", "must lie in (0, 1)"));
    }

    Ok(RunConfig {
        dimension,
        resolution,
        weight,
        weight_name: family.to_string(),
        boundary,
        m_fraction,
        epsilon,
        epsilon_schedule,
        minimize,
        solver,
        quadrature_order,
        sampler_depth,
        probe_t,
        measure_tol_fraction,
        output_dir: PathBuf::from(cfg.parse::<String>("output.dir", "out".into())?),
        seed: cfg.parse("seed", 0u64)?,
    })
}

pub fn load_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    load_config(&text)
}

/// Shared build products of a run.
pub struct Workspace {
    pub config: RunConfig,
    pub grid: std::sync::Arc<Grid>,
    pub wf: crate::weights::WeightField,
    pub op: StencilOperator,
    pub bd: BoundaryData,
}

pub fn build_workspace(config: RunConfig) -> Result<Workspace> {
    let grid = build_grid(config.dimension, config.resolution)?;
    let wf = build_weight_field(&config.weight, &grid, config.quadrature_order)?;
    let op = assemble(&grid, &wf)?;
    let bd = BoundaryData::new(config.boundary.clone())?;
    Ok(Workspace { config, grid, wf, op, bd })
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `solve`: minimize at the configured epsilon, dump the field and reports.
///
/// Artifacts: `u.txt` (field dump), `solve_report.csv` (one summary row),
/// `energy_trace.csv` (accepted iterates). Exit 0 on convergence, 3 otherwise.
pub fn cmd_solve(ws: &Workspace, out_dir: &Path) -> Result<i32> {
    ensure_out_dir(out_dir)?;
    let cfg = &ws.config;
    let p = PenaltyParams::from_fraction(cfg.epsilon, cfg.m_fraction, &ws.wf)?;
    let (field, report) =
        minimize_penalized(&ws.op, &ws.wf, &ws.bd, &p, &cfg.minimize, &cfg.solver, None)?;

    write_field(&field, &out_dir.join("u.txt"))?;

    let mut trace = String::from("iterate,dirichlet,penalty,total,measure\n");
    for (i, bk) in report.energy_trace.iter().enumerate() {
        trace.push_str(&format!(
            "{},{},{},{},{}\n",
            i, bk.dirichlet, bk.penalty, bk.total, bk.measure
        ));
    }
    std::fs::write(out_dir.join("energy_trace.csv"), trace)?;

    let last = report.energy_trace.last().expect("trace never empty");
    let mut summary = String::from(
        "epsilon,m,measure,dirichlet,penalty,total,residual,fb_mean_r,fb_min_r,fb_max_r,fb_cells,converged,outer_iterations,inner_iterations\n",
    );
    summary.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        p.epsilon,
        p.m,
        last.measure,
        last.dirichlet,
        last.penalty,
        last.total,
        report.constraint_residual,
        report.fb_radius_stats.mean,
        report.fb_radius_stats.min,
        report.fb_radius_stats.max,
        report.fb_radius_stats.count,
        report.converged,
        report.outer_iterations,
        report.inner_iterations,
    ));
    std::fs::write(out_dir.join("solve_report.csv"), summary)?;

    println!(
        "solve: epsilon={} measure={:.6} (target {:.6}) fb_mean_r={:.5} converged={}",
        p.epsilon, last.measure, p.m, report.fb_radius_stats.mean, report.converged
    );
    Ok(if report.converged { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

/// `sweep`: epsilon continuation; emits `sweep.csv` and flags the empirical
/// attainment threshold.
pub fn cmd_sweep(ws: &Workspace, out_dir: &Path) -> Result<i32> {
    ensure_out_dir(out_dir)?;
    let cfg = &ws.config;
    let measure_tol = cfg.measure_tol_fraction * ws.wf.total_mass;
    let outcome = sweep_epsilon(
        &ws.op,
        &ws.wf,
        &ws.bd,
        cfg.m_fraction,
        &cfg.epsilon_schedule,
        &cfg.minimize,
        &cfg.solver,
        cfg.probe_t,
        measure_tol,
    )?;

    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in &outcome.rows {
        csv.push_str(&sweep_row_csv(row));
        csv.push('\n');
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;

    match outcome.epsilon_star {
        Some(eps) => println!(
            "sweep: {} rows; empirical epsilon_* = {eps} (|measure - m| <= {measure_tol:.3e})",
            outcome.rows.len()
        ),
        None => println!(
            "sweep: {} rows; no epsilon reached the measure tolerance {measure_tol:.3e}",
            outcome.rows.len()
        ),
    }
    Ok(if outcome.aborted { EXIT_NO_CONVERGENCE } else { EXIT_OK })
}

#[derive(Debug, Clone)]
pub struct VerifyRow {
    pub check: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

/// `verify`: structural checks of a field dump against the configured
/// problem. One CSV row per check; exit 4 when any check fails.
pub fn cmd_verify(ws: &Workspace, dump_path: &Path, out_dir: &Path) -> Result<i32> {
    ensure_out_dir(out_dir)?;
    let text = std::fs::read_to_string(dump_path)?;
    let field = read_field(&ws.grid, &text)?;
    let rows = verify_field(ws, &field)?;

    let mut csv = String::from("check,pass,value,detail\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.check, r.pass, r.value, r.detail));
    }
    std::fs::write(out_dir.join("verification.csv"), csv)?;

    let failures = rows.iter().filter(|r| !r.pass).count();
    for r in &rows {
        println!(
            "verify: {:32} {} value={:.6e} {}",
            r.check,
            if r.pass { "pass" } else { "FAIL" },
            r.value,
            r.detail
        );
    }
    Ok(if failures == 0 { EXIT_OK } else { EXIT_VERIFICATION })
}

/// The checks behind `cmd_verify`, reusable from tests.
pub fn verify_field(ws: &Workspace, field: &ScalarField) -> Result<Vec<VerifyRow>> {
    let cfg = &ws.config;
    let grid = &ws.grid;
    let mut rows = Vec::new();

    let gfield = sample_boundary(&ws.bd, grid)?;
    let max_g = gfield.max_abs();
    let delta = cfg.minimize.delta_pos.unwrap_or(1e-8 * max_g);
    let p = PenaltyParams::from_fraction(cfg.epsilon, cfg.m_fraction, &ws.wf)?;

    // Maximum principle: -1e-12 <= u <= max g + 1e-10.
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Exterior {
            umin = umin.min(field.values[idx]);
            umax = umax.max(field.values[idx]);
        }
    }
    rows.push(VerifyRow {
        check: "max_principle_lower".into(),
        pass: umin >= -1e-12,
        value: umin,
        detail: "min over nodes".into(),
    });
    rows.push(VerifyRow {
        check: "max_principle_upper".into(),
        pass: umax <= max_g + 1e-10,
        value: umax,
        detail: format!("max g = {max_g}"),
    });

    // Subsolution: L u >= -1e-8 * diag * max|u| at every interior node.
    let residual = ws.op.residual(field);
    let scale_u = field.max_abs().max(1e-300);
    let mut worst_sub = f64::INFINITY;
    for idx in 0..grid.nodes.len {
        if grid.class(idx) == NodeClass::Interior {
            let s = ws.op.diag(idx) * scale_u;
            worst_sub = worst_sub.min(residual[idx] / s);
        }
    }
    rows.push(VerifyRow {
        check: "subsolution".into(),
        pass: worst_sub >= -1e-8,
        value: worst_sub,
        detail: "min of Lu / (diag max|u|)".into(),
    });

    // Harmonicity on the positivity set: l2 residual over nodes with value
    // and all neighbors above the threshold, against 10x solver tolerance.
    let mut num = 0.0;
    let mut den = 0.0;
    let mut qualifying = 0usize;
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Interior || field.values[idx] <= delta {
            continue;
        }
        let mut all_above = true;
        for axis in 0..grid.n {
            for dir in [-1, 1] {
                if let Some(nb) = grid.neighbor(idx, axis, dir) {
                    if field.values[nb] <= delta {
                        all_above = false;
                    }
                }
            }
        }
        if all_above {
            qualifying += 1;
            num += residual[idx] * residual[idx];
            let d = ws.op.diag(idx) * field.values[idx];
            den += d * d;
        }
    }
    if qualifying == 0 {
        rows.push(VerifyRow {
            check: "harmonic_on_positivity_set".into(),
            pass: true,
            value: f64::NAN,
            detail: "skipped-empty (no interior positivity nodes)".into(),
        });
    } else {
        let rel = (num / den).sqrt();
        rows.push(VerifyRow {
            check: "harmonic_on_positivity_set".into(),
            pass: rel <= 10.0 * cfg.solver.tolerance,
            value: rel,
            detail: format!("{qualifying} qualifying nodes"),
        });
    }

    // Measure constraint residual at the configured epsilon.
    let bk = evaluate_j(field, &ws.wf, &p, delta);
    let measure_tol = cfg.measure_tol_fraction * ws.wf.total_mass;
    rows.push(VerifyRow {
        check: "measure_residual".into(),
        pass: (bk.measure - p.m).abs() <= measure_tol,
        value: bk.measure - p.m,
        detail: format!("tolerance {measure_tol:.3e}"),
    });

    // Truncation-competitor inequality probe (vacuous when the measure
    // hypothesis fails; that is recorded, not failed).
    let vr = crate::penalized::initial_guess_vr(&ws.op, &ws.wf, &ws.bd, &p, &cfg.solver)?;
    let probe = probe_truncation_inequality(
        field,
        &ws.wf,
        &p,
        vr.dirichlet,
        ws.bd.gamma,
        cfg.probe_t,
        delta,
    );
    rows.push(VerifyRow {
        check: "truncation_inequality".into(),
        pass: !probe.applicable || probe.holds,
        value: probe.lhs,
        detail: if probe.applicable {
            format!("rhs = {:.6e}", probe.rhs)
        } else {
            format!("vacuous (measure above level <= m); rhs = {:.6e}", probe.rhs)
        },
    });

    // Campanato decay at a free-boundary cell (or the origin when none).
    let fb = extract_free_boundary(field, delta);
    let center = if fb.empty {
        [0.0; crate::grid::MAX_DIM]
    } else {
        let grid_n = grid.n;
        let mut c = grid.cell_center(fb.cells[0]);
        for a in grid_n..crate::grid::MAX_DIM {
            c[a] = 0.0;
        }
        c
    };
    match campanato_decay(field, &ws.wf, &center, 0.49, 10, None, CampanatoMode::WeightedMean) {
        Ok(trace) => {
            let alpha = trace.fitted_alpha.unwrap_or(f64::NAN);
            rows.push(VerifyRow {
                check: "campanato_alpha".into(),
                pass: trace.is_constant || alpha > 0.0,
                value: alpha,
                detail: format!("{} levels", trace.levels.len()),
            });
        }
        Err(e) => {
            rows.push(VerifyRow {
                check: "campanato_alpha".into(),
                pass: false,
                value: f64::NAN,
                detail: format!("{e}"),
            });
        }
    }

    // Harnack on the positivity set.
    let harnack = verify_harnack_on_solution(field, &ws.op, delta, &cfg.solver)?;
    rows.push(VerifyRow {
        check: "harnack_on_positivity_set".into(),
        pass: harnack.skipped || harnack.worst_ratio >= 1.0,
        value: harnack.worst_ratio,
        detail: if harnack.skipped {
            "skipped-empty (no admissible ball)".into()
        } else {
            format!("{} balls", harnack.balls.len())
        },
    });

    // Holder seminorm (finite by construction; recorded for the report).
    let est = holder_seminorm(field, &ws.wf, 0.5, 0.5, 4000, cfg.seed)?;
    rows.push(VerifyRow {
        check: "holder_seminorm".into(),
        pass: est.seminorm.is_finite(),
        value: est.seminorm,
        detail: format!("ratio to L2 = {:.6e}", est.ratio),
    });

    // A2 estimate of the configured weight.
    let sampler = BallSampler::dyadic(&ws.config.weight, grid.n, cfg.sampler_depth.min(2));
    let a2 = estimate_a2(&ws.config.weight, &sampler)?;
    rows.push(VerifyRow {
        check: "a2_estimate".into(),
        pass: a2.a2_estimate >= 1.0 - 1e-12,
        value: a2.a2_estimate,
        detail: format!("{} balls", a2.samples),
    });

    Ok(rows)
}

/// `weights`: A2/doubling/admissibility report of the configured weight.
pub fn cmd_weights(ws: &Workspace, out_dir: &Path) -> Result<i32> {
    ensure_out_dir(out_dir)?;
    let cfg = &ws.config;
    let report = weights_report(ws)?;

    let mut csv = format!("family,{}\n", A2Report::CSV_HEADER);
    csv.push_str(&format!("{},{}\n", cfg.weight_name, report.csv_row()));
    std::fs::write(out_dir.join("a2_report.csv"), csv)?;
    println!(
        "weights: family={} a2>={:.6} D={:.4} tau={:.4e} C0={:.4}",
        cfg.weight_name,
        report.a2_estimate,
        report.doubling_d,
        report.tau_lower_bound,
        report.isoperimetric_c0
    );
    Ok(EXIT_OK)
}

pub fn weights_report(ws: &Workspace) -> Result<A2Report> {
    let cfg = &ws.config;
    let sampler = BallSampler::dyadic(&cfg.weight, ws.grid.n, cfg.sampler_depth);
    let report = estimate_a2(&cfg.weight, &sampler)?;
    // Test fields for the isoperimetric ratio: a cone and a smooth bump.
    let fields = vec![
        ScalarField::from_fn(&ws.grid, |x| 1.0 - crate::grid::norm2(&x, ws.grid.n)),
        ScalarField::from_fn(&ws.grid, |x| {
            let r = crate::grid::norm2(&x, ws.grid.n);
            (1.0 - r * r).max(0.0).powi(2)
        }),
    ];
    check_admissibility(&ws.grid, &ws.wf, &fields, report)
}

/// Constants pipeline shared by the acceptance suite: Poincare estimate,
/// harmonic fit, sampled A2 report, assembled decay constants.
pub fn constants_pipeline(ws: &Workspace) -> Result<(A2Report, crate::RegularityConstants)> {
    let cfg = &ws.config;
    let sampler = BallSampler::dyadic(&cfg.weight, ws.grid.n, cfg.sampler_depth);
    let a2 = estimate_a2(&cfg.weight, &sampler)?;
    let poincare = estimate_poincare(&ws.op, &ws.wf, 1.0, &cfg.solver)?;
    let fit = fit_harmonic_regularity(&ws.op, &ws.wf, &cfg.solver, cfg.seed)?;
    let rc = compute_constants(&a2, ws.grid.n, cfg.epsilon, poincare.c_p, fit.alpha, fit.cbar, fit.c_h)?;
    Ok((a2, rc))
}

/// Write the constants report next to the other artifacts.
pub fn cmd_constants(ws: &Workspace, out_dir: &Path) -> Result<i32> {
    ensure_out_dir(out_dir)?;
    let (a2, rc) = constants_pipeline(ws)?;
    std::fs::write(out_dir.join("constants.txt"), constants_report(&rc))?;
    let (r_ok, e_ok) = constants_satisfy(&rc, &a2, ws.grid.n);
    println!(
        "constants: lambda={} eta0={:.6e} c_star={:.6e} resubstitution radius={} eta={}",
        rc.lambda, rc.eta0, rc.c_star, r_ok, e_ok
    );
    Ok(if r_ok && e_ok { EXIT_OK } else { EXIT_VERIFICATION })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RADIAL: &str = "\
        dimension = 2\n\
        resolution = 33\n\
        weight.family = constant\n\
        weight.value = 1.0\n\
        boundary.kind = constant\n\
        boundary.value = 1.0\n\
        m_fraction = 0.5\n\
        epsilon = 0.25\n\
        seed = 7\n";

    #[test]
    fn parses_and_validates() {
        let cfg = load_config(RADIAL).unwrap();
        assert_eq!(cfg.resolution, 33);
        assert_eq!(cfg.seed, 7);
        assert!(matches!(cfg.weight.family, WeightFamily::Constant { .. }));
        assert_eq!(cfg.epsilon_schedule.len(), 13);
    }

    #[test]
    fn rejects_bad_values_naming_the_key() {
        let bad = RADIAL.replace("m_fraction = 0.5", "m_fraction = 1.0");
        match load_config(&bad) {
            Err(Error::InvalidParam { key, .. }) => assert_eq!(key, "m_fraction"),
            other => panic!("expected m_fraction error, got {other:?}"),
        }
        let missing = RADIAL.replace("weight.family = constant", "");
        match load_config(&missing) {
            Err(Error::InvalidParam { key, .. }) => assert_eq!(key, "weight.family"),
            other => panic!("expected weight.family error, got {other:?}"),
        }
        let sched = format!("{RADIAL}epsilon.schedule = 0.25, 0.5\n");
        match load_config(&sched) {
            Err(Error::InvalidParam { key, .. }) => assert_eq!(key, "epsilon.schedule"),
            other => panic!("expected schedule error, got {other:?}"),
        }
    }

    #[test]
    fn zset_syntax() {
        let pts = parse_zset("weight.zset", "0,0; 0.5,0.5 -> 0.75,0.5").unwrap();
        assert_eq!(pts.len(), 2);
        assert!(matches!(pts[0], ZPrimitive::Point(_)));
        assert!(matches!(pts[1], ZPrimitive::Segment(_, _)));
        assert!(parse_zset("weight.zset", " ; ").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# header\n\n  dimension = 2  # trailing\nweight.family = constant\n";
        let cfg = load_config(text).unwrap();
        assert_eq!(cfg.dimension, 2);
    }
}
