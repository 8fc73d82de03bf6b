//! The penalized functional `J_eps(v) = int |grad v|^2 omega + f_eps(omega({v>0}))`
//! with `f_eps(t) = (t - m)^+ / eps`, its minimization over fields with fixed
//! trace, and the epsilon-continuation that locates the measure-attainment
//! threshold.
//!
//! Two independent minimizers are provided:
//!  * `SmoothedDescent` replaces the positivity indicator by a C^1 ramp of
//!    annealed width and runs projected Barzilai-Borwein descent;
//!  * `ReplaceTruncate` uses only the moves that appear in the existence
//!    proofs: harmonic re-solve on the current zero set and truncation
//!    `u -> (u - t)^+ / (1 - t)` with a line-searched level.
//! Both start from the ring solution `v_r` and only ever accept iterates that
//! strictly decrease the true `J_eps`, so the recorded energy trace is
//! nonincreasing by construction.



use crate::elliptic::{solve_dirichlet, SolverParams, StencilOperator};
use crate::error::{Error, Result};
use crate::grid::{
    dirichlet_energy, energy_over_edges, norm2, positivity_measure, sample_boundary, BoundaryData,
    NodeClass, ScalarField,
};
use crate::levelset::straddling_cells;
use crate::weights::WeightField;

#[derive(Debug, Clone, Copy)]
pub struct PenaltyParams {
    pub epsilon: f64,
    /// Target weighted measure of the positivity set.
    pub m: f64,
    /// `m / omega(B_1)` as configured.
    pub m_fraction: f64,
}

impl PenaltyParams {
    /// Resolve `m = m_fraction * omega(B_1)` against the discrete total mass.
    /// Degenerate targets within quadrature noise of 0 or the full mass are
    /// rejected.
    pub fn from_fraction(epsilon: f64, m_fraction: f64, wf: &WeightField) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParam {
                key: "epsilon".into(),
                reason: format!("must be positive, got {epsilon}"),
            });
        }
        if !(m_fraction > 0.0 && m_fraction < 1.0) {
            return Err(Error::InvalidParam {
                key: "m_fraction".into(),
                reason: format!("must lie strictly inside (0, 1), got {m_fraction}"),
            });
        }
        let total = wf.total_mass;
        let m = m_fraction * total;
        let quad_tol = 1e-3 * total;
        if m <= quad_tol || m >= total - quad_tol {
            return Err(Error::InvalidParam {
                key: "m_fraction".into(),
                reason: format!(
                    "target measure {m} is within quadrature noise of 0 or omega(B_1) = {total}"
                ),
            });
        }
        Ok(PenaltyParams { epsilon, m, m_fraction })
    }
}

/// `f_eps(t) = (t - m)^+ / eps`: nondecreasing, Lipschitz with constant
/// `1/eps`, zero at and below the target measure.
pub fn f_eps(t: f64, p: &PenaltyParams) -> f64 {
    debug_assert!(t >= 0.0);
    (t - p.m).max(0.0) / p.epsilon
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub penalty: f64,
    pub total: f64,
    pub measure: f64,
}

/// Evaluate the penalized functional of a field with its trace set.
pub fn evaluate_j(
    field: &ScalarField,
    wf: &WeightField,
    p: &PenaltyParams,
    delta_pos: f64,
) -> EnergyBreakdown {
    let dirichlet = dirichlet_energy(field, wf);
    let measure = positivity_measure(field, wf, delta_pos);
    let penalty = f_eps(measure, p);
    EnergyBreakdown { dirichlet, penalty, total: dirichlet + penalty, measure }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    SmoothedDescent,
    ReplaceTruncate,
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeConfig {
    pub algorithm: Algorithm,
    /// Initial width of the C^1 indicator ramp (smoothed descent only).
    pub smoothing_sigma: f64,
    /// Multiplier applied to sigma per annealing stage, in (0, 1).
    pub anneal_factor: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Armijo constant for the backtracking line search.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub step_shrink: f64,
    pub max_backtracks: usize,
    /// Positivity threshold; `None` resolves to `1e-8 * max g`.
    pub delta_pos: Option<f64>,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            algorithm: Algorithm::ReplaceTruncate,
            smoothing_sigma: 0.05,
            anneal_factor: 0.5,
            outer_iterations: 12,
            inner_iterations: 400,
            armijo: 1e-4,
            step_shrink: 0.5,
            max_backtracks: 40,
            delta_pos: None,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_sigma > 0.0) {
            return Err(Error::InvalidParam {
                key: "minimize.smoothing_sigma".into(),
                reason: "must be positive".into(),
            });
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(Error::InvalidParam {
                key: "minimize.anneal_factor".into(),
                reason: "must lie inside (0, 1)".into(),
            });
        }
        if self.outer_iterations < 1 || self.inner_iterations < 1 {
            return Err(Error::InvalidParam {
                key: "minimize.iterations".into(),
                reason: "iteration limits must be at least 1".into(),
            });
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.step_shrink > 0.0 && self.step_shrink < 1.0)
        {
            return Err(Error::InvalidParam {
                key: "minimize.step_rule".into(),
                reason: "armijo and shrink factors must lie inside (0, 1)".into(),
            });
        }
        if let Some(d) = self.delta_pos {
            if !(d >= 0.0) {
                return Err(Error::InvalidParam {
                    key: "minimize.delta_pos".into(),
                    reason: "must be nonnegative".into(),
                });
            }
        }
        Ok(())
    }
}

/// Mean/min/max radius over free-boundary cells.
#[derive(Debug, Clone, Copy)]
pub struct RadiusStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RadiusStats {
    pub fn empty() -> Self {
        RadiusStats { mean: f64::NAN, min: f64::NAN, max: f64::NAN, count: 0 }
    }
}

pub fn free_boundary_radius_stats(field: &ScalarField, delta_pos: f64) -> RadiusStats {
    let cells = straddling_cells(field, delta_pos);
    if cells.is_empty() {
        return RadiusStats::empty();
    }
    let grid = &field.grid;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &c in &cells {
        let r = norm2(&grid.cell_center(c), grid.n);
        sum += r;
        min = min.min(r);
        max = max.max(r);
    }
    RadiusStats { mean: sum / cells.len() as f64, min, max, count: cells.len() }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub energy_trace: Vec<EnergyBreakdown>,
    pub constraint_residual: f64,
    pub fb_radius_stats: RadiusStats,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub delta_pos: f64,
}

/// The ring initializer `v_r` of the existence proof: the smallest radius
/// with `omega(B_1) - omega(B_r) <= m` is located by bisection, the field is
/// solved with the trace on the sphere and pinned to zero on `B_r`, then
/// extended by zero inside. Its penalty vanishes by construction.
#[derive(Debug, Clone)]
pub struct VrGuess {
    pub field: ScalarField,
    pub radius: f64,
    pub dirichlet: f64,
}

pub fn initial_guess_vr(
    op: &StencilOperator,
    wf: &WeightField,
    bd: &BoundaryData,
    p: &PenaltyParams,
    solver: &SolverParams,
) -> Result<VrGuess> {
    let grid = &op.grid;
    wf.assert_matches(grid);
    let gfield = sample_boundary(bd, grid)?;

    // Weighted measure of the positivity set assuming every unpinned interior
    // node is positive (the solve makes them so, by the maximum principle).
    let pinned_measure = |r: f64| -> f64 {
        let vol = grid.cell_volume();
        let denom = (1u32 << grid.n) as f64;
        let mut total = 0.0;
        for cell in 0..grid.cells.len {
            if grid.interior_corner_count(cell) == 0 {
                continue;
            }
            let mut cnt = 0u32;
            for corner in grid.cell_corners(cell) {
                if grid.class(corner) == NodeClass::Interior
                    && norm2(&grid.node_coords(corner), grid.n) > r
                {
                    cnt += 1;
                }
            }
            total += wf.cell_value(cell) * vol * cnt as f64 / denom;
        }
        total
    };

    if pinned_measure(0.0) <= p.m {
        return Err(Error::BisectionFailed(format!(
            "target measure {} already exceeds the full discrete mass",
            p.m
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > grid.h / 16.0 {
        let mid = 0.5 * (lo + hi);
        if pinned_measure(mid) <= p.m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let radius = hi;
    if radius >= 1.0 - 2.0 * grid.h {
        return Err(Error::BisectionFailed(format!(
            "pinning radius {radius} leaves no annulus; m is too close to omega(B_1)"
        )));
    }

    let pinned: Vec<bool> = (0..grid.nodes.len)
        .map(|i| {
            grid.class(i) == NodeClass::Interior && norm2(&grid.node_coords(i), grid.n) <= radius
        })
        .collect();
    let (field, _) = solve_dirichlet(op, &gfield, Some(&pinned), solver, None)?;
    let dirichlet = dirichlet_energy(&field, wf);
    Ok(VrGuess { field, radius, dirichlet })
}

/// The truncation competitor `u_t`: `(u - t)^+ / (1 - t)` where `u <= 1`,
/// identity where `u >= 1`. Its positivity set is exactly `{u > t}` and the
/// trace is preserved whenever `g >= 1`.
pub fn truncate(field: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidParam {
            key: "t".into(),
            reason: format!("truncation level must lie in [0, 1), got {t}"),
        });
    }
    let mut out = field.clone();
    for v in &mut out.values {
        if *v < 1.0 {
            *v = (*v - t).max(0.0) / (1.0 - t);
        }
    }
    Ok(out)
}

/// Truncation in units of `gamma = inf g`, applied to interior nodes only so
/// the trace is preserved bit-exactly for any positive boundary data: this is
/// the paper's normalization `inf g >= 1` carried out internally.
fn truncate_scaled(field: &ScalarField, t: f64, gamma: f64) -> ScalarField {
    let grid = field.grid.clone();
    let mut out = field.clone();
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Interior {
            continue;
        }
        let w = out.values[idx] / gamma;
        if w < 1.0 {
            out.values[idx] = gamma * ((w - t).max(0.0) / (1.0 - t));
        }
    }
    out
}

/// Positive part and cap at `max g`. Both maps are 1-Lipschitz, fix the trace
/// and do not grow the positivity set, so they never increase `J_eps`; they
/// are applied after every accepted step.
fn project_box(field: &mut ScalarField, max_g: f64) {
    let grid = field.grid.clone();
    for idx in 0..grid.nodes.len {
        if grid.class(idx) == NodeClass::Interior {
            field.values[idx] = field.values[idx].clamp(0.0, max_g);
        }
    }
}

/// Bookkeeping for accepted iterates: only strict decreases of the true
/// `J_eps` enter the trace, so the trace is nonincreasing by construction.
struct Session {
    best: ScalarField,
    best_bk: EnergyBreakdown,
    trace: Vec<EnergyBreakdown>,
}

impl Session {
    fn new(start: ScalarField, bk: EnergyBreakdown) -> Self {
        Session { best: start, best_bk: bk, trace: vec![bk] }
    }

    fn try_accept(&mut self, field: &ScalarField, bk: EnergyBreakdown) -> bool {
        let slack = 1e-13 * (1.0 + self.best_bk.total.abs());
        if bk.total < self.best_bk.total - slack {
            self.best = field.clone();
            self.best_bk = bk;
            self.trace.push(bk);
            true
        } else {
            false
        }
    }
}

/// Minimize the penalized functional. The returned field carries the trace
/// `g`, is clamped to `[0, max g]`, and its `J_eps` does not exceed that of
/// the `v_r` initializer (nor of `init` when supplied).
pub fn minimize_penalized(
    op: &StencilOperator,
    wf: &WeightField,
    bd: &BoundaryData,
    p: &PenaltyParams,
    cfg: &MinimizeConfig,
    solver: &SolverParams,
    init: Option<&ScalarField>,
) -> Result<(ScalarField, SolveReport)> {
    cfg.validate()?;
    solver.validate()?;
    let grid = &op.grid;
    wf.assert_matches(grid);

    let gfield = sample_boundary(bd, grid)?;
    let max_g = gfield.max_abs();
    let delta = cfg.delta_pos.unwrap_or(1e-8 * max_g);

    // Candidate initializers: the ring solution v_r (zero penalty), the
    // unconstrained harmonic extension (minimal energy, full measure; the
    // better competitor when the penalty is weak), and the warm start.
    let vr = initial_guess_vr(op, wf, bd, p, solver)?;
    let (ext, _) = solve_dirichlet(op, &gfield, None, solver, init)?;
    let mut start = vr.field.clone();
    project_box(&mut start, max_g);
    let mut start_bk = evaluate_j(&start, wf, p, delta);
    for candidate in [Some(&ext), init].into_iter().flatten() {
        let mut cand = candidate.clone();
        project_box(&mut cand, max_g);
        let bk = evaluate_j(&cand, wf, p, delta);
        if bk.total < start_bk.total {
            start = cand;
            start_bk = bk;
        }
    }

    let mut session = Session::new(start, start_bk);
    let (converged, outer_done, inner_done) = match cfg.algorithm {
        Algorithm::ReplaceTruncate => {
            replace_truncate(op, wf, bd, p, cfg, solver, &gfield, max_g, delta, &mut session)?
        }
        Algorithm::SmoothedDescent => {
            smoothed_descent(op, wf, p, cfg, solver, &gfield, max_g, delta, &mut session)?
        }
    };

    let final_bk = session.best_bk;
    let report = SolveReport {
        energy_trace: session.trace,
        constraint_residual: final_bk.measure - p.m,
        fb_radius_stats: free_boundary_radius_stats(&session.best, delta),
        converged,
        outer_iterations: outer_done,
        inner_iterations: inner_done,
        delta_pos: delta,
    };
    Ok((session.best, report))
}

/// Harmonic re-solve pinned on the zero set of the current best iterate,
/// accepted only when it strictly lowers `J_eps`. Shared final step of both
/// algorithms: it never moves the free boundary and makes the field exactly
/// discretely harmonic on the positivity set.
fn polish_on_zero_set(
    op: &StencilOperator,
    wf: &WeightField,
    p: &PenaltyParams,
    solver: &SolverParams,
    gfield: &ScalarField,
    max_g: f64,
    delta: f64,
    session: &mut Session,
) -> Result<bool> {
    let grid = &op.grid;
    let pinned: Vec<bool> = (0..grid.nodes.len)
        .map(|i| grid.class(i) == NodeClass::Interior && session.best.values[i] <= delta)
        .collect();
    let warm = session.best.clone();
    let (mut sol, _) = solve_dirichlet(op, gfield, Some(&pinned), solver, Some(&warm))?;
    project_box(&mut sol, max_g);
    let bk = evaluate_j(&sol, wf, p, delta);
    Ok(session.try_accept(&sol, bk))
}

#[allow(clippy::too_many_arguments)]
fn replace_truncate(
    op: &StencilOperator,
    wf: &WeightField,
    bd: &BoundaryData,
    p: &PenaltyParams,
    cfg: &MinimizeConfig,
    solver: &SolverParams,
    gfield: &ScalarField,
    max_g: f64,
    delta: f64,
    session: &mut Session,
) -> Result<(bool, usize, usize)> {
    let gamma = bd.gamma;
    let mut inner = 0usize;
    let mut outer = 0usize;
    let mut converged = false;

    for _ in 0..cfg.outer_iterations {
        outer += 1;
        let mut improved = false;

        // (i) harmonic solve pinned to zero on the current zero set. The free
        // nodes all become positive, so the measure cannot shrink; the energy
        // is minimal given the zero set.
        improved |= polish_on_zero_set(op, wf, p, solver, gfield, max_g, delta, session)?;

        // (ii) truncation level by line search on J_eps along u_t.
        let eval_t = |t: f64, session: &Session| -> EnergyBreakdown {
            let cand = truncate_scaled(&session.best, t, gamma);
            evaluate_j(&cand, wf, p, delta)
        };
        let mut best_t = 0.0f64;
        let mut best_total = session.best_bk.total;
        for k in 1..=16 {
            let t = k as f64 / 32.0;
            inner += 1;
            let bk = eval_t(t, session);
            if bk.total < best_total {
                best_total = bk.total;
                best_t = t;
            }
        }
        if best_t > 0.0 {
            // Golden-section refinement around the best coarse level.
            let mut a = (best_t - 1.0 / 32.0).max(0.0);
            let mut b = (best_t + 1.0 / 32.0).min(0.5);
            let phi = 0.5 * (3.0 - 5.0f64.sqrt());
            for _ in 0..24 {
                inner += 2;
                let x1 = a + phi * (b - a);
                let x2 = b - phi * (b - a);
                if eval_t(x1, session).total <= eval_t(x2, session).total {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let t = 0.5 * (a + b);
            let cand = truncate_scaled(&session.best, t.max(best_t * 0.0).min(0.5), gamma);
            let bk = evaluate_j(&cand, wf, p, delta);
            let coarse = truncate_scaled(&session.best, best_t, gamma);
            let coarse_bk = evaluate_j(&coarse, wf, p, delta);
            if bk.total <= coarse_bk.total {
                improved |= session.try_accept(&cand, bk);
            } else {
                improved |= session.try_accept(&coarse, coarse_bk);
            }
        }

        if !improved {
            converged = true;
            break;
        }
    }
    // Leave the field exactly harmonic on its final positivity set.
    polish_on_zero_set(op, wf, p, solver, gfield, max_g, delta, session)?;
    Ok((converged, outer, inner))
}

/// C^1 ramp `s(x) = 3x^2 - 2x^3` on [0, 1].
#[inline]
fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * (3.0 - 2.0 * x)
    }
}

#[inline]
fn smoothstep_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        6.0 * x * (1.0 - x)
    }
}

#[allow(clippy::too_many_arguments)]
fn smoothed_descent(
    op: &StencilOperator,
    wf: &WeightField,
    p: &PenaltyParams,
    cfg: &MinimizeConfig,
    solver: &SolverParams,
    gfield: &ScalarField,
    max_g: f64,
    delta: f64,
    session: &mut Session,
) -> Result<(bool, usize, usize)> {
    let grid = op.grid.clone();
    let n_nodes = grid.nodes.len;
    let hn = grid.h.powi(grid.n as i32);

    // Per-node share of the cell mass: sum of adjacent cell values * h^n / 2^n.
    // The smoothed measure is sum over interior nodes of this weight times the
    // ramp, which reorders the per-cell corner average exactly.
    let mut node_cell_weight = vec![0.0; n_nodes];
    {
        let denom = (1u32 << grid.n) as f64;
        for cell in 0..grid.cells.len {
            let cv = wf.cell_value(cell) * hn / denom;
            for corner in grid.cell_corners(cell) {
                if grid.class(corner) == NodeClass::Interior {
                    node_cell_weight[corner] += cv;
                }
            }
        }
    }

    let interior: Vec<usize> =
        (0..n_nodes).filter(|&i| grid.class(i) == NodeClass::Interior).collect();

    let smoothed_measure = |u: &[f64], sigma: f64| -> f64 {
        interior
            .iter()
            .map(|&i| node_cell_weight[i] * smoothstep((u[i] - delta) / sigma))
            .sum()
    };
    let quad_energy = |u: &[f64]| -> f64 {
        // Same edge set and scaling as grid::dirichlet_energy.
        let mut e = 0.0;
        grid.for_each_edge(|axis, edge, pn, qn| {
            let cp = grid.class(pn);
            let cq = grid.class(qn);
            if cp == NodeClass::Exterior || cq == NodeClass::Exterior {
                return;
            }
            if cp != NodeClass::Interior && cq != NodeClass::Interior {
                return;
            }
            let d = u[qn] - u[pn];
            e += op.conductance(axis, edge) * d * d * hn;
        });
        e
    };
    let j_sigma = |u: &[f64], sigma: f64| -> f64 {
        quad_energy(u) + f_eps(smoothed_measure(u, sigma), p)
    };

    // grad = -2 h^n (L u) + penalty' * d(smoothed measure). The penalty
    // subgradient at the kink (measure == m) is taken as 0, matching the
    // one-sided derivative from below.
    let mut lu = vec![0.0; n_nodes];
    let gradient = |u: &[f64], sigma: f64, lu: &mut Vec<f64>, out: &mut Vec<f64>| {
        op.apply(u, lu);
        let active = smoothed_measure(u, sigma) > p.m;
        for &i in &interior {
            let mut g = -2.0 * hn * lu[i];
            if active {
                g += node_cell_weight[i] * smoothstep_deriv((u[i] - delta) / sigma)
                    / (sigma * p.epsilon);
            }
            out[i] = g;
        }
    };

    let mut u: Vec<f64> = session.best.values.clone();
    let mut grad = vec![0.0; n_nodes];
    let mut grad_prev = vec![0.0; n_nodes];
    let mut u_prev = vec![0.0; n_nodes];
    let max_diag = interior.iter().map(|&i| op.diag(i)).fold(0.0f64, f64::max);
    let tau0 = 1.0 / (4.0 * hn * max_diag);
    // Stationarity scale: the gradient of the energy at a field with O(max g)
    // jumps across a cell.
    let stat_tol = 1e-9 * 2.0 * hn * max_diag * max_g * (interior.len() as f64).sqrt();
    let mut inner_total = 0usize;
    let mut stages = 0usize;
    let mut stationary = false;

    let sigma_floor = (2.0 * delta).max(1e-12);
    for stage in 0..cfg.outer_iterations {
        stages += 1;
        let sigma = (cfg.smoothing_sigma * cfg.anneal_factor.powi(stage as i32)).max(sigma_floor);
        let mut jcur = j_sigma(&u, sigma);
        let mut tau = tau0;
        let mut have_prev = false;
        stationary = false;

        for it in 0..cfg.inner_iterations {
            gradient(&u, sigma, &mut lu, &mut grad);
            // Projected-gradient stationarity test.
            let mut pg2 = 0.0;
            for &i in &interior {
                let moved = (u[i] - tau0 * grad[i]).clamp(0.0, max_g);
                let pg = (u[i] - moved) / tau0;
                pg2 += pg * pg;
            }
            if pg2.sqrt() <= stat_tol {
                stationary = true;
                break;
            }
            if have_prev {
                // BB1 step from the last accepted move.
                let mut sy = 0.0;
                let mut ss = 0.0;
                for &i in &interior {
                    let s = u[i] - u_prev[i];
                    let y = grad[i] - grad_prev[i];
                    sy += s * y;
                    ss += s * s;
                }
                if sy > 0.0 {
                    tau = (ss / sy).clamp(1e-6 * tau0, 1e6 * tau0);
                }
            }

            // Projected step with Armijo backtracking on J_sigma.
            let mut accepted = false;
            let mut step = tau;
            for _ in 0..cfg.max_backtracks {
                let mut cand = u.clone();
                let mut decrease = 0.0;
                for &i in &interior {
                    let v = (u[i] - step * grad[i]).clamp(0.0, max_g);
                    decrease += grad[i] * (u[i] - v);
                    cand[i] = v;
                }
                if decrease <= 0.0 {
                    break; // projected stationarity
                }
                let jc = j_sigma(&cand, sigma);
                if jc <= jcur - cfg.armijo * decrease {
                    u_prev.copy_from_slice(&u);
                    grad_prev.copy_from_slice(&grad);
                    u = cand;
                    jcur = jc;
                    have_prev = true;
                    accepted = true;
                    break;
                }
                step *= cfg.step_shrink;
            }
            inner_total += 1;
            if !accepted {
                stationary = true;
                break;
            }
            // Periodically record true-J improvements.
            if it % 64 == 63 {
                let f = ScalarField { grid: grid.clone(), values: u.clone() };
                let bk = evaluate_j(&f, wf, p, delta);
                session.try_accept(&f, bk);
            }
        }

        let f = ScalarField { grid: grid.clone(), values: u.clone() };
        let bk = evaluate_j(&f, wf, p, delta);
        session.try_accept(&f, bk);
        if sigma <= sigma_floor && stationary {
            break;
        }
    }

    // Final harmonic polish on the descent's zero set (energy cannot grow,
    // measure cannot grow: accepted only if J_eps strictly drops).
    polish_on_zero_set(op, wf, p, solver, gfield, max_g, delta, session)?;
    Ok((stationary, stages, inner_total))
}

/// One epsilon row of the continuation.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub measure: f64,
    pub dirichlet: f64,
    pub penalty: f64,
    pub residual: f64,
    pub fb: RadiusStats,
    pub converged: bool,
    pub probe: ProbeResult,
}

/// The truncation-competitor inequality of the small-epsilon argument,
/// evaluated at a probe level: with `w = u / gamma`,
/// `int_{0<w<t} |grad w|^2 omega + eps^-1 omega({0<w<t})
///  <= (2t - t^2)/(1-t)^2 * int |grad v_r/gamma|^2 omega`.
/// Its derivation requires `omega({w > t}) > m`; `applicable` records whether
/// that hypothesis holds for this field, `holds` whether the inequality does.
#[derive(Debug, Clone, Copy)]
pub struct ProbeResult {
    pub t: f64,
    pub band_energy: f64,
    pub band_measure: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub applicable: bool,
    pub holds: bool,
}

pub fn probe_truncation_inequality(
    field: &ScalarField,
    wf: &WeightField,
    p: &PenaltyParams,
    vr_dirichlet: f64,
    gamma: f64,
    t: f64,
    delta: f64,
) -> ProbeResult {
    let level = gamma * t;
    let above_t = positivity_measure(field, wf, level);
    let above_delta = positivity_measure(field, wf, delta);
    let band_measure = (above_delta - above_t).max(0.0);
    // Edges carrying the gradient of the band {delta < u < gamma t}: both
    // endpoints at or below the level, at least one strictly inside the band.
    let vals = &field.values;
    let band_energy_u = energy_over_edges(field, wf, |pn, qn| {
        let a = vals[pn];
        let b = vals[qn];
        a <= level && b <= level && ((a > delta && a < level) || (b > delta && b < level))
    });
    let band_energy = band_energy_u / (gamma * gamma);
    let lhs = band_energy + band_measure / p.epsilon;
    let rhs = (2.0 * t - t * t) / ((1.0 - t) * (1.0 - t)) * (vr_dirichlet / (gamma * gamma));
    ProbeResult {
        t,
        band_energy,
        band_measure,
        lhs,
        rhs,
        applicable: above_t > p.m,
        holds: lhs <= rhs + 1e-8,
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// First epsilon whose converged solve attains the measure within the
    /// tolerance: the empirical threshold of the existence theorem.
    pub epsilon_star: Option<f64>,
    pub aborted: bool,
    pub vr_dirichlet: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "epsilon,measure,dirichlet,penalty,residual,fb_mean_r,fb_min_r,fb_max_r,converged";

pub fn sweep_row_csv(row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.epsilon,
        row.measure,
        row.dirichlet,
        row.penalty,
        row.residual,
        row.fb.mean,
        row.fb.min,
        row.fb.max,
        row.converged
    )
}

/// Warm-started continuation over a strictly decreasing epsilon schedule.
/// Each row records the converged breakdown, free-boundary statistics and the
/// truncation-inequality probe. A diverging solve aborts the sweep; rows
/// produced so far are kept.
#[allow(clippy::too_many_arguments)]
pub fn sweep_epsilon(
    op: &StencilOperator,
    wf: &WeightField,
    bd: &BoundaryData,
    m_fraction: f64,
    schedule: &[f64],
    cfg: &MinimizeConfig,
    solver: &SolverParams,
    probe_t: f64,
    measure_tol: f64,
) -> Result<SweepOutcome> {
    if schedule.is_empty() {
        return Err(Error::InvalidParam {
            key: "epsilon.schedule".into(),
            reason: "schedule must be nonempty".into(),
        });
    }
    for w in schedule.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidParam {
                key: "epsilon.schedule".into(),
                reason: format!("schedule must be strictly decreasing, got {} then {}", w[0], w[1]),
            });
        }
    }
    if !(schedule[schedule.len() - 1] > 0.0) {
        return Err(Error::InvalidParam {
            key: "epsilon.schedule".into(),
            reason: "epsilon values must be positive".into(),
        });
    }

    let p0 = PenaltyParams::from_fraction(schedule[0], m_fraction, wf)?;
    let vr = initial_guess_vr(op, wf, bd, &p0, solver)?;
    let gfield = sample_boundary(bd, &op.grid)?;
    let max_g = gfield.max_abs();
    let delta = cfg.delta_pos.unwrap_or(1e-8 * max_g);

    let mut rows = Vec::with_capacity(schedule.len());
    let mut warm: Option<ScalarField> = None;
    let mut epsilon_star = None;
    let mut aborted = false;

    for &eps in schedule {
        let p = PenaltyParams::from_fraction(eps, m_fraction, wf)?;
        let solved = minimize_penalized(op, wf, bd, &p, cfg, solver, warm.as_ref());
        let (field, report) = match solved {
            Ok(ok) => ok,
            Err(Error::SolveDiverged { .. }) => {
                aborted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let bk = evaluate_j(&field, wf, &p, delta);
        let probe =
            probe_truncation_inequality(&field, wf, &p, vr.dirichlet, bd.gamma, probe_t, delta);
        if epsilon_star.is_none() && report.converged && (bk.measure - p.m).abs() <= measure_tol {
            epsilon_star = Some(eps);
        }
        rows.push(SweepRow {
            epsilon: eps,
            measure: bk.measure,
            dirichlet: bk.dirichlet,
            penalty: bk.penalty,
            residual: bk.measure - p.m,
            fb: report.fb_radius_stats,
            converged: report.converged,
            probe,
        });
        warm = Some(field);
    }

    Ok(SweepOutcome { rows, epsilon_star, aborted, vr_dirichlet: vr.dirichlet })
}

/// Geometric default schedule `eps_k = 2^-k`, `k = 0..=12`.
pub fn default_epsilon_schedule() -> Vec<f64> {
    (0..=12).map(|k| 0.5f64.powi(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::assemble;
    use crate::grid::{build_grid, BoundarySpec, Grid};
    use crate::weights::{build_weight_field, WeightFamily, WeightSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn setup(
        res: usize,
        family: WeightFamily,
    ) -> (Arc<Grid>, WeightField, StencilOperator, BoundaryData) {
        let grid = build_grid(2, res).unwrap();
        let wf = build_weight_field(&WeightSpec::family(family), &grid, 3).unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        (grid, wf, op, bd)
    }

    #[test]
    fn f_eps_examples() {
        let p = PenaltyParams { epsilon: 0.1, m: 2.0, m_fraction: 0.5 };
        assert_eq!(f_eps(2.0, &p), 0.0);
        assert_eq!(f_eps(1.0, &p), 0.0);
        assert_relative_eq!(f_eps(3.0, &p), 10.0);
    }

    proptest! {
        #[test]
        fn f_eps_monotone_and_lipschitz(t1 in 0.0..10.0f64, t2 in 0.0..10.0f64, eps in 1e-3..10.0f64) {
            let p = PenaltyParams { epsilon: eps, m: 3.0, m_fraction: 0.5 };
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(f_eps(lo, &p) <= f_eps(hi, &p));
            prop_assert!(f_eps(hi, &p) - f_eps(lo, &p) <= (hi - lo) / eps + 1e-12);
            // Nonincreasing in eps above the target.
            let p2 = PenaltyParams { epsilon: 2.0 * eps, m: 3.0, m_fraction: 0.5 };
            prop_assert!(f_eps(hi, &p2) <= f_eps(hi, &p) + 1e-12);
        }
    }

    #[test]
    fn evaluate_j_on_the_constant_field() {
        let (grid, wf, _op, _bd) = setup(65, WeightFamily::Constant { value: 1.0 });
        let p = PenaltyParams::from_fraction(0.25, 0.5, &wf).unwrap();
        let one = ScalarField::from_fn(&grid, |_| 1.0);
        let bk = evaluate_j(&one, &wf, &p, 1e-8);
        assert_eq!(bk.dirichlet, 0.0);
        assert_relative_eq!(bk.measure, wf.total_mass, max_relative = 1e-12);
        assert_relative_eq!(bk.penalty, (wf.total_mass - p.m) / 0.25, max_relative = 1e-12);
        assert_relative_eq!(bk.total, bk.dirichlet + bk.penalty, max_relative = 1e-12);

        // Doubling epsilon halves the penalty, leaves the energy alone.
        let p2 = PenaltyParams::from_fraction(0.5, 0.5, &wf).unwrap();
        let bk2 = evaluate_j(&one, &wf, &p2, 1e-8);
        assert_relative_eq!(bk2.penalty, 0.5 * bk.penalty, max_relative = 1e-12);
        assert_eq!(bk2.dirichlet, bk.dirichlet);
    }

    #[test]
    fn vr_radius_oracles() {
        // omega = 1, m = pi/2: r = 1/sqrt(2).
        let (grid, wf, op, bd) = setup(129, WeightFamily::Constant { value: 1.0 });
        let p = PenaltyParams::from_fraction(0.1, 0.5, &wf).unwrap();
        let solver = SolverParams::default();
        let vr = initial_guess_vr(&op, &wf, &bd, &p, &solver).unwrap();
        let exact = 1.0 / 2.0f64.sqrt();
        assert!(
            (vr.radius - exact).abs() <= 2.0 * grid.h,
            "r = {}, exact = {exact}",
            vr.radius
        );
        let bk = evaluate_j(&vr.field, &wf, &p, 1e-8);
        assert!(bk.measure <= p.m + 1e-9, "measure {} > m {}", bk.measure, p.m);
        assert_eq!(bk.penalty, 0.0);

        // omega = |x|^-1, m = pi (half of 2 pi): r = 1/2.
        let (grid, wf, op, bd) = setup(129, WeightFamily::Power { beta: -1.0 });
        let p = PenaltyParams::from_fraction(0.1, 0.5, &wf).unwrap();
        let vr = initial_guess_vr(&op, &wf, &bd, &p, &solver).unwrap();
        assert!((vr.radius - 0.5).abs() <= 2.0 * grid.h, "r = {}", vr.radius);
        let bk = evaluate_j(&vr.field, &wf, &p, 1e-8);
        assert!(bk.measure <= p.m + 1e-9);
        assert_eq!(bk.penalty, 0.0);
    }

    #[test]
    fn vr_rejects_degenerate_targets() {
        let (_grid, wf, _op, _bd) = setup(65, WeightFamily::Constant { value: 1.0 });
        assert!(PenaltyParams::from_fraction(0.1, 0.9999, &wf).is_err());
        assert!(PenaltyParams::from_fraction(0.1, 1e-9, &wf).is_err());
        assert!(PenaltyParams::from_fraction(0.1, 1.0, &wf).is_err());
    }

    #[test]
    fn truncate_examples() {
        let (grid, _wf, _op, _bd) = setup(33, WeightFamily::Constant { value: 1.0 });
        let f = ScalarField::from_fn(&grid, |x| 0.5 + 0.0 * x[0]);
        let id = truncate(&f, 0.0).unwrap();
        assert_eq!(id.values, f.values);
        let t = truncate(&f, 0.25).unwrap();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Exterior {
                assert_relative_eq!(t.values[idx], 1.0 / 3.0, max_relative = 1e-14);
            }
        }
        assert!(truncate(&f, 1.0).is_err());
        assert!(truncate(&f, -0.1).is_err());
        // Values at or above 1 are untouched.
        let big = ScalarField::from_fn(&grid, |_| 1.5);
        let tb = truncate(&big, 0.3).unwrap();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Exterior {
                assert_eq!(tb.values[idx], 1.5);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn truncation_level_set_identity(seed in 0u64..1000, t in 0.0..0.99f64) {
            use rand::{Rng, SeedableRng};
            let grid = build_grid(2, 17).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut f = ScalarField::zeros(&grid);
            for idx in 0..grid.nodes.len {
                if grid.class(idx) != NodeClass::Exterior {
                    f.values[idx] = rng.random_range(0.0..1.2);
                }
            }
            let tr = truncate(&f, t).unwrap();
            for idx in 0..grid.nodes.len {
                prop_assert_eq!(tr.values[idx] > 0.0, f.values[idx] > t, "node {}", idx);
            }
        }
    }

    #[test]
    fn truncation_measure_identity_and_monotonicity() {
        let (grid, wf, _op, _bd) = setup(33, WeightFamily::Constant { value: 1.0 });
        let f = ScalarField::from_fn(&grid, |x| (1.0 - norm2(&x, 2)).max(0.0));
        let mut last = f64::INFINITY;
        for t in [0.1, 0.3, 0.5, 0.7] {
            let tr = truncate(&f, t).unwrap();
            let m_tr = positivity_measure(&tr, &wf, 0.0);
            let m_level = positivity_measure(&f, &wf, t);
            assert_eq!(m_tr, m_level, "exact level-set identity at t = {t}");
            assert!(m_tr <= last);
            last = m_tr;
        }
    }

    #[test]
    fn both_algorithms_find_the_radial_minimizer_coarse() {
        // Coarse version of the acceptance oracle (N = 65): free boundary at
        // 1/sqrt(2), agreement of the two algorithms.
        let (grid, wf, op, bd) = setup(65, WeightFamily::Constant { value: 1.0 });
        let solver = SolverParams::default();
        let p = PenaltyParams::from_fraction(0.015625, 0.5, &wf).unwrap();
        let exact = 1.0 / 2.0f64.sqrt();

        let mut totals = Vec::new();
        for algorithm in [Algorithm::ReplaceTruncate, Algorithm::SmoothedDescent] {
            let cfg = MinimizeConfig { algorithm, ..Default::default() };
            let (field, report) =
                minimize_penalized(&op, &wf, &bd, &p, &cfg, &solver, None).unwrap();
            assert!(
                (report.fb_radius_stats.mean - exact).abs() <= 2.0 * grid.h,
                "{algorithm:?}: fb mean {} vs {exact}",
                report.fb_radius_stats.mean
            );
            // Energy trace is nonincreasing.
            for w in report.energy_trace.windows(2) {
                assert!(w[1].total <= w[0].total + 1e-12);
            }
            // Max principle bounds.
            for idx in 0..grid.nodes.len {
                assert!(field.values[idx] >= -1e-12 && field.values[idx] <= 1.0 + 1e-10);
            }
            totals.push(report.energy_trace.last().unwrap().total);
        }
        let rel = (totals[0] - totals[1]).abs() / totals[0];
        assert!(rel < 0.01, "algorithms disagree by {rel}: {totals:?}");
    }

    #[test]
    fn huge_epsilon_returns_the_unconstrained_extension() {
        // m close to the full mass and a weak penalty: the minimizer is the
        // plain harmonic extension. Needs the descent algorithm (the
        // replace/truncate moves can only shrink the positivity set).
        let grid = build_grid(2, 65).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            3,
        )
        .unwrap();
        let op = assemble(&grid, &wf).unwrap();
        let bd = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let solver = SolverParams::default();
        let p = PenaltyParams::from_fraction(8.0, 0.9, &wf).unwrap();
        let cfg = MinimizeConfig {
            algorithm: Algorithm::SmoothedDescent,
            ..Default::default()
        };
        let (u, _report) = minimize_penalized(&op, &wf, &bd, &p, &cfg, &solver, None).unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let (harm, _) = solve_dirichlet(&op, &g, None, &solver, None).unwrap();
        let mut dev = 0.0f64;
        for idx in 0..grid.nodes.len {
            dev = dev.max((u.values[idx] - harm.values[idx]).abs());
        }
        assert!(dev < 0.02, "deviation from harmonic extension: {dev}");
    }

    #[test]
    fn sweep_validates_schedules() {
        let (_grid, wf, op, bd) = setup(33, WeightFamily::Constant { value: 1.0 });
        let cfg = MinimizeConfig::default();
        let solver = SolverParams::default();
        assert!(sweep_epsilon(&op, &wf, &bd, 0.5, &[], &cfg, &solver, 0.01, 0.05).is_err());
        assert!(
            sweep_epsilon(&op, &wf, &bd, 0.5, &[0.5, 0.5], &cfg, &solver, 0.01, 0.05).is_err()
        );
        assert!(
            sweep_epsilon(&op, &wf, &bd, 0.5, &[0.5, 1.0], &cfg, &solver, 0.01, 0.05).is_err()
        );
    }

    #[test]
    fn sweep_radial_attainment_coarse() {
        let (_grid, wf, op, bd) = setup(65, WeightFamily::Constant { value: 1.0 });
        let cfg = MinimizeConfig::default();
        let solver = SolverParams::default();
        let schedule: Vec<f64> = (0..=6).map(|k| 0.5f64.powi(k)).collect();
        let tol = 0.02 * wf.total_mass;
        let out = sweep_epsilon(&op, &wf, &bd, 0.5, &schedule, &cfg, &solver, 0.01, tol).unwrap();
        assert!(!out.aborted);
        assert_eq!(out.rows.len(), schedule.len());
        let m = 0.5 * wf.total_mass;
        let last = out.rows.last().unwrap();
        assert!(last.residual.abs() <= tol, "final residual {}", last.residual);
        for row in &out.rows {
            assert!(row.measure >= m - tol, "row at eps {} lost measure", row.epsilon);
        }
        assert!(out.epsilon_star.is_some());
        // Minimum values are nondecreasing as epsilon decreases.
        let totals: Vec<f64> = out.rows.iter().map(|r| r.dirichlet + r.penalty).collect();
        for w in totals.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "totals not monotone: {totals:?}");
        }
    }
}
