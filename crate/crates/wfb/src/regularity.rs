//! Numerical verification of the regularity theory: dyadic Campanato decay
//! and its fitted exponent, Holder seminorm estimates, Harnack checks on
//! solutions, free-boundary extraction, and the constants of the decay
//! iteration assembled from the sampled weight constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::{
    harmonic_replacement, harnack_ratio, solve_dirichlet, RegularityConstants, SolverParams,
    StencilOperator,
};
use crate::error::{Error, Result};
use crate::grid::{norm2, Grid, NodeClass, ScalarField, MAX_DIM};
use crate::levelset::straddling_cells;
use crate::penalized::{free_boundary_radius_stats, RadiusStats};
use crate::weights::{A2Report, WeightField};

/// Node quadrature mass `omega_p * h^n` (average of adjacent cell values).
pub fn node_masses(grid: &Grid, wf: &WeightField) -> Vec<f64> {
    wf.assert_matches(grid);
    let mut weight = vec![0.0; grid.nodes.len];
    let mut count = vec![0u32; grid.nodes.len];
    for cell in 0..grid.cells.len {
        let cv = wf.cell_value(cell);
        for corner in grid.cell_corners(cell) {
            weight[corner] += cv;
            count[corner] += 1;
        }
    }
    let vol = grid.cell_volume();
    (0..grid.nodes.len)
        .map(|i| if count[i] > 0 { weight[i] / count[i] as f64 * vol } else { 0.0 })
        .collect()
}

/// How the approximating constant `a_j` is chosen per level.
pub enum CampanatoMode<'a> {
    /// Weighted mean of the field on the ball: minimizes the L^2(omega)
    /// deviation and needs no extra solve.
    WeightedMean,
    /// Value at the center of the harmonic replacement on the ball, the
    /// construction used in the decay iteration itself. Slower; kept for
    /// fidelity runs.
    HarmonicReplacement(&'a StencilOperator, &'a SolverParams),
}

#[derive(Debug, Clone, Copy)]
pub struct CampanatoLevel {
    pub j: usize,
    pub radius: f64,
    /// Approximating constant on this ball.
    pub a: f64,
    /// Normalized deviation `omega(B)^-1 int |u - a|^2 omega`.
    pub d: f64,
    /// `|a_j - a_{j-1}|` (0 at level 0).
    pub a_step: f64,
}

#[derive(Debug, Clone)]
pub struct CampanatoTrace {
    pub center: [f64; MAX_DIM],
    pub lambda: f64,
    pub levels: Vec<CampanatoLevel>,
    /// Least-squares slope of `log d_j` against `log r_j`, over levels whose
    /// deviation sits above the noise floor. `None` for constant fields.
    pub fitted_alpha: Option<f64>,
    pub is_constant: bool,
}

impl CampanatoTrace {
    pub const CSV_HEADER: &'static str = "j,a_j,d_j";

    pub fn csv_rows(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for l in &self.levels {
            out.push_str(&format!("{},{},{}\n", l.j, l.a, l.d));
        }
        out
    }
}

/// Dyadic decay trace of the normalized deviations on balls
/// `B_{r0 * lambda^j}(center)`. The base radius defaults to (almost) the
/// distance to the sphere; levels stop at radius `4h` or at `depth`.
pub fn campanato_decay(
    field: &ScalarField,
    wf: &WeightField,
    center: &[f64; MAX_DIM],
    lambda: f64,
    depth: usize,
    base_radius: Option<f64>,
    mode: CampanatoMode<'_>,
) -> Result<CampanatoTrace> {
    let grid = &field.grid;
    wf.assert_matches(grid);
    if !(lambda > 0.0 && lambda < 0.5) {
        return Err(Error::InvalidParam {
            key: "lambda".into(),
            reason: format!("dyadic ratio must lie in (0, 1/2), got {lambda}"),
        });
    }
    let dist_to_sphere = 1.0 - norm2(center, grid.n);
    let r0 = base_radius.unwrap_or(0.999 * dist_to_sphere);
    if !(r0 > 0.0) || r0 > dist_to_sphere {
        return Err(Error::InvalidParam {
            key: "base_radius".into(),
            reason: format!("level-0 ball of radius {r0} does not fit inside the unit ball"),
        });
    }

    let masses = node_masses(grid, wf);
    let mut levels: Vec<CampanatoLevel> = Vec::new();
    let mut prev_a = 0.0;
    for j in 0..depth {
        let r = r0 * lambda.powi(j as i32);
        if r < 4.0 * grid.h {
            break;
        }
        let mut nodes = Vec::new();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Interior {
                continue;
            }
            let x = grid.node_coords(idx);
            let mut d2 = 0.0;
            for a in 0..grid.n {
                d2 += (x[a] - center[a]) * (x[a] - center[a]);
            }
            if d2.sqrt() < r {
                nodes.push(idx);
            }
        }
        if nodes.is_empty() {
            break;
        }
        let mass: f64 = nodes.iter().map(|&i| masses[i]).sum();
        let a = match &mode {
            CampanatoMode::WeightedMean => {
                nodes.iter().map(|&i| masses[i] * field.values[i]).sum::<f64>() / mass
            }
            CampanatoMode::HarmonicReplacement(op, params) => {
                let (replaced, _) = harmonic_replacement(field, center, r, op, params)?;
                // Value at the node closest to the center.
                let mut best = nodes[0];
                let mut best_d = f64::INFINITY;
                for &i in &nodes {
                    let x = grid.node_coords(i);
                    let mut d2 = 0.0;
                    for a in 0..grid.n {
                        d2 += (x[a] - center[a]) * (x[a] - center[a]);
                    }
                    if d2 < best_d {
                        best_d = d2;
                        best = i;
                    }
                }
                replaced.values[best]
            }
        };
        let d = nodes
            .iter()
            .map(|&i| masses[i] * (field.values[i] - a) * (field.values[i] - a))
            .sum::<f64>()
            / mass;
        let a_step = if j == 0 { 0.0 } else { (a - prev_a).abs() };
        prev_a = a;
        levels.push(CampanatoLevel { j, radius: r, a, d, a_step });
    }

    if levels.len() < 2 {
        return Err(Error::TooFewLevels(levels.len()));
    }

    let d_max = levels.iter().map(|l| l.d).fold(0.0f64, f64::max);
    let scale = field.max_abs().max(1.0);
    let is_constant = d_max <= 100.0 * f64::EPSILON * scale * scale;
    let fitted_alpha = if is_constant {
        None
    } else {
        let floor = 100.0 * f64::EPSILON * d_max;
        let pts: Vec<(f64, f64)> = levels
            .iter()
            .filter(|l| l.d > floor)
            .map(|l| (l.radius.ln(), l.d.ln()))
            .collect();
        if pts.len() < 2 {
            None
        } else {
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
        }
    };

    Ok(CampanatoTrace { center: *center, lambda, levels, fitted_alpha, is_constant })
}

#[derive(Debug, Clone, Copy)]
pub struct HolderEstimate {
    /// Max of `|u(x) - u(y)| / |x - y|^beta` over the sampled pairs.
    pub seminorm: f64,
    /// `(int_{B_1} u^2 omega)^(1/2)`.
    pub l2_norm: f64,
    /// `seminorm / l2_norm`, the shape of the regularity estimate.
    pub ratio: f64,
    pub pairs: usize,
}

/// Sampled Holder seminorm over node pairs in `B_K`; deterministic for a
/// fixed seed, and nondecreasing in the sample size (the pair stream is a
/// prefix).
pub fn holder_seminorm(
    field: &ScalarField,
    wf: &WeightField,
    k_radius: f64,
    beta: f64,
    pair_sample: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParam {
            key: "beta".into(),
            reason: format!("Holder exponent must lie in (0, 1), got {beta}"),
        });
    }
    if !(k_radius > 0.0 && k_radius < 1.0) {
        return Err(Error::InvalidParam {
            key: "K".into(),
            reason: format!("compact radius must lie in (0, 1), got {k_radius}"),
        });
    }
    let grid = &field.grid;
    let nodes: Vec<usize> = (0..grid.nodes.len)
        .filter(|&i| {
            grid.class(i) == NodeClass::Interior && norm2(&grid.node_coords(i), grid.n) <= k_radius
        })
        .collect();
    if nodes.len() < 2 {
        return Err(Error::InvalidGrid("fewer than two nodes inside B_K".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seminorm = 0.0f64;
    for _ in 0..pair_sample {
        let i = nodes[rng.random_range(0..nodes.len())];
        let j = nodes[rng.random_range(0..nodes.len())];
        if i == j {
            continue;
        }
        let xi = grid.node_coords(i);
        let xj = grid.node_coords(j);
        let mut d2 = 0.0;
        for a in 0..grid.n {
            d2 += (xi[a] - xj[a]) * (xi[a] - xj[a]);
        }
        let dist = d2.sqrt();
        seminorm = seminorm.max((field.values[i] - field.values[j]).abs() / dist.powf(beta));
    }
    let masses = node_masses(grid, wf);
    let l2: f64 = (0..grid.nodes.len)
        .filter(|&i| grid.class(i) == NodeClass::Interior)
        .map(|i| masses[i] * field.values[i] * field.values[i])
        .sum::<f64>()
        .sqrt();
    let ratio = if l2 > 0.0 { seminorm / l2 } else { 0.0 };
    Ok(HolderEstimate { seminorm, l2_norm: l2, ratio, pairs: pair_sample })
}

#[derive(Debug, Clone)]
pub struct HarnackBall {
    pub center: [f64; MAX_DIM],
    pub radius: f64,
    pub ratio: f64,
    /// Max relative deviation of the field from its harmonic replacement on
    /// the ball: small values confirm local omega-harmonicity.
    pub replacement_dev: f64,
}

#[derive(Debug, Clone)]
pub struct HarnackVerification {
    pub balls: Vec<HarnackBall>,
    pub worst_ratio: f64,
    pub mean_ratio: f64,
    /// Set when no ball of radius >= 8h fits inside the positivity set.
    pub skipped: bool,
}

/// Sample balls fully inside `{u > delta}`, confirm the field is locally
/// omega-harmonic there via harmonic replacement, and record the sup/inf
/// ratios over the half-radius balls.
pub fn verify_harnack_on_solution(
    field: &ScalarField,
    op: &StencilOperator,
    delta_pos: f64,
    params: &SolverParams,
) -> Result<HarnackVerification> {
    let grid = &op.grid;
    let stride = (grid.resolution / 12).max(1);
    // Interior nodes at or below the threshold limit the admissible radius.
    let zero_nodes: Vec<[f64; MAX_DIM]> = (0..grid.nodes.len)
        .filter(|&i| grid.class(i) == NodeClass::Interior && field.values[i] <= delta_pos)
        .map(|i| grid.node_coords(i))
        .collect();

    let mut balls = Vec::new();
    let mut multi = [0usize; MAX_DIM];
    'centers: loop {
        let idx = grid.nodes.index(multi);
        if grid.class(idx) == NodeClass::Interior && field.values[idx] > delta_pos {
            let c = grid.node_coords(idx);
            let mut rho = 1.0 - norm2(&c, grid.n);
            for z in &zero_nodes {
                let mut d2 = 0.0;
                for a in 0..grid.n {
                    d2 += (c[a] - z[a]) * (c[a] - z[a]);
                }
                rho = rho.min(d2.sqrt());
            }
            let rho = (0.9 * rho).min(0.4);
            if rho >= 8.0 * grid.h && balls.len() < 12 {
                let (replaced, _) = harmonic_replacement(field, &c, rho, op, params)?;
                let mut dev = 0.0f64;
                let mut scale = 0.0f64;
                let mut sup = f64::NEG_INFINITY;
                let mut inf = f64::INFINITY;
                for i in 0..grid.nodes.len {
                    if grid.class(i) != NodeClass::Interior {
                        continue;
                    }
                    let x = grid.node_coords(i);
                    let mut d2 = 0.0;
                    for a in 0..grid.n {
                        d2 += (x[a] - c[a]) * (x[a] - c[a]);
                    }
                    let d = d2.sqrt();
                    if d < rho {
                        dev = dev.max((replaced.values[i] - field.values[i]).abs());
                        scale = scale.max(field.values[i].abs());
                        if d < 0.5 * rho {
                            sup = sup.max(field.values[i]);
                            inf = inf.min(field.values[i]);
                        }
                    }
                }
                let rel_dev = if scale > 0.0 { dev / scale } else { dev };
                if inf > 0.0 && rel_dev <= 1e-5 {
                    balls.push(HarnackBall {
                        center: c,
                        radius: rho,
                        ratio: sup / inf,
                        replacement_dev: rel_dev,
                    });
                }
            }
        }
        // Advance the strided lattice cursor.
        for a in 0..grid.n {
            multi[a] += stride;
            if multi[a] < grid.resolution {
                continue 'centers;
            }
            multi[a] = 0;
        }
        break;
    }

    if balls.is_empty() {
        return Ok(HarnackVerification {
            balls,
            worst_ratio: f64::NAN,
            mean_ratio: f64::NAN,
            skipped: true,
        });
    }
    let worst = balls.iter().map(|b| b.ratio).fold(f64::NEG_INFINITY, f64::max);
    let mean = balls.iter().map(|b| b.ratio).sum::<f64>() / balls.len() as f64;
    Ok(HarnackVerification { balls, worst_ratio: worst, mean_ratio: mean, skipped: false })
}

#[derive(Debug, Clone)]
pub struct FreeBoundary {
    pub cells: Vec<usize>,
    pub radius_stats: RadiusStats,
    /// The field was entirely positive or entirely nonpositive.
    pub empty: bool,
}

/// Cells straddling the positivity threshold, with radial statistics.
pub fn extract_free_boundary(field: &ScalarField, delta_pos: f64) -> FreeBoundary {
    let cells = straddling_cells(field, delta_pos);
    let empty = cells.is_empty();
    let radius_stats = free_boundary_radius_stats(field, delta_pos);
    FreeBoundary { cells, radius_stats, empty }
}

/// Assemble the decay-iteration constants from sampled inputs:
/// `C_* = C_P D / (4 eps)`; the radius is the largest dyadic `lambda < 1/4`
/// with `4 Cbar^2 (D+1) lambda^(2 alpha) <= lambda^alpha / 2`; `eta_0` is the
/// minimum of the two admissibility expressions (kept below 1).
pub fn compute_constants(
    a2: &A2Report,
    n: usize,
    epsilon: f64,
    c_p: f64,
    alpha_empirical: f64,
    cbar_empirical: f64,
    c_h: f64,
) -> Result<RegularityConstants> {
    let alpha = alpha_empirical.clamp(0.01, 0.99);
    let d = a2.doubling_d;
    let c1 = a2.c1_estimate;
    let c_star = c_p * d / (4.0 * epsilon);

    let mut lambda = None;
    for k in 3..=200 {
        let cand = 0.5f64.powi(k);
        if 4.0 * cbar_empirical * cbar_empirical * (d + 1.0) * cand.powf(2.0 * alpha)
            <= 0.5 * cand.powf(alpha)
        {
            lambda = Some(cand);
            break;
        }
    }
    let lambda = lambda.ok_or(Error::NoDecayRadius {
        bound: 1.0 / (8.0 * cbar_empirical * cbar_empirical * (d + 1.0)),
    })?;

    let e1 = 1.0 / (c_star * lambda.powf(2.0 - alpha));
    let e2 = c1 / (4.0 * c_star) * lambda.powf(alpha) * (2.0 * lambda).powi(2 * n as i32);
    let eta0 = e1.min(e2).min(1.0 - 1e-9);

    Ok(RegularityConstants { c_p, c_h, alpha, cbar: cbar_empirical, lambda, eta0, c_star })
}

/// Re-substitution check for [`compute_constants`]: both defining
/// inequalities evaluated verbatim at the output.
pub fn constants_satisfy(rc: &RegularityConstants, a2: &A2Report, n: usize) -> (bool, bool) {
    let d = a2.doubling_d;
    let radius_ok = 4.0 * rc.cbar * rc.cbar * (d + 1.0) * rc.lambda.powf(2.0 * rc.alpha)
        <= 0.5 * rc.lambda.powf(rc.alpha) + 1e-15;
    let e1 = 1.0 / (rc.c_star * rc.lambda.powf(2.0 - rc.alpha));
    let e2 = a2.c1_estimate / (4.0 * rc.c_star)
        * rc.lambda.powf(rc.alpha)
        * (2.0 * rc.lambda).powi(2 * n as i32);
    let eta_ok = rc.eta0 <= e1.min(e2) + 1e-15 && rc.eta0 > 0.0 && rc.eta0 < 1.0;
    (radius_ok, eta_ok)
}

/// Flat `key = value` serialization of the constants report.
pub fn constants_report(rc: &RegularityConstants) -> String {
    format!(
        "c_p = {}\nc_h = {}\nalpha = {}\ncbar = {}\nlambda = {}\neta0 = {}\nc_star = {}\n",
        rc.c_p, rc.c_h, rc.alpha, rc.cbar, rc.lambda, rc.eta0, rc.c_star
    )
}

/// Empirical Holder data of an omega-harmonic test solution: the Campanato
/// exponent at the origin (clamped into (0,1) for use in the constants), the
/// norm constant of the regularity estimate, and the Harnack ratio.
pub struct HarmonicFit {
    pub alpha: f64,
    pub alpha_raw: f64,
    pub cbar: f64,
    pub c_h: f64,
}

pub fn fit_harmonic_regularity(
    op: &StencilOperator,
    wf: &WeightField,
    params: &SolverParams,
    seed: u64,
) -> Result<HarmonicFit> {
    let grid = &op.grid;
    let bd = crate::grid::BoundaryData::new(crate::grid::BoundarySpec::Cosine {
        offset: 2.0,
        amplitude: 1.0,
        mode: 1,
    })?;
    let g = crate::grid::sample_boundary(&bd, grid)?;
    let (h, _) = solve_dirichlet(op, &g, None, params, None)?;
    let trace = campanato_decay(
        &h,
        wf,
        &[0.0; MAX_DIM],
        0.49,
        10,
        None,
        CampanatoMode::WeightedMean,
    )?;
    let alpha_raw = trace.fitted_alpha.unwrap_or(1.0);
    let alpha = alpha_raw.clamp(0.01, 0.99);
    let c_h = harnack_ratio(&h, op, params)?;
    // Norm constant of the estimate on B_{1/2} against the normalized
    // L^2(omega) norm on B_1.
    let est = holder_seminorm(&h, wf, 0.5, alpha, 4000, seed)?;
    let mut sup = 0.0f64;
    for i in 0..grid.nodes.len {
        if grid.class(i) == NodeClass::Interior && norm2(&grid.node_coords(i), grid.n) <= 0.5 {
            sup = sup.max(h.values[i].abs());
        }
    }
    let normalized_l2 = est.l2_norm / wf.total_mass.sqrt();
    let cbar = (sup + est.seminorm) / normalized_l2;
    Ok(HarmonicFit { alpha, alpha_raw, cbar, c_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::assemble;
    use crate::grid::{build_grid, BoundaryData, BoundarySpec, ScalarField};
    use crate::weights::{build_weight_field, estimate_a2, BallSampler, WeightFamily, WeightSpec};
    use approx::assert_relative_eq;

    fn unit_setup(res: usize) -> (std::sync::Arc<Grid>, WeightField, StencilOperator) {
        let grid = build_grid(2, res).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            2,
        )
        .unwrap();
        let op = assemble(&grid, &wf).unwrap();
        (grid, wf, op)
    }

    #[test]
    fn campanato_constant_field_is_flagged() {
        let (grid, wf, _op) = unit_setup(65);
        let f = ScalarField::from_fn(&grid, |_| 2.0);
        let tr = campanato_decay(&f, &wf, &[0.0; MAX_DIM], 0.45, 6, None, CampanatoMode::WeightedMean)
            .unwrap();
        assert!(tr.is_constant);
        assert!(tr.fitted_alpha.is_none());
        for l in &tr.levels {
            assert!(l.d.abs() < 1e-20);
        }
    }

    #[test]
    fn campanato_linear_field_fits_two() {
        let (grid, wf, _op) = unit_setup(129);
        let f = ScalarField::from_fn(&grid, |x| x[0]);
        let tr = campanato_decay(&f, &wf, &[0.0; MAX_DIM], 0.5 - 1e-9, 8, Some(0.99), CampanatoMode::WeightedMean)
            .unwrap();
        let alpha = tr.fitted_alpha.unwrap();
        assert!((alpha - 2.0).abs() <= 0.1, "alpha = {alpha}");
        // d_j tracks the second moment r^2/4 of a linear function on disks.
        for l in &tr.levels {
            let exact = l.radius * l.radius / 4.0;
            assert!((l.d - exact).abs() / exact < 0.05, "d = {} vs {exact}", l.d);
        }
        assert!(tr.levels.len() >= 4);
    }

    #[test]
    fn campanato_mean_is_shift_invariant() {
        let (grid, wf, _op) = unit_setup(65);
        let f = ScalarField::from_fn(&grid, |x| (2.0 * x[0]).sin() + x[1]);
        let mut g = f.clone();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Exterior {
                g.values[idx] += 5.0;
            }
        }
        let ta = campanato_decay(&f, &wf, &[0.0; MAX_DIM], 0.45, 5, None, CampanatoMode::WeightedMean)
            .unwrap();
        let tb = campanato_decay(&g, &wf, &[0.0; MAX_DIM], 0.45, 5, None, CampanatoMode::WeightedMean)
            .unwrap();
        for (la, lb) in ta.levels.iter().zip(&tb.levels) {
            assert_relative_eq!(la.d, lb.d, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn campanato_rescaling_covariance() {
        // The trace of u at x0/scale r, divided by delta^2, matches the trace
        // of the rescaled field with the rescaled weight at the origin.
        let res = 129;
        let grid = build_grid(2, res).unwrap();
        let base_spec = WeightSpec::family(WeightFamily::Power { beta: -1.0 });
        let wf = build_weight_field(&base_spec, &grid, 3).unwrap();
        let u = |x: [f64; MAX_DIM]| (1.5 * x[0]).sin() * (0.7 + x[1]);
        let f = ScalarField::from_fn(&grid, u);

        let x0 = [0.25, 0.125, 0.0];
        let r = 0.5;
        let delta = 2.0;
        let r0 = 0.4;
        // Depth 3 keeps both traces above the 4h floor on this grid.
        let ta = campanato_decay(&f, &wf, &x0, 0.45, 3, Some(r0), CampanatoMode::WeightedMean)
            .unwrap();

        let spec_resc = WeightSpec::rescaled(WeightFamily::Power { beta: -1.0 }, x0, r);
        let wf_resc = build_weight_field(&spec_resc, &grid, 3).unwrap();
        let f_resc = ScalarField::from_fn(&grid, |y| {
            u([x0[0] + r * y[0], x0[1] + r * y[1], 0.0]) / delta
        });
        let tb = campanato_decay(
            &f_resc,
            &wf_resc,
            &[0.0; MAX_DIM],
            0.45,
            3,
            Some(r0 / r),
            CampanatoMode::WeightedMean,
        )
        .unwrap();

        assert_eq!(ta.levels.len(), tb.levels.len());
        for (la, lb) in ta.levels.iter().zip(&tb.levels) {
            // d scales by delta^2; quadrature grids differ, so a few percent.
            assert!(
                (la.d / (delta * delta) - lb.d).abs() / lb.d < 0.05,
                "level {}: {} vs {}",
                la.j,
                la.d / (delta * delta),
                lb.d
            );
        }
    }

    #[test]
    fn campanato_replacement_mode_agrees_on_harmonic_fields() {
        let (grid, wf, op) = unit_setup(129);
        let params = SolverParams::default();
        let bd = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g = crate::grid::sample_boundary(&bd, &grid).unwrap();
        let (h, _) = solve_dirichlet(&op, &g, None, &params, None).unwrap();
        let mean_tr =
            campanato_decay(&h, &wf, &[0.0; MAX_DIM], 0.49, 6, None, CampanatoMode::WeightedMean)
                .unwrap();
        let hr_tr = campanato_decay(
            &h,
            &wf,
            &[0.0; MAX_DIM],
            0.49,
            6,
            None,
            CampanatoMode::HarmonicReplacement(&op, &params),
        )
        .unwrap();
        let a1 = mean_tr.fitted_alpha.unwrap();
        let a2 = hr_tr.fitted_alpha.unwrap();
        assert!((a1 - a2).abs() < 0.35, "mean {a1} vs replacement {a2}");
    }

    #[test]
    fn holder_seminorm_examples() {
        let (grid, wf, _op) = unit_setup(65);
        let c = ScalarField::from_fn(&grid, |_| 4.0);
        let est = holder_seminorm(&c, &wf, 0.5, 0.5, 500, 7).unwrap();
        assert_eq!(est.seminorm, 0.0);

        let f = ScalarField::from_fn(&grid, |x| x[0]);
        let est = holder_seminorm(&f, &wf, 0.5, 0.5, 2000, 7).unwrap();
        // |dx| / |dx|^(1/2) <= diam^(1/2) <= sqrt(2) on B_{1/2}.
        assert!(est.seminorm > 0.0 && est.seminorm <= 2.0f64.sqrt() + 1e-12);

        // Monotone in the sample count (prefix property of the pair stream).
        let small = holder_seminorm(&f, &wf, 0.5, 0.5, 200, 11).unwrap();
        let large = holder_seminorm(&f, &wf, 0.5, 0.5, 2000, 11).unwrap();
        assert!(large.seminorm >= small.seminorm);

        // Linear scaling under field scaling.
        let mut cf = f.clone();
        for v in &mut cf.values {
            *v *= 3.0;
        }
        let est3 = holder_seminorm(&cf, &wf, 0.5, 0.5, 2000, 7).unwrap();
        assert_relative_eq!(est3.seminorm, 3.0 * est.seminorm, max_relative = 1e-12);
        assert!(holder_seminorm(&f, &wf, 0.5, 1.0, 10, 0).is_err());
    }

    #[test]
    fn free_boundary_extraction() {
        let (grid, _wf, _op) = unit_setup(65);
        let f = ScalarField::from_fn(&grid, |x| (norm2(&x, 2) - 0.5).max(0.0));
        let fb = extract_free_boundary(&f, 1e-8);
        assert!(!fb.empty);
        assert!((fb.radius_stats.mean - 0.5).abs() <= grid.h, "mean {}", fb.radius_stats.mean);

        let ones = ScalarField::from_fn(&grid, |_| 1.0);
        assert!(extract_free_boundary(&ones, 1e-8).empty);
        let zeros = ScalarField::zeros(&grid);
        assert!(extract_free_boundary(&zeros, 1e-8).empty);
    }

    #[test]
    fn harnack_verification_on_harmonic_solution() {
        let (grid, _wf, op) = unit_setup(65);
        let params = SolverParams::default();
        let bd = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g = crate::grid::sample_boundary(&bd, &grid).unwrap();
        let (h, _) = solve_dirichlet(&op, &g, None, &params, None).unwrap();
        let ver = verify_harnack_on_solution(&h, &op, 1e-8, &params).unwrap();
        assert!(!ver.skipped);
        assert!(ver.worst_ratio >= 1.0);
        for b in &ver.balls {
            assert!(b.replacement_dev <= 1e-5);
        }

        let one = ScalarField::from_fn(&grid, |_| 1.0);
        let ver1 = verify_harnack_on_solution(&one, &op, 1e-8, &params).unwrap();
        assert!(!ver1.skipped);
        assert_relative_eq!(ver1.worst_ratio, 1.0, max_relative = 1e-12);

        // Nothing admissible in an all-zero field.
        let zeros = ScalarField::zeros(&grid);
        let ver0 = verify_harnack_on_solution(&zeros, &op, 1e-8, &params).unwrap();
        assert!(ver0.skipped);
    }

    #[test]
    fn constants_resubstitute() {
        let spec = WeightSpec::family(WeightFamily::Constant { value: 1.0 });
        let sampler = BallSampler::dyadic(&spec, 2, 2);
        let a2 = estimate_a2(&spec, &sampler).unwrap();
        let rc = compute_constants(&a2, 2, 0.25, 0.1729, 1.8, 2.4, 1.7).unwrap();
        let (r_ok, e_ok) = constants_satisfy(&rc, &a2, 2);
        assert!(r_ok && e_ok, "{rc:?}");
        assert!(rc.lambda > 0.0 && rc.lambda < 0.25);
        assert!(rc.eta0 > 0.0 && rc.eta0 < 1.0);
        assert!(rc.alpha > 0.0 && rc.alpha < 1.0);

        // Doubling epsilon halves C_*.
        let rc2 = compute_constants(&a2, 2, 0.5, 0.1729, 1.8, 2.4, 1.7).unwrap();
        assert_relative_eq!(rc2.c_star, 0.5 * rc.c_star, max_relative = 1e-12);

        // A smaller Cbar never shrinks the admissible radius.
        let rc_small = compute_constants(&a2, 2, 0.25, 0.1729, 1.8, 1.2, 1.7).unwrap();
        assert!(rc_small.lambda >= rc.lambda);
    }
}
