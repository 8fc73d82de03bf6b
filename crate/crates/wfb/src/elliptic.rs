//! The discrete divergence-form operator `L u = div(omega grad u)` on the
//! embedded-boundary grid, Dirichlet solves by preconditioned conjugate
//! gradients, harmonic replacement on sub-balls, and spectral/Harnack
//! estimates for the weighted equation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{norm2, Grid, NodeClass, ScalarField};
use crate::weights::WeightField;

#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Relative residual target for the conjugate-gradient solves.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { tolerance: 1e-10, max_iterations: 50_000 }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-4) {
            return Err(Error::InvalidParam {
                key: "solver.tolerance".into(),
                reason: format!("must be in (0, 1e-4], got {}", self.tolerance),
            });
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParam {
                key: "solver.max_iterations".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Divergence-form five/seven-point stencil with face conductances
/// `omega_face / h^2`. Off-diagonal couplings are positive and the diagonal
/// is minus their sum, so the operator is symmetric with zero row sums
/// (an M-matrix after negation).
#[derive(Debug, Clone)]
pub struct StencilOperator {
    pub grid: Arc<Grid>,
    /// Conductance per axis edge: `face_value / h^2`.
    conductance: Vec<Vec<f64>>,
    /// Sum of incident conductances per node (interior nodes only; 0 else).
    diag: Vec<f64>,
}

/// Assemble the stencil from a weight field on the same grid.
pub fn assemble(grid: &Arc<Grid>, wf: &WeightField) -> Result<StencilOperator> {
    wf.assert_matches(grid);
    let h2 = grid.h * grid.h;
    let mut conductance = Vec::with_capacity(grid.n);
    for axis in 0..grid.n {
        let lat = &grid.edges[axis];
        let mut c = vec![0.0; lat.len];
        for e in 0..lat.len {
            let v = wf.face_value(axis, e);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::DegenerateAverage { what: "face conductance", value: v });
            }
            c[e] = v / h2;
        }
        conductance.push(c);
    }
    let mut diag = vec![0.0; grid.nodes.len];
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Interior {
            continue;
        }
        let multi = grid.nodes.multi(idx);
        let mut s = 0.0;
        for axis in 0..grid.n {
            // upper edge (idx -> idx + e_a)
            s += conductance[axis][grid.edges[axis].index(multi)];
            // lower edge ((idx - e_a) -> idx)
            let mut ml = multi;
            ml[axis] -= 1; // interior nodes are never on the box frame
            s += conductance[axis][grid.edges[axis].index(ml)];
        }
        diag[idx] = s;
    }
    Ok(StencilOperator { grid: grid.clone(), conductance, diag })
}

impl StencilOperator {
    #[inline]
    pub fn conductance(&self, axis: usize, edge: usize) -> f64 {
        self.conductance[axis][edge]
    }

    /// Sum of incident conductances (the negated diagonal entry).
    #[inline]
    pub fn diag(&self, node: usize) -> f64 {
        self.diag[node]
    }

    /// Apply `L` to raw node values: `(L u)_p = sum_e c_e (u_q - u_p)` on
    /// interior nodes, 0 elsewhere.
    pub fn apply(&self, values: &[f64], out: &mut [f64]) {
        let grid = &self.grid;
        out.iter_mut().for_each(|v| *v = 0.0);
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Interior {
                continue;
            }
            let multi = grid.nodes.multi(idx);
            let mut acc = -self.diag[idx] * values[idx];
            for axis in 0..grid.n {
                let up = self.conductance[axis][grid.edges[axis].index(multi)];
                let mut mu = multi;
                mu[axis] += 1;
                acc += up * values[grid.nodes.index(mu)];
                let mut ml = multi;
                ml[axis] -= 1;
                acc += self.conductance[axis][grid.edges[axis].index(ml)]
                    * values[grid.nodes.index(ml)];
            }
            out[idx] = acc;
        }
    }

    /// Residual field `L u` of a scalar field.
    pub fn residual(&self, field: &ScalarField) -> Vec<f64> {
        let mut out = vec![0.0; field.values.len()];
        self.apply(&field.values, &mut out);
        out
    }

    /// `||L u||_2 / ||diag .* u||_2` over interior nodes: a solver-comparable
    /// relative measure of how far the field is from discrete harmonicity.
    pub fn relative_residual(&self, field: &ScalarField) -> f64 {
        let r = self.residual(field);
        let mut num = 0.0;
        let mut den = 0.0;
        for idx in 0..self.grid.nodes.len {
            if self.grid.class(idx) == NodeClass::Interior {
                num += r[idx] * r[idx];
                let d = self.diag[idx] * field.values[idx];
                den += d * d;
            }
        }
        if den == 0.0 {
            if num == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).sqrt()
        }
    }
}

/// Solve the Dirichlet problem `L u = 0` with trace data on the ghost layer
/// and (optionally) nodes pinned to zero on an interior set.
///
/// `boundary` supplies values at boundary-class nodes; `pinned` marks
/// interior nodes held at 0; `init` warm-starts the iteration. The returned
/// field carries the trace, zeros on the pinned set and exterior, and the
/// solved values on free nodes.
pub fn solve_dirichlet(
    op: &StencilOperator,
    boundary: &ScalarField,
    pinned: Option<&[bool]>,
    params: &SolverParams,
    init: Option<&ScalarField>,
) -> Result<(ScalarField, SolveStats)> {
    params.validate()?;
    let grid = &op.grid;
    if let Some(p) = pinned {
        assert_eq!(p.len(), grid.nodes.len, "pinned mask size mismatch");
    }

    let is_free = |idx: usize| {
        grid.class(idx) == NodeClass::Interior && pinned.map_or(true, |p| !p[idx])
    };

    let mut free = Vec::new();
    let mut slot = vec![usize::MAX; grid.nodes.len];
    for idx in 0..grid.nodes.len {
        if is_free(idx) {
            slot[idx] = free.len();
            free.push(idx);
        }
    }

    let mut result = ScalarField::zeros(grid);
    for idx in 0..grid.nodes.len {
        if grid.class(idx) == NodeClass::Boundary {
            result.values[idx] = boundary.values[idx];
        }
    }
    if free.is_empty() {
        return Ok((result, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }

    // Right-hand side from Dirichlet couplings: b_p = sum c_pq * value_q over
    // non-free neighbors (boundary trace or pinned zero).
    let nf = free.len();
    let mut b = vec![0.0; nf];
    for (k, &p) in free.iter().enumerate() {
        let multi = grid.nodes.multi(p);
        let mut acc = 0.0;
        for axis in 0..grid.n {
            let cu = op.conductance[axis][grid.edges[axis].index(multi)];
            let mut mu = multi;
            mu[axis] += 1;
            let q = grid.nodes.index(mu);
            if !is_free(q) && grid.class(q) == NodeClass::Boundary {
                acc += cu * boundary.values[q];
            }
            let mut ml = multi;
            ml[axis] -= 1;
            let cl = op.conductance[axis][grid.edges[axis].index(ml)];
            let q = grid.nodes.index(ml);
            if !is_free(q) && grid.class(q) == NodeClass::Boundary {
                acc += cl * boundary.values[q];
            }
        }
        b[k] = acc;
    }

    // A x on the free block: diag * x - sum over free neighbors.
    let matvec = |x: &[f64], out: &mut [f64]| {
        for (k, &p) in free.iter().enumerate() {
            let multi = grid.nodes.multi(p);
            let mut acc = op.diag[p] * x[k];
            for axis in 0..grid.n {
                let cu = op.conductance[axis][grid.edges[axis].index(multi)];
                let mut mu = multi;
                mu[axis] += 1;
                let q = grid.nodes.index(mu);
                if slot[q] != usize::MAX {
                    acc -= cu * x[slot[q]];
                }
                let mut ml = multi;
                ml[axis] -= 1;
                let cl = op.conductance[axis][grid.edges[axis].index(ml)];
                let q = grid.nodes.index(ml);
                if slot[q] != usize::MAX {
                    acc -= cl * x[slot[q]];
                }
            }
            out[k] = acc;
        }
    };

    let mut x = vec![0.0; nf];
    if let Some(f) = init {
        for (k, &p) in free.iter().enumerate() {
            x[k] = f.values[p];
        }
    }

    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        // Zero data: the solution on free nodes is 0.
        return Ok((result, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }

    // Jacobi-preconditioned conjugate gradients.
    let minv: Vec<f64> = free.iter().map(|&p| 1.0 / op.diag[p]).collect();
    let mut r = vec![0.0; nf];
    matvec(&x, &mut r);
    for k in 0..nf {
        r[k] = b[k] - r[k];
    }
    let mut z: Vec<f64> = (0..nf).map(|k| minv[k] * r[k]).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; nf];
    let mut iterations = 0;
    let mut rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;

    while rel > params.tolerance && iterations < params.max_iterations {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..nf {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..nf {
            z[k] = minv[k] * r[k];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..nf {
            p[k] = z[k] + beta * p[k];
        }
        iterations += 1;
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    }

    if rel > params.tolerance {
        return Err(Error::SolveDiverged { residual: rel, iterations });
    }

    for (k, &pnode) in free.iter().enumerate() {
        result.values[pnode] = x[k];
    }
    Ok((result, SolveStats { iterations, relative_residual: rel }))
}

/// Overwrite the field inside `B_radius(center)` with the discrete
/// omega-harmonic function matching the field's values on the ring of
/// non-replaced nodes; outside the ball the field is returned unchanged.
/// Requires `radius >= 4h` (below that the Dirichlet ring is ragged) and the
/// closed ball inside the unit ball.
pub fn harmonic_replacement(
    field: &ScalarField,
    center: &[f64; crate::grid::MAX_DIM],
    radius: f64,
    op: &StencilOperator,
    params: &SolverParams,
) -> Result<(ScalarField, SolveStats)> {
    let grid = &op.grid;
    if radius < 4.0 * grid.h {
        return Err(Error::BallTooSmall { radius, min: 4.0 * grid.h });
    }
    if norm2(center, grid.n) + radius >= 1.0 {
        return Err(Error::BallOutsideDomain);
    }

    let is_free = |idx: usize| {
        grid.class(idx) == NodeClass::Interior && {
            let x = grid.node_coords(idx);
            let mut d = 0.0;
            for a in 0..grid.n {
                d += (x[a] - center[a]) * (x[a] - center[a]);
            }
            d.sqrt() < radius
        }
    };

    let mut free = Vec::new();
    let mut slot = vec![usize::MAX; grid.nodes.len];
    for idx in 0..grid.nodes.len {
        if is_free(idx) {
            slot[idx] = free.len();
            free.push(idx);
        }
    }
    if free.is_empty() {
        return Err(Error::BallTooSmall { radius, min: 4.0 * grid.h });
    }
    let nf = free.len();

    let mut b = vec![0.0; nf];
    for (k, &p) in free.iter().enumerate() {
        let multi = grid.nodes.multi(p);
        let mut acc = 0.0;
        for axis in 0..grid.n {
            for (dm, edge_lower) in [(1isize, multi), (-1, { let mut m = multi; m[axis] -= 1; m })] {
                let c = op.conductance[axis][grid.edges[axis].index(edge_lower)];
                let mut mq = multi;
                mq[axis] = (mq[axis] as isize + dm) as usize;
                let q = grid.nodes.index(mq);
                if slot[q] == usize::MAX {
                    acc += c * field.values[q];
                }
            }
        }
        b[k] = acc;
    }

    let matvec = |x: &[f64], out: &mut [f64]| {
        for (k, &p) in free.iter().enumerate() {
            let multi = grid.nodes.multi(p);
            let mut acc = op.diag[p] * x[k];
            for axis in 0..grid.n {
                for (dm, edge_lower) in
                    [(1isize, multi), (-1, { let mut m = multi; m[axis] -= 1; m })]
                {
                    let c = op.conductance[axis][grid.edges[axis].index(edge_lower)];
                    let mut mq = multi;
                    mq[axis] = (mq[axis] as isize + dm) as usize;
                    let q = grid.nodes.index(mq);
                    if slot[q] != usize::MAX {
                        acc -= c * x[slot[q]];
                    }
                }
            }
            out[k] = acc;
        }
    };

    let mut x: Vec<f64> = free.iter().map(|&p| field.values[p]).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = field.clone();
    if bnorm == 0.0 {
        for &p in &free {
            out.values[p] = 0.0;
        }
        return Ok((out, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }

    let minv: Vec<f64> = free.iter().map(|&p| 1.0 / op.diag[p]).collect();
    let mut r = vec![0.0; nf];
    matvec(&x, &mut r);
    for k in 0..nf {
        r[k] = b[k] - r[k];
    }
    let mut z: Vec<f64> = (0..nf).map(|k| minv[k] * r[k]).collect();
    let mut pvec = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; nf];
    let mut iterations = 0;
    let mut rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    while rel > params.tolerance && iterations < params.max_iterations {
        matvec(&pvec, &mut ap);
        let pap: f64 = pvec.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..nf {
            x[k] += alpha * pvec[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..nf {
            z[k] = minv[k] * r[k];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..nf {
            pvec[k] = z[k] + beta * pvec[k];
        }
        iterations += 1;
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    }
    if rel > params.tolerance {
        return Err(Error::SolveDiverged { residual: rel, iterations });
    }
    for (k, &p) in free.iter().enumerate() {
        out.values[p] = x[k];
    }
    Ok((out, SolveStats { iterations, relative_residual: rel }))
}

#[derive(Debug, Clone)]
pub struct PoincareEstimate {
    /// Smallest eigenvalue of the weighted Rayleigh quotient on the domain.
    pub lambda1: f64,
    /// Poincare constant `1 / lambda1` (domain radius 1).
    pub c_p: f64,
    pub power_iterations: usize,
    pub eigenfield: ScalarField,
}

/// Smallest eigenvalue of `int |grad u|^2 omega / int u^2 omega` over fields
/// vanishing outside `B_domain_radius`, by inverse power iteration with CG
/// inner solves. The Poincare constant estimate is its reciprocal.
pub fn estimate_poincare(
    op: &StencilOperator,
    wf: &WeightField,
    domain_radius: f64,
    params: &SolverParams,
) -> Result<PoincareEstimate> {
    params.validate()?;
    let grid = &op.grid;
    wf.assert_matches(grid);

    let mut free = Vec::new();
    let mut slot = vec![usize::MAX; grid.nodes.len];
    for idx in 0..grid.nodes.len {
        if grid.class(idx) == NodeClass::Interior
            && norm2(&grid.node_coords(idx), grid.n) < domain_radius
        {
            slot[idx] = free.len();
            free.push(idx);
        }
    }
    if free.is_empty() {
        return Err(Error::InvalidGrid("no interior nodes inside the requested radius".into()));
    }
    let nf = free.len();

    // Node mass: average of adjacent cell averages times h^n.
    let mut node_weight = vec![0.0; grid.nodes.len];
    let mut node_count = vec![0u32; grid.nodes.len];
    for cell in 0..grid.cells.len {
        let cv = wf.cell_value(cell);
        for corner in grid.cell_corners(cell) {
            node_weight[corner] += cv;
            node_count[corner] += 1;
        }
    }
    let vol = grid.cell_volume();
    let mass: Vec<f64> = free
        .iter()
        .map(|&p| node_weight[p] / node_count[p] as f64 * vol)
        .collect();

    // Stiffness matvec. The conductances already carry 1/h^2, so h^n turns
    // the conductance form into the energy quadrature sum.
    let scale = grid.h.powi(grid.n as i32);
    let matvec = |x: &[f64], out: &mut [f64]| {
        for (k, &p) in free.iter().enumerate() {
            let multi = grid.nodes.multi(p);
            let mut acc = op.diag[p] * x[k];
            for axis in 0..grid.n {
                for (dm, edge_lower) in
                    [(1isize, multi), (-1, { let mut m = multi; m[axis] -= 1; m })]
                {
                    let c = op.conductance[axis][grid.edges[axis].index(edge_lower)];
                    let mut mq = multi;
                    mq[axis] = (mq[axis] as isize + dm) as usize;
                    let q = grid.nodes.index(mq);
                    if slot[q] != usize::MAX {
                        acc -= c * x[slot[q]];
                    }
                }
            }
            out[k] = scale * acc;
        }
    };

    // Positive start close to the ground state.
    let mut x: Vec<f64> = free
        .iter()
        .map(|&p| {
            let r = norm2(&grid.node_coords(p), grid.n) / domain_radius;
            1.0 - r * r
        })
        .collect();
    let bnormalize = |v: &mut [f64]| {
        let s: f64 = v.iter().zip(&mass).map(|(a, m)| a * a * m).sum();
        let s = s.sqrt();
        v.iter_mut().for_each(|a| *a /= s);
        s
    };
    bnormalize(&mut x);

    let mut lambda = f64::INFINITY;
    let mut y = x.clone();
    let mut iterations = 0;
    for it in 0..300 {
        iterations = it + 1;
        // rhs = B x
        let rhs: Vec<f64> = x.iter().zip(&mass).map(|(a, m)| a * m).collect();
        // CG solve A y = rhs, warm started at the previous eigenvector scaled.
        cg_generic(&matvec, &rhs, &mut y, params)?;
        bnormalize(&mut y);
        // Rayleigh quotient of y.
        let mut ay = vec![0.0; nf];
        matvec(&y, &mut ay);
        let num: f64 = y.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let den: f64 = y.iter().zip(&mass).map(|(a, m)| a * a * m).sum();
        let next = num / den;
        let done = (lambda - next).abs() <= 1e-11 * next.abs();
        lambda = next;
        x.copy_from_slice(&y);
        if done {
            let mut eigen = ScalarField::zeros(grid);
            for (k, &p) in free.iter().enumerate() {
                eigen.values[p] = x[k];
            }
            return Ok(PoincareEstimate {
                lambda1: lambda,
                c_p: 1.0 / lambda,
                power_iterations: iterations,
                eigenfield: eigen,
            });
        }
    }
    Err(Error::EigenDiverged(iterations))
}

/// Plain preconditioner-free CG for the generic SPD matvec used by the
/// eigenvalue iteration.
fn cg_generic(
    matvec: &impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    params: &SolverParams,
) -> Result<()> {
    let nf = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let mut r = vec![0.0; nf];
    matvec(x, &mut r);
    for k in 0..nf {
        r[k] = b[k] - r[k];
    }
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut ap = vec![0.0; nf];
    let mut iterations = 0;
    while rr.sqrt() / bnorm > params.tolerance && iterations < params.max_iterations {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rr / pap;
        for k in 0..nf {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_next: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_next / rr;
        rr = rr_next;
        for k in 0..nf {
            p[k] = r[k] + beta * p[k];
        }
        iterations += 1;
    }
    if rr.sqrt() / bnorm > params.tolerance {
        return Err(Error::SolveDiverged { residual: rr.sqrt() / bnorm, iterations });
    }
    Ok(())
}

/// Empirical Harnack constant: `sup / inf` over `B_{1/2}` of a nonnegative
/// discretely omega-harmonic field. The field must already satisfy the
/// equation to within ten times the solver tolerance.
pub fn harnack_ratio(field: &ScalarField, op: &StencilOperator, params: &SolverParams) -> Result<f64> {
    let rel = op.relative_residual(field);
    if rel > 10.0 * params.tolerance {
        return Err(Error::NotHarmonic(rel));
    }
    let grid = &op.grid;
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for idx in 0..grid.nodes.len {
        if grid.class(idx) != NodeClass::Interior {
            continue;
        }
        if norm2(&grid.node_coords(idx), grid.n) <= 0.5 {
            sup = sup.max(field.values[idx]);
            inf = inf.min(field.values[idx]);
        }
    }
    if inf <= 0.0 {
        return Err(Error::NotPositive(inf));
    }
    Ok(sup / inf)
}

/// Constants of the decay iteration assembled from the sampled weight
/// constants and the empirical Harnack/Holder fits.
#[derive(Debug, Clone)]
pub struct RegularityConstants {
    pub c_p: f64,
    pub c_h: f64,
    pub alpha: f64,
    pub cbar: f64,
    pub lambda: f64,
    pub eta0: f64,
    pub c_star: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, sample_boundary, BoundaryData, BoundarySpec, ScalarField};
    use crate::weights::{build_weight_field, WeightFamily, WeightSpec};
    use approx::assert_relative_eq;

    fn setup(res: usize, family: WeightFamily) -> (Arc<Grid>, WeightField, StencilOperator) {
        let grid = build_grid(2, res).unwrap();
        let wf = build_weight_field(&WeightSpec::family(family), &grid, 3).unwrap();
        let op = assemble(&grid, &wf).unwrap();
        (grid, wf, op)
    }

    #[test]
    fn unit_weight_gives_five_point_laplacian() {
        let (grid, _wf, op) = setup(17, WeightFamily::Constant { value: 1.0 });
        let h2 = grid.h * grid.h;
        for axis in 0..2 {
            for e in 0..grid.edges[axis].len {
                assert_relative_eq!(op.conductance(axis, e), 1.0 / h2, max_relative = 1e-14);
            }
        }
        for idx in 0..grid.nodes.len {
            if grid.class(idx) == NodeClass::Interior {
                assert_relative_eq!(op.diag(idx), 4.0 / h2, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn constant_fields_are_in_the_kernel() {
        let (grid, _wf, op) = setup(33, WeightFamily::Power { beta: -1.0 });
        let f = ScalarField::from_fn(&grid, |_| 2.5);
        let r = op.residual(&f);
        for idx in 0..grid.nodes.len {
            assert!(r[idx].abs() < 1e-9 * op.diag(idx).max(1.0), "residual {} at {idx}", r[idx]);
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let (grid, _wf, op) = setup(17, WeightFamily::Power { beta: 1.0 });
        // <L u, v> = <u, L v> for fields supported on interior nodes.
        let u = ScalarField::from_fn(&grid, |x| (3.1 * x[0]).sin() + x[1]);
        let v = ScalarField::from_fn(&grid, |x| x[0] * x[1] + 0.3);
        let mut u0 = u.clone();
        let mut v0 = v.clone();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Interior {
                u0.values[idx] = 0.0;
                v0.values[idx] = 0.0;
            }
        }
        let lu = op.residual(&u0);
        let lv = op.residual(&v0);
        let a: f64 = (0..grid.nodes.len).map(|i| lu[i] * v0.values[i]).sum();
        let b: f64 = (0..grid.nodes.len).map(|i| lv[i] * u0.values[i]).sum();
        // The two forms agree up to summation-order round-off at the scale of
        // the individual terms.
        let scale: f64 = (0..grid.nodes.len).map(|i| (lu[i] * v0.values[i]).abs()).sum();
        assert!((a - b).abs() <= 1e-12 * scale.max(1.0), "a = {a}, b = {b}, scale = {scale}");
    }

    #[test]
    fn constant_boundary_data_solves_to_constant() {
        let (grid, _wf, op) = setup(33, WeightFamily::Constant { value: 1.0 });
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let params = SolverParams::default();
        let (u, stats) = solve_dirichlet(&op, &g, None, &params, None).unwrap();
        assert!(stats.relative_residual <= params.tolerance);
        for idx in 0..grid.nodes.len {
            if grid.class(idx) == NodeClass::Interior {
                assert!((u.values[idx] - 1.0).abs() < 1e-8, "u = {}", u.values[idx]);
            }
        }
    }

    #[test]
    fn annulus_log_oracle_unweighted() {
        // Pinned on B_{1/2} with g = 1: u(r) = log(2r)/log 2.
        let (grid, _wf, op) = setup(129, WeightFamily::Constant { value: 1.0 });
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let pinned: Vec<bool> = (0..grid.nodes.len)
            .map(|i| norm2(&grid.node_coords(i), 2) <= 0.5)
            .collect();
        let params = SolverParams::default();
        let (u, _) = solve_dirichlet(&op, &g, Some(&pinned), &params, None).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Interior {
                continue;
            }
            let r = norm2(&grid.node_coords(idx), 2);
            if r > 0.5 + 2.0 * grid.h && r < 1.0 {
                let exact = (2.0 * r).ln() / std::f64::consts::LN_2;
                worst = worst.max((u.values[idx] - exact).abs());
            }
        }
        assert!(worst <= 5.0 * grid.h, "Linf error {worst} > 5h = {}", 5.0 * grid.h);
    }

    #[test]
    fn annulus_linear_oracle_weighted() {
        // omega = |x|^-1, pinned on B_{1/2}, g = 1: u(r) = 2r - 1.
        let (grid, _wf, op) = setup(129, WeightFamily::Power { beta: -1.0 });
        let bd = BoundaryData::new(BoundarySpec::Constant(1.0)).unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let pinned: Vec<bool> = (0..grid.nodes.len)
            .map(|i| norm2(&grid.node_coords(i), 2) <= 0.5)
            .collect();
        let params = SolverParams::default();
        let (u, _) = solve_dirichlet(&op, &g, Some(&pinned), &params, None).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..grid.nodes.len {
            if grid.class(idx) != NodeClass::Interior {
                continue;
            }
            let r = norm2(&grid.node_coords(idx), 2);
            if r > 0.5 + 2.0 * grid.h && r < 1.0 {
                worst = worst.max((u.values[idx] - (2.0 * r - 1.0)).abs());
            }
        }
        assert!(worst <= 5.0 * grid.h, "Linf error {worst} > 5h = {}", 5.0 * grid.h);
    }

    #[test]
    fn maximum_principle_and_comparison() {
        let (grid, _wf, op) = setup(65, WeightFamily::Power { beta: 1.0 });
        let params = SolverParams::default();
        let bd1 = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g1 = sample_boundary(&bd1, &grid).unwrap();
        let (u1, _) = solve_dirichlet(&op, &g1, None, &params, None).unwrap();
        let (lo, hi) = (1.0, 3.0); // range of g
        for idx in 0..grid.nodes.len {
            if grid.class(idx) == NodeClass::Interior {
                assert!(u1.values[idx] >= lo - 1e-8 && u1.values[idx] <= hi + 1e-8);
            }
        }
        // Comparison: g2 = g1 + 1 pointwise implies u2 >= u1.
        let bd2 = BoundaryData::new(BoundarySpec::Cosine { offset: 3.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g2 = sample_boundary(&bd2, &grid).unwrap();
        let (u2, _) = solve_dirichlet(&op, &g2, None, &params, None).unwrap();
        for idx in 0..grid.nodes.len {
            if grid.class(idx) == NodeClass::Interior {
                assert!(u2.values[idx] >= u1.values[idx] - 1e-8);
            }
        }
    }

    #[test]
    fn harmonic_replacement_properties() {
        let (grid, wf, op) = setup(65, WeightFamily::Constant { value: 1.0 });
        let params = SolverParams::default();
        let bd = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let (harmonic, _) = solve_dirichlet(&op, &g, None, &params, None).unwrap();

        let center = [0.1, -0.2, 0.0];
        let radius = 0.4;

        // Already-harmonic input is a fixed point.
        let (replaced, _) = harmonic_replacement(&harmonic, &center, radius, &op, &params).unwrap();
        let mut dev = 0.0f64;
        for idx in 0..grid.nodes.len {
            dev = dev.max((replaced.values[idx] - harmonic.values[idx]).abs());
        }
        assert!(dev < 1e-6, "replacement moved a harmonic field by {dev}");

        // A spiked field loses local energy, and the replacement leaves the
        // outside untouched and is idempotent.
        let mut spiked = harmonic.clone();
        let center_node = grid.nodes.index([32 + 3, 32 - 6, 0]);
        spiked.values[center_node] += 1.0;
        let ball_energy = |f: &ScalarField| {
            crate::grid::energy_over_edges(f, &wf, |p, q| {
                let inball = |i: usize| {
                    let x = grid.node_coords(i);
                    let dx = x[0] - center[0];
                    let dy = x[1] - center[1];
                    (dx * dx + dy * dy).sqrt() < radius
                };
                inball(p) || inball(q)
            })
        };
        let before = ball_energy(&spiked);
        let (rep, _) = harmonic_replacement(&spiked, &center, radius, &op, &params).unwrap();
        let after = ball_energy(&rep);
        assert!(after < before, "energy did not drop: {before} -> {after}");
        for idx in 0..grid.nodes.len {
            let x = grid.node_coords(idx);
            let d = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
            if d >= radius {
                assert_eq!(rep.values[idx], spiked.values[idx]);
            }
        }
        let (rep2, _) = harmonic_replacement(&rep, &center, radius, &op, &params).unwrap();
        let mut dev2 = 0.0f64;
        for idx in 0..grid.nodes.len {
            dev2 = dev2.max((rep2.values[idx] - rep.values[idx]).abs());
        }
        assert!(dev2 < 1e-7, "not idempotent: {dev2}");

        // Guard rails.
        assert!(matches!(
            harmonic_replacement(&harmonic, &center, 2.0 * grid.h, &op, &params),
            Err(Error::BallTooSmall { .. })
        ));
        assert!(matches!(
            harmonic_replacement(&harmonic, &[0.8, 0.0, 0.0], 0.4, &op, &params),
            Err(Error::BallOutsideDomain)
        ));
    }

    #[test]
    fn poincare_eigenvalue_coarse() {
        let (_grid, wf, op) = setup(65, WeightFamily::Constant { value: 1.0 });
        let params = SolverParams::default();
        let est = estimate_poincare(&op, &wf, 1.0, &params).unwrap();
        // j_{0,1}^2 = 5.7832; the embedded boundary costs O(h).
        assert!(
            (est.lambda1 - 5.7832).abs() / 5.7832 < 0.08,
            "lambda1 = {}",
            est.lambda1
        );
        assert_relative_eq!(est.c_p, 1.0 / est.lambda1, max_relative = 1e-14);

        // Ground state is sign-definite.
        let signs: Vec<f64> = est
            .eigenfield
            .values
            .iter()
            .cloned()
            .filter(|v| v.abs() > 1e-12)
            .collect();
        assert!(signs.iter().all(|v| *v > 0.0) || signs.iter().all(|v| *v < 0.0));

        // Domain monotonicity: shrinking to B_{1/2} raises the eigenvalue.
        let est_half = estimate_poincare(&op, &wf, 0.5, &params).unwrap();
        assert!(est_half.lambda1 > est.lambda1);
    }

    #[test]
    fn harnack_ratio_checks() {
        let (grid, _wf, op) = setup(65, WeightFamily::Constant { value: 1.0 });
        let params = SolverParams::default();
        let one = ScalarField::from_fn(&grid, |_| 1.0);
        assert_relative_eq!(harnack_ratio(&one, &op, &params).unwrap(), 1.0);

        let bd = BoundaryData::new(BoundarySpec::Cosine { offset: 2.0, amplitude: 1.0, mode: 1 })
            .unwrap();
        let g = sample_boundary(&bd, &grid).unwrap();
        let (u, _) = solve_dirichlet(&op, &g, None, &params, None).unwrap();
        let ratio = harnack_ratio(&u, &op, &params).unwrap();
        // Exact solution is 2 + r cos(theta): ratio 2.5/1.5 on the closed
        // half-ball.
        assert!((ratio - 5.0 / 3.0).abs() < 0.05, "ratio = {ratio}");

        // A non-harmonic field is rejected.
        let bump = ScalarField::from_fn(&grid, |x| 1.0 - x[0] * x[0]);
        assert!(matches!(harnack_ratio(&bump, &op, &params), Err(Error::NotHarmonic(_))));

        // A sign-changing harmonic field violates the positivity precondition.
        let bd2 = BoundaryData::new(BoundarySpec::Cosine { offset: 0.1, amplitude: 1.0, mode: 1 });
        assert!(bd2.is_err()); // not even valid boundary data for the solver
    }
}
