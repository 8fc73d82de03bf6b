//! Muckenhoupt A_2 weight families, their discrete averages on the grid, and
//! sampled estimates of the structural constants (A_2 characteristic,
//! doubling, comparison exponents, lower bound, isoperimetric ratio).
//!
//! Weights are never point-evaluated on their singular sets; cells and faces
//! carry quadrature averages, refined 4x per axis where the cell touches the
//! singular locus.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeClass, ScalarField, MAX_DIM};
use crate::levelset;
use crate::quad::gauss_legendre_unit;

/// Primitive of the "thin set" Z for distance-power weights.
#[derive(Debug, Clone, PartialEq)]
pub enum ZPrimitive {
    Point([f64; MAX_DIM]),
    Segment([f64; MAX_DIM], [f64; MAX_DIM]),
}

impl ZPrimitive {
    fn distance(&self, x: &[f64; MAX_DIM], n: usize) -> f64 {
        match self {
            ZPrimitive::Point(p) => dist(x, p, n),
            ZPrimitive::Segment(a, b) => {
                let mut ab2 = 0.0;
                let mut ax_ab = 0.0;
                for k in 0..n {
                    let d = b[k] - a[k];
                    ab2 += d * d;
                    ax_ab += (x[k] - a[k]) * d;
                }
                let t = if ab2 > 0.0 { (ax_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
                let mut s = 0.0;
                for k in 0..n {
                    let c = a[k] + t * (b[k] - a[k]);
                    s += (x[k] - c) * (x[k] - c);
                }
                s.sqrt()
            }
        }
    }

    fn sample_points(&self) -> Vec<[f64; MAX_DIM]> {
        match self {
            ZPrimitive::Point(p) => vec![*p],
            ZPrimitive::Segment(a, b) => {
                let mid = [
                    0.5 * (a[0] + b[0]),
                    0.5 * (a[1] + b[1]),
                    0.5 * (a[2] + b[2]),
                ];
                vec![*a, mid, *b]
            }
        }
    }
}

fn dist(x: &[f64; MAX_DIM], y: &[f64; MAX_DIM], n: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..n {
        s += (x[k] - y[k]) * (x[k] - y[k]);
    }
    s.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    /// `omega = c`, `c > 0`.
    Constant { value: f64 },
    /// `omega = |x|^beta`, `|beta| < n`.
    Power { beta: f64 },
    /// `omega = dist(x, Z)^alpha`, `alpha >= 0`.
    DistancePower { alpha: f64, zset: Vec<ZPrimitive> },
    /// Extension weight `omega = |x_n|^(1-2s)`, `s` in (0, 1); the last
    /// coordinate plays the role of the extension variable.
    Extension { s: f64 },
}

/// Optional affine pullback: `spec.eval(y) = family(center + radius * y)`.
/// Rescaled weights keep the A_2 characteristic of the base weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: [f64; MAX_DIM],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    pub family: WeightFamily,
    pub frame: Option<Frame>,
}

impl WeightSpec {
    pub fn family(family: WeightFamily) -> Self {
        WeightSpec { family, frame: None }
    }

    pub fn rescaled(family: WeightFamily, center: [f64; MAX_DIM], radius: f64) -> Self {
        WeightSpec { family, frame: Some(Frame { center, radius }) }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match &self.family {
            WeightFamily::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(Error::InvalidWeight(format!(
                        "constant weight must be positive and finite, got {value}"
                    )));
                }
            }
            WeightFamily::Power { beta } => {
                if !(beta.abs() < n as f64) {
                    return Err(Error::InvalidWeight(format!(
                        "power weight needs |beta| < n = {n}, got beta = {beta}"
                    )));
                }
            }
            WeightFamily::DistancePower { alpha, zset } => {
                if !(*alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidWeight(format!(
                        "distance weight needs alpha >= 0, got {alpha}"
                    )));
                }
                if zset.is_empty() {
                    return Err(Error::InvalidWeight("distance weight needs a nonempty Z".into()));
                }
            }
            WeightFamily::Extension { s } => {
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(Error::InvalidWeight(format!(
                        "extension weight needs s in (0, 1), got {s}"
                    )));
                }
            }
        }
        if let Some(frame) = &self.frame {
            if !(frame.radius > 0.0 && frame.radius.is_finite()) {
                return Err(Error::InvalidWeight(format!(
                    "rescaling radius must be positive, got {}",
                    frame.radius
                )));
            }
        }
        Ok(())
    }

    #[inline]
    fn to_base(&self, y: &[f64; MAX_DIM], n: usize) -> [f64; MAX_DIM] {
        match &self.frame {
            None => *y,
            Some(f) => {
                let mut x = [0.0; MAX_DIM];
                for k in 0..n {
                    x[k] = f.center[k] + f.radius * y[k];
                }
                x
            }
        }
    }

    /// Distance from `y` (in the spec's own coordinates) to the singular set,
    /// or infinity when the weight is regular everywhere.
    pub fn singular_distance(&self, y: &[f64; MAX_DIM], n: usize) -> f64 {
        let x = self.to_base(y, n);
        let base = match &self.family {
            WeightFamily::Constant { .. } => f64::INFINITY,
            WeightFamily::Power { beta } => {
                if *beta == 0.0 {
                    f64::INFINITY
                } else {
                    crate::grid::norm2(&x, n)
                }
            }
            WeightFamily::DistancePower { alpha, zset } => {
                if *alpha == 0.0 {
                    f64::INFINITY
                } else {
                    zset.iter().map(|z| z.distance(&x, n)).fold(f64::INFINITY, f64::min)
                }
            }
            WeightFamily::Extension { s } => {
                if (1.0 - 2.0 * s).abs() == 0.0 {
                    f64::INFINITY
                } else {
                    x[n - 1].abs()
                }
            }
        };
        match &self.frame {
            None => base,
            Some(f) => base / f.radius,
        }
    }

    /// Representative points of the singular set (spec coordinates), used to
    /// seed the ball sampler where the A_2 supremum tends to be attained.
    pub fn singular_centers(&self, n: usize) -> Vec<[f64; MAX_DIM]> {
        let base: Vec<[f64; MAX_DIM]> = match &self.family {
            WeightFamily::Constant { .. } => vec![],
            WeightFamily::Power { beta } => {
                if *beta == 0.0 {
                    vec![]
                } else {
                    vec![[0.0; MAX_DIM]]
                }
            }
            WeightFamily::DistancePower { alpha, zset } => {
                if *alpha == 0.0 {
                    vec![]
                } else {
                    zset.iter().flat_map(|z| z.sample_points()).collect()
                }
            }
            WeightFamily::Extension { s } => {
                if (1.0 - 2.0 * s).abs() == 0.0 {
                    vec![]
                } else {
                    vec![[0.0; MAX_DIM]]
                }
            }
        };
        match &self.frame {
            None => base,
            Some(f) => base
                .into_iter()
                .map(|p| {
                    let mut y = [0.0; MAX_DIM];
                    for k in 0..n {
                        y[k] = (p[k] - f.center[k]) / f.radius;
                    }
                    y
                })
                .collect(),
        }
    }
}

/// Point evaluation of the weight. Singular points are rejected; use the
/// cell/face averages of [`WeightField`] near the singular set.
pub fn eval_weight(spec: &WeightSpec, point: &[f64; MAX_DIM], n: usize) -> Result<f64> {
    let x = spec.to_base(point, n);
    let v = match &spec.family {
        WeightFamily::Constant { value } => *value,
        WeightFamily::Power { beta } => {
            if *beta == 0.0 {
                1.0
            } else {
                let r = crate::grid::norm2(&x, n);
                if r == 0.0 {
                    return Err(Error::SingularPoint(*point));
                }
                r.powf(*beta)
            }
        }
        WeightFamily::DistancePower { alpha, zset } => {
            if *alpha == 0.0 {
                1.0
            } else {
                let d = zset.iter().map(|z| z.distance(&x, n)).fold(f64::INFINITY, f64::min);
                if d == 0.0 {
                    return Err(Error::SingularPoint(*point));
                }
                d.powf(*alpha)
            }
        }
        WeightFamily::Extension { s } => {
            let e = 1.0 - 2.0 * s;
            if e == 0.0 {
                1.0
            } else {
                let t = x[n - 1].abs();
                if t == 0.0 {
                    return Err(Error::SingularPoint(*point));
                }
                t.powf(e)
            }
        }
    };
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::SingularPoint(*point));
    }
    Ok(v)
}

/// Sampled weight on a grid: cell averages, per-axis face averages (used by
/// the elliptic stencil) and the total mass of the unit ball.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub n: usize,
    pub resolution: usize,
    pub h: f64,
    cell_values: Vec<f64>,
    face_values: Vec<Vec<f64>>,
    pub total_mass: f64,
}

impl WeightField {
    #[inline]
    pub fn cell_value(&self, cell: usize) -> f64 {
        self.cell_values[cell]
    }

    #[inline]
    pub fn face_value(&self, axis: usize, edge: usize) -> f64 {
        self.face_values[axis][edge]
    }

    pub fn assert_matches(&self, grid: &Grid) {
        assert_eq!(self.n, grid.n, "weight field dimension mismatch");
        assert_eq!(self.resolution, grid.resolution, "weight field resolution mismatch");
    }

    pub fn min_cell_value(&self) -> f64 {
        self.cell_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

const SPLIT_DEPTH_LIMIT: usize = 8;

/// Average of the weight over an axis box by tensor Gauss quadrature.
/// If a quadrature point lands exactly on the singular set the box is split
/// in half per axis and the recursion retries.
fn avg_over_box(
    spec: &WeightSpec,
    lo: &[f64; MAX_DIM],
    hi: &[f64; MAX_DIM],
    n: usize,
    nodes: &[f64],
    weights: &[f64],
    depth: usize,
) -> Result<f64> {
    let q = nodes.len();
    let mut counts = [0usize; MAX_DIM];
    let total: usize = q.pow(n as u32);
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for _ in 0..total {
        let mut point = [0.0; MAX_DIM];
        let mut w = 1.0;
        for a in 0..n {
            let t = nodes[counts[a]];
            point[a] = lo[a] + (hi[a] - lo[a]) * t;
            w *= weights[counts[a]];
        }
        match eval_weight(spec, &point, n) {
            Ok(v) => {
                sum += w * v;
                wsum += w;
            }
            Err(Error::SingularPoint(_)) => {
                if depth >= SPLIT_DEPTH_LIMIT {
                    return Err(Error::SingularPoint(point));
                }
                return split_box_average(spec, lo, hi, n, nodes, weights, depth, 2);
            }
            Err(e) => return Err(e),
        }
        // advance the tensor index
        for a in 0..n {
            counts[a] += 1;
            if counts[a] < q {
                break;
            }
            counts[a] = 0;
        }
    }
    // Normalizing by the rule's own mass reproduces constants exactly.
    Ok(sum / wsum)
}

/// Average over the box as the mean of `parts^n` equal-volume sub-box
/// averages.
fn split_box_average(
    spec: &WeightSpec,
    lo: &[f64; MAX_DIM],
    hi: &[f64; MAX_DIM],
    n: usize,
    nodes: &[f64],
    weights: &[f64],
    depth: usize,
    parts: usize,
) -> Result<f64> {
    let mut counts = [0usize; MAX_DIM];
    let total = parts.pow(n as u32);
    let mut sum = 0.0;
    for _ in 0..total {
        let mut slo = [0.0; MAX_DIM];
        let mut shi = [0.0; MAX_DIM];
        for a in 0..n {
            let step = (hi[a] - lo[a]) / parts as f64;
            slo[a] = lo[a] + counts[a] as f64 * step;
            shi[a] = slo[a] + step;
        }
        sum += avg_over_box(spec, &slo, &shi, n, nodes, weights, depth + 1)?;
        for a in 0..n {
            counts[a] += 1;
            if counts[a] < parts {
                break;
            }
            counts[a] = 0;
        }
    }
    Ok(sum / total as f64)
}

/// Build the sampled weight field. Cell values are quadrature averages of the
/// weight over cells (refined 4x per axis on cells near the singular set);
/// face values are arithmetic means of the adjacent cell averages.
pub fn build_weight_field(
    spec: &WeightSpec,
    grid: &Arc<Grid>,
    quadrature_order: usize,
) -> Result<WeightField> {
    spec.validate(grid.n)?;
    if quadrature_order < 1 {
        return Err(Error::InvalidParam {
            key: "quadrature.order".into(),
            reason: "must be at least 1".into(),
        });
    }
    let n = grid.n;
    let (nodes, weights) = gauss_legendre_unit(quadrature_order);
    let half_diag = 0.5 * grid.h * (n as f64).sqrt();

    let mut cell_values = vec![0.0; grid.cells.len];
    for cell in 0..grid.cells.len {
        let center = grid.cell_center(cell);
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for a in 0..n {
            lo[a] = center[a] - 0.5 * grid.h;
            hi[a] = center[a] + 0.5 * grid.h;
        }
        let near_singular = spec.singular_distance(&center, n) <= 2.0 * half_diag;
        let avg = if near_singular {
            split_box_average(spec, &lo, &hi, n, &nodes, &weights, 0, 4)?
        } else {
            avg_over_box(spec, &lo, &hi, n, &nodes, &weights, 0)?
        };
        if !(avg.is_finite() && avg > 0.0) {
            return Err(Error::DegenerateAverage { what: "cell average", value: avg });
        }
        cell_values[cell] = avg;
    }

    let mut face_values = Vec::with_capacity(n);
    for axis in 0..n {
        let lat = &grid.edges[axis];
        let mut vals = vec![0.0; lat.len];
        for e in 0..lat.len {
            let multi = lat.multi(e);
            // Cells adjacent to this edge: fixed index along `axis`, either
            // side along the remaining axes (clamped at the box frame).
            let mut sum = 0.0;
            let mut cnt = 0usize;
            let transverse: Vec<usize> = (0..n).filter(|a| *a != axis).collect();
            let options = 1usize << transverse.len();
            for bits in 0..options {
                let mut cm = multi;
                let mut valid = true;
                for (bi, &a) in transverse.iter().enumerate() {
                    if (bits >> bi) & 1 == 1 {
                        if cm[a] == 0 {
                            valid = false;
                            break;
                        }
                        cm[a] -= 1;
                    } else if cm[a] >= grid.resolution - 1 {
                        valid = false;
                        break;
                    }
                }
                if valid {
                    sum += cell_values[grid.cells.index(cm)];
                    cnt += 1;
                }
            }
            let v = sum / cnt as f64;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::DegenerateAverage { what: "face average", value: v });
            }
            vals[e] = v;
        }
        face_values.push(vals);
    }

    let vol = grid.cell_volume();
    let total_mass: f64 = (0..grid.cells.len)
        .map(|c| cell_values[c] * vol * grid.cell_b1_fraction(c))
        .sum();

    Ok(WeightField {
        n,
        resolution: grid.resolution,
        h: grid.h,
        cell_values,
        face_values,
        total_mass,
    })
}

/// Weighted measure of an explicit cell set: `sum cell_value * h^n`.
/// Additive over disjoint sets and monotone under inclusion by construction.
pub fn weighted_measure(grid: &Grid, wf: &WeightField, cells: &[usize]) -> f64 {
    wf.assert_matches(grid);
    let vol = grid.cell_volume();
    cells.iter().map(|&c| wf.cell_value(c) * vol).sum()
}

/// A finite family of balls over which the A_2 quantities are sampled.
/// Averages over each ball use a polar/spherical product rule, so the family
/// plus the rule sizes fully determine the estimate (no randomness).
#[derive(Debug, Clone)]
pub struct BallSampler {
    pub dimension: usize,
    pub balls: Vec<([f64; MAX_DIM], f64)>,
    pub radial_points: usize,
    pub angular_points: usize,
}

impl BallSampler {
    /// Dyadic centers and radii `2^-j`, `j = 0..=depth`, plus balls centered
    /// at the declared singularities of the weight (where the supremum is
    /// attained for power-type weights).
    pub fn dyadic(spec: &WeightSpec, n: usize, depth: usize) -> Self {
        let mut balls = Vec::new();
        for j in 0..=depth {
            let r = 0.5f64.powi(j as i32);
            let k = 1usize << j;
            let mut idx = [0isize; MAX_DIM];
            for a in 0..n {
                idx[a] = -(k as isize);
            }
            loop {
                let mut c = [0.0; MAX_DIM];
                for a in 0..n {
                    c[a] = idx[a] as f64 * r;
                }
                balls.push((c, r));
                let mut a = 0;
                loop {
                    if a == n {
                        break;
                    }
                    idx[a] += 1;
                    if idx[a] <= k as isize {
                        break;
                    }
                    idx[a] = -(k as isize);
                    a += 1;
                }
                if a == n {
                    break;
                }
            }
        }
        for p in spec.singular_centers(n) {
            if crate::grid::norm2(&p, n) > 2.0 {
                continue;
            }
            for j in 0..=depth {
                balls.push((p, 0.5f64.powi(j as i32)));
            }
        }
        BallSampler { dimension: n, balls, radial_points: 24, angular_points: 32 }
    }

    /// Pull the ball family back through the affine map `x = center + radius*y`,
    /// for checking the rescaling invariance of the A_2 characteristic.
    pub fn pulled_back(&self, center: [f64; MAX_DIM], radius: f64) -> Self {
        let balls = self
            .balls
            .iter()
            .map(|(c, r)| {
                let mut y = [0.0; MAX_DIM];
                for a in 0..self.dimension {
                    y[a] = (c[a] - center[a]) / radius;
                }
                (y, r / radius)
            })
            .collect();
        BallSampler { dimension: self.dimension, balls, ..*self }
    }
}

/// Quadrature average of `omega^sign` over a ball, normalized by the rule's
/// own measure so constants are reproduced exactly.
fn ball_average(
    spec: &WeightSpec,
    n: usize,
    center: &[f64; MAX_DIM],
    radius: f64,
    nr: usize,
    na: usize,
    invert: bool,
) -> Result<f64> {
    let (tn, tw) = gauss_legendre_unit(nr);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut first: Option<f64> = None;
    let mut all_same = true;
    let mut add_point = |dir: &[f64; MAX_DIM], w_dir: f64| -> Result<()> {
        for i in 0..nr {
            let mut t = tn[i];
            let jac = tw[i] * t.powi(n as i32 - 1) * w_dir;
            let mut point = [0.0; MAX_DIM];
            for a in 0..n {
                point[a] = center[a] + radius * t * dir[a];
            }
            let mut v = eval_weight(spec, &point, n);
            if matches!(v, Err(Error::SingularPoint(_))) {
                // Measure-zero collision with the singular set; nudge inward.
                t *= 1.0 - 1e-12;
                for a in 0..n {
                    point[a] = center[a] + radius * t * dir[a];
                }
                v = eval_weight(spec, &point, n);
            }
            let v = v?;
            match first {
                None => first = Some(v),
                Some(f) => all_same &= f == v,
            }
            num += jac * if invert { 1.0 / v } else { v };
            den += jac;
        }
        Ok(())
    };
    if n == 2 {
        for k in 0..na {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / na as f64;
            let dir = [theta.cos(), theta.sin(), 0.0];
            add_point(&dir, 1.0)?;
        }
    } else {
        let (un, uw) = gauss_legendre_unit(8);
        for j in 0..un.len() {
            let u = 2.0 * un[j] - 1.0; // cos(phi) on [-1, 1]
            let s = (1.0 - u * u).max(0.0).sqrt();
            for k in 0..na {
                let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / na as f64;
                let dir = [s * theta.cos(), s * theta.sin(), u];
                add_point(&dir, uw[j])?;
            }
        }
    }
    // A quadrature rule applied to a constant is the constant; taking this
    // path exactly keeps the A_2 product of the unit weight at 1.
    let avg = match first {
        Some(v) if all_same => {
            if invert {
                1.0 / v
            } else {
                v
            }
        }
        _ => num / den,
    };
    if !(avg.is_finite() && avg > 0.0) {
        return Err(Error::DegenerateAverage { what: "ball average", value: avg });
    }
    Ok(avg)
}

fn ball_volume(n: usize, r: f64) -> f64 {
    match n {
        2 => std::f64::consts::PI * r * r,
        3 => 4.0 / 3.0 * std::f64::consts::PI * r * r * r,
        _ => unreachable!(),
    }
}

/// Estimated constants of the weight. All entries are sampled bounds, not
/// certified values: `a2_estimate` is a lower bound for the true
/// characteristic, the comparison constants are the tightest ones consistent
/// with the sampled (ball, subset) pairs.
#[derive(Debug, Clone)]
pub struct A2Report {
    pub a2_estimate: f64,
    pub doubling_d: f64,
    pub c1_estimate: f64,
    pub c2_estimate: f64,
    pub sd_estimate: f64,
    pub tau_lower_bound: f64,
    pub isoperimetric_c0: f64,
    pub samples: usize,
}

impl A2Report {
    pub const CSV_HEADER: &'static str =
        "a2_estimate,doubling_d,c1_estimate,c2_estimate,sd_estimate,tau_lower_bound,isoperimetric_c0,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.a2_estimate,
            self.doubling_d,
            self.c1_estimate,
            self.c2_estimate,
            self.sd_estimate,
            self.tau_lower_bound,
            self.isoperimetric_c0,
            self.samples
        )
    }
}

/// Sampled A_2 characteristic and comparison constants.
///
/// `a2_estimate = max over sampled balls of (avg omega)(avg omega^-1)`, a
/// lower bound for the supremum over all balls. The doubling constant and the
/// measure-comparison constants are sampled over (ball, subset) pairs with
/// concentric and shifted sub-balls.
pub fn estimate_a2(spec: &WeightSpec, sampler: &BallSampler) -> Result<A2Report> {
    spec.validate(sampler.dimension)?;
    let n = sampler.dimension;
    let nr = sampler.radial_points;
    let na = sampler.angular_points;

    let mut a2 = 0.0f64;
    let mut doubling = 0.0f64;
    // (omega-mass ratio, volume ratio) for subsets E of sampled balls B.
    let mut pairs: Vec<(f64, f64)> = Vec::new();

    for (c, r) in &sampler.balls {
        let avg_w = ball_average(spec, n, c, *r, nr, na, false)?;
        let avg_inv = ball_average(spec, n, c, *r, nr, na, true)?;
        a2 = a2.max(avg_w * avg_inv);

        let avg_2r = ball_average(spec, n, c, 2.0 * r, nr, na, false)?;
        doubling = doubling.max(avg_2r * ball_volume(n, 2.0 * r) / (avg_w * ball_volume(n, *r)));

        for theta in [0.5, 0.25] {
            let avg_e = ball_average(spec, n, c, theta * r, nr, na, false)?;
            let vol_ratio = theta.powi(n as i32);
            pairs.push((avg_e * vol_ratio / avg_w, vol_ratio));
        }
        for axis in 0..n {
            for sign in [-1.0, 1.0] {
                let mut ec = *c;
                ec[axis] += sign * 0.5 * r;
                let avg_e = ball_average(spec, n, &ec, 0.5 * r, nr, na, false)?;
                let vol_ratio = 0.5f64.powi(n as i32);
                pairs.push((avg_e * vol_ratio / avg_w, vol_ratio));
            }
        }
    }

    let mut c1 = f64::INFINITY;
    let mut sd = 1.0f64;
    for (wr, vr) in &pairs {
        c1 = c1.min(wr / (vr * vr));
        if *wr < 1.0 {
            sd = sd.min(wr.ln() / vr.ln());
        }
    }
    let sd = sd.clamp(1e-6, 1.0);
    let mut c2 = 1.0f64;
    for (wr, vr) in &pairs {
        c2 = c2.max(wr / vr.powf(sd));
    }
    c2 = c2.max(1.0 + 1e-12);

    Ok(A2Report {
        a2_estimate: a2,
        doubling_d: doubling,
        c1_estimate: c1,
        c2_estimate: c2,
        sd_estimate: sd,
        tau_lower_bound: 0.0,
        isoperimetric_c0: 0.0,
        samples: sampler.balls.len(),
    })
}

/// Fill the admissibility fields of a report: the essential lower bound of
/// the weight on the unit ball (minimum cell average over cells fully inside)
/// and the worst observed isoperimetric ratio
/// `omega({u > s})^((n-1)/n) / weighted perimeter of {u = s}` over the given
/// sample fields and a spread of levels.
pub fn check_admissibility(
    grid: &Grid,
    wf: &WeightField,
    sample_fields: &[ScalarField],
    mut report: A2Report,
) -> Result<A2Report> {
    wf.assert_matches(grid);
    if sample_fields.is_empty() {
        return Err(Error::InvalidParam {
            key: "sample_fields".into(),
            reason: "isoperimetric check needs at least one test field".into(),
        });
    }
    let full = 1u8 << grid.n;
    let mut tau = f64::INFINITY;
    for cell in 0..grid.cells.len {
        if grid.interior_corner_count(cell) == full {
            tau = tau.min(wf.cell_value(cell));
        }
    }
    report.tau_lower_bound = tau;

    if grid.n != 2 {
        return Err(Error::InvalidParam {
            key: "dimension".into(),
            reason: "the level-set perimeter (marching squares) is only implemented in 2d".into(),
        });
    }

    let mut worst = 0.0f64;
    let mut any = false;
    for field in sample_fields {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in 0..grid.nodes.len {
            if grid.class(idx) == NodeClass::Interior {
                lo = lo.min(field.values[idx]);
                hi = hi.max(field.values[idx]);
            }
        }
        if !(hi > lo) {
            continue;
        }
        for k in 1..=9 {
            let s = lo + (hi - lo) * k as f64 / 10.0;
            let (length, segments) = levelset::weighted_level_length(field, wf, s);
            if segments == 0 || length <= 0.0 {
                continue;
            }
            let mass = crate::grid::positivity_measure(field, wf, s);
            if mass <= 0.0 {
                continue;
            }
            let exponent = (grid.n as f64 - 1.0) / grid.n as f64;
            worst = worst.max(mass.powf(exponent) / length);
            any = true;
        }
    }
    if !any {
        return Err(Error::AllLevelsEmpty);
    }
    report.isoperimetric_c0 = worst;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn eval_weight_examples() {
        let c = WeightSpec::family(WeightFamily::Constant { value: 1.0 });
        assert_eq!(eval_weight(&c, &[0.3, -0.2, 0.0], 2).unwrap(), 1.0);

        let p = WeightSpec::family(WeightFamily::Power { beta: -1.0 });
        assert_relative_eq!(eval_weight(&p, &[0.5, 0.0, 0.0], 2).unwrap(), 2.0);
        assert!(matches!(
            eval_weight(&p, &[0.0, 0.0, 0.0], 2),
            Err(Error::SingularPoint(_))
        ));

        let e = WeightSpec::family(WeightFamily::Extension { s: 0.5 });
        assert_eq!(eval_weight(&e, &[0.7, 0.0, 0.0], 2).unwrap(), 1.0);

        let e2 = WeightSpec::family(WeightFamily::Extension { s: 0.75 });
        // |y|^(1-2s) = |y|^(-1/2)
        assert_relative_eq!(eval_weight(&e2, &[0.3, 0.25, 0.0], 2).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(WeightSpec::family(WeightFamily::Constant { value: 0.0 }).validate(2).is_err());
        assert!(WeightSpec::family(WeightFamily::Power { beta: 2.0 }).validate(2).is_err());
        assert!(WeightSpec::family(WeightFamily::Power { beta: -2.5 }).validate(3).is_ok());
        assert!(WeightSpec::family(WeightFamily::Extension { s: 1.0 }).validate(2).is_err());
        assert!(WeightSpec::family(WeightFamily::DistancePower { alpha: -0.1, zset: vec![] })
            .validate(2)
            .is_err());
    }

    #[test]
    fn constant_field_is_exactly_one() {
        let grid = build_grid(2, 17).unwrap();
        let spec = WeightSpec::family(WeightFamily::Constant { value: 1.0 });
        let wf = build_weight_field(&spec, &grid, 3).unwrap();
        for c in 0..grid.cells.len {
            assert_eq!(wf.cell_value(c), 1.0);
        }
        for axis in 0..2 {
            for e in 0..grid.edges[axis].len {
                assert_eq!(wf.face_value(axis, e), 1.0);
            }
        }
        // Coarse grid: the lattice-point count undershoots the area by ~4%.
        assert!((wf.total_mass - PI).abs() / PI < 0.05, "mass = {}", wf.total_mass);

        // The deficit shrinks under refinement.
        let fine = build_grid(2, 129).unwrap();
        let wf_fine = build_weight_field(&spec, &fine, 3).unwrap();
        assert!(
            (wf_fine.total_mass - PI).abs() / PI < 0.01,
            "mass = {}",
            wf_fine.total_mass
        );
    }

    #[test]
    fn power_weight_masses_match_radial_oracles() {
        let grid = build_grid(2, 129).unwrap();
        // 2 pi int_0^1 r^-1 r dr = 2 pi
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Power { beta: -1.0 }),
            &grid,
            3,
        )
        .unwrap();
        assert!(
            (wf.total_mass - 2.0 * PI).abs() / (2.0 * PI) < 0.02,
            "mass = {}",
            wf.total_mass
        );
        // 2 pi int_0^1 r * r dr = 2 pi / 3
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Power { beta: 1.0 }),
            &grid,
            3,
        )
        .unwrap();
        let expect = 2.0 * PI / 3.0;
        assert!((wf.total_mass - expect).abs() / expect < 0.02, "mass = {}", wf.total_mass);
    }

    #[test]
    fn weighted_measure_annulus_oracle() {
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Power { beta: -1.0 }),
            &grid,
            3,
        )
        .unwrap();
        assert_eq!(weighted_measure(&grid, &wf, &[]), 0.0);
        let annulus: Vec<usize> = (0..grid.cells.len)
            .filter(|&c| {
                let r = crate::grid::norm2(&grid.cell_center(c), 2);
                r > 0.5 && r < 1.0 && grid.interior_corner_count(c) > 0
            })
            .collect();
        // 2 pi (1 - 1/2) = pi
        let m = weighted_measure(&grid, &wf, &annulus);
        assert!((m - PI).abs() / PI < 0.03, "m = {m}");
        // Additivity over a disjoint split.
        let (left, right): (Vec<usize>, Vec<usize>) =
            annulus.iter().partition(|&&c| grid.cell_center(c)[0] < 0.0);
        assert_relative_eq!(
            weighted_measure(&grid, &wf, &left) + weighted_measure(&grid, &wf, &right),
            m,
            max_relative = 1e-12
        );
    }

    #[test]
    fn a2_of_constant_weight_is_exactly_one() {
        let spec = WeightSpec::family(WeightFamily::Constant { value: 1.0 });
        let sampler = BallSampler::dyadic(&spec, 2, 2);
        let rep = estimate_a2(&spec, &sampler).unwrap();
        assert_eq!(rep.a2_estimate, 1.0);
        assert_eq!(rep.doubling_d, 4.0);
        assert_relative_eq!(rep.sd_estimate, 1.0, max_relative = 1e-12);
        assert!(rep.c1_estimate > 0.0);
        assert!(rep.c2_estimate > 1.0);
        assert_eq!(rep.samples, sampler.balls.len());

        // Other constants cancel to round-off.
        let spec = WeightSpec::family(WeightFamily::Constant { value: 3.5 });
        let rep = estimate_a2(&spec, &BallSampler::dyadic(&spec, 2, 1)).unwrap();
        assert_relative_eq!(rep.a2_estimate, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn a2_product_is_at_least_one_on_every_ball() {
        let spec = WeightSpec::family(WeightFamily::Power { beta: -1.0 });
        let sampler = BallSampler::dyadic(&spec, 2, 2);
        for (c, r) in &sampler.balls {
            let a = ball_average(&spec, 2, c, *r, 24, 32, false).unwrap();
            let b = ball_average(&spec, 2, c, *r, 24, 32, true).unwrap();
            assert!(a * b >= 1.0 - 1e-12, "ball ({c:?}, {r}) product {}", a * b);
        }
    }

    #[test]
    fn a2_estimate_grows_with_the_sampler() {
        let spec = WeightSpec::family(WeightFamily::Power { beta: -1.0 });
        let small = BallSampler::dyadic(&spec, 2, 1);
        let large = BallSampler::dyadic(&spec, 2, 3);
        let a_small = estimate_a2(&spec, &small).unwrap().a2_estimate;
        let a_large = estimate_a2(&spec, &large).unwrap().a2_estimate;
        assert!(a_large >= a_small - 1e-14);
        // The origin-centered ball alone gives (2/r)(2r/3) = 4/3.
        assert!(a_large >= 4.0 / 3.0 - 1e-6);
    }

    #[test]
    fn rescaled_weight_keeps_its_a2_estimate() {
        let base = WeightSpec::family(WeightFamily::Power { beta: -1.0 });
        let sampler = BallSampler::dyadic(&base, 2, 2);
        let center = [0.3, -0.1, 0.0];
        let radius = 0.5;
        let rescaled = WeightSpec::rescaled(WeightFamily::Power { beta: -1.0 }, center, radius);
        let mapped = sampler.pulled_back(center, radius);
        let a_base = estimate_a2(&base, &sampler).unwrap().a2_estimate;
        let a_resc = estimate_a2(&rescaled, &mapped).unwrap().a2_estimate;
        assert_relative_eq!(a_base, a_resc, max_relative = 1e-9);
    }

    #[test]
    fn non_integrable_inverse_does_not_converge() {
        // dist(x, segment)^1.5 in 2d: omega^-1 is not locally integrable
        // across the segment, so the sampled averages keep growing as the
        // quadrature refines instead of settling (a diverging estimate is the
        // signal of a non-A_2 configuration).
        let spec = WeightSpec::family(WeightFamily::DistancePower {
            alpha: 1.5,
            zset: vec![ZPrimitive::Segment([-0.5, 0.0, 0.0], [0.5, 0.0, 0.0])],
        });
        let mut coarse = BallSampler::dyadic(&spec, 2, 1);
        coarse.angular_points = 16;
        let mut fine = coarse.clone();
        fine.angular_points = 256;
        let a_coarse = estimate_a2(&spec, &coarse).unwrap().a2_estimate;
        let a_fine = estimate_a2(&spec, &fine).unwrap().a2_estimate;
        assert!(
            a_fine > 1.5 * a_coarse,
            "estimate should diverge under refinement: {a_coarse} -> {a_fine}"
        );

        // An integrable exponent settles under the same refinement.
        let ok = WeightSpec::family(WeightFamily::DistancePower {
            alpha: 0.5,
            zset: vec![ZPrimitive::Segment([-0.5, 0.0, 0.0], [0.5, 0.0, 0.0])],
        });
        let mut coarse_ok = BallSampler::dyadic(&ok, 2, 1);
        coarse_ok.angular_points = 16;
        let mut fine_ok = coarse_ok.clone();
        fine_ok.angular_points = 256;
        let b_coarse = estimate_a2(&ok, &coarse_ok).unwrap().a2_estimate;
        let b_fine = estimate_a2(&ok, &fine_ok).unwrap().a2_estimate;
        assert!(
            (b_fine - b_coarse).abs() / b_coarse < 0.25,
            "integrable case should settle: {b_coarse} -> {b_fine}"
        );
    }

    #[test]
    fn tau_lower_bound_oracles() {
        let grid = build_grid(2, 65).unwrap();
        let inv = build_weight_field(
            &WeightSpec::family(WeightFamily::Power { beta: -1.0 }),
            &grid,
            3,
        )
        .unwrap();
        let fields = vec![ScalarField::from_fn(&grid, |x| 1.0 - crate::grid::norm2(&x, 2))];
        let rep = A2Report {
            a2_estimate: 1.0,
            doubling_d: 4.0,
            c1_estimate: 1.0,
            c2_estimate: 1.0 + 1e-12,
            sd_estimate: 1.0,
            tau_lower_bound: 0.0,
            isoperimetric_c0: 0.0,
            samples: 0,
        };
        let rep = check_admissibility(&grid, &inv, &fields, rep).unwrap();
        // |x|^-1 >= 1 on the unit ball.
        assert!(rep.tau_lower_bound >= 1.0, "tau = {}", rep.tau_lower_bound);

        // |x|^1 vanishes at the origin: tau decreases under refinement.
        let mut taus = Vec::new();
        for res in [33, 129] {
            let grid = build_grid(2, res).unwrap();
            let wf = build_weight_field(
                &WeightSpec::family(WeightFamily::Power { beta: 1.0 }),
                &grid,
                3,
            )
            .unwrap();
            let fields = vec![ScalarField::from_fn(&grid, |x| 1.0 - crate::grid::norm2(&x, 2))];
            let base = A2Report {
                a2_estimate: 1.0,
                doubling_d: 4.0,
                c1_estimate: 1.0,
                c2_estimate: 1.0 + 1e-12,
                sd_estimate: 1.0,
                tau_lower_bound: 0.0,
                isoperimetric_c0: 0.0,
                samples: 0,
            };
            taus.push(check_admissibility(&grid, &wf, &fields, base).unwrap().tau_lower_bound);
        }
        assert!(taus[1] < taus[0], "taus = {taus:?}");
    }

    #[test]
    fn isoperimetric_ratio_matches_disk_oracle() {
        // For omega = 1 and u = 1 - |x| the level sets are circles, where
        // area^(1/2) / perimeter = 1/(2 sqrt(pi)) exactly.
        let grid = build_grid(2, 129).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Constant { value: 1.0 }),
            &grid,
            2,
        )
        .unwrap();
        let fields = vec![ScalarField::from_fn(&grid, |x| 1.0 - crate::grid::norm2(&x, 2))];
        let base = A2Report {
            a2_estimate: 1.0,
            doubling_d: 4.0,
            c1_estimate: 1.0,
            c2_estimate: 1.0 + 1e-12,
            sd_estimate: 1.0,
            tau_lower_bound: 0.0,
            isoperimetric_c0: 0.0,
            samples: 0,
        };
        let rep = check_admissibility(&grid, &wf, &fields, base).unwrap();
        let disk = 1.0 / (2.0 * PI.sqrt());
        assert!(
            (rep.isoperimetric_c0 - disk).abs() / disk < 0.05,
            "c0 = {}, disk = {disk}",
            rep.isoperimetric_c0
        );
    }

    #[test]
    fn singular_cells_average_without_point_evaluation() {
        // The cell containing the origin must still get a positive finite
        // average for the singular weight |x|^-1.
        let grid = build_grid(2, 33).unwrap();
        let wf = build_weight_field(
            &WeightSpec::family(WeightFamily::Power { beta: -1.0 }),
            &grid,
            3,
        )
        .unwrap();
        for c in 0..grid.cells.len {
            assert!(wf.cell_value(c) > 0.0 && wf.cell_value(c).is_finite());
        }
        // Cells adjacent to the origin see averages ~ integral of 1/|x|,
        // much larger than 1.
        let touching: Vec<usize> = (0..grid.cells.len)
            .filter(|&c| {
                let ctr = grid.cell_center(c);
                crate::grid::norm2(&ctr, 2) < grid.h
            })
            .collect();
        for c in touching {
            assert!(wf.cell_value(c) > 5.0, "origin cell average {}", wf.cell_value(c));
        }
    }
}
