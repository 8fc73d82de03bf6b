//! Gauss–Legendre quadrature rules used for cell, face and ball averages.

/// Nodes and weights of the `q`-point Gauss–Legendre rule on `[0, 1]`.
///
/// Weights sum to 1, so `sum(w_i * f(x_i))` approximates the *average* of `f`
/// over the unit interval (exact for polynomials of degree `2q - 1`).
pub fn gauss_legendre_unit(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "quadrature order must be at least 1");
    let (x, w) = gauss_legendre(q);
    let nodes = x.iter().map(|&t| 0.5 * (t + 1.0)).collect();
    let weights = w.iter().map(|&v| 0.5 * v).collect();
    (nodes, weights)
}

/// Standard Gauss–Legendre rule on `[-1, 1]` (weights sum to 2).
///
/// Nodes are computed by Newton iteration on the Legendre polynomial, using
/// the Chebyshev points as initial guesses. Accurate to machine precision for
/// the small orders used here.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        // Initial guess: Chebyshev approximation of the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        nodes[q - 1 - i] = x;
        weights[q - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Evaluate the Legendre polynomial `P_q` and its derivative at `x` by the
/// three-term recurrence.
fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
