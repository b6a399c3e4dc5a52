//! Reference implementations that share no code with the library solvers.

#![allow(dead_code)]

/// Dense problem `min ½ Σ wⱼ zⱼ²` subject to `nᵢᵀz ≤ cᵢ`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub weights: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DenseQp {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn cost(&self, z: &[f64]) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(z)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
    }

    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(r, c)| dot(r, z) - c)
            .fold(0.0, f64::max)
    }

    fn primal_of(&self, mu: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                -self.rows.iter().zip(mu).map(|(r, m)| r[j] * m).sum::<f64>() / self.weights[j]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub z: Vec<f64>,
    pub cost: f64,
    pub violation: f64,
    pub iterations: usize,
}

/// Accelerated projected gradient on the dual `max_{μ ≥ 0} −½‖Nᵀμ‖²_{W⁻¹} − cᵀμ`
/// with adaptive restart. Only meaningful for feasible problems.
pub fn dual_projected_gradient(p: &DenseQp, tol: f64, max_iter: usize) -> OracleSolution {
    let k = p.rows.len();
    if k == 0 {
        let z = vec![0.0; p.dim()];
        return OracleSolution {
            cost: 0.0,
            violation: 0.0,
            z,
            iterations: 0,
        };
    }
    // Lipschitz bound: Frobenius norm of N W⁻¹ Nᵀ.
    let mut lip = 0.0;
    for a in &p.rows {
        for b in &p.rows {
            let g: f64 = (0..p.dim()).map(|j| a[j] * b[j] / p.weights[j]).sum();
            lip += g * g;
        }
    }
    let step = 1.0 / lip.sqrt().max(1e-300);
    let mut mu = vec![0.0; k];
    let mut y = mu.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let z = p.primal_of(&y);
        // ∇ of the negated dual: N z(μ) ... sign: d/dμ (−dual) = −(N z − c) = c − N z
        let grad: Vec<f64> = p
            .rows
            .iter()
            .zip(&p.rhs)
            .map(|(r, c)| c - dot(r, &z))
            .collect();
        let next: Vec<f64> = y
            .iter()
            .zip(&grad)
            .map(|(yi, gi)| (yi - step * gi).max(0.0))
            .collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // restart when the momentum points uphill
        let uphill: f64 = grad
            .iter()
            .zip(next.iter().zip(&mu))
            .map(|(g, (n, m))| g * (n - m))
            .sum();
        if uphill > 0.0 {
            t = 1.0;
            y = mu.clone();
            continue;
        }
        let beta = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&mu)
            .map(|(n, m)| n + beta * (n - m))
            .collect();
        mu = next;
        t = t_next;
        if it % 64 == 0 {
            let z = p.primal_of(&mu);
            let viol = p.max_violation(&z);
            let gap: f64 = mu
                .iter()
                .zip(p.rows.iter().zip(&p.rhs))
                .map(|(m, (r, c))| m * (c - dot(r, &z)))
                .sum::<f64>()
                .abs();
            if viol <= tol && gap <= tol {
                break;
            }
        }
    }
    let z = p.primal_of(&mu);
    OracleSolution {
        cost: p.cost(&z),
        violation: p.max_violation(&z),
        z,
        iterations,
    }
}

/// Exact feasibility for `dim ≤ 2`: a nonempty polyhedron contains the
/// closest point to the origin, which is the origin itself, a projection onto
/// one boundary line, or a vertex. Those candidates are checked together with
/// a uniform grid over `[−extent, extent]^dim`.
pub fn grid_feasible(p: &DenseQp, extent: f64, per_axis: usize, tol: f64) -> bool {
    assert!(p.dim() <= 2, "grid oracle supports at most two variables");
    let ok = |z: &[f64]| p.max_violation(z) <= tol;
    let d = p.dim();
    let mut candidates: Vec<Vec<f64>> = vec![vec![0.0; d]];
    for (r, c) in p.rows.iter().zip(&p.rhs) {
        let nn = dot(r, r);
        if nn > 1e-14 {
            candidates.push(r.iter().map(|a| a * c / nn).collect());
        }
    }
    if d == 2 {
        for i in 0..p.rows.len() {
            for j in i + 1..p.rows.len() {
                let (a, b) = (&p.rows[i], &p.rows[j]);
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() > 1e-12 {
                    let (ci, cj) = (p.rhs[i], p.rhs[j]);
                    candidates.push(vec![
                        (ci * b[1] - a[1] * cj) / det,
                        (a[0] * cj - ci * b[0]) / det,
                    ]);
                }
            }
        }
    }
    if candidates.iter().any(|z| ok(z)) {
        return true;
    }
    let coord = |k: usize| -extent + 2.0 * extent * k as f64 / (per_axis - 1) as f64;
    match d {
        1 => (0..per_axis).any(|i| ok(&[coord(i)])),
        _ => (0..per_axis).any(|i| (0..per_axis).any(|j| ok(&[coord(i), coord(j)]))),
    }
}

/// Hand-derived rows of the bump example (`α(s) = α₀ s`, `W = w V`) for the
/// barrier `min{2 − x₁ − x₂, γ − V}`. Each row is `(a, b, sense)` with
/// `sense = +1` for `a u ≤ b` and `−1` for `a u ≥ b`.
#[derive(Debug, Clone, Copy)]
pub struct BumpRowParams {
    pub w: f64,
    pub alpha0: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub active_tol: f64,
}

pub fn bump_rows(
    x1: f64,
    x2: f64,
    lambda: f64,
    p: &BumpRowParams,
    with_clf: bool,
) -> Vec<(f64, f64, f64)> {
    let v = 0.5 * (x1 * x1 + x2 * x2);
    let mut rows = Vec::new();
    if with_clf {
        rows.push((x2, -p.w * v + x1 * x1 * lambda, 1.0));
    }
    let h_lin = 2.0 - x1 - x2;
    let h_cap = p.gamma - v;
    let h = h_lin.min(h_cap);
    if h_lin <= h + p.active_tol {
        let lf = -x2 + x1 * lambda + x1;
        rows.push((-1.0, -p.alpha0 * h_lin + p.epsilon - lf, -1.0));
    }
    if h_cap <= h + p.active_tol {
        let lf = x1 * x1 * lambda;
        rows.push((-x2, -p.alpha0 * h_cap + p.epsilon - lf, -1.0));
    }
    rows
}

/// Feasible interval of a scalar input under `rows` and `|u| ≤ bound`.
pub fn scalar_interval(rows: &[(f64, f64, f64)], bound: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (-bound, bound);
    for &(a, b, sense) in rows {
        let (a, b) = (sense * a, sense * b);
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < 0.0 {
            return (1.0, -1.0);
        }
    }
    (lo, hi)
}
