//! Grid-level evidence for the barrier and compatibility hypotheses.
//!
//! Every check is pointwise on a regular grid, so an all-pass report is
//! sampling evidence scoped to the grid resolution, not a proof.

use std::fmt;
use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::certificates::{add_box, cbf_rows, compatibility_problem, Sbncbf, Wclf};
use crate::dynamics::{Input, State, SystemModel};
use crate::error::ContractError;
use crate::qp::{solve_qp, QpProblem};
use crate::simulator::num;

pub const MAX_GRID_POINTS: usize = 10_000_000;
pub const DEFAULT_VERIFY_U_BOUND: f64 = 100.0;
pub const LARGE_U_BOUND: f64 = 1e4;
pub const ALPHA0_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    pub boundary_band: f64,
}

impl GridSpec {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
        boundary_band: f64,
    ) -> Result<Self, ContractError> {
        let g = Self {
            lower,
            upper,
            resolution,
            boundary_band,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        let n = self.lower.len();
        crate::error::check_dim("grid upper corner", n, self.upper.len())?;
        crate::error::check_dim("grid resolution", n, self.resolution.len())?;
        if n == 0 {
            return Err(ContractError::parameter("grid", "zero-dimensional grid"));
        }
        for i in 0..n {
            let (lo, hi, r) = (self.lower[i], self.upper[i], self.resolution[i]);
            if r == 0 || !lo.is_finite() || !hi.is_finite() || (r > 1 && lo >= hi) || lo > hi {
                return Err(ContractError::parameter(
                    "grid",
                    format!(
                        "axis {i}: need lower < upper and resolution >= 1, got [{lo}, {hi}] x {r}"
                    ),
                ));
            }
        }
        if !(self.boundary_band >= 0.0) {
            return Err(ContractError::parameter("boundary_band", "must be >= 0"));
        }
        let total = self
            .resolution
            .iter()
            .try_fold(1usize, |acc, r| acc.checked_mul(*r))
            .filter(|t| *t <= MAX_GRID_POINTS);
        if total.is_none() {
            return Err(ContractError::Envelope(format!(
                "grid exceeds {MAX_GRID_POINTS} points"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid point with flat index `idx`; the last axis varies fastest.
    pub fn point(&self, mut idx: usize) -> State {
        let n = self.dim();
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let r = self.resolution[i];
            let k = idx % r;
            idx /= r;
            x[i] = if r == 1 {
                self.lower[i]
            } else {
                self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (r - 1) as f64
            };
        }
        x
    }

    /// Same box with every resolution multiplied by `factor` (odd counts stay odd).
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = self.clone();
        g.resolution = g
            .resolution
            .iter()
            .map(|&r| if r > 1 { (r - 1) * factor + 1 } else { 1 })
            .collect();
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// The strict barrier rows at a near-boundary point admit no input.
    BoundaryRows,
    /// The decrease row and the barrier rows admit no common input.
    Compatibility,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::BoundaryRows => "boundary_rows",
            Condition::Compatibility => "compatibility",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub index: usize,
    pub x: State,
    pub condition: Condition,
    /// Value of `V` at the witness.
    pub v: f64,
    /// The verdict changes when the input box grows to `LARGE_U_BOUND`.
    pub flips_with_large_box: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub checked: usize,
    pub feasible: usize,
    /// Sorted by grid index.
    pub witnesses: Vec<Witness>,
    pub resolution: Vec<usize>,
    pub u_bound: f64,
    pub estimated_c_bar: Option<f64>,
    pub estimated_alpha0: Option<f64>,
}

impl RegionReport {
    pub fn all_pass(&self) -> bool {
        self.feasible == self.checked
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            (self.checked - self.feasible) as f64 / self.checked as f64
        }
    }

    /// CSV `x1..xn,condition` with one row per witness.
    pub fn write_failures_csv<W: Write>(&self, mut w: W, n: usize) -> io::Result<()> {
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("condition".into());
        writeln!(w, "{}", header.join(","))?;
        for wit in &self.witnesses {
            let mut row: Vec<String> = wit.x.iter().map(|v| num(*v)).collect();
            row.push(wit.condition.as_str().into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Line-oriented `key: value` summary.
    pub fn summary(&self, title: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("report: {title}\n"));
        s.push_str(&format!("resolution: {:?}\n", self.resolution));
        s.push_str(&format!("u_bound: {}\n", self.u_bound));
        s.push_str(&format!("checked: {}\n", self.checked));
        s.push_str(&format!("feasible: {}\n", self.feasible));
        s.push_str(&format!("failures: {}\n", self.witnesses.len()));
        let flips = self
            .witnesses
            .iter()
            .filter(|w| w.flips_with_large_box)
            .count();
        s.push_str(&format!("failures_fixed_by_large_box: {flips}\n"));
        s.push_str(&format!("all_pass: {}\n", self.all_pass()));
        if let Some(c) = self.estimated_c_bar {
            s.push_str(&format!("estimated_c_bar: {c}\n"));
        }
        if let Some(a) = self.estimated_alpha0 {
            s.push_str(&format!("estimated_alpha0: {a}\n"));
        }
        s
    }
}

fn strict_rows_feasible(
    b: &Sbncbf,
    sys: &SystemModel,
    x: &State,
    u_bound: f64,
) -> Result<bool, ContractError> {
    let mut p = QpProblem::min_norm(sys.input_dim())?;
    for r in cbf_rows(b, sys, x, true) {
        p.ge(r.a, r.b)?;
    }
    add_box(&mut p, u_bound)?;
    Ok(solve_qp(&p).is_optimal())
}

// Runs `check` on every selected grid point in parallel; `None` means the
// point is not selected.
fn scan<F>(
    grid: &GridSpec,
    condition: Condition,
    v: Option<&Wclf>,
    u_bound: f64,
    check: F,
) -> Result<RegionReport, ContractError>
where
    F: Fn(&State, f64) -> Option<Result<bool, ContractError>> + Sync,
{
    grid.validate()?;
    let results: Vec<(usize, State, bool)> = (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let x = grid.point(i);
            check(&x, u_bound).map(|r| r.map(|ok| (i, x, ok)))
        })
        .collect::<Result<_, _>>()?;
    let checked = results.len();
    let mut witnesses = Vec::new();
    for (index, x, ok) in results {
        if ok {
            continue;
        }
        let flips = check(&x, LARGE_U_BOUND).is_some_and(|r| matches!(r, Ok(true)));
        witnesses.push(Witness {
            index,
            v: v.map_or(f64::NAN, |v| v.value(&x)),
            x,
            condition,
            flips_with_large_box: flips,
        });
    }
    Ok(RegionReport {
        checked,
        feasible: checked - witnesses.len(),
        witnesses,
        resolution: grid.resolution.clone(),
        u_bound,
        estimated_c_bar: None,
        estimated_alpha0: None,
    })
}

/// For every grid point with `|h(x)| ≤ boundary_band`, checks that the
/// strict rows `L_f h_i + L_g h_i u ≥ ε` of all active pieces have a common
/// solution in `‖u‖_∞ ≤ u_bound`.
pub fn verify_boundary_sbncbf(
    b: &Sbncbf,
    sys: &SystemModel,
    grid: &GridSpec,
    u_bound: f64,
) -> Result<RegionReport, ContractError> {
    crate::error::check_dim("grid dimension", sys.state_dim(), grid.dim())?;
    scan(grid, Condition::BoundaryRows, None, u_bound, |x, ub| {
        (b.h(x).abs() <= grid.boundary_band).then(|| strict_rows_feasible(b, sys, x, ub))
    })
}

/// Checks pointwise compatibility on grid points of `C \ {V ≤ c̄}` and
/// estimates `c̄` as the smallest multiple of `level_step` whose sublevel
/// set contains every failure.
pub fn verify_compatibility_region(
    v: &Wclf,
    b: &Sbncbf,
    sys: &SystemModel,
    grid: &GridSpec,
    c_bar: f64,
    level_step: f64,
    u_bound: f64,
) -> Result<RegionReport, ContractError> {
    crate::error::check_dim("grid dimension", sys.state_dim(), grid.dim())?;
    if !(level_step > 0.0) {
        return Err(ContractError::parameter("level_step", "must be positive"));
    }
    let mut report = scan(grid, Condition::Compatibility, Some(v), u_bound, |x, ub| {
        (b.h(x) >= 0.0 && v.value(x) > c_bar).then(|| {
            let p = compatibility_problem(v, b, sys, x, ub)?;
            Ok(solve_qp(&p).is_optimal())
        })
    })?;
    let worst = report
        .witnesses
        .iter()
        .map(|w| w.v)
        .fold(f64::NEG_INFINITY, f64::max);
    report.estimated_c_bar = Some(if worst.is_finite() {
        c_bar.max((worst / level_step).ceil() * level_step)
    } else {
        c_bar
    });
    Ok(report)
}

/// Grid supremum of `|dᵀk(x) − ε| / (0.5 δ)` over the selected points,
/// multiplied by `ALPHA0_SAFETY`. Points where `controller` returns `None`
/// are skipped.
pub fn estimate_alpha0<S, K, D>(
    grid: &GridSpec,
    select: S,
    controller: K,
    direction: D,
    epsilon: f64,
    delta: f64,
) -> Result<f64, ContractError>
where
    S: Fn(&State) -> bool + Sync,
    K: Fn(&State) -> Option<Input> + Sync,
    D: Fn(&State) -> DVector<f64> + Sync,
{
    grid.validate()?;
    if !(delta > 0.0) {
        return Err(ContractError::parameter("delta", "must be positive"));
    }
    let sup = (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let x = grid.point(i);
            if !select(&x) {
                return None;
            }
            controller(&x).map(|u| (direction(&x).dot(&u) - epsilon).abs())
        })
        .reduce(|| 0.0, f64::max);
    Ok(ALPHA0_SAFETY * sup / (0.5 * delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{BarrierPiece, ClassK};
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn grid_points_cover_the_box() {
        let g = GridSpec::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![3, 5], 0.1).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.point(0), v(&[-1.0, 0.0]));
        assert_eq!(g.point(1), v(&[-1.0, 0.5]));
        assert_eq!(g.point(14), v(&[1.0, 2.0]));
        assert_eq!(g.refined(2).resolution, vec![5, 9]);
        assert!(GridSpec::new(vec![1.0], vec![0.0], vec![3], 0.1).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![0], 0.1).is_err());
        assert!(GridSpec::new(vec![0.0; 2], vec![1.0; 2], vec![10_000, 10_000], 0.1).is_err());
        assert!(GridSpec::new(vec![0.5], vec![0.5], vec![1], 0.0).is_ok());
    }

    #[test]
    fn unactuated_barrier_fails_everywhere_on_boundary() {
        let sys = SystemModel::new(
            "inert",
            2,
            1,
            |_x: &State| DVector::zeros(2),
            |_x: &State| DMatrix::zeros(2, 1),
        )
        .unwrap();
        let b = Sbncbf::max_of(
            vec![BarrierPiece::new(
                "disk",
                |x| 1.0 - x.norm_squared(),
                |x| -2.0 * x,
            )],
            ClassK::Linear(1.0),
            1.0,
            1e-6,
        )
        .unwrap();
        let g = GridSpec::new(vec![-1.5, -1.5], vec![1.5, 1.5], vec![61, 61], 0.1).unwrap();
        let r = verify_boundary_sbncbf(&b, &sys, &g, DEFAULT_VERIFY_U_BOUND).unwrap();
        assert!(r.checked > 0);
        assert_eq!(r.feasible, 0);
        assert!(r.witnesses.iter().all(|w| !w.flips_with_large_box));
        assert!(r.witnesses.windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn alpha0_estimate_degenerate_and_homogeneous() {
        let one = GridSpec::new(vec![0.3, 0.1], vec![0.3, 0.1], vec![1, 1], 0.0).unwrap();
        let zero = estimate_alpha0(
            &one,
            |_| true,
            |_| Some(v(&[0.0, 0.0])),
            |x| v(&[x[0], 0.0]),
            0.0,
            0.04,
        )
        .unwrap();
        assert_eq!(zero, 0.0);
        let g = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![11, 11], 0.0).unwrap();
        let k = |x: &State| Some(v(&[x[0] + x[1], 1.0]));
        let d = |x: &State| v(&[x[0], 0.0]);
        let a1 = estimate_alpha0(&g, |_| true, k, d, 1e-3, 0.04).unwrap();
        let a2 = estimate_alpha0(&g, |_| true, k, d, 1e-3, 0.08).unwrap();
        assert!((a1 - 2.0 * a2).abs() <= 1e-12 * a1);
        // sup |x₁(x₁ + x₂) − ε| is attained at (1, 1)
        assert!((a1 - ALPHA0_SAFETY * (2.0 - 1e-3) / 0.02).abs() < 1e-9);
    }

    #[test]
    fn summary_lists_counts() {
        let r = RegionReport {
            checked: 3,
            feasible: 3,
            witnesses: vec![],
            resolution: vec![3],
            u_bound: 100.0,
            estimated_c_bar: Some(0.0),
            estimated_alpha0: None,
        };
        let s = r.summary("t");
        assert!(s.contains("checked: 3\n") && s.contains("all_pass: true\n"));
        let mut buf = Vec::new();
        r.write_failures_csv(&mut buf, 2).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,condition\n");
    }
}
