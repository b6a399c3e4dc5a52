//! Certificates for the two benchmark plants: the bump system and the
//! kinematic unicycle.

use nalgebra::DVector;

use crate::certificates::{compact_truncate, BarrierPiece, ClassK, Sbncbf, Wclf};
use crate::dynamics::{bump_lambda, State};
use crate::error::ContractError;

/// `x₁` threshold of the set excluded from the bump WCLF's feasible region
/// (`x₂ = 0, x₁ ≥ 2.01`). Deliberately distinct from the `Λ` cutoff 2.02.
pub const BUMP_INFEASIBLE_X1: f64 = 2.01;

/// Tolerance used by the membership tests of the excluded sets.
pub const REGION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpParams {
    /// `W = w_scale · V`.
    pub w_scale: f64,
    pub alpha0: f64,
    pub epsilon: f64,
    pub active_tol: f64,
    /// Truncation level; `None` keeps the unbounded half-plane.
    pub gamma: Option<f64>,
}

impl Default for BumpParams {
    fn default() -> Self {
        Self {
            w_scale: 0.5,
            alpha0: 1.0,
            epsilon: 1e-3,
            active_tol: 1e-6,
            gamma: Some(8.0),
        }
    }
}

/// `V_w = ½(x₁² + x₂²)` with `W = w_scale · V_w`.
pub fn bump_wclf(w_scale: f64) -> Wclf {
    bump_wclf_with_region(w_scale, BUMP_INFEASIBLE_X1)
}

/// Same as [`bump_wclf`] with the excluded set `x₂ = 0, x₁ ≥ infeasible_x1`.
pub fn bump_wclf_with_region(w_scale: f64, infeasible_x1: f64) -> Wclf {
    Wclf::new(
        2,
        |x| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        |x| DVector::from_column_slice(&[x[0], x[1]]),
        move |x| w_scale * 0.5 * (x[0] * x[0] + x[1] * x[1]),
        move |x| !(x[1].abs() <= REGION_TOL && x[0] >= infeasible_x1),
    )
}

/// `h_w = −x₁ − x₂ + 2`.
pub fn bump_half_plane() -> BarrierPiece {
    BarrierPiece::new(
        "h_w",
        |x| -x[0] - x[1] + 2.0,
        |_| DVector::from_column_slice(&[-1.0, -1.0]),
    )
}

/// `V̇_w` for input `u`, written out by hand.
pub fn bump_vdot(x: &State, u: f64) -> f64 {
    -x[0] * x[0] * bump_lambda(x[0]) + x[1] * u
}

pub fn bump_barrier(p: &BumpParams) -> Result<Sbncbf, ContractError> {
    let base = Sbncbf::max_of(
        vec![bump_half_plane()],
        ClassK::Linear(p.alpha0),
        p.epsilon,
        p.active_tol,
    )?;
    match p.gamma {
        Some(gamma) => compact_truncate(&base, &bump_wclf(p.w_scale), gamma),
        None => Ok(base),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleParams {
    pub delta: f64,
    /// Heading weight in `V_u`.
    pub b: f64,
    pub w_scale: f64,
    pub alpha0: f64,
    pub epsilon: f64,
    pub active_tol: f64,
    pub gamma: Option<f64>,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            delta: 0.04,
            b: 0.01,
            w_scale: 0.1,
            alpha0: 0.005,
            // must stay below alpha0 · delta, otherwise the heading row is
            // infeasible wherever the lateral offset vanishes
            epsilon: 1e-5,
            active_tol: 1e-6,
            gamma: Some(9.0),
        }
    }
}

impl UnicycleParams {
    /// `c̄ = 4δ`.
    pub fn c_bar(&self) -> f64 {
        4.0 * self.delta
    }
}

/// `ā(x) = x₁ cos x₃ + x₂ sin x₃`, the position component along the heading.
pub fn unicycle_a_bar(x: &State) -> f64 {
    x[0] * x[2].cos() + x[1] * x[2].sin()
}

/// `−x₁ sin x₃ + x₂ cos x₃`, the lateral offset of the position from the
/// heading line.
pub fn unicycle_lateral(x: &State) -> f64 {
    -x[0] * x[2].sin() + x[1] * x[2].cos()
}

/// `V_u = x₁² + x₂² + b x₃²` with `W = w_scale · V_u`.
pub fn unicycle_wclf(b: f64, w_scale: f64) -> Wclf {
    let value = move |x: &State| x[0] * x[0] + x[1] * x[1] + b * x[2] * x[2];
    Wclf::new(
        3,
        value,
        move |x| DVector::from_column_slice(&[2.0 * x[0], 2.0 * x[1], 2.0 * b * x[2]]),
        move |x| w_scale * value(x),
        |x| !(x[2].abs() <= REGION_TOL && unicycle_a_bar(x).abs() <= REGION_TOL),
    )
}

/// `h₁ = δ − (−x₁ sin x₃ + x₂ cos x₃)²`.
pub fn unicycle_heading_piece(delta: f64) -> BarrierPiece {
    BarrierPiece::new(
        "h1_u",
        move |x| {
            let p = unicycle_lateral(x);
            delta - p * p
        },
        |x| {
            let p = unicycle_lateral(x);
            let (s, c) = x[2].sin_cos();
            DVector::from_column_slice(&[2.0 * p * s, -2.0 * p * c, 2.0 * p * unicycle_a_bar(x)])
        },
    )
}

/// `h₂ = x₁² + x₂² − 1.5² δ`.
pub fn unicycle_disk_piece(delta: f64) -> BarrierPiece {
    BarrierPiece::new(
        "h2_u",
        move |x| x[0] * x[0] + x[1] * x[1] - 2.25 * delta,
        |x| DVector::from_column_slice(&[2.0 * x[0], 2.0 * x[1], 0.0]),
    )
}

/// `h_u = min{h₁, h₂}`, optionally truncated by `γ − V_u`.
pub fn unicycle_barrier(p: &UnicycleParams) -> Result<Sbncbf, ContractError> {
    if !(p.delta > 0.0) {
        return Err(ContractError::Parameter {
            name: "delta",
            reason: format!("must be positive, got {}", p.delta),
        });
    }
    let base = Sbncbf::min_of(
        vec![
            unicycle_heading_piece(p.delta),
            unicycle_disk_piece(p.delta),
        ],
        ClassK::Linear(p.alpha0),
        p.epsilon,
        p.active_tol,
    )?;
    match p.gamma {
        Some(gamma) => compact_truncate(&base, &unicycle_wclf(p.b, p.w_scale), gamma),
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{
        cbf_rows, clf_row, pointwise_compatible, DEFAULT_ACTIVE_TOL, DEFAULT_U_BOUND,
    };
    use crate::dynamics::{bump_system, unicycle_system};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn fd_gradient(f: impl Fn(&State) -> f64, x: &State) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    fn assert_gradient(f: impl Fn(&State) -> f64, g: impl Fn(&State) -> DVector<f64>, x: &State) {
        let num = fd_gradient(&f, x);
        let ana = g(x);
        for i in 0..x.len() {
            let scale = ana[i].abs().max(1.0);
            assert!(
                (num[i] - ana[i]).abs() <= 1e-5 * scale,
                "component {i} at {x:?}: {} vs {}",
                num[i],
                ana[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vw = bump_wclf(0.5);
        let vu = unicycle_wclf(0.01, 0.1);
        let pieces = [
            bump_half_plane(),
            unicycle_heading_piece(0.04),
            unicycle_disk_piece(0.04),
        ];
        for _ in 0..500 {
            let x2 = DVector::from_fn(2, |_, _| rng.gen_range(-4.0..4.0));
            let x3 = DVector::from_fn(3, |_, _| rng.gen_range(-4.0..4.0));
            assert_gradient(|x| vw.value(x), |x| vw.gradient(x), &x2);
            assert_gradient(|x| vu.value(x), |x| vu.gradient(x), &x3);
            assert_gradient(|x| pieces[0].value(x), |x| pieces[0].gradient(x), &x2);
            for p in &pieces[1..] {
                assert_gradient(|x| p.value(x), |x| p.gradient(x), &x3);
            }
        }
    }

    #[test]
    fn wclfs_are_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for w in [bump_wclf(0.5), unicycle_wclf(0.01, 0.1)] {
            let n = w.state_dim();
            assert_eq!(w.value(&DVector::zeros(n)), 0.0);
            assert_eq!(w.margin(&DVector::zeros(n)), 0.0);
            for _ in 0..1000 {
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
                assert!(w.value(&x) > 0.0 && w.margin(&x) > 0.0);
            }
        }
    }

    #[test]
    fn bump_clf_row_example() {
        let sys = bump_system();
        let vw = bump_wclf(0.5);
        let x = v(&[0.0, 2.0]);
        let row = clf_row(&vw, &sys, &x);
        // V̇_w = −x₁²Λ(x₁) + x₂u with x₁ = 0: a = x₂ = 2, b = −0.5·V_w = −1
        assert_relative_eq!(row.a[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(row.b, -1.0, epsilon = 1e-15);
        // consistency with the hand-written V̇_w at a random input
        let x = v(&[1.3, -0.4]);
        let row = clf_row(&vw, &sys, &x);
        let u = 0.7;
        assert_relative_eq!(
            row.a[0] * u + (-row.b - vw.margin(&x)),
            bump_vdot(&x, u),
            epsilon = 1e-14
        );
    }

    #[test]
    fn bump_cbf_row_on_boundary() {
        let sys = bump_system();
        let p = BumpParams {
            gamma: None,
            ..Default::default()
        };
        let b = bump_barrier(&p).unwrap();
        let x = v(&[1.0, 1.0]);
        assert_eq!(b.h(&x), 0.0);
        let rows = cbf_rows(&b, &sys, &x, false);
        assert_eq!(rows.len(), 1);
        assert_relative_eq!(rows[0].a[0], -1.0);
        // ḣ_w = −x₂ + x₁Λ(x₁) + x₁ − u
        let lfh = -x[1] + x[0] * bump_lambda(x[0]) + x[0];
        assert_relative_eq!(rows[0].b, p.epsilon - lfh, epsilon = 1e-14);
        let strict = cbf_rows(&b, &sys, &x, true);
        assert_relative_eq!(strict[0].b, p.epsilon - lfh, epsilon = 1e-14);
        let inside = v(&[0.0, 0.0]);
        let r_in = cbf_rows(&b, &sys, &inside, false);
        let r_strict = cbf_rows(&b, &sys, &inside, true);
        assert_relative_eq!(r_strict[0].b - r_in[0].b, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn bump_truncated_values() {
        let b = bump_barrier(&BumpParams::default()).unwrap();
        assert_relative_eq!(b.h(&v(&[0.0, 0.0])), 2.0);
        assert_relative_eq!(b.h(&v(&[-2.0, -2.0])), 4.0);
        assert_relative_eq!(b.h(&v(&[4.0, 4.0])), -8.0);
        assert!(!b.contains(&v(&[4.0, 4.0])));
    }

    #[test]
    fn truncated_membership_matches_both_conditions() {
        let b = bump_barrier(&BumpParams::default()).unwrap();
        let vw = bump_wclf(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let expected = (-x[0] - x[1] + 2.0 >= 0.0) && vw.value(&x) <= 8.0;
            assert_eq!(b.contains(&x), expected, "{x:?}");
            let s = b.evaluate(&x);
            let brute = s.per_piece[0].min(s.per_piece[1]);
            assert_eq!(s.h, brute);
        }
    }

    #[test]
    fn bump_safe_set_inside_feasible_region() {
        let vw = bump_wclf(0.5);
        let b = bump_barrier(&BumpParams {
            gamma: None,
            ..Default::default()
        })
        .unwrap();
        let n = 401;
        for i in 0..n {
            for j in 0..n {
                let x = v(&[
                    -5.0 + 10.0 * i as f64 / (n - 1) as f64,
                    -5.0 + 10.0 * j as f64 / (n - 1) as f64,
                ]);
                if b.contains(&x) {
                    assert!(vw.in_feasible_region(&x), "{x:?}");
                }
            }
        }
    }

    #[test]
    fn unicycle_safe_set_avoids_infeasible_line() {
        let p = UnicycleParams {
            gamma: None,
            ..Default::default()
        };
        let b = unicycle_barrier(&p).unwrap();
        let (n, m) = (121, 61);
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    let x = v(&[
                        -3.0 + 6.0 * i as f64 / (n - 1) as f64,
                        -3.0 + 6.0 * j as f64 / (n - 1) as f64,
                        -std::f64::consts::PI
                            + 2.0 * std::f64::consts::PI * k as f64 / (m - 1) as f64,
                    ]);
                    let on_line = x[2].abs() < 1e-9 && unicycle_a_bar(&x).abs() < 1e-9;
                    assert!(!(b.contains(&x) && on_line), "{x:?}");
                }
            }
        }
    }

    #[test]
    fn unicycle_corner_rows_decouple() {
        let sys = unicycle_system();
        let p = UnicycleParams {
            gamma: None,
            ..Default::default()
        };
        let b = unicycle_barrier(&p).unwrap();
        // lateral offset √δ = 0.2 and radius 1.5√δ = 0.3: x = (√(0.09−0.04), 0.2, 0)
        let x = v(&[(0.09f64 - 0.04).sqrt(), 0.2, 0.0]);
        let s = b.evaluate(&x);
        assert!(s.h.abs() < 1e-12);
        assert_eq!(s.active, vec![0, 1]);
        let rows = cbf_rows(&b, &sys, &x, false);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].a[0], 0.0);
        assert!(rows[0].a[1].abs() > 0.0);
        assert!(rows[1].a[0].abs() > 0.0);
        assert_eq!(rows[1].a[1], 0.0);
        // ∇h₂·g = (2ā, 0)
        assert_relative_eq!(rows[1].a[0], 2.0 * unicycle_a_bar(&x), epsilon = 1e-14);
        // the corner lies inside the level set V ≤ 4δ, where only the barrier rows are imposed
        assert!(unicycle_wclf(p.b, p.w_scale).value(&x) < p.c_bar());
        let mut qp = crate::qp::QpProblem::min_norm(2).unwrap();
        for r in rows {
            qp.ge(r.a, r.b).unwrap();
        }
        assert!(crate::qp::solve_qp(&qp).is_optimal());
    }

    #[test]
    fn unicycle_heading_boundary_is_compatible() {
        let sys = unicycle_system();
        let p = UnicycleParams {
            gamma: None,
            ..Default::default()
        };
        let b = unicycle_barrier(&p).unwrap();
        let vu = unicycle_wclf(p.b, p.w_scale);
        // x₃ = 0 and lateral offset x₂ = √δ, far from the disk
        let x = v(&[1.5, 0.2, 0.0]);
        let s = b.evaluate(&x);
        assert!(s.h.abs() < DEFAULT_ACTIVE_TOL);
        assert_eq!(s.active, vec![0]);
        let clf = clf_row(&vu, &sys, &x);
        assert_eq!(clf.a[1], 0.0);
        let rows = cbf_rows(&b, &sys, &x, false);
        assert_eq!(rows[0].a[0], 0.0);
        assert!(pointwise_compatible(&vu, &b, &sys, &x, DEFAULT_U_BOUND));
    }

    #[test]
    fn bump_interior_point_is_compatible() {
        let sys = bump_system();
        let p = BumpParams::default();
        let b = bump_barrier(&p).unwrap();
        assert!(pointwise_compatible(
            &bump_wclf(p.w_scale),
            &b,
            &sys,
            &v(&[-1.0, 1.0]),
            DEFAULT_U_BOUND
        ));
    }
}
