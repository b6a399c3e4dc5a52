//! Control-affine systems `ẋ = f(x) + g(x)u` and the two benchmark plants.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, ContractError};

pub type State = DVector<f64>;
pub type Input = DVector<f64>;

pub type DriftFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
pub type ActuationFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// Cutoff of the bump function: `Λ(s) = 0` for `s ≥ 2.02`.
pub const BUMP_CUTOFF: f64 = 2.02;

/// Width of the band below the cutoff where `Λ` is returned as exactly zero.
pub const BUMP_GUARD: f64 = 1e-12;

/// A control-affine system given by callbacks for the drift `f` and the
/// actuation matrix `g` (`state_dim × input_dim`).
///
/// The drift is expected to vanish at the origin. Evaluation is pure, so a
/// model can be shared freely across threads.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    drift: DriftFn,
    actuation: ActuationFn,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        drift: impl Fn(&State) -> State + Send + Sync + 'static,
        actuation: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self, ContractError> {
        if state_dim == 0 {
            return Err(ContractError::parameter("state_dim", "must be positive"));
        }
        if input_dim == 0 {
            return Err(ContractError::parameter("input_dim", "must be positive"));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            input_dim,
            drift: Arc::new(drift),
            actuation: Arc::new(actuation),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `f(x)`. The caller is responsible for passing a state of the right size.
    pub fn drift(&self, x: &State) -> State {
        (self.drift)(x)
    }

    /// `g(x)`, a `state_dim × input_dim` matrix.
    pub fn actuation(&self, x: &State) -> DMatrix<f64> {
        (self.actuation)(x)
    }

    pub fn check_state(&self, x: &State) -> Result<(), ContractError> {
        check_dim("state", self.state_dim, x.len())
    }

    pub fn check_input(&self, u: &Input) -> Result<(), ContractError> {
        check_dim("input", self.input_dim, u.len())
    }

    /// `f(x) + g(x)u`.
    pub fn eval_vector_field(&self, x: &State, u: &Input) -> Result<State, ContractError> {
        self.check_state(x)?;
        self.check_input(u)?;
        Ok(self.vector_field_unchecked(x, u))
    }

    pub(crate) fn vector_field_unchecked(&self, x: &State, u: &Input) -> State {
        self.drift(x) + self.actuation(x) * u
    }
}

/// `Λ(s) = exp(-1/(2.02 - s))` below the cutoff, zero at and beyond it.
pub fn bump_lambda(s: f64) -> f64 {
    bump_lambda_with_cutoff(s, BUMP_CUTOFF)
}

pub fn bump_lambda_with_cutoff(s: f64, cutoff: f64) -> f64 {
    if s >= cutoff - BUMP_GUARD {
        0.0
    } else {
        (-1.0 / (cutoff - s)).exp()
    }
}

/// `ẋ₁ = x₂ − x₁Λ(x₁)`, `ẋ₂ = −x₁ + u`.
pub fn bump_system() -> SystemModel {
    bump_system_with_cutoff(BUMP_CUTOFF).expect("default cutoff is valid")
}

pub fn bump_system_with_cutoff(cutoff: f64) -> Result<SystemModel, ContractError> {
    if !cutoff.is_finite() {
        return Err(ContractError::parameter(
            "lambda_cutoff",
            format!("must be finite, got {cutoff}"),
        ));
    }
    SystemModel::new(
        "bump",
        2,
        1,
        move |x: &State| {
            DVector::from_vec(vec![
                x[1] - x[0] * bump_lambda_with_cutoff(x[0], cutoff),
                -x[0],
            ])
        },
        |_x: &State| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    )
}

/// Kinematic unicycle with state `(x₁, x₂, x₃)` and inputs `(v, ω)`.
pub fn unicycle_system() -> SystemModel {
    SystemModel::new(
        "unicycle",
        3,
        2,
        |_x: &State| DVector::zeros(3),
        |x: &State| {
            let (s, c) = x[2].sin_cos();
            DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0])
        },
    )
    .expect("static dimensions are positive")
}

/// Looks up one of the built-in systems by name.
pub fn system_by_name(name: &str) -> Option<SystemModel> {
    match name {
        "bump" => Some(bump_system()),
        "unicycle" => Some(unicycle_system()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn bump_vector_field_examples() {
        let sys = bump_system();
        let y = sys.eval_vector_field(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(y, v(&[0.0, 0.0]));

        let y = sys.eval_vector_field(&v(&[1.02, 0.0]), &v(&[0.0])).unwrap();
        assert_relative_eq!(y[0], -1.02 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(y[0], -0.3753, epsilon = 1e-4);
        assert_relative_eq!(y[1], -1.02, epsilon = 1e-15);
    }

    #[test]
    fn unicycle_vector_field_example() {
        let sys = unicycle_system();
        let y = sys
            .eval_vector_field(&v(&[1.0, 0.0, 0.0]), &v(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(y, v(&[1.0, 0.0, 0.0]));
        let g = sys.actuation(&v(&[0.3, -1.0, 0.7]));
        assert_eq!(g.column(0).as_slice(), &[0.7f64.cos(), 0.7f64.sin(), 0.0]);
        assert_eq!(g.column(1).as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(sys.drift(&v(&[0.3, -1.0, 0.7])), DVector::zeros(3));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = bump_system();
        let err = sys
            .eval_vector_field(&v(&[0.0, 0.0, 0.0]), &v(&[0.0]))
            .unwrap_err();
        assert!(matches!(
            err,
            ContractError::Dimension { what: "state", .. }
        ));
        let err = sys
            .eval_vector_field(&v(&[0.0, 0.0]), &v(&[0.0, 1.0]))
            .unwrap_err();
        assert!(matches!(
            err,
            ContractError::Dimension { what: "input", .. }
        ));
    }

    #[test]
    fn lambda_values() {
        assert_eq!(bump_lambda(2.02), 0.0);
        assert_eq!(bump_lambda(3.0), 0.0);
        assert_relative_eq!(bump_lambda(1.02), 0.367879, epsilon = 1e-6);
        assert_eq!(bump_lambda(2.02 - 1e-13), 0.0);
        // continuity at the cutoff
        assert!(bump_lambda(2.02 - 1e-6) < 1e-300);
    }

    #[test]
    fn lambda_monotone_on_grid() {
        let n = 10_000;
        let mut prev = f64::INFINITY;
        for k in 0..=n {
            let s = 2.02 * k as f64 / n as f64;
            let l = bump_lambda(s);
            assert!(l <= prev, "not decreasing at s = {s}");
            prev = l;
        }
        for k in 0..=n {
            let s = 2.02 + 10.0 * k as f64 / n as f64;
            assert_eq!(bump_lambda(s), 0.0);
        }
    }

    #[test]
    fn origin_is_equilibrium() {
        for sys in [bump_system(), unicycle_system()] {
            let x0 = DVector::zeros(sys.state_dim());
            assert_eq!(sys.drift(&x0), x0);
        }
    }

    // Directional derivatives of x ↦ f(x) + g(x)u against central differences
    // of the same map with a smaller step.
    fn jacobian_check(sys: &SystemModel, sample: impl Fn(&mut ChaCha8Rng) -> State) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..1000 {
            let x = sample(&mut rng);
            let u = DVector::from_fn(sys.input_dim(), |_, _| rng.gen_range(-2.0..2.0));
            let d = DVector::from_fn(sys.state_dim(), |_, _| rng.gen_range(-1.0..1.0));
            let field = |y: &State| sys.eval_vector_field(y, &u).unwrap();
            let coarse = (field(&(&x + &d * h)) - field(&(&x - &d * h))) / (2.0 * h);
            let fine = (field(&(&x + &d * (h / 4.0))) - field(&(&x - &d * (h / 4.0)))) / (h / 2.0);
            for i in 0..sys.state_dim() {
                let scale = fine[i].abs().max(1.0);
                assert!(
                    (coarse[i] - fine[i]).abs() <= 1e-5 * scale,
                    "{}: component {i} at {x:?}: {} vs {}",
                    sys.name(),
                    coarse[i],
                    fine[i]
                );
            }
            assert!(field(&x).iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn vector_fields_are_smooth_away_from_cutoff() {
        jacobian_check(&bump_system(), |rng| loop {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-4.0..4.0));
            if (x[0] - BUMP_CUTOFF).abs() >= 1e-3 {
                break x;
            }
        });
        jacobian_check(&unicycle_system(), |rng| {
            DVector::from_fn(3, |_, _| rng.gen_range(-4.0..4.0))
        });
    }
}
