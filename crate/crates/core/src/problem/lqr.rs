use super::{BoxDomain, ControlProblem};
use crate::error::Result;
use crate::scalar::{cst, Real};

/// Scalar test problem with a known value function.
///
/// `ẋ = u`, `L = (x² + u²)/2`, `ψ = x²/2`. The Riccati equation has the
/// fixed point `p ≡ 1`, so `V(t, x) = x²/2`, `λ = x` and `u* = −x` for every
/// horizon.
#[derive(Debug, Clone)]
pub struct Lqr {
    pub final_time: f64,
    domain: BoxDomain,
}

impl Lqr {
    pub fn new(final_time: f64) -> Self {
        Lqr {
            final_time,
            domain: BoxDomain::symmetric(&[1.0]),
        }
    }

    pub fn value(x: f64) -> f64 {
        0.5 * x * x
    }

    /// Optimal state at time `t` from `x0` at `t0`.
    pub fn trajectory(t0: f64, x0: f64, t: f64) -> f64 {
        x0 * (-(t - t0)).exp()
    }
}

impl Default for Lqr {
    fn default() -> Self {
        Lqr::new(1.0)
    }
}

impl ControlProblem for Lqr {
    fn name(&self) -> &str {
        "lqr"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn final_time(&self) -> f64 {
        self.final_time
    }
    fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn dynamics<T: Real>(&self, _t: T, _x: &[T], u: &[T], dx: &mut [T]) -> Result<()> {
        dx[0] = u[0];
        Ok(())
    }

    fn running_cost<T: Real>(&self, _t: T, x: &[T], u: &[T]) -> T {
        cst::<T>(0.5) * (x[0] * x[0] + u[0] * u[0])
    }

    fn terminal_cost<T: Real>(&self, x: &[T]) -> T {
        cst::<T>(0.5) * x[0] * x[0]
    }

    fn optimal_control<T: Real>(&self, _t: T, _x: &[T], lambda: &[T], u: &mut [T]) {
        u[0] = -lambda[0];
    }

    fn terminal_gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        vec![x[0]]
    }

    fn costate_rhs<T: Real>(&self, _t: T, x: &[T], _lambda: &[T], out: &mut [T]) -> Result<()> {
        out[0] = -x[0];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_value_and_costate() {
        assert_eq!(Lqr::value(1.0), 0.5);
        assert_eq!(Lqr::value(0.0), 0.0);
        let p = Lqr::default();
        // λ = x at the optimum, so u* = −x
        let mut u = [0.0];
        p.optimal_control(0.0, &[1.0], &[1.0], &mut u);
        assert_eq!(u[0], -1.0);
        assert_eq!(p.terminal_gradient(&[1.0]), vec![1.0]);
    }

    #[test]
    fn hand_derived_costate_matches_generic_derivation() {
        use crate::scalar::{dual_diff, Dual};
        let p = Lqr::new(3.0);
        let (x, lambda) = (3.0, 0.4);
        let mut out = [0.0];
        p.costate_rhs(0.2, &[x], &[lambda], &mut out).unwrap();
        let (_, g) = dual_diff(
            |z: &[Dual<f64>]| {
                let u = [Dual::constant(-lambda)];
                p.hamiltonian(Dual::constant(0.2), z, &[Dual::constant(lambda)], &u)
                    .unwrap()
            },
            &[x],
        )
        .unwrap();
        assert_eq!(out[0], -g[0]);
        assert_eq!(out[0], -3.0);
    }
}
