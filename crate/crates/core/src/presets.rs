//! Reference models used by the test-suite, the CLI and the README examples.

use crate::model::{ActionSet, ControlCost, Drift, InitialLaw, ModelSpec, RunningCost, TerminalCost, Weight};
use crate::scalar::Scalar;

fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}

/// Uncontrolled Brownian motion started at 1, absorbed at 0, `σ = 1`, `T = 1`.
/// All costs vanish, so any policy is optimal.
pub fn brownian<T: Scalar>() -> ModelSpec<T> {
    ModelSpec {
        drift: Drift::Zero,
        control_cost: ControlCost::Zero,
        running_cost: RunningCost::Zero,
        terminal_cost: TerminalCost::Zero,
        weight: Weight::Zero,
        sigma: T::one(),
        actions: ActionSet::new(lit(-1.0), lit(1.0)),
        horizon: T::one(),
        initial: InitialLaw::PointMass { at: T::one() },
        threshold: T::zero(),
        growth_c: T::one(),
        lipschitz_l: T::one(),
        truncation: None,
    }
}

/// Controlled OU-type game whose coefficients ignore `(l, m)`.
pub fn decoupled<T: Scalar>() -> ModelSpec<T> {
    ModelSpec {
        drift: Drift::OuPull { rate: lit(0.5), target: T::one(), loss: T::zero(), mean: T::zero() },
        control_cost: ControlCost::Quadratic { coef: lit(0.5) },
        running_cost: RunningCost::Deviation { coef: lit(0.2), target: T::one(), loss: T::zero(), mean: T::zero() },
        terminal_cost: TerminalCost::Deviation { coef: lit(0.5), target: T::one() },
        weight: Weight::Saturating { amplitude: T::one(), scale: T::one() },
        sigma: lit(0.8),
        actions: ActionSet::new(lit(-1.0), lit(1.0)),
        horizon: T::one(),
        initial: InitialLaw::Uniform { low: lit(0.5), high: lit(1.5) },
        threshold: T::zero(),
        growth_c: T::one(),
        lipschitz_l: lit(0.5),
        truncation: None,
    }
}

/// The decoupled game plus a weak dependence on the loss and on the bounded
/// mean `m = ∫ tanh(x) dμ_t`; the drift is `0.1`-Lipschitz in `m`.
pub fn weakly_coupled<T: Scalar>() -> ModelSpec<T> {
    ModelSpec {
        drift: Drift::OuPull { rate: lit(0.5), target: T::one(), loss: lit(-0.2), mean: lit(0.1) },
        running_cost: RunningCost::Deviation { coef: lit(0.2), target: T::one(), loss: lit(0.3), mean: T::zero() },
        ..decoupled()
    }
}

/// Unconstrained-looking linear-quadratic model with the threshold far below
/// the region of interest: `f = u² + q x²`, `F = g x²`, `b̄ = a x`.
pub fn linear_quadratic<T: Scalar>(q: f64, g: f64, a: f64, sigma: f64) -> ModelSpec<T> {
    ModelSpec {
        drift: Drift::Linear { slope: lit(a), intercept: T::zero(), loss: T::zero(), mean: T::zero() },
        control_cost: ControlCost::Quadratic { coef: T::one() },
        running_cost: RunningCost::QuadraticState { coef: lit(q) },
        terminal_cost: TerminalCost::Quadratic { coef: lit(g) },
        weight: Weight::Zero,
        sigma: lit(sigma),
        actions: ActionSet::new(lit(-20.0), lit(20.0)),
        horizon: T::one(),
        initial: InitialLaw::Uniform { low: lit(-1.0), high: lit(1.0) },
        threshold: lit(-1.0e3),
        growth_c: lit(10.0),
        lipschitz_l: T::one(),
        truncation: None,
    }
}

/// Every named preset, for sweeps over "each catalog model".
pub fn catalog<T: Scalar>() -> Vec<(&'static str, ModelSpec<T>)> {
    vec![
        ("brownian", brownian()),
        ("decoupled", decoupled()),
        ("weakly_coupled", weakly_coupled()),
        ("linear_quadratic", linear_quadratic(0.5, 0.5, -0.3, 0.5)),
    ]
}

/// Looks a preset up by name.
pub fn by_name<T: Scalar>(name: &str) -> Option<ModelSpec<T>> {
    catalog().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
}
