//! Damped Picard iteration between the HJB and killed Fokker-Planck solvers,
//! and Monte Carlo audits of a candidate solution.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grids;
use crate::measures::{alpha_weighted_distance, wasserstein1_flows, wasserstein1_samples_flow, SubProbFlow};
use crate::model::{ModelSpec, TruncationSchedule};
use crate::particle::{simulate_frozen, SimConfig};
use crate::pde::{solve_hjb, solve_killed_fp_with, uncontrolled_flow, FeedbackPolicy, MeanFieldInput, ValueField};
use crate::scalar::Scalar;

/// Pinsker constant in `TV ≤ C_H·sqrt(KL)`.
pub const PINSKER: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Smallest α used when the declared Lipschitz constant is zero.
pub const MIN_ALPHA: f64 = 1e-3;

/// Relative residual decrease below which the iteration moves to the next truncation level.
pub const STALL_RATIO: f64 = 0.9;

/// `σ⁻²·L²·C_H`, floored at [`MIN_ALPHA`].
pub fn default_alpha<T: Scalar>(model: &ModelSpec<T>) -> T {
    let a = model.lipschitz_l * model.lipschitz_l / (model.sigma * model.sigma) * T::lit(PINSKER);
    a.max(T::lit(MIN_ALPHA))
}

/// `K_n = 2ⁿ·K₁` with `K₁` the coefficient range over the grid box.
pub fn default_schedule<T: Scalar>(model: &ModelSpec<T>, grids: &Grids<T>, count: usize) -> Result<TruncationSchedule<T>> {
    let s = grids.state;
    let m_abs = s
        .nodes()
        .into_iter()
        .fold(T::zero(), |acc, x| acc.max(model.weight.eval(x).abs()));
    let k1 = model.coefficient_range(s.lower, s.upper, m_abs).max(T::one());
    TruncationSchedule::geometric(k1, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardOptions<T> {
    pub damping: T,
    pub tol: T,
    pub max_iter: usize,
    pub alpha: T,
}

impl<T: Scalar> PicardOptions<T> {
    pub fn for_model(model: &ModelSpec<T>) -> Self {
        Self { damping: T::half(), tol: T::lit(1e-3), max_iter: 50, alpha: default_alpha(model) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(Error::config(format!("damping must lie in (0, 1] (got {})", self.damping)));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::config(format!("tol must be > 0 (got {})", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be >= 1"));
        }
        if !(self.alpha > T::zero()) {
            return Err(Error::config(format!("alpha must be > 0 (got {})", self.alpha)));
        }
        Ok(())
    }
}

/// Distance between two flows on the same grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual<T> {
    /// `sup_t` of the conditional W₁.
    pub w1_sup: T,
    /// `sup_t |mass_a − mass_b|`.
    pub mass_gap_sup: T,
    /// α-weighted time integral of `W₁ + mass gap`.
    pub weighted: T,
}

/// Residual between two flows. Rows where either flow has no mass contribute
/// their mass gap only.
pub fn flow_residual<T: Scalar>(a: &SubProbFlow<T>, b: &SubProbFlow<T>, alpha: T) -> Result<Residual<T>> {
    if !a.grids.same_as(&b.grids) {
        return Err(Error::domain("flow residual needs identical grids"));
    }
    let mut per_time = Vec::with_capacity(a.rows());
    let (mut w1_sup, mut gap_sup) = (T::zero(), T::zero());
    for k in 0..a.rows() {
        let (w1, gap) = if a.survivor_mass[k] > T::zero() && b.survivor_mass[k] > T::zero() {
            let d = wasserstein1_flows(a, b, k)?;
            (d.w1, d.mass_gap)
        } else {
            (T::zero(), (a.survivor_mass[k] - b.survivor_mass[k]).abs())
        };
        w1_sup = w1_sup.max(w1);
        gap_sup = gap_sup.max(gap);
        per_time.push(w1 + gap);
    }
    let weighted = alpha_weighted_distance(&per_time, alpha, &a.grids.time)?;
    Ok(Residual { w1_sup, mass_gap_sup: gap_sup, weighted })
}

/// Outcome of [`picard_solve`]. Non-convergence is reported, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport<T> {
    pub iterations: usize,
    pub residual_history: Vec<Residual<T>>,
    pub truncation_level_history: Vec<T>,
    pub converged: bool,
    /// Value of the best response to the last iterate.
    pub final_value: ValueField<T>,
    /// Best response to the last iterate.
    pub final_policy: FeedbackPolicy<T>,
    /// Flow induced by `final_policy` against the last iterate.
    pub final_flow: SubProbFlow<T>,
}

impl<T: Scalar> FixedPointReport<T> {
    pub fn last_residual(&self) -> Option<&Residual<T>> {
        self.residual_history.last()
    }

    /// Iterations until the first zero residual (the iteration that only confirms a fixed point is not counted).
    pub fn effective_iterations(&self) -> usize {
        match self.residual_history.iter().position(|r| r.weighted == T::zero()) {
            Some(i) => i,
            None => self.iterations,
        }
    }
}

fn check_flow_invariants<T: Scalar>(flow: &SubProbFlow<T>, iteration: usize) -> Result<()> {
    let tol = T::lit(1e-9);
    if let Some(p) = flow.density.iter().find(|p| **p < T::zero()) {
        return Err(Error::solver(format!("iteration {iteration}: negative density {p}")));
    }
    for (k, &m) in flow.survivor_mass.iter().enumerate() {
        if m < -tol || m > T::one() + tol {
            return Err(Error::solver(format!("iteration {iteration}: survivor mass {m} at row {k}")));
        }
        if k > 0 && m > flow.survivor_mass[k - 1] + tol {
            return Err(Error::solver(format!("iteration {iteration}: survivor mass increases at row {k}")));
        }
    }
    Ok(())
}

/// Truncated damped fixed-point iteration.
///
/// Each iteration truncates the model at the current level, solves the HJB
/// against the current flow, pushes the best response forward with the flow's
/// traces frozen, measures the residual, and blends. The first update is taken
/// undamped since the initial guess carries no information about the
/// equilibrium. The level advances when the residual fails to drop by
/// [`STALL_RATIO`].
pub fn picard_solve<T: Scalar>(
    model: &ModelSpec<T>,
    schedule: &TruncationSchedule<T>,
    init_flow: Option<&SubProbFlow<T>>,
    options: &PicardOptions<T>,
    grids: Grids<T>,
) -> Result<FixedPointReport<T>> {
    options.validate()?;
    model.validate()?;
    let mut mu = match init_flow {
        Some(f) => {
            if !f.grids.same_as(&grids) {
                return Err(Error::domain("initial flow lives on different grids"));
            }
            check_flow_invariants(f, 0)?;
            f.clone()
        }
        None => uncontrolled_flow(model, grids).map_err(|e| e.context("initial flow"))?,
    };
    let levels = schedule.levels();
    let mut level = 0usize;
    let mut residuals = Vec::new();
    let mut level_history = Vec::new();
    let mut last: Option<(ValueField<T>, FeedbackPolicy<T>, SubProbFlow<T>)> = None;
    let mut converged = false;

    for it in 1..=options.max_iter {
        let k_n = levels[level];
        let truncated = model.truncate(k_n)?;
        let ctx = |e: Error| e.context(format!("fixed-point iteration {it} (truncation level {k_n})"));
        let (value, policy) = solve_hjb(&truncated, &mu, grids).map_err(ctx)?;
        let image = solve_killed_fp_with(
            &truncated,
            &policy,
            grids,
            MeanFieldInput::Frozen { loss: &mu.loss, mean: &mu.mean },
        )
        .map_err(ctx)?
        .flow;
        let res = flow_residual(&image, &mu, options.alpha)?;
        let theta = if it == 1 { T::one() } else { options.damping };
        let next = mu.blend(&image, theta)?;
        check_flow_invariants(&next, it)?;

        let stalled = residuals
            .last()
            .is_some_and(|prev: &Residual<T>| res.weighted > T::lit(STALL_RATIO) * prev.weighted);
        residuals.push(res);
        level_history.push(k_n);
        mu = next;
        last = Some((value, policy, image));
        if res.weighted <= options.tol {
            converged = true;
            break;
        }
        if stalled && level + 1 < levels.len() {
            level += 1;
        }
    }
    let (final_value, final_policy, final_flow) = last.expect("max_iter >= 1");
    Ok(FixedPointReport {
        iterations: residuals.len(),
        residual_history: residuals,
        truncation_level_history: level_history,
        converged,
        final_value,
        final_policy,
        final_flow,
    })
}

/// Monte Carlo audit of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyResidual<T> {
    /// Conditional W₁ at the horizon; `None` when the simulated population died out.
    pub w1_at_horizon: Option<T>,
    pub mass_gap_at_horizon: T,
    /// `sup_t |L_emp(t) − L(t)|`.
    pub loss_sup_gap: T,
}

impl<T: Scalar> ConsistencyResidual<T> {
    /// `W₁ + mass gap`, with an undefined W₁ counted as 1.
    pub fn total(&self) -> T {
        self.w1_at_horizon.unwrap_or(T::one()) + self.mass_gap_at_horizon
    }
}

/// Simulates `n_mc` representative players under `policy` against the frozen
/// traces of `flow`, and compares their law with `flow`.
pub fn consistency_residual<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    flow: &SubProbFlow<T>,
    n_mc: usize,
    seed: u64,
) -> Result<ConsistencyResidual<T>> {
    if n_mc < 1000 {
        return Err(Error::precondition(format!("consistency audit needs N_mc >= 1000 (got {n_mc})")));
    }
    let time = flow.grids.time;
    let config = SimConfig::new(n_mc, time.dt(), seed);
    let record = simulate_frozen(model, policy, flow, &config)?;
    let kmax = time.steps;
    let mut loss_gap = T::zero();
    for k in 0..=kmax {
        let emp = crate::measures::loss_at(&record, time.time(k));
        loss_gap = loss_gap.max((emp - flow.loss[k]).abs());
    }
    let survivors = record.survivors_at_horizon();
    let emp_mass = T::from_usize_lossy(survivors.len()) / T::from_usize_lossy(n_mc);
    if survivors.is_empty() {
        return Ok(ConsistencyResidual { w1_at_horizon: None, mass_gap_at_horizon: T::one(), loss_sup_gap: loss_gap });
    }
    let w1 = if flow.survivor_mass[kmax] > T::zero() {
        Some(wasserstein1_samples_flow(&survivors, flow, kmax)?)
    } else {
        None
    };
    Ok(ConsistencyResidual {
        w1_at_horizon: w1,
        mass_gap_at_horizon: (emp_mass - flow.survivor_mass[kmax]).abs(),
        loss_sup_gap: loss_gap,
    })
}

/// Whether the survivor mass stays positive at every grid time.
pub fn exit_positivity_check<T: Scalar>(flow: &SubProbFlow<T>) -> bool {
    flow.survivor_mass.iter().all(|m| *m > T::zero())
}
