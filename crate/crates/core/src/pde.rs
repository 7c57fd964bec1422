//! Grid solvers: backward HJB with pointwise Hamiltonian minimisation and the
//! forward killed Fokker-Planck equation.
//!
//! Both use implicit diffusion (one tridiagonal solve per step) and explicit,
//! upwinded first-order terms. The HJB slope `∂ₓV` plays the role of the
//! adjoint variable: the Hamiltonian is fed `z = σ·∂ₓV`, so that its
//! `z·σ⁻¹·drift` term equals `∂ₓV·drift`.

use crate::error::{Error, Result};
use crate::grid::Grids;
use crate::linalg::solve_tridiagonal;
use crate::measures::SubProbFlow;
use crate::model::{ModelSpec, Weight};
use crate::scalar::Scalar;

/// Markov feedback `u(t, x)` on a grid: piecewise constant in time, linear in
/// state, clamped to the grid box and to Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy<T> {
    pub grids: Grids<T>,
    pub actions: Vec<T>,
    pub min: T,
    pub max: T,
}

impl<T: Scalar> FeedbackPolicy<T> {
    /// Policy playing the constant `value` (clamped to Γ) everywhere.
    pub fn constant(model: &ModelSpec<T>, grids: Grids<T>, value: T) -> Self {
        let u = model.actions.clamp(value);
        Self { grids, actions: vec![u; grids.rows() * grids.cols()], min: model.actions.min, max: model.actions.max }
    }

    /// `u ≡ 0` projected onto Γ.
    pub fn uncontrolled(model: &ModelSpec<T>, grids: Grids<T>) -> Self {
        Self::constant(model, grids, T::zero())
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        let c = self.grids.cols();
        &self.actions[k * c..(k + 1) * c]
    }

    /// Action at time `t` and state `x`.
    #[inline]
    pub fn action(&self, t: T, x: T) -> T {
        let k = self.grids.time.floor_index(t);
        let row = self.row(k);
        let s = &self.grids.state;
        let r = (x - s.lower) / s.dx();
        let u = if r <= T::zero() {
            row[0]
        } else {
            let max_j = T::from_usize_lossy(s.cells);
            if r >= max_j {
                row[s.cells]
            } else {
                let j = r.floor();
                let frac = r - j;
                let j = j.to_usize().unwrap_or(0).min(s.cells - 1);
                row[j] + (row[j + 1] - row[j]) * frac
            }
        };
        u.max(self.min).min(self.max)
    }
}

/// HJB value `V(t_k, x_j)` and slope `∂ₓV` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField<T> {
    pub grids: Grids<T>,
    pub values: Vec<T>,
    pub slope: Vec<T>,
}

impl<T: Scalar> ValueField<T> {
    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        let c = self.grids.cols();
        &self.values[k * c..(k + 1) * c]
    }

    #[inline]
    pub fn slope_row(&self, k: usize) -> &[T] {
        let c = self.grids.cols();
        &self.slope[k * c..(k + 1) * c]
    }
}

/// Pointwise minimiser of the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianMin<T> {
    pub u_star: T,
    pub h_min: T,
    /// Bracket of the minimiser set; degenerate when the minimiser is unique.
    pub minimizer_interval: (T, T),
}

const COARSE_POINTS: usize = 33;
const GOLDEN_ITERS: usize = 60;

/// Minimises `h(u) = f₀(t,x,u) + f̄(t,x,l,m) + z·σ⁻¹·(u + b̄(t,x,l,m))` over Γ.
///
/// A coarse scan locates the minimiser; golden-section search refines it.
/// Flat stretches (several coarse points tied) report the tied interval and
/// return its midpoint. Convexity of `f₀` in `u` keeps the minimiser set an interval.
pub fn minimize_hamiltonian<T: Scalar>(model: &ModelSpec<T>, t: T, x: T, l: T, m: T, z: T) -> HamiltonianMin<T> {
    let bbar = model.drift_bar(t, x, l, m);
    let fbar = model.running_cost_bar(t, x, l, m);
    let p = z / model.sigma;
    let h = |u: T| model.control_cost(t, x, u) + fbar + p * (u + bbar);
    minimize_scalar(model.actions.min, model.actions.max, h)
}

fn minimize_scalar<T: Scalar>(lo: T, hi: T, h: impl Fn(T) -> T) -> HamiltonianMin<T> {
    let n = COARSE_POINTS;
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    let grid_u = |i: usize| if i == n - 1 { hi } else { lo + step * T::from_usize_lossy(i) };
    let mut values = [T::zero(); COARSE_POINTS];
    let mut best = 0;
    for i in 0..n {
        values[i] = h(grid_u(i));
        if values[i] < values[best] {
            best = i;
        }
    }
    let h_best = values[best];
    let tol = T::lit(64.0) * T::epsilon() * (T::one() + h_best.abs());
    let first = values.iter().position(|&v| v <= h_best + tol).unwrap_or(best);
    let last = values.iter().rposition(|&v| v <= h_best + tol).unwrap_or(best);
    if last > first {
        let (a, b) = (grid_u(first), grid_u(last));
        let mid = (a + b) * T::half();
        return HamiltonianMin { u_star: mid, h_min: h(mid).min(h_best), minimizer_interval: (a, b) };
    }

    let mut a = grid_u(best.saturating_sub(1));
    let mut b = grid_u((best + 1).min(n - 1));
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let (mut hc, mut hd) = (h(c), h(d));
    let width_tol = T::lit(1e-12) * (T::one() + hi.abs().max(lo.abs()));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= width_tol {
            break;
        }
        if hc <= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - (b - a) * inv_phi;
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + (b - a) * inv_phi;
            hd = h(d);
        }
    }
    let mut u_star = (a + b) * T::half();
    let mut h_min = h(u_star);
    for cand in [a, b, grid_u(best)] {
        let hv = h(cand);
        if hv < h_min {
            h_min = hv;
            u_star = cand;
        }
    }
    HamiltonianMin { u_star, h_min, minimizer_interval: (u_star, u_star) }
}

/// Central differences, one-sided at the two ends.
fn slope_of<T: Scalar>(v: &[T], dx: T, out: &mut [T]) {
    let n = v.len();
    out[0] = (v[1] - v[0]) / dx;
    out[n - 1] = (v[n - 1] - v[n - 2]) / dx;
    let two_dx = dx * T::two();
    for j in 1..n - 1 {
        out[j] = (v[j + 1] - v[j - 1]) / two_dx;
    }
}

/// Backward HJB solve against the mean-field traces of `flow`.
///
/// Step `k+1 → k`: the slope of `V^{k+1}` selects `u*` per node, the optimised
/// Hamiltonian is evaluated with a first derivative upwinded by the sign of
/// the total drift, and the diffusion is taken implicitly. Boundary rows:
/// `V = F` on an absorbing threshold node, `∂ₓₓV = 0` on far-field edges.
pub fn solve_hjb<T: Scalar>(
    model: &ModelSpec<T>,
    flow: &SubProbFlow<T>,
    grids: Grids<T>,
) -> Result<(ValueField<T>, FeedbackPolicy<T>)> {
    solve_hjb_with(model, flow, grids, T::zero())
}

/// [`solve_hjb`] for a player whose own state enters the mean-field value:
/// the coefficients read `m(t) + own_share·w(x)` instead of `m(t)`. With
/// `own_share = 1/N` and co-player traces this is a single player's problem
/// in an N-player population.
pub fn solve_hjb_with<T: Scalar>(
    model: &ModelSpec<T>,
    flow: &SubProbFlow<T>,
    grids: Grids<T>,
    own_share: T,
) -> Result<(ValueField<T>, FeedbackPolicy<T>)> {
    if flow.grids.time.steps != grids.time.steps {
        return Err(Error::domain("flow and HJB grids have different time steps"));
    }
    let (rows, cols) = (grids.rows(), grids.cols());
    let kmax = grids.time.steps;
    let dt = grids.time.dt();
    let dx = grids.state.dx();
    let xs = grids.state.nodes();
    let diff = model.sigma * model.sigma * T::half();
    let r = dt * diff / (dx * dx);
    let absorbing = grids.state.absorbing_lower;

    let mut values = vec![T::zero(); rows * cols];
    let mut slope = vec![T::zero(); rows * cols];
    let mut actions = vec![T::zero(); rows * cols];

    let horizon = grids.time.horizon;
    for j in 0..cols {
        values[kmax * cols + j] = model.terminal(horizon, xs[j]);
    }
    let mut scale = values[kmax * cols..].iter().fold(T::zero(), |a, &v| a.max(v.abs()));

    let mut lower = vec![T::zero(); cols];
    let mut diag = vec![T::zero(); cols];
    let mut upper = vec![T::zero(); cols];
    let mut rhs = vec![T::zero(); cols];
    let mut scratch = Vec::with_capacity(cols);
    let mut p = vec![T::zero(); cols];

    for k in (0..=kmax).rev() {
        let t = grids.time.time(k);
        let (l, m) = (flow.loss[k], flow.mean[k]);
        let next = (k + 1).min(kmax);
        let v_next: Vec<T> = values[next * cols..(next + 1) * cols].to_vec();
        slope_of(&v_next, dx, &mut p);
        let mut cost_scale = T::zero();
        for j in 0..cols {
            let x = xs[j];
            let m = if own_share == T::zero() { m } else { m + own_share * model.weight(x) };
            let hm = minimize_hamiltonian(model, t, x, l, m, model.sigma * p[j]);
            actions[k * cols + j] = hm.u_star;
            if k == kmax {
                continue;
            }
            let drift = hm.u_star + model.drift_bar(t, x, l, m);
            let run = model.running_cost(t, x, l, m, hm.u_star);
            cost_scale = cost_scale.max(run.abs());
            let dv = if drift > T::zero() {
                if j + 1 < cols {
                    (v_next[j + 1] - v_next[j]) / dx
                } else {
                    (v_next[j] - v_next[j - 1]) / dx
                }
            } else if j > 0 {
                (v_next[j] - v_next[j - 1]) / dx
            } else {
                (v_next[1] - v_next[0]) / dx
            };
            rhs[j] = v_next[j] + dt * (run + drift * dv);
            lower[j] = -r;
            diag[j] = T::one() + r * T::two();
            upper[j] = -r;
        }
        if k == kmax {
            continue;
        }
        scale = scale + dt * cost_scale;
        // lower edge
        lower[0] = T::zero();
        upper[0] = T::zero();
        diag[0] = T::one();
        if absorbing {
            rhs[0] = model.terminal(t, xs[0]);
        }
        // far edge: zero curvature
        lower[cols - 1] = T::zero();
        upper[cols - 1] = T::zero();
        diag[cols - 1] = T::one();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
        let limit = T::lit(10.0) * (scale + T::one());
        if let Some(bad) = rhs.iter().find(|v| !v.is_finite() || v.abs() > limit) {
            return Err(Error::solver(format!(
                "HJB iterate left the cost scale at t = {t} (|V| = {bad}, limit {limit}); reduce dt"
            )));
        }
        values[k * cols..(k + 1) * cols].copy_from_slice(&rhs);
    }
    for k in 0..rows {
        let (v, s) = (&values[k * cols..(k + 1) * cols], &mut slope[k * cols..(k + 1) * cols]);
        slope_of(v, dx, s);
    }
    let policy = FeedbackPolicy { grids, actions, min: model.actions.min, max: model.actions.max };
    Ok((ValueField { grids, values, slope }, policy))
}

/// Where the forward solver reads `(L_k, m_k)` from.
#[derive(Debug, Clone, Copy)]
pub enum MeanFieldInput<'a, T> {
    /// From the flow being built (explicit in the mean-field terms).
    SelfConsistent,
    /// From given traces, e.g. a frozen guess.
    Frozen { loss: &'a [T], mean: &'a [T] },
}

/// Forward solution plus boundary diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct KilledFlow<T> {
    pub flow: SubProbFlow<T>,
    /// Upper bound on the mass that far-field walls held back.
    pub far_leak: T,
    /// Largest `|survivor + loss − 1|` over all steps.
    pub max_balance_error: T,
    /// Largest number of advection sub-steps used in one time step.
    pub max_substeps: usize,
}

/// Projects ν onto the state grid, preserving mass (and the mean of point masses).
pub fn project_initial<T: Scalar>(model: &ModelSpec<T>, grids: &Grids<T>) -> Vec<T> {
    let s = grids.state;
    let cols = s.len();
    let dx = s.dx();
    let mut mass = vec![T::zero(); cols];
    match model.initial {
        crate::model::InitialLaw::PointMass { at } => {
            let r = ((at - s.lower) / dx).max(T::zero()).min(T::from_usize_lossy(s.cells));
            let j = r.floor().to_usize().unwrap_or(0).min(s.cells - 1);
            let frac = r - T::from_usize_lossy(j);
            mass[j] = T::one() - frac;
            mass[j + 1] += frac;
        }
        law => {
            let x0 = s.lower.as_f64();
            let h = dx.as_f64();
            let mut prev = 0.0;
            for (j, m) in mass.iter_mut().enumerate() {
                let edge = if j == cols - 1 { f64::INFINITY } else { x0 + h * (j as f64 + 0.5) };
                let c = if edge.is_infinite() { 1.0 } else { law.cdf(edge) };
                *m = T::lit(c - prev);
                prev = c;
            }
        }
    }
    if s.absorbing_lower {
        let m0 = mass[0];
        mass[1] += m0;
        mass[0] = T::zero();
    }
    let total: T = mass.iter().copied().sum();
    mass.into_iter().map(|m| m / (total * dx)).collect()
}

/// Forward killed Fokker-Planck solve under `policy`, with self-consistent mean-field inputs.
pub fn solve_killed_fp<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    grids: Grids<T>,
) -> Result<SubProbFlow<T>> {
    Ok(solve_killed_fp_with(model, policy, grids, MeanFieldInput::SelfConsistent)?.flow)
}

const NEGATIVE_DENSITY_TOL: f64 = 1e-12;
const BALANCE_TOL: f64 = 1e-6;

/// Forward killed Fokker-Planck solve with an explicit choice of mean-field inputs.
///
/// Finite volumes centred on the nodes; advection is upwinded and sub-stepped
/// to respect its CFL limit, diffusion is implicit. At an absorbing threshold
/// the node density is held at zero and the boundary fluxes are accumulated
/// into the loss trace, so mass balance is checked rather than imposed.
pub fn solve_killed_fp_with<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    grids: Grids<T>,
    input: MeanFieldInput<'_, T>,
) -> Result<KilledFlow<T>> {
    if let MeanFieldInput::Frozen { loss, mean } = input {
        if loss.len() != grids.rows() || mean.len() != grids.rows() {
            return Err(Error::domain("frozen mean-field traces do not match the time grid"));
        }
    }
    let (rows, cols) = (grids.rows(), grids.cols());
    let dt = grids.time.dt();
    let dx = grids.state.dx();
    let xs = grids.state.nodes();
    let diff = model.sigma * model.sigma * T::half();
    let r = dt * diff / (dx * dx);
    let absorbing = grids.state.absorbing_lower;
    let first = usize::from(absorbing);
    let weight: Weight<T> = model.weight;
    let wfun = |x: T| match model.truncation {
        Some(k) => crate::scalar::clamp_magnitude(weight.eval(x), k),
        None => weight.eval(x),
    };

    let mut flow = SubProbFlow::zeros(grids);
    let rho0 = project_initial(model, &grids);
    flow.row_mut(0).copy_from_slice(&rho0);
    flow.refresh_row(0, &wfun);
    flow.loss[0] = T::zero();

    // implicit diffusion matrix on the active cells
    let n_active = cols - first;
    let mut lower = vec![-r; n_active];
    let mut diag = vec![T::one() + r * T::two(); n_active];
    let mut upper = vec![-r; n_active];
    if !absorbing {
        diag[0] = T::one() + r;
    }
    diag[n_active - 1] = T::one() + r;
    lower[0] = T::zero();
    upper[n_active - 1] = T::zero();

    let mut rho: Vec<T> = rho0;
    let mut face = vec![T::zero(); cols + 1];
    let mut flux = vec![T::zero(); cols + 1];
    let mut scratch = Vec::with_capacity(cols);
    let mut far_leak = T::zero();
    let mut max_balance = T::zero();
    let mut max_substeps = 1usize;
    let neg_tol = T::lit(NEGATIVE_DENSITY_TOL);

    for k in 0..rows - 1 {
        let t = grids.time.time(k);
        let (l, m) = match input {
            MeanFieldInput::SelfConsistent => (flow.loss[k], flow.mean[k]),
            MeanFieldInput::Frozen { loss, mean } => (loss[k], mean[k]),
        };
        let node_drift: Vec<T> =
            xs.iter().map(|&x| policy.action(t, x) + model.drift_bar(t, x, l, m)).collect();
        // face i sits between node i-1 and node i; faces 0 and cols are the outer edges
        face[0] = node_drift[0];
        face[cols] = node_drift[cols - 1];
        for i in 1..cols {
            face[i] = (node_drift[i - 1] + node_drift[i]) * T::half();
        }
        let mut out_rate = T::zero();
        for j in first..cols {
            let o = face[j + 1].max(T::zero()) + (-face[j]).max(T::zero());
            out_rate = out_rate.max(o);
        }
        let cfl = (out_rate * dt / dx).as_f64();
        let substeps = ((cfl / 0.95).ceil() as usize).max(1);
        max_substeps = max_substeps.max(substeps);
        let h = dt / T::from_usize_lossy(substeps);

        let mut absorbed = T::zero();
        for _ in 0..substeps {
            for i in 0..=cols {
                flux[i] = T::zero();
            }
            for i in (first + 1)..cols {
                let a = face[i];
                flux[i] = a.max(T::zero()) * rho[i - 1] + a.min(T::zero()) * rho[i];
            }
            if absorbing {
                // flux through face 1 into the threshold node leaves the system
                let a = face[1];
                flux[1] = a.min(T::zero()) * rho[1];
                absorbed += -flux[1] * h;
            } else {
                far_leak += (-face[0]).max(T::zero()) * rho[0] * h;
            }
            far_leak += face[cols].max(T::zero()) * rho[cols - 1] * h;
            for j in first..cols {
                rho[j] -= h / dx * (flux[j + 1] - flux[j]);
            }
        }

        // implicit diffusion on the active cells
        let mut active: Vec<T> = rho[first..].to_vec();
        solve_tridiagonal(&lower, &diag, &upper, &mut active, &mut scratch);
        rho[first..].copy_from_slice(&active);
        if absorbing {
            absorbed += dt * diff * rho[1] / dx;
            rho[0] = T::zero();
        } else {
            far_leak += dt * diff * rho[0] / dx;
        }
        far_leak += dt * diff * rho[cols - 1] / dx;

        for (j, v) in rho.iter_mut().enumerate() {
            if *v < T::zero() {
                if *v < -neg_tol {
                    return Err(Error::solver(format!(
                        "negative density {} at t = {}, x = {}",
                        *v,
                        grids.time.time(k + 1),
                        xs[j]
                    )));
                }
                *v = T::zero();
            }
        }
        flow.row_mut(k + 1).copy_from_slice(&rho);
        flow.refresh_row(k + 1, &wfun);
        flow.loss[k + 1] = flow.loss[k] + absorbed;
        let balance = (flow.survivor_mass[k + 1] + flow.loss[k + 1] - T::one()).abs();
        max_balance = max_balance.max(balance);
        if balance.as_f64() > BALANCE_TOL {
            return Err(Error::solver(format!(
                "mass balance violated by {balance} at t = {}",
                grids.time.time(k + 1)
            )));
        }
    }
    Ok(KilledFlow { flow, far_leak, max_balance_error: max_balance, max_substeps })
}

/// Killed flow of the uncontrolled dynamics with the mean-field inputs frozen at zero.
pub fn uncontrolled_flow<T: Scalar>(model: &ModelSpec<T>, grids: Grids<T>) -> Result<SubProbFlow<T>> {
    let zeros = vec![T::zero(); grids.rows()];
    let policy = FeedbackPolicy::uncontrolled(model, grids);
    Ok(solve_killed_fp_with(model, &policy, grids, MeanFieldInput::Frozen { loss: &zeros, mean: &zeros })?.flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlCost, TerminalCost};
    use crate::presets;

    fn quad_model() -> ModelSpec<f64> {
        let mut m = presets::brownian::<f64>();
        m.control_cost = ControlCost::Quadratic { coef: 1.0 };
        m
    }

    #[test]
    fn interior_minimiser() {
        let hm = minimize_hamiltonian(&quad_model(), 0.0, 1.0, 0.0, 0.0, 1.0);
        assert!((hm.u_star + 0.5).abs() < 1e-7);
        assert!((hm.h_min + 0.25).abs() < 1e-12);
        let (a, b) = hm.minimizer_interval;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn boundary_minimiser() {
        let hm = minimize_hamiltonian(&quad_model(), 0.0, 1.0, 0.0, 0.0, 4.0);
        assert_eq!(hm.u_star, -1.0);
        assert!((hm.h_min + 3.0).abs() < 1e-12);
    }

    #[test]
    fn flat_hamiltonian_takes_midpoint() {
        let m = presets::brownian::<f64>();
        let hm = minimize_hamiltonian(&m, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(hm.minimizer_interval, (-1.0, 1.0));
        assert_eq!(hm.u_star, 0.0);
    }

    #[test]
    fn absolute_cost_has_interior_flat_set() {
        // h(u) = |u| + 0.5 u on [-1, 1] has a unique minimiser at 0
        let mut m = presets::brownian::<f64>();
        m.control_cost = ControlCost::Absolute { coef: 1.0 };
        let hm = minimize_hamiltonian(&m, 0.0, 1.0, 0.0, 0.0, 0.5);
        assert!(hm.u_star.abs() < 1e-9);
        // |u| + u: flat on [-1, 0]
        let hm = minimize_hamiltonian(&m, 0.0, 1.0, 0.0, 0.0, 1.0);
        assert_eq!(hm.minimizer_interval, (-1.0, 0.0));
        assert_eq!(hm.u_star, -0.5);
    }

    #[test]
    fn policy_interpolates_and_clamps() {
        let m = presets::brownian::<f64>();
        let g = Grids::for_model(&m, 0.5, 4, Some(4.0)).unwrap();
        let mut p = FeedbackPolicy::uncontrolled(&m, g);
        for (j, a) in p.actions.iter_mut().enumerate() {
            *a = (j % 5) as f64 - 2.0;
        }
        assert_eq!(p.action(0.1, 0.5), -1.0);
        assert_eq!(p.action(0.1, 2.5), 0.5);
        assert_eq!(p.action(0.1, 9.0), 1.0);
        assert_eq!(p.action(0.1, -3.0), -1.0);
    }

    #[test]
    fn zero_costs_give_zero_value_and_midpoint_policy() {
        let m = presets::brownian::<f64>();
        let g = Grids::for_model(&m, 0.01, 100, None).unwrap();
        let flow = uncontrolled_flow(&m, g).unwrap();
        let (v, p) = solve_hjb(&m, &flow, g).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert!(p.actions.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn comparison_in_terminal_cost() {
        let mut lo = presets::weakly_coupled::<f64>();
        lo.terminal_cost = TerminalCost::Deviation { coef: 0.5, target: 1.0 };
        let mut hi = lo.clone();
        hi.terminal_cost = TerminalCost::Deviation { coef: 0.8, target: 1.0 };
        let g = Grids::for_model(&lo, 0.01, 120, None).unwrap();
        let flow = uncontrolled_flow(&lo, g).unwrap();
        let (vlo, _) = solve_hjb(&lo, &flow, g).unwrap();
        let (vhi, _) = solve_hjb(&hi, &flow, g).unwrap();
        assert!(vlo.values.iter().zip(&vhi.values).all(|(a, b)| *b >= *a - 1e-12));
    }

    #[test]
    fn projection_preserves_mass_and_point_location() {
        let m = presets::brownian::<f64>();
        let g = Grids::for_model(&m, 0.01, 350, None).unwrap();
        let rho = project_initial(&m, &g);
        let dx = g.state.dx();
        assert!((rho.iter().sum::<f64>() * dx - 1.0).abs() < 1e-14);
        assert!((rho[50] * dx - 1.0).abs() < 1e-9);
        let mut u = presets::decoupled::<f64>();
        u.threshold = 0.0;
        let g = Grids::for_model(&u, 0.01, 200, None).unwrap();
        let rho = project_initial(&u, &g);
        assert!((rho.iter().sum::<f64>() * g.state.dx() - 1.0).abs() < 1e-14);
        assert_eq!(rho[0], 0.0);
    }

    #[test]
    fn decoupled_forward_ignores_frozen_guess() {
        let m = presets::decoupled::<f64>();
        let g = Grids::for_model(&m, 0.01, 150, None).unwrap();
        let p = FeedbackPolicy::constant(&m, g, 0.3);
        let a = vec![0.0; g.rows()];
        let b: Vec<f64> = (0..g.rows()).map(|k| k as f64 / g.rows() as f64).collect();
        let fa = solve_killed_fp_with(&m, &p, g, MeanFieldInput::Frozen { loss: &a, mean: &a }).unwrap();
        let fb = solve_killed_fp_with(&m, &p, g, MeanFieldInput::Frozen { loss: &b, mean: &b }).unwrap();
        assert_eq!(fa.flow, fb.flow);
    }
}
