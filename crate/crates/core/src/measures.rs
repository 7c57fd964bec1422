//! Sub-probability flows, empirical records and the distances used to compare them.
//!
//! A [`SubProbFlow`] stores, for every grid time, the density of the surviving
//! population together with its mass, the loss `L(t) = 1 − mass(t)` and the
//! mean-field value `m(t) = ∫ w dμ_t`. Quadrature uses the control volumes of
//! [`StateGrid`]: every node carries weight `dx`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grids, StateGrid, TimeGrid};
use crate::model::Weight;
use crate::scalar::Scalar;

/// Flow of sub-probability measures on a time × state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubProbFlow<T> {
    pub grids: Grids<T>,
    /// Row-major `(K+1) × (J+1)` densities.
    pub density: Vec<T>,
    pub survivor_mass: Vec<T>,
    pub loss: Vec<T>,
    pub mean: Vec<T>,
}

impl<T: Scalar> SubProbFlow<T> {
    /// All-zero flow on `grids`.
    pub fn zeros(grids: Grids<T>) -> Self {
        let rows = grids.rows();
        Self {
            grids,
            density: vec![T::zero(); rows * grids.cols()],
            survivor_mass: vec![T::zero(); rows],
            loss: vec![T::one(); rows],
            mean: vec![T::zero(); rows],
        }
    }

    /// Builds a flow from density rows, recomputing mass, loss and mean.
    pub fn from_density(grids: Grids<T>, density: Vec<T>, weight: &dyn Fn(T) -> T) -> Result<Self> {
        if density.len() != grids.rows() * grids.cols() {
            return Err(Error::domain("density matrix does not match the grids"));
        }
        let mut flow = Self { grids, density, ..Self::zeros(grids) };
        for k in 0..grids.rows() {
            flow.refresh_row(k, weight);
        }
        Ok(flow)
    }

    /// Recomputes mass, loss and mean of row `k` from its density.
    pub fn refresh_row(&mut self, k: usize, weight: &dyn Fn(T) -> T) {
        let dx = self.grids.state.dx();
        let state = self.grids.state;
        let row = self.row(k);
        let mass: T = row.iter().copied().sum::<T>() * dx;
        let mean: T = row.iter().enumerate().map(|(j, &p)| weight(state.node(j)) * p).sum::<T>() * dx;
        self.survivor_mass[k] = mass;
        self.loss[k] = T::one() - mass;
        self.mean[k] = mean;
    }

    pub fn rows(&self) -> usize {
        self.grids.rows()
    }

    pub fn cols(&self) -> usize {
        self.grids.cols()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        let c = self.cols();
        &self.density[k * c..(k + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.density[k * c..(k + 1) * c]
    }

    /// `L(t)` with piecewise-linear interpolation between grid times.
    pub fn loss_at_time(&self, t: T) -> T {
        interp_trace(&self.loss, &self.grids.time, t)
    }

    /// `m(t)` with piecewise-linear interpolation between grid times.
    pub fn mean_at_time(&self, t: T) -> T {
        interp_trace(&self.mean, &self.grids.time, t)
    }

    /// `(1 − θ)·self + θ·other`, applied to densities and all traces.
    pub fn blend(&self, other: &Self, theta: T) -> Result<Self> {
        if !self.grids.same_as(&other.grids) {
            return Err(Error::domain("cannot blend flows on different grids"));
        }
        let keep = T::one() - theta;
        let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| keep * x + theta * y).collect::<Vec<T>>();
        Ok(Self {
            grids: self.grids,
            density: mix(&self.density, &other.density),
            survivor_mass: mix(&self.survivor_mass, &other.survivor_mass),
            loss: mix(&self.loss, &other.loss),
            mean: mix(&self.mean, &other.mean),
        })
    }

    /// Moves every density row by `cells` nodes (positive = towards larger states),
    /// dropping mass pushed off the grid; traces are recomputed with `weight`.
    pub fn translated(&self, cells: isize, weight: &dyn Fn(T) -> T) -> Self {
        let c = self.cols() as isize;
        let mut density = vec![T::zero(); self.density.len()];
        for k in 0..self.rows() {
            let src = self.row(k);
            for j in 0..c {
                let dst = j + cells;
                if dst >= 0 && dst < c {
                    density[k * c as usize + dst as usize] = src[j as usize];
                }
            }
            if self.grids.state.absorbing_lower {
                density[k * c as usize] = T::zero();
            }
        }
        Self::from_density(self.grids, density, weight).expect("same shape")
    }

    /// Conditional law of row `k` as cell-edge CDF values (`J + 2` edges).
    fn conditional_cdf(&self, k: usize) -> Vec<f64> {
        let row = self.row(k);
        let total: f64 = row.iter().map(|p| p.as_f64()).sum();
        let mut cdf = Vec::with_capacity(row.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for p in row {
            acc += p.as_f64() / total;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        cdf
    }

    fn row_mass_f64(&self, k: usize) -> f64 {
        self.row(k).iter().map(|p| p.as_f64()).sum::<f64>() * self.grids.state.dx().as_f64()
    }

    /// Position `x` of row `k`'s conditional law at quantile `u`, linear within control volumes.
    pub fn conditional_quantile(&self, k: usize, u: f64) -> T {
        let cdf = self.conditional_cdf(k);
        let state = self.grids.state;
        let dx = state.dx().as_f64();
        let first_edge = state.lower.as_f64() - 0.5 * dx;
        let idx = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1);
        let (c0, c1) = (cdf[idx - 1], cdf[idx]);
        let frac = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        T::lit(first_edge + dx * ((idx - 1) as f64 + frac))
    }
}

fn interp_trace<T: Scalar>(trace: &[T], time: &TimeGrid<T>, t: T) -> T {
    let k = time.floor_index(t);
    if k >= time.steps {
        return trace[time.steps];
    }
    let t0 = time.time(k);
    let frac = ((t - t0) / time.dt()).max(T::zero()).min(T::one());
    trace[k] + (trace[k + 1] - trace[k]) * frac
}

/// Output of an N-particle simulation.
///
/// Absorbed particles are frozen at the threshold (stopped paths) and carry
/// `tau < inf`; survivors at the horizon carry `tau = inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalRecord<T> {
    pub time: TimeGrid<T>,
    pub threshold: T,
    pub tau: Vec<T>,
    /// Row-major `(K+1) × N` positions, when full paths were requested.
    pub paths: Option<Vec<T>>,
    pub initial: Vec<T>,
    pub terminal: Vec<T>,
    /// `sup_t |X_t|` over the stopped path.
    pub sup_abs: Vec<T>,
    /// Loss input `L^N_{t_k}` seen by the dynamics at every grid time.
    pub loss: Vec<T>,
    /// Mean-field input `m^N_{t_k}` seen by the dynamics at every grid time.
    pub mean: Vec<T>,
    /// Absorptions triggered by the bridge test rather than by the endpoint.
    pub bridge_hits: usize,
}

impl<T: Scalar> EmpiricalRecord<T> {
    pub fn n(&self) -> usize {
        self.tau.len()
    }

    #[inline]
    pub fn alive(&self, i: usize, t: T) -> bool {
        t < self.tau[i]
    }

    /// Positions at grid index `k`, when stored.
    pub fn positions_at(&self, k: usize) -> Option<&[T]> {
        let n = self.n();
        match &self.paths {
            Some(p) => Some(&p[k * n..(k + 1) * n]),
            None if k == 0 => Some(&self.initial),
            None if k == self.time.steps => Some(&self.terminal),
            None => None,
        }
    }

    /// Survivor positions at the horizon.
    pub fn survivors_at_horizon(&self) -> Vec<T> {
        let horizon = self.time.horizon;
        self.terminal.iter().zip(&self.tau).filter(|(_, &tau)| horizon < tau).map(|(&x, _)| x).collect()
    }

    pub fn absorbed_fraction(&self) -> T {
        loss_at(self, self.time.horizon)
    }
}

/// `L^N_t`: fraction of particles with `tau <= t`.
pub fn loss_at<T: Scalar>(record: &EmpiricalRecord<T>, t: T) -> T {
    let dead = record.tau.iter().filter(|&&tau| tau <= t).count();
    T::from_usize_lossy(dead) / T::from_usize_lossy(record.n())
}

/// `m^N_t = (1/N) Σ_alive w(X^i_t)`, normalised by the full population size.
pub fn mean_at<T: Scalar>(record: &EmpiricalRecord<T>, weight: &Weight<T>, t: T) -> Result<T> {
    let k = record
        .time
        .index_of(t)
        .ok_or_else(|| Error::domain(format!("time {t} is not on the record's grid")))?;
    let t = record.time.time(k);
    let xs = record
        .positions_at(k)
        .ok_or_else(|| Error::precondition(format!("positions at t = {t} were not stored")))?;
    let total: T = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| record.alive(*i, t))
        .map(|(_, &x)| weight.eval(x))
        .sum();
    Ok(total / T::from_usize_lossy(record.n()))
}

/// Histogram flow of a record's survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFlow<T> {
    pub flow: SubProbFlow<T>,
    /// Survivor positions that fell outside the grid box and were clipped to an edge cell.
    pub clipped: usize,
}

/// Empirical sub-probability flow of a record on `grids`. Requires the record
/// to store positions at every grid time (full paths, or a one-step grid).
pub fn flow_from_record<T: Scalar>(
    record: &EmpiricalRecord<T>,
    grids: Grids<T>,
    weight: &Weight<T>,
) -> Result<HistogramFlow<T>> {
    if record.time.steps != grids.time.steps {
        return Err(Error::domain("record and grids have different time steps"));
    }
    let n = record.n();
    let nf = T::from_usize_lossy(n);
    let dx = grids.state.dx();
    let mut flow = SubProbFlow::zeros(grids);
    let mut clipped = 0;
    let lowest = if grids.state.absorbing_lower { 1 } else { 0 };
    for k in 0..grids.rows() {
        let t = grids.time.time(k);
        let xs = record
            .positions_at(k)
            .ok_or_else(|| Error::precondition("flow_from_record needs stored positions at every grid time"))?;
        let mut counts = vec![0usize; grids.cols()];
        let mut alive = 0usize;
        let mut mean = T::zero();
        for (i, &x) in xs.iter().enumerate() {
            if !record.alive(i, t) {
                continue;
            }
            alive += 1;
            mean += weight.eval(x);
            let (j, out) = grids.state.nearest(x);
            if out {
                clipped += 1;
            }
            counts[j.max(lowest)] += 1;
        }
        let row = flow.row_mut(k);
        for (p, &c) in row.iter_mut().zip(&counts) {
            *p = T::from_usize_lossy(c) / (nf * dx);
        }
        let mass = T::from_usize_lossy(alive) / nf;
        flow.survivor_mass[k] = mass;
        flow.loss[k] = T::one() - mass;
        flow.mean[k] = mean / nf;
    }
    Ok(HistogramFlow { flow, clipped })
}

/// 1-Wasserstein distance between two empirical measures on the line.
///
/// Equal sizes reduce to the mean absolute difference of order statistics;
/// unequal sizes use the exact coupling of the two step quantile functions.
pub fn wasserstein1_samples<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("wasserstein1_samples needs non-empty samples"));
    }
    let mut a: Vec<f64> = a.iter().map(|x| x.as_f64()).collect();
    let mut b: Vec<f64> = b.iter().map(|x| x.as_f64()).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(T::lit(s / a.len() as f64));
    }
    // merge quantile breakpoints i/n and j/m
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(T::lit(total))
}

/// `∫ |D|` for `D` linear between `d0` and `d1` over an interval of length `h`.
#[inline]
fn abs_linear_integral(d0: f64, d1: f64, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if (d0 >= 0.0 && d1 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0) {
        0.5 * h * (d0.abs() + d1.abs())
    } else {
        0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
    }
}

/// Conditional-law distance and mass gap between two sub-probability measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowDistance<T> {
    pub w1: T,
    pub mass_gap: T,
}

/// Compares row `k` of two flows: W₁ between their survivor-normalised laws
/// (CDF linear inside each control volume) and `|mass_a − mass_b|`.
pub fn wasserstein1_flows<T: Scalar>(a: &SubProbFlow<T>, b: &SubProbFlow<T>, k: usize) -> Result<FlowDistance<T>> {
    if !a.grids.same_as(&b.grids) {
        return Err(Error::domain("wasserstein1_flows needs identical grids"));
    }
    let (ma, mb) = (a.row_mass_f64(k), b.row_mass_f64(k));
    if !(ma > 0.0) || !(mb > 0.0) {
        return Err(Error::domain(format!("zero-mass row at index {k}; conditional law undefined")));
    }
    let (fa, fb) = (a.conditional_cdf(k), b.conditional_cdf(k));
    let dx = a.grids.state.dx().as_f64();
    let w1: f64 = fa
        .windows(2)
        .zip(fb.windows(2))
        .map(|(x, y)| abs_linear_integral(x[0] - y[0], x[1] - y[1], dx))
        .sum();
    Ok(FlowDistance { w1: T::lit(w1), mass_gap: T::lit((ma - mb).abs()) })
}

/// W₁ between the empirical law of `samples` and the conditional law of row `k` of `flow`.
pub fn wasserstein1_samples_flow<T: Scalar>(samples: &[T], flow: &SubProbFlow<T>, k: usize) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::domain("wasserstein1_samples_flow needs a non-empty sample"));
    }
    if !(flow.row_mass_f64(k) > 0.0) {
        return Err(Error::domain(format!("zero-mass row at index {k}; conditional law undefined")));
    }
    let mut xs: Vec<f64> = samples.iter().map(|x| x.as_f64()).collect();
    xs.sort_by(f64::total_cmp);
    let cdf = flow.conditional_cdf(k);
    let state: StateGrid<T> = flow.grids.state;
    let dx = state.dx().as_f64();
    let e0 = state.lower.as_f64() - 0.5 * dx;
    let edges = cdf.len();
    let edge = |i: usize| e0 + dx * i as f64;
    let flow_cdf = |x: f64| -> f64 {
        let r = (x - e0) / dx;
        if r <= 0.0 {
            0.0
        } else if r >= (edges - 1) as f64 {
            1.0
        } else {
            let i = r.floor() as usize;
            cdf[i] + (cdf[i + 1] - cdf[i]) * (r - i as f64)
        }
    };
    let n = xs.len() as f64;
    let mut points: Vec<f64> = Vec::with_capacity(xs.len() + edges);
    points.extend(xs.iter().copied());
    points.extend((0..edges).map(edge));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut total = 0.0;
    let mut below = 0usize;
    for w in points.windows(2) {
        let (p, q) = (w[0], w[1]);
        while below < xs.len() && xs[below] <= p {
            below += 1;
        }
        let emp = below as f64 / n;
        total += abs_linear_integral(emp - flow_cdf(p), emp - flow_cdf(q), q - p);
    }
    Ok(T::lit(total))
}

/// `sqrt(∫₀ᵀ e^{−αt} d_t² dt)` by the trapezoidal rule on `time`.
pub fn alpha_weighted_distance<T: Scalar>(per_time: &[T], alpha: T, time: &TimeGrid<T>) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(Error::domain(format!("alpha must be > 0 (got {alpha})")));
    }
    if per_time.len() != time.len() {
        return Err(Error::domain("per-time distances do not match the time grid"));
    }
    let dt = time.dt();
    let g = |k: usize| (-alpha * time.time(k)).exp() * per_time[k] * per_time[k];
    let mut acc = T::zero();
    for k in 0..time.steps {
        acc += T::half() * dt * (g(k) + g(k + 1));
    }
    Ok(acc.sqrt())
}
