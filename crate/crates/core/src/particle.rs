//! Euler-Maruyama simulation of the absorbed N-player system and of i.i.d.
//! representative players against a frozen flow.
//!
//! Each step first reads the mean-field inputs `(L, m)` from the state at the
//! step start, then moves every surviving particle independently. Absorption
//! is detected at the endpoint and, optionally, by a Brownian-bridge test
//! inside the step. Absorbed particles are frozen at the threshold with
//! `tau` set to the start of the step in which they left.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::measures::{EmpiricalRecord, SubProbFlow};
use crate::model::ModelSpec;
use crate::pde::FeedbackPolicy;
use crate::rng::{self, LANE_BRIDGE, LANE_BROWNIAN};
use crate::scalar::Scalar;

/// Any state beyond this magnitude aborts the simulation.
pub const BLOWUP_LIMIT: f64 = 1.0e6;

const PARALLEL_MIN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig<T> {
    pub n: usize,
    pub dt: T,
    pub seed: u64,
    pub bridge_correction: bool,
    pub store_full_paths: bool,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(n: usize, dt: T, seed: u64) -> Self {
        Self { n, dt, seed, bridge_correction: true, store_full_paths: false }
    }

    pub fn with_paths(mut self, store: bool) -> Self {
        self.store_full_paths = store;
        self
    }

    pub fn with_bridge(mut self, bridge: bool) -> Self {
        self.bridge_correction = bridge;
        self
    }

    pub fn time_grid(&self, horizon: T) -> Result<TimeGrid<T>> {
        if self.n == 0 {
            return Err(Error::config("particle count N must be >= 1"));
        }
        TimeGrid::from_dt(horizon, self.dt)
    }
}

/// Strategy profile of the N players.
#[derive(Debug, Clone, Copy)]
pub enum Profile<'a, T> {
    /// Every player uses the same feedback.
    Shared(&'a FeedbackPolicy<T>),
    /// Player 0 deviates, everybody else plays `others`.
    FirstDeviates { first: &'a FeedbackPolicy<T>, others: &'a FeedbackPolicy<T> },
    /// One policy per player.
    PerPlayer(&'a [FeedbackPolicy<T>]),
}

impl<'a, T> Profile<'a, T> {
    #[inline]
    pub fn policy(&self, player: usize) -> &'a FeedbackPolicy<T> {
        match *self {
            Profile::Shared(p) => p,
            Profile::FirstDeviates { first, others } => {
                if player == 0 {
                    first
                } else {
                    others
                }
            }
            Profile::PerPlayer(ps) => &ps[player],
        }
    }

    fn covers(&self, n: usize) -> bool {
        match self {
            Profile::PerPlayer(ps) => ps.len() >= n,
            _ => true,
        }
    }
}

/// Current state of the particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<T> {
    pub positions: Vec<T>,
    pub alive: Vec<bool>,
    pub tau: Vec<T>,
    /// Counter-RNG stream of each particle.
    pub streams: Vec<u64>,
    pub step_index: usize,
}

impl<T: Scalar> ParticleEnsemble<T> {
    pub fn new(positions: Vec<T>) -> Self {
        let n = positions.len();
        Self {
            positions,
            alive: vec![true; n],
            tau: vec![T::infinity(); n],
            streams: (0..n as u64).collect(),
            step_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `(L^N, m^N)` of the current state, summed in particle order.
    pub fn mean_field(&self, model: &ModelSpec<T>) -> (T, T) {
        let n = T::from_usize_lossy(self.len());
        let mut dead = 0usize;
        let mut m = T::zero();
        for (x, &a) in self.positions.iter().zip(&self.alive) {
            if a {
                m += model.weight(*x);
            } else {
                dead += 1;
            }
        }
        (T::from_usize_lossy(dead) / n, m / n)
    }
}

/// Moves every alive particle by one Euler step with the given Gaussian
/// draws; dead particles are untouched. No absorption test is applied.
#[allow(clippy::too_many_arguments)]
pub fn euler_step<T: Scalar>(
    ensemble: &mut ParticleEnsemble<T>,
    model: &ModelSpec<T>,
    profile: Profile<'_, T>,
    t: T,
    l: T,
    m: T,
    dt: T,
    noise: &[T],
) -> Result<()> {
    if noise.len() != ensemble.len() {
        return Err(Error::domain("one Gaussian draw per particle is required"));
    }
    let vol = model.sigma * dt.sqrt();
    let step = ensemble.step_index;
    for i in 0..ensemble.len() {
        if !ensemble.alive[i] {
            continue;
        }
        let x = ensemble.positions[i];
        let u = profile.policy(i).action(t, x);
        let next = x + (u + model.drift_bar(t, x, l, m)) * dt + vol * noise[i];
        check_finite(next, step, i)?;
        ensemble.positions[i] = next;
    }
    ensemble.step_index += 1;
    Ok(())
}

#[inline]
fn check_finite<T: Scalar>(x: T, step: usize, player: usize) -> Result<()> {
    if !x.is_finite() || x.abs().as_f64() > BLOWUP_LIMIT {
        Err(Error::Blowup { step, player, value: x.as_f64() })
    } else {
        Ok(())
    }
}

/// Probability that a Brownian bridge from `x_prev` to `x_next` over `dt`
/// touches `threshold`; 1 when the endpoint is already absorbed.
pub fn bridge_absorption_prob<T: Scalar>(x_prev: T, x_next: T, threshold: T, sigma: T, dt: T) -> T {
    if x_next <= threshold || x_prev <= threshold {
        return T::one();
    }
    let a = x_prev - threshold;
    let b = x_next - threshold;
    (-(T::two() * a * b) / (sigma * sigma * dt)).exp()
}

struct StepCtx<'a, 'p, T> {
    model: &'a ModelSpec<T>,
    profile: Profile<'p, T>,
    seed: u64,
    k: usize,
    t: T,
    l: T,
    m: T,
    dt: T,
    vol: T,
    bridge: bool,
}

/// One particle, one step. Returns whether it was absorbed by the bridge test.
#[inline]
fn advance_one<T: Scalar>(
    ctx: &StepCtx<'_, '_, T>,
    i: usize,
    x: &mut T,
    tau: &mut T,
    sup: &mut T,
) -> Result<bool> {
    if !tau.is_infinite() {
        return Ok(false);
    }
    let model = ctx.model;
    let thr = model.threshold;
    let x0 = *x;
    let u = ctx.profile.policy(i).action(ctx.t, x0);
    let xi = T::lit(rng::normal(ctx.seed, i as u64, ctx.k as u64, LANE_BROWNIAN));
    let x1 = x0 + (u + model.drift_bar(ctx.t, x0, ctx.l, ctx.m)) * ctx.dt + ctx.vol * xi;
    check_finite(x1, ctx.k, i)?;
    let mut bridge_hit = false;
    let absorbed = if x1 <= thr {
        true
    } else if ctx.bridge {
        let p = bridge_absorption_prob(x0, x1, thr, model.sigma, ctx.dt);
        let draw = T::lit(rng::uniform(ctx.seed, i as u64, ctx.k as u64, LANE_BRIDGE));
        bridge_hit = draw < p;
        bridge_hit
    } else {
        false
    };
    if absorbed {
        *x = thr;
        *tau = ctx.t;
    } else {
        *x = x1;
    }
    *sup = sup.max(x.abs());
    Ok(bridge_hit)
}

/// Generic simulation loop; `coupling` supplies `(L, m)` at every grid time.
fn simulate_with<T: Scalar>(
    model: &ModelSpec<T>,
    profile: Profile<'_, T>,
    config: &SimConfig<T>,
    coupling: impl Fn(usize, T, &[T], &[T]) -> (T, T),
) -> Result<EmpiricalRecord<T>> {
    model.validate()?;
    let time = config.time_grid(model.horizon)?;
    if !profile.covers(config.n) {
        return Err(Error::precondition("profile has fewer policies than players"));
    }
    let n = config.n;
    let dt = time.dt();
    let initial = model.sample_initial(n, rng::derive_seed(config.seed, 0))?;
    let mut x = initial.clone();
    let mut tau = vec![T::infinity(); n];
    let mut sup: Vec<T> = x.iter().map(|v| v.abs()).collect();
    let mut paths = config.store_full_paths.then(|| {
        let mut p = Vec::with_capacity((time.steps + 1) * n);
        p.extend_from_slice(&x);
        p
    });
    let mut loss = Vec::with_capacity(time.len());
    let mut mean = Vec::with_capacity(time.len());
    let mut bridge_hits = 0usize;

    for k in 0..time.steps {
        let t = time.time(k);
        let (l, m) = coupling(k, t, &x, &tau);
        loss.push(l);
        mean.push(m);
        let ctx = StepCtx {
            model,
            profile,
            seed: config.seed,
            k,
            t,
            l,
            m,
            dt,
            vol: model.sigma * dt.sqrt(),
            bridge: config.bridge_correction,
        };
        let hits = if n >= PARALLEL_MIN {
            x.par_iter_mut()
                .zip(tau.par_iter_mut())
                .zip(sup.par_iter_mut())
                .enumerate()
                .map(|(i, ((xi, ti), si))| advance_one(&ctx, i, xi, ti, si).map(usize::from))
                .try_reduce(|| 0, |a, b| Ok(a + b))
        } else {
            x.iter_mut()
                .zip(tau.iter_mut())
                .zip(sup.iter_mut())
                .enumerate()
                .map(|(i, ((xi, ti), si))| advance_one(&ctx, i, xi, ti, si).map(usize::from))
                .sum::<Result<usize>>()
        };
        bridge_hits += hits.map_err(|e| e.context(format!("time step {k} (t = {t})")))?;
        if let Some(p) = paths.as_mut() {
            p.extend_from_slice(&x);
        }
    }
    let (l, m) = coupling(time.steps, time.horizon, &x, &tau);
    loss.push(l);
    mean.push(m);

    Ok(EmpiricalRecord {
        time,
        threshold: model.threshold,
        tau,
        paths,
        initial,
        terminal: x,
        sup_abs: sup,
        loss,
        mean,
        bridge_hits,
    })
}

/// Simulates the N-player game; `(L^N, m^N)` are recomputed from the ensemble at every step start.
pub fn simulate_nplayer<T: Scalar>(
    model: &ModelSpec<T>,
    profile: Profile<'_, T>,
    config: &SimConfig<T>,
) -> Result<EmpiricalRecord<T>> {
    let nf = T::from_usize_lossy(config.n);
    simulate_with(model, profile, config, |_, _, x, tau| {
        let mut dead = 0usize;
        let mut m = T::zero();
        for (xi, ti) in x.iter().zip(tau) {
            if ti.is_infinite() {
                m += model.weight(*xi);
            } else {
                dead += 1;
            }
        }
        (T::from_usize_lossy(dead) / nf, m / nf)
    })
}

/// Simulates `N` independent representative players whose coefficients read
/// `(L, m)` from `frozen`, interpolated linearly in time.
pub fn simulate_frozen<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    frozen: &SubProbFlow<T>,
    config: &SimConfig<T>,
) -> Result<EmpiricalRecord<T>> {
    let horizon_gap = (frozen.grids.time.horizon - model.horizon).abs();
    if horizon_gap > T::lit(1e-9) * model.horizon {
        return Err(Error::domain("frozen flow horizon differs from the model horizon"));
    }
    simulate_with(model, Profile::Shared(policy), config, |_, t, _, _| {
        (frozen.loss_at_time(t).max(T::zero()).min(T::one()), frozen.mean_at_time(t))
    })
}

/// Realised cost of `player`: trapezoidal running cost up to `tau ∧ T` plus the
/// terminal cost at the stopped state. Needs full paths.
pub fn path_cost<T: Scalar>(
    record: &EmpiricalRecord<T>,
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    player: usize,
) -> Result<T> {
    let paths = record
        .paths
        .as_ref()
        .ok_or_else(|| Error::precondition("path_cost needs a record with full paths"))?;
    let n = record.n();
    if player >= n {
        return Err(Error::domain(format!("player {player} out of range (N = {n})")));
    }
    let time = &record.time;
    let tau = record.tau[player];
    let exit = if tau.is_infinite() {
        time.steps
    } else {
        time.index_of(tau).ok_or_else(|| Error::domain("absorption time off the record grid"))?
    };
    let dt = time.dt();
    let integrand = |k: usize| {
        let t = time.time(k);
        let x = paths[k * n + player];
        let u = policy.action(t, x);
        model.running_cost(t, x, record.loss[k], record.mean[k], u)
    };
    let mut cost = T::zero();
    let mut prev = integrand(0);
    for k in 0..exit {
        let next = integrand(k + 1);
        cost += T::half() * dt * (prev + next);
        prev = next;
    }
    let (t_stop, x_stop) = if tau.is_infinite() {
        (time.horizon, paths[time.steps * n + player])
    } else {
        (tau, record.threshold)
    };
    Ok(cost + model.terminal(t_stop, x_stop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grids;
    use crate::model::{Drift, InitialLaw, RunningCost, TerminalCost};
    use crate::presets;

    fn policy(model: &ModelSpec<f64>, value: f64) -> FeedbackPolicy<f64> {
        let g = Grids::for_model(model, 0.01, 50, None).unwrap();
        FeedbackPolicy::constant(model, g, value)
    }

    #[test]
    fn identity_step() {
        let m = presets::brownian::<f64>();
        let p = policy(&m, 0.0);
        let mut e = ParticleEnsemble::new(vec![1.0, 2.0]);
        euler_step(&mut e, &m, Profile::Shared(&p), 0.0, 0.0, 0.0, 0.1, &[0.0, 0.0]).unwrap();
        assert_eq!(e.positions, vec![1.0, 2.0]);
    }

    #[test]
    fn deterministic_euler_step() {
        let m = presets::brownian::<f64>();
        let p = policy(&m, 0.5);
        let mut e = ParticleEnsemble::new(vec![1.0]);
        euler_step(&mut e, &m, Profile::Shared(&p), 0.0, 0.0, 0.0, 0.1, &[0.0]).unwrap();
        assert!((e.positions[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn dead_particles_stay_put() {
        let mut m = presets::brownian::<f64>();
        m.drift = Drift::Constant { value: 3.0 };
        let p = policy(&m, 1.0);
        let mut e = ParticleEnsemble::new(vec![0.0]);
        e.alive[0] = false;
        euler_step(&mut e, &m, Profile::Shared(&p), 0.0, 0.0, 0.0, 0.1, &[1.3]).unwrap();
        assert_eq!(e.positions[0], 0.0);
    }

    #[test]
    fn blowup_is_reported() {
        let mut m = presets::brownian::<f64>();
        m.drift = Drift::Constant { value: 1e9 };
        let p = policy(&m, 0.0);
        let mut e = ParticleEnsemble::new(vec![1.0]);
        let err = euler_step(&mut e, &m, Profile::Shared(&p), 0.0, 0.0, 0.0, 0.1, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Blowup { player: 0, .. }));
    }

    #[test]
    fn bridge_probability_examples() {
        assert_eq!(bridge_absorption_prob(0.5, -0.1, 0.0, 1.0, 0.01), 1.0);
        let p: f64 = bridge_absorption_prob(1.0, 1.0, 0.0, 1.0, 0.01);
        assert!((p - (-200.0f64).exp()).abs() < 1e-100);
        let p: f64 = bridge_absorption_prob(0.1, 0.1, 0.0, 1.0, 1.0);
        assert!((p - (-0.02f64).exp()).abs() < 1e-15);
        assert!((p - 0.9802).abs() < 1e-4);
    }

    #[test]
    fn far_from_boundary_never_absorbs() {
        let mut m = presets::brownian::<f64>();
        m.sigma = 1e-6;
        let p = policy(&m, 0.0);
        let r = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(1, 0.01, 3)).unwrap();
        assert!(r.tau[0].is_infinite());
    }

    #[test]
    fn same_seed_same_record() {
        let m = presets::weakly_coupled::<f64>();
        let p = policy(&m, 0.2);
        let cfg = SimConfig::new(3000, 0.01, 17).with_paths(true);
        let a = simulate_nplayer(&m, Profile::Shared(&p), &cfg).unwrap();
        let b = simulate_nplayer(&m, Profile::Shared(&p), &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| simulate_nplayer(&m, Profile::Shared(&p), &cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn frozen_zero_flow_matches_decoupled_nplayer() {
        let m = presets::decoupled::<f64>();
        let p = policy(&m, -0.3);
        let cfg = SimConfig::new(200, 0.01, 5).with_paths(true);
        let a = simulate_nplayer(&m, Profile::Shared(&p), &cfg).unwrap();
        let g = Grids::for_model(&m, 0.01, 50, None).unwrap();
        let mut zero = crate::measures::SubProbFlow::zeros(g);
        zero.loss.iter_mut().for_each(|l| *l = 0.0);
        let b = simulate_frozen(&m, &p, &zero, &cfg).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.tau, b.tau);
    }

    #[test]
    fn zero_policy_zero_drift_is_scaled_brownian() {
        let mut m = presets::brownian::<f64>();
        m.threshold = -1e3;
        m.sigma = 2.0;
        m.initial = InitialLaw::PointMass { at: 0.0 };
        let p = policy(&m, 0.0);
        let r = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(20_000, 0.01, 9)).unwrap();
        let n = r.terminal.len() as f64;
        let var = r.terminal.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 4.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn bridge_never_reduces_absorption() {
        let m = presets::brownian::<f64>();
        let p = policy(&m, 0.0);
        let with = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(4000, 0.01, 2)).unwrap();
        let without =
            simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(4000, 0.01, 2).with_bridge(false)).unwrap();
        for (a, b) in with.tau.iter().zip(&without.tau) {
            assert!(a <= b);
        }
        assert!(with.absorbed_fraction() > without.absorbed_fraction());
        assert!(with.bridge_hits > 0);
    }

    fn cost_model(run: f64, term: f64) -> ModelSpec<f64> {
        let mut m = presets::brownian::<f64>();
        m.running_cost = RunningCost::Constant { value: run };
        m.terminal_cost = TerminalCost::Constant { value: term };
        m
    }

    #[test]
    fn path_cost_examples() {
        let m = cost_model(0.0, 1.0);
        let p = policy(&m, 0.0);
        let r = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(50, 0.01, 1).with_paths(true)).unwrap();
        for i in 0..50 {
            assert!((path_cost(&r, &m, &p, i).unwrap() - 1.0).abs() < 1e-15);
        }

        let mut m = cost_model(1.0, 0.0);
        m.sigma = 1e-6;
        let r = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(1, 0.01, 1).with_paths(true)).unwrap();
        assert!((path_cost(&r, &m, &p, 0).unwrap() - 1.0).abs() < 1e-12);

        // force an exit at T/2 by hand
        let mut r = r.clone();
        let kh = 50;
        r.tau[0] = r.time.time(kh);
        assert!((path_cost(&r, &m, &p, 0).unwrap() - 0.5).abs() <= 0.01);
        let r0 = EmpiricalRecord { paths: None, ..r };
        assert!(matches!(path_cost(&r0, &m, &p, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn survivors_remain_for_the_brownian_benchmark() {
        let m = presets::brownian::<f64>();
        let p = policy(&m, 0.0);
        let r = simulate_nplayer(&m, Profile::Shared(&p), &SimConfig::new(1000, 0.01, 4)).unwrap();
        assert!(1.0 - r.absorbed_fraction() >= 1.0 / 1000.0);
        // no resurrection: every absorbed particle sits on the threshold
        for (x, t) in r.terminal.iter().zip(&r.tau) {
            if t.is_finite() {
                assert_eq!(*x, 0.0);
            }
        }
    }
}
