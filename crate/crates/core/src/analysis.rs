//! Monte Carlo diagnostics: cost estimates, Nash gaps, propagation-of-chaos
//! tables and rate fits, the mean-one check of the Girsanov density, and
//! sup-norm moment estimates across truncation levels.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grids;
use crate::measures::{flow_from_record, wasserstein1_samples_flow, SubProbFlow};
use crate::mfg::FixedPointReport;
use crate::model::{ModelSpec, TruncationSchedule};
use crate::particle::{path_cost, simulate_nplayer, Profile, SimConfig};
use crate::pde::{solve_hjb_with, FeedbackPolicy};
use crate::rng::{self, LANE_BROWNIAN};
use crate::scalar::Scalar;

/// Total number of particles the Nash-gap pilot simulates (split over replications of size N).
pub const PILOT_PARTICLES: usize = 50_000;

/// Paths whose `|log Z|` exceeds this are reported as overflowing.
pub const LOG_Z_LIMIT: f64 = 300.0;

/// Sample mean and standard error `std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
}

impl<T: Scalar> Estimate<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let n = xs.len();
        let nf = T::from_usize_lossy(n);
        let mean = xs.iter().copied().sum::<T>() / nf;
        if n < 2 {
            return Self { mean, se: T::zero() };
        }
        let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
        let var = ss / T::from_usize_lossy(n - 1);
        Self { mean, se: (var / nf).sqrt() }
    }
}

fn replication_seed(seed: u64, rep: usize) -> u64 {
    rng::derive_seed(seed, rep as u64)
}

/// Expected cost of `player` under `profile`, averaged over independent
/// replications; replication `r` uses `derive_seed(config.seed, r)`.
pub fn estimate_cost<T: Scalar>(
    model: &ModelSpec<T>,
    profile: Profile<'_, T>,
    player: usize,
    config: &SimConfig<T>,
    replications: usize,
) -> Result<Estimate<T>> {
    if replications < 2 {
        return Err(Error::precondition(format!("cost estimate needs >= 2 replications (got {replications})")));
    }
    if player >= config.n {
        return Err(Error::domain(format!("player {player} out of range (N = {})", config.n)));
    }
    let costs = (0..replications)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig { seed: replication_seed(config.seed, r), store_full_paths: true, ..*config };
            let record = simulate_nplayer(model, profile, &cfg)?;
            path_cost(&record, model, profile.policy(player), player)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(Estimate::from_samples(&costs))
}

/// One row of a Nash-gap curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NashGapRow<T> {
    pub n: usize,
    pub replications: usize,
    pub j_eq: T,
    pub j_eq_se: T,
    pub j_dev: T,
    pub j_dev_se: T,
    /// `J_eq − J_dev`, signed.
    pub gap: T,
    /// Standard error of the paired differences.
    pub gap_se: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashGapCurve<T> {
    pub rows: Vec<NashGapRow<T>>,
}

impl<T: Scalar> NashGapCurve<T> {
    pub const HEADER: &'static str = "N,j_eq,j_eq_se,j_dev,j_dev_se,gap,gap_se";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n, r.j_eq, r.j_eq_se, r.j_dev, r.j_dev_se, r.gap, r.gap_se
            ));
        }
        out
    }
}

/// Mean flow of the N−1 co-players of one player, from independent N-player
/// runs on `grids`.
///
/// Densities come from the survivor histograms. The traces are the averaged
/// `(L^N, m^N)` that the coefficients read during the runs, scaled by
/// `(N−1)/N`: averaged over the choice of the left-out player this removes
/// its own share exactly. (The histogram traces count a particle as dead from
/// the start of its exit step, one step earlier than the coupling does.)
fn pilot_flow<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    n: usize,
    grids: Grids<T>,
    seed: u64,
) -> Result<SubProbFlow<T>> {
    let reps = PILOT_PARTICLES.div_ceil(n).max(1);
    let flows = (0..reps)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig::new(n, grids.time.dt(), rng::derive_seed(seed, r as u64)).with_paths(true);
            let record = simulate_nplayer(model, Profile::Shared(policy), &cfg)?;
            let mut flow = flow_from_record(&record, grids, &model.weight)?.flow;
            let co = T::from_usize_lossy(n - 1) / T::from_usize_lossy(n);
            for (dst, src) in flow.loss.iter_mut().zip(&record.loss) {
                *dst = *src * co;
            }
            for (dst, src) in flow.mean.iter_mut().zip(&record.mean) {
                *dst = *src * co;
            }
            Ok(flow)
        })
        .collect::<Result<Vec<SubProbFlow<T>>>>()?;
    let mut mean = flows[0].clone();
    for (i, f) in flows.iter().enumerate().skip(1) {
        mean = mean.blend(f, T::one() / T::from_usize_lossy(i + 1))?;
    }
    Ok(mean)
}

/// Gap between the cost of player 0 under the MFG policy and under a best
/// response to the pilot-estimated flow of its N−1 co-players on that policy
/// (its own `w(x)/N` share of `m` included). Equilibrium and deviation runs of
/// replication `r` share all noise.
pub fn nash_gap<T: Scalar>(
    model: &ModelSpec<T>,
    report: &FixedPointReport<T>,
    n: usize,
    replications: usize,
    hjb_grids: Grids<T>,
    seed: u64,
) -> Result<NashGapRow<T>> {
    if !report.converged {
        return Err(Error::precondition("nash_gap needs the policy of a converged fixed point"));
    }
    if replications < 2 {
        return Err(Error::precondition(format!("nash_gap needs >= 2 replications (got {replications})")));
    }
    if n < 2 {
        return Err(Error::precondition("nash_gap needs N >= 2"));
    }
    let model = match report.truncation_level_history.last() {
        Some(&k) => model.truncate(k)?,
        None => model.clone(),
    };
    let mfg_policy = &report.final_policy;
    let pilot = pilot_flow(&model, mfg_policy, n, hjb_grids, rng::derive_seed(seed, u64::MAX - 1))
        .map_err(|e| e.context(format!("nash-gap pilot at N = {n}")))?;
    let own = T::one() / T::from_usize_lossy(n);
    let (_, deviation) =
        solve_hjb_with(&model, &pilot, hjb_grids, own).map_err(|e| e.context("deviation best response"))?;

    let eq = Profile::Shared(mfg_policy);
    let dev = Profile::FirstDeviates { first: &deviation, others: mfg_policy };
    let pairs = (0..replications)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig::new(n, hjb_grids.time.dt(), replication_seed(seed, r)).with_paths(true);
            let a = simulate_nplayer(&model, eq, &cfg)?;
            let b = simulate_nplayer(&model, dev, &cfg)?;
            Ok((path_cost(&a, &model, mfg_policy, 0)?, path_cost(&b, &model, &deviation, 0)?))
        })
        .collect::<Result<Vec<(T, T)>>>()?;
    let j_eq: Vec<T> = pairs.iter().map(|p| p.0).collect();
    let j_dev: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<T> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (e, d, g) = (Estimate::from_samples(&j_eq), Estimate::from_samples(&j_dev), Estimate::from_samples(&diff));
    Ok(NashGapRow {
        n,
        replications,
        j_eq: e.mean,
        j_eq_se: e.se,
        j_dev: d.mean,
        j_dev_se: d.se,
        gap: g.mean,
        gap_se: g.se,
    })
}

/// One row of a propagation-of-chaos table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosRow<T> {
    pub n: usize,
    pub replications: usize,
    /// Mean over non-extinct replications.
    pub w1_mean: T,
    pub w1_se: T,
    pub mass_gap_mean: T,
    /// Replications in which every player was absorbed.
    pub extinct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosTable<T> {
    pub rows: Vec<ChaosRow<T>>,
}

impl<T: Scalar> ChaosTable<T> {
    pub const HEADER: &'static str = "N,reps,w1_mean,w1_se,massgap_mean";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.n, r.replications, r.w1_mean, r.w1_se, r.mass_gap_mean));
        }
        out
    }
}

/// W₁ at the horizon between the survivors of N-player runs and the
/// conditional law of `theta_star`, for each `N` in `n_list`.
///
/// The particles use step `dt`; `theta_star` is only read at its last row.
#[allow(clippy::too_many_arguments)]
pub fn chaos_study<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    theta_star: &SubProbFlow<T>,
    n_list: &[usize],
    replications: usize,
    dt: T,
    seed: u64,
) -> Result<ChaosTable<T>> {
    if replications == 0 {
        return Err(Error::precondition("chaos study needs >= 1 replication"));
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::precondition("N list must be non-empty, positive and strictly increasing"));
    }
    let kmax = theta_star.grids.time.steps;
    let target_mass = theta_star.survivor_mass[kmax];
    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let per_rep = (0..replications)
            .into_par_iter()
            .map(|r| {
                let s = rng::derive_seed(rng::derive_seed(seed, ni as u64), r as u64);
                let record = simulate_nplayer(model, Profile::Shared(policy), &SimConfig::new(n, dt, s))?;
                let survivors = record.survivors_at_horizon();
                let mass = T::from_usize_lossy(survivors.len()) / T::from_usize_lossy(n);
                let gap = (mass - target_mass).abs();
                if survivors.is_empty() {
                    Ok((None, gap))
                } else {
                    Ok((Some(wasserstein1_samples_flow(&survivors, theta_star, kmax)?), gap))
                }
            })
            .collect::<Result<Vec<(Option<T>, T)>>>()
            .map_err(|e| e.context(format!("chaos study at N = {n}")))?;
        let w1s: Vec<T> = per_rep.iter().filter_map(|p| p.0).collect();
        let gaps: Vec<T> = per_rep.iter().map(|p| p.1).collect();
        let w1 = if w1s.is_empty() { Estimate { mean: T::nan(), se: T::nan() } } else { Estimate::from_samples(&w1s) };
        rows.push(ChaosRow {
            n,
            replications,
            w1_mean: w1.mean,
            w1_se: w1.se,
            mass_gap_mean: Estimate::from_samples(&gaps).mean,
            extinct: replications - w1s.len(),
        });
    }
    Ok(ChaosTable { rows })
}

/// Least-squares line through `(log N, log w1_mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_rate<T: Scalar>(table: &ChaosTable<T>) -> Result<RateFit> {
    if table.rows.len() < 3 {
        return Err(Error::precondition(format!("rate fit needs >= 3 rows (got {})", table.rows.len())));
    }
    let pts: Vec<(f64, f64)> =
        table.rows.iter().map(|r| ((r.n as f64).ln(), r.w1_mean.as_f64().ln())).collect();
    if pts.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::domain("rate fit needs positive finite W1 means"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // a constant column is fitted exactly
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { slope, intercept, r2 })
}

/// Sample mean of the stochastic exponential at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleCheck<T> {
    pub mean: T,
    pub se: T,
    /// Paths with `|log Z_T| > 300`, excluded from the mean.
    pub overflowed: usize,
    pub paths: usize,
}

/// Simulates `X = ξ + σW` on the time grid of `flow` and accumulates
/// `Z_T = exp(Σ θ_k ΔW_k − ½ Σ θ_k² Δt)` with `θ = σ⁻¹(u + b̄)` read at the
/// left end of each step and `(L, m)` from `flow`.
pub fn martingale_check<T: Scalar>(
    model: &ModelSpec<T>,
    policy: &FeedbackPolicy<T>,
    flow: &SubProbFlow<T>,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleCheck<T>> {
    if n_paths < 1000 {
        return Err(Error::precondition(format!("martingale check needs >= 1000 paths (got {n_paths})")));
    }
    model.validate()?;
    let time = flow.grids.time;
    let dt = time.dt().as_f64();
    let sdt = dt.sqrt();
    let sigma = model.sigma.as_f64();
    let xi = model.sample_initial(n_paths, rng::derive_seed(seed, 0))?;
    let log_z: Vec<f64> = xi
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| {
            let mut x = x0.as_f64();
            let mut acc = 0.0;
            for k in 0..time.steps {
                let t = time.time(k);
                let xt = T::lit(x);
                let drift = policy.action(t, xt) + model.drift_bar(t, xt, flow.loss[k], flow.mean[k]);
                let theta = drift.as_f64() / sigma;
                let dw = sdt * rng::normal(seed, i as u64, k as u64, LANE_BROWNIAN);
                acc += theta * dw - 0.5 * theta * theta * dt;
                x += sigma * dw;
            }
            acc
        })
        .collect();
    let kept: Vec<T> = log_z.iter().filter(|l| l.abs() <= LOG_Z_LIMIT).map(|l| T::lit(l.exp())).collect();
    if kept.is_empty() {
        return Err(Error::solver("every stochastic exponential overflowed"));
    }
    let e = Estimate::from_samples(&kept);
    Ok(MartingaleCheck { mean: e.mean, se: e.se, overflowed: n_paths - kept.len(), paths: n_paths })
}

/// `E[sup_t |X_t|^α]` at one truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow<T> {
    pub level: T,
    pub alpha: u32,
    pub estimate: T,
    pub se: T,
    /// The level exceeds every coefficient value met on the observed state range.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport<T> {
    pub rows: Vec<MomentRow<T>>,
    /// `(α, max over levels)`.
    pub max_over_levels: Vec<(u32, T)>,
}

impl<T: Scalar> MomentReport<T> {
    pub fn rows_for(&self, alpha: u32) -> impl Iterator<Item = &MomentRow<T>> {
        self.rows.iter().filter(move |r| r.alpha == alpha)
    }
}

/// Sup-norm moments of the N-player system (`n_paths` players, stopped at
/// absorption) at every level of `schedule`, all runs sharing `seed`.
/// Without a policy the players use the uncontrolled action.
pub fn moment_check<T: Scalar>(
    model: &ModelSpec<T>,
    policy: Option<&FeedbackPolicy<T>>,
    schedule: &TruncationSchedule<T>,
    alphas: &[u32],
    n_paths: usize,
    dt: T,
    seed: u64,
) -> Result<MomentReport<T>> {
    if alphas.is_empty() || alphas.iter().any(|a| ![1, 2, 4].contains(a)) {
        return Err(Error::precondition("moment orders must be drawn from {1, 2, 4}"));
    }
    let grids = Grids::for_model(model, dt, 8, None)?;
    let fallback = FeedbackPolicy::uncontrolled(model, grids);
    let policy = policy.unwrap_or(&fallback);
    let mut rows = Vec::new();
    for &level in schedule.levels() {
        let truncated = model.truncate(level)?;
        let record = simulate_nplayer(&truncated, Profile::Shared(policy), &SimConfig::new(n_paths, dt, seed))
            .map_err(|e| e.context(format!("moment check at level {level}")))?;
        let reach = record.sup_abs.iter().fold(T::zero(), |a, &b| a.max(b));
        let lo = model.threshold.max(-reach);
        let m_abs = T::lit(1.0).max(reach.abs());
        let saturated = level >= model.coefficient_range(lo, reach, m_abs);
        for &alpha in alphas {
            let xs: Vec<T> = record.sup_abs.iter().map(|s| s.powi(alpha as i32)).collect();
            let e = Estimate::from_samples(&xs);
            rows.push(MomentRow { level, alpha, estimate: e.mean, se: e.se, saturated });
        }
    }
    let max_over_levels = alphas
        .iter()
        .map(|&a| {
            let m = rows.iter().filter(|r| r.alpha == a).fold(T::zero(), |acc, r| acc.max(r.estimate));
            (a, m)
        })
        .collect();
    Ok(MomentReport { rows, max_over_levels })
}
