//! Game coefficients, standing-assumption probes and truncation.
//!
//! Coefficients come from a closed catalog of parametric families so that a
//! model is plain data: it can be serialized, compared, and its growth and
//! Lipschitz declarations can be probed.
//!
//! State space is one-dimensional with absorbing set `(-inf, threshold]`, i.e.
//! players live in `O = (threshold, inf)` until their first exit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::CounterStream;
use crate::scalar::{clamp_magnitude, normal_cdf, Scalar};

/// Mean-field drift `b̄(t, x, l, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Drift<T> {
    Zero,
    Constant { value: T },
    /// `intercept + slope·x + loss·l + mean·m`
    Linear { slope: T, intercept: T, loss: T, mean: T },
    /// `rate·(target − x) + loss·l + mean·m`
    OuPull { rate: T, target: T, loss: T, mean: T },
    /// `amplitude·tanh((target − x)/scale) + loss·l + mean·m`
    Saturating { amplitude: T, scale: T, target: T, loss: T, mean: T },
    /// `coef·x²`; violates sub-linear growth, kept for probing.
    Quadratic { coef: T },
}

impl<T: Scalar> Drift<T> {
    pub fn eval(&self, _t: T, x: T, l: T, m: T) -> T {
        match *self {
            Drift::Zero => T::zero(),
            Drift::Constant { value } => value,
            Drift::Linear { slope, intercept, loss, mean } => intercept + slope * x + loss * l + mean * m,
            Drift::OuPull { rate, target, loss, mean } => rate * (target - x) + loss * l + mean * m,
            Drift::Saturating { amplitude, scale, target, loss, mean } => {
                amplitude * ((target - x) / scale).tanh() + loss * l + mean * m
            }
            Drift::Quadratic { coef } => coef * x * x,
        }
    }

    /// True when the drift ignores `(l, m)`.
    pub fn is_decoupled(&self) -> bool {
        match *self {
            Drift::Zero | Drift::Constant { .. } | Drift::Quadratic { .. } => true,
            Drift::Linear { loss, mean, .. }
            | Drift::OuPull { loss, mean, .. }
            | Drift::Saturating { loss, mean, .. } => loss == T::zero() && mean == T::zero(),
        }
    }
}

/// Control part of the running cost, `f₀(t, x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ControlCost<T> {
    Zero,
    /// `coef·u²`
    Quadratic { coef: T },
    /// `coef·|u|`
    Absolute { coef: T },
}

impl<T: Scalar> ControlCost<T> {
    pub fn eval(&self, _t: T, _x: T, u: T) -> T {
        match *self {
            ControlCost::Zero => T::zero(),
            ControlCost::Quadratic { coef } => coef * u * u,
            ControlCost::Absolute { coef } => coef * u.abs(),
        }
    }
}

/// Mean-field part of the running cost, `f̄(t, x, l, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RunningCost<T> {
    Zero,
    Constant { value: T },
    /// `intercept + state·x + loss·l + mean·m`
    Linear { state: T, intercept: T, loss: T, mean: T },
    /// `coef·|x − target| + loss·l + mean·m`
    Deviation { coef: T, target: T, loss: T, mean: T },
    /// `coef·x²`; linear-quadratic benchmarks only.
    QuadraticState { coef: T },
}

impl<T: Scalar> RunningCost<T> {
    pub fn eval(&self, _t: T, x: T, l: T, m: T) -> T {
        match *self {
            RunningCost::Zero => T::zero(),
            RunningCost::Constant { value } => value,
            RunningCost::Linear { state, intercept, loss, mean } => intercept + state * x + loss * l + mean * m,
            RunningCost::Deviation { coef, target, loss, mean } => coef * (x - target).abs() + loss * l + mean * m,
            RunningCost::QuadraticState { coef } => coef * x * x,
        }
    }

    pub fn is_decoupled(&self) -> bool {
        match *self {
            RunningCost::Zero | RunningCost::Constant { .. } | RunningCost::QuadraticState { .. } => true,
            RunningCost::Linear { loss, mean, .. } | RunningCost::Deviation { loss, mean, .. } => {
                loss == T::zero() && mean == T::zero()
            }
        }
    }
}

/// Terminal (and exit) cost `F(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalCost<T> {
    Zero,
    Constant { value: T },
    /// `intercept + slope·x`
    Linear { slope: T, intercept: T },
    /// `coef·|x − target|`
    Deviation { coef: T, target: T },
    /// `coef·x²`
    Quadratic { coef: T },
}

impl<T: Scalar> TerminalCost<T> {
    pub fn eval(&self, _t: T, x: T) -> T {
        match *self {
            TerminalCost::Zero => T::zero(),
            TerminalCost::Constant { value } => value,
            TerminalCost::Linear { slope, intercept } => intercept + slope * x,
            TerminalCost::Deviation { coef, target } => coef * (x - target).abs(),
            TerminalCost::Quadratic { coef } => coef * x * x,
        }
    }
}

/// Mean-field weight `w(x)`; the empirical average process is `∫ w dμ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Weight<T> {
    Zero,
    Constant { value: T },
    /// `intercept + slope·x`
    Linear { slope: T, intercept: T },
    /// `amplitude·tanh(x/scale)`
    Saturating { amplitude: T, scale: T },
    Quadratic { coef: T },
}

impl<T: Scalar> Weight<T> {
    pub fn identity() -> Self {
        Weight::Linear { slope: T::one(), intercept: T::zero() }
    }

    pub fn eval(&self, x: T) -> T {
        match *self {
            Weight::Zero => T::zero(),
            Weight::Constant { value } => value,
            Weight::Linear { slope, intercept } => intercept + slope * x,
            Weight::Saturating { amplitude, scale } => amplitude * (x / scale).tanh(),
            Weight::Quadratic { coef } => coef * x * x,
        }
    }
}

/// Initial law ν. Only sub-Gaussian families are offered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw<T> {
    PointMass { at: T },
    Uniform { low: T, high: T },
    /// Gaussian conditioned on `[low, high]`.
    TruncatedGaussian { mean: T, sd: T, low: T, high: T },
}

impl<T: Scalar> InitialLaw<T> {
    /// Closed support `[inf, sup]`.
    pub fn support(&self) -> (T, T) {
        match *self {
            InitialLaw::PointMass { at } => (at, at),
            InitialLaw::Uniform { low, high } => (low, high),
            InitialLaw::TruncatedGaussian { low, high, .. } => (low, high),
        }
    }

    /// CDF of ν evaluated in `f64`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            InitialLaw::PointMass { at } => {
                if x >= at.as_f64() {
                    1.0
                } else {
                    0.0
                }
            }
            InitialLaw::Uniform { low, high } => ((x - low.as_f64()) / (high.as_f64() - low.as_f64())).clamp(0.0, 1.0),
            InitialLaw::TruncatedGaussian { mean, sd, low, high } => {
                let (mu, s) = (mean.as_f64(), sd.as_f64());
                let a = normal_cdf((low.as_f64() - mu) / s);
                let b = normal_cdf((high.as_f64() - mu) / s);
                let xc = x.clamp(low.as_f64(), high.as_f64());
                ((normal_cdf((xc - mu) / s) - a) / (b - a)).clamp(0.0, 1.0)
            }
        }
    }

    fn validate(&self, threshold: T) -> Result<()> {
        match *self {
            InitialLaw::PointMass { at } => {
                if !at.is_finite() {
                    return Err(Error::config("point mass location must be finite"));
                }
            }
            InitialLaw::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::config("uniform law requires finite low < high"));
                }
            }
            InitialLaw::TruncatedGaussian { mean, sd, low, high } => {
                if !(sd > T::zero()) || !mean.is_finite() {
                    return Err(Error::config("truncated gaussian requires sd > 0 and a finite mean"));
                }
                if !(low < high) || !high.is_finite() {
                    return Err(Error::config("truncated gaussian requires low < high with finite high"));
                }
                let (mu, s) = (mean.as_f64(), sd.as_f64());
                if normal_cdf((high.as_f64() - mu) / s) - normal_cdf((low.as_f64() - mu) / s) <= 1e-300 {
                    return Err(Error::config("truncated gaussian has no mass on [low, high]"));
                }
            }
        }
        let (inf, _) = self.support();
        if !(inf > threshold) {
            return Err(Error::config(format!(
                "initial law puts mass at or below the absorbing threshold {threshold} (support starts at {inf})"
            )));
        }
        Ok(())
    }
}

/// Compact action set `Γ = [min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSet<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> ActionSet<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, u: T) -> bool {
        u >= self.min && u <= self.max
    }

    pub fn clamp(&self, u: T) -> T {
        u.max(self.min).min(self.max)
    }

    pub fn midpoint(&self) -> T {
        (self.min + self.max) * T::half()
    }

    pub fn width(&self) -> T {
        self.max - self.min
    }
}

/// All coefficients of the game together with the user's growth and Lipschitz declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    pub drift: Drift<T>,
    pub control_cost: ControlCost<T>,
    pub running_cost: RunningCost<T>,
    pub terminal_cost: TerminalCost<T>,
    pub weight: Weight<T>,
    pub sigma: T,
    pub actions: ActionSet<T>,
    pub horizon: T,
    pub initial: InitialLaw<T>,
    pub threshold: T,
    pub growth_c: T,
    pub lipschitz_l: T,
    /// Active truncation level, if any. Applies to `w, b̄, f̄, F`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<T>,
}

/// Output of [`ModelSpec::eval_coefficients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients<T> {
    pub drift_total: T,
    pub running_cost: T,
}

impl<T: Scalar> ModelSpec<T> {
    /// Checks the structural invariants of the model.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be > 0 (got {})", self.sigma)));
        }
        if !(self.actions.min < self.actions.max) || !self.actions.min.is_finite() || !self.actions.max.is_finite() {
            return Err(Error::config(format!(
                "action set requires finite u_min < u_max (got [{}, {}])",
                self.actions.min, self.actions.max
            )));
        }
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::config(format!("horizon must be > 0 (got {})", self.horizon)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::config("threshold must be finite"));
        }
        if !(self.growth_c > T::zero()) {
            return Err(Error::config(format!("growth constant C must be > 0 (got {})", self.growth_c)));
        }
        if !(self.lipschitz_l > T::zero()) {
            return Err(Error::config(format!("Lipschitz constant L must be > 0 (got {})", self.lipschitz_l)));
        }
        if let Some(k) = self.truncation {
            if !(k > T::zero()) {
                return Err(Error::config(format!("truncation level must be > 0 (got {k})")));
            }
        }
        self.initial.validate(self.threshold)
    }

    #[inline]
    fn trunc(&self, v: T) -> T {
        match self.truncation {
            Some(k) => clamp_magnitude(v, k),
            None => v,
        }
    }

    /// `b̄(t, x, l, m)` after truncation.
    #[inline]
    pub fn drift_bar(&self, t: T, x: T, l: T, m: T) -> T {
        self.trunc(self.drift.eval(t, x, l, m))
    }

    #[inline]
    pub fn control_cost(&self, t: T, x: T, u: T) -> T {
        self.control_cost.eval(t, x, u)
    }

    /// `f̄(t, x, l, m)` after truncation.
    #[inline]
    pub fn running_cost_bar(&self, t: T, x: T, l: T, m: T) -> T {
        self.trunc(self.running_cost.eval(t, x, l, m))
    }

    /// `F(t, x)` after truncation.
    #[inline]
    pub fn terminal(&self, t: T, x: T) -> T {
        self.trunc(self.terminal_cost.eval(t, x))
    }

    /// `w(x)` after truncation.
    #[inline]
    pub fn weight(&self, x: T) -> T {
        self.trunc(self.weight.eval(x))
    }

    /// Total running cost `f₀ + f̄` without argument checks.
    #[inline]
    pub fn running_cost(&self, t: T, x: T, l: T, m: T, u: T) -> T {
        self.control_cost(t, x, u) + self.running_cost_bar(t, x, l, m)
    }

    /// Drift `u + b̄(t, x, l, m)` and running cost `f₀(t, x, u) + f̄(t, x, l, m)`.
    pub fn eval_coefficients(&self, t: T, x: T, l: T, m: T, u: T) -> Result<Coefficients<T>> {
        if !(l >= T::zero() && l <= T::one()) {
            return Err(Error::domain(format!("loss {l} outside [0, 1]")));
        }
        if !self.actions.contains(u) {
            return Err(Error::domain(format!(
                "action {u} outside [{}, {}]",
                self.actions.min, self.actions.max
            )));
        }
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let drift_total = u + self.drift_bar(t, x, l, m);
        let running_cost = self.running_cost(t, x, l, m, u);
        if !drift_total.is_finite() || !running_cost.is_finite() {
            return Err(Error::domain("coefficients are not finite at this point"));
        }
        Ok(Coefficients { drift_total, running_cost })
    }

    /// True when neither the drift nor the running cost reads `(l, m)`.
    pub fn is_decoupled(&self) -> bool {
        self.drift.is_decoupled() && self.running_cost.is_decoupled()
    }

    /// Same model with `w, b̄, f̄, F` clamped in magnitude at `level`.
    ///
    /// Truncating an already truncated model keeps the tighter level, so the
    /// operation is idempotent and monotone in the level.
    pub fn truncate(&self, level: T) -> Result<ModelSpec<T>> {
        if !(level > T::zero()) || level.is_nan() {
            return Err(Error::domain(format!("truncation level must be > 0 (got {level})")));
        }
        let mut out = self.clone();
        out.truncation = Some(match self.truncation {
            Some(k) => k.min(level),
            None => level,
        });
        Ok(out)
    }

    /// Draws `count` i.i.d. states from ν. Draw `i` depends only on `(seed, i)`.
    pub fn sample_initial(&self, count: usize, seed: u64) -> Result<Vec<T>> {
        if count == 0 {
            return Err(Error::precondition("sample count must be >= 1"));
        }
        self.initial.validate(self.threshold)?;
        let draws: Vec<T> = match self.initial {
            InitialLaw::PointMass { at } => vec![at; count],
            InitialLaw::Uniform { low, high } => (0..count)
                .map(|i| {
                    let u = CounterStream::new(seed, i as u64).next_uniform();
                    low + (high - low) * T::lit(u)
                })
                .collect(),
            InitialLaw::TruncatedGaussian { mean, sd, low, high } => {
                let (mu, s) = (mean.as_f64(), sd.as_f64());
                let std = Normal::standard();
                let a = normal_cdf((low.as_f64() - mu) / s);
                let b = normal_cdf((high.as_f64() - mu) / s);
                (0..count)
                    .map(|i| {
                        let u = CounterStream::new(seed, i as u64).next_uniform();
                        let z = std.inverse_cdf(a + (b - a) * u);
                        let x = (mu + s * z).clamp(low.as_f64(), high.as_f64());
                        T::lit(x)
                    })
                    .collect()
            }
        };
        // rounding in the inverse CDF can land on the lower edge
        let floor = self.threshold;
        Ok(draws
            .into_iter()
            .map(|x| if x > floor { x } else { floor + T::epsilon() * (T::one() + floor.abs()) })
            .collect())
    }

    /// Largest magnitude of `b̄, f̄, F, w` (untruncated) over the box
    /// `x ∈ [x_lo, x_hi]`, `l ∈ [0, 1]`, `m ∈ [−m_abs, m_abs]`, on a probe lattice.
    pub fn coefficient_range(&self, x_lo: T, x_hi: T, m_abs: T) -> T {
        let nx = 64usize;
        let mut worst = T::zero();
        let ts = [T::zero(), self.horizon * T::half(), self.horizon];
        let ls = [T::zero(), T::half(), T::one()];
        let ms = [-m_abs, T::zero(), m_abs];
        for ix in 0..=nx {
            let x = x_lo + (x_hi - x_lo) * T::from_usize_lossy(ix) / T::from_usize_lossy(nx);
            worst = worst.max(self.weight.eval(x).abs());
            for &t in &ts {
                worst = worst.max(self.terminal_cost.eval(t, x).abs());
                for &l in &ls {
                    for &m in &ms {
                        worst = worst.max(self.drift.eval(t, x, l, m).abs());
                        worst = worst.max(self.running_cost.eval(t, x, l, m).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Compact box on which the standing assumptions are probed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRegion<T> {
    pub x_min: T,
    pub x_max: T,
    pub m_min: T,
    pub m_max: T,
}

impl<T: Scalar> Default for ProbeRegion<T> {
    fn default() -> Self {
        Self { x_min: T::lit(-20.0), x_max: T::lit(20.0), m_min: T::lit(-5.0), m_max: T::lit(5.0) }
    }
}

/// Result of one probed inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    /// Largest observed `lhs / rhs`; the check passes when it is `<= limit`.
    pub worst_ratio: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport<T> {
    pub region: ProbeRegion<T>,
    pub probes: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl<T> AssumptionReport<T> {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_DRIFT_GROWTH: &str = "drift sub-linear growth";
pub const CHECK_RUNNING_GROWTH: &str = "running cost sub-linear growth";
pub const CHECK_TERMINAL_GROWTH: &str = "terminal cost sub-linear growth";
pub const CHECK_WEIGHT_GROWTH: &str = "weight sub-linear growth";
pub const CHECK_CONTROL_BOUNDED: &str = "control cost bounded";
pub const CHECK_COST_NONNEGATIVE: &str = "costs nonnegative";
pub const CHECK_DRIFT_LIP_X: &str = "drift Lipschitz in x";
pub const CHECK_DRIFT_LIP_L: &str = "drift Lipschitz in loss";
pub const CHECK_DRIFT_LIP_M: &str = "drift Lipschitz in mean";

/// Slack granted to finite-difference Lipschitz ratios.
pub const LIPSCHITZ_SLACK: f64 = 1.05;

/// Probes growth, boundedness, sign and Lipschitz declarations on stratified
/// samples of `region`. Violations are reported, never raised.
pub fn check_assumptions<T: Scalar>(
    model: &ModelSpec<T>,
    probe_count: usize,
    seed: u64,
    region: ProbeRegion<T>,
) -> Result<AssumptionReport<T>> {
    if probe_count < 100 {
        return Err(Error::precondition(format!("probe_count must be >= 100 (got {probe_count})")));
    }
    let c = model.growth_c.as_f64();
    let lip = model.lipschitz_l.as_f64();
    let (x0, x1) = (region.x_min.as_f64(), region.x_max.as_f64());
    let (m0, m1) = (region.m_min.as_f64(), region.m_max.as_f64());
    let horizon = model.horizon.as_f64();
    let (u0, u1) = (model.actions.min.as_f64(), model.actions.max.as_f64());

    let mut worst = [0.0f64; 9];
    let mut min_cost = f64::INFINITY;
    let n = probe_count as f64;
    for i in 0..probe_count {
        let mut s = CounterStream::new(seed, i as u64);
        // x stratified, remaining coordinates plain uniform
        let x = x0 + (x1 - x0) * ((i as f64 + s.next_uniform()) / n);
        let t = horizon * s.next_uniform();
        let l = s.next_uniform();
        let m = m0 + (m1 - m0) * s.next_uniform();
        let u = u0 + (u1 - u0) * s.next_uniform();
        let (tt, xt, lt, mt, ut) = (T::lit(t), T::lit(x), T::lit(l), T::lit(m), T::lit(u));

        let b = model.drift_bar(tt, xt, lt, mt).as_f64();
        let fbar = model.running_cost_bar(tt, xt, lt, mt).as_f64();
        let f0 = model.control_cost(tt, xt, ut).as_f64();
        let big_f = model.terminal(tt, xt).as_f64();
        let w = model.weight(xt).as_f64();
        let lin_xm = c * (1.0 + x.abs() + m.abs());
        let lin_x = c * (1.0 + x.abs());
        worst[0] = worst[0].max(b.abs() / lin_xm);
        worst[1] = worst[1].max(fbar.abs() / lin_xm);
        worst[2] = worst[2].max(big_f.abs() / lin_x);
        worst[3] = worst[3].max(w.abs() / lin_x);
        worst[4] = worst[4].max(f0.abs() / c);
        min_cost = min_cost.min(fbar).min(f0).min(big_f);

        let h = 1e-4;
        let dbx = (model.drift_bar(tt, T::lit(x + h), lt, mt).as_f64() - b).abs() / h;
        let lp = if l + h <= 1.0 { l + h } else { l - h };
        let dbl = (model.drift_bar(tt, xt, T::lit(lp), mt).as_f64() - b).abs() / h;
        let dbm = (model.drift_bar(tt, xt, lt, T::lit(m + h)).as_f64() - b).abs() / h;
        worst[6] = worst[6].max(dbx / lip);
        worst[7] = worst[7].max(dbl / lip);
        worst[8] = worst[8].max(dbm / lip);
    }
    worst[5] = if min_cost < 0.0 { -min_cost } else { 0.0 };

    let names = [
        CHECK_DRIFT_GROWTH,
        CHECK_RUNNING_GROWTH,
        CHECK_TERMINAL_GROWTH,
        CHECK_WEIGHT_GROWTH,
        CHECK_CONTROL_BOUNDED,
        CHECK_COST_NONNEGATIVE,
        CHECK_DRIFT_LIP_X,
        CHECK_DRIFT_LIP_L,
        CHECK_DRIFT_LIP_M,
    ];
    let limits = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, LIPSCHITZ_SLACK, LIPSCHITZ_SLACK, LIPSCHITZ_SLACK];
    let checks = names
        .iter()
        .zip(worst.iter())
        .zip(limits.iter())
        .map(|((&name, &ratio), &limit)| AssumptionCheck { name, worst_ratio: ratio, limit, pass: ratio <= limit })
        .collect();
    Ok(AssumptionReport { region, probes: probe_count, checks })
}

/// Strictly increasing positive truncation levels `K_1 < K_2 < …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSchedule<T> {
    levels: Vec<T>,
}

impl<T: Scalar> TruncationSchedule<T> {
    pub fn new(levels: Vec<T>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("truncation schedule needs at least one level"));
        }
        if levels.iter().any(|k| !(*k > T::zero()) || !k.is_finite()) {
            return Err(Error::config("truncation levels must be finite and positive"));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("truncation levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// `K_n = 2^n · K_1`, `n = 0..count`.
    pub fn geometric(first: T, count: usize) -> Result<Self> {
        let mut levels = Vec::with_capacity(count);
        let mut k = first;
        for _ in 0..count {
            levels.push(k);
            k = k * T::two();
        }
        Self::new(levels)
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn base() -> ModelSpec<f64> {
        presets::brownian()
    }

    #[test]
    fn eval_zero_drift() {
        let m = base();
        let c = m.eval_coefficients(0.1, 1.0, 0.0, 0.0, 0.3).unwrap();
        assert_eq!(c.drift_total, 0.3);
    }

    #[test]
    fn eval_ou_pull() {
        let mut m = base();
        m.drift = Drift::OuPull { rate: 1.0, target: 0.0, loss: 0.0, mean: 0.0 };
        let c = m.eval_coefficients(0.1, 2.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(c.drift_total, -2.0);
    }

    #[test]
    fn eval_quadratic_control_cost() {
        let mut m = base();
        m.control_cost = ControlCost::Quadratic { coef: 1.0 };
        let c = m.eval_coefficients(0.1, 2.0, 0.0, 0.0, 0.5).unwrap();
        assert_eq!(c.running_cost, 0.25);
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let m = base();
        assert!(matches!(m.eval_coefficients(0.1, 1.0, 1.5, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(m.eval_coefficients(0.1, 1.0, 0.5, 0.0, 7.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_drift_passes_growth_with_zero_ratio() {
        let r = check_assumptions(&base(), 200, 1, ProbeRegion::default()).unwrap();
        let g = r.check(CHECK_DRIFT_GROWTH).unwrap();
        assert!(g.pass);
        assert_eq!(g.worst_ratio, 0.0);
    }

    #[test]
    fn quadratic_drift_fails_growth() {
        let mut m = base();
        m.growth_c = 1.0;
        m.drift = Drift::Quadratic { coef: 1.0 };
        let r = check_assumptions(&m, 500, 3, ProbeRegion::default()).unwrap();
        let g = r.check(CHECK_DRIFT_GROWTH).unwrap();
        assert!(!g.pass);
        assert!(g.worst_ratio > 5.0);
    }

    #[test]
    fn identity_weight_passes_with_ratio_at_most_one() {
        let mut m = base();
        m.growth_c = 1.0;
        m.weight = Weight::identity();
        let r = check_assumptions(&m, 500, 3, ProbeRegion::default()).unwrap();
        let g = r.check(CHECK_WEIGHT_GROWTH).unwrap();
        assert!(g.pass && g.worst_ratio <= 1.0 && g.worst_ratio > 0.5);
    }

    #[test]
    fn declared_lipschitz_is_checked() {
        let mut m = base();
        m.lipschitz_l = 0.5;
        m.drift = Drift::OuPull { rate: 1.0, target: 1.0, loss: 0.0, mean: 0.2 };
        let r = check_assumptions(&m, 300, 3, ProbeRegion::default()).unwrap();
        assert!(!r.check(CHECK_DRIFT_LIP_X).unwrap().pass);
        assert!(r.check(CHECK_DRIFT_LIP_M).unwrap().pass);
    }

    #[test]
    fn too_few_probes() {
        assert!(matches!(
            check_assumptions(&base(), 10, 1, ProbeRegion::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn truncation_examples() {
        let mut m = base();
        m.weight = Weight::identity();
        let t = m.truncate(5.0).unwrap();
        assert_eq!(t.weight(3.0), 3.0);
        assert_eq!(t.weight(9.0), 5.0);
        assert_eq!(t.weight(-9.0), -5.0);
        assert_eq!(t.sigma, m.sigma);
        assert_eq!(t.actions, m.actions);
        assert!(matches!(m.truncate(0.0), Err(Error::Domain(_))));
        assert!(matches!(m.truncate(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sampling_point_mass_and_determinism() {
        let mut m = base();
        assert_eq!(m.sample_initial(3, 5).unwrap(), vec![1.0, 1.0, 1.0]);
        m.initial = InitialLaw::Uniform { low: 0.5, high: 1.5 };
        let a = m.sample_initial(10_000, 11).unwrap();
        let b = m.sample_initial(10_000, 11).unwrap();
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 3.0 * (1.0 / 12f64.sqrt()) / 100.0);
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn truncated_gaussian_below_threshold_is_rejected() {
        let mut m = base();
        m.initial = InitialLaw::TruncatedGaussian { mean: 1.0, sd: 1.0, low: -1.0, high: 3.0 };
        assert!(matches!(m.sample_initial(5, 1), Err(Error::Config(_))));
        m.initial = InitialLaw::TruncatedGaussian { mean: 1.0, sd: 1.0, low: 0.2, high: 3.0 };
        let xs = m.sample_initial(2000, 1).unwrap();
        assert!(xs.iter().all(|&x| (0.2..=3.0).contains(&x)));
    }

    #[test]
    fn validate_rejects_bad_models() {
        let mut m = base();
        m.sigma = 0.0;
        assert!(m.validate().is_err());
        let mut m = base();
        m.actions = ActionSet::new(1.0, 1.0);
        assert!(m.validate().is_err());
        let mut m = base();
        m.initial = InitialLaw::PointMass { at: 0.0 };
        assert!(m.validate().is_err());
    }

    #[test]
    fn schedule_must_increase() {
        assert!(TruncationSchedule::new(vec![1.0, 2.0, 4.0]).is_ok());
        assert!(TruncationSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(TruncationSchedule::new(vec![-1.0, 1.0]).is_err());
        let g = TruncationSchedule::geometric(1.5f64, 3).unwrap();
        assert_eq!(g.levels(), &[1.5, 3.0, 6.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let m: ModelSpec<f32> = presets::weakly_coupled();
        let c = m.eval_coefficients(0.5, 1.2, 0.1, 0.3, 0.2).unwrap();
        let m64: ModelSpec<f64> = presets::weakly_coupled();
        let c64 = m64.eval_coefficients(0.5, 1.2, 0.1, 0.3, 0.2).unwrap();
        assert!((c.drift_total as f64 - c64.drift_total).abs() < 1e-5);
    }
}
