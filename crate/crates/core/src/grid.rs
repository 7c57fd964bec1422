//! Equispaced time and state grids shared by the PDE solvers and the particle code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::scalar::Scalar;

/// `steps + 1` equispaced times on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub horizon: T,
    pub steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    /// Grid with step `dt`; `horizon / dt` must be an integer (relative tolerance 1e-9).
    pub fn from_dt(horizon: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config(format!("dt must be > 0 (got {dt})")));
        }
        if !(horizon > T::zero()) {
            return Err(Error::config(format!("horizon must be > 0 (got {horizon})")));
        }
        let ratio = (horizon / dt).as_f64();
        let steps = ratio.round();
        let tol = 1e-9_f64.max(4.0 * T::epsilon().as_f64());
        if steps < 1.0 || (ratio - steps).abs() > tol * ratio.max(1.0) {
            return Err(Error::config(format!("horizon {horizon} is not an integer multiple of dt {dt}")));
        }
        Ok(Self { horizon, steps: steps as usize })
    }

    pub fn with_steps(horizon: T, steps: usize) -> Self {
        assert!(steps >= 1, "time grid needs at least one step");
        Self { horizon, steps }
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.steps)
    }

    #[inline]
    pub fn time(&self, k: usize) -> T {
        if k == self.steps {
            self.horizon
        } else {
            self.dt() * T::from_usize_lossy(k)
        }
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of grid time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let r = (t / self.dt()).as_f64();
        let k = r.round();
        if k < 0.0 || k > self.steps as f64 || (r - k).abs() > 1e-7 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Index `k` with `t_k <= t < t_{k+1}`, clamped to `[0, steps]`.
    pub fn floor_index(&self, t: T) -> usize {
        let r = (t / self.dt()).as_f64();
        if r <= 0.0 {
            0
        } else {
            // tolerate rounding just below an integer
            let k = (r + 1e-9).floor() as usize;
            k.min(self.steps)
        }
    }
}

/// `cells + 1` equispaced nodes on `[lower, upper]`.
///
/// Every node `x_j` owns the control volume `[x_j − dx/2, x_j + dx/2]`. When
/// `absorbing_lower` is set the lower node sits on the threshold and carries a
/// homogeneous Dirichlet condition; otherwise the lower edge is a far-field edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGrid<T> {
    pub lower: T,
    pub upper: T,
    pub cells: usize,
    pub absorbing_lower: bool,
}

impl<T: Scalar> StateGrid<T> {
    pub fn new(lower: T, upper: T, cells: usize, absorbing_lower: bool) -> Result<Self> {
        if cells < 4 {
            return Err(Error::config(format!("state grid needs at least 4 cells (got {cells})")));
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::config(format!("state grid requires lower < upper (got [{lower}, {upper}])")));
        }
        Ok(Self { lower, upper, cells, absorbing_lower })
    }

    #[inline]
    pub fn dx(&self) -> T {
        (self.upper - self.lower) / T::from_usize_lossy(self.cells)
    }

    #[inline]
    pub fn node(&self, j: usize) -> T {
        if j == self.cells {
            self.upper
        } else {
            self.lower + self.dx() * T::from_usize_lossy(j)
        }
    }

    pub fn len(&self) -> usize {
        self.cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Node whose control volume contains `x` (clamped to the grid), and whether clamping happened.
    pub fn nearest(&self, x: T) -> (usize, bool) {
        let r = ((x - self.lower) / self.dx()).as_f64();
        let j = r.round();
        if j < 0.0 {
            (0, r < -0.5)
        } else if j > self.cells as f64 {
            (self.cells, true)
        } else {
            (j as usize, false)
        }
    }
}

/// Time grid and state grid of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grids<T> {
    pub time: TimeGrid<T>,
    pub state: StateGrid<T>,
}

impl<T: Scalar> Grids<T> {
    pub fn new(time: TimeGrid<T>, state: StateGrid<T>) -> Self {
        Self { time, state }
    }

    /// Default box for `model`: upper edge at `sup ν + 6σ√T` (unless `x_max` is
    /// given); lower edge on the threshold, or at `inf ν − 6σ√T` when the
    /// threshold is further away than that, in which case it is non-absorbing.
    pub fn for_model(model: &ModelSpec<T>, dt: T, cells: usize, x_max: Option<T>) -> Result<Self> {
        let time = TimeGrid::from_dt(model.horizon, dt)?;
        let (inf, sup) = model.initial.support();
        let spread = T::lit(6.0) * model.sigma * model.horizon.sqrt();
        let upper = x_max.unwrap_or(sup + spread);
        let far_lower = inf - spread;
        let (lower, absorbing) = if model.threshold < far_lower { (far_lower, false) } else { (model.threshold, true) };
        if !(upper > sup) {
            return Err(Error::config(format!("x_max {upper} must exceed the initial support {sup}")));
        }
        Ok(Self { time, state: StateGrid::new(lower, upper, cells, absorbing)? })
    }

    pub fn rows(&self) -> usize {
        self.time.len()
    }

    pub fn cols(&self) -> usize {
        self.state.len()
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.time.steps == other.time.steps
            && self.state.cells == other.state.cells
            && self.state.absorbing_lower == other.state.absorbing_lower
            && (self.time.horizon - other.time.horizon).abs() <= T::epsilon() * T::lit(16.0) * self.time.horizon
            && (self.state.lower - other.state.lower).abs() <= T::epsilon() * T::lit(16.0) * (T::one() + self.state.lower.abs())
            && (self.state.upper - other.state.upper).abs() <= T::epsilon() * T::lit(16.0) * (T::one() + self.state.upper.abs())
    }
}
