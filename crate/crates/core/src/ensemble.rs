//! The tilted line-ensemble measure: configurations, states, area and
//! log-weight, vertical shifts, scale constants, ceiling functions and the
//! 1:2:3 rescaling.
//!
//! Curves are indexed from 0 (the top curve) to `n - 1`; curve `i` carries the
//! tilt coefficient `(a/N) * b^i`. Sites are addressed by column
//! `0..width`, where column `c` is the lattice site `left + c`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::increments::{to_grid, IncrementModel};

/// Floor value meaning "no floor at this site".
pub const NO_FLOOR: i32 = i32::MIN / 4;
/// Ceiling value meaning "no ceiling at this site".
pub const NO_CEILING: i32 = i32::MAX / 4;

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    n: usize,
    left: i64,
    right: i64,
    tilt_normalizer: f64,
    a: f64,
    b: f64,
    u: Vec<i32>,
    v: Vec<i32>,
    floor: Vec<i32>,
    ceiling: Option<Vec<i32>>,
    model: Arc<IncrementModel>,
}

/// Floor or ceiling specification in grid units. `None` entries are ±∞.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    Const(i32),
    Table(Vec<Option<i32>>),
}

/// Builder for [`EnsembleConfig`]; heights are in grid units.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    model: Arc<IncrementModel>,
    n: usize,
    interval: (i64, i64),
    tilt_normalizer: f64,
    a: f64,
    b: f64,
    u: Vec<i32>,
    v: Vec<i32>,
    floor: Option<Boundary>,
    ceiling: Option<Boundary>,
}

impl ConfigBuilder {
    pub fn tilt(mut self, a: f64, b: f64, tilt_normalizer: f64) -> Self {
        self.a = a;
        self.b = b;
        self.tilt_normalizer = tilt_normalizer;
        self
    }

    pub fn boundaries(mut self, u: Vec<i32>, v: Vec<i32>) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    pub fn floor(mut self, floor: Boundary) -> Self {
        self.floor = Some(floor);
        self
    }

    pub fn floor_const(self, c: i32) -> Self {
        self.floor(Boundary::Const(c))
    }

    pub fn no_floor(mut self) -> Self {
        self.floor = None;
        self
    }

    pub fn ceiling(mut self, ceiling: Option<Boundary>) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn build(self) -> Result<EnsembleConfig> {
        let (left, right) = self.interval;
        if left >= right {
            return Err(Error::InvalidConfig(format!("interval [{left}, {right}] needs l < r")));
        }
        let width = (right - left + 1) as usize;
        let expand = |b: &Boundary, missing: i32, what: &str| -> Result<Vec<i32>> {
            match b {
                Boundary::Const(c) => Ok(vec![*c; width]),
                Boundary::Table(t) if t.len() == width => {
                    Ok(t.iter().map(|x| x.unwrap_or(missing)).collect())
                }
                Boundary::Table(t) => Err(Error::InvalidConfig(format!(
                    "{what} table has {} entries, interval has {width} sites",
                    t.len()
                ))),
            }
        };
        let floor = match &self.floor {
            Some(b) => expand(b, NO_FLOOR, "floor")?,
            None => vec![NO_FLOOR; width],
        };
        let ceiling = match &self.ceiling {
            Some(b) => Some(expand(b, NO_CEILING, "ceiling")?),
            None => None,
        };
        let config = EnsembleConfig {
            n: self.n,
            left,
            right,
            tilt_normalizer: self.tilt_normalizer,
            a: self.a,
            b: self.b,
            u: self.u,
            v: self.v,
            floor,
            ceiling,
            model: self.model,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Unnormalised log-density together with a validity flag; an invalid
/// weight stands for `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogWeight {
    pub value: f64,
    pub valid: bool,
}

impl LogWeight {
    pub const ZERO_WEIGHT: LogWeight = LogWeight { value: 0.0, valid: false };

    pub fn as_f64(self) -> f64 {
        if self.valid {
            self.value
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl EnsembleConfig {
    /// Start a builder with no tilt, zero boundaries and a floor at 0.
    pub fn builder(model: impl Into<Arc<IncrementModel>>, n: usize, interval: (i64, i64)) -> ConfigBuilder {
        ConfigBuilder {
            model: model.into(),
            n,
            interval,
            tilt_normalizer: 1.0,
            a: 0.0,
            b: 1.0,
            u: vec![0; n],
            v: vec![0; n],
            floor: Some(Boundary::Const(0)),
            ceiling: None,
        }
    }

    /// Rebuild this configuration with modifications applied to a builder.
    pub fn to_builder(&self) -> ConfigBuilder {
        ConfigBuilder {
            model: self.model.clone(),
            n: self.n,
            interval: (self.left, self.right),
            tilt_normalizer: self.tilt_normalizer,
            a: self.a,
            b: self.b,
            u: self.u.clone(),
            v: self.v.clone(),
            floor: Some(Boundary::Table(
                self.floor.iter().map(|&h| (h != NO_FLOOR).then_some(h)).collect(),
            )),
            ceiling: self.ceiling.as_ref().map(|g| {
                Boundary::Table(g.iter().map(|&x| (x != NO_CEILING).then_some(x)).collect())
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 {
            return bad("need at least one curve".into());
        }
        if !(self.tilt_normalizer.is_finite() && self.tilt_normalizer > 0.0) {
            return bad(format!("tilt normalizer N = {} must be positive", self.tilt_normalizer));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return bad(format!("a = {} must be finite and non-negative", self.a));
        }
        if !(self.b.is_finite() && self.b >= 1.0) {
            return bad(format!("b = {} must be >= 1", self.b));
        }
        if self.u.len() != self.n || self.v.len() != self.n {
            return bad(format!(
                "boundary vectors have lengths {} and {}, expected {}",
                self.u.len(),
                self.v.len(),
                self.n
            ));
        }
        let last = self.width() - 1;
        for (name, vec, col) in [("u", &self.u, 0), ("v", &self.v, last)] {
            if vec.windows(2).any(|w| w[0] < w[1]) {
                return bad(format!("{name} is not Weyl-ordered: {vec:?}"));
            }
            if vec[self.n - 1] < self.floor[col] {
                return bad(format!("{name} lies below the floor {}", self.floor[col]));
            }
        }
        let len = self.len() as i64;
        let (lo, hi) = (self.model.min_offset() as i64, self.model.max_offset() as i64);
        for i in 0..self.n {
            let d = self.v[i] as i64 - self.u[i] as i64;
            if d < lo * len || d > hi * len {
                return bad(format!("curve {i}: v - u = {d} not reachable in {len} steps"));
            }
            if !self.model.contiguous_support_with_zero() && !self.periodic_reachable(d) {
                return bad(format!("curve {i}: v - u = {d} not reachable (periodicity)"));
            }
        }
        if let Some(g) = &self.ceiling {
            if g[0] < self.u[0] || g[last] < self.v[0] {
                return bad("ceiling lies below the top boundary values".into());
            }
            if let Some(j) = (0..self.width()).find(|&j| g[j] < self.floor[j]) {
                return bad(format!("ceiling below floor at column {j}"));
            }
        }
        Ok(())
    }

    fn periodic_reachable(&self, d: i64) -> bool {
        let len = self.len();
        let range = (self.model.max_offset() - self.model.min_offset()) as usize;
        if len.saturating_mul(range) <= 1 << 20 {
            return self.model.log_bridge_prob(len, d).is_finite();
        }
        let offs = self.model.offsets();
        let g = offs.iter().fold(0i64, |g, &k| gcd(g, (k - offs[0]) as i64));
        g == 0 || (d - offs[0] as i64 * len as i64).rem_euclid(g) == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn left(&self) -> i64 {
        self.left
    }

    pub fn right(&self) -> i64 {
        self.right
    }

    /// Number of sites `r - l + 1`.
    pub fn width(&self) -> usize {
        (self.right - self.left + 1) as usize
    }

    /// Interval length `r - l` (number of bonds).
    pub fn len(&self) -> usize {
        (self.right - self.left) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tilt_normalizer(&self) -> f64 {
        self.tilt_normalizer
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn u(&self) -> &[i32] {
        &self.u
    }

    pub fn v(&self) -> &[i32] {
        &self.v
    }

    /// Floor per column; [`NO_FLOOR`] where absent.
    pub fn floor(&self) -> &[i32] {
        &self.floor
    }

    pub fn has_finite_floor(&self) -> bool {
        self.floor.iter().all(|&h| h != NO_FLOOR)
    }

    /// Ceiling per column for the top curve, if any.
    pub fn ceiling(&self) -> Option<&[i32]> {
        self.ceiling.as_deref()
    }

    /// Ceiling at a column, [`NO_CEILING`] if none.
    #[inline]
    pub fn ceiling_at(&self, col: usize) -> i32 {
        self.ceiling.as_ref().map_or(NO_CEILING, |g| g[col])
    }

    pub fn model(&self) -> &IncrementModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<IncrementModel> {
        &self.model
    }

    pub fn grid_step(&self) -> f64 {
        self.model.grid_step()
    }

    /// Tilt coefficient per grid unit of area for curve `i`:
    /// `(a/N) b^i ε`.
    pub fn tilt_coefficient(&self, i: usize) -> f64 {
        self.a / self.tilt_normalizer * self.b.powi(i as i32) * self.grid_step()
    }

    /// Area of curve `i`: `Σ_{j=l}^{r-1} (X_i(j) - h(j))` in height units.
    /// Sites without a floor are measured from 0.
    pub fn area(&self, state: &EnsembleState, i: usize) -> Result<f64> {
        if i >= self.n {
            return Err(Error::Domain(format!("curve {i} out of range 0..{}", self.n)));
        }
        Ok(self.area_grid(state, i) as f64 * self.grid_step())
    }

    fn area_grid(&self, state: &EnsembleState, i: usize) -> i64 {
        state.curve(i)[..self.len()]
            .iter()
            .zip(&self.floor)
            .map(|(&x, &h)| x as i64 - if h == NO_FLOOR { 0 } else { h as i64 })
            .sum()
    }

    /// Unnormalised log-density: random-walk log-likelihood of all bridges
    /// minus the area tilt, or an invalid weight if any constraint fails.
    pub fn log_weight(&self, state: &EnsembleState) -> LogWeight {
        if self.check_state(state).is_err() {
            return LogWeight::ZERO_WEIGHT;
        }
        let mut value = 0.0;
        for i in 0..self.n {
            let c = state.curve(i);
            value += c.windows(2).map(|w| self.model.log_prob(w[1] - w[0])).sum::<f64>();
            value -= self.tilt_coefficient(i) * self.area_grid(state, i) as f64;
        }
        LogWeight { value, valid: value.is_finite() }
    }

    /// Check every state invariant: shape, boundary match, non-crossing,
    /// floor, ceiling and increment support.
    pub fn check_state(&self, state: &EnsembleState) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidState(m));
        if state.n() != self.n || state.width() != self.width() {
            return bad(format!(
                "state is {}x{}, config needs {}x{}",
                state.n(),
                state.width(),
                self.n,
                self.width()
            ));
        }
        let last = self.width() - 1;
        for i in 0..self.n {
            let c = state.curve(i);
            if c[0] != self.u[i] || c[last] != self.v[i] {
                return bad(format!("curve {i} does not match its boundary values"));
            }
            if let Some(j) = c.windows(2).position(|w| self.model.log_prob(w[1] - w[0]) == f64::NEG_INFINITY) {
                return bad(format!("curve {i}: increment at column {j} outside support"));
            }
        }
        for j in 0..self.width() {
            if state.get(0, j) > self.ceiling_at(j) {
                return bad(format!("top curve above ceiling at column {j}"));
            }
            for i in 1..self.n {
                if state.get(i, j) > state.get(i - 1, j) {
                    return bad(format!("curves {} and {i} cross at column {j}", i - 1));
                }
            }
            if state.get(self.n - 1, j) < self.floor[j] {
                return bad(format!("bottom curve below floor at column {j}"));
            }
        }
        Ok(())
    }

    /// Shift boundaries, floor, ceiling and the state by `zeta` (a grid
    /// multiple, in height units).
    pub fn shift(&self, state: &EnsembleState, zeta: f64) -> Result<(EnsembleConfig, EnsembleState)> {
        let k = to_grid(zeta, self.grid_step())?;
        let add = |x: i32, sentinel: i32| if x == sentinel { x } else { x + k };
        let mut config = self.clone();
        config.u.iter_mut().for_each(|x| *x += k);
        config.v.iter_mut().for_each(|x| *x += k);
        config.floor.iter_mut().for_each(|x| *x = add(*x, NO_FLOOR));
        if let Some(g) = config.ceiling.as_mut() {
            g.iter_mut().for_each(|x| *x = add(*x, NO_CEILING));
        }
        let mut shifted = state.clone();
        shifted.heights.iter_mut().for_each(|x| *x += k);
        Ok((config, shifted))
    }

    /// Pointwise largest admissible state ignoring periodicity, or `None`
    /// if the constraint system is infeasible.
    pub fn upper_envelope(&self) -> Option<EnsembleState> {
        let (lower, upper) = self.envelopes();
        feasible(&lower, &upper).then(|| self.to_state(&upper))
    }

    /// Pointwise smallest admissible state ignoring periodicity.
    pub fn lower_envelope(&self) -> Option<EnsembleState> {
        let (lower, upper) = self.envelopes();
        feasible(&lower, &upper).then(|| self.to_state(&lower))
    }

    fn to_state(&self, table: &[i64]) -> EnsembleState {
        EnsembleState {
            n: self.n,
            width: self.width(),
            heights: table.iter().map(|&x| x as i32).collect(),
        }
    }

    /// Fixpoints of the difference constraints defining the state space.
    fn envelopes(&self) -> (Vec<i64>, Vec<i64>) {
        let (n, w) = (self.n, self.width());
        let lo_step = self.model.min_offset() as i64;
        let hi_step = self.model.max_offset() as i64;
        let inf = NO_CEILING as i64 * 2;
        let mut upper = vec![inf; n * w];
        let mut lower = vec![-inf; n * w];
        for i in 0..n {
            upper[i * w] = self.u[i] as i64;
            lower[i * w] = self.u[i] as i64;
            upper[i * w + w - 1] = self.v[i] as i64;
            lower[i * w + w - 1] = self.v[i] as i64;
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..w {
                    let idx = i * w + j;
                    let mut ub = upper[idx];
                    if i == 0 {
                        ub = ub.min(self.ceiling_at(j) as i64);
                    } else {
                        ub = ub.min(upper[idx - w]);
                    }
                    if j > 0 {
                        ub = ub.min(upper[idx - 1] + hi_step);
                    }
                    if j + 1 < w {
                        ub = ub.min(upper[idx + 1] - lo_step);
                    }
                    if ub < upper[idx] {
                        upper[idx] = ub;
                        changed = true;
                    }
                }
            }
            for i in (0..n).rev() {
                for j in (0..w).rev() {
                    let idx = i * w + j;
                    let mut lb = lower[idx];
                    if i == n - 1 {
                        if self.floor[j] != NO_FLOOR {
                            lb = lb.max(self.floor[j] as i64);
                        }
                    } else {
                        lb = lb.max(lower[idx + w]);
                    }
                    if j > 0 {
                        lb = lb.max(lower[idx - 1] + lo_step);
                    }
                    if j + 1 < w {
                        lb = lb.max(lower[idx + 1] - hi_step);
                    }
                    if lb > lower[idx] {
                        lower[idx] = lb;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (lower, upper)
    }

    /// Deterministic starting state: per-curve staircase interpolation
    /// between `u` and `v`, clipped into the admissible envelopes.
    pub fn initial_state(&self) -> Result<EnsembleState> {
        let (lower, upper) = self.envelopes();
        if !feasible(&lower, &upper) {
            return Err(Error::InvalidConfig("no admissible state exists".into()));
        }
        let w = self.width();
        let span = (w - 1) as f64;
        let mut table = vec![0i64; self.n * w];
        for i in 0..self.n {
            let (u, v) = (self.u[i] as f64, self.v[i] as f64);
            for j in 0..w {
                let stair = (u + (v - u) * j as f64 / span + 0.5).floor() as i64;
                let idx = i * w + j;
                table[idx] = stair.clamp(lower[idx], upper[idx]);
            }
        }
        let state = self.to_state(&table);
        self.check_state(&state)?;
        Ok(state)
    }
}

fn feasible(lower: &[i64], upper: &[i64]) -> bool {
    lower.iter().zip(upper).all(|(l, u)| l <= u)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Height table `X_i(j)` in grid units, stored curve-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnsembleState {
    n: usize,
    width: usize,
    heights: Vec<i32>,
}

impl EnsembleState {
    pub fn from_curves(curves: &[Vec<i32>]) -> Result<Self> {
        let width = curves.first().map_or(0, Vec::len);
        if curves.is_empty() || width < 2 || curves.iter().any(|c| c.len() != width) {
            return Err(Error::InvalidState("curves must be non-empty with equal lengths >= 2".into()));
        }
        Ok(Self {
            n: curves.len(),
            width,
            heights: curves.concat(),
        })
    }

    pub fn from_flat(n: usize, width: usize, heights: Vec<i32>) -> Result<Self> {
        if n == 0 || width < 2 || heights.len() != n * width {
            return Err(Error::InvalidState(format!(
                "{} heights do not form a {n}x{width} table",
                heights.len()
            )));
        }
        Ok(Self { n, width, heights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, col: usize) -> i32 {
        self.heights[i * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, i: usize, col: usize, value: i32) {
        self.heights[i * self.width + col] = value;
    }

    pub fn curve(&self, i: usize) -> &[i32] {
        &self.heights[i * self.width..(i + 1) * self.width]
    }

    pub fn heights(&self) -> &[i32] {
        &self.heights
    }

    pub(crate) fn heights_mut(&mut self) -> &mut [i32] {
        &mut self.heights
    }

    /// Column `col` as a height vector `(X_1, ..., X_n)`.
    pub fn column(&self, col: usize) -> Vec<i32> {
        (0..self.n).map(|i| self.get(i, col)).collect()
    }
}

/// `(λ_j, H_j)` with `λ_j = a b^{j-1}` and `H_j = λ_j^{-1/3} N^{1/3}`; `j` is
/// 1-based.
pub fn scales(a: f64, b: f64, j: u32, n_tilt: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b >= 1.0 && j >= 1 && n_tilt > 0.0) {
        return Err(Error::Domain(format!(
            "scales need a > 0, b >= 1, j >= 1, N > 0 (got a={a}, b={b}, j={j}, N={n_tilt})"
        )));
    }
    let lambda = a * b.powi(j as i32 - 1);
    Ok((lambda, fluctuation_scale(lambda, n_tilt)))
}

/// `H_λ = λ^{-1/3} N^{1/3}`.
pub fn fluctuation_scale(lambda: f64, n_tilt: f64) -> f64 {
    (n_tilt / lambda).cbrt()
}

/// `(𝒞, ε_j)`: the smallest integer `𝒞 >= 1` with
/// `((2 + 𝒞)/(1 + 𝒞))^2 <= b0^{1/6}`, and `ε_j = (j + 𝒞)^{-2}`.
pub fn epsilon_j(j: u32, b0: f64) -> Result<(u32, f64)> {
    let c = ceiling_constant(b0)?;
    Ok((c, ((j + c) as f64).powi(-2)))
}

pub fn ceiling_constant(b0: f64) -> Result<u32> {
    if !(b0.is_finite() && b0 > 1.0) {
        return Err(Error::Domain(format!("b0 = {b0} must exceed 1")));
    }
    let target = b0.powf(1.0 / 6.0);
    let ok = |c: f64| ((2.0 + c) / (1.0 + c)).powi(2) <= target;
    // (2+C)/(1+C) = 1 + 1/(1+C), so C >= 1/(b0^{1/12} - 1) - 1.
    let guess = (1.0 / (b0.powf(1.0 / 12.0) - 1.0) - 1.0).ceil().max(1.0);
    if guess > 1e9 {
        return Err(Error::Domain(format!("b0 = {b0} too close to 1")));
    }
    let mut c = (guess - 2.0).max(1.0);
    while !ok(c) {
        c += 1.0;
    }
    Ok(c as u32)
}

/// Parameters of the ceiling functions `Cl_j` on the symmetric interval
/// `[-half_width, half_width]` (half width `L N^{2/3}`).
#[derive(Debug, Clone, PartialEq)]
pub struct CeilingParams {
    pub a: f64,
    pub b: f64,
    pub tilt_normalizer: f64,
    /// The large constant 𝒯.
    pub t_const: f64,
    /// Lower bound `b0 > 1` used to fix 𝒞.
    pub b0: f64,
    pub half_width: f64,
    /// Number of nested intervals `m`; `Cl_j` is defined for `j <= m + 1`.
    pub levels: u32,
    /// Boundary heights `u_j`, `v_j` per level (index 0 is level 1).
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl CeilingParams {
    /// Half width of `𝓘_j = (1/2) Π_{i=j}^{m} (1 - ε_i) 𝓘`.
    pub fn interval_half_width(&self, j: u32) -> Result<f64> {
        if j == 0 || j > self.levels + 1 {
            return Err(Error::Domain(format!("level {j} outside 1..={}", self.levels + 1)));
        }
        let c = ceiling_constant(self.b0)?;
        let prod: f64 = (j..=self.levels)
            .map(|i| 1.0 - ((i + c) as f64).powi(-2))
            .product();
        Ok(0.5 * prod * self.half_width)
    }

    fn check(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.b >= 1.0
            && self.tilt_normalizer > 0.0
            && self.t_const > 0.0
            && self.half_width > 0.0
            && self.u.len() == self.v.len();
        if !ok {
            return Err(Error::Domain(format!("inconsistent ceiling parameters {self:?}")));
        }
        Ok(())
    }
}

/// The three-branch ceiling function `Cl_j(x)`; `j` is 1-based and `x` is
/// measured from the centre of the interval. Branches are tried in order,
/// so the flat branch wins wherever it applies.
pub fn ceiling_cl(j: u32, x: f64, k: f64, params: &CeilingParams) -> Result<f64> {
    params.check()?;
    if !(k > 0.0) {
        return Err(Error::Domain(format!("K = {k} must be positive")));
    }
    if x.abs() > params.half_width {
        return Err(Error::Domain(format!(
            "x = {x} outside [-{w}, {w}]",
            w = params.half_width
        )));
    }
    let inner = params.interval_half_width(j)?;
    let (_, h) = scales(params.a, params.b, j, params.tilt_normalizer)?;
    let (_, eps) = epsilon_j(j, params.b0)?;
    let amp = k / eps * h;
    let unit = k.sqrt() * h * h;
    let flat = 2.0 * params.t_const * k.sqrt() * eps.powf(-0.5) * h * h;
    if x.abs() <= flat {
        return Ok(amp * (2.0 * params.t_const * eps.powf(-0.5)).ln().powf(2.0 / 3.0));
    }
    if x.abs() <= inner {
        return Ok(amp * (x.abs() / unit).ln().powf(2.0 / 3.0));
    }
    let idx = (j - 1) as usize;
    let (uj, vj) = match (params.u.get(idx), params.v.get(idx)) {
        (Some(&u), Some(&v)) => (u, v),
        _ => return Err(Error::Domain(format!("no boundary values for level {j}"))),
    };
    let ratio = 2.0 * params.half_width / unit;
    if ratio <= 1.0 {
        return Err(Error::Domain(format!(
            "interval too short for level {j}: |I| / (K^(1/2) H_j^2) = {ratio}"
        )));
    }
    Ok(uj.max(vj) + amp * ratio.ln().powf(2.0 / 3.0))
}

/// Curves rescaled by `x_i(t) = σ^{-2/3} N^{-1/3} X_i(t σ^{-2/3} N^{2/3})`,
/// linearly interpolated between lattice sites.
#[derive(Debug, Clone)]
pub struct RescaledEnsemble {
    t0: f64,
    dt: f64,
    values: Vec<Vec<f64>>,
}

pub fn rescale(config: &EnsembleConfig, state: &EnsembleState, sigma: f64, n_tilt: f64) -> Result<RescaledEnsemble> {
    if !(sigma > 0.0 && n_tilt > 0.0) {
        return Err(Error::Domain(format!("σ = {sigma} and N = {n_tilt} must be positive")));
    }
    let time_unit = sigma.powf(-2.0 / 3.0) * n_tilt.powf(2.0 / 3.0);
    let height = sigma.powf(-2.0 / 3.0) * n_tilt.powf(-1.0 / 3.0) * config.grid_step();
    Ok(RescaledEnsemble {
        t0: config.left() as f64 / time_unit,
        dt: 1.0 / time_unit,
        values: (0..state.n())
            .map(|i| state.curve(i).iter().map(|&x| x as f64 * height).collect())
            .collect(),
    })
}

impl RescaledEnsemble {
    /// Build directly from knot values on a uniform grid starting at `t0`.
    pub fn from_knots(t0: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) || values.is_empty() || values.iter().any(|v| v.len() < 2 || v.len() != values[0].len()) {
            return Err(Error::Domain("need positive spacing and equal-length curves".into()));
        }
        Ok(Self { t0, dt, values })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.dt * (self.values[0].len() - 1) as f64)
    }

    pub fn curves(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, i: usize, t: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        let tol = 1e-12 * self.dt;
        if i >= self.values.len() || t < lo - tol || t > hi + tol {
            return Err(Error::Domain(format!("t = {t} outside [{lo}, {hi}] or curve {i} missing")));
        }
        Ok(self.eval(i, t.clamp(lo, hi)))
    }

    fn eval(&self, i: usize, t: f64) -> f64 {
        let v = &self.values[i];
        let s = (t - self.t0) / self.dt;
        let k = (s.floor() as usize).min(v.len() - 2);
        let frac = s - k as f64;
        v[k] + frac * (v[k + 1] - v[k])
    }

    /// Modulus of continuity over `window`: the largest `|f_i(s) - f_i(t)|`
    /// with `|s - t| <= delta`, maximised over curves. For piecewise-linear
    /// curves it suffices to pair each knot or window endpoint with the
    /// points at distance `delta` and with the knots in between.
    pub fn modulus(&self, delta: f64, window: (f64, f64)) -> Result<f64> {
        let (lo, hi) = self.domain();
        let (w0, w1) = window;
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("δ = {delta} must be positive")));
        }
        if !(w0 < w1) || w0 < lo - 1e-12 || w1 > hi + 1e-12 {
            return Err(Error::Domain(format!("window [{w0}, {w1}] empty or outside [{lo}, {hi}]")));
        }
        let (w0, w1) = (w0.max(lo), w1.min(hi));
        let first = ((w0 - self.t0) / self.dt).ceil() as i64;
        let last = ((w1 - self.t0) / self.dt).floor() as i64;
        let knot = |k: i64| self.t0 + k as f64 * self.dt;
        let mut anchors = vec![w0, w1];
        anchors.extend((first..=last).map(knot).filter(|&t| t > w0 && t < w1));
        let mut best = 0.0_f64;
        for i in 0..self.values.len() {
            for &s in &anchors {
                let fs = self.eval(i, s);
                let mut partners = vec![(s - delta).max(w0), (s + delta).min(w1)];
                let k0 = ((s - delta - self.t0) / self.dt).ceil() as i64;
                let k1 = ((s + delta - self.t0) / self.dt).floor() as i64;
                partners.extend(
                    (k0.max(first)..=k1.min(last))
                        .map(knot)
                        .filter(|&t| t >= w0 && t <= w1),
                );
                for t in partners {
                    best = best.max((fs - self.eval(i, t)).abs());
                }
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lazy_config(n: usize, interval: (i64, i64), a: f64, b: f64, u: Vec<i32>, v: Vec<i32>) -> EnsembleConfig {
        EnsembleConfig::builder(IncrementModel::lazy_srw(), n, interval)
            .tilt(a, b, 10.0)
            .boundaries(u, v)
            .build()
            .unwrap()
    }

    #[test]
    fn area_is_left_endpoint_sum() {
        let c = lazy_config(1, (0, 3), 1.0, 1.0, vec![2], vec![1]);
        let s = EnsembleState::from_curves(&[vec![2, 1, 0, 1]]).unwrap();
        assert_eq!(c.area(&s, 0).unwrap(), 3.0);
        assert!(c.area(&s, 1).is_err());
        // floor equal to the curve
        let c2 = c
            .to_builder()
            .floor(Boundary::Table(vec![Some(2), Some(1), Some(0), Some(1)]))
            .build()
            .unwrap();
        assert_eq!(c2.area(&s, 0).unwrap(), 0.0);
    }

    #[test]
    fn area_shifts_linearly() {
        let c = lazy_config(1, (0, 3), 1.0, 1.0, vec![2], vec![1]);
        let s = EnsembleState::from_curves(&[vec![2, 1, 0, 1]]).unwrap();
        let raised = EnsembleState::from_curves(&[vec![7, 6, 5, 6]]).unwrap();
        let c5 = c.to_builder().boundaries(vec![7], vec![6]).build().unwrap();
        assert_eq!(c5.area(&raised, 0).unwrap(), c.area(&s, 0).unwrap() + 5.0 * 3.0);
    }

    #[test]
    fn untilted_weight_is_walk_likelihood() {
        let c = lazy_config(2, (0, 3), 0.0, 2.0, vec![2, 0], vec![1, 0]);
        let s = EnsembleState::from_curves(&[vec![2, 2, 1, 1], vec![0, 1, 1, 0]]).unwrap();
        let expected = 3.0 * 0.25f64.ln() + 3.0 * 0.5f64.ln();
        let w = c.log_weight(&s);
        assert!(w.valid);
        assert!((w.value - expected).abs() < 1e-14);
    }

    #[test]
    fn crossing_state_has_zero_weight() {
        let c = lazy_config(2, (0, 3), 0.5, 2.0, vec![2, 0], vec![1, 0]);
        let s = EnsembleState::from_curves(&[vec![2, 1, 0, 1], vec![0, 1, 1, 0]]).unwrap();
        assert_eq!(c.log_weight(&s).as_f64(), f64::NEG_INFINITY);
        let jump = EnsembleState::from_curves(&[vec![2, 4, 2, 1], vec![0, 0, 0, 0]]).unwrap();
        assert!(!c.log_weight(&jump).valid);
    }

    #[test]
    fn raising_a_flat_site_changes_weight_by_known_amount() {
        let (a, b, n_tilt) = (0.7, 3.0, 10.0);
        for i in 0..2 {
            let c = EnsembleConfig::builder(IncrementModel::lazy_srw(), 2, (0, 4))
                .tilt(a, b, n_tilt)
                .boundaries(vec![5, 1], vec![5, 1])
                .build()
                .unwrap();
            let s = EnsembleState::from_curves(&[vec![5; 5], vec![1; 5]]).unwrap();
            let mut t = s.clone();
            t.set(i, 2, t.get(i, 2) + 1);
            let diff = c.log_weight(&t).value - c.log_weight(&s).value;
            let expected = 0.25f64.ln() - a / n_tilt * b.powi(i as i32);
            assert!((diff - expected).abs() < 1e-12, "curve {i}: {diff} vs {expected}");
        }
    }

    #[test]
    fn shift_by_zero_and_off_grid() {
        let c = lazy_config(1, (0, 3), 1.0, 1.0, vec![2], vec![1]);
        let s = EnsembleState::from_curves(&[vec![2, 1, 0, 1]]).unwrap();
        let (c0, s0) = c.shift(&s, 0.0).unwrap();
        assert_eq!(s0, s);
        assert_eq!(c0.u(), c.u());
        assert!(c.shift(&s, 0.5).is_err());
        let (c5, s5) = c.shift(&s, 5.0).unwrap();
        assert_eq!(c5.area(&s5, 0).unwrap(), c.area(&s, 0).unwrap());
    }

    #[test]
    fn scale_constants() {
        assert_eq!(scales(1.0, 8.0, 2, 1000.0).unwrap().0, 8.0);
        assert!((scales(1.0, 8.0, 2, 1000.0).unwrap().1 - 5.0).abs() < 1e-12);
        assert!((fluctuation_scale(1.0, 1000.0) - 10.0).abs() < 1e-12);
        assert!((fluctuation_scale(7.0, 7.0) - 1.0).abs() < 1e-12);
        assert!(scales(0.0, 2.0, 1, 10.0).is_err());
        assert!(scales(1.0, 2.0, 0, 10.0).is_err());
    }

    #[test]
    fn ceiling_constant_examples() {
        assert!(2.25 <= 130f64.powf(1.0 / 6.0));
        assert_eq!(epsilon_j(1, 130.0).unwrap(), (1, 0.25));
        // 2^{1/6} ≈ 1.12246: (17/16)^2 = 1.1289 fails, (18/17)^2 = 1.1211 passes.
        assert!((17.0f64 / 16.0).powi(2) > 2f64.powf(1.0 / 6.0));
        assert!((18.0f64 / 17.0).powi(2) <= 2f64.powf(1.0 / 6.0));
        let (c, e) = epsilon_j(1, 2.0).unwrap();
        assert_eq!(c, 16);
        assert!((e - 1.0 / 289.0).abs() < 1e-15);
        for j in 1..50 {
            assert!(epsilon_j(j + 1, 3.0).unwrap().1 < epsilon_j(j, 3.0).unwrap().1);
        }
        assert!(epsilon_j(1, 1.0).is_err());
    }

    fn probe_params(n_tilt: f64) -> CeilingParams {
        CeilingParams {
            a: 1.0,
            b: 130.0,
            tilt_normalizer: n_tilt,
            t_const: 10.0,
            b0: 130.0,
            half_width: 1e7,
            levels: 3,
            u: vec![5e4, 2e4, 1e4, 5e3],
            v: vec![5e4, 2e4, 1e4, 5e3],
        }
    }

    #[test]
    fn flat_branch_value() {
        // H_1 = 10 needs N = 1000 with a = 1; ε_1 = 1/4 needs b0 = 130.
        let mut p = probe_params(1000.0);
        p.half_width = 1e9;
        let got = ceiling_cl(1, 0.0, 1.0, &p).unwrap();
        let expected = 40.0 * 40f64.ln().powf(2.0 / 3.0);
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 95.4).abs() < 0.1, "{got}");
        // anywhere inside the flat region
        let flat = 2.0 * 10.0 * 2.0 * 100.0;
        assert_eq!(ceiling_cl(1, flat * 0.99, 1.0, &p).unwrap(), got);
    }

    #[test]
    fn outer_branch_value() {
        let p = probe_params(1e6);
        let inner = p.interval_half_width(1).unwrap();
        let x = (inner + p.half_width) / 2.0;
        let (_, h) = scales(1.0, 130.0, 1, 1e6).unwrap();
        let eps = 0.25;
        let k: f64 = 2.0;
        let expected = 5e4 + k / eps * h * (2.0 * p.half_width / (k.sqrt() * h * h)).ln().powf(2.0 / 3.0);
        assert!((ceiling_cl(1, x, k, &p).unwrap() - expected).abs() < 1e-9);
        assert!(ceiling_cl(1, 2.0 * p.half_width, k, &p).is_err());
        assert!(ceiling_cl(5, 0.0, k, &p).is_err());
    }

    #[test]
    fn ceiling_monotone_and_nested() {
        let p = probe_params(1e6);
        for j in 1..=4u32 {
            let mut prev = 0.0;
            for s in 0..=2000 {
                let x = p.half_width * s as f64 / 2000.0;
                let c = ceiling_cl(j, x, 1.0, &p).unwrap();
                assert!(c >= prev - 1e-9, "level {j} decreases at {x}");
                assert_eq!(c, ceiling_cl(j, -x, 1.0, &p).unwrap());
                prev = c;
                if j < 4 {
                    assert!(ceiling_cl(j + 1, x, 1.0, &p).unwrap() <= c + 1e-9);
                }
            }
        }
    }

    #[test]
    fn rescale_and_interpolate() {
        let n_tilt = 64.0;
        let c = lazy_config(1, (0, 2), 0.0, 1.0, vec![4], vec![4]);
        let s = EnsembleState::from_curves(&[vec![4, 4, 4]]).unwrap();
        let r = rescale(&c, &s, 1.0, n_tilt).unwrap();
        assert!((r.value(0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let s2 = EnsembleState::from_curves(&[vec![4, 5, 4]]).unwrap();
        let r2 = rescale(&c, &s2, 1.0, n_tilt).unwrap();
        let dt = 1.0 / 16.0;
        let mid = r2.value(0, dt / 2.0).unwrap();
        assert!((mid - (r2.value(0, 0.0).unwrap() + r2.value(0, dt).unwrap()) / 2.0).abs() < 1e-12);
        assert!(r2.value(0, 3.0 * dt).is_err());
        assert!(r2.value(0, -dt).is_err());
    }

    #[test]
    fn modulus_examples() {
        let line = RescaledEnsemble::from_knots(0.0, 0.1, vec![(0..=10).map(|k| k as f64 * 0.1).collect()]).unwrap();
        assert!((line.modulus(0.25, (0.0, 1.0)).unwrap() - 0.25).abs() < 1e-12);
        let flat = RescaledEnsemble::from_knots(0.0, 0.1, vec![vec![3.0; 11]]).unwrap();
        assert_eq!(flat.modulus(0.3, (0.0, 1.0)).unwrap(), 0.0);
        assert!(flat.modulus(0.3, (0.5, 0.5)).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let m = IncrementModel::lazy_srw();
        let b = || EnsembleConfig::builder(m.clone(), 2, (0, 4));
        assert!(b().boundaries(vec![0, 1], vec![1, 0]).build().is_err());
        assert!(b().boundaries(vec![9, 0], vec![0, 0]).build().is_err());
        assert!(b().boundaries(vec![1, -1], vec![1, 0]).build().is_err());
        assert!(EnsembleConfig::builder(m.clone(), 1, (3, 3)).build().is_err());
        assert!(b().tilt(-1.0, 2.0, 1.0).build().is_err());
        assert!(b()
            .boundaries(vec![3, 0], vec![3, 0])
            .ceiling(Some(Boundary::Const(2)))
            .build()
            .is_err());
        let srw = EnsembleConfig::builder(IncrementModel::srw(), 1, (0, 3));
        assert!(srw.clone().boundaries(vec![0], vec![0]).build().is_err());
        assert!(srw.boundaries(vec![0], vec![1]).build().is_ok());
    }

    #[test]
    fn envelopes_and_initial_state() {
        let c = EnsembleConfig::builder(IncrementModel::lazy_srw(), 2, (0, 6))
            .boundaries(vec![2, 0], vec![1, 0])
            .ceiling(Some(Boundary::Const(3)))
            .build()
            .unwrap();
        let up = c.upper_envelope().unwrap();
        let down = c.lower_envelope().unwrap();
        c.check_state(&up).unwrap();
        c.check_state(&down).unwrap();
        assert_eq!(up.curve(0), &[2, 3, 3, 3, 3, 2, 1]);
        assert_eq!(down.curve(1), &[0; 7]);
        let init = c.initial_state().unwrap();
        c.check_state(&init).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn shift_preserves_weight_differences(
            zeta in -3i32..=3,
            a in 0.0f64..2.0,
            b in 1.0f64..3.0,
            moves in prop::collection::vec((0usize..2, 1usize..6, prop::bool::ANY), 0..30),
        ) {
            let c = EnsembleConfig::builder(IncrementModel::lazy_srw(), 2, (0, 6))
                .tilt(a, b, 8.0)
                .boundaries(vec![3, 1], vec![2, 1])
                .build()
                .unwrap();
            let s = c.initial_state().unwrap();
            let mut t = s.clone();
            for (i, j, up) in moves {
                let mut cand = t.clone();
                cand.set(i, j, t.get(i, j) + if up { 1 } else { -1 });
                if c.log_weight(&cand).valid { t = cand; }
            }
            let (cs, ss) = c.shift(&s, zeta as f64).unwrap();
            let (_, ts) = c.shift(&t, zeta as f64).unwrap();
            let before = c.log_weight(&s).value - c.log_weight(&t).value;
            let after = cs.log_weight(&ss).value - cs.log_weight(&ts).value;
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn modulus_monotone_in_delta(vals in prop::collection::vec(-5.0f64..5.0, 12), d1 in 0.01f64..1.0, dd in 0.0f64..1.0) {
            let r = RescaledEnsemble::from_knots(0.0, 0.1, vec![vals]).unwrap();
            let m1 = r.modulus(d1, (0.0, 1.1)).unwrap();
            let m2 = r.modulus(d1 + dd, (0.0, 1.1)).unwrap();
            prop_assert!(m1 <= m2 + 1e-12);
        }
    }
}
