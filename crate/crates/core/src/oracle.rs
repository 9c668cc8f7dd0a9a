//! Exact computations on small instances.
//!
//! [`OracleTable`] runs a forward and a backward transfer sweep over the
//! columns of the interval. Column states are the ordered height vectors
//! between the floor (or a lower cutoff where there is none) and
//! `min(cap, ceiling)`; the transfer weight between consecutive columns is
//! the product of step probabilities times the area factor of the left
//! column. Each column carries its own log-scale so long intervals do not
//! underflow.
//!
//! The trajectory-level checks enumerate every admissible state and are
//! guarded by [`TRAJECTORY_LIMIT`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Boundary, EnsembleConfig, EnsembleState, NO_CEILING, NO_FLOOR};
use crate::error::{Error, Result};
use crate::increments::IncrementModel;
use crate::rng::StreamRng;
use crate::sampler::{check_coupling_hypotheses, log_acceptance_ratio, MoveProposal};

/// Largest number of trajectories the enumeration checks will visit.
pub const TRAJECTORY_LIMIT: usize = 2_000_000;

/// All ordered vectors `cap >= x_1 >= ... >= x_n >= floor`, further bounded
/// by `ceil` on `x_1`, in lexicographic order.
pub fn enumerate_states(n: usize, cap: i32, floor: i32, ceil: i32) -> Result<Vec<Vec<i32>>> {
    if cap < floor {
        return Err(Error::Domain(format!("cap {cap} below floor {floor}")));
    }
    if n == 0 {
        return Err(Error::Domain("need at least one curve".into()));
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, lo: i32, hi: i32, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let top = cur.last().map_or(hi, |&x| x.min(hi));
        for x in lo..=top {
            cur.push(x);
            rec(n, lo, hi, cur, out);
            cur.pop();
        }
    }
    rec(n, floor, cap.min(ceil), &mut cur, &mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
struct Column {
    /// Flattened states, `n` heights each.
    states: Vec<i32>,
    lo: i32,
    radix: u64,
    index: HashMap<u64, usize>,
}

impl Column {
    fn new(n: usize, lo: i32, hi: i32) -> Self {
        let mut states = Vec::new();
        if hi >= lo {
            for s in enumerate_states(n, hi, lo, hi).expect("bounds checked") {
                states.extend(s);
            }
        }
        let radix = (hi - lo).max(0) as u64 + 1;
        let mut col = Self { states, lo, radix, index: HashMap::new() };
        for k in 0..col.len(n) {
            let key = col.key(&col.states[k * n..(k + 1) * n]);
            col.index.insert(key, k);
        }
        col
    }

    fn len(&self, n: usize) -> usize {
        self.states.len() / n
    }

    fn key(&self, x: &[i32]) -> u64 {
        x.iter().fold(0u64, |acc, &h| acc * self.radix + (h - self.lo) as u64)
    }

    fn find(&self, x: &[i32]) -> Option<usize> {
        if x.iter().any(|&h| h < self.lo || (h - self.lo) as u64 >= self.radix) {
            return None;
        }
        self.index.get(&self.key(x)).copied()
    }
}

/// Exact partition function with the bound on the mass cut off by the
/// height window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub z: f64,
    pub log_z: f64,
    pub truncation_bound: f64,
}

/// One-point law of a curve at a site, heights in grid units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub curve: usize,
    pub site: i64,
    pub heights: Vec<i32>,
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn prob_of(&self, h: i32) -> f64 {
        self.heights.iter().position(|&x| x == h).map_or(0.0, |k| self.probs[k])
    }

    /// `P(X <= t)`.
    pub fn cdf(&self, t: i32) -> f64 {
        self.heights.iter().zip(&self.probs).filter(|(&h, _)| h <= t).map(|(_, p)| p).sum()
    }
}

/// Forward and backward transfer tables for one configuration.
#[derive(Debug, Clone)]
pub struct OracleTable {
    config: EnsembleConfig,
    cap: i32,
    lower: i32,
    columns: Vec<Column>,
    forward: Vec<Vec<f64>>,
    forward_scale: Vec<f64>,
    backward: Vec<Vec<f64>>,
    backward_scale: Vec<f64>,
    log_norm: f64,
    truncation_bound: f64,
}

/// Default height cap: the highest ceiling value when the ceiling is finite
/// everywhere, otherwise the top boundary plus eight diffusive widths.
pub fn default_cap(config: &EnsembleConfig) -> i32 {
    let top = config.u()[0].max(config.v()[0]);
    match config.ceiling() {
        Some(g) if g.iter().all(|&x| x != NO_CEILING) => *g.iter().max().unwrap(),
        _ => top + band(config),
    }
}

fn band(config: &EnsembleConfig) -> i32 {
    let m = config.model();
    let reach = m.max_offset().max(-m.min_offset()).max(1) as f64;
    (8.0 * (config.len() as f64).sqrt() * reach).ceil() as i32
}

/// Lower cutoff used at sites without a floor: as far below the bottom
/// boundary as the cap is above the top boundary (at least one band).
pub fn default_lower(config: &EnsembleConfig, cap: i32) -> i32 {
    let top = config.u()[0].max(config.v()[0]);
    let bottom = config.u()[config.n() - 1].min(config.v()[config.n() - 1]);
    bottom - (cap - top).max(band(config))
}

impl OracleTable {
    /// Build the tables with the given cap (default: [`default_cap`]).
    pub fn build(config: &EnsembleConfig, cap: Option<i32>) -> Result<Self> {
        let cap = cap.unwrap_or_else(|| default_cap(config));
        let lower = default_lower(config, cap);
        Self::build_with(config, cap, lower)
    }

    /// Build with an explicit cap and lower cutoff for floorless sites.
    pub fn build_with(config: &EnsembleConfig, cap: i32, lower: i32) -> Result<Self> {
        let (n, w) = (config.n(), config.width());
        if cap < config.u()[0].max(config.v()[0]) {
            return Err(Error::Domain(format!("cap {cap} below the top boundary values")));
        }
        if lower > config.u()[n - 1].min(config.v()[n - 1]) {
            return Err(Error::Domain(format!("lower cutoff {lower} above the bottom boundary values")));
        }
        let bounds: Vec<(i32, i32)> = (0..w)
            .map(|j| {
                let h = config.floor()[j];
                (if h == NO_FLOOR { lower } else { h }, cap.min(config.ceiling_at(j)))
            })
            .collect();
        let mut columns: Vec<Column> = bounds.iter().map(|&(lo, hi)| Column::new(n, lo, hi)).collect();
        // boundary columns are point masses
        let pin = |x: &[i32]| {
            let lo = *x.iter().min().unwrap();
            let hi = *x.iter().max().unwrap();
            let mut c = Column { states: x.to_vec(), lo, radix: (hi - lo) as u64 + 1, index: HashMap::new() };
            let key = c.key(x);
            c.index.insert(key, 0);
            c
        };
        columns[0] = pin(config.u());
        columns[w - 1] = pin(config.v());

        let model = config.model();
        let coef: Vec<f64> = (0..n).map(|i| config.tilt_coefficient(i)).collect();
        let total: usize = columns.iter().map(|c| c.len(n)).sum();
        if total.saturating_mul(model.offsets().len().pow(n as u32)) > 400_000_000 {
            return Err(Error::TooLarge { size: total, limit: 400_000_000 / model.offsets().len().pow(n as u32) });
        }

        let transitions = |j: usize| -> Vec<(usize, usize, f64)> {
            let mut out = Vec::new();
            for a in 0..columns[j].len(n) {
                successors(config, &columns, &coef, j, a, |b, wt| out.push((a, b, wt)));
            }
            out
        };

        let mut forward = vec![vec![1.0]];
        let mut forward_scale = vec![0.0];
        let mut trans = Vec::with_capacity(w - 1);
        for j in 0..w - 1 {
            let t = transitions(j);
            let mut next = vec![0.0; columns[j + 1].len(n)];
            for &(a, b, wt) in &t {
                next[b] += forward[j][a] * wt;
            }
            let (next, s) = rescale(next);
            forward.push(next);
            forward_scale.push(forward_scale[j] + s);
            trans.push(t);
        }
        let mut backward = vec![Vec::new(); w];
        let mut backward_scale = vec![0.0; w];
        backward[w - 1] = vec![1.0];
        for j in (0..w - 1).rev() {
            let mut prev = vec![0.0; columns[j].len(n)];
            for &(a, b, wt) in &trans[j] {
                prev[a] += wt * backward[j + 1][b];
            }
            let (prev, s) = rescale(prev);
            backward[j] = prev;
            backward_scale[j] = backward_scale[j + 1] + s;
        }
        let log_norm: f64 = (0..n)
            .map(|i| model.log_bridge_prob(config.len(), config.v()[i] as i64 - config.u()[i] as i64))
            .sum();
        let mut table = Self {
            config: config.clone(),
            cap,
            lower,
            columns,
            forward,
            forward_scale,
            backward,
            backward_scale,
            log_norm,
            truncation_bound: 0.0,
        };
        table.truncation_bound = table.compute_truncation_bound(&bounds);
        Ok(table)
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn cap(&self) -> i32 {
        self.cap
    }

    pub fn lower_cutoff(&self) -> i32 {
        self.lower
    }

    /// Number of states in column `col`.
    pub fn column_size(&self, col: usize) -> usize {
        self.columns[col].len(self.config.n())
    }

    /// Forward table at a column and its log-scale.
    pub fn forward(&self, col: usize) -> (&[f64], f64) {
        (&self.forward[col], self.forward_scale[col])
    }

    pub fn backward(&self, col: usize) -> (&[f64], f64) {
        (&self.backward[col], self.backward_scale[col])
    }

    /// `ln` of the unnormalised total weight, computed at column `col`.
    pub fn log_raw_weight_at(&self, col: usize) -> f64 {
        let s: f64 = self.forward[col].iter().zip(&self.backward[col]).map(|(f, b)| f * b).sum();
        s.ln() + self.forward_scale[col] + self.backward_scale[col]
    }

    /// `ln` of the unnormalised total weight `Σ exp(log_weight)`.
    pub fn log_raw_weight(&self) -> f64 {
        self.log_raw_weight_at(0)
    }

    pub fn partition(&self) -> Partition {
        let log_z = self.log_raw_weight() - self.log_norm;
        Partition { z: log_z.exp(), log_z, truncation_bound: self.truncation_bound }
    }

    /// `Z` evaluated at column `col` (identical across columns up to
    /// rounding).
    pub fn partition_at(&self, col: usize) -> f64 {
        (self.log_raw_weight_at(col) - self.log_norm).exp()
    }

    /// Law of the whole column `col`: each height vector with its
    /// probability.
    pub fn column_law(&self, col: usize) -> Result<Vec<(Vec<i32>, f64)>> {
        if col >= self.columns.len() {
            return Err(Error::Domain(format!("column {col} outside the interval")));
        }
        let n = self.config.n();
        let c = &self.columns[col];
        let weights: Vec<f64> = self.forward[col].iter().zip(&self.backward[col]).map(|(f, b)| f * b).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numerical("configuration carries no mass".into()));
        }
        Ok((0..c.len(n))
            .map(|k| (c.states[k * n..(k + 1) * n].to_vec(), weights[k] / total))
            .collect())
    }

    /// One-point law of curve `i` at lattice site `site`.
    pub fn marginal(&self, i: usize, site: i64) -> Result<Marginal> {
        if i >= self.config.n() {
            return Err(Error::Domain(format!("curve {i} out of range")));
        }
        if site < self.config.left() || site > self.config.right() {
            return Err(Error::Domain(format!(
                "site {site} outside [{}, {}]",
                self.config.left(),
                self.config.right()
            )));
        }
        let law = self.column_law((site - self.config.left()) as usize)?;
        let mut acc: std::collections::BTreeMap<i32, f64> = Default::default();
        for (x, p) in law {
            *acc.entry(x[i]).or_default() += p;
        }
        Ok(Marginal {
            curve: i,
            site,
            heights: acc.keys().copied().collect(),
            probs: acc.values().copied().collect(),
        })
    }

    /// Exact draw from the (window-restricted) ensemble by sequential
    /// sampling along the backward tables.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<EnsembleState> {
        let config = &self.config;
        let (n, w) = (config.n(), config.width());
        if !(self.backward[0].first().copied().unwrap_or(0.0) > 0.0) {
            return Err(Error::Numerical("configuration carries no mass".into()));
        }
        let coef: Vec<f64> = (0..n).map(|i| config.tilt_coefficient(i)).collect();
        let mut heights = vec![0i32; n * w];
        let mut a = 0usize;
        let mut cand: Vec<(usize, f64)> = Vec::new();
        for j in 0..w {
            if j > 0 {
                cand.clear();
                successors(config, &self.columns, &coef, j - 1, a, |b, wt| {
                    cand.push((b, wt * self.backward[j][b]))
                });
                let total: f64 = cand.iter().map(|c| c.1).sum();
                let mut u = rng.uniform() * total;
                a = cand.last().expect("reachable successor").0;
                for &(b, wt) in &cand {
                    if wt > 0.0 && u < wt {
                        a = b;
                        break;
                    }
                    u -= wt;
                }
            }
            let x = &self.columns[j].states[a * n..(a + 1) * n];
            for i in 0..n {
                heights[i * w + j] = x[i];
            }
        }
        EnsembleState::from_flat(n, w, heights)
    }

    /// Upper bound on `Z(cap') - Z(cap)` for any larger window: the weight
    /// of the top curve leaving through the cap plus that of the bottom curve
    /// leaving through the lower cutoff, with the other curves unconstrained
    /// by ordering. Each single-curve weight is computed over a second band
    /// beyond the window; mass outside that band is neglected.
    fn compute_truncation_bound(&self, bounds: &[(i32, i32)]) -> f64 {
        let config = &self.config;
        let n = config.n();
        let margin = (self.cap - config.u()[0].max(config.v()[0])).max(band(config));
        let hard: Vec<(i32, i32)> = (0..config.width())
            .map(|j| {
                let h = config.floor()[j];
                let lo = if h == NO_FLOOR { self.lower - margin } else { h };
                (lo, config.ceiling_at(j).min(self.cap + margin))
            })
            .collect();
        let mut log_total = vec![0.0; n];
        let mut log_exit = vec![f64::NEG_INFINITY; n];
        for i in 0..n {
            let (t, e) = single_curve_exit(config, i, bounds, &hard);
            log_total[i] = t;
            log_exit[i] = e;
        }
        let sum_total: f64 = log_total.iter().sum();
        let mut bound = 0.0;
        let mut curves = vec![0];
        if n > 1 {
            curves.push(n - 1);
        }
        for i in curves {
            if log_exit[i] > f64::NEG_INFINITY {
                bound += (log_exit[i] + sum_total - log_total[i] - self.log_norm).exp();
            }
        }
        bound
    }
}

/// Calls `emit(b, weight)` for every state `b` of column `j + 1` reachable
/// from state `a` of column `j`, with the increment probability times the
/// area factor of column `j`.
fn successors(config: &EnsembleConfig, columns: &[Column], coef: &[f64], j: usize, a: usize, mut emit: impl FnMut(usize, f64)) {
    let n = config.n();
    let model = config.model();
    let (from, to) = (&columns[j], &columns[j + 1]);
    let reference = match config.floor()[j] {
        NO_FLOOR => 0,
        h => h,
    };
    let offs = model.offsets();
    let x = &from.states[a * n..(a + 1) * n];
    let tilt: f64 = (0..n).map(|i| coef[i] * (x[i] - reference) as f64).sum();
    let mut y = vec![0i32; n];
    let mut digits = vec![0usize; n];
    'odometer: loop {
        for i in 0..n {
            y[i] = x[i] + offs[digits[i]];
        }
        if let Some(b) = to.find(&y) {
            let lp: f64 = digits.iter().map(|&d| model.log_prob(offs[d])).sum();
            emit(b, (lp - tilt).exp());
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < offs.len() {
                continue 'odometer;
            }
            *d = 0;
        }
        break;
    }
}

/// Exact draw of a single curve (`n = 1`) confined to `[lower, cap]` at
/// floorless sites and `[floor, cap]` elsewhere, by dense backward tables.
/// Much cheaper than [`OracleTable`] for long intervals.
pub fn sample_single_curve(config: &EnsembleConfig, cap: i32, lower: i32, rng: &mut StreamRng) -> Result<Vec<i32>> {
    if config.n() != 1 {
        return Err(Error::Domain(format!("single-curve sampler needs n = 1, got {}", config.n())));
    }
    let w = config.width();
    let model = config.model();
    let c = config.tilt_coefficient(0);
    let (u, v) = (config.u()[0], config.v()[0]);
    let bounds: Vec<(i32, i32)> = (0..w)
        .map(|j| match j {
            0 => (u, u),
            _ if j == w - 1 => (v, v),
            _ => {
                let h = config.floor()[j];
                (if h == NO_FLOOR { lower } else { h }, cap.min(config.ceiling_at(j)))
            }
        })
        .collect();
    let offs = model.offsets();
    let probs = model.probs();
    // beta[j][x - lo_j]: weight of completing the path from height x at column j
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); w];
    beta[w - 1] = vec![1.0];
    for j in (0..w - 1).rev() {
        let (lo, hi) = bounds[j];
        let (nlo, nhi) = bounds[j + 1];
        let reference = match config.floor()[j] {
            NO_FLOOR => 0,
            h => h,
        };
        let next = &beta[j + 1];
        let mut cur = vec![0.0; (hi - lo + 1).max(0) as usize];
        for (idx, slot) in cur.iter_mut().enumerate() {
            let x = lo + idx as i32;
            let mut s = 0.0;
            for (&k, &p) in offs.iter().zip(probs) {
                let y = x + k;
                if y >= nlo && y <= nhi {
                    s += p * next[(y - nlo) as usize];
                }
            }
            *slot = s * (-c * (x - reference) as f64).exp();
        }
        let peak = cur.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Unreachable(format!("no admissible path through column {j}")));
        }
        cur.iter_mut().for_each(|x| *x /= peak);
        beta[j] = cur;
    }
    let mut path = Vec::with_capacity(w);
    let mut x = u;
    path.push(x);
    let mut weights = Vec::with_capacity(offs.len());
    for j in 1..w {
        let (lo, hi) = bounds[j];
        weights.clear();
        for (&k, &p) in offs.iter().zip(probs) {
            let y = x + k;
            weights.push(if y >= lo && y <= hi { p * beta[j][(y - lo) as usize] } else { 0.0 });
        }
        let total: f64 = weights.iter().sum();
        let mut t = rng.uniform() * total;
        let mut pick = weights.iter().rposition(|&q| q > 0.0).expect("positive completion weight");
        for (m, &q) in weights.iter().enumerate() {
            if q > 0.0 && t < q {
                pick = m;
                break;
            }
            t -= q;
        }
        x += offs[pick];
        path.push(x);
    }
    Ok(path)
}

fn rescale(mut v: Vec<f64>) -> (Vec<f64>, f64) {
    let peak = v.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
        (v, peak.ln())
    } else {
        (v, f64::NEG_INFINITY)
    }
}

/// Single-curve tilted bridge weights for curve `i` confined to `hard`:
/// `(ln total, ln weight of paths leaving the window)`.
fn single_curve_exit(config: &EnsembleConfig, i: usize, window: &[(i32, i32)], hard: &[(i32, i32)]) -> (f64, f64) {
    let model = config.model();
    let c = config.tilt_coefficient(i);
    let lo = hard.iter().map(|b| b.0).min().unwrap();
    let hi = hard.iter().map(|b| b.1).max().unwrap();
    let size = (hi - lo + 1) as usize;
    let mut inside = vec![0.0; size];
    let mut total = vec![0.0; size];
    let u = config.u()[i];
    inside[(u - lo) as usize] = 1.0;
    total[(u - lo) as usize] = 1.0;
    let mut log_scale = 0.0;
    for j in 0..config.len() {
        let reference = match config.floor()[j] {
            NO_FLOOR => 0,
            h => h,
        };
        let mut ni = vec![0.0; size];
        let mut nt = vec![0.0; size];
        let (hlo, hhi) = hard[j + 1];
        let (wlo, whi) = window[j + 1];
        for x in 0..size {
            if total[x] == 0.0 {
                continue;
            }
            let height = lo + x as i32;
            let tilt = (-c * (height - reference) as f64).exp();
            for (&k, &p) in model.offsets().iter().zip(model.probs()) {
                let y = height + k;
                if y < hlo || y > hhi {
                    continue;
                }
                let idx = (y - lo) as usize;
                let wgt = p * tilt;
                nt[idx] += total[x] * wgt;
                if y >= wlo && y <= whi {
                    ni[idx] += inside[x] * wgt;
                }
            }
        }
        let peak = nt.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return (f64::NEG_INFINITY, f64::NEG_INFINITY);
        }
        nt.iter_mut().for_each(|x| *x /= peak);
        ni.iter_mut().for_each(|x| *x /= peak);
        log_scale += peak.ln();
        total = nt;
        inside = ni;
    }
    let v = (config.v()[i] - lo) as usize;
    let exit = (total[v] - inside[v]).max(0.0);
    (total[v].ln() + log_scale, if exit > 0.0 { exit.ln() + log_scale } else { f64::NEG_INFINITY })
}

/// `Z` and truncation bound with the given cap (default cap when `None`).
pub fn partition(config: &EnsembleConfig, cap: Option<i32>) -> Result<Partition> {
    Ok(OracleTable::build(config, cap)?.partition())
}

/// Probability that the bridge from `x` to `y` in `steps` steps stays
/// non-negative at every interior time.
pub fn ballot(model: &IncrementModel, x: i64, y: i64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Domain("steps must be positive".into()));
    }
    if x < 0 || y < 0 {
        return Err(Error::Domain(format!("endpoints ({x}, {y}) must be non-negative")));
    }
    if model.log_bridge_prob(steps, y - x) == f64::NEG_INFINITY {
        return Err(Error::Unreachable(format!("{y} from {x} in {steps} steps")));
    }
    let (xi, yi) = (to_i32(x)?, to_i32(y)?);
    let base = EnsembleConfig::builder(model.clone(), 1, (0, steps as i64)).boundaries(vec![xi], vec![yi]);
    let floored = base.clone().floor_const(0).build()?;
    let free = base.no_floor().build()?;
    let cap = default_cap(&floored);
    let lower = default_lower(&free, cap);
    let num = OracleTable::build_with(&floored, cap, lower)?.log_raw_weight();
    let den = OracleTable::build_with(&free, cap, lower)?.log_raw_weight();
    Ok((num - den).exp().min(1.0))
}

fn to_i32(x: i64) -> Result<i32> {
    i32::try_from(x).map_err(|_| Error::Domain(format!("{x} does not fit the height range")))
}

/// Every admissible state within `cap` with its log-weight.
#[derive(Debug, Clone)]
pub struct Trajectories {
    pub n: usize,
    pub width: usize,
    pub heights: Vec<i32>,
    pub log_weights: Vec<f64>,
}

impl Trajectories {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn state(&self, k: usize) -> &[i32] {
        let s = self.n * self.width;
        &self.heights[k * s..(k + 1) * s]
    }

    /// `ln Σ exp(log_weight)`.
    pub fn log_total(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Enumerate every admissible state of `config` whose top curve stays at or
/// below `cap` (and whose bottom curve stays at or above `lower` where there
/// is no floor), refusing to exceed `limit` states.
pub fn enumerate_trajectories(config: &EnsembleConfig, cap: i32, lower: i32, limit: usize) -> Result<Trajectories> {
    let table = OracleTable::build_with(config, cap, lower)?;
    let (n, w) = (config.n(), config.width());
    // count paths with a forward pass over unit weights
    let mut count = vec![1u128];
    let mut edges: Vec<Vec<Vec<usize>>> = Vec::with_capacity(w - 1);
    for j in 0..w - 1 {
        let (from, to) = (&table.columns[j], &table.columns[j + 1]);
        let mut adj = vec![Vec::new(); from.len(n)];
        for (a, list) in adj.iter_mut().enumerate() {
            let x = &from.states[a * n..(a + 1) * n];
            for b in 0..to.len(n) {
                let y = &to.states[b * n..(b + 1) * n];
                if x.iter().zip(y).all(|(&p, &q)| config.model().log_prob(q - p).is_finite()) {
                    list.push(b);
                }
            }
        }
        let mut next = vec![0u128; to.len(n)];
        for (a, list) in adj.iter().enumerate() {
            for &b in list {
                next[b] = next[b].saturating_add(count[a]);
            }
        }
        count = next;
        edges.push(adj);
    }
    let total = count.first().copied().unwrap_or(0);
    if total > limit as u128 {
        return Err(Error::TooLarge { size: total.min(usize::MAX as u128) as usize, limit });
    }
    // prune to columns that can reach the right boundary
    let mut alive: Vec<Vec<bool>> = vec![Vec::new(); w];
    alive[w - 1] = vec![true];
    for j in (0..w - 1).rev() {
        alive[j] = edges[j].iter().map(|l| l.iter().any(|&b| alive[j + 1][b])).collect();
    }
    let mut out = Trajectories { n, width: w, heights: Vec::new(), log_weights: Vec::new() };
    let mut path = vec![0usize; w];
    let mut buf = vec![0i32; n * w];
    fn walk(
        j: usize,
        path: &mut Vec<usize>,
        buf: &mut Vec<i32>,
        table: &OracleTable,
        edges: &[Vec<Vec<usize>>],
        alive: &[Vec<bool>],
        out: &mut Trajectories,
    ) {
        let (n, w) = (out.n, out.width);
        let c = &table.columns[j];
        let a = path[j];
        for i in 0..n {
            buf[i * w + j] = c.states[a * n + i];
        }
        if j == w - 1 {
            let state = EnsembleState::from_flat(n, w, buf.clone()).expect("shape");
            let lw = table.config.log_weight(&state);
            if lw.valid {
                out.heights.extend_from_slice(buf);
                out.log_weights.push(lw.value);
            }
            return;
        }
        for &b in &edges[j][a] {
            if alive[j + 1][b] {
                path[j + 1] = b;
                walk(j + 1, path, buf, table, edges, alive, out);
            }
        }
    }
    if alive[0][0] {
        walk(0, &mut path, &mut buf, &table, &edges, &alive, &mut out);
    }
    Ok(out)
}

fn with_cap_ceiling(config: &EnsembleConfig, cap: i32) -> Result<EnsembleConfig> {
    let g: Vec<Option<i32>> = (0..config.width()).map(|j| Some(config.ceiling_at(j).min(cap))).collect();
    config.to_builder().ceiling(Some(Boundary::Table(g))).build()
}

/// Largest total-variation distance between the conditional law of the top
/// `k` curves on the open subinterval given everything else, and the law of
/// the induced configuration on the subinterval (boundary values from the
/// conditioning state, curve `k` or the floor as floor, the ceiling
/// combined with the cap). The enumerated space is capped at `cap`.
pub fn gibbs_consistency_check(config: &EnsembleConfig, k: usize, sub: (i64, i64), cap: i32) -> Result<f64> {
    let n = config.n();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k = {k} outside 1..={n}")));
    }
    let (s0, s1) = sub;
    if s0 >= s1 || s0 < config.left() || s1 > config.right() {
        return Err(Error::Domain(format!(
            "subinterval [{s0}, {s1}] not inside [{}, {}]",
            config.left(),
            config.right()
        )));
    }
    let capped = with_cap_ceiling(config, cap)?;
    let lower = default_lower(config, cap);
    let traj = enumerate_trajectories(&capped, cap, lower, TRAJECTORY_LIMIT)?;
    let w = config.width();
    let (c0, c1) = ((s0 - config.left()) as usize, (s1 - config.left()) as usize);
    let is_inner = |i: usize, j: usize| i < k && j > c0 && j < c1;
    // group trajectories by their outer part
    let mut groups: HashMap<Vec<i32>, Vec<usize>> = HashMap::new();
    for t in 0..traj.len() {
        let s = traj.state(t);
        let key: Vec<i32> = (0..n)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .filter(|&(i, j)| !is_inner(i, j))
            .map(|(i, j)| s[i * w + j])
            .collect();
        groups.entry(key).or_default().push(t);
    }
    let mut worst: f64 = 0.0;
    let sub_w = c1 - c0 + 1;
    for members in groups.values() {
        let first = traj.state(members[0]);
        let u: Vec<i32> = (0..k).map(|i| first[i * w + c0]).collect();
        let v: Vec<i32> = (0..k).map(|i| first[i * w + c1]).collect();
        let floor: Vec<Option<i32>> = (c0..=c1)
            .map(|j| {
                if k < n {
                    Some(first[k * w + j])
                } else {
                    let h = config.floor()[j];
                    (h != NO_FLOOR).then_some(h)
                }
            })
            .collect();
        let ceiling: Vec<Option<i32>> = (c0..=c1).map(|j| Some(capped.ceiling_at(j))).collect();
        let sub_config = EnsembleConfig::builder(config.model_arc().clone(), k, (s0, s1))
            .tilt(config.a(), config.b(), config.tilt_normalizer())
            .boundaries(u, v)
            .floor(Boundary::Table(floor))
            .ceiling(Some(Boundary::Table(ceiling)))
            .build()?;
        let sub_table = OracleTable::build_with(&sub_config, cap, lower)?;
        let log_sub_total = sub_table.log_raw_weight();
        let group_weights: Vec<f64> = members.iter().map(|&t| traj.log_weights[t]).collect();
        let log_group_total = log_sum_exp(&group_weights);
        let mut tv = 0.0;
        let mut covered = 0.0;
        for &t in members {
            let s = traj.state(t);
            let mut inner = Vec::with_capacity(k * sub_w);
            for i in 0..k {
                inner.extend_from_slice(&s[i * w + c0..=i * w + c1]);
            }
            let inner = EnsembleState::from_flat(k, sub_w, inner)?;
            let q = (sub_config.log_weight(&inner).as_f64() - log_sub_total).exp();
            let p = (traj.log_weights[t] - log_group_total).exp();
            tv += (p - q).abs();
            covered += q;
        }
        tv += (1.0 - covered).max(0.0);
        worst = worst.max(0.5 * tv);
    }
    Ok(worst)
}

/// Largest `|π(s) P(s, s') - π(s') P(s', s)|` over single-site neighbour
/// pairs of the state space capped at `cap`, with `P` the Glauber kernel.
pub fn detailed_balance_check(config: &EnsembleConfig, cap: i32) -> Result<f64> {
    if config.width() < 3 {
        return Err(Error::Domain("no interior sites".into()));
    }
    let capped = with_cap_ceiling(config, cap)?;
    let lower = default_lower(config, cap);
    let traj = enumerate_trajectories(&capped, cap, lower, TRAJECTORY_LIMIT)?;
    let log_total = traj.log_total();
    let (n, w) = (config.n(), config.width());
    let mut index: HashMap<&[i32], usize> = HashMap::with_capacity(traj.len());
    for t in 0..traj.len() {
        index.insert(traj.state(t), t);
    }
    let moves = (n * (w - 2) * 2) as f64;
    let kernel = |s: &EnsembleState, mv: &MoveProposal| log_acceptance_ratio(&capped, s, mv).exp().min(1.0) / moves;
    let mut worst: f64 = 0.0;
    for t in 0..traj.len() {
        let s = EnsembleState::from_flat(n, w, traj.state(t).to_vec())?;
        let pi_s = (traj.log_weights[t] - log_total).exp();
        for i in 0..n {
            for col in 1..w - 1 {
                for sigma in [-1, 1] {
                    let mut next = s.clone();
                    next.set(i, col, s.get(i, col) + sigma);
                    let Some(&t2) = index.get(next.heights()) else { continue };
                    let pi_n = (traj.log_weights[t2] - log_total).exp();
                    let fwd = kernel(&s, &MoveProposal { curve: i, col, sigma, u: 0.0 });
                    let back = kernel(&next, &MoveProposal { curve: i, col, sigma: -sigma, u: 0.0 });
                    worst = worst.max((pi_s * fwd - pi_n * back).abs());
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FosdOutcome {
    pub holds: bool,
    /// Minimum over curves, sites and thresholds of `P_down(X <= t) - P_up(X <= t)`.
    pub worst_margin: f64,
}

/// Compare every one-point CDF of the lower configuration against the upper
/// one.
pub fn fosd_check(up: &EnsembleConfig, down: &EnsembleConfig, cap: i32) -> Result<FosdOutcome> {
    check_coupling_hypotheses(up, down)?;
    let lower = default_lower(down, cap);
    let t_up = OracleTable::build_with(up, cap, lower)?;
    let t_down = OracleTable::build_with(down, cap, lower)?;
    let mut worst = f64::INFINITY;
    for i in 0..up.n() {
        for site in up.left()..=up.right() {
            let m_up = t_up.marginal(i, site)?;
            let m_down = t_down.marginal(i, site)?;
            let lo = m_up.heights[0].min(m_down.heights[0]);
            let hi = *m_up.heights.last().unwrap().max(m_down.heights.last().unwrap());
            for t in lo..=hi {
                worst = worst.min(m_down.cdf(t) - m_up.cdf(t));
            }
        }
    }
    Ok(FosdOutcome { holds: worst >= -1e-12, worst_margin: worst })
}

/// Total-variation distance between the path laws of the bridge from 0 to
/// `y` in `steps` steps under `model` and under its exponential tilt with
/// drift `y / steps`, over paths that stay within `[-cap, cap]`.
pub fn tilt_invariance_check(model: &IncrementModel, y: i64, steps: usize, cap: i32) -> Result<f64> {
    if steps == 0 || model.log_bridge_prob(steps, y) == f64::NEG_INFINITY {
        return Err(Error::Unreachable(format!("{y} from 0 in {steps} steps")));
    }
    let drift = y as f64 / steps as f64 * model.grid_step();
    let tilted = model.tilted(model.tilt_theta(drift)?);
    let offs = model.offsets();
    let size = (offs.len() as f64).powi(steps as i32);
    if size > TRAJECTORY_LIMIT as f64 {
        return Err(Error::TooLarge { size: size as usize, limit: TRAJECTORY_LIMIT });
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut digits = vec![0usize; steps];
    'paths: loop {
        let mut h = 0i64;
        let mut ok = true;
        let (mut la, mut lb) = (0.0, 0.0);
        for &d in &digits {
            h += offs[d] as i64;
            ok &= h.abs() <= cap as i64;
            la += model.log_prob(offs[d]);
            lb += tilted.log_prob(offs[d]);
        }
        if ok && h == y {
            a.push(la);
            b.push(lb);
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < offs.len() {
                continue 'paths;
            }
            *d = 0;
        }
        break;
    }
    let (za, zb) = (log_sum_exp(&a), log_sum_exp(&b));
    Ok(0.5 * a.iter().zip(&b).map(|(x, y)| ((x - za).exp() - (y - zb).exp()).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionRatio {
    pub ratio: f64,
    pub z: f64,
    pub truncation_bound: f64,
    /// Whether `max(A, B) <= H^2` and `|I| >= 2 max(A, B)^{1/2} H^2` hold.
    pub hypotheses_hold: bool,
}

/// `Z / exp(-(A^{3/2} + B^{3/2} + |I| / H^2))` for a single curve with
/// tilt `λ` above a floor at 0 and boundary heights `A H`, `B H` rounded
/// to the grid.
pub fn partition_lb_ratio(
    model: &IncrementModel,
    lambda: f64,
    a_height: f64,
    b_height: f64,
    interval_len: usize,
    n_tilt: f64,
    cap: Option<i32>,
) -> Result<PartitionRatio> {
    if !(lambda > 0.0 && n_tilt > 0.0 && a_height >= 0.0 && b_height >= 0.0 && interval_len >= 1) {
        return Err(Error::Domain("need λ, N > 0, A, B >= 0 and a positive interval".into()));
    }
    let h = crate::ensemble::fluctuation_scale(lambda, n_tilt);
    let m = a_height.max(b_height);
    let hypotheses_hold = m <= h * h && interval_len as f64 >= 2.0 * m.sqrt() * h * h;
    let grid = |x: f64| (x * h / model.grid_step()).round() as i32;
    let config = EnsembleConfig::builder(model.clone(), 1, (0, interval_len as i64))
        .tilt(lambda, 1.0, n_tilt)
        .boundaries(vec![grid(a_height)], vec![grid(b_height)])
        .build()?;
    let p = partition(&config, cap)?;
    let reference = -(a_height.powf(1.5) + b_height.powf(1.5) + interval_len as f64 / (h * h));
    Ok(PartitionRatio {
        ratio: (p.log_z - reference).exp(),
        z: p.z,
        truncation_bound: p.truncation_bound,
        hypotheses_hold,
    })
}

/// Exact sampler for a single unconstrained bridge, by backward
/// convolution tables.
#[derive(Debug, Clone)]
pub struct BridgeSampler {
    model: IncrementModel,
    steps: usize,
    displacement: i64,
    /// `log_table[t][d - min*(steps-t)]` = ln P(S_{steps-t} = d).
    log_table: Vec<Vec<f64>>,
}

impl BridgeSampler {
    pub fn new(model: &IncrementModel, steps: usize, displacement: i64) -> Result<Self> {
        if model.log_bridge_prob(steps, displacement) == f64::NEG_INFINITY {
            return Err(Error::Unreachable(format!("{displacement} in {steps} steps")));
        }
        let (lo, hi) = (model.min_offset() as i64, model.max_offset() as i64);
        // tables for remaining r = 0..=steps
        let mut by_remaining = vec![vec![0.0f64]];
        for r in 1..=steps {
            let prev: &Vec<f64> = &by_remaining[r - 1];
            let mut next = vec![f64::NEG_INFINITY; ((hi - lo) as usize) * r + 1];
            for (i, &lp) in prev.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                for (&k, &p) in model.offsets().iter().zip(model.probs()) {
                    let idx = i + (k as i64 - lo) as usize;
                    next[idx] = log_add(next[idx], lp + p.ln());
                }
            }
            by_remaining.push(next);
        }
        let log_table = (0..=steps).map(|t| by_remaining[steps - t].clone()).collect();
        Ok(Self { model: model.clone(), steps, displacement, log_table })
    }

    fn log_remaining(&self, t: usize, d: i64) -> f64 {
        let r = (self.steps - t) as i64;
        let idx = d - self.model.min_offset() as i64 * r;
        if idx < 0 {
            return f64::NEG_INFINITY;
        }
        self.log_table[t].get(idx as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// One bridge path `S_0 = 0, ..., S_steps = displacement`.
    pub fn sample(&self, rng: &mut StreamRng) -> Vec<i64> {
        let mut path = Vec::with_capacity(self.steps + 1);
        let mut pos = 0i64;
        path.push(pos);
        for t in 0..self.steps {
            let here = self.log_remaining(t, self.displacement - pos);
            let mut u = rng.uniform();
            let mut chosen = None;
            for (&k, &p) in self.model.offsets().iter().zip(self.model.probs()) {
                let q = (p.ln() + self.log_remaining(t + 1, self.displacement - pos - k as i64) - here).exp();
                if q > 0.0 {
                    chosen = Some(k);
                    if u < q {
                        break;
                    }
                    u -= q;
                }
            }
            pos += chosen.expect("reachable bridge has a continuation") as i64;
            path.push(pos);
        }
        path
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
