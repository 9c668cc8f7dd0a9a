//! Increment laws of the underlying random walks.
//!
//! A model is a finite list of offsets `k` (integers, in units of the grid
//! step ε) together with Hamiltonian values `H(k)`. The probability of a step
//! of size `k * ε` is `ε * exp(-H(k)) / Z`; for lattice models ε = 1 and the
//! factor drops out. Only bounded supports are admitted, so every moment
//! generating function is finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation radius (in grid steps) for built-in unbounded laws.
pub const DEFAULT_RADIUS: i32 = 16;

const NORMALIZATION_TOL: f64 = 1e-12;
const CONVEXITY_TOL: f64 = 1e-12;
const BISECTION_WIDTH: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementModel {
    grid_step: f64,
    /// Supported offsets, strictly increasing, in grid units.
    offsets: Vec<i32>,
    /// `H(k)` for each supported offset.
    hamiltonian: Vec<f64>,
    probs: Vec<f64>,
    /// Dense `ln p` table over `min_offset..=max_offset`, `-inf` in gaps.
    dense_log_prob: Vec<f64>,
    normalization: f64,
    mean: f64,
    variance: f64,
    convex: bool,
    contiguous_with_zero: bool,
}

/// Outcome of [`IncrementModel::check_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub convex: bool,
    pub zero_mean: bool,
    pub finite_mgf: bool,
    /// Largest |step| in height units; the MGF is finite because of it.
    pub support_bound: f64,
    /// Support omits 0 or has gaps (e.g. the strict ±1 walk).
    pub periodic: bool,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl IncrementModel {
    /// Lattice model (ε = 1) from `(offset, H)` pairs.
    pub fn build_lattice_model(entries: &[(i32, f64)]) -> Result<Self> {
        Self::from_grid(1.0, entries)
    }

    /// Model on the grid `grid_step * Z` from `(offset in grid units, H)` pairs.
    pub fn from_grid(grid_step: f64, entries: &[(i32, f64)]) -> Result<Self> {
        if !(grid_step.is_finite() && grid_step > 0.0) {
            return Err(Error::InvalidModel(format!("grid step {grid_step} must be positive")));
        }
        if entries.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "support needs at least 2 offsets, got {}",
                entries.len()
            )));
        }
        let mut sorted: Vec<(i32, f64)> = entries.to_vec();
        sorted.sort_by_key(|&(k, _)| k);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidModel(format!("duplicate offset {}", w[0].0)));
            }
        }
        if let Some(&(k, h)) = sorted.iter().find(|(_, h)| !h.is_finite()) {
            return Err(Error::InvalidModel(format!("H({k}) = {h} is not finite")));
        }
        let offsets: Vec<i32> = sorted.iter().map(|&(k, _)| k).collect();
        let hamiltonian: Vec<f64> = sorted.iter().map(|&(_, h)| h).collect();

        let log_weights = hamiltonian.iter().map(|h| grid_step.ln() - h);
        let log_z = log_sum_exp(log_weights.clone());
        let normalization = log_z.exp();
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(Error::InvalidModel(format!(
                "normalization {normalization} is not finite and positive"
            )));
        }
        let probs: Vec<f64> = log_weights.map(|lw| (lw - log_z).exp()).collect();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Numerical(format!("probabilities sum to {total}")));
        }

        let min = offsets[0];
        let max = *offsets.last().unwrap();
        let mut dense_log_prob = vec![f64::NEG_INFINITY; (max - min + 1) as usize];
        for (&k, &p) in offsets.iter().zip(&probs) {
            dense_log_prob[(k - min) as usize] = p.ln();
        }

        let contiguous = offsets.windows(2).all(|w| w[1] == w[0] + 1);
        let contiguous_with_zero = contiguous && min <= 0 && max >= 0;
        let convex = contiguous
            && hamiltonian
                .windows(3)
                .all(|w| w[2] - 2.0 * w[1] + w[0] >= -CONVEXITY_TOL);

        let mean = offsets
            .iter()
            .zip(&probs)
            .map(|(&k, p)| p * k as f64 * grid_step)
            .sum::<f64>();
        let variance = offsets
            .iter()
            .zip(&probs)
            .map(|(&k, p)| p * (k as f64 * grid_step - mean).powi(2))
            .sum::<f64>();

        Ok(Self {
            grid_step,
            offsets,
            hamiltonian,
            probs,
            dense_log_prob,
            normalization,
            mean,
            variance,
            convex,
            contiguous_with_zero,
        })
    }

    /// ε-discretisation of a continuous Hamiltonian: mass at `kε`
    /// proportional to `ε exp(-H(kε))` for `kε` in `[-1/ε, 1/ε]`.
    /// Grid points where `H` is not finite are left out of the support.
    pub fn discretize_continuous(hamiltonian: impl Fn(f64) -> f64, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidModel(format!("ε = {epsilon} must be positive")));
        }
        let kmax = (1.0 / (epsilon * epsilon) + 1e-9).floor() as i32;
        let entries: Vec<(i32, f64)> = (-kmax..=kmax)
            .map(|k| (k, hamiltonian(k as f64 * epsilon)))
            .filter(|(_, h)| h.is_finite())
            .collect();
        if entries.len() < 3 {
            return Err(Error::InvalidModel(format!(
                "ε = {epsilon} leaves only {} usable grid points",
                entries.len()
            )));
        }
        Self::from_grid(epsilon, &entries)
    }

    /// Lazy simple random walk: steps −1, 0, +1 with probabilities 1/4, 1/2, 1/4.
    pub fn lazy_srw() -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self::build_lattice_model(&[(-1, 2.0 * ln2), (0, ln2), (1, 2.0 * ln2)]).unwrap()
    }

    /// Strict ±1 walk. Periodic; flagged by [`Self::check_assumptions`].
    pub fn srw() -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self::build_lattice_model(&[(-1, ln2), (1, ln2)]).unwrap()
    }

    /// `H(k) = beta |k|` truncated to `|k| <= radius`.
    pub fn laplace(beta: f64, radius: i32) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidModel(format!("radius {radius} must be >= 1")));
        }
        let entries: Vec<_> = (-radius..=radius).map(|k| (k, beta * k.abs() as f64)).collect();
        Self::build_lattice_model(&entries)
    }

    /// `H(k) = k^2 / 2` truncated to `|k| <= radius`.
    pub fn gauss(radius: i32) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidModel(format!("radius {radius} must be >= 1")));
        }
        let entries: Vec<_> = (-radius..=radius).map(|k| (k, 0.5 * (k * k) as f64)).collect();
        Self::build_lattice_model(&entries)
    }

    /// Resolve a built-in by name: `lazy-srw`, `srw`, `laplace(beta[, radius])`,
    /// `gauss[(radius)]`.
    pub fn builtin(name: &str) -> Result<Self> {
        let name = name.trim();
        let (head, args) = match name.find('(') {
            Some(open) => {
                let close = name
                    .rfind(')')
                    .filter(|&c| c > open && c == name.len() - 1)
                    .ok_or_else(|| Error::InvalidModel(format!("malformed model name {name:?}")))?;
                let args: Vec<&str> = name[open + 1..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .collect();
                (name[..open].trim(), args)
            }
            None => (name, Vec::new()),
        };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidModel(format!("bad numeric argument {s:?} in {name:?}")))
        };
        let radius = |s: Option<&&str>| -> Result<i32> {
            match s {
                None => Ok(DEFAULT_RADIUS),
                Some(s) => {
                    let r = num(s)?;
                    if r.fract() != 0.0 {
                        return Err(Error::InvalidModel(format!("radius {s} must be an integer")));
                    }
                    Ok(r as i32)
                }
            }
        };
        match (head, args.len()) {
            ("lazy-srw", 0) => Ok(Self::lazy_srw()),
            ("srw", 0) => Ok(Self::srw()),
            ("laplace", 1 | 2) => Self::laplace(num(args[0])?, radius(args.get(1))?),
            ("gauss", 0 | 1) => Self::gauss(radius(args.first())?),
            _ => Err(Error::InvalidModel(format!("unknown model {name:?}"))),
        }
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        let sigma = self.variance.sqrt();
        AssumptionReport {
            convex: self.convex,
            zero_mean: self.mean.abs() <= 1e-10 * sigma,
            finite_mgf: true,
            support_bound: self.max_offset().abs().max(self.min_offset().abs()) as f64
                * self.grid_step,
            periodic: !self.contiguous_with_zero,
        }
    }

    /// Mean of the model exponentially tilted by `theta`.
    pub fn tilted_mean(&self, theta: f64) -> f64 {
        let lw: Vec<f64> = self
            .offsets
            .iter()
            .zip(&self.probs)
            .map(|(&k, p)| p.ln() + theta * k as f64 * self.grid_step)
            .collect();
        let lz = log_sum_exp(lw.iter().copied());
        self.offsets
            .iter()
            .zip(&lw)
            .map(|(&k, l)| (l - lz).exp() * k as f64 * self.grid_step)
            .sum()
    }

    /// The tilt θ whose tilted law has mean `drift`, by bisection.
    pub fn tilt_theta(&self, drift: f64) -> Result<f64> {
        let lo = self.min_offset() as f64 * self.grid_step;
        let hi = self.max_offset() as f64 * self.grid_step;
        if !(drift > lo && drift < hi) {
            return Err(Error::Unsolvable { drift, lo, hi });
        }
        let (mut a, mut b) = (-1.0_f64, 1.0_f64);
        while self.tilted_mean(a) > drift {
            a *= 2.0;
            if a < -1e6 {
                return Err(Error::Numerical(format!("cannot bracket drift {drift}")));
            }
        }
        while self.tilted_mean(b) < drift {
            b *= 2.0;
            if b > 1e6 {
                return Err(Error::Numerical(format!("cannot bracket drift {drift}")));
            }
        }
        while b - a > BISECTION_WIDTH {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.tilted_mean(mid) < drift {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// `H'(k) = H(k) - θ kε + ln M(θ)`, where `M` is the moment generating
    /// function; the tilted law is `p(k) e^{θkε} / M(θ)`.
    pub fn tilted(&self, theta: f64) -> Self {
        if theta == 0.0 {
            return self.clone();
        }
        let log_mgf = log_sum_exp(
            self.offsets
                .iter()
                .zip(&self.probs)
                .map(|(&k, p)| p.ln() + theta * k as f64 * self.grid_step),
        );
        let entries: Vec<(i32, f64)> = self
            .offsets
            .iter()
            .zip(&self.hamiltonian)
            .map(|(&k, h)| (k, h - theta * k as f64 * self.grid_step + log_mgf))
            .collect();
        Self::from_grid(self.grid_step, &entries).expect("tilting preserves validity")
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn offsets(&self) -> &[i32] {
        &self.offsets
    }

    pub fn hamiltonian(&self) -> &[f64] {
        &self.hamiltonian
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn min_offset(&self) -> i32 {
        self.offsets[0]
    }

    pub fn max_offset(&self) -> i32 {
        *self.offsets.last().unwrap()
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn contiguous_support_with_zero(&self) -> bool {
        self.contiguous_with_zero
    }

    /// Probability of a step of `k` grid units (0 outside the support).
    pub fn prob(&self, k: i32) -> f64 {
        self.log_prob(k).exp()
    }

    /// `ln p(k)`, `-inf` outside the support.
    #[inline]
    pub fn log_prob(&self, k: i32) -> f64 {
        let idx = k - self.offsets[0];
        if idx < 0 {
            return f64::NEG_INFINITY;
        }
        self.dense_log_prob
            .get(idx as usize)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Dense `ln p` table starting at [`Self::min_offset`].
    pub fn dense_log_probs(&self) -> &[f64] {
        &self.dense_log_prob
    }

    /// `ln P(S_steps = displacement)` for the walk started at 0, by direct
    /// convolution.
    pub fn log_bridge_prob(&self, steps: usize, displacement: i64) -> f64 {
        let min = self.min_offset() as i64;
        let max = self.max_offset() as i64;
        let steps_i = steps as i64;
        if displacement < min * steps_i || displacement > max * steps_i {
            return f64::NEG_INFINITY;
        }
        if steps == 0 {
            return if displacement == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        // dist[m] = P(S_t = m + min * t), rescaled each step to avoid underflow.
        let mut dist = vec![1.0_f64];
        let mut log_scale = 0.0_f64;
        let width = (max - min) as usize;
        for _ in 0..steps {
            let mut next = vec![0.0_f64; dist.len() + width];
            for (i, &d) in dist.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (&k, &p) in self.offsets.iter().zip(&self.probs) {
                    next[i + (k as i64 - min) as usize] += d * p;
                }
            }
            let peak = next.iter().cloned().fold(0.0, f64::max);
            for x in next.iter_mut() {
                *x /= peak;
            }
            log_scale += peak.ln();
            dist = next;
        }
        let idx = (displacement - min * steps_i) as usize;
        match dist.get(idx) {
            Some(&d) if d > 0.0 => d.ln() + log_scale,
            _ => f64::NEG_INFINITY,
        }
    }

    /// JSON form: `{"grid_step": ε, "entries": [[offset, H], ...]}` with
    /// offsets in height units.
    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            grid_step: self.grid_step,
            entries: self
                .offsets
                .iter()
                .zip(&self.hamiltonian)
                .map(|(&k, &h)| (k as f64 * self.grid_step, h))
                .collect(),
        }
    }

    pub fn from_json(json: &ModelJson) -> Result<Self> {
        let eps = json.grid_step;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidModel(format!("grid_step {eps} must be positive")));
        }
        let entries = json
            .entries
            .iter()
            .map(|&(offset, h)| Ok((to_grid(offset, eps)?, h)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_grid(eps, &entries)
    }
}

/// Convert a height to grid units, rejecting values off the grid.
pub fn to_grid(value: f64, grid_step: f64) -> Result<i32> {
    let k = (value / grid_step).round();
    if !k.is_finite() || (k * grid_step - value).abs() > 1e-9 * grid_step.max(value.abs()) {
        return Err(Error::Domain(format!(
            "{value} is not a multiple of the grid step {grid_step}"
        )));
    }
    if k.abs() > (i32::MAX / 8) as f64 {
        return Err(Error::Domain(format!("{value} is out of range")));
    }
    Ok(k as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub grid_step: f64,
    pub entries: Vec<(f64, f64)>,
}

/// A model reference in config files: a built-in name or an inline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(String),
    Inline(ModelJson),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<IncrementModel> {
        match self {
            ModelSpec::Named(name) => IncrementModel::builtin(name),
            ModelSpec::Inline(json) => IncrementModel::from_json(json),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn lazy_walk_normalizes() {
        let m = IncrementModel::build_lattice_model(&[(-1, 4f64.ln()), (0, LN2), (1, 4f64.ln())])
            .unwrap();
        let p = m.probs();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(m.mean().abs() < 1e-15);
        assert!((m.variance() - 0.5).abs() < 1e-15);
        assert!(m.contiguous_support_with_zero());
        let r = m.check_assumptions();
        assert!(r.convex && r.zero_mean && r.finite_mgf && !r.periodic);
    }

    #[test]
    fn strict_walk_is_flagged() {
        let m = IncrementModel::build_lattice_model(&[(-1, 0.0), (1, 0.0)]).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);
        assert_eq!(m.mean(), 0.0);
        assert!((m.variance() - 1.0).abs() < 1e-15);
        assert!(!m.contiguous_support_with_zero());
        assert!(m.check_assumptions().periodic);
    }

    #[test]
    fn symmetric_laplace_has_zero_mean() {
        let entries: Vec<_> = (-10..=10).map(|k: i32| (k, 2.0 * k.abs() as f64)).collect();
        let m = IncrementModel::build_lattice_model(&entries).unwrap();
        assert!(m.mean().abs() < 1e-15);
        assert!(m.check_assumptions().zero_mean);
    }

    #[test]
    fn degenerate_supports_rejected() {
        assert!(IncrementModel::build_lattice_model(&[]).is_err());
        assert!(IncrementModel::build_lattice_model(&[(0, 0.0)]).is_err());
        assert!(IncrementModel::build_lattice_model(&[(0, 0.0), (1, f64::INFINITY)]).is_err());
        assert!(IncrementModel::build_lattice_model(&[(0, 0.0), (0, 1.0)]).is_err());
    }

    #[test]
    fn concave_hamiltonian_not_convex() {
        let entries: Vec<_> = (-2..=2).map(|k: i32| (k, -((k * k) as f64))).collect();
        let m = IncrementModel::build_lattice_model(&entries).unwrap();
        assert!(!m.check_assumptions().convex);
    }

    #[test]
    fn biased_model_not_zero_mean() {
        let m = IncrementModel::build_lattice_model(&[(0, 0.0), (1, 0.0)]).unwrap();
        assert!(!m.check_assumptions().zero_mean);
        assert!((m.mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn theta_zero_at_zero_drift() {
        for m in [IncrementModel::lazy_srw(), IncrementModel::gauss(5).unwrap()] {
            assert!(m.tilt_theta(0.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn fair_walk_theta_is_artanh() {
        let m = IncrementModel::srw();
        for mu in [-0.9, -0.3, 0.1, 0.5, 0.77] {
            let theta = m.tilt_theta(mu).unwrap();
            // independent check: tanh(θ) is the tilted mean of a fair ±1 step
            assert!((theta.tanh() - mu).abs() < 1e-12, "mu {mu}: tanh {}", theta.tanh());
        }
    }

    #[test]
    fn boundary_drift_unsolvable() {
        let m = IncrementModel::lazy_srw();
        assert!(matches!(m.tilt_theta(1.0), Err(Error::Unsolvable { .. })));
        assert!(matches!(m.tilt_theta(-1.5), Err(Error::Unsolvable { .. })));
    }

    #[test]
    fn tilt_identity_and_known_value() {
        let m = IncrementModel::srw();
        assert_eq!(m.tilted(0.0), m);
        // e^{2θ} = 3 ⇒ p(+1) = 3/4
        let t = m.tilted(0.5f64.atanh());
        assert!((t.prob(1) - 0.75).abs() < 1e-14);
        assert!((t.prob(-1) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn discretization_matches_lattice_at_unit_step() {
        let d = IncrementModel::discretize_continuous(|x: f64| x.abs(), 1.0).unwrap();
        let l = IncrementModel::build_lattice_model(&[(-1, 1.0), (0, 0.0), (1, 1.0)]).unwrap();
        for (a, b) in d.probs().iter().zip(l.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(d.offsets(), l.offsets());
    }

    #[test]
    fn discretized_gaussian_variance_converges() {
        // Continuum reference by trapezoidal quadrature of x^2 e^{-x^2/2} / ∫ e^{-x^2/2}.
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-4;
        let mut x = -12.0;
        while x <= 12.0 {
            let w = (-x * x / 2.0_f64).exp();
            num += x * x * w * h;
            den += w * h;
            x += h;
        }
        let target = num / den;
        let errs: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&eps| {
                let m = IncrementModel::discretize_continuous(|x| x * x / 2.0, eps).unwrap();
                (m.variance() - target).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-3);
    }

    #[test]
    fn coarse_discretization_rejected() {
        assert!(IncrementModel::discretize_continuous(|x| x * x, 2.0).is_err());
    }

    #[test]
    fn builtins_resolve() {
        assert_eq!(IncrementModel::builtin("lazy-srw").unwrap(), IncrementModel::lazy_srw());
        assert_eq!(IncrementModel::builtin("srw").unwrap(), IncrementModel::srw());
        let l = IncrementModel::builtin("laplace(1.5, 4)").unwrap();
        assert_eq!(l.offsets().len(), 9);
        assert_eq!(IncrementModel::builtin("laplace(1.5)").unwrap().max_offset(), DEFAULT_RADIUS);
        assert_eq!(IncrementModel::builtin("gauss(3)").unwrap().max_offset(), 3);
        assert_eq!(IncrementModel::builtin("gauss").unwrap().max_offset(), DEFAULT_RADIUS);
        assert!(IncrementModel::builtin("cauchy").is_err());
        assert!(IncrementModel::builtin("laplace(x)").is_err());
    }

    #[test]
    fn json_form() {
        let m = IncrementModel::discretize_continuous(|x| x.abs(), 0.5).unwrap();
        let json = serde_json::to_string(&m.to_json()).unwrap();
        let back: ModelJson = serde_json::from_str(&json).unwrap();
        assert_eq!(IncrementModel::from_json(&back).unwrap(), m);
        let bad = ModelJson { grid_step: 0.5, entries: vec![(0.3, 0.0), (0.0, 0.0)] };
        assert!(IncrementModel::from_json(&bad).is_err());
    }

    #[test]
    fn bridge_probabilities() {
        let m = IncrementModel::lazy_srw();
        // P(S_2 = 0) = 1/4 + 1/16 + 1/16
        assert!((m.log_bridge_prob(2, 0).exp() - 0.375).abs() < 1e-15);
        assert_eq!(m.log_bridge_prob(2, 3), f64::NEG_INFINITY);
        // C(8,4) / 4^4 = 70/256
        assert!((m.log_bridge_prob(4, 0).exp() - 70.0 / 256.0).abs() < 1e-15);
    }

    fn arb_model() -> impl Strategy<Value = IncrementModel> {
        (1i32..4, 1i32..4, prop::collection::vec(-2.0f64..2.0, 7))
            .prop_map(|(lo, hi, hs)| {
                let entries: Vec<_> = (-lo..=hi).map(|k| (k, hs[(k + 3) as usize])).collect();
                IncrementModel::build_lattice_model(&entries).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn normalized(m in arb_model()) {
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn theta_round_trip(m in arb_model(), frac in 0.02f64..0.98) {
            let lo = m.min_offset() as f64;
            let hi = m.max_offset() as f64;
            let drift = lo + frac * (hi - lo);
            let theta = m.tilt_theta(drift).unwrap();
            prop_assert!((m.tilted(theta).mean() - drift).abs() < 1e-10);
        }

        #[test]
        fn tilting_preserves_convexity(m in arb_model(), theta in -3.0f64..3.0) {
            prop_assert_eq!(m.tilted(theta).is_convex(), m.is_convex());
        }

        #[test]
        fn tilting_is_an_involution(m in arb_model(), theta in -3.0f64..3.0) {
            let back = m.tilted(theta).tilted(-theta);
            for (a, b) in back.probs().iter().zip(m.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn tilted_mean_monotone(m in arb_model(), t1 in -3.0f64..3.0, dt in 0.01f64..2.0) {
            prop_assert!(m.tilted(t1).mean() < m.tilted(t1 + dt).mean());
        }
    }
}
