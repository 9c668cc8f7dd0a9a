//! Monte Carlo estimators and experiment-level statistics.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ceiling_cl, CeilingParams};
use crate::error::{Error, Result};
use crate::increments::IncrementModel;
use crate::oracle;
use crate::sampler::SampleSet;

const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo.min(p), hi.max(p))
}

/// Binomial frequency with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (ci_lo, ci_hi) = wilson(successes, trials);
        Self {
            successes,
            trials,
            estimate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci_lo,
            ci_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub sample_count: u64,
}

impl SurvivalCurve {
    /// A curve of exactly known probabilities (zero-width intervals).
    pub fn exact(levels: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if levels.len() != probs.len() {
            return Err(Error::Domain("levels and probabilities differ in length".into()));
        }
        Ok(Self {
            ci_lo: probs.clone(),
            ci_hi: probs.clone(),
            levels,
            probs,
            sample_count: u64::MAX,
        })
    }
}

/// Fraction of samples strictly above each level, with Wilson intervals.
pub fn survival_curve(samples: &[f64], levels: &[f64]) -> Result<SurvivalCurve> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("levels must be strictly ascending".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u64;
    let mut curve = SurvivalCurve {
        levels: levels.to_vec(),
        probs: Vec::with_capacity(levels.len()),
        ci_lo: Vec::with_capacity(levels.len()),
        ci_hi: Vec::with_capacity(levels.len()),
        sample_count: n,
    };
    for &level in levels {
        let above = n - sorted.partition_point(|&x| x <= level) as u64;
        let p = Proportion::new(above, n);
        curve.probs.push(p.estimate);
        curve.ci_lo.push(p.ci_lo);
        curve.ci_hi.push(p.ci_hi);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// Indices of the levels that passed the quality gate.
    pub used: Vec<usize>,
}

/// Maximum width of a level's interval in `log(-log p)` space for it to
/// enter the tail fit.
pub const TAIL_GATE: f64 = 0.2;

/// Least-squares slope of `log(-log p)` against `log(level)` over the levels
/// whose interval is narrow enough.
pub fn fit_tail_exponent(curve: &SurvivalCurve) -> Result<TailFit> {
    let ll = |p: f64| (-p.ln()).ln();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut used = Vec::new();
    for (k, &level) in curve.levels.iter().enumerate() {
        let (p, lo, hi) = (curve.probs[k], curve.ci_lo[k], curve.ci_hi[k]);
        let inside = |q: f64| q > 0.0 && q < 1.0;
        if !(level > 0.0 && inside(p) && inside(lo) && inside(hi)) {
            continue;
        }
        if (ll(lo) - ll(hi)).abs() >= TAIL_GATE {
            continue;
        }
        xs.push(level.ln());
        ys.push(ll(p));
        used.push(k);
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable levels after the quality gate; need 3",
            xs.len()
        )));
    }
    let (slope, intercept, stderr) = ols(&xs, &ys);
    Ok(TailFit { slope, stderr, intercept, used })
}

/// Ordinary least squares `y = c + s x`; returns `(s, c, stderr(s))`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if xs.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, intercept, stderr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotPoint {
    pub x: i64,
    pub y: i64,
    pub steps: usize,
    pub probability: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotSummary {
    pub points: Vec<BallotPoint>,
    pub skipped: Vec<String>,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
}

/// Exact ballot probabilities over a grid and their ratios to
/// `min(1, xy/steps)`. Unreachable points are skipped with a note.
pub fn ballot_sandwich(model: &IncrementModel, grid: &[(i64, i64, usize)]) -> Result<BallotSummary> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &(x, y, steps) in grid {
        match oracle::ballot(model, x, y, steps) {
            Ok(p) => {
                let scale = (x as f64 * y as f64 / steps as f64).min(1.0);
                points.push(BallotPoint { x, y, steps, probability: p, rho: p / scale });
            }
            Err(Error::Unreachable(msg)) => skipped.push(format!("({x}, {y}, {steps}): {msg}")),
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::InsufficientData("no reachable grid point".into()));
    }
    let min = points.iter().map(|p| p.rho).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.rho).fold(f64::NEG_INFINITY, f64::max);
    Ok(BallotSummary { points, skipped, min, max, spread: max / min })
}

fn window_cols(samples: &SampleSet, window: (i64, i64)) -> Result<std::ops::RangeInclusive<usize>> {
    let (s0, s1) = window;
    let right = samples.left() + samples.width() as i64 - 1;
    if s0 > s1 {
        return Err(Error::Domain(format!("empty window [{s0}, {s1}]")));
    }
    if s0 < samples.left() || s1 > right {
        return Err(Error::Domain(format!(
            "window [{s0}, {s1}] outside [{}, {right}]",
            samples.left()
        )));
    }
    Ok((s0 - samples.left()) as usize..=(s1 - samples.left()) as usize)
}

/// Fraction of samples in which curve `curve` is at or below `threshold`
/// (height units) somewhere in the window of sites.
pub fn drop_statistic(samples: &SampleSet, curve: usize, window: (i64, i64), threshold: f64) -> Result<Proportion> {
    let cols = window_cols(samples, window)?;
    check_curve(samples, curve)?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let g = samples.grid_step();
    let hits = (0..samples.len())
        .filter(|&k| samples.curve(k, curve)[cols.clone()].iter().any(|&x| x as f64 * g <= threshold))
        .count();
    Ok(Proportion::new(hits as u64, samples.len() as u64))
}

fn check_curve(samples: &SampleSet, curve: usize) -> Result<()> {
    if curve >= samples.n() {
        return Err(Error::Domain(format!("curve {curve} out of range 0..{}", samples.n())));
    }
    Ok(())
}

/// Fraction of samples in which curve `curve` exceeds `2 Cl_{curve+1}(x)`
/// somewhere, with `x = site - centre`.
pub fn envelope_violation(samples: &SampleSet, curve: usize, k: f64, params: &CeilingParams, centre: f64) -> Result<Proportion> {
    check_curve(samples, curve)?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let envelope: Vec<f64> = (0..samples.width())
        .map(|col| {
            let x = samples.left() as f64 + col as f64 - centre;
            ceiling_cl(curve as u32 + 1, x, k, params).map(|c| 2.0 * c)
        })
        .collect::<Result<_>>()?;
    let g = samples.grid_step();
    let hits = (0..samples.len())
        .filter(|&s| samples.curve(s, curve).iter().zip(&envelope).any(|(&x, &e)| x as f64 * g > e))
        .count();
    Ok(Proportion::new(hits as u64, samples.len() as u64))
}

/// Quantile of integer data treated as grouped into unit bins centred on
/// the integers (linear interpolation inside the bin holding the target
/// rank).
pub fn grouped_quantile(values: &[i32], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let target = q * sorted.len() as f64;
    let mut below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let m = sorted[i];
        let j = sorted.partition_point(|&x| x <= m);
        let count = j - i;
        if (below + count) as f64 >= target {
            let frac = ((target - below as f64) / count as f64).clamp(0.0, 1.0);
            return Ok(m as f64 - 0.5 + frac);
        }
        below += count;
        i = j;
    }
    Ok(*sorted.last().unwrap() as f64 + 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub site: i64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityProfile {
    pub points: Vec<ProfilePoint>,
    /// `(max - min) / mean` of the per-site medians.
    pub max_relative_variation: f64,
}

/// Per-site median and quartiles of the top curve over a bulk window that
/// stays at least a quarter of the interval away from both ends.
pub fn stationarity_profile(samples: &SampleSet, window: (i64, i64)) -> Result<StationarityProfile> {
    let cols = window_cols(samples, window)?;
    let len = (samples.width() - 1) as f64;
    let margin = (len / 4.0).ceil() as usize;
    if *cols.start() < margin || *cols.end() > samples.width() - 1 - margin {
        return Err(Error::Domain(format!(
            "window [{}, {}] closer than a quarter interval to the boundary",
            window.0, window.1
        )));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let g = samples.grid_step();
    let mut points = Vec::new();
    for col in cols {
        let vals: Vec<i32> = (0..samples.len()).map(|k| samples.height(k, 0, col)).collect();
        points.push(ProfilePoint {
            site: samples.left() + col as i64,
            median: grouped_quantile(&vals, 0.5)? * g,
            q1: grouped_quantile(&vals, 0.25)? * g,
            q3: grouped_quantile(&vals, 0.75)? * g,
        });
    }
    let max = points.iter().map(|p| p.median).fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|p| p.median).fold(f64::INFINITY, f64::min);
    let mean = points.iter().map(|p| p.median).sum::<f64>() / points.len() as f64;
    Ok(StationarityProfile { points, max_relative_variation: (max - min) / mean.abs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveScale {
    pub curve: usize,
    pub median: f64,
    /// `median * (a b^curve)^{1/3} / N^{1/3}`.
    pub normalized: f64,
}

/// Medians of each curve at the midpoint column and their values in units
/// of the curve's fluctuation scale.
pub fn curve_scale_profile(samples: &SampleSet, a: f64, b: f64, n_tilt: f64) -> Result<Vec<CurveScale>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mid = samples.width() / 2;
    (0..samples.n())
        .map(|i| {
            let vals: Vec<i32> = (0..samples.len()).map(|k| samples.height(k, i, mid)).collect();
            let median = grouped_quantile(&vals, 0.5)? * samples.grid_step();
            let lambda = a * b.powi(i as i32);
            Ok(CurveScale { curve: i, median, normalized: median * (lambda / n_tilt).cbrt() })
        })
        .collect()
}

/// Integrated autocorrelation time by Geyer's initial positive sequence
/// (with the monotone adjustment). `None` for series shorter than 2 or with
/// zero variance.
pub fn integrated_autocorrelation_time(series: &[f64]) -> Option<f64> {
    let n = series.len();
    if n < 2 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var = centred.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return None;
    }
    let rho = |lag: usize| centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / var;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        tau += 2.0 * gamma;
        prev = gamma;
        m += 1;
    }
    Some(tau.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn survival_examples() {
        let c = survival_curve(&[0.1, 0.2, 0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(c.probs, vec![0.0, 0.0]);
        assert_eq!(c.ci_lo, vec![0.0, 0.0]);
        assert!(survival_curve(&[], &[1.0]).is_err());
        assert!(survival_curve(&[1.0], &[2.0, 1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let c = survival_curve(&u, &[0.5]).unwrap();
        assert!(c.ci_lo[0] <= 0.5 && 0.5 <= c.ci_hi[0], "{:?}", c);
    }

    #[test]
    fn wilson_matches_reference() {
        // 7 of 20: textbook Wilson interval (0.1812, 0.5671)
        let (lo, hi) = wilson(7, 20);
        assert!((lo - 0.1812).abs() < 1e-4 && (hi - 0.5671).abs() < 1e-4);
        assert_eq!(wilson(0, 10).0, 0.0);
        assert_eq!(wilson(10, 10).1, 1.0);
    }

    #[test]
    fn tail_fit_synthetic() {
        let levels: Vec<f64> = (1..=12).map(|k| 0.25 * k as f64).collect();
        for (c, p) in [(2.0, 1.5), (1.0, 1.0), (0.7, 2.0)] {
            let probs = levels.iter().map(|r: &f64| (-c * r.powf(p)).exp()).collect();
            let fit = fit_tail_exponent(&SurvivalCurve::exact(levels.clone(), probs).unwrap()).unwrap();
            assert!((fit.slope - p).abs() < 1e-6, "p = {p}: {}", fit.slope);
        }
        let probs = vec![0.5, 0.2, 0.0, 0.0];
        let err = fit_tail_exponent(&SurvivalCurve::exact(vec![1.0, 2.0, 3.0, 4.0], probs).unwrap());
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn grouped_median_values() {
        assert_eq!(grouped_quantile(&[3, 3, 3, 3], 0.5).unwrap(), 3.0);
        assert_eq!(grouped_quantile(&[1, 2, 3], 0.5).unwrap(), 2.0);
        assert_eq!(grouped_quantile(&[1, 1, 2, 2], 0.5).unwrap(), 1.5);
        assert!(grouped_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn autocorrelation_white_noise_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let tau = integrated_autocorrelation_time(&x).unwrap();
        assert!((tau - 1.0).abs() < 0.1, "tau = {tau}");
        assert_eq!(integrated_autocorrelation_time(&[2.0; 50]), None);
        // AR(1) with phi = 0.5 has tau = (1 + phi) / (1 - phi) = 3
        let mut y = vec![0.0f64; 200_000];
        for t in 1..y.len() {
            y[t] = 0.5 * y[t - 1] + rng.random::<f64>() - 0.5;
        }
        let tau = integrated_autocorrelation_time(&y).unwrap();
        assert!((tau - 3.0).abs() < 0.3, "tau = {tau}");
    }

    proptest! {
        #[test]
        fn survival_monotone_with_ci(samples in prop::collection::vec(-10.0f64..10.0, 1..200)) {
            let levels: Vec<f64> = (-10..=10).map(|k| k as f64).collect();
            let c = survival_curve(&samples, &levels).unwrap();
            for k in 0..levels.len() {
                prop_assert!(c.ci_lo[k] <= c.probs[k] && c.probs[k] <= c.ci_hi[k]);
                if k > 0 { prop_assert!(c.probs[k] <= c.probs[k - 1]); }
            }
        }
    }
}
