//! Single-site Glauber dynamics for the tilted ensemble.
//!
//! A step picks a curve, an interior site and a direction uniformly, draws
//! `U ~ Uniform[0, 1)` and moves the height by one grid unit iff `U <= R`
//! and the new state is admissible, where `R` is the ratio of the
//! unnormalised weights. Two chains fed the same proposals form the
//! monotone coupling.

use rayon::prelude::*;

use crate::ensemble::{EnsembleConfig, EnsembleState, NO_CEILING, NO_FLOOR};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::stats::integrated_autocorrelation_time;

/// A single-site move: curve `curve` (0 = top) at column `col`, direction
/// `sigma`, and the uniform `u` that decides acceptance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProposal {
    pub curve: usize,
    pub col: usize,
    pub sigma: i32,
    pub u: f64,
}

/// `ln R` for `mv` applied to `state`: minus the tilt change plus the change
/// of the two adjacent bond log-probabilities. `-inf` if the move leaves the
/// increment support; ordering, floor and ceiling are not checked here.
pub fn log_acceptance_ratio(config: &EnsembleConfig, state: &EnsembleState, mv: &MoveProposal) -> f64 {
    let m = config.model();
    let z = state.get(mv.curve, mv.col);
    let left = state.get(mv.curve, mv.col - 1);
    let right = state.get(mv.curve, mv.col + 1);
    let s = mv.sigma;
    let delta = m.log_prob(z + s - left) + m.log_prob(right - z - s) - m.log_prob(z - left) - m.log_prob(right - z);
    -(s as f64) * config.tilt_coefficient(mv.curve) + delta
}

/// A Glauber chain with its own random stream and incremental log-weight.
#[derive(Debug, Clone)]
pub struct Chain<'c> {
    config: &'c EnsembleConfig,
    state: EnsembleState,
    rng: StreamRng,
    steps: u64,
    accepts: u64,
    log_weight: f64,
    log_p: Vec<f64>,
    min_offset: i32,
    span: usize,
    /// `ln R` and `R` indexed by curve, direction and the two current
    /// increments around the site.
    log_ratio: Vec<f64>,
    ratio: Vec<f64>,
    width: usize,
    interior: usize,
}

impl<'c> Chain<'c> {
    /// Chain started from the configuration's default initial state, on
    /// stream `(seed, stream)`.
    pub fn new(config: &'c EnsembleConfig, seed: u64, stream: u64) -> Result<Self> {
        Self::with_state(config, config.initial_state()?, StreamRng::new(seed, stream))
    }

    pub fn with_state(config: &'c EnsembleConfig, state: EnsembleState, rng: StreamRng) -> Result<Self> {
        let width = config.width();
        if width < 3 {
            return Err(Error::Domain(format!(
                "interval [{}, {}] has no interior sites",
                config.left(),
                config.right()
            )));
        }
        config.check_state(&state)?;
        let log_weight = config.log_weight(&state).value;
        let model = config.model();
        let (lo, hi) = (model.min_offset(), model.max_offset());
        let span = (hi - lo + 1) as usize;
        let mut log_ratio = Vec::with_capacity(config.n() * 2 * span * span);
        for i in 0..config.n() {
            let coef = config.tilt_coefficient(i);
            for s in [-1, 1] {
                for a in lo..=hi {
                    for b in lo..=hi {
                        let delta = model.log_prob(a + s) + model.log_prob(b - s) - model.log_prob(a) - model.log_prob(b);
                        log_ratio.push(-(s as f64) * coef + delta);
                    }
                }
            }
        }
        // moves leaving the support must be rejected even when U = 0
        let ratio = log_ratio.iter().map(|&x| if x == f64::NEG_INFINITY { -1.0 } else { x.exp() }).collect();
        Ok(Self {
            config,
            log_p: model.dense_log_probs().to_vec(),
            min_offset: lo,
            span,
            log_ratio,
            ratio,
            state,
            rng,
            steps: 0,
            accepts: 0,
            log_weight,
            width,
            interior: width - 2,
        })
    }

    pub fn config(&self) -> &'c EnsembleConfig {
        self.config
    }

    pub fn state(&self) -> &EnsembleState {
        &self.state
    }

    pub fn rng(&self) -> &StreamRng {
        &self.rng
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accepts(&self) -> u64 {
        self.accepts
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Replace the current state, e.g. after an external update that
    /// leaves the target law invariant. Counters are kept.
    pub fn set_state(&mut self, state: EnsembleState) -> Result<()> {
        self.config.check_state(&state)?;
        self.log_weight = self.config.log_weight(&state).value;
        self.state = state;
        Ok(())
    }

    /// Log-weight maintained incrementally from accepted moves.
    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    /// Steps per sweep: `n * (r - l - 1)`.
    pub fn sweep_len(&self) -> u64 {
        (self.config.n() * self.interior) as u64
    }

    /// Draw the next proposal from the chain's stream.
    #[inline]
    pub fn propose(&mut self) -> MoveProposal {
        draw_move(&mut self.rng, self.config.n(), self.interior)
    }

    #[inline]
    fn lp(&self, k: i32) -> f64 {
        let idx = k - self.min_offset;
        if idx < 0 {
            return f64::NEG_INFINITY;
        }
        self.log_p.get(idx as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Apply a proposal with the acceptance rule; returns whether it moved.
    #[inline]
    pub fn apply(&mut self, mv: &MoveProposal) -> bool {
        self.steps += 1;
        let w = self.width;
        let (k, col, s) = (mv.curve, mv.col, mv.sigma);
        let h = self.state.heights();
        let idx = k * w + col;
        let z = h[idx];
        let nz = z + s;
        let n = self.config.n();
        if s > 0 {
            let bound = if k == 0 { self.config.ceiling_at(col) } else { h[idx - w] };
            if nz > bound {
                return false;
            }
        } else {
            let bound = if k + 1 == n { self.config.floor()[col] } else { h[idx + w] };
            if nz < bound {
                return false;
            }
        }
        let a = (z - h[idx - 1] - self.min_offset) as usize;
        let b = (h[idx + 1] - z - self.min_offset) as usize;
        let t = ((k * 2 + (s > 0) as usize) * self.span + a) * self.span + b;
        if !(mv.u <= self.ratio[t]) {
            return false;
        }
        let log_r = self.log_ratio[t];
        self.state.heights_mut()[idx] = nz;
        self.log_weight += log_r;
        self.accepts += 1;
        debug_assert!(self.local_ok(k, col));
        true
    }

    fn local_ok(&self, k: usize, col: usize) -> bool {
        let z = self.state.get(k, col);
        let above = if k == 0 { self.config.ceiling_at(col) } else { self.state.get(k - 1, col) };
        let below = if k + 1 == self.config.n() {
            self.config.floor()[col]
        } else {
            self.state.get(k + 1, col)
        };
        below <= z
            && z <= above
            && self.lp(z - self.state.get(k, col - 1)).is_finite()
            && self.lp(self.state.get(k, col + 1) - z).is_finite()
    }

    /// One Glauber step: propose then apply.
    #[inline]
    pub fn step(&mut self) -> bool {
        let mv = self.propose();
        self.apply(&mv)
    }

    pub fn sweep(&mut self) {
        for _ in 0..self.sweep_len() {
            self.step();
        }
    }

    /// Run `sweeps` sweeps, calling `observe(sweep, state)` after sweep `s`
    /// (1-based) whenever `s > burnin` and `(s - burnin).is_multiple_of(thin)`.
    pub fn run_with(
        &mut self,
        sweeps: u64,
        burnin: u64,
        thin: u64,
        mut observe: impl FnMut(u64, &EnsembleState),
    ) -> Result<()> {
        check_schedule(sweeps, burnin, thin)?;
        for s in 1..=sweeps {
            self.sweep();
            if s > burnin && (s - burnin).is_multiple_of(thin) {
                observe(s, &self.state);
            }
        }
        Ok(())
    }

    /// Run and collect the recorded states; `chain_id` labels the records.
    pub fn run(&mut self, sweeps: u64, burnin: u64, thin: u64, chain_id: u32) -> Result<SampleSet> {
        let mut set = SampleSet::empty(self.config);
        let (steps0, accepts0) = (self.steps, self.accepts);
        self.run_with(sweeps, burnin, thin, |s, state| set.push(chain_id, s, state))?;
        set.counters.push(ChainCounters {
            chain: chain_id,
            seed: self.rng.seed(),
            steps: self.steps - steps0,
            accepts: self.accepts - accepts0,
        });
        Ok(set)
    }
}

#[inline]
fn draw_move(rng: &mut StreamRng, n: usize, interior: usize) -> MoveProposal {
    let idx = rng.below((n * interior * 2) as u64) as usize;
    let u = rng.uniform();
    let site = idx >> 1;
    MoveProposal {
        curve: site / interior,
        col: 1 + site % interior,
        sigma: if idx & 1 == 1 { 1 } else { -1 },
        u,
    }
}

fn check_schedule(sweeps: u64, burnin: u64, thin: u64) -> Result<()> {
    if sweeps < burnin {
        return Err(Error::InvalidConfig(format!("sweeps {sweeps} < burnin {burnin}")));
    }
    if thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    Ok(())
}

/// Number of worker threads requested through `TILTLAB_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("TILTLAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Run `chains` independent chains on streams `0..chains` in parallel and
/// merge their samples in chain order. The result does not depend on the
/// number of worker threads.
pub fn run_chains(config: &EnsembleConfig, seed: u64, chains: u32, sweeps: u64, burnin: u64, thin: u64) -> Result<SampleSet> {
    check_schedule(sweeps, burnin, thin)?;
    let work = || -> Result<Vec<SampleSet>> {
        (0..chains)
            .into_par_iter()
            .map(|c| Chain::new(config, seed, c as u64)?.run(sweeps, burnin, thin, c))
            .collect()
    };
    let parts = match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut set = SampleSet::empty(config);
    for part in parts {
        set.extend(part)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainCounters {
    pub chain: u32,
    pub seed: u64,
    pub steps: u64,
    pub accepts: u64,
}

/// Recorded states from one or more chains, in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    width: usize,
    left: i64,
    grid_step: f64,
    heights: Vec<i32>,
    index: Vec<(u32, u64)>,
    counters: Vec<ChainCounters>,
}

impl SampleSet {
    pub fn empty(config: &EnsembleConfig) -> Self {
        Self::with_shape(config.n(), config.width(), config.left(), config.grid_step())
    }

    pub fn with_shape(n: usize, width: usize, left: i64, grid_step: f64) -> Self {
        Self {
            n,
            width,
            left,
            grid_step,
            heights: Vec::new(),
            index: Vec::new(),
            counters: Vec::new(),
        }
    }

    pub fn push(&mut self, chain: u32, sweep: u64, state: &EnsembleState) {
        debug_assert_eq!(state.heights().len(), self.n * self.width);
        self.heights.extend_from_slice(state.heights());
        self.index.push((chain, sweep));
    }

    pub fn push_counters(&mut self, counters: ChainCounters) {
        self.counters.push(counters);
    }

    pub fn extend(&mut self, other: SampleSet) -> Result<()> {
        if (other.n, other.width, other.left) != (self.n, self.width, self.left) {
            return Err(Error::InvalidState("cannot merge sample sets of different shapes".into()));
        }
        self.heights.extend(other.heights);
        self.index.extend(other.index);
        self.counters.extend(other.counters);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn left(&self) -> i64 {
        self.left
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// `(chain, sweep)` of sample `k`.
    pub fn label(&self, k: usize) -> (u32, u64) {
        self.index[k]
    }

    pub fn counters(&self) -> &[ChainCounters] {
        &self.counters
    }

    /// Height of curve `i` at column `col` in sample `k`, in grid units.
    #[inline]
    pub fn height(&self, k: usize, i: usize, col: usize) -> i32 {
        self.heights[(k * self.n + i) * self.width + col]
    }

    /// Curve `i` of sample `k`.
    pub fn curve(&self, k: usize, i: usize) -> &[i32] {
        let start = (k * self.n + i) * self.width;
        &self.heights[start..start + self.width]
    }

    pub fn state(&self, k: usize) -> EnsembleState {
        let start = k * self.n * self.width;
        EnsembleState::from_flat(self.n, self.width, self.heights[start..start + self.n * self.width].to_vec())
            .expect("sample shape is consistent")
    }

    /// Series of `X_i(col)` in height units, in record order.
    pub fn series(&self, i: usize, col: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.height(k, i, col) as f64 * self.grid_step).collect()
    }
}

/// Chain health summary for the top curve at the midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub acceptance_rate: f64,
    /// `None` when the autocorrelation estimator diverges (e.g. constant
    /// series).
    pub integrated_autocorrelation_time: Option<f64>,
    pub effective_sample_size: Option<f64>,
}

pub fn diagnostics(samples: &SampleSet) -> Result<Diagnostics> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples; need at least 2", samples.len())));
    }
    let steps: u64 = samples.counters.iter().map(|c| c.steps).sum();
    let accepts: u64 = samples.counters.iter().map(|c| c.accepts).sum();
    let acceptance_rate = if steps == 0 { 0.0 } else { accepts as f64 / steps as f64 };
    let mid = samples.width / 2;
    let mut chains: Vec<u32> = samples.index.iter().map(|&(c, _)| c).collect();
    chains.dedup();
    let mut taus = Vec::new();
    let mut ess = 0.0;
    for &c in &chains {
        let series: Vec<f64> = (0..samples.len())
            .filter(|&k| samples.index[k].0 == c)
            .map(|k| samples.height(k, 0, mid) as f64)
            .collect();
        match integrated_autocorrelation_time(&series) {
            Some(tau) => {
                ess += series.len() as f64 / tau;
                taus.push(tau);
            }
            None => {
                return Ok(Diagnostics {
                    acceptance_rate,
                    integrated_autocorrelation_time: None,
                    effective_sample_size: None,
                })
            }
        }
    }
    let tau = taus.iter().sum::<f64>() / taus.len() as f64;
    Ok(Diagnostics {
        acceptance_rate,
        integrated_autocorrelation_time: Some(tau),
        effective_sample_size: Some(ess),
    })
}

/// Check the ordering hypotheses of the monotone coupling for `up` over
/// `down`.
pub fn check_coupling_hypotheses(up: &EnsembleConfig, down: &EnsembleConfig) -> Result<()> {
    let fail = |m: String| Err(Error::Hypothesis(m));
    if up.model() != down.model() {
        return fail("the two configurations use different increment models".into());
    }
    if !up.model().is_convex() {
        return fail("the increment Hamiltonian is not convex on a contiguous support".into());
    }
    if (up.left(), up.right(), up.n()) != (down.left(), down.right(), down.n()) {
        return fail("interval or curve count differ".into());
    }
    if up.tilt_normalizer() != down.tilt_normalizer() {
        return fail("tilt normalizers differ".into());
    }
    if up.a() > down.a() {
        return fail(format!("a_up = {} exceeds a_down = {}", up.a(), down.a()));
    }
    if up.b() > down.b() {
        return fail(format!("b_up = {} exceeds b_down = {}", up.b(), down.b()));
    }
    if up.u().iter().zip(down.u()).any(|(x, y)| x < y) || up.v().iter().zip(down.v()).any(|(x, y)| x < y) {
        return fail("boundary values of the upper configuration are not above".into());
    }
    if up.floor().iter().zip(down.floor()).any(|(x, y)| x < y) {
        return fail("floor of the upper configuration is not above".into());
    }
    if (0..up.width()).any(|j| up.ceiling_at(j) < down.ceiling_at(j)) {
        return fail("ceiling of the upper configuration is not above".into());
    }
    Ok(())
}

/// Result of a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    pub up: EnsembleState,
    pub down: EnsembleState,
    /// Number of `(t, i, x)` with `X_down_i(x) > X_up_i(x)` after step `t`.
    pub violations: u64,
    pub steps: u64,
    pub accepts_up: u64,
    pub accepts_down: u64,
}

/// Default ordered starting pair: the upper chain at its maximal admissible
/// state, the lower chain at the same heights clipped into its own
/// envelopes.
pub fn coupled_start(up: &EnsembleConfig, down: &EnsembleConfig) -> Result<(EnsembleState, EnsembleState)> {
    let top = up
        .upper_envelope()
        .ok_or_else(|| Error::InvalidConfig("upper configuration is infeasible".into()))?;
    let lo = down
        .lower_envelope()
        .ok_or_else(|| Error::InvalidConfig("lower configuration is infeasible".into()))?;
    let hi = down.upper_envelope().expect("feasible when the lower envelope exists");
    let clipped: Vec<i32> = top
        .heights()
        .iter()
        .zip(lo.heights().iter().zip(hi.heights()))
        .map(|(&x, (&l, &h))| x.clamp(l, h))
        .collect();
    let bottom = EnsembleState::from_flat(down.n(), down.width(), clipped)?;
    up.check_state(&top)?;
    down.check_state(&bottom)?;
    if bottom.heights().iter().zip(top.heights()).any(|(d, u)| d > u) {
        return Err(Error::Hypothesis("default starting states are not ordered".into()));
    }
    Ok((top, bottom))
}

/// Run the monotone coupling for `steps` Glauber steps from the default
/// ordered start, both chains consuming one shared proposal stream.
pub fn coupled_run(up: &EnsembleConfig, down: &EnsembleConfig, steps: u64, seed: u64) -> Result<CoupledOutcome> {
    check_coupling_hypotheses(up, down)?;
    let (s_up, s_down) = coupled_start(up, down)?;
    coupled_run_from(up, down, s_up, s_down, steps, seed)
}

pub fn coupled_run_from(
    up: &EnsembleConfig,
    down: &EnsembleConfig,
    start_up: EnsembleState,
    start_down: EnsembleState,
    steps: u64,
    seed: u64,
) -> Result<CoupledOutcome> {
    check_coupling_hypotheses(up, down)?;
    let mut rng = StreamRng::new(seed, 0);
    let mut c_up = Chain::with_state(up, start_up, StreamRng::new(seed, 0))?;
    let mut c_down = Chain::with_state(down, start_down, StreamRng::new(seed, 0))?;
    let w = up.width();
    let above = |a: &Chain, b: &Chain, idx: usize| (b.state.heights()[idx] > a.state.heights()[idx]) as u64;
    let mut current: u64 = (0..up.n() * w).map(|idx| above(&c_up, &c_down, idx)).sum();
    let mut violations = 0;
    for _ in 0..steps {
        let mv = draw_move(&mut rng, up.n(), w - 2);
        let idx = mv.curve * w + mv.col;
        let before = above(&c_up, &c_down, idx);
        c_up.apply(&mv);
        c_down.apply(&mv);
        current = current + above(&c_up, &c_down, idx) - before;
        violations += current;
    }
    Ok(CoupledOutcome {
        violations,
        steps,
        accepts_up: c_up.accepts,
        accepts_down: c_down.accepts,
        up: c_up.state,
        down: c_down.state,
    })
}

/// Drop the curves above curve `first` (0-based): the remaining curves keep
/// their boundary values, floor and ceiling, and the new top curve carries
/// tilt `a * b^first`.
pub fn remove_top_curves(config: &EnsembleConfig, first: usize) -> Result<EnsembleConfig> {
    if first >= config.n() {
        return Err(Error::Domain(format!("curve {first} out of range 0..{}", config.n())));
    }
    if first == 0 {
        return Ok(config.clone());
    }
    let mut b = EnsembleConfig::builder(config.model_arc().clone(), config.n() - first, (config.left(), config.right()))
        .tilt(config.a() * config.b().powi(first as i32), config.b(), config.tilt_normalizer())
        .boundaries(config.u()[first..].to_vec(), config.v()[first..].to_vec());
    b = b.floor(crate::ensemble::Boundary::Table(
        config.floor().iter().map(|&h| (h != NO_FLOOR).then_some(h)).collect(),
    ));
    b = b.ceiling(config.ceiling().map(|g| {
        crate::ensemble::Boundary::Table(g.iter().map(|&x| (x != NO_CEILING).then_some(x)).collect())
    }));
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Boundary;
    use crate::increments::IncrementModel;
    use proptest::prelude::*;

    fn config(n: usize, interval: (i64, i64), a: f64, b: f64, u: Vec<i32>, v: Vec<i32>) -> EnsembleConfig {
        EnsembleConfig::builder(IncrementModel::lazy_srw(), n, interval)
            .tilt(a, b, 10.0)
            .boundaries(u, v)
            .build()
            .unwrap()
    }

    #[test]
    fn no_interior_is_an_error() {
        let c = config(1, (0, 1), 1.0, 1.0, vec![0], vec![0]);
        assert!(matches!(Chain::new(&c, 1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn acceptance_ratio_examples() {
        let c = config(1, (0, 2), 1.0, 1.0, vec![1], vec![1]);
        let s = EnsembleState::from_curves(&[vec![1, 1, 1]]).unwrap();
        let up = MoveProposal { curve: 0, col: 1, sigma: 1, u: 0.5 };
        let down = MoveProposal { sigma: -1, ..up };
        let r_up = log_acceptance_ratio(&c, &s, &up).exp();
        let r_down = log_acceptance_ratio(&c, &s, &down).exp();
        assert!((r_up - 0.25 * (-0.1f64).exp()).abs() < 1e-15);
        assert!((r_down - 0.25 * 0.1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn acceptance_ratio_is_weight_difference() {
        let c = config(2, (0, 4), 0.8, 2.0, vec![2, 0], vec![1, 0]);
        let s = c.initial_state().unwrap();
        let mut chain = Chain::new(&c, 5, 0).unwrap();
        for _ in 0..2000 {
            let state = chain.state().clone();
            let mv = chain.propose();
            let mut t = state.clone();
            t.set(mv.curve, mv.col, t.get(mv.curve, mv.col) + mv.sigma);
            let w1 = c.log_weight(&t);
            if w1.valid {
                let lr = log_acceptance_ratio(&c, &state, &mv);
                assert!((lr - (w1.value - c.log_weight(&state).value)).abs() < 1e-12);
            }
            chain.apply(&mv);
            c.check_state(chain.state()).unwrap();
        }
        assert!(chain.accepts() > 0 && chain.accepts() <= chain.steps());
        let _ = s;
    }

    #[test]
    fn step_rules() {
        let c = config(2, (0, 2), 0.0, 1.0, vec![1, 1], vec![1, 1]);
        let mut chain = Chain::new(&c, 1, 0).unwrap();
        // raising the lower curve would break ordering
        assert!(!chain.apply(&MoveProposal { curve: 1, col: 1, sigma: 1, u: 0.0 }));
        // U = 0 with a valid move is accepted
        assert!(chain.apply(&MoveProposal { curve: 0, col: 1, sigma: 1, u: 0.0 }));
        // R >= 1 accepted regardless of U: moving back down has R = 4
        assert!(chain.apply(&MoveProposal { curve: 0, col: 1, sigma: -1, u: 0.999_999 }));
        assert_eq!(chain.steps(), 3);
        assert_eq!(chain.accepts(), 2);
    }

    #[test]
    fn proposals_are_deterministic() {
        let c = config(2, (0, 5), 1.0, 2.0, vec![1, 0], vec![1, 0]);
        let mut a = Chain::new(&c, 9, 3).unwrap();
        let mut b = Chain::new(&c, 9, 3).unwrap();
        for _ in 0..100 {
            assert_eq!(a.propose(), b.propose());
        }
    }

    #[test]
    fn proposal_frequencies_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let c = config(2, (0, 5), 1.0, 2.0, vec![1, 0], vec![1, 0]);
        let mut chain = Chain::new(&c, 11, 0).unwrap();
        let cells = 2 * 4 * 2;
        let mut counts = vec![0f64; cells];
        let draws = 100_000;
        for _ in 0..draws {
            let mv = chain.propose();
            assert!((0.0..1.0).contains(&mv.u));
            counts[(mv.curve * 4 + mv.col - 1) * 2 + (mv.sigma > 0) as usize] += 1.0;
        }
        let e = draws as f64 / cells as f64;
        let chi2: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi-square p = {p}");
    }

    #[test]
    fn run_schedule() {
        let c = config(1, (0, 6), 1.0, 1.0, vec![2], vec![2]);
        let mut chain = Chain::new(&c, 3, 0).unwrap();
        let s = chain.run(10, 0, 1, 0).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.label(9), (0, 10));
        let s2 = Chain::new(&c, 3, 0).unwrap().run(10, 4, 3, 0).unwrap();
        assert_eq!(s2.len(), 2);
        assert_eq!(s2.label(0).1, 7);
        assert!(Chain::new(&c, 3, 0).unwrap().run(3, 4, 1, 0).is_err());
        let again = Chain::new(&c, 3, 0).unwrap().run(10, 0, 1, 0).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn run_chains_is_schedule_independent() {
        let c = config(2, (0, 8), 1.0, 2.0, vec![2, 0], vec![2, 0]);
        let a = run_chains(&c, 17, 3, 20, 5, 2).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_chains(&c, 17, 3, 20, 5, 2).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 3 * 7);
        assert_eq!(a.counters().len(), 3);
    }

    #[test]
    fn incremental_weight_tracks_recomputation() {
        let c = EnsembleConfig::builder(IncrementModel::laplace(0.7, 4).unwrap(), 3, (0, 20))
            .tilt(1.3, 2.5, 7.0)
            .boundaries(vec![6, 3, 1], vec![5, 2, 0])
            .ceiling(Some(Boundary::Const(12)))
            .build()
            .unwrap();
        let mut chain = Chain::new(&c, 2, 0).unwrap();
        for _ in 0..1_000_000 {
            chain.step();
        }
        c.check_state(chain.state()).unwrap();
        let full = c.log_weight(chain.state()).value;
        assert!((chain.log_weight() - full).abs() < 1e-9, "{} vs {full}", chain.log_weight());
    }

    #[test]
    fn coupling_identical_and_ordered() {
        let c = config(2, (0, 10), 1.0, 2.0, vec![3, 1], vec![2, 0]);
        let out = coupled_run(&c, &c, 20_000, 4).unwrap();
        assert_eq!(out.up, out.down);
        assert_eq!(out.violations, 0);
        let down = c.to_builder().tilt(2.0, 3.0, 10.0).boundaries(vec![2, 0], vec![1, 0]).build().unwrap();
        let out = coupled_run(&c, &down, 100_000, 4).unwrap();
        assert_eq!(out.violations, 0);
        assert!(matches!(coupled_run(&down, &c, 10, 4), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn remove_top_curves_examples() {
        let c = config(3, (0, 6), 0.5, 4.0, vec![4, 2, 0], vec![4, 2, 0]);
        let same = remove_top_curves(&c, 0).unwrap();
        assert_eq!(same.n(), 3);
        assert_eq!(same.u(), c.u());
        let last = remove_top_curves(&c, 2).unwrap();
        assert_eq!(last.n(), 1);
        assert_eq!(last.a(), 0.5 * 16.0);
        assert_eq!(last.u(), &[0]);
        assert!(remove_top_curves(&c, 3).is_err());
    }

    #[test]
    fn diagnostics_behaviour() {
        let c = config(1, (0, 10), 1.0, 1.0, vec![2], vec![2]);
        let s = run_chains(&c, 1, 2, 400, 50, 1).unwrap();
        let d = diagnostics(&s).unwrap();
        assert!((0.0..=1.0).contains(&d.acceptance_rate));
        assert!(d.integrated_autocorrelation_time.unwrap() >= 0.5);
        let mut flat = SampleSet::empty(&c);
        let st = c.initial_state().unwrap();
        for k in 0..10 {
            flat.push(0, k, &st);
        }
        assert_eq!(diagnostics(&flat).unwrap().integrated_autocorrelation_time, None);
        assert!(diagnostics(&SampleSet::empty(&c)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_step_keeps_state_valid(seed in 0u64..1000, a in 0.0f64..3.0, b in 1.0f64..4.0) {
            let c = EnsembleConfig::builder(IncrementModel::lazy_srw(), 3, (0, 9))
                .tilt(a, b, 5.0)
                .boundaries(vec![4, 2, 1], vec![3, 3, 0])
                .ceiling(Some(Boundary::Const(6)))
                .build()
                .unwrap();
            let mut chain = Chain::new(&c, seed, 0).unwrap();
            for _ in 0..3000 {
                chain.step();
                prop_assert!(c.check_state(chain.state()).is_ok());
            }
        }
    }
}
