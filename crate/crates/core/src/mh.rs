//! Random-walk Metropolis-Hastings over a pluggable forward model.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayes::{log_acceptance, log_likelihood, NoiseModel, PriorSpec, ProposalSpec};
use crate::error::{Error, Result};
use crate::fd::{fmt17, sample_sensors, solve_with, FdSolver};
use crate::net::NetworkParams;
use crate::pde::{PdeOperator, PdeProblem};

/// What the forward model did for one candidate beyond producing a response.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefinementRecord {
    pub triggered: bool,
    pub descent_iterations: u64,
    /// Checkpoint residual statistic of the parameters that produced the
    /// response, for backends that check one.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub response: Vec<f64>,
    pub refinement: RefinementRecord,
}

/// Maps a parameter vector to predicted observations at the sensors.
pub trait ForwardBackend {
    fn name(&self) -> &'static str;
    fn sensor_count(&self) -> usize;
    fn predict(&mut self, p: &[f64]) -> Result<Prediction>;
}

/// Reference forward model: finite-difference solve, then sensor lookup.
pub struct FdBackend {
    operator: Arc<dyn PdeOperator>,
    grid_n: usize,
    solver: FdSolver,
    sensors: Vec<(f64, f64)>,
}

impl FdBackend {
    pub fn new(problem: &PdeProblem, grid_n: usize, solver: FdSolver, sensors: Vec<(f64, f64)>) -> Self {
        Self {
            operator: problem.operator.clone(),
            grid_n,
            solver,
            sensors,
        }
    }
}

impl ForwardBackend for FdBackend {
    fn name(&self) -> &'static str {
        "fd"
    }

    fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    fn predict(&mut self, p: &[f64]) -> Result<Prediction> {
        let op = &self.operator;
        let grid = solve_with(&|x, y| op.source(x, y, p), self.grid_n, self.solver)?;
        Ok(Prediction {
            response: sample_sensors(&grid, &self.sensors)?,
            refinement: RefinementRecord::default(),
        })
    }
}

/// Frozen offline surrogate.
pub struct PinnBackend {
    problem: PdeProblem,
    params: NetworkParams,
    sensors: Vec<(f64, f64)>,
}

impl PinnBackend {
    pub fn new(problem: PdeProblem, params: NetworkParams, sensors: Vec<(f64, f64)>) -> Self {
        Self { problem, params, sensors }
    }
}

impl ForwardBackend for PinnBackend {
    fn name(&self) -> &'static str {
        "pinn"
    }

    fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    fn predict(&mut self, p: &[f64]) -> Result<Prediction> {
        Ok(Prediction {
            response: self.problem.surrogate_responses(&self.params, &self.sensors, p)?,
            refinement: RefinementRecord::default(),
        })
    }
}

/// A constant response regardless of the parameters; useful for sampling
/// the prior through the full chain machinery.
pub struct ConstantBackend {
    pub response: Vec<f64>,
}

impl ForwardBackend for ConstantBackend {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn sensor_count(&self) -> usize {
        self.response.len()
    }

    fn predict(&mut self, _p: &[f64]) -> Result<Prediction> {
        Ok(Prediction {
            response: self.response.clone(),
            refinement: RefinementRecord::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub initial: Vec<f64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Chain state after each iteration; `states[0]` is the initial state.
    pub states: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    /// Whether the candidate drawn at each iteration was accepted
    /// (always `false` for iteration 0).
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    /// Candidate drawn at each iteration; entry 0 is the initial state.
    pub candidates: Vec<Vec<f64>>,
    /// One record per iteration; iteration 0 describes the initial state.
    pub refinement_log: Vec<RefinementRecord>,
    pub seed: u64,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn post_burn_in(&self) -> &[Vec<f64>] {
        &self.states[self.burn_in.min(self.states.len())..]
    }

    pub fn total_descent_iterations(&self) -> u64 {
        self.refinement_log.iter().map(|r| r.descent_iterations).sum()
    }
}

/// Runs `iterations` Metropolis-Hastings iterations from `config.initial`.
///
/// The candidate log-posterior is only computed for candidates inside the
/// prior support; the current state's value is cached.
pub fn run_chain(
    backend: &mut dyn ForwardBackend,
    data: &[f64],
    noise: &NoiseModel,
    prior: &PriorSpec,
    proposal: &ProposalSpec,
    config: &ChainConfig,
) -> Result<ChainResult> {
    run_chain_until(backend, data, noise, prior, proposal, config, |_| false)
}

/// [`run_chain`] that stops early once `stop` returns true for the
/// refinement log so far. The returned prefix is identical to the first
/// iterations of the full run.
pub fn run_chain_until<F>(
    backend: &mut dyn ForwardBackend,
    data: &[f64],
    noise: &NoiseModel,
    prior: &PriorSpec,
    proposal: &ProposalSpec,
    config: &ChainConfig,
    mut stop: F,
) -> Result<ChainResult>
where
    F: FnMut(&[RefinementRecord]) -> bool,
{
    let n = config.iterations;
    if n == 0 || config.burn_in >= n {
        return Err(Error::Config(format!(
            "need iterations > burn_in >= 0, got iterations {n}, burn_in {}",
            config.burn_in
        )));
    }
    if proposal.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            got: proposal.dim(),
            context: "proposal vs prior",
        });
    }
    if backend.sensor_count() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: backend.sensor_count(),
            context: "backend sensors vs observations",
        });
    }
    if !prior.contains(&config.initial) {
        return Err(Error::InvalidInitialState(config.initial.clone()));
    }

    let log_post = |backend: &mut dyn ForwardBackend, p: &[f64], iteration: usize| -> Result<(f64, RefinementRecord)> {
        let pred = backend.predict(p).map_err(|e| Error::Backend {
            iteration,
            source: Box::new(e),
        })?;
        Ok((prior.log_prior(p) + log_likelihood(data, &pred.response, noise)?, pred.refinement))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = config.initial.clone();
    let (mut current_lp, record) = log_post(backend, &current, 0)?;
    if !current_lp.is_finite() {
        return Err(Error::InvalidInitialState(current));
    }

    let mut states = Vec::with_capacity(n);
    let mut log_posteriors = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut refinement_log = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    candidates.push(current.clone());
    states.push(current.clone());
    log_posteriors.push(current_lp);
    accepted.push(false);
    refinement_log.push(record);
    let mut n_accepted = 0usize;

    for i in 1..n {
        if stop(&refinement_log) {
            break;
        }
        let candidate = proposal.propose(&current, &mut rng)?;
        let mut record = RefinementRecord::default();
        let mut take = false;
        if prior.contains(&candidate) {
            let (lp, rec) = log_post(backend, &candidate, i)?;
            record = rec;
            if lp.is_nan() {
                return Err(Error::Backend {
                    iteration: i,
                    source: Box::new(Error::NonFiniteLoss { sample: None }),
                });
            }
            let log_alpha = log_acceptance(current_lp, lp, 0.0);
            let u: f64 = rng.random();
            if u.ln() < log_alpha {
                take = true;
                current.clone_from(&candidate);
                current_lp = lp;
            }
        }
        candidates.push(candidate);
        n_accepted += usize::from(take);
        states.push(current.clone());
        log_posteriors.push(current_lp);
        accepted.push(take);
        refinement_log.push(record);
    }

    let proposals = states.len() - 1;
    Ok(ChainResult {
        states,
        log_posteriors,
        accepted,
        acceptance_rate: if proposals == 0 {
            0.0
        } else {
            n_accepted as f64 / proposals as f64
        },
        burn_in: config.burn_in,
        candidates,
        refinement_log,
        seed: config.seed,
    })
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        for v in values {
            if let Some(b) = bin_index(v, lo, hi, bins) {
                counts[b] += 1;
            }
        }
        Self { lo, hi, counts }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.lo + (i as f64 + 0.5) * self.width()).collect()
    }

    /// Counts normalized to integrate to one.
    pub fn density(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        let norm = total as f64 * self.width();
        self.counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / norm }).collect()
    }
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) || bins == 0 {
        return None;
    }
    let b = ((v - lo) / (hi - lo) * bins as f64) as usize;
    Some(b.min(bins - 1))
}

/// Joint histogram of the first two coordinates; `counts[i][j]` holds
/// bin `i` of the first and bin `j` of the second coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2d {
    pub fn new(points: &[Vec<f64>], x: (f64, f64), y: (f64, f64), bins: (usize, usize)) -> Self {
        let mut counts = vec![vec![0u64; bins.1]; bins.0];
        for p in points {
            if let (Some(i), Some(j)) = (bin_index(p[0], x.0, x.1, bins.0), bin_index(p[1], y.0, y.1, bins.1)) {
                counts[i][j] += 1;
            }
        }
        Self { x, y, counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation (divisor `n - 1`; zero for one sample).
    pub std: Vec<f64>,
    pub marginals: Vec<Histogram>,
    pub joint: Option<Histogram2d>,
}

/// Statistics over `states[burn_in..]`. Histogram ranges per coordinate
/// are given by `ranges`; a degenerate range is widened by ±0.5.
pub fn posterior_summary(
    states: &[Vec<f64>],
    burn_in: usize,
    ranges: &[(f64, f64)],
    bins: usize,
) -> Result<PosteriorSummary> {
    if burn_in >= states.len() {
        return Err(Error::Empty("post-burn-in samples"));
    }
    let kept = &states[burn_in..];
    let dim = kept[0].len();
    if ranges.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: ranges.len(),
            context: "histogram ranges",
        });
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let n = kept.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|k| kept.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|k| {
            if kept.len() < 2 {
                0.0
            } else {
                (kept.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        })
        .collect();
    let ranges: Vec<(f64, f64)> = ranges
        .iter()
        .map(|&(lo, hi)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) })
        .collect();
    let marginals = (0..dim)
        .map(|k| Histogram::new(kept.iter().map(|s| s[k]), ranges[k].0, ranges[k].1, bins))
        .collect();
    let joint = (dim >= 2).then(|| Histogram2d::new(kept, ranges[0], ranges[1], (bins, bins)));
    Ok(PosteriorSummary {
        samples: kept.len(),
        mean,
        std,
        marginals,
        joint,
    })
}

/// Smallest and largest value of each coordinate over `states[burn_in..]`.
pub fn sample_ranges(states: &[Vec<f64>], burn_in: usize) -> Vec<(f64, f64)> {
    let kept = &states[burn_in.min(states.len())..];
    let dim = kept.first().map_or(0, Vec::len);
    (0..dim)
        .map(|k| {
            kept.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[k]), hi.max(s[k])))
        })
        .collect()
}

/// Writes the chain as CSV: `#`-prefixed `preamble` lines, a header, then
/// one row per iteration.
pub fn write_chain_csv<W: Write>(out: &mut W, result: &ChainResult, names: &[String], preamble: &[String]) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    write!(out, "iteration")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    write!(out, ",accepted,log_posterior,refine_triggered,refine_iterations,refine_residual")?;
    for n in names {
        write!(out, ",candidate_{n}")?;
    }
    writeln!(out)?;
    for (i, s) in result.states.iter().enumerate() {
        write!(out, "{i}")?;
        for v in s {
            write!(out, ",{}", fmt17(*v))?;
        }
        let r = &result.refinement_log[i];
        write!(
            out,
            ",{},{},{},{},{}",
            u8::from(result.accepted[i]),
            fmt17(result.log_posteriors[i]),
            u8::from(r.triggered),
            r.descent_iterations,
            r.residual.map(fmt17).unwrap_or_default()
        )?;
        for v in &result.candidates[i] {
            write!(out, ",{}", fmt17(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{poisson_problem, ConstraintKind};

    fn prior() -> PriorSpec {
        PriorSpec::new(vec![(10.0, 100.0), (0.1, 4.0)]).unwrap()
    }

    fn flat_chain(n: usize, seed: u64, proposal: &ProposalSpec) -> ChainResult {
        let mut backend = ConstantBackend { response: vec![0.0; 3] };
        let noise = NoiseModel::new(1e6).unwrap();
        let cfg = ChainConfig {
            initial: vec![45.0, 1.95],
            iterations: n,
            burn_in: 0,
            seed,
        };
        run_chain(&mut backend, &[0.0; 3], &noise, &prior(), proposal, &cfg).unwrap()
    }

    /// Quadratic log-likelihood in `p` through a linear response.
    struct LinearBackend;

    impl ForwardBackend for LinearBackend {
        fn name(&self) -> &'static str {
            "linear"
        }
        fn sensor_count(&self) -> usize {
            2
        }
        fn predict(&mut self, p: &[f64]) -> Result<Prediction> {
            Ok(Prediction {
                response: vec![p[0], p[1]],
                refinement: RefinementRecord::default(),
            })
        }
    }

    #[test]
    fn single_iteration_chain() {
        let r = flat_chain(1, 0, &ProposalSpec::diagonal(&[3.2, 0.006]).unwrap());
        assert_eq!(r.states, vec![vec![45.0, 1.95]]);
        assert_eq!(r.acceptance_rate, 0.0);
        assert_eq!(r.refinement_log.len(), 1);
    }

    #[test]
    fn flat_likelihood_accepts_almost_everything() {
        let r = flat_chain(10_000, 3, &ProposalSpec::diagonal(&[3.2, 0.006]).unwrap());
        assert_eq!(r.len(), 10_000);
        assert!(r.acceptance_rate >= 0.95, "{}", r.acceptance_rate);
        let accepted = r.accepted.iter().filter(|&&a| a).count();
        assert_eq!(r.acceptance_rate, accepted as f64 / 9999.0);
    }

    #[test]
    fn states_stay_in_box_and_rejections_repeat() {
        // A wide proposal forces many out-of-box candidates.
        let r = flat_chain(5_000, 8, &ProposalSpec::diagonal(&[400.0, 2.0]).unwrap());
        let p = prior();
        for k in 1..r.len() {
            assert!(p.contains(&r.states[k]));
            if !r.accepted[k] {
                assert_eq!(r.states[k], r.states[k - 1]);
            }
        }
        assert!(r.acceptance_rate < 0.95);
    }

    #[test]
    fn chain_is_deterministic() {
        let prop = ProposalSpec::diagonal(&[3.2, 0.006]).unwrap();
        assert_eq!(flat_chain(500, 21, &prop), flat_chain(500, 21, &prop));
        assert_ne!(flat_chain(500, 21, &prop).states, flat_chain(500, 22, &prop).states);
    }

    #[test]
    fn early_stop_is_a_prefix() {
        let prop = ProposalSpec::diagonal(&[3.2, 0.006]).unwrap();
        let full = flat_chain(300, 4, &prop);
        let mut backend = ConstantBackend { response: vec![0.0; 3] };
        let cfg = ChainConfig {
            initial: vec![45.0, 1.95],
            iterations: 300,
            burn_in: 0,
            seed: 4,
        };
        let noise = NoiseModel::new(1e6).unwrap();
        let part = run_chain_until(&mut backend, &[0.0; 3], &noise, &prior(), &prop, &cfg, |log| log.len() >= 120).unwrap();
        assert_eq!(part.len(), 120);
        assert_eq!(part.states[..], full.states[..120]);
    }

    #[test]
    fn gaussian_target_is_recovered() {
        // Data (50, 2) with sigma 1 on a linear response: the posterior is
        // N((50, 2), I) truncated to the box, essentially untruncated in c1.
        let noise = NoiseModel::new(1.0).unwrap();
        let prior = PriorSpec::new(vec![(40.0, 60.0), (-3.0, 7.0)]).unwrap();
        let prop = ProposalSpec::diagonal(&[2.0, 2.0]).unwrap();
        let cfg = ChainConfig {
            initial: vec![45.0, 1.0],
            iterations: 60_000,
            burn_in: 1_000,
            seed: 12,
        };
        let r = run_chain(&mut LinearBackend, &[50.0, 2.0], &noise, &prior, &prop, &cfg).unwrap();
        let s = posterior_summary(&r.states, r.burn_in, &[(40.0, 60.0), (-3.0, 7.0)], 20).unwrap();
        // Effective sample size is a fraction of the raw count; allow for it.
        assert!((s.mean[0] - 50.0).abs() < 0.1, "{:?}", s.mean);
        assert!((s.mean[1] - 2.0).abs() < 0.1, "{:?}", s.mean);
        assert!((s.std[0] - 1.0).abs() < 0.08, "{:?}", s.std);
        assert!((s.std[1] - 1.0).abs() < 0.08, "{:?}", s.std);
    }

    #[test]
    fn invalid_configurations() {
        let prop = ProposalSpec::diagonal(&[3.2, 0.006]).unwrap();
        let noise = NoiseModel::new(1.0).unwrap();
        let mut b = ConstantBackend { response: vec![0.0; 3] };
        let mut cfg = ChainConfig {
            initial: vec![5.0, 1.0],
            iterations: 10,
            burn_in: 0,
            seed: 0,
        };
        assert!(matches!(
            run_chain(&mut b, &[0.0; 3], &noise, &prior(), &prop, &cfg),
            Err(Error::InvalidInitialState(_))
        ));
        cfg.initial = vec![50.0, 1.0];
        cfg.burn_in = 10;
        assert!(run_chain(&mut b, &[0.0; 3], &noise, &prior(), &prop, &cfg).is_err());
        cfg.burn_in = 0;
        assert!(run_chain(&mut b, &[0.0; 2], &noise, &prior(), &prop, &cfg).is_err());
    }

    #[test]
    fn fd_backend_matches_direct_solve() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let sensors = crate::fd::default_sensor_grid();
        let mut b = FdBackend::new(&pb, 33, FdSolver::default(), sensors.clone());
        let got = b.predict(&[15.0, 1.4]).unwrap().response;
        let grid = crate::fd::solve_poisson(15.0, 1.4, 33, None).unwrap();
        assert_eq!(got, sample_sensors(&grid, &sensors).unwrap());
        assert_eq!(got.len(), 81);
    }

    #[test]
    fn summary_of_simple_chains() {
        let constant = vec![vec![3.0, 4.0]; 10];
        let s = posterior_summary(&constant, 2, &[(3.0, 3.0), (4.0, 4.0)], 7).unwrap();
        assert_eq!(s.mean, vec![3.0, 4.0]);
        assert_eq!(s.std, vec![0.0, 0.0]);
        assert_eq!(s.marginals[0].counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.marginals[0].counts.iter().sum::<u64>(), 8);
        let total: u64 = s.joint.as_ref().unwrap().counts.iter().flatten().sum();
        assert_eq!(total, 8);

        let alternating: Vec<Vec<f64>> = (0..100).map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![3.0, 2.0] }).collect();
        let s = posterior_summary(&alternating, 0, &[(0.0, 4.0), (0.0, 2.0)], 4).unwrap();
        assert_eq!(s.mean, vec![2.0, 1.0]);
        assert!((s.marginals[0].density().iter().sum::<f64>() * s.marginals[0].width() - 1.0).abs() < 1e-12);

        assert!(posterior_summary(&constant, 10, &[(0.0, 1.0), (0.0, 1.0)], 4).is_err());
    }

    #[test]
    fn summary_of_gaussian_stream() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d0 = Normal::new(15.0, 2.0).unwrap();
        let d1 = Normal::new(1.4, 0.05).unwrap();
        let n = 20_000;
        let states: Vec<Vec<f64>> = (0..n).map(|_| vec![d0.sample(&mut rng), d1.sample(&mut rng)]).collect();
        let ranges = sample_ranges(&states, 0);
        let s = posterior_summary(&states, 0, &ranges, 30).unwrap();
        let se = |sd: f64| sd / (n as f64).sqrt();
        assert!((s.mean[0] - 15.0).abs() < 3.0 * se(2.0));
        assert!((s.mean[1] - 1.4).abs() < 3.0 * se(0.05));
        // Standard error of the sample std is about sd / sqrt(2n).
        assert!((s.std[0] - 2.0).abs() < 3.0 * 2.0 / (2.0 * n as f64).sqrt());
        assert_eq!(s.marginals[0].counts.iter().sum::<u64>(), n as u64);
    }

    #[test]
    fn chain_csv_layout() {
        let r = flat_chain(4, 1, &ProposalSpec::diagonal(&[3.2, 0.006]).unwrap());
        let mut buf = Vec::new();
        write_chain_csv(&mut buf, &r, &["c1".into(), "c2".into()], &["seed 1".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed 1");
        assert_eq!(
            lines[1],
            "iteration,c1,c2,accepted,log_posterior,refine_triggered,refine_iterations,refine_residual,candidate_c1,candidate_c2"
        );
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("0,4.5000000000000000e1,1.9500000000000000e0,0,"));
        assert_eq!(lines[2].split(',').count(), 10);
    }
}
