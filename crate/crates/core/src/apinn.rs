//! Surrogate refinement on the fly: every candidate is checked against a
//! residual threshold and, when it fails, the surrogate takes descent steps
//! until it passes. The refined parameters produce the response; the
//! refinement policy decides what the global surrogate keeps.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::PriorSpec;
use crate::error::{Error, Result};
use crate::fd::fmt17;
use crate::mh::{ForwardBackend, Prediction, RefinementRecord};
use crate::net::{AdamConfig, AdamState, NetworkParams};
use crate::pde::{Domain, PdeProblem};
use crate::trainer::{sample_batch, sample_points};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RefinementPolicy {
    /// Refine per candidate, then restore the offline parameters.
    #[serde(rename = "discard")]
    DiscardAll,
    /// Keep every refinement step.
    #[serde(rename = "keep-all")]
    KeepAll,
    /// Keep only the first refinement step of each candidate.
    #[default]
    #[serde(rename = "keep-first")]
    KeepFirst,
}

impl RefinementPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DiscardAll => "discard",
            Self::KeepAll => "keep-all",
            Self::KeepFirst => "keep-first",
        }
    }
}

/// Where the stochastic coordinates of the refinement batch come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineSampling {
    /// Fixed at the candidate.
    #[default]
    Candidate,
    /// Drawn from the prior.
    Prior,
}

/// How per-checkpoint residuals are reduced to the statistic compared
/// against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualAggregate {
    /// Largest absolute residual.
    Max,
    /// Mean absolute residual.
    MeanAbs,
    /// Mean squared residual, i.e. the refinement loss evaluated on the
    /// checkpoints.
    #[default]
    MeanSquare,
}

impl ResidualAggregate {
    pub fn reduce(self, residuals: &[f64]) -> f64 {
        let n = residuals.len() as f64;
        match self {
            Self::Max => residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
            Self::MeanAbs => residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
            Self::MeanSquare => residuals.iter().map(|r| r * r).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApinnConfig {
    pub epsilon_t: f64,
    pub policy: RefinementPolicy,
    pub refine_batch_size: usize,
    pub max_refine_iterations: u64,
    pub sampling: RefineSampling,
    pub aggregate: ResidualAggregate,
    /// Seed of the refinement-batch stream.
    pub seed: u64,
    /// Optimizer for the online descent steps.
    pub adam: AdamConfig,
}

impl Default for ApinnConfig {
    fn default() -> Self {
        Self {
            epsilon_t: 0.025,
            policy: RefinementPolicy::default(),
            refine_batch_size: 64,
            max_refine_iterations: 10_000,
            sampling: RefineSampling::default(),
            aggregate: ResidualAggregate::default(),
            seed: 4,
            adam: AdamConfig::default(),
        }
    }
}

impl ApinnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_t > 0.0) {
            return Err(Error::Config(format!("epsilon_t must be positive, got {}", self.epsilon_t)));
        }
        if self.refine_batch_size == 0 || self.max_refine_iterations == 0 {
            return Err(Error::Config("refine_batch_size and max_refine_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Points where the residual threshold is checked. Boundary points only
/// matter in soft mode, where the boundary mismatch is not zero by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoints {
    pub interior: Vec<(f64, f64)>,
    pub boundary: Vec<(f64, f64)>,
}

impl Checkpoints {
    /// `interior` plus `per_face` equally spaced points on each face,
    /// corners included once.
    pub fn with_boundary(interior: Vec<(f64, f64)>, domain: Domain, per_face: usize) -> Self {
        let mut boundary = Vec::new();
        let k = per_face.max(1);
        for i in 0..k {
            let s = i as f64 / k as f64;
            let x = domain.x0 + s * (domain.x1 - domain.x0);
            let y = domain.y0 + s * (domain.y1 - domain.y0);
            let xr = domain.x1 - s * (domain.x1 - domain.x0);
            let yr = domain.y1 - s * (domain.y1 - domain.y0);
            boundary.extend([(x, domain.y0), (domain.x1, y), (xr, domain.y1), (domain.x0, yr)]);
        }
        Self { interior, boundary }
    }
}

/// Residual statistic at `z` and whether it exceeds `epsilon_t`.
pub fn residual_exceeds(
    params: &NetworkParams,
    problem: &PdeProblem,
    z: &[f64],
    checkpoints: &Checkpoints,
    epsilon_t: f64,
    aggregate: ResidualAggregate,
) -> Result<(bool, f64)> {
    if checkpoints.interior.is_empty() {
        return Err(Error::Empty("residual checkpoints"));
    }
    let mut residuals: Vec<f64> = problem
        .trial_eval_at(params, &checkpoints.interior, z)?
        .iter()
        .map(|e| e.residual_l)
        .collect();
    if !problem.is_hard() && !checkpoints.boundary.is_empty() {
        residuals.extend(
            problem
                .trial_eval_at(params, &checkpoints.boundary, z)?
                .iter()
                .filter_map(|e| e.residual_b),
        );
    }
    let stat = aggregate.reduce(&residuals);
    Ok((!(stat <= epsilon_t), stat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefinementStats {
    /// Candidates that needed at least one descent step.
    pub candidates_refined: u64,
    pub total_descent_iterations: u64,
}

/// Outcome of [`ApinnState::refine_for_candidate`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub used_params: NetworkParams,
    pub descent_iterations: u64,
    /// Residual statistic of `used_params` at the candidate.
    pub residual: f64,
}

/// The global surrogate and everything needed to refine it.
#[derive(Debug, Clone)]
pub struct ApinnState {
    config: ApinnConfig,
    committed: NetworkParams,
    optimizer: AdamState,
    prior: PriorSpec,
    checkpoints: Checkpoints,
    rng: ChaCha8Rng,
    stats: RefinementStats,
}

impl ApinnState {
    /// Starts from offline parameters with fresh Adam moments.
    pub fn new(
        params: NetworkParams,
        prior: PriorSpec,
        checkpoints: Checkpoints,
        config: ApinnConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !params.is_finite() {
            return Err(Error::Config("offline parameters are not finite".into()));
        }
        Ok(Self {
            optimizer: AdamState::new(&params, config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            committed: params,
            config,
            prior,
            checkpoints,
            stats: RefinementStats::default(),
        })
    }

    pub fn config(&self) -> &ApinnConfig {
        &self.config
    }

    pub fn committed_params(&self) -> &NetworkParams {
        &self.committed
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn stats(&self) -> RefinementStats {
        self.stats
    }

    /// Checks the committed surrogate at `z` and refines a copy until the
    /// residual statistic is within the threshold, then commits according
    /// to the policy.
    pub fn refine_for_candidate(&mut self, problem: &PdeProblem, z: &[f64]) -> Result<Refinement> {
        if !self.prior.contains(z) {
            return Err(Error::Config(format!("candidate {z:?} lies outside the prior support")));
        }
        let cfg = &self.config;
        let check = |p: &NetworkParams| residual_exceeds(p, problem, z, &self.checkpoints, cfg.epsilon_t, cfg.aggregate);
        let (mut exceeds, mut residual) = check(&self.committed)?;
        if !exceeds {
            return Ok(Refinement {
                used_params: self.committed.clone(),
                descent_iterations: 0,
                residual,
            });
        }

        let mut params = self.committed.clone();
        let mut optimizer = self.optimizer.clone();
        let mut first = None;
        let mut steps = 0u64;
        while exceeds && steps < cfg.max_refine_iterations {
            let batch = match cfg.sampling {
                RefineSampling::Candidate => sample_points(problem, cfg.refine_batch_size, &mut self.rng, |_| z.to_vec()),
                RefineSampling::Prior => sample_batch(problem, &self.prior, cfg.refine_batch_size, &mut self.rng),
            };
            let lg = problem.loss_gradient(&params, &batch)?;
            optimizer.step(&mut params, &lg.gradient)?;
            steps += 1;
            if !params.is_finite() {
                return Err(Error::TrainingDiverged { iteration: steps as usize });
            }
            if steps == 1 && cfg.policy == RefinementPolicy::KeepFirst {
                first = Some((params.clone(), optimizer.clone()));
            }
            (exceeds, residual) = check(&params)?;
        }

        self.stats.candidates_refined += 1;
        self.stats.total_descent_iterations += steps;
        if exceeds {
            return Err(Error::RefinementExhausted {
                candidate: z.to_vec(),
                residual,
                iterations: steps as usize,
            });
        }
        match cfg.policy {
            RefinementPolicy::DiscardAll => {}
            RefinementPolicy::KeepAll => {
                self.committed = params.clone();
                self.optimizer = optimizer;
            }
            RefinementPolicy::KeepFirst => {
                (self.committed, self.optimizer) = first.expect("at least one step was taken");
            }
        }
        Ok(Refinement {
            used_params: params,
            descent_iterations: steps,
            residual,
        })
    }
}

/// Forward model backed by an adaptively refined surrogate.
pub struct ApinnBackend {
    problem: PdeProblem,
    sensors: Vec<(f64, f64)>,
    state: ApinnState,
}

impl ApinnBackend {
    pub fn new(problem: PdeProblem, sensors: Vec<(f64, f64)>, state: ApinnState) -> Self {
        Self { problem, sensors, state }
    }

    pub fn state(&self) -> &ApinnState {
        &self.state
    }

    pub fn into_state(self) -> ApinnState {
        self.state
    }
}

impl ForwardBackend for ApinnBackend {
    fn name(&self) -> &'static str {
        "apinn"
    }

    fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    fn predict(&mut self, p: &[f64]) -> Result<Prediction> {
        let r = self.state.refine_for_candidate(&self.problem, p)?;
        Ok(Prediction {
            response: self.problem.surrogate_responses(&r.used_params, &self.sensors, p)?,
            refinement: RefinementRecord {
                triggered: r.descent_iterations > 0,
                descent_iterations: r.descent_iterations,
                residual: Some(r.residual),
            },
        })
    }
}

/// Running totals after each iteration: `(candidates refined, descent iterations)`.
pub fn cumulative_series(log: &[RefinementRecord]) -> Vec<(u64, u64)> {
    log.iter()
        .scan((0u64, 0u64), |acc, r| {
            acc.0 += u64::from(r.triggered);
            acc.1 += r.descent_iterations;
            Some(*acc)
        })
        .collect()
}

/// `iteration,cumulative_refined,cumulative_descent_iterations`.
pub fn write_cumulative_csv<W: Write>(out: &mut W, log: &[RefinementRecord], preamble: &[String]) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "iteration,cumulative_refined,cumulative_descent_iterations")?;
    for (i, (c, d)) in cumulative_series(log).into_iter().enumerate() {
        writeln!(out, "{i},{c},{d}")?;
    }
    Ok(())
}

/// Candidates that triggered refinement: `iteration,<names>...,descent_iterations`.
pub fn write_refined_scatter_csv<W: Write>(
    out: &mut W,
    candidates: &[Vec<f64>],
    log: &[RefinementRecord],
    names: &[String],
    preamble: &[String],
) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    write!(out, "iteration")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    writeln!(out, ",descent_iterations")?;
    for (i, (z, r)) in candidates.iter().zip(log).enumerate().filter(|(_, (_, r))| r.triggered) {
        write!(out, "{i}")?;
        for v in z {
            write!(out, ",{}", fmt17(*v))?;
        }
        writeln!(out, ",{}", r.descent_iterations)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::default_sensor_grid;
    use crate::mh::PinnBackend;
    use crate::pde::{poisson_problem, ConstraintKind};

    fn prior() -> PriorSpec {
        PriorSpec::new(vec![(10.0, 100.0), (0.1, 4.0)]).unwrap()
    }

    fn small_net(seed: u64) -> NetworkParams {
        NetworkParams::init(&[4, 12, 12, 1], seed).unwrap()
    }

    fn state(params: NetworkParams, config: ApinnConfig) -> ApinnState {
        let ck = Checkpoints {
            interior: default_sensor_grid(),
            boundary: Vec::new(),
        };
        ApinnState::new(params, prior(), ck, config).unwrap()
    }

    #[test]
    fn aggregates() {
        let r = [0.5, -2.0, 1.0, 0.5];
        assert_eq!(ResidualAggregate::Max.reduce(&r), 2.0);
        assert_eq!(ResidualAggregate::MeanAbs.reduce(&r), 1.0);
        assert_eq!(ResidualAggregate::MeanSquare.reduce(&r), 1.375);
    }

    #[test]
    fn exceeds_matches_pointwise_recomputation() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let params = small_net(3);
        let sensors = default_sensor_grid();
        let ck = Checkpoints {
            interior: sensors.clone(),
            boundary: Vec::new(),
        };
        let z = [15.0, 1.4];
        let (ex, max) = residual_exceeds(&params, &pb, &z, &ck, 0.025, ResidualAggregate::Max).unwrap();
        assert!(ex);
        let direct = sensors
            .iter()
            .map(|&(x, y)| pb.trial_eval(&params, x, y, &z).unwrap().residual_l.abs())
            .fold(0.0, f64::max);
        assert_eq!(max, direct);
        let (ex, ms) = residual_exceeds(&params, &pb, &z, &ck, f64::INFINITY, ResidualAggregate::MeanSquare).unwrap();
        assert!(!ex && ms.is_finite());
    }

    #[test]
    fn soft_mode_includes_boundary_checkpoints() {
        let pb = poisson_problem(ConstraintKind::Soft { lambda_boundary: 1.0 });
        let params = small_net(5);
        let z = [20.0, 1.0];
        let interior_only = Checkpoints {
            interior: vec![(0.5, 0.5)],
            boundary: Vec::new(),
        };
        let with_b = Checkpoints::with_boundary(vec![(0.5, 0.5)], pb.domain, 3);
        assert_eq!(with_b.boundary.len(), 12);
        assert!(with_b.boundary.iter().all(|&(x, y)| pb.domain.on_boundary(x, y).is_some()));
        let (_, a) = residual_exceeds(&params, &pb, &z, &interior_only, 1.0, ResidualAggregate::Max).unwrap();
        let (_, b) = residual_exceeds(&params, &pb, &z, &with_b, 1.0, ResidualAggregate::Max).unwrap();
        let bmax = with_b
            .boundary
            .iter()
            .map(|&(x, y)| pb.trial_eval(&params, x, y, &z).unwrap().residual_b.unwrap().abs())
            .fold(0.0, f64::max);
        assert_eq!(b, a.max(bmax));
    }

    #[test]
    fn no_refinement_when_threshold_holds() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let mut st = state(
            small_net(1),
            ApinnConfig {
                epsilon_t: f64::INFINITY,
                ..ApinnConfig::default()
            },
        );
        let before = st.clone();
        let r = st.refine_for_candidate(&pb, &[15.0, 1.4]).unwrap();
        assert_eq!(r.descent_iterations, 0);
        assert_eq!(st.committed_params(), before.committed_params());
        assert_eq!(r.used_params, *before.committed_params());
        assert_eq!(st.stats(), RefinementStats::default());
    }

    /// A threshold the small network reaches in a handful of steps.
    fn reachable_threshold(pb: &PdeProblem, params: &NetworkParams, z: &[f64]) -> f64 {
        let ck = Checkpoints {
            interior: default_sensor_grid(),
            boundary: Vec::new(),
        };
        let (_, r0) = residual_exceeds(params, pb, z, &ck, 1.0, ResidualAggregate::MeanSquare).unwrap();
        0.9 * r0
    }

    #[test]
    fn keep_first_commits_the_first_step() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let params = small_net(2);
        let z = [15.0, 1.4];
        let eps = reachable_threshold(&pb, &params, &z);
        let mut st = state(
            params.clone(),
            ApinnConfig {
                epsilon_t: eps,
                policy: RefinementPolicy::KeepFirst,
                refine_batch_size: 16,
                ..ApinnConfig::default()
            },
        );
        let mut rng = st.rng.clone();
        let r = st.refine_for_candidate(&pb, &z).unwrap();
        assert!(r.descent_iterations >= 2, "{}", r.descent_iterations);
        assert!(r.residual <= eps);

        // Rebuild the single kept update from the first batch.
        let batch = sample_points(&pb, 16, &mut rng, |_| z.to_vec());
        let g = pb.loss_gradient(&params, &batch).unwrap();
        let mut expected = params.clone();
        let mut opt = AdamState::new(&params, AdamConfig::default());
        opt.step(&mut expected, &g.gradient).unwrap();
        assert_eq!(*st.committed_params(), expected);
        assert_eq!(st.optimizer().step_count, 1);
        assert_ne!(*st.committed_params(), r.used_params);
        assert_eq!(
            st.stats(),
            RefinementStats {
                candidates_refined: 1,
                total_descent_iterations: r.descent_iterations
            }
        );
    }

    #[test]
    fn policies_commit_as_documented() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let params = small_net(2);
        let z = [15.0, 1.4];
        let eps = reachable_threshold(&pb, &params, &z);
        let run = |policy| {
            let mut st = state(
                params.clone(),
                ApinnConfig {
                    epsilon_t: eps,
                    policy,
                    refine_batch_size: 16,
                    ..ApinnConfig::default()
                },
            );
            let r = st.refine_for_candidate(&pb, &z).unwrap();
            (st, r)
        };
        let (discard, rd) = run(RefinementPolicy::DiscardAll);
        assert_eq!(*discard.committed_params(), params);
        assert_eq!(discard.optimizer().step_count, 0);
        let (keep, rk) = run(RefinementPolicy::KeepAll);
        assert_eq!(*keep.committed_params(), rk.used_params);
        assert_eq!(keep.optimizer().step_count, rk.descent_iterations);
        // Same seed, same batches: the refined parameters do not depend on the policy.
        assert_eq!(rd.used_params, rk.used_params);
    }

    #[test]
    fn exhaustion_is_an_error() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let mut st = state(
            small_net(1),
            ApinnConfig {
                epsilon_t: 1e-12,
                max_refine_iterations: 3,
                refine_batch_size: 8,
                ..ApinnConfig::default()
            },
        );
        let before = st.committed_params().clone();
        match st.refine_for_candidate(&pb, &[15.0, 1.4]) {
            Err(Error::RefinementExhausted {
                candidate, iterations, ..
            }) => {
                assert_eq!(candidate, vec![15.0, 1.4]);
                assert_eq!(iterations, 3);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
        assert_eq!(*st.committed_params(), before);
        assert!(st.refine_for_candidate(&pb, &[5.0, 1.4]).is_err());
    }

    #[test]
    fn prior_sampling_mode_refines() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let params = small_net(2);
        let z = [15.0, 1.4];
        let eps = reachable_threshold(&pb, &params, &z);
        let mut st = state(
            params,
            ApinnConfig {
                epsilon_t: eps,
                sampling: RefineSampling::Prior,
                refine_batch_size: 16,
                ..ApinnConfig::default()
            },
        );
        let r = st.refine_for_candidate(&pb, &z).unwrap();
        assert!(r.descent_iterations >= 1 && r.residual <= eps);
    }

    #[test]
    fn infinite_threshold_matches_frozen_surrogate() {
        let pb = poisson_problem(ConstraintKind::Hard);
        let params = small_net(7);
        let sensors = default_sensor_grid();
        let mut pinn = PinnBackend::new(pb.clone(), params.clone(), sensors.clone());
        let st = state(
            params,
            ApinnConfig {
                epsilon_t: f64::INFINITY,
                ..ApinnConfig::default()
            },
        );
        let mut apinn = ApinnBackend::new(pb, sensors, st);
        for z in [[15.0, 1.4], [80.0, 3.9], [10.0, 0.1]] {
            let a = apinn.predict(&z).unwrap();
            assert_eq!(a.response.len(), 81);
            assert_eq!(a.response, pinn.predict(&z).unwrap().response);
            assert!(!a.refinement.triggered);
        }
    }

    #[test]
    fn cumulative_series_is_running_sum() {
        let log: Vec<RefinementRecord> = [0u64, 3, 0, 1, 5]
            .iter()
            .map(|&d| RefinementRecord {
                triggered: d > 0,
                descent_iterations: d,
                residual: None,
            })
            .collect();
        assert_eq!(cumulative_series(&log), vec![(0, 0), (1, 3), (1, 3), (2, 4), (3, 9)]);
        let mut buf = Vec::new();
        let cands: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        write_refined_scatter_csv(&mut buf, &cands, &log, &["c1".into(), "c2".into()], &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("1,1.0000000000000000e0,"));
    }
}
