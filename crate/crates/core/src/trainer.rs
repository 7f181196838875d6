//! Offline mini-batch training of the residual surrogate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::PriorSpec;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, AdamState, NetworkParams};
use crate::pde::{PdeProblem, PointKind, SamplePoint};

/// Stop once the mean loss of the latest window moves by less than
/// `threshold` (relative) against the window before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub window: usize,
    pub threshold: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 1000,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Record the batch loss every `loss_stride` iterations.
    pub loss_stride: usize,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_iterations: 50_000,
            seed: 2,
            adam: AdamConfig::default(),
            loss_stride: 100,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.loss_stride == 0 {
            return Err(Error::Config("loss_stride must be at least 1".into()));
        }
        if let Some(es) = self.early_stop {
            if es.window == 0 || !(es.threshold > 0.0) {
                return Err(Error::Config("early_stop needs window >= 1 and threshold > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: NetworkParams,
    pub optimizer: AdamState,
    /// `(iteration, batch loss)` at every recorded stride.
    pub loss_history: Vec<(usize, f64)>,
    pub iterations: usize,
}

/// Draws `n` interior points uniformly over the domain, each with parameters
/// from `draw_p`; in soft mode each draw also gets a boundary partner
/// sharing the same parameters.
pub fn sample_points<R, F>(problem: &PdeProblem, n: usize, rng: &mut R, mut draw_p: F) -> Vec<SamplePoint>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<f64>,
{
    let d = problem.domain;
    let soft = !problem.is_hard();
    let mut points = Vec::with_capacity(if soft { 2 * n } else { n });
    let mut boundary = Vec::new();
    for _ in 0..n {
        let x = rng.random_range(d.x0..d.x1);
        let y = rng.random_range(d.y0..d.y1);
        let p = draw_p(rng);
        if soft {
            let (bx, by) = d.boundary_point(rng.random_range(0.0..d.perimeter()));
            boundary.push(SamplePoint {
                x: bx,
                y: by,
                p: p.clone(),
                kind: PointKind::Boundary,
            });
        }
        points.push(SamplePoint {
            x,
            y,
            p,
            kind: PointKind::Interior,
        });
    }
    points.extend(boundary);
    points
}

/// Mini-batch with stochastic coordinates from the prior.
pub fn sample_batch<R: Rng + ?Sized>(problem: &PdeProblem, prior: &PriorSpec, n: usize, rng: &mut R) -> Vec<SamplePoint> {
    sample_points(problem, n, rng, |r| prior.sample(r))
}

/// Runs `max_iterations` Adam steps on the batch-mean residual loss.
pub fn train_offline(
    problem: &PdeProblem,
    prior: &PriorSpec,
    config: &TrainConfig,
    initial: NetworkParams,
) -> Result<TrainResult> {
    train_with_progress(problem, prior, config, initial, |_, _| {})
}

/// [`train_offline`] with a callback receiving each recorded `(iteration, loss)`.
pub fn train_with_progress<F>(
    problem: &PdeProblem,
    prior: &PriorSpec,
    config: &TrainConfig,
    initial: NetworkParams,
    mut on_record: F,
) -> Result<TrainResult>
where
    F: FnMut(usize, f64),
{
    config.validate()?;
    if initial.input_dim() != problem.input_dim() || prior.dim() != problem.n_params() {
        return Err(Error::DimensionMismatch {
            expected: problem.input_dim(),
            got: initial.input_dim(),
            context: "network input vs problem",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = initial;
    let mut optimizer = AdamState::new(&params, config.adam);
    let mut loss_history = Vec::new();
    let mut recent = Vec::new();
    let mut iterations = 0;

    for i in 0..config.max_iterations {
        let batch = sample_batch(problem, prior, config.batch_size, &mut rng);
        let lg = problem
            .loss_gradient(&params, &batch)
            .map_err(|_| Error::TrainingDiverged { iteration: i })?;
        if !lg.loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: i });
        }
        if i % config.loss_stride == 0 {
            loss_history.push((i, lg.loss));
            on_record(i, lg.loss);
        }
        optimizer.step(&mut params, &lg.gradient)?;
        if !params.is_finite() {
            return Err(Error::TrainingDiverged { iteration: i });
        }
        iterations = i + 1;

        if let Some(es) = config.early_stop {
            recent.push(lg.loss);
            if recent.len() == 2 * es.window {
                let prev = recent[..es.window].iter().sum::<f64>() / es.window as f64;
                let cur = recent[es.window..].iter().sum::<f64>() / es.window as f64;
                if ((cur - prev) / prev).abs() < es.threshold {
                    break;
                }
                recent.drain(..es.window);
            }
        }
    }

    Ok(TrainResult {
        params,
        optimizer,
        loss_history,
        iterations,
    })
}
