//! Experiment configuration and the commands behind the `apinn` binary.
//!
//! Every command takes a resolved [`ExperimentConfig`] and writes plain
//! files into `output_dir`. Each output carries the resolved configuration
//! (as a `# config {...}` comment line in CSVs, as a `config` field in
//! JSON), and no output depends on wall-clock time, so a rerun with the
//! same configuration reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::apinn::{
    write_cumulative_csv, write_refined_scatter_csv, ApinnBackend, ApinnConfig, ApinnState, Checkpoints,
    RefinementPolicy,
};
use crate::bayes::{noise_sigma_with_fraction, NoiseModel, PriorSpec, ProposalSpec};
use crate::error::{Error, Result};
use crate::fd::{fmt17, sample_sensors, solve_with, FdSolver};
use crate::mh::{
    posterior_summary, run_chain, sample_ranges, write_chain_csv, ChainConfig, ChainResult, FdBackend, ForwardBackend,
    Histogram2d, PinnBackend, PosteriorSummary, RefinementRecord,
};
use crate::net::{AdamConfig, Checkpoint, NetworkParams, SeedLineage};
use crate::pde::{poisson_problem, ConstraintKind, PdeProblem, POISSON_BOUNDS};
use crate::trainer::{train_with_progress, TrainConfig};

pub const DATASET_FORMAT: &str = "apinn-dataset";

/// Sigma used when the noise fraction is zero, relative to the clean norm.
/// Keeps the likelihood finite for noise-free data.
const MIN_RELATIVE_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    pub data: DataConfig,
    pub fd: FdConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub chain: ChainSection,
    pub apinn: ApinnConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub param_names: Vec<String>,
    /// Uniform prior support, one `[lo, hi]` per parameter. Also the
    /// min-max scaling range of the network inputs.
    pub prior_bounds: Vec<[f64; 2]>,
    pub constraint: ConstraintKind,
    pub output_scale: f64,
    /// Multiply the network output by the source amplitude `c1`.
    pub scale_by_amplitude: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub true_params: Vec<f64>,
    pub noise_fraction: f64,
    pub seed: u64,
    /// Sensors sit on the interior lattice `{1, …, k}/(k+1)` per axis.
    pub sensors_per_axis: usize,
    /// Interior points per axis of the solve that produces the clean data.
    pub grid_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub grid_n: usize,
    pub solver: FdSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub initial: Vec<f64>,
    pub proposal_covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // Online refinement reuses the offline optimizer settings.
        let adam = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        Self {
            output_dir: PathBuf::from("out"),
            problem: ProblemConfig::default(),
            data: DataConfig::default(),
            fd: FdConfig::default(),
            network: NetworkConfig::default(),
            training: TrainConfig {
                adam,
                ..TrainConfig::default()
            },
            chain: ChainSection::default(),
            apinn: ApinnConfig {
                adam,
                ..ApinnConfig::default()
            },
            report: ReportConfig::default(),
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            name: "poisson".into(),
            param_names: vec!["c1".into(), "c2".into()],
            prior_bounds: POISSON_BOUNDS.iter().map(|&(lo, hi)| [lo, hi]).collect(),
            constraint: ConstraintKind::Hard,
            output_scale: 0.1,
            scale_by_amplitude: true,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            true_params: vec![15.0, 1.4],
            noise_fraction: 0.06,
            seed: 1,
            sensors_per_axis: 9,
            grid_n: 99,
        }
    }
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            grid_n: 99,
            solver: FdSolver::default(),
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64; 4],
            init_seed: 1,
        }
    }
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            initial: vec![45.0, 1.95],
            proposal_covariance: vec![vec![3.2, 0.0], vec![0.0, 0.006]],
            iterations: 50_000,
            burn_in: 1000,
            seed: 3,
        }
    }
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { bins: 40 }
    }
}

/// Named overrides applied on top of a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Shorter chain, coarser sampling grid and a smaller training budget.
    Desk,
}

impl Preset {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            Preset::Desk => {
                cfg.chain.iterations = 10_000;
                cfg.fd.grid_n = 33;
                cfg.training.max_iterations = 10_000;
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML file, applies the preset, and validates the result.
    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(p) = preset {
            p.apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.problem.param_names.len();
        if self.problem.prior_bounds.len() != np {
            return Err(Error::Config(format!(
                "{} parameter names but {} prior bounds",
                np,
                self.problem.prior_bounds.len()
            )));
        }
        for (what, len) in [
            ("data.true_params", self.data.true_params.len()),
            ("chain.initial", self.chain.initial.len()),
            ("chain.proposal_covariance", self.chain.proposal_covariance.len()),
        ] {
            if len != np {
                return Err(Error::Config(format!("{what} has {len} entries, expected {np}")));
            }
        }
        if !(self.problem.output_scale.is_finite() && self.problem.output_scale > 0.0) {
            return Err(Error::Config("problem.output_scale must be positive".into()));
        }
        if !(self.data.noise_fraction >= 0.0 && self.data.noise_fraction.is_finite()) {
            return Err(Error::Config("data.noise_fraction must be finite and non-negative".into()));
        }
        if self.data.sensors_per_axis == 0 {
            return Err(Error::Config("data.sensors_per_axis must be at least 1".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config("network.hidden needs at least one positive width".into()));
        }
        if self.chain.iterations <= self.chain.burn_in {
            return Err(Error::Config("chain.iterations must exceed chain.burn_in".into()));
        }
        if self.report.bins == 0 {
            return Err(Error::Config("report.bins must be at least 1".into()));
        }
        self.training.validate()?;
        self.apinn.validate()?;
        self.prior()?;
        ProposalSpec::new(self.chain.proposal_covariance.clone())?;
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::new(self.problem.prior_bounds.iter().map(|b| (b[0], b[1])).collect())
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        if self.problem.name != "poisson" {
            return Err(Error::Config(format!("unknown problem '{}'", self.problem.name)));
        }
        if self.problem.param_names.len() != 2 {
            return Err(Error::Config("the poisson problem has exactly two parameters".into()));
        }
        let mut pb = poisson_problem(self.problem.constraint);
        pb.param_bounds = self.problem.prior_bounds.iter().map(|b| (b[0], b[1])).collect();
        pb.output_scale = self.problem.output_scale;
        pb.amplitude_param = self.problem.scale_by_amplitude.then_some(0);
        Ok(pb)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![2 + self.problem.param_names.len()];
        dims.extend(&self.network.hidden);
        dims.push(1);
        dims
    }

    pub fn sensors(&self) -> Vec<(f64, f64)> {
        let k = self.data.sensors_per_axis;
        let h = 1.0 / (k + 1) as f64;
        (1..=k)
            .flat_map(|j| (1..=k).map(move |i| (i as f64 * h, j as f64 * h)))
            .collect()
    }

    /// Compact single-line JSON echo of the resolved configuration.
    pub fn echo(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join("dataset.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("checkpoint.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    pub param_names: Vec<String>,
    pub true_params: Vec<f64>,
    pub sensors: Vec<[f64; 2]>,
    pub clean: Vec<f64>,
    pub observations: Vec<f64>,
    pub sigma: f64,
    pub noise_fraction: f64,
    pub seed: u64,
    pub grid_n: usize,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Dataset {
    pub fn sensor_points(&self) -> Vec<(f64, f64)> {
        self.sensors.iter().map(|s| (s[0], s[1])).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let ds: Self = serde_json::from_str(&text).map_err(|e| malformed(path, e))?;
        if ds.format != DATASET_FORMAT {
            return Err(malformed(path, format!("format is '{}', expected '{DATASET_FORMAT}'", ds.format)));
        }
        if ds.sensors.len() != ds.observations.len() || ds.sensors.is_empty() {
            return Err(malformed(path, "sensor and observation counts differ or are zero"));
        }
        if !(ds.sigma > 0.0) || ds.observations.iter().any(|v| !v.is_finite()) {
            return Err(malformed(path, "sigma must be positive and observations finite"));
        }
        Ok(ds)
    }
}

fn malformed(path: &Path, reason: impl ToString) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Clean FD response at the true parameters plus seeded Gaussian noise.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let pb = cfg.problem()?;
    let p = cfg.data.true_params.clone();
    let source = |x: f64, y: f64| pb.operator.source(x, y, &p);
    let grid = solve_with(&source, cfg.data.grid_n, cfg.fd.solver)?;
    let sensors = cfg.sensors();
    let clean = sample_sensors(&grid, &sensors)?;
    let norm = clean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sigma = noise_sigma_with_fraction(&clean, cfg.data.noise_fraction)?.max(MIN_RELATIVE_SIGMA * norm.max(1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed);
    let observations = if cfg.data.noise_fraction == 0.0 {
        clean.clone()
    } else {
        let normal = Normal::new(0.0, sigma).map_err(|_| Error::InvalidSigma(sigma))?;
        clean.iter().map(|c| c + normal.sample(&mut rng)).collect()
    };
    Ok(Dataset {
        format: DATASET_FORMAT.into(),
        version: 1,
        param_names: cfg.problem.param_names.clone(),
        true_params: p,
        sensors: sensors.iter().map(|&(x, y)| [x, y]).collect(),
        clean,
        observations,
        sigma,
        noise_fraction: cfg.data.noise_fraction,
        seed: cfg.data.seed,
        grid_n: cfg.data.grid_n,
        config: serde_json::to_value(cfg)?,
    })
}

pub fn cmd_generate_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let ds = generate_dataset(cfg)?;
    let path = cfg.dataset_path();
    write_json(&path, &ds)?;
    Ok(path)
}

/// Offline training; writes `checkpoint.json` and `train_loss.csv`.
pub fn cmd_train<F: FnMut(usize, f64)>(cfg: &ExperimentConfig, progress: F) -> Result<PathBuf> {
    let pb = cfg.problem()?;
    let prior = cfg.prior()?;
    let init = NetworkParams::init(&cfg.layer_dims(), cfg.network.init_seed)?;
    let res = train_with_progress(&pb, &prior, &cfg.training, init, progress)?;

    let lineage = SeedLineage {
        init_seed: cfg.network.init_seed,
        train_seed: cfg.training.seed,
        iterations: res.iterations as u64,
    };
    let path = cfg.checkpoint_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Checkpoint::new(&res.params, lineage, serde_json::to_value(cfg)?).save(&path)?;

    let mut out = create(&cfg.output_dir.join("train_loss.csv"))?;
    writeln!(out, "# config {}", cfg.echo()?)?;
    writeln!(out, "iteration,loss")?;
    for (i, l) in &res.loss_history {
        writeln!(out, "{i},{}", fmt17(*l))?;
    }
    out.flush()?;
    Ok(path)
}

fn load_params(cfg: &ExperimentConfig, path: &Path) -> Result<NetworkParams> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let params = Checkpoint::load(path)?.params()?;
    if params.layer_dims() != cfg.layer_dims().as_slice() {
        return Err(malformed(
            path,
            format!(
                "layer dims {:?} do not match the configured network {:?}",
                params.layer_dims(),
                cfg.layer_dims()
            ),
        ));
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Fd,
    Pinn,
    Apinn,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Fd => "fd",
            BackendKind::Pinn => "pinn",
            BackendKind::Apinn => "apinn",
        }
    }
}

/// Inputs of `sample` that do not live in the config.
#[derive(Debug, Clone, Default)]
pub struct SampleInputs {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub policy: Option<RefinementPolicy>,
}

#[derive(Debug, Clone)]
pub struct SampleOutputs {
    pub tag: String,
    pub chain: ChainResult,
    pub files: Vec<PathBuf>,
}

/// Output tag of a run, used in every file name it writes.
pub fn run_tag(backend: BackendKind, policy: RefinementPolicy) -> String {
    match backend {
        BackendKind::Apinn => format!("apinn-{}", policy.as_str()),
        b => b.as_str().to_string(),
    }
}

#[derive(Serialize)]
struct RunStats<'a> {
    tag: &'a str,
    backend: &'a str,
    policy: Option<&'a str>,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    accepted: usize,
    acceptance_rate: f64,
    posterior_mean: Vec<f64>,
    posterior_std: Vec<f64>,
    candidates_refined: u64,
    total_descent_iterations: u64,
    config: serde_json::Value,
}

#[derive(Serialize)]
struct RefinementEntry {
    iteration: usize,
    candidate: Vec<f64>,
    descent_iterations: u64,
    residual: Option<f64>,
}

#[derive(Serialize)]
struct RefinementReport<'a> {
    tag: &'a str,
    policy: &'a str,
    epsilon_t: f64,
    candidates_refined: u64,
    total_descent_iterations: u64,
    refined: Vec<RefinementEntry>,
    config: serde_json::Value,
}

/// Runs one chain with the chosen forward model and writes its outputs.
pub fn cmd_sample(cfg: &ExperimentConfig, backend: BackendKind, inputs: &SampleInputs) -> Result<SampleOutputs> {
    let mut cfg = cfg.clone();
    if let Some(p) = inputs.policy {
        cfg.apinn.policy = p;
    }
    let ds = Dataset::load(&inputs.dataset.clone().unwrap_or_else(|| cfg.dataset_path()))?;
    if ds.true_params.len() != cfg.problem.param_names.len() {
        return Err(Error::Config("dataset parameter count does not match the problem".into()));
    }
    let pb = cfg.problem()?;
    let prior = cfg.prior()?;
    let proposal = ProposalSpec::new(cfg.chain.proposal_covariance.clone())?;
    let noise = NoiseModel::new(ds.sigma)?;
    let sensors = ds.sensor_points();
    let ckpt_path = inputs.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());

    let mut fwd: Box<dyn ForwardBackend> = match backend {
        BackendKind::Fd => Box::new(FdBackend::new(&pb, cfg.fd.grid_n, cfg.fd.solver, sensors.clone())),
        BackendKind::Pinn => Box::new(PinnBackend::new(pb.clone(), load_params(&cfg, &ckpt_path)?, sensors.clone())),
        BackendKind::Apinn => {
            let params = load_params(&cfg, &ckpt_path)?;
            let checkpoints = if pb.is_hard() {
                Checkpoints {
                    interior: sensors.clone(),
                    boundary: Vec::new(),
                }
            } else {
                Checkpoints::with_boundary(sensors.clone(), pb.domain, cfg.data.sensors_per_axis)
            };
            let state = ApinnState::new(params, prior.clone(), checkpoints, cfg.apinn.clone())?;
            Box::new(ApinnBackend::new(pb.clone(), sensors.clone(), state))
        }
    };
    let chain_cfg = ChainConfig {
        initial: cfg.chain.initial.clone(),
        iterations: cfg.chain.iterations,
        burn_in: cfg.chain.burn_in,
        seed: cfg.chain.seed,
    };
    let chain = run_chain(fwd.as_mut(), &ds.observations, &noise, &prior, &proposal, &chain_cfg)?;
    let tag = run_tag(backend, cfg.apinn.policy);
    let files = write_sample_outputs(&cfg, backend, &tag, &chain)?;
    Ok(SampleOutputs { tag, chain, files })
}

fn write_sample_outputs(
    cfg: &ExperimentConfig,
    backend: BackendKind,
    tag: &str,
    chain: &ChainResult,
) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    let names = &cfg.problem.param_names;
    let preamble = vec![
        format!("config {}", cfg.echo()?),
        format!("tag {tag}"),
        format!("burn_in {}", chain.burn_in),
        format!("seed {}", chain.seed),
    ];
    let mut files = Vec::new();

    let path = dir.join(format!("chain_{tag}.csv"));
    let mut out = create(&path)?;
    write_chain_csv(&mut out, chain, names, &preamble)?;
    out.flush()?;
    files.push(path);

    let ranges = sample_ranges(&chain.states, chain.burn_in);
    let summary = posterior_summary(&chain.states, chain.burn_in, &ranges, cfg.report.bins)?;
    let refined = chain.refinement_log.iter().filter(|r| r.triggered).count() as u64;
    let is_apinn = backend == BackendKind::Apinn;
    let stats = RunStats {
        tag,
        backend: backend.as_str(),
        policy: is_apinn.then(|| cfg.apinn.policy.as_str()),
        iterations: cfg.chain.iterations,
        burn_in: chain.burn_in,
        seed: chain.seed,
        accepted: chain.accepted.iter().filter(|&&a| a).count(),
        acceptance_rate: chain.acceptance_rate,
        posterior_mean: summary.mean,
        posterior_std: summary.std,
        candidates_refined: refined,
        total_descent_iterations: chain.total_descent_iterations(),
        config: serde_json::to_value(cfg)?,
    };
    let path = dir.join(format!("stats_{tag}.json"));
    write_json(&path, &stats)?;
    files.push(path);

    if is_apinn {
        let report = RefinementReport {
            tag,
            policy: cfg.apinn.policy.as_str(),
            epsilon_t: cfg.apinn.epsilon_t,
            candidates_refined: refined,
            total_descent_iterations: chain.total_descent_iterations(),
            refined: chain
                .refinement_log
                .iter()
                .zip(&chain.candidates)
                .enumerate()
                .filter(|(_, (r, _))| r.triggered)
                .map(|(i, (r, z))| RefinementEntry {
                    iteration: i,
                    candidate: z.clone(),
                    descent_iterations: r.descent_iterations,
                    residual: r.residual,
                })
                .collect(),
            config: serde_json::to_value(cfg)?,
        };
        let path = dir.join(format!("refinement_{tag}.json"));
        write_json(&path, &report)?;
        files.push(path);

        let path = dir.join(format!("cumulative_{tag}.csv"));
        let mut out = create(&path)?;
        write_cumulative_csv(&mut out, &chain.refinement_log, &preamble)?;
        out.flush()?;
        files.push(path);

        let path = dir.join(format!("refined_{tag}.csv"));
        let mut out = create(&path)?;
        write_refined_scatter_csv(&mut out, &chain.candidates, &chain.refinement_log, names, &preamble)?;
        out.flush()?;
        files.push(path);
    }
    Ok(files)
}

/// A chain read back from its CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub path: PathBuf,
    pub tag: String,
    pub param_names: Vec<String>,
    pub burn_in: usize,
    pub states: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub refine_triggered: Vec<bool>,
    pub refine_iterations: Vec<u64>,
    /// Candidate per iteration, when the file carries `candidate_*` columns.
    pub candidates: Option<Vec<Vec<f64>>>,
}

impl ChainFile {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.accepted.len().saturating_sub(1);
        if n == 0 {
            0.0
        } else {
            self.accepted.iter().filter(|&&a| a).count() as f64 / n as f64
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let mut tag = None;
        let mut burn_in = None;
        let mut header: Option<Vec<&str>> = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(c) = line.strip_prefix("# ") {
                if let Some(v) = c.strip_prefix("tag ") {
                    tag = Some(v.to_string());
                } else if let Some(v) = c.strip_prefix("burn_in ") {
                    burn_in = Some(v.parse::<usize>().map_err(|e| malformed(path, format!("burn_in: {e}")))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match &header {
                None => {
                    if fields.first() != Some(&"iteration") {
                        return Err(malformed(path, "first non-comment line must be a header starting with 'iteration'"));
                    }
                    header = Some(fields);
                }
                Some(h) => {
                    if fields.len() != h.len() {
                        return Err(malformed(
                            path,
                            format!("line {}: {} fields, header has {}", lineno + 1, fields.len(), h.len()),
                        ));
                    }
                    rows.push((lineno + 1, fields));
                }
            }
        }
        let header = header.ok_or_else(|| malformed(path, "no header line"))?;
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| malformed(path, format!("missing column '{name}'")))
        };
        let acc_col = col("accepted")?;
        let trig_col = col("refine_triggered")?;
        let iter_col = col("refine_iterations")?;
        let cand_cols: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("candidate_"))
            .map(|(i, _)| i)
            .collect();
        // Parameter columns sit between `iteration` and `accepted`.
        let param_names: Vec<String> = header[1..acc_col].iter().map(|s| s.to_string()).collect();
        if param_names.is_empty() {
            return Err(malformed(path, "no parameter columns"));
        }
        let mut states = Vec::with_capacity(rows.len());
        let mut accepted = Vec::with_capacity(rows.len());
        let mut refine_triggered = Vec::with_capacity(rows.len());
        let mut refine_iterations = Vec::with_capacity(rows.len());
        let mut candidates = Vec::with_capacity(rows.len());
        for (lineno, f) in &rows {
            let bad = |what: &str| malformed(path, format!("line {lineno}: bad {what}"));
            let state = f[1..acc_col]
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("parameter value"))?;
            states.push(state);
            accepted.push(parse_bool(f[acc_col]).ok_or_else(|| bad("accepted flag"))?);
            refine_triggered.push(parse_bool(f[trig_col]).ok_or_else(|| bad("refine_triggered flag"))?);
            refine_iterations.push(f[iter_col].parse::<u64>().map_err(|_| bad("refine_iterations"))?);
            if !cand_cols.is_empty() {
                let z = cand_cols
                    .iter()
                    .map(|&k| f[k].parse::<f64>().ok())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("candidate value"))?;
                candidates.push(z);
            }
        }
        if states.is_empty() {
            return Err(malformed(path, "no samples"));
        }
        let tag = tag.unwrap_or_else(|| {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
            stem.strip_prefix("chain_").unwrap_or(stem).to_string()
        });
        let candidates = (cand_cols.len() == param_names.len()).then_some(candidates);
        Ok(Self {
            path: path.to_path_buf(),
            tag,
            param_names,
            burn_in: burn_in.unwrap_or(0),
            states,
            accepted,
            refine_triggered,
            refine_iterations,
            candidates,
        })
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Expands directories into their `chain_*.csv` files, sorted by name.
pub fn collect_chain_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("chain_") && n.ends_with(".csv"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Error::MissingInput(p.display().to_string()));
        }
    }
    if files.is_empty() {
        return Err(Error::Empty("no chain CSV files among the report inputs"));
    }
    Ok(files)
}

/// Marginal and joint histograms, a summary table and a plain-text
/// comparison across chains. The first chain tagged `fd`, if any, is the
/// reference of the comparison.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path, bins: usize) -> Result<Vec<PathBuf>> {
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let chains = collect_chain_files(inputs)?
        .iter()
        .map(|p| ChainFile::read(p))
        .collect::<Result<Vec<_>>>()?;
    let names = chains[0].param_names.clone();
    if let Some(c) = chains.iter().find(|c| c.param_names != names) {
        return Err(malformed(&c.path, "parameter columns differ from the other chains"));
    }
    let mut tags: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &chains {
        *tags.entry(&c.tag).or_default() += 1;
    }
    if let Some((t, _)) = tags.iter().find(|(_, &n)| n > 1) {
        return Err(Error::Config(format!("duplicate chain tag '{t}' among the report inputs")));
    }

    // Shared ranges so the histograms of different chains line up.
    let d = names.len();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for c in &chains {
        for (k, r) in sample_ranges(&c.states, c.burn_in).into_iter().enumerate() {
            ranges[k].0 = ranges[k].0.min(r.0);
            ranges[k].1 = ranges[k].1.max(r.1);
        }
    }
    let summaries = chains
        .iter()
        .map(|c| posterior_summary(&c.states, c.burn_in, &ranges, bins))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let tag_list: Vec<&str> = chains.iter().map(|c| c.tag.as_str()).collect();

    for (k, name) in names.iter().enumerate() {
        let path = out_dir.join(format!("marginal_{name}.csv"));
        let mut out = create(&path)?;
        writeln!(out, "# inputs {}", tag_list.join(" "))?;
        write!(out, "center")?;
        for t in &tag_list {
            write!(out, ",density_{t}")?;
        }
        writeln!(out)?;
        let dens: Vec<Vec<f64>> = summaries.iter().map(|s| s.marginals[k].density()).collect();
        let centers = summaries[0].marginals[k].centers();
        for (b, c) in centers.iter().enumerate() {
            write!(out, "{}", fmt17(*c))?;
            for dn in &dens {
                write!(out, ",{}", fmt17(dn[b]))?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        files.push(path);
    }

    if d >= 2 {
        for (c, s) in chains.iter().zip(&summaries) {
            if let Some(j) = &s.joint {
                let path = out_dir.join(format!("joint_{}.csv", c.tag));
                let mut out = create(&path)?;
                write_joint_csv(&mut out, j, &names)?;
                out.flush()?;
                files.push(path);
            }
        }
    }

    for c in chains.iter().filter(|c| c.refine_triggered.iter().any(|&t| t)) {
        let log: Vec<RefinementRecord> = c
            .refine_triggered
            .iter()
            .zip(&c.refine_iterations)
            .map(|(&triggered, &descent_iterations)| RefinementRecord {
                triggered,
                descent_iterations,
                residual: None,
            })
            .collect();
        let path = out_dir.join(format!("cumulative_{}.csv", c.tag));
        let mut out = create(&path)?;
        write_cumulative_csv(&mut out, &log, &[])?;
        out.flush()?;
        files.push(path);
        if let Some(cands) = &c.candidates {
            let path = out_dir.join(format!("refined_{}.csv", c.tag));
            let mut out = create(&path)?;
            write_refined_scatter_csv(&mut out, cands, &log, &names, &[])?;
            out.flush()?;
            files.push(path);
        }
    }

    let path = out_dir.join("summary.csv");
    let mut out = create(&path)?;
    write!(out, "tag,samples,acceptance_rate")?;
    for n in &names {
        write!(out, ",mean_{n},std_{n}")?;
    }
    writeln!(out, ",candidates_refined,descent_iterations")?;
    for (c, s) in chains.iter().zip(&summaries) {
        write!(out, "{},{},{}", c.tag, s.samples, fmt17(c.acceptance_rate()))?;
        for k in 0..d {
            write!(out, ",{},{}", fmt17(s.mean[k]), fmt17(s.std[k]))?;
        }
        let refined = c.refine_triggered.iter().filter(|&&t| t).count();
        writeln!(out, ",{refined},{}", c.refine_iterations.iter().sum::<u64>())?;
    }
    out.flush()?;
    files.push(path);

    let path = out_dir.join("summary.txt");
    let mut out = create(&path)?;
    out.write_all(comparison_text(&chains, &summaries, &names).as_bytes())?;
    out.flush()?;
    files.push(path);
    Ok(files)
}

fn write_joint_csv<W: Write>(out: &mut W, j: &Histogram2d, names: &[String]) -> Result<()> {
    writeln!(out, "{0}_center,{1}_center,count", names[0], names[1])?;
    let centers = |(lo, hi): (f64, f64), n: usize| {
        let w = (hi - lo) / n as f64;
        (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect::<Vec<_>>()
    };
    let xc = centers(j.x, j.counts.len());
    let yc = centers(j.y, j.counts.first().map_or(0, Vec::len));
    for (i, x) in xc.iter().enumerate() {
        for (k, y) in yc.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt17(*x), fmt17(*y), j.counts[i][k])?;
        }
    }
    Ok(())
}

fn comparison_text(chains: &[ChainFile], summaries: &[PosteriorSummary], names: &[String]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<24} {:>8} {:>7}", "chain", "samples", "accept");
    for n in names {
        let _ = write!(s, " {:>12} {:>10}", format!("mean {n}"), format!("std {n}"));
    }
    let _ = writeln!(s, " {:>9} {:>12}", "refined", "descent");
    for (c, sm) in chains.iter().zip(summaries) {
        let _ = write!(s, "{:<24} {:>8} {:>7.4}", c.tag, sm.samples, c.acceptance_rate());
        for k in 0..names.len() {
            let _ = write!(s, " {:>12.5} {:>10.5}", sm.mean[k], sm.std[k]);
        }
        let refined = c.refine_triggered.iter().filter(|&&t| t).count();
        let _ = writeln!(s, " {:>9} {:>12}", refined, c.refine_iterations.iter().sum::<u64>());
    }
    if let Some(r) = chains.iter().position(|c| c.tag == "fd") {
        let _ = writeln!(s, "\nmean offsets from fd, in units of the combined std:");
        for (i, c) in chains.iter().enumerate().filter(|(i, _)| *i != r) {
            let _ = write!(s, "{:<24}", c.tag);
            for (k, n) in names.iter().enumerate() {
                let comb = (summaries[i].std[k].powi(2) + summaries[r].std[k].powi(2)).sqrt();
                let off = (summaries[i].mean[k] - summaries[r].mean[k]).abs() / comb;
                let _ = write!(s, " {n} {off:.3}");
            }
            let _ = writeln!(s);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[chain]\niterations = 500\n").unwrap();
        assert_eq!(cfg.chain.iterations, 500);
        assert_eq!(cfg.chain.burn_in, 1000);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml_str("[chain]\niterationz = 5\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn desk_preset() {
        let mut cfg = ExperimentConfig::default();
        Preset::Desk.apply(&mut cfg);
        assert_eq!((cfg.chain.iterations, cfg.fd.grid_n, cfg.training.max_iterations), (10_000, 33, 10_000));
    }

    #[test]
    fn sensor_lattice_is_x_fastest() {
        let s = ExperimentConfig::default().sensors();
        assert_eq!(s.len(), 81);
        assert!((s[1].0 - 0.2).abs() < 1e-15 && (s[1].1 - 0.1).abs() < 1e-15);
        assert!((s[9].0 - 0.1).abs() < 1e-15 && (s[9].1 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn layer_dims_follow_hidden() {
        assert_eq!(ExperimentConfig::default().layer_dims(), vec![4, 64, 64, 64, 64, 1]);
    }

    #[test]
    fn noise_free_data_keeps_positive_sigma() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.noise_fraction = 0.0;
        cfg.data.grid_n = 15;
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.observations, ds.clean);
        assert!(ds.sigma > 0.0);
    }

    #[test]
    fn dataset_noise_matches_fraction() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.grid_n = 15;
        let ds = generate_dataset(&cfg).unwrap();
        let norm = ds.clean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ds.sigma - 0.06 * norm).abs() < 1e-15 * norm);
        assert_ne!(ds.observations, ds.clean);
        let again = generate_dataset(&cfg).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn chain_csv_reader_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chain_x.csv");
        fs::write(&p, "iteration,c1,c2,accepted,log_posterior,refine_triggered,refine_iterations\n0,1,2,0,0,0,0\n1,1\n").unwrap();
        assert_eq!(ChainFile::read(&p).unwrap_err().kind(), "malformed");
    }
}
