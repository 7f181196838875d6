//! Steady PDE problems and constraint-assigned trial solutions.
//!
//! A [`PdeProblem`] bundles a residual operator on a box domain, Dirichlet
//! boundary data and the way the boundary condition is imposed on the
//! network surrogate:
//!
//! * [`ConstraintMode::Soft`]: the surrogate is the raw network `N` and the
//!   boundary mismatch enters the loss as a weighted penalty.
//! * [`ConstraintMode::Hard`]: the surrogate is `C + m·N`, where `C` meets
//!   the boundary data and `m` vanishes on every face, so the boundary
//!   condition holds exactly for any parameters.
//!
//! Derivatives of `C` and `m` are analytic; residuals are formed from the
//! chain-ruled derivatives of the composed surrogate.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ExtendedOutput, LossGradient, NetworkParams};

/// Tolerance for deciding whether a point sits on (or inside) the domain.
const DOMAIN_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Domain {
    pub const UNIT_SQUARE: Domain = Domain {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 - DOMAIN_TOL
            && x <= self.x1 + DOMAIN_TOL
            && y >= self.y0 - DOMAIN_TOL
            && y <= self.y1 + DOMAIN_TOL
    }

    pub fn on_boundary(&self, x: f64, y: f64) -> Option<Face> {
        if !self.contains(x, y) {
            return None;
        }
        if (x - self.x0).abs() <= DOMAIN_TOL {
            Some(Face::Left)
        } else if (x - self.x1).abs() <= DOMAIN_TOL {
            Some(Face::Right)
        } else if (y - self.y0).abs() <= DOMAIN_TOL {
            Some(Face::Bottom)
        } else if (y - self.y1).abs() <= DOMAIN_TOL {
            Some(Face::Top)
        } else {
            None
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    /// Maps arc length `s ∈ [0, perimeter)` to a boundary point, walking
    /// bottom, right, top, left.
    pub fn boundary_point(&self, s: f64) -> (f64, f64) {
        let (w, h) = (self.width(), self.height());
        if s < w {
            (self.x0 + s, self.y0)
        } else if s < w + h {
            (self.x1, self.y0 + (s - w))
        } else if s < 2.0 * w + h {
            (self.x1 - (s - w - h), self.y1)
        } else {
            (self.x0, self.y1 - (s - 2.0 * w - h).min(h))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

/// The differential operator `L(x, y, p; u)` of a steady problem.
pub trait PdeOperator: Send + Sync {
    /// Forcing term, for reporting and the finite-difference oracle.
    fn source(&self, x: f64, y: f64, p: &[f64]) -> f64;

    /// Residual `L(x, y, p; u)` given `u` and its spatial derivatives.
    fn residual(&self, x: f64, y: f64, p: &[f64], u: &ExtendedOutput) -> f64;

    /// Partials of [`PdeOperator::residual`] with respect to the five entries of `u`.
    fn residual_partials(&self, x: f64, y: f64, p: &[f64], u: &ExtendedOutput) -> ExtendedOutput;
}

/// Boundary construction for hard constraint assignment: `u = C + m·N`.
pub trait TrialFunction: Send + Sync {
    /// `C` and its derivatives; satisfies the boundary data.
    fn particular(&self, x: f64, y: f64) -> ExtendedOutput;
    /// `m` and its derivatives; vanishes on every boundary face.
    fn multiplier(&self, x: f64, y: f64) -> ExtendedOutput;
}

/// `C ≡ 0`, `m = (x - x0)(x1 - x)(y - y0)(y1 - y)`.
#[derive(Debug, Clone, Copy)]
pub struct BoxMultiplier {
    pub domain: Domain,
}

impl TrialFunction for BoxMultiplier {
    fn particular(&self, _x: f64, _y: f64) -> ExtendedOutput {
        ExtendedOutput::default()
    }

    fn multiplier(&self, x: f64, y: f64) -> ExtendedOutput {
        let d = self.domain;
        let fx = (x - d.x0) * (d.x1 - x);
        let fy = (y - d.y0) * (d.y1 - y);
        let dfx = d.x0 + d.x1 - 2.0 * x;
        let dfy = d.y0 + d.y1 - 2.0 * y;
        ExtendedOutput {
            u: fx * fy,
            du_dx: dfx * fy,
            du_dy: fx * dfy,
            d2u_dx2: -2.0 * fy,
            d2u_dy2: -2.0 * fx,
        }
    }
}

/// How the boundary condition is imposed on the surrogate.
#[derive(Clone)]
pub enum ConstraintMode {
    /// Penalty with weight `lambda_boundary` on the squared boundary mismatch.
    Soft { lambda_boundary: f64 },
    /// Exact assignment through a trial function.
    Hard(Arc<dyn TrialFunction>),
}

impl fmt::Debug for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Soft { lambda_boundary } => write!(f, "Soft {{ lambda_boundary: {lambda_boundary} }}"),
            Self::Hard(_) => write!(f, "Hard"),
        }
    }
}

/// Config-level selector for the constraint mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ConstraintKind {
    Hard,
    Soft { lambda_boundary: f64 },
}

impl Default for ConstraintKind {
    fn default() -> Self {
        Self::Hard
    }
}

pub type BoundaryValue = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// A steady problem on a box with Dirichlet data on every face.
#[derive(Clone)]
pub struct PdeProblem {
    pub name: String,
    pub domain: Domain,
    pub operator: Arc<dyn PdeOperator>,
    /// Dirichlet value per face; faces not listed are homogeneous.
    pub boundary: Vec<(Face, BoundaryValue)>,
    pub constraint: ConstraintMode,
    /// Bounds used to min-max scale each stochastic parameter to `[-1, 1]`
    /// before it enters the network.
    pub param_bounds: Vec<(f64, f64)>,
    /// Fixed factor applied to the raw network output before constraint
    /// assignment, so `N` stays O(1) when the solution does not.
    pub output_scale: f64,
    /// Index of a stochastic parameter that scales the solution linearly
    /// (a source amplitude). When set, the network output is also multiplied
    /// by that parameter and only has to learn the shape of the solution.
    pub amplitude_param: Option<usize>,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("constraint", &self.constraint)
            .field("param_bounds", &self.param_bounds)
            .field("output_scale", &self.output_scale)
            .finish()
    }
}

/// Constraint-assigned surrogate at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialEvaluation {
    pub u: f64,
    pub residual_l: f64,
    /// Boundary mismatch `u - g`, present for points on the boundary.
    pub residual_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Interior,
    Boundary,
}

/// A collocation point in the joint spatial × stochastic space.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub p: Vec<f64>,
    pub kind: PointKind,
}

/// `-(u_xx + u_yy) = c1 sin(c2 π x) cos(c2 π y)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonOperator;

impl PdeOperator for PoissonOperator {
    fn source(&self, x: f64, y: f64, p: &[f64]) -> f64 {
        poisson_source(x, y, p[0], p[1])
    }

    fn residual(&self, x: f64, y: f64, p: &[f64], u: &ExtendedOutput) -> f64 {
        -u.laplacian() - self.source(x, y, p)
    }

    fn residual_partials(&self, _x: f64, _y: f64, _p: &[f64], _u: &ExtendedOutput) -> ExtendedOutput {
        ExtendedOutput {
            d2u_dx2: -1.0,
            d2u_dy2: -1.0,
            ..Default::default()
        }
    }
}

pub fn poisson_source(x: f64, y: f64, c1: f64, c2: f64) -> f64 {
    c1 * (c2 * PI * x).sin() * (c2 * PI * y).cos()
}

/// Prior support of `(c1, c2)` in the Poisson experiment.
pub const POISSON_BOUNDS: [(f64, f64); 2] = [(10.0, 100.0), (0.1, 4.0)];

/// Poisson problem on the unit square with homogeneous Dirichlet data.
pub fn poisson_problem(constraint: ConstraintKind) -> PdeProblem {
    let domain = Domain::UNIT_SQUARE;
    let constraint = match constraint {
        ConstraintKind::Hard => ConstraintMode::Hard(Arc::new(BoxMultiplier { domain })),
        ConstraintKind::Soft { lambda_boundary } => ConstraintMode::Soft { lambda_boundary },
    };
    let zero: BoundaryValue = Arc::new(|_, _, _| 0.0);
    PdeProblem {
        name: "poisson".into(),
        domain,
        operator: Arc::new(PoissonOperator),
        boundary: [Face::Left, Face::Right, Face::Bottom, Face::Top]
            .into_iter()
            .map(|f| (f, zero.clone()))
            .collect(),
        constraint,
        param_bounds: POISSON_BOUNDS.to_vec(),
        output_scale: 1.0,
        amplitude_param: None,
    }
}

/// `u_h = C + m·N` with all five derivative entries.
fn compose_hard(c: &ExtendedOutput, m: &ExtendedOutput, n: &ExtendedOutput) -> ExtendedOutput {
    ExtendedOutput {
        u: c.u + m.u * n.u,
        du_dx: c.du_dx + (m.du_dx * n.u + m.u * n.du_dx),
        du_dy: c.du_dy + (m.du_dy * n.u + m.u * n.du_dy),
        d2u_dx2: c.d2u_dx2 + (m.d2u_dx2 * n.u + 2.0 * m.du_dx * n.du_dx + m.u * n.d2u_dx2),
        d2u_dy2: c.d2u_dy2 + (m.d2u_dy2 * n.u + 2.0 * m.du_dy * n.du_dy + m.u * n.d2u_dy2),
    }
}

/// Pulls partials with respect to `u_h` back to partials with respect to `N`.
fn compose_hard_adjoint(m: &ExtendedOutput, g: &ExtendedOutput) -> ExtendedOutput {
    ExtendedOutput {
        u: g.u * m.u + g.du_dx * m.du_dx + g.du_dy * m.du_dy + g.d2u_dx2 * m.d2u_dx2 + g.d2u_dy2 * m.d2u_dy2,
        du_dx: g.du_dx * m.u + 2.0 * g.d2u_dx2 * m.du_dx,
        du_dy: g.du_dy * m.u + 2.0 * g.d2u_dy2 * m.du_dy,
        d2u_dx2: g.d2u_dx2 * m.u,
        d2u_dy2: g.d2u_dy2 * m.u,
    }
}

fn scale(e: &ExtendedOutput, k: f64) -> ExtendedOutput {
    ExtendedOutput {
        u: e.u * k,
        du_dx: e.du_dx * k,
        du_dy: e.du_dy * k,
        d2u_dx2: e.d2u_dx2 * k,
        d2u_dy2: e.d2u_dy2 * k,
    }
}

impl PdeProblem {
    pub fn n_params(&self) -> usize {
        self.param_bounds.len()
    }

    /// Network input width: two spatial coordinates plus the parameters.
    pub fn input_dim(&self) -> usize {
        2 + self.n_params()
    }

    pub fn is_hard(&self) -> bool {
        matches!(self.constraint, ConstraintMode::Hard(_))
    }

    /// Network input row for `(x, y, p)`; spatial coordinates pass through,
    /// parameters are min-max scaled to `[-1, 1]`.
    pub fn encode_into(&self, x: f64, y: f64, p: &[f64], row: &mut [f64]) {
        row[0] = x;
        row[1] = y;
        for ((dst, &v), &(lo, hi)) in row[2..].iter_mut().zip(p).zip(&self.param_bounds) {
            *dst = 2.0 * (v - lo) / (hi - lo) - 1.0;
        }
    }

    pub fn encode(&self, x: f64, y: f64, p: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; self.input_dim()];
        self.encode_into(x, y, p, &mut row);
        row
    }

    fn check_point(&self, x: f64, y: f64, p: &[f64]) -> Result<()> {
        if !self.domain.contains(x, y) {
            return Err(Error::OutsideDomain { x, y });
        }
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: p.len(),
                context: "stochastic parameter vector",
            });
        }
        Ok(())
    }

    fn encode_points<'a, I>(&self, points: I, n: usize) -> Result<Array2<f64>>
    where
        I: Iterator<Item = (f64, f64, &'a [f64])>,
    {
        let d = self.input_dim();
        let mut inputs = Array2::<f64>::zeros((n, d));
        let flat = inputs.as_slice_mut().expect("fresh array");
        for (i, (x, y, p)) in points.enumerate() {
            self.check_point(x, y, p)?;
            self.encode_into(x, y, p, &mut flat[i * d..(i + 1) * d]);
        }
        Ok(inputs)
    }

    /// Dirichlet value `g(x, y, p)` at a boundary point.
    pub fn boundary_value(&self, face: Face, x: f64, y: f64, p: &[f64]) -> f64 {
        self.boundary
            .iter()
            .find(|(f, _)| *f == face)
            .map_or(0.0, |(_, g)| g(x, y, p))
    }

    /// Surrogate and its derivatives after constraint assignment.
    fn out_scale(&self, p: &[f64]) -> f64 {
        self.output_scale * self.amplitude_param.map_or(1.0, |k| p[k])
    }

    fn assign(&self, x: f64, y: f64, p: &[f64], n: &ExtendedOutput) -> ExtendedOutput {
        let n = scale(n, self.out_scale(p));
        match &self.constraint {
            ConstraintMode::Soft { .. } => n,
            ConstraintMode::Hard(trial) => compose_hard(&trial.particular(x, y), &trial.multiplier(x, y), &n),
        }
    }

    fn evaluation(&self, x: f64, y: f64, p: &[f64], n: &ExtendedOutput) -> TrialEvaluation {
        let u = self.assign(x, y, p, n);
        let residual_l = self.operator.residual(x, y, p, &u);
        let residual_b = self
            .domain
            .on_boundary(x, y)
            .map(|face| u.u - self.boundary_value(face, x, y, p));
        TrialEvaluation {
            u: u.u,
            residual_l,
            residual_b,
        }
    }

    /// Constraint-assigned surrogate and residuals at one point.
    pub fn trial_eval(&self, params: &NetworkParams, x: f64, y: f64, p: &[f64]) -> Result<TrialEvaluation> {
        self.check_point(x, y, p)?;
        let n = params.forward_extended(&self.encode(x, y, p))?;
        Ok(self.evaluation(x, y, p, &n))
    }

    /// Batched [`PdeProblem::trial_eval`] at many spatial points with a common `p`.
    pub fn trial_eval_at(&self, params: &NetworkParams, points: &[(f64, f64)], p: &[f64]) -> Result<Vec<TrialEvaluation>> {
        let inputs = self.encode_points(points.iter().map(|&(x, y)| (x, y, p)), points.len())?;
        let outs = params.forward_extended_batch(inputs.view())?;
        Ok(points
            .iter()
            .zip(&outs)
            .map(|(&(x, y), n)| self.evaluation(x, y, p, n))
            .collect())
    }

    /// Predicted physical response at one point.
    pub fn surrogate_response(&self, params: &NetworkParams, x: f64, y: f64, p: &[f64]) -> Result<f64> {
        Ok(self.surrogate_responses(params, &[(x, y)], p)?[0])
    }

    /// Predicted responses at many spatial points with a common `p`.
    ///
    /// Uses the value-only network pass; the value stream of the extended
    /// pass performs the same arithmetic.
    pub fn surrogate_responses(&self, params: &NetworkParams, points: &[(f64, f64)], p: &[f64]) -> Result<Vec<f64>> {
        let inputs = self.encode_points(points.iter().map(|&(x, y)| (x, y, p)), points.len())?;
        let values = params.forward_batch(inputs.view())?;
        Ok(points
            .iter()
            .zip(values.iter())
            .map(|(&(x, y), &n)| (x, y, n * self.out_scale(p)))
            .map(|(x, y, n)| match &self.constraint {
                ConstraintMode::Soft { .. } => n,
                ConstraintMode::Hard(trial) => trial.particular(x, y).u + trial.multiplier(x, y).u * n,
            })
            .collect())
    }

    /// Batch-mean constraint-assigned loss and its parameter gradient.
    ///
    /// Interior points contribute `L²`; in soft mode boundary points
    /// contribute `λ (u - g)²`. The sum is divided by the number of interior
    /// points, so one interior/boundary pair per draw reproduces the
    /// single-sample loss `L² + λ B²`.
    pub fn loss_gradient(&self, params: &NetworkParams, points: &[SamplePoint]) -> Result<LossGradient> {
        let inputs = self.encode_points(points.iter().map(|s| (s.x, s.y, s.p.as_slice())), points.len())?;
        let interior = points.iter().filter(|s| s.kind == PointKind::Interior).count();
        if interior == 0 {
            return Err(Error::Empty("interior collocation points"));
        }
        // loss_gradient averages over all rows; rescale to a per-interior mean.
        let weight = points.len() as f64 / interior as f64;
        let lambda = match &self.constraint {
            ConstraintMode::Soft { lambda_boundary } => *lambda_boundary,
            ConstraintMode::Hard(_) => 0.0,
        };
        params.loss_gradient(
            |i, _, n| {
                let s = &points[i];
                match s.kind {
                    PointKind::Interior => {
                        let u = self.assign(s.x, s.y, &s.p, n);
                        let r = self.operator.residual(s.x, s.y, &s.p, &u);
                        let dr = self.operator.residual_partials(s.x, s.y, &s.p, &u);
                        let g_u = scale(&dr, 2.0 * r * weight);
                        let g_n = match &self.constraint {
                            ConstraintMode::Soft { .. } => g_u,
                            ConstraintMode::Hard(trial) => compose_hard_adjoint(&trial.multiplier(s.x, s.y), &g_u),
                        };
                        (weight * r * r, scale(&g_n, self.out_scale(&s.p)))
                    }
                    PointKind::Boundary => {
                        if lambda == 0.0 {
                            return (0.0, ExtendedOutput::default());
                        }
                        let face = self.domain.on_boundary(s.x, s.y).unwrap_or(Face::Left);
                        let b = self.assign(s.x, s.y, &s.p, n).u - self.boundary_value(face, s.x, s.y, &s.p);
                        let g = ExtendedOutput {
                            u: 2.0 * lambda * b * weight * self.out_scale(&s.p),
                            ..Default::default()
                        };
                        (weight * lambda * b * b, g)
                    }
                }
            },
            inputs.view(),
        )
    }
}
