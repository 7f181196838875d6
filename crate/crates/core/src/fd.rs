//! Five-point finite-difference Poisson solver on the unit square.
//!
//! Solves `-(u_xx + u_yy) = f` with homogeneous Dirichlet data on a uniform
//! grid with `n` interior nodes per axis (`h = 1/(n+1)`). Two solvers are
//! provided for the same discrete system:
//!
//! * [`FdSolver::SineTransform`]: direct solve by diagonalising the
//!   discrete Laplacian with the type-I discrete sine transform.
//! * [`FdSolver::ConjugateGradient`]: matrix-free Jacobi-preconditioned CG.
//!
//! Both return only after the discrete residual satisfies
//! `‖b - A u‖₂ ≤ 1e-10 ‖b‖₂`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::poisson_source;

/// Relative residual required of every solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Grid-coordinate distance below which a sensor counts as sitting on a node.
const NODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdSolver {
    #[default]
    SineTransform,
    ConjugateGradient,
}

/// Interior solution values; `values[[i, j]]` sits at `((i+1)h, (j+1)h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdGrid {
    pub n: usize,
    pub values: Array2<f64>,
    /// Relative residual `‖b - A u‖ / ‖b‖` of the returned solution
    /// (zero for a zero right-hand side).
    pub relative_residual: f64,
}

impl FdGrid {
    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Value at full-grid index `(i, j) ∈ [0, n+1]²`, zero on the boundary.
    fn node(&self, i: usize, j: usize) -> f64 {
        if i == 0 || j == 0 || i > self.n || j > self.n {
            0.0
        } else {
            self.values[[i - 1, j - 1]]
        }
    }

    /// `x,y,u` rows over the interior nodes.
    pub fn to_csv(&self) -> String {
        let h = self.h();
        let mut out = String::from("x,y,u\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    fmt17((i + 1) as f64 * h),
                    fmt17((j + 1) as f64 * h),
                    fmt17(self.values[[i, j]])
                );
            }
        }
        out
    }
}

/// Floating-point text at 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Poisson solve for the `c1 sin(c2 π x) cos(c2 π y)` source, or for
/// `source_override` when given.
pub fn solve_poisson(c1: f64, c2: f64, n: usize, source_override: Option<&dyn Fn(f64, f64) -> f64>) -> Result<FdGrid> {
    match source_override {
        Some(f) => solve_with(f, n, FdSolver::default()),
        None => solve_with(&|x, y| poisson_source(x, y, c1, c2), n, FdSolver::default()),
    }
}

/// Solve `-Δu = source` with the chosen linear solver.
pub fn solve_with(source: &dyn Fn(f64, f64) -> f64, n: usize, solver: FdSolver) -> Result<FdGrid> {
    if n < 3 {
        return Err(Error::InvalidGrid(n));
    }
    let h = 1.0 / (n + 1) as f64;
    let rhs = Array2::from_shape_fn((n, n), |(i, j)| source((i + 1) as f64 * h, (j + 1) as f64 * h));
    let b_norm = norm(&rhs);
    if b_norm == 0.0 {
        return Ok(FdGrid {
            n,
            values: Array2::zeros((n, n)),
            relative_residual: 0.0,
        });
    }
    let values = match solver {
        FdSolver::SineTransform => sine_solve(&rhs, h),
        FdSolver::ConjugateGradient => cg_solve(&rhs, h)?,
    };
    let relative_residual = norm(&(&rhs - &apply_laplacian(&values, h))) / b_norm;
    if !(relative_residual <= SOLVER_TOLERANCE) {
        return Err(Error::SolverDiverged {
            iterations: 0,
            residual: relative_residual,
        });
    }
    Ok(FdGrid {
        n,
        values,
        relative_residual,
    })
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `A u` for the negative five-point Laplacian with zero boundary values.
fn apply_laplacian(u: &Array2<f64>, h: f64) -> Array2<f64> {
    let n = u.nrows();
    let inv_h2 = 1.0 / (h * h);
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut s = 4.0 * u[[i, j]];
            if i > 0 {
                s -= u[[i - 1, j]];
            }
            if i + 1 < n {
                s -= u[[i + 1, j]];
            }
            if j > 0 {
                s -= u[[i, j - 1]];
            }
            if j + 1 < n {
                s -= u[[i, j + 1]];
            }
            out[[i, j]] = s * inv_h2;
        }
    }
    out
}

/// `A = (T ⊗ I + I ⊗ T)/h²` with `T = tridiag(-1, 2, -1)`; the sine matrix
/// `S_jk = sin(jkπ/(n+1))` diagonalises `T` and satisfies `S² = (n+1)/2 · I`.
fn sine_solve(rhs: &Array2<f64>, h: f64) -> Array2<f64> {
    let n = rhs.nrows();
    let m = (n + 1) as f64;
    let s = Array2::from_shape_fn((n, n), |(j, k)| ((j + 1) as f64 * (k + 1) as f64 * PI / m).sin());
    let eig: Vec<f64> = (1..=n).map(|k| 2.0 - 2.0 * (k as f64 * PI / m).cos()).collect();
    let mut spectral = s.dot(rhs).dot(&s);
    let norm2 = (2.0 / m) * (2.0 / m);
    for ((a, b), v) in spectral.indexed_iter_mut() {
        *v *= h * h * norm2 / (eig[a] + eig[b]);
    }
    s.dot(&spectral).dot(&s)
}

fn cg_solve(rhs: &Array2<f64>, h: f64) -> Result<Array2<f64>> {
    let n = rhs.nrows();
    // Jacobi preconditioner: the diagonal of A is the constant 4/h².
    let inv_diag = h * h / 4.0;
    let b_norm = norm(rhs);
    let mut u = Array2::<f64>::zeros((n, n));
    let mut r = rhs.clone();
    let mut z = r.mapv(|v| v * inv_diag);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    let max_iter = 10 * n * n;
    for it in 0..max_iter {
        let r_norm = norm(&r);
        if r_norm <= 0.1 * SOLVER_TOLERANCE * b_norm {
            return Ok(u);
        }
        let ap = apply_laplacian(&p, h);
        let pap: f64 = p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: r_norm / b_norm,
            });
        }
        let alpha = rz / pap;
        u.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        z = r.mapv(|v| v * inv_diag);
        let rz_new: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &(beta * &p);
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: norm(&r) / b_norm,
    })
}

/// Solution values at sensor coordinates: exact node lookup when a sensor
/// coincides with a node, bilinear interpolation otherwise.
pub fn sample_sensors(grid: &FdGrid, sensors: &[(f64, f64)]) -> Result<Vec<f64>> {
    let scale = (grid.n + 1) as f64;
    sensors
        .iter()
        .map(|&(x, y)| {
            if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0) {
                return Err(Error::OutsideDomain { x, y });
            }
            let (gx, gy) = (x * scale, y * scale);
            let (rx, ry) = (gx.round(), gy.round());
            let on_x = (gx - rx).abs() / scale <= NODE_TOL;
            let on_y = (gy - ry).abs() / scale <= NODE_TOL;
            if on_x && on_y {
                return Ok(grid.node(rx as usize, ry as usize));
            }
            let (i0, j0) = (gx.floor() as usize, gy.floor() as usize);
            let (tx, ty) = (gx - i0 as f64, gy - j0 as f64);
            let v00 = grid.node(i0, j0);
            let v10 = grid.node(i0 + 1, j0);
            let v01 = grid.node(i0, j0 + 1);
            let v11 = grid.node(i0 + 1, j0 + 1);
            Ok((1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11)
        })
        .collect()
}

/// The 9×9 interior lattice `{0.1, …, 0.9}²`, `x` varying fastest.
pub fn default_sensor_grid() -> Vec<(f64, f64)> {
    (1..=9)
        .flat_map(|j| (1..=9).map(move |i| (i as f64 / 10.0, j as f64 / 10.0)))
        .collect()
}
