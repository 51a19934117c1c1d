//! Linear programs behind polytope gauges and fiber minimizations.
//!
//! All polyhedral norm evaluations reduce to one of four small dense LPs;
//! minilp's deterministic simplex keeps the results reproducible.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("linear program infeasible: {0}")]
    Infeasible(String),
    #[error("linear program unbounded: {0}")]
    Unbounded(String),
    #[error("linear program failed: {0}")]
    Solver(String),
}

fn map_err(e: minilp::Error, what: &str) -> LpError {
    match e {
        minilp::Error::Infeasible => LpError::Infeasible(what.to_string()),
        minilp::Error::Unbounded => LpError::Unbounded(what.to_string()),
    }
}

/// Gauge of the convex hull of a signed vertex list at `x`:
/// `min sum(lambda)` subject to `V lambda = x`, `lambda >= 0`.
pub fn vpoly_gauge(vertices: &[DVector<f64>], x: &DVector<f64>) -> Result<f64, LpError> {
    if x.norm() == 0.0 {
        return Ok(0.0);
    }
    let n = x.len();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = vertices
        .iter()
        .map(|_| p.add_var(1.0, (0.0, f64::INFINITY)))
        .collect();
    for row in 0..n {
        let coeffs: Vec<_> = vertices
            .iter()
            .zip(&vars)
            .map(|(v, &var)| (var, v[row]))
            .collect();
        p.add_constraint(&coeffs, ComparisonOp::Eq, x[row]);
    }
    let sol = p.solve().map_err(|e| map_err(e, "vpoly gauge"))?;
    Ok(sol.objective())
}

/// Support and maximizer of a linear functional over the polar of a vertex
/// body, i.e. `max <y, x>` subject to `<v_i, x> <= 1` for every signed `v_i`.
pub fn hpoly_argmax(
    normals: &[DVector<f64>],
    y: &DVector<f64>,
) -> Result<(f64, DVector<f64>), LpError> {
    let n = y.len();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n)
        .map(|i| p.add_var(y[i], (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for a in normals {
        let coeffs: Vec<_> = vars.iter().enumerate().map(|(i, &v)| (v, a[i])).collect();
        p.add_constraint(&coeffs, ComparisonOp::Le, 1.0);
    }
    let sol = p.solve().map_err(|e| map_err(e, "hpoly argmax"))?;
    let point = DVector::from_fn(n, |i, _| sol[vars[i]]);
    Ok((sol.objective(), point))
}

/// `min_t max_i <a_i, y0 + N t>` for a signed normal list: the gauge of the
/// halfspace body minimized over an affine fiber. Returns (value, minimizer y).
pub fn min_fiber_hd(
    normals: &[DVector<f64>],
    y0: &DVector<f64>,
    null_basis: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>), LpError> {
    let k = null_basis.ncols();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let s = p.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let ts: Vec<_> = (0..k)
        .map(|_| p.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for a in normals {
        // <a, y0> + <N^T a, t> - s <= 0
        let mut coeffs = vec![(s, -1.0)];
        for (j, &t) in ts.iter().enumerate() {
            coeffs.push((t, a.dot(&null_basis.column(j).into_owned())));
        }
        p.add_constraint(&coeffs, ComparisonOp::Le, -a.dot(y0));
    }
    let sol = p.solve().map_err(|e| map_err(e, "min fiber hd"))?;
    let mut y = y0.clone();
    for (j, &t) in ts.iter().enumerate() {
        y += null_basis.column(j) * sol[t];
    }
    Ok((sol.objective(), y))
}

/// `min sum(lambda)` subject to `V lambda - N t = y0`, `lambda >= 0`:
/// the vertex-body gauge minimized over an affine fiber.
pub fn min_fiber_vd(
    vertices: &[DVector<f64>],
    y0: &DVector<f64>,
    null_basis: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>), LpError> {
    let n = y0.len();
    let k = null_basis.ncols();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let lambdas: Vec<_> = vertices
        .iter()
        .map(|_| p.add_var(1.0, (0.0, f64::INFINITY)))
        .collect();
    let ts: Vec<_> = (0..k)
        .map(|_| p.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for row in 0..n {
        let mut coeffs: Vec<_> = vertices
            .iter()
            .zip(&lambdas)
            .map(|(v, &var)| (var, v[row]))
            .collect();
        for (j, &t) in ts.iter().enumerate() {
            coeffs.push((t, -null_basis[(row, j)]));
        }
        p.add_constraint(&coeffs, ComparisonOp::Eq, y0[row]);
    }
    let sol = p.solve().map_err(|e| map_err(e, "min fiber vd"))?;
    let mut y = y0.clone();
    for (j, &t) in ts.iter().enumerate() {
        y += null_basis.column(j) * sol[t];
    }
    Ok((sol.objective(), y))
}
