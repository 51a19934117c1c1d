//! Convex minimization over affine fibers.
//!
//! `min_t f(y0 + N t)` for a convex positively homogeneous `f`. The
//! polyhedral and ellipsoidal cases are solved exactly elsewhere; this module
//! holds the closed-form least-squares route and a projected descent with
//! Armijo backtracking for the remaining smooth gauges.

use nalgebra::{DMatrix, DVector};

use crate::bodies::BodyError;

/// Minimize `|M (y0 + N t)|` in closed form (normal equations).
pub fn min_fiber_least_squares(
    m: &DMatrix<f64>,
    y0: &DVector<f64>,
    null_basis: &DMatrix<f64>,
) -> (f64, DVector<f64>) {
    let a = m * null_basis;
    let b = m * y0;
    // minimize |a t + b|: t = -(a^T a)^{-1} a^T b via SVD pseudo-inverse
    let svd = a.clone().svd(true, true);
    let t = svd.solve(&(-&b), 1e-12).unwrap_or_else(|_| DVector::zeros(null_basis.ncols()));
    let y = y0 + null_basis * &t;
    ((m * &y).norm(), y)
}

/// Armijo-backtracking subgradient descent on the fiber. Convexity makes any
/// stationary point global; nonsmooth kinks are handled by step shrinking.
pub fn min_fiber_descent<F, G>(
    f: F,
    grad: G,
    y0: &DVector<f64>,
    null_basis: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>), BodyError>
where
    F: Fn(&DVector<f64>) -> Result<f64, BodyError>,
    G: Fn(&DVector<f64>) -> Result<DVector<f64>, BodyError>,
{
    let k = null_basis.ncols();
    let mut t = DVector::zeros(k);
    let mut y = y0.clone();
    let mut val = f(&y)?;
    let mut step = 1.0f64.max(val);
    let tol = 1e-11 * val.max(1.0);
    for _it in 0..400 {
        let g_full = grad(&y)?;
        let g = null_basis.transpose() * &g_full;
        let gn = g.norm();
        if gn < 1e-13 {
            break;
        }
        let dir = -&g / gn;
        let mut accepted = false;
        let mut s = step;
        for _bt in 0..40 {
            let t_new = &t + &dir * s;
            let y_new = y0 + null_basis * &t_new;
            let v_new = f(&y_new)?;
            if v_new < val - 0.1 * s * gn {
                t = t_new;
                y = y_new;
                let drop = val - v_new;
                val = v_new;
                step = (s * 1.8).min(1.0f64.max(val));
                accepted = true;
                if drop < tol {
                    return Ok((val, y));
                }
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            step *= 0.5;
            if step < 1e-14 * val.max(1.0) {
                break;
            }
        }
    }
    Ok((val, y))
}

/// Minimize a gauge over the affine set `{ y : C^T y = rhs }`, returning a
/// feasible minimizer. The caller supplies the body through closures so both
/// polyhedral-exact and smooth routes can share call sites.
pub fn min_gauge_on_affine(
    body: &crate::bodies::GaugeBody,
    constraints: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<(f64, DVector<f64>), BodyError> {
    let n = body.dim();
    debug_assert_eq!(constraints.nrows(), n);
    // particular solution by least squares, fiber = kernel of C^T
    let ct = constraints.transpose();
    let svd = ct.clone().svd(true, true);
    let y0 = svd
        .solve(rhs, 1e-12)
        .map_err(|e| BodyError::Numerical(format!("affine solve: {e}")))?;
    let cols = crate::linalg::matrix_columns(constraints);
    let kernel = crate::linalg::orthogonal_complement(
        &crate::linalg::orthonormalize_columns(&cols, 1e-12),
        n,
    );
    if kernel.is_empty() {
        return Ok((body.gauge(&y0)?, y0));
    }
    let nb = crate::linalg::columns_to_matrix(&kernel, n);
    if let Some(hs) = body.halfspace_description() {
        return Ok(crate::lp::min_fiber_hd(&hs, &y0, &nb)?);
    }
    if let Some(vs) = body.vertex_description() {
        return Ok(crate::lp::min_fiber_vd(&vs, &y0, &nb)?);
    }
    if let Some(u) = body.ellipsoid_map() {
        let ui = u
            .lu()
            .try_inverse()
            .ok_or_else(|| BodyError::Numerical("singular ellipsoid map".into()))?;
        return Ok(min_fiber_least_squares(&ui, &y0, &nb));
    }
    min_fiber_descent(|y| body.gauge(y), |y| body.gauge_gradient(y), &y0, &nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodies::GaugeBody;

    #[test]
    fn least_squares_fiber() {
        // minimize |(y0 + t n)| with y0 = (1,1), n = (0,1): minimum 1 at t=-1
        let m = DMatrix::identity(2, 2);
        let y0 = DVector::from_vec(vec![1.0, 1.0]);
        let nb = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (v, y) = min_fiber_least_squares(&m, &y0, &nb);
        assert!((v - 1.0).abs() < 1e-12);
        assert!((y[1]).abs() < 1e-12);
    }

    #[test]
    fn descent_matches_smooth_minimum() {
        let body = GaugeBody::lq(2, 4.0).unwrap();
        let y0 = DVector::from_vec(vec![1.0, 0.5]);
        let nb = DMatrix::from_column_slice(2, 1, &[1.0f64 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]);
        let (v, _) = min_fiber_descent(
            |y| body.gauge(y),
            |y| body.gauge_gradient(y),
            &y0,
            &nb,
        )
        .unwrap();
        let mut brute = f64::INFINITY;
        let mut t = -3.0;
        while t < 3.0 {
            let y = &y0 + nb.column(0) * t;
            brute = brute.min(body.gauge(&y).unwrap());
            t += 1e-5;
        }
        assert!((v - brute).abs() < 1e-7, "{v} vs {brute}");
    }

    #[test]
    fn affine_gauge_minimization_interpolates() {
        // minimal l1 gauge with <e1, y> = 1 in R^3 is 1 at e1
        let body = GaugeBody::lq(3, 1.0).unwrap();
        let mut c = DMatrix::zeros(3, 1);
        c[(0, 0)] = 1.0;
        let rhs = DVector::from_vec(vec![1.0]);
        let (v, y) = min_gauge_on_affine(&body, &c, &rhs).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert!((y[0] - 1.0).abs() < 1e-9);
    }
}
