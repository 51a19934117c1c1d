//! Symmetric convex bodies with evaluable gauges and polars.
//!
//! A body is a recipe tree; constructors canonicalize compositions so that
//! every evaluation lands in the cheapest available route:
//!
//! * polars of lq balls and ellipsoids are rewritten in closed form, and
//!   polars of sections/projections are swapped through duality, so the
//!   `Polar` recipe survives only around vertex polytopes;
//! * projections of vertex bodies become vertex bodies (projected vertices),
//!   sections and projections of ellipsoids become ellipsoids;
//! * whatever remains is evaluated exactly by LP (polyhedral data) or by a
//!   convex fiber minimization (smooth data).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex;
use crate::linalg;
use crate::lp;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid body: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<lp::LpError> for BodyError {
    fn from(e: lp::LpError) -> Self {
        BodyError::Numerical(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Subspace
// ---------------------------------------------------------------------------

/// A linear subspace given by an orthonormal column basis.
#[derive(Clone, Debug)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Orthonormalize the given spanning vectors; fails on dimension 0.
    pub fn from_spanning(vectors: &[DVector<f64>], ambient: usize) -> Result<Self, BodyError> {
        if vectors.iter().any(|v| v.len() != ambient) {
            return Err(BodyError::Invalid("basis vector length mismatch".into()));
        }
        let cols = linalg::orthonormalize_columns(vectors, 1e-10);
        if cols.is_empty() {
            return Err(BodyError::Invalid("subspace of dimension 0 rejected".into()));
        }
        Ok(Subspace {
            basis: linalg::columns_to_matrix(&cols, ambient),
        })
    }

    pub fn from_matrix(basis: DMatrix<f64>) -> Result<Self, BodyError> {
        let cols = linalg::matrix_columns(&basis);
        Self::from_spanning(&cols, basis.nrows())
    }

    pub fn full(n: usize) -> Self {
        Subspace {
            basis: DMatrix::identity(n, n),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The orthogonal projector `B B^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Coordinates of the orthogonal projection of `x` in the basis.
    pub fn coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * x
    }

    pub fn embed(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.basis * w
    }

    pub fn project_ambient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.embed(&self.coords(x))
    }

    pub fn complement(&self) -> Option<Subspace> {
        let cols = linalg::matrix_columns(&self.basis);
        let comp = linalg::orthogonal_complement(&cols, self.ambient_dim());
        if comp.is_empty() {
            None
        } else {
            Some(Subspace {
                basis: linalg::columns_to_matrix(&comp, self.ambient_dim()),
            })
        }
    }

    /// Intersection of two subspaces (kernel of the stacked complement
    /// projectors); `None` if the intersection is trivial.
    pub fn intersect(&self, other: &Subspace) -> Option<Subspace> {
        let n = self.ambient_dim();
        assert_eq!(n, other.ambient_dim());
        let id = DMatrix::identity(n, n);
        let a = &id - self.projector();
        let b = &id - other.projector();
        let mut stacked = DMatrix::zeros(2 * n, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&a);
        stacked.view_mut((n, 0), (n, n)).copy_from(&b);
        let svd = stacked.svd(false, true);
        let vt = svd.v_t.expect("svd v_t");
        let mut kernel: Vec<DVector<f64>> = Vec::new();
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s < 1e-9 {
                kernel.push(vt.row(i).transpose());
            }
        }
        // singular values are sorted descending, but guard against ties
        for i in svd.singular_values.len()..n {
            kernel.push(vt.row(i).transpose());
        }
        if kernel.is_empty() {
            return None;
        }
        Subspace::from_spanning(&kernel, n).ok()
    }
}

// ---------------------------------------------------------------------------
// GaugeBody
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Recipe {
    Lq { q: f64 },
    Ball,
    Polytope { vertices: Vec<DVector<f64>> },
    LinearImage { map: DMatrix<f64>, inv: DMatrix<f64>, base: Box<GaugeBody> },
    Polar { base: Box<GaugeBody> },
    Section { sub: Subspace, base: Box<GaugeBody> },
    Projection { sub: Subspace, base: Box<GaugeBody> },
}

/// A symmetric convex body `K` in `R^n` with evaluable gauge and support.
#[derive(Clone, Debug)]
pub struct GaugeBody {
    dim: usize,
    recipe: Recipe,
}

impl GaugeBody {
    pub fn lq(n: usize, q: f64) -> Result<Self, BodyError> {
        if n == 0 {
            return Err(BodyError::Invalid("dimension must be positive".into()));
        }
        if !(q >= 1.0) {
            return Err(BodyError::Invalid(format!("lq exponent {q} outside [1, inf]")));
        }
        if q == 2.0 {
            return Ok(GaugeBody { dim: n, recipe: Recipe::Ball });
        }
        Ok(GaugeBody { dim: n, recipe: Recipe::Lq { q } })
    }

    pub fn ball(n: usize) -> Result<Self, BodyError> {
        if n == 0 {
            return Err(BodyError::Invalid("dimension must be positive".into()));
        }
        Ok(GaugeBody { dim: n, recipe: Recipe::Ball })
    }

    /// Convex hull of the vertices and their negations; the list is closed
    /// under negation here and must span the ambient space.
    pub fn polytope(vertices: Vec<DVector<f64>>) -> Result<Self, BodyError> {
        if vertices.is_empty() {
            return Err(BodyError::Invalid("polytope needs vertices".into()));
        }
        let n = vertices[0].len();
        if n == 0 || vertices.iter().any(|v| v.len() != n) {
            return Err(BodyError::Invalid("inconsistent vertex dimensions".into()));
        }
        if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(BodyError::Invalid("non-finite vertex coordinate".into()));
        }
        // canonical closure under negation: keep one representative per pair
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for v in &vertices {
            if v.norm() == 0.0 {
                continue;
            }
            let dup = kept
                .iter()
                .any(|u| (u - v).norm() < 1e-12 || (u + v).norm() < 1e-12);
            if !dup {
                kept.push(v.clone());
            }
        }
        if kept.is_empty() {
            return Err(BodyError::Invalid("polytope has empty interior".into()));
        }
        let mut signed = Vec::with_capacity(2 * kept.len());
        for v in kept {
            signed.push(v.clone());
            signed.push(-v);
        }
        let m = linalg::columns_to_matrix(&signed, n);
        if linalg::numerical_rank(&m, 1e-10) < n {
            return Err(BodyError::Invalid(
                "polytope vertices do not span the space".into(),
            ));
        }
        Ok(GaugeBody { dim: n, recipe: Recipe::Polytope { vertices: signed } })
    }

    /// `u K` for an invertible square map `u`.
    pub fn linear_image(map: DMatrix<f64>, base: GaugeBody) -> Result<Self, BodyError> {
        let n = base.dim;
        if map.nrows() != n || map.ncols() != n {
            return Err(BodyError::Dimension { expected: n, got: map.nrows().max(map.ncols()) });
        }
        let inv = map
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| BodyError::Invalid("linear image map is singular".into()))?;
        Ok(GaugeBody {
            dim: n,
            recipe: Recipe::LinearImage { map, inv, base: Box::new(base) },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), BodyError> {
        if x.len() != self.dim {
            Err(BodyError::Dimension { expected: self.dim, got: x.len() })
        } else {
            Ok(())
        }
    }

    // -- structural queries --------------------------------------------------

    /// Signed vertex list when the body is (a linear image of) a polytope.
    pub fn vertex_description(&self) -> Option<Vec<DVector<f64>>> {
        match &self.recipe {
            Recipe::Polytope { vertices } => Some(vertices.clone()),
            Recipe::Lq { q } if *q == 1.0 => {
                let mut vs = Vec::with_capacity(2 * self.dim);
                for i in 0..self.dim {
                    let mut e = DVector::zeros(self.dim);
                    e[i] = 1.0;
                    vs.push(e.clone());
                    vs.push(-e);
                }
                Some(vs)
            }
            Recipe::LinearImage { map, base, .. } => base
                .vertex_description()
                .map(|vs| vs.iter().map(|v| map * v).collect()),
            Recipe::Polar { base } => base.halfspace_description(),
            Recipe::Projection { sub, base } => base
                .vertex_description()
                .map(|vs| vs.iter().map(|v| sub.coords(v)).collect()),
            _ => None,
        }
    }

    /// Signed halfspace normals `a` with `K = {x : <a, x> <= 1}` when known.
    pub fn halfspace_description(&self) -> Option<Vec<DVector<f64>>> {
        match &self.recipe {
            Recipe::Lq { q } if q.is_infinite() => {
                let mut hs = Vec::with_capacity(2 * self.dim);
                for i in 0..self.dim {
                    let mut e = DVector::zeros(self.dim);
                    e[i] = 1.0;
                    hs.push(e.clone());
                    hs.push(-e);
                }
                Some(hs)
            }
            Recipe::Polar { base } => base.vertex_description(),
            Recipe::LinearImage { inv, base, .. } => base
                .halfspace_description()
                .map(|hs| hs.iter().map(|a| inv.transpose() * a).collect()),
            Recipe::Section { sub, base } => base.halfspace_description().map(|hs| {
                hs.iter()
                    .map(|a| sub.coords(a))
                    .filter(|b| b.norm() > 1e-14)
                    .collect()
            }),
            _ => None,
        }
    }

    /// Returns `u` when the body is the ellipsoid `u B_2`.
    pub fn ellipsoid_map(&self) -> Option<DMatrix<f64>> {
        match &self.recipe {
            Recipe::Ball => Some(DMatrix::identity(self.dim, self.dim)),
            Recipe::Lq { q } if *q == 2.0 => Some(DMatrix::identity(self.dim, self.dim)),
            Recipe::LinearImage { map, base, .. } => base.ellipsoid_map().map(|u| map * u),
            Recipe::Polar { base } => base
                .ellipsoid_map()
                .and_then(|u| u.lu().try_inverse())
                .map(|ui| ui.transpose()),
            _ => None,
        }
    }

    fn is_cube(&self) -> bool {
        matches!(&self.recipe, Recipe::Lq { q } if q.is_infinite())
    }

    // -- gauge / support ------------------------------------------------------

    /// Minkowski gauge `||x||_K`.
    pub fn gauge(&self, x: &DVector<f64>) -> Result<f64, BodyError> {
        self.check_dim(x)?;
        match &self.recipe {
            Recipe::Lq { q } => Ok(lq_norm(x, *q)),
            Recipe::Ball => Ok(x.norm()),
            Recipe::Polytope { vertices } => Ok(lp::vpoly_gauge(vertices, x)?),
            Recipe::LinearImage { inv, base, .. } => base.gauge(&(inv * x)),
            Recipe::Polar { base } => base.support(x),
            Recipe::Section { sub, base } => base.gauge(&sub.embed(x)),
            Recipe::Projection { sub, base } => {
                Ok(self.min_fiber(base, sub, x, FiberKind::Gauge)?.0)
            }
        }
    }

    /// Dual gauge `||y||_{K°} = max_{x in K} <x, y>`.
    pub fn support(&self, y: &DVector<f64>) -> Result<f64, BodyError> {
        self.check_dim(y)?;
        match &self.recipe {
            Recipe::Lq { q } => Ok(lq_norm(y, dual_exponent(*q))),
            Recipe::Ball => Ok(y.norm()),
            Recipe::Polytope { vertices } => Ok(vertices
                .iter()
                .map(|v| v.dot(y))
                .fold(0.0f64, f64::max)),
            Recipe::LinearImage { map, base, .. } => base.support(&(map.transpose() * y)),
            Recipe::Polar { base } => base.gauge(y),
            Recipe::Section { sub, base } => {
                Ok(self.min_fiber(base, sub, y, FiberKind::Support)?.0)
            }
            Recipe::Projection { sub, base } => base.support(&sub.embed(y)),
        }
    }

    /// Minimize the base gauge (or support) over the affine fiber
    /// `{ B w + N t }`; exact LP for polyhedral data, least squares for
    /// ellipsoids, convex descent otherwise.
    fn min_fiber(
        &self,
        base: &GaugeBody,
        sub: &Subspace,
        w: &DVector<f64>,
        kind: FiberKind,
    ) -> Result<(f64, DVector<f64>), BodyError> {
        let y0 = sub.embed(w);
        if y0.norm() == 0.0 {
            return Ok((0.0, y0));
        }
        let comp = match sub.complement() {
            Some(c) => c,
            None => {
                // full-dimensional subspace: nothing to minimize over
                let v = match kind {
                    FiberKind::Gauge => base.gauge(&y0)?,
                    FiberKind::Support => base.support(&y0)?,
                };
                return Ok((v, y0));
            }
        };
        let nb = comp.basis().clone();
        match kind {
            FiberKind::Gauge => {
                if let Some(hs) = base.halfspace_description() {
                    return Ok(lp::min_fiber_hd(&hs, &y0, &nb)?);
                }
                if let Some(vs) = base.vertex_description() {
                    return Ok(lp::min_fiber_vd(&vs, &y0, &nb)?);
                }
                if let Some(u) = base.ellipsoid_map() {
                    let ui = u
                        .lu()
                        .try_inverse()
                        .ok_or_else(|| BodyError::Numerical("singular ellipsoid map".into()))?;
                    return Ok(convex::min_fiber_least_squares(&ui, &y0, &nb));
                }
                convex::min_fiber_descent(
                    |y| base.gauge(y),
                    |y| base.gauge_gradient(y),
                    &y0,
                    &nb,
                )
            }
            FiberKind::Support => {
                // support of the base plays the role of an H-style max when
                // the base has vertices, and of a vertex-style LP when the
                // base has halfspaces
                if let Some(vs) = base.vertex_description() {
                    return Ok(lp::min_fiber_hd(&vs, &y0, &nb)?);
                }
                if let Some(hs) = base.halfspace_description() {
                    return Ok(lp::min_fiber_vd(&hs, &y0, &nb)?);
                }
                if let Some(u) = base.ellipsoid_map() {
                    return Ok(convex::min_fiber_least_squares(&u.transpose(), &y0, &nb));
                }
                convex::min_fiber_descent(
                    |y| base.support(y),
                    |y| base.lmo(y).map(|(p, _)| p),
                    &y0,
                    &nb,
                )
            }
        }
    }

    // -- canonicalizing constructors ------------------------------------------

    /// The polar body.
    pub fn polar(&self) -> GaugeBody {
        let recipe = match &self.recipe {
            Recipe::Lq { q } => Recipe::Lq { q: dual_exponent(*q) },
            Recipe::Ball => Recipe::Ball,
            Recipe::Polytope { .. } => Recipe::Polar { base: Box::new(self.clone()) },
            Recipe::LinearImage { map, inv, base } => {
                let pb = base.polar();
                return GaugeBody::linear_image(inv.transpose(), pb).unwrap_or_else(|_| GaugeBody {
                    dim: self.dim,
                    recipe: Recipe::LinearImage {
                        map: inv.transpose(),
                        inv: map.transpose(),
                        base: Box::new(base.polar()),
                    },
                });
            }
            Recipe::Polar { base } => return (**base).clone(),
            Recipe::Section { sub, base } => {
                return base
                    .polar()
                    .project(sub)
                    .expect("projection of polar body");
            }
            Recipe::Projection { sub, base } => {
                return base.polar().section(sub).expect("section of polar body");
            }
        };
        GaugeBody { dim: self.dim, recipe }
    }

    /// The section `K ∩ F` as a body in the coordinates of `F`.
    pub fn section(&self, f: &Subspace) -> Result<GaugeBody, BodyError> {
        if f.ambient_dim() != self.dim {
            return Err(BodyError::Dimension { expected: self.dim, got: f.ambient_dim() });
        }
        if f.dim() == self.dim {
            return Ok(self.clone());
        }
        if let Some(u) = self.ellipsoid_map() {
            let ui = u
                .lu()
                .try_inverse()
                .ok_or_else(|| BodyError::Numerical("singular ellipsoid map".into()))?;
            let m = ui * f.basis();
            let shape = m.transpose() * &m; // gauge(w)^2 = w^T shape w
            let s = linalg::spd_sqrt(&shape);
            let map = s
                .lu()
                .try_inverse()
                .ok_or_else(|| BodyError::Numerical("degenerate ellipsoid section".into()))?;
            return GaugeBody::linear_image(map, GaugeBody::ball(f.dim())?);
        }
        if let Recipe::Polar { base } = &self.recipe {
            let inner = base.project(f)?;
            return Ok(inner.polar());
        }
        if let Recipe::Section { sub, base } = &self.recipe {
            let composed = Subspace::from_matrix(sub.basis() * f.basis())?;
            return base.section(&composed);
        }
        Ok(GaugeBody {
            dim: f.dim(),
            recipe: Recipe::Section { sub: f.clone(), base: Box::new(self.clone()) },
        })
    }

    /// The orthogonal projection `P_F K` as a body in the coordinates of `F`.
    pub fn project(&self, f: &Subspace) -> Result<GaugeBody, BodyError> {
        if f.ambient_dim() != self.dim {
            return Err(BodyError::Dimension { expected: self.dim, got: f.ambient_dim() });
        }
        if f.dim() == self.dim {
            return Ok(self.clone());
        }
        if let Some(vs) = self.vertex_description() {
            let projected: Vec<DVector<f64>> = vs.iter().map(|v| f.coords(v)).collect();
            return GaugeBody::polytope(projected);
        }
        if let Some(u) = self.ellipsoid_map() {
            let m = f.basis().transpose() * u; // image of the unit ball under m
            let shape = &m * m.transpose();
            let map = linalg::spd_sqrt(&shape);
            return GaugeBody::linear_image(map, GaugeBody::ball(f.dim())?);
        }
        if let Recipe::Polar { base } = &self.recipe {
            let inner = base.section(f)?;
            return Ok(inner.polar());
        }
        if let Recipe::Projection { sub, base } = &self.recipe {
            let composed = Subspace::from_matrix(sub.basis() * f.basis())?;
            return base.project(&composed);
        }
        Ok(GaugeBody {
            dim: f.dim(),
            recipe: Recipe::Projection { sub: f.clone(), base: Box::new(self.clone()) },
        })
    }

    // -- linear maximization oracle -------------------------------------------

    /// `argmax_{x in K} <dir, x>` together with an exactness flag; the
    /// returned point attains the support value when the flag is true.
    pub fn lmo(&self, dir: &DVector<f64>) -> Result<(DVector<f64>, bool), BodyError> {
        self.check_dim(dir)?;
        if dir.norm() == 0.0 {
            return Ok((DVector::zeros(self.dim), true));
        }
        match &self.recipe {
            Recipe::Lq { q } => Ok((lq_attainer(dir, *q), true)),
            Recipe::Ball => Ok((dir / dir.norm(), true)),
            Recipe::Polytope { vertices } => {
                let mut best = 0usize;
                let mut bv = f64::NEG_INFINITY;
                for (i, v) in vertices.iter().enumerate() {
                    let d = v.dot(dir);
                    if d > bv {
                        bv = d;
                        best = i;
                    }
                }
                Ok((vertices[best].clone(), true))
            }
            Recipe::LinearImage { map, base, .. } => {
                let (p, ex) = base.lmo(&(map.transpose() * dir))?;
                Ok((map * p, ex))
            }
            Recipe::Polar { base } => match base.vertex_description() {
                Some(vs) => {
                    let (_, point) = lp::hpoly_argmax(&vs, dir)?;
                    Ok((point, true))
                }
                None => self.lmo_iterative(dir),
            },
            Recipe::Projection { sub, base } => {
                let (p, ex) = base.lmo(&sub.embed(dir))?;
                Ok((sub.coords(&p), ex))
            }
            Recipe::Section { .. } => {
                if let Some(hs) = self.halfspace_description() {
                    let (_, point) = lp::hpoly_argmax(&hs, dir)?;
                    Ok((point, true))
                } else {
                    self.lmo_iterative(dir)
                }
            }
        }
    }

    /// Normalized subgradient ascent fallback for bodies without a closed
    /// maximization oracle; the result is a valid boundary point but only a
    /// lower witness for the support value.
    fn lmo_iterative(&self, dir: &DVector<f64>) -> Result<(DVector<f64>, bool), BodyError> {
        let mut x = dir.clone();
        let g0 = self.gauge(&x)?;
        if g0 <= 0.0 {
            return Ok((DVector::zeros(self.dim), false));
        }
        x /= g0;
        let mut best = x.clone();
        let mut best_val = dir.dot(&x);
        for it in 0..80 {
            let step = 1.0 / (1.0 + it as f64 * 0.25);
            let mut cand = &x + dir * (step / dir.norm());
            let g = self.gauge(&cand)?;
            if g <= 0.0 {
                break;
            }
            cand /= g;
            let val = dir.dot(&cand);
            if val > best_val + 1e-14 {
                best_val = val;
                best = cand.clone();
                x = cand;
            } else {
                x = cand;
            }
        }
        Ok((best, false))
    }

    /// A subgradient of the gauge at `x` (a maximizer of `<x, .>` over `K°`).
    pub fn gauge_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, BodyError> {
        self.check_dim(x)?;
        match &self.recipe {
            Recipe::Lq { q } => Ok(lq_gradient(x, *q)),
            Recipe::Ball => {
                let n = x.norm();
                Ok(if n == 0.0 { DVector::zeros(self.dim) } else { x / n })
            }
            Recipe::Polytope { vertices } => {
                if x.norm() == 0.0 {
                    return Ok(DVector::zeros(self.dim));
                }
                let (_, point) = lp::hpoly_argmax(vertices, x)?;
                Ok(point)
            }
            Recipe::LinearImage { inv, base, .. } => {
                Ok(inv.transpose() * base.gauge_gradient(&(inv * x))?)
            }
            Recipe::Polar { base } => Ok(base.lmo(x)?.0),
            Recipe::Section { sub, base } => {
                Ok(sub.coords(&base.gauge_gradient(&sub.embed(x))?))
            }
            Recipe::Projection { sub, base } => {
                let (_, minimizer) = self.min_fiber(base, sub, x, FiberKind::Gauge)?;
                Ok(sub.coords(&base.gauge_gradient(&minimizer)?))
            }
        }
    }
}

#[derive(Clone, Copy)]
enum FiberKind {
    Gauge,
    Support,
}

fn lq_norm(x: &DVector<f64>, q: f64) -> f64 {
    if q.is_infinite() {
        return x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    }
    if q == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if q == 2.0 {
        return x.norm();
    }
    let scale = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = x.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    scale * s.powf(1.0 / q)
}

pub(crate) fn dual_exponent(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

/// Maximizer of `<x, dir>` over the unit lq ball.
fn lq_attainer(dir: &DVector<f64>, q: f64) -> DVector<f64> {
    let n = dir.len();
    if q == 1.0 {
        let mut best = 0usize;
        let mut bv = -1.0;
        for (i, &d) in dir.iter().enumerate() {
            if d.abs() > bv {
                bv = d.abs();
                best = i;
            }
        }
        let mut e = DVector::zeros(n);
        e[best] = if dir[best] >= 0.0 { 1.0 } else { -1.0 };
        return e;
    }
    if q.is_infinite() {
        return DVector::from_fn(n, |i, _| if dir[i] >= 0.0 { 1.0 } else { -1.0 });
    }
    let p = dual_exponent(q);
    let np = lq_norm(dir, p);
    if np == 0.0 {
        return DVector::zeros(n);
    }
    DVector::from_fn(n, |i, _| {
        dir[i].signum() * (dir[i].abs() / np).powf(p - 1.0)
    })
}

/// Subgradient of the lq norm.
fn lq_gradient(x: &DVector<f64>, q: f64) -> DVector<f64> {
    let n = x.len();
    if x.norm() == 0.0 {
        return DVector::zeros(n);
    }
    if q == 1.0 {
        return DVector::from_fn(n, |i, _| {
            if x[i] > 0.0 {
                1.0
            } else if x[i] < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
    }
    if q.is_infinite() {
        let mut best = 0usize;
        let mut bv = -1.0;
        for (i, &v) in x.iter().enumerate() {
            if v.abs() > bv {
                bv = v.abs();
                best = i;
            }
        }
        let mut e = DVector::zeros(n);
        e[best] = x[best].signum();
        return e;
    }
    let nq = lq_norm(x, q);
    DVector::from_fn(n, |i, _| x[i].signum() * (x[i].abs() / nq).powf(q - 1.0))
}

// ---------------------------------------------------------------------------
// Operator norms
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Exact,
    LowerWitness,
}

/// The value of a norm maximization, either exact or certified from below
/// by the stored witness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub kind: NormKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    pub restarts: u32,
}

impl NormEstimate {
    fn exact(value: f64, witness: DVector<f64>) -> Self {
        NormEstimate {
            value,
            kind: NormKind::Exact,
            witness: Some(witness.iter().copied().collect()),
            restarts: 0,
        }
    }
}

/// `||T : K_from -> K_to|| = max_{x in K_from} ||T x||_{K_to}`.
///
/// Exact for vertex bodies, small cubes, ellipsoid pairs and sup-norm
/// targets; otherwise a multistart conditional-gradient lower witness.
pub fn operator_norm(
    t: &DMatrix<f64>,
    from: &GaugeBody,
    to: &GaugeBody,
    restarts: usize,
    seed: u64,
) -> Result<NormEstimate, BodyError> {
    if t.ncols() != from.dim() {
        return Err(BodyError::Dimension { expected: from.dim(), got: t.ncols() });
    }
    if t.nrows() != to.dim() {
        return Err(BodyError::Dimension { expected: to.dim(), got: t.nrows() });
    }

    if let Some(vs) = from.vertex_description() {
        let vals: Vec<f64> = vs
            .par_iter()
            .map(|v| to.gauge(&(t * v)).unwrap_or(f64::NAN))
            .collect();
        let mut best = 0usize;
        for (i, &v) in vals.iter().enumerate() {
            if !v.is_finite() {
                return Err(BodyError::Numerical("gauge failed on vertex".into()));
            }
            if v > vals[best] {
                best = i;
            }
        }
        return Ok(NormEstimate::exact(vals[best], vs[best].clone()));
    }

    if from.is_cube() {
        return cube_source_norm(t, to, from.dim(), restarts, seed);
    }

    if let (Some(uf), Some(ut)) = (from.ellipsoid_map(), to.ellipsoid_map()) {
        let uti = ut
            .lu()
            .try_inverse()
            .ok_or_else(|| BodyError::Numerical("singular target ellipsoid".into()))?;
        let m = uti * t * &uf;
        let svd = m.clone().svd(false, true);
        let mut idx = 0usize;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > svd.singular_values[idx] {
                idx = i;
            }
        }
        let v = svd.v_t.expect("svd v_t").row(idx).transpose();
        return Ok(NormEstimate::exact(svd.singular_values[idx], &uf * v));
    }

    if to.is_cube() {
        // ||Tx||_inf = max_i support_from(row_i)
        let mut best_val = 0.0f64;
        let mut best_row = 0usize;
        for i in 0..t.nrows() {
            let row = t.row(i).transpose();
            let v = from.support(&row)?;
            if v > best_val {
                best_val = v;
                best_row = i;
            }
        }
        let row = t.row(best_row).transpose();
        let (w, exact) = from.lmo(&row)?;
        return Ok(NormEstimate {
            value: best_val,
            kind: if exact { NormKind::Exact } else { NormKind::LowerWitness },
            witness: Some(w.iter().copied().collect()),
            restarts: 0,
        });
    }

    // multistart conditional gradient
    let stream = Stream::new(seed, "operator_norm");
    let results: Vec<(f64, Option<DVector<f64>>)> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let dir = stream.gaussian_vector(from.dim(), r);
            let mut x = match from.lmo(&dir) {
                Ok((p, _)) => p,
                Err(_) => return (f64::NEG_INFINITY, None),
            };
            if x.norm() == 0.0 {
                return (f64::NEG_INFINITY, None);
            }
            let mut val = match to.gauge(&(t * &x)) {
                Ok(v) => v,
                Err(_) => return (f64::NEG_INFINITY, None),
            };
            for _ in 0..60 {
                let img = t * &x;
                let g = match to.gauge_gradient(&img) {
                    Ok(g) => g,
                    Err(_) => break,
                };
                let dir2 = t.transpose() * g;
                let xn = match from.lmo(&dir2) {
                    Ok((p, _)) => p,
                    Err(_) => break,
                };
                let vn = match to.gauge(&(t * &xn)) {
                    Ok(v) => v,
                    Err(_) => break,
                };
                if vn <= val * (1.0 + 1e-13) + 1e-15 {
                    break;
                }
                val = vn;
                x = xn;
            }
            (val, Some(x))
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (i, (v, _)) in results.iter().enumerate() {
        if *v > best.0 {
            best = (*v, i);
        }
    }
    if best.1 == usize::MAX {
        return Err(BodyError::Numerical("all operator-norm restarts failed".into()));
    }
    let witness = results[best.1].1.clone().unwrap();
    Ok(NormEstimate {
        value: best.0,
        kind: NormKind::LowerWitness,
        witness: Some(witness.iter().copied().collect()),
        restarts: restarts as u32,
    })
}

/// Maximization over the cube: exact sign enumeration up to 20 dimensions,
/// multistart single-flip ascent beyond.
fn cube_source_norm(
    t: &DMatrix<f64>,
    to: &GaugeBody,
    n: usize,
    restarts: usize,
    seed: u64,
) -> Result<NormEstimate, BodyError> {
    let cols: Vec<DVector<f64>> = (0..n).map(|j| t.column(j).into_owned()).collect();
    if n <= 20 {
        // Gray-code walk over all sign patterns
        let mut signs = vec![1.0f64; n];
        let mut img = cols.iter().fold(DVector::zeros(t.nrows()), |acc, c| acc + c);
        let mut best_val = to.gauge(&img)?;
        let mut best_signs = signs.clone();
        let total: u64 = 1u64 << n;
        for k in 1..total {
            let flip = k.trailing_zeros() as usize;
            let delta = &cols[flip] * (-2.0 * signs[flip]);
            img += delta;
            signs[flip] = -signs[flip];
            let v = to.gauge(&img)?;
            if v > best_val {
                best_val = v;
                best_signs = signs.clone();
            }
        }
        return Ok(NormEstimate::exact(best_val, DVector::from_vec(best_signs)));
    }
    let stream = Stream::new(seed, "cube_norm");
    let results: Vec<(f64, Vec<f64>)> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut signs = stream.sign_pattern(n, r);
            let mut img = DVector::zeros(t.nrows());
            for (j, c) in cols.iter().enumerate() {
                img += c * signs[j];
            }
            let mut val = to.gauge(&img).unwrap_or(0.0);
            loop {
                let mut improved = false;
                for j in 0..n {
                    let cand = &img - &cols[j] * (2.0 * signs[j]);
                    let v = to.gauge(&cand).unwrap_or(0.0);
                    if v > val * (1.0 + 1e-13) {
                        img = cand;
                        signs[j] = -signs[j];
                        val = v;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
            (val, signs)
        })
        .collect();
    let mut best = 0usize;
    for (i, (v, _)) in results.iter().enumerate() {
        if *v > results[best].0 {
            best = i;
        }
    }
    Ok(NormEstimate {
        value: results[best].0,
        kind: NormKind::LowerWitness,
        witness: Some(results[best].1.clone()),
        restarts: restarts as u32,
    })
}

// ---------------------------------------------------------------------------
// JSON body specifications
// ---------------------------------------------------------------------------

mod serde_q {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> Result<S::Ok, S::Error> {
        if q.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*q)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Word(w) if w.eq_ignore_ascii_case("inf") || w == "∞" => Ok(f64::INFINITY),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("bad q value {w:?}"))),
        }
    }
}

/// Serializable body description (the file format of the CLI).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BodySpec {
    Lq {
        n: usize,
        #[serde(with = "serde_q")]
        q: f64,
    },
    Ball {
        n: usize,
    },
    Polytope {
        vertices: Vec<Vec<f64>>,
    },
    LinearImage {
        map: Vec<Vec<f64>>,
        base: Box<BodySpec>,
    },
    Polar {
        base: Box<BodySpec>,
    },
    Section {
        basis: Vec<Vec<f64>>,
        base: Box<BodySpec>,
    },
    Projection {
        basis: Vec<Vec<f64>>,
        base: Box<BodySpec>,
    },
}

impl BodySpec {
    pub fn build(&self) -> Result<GaugeBody, BodyError> {
        match self {
            BodySpec::Lq { n, q } => GaugeBody::lq(*n, *q),
            BodySpec::Ball { n } => GaugeBody::ball(*n),
            BodySpec::Polytope { vertices } => {
                let vs: Vec<DVector<f64>> = vertices
                    .iter()
                    .map(|v| linalg::vec_to_dvector(v))
                    .collect();
                GaugeBody::polytope(vs)
            }
            BodySpec::LinearImage { map, base } => {
                let b = base.build()?;
                let m = linalg::rows_to_matrix(map)
                    .ok_or_else(|| BodyError::Invalid("bad matrix".into()))?;
                GaugeBody::linear_image(m, b)
            }
            BodySpec::Polar { base } => Ok(base.build()?.polar()),
            BodySpec::Section { basis, base } => {
                let b = base.build()?;
                let f = subspace_from_rows(basis, b.dim())?;
                b.section(&f)
            }
            BodySpec::Projection { basis, base } => {
                let b = base.build()?;
                let f = subspace_from_rows(basis, b.dim())?;
                b.project(&f)
            }
        }
    }
}

fn subspace_from_rows(rows: &[Vec<f64>], ambient: usize) -> Result<Subspace, BodyError> {
    let vecs: Vec<DVector<f64>> = rows.iter().map(|r| linalg::vec_to_dvector(r)).collect();
    Subspace::from_spanning(&vecs, ambient)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn gauge_examples() {
        let cube2 = GaugeBody::lq(2, f64::INFINITY).unwrap();
        assert_eq!(cube2.gauge(&v(&[0.5, -0.25])).unwrap(), 0.5);

        let b1 = GaugeBody::lq(3, 1.0).unwrap();
        assert!((b1.gauge(&v(&[1.0, 1.0, 1.0])).unwrap() - 3.0).abs() < 1e-12);

        let polar_b1 = b1.polar();
        assert!((polar_b1.gauge(&v(&[1.0, 1.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);

        assert_eq!(b1.gauge(&v(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn gauge_dimension_mismatch_is_an_error() {
        let b = GaugeBody::ball(3).unwrap();
        assert!(matches!(
            b.gauge(&v(&[1.0, 2.0])),
            Err(BodyError::Dimension { .. })
        ));
    }

    #[test]
    fn support_examples() {
        let ball = GaugeBody::ball(4).unwrap();
        let y = v(&[1.0, 2.0, -2.0, 0.0]);
        assert!((ball.support(&y).unwrap() - 3.0).abs() < 1e-12);

        let b1 = GaugeBody::lq(3, 1.0).unwrap();
        assert!((b1.support(&v(&[3.0, 1.0, 2.0])).unwrap() - 3.0).abs() < 1e-12);

        let cross = GaugeBody::polytope(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert!((cross.support(&v(&[1.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polytope_closed_under_negation() {
        let p = GaugeBody::polytope(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        // gauge must be symmetric even though only two vertices were given
        let x = v(&[-0.3, 0.7]);
        let g1 = p.gauge(&x).unwrap();
        let g2 = p.gauge(&(-x)).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn degenerate_polytope_rejected() {
        assert!(GaugeBody::polytope(vec![v(&[1.0, 0.0]), v(&[-1.0, 0.0])]).is_err());
    }

    #[test]
    fn polar_of_ellipsoid_matches_formula() {
        let s = Stream::new(42, "polar_ell");
        for t in 0..5 {
            let n = 4;
            let mut u = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    u[(i, j)] = s.substream(t).normal_at((i * n + j) as u64);
                }
            }
            u += DMatrix::identity(n, n) * 3.0; // keep well-conditioned
            let body = GaugeBody::linear_image(u.clone(), GaugeBody::ball(n).unwrap()).unwrap();
            let polar = body.polar();
            for k in 0..20 {
                let x = s.substream(100 + t).gaussian_vector(n, k);
                let expect = (u.transpose() * &x).norm(); // gauge of (u^T)^{-1} B_2
                let got = polar.gauge(&x).unwrap();
                assert!((got - expect).abs() < 1e-9 * expect.max(1.0), "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn bipolar_is_identity_on_samples() {
        let bodies = vec![
            GaugeBody::lq(4, 1.0).unwrap(),
            GaugeBody::lq(4, 1.5).unwrap(),
            GaugeBody::lq(4, f64::INFINITY).unwrap(),
            GaugeBody::ball(4).unwrap(),
        ];
        let s = Stream::new(5, "bipolar");
        for (bi, b) in bodies.iter().enumerate() {
            let pp = b.polar().polar();
            for k in 0..50 {
                let x = s.substream(bi as u64).gaussian_vector(4, k);
                let g1 = b.gauge(&x).unwrap();
                let g2 = pp.gauge(&x).unwrap();
                assert!((g1 - g2).abs() <= 1e-8 * g1.max(1.0));
            }
        }
    }

    #[test]
    fn section_of_cube_diagonal_is_segment() {
        let cube = GaugeBody::lq(2, f64::INFINITY).unwrap();
        let f = Subspace::from_spanning(&[v(&[1.0, 1.0])], 2).unwrap();
        let seg = cube.section(&f).unwrap();
        // the diagonal direction hits the cube boundary at length sqrt(2)
        let g = seg.gauge(&v(&[1.0])).unwrap();
        assert!((g - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projection_of_ball_is_ball() {
        let ball = GaugeBody::ball(5).unwrap();
        let f = Subspace::from_spanning(&[v(&[1.0, 0.0, 0.0, 0.0, 0.0]), v(&[0.0, 1.0, 1.0, 0.0, 0.0])], 5)
            .unwrap();
        let p = ball.project(&f).unwrap();
        for k in 0..10 {
            let w = Stream::new(9, "pball").gaussian_vector(2, k);
            assert!((p.gauge(&w).unwrap() - w.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_of_cross_polytope_is_cross_polytope() {
        let b1 = GaugeBody::lq(3, 1.0).unwrap();
        let f = Subspace::from_spanning(&[v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0])], 3).unwrap();
        let p = b1.project(&f).unwrap();
        let g = p.gauge(&v(&[0.5, -0.5])).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "{g}");
        let s = p.support(&v(&[2.0, 1.0])).unwrap();
        assert!((s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn projection_gauge_of_smooth_body_matches_fiber_minimum() {
        // project the l4 ball in R^3 onto a 2-plane and compare with a
        // brute-force scan over the fiber
        let b = GaugeBody::lq(3, 4.0).unwrap();
        let f = Subspace::from_spanning(&[v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 1.0])], 3).unwrap();
        let p = b.project(&f).unwrap();
        let w = v(&[0.7, 0.4]);
        let got = p.gauge(&w).unwrap();
        let y0 = f.embed(&w);
        let nb = f.complement().unwrap();
        let dirn = nb.basis().column(0).into_owned();
        let mut brute = f64::INFINITY;
        let mut t = -3.0;
        while t <= 3.0 {
            brute = brute.min(b.gauge(&(&y0 + &dirn * t)).unwrap());
            t += 1e-4;
        }
        assert!((got - brute).abs() < 1e-5, "{got} vs {brute}");
        assert!(got <= brute + 1e-9);
    }

    #[test]
    fn section_projection_duality() {
        // gauge of P_F K equals support of K° ∩ F computed independently
        let bodies = vec![
            GaugeBody::lq(4, 1.0).unwrap(),
            GaugeBody::lq(4, 4.0).unwrap(),
            GaugeBody::lq(4, f64::INFINITY).unwrap(),
        ];
        let s = Stream::new(17, "dual");
        for (bi, body) in bodies.iter().enumerate() {
            let cols = vec![
                s.substream(bi as u64).gaussian_vector(4, 0),
                s.substream(bi as u64).gaussian_vector(4, 1),
            ];
            let f = Subspace::from_spanning(&cols, 4).unwrap();
            let proj = body.project(&f).unwrap();
            let sect = body.polar().section(&f).unwrap();
            for k in 0..10 {
                let w = s.substream(1000 + bi as u64).gaussian_vector(2, k);
                let a = proj.gauge(&w).unwrap();
                let b = sect.support(&w).unwrap();
                assert!(
                    (a - b).abs() <= 1e-6 * a.max(1.0),
                    "body {bi}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn operator_norm_identity_is_one() {
        for body in [
            GaugeBody::lq(4, 1.0).unwrap(),
            GaugeBody::ball(4).unwrap(),
            GaugeBody::lq(4, f64::INFINITY).unwrap(),
        ] {
            let id = DMatrix::identity(4, 4);
            let est = operator_norm(&id, &body, &body, 8, 0).unwrap();
            assert!((est.value - 1.0).abs() < 1e-9, "{:?}", est.value);
        }
    }

    #[test]
    fn operator_norm_ball_to_l1_is_sqrt_k() {
        // maximizing the l1 norm over the sphere: attained at (+-1,...)/sqrt(k)
        for k in [2usize, 4, 9] {
            let id = DMatrix::identity(k, k);
            let est = operator_norm(
                &id,
                &GaugeBody::ball(k).unwrap(),
                &GaugeBody::lq(k, 1.0).unwrap(),
                16,
                3,
            )
            .unwrap();
            assert!(
                (est.value - (k as f64).sqrt()).abs() < 1e-7,
                "k={k}: {}",
                est.value
            );
        }
    }

    #[test]
    fn operator_norm_cube_to_ball_is_sqrt_k() {
        for k in [2usize, 4, 9] {
            let id = DMatrix::identity(k, k);
            let est = operator_norm(
                &id,
                &GaugeBody::lq(k, f64::INFINITY).unwrap(),
                &GaugeBody::ball(k).unwrap(),
                8,
                0,
            )
            .unwrap();
            assert_eq!(est.kind, NormKind::Exact);
            assert!((est.value - (k as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_norm_witness_reproduces_value() {
        let s = Stream::new(23, "witness");
        let mut t = DMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                t[(i, j)] = s.normal_at((i * 4 + j) as u64);
            }
        }
        let from = GaugeBody::ball(4).unwrap();
        let to = GaugeBody::lq(4, 1.5).unwrap();
        let est = operator_norm(&t, &from, &to, 32, 7).unwrap();
        let w = linalg::vec_to_dvector(est.witness.as_ref().unwrap());
        let val = to.gauge(&(&t * &w)).unwrap();
        let gw = from.gauge(&w).unwrap();
        assert!(gw <= 1.0 + 1e-9);
        assert!((val - est.value).abs() <= 1e-8 * est.value.max(1.0));
    }

    #[test]
    fn subspace_invariants() {
        let s = Stream::new(2, "subspace");
        let cols: Vec<DVector<f64>> = (0..3).map(|i| s.gaussian_vector(6, i)).collect();
        let f = Subspace::from_spanning(&cols, 6).unwrap();
        let btb = f.basis().transpose() * f.basis();
        assert!(linalg::frobenius(&(btb - DMatrix::identity(3, 3))) < 1e-10);
        let p = f.projector();
        assert!(linalg::frobenius(&(&p * &p - &p)) < 1e-9);
        assert!(linalg::frobenius(&(p.transpose() - &p)) < 1e-12);
    }

    #[test]
    fn subspace_dim_zero_rejected() {
        assert!(Subspace::from_spanning(&[], 4).is_err());
        assert!(Subspace::from_spanning(&[v(&[0.0, 0.0])], 2).is_err());
    }

    #[test]
    fn subspace_intersection() {
        let e1 = Subspace::from_spanning(
            &[v(&[1.0, 0.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0, 0.0]), v(&[0.0, 0.0, 1.0, 0.0])],
            4,
        )
        .unwrap();
        let e2 = Subspace::from_spanning(
            &[v(&[0.0, 1.0, 0.0, 0.0]), v(&[0.0, 0.0, 1.0, 0.0]), v(&[0.0, 0.0, 0.0, 1.0])],
            4,
        )
        .unwrap();
        let h = e1.intersect(&e2).unwrap();
        assert_eq!(h.dim(), 2);
        for j in 0..h.dim() {
            let col = h.basis().column(j).into_owned();
            assert!(col[0].abs() < 1e-9 && col[3].abs() < 1e-9);
        }
    }

    #[test]
    fn body_spec_round_trip() {
        let json = r#"{"type":"lq","n":8,"q":1}"#;
        let spec: BodySpec = serde_json::from_str(json).unwrap();
        let body = spec.build().unwrap();
        assert_eq!(body.dim(), 8);
        let json2 = r#"{"type":"lq","n":4,"q":"inf"}"#;
        let spec2: BodySpec = serde_json::from_str(json2).unwrap();
        let body2 = spec2.build().unwrap();
        assert!(body2.is_cube());
        let back = serde_json::to_string(&spec2).unwrap();
        assert!(back.contains("\"inf\""));

        let nested = r#"{"type":"polar","base":{"type":"polytope","vertices":[[1,0],[0,1]]}}"#;
        let spec3: BodySpec = serde_json::from_str(nested).unwrap();
        let body3 = spec3.build().unwrap();
        // polar of the cross-polytope is the cube
        assert!((body3.gauge(&v(&[1.0, 1.0])).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duality_pairing_holds_on_samples() {
        let bodies = vec![
            GaugeBody::lq(5, 1.0).unwrap(),
            GaugeBody::lq(5, 1.5).unwrap(),
            GaugeBody::ball(5).unwrap(),
            GaugeBody::lq(5, 4.0).unwrap(),
            GaugeBody::lq(5, f64::INFINITY).unwrap(),
        ];
        let s = Stream::new(31, "pairing");
        for (bi, b) in bodies.iter().enumerate() {
            for k in 0..40 {
                let x = s.substream(bi as u64 * 2).gaussian_vector(5, k);
                let y = s.substream(bi as u64 * 2 + 1).gaussian_vector(5, k);
                let lhs = x.dot(&y).abs();
                let rhs = b.gauge(&x).unwrap() * b.support(&y).unwrap();
                assert!(lhs <= rhs + 1e-9, "{lhs} vs {rhs}");
            }
        }
    }
}
