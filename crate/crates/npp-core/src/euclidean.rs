//! Random almost-Euclidean sections and complemented-section search.
//!
//! For bodies `K1 ⊂ alpha B_2` and `K2 ⊇ beta^{-1} B_2`, Haar-random
//! subspaces of a suitable dimension make `K2 ∩ F` nearly a round ball and
//! keep `||P_F : K1 -> K2||` of order `ell(K1°) ell(K2) / n`. This module
//! measures both statements trial by trial and returns the best witnessed
//! subspace.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodies::{operator_norm, BodyError, GaugeBody, NormEstimate, Subspace};
use crate::gaussian::{ell_body, ell_body_exact, haar_subspace, EllEstimate};
use crate::linalg;
use crate::rng::Stream;

/// Inradius/circumradius report for one subspace together with the
/// projection-norm certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionReport {
    /// basis vectors of the selected subspace (rows, ambient coordinates)
    pub basis: Vec<Vec<f64>>,
    pub m: usize,
    pub r: f64,
    pub big_r: f64,
    pub ratio: f64,
    pub pf_norm: NormEstimate,
    /// `ell(K1°) * ell(K2) / n`
    pub bound: f64,
    pub alpha: f64,
    pub beta: f64,
    pub trials: usize,
    /// fraction of trials with `ratio <= ratio_cap` and `pf <= C * bound`
    pub good_fraction: f64,
    pub ratio_cap: f64,
    pub c_desk: f64,
    pub big_c_desk: f64,
    /// witness directions for r and R (ambient coordinates)
    pub witness_r: Vec<f64>,
    pub witness_big_r: Vec<f64>,
    pub seed: u64,
}

impl SectionReport {
    pub fn subspace(&self) -> Subspace {
        let cols: Vec<DVector<f64>> = self.basis.iter().map(|r| linalg::vec_to_dvector(r)).collect();
        let ambient = cols[0].len();
        Subspace::from_spanning(&cols, ambient).expect("stored basis")
    }
}

/// Extremal gauge values over the unit sphere of `F`: `r = 1/max gauge`,
/// `R = 1/min gauge`, found by seeded sphere sampling plus tangent-space
/// refinement. Exact for one-dimensional `F`.
pub fn euclidean_ratio(
    body: &GaugeBody,
    f: &Subspace,
    directions: usize,
    seed: u64,
) -> Result<(f64, f64, DVector<f64>, DVector<f64>), BodyError> {
    let m = f.dim();
    let eval = |w: &DVector<f64>| -> Result<f64, BodyError> { body.gauge(&f.embed(w)) };
    if m == 1 {
        let w = DVector::from_vec(vec![1.0]);
        let g = eval(&w)?;
        let v = f.embed(&w);
        return Ok((1.0 / g, 1.0 / g, v.clone(), v));
    }
    let stream = Stream::new(seed, "euclidean_ratio");
    let evals: Vec<(f64, u64)> = (0..directions.max(2) as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = stream.gaussian_vector(m, i);
            let n = w.norm();
            if n == 0.0 {
                return (f64::NAN, i);
            }
            w /= n;
            (eval(&w).unwrap_or(f64::NAN), i)
        })
        .collect();
    let mut hi = (f64::NEG_INFINITY, 0u64);
    let mut lo = (f64::INFINITY, 0u64);
    for &(v, i) in &evals {
        if !v.is_finite() {
            return Err(BodyError::Numerical("gauge failed on sphere sample".into()));
        }
        if v > hi.0 {
            hi = (v, i);
        }
        if v < lo.0 {
            lo = (v, i);
        }
    }
    // local refinement on the sphere: gradient ascent for the max, descent
    // for the min, projected back to the unit sphere of F
    let refine = |start_idx: u64, maximize: bool| -> Result<(f64, DVector<f64>), BodyError> {
        let mut w = stream.gaussian_vector(m, start_idx);
        w /= w.norm();
        let mut val = eval(&w)?;
        let mut step = 0.5f64;
        for _ in 0..32 {
            let grad_full = body.gauge_gradient(&f.embed(&w))?;
            let mut g = f.coords(&grad_full);
            // tangent component
            let radial = w.dot(&g);
            g -= &w * radial;
            if g.norm() < 1e-14 {
                break;
            }
            let dir = if maximize { g.clone() } else { -g.clone() };
            let mut improved = false;
            let mut s = step;
            for _bt in 0..20 {
                let mut cand = &w + &dir * (s / dir.norm());
                cand /= cand.norm();
                let v = eval(&cand)?;
                if (maximize && v > val * (1.0 + 1e-14)) || (!maximize && v < val * (1.0 - 1e-14)) {
                    w = cand;
                    val = v;
                    step = s * 1.5;
                    improved = true;
                    break;
                }
                s *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((val, w))
    };
    let (max_val, max_w) = {
        let (v, w) = refine(hi.1, true)?;
        if v >= hi.0 {
            (v, w)
        } else {
            let mut w0 = stream.gaussian_vector(m, hi.1);
            w0 /= w0.norm();
            (hi.0, w0)
        }
    };
    let (min_val, min_w) = {
        let (v, w) = refine(lo.1, false)?;
        if v <= lo.0 {
            (v, w)
        } else {
            let mut w0 = stream.gaussian_vector(m, lo.1);
            w0 /= w0.norm();
            (lo.0, w0)
        }
    };
    Ok((
        1.0 / max_val,
        1.0 / min_val,
        f.embed(&max_w),
        f.embed(&min_w),
    ))
}

/// Section dimension from the width formula `sqrt(m) <= c * ell / bound`,
/// clamped to the ambient dimension; 0 signals the degenerate branch.
pub fn dvoretzky_dimension(ell_value: f64, radius_bound: f64, c_desk: f64, ambient: usize) -> usize {
    let root = c_desk * ell_value / radius_bound;
    if !root.is_finite() || root < 1.0 {
        return 0;
    }
    let m = (root * root).floor() as usize;
    m.min(ambient)
}

/// Parameters for the complemented-section search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionSearchParams {
    pub directions: usize,
    pub ratio_cap: f64,
    pub c_desk: f64,
    pub big_c_desk: f64,
    pub ell_samples: u64,
    pub op_restarts: usize,
    pub seed: u64,
}

impl Default for SectionSearchParams {
    fn default() -> Self {
        SectionSearchParams {
            directions: 4096,
            ratio_cap: 4.0,
            c_desk: 0.25,
            big_c_desk: 8.0,
            ell_samples: 20_000,
            op_restarts: 64,
            seed: 0,
        }
    }
}

fn ell_of(body: &GaugeBody, samples: u64, seed: u64) -> Result<EllEstimate, BodyError> {
    match ell_body_exact(body) {
        Some(e) => Ok(e),
        None => ell_body(body, samples, seed),
    }
}

/// Sample Haar subspaces of dimension `m`, measure the Euclidean ratio of
/// `K2 ∩ F` and the projection norm `||P_F : K1 -> K2||`, and return the
/// report for the best subspace (smallest `max(ratio, pf/bound)`).
pub fn find_euclidean_complement(
    k1: &GaugeBody,
    k2: &GaugeBody,
    m: usize,
    trials: usize,
    params: &SectionSearchParams,
) -> Result<SectionReport, BodyError> {
    let h = k1.dim();
    if k2.dim() != h {
        return Err(BodyError::Dimension { expected: h, got: k2.dim() });
    }
    if m < 1 || m > h {
        return Err(BodyError::Invalid(format!("section dimension {m} outside 1..={h}")));
    }
    let id = nalgebra::DMatrix::identity(h, h);
    let ball = GaugeBody::ball(h)?;
    let alpha = operator_norm(&id, k1, &ball, params.op_restarts, params.seed ^ 0xa1)?;
    let beta = operator_norm(&id, &ball, k2, params.op_restarts, params.seed ^ 0xb2)?;
    let ell_k1_polar = ell_of(&k1.polar(), params.ell_samples, params.seed ^ 0xc3)?;
    let ell_k2 = ell_of(k2, params.ell_samples, params.seed ^ 0xd4)?;
    let bound = ell_k1_polar.value * ell_k2.value / h as f64;

    struct Trial {
        ratio: f64,
        r: f64,
        big_r: f64,
        pf: NormEstimate,
        f: Subspace,
        wr: DVector<f64>,
        wbr: DVector<f64>,
    }
    let trial_results: Vec<Result<Trial, BodyError>> = (0..trials.max(1) as u64)
        .into_par_iter()
        .map(|t| {
            let f = haar_subspace(h, m, Stream::new(params.seed, "section_trial").substream(t).u64_at(0));
            let (r, big_r, wr, wbr) =
                euclidean_ratio(k2, &f, params.directions, params.seed ^ (t << 8))?;
            let pf = operator_norm(
                &f.projector(),
                k1,
                k2,
                params.op_restarts,
                params.seed ^ (t << 8) ^ 0x77,
            )?;
            Ok(Trial { ratio: big_r / r, r, big_r, pf, f, wr, wbr })
        })
        .collect();

    let mut trials_ok = Vec::with_capacity(trials);
    for t in trial_results {
        trials_ok.push(t?);
    }
    let good = trials_ok
        .iter()
        .filter(|t| t.ratio <= params.ratio_cap && t.pf.value <= params.big_c_desk * bound)
        .count();
    let mut best = 0usize;
    let score = |t: &Trial| t.ratio.max(t.pf.value / bound.max(1e-300));
    for i in 1..trials_ok.len() {
        if score(&trials_ok[i]) < score(&trials_ok[best]) {
            best = i;
        }
    }
    let chosen = &trials_ok[best];
    Ok(SectionReport {
        basis: linalg::matrix_to_rows(&chosen.f.basis().transpose()),
        m,
        r: chosen.r,
        big_r: chosen.big_r,
        ratio: chosen.ratio,
        pf_norm: chosen.pf.clone(),
        bound,
        alpha: alpha.value,
        beta: beta.value,
        trials: trials_ok.len(),
        good_fraction: good as f64 / trials_ok.len() as f64,
        ratio_cap: params.ratio_cap,
        c_desk: params.c_desk,
        big_c_desk: params.big_c_desk,
        witness_r: chosen.wr.iter().copied().collect(),
        witness_big_r: chosen.wbr.iter().copied().collect(),
        seed: params.seed,
    })
}
