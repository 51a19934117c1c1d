//! Gaussian and Rademacher functionals: mean-width estimators, sign
//! averages, and Haar-random subspaces.
//!
//! Monte-Carlo estimates use 32 batch means for the standard error and a
//! delta-method correction for the square root; identical seeds reproduce
//! values bit-for-bit regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodies::{BodyError, GaugeBody, Subspace};
use crate::linalg;
use crate::rng::Stream;

pub const BATCHES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    MonteCarlo,
    Exact,
}

/// A Gaussian-average norm estimate `(E ||g||^2)^{1/2}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
    pub mode: EstimateMode,
}

impl EllEstimate {
    pub fn exact(value: f64) -> Self {
        EllEstimate { value, stderr: 0.0, samples: 0, seed: 0, mode: EstimateMode::Exact }
    }

    pub fn relative_stderr(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.stderr / self.value
        }
    }
}

fn batched_sqrt_mean<F>(samples: u64, seed: u64, eval: F) -> (f64, f64, u64)
where
    F: Fn(u64) -> f64 + Sync,
{
    let samples = samples.max(BATCHES as u64);
    let per_batch = samples.div_ceil(BATCHES as u64);
    let total = per_batch * BATCHES as u64;
    let batch_means: Vec<f64> = (0..BATCHES as u64)
        .into_par_iter()
        .map(|b| {
            let mut acc = 0.0;
            for i in 0..per_batch {
                acc += eval(b * per_batch + i);
            }
            acc / per_batch as f64
        })
        .collect();
    let mean: f64 = batch_means.iter().sum::<f64>() / BATCHES as f64;
    let var_batch: f64 = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
        / (BATCHES as f64 - 1.0);
    let var_mean = var_batch / BATCHES as f64;
    let value = mean.max(0.0).sqrt();
    // delta method for sqrt
    let stderr = if value > 0.0 { var_mean.sqrt() / (2.0 * value) } else { var_mean.sqrt() };
    let _ = seed;
    (value, stderr, total)
}

/// Closed-form value of `ell(K)` where one exists.
pub fn ell_body_exact(body: &GaugeBody) -> Option<EllEstimate> {
    let n = body.dim();
    if let Some(u) = body.ellipsoid_map() {
        let ui = u.lu().try_inverse()?;
        return Some(EllEstimate::exact(linalg::frobenius(&ui)));
    }
    if n == 1 {
        // any symmetric body in R^1 is a segment: gauge(x) = c |x|
        let one = DVector::from_vec(vec![1.0]);
        let c = body.gauge(&one).ok()?;
        if c > 0.0 {
            return Some(EllEstimate::exact(c));
        }
    }
    None
}

/// `E ||g||_{B_1^n}^2 = n + n(n-1) * 2/pi`, the cross-polytope closed form.
pub fn ell_l1_squared_exact(n: usize) -> f64 {
    let nf = n as f64;
    nf + nf * (nf - 1.0) * (2.0 / std::f64::consts::PI)
}

/// Monte-Carlo estimate of `ell(K) = (E ||g||_K^2)^{1/2}`.
pub fn ell_body(body: &GaugeBody, samples: u64, seed: u64) -> Result<EllEstimate, BodyError> {
    let stream = Stream::new(seed, "ell_body");
    let n = body.dim();
    // fail fast on an evaluation error before entering the parallel loop
    body.gauge(&stream.gaussian_vector(n, 0))?;
    let (value, stderr, total) = batched_sqrt_mean(samples, seed, |i| {
        let g = stream.gaussian_vector(n, i);
        body.gauge(&g).map(|v| v * v).unwrap_or(f64::NAN)
    });
    if !value.is_finite() {
        return Err(BodyError::Numerical("gauge evaluation failed in ell".into()));
    }
    Ok(EllEstimate { value, stderr, samples: total, seed, mode: EstimateMode::MonteCarlo })
}

/// `ell(S) = (E ||S g||^2)^{1/2}` for `S` mapping into the target's space.
pub fn ell_operator(
    s: &DMatrix<f64>,
    to: &GaugeBody,
    samples: u64,
    seed: u64,
) -> Result<EllEstimate, BodyError> {
    if s.nrows() != to.dim() {
        return Err(BodyError::Dimension { expected: to.dim(), got: s.nrows() });
    }
    let stream = Stream::new(seed, "ell_operator");
    let ncols = s.ncols();
    to.gauge(&(s * stream.gaussian_vector(ncols, 0)))?;
    let (value, stderr, total) = batched_sqrt_mean(samples, seed, |i| {
        let g = stream.gaussian_vector(ncols, i);
        to.gauge(&(s * g)).map(|v| v * v).unwrap_or(f64::NAN)
    });
    if !value.is_finite() {
        return Err(BodyError::Numerical("gauge evaluation failed in ell".into()));
    }
    Ok(EllEstimate { value, stderr, samples: total, seed, mode: EstimateMode::MonteCarlo })
}

// ---------------------------------------------------------------------------
// Sign averages
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    Enumerated,
    Sampled,
}

/// Mean and maximum of `||sum_i eps_i z_i||` over sign patterns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignAverage {
    pub m1: f64,
    pub w: f64,
    pub mode: SignMode,
    pub s: usize,
    /// sign pattern attaining `w` (exactly when enumerated, best found when sampled)
    pub w_witness: Vec<f64>,
}

/// Exact enumeration of all `2^s` patterns when `s <= limit`, Monte Carlo
/// plus local sign-flip ascent (a lower bound for `w`) otherwise.
pub fn sign_average(
    z: &[DVector<f64>],
    norm_body: &GaugeBody,
    limit: usize,
    samples: u64,
    seed: u64,
) -> Result<SignAverage, BodyError> {
    let s = z.len();
    assert!(s > 0, "sign_average needs at least one vector");
    let dim = z[0].len();
    for v in z {
        if v.len() != norm_body.dim() {
            return Err(BodyError::Dimension { expected: norm_body.dim(), got: v.len() });
        }
    }
    if s <= limit {
        // Gray-code walk: flip one sign per step
        let mut signs = vec![1.0f64; s];
        let mut sum = z.iter().fold(DVector::zeros(dim), |acc, v| acc + v);
        let mut total = norm_body.gauge(&sum)?;
        let mut w = total;
        let mut w_witness = signs.clone();
        let count: u64 = 1 << s;
        for k in 1..count {
            let flip = k.trailing_zeros() as usize;
            sum += &z[flip] * (-2.0 * signs[flip]);
            signs[flip] = -signs[flip];
            let v = norm_body.gauge(&sum)?;
            total += v;
            if v > w {
                w = v;
                w_witness = signs.clone();
            }
        }
        return Ok(SignAverage {
            m1: total / count as f64,
            w,
            mode: SignMode::Enumerated,
            s,
            w_witness,
        });
    }

    let stream = Stream::new(seed, "sign_average");
    let vals: Vec<(f64, u64)> = (0..samples.max(64))
        .into_par_iter()
        .map(|i| {
            let signs = stream.sign_pattern(s, i);
            let sum = z
                .iter()
                .zip(&signs)
                .fold(DVector::zeros(dim), |acc, (v, &e)| acc + v * e);
            (norm_body.gauge(&sum).unwrap_or(f64::NAN), i)
        })
        .collect();
    if vals.iter().any(|(v, _)| !v.is_finite()) {
        return Err(BodyError::Numerical("gauge failed during sign sampling".into()));
    }
    let m1 = vals.iter().map(|(v, _)| v).sum::<f64>() / vals.len() as f64;
    // local ascent from the best sampled starts
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].0.partial_cmp(&vals[a].0).unwrap().then(a.cmp(&b)));
    let mut w = 0.0f64;
    let mut w_witness = vec![1.0; s];
    for &start in order.iter().take(4) {
        let mut signs = stream.sign_pattern(s, vals[start].1);
        let mut sum = z
            .iter()
            .zip(&signs)
            .fold(DVector::zeros(dim), |acc, (v, &e)| acc + v * e);
        let mut val = norm_body.gauge(&sum)?;
        loop {
            let mut improved = false;
            for j in 0..s {
                let cand = &sum - &z[j] * (2.0 * signs[j]);
                let v = norm_body.gauge(&cand)?;
                if v > val * (1.0 + 1e-13) {
                    sum = cand;
                    signs[j] = -signs[j];
                    val = v;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if val > w {
            w = val;
            w_witness = signs;
        }
    }
    let w = w.max(m1);
    Ok(SignAverage { m1, w, mode: SignMode::Sampled, s, w_witness })
}

// ---------------------------------------------------------------------------
// Haar subspaces
// ---------------------------------------------------------------------------

/// A Haar-distributed `m`-dimensional subspace of `R^n`: orthonormalization
/// of an `n x m` standard Gaussian matrix.
pub fn haar_subspace(n: usize, m: usize, seed: u64) -> Subspace {
    assert!(m >= 1 && m <= n, "need 1 <= m <= n");
    let stream = Stream::new(seed, "haar_subspace");
    for attempt in 0..16u64 {
        let sub = stream.substream(attempt);
        let cols: Vec<DVector<f64>> = (0..m as u64)
            .map(|j| sub.gaussian_vector(n, j))
            .collect();
        let ortho = linalg::orthonormalize_columns(&cols, 1e-10);
        if ortho.len() == m {
            return Subspace::from_matrix(linalg::columns_to_matrix(&ortho, n))
                .expect("orthonormal basis");
        }
        // rank deficiency has probability zero; fall through to the next substream
    }
    unreachable!("Gaussian matrix repeatedly rank-deficient");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodies::GaugeBody;

    #[test]
    fn ell_ball_exact_and_mc_agree() {
        for n in [4usize, 16] {
            let ball = GaugeBody::ball(n).unwrap();
            let exact = ell_body_exact(&ball).unwrap();
            assert!((exact.value - (n as f64).sqrt()).abs() < 1e-12);
            assert_eq!(exact.mode, EstimateMode::Exact);
            assert_eq!(exact.stderr, 0.0);
            let mc = ell_body(&ball, 20_000, 1).unwrap();
            assert!((mc.value - exact.value).abs() < 3.0 * mc.stderr + 1e-9);
        }
    }

    #[test]
    fn ell_one_dimensional_cube_is_one() {
        let b = GaugeBody::lq(1, f64::INFINITY).unwrap();
        let e = ell_body_exact(&b).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ell_l1_matches_closed_form() {
        let n = 8;
        let body = GaugeBody::lq(n, 1.0).unwrap();
        let est = ell_body(&body, 60_000, 7).unwrap();
        let exact_sq = ell_l1_squared_exact(n);
        let diff = (est.value * est.value - exact_sq).abs();
        // stderr of the squared value: 2 * value * stderr
        assert!(diff < 3.0 * 2.0 * est.value * est.stderr, "{diff}");
    }

    #[test]
    fn ell_is_seed_deterministic() {
        let body = GaugeBody::lq(6, 1.5).unwrap();
        let a = ell_body(&body, 5_000, 42).unwrap();
        let b = ell_body(&body, 5_000, 42).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn ell_operator_identity_equals_ell_body() {
        let body = GaugeBody::lq(5, 1.0).unwrap();
        let id = DMatrix::identity(5, 5);
        let a = ell_operator(&id, &body, 20_000, 3).unwrap();
        let b = ell_body(&body, 20_000, 5).unwrap();
        assert!((a.value - b.value).abs() < 3.0 * (a.stderr + b.stderr));
    }

    #[test]
    fn ell_operator_rank_one() {
        let ball = GaugeBody::ball(4).unwrap();
        let mut s = DMatrix::zeros(4, 4);
        s[(0, 0)] = 1.0;
        let est = ell_operator(&s, &ball, 30_000, 9).unwrap();
        assert!((est.value - 1.0).abs() < 3.0 * est.stderr + 1e-6);
    }

    #[test]
    fn sign_average_single_vector() {
        let z = vec![DVector::from_vec(vec![3.0, 4.0])];
        let ball = GaugeBody::ball(2).unwrap();
        let sa = sign_average(&z, &ball, 20, 0, 0).unwrap();
        assert_eq!(sa.mode, SignMode::Enumerated);
        assert!((sa.m1 - 5.0).abs() < 1e-12);
        assert!((sa.w - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sign_average_basis_in_sup_norm() {
        let s = 6;
        let z: Vec<DVector<f64>> = (0..s)
            .map(|i| {
                let mut e = DVector::zeros(s);
                e[i] = 1.0;
                e
            })
            .collect();
        let cube = GaugeBody::lq(s, f64::INFINITY).unwrap();
        let sa = sign_average(&z, &cube, 20, 0, 0).unwrap();
        assert!((sa.m1 - 1.0).abs() < 1e-12);
        assert!((sa.w - 1.0).abs() < 1e-12);

        let ball = GaugeBody::ball(s).unwrap();
        let sb = sign_average(&z, &ball, 20, 0, 0).unwrap();
        let root = (s as f64).sqrt();
        assert!((sb.m1 - root).abs() < 1e-12);
        assert!((sb.w - root).abs() < 1e-12);
    }

    #[test]
    fn sampled_mode_keeps_m1_below_w() {
        let stream = crate::rng::Stream::new(4, "sa_test");
        let z: Vec<DVector<f64>> = (0..25).map(|i| stream.gaussian_vector(6, i)).collect();
        let body = GaugeBody::lq(6, 1.0).unwrap();
        let sa = sign_average(&z, &body, 20, 2_000, 11).unwrap();
        assert_eq!(sa.mode, SignMode::Sampled);
        assert!(sa.m1 <= sa.w);
        // witness reproduces the reported maximum
        let sum = z
            .iter()
            .zip(&sa.w_witness)
            .fold(DVector::zeros(6), |acc, (v, &e)| acc + v * e);
        let val = body.gauge(&sum).unwrap();
        assert!(val <= sa.w + 1e-9 && val >= sa.w - 1e-9 || sa.w == sa.m1);
    }

    #[test]
    fn haar_full_space_is_identity_projector() {
        let sub = haar_subspace(5, 5, 3);
        let p = sub.projector();
        assert!(crate::linalg::frobenius(&(p - DMatrix::identity(5, 5))) < 1e-9);
    }

    #[test]
    fn haar_line_passes_mean_zero_test() {
        // coordinates of a uniform direction have mean 0; two-sided z-test
        let draws = 10_000;
        let mut sum = 0.0;
        for i in 0..draws {
            let sub = haar_subspace(8, 1, 1_000 + i);
            sum += sub.basis()[(0, 0)];
        }
        let mean = sum / draws as f64;
        // each coordinate has variance 1/8; the mean of n draws has stderr
        let stderr = (1.0 / 8.0 / draws as f64).sqrt();
        assert!(mean.abs() < 3.29 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn haar_is_rotation_invariant_ks() {
        // |<v, col>| for v = e1 vs a fixed random unit v: two-sample KS test
        let n = 6;
        let draws = 10_000usize;
        let stream = crate::rng::Stream::new(77, "ks");
        let mut vrand = stream.gaussian_vector(n, 0);
        vrand /= vrand.norm();
        let mut a: Vec<f64> = Vec::with_capacity(draws);
        let mut b: Vec<f64> = Vec::with_capacity(draws);
        for i in 0..draws {
            let sub = haar_subspace(n, 1, 50_000 + i as u64);
            let col = sub.basis().column(0).into_owned();
            a.push(col[0].abs());
            b.push(vrand.dot(&col).abs());
        }
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // two-sample KS statistic
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < draws && j < draws {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let diff = (i as f64 - j as f64).abs() / draws as f64;
            d = d.max(diff);
        }
        // alpha = 1e-3 threshold: c(alpha) * sqrt(2/n) with c = 1.949
        let threshold = 1.949 * (2.0 / draws as f64).sqrt();
        assert!(d < threshold, "KS statistic {d} over {threshold}");
    }
}
