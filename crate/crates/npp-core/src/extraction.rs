//! Extraction of well-complemented nearly-l1 subspaces.
//!
//! Given a body whose greedy chain of projection norms decays slowly, the
//! pipeline builds, inside the dual norm, a biorthogonal system that is
//! successively thinned — restricted invertibility, a sign-average
//! selection, an iterated blocking step, and a final selection — into a
//! system that is sup-norm equivalent with certified two-sided constants.
//! Dualizing the coordinate functionals yields an explicit projection.
//!
//! Every stage carries a numeric certificate that is checked independently
//! of how the stage's subset was found: a smallest-singular-value bound, an
//! exact sign-enumeration bound, and coordinate-functional norm bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodies::{operator_norm, BodyError, GaugeBody, NormEstimate, Subspace};
use crate::convex;
use crate::gaussian::{ell_body, ell_body_exact, ell_operator, sign_average, EllEstimate, SignAverage};
use crate::linalg;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("hypothesis refused: chain value {a_k} below threshold at step {k}")]
    Refused(Box<Refusal>),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error(transparent)]
    Body(#[from] BodyError),
}

/// Witness returned when the greedy chain decays below the threshold: the
/// orthocomplement of the first `k-1` chain vectors, on which the body's
/// projection norm is `a_k < a`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Refusal {
    /// rows are basis vectors of the witness subspace (codimension `k-1`)
    pub witness_basis: Vec<Vec<f64>>,
    pub a_k: f64,
    pub k: usize,
    pub chain_a: Vec<f64>,
}

impl Refusal {
    pub fn witness_subspace(&self) -> Subspace {
        let cols: Vec<DVector<f64>> = self
            .witness_basis
            .iter()
            .map(|r| linalg::vec_to_dvector(r))
            .collect();
        let n = cols[0].len();
        Subspace::from_spanning(&cols, n).expect("stored witness basis")
    }
}

// ---------------------------------------------------------------------------
// Greedy chain
// ---------------------------------------------------------------------------

/// The inductive sequence `a_j = ||P_{F_j} : K_0 -> l_2||` with witnesses,
/// where `F_j` is the orthocomplement of the previously extracted vectors.
#[derive(Clone, Debug)]
pub struct GreedyChain {
    pub a: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub early_stopped: bool,
}

impl GreedyChain {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `F_{j+1} = [x_1, ..., x_j]^perp` (so `residual_subspace(k-1)` is the
    /// refusal witness of codimension `k-1`).
    pub fn residual_subspace(&self, j: usize, ambient: usize) -> Option<Subspace> {
        let used: Vec<DVector<f64>> = self.u.iter().take(j).cloned().collect();
        if used.is_empty() {
            return Some(Subspace::full(ambient));
        }
        let comp = linalg::orthogonal_complement(&used, ambient);
        if comp.is_empty() {
            None
        } else {
            Subspace::from_spanning(&comp, ambient).ok()
        }
    }
}

pub fn greedy_chain(
    body: &GaugeBody,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<GreedyChain, BodyError> {
    let n = body.dim();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let ball = GaugeBody::ball(n)?;
    let mut chain = GreedyChain {
        a: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
        early_stopped: false,
    };
    let stream = Stream::new(seed, "greedy_chain");
    for j in 0..k {
        let mut projector = DMatrix::identity(n, n);
        for u in &chain.u {
            projector -= u * u.transpose();
        }
        let est = operator_norm(&body_projector(&projector), body, &ball, restarts, stream.u64_at(j as u64))?;
        if est.value < 1e-10 {
            chain.early_stopped = true;
            break;
        }
        let y = linalg::vec_to_dvector(
            est.witness
                .as_ref()
                .expect("operator_norm always returns a witness"),
        );
        let mut x = &projector * &y;
        // kill numerical drift against the accepted directions
        for u in &chain.u {
            let d = u.dot(&x);
            x -= u * d;
        }
        let norm = x.norm();
        if norm < 1e-10 {
            chain.early_stopped = true;
            break;
        }
        chain.a.push(norm);
        chain.u.push(&x / norm);
        chain.x.push(x);
        chain.y.push(y);
    }
    Ok(chain)
}

fn body_projector(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.clone()
}

// ---------------------------------------------------------------------------
// Interval selection
// ---------------------------------------------------------------------------

/// Longest interval (ties: smallest start) on which the chain values differ
/// by at most a factor of 2; returns `(start, end_exclusive, a_start)`.
/// The dyadic pigeonhole guarantees length at least
/// `k / (1 + log2(a_1 / a_k))`.
pub fn pick_interval(a: &[f64]) -> (usize, usize, f64) {
    assert!(!a.is_empty());
    let k = a.len();
    let mut best = (0usize, 1usize);
    for start in 0..k {
        let mut end = start + 1;
        while end < k && a[start] <= 2.0 * a[end] {
            end += 1;
        }
        if end - start > best.1 - best.0 {
            best = (start, end);
        }
    }
    (best.0, best.1, a[best.0])
}

// ---------------------------------------------------------------------------
// Restricted invertibility
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RestrictedInvertibility {
    pub sigma: Vec<usize>,
    pub sigma_min: f64,
    /// achieved |sigma| / |I|
    pub fraction: f64,
    pub exhaustive: bool,
}

fn smallest_singular_of_columns(vectors: &[DVector<f64>], idx: &[usize]) -> f64 {
    let n = vectors[0].len();
    let cols: Vec<DVector<f64>> = idx.iter().map(|&i| vectors[i].clone()).collect();
    let m = linalg::columns_to_matrix(&cols, n);
    let sv = m.singular_values();
    if sv.len() < idx.len() {
        return 0.0;
    }
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Visit k-subsets of 0..n in lexicographic order until the visitor returns
/// true.
pub(crate) fn visit_combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize]) -> bool) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if visit(&idx) {
            return;
        }
        let mut i = k;
        let mut found = false;
        while i > 0 {
            i -= 1;
            if idx[i] != i + n - k {
                found = true;
                break;
            }
        }
        if !found {
            return;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Select a subset whose column system has smallest singular value at least
/// `a_prime / 8`, maximizing the subset size. Exhaustive search below
/// `exhaustive_limit`, greedy forward selection above.
pub fn restricted_invertibility(
    y_tilde: &[DVector<f64>],
    a_prime: f64,
    exhaustive_limit: usize,
) -> Result<RestrictedInvertibility, ExtractionError> {
    let count = y_tilde.len();
    assert!(count > 0);
    let floor_val = a_prime / 8.0;
    if count <= exhaustive_limit {
        for size in (1..=count).rev() {
            let mut found: Option<(Vec<usize>, f64)> = None;
            visit_combinations(count, size, |idx| {
                let smin = smallest_singular_of_columns(y_tilde, idx);
                if smin >= floor_val {
                    found = Some((idx.to_vec(), smin));
                    true
                } else {
                    false
                }
            });
            if let Some((sigma, smin)) = found {
                return Ok(RestrictedInvertibility {
                    fraction: sigma.len() as f64 / count as f64,
                    sigma,
                    sigma_min: smin,
                    exhaustive: true,
                });
            }
        }
        return Err(ExtractionError::Certification(
            "no singleton reaches a'/8, inconsistent chain data".into(),
        ));
    }
    // greedy: best single start, then add the index that keeps the largest
    // smallest-singular-value, while it stays above the floor
    let mut start = 0usize;
    for (i, v) in y_tilde.iter().enumerate() {
        if v.norm() > y_tilde[start].norm() {
            start = i;
        }
    }
    let mut sigma = vec![start];
    let mut smin = y_tilde[start].norm();
    if smin < floor_val {
        return Err(ExtractionError::Certification(
            "largest column below a'/8".into(),
        ));
    }
    loop {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..count {
            if sigma.contains(&c) {
                continue;
            }
            let mut cand = sigma.clone();
            cand.push(c);
            cand.sort_unstable();
            let s = smallest_singular_of_columns(y_tilde, &cand);
            if s >= floor_val {
                match best {
                    Some((_, bs)) if bs >= s => {}
                    _ => best = Some((c, s)),
                }
            }
        }
        match best {
            Some((c, s)) => {
                sigma.push(c);
                sigma.sort_unstable();
                smin = s;
            }
            None => break,
        }
    }
    Ok(RestrictedInvertibility {
        fraction: sigma.len() as f64 / count as f64,
        sigma,
        sigma_min: smin,
        exhaustive: false,
    })
}

/// Exhaustive maximum subset size meeting the floor, for oracle comparisons.
pub fn restricted_invertibility_optimum(y_tilde: &[DVector<f64>], a_prime: f64) -> usize {
    let count = y_tilde.len();
    let floor_val = a_prime / 8.0;
    for size in (1..=count).rev() {
        let mut ok = false;
        visit_combinations(count, size, |idx| {
            if smallest_singular_of_columns(y_tilde, idx) >= floor_val {
                ok = true;
                true
            } else {
                false
            }
        });
        if ok {
            return size;
        }
    }
    0
}

// ---------------------------------------------------------------------------
// Biorthogonal system
// ---------------------------------------------------------------------------

/// Biorthogonal system inside the span of the input columns, with the
/// operator bound `sigma_max(Z) = 1 / sigma_min(Y)` from the same SVD.
pub fn biorthogonal(
    y_sel: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, f64, f64), ExtractionError> {
    let n = y_sel[0].len();
    let s = y_sel.len();
    let y = linalg::columns_to_matrix(y_sel, n);
    let svd = y.clone().svd(true, true);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 1e-14 {
        return Err(ExtractionError::Certification(
            "biorthogonal: columns are linearly dependent".into(),
        ));
    }
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let mut sinv = DMatrix::zeros(s, s);
    for i in 0..s {
        sinv[(i, i)] = 1.0 / svd.singular_values[i];
    }
    let z = u * sinv * vt;
    let zs: Vec<DVector<f64>> = (0..s).map(|j| z.column(j).into_owned()).collect();
    Ok((zs, 1.0 / smin, smin))
}

// ---------------------------------------------------------------------------
// Sign-sup enumeration and the two selection facts
// ---------------------------------------------------------------------------

/// Exact `max_eps || sum eps_i z_i ||` over all sign patterns (Gray-code
/// walk). Only for systems of at most 25 vectors.
pub fn enumerate_sign_sup(
    vectors: &[DVector<f64>],
    norm_body: &GaugeBody,
) -> Result<(f64, Vec<f64>), BodyError> {
    let s = vectors.len();
    assert!(s >= 1 && s <= 25, "sign enumeration limited to 25 vectors");
    let dim = vectors[0].len();
    let mut signs = vec![1.0f64; s];
    let mut sum = vectors.iter().fold(DVector::zeros(dim), |acc, v| acc + v);
    let mut best = norm_body.gauge(&sum)?;
    let mut best_signs = signs.clone();
    let count: u64 = 1 << s;
    for kk in 1..count {
        let flip = kk.trailing_zeros() as usize;
        sum += &vectors[flip] * (-2.0 * signs[flip]);
        signs[flip] = -signs[flip];
        let v = norm_body.gauge(&sum)?;
        if v > best {
            best = v;
            best_signs = signs.clone();
        }
    }
    Ok((best, best_signs))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TalagrandSelection {
    pub tau: Vec<usize>,
    /// mandated size floor `ceil(s m1 / 2w)`
    pub floor: usize,
    /// the certified bound `4 m1`
    pub bound: f64,
    /// exact sign-sup of the selected subset
    pub certified_sup: f64,
    pub exhaustive_fallback: bool,
}

/// Subset with `|tau| >= ceil(s m1 / 2w)` whose sign sums stay below
/// `4 m1`, certified by exact enumeration. Greedy in decreasing-norm order
/// with an exhaustive fallback for small systems.
pub fn talagrand_select(
    z: &[DVector<f64>],
    dual_body: &GaugeBody,
    sa: &SignAverage,
    exhaustive_limit: usize,
) -> Result<TalagrandSelection, ExtractionError> {
    let s = z.len();
    let floor = ((s as f64) * sa.m1 / (2.0 * sa.w)).ceil().max(1.0) as usize;
    let floor = floor.min(s);
    let bound = 4.0 * sa.m1;
    let tol = 1.0 + 1e-12;

    let mut order: Vec<usize> = (0..s).collect();
    let norms: Vec<f64> = z
        .iter()
        .map(|v| dual_body.gauge(v).unwrap_or(0.0))
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut cur: Vec<usize> = Vec::new();
    for &i in &order {
        let mut cand = cur.clone();
        cand.push(i);
        cand.sort_unstable();
        let vecs: Vec<DVector<f64>> = cand.iter().map(|&j| z[j].clone()).collect();
        let (sup, _) = enumerate_sign_sup(&vecs, dual_body)?;
        if sup <= bound * tol {
            cur = cand;
        }
    }
    if cur.len() >= floor {
        let vecs: Vec<DVector<f64>> = cur.iter().map(|&j| z[j].clone()).collect();
        let (sup, _) = enumerate_sign_sup(&vecs, dual_body)?;
        return Ok(TalagrandSelection {
            tau: cur,
            floor,
            bound,
            certified_sup: sup,
            exhaustive_fallback: false,
        });
    }
    if s <= exhaustive_limit.max(16) {
        for size in (floor..=s).rev() {
            let mut found: Option<(Vec<usize>, f64)> = None;
            visit_combinations(s, size, |idx| {
                let vecs: Vec<DVector<f64>> = idx.iter().map(|&j| z[j].clone()).collect();
                match enumerate_sign_sup(&vecs, dual_body) {
                    Ok((sup, _)) if sup <= bound * tol => {
                        found = Some((idx.to_vec(), sup));
                        true
                    }
                    _ => false,
                }
            });
            if let Some((tau, sup)) = found {
                return Ok(TalagrandSelection {
                    tau,
                    floor,
                    bound,
                    certified_sup: sup,
                    exhaustive_fallback: true,
                });
            }
        }
    }
    Err(ExtractionError::Certification(format!(
        "no subset of size {floor} with sign sums below 4*M1 = {bound}; \
         upstream estimates are inconsistent"
    )))
}

// ---------------------------------------------------------------------------
// Blocking
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JamesResult {
    /// surviving vectors
    #[serde(skip)]
    pub vectors: Vec<DVector<f64>>,
    /// exact sign-sup of the output system
    pub omega: f64,
    pub rounds_done: u32,
    pub lengths: Vec<usize>,
    /// certified constants after each round (beta, then its square roots)
    pub betas: Vec<f64>,
    /// fewer than 4 inputs: returned unchanged
    pub unchanged: bool,
}

/// One blocking round maps `m^2` vectors with sup-constant `beta` to `m`
/// vectors with constant `sqrt(beta)`: either a size-`m` subset already has
/// all sign combinations below `sqrt(beta)`, or each of `m` consecutive
/// blocks contributes a normalized violating sign combination. Iterated
/// `rounds` times; the output constant is re-certified by enumeration.
pub fn james_blocking(
    v: &[DVector<f64>],
    norm_body: &GaugeBody,
    beta: f64,
    rounds: u32,
    seed: u64,
) -> Result<JamesResult, ExtractionError> {
    for (i, vec) in v.iter().enumerate() {
        let nv = norm_body.gauge(vec)?;
        if nv < 1.0 - 1e-8 {
            return Err(ExtractionError::Certification(format!(
                "input vector {i} has norm {nv} < 1"
            )));
        }
    }
    let mut current: Vec<DVector<f64>> = v.to_vec();
    let (sup0, _) = enumerate_sign_sup(&current, norm_body)?;
    if sup0 > beta * (1.0 + 1e-9) {
        return Err(ExtractionError::Certification(format!(
            "claimed input constant {beta} below measured {sup0}"
        )));
    }
    let mut beta_cur = sup0.min(beta).max(1.0);
    let mut lengths = vec![current.len()];
    let mut betas = vec![beta_cur];
    let mut rounds_done = 0u32;
    let mut unchanged = false;
    let stream = Stream::new(seed, "james_blocking");

    for round in 0..rounds {
        let count = current.len();
        if count < 4 {
            if round == 0 {
                unchanged = true;
            }
            break;
        }
        let m = (count as f64).sqrt().floor() as usize;
        let target = beta_cur.sqrt();
        let tol = 1.0 + 1e-12;

        // subset search: contiguous windows, then seeded random subsets
        let mut candidates: Vec<Vec<usize>> = (0..=count - m)
            .map(|i| (i..i + m).collect())
            .collect();
        let sub = stream.substream(round as u64);
        let mut seen: Vec<Vec<usize>> = Vec::new();
        let mut tries = 0u64;
        while seen.len() < 256 && tries < 4096 {
            let mut pick: Vec<usize> = Vec::with_capacity(m);
            let pss = sub.substream(tries);
            let mut ctr = 0u64;
            while pick.len() < m {
                let c = (pss.u64_at(ctr) % count as u64) as usize;
                ctr += 1;
                if !pick.contains(&c) {
                    pick.push(c);
                }
            }
            pick.sort_unstable();
            if !seen.contains(&pick) {
                seen.push(pick);
            }
            tries += 1;
        }
        candidates.extend(seen);

        let mut chosen: Option<(Vec<usize>, f64)> = None;
        let mut window_sups: Vec<Option<(f64, Vec<f64>)>> = vec![None; count];
        for cand in &candidates {
            let vecs: Vec<DVector<f64>> = cand.iter().map(|&i| current[i].clone()).collect();
            let (sup, pattern) = enumerate_sign_sup(&vecs, norm_body)?;
            // cache contiguous-window results for the block branch
            if cand.windows(2).all(|w| w[1] == w[0] + 1) {
                window_sups[cand[0]] = Some((sup, pattern.clone()));
            }
            if sup <= target * tol {
                chosen = Some((cand.clone(), sup));
                break;
            }
        }

        match chosen {
            Some((idx, sup)) => {
                current = idx.iter().map(|&i| current[i].clone()).collect();
                beta_cur = sup.max(1.0);
            }
            None => {
                // every size-m subset we saw violates; in particular each of
                // the m consecutive blocks has a sign pattern above sqrt(beta)
                let mut next: Vec<DVector<f64>> = Vec::with_capacity(m);
                let scale = 1.0 / beta_cur.sqrt();
                for b in 0..m {
                    let off = b * m;
                    let (sup, pattern) = match &window_sups[off] {
                        Some(sp) => sp.clone(),
                        None => {
                            let vecs: Vec<DVector<f64>> =
                                (off..off + m).map(|i| current[i].clone()).collect();
                            enumerate_sign_sup(&vecs, norm_body)?
                        }
                    };
                    if sup <= target {
                        return Err(ExtractionError::Certification(
                            "block passes the subset test but was not selected".into(),
                        ));
                    }
                    let mut combo = DVector::zeros(current[0].len());
                    for (j, i) in (off..off + m).enumerate() {
                        combo += &current[i] * pattern[j];
                    }
                    let newv = combo * scale;
                    let nv = norm_body.gauge(&newv)?;
                    if nv < 1.0 - 1e-8 {
                        return Err(ExtractionError::Certification(format!(
                            "blocked vector has norm {nv} < 1"
                        )));
                    }
                    next.push(newv);
                }
                let (sup_new, _) = enumerate_sign_sup(&next, norm_body)?;
                if sup_new > target * (1.0 + 1e-9) {
                    return Err(ExtractionError::Certification(format!(
                        "blocked system has constant {sup_new} above sqrt(beta) = {target}"
                    )));
                }
                current = next;
                beta_cur = sup_new.max(1.0);
            }
        }
        rounds_done += 1;
        lengths.push(current.len());
        betas.push(beta_cur);
    }

    let (omega, _) = enumerate_sign_sup(&current, norm_body)?;
    Ok(JamesResult {
        vectors: current,
        omega,
        rounds_done,
        lengths,
        betas,
        unchanged,
    })
}

// ---------------------------------------------------------------------------
// Final selection
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinalSelection {
    pub tau_prime: Vec<usize>,
    /// upper bounds on the coordinate-functional norms (all at most 2)
    pub fn_norms: Vec<f64>,
    /// minimal-norm extensions of the coordinate functionals (columns in
    /// the primal space), biorthogonal to the selected vectors
    #[serde(skip)]
    pub extensions: Vec<DVector<f64>>,
    pub floor: usize,
    pub w_prime: f64,
}

/// Largest subset (at least `ceil(l / 8 w')`) on which every coordinate
/// functional of the span has norm at most 2, certified by explicit
/// minimal-gauge extensions in the primal body.
pub fn final_select(
    zprime: &[DVector<f64>],
    dual_body: &GaugeBody,
    primal_body: &GaugeBody,
    sign_limit: usize,
) -> Result<FinalSelection, ExtractionError> {
    let l = zprime.len();
    let n = primal_body.dim();
    let sa = sign_average(zprime, dual_body, sign_limit, 4096, 0)?;
    let w_prime = sa.w;
    let floor = ((l as f64) / (8.0 * w_prime)).ceil().max(1.0) as usize;
    let floor = floor.min(l);

    let certify = |subset: &[usize]| -> Result<Option<(Vec<f64>, Vec<DVector<f64>>)>, ExtractionError> {
        let mu = subset.len();
        let cols: Vec<DVector<f64>> = subset.iter().map(|&i| zprime[i].clone()).collect();
        let zmat = linalg::columns_to_matrix(&cols, n);
        let mut fns = Vec::with_capacity(mu);
        let mut exts = Vec::with_capacity(mu);
        for i in 0..mu {
            let mut rhs = DVector::zeros(mu);
            rhs[i] = 1.0;
            let (val, psi) = convex::min_gauge_on_affine(primal_body, &zmat, &rhs)?;
            if val > 2.0 * (1.0 + 1e-9) {
                return Ok(None);
            }
            // biorthogonality residue
            let resid = (zmat.transpose() * &psi - &rhs).norm();
            if resid > 1e-7 {
                return Err(ExtractionError::Certification(format!(
                    "extension interpolation residual {resid}"
                )));
            }
            fns.push(val);
            exts.push(psi);
        }
        Ok(Some((fns, exts)))
    };

    for size in (floor..=l).rev() {
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        visit_combinations(l, size, |idx| {
            subsets.push(idx.to_vec());
            false
        });
        for subset in subsets {
            if let Some((fns, exts)) = certify(&subset)? {
                return Ok(FinalSelection {
                    tau_prime: subset,
                    fn_norms: fns,
                    extensions: exts,
                    floor,
                    w_prime,
                });
            }
        }
    }
    Err(ExtractionError::Certification(format!(
        "no subset of size >= {floor} has coordinate functionals below 2"
    )))
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub op_restarts: usize,
    pub sign_limit: usize,
    pub exhaustive_limit: usize,
    pub ell_samples: u64,
    pub seed: u64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            op_restarts: 64,
            sign_limit: 20,
            exhaustive_limit: 12,
            ell_samples: 20_000,
            seed: 0,
        }
    }
}

/// Serializable audit trail of one extraction run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L1Trace {
    pub chain_a: Vec<f64>,
    pub interval: (usize, usize),
    pub a_prime: f64,
    pub sigma: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_fraction: f64,
    pub z: Vec<Vec<f64>>,
    /// `sigma_max` of the biorthogonal system, certified `<= 8/a'`
    pub z_opnorm: f64,
    pub m_ell: EllEstimate,
    pub ell_dual: EllEstimate,
    pub m1: f64,
    pub w: f64,
    pub w_le_8_sqrt_s: bool,
    pub tau: Vec<usize>,
    pub tau_sup: f64,
    pub d: u32,
    pub james_lengths: Vec<usize>,
    pub james_unchanged: bool,
    pub length_floor_ok: bool,
    pub omega: f64,
    pub z_prime: Vec<Vec<f64>>,
    pub w_prime: f64,
    pub tau_prime: Vec<usize>,
    pub fn_norms: Vec<f64>,
    pub extensions: Vec<Vec<f64>>,
    pub m: usize,
    pub gamma: f64,
    /// measured `m / k^{1/gamma}`
    pub m_ratio: f64,
    pub a1_over_ak: f64,
    pub biorth_residual: f64,
}

/// Result of the pipeline: a projection `Q` onto a subspace at certified
/// distance `iso_constant` from the corresponding l1 space.
#[derive(Clone, Debug)]
pub struct L1Extraction {
    pub q: DMatrix<f64>,
    pub m: usize,
    pub iso_constant: f64,
    pub q_norm: NormEstimate,
    pub trace: L1Trace,
}

/// Run the pipeline on `K_0 = B_Y`. Refuses (with the witness subspace)
/// when the greedy chain decays below `a` within `k` steps.
pub fn extract_l1(
    body: &GaugeBody,
    a: f64,
    k: usize,
    params: &ExtractionParams,
) -> Result<L1Extraction, ExtractionError> {
    let n = body.dim();
    let chain = greedy_chain(body, k, params.op_restarts, params.seed)?;
    let reached = chain.len();
    if reached < k || chain.a[k - 1] < a {
        let j = if reached < k { reached } else { k - 1 };
        let witness = chain
            .residual_subspace(j, n)
            .ok_or_else(|| ExtractionError::Certification("no residual subspace".into()))?;
        return Err(ExtractionError::Refused(Box::new(Refusal {
            witness_basis: linalg::matrix_to_rows(&witness.basis().transpose()),
            a_k: if reached < k { 0.0 } else { chain.a[k - 1] },
            k,
            chain_a: chain.a.clone(),
        })));
    }

    // interval with factor-2 variation
    let (start, end, a_start) = pick_interval(&chain.a);
    let interval: Vec<usize> = (start..end).collect();
    let f = Subspace::from_matrix(linalg::columns_to_matrix(
        &chain.u[start..end].iter().cloned().collect::<Vec<_>>(),
        n,
    ))
    .map_err(ExtractionError::Body)?;

    let y_tilde: Vec<DVector<f64>> = interval
        .iter()
        .map(|&j| f.project_ambient(&chain.y[j]))
        .collect();
    let max_yt = y_tilde.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    // measured chain values are lower witnesses, so the projected vectors may
    // exceed the recorded a'; the effective a' absorbs that
    let a_prime = a_start.max(max_yt);

    // feasibility of the witnesses
    for (&j, yt) in interval.iter().zip(&y_tilde) {
        let g = body.gauge(&chain.y[j])?;
        if g > 1.0 + 1e-8 {
            return Err(ExtractionError::Certification(format!(
                "chain witness {j} outside the body: gauge {g}"
            )));
        }
        let inner = yt.dot(&chain.u[j]);
        if inner < a_prime / 2.0 - 1e-8 - 1e-9 * a_prime {
            return Err(ExtractionError::Certification(format!(
                "interval witness {j} pairing {inner} below a'/2"
            )));
        }
    }

    let ri = restricted_invertibility(&y_tilde, a_prime, params.exhaustive_limit)?;
    let y_sel: Vec<DVector<f64>> = ri.sigma.iter().map(|&i| y_tilde[i].clone()).collect();
    let (z, z_opnorm, sigma_min) = biorthogonal(&y_sel)?;
    if sigma_min < a_prime / 8.0 - 1e-10 {
        return Err(ExtractionError::Certification(format!(
            "selected system sigma_min {sigma_min} below a'/8"
        )));
    }
    let s = z.len();

    // biorthogonality certificate
    let mut biorth_residual = 0.0f64;
    for (i, zi) in z.iter().enumerate() {
        for (j, yj) in y_sel.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            biorth_residual = biorth_residual.max((zi.dot(yj) - want).abs());
        }
    }
    if biorth_residual > 1e-8 {
        return Err(ExtractionError::Certification(format!(
            "biorthogonality residual {biorth_residual}"
        )));
    }

    let dual_body = body.polar();
    for (i, zi) in z.iter().enumerate() {
        let nv = dual_body.gauge(zi)?;
        if nv < 1.0 - 1e-8 {
            return Err(ExtractionError::Certification(format!(
                "dual norm of z_{i} is {nv} < 1"
            )));
        }
    }

    // Gaussian and sign averages of the z system
    let zmat = linalg::columns_to_matrix(&z, n);
    let m_ell = ell_operator(&zmat, &dual_body, params.ell_samples, params.seed ^ 0xee)?;
    let ell_dual = match ell_body_exact(&dual_body) {
        Some(e) => e,
        None => ell_body(&dual_body, params.ell_samples, params.seed ^ 0xdd)?,
    };
    let sa = sign_average(&z, &dual_body, params.sign_limit, 8192, params.seed ^ 0xcc)?;
    let w_le_8_sqrt_s = sa.w <= 8.0 * (s as f64).sqrt() * (1.0 + 1e-9);

    let tal = talagrand_select(&z, &dual_body, &sa, params.exhaustive_limit)?;
    let z_tau: Vec<DVector<f64>> = tal.tau.iter().map(|&i| z[i].clone()).collect();

    // blocking rounds
    let d = {
        let raw = (4.0 * sa.m1).log2().log2().floor();
        if raw.is_finite() && raw >= 1.0 {
            raw as u32
        } else {
            1
        }
    };
    let beta0 = tal.certified_sup.min(tal.bound);
    let jr = james_blocking(&z_tau, &dual_body, beta0.max(1.0), d, params.seed ^ 0xbb)?;
    let l = jr.vectors.len();
    let expected_floor = {
        let mut len = (tal.tau.len() as f64).powf(1.0 / (1u64 << jr.rounds_done) as f64);
        if !len.is_finite() {
            len = 1.0;
        }
        len.floor() as usize
    };
    let length_floor_ok = l >= expected_floor.max(1);
    if jr.omega >= 4.0 {
        return Err(ExtractionError::Certification(format!(
            "sup-constant omega {} is not below 4 after blocking",
            jr.omega
        )));
    }

    let fs = final_select(&jr.vectors, &dual_body, body, params.sign_limit)?;
    let m = fs.tau_prime.len();

    // sharp sup constant on the selected subset
    let z_final: Vec<DVector<f64>> = fs.tau_prime.iter().map(|&i| jr.vectors[i].clone()).collect();
    let (omega_final, _) = enumerate_sign_sup(&z_final, &dual_body)?;
    let max_fn = fs.fn_norms.iter().cloned().fold(0.0f64, f64::max);
    let max_ext = fs
        .extensions
        .iter()
        .map(|p| body.gauge(p).unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    let iso_constant = omega_final * max_fn.max(max_ext / (1.0 + 1e-12));

    // assemble the projection Q = Psi Z'^T
    let psi_mat = linalg::columns_to_matrix(&fs.extensions, n);
    let zf_mat = linalg::columns_to_matrix(&z_final, n);
    let q = &psi_mat * zf_mat.transpose();
    let idem = linalg::frobenius(&(&q * &q - &q));
    if idem > 1e-7 {
        return Err(ExtractionError::Certification(format!(
            "projection idempotency residual {idem}"
        )));
    }
    let q_norm = operator_norm(&q, body, body, params.op_restarts, params.seed ^ 0xaa)?;

    let gamma = 2.0 * (32.0 * ell_dual.value / a).log2();
    let m_ratio = m as f64 / (k as f64).powf(1.0 / gamma);

    let trace = L1Trace {
        chain_a: chain.a.clone(),
        interval: (start, end),
        a_prime,
        sigma: ri.sigma.clone(),
        sigma_min,
        sigma_fraction: ri.fraction,
        z: z.iter().map(|v| v.iter().copied().collect()).collect(),
        z_opnorm,
        m_ell,
        ell_dual,
        m1: sa.m1,
        w: sa.w,
        w_le_8_sqrt_s,
        tau: tal.tau.clone(),
        tau_sup: tal.certified_sup,
        d,
        james_lengths: jr.lengths.clone(),
        james_unchanged: jr.unchanged,
        length_floor_ok,
        omega: omega_final,
        z_prime: z_final.iter().map(|v| v.iter().copied().collect()).collect(),
        w_prime: fs.w_prime,
        tau_prime: fs.tau_prime.clone(),
        fn_norms: fs.fn_norms.clone(),
        extensions: fs.extensions.iter().map(|v| v.iter().copied().collect()).collect(),
        m,
        gamma,
        m_ratio,
        a1_over_ak: chain.a[0] / chain.a[k - 1],
        biorth_residual,
    };

    Ok(L1Extraction {
        q,
        m,
        iso_constant,
        q_norm,
        trace,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(n: usize, i: usize) -> DVector<f64> {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e
    }

    #[test]
    fn chain_on_ball_is_flat() {
        let ball = GaugeBody::ball(6).unwrap();
        let chain = greedy_chain(&ball, 4, 16, 0).unwrap();
        assert_eq!(chain.len(), 4);
        for &a in &chain.a {
            assert!((a - 1.0).abs() < 1e-9);
        }
        // orthogonality
        for i in 0..4 {
            for j in 0..i {
                assert!(chain.x[i].dot(&chain.x[j]).abs() < 1e-8);
            }
            assert!((chain.x[i].norm() - chain.a[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn chain_on_cross_polytope_picks_signed_basis() {
        let b1 = GaugeBody::lq(5, 1.0).unwrap();
        let chain = greedy_chain(&b1, 5, 16, 1).unwrap();
        for &a in &chain.a {
            assert!((a - 1.0).abs() < 1e-9);
        }
        for y in &chain.y {
            assert!((b1.gauge(y).unwrap() - 1.0).abs() < 1e-9);
            // witnesses are signed standard basis vectors
            let nnz = y.iter().filter(|v| v.abs() > 1e-9).count();
            assert_eq!(nnz, 1);
        }
    }

    #[test]
    fn chain_on_stretched_ball() {
        let n = 4;
        let mut map = DMatrix::identity(n, n);
        map[(0, 0)] = 2.0;
        let body = GaugeBody::linear_image(map, GaugeBody::ball(n).unwrap()).unwrap();
        let chain = greedy_chain(&body, 3, 16, 2).unwrap();
        assert!((chain.a[0] - 2.0).abs() < 1e-9);
        assert!((chain.x[0][0].abs() - 2.0).abs() < 1e-8);
        assert!((chain.a[1] - 1.0).abs() < 1e-9);
        assert!((chain.a[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn interval_selection() {
        let (s, e, ap) = pick_interval(&[1.0, 1.0, 1.0]);
        assert_eq!((s, e), (0, 3));
        assert_eq!(ap, 1.0);

        let a = [8.0, 4.0, 2.0, 1.0];
        let (s, e, _) = pick_interval(&a);
        assert_eq!(e - s, 2);
        assert_eq!(s, 0);
        // dyadic floor: k/(1+log2(a1/ak)) = 4/(1+3) = 1
        assert!(e - s >= 1);

        let (s, e, _) = pick_interval(&[5.0]);
        assert_eq!((s, e), (0, 1));
    }

    #[test]
    fn interval_meets_dyadic_floor_on_random_chains() {
        let stream = Stream::new(3, "interval");
        for t in 0..50u64 {
            let k = 3 + (stream.u64_at(t) % 10) as usize;
            let sub = stream.substream(t);
            let mut a: Vec<f64> = (0..k).map(|i| sub.uniform_at(i as u64) * 4.0 + 0.1).collect();
            a.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let (s, e, _) = pick_interval(&a);
            let floor = k as f64 / (1.0 + (a[0] / a[k - 1]).log2());
            assert!((e - s) as f64 >= floor - 1e-9, "{a:?}");
            assert!(a[s] <= 2.0 * a[e - 1] + 1e-12);
        }
    }

    #[test]
    fn restricted_invertibility_keeps_orthogonal_systems() {
        let ys: Vec<DVector<f64>> = (0..5).map(|i| ev(6, i) * 2.0).collect();
        let ri = restricted_invertibility(&ys, 2.0, 12).unwrap();
        assert_eq!(ri.sigma.len(), 5);
        assert!((ri.sigma_min - 2.0).abs() < 1e-10);
    }

    #[test]
    fn restricted_invertibility_rejects_duplicates() {
        let mut ys: Vec<DVector<f64>> = vec![ev(4, 0), ev(4, 0)];
        ys.push(ev(4, 1));
        let ri = restricted_invertibility(&ys, 1.0, 12).unwrap();
        // duplicate columns give sigma_min = 0, so at most one survives
        assert_eq!(ri.sigma.len(), 2);
    }

    #[test]
    fn greedy_matches_exhaustive_on_most_random_instances() {
        let stream = Stream::new(11, "ri_oracle");
        let mut ties = 0;
        let total = 40;
        for t in 0..total {
            let sub = stream.substream(t);
            let ys: Vec<DVector<f64>> = (0..10).map(|i| sub.gaussian_vector(8, i)).collect();
            let scale = ys.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            let a_prime = scale;
            let greedy = restricted_invertibility(&ys, a_prime, 0).unwrap();
            let best = restricted_invertibility_optimum(&ys, a_prime);
            assert!(greedy.sigma.len() <= best);
            if greedy.sigma.len() >= best {
                ties += 1;
            }
        }
        assert!(ties * 10 >= total * 9, "greedy tied exhaustive only {ties}/{total}");
    }

    #[test]
    fn biorthogonal_identity_and_bounds() {
        let ys: Vec<DVector<f64>> = vec![ev(4, 0) * 2.0, ev(4, 1) * 0.5];
        let (z, zmax, smin) = biorthogonal(&ys).unwrap();
        assert!((z[0].dot(&ys[0]) - 1.0).abs() < 1e-12);
        assert!(z[0].dot(&ys[1]).abs() < 1e-12);
        assert!((zmax - 1.0 / smin).abs() < 1e-12);
        assert!((smin - 0.5).abs() < 1e-12);
        // single vector: z = v/|v|^2
        let (z1, _, _) = biorthogonal(&[DVector::from_vec(vec![0.0, 3.0, 0.0, 0.0])]).unwrap();
        assert!((z1[0][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn biorthogonal_rejects_singular_input() {
        let ys = vec![ev(3, 0), ev(3, 0)];
        assert!(biorthogonal(&ys).is_err());
    }

    #[test]
    fn talagrand_on_sup_norm_basis_takes_everything() {
        let s = 6;
        let z: Vec<DVector<f64>> = (0..s).map(|i| ev(s, i)).collect();
        let cube = GaugeBody::lq(s, f64::INFINITY).unwrap();
        let sa = sign_average(&z, &cube, 20, 0, 0).unwrap();
        let tal = talagrand_select(&z, &cube, &sa, 12).unwrap();
        assert_eq!(tal.tau.len(), s);
        assert!(tal.certified_sup <= tal.bound + 1e-12);
        assert!(tal.tau.len() >= tal.floor);
    }

    #[test]
    fn talagrand_single_vector() {
        let z = vec![DVector::from_vec(vec![1.0, 0.0])];
        let ball = GaugeBody::ball(2).unwrap();
        let sa = sign_average(&z, &ball, 20, 0, 0).unwrap();
        let tal = talagrand_select(&z, &ball, &sa, 12).unwrap();
        assert_eq!(tal.tau, vec![0]);
    }

    #[test]
    fn james_on_orthonormal_vectors_uses_subset_branch() {
        // 9 orthonormal vectors in l2: every 3-subset has sign sums of norm
        // sqrt(3) <= sqrt(beta) with beta = 3
        let z: Vec<DVector<f64>> = (0..9).map(|i| ev(9, i)).collect();
        let ball = GaugeBody::ball(9).unwrap();
        let jr = james_blocking(&z, &ball, 3.0, 1, 0).unwrap();
        assert_eq!(jr.vectors.len(), 3);
        assert!((jr.omega - 3f64.sqrt()).abs() < 1e-9);
        assert!(!jr.unchanged);
    }

    #[test]
    fn james_already_flat_returns_prefix() {
        let z: Vec<DVector<f64>> = (0..9).map(|i| ev(9, i)).collect();
        let cube = GaugeBody::lq(9, f64::INFINITY).unwrap();
        let jr = james_blocking(&z, &cube, 1.0, 1, 0).unwrap();
        assert_eq!(jr.vectors.len(), 3);
        assert!((jr.omega - 1.0).abs() < 1e-12);
    }

    #[test]
    fn james_too_few_vectors_is_flagged() {
        let z: Vec<DVector<f64>> = (0..3).map(|i| ev(3, i)).collect();
        let ball = GaugeBody::ball(3).unwrap();
        let jr = james_blocking(&z, &ball, 2.0, 2, 0).unwrap();
        assert!(jr.unchanged);
        assert_eq!(jr.vectors.len(), 3);
    }

    #[test]
    fn final_select_on_sup_basis() {
        let l = 4;
        let z: Vec<DVector<f64>> = (0..l).map(|i| ev(8, i)).collect();
        let body = GaugeBody::lq(8, 1.0).unwrap(); // primal l1, dual linf
        let dual = body.polar();
        let fs = final_select(&z, &dual, &body, 20).unwrap();
        assert_eq!(fs.tau_prime.len(), l);
        for f in &fs.fn_norms {
            assert!((*f - 1.0).abs() < 1e-7, "{f}");
        }
        assert!((fs.w_prime - 1.0).abs() < 1e-12);
        // extensions are biorthogonal unit vectors
        for (i, psi) in fs.extensions.iter().enumerate() {
            assert!((psi.dot(&z[i]) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn extract_l1_on_cross_polytope() {
        let n = 16;
        let body = GaugeBody::lq(n, 1.0).unwrap();
        let params = ExtractionParams { ell_samples: 4096, ..Default::default() };
        let out = extract_l1(&body, 0.5, n / 4, &params).unwrap();
        assert!(out.m >= 2, "m = {}", out.m);
        assert!(out.iso_constant <= 8.0, "iso {}", out.iso_constant);
        assert!(out.q_norm.value <= 8.0, "q norm {}", out.q_norm.value);
        assert!(out.trace.omega < 4.0);
        assert!(out.trace.length_floor_ok);
        // projection is idempotent with rank m
        let q2 = &out.q * &out.q;
        assert!(linalg::frobenius(&(q2 - &out.q)) < 1e-7);
        assert_eq!(linalg::numerical_rank(&out.q, 1e-8), out.m);
    }

    #[test]
    fn extract_l1_on_ball_still_certifies() {
        let n = 12;
        let body = GaugeBody::ball(n).unwrap();
        let params = ExtractionParams { ell_samples: 4096, ..Default::default() };
        let out = extract_l1(&body, 0.5, 3, &params).unwrap();
        assert!(out.m >= 1);
        assert!(out.iso_constant <= 8.0);
        assert!(out.trace.omega < 4.0);
    }

    #[test]
    fn extract_l1_refuses_when_chain_below_threshold() {
        let n = 8;
        let body = GaugeBody::ball(n).unwrap();
        let params = ExtractionParams::default();
        match extract_l1(&body, 2.0, 2, &params) {
            Err(ExtractionError::Refused(r)) => {
                assert!(r.a_k < 2.0);
                let w = r.witness_subspace();
                assert_eq!(w.ambient_dim(), n);
                assert_eq!(w.dim(), n - 1);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn combinations_visitor_is_lexicographic() {
        let mut seen = Vec::new();
        visit_combinations(4, 2, |c| {
            seen.push(c.to_vec());
            false
        });
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }
}
