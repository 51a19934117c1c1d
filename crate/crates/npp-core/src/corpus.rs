//! Seeded generators for the test corpus: lq balls, random symmetric
//! polytopes, and random ellipsoid images.

use nalgebra::{DMatrix, DVector};

use crate::bodies::GaugeBody;
use crate::rng::Stream;

pub fn lq(n: usize, q: f64) -> GaugeBody {
    GaugeBody::lq(n, q).expect("valid lq body")
}

pub fn ball(n: usize) -> GaugeBody {
    GaugeBody::ball(n).expect("valid ball")
}

/// Symmetric polytope with `vertices` Gaussian vertex pairs (so `2*vertices`
/// signed vertices after closure).
pub fn random_polytope(n: usize, vertices: usize, seed: u64) -> GaugeBody {
    let stream = Stream::new(seed, "corpus_polytope");
    for attempt in 0..16u64 {
        let sub = stream.substream(attempt);
        let vs: Vec<DVector<f64>> = (0..vertices as u64)
            .map(|i| sub.gaussian_vector(n, i))
            .collect();
        if let Ok(body) = GaugeBody::polytope(vs) {
            return body;
        }
    }
    unreachable!("random polytope repeatedly degenerate");
}

/// Random invertible Gaussian matrix (resampled until well-conditioned).
pub fn random_invertible(n: usize, seed: u64) -> DMatrix<f64> {
    let stream = Stream::new(seed, "corpus_map");
    for attempt in 0..32u64 {
        let sub = stream.substream(attempt);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = sub.normal_at((i * n + j) as u64);
            }
        }
        let sv = m.clone().singular_values();
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        if smin > 1e-6 * smax {
            return m;
        }
    }
    unreachable!("random matrix repeatedly singular");
}

/// Random ellipsoid `v B_2^n`.
pub fn random_ellipsoid(n: usize, seed: u64) -> GaugeBody {
    let v = random_invertible(n, seed);
    GaugeBody::linear_image(v, ball(n)).expect("invertible map")
}

/// The duality-product corpus: lq balls over a grid, small random
/// polytopes, and random linear images of the Euclidean ball.
pub fn duality_corpus() -> Vec<(String, GaugeBody)> {
    let mut out = Vec::new();
    for &n in &[8usize, 16, 32] {
        for &q in &[1.0, 1.5, 2.0, 4.0, f64::INFINITY] {
            let name = if q.is_infinite() {
                format!("lq n={n} q=inf")
            } else {
                format!("lq n={n} q={q}")
            };
            out.push((name, lq(n, q)));
        }
    }
    for s in 0..5u64 {
        let n = 8;
        out.push((
            format!("polytope n={n} seed={s}"),
            random_polytope(n, 2 * n, s),
        ));
    }
    for s in 0..3u64 {
        out.push((format!("ellipsoid n=16 seed={s}"), random_ellipsoid(16, 100 + s)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polytope_generator_is_deterministic() {
        let a = random_polytope(6, 12, 3);
        let b = random_polytope(6, 12, 3);
        let x = Stream::new(0, "t").gaussian_vector(6, 0);
        assert_eq!(
            a.gauge(&x).unwrap().to_bits(),
            b.gauge(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn corpus_has_expected_size() {
        // 15 lq bodies + 5 polytopes + 3 ellipsoids
        assert_eq!(duality_corpus().len(), 23);
    }
}
