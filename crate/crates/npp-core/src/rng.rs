//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, tag, substream index, counter)`,
//! so sample `i` of any Monte-Carlo loop is the same no matter how the loop
//! is scheduled across threads. Standard normals come from the inverse CDF
//! applied to the counter stream, keeping the mapping platform-independent.

use nalgebra::DVector;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SUB_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag string, used to separate operation domains.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A stateless stream of pseudo-random values addressed by counter.
#[derive(Clone, Copy, Debug)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64, tag: &str) -> Self {
        Stream {
            key: mix(seed.wrapping_add(GAMMA) ^ tag_hash(tag)),
        }
    }

    /// Derive an independent substream, e.g. one per Monte-Carlo sample or
    /// per restart, so parallel evaluation order cannot matter.
    pub fn substream(&self, idx: u64) -> Stream {
        Stream {
            key: mix(self.key ^ SUB_SALT ^ idx.wrapping_mul(GAMMA).wrapping_add(GAMMA)),
        }
    }

    #[inline]
    pub fn u64_at(&self, ctr: u64) -> u64 {
        mix(self.key.wrapping_add(ctr.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform_at(&self, ctr: u64) -> f64 {
        ((self.u64_at(ctr) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via the inverse CDF.
    #[inline]
    pub fn normal_at(&self, ctr: u64) -> f64 {
        inverse_normal_cdf(self.uniform_at(ctr))
    }

    /// Standard Gaussian vector for one sample index.
    pub fn gaussian_vector(&self, dim: usize, sample: u64) -> DVector<f64> {
        let sub = self.substream(sample);
        DVector::from_fn(dim, |i, _| sub.normal_at(i as u64))
    }

    /// One uniformly random sign pattern of length `s`.
    pub fn sign_pattern(&self, s: usize, sample: u64) -> Vec<f64> {
        let sub = self.substream(sample);
        (0..s)
            .map(|i| if sub.u64_at(i as u64) & 1 == 0 { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Inverse of the standard normal CDF (Wichura's PPND16 rational
/// approximations, |relative error| below 1e-15 on (0,1)).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(
            r,
            &[
                3.387_132_872_796_366_608e0,
                1.331_416_678_917_843_8e2,
                1.971_590_950_306_551_3e3,
                1.373_169_376_550_946_1e4,
                4.592_195_393_154_987e4,
                6.726_577_092_700_87e4,
                3.343_057_558_358_813e4,
                2.509_080_928_730_122_7e3,
            ],
        ) / poly(
            r,
            &[
                1.0,
                4.231_333_070_160_091e1,
                6.871_870_074_920_579e2,
                5.394_196_021_424_751e3,
                2.121_379_430_158_659_7e4,
                3.930_789_580_009_271e4,
                2.872_908_573_572_194_3e4,
                5.226_495_278_852_545_5e3,
            ],
        );
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(
            r,
            &[
                1.423_437_110_749_683_5e0,
                4.630_337_846_156_546e0,
                5.769_497_221_460_691e0,
                3.647_848_324_763_204_5e0,
                1.270_458_252_452_368_4e0,
                2.417_807_251_774_506e-1,
                2.272_384_498_926_918_4e-2,
                7.745_450_142_783_414e-4,
            ],
        ) / poly(
            r,
            &[
                1.0,
                2.053_191_626_637_759e0,
                1.676_384_830_183_803_8e0,
                6.897_673_349_851e-1,
                1.481_039_764_274_800_8e-1,
                1.519_866_656_361_645_7e-2,
                5.475_938_084_995_345e-4,
                1.050_750_071_644_416_9e-9,
            ],
        )
    } else {
        r -= 5.0;
        poly(
            r,
            &[
                6.657_904_643_501_103e0,
                5.463_784_911_164_114e0,
                1.784_826_539_917_291_3e0,
                2.965_605_718_285_048_7e-1,
                2.653_218_952_657_612_4e-2,
                1.242_660_947_388_078_4e-3,
                2.711_555_568_743_487_6e-5,
                2.010_334_399_292_288_1e-7,
            ],
        ) / poly(
            r,
            &[
                1.0,
                5.998_322_065_558_88e-1,
                1.369_298_809_227_358e-1,
                1.487_536_129_085_061_5e-2,
                7.868_691_311_456_133e-4,
                1.846_318_317_510_054_8e-5,
                1.421_511_758_316_446e-7,
                2.044_263_103_389_939_7e-15,
            ],
        )
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
fn poly(x: f64, c: &[f64]) -> f64 {
    let mut acc = c[c.len() - 1];
    for k in (0..c.len() - 1).rev() {
        acc = acc * x + c[k];
    }
    acc
}
