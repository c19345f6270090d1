//! Scalar numerics shared by every other module: Gaussian density and CDF,
//! log-domain reductions and deterministic random substreams.
//!
//! All reductions sum strictly left to right so results are bit-reproducible
//! for a fixed input order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

// The erf/erfc rational approximations below follow FreeBSD msun s_erf.c:
//
// Copyright (C) 1993 by Sun Microsystems, Inc. All rights reserved.
// Developed at SunPro, a Sun Microsystems, Inc. business.
// Permission to use, copy, modify, and distribute this software is freely
// granted, provided that this notice is preserved.
//
// Absolute error is below 1 ulp on every branch (well under the 1e-7
// requirement of the downstream gradient checks).

const ERX: f64 = 8.450_629_115_104_675_292_97e-01;
const EFX8: f64 = 1.027_033_336_764_100_690_53e+00;
const PP: [f64; 5] = [
    1.283_791_670_955_125_585_61e-01,
    -3.250_421_072_470_014_993_70e-01,
    -2.848_174_957_559_851_047_66e-02,
    -5.770_270_296_489_441_591_57e-03,
    -2.376_301_665_665_016_260_84e-05,
];
const QQ: [f64; 5] = [
    3.979_172_239_591_553_528_19e-01,
    6.502_224_998_876_729_444_85e-02,
    5.081_306_281_875_765_627_76e-03,
    1.324_947_380_043_216_445_26e-04,
    -3.960_228_278_775_368_123_20e-06,
];
const PA: [f64; 7] = [
    -2.362_118_560_752_659_440_77e-03,
    4.148_561_186_837_483_316_66e-01,
    -3.722_078_760_357_013_238_47e-01,
    3.183_466_199_011_617_536_74e-01,
    -1.108_946_942_823_966_774_76e-01,
    3.547_830_432_561_823_593_71e-02,
    -2.166_375_594_868_790_843_00e-03,
];
const QA: [f64; 6] = [
    1.064_208_804_008_442_282_86e-01,
    5.403_979_177_021_710_489_37e-01,
    7.182_865_441_419_626_628_68e-02,
    1.261_712_198_087_616_421_12e-01,
    1.363_708_391_202_905_073_62e-02,
    1.198_449_984_679_910_741_70e-02,
];
const RA: [f64; 8] = [
    -9.864_944_034_847_148_227_05e-03,
    -6.938_585_727_071_817_643_72e-01,
    -1.055_862_622_532_329_098_14e+01,
    -6.237_533_245_032_600_603_96e+01,
    -1.623_966_694_625_734_703_55e+02,
    -1.846_050_929_067_110_359_94e+02,
    -8.128_743_550_630_659_342_46e+01,
    -9.814_329_344_169_145_485_92e+00,
];
const SA: [f64; 8] = [
    1.965_127_166_743_925_712_92e+01,
    1.376_577_541_435_190_426_00e+02,
    4.345_658_774_752_292_288_21e+02,
    6.453_872_717_332_678_803_36e+02,
    4.290_081_400_275_678_333_86e+02,
    1.086_350_055_417_794_351_34e+02,
    6.570_249_770_319_281_701_35e+00,
    -6.042_441_521_485_809_874_38e-02,
];
const RB: [f64; 7] = [
    -9.864_942_924_700_099_285_97e-03,
    -7.992_832_376_805_230_065_74e-01,
    -1.775_795_491_775_475_198_89e+01,
    -1.606_363_848_558_219_160_62e+02,
    -6.375_664_433_683_896_277_22e+02,
    -1.025_095_131_611_077_249_54e+03,
    -4.835_191_916_086_513_970_19e+02,
];
const SB: [f64; 7] = [
    3.033_806_074_348_245_829_24e+01,
    3.257_925_129_965_739_188_26e+02,
    1.536_729_586_084_436_959_94e+03,
    3.199_858_219_508_595_539_08e+03,
    2.553_050_406_433_164_425_83e+03,
    4.745_285_412_069_553_672_15e+02,
    -2.244_095_244_658_581_833_62e+01,
];

/// Horner evaluation of `c[0] + c[1] x + ... + c[n] x^n`.
#[inline]
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// `1 + x * (c[0] + c[1] x + ...)`, the denominator shape used by s_erf.c.
#[inline]
fn horner1(coeffs: &[f64], x: f64) -> f64 {
    1.0 + x * horner(coeffs, x)
}

/// erfc(|x|) for |x| >= 0.84375.
fn erfc_tail(ax: f64) -> f64 {
    if ax < 1.25 {
        let s = ax - 1.0;
        return 1.0 - ERX - horner(&PA, s) / horner1(&QA, s);
    }
    if ax >= 28.0 {
        return 0.0;
    }
    let s = 1.0 / (ax * ax);
    let (r, big_s) = if ax < 1.0 / 0.35 {
        (horner(&RA, s), horner1(&SA, s))
    } else {
        (horner(&RB, s), horner1(&SB, s))
    };
    // Split x*x so the large part is exact in double precision.
    let z = f64::from_bits(ax.to_bits() & 0xffff_ffff_0000_0000);
    (-z * z - 0.5625).exp() * ((z - ax) * (z + ax) + r / big_s).exp() / ax
}

/// The error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax < 0.843_75 {
        if ax < 3.725_290_298_461_914e-9 {
            return 0.125 * (8.0 * x + EFX8 * x);
        }
        let z = x * x;
        return x + x * (horner(&PP, z) / horner1(&QQ, z));
    }
    let y = if ax < 6.0 { 1.0 - erfc_tail(ax) } else { 1.0 };
    y.copysign(x)
}

/// The complementary error function, accurate in the far right tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax < 0.843_75 {
        let z = x * x;
        let y = horner(&PP, z) / horner1(&QQ, z);
        if x < 0.25 {
            return 1.0 - (x + x * y);
        }
        return 0.5 - (x - 0.5 + x * y);
    }
    let tail = erfc_tail(ax);
    if x > 0.0 {
        tail
    } else {
        2.0 - tail
    }
}

/// Standard normal density φ(z).
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal CDF Φ(z), computed through erfc so both tails keep
/// relative precision.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "standard deviation must be positive, got {sigma}"
        )))
    }
}

/// Density of `N(mu, sigma^2)` at `z`.
pub fn gauss_pdf(z: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(std_normal_pdf((z - mu) / sigma) / sigma)
}

/// CDF of `N(mu, sigma^2)` at `z`.
pub fn gauss_cdf(z: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(std_normal_cdf((z - mu) / sigma))
}

/// `log Σ exp(v_i)` with max shifting. Entries equal to `-inf` contribute
/// nothing; if every entry is `-inf` the result is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty vector".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("log_sum_exp input contains NaN".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - max).exp();
    }
    Ok(max + sum.ln())
}

/// Turns log-weights into a probability vector, `w_i = exp(l_i - lse(l))`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_weights)?;
    if !lse.is_finite() {
        return Err(Error::Domain(format!(
            "cannot normalize log-weights with log-sum-exp {lse}"
        )));
    }
    Ok(log_weights.iter().map(|&l| (l - lse).exp()).collect())
}

/// Effective sample size `1 / Σ w_i^2` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let mut sq = 0.0;
    for &w in weights {
        sq += w * w;
    }
    1.0 / sq
}

/// What a random substream is used for. Part of the substream key so that,
/// e.g., dropout masks and proposal draws for the same example never share
/// random numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Proposal = 3,
    MonteCarlo = 4,
    Data = 5,
    Split = 6,
    Landscape = 7,
    Restart = 8,
    Test = 255,
}

/// Identifies a substream under a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub epoch: u64,
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub const MAX_EPOCH: u64 = (1 << 24) - 1;
    pub const MAX_INDEX: u64 = u32::MAX as u64;

    pub fn new(epoch: u64, index: u64, purpose: Purpose) -> Self {
        Self {
            epoch,
            index,
            purpose,
        }
    }

    /// Injective packing into the 64-bit ChaCha stream id:
    /// `epoch (24 bits) | index (32 bits) | purpose (8 bits)`.
    fn stream_id(self) -> u64 {
        assert!(
            self.epoch <= Self::MAX_EPOCH,
            "epoch {} exceeds 2^24",
            self.epoch
        );
        assert!(
            self.index <= Self::MAX_INDEX,
            "index {} exceeds 2^32",
            self.index
        );
        (self.epoch << 40) | (self.index << 8) | self.purpose as u64
    }
}

/// A deterministic random stream addressed by `(seed, key)`.
///
/// Backed by ChaCha8 where the key selects the 64-bit stream id, so distinct
/// keys never overlap (each stream has 2^68 bytes of keystream).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    key: StreamKey,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key.stream_id());
        Self { seed, key, rng }
    }

    /// Convenience for `RngStream::new(seed, StreamKey::new(epoch, index, purpose))`.
    pub fn keyed(seed: u64, epoch: u64, index: u64, purpose: Purpose) -> Self {
        Self::new(seed, StreamKey::new(epoch, index, purpose))
    }

    /// A fresh stream under the same seed with a different key.
    pub fn derive(&self, key: StreamKey) -> Self {
        Self::new(self.seed, key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

/// `n` i.i.d. standard normal draws.
pub fn draw_standard_normal(stream: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| stream.standard_normal()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent erf: Maclaurin series for |x| < 3, Lentz continued fraction
    /// for erfc beyond.
    fn erf_oracle(x: f64) -> f64 {
        let ax = x.abs();
        let v = if ax < 3.0 {
            let mut term = ax;
            let mut sum = ax;
            let x2 = ax * ax;
            for n in 1..200 {
                term *= -x2 / n as f64;
                let add = term / (2 * n + 1) as f64;
                sum += add;
                if add.abs() < 1e-18 {
                    break;
                }
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        } else {
            // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
            let mut f = ax;
            for k in (1..200).rev() {
                f = ax + (k as f64 / 2.0) / f;
            }
            1.0 - (-ax * ax).exp() / std::f64::consts::PI.sqrt() / f
        };
        v.copysign(x)
    }

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_examples() {
        assert!((gauss_pdf(0.0, 0.0, 1.0).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        for &(mu, sigma) in &[(3.0, 0.2), (-1.5, 4.0), (0.0, 1e-3)] {
            let v = gauss_pdf(mu, mu, sigma).unwrap();
            assert!((v - 1.0 / (sigma * SQRT_2PI)).abs() <= 1e-12 * v);
        }
        let mass = simpson(
            |z| gauss_pdf(z, 1.0, 0.1).unwrap(),
            1.0 - 0.8,
            1.0 + 0.8,
            4000,
        );
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        assert!(gauss_pdf(1.3, 1.0, 0.1).unwrap() >= 0.0);
    }

    #[test]
    fn sigma_domain_errors() {
        assert!(matches!(gauss_pdf(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(gauss_cdf(0.0, 0.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(gauss_cdf(0.0, 0.0, 1.0).unwrap(), 0.5);
        assert!((gauss_cdf(2.0 + 10.0 * 0.3, 2.0, 0.3).unwrap() - 1.0).abs() < 1e-12);
        // Simpson on (-12, 1] of the standard normal pdf.
        let oracle = simpson(std_normal_pdf, -12.0, 1.0, 20_000);
        assert!((oracle - 0.841_344_746_1).abs() < 1e-10);
        assert!((gauss_cdf(1.0, 0.0, 1.0).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn erf_matches_independent_evaluation() {
        let mut worst: f64 = 0.0;
        let mut x = -6.0;
        while x <= 6.0 {
            worst = worst.max((erf(x) - erf_oracle(x)).abs());
            worst = worst.max((erfc(x) - (1.0 - erf_oracle(x))).abs());
            x += 0.0137;
        }
        assert!(worst < 1e-12, "worst abs error {worst}");
        assert_eq!(erf(0.0), 0.0);
        assert_eq!(erf(f64::INFINITY), 1.0);
        assert_eq!(erfc(f64::INFINITY), 0.0);
        assert_eq!(erfc(f64::NEG_INFINITY), 2.0);
    }

    #[test]
    fn cdf_monotone() {
        let mut prev = 0.0;
        let mut z = -40.0;
        while z < 40.0 {
            let c = std_normal_cdf(z);
            assert!(c >= prev, "cdf decreased at {z}");
            assert!((0.0..=1.0).contains(&c));
            prev = c;
            z += 0.01;
        }
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        let mut rng = RngStream::keyed(11, 0, 0, Purpose::Test);
        for _ in 0..200 {
            let mu = rng.uniform_range(-3.0, 3.0);
            let sigma = rng.uniform_range(0.05, 3.0);
            let z = mu + sigma * rng.uniform_range(-4.0, 4.0);
            let h = 1e-5 * sigma;
            let fd = (gauss_cdf(z + h, mu, sigma).unwrap() - gauss_cdf(z - h, mu, sigma).unwrap())
                / (2.0 * h);
            let pdf = gauss_pdf(z, mu, sigma).unwrap();
            assert!((fd - pdf).abs() / pdf < 1e-5, "z={z} mu={mu} sigma={sigma}");
        }
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        for c in [-1e300, -3.5, 0.0, 7.25, 1e300] {
            assert_eq!(log_sum_exp(&[c]).unwrap(), c);
        }
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert!(matches!(log_sum_exp(&[]), Err(Error::Domain(_))));
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY; 3]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp(&[f64::NEG_INFINITY, 2.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let w = normalize_log_weights(&[-2.5; 4]).unwrap();
        for wi in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
        let w = normalize_log_weights(&[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 2]).is_err());

        let mut rng = RngStream::keyed(3, 0, 0, Purpose::Test);
        let logw: Vec<f64> = (0..512).map(|_| 30.0 * rng.standard_normal()).collect();
        let w = normalize_log_weights(&logw).unwrap();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn stream_replay_is_identical() {
        let a = draw_standard_normal(&mut RngStream::keyed(42, 3, 17, Purpose::Proposal), 100);
        let b = draw_standard_normal(&mut RngStream::keyed(42, 3, 17, Purpose::Proposal), 100);
        assert_eq!(a, b);
        let c = draw_standard_normal(&mut RngStream::keyed(42, 3, 17, Purpose::Dropout), 100);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        let draws = draw_standard_normal(&mut RngStream::keyed(1, 0, 0, Purpose::Test), 1_000_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_substreams_uncorrelated() {
        let n = 100_000;
        let a = draw_standard_normal(&mut RngStream::keyed(9, 0, 0, Purpose::Proposal), n);
        let b = draw_standard_normal(&mut RngStream::keyed(9, 0, 1, Purpose::Proposal), n);
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for i in 0..n {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma).powi(2);
            sbb += (b[i] - mb).powi(2);
        }
        let rho = sab / (saa * sbb).sqrt();
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngStream::keyed(5, 1, 0, Purpose::Shuffle).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn normalization_shift_invariant(
            logw in proptest::collection::vec(-50.0f64..50.0, 1..64),
            shift in -1e3f64..1e3,
        ) {
            let a = normalize_log_weights(&logw).unwrap();
            let shifted: Vec<f64> = logw.iter().map(|l| l + shift).collect();
            let b = normalize_log_weights(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let total: f64 = a.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pure_functions_repeat(z in -10.0f64..10.0, mu in -5.0f64..5.0, sigma in 1e-3f64..10.0) {
            prop_assert_eq!(gauss_cdf(z, mu, sigma).unwrap(), gauss_cdf(z, mu, sigma).unwrap());
            prop_assert_eq!(gauss_pdf(z, mu, sigma).unwrap(), gauss_pdf(z, mu, sigma).unwrap());
        }
    }
}
