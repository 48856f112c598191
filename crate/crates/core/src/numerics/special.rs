use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lower regularized incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Upper regularized incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

/// Complementary error function via `erfc(z) = Q(1/2, z^2)`.
pub fn erfc(z: f64) -> f64 {
    if z >= 0.0 {
        regularized_gamma_q(0.5, z * z)
    } else {
        1.0 + regularized_gamma_p(0.5, z * z)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn chi2_cdf(df: u32, x: f64) -> f64 {
    regularized_gamma_p(f64::from(df) / 2.0, x / 2.0)
}

fn chi2_pdf(df: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = f64::from(df) / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)).exp()
}

fn check_prob(prob: f64) -> Result<()> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "probability must lie in (0, 1), got {prob}"
        )))
    }
}

/// Quantile of the chi-square distribution with `df` degrees of freedom.
///
/// Brackets the root, bisects on the CDF, then applies Newton steps kept
/// inside the bracket.
pub fn chi2_quantile(df: u32, prob: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::Domain(
            "degrees of freedom must be at least 1".into(),
        ));
    }
    check_prob(prob)?;
    let mut lo = 0.0;
    let mut hi = f64::from(df).max(1.0);
    while chi2_cdf(df, hi) < prob {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(df, mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi.max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let pdf = chi2_pdf(df, x);
        if pdf <= 0.0 {
            break;
        }
        let next = x - (chi2_cdf(df, x) - prob) / pdf;
        if !(next > lo && next < hi) {
            break;
        }
        x = next;
    }
    Ok(x)
}

// Acklam's rational approximation to the normal quantile.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Standard normal quantile: rational approximation plus one Halley step
/// against the erfc-based CDF.
pub fn normal_quantile(prob: f64) -> Result<f64> {
    check_prob(prob)?;
    if prob == 0.5 {
        return Ok(0.0);
    }
    let x = acklam(prob);
    let e = normal_cdf(x) - prob;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
    use statrs::function::erf;

    // Independent oracle: bisection on a CDF built from a different
    // special-function implementation.
    fn bisect(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn chi2_reference_values() {
        let gamma_oracle =
            |df: f64| move |x: f64| statrs::function::gamma::gamma_lr(df / 2.0, x / 2.0);
        let df2 = bisect(gamma_oracle(2.0), 0.95, 0.0, 50.0);
        let df3 = bisect(gamma_oracle(3.0), 0.95, 0.0, 50.0);
        // df = 2 has the closed form -2 ln(1 - p)
        assert!((df2 - (-2.0 * 0.05f64.ln())).abs() < 1e-10);
        assert!((chi2_quantile(2, 0.95).unwrap() - df2).abs() < 1e-8);
        assert!((chi2_quantile(3, 0.95).unwrap() - df3).abs() < 1e-8);
        assert!((chi2_quantile(2, 0.95).unwrap() - 5.99146).abs() < 1e-5);
        assert!((chi2_quantile(3, 0.95).unwrap() - 7.81473).abs() < 1e-5);
        // df = 1 is the squared two-sided normal quantile
        let z = bisect(|x| 0.5 * erf::erfc(-x / SQRT_2), 0.975, 0.0, 10.0);
        assert!((chi2_quantile(1, 0.95).unwrap() - z * z).abs() < 1e-8);
        assert!((chi2_quantile(1, 0.95).unwrap() - 3.84146).abs() < 1e-5);
    }

    #[test]
    fn normal_reference_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        let z = bisect(|x| 0.5 * erf::erfc(-x / SQRT_2), 0.975, 0.0, 10.0);
        assert!((normal_quantile(0.975).unwrap() - z).abs() < 1e-8);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_quantile(0.025).unwrap() + 1.959964).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(p), Err(Error::Domain(_))));
            assert!(matches!(chi2_quantile(2, p), Err(Error::Domain(_))));
        }
        assert!(matches!(chi2_quantile(0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn lower_tail_against_libm() {
        // 0.5 * erfc(-x / sqrt 2) from the C library
        let cases = [
            (-2.8, 0.002555130330427937),
            (-2.9, 0.0018658133003840384),
            (-3.5, 0.00023262907903552504),
        ];
        for (x, want) in cases {
            assert!((normal_cdf(x) / want - 1.0).abs() < 1e-13, "x = {x}");
        }
        for (x, want) in [
            (0.5, 0.4795001221869535),
            (1.0, 0.15729920705028513),
            (-0.5, 1.5204998778130465),
        ] {
            assert!((erfc(x) / want - 1.0).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn special_functions_agree_with_statrs() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in -80..=80 {
            let x = f64::from(i) / 10.0;
            // statrs is only good to about 1e-10 here; tight values are checked against libm
            assert!((normal_cdf(x) / n.cdf(x) - 1.0).abs() < 1e-9, "x = {x}");
            assert!((erfc(x) / erf::erfc(x) - 1.0).abs() < 1e-9, "x = {x}");
        }
        for df in [1u32, 2, 3, 5, 10, 30] {
            let c = ChiSquared::new(f64::from(df)).unwrap();
            for i in 1..200 {
                let x = f64::from(i) * 0.25;
                assert!((chi2_cdf(df, x) - c.cdf(x)).abs() < 1e-12);
            }
        }
        for x in [0.1, 0.5, 1.0, 2.5, 7.0, 30.5, 170.0] {
            assert!((ln_gamma(x) - statrs::function::gamma::ln_gamma(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantiles_round_trip_and_increase() {
        for df in [1u32, 2, 3, 4, 7, 15] {
            let mut prev = 0.0;
            for i in 1..=99 {
                let p = f64::from(i) / 100.0;
                let x = chi2_quantile(df, p).unwrap();
                assert!((chi2_cdf(df, x) - p).abs() < 1e-7);
                assert!(x > prev);
                prev = x;
            }
        }
        for i in 1..=99 {
            let p = f64::from(i) / 100.0;
            assert!((normal_cdf(normal_quantile(p).unwrap()) - p).abs() < 1e-7);
        }
        for p in [1e-10, 1e-6, 0.001, 0.999, 1.0 - 1e-6] {
            assert!((normal_cdf(normal_quantile(p).unwrap()) - p).abs() < 1e-7 * p.max(1e-3));
        }
    }
}
