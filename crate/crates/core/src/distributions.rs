//! Log-density kernels and link functions shared by every prior and
//! likelihood in the model.
//!
//! All kernels return `f64::NEG_INFINITY` for impossible configurations
//! (a positive count under a zero rate, an off-support point) instead of
//! an error, so a Metropolis step that lands there is simply rejected.

use std::f64::consts::LN_2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("count {x} exceeds binomial denominator {n}")]
    CountExceedsDenominator { x: u64, n: u64 },
    #[error("length mismatch: {counts} counts against {probs} probabilities")]
    LengthMismatch { counts: usize, probs: usize },
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("point is not on the simplex")]
    OffSimplex,
    #[error("non-positive concentration {0}")]
    NonPositiveConcentration(f64),
}

/// Multinomial probabilities must sum to one within this tolerance.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Exact `k!` for `k <= 20`.
const FACTORIAL_TABLE: [f64; 21] = {
    let mut out = [0.0; 21];
    let mut k = 1;
    let mut prod: u64 = 1;
    while k <= 20 {
        prod *= k as u64;
        out[k] = prod as f64;
        k += 1;
    }
    out
};

/// `ln k!`. Exact summation below the crossover, Stirling series above it.
pub fn ln_factorial(k: u64) -> f64 {
    if k <= 20 {
        if k < 2 {
            0.0
        } else {
            FACTORIAL_TABLE[k as usize].ln()
        }
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// Natural log of the gamma function for `x > 0`.
///
/// Shifts the argument above 10 with the recurrence and then applies the
/// Stirling series; the truncation error there is below 1e-16.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))));
    (z - 0.5) * z.ln() - z + LN_SQRT_2PI + series - shift
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `x * ln(p)` with the convention `0 * ln 0 = 0`.
fn xlogy(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * p.ln()
    }
}

pub fn binomial_log_pmf(x: u64, n: u64, p: f64) -> Result<f64, DistributionError> {
    if x > n {
        return Err(DistributionError::CountExceedsDenominator { x, n });
    }
    if !(0.0..=1.0).contains(&p) {
        return Ok(f64::NEG_INFINITY);
    }
    let failures = (n - x) as f64;
    Ok(ln_choose(n, x) + xlogy(x as f64, p) + xlogy(failures, 1.0 - p))
}

pub fn poisson_log_pmf(x: u64, mu: f64) -> f64 {
    if mu < 0.0 || mu.is_nan() {
        return f64::NEG_INFINITY;
    }
    if mu == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    xlogy(x as f64, mu) - mu - ln_factorial(x)
}

pub fn multinomial_log_pmf(counts: &[u64], probs: &[f64]) -> Result<f64, DistributionError> {
    if counts.len() != probs.len() {
        return Err(DistributionError::LengthMismatch {
            counts: counts.len(),
            probs: probs.len(),
        });
    }
    if let Some(&p) = probs.iter().find(|p| **p < 0.0) {
        return Err(DistributionError::NegativeProbability(p));
    }
    let total_p: f64 = probs.iter().sum();
    if (total_p - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(DistributionError::NotNormalized(total_p));
    }
    let total: u64 = counts.iter().sum();
    let mut out = ln_factorial(total);
    for (&x, &p) in counts.iter().zip(probs) {
        out += xlogy(x as f64, p) - ln_factorial(x);
    }
    Ok(out)
}

pub fn dirichlet_log_pdf(p: &[f64], alpha: &[f64]) -> Result<f64, DistributionError> {
    if p.len() != alpha.len() {
        return Err(DistributionError::LengthMismatch {
            counts: p.len(),
            probs: alpha.len(),
        });
    }
    if let Some(&a) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(DistributionError::NonPositiveConcentration(a));
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(DistributionError::OffSimplex);
    }
    let alpha_sum: f64 = alpha.iter().sum();
    let mut out = ln_gamma(alpha_sum);
    for (&v, &a) in p.iter().zip(alpha) {
        out -= ln_gamma(a);
        if a != 1.0 {
            out += (a - 1.0) * v.ln();
        }
    }
    Ok(out)
}

pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln()
}

pub fn half_normal_log_pdf(x: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    LN_2 + normal_log_pdf(x, 0.0, sd)
}

pub fn uniform_log_pdf(x: f64, lower: f64, upper: f64) -> f64 {
    if (lower..=upper).contains(&x) {
        -(upper - lower).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-odds. Returns `±inf` at the boundaries.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`logit`], evaluated without overflow for large `|x|`.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    // Values below were computed with mpmath at 30 digits.
    const BINOM_5_10_HALF: f64 = -1.402_042_718_088_029_8;
    const POISSON_50_50: f64 = -2.876_616_680_365_729;

    #[test]
    fn binomial_examples() {
        assert_abs_diff_eq!(binomial_log_pmf(0, 1, 0.5).unwrap(), -LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            binomial_log_pmf(5, 10, 0.5).unwrap(),
            BINOM_5_10_HALF,
            epsilon = 1e-13
        );
        assert_eq!(binomial_log_pmf(0, 7, 0.0).unwrap(), 0.0);
        assert_eq!(binomial_log_pmf(3, 7, 0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(binomial_log_pmf(7, 7, 1.0).unwrap(), 0.0);
        assert!(matches!(
            binomial_log_pmf(8, 7, 0.5),
            Err(DistributionError::CountExceedsDenominator { .. })
        ));
    }

    #[test]
    fn binomial_sums_to_one() {
        for n in 0..=12u64 {
            for i in 1..=9 {
                let p = i as f64 / 10.0;
                let total: f64 = (0..=n)
                    .map(|x| binomial_log_pmf(x, n, p).unwrap().exp())
                    .sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn poisson_examples() {
        assert_abs_diff_eq!(poisson_log_pmf(0, 1.0), -1.0, epsilon = 1e-15);
        assert_eq!(poisson_log_pmf(0, 0.0), 0.0);
        assert_eq!(poisson_log_pmf(2, 0.0), f64::NEG_INFINITY);
        // Oracle: exact summation of ln k.
        let ln50: f64 = (1..=50).map(|k| (k as f64).ln()).sum();
        let oracle = -ln50 + 50.0 * 50f64.ln() - 50.0;
        assert_abs_diff_eq!(oracle, POISSON_50_50, epsilon = 1e-11);
        assert_abs_diff_eq!(poisson_log_pmf(50, 50.0), POISSON_50_50, epsilon = 1e-11);
    }

    #[test]
    fn log_factorial_crossover() {
        let exact20: f64 = (1..=20).map(|k| (k as f64).ln()).sum();
        assert_abs_diff_eq!(ln_gamma(21.0), exact20, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_factorial(20), exact20, epsilon = 1e-12);
        for k in 21..200u64 {
            let exact: f64 = (1..=k).map(|j| (j as f64).ln()).sum();
            assert_abs_diff_eq!(ln_factorial(k), exact, epsilon = 1e-10 * exact);
        }
        assert_abs_diff_eq!(ln_gamma(0.5), 0.5 * PI.ln(), epsilon = 1e-14);
    }

    #[test]
    fn multinomial_examples() {
        assert_eq!(multinomial_log_pmf(&[1, 0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            multinomial_log_pmf(&[1, 1], &[0.5, 0.5]).unwrap(),
            -LN_2,
            epsilon = 1e-15
        );
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(
            multinomial_log_pmf(&[2, 0, 0], &[third, third, 1.0 - 2.0 * third]).unwrap(),
            -(9f64.ln()),
            epsilon = 1e-12
        );
        assert!(multinomial_log_pmf(&[1, 2], &[1.0]).is_err());
        assert!(multinomial_log_pmf(&[1, 2], &[1.2, -0.2]).is_err());
    }

    fn compositions(total: u64, k: usize) -> Vec<Vec<u64>> {
        if k == 1 {
            return vec![vec![total]];
        }
        (0..=total)
            .flat_map(|first| {
                compositions(total - first, k - 1)
                    .into_iter()
                    .map(move |mut rest| {
                        rest.insert(0, first);
                        rest
                    })
            })
            .collect()
    }

    #[test]
    fn multinomial_sums_to_one() {
        let probs: [&[f64]; 2] = [&[0.3, 0.7], &[0.2, 0.5, 0.3]];
        for p in probs {
            for total in 0..=6 {
                let sum: f64 = compositions(total, p.len())
                    .iter()
                    .map(|c| multinomial_log_pmf(c, p).unwrap().exp())
                    .sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn poisson_multinomial_identity() {
        let mus = [1.3, 0.4, 2.2];
        for k in 2..=3 {
            let mu = &mus[..k];
            let mu_total: f64 = mu.iter().sum();
            let xi: Vec<f64> = mu.iter().map(|m| m / mu_total).collect();
            for total in 0..=8 {
                for c in compositions(total, k) {
                    let joint =
                        poisson_log_pmf(total, mu_total) + multinomial_log_pmf(&c, &xi).unwrap();
                    let independent: f64 =
                        c.iter().zip(mu).map(|(&x, &m)| poisson_log_pmf(x, m)).sum();
                    assert_abs_diff_eq!(joint, independent, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn dirichlet_examples() {
        let flat = [1.0; 4];
        assert_abs_diff_eq!(
            dirichlet_log_pdf(&[0.25; 4], &flat).unwrap(),
            6f64.ln(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            dirichlet_log_pdf(&[0.1, 0.2, 0.3, 0.4], &flat).unwrap(),
            6f64.ln(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            dirichlet_log_pdf(&[0.5, 0.5], &[2.0, 2.0]).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-13
        );
        assert_eq!(
            dirichlet_log_pdf(&[0.5, 0.6], &[1.0, 1.0]),
            Err(DistributionError::OffSimplex)
        );
    }

    #[test]
    fn normal_examples() {
        assert_abs_diff_eq!(normal_log_pdf(0.0, 0.0, 1.0), -LN_SQRT_2PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            normal_log_pdf(1.96, 0.0, 1.0),
            -2.839_738_533_204_672_7,
            epsilon = 1e-13
        );
        let s = 0.3;
        assert_abs_diff_eq!(
            half_normal_log_pdf(0.0, s),
            LN_2 - LN_SQRT_2PI - s.ln(),
            epsilon = 1e-15
        );
        assert_eq!(half_normal_log_pdf(-0.1, s), f64::NEG_INFINITY);
        assert_abs_diff_eq!(LN_SQRT_2PI, (2.0 * PI).sqrt().ln(), epsilon = 1e-15);
    }

    #[test]
    fn link_examples() {
        assert_eq!(logit(0.5), 0.0);
        assert_eq!(expit(0.0), 0.5);
        assert_abs_diff_eq!(logit(0.75), 3f64.ln(), epsilon = 1e-15);
        assert_eq!(logit(1.0), f64::INFINITY);
        assert_eq!(logit(0.0), f64::NEG_INFINITY);
        for i in 0..1000 {
            let p = 1e-12 + (1.0 - 2e-12) * i as f64 / 999.0;
            assert_abs_diff_eq!(expit(logit(p)), p, epsilon = 1e-12);
        }
        assert!(expit(-800.0) >= 0.0);
        assert_eq!(expit(800.0), 1.0);
    }
}
