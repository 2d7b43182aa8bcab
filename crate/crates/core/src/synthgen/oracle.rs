//! Closed-form references. Nothing here calls into the code it checks.

/// Upper 1% point of the chi-square distribution with 9 degrees of freedom.
pub const CHI_SQUARE_9_DF_1PCT: f64 = 21.665994333461924;

/// Beta posterior `(x + 1, n − x + 1)` of a binomial proportion under a
/// uniform prior.
pub fn conjugate_posterior_oracle(x: u64, n: u64) -> (f64, f64) {
    assert!(x <= n, "x must not exceed n");
    ((x + 1) as f64, (n - x + 1) as f64)
}

/// CDF of `Beta(a, b)` for positive integer shapes, via the identity
/// `P(X ≤ t) = P(Binomial(a + b − 1, t) ≥ a)`.
pub fn beta_cdf_integer(a: u64, b: u64, t: f64) -> f64 {
    assert!(a >= 1 && b >= 1, "shapes must be positive integers");
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let m = a + b - 1;
    let mut coef = 1.0f64;
    let mut total = 0.0;
    for j in 0..=m {
        if j > 0 {
            coef *= (m - j + 1) as f64 / j as f64;
        }
        if j >= a {
            total += coef * t.powi(j as i32) * (1.0 - t).powi((m - j) as i32);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `draws` and
/// `cdf`.
pub fn ks_statistic(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// `(s, u, d)` at time `t` for the chain `s → u → d` with rates `alpha`
/// and `beta`, starting from `(1, 0, 0)`.
pub fn linear_chain_oracle(alpha: f64, beta: f64, t: f64) -> (f64, f64, f64) {
    let s = (-alpha * t).exp();
    let u = if (alpha - beta).abs() < 1e-12 {
        alpha * t * (-alpha * t).exp()
    } else {
        alpha / (beta - alpha) * ((-alpha * t).exp() - (-beta * t).exp())
    };
    (s, u, 1.0 - s - u)
}
