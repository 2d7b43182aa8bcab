//! A Poisson total with a multinomial split has the same likelihood as
//! independent Poisson counts.

use evsynth::distributions::{multinomial_log_pmf, poisson_log_pmf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rates = [0.7, 2.3, 5.1];
    let counts = [1u64, 3, 4];
    let total: f64 = rates.iter().sum();
    let shares: Vec<f64> = rates.iter().map(|r| r / total).collect();
    let n: u64 = counts.iter().sum();

    let joint = poisson_log_pmf(n, total) + multinomial_log_pmf(&counts, &shares)?;
    let independent: f64 = counts
        .iter()
        .zip(rates)
        .map(|(x, r)| poisson_log_pmf(*x, r))
        .sum();
    println!("Poisson total + multinomial split: {joint:.12}");
    println!("independent Poisson counts:        {independent:.12}");
    Ok(())
}
