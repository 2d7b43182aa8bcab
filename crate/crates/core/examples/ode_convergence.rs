//! Runge–Kutta error against the closed-form s → u → d chain as the step
//! halves.

use evsynth::dynamics::{integrate, CompartmentState, IntervalRates};
use evsynth::synthgen::linear_chain_oracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (alpha, beta) = (3.0, 1.5);
    let rates = IntervalRates {
        uptake: 0.0,
        incidence: alpha,
        diagnosis: beta,
        exit: 0.0,
    };
    let start = CompartmentState::new(0.0, 1.0, 0.0, 0.0)?;
    let (s, u, d) = linear_chain_oracle(alpha, beta, 1.0);
    let mut previous: Option<f64> = None;
    for h in [0.5, 0.25, 0.125, 0.0625, 0.03125] {
        let end = integrate(&start, &[rates], h)?.states[1];
        let err = (end.s - s)
            .abs()
            .max((end.u - u).abs())
            .max((end.d - d).abs());
        match previous {
            Some(p) => println!("h = {h:<8} error {err:.3e}  order {:.3}", (p / err).log2()),
            None => println!("h = {h:<8} error {err:.3e}"),
        }
        previous = Some(err);
    }
    Ok(())
}
