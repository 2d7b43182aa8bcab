//! Four-compartment prevalence–incidence dynamics.
//!
//! The population at risk is split into proportions `e` (outside the risk
//! group), `s` (susceptible), `u` (infected, undiagnosed) and `d` (infected,
//! diagnosed). Over each unit interval `[t, t+1)` the transition rates are
//! constant:
//!
//! ```text
//! de/dt = μ_in − (λ_es + μ_out)·e
//! ds/dt = λ_es·e − (λ_su + μ_out)·s
//! du/dt = λ_su·s − (λ_ud + μ_out)·u
//! dd/dt = λ_ud·u − μ_out·d
//! ```
//!
//! with entry balanced against exit, `μ_in = μ_out·(e + s + u + d)`, so the
//! state stays on the probability simplex. Everything that depends on the
//! exact form of the system goes through [`ode_rhs`].

mod io;
pub mod joint;

use thiserror::Error;

use crate::distributions::{binomial_log_pmf, poisson_log_pmf, DistributionError};

pub use io::{read_rate_csv, write_trajectory_csv, RateRecord};

/// A component may dip this far below zero before a step is rejected.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-9;

/// Default solver step, in years.
pub const DEFAULT_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("step {0} does not divide the unit interval")]
    InvalidStep(f64),
    #[error("component {component} reached {value:e} at t = {time}; reduce the step size")]
    StepFailure {
        component: &'static str,
        value: f64,
        time: f64,
    },
    #[error("negative rate {0}")]
    NegativeRate(f64),
    #[error("state is not a proportion vector: {0:?}")]
    InvalidState([f64; 4]),
    #[error("{0} is undefined for this state")]
    Undefined(&'static str),
    #[error("joint model requires T ≥ 2 (got T = {0})")]
    TooFewYears(usize),
    #[error("datum refers to t = {t} outside 1..={max}")]
    TimeOutOfRange { t: usize, max: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub const COMPARTMENTS: [&str; 4] = ["e", "s", "u", "d"];

/// Compartment proportions at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompartmentState {
    pub e: f64,
    pub s: f64,
    pub u: f64,
    pub d: f64,
}

impl CompartmentState {
    pub fn new(e: f64, s: f64, u: f64, d: f64) -> Result<Self, DynamicsError> {
        let state = Self { e, s, u, d };
        let arr = state.to_array();
        if arr.iter().any(|v| !(*v >= 0.0)) || (state.total() - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::InvalidState(arr));
        }
        Ok(state)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            e: a[0],
            s: a[1],
            u: a[2],
            d: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.e, self.s, self.u, self.d]
    }

    pub fn total(&self) -> f64 {
        self.e + self.s + self.u + self.d
    }

    /// Builds the state from group size, prevalence and diagnosed fraction.
    pub fn from_theta(theta: PrevalenceTheta) -> Self {
        let PrevalenceTheta { rho, pi, delta } = theta;
        Self {
            e: 1.0 - rho,
            s: rho * (1.0 - pi),
            u: rho * pi * (1.0 - delta),
            d: rho * pi * delta,
        }
    }

    pub fn to_theta(&self) -> Result<PrevalenceTheta, DynamicsError> {
        let rho = self.s + self.u + self.d;
        let infected = self.u + self.d;
        if rho <= 0.0 {
            return Err(DynamicsError::Undefined("prevalence"));
        }
        if infected <= 0.0 {
            return Err(DynamicsError::Undefined("diagnosed fraction"));
        }
        Ok(PrevalenceTheta {
            rho,
            pi: infected / rho,
            delta: self.d / infected,
        })
    }
}

/// Group size, prevalence and diagnosed fraction for one year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrevalenceTheta {
    pub rho: f64,
    pub pi: f64,
    pub delta: f64,
}

/// Transition rates (per year) over one interval `[t, t+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntervalRates {
    /// `λ_es`, risk-behaviour uptake.
    pub uptake: f64,
    /// `λ_su`, incidence.
    pub incidence: f64,
    /// `λ_ud`, diagnosis.
    pub diagnosis: f64,
    /// `μ_out`, exit from the modelled population.
    pub exit: f64,
}

impl IntervalRates {
    fn validate(&self) -> Result<(), DynamicsError> {
        for r in [self.uptake, self.incidence, self.diagnosis, self.exit] {
            if !(r >= 0.0) {
                return Err(DynamicsError::NegativeRate(r));
            }
        }
        Ok(())
    }
}

pub fn ode_rhs(state: &[f64; 4], rates: &IntervalRates) -> [f64; 4] {
    let [e, s, u, d] = *state;
    let entry = rates.exit * (e + s + u + d);
    [
        entry - (rates.uptake + rates.exit) * e,
        rates.uptake * e - (rates.incidence + rates.exit) * s,
        rates.incidence * s - (rates.diagnosis + rates.exit) * u,
        rates.diagnosis * u - rates.exit * d,
    ]
}

fn axpy(y: &[f64; 4], a: f64, x: &[f64; 4]) -> [f64; 4] {
    [
        y[0] + a * x[0],
        y[1] + a * x[1],
        y[2] + a * x[2],
        y[3] + a * x[3],
    ]
}

/// One classical fourth-order Runge–Kutta step on a raw 4-vector.
pub fn rk4_step_raw(y: &[f64; 4], h: f64, f: impl Fn(&[f64; 4]) -> [f64; 4]) -> [f64; 4] {
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn check_nonnegative(y: &[f64; 4], time: f64) -> Result<(), DynamicsError> {
    for (i, v) in y.iter().enumerate() {
        if *v < -NEGATIVITY_TOLERANCE || !v.is_finite() {
            return Err(DynamicsError::StepFailure {
                component: COMPARTMENTS[i],
                value: *v,
                time,
            });
        }
    }
    Ok(())
}

pub fn rk4_step(
    state: &CompartmentState,
    rates: &IntervalRates,
    h: f64,
) -> Result<CompartmentState, DynamicsError> {
    if !(h > 0.0) {
        return Err(DynamicsError::InvalidStep(h));
    }
    rates.validate()?;
    let y = rk4_step_raw(&state.to_array(), h, |y| ode_rhs(y, rates));
    check_nonnegative(&y, h)?;
    Ok(CompartmentState::from_array(y))
}

/// Number of steps of size `h` in one year; errors unless `h` divides 1.
pub fn steps_per_interval(h: f64) -> Result<usize, DynamicsError> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(DynamicsError::InvalidStep(h));
    }
    let n = (1.0 / h).round();
    if (n * h - 1.0).abs() > 1e-9 {
        return Err(DynamicsError::InvalidStep(h));
    }
    Ok(n as usize)
}

pub fn integrate_interval(
    state: &CompartmentState,
    rates: &IntervalRates,
    h: f64,
) -> Result<CompartmentState, DynamicsError> {
    let steps = steps_per_interval(h)?;
    rates.validate()?;
    let mut y = state.to_array();
    for k in 0..steps {
        y = rk4_step_raw(&y, h, |y| ode_rhs(y, rates));
        check_nonnegative(&y, (k + 1) as f64 * h)?;
    }
    Ok(CompartmentState::from_array(y))
}

/// Solution at the annual time points `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<CompartmentState>,
    pub rates: Vec<IntervalRates>,
    pub step: f64,
}

impl Trajectory {
    pub fn years(&self) -> usize {
        self.states.len()
    }
}

/// Integrates from `c1` through every interval of `schedule`; the result
/// has `schedule.len() + 1` annual states.
pub fn integrate(
    c1: &CompartmentState,
    schedule: &[IntervalRates],
    h: f64,
) -> Result<Trajectory, DynamicsError> {
    let mut states = Vec::with_capacity(schedule.len() + 1);
    states.push(*c1);
    let mut current = *c1;
    for (t, rates) in schedule.iter().enumerate() {
        current = integrate_interval(&current, rates, h).map_err(|err| match err {
            DynamicsError::StepFailure {
                component,
                value,
                time,
            } => DynamicsError::StepFailure {
                component,
                value,
                time: (t + 1) as f64 + time,
            },
            other => other,
        })?;
        states.push(current);
    }
    Ok(Trajectory {
        states,
        rates: schedule.to_vec(),
        step: h,
    })
}

pub fn trajectory_to_theta(traj: &Trajectory) -> Result<Vec<PrevalenceTheta>, DynamicsError> {
    traj.states.iter().map(CompartmentState::to_theta).collect()
}

/// What a binomial prevalence datum measures in year `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevalenceQuantity {
    Rho,
    Pi,
    Delta,
    /// `π(1 − δ)`.
    UndiagnosedPrevalence,
}

impl PrevalenceQuantity {
    pub fn of(&self, theta: &PrevalenceTheta) -> f64 {
        match self {
            PrevalenceQuantity::Rho => theta.rho,
            PrevalenceQuantity::Pi => theta.pi,
            PrevalenceQuantity::Delta => theta.delta,
            PrevalenceQuantity::UndiagnosedPrevalence => theta.pi * (1.0 - theta.delta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrevalenceDatum {
    /// Year index, 1-based.
    pub t: usize,
    pub quantity: PrevalenceQuantity,
    pub x: u64,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateQuantity {
    UptakeCount,
    DiagnosisCount,
    ExitCount,
}

impl RateQuantity {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateQuantity::UptakeCount => "uptake-count",
            RateQuantity::DiagnosisCount => "diagnosis-count",
            RateQuantity::ExitCount => "exit-count",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uptake-count" => Some(RateQuantity::UptakeCount),
            "diagnosis-count" => Some(RateQuantity::DiagnosisCount),
            "exit-count" => Some(RateQuantity::ExitCount),
            _ => None,
        }
    }

    pub fn rate(&self, rates: &IntervalRates) -> f64 {
        match self {
            RateQuantity::UptakeCount => rates.uptake,
            RateQuantity::DiagnosisCount => rates.diagnosis,
            RateQuantity::ExitCount => rates.exit,
        }
    }
}

/// Event count over person-years of exposure in interval `[t, t+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDatum {
    pub t: usize,
    pub quantity: RateQuantity,
    pub x: u64,
    pub exposure: f64,
}

/// Scores prevalence data against the integrated trajectory and rate data
/// against the schedule directly. Returns the summed log-likelihood.
pub fn joint_log_likelihood(
    c1: &CompartmentState,
    schedule: &[IntervalRates],
    prevalence: &[PrevalenceDatum],
    rates: &[RateDatum],
    h: f64,
) -> Result<f64, DynamicsError> {
    let years = schedule.len() + 1;
    let mut total = 0.0;
    if !prevalence.is_empty() {
        let traj = integrate(c1, schedule, h)?;
        for datum in prevalence {
            if datum.t == 0 || datum.t > years {
                return Err(DynamicsError::TimeOutOfRange {
                    t: datum.t,
                    max: years,
                });
            }
            let theta = traj.states[datum.t - 1].to_theta()?;
            total += binomial_log_pmf(datum.x, datum.n, datum.quantity.of(&theta))?;
        }
    }
    for datum in rates {
        if datum.t == 0 || datum.t > schedule.len() {
            return Err(DynamicsError::TimeOutOfRange {
                t: datum.t,
                max: schedule.len(),
            });
        }
        let lambda = datum.quantity.rate(&schedule[datum.t - 1]);
        total += poisson_log_pmf(datum.x, lambda * datum.exposure);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rates(uptake: f64, incidence: f64, diagnosis: f64, exit: f64) -> IntervalRates {
        IntervalRates {
            uptake,
            incidence,
            diagnosis,
            exit,
        }
    }

    #[test]
    fn rhs_examples() {
        let y = [0.2, 0.3, 0.4, 0.1];
        assert_eq!(ode_rhs(&y, &IntervalRates::default()), [0.0; 4]);
        let d = ode_rhs(&[0.0, 1.0, 0.0, 0.0], &rates(0.0, 1.0, 0.0, 0.0));
        assert_eq!(d, [0.0, -1.0, 1.0, 0.0]);

        // Hand evaluation with μ_in = 0.02:
        // de = 0.02 − 0.12·0.5 = −0.04
        // ds = 0.1·0.5 − 0.22·0.3 = −0.016
        // du = 0.2·0.3 − 0.52·0.15 = −0.018
        // dd = 0.5·0.15 − 0.02·0.05 = 0.074
        let d = ode_rhs(&[0.5, 0.3, 0.15, 0.05], &rates(0.1, 0.2, 0.5, 0.02));
        let expected = [-0.04, -0.016, -0.018, 0.074];
        for (a, b) in d.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_matches_exponential() {
        let y = rk4_step_raw(&[1.0, 0.0, 0.0, 0.0], 0.1, |y| [-y[0], 0.0, 0.0, 0.0]);
        // RK4 reproduces the Taylor series of e^{-h} through h^4.
        assert_abs_diff_eq!(y[0], 0.904_837_5, epsilon = 1e-15);
        assert_abs_diff_eq!(y[0], (-0.1f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn rk4_fixed_point_and_conservation() {
        let c = CompartmentState::new(0.5, 0.3, 0.15, 0.05).unwrap();
        assert_eq!(rk4_step(&c, &IntervalRates::default(), 0.1).unwrap(), c);
        let next = rk4_step(&c, &rates(0.3, 0.4, 0.9, 0.05), 0.1).unwrap();
        assert_abs_diff_eq!(next.total(), 1.0, epsilon = 1e-12);
        assert!(rk4_step(&c, &IntervalRates::default(), 0.0).is_err());
    }

    #[test]
    fn step_failure_is_reported() {
        let c = CompartmentState::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let err = rk4_step(&c, &rates(0.0, 50.0, 0.0, 0.0), 0.5).unwrap_err();
        // Even-degree Taylor polynomials of exp stay positive, so `s` overshoots
        // and the conserved sum pushes `u` negative.
        assert!(matches!(
            err,
            DynamicsError::StepFailure { component: "u", .. }
        ));
    }

    #[test]
    fn interval_matches_closed_form() {
        let c = CompartmentState::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let end = integrate_interval(&c, &rates(0.0, 0.5, 0.0, 0.0), 0.01).unwrap();
        assert_abs_diff_eq!(end.s, (-0.5f64).exp(), epsilon = 1e-8);
        let end = integrate_interval(&c, &rates(0.0, 0.5, 1.0, 0.0), 0.01).unwrap();
        // α/(β−α)(e^{−α} − e^{−β}) for α = 0.5, β = 1.
        assert_abs_diff_eq!(end.u, 0.238_651_218_541_191_1, epsilon = 1e-7);
        assert!(integrate_interval(&c, &rates(0.0, 0.5, 1.0, 0.0), 0.03).is_err());
    }

    #[test]
    fn theta_inversion() {
        let c = CompartmentState::new(0.9, 0.09, 0.004, 0.006).unwrap();
        let th = c.to_theta().unwrap();
        assert_abs_diff_eq!(th.rho, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(th.pi, 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(th.delta, 0.6, epsilon = 1e-14);

        let no_diag = CompartmentState::new(0.5, 0.4, 0.1, 0.0)
            .unwrap()
            .to_theta()
            .unwrap();
        assert_eq!(no_diag.delta, 0.0);
        let healthy = CompartmentState::new(0.5, 0.5, 0.0, 0.0).unwrap();
        assert!(healthy.to_theta().is_err());

        let theta = PrevalenceTheta {
            rho: 0.037,
            pi: 0.12,
            delta: 0.71,
        };
        let back = CompartmentState::from_theta(theta).to_theta().unwrap();
        assert_abs_diff_eq!(back.rho, theta.rho, epsilon = 1e-12);
        assert_abs_diff_eq!(back.pi, theta.pi, epsilon = 1e-12);
        assert_abs_diff_eq!(back.delta, theta.delta, epsilon = 1e-12);
    }

    #[test]
    fn joint_likelihood_examples() {
        let c1 = CompartmentState::new(0.9, 0.09, 0.004, 0.006).unwrap();
        let schedule = [rates(0.01, 0.02, 0.5, 0.03)];
        assert_eq!(
            joint_log_likelihood(&c1, &schedule, &[], &[], 0.01).unwrap(),
            0.0
        );

        let datum = RateDatum {
            t: 1,
            quantity: RateQuantity::DiagnosisCount,
            x: 5,
            exposure: 10.0,
        };
        let ll = joint_log_likelihood(&c1, &schedule, &[], &[datum], 0.01).unwrap();
        assert_abs_diff_eq!(ll, -1.740_302_180_611_544, epsilon = 1e-12);

        let prev = [
            PrevalenceDatum {
                t: 1,
                quantity: PrevalenceQuantity::Pi,
                x: 30,
                n: 300,
            },
            PrevalenceDatum {
                t: 2,
                quantity: PrevalenceQuantity::UndiagnosedPrevalence,
                x: 12,
                n: 300,
            },
        ];
        let ll = joint_log_likelihood(&c1, &schedule, &prev, &[], 0.01).unwrap();
        let traj = integrate(&c1, &schedule, 0.01).unwrap();
        let thetas = trajectory_to_theta(&traj).unwrap();
        let expected = binomial_log_pmf(30, 300, thetas[0].pi).unwrap()
            + binomial_log_pmf(12, 300, thetas[1].pi * (1.0 - thetas[1].delta)).unwrap();
        assert_eq!(ll, expected);

        let bad = RateDatum { t: 2, ..datum };
        assert!(joint_log_likelihood(&c1, &schedule, &[], &[bad], 0.01).is_err());
    }
}
