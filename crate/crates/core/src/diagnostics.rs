//! Convergence diagnostics: the stationarity measure, the penalty threshold
//! and descent constants, Lagrangian bound monitors and rate summaries.

use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::function::Vector;
use crate::fusion::{prox_coordinates, Bregman};
use crate::problem::ConsensusProblem;
use crate::trace::RunTrace;

/// `max{18 L_g, (L_h + K L_g τ) / (2 λ_p)}`
pub fn rho_min(problem: &ConsensusProblem, tau: usize) -> f64 {
    rho_min_raw(problem.l_g(), problem.l_h(), problem.nodes(), tau, problem.lambda_p())
}

pub fn rho_min_raw(l_g: f64, l_h: f64, nodes: usize, tau: usize, lambda_p: usize) -> f64 {
    (18.0 * l_g).max((l_h + nodes as f64 * l_g * tau as f64) / (2.0 * lambda_p as f64))
}

/// Default step `1/(L_h + K L_g)` of the stationarity measure (1 when both vanish).
pub fn default_step(problem: &ConsensusProblem) -> f64 {
    let l = problem.l_h() + problem.nodes() as f64 * problem.l_g();
    if l > 0.0 {
        1.0 / l
    } else {
        1.0
    }
}

/// Squared proximal-gradient residual
/// `‖(z − prox_{α(hᶜ + 𝕀_X)}(z − α∇F(z))) / α‖²` with `F = hˢ + Σ_k g_k`.
pub fn stationarity(problem: &ConsensusProblem, z: &Vector, alpha: f64) -> Result<f64> {
    check_dim("stationarity point", problem.dim(), z.len())?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("stationarity step {alpha}")));
    }
    let grad = problem.smooth_gradient(z);
    let trial = z - &grad * alpha;
    let p = prox_coordinates(&trial, |_| 1.0 / alpha, &problem.regularizer().nonsmooth, problem.feasible());
    Ok(((z - p) / alpha).norm_squared())
}

/// Constants of the Lagrangian upper and lower bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremConstants {
    pub rho: f64,
    pub rho_min: f64,
    pub lambda_p: usize,
    pub tau: usize,
    pub upsilon: f64,
    pub upsilon_prime: f64,
    pub c_x: f64,
    pub c_z: f64,
    pub c_e: f64,
    pub c_x_prime: f64,
    pub c_z_prime: f64,
    pub c_e_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInputs {
    pub l_g: f64,
    pub l_h: f64,
    pub nodes: usize,
    pub lambda_p: usize,
    pub tau: usize,
    pub eta: f64,
    pub phi: f64,
    pub l_phi: f64,
}

impl ConstantInputs {
    pub fn from_problem(problem: &ConsensusProblem, tau: usize, eta: f64, bregman: &Bregman) -> Self {
        Self {
            l_g: problem.l_g(),
            l_h: problem.l_h(),
            nodes: problem.nodes(),
            lambda_p: problem.lambda_p(),
            tau,
            eta,
            phi: bregman.phi(),
            l_phi: bregman.l_phi(),
        }
    }
}

impl TheoremConstants {
    pub fn new(inputs: &ConstantInputs, rho: f64) -> Self {
        let ConstantInputs {
            l_g,
            l_h,
            nodes,
            lambda_p,
            tau,
            eta,
            phi,
            l_phi,
        } = *inputs;
        let k = nodes as f64;
        let tau_f = tau as f64;
        let lp = lambda_p as f64;
        let upsilon = 9.0 * l_g / (2.0 * rho * rho) + 1.0 / rho;
        let upsilon_prime = 1.0 / (rho - 3.0 * l_g);
        let breg = 2.0 * l_phi * l_phi / (eta * eta) + l_g * l_g;
        Self {
            rho,
            rho_min: rho_min_raw(l_g, l_h, nodes, tau, lambda_p),
            lambda_p,
            tau,
            upsilon,
            upsilon_prime,
            c_x: rho / 4.0 + phi / eta - 4.5 * l_g - 20.0 * upsilon * breg,
            c_z: (lp * rho - l_h - k * l_g * tau_f) / 2.0 - 20.0 * k * upsilon * l_g * l_g * tau_f * tau_f,
            c_e: 40.0 * upsilon + 1.0 / rho,
            c_x_prime: 2.5 * upsilon_prime * breg,
            c_z_prime: 10.0 * upsilon_prime * k * l_g * l_g * tau_f,
            c_e_prime: 5.0 * upsilon_prime,
        }
    }

    pub fn for_problem(problem: &ConsensusProblem, rho: f64, tau: usize, eta: f64, bregman: &Bregman) -> Self {
        Self::new(&ConstantInputs::from_problem(problem, tau, eta, bregman), rho)
    }

    /// `C_x − C_x'`
    pub fn x_margin(&self) -> f64 {
        self.c_x - self.c_x_prime
    }

    /// `C_z − C_z'`
    pub fn z_margin(&self) -> f64 {
        self.c_z - self.c_z_prime
    }

    pub fn margins_positive(&self) -> bool {
        self.x_margin() > 0.0 && self.z_margin() > 0.0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in [
            ("rho", self.rho),
            ("rho_min", self.rho_min),
            ("lambda_p", self.lambda_p as f64),
            ("tau", self.tau as f64),
            ("upsilon", self.upsilon),
            ("upsilon_prime", self.upsilon_prime),
            ("C_x", self.c_x),
            ("C_z", self.c_z),
            ("C_e", self.c_e),
            ("C_x_prime", self.c_x_prime),
            ("C_z_prime", self.c_z_prime),
            ("C_e_prime", self.c_e_prime),
            ("C_x_minus_C_x_prime", self.x_margin()),
            ("C_z_minus_C_z_prime", self.z_margin()),
        ] {
            let _ = writeln!(s, "{name} = {v:.16e}");
        }
        s
    }
}

/// Per-slot stationarity with its running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub theta: Vec<f64>,
    pub running_average: Vec<f64>,
    pub running_min: Vec<f64>,
    /// Slot attaining the overall minimum.
    pub argmin: usize,
}

pub fn stationarity_report(trace: &RunTrace) -> StationarityReport {
    let theta = trace.thetas();
    let mut running_average = Vec::with_capacity(theta.len());
    let mut running_min = Vec::with_capacity(theta.len());
    let (mut sum, mut best, mut argmin) = (0.0, f64::INFINITY, 0);
    for (i, &th) in theta.iter().enumerate() {
        sum += th;
        if th < best {
            best = th;
            argmin = i + 1;
        }
        running_average.push(sum / (i + 1) as f64);
        running_min.push(best);
    }
    StationarityReport {
        theta,
        running_average,
        running_min,
        argmin,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub slot: usize,
    /// Amount by which the bound is exceeded.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorReport {
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const DESCENT_SLACK: f64 = 1e-9;

/// Checks `L^{t+1} − L^t ≤ −(C_x − C_x')Σ_k‖δx_k‖² − (C_z − C_z')‖δz‖² + 1e−9`
/// on every slot of an exact synchronous run.
pub fn descent_monitor(trace: &RunTrace, constants: &TheoremConstants) -> Result<MonitorReport> {
    if !trace.exact || !trace.synchronous {
        return Err(Error::Capability(
            "descent monitor needs an exact synchronous run; error and delay terms are not reconstructed".into(),
        ));
    }
    let mut report = MonitorReport::default();
    let mut prev = trace.initial_lagrangian;
    for r in &trace.records {
        let bound = -constants.x_margin() * r.sum_dx - constants.z_margin() * r.dz + DESCENT_SLACK;
        let change = r.lagrangian - prev;
        if !(change <= bound) {
            report.violations.push(BoundViolation {
                slot: r.slot,
                excess: change - bound,
            });
        }
        report.checked += 1;
        prev = r.lagrangian;
    }
    Ok(report)
}

/// Plain monotonicity `L^{t+1} ≤ L^t + slack`.
pub fn monotone_monitor(trace: &RunTrace, slack: f64) -> MonitorReport {
    let mut report = MonitorReport::default();
    let mut prev = trace.initial_lagrangian;
    for r in &trace.records {
        if !(r.lagrangian <= prev + slack) {
            report.violations.push(BoundViolation {
                slot: r.slot,
                excess: r.lagrangian - prev - slack,
            });
        }
        report.checked += 1;
        prev = r.lagrangian;
    }
    report
}

/// Lower bound `L^{t+1} ≥ P − C'_e Σ‖e‖² − C'_x ΣΣ‖δx‖² − C'_z Σ‖δz‖²`
/// with cumulative sums, where `optimum` is the optimal value `P`.
pub fn lower_bound_monitor(trace: &RunTrace, constants: &TheoremConstants, optimum: f64) -> MonitorReport {
    let mut report = MonitorReport::default();
    let (mut sx, mut sz, mut se) = (0.0, 0.0, 0.0);
    for r in &trace.records {
        sx += r.sum_dx;
        sz += r.dz;
        se += trace.ledger.slot_sum(r.slot);
        let floor = optimum - constants.c_e_prime * se - constants.c_x_prime * sx - constants.c_z_prime * sz;
        let slack = DESCENT_SLACK * optimum.abs().max(1.0);
        if !(r.lagrangian >= floor - slack) {
            report.violations.push(BoundViolation {
                slot: r.slot,
                excess: floor - r.lagrangian,
            });
        }
        report.checked += 1;
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub horizon: usize,
    pub min_theta: f64,
    /// `T · min_{t≤T} ϑ_t`
    pub scaled_min_theta: f64,
    /// Mean `ϑ` over the last 10% of slots.
    pub floor: f64,
    pub average_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub rows: Vec<RateRow>,
}

impl RateSummary {
    /// `max / min` of the scaled minimum over rows.
    pub fn scaled_spread(&self) -> f64 {
        let vals: Vec<f64> = self.rows.iter().map(|r| r.scaled_min_theta).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    }

    /// Floors ordered as the rows are, checked for monotone nondecreasing order
    /// when rows are sorted by average error.
    pub fn floor_monotone_in_error(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.average_error.total_cmp(&b.average_error));
        rows.windows(2).all(|w| w[0].floor <= w[1].floor)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("T,min_theta,T_min_theta,floor,E_T\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.horizon, r.min_theta, r.scaled_min_theta, r.floor, r.average_error
            );
        }
        s
    }
}

/// Mean `ϑ` over the last 10% of the recorded slots (at least one slot).
pub fn theta_floor(trace: &RunTrace) -> f64 {
    let th = trace.thetas();
    if th.is_empty() {
        return f64::NAN;
    }
    let tail = (th.len() / 10).max(1);
    th[th.len() - tail..].iter().sum::<f64>() / tail as f64
}

pub fn rate_summary(traces: &[RunTrace]) -> Result<RateSummary> {
    if traces.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "rate summary needs at least 2 traces, got {}",
            traces.len()
        )));
    }
    let rows = traces
        .iter()
        .map(|tr| {
            let horizon = tr.slots();
            let min_theta = tr.min_theta(horizon).map_or(f64::NAN, |m| m.0);
            Ok(RateRow {
                horizon,
                min_theta,
                scaled_min_theta: horizon as f64 * min_theta,
                floor: theta_floor(tr),
                average_error: if horizon == 0 { 0.0 } else { tr.average_error()? },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateSummary { rows })
}

/// Smallest `ρ` on a grid above `rho_min` from which both margins stay positive.
pub fn positive_margin_threshold(inputs: &ConstantInputs, upper: f64, steps: usize) -> Option<f64> {
    let lo = rho_min_raw(inputs.l_g, inputs.l_h, inputs.nodes, inputs.tau, inputs.lambda_p);
    let mut first = None;
    for i in 1..=steps {
        let rho = lo + (upper - lo) * i as f64 / steps as f64;
        if TheoremConstants::new(inputs, rho).margins_positive() {
            first.get_or_insert(rho);
        } else {
            first = None;
        }
    }
    first
}
