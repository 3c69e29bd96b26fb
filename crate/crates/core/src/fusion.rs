//! Fusion-centric engine: the center owns `z`, workers own `(x_k, y_k)`
//! and report (stale, possibly inexact) gradients.

use crate::diagnostics;
use crate::error::{check_dim, Error, Result};
use crate::function::{SmoothFn, Vector};
use crate::inexact::{ErrorLedger, ErrorModel};
use crate::problem::{ConsensusProblem, CoordMask, FeasibleSet, Nonsmooth, Regularizer};
use crate::schedule::{self, DelayModel, Schedule};
use crate::surrogates::SurrogateModel;
use crate::trace::{guard, EngineKind, Recorder, RunTrace, SolverState};

/// Generator of the Bregman term `d_φ(u, v) = ½ Σ_j w_j (u_j − v_j)²`.
#[derive(Debug, Clone, PartialEq)]
pub enum Bregman {
    /// `φ(u) = ½‖u‖²`
    HalfSquared,
    Diagonal(Vector),
}

impl Bregman {
    /// Strong convexity constant `φ`.
    pub fn phi(&self) -> f64 {
        match self {
            Self::HalfSquared => 1.0,
            Self::Diagonal(w) => w.min(),
        }
    }

    /// Gradient Lipschitz constant `L_φ`.
    pub fn l_phi(&self) -> f64 {
        match self {
            Self::HalfSquared => 1.0,
            Self::Diagonal(w) => w.max(),
        }
    }

    pub fn weight(&self, j: usize) -> f64 {
        match self {
            Self::HalfSquared => 1.0,
            Self::Diagonal(w) => w[j],
        }
    }

    pub fn divergence(&self, u: &Vector, v: &Vector) -> f64 {
        (0..u.len()).map(|j| 0.5 * self.weight(j) * (u[j] - v[j]).powi(2)).sum()
    }
}

/// Initial multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualInit {
    Zero,
    /// `y_k¹ = −P_k ∇g_k(z¹)`, the value the x-update optimality condition
    /// produces once the iterates stop moving.
    #[default]
    NegativeGradient,
}

impl DualInit {
    pub(crate) fn initial(&self, problem: &ConsensusProblem, z1: &Vector) -> Vec<Vector> {
        problem
            .losses()
            .iter()
            .map(|node| match self {
                Self::Zero => Vector::zeros(z1.len()),
                Self::NegativeGradient => -node.mask.apply(&node.loss.gradient(z1)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    pub eta: f64,
    pub bregman: Bregman,
    pub horizon: usize,
    /// Stop once `max_k max{‖P_k(z − x_k)‖², ‖δx_k‖²} ≤ eps_stop`.
    pub eps_stop: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Refuse `rho ≤ rho_min` instead of recording a warning.
    pub strict_rho: bool,
    /// Step of the stationarity measure; `None` uses `1/(L_h + K L_g)`.
    pub theta_step: Option<f64>,
    /// Initial `z` (projected onto the feasible set); zero when absent.
    pub z_init: Option<Vector>,
    pub dual_init: DualInit,
}

impl SolverConfig {
    /// `η = φ = 1`, half squared norm, no early stop.
    pub fn new(rho: f64, horizon: usize) -> Self {
        Self {
            rho,
            eta: 1.0,
            bregman: Bregman::HalfSquared,
            horizon,
            eps_stop: 0.0,
            inner_tol: 1e-10,
            inner_max_iter: 100_000,
            strict_rho: false,
            theta_step: None,
            z_init: None,
            dual_init: DualInit::NegativeGradient,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho = {} must be positive", self.rho));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if let Bregman::Diagonal(w) = &self.bregman {
            check_dim("bregman weights", n, w.len())?;
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad("bregman weights must be positive".into());
            }
        }
        if self.eta < self.bregman.phi() {
            return bad(format!("eta = {} below phi = {}", self.eta, self.bregman.phi()));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.eps_stop >= 0.0) {
            return bad(format!("eps_stop = {}", self.eps_stop));
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("inner solver tolerance and iteration cap must be positive".into());
        }
        if let Some(a) = self.theta_step {
            if !(a > 0.0) {
                return bad(format!("stationarity step {a}"));
            }
        }
        if let Some(z) = &self.z_init {
            check_dim("initial z", n, z.len())?;
        }
        Ok(())
    }
}

/// `argmin_{v∈X} hᶜ(v) + (weight/2)‖v − u‖²`
pub fn prox_hc(u: &Vector, weight: f64, regularizer: &Regularizer, feasible: &FeasibleSet) -> Result<Vector> {
    if !(weight > 0.0) {
        return Err(Error::InvalidParameter(format!("prox weight {weight} must be positive")));
    }
    Ok(prox_coordinates(u, |_| weight, &regularizer.nonsmooth, feasible))
}

pub(crate) fn prox_coordinates(
    u: &Vector,
    weight: impl Fn(usize) -> f64,
    nonsmooth: &Nonsmooth,
    feasible: &FeasibleSet,
) -> Vector {
    Vector::from_iterator(
        u.len(),
        (0..u.len()).map(|j| {
            let (lo, hi) = feasible.interval(j);
            nonsmooth.prox_scalar(u[j], weight(j), lo, hi)
        }),
    )
}

/// One coordinate of the closed-form `z` step:
/// `prox_{w}((L_h z_j − ∂_j hˢ(z) + Σ_k (ρ x_kj + y_kj)) / w)` with `w = L_h + ρ·count`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn z_coordinate(
    l_h: f64,
    z_j: f64,
    grad_h_j: f64,
    sum_rho_x_plus_y: f64,
    count: usize,
    rho: f64,
    nonsmooth: &Nonsmooth,
    interval: (f64, f64),
) -> f64 {
    let weight = l_h + rho * count as f64;
    let u = (l_h * z_j + sum_rho_x_plus_y - grad_h_j) / weight;
    nonsmooth.prox_scalar(u, weight, interval.0, interval.1)
}

/// `ρ x + y` accumulated in node order over the nodes covering `j`.
pub(crate) fn gather(problem: &ConsensusProblem, xs: &[Vector], ys: &[Vector], j: usize, rho: f64) -> f64 {
    let mut s = 0.0;
    for (k, node) in problem.losses().iter().enumerate() {
        if node.mask.contains(j) {
            s += rho * xs[k][j] + ys[k][j];
        }
    }
    s
}

/// Closed-form `z` update for the quadratic upper model of `hˢ`
/// (`hˢ(z̄) + ⟨∇hˢ(z̄), z − z̄⟩ + (L_h/2)‖z − z̄‖²`).
pub fn z_update_linear(problem: &ConsensusProblem, z: &Vector, xs: &[Vector], ys: &[Vector], rho: f64) -> Vector {
    let reg = problem.regularizer();
    let grad_h = reg.smooth.gradient(z);
    let cover = problem.coverage();
    Vector::from_iterator(
        z.len(),
        (0..z.len()).map(|j| {
            z_coordinate(
                reg.l_h,
                z[j],
                grad_h[j],
                gather(problem, xs, ys, j, rho),
                cover[j],
                rho,
                &reg.nonsmooth,
                problem.feasible().interval(j),
            )
        }),
    )
}

/// `z` update for an arbitrary convex model `m` of `hˢ` with gradient
/// Lipschitz constant `curvature`, solved by proximal gradient from `z`.
#[allow(clippy::too_many_arguments)]
pub fn z_update_general(
    problem: &ConsensusProblem,
    model: &dyn SmoothFn,
    curvature: f64,
    z: &Vector,
    xs: &[Vector],
    ys: &[Vector],
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vector> {
    let n = problem.dim();
    let cover = problem.coverage();
    let mut sum_y = Vector::zeros(n);
    let mut sum_x = Vector::zeros(n);
    for (k, node) in problem.losses().iter().enumerate() {
        for j in node.mask.indices() {
            sum_y[j] += ys[k][j];
            sum_x[j] += xs[k][j];
        }
    }
    let c_max = cover.iter().copied().max().unwrap_or(1) as f64;
    let lip = curvature + rho * c_max;
    let reg = problem.regularizer();
    let mut cur = problem.feasible().project(z);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut g = model.gradient(&cur) - &sum_y;
        for j in 0..n {
            g[j] += rho * (cover[j] as f64 * cur[j] - sum_x[j]);
        }
        let next = prox_coordinates(&(&cur - &g / lip), |_| lip, &reg.nonsmooth, problem.feasible());
        residual = lip * (&cur - &next).norm();
        cur = next;
        if residual <= tol {
            return Ok(cur);
        }
    }
    Err(Error::InnerSolver {
        iterations: max_iter,
        residual,
    })
}

/// Closed-form `x` step with a linear surrogate:
/// `(ρ z_j − y_j + (w_j/η) x_j − g_j) / (w_j/η + ρ)` on the mask, pass-through elsewhere.
#[allow(clippy::too_many_arguments)]
pub fn x_update_linear(
    x: &Vector,
    y: &Vector,
    z_new: &Vector,
    grad: &Vector,
    mask: &CoordMask,
    rho: f64,
    eta: f64,
    bregman: &Bregman,
) -> Vector {
    let mut out = x.clone();
    for j in mask.indices() {
        out[j] = x_coordinate(x[j], y[j], z_new[j], grad[j], rho, bregman.weight(j) / eta);
    }
    out
}

pub(crate) fn x_coordinate(x: f64, y: f64, z: f64, g: f64, rho: f64, prox: f64) -> f64 {
    (rho * z - y + prox * x - g) / (prox + rho)
}

/// `x` step for a general surrogate: minimizes
/// `g̃(x) + ⟨e, x⟩ + ⟨y, P(x − z)⟩ + (ρ/2)‖P(x − z)‖² + (1/η) d_φ(Px, Px^t)`
/// over the masked coordinates by gradient descent.
#[allow(clippy::too_many_arguments)]
pub fn x_update_general(
    x: &Vector,
    y: &Vector,
    z_new: &Vector,
    model: &SurrogateModel,
    error: &Vector,
    mask: &CoordMask,
    config: &SolverConfig,
) -> Result<Vector> {
    let (rho, eta) = (config.rho, config.eta);
    let lip = model.curvature() + rho + config.bregman.l_phi() / eta;
    let idx: Vec<usize> = mask.indices().collect();
    let mut cur = x.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..config.inner_max_iter {
        let g_model = model.grad(&cur);
        let mut sq = 0.0;
        let mut step = Vec::with_capacity(idx.len());
        for &j in &idx {
            let g = g_model[j]
                + error[j]
                + y[j]
                + rho * (cur[j] - z_new[j])
                + config.bregman.weight(j) / eta * (cur[j] - x[j]);
            sq += g * g;
            step.push(g);
        }
        residual = sq.sqrt();
        if residual <= config.inner_tol {
            return Ok(cur);
        }
        for (&j, g) in idx.iter().zip(step) {
            cur[j] -= g / lip;
        }
    }
    Err(Error::InnerSolver {
        iterations: config.inner_max_iter,
        residual,
    })
}

/// `y + ρ P(x − z)`
pub fn y_update(y: &Vector, x_new: &Vector, z_new: &Vector, mask: &CoordMask, rho: f64) -> Vector {
    let mut out = y.clone();
    for j in mask.indices() {
        out[j] += rho * (x_new[j] - z_new[j]);
    }
    out
}

/// Checks a schedule's gradient stamps against its own delay bounds.
pub(crate) fn check_schedule(schedule: &Schedule, nodes: usize, horizon: usize) -> Result<()> {
    check_dim("schedule nodes", nodes, schedule.nodes())?;
    if schedule.horizon() < horizon {
        return Err(Error::InvalidParameter(format!(
            "schedule covers {} slots, run needs {horizon}",
            schedule.horizon()
        )));
    }
    let model = DelayModel {
        tau1: schedule.tau1(),
        tau2: schedule.tau2(),
        drop_prob: 0.0,
        z_freq: f64::MIN_POSITIVE,
        seed: 0,
    };
    schedule::validate(schedule, &model).into_result()
}

/// Penalty check shared by both engines.
pub(crate) fn check_rho(
    problem: &ConsensusProblem,
    config: &SolverConfig,
    tau: usize,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let rho_min = diagnostics::rho_min(problem, tau);
    if config.rho <= rho_min {
        let msg = format!("rho = {} does not exceed rho_min = {rho_min}", config.rho);
        if config.strict_rho {
            return Err(Error::InvalidParameter(msg));
        }
        warnings.push(msg);
    }
    Ok(())
}

pub(crate) fn default_alpha(problem: &ConsensusProblem, config: &SolverConfig) -> f64 {
    config
        .theta_step
        .unwrap_or_else(|| diagnostics::default_step(problem))
}

/// Stop test `max_k max{‖P_k(z − x_k)‖², ‖δx_k‖²} ≤ ε`.
pub(crate) fn stop_test(problem: &ConsensusProblem, prev: &SolverState, cur: &SolverState, eps: f64) -> bool {
    problem.losses().iter().enumerate().all(|(k, node)| {
        node.mask.norm_sq(&(&cur.z - &cur.xs[k])) <= eps && (&cur.xs[k] - &prev.xs[k]).norm_squared() <= eps
    })
}

/// Gradient reported by node `k` at `anchor`, masked, with injected error.
/// Returns the (masked) error vector and its squared norm.
pub(crate) fn reported_error(
    true_grad: &Vector,
    mask: &CoordMask,
    errors: &ErrorModel,
    slot: usize,
    node: usize,
) -> (Vector, f64) {
    let g = mask.apply(true_grad);
    let (perturbed, _) = errors.perturb_gradient(&g, slot, node);
    let e = mask.apply(&(perturbed - &g));
    let sq = e.norm_squared();
    (e, sq)
}

/// Runs the fusion-centric iteration for `config.horizon` slots (or until
/// the stopping test fires).
pub fn run(
    problem: &ConsensusProblem,
    config: &SolverConfig,
    schedule: &Schedule,
    errors: &ErrorModel,
) -> Result<RunTrace> {
    config.validate(problem.dim())?;
    errors.validate()?;
    let kk = problem.nodes();
    check_schedule(schedule, kk, config.horizon)?;
    let mut warnings = Vec::new();
    check_rho(problem, config, schedule.tau(), &mut warnings)?;

    let z1 = problem
        .feasible()
        .project(&config.z_init.clone().unwrap_or_else(|| Vector::zeros(problem.dim())));
    let mut state = SolverState {
        xs: problem.losses().iter().map(|l| l.mask.apply(&z1)).collect(),
        z: z1.clone(),
        ys: config.dual_init.initial(problem, &z1),
    };
    let initial_lagrangian = problem.augmented_lagrangian(&state.xs, &state.z, &state.ys, config.rho)?;
    let mut history = vec![z1];
    let mut ledger = ErrorLedger::new();
    let mut recorder = Recorder {
        problem,
        rho: config.rho,
        alpha: default_alpha(problem, config),
        running_error: 0.0,
    };
    let mut records = Vec::with_capacity(config.horizon);
    let mut stopped_early = false;
    let reg = problem.regularizer();

    for t in 1..=config.horizon {
        let z_new = if reg.surrogate.is_linear() {
            z_update_linear(problem, &state.z, &state.xs, &state.ys, config.rho)
        } else {
            let full = CoordMask::full(problem.dim());
            let model = reg.surrogate.build(&reg.smooth, reg.l_h, &state.z, &full)?;
            z_update_general(
                problem,
                &model,
                model.curvature(),
                &state.z,
                &state.xs,
                &state.ys,
                config.rho,
                config.inner_tol,
                config.inner_max_iter,
            )?
        };
        history.push(z_new.clone());

        let mut next = SolverState {
            xs: state.xs.clone(),
            z: z_new,
            ys: state.ys.clone(),
        };
        let mut row = vec![None; kk];
        for (k, node) in problem.losses().iter().enumerate() {
            let Some(stamp) = schedule.stamp(t, k) else {
                continue;
            };
            let anchor = &history[stamp - 1];
            let true_grad = node.loss.gradient(anchor);
            let (e, e_sq) = reported_error(&true_grad, &node.mask, errors, t, k);
            row[k] = Some(e_sq);
            let x_new = if node.surrogate.is_linear() {
                let g = node.mask.apply(&true_grad) + e;
                x_update_linear(
                    &state.xs[k],
                    &state.ys[k],
                    &next.z,
                    &g,
                    &node.mask,
                    config.rho,
                    config.eta,
                    &config.bregman,
                )
            } else {
                let model = node.surrogate.build(&node.loss, node.l_g, anchor, &node.mask)?;
                x_update_general(&state.xs[k], &state.ys[k], &next.z, &model, &e, &node.mask, config)?
            };
            next.ys[k] = y_update(&state.ys[k], &x_new, &next.z, &node.mask, config.rho);
            next.xs[k] = x_new;
        }
        ledger.push_slot(row);
        guard(&next, t)?;
        records.push(recorder.measure(t, &state, &next, &ledger, false)?);
        let stop = stop_test(problem, &state, &next, config.eps_stop);
        state = next;
        if stop {
            stopped_early = t < config.horizon;
            break;
        }
    }

    let slots = records.len();
    Ok(RunTrace {
        engine: EngineKind::Fusion,
        rho: config.rho,
        initial_lagrangian,
        records,
        ledger,
        exact: errors.is_exact(),
        synchronous: (1..=slots).all(|t| (0..kk).all(|k| schedule.stamp(t, k) == Some(t + 1))),
        stopped_early,
        warnings,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{ClosureFn, LeastSquares, Quadratic, SharedFn, Zero};
    use crate::problem::NodeLoss;
    use crate::surrogates::{dc_surrogate, linear_surrogate};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn zero_problem(k: usize, n: usize) -> ConsensusProblem {
        let losses = (0..k)
            .map(|_| NodeLoss::new(Arc::new(Zero { dim: n }), CoordMask::full(n), 0.0))
            .collect();
        ConsensusProblem::new(n, losses, Regularizer::zero(n), FeasibleSet::Unconstrained).unwrap()
    }

    #[test]
    fn prox_examples() {
        let r0 = Regularizer::zero(1);
        assert_eq!(prox_hc(&v(&[3.7]), 2.0, &r0, &FeasibleSet::Unconstrained).unwrap(), v(&[3.7]));
        let boxed = FeasibleSet::uniform_box(1, -1.0, 1.0).unwrap();
        assert_eq!(prox_hc(&v(&[5.0]), 1.0, &r0, &boxed).unwrap(), v(&[1.0]));
        assert!(prox_hc(&v(&[5.0]), 0.0, &r0, &boxed).is_err());

        let mut l1 = Regularizer::zero(1);
        l1.nonsmooth = Nonsmooth::L1 { lambda: 1.0 };
        let got = prox_hc(&v(&[3.0]), 1.0, &l1, &FeasibleSet::Unconstrained).unwrap()[0];
        // grid-search oracle over [-5, 5]
        let oracle = (0..=100_000)
            .map(|i| -5.0 + i as f64 * 1e-4)
            .map(|s| (s.abs() + 0.5 * (s - 3.0) * (s - 3.0), s))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
            .1;
        assert!((got - 2.0).abs() < 1e-15);
        assert!((got - oracle).abs() < 1e-4);
    }

    #[test]
    fn z_update_examples() {
        let p = zero_problem(2, 1);
        let z = z_update_linear(&p, &v(&[0.0]), &[v(&[1.0]), v(&[3.0])], &[v(&[0.0]), v(&[0.0])], 1.0);
        assert_eq!(z, v(&[2.0]));
        let z = z_update_linear(&p, &v(&[0.0]), &[v(&[0.0]), v(&[0.0])], &[v(&[0.0]), v(&[0.0])], 1.0);
        assert_eq!(z, v(&[0.0]));
    }

    #[test]
    fn z_update_general_agrees_with_closed_form() {
        let n = 3;
        let mut r = crate::rng::stream(21, &[]);
        for trial in 0..5 {
            use rand::Rng;
            let b = DMatrix::from_fn(n, n, |_, _| r.random::<f64>() - 0.5);
            let q = b.transpose() * &b + DMatrix::identity(n, n) * 0.2;
            let l_h = q.clone().symmetric_eigenvalues().max();
            let qc = q.clone();
            let h: SharedFn = Arc::new(ClosureFn::new(
                n,
                "zQz/2",
                move |z| 0.5 * z.dot(&(&qc * z)),
                move |z| &q * z,
            ));
            let mut reg = Regularizer::zero(n);
            reg.smooth = h.clone();
            reg.l_h = l_h;
            reg.separable = false;
            if trial % 2 == 1 {
                reg.nonsmooth = Nonsmooth::L1 { lambda: 0.3 };
            }
            let losses = (0..2)
                .map(|_| NodeLoss::new(Arc::new(Zero { dim: n }), CoordMask::full(n), 0.0))
                .collect();
            let feasible = FeasibleSet::uniform_box(n, -0.8, 0.8).unwrap();
            let p = ConsensusProblem::new(n, losses, reg, feasible).unwrap();
            let c = Vector::zeros(n);
            let zt = crate::rng::in_cube(&mut r, &c, 0.8);
            let xs: Vec<_> = (0..2).map(|_| crate::rng::in_cube(&mut r, &c, 1.0)).collect();
            let ys: Vec<_> = (0..2).map(|_| crate::rng::in_cube(&mut r, &c, 1.0)).collect();
            let rho = 3.0;
            let closed = z_update_linear(&p, &zt, &xs, &ys, rho);
            let (hv, hg, anchor) = (h.value(&zt), h.gradient(&zt), zt.clone());
            let model = ClosureFn::new(
                n,
                "upper model",
                move |z| hv + hg.dot(&(z - &anchor)) + 0.5 * l_h * (z - &anchor).norm_squared(),
                {
                    let (hg, anchor) = (h.gradient(&zt), zt.clone());
                    move |z| &hg + (z - &anchor) * l_h
                },
            );
            let general = z_update_general(&p, &model, l_h, &zt, &xs, &ys, rho, 1e-12, 100_000).unwrap();
            assert!((closed - general).amax() < 1e-8);
        }
    }

    #[test]
    fn x_update_examples() {
        let m1 = CoordMask::full(1);
        let b = Bregman::HalfSquared;
        let x = x_update_linear(&v(&[1.0]), &v(&[0.0]), &v(&[1.0]), &v(&[0.0]), &m1, 1.0, 1.0, &b);
        assert_eq!(x, v(&[1.0]));
        let x = x_update_linear(&v(&[0.0]), &v(&[0.0]), &v(&[0.0]), &v(&[0.0]), &m1, 1.0, 1.0, &b);
        assert_eq!(x, v(&[0.0]));
        let m2 = CoordMask::full(2);
        let x = x_update_linear(&v(&[2.0, 2.0]), &v(&[0.0, 1.0]), &v(&[1.0, 0.0]), &v(&[1.0, 1.0]), &m2, 2.0, 0.5, &b);
        assert_eq!(x, v(&[1.25, 0.5]));
        // masked coordinates pass through
        let m = CoordMask::from_indices(2, &[0]).unwrap();
        let x = x_update_linear(&v(&[2.0, 7.0]), &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &m, 2.0, 0.5, &b);
        assert_eq!(x[1], 7.0);
    }

    #[test]
    fn x_update_general_examples() {
        let cfg = SolverConfig {
            rho: 2.0,
            eta: 0.5,
            inner_tol: 1e-13,
            ..SolverConfig::new(2.0, 1)
        };
        let mask = CoordMask::full(2);
        let ls: SharedFn = Arc::new(LeastSquares {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]),
            b: v(&[1.0, -1.0]),
        });
        let anchor = v(&[0.4, -0.2]);
        let (x, y, z) = (v(&[2.0, 2.0]), v(&[0.0, 1.0]), v(&[1.0, 0.0]));
        let e = v(&[0.1, -0.05]);
        let lin = linear_surrogate(ls.clone(), 5.0, &anchor).unwrap();
        let general = x_update_general(&x, &y, &z, &lin, &e, &mask, &cfg).unwrap();
        let closed = x_update_linear(&x, &y, &z, &(ls.gradient(&anchor) + &e), &mask, 2.0, 0.5, &Bregman::HalfSquared);
        assert!((general - closed).amax() < 1e-10);

        // DC with g+ = (a/2)‖x‖²: (a + ρ + 1/η) x = ρz − y + x^t/η + ∇g⁻(x̄) − e
        let a = 3.0;
        let plus: SharedFn = Arc::new(Quadratic::half_norm_sq(2, a));
        let minus: SharedFn = Arc::new(Quadratic {
            scale: 1.0,
            center: v(&[0.5, 0.5]),
            offset: 0.0,
        });
        let dc = dc_surrogate(plus, minus.clone(), a, &anchor).unwrap();
        let got = x_update_general(&x, &y, &z, &dc, &e, &mask, &cfg).unwrap();
        let rhs = &z * 2.0 - &y + &x * 2.0 + minus.gradient(&anchor) - &e;
        let expected = rhs / (a + 2.0 + 2.0);
        assert!((got - expected).amax() < 1e-10);

        let zero: SharedFn = Arc::new(Zero { dim: 2 });
        let m = linear_surrogate(zero, 0.0, &Vector::zeros(2)).unwrap();
        let got = x_update_general(&Vector::zeros(2), &Vector::zeros(2), &Vector::zeros(2), &m, &Vector::zeros(2), &mask, &cfg)
            .unwrap();
        assert_eq!(got, Vector::zeros(2));

        let tight = SolverConfig {
            inner_max_iter: 1,
            ..cfg
        };
        assert!(matches!(
            x_update_general(&x, &y, &z, &lin, &e, &mask, &tight),
            Err(Error::InnerSolver { .. })
        ));
    }

    #[test]
    fn y_update_examples() {
        let m = CoordMask::full(2);
        let y = v(&[0.3, -0.2]);
        assert_eq!(y_update(&y, &v(&[1.0, 2.0]), &v(&[1.0, 2.0]), &m, 5.0), y);
        assert_eq!(y_update(&Vector::zeros(2), &v(&[1.0, 0.0]), &Vector::zeros(2), &m, 2.0), v(&[2.0, 0.0]));
        let x_new = v(&[0.7, 1.1]);
        let z_new = v(&[0.2, 1.5]);
        let y_new = y_update(&y, &x_new, &z_new, &m, 3.0);
        assert!(((y_new - &y) - (x_new - z_new) * 3.0).amax() < 1e-15);
    }

    #[test]
    fn zero_problem_stops_at_first_slot() {
        let p = zero_problem(3, 2);
        let cfg = SolverConfig::new(1.0, 50);
        let tr = run(&p, &cfg, &Schedule::synchronous(50, 3), &ErrorModel::exact()).unwrap();
        assert_eq!(tr.slots(), 1);
        assert!(tr.stopped_early);
    }

    #[test]
    fn config_validation() {
        let p = zero_problem(1, 1);
        let s = Schedule::synchronous(5, 1);
        let bad_rho = SolverConfig::new(0.0, 5);
        assert!(matches!(run(&p, &bad_rho, &s, &ErrorModel::exact()), Err(Error::InvalidParameter(_))));
        let low_eta = SolverConfig {
            eta: 0.5,
            ..SolverConfig::new(1.0, 5)
        };
        assert!(run(&p, &low_eta, &s, &ErrorModel::exact()).is_err());
        let long = SolverConfig::new(1.0, 6);
        assert!(run(&p, &long, &s, &ErrorModel::exact()).is_err());
        assert!(run(&p, &SolverConfig::new(1.0, 5), &Schedule::synchronous(5, 2), &ErrorModel::exact()).is_err());
    }

    #[test]
    fn rho_below_threshold_warns_or_fails() {
        let ls: SharedFn = Arc::new(Quadratic::half_norm_sq(2, 1.0));
        let p = ConsensusProblem::new(
            2,
            vec![NodeLoss::new(ls, CoordMask::full(2), 1.0)],
            Regularizer::zero(2),
            FeasibleSet::Unconstrained,
        )
        .unwrap();
        let s = Schedule::synchronous(10, 1);
        let tr = run(&p, &SolverConfig::new(5.0, 10), &s, &ErrorModel::exact()).unwrap();
        assert_eq!(tr.warnings.len(), 1);
        let strict = SolverConfig {
            strict_rho: true,
            ..SolverConfig::new(5.0, 10)
        };
        assert!(matches!(run(&p, &strict, &s, &ErrorModel::exact()), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn divergence_is_reported() {
        // concave loss with a tiny penalty blows up
        let f: SharedFn = Arc::new(Quadratic {
            scale: -50.0,
            center: v(&[1.0]),
            offset: 0.0,
        });
        let p = ConsensusProblem::new(
            1,
            vec![NodeLoss::new(f, CoordMask::full(1), 50.0)],
            Regularizer::zero(1),
            FeasibleSet::Unconstrained,
        )
        .unwrap();
        let s = Schedule::synchronous(2000, 1);
        let res = run(&p, &SolverConfig::new(1.0, 2000), &s, &ErrorModel::exact());
        assert!(matches!(res, Err(Error::Divergence { .. })), "{res:?}");
    }
}
