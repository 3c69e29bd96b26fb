//! Consensus problem model: node losses with coordinate masks, the split
//! regularizer `h = hˢ + hᶜ`, the feasible set, and evaluation of the
//! objective and the augmented Lagrangian.

use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::function::{SharedFn, SmoothFn, Vector, Zero};
use crate::rng;
use crate::surrogates::SurrogateSpec;

/// A 0/1 diagonal projection selecting a subset of coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordMask {
    active: Vec<bool>,
}

impl CoordMask {
    pub fn full(n: usize) -> Self {
        Self {
            active: vec![true; n],
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut active = vec![false; n];
        for &j in indices {
            if j >= n {
                return Err(Error::Range(format!("mask coordinate {j} >= {n}")));
            }
            active[j] = true;
        }
        Ok(Self { active })
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.active.get(j).copied().unwrap_or(false)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_full(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    /// `P v`
    pub fn apply(&self, v: &Vector) -> Vector {
        let mut out = v.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, v: &mut Vector) {
        for (x, &a) in v.iter_mut().zip(&self.active) {
            if !a {
                *x = 0.0;
            }
        }
    }

    /// `‖P v‖²`
    pub fn norm_sq(&self, v: &Vector) -> f64 {
        v.iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(x, _)| x * x)
            .sum()
    }
}

/// Closed convex feasible set for `z`. Boxes may carry infinite bounds, so a
/// box also represents any product of per-coordinate intervals.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    Unconstrained,
    Box { lower: Vector, upper: Vector },
}

impl FeasibleSet {
    pub fn new_box(lower: Vector, upper: Vector) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        for j in 0..lower.len() {
            let (lo, hi) = (lower[j], upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "empty interval [{lo}, {hi}] at coordinate {j}"
                )));
            }
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn uniform_box(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new_box(Vector::from_element(n, lower), Vector::from_element(n, upper))
    }

    pub fn interval(&self, j: usize) -> (f64, f64) {
        match self {
            Self::Unconstrained => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Box { lower, upper } => (lower[j], upper[j]),
        }
    }

    pub fn contains(&self, z: &Vector) -> bool {
        match self {
            Self::Unconstrained => true,
            Self::Box { lower, upper } => (0..z.len()).all(|j| lower[j] <= z[j] && z[j] <= upper[j]),
        }
    }

    pub fn project(&self, z: &Vector) -> Vector {
        match self {
            Self::Unconstrained => z.clone(),
            Self::Box { lower, upper } => {
                Vector::from_iterator(z.len(), (0..z.len()).map(|j| z[j].clamp(lower[j], upper[j])))
            }
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Self::Unconstrained => Ok(()),
            Self::Box { lower, .. } => check_dim("feasible set", n, lower.len()),
        }
    }
}

/// Convex nonsmooth part `hᶜ` with an exact proximal map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonsmooth {
    Zero,
    L1 { lambda: f64 },
}

impl Nonsmooth {
    pub fn value(&self, z: &Vector) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::L1 { lambda } => lambda * z.iter().map(|x| x.abs()).sum::<f64>(),
        }
    }

    /// Scalar prox of `hᶜ_j + 𝕀_[lo,hi]` with quadratic weight `w`, i.e.
    /// `argmin_{v∈[lo,hi]} hᶜ_j(v) + (w/2)(v − u)²`.
    pub fn prox_scalar(&self, u: f64, weight: f64, lo: f64, hi: f64) -> f64 {
        let v = match *self {
            Self::Zero => u,
            Self::L1 { lambda } => {
                let thresh = lambda / weight;
                u.signum() * (u.abs() - thresh).max(0.0)
            }
        };
        // separable convex scalar problem: clipping the unconstrained minimizer is exact
        v.clamp(lo, hi)
    }
}

#[derive(Debug, Clone)]
pub struct Regularizer {
    pub smooth: SharedFn,
    /// Gradient Lipschitz constant of `smooth`.
    pub l_h: f64,
    pub nonsmooth: Nonsmooth,
    /// `h(z) = Σ_j h_j(z_j)`.
    pub separable: bool,
    pub surrogate: SurrogateSpec,
}

impl Regularizer {
    pub fn zero(n: usize) -> Self {
        Self {
            smooth: Arc::new(Zero { dim: n }),
            l_h: 0.0,
            nonsmooth: Nonsmooth::Zero,
            separable: true,
            surrogate: SurrogateSpec::Linear,
        }
    }

    pub fn value(&self, z: &Vector) -> f64 {
        self.smooth.value(z) + self.nonsmooth.value(z)
    }
}

#[derive(Debug, Clone)]
pub struct NodeLoss {
    pub loss: SharedFn,
    pub mask: CoordMask,
    /// Gradient Lipschitz constant on the masked subspace.
    pub l_g: f64,
    pub surrogate: SurrogateSpec,
}

impl NodeLoss {
    pub fn new(loss: SharedFn, mask: CoordMask, l_g: f64) -> Self {
        Self {
            loss,
            mask,
            l_g,
            surrogate: SurrogateSpec::Linear,
        }
    }

    pub fn with_surrogate(mut self, surrogate: SurrogateSpec) -> Self {
        self.surrogate = surrogate;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    n: usize,
    losses: Vec<NodeLoss>,
    regularizer: Regularizer,
    feasible: FeasibleSet,
    coverage: Vec<usize>,
}

impl ConsensusProblem {
    pub fn new(
        n: usize,
        losses: Vec<NodeLoss>,
        regularizer: Regularizer,
        feasible: FeasibleSet,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if losses.is_empty() {
            return Err(Error::InvalidParameter("at least one node is required".into()));
        }
        check_dim("regularizer", n, regularizer.smooth.dim())?;
        if regularizer.l_h < 0.0 || !regularizer.l_h.is_finite() {
            return Err(Error::InvalidParameter(format!("L_h = {}", regularizer.l_h)));
        }
        if let Nonsmooth::L1 { lambda } = regularizer.nonsmooth {
            if lambda < 0.0 {
                return Err(Error::InvalidParameter(format!("l1 weight {lambda} < 0")));
            }
        }
        feasible.check(n)?;
        let mut coverage = vec![0usize; n];
        for (k, node) in losses.iter().enumerate() {
            check_dim("node loss", n, node.loss.dim())?;
            check_dim("node mask", n, node.mask.dim())?;
            if node.l_g < 0.0 || !node.l_g.is_finite() {
                return Err(Error::InvalidParameter(format!("node {k}: L_g = {}", node.l_g)));
            }
            for j in node.mask.indices() {
                coverage[j] += 1;
            }
        }
        if let Some(j) = coverage.iter().position(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!(
                "coordinate {j} is not covered by any node mask"
            )));
        }
        Ok(Self {
            n,
            losses,
            regularizer,
            feasible,
            coverage,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.losses.len()
    }

    pub fn losses(&self) -> &[NodeLoss] {
        &self.losses
    }

    pub fn loss(&self, k: usize) -> &NodeLoss {
        &self.losses[k]
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn feasible(&self) -> &FeasibleSet {
        &self.feasible
    }

    /// Number of node masks covering each coordinate (diagonal of `Σ P_k`).
    pub fn coverage(&self) -> &[usize] {
        &self.coverage
    }

    /// Smallest eigenvalue of `Σ P_k`.
    pub fn lambda_p(&self) -> usize {
        self.coverage.iter().copied().min().unwrap_or(0)
    }

    /// Common smoothness constant `L_g = max_k L_{g_k}`.
    pub fn l_g(&self) -> f64 {
        self.losses.iter().map(|l| l.l_g).fold(0.0, f64::max)
    }

    pub fn l_h(&self) -> f64 {
        self.regularizer.l_h
    }

    fn check_vec(&self, what: &'static str, v: &Vector) -> Result<()> {
        check_dim(what, self.n, v.len())
    }

    fn check_family(&self, what: &'static str, vs: &[Vector]) -> Result<()> {
        check_dim(what, self.nodes(), vs.len())?;
        vs.iter().try_for_each(|v| self.check_vec(what, v))
    }

    /// `∇hˢ(z) + Σ_k ∇g_k(z)`
    pub fn smooth_gradient(&self, z: &Vector) -> Vector {
        let mut g = self.regularizer.smooth.gradient(z);
        for node in &self.losses {
            g += node.loss.gradient(z);
        }
        g
    }

    /// `hˢ(z) + hᶜ(z) + Σ_k g_k(z)`, or `+∞` outside the feasible set.
    pub fn objective(&self, z: &Vector) -> Result<f64> {
        self.check_vec("objective point", z)?;
        if !self.feasible.contains(z) {
            return Ok(f64::INFINITY);
        }
        Ok(self.regularizer.value(z) + self.losses.iter().map(|l| l.loss.value(z)).sum::<f64>())
    }

    /// Local augmented Lagrangian
    /// `ℓ_k = g_k(x_k) + ⟨P_k y_k, x_k − z⟩ + (ρ/2)‖P_k(x_k − z)‖²`.
    pub fn local_lagrangian(&self, k: usize, x: &Vector, z: &Vector, y: &Vector, rho: f64) -> f64 {
        let node = &self.losses[k];
        let diff = x - z;
        let inner: f64 = node.mask.indices().map(|j| y[j] * diff[j]).sum();
        node.loss.value(x) + inner + 0.5 * rho * node.mask.norm_sq(&diff)
    }

    /// Coupling part `u = h(z) + Σ_k ⟨P_k y_k, x_k − z⟩ + (ρ/2) Σ_k ‖P_k(x_k − z)‖²`.
    pub fn coupling(&self, xs: &[Vector], z: &Vector, ys: &[Vector], rho: f64) -> Result<f64> {
        self.check_lagrangian_args(xs, z, ys, rho)?;
        let mut u = self.regularizer.value(z);
        for (k, node) in self.losses.iter().enumerate() {
            let diff = &xs[k] - z;
            u += node.mask.indices().map(|j| ys[k][j] * diff[j]).sum::<f64>();
            u += 0.5 * rho * node.mask.norm_sq(&diff);
        }
        Ok(u)
    }

    fn check_lagrangian_args(&self, xs: &[Vector], z: &Vector, ys: &[Vector], rho: f64) -> Result<()> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho = {rho} must be positive")));
        }
        self.check_vec("z", z)?;
        self.check_family("x", xs)?;
        self.check_family("y", ys)
    }

    /// Augmented Lagrangian `L({x_k}, z, {y_k}) = h(z) + Σ_k ℓ_k`; `+∞` when z is infeasible.
    pub fn augmented_lagrangian(&self, xs: &[Vector], z: &Vector, ys: &[Vector], rho: f64) -> Result<f64> {
        self.check_lagrangian_args(xs, z, ys, rho)?;
        if !self.feasible.contains(z) {
            return Ok(f64::INFINITY);
        }
        let local: f64 = (0..self.nodes())
            .map(|k| self.local_lagrangian(k, &xs[k], z, &ys[k], rho))
            .sum();
        Ok(self.regularizer.value(z) + local)
    }

    /// `max_k ‖P_k(x_k − z)‖²`
    pub fn consensus_residual(&self, xs: &[Vector], z: &Vector) -> Result<f64> {
        self.check_vec("z", z)?;
        self.check_family("x", xs)?;
        Ok(self
            .losses
            .iter()
            .zip(xs)
            .map(|(node, x)| node.mask.norm_sq(&(x - z)))
            .fold(0.0, f64::max))
    }

    /// Sampled checks of the user-supplied constants and structural
    /// assumptions: gradient Lipschitz bounds, mask invariance of every
    /// `g_k`, and convexity of `hᶜ`.
    pub fn validate_constants(&self, samples: usize, radius: f64, seed: u64) -> ConstantsReport {
        let center = Vector::zeros(self.n);
        let full = CoordMask::full(self.n);
        let mut report = ConstantsReport {
            l_h_violation: lipschitz_violation(
                self.regularizer.smooth.as_ref(),
                &full,
                self.regularizer.l_h,
                &center,
                samples,
                radius,
                seed,
            ),
            ..ConstantsReport::default()
        };
        for (k, node) in self.losses.iter().enumerate() {
            let v = lipschitz_violation(
                node.loss.as_ref(),
                &node.mask,
                node.l_g,
                &center,
                samples,
                radius,
                seed.wrapping_add(k as u64 + 1),
            );
            report.l_g_violation = report.l_g_violation.max(v);
            let m = mask_invariance_violation(node.loss.as_ref(), &node.mask, samples, radius, seed ^ (k as u64));
            report.mask_violation = report.mask_violation.max(m);
        }
        report.convexity_violation =
            midpoint_convexity_violation(|z| self.regularizer.nonsmooth.value(z), self.n, samples, radius, seed);
        report
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantsReport {
    pub l_h_violation: f64,
    pub l_g_violation: f64,
    pub mask_violation: f64,
    pub convexity_violation: f64,
}

impl ConstantsReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.l_h_violation <= tol
            && self.l_g_violation <= tol
            && self.mask_violation <= tol
            && self.convexity_violation <= tol
    }
}

/// Worst relative excess of `‖∇f(x) − ∇f(x')‖` over `L‖P(x − x')‖` on random pairs.
pub fn lipschitz_violation(
    f: &dyn SmoothFn,
    mask: &CoordMask,
    lipschitz: f64,
    center: &Vector,
    samples: usize,
    radius: f64,
    seed: u64,
) -> f64 {
    let mut rng = rng::stream(seed, &[0x11]);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let a = mask.apply(&rng::in_cube(&mut rng, center, radius));
        let b = mask.apply(&rng::in_cube(&mut rng, center, radius));
        let lhs = (f.gradient(&a) - f.gradient(&b)).norm();
        let rhs = lipschitz * mask.norm_sq(&(&a - &b)).sqrt();
        worst = worst.max((lhs - rhs) / rhs.max(1.0));
    }
    worst.max(0.0)
}

/// Worst `|g(x) − g(P x)|` on random points.
pub fn mask_invariance_violation(f: &dyn SmoothFn, mask: &CoordMask, samples: usize, radius: f64, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, &[0x22]);
    let center = Vector::zeros(mask.dim());
    (0..samples)
        .map(|_| {
            let x = rng::in_cube(&mut rng, &center, radius);
            (f.value(&x) - f.value(&mask.apply(&x))).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst excess of `f((a+b)/2)` over `(f(a)+f(b))/2` on random pairs.
pub fn midpoint_convexity_violation(
    f: impl Fn(&Vector) -> f64,
    n: usize,
    samples: usize,
    radius: f64,
    seed: u64,
) -> f64 {
    let mut rng = rng::stream(seed, &[0x33]);
    let center = Vector::zeros(n);
    (0..samples)
        .map(|_| {
            let a = rng::in_cube(&mut rng, &center, radius);
            let b = rng::in_cube(&mut rng, &center, radius);
            let mid = (&a + &b) * 0.5;
            f(&mid) - 0.5 * (f(&a) + f(&b))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{LeastSquares, Quadratic};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn half_norm_problem(k: usize, n: usize) -> ConsensusProblem {
        let losses = (0..k)
            .map(|_| NodeLoss::new(Arc::new(Quadratic::half_norm_sq(n, 1.0)), CoordMask::full(n), 1.0))
            .collect();
        ConsensusProblem::new(n, losses, Regularizer::zero(n), FeasibleSet::Unconstrained).unwrap()
    }

    fn zero_problem(k: usize, n: usize, feasible: FeasibleSet) -> ConsensusProblem {
        let losses = (0..k)
            .map(|_| NodeLoss::new(Arc::new(Zero { dim: n }), CoordMask::full(n), 0.0))
            .collect();
        ConsensusProblem::new(n, losses, Regularizer::zero(n), feasible).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn objective_examples() {
        let p = half_norm_problem(2, 2);
        assert_eq!(p.objective(&v(&[1.0, 1.0])).unwrap(), 2.0);

        let boxed = zero_problem(3, 2, FeasibleSet::uniform_box(2, -1.0, 1.0).unwrap());
        assert_eq!(boxed.objective(&v(&[0.5, -0.2])).unwrap(), 0.0);
        assert_eq!(boxed.objective(&v(&[2.0, 0.0])).unwrap(), f64::INFINITY);

        assert!(matches!(
            p.objective(&v(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lagrangian_examples() {
        let p = zero_problem(1, 1, FeasibleSet::Unconstrained);
        let l = p
            .augmented_lagrangian(&[v(&[1.0])], &v(&[0.0]), &[v(&[1.0])], 2.0)
            .unwrap();
        assert_eq!(l, 2.0);

        // pure penalty: x = z + e_1, y = 0, rho = 2
        let p = zero_problem(2, 3, FeasibleSet::Unconstrained);
        let z = v(&[0.3, -0.1, 2.0]);
        let mut x0 = z.clone();
        x0[1] += 1.0;
        let ys = vec![Vector::zeros(3), Vector::zeros(3)];
        let l = p.augmented_lagrangian(&[x0, z.clone()], &z, &ys, 2.0).unwrap();
        assert!((l - 1.0).abs() < 1e-15);

        // consensus collapses to the objective
        let p = half_norm_problem(3, 2);
        let z = v(&[0.4, -1.5]);
        let ys = vec![v(&[3.0, 1.0]), v(&[-2.0, 0.5]), v(&[0.0, 7.0])];
        let xs = vec![z.clone(); 3];
        let l = p.augmented_lagrangian(&xs, &z, &ys, 5.0).unwrap();
        assert!((l - p.objective(&z).unwrap()).abs() < 1e-14);

        assert!(matches!(
            p.augmented_lagrangian(&xs, &z, &ys, 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn consensus_residual_examples() {
        let p = zero_problem(2, 2, FeasibleSet::Unconstrained);
        let z = v(&[1.0, 1.0]);
        assert_eq!(p.consensus_residual(&[z.clone(), z.clone()], &z).unwrap(), 0.0);
        assert_eq!(p.consensus_residual(&[v(&[2.0, 1.0]), z.clone()], &z).unwrap(), 1.0);
        assert_eq!(p.consensus_residual(&[v(&[2.0, 1.0]), v(&[1.0, 3.0])], &z).unwrap(), 4.0);
    }

    #[test]
    fn coverage_rules() {
        let n = 3;
        let masks = [
            CoordMask::from_indices(n, &[0, 1]).unwrap(),
            CoordMask::from_indices(n, &[1, 2]).unwrap(),
        ];
        let losses: Vec<_> = masks
            .iter()
            .map(|m| NodeLoss::new(Arc::new(Zero { dim: n }), m.clone(), 0.0))
            .collect();
        let p = ConsensusProblem::new(n, losses.clone(), Regularizer::zero(n), FeasibleSet::Unconstrained).unwrap();
        assert_eq!(p.coverage(), &[1, 2, 1]);
        assert_eq!(p.lambda_p(), 1);

        let uncovered = vec![losses[0].clone()];
        assert!(ConsensusProblem::new(n, uncovered, Regularizer::zero(n), FeasibleSet::Unconstrained).is_err());
        assert!(CoordMask::from_indices(2, &[2]).is_err());
        assert!(FeasibleSet::uniform_box(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn validator_catches_bad_constants() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let ls = Arc::new(LeastSquares { a, b: v(&[1.0, 1.0]) });
        let good = NodeLoss::new(ls.clone(), CoordMask::full(2), 4.0);
        let p = ConsensusProblem::new(2, vec![good], Regularizer::zero(2), FeasibleSet::Unconstrained).unwrap();
        assert!(p.validate_constants(200, 3.0, 1).passed(1e-12));

        let bad = NodeLoss::new(ls, CoordMask::full(2), 1.0);
        let p = ConsensusProblem::new(2, vec![bad], Regularizer::zero(2), FeasibleSet::Unconstrained).unwrap();
        assert!(p.validate_constants(200, 3.0, 1).l_g_violation > 0.1);
    }

    #[test]
    fn mask_invariance_detects_leaks() {
        let f = Quadratic::half_norm_sq(3, 1.0);
        let mask = CoordMask::from_indices(3, &[0]).unwrap();
        assert!(mask_invariance_violation(&f, &mask, 50, 1.0, 3) > 0.0);
        assert_eq!(mask_invariance_violation(&f, &CoordMask::full(3), 50, 1.0, 3), 0.0);
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vector> {
        prop::collection::vec(-5.0..5.0f64, n).prop_map(Vector::from_vec)
    }

    #[test]
    fn lambda_p_is_smallest_eigenvalue_of_mask_sum() {
        let n = 5;
        let sets: [&[usize]; 3] = [&[0, 1, 2], &[1, 2, 3, 4], &[0, 2, 4]];
        let losses: Vec<NodeLoss> = sets
            .iter()
            .map(|s| NodeLoss::new(Arc::new(Zero { dim: n }), CoordMask::from_indices(n, s).unwrap(), 0.0))
            .collect();
        let p = ConsensusProblem::new(n, losses, Regularizer::zero(n), FeasibleSet::Unconstrained).unwrap();
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for l in p.losses() {
            for j in l.mask.indices() {
                sum[(j, j)] += 1.0;
            }
        }
        let smallest = sum.symmetric_eigenvalues().min();
        assert_eq!(p.lambda_p() as f64, smallest);
        assert_eq!(p.lambda_p(), 1);
    }

    proptest! {
        #[test]
        fn mask_is_idempotent_and_self_adjoint(
            bits in prop::collection::vec(any::<bool>(), 6),
            u in arb_vec(6),
            w in arb_vec(6),
        ) {
            let idx: Vec<usize> = bits.iter().enumerate().filter_map(|(j, &b)| b.then_some(j)).collect();
            let m = CoordMask::from_indices(6, &idx).unwrap();
            prop_assert_eq!(m.apply(&m.apply(&u)), m.apply(&u));
            prop_assert!((m.apply(&u).dot(&w) - u.dot(&m.apply(&w))).abs() < 1e-12);
        }

        #[test]
        fn lagrangian_decompositions_agree(
            seed in any::<u64>(),
            rho in 0.1..50.0f64,
        ) {
            use rand::Rng;
            let n = 4;
            let mut rng = rng::stream(seed, &[]);
            let masks = [vec![0, 1], vec![1, 2, 3], vec![0, 3]];
            let losses: Vec<_> = masks.iter().map(|idx| {
                let mask = CoordMask::from_indices(n, idx).unwrap();
                let mut a = DMatrix::from_fn(3, n, |_, _| rng.random::<f64>() - 0.5);
                for j in 0..n {
                    if !mask.contains(j) {
                        a.column_mut(j).fill(0.0);
                    }
                }
                let b = Vector::from_fn(3, |_, _| rng.random::<f64>());
                NodeLoss::new(Arc::new(LeastSquares { a, b }), mask, 1.0)
            }).collect();
            let mut reg = Regularizer::zero(n);
            reg.smooth = Arc::new(Quadratic::half_norm_sq(n, 0.7));
            reg.nonsmooth = Nonsmooth::L1 { lambda: 0.3 };
            let p = ConsensusProblem::new(n, losses, reg, FeasibleSet::Unconstrained).unwrap();
            let c = Vector::zeros(n);
            let z = rng::in_cube(&mut rng, &c, 2.0);
            let xs: Vec<_> = (0..3).map(|_| rng::in_cube(&mut rng, &c, 2.0)).collect();
            let ys: Vec<_> = (0..3).map(|k| p.loss(k).mask.apply(&rng::in_cube(&mut rng, &c, 2.0))).collect();

            let full = p.augmented_lagrangian(&xs, &z, &ys, rho).unwrap();
            let via_local = p.regularizer().value(&z)
                + (0..3).map(|k| p.local_lagrangian(k, &xs[k], &z, &ys[k], rho)).sum::<f64>();
            let via_coupling = p.coupling(&xs, &z, &ys, rho).unwrap()
                + (0..3).map(|k| p.loss(k).loss.value(&xs[k])).sum::<f64>();
            let scale = full.abs().max(1.0);
            prop_assert!((full - via_local).abs() <= 1e-10 * scale);
            prop_assert!((full - via_coupling).abs() <= 1e-10 * scale);
        }
    }
}
