//! Built-in benchmark instances, one per surrogate family, and a grid
//! oracle for stationary points of tiny problems.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::decentralized::Graph;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::function::{
    Affine, LeastSquares, Quadratic, Quartic, RankOneFactorization, SharedFn, SmoothFn, SmoothL0, Sum, Vector,
};
use crate::problem::{ConsensusProblem, CoordMask, FeasibleSet, NodeLoss, Nonsmooth, Regularizer};
use crate::rng;
use crate::surrogates::{ProductBounds, SurrogateSpec};

/// A named problem instance with its optimum when one is known in closed form.
#[derive(Debug, Clone)]
pub struct Recipe {
    pub name: String,
    pub problem: ConsensusProblem,
    pub optimum: Option<Vector>,
}

/// `Σ_j (w_j/2)(x_j − c_j)²`
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    pub weights: Vector,
    pub center: Vector,
}

impl SmoothFn for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (x - &self.center).component_mul(&(x - &self.center)).dot(&self.weights)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (x - &self.center).component_mul(&self.weights)
    }
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn normal_vector(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn uniform_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn ensure_sizes(nodes: usize, dim: usize) -> Result<()> {
    if nodes == 0 || dim == 0 {
        return Err(Error::InvalidParameter(format!("need K, n >= 1 (got K={nodes}, n={dim})")));
    }
    Ok(())
}

fn ridge(n: usize, mu: f64) -> Regularizer {
    Regularizer {
        smooth: Arc::new(Quadratic::half_norm_sq(n, mu)),
        l_h: mu,
        ..Regularizer::zero(n)
    }
}

/// `Σ_k ½‖A_k z − b_k‖² + (μ/2)‖z‖²` with the optimum from the normal equations.
pub fn convex_quadratic_from_data(a: Vec<DMatrix<f64>>, b: Vec<Vector>, mu: f64) -> Result<Recipe> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidParameter("need one right-hand side per node".into()));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge weight {mu}")));
    }
    let n = a[0].ncols();
    let mut gram = DMatrix::identity(n, n) * mu;
    let mut rhs = Vector::zeros(n);
    let mut losses = Vec::with_capacity(a.len());
    for (ak, bk) in a.into_iter().zip(b) {
        if ak.ncols() != n || ak.nrows() != bk.len() {
            return Err(Error::DimensionMismatch {
                what: "least-squares data",
                expected: n,
                found: ak.ncols(),
            });
        }
        gram += ak.transpose() * &ak;
        rhs += ak.transpose() * &bk;
        let ls = LeastSquares { a: ak, b: bk };
        let l_g = ls.smoothness();
        losses.push(NodeLoss::new(Arc::new(ls), CoordMask::full(n), l_g));
    }
    let optimum = gram.lu().solve(&rhs);
    let problem = ConsensusProblem::new(n, losses, ridge(n, mu), FeasibleSet::Unconstrained)?;
    Ok(Recipe {
        name: "convex_quadratic".into(),
        problem,
        optimum,
    })
}

/// Random well-conditioned `A_k = I + 0.3 G/√n`, `b_k ~ N(0, I)`, `μ = 0.1`.
pub fn convex_quadratic_consensus(nodes: usize, dim: usize, seed: u64) -> Result<Recipe> {
    ensure_sizes(nodes, dim)?;
    let mut a = Vec::with_capacity(nodes);
    let mut b = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut r = rng::stream(seed, &[1, k as u64]);
        let g = normal_matrix(&mut r, dim, dim);
        a.push(DMatrix::identity(dim, dim) + g * (0.3 / (dim as f64).sqrt()));
        b.push(normal_vector(&mut r, dim));
    }
    convex_quadratic_from_data(a, b, 0.1)
}

/// Separable instance in general form on `graph`: node `k` holds
/// `Σ_{j∈N_k} (a_kj/2)(x_j − c_kj)²` and `h = (μ/2)‖z‖²`, `μ = 0.1`.
pub fn graph_quadratic_consensus(graph: &Graph, seed: u64) -> Result<Recipe> {
    let kk = graph.nodes();
    let mu = 0.1;
    let mut num = Vector::zeros(kk);
    let mut den = Vector::from_element(kk, mu);
    let mut losses = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut r = rng::stream(seed, &[2, k as u64]);
        let mask = graph.mask(k);
        let mut weights = Vector::zeros(kk);
        let mut center = Vector::zeros(kk);
        for j in mask.indices() {
            weights[j] = r.random_range(0.5..2.0);
            center[j] = r.sample::<f64, _>(StandardNormal);
            num[j] += weights[j] * center[j];
            den[j] += weights[j];
        }
        let l_g = weights.max();
        losses.push(NodeLoss::new(Arc::new(DiagonalQuadratic { weights, center }), mask, l_g));
    }
    let problem = ConsensusProblem::new(kk, losses, ridge(kk, mu), FeasibleSet::Unconstrained)?;
    Ok(Recipe {
        name: "graph_quadratic".into(),
        problem,
        optimum: Some(num.component_div(&den)),
    })
}

/// Least-squares nodes with the smooth ℓ0 regularizer `λ Σ z_j²/(z_j² + θ)`
/// and optional `l1 ‖z‖₁`. With `λ = l1 = 0` the optimum is returned.
pub fn nonconvex_regression(nodes: usize, dim: usize, theta: f64, lambda: f64, l1: f64, seed: u64) -> Result<Recipe> {
    ensure_sizes(nodes, dim)?;
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if !(lambda >= 0.0) || !(l1 >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda={lambda}, l1={l1} must be >= 0")));
    }
    let rows = dim + 2;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);
    let mut losses = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut r = rng::stream(seed, &[3, k as u64]);
        let a = normal_matrix(&mut r, rows, dim) / (rows as f64).sqrt();
        let b = normal_vector(&mut r, rows);
        gram += a.transpose() * &a;
        rhs += a.transpose() * &b;
        let ls = LeastSquares { a, b };
        let l_g = ls.smoothness();
        losses.push(NodeLoss::new(Arc::new(ls), CoordMask::full(dim), l_g));
    }
    let l0 = SmoothL0 { dim, lambda, theta };
    let regularizer = Regularizer {
        l_h: l0.smoothness(),
        smooth: Arc::new(l0),
        nonsmooth: if l1 > 0.0 { Nonsmooth::L1 { lambda: l1 } } else { Nonsmooth::Zero },
        separable: true,
        surrogate: SurrogateSpec::Linear,
    };
    let optimum = if lambda == 0.0 && l1 == 0.0 { gram.lu().solve(&rhs) } else { None };
    Ok(Recipe {
        name: "nonconvex_regression".into(),
        problem: ConsensusProblem::new(dim, losses, regularizer, FeasibleSet::Unconstrained)?,
        optimum,
    })
}

/// `g_k = ¼Σ c_kj x_j⁴ + ⟨q_k, x⟩ − ½‖x‖²` on `[−1, 1]ⁿ`, split as
/// (quartic + linear) minus quadratic.
pub fn dc_problem(nodes: usize, dim: usize, seed: u64) -> Result<Recipe> {
    ensure_sizes(nodes, dim)?;
    let curv = 1.0;
    let mut losses = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut r = rng::stream(seed, &[4, k as u64]);
        let coef = uniform_vector(&mut r, dim, 0.5, 1.5);
        let q = uniform_vector(&mut r, dim, -0.5, 0.5);
        // Hessian on the box is diag(3 c_j x_j² − 1)
        let c_max = coef.max();
        let plus: SharedFn = Arc::new(Sum(vec![
            Arc::new(Quartic { coef }),
            Arc::new(Affine { coef: q, offset: 0.0 }),
        ]));
        let minus: SharedFn = Arc::new(Quadratic::half_norm_sq(dim, curv));
        let loss: SharedFn = Arc::new(crate::function::Difference {
            plus: plus.clone(),
            minus: minus.clone(),
        });
        let l_g = (3.0 * c_max - curv).max(curv);
        losses.push(NodeLoss::new(loss, CoordMask::full(dim), l_g).with_surrogate(
            SurrogateSpec::DifferenceOfConvex {
                plus,
                minus,
                curvature: 3.0 * c_max,
            },
        ));
    }
    Ok(Recipe {
        name: "dc".into(),
        problem: ConsensusProblem::new(
            dim,
            losses,
            Regularizer::zero(dim),
            FeasibleSet::uniform_box(dim, -1.0, 1.0)?,
        )?,
        optimum: None,
    })
}

/// Bound constants of `½‖x − c‖² + 1` over `[−1, 1]ⁿ` with `c ∈ [−½, ½]ⁿ`.
pub fn product_factor_bounds(dim: usize) -> ProductBounds {
    let n = dim as f64;
    ProductBounds {
        g: 1.125 * n + 1.0,
        l: 1.5 * n.sqrt(),
        g_prime: 1.5 * n.sqrt(),
        l_prime: 1.0,
    }
}

/// `g_k = f_1 f_2`, `f_i = ½‖x − c_i‖² + 1`, on `[−1, 1]ⁿ`.
pub fn product_problem(nodes: usize, dim: usize, seed: u64) -> Result<Recipe> {
    ensure_sizes(nodes, dim)?;
    let bounds = product_factor_bounds(dim);
    // ∇²(f1 f2) = f1 I + f2 I + ∇f1∇f2ᵀ + ∇f2∇f1ᵀ
    let l_g = 2.0 * bounds.g + 2.0 * bounds.g_prime * bounds.g_prime;
    let mut losses = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut r = rng::stream(seed, &[5, k as u64]);
        let mut factor = || -> SharedFn {
            Arc::new(Quadratic {
                scale: 1.0,
                center: uniform_vector(&mut r, dim, -0.5, 0.5),
                offset: 1.0,
            })
        };
        let (f1, f2) = (factor(), factor());
        let loss: SharedFn = Arc::new(crate::function::Product {
            f1: f1.clone(),
            f2: f2.clone(),
        });
        losses.push(
            NodeLoss::new(loss, CoordMask::full(dim), l_g).with_surrogate(SurrogateSpec::Product { f1, f2, bounds }),
        );
    }
    Ok(Recipe {
        name: "product".into(),
        problem: ConsensusProblem::new(
            dim,
            losses,
            Regularizer::zero(dim),
            FeasibleSet::uniform_box(dim, -1.0, 1.0)?,
        )?,
        optimum: None,
    })
}

/// Two nodes fitting `½‖M_k − u vᵀ‖²`, `z = [u; v] ∈ [−2, 2]^{2m}`, with the
/// block-convex surrogate over the blocks `u | v`. Only `r = 1`, `m ≤ 4`.
pub fn bilinear_factorization(m: usize, r: usize, seed: u64) -> Result<Recipe> {
    if r != 1 {
        return Err(Error::InvalidParameter(format!("bilinear recipe supports rank 1 only, got {r}")));
    }
    if m == 0 || m > 4 {
        return Err(Error::InvalidParameter(format!("bilinear recipe needs 1 <= m <= 4, got {m}")));
    }
    let targets = (0..2)
        .map(|k| {
            let mut g = rng::stream(seed, &[6, k as u64]);
            let u = normal_vector(&mut g, m);
            let v = normal_vector(&mut g, m);
            &u * v.transpose() + normal_matrix(&mut g, m, m) * 0.1
        })
        .collect();
    bilinear_from_targets(targets)
}

/// Bilinear recipe with explicit targets (all `m × m`).
pub fn bilinear_from_targets(targets: Vec<DMatrix<f64>>) -> Result<Recipe> {
    let m = targets.first().map_or(0, |t| t.nrows());
    if m == 0 || targets.iter().any(|t| t.nrows() != m || t.ncols() != m) {
        return Err(Error::InvalidParameter("targets must be non-empty square matrices of one size".into()));
    }
    let n = 2 * m;
    let radius: f64 = 2.0;
    // ‖u‖², ‖v‖² ≤ m r² on the box; the cross block is R + u vᵀ
    let block = m as f64 * radius * radius;
    let blocks = vec![(0..m).collect::<Vec<_>>(), (m..n).collect()];
    let losses = targets
        .into_iter()
        .map(|t| {
            let l_g = block + 2.0 * block + t.norm();
            NodeLoss::new(Arc::new(RankOneFactorization { target: t }), CoordMask::full(n), l_g)
                .with_surrogate(SurrogateSpec::BlockConvex { blocks: blocks.clone() })
        })
        .collect();
    Ok(Recipe {
        name: "bilinear".into(),
        problem: ConsensusProblem::new(
            n,
            losses,
            Regularizer::zero(n),
            FeasibleSet::uniform_box(n, -radius, radius)?,
        )?,
        optimum: None,
    })
}

/// Parameters for [`build_recipe`]; unused fields are ignored by a recipe.
#[derive(Debug, Clone)]
pub struct RecipeParams {
    pub nodes: usize,
    pub dim: usize,
    pub seed: u64,
    pub theta: f64,
    pub lambda: f64,
    pub l1: f64,
    pub rank: usize,
    /// Graph for `graph_quadratic`; a path on `nodes` vertices when absent.
    pub graph: Option<Graph>,
}

impl Default for RecipeParams {
    fn default() -> Self {
        Self {
            nodes: 4,
            dim: 10,
            seed: 0,
            theta: 0.5,
            lambda: 0.1,
            l1: 0.0,
            rank: 1,
            graph: None,
        }
    }
}

pub const RECIPE_NAMES: [&str; 6] = [
    "convex_quadratic",
    "nonconvex_regression",
    "dc",
    "product",
    "bilinear",
    "graph_quadratic",
];

pub fn build_recipe(name: &str, p: &RecipeParams) -> Result<Recipe> {
    match name {
        "convex_quadratic" => convex_quadratic_consensus(p.nodes, p.dim, p.seed),
        "nonconvex_regression" => nonconvex_regression(p.nodes, p.dim, p.theta, p.lambda, p.l1, p.seed),
        "dc" => dc_problem(p.nodes, p.dim, p.seed),
        "product" => product_problem(p.nodes, p.dim, p.seed),
        "bilinear" => bilinear_factorization(p.dim, p.rank, p.seed),
        "graph_quadratic" => {
            let graph = match &p.graph {
                Some(g) => g.clone(),
                None => Graph::path(p.nodes)?,
            };
            graph_quadratic_consensus(&graph, p.seed)
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown recipe {other:?}; expected one of {}",
            RECIPE_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryScan {
    pub points: Vec<Vector>,
    pub warning: Option<String>,
}

/// Grid scan of `ϑ` over the box `[lower, upper]` (intersected with the
/// feasible set). Keeps grid points where `ϑ` is a local minimum over the
/// neighboring grid points and below `(L·step)²`, `L = L_h + K L_g`.
pub fn brute_force_stationary(problem: &ConsensusProblem, lower: &Vector, upper: &Vector, step: f64) -> Result<StationaryScan> {
    let n = problem.dim();
    if n > 2 {
        return Err(Error::InvalidParameter(format!("grid oracle supports dimension <= 2, got {n}")));
    }
    crate::error::check_dim("grid lower", n, lower.len())?;
    crate::error::check_dim("grid upper", n, upper.len())?;
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step {step}")));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            if lower[j] > upper[j] {
                return Vec::new();
            }
            let count = ((upper[j] - lower[j]) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| lower[j] + i as f64 * step).collect()
        })
        .collect();
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    let alpha = diagnostics::default_step(problem);
    let lip = problem.l_h() + problem.nodes() as f64 * problem.l_g();
    let threshold = (lip * step).powi(2);

    let point = |flat: usize| -> Vector {
        let mut rest = flat;
        Vector::from_fn(n, |j, _| {
            let i = rest % dims[j];
            rest /= dims[j];
            axes[j][i]
        })
    };
    let mut theta = vec![f64::NAN; total];
    let mut feasible = 0usize;
    for (flat, th) in theta.iter_mut().enumerate() {
        let z = point(flat);
        if problem.feasible().contains(&z) {
            *th = diagnostics::stationarity(problem, &z, alpha)?;
            feasible += 1;
        }
    }
    if feasible == 0 {
        return Ok(StationaryScan {
            points: Vec::new(),
            warning: Some("no feasible grid points in the search region".into()),
        });
    }

    let mut points = Vec::new();
    for flat in 0..total {
        let th = theta[flat];
        if th.is_nan() || th > threshold {
            continue;
        }
        let mut idx = Vec::with_capacity(n);
        let mut rest = flat;
        for &d in &dims {
            idx.push(rest % d);
            rest /= d;
        }
        let mut is_min = true;
        for offset in 0..3usize.pow(n as u32) {
            let mut o = offset;
            let mut nb = 0usize;
            let mut stride = 1usize;
            let mut inside = true;
            let mut centre = true;
            for (j, &d) in dims.iter().enumerate() {
                let delta = (o % 3) as isize - 1;
                o /= 3;
                centre &= delta == 0;
                let i = idx[j] as isize + delta;
                if i < 0 || i >= d as isize {
                    inside = false;
                    break;
                }
                nb += i as usize * stride;
                stride *= d;
            }
            if !inside || centre {
                continue;
            }
            if theta[nb] < th {
                is_min = false;
                break;
            }
        }
        if is_min {
            points.push(point(flat));
        }
    }
    Ok(StationaryScan { points, warning: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{central_difference, ClosureFn};
    use proptest::prelude::*;

    fn rel_err(a: &Vector, b: &Vector) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn identity_least_squares_has_zero_optimum() {
        let r = convex_quadratic_from_data(vec![DMatrix::identity(3, 3)], vec![Vector::zeros(3)], 0.0).unwrap();
        assert_eq!(r.optimum.unwrap(), Vector::zeros(3));
    }

    #[test]
    fn convex_optimum_matches_dense_solve() {
        let r = convex_quadratic_consensus(2, 5, 11).unwrap();
        let z = r.optimum.clone().unwrap();
        // independent oracle: the gradient of the full objective vanishes at z
        let grad = r.problem.smooth_gradient(&z);
        assert!(grad.norm() < 1e-10, "{}", grad.norm());
        let f = r.problem.objective(&z).unwrap();
        let mut g = rng::stream(99, &[]);
        for _ in 0..20 {
            let dz = uniform_vector(&mut g, 5, -0.1, 0.1);
            assert!(r.problem.objective(&(&z + dz)).unwrap() >= f);
        }
    }

    #[test]
    fn builders_are_deterministic() {
        let a = convex_quadratic_consensus(3, 4, 5).unwrap();
        let b = convex_quadratic_consensus(3, 4, 5).unwrap();
        assert_eq!(a.optimum, b.optimum);
        let c = convex_quadratic_consensus(3, 4, 6).unwrap();
        assert_ne!(a.optimum, c.optimum);
    }

    #[test]
    fn regression_without_regularizer_is_convex_recipe() {
        let r = nonconvex_regression(3, 4, 0.5, 0.0, 0.0, 8).unwrap();
        let z = r.optimum.clone().unwrap();
        assert!(r.problem.smooth_gradient(&z).norm() < 1e-10);
        assert_eq!(r.problem.l_h(), 0.0);
        assert!(nonconvex_regression(3, 4, 0.0, 0.1, 0.0, 8).is_err());
    }

    #[test]
    fn smooth_l0_limits_and_gradient() {
        let r = nonconvex_regression(2, 6, 0.3, 0.7, 0.0, 1).unwrap();
        let h = &r.problem.regularizer().smooth;
        assert_eq!(h.value(&Vector::zeros(6)), 0.0);
        let far = Vector::from_element(6, 1e3 * 0.3f64.sqrt());
        assert!((h.value(&far) - 0.7 * 6.0).abs() < 1e-5);
        let mut g = rng::stream(4, &[]);
        for _ in 0..100 {
            let z = uniform_vector(&mut g, 6, -2.0, 2.0);
            assert!(rel_err(&h.gradient(&z), &central_difference(h.as_ref(), &z, 1e-6)) < 1e-5);
        }
    }

    #[test]
    fn dc_gradient_matches_finite_differences() {
        let r = dc_problem(2, 3, 2).unwrap();
        let mut g = rng::stream(5, &[]);
        for node in r.problem.losses() {
            for _ in 0..100 {
                let x = uniform_vector(&mut g, 3, -1.0, 1.0);
                let fd = central_difference(node.loss.as_ref(), &x, 1e-6);
                assert!(rel_err(&node.loss.gradient(&x), &fd) < 1e-5);
            }
        }
    }

    #[test]
    fn product_bounds_hold_on_grid() {
        let n = 2;
        let b = product_factor_bounds(n);
        let r = product_problem(3, n, 9).unwrap();
        let SurrogateSpec::Product { f1, f2, .. } = &r.problem.loss(0).surrogate else {
            panic!("product recipe must use the product surrogate");
        };
        // grid maximization oracle over the box
        let steps = 41;
        let grid: Vec<Vector> = (0..steps * steps)
            .map(|i| {
                let s = |t: usize| -1.0 + 2.0 * t as f64 / (steps - 1) as f64;
                Vector::from_vec(vec![s(i % steps), s(i / steps)])
            })
            .collect();
        for f in [f1, f2] {
            let g_max = grid.iter().map(|x| f.value(x).abs()).fold(0.0, f64::max);
            let gp_max = grid.iter().map(|x| f.gradient(x).norm()).fold(0.0, f64::max);
            assert!(g_max <= b.g + 1e-12 && g_max > 0.5 * b.g, "G {g_max} vs {}", b.g);
            assert!(gp_max <= b.g_prime + 1e-12, "G' {gp_max} vs {}", b.g_prime);
            // Lipschitz of f is bounded by max ‖∇f‖; of ∇f by the Hessian, which is I
            assert!(gp_max <= b.l + 1e-12);
            let mut lp: f64 = 0.0;
            for w in grid.windows(2) {
                let d = (&w[0] - &w[1]).norm();
                if d > 0.0 {
                    lp = lp.max((f.gradient(&w[0]) - f.gradient(&w[1])).norm() / d);
                }
            }
            assert!(lp <= b.l_prime + 1e-9);
        }
    }

    #[test]
    fn bilinear_zero_target_stationary_at_origin() {
        let r = bilinear_from_targets(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)]).unwrap();
        let z = Vector::zeros(4);
        let theta = diagnostics::stationarity(&r.problem, &z, diagnostics::default_step(&r.problem)).unwrap();
        assert_eq!(theta, 0.0);
        assert!(bilinear_factorization(3, 2, 0).is_err());
        assert!(bilinear_factorization(5, 1, 0).is_err());
        assert_eq!(bilinear_factorization(3, 1, 0).unwrap().problem.dim(), 6);
    }

    #[test]
    fn recipe_constants_pass_validator() {
        let p = RecipeParams {
            nodes: 3,
            dim: 3,
            ..RecipeParams::default()
        };
        for name in RECIPE_NAMES {
            let r = build_recipe(name, &p).unwrap();
            let radius = match name {
                "bilinear" => 2.0,
                "dc" | "product" => 1.0,
                _ => 5.0,
            };
            let report = r.problem.validate_constants(200, radius, 17);
            assert!(report.passed(1e-9), "{name}: {report:?}");
        }
        assert!(build_recipe("nope", &p).is_err());
    }

    #[test]
    fn graph_optimum_zeroes_gradient() {
        let g = Graph::path(5).unwrap();
        let r = graph_quadratic_consensus(&g, 1).unwrap();
        assert!(r.problem.smooth_gradient(r.optimum.as_ref().unwrap()).norm() < 1e-12);
    }

    fn double_well() -> ConsensusProblem {
        let f = ClosureFn::new(
            1,
            "double_well",
            |x: &Vector| (x[0] * x[0] - 1.0).powi(2),
            |x: &Vector| Vector::from_element(1, 4.0 * x[0] * (x[0] * x[0] - 1.0)),
        );
        ConsensusProblem::new(
            1,
            vec![NodeLoss::new(Arc::new(f), CoordMask::full(1), 44.0)],
            Regularizer::zero(1),
            FeasibleSet::uniform_box(1, -2.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grid_oracle_finds_double_well_roots() {
        let p = double_well();
        let scan = brute_force_stationary(&p, &Vector::from_element(1, -2.0), &Vector::from_element(1, 2.0), 1e-3).unwrap();
        assert!(scan.warning.is_none());
        // analytic roots of 4z(z² − 1)
        let roots = [-1.0, 0.0, 1.0];
        assert_eq!(scan.points.len(), 3, "{:?}", scan.points);
        for (p, r) in scan.points.iter().zip(roots) {
            assert!((p[0] - r).abs() <= 1e-3);
        }
    }

    #[test]
    fn grid_oracle_convex_single_point() {
        let r = convex_quadratic_from_data(
            vec![DMatrix::identity(2, 2)],
            vec![Vector::from_vec(vec![0.3, -0.4])],
            0.0,
        )
        .unwrap();
        let scan = brute_force_stationary(&r.problem, &Vector::from_element(2, -1.0), &Vector::from_element(2, 1.0), 0.05).unwrap();
        assert_eq!(scan.points.len(), 1);
        assert!((&scan.points[0] - r.optimum.unwrap()).norm() < 1e-9);
    }

    #[test]
    fn grid_oracle_empty_region_warns() {
        let p = double_well();
        let scan = brute_force_stationary(&p, &Vector::from_element(1, 3.0), &Vector::from_element(1, 4.0), 0.1).unwrap();
        assert!(scan.points.is_empty());
        assert!(scan.warning.is_some());
        let big = convex_quadratic_consensus(1, 3, 0).unwrap();
        assert!(brute_force_stationary(&big.problem, &Vector::zeros(3), &Vector::zeros(3), 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn recipe_gradients_match_finite_differences(seed in 0u64..1000) {
            let p = RecipeParams { nodes: 2, dim: 3, seed, ..RecipeParams::default() };
            for name in RECIPE_NAMES {
                let r = build_recipe(name, &p).unwrap();
                let mut g = rng::stream(seed, &[77]);
                let x = uniform_vector(&mut g, r.problem.dim(), -1.0, 1.0);
                for node in r.problem.losses() {
                    let fd = central_difference(node.loss.as_ref(), &x, 1e-6);
                    prop_assert!(rel_err(&node.loss.gradient(&x), &fd) < 1e-5, "{}", name);
                }
            }
        }
    }
}
