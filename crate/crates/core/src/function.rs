//! Differentiable scalar fields used as node losses, smooth regularizers and
//! the building blocks of surrogate models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;

/// A differentiable scalar field on ℝⁿ.
pub trait SmoothFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
}

pub type SharedFn = Arc<dyn SmoothFn>;

/// Central finite-difference gradient with per-coordinate step `h·max(1, |x_j|)`.
pub fn central_difference(f: &dyn SmoothFn, x: &Vector, h: f64) -> Vector {
    let mut probe = x.clone();
    let mut grad = Vector::zeros(x.len());
    for j in 0..x.len() {
        let step = h * x[j].abs().max(1.0);
        let orig = probe[j];
        probe[j] = orig + step;
        let up = f.value(&probe);
        probe[j] = orig - step;
        let down = f.value(&probe);
        probe[j] = orig;
        grad[j] = (up - down) / (2.0 * step);
    }
    grad
}

#[derive(Debug, Clone)]
pub struct Zero {
    pub dim: usize,
}

impl SmoothFn for Zero {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &Vector) -> f64 {
        0.0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
}

/// `⟨c, x⟩ + offset`
#[derive(Debug, Clone)]
pub struct Affine {
    pub coef: Vector,
    pub offset: f64,
}

impl SmoothFn for Affine {
    fn dim(&self) -> usize {
        self.coef.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.coef.dot(x) + self.offset
    }
    fn gradient(&self, _x: &Vector) -> Vector {
        self.coef.clone()
    }
}

/// `(scale/2)‖x − center‖² + offset`
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub scale: f64,
    pub center: Vector,
    pub offset: f64,
}

impl Quadratic {
    pub fn half_norm_sq(dim: usize, scale: f64) -> Self {
        Self {
            scale,
            center: Vector::zeros(dim),
            offset: 0.0,
        }
    }
}

impl SmoothFn for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * self.scale * (x - &self.center).norm_squared() + self.offset
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (x - &self.center) * self.scale
    }
}

/// `½‖A x − b‖²`
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub a: DMatrix<f64>,
    pub b: Vector,
}

impl LeastSquares {
    /// Largest eigenvalue of `AᵀA`, the gradient Lipschitz constant.
    pub fn smoothness(&self) -> f64 {
        let gram = self.a.transpose() * &self.a;
        gram.symmetric_eigenvalues().max().max(0.0)
    }
}

impl SmoothFn for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.a.transpose() * (&self.a * x - &self.b)
    }
}

/// Smooth ℓ0 surrogate `λ Σ_j z_j² / (z_j² + θ)`.
#[derive(Debug, Clone)]
pub struct SmoothL0 {
    pub dim: usize,
    pub lambda: f64,
    pub theta: f64,
}

impl SmoothL0 {
    /// `λ · max_s |d²/ds² s²/(s²+θ)| = 2λ/θ`, attained at s = 0.
    pub fn smoothness(&self) -> f64 {
        2.0 * self.lambda / self.theta
    }
}

impl SmoothFn for SmoothL0 {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        self.lambda
            * x.iter()
                .map(|&s| {
                    let s2 = s * s;
                    s2 / (s2 + self.theta)
                })
                .sum::<f64>()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.map(|s| {
            let d = s * s + self.theta;
            self.lambda * 2.0 * s * self.theta / (d * d)
        })
    }
}

/// `¼ Σ_j c_j x_j⁴`
#[derive(Debug, Clone)]
pub struct Quartic {
    pub coef: Vector,
}

impl SmoothFn for Quartic {
    fn dim(&self) -> usize {
        self.coef.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.25 * x
            .iter()
            .zip(self.coef.iter())
            .map(|(s, c)| c * s.powi(4))
            .sum::<f64>()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x.zip_map(&self.coef, |s, c| c * s.powi(3))
    }
}

/// `½‖M − u vᵀ‖²_F` with `x = [u; v]`, `u ∈ ℝ^rows`, `v ∈ ℝ^cols`.
#[derive(Debug, Clone)]
pub struct RankOneFactorization {
    pub target: DMatrix<f64>,
}

impl RankOneFactorization {
    fn split(&self, x: &Vector) -> (Vector, Vector) {
        let m = self.target.nrows();
        let u = x.rows(0, m).into_owned();
        let v = x.rows(m, self.target.ncols()).into_owned();
        (u, v)
    }

    fn residual(&self, u: &Vector, v: &Vector) -> DMatrix<f64> {
        u * v.transpose() - &self.target
    }
}

impl SmoothFn for RankOneFactorization {
    fn dim(&self) -> usize {
        self.target.nrows() + self.target.ncols()
    }
    fn value(&self, x: &Vector) -> f64 {
        let (u, v) = self.split(x);
        0.5 * self.residual(&u, &v).norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let (u, v) = self.split(x);
        let r = self.residual(&u, &v);
        let gu = &r * &v;
        let gv = r.transpose() * &u;
        let mut g = Vector::zeros(self.dim());
        g.rows_mut(0, u.len()).copy_from(&gu);
        g.rows_mut(u.len(), v.len()).copy_from(&gv);
        g
    }
}

#[derive(Debug, Clone)]
pub struct Sum(pub Vec<SharedFn>);

impl SmoothFn for Sum {
    fn dim(&self) -> usize {
        self.0.first().map_or(0, |f| f.dim())
    }
    fn value(&self, x: &Vector) -> f64 {
        self.0.iter().map(|f| f.value(x)).sum()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(x.len());
        for f in &self.0 {
            g += f.gradient(x);
        }
        g
    }
}

/// `plus(x) − minus(x)`
#[derive(Debug, Clone)]
pub struct Difference {
    pub plus: SharedFn,
    pub minus: SharedFn,
}

impl SmoothFn for Difference {
    fn dim(&self) -> usize {
        self.plus.dim()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.plus.value(x) - self.minus.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.plus.gradient(x) - self.minus.gradient(x)
    }
}

/// `f1(x) · f2(x)`
#[derive(Debug, Clone)]
pub struct Product {
    pub f1: SharedFn,
    pub f2: SharedFn,
}

impl SmoothFn for Product {
    fn dim(&self) -> usize {
        self.f1.dim()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.f1.value(x) * self.f2.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.f1.gradient(x) * self.f2.value(x) + self.f2.gradient(x) * self.f1.value(x)
    }
}

type ValueFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Ad-hoc function from a value closure and a gradient closure.
pub struct ClosureFn {
    dim: usize,
    label: &'static str,
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
}

impl ClosureFn {
    pub fn new(
        dim: usize,
        label: &'static str,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl fmt::Debug for ClosureFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureFn")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl SmoothFn for ClosureFn {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_fd(f: &dyn SmoothFn, x: &Vector) {
        let g = f.gradient(x);
        let fd = central_difference(f, x, 1e-6);
        let err = (&g - &fd).norm();
        assert!(err <= 1e-6 * g.norm().max(1.0), "{f:?}: {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Vector::from_vec(vec![0.3, -1.2, 0.7]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        assert_fd(
            &LeastSquares {
                a,
                b: Vector::from_vec(vec![1.0, -2.0]),
            },
            &x,
        );
        assert_fd(
            &SmoothL0 {
                dim: 3,
                lambda: 0.7,
                theta: 0.2,
            },
            &x,
        );
        assert_fd(
            &Quartic {
                coef: Vector::from_vec(vec![1.0, 2.0, 0.5]),
            },
            &x,
        );
        let p = Product {
            f1: Arc::new(Quadratic {
                scale: 1.0,
                center: Vector::from_vec(vec![0.1, 0.2, 0.3]),
                offset: 1.0,
            }),
            f2: Arc::new(Affine {
                coef: Vector::from_vec(vec![1.0, -1.0, 2.0]),
                offset: 3.0,
            }),
        };
        assert_fd(&p, &x);
        let bil = RankOneFactorization {
            target: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        };
        assert_fd(&bil, &x);
    }

    #[test]
    fn smooth_l0_curvature_bound() {
        let f = SmoothL0 {
            dim: 1,
            lambda: 1.5,
            theta: 0.3,
        };
        // second derivative by differencing the gradient on a fine grid
        let mut worst: f64 = 0.0;
        let h = 1e-5;
        for i in -3000..=3000 {
            let s = i as f64 * 1e-3;
            let up = f.gradient(&Vector::from_element(1, s + h))[0];
            let down = f.gradient(&Vector::from_element(1, s - h))[0];
            worst = worst.max(((up - down) / (2.0 * h)).abs());
        }
        assert!((worst - f.smoothness()).abs() < 1e-4 * f.smoothness());
    }
}
