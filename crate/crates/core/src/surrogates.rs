//! Convex surrogate models `g̃(·; x̄)` of smooth (possibly non-convex)
//! functions, and sampling-based verification of the properties the solver
//! relies on:
//!
//! * upper bound with offset: `g(x) − g̃(x; x̄) ≤ (L/2)‖P(x − x̄)‖² + ω(x̄)`,
//!   with equality at `x = x̄`;
//! * tangency: `∇g̃(x̄; x̄) = ∇g(x̄)`;
//! * gradient Lipschitz: `‖∇g̃(x; x̄) − ∇g̃(x'; x̄)‖ ≤ L‖P(x − x')‖`;
//! * convexity of `x ↦ g̃(x; x̄)`.
//!
//! `ω(x̄)` is always evaluated as `g(x̄) − g̃(x̄; x̄)`; the closed forms of each
//! family are kept only as a cross-check.

use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::function::{Difference, Product, SharedFn, SmoothFn, Vector};
use crate::problem::{CoordMask, FeasibleSet};
use crate::rng;

/// Bound constants for a product `f1·f2` of bounded smooth convex factors:
/// `|f_i| ≤ G`, `|f_i(x) − f_i(x')| ≤ L‖x − x'‖`, `‖∇f_i‖ ≤ G'`,
/// `‖∇f_i(x) − ∇f_i(x')‖ ≤ L'‖x − x'‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductBounds {
    pub g: f64,
    pub l: f64,
    pub g_prime: f64,
    pub l_prime: f64,
}

impl ProductBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("G", self.g), ("L", self.l), ("G'", self.g_prime), ("L'", self.l_prime)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "product surrogate bound {name} is missing or invalid ({v})"
                )));
            }
        }
        Ok(())
    }

    /// `max{4L'G, 2L²}`
    pub fn curvature(&self) -> f64 {
        (4.0 * self.l_prime * self.g).max(2.0 * self.l * self.l)
    }
}

/// Which surrogate family a node loss (or `hˢ`) is approximated with.
#[derive(Debug, Clone)]
pub enum SurrogateSpec {
    /// `g(x̄) + ⟨∇g(x̄), x⟩`
    Linear,
    /// `g = plus − minus`, both convex; `curvature` bounds the gradient
    /// Lipschitz constant of `plus`.
    DifferenceOfConvex {
        plus: SharedFn,
        minus: SharedFn,
        curvature: f64,
    },
    /// `g = f1·f2`
    Product {
        f1: SharedFn,
        f2: SharedFn,
        bounds: ProductBounds,
    },
    /// `g` convex in each block of coordinates separately.
    BlockConvex { blocks: Vec<Vec<usize>> },
}

impl SurrogateSpec {
    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::DifferenceOfConvex { .. } => "dc",
            Self::Product { .. } => "product",
            Self::BlockConvex { .. } => "block_convex",
        }
    }

    /// Anchor the surrogate of `base` (with smoothness `l_g`) at `anchor`.
    pub fn build(&self, base: &SharedFn, l_g: f64, anchor: &Vector, mask: &CoordMask) -> Result<SurrogateModel> {
        let model = match self {
            Self::Linear => linear_surrogate(base.clone(), l_g, anchor)?,
            Self::DifferenceOfConvex { plus, minus, curvature } => {
                dc_surrogate(plus.clone(), minus.clone(), *curvature, anchor)?
            }
            Self::Product { f1, f2, bounds } => product_surrogate(f1.clone(), f2.clone(), Some(*bounds), anchor)?,
            Self::BlockConvex { blocks } => block_convex_surrogate(base.clone(), l_g, blocks.clone(), anchor)?,
        };
        Ok(model.with_mask(mask.clone()))
    }
}

#[derive(Debug, Clone)]
enum Family {
    Linear {
        base: SharedFn,
        anchor_value: f64,
        anchor_grad: Vector,
    },
    Dc {
        plus: SharedFn,
        minus: SharedFn,
        base: SharedFn,
        minus_value: f64,
        minus_grad: Vector,
    },
    Product {
        f1: SharedFn,
        f2: SharedFn,
        base: SharedFn,
        f1_bar: f64,
        f2_bar: f64,
    },
    BlockConvex {
        base: SharedFn,
        blocks: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Linear,
    Dc,
    Product,
    BlockConvex,
}

/// A surrogate anchored at a fixed point `x̄`.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    family: Family,
    anchor: Vector,
    curvature: f64,
    mask: CoordMask,
    domain: FeasibleSet,
}

fn finite_vec(what: &'static str, v: &Vector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn linear_surrogate(base: SharedFn, curvature: f64, anchor: &Vector) -> Result<SurrogateModel> {
    check_dim("surrogate anchor", base.dim(), anchor.len())?;
    let anchor_grad = base.gradient(anchor);
    finite_vec("linear surrogate gradient", &anchor_grad)?;
    let anchor_value = base.value(anchor);
    Ok(SurrogateModel::new(
        Family::Linear {
            base,
            anchor_value,
            anchor_grad,
        },
        anchor,
        curvature,
    ))
}

pub fn dc_surrogate(plus: SharedFn, minus: SharedFn, curvature: f64, anchor: &Vector) -> Result<SurrogateModel> {
    check_dim("surrogate anchor", plus.dim(), anchor.len())?;
    check_dim("dc split", plus.dim(), minus.dim())?;
    let minus_grad = minus.gradient(anchor);
    finite_vec("dc surrogate gradient", &minus_grad)?;
    let minus_value = minus.value(anchor);
    let base: SharedFn = Arc::new(Difference {
        plus: plus.clone(),
        minus: minus.clone(),
    });
    Ok(SurrogateModel::new(
        Family::Dc {
            plus,
            minus,
            base,
            minus_value,
            minus_grad,
        },
        anchor,
        curvature,
    ))
}

pub fn product_surrogate(
    f1: SharedFn,
    f2: SharedFn,
    bounds: Option<ProductBounds>,
    anchor: &Vector,
) -> Result<SurrogateModel> {
    let bounds = bounds.ok_or_else(|| Error::InvalidParameter("product surrogate needs bound constants".into()))?;
    bounds.validate()?;
    check_dim("surrogate anchor", f1.dim(), anchor.len())?;
    check_dim("product factors", f1.dim(), f2.dim())?;
    let f1_bar = f1.value(anchor);
    let f2_bar = f2.value(anchor);
    if !f1_bar.is_finite() || !f2_bar.is_finite() {
        return Err(Error::NonFinite("product surrogate factors"));
    }
    let base: SharedFn = Arc::new(Product {
        f1: f1.clone(),
        f2: f2.clone(),
    });
    Ok(SurrogateModel::new(
        Family::Product {
            f1,
            f2,
            base,
            f1_bar,
            f2_bar,
        },
        anchor,
        bounds.curvature(),
    ))
}

pub fn block_convex_surrogate(
    base: SharedFn,
    curvature: f64,
    blocks: Vec<Vec<usize>>,
    anchor: &Vector,
) -> Result<SurrogateModel> {
    let n = base.dim();
    check_dim("surrogate anchor", n, anchor.len())?;
    let mut seen = vec![false; n];
    for &j in blocks.iter().flatten() {
        if j >= n || seen[j] {
            return Err(Error::InvalidParameter(format!(
                "block partition repeats or exceeds coordinate {j}"
            )));
        }
        seen[j] = true;
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidParameter(format!(
            "block partition does not cover coordinate {j}"
        )));
    }
    Ok(SurrogateModel::new(Family::BlockConvex { base, blocks }, anchor, curvature))
}

impl SurrogateModel {
    fn new(family: Family, anchor: &Vector, curvature: f64) -> Self {
        Self {
            family,
            anchor: anchor.clone(),
            curvature,
            mask: CoordMask::full(anchor.len()),
            domain: FeasibleSet::Unconstrained,
        }
    }

    pub fn with_mask(mut self, mask: CoordMask) -> Self {
        self.mask = mask;
        self
    }

    /// Region on which the supplied constants are valid; property sampling stays inside it.
    pub fn with_domain(mut self, domain: FeasibleSet) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_curvature(mut self, curvature: f64) -> Self {
        self.curvature = curvature;
        self
    }

    pub fn kind(&self) -> FamilyKind {
        match self.family {
            Family::Linear { .. } => FamilyKind::Linear,
            Family::Dc { .. } => FamilyKind::Dc,
            Family::Product { .. } => FamilyKind::Product,
            Family::BlockConvex { .. } => FamilyKind::BlockConvex,
        }
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn mask(&self) -> &CoordMask {
        &self.mask
    }

    /// The approximated function `g`.
    pub fn base(&self) -> &SharedFn {
        match &self.family {
            Family::Linear { base, .. }
            | Family::Dc { base, .. }
            | Family::Product { base, .. }
            | Family::BlockConvex { base, .. } => base,
        }
    }

    /// The same surrogate re-anchored at `anchor`.
    pub fn reanchor(&self, anchor: &Vector) -> Result<Self> {
        let fresh = match &self.family {
            Family::Linear { base, .. } => linear_surrogate(base.clone(), self.curvature, anchor)?,
            Family::Dc { plus, minus, .. } => dc_surrogate(plus.clone(), minus.clone(), self.curvature, anchor)?,
            Family::Product { f1, f2, .. } => {
                let mut m = product_surrogate(
                    f1.clone(),
                    f2.clone(),
                    Some(ProductBounds {
                        g: 0.0,
                        l: 0.0,
                        g_prime: 0.0,
                        l_prime: 0.0,
                    }),
                    anchor,
                )?;
                m.curvature = self.curvature;
                m
            }
            Family::BlockConvex { base, blocks } => {
                block_convex_surrogate(base.clone(), self.curvature, blocks.clone(), anchor)?
            }
        };
        Ok(fresh.with_mask(self.mask.clone()).with_domain(self.domain.clone()))
    }

    /// Point equal to the anchor except on `block`, where it takes `x`.
    fn mixed(&self, x: &Vector, block: &[usize]) -> Vector {
        let mut p = self.anchor.clone();
        for &j in block {
            p[j] = x[j];
        }
        p
    }

    /// `g̃(x; x̄)`
    pub fn eval(&self, x: &Vector) -> f64 {
        match &self.family {
            Family::Linear {
                anchor_value,
                anchor_grad,
                ..
            } => anchor_value + anchor_grad.dot(x),
            Family::Dc {
                plus,
                minus_value,
                minus_grad,
                ..
            } => plus.value(x) - minus_value - minus_grad.dot(x),
            Family::Product {
                f1, f2, f1_bar, f2_bar, ..
            } => f1.value(x) * f2_bar + f1_bar * f2.value(x),
            Family::BlockConvex { base, blocks } => blocks.iter().map(|b| base.value(&self.mixed(x, b))).sum(),
        }
    }

    /// `∇g̃(x; x̄)`
    pub fn grad(&self, x: &Vector) -> Vector {
        match &self.family {
            Family::Linear { anchor_grad, .. } => anchor_grad.clone(),
            Family::Dc { plus, minus_grad, .. } => plus.gradient(x) - minus_grad,
            Family::Product {
                f1, f2, f1_bar, f2_bar, ..
            } => f1.gradient(x) * *f2_bar + f2.gradient(x) * *f1_bar,
            Family::BlockConvex { base, blocks } => {
                let mut g = Vector::zeros(x.len());
                for b in blocks {
                    let gb = base.gradient(&self.mixed(x, b));
                    for &j in b {
                        g[j] = gb[j];
                    }
                }
                g
            }
        }
    }

    /// `ω(x̄) = g(x̄) − g̃(x̄; x̄)`
    pub fn omega(&self) -> f64 {
        self.base().value(&self.anchor) - self.eval(&self.anchor)
    }

    /// Closed-form offset of each family, used to cross-check [`Self::omega`].
    pub fn family_omega(&self) -> f64 {
        match &self.family {
            Family::Linear { anchor_grad, .. } => -anchor_grad.dot(&self.anchor),
            Family::Dc { minus_grad, .. } => minus_grad.dot(&self.anchor),
            Family::Product { f1_bar, f2_bar, .. } => -f1_bar * f2_bar,
            Family::BlockConvex { base, blocks } => -((blocks.len() as f64) - 1.0) * base.value(&self.anchor),
        }
    }
}

impl SmoothFn for SurrogateModel {
    fn dim(&self) -> usize {
        self.anchor.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.eval(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.grad(x)
    }
}

/// Worst observed violation of each property (zero when satisfied).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyReport {
    pub samples: usize,
    pub upper_bound: f64,
    pub tangency: f64,
    pub gradient_lipschitz: f64,
    pub convexity: f64,
    pub omega_mismatch: f64,
}

pub const PROPERTY_TOL: f64 = 1e-8;

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.worst() <= PROPERTY_TOL
    }

    pub fn worst(&self) -> f64 {
        [
            self.upper_bound,
            self.tangency,
            self.gradient_lipschitz,
            self.convexity,
            self.omega_mismatch,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Sample anchors around the model's anchor and point pairs around each
/// anchor (sup-norm radius, clipped to the model's domain) and record the
/// worst violation of every surrogate property.
pub fn verify_properties(model: &SurrogateModel, samples: usize, radius: f64, seed: u64) -> Result<PropertyReport> {
    let samples = samples.max(1);
    let mut rng = rng::stream(seed, &[0x5u64]);
    let mut report = PropertyReport {
        samples,
        ..Default::default()
    };
    let l = model.curvature;
    let mask = &model.mask;
    for _ in 0..samples {
        let bar = model.domain.project(&rng::in_cube(&mut rng, &model.anchor, radius));
        let m = model.reanchor(&bar)?;
        let x = model.domain.project(&rng::in_cube(&mut rng, &bar, radius));
        let xp = model.domain.project(&rng::in_cube(&mut rng, &bar, radius));
        let g = m.base();
        let omega = m.omega();

        let gap = g.value(&x) - m.eval(&x) - 0.5 * l * mask.norm_sq(&(&x - &bar)) - omega;
        report.upper_bound = report.upper_bound.max(gap);

        let tangency = (m.grad(&bar) - g.gradient(&bar)).amax();
        report.tangency = report.tangency.max(tangency);

        let lip = (m.grad(&x) - m.grad(&xp)).norm() - l * mask.norm_sq(&(&x - &xp)).sqrt();
        report.gradient_lipschitz = report.gradient_lipschitz.max(lip);

        let mid = (&x + &xp) * 0.5;
        let convex = m.eval(&mid) - 0.5 * (m.eval(&x) + m.eval(&xp));
        report.convexity = report.convexity.max(convex);

        let scale = omega.abs().max(1.0);
        report.omega_mismatch = report.omega_mismatch.max((omega - m.family_omega()).abs() / scale);
    }
    Ok(report)
}
