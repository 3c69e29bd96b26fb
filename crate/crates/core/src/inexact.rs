//! Gradient error injection and the error ledger.
//!
//! Every perturbation is a pure function of `(seed, slot, node)`, so a run
//! replays bit-for-bit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::function::Vector;
use crate::rng;

/// Deterministic rules for the bounded adversarial model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialPattern {
    /// Constant bias along the normalized all-ones direction.
    Bias,
    /// Bias whose sign flips every slot.
    Alternating,
    /// Full-magnitude push on coordinate `(slot + node) mod n`.
    Rotating,
    /// Opposes the true gradient, scaled to the bound.
    Opposing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorKind {
    Exact,
    AdditiveGaussian { sigma: f64 },
    UniformQuantize { step: f64 },
    BoundedAdversarial { bound: f64, pattern: AdversarialPattern },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub kind: ErrorKind,
    pub seed: u64,
}

impl ErrorModel {
    pub fn exact() -> Self {
        Self {
            kind: ErrorKind::Exact,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: ErrorKind::AdditiveGaussian { sigma },
            seed,
        }
    }

    pub fn quantize(step: f64) -> Self {
        Self {
            kind: ErrorKind::UniformQuantize { step },
            seed: 0,
        }
    }

    pub fn adversarial(bound: f64, pattern: AdversarialPattern) -> Self {
        Self {
            kind: ErrorKind::BoundedAdversarial { bound, pattern },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        match self.kind {
            ErrorKind::Exact => Ok(()),
            ErrorKind::AdditiveGaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("gaussian sigma {sigma}"))
            }
            ErrorKind::UniformQuantize { step } if !(step > 0.0 && step.is_finite()) => {
                bad(format!("quantization step {step}"))
            }
            ErrorKind::BoundedAdversarial { bound, .. } if !(bound >= 0.0 && bound.is_finite()) => {
                bad(format!("adversarial bound {bound}"))
            }
            _ => Ok(()),
        }
    }

    /// True when every perturbation is identically zero.
    pub fn is_exact(&self) -> bool {
        match self.kind {
            ErrorKind::Exact => true,
            ErrorKind::AdditiveGaussian { sigma } => sigma == 0.0,
            ErrorKind::BoundedAdversarial { bound, .. } => bound == 0.0,
            ErrorKind::UniformQuantize { .. } => false,
        }
    }

    /// Returns `(g + e, ‖e‖²)` for the gradient reported by `node` at `slot`.
    pub fn perturb_gradient(&self, grad: &Vector, slot: usize, node: usize) -> (Vector, f64) {
        let n = grad.len();
        let perturbed = match self.kind {
            ErrorKind::Exact => return (grad.clone(), 0.0),
            ErrorKind::AdditiveGaussian { sigma } => {
                if sigma == 0.0 {
                    return (grad.clone(), 0.0);
                }
                let mut r = rng::stream(self.seed, &[slot as u64, node as u64]);
                grad.map(|g| {
                    let d: f64 = StandardNormal.sample(&mut r);
                    g + sigma * d
                })
            }
            ErrorKind::UniformQuantize { step } => grad.map(|g| (g / step).round() * step),
            ErrorKind::BoundedAdversarial { bound, pattern } => {
                let e = adversarial(grad, bound, pattern, slot, node, self.seed);
                grad + e
            }
        };
        let err = (&perturbed - grad).norm_squared();
        debug_assert_eq!(perturbed.len(), n);
        (perturbed, err)
    }
}

fn adversarial(grad: &Vector, bound: f64, pattern: AdversarialPattern, slot: usize, node: usize, seed: u64) -> Vector {
    let n = grad.len();
    if n == 0 || bound == 0.0 {
        return Vector::zeros(n);
    }
    let ones = Vector::from_element(n, bound / (n as f64).sqrt());
    match pattern {
        AdversarialPattern::Bias => ones,
        AdversarialPattern::Alternating => {
            if slot.is_multiple_of(2) {
                ones
            } else {
                -ones
            }
        }
        AdversarialPattern::Rotating => {
            // seed only shifts the phase
            let offset = (rng::stream(seed, &[node as u64]).random::<u32>() as usize) % n;
            let mut e = Vector::zeros(n);
            e[(slot + node + offset) % n] = bound;
            e
        }
        AdversarialPattern::Opposing => {
            let norm = grad.norm();
            if norm == 0.0 {
                ones
            } else {
                grad * (-bound / norm)
            }
        }
    }
}

/// Per-slot, per-node record of injected squared error norms. `None`
/// marks nodes that did not update in that slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorLedger {
    rows: Vec<Vec<Option<f64>>>,
}

impl ErrorLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_slot(&mut self, row: Vec<Option<f64>>) {
        self.rows.push(row);
    }

    pub fn slots(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// Mean of `‖e_k^t‖²` over the nodes active in slot `t` (1-based), zero if none.
    pub fn slot_mean(&self, t: usize) -> f64 {
        let row = &self.rows[t - 1];
        let (sum, count) = row
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), &e| (s + e, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Sum of `‖e_k^t‖²` over the nodes active in slot `t` (1-based).
    pub fn slot_sum(&self, t: usize) -> f64 {
        self.rows[t - 1].iter().flatten().sum()
    }

    fn check_horizon(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.rows.len() {
            Err(Error::Range(format!(
                "horizon {t} outside the {} recorded slots",
                self.rows.len()
            )))
        } else {
            Ok(())
        }
    }

    /// `E_T`: time average of the per-slot mean over active nodes.
    pub fn average_error(&self, t: usize) -> Result<f64> {
        self.check_horizon(t)?;
        Ok((1..=t).map(|s| self.slot_mean(s)).sum::<f64>() / t as f64)
    }

    /// Time average of the per-slot sum over active nodes.
    pub fn average_error_summed(&self, t: usize) -> Result<f64> {
        self.check_horizon(t)?;
        Ok((1..=t).map(|s| self.slot_sum(s)).sum::<f64>() / t as f64)
    }

    /// `Σ_{t≤T} Σ_{k∈S_t} ‖e_k^t‖²`
    pub fn total(&self, t: usize) -> Result<f64> {
        self.check_horizon(t)?;
        Ok((1..=t).map(|s| self.slot_sum(s)).sum())
    }

    /// Rows `slot,node,error_norm_sq` for every recorded update.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,node,error_norm_sq\n");
        for (t, row) in self.rows.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                if let Some(e) = e {
                    out.push_str(&format!("{},{},{:.16e}\n", t + 1, k, e));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn exact_is_identity() {
        let g = v(&[1.5, -2.0]);
        let (p, e) = ErrorModel::exact().perturb_gradient(&g, 3, 1);
        assert_eq!(p, g);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn quantize_example() {
        let (p, e) = ErrorModel::quantize(1.0).perturb_gradient(&v(&[0.4, -0.7]), 1, 0);
        assert_eq!(p, v(&[0.0, -1.0]));
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_second_moment() {
        let n = 4;
        let sigma = 0.3;
        let m = ErrorModel::gaussian(sigma, 42);
        let g = Vector::zeros(n);
        let draws = 100_000;
        let mean: f64 = (0..draws).map(|t| m.perturb_gradient(&g, t, 0).1).sum::<f64>() / draws as f64;
        let expected = n as f64 * sigma * sigma;
        assert!((mean - expected).abs() <= 0.02 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let m = ErrorModel::gaussian(0.1, 9);
        let g = v(&[1.0, 2.0, 3.0]);
        for t in 1..50 {
            for k in 0..3 {
                assert_eq!(m.perturb_gradient(&g, t, k), m.perturb_gradient(&g, t, k));
            }
        }
        assert_ne!(m.perturb_gradient(&g, 1, 0), m.perturb_gradient(&g, 1, 1));
    }

    #[test]
    fn validation() {
        assert!(ErrorModel::gaussian(-1.0, 0).validate().is_err());
        assert!(ErrorModel::quantize(0.0).validate().is_err());
        assert!(ErrorModel::adversarial(f64::NAN, AdversarialPattern::Bias).validate().is_err());
        assert!(ErrorModel::gaussian(0.0, 0).is_exact());
    }

    #[test]
    fn average_error_examples() {
        let mut l = ErrorLedger::new();
        l.push_slot(vec![Some(0.0), None]);
        l.push_slot(vec![Some(0.0), Some(0.0)]);
        assert_eq!(l.average_error(2).unwrap(), 0.0);

        let mut l = ErrorLedger::new();
        for _ in 0..5 {
            l.push_slot(vec![Some(1.0)]);
        }
        assert_eq!(l.average_error(5).unwrap(), 1.0);

        let mut l = ErrorLedger::new();
        for _ in 0..4 {
            l.push_slot(vec![Some(1.0), Some(3.0)]);
        }
        assert_eq!(l.average_error(4).unwrap(), 2.0);
        assert_eq!(l.average_error_summed(4).unwrap(), 4.0);
        assert!(matches!(l.average_error(5), Err(Error::Range(_))));
        assert!(matches!(l.average_error(0), Err(Error::Range(_))));
    }

    #[test]
    fn ledger_csv_lists_only_updates() {
        let mut l = ErrorLedger::new();
        l.push_slot(vec![Some(0.5), None]);
        let csv = l.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.contains("1,0,5.0000000000000000e-1"));
    }

    fn arb_grad() -> impl Strategy<Value = Vector> {
        prop::collection::vec(-10.0..10.0f64, 1..6).prop_map(Vector::from_vec)
    }

    fn arb_pattern() -> impl Strategy<Value = AdversarialPattern> {
        prop_oneof![
            Just(AdversarialPattern::Bias),
            Just(AdversarialPattern::Alternating),
            Just(AdversarialPattern::Rotating),
            Just(AdversarialPattern::Opposing),
        ]
    }

    proptest! {
        #[test]
        fn quantize_error_is_bounded(g in arb_grad(), step in 0.01..5.0f64) {
            let (p, _) = ErrorModel::quantize(step).perturb_gradient(&g, 1, 0);
            for j in 0..g.len() {
                prop_assert!((p[j] - g[j]).abs() <= step / 2.0 + 1e-12);
            }
        }

        #[test]
        fn adversarial_error_is_bounded(
            g in arb_grad(), bound in 0.0..3.0f64, pattern in arb_pattern(), slot in 0usize..100, node in 0usize..8,
        ) {
            let (_, e) = ErrorModel::adversarial(bound, pattern).perturb_gradient(&g, slot, node);
            prop_assert!(e.sqrt() <= bound * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn ledger_average_is_nonnegative_and_zero_iff_all_zero(
            rows in prop::collection::vec(prop::collection::vec(prop::option::of(0.0..2.0f64), 3), 1..20),
        ) {
            let mut l = ErrorLedger::new();
            for r in &rows {
                l.push_slot(r.clone());
            }
            let e = l.average_error(rows.len()).unwrap();
            let all_zero = rows.iter().flatten().flatten().all(|&x| x == 0.0);
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e == 0.0, all_zero);
        }
    }
}
