//! Per-slot run records and their CSV form.

use std::fmt::Write as _;

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::function::Vector;
use crate::inexact::ErrorLedger;
use crate::problem::ConsensusProblem;

/// Primal and dual iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub xs: Vec<Vector>,
    pub z: Vector,
    pub ys: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    /// `L({x_k^{t+1}}, z^{t+1}, {y_k^{t+1}})`
    pub lagrangian: f64,
    /// Stationarity measure at `z^{t+1}`.
    pub theta: f64,
    /// `max_k ‖P_k(x_k − z)‖²`
    pub consensus_residual: f64,
    /// `max_k ‖δx_k‖²`
    pub max_dx: f64,
    /// `Σ_k ‖δx_k‖²`
    pub sum_dx: f64,
    /// `‖δz‖²`
    pub dz: f64,
    /// Mean squared injected error over the nodes active in this slot.
    pub error_sq: f64,
    /// `E_t` over slots `1..=slot`.
    pub e_t_running: f64,
    /// Per-coordinate `max_{k∋j} (x_kj − z_j)²` (decentralized engine only).
    pub coord_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Fusion,
    Decentralized,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub engine: EngineKind,
    pub rho: f64,
    pub initial_lagrangian: f64,
    pub records: Vec<SlotRecord>,
    pub ledger: ErrorLedger,
    /// No injected error.
    pub exact: bool,
    /// Every node updated every slot with the freshest anchor.
    pub synchronous: bool,
    /// The stopping test fired before the horizon.
    pub stopped_early: bool,
    pub warnings: Vec<String>,
    pub final_state: SolverState,
}

impl RunTrace {
    pub fn slots(&self) -> usize {
        self.records.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.theta).collect()
    }

    pub fn lagrangians(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lagrangian).collect()
    }

    pub fn final_record(&self) -> Option<&SlotRecord> {
        self.records.last()
    }

    pub fn final_z(&self) -> &Vector {
        &self.final_state.z
    }

    /// `(min_t ϑ_t, argmin slot)` over the first `t` slots.
    pub fn min_theta(&self, t: usize) -> Option<(f64, usize)> {
        self.records
            .iter()
            .take(t)
            .map(|r| (r.theta, r.slot))
            .fold(None, |best, cur| match best {
                Some(b) if b.0 <= cur.0 => Some(b),
                _ => Some(cur),
            })
    }

    /// `E_T` over all recorded slots.
    pub fn average_error(&self) -> Result<f64> {
        self.ledger.average_error(self.ledger.slots())
    }

    pub fn to_csv(&self) -> String {
        let ncoord = self.records.first().map_or(0, |r| r.coord_residuals.len());
        let mut out =
            String::from("slot,lagrangian,theta,consensus_residual,max_dx,max_dz,error_sq,E_T_running,sum_dx");
        for j in 0..ncoord {
            let _ = write!(out, ",residual_{j}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.slot,
                r.lagrangian,
                r.theta,
                r.consensus_residual,
                r.max_dx,
                r.dz,
                r.error_sq,
                r.e_t_running,
                r.sum_dx
            );
            for c in &r.coord_residuals {
                let _ = write!(out, ",{c:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Measures one slot from consecutive states. Shared by both engines.
pub(crate) struct Recorder<'a> {
    pub problem: &'a ConsensusProblem,
    pub rho: f64,
    pub alpha: f64,
    pub running_error: f64,
}

impl Recorder<'_> {
    pub(crate) fn measure(
        &mut self,
        slot: usize,
        prev: &SolverState,
        cur: &SolverState,
        ledger: &ErrorLedger,
        per_coordinate: bool,
    ) -> Result<SlotRecord> {
        let p = self.problem;
        let lagrangian = p.augmented_lagrangian(&cur.xs, &cur.z, &cur.ys, self.rho)?;
        let theta = diagnostics::stationarity(p, &cur.z, self.alpha)?;
        let consensus_residual = p.consensus_residual(&cur.xs, &cur.z)?;
        let dxs: Vec<f64> = prev
            .xs
            .iter()
            .zip(&cur.xs)
            .map(|(a, b)| (b - a).norm_squared())
            .collect();
        let max_dx = dxs.iter().copied().fold(0.0, f64::max);
        let sum_dx = dxs.iter().sum();
        let dz = (&cur.z - &prev.z).norm_squared();
        let error_sq = ledger.slot_mean(slot);
        self.running_error += error_sq;
        let coord_residuals = if per_coordinate {
            (0..p.dim())
                .map(|j| {
                    p.losses()
                        .iter()
                        .zip(&cur.xs)
                        .filter(|(l, _)| l.mask.contains(j))
                        .map(|(_, x)| (x[j] - cur.z[j]).powi(2))
                        .fold(0.0, f64::max)
                })
                .collect()
        } else {
            Vec::new()
        };
        let rec = SlotRecord {
            slot,
            lagrangian,
            theta,
            consensus_residual,
            max_dx,
            sum_dx,
            dz,
            error_sq,
            e_t_running: self.running_error / slot as f64,
            coord_residuals,
        };
        Ok(rec)
    }
}

pub(crate) const DIVERGENCE_LIMIT: f64 = 1e12;

/// Non-finite or huge iterates abort the run.
pub(crate) fn guard(state: &SolverState, slot: usize) -> Result<()> {
    let ok = |v: &Vector| v.iter().all(|x| x.is_finite()) && v.norm() <= DIVERGENCE_LIMIT;
    if ok(&state.z) && state.xs.iter().all(ok) && state.ys.iter().all(ok) {
        Ok(())
    } else {
        Err(Error::Divergence { slot })
    }
}
