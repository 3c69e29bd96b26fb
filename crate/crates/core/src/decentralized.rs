//! Decentralized engine over an undirected graph. Node `k` owns `z_k` and
//! keeps local copies `x_kj`, `y_kj` for `j` in its closed neighborhood
//! `N_k`; each slot has a `z` sub-slot (update and broadcast) and an `x/y`
//! sub-slot driven by the node's own, possibly stale, view of its neighbors.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::function::Vector;
use crate::fusion::{
    check_rho, check_schedule, default_alpha, gather, reported_error, stop_test, x_coordinate, z_coordinate,
    SolverConfig,
};
use crate::inexact::{ErrorLedger, ErrorModel};
use crate::problem::{ConsensusProblem, CoordMask};
use crate::rng;
use crate::schedule::Schedule;
use crate::trace::{guard, EngineKind, Recorder, RunTrace, SolverState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    /// Closed neighborhoods, sorted.
    neighborhoods: Vec<Vec<usize>>,
}

impl Graph {
    /// Undirected graph on `nodes` vertices; self-loops are implied and ignored.
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidParameter("graph needs at least one node".into()));
        }
        let mut sets: Vec<BTreeSet<usize>> = (0..nodes).map(|k| BTreeSet::from([k])).collect();
        for &(u, v) in edges {
            if u >= nodes || v >= nodes {
                return Err(Error::Range(format!("edge ({u}, {v}) outside {nodes} nodes")));
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        Ok(Self {
            neighborhoods: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn path(nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (1..nodes).map(|k| (k - 1, k)).collect();
        Self::new(nodes, &edges)
    }

    pub fn ring(nodes: usize) -> Result<Self> {
        let mut edges: Vec<_> = (1..nodes).map(|k| (k - 1, k)).collect();
        if nodes > 2 {
            edges.push((nodes - 1, 0));
        }
        Self::new(nodes, &edges)
    }

    pub fn complete(nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (0..nodes).flat_map(|u| (u + 1..nodes).map(move |v| (u, v))).collect();
        Self::new(nodes, &edges)
    }

    /// One `u v` pair per line, 0-indexed; `#` starts a comment. The node
    /// count is `nodes` or, when absent, one past the largest index.
    pub fn parse_edge_list(text: &str, nodes: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(perr(format!("expected two node indices, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("not a node index: {s}")));
            edges.push((num(f[0])?, num(f[1])?));
        }
        let inferred = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        Self::new(nodes.unwrap_or(inferred), &edges)
    }

    pub fn nodes(&self) -> usize {
        self.neighborhoods.len()
    }

    /// `N_k`, including `k`.
    pub fn neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k]
    }

    pub fn mask(&self, k: usize) -> CoordMask {
        CoordMask::from_indices(self.nodes(), &self.neighborhoods[k]).expect("neighborhood indices are in range")
    }

    pub fn is_edge(&self, u: usize, v: usize) -> bool {
        self.neighborhoods[u].binary_search(&v).is_ok()
    }
}

/// `z_j` step over the neighborhood `N_j` (`count = |N_j|`).
#[allow(clippy::too_many_arguments)]
pub fn zj_update(
    l_h: f64,
    z_j: f64,
    grad_h_j: f64,
    neighbors: &[(f64, f64)],
    rho: f64,
    nonsmooth: &crate::problem::Nonsmooth,
    interval: (f64, f64),
) -> f64 {
    let mut s = 0.0;
    for &(x, y) in neighbors {
        s += rho * x + y;
    }
    z_coordinate(l_h, z_j, grad_h_j, s, neighbors.len(), rho, nonsmooth, interval)
}

/// `(ρ z_j − y_kj + (w/η) x_kj − g_j) / (ρ + w/η)`
pub fn xkj_update(x_kj: f64, y_kj: f64, z_j: f64, grad_j: f64, rho: f64, prox_weight: f64) -> f64 {
    x_coordinate(x_kj, y_kj, z_j, grad_j, rho, prox_weight)
}

/// `y_kj + ρ (x_kj − z_j)`
pub fn ykj_update(y_kj: f64, x_kj: f64, z_j: f64, rho: f64) -> f64 {
    y_kj + rho * (x_kj - z_j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageModel {
    /// Probability that a single `z_j` broadcast to one neighbor is lost.
    pub loss_prob: f64,
    pub seed: u64,
}

impl Default for MessageModel {
    fn default() -> Self {
        Self {
            loss_prob: 0.0,
            seed: 0,
        }
    }
}

/// `(slot, node, coordinate)` touched by a node's local computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub slot: usize,
    pub node: usize,
    pub coord: usize,
}

/// Checks that `problem` is the general-form consensus problem of `graph`.
pub fn check_compatible(problem: &ConsensusProblem, graph: &Graph) -> Result<()> {
    check_dim("graph nodes", problem.nodes(), graph.nodes())?;
    check_dim("decentralized dimension", problem.nodes(), problem.dim())?;
    for k in 0..graph.nodes() {
        if problem.loss(k).mask != graph.mask(k) {
            return Err(Error::InvalidParameter(format!(
                "mask of node {k} differs from its closed neighborhood"
            )));
        }
        if !problem.loss(k).surrogate.is_linear() {
            return Err(Error::Capability(format!(
                "node {k}: only linear surrogates are supported by the decentralized engine"
            )));
        }
    }
    let reg = problem.regularizer();
    if !reg.separable {
        return Err(Error::Capability("decentralized engine requires a separable regularizer".into()));
    }
    if !reg.surrogate.is_linear() {
        return Err(Error::Capability(
            "decentralized engine supports only the quadratic upper model of h".into(),
        ));
    }
    Ok(())
}

pub fn run(
    problem: &ConsensusProblem,
    graph: &Graph,
    config: &SolverConfig,
    schedule: &Schedule,
    errors: &ErrorModel,
    messages: &MessageModel,
) -> Result<RunTrace> {
    run_inner(problem, graph, config, schedule, errors, messages, None)
}

/// Like [`run`], also returning every coordinate each node touched.
pub fn run_instrumented(
    problem: &ConsensusProblem,
    graph: &Graph,
    config: &SolverConfig,
    schedule: &Schedule,
    errors: &ErrorModel,
    messages: &MessageModel,
) -> Result<(RunTrace, Vec<Access>)> {
    let mut log = Vec::new();
    let trace = run_inner(problem, graph, config, schedule, errors, messages, Some(&mut log))?;
    Ok((trace, log))
}

fn run_inner(
    problem: &ConsensusProblem,
    graph: &Graph,
    config: &SolverConfig,
    schedule: &Schedule,
    errors: &ErrorModel,
    messages: &MessageModel,
    mut log: Option<&mut Vec<Access>>,
) -> Result<RunTrace> {
    config.validate(problem.dim())?;
    errors.validate()?;
    if !(0.0..1.0).contains(&messages.loss_prob) {
        return Err(Error::InvalidParameter(format!("message loss {} not in [0, 1)", messages.loss_prob)));
    }
    check_compatible(problem, graph)?;
    let kk = problem.nodes();
    check_schedule(schedule, kk, config.horizon)?;
    let mut warnings = Vec::new();
    check_rho(problem, config, schedule.tau(), &mut warnings)?;

    let n = problem.dim();
    let reg = problem.regularizer();
    let z1 = problem
        .feasible()
        .project(&config.z_init.clone().unwrap_or_else(|| Vector::zeros(n)));
    let masks: Vec<CoordMask> = (0..kk).map(|k| graph.mask(k)).collect();
    let mut state = SolverState {
        xs: masks.iter().map(|m| m.apply(&z1)).collect(),
        z: z1.clone(),
        ys: config.dual_init.initial(problem, &z1),
    };
    let initial_lagrangian = problem.augmented_lagrangian(&state.xs, &state.z, &state.ys, config.rho)?;
    let mut views: Vec<Vector> = masks.iter().map(|m| m.apply(&z1)).collect();
    let mut history: Vec<Vec<Vector>> = views.iter().map(|v| vec![v.clone()]).collect();
    let mut stale_age = vec![vec![0usize; n]; kk];
    let tau2 = schedule.tau2().max(1);
    let mut any_lost = false;
    let mut ledger = ErrorLedger::new();
    let mut recorder = Recorder {
        problem,
        rho: config.rho,
        alpha: default_alpha(problem, config),
        running_error: 0.0,
    };
    let mut records = Vec::with_capacity(config.horizon);
    let mut stopped_early = false;
    let cover = problem.coverage();
    let mut z_sync = true;

    for t in 1..=config.horizon {
        // sub-slot 1: z_j updates at their owners, then broadcast
        let grad_h = reg.smooth.gradient(&state.z);
        let mut z_new = state.z.clone();
        for j in 0..n {
            if !schedule.z_active(t, j) {
                z_sync = false;
                continue;
            }
            if let Some(log) = log.as_deref_mut() {
                log.push(Access { slot: t, node: j, coord: j });
            }
            z_new[j] = z_coordinate(
                reg.l_h,
                state.z[j],
                grad_h[j],
                gather(problem, &state.xs, &state.ys, j, config.rho),
                cover[j],
                config.rho,
                &reg.nonsmooth,
                problem.feasible().interval(j),
            );
        }
        for k in 0..kk {
            for &j in graph.neighborhood(k) {
                if j == k {
                    views[k][j] = z_new[j];
                    continue;
                }
                if views[k][j] == z_new[j] {
                    stale_age[k][j] = 0;
                    continue;
                }
                let lost = messages.loss_prob > 0.0
                    && rng::stream(messages.seed, &[t as u64, j as u64, k as u64]).random::<f64>()
                        < messages.loss_prob;
                if lost && stale_age[k][j] + 1 < tau2 {
                    stale_age[k][j] += 1;
                    any_lost = true;
                } else {
                    views[k][j] = z_new[j];
                    stale_age[k][j] = 0;
                }
            }
            history[k].push(views[k].clone());
        }

        // sub-slot 2: local x/y updates from each node's own view
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
            let anchor = &history[k][stamp - 1];
            let true_grad = node.loss.gradient(anchor);
            let (e, e_sq) = reported_error(&true_grad, &node.mask, errors, t, k);
            row[k] = Some(e_sq);
            for &j in graph.neighborhood(k) {
                if let Some(log) = log.as_deref_mut() {
                    log.push(Access { slot: t, node: k, coord: j });
                }
                let g = true_grad[j] + e[j];
                let x = xkj_update(
                    state.xs[k][j],
                    state.ys[k][j],
                    views[k][j],
                    g,
                    config.rho,
                    config.bregman.weight(j) / config.eta,
                );
                next.ys[k][j] = ykj_update(state.ys[k][j], x, views[k][j], config.rho);
                next.xs[k][j] = x;
            }
        }
        ledger.push_slot(row);
        guard(&next, t)?;
        records.push(recorder.measure(t, &state, &next, &ledger, true)?);
        let stop = stop_test(problem, &state, &next, config.eps_stop);
        state = next;
        if stop {
            stopped_early = t < config.horizon;
            break;
        }
    }

    let slots = records.len();
    Ok(RunTrace {
        engine: EngineKind::Decentralized,
        rho: config.rho,
        initial_lagrangian,
        records,
        ledger,
        exact: errors.is_exact(),
        synchronous: z_sync
            && !any_lost
            && (1..=slots).all(|t| (0..kk).all(|k| schedule.stamp(t, k) == Some(t + 1))),
        stopped_early,
        warnings,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{SharedFn, Zero};
    use crate::problem::{FeasibleSet, NodeLoss, Nonsmooth, Regularizer};
    use std::sync::Arc;

    #[test]
    fn graph_construction() {
        let g = Graph::path(4).unwrap();
        assert_eq!(g.neighborhood(0), &[0, 1]);
        assert_eq!(g.neighborhood(2), &[1, 2, 3]);
        assert!(g.is_edge(3, 2));
        assert!(Graph::new(2, &[(0, 2)]).is_err());
        let parsed = Graph::parse_edge_list("# path\n0 1\n1 2\n\n2 3 # tail\n", None).unwrap();
        assert_eq!(parsed, g);
        assert!(Graph::parse_edge_list("0 x\n", None).is_err());
        assert!(Graph::parse_edge_list("0 1 2\n", None).is_err());
        assert_eq!(Graph::complete(3).unwrap().neighborhood(1), &[0, 1, 2]);
        assert_eq!(Graph::ring(4).unwrap().neighborhood(0), &[0, 1, 3]);
    }

    #[test]
    fn scalar_update_examples() {
        let z = zj_update(0.0, 0.0, 0.0, &[(1.0, 0.0), (3.0, 0.0)], 1.0, &Nonsmooth::Zero, (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(z, 2.0);
        let z = zj_update(0.0, 0.0, 0.0, &[(0.0, 0.0)], 1.0, &Nonsmooth::Zero, (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(z, 0.0);

        assert_eq!(xkj_update(0.0, 0.0, 0.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(xkj_update(1.0, 0.0, 1.0, 0.0, 1.0, 1.0), 1.0);
        assert_eq!(xkj_update(2.0, 1.0, 1.0, 1.0, 2.0, 2.0), 1.0);

        assert_eq!(ykj_update(0.7, 1.5, 1.5, 4.0), 0.7);
        assert_eq!(ykj_update(0.0, 1.0, 0.0, 3.0), 3.0);
        let (y, x, z) = (0.25, 0.9, 0.4);
        assert!((ykj_update(y, x, z, 2.5) - y - 2.5 * (x - z)).abs() < 1e-15);
    }

    fn zero_on(graph: &Graph) -> ConsensusProblem {
        let k = graph.nodes();
        let losses = (0..k)
            .map(|i| NodeLoss::new(Arc::new(Zero { dim: k }) as SharedFn, graph.mask(i), 0.0))
            .collect();
        ConsensusProblem::new(k, losses, Regularizer::zero(k), FeasibleSet::Unconstrained).unwrap()
    }

    #[test]
    fn compatibility_checks() {
        let g = Graph::path(3).unwrap();
        let mut p = zero_on(&g);
        assert!(check_compatible(&p, &g).is_ok());
        assert!(check_compatible(&p, &Graph::complete(3).unwrap()).is_err());

        let losses = p.losses().to_vec();
        let mut reg = Regularizer::zero(3);
        reg.separable = false;
        p = ConsensusProblem::new(3, losses, reg, FeasibleSet::Unconstrained).unwrap();
        let cfg = SolverConfig::new(1.0, 3);
        let res = run(&p, &g, &cfg, &Schedule::synchronous(3, 3), &ErrorModel::exact(), &MessageModel::default());
        assert!(matches!(res, Err(Error::Capability(_))));
    }

    #[test]
    fn skipped_coordinates_are_copied() {
        let g = Graph::path(2).unwrap();
        let p = crate::problems::graph_quadratic_consensus(&g, 3).unwrap().problem;
        let mut s = Schedule::synchronous(3, 2);
        s.set_z_active(2, 1, false);
        let cfg = SolverConfig {
            z_init: Some(Vector::from_vec(vec![0.5, -0.5])),
            ..SolverConfig::new(1.0, 3)
        };
        let tr = run(&p, &g, &cfg, &s, &ErrorModel::exact(), &MessageModel::default()).unwrap();
        assert!(!tr.synchronous);
        assert_eq!(tr.slots(), 3);
        let full = run(&p, &g, &cfg, &Schedule::synchronous(3, 2), &ErrorModel::exact(), &MessageModel::default()).unwrap();
        assert!(full.synchronous);
        assert_ne!(full.final_z()[1], tr.final_z()[1]);
    }
}
