//! Slotted asynchrony: which nodes update in each slot, which (possibly old)
//! iterate anchors their gradient, and which `z` coordinates are refreshed.
//!
//! Slots are numbered `1..=T`. At slot `t` an active node uses the anchor
//! `z^s` with stamp `s = [t+1]_k`, where `z^1` is the initial iterate and
//! `z^{t+1}` the one produced at slot `t`.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    /// Maximum gradient age.
    pub tau1: usize,
    /// Every node updates at least once in every `tau2` consecutive slots.
    pub tau2: usize,
    /// Probability that a slot's update of a node (or a `z` coordinate) is dropped.
    pub drop_prob: f64,
    /// Minimum fraction of slots in which each `z` coordinate is updated.
    pub z_freq: f64,
    pub seed: u64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self::synchronous()
    }
}

impl DelayModel {
    pub fn synchronous() -> Self {
        Self {
            tau1: 0,
            tau2: 1,
            drop_prob: 0.0,
            z_freq: 1.0,
            seed: 0,
        }
    }

    /// `z_freq` defaults to `1 − drop_prob`, the largest frequency the drops can sustain.
    pub fn new(tau1: usize, tau2: usize, drop_prob: f64, seed: u64) -> Self {
        Self {
            tau1,
            tau2,
            drop_prob,
            z_freq: 1.0 - drop_prob,
            seed,
        }
    }

    /// Combined bound `τ = τ₁ + τ₂ + 1`.
    pub fn tau(&self) -> usize {
        self.tau1 + self.tau2 + 1
    }

    pub fn check(&self) -> Result<()> {
        if self.tau2 < 1 {
            return Err(Error::InvalidParameter("tau2 must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::InvalidParameter(format!("drop probability {} not in [0, 1)", self.drop_prob)));
        }
        if !(self.z_freq > 0.0 && self.z_freq <= 1.0) {
            return Err(Error::InvalidParameter(format!("z frequency {} not in (0, 1]", self.z_freq)));
        }
        Ok(())
    }

    /// Number of slots out of `t` in which each `z` coordinate must be updated.
    pub fn z_quota(&self, t: usize) -> usize {
        (t as f64 * self.z_freq - 1e-12).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    horizon: usize,
    nodes: usize,
    tau1: usize,
    tau2: usize,
    /// `stamps[t-1][k]` is `Some([t+1]_k)` iff `k ∈ S_t^x`.
    stamps: Vec<Vec<Option<usize>>>,
    /// `z_active[t-1][j]` iff coordinate `j ∈ S_t^z`.
    z_active: Vec<Vec<bool>>,
}

impl Schedule {
    /// Builds a schedule from raw tables (no validation, see [`validate`]).
    pub fn from_parts(
        tau1: usize,
        tau2: usize,
        stamps: Vec<Vec<Option<usize>>>,
        z_active: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let horizon = stamps.len();
        let nodes = stamps.first().map_or(0, |r| r.len());
        if z_active.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "z activity rows",
                expected: horizon,
                found: z_active.len(),
            });
        }
        for (t, row) in stamps.iter().enumerate() {
            if row.len() != nodes || z_active[t].len() != nodes {
                return Err(Error::Parse {
                    line: t + 1,
                    message: "ragged schedule row".into(),
                });
            }
        }
        Ok(Self {
            horizon,
            nodes,
            tau1,
            tau2,
            stamps,
            z_active,
        })
    }

    /// Everyone updates every slot with the freshest anchor.
    pub fn synchronous(horizon: usize, nodes: usize) -> Self {
        Self {
            horizon,
            nodes,
            tau1: 0,
            tau2: 1,
            stamps: (1..=horizon).map(|t| vec![Some(t + 1); nodes]).collect(),
            z_active: vec![vec![true; nodes]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn tau1(&self) -> usize {
        self.tau1
    }

    pub fn tau2(&self) -> usize {
        self.tau2
    }

    pub fn tau(&self) -> usize {
        self.tau1 + self.tau2 + 1
    }

    pub fn is_synchronous(&self) -> bool {
        (1..=self.horizon).all(|t| {
            self.stamps[t - 1].iter().all(|s| *s == Some(t + 1)) && self.z_active[t - 1].iter().all(|&a| a)
        })
    }

    /// `[t+1]_k` if `k ∈ S_t^x`.
    pub fn stamp(&self, t: usize, k: usize) -> Option<usize> {
        self.stamps[t - 1][k]
    }

    pub fn x_active(&self, t: usize, k: usize) -> bool {
        self.stamps[t - 1][k].is_some()
    }

    pub fn z_active(&self, t: usize, j: usize) -> bool {
        self.z_active[t - 1][j]
    }

    /// Mutable access for constructing counterexamples.
    pub fn set_stamp(&mut self, t: usize, k: usize, stamp: Option<usize>) {
        self.stamps[t - 1][k] = stamp;
    }

    pub fn set_z_active(&mut self, t: usize, j: usize, active: bool) {
        self.z_active[t - 1][j] = active;
    }

    /// Plain-text table: a header line, then `slot node active_x stamp active_z`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# schedule T={} K={} tau1={} tau2={}\n# slot node active_x stamp active_z\n",
            self.horizon, self.nodes, self.tau1, self.tau2
        );
        for t in 1..=self.horizon {
            for k in 0..self.nodes {
                let s = self.stamps[t - 1][k];
                let stamp = s.map_or_else(|| "-".to_string(), |s| s.to_string());
                let _ = writeln!(
                    out,
                    "{t} {k} {} {stamp} {}",
                    u8::from(s.is_some()),
                    u8::from(self.z_active[t - 1][k])
                );
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize, usize, usize)> = None;
        let mut stamps = Vec::new();
        let mut z_active = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let perr = |message: String| Error::Parse { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header.is_none() && rest.trim_start().starts_with("schedule") {
                    let mut vals = [None; 4];
                    for tok in rest.split_whitespace().skip(1) {
                        let (key, val) = tok.split_once('=').ok_or_else(|| perr(format!("bad header field {tok}")))?;
                        let val: usize = val.parse().map_err(|_| perr(format!("bad header value {tok}")))?;
                        let slot = match key {
                            "T" => 0,
                            "K" => 1,
                            "tau1" => 2,
                            "tau2" => 3,
                            _ => return Err(perr(format!("unknown header field {key}"))),
                        };
                        vals[slot] = Some(val);
                    }
                    let get = |i: usize, name: &str| vals[i].ok_or_else(|| perr(format!("header lacks {name}")));
                    let h = (get(0, "T")?, get(1, "K")?, get(2, "tau1")?, get(3, "tau2")?);
                    stamps = vec![vec![None; h.1]; h.0];
                    z_active = vec![vec![false; h.1]; h.0];
                    header = Some(h);
                }
                continue;
            }
            let (horizon, nodes, _, _) = header.ok_or_else(|| perr("row before header".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(perr(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("not an integer: {s}")));
            let (t, k) = (num(f[0])?, num(f[1])?);
            if t == 0 || t > horizon || k >= nodes {
                return Err(perr(format!("slot {t} / node {k} out of range")));
            }
            let active = match f[2] {
                "1" => true,
                "0" => false,
                s => return Err(perr(format!("active_x must be 0 or 1, found {s}"))),
            };
            let stamp = match (active, f[3]) {
                (false, "-") => None,
                (true, s) => Some(num(s)?),
                (false, s) => return Err(perr(format!("inactive node carries stamp {s}"))),
            };
            stamps[t - 1][k] = stamp;
            z_active[t - 1][k] = match f[4] {
                "1" => true,
                "0" => false,
                s => return Err(perr(format!("active_z must be 0 or 1, found {s}"))),
            };
        }
        let (_, _, tau1, tau2) = header.ok_or(Error::Parse {
            line: 0,
            message: "missing schedule header".into(),
        })?;
        Self::from_parts(tau1, tau2, stamps, z_active)
    }
}

/// Draws a schedule: random drops and delays, stale or out-of-order stamps
/// discarded, then forced updates wherever the `τ₂` window or the `z`
/// quota would otherwise be violated.
pub fn generate(model: &DelayModel, horizon: usize, nodes: usize) -> Result<Schedule> {
    model.check()?;
    if horizon < model.tau2 {
        return Err(Error::ScheduleInfeasible {
            rule: format!("horizon {horizon} shorter than the update window tau2 = {}", model.tau2),
        });
    }
    if 1.0 - model.drop_prob < model.z_freq {
        return Err(Error::ScheduleInfeasible {
            rule: format!(
                "z-frequency: drop probability {} cannot sustain update frequency {}",
                model.drop_prob, model.z_freq
            ),
        });
    }
    let mut stamps = vec![vec![None; nodes]; horizon];
    #[allow(clippy::needless_range_loop)]
    for k in 0..nodes {
        let mut r = rng::stream(model.seed, &[0xA, k as u64]);
        let mut last_active = 0usize;
        let mut last_stamp = 0usize;
        for t in 1..=horizon {
            let dropped = r.random::<f64>() < model.drop_prob;
            let delay = r.random_range(0..=model.tau1);
            let forced = t - last_active >= model.tau2;
            if dropped && !forced {
                continue;
            }
            let mut s = (t + 1).saturating_sub(delay).max(1);
            if s <= last_stamp {
                if !forced {
                    // out-of-order arrival: discarded
                    continue;
                }
                s = t + 1;
            }
            stamps[t - 1][k] = Some(s);
            last_active = t;
            last_stamp = s;
        }
    }
    let quota = model.z_quota(horizon);
    let mut z_active = vec![vec![true; nodes]; horizon];
    if model.z_freq < 1.0 || model.drop_prob > 0.0 {
        for j in 0..nodes {
            let mut r = rng::stream(model.seed, &[0xB, j as u64]);
            for row in z_active.iter_mut() {
                row[j] = r.random::<f64>() >= model.drop_prob;
            }
            let mut count = z_active.iter().filter(|row| row[j]).count();
            for row in z_active.iter_mut().rev() {
                if count >= quota {
                    break;
                }
                if !row[j] {
                    row[j] = true;
                    count += 1;
                }
            }
        }
    }
    Ok(Schedule {
        horizon,
        nodes,
        tau1: model.tau1,
        tau2: model.tau2,
        stamps,
        z_active,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Stamp outside `[t − τ₁ + 1, t + 1]` (or below 1).
    BoundedDelay,
    /// Stamp not strictly newer than the node's previous stamp.
    Freshness,
    /// Node absent from a window of `τ₂` consecutive slots.
    UpdateGap,
    /// Coordinate updated in fewer than `⌈T·f⌉` slots.
    ZFrequency,
    /// Table shape does not match the model.
    Shape,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::BoundedDelay => "bounded-delay",
            Self::Freshness => "freshness",
            Self::UpdateGap => "update-gap",
            Self::ZFrequency => "z-frequency",
            Self::Shape => "shape",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub slot: usize,
    pub node: usize,
    pub rule: Rule,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleReport {
    /// Ordered by slot, then node.
    pub violations: Vec<Violation>,
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Scheduling {
                slot: v.slot,
                node: v.node,
                reason: v.rule.to_string(),
            }),
        }
    }
}

/// Checks all four schedule rules against `model`.
pub fn validate(schedule: &Schedule, model: &DelayModel) -> ScheduleReport {
    let mut v = Vec::new();
    let t_max = schedule.horizon;
    let tau2 = model.tau2.max(1);
    if schedule.stamps.len() != t_max || schedule.z_active.len() != t_max {
        v.push(Violation {
            slot: 0,
            node: 0,
            rule: Rule::Shape,
        });
        return ScheduleReport { violations: v };
    }
    for k in 0..schedule.nodes {
        let mut last_stamp = 0usize;
        let mut last_active = 0usize;
        for t in 1..=t_max {
            if let Some(s) = schedule.stamps[t - 1][k] {
                if s == 0 || s > t + 1 || s + model.tau1 < t + 1 {
                    v.push(Violation {
                        slot: t,
                        node: k,
                        rule: Rule::BoundedDelay,
                    });
                }
                if s <= last_stamp {
                    v.push(Violation {
                        slot: t,
                        node: k,
                        rule: Rule::Freshness,
                    });
                }
                last_stamp = last_stamp.max(s);
                last_active = t;
            } else if t - last_active >= tau2 {
                // window (t - tau2, t] holds no update; report once per gap
                if t - last_active == tau2 {
                    v.push(Violation {
                        slot: t,
                        node: k,
                        rule: Rule::UpdateGap,
                    });
                }
            }
        }
    }
    let quota = model.z_quota(t_max);
    for j in 0..schedule.nodes {
        let count = schedule.z_active.iter().filter(|row| row[j]).count();
        if count < quota {
            v.push(Violation {
                slot: t_max,
                node: j,
                rule: Rule::ZFrequency,
            });
        }
    }
    v.sort_by_key(|x| (x.slot, x.node));
    ScheduleReport { violations: v }
}

/// `(t+1)_k = max{i ≤ t+1 : k ∈ S_{i−1}}`, or 1 when `k` has not updated before slot `t+1`.
pub fn last_update_index(schedule: &Schedule, t: usize, k: usize) -> usize {
    (2..=(t + 1).min(schedule.horizon + 1))
        .rev()
        .find(|&i| schedule.x_active(i - 1, k))
        .unwrap_or(1)
}
