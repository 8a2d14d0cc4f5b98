//! Greedy single-move exploration with an improvement threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    monitor_window, score, Deployment, Locale, MonitorError, MonitorSample, Placement, Platform,
    Workload,
};
use crate::config::RunConfig;
use crate::cosim::{compile, Compiled};
use crate::hwmodel::{estimate_area, estimate_latency, AreaEstimate, LatencyReport, NodeOp};
use crate::jir::{Linked, Program, QualName};

/// Result of synthesizing one method as a kernel, shared by every
/// candidate that places it in hardware.
pub struct KernelSpec {
    pub compiled: Compiled,
    pub area: AreaEstimate,
    pub latency: LatencyReport,
    /// Static cycles summed over all kernel blocks, and source instructions
    /// of the kernel methods; their ratio projects input-dependent kernels.
    pub static_cycles: u64,
    pub source_ops: u64,
}

impl KernelSpec {
    /// Exact latency, or the interpreted instruction count scaled by the
    /// kernel's static cycles per source instruction.
    pub fn per_invocation(&self, mean_sw_instructions: u64) -> u64 {
        self.latency.exact().unwrap_or_else(|| {
            let num = u128::from(mean_sw_instructions) * u128::from(self.static_cycles);
            let den = u128::from(self.source_ops.max(1));
            u64::try_from(num.div_ceil(den)).unwrap_or(u64::MAX)
        })
    }
}

/// Synthesis results per method; `Err` holds the reason it cannot be
/// offloaded.
#[derive(Default)]
pub struct SpecCache {
    entries: BTreeMap<QualName, Result<KernelSpec, String>>,
}

impl SpecCache {
    /// Synthesizes every method in `methods` (in parallel).
    pub fn build(p: &Program, methods: &BTreeSet<QualName>, cfg: &RunConfig) -> SpecCache {
        let list: Vec<&QualName> = methods.iter().collect();
        let built: Vec<Result<KernelSpec, String>> =
            list.par_iter().map(|q| synthesize(p, q, cfg)).collect();
        SpecCache {
            entries: list.into_iter().cloned().zip(built).collect(),
        }
    }

    pub fn get(&self, m: &QualName) -> Option<&KernelSpec> {
        self.entries.get(m).and_then(|r| r.as_ref().ok())
    }

    pub fn reason(&self, m: &QualName) -> Option<&str> {
        match self.entries.get(m) {
            Some(Err(r)) => Some(r),
            Some(Ok(_)) => None,
            None => Some("not synthesized"),
        }
    }

    fn area(&self, m: &QualName) -> u64 {
        self.get(m).map_or(0, |s| s.area.total)
    }
}

fn synthesize(p: &Program, q: &QualName, cfg: &RunConfig) -> Result<KernelSpec, String> {
    let compiled = compile(p, q, cfg).map_err(|e| e.to_string())?;
    let k = &compiled.scheduled;
    let area = estimate_area(k, &cfg.cost, &k.graph.dispatch);
    let latency = estimate_latency(k, &cfg.sim.bus, &cfg.sim.channel);
    let mut static_cycles = 0u64;
    for (mi, m) in k.graph.methods.iter().enumerate() {
        for (bi, b) in m.reachable_blocks() {
            static_cycles += u64::from(k.blocks[mi][bi].latency);
            for n in &b.nodes {
                static_cycles += match &n.op {
                    NodeOp::BusBurst { len, .. } => cfg.sim.bus.transaction(u64::from(*len)),
                    op if op.is_bus() => cfg.sim.bus.transaction(1),
                    NodeOp::Syscall(_) => cfg.sim.channel.roundtrip,
                    _ => 0,
                };
            }
        }
    }
    let source_ops = compiled
        .lowered
        .methods
        .iter()
        .filter_map(|(q, _)| p.method(q))
        .map(|m| m.op_count() as u64)
        .sum();
    Ok(KernelSpec {
        compiled,
        area,
        latency,
        static_cycles,
        source_ops,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "kebab-case")]
pub enum Move {
    Offload {
        locale: usize,
        method: QualName,
        region: u32,
    },
    Evict {
        locale: usize,
        method: QualName,
    },
    Swap {
        evict_locale: usize,
        evict: QualName,
        locale: usize,
        method: QualName,
        region: u32,
    },
    Merge {
        locale: usize,
        onto: usize,
    },
}

impl Move {
    fn locale(&self) -> usize {
        match self {
            Move::Offload { locale, .. }
            | Move::Evict { locale, .. }
            | Move::Swap { locale, .. } => *locale,
            Move::Merge { locale, .. } => *locale,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Move::Offload { .. } => 0,
            Move::Swap { .. } => 1,
            Move::Evict { .. } => 2,
            Move::Merge { .. } => 3,
        }
    }

    /// Method placed into hardware by this move.
    fn offloads(&self) -> Option<&QualName> {
        match self {
            Move::Offload { method, .. } | Move::Swap { method, .. } => Some(method),
            _ => None,
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Move::Offload { method, region, .. } => {
                write!(f, "offload {method} to region {region}")
            }
            Move::Evict { method, .. } => write!(f, "evict {method}"),
            Move::Swap {
                evict,
                method,
                region,
                ..
            } => write!(f, "swap {evict} for {method} in region {region}"),
            Move::Merge { locale, onto } => {
                write!(f, "merge locale {locale} onto the node of locale {onto}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub mv: Move,
    /// Estimated cycles saved over the current deployment.
    pub benefit: i128,
    pub deployment: Deployment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Speculation {
    pub area: Option<AreaEstimate>,
    pub latency: Option<LatencyReport>,
    pub feasible: bool,
    pub reason: Option<String>,
    /// Objective of the candidate deployment on the current sample.
    pub projected: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseState {
    pub deployment: Deployment,
    pub objective: Option<u64>,
    pub threshold: f64,
    pub reconfigurations: u64,
    /// Cycles elapsed: window objectives plus reconfiguration delays.
    pub timeline: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Accepted,
    /// Candidates existed but none was feasible with enough gain.
    Refused,
    NoCandidates,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub description: String,
    pub benefit: i128,
    pub area: Option<u64>,
    pub latency: Option<String>,
    pub feasible: bool,
    pub reason: Option<String>,
    pub projected: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub window: u64,
    pub sample_digest: String,
    pub objective_before: u64,
    pub candidate: Option<String>,
    pub decision: Decision,
    pub objective_after: u64,
    pub timeline: u64,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseOutcome {
    pub locales: Vec<Locale>,
    pub initial: Deployment,
    pub state: DseState,
    pub history: Vec<HistoryEntry>,
    /// Per region: capacity used after each window.
    pub region_usage: Vec<BTreeMap<u32, u64>>,
}

#[derive(Debug, Error)]
pub enum DseError {
    #[error("link error: {0}")]
    Link(String),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("capacity exceeded in region {region}: {used} > {capacity}")]
    Capacity {
        region: u32,
        used: u64,
        capacity: u64,
    },
}

/// Per-invocation hardware estimates for every synthesizable method.
fn estimates(cache: &SpecCache, sample: &MonitorSample) -> BTreeMap<QualName, u64> {
    sample
        .methods
        .iter()
        .filter_map(|(m, s)| {
            let spec = cache.get(m)?;
            Some((
                m.clone(),
                spec.per_invocation(s.sw_instructions.div_ceil(s.invocations.max(1))),
            ))
        })
        .collect()
}

fn software_cycles(sample: &MonitorSample, p: &Platform, m: &QualName) -> i128 {
    sample.methods.get(m).map_or(0, |s| {
        i128::from(s.sw_instructions) * i128::from(p.speed_factor)
    })
}

fn hardware_cycles(sample: &MonitorSample, est: &BTreeMap<QualName, u64>, m: &QualName) -> i128 {
    let Some(s) = sample.methods.get(m) else {
        return 0;
    };
    if s.hw_runs == s.invocations && s.invocations > 0 {
        i128::from(s.hw_cycles)
    } else {
        i128::from(est.get(m).copied().unwrap_or(0)) * i128::from(s.invocations)
    }
}

fn with_kernel(d: &Deployment, locale: usize, region: u32, m: &QualName) -> Deployment {
    let mut d = d.clone();
    match &mut d.placements[locale] {
        Placement::Fpga { kernels, .. } => {
            kernels.insert(m.clone());
        }
        pl @ Placement::Cpu(_) => {
            *pl = Placement::Fpga {
                region,
                kernels: [m.clone()].into(),
            }
        }
    }
    d
}

fn without_kernel(d: &Deployment, locale: usize, m: &QualName, p: &Platform) -> Deployment {
    let mut d = d.clone();
    if let Placement::Fpga { region, kernels } = &mut d.placements[locale] {
        kernels.remove(m);
        if kernels.is_empty() {
            d.placements[locale] = Placement::Cpu(p.region_node(*region));
        }
    }
    d
}

/// Single-move edits of the current deployment, best estimated benefit
/// first; ties by locale id, then move kind.
pub fn propose_candidates(
    d: &Deployment,
    sample: &MonitorSample,
    locales: &[Locale],
    p: &Platform,
    cache: &SpecCache,
) -> Vec<Candidate> {
    let est = estimates(cache, sample);
    let area = |m: &QualName| cache.area(m);
    let gain = |m: &QualName| software_cycles(sample, p, m) - hardware_cycles(sample, &est, m);
    let mut out = Vec::new();

    let mut fresh = Vec::new();
    for l in locales {
        for m in &l.methods {
            let active = sample.methods.get(m).is_some_and(|s| s.invocations > 0);
            if active && !d.is_offloaded(l.id, m) && cache.get(m).is_some() {
                fresh.push((l.id, m));
            }
        }
    }
    let kernels: Vec<(usize, u32, QualName)> =
        d.kernels().map(|(l, r, k)| (l, r, k.clone())).collect();

    for &(l, m) in &fresh {
        let region = match &d.placements[l] {
            Placement::Fpga { region, .. } => *region,
            Placement::Cpu(_) => (0..p.regions)
                .max_by_key(|&r| (d.residual(p, r, &area), std::cmp::Reverse(r)))
                .expect("at least one region"),
        };
        out.push(Candidate {
            mv: Move::Offload {
                locale: l,
                method: m.clone(),
                region,
            },
            benefit: gain(m),
            deployment: with_kernel(d, l, region, m),
        });
        // Make room by evicting the coldest kernel of the region.
        if d.residual(p, region, &area) < i128::from(area(m)) {
            let coldest = kernels
                .iter()
                .filter(|(kl, r, k)| *r == region && !(*kl == l && k == m))
                .min_by_key(|(kl, _, k)| (gain(k), *kl, k.clone()));
            if let Some((kl, _, k)) = coldest {
                let evicted = without_kernel(d, *kl, k, p);
                if matches!(&evicted.placements[l], Placement::Fpga { region: r, .. } if *r != region)
                {
                    continue;
                }
                out.push(Candidate {
                    mv: Move::Swap {
                        evict_locale: *kl,
                        evict: k.clone(),
                        locale: l,
                        method: m.clone(),
                        region,
                    },
                    benefit: gain(m) - gain(k),
                    deployment: with_kernel(&evicted, l, region, m),
                });
            }
        }
    }
    for (l, _, k) in &kernels {
        out.push(Candidate {
            mv: Move::Evict {
                locale: *l,
                method: k.clone(),
            },
            benefit: -gain(k),
            deployment: without_kernel(d, *l, k, p),
        });
    }

    let owner: BTreeMap<&str, usize> = locales
        .iter()
        .flat_map(|l| l.data.iter().map(move |x| (x.as_str(), l.id)))
        .collect();
    let refs_between = |a: &Locale, b: &Locale| -> u64 {
        let one_way = |x: &Locale, y: &Locale| -> u64 {
            x.methods
                .iter()
                .filter_map(|m| sample.methods.get(m))
                .flat_map(|s| s.data_refs.iter())
                .filter(|(data, _)| owner.get(data.as_str()) == Some(&y.id))
                .map(|(_, n)| *n)
                .sum()
        };
        one_way(a, b) + one_way(b, a)
    };
    for a in locales {
        for b in locales.iter().filter(|b| b.id > a.id) {
            let (Placement::Cpu(na), Placement::Cpu(nb)) =
                (&d.placements[a.id], &d.placements[b.id])
            else {
                continue;
            };
            let refs = refs_between(a, b);
            if na == nb || refs == 0 {
                continue;
            }
            let mut moved = d.clone();
            moved.placements[b.id] = Placement::Cpu(*na);
            out.push(Candidate {
                mv: Move::Merge {
                    locale: b.id,
                    onto: a.id,
                },
                benefit: i128::from(refs) * i128::from(p.hop_penalty),
                deployment: moved,
            });
        }
    }

    out.sort_by(|x, y| {
        y.benefit
            .cmp(&x.benefit)
            .then(x.mv.locale().cmp(&y.mv.locale()))
            .then(x.mv.rank().cmp(&y.mv.rank()))
            .then_with(|| x.mv.to_string().cmp(&y.mv.to_string()))
    });
    out
}

/// Estimates a candidate without touching the live deployment.
pub fn speculate(
    c: &Candidate,
    sample: &MonitorSample,
    locales: &[Locale],
    p: &Platform,
    cache: &SpecCache,
) -> Speculation {
    let est = estimates(cache, sample);
    let projected = score(&c.deployment, sample, p, locales, &est);
    let (area, latency) = match c.mv.offloads() {
        Some(m) => match cache.get(m) {
            Some(s) => (Some(s.area), Some(s.latency.clone())),
            None => {
                return Speculation {
                    area: None,
                    latency: None,
                    feasible: false,
                    reason: Some(cache.reason(m).unwrap_or("not synthesizable").to_string()),
                    projected,
                }
            }
        },
        None => (None, None),
    };
    let usage = c.deployment.region_usage(p, &|m| cache.area(m));
    let over = usage.iter().find(|(_, &u)| u > p.region_capacity);
    let (feasible, reason) = match over {
        Some((r, u)) => (
            false,
            Some(format!(
                "region {r} would hold {u} AU, capacity {}",
                p.region_capacity
            )),
        ),
        None => (true, None),
    };
    Speculation {
        area,
        latency,
        feasible,
        reason,
        projected,
    }
}

/// Applies an accepted candidate. Refuses infeasible or insufficient-gain
/// candidates.
pub fn reconfigure(
    s: &mut DseState,
    c: &Candidate,
    spec: &Speculation,
    current: u64,
    p: &Platform,
    cache: &SpecCache,
) -> Result<(), String> {
    if !spec.feasible {
        return Err(format!("candidate `{}` is infeasible", c.mv));
    }
    if !accepts(s.threshold, current, spec.projected) {
        return Err(format!(
            "candidate `{}` projects {} against {current}, below the improvement threshold",
            c.mv, spec.projected
        ));
    }
    for (r, used) in c.deployment.region_usage(p, &|m| cache.area(m)) {
        if used > p.region_capacity {
            return Err(format!("region {r} over capacity"));
        }
    }
    s.deployment = c.deployment.clone();
    s.reconfigurations += 1;
    s.timeline += p.reconfig_delay;
    s.objective = Some(spec.projected);
    Ok(())
}

fn accepts(threshold: f64, current: u64, projected: u64) -> bool {
    (projected as f64) <= (1.0 - threshold) * current as f64
}

/// Closed loop over `steps` windows of the workload.
pub fn run_dse(
    p: &Program,
    w: &Workload,
    cfg: &RunConfig,
    steps: u64,
) -> Result<DseOutcome, DseError> {
    let platform = &cfg.platform;
    let linked = Linked::new(p).map_err(DseError::Link)?;
    let invoked: BTreeSet<QualName> = w.calls.iter().map(|c| c.method.clone()).collect();
    let cache = SpecCache::build(p, &invoked, cfg);
    let initial = Deployment::initial(&w.locales, platform);
    let mut state = DseState {
        deployment: initial.clone(),
        objective: None,
        threshold: cfg.dse.threshold,
        reconfigurations: 0,
        timeline: 0,
    };
    let n = w.calls.len();
    let size = cfg.dse.window.map_or(n, |x| x as usize).max(1);
    let mut history = Vec::new();
    let mut region_usage = Vec::new();
    for step in 0..steps {
        let indices: Vec<usize> = if n == 0 {
            Vec::new()
        } else {
            (0..size).map(|j| (step as usize * size + j) % n).collect()
        };
        let sample = monitor_window(
            p,
            &linked,
            w,
            step,
            &indices,
            &state.deployment,
            &|m| cache.get(m).map(|s| &s.compiled),
            cfg,
        )?;
        let est = estimates(&cache, &sample);
        let current = score(&state.deployment, &sample, platform, &w.locales, &est);
        state.objective = Some(current);
        let cands = propose_candidates(&state.deployment, &sample, &w.locales, platform, &cache);
        let specs: Vec<Speculation> = cands
            .par_iter()
            .map(|c| speculate(c, &sample, &w.locales, platform, &cache))
            .collect();
        let chosen = cands
            .iter()
            .zip(&specs)
            .find(|(_, s)| s.feasible && accepts(state.threshold, current, s.projected));
        state.timeline += current;
        let (decision, candidate, after) = match chosen {
            Some((c, s)) => {
                reconfigure(&mut state, c, s, current, platform, &cache)
                    .expect("chosen candidate passes the contract");
                (Decision::Accepted, Some(c.mv.to_string()), s.projected)
            }
            None if cands.is_empty() => (Decision::NoCandidates, None, current),
            None => (Decision::Refused, None, current),
        };
        let usage = state.deployment.region_usage(platform, &|m| cache.area(m));
        for (&region, &used) in &usage {
            if used > platform.region_capacity {
                return Err(DseError::Capacity {
                    region,
                    used,
                    capacity: platform.region_capacity,
                });
            }
        }
        region_usage.push(usage);
        history.push(HistoryEntry {
            window: step,
            sample_digest: sample.digest(),
            objective_before: current,
            candidate,
            decision,
            objective_after: after,
            timeline: state.timeline,
            candidates: cands
                .iter()
                .zip(&specs)
                .map(|(c, s)| CandidateRecord {
                    description: c.mv.to_string(),
                    benefit: c.benefit,
                    area: s.area.map(|a| a.total),
                    latency: s.latency.as_ref().map(|l| match l.exact() {
                        Some(t) => format!("exact {t}"),
                        None => "input-dependent".to_string(),
                    }),
                    feasible: s.feasible,
                    reason: s.reason.clone(),
                    projected: s.projected,
                })
                .collect(),
        });
    }
    Ok(DseOutcome {
        locales: w.locales.clone(),
        initial,
        state,
        history,
        region_usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::parse_workload;
    use crate::jir::parse_program;

    fn hot() -> (Program, Workload) {
        let p = parse_program(crate::fixtures::DSE_HOT).expect("parses");
        let w = parse_workload(crate::fixtures::DSE_HOT_TRACE, &p).expect("trace parses");
        (p, w)
    }

    fn q(s: &str) -> QualName {
        QualName::try_from(s.to_string()).expect("qualified")
    }

    #[test]
    fn hot_method_is_offloaded_first_and_runs_repeat() {
        let (p, w) = hot();
        let cfg = RunConfig::default();
        let a = run_dse(&p, &w, &cfg, 4).expect("runs");
        assert_eq!(a.history[0].decision, Decision::Accepted);
        assert_eq!(
            a.history[0].candidate.as_deref(),
            Some("offload Hot.dot16 to region 0")
        );
        let hot_locale = w.locale_of(&q("Hot.dot16")).expect("locale").id;
        assert!(a.state.deployment.is_offloaded(hot_locale, &q("Hot.dot16")));
        for h in &a.history {
            assert!(h.objective_after <= h.objective_before);
        }
        for u in &a.region_usage {
            assert!(u.values().all(|&x| x <= cfg.platform.region_capacity));
        }
        let b = run_dse(&p, &w, &cfg, 4).expect("runs");
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn zero_steps_leave_the_initial_deployment() {
        let (p, w) = hot();
        let o = run_dse(&p, &w, &RunConfig::default(), 0).expect("runs");
        assert!(o.history.is_empty());
        assert_eq!(o.state.deployment, o.initial);
    }

    #[test]
    fn rejected_only_trace_never_changes_the_deployment() {
        let (p, _) = hot();
        let w = parse_workload("Risky.check 1\nRisky.check 2\n", &p).expect("trace parses");
        let o = run_dse(&p, &w, &RunConfig::default(), 3).expect("runs");
        assert_eq!(o.state.deployment, o.initial);
        assert!(o
            .history
            .iter()
            .all(|h| h.decision == Decision::NoCandidates));
    }

    #[test]
    fn tiny_region_makes_every_offload_infeasible() {
        let (p, w) = hot();
        let mut cfg = RunConfig::default();
        cfg.platform.region_capacity = 10;
        let o = run_dse(&p, &w, &cfg, 2).expect("runs");
        assert_eq!(o.state.reconfigurations, 0);
        let offloads: Vec<_> = o.history[0]
            .candidates
            .iter()
            .filter(|c| c.description.starts_with("offload"))
            .collect();
        assert!(!offloads.is_empty());
        assert!(offloads.iter().all(|c| !c.feasible && c.reason.is_some()));
    }

    #[test]
    fn threshold_arithmetic() {
        assert!(accepts(0.05, 1000, 700));
        assert!(accepts(0.05, 1000, 950));
        assert!(!accepts(0.05, 1000, 970));
        let (p, w) = hot();
        let cfg = RunConfig::default();
        let cache = SpecCache::build(&p, &[q("Hot.dot16")].into(), &cfg);
        let d = Deployment::initial(&w.locales, &cfg.platform);
        let c = Candidate {
            mv: Move::Offload {
                locale: 0,
                method: q("Hot.dot16"),
                region: 0,
            },
            benefit: 0,
            deployment: with_kernel(&d, 0, 0, &q("Hot.dot16")),
        };
        let spec = |projected| Speculation {
            area: None,
            latency: None,
            feasible: true,
            reason: None,
            projected,
        };
        let mut s = DseState {
            deployment: d.clone(),
            objective: Some(1000),
            threshold: 0.05,
            reconfigurations: 0,
            timeline: 0,
        };
        assert!(reconfigure(&mut s, &c, &spec(970), 1000, &cfg.platform, &cache).is_err());
        assert_eq!(s.deployment, d);
        reconfigure(&mut s, &c, &spec(700), 1000, &cfg.platform, &cache)
            .expect("30% gain accepted");
        assert_eq!(s.reconfigurations, 1);
        assert_eq!(s.timeline, cfg.platform.reconfig_delay);
    }

    #[test]
    fn full_region_proposes_evicting_the_cold_kernel() {
        let (p, w) = hot();
        let mut cfg = RunConfig::default();
        let methods: BTreeSet<QualName> = w.calls.iter().map(|c| c.method.clone()).collect();
        let cache = SpecCache::build(&p, &methods, &cfg);
        let (hot_a, cold_a) = (cache.area(&q("Hot.dot16")), cache.area(&q("Cold.bump")));
        assert!(hot_a > 0 && cold_a > 0);
        cfg.platform.region_capacity = hot_a.max(cold_a);
        cfg.platform.regions = 1;
        let cold = w.locale_of(&q("Cold.bump")).expect("locale").id;
        let d = with_kernel(
            &Deployment::initial(&w.locales, &cfg.platform),
            cold,
            0,
            &q("Cold.bump"),
        );
        let linked = Linked::new(&p).expect("links");
        let all: Vec<usize> = (0..w.calls.len()).collect();
        let sample = monitor_window(
            &p,
            &linked,
            &w,
            0,
            &all,
            &d,
            &|m| cache.get(m).map(|s| &s.compiled),
            &cfg,
        )
        .expect("monitors");
        assert_eq!(sample.methods[&q("Cold.bump")].hw_runs, 2);
        let cands = propose_candidates(&d, &sample, &w.locales, &cfg.platform, &cache);
        let swap = cands
            .iter()
            .find(|c| matches!(&c.mv, Move::Swap { evict, method, .. } if *evict == q("Cold.bump") && *method == q("Hot.dot16")))
            .expect("swap proposed");
        let spec = speculate(swap, &sample, &w.locales, &cfg.platform, &cache);
        assert!(spec.feasible);
        let usage = swap
            .deployment
            .region_usage(&cfg.platform, &|m| cache.area(m));
        assert_eq!(usage.get(&0).copied(), Some(hot_a));
        assert!(cands
            .iter()
            .any(|c| matches!(&c.mv, Move::Evict { method, .. } if *method == q("Cold.bump"))));
    }

    #[test]
    fn input_dependent_kernels_are_feasible_and_use_projection() {
        let p = parse_program(crate::fixtures::COLLATZ).expect("parses");
        let w = parse_workload("Collatz.steps 27\nCollatz.steps 97\nCollatz.steps 31\n", &p)
            .expect("trace parses");
        let cfg = RunConfig::default();
        let o = run_dse(&p, &w, &cfg, 2).expect("runs");
        let first = &o.history[0];
        let rec = first.candidates.first().expect("offload candidate");
        assert_eq!(rec.latency.as_deref(), Some("input-dependent"));
        assert!(rec.feasible);
        assert_eq!(first.decision, Decision::Accepted);
        // Once offloaded, the next window is scored from measured cycles.
        let measured = o.history[1].objective_before;
        assert!(measured < first.objective_before);
    }
}
