//! Locales, placement on CPU nodes and FPGA regions, runtime monitoring
//! and the reconfiguration loop driven by it.

mod dse;
mod monitor;
mod workload;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::{positive_u64, unit_fraction};
use crate::jir::QualName;

pub use dse::{
    propose_candidates, reconfigure, run_dse, speculate, Candidate, CandidateRecord, Decision,
    DseOutcome, DseState, HistoryEntry, Move, SpecCache, Speculation,
};
pub use monitor::{monitor_window, MethodStats, MonitorError, MonitorSample};
pub use workload::{parse_workload, Invocation, TraceArg, Workload, WorkloadError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Locale {
    pub id: usize,
    pub name: String,
    pub methods: Vec<QualName>,
    pub data: Vec<String>,
    /// Expected share of invocations, 0..1.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub cpu_nodes: u32,
    /// Cycles per interpreted instruction.
    pub speed_factor: u64,
    pub regions: u32,
    pub region_capacity: u64,
    pub reconfig_delay: u64,
    pub hop_penalty: u64,
}

impl Default for Platform {
    fn default() -> Self {
        Platform {
            cpu_nodes: 2,
            speed_factor: 4,
            regions: 1,
            region_capacity: 4000,
            reconfig_delay: 100_000,
            hop_penalty: 200,
        }
    }
}

impl Platform {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let Some(name) = key.strip_prefix("platform.") else {
            return Ok(false);
        };
        let v = positive_u64(key, value)?;
        let small = || u32::try_from(v).map_err(|_| format!("`{key}` is too large"));
        match name {
            "cpu_nodes" => self.cpu_nodes = small()?,
            "speed_factor" => self.speed_factor = v,
            "regions" => self.regions = small()?,
            "region_capacity" => self.region_capacity = v,
            "reconfig_delay" => self.reconfig_delay = v,
            "hop_penalty" => self.hop_penalty = v,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(true)
    }

    /// CPU node an FPGA region is attached to.
    pub fn region_node(&self, region: u32) -> u32 {
        region % self.cpu_nodes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseParams {
    /// Minimum relative improvement for accepting a candidate.
    pub threshold: f64,
    /// Invocations per monitoring window; `None` means the whole trace.
    pub window: Option<u64>,
    pub steps: u64,
}

impl Default for DseParams {
    fn default() -> Self {
        DseParams {
            threshold: 0.05,
            window: None,
            steps: 8,
        }
    }
}

impl DseParams {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let Some(name) = key.strip_prefix("dse.") else {
            return Ok(false);
        };
        match name {
            "threshold" => self.threshold = unit_fraction(key, value)?,
            "window" => self.window = Some(positive_u64(key, value)?),
            "steps" => self.steps = positive_u64(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    Cpu(u32),
    /// Kernels in the set run on the region; other methods of the locale run
    /// in software on the node the region is attached to.
    Fpga {
        region: u32,
        kernels: BTreeSet<QualName>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    /// Indexed by locale id.
    pub placements: Vec<Placement>,
}

impl Deployment {
    /// Locale `i` on CPU node `i mod n`.
    pub fn initial(locales: &[Locale], p: &Platform) -> Deployment {
        Deployment {
            placements: locales
                .iter()
                .map(|l| Placement::Cpu(l.id as u32 % p.cpu_nodes))
                .collect(),
        }
    }

    pub fn node_of(&self, locale: usize, p: &Platform) -> u32 {
        match &self.placements[locale] {
            Placement::Cpu(n) => *n,
            Placement::Fpga { region, .. } => p.region_node(*region),
        }
    }

    pub fn is_offloaded(&self, locale: usize, m: &QualName) -> bool {
        matches!(&self.placements[locale], Placement::Fpga { kernels, .. } if kernels.contains(m))
    }

    pub fn kernels(&self) -> impl Iterator<Item = (usize, u32, &QualName)> {
        self.placements
            .iter()
            .enumerate()
            .flat_map(|(l, pl)| match pl {
                Placement::Fpga { region, kernels } => {
                    kernels.iter().map(|k| (l, *region, k)).collect::<Vec<_>>()
                }
                Placement::Cpu(_) => Vec::new(),
            })
    }

    /// Area in use per region, given each kernel's area.
    pub fn region_usage(
        &self,
        p: &Platform,
        area: &dyn Fn(&QualName) -> u64,
    ) -> BTreeMap<u32, u64> {
        let mut used: BTreeMap<u32, u64> = (0..p.regions).map(|r| (r, 0)).collect();
        for (_, r, k) in self.kernels() {
            *used.entry(r).or_insert(0) += area(k);
        }
        used
    }

    pub fn residual(&self, p: &Platform, region: u32, area: &dyn Fn(&QualName) -> u64) -> i128 {
        let used = self
            .region_usage(p, area)
            .get(&region)
            .copied()
            .unwrap_or(0);
        i128::from(p.region_capacity) - i128::from(used)
    }
}

/// Per-invocation hardware cost of offloaded methods, for scoring.
pub trait HwCost {
    fn per_invocation(&self, m: &QualName) -> Option<u64>;
}

impl HwCost for BTreeMap<QualName, u64> {
    fn per_invocation(&self, m: &QualName) -> Option<u64> {
        self.get(m).copied()
    }
}

/// Objective in cycles: offloaded methods cost their hardware cycles (the
/// measured total when every invocation in the sample ran in hardware,
/// otherwise invocations times `hw`), software methods cost interpreted
/// instructions times the speed factor, and each reference to a data item
/// owned by a locale on another node adds the hop penalty.
pub fn score(
    d: &Deployment,
    sample: &MonitorSample,
    p: &Platform,
    locales: &[Locale],
    hw: &dyn HwCost,
) -> u64 {
    let owner: BTreeMap<&str, usize> = locales
        .iter()
        .flat_map(|l| l.data.iter().map(move |x| (x.as_str(), l.id)))
        .collect();
    let mut total = 0u64;
    for (m, s) in &sample.methods {
        let Some(l) = locales.iter().find(|l| l.methods.contains(m)) else {
            continue;
        };
        total += if d.is_offloaded(l.id, m) {
            if s.hw_runs == s.invocations && s.invocations > 0 {
                s.hw_cycles
            } else {
                let per = hw.per_invocation(m).unwrap_or_else(|| {
                    s.sw_instructions.div_ceil(s.invocations.max(1)) * p.speed_factor
                });
                per * s.invocations
            }
        } else {
            s.sw_instructions * p.speed_factor
        };
        let here = d.node_of(l.id, p);
        for (data, n) in &s.data_refs {
            if let Some(&o) = owner.get(data.as_str()) {
                if d.node_of(o, p) != here {
                    total += n * p.hop_penalty;
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_method(inv: u64, instr: u64) -> MonitorSample {
        let mut s = MonitorSample::default();
        s.methods.insert(
            QualName::new("A", "f"),
            MethodStats {
                invocations: inv,
                sw_instructions: inv * instr,
                ..Default::default()
            },
        );
        s
    }

    fn locale(id: usize, m: &str, data: &[&str]) -> Locale {
        Locale {
            id,
            name: format!("l{id}"),
            methods: vec![QualName::new("A", m)],
            data: data.iter().map(|s| s.to_string()).collect(),
            weight: 0.0,
        }
    }

    #[test]
    fn score_software_only() {
        let p = Platform::default();
        let ls = vec![locale(0, "f", &[])];
        let d = Deployment::initial(&ls, &p);
        let empty: BTreeMap<QualName, u64> = BTreeMap::new();
        assert_eq!(score(&d, &one_method(100, 50), &p, &ls, &empty), 20_000);
    }

    #[test]
    fn score_offloaded_uses_measured_cycles() {
        let p = Platform::default();
        let ls = vec![locale(0, "f", &[])];
        let d = Deployment {
            placements: vec![Placement::Fpga {
                region: 0,
                kernels: [QualName::new("A", "f")].into(),
            }],
        };
        let mut s = one_method(100, 50);
        let st = s.methods.get_mut(&QualName::new("A", "f")).unwrap();
        st.hw_runs = 100;
        st.hw_cycles = 8000;
        let empty: BTreeMap<QualName, u64> = BTreeMap::new();
        assert_eq!(score(&d, &s, &p, &ls, &empty), 8000);
        // Without measurements the per-invocation estimate is used.
        let s = one_method(100, 50);
        let est: BTreeMap<QualName, u64> = [(QualName::new("A", "f"), 80)].into();
        assert_eq!(score(&d, &s, &p, &ls, &est), 8000);
    }

    #[test]
    fn score_adds_hop_penalty_per_cross_reference() {
        let p = Platform::default();
        let ls = vec![locale(0, "f", &[]), locale(1, "g", &["buf"])];
        let mut s = one_method(100, 50);
        s.methods
            .get_mut(&QualName::new("A", "f"))
            .unwrap()
            .data_refs
            .insert("buf".into(), 10);
        let empty: BTreeMap<QualName, u64> = BTreeMap::new();
        let split = Deployment {
            placements: vec![Placement::Cpu(0), Placement::Cpu(1)],
        };
        let together = Deployment {
            placements: vec![Placement::Cpu(0), Placement::Cpu(0)],
        };
        assert_eq!(
            score(&split, &s, &p, &ls, &empty) - score(&together, &s, &p, &ls, &empty),
            2000
        );
    }

    #[test]
    fn platform_keys() {
        let mut p = Platform::default();
        assert_eq!(p.set("platform.regions", "3"), Ok(true));
        assert_eq!(p.regions, 3);
        assert!(p.set("platform.bogus", "1").is_err());
        assert!(p.set("platform.hop_penalty", "0").is_err());
        assert_eq!(p.set("dse.window", "3"), Ok(false));
    }
}
