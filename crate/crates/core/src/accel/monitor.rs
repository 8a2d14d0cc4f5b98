//! Per-window telemetry. Every invocation runs on the reference
//! interpreter; invocations of offloaded methods also run on their kernel,
//! and the two outcomes must agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Deployment, Workload};
use crate::config::RunConfig;
use crate::cosim::Compiled;
use crate::jir::{interpret_sized, Linked, Program, QualName};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodStats {
    pub invocations: u64,
    /// Interpreted instructions summed over invocations.
    pub sw_instructions: u64,
    /// Invocations that ran on a kernel, and their cycles.
    pub hw_runs: u64,
    pub hw_cycles: u64,
    /// Data item -> references passed as arguments.
    pub data_refs: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub window: u64,
    pub methods: BTreeMap<QualName, MethodStats>,
}

impl MonitorSample {
    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("sample serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("invocation {index} of `{method}`: {message}")]
    Run {
        index: usize,
        method: QualName,
        message: String,
    },
    #[error("invocation {index} of `{method}`: kernel result differs from software ({detail})")]
    Mismatch {
        index: usize,
        method: QualName,
        detail: String,
    },
}

/// Runs the invocations at `indices` (into `w.calls`) under deployment `d`.
#[allow(clippy::too_many_arguments)]
pub fn monitor_window<'k>(
    p: &Program,
    linked: &Linked,
    w: &Workload,
    window: u64,
    indices: &[usize],
    d: &Deployment,
    kernel: &dyn Fn(&QualName) -> Option<&'k Compiled>,
    cfg: &RunConfig,
) -> Result<MonitorSample, MonitorError> {
    let mut sample = MonitorSample {
        window,
        methods: BTreeMap::new(),
    };
    for &i in indices {
        let inv = &w.calls[i];
        let args = w.args(inv);
        let run_err = |message: String| MonitorError::Run {
            index: i,
            method: inv.method.clone(),
            message,
        };
        let sw = interpret_sized(
            p,
            linked,
            &inv.method,
            &args,
            cfg.sim.host_fuel,
            cfg.heap_words,
        )
        .map_err(|e| run_err(e.to_string()))?;
        let st = sample.methods.entry(inv.method.clone()).or_default();
        st.invocations += 1;
        st.sw_instructions += sw.instructions;
        for a in &inv.args {
            if let super::TraceArg::Data(name) = a {
                *st.data_refs.entry(name.clone()).or_insert(0) += 1;
            }
        }
        let locale = w
            .locale_of(&inv.method)
            .expect("every invoked method has a locale");
        if !d.is_offloaded(locale.id, &inv.method) {
            continue;
        }
        let k =
            kernel(&inv.method).ok_or_else(|| run_err("offloaded method has no kernel".into()))?;
        let hw = k.run(p, &args, cfg).map_err(|e| run_err(e.to_string()))?;
        let mismatch = if hw.value != sw.value {
            Some(format!("value {:?} vs {:?}", hw.value, sw.value))
        } else if hw.trap.map(|t| t.kind) != sw.trap.as_ref().map(|t| t.kind) {
            Some(format!(
                "trap {:?} vs {:?}",
                hw.trap.map(|t| t.kind),
                sw.trap.as_ref().map(|t| t.kind)
            ))
        } else if hw.heap != sw.heap {
            Some("heap images differ".into())
        } else if hw.log != sw.log {
            Some("logs differ".into())
        } else {
            None
        };
        if let Some(detail) = mismatch {
            return Err(MonitorError::Mismatch {
                index: i,
                method: inv.method.clone(),
                detail,
            });
        }
        st.hw_runs += 1;
        st.hw_cycles += hw.total_cycles;
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::{parse_workload, SpecCache};
    use crate::jir::parse_program;

    #[test]
    fn counts_invocations_data_references_and_kernel_runs() {
        let p = parse_program(crate::fixtures::DSE_HOT).expect("parses");
        let w = parse_workload(crate::fixtures::DSE_HOT_TRACE, &p).expect("trace parses");
        let cfg = RunConfig::default();
        let linked = Linked::new(&p).expect("links");
        let hot = QualName::new("Hot", "dot16");
        let cache = SpecCache::build(&p, &[hot.clone()].into(), &cfg);
        let all: Vec<usize> = (0..w.calls.len()).collect();
        let sw_only = Deployment::initial(&w.locales, &cfg.platform);
        let kernel = |m: &QualName| cache.get(m).map(|s| &s.compiled);
        let a = monitor_window(&p, &linked, &w, 0, &all, &sw_only, &kernel, &cfg).expect("runs");
        let s = &a.methods[&hot];
        assert_eq!((s.invocations, s.hw_runs), (20, 0));
        assert_eq!(s.data_refs.get("va"), Some(&20));
        assert_eq!(
            a.methods[&QualName::new("Stats", "first")]
                .data_refs
                .get("vb"),
            Some(&5)
        );

        let mut d = sw_only.clone();
        d.placements[0] = crate::accel::Placement::Fpga {
            region: 0,
            kernels: [hot.clone()].into(),
        };
        let b = monitor_window(&p, &linked, &w, 0, &all, &d, &kernel, &cfg).expect("runs");
        let s = &b.methods[&hot];
        assert_eq!(s.hw_runs, 20);
        assert!(s.hw_cycles > 0);
        assert_eq!(s.sw_instructions, a.methods[&hot].sw_instructions);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(
            b.digest(),
            monitor_window(&p, &linked, &w, 0, &all, &d, &kernel, &cfg)
                .expect("runs")
                .digest()
        );
    }
}
