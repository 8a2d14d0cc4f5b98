use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{has_body, ClassHierarchy, TargetSet};
use crate::jir::{Instr, MethodKind, Program, QualName};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Hardware,
    /// Instruction indices that must escape to the host.
    HardwareWithSyscalls(Vec<u32>),
    Rejected {
        reason: String,
        index: u32,
        /// Method whose `throw` caused the rejection.
        cause: QualName,
    },
}

impl Verdict {
    pub fn is_rejected(&self) -> bool {
        matches!(self, Verdict::Rejected { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatabilityReport {
    pub verdicts: BTreeMap<QualName, Verdict>,
    /// Methods on a call-graph cycle; hardware reaches them through the
    /// host as software calls.
    pub recursive: BTreeSet<QualName>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OffloadError {
    #[error("nothing to offload: `{method}` is rejected: {reason}")]
    NothingToOffload { method: QualName, reason: String },
    #[error("`{method}` is rejected: {reason}")]
    Rejected { method: QualName, reason: String },
    #[error("`{0}` is not reachable from the analysis roots")]
    Unreachable(QualName),
    #[error("`{0}` is native and cannot be offloaded")]
    Native(QualName),
}

impl TranslatabilityReport {
    pub fn verdict(&self, q: &QualName) -> Option<&Verdict> {
        self.verdicts.get(q)
    }

    /// Whether calls to `q` from hardware go through the host.
    pub fn is_soft(&self, q: &QualName) -> bool {
        self.recursive.contains(q)
    }

    /// Checks that `root` can become a kernel. `is_entry` selects the
    /// "nothing to offload" wording.
    pub fn check_offloadable(
        &self,
        p: &Program,
        root: &QualName,
        is_entry: bool,
    ) -> Result<(), OffloadError> {
        if p.method(root).is_some_and(|m| m.kind == MethodKind::Native) {
            return Err(OffloadError::Native(root.clone()));
        }
        match self.verdicts.get(root) {
            None => Err(OffloadError::Unreachable(root.clone())),
            Some(Verdict::Rejected { reason, .. }) if is_entry => {
                Err(OffloadError::NothingToOffload {
                    method: root.clone(),
                    reason: reason.clone(),
                })
            }
            Some(Verdict::Rejected { reason, .. }) => Err(OffloadError::Rejected {
                method: root.clone(),
                reason: reason.clone(),
            }),
            Some(_) => Ok(()),
        }
    }
}

/// Direct callees of each reachable method, per call instruction.
fn call_edges(
    p: &Program,
    h: &ClassHierarchy,
    t: &TargetSet,
) -> BTreeMap<QualName, Vec<(u32, Vec<QualName>)>> {
    let mut out = BTreeMap::new();
    for q in &h.reachable {
        let Some(m) = p.method(q) else { continue };
        let mut sites = Vec::new();
        for (idx, op) in m.ops().enumerate() {
            match op {
                Instr::Call(c) => sites.push((idx as u32, vec![c.clone()])),
                Instr::CallVirtual(_) => {
                    let targets = t
                        .get(q, idx as u32)
                        .map(|s| s.targets.clone())
                        .unwrap_or_default();
                    sites.push((idx as u32, targets));
                }
                _ => {}
            }
        }
        out.insert(q.clone(), sites);
    }
    out
}

/// Methods on a call-graph cycle (strongly connected components of size > 1
/// or with a self edge).
fn recursive_methods(edges: &BTreeMap<QualName, Vec<(u32, Vec<QualName>)>>) -> BTreeSet<QualName> {
    let nodes: Vec<&QualName> = edges.keys().collect();
    let index_of: BTreeMap<&QualName, usize> =
        nodes.iter().enumerate().map(|(i, q)| (*q, i)).collect();
    let succ: Vec<Vec<usize>> = nodes
        .iter()
        .map(|q| {
            edges[*q]
                .iter()
                .flat_map(|(_, ts)| ts.iter())
                .filter_map(|t| index_of.get(t).copied())
                .collect()
        })
        .collect();

    struct Tarjan<'a> {
        succ: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        sccs: Vec<Vec<usize>>,
    }
    impl Tarjan<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for &w in &self.succ[v] {
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                    _ => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                let mut scc = Vec::new();
                loop {
                    let w = self.stack.pop().expect("scc stack");
                    self.on_stack[w] = false;
                    scc.push(w);
                    if w == v {
                        break;
                    }
                }
                self.sccs.push(scc);
            }
        }
    }
    let n = nodes.len();
    let mut t = Tarjan {
        succ: &succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        sccs: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    let mut out = BTreeSet::new();
    for scc in &t.sccs {
        if scc.len() > 1 || succ[scc[0]].contains(&scc[0]) {
            out.extend(scc.iter().map(|&i| nodes[i].clone()));
        }
    }
    out
}

/// Per-method verdicts over the reachable call graph.
pub fn classify(p: &Program, h: &ClassHierarchy, t: &TargetSet) -> TranslatabilityReport {
    let edges = call_edges(p, h, t);
    let recursive = recursive_methods(&edges);

    let mut rejected: BTreeMap<QualName, Verdict> = BTreeMap::new();
    for q in &h.reachable {
        if !has_body(p, q) {
            continue;
        }
        let m = p.method(q).expect("reachable method");
        if let Some(idx) = m.ops().position(|o| matches!(o, Instr::Throw)) {
            rejected.insert(
                q.clone(),
                Verdict::Rejected {
                    reason: format!("contains `throw` at instruction {idx}"),
                    index: idx as u32,
                    cause: q.clone(),
                },
            );
        }
    }
    loop {
        let mut added = Vec::new();
        for q in &h.reachable {
            if rejected.contains_key(q) || !has_body(p, q) {
                continue;
            }
            'sites: for (idx, targets) in &edges[q] {
                for target in targets {
                    if let Some(Verdict::Rejected { cause, .. }) = rejected.get(target) {
                        added.push((
                            q.clone(),
                            Verdict::Rejected {
                                reason: format!(
                                    "reachable exception via target {target} (throw in {cause})"
                                ),
                                index: *idx,
                                cause: cause.clone(),
                            },
                        ));
                        break 'sites;
                    }
                }
            }
        }
        if added.is_empty() {
            break;
        }
        rejected.extend(added);
    }

    let mut verdicts = BTreeMap::new();
    for q in &h.reachable {
        if !has_body(p, q) {
            continue;
        }
        if let Some(v) = rejected.get(q) {
            verdicts.insert(q.clone(), v.clone());
            continue;
        }
        let m = p.method(q).expect("reachable method");
        let mut sys = Vec::new();
        for (idx, op) in m.ops().enumerate() {
            let escapes = match op {
                Instr::New(_) | Instr::NewArray => true,
                Instr::Call(c) => !has_body(p, c) || recursive.contains(c),
                Instr::CallVirtual(_) => t
                    .get(q, idx as u32)
                    .is_some_and(|s| s.targets.iter().any(|c| recursive.contains(c))),
                _ => false,
            };
            if escapes {
                sys.push(idx as u32);
            }
        }
        verdicts.insert(
            q.clone(),
            if sys.is_empty() {
                Verdict::Hardware
            } else {
                Verdict::HardwareWithSyscalls(sys)
            },
        );
    }
    TranslatabilityReport {
        verdicts,
        recursive,
    }
}
