//! Virtual calls as a class-id read plus a compare chain of direct calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Emitter, TransformError};
use crate::analysis::SiteId;
use crate::jir::{Cond, Instr, Program, QualName, TrapKind};

/// Offset of the class-id header word from an object handle.
pub const CLASS_ID_OFFSET: i32 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchEntry {
    pub named: QualName,
    /// Ordered branches: receiver class id, class name, direct target.
    pub branches: Vec<(i32, String, QualName)>,
    /// Distinct targets in target-set order.
    pub targets: Vec<QualName>,
}

impl DispatchEntry {
    /// Sites with more than one target need a selector read and a
    /// multiplexer; single-target sites become direct calls.
    pub fn is_polymorphic(&self) -> bool {
        self.targets.len() > 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub sites: BTreeMap<SiteId, DispatchEntry>,
}

impl DispatchPlan {
    /// Number of multiplexer branches summed over polymorphic sites.
    pub fn mux_branches(&self) -> usize {
        self.sites
            .values()
            .filter(|e| e.is_polymorphic())
            .map(|e| e.branches.len())
            .sum()
    }
}

impl Emitter<'_> {
    pub(super) fn lower_dispatch(
        &mut self,
        pc: usize,
        named: &QualName,
    ) -> Result<(), TransformError> {
        let site = self
            .a
            .targets
            .get(self.q, pc as u32)
            .cloned()
            .ok_or_else(|| TransformError::Internal {
                method: self.q.clone(),
                message: format!("no target set for site {pc}"),
            })?;
        let (_, decl) = self
            .p
            .resolve_method(&named.class, &named.member)
            .expect("validated virtual call");
        let argc = decl.params.len() as u16;
        let recv = self.tmp(3);
        let cls = self.tmp(4);
        let args: Vec<u16> = (0..argc).map(|j| self.tmp(5 + j)).collect();
        for &a in args.iter().rev() {
            self.op(Instr::Store(a));
        }
        self.op(Instr::Store(recv));
        let null = self.trap(TrapKind::NullDeref);
        self.op(Instr::Load(recv));
        self.op(Instr::Const(0));
        self.op(Instr::If(Cond::Eq, null));

        let branches: Vec<(i32, String, QualName)> = site
            .targets
            .iter()
            .flat_map(|t| {
                site.receivers
                    .iter()
                    .filter(move |(_, rt)| rt == t)
                    .map(|(c, rt)| (class_id(self.p, c), c.clone(), rt.clone()))
            })
            .collect();
        let entry = DispatchEntry {
            named: named.clone(),
            branches: branches.clone(),
            targets: site.targets.clone(),
        };
        self.plan.sites.insert(
            SiteId {
                method: self.q.clone(),
                index: pc as u32,
            },
            entry,
        );

        let push_args = |e: &mut Self| {
            e.op(Instr::Load(recv));
            for &a in &args {
                e.op(Instr::Load(a));
            }
        };
        match site.targets.len() {
            0 => {
                let bad = self.trap(TrapKind::BadDispatch);
                self.op(Instr::Goto(bad));
            }
            1 => {
                push_args(self);
                self.emit_call(&site.targets[0]);
            }
            _ => {
                let bad = self.trap(TrapKind::BadDispatch);
                self.op(Instr::Load(recv));
                self.op(Instr::BusRead {
                    offset: CLASS_ID_OFFSET,
                });
                self.op(Instr::Store(cls));
                let call_labels: Vec<String> = site
                    .targets
                    .iter()
                    .map(|_| self.fresh_label("dispatch"))
                    .collect();
                for (id, _, t) in &branches {
                    let j = site
                        .targets
                        .iter()
                        .position(|x| x == t)
                        .expect("target listed");
                    self.op(Instr::Load(cls));
                    self.op(Instr::Const(*id));
                    self.op(Instr::If(Cond::Eq, call_labels[j].clone()));
                }
                self.op(Instr::Goto(bad));
                let join = self.fresh_label("join");
                let n = site.targets.len();
                for (j, t) in site.targets.iter().enumerate() {
                    self.label(call_labels[j].clone());
                    push_args(self);
                    self.emit_call(t);
                    if j + 1 < n {
                        self.op(Instr::Goto(join.clone()));
                    }
                }
                self.label(join);
            }
        }
        Ok(())
    }
}

fn class_id(p: &Program, class: &str) -> i32 {
    Program::class_tag(p.class_index(class).expect("declared class"))
}
