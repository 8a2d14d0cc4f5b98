//! Rewriting of offloadable methods into kernel code: heap accesses become
//! bus transactions, virtual calls become class-id compare chains over
//! direct calls, and everything the hardware cannot do becomes a numbered
//! syscall to the host.

mod coalesce;
mod dispatch;
mod heap;
mod syscalls;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{has_body, Analysis, OffloadError};
use crate::cfg::Cfg;
use crate::jir::{
    ClassDef, Instr, Item, MethodDef, MethodKind, Program, QualName, SyscallDecl, TrapKind,
};

pub use coalesce::MAX_BURST;
pub use dispatch::{DispatchEntry, DispatchPlan};
pub use syscalls::SyscallTable;

use coalesce::CoalescePlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOptions {
    /// Merge loop-invariant array reads into burst transfers.
    pub coalesce: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { coalesce: true }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error("`{0}` not found")]
    UnknownMethod(QualName),
    #[error("{method}: {message}")]
    Internal { method: QualName, message: String },
}

/// A kernel: the root method plus every hardware method it calls, lowered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoweredKernel {
    pub root: QualName,
    /// Lowered methods, root first, then in discovery order.
    pub methods: Vec<(QualName, MethodDef)>,
    pub syscalls: Vec<SyscallDecl>,
    pub dispatch: DispatchPlan,
    pub options: TransformOptions,
}

impl LoweredKernel {
    pub fn method(&self, q: &QualName) -> Option<&MethodDef> {
        self.methods.iter().find(|(n, _)| n == q).map(|(_, m)| m)
    }

    pub fn syscall(&self, id: u32) -> Option<&SyscallDecl> {
        self.syscalls.get(id as usize).filter(|s| s.id == id)
    }

    /// The kernel as a program in the textual IR (re-parseable).
    pub fn to_program(&self) -> Program {
        let mut classes: Vec<ClassDef> = Vec::new();
        for (q, m) in &self.methods {
            match classes.iter_mut().find(|c| c.name == q.class) {
                Some(c) => c.methods.push(m.clone()),
                None => classes.push(ClassDef {
                    name: q.class.clone(),
                    superclass: None,
                    fields: Vec::new(),
                    methods: vec![m.clone()],
                    line: 0,
                }),
            }
        }
        Program {
            classes,
            entry: Some(self.root.clone()),
            syscalls: self.syscalls.clone(),
        }
    }

    /// Rebuilds a kernel from lowered text parsed back into a program: the
    /// entry is the root, methods keep their textual order.
    pub fn from_program(p: &Program, options: TransformOptions) -> Option<LoweredKernel> {
        let root = p.entry.clone()?;
        let methods: Vec<(QualName, MethodDef)> = p
            .classes
            .iter()
            .flat_map(|c| {
                c.methods
                    .iter()
                    .map(move |m| (QualName::new(&c.name, &m.name), m.clone()))
            })
            .collect();
        let pos = methods.iter().position(|(q, _)| *q == root)?;
        let mut methods = methods;
        let r = methods.remove(pos);
        methods.insert(0, r);
        Some(LoweredKernel {
            root,
            methods,
            syscalls: p.syscalls.clone(),
            dispatch: DispatchPlan::default(),
            options,
        })
    }

    pub fn to_text(&self) -> String {
        crate::jir::program_to_text(&self.to_program())
    }

    /// Opcode occurrence counts over all kernel methods.
    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (_, m) in &self.methods {
            for op in m.ops() {
                *out.entry(op.mnemonic().to_string()).or_insert(0) += 1;
            }
        }
        out
    }

    /// Source opcodes that must not survive lowering, with their locations.
    pub fn forbidden_opcodes(&self) -> Vec<String> {
        let kernel: BTreeSet<&QualName> = self.methods.iter().map(|(q, _)| q).collect();
        let mut out = Vec::new();
        for (q, m) in &self.methods {
            for (i, op) in m.ops().enumerate() {
                let bad = match op {
                    Instr::GetField(_)
                    | Instr::PutField(_)
                    | Instr::ALoad
                    | Instr::AStore
                    | Instr::ArrayLen
                    | Instr::New(_)
                    | Instr::NewArray
                    | Instr::CallVirtual(_)
                    | Instr::Throw
                    | Instr::Null => true,
                    Instr::Call(t) => !kernel.contains(t),
                    _ => false,
                };
                if bad {
                    out.push(format!("{q}@{i}: {}", op.mnemonic()));
                }
            }
        }
        out
    }
}

/// Lowers the kernel rooted at `root`. The root must have been analyzed
/// (it is reachable from the analysis roots) and must not be rejected.
pub fn transform_kernel(
    p: &Program,
    a: &Analysis,
    root: &QualName,
    opts: TransformOptions,
) -> Result<LoweredKernel, TransformError> {
    if p.method(root).is_none() {
        return Err(TransformError::UnknownMethod(root.clone()));
    }
    let is_entry = p.entry.as_ref() == Some(root);
    a.report.check_offloadable(p, root, is_entry)?;

    let members = kernel_members(p, a, root);
    let mut table = SyscallTable::default();
    let mut plan = DispatchPlan::default();
    let mut methods = Vec::new();
    for q in &members {
        let m = p.method(q).expect("kernel member");
        let lowered = lower_method(p, a, q, m, &members, &mut table, &mut plan, opts)?;
        methods.push((q.clone(), lowered));
    }
    Ok(LoweredKernel {
        root: root.clone(),
        methods,
        syscalls: table.into_decls(),
        dispatch: plan,
        options: opts,
    })
}

/// Root plus hardware-callable methods, breadth first.
fn kernel_members(p: &Program, a: &Analysis, root: &QualName) -> Vec<QualName> {
    let mut out = vec![root.clone()];
    let mut work = VecDeque::from([root.clone()]);
    while let Some(q) = work.pop_front() {
        let m = p.method(&q).expect("member");
        for (idx, op) in m.ops().enumerate() {
            let callees: Vec<QualName> = match op {
                Instr::Call(c) => vec![c.clone()],
                Instr::CallVirtual(_) => a
                    .targets
                    .get(&q, idx as u32)
                    .map(|s| s.targets.clone())
                    .unwrap_or_default(),
                _ => continue,
            };
            for c in callees {
                if has_body(p, &c) && !a.report.is_soft(&c) && !out.contains(&c) {
                    out.push(c.clone());
                    work.push_back(c);
                }
            }
        }
    }
    out
}

/// Emission state for one method.
pub(crate) struct Emitter<'a> {
    pub p: &'a Program,
    pub a: &'a Analysis,
    pub q: &'a QualName,
    pub members: &'a [QualName],
    pub table: &'a mut SyscallTable,
    pub plan: &'a mut DispatchPlan,
    pub out: Vec<Item>,
    pub line: u32,
    labels: BTreeSet<String>,
    next_label: u32,
    traps: Vec<(String, u32, u32)>,
    /// Array parameter local -> local caching its length.
    pub len_cache: HashMap<u16, u16>,
    /// First scratch local.
    pub scratch: u16,
    pub max_local: u16,
    pub coalesce: CoalescePlan,
    pub origins: Vec<Option<Vec<Option<coalesce::Origin>>>>,
}

impl Emitter<'_> {
    pub fn op(&mut self, instr: Instr) {
        self.out.push(Item::Op {
            instr,
            line: self.line,
        });
    }

    pub fn label(&mut self, l: String) {
        self.out.push(Item::Label(l));
    }

    pub fn fresh_label(&mut self, stem: &str) -> String {
        loop {
            let l = format!("_{stem}{}", self.next_label);
            self.next_label += 1;
            if self.labels.insert(l.clone()) {
                return l;
            }
        }
    }

    /// Scratch local `k`.
    pub fn tmp(&mut self, k: u16) -> u16 {
        let l = self.scratch + k;
        self.max_local = self.max_local.max(l + 1);
        l
    }

    /// Label of a fresh out-of-line block that raises `kind` on the host.
    pub fn trap(&mut self, kind: TrapKind) -> String {
        let id = self.table.trap(kind);
        let l = self.fresh_label(kind.name());
        self.traps.push((l.clone(), id, self.line));
        l
    }

    /// `value == 0` on top of stack branches to a null-dereference trap;
    /// consumes the duplicate, leaves the original.
    pub fn null_check_top(&mut self) {
        let l = self.trap(TrapKind::NullDeref);
        self.op(Instr::Dup);
        self.op(Instr::Const(0));
        self.op(Instr::If(crate::jir::Cond::Eq, l));
    }
}

#[allow(clippy::too_many_arguments)]
fn lower_method(
    p: &Program,
    a: &Analysis,
    q: &QualName,
    m: &MethodDef,
    members: &[QualName],
    table: &mut SyscallTable,
    plan: &mut DispatchPlan,
    opts: TransformOptions,
) -> Result<MethodDef, TransformError> {
    if m.kind == MethodKind::Native {
        return Err(TransformError::Internal {
            method: q.clone(),
            message: "native methods have no body to lower".into(),
        });
    }
    let cfg = Cfg::build(&m.body, &|_| false);
    let origins = coalesce::stack_origins(p, &cfg);
    let coalesce_plan = if opts.coalesce {
        coalesce::plan(m, &cfg, &origins)
    } else {
        CoalescePlan::default()
    };
    let labels = m
        .body
        .iter()
        .filter_map(|it| match it {
            Item::Label(l) => Some(l.clone()),
            _ => None,
        })
        .collect();
    let mut e = Emitter {
        p,
        a,
        q,
        members,
        table,
        plan,
        out: Vec::new(),
        line: m.line,
        labels,
        next_label: 0,
        traps: Vec::new(),
        len_cache: HashMap::new(),
        scratch: m.locals,
        max_local: m.locals,
        coalesce: coalesce_plan,
        origins,
    };
    e.hoist_lengths(m, &cfg);

    let mut pc = 0usize;
    let mut prev: Option<&Instr> = None;
    let mut label_since_prev = false;
    let mut flushed = BTreeSet::new();
    for it in &m.body {
        match it {
            Item::Label(l) => {
                if let Some(bursts) = e.coalesce.bursts.get(&pc).cloned() {
                    if flushed.insert(pc) {
                        for b in bursts {
                            e.op(Instr::Load(b.array));
                            e.op(Instr::BusBurst {
                                buffer: b.buffer,
                                offset: b.offset,
                                len: b.len,
                            });
                        }
                    }
                }
                e.label(l.clone());
                label_since_prev = true;
            }
            Item::Op { instr, line } => {
                e.line = *line;
                let const_divisor = match prev {
                    Some(Instr::Const(c)) if !label_since_prev => *c != 0,
                    _ => false,
                };
                e.lower(pc, instr, const_divisor)?;
                prev = Some(instr);
                label_since_prev = false;
                pc += 1;
            }
        }
    }
    let traps = std::mem::take(&mut e.traps);
    for (l, id, line) in traps {
        e.out.push(Item::Label(l));
        e.out.push(Item::Op {
            instr: Instr::Syscall(id),
            line,
        });
    }
    Ok(MethodDef {
        name: m.name.clone(),
        kind: m.kind,
        params: m.params.clone(),
        ret: m.ret.clone(),
        locals: e.max_local,
        buffers: e.coalesce.buffers.clone(),
        body: e.out,
        line: m.line,
    })
}

impl Emitter<'_> {
    fn lower(
        &mut self,
        pc: usize,
        instr: &Instr,
        const_divisor: bool,
    ) -> Result<(), TransformError> {
        match instr {
            Instr::Const(_) | Instr::Load(_) | Instr::Store(_) | Instr::Pop | Instr::Dup => {
                self.op(instr.clone())
            }
            Instr::Null => self.op(Instr::Const(0)),
            Instr::Bin(op) => {
                if op.is_division() && !const_divisor {
                    let l = self.trap(TrapKind::DivByZero);
                    self.op(Instr::Dup);
                    self.op(Instr::Const(0));
                    self.op(Instr::If(crate::jir::Cond::Eq, l));
                }
                self.op(instr.clone());
            }
            Instr::If(..) | Instr::Goto(_) | Instr::Ret => self.op(instr.clone()),
            Instr::GetField(_)
            | Instr::PutField(_)
            | Instr::ALoad
            | Instr::AStore
            | Instr::ArrayLen => self.lower_heap(pc, instr),
            Instr::New(_) | Instr::NewArray | Instr::Call(_) => self.lower_call_or_alloc(instr),
            Instr::CallVirtual(named) => self.lower_dispatch(pc, named)?,
            Instr::Throw => {
                return Err(TransformError::Internal {
                    method: self.q.clone(),
                    message: "`throw` in a method that was not rejected".into(),
                })
            }
            other => {
                return Err(TransformError::Internal {
                    method: self.q.clone(),
                    message: format!("lowered opcode `{}` in source", other.mnemonic()),
                })
            }
        }
        Ok(())
    }
}

/// Convenience: analyze from the entry and lower the entry kernel.
pub fn transform_entry(
    p: &Program,
    opts: TransformOptions,
) -> Result<(Analysis, LoweredKernel), TransformError> {
    let a = crate::analysis::analyze(p);
    let root = p.entry.clone().ok_or_else(|| TransformError::Internal {
        method: QualName::new("", ""),
        message: "program has no entry".into(),
    })?;
    let k = transform_kernel(p, &a, &root, opts)?;
    Ok((a, k))
}
