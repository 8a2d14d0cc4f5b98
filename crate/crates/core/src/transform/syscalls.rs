//! Host escapes: allocation, natives and software calls.

use serde::{Deserialize, Serialize};

use super::Emitter;
use crate::analysis::has_body;
use crate::jir::{Instr, QualName, SyscallDecl, SyscallKind, TrapKind};

/// Deduplicating syscall table; ids are dense in first-use order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallTable {
    decls: Vec<SyscallDecl>,
}

impl SyscallTable {
    pub fn intern(&mut self, kind: SyscallKind, args: u16, results: u16) -> u32 {
        if let Some(d) = self.decls.iter().find(|d| d.kind == kind) {
            return d.id;
        }
        let id = self.decls.len() as u32;
        self.decls.push(SyscallDecl {
            id,
            kind,
            args,
            results,
        });
        id
    }

    pub fn trap(&mut self, kind: TrapKind) -> u32 {
        self.intern(SyscallKind::Trap(kind), 0, 0)
    }

    pub fn into_decls(self) -> Vec<SyscallDecl> {
        self.decls
    }
}

impl Emitter<'_> {
    /// Issues the call to `target` with arguments already on the stack:
    /// a direct call for kernel members, a syscall otherwise. Recursive
    /// methods (including a recursive root) always run on the host.
    pub(super) fn emit_call(&mut self, target: &QualName) {
        let m = self.p.method(target).expect("resolved call target");
        let results = u16::from(m.ret.is_some());
        if !has_body(self.p, target) {
            let id = self.table.intern(
                SyscallKind::Native(target.clone()),
                m.params.len() as u16,
                results,
            );
            self.op(Instr::Syscall(id));
        } else if self.members.contains(target) && !self.a.report.is_soft(target) {
            self.op(Instr::Call(target.clone()));
        } else {
            let id = self.table.intern(
                SyscallKind::SoftCall {
                    method: target.clone(),
                    virtual_dispatch: false,
                },
                m.arg_slots(),
                results,
            );
            self.op(Instr::Syscall(id));
        }
    }

    pub(super) fn lower_call_or_alloc(&mut self, instr: &Instr) {
        match instr {
            Instr::New(c) => {
                let id = self.table.intern(SyscallKind::AllocObject(c.clone()), 0, 1);
                self.op(Instr::Syscall(id));
            }
            Instr::NewArray => {
                let id = self.table.intern(SyscallKind::AllocArray, 1, 1);
                self.op(Instr::Syscall(id));
            }
            Instr::Call(t) => self.emit_call(t),
            _ => unreachable!("not a call or allocation"),
        }
    }
}
