//! Field and array accesses as bus transactions with explicit guards.

use super::coalesce::invariant_array_params;
use super::Emitter;
use crate::cfg::Cfg;
use crate::jir::{Cond, Instr, MethodDef, TrapKind};

/// Offset of the length word from an array handle.
pub const ARRAY_LEN_OFFSET: i32 = 1;
/// Offset of element 0 from an array handle.
pub const ARRAY_DATA_OFFSET: i32 = 2;

impl Emitter<'_> {
    /// Reads the length of each array parameter used by an array access
    /// once at method entry. A null array reads the null page and yields 0;
    /// the per-access null check still runs first.
    pub(super) fn hoist_lengths(&mut self, m: &MethodDef, cfg: &Cfg) {
        let params = invariant_array_params(m);
        let mut used = Vec::new();
        for (pc, op) in cfg.ops.iter().enumerate() {
            let depth = match op {
                Instr::ArrayLen => 1,
                Instr::ALoad => 2,
                Instr::AStore => 3,
                _ => continue,
            };
            if let Some(o) = self.array_origin(pc, depth) {
                if params.contains(&o) && !used.contains(&o) {
                    used.push(o);
                }
            }
        }
        used.sort_unstable();
        for a in used {
            let l = self.scratch;
            self.scratch += 1;
            self.max_local = self.max_local.max(self.scratch);
            self.len_cache.insert(a, l);
            self.op(Instr::Load(a));
            self.op(Instr::BusRead {
                offset: ARRAY_LEN_OFFSET,
            });
            self.op(Instr::Store(l));
        }
    }

    /// Local that the array operand `depth` slots below the top was loaded
    /// from, if known.
    fn array_origin(&self, pc: usize, depth: usize) -> Option<u16> {
        let st = self.origins.get(pc)?.as_ref()?;
        let n = st.len();
        if n < depth {
            return None;
        }
        st[n - depth].map(|o| o.local)
    }

    fn cached_len(&self, pc: usize, depth: usize) -> Option<u16> {
        self.array_origin(pc, depth)
            .and_then(|a| self.len_cache.get(&a).copied())
    }

    /// Stack `[h]` -> `[h]`; leaves the length in a local.
    fn array_len_local(&mut self, pc: usize, depth: usize) -> u16 {
        if let Some(l) = self.cached_len(pc, depth) {
            return l;
        }
        let tl = self.tmp(1);
        self.op(Instr::Dup);
        self.op(Instr::BusRead {
            offset: ARRAY_LEN_OFFSET,
        });
        self.op(Instr::Store(tl));
        tl
    }

    fn bounds_check(&mut self, index: u16, len: u16) {
        let l = self.trap(TrapKind::OutOfBounds);
        self.op(Instr::Load(index));
        self.op(Instr::Const(0));
        self.op(Instr::If(Cond::Lt, l.clone()));
        self.op(Instr::Load(index));
        self.op(Instr::Load(len));
        self.op(Instr::If(Cond::Ge, l));
    }

    pub(super) fn lower_heap(&mut self, pc: usize, instr: &Instr) {
        match instr {
            Instr::GetField(f) => {
                let (off, _) = self
                    .p
                    .field_offset(&f.class, &f.member)
                    .expect("validated field");
                self.null_check_top();
                self.op(Instr::BusRead { offset: off });
            }
            Instr::PutField(f) => {
                let (off, _) = self
                    .p
                    .field_offset(&f.class, &f.member)
                    .expect("validated field");
                let tv = self.tmp(0);
                self.op(Instr::Store(tv));
                self.null_check_top();
                self.op(Instr::Load(tv));
                self.op(Instr::BusWrite { offset: off });
            }
            Instr::ArrayLen => {
                let cached = self.cached_len(pc, 1);
                self.null_check_top();
                match cached {
                    Some(l) => {
                        self.op(Instr::Pop);
                        self.op(Instr::Load(l));
                    }
                    None => self.op(Instr::BusRead {
                        offset: ARRAY_LEN_OFFSET,
                    }),
                }
            }
            Instr::ALoad => {
                let ti = self.tmp(0);
                self.op(Instr::Store(ti));
                self.null_check_top();
                let len = self.array_len_local(pc, 2);
                self.bounds_check(ti, len);
                match self.coalesce.reads.get(&pc).copied() {
                    Some((buffer, first)) => {
                        self.op(Instr::Pop);
                        self.op(Instr::Load(ti));
                        self.op(Instr::BufRead {
                            buffer,
                            offset: first.wrapping_neg(),
                        });
                    }
                    None => {
                        self.op(Instr::Load(ti));
                        self.op(Instr::BusReadIdx {
                            offset: ARRAY_DATA_OFFSET,
                        });
                    }
                }
            }
            Instr::AStore => {
                let tv = self.tmp(2);
                let ti = self.tmp(0);
                self.op(Instr::Store(tv));
                self.op(Instr::Store(ti));
                self.null_check_top();
                let len = self.array_len_local(pc, 3);
                self.bounds_check(ti, len);
                self.op(Instr::Load(ti));
                self.op(Instr::Load(tv));
                self.op(Instr::BusWriteIdx {
                    offset: ARRAY_DATA_OFFSET,
                });
            }
            _ => unreachable!("not a heap access"),
        }
    }
}
