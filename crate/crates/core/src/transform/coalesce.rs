//! Stack-origin tracking and burst planning for counted loops.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::cfg::Cfg;
use crate::jir::{Instr, MethodDef, Program, Type};

/// Where a stack slot's value came from: `iload local` at `pc`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Origin {
    pub local: u16,
    pub pc: usize,
}

/// Abstract operand stack before each instruction (`None` = unreachable).
pub(crate) fn stack_origins(p: &Program, cfg: &Cfg) -> Vec<Option<Vec<Option<Origin>>>> {
    let ops = &cfg.ops;
    let mut state: Vec<Option<Vec<Option<Origin>>>> = vec![None; ops.len()];
    if ops.is_empty() {
        return state;
    }
    state[0] = Some(Vec::new());
    let mut work = VecDeque::from([0usize]);
    while let Some(pc) = work.pop_front() {
        let mut st = state[pc].clone().expect("queued");
        let op = &ops[pc];
        let (pops, pushes) = stack_effect(p, op);
        for _ in 0..pops {
            st.pop();
        }
        match op {
            Instr::Load(l) => st.push(Some(Origin { local: *l, pc })),
            Instr::Dup => {
                let top = st.last().copied().flatten();
                st.push(top);
            }
            _ => st.extend(std::iter::repeat_n(None, pushes)),
        }
        let mut succ = Vec::new();
        match op {
            Instr::Goto(l) => succ.push(cfg.labels[l]),
            Instr::If(_, l) => {
                succ.push(pc + 1);
                succ.push(cfg.labels[l]);
            }
            Instr::Ret | Instr::Throw => {}
            _ => succ.push(pc + 1),
        }
        for s in succ {
            if s >= ops.len() {
                continue;
            }
            match &state[s] {
                None => {
                    state[s] = Some(st.clone());
                    work.push_back(s);
                }
                Some(old) => {
                    let merged: Vec<Option<Origin>> = old
                        .iter()
                        .zip(&st)
                        .map(|(a, b)| if a == b { *a } else { None })
                        .collect();
                    if &merged != old {
                        state[s] = Some(merged);
                        work.push_back(s);
                    }
                }
            }
        }
    }
    state
}

/// (values popped, values pushed) for a source instruction. `Dup` and
/// `Load` are handled by the caller.
fn stack_effect(p: &Program, op: &Instr) -> (usize, usize) {
    match op {
        Instr::Const(_) | Instr::Null | Instr::Load(_) | Instr::New(_) => (0, 1),
        Instr::Store(_) | Instr::Pop | Instr::Throw => (1, 0),
        Instr::Dup => (0, 0),
        Instr::GetField(_) | Instr::ArrayLen | Instr::NewArray => (1, 1),
        Instr::PutField(_) => (2, 0),
        Instr::ALoad | Instr::Bin(_) => (2, 1),
        Instr::AStore => (3, 0),
        Instr::If(..) => (2, 0),
        Instr::Goto(_) => (0, 0),
        Instr::Call(q) | Instr::CallVirtual(q) => {
            let m = p.resolve_method(&q.class, &q.member).map(|(_, m)| m);
            let args =
                m.map_or(0, |m| m.params.len()) + usize::from(matches!(op, Instr::CallVirtual(_)));
            (args, usize::from(m.is_some_and(|m| m.ret.is_some())))
        }
        Instr::Ret => (0, 0),
        _ => (0, 0),
    }
}

/// Array parameters never reassigned in the method body.
pub(crate) fn invariant_array_params(m: &MethodDef) -> Vec<u16> {
    let first = u16::from(m.kind == crate::jir::MethodKind::Virtual);
    m.params
        .iter()
        .enumerate()
        .filter(|(_, prm)| prm.ty == Type::Arr)
        .map(|(i, _)| first + i as u16)
        .filter(|&l| !m.ops().any(|o| *o == Instr::Store(l)))
        .collect()
}

/// One burst transfer issued before a counted loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Burst {
    pub array: u16,
    pub buffer: u16,
    /// Word offset from the array handle.
    pub offset: i32,
    pub len: u16,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct CoalescePlan {
    /// Bursts to issue just before the instruction at this index.
    pub bursts: BTreeMap<usize, Vec<Burst>>,
    /// aload index -> (buffer, first element index covered).
    pub reads: HashMap<usize, (u16, i32)>,
    pub buffers: Vec<u16>,
}

/// Longest loop that is turned into a single burst.
pub const MAX_BURST: u32 = 256;

pub(crate) fn plan(
    m: &MethodDef,
    cfg: &Cfg,
    origins: &[Option<Vec<Option<Origin>>>],
) -> CoalescePlan {
    let mut plan = CoalescePlan::default();
    let arrays = invariant_array_params(m);
    for lp in cfg.counted_loops() {
        if lp.step != 1 || lp.trip == 0 || lp.trip > MAX_BURST {
            continue;
        }
        let h = lp.header;
        let pre = &cfg.blocks[lp.preheader];
        if pre.fall != Some(h) || pre.taken == Some(h) || lp.preheader + 1 != h {
            continue;
        }
        let writes = lp.blocks.iter().any(|&b| {
            let blk = &cfg.blocks[b];
            cfg.ops[blk.start..blk.end].iter().any(|o| {
                matches!(
                    o,
                    Instr::PutField(_)
                        | Instr::AStore
                        | Instr::New(_)
                        | Instr::NewArray
                        | Instr::Call(_)
                        | Instr::CallVirtual(_)
                        | Instr::Throw
                        | Instr::Ret
                )
            })
        });
        if writes {
            continue;
        }
        let after_incr = cfg.reachable_avoiding(lp.incr_block, h);
        let mut by_array: BTreeMap<u16, u16> = BTreeMap::new();
        for &b in &lp.blocks {
            let blk = &cfg.blocks[b];
            for pc in blk.start..blk.end {
                if cfg.ops[pc] != Instr::ALoad || plan.reads.contains_key(&pc) {
                    continue;
                }
                let Some(Some(st)) = origins.get(pc) else {
                    continue;
                };
                let n = st.len();
                if n < 2 {
                    continue;
                }
                let (Some(arr), Some(idx)) = (st[n - 2], st[n - 1]) else {
                    continue;
                };
                if !arrays.contains(&arr.local) || idx.local != lp.var {
                    continue;
                }
                let lb = cfg.block_of[idx.pc];
                let before_incr = if lb == lp.incr_block {
                    idx.pc < lp.incr_pc
                } else {
                    lp.blocks.contains(&lb) && !after_incr.contains(&lb)
                };
                if !before_incr {
                    continue;
                }
                let buffer = *by_array.entry(arr.local).or_insert_with(|| {
                    let id = plan.buffers.len() as u16;
                    plan.buffers.push(lp.trip as u16);
                    plan.bursts
                        .entry(cfg.blocks[h].start)
                        .or_default()
                        .push(Burst {
                            array: arr.local,
                            buffer: id,
                            offset: 2i32.wrapping_add(lp.init),
                            len: lp.trip as u16,
                        });
                    id
                });
                plan.reads.insert(pc, (buffer, lp.init));
            }
        }
    }
    plan
}
