//! Basic blocks, dominators, natural loops and counted-loop detection over
//! a method body. Shared by the coalescing pass and the kernel builder.

use std::collections::{BTreeSet, HashMap};

use crate::jir::{BinOp, Cond, Instr, Item};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    /// First instruction index.
    pub start: usize,
    /// One past the last instruction index.
    pub end: usize,
    /// Block reached when the terminating branch is taken (or by `goto`).
    pub taken: Option<usize>,
    /// Block reached by falling through.
    pub fall: Option<usize>,
}

impl Block {
    pub fn succs(&self) -> impl Iterator<Item = usize> + '_ {
        self.fall.into_iter().chain(self.taken)
    }
}

#[derive(Clone, Debug)]
pub struct Cfg {
    pub ops: Vec<Instr>,
    pub labels: HashMap<String, usize>,
    pub blocks: Vec<Block>,
    pub block_of: Vec<usize>,
    pub preds: Vec<Vec<usize>>,
    pub reachable: Vec<bool>,
    /// Immediate dominator of each reachable block (entry maps to itself).
    pub idom: Vec<Option<usize>>,
    /// Blocks that end in an instruction that never returns control.
    pub exit_blocks: Vec<bool>,
}

impl Cfg {
    /// Splits `body` into basic blocks. `is_exit` marks instructions other
    /// than `ret`/`throw` after which control never continues.
    pub fn build(body: &[Item], is_exit: &dyn Fn(&Instr) -> bool) -> Cfg {
        let mut ops = Vec::new();
        let mut labels = HashMap::new();
        for it in body {
            match it {
                Item::Label(l) => {
                    labels.insert(l.clone(), ops.len());
                }
                Item::Op { instr, .. } => ops.push(instr.clone()),
            }
        }
        let n = ops.len();
        let mut leader = vec![false; n + 1];
        if n > 0 {
            leader[0] = true;
        }
        for (i, op) in ops.iter().enumerate() {
            if let Some(l) = op.branch_target() {
                leader[labels[l]] = true;
            }
            if op.branch_target().is_some() || ends_flow(op, is_exit) {
                leader[i + 1] = true;
            }
        }
        let mut starts: Vec<usize> = (0..n).filter(|&i| leader[i]).collect();
        starts.push(n);
        let mut block_of = vec![0; n];
        for b in 0..starts.len() - 1 {
            for slot in &mut block_of[starts[b]..starts[b + 1]] {
                *slot = b;
            }
        }
        let nblocks = starts.len() - 1;
        let mut blocks = Vec::with_capacity(nblocks);
        let mut exit_blocks = vec![false; nblocks];
        for b in 0..nblocks {
            let (start, end) = (starts[b], starts[b + 1]);
            let last = &ops[end - 1];
            let next = (b + 1 < nblocks).then_some(b + 1);
            let target = last.branch_target().map(|l| block_of[labels[l]]);
            let (taken, fall) = match last {
                Instr::Goto(_) => (target, None),
                Instr::If(..) => (target, next),
                _ if ends_flow(last, is_exit) => {
                    exit_blocks[b] = !matches!(last, Instr::Ret);
                    (None, None)
                }
                _ => (None, next),
            };
            blocks.push(Block {
                start,
                end,
                taken,
                fall,
            });
        }
        let mut preds = vec![Vec::new(); nblocks];
        for (b, blk) in blocks.iter().enumerate() {
            for s in blk.succs() {
                if !preds[s].contains(&b) {
                    preds[s].push(b);
                }
            }
        }
        let mut cfg = Cfg {
            ops,
            labels,
            blocks,
            block_of,
            preds,
            reachable: vec![false; nblocks],
            idom: vec![None; nblocks],
            exit_blocks,
        };
        cfg.compute_dominators();
        cfg
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Reverse postorder of the reachable blocks.
    pub fn rpo(&self) -> Vec<usize> {
        let n = self.blocks.len();
        let mut order = Vec::with_capacity(n);
        if n == 0 {
            return order;
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<(usize, bool)> = vec![(0, false)];
        while let Some((b, done)) = stack.pop() {
            if done {
                order.push(b);
                continue;
            }
            if seen[b] {
                continue;
            }
            seen[b] = true;
            stack.push((b, true));
            let succs: Vec<usize> = self.blocks[b].succs().collect();
            for s in succs.into_iter().rev() {
                if !seen[s] {
                    stack.push((s, false));
                }
            }
        }
        order.reverse();
        order
    }

    fn compute_dominators(&mut self) {
        let rpo = self.rpo();
        let mut index = vec![usize::MAX; self.blocks.len()];
        for (i, &b) in rpo.iter().enumerate() {
            index[b] = i;
            self.reachable[b] = true;
        }
        if rpo.is_empty() {
            return;
        }
        self.idom[0] = Some(0);
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new: Option<usize> = None;
                for &p in &self.preds[b] {
                    if self.idom[p].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(cur) => {
                            let (mut x, mut y) = (cur, p);
                            while x != y {
                                while index[x] > index[y] {
                                    x = self.idom[x].expect("processed");
                                }
                                while index[y] > index[x] {
                                    y = self.idom[y].expect("processed");
                                }
                            }
                            x
                        }
                    });
                }
                if new.is_some() && self.idom[b] != new {
                    self.idom[b] = new;
                    changed = true;
                }
            }
        }
    }

    /// Whether block `a` dominates block `b` (both reachable).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur] {
                Some(d) if d != cur => cur = d,
                _ => return false,
            }
        }
    }

    /// Natural loops, one per header, in header order.
    pub fn natural_loops(&self) -> Vec<Loop> {
        let mut by_header: std::collections::BTreeMap<usize, Loop> = Default::default();
        for (t, blk) in self.blocks.iter().enumerate() {
            if !self.reachable[t] {
                continue;
            }
            for h in blk.succs() {
                if !self.dominates(h, t) {
                    continue;
                }
                let lp = by_header.entry(h).or_insert_with(|| Loop {
                    header: h,
                    blocks: BTreeSet::from([h]),
                    latches: Vec::new(),
                });
                if !lp.latches.contains(&t) {
                    lp.latches.push(t);
                }
                let mut work = vec![t];
                while let Some(x) = work.pop() {
                    if lp.blocks.insert(x) {
                        work.extend(self.preds[x].iter().copied().filter(|&p| self.reachable[p]));
                    }
                }
            }
        }
        by_header.into_values().collect()
    }
}

fn ends_flow(op: &Instr, is_exit: &dyn Fn(&Instr) -> bool) -> bool {
    matches!(op, Instr::Ret | Instr::Throw) || is_exit(op)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub header: usize,
    pub blocks: BTreeSet<usize>,
    pub latches: Vec<usize>,
}

/// A loop of the form `i = c0; while (i cond c1) { ...; i += step }`
/// whose iteration count is a compile-time constant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountedLoop {
    pub header: usize,
    pub preheader: usize,
    pub blocks: BTreeSet<usize>,
    pub var: u16,
    pub init: i32,
    pub bound: i32,
    pub step: i32,
    /// Block holding the single increment of `var`.
    pub incr_block: usize,
    /// Instruction index of the `istore` that completes the increment.
    pub incr_pc: usize,
    /// Whether the header's branch stays in the loop when taken.
    pub stay_on_taken: bool,
    pub cond: Cond,
    pub trip: u32,
}

/// Iteration cap above which a loop is not treated as counted.
pub const MAX_TRIP: u32 = 1 << 20;

impl Cfg {
    /// Detects counted loops. Exits other than the header test must lead to
    /// exit blocks (trap escapes); the increment must execute exactly once
    /// per iteration.
    pub fn counted_loops(&self) -> Vec<CountedLoop> {
        let loops = self.natural_loops();
        let mut out = Vec::new();
        for lp in &loops {
            if let Some(c) = self.counted(lp, &loops) {
                out.push(c);
            }
        }
        out
    }

    fn counted(&self, lp: &Loop, all: &[Loop]) -> Option<CountedLoop> {
        let h = lp.header;
        let hb = &self.blocks[h];
        let hops = &self.ops[hb.start..hb.end];
        let (var, bound, cond) = match hops {
            [Instr::Load(v), Instr::Const(c), Instr::If(cond, _)] => (*v, *c, *cond),
            _ => return None,
        };
        let (taken, fall) = (hb.taken?, hb.fall?);
        let stay_on_taken = match (lp.blocks.contains(&taken), lp.blocks.contains(&fall)) {
            (true, false) => true,
            (false, true) => false,
            _ => return None,
        };
        for &b in &lp.blocks {
            let blk = &self.blocks[b];
            if self.ops[blk.start..blk.end]
                .iter()
                .any(|o| matches!(o, Instr::Ret | Instr::Throw))
            {
                return None;
            }
            if b == h {
                continue;
            }
            for s in blk.succs() {
                if !lp.blocks.contains(&s) && !self.exit_blocks[s] {
                    return None;
                }
            }
        }
        // single increment `iload v; const k; add; istore v`
        let mut incr = None;
        for &b in &lp.blocks {
            let blk = &self.blocks[b];
            for pc in blk.start..blk.end {
                if self.ops[pc] == Instr::Store(var) {
                    if incr.is_some() || pc < blk.start + 3 {
                        return None;
                    }
                    let step = match &self.ops[pc - 3..pc] {
                        [Instr::Load(v), Instr::Const(k), Instr::Bin(BinOp::Add)] if *v == var => {
                            *k
                        }
                        [Instr::Load(v), Instr::Const(k), Instr::Bin(BinOp::Sub)] if *v == var => {
                            k.wrapping_neg()
                        }
                        _ => return None,
                    };
                    if step == 0 {
                        return None;
                    }
                    incr = Some((b, pc, step));
                }
            }
        }
        let (incr_block, incr_pc, step) = incr?;
        if !lp.latches.iter().all(|&l| self.dominates(incr_block, l)) {
            return None;
        }
        // the increment must not sit inside a nested loop
        if all.iter().any(|o| {
            o.header != h && o.blocks.contains(&incr_block) && o.blocks.is_subset(&lp.blocks)
        }) {
            return None;
        }
        let outside: Vec<usize> = self.preds[h]
            .iter()
            .copied()
            .filter(|p| !lp.blocks.contains(p))
            .collect();
        let [pre] = outside[..] else { return None };
        let pb = &self.blocks[pre];
        let last_store = (pb.start..pb.end)
            .rev()
            .find(|&pc| self.ops[pc] == Instr::Store(var))?;
        let init = match last_store.checked_sub(1).map(|pc| &self.ops[pc]) {
            Some(Instr::Const(c)) if last_store > pb.start => *c,
            _ => return None,
        };
        let trip = trip_count(init, bound, step, cond, stay_on_taken)?;
        Some(CountedLoop {
            header: h,
            preheader: pre,
            blocks: lp.blocks.clone(),
            var,
            init,
            bound,
            step,
            incr_block,
            incr_pc,
            stay_on_taken,
            cond,
            trip,
        })
    }

    /// Blocks reachable from `from` without entering `barrier`.
    pub fn reachable_avoiding(&self, from: usize, barrier: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut work: Vec<usize> = self.blocks[from].succs().collect();
        while let Some(b) = work.pop() {
            if b == barrier || !seen.insert(b) {
                continue;
            }
            work.extend(self.blocks[b].succs());
        }
        seen
    }
}

/// Iterations of `for (v = init; (v cond bound) == stay; v += step)`.
pub fn trip_count(
    init: i32,
    bound: i32,
    step: i32,
    cond: Cond,
    stay_on_taken: bool,
) -> Option<u32> {
    let mut v = init;
    let mut n = 0u32;
    while cond.holds(v, bound) == stay_on_taken {
        n += 1;
        if n > MAX_TRIP {
            return None;
        }
        v = v.wrapping_add(step);
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jir::parse_program;

    fn cfg_of(src: &str) -> Cfg {
        let p = parse_program(src).unwrap();
        let m = p.entry_method().unwrap();
        Cfg::build(&m.body, &|_| false)
    }

    const LOOP16: &str = "entry M.f\nclass M {\n  method static f(): i32 locals 2 {\n    const 0\n    istore 1\n    const 0\n    istore 0\n  top:\n    iload 0\n    const 16\n    if_ge done\n    iload 1\n    iload 0\n    add\n    istore 1\n    iload 0\n    const 1\n    add\n    istore 0\n    goto top\n  done:\n    iload 1\n    ret\n  }\n}\n";

    #[test]
    fn blocks_and_edges() {
        let c = cfg_of(LOOP16);
        assert_eq!(c.len(), 4);
        assert_eq!(c.blocks[1].taken, Some(3));
        assert_eq!(c.blocks[1].fall, Some(2));
        assert_eq!(c.blocks[2].taken, Some(1));
        assert_eq!(c.blocks[2].fall, None);
        assert!(c.dominates(1, 2));
        assert!(!c.dominates(2, 3));
    }

    #[test]
    fn counted_loop_trip_16() {
        let c = cfg_of(LOOP16);
        let loops = c.counted_loops();
        assert_eq!(loops.len(), 1);
        let l = &loops[0];
        assert_eq!((l.var, l.init, l.bound, l.step, l.trip), (0, 0, 16, 1, 16));
        assert!(!l.stay_on_taken);
    }

    #[test]
    fn data_dependent_loop_is_not_counted() {
        let src = "entry M.f\nclass M {\n  method static f(n: i32): i32 {\n  top:\n    iload 0\n    const 1\n    if_eq done\n    iload 0\n    const 1\n    shr\n    istore 0\n    goto top\n  done:\n    iload 0\n    ret\n  }\n}\n";
        let c = cfg_of(src);
        assert_eq!(c.natural_loops().len(), 1);
        assert!(c.counted_loops().is_empty());
    }

    #[test]
    fn trip_count_matches_brute_force() {
        for init in -5..5 {
            for bound in -5..10 {
                for step in [1, 2, 3] {
                    let mut n = 0;
                    let mut i = init;
                    while i < bound {
                        n += 1;
                        i += step;
                    }
                    assert_eq!(trip_count(init, bound, step, Cond::Ge, false), Some(n));
                }
            }
        }
        assert_eq!(trip_count(0, 1, 0, Cond::Lt, true), None);
    }
}
