//! Area and latency estimates over a scheduled kernel.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::kernel::{NodeOp, Terminator};
use super::schedule::ScheduledKernel;
use crate::cosim::{BusModel, SyscallChannel};
use crate::transform::DispatchPlan;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub total: u64,
    pub arithmetic: u64,
    pub multiplexers: u64,
    pub bus: u64,
    pub control: u64,
}

pub fn estimate_area(k: &ScheduledKernel, c: &CostModel, plan: &DispatchPlan) -> AreaEstimate {
    let mut arithmetic = 0;
    let mut any_bus = false;
    let mut any_syscall = false;
    let mut blocks = 0u64;
    let mut buffer_words = 0u64;
    for m in &k.graph.methods {
        buffer_words += m.buffers.iter().map(|&w| u64::from(w)).sum::<u64>();
        for (_, b) in m.reachable_blocks() {
            blocks += 1;
            for n in &b.nodes {
                match &n.op {
                    NodeOp::Bin(op) => arithmetic += c.bin_area(*op),
                    NodeOp::Branch(_) => arithmetic += c.area.compare,
                    NodeOp::Syscall(_) => any_syscall = true,
                    op if op.is_bus() => any_bus = true,
                    _ => {}
                }
            }
        }
    }
    let multiplexers = plan.mux_branches() as u64 * c.area.mux;
    let bus = if any_bus { c.area.bus_port } else { 0 } + buffer_words * c.area.buffer_word;
    let control = blocks * c.area.control + if any_syscall { c.area.syscall_port } else { 0 };
    AreaEstimate {
        total: arithmetic + multiplexers + bus + control,
        arithmetic,
        multiplexers,
        bus,
        control,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLatency {
    pub method: String,
    pub block: usize,
    /// Scheduled compute cycles.
    pub cycles: u32,
    /// Bus transactions issued with static cost.
    pub bus_cycles: u64,
    pub syscalls: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LatencyMode {
    Exact { total: u64 },
    InputDependent { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub blocks: Vec<BlockLatency>,
    pub mode: LatencyMode,
}

impl LatencyReport {
    pub fn exact(&self) -> Option<u64> {
        match self.mode {
            LatencyMode::Exact { total } => Some(total),
            LatencyMode::InputDependent { .. } => None,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            LatencyMode::Exact { .. } => "exact",
            LatencyMode::InputDependent { .. } => "input-dependent",
        }
    }
}

/// Block visits beyond which the walk gives up on an exact total.
pub const WALK_LIMIT: u64 = 10_000_000;

/// Per-block counts and, when control flow does not depend on data, the
/// exact cycle count of a trap-free run. Conditional branches are allowed
/// only as counted-loop headers or as guards whose taken side traps.
pub fn estimate_latency(
    k: &ScheduledKernel,
    bus: &BusModel,
    chan: &SyscallChannel,
) -> LatencyReport {
    let mut blocks = Vec::new();
    for (mi, m) in k.graph.methods.iter().enumerate() {
        for (bi, b) in m.reachable_blocks() {
            let mut bus_cycles = 0;
            let mut syscalls = 0;
            for n in &b.nodes {
                match &n.op {
                    NodeOp::BusBurst { len, .. } => bus_cycles += bus.transaction(u64::from(*len)),
                    op if op.is_bus() => bus_cycles += bus.transaction(1),
                    NodeOp::Syscall(_) => syscalls += 1,
                    _ => {}
                }
            }
            blocks.push(BlockLatency {
                method: m.name.to_string(),
                block: bi,
                cycles: k.blocks[mi][bi].latency,
                bus_cycles,
                syscalls,
            });
        }
    }
    let mut w = Walker {
        k,
        bus,
        chan,
        memo: HashMap::new(),
        active: Vec::new(),
        steps: 0,
    };
    let mode = match w.total(0) {
        Ok(total) => LatencyMode::Exact { total },
        Err(reason) => LatencyMode::InputDependent { reason },
    };
    LatencyReport { blocks, mode }
}

struct Walker<'a> {
    k: &'a ScheduledKernel,
    bus: &'a BusModel,
    chan: &'a SyscallChannel,
    memo: HashMap<usize, u64>,
    active: Vec<usize>,
    steps: u64,
}

impl Walker<'_> {
    fn total(&mut self, mi: usize) -> Result<u64, String> {
        if let Some(t) = self.memo.get(&mi) {
            return Ok(*t);
        }
        if self.active.contains(&mi) {
            return Err("recursive kernel call".into());
        }
        self.active.push(mi);
        let t = self.walk(mi);
        self.active.pop();
        let t = t?;
        self.memo.insert(mi, t);
        Ok(t)
    }

    fn block_cost(&mut self, mi: usize, bi: usize) -> Result<u64, String> {
        let m = &self.k.graph.methods[mi];
        let mut cost = u64::from(self.k.blocks[mi][bi].latency);
        for n in &m.blocks[bi].nodes {
            cost += match &n.op {
                NodeOp::BusBurst { len, .. } => self.bus.transaction(u64::from(*len)),
                op if op.is_bus() => self.bus.transaction(1),
                NodeOp::Syscall(_) => self.chan.roundtrip,
                NodeOp::Call(callee) => self.total(*callee as usize)?,
                _ => 0,
            };
        }
        Ok(cost)
    }

    fn walk(&mut self, mi: usize) -> Result<u64, String> {
        let m = &self.k.graph.methods[mi];
        let name = &m.name;
        let is_exit = |b: usize| matches!(m.blocks[b].term, Terminator::Exit);
        let mut counters: HashMap<usize, u32> = HashMap::new();
        let mut b = 0usize;
        let mut total = 0u64;
        loop {
            self.steps += 1;
            if self.steps > WALK_LIMIT {
                return Err(format!("more than {WALK_LIMIT} block visits"));
            }
            total += self.block_cost(mi, b)?;
            let next = match &m.blocks[b].term {
                Terminator::Goto(n) => *n,
                Terminator::Return(_) => return Ok(total),
                Terminator::Exit => return Err(format!("{name}: block {b} always traps")),
                Terminator::Branch { taken, fall, .. } => {
                    if let Some(trip) = m.blocks[b].trip {
                        let body = &m.loops[&b];
                        let (stay, exit) = if body.contains(taken) {
                            (*taken, *fall)
                        } else {
                            (*fall, *taken)
                        };
                        let c = counters.entry(b).or_insert(0);
                        if *c < trip {
                            *c += 1;
                            stay
                        } else {
                            exit
                        }
                    } else if is_exit(*taken) {
                        *fall
                    } else if is_exit(*fall) {
                        *taken
                    } else {
                        return Err(format!(
                            "{name}: branch at the end of block {b} depends on data"
                        ));
                    }
                }
            };
            if m.blocks[next].trip.is_some() && !m.loops[&next].contains(&b) {
                counters.insert(next, 0);
            }
            b = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosim::{BusModel, SyscallChannel};
    use crate::hwmodel::{build_kernel, schedule};
    use crate::jir::parse_program;
    use crate::transform::{transform_entry, LoweredKernel, TransformOptions};

    fn compile(src: &str, c: &CostModel) -> (ScheduledKernel, DispatchPlan) {
        let p = parse_program(src).expect("parses");
        let (_, k) = transform_entry(&p, TransformOptions::default()).expect("lowers");
        (schedule(&build_kernel(&k).expect("builds"), c), k.dispatch)
    }

    fn latency(k: &ScheduledKernel) -> LatencyReport {
        estimate_latency(k, &BusModel::default(), &SyscallChannel::default())
    }

    #[test]
    fn empty_method_takes_one_cycle() {
        let p =
            parse_program("entry M.f\nclass M {\n  method static f(): void {\n    ret\n  }\n}\n")
                .expect("parses");
        let k = LoweredKernel::from_program(&p, TransformOptions::default()).expect("entry");
        let s = schedule(&build_kernel(&k).expect("builds"), &CostModel::default());
        assert_eq!(latency(&s).exact(), Some(1));
    }

    #[test]
    fn pure_arithmetic_has_no_bus_or_mux_area() {
        let c = CostModel::default();
        let (k, plan) = compile(
            "entry M.f\nclass M {\n  method static f(a: i32): i32 locals 1 {\n    iload 0\n    iload 0\n    mul\n    ret\n  }\n}\n",
            &c,
        );
        let a = estimate_area(&k, &c, &plan);
        assert_eq!((a.bus, a.multiplexers), (0, 0));
        assert_eq!(a.total, a.arithmetic + a.control);
        assert!(a.arithmetic >= c.area.mul);
    }

    #[test]
    fn two_target_dispatch_costs_two_mux_entries_and_monomorphizing_removes_them() {
        let c = CostModel::default();
        let (k, plan) = compile(crate::fixtures::SHAPES, &c);
        let poly = estimate_area(&k, &c, &plan);
        assert_eq!(poly.multiplexers, 2 * c.area.mux);
        let (k, plan) = compile(crate::fixtures::SHAPES_MONO, &c);
        let mono = estimate_area(&k, &c, &plan);
        assert_eq!(mono.multiplexers, 0);
        assert!(mono.total < poly.total);
    }

    #[test]
    fn doubling_area_entries_doubles_the_total() {
        let c = CostModel::default();
        for src in [
            crate::fixtures::SHAPES,
            crate::fixtures::FIR,
            crate::fixtures::ALLOC,
        ] {
            let (k, plan) = compile(src, &c);
            let one = estimate_area(&k, &c, &plan).total;
            let two = estimate_area(&k, &c.scale_area(2), &plan).total;
            assert_eq!(two, 2 * one);
        }
    }

    #[test]
    fn data_dependent_loop_is_input_dependent() {
        let (k, _) = compile(crate::fixtures::COLLATZ, &CostModel::default());
        let r = latency(&k);
        assert_eq!(r.exact(), None);
        assert_eq!(r.mode_name(), "input-dependent");
    }

    #[test]
    fn counted_loop_total_is_the_trip_weighted_block_sum() {
        let p = parse_program(crate::fixtures::VECTOR_SUM).expect("parses");
        let (_, k) = transform_entry(&p, TransformOptions { coalesce: false }).expect("lowers");
        let s = schedule(&build_kernel(&k).expect("builds"), &CostModel::default());
        let bus = BusModel::default();
        let r = latency(&s);
        // Independent count: every reachable block runs once except the loop
        // header (17 times) and the body (16 times); each body iteration
        // does one element read.
        let m = &s.graph.methods[0];
        let (header, members) = m.loops.iter().next().expect("one loop");
        let mut total = 0u64;
        for (bi, _) in m.reachable_blocks() {
            let runs = if bi == *header {
                17
            } else if members.contains(&bi) {
                16
            } else if m.blocks[bi].term == crate::hwmodel::Terminator::Exit {
                0
            } else {
                1
            };
            total += runs * u64::from(s.block(0, bi).latency);
        }
        total += 17 * bus.transaction(1);
        assert_eq!(r.exact(), Some(total));
    }
}
