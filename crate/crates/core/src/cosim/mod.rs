//! Cycle-level co-simulation of a scheduled kernel against a bus-attached
//! heap and a host syscall channel.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze_from, OffloadError};
use crate::config::RunConfig;
use crate::hwmodel::{self, NodeOp, Operand, ScheduledKernel, Terminator};
use crate::jir::{
    prepare, run_method, ArgValue, HostState, InterpError, Linked, NativeFn, Program, QualName,
    SyscallKind, TrapKind,
};
use crate::transform::{transform_kernel, TransformError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusModel {
    pub base: u64,
    pub per_beat: u64,
}

impl Default for BusModel {
    fn default() -> Self {
        BusModel {
            base: 8,
            per_beat: 1,
        }
    }
}

impl BusModel {
    pub fn transaction(&self, beats: u64) -> u64 {
        self.base + beats * self.per_beat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallChannel {
    pub roundtrip: u64,
}

impl Default for SyscallChannel {
    fn default() -> Self {
        SyscallChannel { roundtrip: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub bus: BusModel,
    pub channel: SyscallChannel,
    /// Abort with `out_of_fuel` once this many cycles have elapsed.
    pub max_cycles: u64,
    /// Instruction budget for software run on the host.
    pub host_fuel: u64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bus: BusModel::default(),
            channel: SyscallChannel::default(),
            max_cycles: 1 << 40,
            host_fuel: 50_000_000,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub compute_cycles: u64,
    pub bus_transactions: u64,
    pub bus_cycles: u64,
    pub syscalls: u64,
    pub syscall_cycles: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.compute_cycles + self.bus_cycles + self.syscall_cycles
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrap {
    pub kind: TrapKind,
    pub cycle: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub unit: String,
    pub event: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub value: Option<i32>,
    pub trap: Option<SimTrap>,
    pub total_cycles: u64,
    pub counters: Counters,
    pub heap: Vec<i32>,
    pub log: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
}

impl SimResult {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let _ = writeln!(out, "{:>8} {:<4} {}", e.cycle, e.unit, e.event);
        }
        out
    }
}

/// Runs the kernel root with `args` on `host`. `program`/`linked` give the
/// host the source program for allocation layouts and software calls.
pub fn simulate(
    k: &ScheduledKernel,
    program: &Program,
    linked: &Linked,
    host: &mut HostState,
    args: &[i32],
    cfg: &SimConfig,
) -> SimResult {
    let mut sim = Sim {
        k,
        program,
        linked,
        host,
        cfg,
        c: Counters::default(),
        trace: Vec::new(),
    };
    let outcome = sim.run(0, args);
    let (value, trap) = match outcome {
        Ok(v) => (v, None),
        Err(kind) => (
            None,
            Some(SimTrap {
                kind,
                cycle: sim.c.total(),
            }),
        ),
    };
    let c = sim.c;
    let trace = std::mem::take(&mut sim.trace);
    SimResult {
        value,
        trap,
        total_cycles: c.total(),
        counters: c,
        heap: host.heap.words().to_vec(),
        log: host.log.clone(),
        trace,
    }
}

struct Sim<'a> {
    k: &'a ScheduledKernel,
    program: &'a Program,
    linked: &'a Linked,
    host: &'a mut HostState,
    cfg: &'a SimConfig,
    c: Counters,
    trace: Vec<TraceEvent>,
}

impl Sim<'_> {
    fn event(&mut self, unit: &str, event: impl FnOnce() -> String) {
        if self.cfg.trace {
            self.trace.push(TraceEvent {
                cycle: self.c.total(),
                unit: unit.to_string(),
                event: event(),
            });
        }
    }

    fn bus(&mut self, beats: u64) {
        self.c.bus_transactions += 1;
        self.c.bus_cycles += self.cfg.bus.transaction(beats);
    }

    fn run(&mut self, mi: usize, args: &[i32]) -> Result<Option<i32>, TrapKind> {
        let k = self.k;
        let m = &k.graph.methods[mi];
        let mut locals = vec![0i32; m.locals as usize];
        locals[..args.len()].copy_from_slice(args);
        let mut buffers: Vec<Vec<i32>> = m.buffers.iter().map(|&n| vec![0; n as usize]).collect();
        let mut stack: Vec<i32> = Vec::new();
        let mut b = 0usize;
        loop {
            let blk = &m.blocks[b];
            let sched = &k.blocks[mi][b];
            self.c.compute_cycles += u64::from(sched.latency);
            if self.c.total() > self.cfg.max_cycles {
                return Err(TrapKind::OutOfFuel);
            }
            self.event("ctl", || format!("enter {}#{b}", m.name));
            let mut vals = vec![0i32; blk.nodes.len()];
            let mut taken = false;
            for (ni, n) in blk.nodes.iter().enumerate() {
                let get = |o: &Operand, vals: &[i32]| match *o {
                    Operand::Const(c) => c,
                    Operand::Local(l) => locals[l as usize],
                    Operand::StackIn(s) => stack[s as usize],
                    Operand::Node(x) => vals[x as usize],
                };
                let a: Vec<i32> = n.args.iter().map(|o| get(o, &vals)).collect();
                let v = match &n.op {
                    NodeOp::Bin(op) => op.eval(a[0], a[1]).ok_or(TrapKind::DivByZero)?,
                    NodeOp::Branch(c) => {
                        taken = c.holds(a[0], a[1]);
                        0
                    }
                    NodeOp::Jump | NodeOp::Ret => 0,
                    NodeOp::BusRead(off) => {
                        let addr = i64::from(a[0]) + i64::from(*off);
                        self.bus(1);
                        let v = self.host.heap.read(addr);
                        self.event("bus", || format!("read [{addr}] = {v}"));
                        v
                    }
                    NodeOp::BusReadIdx(off) => {
                        let addr = i64::from(a[0]) + i64::from(*off) + i64::from(a[1]);
                        self.bus(1);
                        let v = self.host.heap.read(addr);
                        self.event("bus", || format!("read [{addr}] = {v}"));
                        v
                    }
                    NodeOp::BusWrite(off) => {
                        let addr = i64::from(a[0]) + i64::from(*off);
                        self.bus(1);
                        self.host.heap.write(addr, a[1]);
                        self.event("bus", || format!("write [{addr}] = {}", a[1]));
                        0
                    }
                    NodeOp::BusWriteIdx(off) => {
                        let addr = i64::from(a[0]) + i64::from(*off) + i64::from(a[1]);
                        self.bus(1);
                        self.host.heap.write(addr, a[2]);
                        self.event("bus", || format!("write [{addr}] = {}", a[2]));
                        0
                    }
                    NodeOp::BusBurst {
                        buffer,
                        offset,
                        len,
                    } => {
                        let base = i64::from(a[0]) + i64::from(*offset);
                        self.bus(u64::from(*len));
                        let buf = &mut buffers[*buffer as usize];
                        for (j, w) in buf.iter_mut().enumerate().take(*len as usize) {
                            *w = self.host.heap.read(base + j as i64);
                        }
                        self.event("bus", || format!("burst [{base}..+{len}] -> buf{buffer}"));
                        0
                    }
                    NodeOp::BufRead { buffer, offset } => {
                        let idx = i64::from(a[0]) + i64::from(*offset);
                        let buf = &buffers[*buffer as usize];
                        *usize::try_from(idx)
                            .ok()
                            .and_then(|i| buf.get(i))
                            .unwrap_or_else(|| {
                                panic!("{}: buffer {buffer} read at {idx} out of range", m.name)
                            })
                    }
                    NodeOp::Syscall(id) => {
                        self.c.syscalls += 1;
                        self.c.syscall_cycles += self.cfg.channel.roundtrip;
                        self.event("sys", || format!("syscall {id}"));
                        self.syscall(*id, &a)?.unwrap_or(0)
                    }
                    NodeOp::Call(callee) => {
                        self.event("ctl", || {
                            format!("call {}", k.graph.methods[*callee as usize].name)
                        });
                        self.run(*callee as usize, &a)?.unwrap_or(0)
                    }
                };
                vals[ni] = v;
            }
            let get = |o: &Operand| match *o {
                Operand::Const(c) => c,
                Operand::Local(l) => locals[l as usize],
                Operand::StackIn(s) => stack[s as usize],
                Operand::Node(x) => vals[x as usize],
            };
            let next_stack: Vec<i32> = blk.stack_out.iter().map(get).collect();
            let writes: Vec<(u16, i32)> = blk.writes.iter().map(|(l, o)| (*l, get(o))).collect();
            let next = match &blk.term {
                Terminator::Goto(n) => *n,
                Terminator::Branch { taken: t, fall, .. } => {
                    if taken {
                        *t
                    } else {
                        *fall
                    }
                }
                Terminator::Return(v) => return Ok(v.as_ref().map(get)),
                Terminator::Exit => unreachable!("trap syscalls return an error"),
            };
            for (l, v) in writes {
                locals[l as usize] = v;
            }
            stack = next_stack;
            b = next;
        }
    }

    fn syscall(&mut self, id: u32, args: &[i32]) -> Result<Option<i32>, TrapKind> {
        let decl = self
            .k
            .graph
            .syscalls
            .get(id as usize)
            .expect("declared syscall");
        match &decl.kind {
            SyscallKind::AllocObject(c) => {
                let idx = self.program.class_index(c).expect("allocated class exists");
                let fields = self.program.field_count(c);
                self.host
                    .heap
                    .alloc_object(Program::class_tag(idx), fields)
                    .map(Some)
            }
            SyscallKind::AllocArray => self.host.heap.alloc_array(args[0]).map(Some),
            SyscallKind::Native(q) => {
                let f = NativeFn::by_name(&q.member).expect("bound native");
                Ok(self.host.call_native(f, args))
            }
            SyscallKind::SoftCall {
                method,
                virtual_dispatch,
            } => {
                let id = if *virtual_dispatch {
                    if args[0] == 0 {
                        return Err(TrapKind::NullDeref);
                    }
                    let tag = self.host.heap.read(i64::from(args[0]));
                    self.linked
                        .dispatch_by_name(tag, &method.member)
                        .ok_or(TrapKind::BadDispatch)?
                } else {
                    self.linked.id(method).expect("linked soft-call target")
                };
                run_method(self.linked, self.host, id, args).map_err(|t| t.kind)
            }
            SyscallKind::Trap(kind) => Err(*kind),
        }
    }
}

#[derive(Debug, Error)]
pub enum OffloadRunError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Kernel(#[from] hwmodel::KernelError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

impl OffloadRunError {
    pub fn offload(&self) -> Option<&OffloadError> {
        match self {
            OffloadRunError::Transform(TransformError::Offload(e)) => Some(e),
            _ => None,
        }
    }
}

/// Everything produced on the way from source to a simulation-ready kernel.
pub struct Compiled {
    pub analysis: crate::analysis::Analysis,
    pub lowered: crate::transform::LoweredKernel,
    pub scheduled: ScheduledKernel,
    pub linked: Linked,
}

pub fn compile(p: &Program, root: &QualName, cfg: &RunConfig) -> Result<Compiled, OffloadRunError> {
    let analysis = analyze_from(p, std::slice::from_ref(root));
    let lowered = transform_kernel(p, &analysis, root, cfg.transform)?;
    let graph = hwmodel::build_kernel(&lowered)?;
    let scheduled = hwmodel::schedule(&graph, &cfg.cost);
    let linked = Linked::new(p).map_err(InterpError::Link)?;
    Ok(Compiled {
        analysis,
        lowered,
        scheduled,
        linked,
    })
}

/// The estimate records written next to a compiled kernel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub root: QualName,
    pub methods: Vec<QualName>,
    pub syscalls: Vec<crate::jir::SyscallDecl>,
    pub dispatch: crate::transform::DispatchPlan,
    pub census: std::collections::BTreeMap<String, usize>,
    pub area: hwmodel::AreaEstimate,
    pub latency: hwmodel::LatencyReport,
}

impl Compiled {
    pub fn report(&self, cfg: &RunConfig) -> CompileReport {
        CompileReport {
            root: self.lowered.root.clone(),
            methods: self
                .lowered
                .methods
                .iter()
                .map(|(q, _)| q.clone())
                .collect(),
            syscalls: self.lowered.syscalls.clone(),
            dispatch: self.lowered.dispatch.clone(),
            census: self.lowered.census(),
            area: hwmodel::estimate_area(&self.scheduled, &cfg.cost, &self.lowered.dispatch),
            latency: hwmodel::estimate_latency(&self.scheduled, &cfg.sim.bus, &cfg.sim.channel),
        }
    }

    /// Simulates the kernel on a fresh heap holding `args`.
    pub fn run(
        &self,
        p: &Program,
        args: &[ArgValue],
        cfg: &RunConfig,
    ) -> Result<SimResult, OffloadRunError> {
        let (mut host, words) = prepare(
            p,
            &self.lowered.root,
            args,
            cfg.sim.host_fuel,
            cfg.heap_words,
        )?;
        Ok(simulate(
            &self.scheduled,
            p,
            &self.linked,
            &mut host,
            &words,
            &cfg.sim,
        ))
    }
}

/// Analyze, transform, build, schedule and simulate in one step.
pub fn run_offloaded(
    p: &Program,
    entry: &QualName,
    args: &[ArgValue],
    cfg: &RunConfig,
) -> Result<SimResult, OffloadRunError> {
    compile(p, entry, cfg)?.run(p, args, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jir::{interpret_method, parse_program};

    fn fixture(text: &str) -> Program {
        parse_program(text).expect("fixture parses")
    }

    fn no_coalesce() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.transform.coalesce = false;
        cfg
    }

    #[test]
    fn vector_sum_of_four_counts_length_and_element_reads() {
        let p = fixture(crate::fixtures::VECTOR_SUM);
        let r = run_offloaded(
            &p,
            &QualName::new("Vec", "sum"),
            &[ArgValue::Array(vec![1, 2, 3, 4])],
            &no_coalesce(),
        )
        .expect("runs");
        assert_eq!(r.value, Some(10));
        assert_eq!(r.counters.bus_transactions, 5);
        assert_eq!(r.counters.bus_cycles, 5 * (8 + 1));
        assert_eq!(r.counters.syscalls, 0);
    }

    #[test]
    fn collatz_values_and_repeatability() {
        let p = fixture(crate::fixtures::COLLATZ);
        let q = QualName::new("Collatz", "steps");
        let cfg = RunConfig::default();
        for (n, steps) in [(6, 8), (27, 111), (1, 0)] {
            let r = run_offloaded(&p, &q, &[ArgValue::Int(n)], &cfg).expect("runs");
            assert_eq!(r.value, Some(steps), "collatz({n})");
            assert_eq!(r.counters.bus_cycles + r.counters.syscall_cycles, 0);
        }
        let first = run_offloaded(&p, &q, &[ArgValue::Int(6)], &cfg).expect("runs");
        assert!(first.total_cycles > 0);
        for _ in 0..10 {
            assert_eq!(
                run_offloaded(&p, &q, &[ArgValue::Int(6)], &cfg).expect("runs"),
                first
            );
        }
    }

    #[test]
    fn allocation_is_charged_the_roundtrip() {
        let p = fixture(crate::fixtures::ALLOC);
        let cfg = RunConfig::default();
        let r = run_offloaded(
            &p,
            &QualName::new("Alloc", "make"),
            &[ArgValue::Int(5)],
            &cfg,
        )
        .expect("runs");
        let sw = interpret_method(
            &p,
            &QualName::new("Alloc", "make"),
            &[ArgValue::Int(5)],
            cfg.sim.host_fuel,
        )
        .expect("runs");
        assert_eq!(r.value, sw.value);
        assert_eq!(r.heap, sw.heap);
        assert!(r.total_cycles >= cfg.sim.channel.roundtrip);
        assert_eq!(
            r.counters.syscall_cycles,
            r.counters.syscalls * cfg.sim.channel.roundtrip
        );
        assert_eq!(r.counters.syscalls, 2);
    }

    #[test]
    fn totals_are_the_sum_of_components() {
        let cfg = RunConfig::default();
        for (src, q, args) in [
            (
                crate::fixtures::ALLOC,
                QualName::new("Alloc", "make"),
                vec![ArgValue::Int(3)],
            ),
            (
                crate::fixtures::SHAPES,
                QualName::new("Shapes", "total"),
                vec![ArgValue::Int(4)],
            ),
            (
                crate::fixtures::VECTOR_SUM,
                QualName::new("Vec", "sum16"),
                vec![ArgValue::Array((0..16).collect())],
            ),
        ] {
            let r = run_offloaded(&fixture(src), &q, &args, &cfg).expect("runs");
            assert_eq!(r.total_cycles, r.counters.total(), "{q}");
        }
    }

    #[test]
    fn slower_bus_and_channel_never_speed_up_or_change_results() {
        let p = fixture(crate::fixtures::SHAPES);
        let q = QualName::new("Shapes", "total");
        let base = RunConfig::default();
        let r0 = run_offloaded(&p, &q, &[ArgValue::Int(7)], &base).expect("runs");
        let mut slow = base.clone();
        slow.sim.bus.base += 5;
        slow.sim.channel.roundtrip += 100;
        let r1 = run_offloaded(&p, &q, &[ArgValue::Int(7)], &slow).expect("runs");
        assert_eq!(r0.value, r1.value);
        assert_eq!(r0.heap, r1.heap);
        assert!(r1.total_cycles > r0.total_cycles);
    }

    #[test]
    fn coalescing_reduces_transactions_only() {
        let p = fixture(crate::fixtures::VECTOR_SUM);
        let q = QualName::new("Vec", "sum16");
        let args = [ArgValue::Array((1..=16).collect())];
        let on = run_offloaded(&p, &q, &args, &RunConfig::default()).expect("runs");
        let off = run_offloaded(&p, &q, &args, &no_coalesce()).expect("runs");
        assert_eq!(on.value, off.value);
        assert_eq!(on.heap, off.heap);
        assert_eq!(off.counters.bus_transactions, 17);
        assert!(on.counters.bus_transactions < off.counters.bus_transactions);
    }

    #[test]
    fn hardware_trap_stops_with_partial_cycles() {
        let p = fixture(crate::fixtures::VECTOR_SUM);
        let cfg = RunConfig::default();
        let r = run_offloaded(
            &p,
            &QualName::new("Vec", "sum16"),
            &[ArgValue::Array(vec![1, 2, 3])],
            &cfg,
        )
        .expect("runs");
        let t = r.trap.expect("out of bounds");
        assert_eq!(t.kind, TrapKind::OutOfBounds);
        assert_eq!(t.cycle, r.total_cycles);
        assert_eq!(r.value, None);
    }

    #[test]
    fn trace_lists_events_in_cycle_order() {
        let p = fixture(crate::fixtures::ALLOC);
        let mut cfg = RunConfig::default();
        cfg.sim.trace = true;
        let r = run_offloaded(
            &p,
            &QualName::new("Alloc", "make"),
            &[ArgValue::Int(2)],
            &cfg,
        )
        .expect("runs");
        assert!(!r.trace.is_empty());
        assert!(r.trace.windows(2).all(|w| w[0].cycle <= w[1].cycle));
        assert_eq!(r.trace_text().lines().count(), r.trace.len());
        assert!(r.trace.iter().any(|e| e.unit == "sys"));
    }
}
