//! ASAP list scheduling of each block DAG with one bus port and one
//! syscall port.

use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::kernel::{KernelGraph, NodeOp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub start: Vec<u32>,
    pub finish: Vec<u32>,
    /// Max finish cycle; 0 for a block without nodes.
    pub latency: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledKernel {
    pub graph: KernelGraph,
    /// Indexed like `graph.methods[m].blocks[b]`.
    pub blocks: Vec<Vec<BlockSchedule>>,
}

impl ScheduledKernel {
    pub fn block(&self, method: usize, block: usize) -> &BlockSchedule {
        &self.blocks[method][block]
    }
}

pub fn node_latency(c: &CostModel, op: &NodeOp) -> u32 {
    match op {
        NodeOp::Bin(b) => c.bin_latency(*b),
        NodeOp::Branch(_) => c.lat.compare,
        NodeOp::Jump => c.lat.branch,
        NodeOp::BusRead(_)
        | NodeOp::BusReadIdx(_)
        | NodeOp::BusWrite(_)
        | NodeOp::BusWriteIdx(_)
        | NodeOp::BusBurst { .. } => c.lat.bus,
        NodeOp::BufRead { .. } => c.lat.buf,
        NodeOp::Syscall(_) => c.lat.syscall,
        NodeOp::Call(_) => c.lat.call,
        NodeOp::Ret => c.lat.ret,
    }
}

pub fn schedule(k: &KernelGraph, c: &CostModel) -> ScheduledKernel {
    let blocks = k
        .methods
        .iter()
        .map(|m| {
            m.blocks
                .iter()
                .map(|b| {
                    let mut start = Vec::with_capacity(b.nodes.len());
                    let mut finish: Vec<u32> = Vec::with_capacity(b.nodes.len());
                    let mut bus_free = 0u32;
                    let mut sys_free = 0u32;
                    for n in &b.nodes {
                        let mut t = n.preds().map(|p| finish[p as usize]).max().unwrap_or(0);
                        if n.op.is_bus() {
                            t = t.max(bus_free);
                        }
                        if matches!(n.op, NodeOp::Syscall(_)) {
                            t = t.max(sys_free);
                        }
                        let f = t + node_latency(c, &n.op);
                        if n.op.is_bus() {
                            bus_free = f;
                        }
                        if matches!(n.op, NodeOp::Syscall(_)) {
                            sys_free = f;
                        }
                        start.push(t);
                        finish.push(f);
                    }
                    let latency = finish.iter().copied().max().unwrap_or(0);
                    BlockSchedule {
                        start,
                        finish,
                        latency,
                    }
                })
                .collect()
        })
        .collect();
    ScheduledKernel {
        graph: k.clone(),
        blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwmodel::build_kernel;
    use crate::jir::parse_program;
    use crate::transform::{LoweredKernel, TransformOptions};

    /// Schedules a one-method kernel written directly in lowered form.
    fn sched(body: &str) -> ScheduledKernel {
        let src = format!("entry M.f\nclass M {{\n  method static f(a: i32, b: i32): i32 locals 2 {{\n{body}  }}\n}}\n");
        let p = parse_program(&src).expect("parses");
        let k = LoweredKernel::from_program(&p, TransformOptions::default()).expect("has entry");
        schedule(&build_kernel(&k).expect("builds"), &CostModel::default())
    }

    fn finish_of(k: &ScheduledKernel, pick: impl Fn(&NodeOp) -> bool) -> Vec<u32> {
        let b = &k.graph.methods[0].blocks[0];
        b.nodes
            .iter()
            .zip(&k.blocks[0][0].finish)
            .filter(|(n, _)| pick(&n.op))
            .map(|(_, f)| *f)
            .collect()
    }

    #[test]
    fn dependent_add_chain_takes_three_cycles() {
        let k = sched("    iload 0\n    iload 1\n    add\n    iload 1\n    add\n    iload 1\n    add\n    ret\n");
        let adds = finish_of(&k, |op| matches!(op, NodeOp::Bin(_)));
        assert_eq!(adds, vec![1, 2, 3]);
        assert_eq!(k.blocks[0][0].latency, 3 + CostModel::default().lat.ret);
    }

    #[test]
    fn independent_adds_feed_a_multiply() {
        let k = sched("    iload 0\n    iload 1\n    add\n    iload 0\n    iload 1\n    sub\n    mul\n    ret\n");
        let bins = finish_of(&k, |op| matches!(op, NodeOp::Bin(_)));
        assert_eq!(bins, vec![1, 1, 4]);
    }

    #[test]
    fn independent_bus_reads_share_one_port() {
        let k =
            sched("    iload 0\n    BUS_READ +2\n    iload 0\n    BUS_READ +3\n    add\n    ret\n");
        let b = &k.graph.methods[0].blocks[0];
        let starts: Vec<u32> = b
            .nodes
            .iter()
            .zip(&k.blocks[0][0].start)
            .filter(|(n, _)| matches!(n.op, NodeOp::BusRead(_)))
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(starts, vec![0, 1]);
        assert!(b.nodes[0].preds().next().is_none() && b.nodes[1].preds().next().is_none());
    }

    #[test]
    fn predecessors_finish_before_successors_start() {
        let p = parse_program(crate::fixtures::MD5).expect("parses");
        let (_, lowered) =
            crate::transform::transform_entry(&p, TransformOptions::default()).expect("lowers");
        let k = schedule(
            &build_kernel(&lowered).expect("builds"),
            &CostModel::default(),
        );
        for (m, method) in k.graph.methods.iter().enumerate() {
            for (bi, b) in method.blocks.iter().enumerate() {
                let s = k.block(m, bi);
                let mut bus = Vec::new();
                for (i, n) in b.nodes.iter().enumerate() {
                    for pr in n.preds() {
                        assert!(s.finish[pr as usize] <= s.start[i]);
                    }
                    if n.op.is_bus() {
                        bus.push((s.start[i], s.finish[i]));
                    }
                }
                bus.sort();
                assert!(bus.windows(2).all(|w| w[0].1 <= w[1].0), "bus port overlap");
            }
        }
    }
}
