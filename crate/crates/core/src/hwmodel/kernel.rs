//! Per-block dataflow graphs built from lowered kernel code.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cfg::Cfg;
use crate::jir::{BinOp, Cond, Instr, MethodDef, QualName, SyscallDecl, SyscallKind};
use crate::transform::{DispatchPlan, LoweredKernel};

/// A value consumed by a node: a constant, a local as it was on block
/// entry, an operand-stack slot live on block entry, or a node result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Const(i32),
    Local(u16),
    StackIn(u16),
    Node(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOp {
    Bin(BinOp),
    Branch(Cond),
    Jump,
    BusRead(i32),
    BusReadIdx(i32),
    BusWrite(i32),
    BusWriteIdx(i32),
    BusBurst {
        buffer: u16,
        offset: i32,
        len: u16,
    },
    BufRead {
        buffer: u16,
        offset: i32,
    },
    Syscall(u32),
    /// Call of kernel method by index.
    Call(u32),
    Ret,
}

impl NodeOp {
    pub fn is_bus(&self) -> bool {
        matches!(
            self,
            NodeOp::BusRead(_)
                | NodeOp::BusReadIdx(_)
                | NodeOp::BusWrite(_)
                | NodeOp::BusWriteIdx(_)
                | NodeOp::BusBurst { .. }
        )
    }

    fn is_barrier(&self) -> bool {
        matches!(
            self,
            NodeOp::BusWrite(_)
                | NodeOp::BusWriteIdx(_)
                | NodeOp::BusBurst { .. }
                | NodeOp::Syscall(_)
                | NodeOp::Call(_)
        )
    }

    fn is_effect(&self) -> bool {
        self.is_barrier()
            || matches!(
                self,
                NodeOp::BusRead(_) | NodeOp::BusReadIdx(_) | NodeOp::BufRead { .. }
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub op: NodeOp,
    pub args: Vec<Operand>,
    /// Ordering-only predecessors (memory and host effects).
    pub after: Vec<u32>,
    pub has_value: bool,
}

impl Node {
    /// All predecessor nodes: data producers then ordering edges.
    pub fn preds(&self) -> impl Iterator<Item = u32> + '_ {
        self.args
            .iter()
            .filter_map(|a| match a {
                Operand::Node(n) => Some(*n),
                _ => None,
            })
            .chain(self.after.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminator {
    /// Falls through or jumps unconditionally.
    Goto(usize),
    /// Branch node decides; `taken` when the condition holds.
    Branch {
        node: u32,
        taken: usize,
        fall: usize,
    },
    Return(Option<Operand>),
    /// Trap syscall: control never comes back.
    Exit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGraph {
    pub nodes: Vec<Node>,
    /// Operand-stack depth on entry.
    pub stack_in: u16,
    /// Operand stack on exit, bottom first.
    pub stack_out: Vec<Operand>,
    /// Local writes applied on exit, in local order.
    pub writes: Vec<(u16, Operand)>,
    pub term: Terminator,
    pub reachable: bool,
    /// Static trip count when this block heads a counted loop.
    pub trip: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMethod {
    pub name: QualName,
    pub arg_slots: u16,
    pub locals: u16,
    pub buffers: Vec<u16>,
    pub returns: bool,
    pub blocks: Vec<BlockGraph>,
    /// Loop header -> blocks of that loop.
    pub loops: BTreeMap<usize, Vec<usize>>,
}

impl KernelMethod {
    pub fn reachable_blocks(&self) -> impl Iterator<Item = (usize, &BlockGraph)> {
        self.blocks.iter().enumerate().filter(|(_, b)| b.reachable)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGraph {
    pub root: QualName,
    /// Root first.
    pub methods: Vec<KernelMethod>,
    pub syscalls: Vec<SyscallDecl>,
    pub dispatch: DispatchPlan,
}

impl KernelGraph {
    pub fn node_count(&self) -> usize {
        self.methods
            .iter()
            .flat_map(|m| m.reachable_blocks())
            .map(|(_, b)| b.nodes.len())
            .sum()
    }

    pub fn is_trap_syscall(&self, id: u32) -> bool {
        self.syscalls
            .get(id as usize)
            .is_some_and(|d| matches!(d.kind, SyscallKind::Trap(_)))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{method}: {message}")]
pub struct KernelError {
    pub method: QualName,
    pub message: String,
}

pub fn build_kernel(k: &LoweredKernel) -> Result<KernelGraph, KernelError> {
    let index: HashMap<&QualName, u32> = k
        .methods
        .iter()
        .enumerate()
        .map(|(i, (q, _))| (q, i as u32))
        .collect();
    let methods = k
        .methods
        .iter()
        .map(|(q, m)| build_method(k, &index, q, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KernelGraph {
        root: k.root.clone(),
        methods,
        syscalls: k.syscalls.clone(),
        dispatch: k.dispatch.clone(),
    })
}

fn build_method(
    k: &LoweredKernel,
    index: &HashMap<&QualName, u32>,
    q: &QualName,
    m: &MethodDef,
) -> Result<KernelMethod, KernelError> {
    let err = |message: String| KernelError {
        method: q.clone(),
        message,
    };
    let is_trap = |i: &Instr| match i {
        Instr::Syscall(id) => k
            .syscall(*id)
            .is_some_and(|d| matches!(d.kind, SyscallKind::Trap(_))),
        _ => false,
    };
    let cfg = Cfg::build(&m.body, &is_trap);
    if cfg.is_empty() {
        return Err(err("empty body".into()));
    }

    let effect = |i: &Instr| -> Result<(usize, usize), KernelError> {
        Ok(match i {
            Instr::Const(_) | Instr::Load(_) => (0, 1),
            Instr::Store(_) | Instr::Pop => (1, 0),
            Instr::Dup => (1, 2),
            Instr::Bin(_) => (2, 1),
            Instr::If(..) => (2, 0),
            Instr::Goto(_) => (0, 0),
            Instr::Ret => (usize::from(m.ret.is_some()), 0),
            Instr::BusRead { .. } => (1, 1),
            Instr::BusReadIdx { .. } => (2, 1),
            Instr::BusWrite { .. } => (2, 0),
            Instr::BusWriteIdx { .. } => (3, 0),
            Instr::BusBurst { .. } => (1, 0),
            Instr::BufRead { .. } => (1, 1),
            Instr::Syscall(id) => {
                let d = k
                    .syscall(*id)
                    .ok_or_else(|| err(format!("unknown syscall {id}")))?;
                (d.args as usize, d.results as usize)
            }
            Instr::Call(t) => {
                let callee = k
                    .method(t)
                    .ok_or_else(|| err(format!("call to non-kernel method `{t}`")))?;
                (
                    callee.arg_slots() as usize,
                    usize::from(callee.ret.is_some()),
                )
            }
            other => {
                return Err(err(format!(
                    "opcode `{}` is not allowed in kernels",
                    other.mnemonic()
                )))
            }
        })
    };

    // Stack depth on entry to every reachable block.
    let mut depth: Vec<Option<usize>> = vec![None; cfg.len()];
    depth[0] = Some(0);
    for b in cfg.rpo() {
        let mut d =
            depth[b].ok_or_else(|| err(format!("block {b} visited before its depth is known")))?;
        let blk = &cfg.blocks[b];
        for i in &cfg.ops[blk.start..blk.end] {
            let (pops, pushes) = effect(i)?;
            d = d
                .checked_sub(pops)
                .ok_or_else(|| err(format!("stack underflow in block {b}")))?
                + pushes;
        }
        for s in blk.succs() {
            match depth[s] {
                None => depth[s] = Some(d),
                Some(old) if old != d => {
                    return Err(err(format!("stack depth mismatch entering block {s}")))
                }
                _ => {}
            }
        }
    }

    let counted: HashMap<usize, u32> = cfg
        .counted_loops()
        .iter()
        .map(|c| (c.header, c.trip))
        .collect();
    let loops = cfg
        .natural_loops()
        .into_iter()
        .map(|l| (l.header, l.blocks.into_iter().collect()))
        .collect();

    let mut blocks = Vec::with_capacity(cfg.len());
    for (b, blk) in cfg.blocks.iter().enumerate() {
        if !cfg.reachable[b] {
            blocks.push(BlockGraph {
                nodes: Vec::new(),
                stack_in: 0,
                stack_out: Vec::new(),
                writes: Vec::new(),
                term: Terminator::Exit,
                reachable: false,
                trip: None,
            });
            continue;
        }
        let d = depth[b].expect("reachable block has depth");
        let mut g = BlockBuilder::new(d as u16);
        let mut term = None;
        for i in &cfg.ops[blk.start..blk.end] {
            match i {
                Instr::Const(c) => g.stack.push(Operand::Const(*c)),
                Instr::Load(l) => {
                    let v = g.env.get(l).copied().unwrap_or(Operand::Local(*l));
                    g.stack.push(v);
                }
                Instr::Store(l) => {
                    let v = g.pop();
                    g.env.insert(*l, v);
                }
                Instr::Pop => {
                    g.pop();
                }
                Instr::Dup => {
                    let v = *g.stack.last().expect("depth checked");
                    g.stack.push(v);
                }
                Instr::Bin(op) => {
                    let args = g.pop_n(2);
                    let n = g.node(NodeOp::Bin(*op), args, true);
                    g.stack.push(n);
                }
                Instr::If(c, _) => {
                    let args = g.pop_n(2);
                    let Operand::Node(n) = g.node(NodeOp::Branch(*c), args, false) else {
                        unreachable!()
                    };
                    term = Some(Terminator::Branch {
                        node: n,
                        taken: blk.taken.expect("branch target"),
                        fall: blk
                            .fall
                            .ok_or_else(|| err("conditional branch falls off the end".into()))?,
                    });
                }
                Instr::Goto(_) => {
                    g.node(NodeOp::Jump, Vec::new(), false);
                    term = Some(Terminator::Goto(blk.taken.expect("goto target")));
                }
                Instr::Ret => {
                    let args = if m.ret.is_some() {
                        g.pop_n(1)
                    } else {
                        Vec::new()
                    };
                    let v = args.first().copied();
                    g.node(NodeOp::Ret, args, false);
                    term = Some(Terminator::Return(v));
                }
                Instr::BusRead { offset } => {
                    let args = g.pop_n(1);
                    let n = g.node(NodeOp::BusRead(*offset), args, true);
                    g.stack.push(n);
                }
                Instr::BusReadIdx { offset } => {
                    let args = g.pop_n(2);
                    let n = g.node(NodeOp::BusReadIdx(*offset), args, true);
                    g.stack.push(n);
                }
                Instr::BusWrite { offset } => {
                    let args = g.pop_n(2);
                    g.node(NodeOp::BusWrite(*offset), args, false);
                }
                Instr::BusWriteIdx { offset } => {
                    let args = g.pop_n(3);
                    g.node(NodeOp::BusWriteIdx(*offset), args, false);
                }
                Instr::BusBurst {
                    buffer,
                    offset,
                    len,
                } => {
                    let args = g.pop_n(1);
                    g.node(
                        NodeOp::BusBurst {
                            buffer: *buffer,
                            offset: *offset,
                            len: *len,
                        },
                        args,
                        false,
                    );
                }
                Instr::BufRead { buffer, offset } => {
                    let args = g.pop_n(1);
                    let n = g.node(
                        NodeOp::BufRead {
                            buffer: *buffer,
                            offset: *offset,
                        },
                        args,
                        true,
                    );
                    g.stack.push(n);
                }
                Instr::Syscall(id) => {
                    let (pops, pushes) = effect(i)?;
                    let args = g.pop_n(pops);
                    let n = g.node(NodeOp::Syscall(*id), args, pushes > 0);
                    if pushes > 0 {
                        g.stack.push(n);
                    }
                    if is_trap(i) {
                        term = Some(Terminator::Exit);
                    }
                }
                Instr::Call(t) => {
                    let (pops, pushes) = effect(i)?;
                    let args = g.pop_n(pops);
                    let n = g.node(NodeOp::Call(index[t]), args, pushes > 0);
                    if pushes > 0 {
                        g.stack.push(n);
                    }
                }
                _ => unreachable!("rejected by stack effect"),
            }
        }
        let term = match term {
            Some(t) => t,
            None => Terminator::Goto(
                blk.fall
                    .ok_or_else(|| err("control falls off the end".into()))?,
            ),
        };
        let mut writes: Vec<(u16, Operand)> = g.env.into_iter().collect();
        writes.sort_by_key(|(l, _)| *l);
        blocks.push(BlockGraph {
            nodes: g.nodes,
            stack_in: d as u16,
            stack_out: g.stack,
            writes,
            term,
            reachable: true,
            trip: counted.get(&b).copied(),
        });
    }
    Ok(KernelMethod {
        name: q.clone(),
        arg_slots: m.arg_slots(),
        locals: m.locals,
        buffers: m.buffers.clone(),
        returns: m.ret.is_some(),
        blocks,
        loops,
    })
}

struct BlockBuilder {
    nodes: Vec<Node>,
    stack: Vec<Operand>,
    env: HashMap<u16, Operand>,
    last_barrier: Option<u32>,
    since_barrier: Vec<u32>,
}

impl BlockBuilder {
    fn new(depth: u16) -> Self {
        BlockBuilder {
            nodes: Vec::new(),
            stack: (0..depth).map(Operand::StackIn).collect(),
            env: HashMap::new(),
            last_barrier: None,
            since_barrier: Vec::new(),
        }
    }

    fn pop(&mut self) -> Operand {
        self.stack.pop().expect("depth checked")
    }

    fn pop_n(&mut self, n: usize) -> Vec<Operand> {
        let at = self.stack.len() - n;
        self.stack.split_off(at)
    }

    fn node(&mut self, op: NodeOp, args: Vec<Operand>, has_value: bool) -> Operand {
        let id = self.nodes.len() as u32;
        let mut after = Vec::new();
        if op.is_barrier() {
            after.extend(self.last_barrier);
            after.append(&mut self.since_barrier);
            self.last_barrier = Some(id);
        } else if op.is_effect() {
            after.extend(self.last_barrier);
            self.since_barrier.push(id);
        }
        self.nodes.push(Node {
            op,
            args,
            after,
            has_value,
        });
        Operand::Node(id)
    }
}
