//! Reference interpreter. Every later stage is checked against it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::heap::{ArgValue, Heap, DEFAULT_HEAP_WORDS, NULL};
use super::link::{LInstr, Linked, MethodId};
use super::{NativeFn, Program, Type, ARRAY_TAG};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrapKind {
    DivByZero,
    NullDeref,
    OutOfBounds,
    NegativeArraySize,
    OutOfMemory,
    OutOfFuel,
    StackOverflow,
    Throw,
    /// Receiver class matched no dispatch branch (lowered code only).
    BadDispatch,
}

impl TrapKind {
    pub const ALL: [TrapKind; 9] = [
        TrapKind::DivByZero,
        TrapKind::NullDeref,
        TrapKind::OutOfBounds,
        TrapKind::NegativeArraySize,
        TrapKind::OutOfMemory,
        TrapKind::OutOfFuel,
        TrapKind::StackOverflow,
        TrapKind::Throw,
        TrapKind::BadDispatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrapKind::DivByZero => "div_by_zero",
            TrapKind::NullDeref => "null_deref",
            TrapKind::OutOfBounds => "out_of_bounds",
            TrapKind::NegativeArraySize => "negative_array_size",
            TrapKind::OutOfMemory => "out_of_memory",
            TrapKind::OutOfFuel => "out_of_fuel",
            TrapKind::StackOverflow => "stack_overflow",
            TrapKind::Throw => "throw",
            TrapKind::BadDispatch => "bad_dispatch",
        }
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A trap with the method and instruction index where it was raised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trap {
    pub kind: TrapKind,
    pub method: String,
    pub pc: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub value: Option<i32>,
    pub trap: Option<Trap>,
    /// Per virtual callsite (`Class.method@index`), the implementations invoked.
    pub observed_targets: BTreeMap<String, BTreeSet<String>>,
    pub instructions: u64,
    pub log: Vec<i32>,
    pub heap: Vec<i32>,
}

impl ExecResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("exec result serializes")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterpError {
    #[error("program has no entry method")]
    NoEntry,
    #[error("link error: {0}")]
    Link(String),
    #[error("entry `{method}` expects {expected} arguments, got {got}")]
    Arity {
        method: String,
        expected: usize,
        got: usize,
    },
    #[error("argument {index} of `{method}`: {message}")]
    Argument {
        method: String,
        index: usize,
        message: String,
    },
    #[error("argument setup failed: {0}")]
    Setup(TrapKind),
}

pub const MAX_CALL_DEPTH: usize = 4096;

/// Host-side machine state: heap, native-function state and budgets.
/// Shared between the interpreter and co-simulation syscalls.
#[derive(Clone, Debug)]
pub struct HostState {
    pub heap: Heap,
    pub clock: i32,
    pub log: Vec<i32>,
    pub fuel: u64,
    pub executed: u64,
    pub observed: BTreeMap<(MethodId, u32), BTreeSet<MethodId>>,
}

impl HostState {
    pub fn new(heap: Heap, fuel: u64) -> Self {
        HostState {
            heap,
            clock: 0,
            log: Vec::new(),
            fuel,
            executed: 0,
            observed: BTreeMap::new(),
        }
    }

    pub fn call_native(&mut self, f: NativeFn, args: &[i32]) -> Option<i32> {
        match f {
            NativeFn::Now => {
                self.clock = self.clock.wrapping_add(1);
                Some(self.clock)
            }
            NativeFn::Log => {
                self.log.push(args[0]);
                None
            }
            NativeFn::Hash => Some(NativeFn::mix(args[0])),
        }
    }
}

struct Frame {
    method: MethodId,
    pc: u32,
    locals: Vec<i32>,
    stack: Vec<i32>,
}

impl Frame {
    fn new(linked: &Linked, method: MethodId, args: &[i32]) -> Frame {
        let m = linked.method(method);
        let mut locals = vec![0; m.locals as usize];
        locals[..args.len()].copy_from_slice(args);
        Frame {
            method,
            pc: 0,
            locals,
            stack: Vec::new(),
        }
    }
}

/// Runs `method` to completion on the host state. The program must have
/// been validated; stack discipline is assumed.
pub fn run_method(
    linked: &Linked,
    host: &mut HostState,
    method: MethodId,
    args: &[i32],
) -> Result<Option<i32>, Trap> {
    let mut frames = vec![Frame::new(linked, method, args)];
    loop {
        let depth = frames.len();
        let f = frames.last_mut().expect("frame");
        let code = &linked.method(f.method).code;
        let pc = f.pc;
        let trap = |kind: TrapKind| Trap {
            kind,
            method: linked.name(f.method).to_string(),
            pc,
        };
        if host.fuel == 0 {
            return Err(trap(TrapKind::OutOfFuel));
        }
        host.fuel -= 1;
        host.executed += 1;
        f.pc += 1;
        let instr = &code[pc as usize];
        match instr {
            LInstr::Const(v) => f.stack.push(*v),
            LInstr::Load(n) => f.stack.push(f.locals[*n as usize]),
            LInstr::Store(n) => {
                let v = f.stack.pop().expect("stack");
                f.locals[*n as usize] = v;
            }
            LInstr::Pop => {
                f.stack.pop();
            }
            LInstr::Dup => {
                let v = *f.stack.last().expect("stack");
                f.stack.push(v);
            }
            LInstr::GetField(off) => {
                let h = f.stack.pop().expect("stack");
                if h == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                f.stack.push(host.heap.read(h as i64 + *off as i64));
            }
            LInstr::PutField(off) => {
                let v = f.stack.pop().expect("stack");
                let h = f.stack.pop().expect("stack");
                if h == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                host.heap.write(h as i64 + *off as i64, v);
            }
            LInstr::ALoad => {
                let i = f.stack.pop().expect("stack");
                let h = f.stack.pop().expect("stack");
                if h == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                let len = host.heap.read(h as i64 + 1);
                if i < 0 || i >= len {
                    return Err(trap(TrapKind::OutOfBounds));
                }
                f.stack.push(host.heap.read(h as i64 + 2 + i as i64));
            }
            LInstr::AStore => {
                let v = f.stack.pop().expect("stack");
                let i = f.stack.pop().expect("stack");
                let h = f.stack.pop().expect("stack");
                if h == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                let len = host.heap.read(h as i64 + 1);
                if i < 0 || i >= len {
                    return Err(trap(TrapKind::OutOfBounds));
                }
                host.heap.write(h as i64 + 2 + i as i64, v);
            }
            LInstr::ArrayLen => {
                let h = f.stack.pop().expect("stack");
                if h == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                f.stack.push(host.heap.read(h as i64 + 1));
            }
            LInstr::New { tag, fields } => match host.heap.alloc_object(*tag, *fields as usize) {
                Ok(h) => f.stack.push(h),
                Err(k) => return Err(trap(k)),
            },
            LInstr::NewArray => {
                let n = f.stack.pop().expect("stack");
                match host.heap.alloc_array(n) {
                    Ok(h) => f.stack.push(h),
                    Err(k) => return Err(trap(k)),
                }
            }
            LInstr::Bin(op) => {
                let b = f.stack.pop().expect("stack");
                let a = f.stack.pop().expect("stack");
                match op.eval(a, b) {
                    Some(v) => f.stack.push(v),
                    None => return Err(trap(TrapKind::DivByZero)),
                }
            }
            LInstr::If(c, target) => {
                let b = f.stack.pop().expect("stack");
                let a = f.stack.pop().expect("stack");
                if c.holds(a, b) {
                    f.pc = *target;
                }
            }
            LInstr::Goto(target) => f.pc = *target,
            LInstr::Call(callee) => {
                let argc = linked.method(*callee).arg_slots as usize;
                let args = f.stack.split_off(f.stack.len() - argc);
                if depth >= MAX_CALL_DEPTH {
                    return Err(trap(TrapKind::StackOverflow));
                }
                frames.push(Frame::new(linked, *callee, &args));
            }
            LInstr::CallNative(nf) => {
                let args = f.stack.split_off(f.stack.len() - nf.arity());
                if let Some(v) = host.call_native(*nf, &args) {
                    f.stack.push(v);
                }
            }
            LInstr::CallVirtual { name, argc } => {
                let args = f.stack.split_off(f.stack.len() - *argc as usize);
                let receiver = args[0];
                if receiver == NULL {
                    return Err(trap(TrapKind::NullDeref));
                }
                let tag = host.heap.read(receiver as i64);
                let Some(callee) = linked.dispatch(tag, *name) else {
                    return Err(trap(TrapKind::BadDispatch));
                };
                host.observed
                    .entry((f.method, pc))
                    .or_default()
                    .insert(callee);
                if depth >= MAX_CALL_DEPTH {
                    return Err(trap(TrapKind::StackOverflow));
                }
                frames.push(Frame::new(linked, callee, &args));
            }
            LInstr::Ret => {
                let returns = linked.method(f.method).returns;
                let v = if returns { f.stack.pop() } else { None };
                frames.pop();
                match frames.last_mut() {
                    None => return Ok(v),
                    Some(caller) => {
                        if let Some(v) = v {
                            caller.stack.push(v);
                        }
                    }
                }
            }
            LInstr::Throw => {
                f.stack.pop();
                return Err(trap(TrapKind::Throw));
            }
        }
    }
}

/// Checks argument shapes against the entry signature.
pub fn check_args(
    p: &Program,
    method: &super::QualName,
    args: &[ArgValue],
) -> Result<(), InterpError> {
    let m = p.method(method).ok_or(InterpError::NoEntry)?;
    let expected = m.params.len();
    if args.len() != expected {
        return Err(InterpError::Arity {
            method: method.to_string(),
            expected,
            got: args.len(),
        });
    }
    for (i, (param, arg)) in m.params.iter().zip(args).enumerate() {
        let ok = matches!(
            (&param.ty, arg),
            (Type::I32, ArgValue::Int(_))
                | (Type::Arr, ArgValue::Array(_))
                | (Type::Arr | Type::Ref(_), ArgValue::Null)
        );
        if !ok {
            return Err(InterpError::Argument {
                method: method.to_string(),
                index: i,
                message: format!("`{arg}` does not match parameter type {}", param.ty),
            });
        }
    }
    Ok(())
}

/// Builds the initial host state for running `method` with `args`:
/// arrays are allocated in argument order on a fresh heap.
pub fn prepare(
    p: &Program,
    method: &super::QualName,
    args: &[ArgValue],
    fuel: u64,
    heap_words: usize,
) -> Result<(HostState, Vec<i32>), InterpError> {
    check_args(p, method, args)?;
    let mut heap = Heap::new(heap_words);
    let words = heap.materialize(args).map_err(InterpError::Setup)?;
    Ok((HostState::new(heap, fuel), words))
}

pub(crate) fn observed_to_strings(
    linked: &Linked,
    observed: &BTreeMap<(MethodId, u32), BTreeSet<MethodId>>,
) -> BTreeMap<String, BTreeSet<String>> {
    observed
        .iter()
        .map(|((m, pc), targets)| {
            (
                format!("{}@{}", linked.name(*m), pc),
                targets
                    .iter()
                    .map(|t| linked.name(*t).to_string())
                    .collect(),
            )
        })
        .collect()
}

/// Interprets the program's entry method.
pub fn interpret(p: &Program, args: &[ArgValue], fuel: u64) -> Result<ExecResult, InterpError> {
    let entry = p.entry.clone().ok_or(InterpError::NoEntry)?;
    interpret_method(p, &entry, args, fuel)
}

pub fn interpret_method(
    p: &Program,
    method: &super::QualName,
    args: &[ArgValue],
    fuel: u64,
) -> Result<ExecResult, InterpError> {
    let linked = Linked::new(p).map_err(InterpError::Link)?;
    interpret_linked(p, &linked, method, args, fuel)
}

pub fn interpret_linked(
    p: &Program,
    linked: &Linked,
    method: &super::QualName,
    args: &[ArgValue],
    fuel: u64,
) -> Result<ExecResult, InterpError> {
    interpret_sized(p, linked, method, args, fuel, DEFAULT_HEAP_WORDS)
}

/// As `interpret_linked`, with an explicit heap size in words.
pub fn interpret_sized(
    p: &Program,
    linked: &Linked,
    method: &super::QualName,
    args: &[ArgValue],
    fuel: u64,
    heap_words: usize,
) -> Result<ExecResult, InterpError> {
    let id = linked.id(method).ok_or(InterpError::NoEntry)?;
    let (mut host, words) = prepare(p, method, args, fuel, heap_words)?;
    let outcome = run_method(linked, &mut host, id, &words);
    let (value, trap) = match outcome {
        Ok(v) => (v, None),
        Err(t) => (None, Some(t)),
    };
    Ok(ExecResult {
        value,
        trap,
        observed_targets: observed_to_strings(linked, &host.observed),
        instructions: host.executed,
        log: host.log,
        heap: host.heap.into_words(),
    })
}

/// Reads the array at `h` from a heap image.
pub fn array_in_image(image: &[i32], h: i32) -> Option<&[i32]> {
    let h = h as usize;
    if h == 0 || image.get(h) != Some(&ARRAY_TAG) {
        return None;
    }
    let len = *image.get(h + 1)? as usize;
    image.get(h + 2..h + 2 + len)
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    fn run(src: &str, args: &[ArgValue]) -> ExecResult {
        let p = parse_program(src).unwrap();
        interpret(&p, args, 1_000_000).unwrap()
    }

    const ARITH: &str = "entry M.f\nclass M {\n  method static f(a: i32, b: i32): i32 {\n    iload 0\n    iload 1\n    div\n    ret\n  }\n}\n";

    #[test]
    fn division_by_zero_traps() {
        let r = run(ARITH, &[ArgValue::Int(7), ArgValue::Int(0)]);
        assert_eq!(r.trap.unwrap().kind, TrapKind::DivByZero);
        let r = run(ARITH, &[ArgValue::Int(7), ArgValue::Int(2)]);
        assert_eq!(r.value, Some(3));
    }

    #[test]
    fn fuel_exhaustion_is_a_trap() {
        let src =
            "entry M.f\nclass M {\n  method static f(): void {\n  top:\n    goto top\n  }\n}\n";
        let p = parse_program(src).unwrap();
        let r = interpret(&p, &[], 50).unwrap();
        assert_eq!(r.trap.unwrap().kind, TrapKind::OutOfFuel);
        assert_eq!(r.instructions, 50);
    }

    #[test]
    fn argument_shape_is_checked() {
        let p = parse_program(ARITH).unwrap();
        assert!(matches!(
            interpret(&p, &[ArgValue::Int(1)], 10),
            Err(InterpError::Arity { .. })
        ));
        assert!(matches!(
            interpret(&p, &[ArgValue::Int(1), ArgValue::Null], 10),
            Err(InterpError::Argument { index: 1, .. })
        ));
    }

    #[test]
    fn array_bounds_and_null() {
        let src = "entry M.f\nclass M {\n  method static f(a: arr<i32>, i: i32): i32 {\n    iload 0\n    iload 1\n    aload\n    ret\n  }\n}\n";
        let r = run(src, &[ArgValue::Array(vec![5, 6]), ArgValue::Int(1)]);
        assert_eq!(r.value, Some(6));
        let r = run(src, &[ArgValue::Array(vec![5, 6]), ArgValue::Int(2)]);
        assert_eq!(r.trap.unwrap().kind, TrapKind::OutOfBounds);
        let r = run(src, &[ArgValue::Array(vec![5, 6]), ArgValue::Int(-1)]);
        assert_eq!(r.trap.unwrap().kind, TrapKind::OutOfBounds);
        let r = run(src, &[ArgValue::Null, ArgValue::Int(0)]);
        assert_eq!(r.trap.unwrap().kind, TrapKind::NullDeref);
    }

    #[test]
    fn natives_are_deterministic_host_functions() {
        let src = "entry M.f\nclass M {\n  method native now(): i32\n  method native log(v: i32): void\n  method static f(): i32 {\n    call M.now\n    call M.now\n    add\n    dup\n    call M.log\n    ret\n  }\n}\n";
        let r = run(src, &[]);
        assert_eq!(r.value, Some(3));
        assert_eq!(r.log, vec![3]);
    }

    #[test]
    fn virtual_dispatch_records_observed_targets() {
        let src = "entry M.f\nclass A {\n  method m(): i32 {\n    const 1\n    ret\n  }\n}\nclass B : A {\n  method m(): i32 {\n    const 2\n    ret\n  }\n}\nclass M {\n  method static f(): i32 locals 1 {\n    new B\n    callvirtual A.m\n    new A\n    callvirtual A.m\n    add\n    ret\n  }\n}\n";
        let r = run(src, &[]);
        assert_eq!(r.value, Some(3));
        assert_eq!(
            r.observed_targets["M.f@1"],
            BTreeSet::from(["B.m".to_string()])
        );
        assert_eq!(
            r.observed_targets["M.f@3"],
            BTreeSet::from(["A.m".to_string()])
        );
    }
}
