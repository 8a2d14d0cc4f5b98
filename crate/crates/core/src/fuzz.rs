//! Seeded random program generation and the offload equivalence oracle.
//!
//! Every generated program validates by construction. Each case runs on the
//! reference interpreter and through the full offload pipeline; value, trap
//! kind, heap image and native log must agree, observed dispatch targets must
//! lie inside the static target sets, and exact latency estimates must match
//! the simulated cycle count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::cosim::compile;
use crate::hwmodel::estimate_latency;
use crate::jir::{interpret_sized, parse_program, validate, ArgValue, BinOp, Cond, QualName};

const CLASSES: [&str; 3] = ["Base", "Sub1", "Sub2"];

// Slots in `Main.run`.
const A: u16 = 0;
const B: u16 = 1;
const XS: u16 = 2;
const INTS: [u16; 4] = [3, 4, 5, 6];
const OBJS: [u16; 2] = [7, 8];
const ARR: u16 = 9;
const COUNTERS: [u16; 3] = [10, 11, 12];
const RUN_LOCALS: u16 = 13;

// Slots in helpers.
const HELPER_INTS: [u16; 2] = [2, 3];
const HELPER_COUNTERS: [u16; 2] = [4, 5];
const HELPER_LOCALS: u16 = 6;

pub fn entry() -> QualName {
    QualName::new("Main", "run")
}

#[derive(Clone)]
struct Scope {
    ints: Vec<u16>,
    assignable: Vec<u16>,
    counters: Vec<u16>,
    objs: Vec<u16>,
    arrs: Vec<u16>,
    /// Helpers `h0..h{n}` callable from here.
    helpers: usize,
    /// Whether objects, arrays, natives and recursion are available.
    rich: bool,
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    out: Vec<String>,
    labels: u32,
}

impl Gen<'_> {
    fn emit(&mut self, s: impl Into<String>) {
        self.out.push(format!("    {}", s.into()));
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn place(&mut self, l: &str) {
        self.out.push(format!("  {l}:"));
    }

    fn constant(&mut self) -> i32 {
        match self.rng.gen_range(0..10) {
            0 => self.rng.gen(),
            1 => *[0, 1, -1, i32::MIN, i32::MAX]
                .choose(self.rng)
                .expect("nonempty"),
            _ => self.rng.gen_range(-16..=16),
        }
    }

    fn binop(&mut self) -> BinOp {
        // Division is rarer to keep most runs trap-free.
        if self.rng.gen_ratio(1, 12) {
            *[BinOp::Div, BinOp::Rem].choose(self.rng).expect("nonempty")
        } else {
            *[
                BinOp::Add,
                BinOp::Sub,
                BinOp::Mul,
                BinOp::And,
                BinOp::Or,
                BinOp::Xor,
                BinOp::Shl,
                BinOp::Shr,
                BinOp::Ushr,
            ]
            .choose(self.rng)
            .expect("nonempty")
        }
    }

    fn cond(&mut self) -> Cond {
        *Cond::ALL.choose(self.rng).expect("nonempty")
    }

    fn expr(&mut self, s: &Scope, depth: u32) {
        let leaf = depth == 0 || self.rng.gen_ratio(1, 3);
        if leaf {
            if self.rng.gen_ratio(1, 3) {
                let c = self.constant();
                self.emit(format!("const {c}"));
            } else {
                let v = *s.ints.choose(self.rng).expect("scope has ints");
                self.emit(format!("iload {v}"));
            }
            return;
        }
        let d = depth - 1;
        let pick = self.rng.gen_range(0..if s.rich { 14 } else { 8 });
        match pick {
            0..=3 => {
                let op = self.binop();
                self.expr(s, d);
                self.expr(s, d);
                // Most divisors are forced odd; the rest may trap.
                if matches!(op, BinOp::Div | BinOp::Rem) && !self.rng.gen_ratio(1, 4) {
                    self.emit("const 1");
                    self.emit("or");
                }
                self.emit(op.mnemonic());
            }
            4 | 5 => {
                // Ternary; the merge point carries a value on the stack.
                let (t, end) = (self.label(), self.label());
                self.expr(s, d);
                self.expr(s, d);
                let c = self.cond();
                self.emit(format!("{} {t}", c.mnemonic()));
                self.expr(s, d);
                self.emit(format!("goto {end}"));
                self.place(&t);
                self.expr(s, d);
                self.place(&end);
            }
            6 if s.helpers > 0 => {
                let h = self.rng.gen_range(0..s.helpers);
                self.expr(s, d);
                self.expr(s, d);
                self.emit(format!("call Main.h{h}"));
            }
            6 | 7 => {
                let v = *s.ints.choose(self.rng).expect("scope has ints");
                self.emit(format!("iload {v}"));
                self.expr(s, d);
                self.emit("const 1");
                self.emit("or");
                let op = self.binop();
                self.emit(op.mnemonic());
            }
            8 => {
                let o = *s.objs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {o}"));
                let f = if self.rng.gen() { "f0" } else { "f1" };
                self.emit(format!("getfield Base.{f}"));
            }
            9 => {
                let o = *s.objs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {o}"));
                self.expr(s, d);
                self.emit("callvirtual Base.get");
            }
            10 => {
                let a = *s.arrs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {a}"));
                self.index(s, d);
                self.emit("aload");
            }
            11 => {
                let a = *s.arrs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {a}"));
                self.emit("arraylen");
            }
            12 => {
                self.expr(s, d);
                self.emit("const 7");
                self.emit("and");
                self.emit("call Main.rec");
            }
            _ => {
                if self.rng.gen() {
                    self.expr(s, d);
                    self.emit("call Main.hash");
                } else {
                    self.emit("call Main.now");
                }
            }
        }
    }

    fn index(&mut self, s: &Scope, depth: u32) {
        self.expr(s, depth);
        // Mostly in bounds; occasionally unmasked to exercise bounds traps.
        if !self.rng.gen_ratio(1, 25) {
            self.emit("const 7");
            self.emit("and");
        }
    }

    fn block(&mut self, s: &Scope, len: u32, nest: u32) {
        for _ in 0..len {
            self.stmt(s, nest);
        }
    }

    fn stmt(&mut self, s: &Scope, nest: u32) {
        let pick = self.rng.gen_range(0..if s.rich { 12 } else { 6 });
        match pick {
            0..=2 => {
                self.expr(s, 3);
                let v = *s.assignable.choose(self.rng).expect("assignable ints");
                self.emit(format!("istore {v}"));
            }
            3 if nest > 0 => {
                let (els, end) = (self.label(), self.label());
                self.expr(s, 2);
                self.expr(s, 2);
                let c = self.cond();
                self.emit(format!("{} {els}", c.negate().mnemonic()));
                let n = self.rng.gen_range(1..=3);
                self.block(s, n, nest - 1);
                self.emit(format!("goto {end}"));
                self.place(&els);
                let n = self.rng.gen_range(0..=2);
                self.block(s, n, nest - 1);
                self.place(&end);
            }
            4 if nest > 0 && !s.counters.is_empty() => self.counted_loop(s, nest),
            3..=5 => {
                self.expr(s, 2);
                let v = *s.assignable.choose(self.rng).expect("assignable ints");
                self.emit(format!("istore {v}"));
            }
            6 => {
                let o = *s.objs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {o}"));
                self.expr(s, 2);
                let f = if self.rng.gen() { "f0" } else { "f1" };
                self.emit(format!("putfield Base.{f}"));
            }
            7 => {
                let a = *s.arrs.choose(self.rng).expect("rich scope");
                self.emit(format!("iload {a}"));
                self.index(s, 2);
                self.expr(s, 2);
                self.emit("astore");
            }
            8 => {
                let o = *s.objs.choose(self.rng).expect("rich scope");
                if self.rng.gen_ratio(1, 8) {
                    self.emit("null");
                    self.emit(format!("istore {o}"));
                } else {
                    self.new_object(s, o);
                }
            }
            9 => {
                self.expr(s, 2);
                self.emit("const 7");
                self.emit("and");
                self.emit("const 8");
                self.emit("add");
                self.emit("newarray");
                self.emit(format!("istore {ARR}"));
            }
            10 => {
                self.expr(s, 2);
                self.emit("call Main.log");
            }
            _ => {
                if nest > 0 && !s.counters.is_empty() {
                    self.counted_loop(s, nest);
                } else {
                    self.expr(s, 2);
                    self.emit("call Main.log");
                }
            }
        }
    }

    fn new_object(&mut self, s: &Scope, slot: u16) {
        let cls = *CLASSES.choose(self.rng).expect("nonempty");
        self.emit(format!("new {cls}"));
        self.emit(format!("istore {slot}"));
        self.emit(format!("iload {slot}"));
        self.expr(s, 1);
        self.emit("putfield Base.f0");
        if cls == "Sub1" {
            self.emit(format!("iload {slot}"));
            self.expr(s, 1);
            self.emit("putfield Sub1.g");
        }
    }

    /// `for (i = 0; i < bound; i++)` with a reserved counter slot.
    fn counted_loop(&mut self, s: &Scope, nest: u32) {
        let (i, rest) = s.counters.split_first().expect("counter available");
        let (top, done) = (self.label(), self.label());
        self.emit("const 0");
        self.emit(format!("istore {i}"));
        self.place(&top);
        self.emit(format!("iload {i}"));
        if s.rich && self.rng.gen_ratio(1, 3) {
            self.emit(format!("iload {XS}"));
            self.emit("arraylen");
        } else {
            let bound = self.rng.gen_range(1..=6);
            self.emit(format!("const {bound}"));
        }
        self.emit(format!("if_ge {done}"));
        let inner = Scope {
            ints: s.ints.iter().copied().chain([*i]).collect(),
            assignable: s.assignable.clone(),
            counters: rest.to_vec(),
            objs: s.objs.clone(),
            arrs: s.arrs.clone(),
            helpers: s.helpers,
            rich: s.rich,
        };
        let n = self.rng.gen_range(1..=3);
        self.block(&inner, n, nest - 1);
        self.emit(format!("iload {i}"));
        self.emit("const 1");
        self.emit("add");
        self.emit(format!("istore {i}"));
        self.emit(format!("goto {top}"));
        self.place(&done);
    }
}

fn virtual_body(rng: &mut ChaCha8Rng, field: &str) -> String {
    let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Xor]
        .choose(rng)
        .expect("nonempty");
    let c: i32 = rng.gen_range(-9..=9);
    format!(
        "    iload 0\n    getfield {field}\n    iload 1\n    {}\n    const {c}\n    add\n    ret\n",
        op.mnemonic()
    )
}

/// Generates one program. Deterministic in the RNG state.
pub fn generate_program(rng: &mut ChaCha8Rng) -> String {
    let mut text = String::from("entry Main.run\n\n");
    text.push_str(
        "class Base {\n  field f0: i32\n  field f1: i32\n  method get(k: i32): i32 locals 2 {\n",
    );
    text.push_str(&virtual_body(rng, "Base.f0"));
    text.push_str("  }\n}\n\n");
    text.push_str("class Sub1 : Base {\n  field g: i32\n  method get(k: i32): i32 locals 2 {\n");
    text.push_str(&virtual_body(rng, "Sub1.g"));
    text.push_str("  }\n}\n\n");
    text.push_str("class Sub2 : Base {\n");
    if rng.gen() {
        text.push_str("  method get(k: i32): i32 locals 2 {\n");
        text.push_str(&virtual_body(rng, "Base.f1"));
        text.push_str("  }\n");
    }
    text.push_str("}\n\n");

    text.push_str("class Main {\n");
    text.push_str("  method native hash(v: i32): i32\n  method native log(v: i32): void\n  method native now(): i32\n\n");
    text.push_str(
        "  method static rec(n: i32): i32 locals 1 {\n    iload 0\n    const 0\n    if_le base\n    iload 0\n    const 1\n    sub\n    call Main.rec\n    iload 0\n    add\n    ret\n  base:\n    const 1\n    ret\n  }\n\n",
    );

    let helpers = rng.gen_range(0..=3);
    for h in 0..helpers {
        let mut g = Gen {
            rng: &mut *rng,
            out: Vec::new(),
            labels: 0,
        };
        let s = Scope {
            ints: vec![0, 1, HELPER_INTS[0], HELPER_INTS[1]],
            assignable: HELPER_INTS.to_vec(),
            counters: HELPER_COUNTERS.to_vec(),
            objs: Vec::new(),
            arrs: Vec::new(),
            helpers: h,
            rich: false,
        };
        for v in HELPER_INTS {
            let c = g.constant();
            g.emit(format!("const {c}"));
            g.emit(format!("istore {v}"));
        }
        let n = g.rng.gen_range(1..=4);
        g.block(&s, n, 2);
        g.expr(&s, 3);
        g.emit("ret");
        text.push_str(&format!(
            "  method static h{h}(a: i32, b: i32): i32 locals {HELPER_LOCALS} {{\n{}\n  }}\n\n",
            g.out.join("\n")
        ));
    }

    let mut g = Gen {
        rng: &mut *rng,
        out: Vec::new(),
        labels: 100,
    };
    let s = Scope {
        ints: [A, B].into_iter().chain(INTS).collect(),
        assignable: INTS.to_vec(),
        counters: COUNTERS.to_vec(),
        objs: OBJS.to_vec(),
        arrs: vec![XS, ARR],
        helpers,
        rich: true,
    };
    for v in INTS {
        let c = g.constant();
        g.emit(format!("const {c}"));
        g.emit(format!("istore {v}"));
    }
    let pre = Scope {
        ints: vec![A, B],
        objs: Vec::new(),
        arrs: Vec::new(),
        rich: false,
        ..s.clone()
    };
    for o in OBJS {
        g.new_object(&pre, o);
    }
    g.emit("const 8");
    g.emit("newarray");
    g.emit(format!("istore {ARR}"));
    let n = g.rng.gen_range(2..=7);
    g.block(&s, n, 3);
    g.expr(&s, 3);
    g.emit("ret");
    text.push_str(&format!(
        "  method static run(a: i32, b: i32, xs: arr<i32>): i32 locals {RUN_LOCALS} {{\n{}\n  }}\n}}\n",
        g.out.join("\n")
    ));
    text
}

pub fn generate_args(rng: &mut ChaCha8Rng) -> Vec<ArgValue> {
    let int = |rng: &mut ChaCha8Rng| {
        if rng.gen_ratio(1, 5) {
            rng.gen()
        } else {
            rng.gen_range(-20..=20)
        }
    };
    let a = int(rng);
    let b = int(rng);
    let xs = if rng.gen_ratio(1, 20) {
        ArgValue::Null
    } else {
        let n = if rng.gen_ratio(1, 4) {
            rng.gen_range(0..8)
        } else {
            rng.gen_range(8..=12)
        };
        ArgValue::Array((0..n).map(|_| int(rng)).collect())
    };
    vec![ArgValue::Int(a), ArgValue::Int(b), xs]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub index: u64,
    pub program: String,
    pub args: Vec<ArgValue>,
}

/// Case `index` of the corpus for `seed`; independent of other cases.
pub fn case(seed: u64, index: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let program = generate_program(&mut rng);
    let args = generate_args(&mut rng);
    FuzzCase {
        index,
        program,
        args,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub trapped: bool,
    pub virtual_calls: u64,
    pub exact_checked: bool,
}

/// Runs the oracle on one case.
pub fn check_case(c: &FuzzCase, cfg: &RunConfig) -> Result<CaseOutcome, String> {
    let p = parse_program(&c.program)
        .map_err(|e| format!("generated program does not parse: {e:?}"))?;
    let report = validate(&p);
    if !report.is_clean() {
        return Err(format!(
            "generated program does not validate: {:?}",
            report.errors
        ));
    }
    let root = entry();
    let compiled = compile(&p, &root, cfg).map_err(|e| format!("offload failed: {e}"))?;
    let sw = interpret_sized(
        &p,
        &compiled.linked,
        &root,
        &c.args,
        cfg.sim.host_fuel,
        cfg.heap_words,
    )
    .map_err(|e| format!("interpreter: {e}"))?;
    compiled
        .analysis
        .targets
        .covers(&sw.observed_targets)
        .map_err(|e| format!("dispatch soundness: {e}"))?;
    let hw = compiled
        .run(&p, &c.args, cfg)
        .map_err(|e| format!("simulation: {e}"))?;
    let sw_trap = sw.trap.as_ref().map(|t| t.kind);
    let hw_trap = hw.trap.map(|t| t.kind);
    if hw.value != sw.value {
        return Err(format!(
            "value: kernel {:?}, interpreter {:?}",
            hw.value, sw.value
        ));
    }
    if hw_trap != sw_trap {
        return Err(format!("trap: kernel {hw_trap:?}, interpreter {sw_trap:?}"));
    }
    if hw.heap != sw.heap {
        return Err("final heap images differ".into());
    }
    if hw.log != sw.log {
        return Err(format!(
            "native log: kernel {:?}, interpreter {:?}",
            hw.log, sw.log
        ));
    }
    let mut exact_checked = false;
    if hw.trap.is_none() {
        let lat = estimate_latency(&compiled.scheduled, &cfg.sim.bus, &cfg.sim.channel);
        if let Some(e) = lat.exact() {
            if e != hw.total_cycles {
                return Err(format!(
                    "exact latency {e} but measured {}",
                    hw.total_cycles
                ));
            }
            exact_checked = true;
        }
    }
    Ok(CaseOutcome {
        trapped: sw_trap.is_some(),
        virtual_calls: sw.observed_targets.values().map(|t| t.len() as u64).sum(),
        exact_checked,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzFailure {
    pub case: FuzzCase,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub seed: u64,
    pub count: u64,
    pub passed: u64,
    pub trapped: u64,
    pub exact_checked: u64,
    pub dispatching: u64,
    pub failures: Vec<FuzzFailure>,
    /// SHA-256 over the generated programs and arguments, in case order.
    pub corpus_digest: String,
}

impl FuzzSummary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_fuzz(seed: u64, count: u64, cfg: &RunConfig) -> FuzzSummary {
    let results: Vec<(FuzzCase, Result<CaseOutcome, String>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let c = case(seed, i);
            let r = check_case(&c, cfg);
            (c, r)
        })
        .collect();
    let mut hasher = Sha256::new();
    let mut s = FuzzSummary {
        seed,
        count,
        passed: 0,
        trapped: 0,
        exact_checked: 0,
        dispatching: 0,
        failures: Vec::new(),
        corpus_digest: String::new(),
    };
    for (c, r) in results {
        hasher.update(c.program.as_bytes());
        hasher.update(serde_json::to_vec(&c.args).expect("args serialize"));
        match r {
            Ok(o) => {
                s.passed += 1;
                s.trapped += o.trapped as u64;
                s.exact_checked += o.exact_checked as u64;
                s.dispatching += (o.virtual_calls > 0) as u64;
            }
            Err(reason) => s.failures.push(FuzzFailure { case: c, reason }),
        }
    }
    s.corpus_digest = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_seed_deterministic() {
        assert_eq!(case(7, 3), case(7, 3));
        assert_ne!(case(7, 3).program, case(7, 4).program);
        assert_ne!(case(7, 3).program, case(8, 3).program);
    }

    #[test]
    fn generated_programs_validate() {
        for i in 0..50 {
            let c = case(11, i);
            let p = parse_program(&c.program).unwrap_or_else(|e| panic!("{e:?}\n{}", c.program));
            let r = validate(&p);
            assert!(r.is_clean(), "{:?}\n{}", r.errors, c.program);
        }
    }

    #[test]
    fn small_run_passes() {
        let s = run_fuzz(3, 40, &RunConfig::default());
        assert!(s.ok(), "{:#?}", s.failures.first());
    }
}
