//! Structural and type validation of source programs.
//!
//! Stack discipline is checked by forward dataflow: every instruction gets
//! an abstract stack and local-variable state, and the states flowing into a
//! label must agree in depth and have compatible types.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ClassDef, Cond, Instr, Item, MethodDef, MethodKind, NativeFn, Program, Type};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub method: Option<String>,
    pub line: u32,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.method {
            Some(m) => write!(f, "{}: in {m}: {}", self.line, self.message),
            None => write!(f, "{}: {}", self.line, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Abstract value type.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Vt {
    Int,
    Null,
    Ref(String),
    Arr,
    /// Incompatible merge; unusable.
    Conflict,
}

impl fmt::Display for Vt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vt::Int => f.write_str("i32"),
            Vt::Null => f.write_str("null"),
            Vt::Ref(c) => write!(f, "ref<{c}>"),
            Vt::Arr => f.write_str("arr<i32>"),
            Vt::Conflict => f.write_str("<conflict>"),
        }
    }
}

fn vt_of(t: &Type) -> Vt {
    match t {
        Type::I32 => Vt::Int,
        Type::Ref(c) => Vt::Ref(c.clone()),
        Type::Arr => Vt::Arr,
    }
}

fn join(p: &Program, a: &Vt, b: &Vt) -> Vt {
    match (a, b) {
        _ if a == b => a.clone(),
        (Vt::Null, Vt::Ref(_) | Vt::Arr) => b.clone(),
        (Vt::Ref(_) | Vt::Arr, Vt::Null) => a.clone(),
        (Vt::Ref(x), Vt::Ref(y)) => {
            let ys = p.ancestors(y);
            p.ancestors(x)
                .into_iter()
                .find(|c| ys.iter().any(|d| d.name == c.name))
                .map(|c| Vt::Ref(c.name.clone()))
                .unwrap_or(Vt::Conflict)
        }
        _ => Vt::Conflict,
    }
}

fn assignable(p: &Program, v: &Vt, t: &Type) -> bool {
    match (v, t) {
        (Vt::Int, Type::I32) => true,
        (Vt::Null | Vt::Arr, Type::Arr) => true,
        (Vt::Null, Type::Ref(_)) => true,
        (Vt::Ref(d), Type::Ref(c)) => p.is_subclass(d, c),
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq)]
struct State {
    stack: Vec<Vt>,
    /// `None` = not yet assigned.
    locals: Vec<Option<Vt>>,
}

struct MethodCtx<'a> {
    p: &'a Program,
    class: &'a ClassDef,
    method: &'a MethodDef,
    errors: Vec<ValidationError>,
}

impl<'a> MethodCtx<'a> {
    fn err(&mut self, line: u32, message: impl Into<String>) {
        self.errors.push(ValidationError {
            method: Some(format!("{}.{}", self.class.name, self.method.name)),
            line,
            message: message.into(),
        });
    }
}

/// Validates a source program; an empty report means every later pass may
/// assume the IR invariants.
pub fn validate(p: &Program) -> ValidationReport {
    let mut errors = Vec::new();
    let class_known = |t: &Type| match t {
        Type::Ref(c) => p.class(c).is_some(),
        _ => true,
    };

    match &p.entry {
        None => errors.push(ValidationError {
            method: None,
            line: 0,
            message: "no entry method declared".into(),
        }),
        Some(e) => match p.method(e) {
            None => errors.push(ValidationError {
                method: None,
                line: 0,
                message: format!("entry method `{e}` not found"),
            }),
            Some(m) if m.kind != MethodKind::Static => errors.push(ValidationError {
                method: Some(e.to_string()),
                line: m.line,
                message: "entry method must be static".into(),
            }),
            Some(_) => {}
        },
    }
    if !p.syscalls.is_empty() {
        errors.push(ValidationError {
            method: None,
            line: 0,
            message: "syscall declarations are only allowed in lowered programs".into(),
        });
    }

    for c in &p.classes {
        for f in &c.fields {
            if !class_known(&f.ty) {
                errors.push(ValidationError {
                    method: None,
                    line: f.line,
                    message: format!("field `{}.{}` has unknown type {}", c.name, f.name, f.ty),
                });
            }
        }
        for m in &c.methods {
            let q = format!("{}.{}", c.name, m.name);
            let mut merr = |message: String| {
                errors.push(ValidationError {
                    method: Some(q.clone()),
                    line: m.line,
                    message,
                })
            };
            for prm in &m.params {
                if !class_known(&prm.ty) {
                    merr(format!(
                        "parameter `{}` has unknown type {}",
                        prm.name, prm.ty
                    ));
                }
            }
            if let Some(t) = &m.ret {
                if !class_known(t) {
                    merr(format!("unknown return type {t}"));
                }
            }
            if m.locals < m.arg_slots() {
                merr(format!(
                    "declares {} locals but needs {} for arguments",
                    m.locals,
                    m.arg_slots()
                ));
            }
            if !m.buffers.is_empty() {
                merr("burst buffers are only allowed in lowered methods".into());
            }
            // overriding: nearest ancestor method with the same name
            if let Some(sup) = &c.superclass {
                if let Some((_, sm)) = p.resolve_method(sup, &m.name) {
                    if sm.kind == MethodKind::Virtual || m.kind == MethodKind::Virtual {
                        if sm.kind != m.kind {
                            merr(format!(
                                "`{}` conflicts with inherited method of a different kind",
                                m.name
                            ));
                        } else if !m.same_signature(sm) {
                            merr(format!("incompatible override of `{}`", m.name));
                        }
                    }
                }
            }
            match m.kind {
                MethodKind::Native => match NativeFn::by_name(&m.name) {
                    None => merr(format!(
                        "unknown native `{}` (expected now, log or hash)",
                        m.name
                    )),
                    Some(nf) => {
                        let ok = m.params.len() == nf.arity()
                            && m.params.iter().all(|p| p.ty == Type::I32)
                            && (m.ret.is_some() == nf.returns_value())
                            && m.ret.as_ref().is_none_or(|t| *t == Type::I32);
                        if !ok {
                            merr(format!("native `{}` has the wrong signature", m.name));
                        }
                    }
                },
                _ => {
                    let mut ctx = MethodCtx {
                        p,
                        class: c,
                        method: m,
                        errors: Vec::new(),
                    };
                    check_body(&mut ctx);
                    errors.extend(ctx.errors);
                }
            }
        }
    }
    ValidationReport { errors }
}

fn check_body(ctx: &mut MethodCtx<'_>) {
    let m = ctx.method;
    let p = ctx.p;
    let mut ops: Vec<(&Instr, u32)> = Vec::new();
    let mut labels: HashMap<&str, usize> = HashMap::new();
    for it in &m.body {
        match it {
            Item::Label(l) => {
                labels.insert(l.as_str(), ops.len());
            }
            Item::Op { instr, line } => ops.push((instr, *line)),
        }
    }
    if ops.is_empty() {
        ctx.err(m.line, "method body is empty");
        return;
    }
    for (instr, line) in &ops {
        if instr.is_lowered_only() {
            ctx.err(
                *line,
                format!("lowered opcode `{}` in source program", instr.mnemonic()),
            );
            return;
        }
    }

    let mut locals: Vec<Option<Vt>> = vec![None; m.locals.max(m.arg_slots()) as usize];
    let mut slot = 0;
    if m.kind == MethodKind::Virtual {
        locals[0] = Some(Vt::Ref(ctx.class.name.clone()));
        slot = 1;
    }
    for prm in &m.params {
        locals[slot] = Some(vt_of(&prm.ty));
        slot += 1;
    }

    let mut states: Vec<Option<State>> = vec![None; ops.len()];
    states[0] = Some(State {
        stack: Vec::new(),
        locals,
    });
    let mut work: VecDeque<usize> = VecDeque::from([0]);
    let mut reported = vec![false; ops.len()];

    while let Some(pc) = work.pop_front() {
        let mut st = states[pc].clone().expect("queued state");
        let (instr, line) = ops[pc];
        let succ = match step(ctx, &mut st, instr, line) {
            Ok(s) => s,
            Err(msg) => {
                if !reported[pc] {
                    reported[pc] = true;
                    ctx.err(line, msg);
                }
                continue;
            }
        };
        let mut targets = Vec::new();
        match succ {
            Flow::Next => targets.push(pc + 1),
            Flow::Branch(l) => {
                targets.push(pc + 1);
                targets.push(labels[l]);
            }
            Flow::Jump(l) => targets.push(labels[l]),
            Flow::Exit => {}
        }
        for t in targets {
            if t >= ops.len() {
                if !reported[pc] {
                    reported[pc] = true;
                    ctx.err(line, "control falls off the end of the method");
                }
                continue;
            }
            match &states[t] {
                None => {
                    states[t] = Some(st.clone());
                    work.push_back(t);
                }
                Some(old) => {
                    if old.stack.len() != st.stack.len() {
                        if !reported[t] {
                            reported[t] = true;
                            let lbl = labels
                                .iter()
                                .find(|(_, &v)| v == t)
                                .map(|(k, _)| format!("label `{k}`"))
                                .unwrap_or_else(|| format!("instruction {t}"));
                            ctx.err(ops[t].1, format!("stack depth mismatch at {lbl}"));
                        }
                        continue;
                    }
                    let merged = State {
                        stack: old
                            .stack
                            .iter()
                            .zip(&st.stack)
                            .map(|(a, b)| join(p, a, b))
                            .collect(),
                        locals: old
                            .locals
                            .iter()
                            .zip(&st.locals)
                            .map(|(a, b)| match (a, b) {
                                (Some(a), Some(b)) => Some(join(p, a, b)),
                                _ => None,
                            })
                            .collect(),
                    };
                    if merged.stack.contains(&Vt::Conflict) {
                        if !reported[t] {
                            reported[t] = true;
                            ctx.err(ops[t].1, "incompatible stack types at merge point");
                        }
                        continue;
                    }
                    if &merged != old {
                        states[t] = Some(merged);
                        work.push_back(t);
                    }
                }
            }
        }
    }
}

enum Flow<'a> {
    Next,
    Branch(&'a str),
    Jump(&'a str),
    Exit,
}

fn pop(st: &mut State) -> Result<Vt, String> {
    st.stack.pop().ok_or_else(|| "stack underflow".to_string())
}

fn pop_int(st: &mut State, what: &str) -> Result<(), String> {
    match pop(st)? {
        Vt::Int => Ok(()),
        other => Err(format!("{what}: expected i32, found {other}")),
    }
}

fn step<'i>(
    ctx: &MethodCtx<'_>,
    st: &mut State,
    instr: &'i Instr,
    _line: u32,
) -> Result<Flow<'i>, String> {
    let p = ctx.p;
    let m = ctx.method;
    match instr {
        Instr::Const(_) => st.stack.push(Vt::Int),
        Instr::Null => st.stack.push(Vt::Null),
        Instr::Load(n) => {
            let v = st
                .locals
                .get(*n as usize)
                .ok_or_else(|| format!("local {n} out of range (method declares {})", m.locals))?;
            match v {
                None => return Err(format!("local {n} read before assignment")),
                Some(Vt::Conflict) => return Err(format!("local {n} has conflicting types")),
                Some(v) => st.stack.push(v.clone()),
            }
        }
        Instr::Store(n) => {
            let v = pop(st)?;
            let slot = st
                .locals
                .get_mut(*n as usize)
                .ok_or_else(|| format!("local {n} out of range (method declares {})", m.locals))?;
            *slot = Some(v);
        }
        Instr::Pop => {
            pop(st)?;
        }
        Instr::Dup => {
            let v = st.stack.last().cloned().ok_or("stack underflow")?;
            st.stack.push(v);
        }
        Instr::GetField(f) | Instr::PutField(f) => {
            if p.class(&f.class).is_none() {
                return Err(format!("unresolved class `{}`", f.class));
            }
            let (_, fty) = p
                .field_offset(&f.class, &f.member)
                .ok_or_else(|| format!("unresolved field `{f}`"))?;
            let fty = fty.clone();
            if matches!(instr, Instr::PutField(_)) {
                let v = pop(st)?;
                if !assignable(p, &v, &fty) {
                    return Err(format!("putfield {f}: {v} is not assignable to {fty}"));
                }
            }
            let recv = pop(st)?;
            if !assignable(p, &recv, &Type::Ref(f.class.clone())) {
                return Err(format!(
                    "{}: receiver {recv} is not a {}",
                    instr.mnemonic(),
                    f.class
                ));
            }
            if matches!(instr, Instr::GetField(_)) {
                st.stack.push(vt_of(&fty));
            }
        }
        Instr::ALoad | Instr::AStore => {
            if matches!(instr, Instr::AStore) {
                pop_int(st, "astore value")?;
            }
            pop_int(st, "array index")?;
            let a = pop(st)?;
            if !assignable(p, &a, &Type::Arr) {
                return Err(format!("{}: expected array, found {a}", instr.mnemonic()));
            }
            if matches!(instr, Instr::ALoad) {
                st.stack.push(Vt::Int);
            }
        }
        Instr::ArrayLen => {
            let a = pop(st)?;
            if !assignable(p, &a, &Type::Arr) {
                return Err(format!("arraylen: expected array, found {a}"));
            }
            st.stack.push(Vt::Int);
        }
        Instr::New(c) => {
            if p.class(c).is_none() {
                return Err(format!("unresolved class `{c}`"));
            }
            st.stack.push(Vt::Ref(c.clone()));
        }
        Instr::NewArray => {
            pop_int(st, "array length")?;
            st.stack.push(Vt::Arr);
        }
        Instr::Bin(op) => {
            pop_int(st, op.mnemonic())?;
            pop_int(st, op.mnemonic())?;
            st.stack.push(Vt::Int);
        }
        Instr::If(c, l) => {
            let b = pop(st)?;
            let a = pop(st)?;
            let refs = |v: &Vt| matches!(v, Vt::Null | Vt::Ref(_) | Vt::Arr);
            let ok = (a == Vt::Int && b == Vt::Int)
                || (refs(&a) && refs(&b) && matches!(c, Cond::Eq | Cond::Ne));
            if !ok {
                return Err(format!("{}: cannot compare {a} with {b}", c.mnemonic()));
            }
            return Ok(Flow::Branch(l));
        }
        Instr::Goto(l) => return Ok(Flow::Jump(l)),
        Instr::Call(q) | Instr::CallVirtual(q) => {
            if p.class(&q.class).is_none() {
                return Err(format!("unresolved class `{}`", q.class));
            }
            let (_, target) = p
                .resolve_method(&q.class, &q.member)
                .ok_or_else(|| format!("unresolved method `{q}`"))?;
            let is_virtual = matches!(instr, Instr::CallVirtual(_));
            if is_virtual && target.kind != MethodKind::Virtual {
                return Err(format!("callvirtual on non-virtual method `{q}`"));
            }
            if !is_virtual && target.kind == MethodKind::Virtual {
                return Err(format!("call on virtual method `{q}`; use callvirtual"));
            }
            if !is_virtual && p.method(q).is_none() {
                return Err(format!("unresolved method `{q}`"));
            }
            for prm in target.params.iter().rev() {
                let v = pop(st)?;
                if !assignable(p, &v, &prm.ty) {
                    return Err(format!(
                        "argument `{}` of {q}: {v} is not assignable to {}",
                        prm.name, prm.ty
                    ));
                }
            }
            if is_virtual {
                let recv = pop(st)?;
                if !assignable(p, &recv, &Type::Ref(q.class.clone())) {
                    return Err(format!(
                        "callvirtual {q}: receiver {recv} is not a {}",
                        q.class
                    ));
                }
            }
            if let Some(t) = &target.ret {
                st.stack.push(vt_of(t));
            }
        }
        Instr::Ret => {
            let want = usize::from(m.ret.is_some());
            if st.stack.len() != want {
                return Err(format!(
                    "stack depth mismatch at ret (expected {want}, found {})",
                    st.stack.len()
                ));
            }
            if let Some(t) = &m.ret {
                let v = st.stack.pop().expect("depth checked");
                if !assignable(p, &v, t) {
                    return Err(format!("ret: {v} is not assignable to {t}"));
                }
            }
            return Ok(Flow::Exit);
        }
        Instr::Throw => {
            pop(st)?;
            return Ok(Flow::Exit);
        }
        other => {
            return Err(format!(
                "lowered opcode `{}` in source program",
                other.mnemonic()
            ))
        }
    }
    Ok(Flow::Next)
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    fn errors(src: &str) -> Vec<String> {
        validate(&parse_program(src).unwrap())
            .errors
            .into_iter()
            .map(|e| e.message)
            .collect()
    }

    #[test]
    fn depth_mismatch_at_ret() {
        let e = errors("entry M.f\nclass M {\n  method static f(): i32 {\n    const 1\n    const 2\n    ret\n  }\n}\n");
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("stack depth mismatch at ret"), "{e:?}");
    }

    #[test]
    fn unresolved_virtual_method() {
        let e = errors("entry M.f\nclass A {\n}\nclass M {\n  method static f(): i32 {\n    new A\n    callvirtual A.m\n    ret\n  }\n}\n");
        assert!(
            e.iter().any(|m| m.contains("unresolved method `A.m`")),
            "{e:?}"
        );
    }

    #[test]
    fn depth_mismatch_at_label() {
        let e = errors("entry M.f\nclass M {\n  method static f(a: i32): i32 {\n    iload 0\n    const 0\n    if_eq L\n    const 5\n  L:\n    const 1\n    ret\n  }\n}\n");
        assert!(
            e.iter()
                .any(|m| m.contains("stack depth mismatch at label `L`")),
            "{e:?}"
        );
    }

    #[test]
    fn type_errors() {
        let e = errors("entry M.f\nclass M {\n  method static f(a: arr<i32>): i32 {\n    iload 0\n    const 1\n    add\n    ret\n  }\n}\n");
        assert!(e[0].contains("expected i32"), "{e:?}");
        let e = errors("entry M.f\nclass M {\n  method static f(): i32 locals 1 {\n    iload 0\n    ret\n  }\n}\n");
        assert!(e[0].contains("read before assignment"));
        let e = errors(
            "entry M.f\nclass M {\n  method static f(): i32 {\n    iload 3\n    ret\n  }\n}\n",
        );
        assert!(e[0].contains("out of range"));
    }

    #[test]
    fn falls_off_end() {
        let e = errors(
            "entry M.f\nclass M {\n  method static f(): void {\n    const 1\n    pop\n  }\n}\n",
        );
        assert!(e[0].contains("falls off"));
    }

    #[test]
    fn entry_must_be_static() {
        let e = errors("entry M.f\nclass M {\n  method f(): void {\n    ret\n  }\n}\n");
        assert!(e.iter().any(|m| m == "entry method must be static"));
    }

    #[test]
    fn override_signature_must_match() {
        let e = errors("entry M.f\nclass A {\n  method m(): i32 {\n    const 1\n    ret\n  }\n}\nclass B : A {\n  method m(x: i32): i32 {\n    const 2\n    ret\n  }\n}\nclass M {\n  method static f(): void {\n    ret\n  }\n}\n");
        assert!(
            e.iter().any(|m| m.contains("incompatible override")),
            "{e:?}"
        );
    }

    #[test]
    fn reference_merge_uses_common_superclass() {
        let src = "entry M.f\nclass A {\n  field x: i32\n}\nclass B : A {\n}\nclass C : A {\n}\nclass M {\n  method static f(k: i32): i32 locals 2 {\n    new B\n    istore 1\n    iload 0\n    const 0\n    if_eq L\n    new C\n    istore 1\n  L:\n    iload 1\n    getfield A.x\n    ret\n  }\n}\n";
        assert!(errors(src).is_empty());
    }

    #[test]
    fn natives_must_be_known() {
        let e = errors("entry M.f\nclass M {\n  method native frob(): i32\n  method static f(): void {\n    ret\n  }\n}\n");
        assert!(e[0].contains("unknown native"));
    }

    #[test]
    fn lowered_opcodes_rejected_in_source() {
        let e = errors(
            "entry M.f\nclass M {\n  method static f(): void {\n    SYSCALL 0\n    ret\n  }\n}\n",
        );
        assert!(e[0].contains("lowered opcode"));
    }
}
