//! Canonical text rendering; `parse_program(program_to_text(p))` yields `p`
//! up to line numbers.

use std::fmt::Write;

use super::{Instr, Item, MethodDef, MethodKind, Program, SyscallDecl, SyscallKind};

pub fn instr_to_text(i: &Instr) -> String {
    let m = i.mnemonic();
    match i {
        Instr::Const(v) => format!("{m} {v}"),
        Instr::Load(n) | Instr::Store(n) => format!("{m} {n}"),
        Instr::GetField(q) | Instr::PutField(q) | Instr::Call(q) | Instr::CallVirtual(q) => {
            format!("{m} {q}")
        }
        Instr::New(c) => format!("{m} {c}"),
        Instr::If(_, l) | Instr::Goto(l) => format!("{m} {l}"),
        Instr::BusRead { offset }
        | Instr::BusReadIdx { offset }
        | Instr::BusWrite { offset }
        | Instr::BusWriteIdx { offset } => format!("{m} {}", signed(*offset)),
        Instr::BusBurst {
            buffer,
            offset,
            len,
        } => format!("{m} b{buffer} {} x{len}", signed(*offset)),
        Instr::BufRead { buffer, offset } => format!("{m} b{buffer} {}", signed(*offset)),
        Instr::Syscall(k) => format!("{m} {k}"),
        _ => m.to_string(),
    }
}

fn signed(v: i32) -> String {
    if v < 0 {
        format!("-{}", (v as i64).unsigned_abs())
    } else {
        format!("+{v}")
    }
}

pub fn syscall_to_text(s: &SyscallDecl) -> String {
    let kind = match &s.kind {
        SyscallKind::AllocObject(c) => format!("alloc_object {c}"),
        SyscallKind::AllocArray => "alloc_array".to_string(),
        SyscallKind::Native(q) => format!("native {q}"),
        SyscallKind::SoftCall {
            method,
            virtual_dispatch: false,
        } => format!("soft_call {method}"),
        SyscallKind::SoftCall {
            method,
            virtual_dispatch: true,
        } => format!("soft_callvirtual {method}"),
        SyscallKind::Trap(k) => format!("trap {}", k.name()),
    };
    format!(
        "syscall {} = {kind} args {} results {}",
        s.id, s.args, s.results
    )
}

pub fn method_header(m: &MethodDef) -> String {
    let mut s = String::from("method ");
    match m.kind {
        MethodKind::Static => s.push_str("static "),
        MethodKind::Native => s.push_str("native "),
        MethodKind::Virtual => {}
    }
    s.push_str(&m.name);
    s.push('(');
    for (i, p) in m.params.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{}: {}", p.name, p.ty);
    }
    s.push(')');
    match &m.ret {
        Some(t) => {
            let _ = write!(s, ": {t}");
        }
        None => s.push_str(": void"),
    }
    if m.kind != MethodKind::Native {
        let _ = write!(s, " locals {}", m.locals);
    }
    if !m.buffers.is_empty() {
        let b: Vec<String> = m.buffers.iter().map(|b| b.to_string()).collect();
        let _ = write!(s, " buffers {}", b.join(","));
    }
    s
}

pub fn method_to_text(m: &MethodDef, out: &mut String) {
    let header = method_header(m);
    if m.kind == MethodKind::Native {
        let _ = writeln!(out, "  {header}");
        return;
    }
    let _ = writeln!(out, "  {header} {{");
    for it in &m.body {
        match it {
            Item::Label(l) => {
                let _ = writeln!(out, "  {l}:");
            }
            Item::Op { instr, .. } => {
                let _ = writeln!(out, "    {}", instr_to_text(instr));
            }
        }
    }
    out.push_str("  }\n");
}

pub fn program_to_text(p: &Program) -> String {
    let mut out = String::new();
    if let Some(e) = &p.entry {
        let _ = writeln!(out, "entry {e}");
    }
    for s in &p.syscalls {
        let _ = writeln!(out, "{}", syscall_to_text(s));
    }
    for c in &p.classes {
        match &c.superclass {
            Some(s) => {
                let _ = writeln!(out, "class {} : {s} {{", c.name);
            }
            None => {
                let _ = writeln!(out, "class {} {{", c.name);
            }
        }
        for f in &c.fields {
            let _ = writeln!(out, "  field {}: {}", f.name, f.ty);
        }
        for m in &c.methods {
            method_to_text(m, &mut out);
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    #[test]
    fn negative_offsets_render_with_sign() {
        assert_eq!(
            instr_to_text(&Instr::BufRead {
                buffer: 1,
                offset: -3
            }),
            "BUF_READ b1 -3"
        );
        assert_eq!(instr_to_text(&Instr::BusRead { offset: 2 }), "BUS_READ +2");
        assert_eq!(
            instr_to_text(&Instr::BusReadIdx { offset: i32::MIN }),
            "BUS_READX -2147483648"
        );
    }

    #[test]
    fn text_round_trip_is_stable() {
        let src = "entry M.f\nclass M {\n  field a: arr<i32>\n  method static f(x: i32, r: ref<M>): i32 locals 3 {\n  top:\n    iload 0\n    const -4\n    if_lt top\n    iload 0\n    ret\n  }\n  method native log(v: i32): void\n}\n";
        let p = parse_program(src).unwrap();
        let text = program_to_text(&p);
        let again = program_to_text(&parse_program(&text).unwrap());
        assert_eq!(text, again);
    }
}
