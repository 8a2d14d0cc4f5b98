//! Line-oriented parser for the textual IR.
//!
//! ```text
//! entry Main.run
//! class Point : Shape {
//!   field x: i32
//!   method static make(a: i32): ref<Point> locals 2 {
//!     new Point
//!     ret
//!   }
//!   method native now(): i32
//! }
//! ```
//!
//! Every instruction and label sits on its own line (`L1: add` is also
//! accepted). `//` starts a comment. Lowered programs may additionally
//! declare `syscall <id> = <kind> args <n> results <n>` at top level and
//! `buffers <n>,<n>` in method headers.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::heap::parse_word;
use super::interp::TrapKind;
use super::{
    BinOp, ClassDef, Cond, FieldDef, Instr, Item, MethodDef, MethodKind, Param, Program, QualName,
    SyscallDecl, SyscallKind, Type,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: u32,
}

fn tokenize(line: &str, lineno: u32) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i as u32 + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Num(chars[start..i].iter().collect()),
                col,
            });
        } else if "{}():,.<>[]=+-".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
        } else {
            return Err(Diagnostic {
                line: lineno,
                col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: u32,
    end_col: u32,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> Cursor<'a> {
    fn col(&self) -> u32 {
        self.toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or(self.end_col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic {
            line: self.line,
            col: self.col(),
            message: msg.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn number(&mut self) -> PResult<i32> {
        let col = self.col();
        match self.peek() {
            Some(Tok::Num(s)) => {
                let s = s.clone();
                self.pos += 1;
                parse_word(&s).map_err(|message| Diagnostic {
                    line: self.line,
                    col,
                    message,
                })
            }
            _ => self.err("expected number"),
        }
    }

    fn unsigned(&mut self, what: &str, max: u32) -> PResult<u32> {
        let col = self.col();
        let v = self.number()?;
        if v < 0 || v as u32 > max {
            return Err(Diagnostic {
                line: self.line,
                col,
                message: format!("{what} out of range"),
            });
        }
        Ok(v as u32)
    }

    /// `+3`, `-3` or `3`.
    fn offset(&mut self) -> PResult<i32> {
        if self.eat_punct('+') {
            return self.number();
        }
        if self.eat_punct('-') {
            return Ok(self.number()?.wrapping_neg());
        }
        self.number()
    }

    fn qualname(&mut self) -> PResult<QualName> {
        let class = self.ident("class name")?;
        self.expect_punct('.')?;
        let member = self.ident("member name")?;
        Ok(QualName { class, member })
    }

    fn ty(&mut self) -> PResult<Type> {
        let name = self.ident("type")?;
        match name.as_str() {
            "i32" => Ok(Type::I32),
            "ref" => {
                self.expect_punct('<')?;
                let c = self.ident("class name")?;
                self.expect_punct('>')?;
                Ok(Type::Ref(c))
            }
            "arr" => {
                self.expect_punct('<')?;
                let e = self.ident("element type")?;
                if e != "i32" {
                    return self.err("only arr<i32> is supported");
                }
                self.expect_punct('>')?;
                Ok(Type::Arr)
            }
            other => self.err(format!("unknown type `{other}`")),
        }
    }

    fn finish(&self) -> PResult<()> {
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing tokens")
        }
    }
}

fn parse_instr(cur: &mut Cursor<'_>) -> PResult<Instr> {
    let mnemonic = cur.ident("instruction")?;
    let lower = mnemonic.to_ascii_lowercase();
    let instr = match lower.as_str() {
        "const" => Instr::Const(cur.number()?),
        "null" => Instr::Null,
        "iload" => Instr::Load(cur.unsigned("local index", u16::MAX as u32)? as u16),
        "istore" => Instr::Store(cur.unsigned("local index", u16::MAX as u32)? as u16),
        "pop" => Instr::Pop,
        "dup" => Instr::Dup,
        "getfield" => Instr::GetField(cur.qualname()?),
        "putfield" => Instr::PutField(cur.qualname()?),
        "aload" => Instr::ALoad,
        "astore" => Instr::AStore,
        "arraylen" => Instr::ArrayLen,
        "new" => Instr::New(cur.ident("class name")?),
        "newarray" => Instr::NewArray,
        "goto" => Instr::Goto(cur.ident("label")?),
        "call" => Instr::Call(cur.qualname()?),
        "callvirtual" => Instr::CallVirtual(cur.qualname()?),
        "ret" => Instr::Ret,
        "throw" => Instr::Throw,
        "bus_read" => Instr::BusRead {
            offset: cur.offset()?,
        },
        "bus_readx" => Instr::BusReadIdx {
            offset: cur.offset()?,
        },
        "bus_write" => Instr::BusWrite {
            offset: cur.offset()?,
        },
        "bus_writex" => Instr::BusWriteIdx {
            offset: cur.offset()?,
        },
        "bus_burst" => {
            let buffer = buffer_ref(cur)?;
            let offset = cur.offset()?;
            let len = match cur.next() {
                Some(Tok::Ident(s)) if s.starts_with('x') => s[1..].parse::<u16>().ok(),
                _ => None,
            };
            let Some(len) = len else {
                return cur.err("expected burst length `xN`");
            };
            Instr::BusBurst {
                buffer,
                offset,
                len,
            }
        }
        "buf_read" => {
            let buffer = buffer_ref(cur)?;
            Instr::BufRead {
                buffer,
                offset: cur.offset()?,
            }
        }
        "syscall" => Instr::Syscall(cur.unsigned("syscall id", u32::MAX)?),
        other => {
            if let Some(op) = BinOp::ALL.iter().find(|b| b.mnemonic() == other) {
                Instr::Bin(*op)
            } else if let Some(c) = Cond::ALL.iter().find(|c| c.mnemonic() == other) {
                Instr::If(*c, cur.ident("label")?)
            } else {
                cur.pos -= 1;
                return cur.err(format!("unknown instruction `{mnemonic}`"));
            }
        }
    };
    cur.finish()?;
    Ok(instr)
}

fn buffer_ref(cur: &mut Cursor<'_>) -> PResult<u16> {
    match cur.next() {
        Some(Tok::Ident(s)) if s.starts_with('b') => {
            if let Ok(v) = s[1..].parse::<u16>() {
                return Ok(v);
            }
        }
        _ => {}
    }
    cur.pos -= 1;
    cur.err("expected buffer reference `bN`")
}

fn trap_kind_by_name(name: &str) -> Option<TrapKind> {
    TrapKind::ALL.iter().copied().find(|k| k.name() == name)
}

fn parse_syscall_decl(cur: &mut Cursor<'_>) -> PResult<SyscallDecl> {
    let id = cur.unsigned("syscall id", u32::MAX)?;
    cur.expect_punct('=')?;
    let kind_name = cur.ident("syscall kind")?;
    let kind = match kind_name.as_str() {
        "alloc_object" => SyscallKind::AllocObject(cur.ident("class name")?),
        "alloc_array" => SyscallKind::AllocArray,
        "native" => SyscallKind::Native(cur.qualname()?),
        "soft_call" => SyscallKind::SoftCall {
            method: cur.qualname()?,
            virtual_dispatch: false,
        },
        "soft_callvirtual" => SyscallKind::SoftCall {
            method: cur.qualname()?,
            virtual_dispatch: true,
        },
        "trap" => {
            let n = cur.ident("trap kind")?;
            match trap_kind_by_name(&n) {
                Some(k) => SyscallKind::Trap(k),
                None => return cur.err(format!("unknown trap kind `{n}`")),
            }
        }
        other => return cur.err(format!("unknown syscall kind `{other}`")),
    };
    if !cur.eat_keyword("args") {
        return cur.err("expected `args`");
    }
    let args = cur.unsigned("argument count", u16::MAX as u32)? as u16;
    if !cur.eat_keyword("results") {
        return cur.err("expected `results`");
    }
    let results = cur.unsigned("result count", 1)? as u16;
    cur.finish()?;
    Ok(SyscallDecl {
        id,
        kind,
        args,
        results,
    })
}

/// Parsed method header; `has_body` is false for a bodiless native.
struct Header {
    method: MethodDef,
    has_body: bool,
    closed: bool,
}

fn parse_method_header(cur: &mut Cursor<'_>) -> PResult<Header> {
    let kind = if cur.eat_keyword("static") {
        MethodKind::Static
    } else if cur.eat_keyword("native") {
        MethodKind::Native
    } else {
        MethodKind::Virtual
    };
    let name = cur.ident("method name")?;
    cur.expect_punct('(')?;
    let mut params = Vec::new();
    if !cur.eat_punct(')') {
        loop {
            let pname = cur.ident("parameter name")?;
            cur.expect_punct(':')?;
            let ty = cur.ty()?;
            params.push(Param { name: pname, ty });
            if cur.eat_punct(')') {
                break;
            }
            cur.expect_punct(',')?;
        }
    }
    let ret = if cur.eat_punct(':') {
        if cur.eat_keyword("void") {
            None
        } else {
            Some(cur.ty()?)
        }
    } else {
        None
    };
    let mut locals = None;
    let mut buffers = Vec::new();
    loop {
        if cur.eat_keyword("locals") {
            locals = Some(cur.unsigned("local count", u16::MAX as u32)? as u16);
        } else if cur.eat_keyword("buffers") {
            loop {
                buffers.push(cur.unsigned("buffer size", u16::MAX as u32)? as u16);
                if !cur.eat_punct(',') {
                    break;
                }
            }
        } else {
            break;
        }
    }
    let has_body = cur.eat_punct('{');
    let closed = has_body && cur.eat_punct('}');
    cur.finish()?;
    let arg_slots = params.len() as u16 + u16::from(kind == MethodKind::Virtual);
    let method = MethodDef {
        name,
        kind,
        params,
        ret,
        locals: locals.unwrap_or(arg_slots),
        buffers,
        body: Vec::new(),
        line: cur.line,
    };
    if kind == MethodKind::Native && has_body && !closed {
        return cur.err("native methods have no body");
    }
    if kind != MethodKind::Native && !has_body {
        return cur.err("expected `{` to open method body");
    }
    Ok(Header {
        method,
        has_body,
        closed,
    })
}

enum State {
    Top,
    Class(ClassDef),
    Method(ClassDef, MethodDef),
}

/// Parses IR text into a structurally valid program, or returns every
/// diagnostic found.
pub fn parse_program(text: &str) -> Result<Program, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut program = Program::default();
    let mut state = State::Top;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx as u32 + 1;
        let line = match raw.find("//") {
            Some(p) => &raw[..p],
            None => raw,
        };
        let toks = match tokenize(line, lineno) {
            Ok(t) => t,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            toks: &toks,
            pos: 0,
            line: lineno,
            end_col: line.chars().count() as u32 + 1,
        };
        let result: PResult<()> = (|| {
            state = match std::mem::replace(&mut state, State::Top) {
                State::Top => {
                    if cur.eat_keyword("entry") {
                        let q = cur.qualname()?;
                        cur.finish()?;
                        if program.entry.is_some() {
                            return cur.err("duplicate entry declaration");
                        }
                        program.entry = Some(q);
                        State::Top
                    } else if cur.eat_keyword("syscall") {
                        let decl = parse_syscall_decl(&mut cur)?;
                        program.syscalls.push(decl);
                        State::Top
                    } else if cur.eat_keyword("class") {
                        let name = cur.ident("class name")?;
                        let superclass = if cur.eat_punct(':') {
                            Some(cur.ident("superclass name")?)
                        } else {
                            None
                        };
                        cur.expect_punct('{')?;
                        let closed = cur.eat_punct('}');
                        cur.finish()?;
                        let class = ClassDef {
                            name,
                            superclass,
                            fields: Vec::new(),
                            methods: Vec::new(),
                            line: lineno,
                        };
                        if closed {
                            program.classes.push(class);
                            State::Top
                        } else {
                            State::Class(class)
                        }
                    } else {
                        return cur.err("expected `class`, `entry` or `syscall`");
                    }
                }
                State::Class(mut class) => {
                    if cur.eat_punct('}') {
                        cur.finish()?;
                        program.classes.push(class);
                        State::Top
                    } else if cur.eat_keyword("field") {
                        let name = cur.ident("field name")?;
                        cur.expect_punct(':')?;
                        let ty = cur.ty()?;
                        cur.finish()?;
                        class.fields.push(FieldDef {
                            name,
                            ty,
                            line: lineno,
                        });
                        State::Class(class)
                    } else if cur.eat_keyword("method") {
                        let header = match parse_method_header(&mut cur) {
                            Ok(h) => h,
                            Err(d) => {
                                // keep the class open so later lines still parse
                                state = State::Class(class);
                                return Err(d);
                            }
                        };
                        if header.has_body && !header.closed {
                            State::Method(class, header.method)
                        } else {
                            class.methods.push(header.method);
                            State::Class(class)
                        }
                    } else {
                        let e = cur.err("expected `field`, `method` or `}`");
                        state = State::Class(class);
                        return e;
                    }
                }
                State::Method(class, mut method) => {
                    if cur.eat_punct('}') {
                        let r = cur.finish();
                        let mut class = class;
                        class.methods.push(method);
                        state = State::Class(class);
                        return r;
                    }
                    if let (
                        Some(Tok::Ident(l)),
                        Some(Token {
                            tok: Tok::Punct(':'),
                            ..
                        }),
                    ) = (cur.peek().cloned(), toks.get(1))
                    {
                        cur.pos = 2;
                        method.body.push(Item::Label(l));
                        if cur.at_end() {
                            state = State::Method(class, method);
                            return Ok(());
                        }
                    }
                    match parse_instr(&mut cur) {
                        Ok(instr) => {
                            method.body.push(Item::Op {
                                instr,
                                line: lineno,
                            });
                            State::Method(class, method)
                        }
                        Err(d) => {
                            state = State::Method(class, method);
                            return Err(d);
                        }
                    }
                }
            };
            Ok(())
        })();
        if let Err(d) = result {
            diags.push(d);
        }
    }

    let eof = text.lines().count() as u32 + 1;
    match state {
        State::Top => {}
        State::Class(c) => diags.push(Diagnostic {
            line: eof,
            col: 1,
            message: format!("unterminated class `{}`", c.name),
        }),
        State::Method(_, m) => diags.push(Diagnostic {
            line: eof,
            col: 1,
            message: format!("unterminated method `{}`", m.name),
        }),
    }

    structural_checks(&program, &mut diags);

    if diags.is_empty() {
        Ok(program)
    } else {
        diags.sort_by_key(|d| (d.line, d.col));
        Err(diags)
    }
}

/// Name-resolution checks that do not need types: duplicates, superclass
/// resolution, inheritance cycles and label resolution.
fn structural_checks(p: &Program, diags: &mut Vec<Diagnostic>) {
    let mut seen = HashSet::new();
    for c in &p.classes {
        if !seen.insert(c.name.as_str()) {
            diags.push(Diagnostic {
                line: c.line,
                col: 1,
                message: format!("duplicate class `{}`", c.name),
            });
        }
    }
    for c in &p.classes {
        if let Some(s) = &c.superclass {
            if p.class(s).is_none() {
                diags.push(Diagnostic {
                    line: c.line,
                    col: 1,
                    message: format!("unresolved superclass `{s}` of `{}`", c.name),
                });
            }
        }
    }
    // cycle detection: walk each chain; a chain longer than the class count loops
    let mut reported = HashSet::new();
    for c in &p.classes {
        let mut cur = c;
        let mut steps = 0;
        while let Some(s) = cur.superclass.as_deref().and_then(|s| p.class(s)) {
            steps += 1;
            if s.name == c.name || steps > p.classes.len() {
                if s.name == c.name && reported.insert(c.name.clone()) {
                    diags.push(Diagnostic {
                        line: c.line,
                        col: 1,
                        message: format!("inheritance cycle through `{}`", c.name),
                    });
                }
                break;
            }
            cur = s;
        }
    }
    for c in &p.classes {
        let mut fields = HashSet::new();
        for f in &c.fields {
            if !fields.insert(f.name.as_str()) {
                diags.push(Diagnostic {
                    line: f.line,
                    col: 1,
                    message: format!("duplicate field `{}.{}`", c.name, f.name),
                });
            }
        }
        let mut methods = HashSet::new();
        for m in &c.methods {
            if !methods.insert(m.name.as_str()) {
                diags.push(Diagnostic {
                    line: m.line,
                    col: 1,
                    message: format!("duplicate method `{}.{}`", c.name, m.name),
                });
            }
            check_labels(c, m, diags);
        }
    }
    let mut ids = HashSet::new();
    for s in &p.syscalls {
        if !ids.insert(s.id) {
            diags.push(Diagnostic {
                line: 0,
                col: 1,
                message: format!("duplicate syscall id {}", s.id),
            });
        }
    }
}

fn check_labels(c: &ClassDef, m: &MethodDef, diags: &mut Vec<Diagnostic>) {
    let mut labels = HashSet::new();
    for it in &m.body {
        if let Item::Label(l) = it {
            if !labels.insert(l.as_str()) {
                diags.push(Diagnostic {
                    line: m.line,
                    col: 1,
                    message: format!("duplicate label `{l}` in `{}.{}`", c.name, m.name),
                });
            }
        }
    }
    for it in &m.body {
        if let Item::Op { instr, line } = it {
            if let Some(t) = instr.branch_target() {
                if !labels.contains(t) {
                    diags.push(Diagnostic {
                        line: *line,
                        col: 1,
                        message: format!("undefined label `{t}`"),
                    });
                }
            }
        }
    }
}
