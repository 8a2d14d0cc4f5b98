//! The stack-machine intermediate representation.
//!
//! A program is an ordered list of classes with single inheritance. Methods
//! are `static`, `native` (host-only) or virtual (the default, with `this` in
//! local 0). Bodies are flat instruction lists with labels; the same
//! instruction enum also carries the lowered bus/syscall opcodes so that
//! lowered kernels share the textual format.

pub mod heap;
pub mod interp;
mod link;
pub mod parse;
pub mod print;
pub mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use heap::{ArgValue, Heap, DEFAULT_HEAP_WORDS};
pub use interp::{
    array_in_image, interpret, interpret_linked, interpret_method, interpret_sized, prepare,
    run_method, ExecResult, HostState, InterpError, Trap, TrapKind,
};
pub use link::{Linked, MethodId};
pub use parse::{parse_program, Diagnostic};
pub use print::program_to_text;
pub use validate::{validate, ValidationError, ValidationReport};

/// Value and field types. `Arr` is always an array of `i32`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    I32,
    Ref(String),
    Arr,
}

impl Type {
    pub fn is_reference(&self) -> bool {
        !matches!(self, Type::I32)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::I32 => f.write_str("i32"),
            Type::Ref(c) => write!(f, "ref<{c}>"),
            Type::Arr => f.write_str("arr<i32>"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Static,
    Virtual,
    Native,
}

/// `Class.member` reference used by field and call instructions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct QualName {
    pub class: String,
    pub member: String,
}

impl QualName {
    pub fn new(class: impl Into<String>, member: impl Into<String>) -> Self {
        QualName {
            class: class.into(),
            member: member.into(),
        }
    }
}

impl From<QualName> for String {
    fn from(q: QualName) -> String {
        q.to_string()
    }
}

impl TryFrom<String> for QualName {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.split_once('.') {
            Some((c, m)) if !c.is_empty() && !m.is_empty() => Ok(QualName::new(c, m)),
            _ => Err(format!("`{s}` is not a qualified name")),
        }
    }
}

impl fmt::Display for QualName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.member)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Ushr,
}

impl BinOp {
    pub const ALL: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Ushr,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Ushr => "ushr",
        }
    }

    pub fn is_division(self) -> bool {
        matches!(self, BinOp::Div | BinOp::Rem)
    }

    /// Two's-complement evaluation. Returns `None` for a zero divisor.
    pub fn eval(self, a: i32, b: i32) -> Option<i32> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return None;
                }
                a.wrapping_rem(b)
            }
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(b as u32),
            BinOp::Shr => a.wrapping_shr(b as u32),
            BinOp::Ushr => ((a as u32).wrapping_shr(b as u32)) as i32,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cond {
    pub const ALL: [Cond; 6] = [Cond::Eq, Cond::Ne, Cond::Lt, Cond::Le, Cond::Gt, Cond::Ge];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Cond::Eq => "if_eq",
            Cond::Ne => "if_ne",
            Cond::Lt => "if_lt",
            Cond::Le => "if_le",
            Cond::Gt => "if_gt",
            Cond::Ge => "if_ge",
        }
    }

    pub fn holds(self, a: i32, b: i32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => a < b,
            Cond::Le => a <= b,
            Cond::Gt => a > b,
            Cond::Ge => a >= b,
        }
    }

    pub fn negate(self) -> Cond {
        match self {
            Cond::Eq => Cond::Ne,
            Cond::Ne => Cond::Eq,
            Cond::Lt => Cond::Ge,
            Cond::Le => Cond::Gt,
            Cond::Gt => Cond::Le,
            Cond::Ge => Cond::Lt,
        }
    }

    /// The condition with operands swapped: `a op b` == `b op.swap() a`.
    pub fn swap(self) -> Cond {
        match self {
            Cond::Eq => Cond::Eq,
            Cond::Ne => Cond::Ne,
            Cond::Lt => Cond::Gt,
            Cond::Le => Cond::Ge,
            Cond::Gt => Cond::Lt,
            Cond::Ge => Cond::Le,
        }
    }
}

/// One instruction. The bus, buffer and syscall forms only appear in lowered
/// code; the validator rejects them in source programs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    Const(i32),
    Null,
    Load(u16),
    Store(u16),
    Pop,
    Dup,
    GetField(QualName),
    PutField(QualName),
    ALoad,
    AStore,
    ArrayLen,
    New(String),
    NewArray,
    Bin(BinOp),
    If(Cond, String),
    Goto(String),
    Call(QualName),
    CallVirtual(QualName),
    Ret,
    Throw,
    /// Pops a handle, pushes the word at `handle + offset`.
    BusRead {
        offset: i32,
    },
    /// Pops index then handle, pushes the word at `handle + offset + index`.
    BusReadIdx {
        offset: i32,
    },
    /// Pops value then handle, writes `handle + offset`.
    BusWrite {
        offset: i32,
    },
    /// Pops value, index, handle; writes `handle + offset + index`.
    BusWriteIdx {
        offset: i32,
    },
    /// Pops a handle and fills burst buffer `buffer` with `len` words
    /// starting at `handle + offset` in a single transaction.
    BusBurst {
        buffer: u16,
        offset: i32,
        len: u16,
    },
    /// Pops an index, pushes `buffer[index + offset]`.
    BufRead {
        buffer: u16,
        offset: i32,
    },
    Syscall(u32),
}

impl Instr {
    pub fn is_lowered_only(&self) -> bool {
        matches!(
            self,
            Instr::BusRead { .. }
                | Instr::BusReadIdx { .. }
                | Instr::BusWrite { .. }
                | Instr::BusWriteIdx { .. }
                | Instr::BusBurst { .. }
                | Instr::BufRead { .. }
                | Instr::Syscall(_)
        )
    }

    pub fn is_bus(&self) -> bool {
        matches!(
            self,
            Instr::BusRead { .. }
                | Instr::BusReadIdx { .. }
                | Instr::BusWrite { .. }
                | Instr::BusWriteIdx { .. }
                | Instr::BusBurst { .. }
        )
    }

    pub fn branch_target(&self) -> Option<&str> {
        match self {
            Instr::If(_, l) | Instr::Goto(l) => Some(l),
            _ => None,
        }
    }

    /// Mnemonic used in censuses and the textual format.
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instr::Const(_) => "const",
            Instr::Null => "null",
            Instr::Load(_) => "iload",
            Instr::Store(_) => "istore",
            Instr::Pop => "pop",
            Instr::Dup => "dup",
            Instr::GetField(_) => "getfield",
            Instr::PutField(_) => "putfield",
            Instr::ALoad => "aload",
            Instr::AStore => "astore",
            Instr::ArrayLen => "arraylen",
            Instr::New(_) => "new",
            Instr::NewArray => "newarray",
            Instr::Bin(op) => op.mnemonic(),
            Instr::If(c, _) => c.mnemonic(),
            Instr::Goto(_) => "goto",
            Instr::Call(_) => "call",
            Instr::CallVirtual(_) => "callvirtual",
            Instr::Ret => "ret",
            Instr::Throw => "throw",
            Instr::BusRead { .. } => "BUS_READ",
            Instr::BusReadIdx { .. } => "BUS_READX",
            Instr::BusWrite { .. } => "BUS_WRITE",
            Instr::BusWriteIdx { .. } => "BUS_WRITEX",
            Instr::BusBurst { .. } => "BUS_BURST",
            Instr::BufRead { .. } => "BUF_READ",
            Instr::Syscall(_) => "SYSCALL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    Label(String),
    Op { instr: Instr, line: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub ty: Type,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodDef {
    pub name: String,
    pub kind: MethodKind,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    /// Total local slots, including `this` and parameters.
    pub locals: u16,
    /// Burst-buffer sizes (lowered code only).
    pub buffers: Vec<u16>,
    pub body: Vec<Item>,
    pub line: u32,
}

impl MethodDef {
    /// Number of leading local slots filled by the caller.
    pub fn arg_slots(&self) -> u16 {
        self.params.len() as u16 + u16::from(self.kind == MethodKind::Virtual)
    }

    /// Instructions with labels stripped; indices are instruction indices.
    pub fn ops(&self) -> impl Iterator<Item = &Instr> {
        self.body.iter().filter_map(|it| match it {
            Item::Op { instr, .. } => Some(instr),
            Item::Label(_) => None,
        })
    }

    pub fn op_count(&self) -> usize {
        self.ops().count()
    }

    pub fn same_signature(&self, other: &MethodDef) -> bool {
        self.params
            .iter()
            .map(|p| &p.ty)
            .eq(other.params.iter().map(|p| &p.ty))
            && self.ret == other.ret
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<String>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
    pub line: u32,
}

/// Kind of host service behind a syscall id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyscallKind {
    AllocObject(String),
    AllocArray,
    Native(QualName),
    /// Host runs the method in software. `virtual_dispatch` selects the
    /// implementation from the receiver's class.
    SoftCall {
        method: QualName,
        virtual_dispatch: bool,
    },
    /// Raise a trap on the host; never returns to the kernel.
    Trap(TrapKind),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyscallDecl {
    pub id: u32,
    pub kind: SyscallKind,
    pub args: u16,
    pub results: u16,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub classes: Vec<ClassDef>,
    pub entry: Option<QualName>,
    /// Syscall table; only present in lowered programs.
    pub syscalls: Vec<SyscallDecl>,
}

/// Tag stored in the header word of every array.
pub const ARRAY_TAG: i32 = -1;

impl Program {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Heap header word identifying instances of class `idx`.
    pub fn class_tag(idx: usize) -> i32 {
        idx as i32 + 1
    }

    /// Superclass chain starting at `name` (inclusive). Stops on cycles.
    pub fn ancestors(&self, name: &str) -> Vec<&ClassDef> {
        let mut out: Vec<&ClassDef> = Vec::new();
        let mut cur = self.classes.iter().find(|c| c.name == name);
        while let Some(c) = cur {
            if out.iter().any(|o| o.name == c.name) {
                break;
            }
            out.push(c);
            cur = c.superclass.as_deref().and_then(|s| self.class(s));
        }
        out
    }

    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        self.ancestors(sub).iter().any(|c| c.name == sup)
    }

    /// All fields of `class` in layout order (inherited first).
    pub fn layout(&self, class: &str) -> Vec<(&str, &FieldDef)> {
        let mut chain = self.ancestors(class);
        chain.reverse();
        chain
            .into_iter()
            .flat_map(|c| c.fields.iter().map(move |f| (c.name.as_str(), f)))
            .collect()
    }

    /// Word offset of a field from the object handle (header is word 0).
    pub fn field_offset(&self, class: &str, field: &str) -> Option<(i32, &Type)> {
        let layout = self.layout(class);
        layout
            .iter()
            .rposition(|(_, f)| f.name == field)
            .map(|i| (i as i32 + 1, &layout[i].1.ty))
    }

    pub fn field_count(&self, class: &str) -> usize {
        self.layout(class).len()
    }

    /// Finds `name` in `class` or its nearest ancestor declaring it.
    pub fn resolve_method(&self, class: &str, name: &str) -> Option<(&ClassDef, &MethodDef)> {
        self.ancestors(class)
            .into_iter()
            .find_map(|c| c.methods.iter().find(|m| m.name == name).map(|m| (c, m)))
    }

    pub fn method(&self, q: &QualName) -> Option<&MethodDef> {
        self.class(&q.class)?
            .methods
            .iter()
            .find(|m| m.name == q.member)
    }

    pub fn methods(&self) -> impl Iterator<Item = (QualName, &MethodDef)> {
        self.classes.iter().flat_map(|c| {
            c.methods
                .iter()
                .map(move |m| (QualName::new(c.name.clone(), m.name.clone()), m))
        })
    }

    /// Direct subclasses of `name`, in declaration order.
    pub fn subclasses(&self, name: &str) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| c.superclass.as_deref() == Some(name))
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn entry_method(&self) -> Option<&MethodDef> {
        self.entry.as_ref().and_then(|e| self.method(e))
    }

    pub fn syscall(&self, id: u32) -> Option<&SyscallDecl> {
        self.syscalls.iter().find(|s| s.id == id)
    }
}

/// Host-implemented functions that `native` methods may bind to, by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NativeFn {
    /// Logical clock: increments and returns the host counter.
    Now,
    /// Appends its argument to the host log.
    Log,
    /// Integer mixing function.
    Hash,
}

impl NativeFn {
    pub fn by_name(name: &str) -> Option<NativeFn> {
        match name {
            "now" => Some(NativeFn::Now),
            "log" => Some(NativeFn::Log),
            "hash" => Some(NativeFn::Hash),
            _ => None,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            NativeFn::Now => 0,
            NativeFn::Log | NativeFn::Hash => 1,
        }
    }

    pub fn returns_value(self) -> bool {
        !matches!(self, NativeFn::Log)
    }

    pub fn mix(v: i32) -> i32 {
        let mut x = v as u32;
        x ^= x >> 16;
        x = x.wrapping_mul(0x7feb_352d);
        x ^= x >> 15;
        x = x.wrapping_mul(0x846c_a68b);
        x ^= x >> 16;
        x as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifts_mask_like_java() {
        assert_eq!(BinOp::Shl.eval(1, 33), Some(2));
        assert_eq!(BinOp::Shr.eval(-8, 1), Some(-4));
        assert_eq!(BinOp::Ushr.eval(-8, 28), Some(15));
    }

    #[test]
    fn division_edge_cases() {
        assert_eq!(BinOp::Div.eval(7, 0), None);
        assert_eq!(BinOp::Rem.eval(7, 0), None);
        assert_eq!(BinOp::Div.eval(i32::MIN, -1), Some(i32::MIN));
        assert_eq!(BinOp::Rem.eval(i32::MIN, -1), Some(0));
        assert_eq!(BinOp::Rem.eval(-7, 2), Some(-1));
    }

    #[test]
    fn cond_negate_and_swap() {
        for c in Cond::ALL {
            for (a, b) in [(1, 2), (2, 2), (3, 2)] {
                assert_eq!(c.negate().holds(a, b), !c.holds(a, b));
                assert_eq!(c.swap().holds(b, a), c.holds(a, b));
            }
        }
    }
}
