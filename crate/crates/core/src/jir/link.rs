use std::collections::HashMap;

use super::{BinOp, Cond, Instr, Item, MethodKind, NativeFn, Program, QualName};

/// Dense index of a method in a linked program (declaration order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodId(pub u32);

#[derive(Clone, Debug)]
pub(crate) enum LInstr {
    Const(i32),
    Load(u16),
    Store(u16),
    Pop,
    Dup,
    GetField(i32),
    PutField(i32),
    ALoad,
    AStore,
    ArrayLen,
    New { tag: i32, fields: u32 },
    NewArray,
    Bin(BinOp),
    If(Cond, u32),
    Goto(u32),
    Call(MethodId),
    CallNative(NativeFn),
    CallVirtual { name: u32, argc: u16 },
    Ret,
    Throw,
}

#[derive(Clone, Debug)]
pub(crate) struct LMethod {
    pub name: QualName,
    pub arg_slots: u16,
    pub locals: u16,
    pub returns: bool,
    pub code: Vec<LInstr>,
}

/// A validated program with names resolved to indices, ready to execute.
#[derive(Clone, Debug)]
pub struct Linked {
    pub(crate) methods: Vec<LMethod>,
    ids: HashMap<QualName, MethodId>,
    name_ids: HashMap<String, u32>,
    /// Per class (indexed by tag - 1): method name id -> implementation.
    vtables: Vec<HashMap<u32, MethodId>>,
}

impl Linked {
    /// Links a source program. Assumes `validate` passed; unresolvable
    /// references are reported as errors rather than panics.
    pub fn new(p: &Program) -> Result<Linked, String> {
        let mut ids = HashMap::new();
        for (i, (q, _)) in p.methods().enumerate() {
            ids.insert(q, MethodId(i as u32));
        }
        let mut name_ids: HashMap<String, u32> = HashMap::new();
        for (_, m) in p.methods() {
            let n = name_ids.len() as u32;
            name_ids.entry(m.name.clone()).or_insert(n);
        }
        let mut vtables = Vec::with_capacity(p.classes.len());
        for c in &p.classes {
            let mut table = HashMap::new();
            for anc in p.ancestors(&c.name).iter().rev() {
                for m in &anc.methods {
                    if m.kind == MethodKind::Virtual {
                        table.insert(
                            name_ids[&m.name],
                            ids[&QualName::new(anc.name.clone(), m.name.clone())],
                        );
                    }
                }
            }
            vtables.push(table);
        }

        let mut methods = Vec::new();
        for (q, m) in p.methods() {
            let mut labels = HashMap::new();
            let mut pc = 0u32;
            for it in &m.body {
                match it {
                    Item::Label(l) => {
                        labels.insert(l.as_str(), pc);
                    }
                    Item::Op { .. } => pc += 1,
                }
            }
            let label = |l: &str| {
                labels
                    .get(l)
                    .copied()
                    .ok_or_else(|| format!("{q}: undefined label `{l}`"))
            };
            let mut code = Vec::new();
            for instr in m.ops() {
                code.push(match instr {
                    Instr::Const(v) => LInstr::Const(*v),
                    Instr::Null => LInstr::Const(0),
                    Instr::Load(n) => LInstr::Load(*n),
                    Instr::Store(n) => LInstr::Store(*n),
                    Instr::Pop => LInstr::Pop,
                    Instr::Dup => LInstr::Dup,
                    Instr::GetField(f) | Instr::PutField(f) => {
                        let (off, _) = p
                            .field_offset(&f.class, &f.member)
                            .ok_or_else(|| format!("{q}: unknown field `{f}`"))?;
                        if matches!(instr, Instr::GetField(_)) {
                            LInstr::GetField(off)
                        } else {
                            LInstr::PutField(off)
                        }
                    }
                    Instr::ALoad => LInstr::ALoad,
                    Instr::AStore => LInstr::AStore,
                    Instr::ArrayLen => LInstr::ArrayLen,
                    Instr::New(c) => {
                        let idx = p
                            .class_index(c)
                            .ok_or_else(|| format!("{q}: unknown class `{c}`"))?;
                        LInstr::New {
                            tag: Program::class_tag(idx),
                            fields: p.field_count(c) as u32,
                        }
                    }
                    Instr::NewArray => LInstr::NewArray,
                    Instr::Bin(op) => LInstr::Bin(*op),
                    Instr::If(c, l) => LInstr::If(*c, label(l)?),
                    Instr::Goto(l) => LInstr::Goto(label(l)?),
                    Instr::Call(t) => {
                        let target = p
                            .method(t)
                            .ok_or_else(|| format!("{q}: unresolved method `{t}`"))?;
                        if target.kind == MethodKind::Native {
                            LInstr::CallNative(
                                NativeFn::by_name(&target.name)
                                    .ok_or_else(|| format!("{q}: unknown native `{t}`"))?,
                            )
                        } else {
                            LInstr::Call(ids[t])
                        }
                    }
                    Instr::CallVirtual(t) => {
                        let (_, target) = p
                            .resolve_method(&t.class, &t.member)
                            .ok_or_else(|| format!("{q}: unresolved method `{t}`"))?;
                        LInstr::CallVirtual {
                            name: name_ids[&target.name],
                            argc: target.params.len() as u16 + 1,
                        }
                    }
                    Instr::Ret => LInstr::Ret,
                    Instr::Throw => LInstr::Throw,
                    other => {
                        return Err(format!(
                            "{q}: lowered opcode `{}` in source program",
                            other.mnemonic()
                        ))
                    }
                });
            }
            methods.push(LMethod {
                name: q.clone(),
                arg_slots: m.arg_slots(),
                locals: m.locals.max(m.arg_slots()),
                returns: m.ret.is_some(),
                code,
            });
        }
        Ok(Linked {
            methods,
            ids,
            name_ids,
            vtables,
        })
    }

    pub fn id(&self, q: &QualName) -> Option<MethodId> {
        self.ids.get(q).copied()
    }

    pub fn name(&self, id: MethodId) -> &QualName {
        &self.methods[id.0 as usize].name
    }

    pub fn returns_value(&self, id: MethodId) -> bool {
        self.methods[id.0 as usize].returns
    }

    pub(crate) fn method(&self, id: MethodId) -> &LMethod {
        &self.methods[id.0 as usize]
    }

    pub(crate) fn dispatch(&self, tag: i32, name: u32) -> Option<MethodId> {
        if tag < 1 {
            return None;
        }
        self.vtables.get(tag as usize - 1)?.get(&name).copied()
    }

    /// Implementation of virtual method `member` for a receiver with header `tag`.
    pub fn dispatch_by_name(&self, tag: i32, member: &str) -> Option<MethodId> {
        self.dispatch(tag, *self.name_ids.get(member)?)
    }
}
