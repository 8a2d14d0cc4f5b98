use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::jir::{Instr, MethodKind, Program, QualName};

/// Subclass relation plus the rapid-type-analysis results: methods
/// reachable from the roots and classes instantiated by reachable code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    /// Direct subclasses of every declared class, in declaration order.
    pub subclasses: BTreeMap<String, Vec<String>>,
    /// Instantiated classes in declaration order.
    pub instantiated: Vec<String>,
    /// Reachable methods in declaration order.
    pub reachable: Vec<QualName>,
}

impl ClassHierarchy {
    pub fn is_instantiated(&self, class: &str) -> bool {
        self.instantiated.iter().any(|c| c == class)
    }

    pub fn is_reachable(&self, q: &QualName) -> bool {
        self.reachable.contains(q)
    }
}

/// Builds the hierarchy with the program entry as the only root.
pub fn build_hierarchy(p: &Program) -> ClassHierarchy {
    let roots: Vec<QualName> = p.entry.iter().cloned().collect();
    build_hierarchy_from(p, &roots)
}

/// Rapid type analysis from an explicit root set: reachable methods and
/// instantiated classes grow together until neither changes.
pub fn build_hierarchy_from(p: &Program, roots: &[QualName]) -> ClassHierarchy {
    let mut reachable: BTreeSet<QualName> = roots
        .iter()
        .filter(|q| p.method(q).is_some())
        .cloned()
        .collect();
    let mut instantiated: BTreeSet<String> = BTreeSet::new();
    loop {
        let mut next_reach = reachable.clone();
        let mut next_inst = instantiated.clone();
        for q in &reachable {
            let Some(m) = p.method(q) else { continue };
            for op in m.ops() {
                match op {
                    Instr::New(c) => {
                        next_inst.insert(c.clone());
                    }
                    Instr::Call(t) => {
                        if p.method(t).is_some() {
                            next_reach.insert(t.clone());
                        }
                    }
                    Instr::CallVirtual(t) => {
                        for s in &instantiated {
                            if p.is_subclass(s, &t.class) {
                                if let Some((c, _)) = p.resolve_method(s, &t.member) {
                                    next_reach
                                        .insert(QualName::new(c.name.clone(), t.member.clone()));
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        if next_reach == reachable && next_inst == instantiated {
            break;
        }
        reachable = next_reach;
        instantiated = next_inst;
    }
    let subclasses = p
        .classes
        .iter()
        .map(|c| {
            (
                c.name.clone(),
                p.subclasses(&c.name)
                    .into_iter()
                    .map(String::from)
                    .collect(),
            )
        })
        .collect();
    ClassHierarchy {
        subclasses,
        instantiated: p
            .classes
            .iter()
            .filter(|c| instantiated.contains(&c.name))
            .map(|c| c.name.clone())
            .collect(),
        reachable: p
            .methods()
            .map(|(q, _)| q)
            .filter(|q| reachable.contains(q))
            .collect(),
    }
}

/// Whether `q` names a method with a body that hardware could execute.
pub(crate) fn has_body(p: &Program, q: &QualName) -> bool {
    p.method(q).is_some_and(|m| m.kind != MethodKind::Native)
}
