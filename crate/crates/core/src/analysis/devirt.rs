use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClassHierarchy;
use crate::jir::{Instr, Program, QualName};

/// A call instruction: method plus instruction index (labels excluded).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SiteId {
    pub method: QualName,
    pub index: u32,
}

impl From<SiteId> for String {
    fn from(s: SiteId) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SiteId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let (m, i) = s
            .rsplit_once('@')
            .ok_or_else(|| format!("`{s}` is not a callsite"))?;
        Ok(SiteId {
            method: QualName::try_from(m.to_string())?,
            index: i.parse().map_err(|_| format!("`{s}` is not a callsite"))?,
        })
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.method, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualSite {
    /// The method named by the `callvirtual` instruction.
    pub named: QualName,
    /// Concrete implementations, ordered by the declaring class.
    pub targets: Vec<QualName>,
    /// Instantiated receiver classes with the implementation each selects.
    pub receivers: Vec<(String, QualName)>,
}

impl VirtualSite {
    pub fn is_monomorphic(&self) -> bool {
        self.targets.len() == 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    pub sites: BTreeMap<SiteId, VirtualSite>,
    /// Sites that can never dispatch successfully.
    pub warnings: Vec<String>,
}

impl TargetSet {
    pub fn get(&self, method: &QualName, index: u32) -> Option<&VirtualSite> {
        self.sites.get(&SiteId {
            method: method.clone(),
            index,
        })
    }

    /// Whether `observed` (as reported by the interpreter, `C.m@i` keys)
    /// is covered by the static sets.
    pub fn covers(
        &self,
        observed: &BTreeMap<String, std::collections::BTreeSet<String>>,
    ) -> Result<(), String> {
        for (site, targets) in observed {
            let Some(s) = self.sites.iter().find(|(k, _)| k.to_string() == *site) else {
                return Err(format!("no static target set for observed site {site}"));
            };
            for t in targets {
                if !s.1.targets.iter().any(|q| q.to_string() == *t) {
                    return Err(format!(
                        "site {site}: observed target {t} not in static set"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Target sets for every `callvirtual` in reachable methods.
pub fn devirtualize(p: &Program, h: &ClassHierarchy) -> TargetSet {
    let mut out = TargetSet::default();
    for q in &h.reachable {
        let Some(m) = p.method(q) else { continue };
        for (idx, op) in m.ops().enumerate() {
            let Instr::CallVirtual(named) = op else {
                continue;
            };
            let mut receivers = Vec::new();
            for s in &h.instantiated {
                if !p.is_subclass(s, &named.class) {
                    continue;
                }
                if let Some((c, _)) = p.resolve_method(s, &named.member) {
                    receivers.push((
                        s.clone(),
                        QualName::new(c.name.clone(), named.member.clone()),
                    ));
                }
            }
            let mut targets: Vec<QualName> = receivers.iter().map(|(_, t)| t.clone()).collect();
            targets.sort_by_key(|t| p.class_index(&t.class));
            targets.dedup();
            let site = SiteId {
                method: q.clone(),
                index: idx as u32,
            };
            if targets.is_empty() {
                out.warnings.push(format!(
                    "{site}: empty target set for `callvirtual {named}`"
                ));
            }
            out.sites.insert(
                site,
                VirtualSite {
                    named: named.clone(),
                    targets,
                    receivers,
                },
            );
        }
    }
    out
}
