//! Whole-program analysis: class hierarchy with rapid type analysis,
//! callsite target sets, and per-method translatability verdicts.

mod classify;
mod devirt;
mod hierarchy;

use serde::{Deserialize, Serialize};

pub use classify::{classify, OffloadError, TranslatabilityReport, Verdict};
pub use devirt::{devirtualize, SiteId, TargetSet, VirtualSite};
pub(crate) use hierarchy::has_body;
pub use hierarchy::{build_hierarchy, build_hierarchy_from, ClassHierarchy};

use crate::jir::{Program, QualName};

/// All analysis results for one program and root set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analysis {
    pub roots: Vec<QualName>,
    pub hierarchy: ClassHierarchy,
    pub targets: TargetSet,
    pub report: TranslatabilityReport,
}

impl Analysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }
}

/// Analyzes from the program entry.
pub fn analyze(p: &Program) -> Analysis {
    let roots: Vec<QualName> = p.entry.iter().cloned().collect();
    analyze_from(p, &roots)
}

pub fn analyze_from(p: &Program, roots: &[QualName]) -> Analysis {
    let hierarchy = build_hierarchy_from(p, roots);
    let targets = devirtualize(p, &hierarchy);
    let report = classify(p, &hierarchy, &targets);
    Analysis {
        roots: roots.to_vec(),
        hierarchy,
        targets,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jir::parse_program;

    const SHAPES: &str = "entry Main.run
class A {
  method m(): i32 {
    const 1
    ret
  }
}
class B : A {
  method m(): i32 {
    const 2
    ret
  }
}
class C : A {
}
class Main {
  method static run(): i32 locals 1 {
    new B
    istore 0
    iload 0
    callvirtual A.m
    ret
  }
  method static dead(): i32 {
    new C
    callvirtual A.m
    ret
  }
}
";

    #[test]
    fn only_reachable_news_count() {
        let p = parse_program(SHAPES).unwrap();
        let h = build_hierarchy(&p);
        assert_eq!(h.instantiated, vec!["B"]);
        assert!(!h.is_reachable(&QualName::new("Main", "dead")));
        assert_eq!(h.subclasses["A"], vec!["B", "C"]);
    }

    #[test]
    fn monomorphic_after_rta() {
        let p = parse_program(SHAPES).unwrap();
        let a = analyze(&p);
        let site = a.targets.get(&QualName::new("Main", "run"), 3).unwrap();
        assert_eq!(site.targets, vec![QualName::new("B", "m")]);
        assert!(site.is_monomorphic());
        assert_eq!(
            a.report.verdict(&QualName::new("Main", "run")),
            Some(&Verdict::HardwareWithSyscalls(vec![0]))
        );
    }

    #[test]
    fn inherited_implementation_is_the_target() {
        let src = SHAPES.replace("    new B\n    istore 0", "    new C\n    istore 0");
        let p = parse_program(&src).unwrap();
        let a = analyze(&p);
        let site = a.targets.get(&QualName::new("Main", "run"), 3).unwrap();
        assert_eq!(site.targets, vec![QualName::new("A", "m")]);
    }

    #[test]
    fn static_only_program_instantiates_nothing() {
        let src =
            "entry M.f\nclass M {\n  method static f(): i32 {\n    const 3\n    ret\n  }\n}\n";
        let a = analyze(&parse_program(src).unwrap());
        assert!(a.hierarchy.instantiated.is_empty());
        assert_eq!(
            a.report.verdict(&QualName::new("M", "f")),
            Some(&Verdict::Hardware)
        );
    }

    #[test]
    fn throw_rejects_callers_transitively() {
        let src = "entry M.f
class M {
  method static bad(x: i32): i32 {
    iload 0
    throw
  }
  method static mid(x: i32): i32 {
    iload 0
    call M.bad
    ret
  }
  method static f(x: i32): i32 {
    iload 0
    call M.mid
    ret
  }
}
";
        let p = parse_program(src).unwrap();
        let a = analyze(&p);
        let f = QualName::new("M", "f");
        match a.report.verdict(&f).unwrap() {
            Verdict::Rejected { reason, cause, .. } => {
                assert!(reason.contains("reachable exception via target M.mid"));
                assert_eq!(cause, &QualName::new("M", "bad"));
            }
            v => panic!("{v:?}"),
        }
        let err = a.report.check_offloadable(&p, &f, true).unwrap_err();
        assert!(err.to_string().starts_with("nothing to offload"));
    }

    #[test]
    fn recursion_is_soft() {
        let src = "entry M.f
class M {
  method static f(n: i32): i32 {
    iload 0
    const 0
    if_le base
    iload 0
    const 1
    sub
    call M.f
    ret
  base:
    const 0
    ret
  }
}
";
        let a = analyze(&parse_program(src).unwrap());
        let f = QualName::new("M", "f");
        assert!(a.report.is_soft(&f));
        assert_eq!(
            a.report.verdict(&f),
            Some(&Verdict::HardwareWithSyscalls(vec![6]))
        );
    }
}
