//! Line-oriented workload traces.
//!
//! ```text
//! data va = [1,2,3]
//! locale hot = Hot.dot Hot.scale data va weight 0.8
//! Hot.dot @va 3 [4,5]
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Locale;
use crate::jir::{ArgValue, MethodKind, Program, QualName};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceArg {
    Value(ArgValue),
    /// Named data item.
    Data(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub method: QualName,
    pub args: Vec<TraceArg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub data: BTreeMap<String, Vec<i32>>,
    /// Declared locales followed by one singleton locale per invoked
    /// method not covered by a declaration.
    pub locales: Vec<Locale>,
    pub calls: Vec<Invocation>,
}

impl Workload {
    pub fn locale_of(&self, m: &QualName) -> Option<&Locale> {
        self.locales.iter().find(|l| l.methods.contains(m))
    }

    pub fn args(&self, inv: &Invocation) -> Vec<ArgValue> {
        inv.args
            .iter()
            .map(|a| match a {
                TraceArg::Value(v) => v.clone(),
                TraceArg::Data(d) => ArgValue::Array(self.data[d].clone()),
            })
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct WorkloadError {
    pub line: usize,
    pub message: String,
}

fn parse_qual(s: &str) -> Option<QualName> {
    let (c, m) = s.split_once('.')?;
    (!c.is_empty() && !m.is_empty()).then(|| QualName::new(c, m))
}

/// Splits on whitespace, keeping `[...]` literals together.
fn tokens(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0;
    for ch in line.chars() {
        match ch {
            '[' => {
                depth += 1;
                cur.push(ch);
            }
            ']' => {
                if depth == 0 {
                    return Err("unbalanced `]`".into());
                }
                depth -= 1;
                cur.push(ch);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_whitespace() => {}
            c => cur.push(c),
        }
    }
    if depth != 0 {
        return Err("unterminated `[`".into());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn parse_workload(text: &str, p: &Program) -> Result<Workload, WorkloadError> {
    let mut data = BTreeMap::new();
    let mut locales: Vec<Locale> = Vec::new();
    let mut calls = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| WorkloadError {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks = tokens(line).map_err(err)?;
        match toks[0].as_str() {
            "data" => {
                let [_, name, eq, lit] = toks.as_slice() else {
                    return Err(err("expected `data NAME = [..]`".into()));
                };
                if eq != "=" {
                    return Err(err("expected `=`".into()));
                }
                let ArgValue::Array(v) = ArgValue::parse(lit).map_err(err)? else {
                    return Err(err("data items are arrays".into()));
                };
                if data.insert(name.clone(), v).is_some() {
                    return Err(err(format!("data item `{name}` declared twice")));
                }
            }
            "locale" => {
                if toks.len() < 4 || toks[2] != "=" {
                    return Err(err(
                        "expected `locale NAME = C.m ... [data d1,d2] [weight w]`".into(),
                    ));
                }
                let name = toks[1].clone();
                if locales.iter().any(|l| l.name == name) {
                    return Err(err(format!("locale `{name}` declared twice")));
                }
                let mut methods = Vec::new();
                let mut items = Vec::new();
                let mut weight = 0.0;
                let mut j = 3;
                while j < toks.len() {
                    match toks[j].as_str() {
                        "data" => {
                            j += 1;
                            let list = toks
                                .get(j)
                                .ok_or_else(|| err("`data` needs a list".into()))?;
                            items.extend(
                                list.split(',')
                                    .filter(|s| !s.is_empty())
                                    .map(str::to_string),
                            );
                        }
                        "weight" => {
                            j += 1;
                            let w = toks
                                .get(j)
                                .ok_or_else(|| err("`weight` needs a value".into()))?;
                            weight = w
                                .parse::<f64>()
                                .ok()
                                .filter(|w| (0.0..=1.0).contains(w))
                                .ok_or_else(|| err(format!("weight `{w}` is not in 0..1")))?;
                        }
                        list => {
                            for m in list.split(',').filter(|s| !s.is_empty()) {
                                let q = parse_qual(m)
                                    .ok_or_else(|| err(format!("`{m}` is not a method name")))?;
                                if p.method(&q).is_none() {
                                    return Err(err(format!("unknown method `{q}`")));
                                }
                                if locales.iter().any(|l| l.methods.contains(&q))
                                    || methods.contains(&q)
                                {
                                    return Err(err(format!("`{q}` already belongs to a locale")));
                                }
                                methods.push(q);
                            }
                        }
                    }
                    j += 1;
                }
                locales.push(Locale {
                    id: locales.len(),
                    name,
                    methods,
                    data: items,
                    weight,
                });
            }
            m => {
                let method =
                    parse_qual(m).ok_or_else(|| err(format!("`{m}` is not a method name")))?;
                let def = p
                    .method(&method)
                    .ok_or_else(|| err(format!("unknown method `{method}`")))?;
                if def.kind != MethodKind::Static {
                    return Err(err(format!("`{method}` is not static")));
                }
                let args = toks[1..]
                    .iter()
                    .map(|t| match t.strip_prefix('@') {
                        Some(d) => Ok(TraceArg::Data(d.to_string())),
                        None => ArgValue::parse(t).map(TraceArg::Value),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                if args.len() != def.params.len() {
                    return Err(err(format!(
                        "`{method}` takes {} arguments, got {}",
                        def.params.len(),
                        args.len()
                    )));
                }
                calls.push((line_no, Invocation { method, args }));
            }
        }
    }
    for (line, inv) in &calls {
        for a in &inv.args {
            if let TraceArg::Data(d) = a {
                if !data.contains_key(d) {
                    return Err(WorkloadError {
                        line: *line,
                        message: format!("unknown data item `{d}`"),
                    });
                }
            }
        }
    }
    for l in &locales {
        for d in &l.data {
            if !data.contains_key(d) {
                return Err(WorkloadError {
                    line: 0,
                    message: format!("locale `{}` lists unknown data item `{d}`", l.name),
                });
            }
        }
    }
    let weights: f64 = locales.iter().map(|l| l.weight).sum();
    if weights > 1.0 + 1e-9 {
        return Err(WorkloadError {
            line: 0,
            message: format!("locale weights sum to {weights}, above 1"),
        });
    }
    for (_, inv) in &calls {
        if !locales.iter().any(|l| l.methods.contains(&inv.method)) {
            locales.push(Locale {
                id: locales.len(),
                name: inv.method.to_string(),
                methods: vec![inv.method.clone()],
                data: Vec::new(),
                weight: 0.0,
            });
        }
    }
    Ok(Workload {
        data,
        locales,
        calls: calls.into_iter().map(|(_, c)| c).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jir::parse_program;

    const PROG: &str = "
class A {
  method static f(a: arr<i32>, n: i32): i32 locals 2 {
    iload 1
    ret
  }
  method static g(n: i32): i32 locals 1 {
    iload 0
    ret
  }
}
";

    #[test]
    fn parses_data_locales_and_calls() {
        let p = parse_program(PROG).unwrap();
        let w = parse_workload(
            "data xs = [1, 2, 3]\nlocale l0 = A.f data xs weight 0.5\nA.f @xs 4\nA.g 7 # tail\nA.f [9] 1\n",
            &p,
        )
        .unwrap();
        assert_eq!(w.data["xs"], vec![1, 2, 3]);
        assert_eq!(w.locales.len(), 2);
        assert_eq!(w.locales[1].methods, vec![QualName::new("A", "g")]);
        assert_eq!(w.calls.len(), 3);
        assert_eq!(
            w.args(&w.calls[0]),
            vec![ArgValue::Array(vec![1, 2, 3]), ArgValue::Int(4)]
        );
        assert_eq!(
            w.args(&w.calls[2]),
            vec![ArgValue::Array(vec![9]), ArgValue::Int(1)]
        );
    }

    #[test]
    fn rejects_bad_lines() {
        let p = parse_program(PROG).unwrap();
        assert_eq!(parse_workload("A.f 1", &p).unwrap_err().line, 1);
        assert!(parse_workload("A.h 1", &p).is_err());
        assert!(parse_workload("A.f @nope 1", &p).is_err());
        assert!(parse_workload("locale a = A.g\nlocale b = A.g", &p).is_err());
        assert!(
            parse_workload("locale a = A.g weight 0.7\nlocale b = A.f weight 0.7", &p).is_err()
        );
    }
}
