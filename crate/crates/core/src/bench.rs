//! The four-kernel benchmark harness and the report table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::cosim::{compile, OffloadRunError};
use crate::fixtures;
use crate::hwmodel::{estimate_area, estimate_latency};
use crate::jir::{interpret_sized, parse_program, ArgValue, Program, QualName};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchInput {
    pub name: String,
    pub args: Vec<ArgValue>,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub fixture: &'static str,
    pub entry: QualName,
    /// The first input is the one shown in the table.
    pub inputs: Vec<BenchInput>,
}

pub const MD5_VECTORS: [(&str, &str); 7] = [
    ("abc", "abc"),
    ("empty", ""),
    ("a", "a"),
    ("message-digest", "message digest"),
    ("alphabet", "abcdefghijklmnopqrstuvwxyz"),
    (
        "alphanumeric",
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
    ),
    (
        "digits",
        "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
    ),
];

/// Expected digests for `MD5_VECTORS`, in the same order.
pub const MD5_DIGESTS: [&str; 7] = [
    "900150983cd24fb0d6963f7d28e17f72",
    "d41d8cd98f00b204e9800998ecf8427e",
    "0cc175b9c0f1b6a831c399e269772661",
    "f96b697d7cb7938d525a2f31aaf161d0",
    "c3fcd3d76192e4007dfb496cca67e13b",
    "d174ab98d277d9f5a5611c2c9f419d9f",
    "57edf4a22be3c955ac49da2e2107b67a",
];

pub fn md5_args(msg: &str) -> Vec<ArgValue> {
    let (words, blocks) = fixtures::md5_words(msg.as_bytes());
    vec![
        ArgValue::Array(words),
        ArgValue::Int(blocks),
        ArgValue::Array(vec![0; 4]),
    ]
}

pub const VECTOR_INPUT: [i32; 16] = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3];

pub fn benchmarks() -> Vec<Benchmark> {
    let (x, h) = fixtures::fir_inputs();
    vec![
        Benchmark {
            name: "Vector sum",
            fixture: "vector_sum",
            entry: QualName::new("Vec", "sum16"),
            inputs: vec![BenchInput {
                name: "digits16".into(),
                args: vec![ArgValue::Array(VECTOR_INPUT.to_vec())],
            }],
        },
        Benchmark {
            name: "Collatz evaluation",
            fixture: "collatz",
            entry: QualName::new("Collatz", "steps"),
            inputs: vec![BenchInput {
                name: "27".into(),
                args: vec![ArgValue::Int(27)],
            }],
        },
        Benchmark {
            name: "MD5 hash",
            fixture: "md5",
            entry: QualName::new("Md5", "digest"),
            inputs: MD5_VECTORS
                .iter()
                .map(|(n, m)| BenchInput {
                    name: (*n).into(),
                    args: md5_args(m),
                })
                .collect(),
        },
        Benchmark {
            name: "FIR filter",
            fixture: "fir",
            entry: QualName::new("Fir", "run"),
            inputs: vec![BenchInput {
                name: "taps8x64".into(),
                args: vec![
                    ArgValue::Array(x),
                    ArgValue::Array(h),
                    ArgValue::Array(vec![0; 64]),
                ],
            }],
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LatencyCell {
    Exact { cycles: u64 },
    InputDependent,
}

impl std::fmt::Display for LatencyCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatencyCell::Exact { cycles } => write!(f, "{cycles}"),
            LatencyCell::InputDependent => f.write_str("input-dep"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMeasure {
    pub input: String,
    pub cycles: u64,
    pub sw_instructions: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub area_units: u64,
    pub latency: LatencyCell,
    pub inputs: Vec<InputMeasure>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}: {1}")]
    Compile(String, OffloadRunError),
    #[error("{bench} on `{input}`: {detail}")]
    Mismatch {
        bench: String,
        input: String,
        detail: String,
    },
}

pub fn fixture_program(name: &str) -> Program {
    let text = fixtures::by_name(name).expect("shipped fixture");
    parse_program(text).expect("shipped fixtures parse")
}

/// Compiles, estimates and runs one benchmark, checking every run against
/// the interpreter and exact estimates against measurements.
pub fn run_benchmark(b: &Benchmark, cfg: &RunConfig) -> Result<ReportRow, BenchError> {
    let p = fixture_program(b.fixture);
    let c = compile(&p, &b.entry, cfg).map_err(|e| BenchError::Compile(b.name.into(), e))?;
    let k = &c.scheduled;
    let area = estimate_area(k, &cfg.cost, &k.graph.dispatch);
    let lat = estimate_latency(k, &cfg.sim.bus, &cfg.sim.channel);
    let mut inputs = Vec::new();
    for input in &b.inputs {
        let mismatch = |detail: String| BenchError::Mismatch {
            bench: b.name.into(),
            input: input.name.clone(),
            detail,
        };
        let sw = interpret_sized(
            &p,
            &c.linked,
            &b.entry,
            &input.args,
            cfg.sim.host_fuel,
            cfg.heap_words,
        )
        .map_err(|e| mismatch(e.to_string()))?;
        let hw = c
            .run(&p, &input.args, cfg)
            .map_err(|e| mismatch(e.to_string()))?;
        if hw.value != sw.value || hw.heap != sw.heap || hw.trap.is_some() || sw.trap.is_some() {
            return Err(mismatch("kernel and interpreter disagree".into()));
        }
        if let Some(exact) = lat.exact() {
            if exact != hw.total_cycles {
                return Err(mismatch(format!(
                    "estimated {exact} cycles, measured {}",
                    hw.total_cycles
                )));
            }
        }
        inputs.push(InputMeasure {
            input: input.name.clone(),
            cycles: hw.total_cycles,
            sw_instructions: sw.instructions,
        });
    }
    Ok(ReportRow {
        name: b.name.into(),
        area_units: area.total,
        latency: match lat.exact() {
            Some(cycles) => LatencyCell::Exact { cycles },
            None => LatencyCell::InputDependent,
        },
        inputs,
    })
}

pub fn run_bench(cfg: &RunConfig) -> Result<Vec<ReportRow>, BenchError> {
    benchmarks().iter().map(|b| run_benchmark(b, cfg)).collect()
}

/// A text table with one row-label column and grouped value columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub label: String,
    /// Group title and the headers of its columns.
    pub groups: Vec<(String, Vec<String>)>,
    /// Row label and one cell per column, groups concatenated.
    pub rows: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn render(&self) -> String {
        let w0 = self
            .rows
            .iter()
            .map(|(l, _)| l.len())
            .chain([self.label.len()])
            .max()
            .unwrap_or(0);
        let mut widths: Vec<Vec<usize>> = Vec::new();
        let mut col = 0;
        for (title, headers) in &self.groups {
            let mut ws: Vec<usize> = headers
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    self.rows
                        .iter()
                        .map(|(_, cells)| cells.get(col + j).map_or(0, String::len))
                        .chain([h.len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let span = ws.iter().sum::<usize>() + 3 * ws.len().saturating_sub(1);
            if title.len() > span {
                *ws.last_mut().expect("group has columns") += title.len() - span;
            }
            col += headers.len();
            widths.push(ws);
        }
        let span = |ws: &[usize]| ws.iter().sum::<usize>() + 3 * ws.len().saturating_sub(1);

        let mut lines = Vec::new();
        let mut l1 = format!("{:<w0$}", self.label);
        let mut l2 = " ".repeat(w0);
        let mut sep = "-".repeat(w0);
        for ((title, headers), ws) in self.groups.iter().zip(&widths) {
            l1.push_str(&format!(" | {:<w$}", title, w = span(ws)));
            let cells: Vec<String> = headers
                .iter()
                .zip(ws)
                .map(|(h, w)| format!("{h:>w$}"))
                .collect();
            l2.push_str(" | ");
            l2.push_str(&cells.join(" | "));
            sep.push_str("-+-");
            sep.push_str(&"-".repeat(span(ws)));
        }
        lines.push(l1);
        lines.push(l2);
        lines.push(sep);
        for (label, cells) in &self.rows {
            let mut line = format!("{label:<w0$}");
            let mut col = 0;
            for ws in &widths {
                let parts: Vec<String> = ws
                    .iter()
                    .enumerate()
                    .map(|(j, w)| format!("{:>w$}", cells.get(col + j).map_or("", String::as_str)))
                    .collect();
                line.push_str(" | ");
                line.push_str(&parts.join(" | "));
                col += ws.len();
            }
            lines.push(line);
        }
        let mut out: String = lines
            .iter()
            .map(|l| format!("{}\n", l.trim_end()))
            .collect();
        out.shrink_to_fit();
        out
    }
}

/// The benchmark report: estimate columns plus the measurement for each
/// benchmark's first input.
pub fn report_table(rows: &[ReportRow]) -> Table {
    Table {
        label: "Function".into(),
        groups: vec![
            (
                "Kernel estimate".into(),
                vec!["AU".into(), "Latency".into()],
            ),
            (
                "Measured".into(),
                vec!["Input".into(), "Cycles".into(), "SW instr".into()],
            ),
        ],
        rows: rows
            .iter()
            .map(|r| {
                let first = r.inputs.first();
                (
                    r.name.clone(),
                    vec![
                        r.area_units.to_string(),
                        r.latency.to_string(),
                        first.map_or(String::new(), |m| m.input.clone()),
                        first.map_or(String::new(), |m| m.cycles.to_string()),
                        first.map_or(String::new(), |m| m.sw_instructions.to_string()),
                    ],
                )
            })
            .collect(),
    }
}

/// Every measured input of every benchmark, one row each.
pub fn detail_table(rows: &[ReportRow]) -> Table {
    Table {
        label: "Function / input".into(),
        groups: vec![("Measured".into(), vec!["Cycles".into(), "SW instr".into()])],
        rows: rows
            .iter()
            .flat_map(|r| {
                r.inputs.iter().map(move |m| {
                    (
                        format!("{} / {}", r.name, m.input),
                        vec![m.cycles.to_string(), m.sw_instructions.to_string()],
                    )
                })
            })
            .collect(),
    }
}

/// Two area/latency column pairs side by side, for comparing two flows.
pub fn comparison_table(left: &str, right: &str, rows: &[(&str, [u64; 4])]) -> Table {
    let pair = || vec!["Area".to_string(), "Latency".to_string()];
    Table {
        label: "Function".into(),
        groups: vec![(left.into(), pair()), (right.into(), pair())],
        rows: rows
            .iter()
            .map(|(n, v)| (n.to_string(), v.iter().map(u64::to_string).collect()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_pads_and_right_aligns() {
        let t = Table {
            label: "F".into(),
            groups: vec![("G".into(), vec!["a".into(), "bb".into()])],
            rows: vec![
                ("row".into(), vec!["1".into(), "22".into()]),
                ("r".into(), vec!["333".into(), "4".into()]),
            ],
        };
        assert_eq!(
            t.render(),
            "F   | G\n    |   a | bb\n----+---------\nrow |   1 | 22\nr   | 333 |  4\n"
        );
    }

    #[test]
    fn long_group_title_widens_last_column() {
        let t = Table {
            label: "F".into(),
            groups: vec![("Long title".into(), vec!["a".into()])],
            rows: vec![("x".into(), vec!["1".into()])],
        };
        assert_eq!(
            t.render(),
            "F | Long title\n  |          a\n--+-----------\nx |          1\n"
        );
    }
}
