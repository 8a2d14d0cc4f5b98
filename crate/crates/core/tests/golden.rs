//! Golden text outputs. Derived goldens are regenerated with
//! `UPDATE_GOLDEN=1 cargo test --test golden`; the published-layout file is
//! hand-written and never regenerated.

use std::path::PathBuf;

use hwoffload::bench::{comparison_table, detail_table, fixture_program, report_table, run_bench};
use hwoffload::config::RunConfig;
use hwoffload::cosim::{compile, run_offloaded};
use hwoffload::jir::{ArgValue, QualName};

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn golden(name: &str, actual: &str) {
    let p = path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&p, actual).expect("golden written");
        return;
    }
    let expected = std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    assert_eq!(actual, expected, "{name} differs from its golden");
}

pub const PUBLISHED: [(&str, [u64; 4]); 4] = [
    ("Vector sum", [113, 507, 175, 511]),
    ("Collatz evaluation", [293, 278, 383, 282]),
    ("MD5 hash", [1675, 3463, 272, 676]),
    ("FIR filter", [298, 183, 283, 121]),
];

#[test]
fn published_numbers_render_in_the_documented_layout() {
    let text = comparison_table("Reference flow", "Offload flow", &PUBLISHED).render();
    let expected = std::fs::read_to_string(path("published_layout.txt")).expect("layout golden");
    assert_eq!(text, expected);
}

#[test]
fn bench_tables_match_goldens() {
    let rows = run_bench(&RunConfig::default()).expect("bench runs");
    assert_eq!(rows.len(), 4);
    golden("bench_report.txt", &report_table(&rows).render());
    golden("bench_detail.txt", &detail_table(&rows).render());
}

#[test]
fn vector_sum_compile_output_matches_golden() {
    let cfg = RunConfig::default();
    let p = fixture_program("vector_sum");
    let c = compile(&p, &QualName::new("Vec", "sum16"), &cfg).expect("compiles");
    golden("vector_sum16.lowered.jir", &c.lowered.to_text());
    golden(
        "vector_sum16.report.json",
        &(serde_json::to_string_pretty(&c.report(&cfg)).expect("json") + "\n"),
    );
}

#[test]
fn tiny_kernel_trace_matches_golden() {
    let mut cfg = RunConfig::default();
    cfg.transform.coalesce = false;
    cfg.sim.trace = true;
    let p = fixture_program("vector_sum");
    let r = run_offloaded(
        &p,
        &QualName::new("Vec", "sum"),
        &[ArgValue::Array(vec![1, 2, 3, 4])],
        &cfg,
    )
    .expect("runs");
    golden("vector_sum4.trace", &r.trace_text());
}
