use std::path::Path;
use std::process::{Command, Output};

use hwoffload::bench::{detail_table, report_table, ReportRow};
use hwoffload::fuzz::FuzzSummary;

fn hw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwoffload"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8")
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).expect("utf-8")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

#[test]
fn check_exit_codes() {
    assert_eq!(code(&hw(&["check", "collatz"])), 0);
    let bad = hw(&["check", "bad_stack"]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("stack depth"), "{}", stderr(&bad));
    assert_eq!(code(&hw(&["check", "/no/such/file.jir"])), 2);
    assert_eq!(code(&hw(&["frobnicate"])), 2);
    assert_eq!(
        code(&hw(&["--set", "no.such.key=1", "check", "collatz"])),
        2
    );
}

#[test]
fn run_in_software_and_on_the_kernel() {
    let sw = hw(&["run", "--sw", "collatz", "6"]);
    assert_eq!(code(&sw), 0);
    assert!(stdout(&sw).starts_with("value: 8\n"), "{}", stdout(&sw));
    let k = hw(&["run", "--hw", "collatz", "6"]);
    assert_eq!(code(&k), 0);
    let text = stdout(&k);
    assert!(text.starts_with("value: 8\n"), "{text}");
    assert!(text.contains("cycles: "));
}

#[test]
fn rejected_entry_cannot_run_on_hardware() {
    let o = hw(&["run", "--hw", "checked", "3"]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("throw in Checked.validate"),
        "{}",
        stderr(&o)
    );
    assert_eq!(code(&hw(&["run", "--hw", "checked_ok", "3"])), 0);
}

#[test]
fn allocation_charges_one_roundtrip_per_syscall() {
    let o = hw(&["run", "--hw", "--json", "alloc", "5"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).expect("json");
    let n = v["counters"]["syscalls"].as_u64().expect("count");
    assert!(n > 0);
    assert_eq!(v["counters"]["syscall_cycles"].as_u64(), Some(n * 500));
    let slow = hw(&[
        "run",
        "--hw",
        "--json",
        "--set",
        "syscall.roundtrip=7",
        "alloc",
        "5",
    ]);
    let w: serde_json::Value = serde_json::from_str(&stdout(&slow)).expect("json");
    assert_eq!(w["counters"]["syscall_cycles"].as_u64(), Some(n * 7));
}

#[test]
fn bench_json_and_table_carry_the_same_data() {
    let table = hw(&["bench"]);
    assert_eq!(code(&table), 0);
    let json = hw(&["bench", "--json"]);
    let rows: Vec<ReportRow> = serde_json::from_str(&stdout(&json)).expect("records parse back");
    assert_eq!(rows.len(), 4);
    let expected = format!(
        "{}\n{}",
        report_table(&rows).render(),
        detail_table(&rows).render()
    );
    assert_eq!(stdout(&table), expected);
    let again: Vec<ReportRow> =
        serde_json::from_str(&serde_json::to_string(&rows).expect("json")).expect("json");
    assert_eq!(again, rows);
}

#[test]
fn bench_compare_renders_the_published_layout() {
    let dir = tempfile::tempdir().expect("tempdir");
    let csv = dir.path().join("published.csv");
    std::fs::write(
        &csv,
        "Function,Reference flow,Offload flow\n\
         Vector sum,113,507,175,511\n\
         Collatz evaluation,293,278,383,282\n\
         MD5 hash,1675,3463,272,676\n\
         FIR filter,298,183,283,121\n",
    )
    .expect("write csv");
    let o = hw(&["bench", "--compare", csv.to_str().expect("utf-8")]);
    assert_eq!(code(&o), 0);
    let golden =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/published_layout.txt");
    assert_eq!(stdout(&o), std::fs::read_to_string(golden).expect("golden"));
}

#[test]
fn compile_is_byte_identical_and_coalescing_shows_in_the_census() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = |name: &str| dir.path().join(name);
    let run = |d: &Path, extra: &[&str]| {
        let mut args = vec![
            "compile",
            "vector_sum",
            "--entry",
            "Vec.sum16",
            "-o",
            d.to_str().expect("utf-8"),
        ];
        args.extend_from_slice(extra);
        assert_eq!(code(&hw(&args)), 0);
        (
            std::fs::read_to_string(d.join("lowered.jir")).expect("lowered"),
            std::fs::read_to_string(d.join("report.json")).expect("report"),
        )
    };
    let a = run(&out("a"), &[]);
    let b = run(&out("b"), &[]);
    assert_eq!(a, b);
    let c = run(&out("c"), &["--no-coalesce"]);
    assert!(a.0.contains("BUS_BURST"));
    assert!(!c.0.contains("BUS_BURST"));
    let census =
        |r: &str| serde_json::from_str::<serde_json::Value>(r).expect("json")["census"].clone();
    assert_ne!(census(&a.1), census(&c.1));
}

#[test]
fn dse_offloads_the_hot_method_and_is_repeatable() {
    let a = hw(&["dse", "dse_hot", "--steps", "4"]);
    assert_eq!(code(&a), 0);
    let text = stdout(&a);
    assert!(
        text.lines()
            .next()
            .expect("line")
            .contains("accepted: offload Hot.dot16"),
        "{text}"
    );
    assert_eq!(stdout(&hw(&["dse", "dse_hot", "--steps", "4"])), text);
    let zero = stdout(&hw(&["dse", "dse_hot", "--steps", "0"]));
    assert!(zero.starts_with("reconfigurations: 0\n"), "{zero}");
    assert!(!zero.contains("region"));
}

#[test]
fn fuzz_same_seed_gives_the_same_corpus() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("fails");
    let run = |seed: &str| {
        let o = hw(&[
            "fuzz",
            "--json",
            "--seed",
            seed,
            "--count",
            "40",
            "--out",
            out.to_str().expect("utf-8"),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        serde_json::from_str::<FuzzSummary>(&stdout(&o)).expect("summary")
    };
    let a = run("7");
    let b = run("7");
    assert_eq!(a, b);
    assert!(a.ok());
    assert_ne!(run("8").corpus_digest, a.corpus_digest);
    assert!(!out.exists(), "no failures, nothing written");
}

#[test]
fn fuzz_failures_are_written_out_for_reduction() {
    // A one-cycle budget makes every kernel run fall short of the interpreter.
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("fails");
    let o = hw(&[
        "fuzz",
        "--count",
        "2",
        "--set",
        "sim.max_cycles=1",
        "--out",
        out.to_str().expect("utf-8"),
    ]);
    assert_eq!(code(&o), 1);
    for i in 0..2 {
        let prog =
            std::fs::read_to_string(out.join(format!("case-{i}.jir"))).expect("program written");
        assert!(hwoffload::jir::parse_program(&prog).is_ok());
        let meta: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.join(format!("case-{i}.json"))).expect("meta"),
        )
        .expect("json");
        assert_eq!(meta["case"]["program"].as_str(), Some(prog.as_str()));
    }
}
