//! Property tests over generated programs, configs and workload traces.

use std::panic::{catch_unwind, AssertUnwindSafe};

use hwoffload::accel::{parse_workload, run_dse, Decision};
use hwoffload::analysis::analyze;
use hwoffload::config::RunConfig;
use hwoffload::cosim::compile;
use hwoffload::fixtures;
use hwoffload::fuzz::{self, FuzzCase};
use hwoffload::hwmodel::{estimate_area, NodeOp, ScheduledKernel};
use hwoffload::jir::{interpret, parse_program, validate, Instr, Program};
use proptest::prelude::*;

const FUEL: u64 = 200_000;

fn program(c: &FuzzCase) -> Program {
    parse_program(&c.program).expect("generated programs parse")
}

fn cases() -> impl Strategy<Value = FuzzCase> {
    (any::<u64>(), 0u64..1 << 20).prop_map(|(seed, i)| fuzz::case(seed, i))
}

/// Inserts `lines` at the top of the entry method's body.
fn prepend_to_entry(text: &str, lines: &[&str]) -> String {
    let mut out = Vec::new();
    let mut done = false;
    for l in text.lines() {
        out.push(l.to_string());
        if !done && l.contains("method static run(") {
            out.extend(lines.iter().map(|s| format!("    {s}")));
            done = true;
        }
    }
    assert!(done, "entry method present");
    out.join("\n") + "\n"
}

fn check_schedule(k: &ScheduledKernel) -> Result<(), String> {
    for (mi, m) in k.graph.methods.iter().enumerate() {
        for (bi, b) in m.blocks.iter().enumerate() {
            let s = k.block(mi, bi);
            for (ni, n) in b.nodes.iter().enumerate() {
                for p in n.preds() {
                    if s.start[ni] < s.finish[p as usize] {
                        return Err(format!(
                            "{} block {bi}: node {ni} starts before {p} finishes",
                            m.name
                        ));
                    }
                }
            }
            for unit in [NodeOp::is_bus as fn(&NodeOp) -> bool, |o: &NodeOp| {
                matches!(o, NodeOp::Syscall(_))
            }] {
                let mut spans: Vec<(u32, u32)> = b
                    .nodes
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| unit(&n.op))
                    .map(|(i, _)| (s.start[i], s.finish[i]))
                    .collect();
                spans.sort();
                if spans.windows(2).any(|w| w[1].0 < w[0].1) {
                    return Err(format!(
                        "{} block {bi}: overlapping port use {spans:?}",
                        m.name
                    ));
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interpreter_is_deterministic_and_keeps_no_state_between_runs(c in cases()) {
        let p = program(&c);
        let a = interpret(&p, &c.args, FUEL);
        let b = interpret(&p, &c.args, FUEL);
        prop_assert_eq!(&a, &b);
        let fresh = program(&c);
        prop_assert_eq!(a, interpret(&fresh, &c.args, FUEL));
    }

    #[test]
    fn validated_mutants_never_break_the_interpreter(c in cases(), picks in prop::collection::vec((any::<prop::sample::Index>(), 0u8..3), 1..4)) {
        let mut lines: Vec<String> = c.program.lines().map(String::from).collect();
        for (ix, kind) in picks {
            let i = ix.index(lines.len());
            match kind {
                0 => { lines.remove(i); }
                1 => { let l = lines[i].clone(); lines.insert(i, l); }
                _ => { let j = (i + 1).min(lines.len() - 1); lines.swap(i, j); }
            }
        }
        let text = lines.join("\n");
        let Ok(p) = parse_program(&text) else { return Ok(()) };
        if !validate(&p).is_clean() {
            return Ok(());
        }
        let r = catch_unwind(AssertUnwindSafe(|| interpret(&p, &c.args, FUEL)));
        prop_assert!(r.is_ok(), "interpreter panicked on a validated program:\n{}", text);
    }

    #[test]
    fn coalescing_never_changes_results(c in cases()) {
        let p = program(&c);
        let on = RunConfig::default();
        let mut off = RunConfig::default();
        off.transform.coalesce = false;
        let a = compile(&p, &fuzz::entry(), &on).expect("compiles").run(&p, &c.args, &on).expect("runs");
        let b = compile(&p, &fuzz::entry(), &off).expect("compiles").run(&p, &c.args, &off).expect("runs");
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.trap.map(|t| t.kind), b.trap.map(|t| t.kind));
        prop_assert_eq!(a.heap, b.heap);
        prop_assert!(a.counters.bus_transactions <= b.counters.bus_transactions);
    }

    #[test]
    fn slower_bus_or_channel_never_speeds_up_a_run(c in cases(), bus in 0u64..20, trip in 0u64..2000) {
        let p = program(&c);
        let base = RunConfig::default();
        let k = compile(&p, &fuzz::entry(), &base).expect("compiles");
        let r0 = k.run(&p, &c.args, &base).expect("runs");
        let mut slow = base.clone();
        slow.sim.bus.base += bus;
        slow.sim.channel.roundtrip += trip;
        slow.sim.max_cycles = u64::MAX;
        let r1 = k.run(&p, &c.args, &slow).expect("runs");
        prop_assert_eq!(r0.value, r1.value);
        prop_assert_eq!(r0.trap.map(|t| t.kind), r1.trap.map(|t| t.kind));
        prop_assert!(r1.total_cycles >= r0.total_cycles);
        prop_assert_eq!(r1.total_cycles, r1.counters.total());
    }

    #[test]
    fn schedules_respect_dependences_and_port_occupancy(c in cases()) {
        let p = program(&c);
        let k = compile(&p, &fuzz::entry(), &RunConfig::default()).expect("compiles");
        prop_assert_eq!(check_schedule(&k.scheduled), Ok(()));
    }

    #[test]
    fn adding_an_allocation_never_shrinks_a_target_set(c in cases(), cls in prop::sample::select(vec!["Base", "Sub1", "Sub2"])) {
        let before = analyze(&program(&c));
        let grown = parse_program(&prepend_to_entry(&c.program, &[&format!("new {cls}"), "pop"])).expect("parses");
        let after = analyze(&grown);
        for (site, v) in &before.targets.sites {
            // The two inserted ops shift callsite indices in the entry method.
            let mut moved = site.clone();
            if moved.method == fuzz::entry() {
                moved.index += 2;
            }
            let w = after.targets.sites.get(&moved).expect("site survives");
            prop_assert!(v.targets.iter().all(|t| w.targets.contains(t)), "{:?}", site);
        }
    }

    #[test]
    fn wider_target_sets_never_cost_less_area(c in cases(), cls in prop::sample::select(vec!["Base", "Sub1", "Sub2"])) {
        // Same instruction shape on both sides; only the instantiated set differs.
        let cfg = RunConfig::default();
        let narrow = parse_program(&prepend_to_entry(&c.program, &["new Main", "pop"])).expect("parses");
        let wide = parse_program(&prepend_to_entry(&c.program, &[&format!("new {cls}"), "pop"])).expect("parses");
        let area = |p: &Program| {
            let k = compile(p, &fuzz::entry(), &cfg).expect("compiles");
            estimate_area(&k.scheduled, &cfg.cost, &k.lowered.dispatch).total
        };
        prop_assert!(area(&narrow) <= area(&wide));
    }

    #[test]
    fn programs_without_throw_have_no_rejected_methods(c in cases()) {
        let p = program(&c);
        prop_assert!(!p.methods().any(|(_, m)| m.ops().any(|i| matches!(i, Instr::Throw))));
        let a = analyze(&p);
        prop_assert!(a.report.verdicts.values().all(|v| !v.is_rejected()));
    }

    #[test]
    fn observed_dispatch_targets_are_statically_predicted(c in cases()) {
        fuzz::check_case(&c, &RunConfig::default()).map_err(TestCaseError::fail)?;
    }
}

fn trace_line() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => Just("Hot.dot16 @va @vb".to_string()),
        1 => prop::collection::vec(-50i32..50, 16..18)
            .prop_map(|v| format!("Hot.dot16 [{}] @vb", v.iter().map(i32::to_string).collect::<Vec<_>>().join(","))),
        2 => Just("Stats.first @vb".to_string()),
        1 => (-5i32..5).prop_map(|x| format!("Cold.bump {x}")),
        1 => (-3i32..3).prop_map(|x| format!("Risky.check {x}")),
    ]
}

fn workload_text(calls: &[String]) -> String {
    let header: Vec<&str> = fixtures::DSE_HOT_TRACE
        .lines()
        .filter(|l| l.starts_with("data") || l.starts_with("locale"))
        .collect();
    format!("{}\n{}\n", header.join("\n"), calls.join("\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dse_keeps_capacity_monotone_objectives_and_results(
        calls in prop::collection::vec(trace_line(), 1..40),
        capacity in 200u64..6000,
        window in 1u64..8,
        steps in 0u64..6,
    ) {
        let p = parse_program(fixtures::DSE_HOT).expect("parses");
        let w = parse_workload(&workload_text(&calls), &p).expect("trace parses");
        let mut cfg = RunConfig::default();
        cfg.platform.region_capacity = capacity;
        cfg.dse.window = Some(window);
        // Err would include a kernel/interpreter mismatch from the monitor.
        let o = run_dse(&p, &w, &cfg, steps).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for u in &o.region_usage {
            prop_assert!(u.values().all(|&x| x <= capacity));
        }
        for h in &o.history {
            if h.decision == Decision::Accepted {
                prop_assert!(h.objective_after <= h.objective_before);
            }
        }
        let again = run_dse(&p, &w, &cfg, steps).expect("runs");
        prop_assert_eq!(&o.history, &again.history);
        prop_assert_eq!(o.state.deployment, again.state.deployment);
    }
}

#[test]
fn some_single_line_mutants_still_validate() {
    // Keeps the mutant property from passing vacuously.
    let c = fuzz::case(3, 0);
    let lines: Vec<&str> = c.program.lines().collect();
    let clean = (0..lines.len())
        .filter(|&i| {
            let mut l = lines.clone();
            l.remove(i);
            parse_program(&l.join("\n")).is_ok_and(|p| validate(&p).is_clean())
        })
        .count();
    assert!(clean > 0);
}
