//! End-to-end checks of the offload flow on the shipped benchmarks.

use hwoffload::bench::{benchmarks, fixture_program, md5_args, MD5_DIGESTS, MD5_VECTORS};
use hwoffload::config::RunConfig;
use hwoffload::cosim::{compile, run_offloaded};
use hwoffload::fixtures::{self, md5_hex};
use hwoffload::hwmodel::estimate_latency;
use hwoffload::jir::{
    array_in_image, interpret_method, prepare, ArgValue, QualName, DEFAULT_HEAP_WORDS,
};
use md5::{Digest, Md5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn no_coalesce() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.transform.coalesce = false;
    cfg
}

fn reference_md5(msg: &str) -> String {
    Md5::digest(msg.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn md5_kernel_matches_an_independent_implementation() {
    let p = fixture_program("md5");
    let q = QualName::new("Md5", "digest");
    let cfg = RunConfig::default();
    for ((_, msg), published) in MD5_VECTORS.iter().zip(MD5_DIGESTS) {
        assert_eq!(reference_md5(msg), published);
        let args = md5_args(msg);
        let (_, handles) =
            prepare(&p, &q, &args, cfg.sim.host_fuel, DEFAULT_HEAP_WORDS).expect("args fit");
        let hw = run_offloaded(&p, &q, &args, &cfg).expect("runs");
        let sw = interpret_method(&p, &q, &args, cfg.sim.host_fuel).expect("runs");
        let out = array_in_image(&hw.heap, handles[2]).expect("output array");
        assert_eq!(md5_hex(out), published, "kernel digest of {msg:?}");
        assert_eq!(
            md5_hex(array_in_image(&sw.heap, handles[2]).expect("output array")),
            published
        );
    }
}

#[test]
fn md5_over_longer_messages_matches_too() {
    let p = fixture_program("md5");
    let q = QualName::new("Md5", "digest");
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for len in [55, 56, 63, 64, 65, 119, 200] {
        let msg: String = (0..len)
            .map(|_| rng.gen_range(b'a'..=b'z') as char)
            .collect();
        let args = md5_args(&msg);
        let (_, handles) =
            prepare(&p, &q, &args, cfg.sim.host_fuel, DEFAULT_HEAP_WORDS).expect("args fit");
        let hw = run_offloaded(&p, &q, &args, &cfg).expect("runs");
        assert_eq!(
            md5_hex(array_in_image(&hw.heap, handles[2]).expect("out")),
            reference_md5(&msg),
            "len {len}"
        );
    }
}

#[test]
fn fir_kernel_matches_a_direct_convolution() {
    let p = fixture_program("fir");
    let q = QualName::new("Fir", "run");
    let (x, h) = fixtures::fir_inputs();
    let args = vec![
        ArgValue::Array(x.clone()),
        ArgValue::Array(h.clone()),
        ArgValue::Array(vec![0; 64]),
    ];
    let cfg = RunConfig::default();
    let (_, handles) =
        prepare(&p, &q, &args, cfg.sim.host_fuel, DEFAULT_HEAP_WORDS).expect("args fit");
    let hw = run_offloaded(&p, &q, &args, &cfg).expect("runs");
    let y = array_in_image(&hw.heap, handles[2]).expect("output");
    let expected: Vec<i32> = (0..64)
        .map(|n| {
            (0..8)
                .map(|k| h[k].wrapping_mul(x[n + 7 - k]))
                .fold(0i32, i32::wrapping_add)
        })
        .collect();
    assert_eq!(y, &expected[..]);
}

#[test]
fn every_benchmark_agrees_with_the_interpreter_with_and_without_coalescing() {
    for cfg in [RunConfig::default(), no_coalesce()] {
        for b in benchmarks() {
            let p = fixture_program(b.fixture);
            for input in &b.inputs {
                let hw = run_offloaded(&p, &b.entry, &input.args, &cfg).expect("runs");
                let sw =
                    interpret_method(&p, &b.entry, &input.args, cfg.sim.host_fuel).expect("runs");
                assert_eq!(hw.value, sw.value, "{} {}", b.name, input.name);
                assert_eq!(hw.heap, sw.heap, "{} {}", b.name, input.name);
                assert!(hw.trap.is_none() && sw.trap.is_none());
            }
        }
    }
}

#[test]
fn lowered_benchmarks_contain_no_source_heap_or_dispatch_opcodes() {
    for b in benchmarks() {
        let p = fixture_program(b.fixture);
        let c = compile(&p, &b.entry, &RunConfig::default()).expect("compiles");
        assert_eq!(
            c.lowered.forbidden_opcodes(),
            Vec::<String>::new(),
            "{}",
            b.name
        );
    }
}

#[test]
fn static_trip_kernels_are_cycle_exact_on_random_inputs() {
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vec_p = fixture_program("vector_sum");
    let vec_q = QualName::new("Vec", "sum16");
    let fir_p = fixture_program("fir");
    let fir_q = QualName::new("Fir", "run");
    for (p, q) in [(&vec_p, &vec_q), (&fir_p, &fir_q)] {
        let c = compile(p, q, &cfg).expect("compiles");
        let exact = estimate_latency(&c.scheduled, &cfg.sim.bus, &cfg.sim.channel)
            .exact()
            .expect("static trip count");
        for _ in 0..100 {
            let extra = rng.gen_range(0..4);
            let mut arr = |n: usize| ArgValue::Array((0..n).map(|_| rng.gen()).collect());
            let args = if q.class == "Vec" {
                vec![arr(16 + extra)]
            } else {
                vec![arr(71), arr(8), arr(64)]
            };
            let r = c.run(p, &args, &cfg).expect("runs");
            assert!(r.trap.is_none());
            assert_eq!(r.total_cycles, exact, "{q}");
        }
    }
}

#[test]
fn vector_sum_bus_traffic_is_one_plus_n_without_coalescing() {
    let cfg = no_coalesce();
    let p = fixture_program("vector_sum");
    for (q, n) in [
        (QualName::new("Vec", "sum"), 9usize),
        (QualName::new("Vec", "sum16"), 16),
    ] {
        let args = [ArgValue::Array((1..=n as i32).collect())];
        let off = run_offloaded(&p, &q, &args, &cfg).expect("runs");
        assert_eq!(off.counters.bus_transactions, 1 + n as u64);
        assert_eq!(
            off.counters.bus_cycles,
            off.counters.bus_transactions * (cfg.sim.bus.base + cfg.sim.bus.per_beat)
        );
        let on = run_offloaded(&p, &q, &args, &RunConfig::default()).expect("runs");
        assert_eq!(on.value, off.value);
        assert!(on.counters.bus_transactions <= off.counters.bus_transactions);
    }
}

#[test]
fn repeated_simulation_is_bit_identical() {
    let cfg = RunConfig::default();
    for b in benchmarks() {
        let p = fixture_program(b.fixture);
        let c = compile(&p, &b.entry, &cfg).expect("compiles");
        let first = c.run(&p, &b.inputs[0].args, &cfg).expect("runs");
        for _ in 0..10 {
            assert_eq!(
                c.run(&p, &b.inputs[0].args, &cfg).expect("runs"),
                first,
                "{}",
                b.name
            );
        }
    }
}

#[test]
fn compile_output_is_byte_identical_across_runs() {
    let cfg = RunConfig::default();
    for b in benchmarks() {
        let p = fixture_program(b.fixture);
        let one = compile(&p, &b.entry, &cfg).expect("compiles");
        let two = compile(&p, &b.entry, &cfg).expect("compiles");
        assert_eq!(one.lowered.to_text(), two.lowered.to_text());
        assert_eq!(
            serde_json::to_string(&one.report(&cfg)).expect("json"),
            serde_json::to_string(&two.report(&cfg)).expect("json")
        );
    }
}
