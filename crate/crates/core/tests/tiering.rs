//! Profiler thresholds, the tier switcher, dispatch elimination and inline
//! caching, checked through the VM's counters.

mod common;

use std::sync::Arc;

use tvm_core::inline_cache::CacheState;
use tvm_core::{parse_assembly, ExecMode, Program, Thresholds, Value, Vm, VmConfig};

/// A single loop whose back edge executes exactly `n` times.
fn counted_loop(n: i64) -> Arc<Program> {
    let src = format!(
        "
.method main 0 2
  CONST_INT 0
  STORE_LOCAL 0
  CONST_INT 0
  STORE_LOCAL 1
loop:
  LOAD_LOCAL 0
  CONST_INT {n}
  LT
  JUMP_IF_FALSE done
  LOAD_LOCAL 1
  LOAD_LOCAL 0
  ADD
  STORE_LOCAL 1
  LOAD_LOCAL 0
  CONST_INT 1
  ADD
  STORE_LOCAL 0
  JUMP loop
done:
  LOAD_LOCAL 1
  RET
.end
"
    );
    Arc::new(parse_assembly(&src).unwrap())
}

const BACK_EDGE_PC: usize = 16;

fn with_t2(t2: u64) -> VmConfig {
    VmConfig {
        thresholds: Thresholds {
            t2_backedge_threshold: t2,
            ..Thresholds::default()
        },
        ..VmConfig::default()
    }
}

fn run_vm(program: &Arc<Program>, mode: ExecMode, config: VmConfig) -> (Vm, Result<Value, tvm_core::VmError>) {
    let mut vm = Vm::new(program.clone(), mode, config);
    let r = vm.run();
    (vm, r)
}

#[test]
fn no_transition_below_threshold() {
    let p = counted_loop(999);
    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    assert_eq!(vm.profile().backedge_count(p.entry(), BACK_EDGE_PC), 999);
    assert!(vm.transitions().is_empty());
    assert!(vm.recordings().is_empty());
}

#[test]
fn transition_fires_on_the_thousandth_back_edge() {
    let p = counted_loop(1000);
    let (vm, r) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    assert_eq!(r.unwrap(), Value::Int(999 * 1000 / 2));
    let events = vm.transitions();
    assert_eq!(events.len(), 1);
    assert_eq!((events[0].pc, events[0].count), (BACK_EDGE_PC, 1000));
}

#[test]
fn transition_fires_once_per_anchor() {
    let p = counted_loop(20_000);
    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    assert_eq!(vm.transitions().len(), 1);
    assert_eq!(vm.transitions()[0].count, 1000);
    assert_eq!(vm.recordings()[0].count, 1000);
    assert_eq!(vm.profile().transitions_fired.len(), 1);
}

#[test]
fn tripled_threshold_fires_on_the_3000th() {
    let p = counted_loop(20_000);
    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, with_t2(3000));
    assert_eq!(vm.transitions().len(), 1);
    assert_eq!(vm.transitions()[0].count, 3000);

    let (vm, _) = run_vm(&p, ExecMode::Tier2HighThreshold, VmConfig::default());
    assert!(vm.transitions().is_empty());
    assert_eq!(vm.recordings()[0].count, 3000);
    let (vm, _) = run_vm(&p, ExecMode::Tier2Only, VmConfig::default());
    assert_eq!(vm.recordings()[0].count, 1000);
}

#[test]
fn every_anchor_transitions_at_exactly_the_threshold() {
    for (name, p) in common::corpus() {
        let (vm, _) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
        let mut seen = std::collections::HashSet::new();
        for e in vm.transitions() {
            assert_eq!(e.count, 1000, "{name}");
            assert!(seen.insert((e.method, e.pc)), "{name}: anchor fired twice");
        }
    }
}

#[test]
fn switcher_preserves_the_frame() {
    for (name, p) in common::corpus() {
        let (vm, _) = run_vm(&p, ExecMode::TwoLevel, common::eager());
        for e in vm.transitions() {
            assert_eq!(e.resumed.as_ref(), Some(&e.raised), "{name}");
        }
    }
}

#[test]
fn guard_exits_reach_cached_loop_code_without_refiring() {
    let p = common::program("guard_flip");
    let (vm, r) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    let reference = tvm_core::run(p.clone(), ExecMode::InterpOnly, VmConfig::default());
    assert_eq!(&r.unwrap(), reference.value.as_ref().unwrap());
    assert_eq!(vm.transitions().len(), 1);
    assert_eq!(vm.recordings().len(), 1);
    assert!(vm.exits_taken() > 1000);
    // Entered repeatedly through the heavyweight interpreter's header check.
    assert!(vm.counters().loop_iterations > 0);
}

#[test]
fn mode_wiring_for_the_example_program() {
    let p = common::program("strange_add");
    let calc = p.lookup("calc").unwrap();
    let add = p.lookup("strange_add").unwrap();

    let (vm, _) = run_vm(&p, ExecMode::Tier2Only, VmConfig::default());
    assert_eq!(vm.code_cache().threaded_count(), 0);
    assert_eq!(vm.code_cache().loops().count(), 1);

    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    assert!(vm.code_cache().threaded(add).is_some());
    assert_eq!(vm.transitions().len(), 1);
    assert_eq!(vm.transitions()[0].method, calc);
    assert_eq!(vm.code_cache().loops().count(), 1);

    // `initialization` runs once, so it only gets threaded code when the
    // method threshold is 1.
    let init = p.lookup("initialization").unwrap();
    let eager_t1 = VmConfig {
        thresholds: Thresholds {
            t1_method_threshold: 1,
            ..Thresholds::default()
        },
        ..VmConfig::default()
    };
    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, eager_t1);
    assert!(vm.code_cache().threaded(init).is_some());
    assert!(vm.code_cache().threaded(add).is_some());

    let (vm, _) = run_vm(&p, ExecMode::Tier1Only, VmConfig::default());
    assert_eq!(vm.code_cache().loops().count(), 0);
    assert!(vm.transitions().is_empty());

    let (vm, _) = run_vm(&p, ExecMode::InterpOnly, VmConfig::default());
    assert_eq!(vm.code_cache().threaded_count(), 0);
    assert_eq!(vm.code_cache().loops().count(), 0);
}

#[test]
fn tier1_trace_share_is_strictly_between_zero_and_one() {
    let p = common::program("strange_add");
    let (vm, _) = run_vm(&p, ExecMode::TwoLevel, VmConfig::default());
    let t = vm.trace_stats();
    assert!(t.tier1.count > 0 && t.tier2.count > 0);
}

#[test]
fn halt_inside_recorded_iteration_aborts_and_blacklists() {
    let src = "
.method main 0 1
  CONST_INT 0
  STORE_LOCAL 0
loop:
  LOAD_LOCAL 0
  CONST_INT 1
  ADD
  STORE_LOCAL 0
  LOAD_LOCAL 0
  CONST_INT 1001
  EQ
  JUMP_IF_FALSE cont
  LOAD_LOCAL 0
  HALT
cont:
  JUMP loop
.end
";
    let p = Arc::new(parse_assembly(src).unwrap());
    for mode in [ExecMode::Tier2Only, ExecMode::TwoLevel] {
        let (vm, r) = run_vm(&p, mode, VmConfig::default());
        assert_eq!(r.unwrap(), Value::Int(1001));
        assert_eq!(vm.recordings().len(), 1);
        assert!(vm.recordings()[0].aborted.is_some());
        assert!(vm.code_cache().is_blacklisted(p.entry(), 2));
        assert_eq!(vm.code_cache().loops().count(), 0);
    }
}

#[test]
fn aborted_anchor_retries_after_twice_the_threshold() {
    // The callee's loop makes every recording of the outer loop abort.
    let src = "
.method main 0 2
  CONST_INT 0
  STORE_LOCAL 0
  CONST_INT 0
  STORE_LOCAL 1
loop:
  LOAD_LOCAL 0
  CONST_INT 8000
  LT
  JUMP_IF_FALSE done
  LOAD_LOCAL 1
  LOAD_LOCAL 0
  CONST_INT 3
  MOD
  CONST_INT 1
  ADD
  CALL tri 1
  ADD
  STORE_LOCAL 1
  LOAD_LOCAL 0
  CONST_INT 1
  ADD
  STORE_LOCAL 0
  JUMP loop
done:
  LOAD_LOCAL 1
  RET
.end

.method tri 1 2
  CONST_INT 0
  STORE_LOCAL 1
l:
  LOAD_LOCAL 0
  CONST_INT 0
  LE
  JUMP_IF_TRUE d
  LOAD_LOCAL 1
  LOAD_LOCAL 0
  ADD
  STORE_LOCAL 1
  LOAD_LOCAL 0
  CONST_INT 1
  SUB
  STORE_LOCAL 0
  JUMP l
d:
  LOAD_LOCAL 1
  RET
.end
";
    let p = Arc::new(parse_assembly(src).unwrap());
    let (vm, r) = run_vm(&p, ExecMode::Tier2Only, VmConfig::default());
    let reference = tvm_core::run(p.clone(), ExecMode::InterpOnly, VmConfig::default());
    assert_eq!(&r.unwrap(), reference.value.as_ref().unwrap());
    let outer: Vec<u64> = vm
        .recordings()
        .iter()
        .filter(|e| e.method == p.entry())
        .inspect(|e| assert!(e.aborted.is_some()))
        .map(|e| e.count)
        .collect();
    assert_eq!(outer, vec![1000, 3000, 5000, 7000]);
}

#[test]
fn threaded_code_never_dispatches() {
    let eager_t1 = VmConfig {
        thresholds: Thresholds {
            t1_method_threshold: 1,
            ..Thresholds::default()
        },
        ..VmConfig::default()
    };
    for (name, p) in common::corpus_and_generated(100) {
        let (vm, _) = run_vm(&p, ExecMode::Tier1Only, eager_t1.clone());
        let (interp, _) = run_vm(&p, ExecMode::InterpOnly, VmConfig::default());
        assert_eq!(vm.code_cache().threaded_count(), vm.profile().method_entry.iter().filter(|&&c| c > 0).count(), "{name}");
        assert_eq!(vm.counters().dispatches, 0, "{name}");
        assert_eq!(vm.counters().handler_calls, interp.counters().handler_calls, "{name}");
    }
}

#[test]
fn warm_method_call_has_zero_dispatch_delta() {
    let p = common::program("strange_add");
    let add = p.lookup("strange_add").unwrap();
    let args = [Value::Int(84), Value::Int(10000)];
    let mut threaded = Vm::new(p.clone(), ExecMode::Tier1Only, VmConfig::default());
    for _ in 0..10 {
        threaded.call(add, &args).unwrap();
    }
    assert!(threaded.code_cache().threaded(add).is_some());
    let before = threaded.counters();
    assert_eq!(threaded.call(add, &args).unwrap(), Value::Int(10084));
    let after = threaded.counters();

    let mut interp = Vm::new(p.clone(), ExecMode::InterpOnly, VmConfig::default());
    let i0 = interp.counters();
    interp.call(add, &args).unwrap();
    let i1 = interp.counters();

    assert_eq!(after.dispatches - before.dispatches, 0);
    assert_eq!(after.handler_calls - before.handler_calls, i1.handler_calls - i0.handler_calls);
    assert_eq!(i1.handler_calls - i0.handler_calls, 6);
}

#[test]
fn interpreter_dispatch_count_is_instruction_count() {
    let p = common::program("straight_line");
    let (vm, r) = run_vm(&p, ExecMode::InterpOnly, VmConfig::default());
    assert_eq!(r.unwrap(), Value::Int(37));
    // Eight instructions, seven of which are not control flow.
    assert_eq!(vm.counters().dispatches, 8);
    assert_eq!(vm.counters().handler_calls, 7);
}

fn fib_program() -> Arc<Program> {
    common::program("fib")
}

#[test]
fn warm_fib_sites_dispatch_directly() {
    let p = fib_program();
    let fib = p.lookup("fib").unwrap();
    let mut vm = Vm::new(p.clone(), ExecMode::Tier1Only, VmConfig::default());
    assert_eq!(vm.call(fib, &[Value::Int(15)]).unwrap(), Value::Int(610));
    let t1 = vm.config().thresholds.t1_method_threshold;
    let sites: Vec<_> = vm.inline_caches().slots().iter().filter(|s| s.site.method == fib).cloned().collect();
    assert_eq!(sites.len(), 2);
    for s in &sites {
        assert_eq!(s.state, CacheState::Cached(fib));
        assert!(s.indirect <= t1 + 1, "{s:?}");
        assert_eq!(s.misses, 0);
    }
    let before = vm.counters();
    assert_eq!(vm.call(fib, &[Value::Int(15)]).unwrap(), Value::Int(610));
    let after = vm.counters();
    assert_eq!(after.indirect_calls, before.indirect_calls);
    assert!(after.direct_calls > before.direct_calls);
}

#[test]
fn disabling_the_cache_changes_no_result() {
    for (name, p) in common::corpus() {
        for mode in [ExecMode::Tier1Only, ExecMode::TwoLevel] {
            let on = tvm_core::run(p.clone(), mode, VmConfig::default());
            let off = tvm_core::run(p.clone(), mode, VmConfig { inline_cache: false, ..VmConfig::default() });
            assert!(on.same_observable(&off), "{name} {mode}");
            assert_eq!(off.counters.direct_calls, 0, "{name} {mode}");
        }
    }
}

#[test]
fn cold_callee_always_takes_the_slow_path() {
    let p = common::program("strange_add");
    let (vm, _) = run_vm(&p, ExecMode::Tier1Only, VmConfig::default());
    let init = p.lookup("initialization").unwrap();
    assert!(vm.code_cache().threaded(init).is_none());
    assert_eq!(vm.counters().direct_calls, 0);
}

#[test]
fn polymorphic_site_keeps_its_first_callee() {
    let p = common::program("polymorphic");
    let inc = p.lookup("inc").unwrap();
    let (vm, _) = run_vm(&p, ExecMode::Tier1Only, VmConfig::default());
    let slot = vm
        .inline_caches()
        .slots()
        .iter()
        .find(|s| s.site.method == p.entry())
        .expect("dynamic site");
    assert_eq!(slot.state, CacheState::Cached(inc));
    assert_eq!(slot.misses, 1500);
    assert_eq!(slot.hits, 1499);
}

#[test]
fn stats_json_has_the_documented_shape() {
    let p = common::program("fib");
    let r = tvm_core::run(p, ExecMode::TwoLevel, VmConfig::default());
    let j = r.stats_json();
    for key in ["result", "timings", "counters", "traces", "inline_cache"] {
        assert!(j.get(key).is_some(), "{key}");
    }
    for key in ["dispatches", "handler_calls", "direct_calls", "indirect_calls"] {
        assert!(j["counters"][key].is_u64(), "{key}");
    }
    assert!(j["timings"]["total_ns"].is_u64());
    assert!(j["traces"]["tier1"]["count"].is_u64());
    assert!(j["traces"]["tier2"]["total_ops"].is_u64());
    let site = &j["inline_cache"][0];
    assert!(site["site"].is_string() && site["hits"].is_u64() && site["misses"].is_u64());
}
