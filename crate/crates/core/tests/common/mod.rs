//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use tvm_core::{parse_assembly, Program, Thresholds, VmConfig};

pub fn programs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("programs")
}

/// Every corpus program, sorted by file name.
pub fn corpus() -> Vec<(String, Arc<Program>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(programs_dir())
        .expect("programs directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "tvm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).expect("read program");
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let program = parse_assembly(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, Arc::new(program))
        })
        .collect()
}

pub fn program(name: &str) -> Arc<Program> {
    let text =
        std::fs::read_to_string(programs_dir().join(format!("{name}.tvm"))).expect("read program");
    Arc::new(parse_assembly(&text).unwrap_or_else(|e| panic!("{name}: {e}")))
}

/// Thresholds low enough that every tier kicks in on small programs.
pub fn eager() -> VmConfig {
    VmConfig {
        thresholds: Thresholds {
            t1_method_threshold: 2,
            t2_backedge_threshold: 7,
            high_threshold_factor: 3,
        },
        ..VmConfig::default()
    }
}

/// The corpus plus `n` generated programs.
pub fn corpus_and_generated(n: u64) -> Vec<(String, Arc<Program>)> {
    let mut all = corpus();
    let cfg = tvm_core::progen::GenConfig::default();
    for seed in 0..n {
        all.push((
            format!("seed {seed}"),
            Arc::new(tvm_core::progen::generate(seed, &cfg)),
        ));
    }
    all
}
