//! Timing every suite variant under each execution mode.
//!
//! Each (variant, mode) cell gets a fresh VM that runs the composed suite
//! `iterations_total` times; compiled code and profiles carry over between
//! iterations. Warm-up is the first iteration's time and peak is the mean of
//! the last ⌈n/2⌉ iterations. The results document is described in
//! `docs/results-schema.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tvm_core::{ExecMode, Program, Thresholds, Vm, VmConfig};

use crate::error::BenchError;
use crate::stats::{self, Summary};
use crate::suite::SuiteSpec;

pub const SCHEMA: &str = "tvm-bench-results/1";

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Variant manifests. Relative paths resolve against the config file.
    pub manifests: Vec<PathBuf>,
    /// Command-line mode names.
    pub modes: Vec<String>,
    pub iterations_total: usize,
    #[serde(default)]
    pub t1_threshold: Option<u64>,
    #[serde(default)]
    pub t2_threshold: Option<u64>,
    #[serde(default = "default_true")]
    pub inline_cache: bool,
    /// Run cells on separate threads. Only sensible for counter-only runs,
    /// since timings then interfere.
    #[serde(default)]
    pub parallel: bool,
}

impl BenchConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<BenchConfig, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: BenchConfig =
            serde_json::from_str(&text).map_err(|source| BenchError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut config.manifests {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(config)
    }

    pub fn vm_config(&self) -> VmConfig {
        let defaults = Thresholds::default();
        VmConfig {
            thresholds: Thresholds {
                t1_method_threshold: self.t1_threshold.unwrap_or(defaults.t1_method_threshold),
                t2_backedge_threshold: self.t2_threshold.unwrap_or(defaults.t2_backedge_threshold),
                ..defaults
            },
            inline_cache: self.inline_cache,
            ..VmConfig::default()
        }
    }

    fn parsed_modes(&self) -> Result<Vec<ExecMode>, BenchError> {
        if self.modes.is_empty() {
            return Err(BenchError::NoModes);
        }
        Ok(self
            .modes
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_, _>>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: u32,
    pub manifest: PathBuf,
    pub mode: String,
    pub status: Status,
    pub error: Option<String>,
    /// One entry per completed iteration; `iterations_total` long when ok.
    pub series_ns: Vec<u64>,
    pub first_iteration_ns: Option<u64>,
    pub peak_ns: Option<f64>,
    /// Methods in the composed program, drivers included.
    pub methods: usize,
    /// The run's stats document, with counters accumulated over all
    /// iterations.
    pub stats: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    /// Cells that completed.
    pub cells: usize,
    pub first_iteration: Summary,
    pub peak: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub schema: String,
    pub iterations_total: usize,
    pub modes: Vec<String>,
    /// Ordered by variant, then by the configured mode order.
    pub cells: Vec<Cell>,
    pub aggregates: BTreeMap<String, ModeAggregate>,
}

impl BenchResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn cells_for<'a>(&'a self, mode: &'a str) -> impl Iterator<Item = &'a Cell> + 'a {
        self.cells.iter().filter(move |c| c.mode == mode)
    }
}

/// Across-variant statistics of the completed cells of each mode.
pub fn aggregate(cells: &[Cell], modes: &[String]) -> BTreeMap<String, ModeAggregate> {
    modes
        .iter()
        .map(|mode| {
            let ok: Vec<&Cell> = cells
                .iter()
                .filter(|c| &c.mode == mode && c.status == Status::Ok)
                .collect();
            let first: Vec<f64> = ok
                .iter()
                .filter_map(|c| c.first_iteration_ns)
                .map(|x| x as f64)
                .collect();
            let peak: Vec<f64> = ok.iter().filter_map(|c| c.peak_ns).collect();
            (
                mode.clone(),
                ModeAggregate {
                    cells: ok.len(),
                    first_iteration: stats::summarize(&first),
                    peak: stats::summarize(&peak),
                },
            )
        })
        .collect()
}

fn run_cell(
    variant: u32,
    manifest: &Path,
    program: &Arc<Program>,
    mode: ExecMode,
    config: &VmConfig,
    iterations: usize,
) -> Cell {
    let mut vm = Vm::new(program.clone(), mode, config.clone());
    let mut series = Vec::with_capacity(iterations);
    let mut error = None;
    let mut last = Ok(tvm_core::Value::Nil);
    let mut total = 0u128;
    for _ in 0..iterations {
        let start = Instant::now();
        let r = vm.run();
        let ns = start.elapsed().as_nanos();
        total += ns;
        match r {
            Ok(v) => {
                series.push(ns as u64);
                last = Ok(v);
            }
            Err(e) => {
                error = Some(e.to_string());
                last = Err(e);
                break;
            }
        }
    }
    let mut result = vm.result(last, total);
    result.first_iteration_ns = series.first().map(|&x| x as u128);
    let failed = error.is_some();
    Cell {
        variant,
        manifest: manifest.to_path_buf(),
        mode: mode.cli_name().to_string(),
        status: if failed { Status::Failed } else { Status::Ok },
        error,
        first_iteration_ns: series.first().copied(),
        peak_ns: (!failed).then(|| stats::peak(&series)),
        series_ns: series,
        methods: program.methods().len(),
        stats: result.stats_json(),
    }
}

pub fn bench(config: &BenchConfig) -> Result<BenchResult, BenchError> {
    if config.iterations_total < 2 {
        return Err(BenchError::TooFewIterations(config.iterations_total));
    }
    let modes = config.parsed_modes()?;
    let vm_config = config.vm_config();

    let mut jobs = Vec::new();
    for path in &config.manifests {
        let spec = SuiteSpec::read(path)?;
        let program = Arc::new(spec.compose(&spec.load()?));
        for &mode in &modes {
            jobs.push((spec.variant, path.clone(), program.clone(), mode));
        }
    }
    let run = |(variant, path, program, mode): &(u32, PathBuf, Arc<Program>, ExecMode)| {
        run_cell(*variant, path, program, *mode, &vm_config, config.iterations_total)
    };
    let mut cells: Vec<Cell> = if config.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs.iter().map(|j| s.spawn(move || run(j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench cell panicked"))
                .collect()
        })
    } else {
        jobs.iter().map(run).collect()
    };
    let order = |m: &str| config.modes.iter().position(|x| x == m);
    cells.sort_by_key(|c| (c.variant, order(&c.mode)));
    let names: Vec<String> = modes.iter().map(|m| m.cli_name().to_string()).collect();
    Ok(BenchResult {
        schema: SCHEMA.to_string(),
        iterations_total: config.iterations_total,
        aggregates: aggregate(&cells, &names),
        modes: names,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterPair {
    pub baseline: u64,
    pub candidate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub variant: u32,
    /// Candidate over baseline; below 1 means the candidate is faster.
    pub warmup_ratio: Option<f64>,
    pub peak_ratio: Option<f64>,
    pub counters: BTreeMap<String, CounterPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub candidate: String,
    pub variants: Vec<VariantComparison>,
    pub geomean_warmup: Option<f64>,
    pub geomean_peak: Option<f64>,
}

const COMPARED_COUNTERS: [&str; 4] = ["dispatches", "handler_calls", "direct_calls", "indirect_calls"];

/// Per-variant ratios of `candidate` to `baseline`. Variants where either
/// cell failed get no ratios.
pub fn compare(
    results: &BenchResult,
    baseline: ExecMode,
    candidate: ExecMode,
) -> Result<ComparisonReport, BenchError> {
    let (b, c) = (baseline.cli_name(), candidate.cli_name());
    for m in [b, c] {
        if results.cells_for(m).next().is_none() {
            return Err(BenchError::MissingMode(m.to_string()));
        }
    }
    let mut variants = Vec::new();
    for base in results.cells_for(b) {
        let Some(cand) = results.cells_for(c).find(|x| x.variant == base.variant) else {
            continue;
        };
        let both_ok = base.status == Status::Ok && cand.status == Status::Ok;
        let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) if both_ok && x > 0.0 => Some(y / x),
            _ => None,
        };
        let counters = COMPARED_COUNTERS
            .iter()
            .map(|&k| {
                let get = |cell: &Cell| cell.stats["counters"][k].as_u64().unwrap_or(0);
                (
                    k.to_string(),
                    CounterPair {
                        baseline: get(base),
                        candidate: get(cand),
                    },
                )
            })
            .collect();
        variants.push(VariantComparison {
            variant: base.variant,
            warmup_ratio: ratio(
                base.first_iteration_ns.map(|x| x as f64),
                cand.first_iteration_ns.map(|x| x as f64),
            ),
            peak_ratio: ratio(base.peak_ns, cand.peak_ns),
            counters,
        });
    }
    let warm: Vec<f64> = variants.iter().filter_map(|v| v.warmup_ratio).collect();
    let peak: Vec<f64> = variants.iter().filter_map(|v| v.peak_ratio).collect();
    Ok(ComparisonReport {
        baseline: b.to_string(),
        candidate: c.to_string(),
        geomean_warmup: stats::geomean(&warm),
        geomean_peak: stats::geomean(&peak),
        variants,
    })
}
