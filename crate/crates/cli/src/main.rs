//! `tvm`: run programs, synthesize benchmark suites and benchmark them.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tvm_bench::synth::{variant_file_name, TuneOptions};
use tvm_bench::{bench, make_variants, tune_iterations, BenchConfig, SuiteSpec};
use tvm_core::{parse_assembly, ExecMode, Thresholds, Vm, VmConfig};

#[derive(Parser)]
#[command(name = "tvm", version, about = "A tiered VM for a small stack language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an assembly program and print its output and result.
    Run(RunArgs),
    /// Tune a suite toward a power-law call profile and write variants.
    Synth(SynthArgs),
    /// Benchmark suite manifests across execution modes.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    file: PathBuf,
    /// interp, tier1, tier2, tier2-hi or two-level.
    #[arg(long, default_value = "two-level")]
    mode: ExecMode,
    #[arg(long)]
    t1_threshold: Option<u64>,
    #[arg(long)]
    t2_threshold: Option<u64>,
    #[arg(long)]
    no_inline_cache: bool,
    /// Print the entry listing of every threaded method as it is compiled.
    #[arg(long)]
    dump_threaded: bool,
    /// Print every compiled loop as a PrimOp listing.
    #[arg(long)]
    dump_trace: bool,
    #[arg(long, value_name = "PATH")]
    stats_json: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Directory of standalone `.tvm` subprograms.
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value_t = 0.98)]
    target_r2: f64,
    #[arg(long, default_value_t = 20)]
    variants: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Leave methods invoked fewer times than this out of the fit.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run cells concurrently. Timings become unreliable; counters do not.
    #[arg(long)]
    parallel: bool,
}

fn run(args: RunArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&args.file)
        .with_context(|| format!("reading {}", args.file.display()))?;
    let program = parse_assembly(&text).with_context(|| format!("parsing {}", args.file.display()))?;
    let defaults = Thresholds::default();
    let config = VmConfig {
        thresholds: Thresholds {
            t1_method_threshold: args.t1_threshold.unwrap_or(defaults.t1_method_threshold),
            t2_backedge_threshold: args.t2_threshold.unwrap_or(defaults.t2_backedge_threshold),
            ..defaults
        },
        inline_cache: !args.no_inline_cache,
        dump_threaded: args.dump_threaded,
        dump_trace: args.dump_trace,
        ..VmConfig::default()
    };
    let mut vm = Vm::new(Arc::new(program), args.mode, config);
    let start = Instant::now();
    let value = vm.run();
    let mut result = vm.result(value, start.elapsed().as_nanos());
    result.first_iteration_ns = Some(result.total_ns);

    print!("{}", result.output);
    for dump in &result.dumps {
        println!("{dump}");
    }
    if let Some(path) = &args.stats_json {
        let text = serde_json::to_string_pretty(&result.stats_json())? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    match &result.value {
        Ok(v) => {
            println!("result: {v}");
            Ok(true)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(false)
        }
    }
}

fn synth(args: SynthArgs) -> Result<bool> {
    if args.variants == 0 {
        bail!("--variants must be at least 1");
    }
    let suite_dir = args
        .suite
        .canonicalize()
        .with_context(|| format!("suite directory {}", args.suite.display()))?;
    let spec = SuiteSpec::from_dir(&suite_dir)?;
    let opts = TuneOptions {
        target_r2: args.target_r2,
        max_rounds: args.max_rounds,
        min_count: args.min_count,
        ..TuneOptions::default()
    };
    let outcome = tune_iterations(&spec, &opts)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for variant in make_variants(&outcome.suite, args.variants, args.seed) {
        write(&args.out.join(variant_file_name(variant.variant)), &variant.to_json())?;
    }
    write(
        &args.out.join("fit.json"),
        &(serde_json::to_string_pretty(&outcome.fit)? + "\n"),
    )?;
    eprintln!(
        "r2 {:.4} (target {}) slope {:.3} after {} rounds; {} variants in {}",
        outcome.fit.r2,
        args.target_r2,
        outcome.fit.slope,
        outcome.rounds,
        args.variants,
        args.out.display()
    );
    if !outcome.reached {
        eprintln!("warning: target r2 not reached");
    }
    Ok(outcome.reached)
}

fn bench_cmd(args: BenchArgs) -> Result<bool> {
    let mut config = BenchConfig::read(&args.config)?;
    config.parallel |= args.parallel;
    let results = bench(&config)?;
    write(&args.out, &results.to_json())?;
    let failed = results.cells.iter().filter(|c| c.error.is_some()).count();
    eprintln!("{} cells, {failed} failed; wrote {}", results.cells.len(), args.out.display());
    Ok(true)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
