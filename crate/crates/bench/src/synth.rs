//! Workload synthesis: invocation profiles, the log-log rank/frequency fit,
//! iteration tuning and shuffled variants.
//!
//! The fit uses natural logarithms. The base only scales the intercept; the
//! slope and r2 are unaffected.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tvm_core::{ExecMode, Vm, VmConfig};

use crate::error::SynthError;
use crate::suite::{compose, Subprogram, SuiteSpec, DRIVER_PREFIX};

/// Invocation counts keyed by `<subprogram>/<method>`. Methods that never
/// ran are absent, so every count is at least 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodProfile {
    pub counts: BTreeMap<String, u64>,
}

impl MethodProfile {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Counts of the methods belonging to one subprogram.
    pub fn subprogram(&self, name: &str) -> MethodProfile {
        let prefix = format!("{name}/");
        MethodProfile {
            counts: self
                .counts
                .iter()
                .filter(|(k, _)| k.starts_with(&prefix))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    fn scaled(&self, factor: u64) -> impl Iterator<Item = (&String, u64)> {
        self.counts.iter().map(move |(k, v)| (k, v * factor))
    }
}

/// Runs `parts` composed into one program in the interpreter and counts
/// method entries. Driver methods are left out.
fn profile_parts(parts: &[(&Subprogram, u64)]) -> Result<MethodProfile, SynthError> {
    if parts.is_empty() {
        return Err(SynthError::EmptySuite);
    }
    let program = Arc::new(compose(parts));
    let mut vm = Vm::new(program.clone(), ExecMode::InterpOnly, VmConfig::default());
    vm.run().map_err(|e| SynthError::Subprogram {
        name: e.method.split('/').next().unwrap_or_default().to_string(),
        source: e,
    })?;
    let counts = program
        .methods()
        .iter()
        .zip(&vm.profile().method_entry)
        .filter(|(m, &c)| c > 0 && !m.name.starts_with(DRIVER_PREFIX) && m.name != crate::suite::SUITE_ENTRY)
        .map(|(m, &c)| (m.name.clone(), c))
        .collect();
    Ok(MethodProfile { counts })
}

/// Method invocation counts for a whole suite, measured by the interpreter.
pub fn profile_suite(suite: &SuiteSpec) -> Result<MethodProfile, SynthError> {
    if suite.subprograms.is_empty() {
        return Err(SynthError::EmptySuite);
    }
    let subs = suite.load()?;
    let parts: Vec<_> = subs
        .iter()
        .zip(&suite.subprograms)
        .map(|(s, e)| (s, e.iterations))
        .collect();
    profile_parts(&parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub rank: usize,
    pub count: u64,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    /// In [0, 1].
    pub r2: f64,
    pub n: usize,
    /// Set when r2 carries no information: two or fewer points (exact fit,
    /// r2 = 1) or no variance in y (r2 = 0).
    pub degenerate: bool,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> RegressionFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf.max(1.0);
    let my = ys.iter().sum::<f64>() / nf.max(1.0);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    if n <= 2 {
        return RegressionFit {
            slope,
            intercept,
            r2: 1.0,
            n,
            degenerate: true,
        };
    }
    if syy == 0.0 {
        return RegressionFit {
            slope,
            intercept,
            r2: 0.0,
            n,
            degenerate: true,
        };
    }
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    RegressionFit {
        slope,
        intercept,
        r2: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        n,
        degenerate: false,
    }
}

/// Methods ranked by count, most invoked first. Ties are ordered by name so
/// that ranks are deterministic. Counts below `min_count` are dropped.
pub fn rank_points(profile: &MethodProfile, min_count: u64) -> Vec<FitPoint> {
    let mut v: Vec<(&String, u64)> = profile
        .counts
        .iter()
        .filter(|(_, &c)| c >= min_count.max(1))
        .map(|(k, &c)| (k, c))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (name, count))| FitPoint {
            rank: i + 1,
            count,
            name: name.clone(),
        })
        .collect()
}

/// The fit report written next to synthesized manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
    pub degenerate: bool,
    pub points: Vec<FitPoint>,
}

pub fn fit_points(points: Vec<FitPoint>) -> Result<FitReport, SynthError> {
    if points.len() < 3 {
        return Err(SynthError::TooFewPoints(points.len()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.rank as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.count as f64).ln()).collect();
    let fit = least_squares(&xs, &ys);
    Ok(FitReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        n: fit.n,
        degenerate: fit.degenerate,
        points,
    })
}

/// Least squares over (ln rank, ln count).
pub fn fit_loglog(profile: &MethodProfile) -> Result<FitReport, SynthError> {
    fit_points(rank_points(profile, 1))
}

pub fn fit_loglog_min(profile: &MethodProfile, min_count: u64) -> Result<FitReport, SynthError> {
    fit_points(rank_points(profile, min_count))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOptions {
    pub target_r2: f64,
    pub max_rounds: usize,
    /// Methods invoked fewer times are left out of the fit.
    pub min_count: u64,
    /// Iteration counts never grow past this.
    pub max_iterations: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            target_r2: 0.98,
            max_rounds: 50,
            min_count: 1,
            max_iterations: 1 << 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub suite: SuiteSpec,
    pub fit: FitReport,
    /// Rounds that changed the suite.
    pub rounds: usize,
    /// r2 of the best suite after each round, starting with the input.
    pub history: Vec<f64>,
    pub reached: bool,
}

/// Per-iteration profiles of each subprogram. A suite's profile is the sum
/// of these scaled by iteration counts: every iteration calls a
/// subprogram's entry afresh, so its counts are exactly linear in the
/// iteration count.
struct UnitProfiles {
    units: Vec<MethodProfile>,
}

impl UnitProfiles {
    fn measure(subs: &[Subprogram]) -> Result<UnitProfiles, SynthError> {
        let units = subs
            .iter()
            .map(|s| profile_parts(&[(s, 1)]))
            .collect::<Result<_, _>>()?;
        Ok(UnitProfiles { units })
    }

    fn profile(&self, iterations: &[u64]) -> MethodProfile {
        let mut counts = BTreeMap::new();
        for (unit, &k) in self.units.iter().zip(iterations) {
            for (name, c) in unit.scaled(k) {
                counts.insert(name.clone(), c);
            }
        }
        MethodProfile { counts }
    }
}

/// Coordinate search over per-subprogram iteration counts. Each round tries
/// halving and doubling every count and keeps the single change that brings
/// r2 closest to the target. Stops when r2 reaches the target, when no
/// change helps, or after `max_rounds`.
pub fn tune_iterations(suite: &SuiteSpec, opts: &TuneOptions) -> Result<TuneOutcome, SynthError> {
    if !(opts.target_r2 > 0.0 && opts.target_r2 <= 1.0) {
        return Err(SynthError::BadTarget(opts.target_r2));
    }
    if suite.subprograms.is_empty() {
        return Err(SynthError::EmptySuite);
    }
    let units = UnitProfiles::measure(&suite.load()?)?;
    let fit_of = |iters: &[u64]| fit_loglog_min(&units.profile(iters), opts.min_count);
    let distance = |r2: f64| (r2 - opts.target_r2).abs();

    let mut iters: Vec<u64> = suite.subprograms.iter().map(|e| e.iterations).collect();
    let mut best = fit_of(&iters)?;
    let mut history = vec![best.r2];
    let mut rounds = 0;
    while best.r2 < opts.target_r2 && rounds < opts.max_rounds {
        let mut round_best: Option<(Vec<u64>, FitReport)> = None;
        for i in 0..iters.len() {
            for candidate in [iters[i] / 2, iters[i] * 2] {
                if candidate < 1 || candidate > opts.max_iterations || candidate == iters[i] {
                    continue;
                }
                let mut trial = iters.clone();
                trial[i] = candidate;
                let fit = fit_of(&trial)?;
                let current = round_best.as_ref().map_or(&best, |(_, f)| f);
                if distance(fit.r2) < distance(current.r2) {
                    round_best = Some((trial, fit));
                }
            }
        }
        let Some((trial, fit)) = round_best else {
            break;
        };
        iters = trial;
        best = fit;
        rounds += 1;
        history.push(best.r2);
    }
    let mut tuned = suite.clone();
    for (e, k) in tuned.subprograms.iter_mut().zip(&iters) {
        e.iterations = *k;
    }
    Ok(TuneOutcome {
        reached: best.r2 >= opts.target_r2,
        suite: tuned,
        fit: best,
        rounds,
        history,
    })
}

/// `n` orderings of `suite`: the first is the input order, the rest are
/// shuffles drawn from one generator seeded with `seed`.
pub fn make_variants(suite: &SuiteSpec, n: usize, seed: u64) -> Vec<SuiteSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|k| {
            let mut v = suite.clone();
            v.variant = k as u32;
            v.variant_seed = Some(seed);
            if k > 1 {
                v.subprograms.shuffle(&mut rng);
            }
            v
        })
        .collect()
}

/// File name for variant `k`, zero-padded so names sort in variant order.
pub fn variant_file_name(k: u32) -> String {
    format!("variant_{k:03}.json")
}
