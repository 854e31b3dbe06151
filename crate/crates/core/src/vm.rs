//! The tier coordinator: execution modes, profiling, the code cache, the
//! interpreter loops, threaded-code execution, and the switch from the
//! lightweight tier to the heavyweight tier.
//!
//! Control returns to the top-level driver through [`Unwind`] for three
//! reasons: a runtime error, `HALT`, or a tier transition. A transition
//! carries the frames it unwound through, innermost first, each suspended at
//! the instruction it was executing; the driver resumes that chain in the
//! heavyweight interpreter.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bytecode::{Instruction, Program};
use crate::error::{ErrorKind, Tier, VmError};
use crate::frame::Frame;
use crate::handlers::{handler_for, operand, Outcome, Store};
use crate::inline_cache::{CallSite, InlineCacheStore, SiteStats};
use crate::shallow;
use crate::threaded::{self, BranchWhen, CallTarget, ThreadedCode, ThreadedEntry};
use crate::tier2::{self, LoopCode, LoopExit, Recording};
use crate::value::{MethodId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecMode {
    InterpOnly,
    Tier1Only,
    Tier2Only,
    Tier2HighThreshold,
    TwoLevel,
}

impl ExecMode {
    pub const ALL: [ExecMode; 5] = [
        ExecMode::InterpOnly,
        ExecMode::Tier1Only,
        ExecMode::Tier2Only,
        ExecMode::Tier2HighThreshold,
        ExecMode::TwoLevel,
    ];

    /// Name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            ExecMode::InterpOnly => "interp",
            ExecMode::Tier1Only => "tier1",
            ExecMode::Tier2Only => "tier2",
            ExecMode::Tier2HighThreshold => "tier2-hi",
            ExecMode::TwoLevel => "two-level",
        }
    }

    pub fn has_tier1(self) -> bool {
        matches!(self, ExecMode::Tier1Only | ExecMode::TwoLevel)
    }

    pub fn has_tier2(self) -> bool {
        matches!(
            self,
            ExecMode::Tier2Only | ExecMode::Tier2HighThreshold | ExecMode::TwoLevel
        )
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mode `{0}` (expected interp, tier1, tier2, tier2-hi or two-level)")]
pub struct UnknownMode(pub String);

impl FromStr for ExecMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExecMode::ALL
            .into_iter()
            .find(|m| m.cli_name() == s)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t1_method_threshold: u64,
    pub t2_backedge_threshold: u64,
    pub high_threshold_factor: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t1_method_threshold: 10,
            t2_backedge_threshold: 1000,
            high_threshold_factor: 3,
        }
    }
}

impl Thresholds {
    /// Back-edge count at which tier 2 takes over in `mode`.
    pub fn active_t2(&self, mode: ExecMode) -> u64 {
        match mode {
            ExecMode::Tier2HighThreshold => self.t2_backedge_threshold * self.high_threshold_factor,
            _ => self.t2_backedge_threshold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VmConfig {
    pub thresholds: Thresholds,
    pub inline_cache: bool,
    pub optimize_traces: bool,
    pub max_call_depth: usize,
    pub tier1_trace_limit: usize,
    pub tier2_trace_limit: usize,
    pub inline_depth: usize,
    /// Keep textual dumps of every compiled artifact.
    pub dump_threaded: bool,
    pub dump_trace: bool,
    /// Re-resolve every direct call the slow way and count disagreements.
    pub verify_inline_cache: bool,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            thresholds: Thresholds::default(),
            inline_cache: true,
            optimize_traces: true,
            max_call_depth: 400,
            tier1_trace_limit: shallow::DEFAULT_TRACE_LIMIT,
            tier2_trace_limit: tier2::DEFAULT_TRACE_LIMIT,
            inline_depth: tier2::DEFAULT_INLINE_DEPTH,
            dump_threaded: false,
            dump_trace: false,
            verify_inline_cache: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    /// Fetch/decode iterations of an interpreter loop or the trace recorder.
    pub dispatches: u64,
    /// Non-control handler executions, in any tier except loop code.
    pub handler_calls: u64,
    pub direct_calls: u64,
    pub indirect_calls: u64,
    pub loop_iterations: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierTraceStats {
    pub count: u64,
    pub total_ops: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub tier1: TierTraceStats,
    pub tier2: TierTraceStats,
    pub tier2_aborts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileStore {
    pub method_entry: Vec<u64>,
    /// Indexed by method, then by pc; only `JUMP_BACKWARD` pcs move.
    pub backedge: Vec<Vec<u64>>,
    pub transitions_fired: HashSet<(MethodId, usize)>,
}

impl ProfileStore {
    fn new(program: &Program) -> Self {
        ProfileStore {
            method_entry: vec![0; program.methods().len()],
            backedge: program
                .methods()
                .iter()
                .map(|m| vec![0; m.code.len()])
                .collect(),
            transitions_fired: HashSet::new(),
        }
    }

    pub fn backedge_count(&self, method: MethodId, pc: usize) -> u64 {
        self.backedge[method.index()][pc]
    }
}

#[derive(Debug, Default)]
pub struct CodeCache {
    threaded: Vec<Option<Rc<ThreadedCode>>>,
    uncompilable: Vec<bool>,
    loops: HashMap<(MethodId, usize), Rc<LoopCode>>,
    /// Anchor → back-edge count at which recording may be retried.
    blacklist: HashMap<(MethodId, usize), u64>,
}

impl CodeCache {
    fn new(program: &Program) -> Self {
        let n = program.methods().len();
        CodeCache {
            threaded: vec![None; n],
            uncompilable: vec![false; n],
            loops: HashMap::new(),
            blacklist: HashMap::new(),
        }
    }

    pub fn threaded(&self, m: MethodId) -> Option<&Rc<ThreadedCode>> {
        self.threaded[m.index()].as_ref()
    }

    pub fn threaded_count(&self) -> usize {
        self.threaded.iter().filter(|c| c.is_some()).count()
    }

    pub fn loop_code(&self, m: MethodId, header: usize) -> Option<&Rc<LoopCode>> {
        self.loops.get(&(m, header))
    }

    pub fn loops(&self) -> impl Iterator<Item = &Rc<LoopCode>> {
        self.loops.values()
    }

    pub fn is_blacklisted(&self, m: MethodId, header: usize) -> bool {
        self.blacklist.contains_key(&(m, header))
    }
}

/// Which interpreter loop runs a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// No profiling at all.
    Plain,
    /// Tier-1 trigger at method entry; back-edge probes in two-level mode.
    Light,
    /// Tier-2 trigger at back edges.
    Heavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Light,
    Heavy,
}

#[derive(Debug)]
pub struct TierTransition {
    /// Innermost first. The first frame sits on the back edge that fired;
    /// the others sit on the call that led to it.
    pub frames: Vec<Frame>,
}

#[derive(Debug)]
pub enum Unwind {
    Error(Box<VmError>),
    Halt(Value),
    Transition(Box<TierTransition>),
}

/// A fired transition, with the frame as raised and as resumed.
#[derive(Debug, Clone)]
pub struct TransitionEvent {
    pub method: MethodId,
    pub pc: usize,
    pub count: u64,
    pub raised: Frame,
    pub resumed: Option<Frame>,
}

/// One attempt to record a loop, with the back-edge count that triggered it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingEvent {
    pub method: MethodId,
    pub header: usize,
    pub count: u64,
    /// `None` when the loop closed; otherwise why recording gave up.
    pub aborted: Option<&'static str>,
}

enum Route {
    Threaded(Rc<ThreadedCode>),
    Interp(Flavor),
}

pub struct Vm {
    pub(crate) program: Arc<Program>,
    pub(crate) mode: ExecMode,
    pub(crate) config: VmConfig,
    pub(crate) store: Store,
    pub(crate) counters: StepCounters,
    pub(crate) profile: ProfileStore,
    pub(crate) cache: CodeCache,
    pub(crate) ic: InlineCacheStore,
    pub(crate) phase: Phase,
    pub(crate) depth: usize,
    pub(crate) traces: TraceStats,
    pub(crate) events: Vec<TransitionEvent>,
    pub(crate) dumps: Vec<String>,
    pub(crate) ic_mismatches: u64,
    pub(crate) exits_taken: u64,
    pub(crate) recordings: Vec<RecordingEvent>,
}

impl Vm {
    pub fn new(program: Arc<Program>, mode: ExecMode, config: VmConfig) -> Vm {
        Vm {
            profile: ProfileStore::new(&program),
            cache: CodeCache::new(&program),
            program,
            mode,
            config,
            store: Store::default(),
            counters: StepCounters::default(),
            ic: InlineCacheStore::new(),
            phase: Phase::Light,
            depth: 0,
            traces: TraceStats::default(),
            events: Vec::new(),
            dumps: Vec::new(),
            ic_mismatches: 0,
            exits_taken: 0,
            recordings: Vec::new(),
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn counters(&self) -> StepCounters {
        self.counters
    }

    pub fn profile(&self) -> &ProfileStore {
        &self.profile
    }

    pub fn code_cache(&self) -> &CodeCache {
        &self.cache
    }

    pub fn inline_caches(&self) -> &InlineCacheStore {
        &self.ic
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn output(&self) -> &str {
        &self.store.output
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn trace_stats(&self) -> TraceStats {
        self.traces
    }

    pub fn transitions(&self) -> &[TransitionEvent] {
        &self.events
    }

    /// Dumps of compiled artifacts, in compilation order.
    pub fn dumps(&self) -> &[String] {
        &self.dumps
    }

    pub fn inline_cache_mismatches(&self) -> u64 {
        self.ic_mismatches
    }

    pub fn recordings(&self) -> &[RecordingEvent] {
        &self.recordings
    }

    pub fn exits_taken(&self) -> u64 {
        self.exits_taken
    }

    pub fn site_stats(&self) -> Vec<SiteStats> {
        let p = &self.program;
        self.ic.stats(|m| p.method(m).name.clone())
    }

    /// Runs the entry method once. State such as the heap, profile and
    /// compiled code persists across calls.
    pub fn run(&mut self) -> Result<Value, VmError> {
        let entry = self.program.entry();
        self.call(entry, &[])
    }

    /// Calls any method with the given arguments.
    pub fn call(&mut self, method: MethodId, args: &[Value]) -> Result<Value, VmError> {
        let m = self.program.method(method);
        if m.arg_count as usize != args.len() {
            return Err(VmError {
                kind: ErrorKind::Arity {
                    callee: m.name.clone(),
                    expected: m.arg_count,
                    got: args.len() as u32,
                },
                method: m.name.clone(),
                pc: 0,
                tier: Tier::Interpreter,
            });
        }
        let frame = Frame::new(method, m, args);
        self.depth = 0;
        let mut r = self.invoke(frame);
        loop {
            match r {
                Ok(v) | Err(Unwind::Halt(v)) => return Ok(v),
                Err(Unwind::Error(e)) => return Err(*e),
                Err(Unwind::Transition(t)) => {
                    self.phase = Phase::Heavy;
                    if let Some(ev) = self.events.last_mut() {
                        ev.resumed = t.frames.first().cloned();
                    }
                    self.depth = 0;
                    r = self.resume_chain(t.frames, true);
                }
            }
        }
    }

    pub(crate) fn error(&self, kind: ErrorKind, method: MethodId, pc: usize, tier: Tier) -> Unwind {
        Unwind::Error(Box::new(VmError {
            kind,
            method: self.program.method(method).name.clone(),
            pc,
            tier,
        }))
    }

    fn active_t2(&self) -> u64 {
        self.config.thresholds.active_t2(self.mode)
    }

    /// Finishes a chain of suspended frames, innermost first, in the
    /// heavyweight interpreter. Each frame receives its callee's result.
    pub(crate) fn resume_chain(
        &mut self,
        frames: Vec<Frame>,
        at_back_edge: bool,
    ) -> Result<Value, Unwind> {
        let base = self.depth;
        let n = frames.len();
        let mut result = None;
        for (i, mut f) in frames.into_iter().enumerate() {
            if let Some(v) = result {
                f.push(v);
                f.pc += 1;
            }
            self.depth = base + (n - i);
            result = Some(self.interpret(&mut f, Flavor::Heavy, at_back_edge && i == 0)?);
        }
        self.depth = base;
        Ok(result.expect("chain is non-empty"))
    }

    /// Completes `inner` and delivers its result to the suspended `frame`.
    fn adopt(&mut self, frame: &mut Frame, inner: Vec<Frame>) -> Result<(), Unwind> {
        if inner.is_empty() {
            return Ok(());
        }
        let v = self.resume_chain(inner, false)?;
        frame.push(v);
        frame.pc += 1;
        Ok(())
    }

    pub(crate) fn invoke(&mut self, mut frame: Frame) -> Result<Value, Unwind> {
        let m = frame.method;
        if self.depth >= self.config.max_call_depth {
            return Err(self.error(
                ErrorKind::StackOverflow(self.config.max_call_depth),
                m,
                0,
                Tier::Interpreter,
            ));
        }
        self.depth += 1;
        self.profile.method_entry[m.index()] += 1;
        let r = match self.route(m) {
            Route::Threaded(code) => self.execute_threaded(&code, &mut frame),
            Route::Interp(flavor) => self.interpret(&mut frame, flavor, false),
        };
        self.depth -= 1;
        r
    }

    fn route(&mut self, m: MethodId) -> Route {
        match self.mode {
            ExecMode::InterpOnly => Route::Interp(Flavor::Plain),
            ExecMode::Tier2Only | ExecMode::Tier2HighThreshold => Route::Interp(Flavor::Heavy),
            ExecMode::Tier1Only | ExecMode::TwoLevel => {
                if self.phase == Phase::Heavy {
                    return match self.cache.threaded(m) {
                        Some(code) if !code.has_loops => Route::Threaded(Rc::clone(code)),
                        _ => Route::Interp(Flavor::Heavy),
                    };
                }
                if let Some(code) = self.cache.threaded(m) {
                    return Route::Threaded(Rc::clone(code));
                }
                if self.profile.method_entry[m.index()]
                    >= self.config.thresholds.t1_method_threshold
                    && !self.cache.uncompilable[m.index()]
                {
                    if let Some(code) = self.compile_tier1(m) {
                        return Route::Threaded(code);
                    }
                }
                Route::Interp(Flavor::Light)
            }
        }
    }

    fn compile_tier1(&mut self, m: MethodId) -> Option<Rc<ThreadedCode>> {
        let program = Arc::clone(&self.program);
        match shallow::trace_method(m, program.method(m), self.config.tier1_trace_limit) {
            Ok(trace) => {
                let code = Rc::new(threaded::compile_threaded(&trace, &mut self.ic));
                self.traces.tier1.count += 1;
                self.traces.tier1.total_ops += trace.op_count() as u64;
                if self.config.dump_threaded {
                    self.dumps.push(threaded::dump_threaded(&program, &code));
                }
                self.cache.threaded[m.index()] = Some(Rc::clone(&code));
                Some(code)
            }
            Err(_) => {
                self.cache.uncompilable[m.index()] = true;
                None
            }
        }
    }

    /// Fires a transition on exactly the threshold-th execution of a back
    /// edge, once per back edge per run.
    fn probe_backedge(&mut self, frame: &mut Frame) -> Result<(), Unwind> {
        let (m, pc) = (frame.method, frame.pc);
        let count = {
            let c = &mut self.profile.backedge[m.index()][pc];
            *c += 1;
            *c
        };
        if count == self.active_t2() && self.profile.transitions_fired.insert((m, pc)) {
            self.events.push(TransitionEvent {
                method: m,
                pc,
                count,
                raised: frame.clone(),
                resumed: None,
            });
            let raised = std::mem::take(frame);
            return Err(Unwind::Transition(Box::new(TierTransition {
                frames: vec![raised],
            })));
        }
        Ok(())
    }

    fn probes_active(&self) -> bool {
        self.mode == ExecMode::TwoLevel && self.phase == Phase::Light
    }

    /// Loop-header check of the heavyweight interpreter, run right after a
    /// back edge at `back_edge_pc` moved `frame` to the header.
    fn at_loop_header(&mut self, frame: &mut Frame, back_edge_pc: usize) -> Result<(), Unwind> {
        let m = frame.method;
        let header = frame.pc;
        if let Some(code) = self.cache.loop_code(m, header) {
            let code = Rc::clone(code);
            return self.run_loop(&code, frame);
        }
        let count = self.profile.backedge[m.index()][back_edge_pc];
        if count < self.active_t2() {
            return Ok(());
        }
        if let Some(&retry_at) = self.cache.blacklist.get(&(m, header)) {
            if count < retry_at {
                return Ok(());
            }
        }
        let recorded = tier2::record::record_loop(self, frame)?;
        self.recordings.push(RecordingEvent {
            method: m,
            header,
            count,
            aborted: match &recorded {
                Recording::Closed(_) => None,
                Recording::Aborted { reason, .. } => Some(reason),
            },
        });
        match recorded {
            Recording::Closed(raw) => {
                let code = if self.config.optimize_traces {
                    tier2::optimize_trace(&raw)
                } else {
                    raw
                };
                self.traces.tier2.count += 1;
                self.traces.tier2.total_ops += code.ops.len() as u64;
                if self.config.dump_trace {
                    self.dumps.push(tier2::dump_loop(&self.program, &code));
                }
                self.cache.blacklist.remove(&(m, header));
                let code = Rc::new(code);
                self.cache.loops.insert((m, header), Rc::clone(&code));
                self.run_loop(&code, frame)
            }
            Recording::Aborted { inner, .. } => {
                self.traces.tier2_aborts += 1;
                let now = self.profile.backedge[m.index()][back_edge_pc];
                self.cache
                    .blacklist
                    .insert((m, header), now + 2 * self.active_t2());
                self.adopt(frame, inner)
            }
        }
    }

    fn run_loop(&mut self, code: &LoopCode, frame: &mut Frame) -> Result<(), Unwind> {
        match tier2::execute_loop(self, code, frame, None)? {
            LoopExit::Guard { inner, .. } => {
                self.exits_taken += 1;
                self.adopt(frame, inner)
            }
            LoopExit::Budget => Ok(()),
        }
    }

    /// Runs a loop's code for at most `budget` iterations starting from
    /// `frame`, which must sit at the loop header.
    pub fn execute_loop_bounded(
        &mut self,
        code: &LoopCode,
        frame: &mut Frame,
        budget: u64,
    ) -> Result<LoopExit, Unwind> {
        self.depth = 1;
        let r = tier2::execute_loop(self, code, frame, Some(budget));
        self.depth = 0;
        r
    }

    /// Performs a dynamically resolved call from `frame`, whose arguments are
    /// still on its stack. On a transition, `frame` joins the chain.
    fn call_slow(
        &mut self,
        frame: &mut Frame,
        pc: usize,
        callee: MethodId,
        argc: u32,
        slot: Option<usize>,
        tier: Tier,
    ) -> Result<Value, Unwind> {
        let program = Arc::clone(&self.program);
        let target = program.method(callee);
        if target.arg_count != argc {
            return Err(self.error(
                ErrorKind::Arity {
                    callee: target.name.clone(),
                    expected: target.arg_count,
                    got: argc,
                },
                frame.method,
                pc,
                tier,
            ));
        }
        self.counters.indirect_calls += 1;
        if let Some(s) = slot {
            self.ic.record_type(s, callee);
            self.ic.slot_mut(s).indirect += 1;
        }
        let callee_frame = frame.call_into(callee, target, argc as usize);
        let r = self.invoke(callee_frame);
        suspend_on_transition(frame, pc, r)
    }

    /// The interpreter loop. `resumed` marks a frame resumed on the back edge
    /// whose probe fired, so that execution is not counted twice.
    pub(crate) fn interpret(
        &mut self,
        frame: &mut Frame,
        flavor: Flavor,
        resumed: bool,
    ) -> Result<Value, Unwind> {
        let program = Arc::clone(&self.program);
        let code = &program.method(frame.method).code;
        let record_types = self.mode.has_tier1() && self.config.inline_cache;
        let mut skip_count = resumed;
        loop {
            let pc = frame.pc;
            let ins = code[pc];
            self.counters.dispatches += 1;
            let op = ins.opcode();
            if let Instruction::JumpBackward(t) = ins {
                let first = std::mem::take(&mut skip_count);
                match flavor {
                    Flavor::Plain => {}
                    Flavor::Light => {
                        if self.probes_active() {
                            self.probe_backedge(frame)?;
                        }
                    }
                    Flavor::Heavy => {
                        if !first {
                            self.profile.backedge[frame.method.index()][pc] += 1;
                        }
                    }
                }
                frame.pc = t;
                if flavor == Flavor::Heavy {
                    self.at_loop_header(frame, pc)?;
                }
                continue;
            }
            skip_count = false;
            if !op.is_control() {
                self.counters.handler_calls += 1;
            }
            let outcome = match handler_for(op)(frame, operand(&ins), &mut self.store) {
                Ok(o) => o,
                Err(k) => return Err(self.error(k, frame.method, pc, Tier::Interpreter)),
            };
            match outcome {
                Outcome::Continue => frame.pc = pc + 1,
                Outcome::Jump(t) => frame.pc = t,
                Outcome::Return(v) => return Ok(v),
                Outcome::Halt(v) => return Err(Unwind::Halt(v)),
                Outcome::Call { callee, argc } => {
                    let slot = record_types.then(|| {
                        self.ic.slot_for(CallSite {
                            method: frame.method,
                            pc,
                        })
                    });
                    let v = self.call_slow(frame, pc, callee, argc, slot, Tier::Interpreter)?;
                    frame.push(v);
                    frame.pc = pc + 1;
                }
            }
        }
    }

    /// Runs compiled threaded code. No instruction is fetched or decoded.
    pub(crate) fn execute_threaded(
        &mut self,
        code: &ThreadedCode,
        frame: &mut Frame,
    ) -> Result<Value, Unwind> {
        let mut seg = 0usize;
        let mut i = 0usize;
        loop {
            match code.segments[seg].entries[i] {
                ThreadedEntry::Invoke {
                    handler, imm, pc, ..
                } => {
                    self.counters.handler_calls += 1;
                    match handler(frame, imm, &mut self.store) {
                        Ok(Outcome::Continue) => i += 1,
                        Ok(Outcome::Halt(v)) => return Err(Unwind::Halt(v)),
                        Ok(other) => unreachable!("non-control handler produced {other:?}"),
                        Err(k) => {
                            return Err(self.error(k, code.method, pc as usize, Tier::Threaded))
                        }
                    }
                }
                ThreadedEntry::Branch { when, target, pc } => {
                    let jump = match when {
                        BranchWhen::Always => true,
                        BranchWhen::Truthy | BranchWhen::Falsy => match frame.pop().truthy() {
                            Ok(t) => t == (when == BranchWhen::Truthy),
                            Err(k) => {
                                return Err(self.error(k, code.method, pc as usize, Tier::Threaded))
                            }
                        },
                    };
                    if jump {
                        seg = target as usize;
                        i = 0;
                    } else {
                        i += 1;
                    }
                }
                ThreadedEntry::CachedCall {
                    slot,
                    argc,
                    callee,
                    pc,
                } => {
                    self.counters.handler_calls += 1;
                    let v = self.cached_call(
                        code.method,
                        frame,
                        slot as usize,
                        argc,
                        callee,
                        pc as usize,
                    )?;
                    frame.push(v);
                    i += 1;
                }
                ThreadedEntry::BackEdgeProbe { pc } => {
                    if self.probes_active() {
                        frame.pc = pc as usize;
                        self.probe_backedge(frame)?;
                    }
                    i += 1;
                }
                ThreadedEntry::Return => return Ok(frame.pop()),
            }
        }
    }

    /// A call site in threaded code: a guarded direct call into the cached
    /// callee's threaded code, or the slow path.
    fn cached_call(
        &mut self,
        method: MethodId,
        frame: &mut Frame,
        slot: usize,
        argc: u32,
        target: CallTarget,
        pc: usize,
    ) -> Result<Value, Unwind> {
        let callee = match target {
            CallTarget::Static(m) => m,
            CallTarget::Dynamic => {
                let at = frame.stack.len() - argc as usize - 1;
                match frame.stack[at].as_method() {
                    Ok(m) => {
                        frame.stack.remove(at);
                        m
                    }
                    Err(k) => return Err(self.error(k, method, pc, Tier::Threaded)),
                }
            }
        };
        if self.config.inline_cache && self.ic.check_type(slot, callee) {
            let direct = match self.cache.threaded(callee) {
                Some(code) if self.phase == Phase::Light || !code.has_loops => {
                    Some(Rc::clone(code))
                }
                _ => None,
            };
            if let Some(code) = direct {
                let program = Arc::clone(&self.program);
                let target_method = program.method(callee);
                if target_method.arg_count == argc {
                    if self.config.verify_inline_cache {
                        let resolved = match target {
                            CallTarget::Static(m) => m,
                            CallTarget::Dynamic => callee,
                        };
                        if !self.ic.check_type(slot, resolved) {
                            self.ic_mismatches += 1;
                        }
                    }
                    if self.depth >= self.config.max_call_depth {
                        return Err(self.error(
                            ErrorKind::StackOverflow(self.config.max_call_depth),
                            callee,
                            0,
                            Tier::Interpreter,
                        ));
                    }
                    self.counters.direct_calls += 1;
                    self.ic.slot_mut(slot).direct += 1;
                    self.profile.method_entry[callee.index()] += 1;
                    let mut callee_frame = frame.call_into(callee, target_method, argc as usize);
                    self.depth += 1;
                    let r = self.execute_threaded(&code, &mut callee_frame);
                    self.depth -= 1;
                    return suspend_on_transition(frame, pc, r);
                }
            }
        }
        let record = self.config.inline_cache.then_some(slot);
        self.call_slow(frame, pc, callee, argc, record, Tier::Threaded)
    }
}

/// Adds `frame`, suspended on the call at `pc`, to a passing transition.
fn suspend_on_transition(
    frame: &mut Frame,
    pc: usize,
    r: Result<Value, Unwind>,
) -> Result<Value, Unwind> {
    match r {
        Err(Unwind::Transition(mut t)) => {
            frame.pc = pc;
            t.frames.push(std::mem::take(frame));
            Err(Unwind::Transition(t))
        }
        other => other,
    }
}

/// Everything observable about one run, plus instrumentation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub value: Result<Value, VmError>,
    pub output: String,
    pub heap: Vec<Vec<i64>>,
    pub counters: StepCounters,
    pub traces: TraceStats,
    pub inline_cache: Vec<SiteStats>,
    pub total_ns: u128,
    pub first_iteration_ns: Option<u128>,
    pub threaded_methods: usize,
    pub loop_codes: usize,
    pub dumps: Vec<String>,
}

impl RunResult {
    fn collect(vm: &Vm, value: Result<Value, VmError>, total_ns: u128) -> RunResult {
        RunResult {
            value,
            output: vm.store.output.clone(),
            heap: vm.store.heap.snapshot(),
            counters: vm.counters,
            traces: vm.traces,
            inline_cache: vm.site_stats(),
            total_ns,
            first_iteration_ns: None,
            threaded_methods: vm.cache.threaded_count(),
            loop_codes: vm.cache.loops.len(),
            dumps: vm.dumps.clone(),
        }
    }

    /// The stats document written by `--stats-json`.
    pub fn stats_json(&self) -> serde_json::Value {
        let result = match &self.value {
            Ok(v) => serde_json::json!({ "value": v.to_string() }),
            Err(e) => serde_json::json!({
                "error": e.kind.to_string(),
                "method": e.method,
                "pc": e.pc,
                "tier": e.tier,
            }),
        };
        let mut timings = serde_json::json!({ "total_ns": self.total_ns as u64 });
        if let Some(f) = self.first_iteration_ns {
            timings["first_iteration_ns"] = serde_json::json!(f as u64);
        }
        serde_json::json!({
            "result": result,
            "timings": timings,
            "counters": {
                "dispatches": self.counters.dispatches,
                "handler_calls": self.counters.handler_calls,
                "direct_calls": self.counters.direct_calls,
                "indirect_calls": self.counters.indirect_calls,
            },
            "traces": {
                "tier1": self.traces.tier1,
                "tier2": self.traces.tier2,
            },
            "inline_cache": self.inline_cache,
        })
    }

    /// Whether two runs agree on everything a program can observe.
    pub fn same_observable(&self, other: &RunResult) -> bool {
        let values = match (&self.value, &other.value) {
            (Ok(a), Ok(b)) => a == b,
            (Err(a), Err(b)) => a.same_site(b),
            _ => false,
        };
        values && self.output == other.output && self.heap == other.heap
    }
}

/// Runs `program` once from its entry in a fresh VM.
pub fn run(program: Arc<Program>, mode: ExecMode, config: VmConfig) -> RunResult {
    let mut vm = Vm::new(program, mode, config);
    let start = Instant::now();
    let value = vm.run();
    let total = start.elapsed().as_nanos();
    let mut r = RunResult::collect(&vm, value, total);
    r.first_iteration_ns = Some(total);
    r
}

impl Vm {
    /// Snapshot of the run so far.
    pub fn result(&self, value: Result<Value, VmError>, total_ns: u128) -> RunResult {
        RunResult::collect(self, value, total_ns)
    }
}
