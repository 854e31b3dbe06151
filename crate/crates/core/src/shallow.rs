//! Shallow tracing: the tier-1 trace pipeline.
//!
//! [`shallow_trace`] walks a method's bytecode symbolically and records one
//! handler call per non-control instruction, following both arms of every
//! conditional branch in a single linear temporal trace. Handler bodies are
//! never run, so tracing cannot disturb interpreter state.
//! [`split_and_stitch`] cuts that trace at its `cut_here` markers and links
//! the pieces back together through labels, and [`replace_stubs`] swaps the
//! recorded stub handlers for the real ones.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write;

use thiserror::Error;

use crate::bytecode::{Instruction, Method, Program};
use crate::value::MethodId;

pub const DEFAULT_TRACE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(pub u32);

/// Label 0 always names the method entry.
pub const ENTRY_LABEL: LabelId = LabelId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutReason {
    Return,
    Branch,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Label(LabelId),
    HandlerCall {
        pc: usize,
        ins: Instruction,
        stub: bool,
    },
    /// Falls through while the condition is false; otherwise leaves for `bridge`.
    GuardFalse {
        source: usize,
        bridge: LabelId,
    },
    /// Falls through while the condition is true; otherwise leaves for `bridge`.
    GuardTrue {
        source: usize,
        bridge: LabelId,
    },
    CutHere(CutReason),
    /// `back_edge` is the `JUMP_BACKWARD` pc when this jump closes a loop.
    JumpTo {
        target: LabelId,
        back_edge: Option<usize>,
    },
    Finish,
}

impl TraceOp {
    /// Short kind name used by golden files.
    pub fn kind(&self) -> &'static str {
        match self {
            TraceOp::Label(_) => "label",
            TraceOp::HandlerCall { .. } => "call",
            TraceOp::GuardFalse { .. } => "guard_false",
            TraceOp::GuardTrue { .. } => "guard_true",
            TraceOp::CutHere(_) => "cut_here",
            TraceOp::JumpTo { .. } => "jump",
            TraceOp::Finish => "finish",
        }
    }

    pub fn bridge(&self) -> Option<LabelId> {
        match *self {
            TraceOp::GuardFalse { bridge, .. } | TraceOp::GuardTrue { bridge, .. } => Some(bridge),
            TraceOp::JumpTo { target, .. } => Some(target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalTrace {
    pub origin: MethodId,
    pub ops: Vec<TraceOp>,
    /// Bytecode pc of each label, indexed by label id.
    pub label_pcs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub label: LabelId,
    /// Starts with the segment's `Label` and ends in `JumpTo` or `Finish`.
    pub ops: Vec<TraceOp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedTrace {
    pub origin: MethodId,
    /// Entry segment first, the rest in stitching order.
    pub segments: Vec<Segment>,
    pub label_pcs: Vec<usize>,
}

impl SegmentedTrace {
    pub fn entry(&self) -> LabelId {
        ENTRY_LABEL
    }

    pub fn segment(&self, label: LabelId) -> Option<&Segment> {
        self.segments.iter().find(|s| s.label == label)
    }

    pub fn op_count(&self) -> usize {
        self.segments.iter().map(|s| s.ops.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace of `{method}` exceeds {limit} ops")]
    TooLong { method: String, limit: usize },
    #[error("dangling bridge label L{0}")]
    DanglingBridge(u32),
    #[error("trace does not start with the entry label")]
    MissingEntry,
}

/// Pcs where a segment must begin: the entry, every branch or back-edge
/// target, and every reachable instruction with two or more predecessors.
pub fn segment_heads(method: &Method) -> HashSet<usize> {
    let code = &method.code;
    let mut reachable = vec![false; code.len()];
    let mut work = vec![0usize];
    while let Some(pc) = work.pop() {
        if pc >= code.len() || reachable[pc] {
            continue;
        }
        reachable[pc] = true;
        work.extend(code[pc].successors(pc));
    }
    let mut preds = vec![0u32; code.len()];
    let mut heads = HashSet::from([0usize]);
    for (pc, ins) in code.iter().enumerate() {
        if !reachable[pc] {
            continue;
        }
        for s in ins.successors(pc) {
            preds[s] += 1;
        }
        match *ins {
            Instruction::JumpIfTrue(t)
            | Instruction::JumpIfFalse(t)
            | Instruction::JumpBackward(t) => {
                heads.insert(t);
            }
            _ => {}
        }
    }
    heads.extend((0..code.len()).filter(|&pc| preds[pc] >= 2));
    heads
}

struct Tracer<'a> {
    method: &'a Method,
    heads: HashSet<usize>,
    ops: Vec<TraceOp>,
    label_of: HashMap<usize, LabelId>,
    label_pcs: Vec<usize>,
    pending: VecDeque<LabelId>,
    limit: usize,
}

impl Tracer<'_> {
    fn label_for(&mut self, pc: usize) -> LabelId {
        if let Some(&l) = self.label_of.get(&pc) {
            return l;
        }
        let l = LabelId(self.label_pcs.len() as u32);
        self.label_of.insert(pc, l);
        self.label_pcs.push(pc);
        self.pending.push_back(l);
        l
    }

    fn emit(&mut self, op: TraceOp) -> Result<(), TraceError> {
        self.ops.push(op);
        if self.ops.len() > self.limit {
            return Err(TraceError::TooLong {
                method: self.method.name.clone(),
                limit: self.limit,
            });
        }
        Ok(())
    }

    /// Traces one arm from `start` until it returns, halts, or reaches a head.
    fn walk(&mut self, start: usize) -> Result<(), TraceError> {
        let mut pc = start;
        let mut first = true;
        loop {
            if !first && self.heads.contains(&pc) {
                let target = self.label_for(pc);
                self.emit(TraceOp::JumpTo {
                    target,
                    back_edge: None,
                })?;
                return self.emit(TraceOp::CutHere(CutReason::Branch));
            }
            first = false;
            match self.method.code[pc] {
                Instruction::JumpIfTrue(t) => {
                    let bridge = self.label_for(t);
                    self.emit(TraceOp::GuardFalse { source: pc, bridge })?;
                    pc += 1;
                }
                Instruction::JumpIfFalse(t) => {
                    let bridge = self.label_for(t);
                    self.emit(TraceOp::GuardTrue { source: pc, bridge })?;
                    pc += 1;
                }
                Instruction::Jump(t) => pc = t,
                Instruction::JumpBackward(t) => {
                    let target = self.label_for(t);
                    self.emit(TraceOp::JumpTo {
                        target,
                        back_edge: Some(pc),
                    })?;
                    return self.emit(TraceOp::CutHere(CutReason::Branch));
                }
                Instruction::Ret => return self.emit(TraceOp::CutHere(CutReason::Return)),
                ins @ Instruction::Halt => {
                    self.emit(TraceOp::HandlerCall {
                        pc,
                        ins,
                        stub: true,
                    })?;
                    return self.emit(TraceOp::CutHere(CutReason::Halt));
                }
                ins => {
                    self.emit(TraceOp::HandlerCall {
                        pc,
                        ins,
                        stub: true,
                    })?;
                    pc += 1;
                }
            }
        }
    }
}

pub fn shallow_trace(id: MethodId, method: &Method) -> Result<TemporalTrace, TraceError> {
    shallow_trace_with_limit(id, method, DEFAULT_TRACE_LIMIT)
}

/// Records the temporal trace of `method`. Arms are traced fall-through
/// first; pending arms are resumed in the order their labels were created.
pub fn shallow_trace_with_limit(
    id: MethodId,
    method: &Method,
    limit: usize,
) -> Result<TemporalTrace, TraceError> {
    let mut t = Tracer {
        method,
        heads: segment_heads(method),
        ops: Vec::new(),
        label_of: HashMap::from([(0, ENTRY_LABEL)]),
        label_pcs: vec![0],
        pending: VecDeque::new(),
        limit,
    };
    t.emit(TraceOp::Label(ENTRY_LABEL))?;
    t.walk(0)?;
    while let Some(label) = t.pending.pop_front() {
        t.walk(t.label_pcs[label.0 as usize])?;
    }
    if let Some(last @ TraceOp::CutHere(_)) = t.ops.last_mut() {
        *last = TraceOp::Finish;
    }
    Ok(TemporalTrace {
        origin: id,
        ops: t.ops,
        label_pcs: t.label_pcs,
    })
}

/// Cuts the temporal trace into segments and assigns each follow-on segment
/// the label of the bridge that first referenced it.
pub fn split_and_stitch(trace: &TemporalTrace) -> Result<SegmentedTrace, TraceError> {
    let mut parts: Vec<&[TraceOp]> = Vec::new();
    let mut start = 0;
    for (i, op) in trace.ops.iter().enumerate() {
        if matches!(op, TraceOp::CutHere(_) | TraceOp::Finish) {
            parts.push(&trace.ops[start..=i]);
            start = i + 1;
        }
    }
    if start < trace.ops.len() {
        parts.push(&trace.ops[start..]);
    }

    let mut known = HashSet::from([ENTRY_LABEL]);
    let mut queue: VecDeque<LabelId> = VecDeque::new();
    let mut segments = Vec::with_capacity(parts.len());
    for (k, part) in parts.into_iter().enumerate() {
        let (label, mut body) = if k == 0 {
            match part.first() {
                Some(TraceOp::Label(l)) if *l == ENTRY_LABEL => (ENTRY_LABEL, &part[1..]),
                _ => return Err(TraceError::MissingEntry),
            }
        } else {
            let l = queue.pop_front().ok_or(TraceError::MissingEntry)?;
            (l, part)
        };
        if let Some(TraceOp::CutHere(_) | TraceOp::Finish) = body.last() {
            body = &body[..body.len() - 1];
        }
        let mut ops = Vec::with_capacity(body.len() + 2);
        ops.push(TraceOp::Label(label));
        for op in body {
            if let Some(b) = op.bridge() {
                if known.insert(b) {
                    queue.push_back(b);
                }
            }
            ops.push(*op);
        }
        if !matches!(ops.last(), Some(TraceOp::JumpTo { .. })) {
            ops.push(TraceOp::Finish);
        }
        segments.push(Segment { label, ops });
    }
    if let Some(l) = queue.pop_front() {
        return Err(TraceError::DanglingBridge(l.0));
    }
    let defined: HashSet<LabelId> = segments.iter().map(|s| s.label).collect();
    for seg in &segments {
        for op in &seg.ops {
            if let Some(b) = op.bridge() {
                if !defined.contains(&b) {
                    return Err(TraceError::DanglingBridge(b.0));
                }
            }
        }
    }
    Ok(SegmentedTrace {
        origin: trace.origin,
        segments,
        label_pcs: trace.label_pcs.clone(),
    })
}

/// Marks every handler call as calling the real handler.
pub fn replace_stubs(trace: &SegmentedTrace) -> SegmentedTrace {
    let mut out = trace.clone();
    for seg in &mut out.segments {
        for op in &mut seg.ops {
            if let TraceOp::HandlerCall { stub, .. } = op {
                *stub = false;
            }
        }
    }
    out
}

/// Full tier-1 front end for one method.
pub fn trace_method(
    id: MethodId,
    method: &Method,
    limit: usize,
) -> Result<SegmentedTrace, TraceError> {
    let t = shallow_trace_with_limit(id, method, limit)?;
    Ok(replace_stubs(&split_and_stitch(&t)?))
}

fn label_name(program: &Program, origin: MethodId, l: LabelId) -> String {
    if l == ENTRY_LABEL {
        program.method(origin).name.clone()
    } else {
        format!("L{}", l.0)
    }
}

fn call_text(program: &Program, ins: &Instruction, stub: bool) -> String {
    let name = ins.opcode().name();
    let mut s = if stub {
        format!("call(stub_{name}, p0")
    } else {
        format!("call({name}, p0")
    };
    match *ins {
        Instruction::Call { callee, argc } => {
            let _ = write!(s, ", \"{}\", {argc}", program.method(callee).name);
        }
        Instruction::PushMethod(m) => {
            let _ = write!(s, ", \"{}\"", program.method(m).name);
        }
        Instruction::ConstInt(_)
        | Instruction::LoadLocal(_)
        | Instruction::StoreLocal(_)
        | Instruction::ArrayFill(_)
        | Instruction::CallValue(_) => {
            let _ = write!(s, ", {}", ins.immediate());
        }
        _ => {}
    }
    if stub {
        s.push_str(", True");
    }
    s.push(')');
    s
}

fn pushes_value(ins: &Instruction) -> bool {
    let (_, pushes) = ins.stack_effect();
    pushes > 0 && !matches!(ins, Instruction::ArrayFill(_))
}

fn dump_ops(program: &Program, origin: MethodId, ops: &[TraceOp], out: &mut String) {
    let mut calls = 0usize;
    let mut last_value: Option<usize> = None;
    for op in ops {
        match op {
            TraceOp::Label(l) => {
                calls = 0;
                last_value = None;
                let _ = writeln!(out, "label({})", label_name(program, origin, *l));
            }
            TraceOp::HandlerCall { ins, stub, .. } => {
                let text = call_text(program, ins, *stub);
                if pushes_value(ins) {
                    let _ = writeln!(out, "i{calls} = {text}");
                    last_value = Some(calls);
                } else {
                    let _ = writeln!(out, "{text}");
                    last_value = None;
                }
                calls += 1;
            }
            TraceOp::GuardFalse { bridge, .. } | TraceOp::GuardTrue { bridge, .. } => {
                let cond = match last_value {
                    Some(i) => format!("i{i}"),
                    None => "p0.top".to_string(),
                };
                let _ = writeln!(
                    out,
                    "{}({cond}) [{}]",
                    op.kind(),
                    label_name(program, origin, *bridge)
                );
                last_value = None;
            }
            TraceOp::CutHere(reason) => {
                let r = match reason {
                    CutReason::Return => "return",
                    CutReason::Branch => "branch",
                    CutReason::Halt => "halt",
                };
                let _ = writeln!(out, "cut_here({r})");
                calls = 0;
                last_value = None;
            }
            TraceOp::JumpTo { target, back_edge } => {
                let name = label_name(program, origin, *target);
                match back_edge {
                    Some(pc) => {
                        let _ = writeln!(out, "jump({name}) # back edge @{pc}");
                    }
                    None => {
                        let _ = writeln!(out, "jump({name})");
                    }
                }
            }
            TraceOp::Finish => {
                let _ = writeln!(out, "finish()");
            }
        }
    }
}

/// One op per line in the listing style used by the golden files.
pub fn dump_temporal(program: &Program, trace: &TemporalTrace) -> String {
    let mut out = String::new();
    dump_ops(program, trace.origin, &trace.ops, &mut out);
    out
}

pub fn dump_segmented(program: &Program, trace: &SegmentedTrace) -> String {
    let mut out = String::new();
    for (i, seg) in trace.segments.iter().enumerate() {
        let _ = writeln!(out, "# Trace {}", (b'A' + (i % 26) as u8) as char);
        dump_ops(program, trace.origin, &seg.ops, &mut out);
    }
    out
}

/// The op-kind sequence, one kind per line; what golden files compare.
pub fn kind_sequence(ops: &[TraceOp]) -> String {
    let mut out = String::new();
    for op in ops {
        let k = match op {
            TraceOp::HandlerCall { stub: true, .. } => "call_stub",
            other => other.kind(),
        };
        out.push_str(k);
        out.push('\n');
    }
    out
}
