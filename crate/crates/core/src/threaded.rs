//! Subroutine-threaded code.
//!
//! Each segment is an array of pre-resolved handler references. Running it
//! performs no fetch and no decode: the entry already names the handler and
//! carries its immediate. Execution lives in [`crate::vm`], which owns the
//! runtime state the handlers and call sites need.

use std::fmt::Write;

use crate::bytecode::{Instruction, Opcode, Program};
use crate::handlers::{handler_for, operand, Handler};
use crate::inline_cache::{CallSite, InlineCacheStore};
use crate::shallow::{LabelId, SegmentedTrace, TraceOp};
use crate::value::MethodId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchWhen {
    Truthy,
    Falsy,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallTarget {
    Static(MethodId),
    /// The callee is a method value below the arguments.
    Dynamic,
}

#[derive(Debug, Clone, Copy)]
pub enum ThreadedEntry {
    Invoke {
        handler: Handler,
        imm: i64,
        op: Opcode,
        pc: u32,
    },
    /// `target` is a segment index.
    Branch {
        when: BranchWhen,
        target: u32,
        pc: u32,
    },
    CachedCall {
        slot: u32,
        argc: u32,
        callee: CallTarget,
        pc: u32,
    },
    BackEdgeProbe {
        pc: u32,
    },
    Return,
}

#[derive(Debug, Clone)]
pub struct ThreadedSegment {
    pub label: LabelId,
    pub entries: Vec<ThreadedEntry>,
}

#[derive(Debug, Clone)]
pub struct ThreadedCode {
    pub method: MethodId,
    /// Entry segment first.
    pub segments: Vec<ThreadedSegment>,
    /// Inline-cache slot of every call entry, by bytecode pc.
    pub cache_sites: Vec<(usize, usize)>,
    /// Whether any entry is a back-edge probe.
    pub has_loops: bool,
    /// Op count of the segmented trace this was compiled from.
    pub trace_ops: usize,
}

impl ThreadedCode {
    pub fn entry_count(&self) -> usize {
        self.segments.iter().map(|s| s.entries.len()).sum()
    }
}

/// Lowers a stub-free segmented trace. Call entries get inline-cache slots
/// from `ic`, created empty when the site has none yet.
pub fn compile_threaded(trace: &SegmentedTrace, ic: &mut InlineCacheStore) -> ThreadedCode {
    let index_of = |l: LabelId| -> u32 {
        trace
            .segments
            .iter()
            .position(|s| s.label == l)
            .expect("stitched trace has no dangling labels") as u32
    };
    let mut cache_sites = Vec::new();
    let mut has_loops = false;
    let mut segments = Vec::with_capacity(trace.segments.len());
    for seg in &trace.segments {
        let mut entries = Vec::with_capacity(seg.ops.len());
        for op in &seg.ops {
            match *op {
                TraceOp::Label(_) | TraceOp::CutHere(_) => {}
                TraceOp::HandlerCall { pc, ins, .. } => match ins {
                    Instruction::Call { callee, argc } => {
                        let slot = ic.slot_for(CallSite {
                            method: trace.origin,
                            pc,
                        });
                        cache_sites.push((pc, slot));
                        entries.push(ThreadedEntry::CachedCall {
                            slot: slot as u32,
                            argc,
                            callee: CallTarget::Static(callee),
                            pc: pc as u32,
                        });
                    }
                    Instruction::CallValue(argc) => {
                        let slot = ic.slot_for(CallSite {
                            method: trace.origin,
                            pc,
                        });
                        cache_sites.push((pc, slot));
                        entries.push(ThreadedEntry::CachedCall {
                            slot: slot as u32,
                            argc,
                            callee: CallTarget::Dynamic,
                            pc: pc as u32,
                        });
                    }
                    ins => entries.push(ThreadedEntry::Invoke {
                        handler: handler_for(ins.opcode()),
                        imm: operand(&ins),
                        op: ins.opcode(),
                        pc: pc as u32,
                    }),
                },
                TraceOp::GuardFalse { source, bridge } => entries.push(ThreadedEntry::Branch {
                    when: BranchWhen::Truthy,
                    target: index_of(bridge),
                    pc: source as u32,
                }),
                TraceOp::GuardTrue { source, bridge } => entries.push(ThreadedEntry::Branch {
                    when: BranchWhen::Falsy,
                    target: index_of(bridge),
                    pc: source as u32,
                }),
                TraceOp::JumpTo { target, back_edge } => {
                    let pc = match back_edge {
                        Some(pc) => {
                            has_loops = true;
                            entries.push(ThreadedEntry::BackEdgeProbe { pc: pc as u32 });
                            pc as u32
                        }
                        None => u32::MAX,
                    };
                    entries.push(ThreadedEntry::Branch {
                        when: BranchWhen::Always,
                        target: index_of(target),
                        pc,
                    });
                }
                TraceOp::Finish => entries.push(ThreadedEntry::Return),
            }
        }
        segments.push(ThreadedSegment {
            label: seg.label,
            entries,
        });
    }
    ThreadedCode {
        method: trace.origin,
        segments,
        cache_sites,
        has_loops,
        trace_ops: trace.op_count(),
    }
}

/// Per-segment entry listing in a pseudo-assembly style.
pub fn dump_threaded(program: &Program, code: &ThreadedCode) -> String {
    let name = |i: u32| -> String {
        let l = code.segments[i as usize].label;
        if l.0 == 0 {
            program.method(code.method).name.clone()
        } else {
            format!("L{}", l.0)
        }
    };
    let mut out = String::new();
    for (i, seg) in code.segments.iter().enumerate() {
        let _ = writeln!(out, "{}:", name(i as u32));
        for e in &seg.entries {
            let _ = match *e {
                ThreadedEntry::Invoke { op, imm, .. } => match op {
                    Opcode::ConstInt
                    | Opcode::LoadLocal
                    | Opcode::StoreLocal
                    | Opcode::ArrayFill => {
                        writeln!(out, "  call {op} {imm}")
                    }
                    Opcode::PushMethod => {
                        writeln!(
                            out,
                            "  call {op} {}",
                            program.method(MethodId(imm as u32)).name
                        )
                    }
                    _ => writeln!(out, "  call {op}"),
                },
                ThreadedEntry::Branch { when, target, .. } => {
                    let mnemonic = match when {
                        BranchWhen::Truthy => "jnz",
                        BranchWhen::Falsy => "jz",
                        BranchWhen::Always => "jmp",
                    };
                    writeln!(out, "  {mnemonic} {}", name(target))
                }
                ThreadedEntry::CachedCall {
                    slot, argc, callee, ..
                } => match callee {
                    CallTarget::Static(m) => writeln!(
                        out,
                        "  call_cached {} {argc} [ic{slot}]",
                        program.method(m).name
                    ),
                    CallTarget::Dynamic => writeln!(out, "  call_cached <value> {argc} [ic{slot}]"),
                },
                ThreadedEntry::BackEdgeProbe { pc } => writeln!(out, "  probe @{pc}"),
                ThreadedEntry::Return => writeln!(out, "  ret"),
            };
        }
    }
    out
}
