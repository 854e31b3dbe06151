//! Tier 2: a tracing JIT for hot loops.
//!
//! A trace is recorded by running one loop iteration for real while shadowing
//! every value with a symbolic register ([`record`]). Handler bodies are
//! decomposed into primitive ops and callees are inlined. The resulting
//! [`LoopCode`] is cleaned up by [`optimize`] and run by [`exec`]; any guard
//! failure rebuilds the interpreter frames described by its exit.

pub mod exec;
pub mod optimize;
pub mod record;

use std::cell::Cell;
use std::fmt::Write;

use crate::bytecode::Program;
use crate::value::{MethodId, Value};

pub use exec::{execute_loop, LoopExit};
pub use optimize::optimize_trace;
pub use record::Recording;

pub const DEFAULT_TRACE_LIMIT: usize = 2000;
pub const DEFAULT_INLINE_DEPTH: usize = 8;

/// Virtual register. Every register is assigned exactly once per iteration.
pub type Reg = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameSlot {
    Local(u32),
    Stack(u32),
}

/// Where a traced value lives: a register, or an anchor-frame slot as it was
/// when the current iteration started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sym {
    Reg(Reg),
    Slot(FrameSlot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrimOp {
    IntAdd(Reg, Reg, Reg),
    IntSub(Reg, Reg, Reg),
    IntMul(Reg, Reg, Reg),
    IntMod(Reg, Reg, Reg),
    IntLe(Reg, Reg, Reg),
    IntLt(Reg, Reg, Reg),
    /// Structural equality on any two values.
    IntEq(Reg, Reg, Reg),
    ConstInt(Reg, i64),
    /// Non-integer constants: booleans, nil, method references.
    Const(Reg, Value),
    GetLocal(Reg, FrameSlot),
    SetLocal(FrameSlot, Reg),
    ArrNew(Reg, Reg),
    ArrGet(Reg, Reg, Reg),
    ArrSet(Reg, Reg, Reg),
    ArrLen(Reg, Reg),
    ArrFill(Reg, i64),
    ArrClear(Reg),
    Print(Reg),
    GuardTrue(Reg, u32),
    GuardFalse(Reg, u32),
    /// Guards a dynamic call site on the identity of the called method.
    GuardMethod(Reg, MethodId, u32),
    /// A call that was not inlined.
    Call(Reg, MethodId, Vec<Reg>),
    JumpLoop,
}

impl PrimOp {
    pub fn dst(&self) -> Option<Reg> {
        match *self {
            PrimOp::IntAdd(d, ..)
            | PrimOp::IntSub(d, ..)
            | PrimOp::IntMul(d, ..)
            | PrimOp::IntMod(d, ..)
            | PrimOp::IntLe(d, ..)
            | PrimOp::IntLt(d, ..)
            | PrimOp::IntEq(d, ..)
            | PrimOp::ConstInt(d, _)
            | PrimOp::Const(d, _)
            | PrimOp::GetLocal(d, _)
            | PrimOp::ArrNew(d, _)
            | PrimOp::ArrGet(d, ..)
            | PrimOp::ArrLen(d, _)
            | PrimOp::Call(d, ..) => Some(d),
            _ => None,
        }
    }

    pub fn uses(&self) -> Vec<Reg> {
        match self {
            PrimOp::IntAdd(_, a, b)
            | PrimOp::IntSub(_, a, b)
            | PrimOp::IntMul(_, a, b)
            | PrimOp::IntMod(_, a, b)
            | PrimOp::IntLe(_, a, b)
            | PrimOp::IntLt(_, a, b)
            | PrimOp::IntEq(_, a, b)
            | PrimOp::ArrGet(_, a, b) => vec![*a, *b],
            PrimOp::ArrSet(a, i, v) => vec![*a, *i, *v],
            PrimOp::SetLocal(_, r)
            | PrimOp::ArrNew(_, r)
            | PrimOp::ArrLen(_, r)
            | PrimOp::ArrFill(r, _)
            | PrimOp::ArrClear(r)
            | PrimOp::Print(r)
            | PrimOp::GuardTrue(r, _)
            | PrimOp::GuardFalse(r, _)
            | PrimOp::GuardMethod(r, ..) => vec![*r],
            PrimOp::Call(_, _, args) => args.clone(),
            PrimOp::ConstInt(..) | PrimOp::Const(..) | PrimOp::GetLocal(..) | PrimOp::JumpLoop => {
                vec![]
            }
        }
    }

    pub fn exit(&self) -> Option<u32> {
        match *self {
            PrimOp::GuardTrue(_, e) | PrimOp::GuardFalse(_, e) | PrimOp::GuardMethod(_, _, e) => {
                Some(e)
            }
            _ => None,
        }
    }

    pub fn is_guard(&self) -> bool {
        self.exit().is_some()
    }

    pub fn name(&self) -> &'static str {
        match self {
            PrimOp::IntAdd(..) => "int_add",
            PrimOp::IntSub(..) => "int_sub",
            PrimOp::IntMul(..) => "int_mul",
            PrimOp::IntMod(..) => "int_mod",
            PrimOp::IntLe(..) => "int_le",
            PrimOp::IntLt(..) => "int_lt",
            PrimOp::IntEq(..) => "int_eq",
            PrimOp::ConstInt(..) => "const_int",
            PrimOp::Const(..) => "const",
            PrimOp::GetLocal(..) => "getlocal",
            PrimOp::SetLocal(..) => "setlocal",
            PrimOp::ArrNew(..) => "new_array",
            PrimOp::ArrGet(..) => "getarrayitem",
            PrimOp::ArrSet(..) => "setarrayitem",
            PrimOp::ArrLen(..) => "arraylen",
            PrimOp::ArrFill(..) => "fillarray",
            PrimOp::ArrClear(..) => "cleararray",
            PrimOp::Print(..) => "print",
            PrimOp::GuardTrue(..) => "guard_true",
            PrimOp::GuardFalse(..) => "guard_false",
            PrimOp::GuardMethod(..) => "guard_method",
            PrimOp::Call(..) => "call",
            PrimOp::JumpLoop => "jump",
        }
    }
}

/// Bytecode position an op was recorded from; errors raised by the op are
/// reported there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub method: MethodId,
    pub pc: usize,
}

/// One interpreter frame to rebuild on a guard exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitFrame {
    pub method: MethodId,
    /// Resume pc for the innermost frame; the pending call for the others.
    pub pc: usize,
    pub locals: Vec<Sym>,
    pub stack: Vec<Sym>,
}

#[derive(Debug, Clone)]
pub struct ExitDescriptor {
    /// Anchor frame first, innermost inlined frame last.
    pub frames: Vec<ExitFrame>,
    pub count: Cell<u64>,
}

impl ExitDescriptor {
    pub fn resume_pc(&self) -> usize {
        self.frames.last().expect("exit has a frame").pc
    }

    pub fn regs(&self) -> impl Iterator<Item = Reg> + '_ {
        self.frames
            .iter()
            .flat_map(|f| f.locals.iter().chain(f.stack.iter()))
            .filter_map(|s| match s {
                Sym::Reg(r) => Some(*r),
                Sym::Slot(_) => None,
            })
    }
}

#[derive(Debug, Clone)]
pub struct LoopCode {
    pub anchor: (MethodId, usize),
    /// Ends in `JumpLoop`.
    pub ops: Vec<PrimOp>,
    /// Parallel to `ops`.
    pub origins: Vec<Origin>,
    pub exits: Vec<ExitDescriptor>,
    pub num_regs: u32,
    /// Operand-stack depth of the anchor frame at the loop header.
    pub stack_depth: usize,
}

impl LoopCode {
    /// Registers loaded from the frame at the top of each iteration.
    pub fn loop_inputs(&self) -> Vec<(Reg, FrameSlot)> {
        self.ops
            .iter()
            .filter_map(|op| match *op {
                PrimOp::GetLocal(r, s) => Some((r, s)),
                _ => None,
            })
            .collect()
    }

    pub fn guard_count(&self) -> usize {
        self.ops.iter().filter(|op| op.is_guard()).count()
    }
}

fn slot_text(s: FrameSlot) -> String {
    match s {
        FrameSlot::Local(i) => format!("{i}"),
        FrameSlot::Stack(j) => format!("s{j}"),
    }
}

/// Listing in the `i3 = int_mod(i0, 42)` style. Integer constants are shown
/// inline at their uses.
pub fn dump_loop(program: &Program, code: &LoopCode) -> String {
    let mut consts = std::collections::HashMap::new();
    for op in &code.ops {
        if let PrimOp::ConstInt(d, v) = op {
            consts.insert(*d, *v);
        }
    }
    let r = |x: &Reg| match consts.get(x) {
        Some(v) => v.to_string(),
        None => format!("i{x}"),
    };
    let (m, pc) = code.anchor;
    let mut out = String::new();
    let _ = writeln!(out, "label(loop) # {}@{pc}", program.method(m).name);
    let mut method = m;
    for (op, origin) in code.ops.iter().zip(&code.origins) {
        if origin.method != method && !matches!(op, PrimOp::ConstInt(..)) {
            method = origin.method;
            let _ = writeln!(out, "# in {}", program.method(method).name);
        }
        let line = match op {
            PrimOp::IntAdd(d, a, b)
            | PrimOp::IntSub(d, a, b)
            | PrimOp::IntMul(d, a, b)
            | PrimOp::IntMod(d, a, b)
            | PrimOp::IntLe(d, a, b)
            | PrimOp::IntLt(d, a, b)
            | PrimOp::IntEq(d, a, b)
            | PrimOp::ArrGet(d, a, b) => format!("i{d} = {}({}, {})", op.name(), r(a), r(b)),
            PrimOp::ConstInt(..) => continue,
            PrimOp::Const(d, v) => format!("i{d} = const({v})"),
            PrimOp::GetLocal(d, s) => format!("i{d} = getlocal(p0, {})", slot_text(*s)),
            PrimOp::SetLocal(s, v) => format!("setlocal(p0, {}, {})", slot_text(*s), r(v)),
            PrimOp::ArrNew(d, n) => format!("i{d} = new_array({})", r(n)),
            PrimOp::ArrSet(a, i, v) => format!("setarrayitem({}, {}, {})", r(a), r(i), r(v)),
            PrimOp::ArrLen(d, a) => format!("i{d} = arraylen({})", r(a)),
            PrimOp::ArrFill(a, v) => format!("fillarray({}, {v})", r(a)),
            PrimOp::ArrClear(a) => format!("cleararray({})", r(a)),
            PrimOp::Print(v) => format!("print({})", r(v)),
            PrimOp::GuardTrue(s, e) | PrimOp::GuardFalse(s, e) => {
                let exit = &code.exits[*e as usize];
                format!(
                    "{}({}) [exit {e} -> @{}]",
                    op.name(),
                    r(s),
                    exit.resume_pc()
                )
            }
            PrimOp::GuardMethod(s, m, e) => {
                format!(
                    "guard_method({}, {}) [exit {e}]",
                    r(s),
                    program.method(*m).name
                )
            }
            PrimOp::Call(d, m, args) => {
                let args: Vec<String> = args.iter().map(r).collect();
                format!(
                    "i{d} = call({}, {})",
                    program.method(*m).name,
                    args.join(", ")
                )
            }
            PrimOp::JumpLoop => "jump(loop)".to_string(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
