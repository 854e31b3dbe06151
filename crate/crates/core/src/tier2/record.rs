//! Concrete trace recording of one loop iteration.
//!
//! Every instruction is executed for real through its handler, exactly as
//! the heavyweight interpreter would, while a shadow copy of each frame maps
//! stack and local slots to symbolic values. Recording stops when the anchor
//! frame takes its back edge to the loop header; the program state is then
//! the same as after one interpreted iteration.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::bytecode::Instruction;
use crate::error::{ErrorKind, Tier};
use crate::frame::Frame;
use crate::handlers::{handler_for, operand, Outcome};
use crate::value::{MethodId, Value};
use crate::vm::{Unwind, Vm};

use super::{ExitDescriptor, ExitFrame, FrameSlot, LoopCode, Origin, PrimOp, Reg, Sym};

pub enum Recording {
    /// The anchor frame is back at the header with one iteration done.
    Closed(LoopCode),
    /// Recording gave up before executing the instruction each frame sits
    /// on. Holds the inlined callee frames, innermost first.
    Aborted {
        reason: &'static str,
        inner: Vec<Frame>,
    },
}

struct ShadowFrame {
    method: MethodId,
    /// Pending call pc while a callee is inlined.
    pc: usize,
    locals: Vec<Sym>,
    stack: Vec<Sym>,
}

struct Recorder {
    ops: Vec<PrimOp>,
    origins: Vec<Origin>,
    exits: Vec<ExitDescriptor>,
    next_reg: Reg,
    slot_regs: HashMap<FrameSlot, Reg>,
    int_consts: HashMap<i64, Reg>,
    nil: Option<Reg>,
    shadow: Vec<ShadowFrame>,
    origin: Origin,
}

impl Recorder {
    fn emit(&mut self, op: PrimOp) {
        self.ops.push(op);
        self.origins.push(self.origin);
    }

    fn fresh(&mut self) -> Reg {
        let r = self.next_reg;
        self.next_reg += 1;
        r
    }

    fn materialize(&mut self, s: Sym) -> Reg {
        match s {
            Sym::Reg(r) => r,
            Sym::Slot(slot) => {
                if let Some(&r) = self.slot_regs.get(&slot) {
                    return r;
                }
                let r = self.fresh();
                self.emit(PrimOp::GetLocal(r, slot));
                self.slot_regs.insert(slot, r);
                r
            }
        }
    }

    fn const_int(&mut self, v: i64) -> Reg {
        if let Some(&r) = self.int_consts.get(&v) {
            return r;
        }
        let r = self.fresh();
        self.emit(PrimOp::ConstInt(r, v));
        self.int_consts.insert(v, r);
        r
    }

    fn nil(&mut self) -> Reg {
        if let Some(r) = self.nil {
            return r;
        }
        let r = self.fresh();
        self.emit(PrimOp::Const(r, Value::Nil));
        self.nil = Some(r);
        r
    }

    fn top(&mut self) -> &mut ShadowFrame {
        self.shadow.last_mut().expect("shadow frame")
    }

    fn pop(&mut self) -> Sym {
        self.top()
            .stack
            .pop()
            .expect("shadow stack mirrors a validated stack")
    }

    fn pop_reg(&mut self) -> Reg {
        let s = self.pop();
        self.materialize(s)
    }

    fn push(&mut self, s: Sym) {
        self.top().stack.push(s);
    }

    fn binary(&mut self, make: fn(Reg, Reg, Reg) -> PrimOp) {
        let b = self.pop_reg();
        let a = self.pop_reg();
        let d = self.fresh();
        self.emit(make(d, a, b));
        self.push(Sym::Reg(d));
    }

    /// Exit state from the current shadow, resuming the innermost frame at `pc`.
    fn exit(&mut self, pc: usize) -> u32 {
        let n = self.shadow.len();
        let frames = self
            .shadow
            .iter()
            .enumerate()
            .map(|(k, s)| ExitFrame {
                method: s.method,
                pc: if k + 1 == n { pc } else { s.pc },
                locals: s.locals.clone(),
                stack: s.stack.clone(),
            })
            .collect();
        self.exits.push(ExitDescriptor {
            frames,
            count: Cell::new(0),
        });
        (self.exits.len() - 1) as u32
    }
}

/// Records one iteration of the loop whose header `frame` is paused at.
pub fn record_loop(vm: &mut Vm, frame: &mut Frame) -> Result<Recording, Unwind> {
    let program = Arc::clone(&vm.program);
    let header = frame.pc;
    let anchor = frame.method;
    let limit = vm.config.tier2_trace_limit;
    let inline_depth = vm.config.inline_depth;
    let mut rec = Recorder {
        ops: Vec::new(),
        origins: Vec::new(),
        exits: Vec::new(),
        next_reg: 0,
        slot_regs: HashMap::new(),
        int_consts: HashMap::new(),
        nil: None,
        shadow: vec![ShadowFrame {
            method: anchor,
            pc: header,
            locals: (0..frame.locals.len() as u32)
                .map(|i| Sym::Slot(FrameSlot::Local(i)))
                .collect(),
            stack: (0..frame.stack.len() as u32)
                .map(|j| Sym::Slot(FrameSlot::Stack(j)))
                .collect(),
        }],
        origin: Origin {
            method: anchor,
            pc: header,
        },
    };
    let mut inner: Vec<Frame> = Vec::new();

    macro_rules! abort {
        ($reason:expr) => {{
            inner.reverse();
            return Ok(Recording::Aborted {
                reason: $reason,
                inner,
            });
        }};
    }

    loop {
        if rec.ops.len() > limit {
            abort!("trace too long");
        }
        let depth = inner.len();
        let cur: &mut Frame = match inner.last_mut() {
            Some(f) => f,
            None => &mut *frame,
        };
        let m = cur.method;
        let pc = cur.pc;
        let ins = program.method(m).code[pc];
        rec.origin = Origin { method: m, pc };

        match ins {
            Instruction::Halt => abort!("halt inside loop"),
            Instruction::Ret if depth == 0 => abort!("return from anchor frame"),
            Instruction::JumpBackward(t) => {
                if depth > 0 || m != anchor || t != header {
                    abort!("inner loop");
                }
                vm.counters.dispatches += 1;
                vm.profile.backedge[m.index()][pc] += 1;
                frame.pc = t;
                return Ok(Recording::Closed(close_loop(rec, anchor, header)));
            }
            _ => {}
        }

        vm.counters.dispatches += 1;
        let op = ins.opcode();
        if !op.is_control() {
            vm.counters.handler_calls += 1;
        }
        let outcome = handler_for(op)(cur, operand(&ins), &mut vm.store)
            .map_err(|k| vm.error(k, m, pc, Tier::TraceRecorder))?;

        match ins {
            Instruction::ConstInt(v) => {
                let r = rec.const_int(v);
                rec.push(Sym::Reg(r));
            }
            Instruction::LoadLocal(i) => {
                let s = rec.top().locals[i as usize];
                rec.push(s);
            }
            Instruction::StoreLocal(i) => {
                let s = rec.pop();
                rec.top().locals[i as usize] = s;
            }
            Instruction::Dup => {
                let s = *rec.top().stack.last().expect("validated stack");
                rec.push(s);
            }
            Instruction::Pop => {
                rec.pop();
            }
            Instruction::Add => rec.binary(PrimOp::IntAdd),
            Instruction::Sub => rec.binary(PrimOp::IntSub),
            Instruction::Mul => rec.binary(PrimOp::IntMul),
            Instruction::Mod => rec.binary(PrimOp::IntMod),
            Instruction::Le => rec.binary(PrimOp::IntLe),
            Instruction::Lt => rec.binary(PrimOp::IntLt),
            Instruction::Eq => rec.binary(PrimOp::IntEq),
            Instruction::Jump(_) => {}
            Instruction::JumpIfTrue(t) | Instruction::JumpIfFalse(t) => {
                let c = rec.pop_reg();
                let jumped = matches!(outcome, Outcome::Jump(_));
                let truthy = jumped == matches!(ins, Instruction::JumpIfTrue(_));
                let other = if jumped { pc + 1 } else { t };
                let e = rec.exit(other);
                rec.emit(if truthy {
                    PrimOp::GuardTrue(c, e)
                } else {
                    PrimOp::GuardFalse(c, e)
                });
            }
            Instruction::PushMethod(callee) => {
                let r = rec.fresh();
                rec.emit(PrimOp::Const(r, Value::Method(callee)));
                rec.push(Sym::Reg(r));
            }
            Instruction::Call { .. } | Instruction::CallValue(_) => {
                let Outcome::Call { callee, argc } = outcome else {
                    unreachable!("call handlers yield calls")
                };
                if let Instruction::CallValue(_) = ins {
                    let slot = rec.top().stack.len() - argc as usize - 1;
                    let msym = rec.top().stack[slot];
                    let rm = rec.materialize(msym);
                    let e = rec.exit(pc);
                    rec.emit(PrimOp::GuardMethod(rm, callee, e));
                    rec.top().stack.remove(slot);
                }
                let target = program.method(callee);
                if target.arg_count != argc {
                    return Err(vm.error(
                        ErrorKind::Arity {
                            callee: target.name.clone(),
                            expected: target.arg_count,
                            got: argc,
                        },
                        m,
                        pc,
                        Tier::TraceRecorder,
                    ));
                }
                vm.counters.indirect_calls += 1;
                vm.profile.method_entry[callee.index()] += 1;
                if vm.depth + depth >= vm.config.max_call_depth {
                    return Err(vm.error(
                        ErrorKind::StackOverflow(vm.config.max_call_depth),
                        callee,
                        0,
                        Tier::TraceRecorder,
                    ));
                }
                let base = rec.top().stack.len() - argc as usize;
                let args: Vec<Sym> = rec.top().stack.drain(base..).collect();
                let callee_frame = cur.call_into(callee, target, argc as usize);
                if depth < inline_depth {
                    let mut locals = args;
                    if target.num_locals as usize > locals.len() {
                        let nil = Sym::Reg(rec.nil());
                        locals.resize(target.num_locals as usize, nil);
                    }
                    rec.top().pc = pc;
                    rec.shadow.push(ShadowFrame {
                        method: callee,
                        pc: 0,
                        locals,
                        stack: Vec::new(),
                    });
                    inner.push(callee_frame);
                    continue;
                }
                let regs: Vec<Reg> = args.into_iter().map(|s| rec.materialize(s)).collect();
                let d = rec.fresh();
                rec.emit(PrimOp::Call(d, callee, regs));
                vm.depth += depth;
                let r = vm.invoke(callee_frame);
                vm.depth -= depth;
                let v = r?;
                let cur: &mut Frame = match inner.last_mut() {
                    Some(f) => f,
                    None => &mut *frame,
                };
                cur.push(v);
                cur.pc = pc + 1;
                rec.push(Sym::Reg(d));
                continue;
            }
            Instruction::Ret => {
                let Outcome::Return(v) = outcome else {
                    unreachable!("RET yields a return")
                };
                let s = rec.pop();
                rec.shadow.pop();
                rec.push(s);
                inner.pop();
                let caller: &mut Frame = match inner.last_mut() {
                    Some(f) => f,
                    None => &mut *frame,
                };
                caller.push(v);
                caller.pc += 1;
                continue;
            }
            Instruction::ArrayNew => {
                let n = rec.pop_reg();
                let d = rec.fresh();
                rec.emit(PrimOp::ArrNew(d, n));
                rec.push(Sym::Reg(d));
            }
            Instruction::ArrayAt => {
                let i = rec.pop_reg();
                let a = rec.pop_reg();
                let d = rec.fresh();
                rec.emit(PrimOp::ArrGet(d, a, i));
                rec.push(Sym::Reg(d));
            }
            Instruction::ArrayAtPut => {
                let v = rec.pop_reg();
                let i = rec.pop_reg();
                let a = rec.pop_reg();
                rec.emit(PrimOp::ArrSet(a, i, v));
            }
            Instruction::ArrayLen => {
                let a = rec.pop_reg();
                let d = rec.fresh();
                rec.emit(PrimOp::ArrLen(d, a));
                rec.push(Sym::Reg(d));
            }
            Instruction::ArrayFill(v) => {
                let a = rec.pop_reg();
                rec.emit(PrimOp::ArrFill(a, v));
                rec.push(Sym::Reg(a));
            }
            Instruction::ArrayClear => {
                let a = rec.pop_reg();
                rec.emit(PrimOp::ArrClear(a));
            }
            Instruction::Print => {
                let v = rec.pop_reg();
                rec.emit(PrimOp::Print(v));
            }
            Instruction::Halt | Instruction::JumpBackward(_) => unreachable!("handled above"),
        }

        let cur: &mut Frame = match inner.last_mut() {
            Some(f) => f,
            None => &mut *frame,
        };
        match outcome {
            Outcome::Jump(t) => cur.pc = t,
            _ => cur.pc = pc + 1,
        }
    }
}

/// Writes back every anchor slot whose value changed and closes the loop.
/// All reads happen before the first write, so each read sees the value
/// from the start of the iteration.
fn close_loop(mut rec: Recorder, anchor: MethodId, header: usize) -> LoopCode {
    rec.origin = Origin {
        method: anchor,
        pc: header,
    };
    let sh = &rec.shadow[0];
    let mut writes: Vec<(FrameSlot, Sym)> = Vec::new();
    for (i, s) in sh.locals.iter().enumerate() {
        let slot = FrameSlot::Local(i as u32);
        if *s != Sym::Slot(slot) {
            writes.push((slot, *s));
        }
    }
    for (j, s) in sh.stack.iter().enumerate() {
        let slot = FrameSlot::Stack(j as u32);
        if *s != Sym::Slot(slot) {
            writes.push((slot, *s));
        }
    }
    let stack_depth = sh.stack.len();
    let regs: Vec<(FrameSlot, Reg)> = writes
        .into_iter()
        .map(|(slot, s)| (slot, rec.materialize(s)))
        .collect();
    for (slot, r) in regs {
        rec.emit(PrimOp::SetLocal(slot, r));
    }
    rec.emit(PrimOp::JumpLoop);
    LoopCode {
        anchor: (anchor, header),
        ops: rec.ops,
        origins: rec.origins,
        exits: rec.exits,
        num_regs: rec.next_reg,
        stack_depth,
    }
}
