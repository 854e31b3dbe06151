//! Running loop code against a live interpreter frame.

use crate::error::{ErrorKind, Tier};
use crate::frame::Frame;
use crate::value::{arith, Value};
use crate::vm::{Unwind, Vm};

use super::{ExitDescriptor, FrameSlot, LoopCode, PrimOp, Sym};

#[derive(Debug)]
pub enum LoopExit {
    /// A guard failed. The anchor frame has been rebuilt in place; `inner`
    /// holds rebuilt inlined callee frames, innermost first.
    Guard { exit: usize, inner: Vec<Frame> },
    /// The iteration budget ran out at the loop header.
    Budget,
}

fn read(frame: &Frame, slot: FrameSlot) -> Value {
    match slot {
        FrameSlot::Local(i) => frame.locals[i as usize],
        FrameSlot::Stack(j) => frame.stack[j as usize],
    }
}

fn write(frame: &mut Frame, slot: FrameSlot, v: Value) {
    match slot {
        FrameSlot::Local(i) => frame.locals[i as usize] = v,
        FrameSlot::Stack(j) => frame.stack[j as usize] = v,
    }
}

/// Rebuilds interpreter frames from an exit. Every symbol is resolved before
/// the anchor frame is overwritten.
fn take_exit(exit: &ExitDescriptor, regs: &[Value], frame: &mut Frame) -> Vec<Frame> {
    exit.count.set(exit.count.get() + 1);
    let resolve = |s: &Sym| match *s {
        Sym::Reg(r) => regs[r as usize],
        Sym::Slot(slot) => read(frame, slot),
    };
    let mut rebuilt: Vec<Frame> = exit
        .frames
        .iter()
        .map(|f| Frame {
            method: f.method,
            pc: f.pc,
            locals: f.locals.iter().map(resolve).collect(),
            stack: f.stack.iter().map(resolve).collect(),
        })
        .collect();
    let mut inner = rebuilt.split_off(1);
    *frame = rebuilt.pop().expect("anchor frame");
    inner.reverse();
    inner
}

/// Runs `code` from the loop header until a guard fails, or for at most
/// `budget` iterations when one is given.
pub fn execute_loop(
    vm: &mut Vm,
    code: &LoopCode,
    frame: &mut Frame,
    budget: Option<u64>,
) -> Result<LoopExit, Unwind> {
    let mut regs = vec![Value::Nil; code.num_regs as usize];
    let mut iterations = 0u64;
    loop {
        if budget.is_some_and(|b| iterations >= b) {
            return Ok(LoopExit::Budget);
        }
        for (i, op) in code.ops.iter().enumerate() {
            let fail = |vm: &Vm, k: ErrorKind| {
                let o = code.origins[i];
                vm.error(k, o.method, o.pc, Tier::LoopCode)
            };
            macro_rules! int {
                ($r:expr) => {
                    regs[*$r as usize].as_int().map_err(|k| fail(&*vm, k))?
                };
            }
            macro_rules! arr {
                ($r:expr) => {
                    regs[*$r as usize].as_array().map_err(|k| fail(&*vm, k))?
                };
            }
            match op {
                PrimOp::IntAdd(d, a, b) => {
                    let v = arith::add(int!(a), int!(b)).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Int(v);
                }
                PrimOp::IntSub(d, a, b) => {
                    let v = arith::sub(int!(a), int!(b)).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Int(v);
                }
                PrimOp::IntMul(d, a, b) => {
                    let v = arith::mul(int!(a), int!(b)).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Int(v);
                }
                PrimOp::IntMod(d, a, b) => {
                    let v = arith::modulo(int!(a), int!(b)).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Int(v);
                }
                PrimOp::IntLe(d, a, b) => {
                    let (x, y) = (int!(a), int!(b));
                    regs[*d as usize] = Value::Bool(x <= y);
                }
                PrimOp::IntLt(d, a, b) => {
                    let (x, y) = (int!(a), int!(b));
                    regs[*d as usize] = Value::Bool(x < y);
                }
                PrimOp::IntEq(d, a, b) => {
                    regs[*d as usize] = Value::Bool(regs[*a as usize] == regs[*b as usize]);
                }
                PrimOp::ConstInt(d, v) => regs[*d as usize] = Value::Int(*v),
                PrimOp::Const(d, v) => regs[*d as usize] = *v,
                PrimOp::GetLocal(d, slot) => regs[*d as usize] = read(frame, *slot),
                PrimOp::SetLocal(slot, s) => write(frame, *slot, regs[*s as usize]),
                PrimOp::ArrNew(d, n) => {
                    let a = vm.store.heap.alloc(int!(n)).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Array(a);
                }
                PrimOp::ArrGet(d, a, i) => {
                    let (a, i) = (arr!(a), int!(i));
                    let v = vm.store.heap.get(a, i).map_err(|k| fail(&*vm, k))?;
                    regs[*d as usize] = Value::Int(v);
                }
                PrimOp::ArrSet(a, i, v) => {
                    let (a, i, v) = (arr!(a), int!(i), int!(v));
                    vm.store.heap.set(a, i, v).map_err(|k| fail(&*vm, k))?;
                }
                PrimOp::ArrLen(d, a) => {
                    let a = arr!(a);
                    regs[*d as usize] = Value::Int(vm.store.heap.len(a) as i64);
                }
                PrimOp::ArrFill(a, v) => {
                    let a = arr!(a);
                    vm.store.heap.fill(a, *v);
                }
                PrimOp::ArrClear(a) => {
                    let a = arr!(a);
                    vm.store.heap.clear(a);
                }
                PrimOp::Print(s) => {
                    use std::fmt::Write;
                    let _ = writeln!(vm.store.output, "{}", regs[*s as usize]);
                }
                PrimOp::GuardTrue(s, e) | PrimOp::GuardFalse(s, e) => {
                    let want = matches!(op, PrimOp::GuardTrue(..));
                    let t = regs[*s as usize].truthy().map_err(|k| fail(&*vm, k))?;
                    if t != want {
                        let inner = take_exit(&code.exits[*e as usize], &regs, frame);
                        return Ok(LoopExit::Guard {
                            exit: *e as usize,
                            inner,
                        });
                    }
                }
                PrimOp::GuardMethod(s, expected, e) => {
                    if regs[*s as usize] != Value::Method(*expected) {
                        let inner = take_exit(&code.exits[*e as usize], &regs, frame);
                        return Ok(LoopExit::Guard {
                            exit: *e as usize,
                            inner,
                        });
                    }
                }
                PrimOp::Call(d, callee, args) => {
                    let method = vm.program.method(*callee);
                    let argv: Vec<Value> = args.iter().map(|r| regs[*r as usize]).collect();
                    let callee_frame = Frame::new(*callee, method, &argv);
                    vm.counters.indirect_calls += 1;
                    regs[*d as usize] = vm.invoke(callee_frame)?;
                }
                PrimOp::JumpLoop => {
                    iterations += 1;
                    vm.counters.loop_iterations += 1;
                }
            }
        }
    }
}
