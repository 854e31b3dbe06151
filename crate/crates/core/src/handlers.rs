//! One handler function per opcode.
//!
//! Handlers never fetch or decode; the caller supplies the already-decoded
//! immediate. The interpreter loops, threaded code, and the trace recorder
//! all call into this table, so opcode semantics live in exactly one place.

use crate::bytecode::{Instruction, Opcode};
use crate::error::ErrorKind;
use crate::frame::Frame;
use crate::value::{arith, Heap, MethodId, Value};

/// Mutable state shared by every frame of a run.
#[derive(Debug, Clone, Default)]
pub struct Store {
    pub heap: Heap,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Continue,
    Jump(usize),
    Return(Value),
    /// Arguments are still on the caller's stack; the driver performs the call.
    Call {
        callee: MethodId,
        argc: u32,
    },
    Halt(Value),
}

pub type Handler = fn(&mut Frame, i64, &mut Store) -> Result<Outcome, ErrorKind>;

/// Packs an instruction's operands into the handler immediate.
pub fn operand(ins: &Instruction) -> i64 {
    match *ins {
        Instruction::Call { callee, argc } => ((callee.0 as i64) << 32) | argc as i64,
        other => other.immediate(),
    }
}

pub fn handler_for(op: Opcode) -> Handler {
    match op {
        Opcode::ConstInt => handler_const_int,
        Opcode::LoadLocal => handler_load_local,
        Opcode::StoreLocal => handler_store_local,
        Opcode::Dup => handler_dup,
        Opcode::Pop => handler_pop,
        Opcode::Add => handler_add,
        Opcode::Sub => handler_sub,
        Opcode::Mul => handler_mul,
        Opcode::Mod => handler_mod,
        Opcode::Le => handler_le,
        Opcode::Lt => handler_lt,
        Opcode::Eq => handler_eq,
        Opcode::Jump => handler_jump,
        Opcode::JumpIfTrue => handler_jump_if_true,
        Opcode::JumpIfFalse => handler_jump_if_false,
        Opcode::JumpBackward => handler_jump,
        Opcode::Call => handler_call,
        Opcode::PushMethod => handler_push_method,
        Opcode::CallValue => handler_call_value,
        Opcode::Ret => handler_ret,
        Opcode::ArrayNew => handler_array_new,
        Opcode::ArrayAt => handler_array_at,
        Opcode::ArrayAtPut => handler_array_at_put,
        Opcode::ArrayLen => handler_array_len,
        Opcode::ArrayFill => handler_array_fill,
        Opcode::ArrayClear => handler_array_clear,
        Opcode::Print => handler_print,
        Opcode::Halt => handler_halt,
    }
}

pub fn handler_const_int(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    f.push(Value::Int(imm));
    Ok(Outcome::Continue)
}

pub fn handler_load_local(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let v = f.locals[imm as usize];
    f.push(v);
    Ok(Outcome::Continue)
}

pub fn handler_store_local(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let v = f.pop();
    f.locals[imm as usize] = v;
    Ok(Outcome::Continue)
}

pub fn handler_dup(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let v = f.peek();
    f.push(v);
    Ok(Outcome::Continue)
}

pub fn handler_pop(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    f.pop();
    Ok(Outcome::Continue)
}

#[inline]
fn int_pair(f: &mut Frame) -> Result<(i64, i64), ErrorKind> {
    let b = f.pop();
    let a = f.pop();
    Ok((a.as_int()?, b.as_int()?))
}

pub fn handler_add(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Int(arith::add(a, b)?));
    Ok(Outcome::Continue)
}

pub fn handler_sub(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Int(arith::sub(a, b)?));
    Ok(Outcome::Continue)
}

pub fn handler_mul(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Int(arith::mul(a, b)?));
    Ok(Outcome::Continue)
}

pub fn handler_mod(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Int(arith::modulo(a, b)?));
    Ok(Outcome::Continue)
}

pub fn handler_le(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Bool(a <= b));
    Ok(Outcome::Continue)
}

pub fn handler_lt(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let (a, b) = int_pair(f)?;
    f.push(Value::Bool(a < b));
    Ok(Outcome::Continue)
}

/// Structural equality on any pair of values.
pub fn handler_eq(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let b = f.pop();
    let a = f.pop();
    f.push(Value::Bool(a == b));
    Ok(Outcome::Continue)
}

pub fn handler_jump(_: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    Ok(Outcome::Jump(imm as usize))
}

pub fn handler_jump_if_true(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    if f.pop().truthy()? {
        Ok(Outcome::Jump(imm as usize))
    } else {
        Ok(Outcome::Continue)
    }
}

pub fn handler_jump_if_false(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    if f.pop().truthy()? {
        Ok(Outcome::Continue)
    } else {
        Ok(Outcome::Jump(imm as usize))
    }
}

pub fn handler_call(_: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    Ok(Outcome::Call {
        callee: MethodId((imm >> 32) as u32),
        argc: imm as u32,
    })
}

pub fn handler_push_method(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    f.push(Value::Method(MethodId(imm as u32)));
    Ok(Outcome::Continue)
}

/// The method value sits below the arguments.
pub fn handler_call_value(f: &mut Frame, imm: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    let argc = imm as usize;
    let slot = f.stack.len() - argc - 1;
    let callee = f.stack[slot].as_method()?;
    f.stack.remove(slot);
    Ok(Outcome::Call {
        callee,
        argc: argc as u32,
    })
}

pub fn handler_ret(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    Ok(Outcome::Return(f.pop()))
}

pub fn handler_array_new(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let n = f.pop().as_int()?;
    let a = s.heap.alloc(n)?;
    f.push(Value::Array(a));
    Ok(Outcome::Continue)
}

pub fn handler_array_at(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let idx = f.pop();
    let arr = f.pop().as_array()?;
    let v = s.heap.get(arr, idx.as_int()?)?;
    f.push(Value::Int(v));
    Ok(Outcome::Continue)
}

pub fn handler_array_at_put(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let v = f.pop();
    let idx = f.pop();
    let arr = f.pop().as_array()?;
    let idx = idx.as_int()?;
    s.heap.set(arr, idx, v.as_int()?)?;
    Ok(Outcome::Continue)
}

pub fn handler_array_len(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let arr = f.pop().as_array()?;
    f.push(Value::Int(s.heap.len(arr) as i64));
    Ok(Outcome::Continue)
}

pub fn handler_array_fill(f: &mut Frame, imm: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let arr = f.peek().as_array()?;
    s.heap.fill(arr, imm);
    Ok(Outcome::Continue)
}

pub fn handler_array_clear(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    let arr = f.pop().as_array()?;
    s.heap.clear(arr);
    Ok(Outcome::Continue)
}

pub fn handler_print(f: &mut Frame, _: i64, s: &mut Store) -> Result<Outcome, ErrorKind> {
    use std::fmt::Write;
    let v = f.pop();
    let _ = writeln!(s.output, "{v}");
    Ok(Outcome::Continue)
}

/// Ends the whole run with the top of stack, or nil on an empty stack.
pub fn handler_halt(f: &mut Frame, _: i64, _: &mut Store) -> Result<Outcome, ErrorKind> {
    Ok(Outcome::Halt(f.stack.last().copied().unwrap_or(Value::Nil)))
}
