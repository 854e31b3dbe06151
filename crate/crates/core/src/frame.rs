//! Activation records.
//!
//! `(code, pc)` is the per-trace constant part of a frame; locals and the
//! operand stack are the varying part. A suspended caller is represented by a
//! frame whose `pc` points at its `CALL` with the arguments already popped.
//! Chains of such frames (innermost first) stand in for caller links whenever
//! execution has to be moved between tiers.

use crate::bytecode::{Instruction, Method};
use crate::value::{MethodId, Value};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frame {
    pub method: MethodId,
    pub pc: usize,
    pub locals: Vec<Value>,
    pub stack: Vec<Value>,
}

impl Default for MethodId {
    fn default() -> Self {
        MethodId(0)
    }
}

impl Frame {
    /// Fresh frame at pc 0 with `args` in the first local slots and the rest nil.
    pub fn new(id: MethodId, method: &Method, args: &[Value]) -> Frame {
        let mut locals = vec![Value::Nil; method.num_locals as usize];
        locals[..args.len()].copy_from_slice(args);
        Frame {
            method: id,
            pc: 0,
            locals,
            stack: Vec::with_capacity(method.max_stack),
        }
    }

    /// Builds a callee frame by moving the top `argc` operands of `self` into
    /// the callee's first locals.
    pub fn call_into(&mut self, id: MethodId, method: &Method, argc: usize) -> Frame {
        let mut locals = vec![Value::Nil; method.num_locals as usize];
        let base = self.stack.len() - argc;
        locals[..argc].copy_from_slice(&self.stack[base..]);
        self.stack.truncate(base);
        Frame {
            method: id,
            pc: 0,
            locals,
            stack: Vec::with_capacity(method.max_stack),
        }
    }

    #[inline]
    pub fn push(&mut self, v: Value) {
        self.stack.push(v);
    }

    #[inline]
    pub fn pop(&mut self) -> Value {
        self.stack
            .pop()
            .expect("operand stack underflow in validated code")
    }

    #[inline]
    pub fn peek(&self) -> Value {
        *self
            .stack
            .last()
            .expect("operand stack underflow in validated code")
    }

    /// Whether the stack depth agrees with the validator's map. A suspended
    /// frame sits on a call instruction whose operands were already popped.
    pub fn is_consistent(&self, method: &Method, suspended: bool) -> bool {
        if self.pc >= method.code.len() || self.locals.len() != method.num_locals as usize {
            return false;
        }
        let Some(depth) = method.depth_at(self.pc) else {
            return false;
        };
        if suspended {
            let ins = method.code[self.pc];
            if !matches!(ins, Instruction::Call { .. } | Instruction::CallValue(_)) {
                return false;
            }
            self.stack.len() + ins.stack_effect().0 == depth
        } else {
            self.stack.len() == depth
        }
    }
}
