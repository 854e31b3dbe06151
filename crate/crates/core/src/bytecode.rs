//! Instruction set, methods, programs and the stack-balance validator.

use std::collections::HashMap;
use std::fmt;

use crate::error::ValidationError;
use crate::value::MethodId;

/// Opcode without operands. Used for handler tables and trace listings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    ConstInt,
    LoadLocal,
    StoreLocal,
    Dup,
    Pop,
    Add,
    Sub,
    Mul,
    Mod,
    Le,
    Lt,
    Eq,
    Jump,
    JumpIfTrue,
    JumpIfFalse,
    JumpBackward,
    Call,
    PushMethod,
    CallValue,
    Ret,
    ArrayNew,
    ArrayAt,
    ArrayAtPut,
    ArrayLen,
    ArrayFill,
    ArrayClear,
    Print,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 28] = [
        Opcode::ConstInt,
        Opcode::LoadLocal,
        Opcode::StoreLocal,
        Opcode::Dup,
        Opcode::Pop,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Mod,
        Opcode::Le,
        Opcode::Lt,
        Opcode::Eq,
        Opcode::Jump,
        Opcode::JumpIfTrue,
        Opcode::JumpIfFalse,
        Opcode::JumpBackward,
        Opcode::Call,
        Opcode::PushMethod,
        Opcode::CallValue,
        Opcode::Ret,
        Opcode::ArrayNew,
        Opcode::ArrayAt,
        Opcode::ArrayAtPut,
        Opcode::ArrayLen,
        Opcode::ArrayFill,
        Opcode::ArrayClear,
        Opcode::Print,
        Opcode::Halt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::ConstInt => "CONST_INT",
            Opcode::LoadLocal => "LOAD_LOCAL",
            Opcode::StoreLocal => "STORE_LOCAL",
            Opcode::Dup => "DUP",
            Opcode::Pop => "POP",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Mod => "MOD",
            Opcode::Le => "LE",
            Opcode::Lt => "LT",
            Opcode::Eq => "EQ",
            Opcode::Jump => "JUMP",
            Opcode::JumpIfTrue => "JUMP_IF_TRUE",
            Opcode::JumpIfFalse => "JUMP_IF_FALSE",
            Opcode::JumpBackward => "JUMP_BACKWARD",
            Opcode::Call => "CALL",
            Opcode::PushMethod => "PUSH_METHOD",
            Opcode::CallValue => "CALL_VALUE",
            Opcode::Ret => "RET",
            Opcode::ArrayNew => "ARRAY_NEW",
            Opcode::ArrayAt => "ARRAY_AT",
            Opcode::ArrayAtPut => "ARRAY_AT_PUT",
            Opcode::ArrayLen => "ARRAY_LEN",
            Opcode::ArrayFill => "ARRAY_FILL",
            Opcode::ArrayClear => "ARRAY_CLEAR",
            Opcode::Print => "PRINT",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_name(name: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.name() == name)
    }

    /// Control opcodes are realized as guards/jumps/returns in compiled code
    /// rather than handler invocations.
    pub fn is_control(self) -> bool {
        matches!(
            self,
            Opcode::Jump
                | Opcode::JumpIfTrue
                | Opcode::JumpIfFalse
                | Opcode::JumpBackward
                | Opcode::Ret
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    ConstInt(i64),
    LoadLocal(u32),
    StoreLocal(u32),
    Dup,
    Pop,
    Add,
    Sub,
    Mul,
    Mod,
    Le,
    Lt,
    Eq,
    Jump(usize),
    JumpIfTrue(usize),
    JumpIfFalse(usize),
    JumpBackward(usize),
    Call {
        callee: MethodId,
        argc: u32,
    },
    /// Pushes a method reference; pairs with `CallValue` for dynamic call sites.
    PushMethod(MethodId),
    /// Calls the method reference sitting below the top `argc` arguments.
    CallValue(u32),
    Ret,
    ArrayNew,
    ArrayAt,
    ArrayAtPut,
    ArrayLen,
    ArrayFill(i64),
    ArrayClear,
    Print,
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::ConstInt(_) => Opcode::ConstInt,
            Instruction::LoadLocal(_) => Opcode::LoadLocal,
            Instruction::StoreLocal(_) => Opcode::StoreLocal,
            Instruction::Dup => Opcode::Dup,
            Instruction::Pop => Opcode::Pop,
            Instruction::Add => Opcode::Add,
            Instruction::Sub => Opcode::Sub,
            Instruction::Mul => Opcode::Mul,
            Instruction::Mod => Opcode::Mod,
            Instruction::Le => Opcode::Le,
            Instruction::Lt => Opcode::Lt,
            Instruction::Eq => Opcode::Eq,
            Instruction::Jump(_) => Opcode::Jump,
            Instruction::JumpIfTrue(_) => Opcode::JumpIfTrue,
            Instruction::JumpIfFalse(_) => Opcode::JumpIfFalse,
            Instruction::JumpBackward(_) => Opcode::JumpBackward,
            Instruction::Call { .. } => Opcode::Call,
            Instruction::PushMethod(_) => Opcode::PushMethod,
            Instruction::CallValue(_) => Opcode::CallValue,
            Instruction::Ret => Opcode::Ret,
            Instruction::ArrayNew => Opcode::ArrayNew,
            Instruction::ArrayAt => Opcode::ArrayAt,
            Instruction::ArrayAtPut => Opcode::ArrayAtPut,
            Instruction::ArrayLen => Opcode::ArrayLen,
            Instruction::ArrayFill(_) => Opcode::ArrayFill,
            Instruction::ArrayClear => Opcode::ArrayClear,
            Instruction::Print => Opcode::Print,
            Instruction::Halt => Opcode::Halt,
        }
    }

    /// The single integer immediate handed to the opcode's handler.
    pub fn immediate(&self) -> i64 {
        match *self {
            Instruction::ConstInt(v) | Instruction::ArrayFill(v) => v,
            Instruction::LoadLocal(i) | Instruction::StoreLocal(i) => i as i64,
            Instruction::Jump(t)
            | Instruction::JumpIfTrue(t)
            | Instruction::JumpIfFalse(t)
            | Instruction::JumpBackward(t) => t as i64,
            Instruction::PushMethod(m) => m.0 as i64,
            Instruction::Call { argc, .. } | Instruction::CallValue(argc) => argc as i64,
            _ => 0,
        }
    }

    pub fn jump_target(&self) -> Option<usize> {
        match *self {
            Instruction::Jump(t)
            | Instruction::JumpIfTrue(t)
            | Instruction::JumpIfFalse(t)
            | Instruction::JumpBackward(t) => Some(t),
            _ => None,
        }
    }

    /// `(pops, pushes)` on the operand stack.
    pub fn stack_effect(&self) -> (usize, usize) {
        match *self {
            Instruction::ConstInt(_) | Instruction::LoadLocal(_) | Instruction::PushMethod(_) => {
                (0, 1)
            }
            Instruction::StoreLocal(_) | Instruction::Pop | Instruction::Print => (1, 0),
            Instruction::Dup => (1, 2),
            Instruction::Add
            | Instruction::Sub
            | Instruction::Mul
            | Instruction::Mod
            | Instruction::Le
            | Instruction::Lt
            | Instruction::Eq => (2, 1),
            Instruction::Jump(_) | Instruction::JumpBackward(_) | Instruction::Halt => (0, 0),
            Instruction::JumpIfTrue(_) | Instruction::JumpIfFalse(_) => (1, 0),
            Instruction::Call { argc, .. } => (argc as usize, 1),
            Instruction::CallValue(argc) => (argc as usize + 1, 1),
            Instruction::Ret => (1, 0),
            Instruction::ArrayNew | Instruction::ArrayLen | Instruction::ArrayFill(_) => (1, 1),
            Instruction::ArrayAt => (2, 1),
            Instruction::ArrayAtPut => (3, 0),
            Instruction::ArrayClear => (1, 0),
        }
    }

    /// Whether control can continue at `pc + 1`.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            Instruction::Jump(_)
                | Instruction::JumpBackward(_)
                | Instruction::Ret
                | Instruction::Halt
        )
    }

    /// Successor pcs in the method's control-flow graph.
    pub fn successors(&self, pc: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        if self.falls_through() {
            out.push(pc + 1);
        }
        if let Some(t) = self.jump_target() {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub code: Vec<Instruction>,
    pub num_locals: u32,
    pub arg_count: u32,
    /// Filled in by validation.
    pub max_stack: usize,
    /// Operand-stack depth before each instruction; `None` when unreachable.
    pub depths: Vec<Option<usize>>,
}

impl Method {
    pub fn new(
        name: impl Into<String>,
        arg_count: u32,
        num_locals: u32,
        code: Vec<Instruction>,
    ) -> Self {
        Method {
            name: name.into(),
            code,
            num_locals,
            arg_count,
            max_stack: 0,
            depths: Vec::new(),
        }
    }

    pub fn depth_at(&self, pc: usize) -> Option<usize> {
        self.depths.get(pc).copied().flatten()
    }

    pub fn has_back_edges(&self) -> bool {
        self.code
            .iter()
            .any(|i| matches!(i, Instruction::JumpBackward(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    methods: Vec<Method>,
    index: HashMap<String, MethodId>,
    entry: String,
}

impl Program {
    /// Builds and validates a program.
    pub fn new(methods: Vec<Method>, entry: impl Into<String>) -> Result<Program, ValidationError> {
        let mut program = Program::unvalidated(methods, entry);
        let report = validate(&program)?;
        for (method, info) in program.methods.iter_mut().zip(report.methods) {
            method.max_stack = info.max_stack;
            method.depths = info.depths;
        }
        Ok(program)
    }

    /// A program whose stack maps have not been computed. Only useful for
    /// disassembly and for feeding [`validate`].
    pub fn unvalidated(methods: Vec<Method>, entry: impl Into<String>) -> Program {
        let index = methods
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.clone(), MethodId(i as u32)))
            .collect();
        Program {
            methods,
            index,
            entry: entry.into(),
        }
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    #[inline]
    pub fn method(&self, id: MethodId) -> &Method {
        &self.methods[id.index()]
    }

    pub fn lookup(&self, name: &str) -> Option<MethodId> {
        self.index.get(name).copied()
    }

    pub fn entry_name(&self) -> &str {
        &self.entry
    }

    pub fn entry(&self) -> MethodId {
        self.lookup(&self.entry)
            .expect("validated program has an entry")
    }

    pub fn method_ids(&self) -> impl Iterator<Item = MethodId> {
        (0..self.methods.len() as u32).map(MethodId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodReport {
    pub name: String,
    pub max_stack: usize,
    pub depths: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub methods: Vec<MethodReport>,
}

/// Checks jump targets, call targets, local slots and operand-stack balance
/// by abstract interpretation over every control-flow path.
pub fn validate(program: &Program) -> Result<ValidationReport, ValidationError> {
    if program.methods.is_empty() {
        return Err(ValidationError::Empty);
    }
    let entry = program
        .lookup(&program.entry)
        .ok_or_else(|| ValidationError::MissingEntry(program.entry.clone()))?;
    if program.method(entry).arg_count != 0 {
        return Err(ValidationError::EntryTakesArguments(program.entry.clone()));
    }
    let methods = program
        .methods
        .iter()
        .map(|m| validate_method(program, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ValidationReport { methods })
}

fn validate_method(program: &Program, method: &Method) -> Result<MethodReport, ValidationError> {
    let name = || method.name.clone();
    if method.code.is_empty() {
        return Err(ValidationError::EmptyMethod { method: name() });
    }
    if method.num_locals < method.arg_count {
        return Err(ValidationError::TooFewLocals {
            method: name(),
            arg_count: method.arg_count,
            num_locals: method.num_locals,
        });
    }
    let len = method.code.len();
    for (pc, ins) in method.code.iter().enumerate() {
        if let Some(target) = ins.jump_target() {
            if target >= len {
                return Err(ValidationError::JumpOutOfRange {
                    method: name(),
                    pc,
                    target,
                });
            }
            match ins {
                Instruction::JumpBackward(_) if target >= pc => {
                    return Err(ValidationError::BadBackwardJump {
                        method: name(),
                        pc,
                        target,
                    })
                }
                Instruction::Jump(_) | Instruction::JumpIfTrue(_) | Instruction::JumpIfFalse(_)
                    if target <= pc =>
                {
                    return Err(ValidationError::BadForwardJump {
                        method: name(),
                        pc,
                        target,
                    })
                }
                _ => {}
            }
        }
        match *ins {
            Instruction::LoadLocal(slot) | Instruction::StoreLocal(slot)
                if slot >= method.num_locals =>
            {
                return Err(ValidationError::LocalOutOfRange {
                    method: name(),
                    pc,
                    slot,
                    num_locals: method.num_locals,
                });
            }
            Instruction::Call { callee, .. } | Instruction::PushMethod(callee)
                if callee.index() >= program.methods.len() =>
            {
                return Err(ValidationError::MissingCallee {
                    method: name(),
                    pc,
                    callee: callee.0,
                });
            }
            Instruction::Call { callee, argc } if program.method(callee).arg_count != argc => {
                return Err(ValidationError::ArityMismatch {
                    method: name(),
                    pc,
                    callee: program.method(callee).name.clone(),
                    expected: program.method(callee).arg_count,
                    got: argc,
                });
            }
            _ => {}
        }
    }

    let mut depths: Vec<Option<usize>> = vec![None; len];
    let mut max_stack = 0;
    let mut work = vec![(0usize, 0usize)];
    while let Some((pc, depth)) = work.pop() {
        if pc >= len {
            return Err(ValidationError::FallOffEnd { method: name() });
        }
        match depths[pc] {
            Some(seen) if seen == depth => continue,
            Some(seen) => {
                return Err(ValidationError::Unbalanced {
                    method: name(),
                    pc,
                    first: seen,
                    second: depth,
                })
            }
            None => depths[pc] = Some(depth),
        }
        let ins = method.code[pc];
        let (pops, pushes) = ins.stack_effect();
        if depth < pops {
            return Err(ValidationError::StackUnderflow {
                method: name(),
                pc,
                depth,
                needed: pops,
            });
        }
        let after = depth - pops + pushes;
        max_stack = max_stack.max(depth).max(after);
        for next in ins.successors(pc) {
            work.push((next, after));
        }
    }
    Ok(MethodReport {
        name: name(),
        max_stack,
        depths,
    })
}

/// Positions of the method's `JUMP_BACKWARD` instructions.
pub fn back_edge_pcs(method: &Method) -> Vec<usize> {
    method
        .code
        .iter()
        .enumerate()
        .filter(|(_, i)| matches!(i, Instruction::JumpBackward(_)))
        .map(|(pc, _)| pc)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(code: Vec<Instruction>) -> Result<Program, ValidationError> {
        Program::new(vec![Method::new("main", 0, 2, code)], "main")
    }

    #[test]
    fn fall_off_end() {
        let err = single(vec![Instruction::ConstInt(1), Instruction::Pop]).unwrap_err();
        assert!(err.to_string().contains("fall off end"));
    }

    #[test]
    fn jump_out_of_range() {
        let err = single(vec![
            Instruction::ConstInt(1),
            Instruction::JumpIfTrue(9),
            Instruction::Halt,
        ])
        .unwrap_err();
        assert!(err.to_string().contains("jump out of range"));
    }

    #[test]
    fn unbalanced_join() {
        // One path pushes before reaching the join point, the other does not.
        let err = single(vec![
            Instruction::ConstInt(1),
            Instruction::JumpIfTrue(3),
            Instruction::ConstInt(7),
            Instruction::ConstInt(0),
            Instruction::Ret,
        ])
        .unwrap_err();
        assert!(matches!(err, ValidationError::Unbalanced { pc: 3, .. }));
    }

    #[test]
    fn underflow() {
        let err = single(vec![Instruction::Add, Instruction::Ret]).unwrap_err();
        assert!(matches!(err, ValidationError::StackUnderflow { pc: 0, .. }));
    }

    #[test]
    fn backward_jump_direction_enforced() {
        let err = single(vec![
            Instruction::ConstInt(1),
            Instruction::Pop,
            Instruction::Jump(0),
        ])
        .unwrap_err();
        assert!(matches!(err, ValidationError::BadForwardJump { .. }));
        let err = single(vec![Instruction::JumpBackward(1), Instruction::Halt]).unwrap_err();
        assert!(matches!(err, ValidationError::BadBackwardJump { .. }));
    }

    #[test]
    fn entry_must_be_nullary() {
        let err = Program::new(
            vec![Method::new(
                "main",
                1,
                1,
                vec![Instruction::LoadLocal(0), Instruction::Ret],
            )],
            "main",
        )
        .unwrap_err();
        assert!(matches!(err, ValidationError::EntryTakesArguments(_)));
        assert_eq!(
            Program::new(vec![], "main").unwrap_err(),
            ValidationError::Empty
        );
    }

    #[test]
    fn opcode_names_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_name(op.name()), Some(op));
        }
    }
}
