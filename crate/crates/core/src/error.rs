use std::fmt;

use thiserror::Error;

/// Which execution tier was running when something went wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Interpreter,
    Threaded,
    TraceRecorder,
    LoopCode,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Interpreter => "interpreter",
            Tier::Threaded => "threaded code",
            Tier::TraceRecorder => "trace recorder",
            Tier::LoopCode => "loop code",
        })
    }
}

/// Runtime failure raised by a handler, independent of where it ran.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ErrorKind {
    #[error("type error: expected {expected}, found {found}")]
    Type {
        expected: &'static str,
        found: &'static str,
    },
    #[error("index {index} out of bounds for array of length {len}")]
    IndexOutOfBounds { index: i64, len: usize },
    #[error("integer overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative array size {0}")]
    NegativeArraySize(i64),
    #[error("array size {0} exceeds limit")]
    ArrayTooLarge(i64),
    #[error("call depth limit {0} exceeded")]
    StackOverflow(usize),
    #[error("argument count mismatch: {callee} takes {expected}, got {got}")]
    Arity {
        callee: String,
        expected: u32,
        got: u32,
    },
}

/// A runtime error annotated with its source position and tier.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} in {method}@{pc} ({tier})")]
pub struct VmError {
    pub kind: ErrorKind,
    pub method: String,
    pub pc: usize,
    pub tier: Tier,
}

impl VmError {
    /// Equality ignoring the tier; used when comparing modes.
    pub fn same_site(&self, other: &VmError) -> bool {
        self.kind == other.kind && self.method == other.method && self.pc == other.pc
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: duplicate method `{name}`")]
    DuplicateMethod { line: usize, name: String },
    #[error("line {line}: unknown method `{name}`")]
    UnknownMethod { line: usize, name: String },
    #[error("line {line}: backward {opcode} must use JUMP_BACKWARD semantics")]
    BackwardJump { line: usize, opcode: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("program has no methods")]
    Empty,
    #[error("entry method `{0}` not found")]
    MissingEntry(String),
    #[error("entry method `{0}` must take zero arguments")]
    EntryTakesArguments(String),
    #[error("{method}@{pc}: jump out of range (target {target})")]
    JumpOutOfRange {
        method: String,
        pc: usize,
        target: usize,
    },
    #[error("{method}@{pc}: forward jump targets index {target} which is not after it")]
    BadForwardJump {
        method: String,
        pc: usize,
        target: usize,
    },
    #[error("{method}@{pc}: JUMP_BACKWARD target {target} is not before it")]
    BadBackwardJump {
        method: String,
        pc: usize,
        target: usize,
    },
    #[error("{method}@{pc}: call to missing method #{callee}")]
    MissingCallee {
        method: String,
        pc: usize,
        callee: u32,
    },
    #[error("{method}@{pc}: CALL {callee} passes {got} arguments, expected {expected}")]
    ArityMismatch {
        method: String,
        pc: usize,
        callee: String,
        expected: u32,
        got: u32,
    },
    #[error("{method}@{pc}: local slot {slot} out of range ({num_locals} locals)")]
    LocalOutOfRange {
        method: String,
        pc: usize,
        slot: u32,
        num_locals: u32,
    },
    #[error("{method}: {num_locals} locals cannot hold {arg_count} arguments")]
    TooFewLocals {
        method: String,
        arg_count: u32,
        num_locals: u32,
    },
    #[error("{method}@{pc}: stack underflow (depth {depth}, needs {needed})")]
    StackUnderflow {
        method: String,
        pc: usize,
        depth: usize,
        needed: usize,
    },
    #[error("{method}@{pc}: unbalanced stack ({first} vs {second} on different paths)")]
    Unbalanced {
        method: String,
        pc: usize,
        first: usize,
        second: usize,
    },
    #[error("{method}: execution can fall off end")]
    FallOffEnd { method: String },
    #[error("{method}: empty method body")]
    EmptyMethod { method: String },
}
