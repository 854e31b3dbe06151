//! A bytecode virtual machine for a small dynamic stack language with two
//! compilation tiers.
//!
//! Tier 1 turns a method into subroutine-threaded code by shallow-tracing the
//! interpreter's handlers. Tier 2 is a tracing JIT for hot loops. A profiler
//! moves execution from the lightweight tier to the heavyweight one when a
//! loop gets hot.

pub mod asm;
pub mod bytecode;
pub mod error;
pub mod frame;
pub mod handlers;
pub mod inline_cache;
pub mod progen;
pub mod shallow;
pub mod threaded;
pub mod tier2;
pub mod value;
pub mod vm;

pub use asm::{disassemble, parse_assembly, parse_assembly_with, ParseOptions};
pub use bytecode::{validate, Instruction, Method, Opcode, Program, ValidationReport};
pub use error::{ErrorKind, ParseError, Tier, ValidationError, VmError};
pub use frame::Frame;
pub use value::{ArrayRef, Heap, MethodId, Value};
pub use vm::{run, ExecMode, RunResult, StepCounters, Thresholds, TraceStats, Vm, VmConfig};
