//! Textual assembly (`.tvm`) parser and disassembler.
//!
//! ```text
//! .entry main                 # optional, defaults to `main`
//! .method <name> <arg_count> <num_locals>
//! loop:
//!   LOAD_LOCAL 0
//!   JUMP loop                 # rewritten to JUMP_BACKWARD
//! .end
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::bytecode::{Instruction, Method, Opcode, Program};
use crate::error::ParseError;
use crate::value::MethodId;

pub const DEFAULT_ENTRY: &str = "main";

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Turn `JUMP` to an earlier label into `JUMP_BACKWARD`. When off, such a
    /// jump is rejected.
    pub rewrite_backward_jumps: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            rewrite_backward_jumps: true,
        }
    }
}

struct RawInstr {
    line: usize,
    opcode: String,
    operands: Vec<String>,
}

struct RawMethod {
    name: String,
    arg_count: u32,
    num_locals: u32,
    body: Vec<RawInstr>,
    labels: HashMap<String, usize>,
}

pub fn parse_assembly(text: &str) -> Result<Program, ParseError> {
    parse_assembly_with(text, ParseOptions::default())
}

pub fn parse_assembly_with(text: &str, options: ParseOptions) -> Result<Program, ParseError> {
    let mut entry = DEFAULT_ENTRY.to_string();
    let mut raw: Vec<RawMethod> = Vec::new();
    let mut ids: HashMap<String, MethodId> = HashMap::new();
    let mut current: Option<RawMethod> = None;

    for (idx, full) in text.lines().enumerate() {
        let line = idx + 1;
        let mut rest = full.split('#').next().unwrap_or("").trim();
        if rest.is_empty() {
            continue;
        }
        let syntax = |message: String| ParseError::Syntax { line, message };

        if rest.starts_with('.') {
            let words: Vec<&str> = rest.split_whitespace().collect();
            match words[0] {
                ".entry" => {
                    let [_, name] = words[..] else {
                        return Err(syntax("expected `.entry <name>`".into()));
                    };
                    entry = name.to_string();
                }
                ".method" => {
                    if current.is_some() {
                        return Err(syntax("nested .method (missing .end)".into()));
                    }
                    let [_, name, argc, nlocals] = words[..] else {
                        return Err(syntax(
                            "expected `.method <name> <arg_count> <num_locals>`".into(),
                        ));
                    };
                    let arg_count = argc
                        .parse()
                        .map_err(|_| syntax(format!("bad argument count `{argc}`")))?;
                    let num_locals = nlocals
                        .parse()
                        .map_err(|_| syntax(format!("bad locals count `{nlocals}`")))?;
                    if ids.contains_key(name) {
                        return Err(ParseError::DuplicateMethod {
                            line,
                            name: name.to_string(),
                        });
                    }
                    ids.insert(name.to_string(), MethodId(raw.len() as u32));
                    current = Some(RawMethod {
                        name: name.to_string(),
                        arg_count,
                        num_locals,
                        body: Vec::new(),
                        labels: HashMap::new(),
                    });
                }
                ".end" => match current.take() {
                    Some(m) => raw.push(m),
                    None => return Err(syntax(".end without .method".into())),
                },
                other => return Err(syntax(format!("unknown directive `{other}`"))),
            }
            continue;
        }

        let Some(method) = current.as_mut() else {
            return Err(syntax("instruction outside of .method".into()));
        };
        // `label:` optionally followed by an instruction on the same line.
        if let Some((label, after)) = rest.split_once(':') {
            let label = label.trim();
            if label.is_empty() || label.contains(char::is_whitespace) {
                return Err(syntax(format!("bad label `{label}`")));
            }
            if method
                .labels
                .insert(label.to_string(), method.body.len())
                .is_some()
            {
                return Err(syntax(format!("duplicate label `{label}`")));
            }
            rest = after.trim();
            if rest.is_empty() {
                continue;
            }
        }
        let mut words = rest.split_whitespace();
        let opcode = words.next().unwrap_or_default().to_string();
        method.body.push(RawInstr {
            line,
            opcode,
            operands: words.map(str::to_string).collect(),
        });
    }
    if let Some(m) = current {
        return Err(ParseError::Syntax {
            line: text.lines().count(),
            message: format!("method `{}` missing .end", m.name),
        });
    }

    let methods = raw
        .iter()
        .map(|m| resolve_method(m, &ids, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Program::new(methods, entry)?)
}

fn resolve_method(
    raw: &RawMethod,
    ids: &HashMap<String, MethodId>,
    options: ParseOptions,
) -> Result<Method, ParseError> {
    let mut code = Vec::with_capacity(raw.body.len());
    for (pc, ins) in raw.body.iter().enumerate() {
        let line = ins.line;
        let op = Opcode::from_name(&ins.opcode).ok_or_else(|| ParseError::UnknownOpcode {
            line,
            opcode: ins.opcode.clone(),
        })?;
        let arity = match op {
            Opcode::ConstInt
            | Opcode::LoadLocal
            | Opcode::StoreLocal
            | Opcode::Jump
            | Opcode::JumpIfTrue
            | Opcode::JumpIfFalse
            | Opcode::JumpBackward
            | Opcode::PushMethod
            | Opcode::CallValue
            | Opcode::ArrayFill => 1,
            Opcode::Call => 2,
            _ => 0,
        };
        if ins.operands.len() != arity {
            return Err(ParseError::Syntax {
                line,
                message: format!("{op} takes {arity} operand(s), got {}", ins.operands.len()),
            });
        }
        let int = |s: &str| {
            s.parse::<i64>().map_err(|_| ParseError::Syntax {
                line,
                message: format!("bad integer `{s}`"),
            })
        };
        let small = |s: &str| {
            s.parse::<u32>().map_err(|_| ParseError::Syntax {
                line,
                message: format!("bad operand `{s}`"),
            })
        };
        let target = |s: &str| {
            raw.labels
                .get(s)
                .copied()
                .ok_or_else(|| ParseError::UndefinedLabel {
                    line,
                    label: s.to_string(),
                })
        };
        let method = |s: &str| {
            ids.get(s)
                .copied()
                .ok_or_else(|| ParseError::UnknownMethod {
                    line,
                    name: s.to_string(),
                })
        };
        let operand = ins.operands.first().map(String::as_str).unwrap_or("");
        let instr = match op {
            Opcode::ConstInt => Instruction::ConstInt(int(operand)?),
            Opcode::LoadLocal => Instruction::LoadLocal(small(operand)?),
            Opcode::StoreLocal => Instruction::StoreLocal(small(operand)?),
            Opcode::Dup => Instruction::Dup,
            Opcode::Pop => Instruction::Pop,
            Opcode::Add => Instruction::Add,
            Opcode::Sub => Instruction::Sub,
            Opcode::Mul => Instruction::Mul,
            Opcode::Mod => Instruction::Mod,
            Opcode::Le => Instruction::Le,
            Opcode::Lt => Instruction::Lt,
            Opcode::Eq => Instruction::Eq,
            Opcode::Jump => {
                let t = target(operand)?;
                if t <= pc {
                    if !options.rewrite_backward_jumps {
                        return Err(ParseError::BackwardJump {
                            line,
                            opcode: op.name().into(),
                        });
                    }
                    Instruction::JumpBackward(t)
                } else {
                    Instruction::Jump(t)
                }
            }
            Opcode::JumpIfTrue | Opcode::JumpIfFalse => {
                let t = target(operand)?;
                if t <= pc {
                    return Err(ParseError::BackwardJump {
                        line,
                        opcode: op.name().into(),
                    });
                }
                if op == Opcode::JumpIfTrue {
                    Instruction::JumpIfTrue(t)
                } else {
                    Instruction::JumpIfFalse(t)
                }
            }
            Opcode::JumpBackward => Instruction::JumpBackward(target(operand)?),
            Opcode::Call => Instruction::Call {
                callee: method(operand)?,
                argc: small(&ins.operands[1])?,
            },
            Opcode::PushMethod => Instruction::PushMethod(method(operand)?),
            Opcode::CallValue => Instruction::CallValue(small(operand)?),
            Opcode::Ret => Instruction::Ret,
            Opcode::ArrayNew => Instruction::ArrayNew,
            Opcode::ArrayAt => Instruction::ArrayAt,
            Opcode::ArrayAtPut => Instruction::ArrayAtPut,
            Opcode::ArrayLen => Instruction::ArrayLen,
            Opcode::ArrayFill => Instruction::ArrayFill(int(operand)?),
            Opcode::ArrayClear => Instruction::ArrayClear,
            Opcode::Print => Instruction::Print,
            Opcode::Halt => Instruction::Halt,
        };
        code.push(instr);
    }
    Ok(Method::new(
        raw.name.clone(),
        raw.arg_count,
        raw.num_locals,
        code,
    ))
}

/// Renders a program back to assembly. `parse_assembly(disassemble(p)) == p`
/// for every validated program.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".entry {}", program.entry_name());
    for method in program.methods() {
        out.push('\n');
        let _ = writeln!(
            out,
            ".method {} {} {}",
            method.name, method.arg_count, method.num_locals
        );
        let targets: BTreeSet<usize> = method.code.iter().filter_map(|i| i.jump_target()).collect();
        for (pc, ins) in method.code.iter().enumerate() {
            if targets.contains(&pc) {
                let _ = writeln!(out, "L{pc}:");
            }
            let _ = writeln!(out, "  {}", render_instruction(program, ins));
        }
        out.push_str(".end\n");
    }
    out
}

pub fn render_instruction(program: &Program, ins: &Instruction) -> String {
    let op = ins.opcode();
    match *ins {
        Instruction::ConstInt(v) | Instruction::ArrayFill(v) => format!("{op} {v}"),
        Instruction::LoadLocal(i) | Instruction::StoreLocal(i) => format!("{op} {i}"),
        Instruction::Jump(t)
        | Instruction::JumpIfTrue(t)
        | Instruction::JumpIfFalse(t)
        | Instruction::JumpBackward(t) => format!("{op} L{t}"),
        Instruction::Call { callee, argc } => {
            format!("{op} {} {argc}", program.method(callee).name)
        }
        Instruction::PushMethod(m) => format!("{op} {}", program.method(m).name),
        Instruction::CallValue(argc) => format!("{op} {argc}"),
        _ => op.to_string(),
    }
}
