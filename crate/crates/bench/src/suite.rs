//! Suite manifests and their composition into one program.
//!
//! The composed program has one driver method per subprogram that calls the
//! subprogram's entry `iterations` times, and a `suite/main` entry calling
//! the drivers in manifest order. Subprogram methods are renamed
//! `<stem>/<method>` so that names never collide; driver methods live under
//! the reserved `suite/` prefix.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvm_core::{parse_assembly, Instruction, Method, MethodId, Program};

use crate::error::SuiteError;

pub const DRIVER_PREFIX: &str = "suite/";
pub const SUITE_ENTRY: &str = "suite/main";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SuiteEntry {
    /// File name inside the suite directory.
    pub program: String,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub suite_dir: PathBuf,
    pub subprograms: Vec<SuiteEntry>,
    /// 1 for the base order; later variants are shuffles of it.
    pub variant: u32,
    pub variant_seed: Option<u64>,
}

/// A parsed subprogram. `name` is the file stem.
#[derive(Debug, Clone)]
pub struct Subprogram {
    pub name: String,
    pub program: Program,
}

pub fn stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_string())
}

impl SuiteSpec {
    /// Every `.tvm` file in `dir`, sorted by name, one iteration each.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<SuiteSpec, SuiteError> {
        let dir = dir.as_ref();
        let io = |source| SuiteError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "tvm") {
                files.push(path.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        files.sort();
        Ok(SuiteSpec {
            suite_dir: dir.to_path_buf(),
            subprograms: files
                .into_iter()
                .map(|program| SuiteEntry {
                    program,
                    iterations: 1,
                })
                .collect(),
            variant: 1,
            variant_seed: None,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<SuiteSpec, SuiteError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec: SuiteSpec =
            serde_json::from_str(&text).map_err(|source| SuiteError::Manifest {
                path: path.to_path_buf(),
                source,
            })?;
        if spec.suite_dir.is_relative() {
            if let Some(parent) = path.parent() {
                spec.suite_dir = parent.join(&spec.suite_dir);
            }
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Sorted (program, iterations) pairs; equal for all variants of a suite.
    pub fn multiset(&self) -> Vec<SuiteEntry> {
        let mut v = self.subprograms.clone();
        v.sort();
        v
    }

    pub fn load(&self) -> Result<Vec<Subprogram>, SuiteError> {
        let mut seen = HashSet::new();
        self.subprograms
            .iter()
            .map(|e| {
                let name = stem(&e.program);
                if !seen.insert(name.clone()) {
                    return Err(SuiteError::Duplicate(name));
                }
                if e.iterations == 0 {
                    return Err(SuiteError::ZeroIterations(name));
                }
                load_subprogram(&self.suite_dir.join(&e.program))
            })
            .collect()
    }

    /// The suite as a single program. `subprograms` must be `self.load()`.
    pub fn compose(&self, subprograms: &[Subprogram]) -> Program {
        let pairs: Vec<(&Subprogram, u64)> = subprograms
            .iter()
            .zip(&self.subprograms)
            .map(|(s, e)| (s, e.iterations))
            .collect();
        compose(&pairs)
    }
}

pub fn load_subprogram(path: &Path) -> Result<Subprogram, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let program = parse_assembly(&text).map_err(|source| SuiteError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let name = stem(&path.to_string_lossy());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(SuiteError::BadName { name });
    }
    Ok(Subprogram { name, program })
}

fn shift(ins: Instruction, base: u32) -> Instruction {
    match ins {
        Instruction::Call { callee, argc } => Instruction::Call {
            callee: MethodId(callee.0 + base),
            argc,
        },
        Instruction::PushMethod(m) => Instruction::PushMethod(MethodId(m.0 + base)),
        other => other,
    }
}

/// Builds the composed program for `(subprogram, iterations)` pairs.
pub fn compose(parts: &[(&Subprogram, u64)]) -> Program {
    let mut methods = Vec::new();
    let mut drivers = Vec::new();
    for (sub, _) in parts {
        let base = methods.len() as u32;
        for m in sub.program.methods() {
            let code = m.code.iter().map(|&i| shift(i, base)).collect();
            methods.push(Method::new(
                format!("{}/{}", sub.name, m.name),
                m.arg_count,
                m.num_locals,
                code,
            ));
        }
        drivers.push(MethodId(base + sub.program.entry().0));
    }
    let first_driver = methods.len() as u32;
    for ((sub, iterations), entry) in parts.iter().zip(&drivers) {
        methods.push(driver(&sub.name, *entry, *iterations));
    }
    let mut main = Vec::new();
    for k in 0..parts.len() as u32 {
        main.push(Instruction::Call {
            callee: MethodId(first_driver + k),
            argc: 0,
        });
        main.push(Instruction::Pop);
    }
    main.push(Instruction::ConstInt(parts.len() as i64));
    main.push(Instruction::Ret);
    methods.push(Method::new(SUITE_ENTRY, 0, 0, main));
    Program::new(methods, SUITE_ENTRY).expect("composed suite validates")
}

/// `suite/<name>`: calls `entry` `iterations` times and returns the last
/// result.
fn driver(name: &str, entry: MethodId, iterations: u64) -> Method {
    use Instruction::*;
    // locals: remaining=0 last=1
    let code = vec![
        ConstInt(iterations as i64),
        StoreLocal(0),
        ConstInt(0),
        LoadLocal(0),
        Lt,
        JumpIfFalse(13),
        Call {
            callee: entry,
            argc: 0,
        },
        StoreLocal(1),
        LoadLocal(0),
        ConstInt(1),
        Sub,
        StoreLocal(0),
        JumpBackward(2),
        LoadLocal(1),
        Ret,
    ];
    Method::new(format!("{DRIVER_PREFIX}{name}"), 0, 2, code)
}
