#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use tvm_bench::SuiteSpec;

pub fn suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("suite")
}

pub fn shipped() -> SuiteSpec {
    SuiteSpec::from_dir(suite_dir()).unwrap()
}

/// Writes `files` into a fresh directory and returns the suite over them.
pub fn toy_suite(dir: &Path, files: &[(&str, &str)]) -> SuiteSpec {
    for (name, text) in files {
        fs::write(dir.join(name), text).unwrap();
    }
    SuiteSpec::from_dir(dir).unwrap()
}

/// `main` calls each `(method, n)` n times; the methods return 0.
pub fn caller(calls: &[(&str, u32)]) -> String {
    let mut s = String::from(".method main 0 0\n");
    for (m, n) in calls {
        for _ in 0..*n {
            s += &format!("  CALL {m} 0\n  POP\n");
        }
    }
    s += "  CONST_INT 0\n  RET\n.end\n";
    for (m, _) in calls {
        s += &format!(".method {m} 0 0\n  CONST_INT 0\n  RET\n.end\n");
    }
    s
}
