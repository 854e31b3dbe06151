//! Semantics-preserving cleanup of recorded loop code: constant folding,
//! duplicate-guard elimination and dead-op elimination, run to a fixpoint.
//!
//! An op that could raise at run time is never removed unless folding proved
//! it succeeds, so errors surface at the same op as before.

use std::collections::{HashMap, HashSet};

use crate::value::{arith, Value};

use super::{LoopCode, PrimOp, Reg};

pub fn optimize_trace(code: &LoopCode) -> LoopCode {
    let mut out = code.clone();
    loop {
        let before = out.ops.clone();
        fold_constants(&mut out);
        dedup_guards(&mut out);
        eliminate_dead(&mut out);
        if out.ops == before {
            return out;
        }
    }
}

fn retain(code: &mut LoopCode, keep: &[bool]) {
    let mut k = keep.iter();
    code.ops.retain(|_| *k.next().unwrap());
    let mut k = keep.iter();
    code.origins.retain(|_| *k.next().unwrap());
}

/// Replaces ops whose inputs are all constant by the constant they produce.
/// Ops that would fail on those inputs are left alone.
pub fn fold_constants(code: &mut LoopCode) {
    let mut known: HashMap<Reg, Value> = HashMap::new();
    let mut keep = vec![true; code.ops.len()];
    for (i, op) in code.ops.iter_mut().enumerate() {
        let int = |r: &Reg| match known.get(r) {
            Some(Value::Int(v)) => Some(*v),
            _ => None,
        };
        let folded: Option<(Reg, Value)> = match &*op {
            PrimOp::IntAdd(d, a, b) => int(a)
                .zip(int(b))
                .and_then(|(x, y)| arith::add(x, y).ok())
                .map(|v| (*d, Value::Int(v))),
            PrimOp::IntSub(d, a, b) => int(a)
                .zip(int(b))
                .and_then(|(x, y)| arith::sub(x, y).ok())
                .map(|v| (*d, Value::Int(v))),
            PrimOp::IntMul(d, a, b) => int(a)
                .zip(int(b))
                .and_then(|(x, y)| arith::mul(x, y).ok())
                .map(|v| (*d, Value::Int(v))),
            PrimOp::IntMod(d, a, b) => int(a)
                .zip(int(b))
                .and_then(|(x, y)| arith::modulo(x, y).ok())
                .map(|v| (*d, Value::Int(v))),
            PrimOp::IntLe(d, a, b) => int(a).zip(int(b)).map(|(x, y)| (*d, Value::Bool(x <= y))),
            PrimOp::IntLt(d, a, b) => int(a).zip(int(b)).map(|(x, y)| (*d, Value::Bool(x < y))),
            PrimOp::IntEq(d, a, b) => match (known.get(a), known.get(b)) {
                (Some(x), Some(y)) => Some((*d, Value::Bool(x == y))),
                _ => None,
            },
            PrimOp::ConstInt(d, v) => {
                known.insert(*d, Value::Int(*v));
                None
            }
            PrimOp::Const(d, v) => {
                known.insert(*d, *v);
                None
            }
            PrimOp::GuardTrue(s, _) | PrimOp::GuardFalse(s, _) => {
                let want = matches!(op, PrimOp::GuardTrue(..));
                if let Some(Ok(t)) = known.get(s).map(|v| v.truthy()) {
                    if t == want {
                        keep[i] = false;
                    }
                }
                None
            }
            PrimOp::GuardMethod(s, m, _) => {
                if known.get(s) == Some(&Value::Method(*m)) {
                    keep[i] = false;
                }
                None
            }
            _ => None,
        };
        if let Some((d, v)) = folded {
            known.insert(d, v);
            *op = match v {
                Value::Int(x) => PrimOp::ConstInt(d, x),
                other => PrimOp::Const(d, other),
            };
        }
    }
    retain(code, &keep);
}

/// Drops a guard when an earlier guard of the same kind already checked the
/// same register. Registers are never reassigned, so the second guard
/// cannot fail.
pub fn dedup_guards(code: &mut LoopCode) {
    let mut seen: HashSet<(u8, Reg, u32)> = HashSet::new();
    let keep: Vec<bool> = code
        .ops
        .iter()
        .map(|op| match *op {
            PrimOp::GuardTrue(s, _) => seen.insert((0, s, 0)),
            PrimOp::GuardFalse(s, _) => seen.insert((1, s, 0)),
            PrimOp::GuardMethod(s, m, _) => seen.insert((2, s, m.0)),
            _ => true,
        })
        .collect();
    retain(code, &keep);
}

/// Removes ops whose result is unused and which cannot fail.
pub fn eliminate_dead(code: &mut LoopCode) {
    // Registers known to hold integers, for proving comparisons cannot fail.
    let mut ints: HashSet<Reg> = HashSet::new();
    for op in &code.ops {
        match *op {
            PrimOp::ConstInt(d, _)
            | PrimOp::IntAdd(d, ..)
            | PrimOp::IntSub(d, ..)
            | PrimOp::IntMul(d, ..)
            | PrimOp::IntMod(d, ..)
            | PrimOp::ArrGet(d, ..)
            | PrimOp::ArrLen(d, _) => {
                ints.insert(d);
            }
            _ => {}
        }
    }
    let pure = |op: &PrimOp| match op {
        PrimOp::ConstInt(..) | PrimOp::Const(..) | PrimOp::GetLocal(..) | PrimOp::IntEq(..) => true,
        PrimOp::IntLe(_, a, b) | PrimOp::IntLt(_, a, b) => ints.contains(a) && ints.contains(b),
        _ => false,
    };
    let mut live: HashSet<Reg> = HashSet::new();
    let mut keep = vec![true; code.ops.len()];
    for (i, op) in code.ops.iter().enumerate().rev() {
        if let Some(d) = op.dst() {
            if !live.contains(&d) && pure(op) {
                keep[i] = false;
                continue;
            }
        }
        live.extend(op.uses());
        if let Some(e) = op.exit() {
            live.extend(code.exits[e as usize].regs());
        }
    }
    retain(code, &keep);
}
