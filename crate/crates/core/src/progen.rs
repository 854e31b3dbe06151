//! Seeded generator of random, validated, terminating programs.
//!
//! Generated programs never fail at run time:
//! - method `i` only calls methods with a larger index, so there is no recursion
//! - loops count a reserved local up to a constant bound
//! - every arithmetic result is reduced modulo a constant
//! - array indices are reduced into `1..=ARRAY_LEN`
//!
//! Every method except `main` takes the shared array as argument 0.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::parse_assembly;
use crate::bytecode::Program;

pub const ARRAY_LEN: i64 = 8;
const MODULUS: i64 = 1009;
const MAX_LOOP_DEPTH: usize = 2;

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_methods: usize,
    pub max_stmts: usize,
    pub max_loop_bound: i64,
    /// Upper bound on the estimated instructions executed by one run.
    pub cost_budget: u64,
    /// Force array writes or clears into both arms of every branch.
    pub side_effect_arms: bool,
    pub allow_halt: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_methods: 4,
            max_stmts: 6,
            max_loop_bound: 40,
            cost_budget: 150_000,
            side_effect_arms: false,
            allow_halt: true,
        }
    }
}

#[derive(Clone, Copy)]
struct Sig {
    /// Integer arguments after the array.
    int_args: u32,
}

struct MethodGen<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a GenConfig,
    /// Signatures and estimated costs of the methods this one may call.
    callees: &'a [(usize, Sig, u64)],
    out: String,
    labels: usize,
    int_locals: Vec<u32>,
    counters: Vec<u32>,
    loop_depth: usize,
    multiplier: u64,
    cost: u64,
}

impl MethodGen<'_> {
    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn emit(&mut self, line: impl AsRef<str>) {
        self.cost += self.multiplier;
        let _ = writeln!(self.out, "  {}", line.as_ref());
    }

    fn place(&mut self, label: &str) {
        let _ = writeln!(self.out, "{label}:");
    }

    fn local(&mut self) -> u32 {
        *self.int_locals.choose(self.rng).expect("int locals")
    }

    fn reduce(&mut self) {
        self.emit(format!("CONST_INT {MODULUS}"));
        self.emit("MOD");
    }

    /// Pushes an index in `1..=ARRAY_LEN` derived from a random expression.
    fn index(&mut self, depth: u32) {
        self.expr(depth);
        self.emit(format!("CONST_INT {ARRAY_LEN}"));
        self.emit("MOD");
        self.emit("CONST_INT 1");
        self.emit("ADD");
    }

    fn affordable(&self, cost: u64) -> bool {
        self.multiplier.saturating_mul(cost) <= self.cfg.cost_budget / 4
    }

    fn call_args(&mut self, sig: Sig, depth: u32) {
        self.emit("LOAD_LOCAL 0");
        for _ in 0..sig.int_args {
            self.expr(depth + 1);
        }
    }

    /// Pushes one integer in `(-MODULUS, MODULUS)`.
    fn expr(&mut self, depth: u32) {
        let leaf = depth >= 3 || self.rng.gen_bool(0.35);
        if leaf {
            if self.rng.gen_bool(0.5) {
                let c = self.rng.gen_range(-50..=50);
                self.emit(format!("CONST_INT {c}"));
            } else {
                let l = self.local();
                self.emit(format!("LOAD_LOCAL {l}"));
            }
            return;
        }
        match self.rng.gen_range(0..10) {
            0..=3 => {
                self.expr(depth + 1);
                self.expr(depth + 1);
                let op = *["ADD", "SUB", "MUL"].choose(self.rng).unwrap();
                self.emit(op);
                self.reduce();
            }
            4 => {
                self.expr(depth + 1);
                let m = self.rng.gen_range(2..=50);
                self.emit(format!("CONST_INT {m}"));
                self.emit("MOD");
            }
            5 | 6 => {
                self.emit("LOAD_LOCAL 0");
                self.index(depth + 1);
                self.emit("ARRAY_AT");
            }
            7 => {
                self.emit("LOAD_LOCAL 0");
                self.emit("ARRAY_LEN");
            }
            _ => {
                let options: Vec<(usize, Sig, u64)> = self
                    .callees
                    .iter()
                    .copied()
                    .filter(|&(_, _, c)| self.affordable(c))
                    .collect();
                let Some(&(id, sig, cost)) = options.choose(self.rng) else {
                    let l = self.local();
                    self.emit(format!("LOAD_LOCAL {l}"));
                    return;
                };
                let twin = options
                    .iter()
                    .find(|&&(j, s, _)| j != id && s.int_args == sig.int_args)
                    .copied();
                match twin {
                    Some((other, _, other_cost)) if self.rng.gen_bool(0.5) => {
                        // A dynamic site that may see either callee.
                        let (a, b) = (self.label(), self.label());
                        self.cond(depth + 1);
                        self.emit(format!("JUMP_IF_TRUE {a}"));
                        self.emit(format!("PUSH_METHOD m{id}"));
                        self.emit(format!("JUMP {b}"));
                        self.place(&a);
                        self.emit(format!("PUSH_METHOD m{other}"));
                        self.place(&b);
                        self.call_args(sig, depth);
                        self.emit(format!("CALL_VALUE {}", sig.int_args + 1));
                        self.cost += self.multiplier * cost.max(other_cost);
                    }
                    _ => {
                        self.call_args(sig, depth);
                        self.emit(format!("CALL m{id} {}", sig.int_args + 1));
                        self.cost += self.multiplier * cost;
                    }
                }
            }
        }
    }

    /// Pushes a branch condition: a comparison or a bare integer.
    fn cond(&mut self, depth: u32) {
        self.expr(depth + 1);
        if self.rng.gen_bool(0.75) {
            self.expr(depth + 1);
            let op = *["LE", "LT", "EQ"].choose(self.rng).unwrap();
            self.emit(op);
        }
    }

    fn side_effect(&mut self) {
        match self.rng.gen_range(0..4) {
            0 => {
                self.emit("LOAD_LOCAL 0");
                self.emit("ARRAY_CLEAR");
            }
            1 => {
                let v = self.rng.gen_range(-9..=9);
                self.emit("LOAD_LOCAL 0");
                self.emit(format!("ARRAY_FILL {v}"));
                self.emit("POP");
            }
            _ => {
                self.emit("LOAD_LOCAL 0");
                self.index(1);
                self.expr(1);
                self.emit("ARRAY_AT_PUT");
            }
        }
    }

    fn block(&mut self, n: usize, depth: u32) {
        for _ in 0..n {
            self.stmt(depth);
        }
    }

    fn stmt(&mut self, depth: u32) {
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=29 => {
                self.expr(0);
                let l = self.local();
                self.emit(format!("STORE_LOCAL {l}"));
            }
            30..=39 => self.side_effect(),
            40..=47 => {
                self.expr(0);
                self.emit("PRINT");
            }
            48..=69 if depth < 3 => {
                let (else_l, end_l) = (self.label(), self.label());
                self.cond(0);
                let jump = if self.rng.gen_bool(0.5) {
                    "JUMP_IF_TRUE"
                } else {
                    "JUMP_IF_FALSE"
                };
                self.emit(format!("{jump} {else_l}"));
                let n = self.rng.gen_range(0..=2);
                if self.cfg.side_effect_arms {
                    self.side_effect();
                }
                self.block(n, depth + 1);
                if self.rng.gen_bool(0.15) {
                    self.expr(0);
                    self.emit("RET");
                } else {
                    self.emit(format!("JUMP {end_l}"));
                }
                self.place(&else_l);
                let n = self.rng.gen_range(0..=2);
                if self.cfg.side_effect_arms {
                    self.side_effect();
                }
                self.block(n, depth + 1);
                self.place(&end_l);
            }
            70..=89 if self.loop_depth < MAX_LOOP_DEPTH => {
                let bound = self.rng.gen_range(1..=self.cfg.max_loop_bound);
                let counter = self.counters[self.loop_depth];
                let (head, end) = (self.label(), self.label());
                self.emit("CONST_INT 0");
                self.emit(format!("STORE_LOCAL {counter}"));
                self.place(&head);
                let saved = self.multiplier;
                self.multiplier = saved.saturating_mul(bound as u64 + 1);
                self.emit(format!("LOAD_LOCAL {counter}"));
                self.emit(format!("CONST_INT {bound}"));
                self.emit("LT");
                self.emit(format!("JUMP_IF_FALSE {end}"));
                self.loop_depth += 1;
                let n = self.rng.gen_range(1..=3);
                self.block(n, depth + 1);
                self.loop_depth -= 1;
                self.emit(format!("LOAD_LOCAL {counter}"));
                self.emit("CONST_INT 1");
                self.emit("ADD");
                self.emit(format!("STORE_LOCAL {counter}"));
                self.emit(format!("JUMP {head}"));
                self.multiplier = saved;
                self.place(&end);
            }
            90..=91 if self.cfg.allow_halt && depth > 0 => {
                self.expr(0);
                self.emit("HALT");
            }
            _ => {
                self.expr(0);
                let l = self.local();
                self.emit(format!("STORE_LOCAL {l}"));
            }
        }
    }
}

/// Assembly text of the program for `seed`.
pub fn generate_source(seed: u64, cfg: &GenConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1..=cfg.max_methods.max(1));
    let sigs: Vec<Sig> = (0..count)
        .map(|i| Sig {
            int_args: if i == 0 { 0 } else { rng.gen_range(0..=2) },
        })
        .collect();
    let mut bodies = vec![String::new(); count];
    let mut costs = vec![0u64; count];
    // Callees first, so callers know what a call costs.
    for i in (0..count).rev() {
        let sig = sigs[i];
        let extra = rng.gen_range(1..=3);
        let first_int = 1;
        let ints: Vec<u32> = (first_int..first_int + sig.int_args + extra).collect();
        let counters = vec![
            first_int + sig.int_args + extra,
            first_int + sig.int_args + extra + 1,
        ];
        let num_locals = counters[1] + 1;
        let callees: Vec<(usize, Sig, u64)> =
            ((i + 1)..count).map(|j| (j, sigs[j], costs[j])).collect();
        let mut g = MethodGen {
            rng: &mut rng,
            cfg,
            callees: &callees,
            out: String::new(),
            labels: 0,
            int_locals: ints.clone(),
            counters,
            loop_depth: 0,
            multiplier: 1,
            cost: 0,
        };
        if i == 0 {
            g.emit(format!("CONST_INT {ARRAY_LEN}"));
            g.emit("ARRAY_NEW");
            g.emit("ARRAY_FILL 1");
            g.emit("STORE_LOCAL 0");
        }
        // Locals beyond the arguments start as integers.
        for &l in ints.iter().skip(sig.int_args as usize) {
            let c = g.rng.gen_range(-20..=20);
            g.emit(format!("CONST_INT {c}"));
            g.emit(format!("STORE_LOCAL {l}"));
        }
        let n = g.rng.gen_range(1..=cfg.max_stmts.max(1));
        g.block(n, 0);
        g.expr(0);
        g.emit("RET");
        let args = if i == 0 { 0 } else { sig.int_args + 1 };
        costs[i] = g.cost;
        bodies[i] = format!(".method m{i} {args} {num_locals}\n{}.end\n", g.out);
    }
    let mut text = format!("# generated, seed {seed}\n.entry m0\n");
    for b in bodies {
        text.push('\n');
        text.push_str(&b);
    }
    text
}

/// The validated program for `seed`.
pub fn generate(seed: u64, cfg: &GenConfig) -> Program {
    let text = generate_source(seed, cfg);
    parse_assembly(&text)
        .unwrap_or_else(|e| panic!("generator produced invalid program: {e}\n{text}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = GenConfig::default();
        assert_eq!(generate_source(7, &cfg), generate_source(7, &cfg));
        assert_ne!(generate_source(7, &cfg), generate_source(8, &cfg));
    }

    #[test]
    fn many_seeds_validate() {
        let cfg = GenConfig {
            side_effect_arms: true,
            ..GenConfig::default()
        };
        for seed in 0..300 {
            generate(seed, &cfg);
        }
    }
}
