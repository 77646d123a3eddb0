//! Seeded generators for ownership trees, blocks and well-typed programs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::blocksched::{Block, Deploy, Txn};
use crate::ownership::{Loc, OwnershipTree, RtCtx};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A tree with `n` nodes; each node is a root or owned by an earlier node.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> OwnershipTree {
    let mut t = OwnershipTree::new();
    for i in 0..n {
        let owner = if i == 0 || rng.gen_bool(0.3) {
            RtCtx::Top
        } else {
            RtCtx::Loc(rng.gen_range(0..i) as Loc)
        };
        t.add(owner);
    }
    t
}

pub fn random_ctx(rng: &mut impl Rng, n: usize) -> RtCtx {
    match rng.gen_range(0..10) {
        0 => RtCtx::Top,
        1 => RtCtx::Bot,
        _ if n == 0 => RtCtx::Bot,
        _ => RtCtx::Loc(rng.gen_range(0..n)),
    }
}

pub fn random_contract(rng: &mut impl Rng, n: usize) -> (RtCtx, RtCtx) {
    (random_ctx(rng, n), random_ctx(rng, n))
}

/// A block of at most `max_txns` transactions over `Account` and `Token`
/// instances of the bank corpus program.
pub fn random_block(rng: &mut impl Rng, max_txns: usize) -> Block {
    let n_objs = rng.gen_range(1..=3);
    let mut deploy = Vec::new();
    for i in 0..n_objs {
        let (class, arg) = if rng.gen_bool(0.5) {
            ("Account", rng.gen_range(1..200))
        } else {
            ("Token", rng.gen_range(0..500))
        };
        deploy.push(Deploy {
            id: format!("c{i}"),
            class: class.into(),
            args: vec![json!(arg)],
        });
    }
    let n_txns = rng.gen_range(1..=max_txns.max(1));
    let mut txns = Vec::new();
    for _ in 0..n_txns {
        let d = deploy.choose(rng).expect("at least one deploy");
        let (method, args) = if d.class == "Account" {
            match rng.gen_range(0..3) {
                0 => ("deposit", vec![json!(rng.gen_range(0..100))]),
                1 => ("withdraw", vec![json!(rng.gen_range(0..150))]),
                _ => ("get", vec![]),
            }
        } else {
            match rng.gen_range(0..3) {
                0 => ("transfer", vec![json!(rng.gen_range(-5..300))]),
                1 => ("approve", vec![json!(rng.gen_range(-2..10))]),
                _ => ("balanceOf", vec![]),
            }
        };
        txns.push(Txn {
            target: d.id.clone(),
            method: method.into(),
            args,
        });
    }
    Block {
        deploy,
        txns,
        workers: 1,
        seed: rng.gen(),
    }
}

/// Source text of a random program that typechecks. Runs may abort or
/// terminate threads (require, division by zero, null dereference, invariant
/// failure) but never get stuck.
pub fn random_program(rng: &mut impl Rng) -> String {
    let mut g = ProgGen { rng, locals: 0 };
    g.program()
}

struct ProgGen<'r, R: Rng> {
    rng: &'r mut R,
    locals: usize,
}

impl<R: Rng> ProgGen<'_, R> {
    fn program(&mut self) -> String {
        let inv = match self.rng.gen_range(0..3) {
            0 => "v >= 0",
            1 => "v >= 0 && (child == null || child.v < 1000)",
            _ => "v > -5",
        };
        let add = self.body(&["v", "x"], 2);
        let sub = self.body(&["v", "x"], 2);
        let mut s = format!(
            "class Cell[o] {{\n    int v;\n    Cell<this> child;\n    inv {inv};\n\n    Cell(int x) {{\n        v = x;\n    }}\n\n    int get() <this,bot> {{\n        return v;\n    }}\n\n    int peek() <bot,bot> {{\n        return v + 1;\n    }}\n\n    void add(int x) <this,this> {{\n{add}    }}\n\n    void sub(int x) <this,this> {{\n{sub}    }}\n\n    void grow(int x) <this,this> {{\n        child = new Cell<this>(x);\n    }}\n\n    void push(int x) <this,this> {{\n        atomic child.add(x);\n    }}\n\n    int childValue() <this,bot> {{\n        return child.v;\n    }}\n}}\n\n"
        );
        s.push_str(
            "class Pair[o] {\n    Cell<this> a;\n    Cell<this> b;\n    inv a != null && b != null && a.v + b.v >= 0;\n\n    Pair(int x) {\n        a = new Cell<this>(x);\n        b = new Cell<this>(x);\n    }\n\n    void shift(int x) <this,this> {\n        atomic a.add(x);\n        atomic b.sub(x);\n    }\n\n    bool ok() <bot,this> {\n        return valid a && valid b;\n    }\n}\n\nmain {\n",
        );
        let cells = self.rng.gen_range(1..=3);
        for i in 0..cells {
            let k = self.rng.gen_range(-1..20);
            s.push_str(&format!("    Cell<top> c{i} = new Cell<top>({k});\n"));
        }
        let pair = self.rng.gen_bool(0.5);
        if pair {
            let k = self.rng.gen_range(-1..20);
            s.push_str(&format!("    Pair<top> p = new Pair<top>({k});\n"));
        }
        self.locals = 0;
        for _ in 0..self.rng.gen_range(1..8) {
            let c = format!("c{}", self.rng.gen_range(0..cells));
            let k = self.rng.gen_range(-10..30);
            let line = match self.rng.gen_range(0..12) {
                0 | 1 => format!("atomic {c}.add({k});"),
                2 => format!("atomic {c}.sub({k});"),
                3 => format!("fork atomic {c}.add({k});"),
                4 => format!("{c}.add({k});"),
                5 => format!("atomic {c}.grow({k});"),
                6 => format!("atomic {c}.push({k});"),
                7 => format!("int r{} = atomic {c}.get();", self.fresh()),
                8 => format!("int r{} = atomic {c}.childValue();", self.fresh()),
                9 => format!("bool r{} = valid {c};", self.fresh()),
                10 if pair => format!("atomic p.shift({k});"),
                10 => format!("int r{} = {c}.peek();", self.fresh()),
                _ => format!("fork atomic {c}.sub({k});"),
            };
            s.push_str("    ");
            s.push_str(&line);
            s.push('\n');
        }
        s.push_str("}\n");
        s
    }

    fn fresh(&mut self) -> usize {
        self.locals += 1;
        self.locals
    }

    fn body(&mut self, vars: &[&str], depth: u32) -> String {
        let mut out = String::new();
        let mut scope: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
        for _ in 0..self.rng.gen_range(1..4) {
            out.push_str(&self.stmt(&mut scope, depth, 2));
        }
        out
    }

    fn stmt(&mut self, scope: &mut Vec<String>, depth: u32, indent: usize) -> String {
        let pad = "    ".repeat(indent);
        match self.rng.gen_range(0..9) {
            0 | 1 => format!("{pad}v += {};\n", self.expr(scope, 2)),
            2 => format!("{pad}v -= {};\n", self.expr(scope, 2)),
            3 => format!("{pad}require({});\n", self.cond(scope)),
            4 => {
                let name = format!("t{}", self.fresh());
                let e = self.expr(scope, 2);
                scope.push(name.clone());
                format!("{pad}int {name} = {e};\n")
            }
            5 if depth > 0 => {
                let c = self.cond(scope);
                let mut inner = scope.clone();
                let t = self.stmt(&mut inner, depth - 1, indent + 1);
                let mut inner = scope.clone();
                let e = self.stmt(&mut inner, depth - 1, indent + 1);
                format!("{pad}if ({c}) {{\n{t}{pad}}} else {{\n{e}{pad}}}\n")
            }
            6 if depth > 0 => {
                let mut inner = scope.clone();
                let b = self.stmt(&mut inner, depth - 1, indent + 1);
                format!("{pad}atomic <this,this> {{\n{b}{pad}}}\n")
            }
            7 => format!("{pad}emit Changed(v, {});\n", self.expr(scope, 1)),
            _ => format!("{pad}v = {};\n", self.expr(scope, 2)),
        }
    }

    fn expr(&mut self, scope: &[String], depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return match self.rng.gen_range(0..4) {
                0 => self.rng.gen_range(-3..10).to_string(),
                _ => scope.choose(self.rng).expect("non-empty scope").clone(),
            };
        }
        let op = ["+", "-", "*", "/", "%"].choose(self.rng).expect("ops");
        format!("({} {op} {})", self.expr(scope, depth - 1), self.expr(scope, depth - 1))
    }

    fn cond(&mut self, scope: &[String]) -> String {
        let op = ["<", "<=", ">", ">=", "==", "!="].choose(self.rng).expect("ops");
        let c = format!("{} {op} {}", self.expr(scope, 1), self.expr(scope, 1));
        if self.rng.gen_bool(0.2) {
            format!("!({c})")
        } else {
            c
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ownership::OwnerMap;

    #[test]
    fn trees_point_backwards() {
        let mut r = rng(3);
        let t = random_tree(&mut r, 20);
        for l in 0..t.len() {
            if let RtCtx::Loc(o) = t.owner(l) {
                assert!(o < l);
            }
        }
    }

    #[test]
    fn generated_programs_compile() {
        let mut r = rng(9);
        for _ in 0..200 {
            let src = random_program(&mut r);
            if let Err(d) = crate::compile(&src) {
                panic!("{src}\n{d:?}");
            }
        }
    }
}
