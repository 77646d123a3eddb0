//! Canonical text for core programs and surface expressions.
//!
//! The output is valid surface syntax: parsing and desugaring it yields the
//! printed program again, up to the names of temporaries.

use std::fmt::Write;

use super::ast::*;
use super::core::*;

const INDENT: &str = "    ";

pub fn pretty_print(p: &CoreProgram) -> String {
    let mut out = String::new();
    for (i, c) in p.classes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_class(&mut out, c);
    }
    if let Some(m) = &p.main {
        if !p.classes.is_empty() {
            out.push('\n');
        }
        out.push_str("main {\n");
        print_body(&mut out, m, false, 1);
        out.push_str("}\n");
    }
    out
}

fn print_class(out: &mut String, c: &CClass) {
    let _ = write!(out, "class {} [{}]", c.name, c.params.join(", "));
    if let Some(s) = &c.superclass {
        let _ = write!(out, " extends {s}");
    }
    if !c.constraints.is_empty() {
        let cs: Vec<String> = c
            .constraints
            .iter()
            .map(|k| format!("{} {} {}", k.lhs, k.rel.as_str(), k.rhs))
            .collect();
        let _ = write!(out, " where {}", cs.join(", "));
    }
    out.push_str(" {\n");
    for f in &c.fields {
        let fin = if f.is_final { "final " } else { "" };
        let _ = writeln!(out, "{INDENT}{fin}{} {};", f.ty, f.name);
    }
    if let Some(inv) = &c.invariant {
        let _ = writeln!(out, "{INDENT}inv {};", expr_to_string(inv));
    }
    out.push('\n');
    let _ = writeln!(out, "{INDENT}{}({}) {{", c.name, params(&c.ctor.params));
    print_body(out, &c.ctor.body, false, 2);
    let _ = writeln!(out, "{INDENT}}}");
    for m in &c.methods {
        out.push('\n');
        let vis = match m.visibility {
            Visibility::Default => "",
            Visibility::Public => "public ",
            Visibility::Private => "private ",
        };
        let _ = writeln!(
            out,
            "{INDENT}{vis}{} {}({}) {} {{",
            m.ret,
            m.name,
            params(&m.params),
            m.contract
        );
        print_body(out, &m.body, !m.ret.is_void(), 2);
        let _ = writeln!(out, "{INDENT}}}");
    }
    out.push_str("}\n");
}

fn params(ps: &[CParam]) -> String {
    ps.iter()
        .map(|p| format!("{} {}", p.ty, p.name))
        .collect::<Vec<_>>()
        .join(", ")
}

fn print_body(out: &mut String, b: &CBody, returns: bool, depth: usize) {
    let pad = INDENT.repeat(depth);
    for l in &b.locals {
        match &l.ty {
            Some(t) => {
                let _ = writeln!(out, "{pad}{t} {};", l.name);
            }
            None => {
                let _ = writeln!(out, "{pad}var {};", l.name);
            }
        }
    }
    print_stmts(out, &b.body, returns, depth);
}

fn stmts_of<'a>(e: &'a CExpr, acc: &mut Vec<&'a CExpr>) {
    match &e.kind {
        CKind::Seq(a, b) => {
            stmts_of(a, acc);
            stmts_of(b, acc);
        }
        _ => acc.push(e),
    }
}

/// Prints a statement sequence; `returns` marks the tail as a returned value.
fn print_stmts(out: &mut String, e: &CExpr, returns: bool, depth: usize) {
    let mut items = Vec::new();
    stmts_of(e, &mut items);
    let n = items.len();
    let pad = INDENT.repeat(depth);
    for (i, s) in items.into_iter().enumerate() {
        let tail = i + 1 == n;
        if s.is_unit() {
            continue;
        }
        if let CKind::Cond(a, t, f) = &s.kind {
            let r = returns && tail;
            let _ = writeln!(out, "{pad}if ({}) {{", atom(a));
            print_stmts(out, t, r, depth + 1);
            if f.is_unit() {
                let _ = writeln!(out, "{pad}}}");
            } else {
                let _ = writeln!(out, "{pad}}} else {{");
                print_stmts(out, f, r, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
            continue;
        }
        let kw = if returns && tail { "return " } else { "" };
        let _ = writeln!(out, "{pad}{kw}{};", expr(s, depth));
    }
}

fn atom(a: &Atom) -> String {
    match a {
        Atom::Const(l) => l.to_string(),
        Atom::Var(v) => v.clone(),
        Atom::This => "this".into(),
    }
}

fn value(v: &Value) -> String {
    atom(&v.as_atom())
}

fn atoms(a: &[Atom]) -> String {
    a.iter().map(atom).collect::<Vec<_>>().join(", ")
}

/// A single core expression in statement or operand position.
fn expr(e: &CExpr, depth: usize) -> String {
    match &e.kind {
        CKind::Atom(a) => atom(a),
        CKind::New(t, args) => format!("new {t}({})", atoms(args)),
        CKind::Assign(x, r) => format!("{x} = {}", expr(r, depth)),
        CKind::FieldGet(v, f) => format!("{}.{f}", value(v)),
        CKind::FieldSet(v, f, a) => format!("{}.{f} = {}", value(v), atom(a)),
        CKind::Call(v, m, args) => format!("{}.{m}({})", value(v), atoms(args)),
        CKind::Prim(PrimOp::Bin(op), args) => {
            format!("{} {} {}", atom(&args[0]), op.as_str(), atom(&args[1]))
        }
        CKind::Prim(PrimOp::Un(op), args) => format!("{}{}", op.as_str(), atom(&args[0])),
        CKind::Atomic(d, body) => {
            let head = match d {
                Some(d) => format!("atomic {d}"),
                None => "atomic".to_string(),
            };
            region(&head, body, depth)
        }
        CKind::Fork(body) => region("fork", body, depth),
        CKind::Valid(v) => format!("valid {}", value(v)),
        CKind::Require(a) => format!("require({})", atom(a)),
        CKind::Emit(n, args) => format!("emit {n}({})", atoms(args)),
        CKind::Seq(..) | CKind::Cond(..) => {
            let mut s = String::from("{\n");
            print_stmts(&mut s, e, false, depth + 1);
            let _ = write!(s, "{}}}", INDENT.repeat(depth));
            s
        }
    }
}

/// Body of `atomic`/`fork`: a single expression when possible, else a block.
fn region(head: &str, body: &CExpr, depth: usize) -> String {
    let as_block = matches!(body.kind, CKind::Seq(..) | CKind::Cond(..)) || body.is_unit();
    if !as_block {
        return format!("{head} {}", expr(body, depth));
    }
    let mut s = format!("{head} {{\n");
    print_stmts(&mut s, body, false, depth + 1);
    let _ = write!(s, "{}}}", INDENT.repeat(depth));
    s
}

/// Surface expression text with the minimum parentheses needed to re-parse
/// to the same tree.
pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    surface(&mut s, e, 0);
    s
}

fn surface(out: &mut String, e: &Expr, min_prec: u8) {
    match &e.kind {
        ExprKind::Lit(l) => {
            let _ = write!(out, "{l}");
        }
        ExprKind::Name(n) => out.push_str(n),
        ExprKind::This => out.push_str("this"),
        ExprKind::New(t, args) => {
            let _ = write!(out, "new {t}(");
            list(out, args);
            out.push(')');
        }
        ExprKind::Assign(l, r) | ExprKind::CompoundAssign(_, l, r) => {
            let op = match &e.kind {
                ExprKind::CompoundAssign(BinOp::Add, ..) => "+=",
                ExprKind::CompoundAssign(BinOp::Sub, ..) => "-=",
                _ => "=",
            };
            let wrap = min_prec > 0;
            if wrap {
                out.push('(');
            }
            surface(out, l, 7);
            let _ = write!(out, " {op} ");
            surface(out, r, 0);
            if wrap {
                out.push(')');
            }
        }
        ExprKind::Field(r, f) => {
            surface(out, r, 7);
            let _ = write!(out, ".{f}");
        }
        ExprKind::Call(r, m, args) => {
            if let Some(r) = r {
                surface(out, r, 7);
                out.push('.');
            }
            let _ = write!(out, "{m}(");
            list(out, args);
            out.push(')');
        }
        ExprKind::Binary(op, a, b) => {
            let p = op.precedence();
            let wrap = p < min_prec;
            if wrap {
                out.push('(');
            }
            surface(out, a, p);
            let _ = write!(out, " {} ", op.as_str());
            surface(out, b, p + 1);
            if wrap {
                out.push(')');
            }
        }
        ExprKind::Unary(op, a) => {
            out.push_str(op.as_str());
            let needs = !matches!(
                a.kind,
                ExprKind::Lit(Lit::Bool(_) | Lit::Null)
                    | ExprKind::Name(_)
                    | ExprKind::This
                    | ExprKind::Field(..)
                    | ExprKind::Call(..)
                    | ExprKind::Unary(UnOp::Not, _)
            );
            if needs {
                out.push('(');
                surface(out, a, 0);
                out.push(')');
            } else {
                surface(out, a, 7);
            }
        }
        ExprKind::Atomic(..) | ExprKind::Fork(_) => {
            // Not expressible inline in invariants; printed for diagnostics only.
            out.push_str(if matches!(e.kind, ExprKind::Fork(_)) {
                "fork { ... }"
            } else {
                "atomic { ... }"
            });
        }
        ExprKind::Valid(r) => {
            out.push_str("valid ");
            surface(out, r, 7);
        }
        ExprKind::Require(r) => {
            out.push_str("require(");
            surface(out, r, 0);
            out.push(')');
        }
        ExprKind::Emit(n, args) => {
            let _ = write!(out, "emit {n}(");
            list(out, args);
            out.push(')');
        }
    }
}

fn list(out: &mut String, args: &[Expr]) {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        surface(out, a, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::desugar::desugar;
    use crate::syntax::parser::{parse_expr, parse_program};

    fn roundtrip(src: &str) {
        let p = desugar(&parse_program(src).unwrap().program);
        let text = pretty_print(&p);
        let q = desugar(
            &parse_program(&text)
                .unwrap_or_else(|e| panic!("reparse failed: {e:?}\n{text}"))
                .program,
        );
        assert_eq!(canonicalize_temps(&p), canonicalize_temps(&q), "\n{text}");
    }

    #[test]
    fn storage_roundtrips() {
        roundtrip(
            "class Storage [o] { uint256 number; inv number > 0;
               public void store(uint256 num) <this,this> { number = num; }
               public uint256 retrieve() <this,top> { return number; } }",
        );
    }

    #[test]
    fn contract_rendering() {
        assert_eq!(Contract::new(Context::This, Context::Bot).to_string(), "<this,bot>");
    }

    #[test]
    fn classes_keep_declaration_order() {
        let p = desugar(&parse_program("class B[o] { } class A[o] { }").unwrap().program);
        let text = pretty_print(&p);
        assert!(text.find("class B").unwrap() < text.find("class A").unwrap());
    }

    #[test]
    fn control_flow_and_regions_roundtrip() {
        roundtrip(
            "class A[o] { int f = 3; inv f >= 0 || !(f < -5);
               int m(int x) <this,this> {
                 int y = x * (2 + f);
                 if (y > 3 && x != 0) { f = y; } else { f -= 1; }
                 atomic <this,this> { f = 1; f += x; }
                 atomic m(1);
                 return y;
               }
               bool q(A<this> a) <this,bot> { return a.f > 0 || valid a; } }
             main { A<top> a = new A<top>(); var r = atomic a.m(2); fork a.m(1); if (r == 2) throw; }",
        );
    }

    #[test]
    fn surface_expressions_reparse() {
        for src in [
            "a - (b - c)",
            "(a || b) && c",
            "-x.f + 3",
            "!(a && b)",
            "a.b.c(1, 2) * -3",
            "x = y = 4",
            "1e30 > balance",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = expr_to_string(&e);
            assert_eq!(parse_expr(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }
}
