//! Normalized core form: receivers and operands are values or constants,
//! compound expressions are split into temporaries joined by `Seq`.

use std::collections::HashMap;

use super::ast::{BinOp, Constraint, Contract, Expr, Lit, TypeExpr, UnOp, Visibility};
use crate::diag::Span;

/// Operand position: a constant, variable or `this`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    Const(Lit),
    Var(String),
    This,
}

/// Receiver position: a variable or `this`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    This,
    Var(String),
}

impl Value {
    pub fn as_atom(&self) -> Atom {
        match self {
            Value::This => Atom::This,
            Value::Var(v) => Atom::Var(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimOp {
    Bin(BinOp),
    Un(UnOp),
}

#[derive(Debug, Clone)]
pub struct CExpr {
    pub kind: CKind,
    pub span: Span,
}

impl PartialEq for CExpr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl CExpr {
    pub fn new(kind: CKind, span: Span) -> Self {
        CExpr { kind, span }
    }

    pub fn unit(span: Span) -> Self {
        CExpr::new(CKind::Atom(Atom::Const(Lit::Unit)), span)
    }

    pub fn is_unit(&self) -> bool {
        matches!(self.kind, CKind::Atom(Atom::Const(Lit::Unit)))
    }

    /// Joins statements right-nested with `Seq`; an empty list is unit.
    pub fn seq(mut parts: Vec<CExpr>, span: Span) -> CExpr {
        let Some(mut acc) = parts.pop() else {
            return CExpr::unit(span);
        };
        while let Some(prev) = parts.pop() {
            let sp = prev.span;
            acc = CExpr::new(CKind::Seq(Box::new(prev), Box::new(acc)), sp);
        }
        acc
    }

    /// Flattens a right-nested `Seq` chain into statements.
    pub fn flatten_seq(&self) -> Vec<&CExpr> {
        let mut out = Vec::new();
        let mut cur = self;
        while let CKind::Seq(a, b) = &cur.kind {
            out.push(a.as_ref());
            cur = b;
        }
        out.push(cur);
        out
    }

    /// Pre-order visit of every sub-expression.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a CExpr)) {
        f(self);
        match &self.kind {
            CKind::Assign(_, e) | CKind::Atomic(_, e) | CKind::Fork(e) => e.visit(f),
            CKind::Seq(a, b) | CKind::Cond(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CKind {
    Atom(Atom),
    New(TypeExpr, Vec<Atom>),
    Assign(String, Box<CExpr>),
    FieldGet(Value, String),
    FieldSet(Value, String, Atom),
    Call(Value, String, Vec<Atom>),
    Prim(PrimOp, Vec<Atom>),
    Seq(Box<CExpr>, Box<CExpr>),
    Cond(Atom, Box<CExpr>, Box<CExpr>),
    Atomic(Option<Contract>, Box<CExpr>),
    Fork(Box<CExpr>),
    Valid(Value),
    Require(Atom),
    Emit(String, Vec<Atom>),
}

/// A method-level local. `ty == None` marks a temporary or `var` local whose
/// type is inferred from its first assignment.
#[derive(Debug, Clone)]
pub struct Local {
    pub name: String,
    pub ty: Option<TypeExpr>,
    pub span: Span,
}

impl PartialEq for Local {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name && self.ty == o.ty
    }
}

#[derive(Debug, Clone)]
pub struct CParam {
    pub ty: TypeExpr,
    pub name: String,
    pub span: Span,
}

impl PartialEq for CParam {
    fn eq(&self, o: &Self) -> bool {
        self.ty == o.ty && self.name == o.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CBody {
    pub locals: Vec<Local>,
    pub body: CExpr,
}

#[derive(Debug, Clone)]
pub struct CMethod {
    pub visibility: Visibility,
    pub ret: TypeExpr,
    pub name: String,
    pub params: Vec<CParam>,
    pub contract: Contract,
    pub contract_span: Span,
    pub body: CBody,
    pub span: Span,
}

impl PartialEq for CMethod {
    fn eq(&self, o: &Self) -> bool {
        self.visibility == o.visibility
            && self.ret == o.ret
            && self.name == o.name
            && self.params == o.params
            && self.contract == o.contract
            && self.body == o.body
    }
}

#[derive(Debug, Clone)]
pub struct CCtor {
    pub params: Vec<CParam>,
    pub body: CBody,
    pub span: Span,
}

impl PartialEq for CCtor {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params && self.body == o.body
    }
}

#[derive(Debug, Clone)]
pub struct CField {
    pub is_final: bool,
    pub ty: TypeExpr,
    pub name: String,
    pub span: Span,
}

impl PartialEq for CField {
    fn eq(&self, o: &Self) -> bool {
        self.is_final == o.is_final && self.ty == o.ty && self.name == o.name
    }
}

#[derive(Debug, Clone)]
pub struct CClass {
    pub name: String,
    pub params: Vec<String>,
    pub superclass: Option<TypeExpr>,
    pub constraints: Vec<Constraint>,
    /// The invariant stays in surface form; it is pure by construction
    /// (enforced by the checker) and evaluated directly.
    pub invariant: Option<Expr>,
    pub fields: Vec<CField>,
    pub methods: Vec<CMethod>,
    /// Field initializers of the whole superclass chain followed by the
    /// declared constructor body. Always present.
    pub ctor: CCtor,
    /// Number of constructors declared in source (more than one is an error).
    pub declared_ctors: usize,
    pub span: Span,
}

impl PartialEq for CClass {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.params == o.params
            && self.superclass == o.superclass
            && self.constraints == o.constraints
            && self.invariant == o.invariant
            && self.fields == o.fields
            && self.methods == o.methods
            && self.ctor == o.ctor
    }
}

impl CClass {
    pub fn method(&self, name: &str) -> Option<&CMethod> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CoreProgram {
    pub classes: Vec<CClass>,
    pub main: Option<CBody>,
    index: HashMap<String, usize>,
}

impl PartialEq for CoreProgram {
    fn eq(&self, o: &Self) -> bool {
        self.classes == o.classes && self.main == o.main
    }
}

impl CoreProgram {
    pub fn new(classes: Vec<CClass>, main: Option<CBody>) -> Self {
        let mut index = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            index.entry(c.name.clone()).or_insert(i);
        }
        CoreProgram {
            classes,
            main,
            index,
        }
    }

    pub fn class(&self, name: &str) -> Option<&CClass> {
        self.index.get(name).map(|&i| &self.classes[i])
    }

    /// The superclass chain starting at `name` itself. Stops at unknown
    /// classes and on cycles.
    pub fn chain(&self, name: &str) -> Vec<&CClass> {
        let mut out: Vec<&CClass> = Vec::new();
        let mut cur = self.class(name);
        while let Some(c) = cur {
            if out.iter().any(|p| p.name == c.name) {
                break;
            }
            out.push(c);
            cur = match &c.superclass {
                Some(TypeExpr::Class { name, .. }) => self.class(name),
                _ => None,
            };
        }
        out
    }

    /// Every field of `name`, superclass fields first.
    pub fn all_fields(&self, name: &str) -> Vec<(&CClass, &CField)> {
        let mut out = Vec::new();
        for c in self.chain(name).into_iter().rev() {
            for f in &c.fields {
                out.push((c, f));
            }
        }
        out
    }

    /// Finds a method by walking up the superclass chain; returns the
    /// declaring class too.
    pub fn find_method(&self, class: &str, m: &str) -> Option<(&CClass, &CMethod)> {
        self.chain(class)
            .into_iter()
            .find_map(|c| c.method(m).map(|mm| (c, mm)))
    }

    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        self.chain(sub).iter().any(|c| c.name == sup)
    }
}

/// Renames desugaring temporaries (`__t*`) in order of declaration so that two
/// programs differing only in fresh names compare equal.
pub fn canonicalize_temps(p: &CoreProgram) -> CoreProgram {
    let mut out = p.clone();
    let fix = |b: &mut CBody| {
        let mut map = HashMap::new();
        for l in &mut b.locals {
            if l.name.starts_with("__t") {
                let fresh = format!("__c{}", map.len());
                map.insert(l.name.clone(), fresh.clone());
                l.name = fresh;
            }
        }
        rename_expr(&mut b.body, &map);
    };
    for c in &mut out.classes {
        for m in &mut c.methods {
            fix(&mut m.body);
        }
        fix(&mut c.ctor.body);
    }
    if let Some(m) = &mut out.main {
        fix(m);
    }
    out
}

fn rename_expr(e: &mut CExpr, map: &HashMap<String, String>) {
    let ren = |s: &mut String| {
        if let Some(n) = map.get(s) {
            *s = n.clone();
        }
    };
    let ren_atom = |a: &mut Atom| {
        if let Atom::Var(v) = a {
            if let Some(n) = map.get(v) {
                *v = n.clone();
            }
        }
    };
    let ren_val = |v: &mut Value| {
        if let Value::Var(s) = v {
            if let Some(n) = map.get(s) {
                *s = n.clone();
            }
        }
    };
    match &mut e.kind {
        CKind::Atom(a) | CKind::Require(a) => ren_atom(a),
        CKind::New(_, args) | CKind::Prim(_, args) | CKind::Emit(_, args) => {
            args.iter_mut().for_each(ren_atom)
        }
        CKind::Assign(x, rhs) => {
            ren(x);
            rename_expr(rhs, map);
        }
        CKind::FieldGet(v, _) | CKind::Valid(v) => ren_val(v),
        CKind::FieldSet(v, _, a) => {
            ren_val(v);
            ren_atom(a);
        }
        CKind::Call(v, _, args) => {
            ren_val(v);
            args.iter_mut().for_each(ren_atom);
        }
        CKind::Seq(a, b) => {
            rename_expr(a, map);
            rename_expr(b, map);
        }
        CKind::Cond(c, a, b) => {
            ren_atom(c);
            rename_expr(a, map);
            rename_expr(b, map);
        }
        CKind::Atomic(_, b) | CKind::Fork(b) => rename_expr(b, map),
    }
}

/// Structural scan used to assert the core-form invariant: returns the span
/// of the first composite expression found in an operand or receiver slot.
/// Receivers and operands are typed as [`Atom`]/[`Value`], so the only way to
/// violate the form is a `Cond` or `Seq` nested under an `Assign`.
pub fn find_non_value_receiver(p: &CoreProgram) -> Option<Span> {
    let mut found = None;
    let mut scan = |b: &CBody| {
        b.body.visit(&mut |e| {
            if let CKind::Assign(_, rhs) = &e.kind {
                if matches!(rhs.kind, CKind::Seq(..) | CKind::Cond(..)) && found.is_none() {
                    found = Some(rhs.span);
                }
            }
        });
    };
    for c in &p.classes {
        for m in &c.methods {
            scan(&m.body);
        }
        scan(&c.ctor.body);
    }
    if let Some(m) = &p.main {
        scan(m);
    }
    found
}
