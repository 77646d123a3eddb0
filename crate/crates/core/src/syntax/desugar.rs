//! Lowering from the surface tree to core form.

use std::collections::{HashMap, HashSet};

use super::ast::*;
use super::core::*;
use crate::diag::Span;

pub fn desugar(p: &Program) -> CoreProgram {
    let classes = p.classes.iter().map(|c| desugar_class(p, c)).collect();
    let main = p.main.as_ref().map(|b| {
        let mut cx = Lowerer::new(HashSet::new(), &[], b);
        let body = cx.block(b, true);
        CBody {
            locals: cx.locals,
            body,
        }
    });
    CoreProgram::new(classes, main)
}

fn superclass_of<'p>(p: &'p Program, c: &'p ClassDecl) -> Option<(&'p ClassDecl, &'p [Context])> {
    match &c.superclass {
        Some(TypeExpr::Class { name, args }) => p.class(name).map(|s| (s, args.as_slice())),
        _ => None,
    }
}

/// Surface classes from `c` upwards, guarding against cycles.
fn surface_chain<'p>(p: &'p Program, c: &'p ClassDecl) -> Vec<&'p ClassDecl> {
    let mut out = vec![c];
    let mut cur = c;
    while let Some((s, _)) = superclass_of(p, cur) {
        if out.iter().any(|x| x.name == s.name) {
            break;
        }
        out.push(s);
        cur = s;
    }
    out
}

fn desugar_class(p: &Program, c: &ClassDecl) -> CClass {
    let chain = surface_chain(p, c);
    let fields: HashSet<String> = chain
        .iter()
        .flat_map(|k| k.fields.iter().map(|f| f.name.clone()))
        .collect();

    let methods = c
        .methods
        .iter()
        .map(|m| {
            let params: Vec<CParam> = m.params.iter().map(cparam).collect();
            let mut cx = Lowerer::new(fields.clone(), &m.params, &m.body);
            let body = cx.block(&m.body, true);
            CMethod {
                visibility: m.visibility,
                ret: m.ret.clone(),
                name: m.name.clone(),
                params,
                contract: m.contract.clone(),
                contract_span: m.contract_span,
                body: CBody {
                    locals: cx.locals,
                    body,
                },
                span: m.span,
            }
        })
        .collect();

    // Constructor: inherited field initializers (contexts renamed into this
    // class's scope), own initializers, then the declared body.
    let declared = c.ctors.first();
    let empty = Block::default();
    let (ctor_params, ctor_block, ctor_span) = match declared {
        Some(k) => (k.params.as_slice(), &k.body, k.span),
        None => (&[][..], &empty, c.span),
    };
    let mut cx = Lowerer::new(fields.clone(), ctor_params, ctor_block);
    let mut stmts = Vec::new();
    let saved_scope = std::mem::take(&mut cx.scope);
    let mut segments: Vec<(&ClassDecl, HashMap<String, Context>)> = Vec::new();
    let mut subst: HashMap<String, Context> = HashMap::new();
    let mut cur = c;
    segments.push((c, subst.clone()));
    while let Some((s, args)) = superclass_of(p, cur) {
        if segments.iter().any(|(k, _)| k.name == s.name) {
            break;
        }
        let next: HashMap<String, Context> = s
            .params
            .iter()
            .zip(args.iter())
            .map(|(formal, actual)| (formal.clone(), apply_subst(&subst, actual)))
            .collect();
        subst = next;
        segments.push((s, subst.clone()));
        cur = s;
    }
    for (k, sub) in segments.iter().rev() {
        cx.subst = sub.clone();
        for f in &k.fields {
            if let Some(init) = &f.init {
                let mut pre = Vec::new();
                let a = cx.atom(init, &mut pre);
                stmts.extend(pre);
                stmts.push(CExpr::new(
                    CKind::FieldSet(Value::This, f.name.clone(), a),
                    init.span,
                ));
            }
        }
    }
    cx.subst.clear();
    cx.scope = saved_scope;
    cx.stmts_into(&ctor_block.stmts, true, &mut stmts);
    let ctor = CCtor {
        params: ctor_params.iter().map(cparam).collect(),
        body: CBody {
            locals: cx.locals,
            body: CExpr::seq(stmts, ctor_span),
        },
        span: ctor_span,
    };

    CClass {
        name: c.name.clone(),
        params: c.params.clone(),
        superclass: c.superclass.clone(),
        constraints: c.constraints.clone(),
        invariant: c.invariant.clone(),
        fields: c
            .fields
            .iter()
            .map(|f| CField {
                is_final: f.is_final,
                ty: f.ty.clone(),
                name: f.name.clone(),
                span: f.span,
            })
            .collect(),
        methods,
        ctor,
        declared_ctors: c.ctors.len(),
        span: c.span,
    }
}

fn cparam(p: &Param) -> CParam {
    CParam {
        ty: p.ty.clone(),
        name: p.name.clone(),
        span: p.span,
    }
}

fn apply_subst(s: &HashMap<String, Context>, k: &Context) -> Context {
    match k {
        Context::Param(n) => s.get(n).cloned().unwrap_or_else(|| k.clone()),
        other => other.clone(),
    }
}

fn subst_type(s: &HashMap<String, Context>, t: &TypeExpr) -> TypeExpr {
    match t {
        TypeExpr::Class { name, args } if !s.is_empty() => TypeExpr::Class {
            name: name.clone(),
            args: args.iter().map(|a| apply_subst(s, a)).collect(),
        },
        other => other.clone(),
    }
}

fn collect_decls(b: &Block, out: &mut Vec<String>) {
    for s in &b.stmts {
        match &s.kind {
            StmtKind::Local { name, .. } => out.push(name.clone()),
            StmtKind::If(_, t, e) => {
                collect_decls(t, out);
                if let Some(e) = e {
                    collect_decls(e, out);
                }
            }
            StmtKind::Block(inner) => collect_decls(inner, out),
            StmtKind::Expr(e) | StmtKind::Return(Some(e)) => collect_expr_decls(e, out),
            _ => {}
        }
    }
}

fn collect_expr_decls(e: &Expr, out: &mut Vec<String>) {
    let mut subs: Vec<&Expr> = Vec::new();
    match &e.kind {
        ExprKind::Atomic(_, AtomicBody::Block(b)) | ExprKind::Fork(AtomicBody::Block(b)) => {
            collect_decls(b, out)
        }
        ExprKind::Atomic(_, AtomicBody::Expr(x)) | ExprKind::Fork(AtomicBody::Expr(x)) => {
            subs.push(x)
        }
        ExprKind::Lit(_) | ExprKind::Name(_) | ExprKind::This => {}
        ExprKind::New(_, args) | ExprKind::Emit(_, args) => subs.extend(args),
        ExprKind::Assign(a, b) | ExprKind::CompoundAssign(_, a, b) | ExprKind::Binary(_, a, b) => {
            subs.push(a);
            subs.push(b);
        }
        ExprKind::Field(r, _) | ExprKind::Unary(_, r) | ExprKind::Valid(r) | ExprKind::Require(r) => {
            subs.push(r)
        }
        ExprKind::Call(r, _, args) => {
            subs.extend(r.as_deref());
            subs.extend(args);
        }
    }
    for x in subs {
        collect_expr_decls(x, out);
    }
}

fn collect_names(b: &Block, out: &mut HashSet<String>) {
    fn ex(e: &Expr, out: &mut HashSet<String>) {
        match &e.kind {
            ExprKind::Name(n) => {
                out.insert(n.clone());
            }
            ExprKind::Lit(_) | ExprKind::This => {}
            ExprKind::New(_, args) | ExprKind::Emit(_, args) => args.iter().for_each(|a| ex(a, out)),
            ExprKind::Assign(a, b)
            | ExprKind::CompoundAssign(_, a, b)
            | ExprKind::Binary(_, a, b) => {
                ex(a, out);
                ex(b, out);
            }
            ExprKind::Field(r, _) | ExprKind::Unary(_, r) | ExprKind::Valid(r) | ExprKind::Require(r) => {
                ex(r, out)
            }
            ExprKind::Call(r, _, args) => {
                if let Some(r) = r {
                    ex(r, out);
                }
                args.iter().for_each(|a| ex(a, out));
            }
            ExprKind::Atomic(_, body) | ExprKind::Fork(body) => match body {
                AtomicBody::Expr(e) => ex(e, out),
                AtomicBody::Block(b) => collect_names(b, out),
            },
        }
    }
    for s in &b.stmts {
        match &s.kind {
            StmtKind::Expr(e) | StmtKind::Return(Some(e)) => ex(e, out),
            StmtKind::Local { name, init, .. } => {
                out.insert(name.clone());
                if let Some(e) = init {
                    ex(e, out);
                }
            }
            StmtKind::If(c, t, e) => {
                ex(c, out);
                collect_names(t, out);
                if let Some(e) = e {
                    collect_names(e, out);
                }
            }
            StmtKind::Block(b) => collect_names(b, out),
            StmtKind::Return(None) | StmtKind::Throw => {}
        }
    }
}

struct Lowerer {
    fields: HashSet<String>,
    /// Parameters and every local declared anywhere in the body.
    scope: HashSet<String>,
    used: HashSet<String>,
    locals: Vec<Local>,
    next: usize,
    subst: HashMap<String, Context>,
}

impl Lowerer {
    fn new(fields: HashSet<String>, params: &[Param], body: &Block) -> Self {
        let mut decls = Vec::new();
        collect_decls(body, &mut decls);
        let mut scope: HashSet<String> = params.iter().map(|p| p.name.clone()).collect();
        scope.extend(decls);
        let mut used = scope.clone();
        collect_names(body, &mut used);
        used.extend(fields.iter().cloned());
        Lowerer {
            fields,
            scope,
            used,
            locals: Vec::new(),
            next: 0,
            subst: HashMap::new(),
        }
    }

    fn fresh(&mut self, span: Span) -> String {
        loop {
            let name = format!("__t{}", self.next);
            self.next += 1;
            if self.used.insert(name.clone()) {
                self.locals.push(Local {
                    name: name.clone(),
                    ty: None,
                    span,
                });
                return name;
            }
        }
    }

    fn is_field(&self, n: &str) -> bool {
        !self.scope.contains(n) && self.fields.contains(n)
    }

    fn block(&mut self, b: &Block, tail: bool) -> CExpr {
        let mut out = Vec::new();
        self.stmts_into(&b.stmts, tail, &mut out);
        let span = b.stmts.first().map(|s| s.span).unwrap_or_default();
        CExpr::seq(out, span)
    }

    fn stmts_into(&mut self, stmts: &[Stmt], tail: bool, out: &mut Vec<CExpr>) {
        let n = stmts.len();
        for (i, s) in stmts.iter().enumerate() {
            self.stmt(s, tail && i + 1 == n, out);
        }
    }

    fn stmt(&mut self, s: &Stmt, tail: bool, out: &mut Vec<CExpr>) {
        match &s.kind {
            StmtKind::Expr(e) | StmtKind::Return(Some(e)) => {
                let mut pre = Vec::new();
                let r = self.expr(e, &mut pre);
                out.extend(pre);
                if tail || !matches!(r.kind, CKind::Atom(_)) {
                    out.push(r);
                }
            }
            StmtKind::Return(None) => {}
            StmtKind::Local { ty, name, init } => {
                self.locals.push(Local {
                    name: name.clone(),
                    ty: ty.as_ref().map(|t| subst_type(&self.subst, t)),
                    span: s.span,
                });
                if let Some(init) = init {
                    let mut pre = Vec::new();
                    let r = self.expr(init, &mut pre);
                    out.extend(pre);
                    out.push(CExpr::new(CKind::Assign(name.clone(), Box::new(r)), s.span));
                }
            }
            StmtKind::Throw => out.push(CExpr::new(
                CKind::Require(Atom::Const(Lit::Bool(false))),
                s.span,
            )),
            StmtKind::If(c, t, e) => {
                let mut pre = Vec::new();
                let a = self.atom(c, &mut pre);
                out.extend(pre);
                let then = self.block(t, tail);
                let els = match e {
                    Some(e) => self.block(e, tail),
                    None => CExpr::unit(s.span),
                };
                out.push(CExpr::new(
                    CKind::Cond(a, Box::new(then), Box::new(els)),
                    s.span,
                ));
            }
            StmtKind::Block(b) => self.stmts_into(&b.stmts, tail, out),
        }
    }

    fn atom(&mut self, e: &Expr, pre: &mut Vec<CExpr>) -> Atom {
        let r = self.expr(e, pre);
        match r.kind {
            CKind::Atom(a) => a,
            _ => {
                let t = self.fresh(e.span);
                pre.push(CExpr::new(CKind::Assign(t.clone(), Box::new(r)), e.span));
                Atom::Var(t)
            }
        }
    }

    fn value(&mut self, e: &Expr, pre: &mut Vec<CExpr>) -> Value {
        match self.atom(e, pre) {
            Atom::This => Value::This,
            Atom::Var(v) => Value::Var(v),
            c @ Atom::Const(_) => {
                let t = self.fresh(e.span);
                pre.push(CExpr::new(
                    CKind::Assign(t.clone(), Box::new(CExpr::new(CKind::Atom(c), e.span))),
                    e.span,
                ));
                Value::Var(t)
            }
        }
    }

    fn atoms(&mut self, es: &[Expr], pre: &mut Vec<CExpr>) -> Vec<Atom> {
        es.iter().map(|e| self.atom(e, pre)).collect()
    }

    /// Lowers `e`, pushing any prerequisite statements onto `pre` and
    /// returning a single core expression.
    fn expr(&mut self, e: &Expr, pre: &mut Vec<CExpr>) -> CExpr {
        let sp = e.span;
        let kind = match &e.kind {
            ExprKind::Lit(l) => CKind::Atom(Atom::Const(l.clone())),
            ExprKind::This => CKind::Atom(Atom::This),
            ExprKind::Name(n) => {
                if self.is_field(n) {
                    CKind::FieldGet(Value::This, n.clone())
                } else {
                    CKind::Atom(Atom::Var(n.clone()))
                }
            }
            ExprKind::New(t, args) => {
                let args = self.atoms(args, pre);
                CKind::New(subst_type(&self.subst, t), args)
            }
            ExprKind::Assign(lhs, rhs) => match &lhs.kind {
                ExprKind::Name(n) if !self.is_field(n) => {
                    let r = self.expr(rhs, pre);
                    CKind::Assign(n.clone(), Box::new(r))
                }
                ExprKind::Name(n) => {
                    let a = self.atom(rhs, pre);
                    CKind::FieldSet(Value::This, n.clone(), a)
                }
                ExprKind::Field(recv, f) => {
                    let v = self.value(recv, pre);
                    let a = self.atom(rhs, pre);
                    CKind::FieldSet(v, f.clone(), a)
                }
                _ => unreachable!("parser restricts assignment targets"),
            },
            ExprKind::CompoundAssign(op, lhs, rhs) => {
                let prim = PrimOp::Bin(*op);
                match &lhs.kind {
                    ExprKind::Name(n) if !self.is_field(n) => {
                        let a = self.atom(rhs, pre);
                        let sum = CExpr::new(CKind::Prim(prim, vec![Atom::Var(n.clone()), a]), sp);
                        CKind::Assign(n.clone(), Box::new(sum))
                    }
                    ExprKind::Name(_) | ExprKind::Field(..) => {
                        let (v, f) = match &lhs.kind {
                            ExprKind::Name(n) => (Value::This, n.clone()),
                            ExprKind::Field(recv, f) => (self.value(recv, pre), f.clone()),
                            _ => unreachable!(),
                        };
                        let old = self.fresh(sp);
                        pre.push(CExpr::new(
                            CKind::Assign(
                                old.clone(),
                                Box::new(CExpr::new(CKind::FieldGet(v.clone(), f.clone()), sp)),
                            ),
                            sp,
                        ));
                        let a = self.atom(rhs, pre);
                        let new = self.fresh(sp);
                        pre.push(CExpr::new(
                            CKind::Assign(
                                new.clone(),
                                Box::new(CExpr::new(CKind::Prim(prim, vec![Atom::Var(old), a]), sp)),
                            ),
                            sp,
                        ));
                        CKind::FieldSet(v, f, Atom::Var(new))
                    }
                    _ => unreachable!("parser restricts assignment targets"),
                }
            }
            ExprKind::Field(recv, f) => {
                let v = self.value(recv, pre);
                CKind::FieldGet(v, f.clone())
            }
            ExprKind::Call(recv, m, args) => {
                let v = match recv {
                    Some(r) => self.value(r, pre),
                    None => Value::This,
                };
                let args = self.atoms(args, pre);
                CKind::Call(v, m.clone(), args)
            }
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), a, b) => {
                let t = self.fresh(sp);
                let ra = self.expr(a, pre);
                pre.push(CExpr::new(CKind::Assign(t.clone(), Box::new(ra)), sp));
                let mut inner = Vec::new();
                let rb = self.expr(b, &mut inner);
                inner.push(CExpr::new(CKind::Assign(t.clone(), Box::new(rb)), sp));
                let rest = CExpr::seq(inner, sp);
                let (then, els) = if *op == BinOp::And {
                    (rest, CExpr::unit(sp))
                } else {
                    (CExpr::unit(sp), rest)
                };
                pre.push(CExpr::new(
                    CKind::Cond(Atom::Var(t.clone()), Box::new(then), Box::new(els)),
                    sp,
                ));
                CKind::Atom(Atom::Var(t))
            }
            ExprKind::Binary(op, a, b) => {
                let a = self.atom(a, pre);
                let b = self.atom(b, pre);
                CKind::Prim(PrimOp::Bin(*op), vec![a, b])
            }
            ExprKind::Unary(op, a) => {
                let a = self.atom(a, pre);
                CKind::Prim(PrimOp::Un(*op), vec![a])
            }
            ExprKind::Atomic(contract, body) => {
                let body = match body {
                    AtomicBody::Block(b) => self.block(b, true),
                    AtomicBody::Expr(inner) => {
                        let mut ipre = Vec::new();
                        let r = self.expr(inner, &mut ipre);
                        if contract.is_none() && ipre.iter().all(is_hoistable) {
                            pre.extend(ipre);
                            r
                        } else {
                            ipre.push(r);
                            CExpr::seq(ipre, sp)
                        }
                    }
                };
                CKind::Atomic(contract.clone(), Box::new(body))
            }
            ExprKind::Fork(body) => {
                let body = match body {
                    AtomicBody::Block(b) => self.block(b, true),
                    AtomicBody::Expr(inner) => {
                        let mut ipre = Vec::new();
                        let r = self.expr(inner, &mut ipre);
                        ipre.push(r);
                        CExpr::seq(ipre, sp)
                    }
                };
                CKind::Fork(Box::new(body))
            }
            ExprKind::Valid(e) => CKind::Valid(self.value(e, pre)),
            ExprKind::Require(e) => CKind::Require(self.atom(e, pre)),
            ExprKind::Emit(n, args) => {
                let args = self.atoms(args, pre);
                CKind::Emit(n.clone(), args)
            }
        };
        CExpr::new(kind, sp)
    }
}

/// Pure receiver/operand preparation that may move out of a contract-less
/// atomic so that its body stays a single call or write.
fn is_hoistable(e: &CExpr) -> bool {
    match &e.kind {
        CKind::Assign(t, rhs) => {
            t.starts_with("__t")
                && matches!(rhs.kind, CKind::FieldGet(..) | CKind::Atom(_) | CKind::Prim(..))
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parser::parse_program;

    fn lower(src: &str) -> CoreProgram {
        desugar(&parse_program(src).unwrap().program)
    }

    #[test]
    fn chained_receiver_gets_a_temporary() {
        let p = lower(
            "class A[o] { void deposit(int x) <this,this> { } }
             class B[o] { A<this> getAccount() <this,bot> { return null; }
                          void go(B<this> b, int x) <this,this> { b.getAccount().deposit(x); } }",
        );
        let go = p.class("B").unwrap().method("go").unwrap();
        let stmts = go.body.body.flatten_seq();
        assert_eq!(stmts.len(), 2);
        let CKind::Assign(t, rhs) = &stmts[0].kind else { panic!("{:?}", stmts[0]) };
        assert!(matches!(&rhs.kind, CKind::Call(Value::Var(b), m, _) if b == "b" && m == "getAccount"));
        assert!(matches!(&stmts[1].kind, CKind::Call(Value::Var(v), m, _) if v == t && m == "deposit"));
    }

    #[test]
    fn compound_assign_on_field() {
        let p = lower("class A[o] { int amount; void deposit(int x) <this,this> { amount += x; } }");
        let m = p.class("A").unwrap().method("deposit").unwrap();
        let stmts = m.body.body.flatten_seq();
        assert_eq!(stmts.len(), 3);
        assert!(matches!(&stmts[0].kind, CKind::Assign(_, r) if matches!(r.kind, CKind::FieldGet(Value::This, _))));
        assert!(matches!(&stmts[1].kind, CKind::Assign(_, r) if matches!(r.kind, CKind::Prim(PrimOp::Bin(BinOp::Add), _))));
        assert!(matches!(&stmts[2].kind, CKind::FieldSet(Value::This, f, Atom::Var(_)) if f == "amount"));
    }

    #[test]
    fn core_input_is_unchanged() {
        let src = "class A[o] { int f; void m(int x) <this,this> { this.f = x; } }";
        let p = lower(src);
        let m = p.class("A").unwrap().method("m").unwrap();
        assert!(m.body.locals.is_empty());
        assert!(matches!(&m.body.body.kind, CKind::FieldSet(Value::This, f, Atom::Var(x)) if f == "f" && x == "x"));
    }

    #[test]
    fn throw_becomes_require_false() {
        let p = lower("class A[o] { void m() <this,this> { throw; } }");
        let m = p.class("A").unwrap().method("m").unwrap();
        assert_eq!(m.body.body.kind, CKind::Require(Atom::Const(Lit::Bool(false))));
    }

    #[test]
    fn contractless_atomic_hoists_field_read() {
        let p = lower(
            "class A[o] { void withdraw(int x) <this,this> { } }
             class C[o] { A<this> a; void safe(int amt) <this,this> { atomic a.withdraw(amt); } }",
        );
        let m = p.class("C").unwrap().method("safe").unwrap();
        let stmts = m.body.body.flatten_seq();
        assert_eq!(stmts.len(), 2);
        let CKind::Atomic(None, body) = &stmts[1].kind else { panic!() };
        assert!(matches!(body.kind, CKind::Call(Value::Var(_), _, _)));
    }

    #[test]
    fn temporaries_avoid_user_names() {
        let p = lower("class A[o] { int f; int m(int __t0) <this,bot> { return f + __t0; } }");
        let m = p.class("A").unwrap().method("m").unwrap();
        assert!(m.body.locals.iter().all(|l| l.name != "__t0"));
    }

    #[test]
    fn inherited_initializers_are_renamed() {
        let p = lower(
            "class K[o] { }
             class C[o] { K<o> k = new K<o>(); }
             class D[p] extends C<p> { int x = 1; }",
        );
        let d = p.class("D").unwrap();
        let mut news = Vec::new();
        d.ctor.body.body.visit(&mut |e| {
            if let CKind::New(t, _) = &e.kind {
                news.push(t.clone());
            }
        });
        assert_eq!(news, vec![TypeExpr::class("K", vec![Context::Param("p".into())])]);
    }
}
