//! Ownership type checking with validity contracts.
//!
//! Every expression in a body is checked against the contract of the
//! innermost enclosing method or transaction (the frame): writes must land
//! inside the frame's invalidity set and callee contracts must be
//! subcontracts of the frame.

use std::collections::{HashMap, HashSet};

use crate::diag::{Code, Diagnostic, Span};
use crate::ownership::{owner_bound, ContextEnv, Subst};
use crate::syntax::*;

/// A static type. `Null` is the type of the `null` literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ty {
    Class(String, Vec<Context>),
    Int,
    Bool,
    Void,
    Null,
}

impl Ty {
    pub fn from_type(t: &TypeExpr) -> Ty {
        match t {
            TypeExpr::Class { name, args } => Ty::Class(name.clone(), args.clone()),
            TypeExpr::Int(_) => Ty::Int,
            TypeExpr::Bool => Ty::Bool,
            TypeExpr::Void => Ty::Void,
        }
    }

    pub fn has_existential(&self) -> bool {
        matches!(self, Ty::Class(_, a) if a.contains(&Context::Existential))
    }

    fn owner(&self) -> Option<&Context> {
        match self {
            Ty::Class(_, a) => a.first(),
            _ => None,
        }
    }
}

impl std::fmt::Display for Ty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ty::Class(n, a) => write!(f, "{}", TypeExpr::class(n.clone(), a.clone())),
            Ty::Int => f.write_str("int"),
            Ty::Bool => f.write_str("bool"),
            Ty::Void => f.write_str("void"),
            Ty::Null => f.write_str("null"),
        }
    }
}

/// `k2` abstracts `k`: `*` abstracts everything; otherwise only a
/// well-formed context abstracts itself.
pub fn abstracts(env: &ContextEnv, k: &Context, k2: &Context) -> bool {
    *k2 == Context::Any || (k == k2 && env.ctx_wf(k))
}

/// Context arguments of the superclass type of `name<args>`, or `None` at
/// the root of the hierarchy.
fn super_type(p: &CoreProgram, name: &str, args: &[Context]) -> Option<(String, Vec<Context>)> {
    let c = p.class(name)?;
    let TypeExpr::Class { name: sn, args: sa } = c.superclass.as_ref()? else {
        return None;
    };
    let s = Subst::new(&c.params, args, Context::This).ok()?;
    Some((sn.clone(), sa.iter().map(|k| s.ctx(k)).collect()))
}

/// Walks the superclass chain of `name<args>` up to `target`, returning the
/// arguments at which `target` is reached.
pub fn upcast(p: &CoreProgram, name: &str, args: &[Context], target: &str) -> Option<Vec<Context>> {
    let mut cur = (name.to_string(), args.to_vec());
    for _ in 0..=p.classes.len() {
        if cur.0 == target {
            return Some(cur.1);
        }
        cur = super_type(p, &cur.0, &cur.1)?;
    }
    None
}

/// Reflexive-transitive closure of substituted superclass steps; contexts
/// must match exactly.
pub fn subtype(p: &CoreProgram, t: &Ty, t2: &Ty) -> bool {
    match (t, t2) {
        (Ty::Class(n, a), Ty::Class(n2, a2)) => upcast(p, n, a, n2).is_some_and(|up| &up == a2),
        _ => t == t2,
    }
}

/// `t` may be bound to a location declared with type `t2`.
pub fn bindable(p: &CoreProgram, env: &ContextEnv, t: &Ty, t2: &Ty) -> bool {
    if t2.has_existential() {
        return false;
    }
    match (t, t2) {
        (Ty::Null, Ty::Class(..)) => true,
        (Ty::Class(n, a), Ty::Class(n2, a2)) => match upcast(p, n, a, n2) {
            Some(up) => {
                up.len() == a2.len() && up.iter().zip(a2).all(|(k, k2)| abstracts(env, k, k2))
            }
            None => false,
        },
        _ => t == t2,
    }
}

/// Failure code for an unsuccessful binding.
fn bind_code(t: &Ty, t2: &Ty) -> Code {
    if t.has_existential() || t2.has_existential() {
        Code::BindExist
    } else {
        Code::Type
    }
}

#[derive(Debug, Clone)]
struct Var {
    ty: Option<Ty>,
}

/// Mutable state while checking one body.
struct Body<'a> {
    env: &'a ContextEnv,
    vars: HashMap<String, Var>,
    frame: Contract,
    in_atomic: bool,
    in_ctor: bool,
    /// Member bodies obey the owner-call rule; `main` does not.
    member: bool,
}

pub struct Checker<'p> {
    p: &'p CoreProgram,
    diags: Vec<Diagnostic>,
}

pub fn check_program(p: &CoreProgram) -> Vec<Diagnostic> {
    let mut c = Checker {
        p,
        diags: Vec::new(),
    };
    c.program();
    c.diags
        .sort_by_key(|d| (d.span, d.code));
    c.diags
}

impl<'p> Checker<'p> {
    fn err(&mut self, code: Code, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(code, span, msg));
    }

    fn program(&mut self) {
        let mut seen = HashSet::new();
        for c in &self.p.classes {
            if !seen.insert(c.name.as_str()) {
                self.err(Code::Type, c.span, format!("duplicate class `{}`", c.name));
            }
        }
        for c in &self.p.classes {
            self.class(c);
        }
        if let Some(m) = &self.p.main {
            let env = ContextEnv::top_level();
            let mut b = Body {
                env: &env,
                vars: HashMap::new(),
                frame: Contract::top_top(),
                in_atomic: false,
                in_ctor: false,
                member: false,
            };
            self.locals(&mut b, &[], m);
            self.expr(&mut b, &m.body);
        }
    }

    /// Checks that `t` names a known class with the right arity and
    /// well-formed arguments (`*` allowed).
    fn type_wf(&mut self, env: &ContextEnv, t: &TypeExpr, span: Span) -> bool {
        let TypeExpr::Class { name, args } = t else {
            return true;
        };
        let Some(c) = self.p.class(name) else {
            self.err(Code::Type, span, format!("unknown class `{name}`"));
            return false;
        };
        if c.params.len() != args.len() {
            self.err(
                Code::CtxArity,
                span,
                format!(
                    "`{name}` expects {} context argument(s), found {}",
                    c.params.len(),
                    args.len()
                ),
            );
            return false;
        }
        for a in args {
            if *a != Context::Any && !env.ctx_wf(a) {
                self.err(Code::CtxWf, span, format!("context `{a}` is not in scope"));
                return false;
            }
        }
        true
    }

    fn class(&mut self, c: &CClass) {
        let env = ContextEnv::for_class(c);
        let p = self.p;

        let mut seen = HashSet::new();
        for x in &c.params {
            if !seen.insert(x) {
                self.err(Code::Type, c.span, format!("duplicate context parameter `{x}`"));
            }
        }
        if let Some(sup) = &c.superclass {
            if self.type_wf(&env, sup, c.span) {
                if p.chain(&c.name).len() != depth_to_root(p, &c.name) {
                    self.err(Code::Type, c.span, format!("cyclic inheritance at `{}`", c.name));
                }
                if sup.as_class().map(|(_, a)| a.contains(&Context::Any)).unwrap_or(false) {
                    self.err(Code::CtxWf, c.span, "`*` is not allowed in a superclass type");
                }
            }
        }
        for k in &c.constraints {
            for side in [&k.lhs, &k.rhs] {
                if !env.ctx_wf(side) {
                    self.err(Code::CtxWf, c.span, format!("constraint mentions `{side}`, which is not in scope"));
                }
            }
        }

        let mut field_names = HashSet::new();
        for (_, f) in p.all_fields(&c.name) {
            if !field_names.insert(f.name.as_str()) {
                self.err(Code::Type, f.span, format!("duplicate field `{}`", f.name));
            }
        }
        for f in &c.fields {
            if f.ty.is_void() {
                self.err(Code::Type, f.span, "fields cannot be `void`");
            }
            self.type_wf(&env, &f.ty, f.span);
        }

        if c.declared_ctors > 1 {
            self.err(Code::Type, c.ctor.span, format!("`{}` declares more than one constructor", c.name));
        }

        let mut method_names = HashSet::new();
        for m in &c.methods {
            if !method_names.insert(m.name.as_str()) {
                self.err(Code::Type, m.span, format!("duplicate method `{}`", m.name));
            }
            self.check_override(c, m);
            self.check_method(&env, m);
        }

        let mut b = Body {
            env: &env,
            vars: HashMap::new(),
            frame: Contract::constructor(),
            in_atomic: false,
            in_ctor: true,
            member: true,
        };
        for prm in &c.ctor.params {
            self.type_wf(&env, &prm.ty, prm.span);
        }
        self.locals(&mut b, &c.ctor.params, &c.ctor.body);
        self.expr(&mut b, &c.ctor.body.body);

        self.diags.extend(check_invariant_clause(p, c));
    }

    /// Overrides must repeat the overridden signature and contract.
    fn check_override(&mut self, c: &CClass, m: &CMethod) {
        let Some(TypeExpr::Class { name, args }) = &c.superclass else {
            return;
        };
        let Some((decl, sup)) = self.p.find_method(name, &m.name) else {
            return;
        };
        let Some(up) = upcast(self.p, name, args, &decl.name) else {
            return;
        };
        let Ok(s) = Subst::new(&decl.params, &up, Context::This) else {
            return;
        };
        if s.contract(&sup.contract) != m.contract {
            self.err(
                Code::Subcontract,
                m.contract_span,
                format!(
                    "`{}` overrides `{}.{}` with contract {} but must keep {}",
                    m.name,
                    decl.name,
                    sup.name,
                    m.contract,
                    s.contract(&sup.contract)
                ),
            );
        }
        let same_sig = s.ty(&sup.ret) == m.ret
            && sup.params.len() == m.params.len()
            && sup.params.iter().zip(&m.params).all(|(a, b)| s.ty(&a.ty) == b.ty);
        if !same_sig {
            self.err(Code::Type, m.span, format!("`{}` changes the signature of the overridden method", m.name));
        }
    }

    pub fn check_method(&mut self, env: &ContextEnv, m: &CMethod) {
        if !env.contract_wf(&m.contract) {
            self.err(
                Code::CtxWf,
                m.contract_span,
                format!("contract {} is not well-formed here", m.contract),
            );
            return;
        }
        self.type_wf(env, &m.ret, m.span);
        for prm in &m.params {
            if prm.ty.is_void() {
                self.err(Code::Type, prm.span, "parameters cannot be `void`");
            }
            self.type_wf(env, &prm.ty, prm.span);
        }
        let mut b = Body {
            env,
            vars: HashMap::new(),
            frame: m.contract.clone(),
            in_atomic: false,
            in_ctor: false,
            member: true,
        };
        self.locals(&mut b, &m.params, &m.body);
        let got = self.expr(&mut b, &m.body.body);
        if !m.ret.is_void() {
            let want = Ty::from_type(&m.ret);
            if let Some(got) = got {
                if !bindable(self.p, env, &got, &want) {
                    let span = tail_span(&m.body.body);
                    self.err(
                        bind_code(&got, &want),
                        span,
                        format!("`{}` returns {got} where {want} is declared", m.name),
                    );
                }
            }
        }
    }

    fn locals(&mut self, b: &mut Body, params: &[CParam], body: &CBody) {
        for prm in params {
            if b.vars.contains_key(&prm.name) {
                self.err(Code::Type, prm.span, format!("duplicate parameter `{}`", prm.name));
            }
            b.vars.insert(
                prm.name.clone(),
                Var {
                    ty: Some(Ty::from_type(&prm.ty)),
                },
            );
        }
        for l in &body.locals {
            if b.vars.contains_key(&l.name) {
                self.err(Code::Type, l.span, format!("duplicate variable `{}`", l.name));
                continue;
            }
            if let Some(t) = &l.ty {
                if t.is_void() {
                    self.err(Code::Type, l.span, "locals cannot be `void`");
                }
                self.type_wf(b.env, t, l.span);
            }
            b.vars.insert(
                l.name.clone(),
                Var {
                    ty: l.ty.as_ref().map(Ty::from_type),
                },
            );
        }
    }

    fn this_ty(&self, env: &ContextEnv) -> Option<Ty> {
        let name = env.class.as_ref()?;
        Some(Ty::Class(
            name.clone(),
            env.params.iter().map(|p| Context::Param(p.clone())).collect(),
        ))
    }

    fn atom(&mut self, b: &mut Body, a: &Atom, span: Span) -> Option<Ty> {
        match a {
            Atom::Const(Lit::Int(_)) => Some(Ty::Int),
            Atom::Const(Lit::Bool(_)) => Some(Ty::Bool),
            Atom::Const(Lit::Null) => Some(Ty::Null),
            Atom::Const(Lit::Unit) => Some(Ty::Void),
            Atom::This => match self.this_ty(b.env) {
                Some(t) => Some(t),
                None => {
                    self.err(Code::Type, span, "`this` is not available here");
                    None
                }
            },
            Atom::Var(v) => match b.vars.get(v) {
                Some(Var { ty: Some(t) }) => Some(t.clone()),
                Some(Var { ty: None }) => {
                    self.err(Code::Type, span, format!("`{v}` is used before it is assigned"));
                    None
                }
                None => {
                    self.err(Code::Type, span, format!("unknown variable `{v}`"));
                    None
                }
            },
        }
    }

    fn value(&mut self, b: &mut Body, v: &Value, span: Span) -> Option<Ty> {
        self.atom(b, &v.as_atom(), span)
    }

    /// Resolves `v`'s class and the arguments at which `decl` is reached,
    /// for field and method lookup.
    fn receiver(&mut self, b: &mut Body, v: &Value, span: Span) -> Option<(String, Vec<Context>)> {
        match self.value(b, v, span)? {
            Ty::Class(n, a) => Some((n, a)),
            other => {
                self.err(Code::Type, span, format!("{other} is not an object type"));
                None
            }
        }
    }

    /// Context written by a field update through `v`.
    fn target_ctx(&mut self, v: &Value, recv: &(String, Vec<Context>), span: Span) -> Option<Context> {
        if *v == Value::This {
            return Some(Context::This);
        }
        match owner_bound(&TypeExpr::class(recv.0.clone(), recv.1.clone())) {
            Ok(k) => Some(k),
            Err(e) => {
                self.err(e.code(), span, e.to_string());
                None
            }
        }
    }

    /// Field type seen through receiver `v`.
    fn field(&mut self, b: &mut Body, v: &Value, f: &str, span: Span) -> Option<(Ty, bool, (String, Vec<Context>))> {
        let recv = self.receiver(b, v, span)?;
        let p = self.p;
        let found = p
            .chain(&recv.0)
            .into_iter()
            .find_map(|c| c.fields.iter().find(|x| x.name == f).map(|x| (c, x)));
        let Some((decl, fd)) = found else {
            self.err(Code::Type, span, format!("`{}` has no field `{f}`", recv.0));
            return None;
        };
        let up = upcast(p, &recv.0, &recv.1, &decl.name)?;
        let this_img = if *v == Value::This { Context::This } else { Context::Existential };
        let s = match Subst::new(&decl.params, &up, this_img) {
            Ok(s) => s,
            Err(e) => {
                self.err(e.code(), span, e.to_string());
                return None;
            }
        };
        Some((Ty::from_type(&s.ty(&fd.ty)), fd.is_final, recv))
    }

    /// Signature of `v.m`: parameter types, return type and the callee
    /// contract in the caller's contexts.
    fn method_sig(&mut self, b: &mut Body, v: &Value, m: &str, span: Span) -> Option<(Vec<Ty>, Ty, Contract)> {
        let recv = self.receiver(b, v, span)?;
        let p = self.p;
        let Some((decl, md)) = p.find_method(&recv.0, m) else {
            self.err(Code::Type, span, format!("`{}` has no method `{m}`", recv.0));
            return None;
        };
        let up = upcast(p, &recv.0, &recv.1, &decl.name)?;
        let (ty_img, ctr_img) = if *v == Value::This {
            (Context::This, Context::This)
        } else {
            (Context::Existential, self.target_ctx(v, &recv, span)?)
        };
        let st = Subst::new(&decl.params, &up, ty_img).ok()?;
        let sc = Subst::new(&decl.params, &up, ctr_img).ok()?;
        let params = md.params.iter().map(|x| Ty::from_type(&st.ty(&x.ty))).collect();
        Some((params, Ty::from_type(&st.ty(&md.ret)), sc.contract(&md.contract)))
    }

    fn bind(&mut self, b: &Body, got: &Ty, want: &Ty, span: Span, what: &str) {
        if !bindable(self.p, b.env, got, want) {
            self.err(bind_code(got, want), span, format!("cannot bind {got} to {what} of type {want}"));
        }
    }

    fn args(&mut self, b: &mut Body, args: &[Atom], params: &[Ty], span: Span, what: &str) {
        if args.len() != params.len() {
            self.err(
                Code::Type,
                span,
                format!("`{what}` expects {} argument(s), found {}", params.len(), args.len()),
            );
            return;
        }
        for (a, want) in args.iter().zip(params) {
            if let Some(got) = self.atom(b, a, span) {
                self.bind(b, &got, want, span, &format!("a parameter of `{what}`"));
            }
        }
    }

    fn expr(&mut self, b: &mut Body, e: &CExpr) -> Option<Ty> {
        let sp = e.span;
        match &e.kind {
            CKind::Atom(a) => self.atom(b, a, sp),
            CKind::New(t, args) => self.new_object(b, t, args, sp),
            CKind::Assign(x, rhs) => {
                let got = self.expr(b, rhs)?;
                match b.vars.get(x).cloned() {
                    None => self.err(Code::Type, sp, format!("unknown variable `{x}`")),
                    Some(Var { ty: Some(want) }) => {
                        let ok = bindable(self.p, b.env, &got, &want)
                            || (want == Ty::Null && matches!(got, Ty::Class(..)));
                        if want == Ty::Null && matches!(got, Ty::Class(..)) {
                            b.vars.insert(x.clone(), Var { ty: Some(got.clone()) });
                        } else if !ok {
                            self.bind(b, &got, &want, sp, &format!("`{x}`"));
                        }
                    }
                    Some(Var { ty: None }) => {
                        if got == Ty::Void {
                            self.err(Code::Type, sp, format!("cannot assign a void value to `{x}`"));
                        } else {
                            b.vars.insert(x.clone(), Var { ty: Some(got) });
                        }
                    }
                }
                Some(Ty::Void)
            }
            CKind::FieldGet(v, f) => self.field(b, v, f, sp).map(|(t, _, _)| t),
            CKind::FieldSet(v, f, a) => {
                let (want, is_final, recv) = self.field(b, v, f, sp)?;
                if let Some(got) = self.atom(b, a, sp) {
                    self.bind(b, &got, &want, sp, &format!("field `{f}`"));
                }
                if is_final && !(b.in_ctor && *v == Value::This) {
                    self.err(Code::Type, sp, format!("final field `{f}` can only be set in the constructor"));
                }
                let target = self.target_ctx(v, &recv, sp)?;
                if !b.env.inside(&target, &b.frame.invalidity) {
                    self.err(
                        Code::Effect,
                        sp,
                        format!(
                            "write to `{f}` in context `{target}` is outside the invalidity set `{}`",
                            b.frame.invalidity
                        ),
                    );
                }
                Some(Ty::Void)
            }
            CKind::Call(v, m, args) => {
                let (params, ret, callee) = self.method_sig(b, v, m, sp)?;
                self.args(b, args, &params, sp, m);
                self.check_call_contract(b, v, m, &callee, sp);
                Some(ret)
            }
            CKind::Prim(op, args) => {
                let tys: Vec<Option<Ty>> = args.iter().map(|a| self.atom(b, a, sp)).collect();
                let tys: Option<Vec<Ty>> = tys.into_iter().collect();
                self.prim(*op, &tys?, sp)
            }
            CKind::Seq(x, y) => {
                self.expr(b, x);
                self.expr(b, y)
            }
            CKind::Cond(a, t, f) => {
                if let Some(c) = self.atom(b, a, sp) {
                    if c != Ty::Bool {
                        self.err(Code::Type, sp, format!("condition has type {c}, expected bool"));
                    }
                }
                let tt = self.expr(b, t);
                let tf = self.expr(b, f);
                Some(match (tt, tf) {
                    (Some(x), Some(y)) if x == y => x,
                    (Some(Ty::Null), Some(c @ Ty::Class(..))) | (Some(c @ Ty::Class(..)), Some(Ty::Null)) => c,
                    _ => Ty::Void,
                })
            }
            CKind::Atomic(d, body) => {
                let frame = match d {
                    Some(d) => {
                        if !b.env.contract_wf(d) {
                            self.err(Code::CtxWf, sp, format!("contract {d} is not well-formed here"));
                            return None;
                        }
                        d.clone()
                    }
                    None => self.deduce(b, body)?,
                };
                if !b.env.subcontract(&frame, &b.frame) {
                    self.err(
                        Code::Subcontract,
                        sp,
                        format!("transaction contract {frame} is not a subcontract of {}", b.frame),
                    );
                    return None;
                }
                let saved = (std::mem::replace(&mut b.frame, frame), b.in_atomic);
                b.in_atomic = true;
                let t = self.expr(b, body);
                b.frame = saved.0;
                b.in_atomic = saved.1;
                t
            }
            CKind::Fork(body) => {
                if b.in_atomic || b.frame != Contract::top_top() {
                    self.err(Code::ForkInAtomic, sp, "`fork` is only allowed at top level, outside any transaction");
                    return None;
                }
                self.expr(b, body);
                Some(Ty::Void)
            }
            CKind::Valid(v) => {
                let t = self.value(b, v, sp)?;
                if !matches!(t, Ty::Class(..)) {
                    self.err(Code::Type, sp, format!("`valid` needs an object, found {t}"));
                }
                Some(Ty::Bool)
            }
            CKind::Require(a) => {
                let t = self.atom(b, a, sp)?;
                if t != Ty::Bool {
                    self.err(Code::Type, sp, format!("`require` needs bool, found {t}"));
                }
                Some(Ty::Void)
            }
            CKind::Emit(_, args) => {
                for a in args {
                    if let Some(t) = self.atom(b, a, sp) {
                        if t == Ty::Void {
                            self.err(Code::Type, sp, "cannot emit a void value");
                        }
                    }
                }
                Some(Ty::Void)
            }
        }
    }

    /// Owner-call rule, then subcontracting against the frame.
    fn check_call_contract(&mut self, b: &Body, v: &Value, m: &str, callee: &Contract, sp: Span) {
        if b.member && callee.invalidity != Context::Bot && *v != Value::This {
            let owner = match b.vars.get(match v {
                Value::Var(x) => x.as_str(),
                Value::This => "",
            }) {
                Some(Var { ty: Some(t) }) => t.owner().cloned(),
                _ => None,
            };
            let ok = owner.is_some_and(|o| b.env.inside(&o, &Context::This));
            if !ok {
                self.err(
                    Code::OwnerCall,
                    sp,
                    format!("call to `{m}` may invalidate objects not owned by `this`"),
                );
                return;
            }
        }
        if !b.env.subcontract(callee, &b.frame) {
            self.err(
                Code::Subcontract,
                sp,
                format!("callee contract {callee} of `{m}` is not a subcontract of {}", b.frame),
            );
        }
    }

    /// Contract of a contract-less transaction: that of its single call or
    /// write.
    fn deduce(&mut self, b: &mut Body, body: &CExpr) -> Option<Contract> {
        let sp = body.span;
        match &body.kind {
            CKind::Call(v, m, _) => self.method_sig(b, v, m, sp).map(|(_, _, c)| c),
            CKind::FieldSet(v, f, _) => {
                let (_, _, recv) = self.field(b, v, f, sp)?;
                let target = self.target_ctx(v, &recv, sp)?;
                let d = Contract::new(Context::Bot, target.clone());
                if !b.env.subcontract(&d, &b.frame) {
                    self.err(
                        Code::Effect,
                        sp,
                        format!("write to `{f}` in context `{target}` is outside the invalidity set `{}`", b.frame.invalidity),
                    );
                    return None;
                }
                Some(d)
            }
            _ => {
                self.err(
                    Code::NeedContract,
                    sp,
                    "this transaction needs an explicit contract `atomic <V,I> ...`",
                );
                None
            }
        }
    }

    fn new_object(&mut self, b: &mut Body, t: &TypeExpr, args: &[Atom], sp: Span) -> Option<Ty> {
        let TypeExpr::Class { name, args: ctx } = t else {
            self.err(Code::Type, sp, format!("cannot instantiate {t}"));
            return None;
        };
        let p = self.p;
        let Some(c) = p.class(name) else {
            self.err(Code::Type, sp, format!("unknown class `{name}`"));
            return None;
        };
        if c.params.len() != ctx.len() {
            self.err(
                Code::CtxArity,
                sp,
                format!("`{name}` expects {} context argument(s), found {}", c.params.len(), ctx.len()),
            );
            return None;
        }
        if ctx[0] == Context::Bot {
            self.err(Code::CtxWf, sp, "an object cannot be owned by `bot`");
            return None;
        }
        for k in ctx {
            if !b.env.ctx_wf(k) {
                self.err(Code::CtxWf, sp, format!("context `{k}` cannot be used to create an object"));
                return None;
            }
        }
        let s = Subst::new(&c.params, ctx, Context::Existential).ok()?;
        for k in &c.constraints {
            if k.lhs == Context::This || k.rhs == Context::This {
                continue;
            }
            let (l, r) = (s.ctx(&k.lhs), s.ctx(&k.rhs));
            let strict_ok = k.rel != Relation::StrictInside || l != r || l == Context::Bot;
            if !b.env.inside(&l, &r) || !strict_ok {
                self.err(
                    Code::CtxWf,
                    sp,
                    format!("`{name}` requires {} {} {} which does not hold for {l} and {r}", k.lhs, k.rel.as_str(), k.rhs),
                );
            }
        }
        let params: Vec<Ty> = c.ctor.params.iter().map(|x| Ty::from_type(&s.ty(&x.ty))).collect();
        self.args(b, args, &params, sp, name);
        Some(Ty::Class(name.clone(), ctx.clone()))
    }

    fn prim(&mut self, op: PrimOp, tys: &[Ty], sp: Span) -> Option<Ty> {
        use BinOp::*;
        let bad = |me: &mut Self| {
            let shown: Vec<String> = tys.iter().map(|t| t.to_string()).collect();
            me.err(Code::Type, sp, format!("operator cannot be applied to {}", shown.join(", ")));
            None
        };
        match op {
            PrimOp::Bin(o) => {
                let (a, c) = (&tys[0], &tys[1]);
                match o {
                    Add | Sub | Mul | Div | Mod if *a == Ty::Int && *c == Ty::Int => Some(Ty::Int),
                    Lt | Le | Gt | Ge if *a == Ty::Int && *c == Ty::Int => Some(Ty::Bool),
                    And | Or if *a == Ty::Bool && *c == Ty::Bool => Some(Ty::Bool),
                    Eq | Ne if comparable(a, c) => Some(Ty::Bool),
                    _ => bad(self),
                }
            }
            PrimOp::Un(UnOp::Not) if tys[0] == Ty::Bool => Some(Ty::Bool),
            PrimOp::Un(UnOp::Neg) if tys[0] == Ty::Int => Some(Ty::Int),
            PrimOp::Un(_) => bad(self),
        }
    }
}

fn comparable(a: &Ty, b: &Ty) -> bool {
    matches!(
        (a, b),
        (Ty::Int, Ty::Int)
            | (Ty::Bool, Ty::Bool)
            | (Ty::Class(..) | Ty::Null, Ty::Class(..) | Ty::Null)
    )
}

fn depth_to_root(p: &CoreProgram, name: &str) -> usize {
    let mut n = 0;
    let mut cur = p.class(name);
    let mut seen = HashSet::new();
    while let Some(c) = cur {
        if !seen.insert(c.name.clone()) {
            return usize::MAX;
        }
        n += 1;
        cur = c.superclass.as_ref().and_then(|t| t.as_class()).and_then(|(n, _)| p.class(n));
    }
    n
}

fn tail_span(e: &CExpr) -> Span {
    match &e.kind {
        CKind::Seq(_, b) => tail_span(b),
        _ => e.span,
    }
}

/// Contract inferred for a contract-less transaction body, without
/// reporting errors.
pub fn deduce_contract(p: &CoreProgram, class: Option<&CClass>, vars: &[(String, TypeExpr)], body: &CExpr) -> Result<Contract, Code> {
    let env = class.map(ContextEnv::for_class).unwrap_or_default();
    let mut c = Checker {
        p,
        diags: Vec::new(),
    };
    let mut b = Body {
        env: &env,
        vars: vars
            .iter()
            .map(|(n, t)| (n.clone(), Var { ty: Some(Ty::from_type(t)) }))
            .collect(),
        frame: Contract::top_top(),
        in_atomic: false,
        in_ctor: false,
        member: class.is_some(),
    };
    match c.deduce(&mut b, body) {
        Some(d) => Ok(d),
        None => Err(c.diags.first().map(|d| d.code).unwrap_or(Code::NeedContract)),
    }
}

/// Purity and ownership confinement of a class invariant, plus its type.
pub fn check_invariant_clause(p: &CoreProgram, c: &CClass) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let Some(inv) = &c.invariant else {
        return out;
    };
    let this = Ty::Class(c.name.clone(), c.params.iter().map(|x| Context::Param(x.clone())).collect());
    match inv_type(p, c, &this, inv, &mut out) {
        Some(Ty::Bool) | None => {}
        Some(t) => out.push(Diagnostic::new(Code::Type, inv.span, format!("invariant has type {t}, expected bool"))),
    }
    out
}

/// Result of typing an invariant sub-expression: its type and whether the
/// value is `this` or an owned reference reached through owned fields.
fn inv_type(p: &CoreProgram, c: &CClass, this: &Ty, e: &Expr, out: &mut Vec<Diagnostic>) -> Option<Ty> {
    inv_expr(p, c, this, e, out).map(|(t, _)| t)
}

fn lookup_field<'a>(p: &'a CoreProgram, class: &str, f: &str) -> Option<(&'a CClass, &'a CField)> {
    p.chain(class)
        .into_iter()
        .find_map(|k| k.fields.iter().find(|x| x.name == f).map(|x| (k, x)))
}

fn inv_expr(p: &CoreProgram, c: &CClass, this: &Ty, e: &Expr, out: &mut Vec<Diagnostic>) -> Option<(Ty, bool)> {
    let sp = e.span;
    match &e.kind {
        ExprKind::Lit(Lit::Int(_)) => Some((Ty::Int, false)),
        ExprKind::Lit(Lit::Bool(_)) => Some((Ty::Bool, false)),
        ExprKind::Lit(Lit::Null) => Some((Ty::Null, false)),
        ExprKind::Lit(Lit::Unit) => Some((Ty::Void, false)),
        ExprKind::This => Some((this.clone(), true)),
        ExprKind::Name(n) => {
            let Some((_, fd)) = lookup_field(p, &c.name, n) else {
                out.push(Diagnostic::new(Code::Type, sp, format!("unknown name `{n}` in invariant")));
                return None;
            };
            let owned = fd.ty.as_class().is_some_and(|(_, a)| a.first() == Some(&Context::This));
            Some((Ty::from_type(&fd.ty), owned))
        }
        ExprKind::Field(r, f) => {
            let (rt, owned) = inv_expr(p, c, this, r, out)?;
            let Ty::Class(rn, _) = &rt else {
                out.push(Diagnostic::new(Code::Type, sp, format!("{rt} has no fields")));
                return None;
            };
            if !owned {
                out.push(Diagnostic::new(
                    Code::InvEscape,
                    sp,
                    format!("invariant reads `{f}` through a reference not owned by `this`"),
                ));
                return None;
            }
            let Some((_, fd)) = lookup_field(p, rn, f) else {
                out.push(Diagnostic::new(Code::Type, sp, format!("`{rn}` has no field `{f}`")));
                return None;
            };
            let owned = fd.ty.as_class().is_some_and(|(_, a)| a.first() == Some(&Context::This));
            Some((Ty::from_type(&fd.ty), owned))
        }
        ExprKind::Binary(op, a, b2) => {
            let ta = inv_type(p, c, this, a, out);
            let tb = inv_type(p, c, this, b2, out);
            let (ta, tb) = (ta?, tb?);
            use BinOp::*;
            let t = match op {
                Add | Sub | Mul | Div | Mod if ta == Ty::Int && tb == Ty::Int => Ty::Int,
                Lt | Le | Gt | Ge if ta == Ty::Int && tb == Ty::Int => Ty::Bool,
                And | Or if ta == Ty::Bool && tb == Ty::Bool => Ty::Bool,
                Eq | Ne if comparable(&ta, &tb) => Ty::Bool,
                _ => {
                    out.push(Diagnostic::new(Code::Type, sp, format!("`{}` cannot be applied to {ta} and {tb}", op.as_str())));
                    return None;
                }
            };
            Some((t, false))
        }
        ExprKind::Unary(op, a) => {
            let t = inv_type(p, c, this, a, out)?;
            match (op, &t) {
                (UnOp::Not, Ty::Bool) | (UnOp::Neg, Ty::Int) => Some((t, false)),
                _ => {
                    out.push(Diagnostic::new(Code::Type, sp, format!("`{}` cannot be applied to {t}", op.as_str())));
                    None
                }
            }
        }
        _ => {
            out.push(Diagnostic::new(
                Code::InvImpure,
                sp,
                "invariants may only read fields and use operators",
            ));
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(src: &str) -> CoreProgram {
        desugar(&parse_program(src).unwrap().program)
    }

    fn codes(src: &str) -> Vec<Code> {
        check_program(&core(src)).into_iter().filter(|d| d.is_error()).map(|d| d.code).collect()
    }

    const ACCOUNT: &str = "
        class Account[o] {
            int amount = 0;
            inv amount >= 0;
            Account(int amt) { amount = amt; }
            int balance() <this,bot> { return amount; }
            void deposit(int x) <this,this> { amount += x; }
            void withdraw(int x) <this,this> { amount -= x; }
        }";

    #[test]
    fn account_checks() {
        assert!(codes(ACCOUNT).is_empty(), "{:?}", check_program(&core(ACCOUNT)));
    }

    #[test]
    fn write_under_bot_invalidity_is_an_effect_error() {
        let src = "class A[o] { int f; void m(int x) <this,bot> { f = x; } }";
        assert_eq!(codes(src), vec![Code::Effect]);
        let src = "class A[o] { int f; void m() <bot,bot> { f = 1; } }";
        assert_eq!(codes(src), vec![Code::Effect]);
    }

    #[test]
    fn customer_owner_call() {
        let src = format!(
            "{ACCOUNT}
            class Customer[o] {{
                Account<this> a = new Account<this>(0);
                inv a != null && a.amount >= 10;
                void safeWithdraw(int amt) <this,this> {{ verifyLogin(); atomic a.withdraw(amt); }}
                void verifyLogin() <bot,this> {{ }}
            }}"
        );
        assert!(codes(&src).is_empty(), "{:?}", check_program(&core(&src)));
    }

    #[test]
    fn fork_inside_method_is_rejected() {
        assert_eq!(
            codes("class C[o]{ int f; void m()<this,this>{ fork this.m(); } }"),
            vec![Code::ForkInAtomic]
        );
    }

    #[test]
    fn block_atomic_needs_contract() {
        let src = "class C[o]{ int f; void m()<this,this>{ atomic { f = 1; f = 2; } } }";
        assert_eq!(codes(src), vec![Code::NeedContract]);
    }

    #[test]
    fn deduced_write_contract() {
        let p = core("class C[o]{ int f; void m()<this,this>{ atomic this.f = 1; } }");
        let c = p.class("C").unwrap();
        let CKind::Atomic(None, body) = &c.method("m").unwrap().body.body.kind else {
            panic!()
        };
        assert_eq!(
            deduce_contract(&p, Some(c), &[], body).unwrap(),
            Contract::new(Context::Bot, Context::This)
        );
    }

    #[test]
    fn invariant_escape_and_purity() {
        let src = format!("{ACCOUNT} class B[o] {{ Account<top> other; inv other.amount > 0; }}");
        assert_eq!(codes(&src), vec![Code::InvEscape]);
        let src = format!("{ACCOUNT} class B[o] {{ Account<this> a; inv a.balance() > 0; }}");
        assert_eq!(codes(&src), vec![Code::InvImpure]);
    }

    #[test]
    fn leaked_owned_reference_cannot_be_bound() {
        let src = format!(
            "{ACCOUNT}
            class Bank[o] {{
                Account<this> acc = new Account<this>(5);
                Account<this> getAccount() <this,bot> {{ return acc; }}
            }}
            class User[o] {{
                Bank<this> b = new Bank<this>();
                void go() <this,this> {{ Account<this> x = b.getAccount(); }}
            }}"
        );
        assert_eq!(codes(&src), vec![Code::BindExist]);
    }

    #[test]
    fn subtyping_and_binding() {
        let p = core("class C[o] { } class D[o] extends C<o> { }");
        let env = ContextEnv::for_class(p.class("D").unwrap());
        let d = Ty::Class("D".into(), vec![Context::This]);
        let c = Ty::Class("C".into(), vec![Context::This]);
        assert!(subtype(&p, &d, &c));
        assert!(!subtype(&p, &c, &Ty::Class("C".into(), vec![Context::Top])));
        assert!(bindable(&p, &env, &c, &Ty::Class("C".into(), vec![Context::Any])));
        assert!(!bindable(&p, &env, &Ty::Class("C".into(), vec![Context::Existential]), &c));
        assert!(bindable(&p, &env, &c, &c));
    }

    #[test]
    fn abstraction() {
        let env = ContextEnv {
            params: vec!["o".into()],
            constraints: vec![],
            class: Some("C".into()),
        };
        assert!(abstracts(&env, &Context::This, &Context::Any));
        assert!(abstracts(&env, &Context::This, &Context::This));
        assert!(!abstracts(&env, &Context::Existential, &Context::Existential));
    }

    #[test]
    fn empty_program_is_fine() {
        assert!(codes("").is_empty());
    }

    #[test]
    fn subcontract_violation_on_call() {
        let src = "class A[o] { int f;
            void w() <this,this> { f = 1; }
            void r() <this,bot> { w(); } }";
        assert_eq!(codes(src), vec![Code::Subcontract]);
    }
}
