//! Ownership contexts: the static inside-ordering used by the checker and the
//! runtime ownership tree over heap locations.

use std::collections::{BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::diag::Code;
use crate::syntax::{CClass, Constraint, Context, Contract, TypeExpr};

/// Static context environment of one class body (or of `main`).
#[derive(Debug, Clone, Default)]
pub struct ContextEnv {
    pub params: Vec<String>,
    pub constraints: Vec<Constraint>,
    /// The enclosing class; `None` in `main`, where `this` is not in scope.
    pub class: Option<String>,
}

impl ContextEnv {
    pub fn for_class(c: &CClass) -> Self {
        ContextEnv {
            params: c.params.clone(),
            constraints: c.constraints.clone(),
            class: Some(c.name.clone()),
        }
    }

    pub fn top_level() -> Self {
        ContextEnv::default()
    }

    pub fn has_this(&self) -> bool {
        self.class.is_some()
    }

    pub fn ctx_wf(&self, k: &Context) -> bool {
        match k {
            Context::Top | Context::Bot => true,
            Context::This => self.has_this(),
            Context::Param(p) => self.params.iter().any(|x| x == p),
            Context::Any | Context::Existential => false,
        }
    }

    /// Direct upward edges of the inside relation.
    fn successors(&self, k: &Context) -> Vec<Context> {
        let mut out = Vec::new();
        if *k == Context::This && self.has_this() {
            if let Some(owner) = self.params.first() {
                out.push(Context::Param(owner.clone()));
            }
        }
        for c in &self.constraints {
            if c.lhs == *k {
                out.push(c.rhs.clone());
            }
        }
        out
    }

    /// `k` is inside `k2`: the least preorder with `bot` least, `top`
    /// greatest, `this` inside the owner parameter and every declared
    /// constraint. `*` and `?` are inside only `top`.
    pub fn inside(&self, k: &Context, k2: &Context) -> bool {
        if *k2 == Context::Top || *k == Context::Bot {
            return true;
        }
        if matches!(k, Context::Any | Context::Existential)
            || matches!(k2, Context::Any | Context::Existential)
        {
            return false;
        }
        if k == k2 {
            return true;
        }
        let mut seen: HashSet<Context> = HashSet::new();
        let mut queue = VecDeque::from([k.clone()]);
        while let Some(cur) = queue.pop_front() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            if cur == *k2 {
                return true;
            }
            queue.extend(self.successors(&cur));
        }
        false
    }

    pub fn contract_wf(&self, d: &Contract) -> bool {
        self.ctx_wf(&d.validity) && self.ctx_wf(&d.invalidity)
    }

    pub fn subcontract(&self, child: &Contract, parent: &Contract) -> bool {
        self.inside(&child.validity, &parent.validity)
            && self.inside(&child.invalidity, &parent.invalidity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OwnershipError {
    #[error("expected {expected} context argument(s), found {found}")]
    Arity { expected: usize, found: usize },
    #[error("`{0}` is not a class type")]
    NotClass(String),
    #[error("location l{0} is not allocated")]
    Dangling(Loc),
}

impl OwnershipError {
    pub fn code(&self) -> Code {
        match self {
            OwnershipError::Arity { .. } => Code::CtxArity,
            OwnershipError::NotClass(_) => Code::NotClass,
            OwnershipError::Dangling(_) => Code::Dangling,
        }
    }
}

/// Positional replacement of a class's formal parameters plus an image for
/// `this`.
#[derive(Debug, Clone)]
pub struct Subst<'a> {
    formals: &'a [String],
    actuals: &'a [Context],
    this_image: Context,
}

impl<'a> Subst<'a> {
    pub fn new(
        formals: &'a [String],
        actuals: &'a [Context],
        this_image: Context,
    ) -> Result<Self, OwnershipError> {
        if formals.len() != actuals.len() {
            return Err(OwnershipError::Arity {
                expected: formals.len(),
                found: actuals.len(),
            });
        }
        Ok(Subst {
            formals,
            actuals,
            this_image,
        })
    }

    pub fn ctx(&self, k: &Context) -> Context {
        match k {
            Context::This => self.this_image.clone(),
            Context::Param(p) => match self.formals.iter().position(|f| f == p) {
                Some(i) => self.actuals[i].clone(),
                None => k.clone(),
            },
            other => other.clone(),
        }
    }

    pub fn ty(&self, t: &TypeExpr) -> TypeExpr {
        match t {
            TypeExpr::Class { name, args } => TypeExpr::Class {
                name: name.clone(),
                args: args.iter().map(|a| self.ctx(a)).collect(),
            },
            other => other.clone(),
        }
    }

    pub fn contract(&self, d: &Contract) -> Contract {
        d.map(|k| self.ctx(k))
    }
}

/// The owner (first context argument) of a class type.
pub fn owner_bound(t: &TypeExpr) -> Result<Context, OwnershipError> {
    match t {
        TypeExpr::Class { args, .. } if !args.is_empty() => Ok(args[0].clone()),
        other => Err(OwnershipError::NotClass(other.to_string())),
    }
}

/// A heap location.
pub type Loc = usize;

/// A context resolved at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RtCtx {
    Loc(Loc),
    Top,
    Bot,
}

/// Read access to the owner of each allocated location. Owners are fixed at
/// allocation.
pub trait OwnerMap {
    /// Number of locations; allocated locations are exactly `0..len()`.
    fn len(&self) -> usize;
    fn owner(&self, l: Loc) -> RtCtx;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A standalone ownership tree, used by the scheduler and by tests.
#[derive(Debug, Clone, Default)]
pub struct OwnershipTree {
    owners: Vec<RtCtx>,
}

impl OwnershipTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a location owned by `owner`, which must be `Top` or an
    /// existing location.
    pub fn add(&mut self, owner: RtCtx) -> Loc {
        debug_assert!(match owner {
            RtCtx::Loc(o) => o < self.owners.len(),
            RtCtx::Top => true,
            RtCtx::Bot => false,
        });
        self.owners.push(owner);
        self.owners.len() - 1
    }

    pub fn from_map(m: &impl OwnerMap) -> Self {
        OwnershipTree {
            owners: (0..m.len()).map(|l| m.owner(l)).collect(),
        }
    }
}

impl OwnerMap for OwnershipTree {
    fn len(&self) -> usize {
        self.owners.len()
    }
    fn owner(&self, l: Loc) -> RtCtx {
        self.owners[l]
    }
}

/// Follows the owner chain from `l` (inclusive) looking for `k`.
pub fn runtime_inside(t: &impl OwnerMap, l: Loc, k: RtCtx) -> Result<bool, OwnershipError> {
    if l >= t.len() {
        return Err(OwnershipError::Dangling(l));
    }
    match k {
        RtCtx::Top => return Ok(true),
        RtCtx::Bot => return Ok(false),
        RtCtx::Loc(k) if k >= t.len() => return Err(OwnershipError::Dangling(k)),
        RtCtx::Loc(_) => {}
    }
    let mut cur = l;
    for _ in 0..=t.len() {
        if RtCtx::Loc(cur) == k {
            return Ok(true);
        }
        match t.owner(cur) {
            RtCtx::Loc(o) => cur = o,
            RtCtx::Top | RtCtx::Bot => return Ok(false),
        }
    }
    Ok(false)
}

/// Strict ancestors of `l`, nearest first.
pub fn ancestors(t: &impl OwnerMap, l: Loc) -> Vec<Loc> {
    let mut out = Vec::new();
    let mut cur = l;
    while let RtCtx::Loc(o) = t.owner(cur) {
        if out.len() > t.len() {
            break;
        }
        out.push(o);
        cur = o;
    }
    out
}

pub fn runtime_subtree(t: &impl OwnerMap, k: RtCtx) -> BTreeSet<Loc> {
    match k {
        RtCtx::Bot => BTreeSet::new(),
        RtCtx::Top => (0..t.len()).collect(),
        RtCtx::Loc(_) => (0..t.len())
            .filter(|&l| runtime_inside(t, l, k).unwrap_or(false))
            .collect(),
    }
}

/// Whether two subtrees share a location, decided from the owner chains
/// alone.
pub fn subtrees_overlap(t: &impl OwnerMap, a: RtCtx, b: RtCtx) -> bool {
    match (a, b) {
        (RtCtx::Bot, _) | (_, RtCtx::Bot) => false,
        (RtCtx::Top, _) | (_, RtCtx::Top) => true,
        (RtCtx::Loc(x), RtCtx::Loc(y)) => {
            runtime_inside(t, x, b).unwrap_or(false) || runtime_inside(t, y, a).unwrap_or(false)
        }
    }
}
