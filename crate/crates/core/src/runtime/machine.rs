//! Small-step transactional interpreter over core programs.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::Zero;
use serde::Serialize;

use super::heap::{canonical_state, sha256_hex, FailCode, Heap, ObjectRec, Val};
use crate::diag::Code;
use crate::ownership::{ancestors, runtime_inside, runtime_subtree, Loc, OwnershipError, RtCtx};
use crate::syntax::{
    Atom, BinOp, CBody, CClass, CExpr, CKind, Context, CoreProgram, Expr, ExprKind, Lit,
    PrimOp, TypeExpr, UnOp, Value,
};

/// Which checks the counters record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Checks directed by validity contracts.
    #[default]
    Contract,
    /// Additionally revalidates the whole receiver subtree at every call
    /// entry and exit, the whole validity subtree at transaction begin, and
    /// `V ∪ I` at commit. Execution is identical; only counters differ.
    Naive,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub fuel: u64,
    pub seed: u64,
    /// Recompute every invariant in Σ after each top-level commit and fail
    /// loudly on a mismatch.
    pub debug_checks: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Contract,
            fuel: 1_000_000,
            seed: 0,
            debug_checks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct RuntimeError {
    pub code: Code,
    pub message: String,
}

impl RuntimeError {
    fn new(code: Code, message: impl Into<String>) -> Self {
        RuntimeError {
            code,
            message: message.into(),
        }
    }

    fn stuck(message: impl Into<String>) -> Self {
        RuntimeError::new(Code::Stuck, message)
    }
}

impl From<OwnershipError> for RuntimeError {
    fn from(e: OwnershipError) -> Self {
        RuntimeError::new(e.code(), e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub pre_checks: u64,
    pub post_checks: u64,
    pub invariant_evals: u64,
}

/// A transaction abort, or a thread stopped by a failure outside any
/// transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureRecord {
    pub thread: usize,
    pub code: FailCode,
    pub terminated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalReport {
    pub lemma3: bool,
    pub objects: usize,
    pub valid: usize,
    pub pre_checks: u64,
    pub post_checks: u64,
    pub invariant_evals: u64,
    pub events: Vec<String>,
    pub state_hash: String,
    #[serde(skip)]
    pub failures: Vec<FailureRecord>,
    #[serde(skip)]
    pub invalid: Vec<Loc>,
}

impl FinalReport {
    pub fn validity_failure(&self) -> bool {
        self.failures.iter().any(|f| f.code.is_validity()) || !self.lemma3
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization is infallible")
    }
}

#[derive(Debug)]
struct Layout<'p> {
    names: Vec<&'p str>,
    index: HashMap<&'p str, usize>,
    defaults: Vec<Val>,
}

fn default_of(t: Option<&TypeExpr>) -> Val {
    match t {
        Some(TypeExpr::Int(_)) => Val::Int(BigInt::zero()),
        Some(TypeExpr::Bool) => Val::Bool(false),
        Some(TypeExpr::Class { .. }) => Val::Null,
        Some(TypeExpr::Void) | None => Val::Unit,
    }
}

#[derive(Debug, Clone)]
enum Ctrl<'p> {
    Eval(&'p CExpr),
    Ret(Val),
    Raise(FailCode),
}

#[derive(Debug, Clone)]
enum Kont<'p> {
    Seq(&'p CExpr),
    Assign(&'p str),
    CallRet(Loc),
    AtomicEnd,
    CtorEnd(Loc),
}

#[derive(Debug, Clone)]
struct Act<'p> {
    this: Option<Loc>,
    ctx: Vec<(&'p str, RtCtx)>,
    vars: HashMap<&'p str, Val>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FrameKind {
    Root,
    Atomic,
    Ctor,
    Call,
}

#[derive(Debug, Clone)]
enum LogEntry {
    Write(Loc, usize, Val),
    SigmaAdd(Loc),
    SigmaRemove(Loc),
    Alloc(Loc),
    Event,
}

#[derive(Debug, Clone)]
struct Frame<'p> {
    kind: FrameKind,
    v: RtCtx,
    i: RtCtx,
    log: Vec<LogEntry>,
    created: Vec<Loc>,
    holds_lock: bool,
    snapshot: Option<HashMap<&'p str, Val>>,
}

impl Frame<'_> {
    fn new(kind: FrameKind, v: RtCtx, i: RtCtx) -> Self {
        Frame {
            kind,
            v,
            i,
            log: Vec::new(),
            created: Vec::new(),
            holds_lock: false,
            snapshot: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Thread<'p> {
    ctrl: Ctrl<'p>,
    konts: Vec<Kont<'p>>,
    acts: Vec<Act<'p>>,
    frames: Vec<Frame<'p>>,
    done: bool,
}

impl<'p> Thread<'p> {
    fn new(ctrl: Ctrl<'p>, act: Act<'p>) -> Self {
        Thread {
            ctrl,
            konts: Vec::new(),
            acts: vec![act],
            frames: vec![Frame::new(FrameKind::Root, RtCtx::Top, RtCtx::Top)],
            done: false,
        }
    }

    fn act(&self) -> &Act<'p> {
        self.acts.last().expect("thread has an activation")
    }

    fn txn_index(&self) -> usize {
        self.frames
            .iter()
            .rposition(|f| f.kind != FrameKind::Call)
            .expect("root frame is never popped")
    }

    fn in_transaction(&self) -> bool {
        self.txn_index() > 0
    }
}

enum Stop {
    Raise(FailCode),
    Err(RuntimeError),
}

impl From<RuntimeError> for Stop {
    fn from(e: RuntimeError) -> Self {
        Stop::Err(e)
    }
}

impl From<OwnershipError> for Stop {
    fn from(e: OwnershipError) -> Self {
        Stop::Err(e.into())
    }
}

type Ev<T> = Result<T, Stop>;

fn stuck<T>(msg: impl Into<String>) -> Ev<T> {
    Err(Stop::Err(RuntimeError::stuck(msg)))
}

/// The interpreter state: lock, heap, Σ, per-thread frame stacks and
/// threads, plus counters and the event trace.
#[derive(Debug, Clone)]
pub struct Machine<'p> {
    prog: &'p CoreProgram,
    layouts: Arc<HashMap<&'p str, Layout<'p>>>,
    pub heap: Heap<'p>,
    pub sigma: BTreeSet<Loc>,
    lock: Option<usize>,
    threads: Vec<Thread<'p>>,
    cursor: usize,
    config: RunConfig,
    pub counters: Counters,
    pub events: Vec<String>,
    pub failures: Vec<FailureRecord>,
    steps: u64,
    trace: Option<Vec<(usize, Option<usize>)>>,
    top_abort: Option<FailCode>,
}

impl<'p> Machine<'p> {
    /// A machine with an empty heap and no threads.
    pub fn new(prog: &'p CoreProgram, config: RunConfig) -> Self {
        let mut layouts = HashMap::new();
        for c in &prog.classes {
            let mut l = Layout {
                names: Vec::new(),
                index: HashMap::new(),
                defaults: Vec::new(),
            };
            for (_, f) in prog.all_fields(&c.name) {
                l.index.entry(f.name.as_str()).or_insert(l.names.len());
                l.names.push(f.name.as_str());
                l.defaults.push(default_of(Some(&f.ty)));
            }
            layouts.insert(c.name.as_str(), l);
        }
        Machine {
            prog,
            layouts: Arc::new(layouts),
            heap: Heap::default(),
            sigma: BTreeSet::new(),
            lock: None,
            threads: Vec::new(),
            cursor: config.seed as usize,
            config,
            counters: Counters::default(),
            events: Vec::new(),
            failures: Vec::new(),
            steps: 0,
            trace: None,
            top_abort: None,
        }
    }

    /// A machine with one thread reducing `main` under the root frame.
    pub fn load(prog: &'p CoreProgram, config: RunConfig) -> Self {
        let mut m = Machine::new(prog, config);
        if let Some(main) = &prog.main {
            let act = Act {
                this: None,
                ctx: Vec::new(),
                vars: Self::locals(main, &[]),
            };
            m.threads.push(Thread::new(Ctrl::Eval(&main.body), act));
        }
        m
    }

    pub fn program(&self) -> &'p CoreProgram {
        self.prog
    }

    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    /// Records `(thread stepped, lock holder before the step)` for every step.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[(usize, Option<usize>)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn locals(body: &'p CBody, params: &[(&'p str, Val)]) -> HashMap<&'p str, Val> {
        let mut vars: HashMap<&'p str, Val> = params.iter().cloned().collect();
        for l in &body.locals {
            vars.entry(l.name.as_str())
                .or_insert_with(|| default_of(l.ty.as_ref()));
        }
        vars
    }

    pub fn field_names(&self, class: &str) -> Vec<String> {
        self.layouts
            .get(class)
            .map(|l| l.names.iter().map(|s| s.to_string()).collect())
            .unwrap_or_default()
    }

    pub fn field(&self, l: Loc, f: &str) -> Option<&Val> {
        let o = self.heap.get(l)?;
        let k = *self.layouts.get(o.class)?.index.get(f)?;
        o.fields.get(k)
    }

    pub fn state_text(&self) -> String {
        let names = |c: &str| self.field_names(c);
        canonical_state(&self.heap, &names, &self.sigma)
    }

    pub fn state_hash(&self) -> String {
        sha256_hex(&self.state_text())
    }

    // ---- invariants -------------------------------------------------------

    /// Evaluates the invariant of `l` (every class on its chain) without
    /// touching counters. Null dereference and division by zero yield false.
    pub fn inv_holds(&self, l: Loc) -> bool {
        let Some(o) = self.heap.get(l) else {
            return false;
        };
        self.prog.chain(o.class).iter().all(|c| match &c.invariant {
            None => true,
            Some(e) => matches!(self.inv_value(l, e), Some(Val::Bool(true))),
        })
    }

    /// [`Machine::inv_holds`] counted as one invariant evaluation.
    pub fn eval_invariant(&mut self, l: Loc) -> bool {
        self.counters.invariant_evals += 1;
        self.inv_holds(l)
    }

    fn inv_value(&self, l: Loc, e: &Expr) -> Option<Val> {
        Some(match &e.kind {
            ExprKind::Lit(Lit::Int(i)) => Val::Int(i.value.clone()),
            ExprKind::Lit(Lit::Bool(b)) => Val::Bool(*b),
            ExprKind::Lit(Lit::Null) => Val::Null,
            ExprKind::Lit(Lit::Unit) => Val::Unit,
            ExprKind::This => Val::Ref(l),
            ExprKind::Name(n) => self.field(l, n)?.clone(),
            ExprKind::Field(r, f) => match self.inv_value(l, r)? {
                Val::Ref(t) => self.field(t, f)?.clone(),
                _ => return None,
            },
            ExprKind::Unary(op, a) => unary(*op, &self.inv_value(l, a)?).ok()?,
            ExprKind::Binary(BinOp::And, a, b) => match self.inv_value(l, a)? {
                Val::Bool(false) => Val::Bool(false),
                Val::Bool(true) => self.inv_value(l, b)?,
                _ => return None,
            },
            ExprKind::Binary(BinOp::Or, a, b) => match self.inv_value(l, a)? {
                Val::Bool(true) => Val::Bool(true),
                Val::Bool(false) => self.inv_value(l, b)?,
                _ => return None,
            },
            ExprKind::Binary(op, a, b) => {
                binary(*op, &self.inv_value(l, a)?, &self.inv_value(l, b)?).ok()?
            }
            _ => return None,
        })
    }

    /// Locations currently in Σ whose invariant does not hold.
    pub fn sigma_violations(&self) -> Vec<Loc> {
        self.sigma.iter().copied().filter(|&l| !self.inv_holds(l)).collect()
    }

    // ---- frame bookkeeping ------------------------------------------------

    fn log(&mut self, tid: usize, e: LogEntry) {
        let t = &mut self.threads[tid];
        let k = t.txn_index();
        if k > 0 {
            t.frames[k].log.push(e);
        }
    }

    fn sigma_insert(&mut self, tid: usize, l: Loc) {
        if self.sigma.insert(l) {
            self.log(tid, LogEntry::SigmaAdd(l));
        }
    }

    fn sigma_remove(&mut self, tid: usize, l: Loc) {
        if self.sigma.remove(&l) {
            self.log(tid, LogEntry::SigmaRemove(l));
        }
    }

    fn subtree(&self, k: RtCtx) -> BTreeSet<Loc> {
        runtime_subtree(&self.heap, k)
    }

    // ---- context resolution -----------------------------------------------

    fn resolve(act: &Act<'p>, k: &Context) -> Ev<RtCtx> {
        match k {
            Context::Top => Ok(RtCtx::Top),
            Context::Bot => Ok(RtCtx::Bot),
            Context::This => match act.this {
                Some(l) => Ok(RtCtx::Loc(l)),
                None => stuck("`this` outside an object"),
            },
            Context::Param(p) => match act.ctx.iter().find(|(n, _)| *n == p.as_str()) {
                Some((_, c)) => Ok(*c),
                None => stuck(format!("unbound context parameter `{p}`")),
            },
            Context::Any | Context::Existential => stuck(format!("context `{k}` at runtime")),
        }
    }

    /// Context arguments of `l` viewed as an instance of its ancestor class
    /// `target`.
    fn class_ctx(&self, l: Loc, target: &str) -> Ev<Vec<(&'p str, RtCtx)>> {
        let o = &self.heap.objects[l];
        let mut cur: &'p CClass = match self.prog.class(o.class) {
            Some(c) => c,
            None => return stuck(format!("unknown class `{}`", o.class)),
        };
        let mut args: Vec<(&'p str, RtCtx)> = cur
            .params
            .iter()
            .map(String::as_str)
            .zip(o.ctx_args.iter().copied())
            .collect();
        while cur.name != target {
            let Some(TypeExpr::Class { name, args: sargs }) = &cur.superclass else {
                return stuck(format!("`{}` is not a subclass of `{target}`", o.class));
            };
            let act = Act {
                this: Some(l),
                ctx: args,
                vars: HashMap::new(),
            };
            let resolved = sargs
                .iter()
                .map(|k| Self::resolve(&act, k))
                .collect::<Ev<Vec<_>>>()?;
            cur = match self.prog.class(name) {
                Some(c) => c,
                None => return stuck(format!("unknown class `{name}`")),
            };
            args = cur.params.iter().map(String::as_str).zip(resolved).collect();
        }
        Ok(args)
    }

    /// The contract of `method` called on `l`, resolved with `This ↦ l`.
    pub fn method_contract(&self, l: Loc, method: &str) -> Option<(RtCtx, RtCtx)> {
        let o = self.heap.get(l)?;
        let (decl, m) = self.prog.find_method(o.class, method)?;
        let ctx = self.class_ctx(l, &decl.name).ok()?;
        let act = Act {
            this: Some(l),
            ctx,
            vars: HashMap::new(),
        };
        let v = Self::resolve(&act, &m.contract.validity).ok()?;
        let i = Self::resolve(&act, &m.contract.invalidity).ok()?;
        Some((v, i))
    }

    // ---- operands ---------------------------------------------------------

    fn atom(&self, tid: usize, a: &Atom) -> Ev<Val> {
        let act = self.threads[tid].act();
        match a {
            Atom::Const(Lit::Int(i)) => Ok(Val::Int(i.value.clone())),
            Atom::Const(Lit::Bool(b)) => Ok(Val::Bool(*b)),
            Atom::Const(Lit::Null) => Ok(Val::Null),
            Atom::Const(Lit::Unit) => Ok(Val::Unit),
            Atom::This => match act.this {
                Some(l) => Ok(Val::Ref(l)),
                None => stuck("`this` outside an object"),
            },
            Atom::Var(x) => match act.vars.get(x.as_str()) {
                Some(v) => Ok(v.clone()),
                None => stuck(format!("unbound variable `{x}`")),
            },
        }
    }

    /// An operand whose value is used: a failure value fails again.
    fn strict(&self, tid: usize, a: &Atom) -> Ev<Val> {
        match self.atom(tid, a)? {
            Val::Fail(c) => Err(Stop::Raise(c)),
            v => Ok(v),
        }
    }

    fn strict_all(&self, tid: usize, args: &[Atom]) -> Ev<Vec<Val>> {
        args.iter().map(|a| self.strict(tid, a)).collect()
    }

    fn receiver(&self, tid: usize, v: &Value) -> Ev<Loc> {
        match self.strict(tid, &v.as_atom())? {
            Val::Ref(l) if l < self.heap.objects.len() => Ok(l),
            Val::Ref(l) => Err(Stop::Err(RuntimeError::new(
                Code::Dangling,
                format!("dangling location l{l}"),
            ))),
            Val::Null => Err(Stop::Raise(FailCode::Null)),
            v => stuck(format!("receiver is not an object: {v}")),
        }
    }

    fn field_index(&self, l: Loc, f: &str) -> Ev<usize> {
        let class = self.heap.objects[l].class;
        match self.layouts.get(class).and_then(|lay| lay.index.get(f)) {
            Some(&k) => Ok(k),
            None => stuck(format!("class `{class}` has no field `{f}`")),
        }
    }

    // ---- primitive steps --------------------------------------------------

    fn write_field(&mut self, tid: usize, l: Loc, f: &str, v: Val) -> Ev<()> {
        let i = self.threads[tid].frames.last().expect("frame").i;
        if !runtime_inside(&self.heap, l, i)? {
            return Err(Stop::Err(RuntimeError::new(
                Code::Effect,
                format!("write to l{l}.{f} outside the active invalidity set"),
            )));
        }
        let k = self.field_index(l, f)?;
        let old = std::mem::replace(&mut self.heap.objects[l].fields[k], v);
        self.log(tid, LogEntry::Write(l, k, old));
        self.sigma_remove(tid, l);
        for a in ancestors(&self.heap, l) {
            self.sigma_remove(tid, a);
        }
        Ok(())
    }

    fn check_all(&mut self, set: &BTreeSet<Loc>) {
        for &l in set {
            self.eval_invariant(l);
        }
    }

    /// Starts a transaction with the given contract. Returns false after a
    /// failed pre-check, in which case nothing was pushed.
    fn begin_atomic(&mut self, tid: usize, v: RtCtx, i: RtCtx) -> bool {
        let t = &self.threads[tid];
        let parent = &t.frames[t.txn_index()];
        let top_level = parent.kind == FrameKind::Root;
        let vset = self.subtree(v);
        let set: BTreeSet<Loc> = if top_level {
            vset.clone()
        } else {
            vset.intersection(&self.subtree(parent.i)).copied().collect()
        };
        let snapshot = t.act().vars.clone();
        match self.config.mode {
            Mode::Contract => self.counters.pre_checks += set.len() as u64,
            Mode::Naive => {
                self.counters.pre_checks += vset.len() as u64;
                self.check_all(&vset);
            }
        }
        let mut fresh = Vec::new();
        for &l in &set {
            if !self.sigma.contains(&l) {
                if !self.eval_invariant(l) {
                    self.failures.push(FailureRecord {
                        thread: tid,
                        code: FailCode::PreFail,
                        terminated: false,
                    });
                    return false;
                }
                fresh.push(l);
            }
        }
        let mut f = Frame::new(FrameKind::Atomic, v, i);
        f.holds_lock = top_level;
        f.snapshot = Some(snapshot);
        self.threads[tid].frames.push(f);
        if top_level {
            self.lock = Some(tid);
        }
        for l in fresh {
            self.sigma_insert(tid, l);
        }
        true
    }

    /// Revalidates and pops the innermost transactional frame. On failure
    /// the frame is aborted.
    fn commit(&mut self, tid: usize, ctor: Option<Loc>) -> bool {
        let f = self.threads[tid].frames.last().expect("frame");
        let mut set: BTreeSet<Loc> = match ctor {
            Some(l) => BTreeSet::from([l]),
            None => self
                .subtree(f.v)
                .intersection(&self.subtree(f.i))
                .copied()
                .collect(),
        };
        set.extend(f.created.iter().copied());
        let counted = match (self.config.mode, ctor) {
            (Mode::Naive, None) => {
                let mut all = self.subtree(f.v);
                all.extend(self.subtree(f.i));
                all.extend(f.created.iter().copied());
                let extra: BTreeSet<Loc> = all.difference(&set).copied().collect();
                self.check_all(&extra);
                all.len()
            }
            _ => set.len(),
        };
        self.counters.post_checks += counted as u64;
        let mut ok = true;
        for &l in &set {
            if !self.eval_invariant(l) {
                ok = false;
                break;
            }
        }
        if !ok {
            self.abort(tid, FailCode::PostFail);
            return false;
        }
        let t = &mut self.threads[tid];
        let f = t.frames.pop().expect("frame");
        let k = t.txn_index();
        if k > 0 {
            let parent = &mut t.frames[k];
            parent.log.extend(f.log);
            parent.created.extend(f.created);
        }
        for l in set {
            self.sigma_insert(tid, l);
        }
        if f.holds_lock {
            self.lock = None;
            if self.config.debug_checks {
                let bad = self.sigma_violations();
                assert!(bad.is_empty(), "quiescent Σ holds invalid objects {bad:?}");
            }
        }
        true
    }

    fn abort(&mut self, tid: usize, code: FailCode) {
        let f = self.threads[tid].frames.pop().expect("frame");
        for e in f.log.into_iter().rev() {
            match e {
                LogEntry::Write(l, k, old) => self.heap.objects[l].fields[k] = old,
                LogEntry::SigmaAdd(l) => {
                    self.sigma.remove(&l);
                }
                LogEntry::SigmaRemove(l) => {
                    self.sigma.insert(l);
                }
                LogEntry::Alloc(l) => self.heap.pop(l),
                LogEntry::Event => {
                    self.events.pop();
                }
            }
        }
        if let Some(snap) = f.snapshot {
            if let Some(act) = self.threads[tid].acts.last_mut() {
                act.vars = snap;
            }
        }
        if f.holds_lock {
            self.lock = None;
            self.top_abort = Some(code);
        }
        self.failures.push(FailureRecord {
            thread: tid,
            code,
            terminated: false,
        });
    }

    fn start_call(&mut self, tid: usize, l: Loc, m: &str, args: Vec<Val>) -> Ev<()> {
        let class = self.heap.objects[l].class;
        let Some((decl, meth)) = self.prog.find_method(class, m) else {
            return stuck(format!("class `{class}` has no method `{m}`"));
        };
        if meth.params.len() != args.len() {
            return stuck(format!("`{m}` expects {} arguments", meth.params.len()));
        }
        let params: Vec<(&'p str, Val)> = meth
            .params
            .iter()
            .map(|p| p.name.as_str())
            .zip(args)
            .collect();
        let act = Act {
            this: Some(l),
            ctx: self.class_ctx(l, &decl.name)?,
            vars: Self::locals(&meth.body, &params),
        };
        let v = Self::resolve(&act, &meth.contract.validity)?;
        let i = Self::resolve(&act, &meth.contract.invalidity)?;
        if self.config.mode == Mode::Naive {
            let sub = self.subtree(RtCtx::Loc(l));
            self.counters.pre_checks += sub.len() as u64;
            self.check_all(&sub);
        }
        let t = &mut self.threads[tid];
        t.frames.push(Frame::new(FrameKind::Call, v, i));
        t.acts.push(act);
        t.konts.push(Kont::CallRet(l));
        t.ctrl = Ctrl::Eval(&meth.body.body);
        Ok(())
    }

    fn start_new(&mut self, tid: usize, class: &str, ctx_args: Vec<RtCtx>, args: Vec<Val>) -> Ev<()> {
        let Some(c) = self.prog.class(class) else {
            return stuck(format!("unknown class `{class}`"));
        };
        if c.params.len() != ctx_args.len() || c.ctor.params.len() != args.len() {
            return stuck(format!("bad instantiation of `{class}`"));
        }
        if matches!(ctx_args.first(), Some(RtCtx::Bot)) {
            return stuck("object owned by bot");
        }
        let top_level = !self.threads[tid].in_transaction();
        let mut f = Frame::new(FrameKind::Ctor, RtCtx::Bot, RtCtx::Bot);
        f.holds_lock = top_level;
        self.threads[tid].frames.push(f);
        if top_level {
            self.lock = Some(tid);
        }
        let l = self.heap.alloc(ObjectRec {
            class: c.name.as_str(),
            ctx_args: ctx_args.clone(),
            fields: self.layouts[c.name.as_str()].defaults.clone(),
        });
        self.log(tid, LogEntry::Alloc(l));
        let params: Vec<(&'p str, Val)> = c
            .ctor
            .params
            .iter()
            .map(|p| p.name.as_str())
            .zip(args)
            .collect();
        let act = Act {
            this: Some(l),
            ctx: c.params.iter().map(String::as_str).zip(ctx_args).collect(),
            vars: Self::locals(&c.ctor.body, &params),
        };
        let t = &mut self.threads[tid];
        let f = t.frames.last_mut().expect("frame");
        f.i = RtCtx::Loc(l);
        f.created.push(l);
        t.acts.push(act);
        t.konts.push(Kont::CtorEnd(l));
        t.ctrl = Ctrl::Eval(&c.ctor.body.body);
        Ok(())
    }

    /// The contract of a contract-less `atomic`, read off its body.
    fn deduce(&self, tid: usize, body: &CExpr) -> Ev<(RtCtx, RtCtx)> {
        match &body.kind {
            CKind::Call(v, m, _) => {
                let l = self.receiver(tid, v)?;
                match self.method_contract(l, m) {
                    Some(d) => Ok(d),
                    None => stuck(format!("cannot resolve the contract of `{m}`")),
                }
            }
            CKind::FieldSet(v, _, _) => Ok((RtCtx::Bot, RtCtx::Loc(self.receiver(tid, v)?))),
            _ => stuck("atomic block without a contract"),
        }
    }

    // ---- reduction --------------------------------------------------------

    fn eval(&mut self, tid: usize, e: &'p CExpr) -> Ev<()> {
        let next = match &e.kind {
            CKind::Atom(a) => Ctrl::Ret(self.atom(tid, a)?),
            CKind::New(t, args) => {
                let Some((name, cargs)) = t.as_class() else {
                    return stuck("`new` of a non-class type");
                };
                let act = self.threads[tid].act();
                let ctx = cargs
                    .iter()
                    .map(|k| Self::resolve(act, k))
                    .collect::<Ev<Vec<_>>>()?;
                let vals = self.strict_all(tid, args)?;
                return self.start_new(tid, name, ctx, vals);
            }
            CKind::Assign(x, rhs) => {
                self.threads[tid].konts.push(Kont::Assign(x.as_str()));
                Ctrl::Eval(rhs)
            }
            CKind::FieldGet(v, f) => {
                let l = self.receiver(tid, v)?;
                let k = self.field_index(l, f)?;
                Ctrl::Ret(self.heap.objects[l].fields[k].clone())
            }
            CKind::FieldSet(v, f, a) => {
                let l = self.receiver(tid, v)?;
                let val = self.strict(tid, a)?;
                self.write_field(tid, l, f, val)?;
                Ctrl::Ret(Val::Unit)
            }
            CKind::Call(v, m, args) => {
                let l = self.receiver(tid, v)?;
                let vals = self.strict_all(tid, args)?;
                return self.start_call(tid, l, m, vals);
            }
            CKind::Prim(op, args) => {
                let vals = self.strict_all(tid, args)?;
                let r = match (op, vals.as_slice()) {
                    (PrimOp::Bin(b), [x, y]) => binary(*b, x, y),
                    (PrimOp::Un(u), [x]) => unary(*u, x),
                    _ => return stuck("primitive arity"),
                };
                match r {
                    Ok(v) => Ctrl::Ret(v),
                    Err(PrimError::DivZero) => Ctrl::Raise(FailCode::DivZero),
                    Err(PrimError::Type) => return stuck(format!("ill-typed primitive {op:?}")),
                }
            }
            CKind::Seq(a, b) => {
                self.threads[tid].konts.push(Kont::Seq(b));
                Ctrl::Eval(a)
            }
            CKind::Cond(a, t, f) => match self.strict(tid, a)? {
                Val::Bool(true) => Ctrl::Eval(t),
                Val::Bool(false) => Ctrl::Eval(f),
                v => return stuck(format!("condition is not a bool: {v}")),
            },
            CKind::Atomic(d, body) => {
                let (v, i) = match d {
                    Some(d) => {
                        let act = self.threads[tid].act();
                        (Self::resolve(act, &d.validity)?, Self::resolve(act, &d.invalidity)?)
                    }
                    None => self.deduce(tid, body)?,
                };
                if self.begin_atomic(tid, v, i) {
                    self.threads[tid].konts.push(Kont::AtomicEnd);
                    Ctrl::Eval(body)
                } else {
                    Ctrl::Ret(Val::Fail(FailCode::PreFail))
                }
            }
            CKind::Fork(body) => {
                if self.threads[tid].in_transaction() || self.lock.is_some() {
                    return Err(Stop::Err(RuntimeError::new(
                        Code::ForkInAtomic,
                        "fork inside a transaction",
                    )));
                }
                let act = self.threads[tid].act().clone();
                self.threads.push(Thread::new(Ctrl::Eval(body), act));
                Ctrl::Ret(Val::Unit)
            }
            CKind::Valid(v) => {
                let l = self.receiver(tid, v)?;
                let mut all = true;
                for m in self.subtree(RtCtx::Loc(l)) {
                    if self.eval_invariant(m) {
                        self.sigma_insert(tid, m);
                    } else {
                        all = false;
                        self.sigma_remove(tid, m);
                    }
                }
                Ctrl::Ret(Val::Bool(all))
            }
            CKind::Require(a) => match self.strict(tid, a)? {
                Val::Bool(true) => Ctrl::Ret(Val::Unit),
                Val::Bool(false) => Ctrl::Raise(FailCode::Require),
                v => return stuck(format!("require of a non-bool: {v}")),
            },
            CKind::Emit(name, args) => {
                let vals = self.strict_all(tid, args)?;
                let shown: Vec<String> = vals.iter().map(Val::to_string).collect();
                self.events.push(format!("{name}({})", shown.join(", ")));
                self.log(tid, LogEntry::Event);
                Ctrl::Ret(Val::Unit)
            }
        };
        self.threads[tid].ctrl = next;
        Ok(())
    }

    fn ret(&mut self, tid: usize, v: Val) -> Ev<()> {
        let Some(k) = self.threads[tid].konts.pop() else {
            let t = &mut self.threads[tid];
            t.ctrl = Ctrl::Ret(v);
            t.done = true;
            return Ok(());
        };
        let next = match k {
            Kont::Seq(e) => Ctrl::Eval(e),
            Kont::Assign(x) => {
                let t = &mut self.threads[tid];
                t.acts.last_mut().expect("activation").vars.insert(x, v);
                Ctrl::Ret(Val::Unit)
            }
            Kont::CallRet(l) => {
                if self.config.mode == Mode::Naive {
                    let sub = self.subtree(RtCtx::Loc(l));
                    self.counters.post_checks += sub.len() as u64;
                    self.check_all(&sub);
                }
                let t = &mut self.threads[tid];
                t.acts.pop();
                t.frames.pop();
                Ctrl::Ret(v)
            }
            Kont::AtomicEnd => {
                if self.commit(tid, None) {
                    Ctrl::Ret(v)
                } else {
                    Ctrl::Ret(Val::Fail(FailCode::PostFail))
                }
            }
            Kont::CtorEnd(l) => {
                self.threads[tid].acts.pop();
                if self.commit(tid, Some(l)) {
                    Ctrl::Ret(Val::Ref(l))
                } else {
                    Ctrl::Ret(Val::Fail(FailCode::PostFail))
                }
            }
        };
        self.threads[tid].ctrl = next;
        Ok(())
    }

    fn unwind(&mut self, tid: usize, code: FailCode) {
        let Some(k) = self.threads[tid].konts.pop() else {
            self.failures.push(FailureRecord {
                thread: tid,
                code,
                terminated: true,
            });
            let t = &mut self.threads[tid];
            t.ctrl = Ctrl::Ret(Val::Fail(code));
            t.done = true;
            return;
        };
        let next = match k {
            Kont::Seq(_) | Kont::Assign(_) => Ctrl::Raise(code),
            Kont::CallRet(_) => {
                let t = &mut self.threads[tid];
                t.acts.pop();
                t.frames.pop();
                Ctrl::Raise(code)
            }
            Kont::AtomicEnd => {
                self.abort(tid, code);
                Ctrl::Ret(Val::Fail(code))
            }
            Kont::CtorEnd(_) => {
                self.threads[tid].acts.pop();
                self.abort(tid, code);
                Ctrl::Ret(Val::Fail(code))
            }
        };
        self.threads[tid].ctrl = next;
    }

    /// Performs one reduction on thread `tid`.
    fn step(&mut self, tid: usize) -> Result<(), RuntimeError> {
        if let Some(tr) = &mut self.trace {
            tr.push((tid, self.lock));
        }
        let ctrl = std::mem::replace(&mut self.threads[tid].ctrl, Ctrl::Ret(Val::Unit));
        let r = match ctrl {
            Ctrl::Eval(e) => self.eval(tid, e),
            Ctrl::Ret(v) => self.ret(tid, v),
            Ctrl::Raise(c) => {
                self.unwind(tid, c);
                Ok(())
            }
        };
        match r {
            Ok(()) => Ok(()),
            Err(Stop::Raise(c)) => {
                self.threads[tid].ctrl = Ctrl::Raise(c);
                Ok(())
            }
            Err(Stop::Err(e)) => Err(e),
        }
    }

    /// Picks the next thread: the lock holder if any, else round-robin.
    fn pick(&mut self) -> Option<usize> {
        if let Some(h) = self.lock {
            return Some(h);
        }
        let n = self.threads.len();
        if n == 0 {
            return None;
        }
        let start = self.cursor % n;
        for k in 0..n {
            let t = (start + k) % n;
            if !self.threads[t].done {
                self.cursor = t + 1;
                return Some(t);
            }
        }
        None
    }

    fn spend(&mut self) -> Result<(), RuntimeError> {
        if self.steps >= self.config.fuel {
            return Err(RuntimeError::new(
                Code::Fuel,
                format!("step budget of {} exhausted", self.config.fuel),
            ));
        }
        self.steps += 1;
        Ok(())
    }

    /// Steps until every thread is a value.
    pub fn run_threads(&mut self) -> Result<(), RuntimeError> {
        while let Some(tid) = self.pick() {
            self.spend()?;
            self.step(tid)?;
        }
        Ok(())
    }

    /// Root commit: every object is revalidated and Σ becomes exactly the
    /// set of valid objects.
    pub fn finish(&mut self) -> FinalReport {
        let n = self.heap.objects.len();
        self.counters.post_checks += n as u64;
        let mut invalid = Vec::new();
        self.sigma.clear();
        for l in 0..n {
            if self.eval_invariant(l) {
                self.sigma.insert(l);
            } else {
                invalid.push(l);
            }
        }
        FinalReport {
            lemma3: self.sigma.len() == n,
            objects: n,
            valid: self.sigma.len(),
            pre_checks: self.counters.pre_checks,
            post_checks: self.counters.post_checks,
            invariant_evals: self.counters.invariant_evals,
            events: self.events.clone(),
            state_hash: self.state_hash(),
            failures: self.failures.clone(),
            invalid,
        }
    }

    pub fn run(&mut self) -> Result<FinalReport, RuntimeError> {
        self.run_threads()?;
        Ok(self.finish())
    }

    /// Runs a detached thread to completion and returns its final value.
    fn drive(&mut self, tid: usize) -> Result<Val, RuntimeError> {
        while !self.threads[tid].done {
            self.spend()?;
            self.step(tid)?;
        }
        let t = self.threads.pop().expect("driven thread");
        match t.ctrl {
            Ctrl::Ret(v) => Ok(v),
            _ => Err(RuntimeError::stuck("thread ended without a value")),
        }
    }

    fn detached(&mut self) -> usize {
        let act = Act {
            this: None,
            ctx: Vec::new(),
            vars: HashMap::new(),
        };
        self.threads.push(Thread::new(Ctrl::Ret(Val::Unit), act));
        self.threads.len() - 1
    }

    fn settle(&mut self, tid: usize, r: Ev<()>) -> Result<Val, RuntimeError> {
        match r {
            Ok(()) => {}
            Err(Stop::Raise(c)) => self.threads[tid].ctrl = Ctrl::Raise(c),
            Err(Stop::Err(e)) => {
                self.threads.pop();
                return Err(e);
            }
        }
        let v = self.drive(tid);
        if v.is_err() {
            self.threads.truncate(tid);
            self.lock = None;
        }
        v
    }

    /// Constructs a root object (every context argument is `top`) as a
    /// top-level transaction. Must be called with no live threads.
    pub fn construct(&mut self, class: &str, args: Vec<Val>) -> Result<Val, RuntimeError> {
        let n = match self.prog.class(class) {
            Some(c) => c.params.len(),
            None => return Err(RuntimeError::stuck(format!("unknown class `{class}`"))),
        };
        let tid = self.detached();
        let r = self.start_new(tid, class, vec![RtCtx::Top; n], args);
        self.settle(tid, r)
    }

    /// Calls `method` on `target` as one top-level transaction whose
    /// contract is the method's contract with `This ↦ target`.
    pub fn transact(&mut self, target: Loc, method: &str, args: Vec<Val>) -> Result<Result<Val, FailCode>, RuntimeError> {
        let Some((v, i)) = self.method_contract(target, method) else {
            return Err(RuntimeError::stuck(format!("no method `{method}` on l{target}")));
        };
        let tid = self.detached();
        if !self.begin_atomic(tid, v, i) {
            self.threads.pop();
            return Ok(Err(FailCode::PreFail));
        }
        self.threads[tid].konts.push(Kont::AtomicEnd);
        self.top_abort = None;
        let r = self.start_call(tid, target, method, args);
        let v = self.settle(tid, r)?;
        Ok(match self.top_abort.take() {
            Some(c) => Err(c),
            None => Ok(v),
        })
    }
}

enum PrimError {
    DivZero,
    Type,
}

fn unary(op: UnOp, x: &Val) -> Result<Val, PrimError> {
    match (op, x) {
        (UnOp::Not, Val::Bool(b)) => Ok(Val::Bool(!b)),
        (UnOp::Neg, Val::Int(i)) => Ok(Val::Int(-i)),
        _ => Err(PrimError::Type),
    }
}

fn binary(op: BinOp, x: &Val, y: &Val) -> Result<Val, PrimError> {
    use BinOp::*;
    match (op, x, y) {
        (Eq, a, b) => Ok(Val::Bool(a == b)),
        (Ne, a, b) => Ok(Val::Bool(a != b)),
        (And, Val::Bool(a), Val::Bool(b)) => Ok(Val::Bool(*a && *b)),
        (Or, Val::Bool(a), Val::Bool(b)) => Ok(Val::Bool(*a || *b)),
        (_, Val::Int(a), Val::Int(b)) => Ok(match op {
            Add => Val::Int(a + b),
            Sub => Val::Int(a - b),
            Mul => Val::Int(a * b),
            Div | Mod if b.is_zero() => return Err(PrimError::DivZero),
            Div => Val::Int(a / b),
            Mod => Val::Int(a % b),
            Lt => Val::Bool(a < b),
            Le => Val::Bool(a <= b),
            Gt => Val::Bool(a > b),
            Ge => Val::Bool(a >= b),
            _ => return Err(PrimError::Type),
        }),
        _ => Err(PrimError::Type),
    }
}
