//! Block execution: validity interference between transaction contracts,
//! conflict graphs, a parallel miner and a re-executing validator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diag::Code;
use crate::ownership::{subtrees_overlap, Loc, OwnerMap, RtCtx};
use crate::runtime::{Counters, FailCode, Machine, ObjectRec, RunConfig, Val};
use crate::syntax::CoreProgram;

/// A resolved contract `(V, I)`.
pub type RtContract = (RtCtx, RtCtx);

/// Whether two resolved contracts may interfere: one's validity set meets
/// the other's invalidity set, or the invalidity sets meet.
pub fn interferes(d1: RtContract, d2: RtContract, tree: &impl OwnerMap) -> bool {
    let (v1, i1) = d1;
    let (v2, i2) = d2;
    subtrees_overlap(tree, v1, i2) || subtrees_overlap(tree, v2, i1) || subtrees_overlap(tree, i1, i2)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictGraph {
    pub n: usize,
    /// Undirected edges stored as `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl ConflictGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges = edges
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        ConflictGraph { n, edges }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Lower-indexed neighbours of each vertex.
    fn lower_neighbours(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            if j < self.n {
                out[j].push(i);
            }
        }
        out
    }
}

pub fn build_conflict_graph(contracts: &[RtContract], tree: &impl OwnerMap) -> ConflictGraph {
    let mut edges = Vec::new();
    for i in 0..contracts.len() {
        for j in i + 1..contracts.len() {
            if interferes(contracts[i], contracts[j], tree) {
                edges.push((i, j));
            }
        }
    }
    ConflictGraph::new(contracts.len(), edges)
}

// ---- block input -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deploy {
    pub id: String,
    pub class: String,
    #[serde(default)]
    pub args: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Txn {
    pub target: String,
    pub method: String,
    #[serde(default)]
    pub args: Vec<serde_json::Value>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    #[serde(default)]
    pub deploy: Vec<Deploy>,
    #[serde(default)]
    pub txns: Vec<Txn>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Block {
    pub fn from_json(text: &str) -> Result<Block, BlockError> {
        let b: Block = serde_json::from_str(text).map_err(|e| BlockError::Schema(e.to_string()))?;
        if b.workers == 0 {
            return Err(BlockError::Schema("`workers` must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for d in &b.deploy {
            if !ids.insert(d.id.as_str()) {
                return Err(BlockError::Schema(format!("duplicate object id `{}`", d.id)));
            }
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("invalid block: {0}")]
    Schema(String),
    #[error("{code}: {message}")]
    Diag { code: Code, message: String },
}

impl BlockError {
    fn diag(code: Code, message: impl Into<String>) -> Self {
        BlockError::Diag {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> Option<Code> {
        match self {
            BlockError::Schema(_) => None,
            BlockError::Diag { code, .. } => Some(*code),
        }
    }
}

fn arg_value(v: &serde_json::Value) -> Result<Val, BlockError> {
    match v {
        serde_json::Value::Bool(b) => Ok(Val::Bool(*b)),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Val::Int(i.into()))
            } else if let Some(u) = n.as_u64() {
                Ok(Val::Int(u.into()))
            } else {
                Err(BlockError::Schema(format!("argument {n} is not an integer")))
            }
        }
        other => Err(BlockError::Schema(format!(
            "argument {other} is not an integer or bool"
        ))),
    }
}

fn arg_values(args: &[serde_json::Value]) -> Result<Vec<Val>, BlockError> {
    args.iter().map(arg_value).collect()
}

// ---- execution ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SctStatus {
    Committed,
    Aborted(FailCode),
}

impl fmt::Display for SctStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SctStatus::Committed => f.write_str("committed"),
            SctStatus::Aborted(c) => write!(f, "aborted:{c}"),
        }
    }
}

/// A smart contract transaction bound to a deployed object.
#[derive(Debug, Clone)]
pub struct Sct {
    pub index: usize,
    pub target: Loc,
    pub method: String,
    pub args: Vec<Val>,
    pub contract: RtContract,
    pub retries: u32,
}

/// How ready transactions of one round are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Host-parallel when the `parallel` feature is enabled, sequential
    /// otherwise.
    #[default]
    Parallel,
}

/// Machine state after deploys, with the transactions bound to it.
#[derive(Debug, Clone)]
pub struct Prepared<'p> {
    pub machine: Machine<'p>,
    pub ids: BTreeMap<String, Loc>,
    pub scts: Vec<Sct>,
}

fn block_config() -> RunConfig {
    RunConfig {
        fuel: u64::MAX,
        ..RunConfig::default()
    }
}

/// Executes the deploys serially and binds every transaction to its target.
pub fn prepare<'p>(p: &'p CoreProgram, b: &Block, retries: u32) -> Result<Prepared<'p>, BlockError> {
    let mut m = Machine::new(p, block_config());
    let mut ids = BTreeMap::new();
    for d in &b.deploy {
        let args = arg_values(&d.args)?;
        if p.class(&d.class).is_none() {
            return Err(BlockError::diag(
                Code::Target,
                format!("deploy `{}`: unknown class `{}`", d.id, d.class),
            ));
        }
        let v = m
            .construct(&d.class, args)
            .map_err(|e| BlockError::diag(e.code, format!("deploy `{}`: {}", d.id, e.message)))?;
        match v {
            Val::Ref(l) => {
                ids.insert(d.id.clone(), l);
            }
            other => {
                return Err(BlockError::diag(
                    Code::Target,
                    format!("deploy `{}` failed: {other}", d.id),
                ))
            }
        }
    }
    // Block counters cover transactions only.
    m.counters = Counters::default();
    let mut scts = Vec::new();
    for (index, t) in b.txns.iter().enumerate() {
        let Some(&target) = ids.get(&t.target) else {
            return Err(BlockError::diag(
                Code::Target,
                format!("transaction {index}: unknown target `{}`", t.target),
            ));
        };
        let Some(contract) = m.method_contract(target, &t.method) else {
            return Err(BlockError::diag(
                Code::Target,
                format!("transaction {index}: `{}` has no method `{}`", t.target, t.method),
            ));
        };
        scts.push(Sct {
            index,
            target,
            method: t.method.clone(),
            args: arg_values(&t.args)?,
            contract,
            retries,
        });
    }
    Ok(Prepared { machine: m, ids, scts })
}

/// The effect of one transaction relative to the snapshot it ran on.
#[derive(Debug, Clone)]
struct Diff<'p> {
    base_len: usize,
    writes: Vec<(Loc, usize, Val)>,
    created: Vec<ObjectRec<'p>>,
    sigma_add: Vec<Loc>,
    sigma_remove: Vec<Loc>,
    events: Vec<String>,
    counters: Counters,
    status: SctStatus,
}

fn counters_delta(after: Counters, before: Counters) -> Counters {
    Counters {
        pre_checks: after.pre_checks - before.pre_checks,
        post_checks: after.post_checks - before.post_checks,
        invariant_evals: after.invariant_evals - before.invariant_evals,
    }
}

fn run_sct<'p>(base: &Machine<'p>, s: &Sct) -> Result<Diff<'p>, BlockError> {
    let mut attempts = 0;
    loop {
        let mut m = base.clone();
        let r = m
            .transact(s.target, &s.method, s.args.clone())
            .map_err(|e| BlockError::diag(e.code, format!("transaction {}: {}", s.index, e.message)))?;
        let status = match r {
            Ok(_) => SctStatus::Committed,
            Err(c) => SctStatus::Aborted(c),
        };
        if status != SctStatus::Committed && attempts < s.retries {
            attempts += 1;
            continue;
        }
        let n0 = base.heap.objects.len();
        let mut writes = Vec::new();
        for l in 0..n0 {
            let (old, new) = (&base.heap.objects[l].fields, &m.heap.objects[l].fields);
            for (k, (a, b)) in old.iter().zip(new).enumerate() {
                if a != b {
                    writes.push((l, k, b.clone()));
                }
            }
        }
        let created = m.heap.objects[n0..].to_vec();
        return Ok(Diff {
            base_len: n0,
            writes,
            created,
            sigma_add: m.sigma.difference(&base.sigma).copied().collect(),
            sigma_remove: base.sigma.difference(&m.sigma).copied().collect(),
            events: m.events[base.events.len()..].to_vec(),
            counters: counters_delta(m.counters, base.counters),
            status,
        });
    }
}

fn apply<'p>(m: &mut Machine<'p>, d: Diff<'p>) {
    let cur = m.heap.objects.len();
    let remap_loc = |l: Loc| if l >= d.base_len { l - d.base_len + cur } else { l };
    let remap = |v: Val| match v {
        Val::Ref(l) => Val::Ref(remap_loc(l)),
        v => v,
    };
    let remap_ctx = |k: RtCtx| match k {
        RtCtx::Loc(l) => RtCtx::Loc(remap_loc(l)),
        k => k,
    };
    for o in d.created {
        m.heap.alloc(ObjectRec {
            class: o.class,
            ctx_args: o.ctx_args.into_iter().map(remap_ctx).collect(),
            fields: o.fields.into_iter().map(remap).collect(),
        });
    }
    for (l, k, v) in d.writes {
        m.heap.objects[l].fields[k] = remap(v);
    }
    for l in d.sigma_remove {
        m.sigma.remove(&l);
    }
    for l in d.sigma_add {
        m.sigma.insert(remap_loc(l));
    }
    m.events.extend(d.events);
    m.counters.pre_checks += d.counters.pre_checks;
    m.counters.post_checks += d.counters.post_checks;
    m.counters.invariant_evals += d.counters.invariant_evals;
}

#[cfg(feature = "parallel")]
fn exec_round<'p>(base: &Machine<'p>, ready: &[&Sct], exec: Exec, workers: usize) -> Result<Vec<Diff<'p>>, BlockError> {
    use rayon::prelude::*;
    if exec == Exec::Sequential || workers <= 1 || ready.len() <= 1 {
        return ready.iter().map(|s| run_sct(base, s)).collect();
    }
    pool(workers).install(|| ready.par_iter().map(|s| run_sct(base, s)).collect())
}

#[cfg(feature = "parallel")]
fn pool(workers: usize) -> std::sync::Arc<rayon::ThreadPool> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().expect("pool registry");
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("thread pool"),
            )
        })
        .clone()
}

#[cfg(not(feature = "parallel"))]
fn exec_round<'p>(base: &Machine<'p>, ready: &[&Sct], _exec: Exec, _workers: usize) -> Result<Vec<Diff<'p>>, BlockError> {
    ready.iter().map(|s| run_sct(base, s)).collect()
}

/// Runs the transactions honouring `graph`: a transaction starts once every
/// lower-indexed neighbour has been applied, and results are applied in
/// index order. Returns per-transaction statuses.
pub fn execute_with_graph<'p>(
    prep: &mut Prepared<'p>,
    graph: &ConflictGraph,
    exec: Exec,
    workers: usize,
) -> Result<Vec<SctStatus>, BlockError> {
    let n = prep.scts.len();
    let lower = graph.lower_neighbours();
    let mut results: Vec<Option<Diff>> = vec![None; n];
    let mut status = vec![SctStatus::Committed; n];
    let mut applied = 0;
    while applied < n {
        let ready: Vec<&Sct> = (applied..n)
            .filter(|&j| results[j].is_none() && lower[j].iter().all(|&i| i < applied))
            .map(|j| &prep.scts[j])
            .collect();
        let diffs = exec_round(&prep.machine, &ready, exec, workers)?;
        for (s, d) in ready.iter().zip(diffs) {
            results[s.index] = Some(d);
        }
        while applied < n {
            let Some(d) = results[applied].take() else {
                break;
            };
            status[applied] = d.status;
            apply(&mut prep.machine, d);
            applied += 1;
        }
    }
    Ok(status)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedBlock {
    pub edges: Vec<[usize; 2]>,
    pub status: Vec<String>,
    pub final_state_hash: String,
    pub pre_checks: u64,
    pub post_checks: u64,
}

impl MinedBlock {
    pub fn graph(&self) -> ConflictGraph {
        ConflictGraph::new(self.status.len(), self.edges.iter().map(|e| (e[0], e[1])))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mined block serialization is infallible")
    }
}

/// Default retry budget for transactions aborted during mining.
pub const MINER_RETRIES: u32 = 1;

pub fn mine_block(p: &CoreProgram, b: &Block) -> Result<MinedBlock, BlockError> {
    mine_block_with(p, b, Exec::Parallel)
}

pub fn mine_block_with(p: &CoreProgram, b: &Block, exec: Exec) -> Result<MinedBlock, BlockError> {
    let mut prep = prepare(p, b, MINER_RETRIES)?;
    let contracts: Vec<RtContract> = prep.scts.iter().map(|s| s.contract).collect();
    let graph = build_conflict_graph(&contracts, &prep.machine.heap);
    let status = execute_with_graph(&mut prep, &graph, exec, b.workers)?;
    Ok(MinedBlock {
        edges: graph.edges.iter().map(|&(i, j)| [i, j]).collect(),
        status: status.iter().map(SctStatus::to_string).collect(),
        final_state_hash: prep.machine.state_hash(),
        pre_checks: prep.machine.counters.pre_checks,
        post_checks: prep.machine.counters.post_checks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub accepted: bool,
    pub final_state_hash: String,
    pub hash_match: bool,
    pub status_match: bool,
}

/// Re-executes `b` on a fresh heap using the miner's graph after checking
/// that it contains every interfering pair.
pub fn validate_block(p: &CoreProgram, mb: &MinedBlock, b: &Block) -> Result<ValidationReport, BlockError> {
    let mut prep = prepare(p, b, MINER_RETRIES)?;
    if mb.status.len() != prep.scts.len() {
        return Err(BlockError::Schema(format!(
            "mined block has {} statuses for {} transactions",
            mb.status.len(),
            prep.scts.len()
        )));
    }
    let supplied = mb.graph();
    let contracts: Vec<RtContract> = prep.scts.iter().map(|s| s.contract).collect();
    let real = build_conflict_graph(&contracts, &prep.machine.heap);
    if let Some(&(i, j)) = real.edges.iter().find(|&&(i, j)| !supplied.has_edge(i, j)) {
        return Err(BlockError::diag(
            Code::BgMismatch,
            format!("conflict graph omits the interfering pair ({i}, {j})"),
        ));
    }
    let status = execute_with_graph(&mut prep, &supplied, Exec::Parallel, b.workers)?;
    let hash = prep.machine.state_hash();
    let status_match = status.iter().map(SctStatus::to_string).eq(mb.status.iter().cloned());
    let hash_match = hash == mb.final_state_hash;
    Ok(ValidationReport {
        accepted: hash_match && status_match,
        final_state_hash: hash,
        hash_match,
        status_match,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerialOutcome {
    pub hash: String,
    /// Statuses by transaction index.
    pub status: Vec<SctStatus>,
}

/// Executes the transactions one at a time in `order` with no retries.
pub fn serial_execute(p: &CoreProgram, b: &Block, order: &[usize]) -> Result<SerialOutcome, BlockError> {
    let mut prep = prepare(p, b, 0)?;
    let n = prep.scts.len();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(BlockError::Schema("order is not a permutation".into()));
    }
    let mut status = vec![SctStatus::Committed; n];
    for &i in order {
        let s = &prep.scts[i];
        let r = prep
            .machine
            .transact(s.target, &s.method, s.args.clone())
            .map_err(|e| BlockError::diag(e.code, e.message))?;
        if let Err(c) = r {
            status[i] = SctStatus::Aborted(c);
        }
    }
    Ok(SerialOutcome {
        hash: prep.machine.state_hash(),
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ownership::OwnershipTree;

    #[test]
    fn sibling_roots_do_not_interfere() {
        let mut t = OwnershipTree::new();
        let a = t.add(RtCtx::Top);
        let b = t.add(RtCtx::Top);
        let (a, b) = (RtCtx::Loc(a), RtCtx::Loc(b));
        assert!(!interferes((a, a), (b, b), &t));
        assert!(interferes((a, a), (a, RtCtx::Bot), &t));
        assert!(!interferes((a, RtCtx::Bot), (a, RtCtx::Bot), &t));
    }

    #[test]
    fn graph_keeps_ordered_pairs() {
        let g = ConflictGraph::new(3, [(2, 0), (1, 1)]);
        assert_eq!(g.edges.iter().copied().collect::<Vec<_>>(), vec![(0, 2)]);
        assert!(g.has_edge(2, 0));
        assert_eq!(g.lower_neighbours()[2], vec![0]);
    }

    #[test]
    fn block_schema_is_strict() {
        assert!(Block::from_json(r#"{"deploy":[],"txns":[],"workers":0}"#).is_err());
        assert!(Block::from_json(r#"{"deploy":[],"extra":1}"#).is_err());
        let b = Block::from_json(r#"{"deploy":[{"id":"a1","class":"Account","args":[100]}],"txns":[{"target":"a1","method":"deposit","args":[5]}],"workers":4,"seed":42}"#).unwrap();
        assert_eq!(b.workers, 4);
        assert_eq!(b.txns[0].method, "deposit");
    }
}
