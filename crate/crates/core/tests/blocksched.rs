use std::collections::BTreeSet;

use ov_core::blocksched::{
    build_conflict_graph, interferes, mine_block, mine_block_with, serial_execute, validate_block, Block,
    BlockError, ConflictGraph, Exec, MinedBlock,
};
use ov_core::diag::Code;
use ov_core::fuzz;
use ov_core::ownership::{Loc, OwnerMap, OwnershipTree, RtCtx};
use ov_core::syntax::CoreProgram;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

const BANK: &str = include_str!("../corpus/bank.ov");

fn bank() -> CoreProgram {
    ov_core::compile(BANK).expect("bank compiles").core
}

fn block(name: &str) -> Block {
    let path = format!("{}/corpus/blocks/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Block::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sha(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn members(t: &impl OwnerMap, c: RtCtx) -> BTreeSet<Loc> {
    (0..t.len())
        .filter(|&l| {
            let mut cur = RtCtx::Loc(l);
            loop {
                if cur == c || c == RtCtx::Top {
                    return true;
                }
                match cur {
                    RtCtx::Loc(x) => cur = t.owner(x),
                    _ => return false,
                }
            }
        })
        .filter(|_| c != RtCtx::Bot)
        .collect()
}

fn oracle(t: &impl OwnerMap, (v1, i1): (RtCtx, RtCtx), (v2, i2): (RtCtx, RtCtx)) -> bool {
    let meet = |a, b| !members(t, a).is_disjoint(&members(t, b));
    meet(v1, i2) || meet(v2, i1) || meet(i1, i2)
}

#[test]
fn deposits_have_no_edges_and_match_hand_state() {
    let p = bank();
    let mb = mine_block(&p, &block("deposits")).unwrap();
    assert!(mb.edges.is_empty());
    assert_eq!(mb.status, vec!["committed"; 3]);
    let text = "l0=Account{balance=110};l1=Account{balance=120};l2=Account{balance=130};|valid=0,1,2";
    assert_eq!(mb.final_state_hash, sha(text));
    assert_eq!(mb.pre_checks, 3);
    assert_eq!(mb.post_checks, 3);
    let r = validate_block(&p, &mb, &block("deposits")).unwrap();
    assert!(r.accepted);
}

#[test]
fn same_account_conflicts_and_equals_serial() {
    let p = bank();
    let b = block("conflict");
    let mb = mine_block(&p, &b).unwrap();
    assert_eq!(mb.edges, vec![[0, 1]]);
    let serial = serial_execute(&p, &b, &[0, 1]).unwrap();
    assert_eq!(mb.final_state_hash, serial.hash);
    assert_eq!(mb.final_state_hash, sha("l0=Account{balance=90};|valid=0"));
    assert!(validate_block(&p, &mb, &b).unwrap().accepted);
}

#[test]
fn overdraw_aborts_only_failing_withdrawals() {
    let p = bank();
    let b = block("overdraw");
    let mb = mine_block(&p, &b).unwrap();
    // get() has invalidity top after normalization to bot, so it only
    // conflicts with writers of its own account.
    assert_eq!(mb.edges, vec![[0, 2], [0, 3], [1, 4], [2, 3]]);
    assert_eq!(
        mb.status,
        vec!["committed", "committed", "aborted:R-POST-FAIL", "committed", "aborted:R-POST-FAIL"]
    );
    assert_eq!(
        mb.final_state_hash,
        sha("l0=Account{balance=40};l1=Account{balance=55};|valid=0,1")
    );
    assert!(validate_block(&p, &mb, &b).unwrap().accepted);
}

#[test]
fn token_block_statuses_and_edges() {
    let p = bank();
    let b = block("token");
    let mb = mine_block(&p, &b).unwrap();
    assert_eq!(mb.edges, vec![[0, 1], [0, 3], [0, 6], [1, 6], [2, 4], [3, 6]]);
    assert_eq!(
        mb.status,
        vec![
            "committed",
            "committed",
            "aborted:R-REQUIRE",
            "committed",
            "aborted:R-REQUIRE",
            "committed",
            "committed"
        ]
    );
    let serial = serial_execute(&p, &b, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!(mb.final_state_hash, serial.hash);
}

#[test]
fn validator_rejects_missing_edge_and_forged_hash() {
    let p = bank();
    let b = block("conflict");
    let mb = mine_block(&p, &b).unwrap();

    let mut dropped = mb.clone();
    dropped.edges.clear();
    let err = validate_block(&p, &dropped, &b).unwrap_err();
    assert_eq!(err.code(), Some(Code::BgMismatch));

    let mut forged = mb.clone();
    forged.final_state_hash = "0".repeat(64);
    let r = validate_block(&p, &forged, &b).unwrap();
    assert!(!r.accepted && !r.hash_match && r.status_match);

    let mut wrong_status = mb.clone();
    wrong_status.status[1] = "aborted:R-POST-FAIL".into();
    assert!(!validate_block(&p, &wrong_status, &b).unwrap().accepted);
}

#[test]
fn extra_edges_are_accepted() {
    let p = bank();
    let b = block("deposits");
    let mut mb = mine_block(&p, &b).unwrap();
    mb.edges = vec![[0, 1], [0, 2], [1, 2]];
    assert!(validate_block(&p, &mb, &b).unwrap().accepted);
}

#[test]
fn unknown_target_and_method() {
    let p = bank();
    let b = Block::from_json(r#"{"deploy":[{"id":"a","class":"Account","args":[1]}],"txns":[{"target":"z","method":"get"}]}"#).unwrap();
    assert_eq!(mine_block(&p, &b).unwrap_err().code(), Some(Code::Target));
    let b = Block::from_json(r#"{"deploy":[{"id":"a","class":"Account","args":[1]}],"txns":[{"target":"a","method":"nope"}]}"#).unwrap();
    assert_eq!(mine_block(&p, &b).unwrap_err().code(), Some(Code::Target));
    let b = Block::from_json(r#"{"deploy":[{"id":"a","class":"Nope","args":[]}],"txns":[]}"#).unwrap();
    assert_eq!(mine_block(&p, &b).unwrap_err().code(), Some(Code::Target));
}

#[test]
fn failed_deploy_is_reported() {
    let p = bank();
    let b = Block::from_json(r#"{"deploy":[{"id":"a","class":"Account","args":[0]}],"txns":[]}"#).unwrap();
    assert!(matches!(mine_block(&p, &b), Err(BlockError::Diag { .. })));
}

#[test]
fn malformed_blocks_are_schema_errors() {
    for bad in ["{", r#"{"txns":[{"target":"a"}]}"#, r#"{"deploy":[{"id":"a","class":"Account","args":["x"]}]}"#] {
        let r = Block::from_json(bad).and_then(|b| mine_block(&bank(), &b));
        assert!(matches!(r, Err(BlockError::Schema(_))), "{bad}");
    }
}

#[test]
fn mined_block_json_shape() {
    let mb = mine_block(&bank(), &block("conflict")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&mb.to_json()).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        BTreeSet::from(["edges", "status", "final_state_hash", "pre_checks", "post_checks"])
    );
    assert_eq!(v["edges"], serde_json::json!([[0, 1]]));
    let back: MinedBlock = serde_json::from_value(v).unwrap();
    assert_eq!(back, mb);
}

#[test]
fn graph_builder_matches_pairwise_interference() {
    let mut r = fuzz::rng(5);
    for _ in 0..200 {
        let t = fuzz::random_tree(&mut r, 8);
        let cs: Vec<_> = (0..5).map(|_| fuzz::random_contract(&mut r, 8)).collect();
        let g = build_conflict_graph(&cs, &t);
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(g.has_edge(i, j), oracle(&t, cs[i], cs[j]));
            }
        }
    }
}

#[test]
fn interference_examples() {
    let mut t = OwnershipTree::new();
    let a = RtCtx::Loc(t.add(RtCtx::Top));
    let child = RtCtx::Loc(t.add(a));
    let b = RtCtx::Loc(t.add(RtCtx::Top));
    assert!(interferes((a, a), (child, child), &t));
    assert!(interferes((a, RtCtx::Bot), (child, child), &t));
    assert!(!interferes((a, a), (b, b), &t));
    assert!(interferes((RtCtx::Top, RtCtx::Bot), (b, b), &t));
    assert!(!interferes((RtCtx::Bot, RtCtx::Bot), (RtCtx::Top, RtCtx::Top), &t));
}

fn linear_extension(g: &ConflictGraph, keys: &[u32]) -> Vec<usize> {
    // Kahn's algorithm over edges oriented by index, choosing by key.
    let mut indeg = vec![0; g.n];
    for &(_, j) in &g.edges {
        indeg[j] += 1;
    }
    let mut done = vec![false; g.n];
    let mut out = Vec::new();
    while out.len() < g.n {
        let next = (0..g.n)
            .filter(|&i| !done[i] && indeg[i] == 0)
            .min_by_key(|&i| keys[i % keys.len()])
            .unwrap();
        done[next] = true;
        out.push(next);
        for &(i, j) in &g.edges {
            if i == next {
                indeg[j] -= 1;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mined_equals_any_graph_respecting_serial_order(seed in any::<u64>(), keys in prop::collection::vec(any::<u32>(), 1..5)) {
        let p = bank();
        let mut r = fuzz::rng(seed);
        let b = fuzz::random_block(&mut r, 4);
        let mb = mine_block(&p, &b).unwrap();
        let order = linear_extension(&mb.graph(), &keys);
        let serial = serial_execute(&p, &b, &order).unwrap();
        prop_assert_eq!(&mb.final_state_hash, &serial.hash);
        let status: Vec<String> = serial.status.iter().map(|s| s.to_string()).collect();
        prop_assert_eq!(&mb.status, &status);
    }

    #[test]
    fn worker_count_and_exec_mode_do_not_change_results(seed in any::<u64>()) {
        let p = bank();
        let mut r = fuzz::rng(seed);
        let mut b = fuzz::random_block(&mut r, 4);
        let base = mine_block_with(&p, &b, Exec::Sequential).unwrap();
        for w in [1, 2, 4] {
            b.workers = w;
            prop_assert_eq!(&mine_block_with(&p, &b, Exec::Parallel).unwrap(), &base);
        }
    }
}
