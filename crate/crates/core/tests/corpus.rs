use std::path::{Path, PathBuf};

use ov_core::diag::Code;
use ov_core::runtime::{run_program, FailCode, Mode, RunConfig};
use ov_core::transpile::{transpile_program, EmitterConfig};

fn dir(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn ov_files(rel: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir(rel))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ov"))
        .collect();
    v.sort();
    v
}

fn first_error(src: &str) -> Option<Code> {
    match ov_core::compile(src) {
        Err(d) => d.iter().find(|d| d.is_error()).map(|d| d.code),
        Ok(c) => transpile_program(&c.surface, &EmitterConfig::default())
            .err()
            .map(|e| e[0].code),
    }
}

#[test]
fn positive_programs_check_cleanly() {
    let files = ov_files("corpus");
    assert!(files.len() >= 10);
    for f in files {
        let src = std::fs::read_to_string(&f).unwrap();
        if let Err(d) = ov_core::compile(&src) {
            panic!("{}: {d:?}", f.display());
        }
    }
}

#[test]
fn negative_programs_report_expected_code() {
    let files = ov_files("corpus/negative");
    assert!(files.len() >= 12);
    for f in files {
        let src = std::fs::read_to_string(&f).unwrap();
        let want = src
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("// expect: "))
            .and_then(Code::parse)
            .unwrap_or_else(|| panic!("{}: missing expectation", f.display()));
        assert_eq!(first_error(&src), Some(want), "{}", f.display());
    }
}

#[test]
fn appendix_contracts_carry_annotated_contracts() {
    let contract = |file: &str, class: &str, method: &str| {
        let src = std::fs::read_to_string(dir("corpus").join(file)).unwrap();
        let p = ov_core::compile(&src).unwrap().surface;
        let m = p.class(class).unwrap().methods.iter().find(|m| m.name == method).unwrap();
        m.contract.to_string()
    };
    assert_eq!(contract("token.ov", "Token", "approve"), "<this,bot>");
    assert_eq!(contract("ballot.ov", "Ballot", "vote"), "<this,this>");
    assert_eq!(contract("account.ov", "Account", "deposit"), "<this,this>");
    assert_eq!(contract("account.ov", "Account", "get"), "<this,bot>");
}

fn run(file: &str, mode: Mode, seed: u64) -> ov_core::runtime::FinalReport {
    let src = std::fs::read_to_string(dir("corpus").join(file)).unwrap();
    let c = ov_core::compile(&src).unwrap();
    run_program(
        &c.core,
        RunConfig {
            mode,
            seed,
            ..RunConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn customer_second_withdraw_rolls_back() {
    let r = run("customer.ov", Mode::Contract, 0);
    assert!(r.lemma3);
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].code, FailCode::PostFail);
    assert!(!r.failures[0].terminated);
}

#[test]
fn direct_withdraw_below_zero_leaves_invalid_object() {
    let r = run("withdraw_below_zero.ov", Mode::Contract, 0);
    assert!(!r.lemma3);
    assert!(r.failures.is_empty());
    assert_eq!(r.valid, r.objects - 1);
}

#[test]
fn require_failures_abort_without_breaking_validity() {
    for f in ["token.ov", "purchase.ov", "ballot.ov", "auction.ov"] {
        let r = run(f, Mode::Contract, 0);
        assert!(r.lemma3, "{f}");
        assert!(r.failures.iter().all(|x| !x.terminated), "{f}");
    }
    let token = run("token.ov", Mode::Contract, 0);
    assert!(token.failures.iter().any(|x| x.code == FailCode::Require));
}

#[test]
fn read_path_has_no_commit_revalidation() {
    let c = run("account_read.ov", Mode::Contract, 0);
    let n = run("account_read.ov", Mode::Naive, 0);
    // Constructor commit plus the final root commit; the read transaction
    // adds a pre-check only.
    assert_eq!((c.pre_checks, c.post_checks), (1, 2));
    assert!(n.post_checks > c.post_checks);
    assert_eq!(c.state_hash, n.state_hash);
}

#[test]
fn naive_mode_never_checks_less() {
    for f in ov_files("corpus") {
        let name = f.file_name().unwrap().to_str().unwrap().to_string();
        let c = run(&name, Mode::Contract, 3);
        let n = run(&name, Mode::Naive, 3);
        assert!(n.pre_checks + n.post_checks >= c.pre_checks + c.post_checks, "{name}");
        assert_eq!(c.state_hash, n.state_hash, "{name}");
    }
}
