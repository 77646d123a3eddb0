use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(rel)
}

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/goldens").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn ov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ov"))
        .args(args)
        .env("OV_COLOR", "0")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_storage_warns_once() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("storage.ov");
    std::fs::write(
        &f,
        "class Storage[o] {\n    uint256 number;\n    inv number > 0;\n\n    public uint256 retrieve() <this,top> {\n        return number;\n    }\n}\n",
    )
    .unwrap();
    let o = ov(&["check", f.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stderr(&o).matches("W-TOP-INVALIDITY").count(), 1);
}

#[test]
fn check_reports_effect_error() {
    let o = ov(&["check", path(&corpus("negative/effect_write_in_query.ov"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error[E-EFFECT]"));
}

#[test]
fn check_json_lines_parse() {
    let o = ov(&["check", "--json", path(&corpus("negative/owner_call_peer.ov"))]);
    assert_eq!(code(&o), 1);
    let first: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(first["code"], "E-OWNER-CALL");
    assert_eq!(first["severity"], "error");
}

#[test]
fn check_missing_file() {
    assert_eq!(code(&ov(&["check", "/nonexistent/x.ov"])), 2);
}

#[test]
fn run_bank_json() {
    let o = ov(&["run", path(&corpus("bank.ov")), "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["lemma3"], true);
}

#[test]
fn naive_run_checks_at_least_as_much() {
    let counts = |naive: bool| {
        let mut args = vec!["run", "--json"];
        let f = corpus("customer.ov");
        args.push(path(&f));
        if naive {
            args.push("--naive");
        }
        let o = ov(&args);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        v["pre_checks"].as_u64().unwrap() + v["post_checks"].as_u64().unwrap()
    };
    assert!(counts(true) >= counts(false));
}

#[test]
fn run_seeded_failure_exits_one() {
    let o = ov(&["run", path(&corpus("withdraw_below_zero.ov"))]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("lemma3: false"));
}

#[test]
fn run_out_of_fuel_exits_three() {
    let o = ov(&["run", path(&corpus("bank.ov")), "--fuel", "1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("E-FUEL"));
}

#[test]
fn transpile_account_and_storage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ov(&["transpile", path(&corpus("account.ov")), "-o", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["Account.sol", "Ownable.sol", "Validity.sol", "OVValidity.sol"] {
        assert_eq!(std::fs::read_to_string(dir.path().join(f)).unwrap(), golden(f), "{f}");
    }
    let o = ov(&["transpile", path(&corpus("storage.ov")), "-o", out, "--style", "pre-post"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("Storage_OV.sol")).unwrap(),
        golden("Storage_OV.sol")
    );
}

#[test]
fn transpile_parameter_contract_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ov(&[
        "transpile",
        path(&corpus("negative/transpile_param_contract.ov")),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("E-TRANSPILE-CTX"));
}

#[test]
fn simulate_deposits_and_conflict() {
    let bank = corpus("bank.ov");
    let o = ov(&["simulate", path(&bank), path(&corpus("blocks/deposits.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mined: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(mined["edges"], serde_json::json!([]));

    let o = ov(&["simulate", path(&bank), path(&corpus("blocks/conflict.json"))]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    let mined: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(mined["edges"], serde_json::json!([[0, 1]]));
    let report: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(report["accepted"], true);
}

#[test]
fn simulate_output_independent_of_workers() {
    let bank = corpus("bank.ov");
    let block = corpus("blocks/token.json");
    let outs: Vec<String> = ["1", "2", "4"]
        .iter()
        .map(|w| stdout(&ov(&["simulate", path(&bank), path(&block), "--workers", w, "--seed", "9"])))
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[1], outs[2]);
}

#[test]
fn simulate_malformed_block_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    std::fs::write(&f, "{\"txns\": [").unwrap();
    let o = ov(&["simulate", path(&corpus("bank.ov")), f.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn color_toggle() {
    let f = corpus("negative/effect_write_in_query.ov");
    let o = Command::new(env!("CARGO_BIN_EXE_ov"))
        .args(["check", path(&f)])
        .env("OV_COLOR", "1")
        .output()
        .unwrap();
    assert!(stderr(&o).contains("\x1b[31m"));
    assert!(!stderr(&ov(&["check", path(&f)])).contains('\x1b'));
}
