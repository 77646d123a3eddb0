use std::path::PathBuf;

use ov_core::diag::Code;
use ov_core::runtime::{Machine, RunConfig, Val};
use ov_core::transpile::{
    bundle_api, checks_for, emit_is_valid, modifier_for, transpile_class, transpile_program, well_formed,
    EmitterConfig, Style,
};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(root().join(rel)).unwrap()
}

fn surface(rel: &str) -> ov_core::syntax::Program {
    ov_core::compile(&read(rel)).expect("compiles").surface
}

fn pre_post() -> EmitterConfig {
    EmitterConfig {
        style: Style::PrePost,
        ..EmitterConfig::default()
    }
}

#[test]
fn account_matches_golden() {
    let p = surface("corpus/account.ov");
    let out = transpile_class(&p.classes[0], &EmitterConfig::default()).unwrap();
    assert_eq!(out, read("goldens/Account.sol"));
}

#[test]
fn storage_pre_post_matches_golden() {
    let p = surface("corpus/storage.ov");
    let files = transpile_program(&p, &pre_post()).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].0, "Storage_OV.sol");
    assert_eq!(files[0].1, read("goldens/Storage_OV.sol"));
}

#[test]
fn bundle_matches_goldens() {
    for (name, text) in bundle_api(&EmitterConfig::default()) {
        assert_eq!(text, read(&format!("goldens/{name}")), "{name}");
    }
}

#[test]
fn bundle_message_strings() {
    let [(_, own), (_, val), (_, ovv)] = bundle_api(&EmitterConfig::default());
    assert!(own.contains("\"Caller is not owner\""));
    assert!(own.contains("\"Caller is not the specified address\""));
    assert!(own.contains("modifier isCalledBy(address addr)"));
    for t in [&val, &ovv] {
        assert!(t.contains("require(this.isValid(), \"Validity fails pre-check\");"));
        assert!(t.contains("require(this.isValid(), \"Validity fails post-check\");"));
    }
    for m in ["preValid", "postValid", "thisThis", "botThis", "thisTop", "botTop"] {
        assert!(ovv.contains(&format!("modifier {m}() {{")), "{m}");
    }
}

#[test]
fn golden_fragments_present() {
    let acc = read("goldens/Account.sol");
    for frag in [
        "contract Account is Ownable, OVValidity",
        "function deposit(uint256 amount) thisThis() public",
        "function get() thisTop() public view",
        "return balance > 0 && balance < 1e30;",
    ] {
        assert!(acc.contains(frag), "{frag}");
    }
    let st = read("goldens/Storage_OV.sol");
    assert!(st.contains("contract Storage_OV is Ownable, Validity"));
    assert!(st.contains("preValid() postValid() public"));
    assert!(st.contains("return number > 0;"));
}

#[test]
fn is_valid_bodies() {
    let p = surface("corpus/storage.ov");
    let t = emit_is_valid(&p.classes[0], Style::PrePost).unwrap();
    assert!(t.contains("return number > 0;"));
    let p = ov_core::compile("class Plain[o] { int x; }").unwrap().surface;
    let t = emit_is_valid(&p.classes[0], Style::OvValidity).unwrap();
    assert!(t.contains("return true;"));
    assert!(!t.contains("botThis"));
}

#[test]
fn transpiling_twice_is_identical() {
    for f in ["corpus/account.ov", "corpus/storage.ov", "corpus/bank.ov"] {
        let p = surface(f);
        for cfg in [EmitterConfig::default(), pre_post()] {
            let a = transpile_program(&p, &cfg);
            let b = transpile_program(&p, &cfg);
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }
}

#[test]
fn emitted_files_are_well_formed() {
    let mut count = 0;
    for e in std::fs::read_dir(root().join("corpus")).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "ov") {
            let p = ov_core::compile(&std::fs::read_to_string(&path).unwrap()).unwrap().surface;
            for cfg in [EmitterConfig::default(), pre_post()] {
                if let Ok(files) = transpile_program(&p, &cfg) {
                    for (name, text) in files {
                        well_formed(&text).unwrap_or_else(|e| panic!("{}: {name}: {e}\n{text}", path.display()));
                        count += 1;
                    }
                }
            }
        }
    }
    assert!(count >= 6, "{count}");
}

#[test]
fn parameter_contract_is_rejected() {
    let src = read("corpus/negative/transpile_param_contract.ov");
    let p = ov_core::compile(&src).expect("typechecks").surface;
    let errs = transpile_program(&p, &EmitterConfig::default()).unwrap_err();
    assert!(errs.iter().all(|d| d.code == Code::TranspileCtx), "{errs:?}");
}

#[test]
fn extra_context_parameter_is_rejected() {
    let p = ov_core::compile("class Two[o, p] { int x; }").unwrap().surface;
    let errs = transpile_class(&p.classes[0], &EmitterConfig::default()).unwrap_err();
    assert_eq!(errs[0].code, Code::TranspileCtx);
}

#[test]
fn nested_transaction_is_not_expressible() {
    let src = "class A[o] { int x; void m() <this,this> { atomic <this,this> { x = 1; } } }";
    let p = ov_core::compile(src).unwrap().surface;
    let errs = transpile_class(&p.classes[0], &EmitterConfig::default()).unwrap_err();
    assert_eq!(errs[0].code, Code::TranspileExpr);
}

#[test]
fn constructor_ends_with_post_check() {
    let p = surface("corpus/bank.ov");
    let acc = p.class("Account").unwrap();
    let out = transpile_class(acc, &EmitterConfig::default()).unwrap();
    assert!(out.contains(
        "    constructor(uint256 initial) public {\n        balance = initial;\n        require(this.isValid(), \"Validity fails post-check\");\n    }\n"
    ));
}

const PROBE: &str = r#"
class Probe[o] {
    int x;
    inv x >= 0;

    Probe() {
        x = 1;
    }

    void both() <this,this> {
        x = x + 1;
    }

    int pre() <this,bot> {
        return x;
    }

    void post() <bot,this> {
        x = x + 1;
    }

    int none() <bot,bot> {
        return 0;
    }
}
"#;

#[test]
fn modifiers_agree_with_runtime_checks() {
    let c = ov_core::compile(PROBE).unwrap();
    let mut m = Machine::new(&c.core, RunConfig::default());
    let Val::Ref(l) = m.construct("Probe", vec![]).unwrap() else {
        panic!()
    };
    for md in &c.surface.classes[0].methods {
        let (pre, post) = checks_for(&md.contract).unwrap();
        let before = m.counters;
        m.transact(l, &md.name, vec![]).unwrap().unwrap();
        let after = m.counters;
        assert_eq!(after.pre_checks > before.pre_checks, pre, "{}", md.name);
        assert_eq!(after.post_checks > before.post_checks, post, "{}", md.name);
        let expected = match md.name.as_str() {
            "both" => Some("thisThis"),
            "pre" => Some("thisTop"),
            _ => None,
        };
        assert_eq!(modifier_for(&md.contract).unwrap(), expected, "{}", md.name);
    }
}
