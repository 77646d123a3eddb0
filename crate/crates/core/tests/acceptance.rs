//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ov_core::blocksched::{interferes, mine_block, serial_execute, validate_block, Block};
use ov_core::diag::Code;
use ov_core::fuzz;
use ov_core::ownership::{Loc, OwnerMap, RtCtx};
use ov_core::runtime::{run_program, FailCode, Machine, Mode, RunConfig, Val};
use ov_core::syntax::CoreProgram;
use ov_core::transpile::{bundle_api, transpile_class, transpile_program, EmitterConfig, Style};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn dir(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(dir(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
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

fn name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    let e = t.elapsed();
    ensure(e <= limit, || format!("took {e:?}, limit {limit:?}"))
}

fn golden_transpilation() -> Outcome {
    let t = Instant::now();
    let account = ov_core::compile(&read("corpus/account.ov")).map_err(|d| format!("{d:?}"))?;
    let out = transpile_class(&account.surface.classes[0], &EmitterConfig::default()).map_err(|d| format!("{d:?}"))?;
    ensure(out == read("goldens/Account.sol"), || "Account.sol differs from golden".into())?;
    let storage = ov_core::compile(&read("corpus/storage.ov")).map_err(|d| format!("{d:?}"))?;
    let cfg = EmitterConfig {
        style: Style::PrePost,
        ..EmitterConfig::default()
    };
    let files = transpile_program(&storage.surface, &cfg).map_err(|d| format!("{d:?}"))?;
    ensure(
        files.len() == 1 && files[0].0 == "Storage_OV.sol" && files[0].1 == read("goldens/Storage_OV.sol"),
        || "Storage_OV.sol differs from golden".into(),
    )?;
    for (file, text) in bundle_api(&EmitterConfig::default()) {
        ensure(text == read(&format!("goldens/{file}")), || format!("{file} differs from golden"))?;
        if file != "Ownable.sol" {
            for msg in ["\"Validity fails pre-check\"", "\"Validity fails post-check\""] {
                ensure(text.contains(msg), || format!("{file} lacks {msg}"))?;
            }
        }
    }
    within(t, Duration::from_secs(1))?;
    Ok("Account.sol, Storage_OV.sol and 3 API files byte-identical".into())
}

fn positive_corpus() -> Outcome {
    let files = ov_files("corpus");
    let mut names = BTreeSet::new();
    for f in &files {
        let c = ov_core::compile(&std::fs::read_to_string(f).unwrap()).map_err(|d| format!("{}: {d:?}", name(f)))?;
        for cl in &c.surface.classes {
            names.insert(cl.name.clone());
        }
        if name(f) == "token.ov" {
            let m = c.surface.class("Token").and_then(|k| k.methods.iter().find(|m| m.name == "approve"));
            ensure(m.is_some_and(|m| m.contract.to_string() == "<this,bot>"), || {
                "Token.approve is not <this,bot>".into()
            })?;
        }
        if name(f) == "ballot.ov" {
            let m = c.surface.class("Ballot").and_then(|k| k.methods.iter().find(|m| m.name == "vote"));
            ensure(m.is_some_and(|m| m.contract.to_string() == "<this,this>"), || {
                "Ballot.vote is not <this,this>".into()
            })?;
        }
    }
    for n in ["Storage", "Account", "Customer", "Token", "Purchase", "Ballot", "Auction"] {
        ensure(names.contains(n), || format!("no class {n} in the corpus"))?;
    }
    Ok(format!("{} programs, 0 errors", files.len()))
}

fn negative_corpus() -> Outcome {
    let files = ov_files("corpus/negative");
    let mut covered = BTreeSet::new();
    for f in &files {
        let src = std::fs::read_to_string(f).unwrap();
        let want = src
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("// expect: "))
            .and_then(Code::parse)
            .ok_or_else(|| format!("{}: no expectation line", name(f)))?;
        let got = match ov_core::compile(&src) {
            Err(d) => d.iter().find(|d| d.is_error()).map(|d| d.code),
            Ok(c) => transpile_program(&c.surface, &EmitterConfig::default())
                .err()
                .map(|e| e[0].code),
        };
        ensure(got == Some(want), || format!("{}: expected {want}, got {got:?}", name(f)))?;
        covered.insert(want);
    }
    ensure(files.len() >= 12, || format!("only {} negative programs", files.len()))?;
    for c in [
        Code::Effect,
        Code::Subcontract,
        Code::OwnerCall,
        Code::ForkInAtomic,
        Code::BindExist,
        Code::InvEscape,
        Code::NeedContract,
        Code::TranspileCtx,
    ] {
        ensure(covered.contains(&c), || format!("{c} not covered"))?;
    }
    Ok(format!("{} programs rejected with the expected code", files.len()))
}

fn lemma3() -> Outcome {
    let t = Instant::now();
    let mut runs = 0;
    for f in ov_files("corpus") {
        let c = ov_core::compile(&std::fs::read_to_string(&f).unwrap()).unwrap();
        let seeded = name(&f) == "withdraw_below_zero.ov";
        for seed in 0..16 {
            let r = run_program(
                &c.core,
                RunConfig {
                    seed,
                    debug_checks: true,
                    ..RunConfig::default()
                },
            )
            .map_err(|e| format!("{}: {e}", name(&f)))?;
            runs += 1;
            if seeded {
                ensure(!r.lemma3, || "seeded failure program not flagged".into())?;
            } else {
                ensure(r.lemma3 && r.valid == r.objects, || {
                    format!("{} seed {seed}: valid {} of {}", name(&f), r.valid, r.objects)
                })?;
            }
        }
    }
    within(t, Duration::from_secs(5))?;
    Ok(format!("{runs} runs; seeded failure flagged"))
}

const NODE: &str = r#"
class Node[o] {
    int v;
    Node<this> kid;
    inv v >= 0;

    Node(int x) {
        v = x;
    }

    void set(int x) <this,this> {
        v = x;
    }

    void grow(int x) <this,this> {
        kid = new Node<this>(x);
    }

    void churn(int a, int b, int c) <this,this> {
        v = a;
        kid = new Node<this>(b);
        atomic kid.set(c);
        Node<this> extra = new Node<this>(a + b);
        v = 0 - 1;
    }
}
"#;

fn rollback() -> Outcome {
    let t = Instant::now();
    let c = ov_core::compile(NODE).map_err(|d| format!("{d:?}"))?;
    let mut r = fuzz::rng(0x5eed);
    let mut trials = 0;
    while trials < 1000 {
        let mut m = Machine::new(&c.core, RunConfig::default());
        let mut roots = Vec::new();
        for _ in 0..r.gen_range(1..4) {
            if let Val::Ref(l) = m.construct("Node", vec![Val::Int(r.gen_range(0..50).into())]).unwrap() {
                roots.push(l);
            }
        }
        for &l in &roots {
            if r.gen_bool(0.5) {
                m.transact(l, "grow", vec![Val::Int(r.gen_range(0..9).into())]).unwrap().unwrap();
            }
        }
        for _ in 0..10 {
            let l = roots[r.gen_range(0..roots.len())];
            let args = (0..3).map(|_| Val::Int(r.gen_range(-5..20).into())).collect();
            let before = m.state_hash();
            let res = m.transact(l, "churn", args).map_err(|e| e.to_string())?;
            ensure(res.is_err(), || "invalid final state committed".into())?;
            ensure(m.state_hash() == before, || format!("trial {trials}: state differs after abort"))?;
            trials += 1;
        }
    }
    within(t, Duration::from_secs(10))?;
    Ok(format!("{trials} aborted transactions restored the pre-begin hash"))
}

fn members(t: &impl OwnerMap, c: RtCtx) -> BTreeSet<Loc> {
    let mut out = BTreeSet::new();
    if c == RtCtx::Bot {
        return out;
    }
    for l in 0..t.len() {
        let mut cur = RtCtx::Loc(l);
        loop {
            if c == RtCtx::Top || cur == c {
                out.insert(l);
                break;
            }
            match cur {
                RtCtx::Loc(x) => cur = t.owner(x),
                _ => break,
            }
        }
    }
    out
}

fn interference_oracle() -> Outcome {
    let t = Instant::now();
    let mut r = fuzz::rng(6);
    let mut edges = 0;
    for i in 0..10_000 {
        let n = r.gen_range(1..=20);
        let tree = fuzz::random_tree(&mut r, n);
        let (v1, i1) = fuzz::random_contract(&mut r, n);
        let (v2, i2) = fuzz::random_contract(&mut r, n);
        let meet = |a, b| !members(&tree, a).is_disjoint(&members(&tree, b));
        let want = meet(v1, i2) || meet(v2, i1) || meet(i1, i2);
        let got = interferes((v1, i1), (v2, i2), &tree);
        ensure(got == want, || format!("instance {i}: symbolic {got}, enumeration {want}"))?;
        edges += usize::from(got);
    }
    within(t, Duration::from_secs(10))?;
    Ok(format!("10000 instances agree ({edges} interfering)"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn bank() -> CoreProgram {
    ov_core::compile(&read("corpus/bank.ov")).expect("bank compiles").core
}

fn blocks() -> Vec<Block> {
    let mut r = fuzz::rng(7);
    (0..1000).map(|_| fuzz::random_block(&mut r, 4)).collect()
}

fn serializability(p: &CoreProgram, blocks: &[Block]) -> Outcome {
    let t = Instant::now();
    let mut edge_free = 0;
    for (k, b) in blocks.iter().enumerate() {
        let mb = mine_block(p, b).map_err(|e| format!("block {k}: {e}"))?;
        let n = b.txns.len();
        let identity: Vec<usize> = (0..n).collect();
        let s = serial_execute(p, b, &identity).map_err(|e| e.to_string())?;
        ensure(s.hash == mb.final_state_hash, || format!("block {k}: mined hash differs from serial"))?;
        if mb.edges.is_empty() {
            edge_free += 1;
            for order in permutations(n) {
                let o = serial_execute(p, b, &order).map_err(|e| e.to_string())?;
                ensure(o.hash == s.hash && o.status == s.status, || {
                    format!("block {k}: order {order:?} disagrees")
                })?;
            }
        }
    }
    within(t, Duration::from_secs(60))?;
    Ok(format!("1000 blocks match serial; {edge_free} edge-free blocks agree under all orders"))
}

fn validator(p: &CoreProgram, blocks: &[Block]) -> Outcome {
    for (k, b) in blocks.iter().enumerate() {
        let mut hashes = BTreeSet::new();
        for w in [1, 2, 4] {
            let mut b = b.clone();
            b.workers = w;
            let mb = mine_block(p, &b).map_err(|e| e.to_string())?;
            let r = validate_block(p, &mb, &b).map_err(|e| e.to_string())?;
            ensure(r.accepted, || format!("block {k} rejected with {w} workers"))?;
            hashes.insert(mb.final_state_hash);
        }
        ensure(hashes.len() == 1, || format!("block {k}: hashes differ across worker counts"))?;
    }
    Ok("1000 blocks accepted for workers 1, 2, 4 with identical hashes".into())
}

fn check_counts() -> Outcome {
    for f in ov_files("corpus") {
        let c = ov_core::compile(&std::fs::read_to_string(&f).unwrap()).unwrap();
        let run = |mode| {
            run_program(
                &c.core,
                RunConfig {
                    mode,
                    ..RunConfig::default()
                },
            )
            .unwrap()
        };
        let (a, n) = (run(Mode::Contract), run(Mode::Naive));
        ensure(a.pre_checks + a.post_checks <= n.pre_checks + n.post_checks, || {
            format!("{}: contract {} > naive {}", name(&f), a.pre_checks + a.post_checks, n.pre_checks + n.post_checks)
        })?;
    }
    let mut read_path = Vec::new();
    for (file, class, args, method) in [
        ("corpus/account_read.ov", "Account", vec![Val::Int(5.into())], "balance"),
        ("corpus/bank.ov", "Account", vec![Val::Int(5.into())], "get"),
    ] {
        let c = ov_core::compile(&read(file)).unwrap();
        let mut posts = Vec::new();
        for mode in [Mode::Contract, Mode::Naive] {
            let mut m = Machine::new(
                &c.core,
                RunConfig {
                    mode,
                    ..RunConfig::default()
                },
            );
            let Val::Ref(l) = m.construct(class, args.clone()).unwrap() else {
                return Err(format!("{file}: construction failed"));
            };
            let before = m.counters.post_checks;
            m.transact(l, method, vec![]).unwrap().map_err(|c: FailCode| c.to_string())?;
            posts.push(m.counters.post_checks - before);
        }
        ensure(posts[0] == 0 && posts[1] >= 1, || format!("{method}: revalidations {posts:?}"))?;
        read_path.push(format!("{method} 0 vs {}", posts[1]));
    }
    Ok(format!("contract <= naive on every program; read path {}", read_path.join(", ")))
}

fn progress_fuzz() -> Outcome {
    let t = Instant::now();
    let mut r = fuzz::rng(10);
    let (mut clean, mut failing) = (0, 0);
    for i in 0..10_000 {
        let src = fuzz::random_program(&mut r);
        let c = ov_core::compile(&src).map_err(|d| format!("program {i} does not check: {d:?}\n{src}"))?;
        let cfg = RunConfig {
            seed: i,
            ..RunConfig::default()
        };
        match run_program(&c.core, cfg) {
            Ok(rep) if rep.failures.is_empty() => clean += 1,
            Ok(_) => failing += 1,
            Err(e) => return Err(format!("program {i}: {e}\n{src}")),
        }
    }
    within(t, Duration::from_secs(120))?;
    Ok(format!("10000 programs: {clean} all-values, {failing} with reported failures, 0 stuck"))
}

fn main() {
    let p = bank();
    let bs = blocks();
    let criteria: Vec<Criterion> = vec![
        ("golden transpilation", Box::new(golden_transpilation)),
        ("positive corpus", Box::new(positive_corpus)),
        ("negative corpus", Box::new(negative_corpus)),
        ("valid set equals heap domain", Box::new(lemma3)),
        ("rollback atomicity", Box::new(rollback)),
        ("interference oracle", Box::new(interference_oracle)),
        ("serializability", Box::new(|| serializability(&p, &bs))),
        ("validator agreement", Box::new(|| validator(&p, &bs))),
        ("check-count optimization", Box::new(check_counts)),
        ("progress fuzz", Box::new(progress_fuzz)),
    ];
    let mut failed = 0;
    for (i, (label, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(format!("panic: {:?}", e.downcast_ref::<String>())));
        let ms = t.elapsed().as_millis();
        match res {
            Ok(msg) => println!("PASS {:>2} {label}: {msg} ({ms} ms)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {label}: {msg} ({ms} ms)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
