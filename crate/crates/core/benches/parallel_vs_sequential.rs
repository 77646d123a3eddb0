use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ov_core::blocksched::{mine_block_with, Block, Deploy, Exec, Txn};
use serde_json::json;

const BANK: &str = include_str!("../corpus/bank.ov");

/// `accounts` independent accounts with `per` deposits each.
fn block(accounts: usize, per: usize) -> Block {
    let deploy = (0..accounts)
        .map(|i| Deploy {
            id: format!("a{i}"),
            class: "Account".into(),
            args: vec![json!(100)],
        })
        .collect();
    let mut txns = Vec::new();
    for k in 0..per {
        for i in 0..accounts {
            txns.push(Txn {
                target: format!("a{i}"),
                method: if k % 2 == 0 { "deposit" } else { "withdraw" }.into(),
                args: vec![json!(1)],
            });
        }
    }
    Block {
        deploy,
        txns,
        workers: 4,
        seed: 0,
    }
}

fn mining(c: &mut Criterion) {
    let p = ov_core::compile(BANK).expect("bank compiles").core;
    let mut g = c.benchmark_group("mine_block");
    for accounts in [16, 64] {
        let b = block(accounts, 4);
        for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            g.bench_with_input(BenchmarkId::new(label, accounts), &b, |bench, b| {
                bench.iter(|| mine_block_with(&p, b, exec).expect("mines"))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, mining);
criterion_main!(benches);
