use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ov_core::blocksched::{mine_block, validate_block, Block, BlockError};
use ov_core::diag::{Code, Diagnostic, Severity};
use ov_core::runtime::{run_program, Mode, RunConfig};
use ov_core::transpile::{bundle_api, transpile_program, EmitterConfig, Style};

const OK: u8 = 0;
const FAILED: u8 = 1;
const IO: u8 = 2;
const FUEL: u8 = 3;

#[derive(Parser)]
#[command(name = "ov", version, about = "Check, run, transpile and simulate OV programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and typecheck programs.
    Check {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Print diagnostics as JSON lines on standard output.
        #[arg(long)]
        json: bool,
    },
    /// Run a program's main block and report the final state.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
        fuel: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check every object in every touched subtree instead of following contracts.
        #[arg(long)]
        naive: bool,
        #[arg(long)]
        json: bool,
    },
    /// Emit Solidity for every class plus the validity API files.
    Transpile {
        file: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StyleArg::Ovvalidity)]
        style: StyleArg,
    },
    /// Mine a block, then validate it by re-execution.
    Simulate {
        program: PathBuf,
        block: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        workers: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Ovvalidity,
    PrePost,
}

fn color() -> bool {
    std::env::var("OV_COLOR").is_ok_and(|v| v == "1")
}

fn print_diag(file: &Path, d: &Diagnostic) {
    let text = format!("{}:{d}", file.display());
    if color() {
        let c = match d.severity {
            Severity::Error => "31",
            Severity::Warning => "33",
        };
        eprintln!("\x1b[{c}m{text}\x1b[0m");
    } else {
        eprintln!("{text}");
    }
}

fn read(path: &Path) -> Result<String, u8> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        IO
    })
}

fn compile(path: &Path) -> Result<ov_core::Compiled, u8> {
    let src = read(path)?;
    match ov_core::compile(&src) {
        Ok(c) => {
            for w in &c.warnings {
                print_diag(path, w);
            }
            Ok(c)
        }
        Err(diags) => {
            for d in &diags {
                print_diag(path, d);
            }
            Err(FAILED)
        }
    }
}

fn check(files: &[PathBuf], json: bool) -> u8 {
    let mut code = OK;
    for f in files {
        let src = match read(f) {
            Ok(s) => s,
            Err(c) => {
                code = code.max(c);
                continue;
            }
        };
        let diags = match ov_core::compile(&src) {
            Ok(c) => c.warnings,
            Err(d) => d,
        };
        for d in &diags {
            if json {
                println!("{}", d.to_json_line());
            } else {
                print_diag(f, d);
            }
        }
        if diags.iter().any(Diagnostic::is_error) {
            code = code.max(FAILED);
        }
    }
    code
}

fn run(file: &Path, fuel: u64, seed: u64, naive: bool, json: bool) -> u8 {
    let c = match compile(file) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let cfg = RunConfig {
        mode: if naive { Mode::Naive } else { Mode::Contract },
        fuel,
        seed,
        ..RunConfig::default()
    };
    match run_program(&c.core, cfg) {
        Ok(r) => {
            if json {
                println!("{}", r.to_json());
            } else {
                println!("lemma3: {}", r.lemma3);
                println!("objects: {} valid: {}", r.objects, r.valid);
                println!(
                    "checks: pre {} post {} invariant evaluations {}",
                    r.pre_checks, r.post_checks, r.invariant_evals
                );
                for f in &r.failures {
                    let how = if f.terminated { "terminated" } else { "aborted" };
                    println!("thread {} {how}: {} ({})", f.thread, f.code, f.code.message());
                }
                for e in &r.events {
                    println!("event {e}");
                }
                println!("state: {}", r.state_hash);
            }
            if r.lemma3 {
                OK
            } else {
                FAILED
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", file.display());
            if e.code == Code::Fuel {
                FUEL
            } else {
                FAILED
            }
        }
    }
}

fn transpile(file: &Path, out: &Path, style: StyleArg) -> u8 {
    let c = match compile(file) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let cfg = EmitterConfig {
        style: match style {
            StyleArg::Ovvalidity => Style::OvValidity,
            StyleArg::PrePost => Style::PrePost,
        },
        ..EmitterConfig::default()
    };
    let files = match transpile_program(&c.surface, &cfg) {
        Ok(f) => f,
        Err(diags) => {
            for d in &diags {
                print_diag(file, d);
            }
            return FAILED;
        }
    };
    let write = |name: &str, text: &str| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| eprintln!("{}: {e}", path.display()))
    };
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("{}: {e}", out.display());
        return IO;
    }
    for (name, text) in files.iter().cloned().chain(bundle_api(&cfg)) {
        if write(&name, &text).is_err() {
            return IO;
        }
        println!("{}", out.join(&name).display());
    }
    OK
}

fn block_error(path: &Path, e: &BlockError) -> u8 {
    eprintln!("{}: {e}", path.display());
    match e {
        BlockError::Schema(_) => IO,
        BlockError::Diag { .. } => FAILED,
    }
}

fn simulate(program: &Path, block: &Path, workers: Option<u64>, seed: Option<u64>) -> u8 {
    let c = match compile(program) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let text = match read(block) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let mut b = match Block::from_json(&text) {
        Ok(b) => b,
        Err(e) => return block_error(block, &e),
    };
    if let Some(w) = workers {
        b.workers = w as usize;
    }
    if let Some(s) = seed {
        b.seed = s;
    }
    let mined = match mine_block(&c.core, &b) {
        Ok(m) => m,
        Err(e) => return block_error(block, &e),
    };
    println!("{}", mined.to_json());
    match validate_block(&c.core, &mined, &b) {
        Ok(r) => {
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
            if r.accepted {
                OK
            } else {
                FAILED
            }
        }
        Err(e) => block_error(block, &e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check { files, json } => check(&files, json),
        Command::Run {
            file,
            fuel,
            seed,
            naive,
            json,
        } => run(&file, fuel, seed, naive, json),
        Command::Transpile { file, out, style } => transpile(&file, &out, style),
        Command::Simulate {
            program,
            block,
            workers,
            seed,
        } => simulate(&program, &block, workers, seed),
    };
    ExitCode::from(code)
}
