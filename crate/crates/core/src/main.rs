use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use lplab::grid::GridSpec;
use lplab::harness::config::{ExperimentConfig, ExperimentKind};
use lplab::harness::corpus::{generate_corpus, CorpusSpec, Recipe};
use lplab::harness::experiments::run_experiment;
use lplab::harness::preflight::verify_invariants;
use lplab::harness::report::{emit_report, ManifestEntry};
use lplab::norms::digest_hex;
use lplab::Result;

#[derive(Parser)]
#[command(name = "lp-lab", version, about = "Square-function and weighted-norm experiments on the dyadic torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report under --out.
    Run {
        #[arg(long)]
        kind: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suites and print one line per check.
    VerifyInvariants,
    /// Generate a corpus and print one JSON line per fixture.
    Corpus {
        #[arg(long)]
        recipe: Recipe,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Per-axis log2 resolutions, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "8")]
        log_res: Vec<u32>,
        /// Vector shape, comma separated; empty for scalar fixtures.
        #[arg(long, value_delimiter = ',')]
        vshape: Vec<usize>,
        /// Also write mode lists and binary samples here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(kind: ExperimentKind, config: PathBuf, seed: u64, out: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    let report = run_experiment(kind, &cfg, seed)?;
    let manifest = emit_report(&report, &out)?;
    let s = &report.summary;
    println!("kind: {}", kind.name());
    println!("records: {}", s.records);
    match s.max_ratio {
        Some(m) => println!("max ratio: {m:.6e}"),
        None => println!("max ratio: unbounded"),
    }
    if let Some(v) = &s.stability {
        println!(
            "refinement: {:.6e} -> {:.6e} (growth {:+.2}%, {})",
            v.base_max,
            v.refined_max,
            100.0 * v.growth,
            if v.stable { "stable" } else { "unstable" }
        );
    }
    for (k, v) in &s.checks {
        println!("{k}: {v}");
    }
    for f in &manifest.files {
        println!("wrote {} ({} bytes)", out.join(&f.name).display(), f.bytes);
    }
    Ok(())
}

fn corpus(
    recipe: Recipe,
    seed: u64,
    count: usize,
    log_res: Vec<u32>,
    vshape: Vec<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let d = log_res.len();
    let grid = GridSpec::new(log_res, vec![1; d])?;
    let spec = CorpusSpec { recipe, count, vshape, max_freq_log2: None };
    let fixtures = generate_corpus(&spec, &grid, seed)?;
    let mut entries = Vec::new();
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    for fx in &fixtures {
        let f = fx.sample(&grid)?;
        let bytes = f.to_bytes();
        let digest = digest_hex(&bytes);
        let modes: usize = fx.components.iter().map(Vec::len).sum();
        let line = json!({
            "id": fx.id, "recipe": recipe, "modes": modes, "max_frequency": fx.max_frequency(),
            "sup_norm": f.sup_norm(), "sha256": digest,
        });
        println!("{line}");
        if let Some(dir) = &out {
            let name = format!("fixture-{:03}.bin", fx.id);
            fs::write(dir.join(&name), &bytes)?;
            entries.push(ManifestEntry { name, bytes: bytes.len(), sha256: digest });
        }
    }
    if let Some(dir) = &out {
        fs::write(dir.join("corpus.json"), serde_json::to_string(&fixtures)? + "\n")?;
        let manifest = json!({ "recipe": recipe, "seed": seed, "grid": grid, "files": entries });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { kind, config, seed, out } => run(kind, config, seed, out),
        Command::VerifyInvariants => {
            let outcomes = verify_invariants();
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                println!("{} {}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.module, o.name, o.detail);
            }
            if failed > 0 {
                eprintln!("{failed} invariant check(s) failed");
                return ExitCode::FAILURE;
            }
            Ok(())
        }
        Command::Corpus { recipe, seed, count, log_res, vshape, out } => corpus(recipe, seed, count, log_res, vshape, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
