use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use codeset_core::corpus::{read_catalog, write_diagnoses_csv, write_noteevents_csv};
use codeset_core::harness::{
    compare_runs, evaluate, featurize, parse_key_values, prepare, report, run_pipeline, synthesize, train,
    ExperimentConfig, RunRecord, SynthTask,
};
use codeset_core::metrics::oracle::run_suite;
use codeset_core::neuralcore::gradcheck::standard_suite;

#[derive(Parser)]
#[command(name = "codeset-bench", version, about = "Multi-label ICD-9 coding experiments")]
struct Cli {
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `training.seed`; also seeds synth, gradcheck and oracle.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Keyword,
    Order,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as NOTEEVENTS.csv and DIAGNOSES_ICD.csv.
    Synth {
        #[arg(long, value_enum, default_value = "keyword")]
        task: TaskArg,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Build the labeled, split dataset.
    Prepare,
    /// Vectorize the dataset.
    Featurize,
    /// Fit the configured model.
    Train,
    /// Score a trained run on its test split.
    Evaluate {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Write metrics JSON, PR curves and the summary for a run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Tabulate several runs, best test F1 first.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer.
    Gradcheck,
    /// Metrics against brute-force definitions.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// All stages: prepare, featurize, train, evaluate, report.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut kv = parse_key_values(&text)?;
    if let Some(s) = cli.seed {
        kv.insert("training.seed".into(), s.to_string());
    }
    Ok(ExperimentConfig::from_map(kv)?)
}

fn read_record(run: &Path) -> Result<RunRecord> {
    let p = run.join("record.json");
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn execute(cli: &Cli) -> Result<bool> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Synth { task, n, k } => {
            let task = match task {
                TaskArg::Keyword => SynthTask::Keyword,
                TaskArg::Order => SynthTask::Order,
            };
            let c = synthesize(task, *n, *k, cli.seed.unwrap_or(1))?;
            fs::create_dir_all(out)?;
            write_noteevents_csv(&c.notes, BufWriter::new(File::create(out.join("NOTEEVENTS.csv"))?))?;
            write_diagnoses_csv(&c.diagnoses, BufWriter::new(File::create(out.join("DIAGNOSES_ICD.csv"))?))?;
            println!("{} notes, {} diagnoses written to {}", c.notes.len(), c.diagnoses.len(), out.display());
        }
        Command::Prepare => {
            let cfg = load_config(cli)?;
            let ds = prepare(&cfg, out)?;
            let (m, catalog) = read_catalog(&ds.dir)?;
            println!("dataset {}{}", ds.dir.display(), if ds.cached { " (cached)" } else { "" });
            println!("coverage {:.4} ({} of {} admissions)", m.coverage, m.kept, m.discharge_admissions);
            println!("split {} / {} / {}", m.n_train, m.n_val, m.n_test);
            for (label, count) in &catalog.labels {
                println!("{label}\t{count}");
            }
        }
        Command::Featurize => {
            let cfg = load_config(cli)?;
            let ds = prepare(&cfg, out)?;
            let f = featurize(&cfg, out, &ds.dir)?;
            println!("features {}{}", f.dir.display(), if f.cached { " (cached)" } else { "" });
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let ds = prepare(&cfg, out)?;
            let f = featurize(&cfg, out, &ds.dir)?;
            println!("{}", train(&cfg, out, &ds.dir, &f.dir)?.display());
        }
        Command::Evaluate { run } => {
            let dir = match run {
                Some(r) => r.clone(),
                None => out.join("runs").join(&load_config(cli)?.config_hash()[..16]),
            };
            let rep = evaluate(&dir)?;
            println!("test f1 {:.4}, macro auc {:.4}", rep.f1, rep.macro_auc);
        }
        Command::Report { run } => {
            let rec = report(run)?;
            print!("{}", rec.summary_text());
        }
        Command::Compare { runs, csv } => {
            let records = runs.iter().map(|r| read_record(r)).collect::<Result<Vec<_>>>()?;
            let table = compare_runs(&records)?;
            if let Some(p) = csv {
                fs::write(p, table.to_csv())?;
            }
            print!("{}", table.to_text());
        }
        Command::Gradcheck => {
            let results = standard_suite(cli.seed.unwrap_or(0))?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:<16} max rel error {:.3e} (threshold {:.0e}, {} of {} coords) {}",
                    r.case.name(),
                    r.report.max_rel_error,
                    r.case.threshold(),
                    r.report.checked,
                    r.report.total,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
        Command::Oracle { trials } => {
            let s = run_suite(cli.seed.unwrap_or(0), *trials, 64, 10)?;
            for (name, d) in &s.max_diff {
                println!("{name:<14} max |diff| {d:.3e}");
            }
            println!(
                "{} trials in {:.2?}, undefined-value mismatches {}",
                s.trials, s.elapsed, s.nan_mismatches
            );
            return Ok(s.passed(1e-12));
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let o = run_pipeline(&cfg, out)?;
            for s in &o.cache_hits {
                info!("{s}: cached");
            }
            print!("{}", o.record.summary_text());
            println!("run directory {}", o.run_dir.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
