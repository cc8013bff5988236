use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use gossip_poison::data::Corpus;
use gossip_poison::plan::{execute_plan, parse_plan, preset, ExperimentPlan, PRESETS};
use gossip_poison::Error;

/// Runs gossip learning poisoning experiments described by a plan file or a
/// preset grid, writing one CSV and manifest per cell plus a summary.
#[derive(Parser, Debug)]
#[command(name = "gossip-poison", version)]
struct Args {
    /// Plan file (flat key=value, `[a,b]` lists sweep a key).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    plan: Option<PathBuf>,

    /// Built-in grid: paper-fig2, paper-fig2-baseline, paper-fig3, paper-fig4, paper-fig5.
    #[arg(long)]
    preset: Option<String>,

    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "GOSSIP_POISON_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,

    /// Output directory; overrides the plan's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Cells and replicates run concurrently on this many threads.
    #[arg(long)]
    workers: Option<usize>,

    /// Master seed; overrides the plan's `seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Print the cells and exit without running them.
    #[arg(long)]
    list: bool,
}

const CONFIG_ERROR: u8 = 2;

fn load_plan(args: &Args) -> Result<ExperimentPlan, Error> {
    let plan = match (&args.plan, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_plan(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config(format!("pass --plan or one of --preset {}", PRESETS.join("|")))),
    };
    Ok(match args.seed {
        Some(seed) => plan.with_seed(seed),
        None => plan,
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let plan = match load_plan(&args) {
        Ok(plan) => plan,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let cells = match plan.cells() {
        Ok(cells) => cells,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if args.list {
        for cell in &cells {
            println!("{} rounds={} replicates={}", cell.name, cell.config.rounds, plan.replicates);
        }
        return ExitCode::SUCCESS;
    }
    let out = args.out.clone().or_else(|| plan.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(CONFIG_ERROR);
    }
    let corpus = match Corpus::load(&args.data_dir) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot load MNIST from {}: {e}", args.data_dir.display());
            eprintln!("hint: set --data-dir or GOSSIP_POISON_DATA_DIR");
            return ExitCode::from(CONFIG_ERROR);
        }
    };

    eprintln!("{} cells x {} replicates on {workers} workers -> {}", cells.len(), plan.replicates, out.display());
    let started = Instant::now();
    let report = execute_plan(&plan, &corpus, &out, workers, |o| match &o.result {
        Ok(r) => eprintln!(
            "[{:>7.1}s] {} test={:.4} backdoor={:.4}",
            started.elapsed().as_secs_f64(),
            o.cell.name,
            r.mean_test_acc,
            r.mean_backdoor_acc
        ),
        Err(e) => eprintln!("[{:>7.1}s] {} FAILED: {e}", started.elapsed().as_secs_f64(), o.cell.name),
    });
    match report {
        Ok(report) => {
            let failed = report.failed();
            eprintln!("summary: {}", report.summary_path.display());
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", report.outcomes.len());
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
