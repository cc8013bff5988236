//! Declarative experiment plans: parsing, preset grids and execution.
//!
//! A plan is flat `key=value` text. Pairs are separated by whitespace or
//! newlines, `#` starts a comment, and a bracketed list such as
//! `S=[1,4,8,16,32]` sweeps that key. Every combination of the swept values
//! is one cell.
//!
//! ```
//! use gossip_poison::plan::parse_plan;
//!
//! let plan = parse_plan("n=100 f=30% S=[8,16] topology=erdos_renyi churn=1.0").unwrap();
//! let names: Vec<String> = plan.cells().unwrap().into_iter().map(|c| c.name).collect();
//! assert_eq!(names, ["erdos_renyi_n100_f30_S8_random_1.0", "erdos_renyi_n100_f30_S16_random_1.0"]);
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::attack::PlacementStrategy;
use crate::data::Corpus;
use crate::engine::{default_schedule, metrics_csv, run_replicated, AggregateRecord, ReplicatedOutput, Seeds, SimConfig};
use crate::error::{Error, Result};
use crate::topology::{Family, TopologySpec};

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = ["paper-fig2", "paper-fig2-baseline", "paper-fig3", "paper-fig4", "paper-fig5"];

const S_SWEEP: &str = "S=[1,4,8,16,32]";
const FIG2_TOPOLOGIES: &str = "topology=[erdos_renyi,fanout,random_regular,watts_strogatz]";

/// Byzantine count, either absolute or a percentage of `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ByzantineCount {
    Absolute(usize),
    Percent(f64),
}

impl ByzantineCount {
    /// Resolves the count for `n` nodes, rounding percentages to the nearest
    /// integer.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            ByzantineCount::Absolute(f) => f,
            ByzantineCount::Percent(pct) => (pct * n as f64 / 100.0).round() as usize,
        }
    }
}

impl FromStr for ByzantineCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.strip_suffix('%') {
            Some(pct) => match pct.parse::<f64>() {
                Ok(v) if (0.0..=100.0).contains(&v) => Ok(ByzantineCount::Percent(v)),
                _ => Err(format!("invalid percentage {s:?}")),
            },
            None => s.parse().map(ByzantineCount::Absolute).map_err(|_| format!("invalid count {s:?}")),
        }
    }
}

/// Values of the keys that can be swept. Unswept keys hold one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweeps {
    pub n: Vec<usize>,
    pub f: Vec<ByzantineCount>,
    pub partitions: Vec<usize>,
    pub family: Vec<Family>,
    pub strategy: Vec<PlacementStrategy>,
    pub churn: Vec<f64>,
}

impl Sweeps {
    pub fn cell_count(&self) -> usize {
        self.n.len() * self.f.len() * self.partitions.len() * self.family.len() * self.strategy.len() * self.churn.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    /// Settings shared by every cell; swept fields are overwritten per cell.
    pub base: SimConfig,
    pub sweeps: Sweeps,
    pub replicates: usize,
    pub seed: u64,
    /// Explicit schedule; `None` picks [`default_schedule`] from each cell's
    /// churn level.
    pub rounds: Option<usize>,
    pub eval_every: Option<usize>,
    /// Topology overrides applied on top of each family's standard settings.
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

/// One point of the plan's cross-product.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// `<family>_n<n>_f<f>_S<S>_<strategy>_<churn>`, unique within a plan.
    pub name: String,
    pub config: SimConfig,
}

pub fn cell_name(config: &SimConfig) -> String {
    format!(
        "{}_n{}_f{}_S{}_{}_{:?}",
        config.topology.family, config.n, config.f, config.partitions, config.strategy, config.churn_online_prob
    )
}

impl ExperimentPlan {
    /// Replaces the master seed of every cell.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.base.seeds = Seeds::from_master(seed);
        self
    }

    /// Expands the sweeps into validated cells, in a fixed order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let s = &self.sweeps;
        let mut cells = Vec::with_capacity(s.cell_count());
        let mut seen = BTreeSet::new();
        for &family in &s.family {
            for &n in &s.n {
                for &f in &s.f {
                    for &partitions in &s.partitions {
                        for &strategy in &s.strategy {
                            for &churn in &s.churn {
                                let mut config = self.base.clone();
                                config.n = n;
                                config.f = f.resolve(n);
                                config.partitions = partitions;
                                config.strategy = strategy;
                                config.churn_online_prob = churn;
                                config.topology = TopologySpec::standard(family);
                                if let Some(k) = self.k {
                                    config.topology.k = k;
                                }
                                if self.p.is_some() {
                                    config.topology.p = self.p;
                                }
                                if let Some(alpha) = self.alpha {
                                    config.topology.alpha = alpha;
                                }
                                let (rounds, eval_every) = default_schedule(churn);
                                config.rounds = self.rounds.unwrap_or(rounds);
                                config.eval_every = self.eval_every.unwrap_or(eval_every);
                                config.validate()?;
                                let name = cell_name(&config);
                                if !seen.insert(name.clone()) {
                                    return Err(Error::Config(format!("two cells map to the same output name {name}")));
                                }
                                cells.push(Cell { name, config });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, message: message.into() }
}

/// Splits plan text into `(line, key, value)` triples. List values keep their
/// brackets; whitespace inside brackets is dropped.
fn tokenize(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut current = String::new();
        let mut depth = 0usize;
        for ch in content.chars() {
            match ch {
                '[' => {
                    depth += 1;
                    current.push(ch);
                }
                ']' => {
                    if depth == 0 {
                        return Err(syntax(line, "unmatched ']'"));
                    }
                    depth -= 1;
                    current.push(ch);
                }
                c if c.is_whitespace() => {
                    if depth == 0 && !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                }
                c => current.push(c),
            }
        }
        if depth > 0 {
            return Err(syntax(line, "unterminated '['"));
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        for token in tokens {
            let Some((key, value)) = token.split_once('=') else {
                return Err(syntax(line, format!("expected key=value, found {token:?}")));
            };
            if key.is_empty() || value.is_empty() {
                return Err(syntax(line, format!("empty key or value in {token:?}")));
            }
            pairs.push((line, key.to_string(), value.to_string()));
        }
    }
    Ok(pairs)
}

fn list_items(line: usize, value: &str) -> Result<Vec<String>> {
    let Some(inner) = value.strip_prefix('[') else {
        return Ok(vec![value.to_string()]);
    };
    let Some(inner) = inner.strip_suffix(']') else {
        return Err(syntax(line, format!("malformed list {value:?}")));
    };
    if inner.contains(['[', ']']) {
        return Err(syntax(line, "nested lists are not supported"));
    }
    let items: Vec<String> = inner.split(',').map(|s| s.to_string()).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(syntax(line, format!("empty list element in {value:?}")));
    }
    Ok(items)
}

fn parse_list<T, E: std::fmt::Display>(
    line: usize,
    key: &str,
    value: &str,
    parse: impl Fn(&str) -> std::result::Result<T, E>,
) -> Result<Vec<T>> {
    list_items(line, value)?
        .iter()
        .map(|item| parse(item).map_err(|e| syntax(line, format!("{key}: {e}"))))
        .collect()
}

fn parse_one<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if value.starts_with('[') {
        return Err(syntax(line, format!("{key} cannot be swept")));
    }
    value.parse().map_err(|e| syntax(line, format!("{key}: {e}")))
}

/// Parses and validates a plan.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let mut base = SimConfig::new(100, 0, 8, Family::ErdosRenyi);
    let mut sweeps = Sweeps {
        n: vec![100],
        f: vec![ByzantineCount::Absolute(0)],
        partitions: vec![8],
        family: vec![Family::ErdosRenyi],
        strategy: vec![PlacementStrategy::Random],
        churn: vec![1.0],
    };
    let mut plan = ExperimentPlan {
        base: base.clone(),
        sweeps: sweeps.clone(),
        replicates: 1,
        seed: 0,
        rounds: None,
        eval_every: None,
        k: None,
        p: None,
        alpha: None,
        output_dir: None,
    };
    let mut seen = BTreeSet::new();
    for (line, key, value) in tokenize(text)? {
        if !seen.insert(key.clone()) {
            return Err(syntax(line, format!("duplicate key {key}")));
        }
        let v = value.as_str();
        match key.as_str() {
            "n" => sweeps.n = parse_list(line, &key, v, str::parse::<usize>)?,
            "f" => sweeps.f = parse_list(line, &key, v, str::parse::<ByzantineCount>)?,
            "S" => sweeps.partitions = parse_list(line, &key, v, str::parse::<usize>)?,
            "topology" => sweeps.family = parse_list(line, &key, v, str::parse::<Family>)?,
            "strategy" => sweeps.strategy = parse_list(line, &key, v, str::parse::<PlacementStrategy>)?,
            "churn" => sweeps.churn = parse_list(line, &key, v, str::parse::<f64>)?,
            "replicates" => plan.replicates = parse_one(line, &key, v)?,
            "seed" => plan.seed = parse_one(line, &key, v)?,
            "rounds" => plan.rounds = Some(parse_one(line, &key, v)?),
            "eval_every" => plan.eval_every = Some(parse_one(line, &key, v)?),
            "k" => plan.k = Some(parse_one(line, &key, v)?),
            "p" => plan.p = Some(parse_one(line, &key, v)?),
            "alpha" => plan.alpha = Some(parse_one(line, &key, v)?),
            "output_dir" => plan.output_dir = Some(PathBuf::from(v)),
            "shard_size" => base.shard_size = parse_one(line, &key, v)?,
            "eta" => base.hyper.eta = parse_one(line, &key, v)?,
            "lambda" => base.hyper.lambda = parse_one(line, &key, v)?,
            "batch_size" => base.hyper.batch_size = parse_one(line, &key, v)?,
            "token_cap" => base.tokens.cap = parse_one(line, &key, v)?,
            "token_refill" => base.tokens.refill = parse_one(line, &key, v)?,
            "reactive_threshold" => base.tokens.reactive_threshold = parse_one(line, &key, v)?,
            "train_on_tick" => base.train_on_tick = parse_one(line, &key, v)?,
            "byzantine_always_online" => base.byzantine_always_online = parse_one(line, &key, v)?,
            "poison_fraction" => base.backdoor.fraction = parse_one(line, &key, v)?,
            "target_label" => base.backdoor.target_label = parse_one(line, &key, v)?,
            _ => return Err(syntax(line, format!("unknown key {key}"))),
        }
    }
    if plan.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    plan.base = base;
    plan.sweeps = sweeps;
    let plan = plan.clone().with_seed(plan.seed);
    plan.cells()?;
    Ok(plan)
}

/// Plan text of a named preset grid.
pub fn preset_text(name: &str) -> Result<String> {
    let text = match name {
        "paper-fig2" => format!("{FIG2_TOPOLOGIES} n=[100,150] f=30% {S_SWEEP} strategy=random churn=1.0 replicates=10"),
        "paper-fig2-baseline" => {
            format!("{FIG2_TOPOLOGIES} n=[100,150] f=0 {S_SWEEP} strategy=random churn=1.0 replicates=10")
        }
        "paper-fig3" => {
            format!("topology=[watts_strogatz,zipf] n=150 f=45 {S_SWEEP} strategy=[random,classical] churn=1.0 replicates=10")
        }
        "paper-fig4" => {
            "topology=zipf n=150 f=[0,5,15,20,25,40,45] S=8 strategy=[random,classical] churn=0.2 replicates=10".to_string()
        }
        "paper-fig5" => format!("{FIG2_TOPOLOGIES} n=[100,150] f=30% {S_SWEEP} strategy=random churn=0.2 replicates=10"),
        _ => {
            return Err(Error::Config(format!("unknown preset {name:?} (known: {})", PRESETS.join(", "))));
        }
    };
    Ok(text)
}

pub fn preset(name: &str) -> Result<ExperimentPlan> {
    parse_plan(&preset_text(name)?)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Flat key=value description of a finished cell.
pub fn manifest_text(cell: &Cell, plan: &ExperimentPlan, output: &ReplicatedOutput) -> String {
    let c = &cell.config;
    let mut m = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(m, "{k}={v}");
    };
    kv("software", &concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")));
    kv("cell", &cell.name);
    kv("family", &c.topology.family);
    kv("topology", &c.topology.describe());
    kv("n", &c.n);
    kv("f", &c.f);
    kv("S", &c.partitions);
    kv("strategy", &c.strategy);
    kv("churn", &format!("{:?}", c.churn_online_prob));
    kv("rounds", &c.rounds);
    kv("eval_every", &c.eval_every);
    kv("replicates", &plan.replicates);
    kv("shard_size", &c.shard_size);
    kv("eta", &c.hyper.eta);
    kv("lambda", &c.hyper.lambda);
    kv("batch_size", &c.hyper.batch_size);
    kv("token_cap", &c.tokens.cap);
    kv("token_refill", &c.tokens.refill);
    kv("reactive_threshold", &c.tokens.reactive_threshold);
    kv("train_on_tick", &c.train_on_tick);
    kv("byzantine_always_online", &c.byzantine_always_online);
    kv("poison_fraction", &c.backdoor.fraction);
    kv("target_label", &c.backdoor.target_label);
    kv("master_seed", &plan.seed);
    for (r, run) in output.runs.iter().enumerate() {
        let rm = &run.manifest;
        let s = rm.seeds;
        kv(
            &format!("replicate.{r}.seeds"),
            &format!(
                "graph:{} shard:{} poison:{} eval:{} protocol:{} churn:{}",
                s.graph, s.shard, s.poison, s.eval, s.protocol, s.churn
            ),
        );
        let ids: Vec<String> = rm.byzantine.iter().map(|v| v.to_string()).collect();
        kv(&format!("replicate.{r}.byzantine"), &ids.join(","));
        kv(&format!("replicate.{r}.graph_sha256"), &rm.graph_fingerprint);
        kv(&format!("replicate.{r}.graph_connected"), &rm.graph_connected);
        kv(&format!("replicate.{r}.clean_eval_len"), &rm.clean_eval_len);
        kv(&format!("replicate.{r}.backdoor_eval_len"), &rm.backdoor_eval_len);
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    /// Last aggregated record, or the failure message.
    pub result: std::result::Result<AggregateRecord, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanReport {
    pub outcomes: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

impl PlanReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str =
    "cell,family,n,f,S,strategy,churn,status,round,mean_test_acc,std_test_acc,mean_backdoor_acc,std_backdoor_acc,messages_sent,error";

pub fn summary_text(outcomes: &[CellOutcome]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for o in outcomes {
        let c = &o.cell.config;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{:?},",
            o.cell.name, c.topology.family, c.n, c.f, c.partitions, c.strategy, c.churn_online_prob
        );
        match &o.result {
            Ok(r) => {
                let _ = writeln!(out, "ok,{},", crate::engine::csv_row(r));
            }
            Err(e) => {
                let clean: String = e.chars().map(|ch| if ch == ',' || ch == '\n' { ' ' } else { ch }).collect();
                let _ = writeln!(out, "failed,,,,,,,{clean}");
            }
        }
    }
    out
}

fn execute_cell(cell: &Cell, plan: &ExperimentPlan, corpus: &Corpus, out_dir: &Path) -> Result<AggregateRecord> {
    let output = run_replicated(&cell.config, plan.replicates, corpus)?;
    let last = *output.series.last().ok_or(Error::Empty)?;
    write_atomic(&out_dir.join(format!("{}.csv", cell.name)), metrics_csv(&output.series).as_bytes())?;
    write_atomic(&out_dir.join(format!("{}.manifest", cell.name)), manifest_text(cell, plan, &output).as_bytes())?;
    Ok(last)
}

/// Runs every cell on a pool of `workers` threads. A failing cell is
/// recorded and the remaining cells still run. `progress` is called as each
/// cell finishes.
pub fn execute_plan(
    plan: &ExperimentPlan,
    corpus: &Corpus,
    out_dir: &Path,
    workers: usize,
    progress: impl Fn(&CellOutcome) + Sync,
) -> Result<PlanReport> {
    let cells = plan.cells()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .into_par_iter()
            .map(|cell| {
                let result = execute_cell(&cell, plan, corpus, out_dir).map_err(|e| e.to_string());
                let outcome = CellOutcome { cell, result };
                progress(&outcome);
                outcome
            })
            .collect()
    });
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, summary_text(&outcomes).as_bytes())?;
    Ok(PlanReport { outcomes, summary_path })
}
