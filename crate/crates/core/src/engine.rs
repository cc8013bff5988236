//! Round-based simulation loop and replicated-run aggregation.
//!
//! Each round: sample who is online, deliver last round's messages to the
//! online recipients (others drop them), tick every online node, and buffer
//! everything sent for the next round. Honest nodes are evaluated every
//! `eval_every` rounds, offline or not.

use rand::Rng;
use rayon::prelude::*;

use crate::attack::{select_byzantine, ByzantineSet, PlacementStrategy};
use crate::data::{shard_iid, Backdoor, Corpus, Dataset};
use crate::error::{Error, Result};
use crate::model::{accuracy, Hyperparams};
use crate::protocol::{init_node, NodeState, OutboundSend, ProtocolConfig, TokenPolicy};
use crate::rng::{mix, rng_from_seed, SimRng};
use crate::topology::{is_connected, Family, TopologySpec};

/// Seeds of the independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Seeds {
    pub graph: u64,
    pub shard: u64,
    pub poison: u64,
    pub eval: u64,
    pub protocol: u64,
    pub churn: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            graph: mix(master, 1),
            shard: mix(master, 2),
            poison: mix(master, 3),
            eval: mix(master, 4),
            protocol: mix(master, 5),
            churn: mix(master, 6),
        }
    }

    /// Seeds for replicate `r`. Replicate 0 keeps the seeds as they are and
    /// the evaluation seed is shared by all replicates.
    pub fn for_replicate(&self, r: usize) -> Self {
        if r == 0 {
            return *self;
        }
        let r = r as u64;
        Self {
            graph: mix(self.graph, r),
            shard: mix(self.shard, r),
            poison: mix(self.poison, r),
            eval: self.eval,
            protocol: mix(self.protocol, r),
            churn: mix(self.churn, r),
        }
    }
}

/// (rounds, eval_every) used when a configuration does not set them.
pub fn default_schedule(churn_online_prob: f64) -> (usize, usize) {
    if churn_online_prob >= 1.0 {
        (1500, 25)
    } else {
        (6000, 100)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub f: usize,
    pub partitions: usize,
    pub topology: TopologySpec,
    pub strategy: PlacementStrategy,
    /// Probability that a node is online in a given round; 1.0 is churn-free.
    pub churn_online_prob: f64,
    pub rounds: usize,
    pub eval_every: usize,
    pub shard_size: usize,
    pub hyper: Hyperparams,
    pub tokens: TokenPolicy,
    pub train_on_tick: bool,
    /// Keep Byzantine nodes online in every round regardless of churn.
    pub byzantine_always_online: bool,
    pub backdoor: Backdoor,
    pub seeds: Seeds,
}

impl SimConfig {
    /// A churn-free configuration with the standard topology parameters and
    /// default schedule.
    pub fn new(n: usize, f: usize, partitions: usize, family: Family) -> Self {
        let (rounds, eval_every) = default_schedule(1.0);
        Self {
            n,
            f,
            partitions,
            topology: TopologySpec::standard(family),
            strategy: PlacementStrategy::Random,
            churn_online_prob: 1.0,
            rounds,
            eval_every,
            shard_size: 250,
            hyper: Hyperparams::default(),
            tokens: TokenPolicy::default(),
            train_on_tick: false,
            byzantine_always_online: false,
            backdoor: Backdoor::default(),
            seeds: Seeds::from_master(0),
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            partitions: self.partitions,
            tokens: self.tokens,
            hyper: self.hyper,
            train_on_tick: self.train_on_tick,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f > self.n {
            return Err(Error::TooManyByzantine { f: self.f, n: self.n });
        }
        if self.f == self.n {
            return Err(Error::NoHonestNodes);
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.shard_size == 0 {
            return Err(Error::Config("shard_size must be at least 1".into()));
        }
        if !(self.churn_online_prob > 0.0 && self.churn_online_prob <= 1.0) {
            return Err(Error::Config(format!(
                "churn online probability must lie in (0, 1], got {}",
                self.churn_online_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.backdoor.fraction) {
            return Err(Error::Config(format!("poison fraction {} outside [0, 1]", self.backdoor.fraction)));
        }
        if self.backdoor.target_label >= 10 {
            return Err(Error::Config(format!("target label {} is not a digit", self.backdoor.target_label)));
        }
        self.topology.validate(self.n)?;
        self.protocol().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    /// Mean accuracy of honest nodes on the clean evaluation set.
    pub mean_test_acc: f64,
    /// Mean accuracy of honest nodes on the backdoor set (attack success rate).
    pub mean_backdoor_acc: f64,
    /// Messages emitted so far, including ones later dropped.
    pub messages_sent: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub seeds: Seeds,
    pub byzantine: Vec<usize>,
    pub topology: String,
    pub graph_fingerprint: String,
    pub graph_connected: bool,
    pub clean_eval_len: usize,
    pub backdoor_eval_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub manifest: RunManifest,
    /// Online node count per round.
    pub online_per_round: Vec<usize>,
    /// Rounds each node spent online.
    pub online_per_node: Vec<usize>,
}

/// Mean accuracy over honest nodes on both evaluation sets.
pub fn evaluate_honest(nodes: &[NodeState], clean: &Dataset, backdoor: &Dataset) -> Result<(f64, f64)> {
    let honest: Vec<&NodeState> = nodes.iter().filter(|n| !n.byzantine).collect();
    if honest.is_empty() {
        return Err(Error::NoHonestNodes);
    }
    let scores: Vec<(f64, f64)> = honest
        .par_iter()
        .map(|n| Ok((accuracy(&n.params, clean)?, accuracy(&n.params, backdoor)?)))
        .collect::<Result<_>>()?;
    let count = scores.len() as f64;
    let test = scores.iter().map(|s| s.0).sum::<f64>() / count;
    let bd = scores.iter().map(|s| s.1).sum::<f64>() / count;
    Ok((test, bd))
}

/// Everything a run needs before the first round.
pub struct Setup {
    pub nodes: Vec<NodeState>,
    pub neighbors: Vec<Vec<usize>>,
    pub byzantine: ByzantineSet,
    pub clean_eval: Dataset,
    pub backdoor_eval: Dataset,
    pub manifest: RunManifest,
}

pub fn setup(config: &SimConfig, corpus: &Corpus) -> Result<Setup> {
    config.validate()?;
    let seeds = config.seeds;
    let graph = config.topology.generate(config.n, &mut rng_from_seed(seeds.graph))?;
    let connected = is_connected(&graph);
    let shards = shard_iid(corpus.training.len(), config.n, config.shard_size, &mut rng_from_seed(seeds.shard))?;
    let byzantine = select_byzantine(&graph, config.f, config.strategy, &mut rng_from_seed(mix(seeds.graph, 0xB12)))?;
    let mut poison_rng = rng_from_seed(seeds.poison);
    let nodes: Vec<NodeState> = (0..config.n)
        .map(|v| {
            let shard = shards.materialize(&corpus.training, v);
            let is_byz = byzantine.contains(v);
            let shard = if is_byz { config.backdoor.poison_shard(&shard, &mut poison_rng) } else { shard };
            init_node(v, shard, config.partitions, is_byz)
        })
        .collect();
    let (clean_eval, backdoor_eval) =
        config.backdoor.build_eval_sets(&corpus.test, &mut rng_from_seed(seeds.eval))?;
    let manifest = RunManifest {
        seeds,
        byzantine: byzantine.members().to_vec(),
        topology: config.topology.describe(),
        graph_fingerprint: graph.fingerprint(),
        graph_connected: connected,
        clean_eval_len: clean_eval.len(),
        backdoor_eval_len: backdoor_eval.len(),
    };
    let neighbors = (0..config.n).map(|v| graph.neighbors(v).to_vec()).collect();
    Ok(Setup { nodes, neighbors, byzantine, clean_eval, backdoor_eval, manifest })
}

/// What happened in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundReport {
    pub round: usize,
    pub online: Vec<bool>,
    /// Messages from the previous round processed by online recipients.
    pub delivered: usize,
    /// Messages from the previous round addressed to offline recipients.
    pub dropped: usize,
    /// Messages emitted this round, delivered next round.
    pub sent: usize,
}

/// A run in progress, advanced one round at a time.
pub struct Simulation {
    config: SimConfig,
    protocol: ProtocolConfig,
    setup: Setup,
    node_rngs: Vec<SimRng>,
    churn_rng: SimRng,
    inbox: Vec<OutboundSend>,
    round: usize,
    messages_sent: u64,
}

impl Simulation {
    pub fn new(config: &SimConfig, corpus: &Corpus) -> Result<Self> {
        let setup = setup(config, corpus)?;
        Ok(Self {
            protocol: config.protocol(),
            node_rngs: (0..config.n).map(|v| rng_from_seed(mix(config.seeds.protocol, v as u64))).collect(),
            churn_rng: rng_from_seed(config.seeds.churn),
            config: config.clone(),
            setup,
            inbox: Vec::new(),
            round: 0,
            messages_sent: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.setup.nodes
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    /// Messages waiting for delivery next round.
    pub fn in_flight(&self) -> &[OutboundSend] {
        &self.inbox
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    pub fn step(&mut self) -> Result<RoundReport> {
        self.round += 1;
        let cfg = &self.config;
        let nodes = &mut self.setup.nodes;
        let neighbors = &self.setup.neighbors;
        let online: Vec<bool> = nodes
            .iter()
            .map(|node| {
                (cfg.byzantine_always_online && node.byzantine)
                    || cfg.churn_online_prob >= 1.0
                    || self.churn_rng.gen_bool(cfg.churn_online_prob)
            })
            .collect();

        let mut report = RoundReport { round: self.round, ..RoundReport::default() };
        let mut outbox = Vec::with_capacity(self.inbox.len() + cfg.n);
        for send in self.inbox.drain(..) {
            let v = send.destination;
            if !online[v] {
                report.dropped += 1;
                continue;
            }
            report.delivered += 1;
            if let Some(out) = nodes[v].on_receive(&send.msg, &neighbors[v], &self.protocol, &mut self.node_rngs[v])? {
                outbox.push(out);
            }
        }
        for v in 0..cfg.n {
            if !online[v] {
                continue;
            }
            if let Some(out) = nodes[v].on_tick(&neighbors[v], &self.protocol, &mut self.node_rngs[v])? {
                outbox.push(out);
            }
        }
        report.sent = outbox.len();
        report.online = online;
        self.messages_sent += outbox.len() as u64;
        self.inbox = outbox;
        Ok(report)
    }

    /// Mean accuracy of the honest nodes at the current round.
    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let s = &self.setup;
        let (test, bd) = evaluate_honest(&s.nodes, &s.clean_eval, &s.backdoor_eval)?;
        Ok(MetricsRecord {
            round: self.round,
            mean_test_acc: test,
            mean_backdoor_acc: bd,
            messages_sent: self.messages_sent,
        })
    }
}

/// Executes one simulation.
pub fn run(config: &SimConfig, corpus: &Corpus) -> Result<RunOutput> {
    let mut sim = Simulation::new(config, corpus)?;
    let mut records = Vec::with_capacity(config.rounds / config.eval_every + 1);
    records.push(sim.evaluate()?);
    let mut online_per_round = Vec::with_capacity(config.rounds);
    let mut online_per_node = vec![0; config.n];
    for round in 1..=config.rounds {
        let report = sim.step()?;
        online_per_round.push(report.online.iter().filter(|&&o| o).count());
        for (count, &up) in online_per_node.iter_mut().zip(&report.online) {
            *count += up as usize;
        }
        if round % config.eval_every == 0 {
            records.push(sim.evaluate()?);
        }
    }
    Ok(RunOutput { records, manifest: sim.setup.manifest, online_per_round, online_per_node })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateRecord {
    pub round: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_backdoor_acc: f64,
    pub std_backdoor_acc: f64,
    pub messages_sent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicatedOutput {
    pub series: Vec<AggregateRecord>,
    pub runs: Vec<RunOutput>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pointwise mean and standard deviation of equally scheduled runs.
pub fn aggregate(runs: &[RunOutput]) -> Vec<AggregateRecord> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.records.len())
        .map(|i| {
            let pick = |g: fn(&MetricsRecord) -> f64| -> Vec<f64> { runs.iter().map(|r| g(&r.records[i])).collect() };
            let (mean_test_acc, std_test_acc) = mean_std(&pick(|m| m.mean_test_acc));
            let (mean_backdoor_acc, std_backdoor_acc) = mean_std(&pick(|m| m.mean_backdoor_acc));
            let (messages_sent, _) = mean_std(&pick(|m| m.messages_sent as f64));
            AggregateRecord {
                round: first.records[i].round,
                mean_test_acc,
                std_test_acc,
                mean_backdoor_acc,
                std_backdoor_acc,
                messages_sent,
            }
        })
        .collect()
}

/// Runs `replicates` independent copies of `config` (see
/// [`Seeds::for_replicate`]) on the current rayon pool.
pub fn run_replicated(config: &SimConfig, replicates: usize, corpus: &Corpus) -> Result<ReplicatedOutput> {
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let runs: Vec<RunOutput> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.seeds = config.seeds.for_replicate(r);
            run(&cfg, corpus)
        })
        .collect::<Result<_>>()?;
    Ok(ReplicatedOutput { series: aggregate(&runs), runs })
}

pub const CSV_HEADER: &str = "round,mean_test_acc,std_test_acc,mean_backdoor_acc,std_backdoor_acc,messages_sent";

pub fn csv_row(r: &AggregateRecord) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.1}",
        r.round, r.mean_test_acc, r.std_test_acc, r.mean_backdoor_acc, r.std_backdoor_acc, r.messages_sent
    )
}

pub fn metrics_csv(series: &[AggregateRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in series {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}
