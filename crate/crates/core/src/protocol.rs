//! Per-node state machine of partitioned token gossip learning.
//!
//! A node earns a token every round. On its periodic tick it spends one to
//! push a random partition of its model to a random neighbor. On receiving a
//! partition it merges it, trains one epoch on its local shard, and if it
//! still holds a token forwards the freshly trained copy of the same
//! partition. Byzantine nodes run exactly this machine; only their shard
//! differs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{extract_partition, Hyperparams, ParamVector, PartitionMsg, PARAMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenPolicy {
    pub cap: u32,
    /// Tokens earned per tick.
    pub refill: u32,
    /// Minimum balance for a reactive send.
    pub reactive_threshold: u32,
}

impl Default for TokenPolicy {
    fn default() -> Self {
        Self { cap: 10, refill: 1, reactive_threshold: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub partitions: usize,
    pub tokens: TokenPolicy,
    pub hyper: Hyperparams,
    /// Also train on every tick (before the proactive send).
    pub train_on_tick: bool,
}

impl ProtocolConfig {
    pub fn new(partitions: usize) -> Self {
        Self { partitions, tokens: TokenPolicy::default(), hyper: Hyperparams::default(), train_on_tick: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partitions == 0 || self.partitions > PARAMS {
            return Err(Error::Config(format!("partition count must lie in [1, {PARAMS}], got {}", self.partitions)));
        }
        if self.tokens.cap == 0 {
            return Err(Error::Config("token cap must be at least 1".into()));
        }
        self.hyper.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutboundSend {
    pub destination: usize,
    pub msg: PartitionMsg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: usize,
    pub params: ParamVector,
    pub tokens: u32,
    pub shard: Dataset,
    pub byzantine: bool,
    pub partitions: usize,
    /// Set when a reactive send was skipped for lack of tokens; cleared by
    /// the next send.
    pub pending_reactive: bool,
}

/// Fresh node with zero parameters and one token.
pub fn init_node(id: usize, shard: Dataset, partitions: usize, byzantine: bool) -> NodeState {
    NodeState {
        id,
        params: ParamVector::zeros(),
        tokens: 1,
        shard,
        byzantine,
        partitions,
        pending_reactive: false,
    }
}

impl NodeState {
    fn send<R: Rng + ?Sized>(&mut self, index: usize, neighbors: &[usize], rng: &mut R) -> Result<Option<OutboundSend>> {
        let Some(&destination) = neighbors.choose(rng) else {
            return Ok(None);
        };
        let msg = extract_partition(&self.params, index, self.partitions, self.id)?;
        self.tokens -= 1;
        self.pending_reactive = false;
        Ok(Some(OutboundSend { destination, msg }))
    }

    /// Periodic step: earn a token, then spend one on a random partition.
    pub fn on_tick<R: Rng + ?Sized>(
        &mut self,
        neighbors: &[usize],
        cfg: &ProtocolConfig,
        rng: &mut R,
    ) -> Result<Option<OutboundSend>> {
        self.tokens = (self.tokens + cfg.tokens.refill).min(cfg.tokens.cap);
        if cfg.train_on_tick {
            self.params.train_epoch(&self.shard.samples, &cfg.hyper, rng)?;
        }
        if self.tokens == 0 || neighbors.is_empty() {
            return Ok(None);
        }
        let index = rng.gen_range(0..self.partitions);
        self.send(index, neighbors, rng)
    }

    /// Merge, train, then forward the same partition if a token is left.
    pub fn on_receive<R: Rng + ?Sized>(
        &mut self,
        msg: &PartitionMsg,
        neighbors: &[usize],
        cfg: &ProtocolConfig,
        rng: &mut R,
    ) -> Result<Option<OutboundSend>> {
        self.params.merge(msg, self.partitions)?;
        self.params.train_epoch(&self.shard.samples, &cfg.hyper, rng)?;
        if self.tokens == 0 || self.tokens < cfg.tokens.reactive_threshold {
            self.pending_reactive = true;
            return Ok(None);
        }
        self.send(msg.partition_index, neighbors, rng)
    }
}
