//! Graph families used as gossip overlays.
//!
//! Adjacency lists are sorted and free of self-loops and duplicates.
//! Undirected graphs store every edge in both directions.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Attempts allowed to randomized generators before giving up.
pub const RETRY_BUDGET: usize = 1000;

/// Consecutive rejected stub pairs after which a pairing attempt restarts.
const STUCK_LIMIT: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    in_degree: Vec<usize>,
    directed: bool,
}

impl Graph {
    /// Builds a graph from out-neighbor lists. Lists are sorted; self-loops
    /// and duplicates are rejected, and undirected input must be symmetric.
    pub fn from_adjacency(mut adj: Vec<Vec<usize>>, directed: bool) -> Result<Self> {
        let n = adj.len();
        for (u, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidTopology(format!("node {u} has a duplicate neighbor")));
            }
            if let Some(&v) = list.iter().find(|&&v| v == u || v >= n) {
                return Err(Error::InvalidTopology(format!("node {u} has invalid neighbor {v}")));
            }
        }
        let mut in_degree = vec![0; n];
        for list in &adj {
            for &v in list {
                in_degree[v] += 1;
            }
        }
        let g = Self { adj, in_degree, directed };
        if !directed {
            for u in 0..n {
                if let Some(&v) = g.adj[u].iter().find(|&&v| g.adj[v].binary_search(&u).is_err()) {
                    return Err(Error::InvalidTopology(format!("edge {u}-{v} is not symmetric")));
                }
            }
        }
        Ok(g)
    }

    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        Self::from_adjacency(adj, false).expect("generator produced a simple graph")
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_degree[v]
    }

    /// Neighbor count for undirected graphs, out-degree plus in-degree for
    /// directed ones.
    pub fn degree(&self, v: usize) -> Result<usize> {
        if v >= self.n() {
            return Err(Error::InvalidNode { node: v, n: self.n() });
        }
        Ok(if self.directed { self.adj[v].len() + self.in_degree[v] } else { self.adj[v].len() })
    }

    /// Number of edges (arcs for directed graphs).
    pub fn edge_count(&self) -> usize {
        let arcs: usize = self.adj.iter().map(Vec::len).sum();
        if self.directed {
            arcs
        } else {
            arcs / 2
        }
    }

    /// One line per node, `id: neighbor,neighbor,...`, after a `# header` line.
    pub fn to_adjacency_text(&self, header: &str) -> String {
        let mut out = format!("# {header}\n");
        out.push_str(&self.adjacency_body());
        out
    }

    fn adjacency_body(&self) -> String {
        let mut out = String::new();
        for (u, list) in self.adj.iter().enumerate() {
            let joined: Vec<String> = list.iter().map(usize::to_string).collect();
            out.push_str(&format!("{u}: {}\n", joined.join(",")));
        }
        out
    }

    /// Hex SHA-256 of the adjacency body (header excluded).
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("directed={}\n{}", self.directed, self.adjacency_body()));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Whether every node is reachable from node 0, ignoring edge direction.
pub fn is_connected(g: &Graph) -> bool {
    let n = g.n();
    if n == 0 {
        return true;
    }
    let mut undirected: Vec<Vec<usize>> = g.adj.clone();
    if g.directed {
        for (u, list) in g.adj.iter().enumerate() {
            for &v in list {
                undirected[v].push(u);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &undirected[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == n
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Each node picks `k` distinct out-neighbors uniformly among the others.
pub fn gen_fanout<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Graph> {
    if k >= n {
        return Err(Error::InvalidTopology(format!("fan-out k={k} must be below n={n}")));
    }
    let adj = (0..n)
        .map(|u| {
            index::sample(rng, n - 1, k)
                .into_iter()
                .map(|x| if x >= u { x + 1 } else { x })
                .collect()
        })
        .collect();
    Graph::from_adjacency(adj, true)
}

/// Symmetric n x n adjacency bitmap for simple-graph bookkeeping.
struct EdgeSet {
    n: usize,
    bits: Vec<bool>,
}

impl EdgeSet {
    fn new(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    fn contains(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }

    fn insert(&mut self, u: usize, v: usize) {
        self.bits[u * self.n + v] = true;
        self.bits[v * self.n + u] = true;
    }
}

/// Randomly matches the remaining `stubs`, rejecting self-loops and repeated
/// edges pair by pair. Returns false when the matching gets stuck.
fn pair_stubs<R: Rng + ?Sized>(
    stubs: &mut Vec<usize>,
    edges: &mut Vec<(usize, usize)>,
    seen: &mut EdgeSet,
    rng: &mut R,
) -> bool {
    let mut misses = 0;
    while stubs.len() >= 2 {
        let i = rng.gen_range(0..stubs.len());
        let j = rng.gen_range(0..stubs.len());
        let (u, v) = (stubs[i], stubs[j]);
        if i == j || u == v || seen.contains(u, v) {
            misses += 1;
            if misses > STUCK_LIMIT {
                return false;
            }
            continue;
        }
        misses = 0;
        seen.insert(u, v);
        edges.push((u, v));
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        stubs.swap_remove(hi);
        stubs.swap_remove(lo);
    }
    stubs.is_empty()
}

/// Simple k-regular graph via incremental stub pairing.
pub fn gen_random_regular<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Graph> {
    if k >= n {
        return Err(Error::InvalidTopology(format!("degree k={k} must be below n={n}")));
    }
    if (n * k) % 2 == 1 {
        return Err(Error::InvalidTopology(format!("n*k = {} is odd; no {k}-regular graph on {n} nodes", n * k)));
    }
    for _ in 0..RETRY_BUDGET {
        let mut stubs: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, k)).collect();
        let mut edges = Vec::with_capacity(n * k / 2);
        let mut seen = EdgeSet::new(n);
        if pair_stubs(&mut stubs, &mut edges, &mut seen, rng) {
            return Ok(Graph::from_edges(n, &edges));
        }
    }
    Err(Error::RetryExhausted { generator: "random-regular", attempts: RETRY_BUDGET })
}

/// Ring lattice with `k/2` neighbors per side, each lattice edge rewired with
/// probability `p` to a uniformly chosen new endpoint.
pub fn gen_watts_strogatz<R: Rng + ?Sized>(n: usize, k: usize, p: f64, rng: &mut R) -> Result<Graph> {
    if k % 2 == 1 || k >= n {
        return Err(Error::InvalidTopology(format!("Watts-Strogatz needs even k < n (k={k}, n={n})")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidTopology(format!("rewiring probability {p} outside [0, 1]")));
    }
    let mut seen = EdgeSet::new(n);
    let mut edges = Vec::with_capacity(n * k / 2);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            seen.insert(u, v);
            edges.push((u, v));
        }
    }
    let mut degree = vec![k; n];
    for e in edges.iter_mut() {
        let (u, v) = *e;
        if !rng.gen_bool(p) || degree[u] >= n - 1 {
            continue;
        }
        let w = loop {
            let w = rng.gen_range(0..n);
            if w != u && !seen.contains(u, w) {
                break w;
            }
        };
        seen.bits[u * n + v] = false;
        seen.bits[v * n + u] = false;
        seen.insert(u, w);
        degree[v] -= 1;
        degree[w] += 1;
        *e = (u, w);
    }
    Ok(Graph::from_edges(n, &edges))
}

/// The edge probability `2 ln(n) / n`.
pub fn erdos_renyi_default_p(n: usize) -> f64 {
    (2.0 * (n as f64).ln() / n as f64).min(1.0)
}

/// G(n, p) with `p = 2 ln(n) / n`, redrawn until connected.
pub fn gen_erdos_renyi<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Graph> {
    gen_erdos_renyi_with(n, erdos_renyi_default_p(n), rng)
}

pub fn gen_erdos_renyi_with<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("Erdos-Renyi needs n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidTopology(format!("edge probability {p} outside [0, 1]")));
    }
    for _ in 0..RETRY_BUDGET {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n, &edges);
        if is_connected(&g) {
            return Ok(g);
        }
    }
    Err(Error::RetryExhausted { generator: "erdos-renyi", attempts: RETRY_BUDGET })
}

/// Erdos-Gallai test.
fn is_graphical(degrees: &[usize]) -> bool {
    let mut d = degrees.to_vec();
    d.sort_unstable_by(|a, b| b.cmp(a));
    if d.iter().sum::<usize>() % 2 == 1 {
        return false;
    }
    let mut prefix = 0;
    for k in 1..=d.len() {
        prefix += d[k - 1];
        let tail: usize = d[k..].iter().map(|&x| x.min(k)).sum();
        if prefix > k * (k - 1) + tail {
            return false;
        }
    }
    true
}

/// Degree sequence drawn from `P(d) ∝ d^-alpha` on `[1, n-1]`, with one
/// degree bumped when the total is odd.
pub fn zipf_degree_sequence<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<usize> {
    let weights: Vec<f64> = (1..n).map(|d| (d as f64).powf(-alpha)).collect();
    let law = WeightedIndex::new(&weights).expect("positive weights");
    let mut degrees: Vec<usize> = (0..n).map(|_| law.sample(rng) + 1).collect();
    if degrees.iter().sum::<usize>() % 2 == 1 {
        let bumpable: Vec<usize> = (0..n).filter(|&v| degrees[v] < n - 1).collect();
        let v = *bumpable.choose(rng).expect("some degree below n-1");
        degrees[v] += 1;
    }
    degrees
}

/// Connected simple graph realizing `degrees`, or `None` if this attempt
/// fails. A random spanning tree is grown first (non-leaves, then leaves,
/// each attached to a free stub of the tree so far); the leftover stubs are
/// then matched at random.
fn connected_realization<R: Rng + ?Sized>(degrees: &[usize], rng: &mut R) -> Option<Vec<(usize, usize)>> {
    let n = degrees.len();
    if degrees.iter().sum::<usize>() < 2 * (n - 1) || degrees.contains(&0) {
        return None;
    }
    let mut hubs: Vec<usize> = (0..n).filter(|&v| degrees[v] >= 2).collect();
    let mut leaves: Vec<usize> = (0..n).filter(|&v| degrees[v] == 1).collect();
    hubs.shuffle(rng);
    leaves.shuffle(rng);
    let order: Vec<usize> = hubs.into_iter().chain(leaves).collect();

    let mut seen = EdgeSet::new(n);
    let mut edges = Vec::new();
    let mut free: Vec<usize> = std::iter::repeat_n(order[0], degrees[order[0]]).collect();
    for &v in &order[1..] {
        if free.is_empty() {
            return None;
        }
        let u = free.swap_remove(rng.gen_range(0..free.len()));
        seen.insert(u, v);
        edges.push((u, v));
        free.extend(std::iter::repeat_n(v, degrees[v] - 1));
    }
    pair_stubs(&mut free, &mut edges, &mut seen, rng).then_some(edges)
}

/// Connected graph whose degree sequence follows a truncated Zipf law.
pub fn gen_zipf<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("Zipf graph needs n >= 2, got {n}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidTopology(format!("Zipf exponent must be positive, got {alpha}")));
    }
    for _ in 0..RETRY_BUDGET {
        let degrees = zipf_degree_sequence(n, alpha, rng);
        if !is_graphical(&degrees) {
            continue;
        }
        if let Some(edges) = connected_realization(&degrees, rng) {
            return Ok(Graph::from_edges(n, &edges));
        }
    }
    Err(Error::RetryExhausted { generator: "zipf", attempts: RETRY_BUDGET })
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Fanout,
    RandomRegular,
    WattsStrogatz,
    ErdosRenyi,
    Zipf,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::Fanout, Family::RandomRegular, Family::WattsStrogatz, Family::ErdosRenyi, Family::Zipf];

    pub fn name(self) -> &'static str {
        match self {
            Family::Fanout => "fanout",
            Family::RandomRegular => "random_regular",
            Family::WattsStrogatz => "watts_strogatz",
            Family::ErdosRenyi => "erdos_renyi",
            Family::Zipf => "zipf",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown topology family {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopologySpec {
    pub family: Family,
    /// Degree parameter for fan-out, regular and Watts-Strogatz graphs.
    pub k: usize,
    /// Rewiring probability (Watts-Strogatz) or edge probability
    /// (Erdos-Renyi; `None` selects `2 ln(n) / n`).
    pub p: Option<f64>,
    /// Zipf exponent.
    pub alpha: f64,
}

impl TopologySpec {
    /// The settings studied for each family: k = 20, Watts-Strogatz p = 0.5,
    /// Zipf alpha = 2.
    pub fn standard(family: Family) -> Self {
        let p = (family == Family::WattsStrogatz).then_some(0.5);
        Self { family, k: 20, p, alpha: 2.0 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTopology(msg));
        match self.family {
            Family::Fanout if self.k >= n => bad(format!("fan-out k={} must be below n={n}", self.k)),
            Family::RandomRegular if self.k >= n => bad(format!("degree k={} must be below n={n}", self.k)),
            Family::RandomRegular if (n * self.k) % 2 == 1 => {
                bad(format!("n*k = {} is odd for random_regular", n * self.k))
            }
            Family::WattsStrogatz if self.k % 2 == 1 || self.k >= n => {
                bad(format!("Watts-Strogatz needs even k < n (k={}, n={n})", self.k))
            }
            Family::ErdosRenyi | Family::Zipf if n < 2 => bad(format!("{} needs n >= 2", self.family)),
            _ => Ok(()),
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Graph> {
        self.validate(n)?;
        match self.family {
            Family::Fanout => gen_fanout(n, self.k, rng),
            Family::RandomRegular => gen_random_regular(n, self.k, rng),
            Family::WattsStrogatz => gen_watts_strogatz(n, self.k, self.p.unwrap_or(0.5), rng),
            Family::ErdosRenyi => gen_erdos_renyi_with(n, self.p.unwrap_or_else(|| erdos_renyi_default_p(n)), rng),
            Family::Zipf => gen_zipf(n, self.alpha, rng),
        }
    }

    pub fn describe(&self) -> String {
        match self.family {
            Family::Fanout | Family::RandomRegular => format!("family={} k={}", self.family, self.k),
            Family::WattsStrogatz => format!("family={} k={} p={}", self.family, self.k, self.p.unwrap_or(0.5)),
            Family::ErdosRenyi => match self.p {
                Some(p) => format!("family={} p={p}", self.family),
                None => format!("family={} p=2ln(n)/n", self.family),
            },
            Family::Zipf => format!("family={} alpha={}", self.family, self.alpha),
        }
    }
}
