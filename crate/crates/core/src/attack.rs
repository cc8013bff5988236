//! Byzantine placement.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::Graph;

/// Byzantine counts studied for the Zipf churn sweep.
pub const ZIPF_CHURN_F_GRID: [usize; 7] = [0, 5, 15, 20, 25, 40, 45];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlacementStrategy {
    /// Highest total degree first, ties to the lowest id.
    Classical,
    /// Uniform sample without replacement.
    Random,
}

impl PlacementStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PlacementStrategy::Classical => "classical",
            PlacementStrategy::Random => "random",
        }
    }
}

impl fmt::Display for PlacementStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlacementStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(PlacementStrategy::Classical),
            "random" => Ok(PlacementStrategy::Random),
            _ => Err(Error::Config(format!("unknown placement strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByzantineSet {
    members: Vec<usize>,
    is_member: Vec<bool>,
}

impl ByzantineSet {
    fn new(n: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        let mut is_member = vec![false; n];
        for &m in &members {
            is_member[m] = true;
        }
        Self { members, is_member }
    }

    /// Member ids, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn f(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.is_member.get(v).copied().unwrap_or(false)
    }
}

/// Picks `f` Byzantine nodes. The classical strategy never touches `rng`.
pub fn select_byzantine<R: Rng + ?Sized>(
    g: &Graph,
    f: usize,
    strategy: PlacementStrategy,
    rng: &mut R,
) -> Result<ByzantineSet> {
    let n = g.n();
    if f > n {
        return Err(Error::TooManyByzantine { f, n });
    }
    let members = match strategy {
        PlacementStrategy::Classical => {
            let mut ranked: Vec<(usize, usize)> =
                (0..n).map(|v| (g.degree(v).expect("valid node"), v)).collect();
            ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(f).map(|(_, v)| v).collect()
        }
        PlacementStrategy::Random => index::sample(rng, n, f).into_vec(),
    };
    Ok(ByzantineSet::new(n, members))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn star(n: usize, center: usize) -> Graph {
        let adj = (0..n)
            .map(|v| if v == center { (0..n).filter(|&u| u != center).collect() } else { vec![center] })
            .collect();
        Graph::from_adjacency(adj, false).unwrap()
    }

    #[test]
    fn empty_selection() {
        let mut rng = rng_from_seed(0);
        for s in [PlacementStrategy::Classical, PlacementStrategy::Random] {
            assert_eq!(select_byzantine(&star(5, 2), 0, s, &mut rng).unwrap().f(), 0);
        }
    }

    #[test]
    fn star_center_first() {
        let mut rng = rng_from_seed(0);
        let set = select_byzantine(&star(9, 6), 1, PlacementStrategy::Classical, &mut rng).unwrap();
        assert_eq!(set.members(), &[6]);
        assert!(set.contains(6) && !set.contains(0) && !set.contains(99));
    }

    #[test]
    fn too_many_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            select_byzantine(&star(4, 0), 5, PlacementStrategy::Random, &mut rng),
            Err(Error::TooManyByzantine { f: 5, n: 4 })
        ));
    }

    #[test]
    fn strategy_names() {
        assert_eq!("classical".parse::<PlacementStrategy>().unwrap(), PlacementStrategy::Classical);
        assert_eq!(PlacementStrategy::Random.to_string(), "random");
        assert!("hubs".parse::<PlacementStrategy>().is_err());
    }
}
