//! Which silos hold the non-sensitive `(x, y)` rows and which hold the
//! sensitive attributes.
//!
//! Every mode reduces to two families of index sets over `[n]`: the
//! non-sensitive sets `P_1..P_p`, each of which samples minibatches, and the
//! sensitive sets `S_1..S_s`, each of which answers for the sampled rows it
//! owns.

use serde::Serialize;

use crate::dataio::SiloPartition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TopologyMode {
    Federated,
    SingleSilo,
    CentralSensitive,
    General,
}

impl std::str::FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "federated" => Ok(Self::Federated),
            "single_silo" => Ok(Self::SingleSilo),
            "central_sensitive" => Ok(Self::CentralSensitive),
            "general" => Ok(Self::General),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub mode: TopologyMode,
    pub nonsensitive: Vec<Vec<usize>>,
    pub sensitive: Vec<Vec<usize>>,
    /// Idle sensitive silos send pure noise of the participating variance.
    pub dummy_noise: bool,
    owner: Vec<usize>,
}

fn check_family(sets: &[Vec<usize>], n: usize, what: &str) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::Topology(format!("no {what} silos")));
    }
    let mut seen = vec![false; n];
    for (j, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Topology(format!("{what} silo {j} is empty")));
        }
        for &i in set {
            if i >= n {
                return Err(Error::Topology(format!("{what} silo {j} references row {i} ≥ n = {n}")));
            }
            if seen[i] {
                return Err(Error::Topology(format!("row {i} appears twice among {what} silos")));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Topology(format!("row {i} is not owned by any {what} silo")));
    }
    Ok(())
}

impl Topology {
    fn build(mode: TopologyMode, nonsensitive: Vec<Vec<usize>>, sensitive: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = nonsensitive.iter().map(Vec::len).sum();
        check_family(&nonsensitive, n, "non-sensitive")?;
        check_family(&sensitive, n, "sensitive")?;
        let mut owner = vec![0; n];
        for (c, set) in sensitive.iter().enumerate() {
            for &i in set {
                owner[i] = c;
            }
        }
        let sort = |mut sets: Vec<Vec<usize>>| {
            sets.iter_mut().for_each(|s| s.sort_unstable());
            sets
        };
        Ok(Self { mode, nonsensitive: sort(nonsensitive), sensitive: sort(sensitive), dummy_noise: false, owner })
    }

    /// Each silo holds both divisions of its own rows.
    pub fn federated(partition: &SiloPartition) -> Result<Self> {
        let sets = partition.assignments.clone();
        Self::build(TopologyMode::Federated, sets.clone(), sets)
    }

    pub fn single_silo(n: usize) -> Result<Self> {
        let all: Vec<usize> = (0..n).collect();
        Self::build(TopologyMode::SingleSilo, vec![all.clone()], vec![all])
    }

    /// Non-sensitive rows spread over silos; one central holder of every
    /// sensitive attribute.
    pub fn central_sensitive(partition: &SiloPartition) -> Result<Self> {
        let n = partition.assignments.iter().map(Vec::len).sum();
        Self::build(TopologyMode::CentralSensitive, partition.assignments.clone(), vec![(0..n).collect()])
    }

    pub fn general(nonsensitive: Vec<Vec<usize>>, sensitive: Vec<Vec<usize>>) -> Result<Self> {
        Self::build(TopologyMode::General, nonsensitive, sensitive)
    }

    pub fn with_dummy_noise(mut self, on: bool) -> Self {
        self.dummy_noise = on;
        self
    }

    pub fn n(&self) -> usize {
        self.owner.len()
    }

    pub fn sensitive_owner(&self, row: usize) -> Option<usize> {
        self.owner.get(row).copied()
    }

    /// Expected number of rows silo `c` answers for per round when every
    /// non-sensitive silo draws `min(m, |P_j|)` rows.
    pub fn expected_sensitive_batch(&self, c: usize, m: usize) -> f64 {
        self.nonsensitive
            .iter()
            .map(|p| {
                let mine = p.iter().filter(|&&i| self.owner[i] == c).count();
                m.min(p.len()) as f64 * mine as f64 / p.len() as f64
            })
            .sum()
    }
}

/// Routes one round's sampled rows to their sensitive holders.
///
/// `batches[j]` lists global row indices drawn by non-sensitive silo `j`
/// (repeats allowed). Entry `c` of the result lists `(j, position)` pairs,
/// in `(j, position)` order, for every sampled row that sensitive silo `c`
/// owns. Silos with an empty list do not participate.
pub fn route_round(topology: &Topology, batches: &[Vec<usize>]) -> Result<Vec<Vec<(usize, usize)>>> {
    if batches.len() != topology.nonsensitive.len() {
        return Err(Error::DimensionMismatch { expected: topology.nonsensitive.len(), got: batches.len() });
    }
    let mut routed = vec![Vec::new(); topology.sensitive.len()];
    for (j, batch) in batches.iter().enumerate() {
        for (pos, &row) in batch.iter().enumerate() {
            let c = topology
                .sensitive_owner(row)
                .ok_or_else(|| Error::Topology(format!("sampled row {row} has no sensitive holder")))?;
            routed[c].push((j, pos));
        }
    }
    Ok(routed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition() -> SiloPartition {
        SiloPartition { assignments: vec![vec![0, 2, 4], vec![1, 3, 5]], silo_size: 3 }
    }

    #[test]
    fn federated_routes_to_own_silo() {
        let t = Topology::federated(&partition()).unwrap();
        let r = route_round(&t, &[vec![0, 4], vec![3]]).unwrap();
        assert_eq!(r, vec![vec![(0, 0), (0, 1)], vec![(1, 0)]]);
    }

    #[test]
    fn central_sensitive_answers_everything() {
        let t = Topology::central_sensitive(&partition()).unwrap();
        let r = route_round(&t, &[vec![0, 4], vec![3]]).unwrap();
        assert_eq!(r, vec![vec![(0, 0), (0, 1), (1, 0)]]);
        let g = Topology::general(partition().assignments, vec![(0..6).collect()]).unwrap();
        assert_eq!(route_round(&g, &[vec![0, 4], vec![3]]).unwrap(), r);
        assert_eq!(t.expected_sensitive_batch(0, 2), 4.0);
    }

    #[test]
    fn general_participation() {
        let t = Topology::general(vec![vec![0, 1, 2], vec![3, 4, 5]], vec![vec![0, 3], vec![1, 4], vec![2, 5]]).unwrap();
        let r = route_round(&t, &[vec![0, 0], vec![3]]).unwrap();
        let active: Vec<usize> = (0..3).filter(|&c| !r[c].is_empty()).collect();
        assert_eq!(active, vec![0]);
        assert_eq!(r[0], vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn invalid_families() {
        assert!(Topology::general(vec![vec![0, 1], vec![1]], vec![vec![0, 1]]).is_err());
        assert!(Topology::general(vec![vec![0, 1]], vec![vec![0]]).is_err());
        assert!(Topology::general(vec![vec![0, 2]], vec![vec![0, 2]]).is_err());
        assert!(Topology::general(vec![vec![0], vec![]], vec![vec![0]]).is_err());
        let t = Topology::single_silo(3).unwrap();
        assert!(route_round(&t, &[vec![7]]).is_err());
        assert!(route_round(&t, &[]).is_err());
    }
}
