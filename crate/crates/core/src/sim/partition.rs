use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::SimDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: u32,
    pub indices: Vec<usize>,
    pub label_set: BTreeSet<usize>,
}

impl ClientShard {
    fn new(client_id: u32, indices: Vec<usize>, ds: &SimDataset) -> Self {
        let label_set = indices.iter().map(|&i| ds.label(i)).collect();
        Self {
            client_id,
            indices,
            label_set,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Every client sees exactly `c` classes.
    LabelCount { c: usize },
    Dirichlet { concentration: f64 },
}

impl PartitionSpec {
    pub fn apply<R: Rng + ?Sized>(&self, ds: &SimDataset, n: usize, rng: &mut R) -> Result<Vec<ClientShard>> {
        match *self {
            PartitionSpec::LabelCount { c } => partition_by_label_count(ds, n, c, rng),
            PartitionSpec::Dirichlet { concentration } => partition_dirichlet(ds, n, concentration, rng),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PartitionSpec::LabelCount { c } => format!("label_count({c})"),
            PartitionSpec::Dirichlet { concentration } => format!("dirichlet({concentration})"),
        }
    }
}

fn shuffled_classes<R: Rng + ?Sized>(ds: &SimDataset, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    for c in by_class.iter_mut() {
        c.shuffle(rng);
    }
    by_class
}

/// Client `i` holds the `c` consecutive classes starting at `⌊iK/n⌋`
/// (mod `K`); each class is dealt round-robin among its holders.
pub fn partition_by_label_count<R: Rng + ?Sized>(
    ds: &SimDataset,
    n: usize,
    c: usize,
    rng: &mut R,
) -> Result<Vec<ClientShard>> {
    let k = ds.num_classes();
    if n == 0 {
        return Err(Error::Dataset("no clients".into()));
    }
    if c == 0 || c > k {
        return Err(Error::Dataset(format!("c = {c} outside [1, {k}]")));
    }
    let holders_of = |class: usize| -> Vec<usize> {
        (0..n)
            .filter(|&i| {
                let start = i * k / n;
                (class + k - start) % k < c
            })
            .collect()
    };
    let by_class = shuffled_classes(ds, rng);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let holders = holders_of(class);
        if holders.is_empty() {
            return Err(Error::Dataset(format!("n·c = {} cannot cover class {class}", n * c)));
        }
        if members.len() < holders.len() {
            return Err(Error::Dataset(format!(
                "class {class} has {} examples for {} clients",
                members.len(),
                holders.len()
            )));
        }
        for (r, &i) in members.iter().enumerate() {
            shards[holders[r % holders.len()]].push(i);
        }
    }
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            idx.sort_unstable();
            ClientShard::new(i as u32, idx, ds)
        })
        .collect())
}

/// Per class, client proportions from a symmetric Dirichlet; the class's
/// examples are split at the cumulative proportions.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    ds: &SimDataset,
    n: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<Vec<ClientShard>> {
    if n == 0 {
        return Err(Error::Dataset("no clients".into()));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|_| Error::Dataset(format!("concentration must be positive, got {concentration}")))?;
    let by_class = shuffled_classes(ds, rng);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    for members in &by_class {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        let mut acc = 0.0;
        let mut start = 0;
        for (i, d) in draws.iter().enumerate() {
            acc += if total > 0.0 { d / total } else { 1.0 / n as f64 };
            let end = if i + 1 == n {
                members.len()
            } else {
                ((acc * members.len() as f64).round() as usize).clamp(start, members.len())
            };
            shards[i].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            idx.sort_unstable();
            ClientShard::new(i as u32, idx, ds)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::dataset::digits;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disjoint_and_covering(shards: &[ClientShard], len: usize) {
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn iid_when_c_is_all_classes() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = partition_by_label_count(&d, 10, 10, &mut rng).unwrap();
        assert!(s.iter().all(|x| x.label_set.len() == 10));
        disjoint_and_covering(&s, d.len());
    }

    #[test]
    fn exactly_c_labels() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, c) in [(5, 2), (10, 5), (20, 3), (7, 4)] {
            let s = partition_by_label_count(&d, n, c, &mut rng).unwrap();
            assert!(s.iter().all(|x| x.label_set.len() == c), "n={n} c={c}");
            disjoint_and_covering(&s, d.len());
        }
    }

    #[test]
    fn infeasible_cover_is_rejected() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(partition_by_label_count(&d, 3, 2, &mut rng).is_err());
        assert!(partition_by_label_count(&d, 3, 11, &mut rng).is_err());
    }

    #[test]
    fn dirichlet_covers() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = partition_dirichlet(&d, 10, 0.5, &mut rng).unwrap();
        disjoint_and_covering(&s, d.len());
        assert!(partition_dirichlet(&d, 10, 0.0, &mut rng).is_err());
    }

    // χ² distance of client label histograms from the class shares
    fn heterogeneity(d: &SimDataset, s: &[ClientShard]) -> f64 {
        let k = d.num_classes();
        let mut share = vec![0.0; k];
        for &l in d.labels() {
            share[l] += 1.0 / d.len() as f64;
        }
        s.iter()
            .filter(|x| !x.indices.is_empty())
            .map(|x| {
                let mut h = vec![0.0; k];
                for &i in &x.indices {
                    h[d.label(i)] += 1.0;
                }
                let tot = x.indices.len() as f64;
                (0..k).map(|c| (h[c] - tot * share[c]).powi(2) / (tot * share[c])).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn large_concentration_approaches_uniform() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut hi, mut lo) = (0.0, 0.0);
        for _ in 0..20 {
            hi += heterogeneity(&d, &partition_dirichlet(&d, 10, 1e3, &mut rng).unwrap());
            lo += heterogeneity(&d, &partition_dirichlet(&d, 10, 0.5, &mut rng).unwrap());
        }
        assert!(hi * 20.0 < lo, "{hi} vs {lo}");
    }

    #[test]
    fn small_concentration_drops_classes() {
        let d = digits().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let missing = (0..200)
            .filter(|_| {
                partition_dirichlet(&d, 10, 0.5, &mut rng)
                    .unwrap()
                    .iter()
                    .any(|s| s.label_set.len() < 10)
            })
            .count();
        assert!(missing as f64 / 200.0 > 0.9);
    }
}
