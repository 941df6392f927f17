//! Heterogeneous client datasets via per-tag Dirichlet allocation, and the
//! split of clients into federated groups and isolated clients.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
    /// Tag of each pool dataset, in pool order.
    pub tags: Vec<String>,
    /// `assignment[g][i]` is the client that received sample `i` of pool
    /// dataset `g`.
    pub assignment: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Per-client sample counts broken down by pool tag.
    pub fn histograms(&self) -> Vec<Vec<usize>> {
        let mut h = vec![vec![0; self.tags.len()]; self.n_clients];
        for (g, per_sample) in self.assignment.iter().enumerate() {
            for &c in per_sample {
                h[c][g] += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientDataset>,
    pub plan: PartitionPlan,
    /// Clients that received no samples (only possible when clients
    /// outnumber samples or alpha is tiny).
    pub empty_clients: Vec<usize>,
}

pub fn client_tag(index: usize) -> String {
    format!("client-{index:03}")
}

/// Integer allocation of `total` items proportional to `shares`: floors
/// first, then the leftover units go to the largest fractional parts (ties
/// to the lower index). Always sums to `total`.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let mass: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / mass * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits every pool dataset across `n_clients` with client shares drawn
/// from Dirichlet(alpha); pool dataset `g` uses the RNG stream `(seed, g)`.
pub fn partition_dirichlet(pool: &[ClientDataset], alpha: f64, n_clients: usize, seed: u64) -> Result<Partition> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("partition pool has no datasets".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    if n_clients == 0 {
        return Err(Error::Config("n_clients must be >= 1".into()));
    }
    let mut buckets: Vec<Vec<_>> = vec![Vec::new(); n_clients];
    let mut assignment = Vec::with_capacity(pool.len());
    for (g, dataset) in pool.iter().enumerate() {
        let mut rng = CounterRng::stream(seed, &[g as u64]);
        let shares = rng.next_dirichlet(alpha, n_clients);
        let counts = largest_remainder(&shares, dataset.len());
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut order);
        let mut owner = vec![0; dataset.len()];
        let mut cursor = order.iter();
        for (client, &count) in counts.iter().enumerate() {
            for &i in cursor.by_ref().take(count) {
                owner[i] = client;
                buckets[client].push(dataset.samples()[i].clone());
            }
        }
        assignment.push(owner);
    }
    let clients = buckets
        .into_iter()
        .enumerate()
        .map(|(i, samples)| ClientDataset::new(client_tag(i), samples))
        .collect::<Result<Vec<_>>>()?;
    let empty_clients = clients.iter().enumerate().filter(|(_, c)| c.is_empty()).map(|(i, _)| i).collect();
    Ok(Partition {
        clients,
        plan: PartitionPlan {
            alpha,
            n_clients,
            seed,
            tags: pool.iter().map(|d| d.tag().to_string()).collect(),
            assignment,
        },
        empty_clients,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub groups: Vec<Vec<usize>>,
    pub isolated: Vec<usize>,
}

impl GroupAssignment {
    /// `"group-<g>"`, `"isolated"` or `None` for every client.
    pub fn role_of(&self, client: usize) -> Option<String> {
        if self.isolated.contains(&client) {
            return Some("isolated".into());
        }
        self.groups.iter().position(|g| g.contains(&client)).map(|g| format!("group-{g}"))
    }
}

/// Shuffles client indices with `seed`, takes the first `n_isolated` as
/// isolated clients and deals the rest round-robin into `n_groups` groups.
pub fn partition_groups(n_clients: usize, n_groups: usize, n_isolated: usize, seed: u64) -> Result<GroupAssignment> {
    if n_groups + n_isolated == 0 {
        return Err(Error::Config("need at least one group or isolated client".into()));
    }
    if n_isolated > n_clients || n_groups > n_clients - n_isolated {
        return Err(Error::Config(format!(
            "cannot form {n_groups} non-empty groups and {n_isolated} isolated clients from {n_clients} clients"
        )));
    }
    if n_groups == 0 && n_isolated != n_clients {
        return Err(Error::Config(format!(
            "with no groups every client must be isolated ({n_isolated} of {n_clients})"
        )));
    }
    let mut order: Vec<usize> = (0..n_clients).collect();
    CounterRng::stream(seed, &[0x6772_6f75_7073]).shuffle(&mut order);
    let isolated = order[..n_isolated].to_vec();
    let mut groups = vec![Vec::new(); n_groups];
    for (i, &c) in order[n_isolated..].iter().enumerate() {
        groups[i % n_groups].push(c);
    }
    Ok(GroupAssignment { groups, isolated })
}

/// Shannon entropy of a count vector divided by `ln(len)`; 1 means uniform.
pub fn normalized_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h / (counts.len() as f64).ln()
}

/// Mean over non-empty clients of the normalized entropy of their tag mix.
pub fn mean_tag_entropy(plan: &PartitionPlan) -> f64 {
    let hs: Vec<f64> = plan
        .histograms()
        .iter()
        .filter(|h| h.iter().sum::<usize>() > 0)
        .map(|h| normalized_entropy(h))
        .collect();
    if hs.is_empty() {
        0.0
    } else {
        hs.iter().sum::<f64>() / hs.len() as f64
    }
}

/// Manifest lines `client_id TAB role TAB sample_count TAB histogram`, the
/// histogram as comma-separated `tag:count` pairs sorted by tag (`-` when
/// the client is empty).
pub fn format_manifest(partition: &Partition, groups: &GroupAssignment) -> String {
    let hists = partition.plan.histograms();
    let mut tag_order: Vec<usize> = (0..partition.plan.tags.len()).collect();
    tag_order.sort_by(|&a, &b| partition.plan.tags[a].cmp(&partition.plan.tags[b]));
    let mut out = String::new();
    for (i, client) in partition.clients.iter().enumerate() {
        let role = groups.role_of(i).unwrap_or_else(|| "unassigned".into());
        let hist: Vec<String> = tag_order
            .iter()
            .filter(|&&g| hists[i][g] > 0)
            .map(|&g| format!("{}:{}", partition.plan.tags[g], hists[i][g]))
            .collect();
        let hist = if hist.is_empty() { "-".to_string() } else { hist.join(",") };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", client.tag(), role, client.len(), hist);
    }
    out
}
