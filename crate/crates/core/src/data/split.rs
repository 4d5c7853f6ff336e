use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

fn part_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::config("fractions", "must be non-negative and finite"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("fractions", format!("must sum to 1, got {total}")));
    }
    // largest remainder, ties to the earlier part
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if let Some(part) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyPart { part });
    }
    Ok(sizes)
}

/// Seeded random partition of `0..n` into parts with the given fractions.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = part_sizes(n, fractions)?;
    let mut perm: Vec<usize> = (0..n).collect();
    if sizes.len() > 1 {
        perm.shuffle(&mut rng_from_seed(seed));
    }
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(perm[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    Ok(split_indices(ds.len(), fractions, seed)?
        .iter()
        .map(|idx| ds.select(idx))
        .collect())
}
