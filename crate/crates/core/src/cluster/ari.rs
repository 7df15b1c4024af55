use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn pairs(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

fn contingency(a: &[usize], b: &[usize]) -> BTreeMap<(usize, usize), u64> {
    let mut table = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    table
}

/// Adjusted Rand Index from the pair-counting contingency table.
///
/// Returns 1 when both partitions are trivially identical (the expected and
/// maximum index coincide).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let table = contingency(a, b);
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    let mut index = 0.0;
    for (&(x, y), &c) in &table {
        *rows.entry(x).or_insert(0) += c;
        *cols.entry(y).or_insert(0) += c;
        index += pairs(c);
    }
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let expected = sum_a * sum_b / pairs(n);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Share of points whose label in `b` maps to their label in `a` when each
/// `b` cluster is matched to the `a` cluster it overlaps most.
pub fn label_agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let table = contingency(a, b);
    let mut best: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(_, y), &c) in &table {
        let e = best.entry(y).or_insert(0);
        *e = (*e).max(c);
    }
    Ok(best.values().sum::<u64>() as f64 / a.len() as f64)
}
