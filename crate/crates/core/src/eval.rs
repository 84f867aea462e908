//! RMSE / MAE and per-sparsity-bucket breakdowns.

use serde::{Deserialize, Serialize};

use crate::data::RatingRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

pub fn metrics(preds: &[f64], truths: &[f64]) -> Result<Metrics> {
    if preds.len() != truths.len() {
        return Err(Error::dim(
            "metrics",
            format!("{} predictions for {} truths", preds.len(), truths.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Data("metrics over an empty set".into()));
    }
    let n = preds.len() as f64;
    let (sq, abs) = preds.iter().zip(truths).fold((0.0, 0.0), |(s, a), (p, t)| {
        (s + (p - t) * (p - t), a + (p - t).abs())
    });
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        count: preds.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Smallest and largest training-interaction count of its users.
    pub min_count: usize,
    pub max_count: usize,
    pub users: usize,
    /// Sum of the users' training-interaction counts.
    pub interaction_mass: usize,
    pub sum_squared_error: f64,
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub buckets: Vec<Bucket>,
}

/// Partitions test users, ordered by training-interaction count, into
/// `buckets` contiguous groups of roughly equal total interaction mass (see
/// [`balanced_partition`]) and reports metrics per group.
pub fn sparsity_report(
    test: &[RatingRecord],
    preds: &[f64],
    train_counts: &[usize],
    buckets: usize,
) -> Result<EvalReport> {
    if test.len() != preds.len() {
        return Err(Error::dim(
            "sparsity_report",
            "one prediction per test record",
        ));
    }
    let truths: Vec<f64> = test.iter().map(|r| f64::from(r.rating)).collect();
    let overall = metrics(preds, &truths)?;

    let mut users: Vec<usize> = test.iter().map(|r| r.user).collect();
    users.sort_unstable();
    users.dedup();
    if buckets == 0 || users.len() < buckets {
        return Err(Error::Data(format!(
            "{} evaluated users cannot fill {buckets} buckets",
            users.len()
        )));
    }
    let count = |u: usize| train_counts.get(u).copied().unwrap_or(0);
    users.sort_by_key(|&u| (count(u), u));

    let weights: Vec<usize> = users.iter().map(|&u| count(u)).collect();
    let ends = balanced_partition(&weights, buckets)?;
    let mut bucket_of = std::collections::HashMap::with_capacity(users.len());
    let mut start = 0;
    for (b, &end) in ends.iter().enumerate() {
        for &u in &users[start..end] {
            bucket_of.insert(u, b);
        }
        start = end;
    }

    let mut out: Vec<Bucket> = (0..buckets)
        .map(|_| Bucket {
            min_count: usize::MAX,
            max_count: 0,
            users: 0,
            interaction_mass: 0,
            sum_squared_error: 0.0,
            metrics: None,
        })
        .collect();
    for &u in &users {
        let b = &mut out[bucket_of[&u]];
        b.users += 1;
        b.interaction_mass += count(u);
        b.min_count = b.min_count.min(count(u));
        b.max_count = b.max_count.max(count(u));
    }
    let mut per_bucket: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); buckets];
    for (r, &p) in test.iter().zip(preds) {
        let (ps, ts) = &mut per_bucket[bucket_of[&r.user]];
        ps.push(p);
        ts.push(f64::from(r.rating));
    }
    for (b, (ps, ts)) in out.iter_mut().zip(per_bucket) {
        b.sum_squared_error = ps.iter().zip(&ts).map(|(p, t)| (p - t) * (p - t)).sum();
        if !ps.is_empty() {
            b.metrics = Some(metrics(&ps, &ts)?);
        }
        if b.users == 0 {
            b.min_count = 0;
        }
    }
    Ok(EvalReport {
        overall,
        buckets: out,
    })
}

/// Splits `weights` (in order) into `parts` non-empty contiguous runs and
/// returns the exclusive end index of each run.
///
/// The runs' total weights differ pairwise by at most the largest single
/// weight. The quantile cut (each item assigned by the midpoint of its own
/// cumulative span) is kept when it already meets that bound; otherwise the
/// cut is searched over mass windows `[lo, lo + max weight]`, starting from
/// the window closest to the mean.
pub fn balanced_partition(weights: &[usize], parts: usize) -> Result<Vec<usize>> {
    let n = weights.len();
    if parts == 0 || n < parts {
        return Err(Error::Data(format!(
            "{n} items cannot fill {parts} non-empty parts"
        )));
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &w in weights {
        prefix.push(prefix[prefix.len() - 1] + w);
    }
    let total = prefix[n];
    let widest = weights.iter().copied().max().unwrap_or(0);
    let spread = |ends: &[usize]| {
        let mut start = 0;
        let (mut lo, mut hi) = (usize::MAX, 0);
        for &end in ends {
            let mass = prefix[end] - prefix[start];
            lo = lo.min(mass);
            hi = hi.max(mass);
            start = end;
        }
        hi - lo
    };

    let quantile = quantile_cut(&prefix, parts);
    if spread(&quantile) <= widest {
        return Ok(quantile);
    }
    let mean_floor = total / parts;
    let lowest = total.div_ceil(parts).saturating_sub(widest);
    for lo in (lowest..=mean_floor).rev() {
        if let Some(ends) = window_cut(&prefix, parts, lo, lo + widest) {
            return Ok(ends);
        }
    }
    Ok(quantile)
}

fn quantile_cut(prefix: &[usize], parts: usize) -> Vec<usize> {
    let n = prefix.len() - 1;
    let total = prefix[n];
    let part_of = |i: usize| {
        if total == 0 {
            return i * parts / n;
        }
        let mid = prefix[i] as f64 + (prefix[i + 1] - prefix[i]) as f64 / 2.0;
        ((mid * parts as f64 / total as f64) as usize).min(parts - 1)
    };
    // Clamp so every part keeps at least one item.
    let mut ends = vec![0; parts];
    let mut i = 0;
    for (p, end) in ends.iter_mut().enumerate() {
        let min_end = i + 1;
        let max_end = n - (parts - 1 - p);
        let mut e = min_end;
        while e < max_end && part_of(e) <= p {
            e += 1;
        }
        *end = e;
        i = e;
    }
    ends
}

/// Contiguous cut with every part's mass in `[lo, hi]`, if one exists.
fn window_cut(prefix: &[usize], parts: usize, lo: usize, hi: usize) -> Option<Vec<usize>> {
    let n = prefix.len() - 1;
    // reach[p][j]: the first p + 1 parts can end exactly at item j.
    let mut reach = vec![vec![false; n + 1]; parts];
    for j in 1..=n {
        reach[0][j] = (lo..=hi).contains(&prefix[j]);
    }
    let starts = |j: usize| {
        // Indices i with prefix[j] - hi <= prefix[i] <= prefix[j] - lo.
        let a = prefix.partition_point(|&x| x + hi < prefix[j]);
        let b = prefix.partition_point(|&x| x + lo <= prefix[j]);
        (a, b)
    };
    for p in 1..parts {
        let (done, rest) = reach.split_at_mut(p);
        let mut seen = vec![0usize; n + 2];
        for (i, &r) in done[p - 1].iter().enumerate() {
            seen[i + 1] = seen[i] + usize::from(r);
        }
        for (j, cell) in rest[0].iter_mut().enumerate().skip(p + 1) {
            let (a, b) = starts(j);
            let (a, b) = (a.max(p), b.min(j));
            *cell = a < b && seen[b] > seen[a];
        }
    }
    if !reach[parts - 1][n] {
        return None;
    }
    let mut ends = vec![n; parts];
    let mut j = n;
    for p in (1..parts).rev() {
        let (a, b) = starts(j);
        let i = (a.max(p)..b.min(j)).rev().find(|&i| reach[p - 1][i])?;
        ends[p - 1] = i;
        j = i;
    }
    Some(ends)
}

/// Per-user interaction counts over `records`.
pub fn interaction_counts(records: &[RatingRecord], num_users: usize) -> Vec<usize> {
    let mut counts = vec![0; num_users];
    for r in records {
        counts[r.user] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.rmse, m.mae), (0.0, 0.0));
        let m = metrics(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.mae, 1.0);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn single_user_single_bucket() {
        let test = vec![
            RatingRecord {
                user: 0,
                item: 0,
                rating: 3,
            },
            RatingRecord {
                user: 0,
                item: 1,
                rating: 4,
            },
        ];
        let r = sparsity_report(&test, &[3.0, 3.0], &[5], 1).unwrap();
        assert_eq!(r.buckets.len(), 1);
        assert_eq!(r.buckets[0].users, 1);
        assert_eq!(r.buckets[0].metrics.unwrap().count, 2);
        assert!(sparsity_report(&test, &[3.0, 3.0], &[5], 2).is_err());
    }

    fn masses(weights: &[usize], ends: &[usize]) -> Vec<usize> {
        let mut start = 0;
        ends.iter()
            .map(|&end| {
                let m = weights[start..end].iter().sum();
                start = end;
                m
            })
            .collect()
    }

    #[test]
    fn quantile_cut_fallback() {
        // The midpoint rule gives masses 3, 8, 4 here.
        let w = [0, 0, 3, 4, 4, 4];
        assert_eq!(
            masses(&w, &quantile_cut(&[0, 0, 0, 3, 7, 11, 15], 3)),
            vec![3, 8, 4]
        );
        let ends = balanced_partition(&w, 3).unwrap();
        assert_eq!(masses(&w, &ends), vec![7, 4, 4]);
    }

    #[test]
    fn partition_bound_exhaustive() {
        fn visit(prefix: &mut Vec<usize>, len: usize, max: usize) {
            if prefix.len() == len {
                let widest = prefix.iter().copied().max().unwrap();
                for parts in 1..=len {
                    let ends = balanced_partition(prefix, parts).unwrap();
                    assert_eq!(ends.len(), parts);
                    assert_eq!(ends[parts - 1], len);
                    assert!(ends.windows(2).all(|e| e[0] < e[1]) && ends[0] > 0);
                    let m = masses(prefix, &ends);
                    let spread = m.iter().max().unwrap() - m.iter().min().unwrap();
                    assert!(spread <= widest, "{prefix:?} into {parts}: {m:?}");
                }
                return;
            }
            let from = prefix.last().copied().unwrap_or(0);
            for w in from..=max {
                prefix.push(w);
                visit(prefix, len, max);
                prefix.pop();
            }
        }
        for len in 1..=7 {
            visit(&mut Vec::new(), len, 7);
        }
        assert!(balanced_partition(&[1, 2], 3).is_err());
        assert!(balanced_partition(&[1, 2], 0).is_err());
    }
}
