//! Rating / trust ingestion and deterministic splitting.
//!
//! Ratings: `<user><TAB><item><TAB><rating>` per line, UTF-8, no header.
//! Trust: `<user><TAB><user>` per line. Commas are accepted in place of
//! tabs. Raw ids are arbitrary strings remapped to contiguous indices in
//! order of first appearance.

use std::collections::HashMap;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserSocialGraph;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: usize,
    pub item: usize,
    pub rating: u32,
}

/// Bijection between raw ids and contiguous indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, i: usize) -> &str {
        &self.raw[i]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Ratings with their id maps.
#[derive(Clone, Debug, Default)]
pub struct RatingData {
    pub records: Vec<RatingRecord>,
    pub users: IdMap,
    pub items: IdMap,
    pub rating_levels: usize,
}

impl RatingData {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Builds from already-indexed records; ids are the decimal indices.
    pub fn from_indexed(
        records: Vec<RatingRecord>,
        num_users: usize,
        num_items: usize,
        rating_levels: usize,
    ) -> Self {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        for u in 0..num_users {
            users.intern(&u.to_string());
        }
        for i in 0..num_items {
            items.intern(&i.to_string());
        }
        Self {
            records,
            users,
            items,
            rating_levels,
        }
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    let sep = if line.contains('\t') { '\t' } else { ',' };
    line.split(sep).map(str::trim).collect()
}

fn parse_rating(field: &str, levels: usize) -> std::result::Result<u32, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("rating `{field}` is not a number"))?;
    if v.fract() != 0.0 {
        return Err(format!("rating `{field}` is not an integer"));
    }
    if v < 1.0 || v > levels as f64 {
        return Err(format!("rating `{field}` outside 1..={levels}"));
    }
    Ok(v as u32)
}

/// Parses ratings text. Duplicate (user, item) pairs keep the last rating.
pub fn parse_ratings(text: &str, source: &str, rating_levels: usize) -> Result<RatingData> {
    let mut data = RatingData {
        rating_levels,
        ..RatingData::default()
    };
    let mut position: HashMap<(usize, usize), usize> = HashMap::new();
    let mut duplicates = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let fields = split_fields(line);
        if fields.len() < 3 {
            return Err(err(format!("expected user, item, rating; got `{line}`")));
        }
        let rating = parse_rating(fields[2], rating_levels).map_err(err)?;
        let user = data.users.intern(fields[0]);
        let item = data.items.intern(fields[1]);
        let rec = RatingRecord { user, item, rating };
        match position.get(&(user, item)) {
            Some(&p) => {
                duplicates += 1;
                data.records[p] = rec;
            }
            None => {
                position.insert((user, item), data.records.len());
                data.records.push(rec);
            }
        }
    }
    if data.records.is_empty() {
        return Err(Error::Data(format!("{source}: no ratings")));
    }
    if duplicates > 0 {
        warn!("{source}: {duplicates} duplicate (user, item) ratings; kept the last of each");
    }
    info!(
        "{source}: {} users, {} items, {} interactions",
        data.num_users(),
        data.num_items(),
        data.records.len()
    );
    Ok(data)
}

pub fn load_ratings(path: &Path, rating_levels: usize) -> Result<RatingData> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text, &path.display().to_string(), rating_levels)
}

/// Trust edges mapped into the rating user index space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrustData {
    pub graph: UserSocialGraph,
    pub raw_ties: usize,
    pub dropped_unknown: usize,
    pub dropped_self: usize,
}

pub fn parse_trust(text: &str, source: &str, users: &IdMap) -> Result<TrustData> {
    let mut edges = Vec::new();
    let mut raw_ties = 0;
    let mut dropped_unknown = 0;
    let mut dropped_self = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected two user ids, got `{line}`"),
            });
        }
        raw_ties += 1;
        if fields[0] == fields[1] {
            dropped_self += 1;
            continue;
        }
        match (users.get(fields[0]), users.get(fields[1])) {
            (Some(a), Some(b)) => edges.push((a, b)),
            _ => dropped_unknown += 1,
        }
    }
    let graph = UserSocialGraph::build(&edges, users.len())?;
    info!(
        "{source}: {raw_ties} raw ties, {} undirected edges, {dropped_unknown} dropped (user without ratings), {dropped_self} self ties",
        graph.num_edges()
    );
    Ok(TrustData {
        graph,
        raw_ties,
        dropped_unknown,
        dropped_self,
    })
}

pub fn load_trust(path: &Path, users: &IdMap) -> Result<TrustData> {
    let text = std::fs::read_to_string(path)?;
    parse_trust(&text, &path.display().to_string(), users)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// Training share in percent; validation and test split the rest evenly.
    pub x_percent: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<RatingRecord>,
    pub validation: Vec<RatingRecord>,
    pub test: Vec<RatingRecord>,
}

/// Seeded shuffle, then `x% / (1−x%)/2 / (1−x%)/2` partition.
pub fn split(records: &[RatingRecord], spec: SplitSpec) -> Result<Split> {
    if !(spec.x_percent > 0.0 && spec.x_percent < 100.0) {
        return Err(Error::Config(format!(
            "training share {}% must lie strictly between 0 and 100",
            spec.x_percent
        )));
    }
    let n = records.len();
    let n_train = ((n as f64) * spec.x_percent / 100.0).round() as usize;
    let rest = n - n_train.min(n);
    let n_val = rest / 2;
    let n_test = rest - n_val;
    if n_val == 0 || n_test == 0 {
        return Err(Error::Data(format!(
            "{n} records leave an empty validation or test set at {}%",
            spec.x_percent
        )));
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut rng::stream(spec.seed, "split"));
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(Split {
        train: shuffled,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tabs_and_commas() {
        let d = parse_ratings("a\tx\t5\nb,x,1\na\ty\t3.0\n", "t", 5).unwrap();
        assert_eq!(d.num_users(), 2);
        assert_eq!(d.num_items(), 2);
        assert_eq!(
            d.records[2],
            RatingRecord {
                user: 0,
                item: 1,
                rating: 3
            }
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_ratings("a\tb\t4\na\tb\tx\n", "r.tsv", 5).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        assert!(parse_ratings("a\tb\t4.5\n", "r", 5).is_err());
        assert!(parse_ratings("a\tb\t6\n", "r", 5).is_err());
        assert!(parse_ratings("a\tb\n", "r", 5).is_err());
        assert!(matches!(parse_ratings("\n", "r", 5), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_rating_keeps_last() {
        let d = parse_ratings("a\tb\t4\nc\tb\t2\na\tb\t1\n", "r", 5).unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0].rating, 1);
    }

    #[test]
    fn remapping_round_trips() {
        let d = parse_ratings("u9\ti3\t1\nu2\ti3\t2\nu9\ti1\t5\n", "r", 5).unwrap();
        for raw in ["u9", "u2"] {
            assert_eq!(d.users.raw(d.users.get(raw).unwrap()), raw);
        }
        for i in 0..d.num_items() {
            assert_eq!(d.items.get(d.items.raw(i)), Some(i));
        }
    }

    #[test]
    fn trust_cleanup() {
        let d = parse_ratings("a\tx\t1\nb\tx\t2\nc\tx\t3\n", "r", 5).unwrap();
        let t = parse_trust("a\tb\na\tb\nb\ta\nc\tc\nz\ta\n", "t", &d.users).unwrap();
        assert_eq!(t.graph.num_edges(), 1);
        assert_eq!(t.raw_ties, 5);
        assert_eq!(t.dropped_self, 1);
        assert_eq!(t.dropped_unknown, 1);
        assert!(matches!(
            parse_trust("a\n", "t", &d.users),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn records(n: usize) -> Vec<RatingRecord> {
        (0..n)
            .map(|i| RatingRecord {
                user: i % 37,
                item: i,
                rating: (i % 5) as u32 + 1,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        let recs = records(1000);
        let s = split(
            &recs,
            SplitSpec {
                x_percent: 80.0,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (800, 100, 100)
        );
        let mut all: Vec<_> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_by_key(|r| r.item);
        assert_eq!(all, recs);
        assert_eq!(
            s,
            split(
                &recs,
                SplitSpec {
                    x_percent: 80.0,
                    seed: 3
                }
            )
            .unwrap()
        );
        assert_ne!(
            s,
            split(
                &recs,
                SplitSpec {
                    x_percent: 80.0,
                    seed: 4
                }
            )
            .unwrap()
        );
    }

    #[test]
    fn split_rejects_empty_parts() {
        assert!(split(
            &records(3),
            SplitSpec {
                x_percent: 80.0,
                seed: 0
            }
        )
        .is_err());
        assert!(split(
            &records(10),
            SplitSpec {
                x_percent: 100.0,
                seed: 0
            }
        )
        .is_err());
    }
}
