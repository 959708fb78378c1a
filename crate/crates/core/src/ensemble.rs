//! Rankings over COA pairs and their rank-sum ensemble.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::similarity::{CoaPair, PairScoreTable};
use crate::stats::{fractional_ranks, pearson};
use crate::{Error, Result};

pub const ENSEMBLE_SOURCE: &str = "ensemble";

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub pair: CoaPair,
    /// 1 = most similar; tied pairs share the average of their positions.
    pub rank: f64,
    /// Sum of the base ranks, present on ensemble lists.
    pub total: Option<f64>,
}

/// Ranks for every pair of a score table, stored in canonical pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankList {
    pub source: String,
    entries: Vec<RankEntry>,
}

impl RankList {
    pub fn new(source: impl Into<String>, mut entries: Vec<RankEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.pair.cmp(&b.pair));
        if let Some(w) = entries.windows(2).find(|w| w[0].pair == w[1].pair) {
            return Err(Error::PairMismatch(format!(
                "pair {} listed twice",
                w[0].pair
            )));
        }
        Ok(Self {
            source: source.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[RankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, pair: &CoaPair) -> Option<f64> {
        self.entries
            .binary_search_by(|e| e.pair.cmp(pair))
            .ok()
            .map(|i| self.entries[i].rank)
    }

    /// Entries in rank order; equal ranks fall back to pair order.
    pub fn by_rank(&self) -> Vec<&RankEntry> {
        let mut sorted: Vec<&RankEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.rank.total_cmp(&b.rank).then_with(|| a.pair.cmp(&b.pair)));
        sorted
    }

    pub fn top(&self, k: usize) -> Vec<&RankEntry> {
        let mut v = self.by_rank();
        v.truncate(k);
        v
    }

    /// CSV `coa_a,coa_b,rank,total_rank,source`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coa_a", "coa_b", "rank", "total_rank", "source"])?;
        for e in &self.entries {
            let total = e.total.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([
                e.pair.first(),
                e.pair.second(),
                &e.rank.to_string(),
                &total,
                &self.source,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<rank list>", e))?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            coa_a: String,
            coa_b: String,
            rank: f64,
            total_rank: Option<f64>,
            source: String,
        }
        let mut source = None;
        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let row = row?;
            let pair = CoaPair::new(row.coa_a.clone(), row.coa_b).ok_or_else(|| {
                Error::InvalidParameter(format!("self-pair {} in rank list", row.coa_a))
            })?;
            source.get_or_insert(row.source);
            entries.push(RankEntry {
                pair,
                rank: row.rank,
                total: row.total_rank,
            });
        }
        Self::new(source.unwrap_or_default(), entries)
    }
}

/// Rank 1 goes to the highest score.
pub fn rank_pairs(table: &PairScoreTable) -> RankList {
    let ranks = fractional_ranks(&table.scores, |a, b| b.score.total_cmp(&a.score));
    let entries = table
        .scores
        .iter()
        .zip(ranks)
        .map(|(s, rank)| RankEntry {
            pair: s.pair.clone(),
            rank,
            total: None,
        })
        .collect();
    RankList::new(table.measure.as_str(), entries).expect("score tables hold distinct pairs")
}

/// Sums each pair's ranks across `lists` and re-ranks ascending by total.
pub fn ensemble_ranks(lists: &[RankList]) -> Result<RankList> {
    let Some(first) = lists.first() else {
        return Err(Error::EmptyInput(
            "ensemble needs at least one ranking".into(),
        ));
    };
    let mut totals: Vec<f64> = first.entries.iter().map(|e| e.rank).collect();
    for list in &lists[1..] {
        ensure_same_pairs(first, list)?;
        for (t, e) in totals.iter_mut().zip(&list.entries) {
            *t += e.rank;
        }
    }
    let ranks = fractional_ranks(&totals, |a, b| a.total_cmp(b));
    let entries = first
        .entries
        .iter()
        .zip(totals.iter().zip(ranks))
        .map(|(e, (&total, rank))| RankEntry {
            pair: e.pair.clone(),
            rank,
            total: Some(total),
        })
        .collect();
    Ok(RankList {
        source: ENSEMBLE_SOURCE.into(),
        entries,
    })
}

fn ensure_same_pairs(a: &RankList, b: &RankList) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::PairMismatch(format!(
            "`{}` has {} pairs, `{}` has {}",
            a.source,
            a.len(),
            b.source,
            b.len()
        )));
    }
    if let Some((x, y)) = a
        .entries
        .iter()
        .zip(&b.entries)
        .find(|(x, y)| x.pair != y.pair)
    {
        return Err(Error::PairMismatch(format!(
            "`{}` has {} where `{}` has {}",
            a.source, x.pair, b.source, y.pair
        )));
    }
    Ok(())
}

/// Pearson correlation between two rankings over the same pairs.
pub fn ranking_pcc(a: &RankList, b: &RankList) -> Result<f64> {
    ensure_same_pairs(a, b)?;
    let x: Vec<f64> = a.entries.iter().map(|e| e.rank).collect();
    let y: Vec<f64> = b.entries.iter().map(|e| e.rank).collect();
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "fewer than two ranked pairs".into(),
        ));
    }
    pearson(&x, &y).ok_or_else(|| {
        Error::UndefinedCorrelation(format!("`{}` or `{}` is fully tied", a.source, b.source))
    })
}

/// Pair -> rank lookup for quick membership queries.
pub fn rank_lookup(list: &RankList) -> HashMap<&CoaPair, f64> {
    list.entries.iter().map(|e| (&e.pair, e.rank)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{Measure, PairScore};
    use proptest::prelude::*;

    fn pair(i: usize) -> CoaPair {
        CoaPair::new(format!("a{i:03}"), format!("b{i:03}")).unwrap()
    }

    fn table(scores: &[f64]) -> PairScoreTable {
        PairScoreTable {
            measure: Measure::IndividualDice,
            scores: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| PairScore {
                    pair: pair(i),
                    score,
                    flags: String::new(),
                })
                .collect(),
        }
    }

    fn ranks(list: &RankList) -> Vec<f64> {
        list.entries().iter().map(|e| e.rank).collect()
    }

    fn list(source: &str, rs: &[f64]) -> RankList {
        RankList::new(
            source,
            rs.iter()
                .enumerate()
                .map(|(i, &rank)| RankEntry {
                    pair: pair(i),
                    rank,
                    total: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ranks_descending_with_fractional_ties() {
        assert_eq!(
            ranks(&rank_pairs(&table(&[0.9, 0.5, 0.1]))),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            ranks(&rank_pairs(&table(&[0.9, 0.9, 0.1]))),
            vec![1.5, 1.5, 3.0]
        );
        assert_eq!(ranks(&rank_pairs(&table(&[0.3; 4]))), vec![2.5; 4]);
    }

    #[test]
    fn ensemble_examples() {
        let base = list("x", &[2.0, 1.0, 3.0]);
        let e = ensemble_ranks(&[base.clone(), base.clone(), base.clone()]).unwrap();
        assert_eq!(ranks(&e), ranks(&base));
        assert_eq!(e.entries()[0].total, Some(6.0));

        // totals 6, 3, 9
        let e = ensemble_ranks(&[
            list("a", &[2.0, 1.0, 3.0]),
            list("b", &[2.0, 1.0, 3.0]),
            list("c", &[2.0, 1.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(ranks(&e), vec![2.0, 1.0, 3.0]);

        // P: 1 + 1 + 3 = 5, Q: 2 + 2 + 1 = 5
        let e = ensemble_ranks(&[
            list("a", &[1.0, 2.0]),
            list("b", &[1.0, 2.0]),
            list("c", &[3.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(ranks(&e), vec![1.5, 1.5]);
    }

    #[test]
    fn ensemble_rejects_mismatched_pairs() {
        let a = list("a", &[1.0, 2.0]);
        let b = list("b", &[1.0]);
        assert!(matches!(
            ensemble_ranks(&[a.clone(), b]),
            Err(Error::PairMismatch(_))
        ));
        let c = RankList::new(
            "c",
            vec![
                RankEntry {
                    pair: pair(0),
                    rank: 1.0,
                    total: None,
                },
                RankEntry {
                    pair: pair(7),
                    rank: 2.0,
                    total: None,
                },
            ],
        )
        .unwrap();
        assert!(matches!(
            ensemble_ranks(&[a, c]),
            Err(Error::PairMismatch(_))
        ));
    }

    #[test]
    fn ranking_pcc_examples() {
        let a = list("a", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ranking_pcc(&a, &a).unwrap(), 1.0);
        let rev = list("r", &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(ranking_pcc(&a, &rev).unwrap(), -1.0);
        let tied = list("t", &[2.5; 4]);
        assert!(matches!(
            ranking_pcc(&a, &tied),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let e =
            ensemble_ranks(&[list("a", &[1.0, 2.5, 2.5]), list("b", &[3.0, 1.0, 2.0])]).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(RankList::read_csv(buf.as_slice()).unwrap(), e);
    }

    /// Independent re-implementation: totals compared pairwise, rank =
    /// 1 + #strictly smaller + (#equal - 1) / 2.
    fn brute_force_ensemble(lists: &[Vec<f64>]) -> Vec<f64> {
        let n = lists[0].len();
        let totals: Vec<f64> = (0..n).map(|i| lists.iter().map(|l| l[i]).sum()).collect();
        totals
            .iter()
            .map(|t| {
                let less = totals.iter().filter(|o| *o < t).count() as f64;
                let equal = totals.iter().filter(|o| *o == t).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    }

    fn permutation(n: usize) -> impl Strategy<Value = Vec<f64>> {
        Just((1..=n).map(|r| r as f64).collect::<Vec<_>>()).prop_shuffle()
    }

    fn triple() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..=6).prop_flat_map(|n| prop::collection::vec(permutation(n), 3))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ensemble_matches_brute_force(lists in triple()) {
            let rls: Vec<RankList> = lists.iter().enumerate().map(|(i, l)| list(&i.to_string(), l)).collect();
            prop_assert_eq!(ranks(&ensemble_ranks(&rls).unwrap()), brute_force_ensemble(&lists));
        }
    }

    proptest! {
        #[test]
        fn rank_invariant_under_monotone_transform(scores in prop::collection::vec(-50i32..50, 1..30)) {
            let raw: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
            let mapped: Vec<f64> = raw.iter().map(|&s| 3.0 * s + 7.0).collect();
            let cubed: Vec<f64> = raw.iter().map(|&s| s * s * s).collect();
            let base = rank_pairs(&table(&raw));
            prop_assert_eq!(&rank_pairs(&table(&mapped)), &base);
            prop_assert_eq!(&rank_pairs(&table(&cubed)), &base);
            let total: f64 = ranks(&base).iter().sum();
            let n = raw.len() as f64;
            prop_assert_eq!(total, n * (n + 1.0) / 2.0);
        }

        #[test]
        fn ensemble_is_input_order_invariant(lists in triple()) {
            let rls: Vec<RankList> = lists.iter().enumerate().map(|(i, l)| list(&i.to_string(), l)).collect();
            let forward = ensemble_ranks(&rls).unwrap();
            let reversed: Vec<RankList> = rls.iter().rev().cloned().collect();
            prop_assert_eq!(ensemble_ranks(&reversed).unwrap(), forward);
        }

        #[test]
        fn ranking_pcc_is_symmetric(lists in triple()) {
            let a = list("a", &lists[0]);
            let b = list("b", &lists[1]);
            prop_assert_eq!(ranking_pcc(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(ranking_pcc(&a, &b).unwrap(), ranking_pcc(&b, &a).unwrap());
        }
    }
}
