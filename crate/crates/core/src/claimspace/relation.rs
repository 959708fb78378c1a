use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cluster::ClusterAssignment;
use crate::corpus::Corpus;
use crate::similarity::{CoaPair, PairScoreTable};
use crate::{Error, Result};

/// Co-location counts for one COA pair: `s` cases of `pair.first()` and
/// `t` cases of `pair.second()` lie in clusters holding both COAs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEvidence {
    pub pair: CoaPair,
    pub s: usize,
    pub t: usize,
}

/// The pairs whose shared-cluster rates both reach λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRelation {
    pub epsilon: f64,
    pub lambda: f64,
    pub n: usize,
    pub pairs: Vec<PairEvidence>,
}

impl SimilarityRelation {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: &CoaPair) -> bool {
        self.pairs.binary_search_by(|e| e.pair.cmp(pair)).is_ok()
    }

    /// Distinct COAs appearing in any pair.
    pub fn coas(&self) -> BTreeSet<&str> {
        self.pairs
            .iter()
            .flat_map(|e| [e.pair.first(), e.pair.second()])
            .collect()
    }
}

/// Rates are compared with a small slack so that grid values such as
/// `0.015` built by repeated addition still admit `s = 3` at `n = 200`.
const RATE_SLACK: f64 = 1e-9;

fn passes(count: usize, n: usize, lambda: f64) -> bool {
    count as f64 >= lambda * n as f64 - RATE_SLACK
}

/// `s` and `t` for every distinct COA pair of a corpus at one clustering.
#[derive(Debug, Clone)]
pub struct CoLocation {
    epsilon: f64,
    n: usize,
    evidence: Vec<PairEvidence>,
}

impl CoLocation {
    pub fn new(assign: &ClusterAssignment, corpus: &Corpus, n: usize) -> Self {
        // per COA: sorted (cluster, case count)
        let per_coa: Vec<(&str, Vec<(usize, usize)>)> = corpus
            .coas()
            .map(|coa| {
                let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
                for case in corpus.cases_of(coa) {
                    if let Some(c) = assign.cluster_of(&case.case_id) {
                        *counts.entry(c).or_default() += 1;
                    }
                }
                (coa, counts.into_iter().collect())
            })
            .collect();
        let mut evidence = Vec::with_capacity(per_coa.len() * per_coa.len().saturating_sub(1) / 2);
        for (i, (x, cx)) in per_coa.iter().enumerate() {
            for (y, cy) in &per_coa[i + 1..] {
                let (mut s, mut t) = (0, 0);
                let (mut a, mut b) = (0, 0);
                while a < cx.len() && b < cy.len() {
                    match cx[a].0.cmp(&cy[b].0) {
                        std::cmp::Ordering::Less => a += 1,
                        std::cmp::Ordering::Greater => b += 1,
                        std::cmp::Ordering::Equal => {
                            s += cx[a].1;
                            t += cy[b].1;
                            a += 1;
                            b += 1;
                        }
                    }
                }
                // labels come from a BTreeMap, so x < y already
                let pair = CoaPair::new(*x, *y).expect("distinct COA labels");
                evidence.push(PairEvidence { pair, s, t });
            }
        }
        Self {
            epsilon: assign.epsilon,
            n,
            evidence,
        }
    }

    pub fn evidence(&self) -> &[PairEvidence] {
        &self.evidence
    }

    pub fn relation(&self, lambda: f64) -> SimilarityRelation {
        SimilarityRelation {
            epsilon: self.epsilon,
            lambda,
            n: self.n,
            pairs: self
                .evidence
                .iter()
                .filter(|e| passes(e.s, self.n, lambda) && passes(e.t, self.n, lambda))
                .cloned()
                .collect(),
        }
    }
}

/// Pairs `(x, y)` with `s/n ≥ λ` and `t/n ≥ λ`, where `s` counts cases of
/// `x` in clusters that also contain a case of `y` (and `t` vice versa).
pub fn similarity_relation(
    assign: &ClusterAssignment,
    corpus: &Corpus,
    lambda: f64,
    n: usize,
) -> SimilarityRelation {
    CoLocation::new(assign, corpus, n).relation(lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityResult {
    pub epsilon: f64,
    pub lambda: f64,
    pub utility: f64,
    /// |T_sim|, the number of distinct COAs in the relation.
    pub coa_set_size: usize,
    pub pair_count: usize,
    pub mean_dice: f64,
    pub relation: SimilarityRelation,
}

/// `|T_sim| × mean individual-Dice score over the relation's pairs`; an
/// empty relation scores 0.
pub fn utility(rel: &SimilarityRelation, dice_table: &PairScoreTable) -> Result<UtilityResult> {
    let lookup = dice_table.lookup();
    let mut sum = 0.0;
    for e in &rel.pairs {
        sum += lookup
            .get(&e.pair)
            .ok_or_else(|| Error::MissingPair(e.pair.first().into(), e.pair.second().into()))?;
    }
    let coa_set_size = rel.coas().len();
    let (mean_dice, utility) = if rel.pairs.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = sum / rel.pairs.len() as f64;
        (mean, coa_set_size as f64 * mean)
    };
    Ok(UtilityResult {
        epsilon: rel.epsilon,
        lambda: rel.lambda,
        utility,
        coa_set_size,
        pair_count: rel.pairs.len(),
        mean_dice,
        relation: rel.clone(),
    })
}
