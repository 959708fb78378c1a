//! COA-pair similarity from co-cited articles.
//!
//! Three measures are provided:
//!
//! - [`Measure::IndividualDice`]: mean Dice coefficient over all cross-COA
//!   case pairs,
//! - [`Measure::WholisticPcc`]: Pearson correlation of the per-COA citation
//!   count vectors over all α columns,
//! - [`Measure::WholisticDice`]: Dice coefficient of the per-COA unions.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::vectors::{
    aggregate_vector, binarize, case_vector, ArticleIndex, CitationVector, CountVector,
};
use crate::{Error, Result};

/// An unordered pair of distinct COA labels, stored with `first < second`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoaPair {
    first: String,
    second: String,
}

impl CoaPair {
    /// `None` when both labels are equal.
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Option<Self> {
        let (x, y) = (x.into(), y.into());
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(Self {
                first: x,
                second: y,
            }),
            std::cmp::Ordering::Greater => Some(Self {
                first: y,
                second: x,
            }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(&self) -> &str {
        &self.first
    }

    pub fn second(&self) -> &str {
        &self.second
    }

    pub fn contains(&self, coa: &str) -> bool {
        self.first == coa || self.second == coa
    }
}

impl fmt::Display for CoaPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.first, self.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    IndividualDice,
    WholisticPcc,
    WholisticDice,
}

impl Measure {
    pub const ALL: [Measure; 3] = [
        Measure::IndividualDice,
        Measure::WholisticPcc,
        Measure::WholisticDice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::IndividualDice => "individual_dice",
            Measure::WholisticPcc => "wholistic_pcc",
            Measure::WholisticDice => "wholistic_dice",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown measure `{s}`")))
    }
}

/// Dice coefficient `2|a∩b| / (|a|+|b|)`; two empty sets score 0.
pub fn dice(a: &CitationVector, b: &CitationVector) -> f64 {
    let denom = a.len() + b.len();
    if denom == 0 {
        return 0.0;
    }
    (2 * a.intersection_len(b)) as f64 / denom as f64
}

/// Pearson correlation of two count vectors read as dense length-`dim`
/// sequences with implicit zeros.
///
/// Counts are integers, so the sums of the raw-moment formula are exact
/// and only the final division and square root round.
pub fn pcc(a: &CountVector, b: &CountVector, dim: usize) -> Result<f64> {
    for &(c, _) in a.entries().iter().chain(b.entries()) {
        if c as usize >= dim {
            return Err(Error::InvalidParameter(format!(
                "column {c} outside dimension {dim}"
            )));
        }
    }
    let n = dim as i128;
    let moments = |v: &CountVector| {
        v.entries().iter().fold((0i128, 0i128), |(s, ss), &(_, x)| {
            let x = x as i128;
            (s + x, ss + x * x)
        })
    };
    let (sa, saa) = moments(a);
    let (sb, sbb) = moments(b);
    let mut sab = 0i128;
    let (ea, eb) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sab += ea[i].1 as i128 * eb[j].1 as i128;
                i += 1;
                j += 1;
            }
        }
    }
    let var_a = n * saa - sa * sa;
    let var_b = n * sbb - sb * sb;
    if var_a == 0 || var_b == 0 {
        return Err(Error::UndefinedCorrelation(
            "a count vector is constant over all columns".into(),
        ));
    }
    let cov = n * sab - sa * sb;
    let r = cov as f64 / ((var_a as f64).sqrt() * (var_b as f64).sqrt());
    Ok(r.clamp(-1.0, 1.0))
}

/// Mean Dice coefficient over every `(x, y)` in `xs × ys`.
pub fn avg_pairwise_dice(xs: &[CitationVector], ys: &[CitationVector]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyInput(
            "average pairwise Dice needs cases on both sides".into(),
        ));
    }
    // summing in sorted order makes the result exactly symmetric in (xs, ys)
    let mut terms: Vec<f64> = xs
        .iter()
        .flat_map(|x| ys.iter().map(move |y| dice(x, y)))
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>() / (xs.len() * ys.len()) as f64)
}

/// Dice coefficient of the two COAs' citation unions.
pub fn wholistic_dice(xs: &[CitationVector], ys: &[CitationVector]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyInput(
            "wholistic Dice needs cases on both sides".into(),
        ));
    }
    Ok(dice(
        &binarize(&aggregate_vector(xs)),
        &binarize(&aggregate_vector(ys)),
    ))
}

/// Precomputed vectors for one COA.
#[derive(Debug, Clone)]
pub struct CoaProfile {
    pub coa: String,
    pub case_count: usize,
    /// Distinct case vectors with their multiplicities.
    pub distinct: Vec<(CitationVector, u32)>,
    pub counts: CountVector,
    pub union: CitationVector,
}

impl CoaProfile {
    pub fn new(coa: impl Into<String>, cases: &[CitationVector]) -> Self {
        let mut tally: HashMap<&CitationVector, u32> = HashMap::new();
        for v in cases {
            *tally.entry(v).or_default() += 1;
        }
        let mut distinct: Vec<(CitationVector, u32)> =
            tally.into_iter().map(|(v, n)| (v.clone(), n)).collect();
        distinct.sort();
        let counts = aggregate_vector(cases);
        let union = binarize(&counts);
        Self {
            coa: coa.into(),
            case_count: cases.len(),
            distinct,
            counts,
            union,
        }
    }

    fn avg_dice(&self, other: &Self) -> Result<f64> {
        if self.case_count == 0 || other.case_count == 0 {
            return Err(Error::EmptyInput(format!(
                "COA pair ({}, {}) has a side without cases",
                self.coa, other.coa
            )));
        }
        let mut total = 0.0;
        for (x, wx) in &self.distinct {
            let mut row = 0.0;
            for (y, wy) in &other.distinct {
                row += dice(x, y) * f64::from(*wy);
            }
            total += row * f64::from(*wx);
        }
        Ok(total / (self.case_count * other.case_count) as f64)
    }
}

/// One profile per COA, in label order.
pub fn coa_profiles(corpus: &Corpus, index: &ArticleIndex) -> Result<Vec<CoaProfile>> {
    corpus
        .coas()
        .map(|coa| {
            let vectors = corpus
                .cases_of(coa)
                .map(|c| case_vector(c, index))
                .collect::<Result<Vec<_>>>()?;
            Ok(CoaProfile::new(coa, &vectors))
        })
        .collect()
}

pub const FLAG_UNDEFINED_PCC: &str = "undefined_pcc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: CoaPair,
    pub score: f64,
    /// Empty, or a flag such as [`FLAG_UNDEFINED_PCC`].
    pub flags: String,
}

/// Scores of one measure over every unordered COA pair, sorted by pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScoreTable {
    pub measure: Measure,
    pub scores: Vec<PairScore>,
}

impl PairScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn lookup(&self) -> HashMap<&CoaPair, f64> {
        self.scores.iter().map(|s| (&s.pair, s.score)).collect()
    }

    /// Entries sorted by descending score, ties by pair.
    pub fn top(&self, k: usize) -> Vec<&PairScore> {
        let mut sorted: Vec<&PairScore> = self.scores.iter().collect();
        sorted.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.pair.cmp(&b.pair))
        });
        sorted.truncate(k);
        sorted
    }

    /// CSV `coa_a,coa_b,score,flags`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coa_a", "coa_b", "score", "flags"])?;
        for s in &self.scores {
            w.write_record([
                s.pair.first(),
                s.pair.second(),
                &s.score.to_string(),
                &s.flags,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<pair table>", e))?;
        Ok(())
    }

    pub fn read_csv(measure: Measure, input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            coa_a: String,
            coa_b: String,
            score: f64,
            #[serde(default)]
            flags: String,
        }
        let mut scores = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let row = row?;
            let pair = CoaPair::new(row.coa_a.clone(), row.coa_b.clone()).ok_or_else(|| {
                Error::InvalidParameter(format!("self-pair {} in score table", row.coa_a))
            })?;
            scores.push(PairScore {
                pair,
                score: row.score,
                flags: row.flags,
            });
        }
        scores.sort_by(|a, b| a.pair.cmp(&b.pair));
        Ok(Self { measure, scores })
    }
}

/// Scores every unordered pair of COAs in `corpus` under `measure`.
pub fn pair_table(
    corpus: &Corpus,
    index: &ArticleIndex,
    measure: Measure,
) -> Result<PairScoreTable> {
    let profiles = coa_profiles(corpus, index)?;
    pair_table_from_profiles(&profiles, index.len(), measure)
}

/// Like [`pair_table`] but over precomputed profiles, so several measures
/// can share one vectorization pass. `dim` is the index size α.
pub fn pair_table_from_profiles(
    profiles: &[CoaProfile],
    dim: usize,
    measure: Measure,
) -> Result<PairScoreTable> {
    let m = profiles.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (&profiles[i], &profiles[j]);
            let pair = CoaPair::new(x.coa.clone(), y.coa.clone()).ok_or_else(|| {
                Error::InvalidParameter(format!("duplicate COA profile {}", x.coa))
            })?;
            let (score, flags) = match measure {
                Measure::IndividualDice => (x.avg_dice(y)?, String::new()),
                Measure::WholisticDice => (dice(&x.union, &y.union), String::new()),
                Measure::WholisticPcc => match pcc(&x.counts, &y.counts, dim) {
                    Ok(r) => (r, String::new()),
                    Err(Error::UndefinedCorrelation(_)) => {
                        log::warn!("pcc undefined for {pair}; scored -1");
                        (-1.0, FLAG_UNDEFINED_PCC.to_string())
                    }
                    Err(e) => return Err(e),
                },
            };
            Ok(PairScore { pair, score, flags })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairScoreTable { measure, scores })
}
