use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::relation::SimilarityRelation;
use crate::ensemble::RankList;
use crate::similarity::CoaPair;
use crate::stats::{mean, population_std, quantile_sorted};
use crate::{Error, Result};

/// Pairs or rank values to drop before computing μ and σ.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManualExclusions {
    pub pairs: BTreeSet<CoaPair>,
    pub ranks: Vec<f64>,
}

impl ManualExclusions {
    /// One entry per line: a rank number (`4291`) or a pair (`coa_a,coa_b`).
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut bad = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((a, b)) = line.split_once(',') {
                match CoaPair::new(a.trim(), b.trim()) {
                    Some(p) => {
                        out.pairs.insert(p);
                    }
                    None => bad.push(format!("line {}: pair of identical COAs", i + 1)),
                }
            } else {
                match line.parse::<f64>() {
                    Ok(r) if r.is_finite() => out.ranks.push(r),
                    _ => bad.push(format!("line {}: expected a rank or `coa_a,coa_b`", i + 1)),
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn excludes(&self, pair: &CoaPair, rank: f64) -> bool {
        self.pairs.contains(pair) || self.ranks.iter().any(|r| (r - rank).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum OutlierRule {
    /// Drop ranks above `Q3 + 1.5·IQR`.
    #[default]
    Tukey,
    Manual(ManualExclusions),
    /// Keep everything.
    None,
}

impl fmt::Display for OutlierRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutlierRule::Tukey => f.write_str("tukey"),
            OutlierRule::Manual(m) => write!(
                f,
                "manual({} pairs, {} ranks)",
                m.pairs.len(),
                m.ranks.len()
            ),
            OutlierRule::None => f.write_str("none"),
        }
    }
}

/// Parses the command-line form: `tukey`, `none`, or `manual:<file>`.
/// The manual list is read from disk immediately.
impl FromStr for OutlierRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tukey" => Ok(OutlierRule::Tukey),
            "none" => Ok(OutlierRule::None),
            _ => match s.strip_prefix("manual:") {
                Some(path) if !path.is_empty() => Ok(OutlierRule::Manual(ManualExclusions::load(
                    Path::new(path),
                )?)),
                _ => Err(Error::InvalidParameter(format!(
                    "outlier rule must be tukey, none or manual:<file>, got `{s}`"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub coa_a: String,
    pub coa_b: String,
    pub rank: f64,
}

impl RankedPair {
    fn new(pair: &CoaPair, rank: f64) -> Self {
        Self {
            coa_a: pair.first().to_string(),
            coa_b: pair.second().to_string(),
            rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub rule: String,
    pub kept_pairs: Vec<RankedPair>,
    pub outliers: Vec<RankedPair>,
    /// Tukey upper fence, when that rule was applied.
    pub fence: Option<f64>,
    pub mu: f64,
    /// Population standard deviation of the kept ranks.
    pub sigma: f64,
    pub threshold: f64,
}

impl ThresholdReport {
    /// Pairs with rank ≤ threshold count as similar.
    pub fn admits(&self, rank: f64) -> bool {
        rank <= self.threshold
    }
}

/// μ + 2σ of ranks after applying the outlier rule to `(pair, rank)` items.
pub fn threshold_from_ranks(
    items: &[(CoaPair, f64)],
    rule: &OutlierRule,
) -> Result<ThresholdReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no ranks to threshold".into()));
    }
    let mut items = items.to_vec();
    items.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let mut fence = None;
    let is_outlier: Box<dyn Fn(&CoaPair, f64) -> bool> = match rule {
        OutlierRule::Tukey => {
            let sorted: Vec<f64> = items.iter().map(|(_, r)| *r).collect();
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let upper = q3 + 1.5 * (q3 - q1);
            fence = Some(upper);
            Box::new(move |_, r| r > upper)
        }
        OutlierRule::Manual(m) => Box::new(move |p, r| m.excludes(p, r)),
        OutlierRule::None => Box::new(|_, _| false),
    };
    let (outliers, kept): (Vec<_>, Vec<_>) = items.iter().partition(|(p, r)| is_outlier(p, *r));
    if kept.is_empty() {
        return Err(Error::EmptyInput(
            "every rank was excluded as an outlier".into(),
        ));
    }
    let ranks: Vec<f64> = kept.iter().map(|(_, r)| *r).collect();
    let mu = mean(&ranks).expect("non-empty");
    let sigma = population_std(&ranks).expect("non-empty");
    Ok(ThresholdReport {
        rule: match rule {
            OutlierRule::Tukey => "tukey",
            OutlierRule::Manual(_) => "manual",
            OutlierRule::None => "none",
        }
        .to_string(),
        kept_pairs: kept.iter().map(|(p, r)| RankedPair::new(p, *r)).collect(),
        outliers: outliers
            .iter()
            .map(|(p, r)| RankedPair::new(p, *r))
            .collect(),
        fence,
        mu,
        sigma,
        threshold: mu + 2.0 * sigma,
    })
}

/// Threshold over the ensemble ranks of the relation's pairs.
pub fn determine_threshold(
    rel: &SimilarityRelation,
    ensemble: &RankList,
    rule: &OutlierRule,
) -> Result<ThresholdReport> {
    if rel.is_empty() {
        return Err(Error::EmptyInput(
            "similarity relation is empty; no ranks to threshold".into(),
        ));
    }
    let items = rel
        .pairs
        .iter()
        .map(|e| {
            ensemble
                .rank_of(&e.pair)
                .map(|r| (e.pair.clone(), r))
                .ok_or_else(|| Error::MissingPair(e.pair.first().into(), e.pair.second().into()))
        })
        .collect::<Result<Vec<_>>>()?;
    threshold_from_ranks(&items, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(ranks: &[f64]) -> Vec<(CoaPair, f64)> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    CoaPair::new(format!("A{i:03}"), format!("B{i:03}")).unwrap(),
                    *r,
                )
            })
            .collect()
    }

    #[test]
    fn mu_plus_two_sigma() {
        let rep = threshold_from_ranks(&items(&[32.0, 792.0]), &OutlierRule::None).unwrap();
        assert_eq!(rep.mu, 412.0);
        assert_eq!(rep.sigma, 380.0);
        assert_eq!(rep.threshold, 1172.0);
    }

    #[test]
    fn equal_ranks_give_sigma_zero() {
        let rep = threshold_from_ranks(&items(&[7.0; 5]), &OutlierRule::Tukey).unwrap();
        assert_eq!(rep.sigma, 0.0);
        assert_eq!(rep.threshold, 7.0);
        assert!(rep.outliers.is_empty());
    }

    #[test]
    fn tukey_drops_the_three_large_ranks() {
        let mut ranks: Vec<f64> = (1..=44).map(f64::from).collect();
        ranks.extend([2180.0, 4291.0, 8826.0]);
        let rep = threshold_from_ranks(&items(&ranks), &OutlierRule::Tukey).unwrap();
        // Q1 = 12.5, Q3 = 35.5 over 47 values
        assert_eq!(rep.fence, Some(35.5 + 1.5 * 23.0));
        let out: Vec<f64> = rep.outliers.iter().map(|p| p.rank).collect();
        assert_eq!(out, vec![2180.0, 4291.0, 8826.0]);
        assert_eq!(rep.kept_pairs.len(), 44);
        assert_eq!(rep.mu, 22.5);
    }

    #[test]
    fn manual_list_by_rank_and_pair() {
        let list = ManualExclusions::parse("# known outliers\n2180\n4291\nA046, B046\n").unwrap();
        let mut ranks: Vec<f64> = (1..=44).map(f64::from).collect();
        ranks.extend([2180.0, 4291.0, 8826.0]);
        let rep = threshold_from_ranks(&items(&ranks), &OutlierRule::Manual(list)).unwrap();
        assert_eq!(rep.outliers.len(), 3);
        assert_eq!(rep.kept_pairs.len(), 44);
        assert!(ManualExclusions::parse("x\ny,y\n").is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("tukey".parse::<OutlierRule>().unwrap(), OutlierRule::Tukey);
        assert_eq!("none".parse::<OutlierRule>().unwrap(), OutlierRule::None);
        assert!("manual:".parse::<OutlierRule>().is_err());
        assert!("zscore".parse::<OutlierRule>().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        std::fs::write(&path, "12\n").unwrap();
        let rule: OutlierRule = format!("manual:{}", path.display()).parse().unwrap();
        assert!(matches!(rule, OutlierRule::Manual(m) if m.ranks == vec![12.0]));
    }

    #[test]
    fn empty_relation_is_an_error() {
        let rel = SimilarityRelation {
            epsilon: 0.1,
            lambda: 0.1,
            n: 1,
            pairs: vec![],
        };
        let ens = RankList::new("ensemble", vec![]).unwrap();
        assert!(matches!(
            determine_threshold(&rel, &ens, &OutlierRule::Tukey),
            Err(Error::EmptyInput(_))
        ));
    }
}
