use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cluster::{ClusterIndex, Metric};
use super::relation::{utility, CoLocation, UtilityResult};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingSet;
use crate::similarity::PairScoreTable;
use crate::{Error, Result};

/// Candidate λ values, ascending, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("lambda grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "lambda {v} outside (0, 1]"
            )));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self(values))
    }

    /// `start, start + step, …` up to and including `end`.
    pub fn range(start: f64, step: f64, end: f64) -> Result<Self> {
        if !(step > 0.0) || end < start {
            return Err(Error::InvalidParameter(format!(
                "bad lambda range {start}:{step}:{end}"
            )));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        // round so that 0.005 * 3 prints and compares as 0.015
        let values = (0..count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for LambdaGrid {
    /// `0.005, 0.010, …, 1.000`.
    fn default() -> Self {
        Self::range(0.005, 0.005, 1.0).expect("static grid")
    }
}

impl FromStr for LambdaGrid {
    type Err = Error;

    /// `start:step:end`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad lambda grid `{s}`")))
        };
        match parts.as_slice() {
            [a, b, c] => Self::range(parse(a)?, parse(b)?, parse(c)?),
            _ => Err(Error::InvalidParameter(format!(
                "lambda grid must be start:step:end, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSettings {
    pub budget: usize,
    /// Initial temperature as a fraction of the initial utility …
    pub initial_temp_fraction: f64,
    /// … but never below this.
    pub min_initial_temp: f64,
    pub cooling: f64,
    /// Standard deviation of the ε step, as a fraction of the bound width.
    pub step_fraction: f64,
    /// ε is snapped to multiples of this before evaluation.
    pub epsilon_resolution: f64,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        Self {
            budget: 2000,
            initial_temp_fraction: 0.1,
            min_initial_temp: 1.0,
            cooling: 0.95,
            step_fraction: 0.05,
            epsilon_resolution: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub utility: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    pub best_epsilon: f64,
    pub best_lambda: f64,
    pub best_utility: f64,
    pub trace: Vec<TraceRow>,
    /// Distinct `(ε cell, λ)` points evaluated.
    pub evaluations: usize,
}

pub fn write_trace_csv(trace: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "epsilon", "lambda", "utility", "accepted"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.epsilon.to_string(),
            r.lambda.to_string(),
            r.utility.to_string(),
            r.accepted.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

/// Chance that a proposal keeps λ in place. Without it the chain can
/// never refine ε inside the best λ cell once it gets there; kept small so
/// λ still mixes quickly on flat ground.
const LAMBDA_STAY: f64 = 0.1;

fn snap(eps: f64, lo: f64, hi: f64, resolution: f64) -> (f64, i64) {
    let cell = (eps / resolution).round() as i64;
    let snapped = ((cell as f64) * resolution).clamp(lo, hi);
    let snapped = (snapped * 1e12).round() / 1e12;
    (snapped, cell)
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let mut x = x;
    // at most a couple of passes for steps smaller than the width
    for _ in 0..4 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            break;
        }
    }
    x.clamp(lo, hi)
}

/// Maximizes `objective(ε, λ)` by simulated annealing over continuous ε in
/// `bounds` and λ on `grid`.
///
/// Each iteration perturbs ε by a Gaussian step and moves λ at most one
/// grid step; worse proposals are accepted with probability `exp(Δ/T)`
/// under geometric cooling. The first iteration evaluates the random
/// starting point. Values are memoized per (snapped ε, λ).
pub fn anneal<F>(
    bounds: (f64, f64),
    grid: &LambdaGrid,
    settings: &AnnealSettings,
    seed: u64,
    mut objective: F,
) -> Result<AnnealOutcome>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon bounds must satisfy 0 < lo <= hi, got {lo}:{hi}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("lambda grid is empty".into()));
    }
    if settings.budget == 0 {
        return Err(Error::InvalidParameter(
            "annealing budget must be at least 1".into(),
        ));
    }
    if !(settings.cooling > 0.0 && settings.cooling < 1.0) {
        return Err(Error::InvalidParameter(
            "cooling factor must lie in (0, 1)".into(),
        ));
    }

    let lambdas = grid.values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (settings.step_fraction * (hi - lo)).max(f64::MIN_POSITIVE);
    let step = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut memo: HashMap<(i64, usize), f64> = HashMap::new();
    let mut eval = |eps: f64, li: usize| -> Result<(f64, f64)> {
        let (snapped, cell) = snap(eps, lo, hi, settings.epsilon_resolution);
        if let Some(&u) = memo.get(&(cell, li)) {
            return Ok((snapped, u));
        }
        let u = objective(snapped, lambdas[li])?;
        memo.insert((cell, li), u);
        Ok((snapped, u))
    };

    let start_eps = rng.random_range(lo..=hi);
    let start_li = rng.random_range(0..lambdas.len());
    let (mut cur_eps, mut cur_u) = eval(start_eps, start_li)?;
    let mut cur_li = start_li;
    let mut trace = vec![TraceRow {
        iteration: 0,
        epsilon: cur_eps,
        lambda: lambdas[cur_li],
        utility: cur_u,
        accepted: true,
    }];
    let (mut best_eps, mut best_li, mut best_u) = (cur_eps, cur_li, cur_u);
    let mut temp = (settings.initial_temp_fraction * cur_u.abs()).max(settings.min_initial_temp);

    for iteration in 1..settings.budget {
        let prop_eps = reflect(cur_eps + step.sample(&mut rng), lo, hi);
        let roll_li: f64 = rng.random();
        let prop_li = if lambdas.len() == 1 || roll_li < LAMBDA_STAY {
            cur_li
        } else if roll_li < (1.0 + LAMBDA_STAY) / 2.0 {
            if cur_li > 0 {
                cur_li - 1
            } else {
                cur_li + 1
            }
        } else if cur_li + 1 < lambdas.len() {
            cur_li + 1
        } else {
            cur_li - 1
        };
        let (prop_eps, prop_u) = eval(prop_eps, prop_li)?;
        let delta = prop_u - cur_u;
        let roll: f64 = rng.random();
        let accepted = delta >= 0.0 || roll < (delta / temp).exp();
        if accepted {
            cur_eps = prop_eps;
            cur_li = prop_li;
            cur_u = prop_u;
            if cur_u > best_u {
                best_eps = cur_eps;
                best_li = cur_li;
                best_u = cur_u;
            }
        }
        trace.push(TraceRow {
            iteration,
            epsilon: prop_eps,
            lambda: lambdas[prop_li],
            utility: prop_u,
            accepted,
        });
        temp *= settings.cooling;
    }

    Ok(AnnealOutcome {
        best_epsilon: best_eps,
        best_lambda: lambdas[best_li],
        best_utility: best_u,
        trace,
        evaluations: memo.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub epsilon_bounds: (f64, f64),
    pub lambda_grid: LambdaGrid,
    pub min_pts: usize,
    pub metric: Metric,
    pub settings: AnnealSettings,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            epsilon_bounds: (0.01, 1.0),
            lambda_grid: LambdaGrid::default(),
            min_pts: 1,
            metric: Metric::Cosine,
            settings: AnnealSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimization {
    pub best: UtilityResult,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

/// Searches (ε, λ) for the highest utility of the cluster-derived
/// similarity relation. `n` is the per-COA sample size.
pub fn optimize(
    emb: &EmbeddingSet,
    corpus: &Corpus,
    dice_table: &PairScoreTable,
    n: usize,
    params: &SearchParams,
    seed: u64,
) -> Result<Optimization> {
    let index = ClusterIndex::new(emb, params.metric)?;
    // co-location depends only on ε; keep the most recent cells around
    let mut colocations: HashMap<u64, CoLocation> = HashMap::new();
    let mut colocation = |eps: f64| -> Result<CoLocation> {
        let key = eps.to_bits();
        if let Some(c) = colocations.get(&key) {
            return Ok(c.clone());
        }
        let assign = index.assign(eps, params.min_pts)?;
        let c = CoLocation::new(&assign, corpus, n);
        if colocations.len() >= 64 {
            colocations.clear();
        }
        colocations.insert(key, c.clone());
        Ok(c)
    };
    let outcome = anneal(
        params.epsilon_bounds,
        &params.lambda_grid,
        &params.settings,
        seed,
        |eps, lambda| Ok(utility(&colocation(eps)?.relation(lambda), dice_table)?.utility),
    )?;
    let best_assign = index.assign(outcome.best_epsilon, params.min_pts)?;
    let rel = CoLocation::new(&best_assign, corpus, n).relation(outcome.best_lambda);
    let best = utility(&rel, dice_table)?;
    Ok(Optimization {
        best,
        trace: outcome.trace,
        evaluations: outcome.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: LambdaGrid = "0.005:0.005:1".parse().unwrap();
        assert_eq!(g.len(), 200);
        assert_eq!(g.values()[0], 0.005);
        assert_eq!(g.values()[2], 0.015);
        assert_eq!(*g.values().last().unwrap(), 1.0);
        assert_eq!(g, LambdaGrid::default());
        assert!("0:0.1:1".parse::<LambdaGrid>().is_err());
        assert!("0.1:0.1".parse::<LambdaGrid>().is_err());
        assert!("0.5:0.1:0.2".parse::<LambdaGrid>().is_err());
    }

    /// Positive only at λ = 0.5 with ε in [0.5, 0.6).
    fn needle(eps: f64, lambda: f64) -> f64 {
        if (0.5..0.6).contains(&eps) && (lambda - 0.5).abs() < 1e-9 {
            3.0
        } else {
            0.0
        }
    }

    fn exhaustive_best(
        bounds: (f64, f64),
        grid: &LambdaGrid,
        res: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> f64 {
        let cells = ((bounds.1 - bounds.0) / res).round() as usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=cells {
            let eps = bounds.0 + i as f64 * res;
            for &l in grid.values() {
                best = best.max(f(eps, l));
            }
        }
        best
    }

    #[test]
    fn finds_single_positive_cell() {
        let grid = LambdaGrid::range(0.1, 0.1, 1.0).unwrap();
        let bounds = (0.1, 1.0);
        let oracle = exhaustive_best(bounds, &grid, 1e-3, needle);
        assert_eq!(oracle, 3.0);
        let settings = AnnealSettings {
            budget: 500,
            ..Default::default()
        };
        // flat ground is a random walk, so ask for a hit rate, not certainty
        let mut hits = 0;
        for seed in 0..40 {
            let out = anneal(bounds, &grid, &settings, seed, |e, l| Ok(needle(e, l))).unwrap();
            if out.best_utility == oracle {
                assert_eq!(out.best_lambda, 0.5);
                assert!((0.5..0.6).contains(&out.best_epsilon));
                hits += 1;
            }
        }
        assert!(hits >= 34, "{hits}/40");
    }

    #[test]
    fn budget_one_returns_start() {
        let grid = LambdaGrid::default();
        let settings = AnnealSettings {
            budget: 1,
            ..Default::default()
        };
        let mut calls = 0;
        let out = anneal((0.1, 0.9), &grid, &settings, 4, |e, l| {
            calls += 1;
            Ok(e + l)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.best_utility, out.trace[0].utility);
        assert_eq!(out.best_epsilon, out.trace[0].epsilon);
    }

    #[test]
    fn deterministic_and_monotone_in_budget() {
        let grid = LambdaGrid::default();
        let f = |e: f64, l: f64| Ok((e * 7.0).sin() * (l * 11.0).cos());
        let mut prev = f64::NEG_INFINITY;
        for budget in [1, 5, 20, 100, 400] {
            let s = AnnealSettings {
                budget,
                ..Default::default()
            };
            let a = anneal((0.05, 1.0), &grid, &s, 9, f).unwrap();
            let b = anneal((0.05, 1.0), &grid, &s, 9, f).unwrap();
            assert_eq!(a, b);
            assert!(a.best_utility >= prev);
            prev = a.best_utility;
        }
    }

    #[test]
    fn rejects_invalid_bounds() {
        let grid = LambdaGrid::default();
        let s = AnnealSettings::default();
        assert!(anneal((0.0, 1.0), &grid, &s, 0, |_, _| Ok(0.0)).is_err());
        assert!(anneal((0.5, 0.4), &grid, &s, 0, |_, _| Ok(0.0)).is_err());
    }

    #[test]
    fn proposals_stay_in_bounds() {
        let grid = LambdaGrid::range(0.1, 0.1, 0.3).unwrap();
        let s = AnnealSettings {
            budget: 300,
            step_fraction: 0.5,
            ..Default::default()
        };
        let out = anneal((0.2, 0.3), &grid, &s, 1, |_, _| Ok(0.0)).unwrap();
        for r in &out.trace {
            assert!((0.2..=0.3).contains(&r.epsilon));
            assert!(grid.values().contains(&r.lambda));
        }
    }
}
