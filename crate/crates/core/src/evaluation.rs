//! Filtered link-prediction ranking.
//!
//! Every evaluated triple `(h, r, t)` yields two tail queries: `(h, r, ?)` with
//! target `t`, and `(t, r^-1, ?)` with target `h`. Other candidates known to be
//! true anywhere in the dataset are removed before ranking.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{categorize_relations, Category, EtaSource, KgDataset, Split, Triple};
use crate::error::{Error, Result};
use crate::model::{score_against_all_tails_into, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// `1 + #{strictly better}`.
    Optimistic,
    /// Optimistic rank plus the number of tied competitors.
    Pessimistic,
    /// Mean of the two.
    #[default]
    Mean,
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Pessimistic => "pessimistic",
            TiePolicy::Mean => "mean",
        })
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "mean" => Ok(TiePolicy::Mean),
            other => Err(Error::Config(format!("unknown tie policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    /// The evaluated triple in its original (base-relation) form.
    pub triple: Triple,
    pub direction: Direction,
    /// `>= 1`; half-integers are possible under [`TiePolicy::Mean`].
    pub rank: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Self {
        let mut m = Metrics::default();
        for rank in ranks {
            m.n_queries += 1;
            m.mrr += 1.0 / rank;
            m.hits1 += (rank <= 1.0) as u8 as f64;
            m.hits3 += (rank <= 3.0) as u8 as f64;
            m.hits10 += (rank <= 10.0) as u8 as f64;
        }
        if m.n_queries > 0 {
            let n = m.n_queries as f64;
            m.mrr /= n;
            m.hits1 /= n;
            m.hits3 /= n;
            m.hits10 /= n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub split: Option<Split>,
    pub tie_policy: TiePolicy,
    pub queries: Vec<QueryRank>,
    pub metrics: Metrics,
    /// Present only after [`evaluate_by_category`]; empty categories are absent.
    pub per_category: Option<BTreeMap<Category, Metrics>>,
}

impl RankReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "mrr": self.metrics.mrr,
            "hits1": self.metrics.hits1,
            "hits3": self.metrics.hits3,
            "hits10": self.metrics.hits10,
            "n_queries": self.metrics.n_queries,
            "tie_policy": self.tie_policy.to_string(),
            "split": self.split.map(|s| s.to_string()),
        });
        if let Some(cats) = &self.per_category {
            obj["per_category"] = serde_json::to_value(cats).expect("metrics serialize");
        }
        obj
    }
}

/// Rank of `target` among `scores`, skipping candidates in `filtered` other than the target.
pub fn rank_from_scores(
    scores: &[f64],
    target: usize,
    filtered: Option<&HashSet<usize>>,
    tie: TiePolicy,
) -> Result<f64> {
    let target_score = *scores.get(target).ok_or(Error::Lookup {
        kind: "entity",
        id: target,
        size: scores.len(),
    })?;
    if target_score.is_nan() {
        return Err(Error::Numeric(format!("target {target} scored NaN")));
    }
    let (mut better, mut ties) = (0usize, 0usize);
    for (cand, &s) in scores.iter().enumerate() {
        if cand == target || filtered.is_some_and(|f| f.contains(&cand)) {
            continue;
        }
        if s > target_score {
            better += 1;
        } else if s == target_score {
            ties += 1;
        }
    }
    let optimistic = 1.0 + better as f64;
    let pessimistic = optimistic + ties as f64;
    Ok(match tie {
        TiePolicy::Optimistic => optimistic,
        TiePolicy::Pessimistic => pessimistic,
        TiePolicy::Mean => 0.5 * (optimistic + pessimistic),
    })
}

/// Filtered rank of `t` for the tail query `(h, r, ?)`; `r` may be an inverse relation id.
pub fn filtered_rank(
    state: &ModelState,
    ds: &KgDataset,
    h: usize,
    r: usize,
    t: usize,
    tie: TiePolicy,
) -> Result<f64> {
    let mut scores = vec![0.0; state.n_entities()];
    let mut rotated = vec![0.0; state.dim() + 1];
    filtered_rank_with(state, ds, Triple { h, r, t }, tie, &mut rotated, &mut scores)
}

fn filtered_rank_with(
    state: &ModelState,
    ds: &KgDataset,
    q: Triple,
    tie: TiePolicy,
    rotated: &mut [f64],
    scores: &mut [f64],
) -> Result<f64> {
    if !ds.is_augmented() {
        return Err(Error::NotAugmented);
    }
    state.check_entity(q.t)?;
    score_against_all_tails_into(state, q.h, q.r, rotated, scores)?;
    rank_from_scores(scores, q.t, ds.filter_index.tails(q.h, q.r), tie)
}

fn rank_triples(
    state: &ModelState,
    ds: &KgDataset,
    triples: &[Triple],
    tie: TiePolicy,
    workers: usize,
) -> Result<Vec<QueryRank>> {
    let rank_one = |triple: &Triple| -> Result<[QueryRank; 2]> {
        let mut scores = vec![0.0; state.n_entities()];
        let mut rotated = vec![0.0; state.dim() + 1];
        let tail = filtered_rank_with(state, ds, *triple, tie, &mut rotated, &mut scores)?;
        let head = filtered_rank_with(state, ds, ds.inverse(*triple), tie, &mut rotated, &mut scores)?;
        Ok([
            QueryRank {
                triple: *triple,
                direction: Direction::Tail,
                rank: tail,
            },
            QueryRank {
                triple: *triple,
                direction: Direction::Head,
                rank: head,
            },
        ])
    };
    let pairs: Vec<[QueryRank; 2]> = if workers <= 1 {
        triples.iter().map(rank_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        pool.install(|| triples.par_iter().map(rank_one).collect::<Result<_>>())?
    };
    Ok(pairs.into_iter().flatten().collect())
}

/// Ranks an arbitrary list of base triples in both directions.
pub fn evaluate_triples(
    state: &ModelState,
    ds: &KgDataset,
    triples: &[Triple],
    tie: TiePolicy,
    workers: usize,
) -> Result<RankReport> {
    let queries = rank_triples(state, ds, triples, tie, workers)?;
    let metrics = Metrics::from_ranks(queries.iter().map(|q| q.rank));
    Ok(RankReport {
        split: None,
        tie_policy: tie,
        queries,
        metrics,
        per_category: None,
    })
}

pub fn evaluate(
    state: &ModelState,
    ds: &KgDataset,
    split: Split,
    tie: TiePolicy,
    workers: usize,
) -> Result<RankReport> {
    let mut report = evaluate_triples(state, ds, ds.split(split), tie, workers)?;
    report.split = Some(split);
    Ok(report)
}

/// Test-split evaluation with aggregates per relation category.
pub fn evaluate_by_category(
    state: &ModelState,
    ds: &KgDataset,
    tie: TiePolicy,
    eta_source: EtaSource,
    workers: usize,
) -> Result<RankReport> {
    let categories = categorize_relations(ds, eta_source);
    let mut report = evaluate(state, ds, Split::Test, tie, workers)?;
    let mut grouped: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for q in &report.queries {
        if let Some(c) = categories.category_of(q.triple.r) {
            grouped.entry(c).or_default().push(q.rank);
        }
    }
    report.per_category = Some(
        grouped
            .into_iter()
            .map(|(c, ranks)| (c, Metrics::from_ranks(ranks)))
            .collect(),
    );
    Ok(report)
}
