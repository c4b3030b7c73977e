//! Ranking metrics against golden labels and paired significance tests.
//!
//! NDCG uses gain `2^label - 1` and discount `1 / log2(1 + position)`.
//! Average precision counts an item as relevant when its label is at least
//! the threshold (default 1).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::QueryCollection;
use crate::error::{Error, Result};
use crate::trainer::{discount, gain, ranking_order, TreeEnsemble};

pub const DEFAULT_CUTOFFS: [usize; 4] = [1, 3, 5, 10];

/// DCG of the first `k` labels in ranked order.
pub fn dcg_at_k(ranking: &[u8], k: usize) -> f64 {
    ranking.iter().take(k).enumerate().map(|(p, &l)| gain(l) * discount(p + 1)).sum()
}

pub fn ndcg_at_k(ranking: &[u8], k: usize) -> Result<f64> {
    let mut ideal = ranking.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Err(Error::UndefinedMetric("NDCG of a list without positive labels".into()));
    }
    Ok(dcg_at_k(ranking, k) / idcg)
}

pub fn average_precision(ranking: &[u8], positive_threshold: u8) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (p, &l) in ranking.iter().enumerate() {
        if l >= positive_threshold {
            hits += 1;
            total += hits as f64 / (p + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedMetric("average precision without relevant items".into()));
    }
    Ok(total / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    /// Mean NDCG per cutoff over included queries.
    pub ndcg: Vec<f64>,
    pub map: f64,
    pub query_ids: Vec<String>,
    /// `per_query_ndcg[c][q]` for cutoff `c` and included query `q`.
    pub per_query_ndcg: Vec<Vec<f64>>,
    pub per_query_ap: Vec<f64>,
    pub excluded: usize,
}

impl EvalReport {
    pub fn ndcg_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == cutoff).map(|i| self.ndcg[i])
    }

    pub fn per_query_at(&self, cutoff: usize) -> Option<&[f64]> {
        self.cutoffs
            .iter()
            .position(|&c| c == cutoff)
            .map(|i| self.per_query_ndcg[i].as_slice())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# gain 2^label-1, discount 1/log2(1+pos), AP relevant label>0").unwrap();
        writeln!(out, "queries {}", self.query_ids.len()).unwrap();
        writeln!(out, "excluded {}", self.excluded).unwrap();
        for (c, v) in self.cutoffs.iter().zip(&self.ndcg) {
            writeln!(out, "ndcg@{c} {v}").unwrap();
        }
        writeln!(out, "map {}", self.map).unwrap();
        out
    }

    /// One line per query: id, NDCG at each cutoff, AP.
    pub fn per_query_text(&self) -> String {
        let mut out = String::new();
        let head: Vec<String> = self.cutoffs.iter().map(|c| format!("ndcg@{c}")).collect();
        writeln!(out, "# query {} ap", head.join(" ")).unwrap();
        for (q, id) in self.query_ids.iter().enumerate() {
            write!(out, "{id}").unwrap();
            for col in &self.per_query_ndcg {
                write!(out, " {}", col[q]).unwrap();
            }
            writeln!(out, " {}", self.per_query_ap[q]).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates precomputed scores (one vector per collection).
pub fn evaluate_scores(test: &[QueryCollection], scores: &[Vec<f64>], cutoffs: &[usize]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::State("empty test set".into()));
    }
    if scores.len() != test.len() {
        return Err(Error::Dimension(format!("{} score vectors for {} queries", scores.len(), test.len())));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be a non-empty list of positive integers".into()));
    }
    let rows: Vec<Option<(String, Vec<f64>, f64)>> = test
        .par_iter()
        .zip(scores.par_iter())
        .map(|(c, s)| {
            if s.len() != c.n() {
                return Err(Error::Dimension(format!("{} scores for {} items", s.len(), c.n())));
            }
            if !c.has_positive_label() {
                return Ok(None);
            }
            let labels = c.labels();
            let ranked: Vec<u8> = ranking_order(s).into_iter().map(|i| labels[i]).collect();
            let nd = cutoffs.iter().map(|&k| ndcg_at_k(&ranked, k)).collect::<Result<Vec<_>>>()?;
            Ok(Some((c.query_id.clone(), nd, average_precision(&ranked, 1)?)))
        })
        .collect::<Result<_>>()?;
    let excluded = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<_> = rows.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::State("no test query has a positive label".into()));
    }
    let mean = |v: &[f64]| crate::numeric::pairwise_sum(v) / v.len() as f64;
    let per_query_ndcg: Vec<Vec<f64>> = (0..cutoffs.len())
        .map(|ci| kept.iter().map(|(_, nd, _)| nd[ci]).collect())
        .collect();
    let per_query_ap: Vec<f64> = kept.iter().map(|(_, _, ap)| *ap).collect();
    Ok(EvalReport {
        cutoffs: cutoffs.to_vec(),
        ndcg: per_query_ndcg.iter().map(|v| mean(v)).collect(),
        map: mean(&per_query_ap),
        query_ids: kept.into_iter().map(|(id, _, _)| id).collect(),
        per_query_ndcg,
        per_query_ap,
        excluded,
    })
}

/// Ranks every test list by `model` and evaluates against golden labels.
pub fn evaluate(model: &TreeEnsemble, test: &[QueryCollection], cutoffs: &[usize]) -> Result<EvalReport> {
    let scores = test.par_iter().map(|c| model.predict(c)).collect::<Result<Vec<_>>>()?;
    evaluate_scores(test, &scores, cutoffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value, uncorrected.
    pub p: f64,
    pub df: f64,
    pub mean_difference: f64,
}

/// Paired two-sided t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateTest("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = crate::numeric::pairwise_sum(&d) / n as f64;
    let ss: Vec<f64> = d.iter().map(|x| (x - mean).powi(2)).collect();
    let var = crate::numeric::pairwise_sum(&ss) / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let t = mean / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    Ok(TTest {
        t,
        p: (2.0 * dist.sf(t.abs())).min(1.0),
        df,
        mean_difference: mean,
    })
}
