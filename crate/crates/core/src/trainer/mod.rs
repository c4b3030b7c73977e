//! Gradient-boosted regression trees driven by pairwise lambda-gradients.
//!
//! Each round computes per-item lambdas and curvatures for every training
//! list, scaled by |delta NDCG| under the current model's ranking, and fits
//! one histogram tree with Newton leaf values.

mod hist;
mod tree;

pub use tree::{Node, Tree, TreeEnsemble};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::QueryCollection;
use crate::debias::{accumulate_lambdas, ComponentLoss, PairWeightScheme, PropensityTable};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use hist::{grow_tree, BinnedData, GrowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrainerScheme {
    /// Lambdas on clicks, no correction.
    Plain,
    /// Lambdas on clicks divided by the clicked item's propensity.
    Robust,
    /// Robust weighting further divided by `t_minus` of the other item.
    FixedTMinus,
    /// Lambdas on golden labels.
    Oracle,
}

impl TrainerScheme {
    pub fn needs_propensities(self) -> bool {
        matches!(self, TrainerScheme::Robust | TrainerScheme::FixedTMinus)
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainerScheme::Plain => "plain",
            TrainerScheme::Robust => "robust",
            TrainerScheme::FixedTMinus => "fixed-tminus",
            TrainerScheme::Oracle => "oracle",
        }
    }
}

impl fmt::Display for TrainerScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainerScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(TrainerScheme::Plain),
            "robust" => Ok(TrainerScheme::Robust),
            "fixed-tminus" => Ok(TrainerScheme::FixedTMinus),
            "oracle" => Ok(TrainerScheme::Oracle),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected plain, robust, fixed-tminus or oracle)"
            ))),
        }
    }
}

impl TryFrom<String> for TrainerScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrainerScheme> for String {
    fn from(s: TrainerScheme) -> String {
        s.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub feature_fraction: f64,
    /// Fraction of training lists drawn (without replacement) per tree.
    pub bagging_fraction: f64,
    pub min_samples_per_leaf: usize,
    pub min_sum_hessian: f64,
    pub max_bins: usize,
    pub scheme: TrainerScheme,
    /// Per-rank `t_minus` for the fixed-t⁻ scheme; missing ranks use 1.
    pub t_minus: Vec<f64>,
    pub sigma: f64,
    /// NDCG cutoff for the |delta| pair weights; `None` means the whole list.
    pub ndcg_cutoff: Option<usize>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_trees: 300,
            learning_rate: 0.05,
            max_leaves: 31,
            feature_fraction: 0.9,
            bagging_fraction: 0.9,
            min_samples_per_leaf: 20,
            min_sum_hessian: 1e-3,
            max_bins: 255,
            scheme: TrainerScheme::Plain,
            t_minus: Vec::new(),
            sigma: 1.0,
            ndcg_cutoff: None,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_trees == 0 {
            return bad("num_trees must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_leaves == 0 || self.min_samples_per_leaf == 0 {
            return bad("max_leaves and min_samples_per_leaf must be positive");
        }
        for (name, v) in [
            ("feature_fraction", self.feature_fraction),
            ("bagging_fraction", self.bagging_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins must be in 2..=256");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.min_sum_hessian < 0.0 {
            return bad("min_sum_hessian must be non-negative");
        }
        if self.ndcg_cutoff == Some(0) {
            return bad("ndcg_cutoff must be positive");
        }
        if self.t_minus.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("t_minus values must be positive");
        }
        Ok(())
    }

    fn pair_scheme(&self) -> PairWeightScheme {
        match self.scheme {
            TrainerScheme::Plain | TrainerScheme::Oracle => PairWeightScheme::Plain,
            TrainerScheme::Robust => PairWeightScheme::Robust,
            TrainerScheme::FixedTMinus => PairWeightScheme::FixedTMinus(self.t_minus.clone()),
        }
    }
}

/// Gain `2^label - 1`.
pub(crate) fn gain(label: u8) -> f64 {
    f64::from((1u32 << label) - 1)
}

/// `1 / log2(1 + position)` for 1-based positions.
pub(crate) fn discount(position: usize) -> f64 {
    1.0 / ((1 + position) as f64).log2()
}

/// Indices sorted by descending score, ties by input order.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// |delta NDCG@cutoff| for swapping each pair in the ranking induced by
/// `scores`, as a dense row-major matrix. All zeros if no item has gain.
fn swap_deltas(labels: &[u8], scores: &[f64], cutoff: usize) -> Vec<f64> {
    let n = labels.len();
    let mut disc = vec![0.0; n];
    for (pos, &i) in ranking_order(scores).iter().enumerate() {
        if pos < cutoff {
            disc[i] = discount(pos + 1);
        }
    }
    let mut ideal: Vec<u8> = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(cutoff).enumerate().map(|(p, &l)| gain(l) * discount(p + 1)).sum();
    let mut out = vec![0.0; n * n];
    if idcg > 0.0 {
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = ((gain(labels[i]) - gain(labels[j])) * (disc[i] - disc[j])).abs() / idcg;
            }
        }
    }
    out
}

struct TrainList {
    start: usize,
    labels: Vec<u8>,
    ranks: Vec<usize>,
}

/// Trains on click lists (or, for the oracle scheme, on the golden labels of
/// the distinct queries among them).
pub fn train(
    collections: &[QueryCollection],
    config: &TrainerConfig,
    props: Option<&PropensityTable>,
) -> Result<TreeEnsemble> {
    config.validate()?;
    let scheme = config.pair_scheme();
    let oracle = config.scheme == TrainerScheme::Oracle;
    if config.scheme.needs_propensities() && props.is_none() {
        return Err(Error::Config(format!("scheme {} needs a propensity table", config.scheme)));
    }
    let dim = collections
        .first()
        .ok_or_else(|| Error::State("no training lists".into()))?
        .dim();

    let mut seen = HashSet::new();
    let mut lists = Vec::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    for c in collections {
        if c.dim() != dim {
            return Err(Error::Dimension(format!(
                "query {} has {} features, expected {dim}",
                c.query_id,
                c.dim()
            )));
        }
        let labels: Vec<u8> = if oracle {
            if !seen.insert(c.query_id.as_str()) {
                continue;
            }
            c.labels()
        } else {
            c.clicks()?.into_iter().map(u8::from).collect()
        };
        // Lists without a preferred pair contribute nothing.
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let ranks = c.ranks();
        if let (true, Some(p)) = (config.scheme.needs_propensities(), props) {
            for (&r, &l) in ranks.iter().zip(&labels) {
                if l > 0 {
                    p.theta(r)?;
                }
            }
        }
        lists.push(TrainList {
            start: rows.len(),
            labels,
            ranks,
        });
        rows.extend(c.items.iter().map(|it| &it.features[..]));
    }
    let mut model = TreeEnsemble::new(dim, config.learning_rate, 0.0);
    if lists.is_empty() {
        warn!("no training list has a preferred pair; returning an empty ensemble");
        return Ok(model);
    }
    let binned = BinnedData::new(&rows, dim, config.max_bins);
    let loss = ComponentLoss::new(config.sigma)?;
    let seeds = SeedTree::new(config.seed);
    let params = GrowParams {
        max_leaves: config.max_leaves,
        min_samples: config.min_samples_per_leaf,
        min_hessian: config.min_sum_hessian,
    };
    let n_feat = ((config.feature_fraction * dim as f64).round() as usize).clamp(1, dim);
    let n_bag = ((config.bagging_fraction * lists.len() as f64).round() as usize).clamp(1, lists.len());
    let mut raw = vec![0.0f64; rows.len()];

    for round in 0..config.num_trees {
        let per_list: Vec<(Vec<f64>, Vec<f64>)> = lists
            .par_iter()
            .map(|l| {
                let n = l.labels.len();
                let scores: Vec<f64> = raw[l.start..l.start + n]
                    .iter()
                    .map(|&s| model.base_score + model.learning_rate * s)
                    .collect();
                let deltas = swap_deltas(&l.labels, &scores, config.ndcg_cutoff.unwrap_or(n));
                let lam = accumulate_lambdas(&l.labels, &scores, &loss, |hi, lo| {
                    let f = if oracle {
                        1.0
                    } else {
                        scheme.pair_factor(props, l.ranks[hi], l.ranks[lo])?
                    };
                    Ok(f * deltas[hi * n + lo])
                })?;
                Ok((lam.gradient, lam.hessian))
            })
            .collect::<Result<_>>()?;
        let grad: Vec<f64> = per_list.iter().flat_map(|(g, _)| g.iter().copied()).collect();
        let hess: Vec<f64> = per_list.into_iter().flat_map(|(_, h)| h).collect();
        if grad.iter().all(|&g| g == 0.0) {
            warn!("round {round}: all gradients are zero, skipping");
            continue;
        }

        let mut rng = seeds.stream(&[b"tree", &(round as u64).to_le_bytes()]);
        let mut features = sample(&mut rng, dim, n_feat).into_vec();
        features.sort_unstable();
        let mut bag = sample(&mut rng, lists.len(), n_bag).into_vec();
        bag.sort_unstable();
        let bag_rows: Vec<u32> = bag
            .iter()
            .flat_map(|&q| {
                let l = &lists[q];
                (l.start..l.start + l.labels.len()).map(|r| r as u32)
            })
            .collect();

        let tree = grow_tree(&binned, &grad, &hess, bag_rows, &features, params);
        raw.par_iter_mut()
            .zip(rows.par_iter())
            .for_each(|(s, x)| *s += tree.predict(x));
        model.trees.push(tree);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;
    use approx::assert_abs_diff_eq;

    /// Items alternate x = 1 (clicked) and x = 0.
    fn separable(queries: usize) -> Vec<QueryCollection> {
        (0..queries)
            .map(|q| {
                let items = (0..4)
                    .map(|k| {
                        let x = ((k + q) % 2) as f64;
                        Item::new(vec![x, (q * 7 + k) as f64 % 5.0], 0, k + 1).with_click(x == 1.0)
                    })
                    .collect();
                QueryCollection::new(format!("q{q}"), items).unwrap()
            })
            .collect()
    }

    fn small_config(trees: usize) -> TrainerConfig {
        TrainerConfig {
            num_trees: trees,
            min_samples_per_leaf: 5,
            feature_fraction: 1.0,
            learning_rate: 0.3,
            ..TrainerConfig::default()
        }
    }

    fn click_ndcg(model: &TreeEnsemble, data: &[QueryCollection]) -> f64 {
        let mut total = 0.0;
        for c in data {
            let labels: Vec<u8> = c.clicks().unwrap().into_iter().map(u8::from).collect();
            let order = ranking_order(&model.predict(c).unwrap());
            let dcg: f64 = order.iter().take(10).enumerate().map(|(p, &i)| gain(labels[i]) * discount(p + 1)).sum();
            let mut ideal = labels.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = ideal.iter().take(10).enumerate().map(|(p, &l)| gain(l) * discount(p + 1)).sum();
            total += dcg / idcg;
        }
        total / data.len() as f64
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = separable(40);
        let props = PropensityTable::constant_one(4);
        let cfg = TrainerConfig {
            scheme: TrainerScheme::Robust,
            ..small_config(10)
        };
        let model = train(&data, &cfg, Some(&props)).unwrap();
        for x1 in 0..5 {
            let hi = model.predict_row(&[1.0, x1 as f64]).unwrap();
            let lo = model.predict_row(&[0.0, x1 as f64]).unwrap();
            assert!(hi > lo);
        }
        let mut last = 0.0;
        for k in 0..=10 {
            let v = click_ndcg(&model.prefix(k), &data);
            assert!(v >= last - 1e-12, "NDCG dropped at round {k}");
            last = v;
        }
        assert_abs_diff_eq!(last, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_leaf_gives_constant_scores() {
        let data = separable(10);
        let cfg = TrainerConfig {
            num_trees: 1,
            max_leaves: 1,
            ..TrainerConfig::default()
        };
        let model = train(&data, &cfg, None).unwrap();
        let s = model.predict(&data[0]).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
    }

    #[test]
    fn delta_weights_match_hand_values() {
        // Ranking by scores is (1, 0, 2): labels shown (2, 1, 0).
        let d = swap_deltas(&[1, 2, 0], &[0.5, 0.9, 0.1], 3);
        let idcg = 3.0 + 1.0 / 3f64.log2();
        let expected = (3.0 - 1.0) * (1.0 - 1.0 / 3f64.log2()) / idcg;
        assert_abs_diff_eq!(d[3], expected, epsilon = 1e-15);
        assert_eq!(d[1 * 3 + 0], d[0 * 3 + 1]);
        assert_eq!(d[0], 0.0);
        // Cutoff 1: swapping the two items below the cutoff changes nothing.
        let d = swap_deltas(&[1, 2, 0], &[0.5, 0.9, 0.1], 1);
        assert_eq!(d[0 * 3 + 2], 0.0);
    }

    #[test]
    fn robust_with_unit_theta_matches_plain_text() {
        let data = separable(30);
        let ones = PropensityTable::constant_one(4);
        let plain = train(&data, &small_config(5), None).unwrap();
        let robust = train(
            &data,
            &TrainerConfig {
                scheme: TrainerScheme::Robust,
                ..small_config(5)
            },
            Some(&ones),
        )
        .unwrap();
        assert_eq!(plain.to_text(), robust.to_text());
    }

    #[test]
    fn configuration_errors() {
        let data = separable(3);
        let cfg = TrainerConfig {
            scheme: TrainerScheme::Robust,
            ..small_config(1)
        };
        assert!(matches!(train(&data, &cfg, None), Err(Error::Config(_))));
        let short = PropensityTable::constant_one(2);
        assert!(matches!(train(&data, &cfg, Some(&short)), Err(Error::Config(_))));
        let bad = TrainerConfig {
            feature_fraction: 0.0,
            ..TrainerConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(matches!("lambdamart".parse::<TrainerScheme>(), Err(Error::Config(_))));
        let parsed: TrainerConfig = toml::from_str("scheme = \"oracle\"\nnum_trees = 7\n").unwrap();
        assert_eq!(parsed.scheme, TrainerScheme::Oracle);
        assert_eq!(parsed.num_trees, 7);
        assert_eq!(parsed.max_leaves, 31);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(30);
        let cfg = TrainerConfig {
            bagging_fraction: 0.5,
            feature_fraction: 0.5,
            seed: 11,
            ..small_config(6)
        };
        let a = train(&data, &cfg, None).unwrap().to_text();
        let b = train(&data, &cfg, None).unwrap().to_text();
        assert_eq!(a, b);
    }
}
