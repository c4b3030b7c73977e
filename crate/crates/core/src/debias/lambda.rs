//! Lambda-gradients: pairwise RankNet gradients reweighted per pair.

use std::fmt;
use std::str::FromStr;

use super::loss::ComponentLoss;
use super::table::PropensityTable;
use crate::data::QueryCollection;
use crate::error::{Error, Result};

/// How a (preferred, other) pair's lambda is scaled before accumulation.
#[derive(Debug, Clone, PartialEq)]
pub enum PairWeightScheme {
    /// `lambda_ij`.
    Plain,
    /// `lambda_ij / theta(rank_i)` where `i` is the clicked item.
    Robust,
    /// `lambda_ij / (theta(rank_i) * t_minus(rank_j))` with fixed per-rank
    /// `t_minus`; ranks past the end of the table use 1.
    FixedTMinus(Vec<f64>),
}

impl PairWeightScheme {
    pub fn needs_propensities(&self) -> bool {
        !matches!(self, PairWeightScheme::Plain)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PairWeightScheme::Plain => "plain",
            PairWeightScheme::Robust => "robust",
            PairWeightScheme::FixedTMinus(_) => "fixed-tminus",
        }
    }

    /// Multiplier applied to the pair where `hi` is preferred over `lo`.
    pub(crate) fn pair_factor(
        &self,
        props: Option<&PropensityTable>,
        rank_hi: usize,
        rank_lo: usize,
    ) -> Result<f64> {
        let theta = |r| {
            props
                .ok_or_else(|| Error::Config(format!("scheme {} needs propensities", self.name())))?
                .theta(r)
        };
        Ok(match self {
            PairWeightScheme::Plain => 1.0,
            PairWeightScheme::Robust => 1.0 / theta(rank_hi)?,
            PairWeightScheme::FixedTMinus(t) => {
                let t_lo = t.get(rank_lo - 1).copied().unwrap_or(1.0);
                1.0 / (theta(rank_hi)? * t_lo)
            }
        })
    }
}

impl fmt::Display for PairWeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairWeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "lambdamart" => Ok(PairWeightScheme::Plain),
            "robust" | "robust-unbiased" => Ok(PairWeightScheme::Robust),
            "fixed-tminus" | "unbiased" => Ok(PairWeightScheme::FixedTMinus(Vec::new())),
            other => Err(Error::Config(format!("unknown pair-weight scheme {other:?}"))),
        }
    }
}

/// Per-item first and second order terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lambdas {
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

/// Accumulates lambdas over every pair with `labels[i] > labels[j]`.
///
/// `pair_weight(hi, lo)` is the full multiplier for that pair (propensity
/// factor times metric weight). The curvature term `sigma^2 mu (1 - mu)` is
/// scaled by the same weight.
pub(crate) fn accumulate_lambdas<W>(
    labels: &[u8],
    scores: &[f64],
    loss: &ComponentLoss,
    mut pair_weight: W,
) -> Result<Lambdas>
where
    W: FnMut(usize, usize) -> Result<f64>,
{
    let n = labels.len();
    let sigma = loss.sigma;
    let mut out = Lambdas {
        gradient: vec![0.0; n],
        hessian: vec![0.0; n],
    };
    for hi in 0..n {
        for lo in 0..n {
            if labels[hi] <= labels[lo] {
                continue;
            }
            let w = pair_weight(hi, lo)?;
            if w == 0.0 {
                continue;
            }
            let mu = loss.mu(scores[hi], scores[lo]);
            let lambda = -sigma * mu;
            out.gradient[hi] += w * lambda;
            out.gradient[lo] -= w * lambda;
            let h = w * sigma * sigma * mu * (1.0 - mu);
            out.hessian[hi] += h;
            out.hessian[lo] += h;
        }
    }
    Ok(out)
}

/// Lambda-gradient over clicks with per-pair metric weights (`None` means 1).
pub fn lambda_gradient(
    collection: &QueryCollection,
    scores: &[f64],
    loss: &ComponentLoss,
    props: Option<&PropensityTable>,
    scheme: &PairWeightScheme,
    metric_weights: Option<&dyn Fn(usize, usize) -> f64>,
) -> Result<Vec<f64>> {
    Ok(lambdas_with_hessian(collection, scores, loss, props, scheme, metric_weights)?.gradient)
}

pub fn lambdas_with_hessian(
    collection: &QueryCollection,
    scores: &[f64],
    loss: &ComponentLoss,
    props: Option<&PropensityTable>,
    scheme: &PairWeightScheme,
    metric_weights: Option<&dyn Fn(usize, usize) -> f64>,
) -> Result<Lambdas> {
    if scores.len() != collection.n() {
        return Err(Error::Dimension(format!(
            "{} scores for {} items",
            scores.len(),
            collection.n()
        )));
    }
    let labels: Vec<u8> = collection.clicks()?.into_iter().map(u8::from).collect();
    let ranks = collection.ranks();
    accumulate_lambdas(&labels, scores, loss, |hi, lo| {
        let f = scheme.pair_factor(props, ranks[hi], ranks[lo])?;
        Ok(f * metric_weights.map_or(1.0, |m| m(hi, lo)))
    })
}
