//! User browsing models: marginal and joint examination probabilities by
//! rank, and samplers for examination vectors.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GridLayout;
use crate::debias::PropensityTable;
use crate::error::{Error, Result};

/// Examination probability per rank, `values[k - 1] = theta(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTable(Vec<f64>);

impl ThetaTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("theta table is empty".into()));
        }
        for (k, &t) in values.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Domain(format!("theta({}) = {t} is not in (0, 1]", k + 1)));
            }
        }
        Ok(ThetaTable(values))
    }

    /// `theta(k) = 1 / k` for `k = 1..=max_rank`.
    pub fn inverse_rank(max_rank: usize) -> Self {
        ThetaTable((1..=max_rank).map(|k| 1.0 / k as f64).collect())
    }

    pub fn constant(max_rank: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; max_rank])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn get(&self, rank: usize) -> Result<f64> {
        self.0
            .get(rank.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Domain(format!("rank {rank} outside 1..={}", self.0.len())))
    }
}

/// Grid browsing where each row is skipped with probability `gamma` and the
/// user stops after examining rank `v` with probability `1 - C_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSkipping {
    layout: GridLayout,
    gamma: f64,
    continue_probs: Vec<f64>,
    theta: Vec<f64>,
}

impl RowSkipping {
    pub fn new(layout: GridLayout, gamma: f64, continue_probs: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "row-skip probability must be in [0, 1), got {gamma}"
            )));
        }
        if continue_probs.len() < layout.capacity() {
            return Err(Error::Config(format!(
                "{} continuation probabilities for {} grid positions",
                continue_probs.len(),
                layout.capacity()
            )));
        }
        if let Some(c) = continue_probs.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::Config(format!("continuation probability {c} not in (0, 1]")));
        }
        let mut model = RowSkipping {
            layout,
            gamma,
            continue_probs,
            theta: Vec::new(),
        };
        model.theta = (1..=model.layout.capacity()).map(|u| model.theta_closed_form(u)).collect();
        Ok(model)
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn c(&self, v: usize) -> f64 {
        self.continue_probs[v - 1]
    }

    /// Product of `C_v` over `v in from..=to` (empty product is 1).
    fn c_product(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|v| self.c(v)).product()
    }

    /// Probability of getting past row `m` once it has been reached.
    fn pass_row(&self, m: usize) -> f64 {
        let start = self.layout.row_start(m);
        let len = self.layout.row_len(m);
        (1.0 - self.gamma) * self.c_product(start + 1, start + len) + self.gamma
    }

    fn theta_closed_form(&self, u: usize) -> f64 {
        let row = self.layout.row(u).expect("rank inside grid");
        let reach: f64 = (1..row).map(|m| self.pass_row(m)).product();
        let start = self.layout.row_start(row);
        reach * (1.0 - self.gamma) * self.c_product(start + 1, u - 1)
    }

    fn joint_closed_form(&self, h: usize, w: usize) -> f64 {
        let row_h = self.layout.row(h).expect("rank inside grid");
        let row_w = self.layout.row(w).expect("rank inside grid");
        if row_h == row_w {
            return self.theta[h - 1] * self.c_product(h, w - 1);
        }
        let end_h = self.layout.row_start(row_h) + self.layout.row_len(row_h);
        let between: f64 = (row_h + 1..row_w).map(|m| self.pass_row(m)).product();
        let start_w = self.layout.row_start(row_w);
        self.theta[h - 1]
            * self.c_product(h, end_h)
            * between
            * (1.0 - self.gamma)
            * self.c_product(start_w + 1, w - 1)
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<bool> {
        let mut e = vec![false; n];
        'rows: for m in 1..=self.layout.num_rows() {
            let start = self.layout.row_start(m);
            if start >= n {
                break;
            }
            if rng.gen::<f64>() < self.gamma {
                continue;
            }
            for v in start + 1..=start + self.layout.row_len(m) {
                if v > n {
                    break 'rows;
                }
                e[v - 1] = true;
                if rng.gen::<f64>() >= self.c(v) {
                    break 'rows;
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Independent,
    Continuous,
    RowSkipping,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Independent => "independent",
            Variant::Continuous => "continuous",
            Variant::RowSkipping => "row-skipping",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Variant::Independent),
            "continuous" => Ok(Variant::Continuous),
            "row-skipping" | "row_skipping" => Ok(Variant::RowSkipping),
            other => Err(Error::Config(format!("unknown examination model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Independent(ThetaTable),
    Continuous(ThetaTable),
    RowSkipping(RowSkipping),
}

/// A browsing model; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ExaminationModel(Kind);

impl ExaminationModel {
    /// Positions examined independently: `psi = theta * theta`.
    pub fn independent(theta: ThetaTable) -> Self {
        ExaminationModel(Kind::Independent(theta))
    }

    /// Top-down browsing without skipping: `psi = min(theta, theta)`.
    /// Requires `theta` non-increasing in rank.
    pub fn continuous(theta: ThetaTable) -> Result<Self> {
        if theta.values().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(
                "continuous examination needs theta non-increasing in rank".into(),
            ));
        }
        Ok(ExaminationModel(Kind::Continuous(theta)))
    }

    pub fn row_skipping(model: RowSkipping) -> Self {
        ExaminationModel(Kind::RowSkipping(model))
    }

    pub fn variant(&self) -> Variant {
        match &self.0 {
            Kind::Independent(_) => Variant::Independent,
            Kind::Continuous(_) => Variant::Continuous,
            Kind::RowSkipping(_) => Variant::RowSkipping,
        }
    }

    /// Largest rank the model defines probabilities for.
    pub fn max_rank(&self) -> usize {
        match &self.0 {
            Kind::Independent(t) | Kind::Continuous(t) => t.len(),
            Kind::RowSkipping(r) => r.layout.capacity(),
        }
    }

    pub fn marginal(&self, rank: usize) -> Result<f64> {
        match &self.0 {
            Kind::Independent(t) | Kind::Continuous(t) => t.get(rank),
            Kind::RowSkipping(r) => r
                .theta
                .get(rank.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::Domain(format!("rank {rank} outside the grid"))),
        }
    }

    pub fn joint(&self, rank1: usize, rank2: usize) -> Result<f64> {
        if rank1 == rank2 {
            return Err(Error::Domain(format!(
                "joint probability needs distinct ranks, got ({rank1},{rank2})"
            )));
        }
        let (t1, t2) = (self.marginal(rank1)?, self.marginal(rank2)?);
        Ok(match &self.0 {
            Kind::Independent(_) => t1 * t2,
            Kind::Continuous(_) => t1.min(t2),
            Kind::RowSkipping(r) => r.joint_closed_form(rank1.min(rank2), rank1.max(rank2)),
        })
    }

    /// For the continuous model: `P{d = k}` for the last examined position
    /// `d = 0..=max_rank` (`d = 0` means nothing examined).
    pub fn last_examined_distribution(&self) -> Option<Vec<f64>> {
        let Kind::Continuous(t) = &self.0 else {
            return None;
        };
        let v = t.values();
        let mut out = Vec::with_capacity(v.len() + 1);
        out.push(1.0 - v[0]);
        for k in 0..v.len() {
            out.push(v[k] - v.get(k + 1).copied().unwrap_or(0.0));
        }
        Some(out)
    }

    /// One examination vector for ranks `1..=n`.
    pub fn sample_examinations<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<bool>> {
        if n == 0 || n > self.max_rank() {
            return Err(Error::Domain(format!(
                "cannot sample {n} positions from a model defined up to rank {}",
                self.max_rank()
            )));
        }
        Ok(match &self.0 {
            Kind::Independent(t) => t.values()[..n].iter().map(|&p| rng.gen::<f64>() < p).collect(),
            Kind::Continuous(t) => {
                // A single uniform draw u fixes the last examined position:
                // rank k is examined iff u < theta(k), so P{d = k} =
                // theta(k) - theta(k + 1) and the examined set is a prefix.
                let u: f64 = rng.gen();
                t.values()[..n].iter().map(|&p| u < p).collect()
            }
            Kind::RowSkipping(r) => r.sample(n, rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContinueProb {
    Scalar(f64),
    PerRank(Vec<f64>),
}

/// Structured model configuration block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `inverse_rank` or `table <path>`; ignored for row skipping.
    #[serde(default = "default_theta")]
    pub theta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continue_prob: Option<ContinueProb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_sizes: Option<Vec<usize>>,
}

fn default_theta() -> String {
    "inverse_rank".into()
}

impl ModelConfig {
    pub fn inverse_rank(variant: Variant) -> Self {
        ModelConfig {
            variant,
            theta: default_theta(),
            max_rank: None,
            gamma: None,
            continue_prob: None,
            row_sizes: None,
        }
    }

    /// Builds the model; `needed` is the largest rank the caller will query.
    /// Relative `table` paths resolve against `base_dir`.
    pub fn build(&self, needed: usize, base_dir: Option<&Path>) -> Result<ExaminationModel> {
        match self.variant {
            Variant::Independent | Variant::Continuous => {
                let theta = self.theta_table(needed, base_dir)?;
                if self.variant == Variant::Independent {
                    Ok(ExaminationModel::independent(theta))
                } else {
                    ExaminationModel::continuous(theta)
                }
            }
            Variant::RowSkipping => {
                let layout = match &self.row_sizes {
                    Some(rows) => GridLayout::new(rows.clone())?,
                    None => return Err(Error::Config("row-skipping needs row_sizes".into())),
                };
                let cap = layout.capacity();
                let continue_probs = match &self.continue_prob {
                    None => vec![1.0; cap],
                    Some(ContinueProb::Scalar(c)) => vec![*c; cap],
                    Some(ContinueProb::PerRank(v)) => v.clone(),
                };
                let model = RowSkipping::new(layout, self.gamma.unwrap_or(0.0), continue_probs)?;
                Ok(ExaminationModel::row_skipping(model))
            }
        }
    }

    fn theta_table(&self, needed: usize, base_dir: Option<&Path>) -> Result<ThetaTable> {
        let spec = self.theta.trim();
        if spec == "inverse_rank" {
            return Ok(ThetaTable::inverse_rank(self.max_rank.unwrap_or(needed).max(needed)));
        }
        if let Some(path) = spec.strip_prefix("table") {
            let path = Path::new(path.trim());
            let path = match base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.to_path_buf(),
            };
            return ThetaTable::new(PropensityTable::load(&path)?.theta_values().to_vec());
        }
        Err(Error::Config(format!("unknown theta source {spec:?}")))
    }
}
