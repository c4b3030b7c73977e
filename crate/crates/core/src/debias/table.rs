use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exam::ExaminationModel;

/// Rank-indexed marginal (theta) and joint (psi) examination probabilities.
///
/// Missing psi entries are allowed; lookups of a missing pair fail with a
/// configuration error.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    theta: Vec<f64>,
    psi: Vec<Option<f64>>,
    floor: f64,
}

impl PropensityTable {
    /// Marginals only; every psi entry is missing.
    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Config("propensity table needs at least one rank".into()));
        }
        for (k, &t) in theta.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Domain(format!("theta({}) = {t} is not in (0, 1]", k + 1)));
            }
        }
        let k = theta.len();
        Ok(PropensityTable {
            theta,
            psi: vec![None; k * k],
            floor: 0.0,
        })
    }

    /// theta = psi = 1 up to `max_rank`.
    pub fn constant_one(max_rank: usize) -> Self {
        PropensityTable {
            theta: vec![1.0; max_rank],
            psi: vec![Some(1.0); max_rank * max_rank],
            floor: 0.0,
        }
    }

    pub fn from_model(model: &ExaminationModel, max_rank: usize) -> Result<Self> {
        let theta = (1..=max_rank)
            .map(|k| model.marginal(k))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self::from_theta(theta)?;
        table.fill_missing_from(model)?;
        Ok(table)
    }

    /// Fills every missing psi entry from the model's closed form.
    pub fn fill_missing_from(&mut self, model: &ExaminationModel) -> Result<()> {
        let k = self.max_rank();
        for r1 in 1..=k {
            for r2 in (r1 + 1)..=k {
                if self.psi[(r1 - 1) * k + (r2 - 1)].is_none() {
                    let p = model.joint(r1, r2)?;
                    self.set_psi(r1, r2, p)?;
                }
            }
        }
        Ok(())
    }

    /// Lower bound applied to theta and psi before they are inverted.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn max_rank(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_values(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_psi(&mut self, r1: usize, r2: usize, value: f64) -> Result<()> {
        let k = self.max_rank();
        if r1 == 0 || r2 == 0 || r1 > k || r2 > k || r1 == r2 {
            return Err(Error::Domain(format!("psi({r1},{r2}) outside the table")));
        }
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::Domain(format!("psi({r1},{r2}) = {value} is not in (0, 1]")));
        }
        self.psi[(r1 - 1) * k + (r2 - 1)] = Some(value);
        self.psi[(r2 - 1) * k + (r1 - 1)] = Some(value);
        Ok(())
    }

    pub fn theta(&self, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.max_rank() {
            return Err(Error::Config(format!(
                "no propensity for rank {rank} (table covers 1..={})",
                self.max_rank()
            )));
        }
        Ok(self.theta[rank - 1].max(self.floor))
    }

    pub fn psi(&self, r1: usize, r2: usize) -> Result<f64> {
        if r1 == r2 {
            return self.theta(r1);
        }
        let k = self.max_rank();
        if r1 == 0 || r2 == 0 || r1 > k || r2 > k {
            return Err(Error::Config(format!("no joint propensity for ranks ({r1},{r2})")));
        }
        self.psi[(r1 - 1) * k + (r2 - 1)]
            .map(|p| p.max(self.floor))
            .ok_or_else(|| Error::Config(format!("missing joint propensity for ranks ({r1},{r2})")))
    }

    pub fn has_psi(&self, r1: usize, r2: usize) -> bool {
        self.psi(r1, r2).is_ok()
    }

    /// Checks `0 < psi(k1,k2) <= min(theta(k1), theta(k2))` for every present pair.
    pub fn validate(&self) -> Result<()> {
        let k = self.max_rank();
        for r1 in 1..=k {
            for r2 in (r1 + 1)..=k {
                if let Some(p) = self.psi[(r1 - 1) * k + (r2 - 1)] {
                    let bound = self.theta[r1 - 1].min(self.theta[r2 - 1]);
                    if p > bound * (1.0 + 1e-12) {
                        return Err(Error::Domain(format!(
                            "psi({r1},{r2}) = {p} exceeds min marginal {bound}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Text form: `theta <rank> <value>` and `psi <rank1> <rank2> <value>` lines.
    pub fn to_text(&self) -> String {
        let k = self.max_rank();
        let mut out = String::new();
        for (r, t) in self.theta.iter().enumerate() {
            writeln!(out, "theta {} {}", r + 1, t).unwrap();
        }
        for r1 in 1..=k {
            for r2 in (r1 + 1)..=k {
                if let Some(p) = self.psi[(r1 - 1) * k + (r2 - 1)] {
                    writeln!(out, "psi {r1} {r2} {p}").unwrap();
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut theta: Vec<Option<f64>> = Vec::new();
        let mut psi = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::parse(lineno, format!("bad rank {s:?}")))
            };
            let val = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::parse(lineno, format!("bad probability {s:?}")))
            };
            match toks.as_slice() {
                ["theta", r, v] => {
                    let r = num(r)?;
                    if r == 0 {
                        return Err(Error::parse(lineno, "ranks are 1-based"));
                    }
                    if theta.len() < r {
                        theta.resize(r, None);
                    }
                    theta[r - 1] = Some(val(v)?);
                }
                ["psi", r1, r2, v] => psi.push((lineno, num(r1)?, num(r2)?, val(v)?)),
                _ => return Err(Error::parse(lineno, format!("unrecognised record {line:?}"))),
            }
        }
        let theta = theta
            .into_iter()
            .enumerate()
            .map(|(r, t)| t.ok_or_else(|| Error::Config(format!("theta missing for rank {}", r + 1))))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self::from_theta(theta)?;
        for (lineno, r1, r2, v) in psi {
            table
                .set_psi(r1, r2, v)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
