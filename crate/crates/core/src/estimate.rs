//! Swap-intervention estimators for marginal and joint examination
//! probabilities.
//!
//! A randomized bucket moves the targeted item(s) to the top positions.
//! Relevance is unaffected by the move, so the ratio of click rates between
//! buckets isolates the ratio of examination probabilities.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;

use crate::debias::PropensityTable;
use crate::error::{Error, Result};
use crate::exam::{ExaminationModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bucket {
    Swap,
    NoSwap,
}

impl Bucket {
    fn token(self) -> &'static str {
        match self {
            Bucket::Swap => "swap",
            Bucket::NoSwap => "no_swap",
        }
    }
}

/// Clicks recorded for the targeted positions of one impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// The item the logging ranker put at `rank`.
    Single { rank: usize, click: bool },
    /// The items the logging ranker put at `ranks.0` and `ranks.1`.
    Pair { ranks: (usize, usize), clicks: (bool, bool) },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterventionLog {
    pub records: Vec<(Bucket, Observation)>,
}

impl InterventionLog {
    pub fn push(&mut self, bucket: Bucket, obs: Observation) {
        self.records.push((bucket, obs));
    }

    pub fn extend(&mut self, other: InterventionLog) {
        self.records.extend(other.records);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (b, obs) in &self.records {
            match obs {
                Observation::Single { rank, click } => {
                    writeln!(out, "{} {} {}", b.token(), rank, u8::from(*click)).unwrap()
                }
                Observation::Pair { ranks, clicks } => writeln!(
                    out,
                    "{} {} {} {} {}",
                    b.token(),
                    ranks.0,
                    ranks.1,
                    u8::from(clicks.0),
                    u8::from(clicks.1)
                )
                .unwrap(),
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = InterventionLog::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bucket = match toks[0] {
                "swap" => Bucket::Swap,
                "no_swap" | "no-swap" => Bucket::NoSwap,
                other => return Err(Error::parse(lineno, format!("unknown bucket {other:?}"))),
            };
            let rank = |s: &str| -> Result<usize> {
                match s.parse() {
                    Ok(r) if r >= 1 => Ok(r),
                    _ => Err(Error::parse(lineno, format!("bad rank {s:?}"))),
                }
            };
            let bit = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::parse(lineno, format!("expected 0 or 1, got {s:?}"))),
            };
            let obs = match toks.len() {
                3 => Observation::Single {
                    rank: rank(toks[1])?,
                    click: bit(toks[2])?,
                },
                5 => Observation::Pair {
                    ranks: (rank(toks[1])?, rank(toks[2])?),
                    clicks: (bit(toks[3])?, bit(toks[4])?),
                },
                _ => return Err(Error::parse(lineno, "expected 3 or 5 fields")),
            };
            log.push(bucket, obs);
        }
        Ok(log)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Distinct single targets and pair targets present in the log.
    pub fn targets(&self) -> (Vec<usize>, Vec<(usize, usize)>) {
        let mut singles = std::collections::BTreeSet::new();
        let mut pairs = std::collections::BTreeSet::new();
        for (_, obs) in &self.records {
            match obs {
                Observation::Single { rank, .. } => {
                    singles.insert(*rank);
                }
                Observation::Pair { ranks, .. } => {
                    pairs.insert(*ranks);
                }
            }
        }
        (singles.into_iter().collect(), pairs.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Each bucket must hold at least this many impressions.
    pub min_impressions: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { min_impressions: 100 }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Rates {
    swap: (usize, usize),
    no_swap: (usize, usize),
}

impl Rates {
    fn add(&mut self, bucket: Bucket, hit: bool) {
        let slot = match bucket {
            Bucket::Swap => &mut self.swap,
            Bucket::NoSwap => &mut self.no_swap,
        };
        slot.0 += usize::from(hit);
        slot.1 += 1;
    }

    /// no-swap rate / swap rate, after the sample-size guards.
    fn ratio(&self, cfg: &EstimatorConfig, what: &str) -> Result<f64> {
        for (name, (_, n)) in [("swap", self.swap), ("no-swap", self.no_swap)] {
            if n == 0 {
                return Err(Error::State(format!("{what}: {name} bucket is empty")));
            }
            if n < cfg.min_impressions {
                return Err(Error::InsufficientData(format!(
                    "{what}: {name} bucket has {n} impressions, need {}",
                    cfg.min_impressions
                )));
            }
        }
        if self.swap.0 == 0 {
            return Err(Error::InsufficientData(format!("{what}: no clicks in the swap bucket")));
        }
        let rate = |(hits, n): (usize, usize)| hits as f64 / n as f64;
        Ok(rate(self.no_swap) / rate(self.swap))
    }
}

/// `theta_hat(k)` relative to an always-examined first position.
pub fn estimate_marginal(log: &InterventionLog, rank: usize, cfg: &EstimatorConfig) -> Result<f64> {
    let mut rates = Rates::default();
    for (b, obs) in &log.records {
        if let Observation::Single { rank: r, click } = obs {
            if *r == rank {
                rates.add(*b, *click);
            }
        }
    }
    rates.ratio(cfg, &format!("theta({rank})"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEstimate {
    /// Ratio estimate before clamping.
    pub raw: f64,
    pub value: f64,
    pub clamped: bool,
}

/// `psi_hat(k1, k2) = theta_hat(2) * joint-click rate (no swap) / joint-click
/// rate (swap)`. With `marginals` the result is clamped to
/// `(0, min(theta_hat(k1), theta_hat(k2))]` and a warning is logged.
pub fn estimate_joint(
    log: &InterventionLog,
    ranks: (usize, usize),
    theta_2_hat: f64,
    marginals: Option<(f64, f64)>,
    cfg: &EstimatorConfig,
) -> Result<JointEstimate> {
    if !(theta_2_hat > 0.0 && theta_2_hat <= 1.0) {
        return Err(Error::Domain(format!("theta_hat(2) = {theta_2_hat} is not in (0, 1]")));
    }
    let mut rates = Rates::default();
    for (b, obs) in &log.records {
        if let Observation::Pair { ranks: r, clicks } = obs {
            if *r == ranks {
                rates.add(*b, clicks.0 && clicks.1);
            }
        }
    }
    let raw = theta_2_hat * rates.ratio(cfg, &format!("psi{ranks:?}"))?;
    let mut value = raw;
    let mut clamped = false;
    if let Some((t1, t2)) = marginals {
        let bound = t1.min(t2);
        if value > bound {
            warn!("psi{ranks:?} estimate {raw} exceeds min marginal {bound}; clamped");
            value = bound;
            clamped = true;
        }
    }
    if value <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "psi{ranks:?}: no joint clicks in the no-swap bucket"
        )));
    }
    Ok(JointEstimate { raw, value, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Pick whichever of `theta*theta` and `min(theta)` fits the estimates
    /// with the smaller sum of squared residuals.
    ModelFit,
    /// Copy the closest estimated pair (L1 distance on ranks).
    NearestPair,
}

impl std::str::FromStr for Extrapolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model-fit" => Ok(Extrapolation::ModelFit),
            "nearest-pair" => Ok(Extrapolation::NearestPair),
            other => Err(Error::Config(format!("unknown extrapolation strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolatedTable {
    pub table: PropensityTable,
    /// Chosen closed form for [`Extrapolation::ModelFit`].
    pub chosen: Option<Variant>,
    pub ssr_independent: f64,
    pub ssr_continuous: f64,
}

pub fn extrapolate_joint(
    estimates: &BTreeMap<(usize, usize), f64>,
    theta: &[f64],
    strategy: Extrapolation,
) -> Result<ExtrapolatedTable> {
    if estimates.is_empty() {
        return Err(Error::State("no joint estimates to extrapolate from".into()));
    }
    let k = theta.len();
    let mut table = PropensityTable::from_theta(theta.to_vec())?;
    let th = |r: usize| theta[r - 1];
    let mut ssr_independent = 0.0;
    let mut ssr_continuous = 0.0;
    let mut normalized = BTreeMap::new();
    for (&(a, b), &v) in estimates {
        let (a, b) = (a.min(b), a.max(b));
        if a == b || b > k {
            return Err(Error::Domain(format!("estimated pair ({a},{b}) outside 1..={k}")));
        }
        ssr_independent += (v - th(a) * th(b)).powi(2);
        ssr_continuous += (v - th(a).min(th(b))).powi(2);
        normalized.insert((a, b), v);
    }
    let chosen = match strategy {
        Extrapolation::ModelFit if ssr_continuous < ssr_independent => Some(Variant::Continuous),
        Extrapolation::ModelFit => Some(Variant::Independent),
        Extrapolation::NearestPair => None,
    };
    for a in 1..=k {
        for b in (a + 1)..=k {
            let bound = th(a).min(th(b));
            let v = match (normalized.get(&(a, b)), chosen) {
                (Some(&v), _) => v,
                (None, Some(Variant::Continuous)) => bound,
                (None, Some(_)) => th(a) * th(b),
                (None, None) => {
                    let (_, &v) = normalized
                        .iter()
                        .min_by_key(|(&(x, y), _)| (a.abs_diff(x) + b.abs_diff(y), x, y))
                        .expect("non-empty");
                    v
                }
            };
            table.set_psi(a, b, v.min(bound))?;
        }
    }
    Ok(ExtrapolatedTable {
        table,
        chosen,
        ssr_independent,
        ssr_continuous,
    })
}

/// Simulates the single-item intervention for `rank`: in the swap bucket the
/// item the logging ranker placed at `rank` is shown at position 1.
///
/// `relevance[p - 1]` is the relevance probability of the item the logging
/// ranker places at position `p`.
pub fn simulate_single_swap<R: Rng + ?Sized>(
    model: &ExaminationModel,
    relevance: &[f64],
    rank: usize,
    impressions: usize,
    swap_probability: f64,
    rng: &mut R,
) -> Result<InterventionLog> {
    let n = relevance.len();
    if rank < 2 || rank > n {
        return Err(Error::Domain(format!("single-swap target {rank} must be in 2..={n}")));
    }
    let mut log = InterventionLog::default();
    for _ in 0..impressions {
        let swap = rng.gen::<f64>() < swap_probability;
        let e = model.sample_examinations(n, rng)?;
        let r = rng.gen::<f64>() < relevance[rank - 1];
        let shown_at = if swap { 1 } else { rank };
        let bucket = if swap { Bucket::Swap } else { Bucket::NoSwap };
        log.push(bucket, Observation::Single { rank, click: r && e[shown_at - 1] });
    }
    Ok(log)
}

/// Simulates the pair intervention: in the swap bucket the items at `k1` and
/// `k2` are shown at positions 1 and 2.
pub fn simulate_pair_swap<R: Rng + ?Sized>(
    model: &ExaminationModel,
    relevance: &[f64],
    (k1, k2): (usize, usize),
    impressions: usize,
    swap_probability: f64,
    rng: &mut R,
) -> Result<InterventionLog> {
    let n = relevance.len();
    if !(k1 < k2 && k2 <= n) || k1 == 0 {
        return Err(Error::Domain(format!("pair-swap targets ({k1},{k2}) must satisfy k1 < k2 <= {n}")));
    }
    let mut log = InterventionLog::default();
    for _ in 0..impressions {
        let swap = rng.gen::<f64>() < swap_probability;
        let e = model.sample_examinations(n, rng)?;
        let r1 = rng.gen::<f64>() < relevance[k1 - 1];
        let r2 = rng.gen::<f64>() < relevance[k2 - 1];
        let (p1, p2) = if swap { (1, 2) } else { (k1, k2) };
        let bucket = if swap { Bucket::Swap } else { Bucket::NoSwap };
        log.push(
            bucket,
            Observation::Pair {
                ranks: (k1, k2),
                clicks: (r1 && e[p1 - 1], r2 && e[p2 - 1]),
            },
        );
    }
    Ok(log)
}

/// Marginals for every single target in the log (`theta(1) = 1`), joint
/// estimates for every pair target, and a full table up to `max_rank`.
/// `theta_2` overrides the estimate of `theta(2)` used by the joint estimator.
pub fn estimate_table(
    log: &InterventionLog,
    max_rank: usize,
    theta_2: Option<f64>,
    strategy: Extrapolation,
    cfg: &EstimatorConfig,
) -> Result<ExtrapolatedTable> {
    let (singles, pairs) = log.targets();
    let mut theta = vec![None; max_rank];
    theta[0] = Some(1.0);
    for k in singles.into_iter().filter(|&k| k >= 2 && k <= max_rank) {
        let mut t = estimate_marginal(log, k, cfg)?;
        if t > 1.0 {
            warn!("theta({k}) estimate {t} exceeds 1; clamped");
            t = 1.0;
        }
        if t <= 0.0 {
            return Err(Error::InsufficientData(format!("theta({k}): no clicks in the no-swap bucket")));
        }
        theta[k - 1] = Some(t);
    }
    if let Some(t2) = theta_2 {
        if max_rank >= 2 {
            theta[1] = Some(t2);
        }
    }
    let theta = theta
        .into_iter()
        .enumerate()
        .map(|(k, t)| t.ok_or_else(|| Error::InsufficientData(format!("no estimate for theta({})", k + 1))))
        .collect::<Result<Vec<_>>>()?;
    let theta_2_hat = theta.get(1).copied().unwrap_or(1.0);
    let mut estimates = BTreeMap::new();
    for (k1, k2) in pairs.into_iter().filter(|&(a, b)| a.max(b) <= max_rank && a != b) {
        let m = (theta[k1 - 1], theta[k2 - 1]);
        let est = estimate_joint(log, (k1, k2), theta_2_hat, Some(m), cfg)?;
        estimates.insert((k1, k2), est.value);
    }
    if estimates.is_empty() {
        // Only marginals were estimated: fall back to the closed form chosen
        // by the strategy with no evidence, i.e. independence.
        let mut table = PropensityTable::from_theta(theta.clone())?;
        for a in 1..=max_rank {
            for b in (a + 1)..=max_rank {
                table.set_psi(a, b, theta[a - 1] * theta[b - 1])?;
            }
        }
        return Ok(ExtrapolatedTable {
            table,
            chosen: Some(Variant::Independent),
            ssr_independent: 0.0,
            ssr_continuous: 0.0,
        });
    }
    extrapolate_joint(&estimates, &theta, strategy)
}

/// Pairs worth intervening on for a table up to `max_rank`: each rank with
/// its neighbour and with the last rank.
pub fn default_pair_targets(max_rank: usize) -> Vec<(usize, usize)> {
    let mut out = std::collections::BTreeSet::new();
    for k in 3..max_rank {
        out.insert((k, k + 1));
        out.insert((k, max_rank));
    }
    out.into_iter().collect()
}
