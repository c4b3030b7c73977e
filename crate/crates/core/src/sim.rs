//! Semi-synthetic click generation: relevance drawn from golden labels,
//! examination drawn from a browsing model, click = examined x relevant.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::data::{QueryCollection, MAX_LABEL};
use crate::error::{Error, Result};
use crate::exam::ExaminationModel;
use crate::rng::{content_hash, SeedTree};

/// `P{r = 1} = (2^label - 1) / 15`.
pub fn relevance_probability(label: u8) -> Result<f64> {
    if label > MAX_LABEL {
        return Err(Error::Domain(format!("label {label} outside 0..={MAX_LABEL}")));
    }
    Ok(f64::from((1u32 << label) - 1) / f64::from((1u32 << MAX_LABEL) - 1))
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub truncation_position: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub model: ExaminationModel,
    pub drop_queries_without_relevant: bool,
}

impl SimulationConfig {
    pub fn new(model: ExaminationModel, truncation_position: usize, repetitions: usize, seed: u64) -> Self {
        SimulationConfig {
            truncation_position,
            repetitions,
            seed,
            model,
            drop_queries_without_relevant: true,
        }
    }

    pub fn model_hash(&self) -> String {
        content_hash(&format!("{:?}", self.model))
    }

    fn validate(&self) -> Result<()> {
        if self.truncation_position == 0 || self.repetitions == 0 {
            return Err(Error::Config("truncation and repetitions must be positive".into()));
        }
        if self.model.max_rank() < self.truncation_position {
            return Err(Error::Config(format!(
                "examination model covers ranks up to {} but truncation is {}",
                self.model.max_rank(),
                self.truncation_position
            )));
        }
        Ok(())
    }
}

/// One generated impression of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedList {
    pub repetition: usize,
    pub collection: QueryCollection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub seed: u64,
    pub model_hash: String,
    pub truncation: usize,
    pub lists: Vec<SimulatedList>,
}

impl ClickLog {
    pub fn collections(&self) -> Vec<QueryCollection> {
        self.lists.iter().map(|l| l.collection.clone()).collect()
    }

    /// Text form. Latent relevance/examination columns are written only
    /// when `keep_latent` is set.
    pub fn to_text(&self, features: &str, keep_latent: bool) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# clicklog v1 seed={} model={} truncation={} features={} latent={}",
            self.seed,
            self.model_hash,
            self.truncation,
            features,
            u8::from(keep_latent)
        )
        .unwrap();
        let bit = |b: Option<bool>| u8::from(b.unwrap_or(false));
        for l in &self.lists {
            let mut items: Vec<_> = l.collection.items.iter().collect();
            items.sort_by_key(|it| it.initial_rank);
            for it in items {
                write!(
                    out,
                    "{} {} {} {}",
                    l.collection.query_id,
                    l.repetition,
                    it.initial_rank,
                    bit(it.click)
                )
                .unwrap();
                if keep_latent {
                    write!(out, " {} {}", bit(it.relevance), bit(it.examined)).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses a click log and joins it with the feature file it was made from.
    pub fn parse(text: &str, dataset: &[QueryCollection]) -> Result<ClickLog> {
        let mut header: HashMap<&str, &str> = HashMap::new();
        let by_id: HashMap<&str, &QueryCollection> =
            dataset.iter().map(|c| (c.query_id.as_str(), c)).collect();
        struct Row {
            rank: usize,
            click: bool,
            latent: Option<(bool, bool)>,
        }
        let mut order: Vec<(String, usize)> = Vec::new();
        let mut rows: HashMap<(String, usize), Vec<Row>> = HashMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if let Some(h) = line.strip_prefix('#') {
                for kv in h.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        header.insert(k, v);
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 && toks.len() != 6 {
                return Err(Error::parse(lineno, "expected 4 or 6 fields"));
            }
            let bit = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::parse(lineno, format!("expected 0 or 1, got {s:?}"))),
            };
            let int = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::parse(lineno, format!("bad integer {s:?}")))
            };
            let key = (toks[0].to_string(), int(toks[1])?);
            let row = Row {
                rank: int(toks[2])?,
                click: bit(toks[3])?,
                latent: if toks.len() == 6 {
                    Some((bit(toks[4])?, bit(toks[5])?))
                } else {
                    None
                },
            };
            rows.entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(row);
        }

        let num = |k: &str| -> Result<u64> {
            header
                .get(k)
                .ok_or_else(|| Error::parse(1, format!("header lacks {k}=")))?
                .parse()
                .map_err(|_| Error::parse(1, format!("bad header value for {k}")))
        };
        let seed = num("seed")?;
        let truncation = num("truncation")? as usize;
        let model_hash = header.get("model").copied().unwrap_or("").to_string();

        let mut lists = Vec::with_capacity(order.len());
        for key in order {
            let base = by_id
                .get(key.0.as_str())
                .ok_or_else(|| Error::Integrity(format!("query {} not in feature file", key.0)))?;
            let mut coll = base.truncate(truncation);
            let entries = rows.remove(&key).expect("grouped rows");
            if entries.len() != coll.n() {
                return Err(Error::Integrity(format!(
                    "query {} repetition {}: {} click rows for {} items",
                    key.0,
                    key.1,
                    entries.len(),
                    coll.n()
                )));
            }
            for row in entries {
                let item = coll
                    .items
                    .iter_mut()
                    .find(|it| it.initial_rank == row.rank)
                    .ok_or_else(|| Error::Integrity(format!("query {}: no item at rank {}", key.0, row.rank)))?;
                if item.click.is_some() {
                    return Err(Error::Integrity(format!("query {}: duplicate rank {}", key.0, row.rank)));
                }
                item.click = Some(row.click);
                if let Some((r, e)) = row.latent {
                    item.relevance = Some(r);
                    item.examined = Some(e);
                }
            }
            coll.validate()?;
            lists.push(SimulatedList {
                repetition: key.1,
                collection: coll,
            });
        }
        Ok(ClickLog {
            seed,
            model_hash,
            truncation,
            lists,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, features: &str, keep_latent: bool) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text(features, keep_latent)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, dataset: &[QueryCollection]) -> Result<ClickLog> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dataset)
    }
}

/// Fills relevance, examination and click for one truncated collection.
pub fn simulate_collection<R: Rng + ?Sized>(
    collection: &QueryCollection,
    model: &ExaminationModel,
    rng: &mut R,
) -> Result<QueryCollection> {
    let mut out = collection.clone();
    let relevance = out
        .items
        .iter()
        .map(|it| relevance_probability(it.golden_label).map(|p| rng.gen::<f64>() < p))
        .collect::<Result<Vec<_>>>()?;
    let examined = model.sample_examinations(out.n(), rng)?;
    for (it, r) in out.items.iter_mut().zip(relevance) {
        let e = examined[it.initial_rank - 1];
        it.relevance = Some(r);
        it.examined = Some(e);
        it.click = Some(r && e);
    }
    Ok(out)
}

/// Generates `repetitions` click lists per retained query, in canonical
/// (query, repetition) order.
pub fn simulate(dataset: &[QueryCollection], config: &SimulationConfig) -> Result<ClickLog> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed);
    let retained: Vec<QueryCollection> = dataset
        .iter()
        .map(|c| c.truncate(config.truncation_position))
        .filter(|c| !config.drop_queries_without_relevant || c.has_positive_label())
        .collect();
    let per_query = retained
        .par_iter()
        .map(|c| {
            (0..config.repetitions)
                .map(|rep| {
                    let mut rng = seeds.query_stream("clicks", &c.query_id, rep as u64);
                    Ok(SimulatedList {
                        repetition: rep,
                        collection: simulate_collection(c, &config.model, &mut rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClickLog {
        seed: config.seed,
        model_hash: config.model_hash(),
        truncation: config.truncation_position,
        lists: per_query.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;
    use crate::exam::ThetaTable;

    fn dataset(labels: &[&[u8]]) -> Vec<QueryCollection> {
        labels
            .iter()
            .enumerate()
            .map(|(q, ls)| {
                let items = ls
                    .iter()
                    .enumerate()
                    .map(|(k, &l)| Item::new(vec![k as f64, q as f64], l, k + 1))
                    .collect();
                QueryCollection::new(format!("q{q}"), items).unwrap()
            })
            .collect()
    }

    #[test]
    fn relevance_probabilities() {
        assert_eq!(relevance_probability(4).unwrap(), 1.0);
        assert_eq!(relevance_probability(0).unwrap(), 0.0);
        assert!((relevance_probability(2).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(relevance_probability(5), Err(Error::Domain(_))));
    }

    #[test]
    fn all_zero_labels() {
        let ds = dataset(&[&[0, 0, 0], &[0, 0]]);
        let model = ExaminationModel::independent(ThetaTable::inverse_rank(3));
        let mut cfg = SimulationConfig::new(model, 3, 4, 1);
        cfg.drop_queries_without_relevant = false;
        let log = simulate(&ds, &cfg).unwrap();
        assert_eq!(log.lists.len(), 8);
        assert!(log.lists.iter().all(|l| l.collection.items.iter().all(|it| it.click == Some(false))));
        cfg.drop_queries_without_relevant = true;
        assert!(simulate(&ds, &cfg).unwrap().lists.is_empty());
    }

    #[test]
    fn full_examination_clicks_every_top_grade() {
        let ds = dataset(&[&[4, 4, 4, 4]]);
        let model = ExaminationModel::independent(ThetaTable::constant(4, 1.0).unwrap());
        let log = simulate(&ds, &SimulationConfig::new(model, 4, 16, 9)).unwrap();
        assert!(log.lists.iter().all(|l| l.collection.items.iter().all(|it| it.click == Some(true))));
    }

    #[test]
    fn output_size_and_order() {
        let ds = dataset(&[&[0, 0, 0, 2], &[0, 0, 0, 0], &[0, 3, 0]]);
        let model = ExaminationModel::continuous(ThetaTable::inverse_rank(10)).unwrap();
        let log = simulate(&ds, &SimulationConfig::new(model, 2, 16, 5)).unwrap();
        // Query 0 has no relevant item in its top 2 and is dropped.
        assert_eq!(log.lists.len(), 16);
        assert!(log.lists.iter().all(|l| l.collection.query_id == "q2" && l.collection.n() == 2));
        let reps: Vec<_> = log.lists.iter().map(|l| l.repetition).collect();
        assert_eq!(reps, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn short_model_is_config_error() {
        let ds = dataset(&[&[1, 2, 3]]);
        let model = ExaminationModel::independent(ThetaTable::inverse_rank(2));
        let err = simulate(&ds, &SimulationConfig::new(model, 3, 1, 0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn deterministic_and_text_round_trip() {
        let ds = dataset(&[&[1, 2, 3, 4, 0, 1], &[2, 2, 0, 1, 3, 4]]);
        let model = ExaminationModel::continuous(ThetaTable::inverse_rank(6)).unwrap();
        let cfg = SimulationConfig::new(model, 5, 8, 2022);
        let a = simulate(&ds, &cfg).unwrap();
        let b = simulate(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let text = a.to_text("train.txt", true);
        assert_eq!(text, b.to_text("train.txt", true));
        let back = ClickLog::parse(&text, &ds).unwrap();
        assert_eq!(back, a);
        let hidden = ClickLog::parse(&a.to_text("train.txt", false), &ds).unwrap();
        assert!(hidden.lists[0].collection.items[0].relevance.is_none());
        assert_eq!(
            hidden.lists.iter().map(|l| l.collection.clicks().unwrap()).collect::<Vec<_>>(),
            a.lists.iter().map(|l| l.collection.clicks().unwrap()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn click_is_examined_and_relevant_and_within_prefix() {
        let ds = dataset(&[&[1, 2, 3, 4, 0, 1, 2, 3, 4, 2]]);
        let model = ExaminationModel::continuous(ThetaTable::inverse_rank(10)).unwrap();
        let log = simulate(&ds, &SimulationConfig::new(model, 10, 500, 77)).unwrap();
        for l in &log.lists {
            let c = &l.collection;
            let max_examined = c.items.iter().filter(|it| it.examined == Some(true)).map(|it| it.initial_rank).max();
            for it in &c.items {
                assert_eq!(it.click, Some(it.examined.unwrap() && it.relevance.unwrap()));
                if it.click == Some(true) {
                    assert!(it.initial_rank <= max_examined.unwrap());
                }
            }
        }
    }
}
