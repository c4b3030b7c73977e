//! Synthetic ranking datasets with a planted relevance function and a
//! deliberately imperfect logging ranker.
//!
//! Relevance signal: `u = sum_k w_k x_k` over the first (up to) five
//! features, plus a per-query offset and item noise; labels come from fixed
//! thresholds on the standardized score. The logging ranker mixes part of
//! that signal with two distractor features and noise, so clicks gathered
//! under position bias over-reward the distractors.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{format_dataset, Item, QueryCollection};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

const SIGNAL_WEIGHTS: [f64; 5] = [1.0, 0.8, 0.6, 0.5, 0.4];
const QUERY_SD: f64 = 0.4;
const ITEM_NOISE_SD: f64 = 0.5;
/// Upper edges of labels 0..3 on the standardized relevance score.
const LABEL_CUTS: [f64; 4] = [-0.6, 0.45, 1.3, 1.9];
const PROD_SIGNAL: f64 = 0.5;
const PROD_DISTRACTOR: f64 = 0.8;
const PROD_NOISE_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_queries: usize,
    pub items_per_query: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub id_prefix: String,
}

impl SynthSpec {
    pub fn new(num_queries: usize, items_per_query: usize, feature_dim: usize, seed: u64) -> Self {
        SynthSpec {
            num_queries,
            items_per_query,
            feature_dim,
            seed,
            id_prefix: "q".into(),
        }
    }

    fn signal_len(&self) -> usize {
        self.feature_dim.min(SIGNAL_WEIGHTS.len())
    }

    fn distractors(&self) -> Vec<usize> {
        (self.signal_len()..self.feature_dim).take(2).collect()
    }

    /// Comment block describing the planted functions (1-based feature ids).
    pub fn header(&self) -> String {
        let signal: Vec<String> = SIGNAL_WEIGHTS[..self.signal_len()]
            .iter()
            .enumerate()
            .map(|(k, w)| format!("{w}*f{}", k + 1))
            .collect();
        let distract: Vec<String> = self.distractors().iter().map(|f| format!("f{}", f + 1)).collect();
        format!(
            "# synthetic seed={} queries={} items={} features={}\n\
             # relevance u = ({}) / |w| + N(0,{QUERY_SD}^2) per query + N(0,{ITEM_NOISE_SD}^2) per item\n\
             # label = number of cuts {:?} below u / sd(u)\n\
             # logging score = {PROD_SIGNAL}*signal + {PROD_DISTRACTOR}*mean({}) * sqrt(2) + N(0,{PROD_NOISE_SD}^2)\n",
            self.seed,
            self.num_queries,
            self.items_per_query,
            self.feature_dim,
            signal.join(" + "),
            LABEL_CUTS,
            distract.join(","),
        )
    }
}

/// Generates the dataset; items of each query are listed in logging-rank order.
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<Vec<QueryCollection>> {
    if spec.num_queries == 0 || spec.items_per_query == 0 || spec.feature_dim == 0 {
        return Err(Error::Config("query, item and feature counts must be positive".into()));
    }
    let seeds = SeedTree::new(spec.seed);
    let weights = &SIGNAL_WEIGHTS[..spec.signal_len()];
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let u_sd = (1.0 + QUERY_SD * QUERY_SD + ITEM_NOISE_SD * ITEM_NOISE_SD).sqrt();
    let distractors = spec.distractors();
    let d_norm = (distractors.len().max(1) as f64).sqrt();
    (0..spec.num_queries)
        .into_par_iter()
        .map(|q| {
            let mut rng = seeds.stream(&[b"synth", &(q as u64).to_le_bytes()]);
            let mut normal = || -> f64 { rng.sample(StandardNormal) };
            let offset = QUERY_SD * normal();
            let mut drafts: Vec<(f64, Vec<f64>, u8)> = (0..spec.items_per_query)
                .map(|_| {
                    let x: Vec<f64> = (0..spec.feature_dim).map(|_| normal()).collect();
                    let signal = weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() / norm;
                    let u = (signal + offset + ITEM_NOISE_SD * normal()) / u_sd;
                    let label = LABEL_CUTS.iter().filter(|&&c| u > c).count() as u8;
                    let distract = distractors.iter().map(|&f| x[f]).sum::<f64>() / d_norm;
                    let prod = PROD_SIGNAL * signal + PROD_DISTRACTOR * distract + PROD_NOISE_SD * normal();
                    (prod, x, label)
                })
                .collect();
            drafts.sort_by(|a, b| b.0.total_cmp(&a.0));
            let items = drafts
                .into_iter()
                .enumerate()
                .map(|(k, (_, x, label))| Item::new(x, label, k + 1))
                .collect();
            QueryCollection::new(format!("{}{q}", spec.id_prefix), items)
        })
        .collect()
}

/// Dataset file contents (ranked svmlight with the descriptive header).
pub fn synthetic_dataset_text(spec: &SynthSpec) -> Result<String> {
    let data = generate_synthetic_dataset(spec)?;
    Ok(spec.header() + &format_dataset(&data, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_dataset, DatasetFormat};

    #[test]
    fn generated_files_load_and_cover_all_grades() {
        let spec = SynthSpec::new(100, 30, 20, 7);
        let text = synthetic_dataset_text(&spec).unwrap();
        let back = parse_dataset(&text, DatasetFormat::SvmlightRanked, None).unwrap();
        assert_eq!(back.len(), 100);
        assert!(back.iter().all(|c| c.n() == 30 && c.dim() == 20));
        let mut hist = [0usize; 5];
        for c in &back {
            for l in c.labels() {
                hist[l as usize] += 1;
            }
        }
        assert!(hist.iter().all(|&h| h > 0), "label histogram {hist:?}");
        assert_eq!(back, generate_synthetic_dataset(&spec).unwrap());
    }

    #[test]
    fn single_item_queries_and_determinism() {
        let spec = SynthSpec::new(5, 1, 3, 1);
        let a = synthetic_dataset_text(&spec).unwrap();
        assert_eq!(a, synthetic_dataset_text(&spec).unwrap());
        let back = parse_dataset(&a, DatasetFormat::SvmlightRanked, None).unwrap();
        assert!(back.iter().all(|c| c.n() == 1 && c.items[0].initial_rank == 1));
        assert!(matches!(
            generate_synthetic_dataset(&SynthSpec::new(0, 3, 3, 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn logging_ranker_is_informative_but_imperfect() {
        let data = generate_synthetic_dataset(&SynthSpec::new(300, 30, 20, 3)).unwrap();
        let mean_label_at = |k: usize| {
            data.iter().map(|c| f64::from(c.items[k].golden_label)).sum::<f64>() / data.len() as f64
        };
        let (top, bottom) = (mean_label_at(0), mean_label_at(29));
        assert!(top > bottom + 0.2, "top {top} bottom {bottom}");
        let perfect = data
            .iter()
            .filter(|c| c.labels().windows(2).all(|w| w[0] >= w[1]))
            .count();
        assert!(perfect < 10);
    }
}
