//! Pairwise losses on clicks, on relevance, and the propensity-corrected loss.

use super::matrix::{correction_matrix, pair_encoding, PairCorrectionMatrix};
use super::table::PropensityTable;
use crate::data::QueryCollection;
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, sigmoid, softplus};

/// RankNet component losses `l11, l10, l01, l00` with logistic scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentLoss {
    pub sigma: f64,
}

impl Default for ComponentLoss {
    fn default() -> Self {
        ComponentLoss { sigma: 1.0 }
    }
}

impl ComponentLoss {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(ComponentLoss { sigma })
    }

    /// `1 / (1 + exp(sigma * (a - b)))`.
    pub fn mu(&self, a: f64, b: f64) -> f64 {
        sigmoid(-self.sigma * (a - b))
    }

    /// The vector `z(a, b)` of component losses.
    pub fn z(&self, a: f64, b: f64) -> [f64; 4] {
        [
            0.0,
            softplus(-self.sigma * (a - b)),
            softplus(-self.sigma * (b - a)),
            0.0,
        ]
    }

    /// Partial derivatives of `z(a, b)` with respect to `a` and to `b`.
    pub fn dz(&self, a: f64, b: f64) -> ([f64; 4], [f64; 4]) {
        let s = self.sigma;
        let mu_ab = self.mu(a, b);
        let mu_ba = self.mu(b, a);
        (
            [0.0, -s * mu_ab, s * mu_ba, 0.0],
            [0.0, s * mu_ab, -s * mu_ba, 0.0],
        )
    }
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn check_scores(c: &QueryCollection, scores: &[f64]) -> Result<()> {
    if scores.len() != c.n() {
        return Err(Error::Dimension(format!(
            "query {}: {} scores for {} items",
            c.query_id,
            scores.len(),
            c.n()
        )));
    }
    Ok(())
}

fn check_batch(collections: &[QueryCollection], scores: &[Vec<f64>]) -> Result<()> {
    if collections.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} score vectors for {} collections",
            scores.len(),
            collections.len()
        )));
    }
    Ok(())
}

/// Ordered-pair sum of `z(f_i, f_j)^T s(b_i, b_j)` over `i != j`.
pub fn indicator_pair_loss(labels: &[bool], scores: &[f64], loss: &ComponentLoss) -> f64 {
    let n = labels.len();
    let mut terms = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let s = pair_encoding(labels[i], labels[j]).to_f64();
                terms.push(dot(&loss.z(scores[i], scores[j]), &s));
            }
        }
    }
    pairwise_sum(&terms)
}

pub fn collection_biased_loss(c: &QueryCollection, scores: &[f64], loss: &ComponentLoss) -> Result<f64> {
    check_scores(c, scores)?;
    Ok(indicator_pair_loss(&c.clicks()?, scores, loss))
}

pub fn collection_relevance_loss(c: &QueryCollection, scores: &[f64], loss: &ComponentLoss) -> Result<f64> {
    check_scores(c, scores)?;
    Ok(indicator_pair_loss(&c.relevances()?, scores, loss))
}

/// Pairwise loss computed from click indicators.
pub fn biased_loss(collections: &[QueryCollection], scores: &[Vec<f64>], loss: &ComponentLoss) -> Result<f64> {
    check_batch(collections, scores)?;
    let per = collections
        .iter()
        .zip(scores)
        .map(|(c, s)| collection_biased_loss(c, s, loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&per))
}

/// Pairwise loss computed from the (normally unobserved) relevance indicators.
pub fn relevance_loss(collections: &[QueryCollection], scores: &[Vec<f64>], loss: &ComponentLoss) -> Result<f64> {
    check_batch(collections, scores)?;
    let per = collections
        .iter()
        .zip(scores)
        .map(|(c, s)| collection_relevance_loss(c, s, loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&per))
}

/// Value of the corrected loss on one collection together with the number
/// of ordered pairs that had to be evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub pairs_visited: usize,
}

fn pair_correction(props: &PropensityTable, rank_i: usize, rank_j: usize) -> Result<PairCorrectionMatrix> {
    correction_matrix(props.theta(rank_i)?, props.theta(rank_j)?, props.psi(rank_i, rank_j)?)
}

/// Visits every ordered pair with at least one click and hands it the
/// corrected pair-type weights `A_{ij} s(c_i, c_j)`. Pairs with no click
/// only touch `l00`, which is identically zero, and are skipped.
fn for_each_clicked_pair(
    c: &QueryCollection,
    props: &PropensityTable,
    mut visit: impl FnMut(usize, usize, [f64; 4]),
) -> Result<usize> {
    let clicks = c.clicks()?;
    let ranks = c.ranks();
    let mut visited = 0;
    for i in 0..c.n() {
        if !clicks[i] {
            continue;
        }
        for j in 0..c.n() {
            if i == j {
                continue;
            }
            // (i, j): i clicked.
            let a = pair_correction(props, ranks[i], ranks[j])?;
            visit(i, j, a.apply(pair_encoding(true, clicks[j])));
            visited += 1;
            if !clicks[j] {
                // (j, i): only the second item clicked; the clicked-clicked
                // reverse is visited when the outer loop reaches j.
                let a = pair_correction(props, ranks[j], ranks[i])?;
                visit(j, i, a.apply(pair_encoding(false, true)));
                visited += 1;
            }
        }
    }
    Ok(visited)
}

pub fn collection_unbiased_loss(
    c: &QueryCollection,
    scores: &[f64],
    loss: &ComponentLoss,
    props: &PropensityTable,
) -> Result<PairLoss> {
    check_scores(c, scores)?;
    let mut terms = Vec::new();
    let pairs_visited = for_each_clicked_pair(c, props, |i, j, w| {
        terms.push(dot(&loss.z(scores[i], scores[j]), &w));
    })?;
    Ok(PairLoss {
        value: pairwise_sum(&terms),
        pairs_visited,
    })
}

/// Propensity-corrected pairwise loss; its expectation over examinations
/// equals the relevance-based loss.
pub fn unbiased_loss(
    collections: &[QueryCollection],
    scores: &[Vec<f64>],
    loss: &ComponentLoss,
    props: &PropensityTable,
) -> Result<f64> {
    check_batch(collections, scores)?;
    let per = collections
        .iter()
        .zip(scores)
        .map(|(c, s)| collection_unbiased_loss(c, s, loss, props).map(|p| p.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&per))
}

/// Exact derivative of [`collection_unbiased_loss`] with respect to each
/// item's score, including the clicked-clicked pair terms.
pub fn unbiased_gradient(
    c: &QueryCollection,
    scores: &[f64],
    loss: &ComponentLoss,
    props: &PropensityTable,
) -> Result<Vec<f64>> {
    check_scores(c, scores)?;
    let mut grad = vec![0.0; c.n()];
    for_each_clicked_pair(c, props, |i, j, w| {
        let (da, db) = loss.dz(scores[i], scores[j]);
        grad[i] += dot(&da, &w);
        grad[j] += dot(&db, &w);
    })?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;
    use crate::debias::matrix::correction_matrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clicked(clicks: &[bool]) -> QueryCollection {
        let items = clicks
            .iter()
            .enumerate()
            .map(|(k, &c)| Item::new(vec![0.0], 0, k + 1).with_click(c))
            .collect();
        QueryCollection::new("q", items).unwrap()
    }

    fn with_relevance(c: &mut QueryCollection, rel: &[bool]) {
        for (it, &r) in c.items.iter_mut().zip(rel) {
            it.relevance = Some(r);
        }
    }

    fn table_half_third() -> PropensityTable {
        let mut t = PropensityTable::from_theta(vec![0.5, 1.0 / 3.0]).unwrap();
        t.set_psi(1, 2, 1.0 / 3.0).unwrap();
        t
    }

    /// Full matrix-product evaluation of the corrected loss, no pair skipping.
    fn unbiased_oracle(c: &QueryCollection, scores: &[f64], loss: &ComponentLoss, t: &PropensityTable) -> f64 {
        let clicks = c.clicks().unwrap();
        let mut total = 0.0;
        for i in 0..c.n() {
            for j in 0..c.n() {
                if i == j {
                    continue;
                }
                let (ri, rj) = (c.items[i].initial_rank, c.items[j].initial_rank);
                let m = correction_matrix(t.theta(ri).unwrap(), t.theta(rj).unwrap(), t.psi(ri, rj).unwrap())
                    .unwrap()
                    .matrix();
                let s = pair_encoding(clicks[i], clicks[j]).to_f64();
                let z = loss.z(scores[i], scores[j]);
                for a in 0..4 {
                    for b in 0..4 {
                        total += z[a] * m[a][b] * s[b];
                    }
                }
            }
        }
        total
    }

    #[test]
    fn biased_loss_hand_values() {
        let loss = ComponentLoss::default();
        let c = clicked(&[true, false]);
        let v = biased_loss(&[c], &[vec![0.0, 0.0]], &loss).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.ln(), epsilon = 1e-15);
        assert_eq!(biased_loss(&[clicked(&[false, false])], &[vec![0.3, -1.0]], &loss).unwrap(), 0.0);
        assert_eq!(biased_loss(&[clicked(&[true, true])], &[vec![0.3, -1.0]], &loss).unwrap(), 0.0);
    }

    #[test]
    fn missing_clicks_is_state_error() {
        let c = QueryCollection::new("q", vec![Item::new(vec![0.0], 0, 1)]).unwrap();
        assert!(matches!(biased_loss(&[c], &[vec![0.0]], &ComponentLoss::default()), Err(Error::State(_))));
    }

    #[test]
    fn unbiased_hand_value_and_identity_case() {
        let loss = ComponentLoss::default();
        let c = clicked(&[true, false]);
        let v = unbiased_loss(&[c.clone()], &[vec![0.0, 0.0]], &loss, &table_half_third()).unwrap();
        assert_abs_diff_eq!(v, 4.0 * 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(v, unbiased_oracle(&c, &[0.0, 0.0], &loss, &table_half_third()), epsilon = 1e-14);

        let ones = PropensityTable::constant_one(5);
        let c = clicked(&[true, false, true, false, false]);
        let s = vec![0.2, -0.4, 1.1, 0.0, 0.7];
        assert_abs_diff_eq!(
            unbiased_loss(&[c.clone()], &[s.clone()], &loss, &ones).unwrap(),
            biased_loss(&[c], &[s], &loss).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn relevance_loss_hand_value() {
        let loss = ComponentLoss::default();
        let mut c = clicked(&[false, true]);
        with_relevance(&mut c, &[false, true]);
        let v = relevance_loss(&[c.clone()], &[vec![1.0, 0.0]], &loss).unwrap();
        assert_abs_diff_eq!(v, 2.0 * (1.0 + 1f64.exp()).ln(), epsilon = 1e-14);
        // r == c
        assert_eq!(v, biased_loss(&[c.clone()], &[vec![1.0, 0.0]], &loss).unwrap());
        with_relevance(&mut c, &[false, false]);
        assert_eq!(relevance_loss(&[c], &[vec![1.0, 0.0]], &loss).unwrap(), 0.0);
    }

    #[test]
    fn missing_propensity_is_config_error() {
        let c = clicked(&[true, false, false]);
        let t = table_half_third();
        let err = unbiased_loss(&[c], &[vec![0.0; 3]], &ComponentLoss::default(), &t).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn matches_full_matrix_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let loss = ComponentLoss::new(1.7).unwrap();
        let model = crate::exam::ExaminationModel::independent(crate::exam::ThetaTable::inverse_rank(9));
        let t = PropensityTable::from_model(&model, 9).unwrap();
        for _ in 0..20 {
            let clicks: Vec<bool> = (0..9).map(|_| rng.gen_bool(0.4)).collect();
            let scores: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c = clicked(&clicks);
            let got = collection_unbiased_loss(&c, &scores, &loss, &t).unwrap().value;
            assert_abs_diff_eq!(got, unbiased_oracle(&c, &scores, &loss, &t), epsilon = 1e-9);
        }
    }

    /// The per-item formula for the corrected RankNet gradient, each unordered
    /// pair counted once per item.
    fn single_sum_gradient(c: &QueryCollection, scores: &[f64], sigma: f64, t: &PropensityTable) -> Vec<f64> {
        let clicks = c.clicks().unwrap();
        let mu = |a: f64, b: f64| 1.0 / (1.0 + (sigma * (a - b)).exp());
        (0..c.n())
            .map(|i| {
                let ri = c.items[i].initial_rank;
                let a_i = 1.0 / t.theta(ri).unwrap();
                let (ci, fi) = (f64::from(u8::from(clicks[i])), scores[i]);
                (0..c.n())
                    .filter(|&j| j != i)
                    .map(|j| {
                        let rj = c.items[j].initial_rank;
                        let a_j = 1.0 / t.theta(rj).unwrap();
                        let a_ij = 1.0 / t.psi(ri, rj).unwrap();
                        let (cj, fj) = (f64::from(u8::from(clicks[j])), scores[j]);
                        (-sigma * mu(fi, fj) * (a_i - a_ij) + sigma * mu(fj, fi) * (a_j - a_ij)) * ci * cj
                            - sigma * mu(fi, fj) * a_i * ci * (1.0 - cj)
                            + sigma * mu(fj, fi) * a_j * (1.0 - ci) * cj
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn both_clicked_gradient_example() {
        let loss = ComponentLoss::default();
        let c = clicked(&[true, true]);
        let t = table_half_third();
        let once = single_sum_gradient(&c, &[0.0, 0.0], 1.0, &t);
        assert_abs_diff_eq!(once[0], 0.5, epsilon = 1e-15);
        // The ordered double sum counts each pair in both orientations.
        let g = unbiased_gradient(&c, &[0.0, 0.0], &loss, &t).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-15);
        let h = 1e-5;
        let fd = (collection_unbiased_loss(&c, &[h, 0.0], &loss, &t).unwrap().value
            - collection_unbiased_loss(&c, &[-h, 0.0], &loss, &t).unwrap().value)
            / (2.0 * h);
        assert_abs_diff_eq!(g[0], fd, epsilon = 1e-8);
    }

    #[test]
    fn gradient_is_twice_the_single_sum_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sigma in [1.0, 0.5, 2.5] {
            let loss = ComponentLoss::new(sigma).unwrap();
            let model = crate::exam::ExaminationModel::continuous(crate::exam::ThetaTable::inverse_rank(8)).unwrap();
            let t = PropensityTable::from_model(&model, 8).unwrap();
            let clicks: Vec<bool> = (0..8).map(|_| rng.gen_bool(0.5)).collect();
            let scores: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = clicked(&clicks);
            let g = unbiased_gradient(&c, &scores, &loss, &t).unwrap();
            let once = single_sum_gradient(&c, &scores, sigma, &t);
            for (a, b) in g.iter().zip(&once) {
                assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_propensities_drop_clicked_clicked_terms() {
        let loss = ComponentLoss::default();
        let t = PropensityTable::constant_one(3);
        let g = unbiased_gradient(&clicked(&[true, true, true]), &[0.3, -0.2, 0.9], &loss, &t).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn pair_visits_exclude_unclicked_pairs() {
        let mut clicks = vec![false; 100];
        for k in [4, 50, 77] {
            clicks[k] = true;
        }
        let c = clicked(&clicks);
        let model = crate::exam::ExaminationModel::continuous(crate::exam::ThetaTable::inverse_rank(100)).unwrap();
        let t = PropensityTable::from_model(&model, 100).unwrap();
        let r = collection_unbiased_loss(&c, &vec![0.0; 100], &ComponentLoss::default(), &t).unwrap();
        assert_eq!(r.pairs_visited, 3 * 2 + 2 * 3 * 97);
        assert!(r.pairs_visited <= 3 * 3 + 2 * 3 * 97);
    }
}
