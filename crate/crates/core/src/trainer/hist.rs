//! Feature binning and leaf-wise histogram tree growth.

use rayon::prelude::*;

use super::tree::{Node, Tree};

/// Column-major bin indices plus the split threshold of every bin.
#[derive(Debug, Clone)]
pub(crate) struct BinnedData {
    cols: Vec<Vec<u8>>,
    /// `uppers[f][b]`: values `<=` this fall in bins `0..=b`.
    uppers: Vec<Vec<f64>>,
}

fn bin_uppers(mut values: Vec<f64>, max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct = values.clone();
    distinct.dedup();
    let mid = |a: f64, b: f64| a + (b - a) / 2.0;
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| mid(w[0], w[1])).collect();
    }
    let n = values.len();
    let mut out: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for k in 1..max_bins {
        let idx = k * n / max_bins;
        let (a, b) = (values[idx - 1], values[idx]);
        if a < b {
            let u = mid(a, b);
            if out.last().map_or(true, |&last| u > last) {
                out.push(u);
            }
        }
    }
    out
}

impl BinnedData {
    pub(crate) fn new(rows: &[&[f64]], dim: usize, max_bins: usize) -> Self {
        let per_feature: Vec<(Vec<u8>, Vec<f64>)> = (0..dim)
            .into_par_iter()
            .map(|f| {
                let uppers = bin_uppers(rows.iter().map(|r| r[f]).collect(), max_bins);
                let col = rows
                    .iter()
                    .map(|r| uppers.partition_point(|&u| u < r[f]) as u8)
                    .collect();
                (col, uppers)
            })
            .collect();
        let (cols, uppers) = per_feature.into_iter().unzip();
        BinnedData { cols, uppers }
    }

    fn num_bins(&self, f: usize) -> usize {
        self.uppers[f].len() + 1
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_leaves: usize,
    pub min_samples: usize,
    pub min_hessian: f64,
}

#[derive(Debug, Clone)]
struct Hist {
    g: Vec<f64>,
    h: Vec<f64>,
    c: Vec<u32>,
}

impl Hist {
    fn minus(&self, other: &Hist) -> Hist {
        Hist {
            g: self.g.iter().zip(&other.g).map(|(a, b)| a - b).collect(),
            h: self.h.iter().zip(&other.h).map(|(a, b)| a - b).collect(),
            c: self.c.iter().zip(&other.c).map(|(a, b)| a - b).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    /// Position in the sampled feature list.
    slot: usize,
    bin: usize,
    gain: f64,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    hists: Vec<Hist>,
    g: f64,
    h: f64,
    best: Option<Split>,
}

struct Grower<'a> {
    data: &'a BinnedData,
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    p: GrowParams,
}

impl Grower<'_> {
    fn hists(&self, rows: &[u32]) -> Vec<Hist> {
        self.features
            .par_iter()
            .map(|&f| {
                let nb = self.data.num_bins(f);
                let col = &self.data.cols[f];
                let mut h = Hist {
                    g: vec![0.0; nb],
                    h: vec![0.0; nb],
                    c: vec![0; nb],
                };
                for &r in rows {
                    let r = r as usize;
                    let b = col[r] as usize;
                    h.g[b] += self.grad[r];
                    h.h[b] += self.hess[r];
                    h.c[b] += 1;
                }
                h
            })
            .collect()
    }

    fn leaf(&self, node: usize, rows: Vec<u32>, hists: Vec<Hist>) -> Leaf {
        let g = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let mut leaf = Leaf {
            node,
            rows,
            hists,
            g,
            h,
            best: None,
        };
        leaf.best = self.best_split(&leaf);
        leaf
    }

    /// Highest gain split; ties keep the earlier feature and lower bin.
    fn best_split(&self, leaf: &Leaf) -> Option<Split> {
        let n = leaf.rows.len();
        let min_n = self.p.min_samples;
        if n < 2 * min_n || leaf.h <= 0.0 {
            return None;
        }
        let parent = leaf.g * leaf.g / leaf.h;
        let mut best: Option<Split> = None;
        for (slot, hist) in leaf.hists.iter().enumerate() {
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for bin in 0..hist.g.len().saturating_sub(1) {
                gl += hist.g[bin];
                hl += hist.h[bin];
                cl += hist.c[bin] as usize;
                let cr = n - cl;
                if cl < min_n {
                    continue;
                }
                if cr < min_n {
                    break;
                }
                let (gr, hr) = (leaf.g - gl, leaf.h - hl);
                if hl < self.p.min_hessian || hr < self.p.min_hessian {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - parent;
                if gain > 0.0 && best.map_or(true, |b| gain > b.gain) {
                    best = Some(Split { slot, bin, gain });
                }
            }
        }
        best
    }

    fn value(&self, leaf: &Leaf) -> f64 {
        -leaf.g / leaf.h.max(self.p.min_hessian)
    }
}

/// Grows one tree on `rows` using only `features` (sorted ascending).
pub(crate) fn grow_tree(
    data: &BinnedData,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<u32>,
    features: &[usize],
    p: GrowParams,
) -> Tree {
    let grower = Grower {
        data,
        grad,
        hess,
        features,
        p,
    };
    let mut nodes = vec![Node::Leaf(0.0)];
    let hists = grower.hists(&rows);
    let mut leaves = vec![grower.leaf(0, rows, hists)];
    while leaves.len() < p.max_leaves {
        let mut pick: Option<(usize, f64)> = None;
        for (i, l) in leaves.iter().enumerate() {
            if let Some(s) = l.best {
                if pick.map_or(true, |(_, g)| s.gain > g) {
                    pick = Some((i, s.gain));
                }
            }
        }
        let Some((i, _)) = pick else { break };
        let parent = leaves.remove(i);
        let split = parent.best.expect("picked leaf has a split");
        let feature = features[split.slot];
        let col = &data.cols[feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            parent.rows.iter().partition(|&&r| col[r as usize] as usize <= split.bin);
        let (l_node, r_node) = (nodes.len(), nodes.len() + 1);
        nodes[parent.node] = Node::Split {
            feature,
            threshold: data.uppers[feature][split.bin],
            left: l_node,
            right: r_node,
        };
        nodes.push(Node::Leaf(0.0));
        nodes.push(Node::Leaf(0.0));
        let left_small = left_rows.len() <= right_rows.len();
        let small = grower.hists(if left_small { &left_rows } else { &right_rows });
        let large: Vec<Hist> = parent.hists.iter().zip(&small).map(|(p, s)| p.minus(s)).collect();
        let (lh, rh) = if left_small { (small, large) } else { (large, small) };
        // Keep creation order so ties resolve toward earlier leaves.
        leaves.insert(i, grower.leaf(r_node, right_rows, rh));
        leaves.insert(i, grower.leaf(l_node, left_rows, lh));
    }
    for l in &leaves {
        nodes[l.node] = Node::Leaf(grower.value(l));
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(max_leaves: usize, min_samples: usize) -> GrowParams {
        GrowParams {
            max_leaves,
            min_samples,
            min_hessian: 1e-3,
        }
    }

    #[test]
    fn bins_respect_threshold_rule() {
        let xs: Vec<Vec<f64>> = (0..1000).map(|i| vec![((i * 37) % 1000) as f64 / 7.0]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let d = BinnedData::new(&rows, 1, 255);
        assert!(d.num_bins(0) <= 255);
        for (r, x) in xs.iter().enumerate() {
            let b = d.cols[0][r] as usize;
            if b > 0 {
                assert!(x[0] > d.uppers[0][b - 1]);
            }
            if b < d.uppers[0].len() {
                assert!(x[0] <= d.uppers[0][b]);
            }
        }
        let few = bin_uppers(vec![3.0, 1.0, 1.0, 2.0], 255);
        assert_eq!(few, vec![1.5, 2.5]);
    }

    #[test]
    fn finds_obvious_split_with_newton_leaves() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![0.0, (i % 2) as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let d = BinnedData::new(&rows, 2, 255);
        let grad: Vec<f64> = (0..40).map(|i| if i % 2 == 1 { -1.0 } else { 1.0 }).collect();
        let hess = vec![0.5; 40];
        let t = grow_tree(&d, &grad, &hess, (0..40).collect(), &[0, 1], params(31, 5));
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.predict(&[0.0, 1.0]), 2.0);
        assert_eq!(t.predict(&[0.0, 0.0]), -2.0);
    }

    #[test]
    fn single_leaf_and_min_samples_limits() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let d = BinnedData::new(&rows, 1, 255);
        let grad: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let hess = vec![1.0; 10];
        let t = grow_tree(&d, &grad, &hess, (0..10).collect(), &[0], params(1, 1));
        assert_eq!(t.nodes.len(), 1);
        let t = grow_tree(&d, &grad, &hess, (0..10).collect(), &[0], params(31, 20));
        assert_eq!(t.nodes.len(), 1);
        let t = grow_tree(&d, &grad, &hess, (0..10).collect(), &[0], params(31, 5));
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 4.5, left: 1, right: 2 });
    }
}
