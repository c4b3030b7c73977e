//! Regression trees and the boosted ensemble.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::QueryCollection;
use crate::error::{Error, Result};

const MAGIC: &str = "pairdebias-gbdt v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Nodes are stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf(value)],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Integrity("tree without nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, .. } = *node {
                if feature >= dim {
                    return Err(Error::Dimension(format!("split on feature {feature} of {dim}")));
                }
                // Children always follow their parent, which also rules out cycles.
                if left <= i || right <= i || left >= n || right >= n {
                    return Err(Error::Integrity(format!("node {i} has bad children")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub num_features: usize,
}

impl TreeEnsemble {
    pub fn new(num_features: usize, learning_rate: f64, base_score: f64) -> Self {
        TreeEnsemble {
            trees: Vec::new(),
            learning_rate,
            base_score,
            num_features,
        }
    }

    /// Sum of raw tree outputs, before shrinkage.
    pub(crate) fn raw_sum(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum()
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.num_features {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.num_features,
                x.len()
            )));
        }
        Ok(self.base_score + self.learning_rate * self.raw_sum(x))
    }

    pub fn predict(&self, collection: &QueryCollection) -> Result<Vec<f64>> {
        collection.items.iter().map(|it| self.predict_row(&it.features)).collect()
    }

    /// The first `k` trees.
    pub fn prefix(&self, k: usize) -> TreeEnsemble {
        TreeEnsemble {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "num_features {}", self.num_features).unwrap();
        writeln!(out, "learning_rate {}", self.learning_rate).unwrap();
        writeln!(out, "base_score {}", self.base_score).unwrap();
        writeln!(out, "trees {}", self.trees.len()).unwrap();
        for (i, t) in self.trees.iter().enumerate() {
            writeln!(out, "tree {i} {}", t.nodes.len()).unwrap();
            for node in &t.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(out, "split {feature} {threshold} {left} {right}").unwrap(),
                    Node::Leaf(v) => writeln!(out, "leaf {v}").unwrap(),
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of model file, wanted {what}")))?;
            Ok((no, line.split_whitespace().collect()))
        };
        let (no, head) = next("header")?;
        if head.join(" ") != MAGIC {
            return Err(Error::parse(no, "not a model file"));
        }
        fn field<T: std::str::FromStr>(no: usize, toks: &[&str], key: &str) -> Result<T> {
            match toks {
                [k, v] if *k == key => v.parse().map_err(|_| Error::parse(no, format!("bad {key} value"))),
                _ => Err(Error::parse(no, format!("expected `{key} <value>`"))),
            }
        }
        fn num<T: std::str::FromStr>(no: usize, tok: &str) -> Result<T> {
            tok.parse().map_err(|_| Error::parse(no, format!("bad number {tok:?}")))
        }
        let (no, t) = next("num_features")?;
        let num_features: usize = field(no, &t, "num_features")?;
        let (no, t) = next("learning_rate")?;
        let learning_rate: f64 = field(no, &t, "learning_rate")?;
        let (no, t) = next("base_score")?;
        let base_score: f64 = field(no, &t, "base_score")?;
        let (no, t) = next("trees")?;
        let count: usize = field(no, &t, "trees")?;
        let mut trees = Vec::with_capacity(count);
        for i in 0..count {
            let (no, t) = next("tree")?;
            let n_nodes: usize = match t.as_slice() {
                ["tree", idx, n] if num::<usize>(no, idx)? == i => num(no, n)?,
                _ => return Err(Error::parse(no, format!("expected `tree {i} <nodes>`"))),
            };
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (no, t) = next("node")?;
                nodes.push(match t.as_slice() {
                    ["leaf", v] => Node::Leaf(num(no, v)?),
                    ["split", f, th, l, r] => Node::Split {
                        feature: num(no, f)?,
                        threshold: num(no, th)?,
                        left: num(no, l)?,
                        right: num(no, r)?,
                    },
                    _ => return Err(Error::parse(no, "expected a leaf or split record")),
                });
            }
            let tree = Tree { nodes };
            tree.validate(num_features)?;
            trees.push(tree);
        }
        if let Some((no, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(no, format!("trailing content {extra:?}")));
        }
        Ok(TreeEnsemble {
            trees,
            learning_rate,
            base_score,
            num_features,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;

    fn stump() -> TreeEnsemble {
        let mut m = TreeEnsemble::new(2, 1.0, 0.0);
        m.trees.push(Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf(0.0),
                Node::Leaf(1.0),
            ],
        });
        m
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let m = TreeEnsemble::new(1, 0.05, 0.25);
        let c = QueryCollection::new("q", vec![Item::new(vec![3.0], 0, 1), Item::new(vec![-1.0], 0, 2)]).unwrap();
        assert_eq!(m.predict(&c).unwrap(), vec![0.25, 0.25]);
    }

    #[test]
    fn stump_partitions_items() {
        let m = stump();
        assert_eq!(m.predict_row(&[0.9, 0.0]).unwrap(), 1.0);
        assert_eq!(m.predict_row(&[0.5, 7.0]).unwrap(), 0.0);
        assert!(matches!(m.predict_row(&[0.1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut m = stump();
        m.learning_rate = 0.1;
        m.base_score = -1.0 / 3.0;
        m.trees.push(Tree::leaf(std::f64::consts::PI * 1e-17));
        let text = m.to_text();
        let back = TreeEnsemble::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        for x in [[0.2, 1.0], [0.7, -3.0]] {
            assert_eq!(
                back.predict_row(&x).unwrap().to_bits(),
                m.predict_row(&x).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn parse_rejects_malformed_files() {
        assert!(matches!(TreeEnsemble::parse("hello"), Err(Error::Parse { line: 1, .. })));
        let bad_child = stump().to_text().replace("split 0 0.5 1 2", "split 0 0.5 0 2");
        assert!(matches!(TreeEnsemble::parse(&bad_child), Err(Error::Integrity(_))));
        let bad_feature = stump().to_text().replace("split 0", "split 5");
        assert!(matches!(TreeEnsemble::parse(&bad_feature), Err(Error::Dimension(_))));
        let truncated: String = stump().to_text().lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(TreeEnsemble::parse(&truncated).is_err());
    }
}
