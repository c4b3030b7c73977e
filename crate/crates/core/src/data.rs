//! Query collections, items and the LETOR-style text format they are read from.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Highest golden relevance grade.
pub const MAX_LABEL: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub features: Arc<[f64]>,
    pub golden_label: u8,
    /// 1-based display position in the logged ranking.
    pub initial_rank: usize,
    pub relevance: Option<bool>,
    pub examined: Option<bool>,
    pub click: Option<bool>,
}

impl Item {
    pub fn new(features: impl Into<Arc<[f64]>>, golden_label: u8, initial_rank: usize) -> Self {
        Item {
            features: features.into(),
            golden_label,
            initial_rank,
            relevance: None,
            examined: None,
            click: None,
        }
    }

    pub fn with_click(mut self, click: bool) -> Self {
        self.click = Some(click);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCollection {
    pub query_id: String,
    pub items: Vec<Item>,
}

impl QueryCollection {
    /// Builds a collection and checks the rank and feature invariants.
    pub fn new(query_id: impl Into<String>, items: Vec<Item>) -> Result<Self> {
        let c = QueryCollection {
            query_id: query_id.into(),
            items,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |it| it.features.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.items.len();
        if n == 0 {
            return Err(Error::Integrity(format!("query {} has no items", self.query_id)));
        }
        let dim = self.dim();
        let mut seen = vec![false; n];
        for item in &self.items {
            if item.features.len() != dim {
                return Err(Error::Dimension(format!(
                    "query {}: feature vectors of length {} and {}",
                    self.query_id,
                    dim,
                    item.features.len()
                )));
            }
            if item.golden_label > MAX_LABEL {
                return Err(Error::Integrity(format!(
                    "query {}: label {} outside 0..={MAX_LABEL}",
                    self.query_id, item.golden_label
                )));
            }
            let r = item.initial_rank;
            if r == 0 || r > n || seen[r - 1] {
                return Err(Error::Integrity(format!(
                    "query {}: ranks must be a permutation of 1..={n} (got {r})",
                    self.query_id
                )));
            }
            seen[r - 1] = true;
            if let (Some(rel), Some(ex), Some(c)) = (item.relevance, item.examined, item.click) {
                if c != (rel && ex) {
                    return Err(Error::Integrity(format!(
                        "query {}: click at rank {r} is not examined x relevance",
                        self.query_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps the items displayed at ranks `1..=max_rank`.
    pub fn truncate(&self, max_rank: usize) -> QueryCollection {
        assert!(max_rank >= 1, "truncation position must be positive");
        QueryCollection {
            query_id: self.query_id.clone(),
            items: self
                .items
                .iter()
                .filter(|it| it.initial_rank <= max_rank)
                .cloned()
                .collect(),
        }
    }

    pub fn clicks(&self) -> Result<Vec<bool>> {
        self.items
            .iter()
            .map(|it| {
                it.click.ok_or_else(|| {
                    Error::State(format!("query {}: missing click indicator", self.query_id))
                })
            })
            .collect()
    }

    pub fn relevances(&self) -> Result<Vec<bool>> {
        self.items
            .iter()
            .map(|it| {
                it.relevance.ok_or_else(|| {
                    Error::State(format!("query {}: missing relevance indicator", self.query_id))
                })
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|it| it.golden_label).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.initial_rank).collect()
    }

    pub fn has_positive_label(&self) -> bool {
        self.items.iter().any(|it| it.golden_label > 0)
    }
}

/// Row structure of a grid presentation; rows are listed top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    row_sizes: Vec<usize>,
    starts: Vec<usize>,
}

impl GridLayout {
    pub fn new(row_sizes: Vec<usize>) -> Result<Self> {
        if row_sizes.is_empty() || row_sizes.contains(&0) {
            return Err(Error::Config("row sizes must be non-empty and positive".into()));
        }
        let mut starts = Vec::with_capacity(row_sizes.len());
        let mut acc = 0;
        for &n in &row_sizes {
            starts.push(acc);
            acc += n;
        }
        Ok(GridLayout { row_sizes, starts })
    }

    /// Rows of equal width covering at least `capacity` positions.
    pub fn uniform(width: usize, capacity: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("row width must be positive".into()));
        }
        Self::new(vec![width; capacity.div_ceil(width).max(1)])
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn num_rows(&self) -> usize {
        self.row_sizes.len()
    }

    pub fn capacity(&self) -> usize {
        self.row_sizes.iter().sum()
    }

    /// 1-based row containing `rank`.
    pub fn row(&self, rank: usize) -> Option<usize> {
        if rank == 0 || rank > self.capacity() {
            return None;
        }
        Some(self.starts.partition_point(|&s| s < rank))
    }

    /// Number of items in row `m` (1-based).
    pub fn row_len(&self, m: usize) -> usize {
        self.row_sizes[m - 1]
    }

    /// Number of items placed before row `m` (1-based).
    pub fn row_start(&self, m: usize) -> usize {
        self.starts[m - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// `<label> qid:<id> <fid>:<value> ...`, ranks from within-query line order.
    #[default]
    Svmlight,
    /// As `Svmlight` with an explicit `rank:<k>` token after the query id.
    SvmlightRanked,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svmlight" | "letor" => Ok(DatasetFormat::Svmlight),
            "svmlight-ranked" | "letor-ranked" => Ok(DatasetFormat::SvmlightRanked),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<QueryCollection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format, None)
}

struct RawLine {
    label: u8,
    rank: Option<usize>,
    features: Vec<(usize, f64)>,
}

/// Parses dataset text. Feature ids are 1-based; the dense dimension is
/// `dim` when given, otherwise the largest id seen in the input.
pub fn parse_dataset(
    text: &str,
    format: DatasetFormat,
    dim: Option<usize>,
) -> Result<Vec<QueryCollection>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, RawLine)>> = HashMap::new();
    let mut max_fid = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().ok_or_else(|| Error::parse(lineno, "empty line"))?;
        let label: u8 = label_tok
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad label {label_tok:?}")))?;
        if label > MAX_LABEL {
            return Err(Error::parse(lineno, format!("label {label} outside 0..={MAX_LABEL}")));
        }
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .ok_or_else(|| Error::parse(lineno, "expected qid:<id>"))?
            .to_string();
        let rank = match format {
            DatasetFormat::Svmlight => None,
            DatasetFormat::SvmlightRanked => {
                let tok = tokens
                    .next()
                    .and_then(|t| t.strip_prefix("rank:"))
                    .ok_or_else(|| Error::parse(lineno, "expected rank:<k>"))?;
                let k: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad rank {tok:?}")))?;
                if k == 0 {
                    return Err(Error::parse(lineno, "ranks are 1-based"));
                }
                Some(k)
            }
        };
        let mut features = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("bad feature token {tok:?}")))?;
            let fid: usize = fid
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad feature id {fid:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad feature value {val:?}")))?;
            if fid == 0 || fid <= last {
                return Err(Error::parse(lineno, "feature ids must be positive and strictly increasing"));
            }
            if let Some(d) = dim {
                if fid > d {
                    return Err(Error::Dimension(format!(
                        "line {lineno}: feature id {fid} exceeds dimension {d}"
                    )));
                }
            }
            last = fid;
            features.push((fid, val));
        }
        max_fid = max_fid.max(last);
        let entry = groups.entry(qid.clone()).or_insert_with(|| {
            order.push(qid);
            Vec::new()
        });
        entry.push((lineno, RawLine { label, rank, features }));
    }

    let dim = dim.unwrap_or(max_fid);
    let mut out = Vec::with_capacity(order.len());
    for qid in order {
        let lines = groups.remove(&qid).expect("grouped query");
        let n = lines.len();
        let mut seen = vec![false; n];
        let mut items = Vec::with_capacity(n);
        for (pos, (lineno, raw)) in lines.into_iter().enumerate() {
            let rank = raw.rank.unwrap_or(pos + 1);
            if rank > n || seen[rank - 1] {
                return Err(Error::Integrity(format!(
                    "query {qid}: rank {rank} at line {lineno} is duplicated or outside 1..={n}"
                )));
            }
            seen[rank - 1] = true;
            let mut dense = vec![0.0; dim];
            for (fid, v) in raw.features {
                dense[fid - 1] = v;
            }
            items.push(Item::new(dense, raw.label, rank));
        }
        out.push(QueryCollection { query_id: qid, items });
    }
    Ok(out)
}

/// Writes collections in [`DatasetFormat::SvmlightRanked`] when `ranked`,
/// otherwise in item order (which must then be rank order to round-trip).
pub fn format_dataset(collections: &[QueryCollection], ranked: bool) -> String {
    let mut out = String::new();
    for c in collections {
        for item in &c.items {
            write!(out, "{} qid:{}", item.golden_label, c.query_id).unwrap();
            if ranked {
                write!(out, " rank:{}", item.initial_rank).unwrap();
            }
            for (i, v) in item.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn truncate_all(collections: &[QueryCollection], max_rank: usize) -> Vec<QueryCollection> {
    collections.iter().map(|c| c.truncate(max_rank)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coll(n: usize) -> QueryCollection {
        let items = (1..=n).map(|r| Item::new(vec![r as f64], 0, r)).collect();
        QueryCollection::new("q", items).unwrap()
    }

    #[test]
    fn parses_two_line_query() {
        let qs = parse_dataset("2 qid:1 1:0.5 2:0.1\n0 qid:1 1:0.2 2:0.9\n", DatasetFormat::Svmlight, None)
            .unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].n(), 2);
        assert_eq!(qs[0].labels(), vec![2, 0]);
        assert_eq!(qs[0].ranks(), vec![1, 2]);
        assert_eq!(&*qs[0].items[1].features, &[0.2, 0.9]);
    }

    #[test]
    fn empty_input_gives_no_queries() {
        assert!(parse_dataset("", DatasetFormat::Svmlight, None).unwrap().is_empty());
        assert!(parse_dataset("# only a comment\n\n", DatasetFormat::Svmlight, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bad_value_names_line() {
        let err = parse_dataset("2 qid:1 1:abc", DatasetFormat::Svmlight, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn sparse_ids_fill_zeros_and_comments_strip() {
        let qs = parse_dataset("1 qid:a 3:1.5 # doc-7\n0 qid:b 1:2\n", DatasetFormat::Svmlight, None)
            .unwrap();
        assert_eq!(&*qs[0].items[0].features, &[0.0, 0.0, 1.5]);
        assert_eq!(&*qs[1].items[0].features, &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range_label_and_unsorted_ids() {
        assert!(matches!(
            parse_dataset("5 qid:1 1:1", DatasetFormat::Svmlight, None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("0 qid:1 1:1\n1 qid:1 2:1 1:3", DatasetFormat::Svmlight, None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn explicit_ranks_and_duplicates() {
        let qs = parse_dataset(
            "0 qid:1 rank:2 1:1\n3 qid:1 rank:1 1:2\n",
            DatasetFormat::SvmlightRanked,
            None,
        )
        .unwrap();
        assert_eq!(qs[0].ranks(), vec![2, 1]);
        let err = parse_dataset("0 qid:1 rank:1 1:1\n3 qid:1 rank:1 1:2\n", DatasetFormat::SvmlightRanked, None)
            .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn dimension_limit() {
        let err = parse_dataset("0 qid:1 4:1", DatasetFormat::Svmlight, Some(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn interleaved_queries_group_in_first_appearance_order() {
        let qs = parse_dataset("0 qid:b 1:1\n1 qid:a 1:1\n2 qid:b 1:2\n", DatasetFormat::Svmlight, None)
            .unwrap();
        assert_eq!(qs[0].query_id, "b");
        assert_eq!(qs[0].labels(), vec![0, 2]);
        assert_eq!(qs[1].query_id, "a");
    }

    #[test]
    fn truncation() {
        let c = coll(5);
        assert_eq!(c.truncate(3).ranks(), vec![1, 2, 3]);
        let c2 = coll(2);
        assert_eq!(c2.truncate(10), c2);
        let c30 = coll(30);
        let t = c30.truncate(10);
        assert_eq!(t.n(), 10);
        assert_eq!(t.truncate(10), t);
    }

    #[test]
    fn format_round_trips() {
        let text = "2 qid:1 1:0.5 2:0.1\n0 qid:1 1:0.2 2:0.9\n1 qid:7 1:-3 2:0\n";
        let qs = parse_dataset(text, DatasetFormat::Svmlight, None).unwrap();
        let again = parse_dataset(&format_dataset(&qs, false), DatasetFormat::Svmlight, None).unwrap();
        assert_eq!(qs, again);
        let ranked = parse_dataset(&format_dataset(&qs, true), DatasetFormat::SvmlightRanked, None).unwrap();
        assert_eq!(qs, ranked);
    }

    #[test]
    fn collection_invariants() {
        let bad = QueryCollection::new("q", vec![Item::new(vec![1.0], 0, 2)]);
        assert!(matches!(bad, Err(Error::Integrity(_))));
        let mixed = QueryCollection::new(
            "q",
            vec![Item::new(vec![1.0], 0, 1), Item::new(vec![1.0, 2.0], 0, 2)],
        );
        assert!(matches!(mixed, Err(Error::Dimension(_))));
        assert!(matches!(QueryCollection::new("q", vec![]), Err(Error::Integrity(_))));
        let mut it = Item::new(vec![1.0], 0, 1);
        it.relevance = Some(true);
        it.examined = Some(false);
        it.click = Some(true);
        assert!(QueryCollection::new("q", vec![it]).is_err());
    }

    #[test]
    fn grid_layout_rows() {
        let g = GridLayout::new(vec![2, 3, 1]).unwrap();
        assert_eq!(g.capacity(), 6);
        let rows: Vec<_> = (1..=6).map(|u| g.row(u).unwrap()).collect();
        assert_eq!(rows, vec![1, 1, 2, 2, 2, 3]);
        assert_eq!(g.row_start(1), 0);
        assert_eq!(g.row_start(2), 2);
        assert_eq!(g.row_start(3), 5);
        assert_eq!(g.row(7), None);
        assert_eq!(GridLayout::uniform(4, 10).unwrap().row_sizes(), &[4, 4, 4]);
    }
}
