//! Learning-to-rank datasets: LETOR/SVMLight parsing, group assignment and
//! seeded synthetic generation with a known ground-truth parameter.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Highest relevance grade on the five-level scale.
pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    A,
    B,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::A => Group::B,
            Group::B => Group::A,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Group::A => 'A',
            Group::B => 'B',
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GroupCounts {
    pub a: usize,
    pub b: usize,
}

impl GroupCounts {
    pub fn total(&self) -> usize {
        self.a + self.b
    }

    pub fn get(&self, group: Group) -> usize {
        match group {
            Group::A => self.a,
            Group::B => self.b,
        }
    }

    pub fn add(&mut self, group: Group) {
        match group {
            Group::A => self.a += 1,
            Group::B => self.b += 1,
        }
    }

    pub fn from_groups<'a>(groups: impl IntoIterator<Item = &'a Group>) -> Self {
        let mut counts = GroupCounts::default();
        for &g in groups {
            counts.add(g);
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub grade: u8,
    /// `None` until [`assign_groups`] (or synthetic generation) labels it.
    pub group: Option<Group>,
}

impl Document {
    /// Group label, treating an unlabeled document as group B.
    pub fn group_or_b(&self) -> Group {
        self.group.unwrap_or(Group::B)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCandidates {
    pub query_id: String,
    /// Storage order only; not a ranking.
    pub documents: Vec<Document>,
}

impl QueryCandidates {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Per-group counts over labeled documents.
    pub fn counts(&self) -> GroupCounts {
        let mut counts = GroupCounts::default();
        for doc in &self.documents {
            if let Some(g) = doc.group {
                counts.add(g);
            }
        }
        counts
    }

    pub fn groups(&self) -> Vec<Group> {
        self.documents.iter().map(Document::group_or_b).collect()
    }

    pub fn grades(&self) -> Vec<u8> {
        self.documents.iter().map(|d| d.grade).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "vali" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// The feature and cut value used to label groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingMeta {
    pub feature_id: usize,
    pub cut: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub queries: Vec<QueryCandidates>,
    pub dimension: usize,
    pub split: Split,
    /// Ground-truth parameter; present only for synthetic data.
    pub true_theta: Option<Vec<f64>>,
    /// Norm bound Q on the ground-truth parameter (synthetic only).
    pub norm_bound: Option<f64>,
    pub grouping: Option<GroupingMeta>,
}

impl GroupedDataset {
    pub fn num_documents(&self) -> usize {
        self.queries.iter().map(QueryCandidates::len).sum()
    }

    pub fn counts(&self) -> GroupCounts {
        let mut total = GroupCounts::default();
        for q in &self.queries {
            let c = q.counts();
            total.a += c.a;
            total.b += c.b;
        }
        total
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.queries.iter().flat_map(|q| q.documents.iter())
    }

    /// Splits queries in storage order into train/validation/test parts
    /// of the given sizes (the test part takes the remainder).
    pub fn split_queries(&self, n_train: usize, n_validation: usize) -> Result<(Self, Self, Self)> {
        if n_train + n_validation >= self.queries.len() {
            return Err(Error::Validation(format!(
                "cannot split {} queries into {} train + {} validation + non-empty test",
                self.queries.len(),
                n_train,
                n_validation
            )));
        }
        let part = |range: std::ops::Range<usize>, split: Split| GroupedDataset {
            queries: self.queries[range].to_vec(),
            split,
            ..self.clone_meta()
        };
        let n = self.queries.len();
        Ok((
            part(0..n_train, Split::Train),
            part(n_train..n_train + n_validation, Split::Validation),
            part(n_train + n_validation..n, Split::Test),
        ))
    }

    fn clone_meta(&self) -> GroupedDataset {
        GroupedDataset {
            queries: Vec::new(),
            dimension: self.dimension,
            split: self.split,
            true_theta: self.true_theta.clone(),
            norm_bound: self.norm_bound,
            grouping: self.grouping,
        }
    }

    /// Mean grade of group A over mean grade of group B.
    pub fn group_utility_ratio(&self) -> Result<f64> {
        let (mut sum_a, mut n_a, mut sum_b, mut n_b) = (0.0, 0usize, 0.0, 0usize);
        for doc in self.documents() {
            match doc.group {
                Some(Group::A) => {
                    sum_a += f64::from(doc.grade);
                    n_a += 1;
                }
                Some(Group::B) => {
                    sum_b += f64::from(doc.grade);
                    n_b += 1;
                }
                None => {}
            }
        }
        if n_a == 0 || n_b == 0 || sum_b == 0.0 {
            return Err(Error::Validation(
                "group utility ratio undefined: a group is empty or has zero utility".into(),
            ));
        }
        Ok((sum_a / n_a as f64) / (sum_b / n_b as f64))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses `<grade> qid:<id> <fid>:<val> ... [# comment]` lines.
///
/// Documents are grouped by qid in order of first appearance; missing
/// features are 0.0 and the dimension is the largest feature id seen.
pub fn parse_svmlight<R: BufRead>(reader: R) -> Result<GroupedDataset> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut queries: Vec<QueryCandidates> = Vec::new();
    let mut dimension = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line.as_str(),
        };
        let mut tokens = content.split_whitespace();
        let Some(grade_tok) = tokens.next() else {
            continue;
        };
        let grade: i64 = grade_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("malformed grade '{grade_tok}'")))?;
        if !(0..=i64::from(MAX_GRADE)).contains(&grade) {
            return Err(Error::Validation(format!(
                "line {lineno}: grade {grade} outside 0..={MAX_GRADE}"
            )));
        }
        let qid_tok = tokens
            .next()
            .ok_or_else(|| parse_err(lineno, "missing qid"))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .filter(|q| !q.is_empty())
            .ok_or_else(|| parse_err(lineno, format!("expected qid:<id>, found '{qid_tok}'")))?;

        let mut features: Vec<f64> = Vec::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("malformed feature '{tok}'")))?;
            let fid: usize = fid
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed feature id '{fid}'")))?;
            if fid == 0 {
                return Err(parse_err(lineno, "feature ids are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed feature value '{val}'")))?;
            if features.len() < fid {
                features.resize(fid, 0.0);
            }
            features[fid - 1] = val;
        }
        dimension = dimension.max(features.len());

        let slot = *index.entry(qid.to_string()).or_insert_with(|| {
            queries.push(QueryCandidates {
                query_id: qid.to_string(),
                documents: Vec::new(),
            });
            queries.len() - 1
        });
        queries[slot].documents.push(Document {
            features,
            grade: grade as u8,
            group: None,
        });
    }

    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for doc in queries.iter_mut().flat_map(|q| q.documents.iter_mut()) {
        doc.features.resize(dimension, 0.0);
    }
    Ok(GroupedDataset {
        queries,
        dimension,
        split: Split::Train,
        true_theta: None,
        norm_bound: None,
        grouping: None,
    })
}

pub fn parse_svmlight_str(text: &str) -> Result<GroupedDataset> {
    parse_svmlight(text.as_bytes())
}

/// Writes every feature densely so that re-parsing recovers the same dimension.
pub fn write_svmlight<W: Write>(dataset: &GroupedDataset, mut out: W) -> Result<()> {
    for q in &dataset.queries {
        for doc in &q.documents {
            write!(out, "{} qid:{}", doc.grade, q.query_id)?;
            for (i, v) in doc.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupStrategy {
    MedianSplit,
    Threshold(f64),
}

impl FromStr for GroupStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "median" || s == "median_split" {
            return Ok(GroupStrategy::MedianSplit);
        }
        let v = s
            .strip_prefix("threshold:")
            .or_else(|| s.strip_prefix("threshold="))
            .ok_or_else(|| Error::Config(format!("unknown group strategy '{s}'")))?;
        v.parse()
            .map(GroupStrategy::Threshold)
            .map_err(|_| Error::Config(format!("bad threshold value '{v}'")))
    }
}

/// Labels documents A when the chosen feature (1-based id) exceeds the cut,
/// B otherwise. Median ties therefore fall to B.
pub fn assign_groups(
    mut dataset: GroupedDataset,
    feature_id: usize,
    strategy: GroupStrategy,
) -> Result<GroupedDataset> {
    if dataset.queries.is_empty() || dataset.num_documents() == 0 {
        return Err(Error::EmptyDataset);
    }
    if feature_id == 0 || feature_id > dataset.dimension {
        return Err(Error::Validation(format!(
            "group feature {feature_id} outside 1..={}",
            dataset.dimension
        )));
    }
    let col = feature_id - 1;
    let cut = match strategy {
        GroupStrategy::Threshold(v) => v,
        GroupStrategy::MedianSplit => {
            let mut values: Vec<f64> = dataset.documents().map(|d| d.features[col]).collect();
            values.sort_by(f64::total_cmp);
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                (values[n / 2 - 1] + values[n / 2]) / 2.0
            };
            if values[n - 1] <= median {
                return Err(Error::DegenerateGrouping {
                    feature: feature_id,
                    value: values[n - 1],
                });
            }
            median
        }
    };
    for doc in dataset.queries.iter_mut().flat_map(|q| q.documents.iter_mut()) {
        doc.group = Some(if doc.features[col] > cut { Group::A } else { Group::B });
    }
    dataset.grouping = Some(GroupingMeta { feature_id, cut });
    Ok(dataset)
}

/// Per-feature min-max scaling fitted on one split and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(dataset: &GroupedDataset) -> Self {
        let d = dataset.dimension;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for doc in dataset.documents() {
            for (j, &v) in doc.features.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Constant features map to 0.
    pub fn apply(&self, dataset: &mut GroupedDataset) -> Result<()> {
        if dataset.dimension != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                got: dataset.dimension,
            });
        }
        for doc in dataset.queries.iter_mut().flat_map(|q| q.documents.iter_mut()) {
            for (j, v) in doc.features.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 { (*v - self.min[j]) / span } else { 0.0 };
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub dimension: usize,
    /// Probability that a document belongs to group A.
    pub group_balance: f64,
    pub grade_noise: f64,
    /// Norm of the ground-truth parameter (the bound Q).
    pub theta_norm: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_queries: 200,
            docs_per_query: 20,
            dimension: 5,
            group_balance: 0.5,
            grade_noise: 0.0,
            theta_norm: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(format!("synthetic spec: {msg}")));
        if self.n_queries == 0 {
            return fail("n_queries must be positive");
        }
        if self.dimension < 2 {
            return fail("dimension must be at least 2");
        }
        if self.docs_per_query < 2 {
            return fail("docs_per_query must be at least 2");
        }
        if !(self.group_balance > 0.0 && self.group_balance < 1.0) {
            return fail("group_balance must lie strictly inside (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.grade_noise) {
            return fail("grade_noise must lie in [0, 1]");
        }
        if !(self.theta_norm > 0.0 && self.theta_norm.is_finite()) {
            return fail("theta_norm must be positive");
        }
        Ok(())
    }
}

fn unit_ball_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let radius = rng.gen::<f64>().powf(1.0 / d as f64);
    for x in &mut v {
        *x *= radius / norm;
    }
    v
}

/// Builds a dataset whose grades are quintile bins of the ground-truth
/// score over all documents, optionally corrupted by uniform grade noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dimension;

    let mut theta: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for x in &mut theta {
        *x *= spec.theta_norm / norm;
    }

    let mut queries = Vec::with_capacity(spec.n_queries);
    for qi in 0..spec.n_queries {
        let mut documents = Vec::with_capacity(spec.docs_per_query);
        for _ in 0..spec.docs_per_query {
            let features = unit_ball_point(&mut rng, d);
            let group = if rng.gen::<f64>() < spec.group_balance {
                Group::A
            } else {
                Group::B
            };
            documents.push(Document {
                features,
                grade: 0,
                group: Some(group),
            });
        }
        queries.push(QueryCandidates {
            query_id: format!("{}", qi + 1),
            documents,
        });
    }

    let dot = |x: &[f64]| x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>();
    let mut scores: Vec<f64> = queries
        .iter()
        .flat_map(|q| q.documents.iter().map(|doc| dot(&doc.features)))
        .collect();
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let cuts: Vec<f64> = (1..=usize::from(MAX_GRADE))
        .map(|i| scores[(i * n / 5).min(n - 1)])
        .collect();

    for doc in queries.iter_mut().flat_map(|q| q.documents.iter_mut()) {
        let s = dot(&doc.features);
        let mut grade = cuts.iter().filter(|&&c| s >= c).count() as u8;
        if spec.grade_noise > 0.0 && rng.gen::<f64>() < spec.grade_noise {
            grade = rng.gen_range(0..=MAX_GRADE);
        }
        doc.grade = grade;
    }

    Ok(GroupedDataset {
        queries,
        dimension: d,
        split: Split::Train,
        true_theta: Some(theta),
        norm_bound: Some(spec.theta_norm),
        grouping: None,
    })
}
