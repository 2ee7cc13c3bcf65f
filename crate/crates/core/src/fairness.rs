//! Position-based exposure, group-placement templates and the cumulative
//! unfairness ledger.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use crate::data::{Group, GroupCounts};
use crate::error::{Error, Result};

/// Largest display length for which templates are enumerated (2^k of them).
pub const MAX_TEMPLATE_LENGTH: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum ExposureKind {
    /// `P(r) = 1 / log2(r + 1)`.
    LogDiscount,
    /// `P(r) = 1 / r`.
    InverseRank,
    /// Externally estimated examination probabilities `v_1..v_k`.
    Table(Vec<f64>),
}

impl FromStr for ExposureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_discount" | "log" => Ok(ExposureKind::LogDiscount),
            "inverse_rank" | "inverse" => Ok(ExposureKind::InverseRank),
            other => Err(Error::Config(format!(
                "unknown exposure model '{other}' (tables are loaded from a file)"
            ))),
        }
    }
}

/// Examination probability per rank, precomputed for ranks `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    kind: ExposureKind,
    values: Vec<f64>,
}

impl ExposureModel {
    pub fn new(kind: ExposureKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("exposure model needs k >= 1".into()));
        }
        let values: Vec<f64> = match &kind {
            ExposureKind::LogDiscount => (1..=k).map(|r| 1.0 / ((r + 1) as f64).log2()).collect(),
            ExposureKind::InverseRank => (1..=k).map(|r| 1.0 / r as f64).collect(),
            ExposureKind::Table(v) => {
                if v.len() < k {
                    return Err(Error::Validation(format!(
                        "exposure table has {} ranks, need {k}",
                        v.len()
                    )));
                }
                v[..k].to_vec()
            }
        };
        if values.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Validation("exposure probabilities must be positive".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Validation(
                "exposure probabilities must be non-increasing in rank".into(),
            ));
        }
        Ok(ExposureModel { kind, values })
    }

    pub fn log_discount(k: usize) -> Self {
        ExposureModel::new(ExposureKind::LogDiscount, k).expect("k >= 1")
    }

    pub fn kind(&self) -> &ExposureKind {
        &self.kind
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `P(r)` for a 1-based rank.
    pub fn exposure(&self, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.values.len() {
            return Err(Error::Validation(format!(
                "rank {rank} outside 1..={}",
                self.values.len()
            )));
        }
        Ok(self.values[rank - 1])
    }

    /// The same model restricted to the first `k` ranks.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.values.len() {
            return Err(Error::Validation(format!(
                "cannot truncate exposure model of length {} to {k}",
                self.values.len()
            )));
        }
        Ok(ExposureModel {
            kind: self.kind.clone(),
            values: self.values[..k].to_vec(),
        })
    }

    /// Expected exposure per group for a placement of length `<= k`.
    pub fn group_exposure(&self, placement: &[Group]) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for (p, g) in self.values.iter().zip(placement) {
            match g {
                Group::A => a += p,
                Group::B => b += p,
            }
        }
        (a, b)
    }
}

/// Reads a two-column `rank probability` table. Blank lines and `#`
/// comments are skipped; ranks must run 1, 2, 3, ... in order.
pub fn read_exposure_table<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let mut cols = content.split_whitespace();
        let rank: usize = cols
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("bad rank"))?;
        let prob: f64 = cols
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("bad probability"))?;
        if cols.next().is_some() {
            return Err(err("expected two columns"));
        }
        if rank != values.len() + 1 {
            return Err(err("ranks must be consecutive starting at 1"));
        }
        values.push(prob);
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(values)
}

/// A group-level placement for the top positions together with the
/// expected exposure each group receives under it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTemplate {
    pub placement: Vec<Group>,
    pub exposure_a: f64,
    pub exposure_b: f64,
}

impl GroupTemplate {
    pub fn new(placement: Vec<Group>, model: &ExposureModel) -> Self {
        let (exposure_a, exposure_b) = model.group_exposure(&placement);
        GroupTemplate {
            placement,
            exposure_a,
            exposure_b,
        }
    }

    pub fn len(&self) -> usize {
        self.placement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placement.is_empty()
    }

    pub fn counts(&self) -> GroupCounts {
        GroupCounts::from_groups(&self.placement)
    }

    /// Signed unfairness this placement adds in one round.
    pub fn contribution(&self, beta: f64) -> f64 {
        self.exposure_a - beta * self.exposure_b
    }

    pub fn parse(text: &str, model: &ExposureModel) -> Result<Self> {
        let placement = text
            .chars()
            .filter(|c| !matches!(c, ',' | ' ' | '{' | '}'))
            .map(|c| match c {
                'A' | 'a' => Ok(Group::A),
                'B' | 'b' => Ok(Group::B),
                other => Err(Error::Validation(format!("bad group letter '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if placement.len() > model.k() {
            return Err(Error::Validation(format!(
                "template length {} exceeds exposure model length {}",
                placement.len(),
                model.k()
            )));
        }
        Ok(GroupTemplate::new(placement, model))
    }
}

impl fmt::Display for GroupTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.placement {
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

pub type TemplateSet = Vec<GroupTemplate>;

/// Every length-`k` placement whose per-group usage fits the availability,
/// in lexicographic order with A before B.
pub fn enumerate_templates(
    k: usize,
    counts: GroupCounts,
    model: &ExposureModel,
) -> Result<TemplateSet> {
    if counts.total() < k {
        return Err(Error::ShortList {
            available: counts.total(),
            k,
        });
    }
    if k > model.k() {
        return Err(Error::Validation(format!(
            "k = {k} exceeds exposure model length {}",
            model.k()
        )));
    }
    if k > MAX_TEMPLATE_LENGTH {
        return Err(Error::Validation(format!(
            "k = {k} exceeds the enumeration limit {MAX_TEMPLATE_LENGTH}"
        )));
    }
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << k) {
        let n_b = mask.count_ones() as usize;
        if n_b > counts.b || k - n_b > counts.a {
            continue;
        }
        let placement: Vec<Group> = (0..k)
            .map(|r| {
                if mask >> (k - 1 - r) & 1 == 1 {
                    Group::B
                } else {
                    Group::A
                }
            })
            .collect();
        out.push(GroupTemplate::new(placement, model));
    }
    Ok(out)
}

/// Running signed sum of `Exposure(A) − β·Exposure(B)` over rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfairnessLedger {
    pub cumulative: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub history: Vec<f64>,
}

impl UnfairnessLedger {
    pub fn new(beta: f64, epsilon: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Validation(format!("beta must be positive, got {beta}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(UnfairnessLedger {
            cumulative: 0.0,
            beta,
            epsilon,
            history: Vec::new(),
        })
    }

    /// `|UF_t|`.
    pub fn unfairness(&self) -> f64 {
        self.cumulative.abs()
    }

    pub fn is_violated(&self) -> bool {
        self.unfairness() > self.epsilon
    }

    /// Signed cumulative unfairness if `template` were displayed next.
    pub fn projected_unfairness(&self, template: &GroupTemplate) -> f64 {
        self.cumulative + template.contribution(self.beta)
    }

    /// Adds the expected exposure of the displayed group pattern; returns
    /// the instantaneous contribution.
    pub fn record(&mut self, realized: &GroupTemplate) -> f64 {
        let delta = realized.contribution(self.beta);
        self.cumulative += delta;
        self.history.push(delta);
        delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualifiedTemplates {
    pub templates: TemplateSet,
    /// No template met the threshold; `templates` holds the minimisers of
    /// `|projected unfairness|` instead.
    pub fallback: bool,
}

pub fn qualified_templates(
    ledger: &UnfairnessLedger,
    templates: &[GroupTemplate],
) -> Result<QualifiedTemplates> {
    if templates.is_empty() {
        return Err(Error::Validation("no templates to qualify".into()));
    }
    let within: TemplateSet = templates
        .iter()
        .filter(|t| ledger.projected_unfairness(t).abs() <= ledger.epsilon)
        .cloned()
        .collect();
    if !within.is_empty() {
        return Ok(QualifiedTemplates {
            templates: within,
            fallback: false,
        });
    }
    let best = templates
        .iter()
        .map(|t| ledger.projected_unfairness(t).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(QualifiedTemplates {
        templates: templates
            .iter()
            .filter(|t| ledger.projected_unfairness(t).abs() == best)
            .cloned()
            .collect(),
        fallback: true,
    })
}
