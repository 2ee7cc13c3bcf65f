//! The online protocol: each round samples a training query, ranks it with
//! the configured algorithm, shows the top positions to a simulated user,
//! books the displayed group exposure and learns from the clicks.

mod config;
mod output;

pub use config::{Algorithm, Beta, DataSource, ExperimentConfig};
pub use output::{
    read_trace, write_outputs, write_summary, write_trace, SUMMARY_VERSION, TRACE_FILE,
};

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::click_sim::simulate;
use crate::data::{
    assign_groups, generate_synthetic, parse_svmlight, Group, GroupCounts, GroupStrategy,
    GroupedDataset, MinMaxScaler, QueryCandidates, Split,
};
use crate::error::{Error, Result};
use crate::fairness::{
    enumerate_templates, qualified_templates, ExposureModel, GroupTemplate, UnfairnessLedger,
};
use crate::fairswap::{select_ranking, CalibratedRanking, SwapContext};
use crate::metrics::{
    cumulative_ndcg, ndcg_against_pool, ndcg_at_k, pairwise_regret, RoundRecord, NDCG_CUTOFF,
};
use crate::ranker::{
    classify_pairs, coarsen_partition, infer_pairs, partition_blocks, permute_block,
    BlockPartition, CertainOrder, RankerState,
};

/// Train, validation and test splits sharing one grouping and scaling.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: GroupedDataset,
    pub validation: GroupedDataset,
    pub test: GroupedDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rounds_completed: usize,
    pub final_offline_ndcg: f64,
    pub cumulative_ndcg: f64,
    pub mean_online_ndcg: f64,
    pub final_unfairness: f64,
    pub max_unfairness: f64,
    /// Rounds ending with `|UF_t| > ε`.
    pub violations: usize,
    pub total_added_regret: usize,
    pub total_pairwise_regret: usize,
    pub fallback_rounds: usize,
    pub flagged_rounds: usize,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    pub state: RankerState,
    pub summary: Summary,
    /// FairSwap diagnostic lines (empty unless diagnostics are on).
    pub diagnostics: Vec<String>,
    /// Set when a round failed; `records` then holds the rounds before it.
    pub aborted: Option<String>,
}

fn with_split(mut ds: GroupedDataset, split: Split) -> GroupedDataset {
    ds.split = split;
    ds
}

fn pad_dimension(ds: &mut GroupedDataset, d: usize) {
    for doc in ds.queries.iter_mut().flat_map(|q| q.documents.iter_mut()) {
        doc.features.resize(d, 0.0);
    }
    ds.dimension = d;
}

fn load_file(path: &std::path::Path) -> Result<GroupedDataset> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open dataset '{}': {e}", path.display())))?;
    parse_svmlight(BufReader::new(file))
}

/// Loads or generates the data described by `config`.
pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    match &config.data {
        DataSource::Synthetic {
            spec,
            train_queries,
            validation_queries,
        } => {
            let ds = generate_synthetic(spec)?;
            let n = ds.queries.len();
            let n_train = train_queries.unwrap_or(n * 3 / 5);
            let n_val = validation_queries.unwrap_or(n / 5);
            let (train, validation, test) = ds.split_queries(n_train, n_val)?;
            if train.queries.is_empty() || validation.queries.is_empty() {
                return Err(Error::Config(format!(
                    "synthetic split leaves an empty train or validation part ({n_train}/{n_val} of {n})"
                )));
            }
            Ok(ExperimentData {
                train,
                validation,
                test,
            })
        }
        DataSource::Files {
            train,
            validation,
            test,
            group_feature,
            group_strategy,
            scale,
        } => {
            let feature = group_feature
                .ok_or_else(|| Error::Config("file datasets need group_feature=<id>".into()))?;
            let mut parts = vec![load_file(train)?];
            for path in [validation, test].into_iter().flatten() {
                parts.push(load_file(path)?);
            }
            let d = parts.iter().map(|p| p.dimension).max().unwrap_or(0);
            for p in &mut parts {
                pad_dimension(p, d);
            }
            let mut parts = parts.into_iter();
            let train_ds = assign_groups(parts.next().expect("train part"), feature, *group_strategy)?;
            let cut = train_ds.grouping.expect("grouping recorded").cut;
            let regroup = |ds: GroupedDataset| assign_groups(ds, feature, GroupStrategy::Threshold(cut));
            let (mut tr, mut va, mut te) = match (validation, test) {
                (None, None) => {
                    let n = train_ds.queries.len();
                    train_ds.split_queries(n * 3 / 5, n / 5)?
                }
                (Some(_), None) => {
                    let va = regroup(parts.next().expect("validation part"))?;
                    let te = va.clone();
                    (train_ds, va, te)
                }
                (None, Some(_)) => {
                    let te = regroup(parts.next().expect("test part"))?;
                    (train_ds, te.clone(), te)
                }
                (Some(_), Some(_)) => {
                    let va = regroup(parts.next().expect("validation part"))?;
                    let te = regroup(parts.next().expect("test part"))?;
                    (train_ds, va, te)
                }
            };
            if *scale {
                let scaler = MinMaxScaler::fit(&tr);
                scaler.apply(&mut tr)?;
                scaler.apply(&mut va)?;
                scaler.apply(&mut te)?;
            }
            if tr.queries.is_empty() || va.queries.is_empty() || te.queries.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok(ExperimentData {
                train: with_split(tr, Split::Train),
                validation: with_split(va, Split::Validation),
                test: with_split(te, Split::Test),
            })
        }
    }
}

/// Mean NDCG@10 of ranking every query of `split` by `θᵀx` (descending,
/// ties kept in storage order).
pub fn evaluate_offline(state: &RankerState, split: &GroupedDataset) -> Result<f64> {
    if split.queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for q in &split.queries {
        let scores = q
            .documents
            .iter()
            .map(|d| state.score(&d.features))
            .collect::<Result<Vec<f64>>>()?;
        let order = sort_by_score(&scores);
        let grades: Vec<u8> = order.iter().map(|&i| q.documents[i].grade).collect();
        total += ndcg_at_k(&grades, NDCG_CUTOFF);
    }
    Ok(total / split.queries.len() as f64)
}

/// Indices sorted by descending score, stable on ties.
fn sort_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Proportional controller: adds `λ_f·max(0, error)` to each score, where
/// the error is `UF` for group B and `−UF` for group A, so that the
/// under-exposed group is pushed up in proportion to the imbalance.
pub fn prop_control_rank(
    scores: &[f64],
    groups: &[Group],
    ledger: &UnfairnessLedger,
    lambda_f: f64,
) -> Vec<usize> {
    let uf = ledger.cumulative;
    let adjusted: Vec<f64> = scores
        .iter()
        .zip(groups)
        .map(|(&s, &g)| {
            let error = match g {
                Group::A => -uf,
                Group::B => uf,
            };
            s + lambda_f * error.max(0.0)
        })
        .collect();
    sort_by_score(&adjusted)
}

/// Number of records whose `|UF_t|` exceeds `threshold`.
pub fn count_violations(records: &[RoundRecord], threshold: f64) -> usize {
    records
        .iter()
        .filter(|r| r.cumulative_unfairness.abs() > threshold)
        .count()
}

/// PairRank's own ranking: blocks in order, each permuted at random (after
/// its certain orders when `respect_certain`), cut to `k`.
pub fn pairrank_ranking<R: Rng + ?Sized>(
    partition: &BlockPartition,
    groups: &[Group],
    certain: &CertainOrder,
    respect_certain: bool,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut order = Vec::with_capacity(k);
    for block in &partition.blocks {
        if order.len() >= k {
            break;
        }
        order.extend(permute_block(block, None, groups, certain, respect_certain, rng));
    }
    order.truncate(k);
    order
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn pattern(order: &[usize], groups: &[Group]) -> Vec<Group> {
    order.iter().map(|&i| groups[i]).collect()
}

fn pattern_string(p: &[Group]) -> String {
    p.iter().map(|g| g.as_char()).collect()
}

fn describe_calibration(round: usize, chosen: &CalibratedRanking) -> Vec<String> {
    let mut lines = vec![format!(
        "round={round} template={} added_regret={} events={}",
        chosen.template,
        chosen.added_regret,
        chosen.events.len()
    )];
    for ev in &chosen.events {
        let promoted: Vec<String> = ev.promoted.iter().map(|(d, dist)| format!("{d}@{dist}")).collect();
        let displaced: Vec<String> = ev.displaced.iter().map(usize::to_string).collect();
        lines.push(format!(
            "  segment position={} segment={} block={:?} needed={} promoted={} displaced={} swap_bound={} jump_bound={}",
            ev.position + 1,
            pattern_string(&ev.segment),
            ev.block,
            ev.needed,
            promoted.join(","),
            displaced.join(","),
            ev.swap_bound,
            ev.jump_bound,
        ));
    }
    lines
}

struct RoundOutcome {
    order: Vec<usize>,
    added_regret: usize,
    certain_pairs: usize,
    blocks: usize,
    fallback: bool,
    flagged: bool,
    note: String,
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    data: &'a ExperimentData,
    model: ExposureModel,
    templates: HashMap<(usize, GroupCounts), Vec<GroupTemplate>>,
    ledger: UnfairnessLedger,
    state: RankerState,
    query_rng: ChaCha8Rng,
    rank_rng: ChaCha8Rng,
    click_rng: ChaCha8Rng,
    diagnostics: Vec<String>,
    offline: f64,
}

impl<'a> Runner<'a> {
    fn model_for(&self, k: usize) -> Result<ExposureModel> {
        if k == self.model.k() {
            Ok(self.model.clone())
        } else {
            self.model.truncated(k)
        }
    }

    fn templates_for(&mut self, k: usize, counts: GroupCounts) -> Result<Vec<GroupTemplate>> {
        if let Some(t) = self.templates.get(&(k, counts)) {
            return Ok(t.clone());
        }
        let model = self.model_for(k)?;
        let t = enumerate_templates(k, counts, &model)?;
        self.templates.insert((k, counts), t.clone());
        Ok(t)
    }

    fn rank_pairwise(
        &mut self,
        round: usize,
        q: &QueryCandidates,
        groups: &[Group],
        scores: &[f64],
        k: usize,
    ) -> Result<RoundOutcome> {
        let sets = classify_pairs(&self.state, q, self.config.alpha)?;
        let certain_pairs = sets.certain.count();
        let mut note = String::new();
        let mut flagged = false;
        let partition = match partition_blocks(&sets) {
            Ok(p) => p,
            Err(Error::PartitionInfeasible { cycle }) => {
                let (p, merges) = coarsen_partition(&sets)?;
                flagged = true;
                note = format!("coarsened {merges} cycle(s) through {cycle:?}");
                p
            }
            Err(e) => return Err(e),
        };
        let respect = self.config.heuristic;
        let pure = pairrank_ranking(&partition, groups, &sets.certain, respect, k, &mut self.rank_rng);
        let mut outcome = RoundOutcome {
            order: pure,
            added_regret: 0,
            certain_pairs,
            blocks: partition.blocks.len(),
            fallback: false,
            flagged,
            note,
        };
        if self.config.algorithm != Algorithm::FairExpPairRank {
            return Ok(outcome);
        }

        let templates = self.templates_for(k, GroupCounts::from_groups(groups))?;
        let qualified = qualified_templates(&self.ledger, &templates)?;
        outcome.fallback = qualified.fallback;
        let own = pattern(&outcome.order, groups);
        if qualified.templates.iter().any(|t| t.placement == own) {
            return Ok(outcome);
        }
        let ctx = SwapContext {
            certain: &sets.certain,
            groups,
            scores,
            respect_certain: respect,
        };
        match select_ranking(&partition, &qualified.templates, &ctx, &self.ledger, &mut self.rank_rng) {
            Ok(chosen) => {
                if self.config.diagnostics {
                    self.diagnostics.extend(describe_calibration(round, &chosen));
                }
                outcome.order = chosen.order;
                outcome.added_regret = chosen.added_regret;
            }
            Err(e) => {
                outcome.flagged = true;
                if !outcome.note.is_empty() {
                    outcome.note.push_str("; ");
                }
                outcome.note.push_str(&format!("no template could be calibrated ({e})"));
            }
        }
        Ok(outcome)
    }

    fn round(&mut self, t: usize) -> Result<RoundRecord> {
        let data = self.data;
        let qi = self.query_rng.gen_range(0..data.train.queries.len());
        let q = &data.train.queries[qi];
        let k = self.config.k.min(q.len());
        let groups: Vec<Group> = q.documents.iter().map(|d| d.group_or_b()).collect();
        let scores = q
            .documents
            .iter()
            .map(|d| self.state.score(&d.features))
            .collect::<Result<Vec<f64>>>()?;

        let outcome = match self.config.algorithm {
            Algorithm::Random => {
                let mut order: Vec<usize> = (0..q.len()).collect();
                order.shuffle(&mut self.rank_rng);
                order.truncate(k);
                RoundOutcome {
                    order,
                    added_regret: 0,
                    certain_pairs: 0,
                    blocks: 0,
                    fallback: false,
                    flagged: false,
                    note: String::new(),
                }
            }
            Algorithm::PropControl => {
                let mut order = prop_control_rank(&scores, &groups, &self.ledger, self.config.lambda_f);
                order.truncate(k);
                RoundOutcome {
                    order,
                    added_regret: 0,
                    certain_pairs: 0,
                    blocks: 0,
                    fallback: false,
                    flagged: false,
                    note: String::new(),
                }
            }
            Algorithm::PairRank | Algorithm::FairExpPairRank => {
                self.rank_pairwise(t, q, &groups, &scores, k)?
            }
        };

        let displayed = pattern(&outcome.order, &groups);
        let realized = GroupTemplate::new(displayed.clone(), &self.model_for(k)?);
        let instantaneous = self.ledger.record(&realized);

        let grades: Vec<u8> = outcome.order.iter().map(|&i| q.documents[i].grade).collect();
        let clicks = simulate(&grades, &self.config.click_model, &mut self.click_rng)?;
        if self.config.algorithm != Algorithm::Random {
            let features: Vec<&[f64]> = outcome
                .order
                .iter()
                .map(|&i| q.documents[i].features.as_slice())
                .collect();
            let pairs = infer_pairs(&features, &clicks.clicks);
            self.state.update(&pairs)?;
        }

        if (t - 1) % self.config.eval_stride == 0 || t == self.config.rounds {
            self.offline = evaluate_offline(&self.state, &data.test)?;
        }
        Ok(RoundRecord {
            round: t,
            query_id: q.query_id.clone(),
            online_ndcg: ndcg_against_pool(&grades, &q.grades(), NDCG_CUTOFF),
            offline_ndcg: self.offline,
            instantaneous_unfairness: instantaneous,
            cumulative_unfairness: self.ledger.cumulative,
            added_regret: outcome.added_regret,
            pairwise_regret: pairwise_regret(&grades),
            clicks: clicks.num_clicks(),
            certain_pairs: outcome.certain_pairs,
            blocks: outcome.blocks,
            template: pattern_string(&displayed),
            fallback: outcome.fallback,
            flagged: outcome.flagged,
            note: outcome.note,
        })
    }
}

/// β as configured, or the training split's group utility ratio for `auto`.
pub fn resolve_beta(config: &ExperimentConfig, data: &ExperimentData) -> Result<f64> {
    match config.beta {
        Beta::Value(b) => Ok(b),
        Beta::Auto => data.train.group_utility_ratio(),
    }
}

fn summarize(records: &[RoundRecord], gamma: f64, epsilon: f64, beta: f64) -> Summary {
    let online: Vec<f64> = records.iter().map(|r| r.online_ndcg).collect();
    let last = records.last();
    Summary {
        rounds_completed: records.len(),
        final_offline_ndcg: last.map_or(0.0, |r| r.offline_ndcg),
        cumulative_ndcg: cumulative_ndcg(&online, gamma),
        mean_online_ndcg: if online.is_empty() {
            0.0
        } else {
            online.iter().sum::<f64>() / online.len() as f64
        },
        final_unfairness: last.map_or(0.0, |r| r.cumulative_unfairness.abs()),
        max_unfairness: records
            .iter()
            .map(|r| r.cumulative_unfairness.abs())
            .fold(0.0, f64::max),
        violations: count_violations(records, epsilon),
        total_added_regret: records.iter().map(|r| r.added_regret).sum(),
        total_pairwise_regret: records.iter().map(|r| r.pairwise_regret).sum(),
        fallback_rounds: records.iter().filter(|r| r.fallback).count(),
        flagged_rounds: records.iter().filter(|r| r.flagged).count(),
        beta,
    }
}

/// Runs the online protocol on already prepared data.
pub fn run_on(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentResult> {
    config.validate()?;
    if data.train.queries.is_empty() || data.test.queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let beta = resolve_beta(config, data)?;
    let d = data.train.dimension;
    let mut runner = Runner {
        config,
        data,
        model: ExposureModel::new(config.exposure.clone(), config.k)?,
        templates: HashMap::new(),
        ledger: UnfairnessLedger::new(beta, config.epsilon)?,
        state: RankerState::new(d, config.lambda, data.train.norm_bound.unwrap_or(1.0))?,
        query_rng: stream(config.seed, 1),
        rank_rng: stream(config.seed, 2),
        click_rng: stream(config.seed, 3),
        diagnostics: Vec::new(),
        offline: 0.0,
    };
    runner.offline = evaluate_offline(&runner.state, &data.test)?;

    let mut records = Vec::with_capacity(config.rounds);
    let mut aborted = None;
    for t in 1..=config.rounds {
        match runner.round(t) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                aborted = Some(format!("round {t}: {e}"));
                break;
            }
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        summary: summarize(&records, config.gamma, config.epsilon, beta),
        records,
        state: runner.state,
        diagnostics: runner.diagnostics,
        aborted,
    })
}

/// Loads the data and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = prepare_data(config)?;
    run_on(config, &data)
}

/// Hyperparameter grid for the sweep subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda_f: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let grid = vec![0.1, 0.01, 0.001];
        SweepGrid {
            lambda: grid.clone(),
            alpha: grid.clone(),
            lambda_f: grid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub config: ExperimentConfig,
    pub validation_ndcg: f64,
    pub summary: Summary,
}

/// Runs every grid point (α only for the pairwise algorithms, λ_f only for
/// the controller) in parallel and scores each on the validation split.
/// Points come back in grid order; the best is the first with the highest
/// validation NDCG.
pub fn sweep(
    base: &ExperimentConfig,
    grid: &SweepGrid,
) -> Result<(Vec<SweepPoint>, usize)> {
    base.validate()?;
    let data = prepare_data(base)?;
    let pairwise = matches!(base.algorithm, Algorithm::PairRank | Algorithm::FairExpPairRank);
    let alphas = if pairwise { grid.alpha.clone() } else { vec![base.alpha] };
    let gains = if base.algorithm == Algorithm::PropControl {
        grid.lambda_f.clone()
    } else {
        vec![base.lambda_f]
    };
    let mut configs = Vec::new();
    for &lambda in &grid.lambda {
        for &alpha in &alphas {
            for &lambda_f in &gains {
                configs.push(ExperimentConfig {
                    lambda,
                    alpha,
                    lambda_f,
                    diagnostics: false,
                    ..base.clone()
                });
            }
        }
    }
    if configs.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let points = configs
        .into_par_iter()
        .map(|cfg| {
            let result = run_on(&cfg, &data)?;
            if let Some(msg) = &result.aborted {
                return Err(Error::Numeric(format!("sweep point aborted at {msg}")));
            }
            let validation_ndcg = evaluate_offline(&result.state, &data.validation)?;
            Ok(SweepPoint {
                config: cfg,
                validation_ndcg,
                summary: result.summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.validation_ndcg > points[best].validation_ndcg {
            best = i;
        }
    }
    Ok((points, best))
}
