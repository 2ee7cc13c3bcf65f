//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the PASS/FAIL lines always reach stdout; exits non-zero when
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairexp::click_sim::{simulate, ClickModelConfig};
use fairexp::data::{generate_synthetic, Group, SyntheticSpec};
use fairexp::fairness::{ExposureKind, ExposureModel, GroupTemplate, UnfairnessLedger};
use fairexp::fairswap::{added_regret, fair_swap, SwapContext};
use fairexp::harness::{
    count_violations, run_on, prepare_data, write_trace, Algorithm, DataSource, ExperimentConfig,
    ExperimentData, ExperimentResult,
};
use fairexp::metrics::{cumulative_ndcg, ndcg_at_k};
use fairexp::ranker::{BlockPartition, CertainOrder, RankerState, TrainingPair};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn template(text: &str, k: usize) -> GroupTemplate {
    GroupTemplate::parse(text, &ExposureModel::log_discount(k)).unwrap()
}

fn cross_block_certain(blocks: &[Vec<usize>], n: usize) -> CertainOrder {
    let mut certain = CertainOrder::empty(n);
    for (bi, upper) in blocks.iter().enumerate() {
        for lower in &blocks[bi + 1..] {
            for &i in upper {
                for &j in lower {
                    certain.insert(i, j).unwrap();
                }
            }
        }
    }
    certain
}

// 1 ---------------------------------------------------------------------

fn five_doc_example() -> Outcome {
    use Group::{A, B};
    // documents 1..5 are indices 0..4
    let blocks = vec![vec![0, 1], vec![2, 3, 4]];
    let groups = vec![A, B, A, A, B];
    let partition = BlockPartition { blocks: blocks.clone() };
    let certain = cross_block_certain(&blocks, 5);
    let omega = template("AABAB", 5);
    let scores = vec![0.0; 5];
    let ctx = |respect| SwapContext {
        certain: &certain,
        groups: &groups,
        scores: &scores,
        respect_certain: respect,
    };

    let reference_order = vec![3, 0, 1, 2, 4];
    check(added_regret(&reference_order, &certain) == 2, || "order (4,1,2,3,5) does not cost 2".into())?;

    // Uniform choices, as in the worked example: every output satisfies the
    // template, and the example's order comes out with regret exactly 2.
    let mut seen_reference = None;
    let mut regrets = std::collections::BTreeSet::new();
    for seed in 0..200u64 {
        let out = fair_swap(&partition, &omega, &ctx(false), &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| e.to_string())?;
        let pattern: Vec<Group> = out.order.iter().map(|&d| groups[d]).collect();
        check(pattern == omega.placement, || format!("seed {seed}: pattern mismatch"))?;
        check(out.added_regret == added_regret(&out.order, &certain), || "regret miscounted".into())?;
        regrets.insert(out.added_regret);
        if out.order == reference_order && seen_reference.is_none() {
            seen_reference = Some((seed, out.added_regret));
        }
    }
    let (seed, regret) = seen_reference.ok_or("order (4,1,2,3,5) never produced")?;
    check(regret == 2, || format!("order (4,1,2,3,5) reported regret {regret}"))?;

    let guided = fair_swap(&partition, &omega, &ctx(true), &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "uniform mode, seed {seed}: order (4,1,2,3,5), added_regret 2; regrets seen {regrets:?}; \
         certain-order mode gives {:?} with regret {}",
        guided.order.iter().map(|d| d + 1).collect::<Vec<_>>(),
        guided.added_regret
    ))
}

// 2 ---------------------------------------------------------------------

struct Instance {
    blocks: Vec<Vec<usize>>,
    groups: Vec<Group>,
    omega: GroupTemplate,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let n = rng.gen_range(2..=8);
        let nb = rng.gen_range(1..=3.min(n));
        let mut level: Vec<usize> = (0..n).map(|_| rng.gen_range(0..nb)).collect();
        // every block non-empty
        for (b, slot) in (0..nb).zip(rand::seq::index::sample(rng, n, nb)) {
            level[slot] = b;
        }
        let blocks: Vec<Vec<usize>> =
            (0..nb).map(|b| (0..n).filter(|&d| level[d] == b).collect()).collect();
        let groups: Vec<Group> =
            (0..n).map(|_| if rng.gen_bool(0.5) { Group::A } else { Group::B }).collect();
        let k = rng.gen_range(1..=n);
        let n_a = groups.iter().filter(|&&g| g == Group::A).count();
        let placement: Vec<Group> =
            (0..k).map(|_| if rng.gen_bool(0.5) { Group::A } else { Group::B }).collect();
        let need_a = placement.iter().filter(|&&g| g == Group::A).count();
        if need_a <= n_a && k - need_a <= n - n_a {
            let omega = GroupTemplate::new(placement, &ExposureModel::log_discount(k));
            return Instance { blocks, groups, omega };
        }
    }
}

fn permutations(n: usize, k: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(n: usize, k: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for d in 0..n {
            if !used[d] {
                used[d] = true;
                cur.push(d);
                rec(n, k, used, cur, visit);
                cur.pop();
                used[d] = false;
            }
        }
    }
    rec(n, k, &mut vec![false; n], &mut Vec::with_capacity(k), visit);
}

/// Per group, the displayed documents are a top set by block level: a
/// document is shown only if every same-group document of a higher block is.
fn reachable_set(shown: &[usize], level: &[usize], groups: &[Group]) -> bool {
    let mut is_shown = vec![false; level.len()];
    for &d in shown {
        is_shown[d] = true;
    }
    shown.iter().all(|&d| {
        (0..level.len()).all(|o| groups[o] != groups[d] || level[o] >= level[d] || is_shown[o])
    })
}

fn minimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 1500;
    let mut broader_gap = 0;
    let mut uniform_gap = 0;
    let mut failures = Vec::new();
    for idx in 0..instances {
        let inst = random_instance(&mut rng);
        let n = inst.groups.len();
        let k = inst.omega.len();
        let certain = cross_block_certain(&inst.blocks, n);
        let mut level = vec![0; n];
        for (b, block) in inst.blocks.iter().enumerate() {
            for &d in block {
                level[d] = b;
            }
        }
        let (mut best_reachable, mut best_any) = (usize::MAX, usize::MAX);
        permutations(n, k, &mut |order| {
            if order.iter().zip(&inst.omega.placement).any(|(&d, &g)| inst.groups[d] != g) {
                return;
            }
            let r = added_regret(order, &certain);
            best_any = best_any.min(r);
            if reachable_set(order, &level, &inst.groups) {
                best_reachable = best_reachable.min(r);
            }
        });
        if best_any < best_reachable {
            broader_gap += 1;
        }
        let partition = BlockPartition { blocks: inst.blocks.clone() };
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        for respect in [true, false] {
            let ctx = SwapContext {
                certain: &certain,
                groups: &inst.groups,
                scores: &scores,
                respect_certain: respect,
            };
            let out = fair_swap(&partition, &inst.omega, &ctx, &mut ChaCha8Rng::seed_from_u64(idx))
                .map_err(|e| format!("instance {idx}: {e}"))?;
            if out.added_regret == best_reachable {
                continue;
            }
            if respect {
                failures.push(format!(
                    "instance {idx}: fair_swap {} vs minimum {best_reachable}",
                    out.added_regret
                ));
            } else {
                // uniform shuffling may order a promoted document above one
                // it certainly loses to; reported, not asserted
                uniform_gap += 1;
            }
        }
    }
    check(failures.is_empty(), || {
        format!("{} mismatches, first: {}", failures.len(), failures[0])
    })?;
    Ok(format!(
        "{instances} instances equal the exhaustive minimum (certain-order mode); uniform \
         shuffling exceeds it on {uniform_gap}; the unrestricted minimum (any displayed set) \
         is lower on {broader_gap} (both reported only)"
    ))
}

// 3 ---------------------------------------------------------------------

fn template_arithmetic() -> Outcome {
    let p = |r: f64| 1.0 / (r + 1.0).log2();
    let omega = template("AABAB", 5);
    let expect_a = p(1.0) + p(2.0) + p(4.0);
    let expect_b = p(3.0) + p(5.0);
    let positions_a: Vec<usize> =
        (0..5).filter(|&i| omega.placement[i] == Group::A).map(|i| i + 1).collect();
    check(positions_a == vec![1, 2, 4], || format!("A positions {positions_a:?}"))?;
    check((omega.exposure_a - expect_a).abs() <= 1e-12, || format!("exposure_A {}", omega.exposure_a))?;
    check((omega.exposure_b - expect_b).abs() <= 1e-12, || format!("exposure_B {}", omega.exposure_b))?;
    let ledger = UnfairnessLedger::new(1.0, 0.1).unwrap();
    let projected = ledger.projected_unfairness(&omega);
    check((projected - (expect_a - expect_b)).abs() <= 1e-12, || format!("projection {projected}"))?;
    check((projected - 1.1747).abs() < 1e-4, || format!("projection {projected} vs 1.1747"))?;
    Ok(format!("exposure_A={:.12} exposure_B={:.12} projected={projected:.6}", omega.exposure_a, omega.exposure_b))
}

// 4 ---------------------------------------------------------------------

fn click_fidelity() -> Outcome {
    const TRIALS: usize = 100_000;
    let mut worst = 0.0f64;
    let mut cells = 0;
    for cfg in ClickModelConfig::all_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for grade in 0..=4u8 {
            let g = usize::from(grade);
            // click cell: 10^5 examinations of the first position
            let mut clicks = 0;
            for _ in 0..TRIALS {
                if simulate(&[grade, grade], &cfg, &mut rng).unwrap().clicks[0] {
                    clicks += 1;
                }
            }
            let rate = clicks as f64 / TRIALS as f64;
            let err = (rate - cfg.click_prob[g]).abs();
            worst = worst.max(err);
            cells += 1;
            check(err <= 0.01, || format!("{} grade {grade}: click {rate} vs {}", cfg.name, cfg.click_prob[g]))?;

            // stop cell: 10^5 clicked examinations
            if cfg.click_prob[g] == 0.0 {
                continue;
            }
            let (mut clicked, mut stopped) = (0, 0);
            while clicked < TRIALS {
                let out = simulate(&[grade, grade], &cfg, &mut rng).unwrap();
                if out.clicks[0] {
                    clicked += 1;
                    if out.examined_through == 1 {
                        stopped += 1;
                    }
                }
            }
            let rate = stopped as f64 / clicked as f64;
            let err = (rate - cfg.stop_prob[g]).abs();
            worst = worst.max(err);
            cells += 1;
            check(err <= 0.01, || format!("{} grade {grade}: stop {rate} vs {}", cfg.name, cfg.stop_prob[g]))?;
        }
    }
    Ok(format!(
        "{cells} cells within 0.01 (max deviation {worst:.4}); the perfect model's grade-0 stop cell \
         is unobservable because it never clicks"
    ))
}

// 5 ---------------------------------------------------------------------

/// Fraction of (pair, round) events where the predicted pairwise
/// probability misses the true one by more than the confidence width.
fn coverage_violations(alpha: f64, seed: u64, rounds: usize) -> (usize, usize) {
    let spec = SyntheticSpec {
        n_queries: 50,
        docs_per_query: 10,
        dimension: 5,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let theta_star = ds.true_theta.clone().unwrap();
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut state = RankerState::new(5, 0.1, spec.theta_norm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (mut events, mut misses) = (0, 0);
    for _ in 0..rounds {
        let q = &ds.queries[rng.gen_range(0..ds.queries.len())];
        let n = q.len();
        for i in 0..n {
            for j in i + 1..n {
                let (xi, xj) = (&q.documents[i].features, &q.documents[j].features);
                let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
                let truth = sigmoid(dot(&diff, &theta_star));
                let predicted = state.pairwise_prob(xi, xj).unwrap();
                let width = state.confidence_width(xi, xj, alpha).unwrap();
                events += 1;
                if (predicted - truth).abs() > width {
                    misses += 1;
                }
            }
        }
        // five comparisons per round, labelled by the true logistic model
        let pairs: Vec<TrainingPair> = (0..5)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let j = (i + rng.gen_range(1..n)) % n;
                let diff: Vec<f64> = q.documents[i]
                    .features
                    .iter()
                    .zip(&q.documents[j].features)
                    .map(|(a, b)| a - b)
                    .collect();
                let label = rng.gen::<f64>() < sigmoid(dot(&diff, &theta_star));
                TrainingPair { diff, label }
            })
            .collect();
        state.update(&pairs).unwrap();
    }
    (misses, events)
}

fn interval_coverage() -> Outcome {
    const DELTA: f64 = 0.1;
    let grid = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    // tune on one seed: the smallest grid value meeting δ
    let mut tuned = None;
    for &alpha in &grid {
        let (m, e) = coverage_violations(alpha, 1, 300);
        if (m as f64) / (e as f64) <= DELTA {
            tuned = Some(alpha);
            break;
        }
    }
    let alpha = tuned.ok_or("no grid value reached the target on the tuning seed")?;
    let (misses, events) = coverage_violations(alpha, 2, 400);
    let rate = misses as f64 / events as f64;
    check(events >= 10_000, || format!("only {events} events"))?;
    check(rate <= DELTA, || format!("alpha={alpha}: violation rate {rate:.4} > {DELTA}"))?;
    Ok(format!("alpha={alpha} (tuned on seed 1): {misses}/{events} = {rate:.4} on seed 2"))
}

// 6-9 -------------------------------------------------------------------

fn balanced_config(algorithm: Algorithm, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        data: DataSource::Synthetic {
            spec: SyntheticSpec {
                n_queries: 100,
                docs_per_query: 20,
                dimension: 5,
                group_balance: 0.5,
                grade_noise: 0.1,
                seed: 100 + seed,
                ..SyntheticSpec::default()
            },
            train_queries: None,
            validation_queries: None,
        },
        click_model: ClickModelConfig::navigational(),
        rounds: 5000,
        k: 5,
        beta: fairexp::harness::Beta::Value(1.0),
        epsilon: 0.1,
        seed,
        ..ExperimentConfig::default()
    }
}

fn run(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentResult, String> {
    let res = run_on(cfg, data).map_err(|e| e.to_string())?;
    match &res.aborted {
        Some(msg) => Err(format!("{} aborted: {msg}", cfg.algorithm)),
        None => Ok(res),
    }
}

fn fairness_control() -> Outcome {
    let fair_cfg = balanced_config(Algorithm::FairExpPairRank, 7);
    let data = prepare_data(&fair_cfg).map_err(|e| e.to_string())?;
    let fair = run(&fair_cfg, &data)?;
    let plain = run(&balanced_config(Algorithm::PairRank, 7), &data)?;
    let model = ExposureModel::new(ExposureKind::LogDiscount, fair_cfg.k).unwrap();
    let max_imbalance: f64 = model.values().iter().sum();
    let bound = fair_cfg.epsilon + max_imbalance;
    let worst = fair.summary.max_unfairness;
    check(worst <= bound, || format!("max |UF_t| {worst:.4} exceeds {bound:.4}"))?;
    let (f, p) = (fair.summary.final_unfairness, plain.summary.final_unfairness);
    check(f <= p / 3.0, || format!("final |UF_T| {f:.4} vs PairRank {p:.4}"))?;
    Ok(format!(
        "max |UF_t|={worst:.4} <= {bound:.4}; final |UF_T| {f:.4} vs PairRank {p:.4} (ratio {:.4})",
        f / p
    ))
}

fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks(width)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn learning_despite_fairness() -> Outcome {
    const PLATEAU: f64 = 0.02;
    let fair_cfg = balanced_config(Algorithm::FairExpPairRank, 8);
    let data = prepare_data(&fair_cfg).map_err(|e| e.to_string())?;
    let fair = run(&fair_cfg, &data)?;
    let plain = run(&balanced_config(Algorithm::PairRank, 8), &data)?;
    let offline: Vec<f64> = fair.records.iter().map(|r| r.offline_ndcg).collect();
    let windows = window_means(&offline, 100);
    let mut best = f64::NEG_INFINITY;
    for (i, &w) in windows.iter().enumerate() {
        check(w >= best - PLATEAU, || {
            format!("window {} mean {w:.4} drops below running max {best:.4}", i + 1)
        })?;
        best = best.max(w);
    }
    let (first, last) = (windows[0], *windows.last().unwrap());
    check(last > first, || format!("no upward trend: first {first:.4}, last {last:.4}"))?;
    let (f, p) = (fair.summary.final_offline_ndcg, plain.summary.final_offline_ndcg);
    check(f >= p - 0.05, || format!("final NDCG {f:.4} vs PairRank {p:.4}"))?;
    Ok(format!(
        "windowed offline NDCG {first:.4} -> {last:.4} (no drop > {PLATEAU}); final {f:.4} vs PairRank {p:.4}"
    ))
}

fn trade_off() -> Outcome {
    const THRESHOLD: f64 = 0.05;
    let seeds = [21u64, 22, 23, 24, 25];
    let (mut ndcg_tight, mut ndcg_loose) = (0.0, 0.0);
    let (mut viol_tight, mut viol_loose) = (0, 0);
    for &seed in &seeds {
        let loose_cfg = balanced_config(Algorithm::FairExpPairRank, seed);
        let data = prepare_data(&loose_cfg).map_err(|e| e.to_string())?;
        let tight_cfg = ExperimentConfig { epsilon: 0.05, ..loose_cfg.clone() };
        let loose = run(&loose_cfg, &data)?;
        let tight = run(&tight_cfg, &data)?;
        ndcg_loose += loose.summary.cumulative_ndcg / seeds.len() as f64;
        ndcg_tight += tight.summary.cumulative_ndcg / seeds.len() as f64;
        viol_loose += count_violations(&loose.records, THRESHOLD);
        viol_tight += count_violations(&tight.records, THRESHOLD);
    }
    let ndcg_ok = ndcg_tight < ndcg_loose;
    let viol_ok = viol_tight < viol_loose;
    let detail = format!(
        "{} seeds: mean cumulative NDCG eps=0.05 {ndcg_tight:.3} vs eps=0.1 {ndcg_loose:.3} ({}); \
         rounds with |UF|>{THRESHOLD}: {viol_tight} vs {viol_loose} ({})",
        seeds.len(),
        if ndcg_ok { "lower" } else { "NOT lower" },
        if viol_ok { "fewer" } else { "NOT fewer" }
    );
    check(ndcg_ok && viol_ok, || detail.clone())?;
    Ok(detail)
}

fn trace_bytes(res: &ExperimentResult) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(&res.records, &mut buf).unwrap();
    buf
}

fn degenerate_equivalence() -> Outcome {
    let mut compared = 0;
    for (seed, click) in [
        (31u64, ClickModelConfig::perfect()),
        (32, ClickModelConfig::navigational()),
        (33, ClickModelConfig::informational()),
    ] {
        for heuristic in [true, false] {
            let base = ExperimentConfig {
                rounds: 1500,
                click_model: click.clone(),
                heuristic,
                epsilon: f64::INFINITY,
                ..balanced_config(Algorithm::FairExpPairRank, seed)
            };
            let data = prepare_data(&base).map_err(|e| e.to_string())?;
            let fair = run(&base, &data)?;
            let plain = run(&ExperimentConfig { algorithm: Algorithm::PairRank, ..base.clone() }, &data)?;
            let (a, b) = (trace_bytes(&fair), trace_bytes(&plain));
            check(a == b, || format!("seed {seed}, heuristic={heuristic}: traces differ"))?;
            check(fair.summary.total_added_regret == 0, || "added regret under eps=inf".into())?;
            compared += a.len();
        }
    }
    Ok(format!("6 runs x 1500 rounds byte-identical ({compared} bytes compared)"))
}

// 10 --------------------------------------------------------------------

fn metric_facts() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    check(close(ndcg_at_k(&[4, 3, 2, 1, 0], 10), 1.0), || "descending order".into())?;
    check(close(ndcg_at_k(&[0, 0, 0], 10), 1.0), || "all-zero convention".into())?;
    let hand = (15.0 / 3f64.log2()) / 15.0;
    let v = ndcg_at_k(&[0, 4], 2);
    check(close(v, hand), || format!("(0,4): {v} vs {hand}"))?;
    check((v - 0.6309).abs() < 5e-5, || format!("(0,4): {v} vs 0.6309"))?;
    check(close(cumulative_ndcg(&[1.0; 10], 1.0), 10.0), || "constant series, gamma 1".into())?;
    check(close(cumulative_ndcg(&[1.0, 1.0], 0.5), 1.5), || "(1,1), gamma 0.5".into())?;
    let long = vec![1.0; 200_000];
    let limit = cumulative_ndcg(&long, 0.9995);
    check(close(limit, 2000.0), || format!("geometric limit {limit}"))?;
    Ok(format!("NDCG(0,4)={v:.10}; limit at gamma 0.9995 = {limit:.10}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("five-document calibration example", five_doc_example),
        ("minimality oracle", minimality),
        ("template arithmetic", template_arithmetic),
        ("click-model fidelity", click_fidelity),
        ("confidence-interval coverage", interval_coverage),
        ("fairness control", fairness_control),
        ("learning despite fairness", learning_despite_fairness),
        ("trade-off direction", trade_off),
        ("degenerate-constraint equivalence", degenerate_equivalence),
        ("metric unit facts", metric_facts),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (idx, (name, f)) in criteria.iter().enumerate() {
        let number = idx + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {number:>2} FAIL  {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
