//! Calibrating a block partition to a group-placement template.
//!
//! The template is cut into segments matching the block sizes, top block
//! first. When a block cannot supply the documents a segment asks for, the
//! missing documents are promoted from the nearest lower blocks holding that
//! group; if the block is displayed in full, the same number of documents of
//! the other group are pushed out into a new block placed directly after it,
//! and the rest of the template is re-segmented against the changed blocks.
//! Each calibrated block is then permuted to fit its segment.
//!
//! Pulling from the nearest donor first is what keeps the number of violated
//! certain orders minimal: a document promoted from a farther block jumps
//! over every document of the blocks in between.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Group, GroupCounts};
use crate::error::{Error, Result};
use crate::fairness::{GroupTemplate, UnfairnessLedger};
use crate::ranker::{permute_block, BlockPartition, CertainOrder};

/// Everything about the query that calibration needs besides the partition.
#[derive(Debug, Clone, Copy)]
pub struct SwapContext<'a> {
    pub certain: &'a CertainOrder,
    pub groups: &'a [Group],
    /// Model scores, used only to break ties between promotion candidates.
    pub scores: &'a [f64],
    /// Follow certain orders when choosing promoted/displaced documents and
    /// when permuting inside blocks. Off: uniform random choices.
    pub respect_certain: bool,
}

/// One block that had to be changed to satisfy its segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEvent {
    /// 0-based display position where the segment starts.
    pub position: usize,
    pub block: Vec<usize>,
    pub segment: Vec<Group>,
    pub needed: Group,
    /// `(document, distance)`; distance 1 is the block right below.
    pub promoted: Vec<(usize, usize)>,
    pub displaced: Vec<usize>,
    /// `M² + Σ_i m_i·Σ_{j<i} n_j` with `n_j` counting other-group documents
    /// in the intermediate blocks.
    pub swap_bound: usize,
    /// Number of documents each promoted document can possibly jump over:
    /// the block itself plus the intermediate blocks.
    pub jump_bound: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedRanking {
    pub order: Vec<usize>,
    pub added_regret: usize,
    pub template: GroupTemplate,
    pub partition_after: BlockPartition,
    pub events: Vec<CalibrationEvent>,
}

/// Number of certain pairs `(i ≻ j)` with `j` shown before `i`.
pub fn added_regret(order: &[usize], certain: &CertainOrder) -> usize {
    let mut count = 0;
    for (p, &earlier) in order.iter().enumerate() {
        for &later in &order[p + 1..] {
            if certain.is_better(later, earlier) {
                count += 1;
            }
        }
    }
    count
}

fn wins_within(doc: usize, block: &[usize], certain: &CertainOrder) -> usize {
    block.iter().filter(|&&o| o != doc && certain.is_better(doc, o)).count()
}

/// Picks the group-`g` document to promote out of `donor`.
fn pick_promoted<R: Rng + ?Sized>(
    donor: &[usize],
    g: Group,
    ctx: &SwapContext<'_>,
    rng: &mut R,
) -> Option<usize> {
    let eligible = donor.iter().copied().filter(|&d| ctx.groups[d] == g);
    if !ctx.respect_certain {
        let all: Vec<usize> = eligible.collect();
        return all.choose(rng).copied();
    }
    // most wins inside the donor block, then higher score, then lower index
    eligible.min_by(|&x, &y| {
        wins_within(y, donor, ctx.certain)
            .cmp(&wins_within(x, donor, ctx.certain))
            .then(ctx.scores[y].total_cmp(&ctx.scores[x]))
            .then(x.cmp(&y))
    })
}

/// Picks the group-`g` document to push out of `block`.
fn pick_displaced<R: Rng + ?Sized>(
    block: &[usize],
    g: Group,
    ctx: &SwapContext<'_>,
    rng: &mut R,
) -> Option<usize> {
    let eligible = block.iter().copied().filter(|&d| ctx.groups[d] == g);
    if !ctx.respect_certain {
        let all: Vec<usize> = eligible.collect();
        return all.choose(rng).copied();
    }
    // fewest wins, then lower score, then higher index
    eligible.min_by(|&x, &y| {
        wins_within(x, block, ctx.certain)
            .cmp(&wins_within(y, block, ctx.certain))
            .then(ctx.scores[x].total_cmp(&ctx.scores[y]))
            .then(y.cmp(&x))
    })
}

fn check_inputs(
    partition: &BlockPartition,
    template: &GroupTemplate,
    ctx: &SwapContext<'_>,
) -> Result<()> {
    let n = ctx.groups.len();
    if ctx.certain.len_docs() != n || ctx.scores.len() != n {
        return Err(Error::MalformedPartition(format!(
            "context sizes disagree: {} groups, {} scores, certain over {}",
            n,
            ctx.scores.len(),
            ctx.certain.len_docs()
        )));
    }
    partition.validate(n, None)?;
    let have = GroupCounts::from_groups(ctx.groups);
    let need = template.counts();
    if need.a > have.a || need.b > have.b {
        return Err(Error::InfeasibleTemplate {
            template: template.to_string(),
            need_a: need.a,
            need_b: need.b,
            have_a: have.a,
            have_b: have.b,
        });
    }
    Ok(())
}

/// Calibrates `partition` so that the displayed top positions follow
/// `template` exactly, introducing as few certain-order violations as the
/// block structure allows.
pub fn fair_swap<R: Rng + ?Sized>(
    partition: &BlockPartition,
    template: &GroupTemplate,
    ctx: &SwapContext<'_>,
    rng: &mut R,
) -> Result<CalibratedRanking> {
    check_inputs(partition, template, ctx)?;
    let k = template.len();
    let mut queue: VecDeque<Vec<usize>> = partition.blocks.iter().cloned().collect();
    let mut done: Vec<Vec<usize>> = Vec::new();
    let mut events = Vec::new();
    let mut order = Vec::with_capacity(k);
    let mut pos = 0;

    while pos < k {
        let mut block = queue
            .pop_front()
            .ok_or_else(|| Error::MalformedPartition("ran out of blocks".into()))?;
        let seg_len = block.len().min(k - pos);
        let segment = &template.placement[pos..pos + seg_len];
        let need = GroupCounts::from_groups(segment);
        let have = GroupCounts::from_groups(block.iter().map(|&d| &ctx.groups[d]));

        let lacking = if have.a < need.a {
            Some((Group::A, need.a - have.a))
        } else if have.b < need.b {
            Some((Group::B, need.b - have.b))
        } else {
            None
        };

        if let Some((g, r)) = lacking {
            let original = block.clone();
            let mut promoted = Vec::with_capacity(r);
            let mut swap_bound = r * r;
            let mut jump_bound = 0;
            let mut passed_other = 0; // other-group docs in blocks passed so far
            let mut passed_all = 0;
            for (qi, donor) in queue.iter_mut().enumerate() {
                let before = promoted.len();
                while promoted.len() < r {
                    let Some(pick) = pick_promoted(donor, g, ctx, rng) else {
                        break;
                    };
                    donor.retain(|&d| d != pick);
                    promoted.push((pick, qi + 1));
                }
                let taken = promoted.len() - before;
                swap_bound += taken * passed_other;
                jump_bound += taken * (original.len() + passed_all);
                if promoted.len() == r {
                    break;
                }
                passed_other += donor.iter().filter(|&&d| ctx.groups[d] != g).count();
                passed_all += donor.len() + taken;
            }
            if promoted.len() < r {
                return Err(Error::InfeasibleTemplate {
                    template: template.to_string(),
                    need_a: need.a,
                    need_b: need.b,
                    have_a: have.a,
                    have_b: have.b,
                });
            }
            queue.retain(|b| !b.is_empty());

            let mut displaced = Vec::new();
            if seg_len == block.len() {
                for _ in 0..r {
                    let pick = pick_displaced(&block, g.other(), ctx, rng)
                        .expect("a full block lacking one group has surplus of the other");
                    block.retain(|&d| d != pick);
                    displaced.push(pick);
                }
                queue.push_front(displaced.clone());
            }
            block.extend(promoted.iter().map(|&(d, _)| d));
            events.push(CalibrationEvent {
                position: pos,
                block: original,
                segment: segment.to_vec(),
                needed: g,
                promoted,
                displaced,
                swap_bound,
                jump_bound,
            });
        }

        let placed = permute_block(
            &block,
            Some(segment),
            ctx.groups,
            ctx.certain,
            ctx.respect_certain,
            rng,
        );
        debug_assert_eq!(placed.len(), seg_len);
        order.extend_from_slice(&placed);
        done.push(block);
        pos += seg_len;
    }

    done.extend(queue);
    let added = added_regret(&order, ctx.certain);
    Ok(CalibratedRanking {
        order,
        added_regret: added,
        template: template.clone(),
        partition_after: BlockPartition { blocks: done },
        events,
    })
}

fn template_stream(template: &GroupTemplate) -> u64 {
    let mut bits = 0u64;
    for g in &template.placement {
        bits = bits << 1 | u64::from(*g == Group::B);
    }
    (template.len() as u64) << 48 | bits
}

/// Runs [`fair_swap`] for every qualified template and keeps the ranking
/// with the least added regret; ties go to the smaller projected
/// unfairness, then the lexicographically smaller template.
///
/// Each template is calibrated with its own generator derived from one draw
/// of `rng`, so the result does not depend on evaluation order.
pub fn select_ranking<R: Rng + ?Sized>(
    partition: &BlockPartition,
    qualified: &[GroupTemplate],
    ctx: &SwapContext<'_>,
    ledger: &UnfairnessLedger,
    rng: &mut R,
) -> Result<CalibratedRanking> {
    if qualified.is_empty() {
        return Err(Error::Validation("no qualified templates".into()));
    }
    let base = rng.next_u64();
    let run = |t: &GroupTemplate| {
        let mut local = ChaCha8Rng::seed_from_u64(base);
        local.set_stream(template_stream(t));
        fair_swap(partition, t, ctx, &mut local)
    };
    let results: Vec<Result<CalibratedRanking>> = if qualified.len() >= 64 {
        qualified.par_iter().map(run).collect()
    } else {
        qualified.iter().map(run).collect()
    };

    let mut best: Option<CalibratedRanking> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(cand) => {
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        let key = |c: &CalibratedRanking| {
                            (c.added_regret, ledger.projected_unfairness(&c.template).abs())
                        };
                        let (ra, ua) = key(&cand);
                        let (rb, ub) = key(cur);
                        ra.cmp(&rb)
                            .then(ua.total_cmp(&ub))
                            .then(cand.template.placement.cmp(&cur.template.placement))
                            .is_lt()
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one template was evaluated"))
}
