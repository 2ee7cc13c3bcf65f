//! Certain/uncertain pair sets and the block partition built from them.

use rand::seq::SliceRandom;
use rand::Rng;

use super::RankerState;
use crate::data::{Group, QueryCandidates};
use crate::error::{Error, Result};

/// Outcome of comparing one pair's confidence interval with 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOrder {
    /// The first document is preferred with high probability.
    FirstBetter,
    SecondBetter,
    Uncertain,
}

/// Classifies a pair from its predicted probability `p = P(i ≻ j)` and
/// width `w`. An interval touching 1/2 counts as uncertain.
pub fn classify_interval(p: f64, w: f64) -> PairOrder {
    if p - w > 0.5 {
        PairOrder::FirstBetter
    } else if (1.0 - p) - w > 0.5 {
        PairOrder::SecondBetter
    } else {
        PairOrder::Uncertain
    }
}

/// Directed "certainly better" relation over the documents of one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertainOrder {
    n: usize,
    better: Vec<bool>,
}

impl CertainOrder {
    pub fn empty(n: usize) -> Self {
        CertainOrder {
            n,
            better: vec![false; n * n],
        }
    }

    /// Builds the relation from `(winner, loser)` pairs.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut order = CertainOrder::empty(n);
        for (i, j) in pairs {
            order.insert(i, j)?;
        }
        Ok(order)
    }

    pub fn insert(&mut self, winner: usize, loser: usize) -> Result<()> {
        if winner >= self.n || loser >= self.n || winner == loser {
            return Err(Error::Validation(format!(
                "invalid certain pair ({winner}, {loser}) over {} documents",
                self.n
            )));
        }
        if self.better[loser * self.n + winner] {
            return Err(Error::Validation(format!(
                "pair ({winner}, {loser}) already certain in the opposite direction"
            )));
        }
        self.better[winner * self.n + loser] = true;
        Ok(())
    }

    pub fn len_docs(&self) -> usize {
        self.n
    }

    /// `i ≻ j` is certain.
    pub fn is_better(&self, i: usize, j: usize) -> bool {
        self.better[i * self.n + j]
    }

    pub fn is_certain(&self, i: usize, j: usize) -> bool {
        self.is_better(i, j) || self.is_better(j, i)
    }

    /// All `(winner, loser)` pairs in index order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| self.is_better(i, j).then_some((i, j)))
        })
    }

    pub fn count(&self) -> usize {
        self.better.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairOrderSets {
    pub certain: CertainOrder,
    /// Unordered pairs stored as `(i, j)` with `i < j`.
    pub uncertain: Vec<(usize, usize)>,
}

impl PairOrderSets {
    pub fn len_docs(&self) -> usize {
        self.certain.len_docs()
    }

    /// Order sets whose uncertain part is every pair not in `certain`.
    pub fn from_certain(certain: CertainOrder) -> Self {
        let n = certain.len_docs();
        let mut uncertain = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if !certain.is_certain(i, j) {
                    uncertain.push((i, j));
                }
            }
        }
        PairOrderSets { certain, uncertain }
    }
}

/// Splits every candidate pair into certain (with direction) or uncertain
/// using the ranker's confidence intervals.
pub fn classify_pairs(
    state: &RankerState,
    candidates: &QueryCandidates,
    alpha: f64,
) -> Result<PairOrderSets> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    for doc in &candidates.documents {
        if doc.features.len() != state.dimension() {
            return Err(Error::DimensionMismatch {
                expected: state.dimension(),
                got: doc.features.len(),
            });
        }
    }
    let whitened: Vec<Vec<f64>> = candidates
        .documents
        .iter()
        .map(|d| state.whiten(&d.features))
        .collect();
    let theta = state.theta();

    let mut certain = CertainOrder::empty(n);
    let mut uncertain = Vec::new();
    for i in 0..n {
        let xi = &candidates.documents[i].features;
        for j in i + 1..n {
            let xj = &candidates.documents[j].features;
            let z: f64 = xi
                .iter()
                .zip(xj)
                .zip(theta)
                .map(|((a, b), t)| (a - b) * t)
                .sum();
            let norm = whitened[i]
                .iter()
                .zip(&whitened[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            match classify_interval(super::sigmoid(z), alpha * norm) {
                PairOrder::FirstBetter => certain.better[i * n + j] = true,
                PairOrder::SecondBetter => certain.better[j * n + i] = true,
                PairOrder::Uncertain => uncertain.push((i, j)),
            }
        }
    }
    Ok(PairOrderSets { certain, uncertain })
}

/// Ordered blocks of document indices; every cross-block pair is certain
/// and points from the earlier block to the later one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn len_docs(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn block_of(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.len_docs()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &d in block {
                if d < owner.len() {
                    owner[d] = b;
                }
            }
        }
        owner
    }

    /// Checks exhaustiveness, disjointness and (when `certain` is given)
    /// that cross-block pairs are certain in the forward direction.
    pub fn validate(&self, n: usize, certain: Option<&CertainOrder>) -> Result<()> {
        let mut seen = vec![false; n];
        for block in &self.blocks {
            if block.is_empty() {
                return Err(Error::MalformedPartition("empty block".into()));
            }
            for &d in block {
                if d >= n {
                    return Err(Error::MalformedPartition(format!("document {d} out of range")));
                }
                if seen[d] {
                    return Err(Error::MalformedPartition(format!("document {d} repeated")));
                }
                seen[d] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::MalformedPartition(format!("document {missing} missing")));
        }
        if let Some(certain) = certain {
            for (bi, upper) in self.blocks.iter().enumerate() {
                for lower in &self.blocks[bi + 1..] {
                    for &i in upper {
                        for &j in lower {
                            if !certain.is_better(i, j) {
                                return Err(Error::MalformedPartition(format!(
                                    "documents {i} and {j} are in different blocks without a certain order"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi] = lo;
    }
}

/// Components of the uncertain-pair graph, each sorted, listed by smallest member.
fn components(n: usize, parent: &mut [usize]) -> Vec<Vec<usize>> {
    let mut comp_of_root = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for d in 0..n {
        let r = find(parent, d);
        if comp_of_root[r] == usize::MAX {
            comp_of_root[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[comp_of_root[r]].push(d);
    }
    comps
}

/// Result of examining the component tournament.
enum Tournament {
    Ordered(Vec<Vec<usize>>),
    /// A pair of components with certain orders in both directions:
    /// `(a ≻ b)` and `(c ≻ d)` with `a, d` in one component and `b, c` in the other.
    TwoCycle([usize; 4]),
    /// Three components (by index into the component list) forming a cycle.
    ThreeCycle([usize; 3]),
}

fn order_components(comps: &[Vec<usize>], n: usize, certain: &CertainOrder) -> Tournament {
    let c = comps.len();
    let mut comp_of = vec![0usize; n];
    for (ci, comp) in comps.iter().enumerate() {
        for &d in comp {
            comp_of[d] = ci;
        }
    }
    // beats[a][b]: some certain pair points from component a to b
    let mut beats = vec![false; c * c];
    let mut witness = vec![(0usize, 0usize); c * c];
    for (i, j) in certain.pairs() {
        let (a, b) = (comp_of[i], comp_of[j]);
        if a != b && !beats[a * c + b] {
            beats[a * c + b] = true;
            witness[a * c + b] = (i, j);
        }
    }
    for a in 0..c {
        for b in a + 1..c {
            if beats[a * c + b] && beats[b * c + a] {
                let (i, j) = witness[a * c + b];
                let (k, l) = witness[b * c + a];
                return Tournament::TwoCycle([i, j, k, l]);
            }
        }
    }
    // Acyclic tournaments have distinct out-degrees 0..c-1.
    let outdeg: Vec<usize> = (0..c)
        .map(|a| (0..c).filter(|&b| beats[a * c + b]).count())
        .collect();
    let mut by_rank: Vec<usize> = (0..c).collect();
    by_rank.sort_by_key(|&a| std::cmp::Reverse(outdeg[a]));
    for (pos, &a) in by_rank.iter().enumerate() {
        if outdeg[a] != c - 1 - pos {
            // find a 3-cycle through the offending structure
            for x in 0..c {
                for y in 0..c {
                    if !beats[x * c + y] {
                        continue;
                    }
                    for z in 0..c {
                        if beats[y * c + z] && beats[z * c + x] {
                            return Tournament::ThreeCycle([x, y, z]);
                        }
                    }
                }
            }
            unreachable!("non-transitive tournament without a 3-cycle");
        }
    }
    Tournament::Ordered(by_rank.into_iter().map(|a| comps[a].clone()).collect())
}

/// Blocks are the connected components of the uncertain-pair graph, ordered
/// so that every cross-block certain pair points forward.
///
/// Certain pairs whose directions disagree between two components make the
/// partition infeasible; the error carries the documents along the cycle.
pub fn partition_blocks(order_sets: &PairOrderSets) -> Result<BlockPartition> {
    let n = order_sets.len_docs();
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in &order_sets.uncertain {
        union(&mut parent, i, j);
    }
    let comps = components(n, &mut parent);
    check_coverage(order_sets)?;
    match order_components(&comps, n, &order_sets.certain) {
        Tournament::Ordered(blocks) => Ok(BlockPartition { blocks }),
        Tournament::TwoCycle(cycle) => Err(Error::PartitionInfeasible {
            cycle: cycle.to_vec(),
        }),
        Tournament::ThreeCycle(cs) => Err(Error::PartitionInfeasible {
            cycle: cs.iter().map(|&ci| comps[ci][0]).collect(),
        }),
    }
}

fn check_coverage(order_sets: &PairOrderSets) -> Result<()> {
    let n = order_sets.len_docs();
    let mut covered = order_sets.certain.clone();
    for &(i, j) in &order_sets.uncertain {
        if i >= n || j >= n || i == j {
            return Err(Error::Validation(format!("invalid uncertain pair ({i}, {j})")));
        }
        if covered.is_certain(i, j) {
            return Err(Error::Validation(format!(
                "pair ({i}, {j}) is both certain and uncertain"
            )));
        }
        covered.better[i * n + j] = true;
    }
    for i in 0..n {
        for j in i + 1..n {
            if !covered.is_certain(i, j) {
                return Err(Error::Validation(format!("pair ({i}, {j}) is not classified")));
            }
        }
    }
    Ok(())
}

/// Like [`partition_blocks`], but merges components that sit on a cycle of
/// certain orders until the remaining block order is consistent. Returns the
/// partition and the number of merges performed.
pub fn coarsen_partition(order_sets: &PairOrderSets) -> Result<(BlockPartition, usize)> {
    let n = order_sets.len_docs();
    check_coverage(order_sets)?;
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in &order_sets.uncertain {
        union(&mut parent, i, j);
    }
    let mut merges = 0;
    loop {
        let comps = components(n, &mut parent);
        match order_components(&comps, n, &order_sets.certain) {
            Tournament::Ordered(blocks) => return Ok((BlockPartition { blocks }, merges)),
            Tournament::TwoCycle([i, j, _, _]) => union(&mut parent, i, j),
            Tournament::ThreeCycle([x, y, z]) => {
                union(&mut parent, comps[x][0], comps[y][0]);
                union(&mut parent, comps[y][0], comps[z][0]);
            }
        }
        merges += 1;
    }
}

/// Orders the documents of one block by repeated random choice among the
/// currently admissible documents.
///
/// With `slots`, position `r` must hold a document of group `slots[r]` and
/// exactly `slots.len()` documents are returned; otherwise all documents are
/// ordered. With `respect_certain`, a document is admissible only once all
/// of its certain predecessors inside the block are placed; when a slot's
/// group has no such document, the choice falls back to documents whose
/// same-group predecessors are placed, preferring the fewest pending
/// predecessors. Without it every remaining document of the slot's group is
/// admissible.
pub fn permute_block<R: Rng + ?Sized>(
    block: &[usize],
    slots: Option<&[Group]>,
    groups: &[Group],
    certain: &CertainOrder,
    respect_certain: bool,
    rng: &mut R,
) -> Vec<usize> {
    let len = slots.map_or(block.len(), <[Group]>::len);
    let mut remaining: Vec<usize> = block.to_vec();
    let mut out = Vec::with_capacity(len);
    let mut candidates = Vec::with_capacity(block.len());

    for pos in 0..len {
        let want = slots.map(|s| s[pos]);
        let fits = |d: usize| want.map_or(true, |g| groups[d] == g);
        candidates.clear();
        if respect_certain {
            candidates.extend(remaining.iter().copied().filter(|&d| {
                fits(d) && !remaining.iter().any(|&p| p != d && certain.is_better(p, d))
            }));
            if candidates.is_empty() {
                let pending = |d: usize| {
                    remaining
                        .iter()
                        .filter(|&&p| p != d && certain.is_better(p, d))
                        .count()
                };
                let eligible: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&d| {
                        fits(d)
                            && !remaining
                                .iter()
                                .any(|&p| p != d && groups[p] == groups[d] && certain.is_better(p, d))
                    })
                    .collect();
                if let Some(best) = eligible.iter().map(|&d| pending(d)).min() {
                    candidates.extend(eligible.into_iter().filter(|&d| pending(d) == best));
                }
            }
        } else {
            candidates.extend(remaining.iter().copied().filter(|&d| fits(d)));
        }
        let Some(&pick) = candidates.choose(rng) else {
            break;
        };
        remaining.retain(|&d| d != pick);
        out.push(pick);
    }
    out
}
