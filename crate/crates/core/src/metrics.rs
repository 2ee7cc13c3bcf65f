//! Ranking quality and regret measures.

/// Cut-off used for online and offline NDCG.
pub const NDCG_CUTOFF: usize = 10;

fn gain(grade: u8) -> f64 {
    (1u64 << grade) as f64 - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// DCG@k with gain `2^grade − 1` and discount `1/log2(r + 1)`.
pub fn dcg_at_k(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum()
}

fn ideal_dcg(pool: &[u8], k: usize) -> f64 {
    let mut sorted = pool.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg_at_k(&sorted, k)
}

/// NDCG@k of a graded sequence against its own ideal ordering; 1.0 when
/// every grade is zero.
pub fn ndcg_at_k(grades: &[u8], k: usize) -> f64 {
    ndcg_against_pool(grades, grades, k)
}

/// NDCG@k of a displayed prefix, normalised by the ideal ordering of the
/// full candidate `pool` (so omitting relevant candidates is penalised).
pub fn ndcg_against_pool(displayed: &[u8], pool: &[u8], k: usize) -> f64 {
    let ideal = ideal_dcg(pool, k);
    if ideal == 0.0 {
        return 1.0;
    }
    (dcg_at_k(displayed, k) / ideal).clamp(0.0, 1.0)
}

/// `Σ_t series[t]·γ^(t−1)`.
pub fn cumulative_ndcg(series: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for &v in series {
        total += v * weight;
        weight *= gamma;
    }
    total
}

/// Number of displayed pairs shown against their grade order.
pub fn pairwise_regret(grades_in_display_order: &[u8]) -> usize {
    let g = grades_in_display_order;
    let mut count = 0;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            if g[j] > g[i] {
                count += 1;
            }
        }
    }
    count
}

/// Pairs with strictly different grades; the maximum possible pairwise regret.
pub fn strictly_graded_pairs(grades: &[u8]) -> usize {
    let mut count = 0;
    for i in 0..grades.len() {
        for j in i + 1..grades.len() {
            if grades[i] != grades[j] {
                count += 1;
            }
        }
    }
    count
}

/// One row of the per-round trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub query_id: String,
    pub online_ndcg: f64,
    pub offline_ndcg: f64,
    pub instantaneous_unfairness: f64,
    pub cumulative_unfairness: f64,
    pub added_regret: usize,
    pub pairwise_regret: usize,
    pub clicks: usize,
    pub certain_pairs: usize,
    pub blocks: usize,
    pub template: String,
    /// Qualified set was empty and the least-unfair templates were used.
    pub fallback: bool,
    /// Partition had to be coarsened or calibration failed; see `note`.
    pub flagged: bool,
    pub note: String,
}

pub const TRACE_VERSION: &str = "# fairexp trace v1";

pub const TRACE_HEADER: [&str; 15] = [
    "round",
    "query_id",
    "online_ndcg",
    "offline_ndcg",
    "instantaneous_unfairness",
    "cumulative_unfairness",
    "added_regret",
    "pairwise_regret",
    "clicks",
    "certain_pairs",
    "blocks",
    "template",
    "fallback",
    "flagged",
    "note",
];

impl RoundRecord {
    pub fn csv_fields(&self) -> [String; 15] {
        [
            self.round.to_string(),
            self.query_id.clone(),
            format!("{:.10}", self.online_ndcg),
            format!("{:.10}", self.offline_ndcg),
            format!("{:.10}", self.instantaneous_unfairness),
            format!("{:.10}", self.cumulative_unfairness),
            self.added_regret.to_string(),
            self.pairwise_regret.to_string(),
            self.clicks.to_string(),
            self.certain_pairs.to_string(),
            self.blocks.to_string(),
            self.template.clone(),
            u8::from(self.fallback).to_string(),
            u8::from(self.flagged).to_string(),
            self.note.clone(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ideal_order_scores_one() {
        assert_abs_diff_eq!(ndcg_at_k(&[4, 3, 3, 1, 0], 10), 1.0, epsilon = 1e-12);
        assert_eq!(ndcg_at_k(&[0, 0, 0], 10), 1.0);
        assert_eq!(ndcg_at_k(&[], 10), 1.0);
    }

    #[test]
    fn hand_computed_value() {
        let expected = (15.0 / 3f64.log2()) / 15.0;
        assert_abs_diff_eq!(ndcg_at_k(&[0, 4], 2), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ndcg_at_k(&[0, 4], 2), 0.6309, epsilon = 1e-4);
    }

    #[test]
    fn pool_normalisation_penalises_omissions() {
        let ideal = 15.0 + 1.0 / 3f64.log2();
        assert_abs_diff_eq!(ndcg_against_pool(&[1], &[1, 4], 10), 1.0 / ideal, epsilon = 1e-12);
        assert_eq!(ndcg_against_pool(&[0], &[0, 0], 10), 1.0);
    }

    #[test]
    fn cumulative_values() {
        assert_eq!(cumulative_ndcg(&[1.0; 10], 1.0), 10.0);
        assert_eq!(cumulative_ndcg(&[1.0, 1.0], 0.5), 1.5);
        assert_eq!(cumulative_ndcg(&[], 0.9), 0.0);
    }

    #[test]
    fn pairwise_regret_values() {
        assert_eq!(pairwise_regret(&[4, 3, 3, 0]), 0);
        assert_eq!(pairwise_regret(&[0, 4]), 1);
    }

    #[test]
    fn pairwise_regret_matches_enumeration_and_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.gen_range(0..12);
            let g: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=4)).collect();
            let mut brute = 0;
            for i in 0..n {
                for j in 0..n {
                    if g[i] > g[j] && j < i {
                        brute += 1;
                    }
                }
            }
            assert_eq!(pairwise_regret(&g), brute);
            let rev: Vec<u8> = g.iter().rev().copied().collect();
            assert_eq!(pairwise_regret(&g) + pairwise_regret(&rev), strictly_graded_pairs(&g));
        }
    }

    #[test]
    fn ndcg_ignores_permutations_of_equal_grades() {
        // swapping the two grade-1 documents is a no-op on the grade sequence
        let a = [3, 1, 2, 1, 0];
        let swapped_equal = [3, 1, 2, 1, 0];
        let swapped_unequal = [3, 2, 1, 1, 0];
        assert_eq!(ndcg_at_k(&a, 5), ndcg_at_k(&swapped_equal, 5));
        assert!(ndcg_at_k(&a, 5) < ndcg_at_k(&swapped_unequal, 5));
    }
}
