//! Kendall tau rank correlation between an index sequence and a reference
//! ordering.

/// Kendall tau-a of the sequence `ranks` against the identity ordering:
/// `(concordant - discordant) / (n (n - 1) / 2)`.
///
/// Tied pairs count as neither, so sequences with repeated ranks stay inside
/// `[-1, 1]` without reaching the extremes. Sequences shorter than two
/// elements have tau 0.
pub fn kendall_tau(ranks: &[usize]) -> f64 {
    let n = ranks.len();
    if n < 2 {
        return 0.0;
    }
    let mut score: i64 = 0;
    for a in 0..n {
        for b in a + 1..n {
            score += match ranks[a].cmp(&ranks[b]) {
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Greater => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    score as f64 / pairs
}

/// Position of every index within `reference`; `None` for indices absent
/// from it.
pub fn rank_table(reference: &[usize], universe: usize) -> Vec<Option<usize>> {
    let mut table = vec![None; universe];
    for (pos, &i) in reference.iter().enumerate() {
        if i < universe {
            table[i] = Some(pos);
        }
    }
    table
}
