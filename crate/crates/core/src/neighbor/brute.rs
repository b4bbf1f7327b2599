use super::{check_k, squared_distance, Candidate, NeighborList};
use crate::error::Result;

/// Exhaustive search with a sorted best-score buffer of `K` slots: each point
/// is compared against the slots from best to worst and inserted at the first
/// slot it beats, shifting the tail down. Cost `O(N K)` per query.
pub fn bruteforce_knn(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Result<NeighborList> {
    Ok(bruteforce_knn_counted(points, query, k)?.0)
}

/// As [`bruteforce_knn`], also returning the number of candidate comparisons.
pub fn bruteforce_knn_counted(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Result<(NeighborList, u64)> {
    check_k(k, points.len())?;
    let mut buf = vec![Candidate::WORST; k];
    let mut comparisons = 0u64;
    for (index, p) in points.iter().enumerate() {
        let cand = Candidate { dist2: squared_distance(query, p), index };
        for slot in 0..k {
            comparisons += 1;
            if cand.less(&buf[slot]) {
                buf.copy_within(slot..k - 1, slot + 1);
                buf[slot] = cand;
                break;
            }
        }
    }
    Ok((NeighborList::from_candidates(buf), comparisons))
}
