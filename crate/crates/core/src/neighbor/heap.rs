use super::{check_k, squared_distance, Candidate, NeighborList};
use crate::error::Result;

/// Bounded max-heap of the `K` best candidates, then heapsort. The heap is
/// filled with the first `K` points before any replacement, so there is no
/// sentinel distance. Cost `O(N log K)` per query.
pub fn heap_knn(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Result<NeighborList> {
    Ok(heap_knn_counted(points, query, k)?.0)
}

/// As [`heap_knn`], also returning the number of candidate comparisons.
pub fn heap_knn_counted(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Result<(NeighborList, u64)> {
    check_k(k, points.len())?;
    let mut heap: Vec<Candidate> =
        points[..k].iter().enumerate().map(|(index, p)| Candidate { dist2: squared_distance(query, p), index }).collect();
    let mut comparisons = 0u64;
    for root in (0..k / 2).rev() {
        sift_down(&mut heap, root, k, &mut comparisons);
    }
    for (offset, p) in points[k..].iter().enumerate() {
        let cand = Candidate { dist2: squared_distance(query, p), index: k + offset };
        comparisons += 1;
        if cand.less(&heap[0]) {
            heap[0] = cand;
            sift_down(&mut heap, 0, k, &mut comparisons);
        }
    }
    // in-place heapsort: repeatedly move the max to the end
    for end in (1..k).rev() {
        heap.swap(0, end);
        sift_down(&mut heap, 0, end, &mut comparisons);
    }
    Ok((NeighborList::from_candidates(heap), comparisons))
}

/// Moves the element at `node` down to its place, carrying it in a hole
/// instead of swapping at every level.
#[inline]
fn sift_down(heap: &mut [Candidate], mut node: usize, len: usize, comparisons: &mut u64) {
    let item = heap[node];
    loop {
        let left = 2 * node + 1;
        if left >= len {
            break;
        }
        let right = left + 1;
        let mut largest = left;
        if right < len {
            *comparisons += 1;
            largest += usize::from(heap[left].less(&heap[right]));
        }
        *comparisons += 1;
        if item.less(&heap[largest]) {
            heap[node] = heap[largest];
            node = largest;
        } else {
            break;
        }
    }
    heap[node] = item;
}
