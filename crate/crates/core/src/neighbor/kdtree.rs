use std::collections::BinaryHeap;

use super::{check_k, squared_distance, Candidate, NeighborList};
use crate::error::{Error, Result};

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: [f64; 3],
    index: u32,
    axis: u8,
    left: u32,
    right: u32,
}

/// Balanced k-d tree built by median splits on axis `depth % 3`.
///
/// Every point in a node's left subtree precedes the node's point in
/// `(coordinate, index)` order along the node's axis; the right subtree
/// follows it. Queries use a bounded best-`K` backtracking search.
#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Domain("non-finite point".into()));
        }
        assert!(points.len() < NIL as usize, "too many points for a k-d tree");
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(points, &mut ids, 0, &mut nodes);
        Ok(Self { nodes, root })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn knn(&self, query: &[f64; 3], k: usize) -> Result<NeighborList> {
        check_k(k, self.len())?;
        let mut best: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, &mut best);
        Ok(NeighborList::from_candidates(best.into_sorted_vec()))
    }

    fn search(&self, node: u32, q: &[f64; 3], k: usize, best: &mut BinaryHeap<Candidate>) {
        if node == NIL {
            return;
        }
        let n = &self.nodes[node as usize];
        let cand = Candidate { dist2: squared_distance(q, &n.point), index: n.index as usize };
        if best.len() < k {
            best.push(cand);
        } else if cand.less(best.peek().unwrap()) {
            best.pop();
            best.push(cand);
        }
        let axis = n.axis as usize;
        let diff = q[axis] - n.point[axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, k, best);
        // `<=` keeps equal-distance candidates reachable for the index tie-break
        if best.len() < k || diff * diff <= best.peek().unwrap().dist2 {
            self.search(far, q, k, best);
        }
    }

    /// Checks the split ordering at every node and that each input index
    /// occurs exactly once.
    pub fn validate(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        for n in &self.nodes {
            let i = n.index as usize;
            if i >= seen.len() || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        self.validate_rec(self.root, &mut Vec::new())
    }

    fn validate_rec(&self, node: u32, bounds: &mut Vec<(usize, f64, u32, bool)>) -> bool {
        if node == NIL {
            return true;
        }
        let n = &self.nodes[node as usize];
        for &(axis, split, split_idx, is_left) in bounds.iter() {
            let key = (n.point[axis], n.index);
            let ok = if is_left {
                key.0 < split || (key.0 == split && key.1 < split_idx)
            } else {
                key.0 > split || (key.0 == split && key.1 > split_idx)
            };
            if !ok {
                return false;
            }
        }
        let axis = n.axis as usize;
        bounds.push((axis, n.point[axis], n.index, true));
        let left_ok = self.validate_rec(n.left, bounds);
        bounds.pop();
        bounds.push((axis, n.point[axis], n.index, false));
        let right_ok = self.validate_rec(n.right, bounds);
        bounds.pop();
        left_ok && right_ok
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &KdTree, node: u32) -> usize {
            if node == NIL {
                0
            } else {
                let n = &t.nodes[node as usize];
                1 + rec(t, n.left).max(rec(t, n.right))
            }
        }
        rec(self, self.root)
    }
}

fn build_rec(points: &[[f64; 3]], ids: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if ids.is_empty() {
        return NIL;
    }
    let axis = depth % 3;
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
    });
    let index = ids[mid];
    let slot = nodes.len() as u32;
    nodes.push(Node { point: points[index as usize], index, axis: axis as u8, left: NIL, right: NIL });
    let (lo, rest) = ids.split_at_mut(mid);
    let left = build_rec(points, lo, depth + 1, nodes);
    let right = build_rec(points, &mut rest[1..], depth + 1, nodes);
    nodes[slot as usize].left = left;
    nodes[slot as usize].right = right;
    slot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbor::bruteforce_knn;
    use crate::rng::Stream;

    #[test]
    fn single_point_tree() {
        let t = KdTree::build(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.depth(), 1);
        assert!(t.validate());
        assert_eq!(t.knn(&[0.0; 3], 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn random_tree_respects_splits() {
        let mut s = Stream::new(51, 0);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| [s.uniform(), s.uniform(), s.uniform()]).collect();
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.len(), 1000);
        assert!(t.validate());
        assert!(t.depth() <= 11);
    }

    #[test]
    fn duplicates_are_distinct_entries() {
        let pts = vec![[0.5, 0.5, 0.5]; 37];
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.len(), 37);
        assert!(t.validate());
        assert_eq!(t.knn(&[0.5, 0.5, 0.5], 5).unwrap().indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_input_and_k_too_large() {
        assert!(matches!(KdTree::build(&[]), Err(Error::EmptyInput)));
        let t = KdTree::build(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert!(matches!(t.knn(&[0.0; 3], 3), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn k_equals_n_and_coincident_query() {
        let mut s = Stream::new(52, 0);
        let pts: Vec<[f64; 3]> = (0..64).map(|_| [s.uniform(), s.uniform(), s.uniform()]).collect();
        let t = KdTree::build(&pts).unwrap();
        let all = t.knn(&[0.2, 0.4, 0.9], 64).unwrap();
        assert!(all.distances.windows(2).all(|w| w[0] <= w[1]));
        let hit = t.knn(&pts[17], 3).unwrap();
        assert_eq!(hit.indices[0], 17);
        assert_eq!(hit.distances[0], 0.0);
    }

    #[test]
    fn matches_bruteforce() {
        let mut s = Stream::new(53, 0);
        let pts: Vec<[f64; 3]> = (0..10_000).map(|_| [s.uniform(), s.uniform(), s.uniform()]).collect();
        let t = KdTree::build(&pts).unwrap();
        for _ in 0..1000 {
            let q = [s.uniform(), s.uniform(), s.uniform()];
            assert_eq!(t.knn(&q, 16).unwrap(), bruteforce_knn(&pts, &q, 16).unwrap());
        }
    }

    #[test]
    fn matches_bruteforce_with_heavy_ties() {
        let mut s = Stream::new(54, 0);
        let pts: Vec<[f64; 3]> = (0..3000).map(|_| [s.below(6) as f64, s.below(6) as f64, s.below(6) as f64]).collect();
        let t = KdTree::build(&pts).unwrap();
        for _ in 0..300 {
            let q = [s.below(6) as f64, s.below(6) as f64 + 0.5, s.below(6) as f64];
            let k = 1 + s.below(64) as usize;
            assert_eq!(t.knn(&q, k).unwrap(), bruteforce_knn(&pts, &q, k).unwrap());
        }
    }
}
