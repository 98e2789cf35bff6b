//! Incremental 2D k-d tree over reference-image positions.
//!
//! Inserts attach leaves; removals tombstone and trigger a balanced rebuild
//! once half the nodes are dead. Nearest-k queries order candidates by
//! `(distance^2, id)` so ties resolve to the lowest id, matching the
//! brute-force oracle exactly.

use std::collections::HashMap;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Node<S> {
    point: (S, S),
    id: u64,
    left: Option<usize>,
    right: Option<usize>,
    deleted: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct KdTree<S> {
    nodes: Vec<Node<S>>,
    root: Option<usize>,
    by_id: HashMap<u64, usize>,
    dead: usize,
}

impl<S: Scalar> KdTree<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            root: None,
            by_id: HashMap::new(),
            dead: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn point_of(&self, id: u64) -> Option<(S, S)> {
        self.by_id.get(&id).map(|&i| self.nodes[i].point)
    }

    pub fn insert(&mut self, point: (S, S), id: u64) {
        debug_assert!(!self.by_id.contains_key(&id), "duplicate id {id}");
        let idx = self.nodes.len();
        self.nodes.push(Node {
            point,
            id,
            left: None,
            right: None,
            deleted: false,
        });
        self.by_id.insert(id, idx);

        let Some(mut cur) = self.root else {
            self.root = Some(idx);
            return;
        };
        let mut depth = 0usize;
        loop {
            let key = axis_key(point, depth);
            let node_key = axis_key(self.nodes[cur].point, depth);
            let branch = if key < node_key {
                &mut self.nodes[cur].left
            } else {
                &mut self.nodes[cur].right
            };
            match branch {
                Some(next) => {
                    cur = *next;
                    depth += 1;
                }
                None => {
                    *branch = Some(idx);
                    return;
                }
            }
        }
    }

    pub fn remove(&mut self, id: u64) -> bool {
        let Some(idx) = self.by_id.remove(&id) else {
            return false;
        };
        self.nodes[idx].deleted = true;
        self.dead += 1;
        if self.dead > self.by_id.len() {
            self.rebuild();
        }
        true
    }

    fn rebuild(&mut self) {
        let mut live: Vec<((S, S), u64)> = self
            .nodes
            .iter()
            .filter(|n| !n.deleted)
            .map(|n| (n.point, n.id))
            .collect();
        self.nodes.clear();
        self.by_id.clear();
        self.dead = 0;
        self.root = self.build_balanced(&mut live, 0);
    }

    fn build_balanced(&mut self, items: &mut [((S, S), u64)], depth: usize) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| {
            axis_key(a.0, depth)
                .partial_cmp(&axis_key(b.0, depth))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let (point, id) = items[mid];
        let idx = self.nodes.len();
        self.nodes.push(Node {
            point,
            id,
            left: None,
            right: None,
            deleted: false,
        });
        self.by_id.insert(id, idx);
        let (lo, rest) = items.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_balanced(lo, depth + 1);
        let right = self.build_balanced(hi, depth + 1);
        self.nodes[idx].left = left;
        self.nodes[idx].right = right;
        Some(idx)
    }

    /// The `k` nearest ids to `point`, ascending `(distance^2, id)`.
    pub fn knn(&self, point: (S, S), k: usize) -> Vec<u64> {
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(S, u64)> = Vec::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, point, k, 0, &mut best);
        }
        best.into_iter().map(|(_, id)| id).collect()
    }

    fn search(&self, idx: usize, point: (S, S), k: usize, depth: usize, best: &mut Vec<(S, u64)>) {
        let node = &self.nodes[idx];
        if !node.deleted {
            let dx = point.0 - node.point.0;
            let dy = point.1 - node.point.1;
            push_candidate(best, (dx * dx + dy * dy, node.id), k);
        }

        let delta = axis_key(point, depth) - axis_key(node.point, depth);
        let (near, far) = if delta < S::zero() {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, point, k, depth + 1, best);
        }
        // The far side can only help if the splitting plane is not strictly
        // beyond the current worst candidate (ties may still swap in a
        // lower id, hence <=).
        let must_visit = best.len() < k || delta * delta <= best.last().unwrap().0;
        if must_visit {
            if let Some(f) = far {
                self.search(f, point, k, depth + 1, best);
            }
        }
    }
}

#[inline]
fn axis_key<S: Scalar>(p: (S, S), depth: usize) -> S {
    if depth % 2 == 0 {
        p.0
    } else {
        p.1
    }
}

fn push_candidate<S: Scalar>(best: &mut Vec<(S, u64)>, cand: (S, u64), k: usize) {
    let pos = best
        .binary_search_by(|probe| {
            probe
                .0
                .partial_cmp(&cand.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(probe.1.cmp(&cand.1))
        })
        .unwrap_or_else(|e| e);
    best.insert(pos, cand);
    best.truncate(k);
}
