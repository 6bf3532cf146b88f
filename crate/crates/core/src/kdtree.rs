//! Exact nearest-neighbour search over 3D points.
//!
//! Candidates are ordered by `(distance, index)`, so equal-distance ties
//! resolve to the lowest point index, the same answer an exhaustive scan
//! gives.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    #[inline]
    pub fn distance(self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        match self {
            Norm::L1 => d[0].abs() + d[1].abs() + d[2].abs(),
            Norm::L2 => (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(format!("unknown norm '{other}' (expected l1 or l2)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
fn cmp_candidate(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// Implicit balanced KD-tree: `order` is permuted so that every subrange
/// `[lo, hi)` is split at its midpoint along `axis[mid]`.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    axis: Vec<u8>,
    norm: Norm,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]], norm: Norm) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axis: vec![0; points.len()],
            norm,
        };
        tree.build(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            for a in 0..3 {
                min[a] = min[a].min(self.points[i][a]);
                max[a] = max[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap();
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| {
            points[i][axis].total_cmp(&points[j][axis])
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Nearest point to `query`, or `None` for an empty tree.
    pub fn nearest(&self, query: &[f64; 3]) -> Option<Neighbor> {
        self.k_nearest(query, 1).into_iter().next()
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, query: &[f64; 3], k: usize) -> Vec<Neighbor> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, self.points.len(), query, k, &mut best);
        }
        best
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64; 3], k: usize, best: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let cand = Neighbor {
            index: idx,
            distance: self.norm.distance(q, &self.points[idx]),
        };
        insert_bounded(best, cand, k);
        if hi - lo == 1 {
            return;
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - self.points[idx][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, k, best);
        // Both norms bound the distance to anything across the plane from
        // below by |diff|; `<=` keeps equal-distance candidates reachable.
        if best.len() < k || diff.abs() <= best[best.len() - 1].distance {
            self.search(far.0, far.1, q, k, best);
        }
    }
}

fn insert_bounded(best: &mut Vec<Neighbor>, cand: Neighbor, k: usize) {
    if best.len() == k && cmp_candidate(&cand, &best[k - 1]) != Ordering::Less {
        return;
    }
    let pos = best
        .binary_search_by(|probe| cmp_candidate(probe, &cand))
        .unwrap_or_else(|p| p);
    best.insert(pos, cand);
    if best.len() > k {
        best.pop();
    }
}

/// Exhaustive `(distance, index)`-ordered nearest neighbour; the reference
/// the tree must agree with.
pub fn brute_force_nearest(points: &[[f64; 3]], query: &[f64; 3], norm: Norm) -> Option<Neighbor> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            distance: norm.distance(query, p),
        })
        .min_by(cmp_candidate)
}
