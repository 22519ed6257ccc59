//! A small 3D k-d tree for nearest-neighbor queries over point clouds.

use crate::geometry::Point3;

struct Node {
    index: u32,
    axis: u8,
    left: i32,
    right: i32,
}

pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> KdTree {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        tree.root = tree.split(&mut order, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn split(&mut self, order: &mut [u32], depth: usize) -> i32 {
        if order.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |a, b| {
            let pa = self.points[*a as usize][axis as usize];
            let pb = self.points[*b as usize][axis as usize];
            pa.partial_cmp(&pb).unwrap_or(std::cmp::Ordering::Equal)
        });
        let index = order[mid];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node {
            index,
            axis,
            left: -1,
            right: -1,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.split(lo, depth + 1);
        let right = self.split(hi, depth + 1);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    /// Index and distance of the nearest stored point.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best, &mut (usize::MAX, f64::INFINITY), false);
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }

    /// The two nearest stored points, closest first.
    pub fn nearest2(&self, query: &Point3) -> [(usize, f64); 2] {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best, &mut second, true);
        [(best.0, best.1.sqrt()), (second.0, second.1.sqrt())]
    }

    fn search(
        &self,
        node_id: i32,
        query: &Point3,
        best: &mut (usize, f64),
        second: &mut (usize, f64),
        track_second: bool,
    ) {
        if node_id < 0 {
            return;
        }
        let node = &self.nodes[node_id as usize];
        let point = &self.points[node.index as usize];
        let d2 = (point - query).norm_squared();
        if d2 < best.1 {
            if track_second {
                *second = *best;
            }
            *best = (node.index as usize, d2);
        } else if track_second && d2 < second.1 {
            *second = (node.index as usize, d2);
        }
        let axis = node.axis as usize;
        let delta = query[axis] - point[axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, best, second, track_second);
        let bound = if track_second { second.1 } else { best.1 };
        if delta * delta < bound {
            self.search(far, query, best, second, track_second);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Point3> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                )
            })
            .collect();
        let tree = KdTree::build(&points);
        for _ in 0..200 {
            let q = Point3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
            );
            let (idx, dist) = tree.nearest(&q).unwrap();
            let brute = points
                .iter()
                .map(|p| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((dist - brute).abs() < 1e-12, "{dist} vs {brute}");
            assert!(((points[idx] - q).norm() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn second_nearest_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let tree = KdTree::build(&points);
        for i in (0..points.len()).step_by(7) {
            let [first, second] = tree.nearest2(&points[i]);
            assert_eq!(first.0, i);
            assert!(first.1 < 1e-12);
            let mut brute: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| (p - points[i]).norm())
                .collect();
            brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((second.1 - brute[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_tree_returns_none() {
        let tree = KdTree::build(&[]);
        assert!(tree.nearest(&Point3::origin()).is_none());
    }
}
