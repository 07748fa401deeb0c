//! Bounding volume hierarchy over axis-aligned boxes, built by median split.

use crate::geometry::{Aabb, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    // item indices, permuted so every leaf owns a contiguous range
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..boxes.len()).collect(),
        };
        if !boxes.is_empty() {
            let centers: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
            bvh.build_node(boxes, &centers, 0, boxes.len());
        }
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centers: &[Vec3], start: usize, end: usize) -> usize {
        let bounds = self.order[start..end]
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i]));
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let spread = self.order[start..end]
            .iter()
            .fold(Aabb::empty(), |mut acc, &i| {
                acc.grow(&centers[i]);
                acc
            })
            .extent();
        let axis = spread.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b))
        });
        let left = self.build_node(boxes, centers, start, mid);
        let right = self.build_node(boxes, centers, mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Visits every item whose box the ray may hit, nearest subtree first.
    ///
    /// `visit` returns the best ray parameter found so far; subtrees entered
    /// beyond it (with a small relative slack) are skipped.
    pub fn traverse(&self, origin: &Vec3, dir: &Vec3, mut visit: impl FnMut(usize) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best = f64::INFINITY;
        let beyond = |t: f64, best: f64| t > best * (1.0 + 1e-9) + 1e-12;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            match node.bounds.ray_interval(origin, &inv) {
                Some((t0, t1)) if t1 >= 0.0 && !beyond(t0, best) => {}
                _ => continue,
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &item in &self.order[start..end] {
                        best = best.min(visit(item));
                    }
                }
                NodeKind::Inner { left, right } => {
                    let entry = |c: usize| {
                        self.nodes[c]
                            .bounds
                            .ray_interval(origin, &inv)
                            .map_or(f64::INFINITY, |(t0, _)| t0)
                    };
                    // push the farther child first so the nearer is popped next
                    if entry(left) <= entry(right) {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn never_skips_a_hit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let boxes: Vec<Aabb> = (0..200)
            .map(|_| {
                let c = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                Aabb::new(c - Vec3::repeat(0.3), c + Vec3::repeat(0.3))
            })
            .collect();
        let bvh = Bvh::build(&boxes);
        for _ in 0..100 {
            let origin = Vec3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), 8.0);
            let dir = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), -1.0);
            let inv = dir.map(|d| 1.0 / d);
            let mut seen = Vec::new();
            bvh.traverse(&origin, &dir, |i| {
                seen.push(i);
                f64::INFINITY
            });
            for i in 0..boxes.len() {
                if matches!(boxes[i].ray_interval(&origin, &inv), Some((_, t1)) if t1 >= 0.0) {
                    assert!(seen.contains(&i), "box {i} skipped");
                }
            }
        }
    }

    #[test]
    fn empty_is_noop() {
        let bvh = Bvh::build(&[]);
        bvh.traverse(&Vec3::zeros(), &Vec3::z(), |_| panic!("no items"));
    }
}
