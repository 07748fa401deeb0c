//! Indexed triangle meshes: OBJ IO, iso-surface extraction, ray-cast depth
//! rendering and surface sampling.

mod bvh;
mod extract;
mod mc_tables;
mod obj;
mod render;

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, RigidTransform, Vec3};

pub use bvh::Bvh;
pub use extract::{extract_mesh, ExtractionConfig};
pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use render::{intersect_triangle, render_mesh_depth, MeshScene, PosedMesh, TriangleHit};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("mesh is empty")]
    Empty,
    #[error("invalid sample count {0}")]
    InvalidCount(usize),
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = Self {
            vertices,
            triangles,
            normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        for (triangle, tri) in self.triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(MeshError::IndexOutOfRange {
                    triangle,
                    index,
                    count,
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Axis-aligned cuboid centered at the origin, outward-facing triangles.
    pub fn cuboid(half_extents: &Vec3) -> Self {
        let h = half_extents;
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 4 != 0 { h.x } else { -h.x },
                    if i & 2 != 0 { h.y } else { -h.y },
                    if i & 1 != 0 { h.z } else { -h.z },
                )
            })
            .collect();
        let triangles = vec![
            [0, 1, 3], [0, 3, 2], // -x
            [4, 6, 7], [4, 7, 5], // +x
            [0, 4, 5], [0, 5, 1], // -y
            [2, 3, 7], [2, 7, 6], // +y
            [0, 2, 6], [0, 6, 4], // -z
            [1, 5, 7], [1, 7, 3], // +z
        ];
        Self {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Signed enclosed volume; positive when triangles wind counter-clockwise
    /// seen from outside.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| t.apply_vector(v)).collect()),
        }
    }

    /// Number of triangles that share each undirected edge.
    fn edge_use(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use().values().all(|&n| n == 2)
    }

    /// Triangle indices grouped by vertex-connected component.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.vertices.len());
        for t in &self.triangles {
            uf.union(t[0] as usize, t[1] as usize);
            uf.union(t[1] as usize, t[2] as usize);
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            groups.entry(uf.find(t[0] as usize)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }

    /// Keeps the listed triangles and drops unreferenced vertices.
    pub fn subset(&self, keep: &[usize]) -> TriMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        let mut triangles = Vec::with_capacity(keep.len());
        for &ti in keep {
            let mut tri = [0u32; 3];
            for (k, &v) in self.triangles[ti].iter().enumerate() {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[v as usize]);
                    if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                        out.push(src[v as usize]);
                    }
                }
                tri[k] = remap[v as usize];
            }
            triangles.push(tri);
        }
        TriMesh {
            vertices,
            triangles,
            normals,
        }
    }

    /// Area-weighted vertex normals.
    pub fn compute_normals(&mut self) {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = self.triangle(i);
            let face = (b - a).cross(&(c - a));
            for &v in t {
                n[v as usize] += face;
            }
        }
        for v in &mut n {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }
        self.normals = Some(n);
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Area-weighted uniform samples on the surface, deterministic for a seed.
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<Vec<Vec3>, MeshError> {
    if count == 0 {
        return Err(MeshError::InvalidCount(count));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|i| mesh.triangle_area(i)).collect();
    if areas.is_empty() || !(areas.iter().sum::<f64>() > 0.0) {
        return Err(MeshError::Empty);
    }
    let pick = WeightedIndex::new(&areas).map_err(|_| MeshError::Empty)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let [a, b, c] = mesh.triangle(pick.sample(&mut rng));
            let s = rng.gen::<f64>().sqrt();
            let r = rng.gen::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = TriMesh::cuboid(&Vec3::new(1.0, 2.0, 3.0));
        assert!(m.is_closed());
        assert!((m.signed_volume() - 48.0).abs() < 1e-12);
    }

    #[test]
    fn bad_index_rejected() {
        assert!(matches!(
            TriMesh::new(vec![Vec3::zeros()], vec![[0, 0, 1]]),
            Err(MeshError::IndexOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn samples_lie_on_single_triangle() {
        let m = TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for p in sample_surface(&m, 1000, 42).unwrap() {
            assert!((p.z - 1.0).abs() < 1e-9);
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sampling_is_area_weighted() {
        // areas 1 and 3, disjoint in x
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(16.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let pts = sample_surface(&m, 100_000, 9).unwrap();
        let small = pts.iter().filter(|p| p.x < 5.0).count() as f64;
        let ratio = (pts.len() as f64 - small) / small;
        assert!((ratio - 3.0).abs() / 3.0 < 0.02, "ratio {ratio}");
    }

    #[test]
    fn sampling_deterministic_and_errors() {
        let m = TriMesh::cuboid(&Vec3::repeat(0.5));
        assert_eq!(sample_surface(&m, 50, 1).unwrap(), sample_surface(&m, 50, 1).unwrap());
        assert_ne!(sample_surface(&m, 50, 1).unwrap(), sample_surface(&m, 50, 2).unwrap());
        assert!(matches!(sample_surface(&TriMesh::default(), 5, 1), Err(MeshError::Empty)));
        assert!(sample_surface(&m, 0, 1).is_err());
    }

    #[test]
    fn components_split() {
        let a = TriMesh::cuboid(&Vec3::repeat(0.5));
        let b = a.transformed(&RigidTransform::from_translation(Vec3::new(3.0, 0.0, 0.0)));
        let mut merged = a.clone();
        let off = merged.vertices.len() as u32;
        merged.vertices.extend(b.vertices);
        merged
            .triangles
            .extend(b.triangles.iter().map(|t| t.map(|i| i + off)));
        let comps = merged.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(merged.subset(&comps[1]).vertices.len(), 8);
    }
}
