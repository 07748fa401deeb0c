//! Density iso-surface extraction inside an oriented box.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc_tables::TRI_TABLE;
use super::{MeshError, TriMesh};
use crate::field::DensityField;
use crate::geometry::{OrientedBox, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Samples per box axis.
    pub resolution: usize,
    /// Iso-level on density.
    pub sigma_threshold: f64,
    /// Connected components with fewer triangles are dropped.
    pub min_component_size: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            sigma_threshold: 15.0,
            min_component_size: 50,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.resolution < 8 {
            return Err(MeshError::InvalidConfig(format!(
                "resolution must be >= 8, got {}",
                self.resolution
            )));
        }
        if !(self.sigma_threshold > 0.0) {
            return Err(MeshError::InvalidConfig(format!(
                "sigma_threshold must be > 0, got {}",
                self.sigma_threshold
            )));
        }
        Ok(())
    }
}

// corner k of a cell, as (dx, dy, dz)
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Scalar lattice with an explicit node spacing and origin, in the box frame.
struct Lattice {
    dims: [usize; 3],
    origin: Vec3,
    spacing: Vec3,
    values: Vec<f64>,
}

impl Lattice {
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 * self.spacing.x, j as f64 * self.spacing.y, k as f64 * self.spacing.z)
    }
}

/// Samples density at cell centers of a `resolution^3` grid over the box,
/// surrounded by a ring of zero nodes so the box faces cap the surface.
fn sample_box(field: &dyn DensityField, obb: &OrientedBox, resolution: usize) -> Lattice {
    let n = resolution;
    let dims = [n + 2; 3];
    let spacing = obb.half_extents * 2.0 / n as f64;
    let origin = -obb.half_extents - spacing * 0.5;
    let slab = dims[0] * dims[1];
    let mut values = vec![0.0f64; slab * dims[2]];
    values
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(k, plane)| {
            if k == 0 || k == dims[2] - 1 {
                return;
            }
            for j in 1..dims[1] - 1 {
                for i in 1..dims[0] - 1 {
                    let local = origin
                        + Vec3::new(i as f64 * spacing.x, j as f64 * spacing.y, k as f64 * spacing.z);
                    plane[i + dims[0] * j] = field.sigma(&obb.pose.apply(&local));
                }
            }
        });
    Lattice {
        dims,
        origin,
        spacing,
        values,
    }
}

/// Marching cubes on the lattice. Vertices on shared lattice edges are welded.
fn polygonize(lattice: &Lattice, iso: f64) -> TriMesh {
    let [nx, ny, nz] = lattice.dims;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let node = |c: usize| {
                    let o = CORNERS[c];
                    (i + o[0], j + o[1], k + o[2])
                };
                let mut case = 0usize;
                let mut vals = [0.0f64; 8];
                for c in 0..8 {
                    let (a, b, d) = node(c);
                    vals[c] = lattice.values[lattice.idx(a, b, d)];
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut e = 0;
                while e < 16 && row[e] >= 0 {
                    let mut tri = [0u32; 3];
                    for (slot, &edge) in row[e..e + 3].iter().enumerate() {
                        let [c0, c1] = EDGES[edge as usize];
                        let (n0, n1) = (node(c0), node(c1));
                        let key_lo = lattice.idx(n0.0, n0.1, n0.2).min(lattice.idx(n1.0, n1.1, n1.2));
                        let key_hi = lattice.idx(n0.0, n0.1, n0.2).max(lattice.idx(n1.0, n1.1, n1.2));
                        tri[slot] = *edge_vertex.entry((key_lo, key_hi)).or_insert_with(|| {
                            let (v0, v1) = (vals[c0], vals[c1]);
                            let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
                            let p0 = lattice.position(n0.0, n0.1, n0.2);
                            let p1 = lattice.position(n1.0, n1.1, n1.2);
                            vertices.push(p0 + (p1 - p0) * t);
                            (vertices.len() - 1) as u32
                        });
                    }
                    triangles.push(tri);
                    e += 3;
                }
            }
        }
    }
    TriMesh {
        vertices,
        triangles,
        normals: None,
    }
}

/// Merges coincident vertices and drops zero-area triangles.
fn cleanup(mesh: TriMesh) -> TriMesh {
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    for v in &mesh.vertices {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        let id = *seen.entry(key).or_insert_with(|| {
            vertices.push(*v);
            (vertices.len() - 1) as u32
        });
        remap.push(id);
    }
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| remap[i as usize]))
        .filter(|t| {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return false;
            }
            let (a, b, c) = (vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]);
            (b - a).cross(&(c - a)).norm_squared() > 0.0
        })
        .collect();
    let merged = TriMesh {
        vertices,
        triangles,
        normals: None,
    };
    let all: Vec<usize> = (0..merged.triangles.len()).collect();
    merged.subset(&all)
}

/// Iso-surface of the density inside `obb`, in world coordinates.
///
/// Density is taken as zero outside the box, so geometry crossing a face is
/// capped there. Returns an empty mesh when nothing crosses the iso-level.
pub fn extract_mesh(field: &dyn DensityField, obb: &OrientedBox, cfg: &ExtractionConfig) -> Result<TriMesh, MeshError> {
    cfg.validate()?;
    let lattice = sample_box(field, obb, cfg.resolution);
    let raw = polygonize(&lattice, cfg.sigma_threshold);
    let mut mesh = cleanup(raw);
    // with the dense side above the iso-level the table winds triangles outward
    if mesh.is_empty() {
        return Ok(TriMesh::default());
    }
    let mut keep: Vec<usize> = mesh
        .components()
        .into_iter()
        .filter(|c| c.len() >= cfg.min_component_size)
        .flatten()
        .collect();
    keep.sort_unstable();
    mesh = mesh.subset(&keep);
    let mut world = mesh.transformed(&obb.pose);
    if !world.is_empty() {
        world.compute_normals();
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticField, EmptyField, Primitive};
    use crate::geometry::RigidTransform;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_field(center: Vec3, radius: f64) -> AnalyticField {
        AnalyticField::new(vec![Primitive::Sphere { center, radius, sigma: 50.0, rgb: None }]).unwrap()
    }

    fn cfg(resolution: usize) -> ExtractionConfig {
        ExtractionConfig {
            resolution,
            sigma_threshold: 25.0,
            min_component_size: 50,
        }
    }

    #[test]
    fn empty_field_gives_empty_mesh() {
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(0.5)).unwrap();
        let m = extract_mesh(&EmptyField, &b, &cfg(16)).unwrap();
        assert!(m.is_empty() && m.vertices.is_empty());
    }

    #[test]
    fn sphere_radius_error_bound() {
        let center = Vec3::new(0.02, -0.01, 0.03);
        let f = sphere_field(center, 0.3);
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7);
        let b = OrientedBox::new(RigidTransform::new(q, center), Vec3::repeat(0.5)).unwrap();
        let m = extract_mesh(&f, &b, &cfg(48)).unwrap();
        let cell = 1.0 / 48.0;
        assert!(m.is_closed());
        assert_eq!(m.components().len(), 1);
        for v in &m.vertices {
            assert!(((v - center).norm() - 0.3).abs() <= 1.5 * cell);
        }
        assert!(m.signed_volume() > 0.0, "outward winding");
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.3f64.powi(3);
        assert!((m.signed_volume() - expected).abs() / expected < 0.05);
    }

    #[test]
    fn half_inside_sphere_is_cropped() {
        let f = sphere_field(Vec3::new(0.5, 0.0, 0.0), 0.3);
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(0.5)).unwrap();
        let m = extract_mesh(&f, &b, &cfg(40)).unwrap();
        let cell = 1.0 / 40.0;
        assert!(!m.is_empty());
        assert!(m.is_closed(), "cap closes the crop");
        for v in &m.vertices {
            assert!(v.x <= 0.5 + cell && v.x.abs() <= 0.5 + cell);
        }
    }

    #[test]
    fn small_components_removed() {
        let f = AnalyticField::new(vec![
            Primitive::Sphere { center: Vec3::zeros(), radius: 0.3, sigma: 50.0, rgb: None },
            Primitive::Sphere { center: Vec3::new(0.42, 0.42, 0.42), radius: 0.02, sigma: 50.0, rgb: None },
        ])
        .unwrap();
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(0.5)).unwrap();
        let mut c = cfg(32);
        c.min_component_size = 0;
        assert_eq!(extract_mesh(&f, &b, &c).unwrap().components().len(), 2);
        c.min_component_size = 50;
        assert_eq!(extract_mesh(&f, &b, &c).unwrap().components().len(), 1);
    }

    #[test]
    fn invalid_config() {
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(0.5)).unwrap();
        assert!(extract_mesh(&EmptyField, &b, &cfg(4)).is_err());
        let mut c = cfg(16);
        c.sigma_threshold = 0.0;
        assert!(extract_mesh(&EmptyField, &b, &c).is_err());
    }

    #[test]
    fn table_is_watertight_on_random_lattices() {
        // random scalar fields exercise every case including the ambiguous ones
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dims = [10, 10, 10];
            let mut values = vec![0.0; 1000];
            for k in 1..9 {
                for j in 1..9 {
                    for i in 1..9 {
                        values[i + 10 * (j + 10 * k)] = rng.gen_range(0.0..1.0);
                    }
                }
            }
            let lattice = Lattice { dims, origin: Vec3::zeros(), spacing: Vec3::repeat(1.0), values };
            let m = polygonize(&lattice, 0.5);
            let open: Vec<_> = m.edge_use().into_iter().filter(|(_, n)| *n != 2).collect();
            assert!(open.is_empty(), "{} non-manifold edges", open.len());
        }
    }
}
