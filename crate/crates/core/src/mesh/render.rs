//! Ray-cast z-buffer rendering of posed meshes.

use rayon::prelude::*;

use super::{Bvh, TriMesh};
use crate::geometry::{Aabb, RigidTransform, Vec3};
use crate::raster::{DepthMap, IdMap, Raster};
use crate::scene::Frame;

/// Ray parameter and barycentric weights of a ray-triangle hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    /// Weights of the second and third vertex.
    pub b1: f64,
    pub b2: f64,
}

/// Watertight ray-triangle intersection (Woop, Benthin and Wald 2013).
///
/// Edge functions of a shared edge are exact negations of each other, so a
/// ray through an edge hits at least one of the adjacent triangles. Both
/// windings are accepted; hits at `t <= 0` are rejected.
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<TriangleHit> {
    let kz = dir.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = dir[kx] / dir[kz];
    let sy = dir[ky] / dir[kz];
    let sz = 1.0 / dir[kz];

    let a = tri[0] - origin;
    let b = tri[1] - origin;
    let c = tri[2] - origin;
    let (ax, ay) = (a[kx] - sx * a[kz], a[ky] - sy * a[kz]);
    let (bx, by) = (b[kx] - sx * b[kz], b[ky] - sy * b[kz]);
    let (cx, cy) = (c[kx] - sx * c[kz], c[ky] - sy * c[kz]);

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz]);
    let t = t_scaled / det;
    if !(t > 0.0) {
        return None;
    }
    Some(TriangleHit {
        t,
        b1: v / det,
        b2: w / det,
    })
}

/// Mesh with an object id and object-to-world pose.
#[derive(Debug, Clone, Copy)]
pub struct PosedMesh<'a> {
    pub object_id: u32,
    pub mesh: &'a TriMesh,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone)]
struct WorldTriangle {
    vertices: [Vec3; 3],
    object_id: u32,
}

/// World-space triangles of all posed meshes with an acceleration structure.
#[derive(Debug, Clone, Default)]
pub struct MeshScene {
    triangles: Vec<WorldTriangle>,
    bvh: Bvh,
}

/// Nearest hit so far: (z-depth, object id). Lower depth wins, then lower id.
#[derive(Debug, Clone, Copy)]
struct Best {
    t: f64,
    depth: f64,
    id: u32,
}

impl MeshScene {
    pub fn new(meshes: &[PosedMesh<'_>]) -> Self {
        debug_assert!(meshes.iter().all(|m| m.object_id > 0), "object id 0 is background");
        let triangles: Vec<WorldTriangle> = meshes
            .iter()
            .flat_map(|m| {
                let world: Vec<Vec3> = m.mesh.vertices.iter().map(|v| m.pose.apply(v)).collect();
                m.mesh.triangles.iter().map(move |t| WorldTriangle {
                    vertices: t.map(|i| world[i as usize]),
                    object_id: m.object_id,
                })
            })
            .collect();
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| Aabb::from_points(t.vertices.iter()))
            .collect();
        let bvh = Bvh::build(&boxes);
        Self { triangles, bvh }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    fn consider(&self, best: &mut Option<Best>, i: usize, origin: &Vec3, dir: &Vec3, frame: &Frame) {
        let tri = &self.triangles[i];
        let Some(hit) = intersect_triangle(origin, dir, &tri.vertices) else {
            return;
        };
        let z = tri.vertices.map(|v| frame.pose.world_to_camera(&v).z);
        let depth = -(z[0] + hit.b1 * (z[1] - z[0]) + hit.b2 * (z[2] - z[0]));
        if !(depth > 0.0) {
            return;
        }
        let better = match best {
            None => true,
            Some(b) => depth < b.depth || (depth == b.depth && tri.object_id < b.id),
        };
        if better {
            *best = Some(Best {
                t: hit.t,
                depth,
                id: tri.object_id,
            });
        } else if let Some(b) = best {
            b.t = b.t.min(hit.t);
        }
    }

    /// Nearest surface through pixel center `(x, y)`: `(z-depth, object id)`.
    pub fn cast_pixel(&self, frame: &Frame, x: usize, y: usize) -> Option<(f64, u32)> {
        let (origin, dir) = frame.pixel_center_ray(x, y);
        let mut best: Option<Best> = None;
        self.bvh.traverse(&origin, &dir, |i| {
            self.consider(&mut best, i, &origin, &dir, frame);
            best.map_or(f64::INFINITY, |b| b.t)
        });
        best.map(|b| (b.depth, b.id))
    }

    /// Same result as [`MeshScene::cast_pixel`] by testing every triangle.
    pub fn cast_pixel_brute_force(&self, frame: &Frame, x: usize, y: usize) -> Option<(f64, u32)> {
        let (origin, dir) = frame.pixel_center_ray(x, y);
        let mut best: Option<Best> = None;
        for i in 0..self.triangles.len() {
            self.consider(&mut best, i, &origin, &dir, frame);
        }
        best.map(|b| (b.depth, b.id))
    }

    /// Z-depth (meters, 0 where empty) and object id (0 where empty) per pixel.
    pub fn render(&self, frame: &Frame) -> (DepthMap, IdMap) {
        let (w, h) = (frame.width(), frame.height());
        let rows: Vec<Vec<(f64, u32)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.cast_pixel(frame, x, y).unwrap_or((0.0, 0)))
                    .collect()
            })
            .collect();
        let flat = rows.concat();
        (
            Raster::from_vec(w, h, flat.iter().map(|p| p.0).collect()),
            Raster::from_vec(w, h, flat.iter().map(|p| p.1).collect()),
        )
    }
}

pub fn render_mesh_depth(meshes: &[PosedMesh<'_>], frame: &Frame) -> (DepthMap, IdMap) {
    MeshScene::new(meshes).render(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{CameraIntrinsics, CameraPose};
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(w: u32, h: u32, pose: CameraPose) -> Frame {
        Frame {
            index: 0,
            image_path: String::new(),
            intrinsics: CameraIntrinsics {
                fx: w as f64,
                fy: w as f64,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                width: w,
                height: h,
            },
            pose,
            sensor_depth_path: None,
        }
    }

    fn quad(z: f64, half: f64) -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(-half, -half, z),
                Vec3::new(half, -half, z),
                Vec3::new(half, half, z),
                Vec3::new(-half, half, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn no_meshes_is_blank() {
        let (d, ids) = render_mesh_depth(&[], &frame(8, 6, CameraPose::identity()));
        assert!(d.data().iter().all(|&v| v == 0.0));
        assert!(ids.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn quad_depth_is_exact_and_watertight() {
        let q = quad(-2.0, 10.0);
        let f = frame(32, 24, CameraPose::identity());
        let (d, ids) = render_mesh_depth(&[PosedMesh { object_id: 7, mesh: &q, pose: RigidTransform::identity() }], &f);
        // the diagonal edge crosses many pixel centers
        assert!(d.data().iter().all(|&v| v == 2.0));
        assert!(ids.data().iter().all(|&v| v == 7));
    }

    #[test]
    fn nearer_quad_wins() {
        let near = quad(-1.0, 0.1);
        let far = quad(-2.0, 10.0);
        let f = frame(32, 32, CameraPose::identity());
        let (d, ids) = render_mesh_depth(
            &[
                PosedMesh { object_id: 2, mesh: &far, pose: RigidTransform::identity() },
                PosedMesh { object_id: 1, mesh: &near, pose: RigidTransform::identity() },
            ],
            &f,
        );
        // near quad spans |x| <= 0.1 at depth 1: pixels within 3.2 px of the center
        assert_eq!(*ids.get(16, 16), 1);
        assert_eq!(*d.get(16, 16), 1.0);
        assert_eq!(*ids.get(0, 0), 2);
        assert_eq!(*d.get(0, 0), 2.0);
    }

    #[test]
    fn shared_edge_has_no_holes_under_rotation() {
        // fan of triangles around a center vertex, seen obliquely
        let n = 37;
        let mut vertices = vec![Vec3::zeros()];
        for k in 0..n {
            let a = k as f64 / n as f64 * std::f64::consts::TAU;
            vertices.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let triangles = (0..n).map(|k| [0, k + 1, (k + 1) % n + 1]).collect();
        let fan = TriMesh::new(vertices, triangles).unwrap();
        let pose = RigidTransform::new(UnitQuaternion::from_euler_angles(0.4, 0.2, 0.1), Vec3::new(0.0, 0.0, -3.0));
        let f = frame(64, 64, CameraPose::identity());
        let (_, ids) = render_mesh_depth(&[PosedMesh { object_id: 1, mesh: &fan, pose }], &f);
        // inside the projected disk every pixel must be covered
        let inner = fan.scaled(0.8).transformed(&pose);
        let scene = MeshScene::new(&[PosedMesh { object_id: 1, mesh: &inner, pose: RigidTransform::identity() }]);
        for y in 0..64 {
            for x in 0..64 {
                if scene.cast_pixel(&f, x, y).is_some() {
                    assert_eq!(*ids.get(x, y), 1, "hole at {x},{y}");
                }
            }
        }
    }

    #[test]
    fn bvh_matches_brute_force_and_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut meshes = Vec::new();
            for _ in 0..3 {
                let v: Vec<Vec3> = (0..20)
                    .map(|_| Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-3.0..-1.5)))
                    .collect();
                let t: Vec<[u32; 3]> = (0..30)
                    .map(|_| [rng.gen_range(0..20), rng.gen_range(0..20), rng.gen_range(0..20)])
                    .collect();
                meshes.push(TriMesh::new(v, t).unwrap());
            }
            let cam = CameraPose::from_transform(&RigidTransform::new(
                UnitQuaternion::from_euler_angles(0.05, -0.03, 0.2),
                Vec3::new(0.02, -0.01, 0.1),
            ));
            let f = frame(48, 40, cam);
            let posed: Vec<PosedMesh> = meshes
                .iter()
                .enumerate()
                .map(|(i, m)| PosedMesh { object_id: i as u32 + 1, mesh: m, pose: RigidTransform::identity() })
                .collect();
            let scene = MeshScene::new(&posed);
            let (d, ids) = scene.render(&f);
            for y in 0..40 {
                for x in 0..48 {
                    let (bd, bid) = scene.cast_pixel_brute_force(&f, x, y).unwrap_or((0.0, 0));
                    assert_eq!((*d.get(x, y), *ids.get(x, y)), (bd, bid), "pixel {x},{y}");
                }
            }
            let reversed: Vec<TriMesh> = meshes
                .iter()
                .map(|m| TriMesh { triangles: m.triangles.iter().rev().copied().collect(), ..m.clone() })
                .collect();
            let posed_rev: Vec<PosedMesh> = reversed
                .iter()
                .enumerate()
                .map(|(i, m)| PosedMesh { object_id: i as u32 + 1, mesh: m, pose: RigidTransform::identity() })
                .collect();
            let (d2, _) = render_mesh_depth(&posed_rev, &f);
            assert_eq!(d2, d);
        }
    }
}
