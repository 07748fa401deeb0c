//! Point-to-point ICP with hard distance gating and the closed-form SVD update.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LabelError, LabelProject, MeshLibrary, ObjectKind};
use crate::field::{pixel_field_depth, DensityField, RayMarchConfig};
use crate::geometry::{OrientedBox, RigidTransform, Vec3};
use crate::mesh::sample_surface;
use crate::scene::{project, SceneDescription};

const MIN_CORRESPONDENCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the RMS residual changes by less than this (meters).
    pub convergence_eps: f64,
    /// Pairs farther apart than this are ignored (meters).
    pub max_correspondence_dist: f64,
    /// Surface samples drawn from the mesh.
    pub sample_count: usize,
    pub seed: u64,
    /// Target points are kept inside the object box scaled by this factor.
    pub box_inflation: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_eps: 1e-6,
            max_correspondence_dist: 0.05,
            sample_count: 5000,
            seed: 0,
            box_inflation: 1.2,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        let bad = |m: &str| Err(LabelError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.convergence_eps >= 0.0) {
            return bad("convergence_eps must be >= 0");
        }
        if !(self.max_correspondence_dist > 0.0) {
            return bad("max_correspondence_dist must be > 0");
        }
        if self.sample_count == 0 {
            return bad("sample_count must be >= 1");
        }
        if !(self.box_inflation >= 1.0) {
            return bad("box_inflation must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// For [`icp_align`], the transform taking source onto target. For
    /// [`icp_refine`], the refined object pose.
    pub transform: RigidTransform,
    pub residual_rms: f64,
    pub iterations: usize,
    /// RMS residual before the first update and after each one.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]` (Arun et al.).
///
/// Centroids are removed, the cross-covariance is decomposed by SVD, and a
/// reflection is corrected by flipping the axis of the smallest singular value.
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3]) -> RigidTransform {
    assert_eq!(src.len(), dst.len());
    assert!(!src.is_empty());
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        // singular values are sorted descending, so column 2 is the weakest axis
        let mut v_fixed = v;
        v_fixed.column_mut(2).neg_mut();
        r = v_fixed * u.transpose();
    }
    let t = cd - r * cs;
    RigidTransform::from_matrix_parts(&r, t)
}

struct Matches {
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    rms: f64,
}

fn correspond(tree: &ImmutableKdTree<f64, 3>, target: &[Vec3], moved: &[Vec3], max_dist: f64) -> Matches {
    let max_sq = max_dist * max_dist;
    let pairs: Vec<(Vec3, Vec3, f64)> = moved
        .par_iter()
        .filter_map(|p| {
            let nn = tree
                .query(&[p.x, p.y, p.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute();
            (nn.distance <= max_sq).then(|| (*p, target[nn.item as usize], nn.distance))
        })
        .collect();
    let rms = if pairs.is_empty() {
        f64::INFINITY
    } else {
        (pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64).sqrt()
    };
    let (src, dst) = pairs.into_iter().map(|(s, d, _)| (s, d)).unzip();
    Matches { src, dst, rms }
}

/// Aligns `source` to `target` starting from `initial`.
pub fn icp_align(
    source: &[Vec3],
    target: &[Vec3],
    initial: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult, LabelError> {
    cfg.validate()?;
    if target.len() < MIN_CORRESPONDENCES || source.len() < MIN_CORRESPONDENCES {
        return Err(LabelError::InsufficientOverlap {
            found: source.len().min(target.len()),
            needed: MIN_CORRESPONDENCES,
        });
    }
    let coords: Vec<[f64; 3]> = target.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::new_from_slice(&coords)
        .map_err(|e| LabelError::InvalidConfig(format!("target cloud: {e}")))?;
    let matches_for = |t: &RigidTransform| -> Result<Matches, LabelError> {
        let moved: Vec<Vec3> = source.iter().map(|p| t.apply(p)).collect();
        let m = correspond(&tree, target, &moved, cfg.max_correspondence_dist);
        if m.src.len() < MIN_CORRESPONDENCES {
            return Err(LabelError::InsufficientOverlap {
                found: m.src.len(),
                needed: MIN_CORRESPONDENCES,
            });
        }
        Ok(m)
    };

    let mut transform = *initial;
    let mut current = matches_for(&transform)?;
    let mut history = vec![current.rms];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if current.rms == 0.0 {
            converged = true;
            break;
        }
        let step = rigid_fit(&current.src, &current.dst);
        let candidate = step.compose(&transform);
        let next = matches_for(&candidate)?;
        iterations += 1;
        let change = current.rms - next.rms;
        transform = candidate;
        current = next;
        history.push(current.rms);
        log::debug!("icp iteration {iterations}: rms {:.3e}", current.rms);
        if change.abs() < cfg.convergence_eps {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform,
        residual_rms: current.rms,
        iterations,
        history,
        converged,
    })
}

/// Field-surface points seen by any frame that fall inside `region`.
///
/// Only pixels whose rays cross the region are marched.
pub fn icp_target_cloud(
    scene: &SceneDescription,
    field: &dyn DensityField,
    region: &OrientedBox,
    march: &RayMarchConfig,
) -> Vec<Vec3> {
    scene
        .frames
        .par_iter()
        .flat_map_iter(|frame| {
            let (w, h) = (frame.width(), frame.height());
            // pixel window covering the projected corners; whole image if any is behind
            let projected: Option<Vec<(f64, f64)>> = region
                .corners()
                .iter()
                .map(|c| project(frame, c).map(|(u, v, _)| (u, v)))
                .collect();
            let (x0, x1, y0, y1) = match projected {
                Some(pts) => {
                    let lo_u = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                    let hi_u = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                    let lo_v = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                    let hi_v = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                    let clamp = |x: f64, n: usize| x.floor().clamp(0.0, n as f64) as usize;
                    (clamp(lo_u, w), clamp(hi_u + 1.0, w), clamp(lo_v, h), clamp(hi_v + 1.0, h))
                }
                None => (0, w, 0, h),
            };
            let mut points = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let (origin, dir) = frame.pixel_center_ray(x, y);
                    if region.ray_interval(&origin, &dir).is_none() {
                        continue;
                    }
                    let z = pixel_field_depth(field, frame, x, y, march);
                    if z > 0.0 {
                        let p = origin + dir * z;
                        if region.contains(&p) {
                            points.push(p);
                        }
                    }
                }
            }
            points
        })
        .collect()
}

/// Refines the pose of a mesh label against the field surface seen in all frames.
pub fn icp_refine(
    project: &LabelProject,
    id: u32,
    scene: &SceneDescription,
    field: &dyn DensityField,
    meshes: &MeshLibrary,
    march: &RayMarchConfig,
    cfg: &IcpConfig,
) -> Result<IcpResult, LabelError> {
    cfg.validate()?;
    let object = project.object(id).ok_or(LabelError::UnknownObject(id))?;
    object.expect_kind(ObjectKind::Mesh)?;
    let mesh = meshes.mesh_for(object)?;
    let region = object
        .mesh_box(&mesh)
        .ok_or(LabelError::Mesh(crate::mesh::MeshError::Empty))?
        .inflated(cfg.box_inflation);
    let target = icp_target_cloud(scene, field, &region, march);
    log::info!("icp object {id}: {} target points", target.len());
    let local = sample_surface(&mesh.scaled(object.scale), cfg.sample_count, cfg.seed)?;
    let source: Vec<Vec3> = local.iter().map(|p| object.pose.apply(p)).collect();
    let aligned = icp_align(&source, &target, &RigidTransform::identity(), cfg)?;
    Ok(IcpResult {
        transform: aligned.transform.compose(&object.pose),
        ..aligned
    })
}
