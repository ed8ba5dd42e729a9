//! Software rasteriser producing the per-pose affine map from texture to
//! image, plus the pose and physical-effect distributions.
//!
//! Geometry is computed in `f64`; only the resulting map is converted to the
//! scalar type.

mod mesh;
mod physical;
mod pose;
mod raster;

use std::sync::Arc;

pub use mesh::{load_obj, parse_obj, Mesh, CUBE_OBJ};
pub use physical::{apply_physical_effects, sample_physical, PhysicalConfig, PhysicalParams};
pub use pose::{random_unit_quaternion, sample_pose, Pose, Pose3DConfig, RotationRange};
pub use raster::{build_coordinate_map, render_texture, rotation_matrix, CoordinateMap};

use crate::diffmath::{GraphBuilder, NodeId};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::transform::{Transform, TransformSampler};

/// Vertical field of view of the camera.
pub const FOV_Y_DEG: f64 = 45.0;

/// Texture → rendering for one sampled pose, optionally followed by
/// physical effects.
#[derive(Clone, Debug)]
pub struct RenderTransform<S> {
    pub pose: Pose,
    pub map: Arc<CoordinateMap<S>>,
    pub physical: Option<PhysicalParams>,
}

impl<S: Real> RenderTransform<S> {
    pub fn new(
        mesh: &Mesh,
        pose: Pose,
        tex_dims: (usize, usize),
        img_dims: (usize, usize),
    ) -> Result<Self> {
        let map = build_coordinate_map(mesh, &pose, tex_dims, img_dims)?;
        Ok(Self {
            pose,
            map: Arc::new(map),
            physical: None,
        })
    }
}

impl<S: Real> Transform<S> for RenderTransform<S> {
    fn output_shape(&self, _input_shape: &[usize]) -> Vec<usize> {
        let (h, w) = self.map.img_dims();
        vec![h, w, 3]
    }

    fn append(&self, g: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId> {
        let rendered = self.map.append(g, input)?;
        match &self.physical {
            Some(p) => p.append(g, rendered),
            None => Ok(rendered),
        }
    }
}

/// Distribution of renderings of a textured mesh.
#[derive(Clone, Debug)]
pub struct Dist3D {
    pub mesh: Arc<Mesh>,
    pub poses: Pose3DConfig,
    pub physical: Option<PhysicalConfig>,
    pub tex_dims: (usize, usize),
    pub img_dims: (usize, usize),
}

impl Dist3D {
    pub fn new(
        mesh: Arc<Mesh>,
        poses: Pose3DConfig,
        physical: Option<PhysicalConfig>,
        tex_dims: (usize, usize),
        img_dims: (usize, usize),
    ) -> Result<Self> {
        poses.validate()?;
        if let Some(p) = &physical {
            p.validate()?;
        }
        if tex_dims.0 == 0 || tex_dims.1 == 0 || img_dims.0 == 0 || img_dims.1 == 0 {
            return Err(Error::Config(
                "texture and image dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            mesh,
            poses,
            physical,
            tex_dims,
            img_dims,
        })
    }
}

impl<S: Real> TransformSampler<S> for Dist3D {
    type Sample = RenderTransform<S>;

    /// Samples the pose first, then the physical effects.
    fn sample(&self, rng: &mut StreamRng) -> RenderTransform<S> {
        let pose = sample_pose(&self.poses, rng);
        let mut t = RenderTransform::new(&self.mesh, pose, self.tex_dims, self.img_dims)
            .expect("dimensions validated at construction");
        t.physical = self.physical.as_ref().map(|p| sample_physical(p, rng));
        t
    }
}

#[cfg(test)]
mod tests;
