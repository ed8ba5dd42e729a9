use std::sync::Arc;

use super::mesh::Mesh;
use super::pose::Pose;
use super::FOV_Y_DEG;
use crate::diffmath::{CsrMatrix, GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Vertices closer to the camera plane than this are not rasterised.
const NEAR: f64 = 1e-3;
/// Texel positions this close to a texel centre snap onto it.
const SNAP: f64 = 1e-9;

/// The affine map `x ↦ Mx + b` from a `[Ht, Wt, 3]` texture to a
/// `[Hi, Wi, 3]` rendering for one pose. Row `r` of `M` belongs to pixel `r`
/// in row-major order and holds bilinear texel weights; `b` is the
/// background colour on uncovered pixels and zero elsewhere.
#[derive(Clone, Debug)]
pub struct CoordinateMap<S> {
    matrix: Arc<CsrMatrix<S>>,
    background: Arc<Tensor<S>>,
    tex_dims: (usize, usize),
    img_dims: (usize, usize),
}

impl<S: Real> CoordinateMap<S> {
    pub fn matrix(&self) -> &CsrMatrix<S> {
        &self.matrix
    }

    /// `b`, shaped `[Hi, Wi, 3]`.
    pub fn background(&self) -> &Tensor<S> {
        &self.background
    }

    pub fn tex_dims(&self) -> (usize, usize) {
        self.tex_dims
    }

    pub fn img_dims(&self) -> (usize, usize) {
        self.img_dims
    }

    /// Texel weights of pixel `(row, col)`; empty when it shows background.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<(usize, S)> {
        self.matrix.row(row * self.img_dims.1 + col).collect()
    }

    pub fn is_covered(&self, row: usize, col: usize) -> bool {
        !self.matrix.row_is_empty(row * self.img_dims.1 + col)
    }

    fn check_texture(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.tex_dims.0, self.tex_dims.1, 3] {
            return Err(Error::Shape(format!(
                "coordinate map expects a {:?}x3 texture, got {shape:?}",
                self.tex_dims
            )));
        }
        Ok(())
    }

    /// Appends `M·texture + b`.
    pub fn append(&self, g: &mut GraphBuilder<S>, texture: NodeId) -> Result<NodeId> {
        self.check_texture(g.shape(texture))?;
        let out = [self.img_dims.0, self.img_dims.1, 3];
        let mx = g.sparse_matvec(texture, self.matrix.clone(), out)?;
        let b = g.constant(self.background.clone());
        Ok(g.add(mx, b)?)
    }

    /// `M·x` alone, without the background term.
    pub fn apply_linear(&self, texture: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_texture(texture.shape())?;
        let mut out = vec![S::zero(); self.img_dims.0 * self.img_dims.1 * 3];
        self.matrix.matmul_interleaved(texture.data(), 3, &mut out);
        Ok(Tensor::new([self.img_dims.0, self.img_dims.1, 3], out)?)
    }
}

/// `Mx + b`.
pub fn render_texture<S: Real>(map: &CoordinateMap<S>, texture: &Tensor<S>) -> Result<Tensor<S>> {
    let mut out = map.apply_linear(texture)?;
    for (o, &b) in out.data_mut().iter_mut().zip(map.background.data()) {
        *o += b;
    }
    Ok(out)
}

/// Row-major rotation matrix of the unit quaternion `[w, x, y, z]`.
pub fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Screen-space vertex: pixel coordinates, reciprocal depth, and
/// texture coordinates pre-divided by depth.
#[derive(Clone, Copy)]
struct ScreenVertex {
    col: f64,
    row: f64,
    inv_z: f64,
    u_over_z: f64,
    v_over_z: f64,
}

/// Bilinear texel weights at `(u, v)` with clamp-to-edge addressing.
/// `u` runs left to right, `v` bottom to top.
fn texel_weights<S: Real>(u: f64, v: f64, tex: (usize, usize)) -> Vec<(usize, S)> {
    let (ht, wt) = tex;
    let axis = |p: f64, n: usize| -> (usize, usize, f64) {
        let p = p.clamp(0.0, (n - 1) as f64);
        let mut i0 = p.floor();
        let mut f = p - i0;
        if f < SNAP {
            f = 0.0;
        } else if 1.0 - f < SNAP {
            i0 += 1.0;
            f = 0.0;
        }
        let i0 = (i0 as usize).min(n - 1);
        (i0, (i0 + 1).min(n - 1), f)
    };
    let (c0, c1, fx) = axis(u * wt as f64 - 0.5, wt);
    let (r0, r1, fy) = axis((1.0 - v) * ht as f64 - 0.5, ht);
    let mut out: Vec<(usize, S)> = Vec::with_capacity(4);
    for (r, wy) in [(r0, 1.0 - fy), (r1, fy)] {
        for (c, wx) in [(c0, 1.0 - fx), (c1, fx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let idx = r * wt + c;
            match out.iter_mut().find(|(i, _)| *i == idx) {
                Some(e) => e.1 += S::from_f64_lossy(w),
                None => out.push((idx, S::from_f64_lossy(w))),
            }
        }
    }
    out
}

/// Rasterises `mesh` under `pose`: perspective camera on the +z axis at the
/// pose's distance looking at the origin, vertical field of view
/// [`FOV_Y_DEG`], object rotated then shifted in x/y. Depth-tested on
/// interpolated reciprocal depth with perspective-correct texture
/// coordinates; pixels are sampled at their centres.
pub fn build_coordinate_map<S: Real>(
    mesh: &Mesh,
    pose: &Pose,
    tex_dims: (usize, usize),
    img_dims: (usize, usize),
) -> Result<CoordinateMap<S>> {
    if tex_dims.0 == 0 || tex_dims.1 == 0 || img_dims.0 == 0 || img_dims.1 == 0 {
        return Err(Error::Shape(
            "texture and image dimensions must be positive".into(),
        ));
    }
    let (hi, wi) = img_dims;
    let focal = 1.0 / (FOV_Y_DEG.to_radians() / 2.0).tan();
    let aspect = wi as f64 / hi as f64;
    let rot = rotation_matrix(pose.rotation);
    let (tx, ty) = pose.xy_translation;

    let screen: Vec<Option<ScreenVertex>> = mesh
        .vertices()
        .iter()
        .zip(mesh.uvs())
        .map(|(p, uv)| {
            let r: [f64; 3] = std::array::from_fn(|k| (0..3).map(|j| rot[k][j] * p[j]).sum());
            let (x, y) = (r[0] + tx, r[1] + ty);
            let depth = pose.camera_distance - r[2];
            if depth < NEAR {
                return None;
            }
            let ndc_x = focal * x / (depth * aspect);
            let ndc_y = focal * y / depth;
            Some(ScreenVertex {
                col: (ndc_x + 1.0) / 2.0 * wi as f64 - 0.5,
                row: (1.0 - ndc_y) / 2.0 * hi as f64 - 0.5,
                inv_z: 1.0 / depth,
                u_over_z: uv[0] / depth,
                v_over_z: uv[1] / depth,
            })
        })
        .collect();

    let mut depth_buf = vec![f64::NEG_INFINITY; hi * wi];
    let mut uv_buf: Vec<Option<(f64, f64)>> = vec![None; hi * wi];
    for face in mesh.faces() {
        let (Some(a), Some(b), Some(c)) = (screen[face[0]], screen[face[1]], screen[face[2]])
        else {
            continue;
        };
        let area = (b.col - a.col) * (c.row - a.row) - (b.row - a.row) * (c.col - a.col);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_c = a.col.min(b.col).min(c.col).ceil().max(0.0) as usize;
        let max_c = a.col.max(b.col).max(c.col).floor().min(wi as f64 - 1.0);
        let min_r = a.row.min(b.row).min(c.row).ceil().max(0.0) as usize;
        let max_r = a.row.max(b.row).max(c.row).floor().min(hi as f64 - 1.0);
        if max_c < 0.0 || max_r < 0.0 {
            continue;
        }
        let edge = |p: &ScreenVertex, q: &ScreenVertex, x: f64, y: f64| {
            (q.col - p.col) * (y - p.row) - (q.row - p.row) * (x - p.col)
        };
        for r in min_r..=max_r as usize {
            for col in min_c..=max_c as usize {
                let (x, y) = (col as f64, r as f64);
                let l0 = edge(&b, &c, x, y) / area;
                let l1 = edge(&c, &a, x, y) / area;
                let l2 = edge(&a, &b, x, y) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let inv_z = l0 * a.inv_z + l1 * b.inv_z + l2 * c.inv_z;
                let idx = r * wi + col;
                if inv_z <= depth_buf[idx] {
                    continue;
                }
                depth_buf[idx] = inv_z;
                let u = (l0 * a.u_over_z + l1 * b.u_over_z + l2 * c.u_over_z) / inv_z;
                let v = (l0 * a.v_over_z + l1 * b.v_over_z + l2 * c.v_over_z) / inv_z;
                uv_buf[idx] = Some((u, v));
            }
        }
    }

    let mut rows = Vec::with_capacity(hi * wi);
    let mut background = Vec::with_capacity(hi * wi * 3);
    for uv in &uv_buf {
        match uv {
            Some((u, v)) => {
                rows.push(texel_weights::<S>(*u, *v, tex_dims));
                background.extend([S::zero(); 3]);
            }
            None => {
                rows.push(Vec::new());
                background.extend(pose.background.map(S::from_f64_lossy));
            }
        }
    }
    Ok(CoordinateMap {
        matrix: Arc::new(CsrMatrix::from_rows(tex_dims.0 * tex_dims.1, &rows)),
        background: Arc::new(Tensor::new([hi, wi, 3], background)?),
        tex_dims,
        img_dims,
    })
}
