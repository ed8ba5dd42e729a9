use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Triangle mesh with one texture coordinate per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    uvs: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<[f64; 3]>,
        uvs: Vec<[f64; 2]>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let obj = |reason: String| Error::Obj { line: 0, reason };
        if vertices.len() != uvs.len() {
            return Err(obj(format!(
                "{} positions but {} texture coordinates",
                vertices.len(),
                uvs.len()
            )));
        }
        if faces.is_empty() {
            return Err(obj("mesh has no faces".into()));
        }
        if let Some(f) = faces
            .iter()
            .find(|f| f.iter().any(|&i| i >= vertices.len()))
        {
            return Err(obj(format!(
                "face {f:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        if let Some(uv) = uvs
            .iter()
            .find(|uv| uv.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(obj(format!("texture coordinate {uv:?} outside [0, 1]")));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(obj("non-finite vertex position".into()));
        }
        Ok(Self {
            vertices,
            uvs,
            faces,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Recentres the bounding box on the origin and scales so the farthest
    /// vertex lies on the unit sphere.
    pub fn normalized(mut self) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let centre: [f64; 3] = std::array::from_fn(|k| (lo[k] + hi[k]) / 2.0);
        let radius = self
            .vertices
            .iter()
            .map(|v| {
                (0..3)
                    .map(|k| (v[k] - centre[k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        let inv = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        for v in &mut self.vertices {
            for k in 0..3 {
                v[k] = (v[k] - centre[k]) * inv;
            }
        }
        self
    }

    /// Square in the `z = 0` plane that exactly fills a square view from
    /// `camera_distance`, with `u` along +x and `v` along +y.
    pub fn screen_aligned_quad(camera_distance: f64) -> Self {
        let h = camera_distance * (super::FOV_Y_DEG.to_radians() / 2.0).tan();
        Self::new(
            vec![[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .expect("valid quad")
    }

    /// Axis-aligned cube of half-size `1/√3` (corners on the unit sphere);
    /// every face carries the whole texture, upright when viewed from
    /// outside with +y (or −z, for the top and bottom faces) as up.
    pub fn cube() -> Self {
        parse_obj(CUBE_OBJ)
            .expect("built-in cube parses")
            .normalized()
    }
}

/// Unit cube as twelve textured triangles.
pub const CUBE_OBJ: &str = include_str!("cube.obj");

fn parse_index(tok: &str, len: usize, line: usize, what: &str) -> Result<usize> {
    let bad = |reason: String| Error::Obj { line, reason };
    let i: i64 = tok
        .parse()
        .map_err(|_| bad(format!("malformed {what} index `{tok}`")))?;
    let resolved = match i {
        0 => return Err(bad(format!("{what} index 0 (indices are 1-based)"))),
        i if i > 0 => i as usize - 1,
        i => len
            .checked_sub(i.unsigned_abs() as usize)
            .ok_or_else(|| bad(format!("{what} index {i} out of range")))?,
    };
    if resolved >= len {
        return Err(bad(format!(
            "{what} index {i} out of range ({len} defined)"
        )));
    }
    Ok(resolved)
}

/// Parses the `v` / `vt` / `f` subset of Wavefront OBJ. Polygons are
/// fan-triangulated; every face corner needs a texture index. Other
/// statements are ignored. The mesh is not normalised.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    // Distinct (position, texcoord) pairs become mesh vertices.
    let mut corners: Vec<(usize, usize)> = Vec::new();
    let mut lookup = std::collections::HashMap::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let bad = |reason: String| Error::Obj { line, reason };
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        let Some(kind) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        let floats = |want: usize| -> Result<Vec<f64>> {
            if rest.len() < want {
                return Err(bad(format!("`{kind}` needs {want} numbers")));
            }
            rest[..want]
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| bad(format!("bad number `{t}`")))
                })
                .collect()
        };
        match kind {
            "v" => {
                let v = floats(3)?;
                positions.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = floats(2)?;
                texcoords.push([v[0], v[1]]);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(bad("face needs at least three corners".into()));
                }
                let mut ids = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut parts = corner.split('/');
                    let v =
                        parse_index(parts.next().unwrap_or(""), positions.len(), line, "vertex")?;
                    let t = match parts.next() {
                        Some(t) if !t.is_empty() => {
                            parse_index(t, texcoords.len(), line, "texture")?
                        }
                        _ => {
                            return Err(bad(format!(
                                "face corner `{corner}` lacks a texture index"
                            )))
                        }
                    };
                    let id = *lookup.entry((v, t)).or_insert_with(|| {
                        corners.push((v, t));
                        corners.len() - 1
                    });
                    ids.push(id);
                }
                for k in 1..ids.len() - 1 {
                    faces.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let vertices = corners.iter().map(|&(v, _)| positions[v]).collect();
    let uvs = corners.iter().map(|&(_, t)| texcoords[t]).collect();
    Mesh::new(vertices, uvs, faces)
}

/// Reads an OBJ file and normalises it to the unit sphere.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_obj(&text)?.normalized())
}
