//! Incremental texturing: every texel keeps a running average of the colors
//! seen by each view, weighted by the viewing cosine raised to `alpha`.
//!
//! Each face owns an `r × r` block of the atlas. Its chart is the right
//! triangle with legs of `r` pixels; texels are the pixel centers inside
//! (or on the hypotenuse of) that triangle, so pixel `(s, t)` of the block
//! samples barycentric coordinates `((s + ½)/r, (t + ½)/r)`.

use crate::geom::{CameraView, GrayImage};
use crate::mesh::TriangleMesh;
use crate::prelude::*;
use crate::raster::{is_visible, rasterize_view};

pub const DEFAULT_RESOLUTION: usize = 8;
pub const DEFAULT_ALPHA: i32 = 8;
/// Depth tolerance of the visibility test, in meters.
pub const VISIBILITY_TOLERANCE: f64 = 1e-3;
/// Color given to texels no view has seen.
pub const NEUTRAL_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlendState {
    pub color: f64,
    pub weight: f64,
    pub count: u32,
}

impl BlendState {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Viewing cosine between the face normal and the direction from the point
/// to the camera, clamped at 0 for back-facing views.
pub fn view_weight(point: &Point3, normal: &Vec3, camera: &Point3) -> Result<f64> {
    let d = point - camera;
    let len = d.norm();
    if !(len > 0.0) {
        return Err(Error::DegenerateRay);
    }
    Ok((-d.dot(normal) / len).clamp(0.0, 1.0))
}

/// Folds color `c` seen with weight `w` into the running average.
pub fn accumulate(state: BlendState, c: f64, w: f64, alpha: i32) -> BlendState {
    let wa = w.powi(alpha);
    if !(wa > 0.0) {
        return state;
    }
    if state.count == 0 {
        return BlendState { color: c, weight: wa, count: 1 };
    }
    let weight = state.weight + wa;
    BlendState { color: (state.weight * state.color + wa * c) / weight, weight, count: state.count + 1 }
}

pub fn texels_per_face(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Block pixel `(s, t)` of every texel of a face, in storage order.
pub fn texel_pixels(r: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(texels_per_face(r));
    for t in 0..r {
        for s in 0..r - t {
            out.push((s, t));
        }
    }
    out
}

/// Barycentric coordinates sampled by block pixel `(s, t)`.
pub fn texel_barycentric(r: usize, s: usize, t: usize) -> [f64; 3] {
    let b = (s as f64 + 0.5) / r as f64;
    let c = (t as f64 + 0.5) / r as f64;
    [1.0 - b - c, b, c]
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TextureAtlas {
    pub resolution: usize,
    pub alpha: i32,
    pub faces: usize,
    /// Face-major texel states.
    pub states: Vec<BlendState>,
    pub passes: usize,
}

impl TextureAtlas {
    pub fn new(mesh: &TriangleMesh, resolution: usize, alpha: i32) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidParameter("texture resolution must be positive"));
        }
        if alpha < 1 {
            return Err(Error::InvalidParameter("blending exponent must be at least 1"));
        }
        let faces = mesh.faces().len();
        Ok(Self { resolution, alpha, faces, states: vec![BlendState::default(); faces * texels_per_face(resolution)], passes: 0 })
    }

    pub fn face_states(&self, face: usize) -> &[BlendState] {
        let n = texels_per_face(self.resolution);
        &self.states[face * n..(face + 1) * n]
    }

    /// Surface position of every texel of `face`.
    pub fn texel_positions(&self, mesh: &TriangleMesh, face: usize) -> Vec<Point3> {
        let [a, b, c] = mesh.face_points(face);
        texel_pixels(self.resolution)
            .into_iter()
            .map(|(s, t)| {
                let w = texel_barycentric(self.resolution, s, t);
                Point3::from(a.coords * w[0] + b.coords * w[1] + c.coords * w[2])
            })
            .collect()
    }

    /// Blends one view into every visible, unmasked, front-facing texel and
    /// returns how many texels it touched.
    pub fn texture_pass(&mut self, mesh: &TriangleMesh, view: &CameraView) -> Result<usize> {
        if mesh.faces().len() != self.faces {
            return Err(Error::LengthMismatch { left: mesh.faces().len(), right: self.faces });
        }
        let map = rasterize_view(mesh, view);
        let center = view.center();
        let n = texels_per_face(self.resolution);
        let mut touched = 0;
        for face in 0..self.faces {
            let Ok(normal) = mesh.face_normal(face) else { continue };
            for (k, x) in self.texel_positions(mesh, face).into_iter().enumerate() {
                let Ok(w) = view_weight(&x, &normal, &center) else { continue };
                if w <= 0.0 {
                    continue;
                }
                let Some(px) = view.project(&x) else { continue };
                if view.moving_mask.get_signed(px.x.round() as i64, px.y.round() as i64) {
                    continue;
                }
                let Some(c) = view.image.bilinear(px.x, px.y) else { continue };
                if !is_visible(&map, mesh, view, &x, face, VISIBILITY_TOLERANCE) {
                    continue;
                }
                let s = &mut self.states[face * n + k];
                let next = accumulate(*s, c, w, self.alpha);
                if next != *s {
                    *s = next;
                    touched += 1;
                }
            }
        }
        self.passes += 1;
        Ok(touched)
    }

    /// Packs the per-face blocks into a power-of-two image.
    pub fn finalize(&self) -> PackedAtlas {
        let r = self.resolution;
        let (width, height) = atlas_size(self.faces, r);
        let cols = (width / r).max(1);
        let mut image = GrayImage::new(width, height, NEUTRAL_GRAY);
        let pixels = texel_pixels(r);
        let n = texels_per_face(r);
        let mut flagged = Vec::with_capacity(self.states.len());
        let mut uvs = Vec::with_capacity(self.faces);
        for face in 0..self.faces {
            let (bx, by) = ((face % cols) * r, (face / cols) * r);
            let mut block = vec![NEUTRAL_GRAY; r * r];
            for (k, &(s, t)) in pixels.iter().enumerate() {
                let st = self.states[face * n + k];
                flagged.push(st.is_empty());
                if !st.is_empty() {
                    block[t * r + s] = st.color;
                }
            }
            // Mirror across the hypotenuse so bilinear lookups near the
            // chart edge do not bleed in gray.
            for t in 0..r {
                for s in 0..r {
                    let v = if s + t < r { block[t * r + s] } else { block[(r - 1 - s) * r + (r - 1 - t)] };
                    image.set(bx + s, by + t, v);
                }
            }
            let uv = |x: f64, y: f64| [x / width as f64, 1.0 - y / height as f64];
            let (x0, y0) = (bx as f64, by as f64);
            uvs.push([uv(x0, y0), uv(x0 + r as f64, y0), uv(x0, y0 + r as f64)]);
        }
        PackedAtlas { image, uvs, flagged }
    }

    /// Per-vertex colors from the corner texels of the incident faces;
    /// neutral gray where none was seen.
    pub fn vertex_colors(&self, mesh: &TriangleMesh) -> Vec<f64> {
        let r = self.resolution;
        let pixels = texel_pixels(r);
        let corner = |s: usize, t: usize| pixels.iter().position(|&p| p == (s, t)).expect("corner texel exists");
        let corners = [corner(0, 0), corner(r - 1, 0), corner(0, r - 1)];
        let n = texels_per_face(r);
        let mut sum = vec![0.0; mesh.vertices().len()];
        let mut count = vec![0usize; mesh.vertices().len()];
        for (f, face) in mesh.faces().iter().enumerate().take(self.faces) {
            for k in 0..3 {
                let st = self.states[f * n + corners[k]];
                if !st.is_empty() {
                    sum[face[k]] += st.color;
                    count[face[k]] += 1;
                }
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { NEUTRAL_GRAY }).collect()
    }
}

/// Smallest power-of-two `width × height` (by area, then squarest) with
/// room for `faces` blocks of `r × r`.
pub fn atlas_size(faces: usize, r: usize) -> (usize, usize) {
    let faces = faces.max(1);
    let mut best: Option<(usize, usize)> = None;
    let mut w = r.next_power_of_two();
    loop {
        let cols = w / r;
        let rows = faces.div_ceil(cols);
        let h = (rows * r).next_power_of_two();
        let better = match best {
            None => true,
            Some((bw, bh)) => w * h < bw * bh || (w * h == bw * bh && w.abs_diff(h) < bw.abs_diff(bh)),
        };
        if better {
            best = Some((w, h));
        }
        if rows == 1 {
            break;
        }
        w *= 2;
    }
    best.expect("at least one candidate size")
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PackedAtlas {
    pub image: GrayImage,
    /// Texture coordinates of each face's three corners (OBJ convention,
    /// v pointing up).
    pub uvs: Vec<[[f64; 2]; 3]>,
    /// Texel-order flags of texels no view has seen.
    pub flagged: Vec<bool>,
}

impl PackedAtlas {
    pub fn flagged_fraction(&self) -> f64 {
        if self.flagged.is_empty() {
            return 0.0;
        }
        self.flagged.iter().filter(|f| **f).count() as f64 / self.flagged.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let p = Point3::origin();
        let n = Vec3::z();
        assert!((view_weight(&p, &n, &Point3::new(0.0, 0.0, 3.0)).unwrap() - 1.0).abs() < 1e-12);
        let c = Point3::new(60f64.to_radians().sin(), 0.0, 60f64.to_radians().cos()) * 2.0;
        assert!((view_weight(&p, &n, &c).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(view_weight(&p, &n, &Point3::new(0.0, 0.0, -1.0)).unwrap(), 0.0);
        assert_eq!(view_weight(&p, &n, &p), Err(Error::DegenerateRay));
    }

    #[test]
    fn blending_examples() {
        let s = accumulate(accumulate(BlendState::default(), 0.4, 1.0, 8), 0.8, 1.0, 8);
        assert!((s.color - 0.6).abs() < 1e-12);
        let s = accumulate(accumulate(BlendState::default(), 0.4, 1.0, 8), 0.8, 0.5, 8);
        assert!((s.color - (0.4 + 0.8 / 256.0) / (1.0 + 1.0 / 256.0)).abs() < 1e-12);
        assert_eq!(accumulate(s, 0.1, 0.0, 8), s);
        let first = accumulate(BlendState::default(), 0.3, 0.7, 8);
        assert_eq!(first.color, 0.3);
        assert_eq!(first.count, 1);
    }

    #[test]
    fn lattice_is_inside_the_face() {
        for r in 1..10 {
            let px = texel_pixels(r);
            assert_eq!(px.len(), texels_per_face(r));
            for (s, t) in px {
                let b = texel_barycentric(r, s, t);
                assert!(b.iter().all(|&x| x >= -1e-12));
                assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn atlas_packing_bounds() {
        for faces in [1, 2, 3, 7, 100, 1000, 4097] {
            for r in [3, 8, 12] {
                let (w, h) = atlas_size(faces, r);
                assert!(w.is_power_of_two() && h.is_power_of_two());
                assert!((w / r) * (h / r) >= faces);
                let needed = faces * r * r;
                assert!(w * h <= 4 * needed, "faces {faces} r {r}: {w}x{h}");
            }
        }
    }

    #[test]
    fn unseen_atlas_is_all_flagged() {
        let mesh = crate::mesh::unit_cube();
        let atlas = TextureAtlas::new(&mesh, 4, 8).unwrap();
        let packed = atlas.finalize();
        assert_eq!(packed.flagged_fraction(), 1.0);
        assert!(packed.image.data().iter().all(|&v| v == NEUTRAL_GRAY));
        assert_eq!(packed.uvs.len(), 12);
    }
}
