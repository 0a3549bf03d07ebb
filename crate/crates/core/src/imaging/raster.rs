use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ImageRGB, SilhouetteMask};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseTwist, DEFAULT_Z_MIN};
use crate::scalar::Real;
use crate::shape_prior::{PointCloud, SurfaceAttributes};

/// Directional light fixed in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Direction pointing from the surface toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
}

/// Lambertian lighting: `albedo · (ambient + Σ intensity · max(0, n̂·l̂))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub ambient: f64,
    pub lights: Vec<DirectionalLight>,
}

impl Lighting {
    /// Shading disabled: colors equal albedo.
    pub fn unlit() -> Self {
        Lighting { ambient: 1.0, lights: Vec::new() }
    }

    pub fn shade(&self, albedo: [f64; 3], normal: [f64; 3]) -> [f64; 3] {
        let n = Vector3::from(normal);
        let mut k = self.ambient;
        for l in &self.lights {
            let d = Vector3::from(l.direction);
            let len = d.norm();
            if len > 0.0 {
                k += l.intensity * (n.dot(&d) / len).max(0.0);
            }
        }
        albedo.map(|a| (a * k).clamp(0.0, 1.0))
    }
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting { ambient: 0.35, lights: vec![DirectionalLight { direction: [0.3, 1.0, 0.5], intensity: 0.75 }] }
    }
}

/// What the rasterizer paints where no splat lands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Constant { rgb: [f64; 3] },
    /// World-space checkerboard on the plane `y = height`; rays missing it get `sky`.
    GroundChecker { height: f64, period: f64, dark: [f64; 3], light: [f64; 3], sky: [f64; 3] },
}

impl Default for Background {
    fn default() -> Self {
        Background::GroundChecker {
            height: -0.5,
            period: 0.11,
            dark: [0.12, 0.14, 0.1],
            light: [0.85, 0.82, 0.7],
            sky: [0.55, 0.62, 0.7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterOptions {
    /// Splat radius in pixels.
    pub splat_radius: f64,
    pub lighting: Lighting,
    pub background: Background,
    /// Global scale on per-point albedo texture: 0 replaces each color by the
    /// cloud's mean albedo, 1 keeps the texture unchanged.
    pub texture_contrast: f64,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions { splat_radius: 1.5, lighting: Lighting::default(), background: Background::default(), texture_contrast: 1.0 }
    }
}

impl Background {
    fn color<T: Real>(&self, u: f64, v: f64, pose: &PoseTwist<T>, k: &CameraIntrinsics<T>) -> [f64; 3] {
        match self {
            Background::Constant { rgb } => *rgb,
            Background::GroundChecker { height, period, dark, light, sky } => {
                let tf = pose.cast::<f64>().transform();
                let k = k.cast::<f64>();
                let inv = tf.inverse();
                let origin = inv.trans;
                let dir = inv.rot.apply(&Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0));
                if dir.y.abs() < 1e-12 {
                    return *sky;
                }
                let s = (height - origin.y) / dir.y;
                if s <= 0.0 {
                    return *sky;
                }
                let p = origin + dir * s;
                let cell = (p.x / period).floor() as i64 + (p.z / period).floor() as i64;
                if cell.rem_euclid(2) == 0 {
                    *dark
                } else {
                    *light
                }
            }
        }
    }
}

/// Z-buffered point-splat rendering of a cloud with per-point albedo and normals.
///
/// A pixel is covered by a point when its center lies within `splat_radius` of
/// the point's projection; the nearest point wins, ties go to the lower index.
/// Output values are rounded to `f32` precision so 32-bit raw storage is lossless.
pub fn rasterize<T: Real>(
    cloud: &PointCloud<T>,
    attributes: &SurfaceAttributes,
    pose: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    size: (usize, usize),
    opts: &RasterOptions,
) -> Result<(ImageRGB<T>, SilhouetteMask)> {
    let (h, w) = size;
    if cloud.is_empty() {
        return Err(Error::EmptySet("rasterize needs a non-empty cloud"));
    }
    if attributes.len() != cloud.len() || attributes.normals.len() != cloud.len() {
        return Err(Error::DimensionMismatch { expected: cloud.len(), got: attributes.len() });
    }
    let n = cloud.len() as f64;
    let mean_albedo: [f64; 3] =
        std::array::from_fn(|c| attributes.albedo.iter().map(|a| a[c]).sum::<f64>() / n);
    let contrast = opts.texture_contrast;

    let tf = pose.cast::<f64>().transform();
    let kk = k.cast::<f64>();
    let r = opts.splat_radius;
    let r2 = r * r;
    let mut depth = vec![f64::INFINITY; h * w];
    let mut owner = vec![usize::MAX; h * w];
    for (i, p) in cloud.points.iter().enumerate() {
        let y = tf.apply(&p.map(|v| v.f64()));
        if !(y.z > DEFAULT_Z_MIN) {
            continue;
        }
        let pu = kk.fx * y.x / y.z + kk.cx;
        let pv = kk.fy * y.y / y.z + kk.cy;
        if !(pu.is_finite() && pv.is_finite()) {
            continue;
        }
        let u0 = (pu - r).ceil().max(0.0);
        let u1 = (pu + r).floor().min(w as f64 - 1.0);
        let v0 = (pv - r).ceil().max(0.0);
        let v1 = (pv + r).floor().min(h as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for py in v0 as usize..=v1 as usize {
            let dy = py as f64 - pv;
            for px in u0 as usize..=u1 as usize {
                let dx = px as f64 - pu;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let j = py * w + px;
                if y.z < depth[j] {
                    depth[j] = y.z;
                    owner[j] = i;
                }
            }
        }
    }

    let shaded: Vec<[f64; 3]> = attributes
        .albedo
        .iter()
        .zip(&attributes.normals)
        .map(|(a, nrm)| {
            let a: [f64; 3] = std::array::from_fn(|c| mean_albedo[c] + contrast * (a[c] - mean_albedo[c]));
            opts.lighting.shade(a, *nrm)
        })
        .collect();
    let mut mask = SilhouetteMask::empty(h, w);
    let mut data = Vec::with_capacity(h * w * 3);
    for py in 0..h {
        for px in 0..w {
            let j = py * w + px;
            let rgb = if owner[j] != usize::MAX {
                mask.set(px, py, true);
                shaded[owner[j]]
            } else {
                opts.background.color(px as f64, py as f64, pose, k)
            };
            data.extend(rgb.map(|c| T::of(c.clamp(0.0, 1.0) as f32 as f64)));
        }
    }
    Ok((ImageRGB::new(h, w, data)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, PixelCoord};
    use crate::imaging::sample_bilinear;
    use crate::shape_prior::procedural::{sample_procedural_shape, ProceduralShapeParams, DEFAULT_BOUNDS};
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(120.0, 120.0, 31.5, 31.5)
    }

    #[test]
    fn unlit_colors_equal_albedo() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.3, 0.1, 3.5)]);
        let attrs = SurfaceAttributes { albedo: vec![[0.2, 0.4, 0.6], [0.9, 0.1, 0.3]], normals: vec![[0.0, 0.0, -1.0]; 2] };
        let opts = RasterOptions {
            lighting: Lighting::unlit(),
            background: Background::Constant { rgb: [0.0, 1.0, 0.0] },
            ..Default::default()
        };
        let (img, mask) = rasterize(&cloud, &attrs, &PoseTwist::identity(), &k(), (64, 64), &opts).unwrap();
        for v in 0..64 {
            for u in 0..64 {
                let c = img.pixel(u, v);
                if mask.get(u, v) {
                    let ok = attrs.albedo.iter().any(|a| (0..3).all(|i| (c[i] - a[i] as f32 as f64).abs() == 0.0));
                    assert!(ok);
                } else {
                    assert_eq!(c, Vector3::new(0.0, 1.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn single_point_footprint_is_a_disc() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0)]);
        let attrs = SurfaceAttributes { albedo: vec![[0.5; 3]], normals: vec![[0.0, 0.0, -1.0]] };
        for r in [0.5, 1.5, 2.7] {
            let opts = RasterOptions { splat_radius: r, ..Default::default() };
            let (_, mask) = rasterize(&cloud, &attrs, &PoseTwist::identity(), &k(), (64, 64), &opts).unwrap();
            for v in 0..64 {
                for u in 0..64 {
                    let d2 = (u as f64 - 31.5).powi(2) + (v as f64 - 31.5).powi(2);
                    assert_eq!(mask.get(u, v), d2 <= r * r, "r={r} ({u},{v})");
                }
            }
        }
    }

    #[test]
    fn nearer_point_wins() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 4.0), Vector3::new(0.0, 0.0, 2.0)]);
        let attrs = SurfaceAttributes { albedo: vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], normals: vec![[0.0, 0.0, -1.0]; 2] };
        let opts = RasterOptions { lighting: Lighting::unlit(), ..Default::default() };
        let (img, _) = rasterize(&cloud, &attrs, &PoseTwist::identity(), &k(), (64, 64), &opts).unwrap();
        assert_eq!(img.pixel(32, 32), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn mask_matches_non_background_pixels_when_unlit() {
        let s = sample_procedural_shape(&ProceduralShapeParams::midpoint(&DEFAULT_BOUNDS), 800, 3).unwrap();
        let mut attrs = s.attributes.clone();
        // albedo never equals the background
        attrs.albedo.iter_mut().for_each(|a| a[1] = 0.5);
        let opts = RasterOptions {
            lighting: Lighting::unlit(),
            background: Background::Constant { rgb: [0.0, 0.0, 0.0] },
            ..Default::default()
        };
        let pose = PoseTwist::new(Vector3::new(0.3, 0.8, 0.0), Vector3::new(0.0, 0.0, 3.0));
        let (img, mask) = rasterize(&s.cloud, &attrs, &pose, &k(), (64, 64), &opts).unwrap();
        for v in 0..64 {
            for u in 0..64 {
                assert_eq!(mask.get(u, v), img.pixel(u, v) != Vector3::zeros());
            }
        }
        assert!(mask.count() > 100);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = sample_procedural_shape(&ProceduralShapeParams::midpoint(&DEFAULT_BOUNDS), 500, 4).unwrap();
        let pose = PoseTwist::new(Vector3::new(0.2, -0.5, 0.1), Vector3::new(0.0, 0.0, 3.0));
        let a = rasterize(&s.cloud, &s.attributes, &pose, &k(), (64, 64), &RasterOptions::default()).unwrap();
        let b = rasterize(&s.cloud, &s.attributes, &pose, &k(), (64, 64), &RasterOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lambertian_color_is_pose_independent_at_mutually_visible_points() {
        let s = sample_procedural_shape(&ProceduralShapeParams::midpoint(&DEFAULT_BOUNDS), 2048, 5).unwrap();
        let kk = CameraIntrinsics::new(110.0, 110.0, 63.5, 63.5);
        let p0 = PoseTwist::new(Vector3::new(0.2, 0.9, 0.0), Vector3::new(0.0, 0.0, 3.2));
        let p1 = PoseTwist::new(Vector3::new(0.2, 0.95, 0.03), Vector3::new(0.02, 0.0, 3.2));
        let opts = RasterOptions::default();
        let (i0, _) = rasterize(&s.cloud, &s.attributes, &p0, &kk, (128, 128), &opts).unwrap();
        let (i1, _) = rasterize(&s.cloud, &s.attributes, &p1, &kk, (128, 128), &opts).unwrap();
        // point is visible in a frame when its own splat owns the pixel nearest its projection
        let owns = |p: &PoseTwist<f64>, img: &ImageRGB<f64>, i: usize| -> Option<PixelCoord<f64>> {
            let uv = project(&s.cloud.points[i], p, &kk).ok()?;
            let (ru, rv) = (uv.u.round(), uv.v.round());
            if !img.contains(&uv) {
                return None;
            }
            let shaded = opts.lighting.shade(s.attributes.albedo[i], s.attributes.normals[i]);
            let c = img.pixel(ru as usize, rv as usize);
            ((0..3).all(|j| (c[j] - shaded[j] as f32 as f64).abs() == 0.0)).then_some(PixelCoord::new(ru, rv))
        };
        let mut diffs = Vec::new();
        for i in 0..s.cloud.len() {
            if let (Some(a), Some(b)) = (owns(&p0, &i0, i), owns(&p1, &i1, i)) {
                let ca = sample_bilinear(&i0, &a).unwrap().0;
                let cb = sample_bilinear(&i1, &b).unwrap().0;
                diffs.push((ca - cb).abs().max());
            }
        }
        assert!(diffs.len() > 100);
        assert!(diffs.iter().all(|&d| d == 0.0));
    }
}
