use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::ply::{read_ply, write_ply};
use super::prior::prior_fingerprint;
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, geodesic_rotation_error, CameraIntrinsics, PoseTwist, RigidTransform, RotationMatrix, DEFAULT_Z_MIN};
use crate::imaging::io::{read_pgm, read_raw, write_pgm, write_png, write_raw, NpyDtype};
use crate::imaging::{rasterize, Frame, RasterOptions};
use crate::persist::{read_json, write_json};
use crate::shape_prior::{LinearShapePrior, PointCloud, ShapePrior, StyleVector};

/// Ground truth and camera metadata stored in `gt.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
    /// Absolute world-to-camera pose of every frame.
    pub poses: Vec<PoseTwist<f64>>,
    /// Reference-to-frame motions `Δp_l`, `l = 1..L`.
    pub dps: Vec<PoseTwist<f64>>,
    pub style: Vec<f64>,
    pub texture_contrast: f64,
    pub distance: f64,
    pub orbit_axis: [f64; 3],
    pub prior_fingerprint: String,
    /// Rejection-sampling attempts used.
    pub attempts: usize,
}

/// One synthetic sequence with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub meta: SceneMeta,
    pub frames: Vec<Frame<f64>>,
    pub gt_cloud: PointCloud<f64>,
    pub config: ExperimentConfig,
}

impl SceneBundle {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        let [fx, fy, cx, cy] = self.meta.intrinsics;
        CameraIntrinsics::new(fx, fy, cx, cy)
    }

    pub fn gt_style(&self) -> StyleVector<f64> {
        StyleVector(self.meta.style.clone())
    }

    pub fn gt_p0(&self) -> PoseTwist<f64> {
        self.meta.poses[0]
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// The first `l` frames, sharing the reference.
    pub fn truncated(&self, l: usize) -> Result<SceneBundle> {
        if l < 2 || l > self.frames.len() {
            return Err(Error::InvalidInput(format!("cannot truncate {} frames to {l}", self.frames.len())));
        }
        let mut out = self.clone();
        out.frames.truncate(l);
        out.meta.poses.truncate(l);
        out.meta.dps.truncate(l - 1);
        out.config.scene.num_frames = l;
        Ok(out)
    }

    /// Checks the stored ground truth against the prior it claims to come from.
    pub fn validate(&self, prior: &LinearShapePrior<f64>) -> Result<()> {
        let m = &self.meta;
        let l = self.frames.len();
        let bad = |msg: String| Err(Error::InvalidInput(format!("scene {}: {msg}", m.id)));
        if l < 2 || m.poses.len() != l || m.dps.len() != l - 1 {
            return bad(format!("{l} frames, {} poses, {} relative motions", m.poses.len(), m.dps.len()));
        }
        if m.prior_fingerprint != prior_fingerprint(prior) {
            return bad("was generated with a different prior".into());
        }
        if prior.generate(&self.gt_style())? != self.gt_cloud {
            return bad("ground-truth cloud differs from generate(style)".into());
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i || f.image.height() != m.height || f.image.width() != m.width {
                return bad(format!("frame {i} has the wrong index or size"));
            }
        }
        let step = self.config.scene.rotation_step_deg;
        let r0 = m.poses[0].rotation();
        for (i, p) in m.poses.iter().enumerate() {
            let angle = geodesic_rotation_error(&r0, &p.rotation());
            if (angle - step * i as f64).abs() > 1e-4 {
                return bad(format!("frame {i} is {angle}° from the reference, expected {}°", step * i as f64));
            }
        }
        Ok(())
    }
}

/// World-to-camera pose of a camera at `eye` looking at `target` with world `+y` up
/// (image `v` grows downward).
pub fn look_at(target: &Vector3<f64>, eye: &Vector3<f64>) -> RigidTransform<f64> {
    let z = (target - eye).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let y = -(up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    RigidTransform { rot: RotationMatrix(r), trans: -(r * eye) }
}

/// Uniform random unit vector.
pub fn random_axis<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Camera poses orbiting `center` about `axis`, `step` radians apart.
fn orbit(first: &RigidTransform<f64>, center: &Vector3<f64>, axis: &Vector3<f64>, step: f64, l: usize) -> Vec<RigidTransform<f64>> {
    (0..l)
        .map(|i| {
            // camera moves by Q about the center, so world points appear moved by Qᵀ
            let qt = exp_so3(&(axis * (-step * i as f64)));
            let to_center = RigidTransform { rot: qt, trans: center - qt.apply(center) };
            to_center.then(first)
        })
        .collect()
}

/// Whether every point projects at least `margin` pixels inside the image.
fn in_frame(cloud: &PointCloud<f64>, tf: &RigidTransform<f64>, k: &CameraIntrinsics<f64>, (h, w): (usize, usize), margin: f64) -> bool {
    cloud.points.iter().all(|p| {
        let y = tf.apply(p);
        match k.project_camera_point(&y, DEFAULT_Z_MIN) {
            Ok(uv) => uv.u >= margin && uv.v >= margin && uv.u <= w as f64 - 1.0 - margin && uv.v <= h as f64 - 1.0 - margin,
            Err(_) => false,
        }
    })
}

/// Draws the ground-truth style: per mode `N(0, σ_k)` clipped to `±clip·σ_k`.
pub fn sample_style<R: Rng>(prior: &LinearShapePrior<f64>, clip: f64, rng: &mut R) -> StyleVector<f64> {
    StyleVector(
        prior
            .scales
            .iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z.clamp(-clip, clip)
            })
            .collect(),
    )
}

/// Deterministic generator for scene `id`.
pub fn scene_rng(cfg: &ExperimentConfig, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.scenes);
    rng.set_stream(id as u64);
    rng
}

/// Synthesizes scene `id`: style, reference camera (rejection-sampled on
/// coverage and framing), orbit frames, and their renderings.
pub fn synth_scene(cfg: &ExperimentConfig, prior: &LinearShapePrior<f64>, id: usize) -> Result<SceneBundle> {
    let sc = &cfg.scene;
    let mut rng = scene_rng(cfg, id);
    let attributes = prior.attributes.clone().ok_or_else(|| Error::InvalidInput("prior has no surface attributes".into()))?;
    let style = sample_style(prior, sc.style_clip, &mut rng);
    let cloud = prior.generate(&style)?;
    let center = cloud.centroid();
    let contrast = if sc.texture_contrast.0 < sc.texture_contrast.1 { rng.random_range(sc.texture_contrast.0..=sc.texture_contrast.1) } else { sc.texture_contrast.0 };
    let raster = RasterOptions { texture_contrast: contrast, ..sc.raster.clone() };
    let size = (sc.height, sc.width);
    let k = CameraIntrinsics::new(sc.focal, sc.focal, (sc.width as f64 - 1.0) / 2.0, (sc.height as f64 - 1.0) / 2.0);
    let step = sc.rotation_step_deg.to_radians();
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..hi) } else { lo };
    for attempt in 1..=sc.max_attempts {
        let distance = uniform(&mut rng, sc.distance);
        let elevation = uniform(&mut rng, sc.elevation_deg).to_radians();
        let azimuth = rng.random_range(0.0..2.0 * PI);
        let axis = random_axis(&mut rng);
        let eye = center + Vector3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos()) * distance;
        let first = look_at(&center, &eye);
        let poses = orbit(&first, &center, &axis, step, sc.num_frames);
        if !poses.iter().all(|tf| in_frame(&cloud, tf, &k, size, sc.border_margin)) {
            continue;
        }
        let twists: Vec<PoseTwist<f64>> = poses.iter().map(PoseTwist::from_transform).collect();
        let (image0, mask0) = rasterize(&cloud, &attributes, &twists[0], &k, size, &raster)?;
        let coverage = mask0.coverage();
        if coverage < sc.coverage.0 || coverage > sc.coverage.1 {
            continue;
        }
        let mut frames = vec![Frame::new(0, image0, mask0, Some(twists[0]))?];
        for (i, pose) in twists.iter().enumerate().skip(1) {
            let (image, mask) = rasterize(&cloud, &attributes, pose, &k, size, &raster)?;
            frames.push(Frame::new(i, image, mask, Some(*pose))?);
        }
        let inv0 = poses[0].inverse();
        let dps = poses[1..].iter().map(|tf| PoseTwist::from_transform(&inv0.then(tf))).collect();
        let meta = SceneMeta {
            id,
            seed: cfg.seeds.scenes,
            height: sc.height,
            width: sc.width,
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            poses: twists,
            dps,
            style: style.0.clone(),
            texture_contrast: contrast,
            distance,
            orbit_axis: axis.into(),
            prior_fingerprint: prior_fingerprint(prior),
            attempts: attempt,
        };
        return Ok(SceneBundle { meta, frames, gt_cloud: cloud, config: cfg.clone() });
    }
    Err(Error::SamplingExhausted(sc.max_attempts))
}

pub fn scene_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("scene_{id:04}"))
}

/// Writes `frame_<l>.{png,raw,pgm}`, `gt.json`, `cloud.ply` and `config.json` into `dir`.
pub fn save_scene(dir: &Path, scene: &SceneBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in &scene.frames {
        write_png(&dir.join(format!("frame_{:02}.png", f.index)), &f.image)?;
        write_raw(&dir.join(format!("frame_{:02}.raw", f.index)), &f.image, NpyDtype::F4)?;
        write_pgm(&dir.join(format!("frame_{:02}.pgm", f.index)), &f.mask)?;
    }
    write_ply(&dir.join("cloud.ply"), &scene.gt_cloud, None)?;
    write_json(&dir.join("gt.json"), &scene.meta)?;
    write_json(&dir.join("config.json"), &scene.config)
}

pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let meta: SceneMeta = read_json(&dir.join("gt.json"))?;
    let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
    config.validate().map_err(|e| Error::format(dir.join("config.json"), e.to_string()))?;
    let (gt_cloud, _) = read_ply(&dir.join("cloud.ply"))?;
    let mut frames = Vec::with_capacity(meta.poses.len());
    for (i, pose) in meta.poses.iter().enumerate() {
        let image = read_raw(&dir.join(format!("frame_{i:02}.raw")))?;
        let mask = read_pgm(&dir.join(format!("frame_{i:02}.pgm")))?;
        frames.push(Frame::new(i, image, mask, Some(*pose)).map_err(|e| Error::format(dir, e.to_string()))?);
    }
    Ok(SceneBundle { meta, frames, gt_cloud, config })
}

/// Perturbs a pose by rotating the camera-frame scene about `pivot` (camera
/// coordinates) and shifting it by `shift`.
pub fn perturb_about(pose: &PoseTwist<f64>, pivot: &Vector3<f64>, rotation: &Vector3<f64>, shift: &Vector3<f64>) -> PoseTwist<f64> {
    let q = exp_so3(rotation);
    let delta = RigidTransform { rot: q, trans: pivot - q.apply(pivot) + shift };
    PoseTwist::from_transform(&pose.transform().then(&delta))
}

/// Half-normal draw `|N(0, σ)|`.
pub fn half_normal<R: Rng>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng).abs()
    } else {
        0.0
    }
}
