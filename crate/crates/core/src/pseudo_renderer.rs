//! Point visibility by projection onto an up-scaled grid with per-cell
//! nearest-depth pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseTwist, DEFAULT_Z_MIN};
use crate::scalar::Real;
use crate::shape_prior::PointCloud;

/// Indices of the points that survive the pseudo-renderer from `pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VisibleSet<T: Real> {
    /// Sorted ascending, unique.
    pub indices: Vec<usize>,
    pub pose: PoseTwist<T>,
    pub upscale: f64,
    pub height: usize,
    pub width: usize,
}

impl<T: Real> VisibleSet<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Grid cell of a point, or `None` when it is behind the camera or outside `[0, W)×[0, H)`.
#[inline]
fn cell_of<T: Real>(
    x: &nalgebra::Vector3<T>,
    pose: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    (h, w): (usize, usize),
    upscale: T,
) -> Option<(T, usize)> {
    let y = pose.apply(x);
    let uv = k.project_camera_point(&y, T::of(DEFAULT_Z_MIN)).ok()?;
    if !(uv.u >= T::zero() && uv.u < T::from_count(w) && uv.v >= T::zero() && uv.v < T::from_count(h)) {
        return None;
    }
    let gw = (T::from_count(w) * upscale).ceil().to_usize()?;
    let gh = (T::from_count(h) * upscale).ceil().to_usize()?;
    let cu = (uv.u * upscale).floor().to_usize()?.min(gw - 1);
    let cv = (uv.v * upscale).floor().to_usize()?.min(gh - 1);
    Some((y.z, cv * gw + cu))
}

/// Selects, for every occupied cell of the `(U·H)×(U·W)` grid, the point with
/// the smallest camera depth (ties to the lowest index).
///
/// `upscale` may be fractional, in which case one cell spans `1/U` pixels.
pub fn visible_subset<T: Real>(
    cloud: &PointCloud<T>,
    pose: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    size: (usize, usize),
    upscale: f64,
) -> Result<VisibleSet<T>> {
    if !(upscale > 0.0 && upscale.is_finite()) {
        return Err(Error::InvalidInput(format!("upscale must be positive, got {upscale}")));
    }
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let u = T::of(upscale);
    let mut hits: Vec<(usize, T, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, x)| cell_of(x, pose, k, size, u).map(|(z, c)| (c, z, i)))
        .collect();
    hits.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()).then(a.2.cmp(&b.2)));
    let mut indices: Vec<usize> = Vec::new();
    let mut last = usize::MAX;
    for (cell, _, i) in hits {
        if cell != last {
            indices.push(i);
            last = cell;
        }
    }
    indices.sort_unstable();
    Ok(VisibleSet { indices, pose: *pose, upscale, height: size.0, width: size.1 })
}

/// Re-checks the structural invariants of a visible set against its source cloud.
pub fn validate_visible_set<T: Real>(set: &VisibleSet<T>, cloud: &PointCloud<T>, k: &CameraIntrinsics<T>) -> Result<()> {
    let size = (set.height, set.width);
    if set.indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("visible indices are not strictly ascending".into()));
    }
    if set.indices.len() > cloud.len() {
        return Err(Error::InvalidInput("more visible points than cloud points".into()));
    }
    let mut cells = std::collections::HashSet::new();
    for &i in &set.indices {
        let x = cloud.points.get(i).ok_or_else(|| Error::InvalidInput(format!("index {i} out of range")))?;
        let (_, cell) = cell_of(x, &set.pose, k, size, T::of(set.upscale))
            .ok_or_else(|| Error::InvalidInput(format!("point {i} is behind the camera or outside the image")))?;
        if !cells.insert(cell) {
            return Err(Error::InvalidInput(format!("point {i} shares a grid cell with another visible point")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(40.0, 40.0, 15.5, 15.5)
    }

    #[test]
    fn nearer_point_occludes() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)]);
        let vs = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 5.0).unwrap();
        assert_eq!(vs.indices, vec![1]);
    }

    #[test]
    fn behind_camera_and_outside_are_dropped() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, -1.0)]);
        assert!(visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 5.0).unwrap().is_empty());
        // u = 40·1/1 + 15.5 = 55.5 > 32
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 0.0, 1.0)]);
        assert!(visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 1.0).unwrap().is_empty());
    }

    #[test]
    fn exact_ties_go_to_the_lowest_index() {
        let p = Vector3::new(0.1, 0.1, 2.0);
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 3.0), p, p, p]);
        let vs = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 1.0).unwrap();
        assert_eq!(vs.indices, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_upscale() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 1.0)]);
        assert!(visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 0.0).is_err());
        assert!(visible_subset(&cloud, &PoseTwist::identity(), &k(), (0, 32), 1.0).is_err());
    }

    #[test]
    fn validator_catches_violations() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0), Vector3::new(5.0, 0.0, 1.0)]);
        let mut vs = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 2.0).unwrap();
        validate_visible_set(&vs, &cloud, &k()).unwrap();
        vs.indices = vec![0, 1];
        assert!(validate_visible_set(&vs, &cloud, &k()).is_err());
        vs.indices = vec![2];
        assert!(validate_visible_set(&vs, &cloud, &k()).is_err());
        vs.indices = vec![1, 1];
        assert!(validate_visible_set(&vs, &cloud, &k()).is_err());
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = PointCloud::new(
            (0..300).map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(1.5..2.5))).collect(),
        );
        let a = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 3.0).unwrap();
        let b = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f32_matches_f64_on_well_separated_points() {
        let cloud = PointCloud::new((0..10).map(|i| Vector3::new(0.05 * i as f64 - 0.2, 0.0, 2.0 + 0.1 * i as f64)).collect());
        let a = visible_subset(&cloud, &PoseTwist::identity(), &k(), (32, 32), 1.0).unwrap();
        let b = visible_subset(&cloud.cast::<f32>(), &PoseTwist::identity(), &k().cast(), (32, 32), 1.0).unwrap();
        assert_eq!(a.indices, b.indices);
    }
}
