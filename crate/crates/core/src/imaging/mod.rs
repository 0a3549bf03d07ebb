//! Image containers, bilinear subpixel sampling with gradients, and the point-splat
//! rasterizer used to synthesize ground-truth sequences.
//!
//! Convention shared by every module: pixel `(row v, col u)` has its center at the
//! integer coordinate `(u, v)`; the valid sampling interior is `[0, W−1] × [0, H−1]`.

pub mod io;
mod raster;

use nalgebra::{Matrix3x2, Vector3};

use crate::error::{Error, OutOfBounds, Result};
use crate::geometry::{PixelCoord, PoseTwist};
use crate::scalar::Real;

pub use raster::{rasterize, Background, DirectionalLight, Lighting, RasterOptions};

/// Row-major `H×W×3` RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB<T: Real> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> ImageRGB<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidInput(format!("image must be at least 2x2, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch { expected: height * width * 3, got: data.len() });
        }
        if let Some(bad) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidInput(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(ImageRGB { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Image whose pixel `(u, v)` is `f(u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for v in 0..height {
            for u in 0..width {
                data.extend(f(u, v));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> Vector3<T> {
        let i = 3 * (v * self.width + u);
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn cast<U: Real>(&self) -> ImageRGB<U> {
        ImageRGB { height: self.height, width: self.width, data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    #[inline]
    pub fn contains(&self, u: &PixelCoord<T>) -> bool {
        u.u >= T::zero() && u.v >= T::zero() && u.u <= T::from_count(self.width - 1) && u.v <= T::from_count(self.height - 1)
    }
}

/// Bilinear interpolation at a subpixel location, with `∂rgb/∂(u, v)`.
///
/// The gradient is the exact derivative of the blend inside the cell that
/// contains `u`; on the last row/column the cell to the left/above is used.
#[inline]
pub fn sample_bilinear<T: Real>(image: &ImageRGB<T>, at: &PixelCoord<T>) -> Result<(Vector3<T>, Matrix3x2<T>), OutOfBounds> {
    if !image.contains(at) {
        return Err(OutOfBounds);
    }
    let x0 = at.u.floor().to_usize().unwrap_or(0).min(image.width - 2);
    let y0 = at.v.floor().to_usize().unwrap_or(0).min(image.height - 2);
    let fx = at.u - T::from_count(x0);
    let fy = at.v - T::from_count(y0);
    let one = T::one();
    let i00 = image.pixel(x0, y0);
    let i10 = image.pixel(x0 + 1, y0);
    let i01 = image.pixel(x0, y0 + 1);
    let i11 = image.pixel(x0 + 1, y0 + 1);
    let value = i00 * ((one - fx) * (one - fy)) + i10 * (fx * (one - fy)) + i01 * ((one - fx) * fy) + i11 * (fx * fy);
    let du = (i10 - i00) * (one - fy) + (i11 - i01) * fy;
    let dv = (i01 - i00) * (one - fx) + (i11 - i10) * fx;
    Ok((value, Matrix3x2::from_columns(&[du, dv])))
}

/// Binary silhouette; `true` marks pixels inside the object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl SilhouetteMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch { expected: height * width, got: data.len() });
        }
        Ok(SilhouetteMask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SilhouetteMask { height, width, data: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels inside the silhouette.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

/// Pixel-center coordinates of every silhouette pixel, row-major.
pub fn mask_to_coords<T: Real>(mask: &SilhouetteMask) -> Vec<PixelCoord<T>> {
    let mut out = Vec::with_capacity(mask.count());
    for v in 0..mask.height {
        for u in 0..mask.width {
            if mask.get(u, v) {
                out.push(PixelCoord::new(T::from_count(u), T::from_count(v)));
            }
        }
    }
    out
}

/// One observation of the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T: Real> {
    pub index: usize,
    pub image: ImageRGB<T>,
    pub mask: SilhouetteMask,
    pub gt_pose: Option<PoseTwist<T>>,
}

impl<T: Real> Frame<T> {
    pub fn new(index: usize, image: ImageRGB<T>, mask: SilhouetteMask, gt_pose: Option<PoseTwist<T>>) -> Result<Self> {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::InvalidInput(format!(
                "mask {}x{} does not match image {}x{}",
                mask.height(),
                mask.width(),
                image.height(),
                image.width()
            )));
        }
        Ok(Frame { index, image, mask, gt_pose })
    }
}
