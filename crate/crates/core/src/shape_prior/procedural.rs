//! Procedural car-like shape family: a superellipsoid body, a half-superellipsoid
//! cabin and four wheels.
//!
//! Every sample is a fixed location `(part, a, b)` in a per-part parameter
//! rectangle. The locations depend only on `(n, seed)`, never on the shape
//! parameters, so the same index lands on the same surface location for every
//! member of the family. That correspondence is what makes a PCA fit well posed.
//! Locations are drawn area-weighted with respect to the mid-bounds reference
//! shape, which keeps the density approximately uniform across the family.
//!
//! Canonical frame: `x` lateral (the family is mirror-symmetric in `x`), `y` up,
//! `z` along the body length.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PointCloud, SurfaceAttributes};
use crate::error::{Error, Result};

/// Grid resolution of the per-part area table used for area-weighted sampling.
const AREA_GRID: usize = 48;

const WHEEL_HALF_WIDTH: f64 = 0.09;

/// Bounded parameters of one family member.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralShapeParams {
    pub body_length: f64,
    pub body_width: f64,
    pub body_height: f64,
    /// Superellipsoid exponent along the vertical profile (1 = round, smaller = boxier).
    pub body_taper_vertical: f64,
    /// Superellipsoid exponent along the horizontal profile.
    pub body_taper_horizontal: f64,
    /// Cabin center along `z`, as a fraction of the body half-length.
    pub cabin_offset: f64,
    pub cabin_height: f64,
    /// Cabin half-length as a fraction of the body half-length.
    pub cabin_length: f64,
    pub cabin_taper: f64,
    pub wheel_radius: f64,
}

pub const PARAM_NAMES: [&str; 10] = [
    "body_length",
    "body_width",
    "body_height",
    "body_taper_vertical",
    "body_taper_horizontal",
    "cabin_offset",
    "cabin_height",
    "cabin_length",
    "cabin_taper",
    "wheel_radius",
];

/// Default `[lo, hi]` bounds, in the order of [`PARAM_NAMES`].
pub const DEFAULT_BOUNDS: [(f64, f64); 10] = [
    (0.85, 1.15),
    (0.38, 0.52),
    (0.18, 0.30),
    (0.35, 0.9),
    (0.25, 0.8),
    (-0.35, 0.15),
    (0.12, 0.26),
    (0.35, 0.6),
    (0.4, 0.9),
    (0.13, 0.2),
];

impl ProceduralShapeParams {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.body_length,
            self.body_width,
            self.body_height,
            self.body_taper_vertical,
            self.body_taper_horizontal,
            self.cabin_offset,
            self.cabin_height,
            self.cabin_length,
            self.cabin_taper,
            self.wheel_radius,
        ]
    }

    pub fn from_array(v: [f64; 10]) -> Self {
        ProceduralShapeParams {
            body_length: v[0],
            body_width: v[1],
            body_height: v[2],
            body_taper_vertical: v[3],
            body_taper_horizontal: v[4],
            cabin_offset: v[5],
            cabin_height: v[6],
            cabin_length: v[7],
            cabin_taper: v[8],
            wheel_radius: v[9],
        }
    }

    pub fn midpoint(bounds: &[(f64, f64); 10]) -> Self {
        Self::from_array(std::array::from_fn(|i| 0.5 * (bounds[i].0 + bounds[i].1)))
    }

    /// Uniform draw inside `bounds`.
    pub fn sample<R: Rng>(bounds: &[(f64, f64); 10], rng: &mut R) -> Self {
        Self::from_array(std::array::from_fn(|i| rng.random_range(bounds[i].0..=bounds[i].1)))
    }

    pub fn validate(&self, bounds: &[(f64, f64); 10]) -> Result<()> {
        for ((name, value), (lo, hi)) in PARAM_NAMES.iter().zip(self.to_array()).zip(bounds) {
            if !(value >= *lo && value <= *hi) {
                return Err(Error::OutOfRange { name: name.to_string(), value, lo: *lo, hi: *hi });
            }
        }
        Ok(())
    }
}

/// Metadata describing the family a prior was fit to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyMetadata {
    pub param_names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    pub training_shapes: usize,
    pub training_seed: u64,
    pub sampling_seed: u64,
}

/// A sampled cloud with its per-point appearance.
#[derive(Clone, Debug)]
pub struct SampledShape {
    pub cloud: PointCloud<f64>,
    pub attributes: SurfaceAttributes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Body,
    Cabin,
    /// Right-side tread, front (0) or rear (1).
    Tread(u8),
    /// Right-side outer cap, front (0) or rear (1).
    Cap(u8),
}

const PARTS: [Part; 6] = [Part::Body, Part::Cabin, Part::Tread(0), Part::Tread(1), Part::Cap(0), Part::Cap(1)];

impl Part {
    /// Parameter rectangle `[a0, a1] × [b0, b1]`, covering the `x ≥ 0` half.
    fn domain(self) -> ((f64, f64), (f64, f64)) {
        match self {
            Part::Body => ((-FRAC_PI_2, FRAC_PI_2), (-FRAC_PI_2, FRAC_PI_2)),
            Part::Cabin => ((0.0, FRAC_PI_2), (-FRAC_PI_2, FRAC_PI_2)),
            Part::Tread(_) => ((0.0, 2.0 * PI), (-1.0, 1.0)),
            Part::Cap(_) => ((0.0, 2.0 * PI), (0.0, 1.0)),
        }
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            Part::Body => [0.78, 0.26, 0.18],
            Part::Cabin => [0.32, 0.45, 0.72],
            Part::Tread(_) | Part::Cap(_) => [0.22, 0.22, 0.24],
        }
    }
}

/// Signed power `sgn(v)|v|^e`.
#[inline]
fn spow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Superellipsoid surface point and outward normal at `(eta, omega)`.
fn superellipsoid(axes: [f64; 3], e1: f64, e2: f64, eta: f64, omega: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (ce, se) = (eta.cos(), eta.sin());
    let (cw, sw) = (omega.cos(), omega.sin());
    let p = Vector3::new(
        axes[0] * spow(ce, e1) * spow(cw, e2),
        axes[1] * spow(se, e1),
        axes[2] * spow(ce, e1) * spow(sw, e2),
    );
    let n = Vector3::new(
        spow(ce, 2.0 - e1) * spow(cw, 2.0 - e2) / axes[0],
        spow(se, 2.0 - e1) / axes[1],
        spow(ce, 2.0 - e1) * spow(sw, 2.0 - e2) / axes[2],
    );
    let len = n.norm();
    let n = if len > 0.0 { n / len } else { Vector3::new(0.0, eta.signum(), 0.0) };
    (p, n)
}

fn wheel_center(params: &ProceduralShapeParams, k: u8) -> Vector3<f64> {
    let z = 0.62 * params.body_length * if k == 0 { 1.0 } else { -1.0 };
    Vector3::new(0.86 * params.body_width, -0.8 * params.body_height, z)
}

/// Surface point and normal of `part` at parameter `(a, b)` on the `x ≥ 0` half.
fn surface_point(params: &ProceduralShapeParams, part: Part, a: f64, b: f64) -> (Vector3<f64>, Vector3<f64>) {
    match part {
        Part::Body => superellipsoid(
            [params.body_width, params.body_height, params.body_length],
            params.body_taper_vertical,
            params.body_taper_horizontal,
            a,
            b,
        ),
        Part::Cabin => {
            let (p, n) = superellipsoid(
                [0.8 * params.body_width, params.cabin_height, params.cabin_length * params.body_length],
                params.cabin_taper,
                params.cabin_taper,
                a,
                b,
            );
            (p + Vector3::new(0.0, 0.55 * params.body_height, params.cabin_offset * params.body_length), n)
        }
        Part::Tread(k) => {
            let c = wheel_center(params, k);
            let r = params.wheel_radius;
            let n = Vector3::new(0.0, a.sin(), a.cos());
            (c + Vector3::new(b * WHEEL_HALF_WIDTH, 0.0, 0.0) + n * r, n)
        }
        Part::Cap(k) => {
            let c = wheel_center(params, k);
            let r = params.wheel_radius * b;
            (c + Vector3::new(WHEEL_HALF_WIDTH, r * a.sin(), r * a.cos()), Vector3::new(1.0, 0.0, 0.0))
        }
    }
}

/// Procedural texture over the surface parameterization, values in `[0, 1]`.
fn pattern(part: Part, a: f64, b: f64) -> f64 {
    let (fa, fb) = match part {
        Part::Body => (7.0, 11.0),
        Part::Cabin => (9.0, 8.0),
        Part::Tread(_) => (12.0, 2.0),
        Part::Cap(_) => (5.0, 6.0),
    };
    let t = 0.5 + 0.3 * (fa * a + 0.7 * b).sin() * (fb * b - 0.4 * a).cos() + 0.2 * (2.3 * fa * a - 1.7 * fb * b).sin();
    t.clamp(0.0, 1.0)
}

fn albedo(part: Part, a: f64, b: f64) -> [f64; 3] {
    let base = part.base_color();
    let t = pattern(part, a, b);
    base.map(|c| (c * (0.35 + 1.1 * t)).clamp(0.0, 1.0))
}

/// Cumulative area table of one part on an `AREA_GRID²` grid.
struct AreaTable {
    part: Part,
    cells: Vec<f64>,
    total: f64,
}

impl AreaTable {
    fn new(part: Part, surface: &dyn Fn(Part, f64, f64) -> Vector3<f64>) -> Self {
        let ((a0, a1), (b0, b1)) = part.domain();
        let g = AREA_GRID;
        let at = |i: usize, j: usize| {
            surface(part, a0 + (a1 - a0) * i as f64 / g as f64, b0 + (b1 - b0) * j as f64 / g as f64)
        };
        let mut cells = Vec::with_capacity(g * g);
        let mut acc = 0.0;
        for i in 0..g {
            for j in 0..g {
                let (p00, p10, p01, p11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
                let area = 0.5 * ((p10 - p00).cross(&(p11 - p00)).norm() + (p11 - p00).cross(&(p01 - p00)).norm());
                acc += area;
                cells.push(acc);
            }
        }
        AreaTable { part, cells, total: acc }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let target = rng.random::<f64>() * self.total;
        let idx = self.cells.partition_point(|&c| c < target).min(self.cells.len() - 1);
        let (i, j) = (idx / AREA_GRID, idx % AREA_GRID);
        let ((a0, a1), (b0, b1)) = self.part.domain();
        let a = a0 + (a1 - a0) * (i as f64 + rng.random::<f64>()) / AREA_GRID as f64;
        let b = b0 + (b1 - b0) * (j as f64 + rng.random::<f64>()) / AREA_GRID as f64;
        (a, b)
    }
}

/// Splits `pairs` across parts proportionally to `weights` (largest remainder).
fn allocate(pairs: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| pairs as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, e)| (i, e - e.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let missing = pairs - counts.iter().sum::<usize>();
    for (i, _) in rem.into_iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Parameter-space sample locations shared by the whole family.
fn sample_locations(parts: &[Part], tables: &[AreaTable], n: usize, seed: u64) -> Vec<(Part, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = allocate(n / 2, &tables.iter().map(|t| t.total).collect::<Vec<_>>());
    let mut locs = Vec::with_capacity(n / 2);
    for ((part, table), count) in parts.iter().zip(tables).zip(counts) {
        for _ in 0..count {
            let (a, b) = table.draw(&mut rng);
            locs.push((*part, a, b));
        }
    }
    locs
}

/// Emits each half-space sample and its mirror image, plus one on-plane point when `n` is odd.
fn assemble(
    locs: &[(Part, f64, f64)],
    n: usize,
    surface: impl Fn(Part, f64, f64) -> (Vector3<f64>, Vector3<f64>),
    on_plane: impl Fn() -> (Vector3<f64>, Vector3<f64>, [f64; 3]),
) -> SampledShape {
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for &(part, a, b) in locs {
        let (p, nrm) = surface(part, a, b);
        let c = albedo(part, a, b);
        let mirror = |v: Vector3<f64>| Vector3::new(-v.x, v.y, v.z);
        points.push(p);
        normals.push(nrm.into());
        colors.push(c);
        points.push(mirror(p));
        normals.push(mirror(nrm).into());
        colors.push(c);
    }
    if n % 2 == 1 {
        let (p, nrm, c) = on_plane();
        points.push(p);
        normals.push(nrm.into());
        colors.push(c);
    }
    SampledShape { cloud: PointCloud::new(points), attributes: SurfaceAttributes { albedo: colors, normals } }
}

/// Samples `n` corresponded points on the family member described by `params`.
pub fn sample_procedural_shape(params: &ProceduralShapeParams, n: usize, seed: u64) -> Result<SampledShape> {
    sample_procedural_shape_in(params, &DEFAULT_BOUNDS, n, seed)
}

/// As [`sample_procedural_shape`] with explicit parameter bounds; the
/// reference shape for area weighting is the midpoint of `bounds`.
pub fn sample_procedural_shape_in(
    params: &ProceduralShapeParams,
    bounds: &[(f64, f64); 10],
    n: usize,
    seed: u64,
) -> Result<SampledShape> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    params.validate(bounds)?;
    let reference = ProceduralShapeParams::midpoint(bounds);
    let tables: Vec<AreaTable> =
        PARTS.iter().map(|&part| AreaTable::new(part, &|pt, a, b| surface_point(&reference, pt, a, b).0)).collect();
    let locs = sample_locations(&PARTS, &tables, n, seed);
    Ok(assemble(
        &locs,
        n,
        |part, a, b| surface_point(params, part, a, b),
        || {
            let (p, nrm) = surface_point(params, Part::Body, FRAC_PI_2, 0.0);
            (Vector3::new(0.0, p.y, p.z), nrm, albedo(Part::Body, FRAC_PI_2, 0.0))
        },
    ))
}

/// Samples `n` points area-weighted on a single superellipsoid centered at the origin.
pub fn sample_superellipsoid(axes: [f64; 3], e1: f64, e2: f64, n: usize, seed: u64) -> Result<SampledShape> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    if axes.iter().any(|&a| !(a > 0.0)) || !(e1 > 0.0 && e2 > 0.0) {
        return Err(Error::InvalidInput("superellipsoid axes and exponents must be positive".into()));
    }
    let surface = |_: Part, a: f64, b: f64| superellipsoid(axes, e1, e2, a, b);
    let table = AreaTable::new(Part::Body, &|pt, a, b| surface(pt, a, b).0);
    let locs = sample_locations(&[Part::Body], &[table], n, seed);
    Ok(assemble(&locs, n, surface, || (Vector3::new(0.0, axes[1], 0.0), Vector3::new(0.0, 1.0, 0.0), albedo(Part::Body, FRAC_PI_2, 0.0))))
}
