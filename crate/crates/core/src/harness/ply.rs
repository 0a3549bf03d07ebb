//! ASCII PLY point clouds with optional normals and colors.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::persist::{read_bytes, write_atomic};
use crate::shape_prior::{PointCloud, SurfaceAttributes};

pub fn encode_ply(cloud: &PointCloud<f64>, attributes: Option<&SurfaceAttributes>) -> Result<String> {
    if let Some(a) = attributes {
        if a.len() != cloud.len() || a.normals.len() != cloud.len() {
            return Err(Error::DimensionMismatch { expected: cloud.len(), got: a.len() });
        }
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if attributes.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        out.push_str("property double red\nproperty double green\nproperty double blue\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        // `{:?}` prints the shortest representation that parses back exactly
        write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
        if let Some(a) = attributes {
            let [nx, ny, nz] = a.normals[i];
            let [r, g, b] = a.albedo[i];
            write!(out, " {nx:?} {ny:?} {nz:?} {r:?} {g:?} {b:?}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ply(path: &Path, cloud: &PointCloud<f64>, attributes: Option<&SurfaceAttributes>) -> Result<()> {
    write_atomic(path, encode_ply(cloud, attributes)?.as_bytes())
}

/// Reads the vertex positions (and normals/colors when all six are present) of an ASCII PLY.
pub fn read_ply(path: &Path) -> Result<(PointCloud<f64>, Option<SurfaceAttributes>)> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(path, "only ASCII PLY is supported"))?;
    decode_ply(text).map_err(|msg| Error::format(path, msg))
}

pub fn decode_ply(text: &str) -> std::result::Result<(PointCloud<f64>, Option<SurfaceAttributes>), String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing `ply` magic".into());
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or("header is not terminated")?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format!("unsupported format `{other}`")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| format!("bad vertex count `{n}`"))?);
                }
            }
            ["property", "list", ..] if in_vertex => return Err("list properties on vertices are not supported".into()),
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(format!("unexpected header line `{line}`")),
        }
    }
    let n = count.ok_or("no vertex element")?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let extra: Option<Vec<usize>> = ["nx", "ny", "nz", "red", "green", "blue"].iter().map(|p| col(p)).collect();
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::new();
    let mut albedo = Vec::new();
    for i in 0..n {
        let line = lines.next().ok_or_else(|| format!("expected {n} vertices, found {i}"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| format!("vertex {i}: bad number `{w}`")))
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(format!("vertex {i}: expected {} values, got {}", props.len(), vals.len()));
        }
        points.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        if let Some(e) = &extra {
            normals.push([vals[e[0]], vals[e[1]], vals[e[2]]]);
            albedo.push([vals[e[3]], vals[e[4]], vals[e[5]]]);
        }
    }
    let attributes = extra.map(|_| SurfaceAttributes { albedo, normals });
    Ok((PointCloud::new(points), attributes))
}
