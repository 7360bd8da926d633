//! File formats: PFM depth, PGM masks, OBJ meshes, ASCII PLY clouds, and
//! CSV curves. All writers are deterministic byte-for-byte.
//!
//! Depth travels as grayscale PFM with scale `-1.0` (little-endian) and
//! `0.0` as the no-data sentinel; PFM stores rows bottom-to-top, which
//! these routines handle so callers only ever see top-down images. Masks
//! are binary PGM with 255 as foreground.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::render::{DepthMap, Mask};
use crate::render::TriangleMesh;
use crate::Vec3;

fn io_err(path: &Path, err: std::io::Error) -> Error {
    Error::domain(format!("{}: {err}", path.display()))
}

/// Writes a depth map as grayscale PFM (little-endian, bottom-up rows).
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let (w, h) = (depth.width(), depth.height());
    let mut buf = Vec::with_capacity(32 + w * h * 4);
    buf.extend_from_slice(format!("Pf\n{w} {h}\n-1.0\n").as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            let v = depth.get(x, y).unwrap_or(0.0) as f32;
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a grayscale PFM depth map written by [`write_pfm`].
pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let parse = || -> Option<(usize, usize, f64, usize)> {
        // Header: three whitespace-separated tokens ("Pf", "W H", scale).
        let mut pos = 0;
        let mut token = |bytes: &[u8]| -> Option<String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token(&bytes)?;
        if magic != "Pf" {
            return None;
        }
        let w: usize = token(&bytes)?.parse().ok()?;
        let h: usize = token(&bytes)?.parse().ok()?;
        let scale: f64 = token(&bytes)?.parse().ok()?;
        Some((w, h, scale, pos + 1)) // single whitespace after the scale
    };
    let Some((w, h, scale, data_start)) = parse() else {
        return Err(Error::domain(format!(
            "{}: not a grayscale PFM file",
            path.display()
        )));
    };
    if scale >= 0.0 {
        return Err(Error::domain(format!(
            "{}: big-endian PFM is not supported",
            path.display()
        )));
    }
    let expected = w * h * 4;
    let data = &bytes[data_start..];
    if data.len() != expected {
        return Err(Error::domain(format!(
            "{}: payload is {} bytes, expected {expected}",
            path.display(),
            data.len()
        )));
    }
    let mut depth = DepthMap::new(w, h);
    for row in 0..h {
        let y = h - 1 - row; // stored bottom-up
        for x in 0..w {
            let off = (row * w + x) * 4;
            let v = f32::from_le_bytes([data[off], data[off + 1], data[off + 2], data[off + 3]]);
            if v.is_finite() && v > 0.0 {
                depth.set(x, y, v as f64);
            }
        }
    }
    Ok(depth)
}

/// Writes a mask as binary PGM, 255 = foreground.
pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let mut buf = Vec::with_capacity(32 + w * h);
    buf.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for y in 0..h {
        for x in 0..w {
            buf.push(if mask.get(x, y) { 255 } else { 0 });
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a binary PGM mask; any value above 127 counts as foreground.
pub fn read_pgm(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header_err = || Error::domain(format!("{}: not a binary PGM file", path.display()));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start {
            return Err(header_err());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(header_err());
    }
    let w: usize = token()?.parse().map_err(|_| header_err())?;
    let h: usize = token()?.parse().map_err(|_| header_err())?;
    let maxval: usize = token()?.parse().map_err(|_| header_err())?;
    if maxval != 255 {
        return Err(header_err());
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(Error::domain(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            data.len(),
            w * h
        )));
    }
    let mut mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, data[y * w + x] > 127);
        }
    }
    Ok(mask)
}

/// Formats a coordinate with enough digits to round-trip exactly.
fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("nan") {
        s.push_str(".0");
    }
    s
}

/// Writes a triangle mesh as Wavefront OBJ (1-based face indices).
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = String::new();
    for p in mesh.vertices().iter() {
        out.push_str(&format!(
            "v {} {} {}\n",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z)
        ));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads an OBJ written by [`write_obj`] (v/f lines only).
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let bad = |what: &str| {
            Error::domain(format!(
                "{}:{}: malformed {what} line",
                path.display(),
                lineno + 1
            ))
        };
        match parts.next() {
            Some("v") => {
                let mut coord = || -> Result<f64> {
                    parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("vertex"))
                };
                vertices.push(Vec3::new(coord()?, coord()?, coord()?));
            }
            Some("f") => {
                let mut index = || -> Result<usize> {
                    let i: usize = parts
                        .next()
                        .and_then(|t| t.split('/').next())
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("face"))?;
                    if i == 0 {
                        return Err(bad("face"));
                    }
                    Ok(i - 1)
                };
                triangles.push([index()?, index()?, index()?]);
            }
            _ => {} // comments, empty lines, unsupported records
        }
    }
    TriangleMesh::new(PointCloud::new(vertices)?, triangles)
}

/// Writes a point cloud as ASCII PLY.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.iter() {
        out.push_str(&format!(
            "{} {} {}\n",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z)
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads an ASCII PLY point cloud written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let bad = |what: &str| Error::domain(format!("{}: {what}", path.display()));
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut count: Option<usize> = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = rest.trim().parse().ok();
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let mut parts = line.split_whitespace();
        let mut coord = || -> Result<f64> {
            parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("malformed vertex line"))
        };
        points.push(Vec3::new(coord()?, coord()?, coord()?));
    }
    if points.len() != count {
        return Err(bad("fewer vertices than declared"));
    }
    PointCloud::new(points)
}

/// Writes `(threshold, ap)` rows as CSV with a header.
pub fn write_curve_csv(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("threshold,ap\n");
    for (t, ap) in rows {
        out.push_str(&format!("{t},{ap}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes per-detection objective traces: one row per step.
pub fn write_trace_csv(path: &Path, traces: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("detection,step,objective\n");
    for (id, trace) in traces {
        for (step, value) in trace.iter().enumerate() {
            out.push_str(&format!("{id},{step},{value}\n"));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes a string atomically enough for tests: plain overwrite.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}
