//! Latent shape codes, class embedding sets, and the linear-blend decoder.
//!
//! Each object class owns a set of latent codes embedded alongside basis
//! point clouds sampled on a shared uv-grid. Decoding blends the basis
//! clouds pointwise with inverse-square-distance weights, so a code equal
//! to a basis code reproduces that basis cloud exactly and decoding stays
//! continuous everywhere else.
//!
//! Codes produced by optimization can drift arbitrarily far from the
//! embedding. [`shape_regularizer`] penalizes that drift: a pairwise
//! dot-product test decides whether the code is still inside the span of
//! the embedding, and outside codes pay the norm of the rejection of the
//! nearest code direction against the second-nearest. The test is a
//! deliberate heuristic: it can accept points slightly outside the true
//! convex hull, but it is cheap, exact on members, and errs toward not
//! penalizing plausible codes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Default latent dimension.
pub const LATENT_DIM: usize = 32;

/// Weight floor preventing division by zero for coincident codes.
pub const BLEND_WEIGHT_FLOOR: f64 = 1e-12;

/// Latent shape code: a fixed-dimension vector of finite reals.
///
/// Production codes are [`LATENT_DIM`]-dimensional; the dimension is
/// carried per value so small hand-checkable codes work in tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode {
    #[serde(deserialize_with = "deserialize_finite")]
    values: Vec<f64>,
}

fn deserialize_finite<'de, D>(deserializer: D) -> std::result::Result<Vec<f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let values = Vec::<f64>::deserialize(deserializer)?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(serde::de::Error::custom(format!(
            "non-finite latent entry {v}"
        )));
    }
    Ok(values)
}

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("latent code must have at least one entry"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "latent code",
            });
        }
        Ok(LatentCode { values })
    }

    pub fn zeros(dim: usize) -> Self {
        LatentCode {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean distance to another code of the same dimension.
    pub fn distance(&self, other: &LatentCode) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_dim(&self, other: &LatentCode) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    fn sub(&self, other: &LatentCode) -> Vec<f64> {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Componentwise sum of a base code and an offset.
pub fn apply_offset(base: &LatentCode, offset: &LatentCode) -> Result<LatentCode> {
    base.check_dim(offset)?;
    LatentCode::new(
        base.values
            .iter()
            .zip(&offset.values)
            .map(|(a, b)| a + b)
            .collect(),
    )
}

/// Componentwise arithmetic mean of a non-empty code slice.
pub fn mean_latent(codes: &[LatentCode]) -> Result<LatentCode> {
    let Some(first) = codes.first() else {
        return Err(Error::domain("mean of an empty code set"));
    };
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for code in codes {
        if code.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: code.dim(),
            });
        }
        for (s, v) in sum.iter_mut().zip(code.values()) {
            *s += v;
        }
    }
    let n = codes.len() as f64;
    LatentCode::new(sum.into_iter().map(|s| s / n).collect())
}

/// The latent codes of one object class.
///
/// At least two distinct codes are required so the two-nearest query is
/// always well defined.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    class_id: String,
    codes: Vec<LatentCode>,
}

impl EmbeddingSet {
    pub fn new(class_id: impl Into<String>, codes: Vec<LatentCode>) -> Result<Self> {
        if codes.len() < 2 {
            return Err(Error::domain("embedding set needs at least two codes"));
        }
        let dim = codes[0].dim();
        if codes.iter().any(|c| c.dim() != dim) {
            return Err(Error::domain("embedding codes must share one dimension"));
        }
        if !codes.iter().skip(1).any(|c| *c != codes[0]) {
            return Err(Error::domain(
                "embedding set needs at least two distinct codes",
            ));
        }
        Ok(EmbeddingSet {
            class_id: class_id.into(),
            codes,
        })
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn codes(&self) -> &[LatentCode] {
        &self.codes
    }

    pub fn dim(&self) -> usize {
        self.codes[0].dim()
    }

    /// Per-class mean code.
    pub fn mean(&self) -> LatentCode {
        mean_latent(&self.codes).expect("embedding set is non-empty")
    }
}

/// Pairwise dot-product membership test for the span of an embedding set.
///
/// Returns `0.0` when any pair `i != j` satisfies
/// `(e - s_i) . (e - s_j) <= 0` (the code sits between two members, or on
/// one), else `1.0`. The expression is symmetric, so unordered pairs are
/// enumerated. This is a sufficient-but-inexact hull test kept
/// deliberately in its simple pairwise form.
pub fn convexity_indicator(e: &LatentCode, set: &EmbeddingSet) -> Result<f64> {
    if e.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: e.dim(),
        });
    }
    let diffs: Vec<Vec<f64>> = set.codes().iter().map(|s| e.sub(s)).collect();
    for i in 0..diffs.len() {
        for j in (i + 1)..diffs.len() {
            let dot: f64 = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum();
            if dot <= 0.0 {
                return Ok(0.0);
            }
        }
    }
    Ok(1.0)
}

/// The two codes of `set` nearest to `e`, nearest first.
///
/// Distance ties are broken toward the lower index, so the result is
/// deterministic for symmetric configurations.
pub fn two_nearest<'a>(
    e: &LatentCode,
    set: &'a EmbeddingSet,
) -> Result<(&'a LatentCode, &'a LatentCode)> {
    if e.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: e.dim(),
        });
    }
    let mut order: Vec<usize> = (0..set.codes().len()).collect();
    let dist: Vec<f64> = set
        .codes()
        .iter()
        .map(|s| e.distance(s).expect("dimension checked"))
        .collect();
    order.sort_by(|a, b| dist[*a].partial_cmp(&dist[*b]).unwrap().then(a.cmp(b)));
    Ok((&set.codes()[order[0]], &set.codes()[order[1]]))
}

/// Component of `(s1 - e)` orthogonal to `(s2 - e)`:
/// `(s1 - e) - [(s1 - e).(s2 - e) / |s2 - e|^2] (s2 - e)`.
///
/// Errors with a degenerate-projection message when `s2 == e`.
pub fn vector_rejection(e: &LatentCode, s1: &LatentCode, s2: &LatentCode) -> Result<LatentCode> {
    e.check_dim(s1)?;
    e.check_dim(s2)?;
    let a = s1.sub(e);
    let b = s2.sub(e);
    let b_norm2: f64 = b.iter().map(|v| v * v).sum();
    if b_norm2 == 0.0 {
        return Err(Error::domain(
            "degenerate projection: second code coincides with the query",
        ));
    }
    let t: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / b_norm2;
    LatentCode::new(a.iter().zip(&b).map(|(x, y)| x - t * y).collect())
}

/// Out-of-span penalty: zero while the membership test accepts `e`,
/// otherwise the norm of the rejection of the nearest code direction
/// against the second nearest.
pub fn shape_regularizer(e: &LatentCode, set: &EmbeddingSet) -> Result<f64> {
    if convexity_indicator(e, set)? == 0.0 {
        return Ok(0.0);
    }
    // The indicator is 1, so e coincides with no member and the
    // projection below is well defined.
    let (s1, s2) = two_nearest(e, set)?;
    Ok(vector_rejection(e, s1, s2)?.norm())
}

/// Uniform 2D sample grid over `[0, 1]^2`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UVGrid {
    rows: usize,
    cols: usize,
}

impl UVGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::domain("uv grid needs at least 2 rows and 2 cols"));
        }
        Ok(UVGrid { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// `(u, v)` samples in row-major order; `u` varies along columns.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.count());
        for r in 0..self.rows {
            let v = r as f64 / (self.rows - 1) as f64;
            for c in 0..self.cols {
                let u = c as f64 / (self.cols - 1) as f64;
                out.push((u, v));
            }
        }
        out
    }
}

/// Decoder from latent code to canonical point cloud by blending basis
/// clouds that share a uv-grid correspondence.
///
/// Basis clouds live in the canonical unit cube `[-0.5, 0.5]^3` and all
/// have exactly `grid.count()` points in row-major uv order.
#[derive(Clone, Debug)]
pub struct LinearBlendDecoder {
    class_id: String,
    grid: UVGrid,
    codes: Vec<LatentCode>,
    clouds: Vec<PointCloud>,
}

impl LinearBlendDecoder {
    pub fn new(
        class_id: impl Into<String>,
        grid: UVGrid,
        codes: Vec<LatentCode>,
        clouds: Vec<PointCloud>,
    ) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::domain("decoder needs at least one basis entry"));
        }
        if codes.len() != clouds.len() {
            return Err(Error::domain(format!(
                "{} basis codes but {} basis clouds",
                codes.len(),
                clouds.len()
            )));
        }
        let dim = codes[0].dim();
        for c in &codes {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        for i in 0..codes.len() {
            for j in (i + 1)..codes.len() {
                if codes[i] == codes[j] {
                    return Err(Error::domain("basis codes must be pairwise distinct"));
                }
            }
        }
        for cloud in &clouds {
            if cloud.len() != grid.count() {
                return Err(Error::domain(format!(
                    "basis cloud has {} points, grid expects {}",
                    cloud.len(),
                    grid.count()
                )));
            }
            for p in cloud.iter() {
                if p.x.abs() > 0.5 + 1e-9 || p.y.abs() > 0.5 + 1e-9 || p.z.abs() > 0.5 + 1e-9 {
                    return Err(Error::domain(
                        "basis cloud leaves the canonical unit cube",
                    ));
                }
            }
        }
        Ok(LinearBlendDecoder {
            class_id: class_id.into(),
            grid,
            codes,
            clouds,
        })
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn grid(&self) -> UVGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.codes[0].dim()
    }

    pub fn basis_count(&self) -> usize {
        self.codes.len()
    }

    pub fn basis_codes(&self) -> &[LatentCode] {
        &self.codes
    }

    pub fn basis_clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    /// Embedding set view of the basis codes (requires two distinct codes).
    pub fn embedding_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::new(self.class_id.clone(), self.codes.clone())
    }

    /// Blends the basis clouds with normalized inverse-square-distance
    /// weights. A code equal to a basis code returns that cloud exactly.
    pub fn decode(&self, e: &LatentCode) -> Result<PointCloud> {
        if e.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: e.dim(),
            });
        }
        for (code, cloud) in self.codes.iter().zip(&self.clouds) {
            if code == e {
                return Ok(cloud.clone());
            }
        }
        let mut weights: Vec<f64> = self
            .codes
            .iter()
            .map(|c| {
                let d = e.distance(c).expect("dimension checked");
                1.0 / (d * d + BLEND_WEIGHT_FLOOR)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let n = self.grid.count();
        let mut points = vec![crate::Vec3::zeros(); n];
        for (w, cloud) in weights.iter().zip(&self.clouds) {
            for (acc, p) in points.iter_mut().zip(cloud.iter()) {
                *acc += *w * p;
            }
        }
        PointCloud::new(points)
    }
}
