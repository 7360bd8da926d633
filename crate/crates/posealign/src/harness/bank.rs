//! Built-in decoder bank: six object classes with procedurally generated
//! basis shapes.
//!
//! Every basis cloud lives on a shared uv grid inside the canonical unit
//! cube, so the decoder can blend them pointwise. Lathed classes (bottle,
//! bowl, can, mug) sweep a radius profile around the canonical z axis;
//! the camera is a rounded box with a lens bump and the laptop a hinged
//! pair of plates. The rotationally symmetric classes carry an `Axis`
//! symmetry flag so evaluation quotients spin about z.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::metrics::Symmetry;
use crate::shapespace::{LatentCode, LinearBlendDecoder, UVGrid};
use crate::Vec3;

/// Latent dimension shared by every class in the bank (and fixed by the
/// prediction file schema).
pub const LATENT_DIM: usize = 32;

/// Grid resolution of the built-in basis clouds.
const BANK_ROWS: usize = 24;
const BANK_COLS: usize = 25; // one duplicated seam column for lathes

/// One class of the bank: its decoder and symmetry flag.
#[derive(Clone, Debug)]
pub struct ClassEntry {
    pub decoder: LinearBlendDecoder,
    pub symmetry: Symmetry,
}

/// The six built-in classes keyed by id, in sorted order.
#[derive(Clone, Debug)]
pub struct ClassBank {
    classes: BTreeMap<String, ClassEntry>,
}

impl ClassBank {
    /// Builds the full six-class bank. Deterministic: no RNG involved.
    pub fn builtin() -> Result<Self> {
        let mut classes = BTreeMap::new();
        let z_axis = Symmetry::Axis([0.0, 0.0, 1.0]);
        classes.insert(
            "bottle".to_string(),
            ClassEntry {
                decoder: lathe_class("bottle", &[bottle_profile(0.0), bottle_profile(1.0)])?,
                symmetry: z_axis,
            },
        );
        classes.insert(
            "bowl".to_string(),
            ClassEntry {
                decoder: lathe_class("bowl", &[bowl_profile(0.0), bowl_profile(1.0)])?,
                symmetry: z_axis,
            },
        );
        classes.insert(
            "can".to_string(),
            ClassEntry {
                decoder: lathe_class("can", &[can_profile(0.0), can_profile(1.0)])?,
                symmetry: z_axis,
            },
        );
        classes.insert(
            "mug".to_string(),
            ClassEntry {
                decoder: mug_class()?,
                symmetry: Symmetry::None,
            },
        );
        classes.insert(
            "camera".to_string(),
            ClassEntry {
                decoder: camera_class()?,
                symmetry: Symmetry::None,
            },
        );
        classes.insert(
            "laptop".to_string(),
            ClassEntry {
                decoder: laptop_class()?,
                symmetry: Symmetry::None,
            },
        );
        Ok(ClassBank { classes })
    }

    pub fn get(&self, class_id: &str) -> Result<&ClassEntry> {
        self.classes
            .get(class_id)
            .ok_or_else(|| Error::domain(format!("unknown class '{class_id}'")))
    }

    pub fn class_ids(&self) -> Vec<&str> {
        self.classes.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ClassEntry)> {
        self.classes.iter()
    }

    /// True when the class has a rotational symmetry axis, in which case
    /// sampled extents should keep `w == h` so the symmetry is metric,
    /// not just canonical.
    pub fn is_symmetric(&self, class_id: &str) -> Result<bool> {
        Ok(!matches!(self.get(class_id)?.symmetry, Symmetry::None))
    }
}

/// Basis latent code `b` of `count`: axis-aligned unit vectors in the
/// 32-dimensional latent space, scaled to keep them well separated.
fn basis_code(b: usize) -> LatentCode {
    let mut v = vec![0.0; LATENT_DIM];
    v[b] = 1.0;
    LatentCode::new(v).expect("static basis code")
}

/// Clamp a point into the canonical cube against small numeric spill.
fn clamp_unit(p: Vec3) -> Vec3 {
    Vec3::new(
        p.x.clamp(-0.5, 0.5),
        p.y.clamp(-0.5, 0.5),
        p.z.clamp(-0.5, 0.5),
    )
}

/// Surface of revolution about canonical z from a radius profile.
///
/// Rows sweep the profile bottom to top, columns sweep the full angle
/// with the first column duplicated at the end, so triangulating the
/// grid closes the ring geometrically while keeping a grid topology.
fn lathe_cloud(grid: &UVGrid, profile: impl Fn(f64) -> f64) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(grid.count());
    for r in 0..grid.rows() {
        let t = r as f64 / (grid.rows() - 1) as f64;
        let radius = profile(t).max(0.0);
        for c in 0..grid.cols() {
            // cols - 1 distinct angles; the last column repeats angle 0.
            let theta = 2.0 * std::f64::consts::PI * (c % (grid.cols() - 1)) as f64
                / (grid.cols() - 1) as f64;
            points.push(clamp_unit(Vec3::new(
                radius * theta.cos(),
                radius * theta.sin(),
                t - 0.5,
            )));
        }
    }
    PointCloud::new(points)
}

/// Piecewise-linear interpolation through `(t, r)` knots.
fn interp(knots: Vec<(f64, f64)>) -> impl Fn(f64) -> f64 {
    move |t: f64| {
        let mut prev = knots[0];
        for &k in &knots[1..] {
            if t <= k.0 {
                let span = k.0 - prev.0;
                let a = if span > 0.0 { (t - prev.0) / span } else { 0.0 };
                return prev.1 + a * (k.1 - prev.1);
            }
            prev = k;
        }
        knots[knots.len() - 1].1
    }
}

fn lathe_class(class_id: &str, profiles: &[Vec<(f64, f64)>]) -> Result<LinearBlendDecoder> {
    let grid = UVGrid::new(BANK_ROWS, BANK_COLS)?;
    let clouds = profiles
        .iter()
        .map(|knots| lathe_cloud(&grid, interp(knots.clone())))
        .collect::<Result<Vec<_>>>()?;
    let codes = (0..profiles.len()).map(basis_code).collect();
    LinearBlendDecoder::new(class_id, grid, codes, clouds)
}

/// Bottle: closed bottom, wide body, shoulder, narrow neck. `morph` in
/// [0, 1] slides between a squat and a slender variant.
fn bottle_profile(morph: f64) -> Vec<(f64, f64)> {
    let body = 0.48 - 0.10 * morph;
    let neck = 0.16 - 0.04 * morph;
    vec![
        (0.0, 0.0),
        (0.04, body),
        (0.55 + 0.10 * morph, body),
        (0.75, neck + 0.06),
        (0.92, neck),
        (1.0, neck * 0.85),
    ]
}

/// Bowl: closed bottom opening into a wide rim.
fn bowl_profile(morph: f64) -> Vec<(f64, f64)> {
    let rim = 0.5 - 0.06 * morph;
    vec![
        (0.0, 0.0),
        (0.08, 0.18 + 0.10 * morph),
        (0.5, rim * 0.82),
        (1.0, rim),
    ]
}

/// Can: straight cylinder with slight crimps at both ends.
fn can_profile(morph: f64) -> Vec<(f64, f64)> {
    let r = 0.46 - 0.08 * morph;
    vec![
        (0.0, 0.0),
        (0.02, r * 0.93),
        (0.06, r),
        (0.94, r),
        (0.98, r * 0.93),
        (1.0, 0.0),
    ]
}

/// Mug: a cylindrical cup whose outward handle bump breaks the
/// rotational symmetry of the lathed body.
fn mug_class() -> Result<LinearBlendDecoder> {
    let grid = UVGrid::new(BANK_ROWS, BANK_COLS)?;
    let cup = |taper: f64, handle: f64| -> Result<PointCloud> {
        let body = interp(vec![
            (0.0, 0.0),
            (0.03, 0.40),
            (1.0, 0.40 - 0.10 * taper),
        ]);
        let mut points = Vec::with_capacity(grid.count());
        for r in 0..grid.rows() {
            let t = r as f64 / (grid.rows() - 1) as f64;
            let radius = body(t);
            for c in 0..grid.cols() {
                let frac = (c % (grid.cols() - 1)) as f64 / (grid.cols() - 1) as f64;
                let theta = 2.0 * std::f64::consts::PI * frac;
                // Handle: a radial bump around theta = 0 at mid height.
                let near_seam = (frac.min(1.0 - frac)) < 0.10;
                let mid = (t - 0.5).abs() < 0.3;
                let bump = if near_seam && mid { handle } else { 0.0 };
                points.push(clamp_unit(Vec3::new(
                    (radius + bump) * theta.cos(),
                    (radius + bump) * theta.sin(),
                    t - 0.5,
                )));
            }
        }
        PointCloud::new(points)
    };
    LinearBlendDecoder::new(
        "mug",
        grid,
        vec![basis_code(0), basis_code(1)],
        vec![cup(0.0, 0.10)?, cup(1.0, 0.06)?],
    )
}

/// Camera: a box morphed from a sphere (cube-sphere), with a lens bump
/// on the front face.
fn camera_class() -> Result<LinearBlendDecoder> {
    let grid = UVGrid::new(BANK_ROWS, BANK_COLS)?;
    let body = |roundness: f64, lens: f64| -> Result<PointCloud> {
        let mut points = Vec::with_capacity(grid.count());
        for r in 0..grid.rows() {
            let v = r as f64 / (grid.rows() - 1) as f64;
            for c in 0..grid.cols() {
                let u = c as f64 / (grid.cols() - 1) as f64;
                // Latitude-longitude sphere...
                let phi = v * std::f64::consts::PI;
                let theta = u * 2.0 * std::f64::consts::PI;
                let dir = Vec3::new(
                    phi.sin() * theta.cos(),
                    phi.sin() * theta.sin(),
                    phi.cos(),
                );
                // ...pushed toward the unit cube for box-like variants.
                let cube_scale = dir
                    .x
                    .abs()
                    .max(dir.y.abs())
                    .max(dir.z.abs())
                    .max(1e-9);
                let boxy = dir / cube_scale;
                // Body half-extent 0.36 leaves room for the largest lens
                // bump (0.14) without touching the cube wall.
                let p = 0.36 * ((1.0 - roundness) * boxy + roundness * dir);
                // Lens: bulge where the surface faces +x.
                let facing = dir.x.max(0.0).powi(4);
                let p = p + Vec3::new(lens * facing, 0.0, 0.0);
                points.push(clamp_unit(p));
            }
        }
        PointCloud::new(points)
    };
    LinearBlendDecoder::new(
        "camera",
        grid,
        vec![basis_code(0), basis_code(1)],
        vec![body(0.25, 0.10)?, body(0.55, 0.14)?],
    )
}

/// Laptop: two hinged plates (base and screen) traced as one grid strip,
/// the hinge angle being the morphable quantity.
fn laptop_class() -> Result<LinearBlendDecoder> {
    let grid = UVGrid::new(BANK_ROWS, BANK_COLS)?;
    let plates = |open: f64| -> Result<PointCloud> {
        // Base spans y in [-0.5, 0], screen rises from the hinge at
        // y = 0 tilted back by `open` radians from vertical.
        let mut points = Vec::with_capacity(grid.count());
        for r in 0..grid.rows() {
            let v = r as f64 / (grid.rows() - 1) as f64;
            for c in 0..grid.cols() {
                let u = c as f64 / (grid.cols() - 1) as f64;
                let x = u - 0.5;
                let p = if v < 0.5 {
                    // Base plate, slight thickness via a shallow wedge.
                    let along = v * 2.0;
                    Vec3::new(x, -0.5 + 0.5 * along, -0.45 + 0.02 * along)
                } else {
                    // Screen length 0.7 keeps the tip inside the cube
                    // at the widest hinge angle.
                    let along = (v - 0.5) * 2.0;
                    let lift = along * 0.7;
                    Vec3::new(
                        x,
                        lift * open.sin(),
                        -0.43 + lift * open.cos(),
                    )
                };
                points.push(clamp_unit(p));
            }
        }
        PointCloud::new(points)
    };
    LinearBlendDecoder::new(
        "laptop",
        grid,
        vec![basis_code(0), basis_code(1)],
        vec![plates(0.35)?, plates(0.75)?],
    )
}
