//! Numeric self-checks shipped with the toolkit: each check compares a
//! production routine against an independent oracle (brute force,
//! finite differences, or Monte Carlo) on seeded random inputs and
//! reports its worst deviation against a tolerance.
//!
//! A fault-injection hook can deliberately corrupt one routine so the
//! wiring of the checks themselves stays testable end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{quat_rotate, PointCloud, Quaternion};
use crate::harness::config::GradcheckConfig;
use crate::harness::dataset::SCHEMA_VERSION;
use crate::losses::{chamfer, chamfer_grad, finite_diff_grad, geom_loss, geom_loss_grad};
use crate::metrics::{iou3d, OrientedBox};
use crate::Vec3;

/// Names of all checks, in report order.
pub const CHECK_NAMES: [&str; 4] = ["chamfer", "chamfer_grad", "geom_grad", "iou"];

/// One check's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Every check's outcome plus the overall verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub version: String,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl GradcheckReport {
    /// Names of the checks that breached their tolerance.
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Runs every check on inputs drawn from the seeded generator.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if let Some(name) = &cfg.corrupt {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(Error::domain(format!(
                "unknown check {name:?}; expected one of {CHECK_NAMES:?}"
            )));
        }
    }
    let corrupt = |name: &str| cfg.corrupt.as_deref() == Some(name);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let checks = vec![
        check_chamfer(&mut rng, cfg.chamfer_tol, corrupt("chamfer"))?,
        check_chamfer_grad(&mut rng, cfg.grad_rel_tol, corrupt("chamfer_grad"))?,
        check_geom_grad(&mut rng, cfg.grad_rel_tol, corrupt("geom_grad"))?,
        check_iou(&mut rng, cfg.iou_tol, cfg.mc_samples, corrupt("iou"))?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        version: SCHEMA_VERSION.to_string(),
        checks,
        passed,
    })
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Result<PointCloud> {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect(),
    )
}

/// Production distance vs an unoptimized double loop.
fn check_chamfer(rng: &mut ChaCha8Rng, tol: f64, corrupt: bool) -> Result<CheckResult> {
    let mut max_error: f64 = 0.0;
    for _ in 0..6 {
        let a = random_cloud(rng, 40, 0.5)?;
        let b = random_cloud(rng, 55, 0.5)?;
        let mut lib = chamfer(&a, &b)?;
        if corrupt {
            lib *= 1.0 + 1e-3;
        }
        let reference = brute_force_chamfer(&a, &b);
        max_error = max_error.max((lib - reference).abs());
    }
    Ok(result("chamfer", max_error, tol))
}

fn brute_force_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let nearest = |p: &Vec3, cloud: &PointCloud| {
        cloud
            .points()
            .iter()
            .map(|q| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    };
    let ab: f64 = a.points().iter().map(|p| nearest(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.points().iter().map(|p| nearest(p, a)).sum::<f64>() / b.len() as f64;
    ab + ba
}

/// Analytic distance subgradient vs central differences, per coordinate
/// of the first cloud. Relative to the gradient's own scale.
fn check_chamfer_grad(rng: &mut ChaCha8Rng, tol: f64, corrupt: bool) -> Result<CheckResult> {
    grad_check(rng, corrupt, tol, "chamfer_grad", chamfer, chamfer_grad)
}

/// Same comparison for the cloud-alignment objective, whose gradient
/// also tracks the centroid shift term.
fn check_geom_grad(rng: &mut ChaCha8Rng, tol: f64, corrupt: bool) -> Result<CheckResult> {
    grad_check(rng, corrupt, tol, "geom_grad", geom_loss, geom_loss_grad)
}

fn grad_check(
    rng: &mut ChaCha8Rng,
    corrupt: bool,
    tol: f64,
    name: &str,
    loss: impl Fn(&PointCloud, &PointCloud) -> Result<f64>,
    grad: impl Fn(&PointCloud, &PointCloud) -> Result<Vec<Vec3>>,
) -> Result<CheckResult> {
    let mut max_error: f64 = 0.0;
    for _ in 0..3 {
        let a = random_cloud(rng, 12, 0.5)?;
        let b = random_cloud(rng, 15, 0.5)?;
        let analytic = grad(&a, &b)?;
        let mut flat_analytic: Vec<f64> = analytic
            .iter()
            .flat_map(|g| [g.x, g.y, g.z])
            .collect();
        if corrupt {
            for g in &mut flat_analytic {
                *g *= 1.0 + 1e-2;
            }
        }
        let params: Vec<f64> = a
            .points()
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .collect();
        let f = |params: &[f64]| {
            let moved = PointCloud::new(
                params
                    .chunks_exact(3)
                    .map(|c| Vec3::new(c[0], c[1], c[2]))
                    .collect(),
            )
            .expect("same point count");
            loss(&moved, &b).expect("loss on probe")
        };
        let fd = finite_diff_grad(f, &params, 1e-6)?;
        let scale = flat_analytic
            .iter()
            .map(|g| g.abs())
            .fold(1e-3_f64, f64::max);
        for (fd_i, an_i) in fd.iter().zip(&flat_analytic) {
            max_error = max_error.max((fd_i - an_i).abs() / scale);
        }
    }
    Ok(result(name, max_error, tol))
}

/// Exact box overlap vs a Monte Carlo volume estimate: sample uniformly
/// inside the first box, count hits inside the second.
fn check_iou(
    rng: &mut ChaCha8Rng,
    tol: f64,
    samples: usize,
    corrupt: bool,
) -> Result<CheckResult> {
    if samples == 0 {
        return Err(Error::domain("Monte Carlo sample count must be positive"));
    }
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut max_error: f64 = 0.0;
    for _ in 0..3 {
        let random_box = |rng: &mut ChaCha8Rng, center_spread: f64| -> Result<OrientedBox> {
            let q = loop {
                let q = Quaternion::new(
                    gauss.sample(rng),
                    gauss.sample(rng),
                    gauss.sample(rng),
                    gauss.sample(rng),
                );
                if q.norm() > 1e-3 {
                    break q.normalized()?;
                }
            };
            OrientedBox::new(
                Vec3::new(
                    rng.random_range(-center_spread..center_spread),
                    rng.random_range(-center_spread..center_spread),
                    rng.random_range(-center_spread..center_spread),
                ),
                Vec3::new(
                    rng.random_range(0.3..0.6),
                    rng.random_range(0.3..0.6),
                    rng.random_range(0.3..0.6),
                ),
                q,
            )
        };
        let a = random_box(rng, 0.1)?;
        let b = random_box(rng, 0.3)?;
        let mut exact = iou3d(&a, &b);
        if corrupt {
            exact += 0.05;
        }
        let mc = mc_iou(rng, &a, &b, samples);
        max_error = max_error.max((exact - mc).abs());
    }
    Ok(result("iou", max_error, tol))
}

fn mc_iou(rng: &mut ChaCha8Rng, a: &OrientedBox, b: &OrientedBox, samples: usize) -> f64 {
    let mut hits = 0usize;
    for _ in 0..samples {
        let local = Vec3::new(
            rng.random_range(-1.0..1.0) * a.half_extents().x,
            rng.random_range(-1.0..1.0) * a.half_extents().y,
            rng.random_range(-1.0..1.0) * a.half_extents().z,
        );
        let world = a.center() + quat_rotate(&a.rotation(), &local).expect("unit rotation");
        if box_contains(b, &world) {
            hits += 1;
        }
    }
    let intersection = a.volume() * hits as f64 / samples as f64;
    let union = a.volume() + b.volume() - intersection;
    intersection / union
}

fn box_contains(bx: &OrientedBox, p: &Vec3) -> bool {
    let local = quat_rotate(&bx.rotation().conjugate(), &(p - bx.center())).expect("unit rotation");
    let h = bx.half_extents();
    local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
}

fn result(name: &str, max_error: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}
