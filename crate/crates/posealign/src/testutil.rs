//! Shared proptest strategies and assertion helpers for unit tests.

use proptest::prelude::*;

use crate::geom::Quaternion;
use crate::Vec3;

/// Arbitrary unit quaternion, rejecting near-zero raw vectors before
/// normalizing so the distribution stays well conditioned.
pub fn any_unit_quat() -> impl Strategy<Value = Quaternion> {
    (
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        .prop_filter_map("norm too small", |(w, x, y, z)| {
            let q = Quaternion::new(w, x, y, z);
            (q.norm() > 0.1).then(|| q.normalized().unwrap())
        })
}

/// Arbitrary vector with each component in `[-extent, extent]`.
pub fn any_vec3(extent: f64) -> impl Strategy<Value = Vec3> {
    (
        -extent..extent,
        -extent..extent,
        -extent..extent,
    )
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn approx_vec(a: &Vec3, b: &Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol
}
