use std::f64::consts::{PI, TAU};

/// Wraps an angle into the half-open interval (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Signed shortest angular difference `to - from`, in (-pi, pi].
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}
