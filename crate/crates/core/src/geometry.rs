//! Distances and direction cosines among UAV, IRS, and ground users.

use crate::{Error, Result};

/// 3D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Linear interpolation: self + t*(other - self).
    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self.add(o.sub(self).scale(t))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Direction cosines of a link: vertical sine plus horizontal sine/cosine.
///
/// Invariant: sin_xi^2 + cos_xi^2 = 1 and |sin_theta| <= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCosines {
    pub sin_theta: f64,
    pub sin_xi: f64,
    pub cos_xi: f64,
}

impl DirectionCosines {
    /// Effective horizontal-x direction cosine: sin(theta)*cos(xi).
    pub fn theta_eff(&self) -> f64 {
        self.sin_theta * self.cos_xi
    }

    /// Effective horizontal-y direction cosine: sin(theta)*sin(xi).
    pub fn phi_eff(&self) -> f64 {
        self.sin_theta * self.sin_xi
    }
}

/// Euclidean distance in meters.
pub fn dist(p: Vec3, q: Vec3) -> f64 {
    p.sub(q).norm()
}

/// Angles of arrival at the IRS for the UAV-IRS link.
///
/// sin_theta = (z - z_R)/d, sin_xi = (x_R - x)/r_h, cos_xi = (y - y_R)/r_h
/// with r_h the horizontal range.
pub fn angles_uav_irs(q: Vec3, w_r: Vec3) -> Result<DirectionCosines> {
    let dx = w_r.x - q.x;
    let dy = q.y - w_r.y;
    let r_h = (dx * dx + dy * dy).sqrt();
    if r_h == 0.0 {
        return Err(Error::DegenerateGeometry("UAV and IRS"));
    }
    let d = dist(q, w_r);
    Ok(DirectionCosines {
        sin_theta: (q.z - w_r.z) / d,
        sin_xi: dx / r_h,
        cos_xi: dy / r_h,
    })
}

/// Angles of departure from the IRS toward a ground user at z=0.
///
/// sin_theta = z_R/d, sin_xi = (x_k - x_R)/r_h, cos_xi = (y_k - y_R)/r_h.
pub fn angles_irs_user(w_r: Vec3, w_k: Vec3) -> Result<DirectionCosines> {
    let dx = w_k.x - w_r.x;
    let dy = w_k.y - w_r.y;
    let r_h = (dx * dx + dy * dy).sqrt();
    if r_h == 0.0 {
        return Err(Error::DegenerateGeometry("IRS and user"));
    }
    let d = dist(w_r, w_k);
    Ok(DirectionCosines {
        sin_theta: w_r.z / d,
        sin_xi: dx / r_h,
        cos_xi: dy / r_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dist_axis_aligned() {
        assert_eq!(dist(Vec3::new(0.0, 0.0, 100.0), Vec3::new(0.0, 0.0, 0.0)), 100.0);
    }

    #[test]
    fn dist_identity() {
        let p = Vec3::new(3.5, -2.0, 7.0);
        assert_eq!(dist(p, p), 0.0);
    }

    #[test]
    fn dist_pythagoras() {
        let d = dist(Vec3::new(500.0, 500.0, 100.0), Vec3::new(200.0, 500.0, 30.0));
        assert_relative_eq!(d, (300.0f64 * 300.0 + 70.0 * 70.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(d, 308.058, max_relative = 1e-5);
    }

    #[test]
    fn uav_irs_axis_aligned() {
        let dc = angles_uav_irs(Vec3::new(200.0, 600.0, 130.0), Vec3::new(200.0, 500.0, 30.0)).unwrap();
        assert_relative_eq!(dc.sin_theta, 100.0 / (2.0f64 * 100.0 * 100.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(dc.sin_xi, 0.0);
        assert_relative_eq!(dc.cos_xi, 1.0);
    }

    #[test]
    fn uav_irs_coplanar() {
        let dc = angles_uav_irs(Vec3::new(300.0, 500.0, 30.0), Vec3::new(200.0, 500.0, 30.0)).unwrap();
        assert_relative_eq!(dc.sin_theta, 0.0);
        assert_relative_eq!(dc.sin_xi, -1.0);
        assert_relative_eq!(dc.cos_xi, 0.0);
    }

    #[test]
    fn uav_irs_generic_hand_check() {
        let q = Vec3::new(100.0, 400.0, 80.0);
        let w_r = Vec3::new(200.0, 500.0, 30.0);
        let dc = angles_uav_irs(q, w_r).unwrap();
        let d = dist(q, w_r);
        let r_h = (100.0f64 * 100.0 + 100.0 * 100.0).sqrt();
        assert_relative_eq!(dc.sin_theta, 50.0 / d, max_relative = 1e-12);
        assert_relative_eq!(dc.sin_xi, 100.0 / r_h, max_relative = 1e-12);
        assert_relative_eq!(dc.cos_xi, -100.0 / r_h, max_relative = 1e-12);
    }

    #[test]
    fn uav_irs_degenerate() {
        let err = angles_uav_irs(Vec3::new(200.0, 500.0, 130.0), Vec3::new(200.0, 500.0, 30.0));
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn irs_user_hand_check() {
        let dc = angles_irs_user(Vec3::new(200.0, 500.0, 30.0), Vec3::new(200.0, 400.0, 0.0)).unwrap();
        let d = (100.0f64 * 100.0 + 30.0 * 30.0).sqrt();
        assert_relative_eq!(dc.sin_theta, 30.0 / d, max_relative = 1e-12);
        assert_relative_eq!(dc.sin_xi, 0.0);
        assert_relative_eq!(dc.cos_xi, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn irs_user_x_offset_only() {
        let dc = angles_irs_user(Vec3::new(200.0, 500.0, 30.0), Vec3::new(300.0, 500.0, 0.0)).unwrap();
        assert_relative_eq!(dc.sin_xi, 1.0);
        assert_relative_eq!(dc.cos_xi, 0.0);
    }

    #[test]
    fn irs_user_far_limit() {
        let dc = angles_irs_user(Vec3::new(200.0, 500.0, 30.0), Vec3::new(200.0 + 1e7, 500.0, 0.0)).unwrap();
        assert!(dc.sin_theta.abs() < 1e-5);
    }

    fn arb_vec3() -> impl Strategy<Value = Vec3> {
        (-1e3..1e3, -1e3..1e3, 0.0..300.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn dist_is_metric(p in arb_vec3(), q in arb_vec3(), r in arb_vec3()) {
            prop_assert!(dist(p, q) >= 0.0);
            prop_assert!((dist(p, q) - dist(q, p)).abs() < 1e-9);
            prop_assert!(dist(p, r) <= dist(p, q) + dist(q, r) + 1e-9);
            prop_assert_eq!(dist(p, p), 0.0);
        }

        #[test]
        fn direction_cosines_normalized(q in arb_vec3(), w in arb_vec3()) {
            let dx = q.x - w.x;
            let dy = q.y - w.y;
            prop_assume!((dx * dx + dy * dy).sqrt() > 1e-6);
            let dc = angles_uav_irs(q, w).unwrap();
            prop_assert!((dc.sin_xi * dc.sin_xi + dc.cos_xi * dc.cos_xi - 1.0).abs() < 1e-12);
            prop_assert!(dc.sin_theta.abs() <= 1.0 + 1e-12);
            // vertical sine agrees with the z-difference over the full distance
            prop_assert!((dc.sin_theta - (q.z - w.z) / dist(q, w)).abs() < 1e-12);
        }

        #[test]
        fn irs_user_normalized(w_r in arb_vec3(), ux in -1e3..1e3f64, uy in -1e3..1e3f64) {
            let w_k = Vec3::new(ux, uy, 0.0);
            let dx = w_k.x - w_r.x;
            let dy = w_k.y - w_r.y;
            prop_assume!((dx * dx + dy * dy).sqrt() > 1e-6);
            prop_assume!(w_r.z > 1e-6);
            let dc = angles_irs_user(w_r, w_k).unwrap();
            prop_assert!((dc.sin_xi * dc.sin_xi + dc.cos_xi * dc.cos_xi - 1.0).abs() < 1e-12);
            prop_assert!(dc.sin_theta > 0.0 && dc.sin_theta <= 1.0);
        }
    }
}
