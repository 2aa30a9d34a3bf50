use serde::{Deserialize, Serialize};

/// Rigid pose: translation in meters, Z-Y-X (yaw, pitch, roll) angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Wrap an angle in degrees into `[-180, 180)`.
pub fn normalize_deg(a: f64) -> f64 {
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 180.0 {
        r - 360.0
    } else {
        r
    }
}

type Mat3 = [[f64; 3]; 3];

fn sin_cos_deg(a: f64) -> (f64, f64) {
    // exact values on the quarter turns keep grid-aligned warps exact
    match a {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        -90.0 => (-1.0, 0.0),
        x if x == -180.0 || x == 180.0 => (0.0, -1.0),
        _ => a.to_radians().sin_cos(),
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose {
            x,
            y,
            z,
            yaw: normalize_deg(yaw),
            pitch: normalize_deg(pitch),
            roll: normalize_deg(roll),
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose::new(x, y, 0.0, yaw, 0.0, 0.0)
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    fn rotation(&self) -> Mat3 {
        let (sy, cy) = sin_cos_deg(self.yaw);
        let (sp, cp) = sin_cos_deg(self.pitch);
        let (sr, cr) = sin_cos_deg(self.roll);
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    }

    fn from_parts(r: &Mat3, t: [f64; 3]) -> Pose {
        let pitch = (-r[2][0]).clamp(-1.0, 1.0).asin().to_degrees();
        let yaw = r[1][0].atan2(r[0][0]).to_degrees();
        let roll = r[2][1].atan2(r[2][2]).to_degrees();
        Pose::new(t[0], t[1], t[2], yaw, pitch, roll)
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let mut out = [self.x, self.y, self.z];
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// Map a point from the parent frame into this pose's local frame.
    pub fn inverse_transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let d = [p[0] - self.x, p[1] - self.y, p[2] - self.z];
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
        }
        out
    }

    /// Pose of `source` expressed in the frame of `target` (both given in a
    /// common world frame), so that `rel.transform_point` maps source-local
    /// points into target-local points.
    pub fn relative(source: &Pose, target: &Pose) -> Pose {
        let rs = source.rotation();
        let rt = target.rotation();
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| rt[k][i] * rs[k][j]).sum();
            }
        }
        let t = target.inverse_transform_point([source.x, source.y, source.z]);
        // planar poses stay exactly planar
        if source.pitch == 0.0 && source.roll == 0.0 && target.pitch == 0.0 && target.roll == 0.0 {
            return Pose::new(t[0], t[1], t[2], source.yaw - target.yaw, 0.0, 0.0);
        }
        Pose::from_parts(&r, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_angles() {
        assert_eq!(normalize_deg(180.0), -180.0);
        assert_eq!(normalize_deg(-180.0), -180.0);
        assert_eq!(normalize_deg(270.0), -90.0);
        assert_eq!(normalize_deg(-190.0), 170.0);
        assert_eq!(normalize_deg(720.5), 0.5);
        let p = Pose::new(0.0, 0.0, 0.0, 359.0, 0.0, 0.0);
        assert_eq!(p.yaw, -1.0);
    }

    #[test]
    fn transform_inverse_round_trip() {
        let p = Pose::new(3.0, -2.0, 0.5, 33.0, 10.0, -5.0);
        let q = [1.5, 2.5, -0.25];
        let back = p.inverse_transform_point(p.transform_point(q));
        for i in 0..3 {
            assert!((back[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_pose_chains() {
        let a = Pose::new(4.0, 1.0, 0.0, 30.0, 5.0, 2.0);
        let b = Pose::new(-2.0, 7.0, 1.0, -60.0, 0.0, 3.0);
        let rel = Pose::relative(&a, &b);
        let p = [1.0, -2.0, 0.5];
        let world = a.transform_point(p);
        let expect = b.inverse_transform_point(world);
        let got = rel.transform_point(p);
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() < 1e-9, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn planar_relative_is_exact() {
        let a = Pose::planar(5.0, 3.0, 0.0);
        let b = Pose::planar(1.0, 1.0, 0.0);
        let rel = Pose::relative(&a, &b);
        assert_eq!(rel, Pose::planar(4.0, 2.0, 0.0));
    }
}
