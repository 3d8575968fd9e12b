//! A planar two-link arm dragging a cloth patch towards a marker.
//!
//! Coordinates are canvas fractions with `y` pointing up from the arm base;
//! rendering flips to image rows.

use std::f64::consts::PI;

use crate::image::Image8;

pub const LINK1: f64 = 0.40;
pub const LINK2: f64 = 0.34;
pub const BASE: (f64, f64) = (0.5, 0.06);
pub const CLOTH_SIDE: f64 = 0.22;
const LINK_WIDTH: f64 = 0.05;
const GRIPPER_RADIUS: f64 = 0.04;
const MARKER_RADIUS: f64 = 0.05;

/// One instant of the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    /// Shoulder angle from the +x axis.
    pub theta1: f64,
    /// Elbow angle relative to the upper link.
    pub theta2: f64,
    /// Cloth patch centre.
    pub cloth: (f64, f64),
    pub cloth_color: [u8; 3],
    pub marker: (f64, f64),
    /// 0 open, 1 closed.
    pub gripper: f64,
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a == -PI {
        a = PI;
    }
    a
}

/// Joint angles placing the end effector at `p` (elbow bent clockwise).
/// Targets outside the annulus are projected onto it.
pub fn inverse_kinematics(p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p.0 - BASE.0, p.1 - BASE.1);
    let lo = (LINK1 - LINK2).abs() + 1e-6;
    let hi = LINK1 + LINK2 - 1e-6;
    let d = dx.hypot(dy).clamp(lo, hi);
    let c2 = ((d * d - LINK1 * LINK1 - LINK2 * LINK2) / (2.0 * LINK1 * LINK2)).clamp(-1.0, 1.0);
    let t2 = -c2.acos();
    let t1 = dy.atan2(dx) - (LINK2 * t2.sin()).atan2(LINK1 + LINK2 * t2.cos());
    (wrap_angle(t1), wrap_angle(t2))
}

impl SyntheticScene {
    pub fn elbow(&self) -> (f64, f64) {
        (BASE.0 + LINK1 * self.theta1.cos(), BASE.1 + LINK1 * self.theta1.sin())
    }

    pub fn end_effector(&self) -> (f64, f64) {
        let e = self.elbow();
        let a = self.theta1 + self.theta2;
        (e.0 + LINK2 * a.cos(), e.1 + LINK2 * a.sin())
    }

    /// Joint angles read back from the rendered link geometry.
    pub fn angles_from_geometry(&self) -> (f64, f64) {
        let e = self.elbow();
        let p = self.end_effector();
        let t1 = (e.1 - BASE.1).atan2(e.0 - BASE.0);
        let t2 = wrap_angle((p.1 - e.1).atan2(p.0 - e.0) - t1);
        (t1, t2)
    }

    /// Renders a `3 × size × size` image with 3×3 supersampling.
    pub fn render(&self, size: usize) -> Image8 {
        const SS: usize = 3;
        let hw = size * size;
        let mut data = vec![0u8; 3 * hw];
        let elbow = self.elbow();
        let ee = self.end_effector();
        for row in 0..size {
            for col in 0..size {
                let mut acc = [0.0f64; 3];
                for sy in 0..SS {
                    for sx in 0..SS {
                        let x = (col as f64 + (sx as f64 + 0.5) / SS as f64) / size as f64;
                        let y = 1.0 - (row as f64 + (sy as f64 + 0.5) / SS as f64) / size as f64;
                        let c = self.shade((x, y), elbow, ee);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                for k in 0..3 {
                    data[k * hw + row * size + col] = (acc[k] / (SS * SS) as f64).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Image8::new(3, size, size, data).expect("consistent image size")
    }

    fn shade(&self, p: (f64, f64), elbow: (f64, f64), ee: (f64, f64)) -> [f64; 3] {
        let link = |a: (f64, f64), b: (f64, f64)| segment_distance(p, a, b) < LINK_WIDTH / 2.0;
        let dist = |q: (f64, f64)| (p.0 - q.0).hypot(p.1 - q.1);
        if dist(ee) < GRIPPER_RADIUS {
            let open = [70.0, 200.0, 90.0];
            let closed = [240.0, 140.0, 30.0];
            return std::array::from_fn(|k| open[k] + (closed[k] - open[k]) * self.gripper);
        }
        if link(BASE, elbow) || link(elbow, ee) {
            return [55.0, 58.0, 70.0];
        }
        let h = CLOTH_SIDE / 2.0;
        if (p.0 - self.cloth.0).abs() < h && (p.1 - self.cloth.1).abs() < h {
            let c = self.cloth_color.map(f64::from);
            // A darker diagonal stripe makes the patch orientation visible.
            let stripe = ((p.0 - self.cloth.0) + (p.1 - self.cloth.1)).abs() < h * 0.25;
            return if stripe { c.map(|v| v * 0.6) } else { c };
        }
        let m = dist(self.marker);
        if m < MARKER_RADIUS && m > MARKER_RADIUS * 0.5 {
            return [210.0, 40.0, 40.0];
        }
        // Table: soft vertical gradient.
        let t = p.1;
        [200.0 - 30.0 * t, 190.0 - 25.0 * t, 165.0 - 10.0 * t]
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0) };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(t1: f64, t2: f64) -> SyntheticScene {
        SyntheticScene {
            theta1: t1,
            theta2: t2,
            cloth: (0.3, 0.5),
            cloth_color: [40, 90, 200],
            marker: (0.7, 0.5),
            gripper: 0.0,
        }
    }

    proptest! {
        #[test]
        fn ik_then_fk_reaches_target(x in 0.15f64..0.85, y in 0.25f64..0.7) {
            let (t1, t2) = inverse_kinematics((x, y));
            let p = scene(t1, t2).end_effector();
            prop_assert!((p.0 - x).abs() < 1e-9 && (p.1 - y).abs() < 1e-9);
        }

        #[test]
        fn geometry_recovers_angles(t1 in 0.1f64..3.0, t2 in -3.0f64..-0.05) {
            let (a, b) = scene(t1, t2).angles_from_geometry();
            prop_assert!((a - t1).abs() < 1e-9 && (b - t2).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_stays_in_range() {
        for a in [-10.0, -PI, 0.0, PI, 7.0] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((w - a) / (2.0 * PI)).rem_euclid(1.0).min(1.0 - ((w - a) / (2.0 * PI)).rem_euclid(1.0)) < 1e-12);
        }
    }

    #[test]
    fn render_shows_arm_and_is_deterministic() {
        let (t1, t2) = inverse_kinematics((0.5, 0.5));
        let s = scene(t1, t2);
        let a = s.render(64);
        assert_eq!(a, s.render(64));
        assert_eq!((a.channels(), a.height(), a.width()), (3, 64, 64));
        // Image row for y = 0.5 at x = 0.5 hits the gripper.
        let px = |img: &Image8, c: usize, r: usize, col: usize| img.data()[c * 64 * 64 + r * 64 + col];
        assert!(px(&a, 1, 32, 32) > px(&a, 0, 32, 32));
        let mut closed = s;
        closed.gripper = 1.0;
        assert_ne!(closed.render(64), a);
    }
}
