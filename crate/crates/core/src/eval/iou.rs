use crate::eval::Detection;

fn corners(d: &Detection) -> [(f64, f64); 4] {
    let (s, c) = d.yaw.to_radians().sin_cos();
    let (hl, hw) = (d.length / 2.0, d.width / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(lx, ly)| (d.x + c * lx - s * ly, d.y + s * lx + c * ly))
}

fn area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
fn clip(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// Intersection over union of two rotated BEV rectangles.
pub fn bev_iou(a: &Detection, b: &Detection) -> f64 {
    let (aa, ab) = (a.length * a.width, b.length * b.width);
    if !(aa > 0.0 && ab > 0.0) {
        return 0.0;
    }
    let inter = clip(&corners(a), &corners(b));
    let i = if inter.len() < 3 { 0.0 } else { area(&inter).abs() };
    let u = aa + ab - i;
    if u <= 0.0 {
        0.0
    } else {
        (i / u).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Detection {
        Detection { x, y, length: l, width: w, yaw, score: 1.0 }
    }

    #[test]
    fn identical_disjoint_half_overlap() {
        let a = bx(0.0, 0.0, 4.5, 2.0, 30.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &bx(20.0, 0.0, 4.5, 2.0, 0.0)), 0.0);
        let u = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let v = bx(0.5, 0.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&u, &v) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_is_zero() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &a), 0.0);
    }

    #[test]
    fn rotated_square_inside_circle_case() {
        // unit square vs the same square turned 45 degrees: octagon of area 2(sqrt2 - 1)
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 1.0, 1.0, 45.0);
        let i = 2.0 * (2f64.sqrt() - 1.0);
        assert!((bev_iou(&a, &b) - i / (2.0 - i)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            x in -5.0..5.0f64, y in -5.0..5.0f64, l in 0.5..6.0f64, w in 0.5..6.0f64, r in -180.0..180.0f64,
            l2 in 0.5..6.0f64, w2 in 0.5..6.0f64, r2 in -180.0..180.0f64,
        ) {
            let a = bx(0.0, 0.0, l, w, r);
            let b = bx(x, y, l2, w2, r2);
            let (ab, ba) = (bev_iou(&a, &b), bev_iou(&b, &a));
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        }
    }
}
