//! 2D ray tests over the ground plane.

use crate::scene::{Box3D, Scene, Wall};

const EPS: f64 = 1e-12;

/// Do closed segments `p0-p1` and `q0-q1` intersect?
pub fn segments_intersect(p0: (f64, f64), p1: (f64, f64), q0: (f64, f64), q1: (f64, f64)) -> bool {
    fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    }
    fn on_seg(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
        p.0 >= a.0.min(b.0) - EPS
            && p.0 <= a.0.max(b.0) + EPS
            && p.1 >= a.1.min(b.1) - EPS
            && p.1 <= a.1.max(b.1) + EPS
    }
    let d1 = orient(q0, q1, p0);
    let d2 = orient(q0, q1, p1);
    let d3 = orient(p0, p1, q0);
    let d4 = orient(p0, p1, q1);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
    {
        return true;
    }
    (d1.abs() <= EPS && on_seg(q0, q1, p0))
        || (d2.abs() <= EPS && on_seg(q0, q1, p1))
        || (d3.abs() <= EPS && on_seg(p0, p1, q0))
        || (d4.abs() <= EPS && on_seg(p0, p1, q1))
}

pub fn segment_hits_wall(p0: (f64, f64), p1: (f64, f64), w: &Wall) -> bool {
    segments_intersect(p0, p1, (w.x0, w.y0), (w.x1, w.y1))
}

/// Parametric interval `[t0, t1]` (within `[0, 1]`) where segment `p0-p1`
/// lies inside the box footprint, if any.
pub fn segment_box_interval(p0: (f64, f64), p1: (f64, f64), b: &Box3D) -> Option<(f64, f64)> {
    let a = b.to_local(p0.0, p0.1);
    let e = b.to_local(p1.0, p1.1);
    let d = (e.0 - a.0, e.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (start, delta, half) in [(a.0, d.0, b.length / 2.0), (a.1, d.1, b.width / 2.0)] {
        if delta.abs() < EPS {
            if start.abs() > half {
                return None;
            }
        } else {
            let ta = (-half - start) / delta;
            let tb = (half - start) / delta;
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

pub fn segment_hits_box(p0: (f64, f64), p1: (f64, f64), b: &Box3D) -> bool {
    segment_box_interval(p0, p1, b).is_some()
}

/// Line of sight from `from` to `to`: no wall crossing and no crossing of any
/// box other than `target_box` (an index into `scene.boxes`).
pub fn line_of_sight(scene: &Scene, from: (f64, f64), to: (f64, f64), target_box: Option<usize>) -> bool {
    if scene.walls.iter().any(|w| segment_hits_wall(from, to, w)) {
        return false;
    }
    !scene
        .boxes
        .iter()
        .enumerate()
        .any(|(i, b)| Some(i) != target_box && segment_hits_box(from, to, b))
}

/// What a ray hit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    Vehicle,
    Wall,
}

/// First intersection of the ray `origin + t * dir` (`dir` unit length,
/// `0 <= t <= max_range`) with any box or wall.
pub fn ray_first_hit(scene: &Scene, origin: (f64, f64), dir: (f64, f64), max_range: f64) -> Option<(f64, HitKind)> {
    let end = (origin.0 + dir.0 * max_range, origin.1 + dir.1 * max_range);
    let mut best: Option<(f64, HitKind)> = None;
    let mut consider = |t: f64, k: HitKind| {
        let d = t * max_range;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    };
    for b in &scene.boxes {
        if let Some((t0, _)) = segment_box_interval(origin, end, b) {
            consider(t0, HitKind::Vehicle);
        }
    }
    for w in &scene.walls {
        if let Some(t) = ray_wall_param(origin, end, w) {
            consider(t, HitKind::Wall);
        }
    }
    best
}

fn ray_wall_param(p0: (f64, f64), p1: (f64, f64), w: &Wall) -> Option<f64> {
    let r = (p1.0 - p0.0, p1.1 - p0.1);
    let s = (w.x1 - w.x0, w.y1 - w.y0);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < EPS {
        return if segments_intersect(p0, p1, (w.x0, w.y0), (w.x1, w.y1)) {
            // collinear overlap: nearest wall endpoint along the ray
            let len2 = r.0 * r.0 + r.1 * r.1;
            let proj = |x: f64, y: f64| ((x - p0.0) * r.0 + (y - p0.1) * r.1) / len2;
            Some(proj(w.x0, w.y0).min(proj(w.x1, w.y1)).max(0.0))
        } else {
            None
        };
    }
    let qp = (w.x0 - p0.0, w.y0 - p0.1);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    if (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
        Some(t.clamp(0.0, 1.0))
    } else {
        None
    }
}
