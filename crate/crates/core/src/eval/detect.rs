use serde::{Deserialize, Serialize};

use crate::collab::Heatmap;
use crate::error::ShapeError;
use crate::grid::BevFeature;

/// A decoded BEV box in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    /// Degrees.
    pub yaw: f64,
    pub score: f32,
}

/// Canonical-box decoding knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub threshold: f32,
    pub length_m: f64,
    pub width_m: f64,
    /// Keep only 3x3 local maxima.
    pub nms: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { threshold: 0.5, length_m: 4.5, width_m: 2.0, nms: true }
    }
}

/// Is `(h, w)` the maximum of its 3x3 window? Ties go to the earlier cell in
/// row-major order.
fn local_max(hm: &Heatmap, h: usize, w: usize) -> bool {
    let v = hm.get(h, w);
    let (rows, cols) = (hm.rows() as i64, hm.cols() as i64);
    for dh in -1i64..=1 {
        for dw in -1i64..=1 {
            let (nh, nw) = (h as i64 + dh, w as i64 + dw);
            if (dh, dw) == (0, 0) || nh < 0 || nw < 0 || nh >= rows || nw >= cols {
                continue;
            }
            let n = hm.get(nh as usize, nw as usize);
            let earlier = (nh, nw) < (h as i64, w as i64);
            if n > v || (n == v && earlier) {
                return false;
            }
        }
    }
    true
}

/// Heatmap peaks above `cfg.threshold` as canonical boxes at cell centers.
pub fn decode_detections(b: &BevFeature, hm: &Heatmap, cfg: &DecodeConfig) -> Result<Vec<Detection>, ShapeError> {
    let s = b.shape();
    if (s.h_cells, s.w_cells) != (hm.rows(), hm.cols()) {
        return Err(ShapeError::mismatch(
            "heatmap vs feature plane",
            format!("{}x{}", s.h_cells, s.w_cells),
            format!("{}x{}", hm.rows(), hm.cols()),
        ));
    }
    let mut out = Vec::new();
    for h in 0..hm.rows() {
        for w in 0..hm.cols() {
            let v = hm.get(h, w);
            if v > cfg.threshold && (!cfg.nms || local_max(hm, h, w)) {
                let (x, y) = s.cell_center(h, w);
                out.push(Detection { x, y, length: cfg.length_m, width: cfg.width_m, yaw: 0.0, score: v });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn shape() -> GridShape {
        GridShape::new(6, 5, 1, 1, 1.0, 1.0).unwrap()
    }

    fn decode(data: Vec<f32>) -> Vec<Detection> {
        let hm = Heatmap::new(shape(), data, 0, 0).unwrap();
        decode_detections(&BevFeature::zeros(shape(), 0), &hm, &DecodeConfig::default()).unwrap()
    }

    #[test]
    fn uniform_below_threshold_is_empty() {
        assert!(decode(vec![0.4; 30]).is_empty());
    }

    #[test]
    fn isolated_peak() {
        let mut d = vec![0.1; 30];
        d[2 * 5 + 3] = 0.9;
        let dets = decode(d);
        assert_eq!(dets.len(), 1);
        let (x, y) = shape().cell_center(2, 3);
        assert_eq!((dets[0].x, dets[0].y, dets[0].score), (x, y, 0.9));
        assert_eq!((dets[0].length, dets[0].width, dets[0].yaw), (4.5, 2.0, 0.0));
    }

    /// Brute-force oracle: a cell survives iff no 3x3 neighbor beats it
    /// under (value desc, row-major asc).
    fn oracle(d: &[f32], rows: usize, cols: usize, thr: f32) -> Vec<(usize, usize)> {
        let key = |h: usize, w: usize| (d[h * cols + w], std::cmp::Reverse(h * cols + w));
        let mut out = Vec::new();
        for h in 0..rows {
            for w in 0..cols {
                if d[h * cols + w] <= thr {
                    continue;
                }
                let mut best = true;
                for nh in h.saturating_sub(1)..(h + 2).min(rows) {
                    for nw in w.saturating_sub(1)..(w + 2).min(cols) {
                        if (nh, nw) != (h, w) && key(nh, nw).partial_cmp(&key(h, w)) == Some(std::cmp::Ordering::Greater) {
                            best = false;
                        }
                    }
                }
                if best {
                    out.push((h, w));
                }
            }
        }
        out
    }

    #[test]
    fn adjacent_peaks_keep_larger_then_earlier() {
        let mut d = vec![0.1; 30];
        d[2 * 5 + 2] = 0.8;
        d[2 * 5 + 3] = 0.9;
        let dets = decode(d.clone());
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].score, 0.9);
        d[2 * 5 + 2] = 0.9;
        let dets = decode(d);
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].x, dets[0].y), shape().cell_center(2, 2));
    }

    #[test]
    fn matches_oracle_on_quantized_maps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let d: Vec<f32> = (0..30).map(|_| rng.random_range(0..5) as f32 / 4.0).collect();
            let got: Vec<_> = decode(d.clone())
                .iter()
                .map(|det| shape().cell_of(det.x, det.y).unwrap())
                .collect();
            assert_eq!(got, oracle(&d, 6, 5, 0.5));
        }
    }
}
