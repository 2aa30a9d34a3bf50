use std::cmp::Ordering;

use crate::collab::{Heatmap, InstanceVector};
use crate::error::{ParamError, ShapeError};
use crate::grid::BevFeature;

fn select(h: &Heatmap, k: usize, cmp: impl Fn(f32, f32) -> Ordering) -> Result<Vec<usize>, ParamError> {
    let n = h.data().len();
    if k > n {
        return Err(ParamError::KTooLarge { k, cells: n });
    }
    let d = h.data();
    let order = |a: &usize, b: &usize| cmp(d[*a], d[*b]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..n).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < n {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    Ok(idx)
}

/// The `k` cells of smallest value, ties broken in row-major order.
pub fn select_k_min(h: &Heatmap, k: usize) -> Result<Vec<(usize, usize)>, ParamError> {
    let w = h.cols();
    Ok(select(h, k, |a, b| a.total_cmp(&b))?
        .into_iter()
        .map(|i| (i / w, i % w))
        .collect())
}

/// The `k` hottest cells paired with their features, ties broken in
/// row-major order.
pub fn select_k_max(h: &Heatmap, b: &BevFeature, k: usize) -> Result<Vec<InstanceVector>, crate::Error> {
    if (b.shape().h_cells, b.shape().w_cells) != (h.rows(), h.cols()) {
        return Err(ShapeError::mismatch(
            "heatmap vs feature plane",
            format!("{}x{}", h.rows(), h.cols()),
            format!("{}x{}", b.shape().h_cells, b.shape().w_cells),
        )
        .into());
    }
    let w = h.cols();
    Ok(select(h, k, |a, b| b.total_cmp(&a))?
        .into_iter()
        .map(|i| InstanceVector {
            h: i / w,
            w: i % w,
            feature: b.cell(i / w, i % w).to_vec(),
            heat: h.data()[i],
            scale: h.scale(),
            owner: h.owner(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn g(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w, 1, 1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn ties_are_row_major() {
        let hm = Heatmap::from_fn(g(3, 3), 0, 0, |_, _| 0.5).unwrap();
        assert_eq!(select_k_min(&hm, 3).unwrap(), vec![(0, 0), (0, 1), (0, 2)]);
        let b = BevFeature::zeros(g(3, 3), 0);
        let top: Vec<_> = select_k_max(&hm, &b, 2).unwrap().iter().map(|i| (i.h, i.w)).collect();
        assert_eq!(top, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn single_extreme_cell() {
        let hm = Heatmap::from_fn(g(4, 4), 0, 0, |h, w| if (h, w) == (2, 3) { 1.0 } else { 0.0 }).unwrap();
        let b = BevFeature::from_fn(g(4, 4), 0, |h, w, _| (h * 4 + w) as f32).unwrap();
        let top = select_k_max(&hm, &b, 1).unwrap();
        assert_eq!((top[0].h, top[0].w, top[0].heat, top[0].feature[0]), (2, 3, 1.0, 11.0));
        let mut lo = vec![0.0f32; 16];
        lo[6] = -1.0;
        let d = Heatmap::new_signed(g(4, 4), lo, 0, 0).unwrap();
        assert_eq!(select_k_min(&d, 1).unwrap(), vec![(1, 2)]);
    }

    #[test]
    fn k_bounds() {
        let hm = Heatmap::from_fn(g(2, 2), 0, 0, |_, _| 0.0).unwrap();
        assert!(select_k_min(&hm, 5).is_err());
        assert_eq!(select_k_min(&hm, 4).unwrap().len(), 4);
        assert!(select_k_min(&hm, 0).unwrap().is_empty());
    }
}
