//! Scaled dot-product attention shared by every fusion stage.

use crate::error::ShapeError;
use crate::grid::Matrix;

/// Max-subtracted softmax over finite logits.
pub fn softmax_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

/// One query row against `n` key/value rows stored contiguously.
///
/// `keys` is `n x c`, `values` is `n x cv`, `out` has length `cv`.
/// `scratch` is reused for the logits.
pub fn attend_row(
    query: &[f32],
    keys: &[f32],
    values: &[f32],
    cv: usize,
    scratch: &mut Vec<f64>,
    out: &mut [f32],
) {
    let c = query.len();
    let n = keys.len().checked_div(c).unwrap_or(0);
    debug_assert_eq!(values.len(), n * cv);
    let scale = 1.0 / (c as f64).sqrt();
    scratch.clear();
    let mut max = f64::NEG_INFINITY;
    for j in 0..n {
        let k = &keys[j * c..(j + 1) * c];
        let dot: f64 = query
            .iter()
            .zip(k)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let logit = dot * scale;
        max = max.max(logit);
        scratch.push(logit);
    }
    let mut sum = 0.0;
    for l in scratch.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    let mut acc = [0.0f64; 64];
    if cv <= acc.len() {
        let acc = &mut acc[..cv];
        for j in 0..n {
            let wj = scratch[j] / sum;
            for (a, &v) in acc.iter_mut().zip(&values[j * cv..(j + 1) * cv]) {
                *a += wj * v as f64;
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = *a as f32;
        }
    } else {
        let mut acc = vec![0.0f64; cv];
        for j in 0..n {
            let wj = scratch[j] / sum;
            for (a, &v) in acc.iter_mut().zip(&values[j * cv..(j + 1) * cv]) {
                *a += wj * v as f64;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
    }
}

/// `softmax(Q Kᵀ / √C) V` row by row.
pub fn attention(queries: &Matrix, keys: &Matrix, values: &Matrix) -> Result<Matrix, ShapeError> {
    if queries.cols == 0 {
        return Err(ShapeError::mismatch("attention channels", ">= 1", 0));
    }
    if keys.cols != queries.cols {
        return Err(ShapeError::mismatch(
            "attention key channels",
            queries.cols,
            keys.cols,
        ));
    }
    if values.rows != keys.rows {
        return Err(ShapeError::mismatch(
            "attention value rows",
            keys.rows,
            values.rows,
        ));
    }
    if keys.rows == 0 {
        return Err(ShapeError::mismatch("attention key rows", ">= 1", 0));
    }
    let mut out = Matrix::zeros(queries.rows, values.cols);
    let mut scratch = Vec::with_capacity(keys.rows);
    for i in 0..queries.rows {
        let q = queries.row(i);
        attend_row(
            q,
            &keys.data,
            &values.data,
            values.cols,
            &mut scratch,
            out.row_mut(i),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_key_returns_value() {
        let q = m(&[&[3.0, -1.0], &[0.5, 9.0]]);
        let k = m(&[&[2.0, 2.0]]);
        let v = m(&[&[7.0, -4.0]]);
        let out = attention(&q, &k, &v).unwrap();
        assert_eq!(out.data, vec![7.0, -4.0, 7.0, -4.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = m(&[&[1.0, 2.0]]);
        let k = m(&[&[0.3, 0.1], &[0.3, 0.1], &[0.3, 0.1]]);
        let v = m(&[&[1.0, 0.0], &[2.0, 3.0], &[6.0, 3.0]]);
        let out = attention(&q, &k, &v).unwrap();
        assert!((out.data[0] - 3.0).abs() < 1e-6);
        assert!((out.data[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let q = m(&[&[1.0, 2.0]]);
        let k = m(&[&[1.0, 2.0, 3.0]]);
        let v = m(&[&[1.0]]);
        assert!(attention(&q, &k, &v).is_err());
        let k = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(attention(&q, &k, &v).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_with_huge_logits() {
        let w = softmax_weights(&[1e6, -1e6, 999_999.0, 0.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|x| x.is_finite()));
    }
}
