use ndarray::{Array2, Axis};

use crate::Scalar;

/// Solves `a · x = b` for square `a` by Gaussian elimination with partial
/// pivoting. Returns `None` when a pivot is negligible relative to the
/// largest diagonal entry.
pub(crate) fn solve<T: Scalar>(mut a: Array2<T>, mut b: Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    debug_assert_eq!(n, b.nrows());
    let scale = a
        .diag()
        .iter()
        .fold(T::zero(), |m, &x| m.max(x.abs()))
        .max(T::min_positive_value());
    let tol = scale * T::epsilon() * T::of(1e4);

    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[[r, col]].abs()))
            .fold((col, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // a NaN pivot is singular
        if !(pivot > tol) {
            return None;
        }
        if pivot_row != col {
            swap_rows(&mut a, col, pivot_row);
            swap_rows(&mut b, col, pivot_row);
        }
        let p = a[[col, col]];
        for r in col + 1..n {
            let f = a[[r, col]] / p;
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                let v = a[[col, c]];
                a[[r, c]] -= f * v;
            }
            for c in 0..b.ncols() {
                let v = b[[col, c]];
                b[[r, c]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let p = a[[col, col]];
        for c in 0..b.ncols() {
            let mut acc = b[[col, c]];
            for k in col + 1..n {
                acc -= a[[col, k]] * b[[k, c]];
            }
            b[[col, c]] = acc / p;
        }
    }
    Some(b)
}

fn swap_rows<T: Scalar>(m: &mut Array2<T>, i: usize, j: usize) {
    let (mut top, mut bottom) = m.view_mut().split_at(Axis(0), j);
    let mut ri = top.row_mut(i);
    let mut rj = bottom.row_mut(0);
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        std::mem::swap(x, y);
    }
}
