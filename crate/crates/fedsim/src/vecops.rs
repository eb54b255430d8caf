//! Dense vector helpers shared by the objective and simulation code.
//!
//! All reductions over clients use `pairwise_mean`, which sums in a fixed
//! tree order so results do not depend on evaluation schedule.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

#[inline]
pub fn sub(a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), b.len());
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x - y;
    }
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Mean of `rows` computed with pairwise (tree) summation in ascending row
/// order. The tree shape depends only on the number of rows, so the result
/// is bit-identical regardless of how the rows were produced.
pub fn pairwise_mean(rows: &[Vec<f64>], out: &mut [f64]) {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    pairwise_mean_refs(&refs, out);
}

/// Same reduction over borrowed rows; avoids cloning in hot paths.
pub fn pairwise_mean_refs(rows: &[&[f64]], out: &mut [f64]) {
    let n = rows.len();
    assert!(n > 0, "pairwise_mean over empty set");
    pairwise_sum_into(rows, 0, n, out);
    scale(1.0 / n as f64, out);
}

fn pairwise_sum_into(rows: &[&[f64]], lo: usize, hi: usize, out: &mut [f64]) {
    match hi - lo {
        1 => out.copy_from_slice(rows[lo]),
        2 => {
            for (o, (a, b)) in out.iter_mut().zip(rows[lo].iter().zip(rows[lo + 1])) {
                *o = a + b;
            }
        }
        len => {
            let mid = lo + len / 2;
            let mut right = vec![0.0; out.len()];
            pairwise_sum_into(rows, lo, mid, out);
            pairwise_sum_into(rows, mid, hi, &mut right);
            for (o, r) in out.iter_mut().zip(&right) {
                *o += r;
            }
        }
    }
}
