//! Small dense helpers: a partial-pivoting linear solver and reachability
//! checks on transition graphs. Matrices here are at most a few hundred rows.

use crate::scalar::Scalar;

/// Solves `m x = rhs` in place by Gaussian elimination with partial pivoting.
///
/// `m` is row-major `n x n`. Returns `None` when a pivot falls below `pivot_tol`.
pub(crate) fn solve_dense<T: Scalar>(mut m: Vec<T>, mut rhs: Vec<T>, pivot_tol: T) -> Option<Vec<T>> {
    let n = rhs.len();
    debug_assert_eq!(m.len(), n * n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                m[i * n + col]
                    .abs()
                    .partial_cmp(&m[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })?;
        if !(m[pivot_row * n + col].abs() > pivot_tol) {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[row * n + k] = m[row * n + k] - factor * v;
            }
            rhs[row] = rhs[row] - factor * rhs[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc = acc - m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Some(x)
}

/// Whether the directed graph given by `adjacent(i)` is strongly connected.
pub(crate) fn strongly_connected<F>(n: usize, adjacent: F) -> bool
where
    F: Fn(usize) -> Vec<usize>,
{
    if n <= 1 {
        return true;
    }
    let forward: Vec<Vec<usize>> = (0..n).map(&adjacent).collect();
    let mut backward = vec![Vec::new(); n];
    for (i, outs) in forward.iter().enumerate() {
        for &j in outs {
            backward[j].push(i);
        }
    }
    reaches_all(&forward) && reaches_all(&backward)
}

fn reaches_all(graph: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; graph.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &graph[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|x| x)
}
