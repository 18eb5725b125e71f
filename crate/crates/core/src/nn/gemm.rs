//! Deterministic parallel matrix multiply.
//!
//! Output columns are split into fixed-size blocks and each block is computed
//! by a single `ndarray::dot` call. The partition does not depend on the
//! thread count, so the result is bit-identical whether rayon runs the blocks
//! on one worker or many.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

const BLOCK: usize = 256;

/// `a (m,k) · b (k,n) -> (m,n)`, parallel over fixed-size blocks of the
/// output's longer axis.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(k, kb, "matmul: inner dimensions differ ({k} vs {kb})");

    let mut out = Array2::<f64>::zeros((m, n));
    if n == 0 || m == 0 || k == 0 {
        return out;
    }
    if m.max(n) <= BLOCK {
        out.assign(&a.dot(&b));
        return out;
    }

    if n >= m {
        let b_blocks: Vec<ArrayView2<f64>> = b.axis_chunks_iter(Axis(1), BLOCK).collect();
        out.axis_chunks_iter_mut(Axis(1), BLOCK)
            .into_iter()
            .zip(b_blocks)
            .par_bridge()
            .for_each(|(mut out_block, b_block)| {
                out_block.assign(&a.dot(&b_block));
            });
    } else {
        let a_blocks: Vec<ArrayView2<f64>> = a.axis_chunks_iter(Axis(0), BLOCK).collect();
        out.axis_chunks_iter_mut(Axis(0), BLOCK)
            .into_iter()
            .zip(a_blocks)
            .par_bridge()
            .for_each(|(mut out_block, a_block)| {
                out_block.assign(&a_block.dot(&b));
            });
    }
    out
}
