use rayon::prelude::*;

// Rows per parallel work item. Fixed so results do not depend on the thread count.
const ROW_BLOCK: usize = 64;
const PAR_THRESHOLD: usize = 1 << 16;

macro_rules! gemm_impl {
    ($name:ident, $t:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        pub(crate) fn $name(
            m: usize,
            k: usize,
            n: usize,
            a: &[$t],
            (rsa, csa): (isize, isize),
            b: &[$t],
            (rsb, csb): (isize, isize),
            c: &mut [$t],
            accumulate: bool,
        ) {
            debug_assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0);
            debug_assert!(c.len() >= m * n);
            if m == 0 || n == 0 {
                return;
            }
            if k == 0 {
                if !accumulate {
                    c[..m * n].iter_mut().for_each(|x| *x = 0.0);
                }
                return;
            }
            debug_assert!(a.len() as isize > (m as isize - 1) * rsa + (k as isize - 1) * csa);
            debug_assert!(b.len() as isize > (k as isize - 1) * rsb + (n as isize - 1) * csb);
            let beta: $t = if accumulate { 1.0 } else { 0.0 };
            let run = |row0: usize, rows: usize, c_block: &mut [$t]| {
                let a_off = (row0 as isize * rsa) as usize;
                // SAFETY: bounds checked above; operands are not aliased and the
                // strides describe in-bounds row-major views.
                unsafe {
                    $kernel(
                        rows,
                        k,
                        n,
                        1.0,
                        a.as_ptr().add(a_off),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c_block.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            };
            let c = &mut c[..m * n];
            if m * k * n >= PAR_THRESHOLD && m > ROW_BLOCK {
                c.par_chunks_mut(ROW_BLOCK * n)
                    .enumerate()
                    .for_each(|(blk, c_block)| run(blk * ROW_BLOCK, c_block.len() / n, c_block));
            } else {
                c.chunks_mut(ROW_BLOCK * n)
                    .enumerate()
                    .for_each(|(blk, c_block)| run(blk * ROW_BLOCK, c_block.len() / n, c_block));
            }
        }
    };
}

gemm_impl!(sgemm, f32, matrixmultiply::sgemm);
gemm_impl!(dgemm, f64, matrixmultiply::dgemm);
