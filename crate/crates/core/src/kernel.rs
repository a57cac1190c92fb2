// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense `H · Wᵀ` for the encoder: f32 weights widened to f64 on load,
//! f64 accumulation throughout.
//!
//! Work is tiled as small prompt × feature register blocks. Feature rows are
//! processed in blocks that stay resident in L2 while every prompt tile
//! streams past them. With `std` on x86_64 the tile kernel is picked at
//! runtime (AVX-512, then AVX2+FMA); otherwise a portable scalar kernel runs.

const FEATURE_BLOCK: usize = 64;
#[cfg(all(feature = "std", target_arch = "x86_64"))]
const DIM_BLOCK: usize = 512;

/// Writes `out_t[f * prompts + p] = Σᵢ h[p, i] · w[f, i]`.
///
/// `h` is `prompts × dim` row-major, `w` is `features × dim` row-major and
/// `out_t` is `features × prompts`.
pub(crate) fn matmul_nt(h: &[f64], prompts: usize, w: &[f32], features: usize, dim: usize, out_t: &mut [f64]) {
    debug_assert_eq!(h.len(), prompts * dim);
    debug_assert_eq!(w.len(), features * dim);
    debug_assert_eq!(out_t.len(), features * prompts);
    if prompts == 0 || features == 0 {
        return;
    }
    if dim == 0 {
        out_t.fill(0.0);
        return;
    }

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out_t
            .par_chunks_mut(FEATURE_BLOCK * prompts)
            .zip(w.par_chunks(FEATURE_BLOCK * dim))
            .for_each(|(out_block, w_block)| block(h, prompts, w_block, dim, out_block));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (out_block, w_block) in out_t
            .chunks_mut(FEATURE_BLOCK * prompts)
            .zip(w.chunks(FEATURE_BLOCK * dim))
        {
            block(h, prompts, w_block, dim, out_block);
        }
    }
}

fn block(h: &[f64], prompts: usize, w: &[f32], dim: usize, out: &mut [f64]) {
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { x86::block_avx512(h, prompts, w, dim, out) };
            return;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: as above.
            unsafe { x86::block_avx2(h, prompts, w, dim, out) };
            return;
        }
    }
    block_scalar(h, prompts, w, dim, out);
}

#[inline(always)]
fn dot(h: &[f64], w: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut hc = h.chunks_exact(4);
    let mut wc = w.chunks_exact(4);
    for (a, b) in (&mut hc).zip(&mut wc) {
        for l in 0..4 {
            acc[l] += a[l] * f64::from(b[l]);
        }
    }
    let tail: f64 = hc
        .remainder()
        .iter()
        .zip(wc.remainder())
        .map(|(&a, &b)| a * f64::from(b))
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn block_scalar(h: &[f64], prompts: usize, w: &[f32], dim: usize, out: &mut [f64]) {
    let features = w.len() / dim;
    for p in 0..prompts {
        let hr = &h[p * dim..(p + 1) * dim];
        for f in 0..features {
            out[f * prompts + p] = dot(hr, &w[f * dim..(f + 1) * dim]);
        }
    }
}

/// Runs `$tile` over every full `$np × $nf` tile and fills ragged edges with
/// the scalar dot product.
///
/// The hidden dimension is walked in `DIM_BLOCK` slices so a prompt tile's
/// slice of `h` stays in L1 while every feature tile of the block passes it.
#[cfg(all(feature = "std", target_arch = "x86_64"))]
macro_rules! tiled_block {
    ($h:expr, $prompts:expr, $w:expr, $dim:expr, $out:expr, $np:literal, $nf:literal, $tile:path) => {{
        let (h, prompts, w, dim, out) = ($h, $prompts, $w, $dim, $out);
        let features = w.len() / dim;
        let full_p = prompts - prompts % $np;
        let full_f = features - features % $nf;
        let mut k0 = 0;
        while k0 < dim {
            let k1 = (k0 + super::DIM_BLOCK).min(dim);
            let mut p = 0;
            while p < full_p {
                let hs: [&[f64]; $np] = core::array::from_fn(|i| &h[(p + i) * dim + k0..(p + i) * dim + k1]);
                let mut f = 0;
                while f < full_f {
                    let ws: [&[f32]; $nf] = core::array::from_fn(|j| &w[(f + j) * dim + k0..(f + j) * dim + k1]);
                    let r = $tile(&hs, &ws, k1 - k0);
                    for i in 0..$np {
                        for j in 0..$nf {
                            let slot = &mut out[(f + j) * prompts + p + i];
                            *slot = if k0 == 0 { r[i][j] } else { *slot + r[i][j] };
                        }
                    }
                    f += $nf;
                }
                p += $np;
            }
            k0 = k1;
        }
        for p in 0..full_p {
            for f in full_f..features {
                out[f * prompts + p] = dot(&h[p * dim..(p + 1) * dim], &w[f * dim..(f + 1) * dim]);
            }
        }
        for p in full_p..prompts {
            for f in 0..features {
                out[f * prompts + p] = dot(&h[p * dim..(p + 1) * dim], &w[f * dim..(f + 1) * dim]);
            }
        }
    }};
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
mod x86 {
    use super::dot;
    use core::arch::x86_64::*;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn block_avx512(h: &[f64], prompts: usize, w: &[f32], dim: usize, out: &mut [f64]) {
        tiled_block!(h, prompts, w, dim, out, 6, 4, tile_avx512);
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn block_avx2(h: &[f64], prompts: usize, w: &[f32], dim: usize, out: &mut [f64]) {
        tiled_block!(h, prompts, w, dim, out, 4, 2, tile_avx2);
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn tile_avx512(h: &[&[f64]; 6], w: &[&[f32]; 4], dim: usize) -> [[f64; 4]; 6] {
        let body = dim - dim % 8;
        let mut acc = [[_mm512_setzero_pd(); 4]; 6];
        let mut o = 0;
        while o < body {
            // SAFETY: o + 8 <= body <= row length for every row.
            unsafe {
                let wv: [__m512d; 4] = core::array::from_fn(|j| _mm512_cvtps_pd(_mm256_loadu_ps(w[j].as_ptr().add(o))));
                for i in 0..6 {
                    let hv = _mm512_loadu_pd(h[i].as_ptr().add(o));
                    for j in 0..4 {
                        acc[i][j] = _mm512_fmadd_pd(hv, wv[j], acc[i][j]);
                    }
                }
            }
            o += 8;
        }
        let mut out = [[0.0; 4]; 6];
        for i in 0..6 {
            for j in 0..4 {
                out[i][j] = _mm512_reduce_add_pd(acc[i][j]) + dot(&h[i][body..], &w[j][body..]);
            }
        }
        out
    }

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    fn tile_avx2(h: &[&[f64]; 4], w: &[&[f32]; 2], dim: usize) -> [[f64; 2]; 4] {
        let body = dim - dim % 4;
        let mut acc = [[_mm256_setzero_pd(); 2]; 4];
        let mut o = 0;
        while o < body {
            // SAFETY: o + 4 <= body <= row length for every row.
            unsafe {
                let wv: [__m256d; 2] = core::array::from_fn(|j| _mm256_cvtps_pd(_mm_loadu_ps(w[j].as_ptr().add(o))));
                for i in 0..4 {
                    let hv = _mm256_loadu_pd(h[i].as_ptr().add(o));
                    for j in 0..2 {
                        acc[i][j] = _mm256_fmadd_pd(hv, wv[j], acc[i][j]);
                    }
                }
            }
            o += 4;
        }
        let mut out = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                let mut lanes = [0.0f64; 4];
                // SAFETY: `lanes` holds exactly four f64.
                unsafe { _mm256_storeu_pd(lanes.as_mut_ptr(), acc[i][j]) };
                out[i][j] = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + dot(&h[i][body..], &w[j][body..]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn naive(h: &[f64], prompts: usize, w: &[f32], features: usize, dim: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; features * prompts];
        for f in 0..features {
            for p in 0..prompts {
                out[f * prompts + p] = (0..dim).map(|i| h[p * dim + i] * f64::from(w[f * dim + i])).sum();
            }
        }
        out
    }

    fn check(run: impl Fn(&[f64], usize, &[f32], usize, usize, &mut [f64])) {
        for &(prompts, features, dim) in &[(1, 1, 1), (3, 5, 7), (5, 9, 17), (8, 70, 24), (9, 131, 33)] {
            let h: Vec<f64> = (0..prompts * dim).map(|i| libm::sin(i as f64 * 0.37)).collect();
            let w: Vec<f32> = (0..features * dim).map(|i| libm::cosf(i as f32 * 0.11)).collect();
            let mut out = alloc::vec![f64::NAN; features * prompts];
            run(&h, prompts, &w, features, dim, &mut out);
            let expect = naive(&h, prompts, &w, features, dim);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10, "{prompts}x{features}x{dim}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dispatched_matches_naive_on_ragged_shapes() {
        check(matmul_nt);
    }

    #[test]
    fn scalar_matches_naive_on_ragged_shapes() {
        check(|h, p, w, f, d, out| block_scalar(h, p, w, d, &mut out[..f * p]));
    }

    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    #[test]
    fn avx2_matches_naive_on_ragged_shapes() {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: features detected above.
            check(|h, p, w, _, d, out| unsafe { x86::block_avx2(h, p, w, d, out) });
        }
    }
}
