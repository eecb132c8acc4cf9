//! Forward kernels for convolution and dense layers.
//!
//! Each output lane accumulates its terms with fused multiply-adds in a fixed
//! sequential order and weights widen exactly to `f64`, so the wide-vector
//! builds selected at run time and single-precision weight storage produce
//! the same bits as the portable double-precision path.

pub(super) trait Weight: Copy + Into<f64> {}
impl Weight for f32 {}
impl Weight for f64 {}

/// Rows ahead of the current one to request from memory.
const PREFETCH_ROWS: usize = 8;

#[inline(always)]
fn prefetch<W>(lane_block: &[W]) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let bytes = std::mem::size_of_val(lane_block);
        let p = lane_block.as_ptr().cast::<i8>();
        for off in (0..bytes).step_by(64) {
            // SAFETY: prefetching never faults and `off` stays inside the slice.
            unsafe { _mm_prefetch::<_MM_HINT_T0>(p.add(off)) };
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = lane_block;
}

/// Lanes `j .. j + L` of `acc[j] += sum_t v_t * row_t[j]`.
#[inline(always)]
fn rows_block<W: Weight, const L: usize>(acc: &mut [f64], rows: &[(usize, f64)], w: &[W], j: usize) {
    let n = acc.len();
    let mut a: [f64; L] = acc[j..j + L].try_into().expect("lane block");
    for (k, &(i, v)) in rows.iter().enumerate() {
        if let Some(&(ahead, _)) = rows.get(k + PREFETCH_ROWS) {
            prefetch(&w[ahead * n + j..ahead * n + j + L]);
        }
        let r: &[W; L] = w[i * n + j..i * n + j + L].try_into().expect("lane block");
        for l in 0..L {
            a[l] = v.mul_add(r[l].into(), a[l]);
        }
    }
    acc[j..j + L].copy_from_slice(&a);
}

/// `acc[j] += sum_t v_t * row_t[j]` over the listed rows of `w`, each of
/// length `acc.len()`.
#[inline(always)]
fn accumulate_rows<W: Weight>(acc: &mut [f64], rows: &[(usize, f64)], w: &[W]) {
    let n = acc.len();
    let mut j = 0;
    while j + 128 <= n {
        rows_block::<W, 128>(acc, rows, w, j);
        j += 128;
    }
    while j + 16 <= n {
        rows_block::<W, 16>(acc, rows, w, j);
        j += 16;
    }
    while j + 8 <= n {
        rows_block::<W, 8>(acc, rows, w, j);
        j += 8;
    }
    for (jj, a) in acc.iter_mut().enumerate().skip(j) {
        for &(i, v) in rows {
            *a = v.mul_add(w[i * n + jj].into(), *a);
        }
    }
}

/// `P` neighbouring pixels sharing the weight rows: `acc[q][l] += sum_t
/// xs[q][t] * w[t * n + j + l]`.
#[inline(always)]
fn pixel_block<W: Weight, const P: usize, const L: usize>(
    acc: &mut [[f64; L]; P],
    xs: [&[f64]; P],
    w: &[W],
    n: usize,
    j: usize,
) {
    let span = xs[0].len();
    assert!(xs.iter().all(|x| x.len() == span) && w.len() >= span * n);
    for t in 0..span {
        let r: &[W; L] = w[t * n + j..t * n + j + L].try_into().expect("lane block");
        for q in 0..P {
            let v = xs[q][t];
            for l in 0..L {
                acc[q][l] = v.mul_add(r[l].into(), acc[q][l]);
            }
        }
    }
}

/// Output pixels `p0 .. p0 + P` of row `y` for lanes `j .. j + L`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn conv_tile<W: Weight, const P: usize, const L: usize>(
    out: &mut [f64],
    pad: &[f64],
    weight: &[W],
    bias: &[f64],
    (y, x0, w, ci): (usize, usize, usize, usize),
    j: usize,
) {
    let co = bias.len();
    let pw = w + 2;
    let span = 3 * ci;
    let init: [f64; L] = bias[j..j + L].try_into().expect("lane block");
    let mut acc = [init; P];
    for ky in 0..3 {
        let xs: [&[f64]; P] = std::array::from_fn(|q| {
            let start = ((y + ky) * pw + x0 + q) * ci;
            &pad[start..start + span]
        });
        pixel_block::<W, P, L>(&mut acc, xs, &weight[ky * span * co..(ky + 1) * span * co], co, j);
    }
    for (q, a) in acc.iter().enumerate() {
        let p = y * w + x0 + q;
        out[p * co + j..p * co + j + L].copy_from_slice(a);
    }
}

#[inline(always)]
fn conv_row_lanes<W: Weight, const L: usize>(
    out: &mut [f64],
    pad: &[f64],
    weight: &[W],
    bias: &[f64],
    (y, w, ci): (usize, usize, usize),
    j: usize,
) {
    let mut x0 = 0;
    while x0 + 4 <= w {
        conv_tile::<W, 4, L>(out, pad, weight, bias, (y, x0, w, ci), j);
        x0 += 4;
    }
    while x0 < w {
        conv_tile::<W, 1, L>(out, pad, weight, bias, (y, x0, w, ci), j);
        x0 += 1;
    }
}

#[inline(always)]
fn conv3_impl<W: Weight>(h: usize, w: usize, ci: usize, x: &[f64], weight: &[W], bias: &[f64]) -> Vec<f64> {
    let co = bias.len();
    let pw = w + 2;
    let mut pad = vec![0.0; (h + 2) * pw * ci];
    for y in 0..h {
        let dst = ((y + 1) * pw + 1) * ci;
        pad[dst..dst + w * ci].copy_from_slice(&x[y * w * ci..(y + 1) * w * ci]);
    }
    // On the padded input the three horizontal taps of one kernel row are
    // contiguous, as are their weight rows.
    let span = 3 * ci;
    let mut out = vec![0.0; h * w * co];
    for y in 0..h {
        let mut j = 0;
        while j + 16 <= co {
            conv_row_lanes::<W, 16>(&mut out, &pad, weight, bias, (y, w, ci), j);
            j += 16;
        }
        while j + 8 <= co {
            conv_row_lanes::<W, 8>(&mut out, &pad, weight, bias, (y, w, ci), j);
            j += 8;
        }
        for jj in j..co {
            for xx in 0..w {
                let mut s = bias[jj];
                for ky in 0..3 {
                    let start = ((y + ky) * pw + xx) * ci;
                    let wk = &weight[ky * span * co..(ky + 1) * span * co];
                    for (t, &v) in pad[start..start + span].iter().enumerate() {
                        s = v.mul_add(wk[t * co + jj].into(), s);
                    }
                }
                out[(y * w + xx) * co + jj] = s;
            }
        }
    }
    out
}

#[inline(always)]
fn dense_impl<W: Weight>(x: &[f64], weight: &[W], bias: &[f64]) -> Vec<f64> {
    let rows: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect();
    let mut y = bias.to_vec();
    accumulate_rows(&mut y, &rows, weight);
    y
}

macro_rules! dispatch {
    ($name:ident, $imp:ident, ($($arg:ident: $ty:ty),*)) => {
        pub(super) fn $name<W: Weight>($($arg: $ty),*) -> Vec<f64> {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,fma")]
                fn wide<W: Weight>($($arg: $ty),*) -> Vec<f64> {
                    $imp($($arg),*)
                }
                #[target_feature(enable = "avx2,fma")]
                fn mid<W: Weight>($($arg: $ty),*) -> Vec<f64> {
                    $imp($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx512f")
                    && std::arch::is_x86_feature_detected!("fma")
                {
                    // SAFETY: the required CPU feature was detected above.
                    return unsafe { wide($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2")
                    && std::arch::is_x86_feature_detected!("fma")
                {
                    // SAFETY: the required CPU feature was detected above.
                    return unsafe { mid($($arg),*) };
                }
            }
            $imp($($arg),*)
        }
    };
}

dispatch!(conv3, conv3_impl, (h: usize, w: usize, ci: usize, x: &[f64], weight: &[W], bias: &[f64]));
dispatch!(dense, dense_impl, (x: &[f64], weight: &[W], bias: &[f64]));
