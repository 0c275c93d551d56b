//! Blockwise DCT quantization emulating lossy compression artifacts.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::hsidata::reflect_index;

pub const BLOCK: usize = 8;

/// Standard JPEG luminance quantization table.
const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Luminance table scaled to mean 1.
pub fn quant_profile() -> &'static [f64; 64] {
    static P: OnceLock<[f64; 64]> = OnceLock::new();
    P.get_or_init(|| {
        let mean = LUMA_TABLE.iter().sum::<f64>() / 64.0;
        LUMA_TABLE.map(|v| v / mean)
    })
}

// orthonormal DCT-II basis, row u = frequency
fn basis() -> &'static [f64; 64] {
    static B: OnceLock<[f64; 64]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [0.0; 64];
        for u in 0..BLOCK {
            let c = if u == 0 { (1.0 / 8.0f64).sqrt() } else { (2.0 / 8.0f64).sqrt() };
            for x in 0..BLOCK {
                b[u * BLOCK + x] = c * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// 2-D orthonormal DCT-II of a row-major 8x8 block.
pub fn dct8(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows: tmp = block * B^T
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|x| block[y * BLOCK + x] * b[u * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    // columns: out = B * tmp
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v * BLOCK + u] = (0..BLOCK).map(|y| b[v * BLOCK + y] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct8`].
pub fn idct8(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|v| b[v * BLOCK + y] * coef[v * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|u| tmp[y * BLOCK + u] * b[u * BLOCK + x]).sum();
        }
    }
    out
}

/// Quantizes every coefficient with step `q * profile[k]`.
pub fn quantize(coef: &mut [f64; 64], q: f64) {
    let prof = quant_profile();
    for (c, &p) in coef.iter_mut().zip(prof.iter()) {
        let step = q * p;
        *c = (*c / step).round() * step;
    }
}

/// Compress-decompress one `h x w` plane with base step `q`. Edges are
/// reflect-padded up to a multiple of 8 and cropped afterwards.
pub fn roundtrip_plane(plane: &[f64], h: usize, w: usize, q: f64) -> Vec<f64> {
    let ph = h.div_ceil(BLOCK) * BLOCK;
    let pw = w.div_ceil(BLOCK) * BLOCK;
    let mut out = vec![0.0; h * w];
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            let mut block = [0.0; 64];
            for y in 0..BLOCK {
                let r = reflect_index((by + y) as isize, h);
                for x in 0..BLOCK {
                    let c = reflect_index((bx + x) as isize, w);
                    block[y * BLOCK + x] = plane[r * w + c];
                }
            }
            let mut coef = dct8(&block);
            quantize(&mut coef, q);
            let rec = idct8(&coef);
            for y in 0..BLOCK.min(h.saturating_sub(by)) {
                for x in 0..BLOCK.min(w.saturating_sub(bx)) {
                    out[(by + y) * w + bx + x] = rec[y * BLOCK + x];
                }
            }
        }
    }
    out
}
