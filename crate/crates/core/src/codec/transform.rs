//! Integer colour transform, 8x8 DCT and quantisation.

/// DCT-II basis, orthonormal, scaled by 2^13 and rounded.
const BASIS: [[i64; 8]; 8] = [
    [2896, 2896, 2896, 2896, 2896, 2896, 2896, 2896],
    [4017, 3406, 2276, 799, -799, -2276, -3406, -4017],
    [3784, 1567, -1567, -3784, -3784, -1567, 1567, 3784],
    [3406, -799, -4017, -2276, 2276, 4017, 799, -3406],
    [2896, -2896, -2896, 2896, 2896, -2896, -2896, 2896],
    [2276, -4017, 799, 3406, -3406, -799, 4017, -2276],
    [1567, -3784, 3784, -1567, -1567, 3784, -3784, 1567],
    [799, -2276, 3406, -4017, 4017, -3406, 2276, -799],
];

// First pass keeps 3 fractional bits; the second removes the rest.
const PASS1_SHIFT: u32 = 10;
const PASS2_SHIFT: u32 = 16;

#[inline]
fn round_shift(v: i64, shift: u32) -> i64 {
    (v + (1 << (shift - 1))) >> shift
}

/// `sum(basis[i] * x[i])`. Inputs are bounded well inside i64, so wrapping
/// ops never wrap; they only skip overflow checks that block vectorisation.
#[inline]
fn dot(basis: impl Iterator<Item = i64>, x: impl Iterator<Item = i64>) -> i64 {
    basis.zip(x).fold(0i64, |acc, (b, v)| acc.wrapping_add(b.wrapping_mul(v)))
}

/// Forward 2-D DCT of a row-major 8x8 block.
pub fn fdct(block: &[i32; 64]) -> [i32; 64] {
    let mut tmp = [0i64; 64];
    for y in 0..8 {
        let row = &block[y * 8..y * 8 + 8];
        for u in 0..8 {
            let acc = dot(BASIS[u].iter().copied(), row.iter().map(|&v| i64::from(v)));
            tmp[y * 8 + u] = round_shift(acc, PASS1_SHIFT);
        }
    }
    let mut out = [0i32; 64];
    for v in 0..8 {
        for u in 0..8 {
            let acc = dot(BASIS[v].iter().copied(), (0..8).map(|y| tmp[y * 8 + u]));
            out[v * 8 + u] = round_shift(acc, PASS2_SHIFT) as i32;
        }
    }
    out
}

/// Inverse 2-D DCT; input and output row-major. All-zero coefficient
/// columns are skipped.
pub fn idct(coef: &[i32; 64]) -> [i32; 64] {
    let mut tmp = [0i64; 64];
    for u in 0..8 {
        let col: [i64; 8] = std::array::from_fn(|v| i64::from(coef[v * 8 + u]));
        if col.iter().all(|&c| c == 0) {
            continue;
        }
        for y in 0..8 {
            tmp[y * 8 + u] = round_shift(dot((0..8).map(|v| BASIS[v][y]), col.iter().copied()), PASS1_SHIFT);
        }
    }
    let mut out = [0i32; 64];
    for y in 0..8 {
        let row = &tmp[y * 8..y * 8 + 8];
        for x in 0..8 {
            let acc = dot((0..8).map(|u| BASIS[u][x]), row.iter().copied());
            out[y * 8 + x] = round_shift(acc, PASS2_SHIFT) as i32;
        }
    }
    out
}

/// Reference inverse DCT without the sparsity shortcut.
#[cfg(test)]
fn idct_dense(coef: &[i32; 64]) -> [i32; 64] {
    let mut tmp = [0i64; 64];
    for y in 0..8 {
        for u in 0..8 {
            let acc: i64 = (0..8).map(|v| BASIS[v][y] * i64::from(coef[v * 8 + u])).sum();
            tmp[y * 8 + u] = round_shift(acc, PASS1_SHIFT);
        }
    }
    let mut out = [0i32; 64];
    for y in 0..8 {
        for x in 0..8 {
            let acc: i64 = (0..8).map(|u| BASIS[u][x] * tmp[y * 8 + u]).sum();
            out[y * 8 + x] = round_shift(acc, PASS2_SHIFT) as i32;
        }
    }
    out
}

/// Row-major position of each zigzag index.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

/// Classic luminance quantisation table, row-major.
const BASE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quality-scaled quantisation table (IJG scaling), row-major.
pub fn quant_table(quality: u8) -> [i32; 64] {
    let q = i32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [1i32; 64];
    for (o, &b) in t.iter_mut().zip(BASE_TABLE.iter()) {
        *o = ((i32::from(b) * scale + 50) / 100).clamp(1, 255);
    }
    t
}

#[inline]
pub fn quantize(v: i32, q: i32) -> i32 {
    let mag = (v.abs() + q / 2) / q;
    if v < 0 {
        -mag
    } else {
        mag
    }
}

/// Reversible luma/chroma lifting transform. Returns (Y - 128, B - G, R - G).
#[inline]
pub fn rct_forward(r: i32, g: i32, b: i32) -> (i32, i32, i32) {
    let y = (r + 2 * g + b) >> 2;
    (y - 128, b - g, r - g)
}

#[inline]
pub fn rct_inverse(y_shifted: i32, cb: i32, cr: i32) -> (i32, i32, i32) {
    let y = y_shifted + 128;
    let g = y - ((cb + cr) >> 2);
    (cr + g, g, cb + g)
}
