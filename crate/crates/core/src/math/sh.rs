//! Real spherical harmonics up to degree 3, in the ordering and sign convention
//! of the Gaussian-splatting PLY layout (Condon–Shortley phase, `m = -l..=l`).

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 3;
pub const MAX_COEFFS: usize = 16;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Per-channel coefficient count for degree `l`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// DC coefficient that reproduces `color` when all higher orders are zero.
pub fn rgb_to_dc(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}

pub fn dc_to_rgb(dc: f64) -> f64 {
    SH_C0 * dc + 0.5
}

/// All 16 basis values at `d`. `d` is treated as a point in R³; callers pass unit vectors.
pub fn basis(d: &Vector3<f64>) -> [f64; MAX_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_gradient(d: &Vector3<f64>) -> [[f64; 3]; MAX_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0],
        [SH_C3[0] * 6.0 * x * y, SH_C3[0] * 3.0 * (xx - yy), 0.0],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [-2.0 * SH_C3[2] * x * y, SH_C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * SH_C3[2] * y * z],
        [-6.0 * SH_C3[3] * x * z, -6.0 * SH_C3[3] * y * z, SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [SH_C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * SH_C3[4] * x * y, 8.0 * SH_C3[4] * x * z],
        [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)],
        [SH_C3[6] * 3.0 * (xx - yy), -6.0 * SH_C3[6] * x * y, 0.0],
    ]
}

fn degree_for(count: usize) -> Result<usize> {
    (0..=MAX_DEGREE)
        .find(|&l| coeff_count(l) == count)
        .ok_or(Error::CoefficientCount { expected: "1, 4, 9 or 16".into(), got: count })
}

/// View-dependent RGB: `Σ_k coeffs[k] · Y_k(dir) + 0.5`, unclamped.
///
/// `coeffs[k]` holds the RGB triple of basis function `k`; the slice length
/// selects the degree.
pub fn sh_eval(coeffs: &[[f64; 3]], view_dir: &Vector3<f64>) -> Result<[f64; 3]> {
    degree_for(coeffs.len())?;
    let b = basis(view_dir);
    let mut rgb = [0.5; 3];
    for (k, c) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    Ok(rgb)
}
