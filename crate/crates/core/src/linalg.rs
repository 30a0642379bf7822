//! Fixed-size dense helpers for the 2x2 and 3x3 systems used throughout.
//!
//! Everything here is stack allocated; the matrices are tiny and the hot
//! loops (eigenvalue bisection, matrix exponential sweeps) call these many
//! thousands of times.

use crate::error::{ModelError, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Mat2 = [[f64; 2]; 2];

/// A complex number, only as much as eigenvalue reporting needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

pub fn identity3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn zeros3() -> Mat3 {
    [[0.0; 3]; 3]
}

pub fn transpose3(m: &Mat3) -> Mat3 {
    let mut t = zeros3();
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            t[c][r] = *v;
        }
    }
    t
}

pub fn mat_mul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = zeros3();
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_vec3(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Row vector times matrix, `v^T A`.
pub fn vec_mat3(v: &Vec3, a: &Mat3) -> Vec3 {
    [
        v[0] * a[0][0] + v[1] * a[1][0] + v[2] * a[2][0],
        v[0] * a[0][1] + v[1] * a[1][1] + v[2] * a[2][1],
        v[0] * a[0][2] + v[1] * a[1][2] + v[2] * a[2][2],
    ]
}

pub fn scale3(a: &Mat3, s: f64) -> Mat3 {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|v| *v *= s);
    out
}

pub fn add3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] += b[r][c];
        }
    }
    out
}

pub fn sub3(a: &Mat3, b: &Mat3) -> Mat3 {
    add3(a, &scale3(b, -1.0))
}

/// Maximum absolute column sum.
pub fn norm1_3(a: &Mat3) -> f64 {
    (0..3)
        .map(|c| (0..3).map(|r| a[r][c].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff3(a: &Mat3, b: &Mat3) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn trace3(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

/// Gaussian elimination with partial pivoting for `A X = B` (B has `k`
/// right-hand-side columns stored as a 3xk row-major block).
fn solve3_block<const K: usize>(
    a: &Mat3,
    b: &[[f64; K]; 3],
    context: &'static str,
) -> Result<[[f64; K]; 3]> {
    let mut m = *a;
    let mut rhs = *b;
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(ModelError::Singular { context });
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= 1e-14 * scale {
            return Err(ModelError::Singular { context });
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..3 {
                m[row][c] -= f * m[col][c];
            }
            for c in 0..K {
                rhs[row][c] -= f * rhs[col][c];
            }
        }
    }
    let mut x = [[0.0; K]; 3];
    for row in (0..3).rev() {
        for c in 0..K {
            let mut acc = rhs[row][c];
            for j in row + 1..3 {
                acc -= m[row][j] * x[j][c];
            }
            x[row][c] = acc / m[row][row];
        }
    }
    Ok(x)
}

pub fn solve3(a: &Mat3, b: &Vec3, context: &'static str) -> Result<Vec3> {
    let x = solve3_block(a, &[[b[0]], [b[1]], [b[2]]], context)?;
    Ok([x[0][0], x[1][0], x[2][0]])
}

pub fn inverse3(a: &Mat3, context: &'static str) -> Result<Mat3> {
    solve3_block(a, &identity3(), context)
}

pub fn inverse2(a: &Mat2, context: &'static str) -> Result<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if det.abs() <= 1e-14 * scale * scale {
        return Err(ModelError::Singular { context });
    }
    Ok([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

pub fn mat_vec2(a: &Mat2, v: &[f64; 2]) -> [f64; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// Roots of the monic cubic `x^3 + c2 x^2 + c1 x + c0`.
///
/// Trigonometric form when all roots are real, Cardano otherwise; real
/// roots are then polished with two Newton steps.
fn cubic_roots(c2: f64, c1: f64, c0: f64) -> [Complex; 3] {
    let q = (c2 * c2 - 3.0 * c1) / 9.0;
    let r = (2.0 * c2 * c2 * c2 - 9.0 * c2 * c1 + 27.0 * c0) / 54.0;
    let shift = c2 / 3.0;
    let polish = |mut x: f64| {
        for _ in 0..2 {
            let f = ((x + c2) * x + c1) * x + c0;
            let df = (3.0 * x + 2.0 * c2) * x + c1;
            if df == 0.0 {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            x -= step;
        }
        x
    };
    let q3 = q * q * q;
    if r * r < q3 {
        let theta = (r / q3.sqrt()).clamp(-1.0, 1.0).acos();
        let m = -2.0 * q.sqrt();
        let tau = std::f64::consts::TAU;
        [
            Complex::real(polish(m * (theta / 3.0).cos() - shift)),
            Complex::real(polish(m * ((theta + tau) / 3.0).cos() - shift)),
            Complex::real(polish(m * ((theta - tau) / 3.0).cos() - shift)),
        ]
    } else {
        let a = -r.signum() * (r.abs() + (r * r - q3).sqrt()).cbrt();
        let b = if a == 0.0 { 0.0 } else { q / a };
        let real = polish(a + b - shift);
        // Deflate with the polished real root for the remaining pair.
        let p1 = c2 + real;
        let p0 = c1 + real * p1;
        let disc = p1 * p1 - 4.0 * p0;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let big = -0.5 * (p1 + p1.signum() * s);
            let (x1, x2) = if big == 0.0 {
                (0.0, 0.0)
            } else {
                (big, p0 / big)
            };
            [
                Complex::real(real),
                Complex::real(polish(x1)),
                Complex::real(polish(x2)),
            ]
        } else {
            let im = 0.5 * (-disc).sqrt();
            [
                Complex::real(real),
                Complex { re: -0.5 * p1, im },
                Complex { re: -0.5 * p1, im: -im },
            ]
        }
    }
}

/// Eigenvalues of a real 3x3 matrix from its characteristic polynomial.
pub fn eigenvalues3(a: &Mat3) -> [Complex; 3] {
    let tr = trace3(a);
    let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2]
        - a[0][2] * a[2][0]
        + a[1][1] * a[2][2]
        - a[1][2] * a[2][1];
    cubic_roots(-tr, minors, -det3(a))
}

/// Maximum real part over the spectrum.
pub fn spectral_abscissa3(a: &Mat3) -> f64 {
    eigenvalues3(a)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum modulus over the spectrum.
pub fn spectral_radius3(a: &Mat3) -> f64 {
    eigenvalues3(a).iter().map(Complex::abs).fold(0.0, f64::max)
}

/// Diagonal Padé [6/6] coefficients for `exp`.
const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// Matrix exponential by scaling and squaring around a [6/6] Padé
/// approximant. The argument is scaled so that its 1-norm is at most 1/2,
/// where the truncation error is far below double precision.
pub fn expm3(a: &Mat3) -> Mat3 {
    let norm = norm1_3(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = scale3(a, 0.5f64.powi(squarings));
    let mut power = identity3();
    let mut num = zeros3();
    let mut den = zeros3();
    for (k, c) in PADE6.iter().enumerate() {
        let term = scale3(&power, *c);
        num = add3(&num, &term);
        den = if k % 2 == 0 {
            add3(&den, &term)
        } else {
            sub3(&den, &term)
        };
        power = mat_mul3(&power, &x);
    }
    // den is a small perturbation of the identity for ||x|| <= 1/2.
    let inv = inverse3(&den, "Pade denominator").expect("Pade denominator is well conditioned");
    let mut out = mat_mul3(&inv, &num);
    for _ in 0..squarings {
        out = mat_mul3(&out, &out);
    }
    out
}
