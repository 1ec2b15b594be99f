//! Closed-form kernels for 2×2 coefficient blocks.
//!
//! Every coefficient of the linear processes handled here has the form
//! `M2 ⊗ I_d`, so all matrix work reduces to 2×2 arithmetic applied
//! coordinate-wise to the position and momentum blocks.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::State;

/// Diagonal jitter added before every Cholesky factorization.
pub const CHOLESKY_JITTER: f64 = 1e-9;

/// Determinant magnitude below which a matrix is treated as singular.
pub const SINGULAR_DET: f64 = 1e-300;

/// Row-major 2×2 matrix `[[a, b], [c, dd]]`, acting as `M2 ⊗ I_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dd: f64,
}

impl BlockMat2 {
    pub const fn new(a: f64, b: f64, c: f64, dd: f64) -> Self {
        BlockMat2 { a, b, c, dd }
    }

    pub const fn identity() -> Self {
        BlockMat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub const fn zeros() -> Self {
        BlockMat2::new(0.0, 0.0, 0.0, 0.0)
    }

    pub const fn ones() -> Self {
        BlockMat2::new(1.0, 1.0, 1.0, 1.0)
    }

    pub const fn diag(a: f64, dd: f64) -> Self {
        BlockMat2::new(a, 0.0, 0.0, dd)
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        BlockMat2::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.dd]
    }

    pub fn trace(self) -> f64 {
        self.a + self.dd
    }

    pub fn det(self) -> f64 {
        self.a * self.dd - self.b * self.c
    }

    pub fn transpose(self) -> Self {
        BlockMat2::new(self.a, self.c, self.b, self.dd)
    }

    pub fn scale(self, k: f64) -> Self {
        BlockMat2::new(k * self.a, k * self.b, k * self.c, k * self.dd)
    }

    /// Entry-wise product.
    pub fn hadamard(self, o: BlockMat2) -> Self {
        BlockMat2::new(self.a * o.a, self.b * o.b, self.c * o.c, self.dd * o.dd)
    }

    pub fn max_abs(self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.dd.abs())
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Applies the 2×2 block to a coordinate pair.
    pub fn apply(self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.dd * v[1]]
    }

    /// Eigenvalues, returned as `q ± sqrt(q² − det)` with `q = tr/2`.
    /// Triangular matrices return their diagonal exactly.
    pub fn eigenvalues(self) -> [Complex64; 2] {
        if self.b == 0.0 || self.c == 0.0 {
            return [Complex64::new(self.a, 0.0), Complex64::new(self.dd, 0.0)];
        }
        let q = 0.5 * self.trace();
        let r2 = q * q - self.det();
        if r2 >= 0.0 {
            let r = r2.sqrt();
            [Complex64::new(q + r, 0.0), Complex64::new(q - r, 0.0)]
        } else {
            let w = (-r2).sqrt();
            [Complex64::new(q, w), Complex64::new(q, -w)]
        }
    }
}

impl Add for BlockMat2 {
    type Output = BlockMat2;
    fn add(self, o: BlockMat2) -> BlockMat2 {
        BlockMat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.dd + o.dd)
    }
}

impl Sub for BlockMat2 {
    type Output = BlockMat2;
    fn sub(self, o: BlockMat2) -> BlockMat2 {
        BlockMat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.dd - o.dd)
    }
}

impl Neg for BlockMat2 {
    type Output = BlockMat2;
    fn neg(self) -> BlockMat2 {
        self.scale(-1.0)
    }
}

impl Mul for BlockMat2 {
    type Output = BlockMat2;
    fn mul(self, o: BlockMat2) -> BlockMat2 {
        BlockMat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.dd,
            self.c * o.a + self.dd * o.c,
            self.c * o.b + self.dd * o.dd,
        )
    }
}

/// Symmetric 2×2 matrix `[[xx, xm], [xm, mm]]`, not necessarily definite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xm: f64,
    pub mm: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, xm: f64, mm: f64) -> Self {
        Sym2 { xx, xm, mm }
    }

    pub const fn diag(xx: f64, mm: f64) -> Self {
        Sym2::new(xx, 0.0, mm)
    }

    pub const fn zeros() -> Self {
        Sym2::new(0.0, 0.0, 0.0)
    }

    pub fn det(self) -> f64 {
        self.xx * self.mm - self.xm * self.xm
    }

    pub fn trace(self) -> f64 {
        self.xx + self.mm
    }

    pub fn is_spd(self) -> bool {
        self.trace() > 0.0 && self.det() > 0.0
    }

    pub fn to_mat(self) -> BlockMat2 {
        BlockMat2::new(self.xx, self.xm, self.xm, self.mm)
    }

    /// Symmetric part of a general block.
    pub fn from_mat(m: BlockMat2) -> Self {
        Sym2::new(m.a, 0.5 * (m.b + m.c), m.dd)
    }

    /// `m · self · mᵀ`, symmetrized.
    pub fn congruence(self, m: BlockMat2) -> Self {
        Sym2::from_mat(m * self.to_mat() * m.transpose())
    }

    pub fn max_abs_diff(self, o: Sym2) -> f64 {
        (self.xx - o.xx).abs().max((self.xm - o.xm).abs()).max((self.mm - o.mm).abs())
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xm + o.xm, self.mm + o.mm)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xm - o.xm, self.mm - o.mm)
    }
}

/// A symmetric positive-definite 2×2 matrix (validated on construction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Sym2", into = "Sym2")]
pub struct Spd2(Sym2);

impl Spd2 {
    pub fn new(xx: f64, xm: f64, mm: f64) -> Result<Self> {
        Spd2::try_from(Sym2::new(xx, xm, mm))
    }

    pub fn diag(xx: f64, mm: f64) -> Result<Self> {
        Spd2::new(xx, 0.0, mm)
    }

    pub fn get(self) -> Sym2 {
        self.0
    }
}

impl TryFrom<Sym2> for Spd2 {
    type Error = Error;
    fn try_from(s: Sym2) -> Result<Self> {
        let finite = s.xx.is_finite() && s.xm.is_finite() && s.mm.is_finite();
        if finite && s.is_spd() {
            Ok(Spd2(s))
        } else {
            Err(Error::NotSpd(format!("{s:?}")))
        }
    }
}

impl From<Spd2> for Sym2 {
    fn from(s: Spd2) -> Sym2 {
        s.0
    }
}

/// `exp(m · t)` in closed form.
///
/// With `q = tr(m)/2`, `r² = q² − det(m)` and `n = m − qI` (so `n² = r² I`),
/// `exp(mt) = e^{qt} (cosh(rt) I + sinh(rt)/r · n)`. Complex `r` turns the
/// hyperbolic functions into trigonometric ones; near-defective inputs use a
/// three-term series in `r²t²`.
pub fn mat_exp(m: BlockMat2, t: f64) -> BlockMat2 {
    if t == 0.0 {
        return BlockMat2::identity();
    }
    if m.b == 0.0 || m.c == 0.0 {
        return triangular_exp(m, t);
    }
    let q = 0.5 * m.trace();
    let r2 = q * q - m.det();
    let n = m - BlockMat2::identity().scale(q);
    let x = r2 * t * t;
    let (ch, sh_over_r) = if r2.abs() < 1e-12 * q * q || x.abs() < 1e-4 {
        (
            1.0 + x / 2.0 + x * x / 24.0,
            t * (1.0 + x / 6.0 + x * x / 120.0),
        )
    } else if r2 > 0.0 {
        let r = r2.sqrt();
        ((r * t).cosh(), (r * t).sinh() / r)
    } else {
        let w = (-r2).sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    };
    let e = (q * t).exp();
    (BlockMat2::identity().scale(ch) + n.scale(sh_over_r)).scale(e)
}

/// Exact exponential of a triangular matrix: the diagonal is `e^{a t}`,
/// `e^{d t}` and the off-diagonal entry uses `sinh(δ/2)/(δ/2)`, `δ = (a − d)t`.
fn triangular_exp(m: BlockMat2, t: f64) -> BlockMat2 {
    let ea = (m.a * t).exp();
    let ed = (m.dd * t).exp();
    let delta = (m.a - m.dd) * t;
    let half = 0.5 * delta;
    let shc = if half.abs() < 1e-4 {
        1.0 + half * half / 6.0
    } else {
        half.sinh() / half
    };
    let off = t * (0.5 * (m.a + m.dd) * t).exp() * shc;
    BlockMat2::new(ea, m.b * off, m.c * off, ed)
}

/// Lower Cholesky factor of `s + CHOLESKY_JITTER · I`.
pub fn cholesky2(s: Sym2) -> Result<BlockMat2> {
    cholesky2_with_jitter(s, CHOLESKY_JITTER)
}

/// Lower Cholesky factor of `s + jitter · I`.
pub fn cholesky2_with_jitter(s: Sym2, jitter: f64) -> Result<BlockMat2> {
    let xx = s.xx + jitter;
    let mm = s.mm + jitter;
    let det = xx * mm - s.xm * s.xm;
    if !(xx > 0.0 && det > 0.0) {
        return Err(Error::NotSpd(format!("{s:?} (+{jitter:e} I)")));
    }
    let l11 = xx.sqrt();
    let l21 = s.xm / l11;
    let l22 = (mm - l21 * l21).max(0.0).sqrt();
    if l22 <= 0.0 {
        return Err(Error::NotSpd(format!("{s:?} (+{jitter:e} I)")));
    }
    Ok(BlockMat2::new(l11, 0.0, l21, l22))
}

pub fn inverse2(m: BlockMat2) -> Result<BlockMat2> {
    let det = m.det();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::Singular { det });
    }
    Ok(BlockMat2::new(m.dd / det, -m.b / det, -m.c / det, m.a / det))
}

/// Solves `m · v = rhs` for a coordinate pair.
pub fn solve2(m: BlockMat2, rhs: [f64; 2]) -> Result<[f64; 2]> {
    let det = m.det();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::Singular { det });
    }
    Ok([
        (m.dd * rhs[0] - m.b * rhs[1]) / det,
        (m.a * rhs[1] - m.c * rhs[0]) / det,
    ])
}

/// Returns `(a·x + b·m, c·x + dd·m)` coordinate-wise.
pub fn apply_to_state(m: BlockMat2, z: &State) -> State {
    let mut out = State::zeros(z.dim());
    for i in 0..z.dim() {
        let [x, p] = m.apply([z.x[i], z.m[i]]);
        out.x[i] = x;
        out.m[i] = p;
    }
    out
}
