//! Small dense complex matrices and density matrices.
//!
//! Matrices are stored row-major in a `SmallVec` so that the 2×2 atom
//! problems never touch the heap. Everything here is plain value
//! semantics; the trajectory engine clones freely.
//!
//! Two-level conventions: basis index 0 is the excited state |e⟩
//! (σ_z = +1), index 1 is the ground state |g⟩ (σ_z = −1), and the
//! lowering operator c = (σ_x − iσ_y)/2 maps |e⟩ to |g⟩.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Maximum |ρ_jk − conj(ρ_kj)| accepted for a density matrix.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Maximum |Tr ρ − 1| accepted for a density matrix.
pub const TRACE_TOL: f64 = 1e-9;
/// Smallest eigenvalue accepted for a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Slack on |r|² ≤ 1 for Bloch vectors.
pub const BLOCH_NORM_TOL: f64 = 1e-8;
/// Largest imaginary residue tolerated on quantities that must be real.
pub const REAL_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

type Storage = SmallVec<[C64; 4]>;

/// Square complex matrix, row-major.
#[derive(PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Storage,
}

impl Clone for ComplexMatrix {
    fn clone(&self) -> Self {
        match self.as2() {
            Some(x) => Self::from_array2(*x),
            None => ComplexMatrix {
                dim: self.dim,
                data: self.data.clone(),
            },
        }
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        ComplexMatrix {
            dim,
            data: SmallVec::from_elem(ZERO, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Storage::with_capacity(dim * dim);
        for j in 0..dim {
            for k in 0..dim {
                data.push(f(j, k));
            }
        }
        ComplexMatrix { dim, data }
    }

    /// Builds a matrix from row-major entries. The entry count must be a
    /// perfect square and every entry finite.
    pub fn from_row_major(entries: &[C64]) -> Result<Self> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != entries.len() {
            return Err(Error::InvalidDimension {
                dim: entries.len(),
                reason: "entry count is not a positive perfect square",
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite matrix entry".into()));
        }
        Ok(ComplexMatrix {
            dim,
            data: entries.iter().copied().collect(),
        })
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (k, v) in values.iter().enumerate() {
            m[(k, k)] = *v;
        }
        m
    }

    #[inline]
    fn as2(&self) -> Option<&[C64; 4]> {
        self.data.as_slice().try_into().ok()
    }

    #[inline]
    fn from_array2(entries: [C64; 4]) -> Self {
        ComplexMatrix {
            dim: 2,
            data: SmallVec::from_buf(entries),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |j, k| self[(k, j)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self[(k, k)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        if let Some(x) = self.as2() {
            return Self::from_array2([x[0] * s, x[1] * s, x[2] * s, x[3] * s]);
        }
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &ComplexMatrix, s: C64) {
        debug_assert_eq!(self.dim, other.dim);
        if let Some(y) = other.as2() {
            let y = *y;
            let x = self.data.as_mut_slice();
            for k in 0..4 {
                x[k] += y[k] * s;
            }
            return;
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }

    pub fn commutator(&self, other: &ComplexMatrix) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &ComplexMatrix) -> Self {
        &(self * other) + &(other * self)
    }

    /// `self · x · self†`
    pub fn sandwich(&self, x: &ComplexMatrix) -> Self {
        if let (Some(m), Some(r)) = (self.as2(), x.as2()) {
            return Self::from_array2(sandwich2(m, r));
        }
        let left = self * x;
        mul_dagger(&left, self)
    }

    /// Tr[self · other] without forming the product.
    pub fn trace_product(&self, other: &ComplexMatrix) -> C64 {
        debug_assert_eq!(self.dim, other.dim);
        if let (Some(x), Some(y)) = (self.as2(), other.as2()) {
            return x[0] * y[0] + x[1] * y[2] + x[2] * y[1] + x[3] * y[3];
        }
        let n = self.dim;
        let mut acc = ZERO;
        for j in 0..n {
            for k in 0..n {
                acc += self.data[j * n + k] * other.data[k * n + j];
            }
        }
        acc
    }

    /// Largest |a_jk − conj(a_kj)|.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.dim {
            for k in j..self.dim {
                worst = worst.max((self[(j, k)] - self[(k, j)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> Self {
        if let Some(x) = self.as2() {
            let off = 0.5 * (x[1] + x[2].conj());
            return Self::from_array2([C64::new(x[0].re, 0.0), off, off.conj(), C64::new(x[3].re, 0.0)]);
        }
        Self::from_fn(self.dim, |j, k| 0.5 * (self[(j, k)] + self[(k, j)].conj()))
    }

    /// Maximum absolute row sum; an upper bound on the spectral norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|k| self[(j, k)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring with a truncated Taylor
    /// series. Adequate for the well-conditioned generators used here.
    pub fn expm(&self) -> Self {
        let norm = self.norm_inf();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scaled = self.scale_real(0.5f64.powi(squarings as i32));
        let mut result = Self::identity(self.dim);
        let mut term = Self::identity(self.dim);
        for order in 1..=20 {
            term = (&term * &scaled).scale_real(1.0 / order as f64);
            result += &term;
            if term.norm_inf() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            result = &result * &result;
        }
        result
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let mut values = if self.dim == 2 {
            let a = self[(0, 0)].re;
            let d = self[(1, 1)].re;
            let b = self[(0, 1)].norm();
            let mid = 0.5 * (a + d);
            let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mid - half_gap, mid + half_gap]
        } else {
            let m = nalgebra::DMatrix::from_fn(self.dim, self.dim, |j, k| self[(j, k)]);
            m.symmetric_eigenvalues().iter().copied().collect()
        };
        values.sort_by(|a, b| a.total_cmp(b));
        values
    }
}

/// `a · b†`
#[inline]
fn mul2(x: &[C64; 4], y: &[C64; 4]) -> [C64; 4] {
    [
        x[0] * y[0] + x[1] * y[2],
        x[0] * y[1] + x[1] * y[3],
        x[2] * y[0] + x[3] * y[2],
        x[2] * y[1] + x[3] * y[3],
    ]
}

/// x · y†
#[inline]
fn mul_dagger2(x: &[C64; 4], y: &[C64; 4]) -> [C64; 4] {
    [
        x[0] * y[0].conj() + x[1] * y[1].conj(),
        x[0] * y[2].conj() + x[1] * y[3].conj(),
        x[2] * y[0].conj() + x[3] * y[1].conj(),
        x[2] * y[2].conj() + x[3] * y[3].conj(),
    ]
}

#[inline]
fn sandwich2(m: &[C64; 4], x: &[C64; 4]) -> [C64; 4] {
    mul_dagger2(&mul2(m, x), m)
}

fn mul_dagger(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim;
    if let (Some(x), Some(y)) = (a.as2(), b.as2()) {
        return ComplexMatrix::from_array2(mul_dagger2(x, y));
    }
    let mut out = ComplexMatrix::zeros(n);
    for j in 0..n {
        for k in 0..n {
            let mut acc = ZERO;
            for l in 0..n {
                acc += a.data[j * n + l] * b.data[k * n + l].conj();
            }
            out.data[j * n + k] = acc;
        }
    }
    out
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (j, k): (usize, usize)) -> &C64 {
        &self.data[j * self.dim + k]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (j, k): (usize, usize)) -> &mut C64 {
        &mut self.data[j * self.dim + k]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        if let (Some(x), Some(y)) = (self.as2(), rhs.as2()) {
            return ComplexMatrix::from_array2(mul2(x, y));
        }
        let mut out = ComplexMatrix::zeros(n);
        for j in 0..n {
            for l in 0..n {
                let a = self.data[j * n + l];
                if a == ZERO {
                    continue;
                }
                for k in 0..n {
                    out.data[j * n + k] += a * rhs.data[l * n + k];
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        debug_assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for j in 0..self.dim {
            write!(f, "  ")?;
            for k in 0..self.dim {
                let z = self[(j, k)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Point in the Bloch ball, ρ = ½(I + xσ_x + yσ_y + zσ_z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.z].iter().all(|v| v.is_finite()) && self.norm_sq() <= 1.0 + BLOCH_NORM_TOL
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates all invariants, including positivity.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let rho = DensityMatrix(m);
        rho.check_invariants()?;
        Ok(rho)
    }

    /// Hermitizes and renormalizes the trace to one.
    pub(crate) fn normalized(m: ComplexMatrix) -> Self {
        let h = m.hermitian_part();
        let tr = h.trace().re;
        DensityMatrix(h.scale_real(1.0 / tr))
    }

    /// normalized(M ρ M† + w · L ρ L†)
    pub(crate) fn kraus_update(m: &ComplexMatrix, rho: &DensityMatrix, l: &ComplexMatrix, weight: f64) -> Self {
        if let (Some(m2), Some(r2), Some(l2)) = (m.as2(), rho.0.as2(), l.as2()) {
            let mut out = sandwich2(m2, r2);
            if weight > 0.0 {
                let extra = sandwich2(l2, r2);
                for k in 0..4 {
                    out[k] += extra[k] * weight;
                }
            }
            let (a, d) = (out[0].re, out[3].re);
            let inv = 1.0 / (a + d);
            let off = 0.5 * inv * (out[1] + out[2].conj());
            return DensityMatrix(ComplexMatrix::from_array2([
                C64::new(a * inv, 0.0),
                off,
                off.conj(),
                C64::new(d * inv, 0.0),
            ]));
        }
        let mut out = m.sandwich(&rho.0);
        if weight > 0.0 {
            out.add_scaled(&l.sandwich(&rho.0), C64::new(weight, 0.0));
        }
        Self::normalized(out)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// |k⟩⟨k|
    pub fn basis_state(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidDimension {
                dim,
                reason: "basis index out of range",
            });
        }
        let mut m = ComplexMatrix::zeros(dim);
        m[(k, k)] = ONE;
        Ok(DensityMatrix(m))
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) state vector.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let norm_sq: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if psi.is_empty() || !(norm_sq > 0.0) || !norm_sq.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        let m = ComplexMatrix::from_fn(psi.len(), |j, k| psi[j] * psi[k].conj() / norm_sq);
        Ok(DensityMatrix(m))
    }

    pub fn from_bloch(b: BlochVector) -> Result<Self> {
        if !b.is_valid() {
            return Err(Error::InvalidState(format!(
                "Bloch vector ({}, {}, {}) outside the unit ball",
                b.x, b.y, b.z
            )));
        }
        let m = ComplexMatrix::from_row_major(&[
            C64::new(0.5 * (1.0 + b.z), 0.0),
            C64::new(0.5 * b.x, -0.5 * b.y),
            C64::new(0.5 * b.x, 0.5 * b.y),
            C64::new(0.5 * (1.0 - b.z), 0.0),
        ])?;
        Ok(DensityMatrix(m))
    }

    pub fn to_bloch(&self) -> Result<BlochVector> {
        self.require_qubit("density_to_bloch")?;
        let m = &self.0;
        Ok(BlochVector {
            x: 2.0 * m[(1, 0)].re,
            y: 2.0 * m[(1, 0)].im,
            z: (m[(0, 0)] - m[(1, 1)]).re,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Checks Hermiticity, unit trace and positivity (the last one costs an
    /// eigendecomposition, so the engine only calls this when asked to).
    pub fn check_invariants(&self) -> Result<()> {
        let m = &self.0;
        if !m.is_finite() {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = m.hermiticity_defect();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("Hermiticity defect {herm:.3e}")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from one")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.0.hermitian_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0).re
    }

    /// Tr[ρ_1 ρ_2].
    pub fn relative_purity(&self, other: &DensityMatrix) -> Result<f64> {
        self.require_same_dim(other)?;
        Ok(self.relative_purity_unchecked(other))
    }

    #[inline]
    pub(crate) fn relative_purity_unchecked(&self, other: &DensityMatrix) -> f64 {
        let v = self.0.trace_product(&other.0);
        debug_assert!(v.im.abs() < 1e-8, "relative purity imaginary residue {}", v.im);
        v.re
    }

    /// Uhlmann fidelity via the two-dimensional closed form
    /// F = Tr(ρ_1ρ_2) + 2√(det ρ_1 · det ρ_2).
    pub fn fidelity_2d(&self, other: &DensityMatrix) -> Result<f64> {
        self.require_qubit("fidelity_2d")?;
        other.require_qubit("fidelity_2d")?;
        let overlap = self.relative_purity_unchecked(other);
        let det_product = (self.det2() * other.det2()).max(0.0);
        Ok((overlap + 2.0 * det_product.sqrt()).clamp(0.0, 1.0))
    }

    fn det2(&self) -> f64 {
        let m = &self.0;
        (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).re.max(0.0)
    }

    /// Tr[ρ A].
    pub fn expectation(&self, op: &ComplexMatrix) -> C64 {
        self.0.trace_product(op)
    }

    fn require_qubit(&self, op: &'static str) -> Result<()> {
        if self.dim() != 2 {
            return Err(Error::UnsupportedDimension { op, dim: self.dim() });
        }
        Ok(())
    }

    fn require_same_dim(&self, other: &DensityMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityMatrix{:?}", self.0)
    }
}

/// Pauli matrices and the atomic lowering operator.
#[derive(Debug, Clone)]
pub struct AtomOperators {
    pub sigma_x: ComplexMatrix,
    pub sigma_y: ComplexMatrix,
    pub sigma_z: ComplexMatrix,
    pub lowering: ComplexMatrix,
}

pub fn make_atom_operators() -> AtomOperators {
    let i = C64::new(0.0, 1.0);
    let sigma_x = ComplexMatrix::from_fn(2, |j, k| if j != k { ONE } else { ZERO });
    let sigma_y = ComplexMatrix::from_fn(2, |j, k| match (j, k) {
        (0, 1) => -i,
        (1, 0) => i,
        _ => ZERO,
    });
    let sigma_z = ComplexMatrix::diagonal(&[ONE, -ONE]);
    let lowering = (&sigma_x - &sigma_y.scale(i)).scale_real(0.5);
    AtomOperators {
        sigma_x,
        sigma_y,
        sigma_z,
        lowering,
    }
}

/// Truncated ladder operators (a, a†) on `n_trunc` Fock levels.
pub fn make_fock_operators(n_trunc: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if n_trunc < 2 {
        return Err(Error::InvalidDimension {
            dim: n_trunc,
            reason: "Fock truncation needs at least two levels",
        });
    }
    let a = ComplexMatrix::from_fn(n_trunc, |j, k| {
        if k == j + 1 {
            C64::new((k as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let a_dag = a.dagger();
    Ok((a, a_dag))
}
