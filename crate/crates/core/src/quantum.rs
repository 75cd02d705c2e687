//! Dense complex operator algebra for one and two qubits.
//!
//! Basis ordering is fixed once for the whole crate: a single qubit uses
//! `(|e⟩, |g⟩)` so that `σz = diag(+1, −1)`, and the system⊗ancilla pair uses
//! `(|e,e⟩, |e,g⟩, |g,e⟩, |g,g⟩)` with the system as the left tensor factor.

use std::fmt;
use std::ops::{Add, AddAssign, Deref, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type C64 = Complex<f64>;

/// Tolerance for exact algebraic identities.
pub const ALGEBRA_TOL: f64 = 1e-12;
/// Tolerance for density-matrix invariants (trace, positivity).
pub const STATE_TOL: f64 = 1e-10;

const MAX_DIM: usize = 4;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn check_dim(dim: usize) -> Result<()> {
    match dim {
        2 | 4 => Ok(()),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

fn same_dim(a: &Operator, b: &Operator) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

/// A square complex matrix of dimension 2 or 4, stored dense and row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Operator {
    dim: usize,
    data: [C64; MAX_DIM * MAX_DIM],
}

impl Operator {
    /// Zero matrix. Panics on a dimension other than 2 or 4.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim == 2 || dim == 4, "unsupported dimension {dim}");
        Self {
            dim,
            data: [C64::new(0.0, 0.0); MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.data[i * dim + i] = r(1.0);
        }
        out
    }

    /// Builds an operator from `dim * dim` row-major entries.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        check_dim(dim)?;
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        let mut out = Self::zeros(dim);
        out.data[..dim * dim].copy_from_slice(entries);
        Ok(out)
    }

    pub fn from_rows(rows: &[&[C64]]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        let mut out = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            out.data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        Ok(out)
    }

    pub fn diag(entries: &[C64]) -> Result<Self> {
        check_dim(entries.len())?;
        let dim = entries.len();
        let mut out = Self::zeros(dim);
        for (i, &v) in entries.iter().enumerate() {
            out.data[i * dim + i] = v;
        }
        Ok(out)
    }

    /// Outer product `|a⟩⟨b|`.
    pub fn outer(a: &[C64], b: &[C64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        check_dim(a.len())?;
        let dim = a.len();
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                out.data[i * dim + j] = a[i] * b[j].conj();
            }
        }
        Ok(out)
    }

    /// Matrix with i.i.d. complex Gaussian entries.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(dim);
        for v in out.data[..dim * dim].iter_mut() {
            *v = c(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        out
    }

    /// Random Hermitian matrix `(M + M†)/2` with Gaussian `M`.
    pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self::random(dim, rng).hermitian_part()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        debug_assert!(i < self.dim && j < self.dim);
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.data[i * self.dim + j] = v;
    }

    pub fn entries(&self) -> &[C64] {
        &self.data[..self.dim * self.dim]
    }

    pub fn dagger(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Checked matrix product.
    pub fn try_mul(&self, rhs: &Operator) -> Result<Operator> {
        same_dim(self, rhs)?;
        Ok(self.matmul(rhs))
    }

    fn matmul(&self, rhs: &Operator) -> Operator {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// `[A, B] = AB − BA`
    pub fn commutator(&self, rhs: &Operator) -> Operator {
        self.matmul(rhs) - rhs.matmul(self)
    }

    /// `{A, B} = AB + BA`
    pub fn anticommutator(&self, rhs: &Operator) -> Operator {
        self.matmul(rhs) + rhs.matmul(self)
    }

    pub fn hermitian_part(&self) -> Operator {
        (*self + self.dagger()) * 0.5
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim, other.dim);
        (*self - *other).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.dim;
        (0..n).all(|i| (i..n).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol))
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = self.hermitian_part();
        if h.dim == 2 {
            let a = h.get(0, 0).re;
            let d = h.get(1, 1).re;
            let b = h.get(0, 1).norm();
            let mean = 0.5 * (a + d);
            let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            return vec![mean - half_gap, mean + half_gap];
        }
        let m = DMatrix::from_fn(h.dim, h.dim, |i, j| h.get(i, j));
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator(dim={}) [", self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self.get(i, j);
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(mut self, rhs: Operator) -> Operator {
        self += rhs;
        self
    }
}

impl AddAssign for Operator {
    fn add_assign(&mut self, rhs: Operator) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in operator sum");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(mut self, rhs: Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in operator difference");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        self
    }
}

impl Neg for Operator {
    type Output = Operator;
    fn neg(mut self) -> Operator {
        for a in self.data.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in operator product");
        self.matmul(&rhs)
    }
}

impl Mul<f64> for Operator {
    type Output = Operator;
    fn mul(mut self, s: f64) -> Operator {
        for a in self.data.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Mul<C64> for Operator {
    type Output = Operator;
    fn mul(mut self, s: C64) -> Operator {
        for a in self.data.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Mul<Operator> for f64 {
    type Output = Operator;
    fn mul(self, op: Operator) -> Operator {
        op * self
    }
}

impl Mul<Operator> for C64 {
    type Output = Operator;
    fn mul(self, op: Operator) -> Operator {
        op * self
    }
}

/// Single-qubit operator labels accepted by [`pauli`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
    /// `σ+ = |e⟩⟨g|`
    Plus,
    /// `σ− = |g⟩⟨e|`
    Minus,
    Identity,
    /// `Π_e = |e⟩⟨e|`
    ProjE,
}

/// Standard single-qubit matrices in the `(|e⟩, |g⟩)` basis.
///
/// The Pauli set satisfies `σ± = (σx ± iσy)/2` and `σxσy = iσz`.
pub fn pauli(which: Axis) -> Operator {
    let z = r(0.0);
    let one = r(1.0);
    let i = c(0.0, 1.0);
    let rows: [[C64; 2]; 2] = match which {
        Axis::X => [[z, one], [one, z]],
        Axis::Y => [[z, -i], [i, z]],
        Axis::Z => [[one, z], [z, -one]],
        Axis::Plus => [[z, one], [z, z]],
        Axis::Minus => [[z, z], [one, z]],
        Axis::Identity => [[one, z], [z, one]],
        Axis::ProjE => [[one, z], [z, z]],
    };
    let mut out = Operator::zeros(2);
    for (a, row) in rows.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            out.set(a, b, v);
        }
    }
    out
}

/// `σ_φ = σx cos φ + σy sin φ`, the quadrature selected by local-oscillator phase φ.
pub fn quadrature(phi: f64) -> Operator {
    pauli(Axis::X) * phi.cos() + pauli(Axis::Y) * phi.sin()
}

/// Kronecker product `a ⊗ b` of two single-qubit operators (system on the left).
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    for op in [a, b] {
        if op.dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: op.dim,
            });
        }
    }
    let mut out = Operator::zeros(4);
    for i in 0..2 {
        for j in 0..2 {
            let aij = a.get(i, j);
            for k in 0..2 {
                for l in 0..2 {
                    out.set(2 * i + k, 2 * j + l, aij * b.get(k, l));
                }
            }
        }
    }
    Ok(out)
}

/// `op ⊗ I`
pub fn on_system(op: &Operator) -> Operator {
    tensor(op, &pauli(Axis::Identity)).expect("single-qubit operator")
}

/// `I ⊗ op`
pub fn on_ancilla(op: &Operator) -> Operator {
    tensor(&pauli(Axis::Identity), op).expect("single-qubit operator")
}

/// Lindblad dissipator `D[L]ρ = LρL† − ½{L†L, ρ}`.
pub fn dissipator(l: &Operator, rho: &Operator) -> Result<Operator> {
    same_dim(l, rho)?;
    Ok(dissipator_unchecked(l, rho))
}

pub(crate) fn dissipator_unchecked(l: &Operator, rho: &Operator) -> Operator {
    let ld = l.dagger();
    let ldl = ld.matmul(l);
    l.matmul(rho).matmul(&ld) - ldl.anticommutator(rho) * 0.5
}

/// Heisenberg-picture dissipator `D†[L]A = L†AL − ½{L†L, A}`,
/// dual to [`dissipator`] under `Tr(A·D[L]ρ) = Tr(D†[L]A·ρ)`.
pub fn adjoint_dissipator(l: &Operator, a: &Operator) -> Result<Operator> {
    same_dim(l, a)?;
    let ld = l.dagger();
    let ldl = ld.matmul(l);
    Ok(ld.matmul(a).matmul(l) - ldl.anticommutator(a) * 0.5)
}

/// `Tr_A` over the second tensor factor of a two-qubit operator.
pub fn partial_trace_ancilla_op(op: &Operator) -> Result<Operator> {
    if op.dim != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: op.dim,
        });
    }
    let mut out = Operator::zeros(2);
    for s in 0..2 {
        for sp in 0..2 {
            let v = op.get(2 * s, 2 * sp) + op.get(2 * s + 1, 2 * sp + 1);
            out.set(s, sp, v);
        }
    }
    Ok(out)
}

/// Reduced system state `ρ_S = Tr_A ρ_SA`.
pub fn partial_trace_ancilla(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let reduced = partial_trace_ancilla_op(rho)?;
    DensityMatrix::new(reduced)
}

/// `Tr(Aρ)`
pub fn expectation(a: &Operator, rho: &Operator) -> Result<C64> {
    same_dim(a, rho)?;
    Ok(trace_product(a, rho))
}

/// `Tr(AB)` without forming the product.
pub(crate) fn trace_product(a: &Operator, b: &Operator) -> C64 {
    let n = a.dim;
    let mut acc = r(0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a.data[i * n + k] * b.data[k * n + i];
        }
    }
    acc
}

/// A validated state: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Copy, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    /// Validates `op` against the state invariants.
    pub fn new(op: Operator) -> Result<Self> {
        let rho = DensityMatrix(op);
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_ket(ket: &[C64]) -> Result<Self> {
        let norm2: f64 = ket.iter().map(|z| z.norm_sqr()).sum();
        if !(norm2 > 0.0) || !norm2.is_finite() {
            return Err(Error::InvalidState("zero or non-finite ket".into()));
        }
        let s = 1.0 / norm2.sqrt();
        let psi: Vec<C64> = ket.iter().map(|z| z * s).collect();
        Self::new(Operator::outer(&psi, &psi)?)
    }

    pub fn excited() -> Self {
        DensityMatrix(pauli(Axis::ProjE))
    }

    pub fn ground() -> Self {
        DensityMatrix(Operator::diag(&[r(0.0), r(1.0)]).expect("dim 2"))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix(Operator::identity(dim) * (1.0 / dim as f64))
    }

    /// Random mixed state `GG†/Tr(GG†)` from a Ginibre matrix `G`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = Operator::random(dim, rng);
        Self::repaired(g.matmul(&g.dagger()))
    }

    /// Hermitian projection followed by trace normalisation; no validation.
    pub fn repaired(op: Operator) -> Self {
        let h = op.hermitian_part();
        let tr = h.trace().re;
        DensityMatrix(h * (1.0 / tr))
    }

    pub fn validate(&self) -> Result<()> {
        let op = &self.0;
        if !op.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        if !op.is_hermitian(ALGEBRA_TOL) {
            return Err(Error::InvalidState("not Hermitian".into()));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -STATE_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.hermitian_eigenvalues()[0]
    }

    /// `ρ ⊗ σ` with `self` as the system factor.
    pub fn tensor(&self, ancilla: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(DensityMatrix(tensor(&self.0, &ancilla.0)?))
    }

    /// Excited-state population of the system, reducing over the ancilla if present.
    pub fn excited_population(&self) -> f64 {
        // Π_e ⊗ I picks out the |e,·⟩ diagonal block in either dimension.
        let half = self.0.dim / 2;
        (0..half).map(|i| self.0.get(i, i).re).sum()
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }
}

impl Deref for DensityMatrix {
    type Target = Operator;
    fn deref(&self) -> &Operator {
        &self.0
    }
}

impl fmt::Debug for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityMatrix({:?})", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op2(rows: [[(f64, f64); 2]; 2]) -> Operator {
        let mut o = Operator::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                o.set(i, j, c(rows[i][j].0, rows[i][j].1));
            }
        }
        o
    }

    #[test]
    fn lowering_operator_maps_excited_to_ground() {
        assert_eq!(pauli(Axis::Minus), op2([[(0., 0.), (0., 0.)], [(1., 0.), (0., 0.)]]));
        assert_eq!(pauli(Axis::ProjE), op2([[(1., 0.), (0., 0.)], [(0., 0.), (0., 0.)]]));
        assert_eq!(pauli(Axis::Plus) * pauli(Axis::Minus), pauli(Axis::ProjE));
    }

    #[test]
    fn pauli_algebra_is_right_handed() {
        let (x, y, z) = (pauli(Axis::X), pauli(Axis::Y), pauli(Axis::Z));
        assert!((x * y).max_abs_diff(&(z * c(0.0, 1.0))) < ALGEBRA_TOL);
        let plus = (x + y * c(0.0, 1.0)) * 0.5;
        assert!(plus.max_abs_diff(&pauli(Axis::Plus)) < ALGEBRA_TOL);
        let sz = pauli(Axis::ProjE) - (pauli(Axis::Identity) - pauli(Axis::ProjE));
        assert_eq!(sz, z);
    }

    #[test]
    fn tensor_examples() {
        let id = pauli(Axis::Identity);
        assert_eq!(tensor(&id, &id).unwrap(), Operator::identity(4));

        let z = pauli(Axis::Z);
        let total_z = tensor(&z, &id).unwrap() + tensor(&id, &z).unwrap();
        // |e,g⟩ is basis index 1
        assert_eq!(total_z.get(1, 1), c(0.0, 0.0));

        let xx = tensor(&pauli(Axis::X), &pauli(Axis::X)).unwrap();
        let yy = tensor(&pauli(Axis::Y), &pauli(Axis::Y)).unwrap();
        let sum = xx + yy;
        // Hand expansion: σxσx + σyσy = 2(|e,g⟩⟨g,e| + |g,e⟩⟨e,g|).
        let mut expected = Operator::zeros(4);
        expected.set(1, 2, c(2.0, 0.0));
        expected.set(2, 1, c(2.0, 0.0));
        assert!(sum.max_abs_diff(&expected) < ALGEBRA_TOL);
    }

    #[test]
    fn tensor_rejects_two_qubit_factor() {
        let big = Operator::identity(4);
        assert!(matches!(
            tensor(&big, &pauli(Axis::X)),
            Err(Error::DimensionMismatch { expected: 2, found: 4 })
        ));
    }

    #[test]
    fn dissipator_examples() {
        let sm = pauli(Axis::Minus);
        let e = DensityMatrix::excited();
        let g = DensityMatrix::ground();
        let out = dissipator(&sm, &e).unwrap();
        assert!(out.max_abs_diff(&(*g.as_operator() - *e.as_operator())) < ALGEBRA_TOL);
        assert!(dissipator(&sm, &g).unwrap().max_abs() < ALGEBRA_TOL);

        let plus = DensityMatrix::from_ket(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let expected = op2([[(-0.5, 0.), (-0.25, 0.)], [(-0.25, 0.), (0.5, 0.)]]);
        assert!(dissipator(&sm, &plus).unwrap().max_abs_diff(&expected) < ALGEBRA_TOL);
    }

    #[test]
    fn dissipator_dimension_mismatch() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(dissipator(&pauli(Axis::Minus), &rho).is_err());
        assert!(adjoint_dissipator(&pauli(Axis::Minus), &Operator::identity(4)).is_err());
        assert!(expectation(&pauli(Axis::Z), &rho).is_err());
    }

    #[test]
    fn adjoint_dissipator_kills_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2, 4] {
            for _ in 0..10 {
                let l = Operator::random(dim, &mut rng);
                let out = adjoint_dissipator(&l, &Operator::identity(dim)).unwrap();
                assert!(out.max_abs() < ALGEBRA_TOL);
            }
        }
    }

    #[test]
    fn adjoint_dissipator_duality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for k in 0..100 {
            let dim = if k % 2 == 0 { 2 } else { 4 };
            let a = Operator::random_hermitian(dim, &mut rng);
            let l = Operator::random(dim, &mut rng);
            let rho = DensityMatrix::random(dim, &mut rng);
            let lhs = trace_product(&a, &dissipator(&l, &rho).unwrap());
            let rhs = trace_product(&adjoint_dissipator(&l, &a).unwrap(), &rho);
            assert!((lhs - rhs).norm() < 1e-10, "instance {k}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn feedback_jump_operator_on_sigma_z() {
        // L = √γσ− + s·iλσy. Hand evaluation in the (|e⟩,|g⟩) basis:
        // ⟨g|L|e⟩ = √γ − sλ and ⟨e|L|g⟩ = sλ, so
        // D†[L]σz = diag(−2(√γ − sλ)², 2λ²) = −Γ(σz + I) + 2λ² I
        // with Γ = γ − 2s√γλ + 2λ².
        let (gamma, lambda) = (0.02_f64, 0.05_f64);
        let sz = pauli(Axis::Z);
        for s in [1.0, -1.0] {
            let l = pauli(Axis::Minus) * gamma.sqrt() + pauli(Axis::Y) * c(0.0, s * lambda);
            let out = adjoint_dissipator(&l, &sz).unwrap();
            let a = gamma.sqrt() - s * lambda;
            let expected = Operator::diag(&[r(-2.0 * a * a), r(2.0 * lambda * lambda)]).unwrap();
            assert!(out.max_abs_diff(&expected) < ALGEBRA_TOL);

            let rate = gamma - 2.0 * s * gamma.sqrt() * lambda + 2.0 * lambda * lambda;
            let id = Operator::identity(2);
            let closed = (sz + id) * (-rate) + id * (2.0 * lambda * lambda);
            assert!(out.max_abs_diff(&closed) < ALGEBRA_TOL);
        }
    }

    #[test]
    fn partial_trace_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = DensityMatrix::random(2, &mut rng);
            let a = DensityMatrix::random(2, &mut rng);
            let reduced = partial_trace_ancilla(&s.tensor(&a).unwrap()).unwrap();
            assert!(reduced.max_abs_diff(&s) < ALGEBRA_TOL);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::from_ket(&[c(0., 0.), c(h, 0.), c(h, 0.), c(0., 0.)]).unwrap();
        let reduced = partial_trace_ancilla(&bell).unwrap();
        assert!(reduced.max_abs_diff(&DensityMatrix::maximally_mixed(2)) < ALGEBRA_TOL);

        for _ in 0..20 {
            let rho = DensityMatrix::random(4, &mut rng);
            let t = partial_trace_ancilla(&rho).unwrap().trace();
            assert!((t - r(1.0)).norm() < STATE_TOL);
        }
        assert!(partial_trace_ancilla(&DensityMatrix::excited()).is_err());
    }

    #[test]
    fn expectation_examples() {
        let e = DensityMatrix::excited();
        assert_eq!(expectation(&pauli(Axis::ProjE), &e).unwrap(), r(1.0));
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!(expectation(&pauli(Axis::Z), &mixed).unwrap().norm() < ALGEBRA_TOL);
        let plus = DensityMatrix::from_ket(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let v = expectation(&quadrature(0.0), &plus).unwrap();
        assert!((v - r(1.0)).norm() < 1e-10);
    }

    #[test]
    fn state_validation() {
        assert!(DensityMatrix::new(Operator::identity(2)).is_err());
        let neg = Operator::diag(&[r(1.5), r(-0.5)]).unwrap();
        assert!(matches!(DensityMatrix::new(neg), Err(Error::InvalidState(_))));
        let mut non_herm = *DensityMatrix::maximally_mixed(2).as_operator();
        non_herm.set(0, 1, c(0.1, 0.0));
        assert!(DensityMatrix::new(non_herm).is_err());
        assert!(Operator::from_rows(&[&[r(1.0)]]).is_err());
        assert!(Operator::from_row_major(2, &[r(1.0); 3]).is_err());
    }

    #[test]
    fn four_by_four_eigenvalues_match_known_spectrum() {
        let bell = DensityMatrix::from_ket(&[c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]).unwrap();
        let ev = bell.hermitian_eigenvalues();
        assert!(ev[0].abs() < 1e-12 && (ev[3] - 1.0).abs() < 1e-12);
    }

    fn arb_state(dim: usize) -> impl Strategy<Value = DensityMatrix> {
        proptest::collection::vec(-1.0f64..1.0, 2 * dim * dim).prop_map(move |v| {
            let entries: Vec<C64> = v.chunks(2).map(|p| c(p[0], p[1])).collect();
            let g = Operator::from_row_major(dim, &entries).unwrap();
            DensityMatrix::repaired(g * g.dagger() + Operator::identity(dim) * 1e-3)
        })
    }

    fn arb_op(dim: usize) -> impl Strategy<Value = Operator> {
        proptest::collection::vec(-2.0f64..2.0, 2 * dim * dim).prop_map(move |v| {
            let entries: Vec<C64> = v.chunks(2).map(|p| c(p[0], p[1])).collect();
            Operator::from_row_major(dim, &entries).unwrap()
        })
    }

    proptest! {
        #[test]
        fn dissipator_is_traceless_and_hermitian(
            l in arb_op(4), rho in arb_state(4)
        ) {
            let out = dissipator(&l, &rho).unwrap();
            prop_assert!(out.trace().norm() < ALGEBRA_TOL);
            prop_assert!(out.is_hermitian(ALGEBRA_TOL));
        }

        #[test]
        fn tensor_trace_factorises(a in arb_op(2), b in arb_op(2)) {
            let t = tensor(&a, &b).unwrap().trace();
            prop_assert!((t - a.trace() * b.trace()).norm() < ALGEBRA_TOL);
        }

        #[test]
        fn tracing_out_any_ancilla_recovers_system(s in arb_state(2), a in arb_state(2)) {
            let reduced = partial_trace_ancilla(&s.tensor(&a).unwrap()).unwrap();
            prop_assert!(reduced.max_abs_diff(&s) < ALGEBRA_TOL);
        }
    }
}
