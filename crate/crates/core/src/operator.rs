//! Tensor-product Hilbert spaces for two ions and up to two motional modes,
//! and the operators and density matrices that live on them.
//!
//! Basis ordering is fixed as `ion1 ⊗ ion2 ⊗ mode3 ⊗ [mode4]`, row-major, with
//! the internal levels of each ion ordered `(↓, ↑, a, x)`. A basis index is
//! therefore
//!
//! ```text
//! index = ((l1 * L + l2) * M3 + n3) * M4 + n4
//! ```
//!
//! where `L` is the number of ion levels and `M3`, `M4` the mode truncations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Internal level of one qubit ion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Down = 0,
    Up = 1,
    /// Auxiliary level `|a⟩` reached by the carrier drive.
    Aux = 2,
    /// Aggregate of hyperfine states outside `{↓, ↑, a}` with no return path.
    Leak = 3,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Down, Level::Up, Level::Aux, Level::Leak];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Down => "down",
            Level::Up => "up",
            Level::Aux => "aux",
            Level::Leak => "leak",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s {
            "down" | "d" => Some(Level::Down),
            "up" | "u" => Some(Level::Up),
            "aux" | "a" => Some(Level::Aux),
            "leak" | "x" => Some(Level::Leak),
            _ => None,
        }
    }
}

/// Which qubit ion a local operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ion {
    First,
    Second,
}

impl Ion {
    pub fn from_number(n: usize) -> Result<Ion> {
        match n {
            1 => Ok(Ion::First),
            2 => Ok(Ion::Second),
            _ => Err(Error::IndexOutOfRange(format!("ion index {n} (expected 1 or 2)"))),
        }
    }
}

/// Motional modes carried by a layout, in storage order.
pub const MODE3: usize = 0;
pub const MODE4: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    ion_levels: usize,
    mode_dims: Vec<usize>,
}

/// A basis state decoded from a flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisState {
    pub ion1: Level,
    pub ion2: Level,
    pub modes: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(ion_levels: usize, mode_dims: &[usize]) -> Result<Self> {
        if !(3..=4).contains(&ion_levels) {
            return Err(Error::InvalidLayout(format!(
                "ion_levels must be 3 or 4, got {ion_levels}"
            )));
        }
        if mode_dims.is_empty() || mode_dims.len() > 2 {
            return Err(Error::InvalidLayout(format!(
                "expected one or two motional modes, got {}",
                mode_dims.len()
            )));
        }
        if let Some(&d) = mode_dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidLayout(format!(
                "mode truncation must be at least 2, got {d}"
            )));
        }
        Ok(Self {
            ion_levels,
            mode_dims: mode_dims.to_vec(),
        })
    }

    pub fn ion_levels(&self) -> usize {
        self.ion_levels
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.mode_dims
    }

    pub fn mode_count(&self) -> usize {
        self.mode_dims.len()
    }

    pub fn has_mode4(&self) -> bool {
        self.mode_dims.len() > MODE4
    }

    pub fn has_level(&self, level: Level) -> bool {
        level.index() < self.ion_levels
    }

    /// Dimension of the two-ion internal space.
    pub fn spin_dim(&self) -> usize {
        self.ion_levels * self.ion_levels
    }

    /// Dimension of the motional space.
    pub fn motional_dim(&self) -> usize {
        self.mode_dims.iter().product()
    }

    pub fn total_dim(&self) -> usize {
        self.spin_dim() * self.motional_dim()
    }

    pub fn spin_index(&self, ion1: Level, ion2: Level) -> usize {
        ion1.index() * self.ion_levels + ion2.index()
    }

    pub fn motional_index(&self, modes: &[usize]) -> usize {
        self.mode_dims
            .iter()
            .zip(modes)
            .fold(0, |acc, (&d, &n)| acc * d + n)
    }

    pub fn index(&self, ion1: Level, ion2: Level, modes: &[usize]) -> Result<usize> {
        if !self.has_level(ion1) || !self.has_level(ion2) {
            return Err(Error::IndexOutOfRange("level not present in layout".into()));
        }
        if modes.len() != self.mode_dims.len()
            || modes.iter().zip(&self.mode_dims).any(|(&n, &d)| n >= d)
        {
            return Err(Error::IndexOutOfRange(format!(
                "Fock indices {modes:?} for truncations {:?}",
                self.mode_dims
            )));
        }
        Ok(self.spin_index(ion1, ion2) * self.motional_dim() + self.motional_index(modes))
    }

    pub fn decode(&self, index: usize) -> BasisState {
        let m = self.motional_dim();
        let spin = index / m;
        let mut rest = index % m;
        let mut modes = vec![0; self.mode_dims.len()];
        for (k, &d) in self.mode_dims.iter().enumerate().rev() {
            modes[k] = rest % d;
            rest /= d;
        }
        BasisState {
            ion1: Level::from_index(spin / self.ion_levels).expect("level index"),
            ion2: Level::from_index(spin % self.ion_levels).expect("level index"),
            modes,
        }
    }

    pub fn basis_ket(&self, ion1: Level, ion2: Level, modes: &[usize]) -> Result<DVector<Complex64>> {
        let mut v = DVector::zeros(self.total_dim());
        v[self.index(ion1, ion2, modes)?] = ONE;
        Ok(v)
    }

    /// Same ions, motional truncations replaced.
    pub fn with_mode_dims(&self, mode_dims: &[usize]) -> Result<Self> {
        Self::new(self.ion_levels, mode_dims)
    }
}

/// A sparse operator on a [`HilbertLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumOperator {
    layout: HilbertLayout,
    matrix: CsrMatrix,
}

impl QuantumOperator {
    pub fn new(layout: &HilbertLayout, matrix: CsrMatrix) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self {
            layout: layout.clone(),
            matrix,
        })
    }

    pub fn zero(layout: &HilbertLayout) -> Self {
        let n = layout.total_dim();
        Self {
            layout: layout.clone(),
            matrix: CsrMatrix::zeros(n, n),
        }
    }

    pub fn identity(layout: &HilbertLayout) -> Self {
        Self {
            layout: layout.clone(),
            matrix: CsrMatrix::identity(layout.total_dim()),
        }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.is_zero()
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: self.matrix.add(&other.matrix),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.scale(s),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: self.matrix.matmul(&other.matrix),
        })
    }

    pub fn adjoint(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// `self + self†`.
    pub fn plus_adjoint(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.add(&self.matrix.adjoint()),
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.matrix.max_abs_diff(&self.matrix.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn apply(&self, ket: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if ket.len() != self.layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.total_dim(),
                found: ket.len(),
            });
        }
        Ok(DVector::from_vec(self.matrix.mul_vec(ket.as_slice())))
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.matrix.to_dense()
    }

    pub fn matrix_element(&self, bra: &DVector<Complex64>, ket: &DVector<Complex64>) -> Result<Complex64> {
        Ok(bra.dotc(&self.apply(ket)?))
    }
}

/// `|to⟩⟨from|` on a single ion with `levels` internal states.
pub fn transition(levels: usize, to: Level, from: Level) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(levels, levels);
    m[(to.index(), from.index())] = ONE;
    m
}

fn lowering_matrix(dim: usize) -> CsrMatrix {
    CsrMatrix::from_triplets(
        dim,
        dim,
        (1..dim).map(|n| (n - 1, n, Complex64::new((n as f64).sqrt(), 0.0))),
    )
}

/// Embed a single-ion operator acting on `ion`, identity on the other ion and
/// on the motion.
pub fn embed_ion_operator(
    layout: &HilbertLayout,
    ion: Ion,
    local: &DMatrix<Complex64>,
) -> Result<QuantumOperator> {
    let l = layout.ion_levels();
    if local.nrows() != l || local.ncols() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            found: local.nrows().max(local.ncols()),
        });
    }
    let local = CsrMatrix::from_dense(local);
    let other = CsrMatrix::identity(l);
    let spin = match ion {
        Ion::First => local.kron(&other),
        Ion::Second => other.kron(&local),
    };
    let matrix = spin.kron(&CsrMatrix::identity(layout.motional_dim()));
    QuantumOperator::new(layout, matrix)
}

/// Embed a two-ion operator (dimension `L² × L²`), identity on the motion.
pub fn embed_spin_operator(layout: &HilbertLayout, spin: &DMatrix<Complex64>) -> Result<QuantumOperator> {
    let d = layout.spin_dim();
    if spin.nrows() != d || spin.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: spin.nrows().max(spin.ncols()),
        });
    }
    let matrix = CsrMatrix::from_dense(spin).kron(&CsrMatrix::identity(layout.motional_dim()));
    QuantumOperator::new(layout, matrix)
}

/// Truncated annihilation operator of motional mode `mode_index`
/// (`MODE3 = 0`, `MODE4 = 1`). On the truncated space `b|n_max⟩` keeps its
/// usual value; only `b b†` differs from the untruncated algebra.
pub fn mode_lowering(layout: &HilbertLayout, mode_index: usize) -> Result<QuantumOperator> {
    let dims = layout.mode_dims();
    if mode_index >= dims.len() {
        return Err(Error::IndexOutOfRange(format!(
            "mode index {mode_index} for a layout with {} mode(s)",
            dims.len()
        )));
    }
    let mut motional = CsrMatrix::identity(1);
    for (k, &d) in dims.iter().enumerate() {
        let factor = if k == mode_index {
            lowering_matrix(d)
        } else {
            CsrMatrix::identity(d)
        };
        motional = motional.kron(&factor);
    }
    let matrix = CsrMatrix::identity(layout.spin_dim()).kron(&motional);
    QuantumOperator::new(layout, matrix)
}

/// Number operator `b†b` of a mode.
pub fn mode_number(layout: &HilbertLayout, mode_index: usize) -> Result<QuantumOperator> {
    let b = mode_lowering(layout, mode_index)?;
    b.adjoint().mul(&b)
}

/// Thermal (geometric) Fock distribution `p_n ∝ (n̄/(1+n̄))^n`, renormalised on
/// the truncated space.
pub fn thermal_populations(dim: usize, nbar: f64) -> Vec<f64> {
    if nbar <= 0.0 {
        let mut p = vec![0.0; dim];
        p[0] = 1.0;
        return p;
    }
    let ratio = nbar / (1.0 + nbar);
    let raw: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / z).collect()
}

/// Tolerances for [`DensityState::validate`].
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// A dense density matrix on a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    layout: HilbertLayout,
    matrix: DMatrix<Complex64>,
}

impl DensityState {
    /// Wrap a matrix after checking its shape; physical validity is checked by
    /// [`validate`](Self::validate).
    pub fn from_matrix(layout: &HilbertLayout, matrix: DMatrix<Complex64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self {
            layout: layout.clone(),
            matrix,
        })
    }

    pub fn pure(layout: &HilbertLayout, ket: &DVector<Complex64>) -> Result<Self> {
        let norm = ket.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        let k = ket / Complex64::new(norm, 0.0);
        Self::from_matrix(layout, &k * k.adjoint())
    }

    pub fn basis(layout: &HilbertLayout, ion1: Level, ion2: Level, modes: &[usize]) -> Result<Self> {
        Self::pure(layout, &layout.basis_ket(ion1, ion2, modes)?)
    }

    /// `σ_spin ⊗ diag(p_motion)` for a two-ion state and a diagonal motional
    /// distribution over the flattened motional index.
    pub fn product(layout: &HilbertLayout, spin: &DMatrix<Complex64>, motional: &[f64]) -> Result<Self> {
        let d = layout.spin_dim();
        let m = layout.motional_dim();
        if spin.nrows() != d || spin.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: spin.nrows(),
            });
        }
        if motional.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: motional.len(),
            });
        }
        let mut rho = DMatrix::zeros(d * m, d * m);
        for s in 0..d {
            for t in 0..d {
                let v = spin[(s, t)];
                if v == ZERO {
                    continue;
                }
                for (k, &p) in motional.iter().enumerate() {
                    rho[(s * m + k, t * m + k)] = v * p;
                }
            }
        }
        Self::from_matrix(layout, rho)
    }

    /// Motional distribution of independent thermal modes with the given
    /// occupations, flattened in layout order.
    pub fn thermal_motion(layout: &HilbertLayout, nbars: &[f64]) -> Vec<f64> {
        let per_mode: Vec<Vec<f64>> = layout
            .mode_dims()
            .iter()
            .enumerate()
            .map(|(k, &d)| thermal_populations(d, nbars.get(k).copied().unwrap_or(0.0)))
            .collect();
        let mut out = vec![1.0];
        for p in per_mode {
            out = out
                .iter()
                .flat_map(|&a| p.iter().map(move |&b| a * b))
                .collect();
        }
        out
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.matrix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let h = self.hermiticity_error();
        if h > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {h:.3e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let e = self.min_eigenvalue();
        if e < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {e:.3e}")));
        }
        Ok(())
    }

    /// Partial trace over all motional modes, leaving the `L² × L²` two-ion
    /// density matrix.
    pub fn reduce_to_ions(&self) -> DMatrix<Complex64> {
        let d = self.layout.spin_dim();
        let m = self.layout.motional_dim();
        DMatrix::from_fn(d, d, |s, t| (0..m).map(|k| self.matrix[(s * m + k, t * m + k)]).sum())
    }

    /// Fock-state populations of one mode.
    pub fn mode_populations(&self, mode_index: usize) -> Result<Vec<f64>> {
        let dims = self.layout.mode_dims();
        if mode_index >= dims.len() {
            return Err(Error::IndexOutOfRange(format!("mode index {mode_index}")));
        }
        let mut p = vec![0.0; dims[mode_index]];
        for i in 0..self.layout.total_dim() {
            let b = self.layout.decode(i);
            p[b.modes[mode_index]] += self.matrix[(i, i)].re;
        }
        Ok(p)
    }

    pub fn mean_occupation(&self, mode_index: usize) -> Result<f64> {
        Ok(self
            .mode_populations(mode_index)?
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.matrix - &other.matrix)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }
}

/// `tr(ρ O)`.
pub fn expectation(rho: &DensityState, op: &QuantumOperator) -> Result<Complex64> {
    if rho.layout != op.layout {
        return Err(Error::LayoutMismatch);
    }
    let m = op.matrix();
    let mut acc = ZERO;
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&k, &v) in cols.iter().zip(vals) {
            acc += v * rho.matrix[(k, i)];
        }
    }
    Ok(acc)
}

pub(crate) fn min_hermitian_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout_3_5() -> HilbertLayout {
        HilbertLayout::new(3, &[5]).unwrap()
    }

    #[test]
    fn layout_dimensions() {
        assert_eq!(HilbertLayout::new(3, &[5]).unwrap().total_dim(), 45);
        assert_eq!(HilbertLayout::new(4, &[5, 3]).unwrap().total_dim(), 240);
        assert!(HilbertLayout::new(2, &[5]).is_err());
        assert!(HilbertLayout::new(4, &[]).is_err());
        assert!(HilbertLayout::new(4, &[5, 1]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let l = HilbertLayout::new(4, &[5, 3]).unwrap();
        for i in 0..l.total_dim() {
            let b = l.decode(i);
            assert_eq!(l.index(b.ion1, b.ion2, &b.modes).unwrap(), i);
        }
        assert_eq!(l.index(Level::Down, Level::Down, &[0, 0]).unwrap(), 0);
        assert_eq!(l.index(Level::Down, Level::Up, &[0, 0]).unwrap(), 15);
        assert_eq!(l.index(Level::Up, Level::Down, &[1, 2]).unwrap(), 4 * 15 + 3 + 2);
    }

    #[test]
    fn embedding_identity_is_identity() {
        let l = layout_3_5();
        let id = DMatrix::identity(3, 3);
        for ion in [Ion::First, Ion::Second] {
            let e = embed_ion_operator(&l, ion, &id).unwrap();
            assert_eq!(e, QuantumOperator::identity(&l));
        }
    }

    #[test]
    fn embedded_flip_acts_on_one_ion() {
        let l = layout_3_5();
        let flip = embed_ion_operator(&l, Ion::First, &transition(3, Level::Up, Level::Down)).unwrap();
        let out = flip.apply(&l.basis_ket(Level::Down, Level::Down, &[0]).unwrap()).unwrap();
        assert_eq!(out, l.basis_ket(Level::Up, Level::Down, &[0]).unwrap());
    }

    #[test]
    fn distinct_ions_commute() {
        let l = layout_3_5();
        let a = embed_ion_operator(&l, Ion::First, &transition(3, Level::Aux, Level::Up)).unwrap();
        let b = embed_ion_operator(&l, Ion::Second, &transition(3, Level::Up, Level::Down)).unwrap();
        assert!(a.commutator(&b).unwrap().is_zero());
    }

    #[test]
    fn embedding_rejects_bad_input() {
        let l = layout_3_5();
        assert!(embed_ion_operator(&l, Ion::First, &DMatrix::identity(4, 4)).is_err());
        assert!(Ion::from_number(3).is_err());
        assert!(mode_lowering(&l, 1).is_err());
    }

    #[test]
    fn lowering_matrix_elements() {
        let l = layout_3_5();
        let b = mode_lowering(&l, MODE3).unwrap();
        let vac = l.basis_ket(Level::Down, Level::Down, &[0]).unwrap();
        assert_eq!(b.apply(&vac).unwrap().norm(), 0.0);
        let two = l.basis_ket(Level::Down, Level::Down, &[2]).unwrap();
        let one = l.basis_ket(Level::Down, Level::Down, &[1]).unwrap();
        let elem = b.matrix_element(&one, &two).unwrap();
        assert!((elem.re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn number_operator_spectrum() {
        let l = HilbertLayout::new(3, &[5]).unwrap();
        let n = mode_number(&l, MODE3).unwrap().to_dense();
        let mut ev: Vec<f64> = n.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(ev.len(), 5);
        for (k, e) in ev.iter().enumerate() {
            assert!((e - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_commutator_outside_top_level() {
        let l = HilbertLayout::new(3, &[6]).unwrap();
        let b = mode_lowering(&l, MODE3).unwrap();
        let comm = b.commutator(&b.adjoint()).unwrap();
        let dev = comm.sub(&QuantumOperator::identity(&l)).unwrap();
        for (r, c, v) in dev.matrix().triplets().filter(|t| t.2.norm() > 1e-12) {
            let br = l.decode(r);
            let bc = l.decode(c);
            assert_eq!(r, c);
            assert_eq!(br.modes[0], 5);
            assert_eq!(bc.modes[0], 5);
            assert!((v.re + 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singlet_projector_expectation() {
        let l = layout_3_5();
        let s = (l.basis_ket(Level::Up, Level::Down, &[0]).unwrap()
            - l.basis_ket(Level::Down, Level::Up, &[0]).unwrap())
            / Complex64::new(2f64.sqrt(), 0.0);
        let rho = DensityState::pure(&l, &s).unwrap();
        let proj = QuantumOperator::new(&l, CsrMatrix::from_dense(&(&s * s.adjoint()))).unwrap();
        let e = expectation(&rho, &proj).unwrap();
        assert!((e.re - 1.0).abs() < 1e-14 && e.im.abs() < 1e-14);
        rho.validate().unwrap();
    }

    #[test]
    fn thermal_occupation_matches_nbar() {
        // Analytic geometric state on a truncation large enough that the tail
        // below 1e-12 is irrelevant.
        let nbar: f64 = 0.11;
        let dim = 30;
        let l = HilbertLayout::new(3, &[dim]).unwrap();
        let q = nbar / (1.0 + nbar);
        let p: Vec<f64> = (0..dim).map(|n| q.powi(n as i32) / (1.0 + nbar)).collect();
        let mut spin = DMatrix::zeros(9, 9);
        spin[(0, 0)] = ONE;
        let rho = DensityState::product(&l, &spin, &p).unwrap();
        let n = mode_number(&l, MODE3).unwrap();
        let e = expectation(&rho, &n).unwrap();
        assert!((e.re - 0.11).abs() < 1e-12);
    }

    #[test]
    fn reduce_and_validate_product_state() {
        let l = HilbertLayout::new(4, &[5, 3]).unwrap();
        let mut spin = DMatrix::zeros(16, 16);
        spin[(1, 1)] = Complex64::new(0.5, 0.0);
        spin[(4, 4)] = Complex64::new(0.5, 0.0);
        spin[(1, 4)] = Complex64::new(-0.5, 0.0);
        spin[(4, 1)] = Complex64::new(-0.5, 0.0);
        let motion = DensityState::thermal_motion(&l, &[0.1, 0.0]);
        let rho = DensityState::product(&l, &spin, &motion).unwrap();
        rho.validate().unwrap();
        assert!((rho.reduce_to_ions() - spin).norm() < 1e-14);
        let nbar = rho.mean_occupation(MODE3).unwrap();
        assert!(nbar > 0.09 && nbar < 0.1);
    }

    #[test]
    fn invalid_states_are_rejected() {
        let l = layout_3_5();
        let mut m = DMatrix::zeros(45, 45);
        m[(0, 0)] = Complex64::new(1.5, 0.0);
        m[(1, 1)] = Complex64::new(-0.5, 0.0);
        let rho = DensityState::from_matrix(&l, m).unwrap();
        assert!(rho.validate().is_err());
    }
}
