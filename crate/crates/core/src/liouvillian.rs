//! Compiled superoperators acting on the populated block of the density
//! matrix.
//!
//! The scheme conserves the charge `Q = #(ions in ↑ or a) − n₃ − n₄`: every
//! Hamiltonian term commutes with it and every jump operator shifts it by a
//! fixed amount. A density matrix that starts block-diagonal in `Q` therefore
//! stays block-diagonal, and only the entries `ρ_ij` with `Q_i = Q_j` need to
//! be propagated. For the default layout this is 8768 of 57600 entries.
//!
//! The charge is verified against every operator of a generator before it is
//! used. If any operator breaks it, compilation falls back to the full space.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{min_hermitian_eigenvalue, DensityState, HilbertLayout, Level};
use crate::scheme::LindbladGenerator;
use crate::sparse::CsrMatrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Tolerance on entries outside the sector when converting a dense state.
pub const SECTOR_TOL: f64 = 1e-12;

/// The scheme charge of every basis state of `layout`.
pub fn scheme_charge(layout: &HilbertLayout) -> Vec<i64> {
    let excited = |l: Level| matches!(l, Level::Up | Level::Aux) as i64;
    (0..layout.total_dim())
        .map(|i| {
            let b = layout.decode(i);
            excited(b.ion1) + excited(b.ion2) - b.modes.iter().map(|&n| n as i64).sum::<i64>()
        })
        .collect()
}

/// Constant charge shift of `op`, or `None` if its entries shift by
/// different amounts. A zero operator shifts by zero.
pub fn charge_shift(op: &CsrMatrix, charges: &[i64]) -> Option<i64> {
    let mut shift = None;
    for (r, c, _) in op.triplets() {
        let s = charges[r] - charges[c];
        match shift {
            None => shift = Some(s),
            Some(prev) if prev != s => return None,
            _ => {}
        }
    }
    Some(shift.unwrap_or(0))
}

/// Index map between the populated entries of a block-diagonal density
/// matrix and a flat vector. Entries are grouped by charge block, row-major
/// within each block.
#[derive(Debug, Clone, PartialEq)]
pub struct Sector {
    dim: usize,
    blocks: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    /// Position of entry `(i, j)` in the flat vector, `u32::MAX` if absent.
    lookup: Vec<u32>,
    len: usize,
}

impl Sector {
    /// Partition basis states by charge.
    pub fn from_charges(charges: &[i64]) -> Self {
        let dim = charges.len();
        let mut keys: Vec<i64> = charges.to_vec();
        keys.sort_unstable();
        keys.dedup();
        let blocks: Vec<Vec<usize>> = keys
            .iter()
            .map(|&q| (0..dim).filter(|&i| charges[i] == q).collect())
            .collect();
        let mut lookup = vec![u32::MAX; dim * dim];
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut pos = 0usize;
        for block in &blocks {
            offsets.push(pos);
            for &i in block {
                for &j in block {
                    lookup[i * dim + j] = pos as u32;
                    pos += 1;
                }
            }
        }
        Self {
            dim,
            blocks,
            offsets,
            lookup,
            len: pos,
        }
    }

    /// The whole `dim × dim` matrix.
    pub fn full(dim: usize) -> Self {
        Self::from_charges(&vec![0; dim])
    }

    /// The scheme-charge sector if every operator of `generator` respects
    /// it, otherwise the full space.
    pub fn for_generator(generator: &LindbladGenerator) -> Self {
        let charges = scheme_charge(generator.layout());
        if generator_respects(generator, &charges) {
            Self::from_charges(&charges)
        } else {
            Self::full(generator.layout().total_dim())
        }
    }

    /// The scheme-charge sector if all `generators` (on one layout) respect
    /// it, otherwise the full space.
    pub fn for_generators(generators: &[&LindbladGenerator]) -> Result<Self> {
        let Some(first) = generators.first() else {
            return Err(Error::InvalidLayout("no generators given".into()));
        };
        let layout = first.layout();
        if generators.iter().any(|g| g.layout() != layout) {
            return Err(Error::LayoutMismatch);
        }
        let charges = scheme_charge(layout);
        Ok(if generators.iter().all(|g| generator_respects(g, &charges)) {
            Self::from_charges(&charges)
        } else {
            Self::full(layout.total_dim())
        })
    }

    /// Like [`for_generator`](Self::for_generator) but also requires that
    /// `rho` has no weight outside the sector.
    pub fn for_problem(generator: &LindbladGenerator, rho: &DensityState) -> Self {
        let s = Self::for_generator(generator);
        if s.contains(rho.matrix()) {
            s
        } else {
            Self::full(generator.layout().total_dim())
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.blocks.len() == 1
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let p = self.lookup[i * self.dim + j];
        (p != u32::MAX).then_some(p as usize)
    }

    /// True if every entry outside the sector is below [`SECTOR_TOL`].
    pub fn contains(&self, m: &DMatrix<Complex64>) -> bool {
        (0..self.dim).all(|i| {
            (0..self.dim).all(|j| self.position(i, j).is_some() || m[(i, j)].norm() <= SECTOR_TOL)
        })
    }

    pub fn pack(&self, m: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: m.nrows(),
            });
        }
        if !self.contains(m) {
            return Err(Error::InvalidState("state has weight outside the conserved-charge blocks".into()));
        }
        let mut y = vec![ZERO; self.len];
        for block in &self.blocks {
            for &i in block {
                for &j in block {
                    y[self.position(i, j).expect("in block")] = m[(i, j)];
                }
            }
        }
        Ok(y)
    }

    pub fn unpack(&self, y: &[Complex64]) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for block in &self.blocks {
            for &i in block {
                for &j in block {
                    m[(i, j)] = y[self.position(i, j).expect("in block")];
                }
            }
        }
        m
    }

    /// `Tr ρ` of a packed state.
    pub fn trace(&self, y: &[Complex64]) -> Complex64 {
        (0..self.dim)
            .filter_map(|i| self.position(i, i))
            .map(|p| y[p])
            .sum()
    }

    /// Largest `|ρ_ij − ρ_ji*|` of a packed state.
    pub fn hermiticity_error(&self, y: &[Complex64]) -> f64 {
        let mut worst = 0.0f64;
        for block in &self.blocks {
            for (a, &i) in block.iter().enumerate() {
                for &j in &block[a..] {
                    let d = y[self.position(i, j).unwrap()] - y[self.position(j, i).unwrap()].conj();
                    worst = worst.max(d.norm());
                }
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part, computed block by block.
    pub fn min_eigenvalue(&self, y: &[Complex64]) -> f64 {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .map(|(block, &off)| {
                let m = block.len();
                let sub = DMatrix::from_row_slice(m, m, &y[off..off + m * m]);
                min_hermitian_eigenvalue(&sub)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn generator_respects(generator: &LindbladGenerator, charges: &[i64]) -> bool {
    charge_shift(generator.static_hamiltonian().matrix(), charges) == Some(0)
        && generator
            .harmonics()
            .iter()
            .all(|h| charge_shift(h.op.matrix(), charges) == Some(0))
        && generator
            .lindblads()
            .iter()
            .all(|l| charge_shift(l.matrix(), charges).is_some())
}

/// Accumulates superoperator triplets on a sector.
struct Builder<'a> {
    sector: &'a Sector,
    triplets: Vec<(usize, usize, Complex64)>,
}

impl<'a> Builder<'a> {
    fn new(sector: &'a Sector) -> Self {
        Self {
            sector,
            triplets: Vec::new(),
        }
    }

    /// `ρ ↦ s·M ρ`.
    fn left(&mut self, m: &CsrMatrix, s: Complex64) {
        for block in &self.sector.blocks {
            for &i in block {
                let (cols, vals) = m.row(i);
                for &j in block {
                    let row = self.sector.position(i, j).unwrap();
                    for (&l, &v) in cols.iter().zip(vals) {
                        if let Some(col) = self.sector.position(l, j) {
                            self.triplets.push((row, col, s * v));
                        }
                    }
                }
            }
        }
    }

    /// `ρ ↦ s·ρ M`, given `M†`.
    fn right(&mut self, m_dag: &CsrMatrix, s: Complex64) {
        for block in &self.sector.blocks {
            for &j in block {
                let (cols, vals) = m_dag.row(j);
                for &i in block {
                    let row = self.sector.position(i, j).unwrap();
                    for (&l, &v) in cols.iter().zip(vals) {
                        if let Some(col) = self.sector.position(i, l) {
                            self.triplets.push((row, col, s * v.conj()));
                        }
                    }
                }
            }
        }
    }

    /// `ρ ↦ L ρ L†`.
    fn sandwich(&mut self, l: &CsrMatrix) {
        for block in &self.sector.blocks {
            for &i in block {
                let (ci, vi) = l.row(i);
                if ci.is_empty() {
                    continue;
                }
                for &j in block {
                    let (cj, vj) = l.row(j);
                    let row = self.sector.position(i, j).unwrap();
                    for (&a, &x) in ci.iter().zip(vi) {
                        for (&b, &y) in cj.iter().zip(vj) {
                            if let Some(col) = self.sector.position(a, b) {
                                self.triplets.push((row, col, x * y.conj()));
                            }
                        }
                    }
                }
            }
        }
    }

    fn finish(self) -> CsrMatrix {
        let n = self.sector.len;
        CsrMatrix::from_triplets(n, n, self.triplets)
    }
}

/// One harmonic of the superoperator: `e^{−iωt} G₊ + e^{iωt} G₋`.
#[derive(Debug, Clone)]
struct HarmonicTerm {
    frequency: f64,
    plus: CsrMatrix,
    minus: CsrMatrix,
}

/// A Lindblad generator compiled to sparse superoperators on a [`Sector`]:
/// `G(t) = G₀ + Σ_h (e^{−iω_h t} G₊ʰ + e^{iω_h t} G₋ʰ)`.
#[derive(Debug, Clone)]
pub struct CompiledGenerator {
    layout: HilbertLayout,
    sector: Arc<Sector>,
    g0: CsrMatrix,
    harmonics: Vec<HarmonicTerm>,
}

const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);
const PLUS_I: Complex64 = Complex64::new(0.0, 1.0);

impl CompiledGenerator {
    pub fn compile(generator: &LindbladGenerator, sector: Arc<Sector>) -> Result<Self> {
        let layout = generator.layout().clone();
        if sector.dim() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                found: sector.dim(),
            });
        }
        let n = layout.total_dim();
        let mut decay = CsrMatrix::zeros(n, n);
        for l in generator.lindblads() {
            decay = decay.add(&l.matrix().adjoint().matmul(l.matrix()));
        }
        // H_eff = H − (i/2) Σ L†L, so that ρ̇ = −i(H_eff ρ − ρ H_eff†) + Σ LρL†.
        let h_eff = generator
            .static_hamiltonian()
            .matrix()
            .add(&decay.scale(Complex64::new(0.0, -0.5)));
        let mut b = Builder::new(&sector);
        b.left(&h_eff, MINUS_I);
        b.right(&h_eff, PLUS_I);
        for l in generator.lindblads() {
            b.sandwich(l.matrix());
        }
        let g0 = b.finish();

        let harmonics = generator
            .harmonics()
            .iter()
            .map(|h| {
                let a = h.op.matrix();
                let a_dag = a.adjoint();
                let mut p = Builder::new(&sector);
                p.left(a, MINUS_I);
                p.right(&a_dag, PLUS_I);
                let mut m = Builder::new(&sector);
                m.left(&a_dag, MINUS_I);
                m.right(a, PLUS_I);
                HarmonicTerm {
                    frequency: h.frequency,
                    plus: p.finish(),
                    minus: m.finish(),
                }
            })
            .collect();
        Ok(Self {
            layout,
            sector,
            g0,
            harmonics,
        })
    }

    /// Compile on the charge sector when possible.
    pub fn new(generator: &LindbladGenerator) -> Result<Self> {
        Self::compile(generator, Arc::new(Sector::for_generator(generator)))
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn sector(&self) -> &Arc<Sector> {
        &self.sector
    }

    pub fn len(&self) -> usize {
        self.sector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sector.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.g0.nnz() + self.harmonics.iter().map(|h| h.plus.nnz() + h.minus.nnz()).sum::<usize>()
    }

    pub fn is_time_independent(&self) -> bool {
        self.harmonics.iter().all(|h| h.frequency == 0.0)
    }

    pub fn static_part(&self) -> &CsrMatrix {
        &self.g0
    }

    /// Superoperator with the harmonics frozen at time `t`.
    pub fn frozen_at(&self, t: f64) -> CsrMatrix {
        self.harmonics.iter().fold(self.g0.clone(), |acc, h| {
            let e = Complex64::from_polar(1.0, -h.frequency * t);
            acc.add(&h.plus.scale(e)).add(&h.minus.scale(e.conj()))
        })
    }

    /// `out = G(t) y`.
    pub fn apply(&self, t: f64, y: &[Complex64], out: &mut [Complex64]) {
        self.g0.mul_vec_into(y, out);
        for h in &self.harmonics {
            let e = Complex64::from_polar(1.0, -h.frequency * t);
            h.plus.mul_vec_acc(e, y, out);
            h.minus.mul_vec_acc(e.conj(), y, out);
        }
    }

    pub fn pack(&self, rho: &DensityState) -> Result<Vec<Complex64>> {
        if rho.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        self.sector.pack(rho.matrix())
    }

    pub fn unpack(&self, y: &[Complex64]) -> Result<DensityState> {
        DensityState::from_matrix(&self.layout, self.sector.unpack(y))
    }
}

/// Convenience: evaluate a dense `ρ̇` through the compiled path.
pub fn apply_compiled(compiled: &CompiledGenerator, t: f64, rho: &DensityState) -> Result<DMatrix<Complex64>> {
    let y = compiled.pack(rho)?;
    let mut out = vec![ZERO; y.len()];
    compiled.apply(t, &y, &mut out);
    Ok(compiled.sector.unpack(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::HilbertLayout;
    use crate::scheme::{build_generator, Channels, GammaTable, SchemeParams};
    use nalgebra::DVector;

    const TAU: f64 = std::f64::consts::TAU;

    fn params() -> SchemeParams {
        let depletion = 1.0 / 88e-6;
        SchemeParams {
            omega_s: TAU * 7.8e3,
            omega_c: TAU * 0.543e3,
            r: 0.014,
            phi: 0.0,
            gamma_up_a: depletion * 5.0 / 9.0,
            gamma_down_a: depletion * 4.0 / 9.0,
            gamma_aa: depletion * 3.0 / 9.0,
            kappa: 1.0 / 203e-6,
            nbar: 0.11,
            gamma_table: GammaTable::uniform(1e-4 * TAU * 7.8e3),
            eta3: 0.180,
            eta4: 0.155,
            delta: TAU * 250e3,
            kappa4: 800.0,
        }
    }

    #[test]
    fn default_sector_size() {
        let l = HilbertLayout::new(4, &[5, 3]).unwrap();
        let g = build_generator(&params(), &l, &Channels::all()).unwrap();
        let s = Sector::for_generator(&g);
        assert!(!s.is_full());
        assert_eq!(s.len(), 8768);
        let l3 = HilbertLayout::new(3, &[5, 3]).unwrap();
        let mut p = params();
        p.gamma_table = GammaTable::new();
        let g3 = build_generator(&p, &l3, &Channels::all()).unwrap();
        assert_eq!(Sector::for_generator(&g3).len(), 2797);
    }

    #[test]
    fn compiled_matches_dense_reference() {
        let l = HilbertLayout::new(4, &[3, 2]).unwrap();
        let g = build_generator(&params(), &l, &Channels::all()).unwrap();
        let compiled = CompiledGenerator::new(&g).unwrap();
        // A block-diagonal but otherwise generic Hermitian state.
        let charges = scheme_charge(&l);
        let n = l.total_dim();
        let m = DMatrix::from_fn(n, n, |i, j| {
            if charges[i] == charges[j] {
                let (a, b) = (i.min(j) as f64, i.max(j) as f64);
                let sign = if i <= j { 1.0 } else { -1.0 };
                Complex64::new((0.3 * a + 0.7 * b).sin(), sign * (0.2 * a - 0.5 * b).cos() * (i != j) as u8 as f64)
            } else {
                ZERO
            }
        });
        let rho = DensityState::from_matrix(&l, m).unwrap();
        for t in [0.0, 1.7e-6, 3.3e-5] {
            let fast = apply_compiled(&compiled, t, &rho).unwrap();
            let slow = g.apply(t, rho.matrix()).unwrap();
            let err = (&fast - &slow).iter().map(|v| v.norm()).fold(0.0, f64::max);
            let scale = slow.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(err < 1e-12 * scale, "t = {t}: {err} vs {scale}");
        }
    }

    #[test]
    fn full_sector_matches_dense_for_generic_state() {
        let l = HilbertLayout::new(3, &[3]).unwrap();
        let g = build_generator(&params(), &l, &Channels::parse("-spontaneous").unwrap()).unwrap();
        let compiled = CompiledGenerator::compile(&g, Arc::new(Sector::full(l.total_dim()))).unwrap();
        let psi = DVector::from_fn(l.total_dim(), |i, _| Complex64::new((i as f64).cos(), (1.3 * i as f64).sin()));
        let rho = DensityState::pure(&l, &psi).unwrap();
        let fast = apply_compiled(&compiled, 0.0, &rho).unwrap();
        let slow = g.apply(0.0, rho.matrix()).unwrap();
        assert!((&fast - &slow).norm() < 1e-9 * slow.norm());
    }

    #[test]
    fn broken_charge_falls_back_to_full_space() {
        let l = HilbertLayout::new(3, &[3]).unwrap();
        let b = crate::operator::mode_lowering(&l, 0).unwrap();
        let x = crate::operator::embed_ion_operator(
            &l,
            crate::operator::Ion::First,
            &crate::operator::transition(3, Level::Up, Level::Down),
        )
        .unwrap();
        // σ⁺ + b: pieces shift the charge by different amounts.
        let h = x.add(&b).unwrap().plus_adjoint();
        let g = crate::scheme::assemble_generator(h, vec![], vec![]).unwrap();
        assert!(Sector::for_generator(&g).is_full());
    }

    #[test]
    fn pack_roundtrip_and_rejection() {
        let l = HilbertLayout::new(3, &[3]).unwrap();
        let s = Sector::from_charges(&scheme_charge(&l));
        let rho = DensityState::basis(&l, Level::Down, Level::Down, &[0]).unwrap();
        let y = s.pack(rho.matrix()).unwrap();
        assert_eq!(s.unpack(&y), *rho.matrix());
        assert!((s.trace(&y).re - 1.0).abs() < 1e-15);
        let psi = l.basis_ket(Level::Down, Level::Down, &[0]).unwrap() + l.basis_ket(Level::Down, Level::Down, &[1]).unwrap();
        let sup = DensityState::pure(&l, &psi).unwrap();
        assert!(s.pack(sup.matrix()).is_err());
    }
}
