//! Dense complex linear algebra for registers of up to twelve qubits: quantum
//! states, Pauli algebra, exact Hermitian evolution, Krylov propagation, and
//! seeded measurement sampling.
//!
//! Qubit 0 is the leftmost label in bitstrings and the most significant tensor
//! factor; every module in the crate shares this convention.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub type C64 = Complex64;

/// Largest register the dense backend accepts.
pub const MAX_QUBITS: usize = 12;
/// Tolerance for algebraic identities.
pub const TOL_ALG: f64 = 1e-10;
/// Tolerance for comparisons against the ODE-integrator oracle.
pub const TOL_ODE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("register size {0} exceeds the supported maximum of {MAX_QUBITS} qubits")]
    Capacity(usize),
    #[error("qubit index {index} out of range for a {n}-qubit register")]
    QubitRange { index: usize, n: usize },
    #[error("operator is not Hermitian (max imaginary coefficient {0:.3e})")]
    NotHermitian(f64),
    #[error("register sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("shots must be positive")]
    ZeroShots,
    #[error("time step must be finite")]
    NonFiniteTime,
    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check_capacity(n: usize) -> Result<()> {
    if n > MAX_QUBITS {
        return Err(SimError::Capacity(n));
    }
    Ok(())
}

fn check_qubit(q: usize, n: usize) -> Result<()> {
    if q >= n {
        return Err(SimError::QubitRange { index: q, n });
    }
    Ok(())
}

/// Bit mask selecting qubit `q` in an `n`-qubit register.
pub fn qubit_mask(q: usize, n: usize) -> usize {
    1 << (n - 1 - q)
}

// ---------------------------------------------------------------------------
// Pauli algebra
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// 2x2 matrix of the Pauli operator, row-major.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        let z = c(0.0, 0.0);
        match self {
            Axis::X => [[z, c(1.0, 0.0)], [c(1.0, 0.0), z]],
            Axis::Y => [[z, c(0.0, -1.0)], [c(0.0, 1.0), z]],
            Axis::Z => [[c(1.0, 0.0), z], [z, c(-1.0, 0.0)]],
        }
    }
}

fn axis_product(a: Axis, b: Axis) -> (C64, Option<Axis>) {
    use Axis::*;
    if a == b {
        return (c(1.0, 0.0), None);
    }
    match (a, b) {
        (X, Y) => (c(0.0, 1.0), Some(Z)),
        (Y, X) => (c(0.0, -1.0), Some(Z)),
        (Y, Z) => (c(0.0, 1.0), Some(X)),
        (Z, Y) => (c(0.0, -1.0), Some(X)),
        (Z, X) => (c(0.0, 1.0), Some(Y)),
        (X, Z) => (c(0.0, -1.0), Some(Y)),
        _ => unreachable!(),
    }
}

/// A scalar multiple of a Pauli string; identity on unlisted qubits.
#[derive(Clone, Debug)]
pub struct PauliTerm {
    pub coeff: C64,
    factors: BTreeMap<usize, Axis>,
}

impl PauliTerm {
    pub fn new(coeff: C64, factors: &[(usize, Axis)]) -> Self {
        let mut t = PauliTerm {
            coeff,
            factors: BTreeMap::new(),
        };
        for &(q, ax) in factors {
            t.absorb_factor(q, ax);
        }
        t
    }

    pub fn real(coeff: f64, factors: &[(usize, Axis)]) -> Self {
        Self::new(c(coeff, 0.0), factors)
    }

    pub fn identity(coeff: C64) -> Self {
        PauliTerm {
            coeff,
            factors: BTreeMap::new(),
        }
    }

    fn absorb_factor(&mut self, q: usize, ax: Axis) {
        match self.factors.remove(&q) {
            None => {
                self.factors.insert(q, ax);
            }
            Some(prev) => {
                let (phase, merged) = axis_product(prev, ax);
                self.coeff *= phase;
                if let Some(m) = merged {
                    self.factors.insert(q, m);
                }
            }
        }
    }

    pub fn factors(&self) -> impl Iterator<Item = (usize, Axis)> + '_ {
        self.factors.iter().map(|(&q, &a)| (q, a))
    }

    pub fn weight(&self) -> usize {
        self.factors.len()
    }

    pub fn max_qubit(&self) -> Option<usize> {
        self.factors.keys().next_back().copied()
    }

    /// Pauli strings are self-adjoint, so only the coefficient conjugates.
    pub fn dagger(&self) -> Self {
        PauliTerm {
            coeff: self.coeff.conj(),
            factors: self.factors.clone(),
        }
    }

    /// Symbolic product with phase tracking.
    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = self.clone();
        out.coeff *= rhs.coeff;
        for (&q, &ax) in &rhs.factors {
            out.absorb_factor(q, ax);
        }
        out
    }

    fn string_key(&self) -> Vec<(usize, Axis)> {
        self.factors.iter().map(|(&q, &a)| (q, a)).collect()
    }

    fn masks(&self, n: usize) -> Result<(usize, usize, C64)> {
        let mut xmask = 0usize;
        let mut yzmask = 0usize;
        let mut ycount = 0u32;
        for (&q, &ax) in &self.factors {
            check_qubit(q, n)?;
            let m = qubit_mask(q, n);
            match ax {
                Axis::X => xmask |= m,
                Axis::Y => {
                    xmask |= m;
                    yzmask |= m;
                    ycount += 1;
                }
                Axis::Z => yzmask |= m,
            }
        }
        let phase = match ycount % 4 {
            0 => c(1.0, 0.0),
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        };
        Ok((xmask, yzmask, self.coeff * phase))
    }

    /// Accumulates `coeff * P |src>` into `dst`.
    pub fn apply_into(&self, n: usize, src: &[C64], dst: &mut [C64]) -> Result<()> {
        let (xmask, yzmask, c0) = self.masks(n)?;
        for (i, &a) in src.iter().enumerate() {
            let sign = if (i & yzmask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            dst[i ^ xmask] += c0 * sign * a;
        }
        Ok(())
    }
}

/// A real-linear combination of Pauli strings.
#[derive(Clone, Debug, Default)]
pub struct PauliSum {
    pub terms: Vec<PauliTerm>,
}

impl PauliSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: Vec<PauliTerm>) -> Self {
        PauliSum { terms }
    }

    pub fn push(&mut self, t: PauliTerm) {
        self.terms.push(t);
    }

    pub fn add_term(&mut self, coeff: f64, factors: &[(usize, Axis)]) {
        self.terms.push(PauliTerm::real(coeff, factors));
    }

    pub fn scaled(&self, f: C64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= f;
        }
        out
    }

    pub fn plus(&self, rhs: &Self) -> Self {
        let mut out = self.clone();
        out.terms.extend(rhs.terms.iter().cloned());
        out
    }

    /// Combines like strings and drops terms with negligible coefficients.
    pub fn simplified(&self) -> Self {
        let mut acc: BTreeMap<Vec<(usize, Axis)>, C64> = BTreeMap::new();
        for t in &self.terms {
            *acc.entry(t.string_key()).or_insert_with(|| c(0.0, 0.0)) += t.coeff;
        }
        let terms = acc
            .into_iter()
            .filter(|(_, v)| v.norm() > 1e-14)
            .map(|(k, v)| PauliTerm::new(v, &k))
            .collect();
        PauliSum { terms }
    }

    pub fn min_register(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|t| t.max_qubit())
            .max()
            .map_or(1, |q| q + 1)
    }

    /// Fails unless every combined coefficient is real within `tol`.
    pub fn hermitian_check(&self, tol: f64) -> Result<()> {
        let worst = self
            .simplified()
            .terms
            .iter()
            .map(|t| t.coeff.im.abs())
            .fold(0.0, f64::max);
        if worst > tol {
            return Err(SimError::NotHermitian(worst));
        }
        Ok(())
    }

    pub fn to_dense(&self, n: usize) -> Result<DMatrix<C64>> {
        pauli_to_dense(self, n)
    }

    pub fn compile(&self, n: usize) -> Result<CompiledPauliSum> {
        CompiledPauliSum::new(self, n)
    }
}

/// Dense matrix of a Pauli sum on an `n`-qubit register.
pub fn pauli_to_dense(p: &PauliSum, n: usize) -> Result<DMatrix<C64>> {
    check_capacity(n)?;
    let dim = 1usize << n;
    let mut m = DMatrix::from_element(dim, dim, c(0.0, 0.0));
    for t in &p.terms {
        let (xmask, yzmask, c0) = t.masks(n)?;
        for i in 0..dim {
            let sign = if (i & yzmask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            m[(i ^ xmask, i)] += c0 * sign;
        }
    }
    Ok(m)
}

/// A Pauli sum preprocessed for fast matrix-vector products.
pub struct CompiledPauliSum {
    n: usize,
    dim: usize,
    diag: Vec<C64>,
    offdiag: Vec<(usize, usize, C64)>,
    coeff_l1: f64,
}

impl CompiledPauliSum {
    pub fn new(p: &PauliSum, n: usize) -> Result<Self> {
        check_capacity(n)?;
        let dim = 1usize << n;
        let mut diag = vec![c(0.0, 0.0); dim];
        let mut offdiag = Vec::new();
        let mut coeff_l1 = 0.0;
        for t in &p.terms {
            let (xmask, yzmask, c0) = t.masks(n)?;
            coeff_l1 += c0.norm();
            if xmask == 0 {
                for (i, d) in diag.iter_mut().enumerate() {
                    let sign = if (i & yzmask).count_ones() % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    *d += c0 * sign;
                }
            } else {
                offdiag.push((xmask, yzmask, c0));
            }
        }
        Ok(CompiledPauliSum {
            n,
            dim,
            diag,
            offdiag,
            coeff_l1,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on the spectral norm from the coefficient 1-norm.
    pub fn norm_bound(&self) -> f64 {
        self.coeff_l1
    }

    /// Overwrites `dst` with `H |src>`.
    pub fn apply_into(&self, src: &[C64], dst: &mut [C64]) {
        for (d, (&di, &s)) in dst.iter_mut().zip(self.diag.iter().zip(src.iter())) {
            *d = di * s;
        }
        for &(xmask, yzmask, c0) in &self.offdiag {
            for (i, &a) in src.iter().enumerate() {
                let sign = if (i & yzmask).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                dst[i ^ xmask] += c0 * sign * a;
            }
        }
    }

    pub fn apply(&self, src: &[C64]) -> Vec<C64> {
        let mut dst = vec![c(0.0, 0.0); self.dim];
        self.apply_into(src, &mut dst);
        dst
    }
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Pure state of an `n`-qubit register.
#[derive(Clone, Debug)]
pub struct StateVector {
    n: usize,
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn zero(n: usize) -> Result<Self> {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_capacity(n)?;
        let dim = 1usize << n;
        if index >= dim {
            return Err(SimError::InvalidState(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut amps = vec![c(0.0, 0.0); dim];
        amps[index] = c(1.0, 0.0);
        Ok(StateVector { n, amps })
    }

    pub fn from_amps(n: usize, amps: Vec<C64>) -> Result<Self> {
        check_capacity(n)?;
        if amps.len() != 1 << n {
            return Err(SimError::InvalidState(format!(
                "amplitude vector of length {} for {n} qubits",
                amps.len()
            )));
        }
        Ok(StateVector { n, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let nrm = self.norm();
        if nrm > 0.0 {
            for a in &mut self.amps {
                *a /= nrm;
            }
        }
        self
    }

    pub fn inner(&self, rhs: &Self) -> Result<C64> {
        if self.n != rhs.n {
            return Err(SimError::SizeMismatch(self.n, rhs.n));
        }
        Ok(self
            .amps
            .iter()
            .zip(&rhs.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.norm() - 1.0).abs() > TOL_ALG {
            return Err(SimError::InvalidState(format!(
                "norm {} deviates from 1",
                self.norm()
            )));
        }
        Ok(())
    }
}

/// Mixed state of an `n`-qubit register.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    n: usize,
    pub mat: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_pure(psi: &StateVector) -> Self {
        let v = DVector::from_column_slice(&psi.amps);
        DensityMatrix {
            n: psi.n,
            mat: &v * v.adjoint(),
        }
    }

    pub fn from_matrix(n: usize, mat: DMatrix<C64>) -> Result<Self> {
        check_capacity(n)?;
        if mat.nrows() != 1 << n || mat.ncols() != 1 << n {
            return Err(SimError::InvalidState(format!(
                "{}x{} matrix for {n} qubits",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(DensityMatrix { n, mat })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)].re.max(0.0)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.trace().re - 1.0).abs() > TOL_ALG || self.trace().im.abs() > TOL_ALG {
            return Err(SimError::InvalidState(format!("trace {}", self.trace())));
        }
        let herm_dev = (&self.mat - self.mat.adjoint()).norm();
        if herm_dev > TOL_ALG {
            return Err(SimError::InvalidState(format!(
                "Hermiticity deviation {herm_dev:.3e}"
            )));
        }
        let eig = SymmetricEigen::new(self.mat.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-9 {
            return Err(SimError::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

/// Pure or mixed register state.
#[derive(Clone, Debug)]
pub enum QuantumState {
    Vector(StateVector),
    Density(DensityMatrix),
}

impl QuantumState {
    pub fn n(&self) -> usize {
        match self {
            QuantumState::Vector(v) => v.n(),
            QuantumState::Density(d) => d.n(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            QuantumState::Vector(v) => v.probabilities(),
            QuantumState::Density(d) => d.probabilities(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QuantumState::Vector(v) => v.validate(),
            QuantumState::Density(d) => d.validate(),
        }
    }
}

impl From<StateVector> for QuantumState {
    fn from(v: StateVector) -> Self {
        QuantumState::Vector(v)
    }
}

impl From<DensityMatrix> for QuantumState {
    fn from(d: DensityMatrix) -> Self {
        QuantumState::Density(d)
    }
}

// ---------------------------------------------------------------------------
// Single- and two-qubit kernels
// ---------------------------------------------------------------------------

/// Applies a 2x2 unitary to qubit `q` in place.
pub fn apply_1q(amps: &mut [C64], n: usize, q: usize, u: [[C64; 2]; 2]) {
    let mask = qubit_mask(q, n);
    for i in 0..amps.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (a, b) = (amps[i], amps[j]);
            amps[i] = u[0][0] * a + u[0][1] * b;
            amps[j] = u[1][0] * a + u[1][1] * b;
        }
    }
}

/// Applies a 2x2 unitary to qubit `t` on the subspace where qubit `c` is 1.
pub fn apply_ctrl_1q(amps: &mut [C64], n: usize, ctrl: usize, t: usize, u: [[C64; 2]; 2]) {
    let cmask = qubit_mask(ctrl, n);
    let tmask = qubit_mask(t, n);
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            let j = i | tmask;
            let (a, b) = (amps[i], amps[j]);
            amps[i] = u[0][0] * a + u[0][1] * b;
            amps[j] = u[1][0] * a + u[1][1] * b;
        }
    }
}

/// Applies exp(-i theta Z_c X_t / 2) in place.
pub fn apply_zx(amps: &mut [C64], n: usize, ctrl: usize, t: usize, theta: f64) {
    let cmask = qubit_mask(ctrl, n);
    let tmask = qubit_mask(t, n);
    let (cos, sin) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    for i in 0..amps.len() {
        if i & tmask == 0 {
            let j = i | tmask;
            let s = if i & cmask == 0 { sin } else { -sin };
            let (a, b) = (amps[i], amps[j]);
            amps[i] = c(cos, 0.0) * a + c(0.0, -s) * b;
            amps[j] = c(0.0, -s) * a + c(cos, 0.0) * b;
        }
    }
}

/// Rotation exp(-i theta sigma/2) about a Pauli axis.
pub fn rotation_matrix(axis: Axis, theta: f64) -> [[C64; 2]; 2] {
    let (ct, st) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let m = axis.matrix();
    let mut out = [[c(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            let id = if r == col { c(ct, 0.0) } else { c(0.0, 0.0) };
            out[r][col] = id - c(0.0, st) * m[r][col];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Exact evolution
// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian dense operator, reused across time steps.
pub struct EigenEvolver {
    values: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl EigenEvolver {
    pub fn new(h: DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(h);
        EigenEvolver {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn eigenvector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k).iter().cloned().collect()
    }

    /// Index order sorting the eigenvalues ascending.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        idx
    }

    /// Applies exp(-i H dt) to `amps` in place.
    pub fn step(&self, dt: f64, amps: &mut Vec<C64>) {
        let v = DVector::from_column_slice(amps);
        let mut coeffs = self.vectors.adjoint() * v;
        for (k, x) in coeffs.iter_mut().enumerate() {
            *x *= C64::from_polar(1.0, -self.values[k] * dt);
        }
        let out = &self.vectors * coeffs;
        amps.copy_from_slice(out.as_slice());
    }

    /// Dense matrix of exp(-i H dt).
    pub fn unitary(&self, dt: f64) -> DMatrix<C64> {
        let dim = self.values.len();
        let mut phases = DMatrix::from_element(dim, dim, c(0.0, 0.0));
        for k in 0..dim {
            phases[(k, k)] = C64::from_polar(1.0, -self.values[k] * dt);
        }
        &self.vectors * phases * self.vectors.adjoint()
    }
}

/// Applies exp(-i H dt) by eigendecomposition of the dense form of `h`.
pub fn exact_evolve(h: &PauliSum, dt: f64, state: &QuantumState) -> Result<QuantumState> {
    if !dt.is_finite() {
        return Err(SimError::NonFiniteTime);
    }
    h.hermitian_check(1e-12)?;
    let n = state.n();
    let ev = EigenEvolver::new(h.to_dense(n)?);
    match state {
        QuantumState::Vector(v) => {
            let mut amps = v.amps.clone();
            ev.step(dt, &mut amps);
            Ok(StateVector { n, amps }.into())
        }
        QuantumState::Density(d) => {
            let u = ev.unitary(dt);
            let mat = &u * &d.mat * u.adjoint();
            Ok(DensityMatrix { n, mat }.into())
        }
    }
}

/// Krylov propagation of exp(-i H dt)|v> for compiled Pauli sums.
///
/// The step is split internally so each Lanczos solve stays well inside its
/// convergence region; accuracy is validated against `exact_evolve`.
pub fn expmv(h: &CompiledPauliSum, dt: f64, v: &[C64], krylov_dim: usize) -> Vec<C64> {
    let theta = h.norm_bound() * dt.abs();
    let substeps = (theta / 2.0).ceil().max(1.0) as usize;
    let dt_sub = dt / substeps as f64;
    let mut cur = v.to_vec();
    for _ in 0..substeps {
        cur = lanczos_step(h, dt_sub, &cur, krylov_dim);
    }
    cur
}

fn lanczos_step(h: &CompiledPauliSum, dt: f64, v: &[C64], m: usize) -> Vec<C64> {
    let dim = h.dim();
    let beta0 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if beta0 == 0.0 {
        return v.to_vec();
    }
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m);
    basis.push(v.iter().map(|a| a / beta0).collect());
    let mut alphas = Vec::with_capacity(m);
    let mut betas = Vec::with_capacity(m);
    let mut w = vec![c(0.0, 0.0); dim];
    for j in 0..m {
        h.apply_into(&basis[j], &mut w);
        let alpha: f64 = basis[j]
            .iter()
            .zip(&w)
            .map(|(q, x)| (q.conj() * x).re)
            .sum();
        alphas.push(alpha);
        for (x, q) in w.iter_mut().zip(&basis[j]) {
            *x -= c(alpha, 0.0) * q;
        }
        if j > 0 {
            let beta_prev = betas[j - 1];
            for (x, q) in w.iter_mut().zip(&basis[j - 1]) {
                *x -= c(beta_prev, 0.0) * q;
            }
        }
        let beta = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if j + 1 == m || beta < 1e-12 {
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|a| a / beta).collect());
    }
    let k = basis.len();
    let mut t = DMatrix::from_element(k, k, 0.0f64);
    for j in 0..k {
        t[(j, j)] = alphas[j];
        if j + 1 < k {
            t[(j, j + 1)] = betas[j];
            t[(j + 1, j)] = betas[j];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut coeffs = vec![c(0.0, 0.0); k];
    for (kk, col) in eig.eigenvectors.column_iter().enumerate() {
        let phase = C64::from_polar(1.0, -eig.eigenvalues[kk] * dt);
        let w0 = col[0];
        for (cj, &vj) in coeffs.iter_mut().zip(col.iter()) {
            *cj += phase * w0 * vj;
        }
    }
    let mut out = vec![c(0.0, 0.0); dim];
    for (j, q) in basis.iter().enumerate() {
        let cc = coeffs[j] * beta0;
        for (o, &x) in out.iter_mut().zip(q.iter()) {
            *o += cc * x;
        }
    }
    out
}

/// Fourth-order Runge-Kutta integration of the Schroedinger equation.
pub fn rk4_evolve(h: &CompiledPauliSum, t_total: f64, steps: usize, v: &[C64]) -> Vec<C64> {
    let dt = t_total / steps as f64;
    let dim = h.dim();
    let deriv = |state: &[C64], out: &mut Vec<C64>| {
        h.apply_into(state, out);
        for x in out.iter_mut() {
            *x *= c(0.0, -1.0);
        }
    };
    let mut psi = v.to_vec();
    let mut k1 = vec![c(0.0, 0.0); dim];
    let mut k2 = vec![c(0.0, 0.0); dim];
    let mut k3 = vec![c(0.0, 0.0); dim];
    let mut k4 = vec![c(0.0, 0.0); dim];
    let mut tmp = vec![c(0.0, 0.0); dim];
    for _ in 0..steps {
        deriv(&psi, &mut k1);
        for i in 0..dim {
            tmp[i] = psi[i] + k1[i] * (dt / 2.0);
        }
        deriv(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = psi[i] + k2[i] * (dt / 2.0);
        }
        deriv(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = psi[i] + k3[i] * dt;
        }
        deriv(&tmp, &mut k4);
        for i in 0..dim {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
        }
    }
    psi
}

// ---------------------------------------------------------------------------
// Sampling and fidelity
// ---------------------------------------------------------------------------

/// Derives an independent 64-bit stream seed from a base seed and point index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Multinomial draw from a probability vector; deterministic given the seed.
pub fn sample_probs(probs: &[f64], shots: u64, seed: u64) -> Result<BTreeMap<usize, u64>> {
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    if total <= 0.0 {
        return Err(SimError::InvalidState("probabilities sum to zero".into()));
    }
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p.max(0.0) / total;
        cdf.push(acc);
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..shots {
        let u: f64 = rng.gen();
        let idx = cdf.partition_point(|&x| x < u).min(probs.len() - 1);
        *counts.entry(idx).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Multinomial draw from the computational-basis distribution of a state.
pub fn sample_counts(state: &QuantumState, shots: u64, seed: u64) -> Result<BTreeMap<usize, u64>> {
    sample_probs(&state.probabilities(), shots, seed)
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(m.clone());
    let dim = m.nrows();
    let mut d = DMatrix::from_element(dim, dim, c(0.0, 0.0));
    for k in 0..dim {
        d[(k, k)] = c(eig.eigenvalues[k].max(0.0).sqrt(), 0.0);
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

fn uhlmann_fidelity(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> f64 {
    let sr = psd_sqrt(rho);
    let inner = &sr * sigma * &sr;
    let eig = SymmetricEigen::new(inner);
    let tr: f64 = eig
        .eigenvalues
        .iter()
        .map(|&w| w.max(0.0).sqrt())
        .sum();
    (tr * tr).clamp(0.0, 1.0)
}

/// Squared-overlap fidelity for vectors, Uhlmann fidelity for density matrices.
pub fn state_fidelity(a: &QuantumState, b: &QuantumState) -> Result<f64> {
    if a.n() != b.n() {
        return Err(SimError::SizeMismatch(a.n(), b.n()));
    }
    Ok(match (a, b) {
        (QuantumState::Vector(va), QuantumState::Vector(vb)) => {
            va.inner(vb)?.norm_sqr().clamp(0.0, 1.0)
        }
        (QuantumState::Vector(v), QuantumState::Density(d))
        | (QuantumState::Density(d), QuantumState::Vector(v)) => {
            let vv = DVector::from_column_slice(&v.amps);
            (vv.adjoint() * &d.mat * vv)[(0, 0)].re.clamp(0.0, 1.0)
        }
        (QuantumState::Density(da), QuantumState::Density(db)) => {
            uhlmann_fidelity(&da.mat, &db.mat)
        }
    })
}

/// Largest singular value of a dense operator.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    let gram = m.adjoint() * m;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues
        .iter()
        .fold(0.0f64, |acc, &w| acc.max(w.max(0.0)))
        .sqrt()
}

/// Spectral-norm distance between two operators after removing the relative
/// global phase that maximizes their alignment.
pub fn phase_free_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let tr = (a.adjoint() * b).trace();
    let phase = if tr.norm() > 1e-300 {
        tr / tr.norm()
    } else {
        c(1.0, 0.0)
    };
    spectral_norm(&(a.map(|x| x * phase) - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        a.kronecker(b)
    }

    fn pauli_dense_1q(ax: Axis) -> DMatrix<C64> {
        let m = ax.matrix();
        DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
    }

    #[test]
    fn single_z_is_diag() {
        let p = PauliSum::from_terms(vec![PauliTerm::real(1.0, &[(0, Axis::Z)])]);
        let m = pauli_to_dense(&p, 1).unwrap();
        assert_abs_diff_eq!(m[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)].re, -1.0, epsilon = 1e-15);
        assert!(m[(0, 1)].norm() < 1e-15 && m[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn yx_matches_kron() {
        let p = PauliSum::from_terms(vec![PauliTerm::real(
            1.0,
            &[(0, Axis::Y), (1, Axis::X)],
        )]);
        let m = pauli_to_dense(&p, 2).unwrap();
        let want = kron(&pauli_dense_1q(Axis::Y), &pauli_dense_1q(Axis::X));
        assert!((m - want).norm() < 1e-14);
    }

    #[test]
    fn three_z_eigenvalues() {
        let mut p = PauliSum::new();
        for q in 0..3 {
            p.add_term(1.0, &[(q, Axis::Z)]);
        }
        let m = pauli_to_dense(&p, 3).unwrap();
        let mut w: Vec<f64> = (0..8).map(|i| m[(i, i)].re).collect();
        w.sort_by(f64::total_cmp);
        let want = [-3.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 3.0];
        for (a, b) in w.iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn capacity_guard() {
        let p = PauliSum::from_terms(vec![PauliTerm::real(1.0, &[(0, Axis::Z)])]);
        assert!(matches!(
            pauli_to_dense(&p, 13),
            Err(SimError::Capacity(13))
        ));
        assert!(StateVector::zero(13).is_err());
    }

    #[test]
    fn index_range_guard() {
        let p = PauliSum::from_terms(vec![PauliTerm::real(1.0, &[(4, Axis::X)])]);
        assert!(matches!(
            pauli_to_dense(&p, 3),
            Err(SimError::QubitRange { index: 4, n: 3 })
        ));
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let h = PauliSum::from_terms(vec![PauliTerm::real(1.0, &[(0, Axis::Z)])]);
        let psi: QuantumState = StateVector::basis(1, 1).unwrap().into();
        let out = exact_evolve(&h, 0.0, &psi).unwrap();
        assert_abs_diff_eq!(state_fidelity(&psi, &out).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn evolve_eigenstate_only_phases() {
        let h = PauliSum::from_terms(vec![PauliTerm::real(1.0, &[(0, Axis::Z)])]);
        let psi: QuantumState = StateVector::zero(1).unwrap().into();
        let out = exact_evolve(&h, std::f64::consts::PI, &psi).unwrap();
        assert_abs_diff_eq!(state_fidelity(&psi, &out).unwrap(), 1.0, epsilon = 1e-12);
        if let QuantumState::Vector(v) = &out {
            assert!((v.amps[0] - c(-1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn evolve_rejects_non_hermitian() {
        let h = PauliSum::from_terms(vec![PauliTerm::new(c(0.0, 1.0), &[(0, Axis::Z)])]);
        let psi: QuantumState = StateVector::zero(1).unwrap().into();
        assert!(matches!(
            exact_evolve(&h, 0.1, &psi),
            Err(SimError::NotHermitian(_))
        ));
    }

    fn random_hermitian_sum(rng: &mut ChaCha20Rng, n: usize, nterms: usize) -> PauliSum {
        let axes = [Axis::X, Axis::Y, Axis::Z];
        let mut p = PauliSum::new();
        for _ in 0..nterms {
            let mut factors = Vec::new();
            for q in 0..n {
                if rng.gen::<f64>() < 0.6 {
                    factors.push((q, axes[rng.gen_range(0..3)]));
                }
            }
            p.add_term(rng.gen::<f64>() * 2.0 - 1.0, &factors);
        }
        p
    }

    fn random_state(rng: &mut ChaCha20Rng, n: usize) -> StateVector {
        let dim = 1usize << n;
        let amps: Vec<C64> = (0..dim)
            .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        StateVector::from_amps(n, amps).unwrap().normalized()
    }

    #[test]
    fn rk4_cross_check() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let h = random_hermitian_sum(&mut rng, 3, 6);
        let psi = random_state(&mut rng, 3);
        let dt = 0.1;
        let exact = exact_evolve(&h, dt, &psi.clone().into()).unwrap();
        let compiled = h.compile(3).unwrap();
        let rk = rk4_evolve(&compiled, dt, 400, &psi.amps);
        if let QuantumState::Vector(v) = exact {
            let err: f64 = v
                .amps
                .iter()
                .zip(&rk)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < TOL_ODE, "rk4 deviation {err:.3e}");
        }
    }

    #[test]
    fn expmv_matches_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..5 {
            let h = random_hermitian_sum(&mut rng, 4, 8);
            let psi = random_state(&mut rng, 4);
            let dt = 0.7;
            let exact = exact_evolve(&h, dt, &psi.clone().into()).unwrap();
            let krylov = expmv(&h.compile(4).unwrap(), dt, &psi.amps, 24);
            if let QuantumState::Vector(v) = exact {
                let err: f64 = v
                    .amps
                    .iter()
                    .zip(&krylov)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(err < 1e-9, "krylov deviation {err:.3e}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_calibrated() {
        let amps = vec![c(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2];
        let psi: QuantumState = StateVector::from_amps(1, amps).unwrap().into();
        let a = sample_counts(&psi, 8192, 42).unwrap();
        let b = sample_counts(&psi, 8192, 42).unwrap();
        assert_eq!(a, b);
        let p0 = *a.get(&0).unwrap_or(&0) as f64 / 8192.0;
        assert!((p0 - 0.5).abs() < 0.02, "p0 = {p0}");
        let basis: QuantumState = StateVector::zero(3).unwrap().into();
        let counts = sample_counts(&basis, 1024, 1).unwrap();
        assert_eq!(counts.get(&0), Some(&1024));
        assert!(sample_counts(&basis, 0, 1).is_err());
    }

    #[test]
    fn fidelity_basics() {
        let zero: QuantumState = StateVector::basis(1, 0).unwrap().into();
        let one: QuantumState = StateVector::basis(1, 1).unwrap().into();
        assert_abs_diff_eq!(state_fidelity(&zero, &zero).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state_fidelity(&zero, &one).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uhlmann_matches_pure_overlap() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_state(&mut rng, 2);
            let b = random_state(&mut rng, 2);
            let fv = state_fidelity(&a.clone().into(), &b.clone().into()).unwrap();
            let fd = state_fidelity(
                &DensityMatrix::from_pure(&a).into(),
                &DensityMatrix::from_pure(&b).into(),
            )
            .unwrap();
            assert_abs_diff_eq!(fv, fd, epsilon = 1e-7);
            let fm = state_fidelity(&a.clone().into(), &DensityMatrix::from_pure(&b).into())
                .unwrap();
            assert_abs_diff_eq!(fv, fm, epsilon = 1e-10);
        }
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(1, 0), derive_seed(1, 0));
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    proptest! {
        #[test]
        fn pauli_product_matches_dense(seed in 0u64..500) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let axes = [Axis::X, Axis::Y, Axis::Z];
            let mk = |rng: &mut ChaCha20Rng| {
                let mut factors = Vec::new();
                for q in 0..3 {
                    if rng.gen::<f64>() < 0.7 {
                        factors.push((q, axes[rng.gen_range(0..3)]));
                    }
                }
                PauliTerm::new(
                    c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                    &factors,
                )
            };
            let p = mk(&mut rng);
            let q = mk(&mut rng);
            let prod = p.mul(&q);
            let dp = pauli_to_dense(&PauliSum::from_terms(vec![p]), 3).unwrap();
            let dq = pauli_to_dense(&PauliSum::from_terms(vec![q]), 3).unwrap();
            let dprod = pauli_to_dense(&PauliSum::from_terms(vec![prod]), 3).unwrap();
            prop_assert!((dp * dq - dprod).norm() < 1e-12);
        }

        #[test]
        fn dense_is_linear(seed in 0u64..200) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let p = random_hermitian_sum(&mut rng, 2, 3);
            let q = random_hermitian_sum(&mut rng, 2, 3);
            let (a, b) = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let lhs = pauli_to_dense(
                &p.scaled(c(a, 0.0)).plus(&q.scaled(c(b, 0.0))),
                2,
            )
            .unwrap();
            let rhs = pauli_to_dense(&p, 2).unwrap() * c(a, 0.0)
                + pauli_to_dense(&q, 2).unwrap() * c(b, 0.0);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn evolve_reverses(seed in 0u64..60) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let h = random_hermitian_sum(&mut rng, 3, 5);
            let psi = random_state(&mut rng, 3);
            let dt = rng.gen::<f64>() * 2.0;
            let fwd = exact_evolve(&h, dt, &psi.clone().into()).unwrap();
            let back = exact_evolve(&h, -dt, &fwd).unwrap();
            if let (QuantumState::Vector(v), _) = (&back, ()) {
                prop_assert!((v.norm() - 1.0).abs() < TOL_ALG);
                let err: f64 = v
                    .amps
                    .iter()
                    .zip(&psi.amps)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                prop_assert!(err < 1e-9);
            }
        }
    }
}
