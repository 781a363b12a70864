//! Bit-flip error channels with angle-proportional two-qubit scaling,
//! delay-induced noise, and readout-confusion modeling and mitigation.

use crate::circuits::{Circuit, CircuitError, Gate};
use crate::simcore::{qubit_mask, DensityMatrix, QuantumState, SimError, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error("probability {0} outside [0, 0.5]")]
    Probability(f64),
    #[error("rotation magnitude {0} outside [0, pi]")]
    AngleRange(f64),
    #[error("negative rate or duration: {0}")]
    Negative(f64),
    #[error("channel arity {0} not supported, expected 1 or 2")]
    Arity(usize),
    #[error("confusion matrix is singular")]
    Singular,
    #[error("confusion matrix is not column-stochastic")]
    NotStochastic,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

pub type Result<T> = std::result::Result<T, NoiseError>;

/// Stochastic error model applied after each gate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Bit-flip probability after each single-qubit gate.
    pub eps_1q: f64,
    /// Per-qubit bit-flip probability after each two-qubit gate.
    pub eps_cnot: f64,
    /// Bit-flip probability per nanosecond of inserted delay.
    pub delay_rate_per_ns: f64,
    /// Delay inserted after each ZX rotation.
    pub delay_ns: f64,
    /// Readout assignment error P(read 1 | prepared 0), per qubit.
    pub readout_p10: f64,
    /// Readout assignment error P(read 0 | prepared 1), per qubit.
    pub readout_p01: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            eps_1q: 2.5e-4,
            eps_cnot: 8.15e-3,
            delay_rate_per_ns: 1.5e-4,
            delay_ns: 0.0,
            readout_p10: 0.0,
            readout_p01: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            eps_1q: 0.0,
            eps_cnot: 0.0,
            delay_rate_per_ns: 0.0,
            delay_ns: 0.0,
            readout_p10: 0.0,
            readout_p01: 0.0,
        }
    }

    pub fn delay_prob(&self) -> f64 {
        self.delay_rate_per_ns * self.delay_ns
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.delay_rate_per_ns, self.delay_ns] {
            if !(r >= 0.0) {
                return Err(NoiseError::Negative(r));
            }
        }
        for p in [
            self.eps_1q,
            self.eps_cnot,
            self.delay_prob(),
            self.readout_p10,
            self.readout_p01,
        ] {
            check_prob(p)?;
        }
        Ok(())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&p) {
        return Err(NoiseError::Probability(p));
    }
    Ok(())
}

/// Kraus representation of a quantum channel.
#[derive(Clone, Debug)]
pub struct Channel {
    pub kraus: Vec<DMatrix<C64>>,
}

impl Channel {
    pub fn dim(&self) -> usize {
        self.kraus.first().map_or(0, |k| k.nrows())
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let dim = self.dim();
        let mut out = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        for k in &self.kraus {
            out += k * rho * k.adjoint();
        }
        out
    }

    /// Deviation of the Kraus completeness sum from the identity.
    pub fn completeness_defect(&self) -> f64 {
        let dim = self.dim();
        let mut acc = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        for k in &self.kraus {
            acc += k.adjoint() * k;
        }
        (acc - DMatrix::<C64>::identity(dim, dim)).norm()
    }

    /// Choi matrix built by acting on each matrix unit.
    pub fn choi(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let mut j = DMatrix::from_element(dim * dim, dim * dim, C64::new(0.0, 0.0));
        for a in 0..dim {
            for b in 0..dim {
                let mut unit = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
                unit[(a, b)] = C64::new(1.0, 0.0);
                let img = self.apply(&unit);
                for r in 0..dim {
                    for s in 0..dim {
                        j[(a * dim + r, b * dim + s)] = img[(r, s)];
                    }
                }
            }
        }
        j
    }
}

/// Symmetric bit-flip channel on one or two qubits.
pub fn bitflip_channel(eps: f64, arity: usize) -> Result<Channel> {
    check_prob(eps)?;
    let x = [
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ];
    let id1 = DMatrix::<C64>::identity(2, 2);
    let xm = DMatrix::from_row_slice(2, 2, &[x[0][0], x[0][1], x[1][0], x[1][1]]);
    let keep = id1.map(|v| v * (1.0 - eps).sqrt());
    let flip = xm.map(|v| v * eps.sqrt());
    match arity {
        1 => Ok(Channel { kraus: vec![keep, flip] }),
        2 => {
            let mut kraus = Vec::with_capacity(4);
            for a in [&keep, &flip] {
                for b in [&keep, &flip] {
                    kraus.push(a.kronecker(b));
                }
            }
            Ok(Channel { kraus })
        }
        other => Err(NoiseError::Arity(other)),
    }
}

/// Bit-flip probability attributed to a ZX rotation of magnitude `phi`.
pub fn epsilon_for_angle(phi: f64, eps_cnot: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&phi) {
        return Err(NoiseError::AngleRange(phi));
    }
    check_prob(eps_cnot)?;
    Ok(phi / PI * eps_cnot)
}

fn bitflip_on(rho: &DMatrix<C64>, n: usize, q: usize, eps: f64) -> DMatrix<C64> {
    if eps == 0.0 {
        return rho.clone();
    }
    let mask = qubit_mask(q, n);
    let dim = rho.nrows();
    let mut out = rho.map(|v| v * (1.0 - eps));
    for i in 0..dim {
        for j in 0..dim {
            out[(i, j)] += eps * rho[(i ^ mask, j ^ mask)];
        }
    }
    out
}

/// Density-matrix evolution with bit-flip noise after every gate.
///
/// Single-qubit gates are followed by an `eps_1q` flip on their qubit,
/// controlled gates by `eps_cnot` flips on both qubits, and ZX rotations by
/// angle-proportional flips plus the configured delay noise on both qubits.
pub fn noisy_apply(
    state: &QuantumState,
    circuit: &Circuit,
    model: &NoiseModel,
) -> Result<DensityMatrix> {
    model.validate()?;
    let n = circuit.n;
    if n != state.n() {
        return Err(NoiseError::Sim(SimError::SizeMismatch(n, state.n())));
    }
    let mut rho = match state {
        QuantumState::Vector(v) => DensityMatrix::from_pure(v).mat,
        QuantumState::Density(d) => d.mat.clone(),
    };
    let delay = model.delay_prob();
    for g in &circuit.gates {
        let u = g.dense(n)?;
        rho = &u * rho * u.adjoint();
        match *g {
            Gate::Rx { q, .. } | Gate::Ry { q, .. } | Gate::Rz { q, .. } => {
                rho = bitflip_on(&rho, n, q, model.eps_1q);
            }
            Gate::Cnot { c, t } | Gate::CPauli { c, t, .. } => {
                rho = bitflip_on(&rho, n, c, model.eps_cnot);
                rho = bitflip_on(&rho, n, t, model.eps_cnot);
            }
            Gate::ZxRot { c, t, theta } => {
                let eps = epsilon_for_angle(theta.abs(), model.eps_cnot)?;
                rho = bitflip_on(&rho, n, c, eps);
                rho = bitflip_on(&rho, n, t, eps);
                if delay > 0.0 {
                    rho = bitflip_on(&rho, n, c, delay);
                    rho = bitflip_on(&rho, n, t, delay);
                }
            }
        }
    }
    Ok(DensityMatrix::from_matrix(n, rho)?)
}

/// Column-stochastic readout map, M[observed][prepared].
#[derive(Clone, Debug)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub mat: DMatrix<f64>,
}

impl ConfusionMatrix {
    pub fn validate(&self) -> Result<()> {
        let dim = 1usize << self.n;
        if self.mat.nrows() != dim || self.mat.ncols() != dim {
            return Err(NoiseError::Sim(SimError::SizeMismatch(self.mat.nrows(), dim)));
        }
        for col in 0..dim {
            let mut sum = 0.0;
            for row in 0..dim {
                let v = self.mat[(row, col)];
                if v < 0.0 {
                    return Err(NoiseError::NotStochastic);
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(NoiseError::NotStochastic);
            }
        }
        Ok(())
    }
}

/// Tensor product of the per-qubit assignment-error maps.
pub fn build_confusion(model: &NoiseModel, n: usize) -> Result<ConfusionMatrix> {
    model.validate()?;
    let single = DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0 - model.readout_p10,
            model.readout_p01,
            model.readout_p10,
            1.0 - model.readout_p01,
        ],
    );
    let mut mat = DMatrix::from_element(1, 1, 1.0);
    for _ in 0..n {
        mat = mat.kronecker(&single);
    }
    let out = ConfusionMatrix { n, mat };
    out.validate()?;
    Ok(out)
}

/// Pushes an ideal distribution through the readout map.
pub fn apply_confusion(probs: &[f64], m: &ConfusionMatrix) -> Result<Vec<f64>> {
    let dim = 1usize << m.n;
    if probs.len() != dim {
        return Err(NoiseError::Sim(SimError::SizeMismatch(probs.len(), dim)));
    }
    let p = nalgebra::DVector::from_column_slice(probs);
    Ok((&m.mat * p).iter().copied().collect())
}

/// Inverts the readout map on measured frequencies, then clips negative
/// entries and renormalizes.
pub fn mitigate_readout(freqs: &[f64], m: &ConfusionMatrix) -> Result<Vec<f64>> {
    let dim = 1usize << m.n;
    if freqs.len() != dim {
        return Err(NoiseError::Sim(SimError::SizeMismatch(freqs.len(), dim)));
    }
    m.validate()?;
    let rhs = nalgebra::DVector::from_column_slice(freqs);
    let lu = m.mat.clone().lu();
    let solved = lu.solve(&rhs).ok_or(NoiseError::Singular)?;
    let mut out: Vec<f64> = solved.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(NoiseError::Singular);
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{build_braid_circuit, init_pm, Flavor, Sign};
    use crate::models::TriJunctionParams;
    use crate::simcore::{sample_probs, state_fidelity, StateVector};
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;

    #[test]
    fn two_qubit_flip_diagonal() {
        let ch = bitflip_channel(0.1, 2).unwrap();
        let mut rho = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let out = ch.apply(&rho);
        let want = [0.81, 0.09, 0.09, 0.01];
        for (k, &w) in want.iter().enumerate() {
            assert_abs_diff_eq!(out[(k, k)].re, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn half_probability_depolarizes_population() {
        let ch = bitflip_channel(0.5, 1).unwrap();
        let mut rho = DMatrix::from_element(2, 2, C64::new(0.0, 0.0));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let out = ch.apply(&rho);
        assert_abs_diff_eq!(out[(0, 0)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 1)].re, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn channels_are_cptp() {
        for eps in [0.0, 0.1, 0.5] {
            for arity in [1, 2] {
                let ch = bitflip_channel(eps, arity).unwrap();
                assert!(ch.completeness_defect() < 1e-12);
                let choi = ch.choi();
                let eig = SymmetricEigen::new(choi);
                let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                assert!(min > -1e-10, "choi eigenvalue {min}");
            }
        }
        assert!(bitflip_channel(0.7, 1).is_err());
        assert!(bitflip_channel(0.1, 3).is_err());
    }

    #[test]
    fn angle_scaling_examples() {
        assert_abs_diff_eq!(epsilon_for_angle(PI, 9.4e-3).unwrap(), 9.4e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(epsilon_for_angle(0.0, 9.4e-3).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            epsilon_for_angle(PI / 2.0, 9.4e-3).unwrap(),
            4.7e-3,
            epsilon = 1e-15
        );
        assert!(epsilon_for_angle(-0.1, 9.4e-3).is_err());
        assert!(epsilon_for_angle(3.5, 9.4e-3).is_err());
    }

    #[test]
    fn zero_model_matches_noiseless() {
        let p = TriJunctionParams::default();
        for flavor in [Flavor::Basis, Flavor::Scaled] {
            let c = crate::circuits::build_evolution_circuit(&p, flavor, 1).unwrap();
            let psi0 = init_pm(Sign::Plus).run_from_zero().unwrap();
            let pure = c.apply_to(&psi0).unwrap();
            let rho = noisy_apply(&psi0.clone().into(), &c, &NoiseModel::noiseless()).unwrap();
            let f = state_fidelity(&pure.into(), &rho.into()).unwrap();
            assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_cnot_population_structure() {
        let eps = 9.4e-3;
        let model = NoiseModel {
            eps_cnot: eps,
            eps_1q: 0.0,
            ..NoiseModel::noiseless()
        };
        let mut c = Circuit::new(2);
        c.push(Gate::Cnot { c: 0, t: 1 });
        let zero = StateVector::zero(2).unwrap();
        let rho = noisy_apply(&zero.into(), &c, &model).unwrap();
        assert_abs_diff_eq!(rho.mat[(0, 0)].re, (1.0 - eps) * (1.0 - eps), epsilon = 1e-12);
        assert_abs_diff_eq!(rho.mat[(3, 3)].re, eps * eps, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degradation_is_monotone_in_eps() {
        let p = TriJunctionParams::default();
        let c = build_braid_circuit(&p, Flavor::Basis).unwrap();
        let psi0 = init_pm(Sign::Plus).run_from_zero().unwrap();
        let pure: QuantumState = c.apply_to(&psi0).unwrap().into();
        let mut last = f64::INFINITY;
        for eps in [0.0, 0.003, 0.006, 0.009, 0.012] {
            let model = NoiseModel {
                eps_cnot: eps,
                ..NoiseModel::default()
            };
            let rho = noisy_apply(&psi0.clone().into(), &c, &model).unwrap();
            let f = state_fidelity(&pure, &rho.into()).unwrap();
            assert!(f <= last + 1e-12, "fidelity rose from {last} to {f}");
            last = f;
        }
    }

    #[test]
    fn delay_noise_only_touches_zx_gates() {
        let p = TriJunctionParams::default();
        let model = NoiseModel {
            delay_rate_per_ns: 1.5e-4,
            delay_ns: 100.0,
            ..NoiseModel::noiseless()
        };
        let basis = crate::circuits::build_evolution_circuit(&p, Flavor::Basis, 1).unwrap();
        let psi0 = init_pm(Sign::Plus).run_from_zero().unwrap();
        let pure = basis.apply_to(&psi0).unwrap();
        let rho = noisy_apply(&psi0.clone().into(), &basis, &model).unwrap();
        let f = state_fidelity(&pure.clone().into(), &rho.into()).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        let scaled = crate::circuits::build_evolution_circuit(&p, Flavor::Scaled, 1).unwrap();
        let pure_s = scaled.apply_to(&psi0).unwrap();
        let rho_s = noisy_apply(&psi0.clone().into(), &scaled, &model).unwrap();
        let f_s = state_fidelity(&pure_s.into(), &rho_s.into()).unwrap();
        assert!(f_s < 1.0 - 1e-4);
    }

    #[test]
    fn confusion_forward_then_mitigate_round_trip() {
        let model = NoiseModel {
            readout_p10: 0.02,
            readout_p01: 0.02,
            ..NoiseModel::noiseless()
        };
        let m = build_confusion(&model, 3).unwrap();
        m.validate().unwrap();
        let p: Vec<f64> = vec![0.3, 0.05, 0.1, 0.02, 0.25, 0.08, 0.15, 0.05];
        let f = apply_confusion(&p, &m).unwrap();
        assert_abs_diff_eq!(f.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let back = mitigate_readout(&f, &m).unwrap();
        for (a, b) in back.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let id = build_confusion(&NoiseModel::noiseless(), 3).unwrap();
        let same = mitigate_readout(&p, &id).unwrap();
        for (a, b) in same.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mitigation_recovers_sampled_distribution() {
        let model = NoiseModel {
            readout_p10: 0.02,
            readout_p01: 0.02,
            ..NoiseModel::noiseless()
        };
        let m = build_confusion(&model, 3).unwrap();
        let p: Vec<f64> = vec![0.3, 0.05, 0.1, 0.02, 0.25, 0.08, 0.15, 0.05];
        let f = apply_confusion(&p, &m).unwrap();
        let shots = 8192u64;
        let counts = sample_probs(&f, shots, 404).unwrap();
        let mut freqs = vec![0.0; 8];
        for (idx, c) in counts {
            freqs[idx] = c as f64 / shots as f64;
        }
        let hat = mitigate_readout(&freqs, &m).unwrap();
        for (k, (&a, &b)) in hat.iter().zip(&p).enumerate() {
            let sigma = (b * (1.0 - b) / shots as f64).sqrt();
            assert!(
                (a - b).abs() <= 3.0 * sigma + 2e-3,
                "bin {k}: {a} vs {b} sigma {sigma}"
            );
        }
    }

    #[test]
    fn model_validation() {
        assert!(NoiseModel::default().validate().is_ok());
        let bad = NoiseModel { eps_cnot: 0.6, ..NoiseModel::default() };
        assert!(bad.validate().is_err());
        let bad_delay = NoiseModel {
            delay_rate_per_ns: 1.5e-4,
            delay_ns: 1e5,
            ..NoiseModel::default()
        };
        assert!(bad_delay.validate().is_err());
        let neg = NoiseModel { delay_ns: -1.0, ..NoiseModel::default() };
        assert!(neg.validate().is_err());
    }
}
