//! Two-qubit process tomography by Pauli-transfer-matrix reconstruction,
//! process fidelity with a Choi-state cross-check, and the comparison of the
//! double-CNOT and pulse-scaled implementations of exp(-i theta YX/2).

use crate::circuits::{circuit_to_unitary, Circuit, CircuitError, Gate};
use crate::noise::{
    apply_confusion, build_confusion, mitigate_readout, noisy_apply, NoiseError, NoiseModel,
};
use crate::simcore::{derive_seed, sample_probs, Axis, SimError, StateVector, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, thiserror::Error)]
pub enum TomoError {
    #[error("process tomography needs a two-qubit circuit, got {0} qubits")]
    TwoQubitOnly(usize),
    #[error("input preparation matrix is singular")]
    SingularInputs,
    #[error("theta {0} outside (0, pi]")]
    ThetaRange(f64),
    #[error("empty theta list")]
    EmptySweep,
    #[error("reconstruction violates physicality: {0}")]
    Unphysical(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

pub type Result<T> = std::result::Result<T, TomoError>;

/// Pauli-transfer matrix of a reconstructed two-qubit channel.
#[derive(Clone, Debug)]
pub struct ProcessMatrix {
    pub mat: DMatrix<f64>,
    /// Shots per measurement setting; zero means exact probabilities.
    pub shots: u64,
    /// Set when the shot budget is too small for a well-conditioned inversion.
    pub ill_conditioned: bool,
}

impl ProcessMatrix {
    pub fn check_physical(&self) -> Result<()> {
        for n in 0..16 {
            let want = if n == 0 { 1.0 } else { 0.0 };
            if (self.mat[(0, n)] - want).abs() > 1e-9 {
                return Err(TomoError::Unphysical(format!(
                    "trace row entry {n} is {}",
                    self.mat[(0, n)]
                )));
            }
        }
        for m in 0..16 {
            for n in 0..16 {
                let v = self.mat[(m, n)];
                if v.abs() > 1.0 + 1e-9 {
                    return Err(TomoError::Unphysical(format!(
                        "entry ({m},{n}) = {v} outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which construction of exp(-i theta YX/2) is under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YxFlavor {
    DoubleCnot,
    Scaled,
}

/// Circuit implementing exp(-i theta YX/2) on qubits (0, 1).
pub fn yx_circuit(flavor: YxFlavor, theta: f64) -> Circuit {
    let mut c = Circuit::new(2);
    match flavor {
        YxFlavor::DoubleCnot => {
            c.push(Gate::Cnot { c: 0, t: 1 });
            c.push(Gate::Ry { q: 0, theta });
            c.push(Gate::Cnot { c: 0, t: 1 });
        }
        YxFlavor::Scaled => {
            c.push(Gate::Rx { q: 0, theta: FRAC_PI_2 });
            c.push(Gate::ZxRot { c: 0, t: 1, theta });
            c.push(Gate::Rx { q: 0, theta: -FRAC_PI_2 });
        }
    }
    c
}

/// One tomography evaluation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QptResult {
    pub theta: f64,
    pub flavor: YxFlavor,
    pub fidelity: f64,
    pub error: f64,
    pub shots: u64,
    pub seed: u64,
    pub ill_conditioned: bool,
}

fn pauli_1q(idx: usize) -> DMatrix<C64> {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let m = match idx {
        0 => [[one, zero], [zero, one]],
        1 => Axis::X.matrix(),
        2 => Axis::Y.matrix(),
        _ => Axis::Z.matrix(),
    };
    DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn pauli_2q(m: usize) -> DMatrix<C64> {
    pauli_1q(m / 4).kronecker(&pauli_1q(m % 4))
}

fn input_ket(code: usize) -> [C64; 2] {
    let h = 1.0 / 2.0_f64.sqrt();
    match code {
        0 => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        1 => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        2 => [C64::new(h, 0.0), C64::new(h, 0.0)],
        _ => [C64::new(h, 0.0), C64::new(0.0, h)],
    }
}

fn input_state(k: usize) -> StateVector {
    let a = input_ket(k / 4);
    let b = input_ket(k % 4);
    let mut amps = Vec::with_capacity(4);
    for &x in &a {
        for &y in &b {
            amps.push(x * y);
        }
    }
    StateVector::from_amps(2, amps).expect("4-component product state")
}

fn expectation(op: &DMatrix<C64>, rho: &DMatrix<C64>) -> f64 {
    (op * rho).trace().re
}

const SETTINGS: [[Axis; 2]; 9] = [
    [Axis::X, Axis::X],
    [Axis::X, Axis::Y],
    [Axis::X, Axis::Z],
    [Axis::Y, Axis::X],
    [Axis::Y, Axis::Y],
    [Axis::Y, Axis::Z],
    [Axis::Z, Axis::X],
    [Axis::Z, Axis::Y],
    [Axis::Z, Axis::Z],
];

fn measurement_rotation(axis: Axis, q: usize) -> Option<Gate> {
    match axis {
        Axis::X => Some(Gate::Ry { q, theta: -FRAC_PI_2 }),
        Axis::Y => Some(Gate::Rx { q, theta: FRAC_PI_2 }),
        Axis::Z => None,
    }
}

fn axis_index(axis: Axis) -> usize {
    match axis {
        Axis::X => 1,
        Axis::Y => 2,
        Axis::Z => 3,
    }
}

/// Reconstructs the Pauli-transfer matrix of a two-qubit circuit under the
/// given noise model.
///
/// The sixteen product inputs over {|0>, |1>, |+>, |+i>} are propagated as
/// density matrices. With `shots = 0` the Pauli expectations are exact;
/// otherwise nine measurement settings are sampled per input, readout
/// confusion is applied and mitigated per the model, and duplicate Pauli
/// estimates are averaged.
pub fn qpt(circuit: &Circuit, model: &NoiseModel, shots: u64, seed: u64) -> Result<ProcessMatrix> {
    if circuit.n != 2 {
        return Err(TomoError::TwoQubitOnly(circuit.n));
    }
    let paulis: Vec<DMatrix<C64>> = (0..16).map(pauli_2q).collect();
    let mut s = DMatrix::<f64>::zeros(16, 16);
    let mut t = DMatrix::<f64>::zeros(16, 16);
    let confusion = if model.readout_p10 > 0.0 || model.readout_p01 > 0.0 {
        Some(build_confusion(model, 2)?)
    } else {
        None
    };
    for k in 0..16 {
        let input = input_state(k);
        let rho_in = crate::simcore::DensityMatrix::from_pure(&input);
        for (m, p) in paulis.iter().enumerate() {
            s[(m, k)] = expectation(p, &rho_in.mat);
        }
        let rho_out = noisy_apply(&input.into(), circuit, model)?;
        if shots == 0 {
            for (m, p) in paulis.iter().enumerate() {
                t[(m, k)] = expectation(p, &rho_out.mat);
            }
            continue;
        }
        let mut sums = [0.0f64; 16];
        let mut hits = [0u32; 16];
        for (si, axes) in SETTINGS.iter().enumerate() {
            let mut rot = Circuit::new(2);
            for (q, &axis) in axes.iter().enumerate() {
                if let Some(g) = measurement_rotation(axis, q) {
                    rot.push(g);
                }
            }
            let u = circuit_to_unitary(&rot)?;
            let rotated = &u * &rho_out.mat * u.adjoint();
            let mut probs: Vec<f64> = (0..4).map(|i| rotated[(i, i)].re.max(0.0)).collect();
            if let Some(cm) = &confusion {
                probs = apply_confusion(&probs, cm)?;
            }
            let counts = sample_probs(&probs, shots, derive_seed(seed, (k * 9 + si) as u64))?;
            let mut freqs = vec![0.0f64; 4];
            for (idx, c) in counts {
                freqs[idx] = c as f64 / shots as f64;
            }
            if let Some(cm) = &confusion {
                freqs = mitigate_readout(&freqs, cm)?;
            }
            for pa in [0, axis_index(axes[0])] {
                for pb in [0, axis_index(axes[1])] {
                    let m = 4 * pa + pb;
                    let mut e = 0.0;
                    for (i, &f) in freqs.iter().enumerate() {
                        let mut sign = 1.0;
                        if pa != 0 && (i >> 1) & 1 == 1 {
                            sign = -sign;
                        }
                        if pb != 0 && i & 1 == 1 {
                            sign = -sign;
                        }
                        e += sign * f;
                    }
                    sums[m] += e;
                    hits[m] += 1;
                }
            }
        }
        for m in 0..16 {
            t[(m, k)] = if m == 0 { 1.0 } else { sums[m] / hits[m] as f64 };
        }
    }
    let s_inv = s.try_inverse().ok_or(TomoError::SingularInputs)?;
    Ok(ProcessMatrix {
        mat: t * s_inv,
        shots,
        ill_conditioned: shots > 0 && shots < 256,
    })
}

/// Pauli-transfer matrix of a unitary acting by conjugation.
pub fn ptm_of_unitary(u: &DMatrix<C64>) -> Result<DMatrix<f64>> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(TomoError::TwoQubitOnly(u.nrows().trailing_zeros() as usize));
    }
    let mut r = DMatrix::<f64>::zeros(16, 16);
    for n in 0..16 {
        let img = u * pauli_2q(n) * u.adjoint();
        for m in 0..16 {
            r[(m, n)] = (pauli_2q(m) * &img).trace().re / 4.0;
        }
    }
    Ok(r)
}

/// Process fidelity Tr(R_ideal^T R_measured) / 16.
pub fn process_fidelity(measured: &ProcessMatrix, ideal: &Circuit) -> Result<f64> {
    if ideal.n != 2 {
        return Err(TomoError::TwoQubitOnly(ideal.n));
    }
    let r_ideal = ptm_of_unitary(&circuit_to_unitary(ideal)?)?;
    let mut acc = 0.0;
    for m in 0..16 {
        for n in 0..16 {
            acc += r_ideal[(m, n)] * measured.mat[(m, n)];
        }
    }
    Ok(acc / 16.0)
}

/// Average gate fidelity implied by a process fidelity at d = 4.
pub fn average_gate_fidelity(f_pro: f64) -> f64 {
    (4.0 * f_pro + 1.0) / 5.0
}

fn choi_from_ptm(r: &DMatrix<f64>) -> DMatrix<C64> {
    let paulis: Vec<DMatrix<C64>> = (0..16).map(pauli_2q).collect();
    let mut j = DMatrix::from_element(16, 16, C64::new(0.0, 0.0));
    for a in 0..4 {
        for b in 0..4 {
            let mut unit = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
            unit[(a, b)] = C64::new(1.0, 0.0);
            let mut lam = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
            for m in 0..16 {
                for n in 0..16 {
                    if r[(m, n)] != 0.0 {
                        let weight = (&paulis[n] * &unit).trace() * (r[(m, n)] / 4.0);
                        lam += paulis[m].map(|x| x * weight);
                    }
                }
            }
            let block = lam.kronecker(&unit);
            j += block.map(|x| x / 4.0);
        }
    }
    j
}

/// Process fidelity recomputed through Choi states, for cross-checking the
/// transfer-matrix inner product.
pub fn choi_fidelity(measured: &ProcessMatrix, ideal: &Circuit) -> Result<f64> {
    if ideal.n != 2 {
        return Err(TomoError::TwoQubitOnly(ideal.n));
    }
    let r_ideal = ptm_of_unitary(&circuit_to_unitary(ideal)?)?;
    let j_m = choi_from_ptm(&measured.mat);
    let j_i = choi_from_ptm(&r_ideal);
    Ok((j_m * j_i).trace().re)
}

/// One point of the relative error-reduction sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReductionPoint {
    pub theta: f64,
    pub f_dcnot: f64,
    pub f_scaled: f64,
    /// 1 - E_scaled/E_dcnot; absent when the reference error vanishes.
    pub reduction: Option<f64>,
}

/// Evaluates both constructions at each theta, interleaved, and reports the
/// relative error reduction of the scaled flavor.
pub fn error_reduction_curve(
    thetas: &[f64],
    model: &NoiseModel,
    shots: u64,
    seed: u64,
) -> Result<Vec<ReductionPoint>> {
    if thetas.is_empty() {
        return Err(TomoError::EmptySweep);
    }
    let mut out = Vec::with_capacity(thetas.len());
    for (i, &theta) in thetas.iter().enumerate() {
        if !(theta > 0.0 && theta <= PI) {
            return Err(TomoError::ThetaRange(theta));
        }
        let ideal = yx_circuit(YxFlavor::DoubleCnot, theta);
        let dcnot = yx_circuit(YxFlavor::DoubleCnot, theta);
        let scaled = yx_circuit(YxFlavor::Scaled, theta);
        let r_a = qpt(&dcnot, model, shots, derive_seed(seed, 2 * i as u64))?;
        let f_a = process_fidelity(&r_a, &ideal)?;
        let r_b = qpt(&scaled, model, shots, derive_seed(seed, 2 * i as u64 + 1))?;
        let f_b = process_fidelity(&r_b, &ideal)?;
        let e_a = 1.0 - f_a;
        let reduction = if e_a.abs() > 1e-12 {
            Some(1.0 - (1.0 - f_b) / e_a)
        } else {
            None
        };
        out.push(ReductionPoint { theta, f_dcnot: f_a, f_scaled: f_b, reduction });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_tomo_noise() -> NoiseModel {
        NoiseModel {
            eps_cnot: 8.15e-3,
            eps_1q: 2.5e-4,
            delay_rate_per_ns: 0.0,
            delay_ns: 0.0,
            readout_p10: 0.0,
            readout_p01: 0.0,
        }
    }

    #[test]
    fn identity_reconstruction() {
        let c = Circuit::new(2);
        let r = qpt(&c, &NoiseModel::noiseless(), 0, 0).unwrap();
        r.check_physical().unwrap();
        for m in 0..16 {
            for n in 0..16 {
                let want = if m == n { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(r.mat[(m, n)], want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_matches_conjugation_formula() {
        let c = yx_circuit(YxFlavor::DoubleCnot, 0.7);
        let r = qpt(&c, &NoiseModel::noiseless(), 0, 0).unwrap();
        let direct = ptm_of_unitary(&circuit_to_unitary(&c).unwrap()).unwrap();
        let mut max_dev = 0.0f64;
        for m in 0..16 {
            for n in 0..16 {
                max_dev = max_dev.max((r.mat[(m, n)] - direct[(m, n)]).abs());
            }
        }
        assert!(max_dev < 1e-9, "max deviation {max_dev}");
        r.check_physical().unwrap();
    }

    #[test]
    fn noiseless_flavors_have_unit_fidelity() {
        for &theta in &[PI / 15.0, FRAC_PI_2, 3.0] {
            let ideal = yx_circuit(YxFlavor::DoubleCnot, theta);
            for flavor in [YxFlavor::DoubleCnot, YxFlavor::Scaled] {
                let r = qpt(&yx_circuit(flavor, theta), &NoiseModel::noiseless(), 0, 0).unwrap();
                let f = process_fidelity(&r, &ideal).unwrap();
                assert_abs_diff_eq!(f, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn fidelity_ignores_global_phase() {
        let theta = 0.9;
        let r = qpt(
            &yx_circuit(YxFlavor::DoubleCnot, theta),
            &default_tomo_noise(),
            0,
            0,
        )
        .unwrap();
        let plain = yx_circuit(YxFlavor::DoubleCnot, theta);
        let mut phased = yx_circuit(YxFlavor::DoubleCnot, theta);
        phased.push(Gate::Rz { q: 0, theta: 2.0 * PI });
        phased.push(Gate::Rz { q: 1, theta: 2.0 * PI });
        let f_plain = process_fidelity(&r, &plain).unwrap();
        let f_phased = process_fidelity(&r, &phased).unwrap();
        assert_abs_diff_eq!(f_plain, f_phased, epsilon = 1e-12);
    }

    #[test]
    fn depolarizing_reference_point() {
        let mut mat = DMatrix::<f64>::zeros(16, 16);
        mat[(0, 0)] = 1.0;
        let depol = ProcessMatrix { mat, shots: 0, ill_conditioned: false };
        let f = process_fidelity(&depol, &yx_circuit(YxFlavor::DoubleCnot, 1.1)).unwrap();
        assert_abs_diff_eq!(f, 1.0 / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_formula_cross_check() {
        let mut c = Circuit::new(2);
        c.push(Gate::Cnot { c: 0, t: 1 });
        let model = NoiseModel {
            eps_cnot: 9.4e-3,
            ..default_tomo_noise()
        };
        let r = qpt(&c, &model, 0, 0).unwrap();
        let mut ideal = Circuit::new(2);
        ideal.push(Gate::Cnot { c: 0, t: 1 });
        let f_ptm = process_fidelity(&r, &ideal).unwrap();
        let f_choi = choi_fidelity(&r, &ideal).unwrap();
        assert!((f_ptm - f_choi).abs() < 1e-8, "{f_ptm} vs {f_choi}");
        assert!(f_ptm < 1.0);
    }

    #[test]
    fn noisy_sweep_reference_values() {
        let model = default_tomo_noise();
        let thetas: Vec<f64> = (1..=15).map(|k| k as f64 * PI / 15.0).collect();
        let curve = error_reduction_curve(&thetas, &model, 0, 0).unwrap();
        let frozen = [
            (0, 0.967623, 0.998415, 0.9510),
            (7, 0.967620, 0.990831, 0.7168),
            (14, 0.967623, 0.983279, 0.4835),
        ];
        for (idx, f_a, f_b, red) in frozen {
            let p = &curve[idx];
            assert_abs_diff_eq!(p.f_dcnot, f_a, epsilon = 2e-6);
            assert_abs_diff_eq!(p.f_scaled, f_b, epsilon = 2e-6);
            assert_abs_diff_eq!(p.reduction.unwrap(), red, epsilon = 1e-4);
        }
        for p in &curve {
            assert!(p.f_scaled > p.f_dcnot, "ordering fails at theta {}", p.theta);
            assert!(p.reduction.unwrap() > 0.0);
        }
        for w in curve.windows(2) {
            assert!(w[0].reduction.unwrap() > w[1].reduction.unwrap());
        }
    }

    #[test]
    fn sampled_mode_converges() {
        let model = default_tomo_noise();
        let c = yx_circuit(YxFlavor::DoubleCnot, FRAC_PI_2);
        let ideal = yx_circuit(YxFlavor::DoubleCnot, FRAC_PI_2);
        let exact = {
            let r = qpt(&c, &model, 0, 0).unwrap();
            process_fidelity(&r, &ideal).unwrap()
        };
        let mut errs = Vec::new();
        for (level, &shots) in [512u64, 2048, 8192].iter().enumerate() {
            let mut acc = 0.0;
            for trial in 0..4u64 {
                let seed = derive_seed(90, level as u64 * 4 + trial);
                let r = qpt(&c, &model, shots, seed).unwrap();
                let f = process_fidelity(&r, &ideal).unwrap();
                acc += (f - exact).abs();
            }
            errs.push(acc / 4.0);
        }
        assert!(
            errs[0] > errs[1] && errs[1] > errs[2],
            "errors not decreasing: {errs:?}"
        );
        let r_small = qpt(&c, &model, 64, 1).unwrap();
        assert!(r_small.ill_conditioned);
    }

    #[test]
    fn sampled_mitigation_stays_close() {
        let model = NoiseModel {
            readout_p10: 0.02,
            readout_p01: 0.02,
            ..default_tomo_noise()
        };
        let exact_model = default_tomo_noise();
        let c = yx_circuit(YxFlavor::Scaled, FRAC_PI_2);
        let ideal = yx_circuit(YxFlavor::DoubleCnot, FRAC_PI_2);
        let exact = {
            let r = qpt(&c, &exact_model, 0, 0).unwrap();
            process_fidelity(&r, &ideal).unwrap()
        };
        let r = qpt(&c, &model, 8192, 7).unwrap();
        let f = process_fidelity(&r, &ideal).unwrap();
        assert!((f - exact).abs() < 0.01, "{f} vs {exact}");
    }

    #[test]
    fn sweep_validation() {
        let model = NoiseModel::noiseless();
        assert!(matches!(
            error_reduction_curve(&[], &model, 0, 0),
            Err(TomoError::EmptySweep)
        ));
        assert!(matches!(
            error_reduction_curve(&[0.0], &model, 0, 0),
            Err(TomoError::ThetaRange(_))
        ));
        assert!(matches!(
            error_reduction_curve(&[3.5], &model, 0, 0),
            Err(TomoError::ThetaRange(_))
        ));
        let curve = error_reduction_curve(&[FRAC_PI_2], &model, 0, 0).unwrap();
        assert!(curve[0].reduction.is_none());
        let three = Circuit::new(3);
        assert!(matches!(
            qpt(&three, &model, 0, 0),
            Err(TomoError::TwoQubitOnly(3))
        ));
    }
}
