//! Hamiltonians of the qubit tri-junction in its spin, fermionic, and rotated
//! forms, the three-arm Kitaev-chain extension with an auxiliary junction
//! qubit, and the six-step piecewise-linear coupling schedule.

use crate::simcore::{pauli_to_dense, Axis, PauliSum, PauliTerm, SimError, C64, MAX_QUBITS};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("time {t} outside the protocol window [0, {end}]")]
    OutsideWindow { t: f64, end: f64 },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Parameters of the three-qubit tri-junction model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriJunctionParams {
    /// Per-arm splitting, in units of `j_max`.
    pub alpha: [f64; 3],
    pub j_max: f64,
    /// Duration of one schedule step, in units of 1/`j_max`.
    pub tau: f64,
    pub trotter_steps_per_swap: usize,
}

impl Default for TriJunctionParams {
    fn default() -> Self {
        TriJunctionParams {
            alpha: [0.2; 3],
            j_max: 1.0,
            tau: 3.3,
            trotter_steps_per_swap: 3,
        }
    }
}

impl TriJunctionParams {
    pub fn uniform(alpha: f64) -> Self {
        TriJunctionParams {
            alpha: [alpha; 3],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j_max > 0.0) {
            return Err(ModelError::Invalid(format!("j_max = {}", self.j_max)));
        }
        if !(self.tau > 0.0) {
            return Err(ModelError::Invalid(format!("tau = {}", self.tau)));
        }
        if self.trotter_steps_per_swap == 0 {
            return Err(ModelError::Invalid("trotter_steps_per_swap = 0".into()));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(ModelError::Invalid(format!("alpha = {:?}", self.alpha)));
        }
        Ok(())
    }
}

/// Couplings (J01, J12, J20) at time `t` of the six-step braid schedule.
///
/// Each step ramps one coupling down linearly while the next one ramps up;
/// steps repeat with period three and the protocol ends at 6 tau.
pub fn schedule_eval(t: f64, tau: f64, j_max: f64) -> Result<[f64; 3]> {
    let end = 6.0 * tau;
    if !t.is_finite() || t < 0.0 || t > end {
        return Err(ModelError::OutsideWindow { t, end });
    }
    let step = ((t / tau) as usize).min(5);
    let s = (t - step as f64 * tau) / tau;
    let down = j_max * (1.0 - s);
    let up = j_max * s;
    Ok(match step % 3 {
        0 => [down, up, 0.0],
        1 => [0.0, down, up],
        _ => [up, 0.0, down],
    })
}

/// Couplings at time `t` for the given parameter set.
pub fn schedule_eval_params(p: &TriJunctionParams, t: f64) -> Result<[f64; 3]> {
    schedule_eval(t, p.tau, p.j_max)
}

/// Three-qubit spin form: alpha-weighted Z terms plus the three exchange terms.
pub fn build_qubit_hamiltonian(p: &TriJunctionParams, j: [f64; 3]) -> Result<PauliSum> {
    p.validate()?;
    let mut h = PauliSum::new();
    for (q, &a) in p.alpha.iter().enumerate() {
        h.add_term(a, &[(q, Axis::Z)]);
    }
    h.add_term(j[0], &[(0, Axis::Y), (1, Axis::X)]);
    h.add_term(j[1], &[(1, Axis::Y), (2, Axis::X)]);
    h.add_term(j[2], &[(0, Axis::Y), (1, Axis::Z), (2, Axis::X)]);
    Ok(h)
}

fn majorana(kind: char, site: usize) -> PauliTerm {
    let mut factors: Vec<(usize, Axis)> = (0..site).map(|k| (k, Axis::Z)).collect();
    factors.push((site, if kind == 'x' { Axis::X } else { Axis::Y }));
    PauliTerm::real(1.0, &factors)
}

/// Fermionic form of the tri-junction on three sites, as a dense matrix.
pub fn build_fermion_hamiltonian(p: &TriJunctionParams, j: [f64; 3]) -> Result<DMatrix<C64>> {
    p.validate()?;
    let i1 = Complex64::new(0.0, 1.0);
    let mut h = PauliSum::new();
    for (a, &alpha) in p.alpha.iter().enumerate() {
        let mut t = majorana('x', a).mul(&majorana('y', a));
        t.coeff *= i1 * alpha;
        h.push(t);
    }
    for (coupling, (a, b)) in j.iter().zip([(0usize, 1usize), (1, 2), (0, 2)]) {
        let mut t = majorana('x', a).mul(&majorana('x', b));
        t.coeff *= i1 * coupling;
        h.push(t);
    }
    h.hermitian_check(1e-12)?;
    Ok(pauli_to_dense(&h, 3)?)
}

/// The six Majorana operators of the tri-junction as dense matrices.
pub fn majorana_operators() -> Vec<DMatrix<C64>> {
    let mut out = Vec::with_capacity(6);
    for a in 0..3 {
        for kind in ['x', 'y'] {
            let term = majorana(kind, a);
            out.push(
                pauli_to_dense(&PauliSum::from_terms(vec![term]), 3)
                    .expect("three-qubit register"),
            );
        }
    }
    out
}

/// Rotated frame with only one- and two-qubit terms.
pub fn build_rotated_hamiltonian(p: &TriJunctionParams, j: [f64; 3]) -> Result<PauliSum> {
    p.validate()?;
    let mut h = PauliSum::new();
    h.add_term(p.alpha[0], &[(0, Axis::X), (1, Axis::Y)]);
    h.add_term(p.alpha[1], &[(0, Axis::Y), (1, Axis::X)]);
    h.add_term(p.alpha[2], &[(2, Axis::Z)]);
    h.add_term(j[0], &[(1, Axis::Z)]);
    h.add_term(-j[1], &[(1, Axis::Y), (2, Axis::X)]);
    h.add_term(j[2], &[(1, Axis::X), (2, Axis::X)]);
    Ok(h)
}

/// Dense frame-change operator relating the spin and rotated forms.
pub fn rotation_frame_operator() -> DMatrix<C64> {
    let mut u = PauliSum::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    u.add_term(s, &[(1, Axis::Z)]);
    u.add_term(s, &[(0, Axis::Y), (1, Axis::X)]);
    pauli_to_dense(&u, 3).expect("three-qubit register")
}

/// Parameters of the three-arm Kitaev-chain model with one auxiliary qubit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainModelParams {
    pub arm_length: usize,
    pub mu: f64,
    pub delta: f64,
    pub j: [f64; 3],
}

/// Register size of the chain model: three arms plus the auxiliary qubit.
pub fn chain_register_size(arm_length: usize) -> usize {
    3 * arm_length + 1
}

/// Qubit index of site `i` on arm `a`.
pub fn chain_qubit(a: usize, i: usize, arm_length: usize) -> usize {
    a * arm_length + i
}

const CHAIN_AUX_AXES: [(usize, usize, Axis); 3] = [
    (0, 1, Axis::Z),
    (1, 2, Axis::X),
    (2, 0, Axis::Y),
];

/// Spin form of the chain model on 3L+1 qubits.
pub fn build_chain_hamiltonian(c: &ChainModelParams) -> Result<PauliSum> {
    let l = c.arm_length;
    if l == 0 {
        return Err(ModelError::Invalid("arm_length = 0".into()));
    }
    let n = chain_register_size(l);
    if n > MAX_QUBITS {
        return Err(ModelError::Sim(SimError::Capacity(n)));
    }
    let aux = 3 * l;
    let mut h = PauliSum::new();
    for a in 0..3 {
        for i in 0..l {
            h.add_term(c.mu, &[(chain_qubit(a, i, l), Axis::Z)]);
        }
        for i in 0..l - 1 {
            h.add_term(
                c.delta,
                &[
                    (chain_qubit(a, i, l), Axis::X),
                    (chain_qubit(a, i + 1, l), Axis::X),
                ],
            );
        }
    }
    for (k, &(a, b, axis)) in CHAIN_AUX_AXES.iter().enumerate() {
        if c.j[k] != 0.0 {
            h.add_term(
                c.j[k],
                &[
                    (chain_qubit(a, 0, l), Axis::X),
                    (chain_qubit(b, 0, l), Axis::X),
                    (aux, axis),
                ],
            );
        }
    }
    Ok(h)
}

/// Fermionic chain model on 3L sites under a plain Jordan-Wigner mapping.
///
/// Its sorted spectrum, repeated twice, must reproduce the spin form's; the
/// auxiliary qubit contributes exactly this twofold degeneracy.
pub fn build_chain_fermion_hamiltonian(c: &ChainModelParams) -> Result<DMatrix<C64>> {
    let l = c.arm_length;
    if l == 0 {
        return Err(ModelError::Invalid("arm_length = 0".into()));
    }
    let n = 3 * l;
    if n > MAX_QUBITS {
        return Err(ModelError::Sim(SimError::Capacity(n)));
    }
    let i1 = Complex64::new(0.0, 1.0);
    let site = |a: usize, i: usize| a * l + i;
    let mut h = PauliSum::new();
    for a in 0..3 {
        for i in 0..l {
            let mut t = majorana('y', site(a, i)).mul(&majorana('x', site(a, i)));
            t.coeff *= i1 * c.mu;
            h.push(t);
        }
        for i in 0..l - 1 {
            let mut t = majorana('y', site(a, i)).mul(&majorana('x', site(a, i + 1)));
            t.coeff *= i1 * c.delta;
            h.push(t);
        }
    }
    for (k, &(a, b, _)) in CHAIN_AUX_AXES.iter().enumerate() {
        if c.j[k] != 0.0 {
            let mut t = majorana('x', site(a, 0)).mul(&majorana('x', site(b, 0)));
            t.coeff *= i1 * c.j[k];
            h.push(t);
        }
    }
    h.hermitian_check(1e-12)?;
    Ok(pauli_to_dense(&h, n)?)
}

/// Sorted eigenvalues of a Hermitian dense matrix.
pub fn sorted_spectrum(m: &DMatrix<C64>) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut w: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    w.sort_by(f64::total_cmp);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn schedule_examples() {
        let tau = 3.3;
        let j = schedule_eval(0.0, tau, 1.0).unwrap();
        assert_eq!(j, [1.0, 0.0, 0.0]);
        let j = schedule_eval(tau / 2.0, tau, 1.0).unwrap();
        assert_abs_diff_eq!(j[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(j[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(j[2], 0.0, epsilon = 1e-12);
        let j = schedule_eval(3.0 * tau, tau, 1.0).unwrap();
        assert_abs_diff_eq!(j[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(j[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(j[2], 0.0, epsilon = 1e-12);
        assert!(schedule_eval(-0.1, tau, 1.0).is_err());
        assert!(schedule_eval(6.0 * tau + 0.1, tau, 1.0).is_err());
    }

    #[test]
    fn schedule_is_continuous_and_bounded() {
        let (tau, j_max) = (3.3, 1.0);
        let eps = 1e-4;
        let mut t = 0.0;
        while t + eps <= 6.0 * tau {
            let a = schedule_eval(t, tau, j_max).unwrap();
            let b = schedule_eval(t + eps, tau, j_max).unwrap();
            for k in 0..3 {
                assert!(a[k] >= -1e-15 && a[k] <= j_max + 1e-15);
                assert!((b[k] - a[k]).abs() <= j_max / tau * eps + 1e-12);
            }
            t += 0.171;
        }
        for step in 0..=6 {
            let j = schedule_eval(step as f64 * tau, tau, j_max).unwrap();
            let ones = j.iter().filter(|&&x| (x - j_max).abs() < 1e-12).count();
            let zeros = j.iter().filter(|&&x| x.abs() < 1e-12).count();
            assert_eq!((ones, zeros), (1, 2), "boundary at step {step}");
        }
    }

    #[test]
    fn qubit_spectrum_uncoupled() {
        let p = TriJunctionParams::uniform(1.0);
        let h = build_qubit_hamiltonian(&p, [0.0; 3]).unwrap();
        let w = sorted_spectrum(&h.to_dense(3).unwrap());
        let want = [-3.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 3.0];
        for (a, b) in w.iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn qubit_doublet_structure() {
        let p = TriJunctionParams::default();
        let h = build_qubit_hamiltonian(&p, [1.0, 0.0, 0.0]).unwrap();
        let w = sorted_spectrum(&h.to_dense(3).unwrap());
        let split = w[7] - w[6];
        let next_gap = w[6] - w[5];
        assert!(split > 1e-6, "doublet splitting {split}");
        assert!(
            split < next_gap / 3.0,
            "splitting {split} not well below gap {next_gap}"
        );
    }

    #[test]
    fn qubit_conserves_parity() {
        let p = TriJunctionParams::default();
        let h = build_qubit_hamiltonian(&p, [0.3, 0.7, 0.2]).unwrap();
        let hd = h.to_dense(3).unwrap();
        let mut parity = PauliSum::new();
        parity.add_term(1.0, &[(0, Axis::Z), (1, Axis::Z), (2, Axis::Z)]);
        let pd = parity.to_dense(3).unwrap();
        assert!((&hd * &pd - &pd * &hd).norm() < 1e-12);
    }

    #[test]
    fn majorana_algebra() {
        let gams = majorana_operators();
        let id = DMatrix::<C64>::identity(8, 8);
        for (i, gi) in gams.iter().enumerate() {
            for (k, gk) in gams.iter().enumerate() {
                let anti = gi * gk + gk * gi;
                let want = if i == k { &id * C64::new(2.0, 0.0) } else { &id * C64::new(0.0, 0.0) };
                assert!(
                    (anti - want).norm() < 1e-12,
                    "anticommutator ({i},{k})"
                );
            }
        }
        for a in 0..3 {
            let gx = &gams[2 * a];
            assert!((gx * gx - &id).norm() < 1e-12);
        }
    }

    #[test]
    fn fermion_spectrum_matches_qubit() {
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        for draw in 0..20 {
            let mut p = TriJunctionParams::default();
            p.alpha = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let j = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let wq = sorted_spectrum(&build_qubit_hamiltonian(&p, j).unwrap().to_dense(3).unwrap());
            let wf = sorted_spectrum(&build_fermion_hamiltonian(&p, j).unwrap());
            for (a, b) in wq.iter().zip(wf.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            let _ = draw;
        }
    }

    #[test]
    fn rotated_terms_are_local() {
        let p = TriJunctionParams::default();
        let h = build_rotated_hamiltonian(&p, [0.4, 0.9, 0.1]).unwrap();
        assert!(h.terms.iter().all(|t| t.weight() <= 2));
    }

    #[test]
    fn rotated_frame_conjugation() {
        let u = rotation_frame_operator();
        let id = DMatrix::<C64>::identity(8, 8);
        assert!((&u * &u - &id).norm() < 1e-12);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..8 {
            let mut p = TriJunctionParams::default();
            p.alpha = [rng.gen(), rng.gen(), rng.gen()];
            let j = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let h = build_qubit_hamiltonian(&p, j).unwrap().to_dense(3).unwrap();
            let hbar = build_rotated_hamiltonian(&p, j).unwrap().to_dense(3).unwrap();
            assert!(
                (&u * &h * &u - &hbar).norm() < 1e-10,
                "conjugation mismatch at J = {j:?}"
            );
        }
    }

    #[test]
    fn chain_ground_energy_uncoupled() {
        let c = ChainModelParams {
            arm_length: 2,
            mu: 0.0,
            delta: 1.0,
            j: [0.0; 3],
        };
        let h = build_chain_hamiltonian(&c).unwrap().to_dense(7).unwrap();
        let w = sorted_spectrum(&h);
        assert_abs_diff_eq!(w[0], -3.0, epsilon = 1e-10);
    }

    #[test]
    fn chain_doubles_fermion_spectrum() {
        let cases = [
            (0.0, 1.0, [1.0, 0.0, 0.0], -4.0),
            (0.5, 1.0, [1.0, 0.0, 0.0], -4.841248),
            (0.3, 0.8, [0.4, 0.7, 0.2], -3.612876),
        ];
        for (mu, delta, j, e0) in cases {
            let c = ChainModelParams {
                arm_length: 2,
                mu,
                delta,
                j,
            };
            let ws = sorted_spectrum(&build_chain_hamiltonian(&c).unwrap().to_dense(7).unwrap());
            let wf = sorted_spectrum(&build_chain_fermion_hamiltonian(&c).unwrap());
            let mut doubled: Vec<f64> = wf.iter().flat_map(|&x| [x, x]).collect();
            doubled.sort_by(f64::total_cmp);
            let err = ws
                .iter()
                .zip(&doubled)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "doubling deviation {err:.2e} at mu={mu}");
            assert_abs_diff_eq!(ws[0], e0, epsilon = 1e-5);
        }
    }

    #[test]
    fn chain_register_sizes() {
        assert_eq!(chain_register_size(3), 10);
        let c = ChainModelParams {
            arm_length: 4,
            mu: 0.1,
            delta: 1.0,
            j: [0.0; 3],
        };
        assert!(matches!(
            build_chain_hamiltonian(&c),
            Err(ModelError::Sim(SimError::Capacity(13)))
        ));
    }

    #[test]
    fn params_validation() {
        let mut p = TriJunctionParams::default();
        p.j_max = 0.0;
        assert!(p.validate().is_err());
        let mut p = TriJunctionParams::default();
        p.trotter_steps_per_swap = 0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn three_forms_share_spectrum(
            a0 in -1.0f64..1.0, a1 in -1.0f64..1.0, a2 in -1.0f64..1.0,
            j0 in -1.0f64..1.0, j1 in -1.0f64..1.0, j2 in -1.0f64..1.0,
        ) {
            let mut p = TriJunctionParams::default();
            p.alpha = [a0, a1, a2];
            let j = [j0, j1, j2];
            let wq = sorted_spectrum(&build_qubit_hamiltonian(&p, j).unwrap().to_dense(3).unwrap());
            let wf = sorted_spectrum(&build_fermion_hamiltonian(&p, j).unwrap());
            let wr = sorted_spectrum(&build_rotated_hamiltonian(&p, j).unwrap().to_dense(3).unwrap());
            for k in 0..8 {
                prop_assert!((wq[k] - wf[k]).abs() < 1e-10);
                prop_assert!((wq[k] - wr[k]).abs() < 1e-10);
            }
        }
    }
}
