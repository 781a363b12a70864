//! Gate set, state initializers, second-order Trotter circuit builders for both
//! gate flavors, unwinding utilities, and dense-unitary extraction.

use crate::models::{schedule_eval, ChainModelParams, ModelError, TriJunctionParams};
use crate::simcore::{
    apply_1q, apply_ctrl_1q, apply_zx, rotation_matrix, Axis, DensityMatrix, QuantumState,
    SimError, StateVector, C64, MAX_QUBITS,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("unwinding gates are only listed for steps 1-3, got {0}")]
    UnwindUnsupported(usize),
    #[error("chain initializer is only written for arm length 3, got {0}")]
    ChainUnsupported(usize),
    #[error("cannot parse circuit line {line}: {text}")]
    Parse { line: usize, text: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

/// Initializer branch selecting psi+ or psi-.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Gate flavor of the Trotter decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Basis,
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Rx { q: usize, theta: f64 },
    Ry { q: usize, theta: f64 },
    Rz { q: usize, theta: f64 },
    Cnot { c: usize, t: usize },
    CPauli { axis: Axis, c: usize, t: usize },
    ZxRot { c: usize, t: usize, theta: f64 },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Rx { q, .. } | Gate::Ry { q, .. } | Gate::Rz { q, .. } => vec![q],
            Gate::Cnot { c, t } | Gate::CPauli { c, t, .. } | Gate::ZxRot { c, t, .. } => {
                vec![c, t]
            }
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        self.qubits().len() == 2
    }

    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::Rx { q, theta } => Gate::Rx { q, theta: -theta },
            Gate::Ry { q, theta } => Gate::Ry { q, theta: -theta },
            Gate::Rz { q, theta } => Gate::Rz { q, theta: -theta },
            Gate::Cnot { .. } | Gate::CPauli { .. } => *self,
            Gate::ZxRot { c, t, theta } => Gate::ZxRot { c, t, theta: -theta },
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for q in self.qubits() {
            if q >= n {
                return Err(CircuitError::Sim(SimError::QubitRange { index: q, n }));
            }
        }
        Ok(())
    }

    /// Applies the gate to a state-vector amplitude array in place.
    pub fn apply_vec(&self, amps: &mut [C64], n: usize) -> Result<()> {
        self.check(n)?;
        match *self {
            Gate::Rx { q, theta } => apply_1q(amps, n, q, rotation_matrix(Axis::X, theta)),
            Gate::Ry { q, theta } => apply_1q(amps, n, q, rotation_matrix(Axis::Y, theta)),
            Gate::Rz { q, theta } => apply_1q(amps, n, q, rotation_matrix(Axis::Z, theta)),
            Gate::Cnot { c, t } => apply_ctrl_1q(amps, n, c, t, Axis::X.matrix()),
            Gate::CPauli { axis, c, t } => apply_ctrl_1q(amps, n, c, t, axis.matrix()),
            Gate::ZxRot { c, t, theta } => apply_zx(amps, n, c, t, theta),
        }
        Ok(())
    }

    /// Dense unitary of the gate on an `n`-qubit register.
    pub fn dense(&self, n: usize) -> Result<DMatrix<C64>> {
        self.check(n)?;
        if n > MAX_QUBITS {
            return Err(CircuitError::Sim(SimError::Capacity(n)));
        }
        let dim = 1usize << n;
        let mut m = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        let mut col = vec![C64::new(0.0, 0.0); dim];
        for k in 0..dim {
            col.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
            col[k] = C64::new(1.0, 0.0);
            self.apply_vec(&mut col, n)?;
            for (i, &x) in col.iter().enumerate() {
                m[(i, k)] = x;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::Rx { q, theta } => write!(f, "rx {q} {theta:?}"),
            Gate::Ry { q, theta } => write!(f, "ry {q} {theta:?}"),
            Gate::Rz { q, theta } => write!(f, "rz {q} {theta:?}"),
            Gate::Cnot { c, t } => write!(f, "cnot {c} {t}"),
            Gate::CPauli { axis, c, t } => {
                let a = match axis {
                    Axis::X => "cx",
                    Axis::Y => "cy",
                    Axis::Z => "cz",
                };
                write!(f, "{a} {c} {t}")
            }
            Gate::ZxRot { c, t, theta } => write!(f, "zx {c} {t} {theta:?}"),
        }
    }
}

/// Ordered list of gates on a fixed-size register.
#[derive(Clone, Debug, Default)]
pub struct Circuit {
    pub n: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Circuit { n, gates: Vec::new() }
    }

    pub fn push(&mut self, g: Gate) {
        self.gates.push(g);
    }

    pub fn extend(&mut self, other: &Circuit) {
        self.gates.extend_from_slice(&other.gates);
    }

    pub fn two_qubit_count(&self) -> usize {
        self.gates.iter().filter(|g| g.is_two_qubit()).count()
    }

    /// Reversed gate order with every gate inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            n: self.n,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// Applies all gates in order to a state-vector copy.
    pub fn apply_to(&self, psi: &StateVector) -> Result<StateVector> {
        let mut amps = psi.amps.clone();
        for g in &self.gates {
            g.apply_vec(&mut amps, self.n)?;
        }
        Ok(StateVector::from_amps(self.n, amps)?)
    }

    /// State produced from |0...0>.
    pub fn run_from_zero(&self) -> Result<StateVector> {
        self.apply_to(&StateVector::zero(self.n)?)
    }
}

/// Product of the gate matrices in application order.
pub fn circuit_to_unitary(c: &Circuit) -> Result<DMatrix<C64>> {
    if c.n > MAX_QUBITS {
        return Err(CircuitError::Sim(SimError::Capacity(c.n)));
    }
    let dim = 1usize << c.n;
    let mut cols: Vec<Vec<C64>> = (0..dim)
        .map(|k| {
            let mut v = vec![C64::new(0.0, 0.0); dim];
            v[k] = C64::new(1.0, 0.0);
            v
        })
        .collect();
    for g in &c.gates {
        for col in cols.iter_mut() {
            g.apply_vec(col, c.n)?;
        }
    }
    let mut m = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
    for (k, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m[(i, k)] = x;
        }
    }
    Ok(m)
}

/// Applies a single gate to a pure or mixed state.
pub fn apply_gate(state: &QuantumState, g: &Gate) -> Result<QuantumState> {
    match state {
        QuantumState::Vector(v) => {
            let mut amps = v.amps.clone();
            g.apply_vec(&mut amps, v.n())?;
            Ok(StateVector::from_amps(v.n(), amps)?.into())
        }
        QuantumState::Density(d) => {
            let u = g.dense(d.n())?;
            let mat = &u * &d.mat * u.adjoint();
            Ok(DensityMatrix::from_matrix(d.n(), mat)?.into())
        }
    }
}

/// Merges adjacent same-axis rotations on the same qubit and drops null gates.
pub fn peephole_merge(c: &Circuit) -> Circuit {
    let mut out: Vec<Gate> = Vec::with_capacity(c.gates.len());
    for &g in &c.gates {
        let merged = match (out.last(), g) {
            (Some(&Gate::Rx { q: qa, theta: a }), Gate::Rx { q, theta }) if qa == q => {
                Some(Gate::Rx { q, theta: a + theta })
            }
            (Some(&Gate::Ry { q: qa, theta: a }), Gate::Ry { q, theta }) if qa == q => {
                Some(Gate::Ry { q, theta: a + theta })
            }
            (Some(&Gate::Rz { q: qa, theta: a }), Gate::Rz { q, theta }) if qa == q => {
                Some(Gate::Rz { q, theta: a + theta })
            }
            _ => None,
        };
        match merged {
            Some(m) => {
                out.pop();
                out.push(m);
            }
            None => out.push(g),
        }
        while let Some(&last) = out.last() {
            let null = matches!(
                last,
                Gate::Rx { theta, .. } | Gate::Ry { theta, .. } | Gate::Rz { theta, .. }
                if theta.abs() < 1e-15
            );
            if null {
                out.pop();
            } else {
                break;
            }
        }
    }
    Circuit { n: c.n, gates: out }
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

use std::f64::consts::{FRAC_PI_2, PI};

/// Initializer of the psi+/psi- pair for the junction pair (0,1).
pub fn init_pm(sign: Sign) -> Circuit {
    init_pm_at(sign, 0)
}

/// Initializer of the psi+/psi- pair for the junction pair (arm, arm+1).
///
/// `arm` selects which coupling is at its maximum: 0 for the start of the
/// protocol, 1 after one schedule step.
pub fn init_pm_at(sign: Sign, arm: usize) -> Circuit {
    let a = arm % 3;
    let b = (arm + 1) % 3;
    let spectator = (arm + 2) % 3;
    let mut c = Circuit::new(3);
    c.push(Gate::Rx { q: a, theta: -FRAC_PI_2 });
    c.push(Gate::Cnot { c: a, t: b });
    c.push(Gate::Ry { q: a, theta: -sign.value() * FRAC_PI_2 });
    c.push(Gate::Ry { q: spectator, theta: PI });
    c
}

/// Frame-change gate set mapping the spin frame to the rotated frame.
pub fn frame_extension() -> Circuit {
    let mut c = Circuit::new(3);
    c.push(Gate::CPauli { axis: Axis::Y, c: 0, t: 1 });
    c.push(Gate::Ry { q: 0, theta: -FRAC_PI_2 });
    c.push(Gate::CPauli { axis: Axis::Y, c: 0, t: 1 });
    c.push(Gate::Rz { q: 1, theta: PI });
    c
}

/// Initializer for the scaled flavor: `init_pm` followed by the frame change.
pub fn rotated_init(sign: Sign) -> Circuit {
    let mut c = init_pm(sign);
    c.extend(&frame_extension());
    c
}

/// Initializer of the chain-model psi+/psi- pair on 3L+1 qubits (L = 3).
pub fn chain_init(sign: Sign, params: &ChainModelParams) -> Result<Circuit> {
    let l = params.arm_length;
    if l != 3 {
        return Err(CircuitError::ChainUnsupported(l));
    }
    let n = 3 * l + 1;
    let aux = 3 * l;
    let q = |a: usize, i: usize| a * l + i;
    let mut c = Circuit::new(n);
    c.push(Gate::Rx { q: aux, theta: PI });
    c.push(Gate::Ry { q: q(2, 0), theta: FRAC_PI_2 });
    c.push(Gate::Cnot { c: q(2, 0), t: q(2, 1) });
    c.push(Gate::Ry { q: q(2, 1), theta: PI });
    c.push(Gate::Ry { q: q(2, 2), theta: FRAC_PI_2 });
    c.push(Gate::Cnot { c: q(2, 2), t: q(2, 0) });
    for a in 0..2 {
        for i in 0..l {
            let s = if i % 2 == 0 { sign.value() } else { -sign.value() };
            c.push(Gate::Ry { q: q(a, i), theta: s * FRAC_PI_2 });
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Trotter slices
// ---------------------------------------------------------------------------

/// One second-order slice in the CNOT-based flavor.
///
/// `reversed` flips the interior term order; alternating it between slices
/// cancels part of the commutator error.
pub fn trotter_step_basis(
    p: &TriJunctionParams,
    j: [f64; 3],
    dt: f64,
    reversed: bool,
) -> Circuit {
    let mut c = Circuit::new(3);
    for (q, &a) in p.alpha.iter().enumerate() {
        c.push(Gate::Rz { q, theta: a * dt });
    }
    let mut interior: Vec<usize> = (0..3).filter(|&k| j[k] != 0.0).collect();
    if reversed {
        interior.reverse();
    }
    for k in interior {
        match k {
            0 => {
                c.push(Gate::Cnot { c: 0, t: 1 });
                c.push(Gate::Ry { q: 0, theta: 2.0 * j[0] * dt });
                c.push(Gate::Cnot { c: 0, t: 1 });
            }
            1 => {
                c.push(Gate::Cnot { c: 1, t: 2 });
                c.push(Gate::Ry { q: 1, theta: 2.0 * j[1] * dt });
                c.push(Gate::Cnot { c: 1, t: 2 });
            }
            _ => {
                c.push(Gate::CPauli { axis: Axis::Z, c: 0, t: 1 });
                c.push(Gate::Cnot { c: 0, t: 2 });
                c.push(Gate::Ry { q: 0, theta: 2.0 * j[2] * dt });
                c.push(Gate::Cnot { c: 0, t: 2 });
                c.push(Gate::CPauli { axis: Axis::Z, c: 0, t: 1 });
            }
        }
    }
    for (q, &a) in p.alpha.iter().enumerate() {
        c.push(Gate::Rz { q, theta: a * dt });
    }
    c
}

fn conjugation_in(axis: Axis, q: usize, first: bool) -> Option<Gate> {
    if first {
        match axis {
            Axis::X => Some(Gate::Ry { q, theta: -FRAC_PI_2 }),
            Axis::Y => Some(Gate::Rx { q, theta: FRAC_PI_2 }),
            Axis::Z => None,
        }
    } else {
        match axis {
            Axis::Z => Some(Gate::Ry { q, theta: FRAC_PI_2 }),
            Axis::Y => Some(Gate::Rz { q, theta: -FRAC_PI_2 }),
            Axis::X => None,
        }
    }
}

/// Gates of exp(-i phi sigma^a_qa sigma^b_qb / 2) around one ZX rotation.
pub fn two_pauli_exponential(
    phi: f64,
    axis_a: Axis,
    qa: usize,
    axis_b: Axis,
    qb: usize,
) -> Vec<Gate> {
    let mut pre = Vec::new();
    if let Some(g) = conjugation_in(axis_a, qa, true) {
        pre.push(g);
    }
    if let Some(g) = conjugation_in(axis_b, qb, false) {
        pre.push(g);
    }
    let mut gates = pre.clone();
    gates.push(Gate::ZxRot { c: qa, t: qb, theta: phi });
    gates.extend(pre.iter().rev().map(Gate::inverse));
    gates
}

/// One second-order slice in the pulse-scaled flavor (rotated frame).
pub fn trotter_step_scaled(p: &TriJunctionParams, j: [f64; 3], dt: f64) -> Circuit {
    let mut half: Vec<Gate> = vec![Gate::Rz { q: 2, theta: p.alpha[2] * dt }];
    if j[0] != 0.0 {
        half.push(Gate::Rz { q: 1, theta: j[0] * dt });
    }
    let mut terms: Vec<(Axis, usize, Axis, usize, f64)> = vec![
        (Axis::X, 0, Axis::Y, 1, 2.0 * p.alpha[0] * dt),
        (Axis::Y, 0, Axis::X, 1, 2.0 * p.alpha[1] * dt),
    ];
    if j[1] != 0.0 {
        terms.push((Axis::Y, 1, Axis::X, 2, -2.0 * j[1] * dt));
    }
    if j[2] != 0.0 {
        terms.push((Axis::X, 1, Axis::X, 2, 2.0 * j[2] * dt));
    }
    let mut seq: Vec<(Axis, usize, Axis, usize, f64)> = terms
        [..terms.len() - 1]
        .iter()
        .map(|&(a, qa, b, qb, phi)| (a, qa, b, qb, phi / 2.0))
        .collect();
    seq.push(*terms.last().unwrap());
    for k in (0..terms.len() - 1).rev() {
        let (a, qa, b, qb, phi) = terms[k];
        seq.push((a, qa, b, qb, phi / 2.0));
    }
    let mut c = Circuit::new(3);
    c.gates.extend_from_slice(&half);
    for (a, qa, b, qb, phi) in seq {
        c.gates.extend(two_pauli_exponential(phi, a, qa, b, qb));
    }
    c.gates.extend_from_slice(&half);
    c
}

/// Trotterized evolution through the first `num_steps` schedule steps.
///
/// Couplings are sampled at each slice midpoint; the basis flavor alternates
/// its interior ordering between slices.
pub fn build_evolution_circuit(
    p: &TriJunctionParams,
    flavor: Flavor,
    num_steps: usize,
) -> Result<Circuit> {
    p.validate()?;
    let nsl = p.trotter_steps_per_swap;
    let dt = p.tau / nsl as f64;
    let mut c = Circuit::new(3);
    for step in 0..num_steps {
        for i in 0..nsl {
            let t = step as f64 * p.tau + (i as f64 + 0.5) * dt;
            let j = schedule_eval(t, p.tau, p.j_max)?;
            let slice = match flavor {
                Flavor::Basis => trotter_step_basis(p, j, dt, i % 2 == 1),
                Flavor::Scaled => trotter_step_scaled(p, j, dt),
            };
            c.extend(&slice);
        }
    }
    Ok(c)
}

/// Full six-step braid evolution.
pub fn build_braid_circuit(p: &TriJunctionParams, flavor: Flavor) -> Result<Circuit> {
    build_evolution_circuit(p, flavor, 6)
}

/// Basis-unwinding gates after schedule steps 1-3.
pub fn unwind_gates(step: usize) -> Result<Circuit> {
    let mut c = Circuit::new(3);
    match step {
        1 => {
            c.push(Gate::Ry { q: 0, theta: FRAC_PI_2 });
            c.push(Gate::Rx { q: 1, theta: FRAC_PI_2 });
            c.push(Gate::Ry { q: 2, theta: FRAC_PI_2 });
        }
        2 => {
            c.push(Gate::Rx { q: 0, theta: FRAC_PI_2 });
            c.push(Gate::Ry { q: 1, theta: FRAC_PI_2 });
            c.push(Gate::Ry { q: 2, theta: FRAC_PI_2 });
        }
        3 => {
            c.push(Gate::Ry { q: 0, theta: FRAC_PI_2 });
        }
        other => return Err(CircuitError::UnwindUnsupported(other)),
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// One gate per line, preceded by a register-size header.
pub fn circuit_to_text(c: &Circuit) -> String {
    let mut out = format!("qubits {}\n", c.n);
    for g in &c.gates {
        out.push_str(&g.to_string());
        out.push('\n');
    }
    out
}

/// Parses the line-oriented format produced by `circuit_to_text`.
pub fn circuit_from_text(text: &str) -> Result<Circuit> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CircuitError::Parse {
        line: 1,
        text: "empty input".into(),
    })?;
    let n: usize = header
        .strip_prefix("qubits ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CircuitError::Parse {
            line: 1,
            text: header.into(),
        })?;
    let mut c = Circuit::new(n);
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = || CircuitError::Parse {
            line: idx + 1,
            text: line.into(),
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let q = |k: usize| -> Result<usize> { parts.get(k).and_then(|s| s.parse().ok()).ok_or_else(err) };
        let a = |k: usize| -> Result<f64> { parts.get(k).and_then(|s| s.parse().ok()).ok_or_else(err) };
        let gate = match *parts.first().ok_or_else(err)? {
            "rx" => Gate::Rx { q: q(1)?, theta: a(2)? },
            "ry" => Gate::Ry { q: q(1)?, theta: a(2)? },
            "rz" => Gate::Rz { q: q(1)?, theta: a(2)? },
            "cnot" => Gate::Cnot { c: q(1)?, t: q(2)? },
            "cx" => Gate::CPauli { axis: Axis::X, c: q(1)?, t: q(2)? },
            "cy" => Gate::CPauli { axis: Axis::Y, c: q(1)?, t: q(2)? },
            "cz" => Gate::CPauli { axis: Axis::Z, c: q(1)?, t: q(2)? },
            "zx" => Gate::ZxRot { c: q(1)?, t: q(2)?, theta: a(3)? },
            _ => return Err(err()),
        };
        c.push(gate);
    }
    Ok(c)
}
