//! Experiment drivers: seeded, config-driven runs of the braiding protocols
//! with CSV and JSON artifacts, exact-evolution oracles for cross-checking
//! the circuit results, and optional SVG plots.

use crate::circuits::{
    build_evolution_circuit, init_pm, init_pm_at, rotated_init, unwind_gates, Circuit,
    CircuitError, Flavor, Sign,
};
use crate::models::{
    build_chain_fermion_hamiltonian, build_chain_hamiltonian, build_qubit_hamiltonian,
    schedule_eval, schedule_eval_params, sorted_spectrum, ChainModelParams, ModelError,
    TriJunctionParams,
};
use crate::noise::{
    apply_confusion, build_confusion, mitigate_readout, noisy_apply, NoiseError, NoiseModel,
};
use crate::pulses::{
    compare_schedules, compile_circuit_schedule, CRCalibration, PulseError, PulseSchedule,
};
use crate::simcore::{
    derive_seed, expmv, sample_probs, EigenEvolver, PauliSum, SimError, StateVector, C64,
};
use crate::tomo::{process_fidelity, qpt, yx_circuit, TomoError, YxFlavor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<SimError> for ExpError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Capacity(n) => ExpError::Capacity(format!("register of {n} qubits")),
            other => ExpError::Sim(other),
        }
    }
}

impl From<ModelError> for ExpError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Sim(SimError::Capacity(n)) => {
                ExpError::Capacity(format!("register of {n} qubits"))
            }
            other => ExpError::Model(other),
        }
    }
}

impl ExpError {
    /// Process exit code: 2 for config problems, 3 for capacity, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Capacity(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExpError>;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Move,
    Braid,
    Track,
    Protect,
    #[serde(rename = "errorsweep")]
    ErrorSweep,
    Qpt,
    PulseCompile,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ExperimentKind::Move => "move",
            ExperimentKind::Braid => "braid",
            ExperimentKind::Track => "track",
            ExperimentKind::Protect => "protect",
            ExperimentKind::ErrorSweep => "errorsweep",
            ExperimentKind::Qpt => "qpt",
            ExperimentKind::PulseCompile => "pulse_compile",
        };
        f.write_str(name)
    }
}

fn default_flavor() -> Flavor {
    Flavor::Basis
}

/// One experiment run, fully determined by this document plus the seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub params: TriJunctionParams,
    #[serde(default = "default_flavor")]
    pub flavor: Flavor,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Shots per trial; zero requests exact probabilities. Absent uses the
    /// experiment's default budget.
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub trials: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    /// Sweep-axis values: delays (ns) for braid, two-qubit error rates for
    /// errorsweep, protocol times for protect, angles for qpt.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    /// Schedule steps for track.
    #[serde(default)]
    pub steps: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            params: TriJunctionParams::default(),
            flavor: default_flavor(),
            noise: NoiseModel::default(),
            shots: None,
            trials: None,
            seed: 0,
            sweep: None,
            steps: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ExpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params
            .validate()
            .map_err(|e| ExpError::Config(e.to_string()))?;
        self.noise
            .validate()
            .map_err(|e| ExpError::Config(e.to_string()))?;
        if self.trials == Some(0) {
            return Err(ExpError::Config("trials = 0".into()));
        }
        let sweep_allowed = matches!(
            self.experiment,
            ExperimentKind::Braid
                | ExperimentKind::ErrorSweep
                | ExperimentKind::Protect
                | ExperimentKind::Qpt
        );
        if let Some(sweep) = &self.sweep {
            if !sweep_allowed {
                return Err(ExpError::Config(format!(
                    "experiment {} takes no sweep values",
                    self.experiment
                )));
            }
            if sweep.is_empty() {
                return Err(ExpError::Config("empty sweep".into()));
            }
            for &v in sweep {
                let ok = match self.experiment {
                    ExperimentKind::Braid => v.is_finite() && v >= 0.0,
                    ExperimentKind::ErrorSweep => (0.0..=0.5).contains(&v),
                    ExperimentKind::Protect => v.is_finite() && v > 0.0,
                    ExperimentKind::Qpt => v > 0.0 && v <= PI,
                    _ => unreachable!(),
                };
                if !ok {
                    return Err(ExpError::Config(format!(
                        "sweep value {v} invalid for experiment {}",
                        self.experiment
                    )));
                }
            }
        }
        if let Some(steps) = &self.steps {
            if self.experiment != ExperimentKind::Track {
                return Err(ExpError::Config(format!(
                    "experiment {} takes no step list",
                    self.experiment
                )));
            }
            if steps.is_empty() || steps.iter().any(|&s| !(1..=3).contains(&s)) {
                return Err(ExpError::Config(format!("steps {steps:?} outside 1..=3")));
            }
        }
        Ok(())
    }

    /// Shot budget per trial; zero means exact probabilities.
    pub fn effective_shots(&self) -> u64 {
        self.shots.unwrap_or(match self.experiment {
            ExperimentKind::Move => 1024,
            ExperimentKind::Braid => 8192,
            ExperimentKind::Qpt => 2048,
            _ => 0,
        })
    }

    pub fn effective_trials(&self) -> u32 {
        self.trials.unwrap_or(match self.experiment {
            ExperimentKind::Braid | ExperimentKind::Qpt => 4,
            _ => 1,
        })
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        if let Some(sweep) = &self.sweep {
            return sweep.clone();
        }
        match self.experiment {
            ExperimentKind::Braid => vec![0.0, 50.0, 100.0, 150.0, 200.0, 300.0],
            ExperimentKind::ErrorSweep => (0..13).map(|k| k as f64 * 0.001).collect(),
            ExperimentKind::Protect => vec![3.3, 6.6, 13.2],
            ExperimentKind::Qpt => (1..=15).map(|k| k as f64 * PI / 15.0).collect(),
            _ => Vec::new(),
        }
    }

    pub fn track_steps(&self) -> Vec<usize> {
        self.steps.clone().unwrap_or_else(|| vec![1, 2, 3])
    }

    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Circuit assembly and probability evaluation
// ---------------------------------------------------------------------------

fn flavor_name(f: Flavor) -> &'static str {
    match f {
        Flavor::Basis => "basis",
        Flavor::Scaled => "scaled",
    }
}

fn sign_name(s: Sign) -> &'static str {
    match s {
        Sign::Plus => "+1",
        Sign::Minus => "-1",
    }
}

fn flavor_init(flavor: Flavor, sign: Sign) -> Circuit {
    match flavor {
        Flavor::Basis => init_pm(sign),
        Flavor::Scaled => rotated_init(sign),
    }
}

/// Initialize, run `num_steps` schedule steps, and invert the opposite-sign
/// initializer, so a perfect exchange ends in the all-zeros bin.
pub fn braid_run_circuit(
    p: &TriJunctionParams,
    flavor: Flavor,
    sign: Sign,
    num_steps: usize,
) -> Result<Circuit> {
    let mut c = flavor_init(flavor, sign);
    c.extend(&build_evolution_circuit(p, flavor, num_steps)?);
    c.extend(&flavor_init(flavor, sign.flipped()).inverse());
    Ok(c)
}

/// Single-step arm move: start on arm 0, invert the arm-1 initializer.
pub fn move_run_circuit(p: &TriJunctionParams, flavor: Flavor) -> Result<Circuit> {
    let mut c = flavor_init(flavor, Sign::Plus);
    c.extend(&build_evolution_circuit(p, flavor, 1)?);
    let mut target = init_pm_at(Sign::Plus, 1);
    if flavor == Flavor::Scaled {
        target.extend(&crate::circuits::frame_extension());
    }
    c.extend(&target.inverse());
    Ok(c)
}

/// Run `step` schedule steps and rotate back into the measurement basis.
pub fn track_run_circuit(p: &TriJunctionParams, flavor: Flavor, sign: Sign, step: usize) -> Result<Circuit> {
    let mut c = flavor_init(flavor, sign);
    c.extend(&build_evolution_circuit(p, flavor, step)?);
    if flavor == Flavor::Scaled {
        c.extend(&crate::circuits::frame_extension().inverse());
    }
    c.extend(&unwind_gates(step)?);
    Ok(c)
}

fn density_probabilities(c: &Circuit, model: &NoiseModel) -> Result<Vec<f64>> {
    let zero = StateVector::zero(c.n)?;
    Ok(noisy_apply(&zero.into(), c, model)?.probabilities())
}

/// Trial-averaged sampled distribution with readout forwarding and mitigation.
fn sampled_probabilities(
    c: &Circuit,
    model: &NoiseModel,
    shots: u64,
    trials: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    let ideal = density_probabilities(c, model)?;
    let confusion = build_confusion(model, c.n)?;
    let forwarded = apply_confusion(&ideal, &confusion)?;
    let mut acc = vec![0.0f64; ideal.len()];
    for t in 0..trials {
        let counts = sample_probs(&forwarded, shots, derive_seed(seed, t as u64))?;
        let mut freqs = vec![0.0f64; ideal.len()];
        for (idx, cnt) in counts {
            freqs[idx] = cnt as f64 / shots as f64;
        }
        let mitigated = mitigate_readout(&freqs, &confusion)?;
        for (a, m) in acc.iter_mut().zip(&mitigated) {
            *a += m;
        }
    }
    for a in &mut acc {
        *a /= trials as f64;
    }
    Ok(acc)
}

fn probabilities_for(
    c: &Circuit,
    model: &NoiseModel,
    shots: u64,
    trials: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if shots == 0 {
        density_probabilities(c, model)
    } else {
        sampled_probabilities(c, model, shots, trials, seed)
    }
}

// ---------------------------------------------------------------------------
// Exact-evolution oracles
// ---------------------------------------------------------------------------

fn junction_evolver(p: &TriJunctionParams, t: f64) -> Result<EigenEvolver> {
    let j = schedule_eval_params(p, t)?;
    let h = build_qubit_hamiltonian(p, j)?;
    Ok(EigenEvolver::new(h.to_dense(3)?))
}

/// Piecewise-exact evolution through whole schedule steps, with the
/// Hamiltonian frozen at each slice midpoint.
pub fn exact_schedule_state(
    p: &TriJunctionParams,
    start: &StateVector,
    num_steps: usize,
    slices_per_step: usize,
) -> Result<StateVector> {
    if slices_per_step == 0 {
        return Err(ExpError::Config("slices_per_step = 0".into()));
    }
    let dt = p.tau / slices_per_step as f64;
    let mut amps = start.amps.clone();
    for step in 0..num_steps {
        for i in 0..slices_per_step {
            let t = step as f64 * p.tau + (i as f64 + 0.5) * dt;
            junction_evolver(p, t)?.step(dt, &mut amps);
        }
    }
    Ok(StateVector::from_amps(start.n(), amps)?)
}

/// Exactly evolved full braid from the psi+ start, reported as the
/// probabilities of the psi- and psi+ bins after inverting the psi-
/// initializer.
pub fn exact_braid_bins(p: &TriJunctionParams, slices_per_step: usize) -> Result<(f64, f64)> {
    let start = init_pm(Sign::Plus).run_from_zero()?;
    let evolved = exact_schedule_state(p, &start, 6, slices_per_step)?;
    let out = init_pm(Sign::Minus).inverse().apply_to(&evolved)?;
    let probs = out.probabilities();
    Ok((probs[0b000], probs[0b010]))
}

/// Exactly evolved single-step move, reported as the probabilities of the
/// moved psi+ and psi- bins after inverting the arm-1 initializer.
pub fn exact_move_bins(p: &TriJunctionParams, slices_per_step: usize) -> Result<(f64, f64)> {
    let start = init_pm(Sign::Plus).run_from_zero()?;
    let evolved = exact_schedule_state(p, &start, 1, slices_per_step)?;
    let out = init_pm_at(Sign::Plus, 1).inverse().apply_to(&evolved)?;
    let probs = out.probabilities();
    Ok((probs[0b001], probs[0b000]))
}

fn bias_of(success: f64, revert: f64) -> f64 {
    (success - revert) / (success + revert)
}

/// In-gap doublet of the single-arm junction, labeled by three-qubit Z
/// parity: the even state first, the odd state second.
pub fn doublet_states(alpha: f64) -> Result<(Vec<C64>, Vec<C64>)> {
    let p = TriJunctionParams::uniform(alpha);
    let h = build_qubit_hamiltonian(&p, [1.0, 0.0, 0.0])?;
    let ev = EigenEvolver::new(h.to_dense(3)?);
    let order = ev.ascending_order();
    let mut even = None;
    let mut odd = None;
    for &k in &order[6..8] {
        let v = ev.eigenvector(k);
        let parity: f64 = v
            .iter()
            .enumerate()
            .map(|(idx, a)| {
                let sign = if (idx as u32).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                sign * a.norm_sqr()
            })
            .sum();
        if parity > 0.5 {
            even = Some(v);
        } else if parity < -0.5 {
            odd = Some(v);
        }
    }
    match (even, odd) {
        (Some(e), Some(g)) => Ok((e, g)),
        _ => Err(ExpError::Config(format!(
            "doublet parity labels unresolved at alpha = {alpha}"
        ))),
    }
}

/// Exchange fidelity of the exactly evolved braid on the doublet, maximized
/// over the relative phase of the two basis states.
pub fn exchange_fidelity(alpha: f64, tau: f64, slices_per_step: usize) -> Result<f64> {
    let p = TriJunctionParams {
        alpha: [alpha; 3],
        tau,
        ..TriJunctionParams::default()
    };
    let (e, g) = doublet_states(alpha)?;
    let mut ue = e.clone();
    let mut ug = g.clone();
    let dt = tau / slices_per_step as f64;
    for step in 0..6 {
        for i in 0..slices_per_step {
            let t = step as f64 * tau + (i as f64 + 0.5) * dt;
            let evolver = junction_evolver(&p, t)?;
            evolver.step(dt, &mut ue);
            evolver.step(dt, &mut ug);
        }
    }
    let dot = |a: &[C64], b: &[C64]| -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    };
    let m_ee = dot(&e, &ue);
    let m_eg = dot(&e, &ug);
    let m_ge = dot(&g, &ue);
    let m_gg = dot(&g, &ug);
    let mut best = 0.0f64;
    for k in 0..721 {
        let phase = C64::from_polar(1.0, 2.0 * PI * k as f64 / 720.0);
        let z = 0.5 * (m_ee + phase * m_eg - phase.conj() * m_ge - m_gg);
        best = best.max(z.norm_sqr());
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Protection scan
// ---------------------------------------------------------------------------

pub const PROTECT_SLICES: usize = 400;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProtectPoint {
    pub d_alpha: f64,
    pub p_minus: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProtectCurve {
    pub tau: f64,
    pub alpha_star: f64,
    pub peak: f64,
    /// Width of the region sustaining at least 90% of the peak.
    pub width: f64,
    pub points: Vec<ProtectPoint>,
}

/// Exactly evolved braid success probability with per-arm splittings.
pub fn perturbed_braid_p_minus(
    alphas: [f64; 3],
    tau: f64,
    slices_per_step: usize,
) -> Result<f64> {
    let p = TriJunctionParams {
        alpha: alphas,
        tau,
        ..TriJunctionParams::default()
    };
    let start = init_pm(Sign::Plus).run_from_zero()?;
    let evolved = exact_schedule_state(&p, &start, 6, slices_per_step)?;
    let out = init_pm(Sign::Minus).inverse().apply_to(&evolved)?;
    Ok(out.probabilities()[0b000])
}

pub fn default_alpha_grid() -> Vec<f64> {
    (0..34).map(|k| 0.05 + 0.025 * k as f64).collect()
}

pub fn default_dalpha_grid() -> Vec<f64> {
    (0..49).map(|i| -0.6 + 1.2 * i as f64 / 48.0).collect()
}

/// Optimizes the uniform splitting for one protocol time, then sweeps an
/// arm-0 perturbation around the optimum.
pub fn protect_curve(
    tau: f64,
    alpha_grid: &[f64],
    d_grid: &[f64],
    slices_per_step: usize,
) -> Result<ProtectCurve> {
    if alpha_grid.is_empty() || d_grid.len() < 2 {
        return Err(ExpError::Config("protection grids too small".into()));
    }
    let scanned: Vec<(f64, f64)> = alpha_grid
        .par_iter()
        .map(|&a| Ok((a, perturbed_braid_p_minus([a, a, a], tau, slices_per_step)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut alpha_star = scanned[0].0;
    let mut peak = -1.0;
    for &(a, pm) in &scanned {
        if pm > peak {
            alpha_star = a;
            peak = pm;
        }
    }
    let points: Vec<ProtectPoint> = d_grid
        .par_iter()
        .map(|&d| {
            let pm = perturbed_braid_p_minus([alpha_star + d, alpha_star, alpha_star], tau, slices_per_step)?;
            Ok(ProtectPoint { d_alpha: d, p_minus: pm })
        })
        .collect::<Result<Vec<_>>>()?;
    let spacing = d_grid[1] - d_grid[0];
    let above = points.iter().filter(|pt| pt.p_minus >= 0.9 * peak).count();
    Ok(ProtectCurve {
        tau,
        alpha_star,
        peak,
        width: spacing * above as f64,
        points,
    })
}

// ---------------------------------------------------------------------------
// Chain-model oracles
// ---------------------------------------------------------------------------

/// Ground-state energy of the spin chain, computed from the halved fermionic
/// register whose spectrum the spin model doubles.
pub fn chain_ground_energy(params: &ChainModelParams) -> Result<f64> {
    let hf = build_chain_fermion_hamiltonian(params)?;
    let spectrum = sorted_spectrum(&hf);
    Ok(spectrum[0])
}

pub fn chain_energy_expectation(params: &ChainModelParams, psi: &StateVector) -> Result<f64> {
    let h = build_chain_hamiltonian(params)?;
    let compiled = h.compile(psi.n())?;
    let hpsi = compiled.apply(&psi.amps);
    let e: C64 = psi.amps.iter().zip(&hpsi).map(|(a, b)| a.conj() * b).sum();
    Ok(e.re)
}

/// Ramped adiabatic exchange on the ten-qubit chain register.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainBraidProtocol {
    pub mu_star: f64,
    pub tau_ramp: f64,
    pub tau: f64,
    pub dt_ramp: f64,
    pub dt_braid: f64,
    pub krylov_dim: usize,
}

impl Default for ChainBraidProtocol {
    fn default() -> Self {
        ChainBraidProtocol {
            mu_star: 0.55,
            tau_ramp: 800.0,
            tau: 450.0,
            dt_ramp: 2.0,
            dt_braid: 0.5,
            krylov_dim: 24,
        }
    }
}

fn chain_params_at(mu: f64, j: [f64; 3]) -> ChainModelParams {
    ChainModelParams {
        arm_length: 3,
        mu,
        delta: 1.0,
        j,
    }
}

fn chain_segment(
    mut amps: Vec<C64>,
    t_total: f64,
    dt_target: f64,
    krylov_dim: usize,
    h_at: impl Fn(f64) -> Result<PauliSum>,
) -> Result<Vec<C64>> {
    let slices = ((t_total / dt_target).ceil() as usize).max(8);
    let dt = t_total / slices as f64;
    for i in 0..slices {
        let tm = (i as f64 + 0.5) * dt;
        let compiled = h_at(tm)?.compile(10)?;
        amps = expmv(&compiled, dt, &amps, krylov_dim);
    }
    Ok(amps)
}

/// Runs splitting ramp-up, the six-step exchange, and ramp-down; returns the
/// overlaps with the psi- and psi+ initializer states.
pub fn chain_braid_fidelities(proto: &ChainBraidProtocol) -> Result<(f64, f64)> {
    let base = chain_params_at(0.0, [1.0, 0.0, 0.0]);
    let psi_plus = crate::circuits::chain_init(Sign::Plus, &base)?.run_from_zero()?;
    let psi_minus = crate::circuits::chain_init(Sign::Minus, &base)?.run_from_zero()?;
    let m = proto.krylov_dim;
    let mut amps = psi_plus.amps.clone();
    amps = chain_segment(amps, proto.tau_ramp, proto.dt_ramp, m, |tm| {
        let mu = proto.mu_star * tm / proto.tau_ramp;
        build_chain_hamiltonian(&chain_params_at(mu, [1.0, 0.0, 0.0])).map_err(ExpError::from)
    })?;
    let braid_end = 6.0 * proto.tau;
    amps = chain_segment(amps, braid_end, proto.dt_braid, m, |tm| {
        let t = tm.min(braid_end - 1e-9);
        let j = schedule_eval(t, proto.tau, 1.0)?;
        build_chain_hamiltonian(&chain_params_at(proto.mu_star, j)).map_err(ExpError::from)
    })?;
    amps = chain_segment(amps, proto.tau_ramp, proto.dt_ramp, m, |tm| {
        let mu = proto.mu_star * (1.0 - tm / proto.tau_ramp);
        build_chain_hamiltonian(&chain_params_at(mu, [1.0, 0.0, 0.0])).map_err(ExpError::from)
    })?;
    let overlap = |target: &StateVector| -> f64 {
        let z: C64 = target
            .amps
            .iter()
            .zip(&amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        z.norm_sqr()
    };
    Ok((overlap(&psi_minus), overlap(&psi_plus)))
}

// ---------------------------------------------------------------------------
// Experiment outcomes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MoveOutcome {
    pub flavor: Flavor,
    pub noisy: bool,
    pub shots: u64,
    pub trials: u32,
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_plus_norm: f64,
    pub p_minus_norm: f64,
    pub bias: f64,
    pub leakage: f64,
    pub two_qubit_gates: usize,
}

pub fn move_outcome(
    p: &TriJunctionParams,
    flavor: Flavor,
    model: &NoiseModel,
    shots: u64,
    trials: u32,
    seed: u64,
) -> Result<MoveOutcome> {
    let circuit = move_run_circuit(p, flavor)?;
    let probs = probabilities_for(&circuit, model, shots, trials, seed)?;
    let p_plus = probs[0b001];
    let p_minus = probs[0b000];
    let total = p_plus + p_minus;
    Ok(MoveOutcome {
        flavor,
        noisy: !(model.eps_1q == 0.0
            && model.eps_cnot == 0.0
            && model.delay_prob() == 0.0
            && model.readout_p10 == 0.0
            && model.readout_p01 == 0.0),
        shots,
        trials,
        p_plus,
        p_minus,
        p_plus_norm: p_plus / total,
        p_minus_norm: p_minus / total,
        bias: bias_of(p_plus, p_minus),
        leakage: 1.0 - total,
        two_qubit_gates: build_evolution_circuit(p, flavor, 1)?.two_qubit_count(),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BraidOutcome {
    pub delay_ns: f64,
    pub sign: Sign,
    /// Probability of the exchanged state's bin (all zeros).
    pub p_exchanged: f64,
    /// Probability of the unexchanged state's bin.
    pub p_returned: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub bias: f64,
    pub comp_mass: f64,
}

pub fn braid_outcome(
    p: &TriJunctionParams,
    flavor: Flavor,
    model: &NoiseModel,
    sign: Sign,
    shots: u64,
    trials: u32,
    seed: u64,
) -> Result<BraidOutcome> {
    let circuit = braid_run_circuit(p, flavor, sign, 6)?;
    let probs = probabilities_for(&circuit, model, shots, trials, seed)?;
    let p_exchanged = probs[0b000];
    let p_returned = probs[0b010];
    let (p_plus, p_minus) = match sign {
        Sign::Plus => (p_returned, p_exchanged),
        Sign::Minus => (p_exchanged, p_returned),
    };
    Ok(BraidOutcome {
        delay_ns: model.delay_ns,
        sign,
        p_exchanged,
        p_returned,
        p_plus,
        p_minus,
        bias: bias_of(p_exchanged, p_returned),
        comp_mass: p_exchanged + p_returned,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackOutcome {
    pub step: usize,
    pub sign: Sign,
    pub distribution: Vec<f64>,
    pub dominant_bin: usize,
}

pub fn track_outcome(
    p: &TriJunctionParams,
    flavor: Flavor,
    sign: Sign,
    step: usize,
    model: &NoiseModel,
) -> Result<TrackOutcome> {
    let circuit = track_run_circuit(p, flavor, sign, step)?;
    let distribution = density_probabilities(&circuit, model)?;
    let dominant_bin = distribution
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(TrackOutcome {
        step,
        sign,
        distribution,
        dominant_bin,
    })
}

// ---------------------------------------------------------------------------
// Tables, records, artifacts
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ExperimentTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl ExperimentTable {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| ExpError::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ExpError::Config(e.to_string()))
    }

    fn rows_as_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| ((*c).to_string(), Value::String(v.clone())))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }
}

fn fnum(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug)]
pub struct PlotSpec {
    pub file_name: &'static str,
    pub title: String,
    pub x_label: &'static str,
    pub y_label: &'static str,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

pub struct ExperimentOutput {
    pub table: ExperimentTable,
    pub extra: Value,
    pub plot: Option<PlotSpec>,
    /// Additional artifact files: (file name, contents).
    pub attachments: Vec<(&'static str, String)>,
}

/// Summary of one completed run, stored alongside the CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub wall_time_ms: u64,
    pub columns: Vec<String>,
    pub row_count: usize,
    pub outputs: Value,
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

fn run_move_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let shots = cfg.effective_shots();
    let trials = cfg.effective_trials();
    let cases: Vec<(Flavor, bool)> = vec![
        (Flavor::Basis, false),
        (Flavor::Scaled, false),
        (Flavor::Basis, true),
        (Flavor::Scaled, true),
    ];
    let outcomes: Vec<MoveOutcome> = cases
        .par_iter()
        .enumerate()
        .map(|(idx, &(flavor, noisy))| {
            let model = if noisy { cfg.noise.clone() } else { NoiseModel::noiseless() };
            let used_shots = if noisy { shots } else { 0 };
            move_outcome(&cfg.params, flavor, &model, used_shots, trials, derive_seed(cfg.seed, idx as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = vec![
        "flavor", "noisy", "shots", "trials", "p_plus", "p_minus", "p_plus_norm",
        "p_minus_norm", "bias", "leakage", "two_qubit_gates",
    ];
    let rows = outcomes
        .iter()
        .map(|o| {
            vec![
                flavor_name(o.flavor).to_string(),
                (o.noisy as u8).to_string(),
                o.shots.to_string(),
                o.trials.to_string(),
                fnum(o.p_plus),
                fnum(o.p_minus),
                fnum(o.p_plus_norm),
                fnum(o.p_minus_norm),
                fnum(o.bias),
                fnum(o.leakage),
                o.two_qubit_gates.to_string(),
            ]
        })
        .collect();
    let (exact_plus, exact_minus) = exact_move_bins(&cfg.params, PROTECT_SLICES)?;
    let extra = json!({
        "exact_reference": {
            "bias": bias_of(exact_plus, exact_minus),
            "leakage": 1.0 - exact_plus - exact_minus,
        }
    });
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: None,
        attachments: Vec::new(),
    })
}

fn run_braid_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let delays = cfg.sweep_values();
    let shots = cfg.effective_shots();
    let trials = cfg.effective_trials();
    let points: Vec<(f64, Sign)> = delays
        .iter()
        .flat_map(|&d| [(d, Sign::Plus), (d, Sign::Minus)])
        .collect();
    let outcomes: Vec<BraidOutcome> = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(delay, sign))| {
            let model = NoiseModel { delay_ns: delay, ..cfg.noise.clone() };
            braid_outcome(&cfg.params, cfg.flavor, &model, sign, shots, trials, derive_seed(cfg.seed, idx as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = vec![
        "delay_ns", "start_sign", "p_exchanged", "p_returned", "p_plus", "p_minus",
        "bias", "comp_mass", "shots", "trials",
    ];
    let rows = outcomes
        .iter()
        .map(|o| {
            vec![
                fnum(o.delay_ns),
                sign_name(o.sign).to_string(),
                fnum(o.p_exchanged),
                fnum(o.p_returned),
                fnum(o.p_plus),
                fnum(o.p_minus),
                fnum(o.bias),
                fnum(o.comp_mass),
                shots.to_string(),
                trials.to_string(),
            ]
        })
        .collect();
    let (em, ep) = exact_braid_bins(&cfg.params, PROTECT_SLICES)?;
    let extra = json!({
        "exact_reference": { "bias": bias_of(em, ep), "p_minus": em, "p_plus": ep }
    });
    let series = [Sign::Plus, Sign::Minus]
        .iter()
        .map(|&s| {
            (
                format!("start {}", sign_name(s)),
                outcomes
                    .iter()
                    .filter(|o| o.sign == s)
                    .map(|o| (o.delay_ns, o.bias))
                    .collect(),
            )
        })
        .collect();
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: Some(PlotSpec {
            file_name: "bias_vs_delay.svg",
            title: format!("Exchange bias vs delay ({})", flavor_name(cfg.flavor)),
            x_label: "delay (ns)",
            y_label: "bias",
            series,
        }),
        attachments: Vec::new(),
    })
}

fn run_track_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let steps = cfg.track_steps();
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &step in &steps {
        for sign in [Sign::Plus, Sign::Minus] {
            let o = track_outcome(&cfg.params, cfg.flavor, sign, step, &cfg.noise)?;
            let mut row = vec![step.to_string(), sign_name(sign).to_string()];
            row.extend(o.distribution.iter().map(|&v| fnum(v)));
            row.push(format!("{:03b}", o.dominant_bin));
            rows.push(row);
            outcomes.push(o);
        }
    }
    let columns = vec![
        "step", "start_sign", "p000", "p001", "p010", "p011", "p100", "p101", "p110",
        "p111", "dominant_bin",
    ];
    let extra = json!({
        "dominant_bins": outcomes
            .iter()
            .map(|o| json!({
                "step": o.step,
                "start_sign": sign_name(o.sign),
                "bin": format!("{:03b}", o.dominant_bin),
            }))
            .collect::<Vec<_>>()
    });
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: None,
        attachments: Vec::new(),
    })
}

fn run_protect_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let taus = cfg.sweep_values();
    let alpha_grid = default_alpha_grid();
    let d_grid = default_dalpha_grid();
    let curves: Vec<ProtectCurve> = taus
        .iter()
        .map(|&tau| protect_curve(tau, &alpha_grid, &d_grid, PROTECT_SLICES))
        .collect::<Result<Vec<_>>>()?;
    let columns = vec!["tau", "alpha_star", "peak", "width", "d_alpha", "p_minus"];
    let mut rows = Vec::new();
    for c in &curves {
        for pt in &c.points {
            rows.push(vec![
                fnum(c.tau),
                fnum(c.alpha_star),
                fnum(c.peak),
                fnum(c.width),
                fnum(pt.d_alpha),
                fnum(pt.p_minus),
            ]);
        }
    }
    let extra = json!({
        "summary": curves
            .iter()
            .map(|c| json!({
                "tau": c.tau, "alpha_star": c.alpha_star, "peak": c.peak, "width": c.width,
            }))
            .collect::<Vec<_>>()
    });
    let series = curves
        .iter()
        .map(|c| {
            (
                format!("tau {}", c.tau),
                c.points.iter().map(|pt| (pt.d_alpha, pt.p_minus)).collect(),
            )
        })
        .collect();
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: Some(PlotSpec {
            file_name: "protection.svg",
            title: "Exchange success vs arm-0 perturbation".to_string(),
            x_label: "d_alpha",
            y_label: "p_minus",
            series,
        }),
        attachments: Vec::new(),
    })
}

fn run_errorsweep_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let eps_values = cfg.sweep_values();
    let points: Vec<(f64, Flavor)> = eps_values
        .iter()
        .flat_map(|&e| [(e, Flavor::Basis), (e, Flavor::Scaled)])
        .collect();
    let outcomes: Vec<(f64, Flavor, BraidOutcome)> = points
        .par_iter()
        .map(|&(eps, flavor)| {
            let model = NoiseModel {
                eps_cnot: eps,
                delay_rate_per_ns: 0.0,
                delay_ns: 0.0,
                readout_p10: 0.0,
                readout_p01: 0.0,
                ..cfg.noise.clone()
            };
            let o = braid_outcome(&cfg.params, flavor, &model, Sign::Plus, 0, 1, 0)?;
            Ok((eps, flavor, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = vec!["eps_cnot", "flavor", "bias", "comp_mass", "shaded"];
    let rows = outcomes
        .iter()
        .map(|(eps, flavor, o)| {
            let shaded = (6.9e-3..=9.4e-3).contains(eps);
            vec![
                fnum(*eps),
                flavor_name(*flavor).to_string(),
                fnum(o.bias),
                fnum(o.comp_mass),
                (shaded as u8).to_string(),
            ]
        })
        .collect();
    let extra = json!({ "shade_range": [6.9e-3, 9.4e-3] });
    let series = [Flavor::Basis, Flavor::Scaled]
        .iter()
        .map(|&f| {
            (
                flavor_name(f).to_string(),
                outcomes
                    .iter()
                    .filter(|(_, fl, _)| *fl == f)
                    .map(|(e, _, o)| (*e, o.bias))
                    .collect(),
            )
        })
        .collect();
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: Some(PlotSpec {
            file_name: "bias_vs_eps.svg",
            title: "Conditioned exchange bias vs two-qubit error rate".to_string(),
            x_label: "eps_cnot",
            y_label: "bias",
            series,
        }),
        attachments: Vec::new(),
    })
}

fn run_qpt_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let thetas = cfg.sweep_values();
    let shots = cfg.effective_shots();
    let trials = cfg.effective_trials();
    let fids: Vec<(f64, f64, f64)> = thetas
        .par_iter()
        .enumerate()
        .map(|(idx, &theta)| {
            let ideal = yx_circuit(YxFlavor::DoubleCnot, theta);
            let mut f = [0.0f64; 2];
            for (fi, flavor) in [YxFlavor::DoubleCnot, YxFlavor::Scaled].into_iter().enumerate() {
                let circuit = yx_circuit(flavor, theta);
                let reps = if shots == 0 { 1 } else { trials };
                let mut acc = 0.0;
                for t in 0..reps {
                    let seed = derive_seed(cfg.seed, (idx * 8 + fi * 4 + t as usize) as u64);
                    let r = qpt(&circuit, &cfg.noise, shots, seed)?;
                    acc += process_fidelity(&r, &ideal)?;
                }
                f[fi] = acc / reps as f64;
            }
            Ok((theta, f[0], f[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = vec![
        "theta", "f_dcnot", "f_scaled", "e_dcnot", "e_scaled", "rel_reduction", "shots",
        "trials",
    ];
    let rows = fids
        .iter()
        .map(|&(theta, fd, fs)| {
            let e_d = 1.0 - fd;
            let e_s = 1.0 - fs;
            let red = if e_d.abs() > 1e-12 {
                fnum(1.0 - e_s / e_d)
            } else {
                String::new()
            };
            vec![
                fnum(theta),
                fnum(fd),
                fnum(fs),
                fnum(e_d),
                fnum(e_s),
                red,
                shots.to_string(),
                trials.to_string(),
            ]
        })
        .collect();
    let series = vec![
        (
            "double-CNOT".to_string(),
            fids.iter().map(|&(t, fd, _)| (t, fd)).collect(),
        ),
        (
            "pulse-scaled".to_string(),
            fids.iter().map(|&(t, _, fs)| (t, fs)).collect(),
        ),
    ];
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra: Value::Null,
        plot: Some(PlotSpec {
            file_name: "process_fidelity.svg",
            title: "Process fidelity vs rotation angle".to_string(),
            x_label: "theta",
            y_label: "fidelity",
            series,
        }),
        attachments: Vec::new(),
    })
}

fn run_pulse_compile_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let cal = CRCalibration::fixture();
    let basis_circuit = build_evolution_circuit(&cfg.params, Flavor::Basis, 1)?;
    let scaled_circuit = build_evolution_circuit(&cfg.params, Flavor::Scaled, 1)?;
    let sched_basis = compile_circuit_schedule(&basis_circuit, &cal)?;
    let sched_scaled = compile_circuit_schedule(&scaled_circuit, &cal)?;
    let cmp = compare_schedules(&sched_scaled, &sched_basis)?;
    let columns = vec!["flavor", "duration", "cr_area", "two_qubit_gates"];
    let describe = |flavor: Flavor, sched: &PulseSchedule, circuit: &Circuit| {
        vec![
            flavor_name(flavor).to_string(),
            fnum(sched.duration),
            fnum(sched.cr_area()),
            circuit.two_qubit_count().to_string(),
        ]
    };
    let rows = vec![
        describe(Flavor::Basis, &sched_basis, &basis_circuit),
        describe(Flavor::Scaled, &sched_scaled, &scaled_circuit),
    ];
    let extra = json!({
        "duration_ratio": cmp.duration_ratio,
        "cr_area_ratio": cmp.cr_area_ratio,
    });
    Ok(ExperimentOutput {
        table: ExperimentTable { columns, rows },
        extra,
        plot: None,
        attachments: vec![
            ("schedule_basis.txt", sched_basis.to_text()),
            ("schedule_scaled.txt", sched_scaled.to_text()),
        ],
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Move => run_move_experiment(cfg),
        ExperimentKind::Braid => run_braid_experiment(cfg),
        ExperimentKind::Track => run_track_experiment(cfg),
        ExperimentKind::Protect => run_protect_experiment(cfg),
        ExperimentKind::ErrorSweep => run_errorsweep_experiment(cfg),
        ExperimentKind::Qpt => run_qpt_experiment(cfg),
        ExperimentKind::PulseCompile => run_pulse_compile_experiment(cfg),
    }
}

/// Runs the experiment and writes `results.csv`, `run.json`, any attachment
/// files, and (on request) an SVG plot into `out_dir`.
pub fn execute(cfg: &ExperimentConfig, out_dir: &Path, plots: bool) -> Result<RunRecord> {
    let started = Instant::now();
    let output = run_experiment(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let csv_text = output.table.to_csv_string()?;
    std::fs::write(out_dir.join("results.csv"), &csv_text)?;
    for (name, contents) in &output.attachments {
        std::fs::write(out_dir.join(name), contents)?;
    }
    if plots {
        if let Some(spec) = &output.plot {
            std::fs::write(out_dir.join(spec.file_name), svg_line_chart(spec))?;
        }
    }
    let record = RunRecord {
        experiment: cfg.experiment.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.sha256(),
        seed: cfg.seed,
        wall_time_ms: started.elapsed().as_millis() as u64,
        columns: output.table.columns.iter().map(|c| c.to_string()).collect(),
        row_count: output.table.rows.len(),
        outputs: json!({
            "rows": output.table.rows_as_json(),
            "extra": output.extra,
        }),
    };
    std::fs::write(
        out_dir.join("run.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// SVG plotting
// ---------------------------------------------------------------------------

const PLOT_COLORS: [&str; 6] = [
    "#1f6feb", "#d1242f", "#2da44e", "#bf8700", "#8250df", "#57606a",
];

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 0.01 && a < 10000.0 {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() { "0".to_string() } else { s }
    } else {
        format!("{v:.2e}")
    }
}

/// Minimal self-contained line chart.
pub fn svg_line_chart(spec: &PlotSpec) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in &spec.series {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(y);
        }
    }
    let (mut x0, mut x1) = min_max(&xs);
    let (mut y0, mut y1) = min_max(&ys);
    if x1 - x0 < 1e-300 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 - y0 < 1e-300 {
        y0 -= 1.0;
        y1 += 1.0;
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        spec.title
    ));
    for k in 0..=4 {
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let px = sx(xv);
        let py = sy(yv);
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            mt,
            h - mb
        ));
        out.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#dddddd\"/>\n",
            w - mr
        ));
        out.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            h - mb + 18.0,
            format_tick(xv)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            ml - 6.0,
            py + 4.0,
            format_tick(yv)
        ));
    }
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0,
        spec.x_label
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        spec.y_label
    ));
    for (si, (label, pts)) in spec.series.iter().enumerate() {
        let color = PLOT_COLORS[si % PLOT_COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = mt + 16.0 * si as f64;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            w - mr - 150.0,
            ly
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            w - mr - 135.0,
            ly + 9.0,
            label
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}
