//! Master-equation and homodyne-trajectory integrators for the three
//! simulated control schemes.
//!
//! Every generator used here has Lindblad form `−i[H,ρ] + Σ D[Lₖ]ρ`, so it is
//! compiled once into a Hamiltonian plus a list of jump operators with the
//! rates folded in ([`CompiledGenerator`]).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::predictor::HomodyneRecord;
use crate::quantum::{
    c, dissipator_unchecked, on_ancilla, on_system, pauli, quadrature, trace_product, Axis,
    DensityMatrix, Operator, C64,
};
use crate::{Error, Result};

/// Local-oscillator phase at which σy feedback opposes spontaneous emission.
///
/// At φ = 0 the homodyne current is in phase with the emitted field and
/// positive gain λ adds to the decay. Shifting the reference by π flips the
/// sign of the measured quadrature, so the minimum of Γ(λ) = γ − 2√(ηγ)λ + 2λ²
/// sits at positive λ = ½√(ηγ).
pub const OPPOSING_LO_PHASE: f64 = PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    NoFeedback,
    WisemanMilburn,
    AncillaCoherent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackAxis {
    X,
    Y,
}

impl FeedbackAxis {
    pub fn pauli(self) -> Operator {
        match self {
            FeedbackAxis::X => pauli(Axis::X),
            FeedbackAxis::Y => pauli(Axis::Y),
        }
    }
}

/// Parameters of one control scheme. Rates in 1/µs; `lambda` in 1/√µs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub g: f64,
    pub kappa: f64,
    pub omega_s: f64,
    pub omega_a: f64,
    pub phi_lo: f64,
    pub axis: FeedbackAxis,
}

impl SchemeSpec {
    pub fn no_feedback(gamma: f64) -> Self {
        Self {
            kind: SchemeKind::NoFeedback,
            gamma,
            eta: 1.0,
            lambda: 0.0,
            g: 0.0,
            kappa: 0.0,
            omega_s: 0.0,
            omega_a: 0.0,
            phi_lo: 0.0,
            axis: FeedbackAxis::Y,
        }
    }

    /// Wiseman–Milburn σy feedback with the LO phase set to [`OPPOSING_LO_PHASE`].
    pub fn wiseman_milburn(gamma: f64, eta: f64, lambda: f64) -> Self {
        Self {
            kind: SchemeKind::WisemanMilburn,
            eta,
            lambda,
            phi_lo: OPPOSING_LO_PHASE,
            ..Self::no_feedback(gamma)
        }
    }

    /// System coupled by flip-flop exchange `g` to an ancilla decaying at `kappa`.
    pub fn ancilla(gamma: f64, g: f64, kappa: f64) -> Self {
        Self {
            kind: SchemeKind::AncillaCoherent,
            g,
            kappa,
            ..Self::no_feedback(gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("g", self.g),
            ("kappa", self.kappa),
            ("omega_s", self.omega_s),
            ("omega_a", self.omega_a),
            ("phi_lo", self.phi_lo),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, format!("{v} is not finite")));
            }
        }
        if self.gamma <= 0.0 {
            return Err(Error::param("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if self.kind == SchemeKind::AncillaCoherent && self.kappa <= 0.0 {
            return Err(Error::param(
                "kappa",
                format!("must be > 0 for the ancilla scheme, got {}", self.kappa),
            ));
        }
        if self.g < 0.0 || self.kappa < 0.0 {
            return Err(Error::param("g", "coupling and ancilla rate must be non-negative"));
        }
        Ok(())
    }

    /// Fastest rate in the model; bounds the stable step size.
    pub fn fastest_rate(&self) -> f64 {
        [
            self.gamma,
            self.kappa,
            self.g,
            self.omega_s.abs(),
            self.omega_a.abs(),
            self.lambda * self.lambda,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Measured emission operator `c = √γ e^{iφ} σ−`, whose x-quadrature is `√γ σ_φ`.
    fn emission(&self) -> Operator {
        pauli(Axis::Minus) * (C64::from_polar(self.gamma.sqrt(), self.phi_lo))
    }
}

/// Fixed-step integration settings.
#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    pub initial_state: DensityMatrix,
}

impl TrajectoryConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            seed: 0,
            n_trajectories: 1,
            initial_state: DensityMatrix::excited(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, n: usize) -> Self {
        self.n_trajectories = n;
        self
    }

    pub fn with_initial_state(mut self, rho: DensityMatrix) -> Self {
        self.initial_state = rho;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Checks the step against `dt ≤ 0.01 / (fastest rate in spec)`.
    pub fn validate(&self, spec: &SchemeSpec) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(Error::param(
                "t_final",
                format!("must be at least dt = {}, got {}", self.dt, self.t_final),
            ));
        }
        if self.n_trajectories == 0 {
            return Err(Error::param("n_trajectories", "must be at least 1"));
        }
        let limit = 0.01 / spec.fastest_rate();
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::param(
                "dt",
                format!("{} exceeds the stability limit {limit:.3e} us", self.dt),
            ));
        }
        Ok(())
    }
}

/// Excited-state population sampled on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationTrace {
    times: Vec<f64>,
    pe: Vec<f64>,
}

impl PopulationTrace {
    pub fn new(times: Vec<f64>, pe: Vec<f64>) -> Result<Self> {
        if times.len() != pe.len() {
            return Err(Error::LengthMismatch(times.len(), pe.len()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("times", "must be strictly increasing"));
        }
        if let Some(p) = pe.iter().find(|p| !(-1e-9..=1.0 + 1e-9).contains(*p)) {
            return Err(Error::param("pe", format!("population {p} outside [0, 1]")));
        }
        Ok(Self { times, pe })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn pe(&self) -> &[f64] {
        &self.pe
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let first = *self.times.first()?;
        if t < first || t > self.end_time() {
            return None;
        }
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            return Some(self.pe[0]);
        }
        if self.times[idx] == t {
            return Some(self.pe[idx]);
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        Some(self.pe[idx - 1] * (1.0 - w) + self.pe[idx] * w)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.pe.iter().copied())
    }
}

/// `H_S = ω_S σz / 2`, plus `H_A + H_int` on the pair for the ancilla scheme.
///
/// The coupling uses the excitation-exchange form `g(σ+⊗σ− + σ−⊗σ+)`, the
/// convention under which `C = 4g²/(κγ)`.
pub fn build_hamiltonian(spec: &SchemeSpec) -> Operator {
    let h_s = pauli(Axis::Z) * (0.5 * spec.omega_s);
    match spec.kind {
        SchemeKind::NoFeedback | SchemeKind::WisemanMilburn => h_s,
        SchemeKind::AncillaCoherent => {
            let h_a = pauli(Axis::Z) * (0.5 * spec.omega_a);
            on_system(&h_s) + on_ancilla(&h_a) + flip_flop() * spec.g
        }
    }
}

/// `σ+⊗σ− + σ−⊗σ+`
pub fn flip_flop() -> Operator {
    let sp = pauli(Axis::Plus);
    let sm = pauli(Axis::Minus);
    on_system(&sp) * on_ancilla(&sm) + on_system(&sm) * on_ancilla(&sp)
}

/// `−i[H,ρ] + Σ rate·D[L]ρ`
pub fn lindblad_rhs(h: &Operator, channels: &[(f64, Operator)], rho: &Operator) -> Result<Operator> {
    let dim = rho.dim();
    for op in std::iter::once(h).chain(channels.iter().map(|(_, l)| l)) {
        if op.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: op.dim(),
            });
        }
    }
    let mut out = h.commutator(rho) * c(0.0, -1.0);
    for (rate, l) in channels {
        out += dissipator_unchecked(l, rho) * *rate;
    }
    Ok(out)
}

/// Which master equation to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    /// `−i[H_S,ρ] + γD[σ−]ρ`
    NaturalDecay,
    /// Markovian homodyne feedback through `F = λσ_q` on the qubit.
    WisemanMilburn,
    /// System and ancilla with flip-flop coupling, each decaying into its own bath.
    AncillaRelaxation,
    /// Homodyne current fed back through `Λ = λσ_q` on `target`.
    AncillaFeedback { target: FeedbackTarget },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackTarget {
    Ancilla,
    System,
}

impl Generator {
    pub fn default_for(kind: SchemeKind) -> Self {
        match kind {
            SchemeKind::NoFeedback => Generator::NaturalDecay,
            SchemeKind::WisemanMilburn => Generator::WisemanMilburn,
            SchemeKind::AncillaCoherent => Generator::AncillaRelaxation,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Generator::NaturalDecay | Generator::WisemanMilburn => 2,
            Generator::AncillaRelaxation | Generator::AncillaFeedback { .. } => 4,
        }
    }
}

/// A Lindblad generator reduced to `H` and jump operators with rates folded in.
#[derive(Clone, Debug)]
pub struct CompiledGenerator {
    hamiltonian: Operator,
    jumps: Vec<Operator>,
}

impl CompiledGenerator {
    pub fn new(generator: Generator, spec: &SchemeSpec) -> Result<Self> {
        spec.validate()?;
        let (hamiltonian, jumps) = match generator {
            Generator::NaturalDecay => (
                pauli(Axis::Z) * (0.5 * spec.omega_s),
                vec![pauli(Axis::Minus) * spec.gamma.sqrt()],
            ),
            Generator::WisemanMilburn => {
                // D[c − i√η F] + (1−η) D[F], with the drift −i[(√η/2)(c†F + Fc), ρ]
                // that accompanies it. For F ∝ σy and φ ∈ {0, π} that drift vanishes.
                let cop = spec.emission();
                let f = spec.axis.pauli() * spec.lambda;
                let se = spec.eta.sqrt();
                let h = pauli(Axis::Z) * (0.5 * spec.omega_s)
                    + (cop.dagger() * f + f * cop) * (0.5 * se);
                let jumps = vec![cop - f * c(0.0, se), f * (1.0 - spec.eta).sqrt()];
                (h, jumps)
            }
            Generator::AncillaRelaxation => {
                let spec4 = SchemeSpec {
                    kind: SchemeKind::AncillaCoherent,
                    ..*spec
                };
                (
                    build_hamiltonian(&spec4),
                    vec![
                        on_system(&pauli(Axis::Minus)) * spec.gamma.sqrt(),
                        on_ancilla(&pauli(Axis::Minus)) * spec.kappa.sqrt(),
                    ],
                )
            }
            Generator::AncillaFeedback { target } => {
                let spec4 = SchemeSpec {
                    kind: SchemeKind::AncillaCoherent,
                    ..*spec
                };
                let cop = on_system(&spec.emission());
                let q = spec.axis.pauli() * spec.lambda;
                let lam = match target {
                    FeedbackTarget::Ancilla => on_ancilla(&q),
                    FeedbackTarget::System => on_system(&q),
                };
                let h = build_hamiltonian(&spec4) + (cop.dagger() * lam + lam * cop) * 0.5;
                let jumps = vec![cop - lam * c(0.0, 1.0), lam * (1.0 - spec.eta).sqrt()];
                (h, jumps)
            }
        };
        Ok(Self { hamiltonian, jumps })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[Operator] {
        &self.jumps
    }

    /// dρ/dt. Panics on a dimension mismatch; use [`Self::try_rhs`] for a checked call.
    pub fn rhs(&self, rho: &Operator) -> Operator {
        let mut out = self.hamiltonian.commutator(rho) * c(0.0, -1.0);
        for l in &self.jumps {
            out += dissipator_unchecked(l, rho);
        }
        out
    }

    pub fn try_rhs(&self, rho: &Operator) -> Result<Operator> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rho.dim(),
            });
        }
        Ok(self.rhs(rho))
    }
}

/// Unconditional Wiseman–Milburn generator
/// `−i[H_S + (√η/2)(c†F + Fc), ρ] + D[c − i√η F]ρ + (1−η)D[F]ρ`
/// with `c = √γ e^{iφ} σ−` and `F = λσ_q`.
pub fn wm_generator(spec: &SchemeSpec, rho: &Operator) -> Result<Operator> {
    if spec.kind != SchemeKind::WisemanMilburn {
        return Err(Error::param("kind", "wm_generator needs a Wiseman-Milburn scheme"));
    }
    CompiledGenerator::new(Generator::WisemanMilburn, spec)?.try_rhs(rho)
}

/// Averaged ancilla-feedback generator
/// `−i[H₀ + H_int + ½(c†Λ + Λc), ρ] + D[c − iΛ]ρ + (1−η)D[Λ]ρ`
/// with `c = √γ e^{iφ} σ−⊗I` and `Λ = λ I⊗σ_q`.
pub fn ancilla_feedback_generator(spec: &SchemeSpec, rho: &Operator) -> Result<Operator> {
    if spec.kind != SchemeKind::AncillaCoherent {
        return Err(Error::param("kind", "ancilla_feedback_generator needs an ancilla scheme"));
    }
    CompiledGenerator::new(
        Generator::AncillaFeedback {
            target: FeedbackTarget::Ancilla,
        },
        spec,
    )?
    .try_rhs(rho)
}

fn check_state(rho: &DensityMatrix, step: usize, dt: f64) -> Result<()> {
    rho.validate().map_err(|e| Error::Integration {
        step,
        time: step as f64 * dt,
        reason: format!("{e}; reduce dt"),
    })
}

fn embed_initial(config: &TrajectoryConfig, dim: usize) -> Result<DensityMatrix> {
    let rho0 = config.initial_state;
    match (rho0.dim(), dim) {
        (a, b) if a == b => Ok(rho0),
        (2, 4) => rho0.tensor(&DensityMatrix::ground()),
        (a, b) => Err(Error::DimensionMismatch {
            expected: b,
            found: a,
        }),
    }
}

/// Fixed-step RK4 integration of `generator`, recording the system's excited
/// population after every step. A single-qubit initial state is paired with
/// the ancilla in `|g⟩` when the generator acts on two qubits.
pub fn integrate_deterministic(
    generator: Generator,
    spec: &SchemeSpec,
    config: &TrajectoryConfig,
) -> Result<PopulationTrace> {
    Ok(integrate_with_state(generator, spec, config)?.0)
}

/// As [`integrate_deterministic`], also returning the final state.
pub fn integrate_with_state(
    generator: Generator,
    spec: &SchemeSpec,
    config: &TrajectoryConfig,
) -> Result<(PopulationTrace, DensityMatrix)> {
    config.validate(spec)?;
    let gen = CompiledGenerator::new(generator, spec)?;
    let mut rho = embed_initial(config, gen.dim())?;
    let dt = config.dt;
    let n = config.n_steps();

    let mut times = Vec::with_capacity(n + 1);
    let mut pe = Vec::with_capacity(n + 1);
    times.push(0.0);
    pe.push(rho.excited_population());

    for step in 1..=n {
        let y = *rho.as_operator();
        let k1 = gen.rhs(&y);
        let k2 = gen.rhs(&(y + k1 * (0.5 * dt)));
        let k3 = gen.rhs(&(y + k2 * (0.5 * dt)));
        let k4 = gen.rhs(&(y + k3 * dt));
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        rho = DensityMatrix::repaired(next);
        check_state(&rho, step, dt)?;
        times.push(step as f64 * dt);
        pe.push(rho.excited_population());
    }
    Ok((PopulationTrace::new(times, pe)?, rho))
}

/// Euler–Maruyama integrator for the homodyne-conditioned qubit state.
///
/// Itô form, with `c = √γ e^{iφ}σ−` and feedback `F = λσ_q` (zero without feedback):
///
/// ```text
/// dρ = (−i[H,ρ] + D[c]ρ − i√η[F, cρ + ρc†] + D[F]ρ) dt + (√η 𝓗[c]ρ − i[F,ρ]) dW
/// 𝓗[L]ρ = Lρ + ρL† − Tr[(L + L†)ρ] ρ
/// ```
///
/// Averaging over `dW` reproduces [`wm_generator`] (or `γD[σ−]` with `F = 0`).
#[derive(Clone, Debug)]
pub struct SmeIntegrator {
    dt: f64,
    sqrt_eta: f64,
    hamiltonian: Operator,
    emission: Operator,
    feedback: Option<Operator>,
    quadrature: Operator,
    signal_gain: f64,
    maps: QubitMaps,
}

/// The SME step written on the real coordinates `(ρ₀₀, ρ₁₁, Re ρ₀₁, Im ρ₀₁)`.
///
/// Drift and the linear part of the diffusion are real 4×4 matrices built by
/// applying the operator expressions to a Hermitian basis, so a step costs
/// two small matrix-vector products instead of a dozen operator products.
#[derive(Clone, Debug)]
struct QubitMaps {
    drift: [[f64; 4]; 4],
    kick: [[f64; 4]; 4],
    /// `Tr(cρ + ρc†)` as a linear functional.
    mean_x: [f64; 4],
    /// `⟨σ_φ⟩` as a linear functional.
    signal: [f64; 4],
}

type Coords = [f64; 4];

fn hermitian_basis() -> [Operator; 4] {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    let op = |m: [C64; 4]| Operator::from_row_major(2, &m).expect("2x2 basis");
    [
        op([one, z, z, z]),
        op([z, z, z, one]),
        op([z, one, one, z]),
        op([z, i, -i, z]),
    ]
}

fn coords(op: &Operator) -> Coords {
    let b = op.get(0, 1);
    [op.get(0, 0).re, op.get(1, 1).re, b.re, b.im]
}

fn from_coords(v: &Coords) -> Operator {
    let b = c(v[2], v[3]);
    Operator::from_row_major(2, &[c(v[0], 0.0), b, b.conj(), c(v[1], 0.0)]).expect("2x2 state")
}

fn matvec(m: &[[f64; 4]; 4], v: &Coords) -> Coords {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

fn dot(a: &Coords, b: &Coords) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SmeIntegrator {
    pub fn new(spec: &SchemeSpec, dt: f64) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        let feedback = match spec.kind {
            SchemeKind::NoFeedback => None,
            SchemeKind::WisemanMilburn => Some(spec.axis.pauli() * spec.lambda),
            SchemeKind::AncillaCoherent => {
                return Err(Error::param(
                    "kind",
                    "homodyne trajectories are simulated for the single qubit only",
                ))
            }
        };
        let mut integrator = Self {
            dt,
            sqrt_eta: spec.eta.sqrt(),
            hamiltonian: build_hamiltonian(&SchemeSpec {
                kind: SchemeKind::NoFeedback,
                ..*spec
            }),
            emission: spec.emission(),
            feedback,
            quadrature: quadrature(spec.phi_lo),
            signal_gain: (spec.eta * spec.gamma).sqrt(),
            maps: QubitMaps {
                drift: [[0.0; 4]; 4],
                kick: [[0.0; 4]; 4],
                mean_x: [0.0; 4],
                signal: [0.0; 4],
            },
        };
        for (k, e) in hermitian_basis().iter().enumerate() {
            let (drift, kick) = integrator.linear_parts(e);
            let (drift, kick) = (coords(&drift), coords(&kick));
            for r in 0..4 {
                integrator.maps.drift[r][k] = drift[r];
                integrator.maps.kick[r][k] = kick[r];
            }
            let c_e = integrator.emission * *e + *e * integrator.emission.dagger();
            integrator.maps.mean_x[k] = c_e.trace().re;
            integrator.maps.signal[k] = trace_product(&integrator.quadrature, e).re;
        }
        Ok(integrator)
    }

    /// Drift and the state-linear part of the diffusion, `√η(cρ + ρc†) − i[F,ρ]`.
    fn linear_parts(&self, rho: &Operator) -> (Operator, Operator) {
        let cop = &self.emission;
        let c_rho = *cop * *rho + *rho * cop.dagger();
        let mut drift = self.hamiltonian.commutator(rho) * c(0.0, -1.0) + dissipator_unchecked(cop, rho);
        let mut kick = c_rho * self.sqrt_eta;
        if let Some(f) = &self.feedback {
            drift += f.commutator(&c_rho) * c(0.0, -self.sqrt_eta) + dissipator_unchecked(f, rho);
            kick += f.commutator(rho) * c(0.0, -1.0);
        }
        (drift, kick)
    }

    /// Step on coordinates: Euler–Maruyama update, normalisation, then a clip
    /// of the smaller eigenvalue to zero. From a pure state the Euler step
    /// leaves that eigenvalue at `O(γ dt)(1 − η dW²/dt)`, negative whenever
    /// `dW² > dt/η`.
    fn step_coords(&self, v: &Coords, dw: f64) -> Result<(Coords, f64)> {
        let m = &self.maps;
        let current = if self.sqrt_eta > 0.0 {
            self.signal_gain * dot(&m.signal, v) + dw / (self.sqrt_eta * self.dt)
        } else {
            0.0
        };
        let drift = matvec(&m.drift, v);
        let kick = matvec(&m.kick, v);
        let mx = self.sqrt_eta * dot(&m.mean_x, v);
        let mut next = [0.0; 4];
        for r in 0..4 {
            next[r] = v[r] + drift[r] * self.dt + (kick[r] - mx * v[r]) * dw;
        }
        let tr = next[0] + next[1];
        if !(tr.is_finite() && tr > 0.0) || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState(format!("step produced trace {tr}")));
        }
        next.iter_mut().for_each(|x| *x /= tr);
        let half_gap = (0.25 * (next[0] - next[1]).powi(2) + next[2] * next[2] + next[3] * next[3]).sqrt();
        let (lo, hi) = (0.5 - half_gap, 0.5 + half_gap);
        if lo < 0.0 {
            // ρ − lo·(hi·I − ρ)/(hi − lo), then back to unit trace.
            let w = lo / (hi - lo);
            let shifted = [
                next[0] - w * (hi - next[0]),
                next[1] - w * (hi - next[1]),
                next[2] * (1.0 + w),
                next[3] * (1.0 + w),
            ];
            let tr = shifted[0] + shifted[1];
            next = shifted.map(|x| x / tr);
        }
        Ok((next, current))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Unrepaired Euler–Maruyama increment `ρ + drift·dt + diffusion·dW`.
    pub fn raw_update(&self, rho: &Operator, dw: f64) -> Operator {
        let (drift, kick) = self.linear_parts(rho);
        let mean_x = (self.emission * *rho + *rho * self.emission.dagger()).trace().re;
        let diffusion = kick - *rho * (self.sqrt_eta * mean_x);
        *rho + drift * self.dt + diffusion * dw
    }

    /// One step. Returns the repaired state and the homodyne current sample
    /// `√(ηγ)⟨σ_φ⟩ + dW/(√η dt)`; with `η = 0` no light reaches the detector
    /// and the sample is 0.
    pub fn step(&self, rho: &DensityMatrix, dw: f64) -> Result<(DensityMatrix, f64)> {
        if !dw.is_finite() {
            return Err(Error::param("dW", "Wiener increment must be finite"));
        }
        if rho.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: rho.dim(),
            });
        }
        let (next, current) = self.step_coords(&coords(rho), dw)?;
        let next = DensityMatrix::repaired(from_coords(&next));
        next.validate()?;
        Ok((next, current))
    }
}

/// One Euler–Maruyama step of the conditioned qubit state; see [`SmeIntegrator`].
pub fn sme_step(
    spec: &SchemeSpec,
    rho_c: &DensityMatrix,
    dw: f64,
    dt: f64,
) -> Result<(DensityMatrix, f64)> {
    if rho_c.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: rho_c.dim(),
        });
    }
    SmeIntegrator::new(spec, dt)?.step(rho_c, dw)
}

/// Operator-level form of the eigenvalue clip in [`SmeIntegrator::step`].
#[cfg(test)]
fn project_positive(rho: DensityMatrix) -> DensityMatrix {
    if rho.dim() != 2 {
        return rho;
    }
    let ev = rho.hermitian_eigenvalues();
    let (lo, hi) = (ev[0], ev[1]);
    if lo >= 0.0 || hi - lo <= 0.0 {
        return rho;
    }
    // |v_lo⟩⟨v_lo| = (hi·I − ρ)/(hi − lo) for a 2×2 Hermitian matrix.
    let op = *rho.as_operator();
    let proj = (Operator::identity(2) * hi - op) * (1.0 / (hi - lo));
    DensityMatrix::repaired(op - proj * lo)
}

/// Mean population and per-trajectory homodyne records of a trajectory ensemble.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub mean: PopulationTrace,
    /// Standard error of the mean at each sample time.
    pub std_err: Vec<f64>,
    pub records: Vec<HomodyneRecord>,
}

struct TrajectoryOutput {
    pe: Vec<f64>,
    currents: Vec<f64>,
}

/// Runs `config.n_trajectories` independent homodyne trajectories.
///
/// Trajectory `k` draws its Wiener increments from ChaCha8 stream `k` under
/// `config.seed`, so results do not depend on thread scheduling. Populations
/// and currents are reported on the grid `j·sample_period`; each current
/// sample is the mean current over the preceding sampling window
/// (integrate-and-dump decimation of the `dt` grid).
pub fn run_ensemble(
    spec: &SchemeSpec,
    config: &TrajectoryConfig,
    sample_period: f64,
) -> Result<Ensemble> {
    config.validate(spec)?;
    if config.initial_state.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: config.initial_state.dim(),
        });
    }
    let per_sample = (sample_period / config.dt).round() as usize;
    if per_sample == 0 || (per_sample as f64 * config.dt - sample_period).abs() > 1e-9 * sample_period {
        return Err(Error::param(
            "sample_period",
            format!("{sample_period} us is not a positive multiple of dt = {}", config.dt),
        ));
    }
    let n_samples = config.n_steps() / per_sample;
    if n_samples == 0 {
        return Err(Error::param("t_final", "shorter than one sampling period"));
    }
    let integrator = SmeIntegrator::new(spec, config.dt)?;

    let outputs: Vec<TrajectoryOutput> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|k| run_trajectory(&integrator, config, k as u64, per_sample, n_samples))
        .collect::<Result<_>>()?;

    let n = outputs.len() as f64;
    let mut mean = vec![0.0; n_samples + 1];
    let mut sq = vec![0.0; n_samples + 1];
    for out in &outputs {
        for (j, &p) in out.pe.iter().enumerate() {
            mean[j] += p;
            sq[j] += p * p;
        }
    }
    let std_err = mean
        .iter_mut()
        .zip(sq.iter())
        .map(|(m, &s)| {
            *m /= n;
            if n > 1.0 {
                let var = ((s - n * *m * *m) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let times: Vec<f64> = (0..=n_samples).map(|j| j as f64 * sample_period).collect();
    let records = outputs
        .into_iter()
        .map(|o| HomodyneRecord::new(sample_period, o.currents))
        .collect::<Result<_>>()?;
    Ok(Ensemble {
        mean: PopulationTrace::new(times, mean)?,
        std_err,
        records,
    })
}

fn run_trajectory(
    integrator: &SmeIntegrator,
    config: &TrajectoryConfig,
    index: u64,
    per_sample: usize,
    n_samples: usize,
) -> Result<TrajectoryOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let sqrt_dt = config.dt.sqrt();
    let mut rho = coords(&config.initial_state);
    let mut pe = Vec::with_capacity(n_samples + 1);
    let mut currents = Vec::with_capacity(n_samples);
    pe.push(rho[0]);
    for j in 0..n_samples {
        let mut acc = 0.0;
        for s in 0..per_sample {
            let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            let (next, current) = integrator.step_coords(&rho, dw).map_err(|e| Error::Integration {
                step: j * per_sample + s + 1,
                time: (j * per_sample + s + 1) as f64 * config.dt,
                reason: format!("trajectory {index}: {e}"),
            })?;
            rho = next;
            acc += current;
        }
        DensityMatrix::new(from_coords(&rho)).map_err(|e| Error::Integration {
            step: (j + 1) * per_sample,
            time: ((j + 1) * per_sample) as f64 * config.dt,
            reason: format!("trajectory {index}: {e}"),
        })?;
        pe.push(rho[0]);
        currents.push(acc / per_sample as f64);
    }
    Ok(TrajectoryOutput { pe, currents })
}

/// Deterministic check value used by tests: the Lindblad generator's own
/// relaxation of `Tr(σz ρ)`.
pub fn sigma_z_rate(gen: &CompiledGenerator, rho: &Operator) -> f64 {
    let d = gen.rhs(rho);
    let sz = if gen.dim() == 2 {
        pauli(Axis::Z)
    } else {
        on_system(&pauli(Axis::Z))
    };
    trace_product(&sz, &d).re
}
