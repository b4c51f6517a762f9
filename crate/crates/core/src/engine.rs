//! Coupled super-observer / single-observer conditional evolution.
//!
//! One [`TrajectoryState`] carries the super-observer state ρ (conditioned
//! on every channel) and one single-observer state ρ_i per channel
//! (conditioned on channel `i` only). Each step draws the measurement
//! outcomes once, with statistics taken from ρ, and feeds the same outcomes
//! to every matrix.
//!
//! Both unravelings are integrated in Kraus form,
//!
//! ```text
//! ρ' ∝ M ρ M† + (1 − η_mon) dt · L ρ L†
//! ```
//!
//! where `η_mon` is the efficiency monitored by whoever owns the state and
//! `M` is the conditional propagator for the observed outcome. The map is
//! completely positive before normalization, which keeps every state
//! positive and keeps pure states pure, and it reproduces the Itô
//! equations to first order in `dt`.

use smallvec::SmallVec;

use crate::densmat::{ComplexMatrix, DensityMatrix, C64, HERMITICITY_TOL};
use crate::error::{Error, Result};
use crate::stochastics::{sample_jump_event, sample_wiener, RngStream, StepRecord};

/// Largest `dt · ‖H‖` accepted by the step guards.
pub const MAX_ROTATION_PER_STEP: f64 = 0.05;
/// Smallest trace of a jump-transformed state before the jump is impossible.
pub const MIN_JUMP_NORM: f64 = 1e-14;
/// Computed rates down to this negative value are clamped to zero.
pub const RATE_NEGATIVE_SLACK: f64 = 1e-10;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelScheme {
    Photodetection,
    /// Finite local-oscillator amplitude `R`, jump unraveling with (L + R e^{iφ}).
    Homodyne {
        amplitude: f64,
        phase: f64,
    },
    /// R → ∞ limit, driven by Wiener increments.
    HomodyneDiffusive {
        phase: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub efficiency: f64,
    pub scheme: ChannelScheme,
}

impl ChannelConfig {
    pub fn photodetection(efficiency: f64) -> Self {
        ChannelConfig {
            efficiency,
            scheme: ChannelScheme::Photodetection,
        }
    }

    pub fn homodyne(efficiency: f64, amplitude: f64, phase: f64) -> Self {
        ChannelConfig {
            efficiency,
            scheme: ChannelScheme::Homodyne { amplitude, phase },
        }
    }

    pub fn homodyne_diffusive(efficiency: f64, phase: f64) -> Self {
        ChannelConfig {
            efficiency,
            scheme: ChannelScheme::HomodyneDiffusive { phase },
        }
    }

    /// γ = R e^{iφ}; zero for photodetection.
    pub fn local_oscillator(&self) -> C64 {
        match self.scheme {
            ChannelScheme::Photodetection | ChannelScheme::HomodyneDiffusive { .. } => C64::new(0.0, 0.0),
            ChannelScheme::Homodyne { amplitude, phase } => C64::from_polar(amplitude, phase),
        }
    }

    pub fn is_diffusive(&self) -> bool {
        matches!(self.scheme, ChannelScheme::HomodyneDiffusive { .. })
    }

    pub fn phase(&self) -> f64 {
        match self.scheme {
            ChannelScheme::Photodetection => 0.0,
            ChannelScheme::Homodyne { phase, .. } | ChannelScheme::HomodyneDiffusive { phase } => phase,
        }
    }

    /// Operator whose action defines a detection, L + γ.
    pub fn jump_operator(&self, lindblad: &ComplexMatrix) -> ComplexMatrix {
        let gamma = self.local_oscillator();
        let mut a = lindblad.clone();
        if gamma != C64::new(0.0, 0.0) {
            a.add_scaled(&ComplexMatrix::identity(lindblad.dim()), gamma);
        }
        a
    }
}

/// Hamiltonian, the single Lindblad operator and the measurement channels
/// that split its emission.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    hamiltonian: ComplexMatrix,
    lindblad: ComplexMatrix,
    channels: Vec<ChannelConfig>,
}

impl ModelSpec {
    pub fn new(hamiltonian: ComplexMatrix, lindblad: ComplexMatrix, channels: Vec<ChannelConfig>) -> Result<Self> {
        if hamiltonian.dim() != lindblad.dim() {
            return Err(Error::DimensionMismatch {
                left: hamiltonian.dim(),
                right: lindblad.dim(),
            });
        }
        if !hamiltonian.is_finite() || !lindblad.is_finite() {
            return Err(Error::InvalidModel("non-finite operator entry".into()));
        }
        if !hamiltonian.is_hermitian(HERMITICITY_TOL) {
            return Err(Error::InvalidModel("Hamiltonian is not Hermitian".into()));
        }
        validate_channels(&channels)?;
        Ok(ModelSpec {
            hamiltonian,
            lindblad,
            channels,
        })
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn lindblad(&self) -> &ComplexMatrix {
        &self.lindblad
    }

    pub fn channels(&self) -> &[ChannelConfig] {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// η = Σ_i η_i
    pub fn total_efficiency(&self) -> f64 {
        self.channels.iter().map(|c| c.efficiency).sum()
    }

    pub fn is_diffusive(&self) -> bool {
        self.channels.first().is_some_and(|c| c.is_diffusive())
    }
}

fn validate_channels(channels: &[ChannelConfig]) -> Result<()> {
    let mut total = 0.0;
    for (i, ch) in channels.iter().enumerate() {
        if !(0.0..=1.0).contains(&ch.efficiency) {
            return Err(Error::EfficiencyOutOfRange(format!(
                "channel {i} efficiency {} outside [0, 1]",
                ch.efficiency
            )));
        }
        total += ch.efficiency;
        match ch.scheme {
            ChannelScheme::Homodyne { amplitude, phase } => {
                if !(amplitude.is_finite() && amplitude >= 0.0) || !phase.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "channel {i}: local oscillator amplitude must be finite and non-negative"
                    )));
                }
            }
            ChannelScheme::HomodyneDiffusive { phase } if !phase.is_finite() => {
                return Err(Error::InvalidModel(format!("channel {i}: non-finite phase")));
            }
            _ => {}
        }
    }
    if total > 1.0 + 1e-12 {
        return Err(Error::EfficiencyOutOfRange(format!(
            "total efficiency {total} exceeds 1"
        )));
    }
    let diffusive = channels.iter().filter(|c| c.is_diffusive()).count();
    if diffusive != 0 && diffusive != channels.len() {
        return Err(Error::InvalidModel(
            "diffusive and jump channels cannot be mixed in one model".into(),
        ));
    }
    Ok(())
}

/// Super-observer state plus one single-observer state per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub rho_super: DensityMatrix,
    pub rho_single: Vec<DensityMatrix>,
}

impl TrajectoryState {
    pub fn new(t: f64, rho_super: DensityMatrix, rho_single: Vec<DensityMatrix>) -> Result<Self> {
        let state = TrajectoryState {
            t,
            rho_super,
            rho_single,
        };
        state.check_invariants()?;
        Ok(state)
    }

    /// Every observer starts from the same state.
    pub fn replicated(initial: DensityMatrix, n_channels: usize) -> Result<Self> {
        let singles = vec![initial.clone(); n_channels];
        Self::new(0.0, initial, singles)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let dim = self.rho_super.dim();
        self.rho_super.check_invariants()?;
        for rho in &self.rho_single {
            if rho.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: rho.dim(),
                });
            }
            rho.check_invariants()?;
        }
        Ok(())
    }
}

/// ρ ↦ normalize(P ρ P† + w · L ρ L†)
#[derive(Debug, Clone)]
struct ConditionalMap {
    propagator: ComplexMatrix,
    unmonitored_weight: f64,
}

impl ConditionalMap {
    /// `monitored` lists (η_i, L + γ_i, γ_i) for the channels whose jumps the
    /// owner of the state records.
    fn no_jump(
        hamiltonian: &ComplexMatrix,
        lindblad: &ComplexMatrix,
        monitored: &[(f64, ComplexMatrix, C64)],
        dt: f64,
    ) -> Self {
        let l_dag = lindblad.dagger();
        let eta_mon: f64 = monitored.iter().map(|(eta, _, _)| eta).sum();
        let mut h_eff = hamiltonian.clone();
        let mut decay = (&l_dag * lindblad).scale_real(1.0 - eta_mon);
        for (eta, jump_op, gamma) in monitored {
            // H_γ = −(i/2)(γ* L − γ L†) compensates the displaced jump operator
            let shift = &lindblad.scale(gamma.conj()) - &l_dag.scale(*gamma);
            h_eff.add_scaled(&shift, -0.5 * I * *eta);
            decay.add_scaled(&(&jump_op.dagger() * jump_op), C64::new(*eta, 0.0));
        }
        // K = H_eff − (i/2)·decay, P = exp(−i K dt)
        let mut k = h_eff;
        k.add_scaled(&decay, -0.5 * I);
        ConditionalMap {
            propagator: k.scale(-I * dt).expm(),
            unmonitored_weight: (1.0 - eta_mon).max(0.0) * dt,
        }
    }

    fn apply(&self, rho: &DensityMatrix, lindblad: &ComplexMatrix) -> DensityMatrix {
        self.apply_with(&self.propagator, rho, lindblad)
    }

    fn apply_with(&self, m: &ComplexMatrix, rho: &DensityMatrix, lindblad: &ComplexMatrix) -> DensityMatrix {
        DensityMatrix::kraus_update(m, rho, lindblad, self.unmonitored_weight)
    }
}

fn check_rotation_guard(spec: &ModelSpec, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepTooLarge {
            quantity: "dt (must be positive and finite)",
            value: dt,
            limit: f64::INFINITY,
        });
    }
    let rotation = dt * spec.hamiltonian.norm_inf();
    if rotation > MAX_ROTATION_PER_STEP {
        return Err(Error::StepTooLarge {
            quantity: "dt·‖H‖",
            value: rotation,
            limit: MAX_ROTATION_PER_STEP,
        });
    }
    Ok(())
}

/// One step of the unconditional master equation
/// dρ/dt = −i[H,ρ] + LρL† − ½{L†L,ρ}, in the same Kraus form the
/// conditional steps use with nothing monitored.
pub fn unconditional_step(rho: &DensityMatrix, spec: &ModelSpec, dt: f64) -> Result<DensityMatrix> {
    check_rotation_guard(spec, dt)?;
    require_dim(rho, spec.dim())?;
    let map = ConditionalMap::no_jump(&spec.hamiltonian, &spec.lindblad, &[], dt);
    Ok(map.apply(rho, &spec.lindblad))
}

/// Mean detection rate of a jump channel, so that the mean count in `dt`
/// is `rate·dt`.
pub fn detection_rate(rho: &DensityMatrix, channel: &ChannelConfig, lindblad: &ComplexMatrix) -> Result<f64> {
    if channel.is_diffusive() {
        return Err(Error::InvalidModel(
            "diffusive channel has no finite detection rate".into(),
        ));
    }
    require_dim(rho, lindblad.dim())?;
    let a = channel.jump_operator(lindblad);
    rate_from_operator(rho, &(&a.dagger() * &a), channel.efficiency, 0)
}

fn rate_from_operator(rho: &DensityMatrix, a_dag_a: &ComplexMatrix, efficiency: f64, channel: usize) -> Result<f64> {
    let rate = efficiency * rho.expectation(a_dag_a).re;
    if rate < -RATE_NEGATIVE_SLACK || !rate.is_finite() {
        return Err(Error::NegativeRate { channel, rate });
    }
    Ok(rate.max(0.0))
}

/// State after a detection on `channel`: (L+γ)ρ(L+γ)† / Tr[…].
pub fn apply_jump(rho: &DensityMatrix, channel: &ChannelConfig, lindblad: &ComplexMatrix) -> Result<DensityMatrix> {
    if channel.is_diffusive() {
        return Err(Error::InvalidModel("diffusive channel has no jump operation".into()));
    }
    require_dim(rho, lindblad.dim())?;
    jump_with(rho, &channel.jump_operator(lindblad), 0)
}

fn jump_with(rho: &DensityMatrix, jump_op: &ComplexMatrix, channel: usize) -> Result<DensityMatrix> {
    let m = jump_op.sandwich(rho.matrix());
    let norm = m.trace().re;
    if !(norm > MIN_JUMP_NORM) {
        return Err(Error::ImpossibleJump { channel, norm });
    }
    Ok(DensityMatrix::normalized(m))
}

fn require_dim(rho: &DensityMatrix, dim: usize) -> Result<()> {
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: dim,
        });
    }
    Ok(())
}

/// Precomputed step machinery for one model and one `dt`.
#[derive(Debug, Clone)]
pub struct Engine {
    spec: ModelSpec,
    dt: f64,
    kind: EngineKind,
    check_invariants: bool,
}

#[derive(Debug, Clone)]
enum EngineKind {
    Jump(JumpParts),
    Diffusive(DiffusiveParts),
}

#[derive(Debug, Clone)]
struct JumpParts {
    jump_ops: Vec<ComplexMatrix>,
    rate_ops: Vec<ComplexMatrix>,
    super_map: ConditionalMap,
    single_maps: Vec<ConditionalMap>,
}

#[derive(Debug, Clone)]
struct DiffusiveParts {
    /// shared no-measurement propagator exp(−i(H − i/2 L†L)dt)
    base: ConditionalMap,
    /// L² when it is not identically zero
    lindblad_sq: Option<ComplexMatrix>,
    /// √η_i e^{−iφ_i}
    couplings: Vec<C64>,
    /// e^{−iφ_i} L + e^{iφ_i} L†
    quadratures: Vec<ComplexMatrix>,
    single_weights: Vec<f64>,
    super_weight: f64,
}

impl Engine {
    pub fn new(spec: ModelSpec, dt: f64) -> Result<Self> {
        check_rotation_guard(&spec, dt)?;
        let kind = if spec.is_diffusive() {
            EngineKind::Diffusive(Self::diffusive_parts(&spec, dt))
        } else {
            EngineKind::Jump(Self::jump_parts(&spec, dt)?)
        };
        Ok(Engine {
            spec,
            dt,
            kind,
            check_invariants: false,
        })
    }

    /// Validates every matrix (including positivity) after each step.
    pub fn with_invariant_checks(mut self, enabled: bool) -> Self {
        self.check_invariants = enabled;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_channels(&self) -> usize {
        self.spec.channels.len()
    }

    fn jump_parts(spec: &ModelSpec, dt: f64) -> Result<JumpParts> {
        let l = &spec.lindblad;
        let jump_ops: Vec<ComplexMatrix> = spec.channels.iter().map(|c| c.jump_operator(l)).collect();
        let rate_ops: Vec<ComplexMatrix> = jump_ops.iter().map(|a| &a.dagger() * a).collect();

        // worst-case Σ rate·dt, bounded by the largest eigenvalue of each A†A
        let bound: f64 = spec
            .channels
            .iter()
            .zip(&rate_ops)
            .map(|(c, op)| c.efficiency * op.hermitian_eigenvalues().last().copied().unwrap_or(0.0))
            .sum::<f64>()
            * dt;
        if bound > crate::stochastics::MAX_JUMP_PROBABILITY {
            return Err(Error::StepTooLarge {
                quantity: "maximal Σ rate·dt",
                value: bound,
                limit: crate::stochastics::MAX_JUMP_PROBABILITY,
            });
        }

        let monitored = |idx: Option<usize>| -> Vec<(f64, ComplexMatrix, C64)> {
            spec.channels
                .iter()
                .zip(&jump_ops)
                .enumerate()
                .filter(|(i, (c, _))| c.efficiency > 0.0 && idx.is_none_or(|k| k == *i))
                .map(|(_, (c, a))| (c.efficiency, a.clone(), c.local_oscillator()))
                .collect()
        };
        let super_map = ConditionalMap::no_jump(&spec.hamiltonian, l, &monitored(None), dt);
        let single_maps = (0..spec.channels.len())
            .map(|i| ConditionalMap::no_jump(&spec.hamiltonian, l, &monitored(Some(i)), dt))
            .collect();
        Ok(JumpParts {
            jump_ops,
            rate_ops,
            super_map,
            single_maps,
        })
    }

    fn diffusive_parts(spec: &ModelSpec, dt: f64) -> DiffusiveParts {
        let l = &spec.lindblad;
        let base = ConditionalMap::no_jump(&spec.hamiltonian, l, &[], dt);
        let l_sq = l * l;
        let lindblad_sq = (l_sq.norm_inf() > 0.0).then_some(l_sq);
        let l_dag = l.dagger();
        let couplings = spec
            .channels
            .iter()
            .map(|c| C64::from_polar(c.efficiency.sqrt(), -c.phase()))
            .collect();
        let quadratures = spec
            .channels
            .iter()
            .map(|c| {
                let e = C64::from_polar(1.0, -c.phase());
                &l.scale(e) + &l_dag.scale(e.conj())
            })
            .collect();
        let single_weights = spec
            .channels
            .iter()
            .map(|c| (1.0 - c.efficiency).max(0.0) * dt)
            .collect();
        DiffusiveParts {
            base,
            lindblad_sq,
            couplings,
            quadratures,
            single_weights,
            super_weight: (1.0 - spec.total_efficiency()).max(0.0) * dt,
        }
    }

    /// Jump rates of every channel evaluated on the given state.
    pub fn rates(&self, rho: &DensityMatrix) -> Result<SmallVec<[f64; 4]>> {
        match &self.kind {
            EngineKind::Jump(parts) => self
                .spec
                .channels
                .iter()
                .zip(&parts.rate_ops)
                .enumerate()
                .map(|(i, (c, op))| rate_from_operator(rho, op, c.efficiency, i))
                .collect(),
            EngineKind::Diffusive(_) => Err(Error::InvalidModel(
                "diffusive channels have no finite jump rates".into(),
            )),
        }
    }

    /// Advances `state` by one step, dispatching on the unraveling.
    pub fn step(&self, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<StepRecord> {
        match &self.kind {
            EngineKind::Jump(parts) => self.step_jump(parts, state, rng),
            EngineKind::Diffusive(parts) => self.step_diffusive(parts, state, rng),
        }
    }

    /// Jump unraveling (photodetection or finite-R homodyne).
    pub fn mcsme_step_jump(&self, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<StepRecord> {
        match &self.kind {
            EngineKind::Jump(parts) => self.step_jump(parts, state, rng),
            EngineKind::Diffusive(_) => Err(Error::InvalidModel("model uses diffusive channels".into())),
        }
    }

    /// Diffusive unraveling (R → ∞ homodyne).
    pub fn mcsme_step_diffusive(&self, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<StepRecord> {
        match &self.kind {
            EngineKind::Diffusive(parts) => self.step_diffusive(parts, state, rng),
            EngineKind::Jump(_) => Err(Error::InvalidModel("model uses jump channels".into())),
        }
    }

    /// Null-result evolution of every matrix for one step, as if no
    /// channel had fired. Jump unravelings only.
    pub fn evolve_without_detection(&self, state: &mut TrajectoryState) -> Result<()> {
        let EngineKind::Jump(parts) = &self.kind else {
            return Err(Error::InvalidModel("model uses diffusive channels".into()));
        };
        self.require_layout(state)?;
        let l = &self.spec.lindblad;
        state.rho_super = parts.super_map.apply(&state.rho_super, l);
        for (rho, map) in state.rho_single.iter_mut().zip(&parts.single_maps) {
            *rho = map.apply(rho, l);
        }
        state.t += self.dt;
        self.post_step(state)
    }

    fn step_jump(&self, parts: &JumpParts, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<StepRecord> {
        self.require_layout(state)?;
        let l = &self.spec.lindblad;
        let rates = self.rates(&state.rho_super)?;
        let fired = sample_jump_event(&rates, self.dt, rng)?;
        match fired {
            None => {
                state.rho_super = parts.super_map.apply(&state.rho_super, l);
                for (rho, map) in state.rho_single.iter_mut().zip(&parts.single_maps) {
                    *rho = map.apply(rho, l);
                }
            }
            Some(k) => {
                state.rho_super = jump_with(&state.rho_super, &parts.jump_ops[k], k)?;
                for (i, (rho, map)) in state.rho_single.iter_mut().zip(&parts.single_maps).enumerate() {
                    *rho = if i == k {
                        jump_with(rho, &parts.jump_ops[k], k)?
                    } else {
                        map.apply(rho, l)
                    };
                }
            }
        }
        state.t += self.dt;
        self.post_step(state)?;
        Ok(StepRecord::jump_record(rates.len(), fired, self.dt))
    }

    fn step_diffusive(
        &self,
        parts: &DiffusiveParts,
        state: &mut TrajectoryState,
        rng: &mut RngStream,
    ) -> Result<StepRecord> {
        self.require_layout(state)?;
        let dt = self.dt;
        let l = &self.spec.lindblad;
        let dw = sample_wiener(self.n_channels(), dt, rng);

        // measured currents dY_i = dW_i + √η_i ⟨X_i⟩_ρ dt, statistics from ρ
        let records: SmallVec<[f64; 4]> = self
            .spec
            .channels
            .iter()
            .zip(&parts.quadratures)
            .zip(&dw)
            .map(|((c, x), w)| w + c.efficiency.sqrt() * state.rho_super.expectation(x).re * dt)
            .collect();

        let drive: C64 = parts.couplings.iter().zip(&records).map(|(b, y)| b * y).sum();
        let second: C64 = drive * drive - parts.couplings.iter().map(|b| b * b).sum::<C64>() * dt;
        let m_super = self.kraus(parts, drive, second);
        state.rho_super = parts
            .base
            .apply_with_weight(&m_super, &state.rho_super, l, parts.super_weight);

        for (i, rho) in state.rho_single.iter_mut().enumerate() {
            let b = parts.couplings[i];
            let y = records[i];
            let m_i = self.kraus(parts, b * y, b * b * (y * y - dt));
            *rho = parts.base.apply_with_weight(&m_i, rho, l, parts.single_weights[i]);
        }
        state.t += dt;
        self.post_step(state)?;
        Ok(StepRecord::diffusive_record(dw, dt))
    }

    /// M = P + s₁ L + ½ s₂ L²
    fn kraus(&self, parts: &DiffusiveParts, first: C64, second: C64) -> ComplexMatrix {
        let mut m = parts.base.propagator.clone();
        m.add_scaled(&self.spec.lindblad, first);
        if let Some(l_sq) = &parts.lindblad_sq {
            m.add_scaled(l_sq, 0.5 * second);
        }
        m
    }

    fn require_layout(&self, state: &TrajectoryState) -> Result<()> {
        if state.rho_single.len() != self.n_channels() {
            return Err(Error::InvalidModel(format!(
                "state has {} single-observer matrices, model has {} channels",
                state.rho_single.len(),
                self.n_channels()
            )));
        }
        require_dim(&state.rho_super, self.spec.dim())
    }

    fn post_step(&self, state: &TrajectoryState) -> Result<()> {
        if self.check_invariants {
            state.check_invariants()?;
        }
        Ok(())
    }
}

impl ConditionalMap {
    fn apply_with_weight(
        &self,
        m: &ComplexMatrix,
        rho: &DensityMatrix,
        lindblad: &ComplexMatrix,
        weight: f64,
    ) -> DensityMatrix {
        DensityMatrix::kraus_update(m, rho, lindblad, weight)
    }
}

/// Sampled states and all step records of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutput {
    pub samples: Vec<TrajectoryState>,
    pub records: Vec<StepRecord>,
}

pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::config("t_final", "must be finite and non-negative"));
    }
    Ok((t_final / dt).round() as usize)
}

/// Runs one trajectory, keeping every `sample_stride`-th state (the
/// initial state included) and every step record.
pub fn run_trajectory(
    engine: &Engine,
    initial: TrajectoryState,
    t_final: f64,
    sample_stride: usize,
    rng: &mut RngStream,
) -> Result<TrajectoryOutput> {
    let stride = sample_stride.max(1);
    let n_steps = step_count(t_final, engine.dt())?;
    let mut samples = vec![initial.clone()];
    let mut records = Vec::with_capacity(n_steps);
    let mut state = initial;
    run_steps(engine, &mut state, n_steps, rng, |k, s, rec| {
        if (k + 1) % stride == 0 {
            samples.push(s.clone());
        }
        records.push(rec.clone());
        Ok(())
    })?;
    Ok(TrajectoryOutput { samples, records })
}

/// Advances `state` by `n_steps`, calling `visit(step_index, state, record)`
/// after every step. Time is set to `(step_index + 1)·dt` relative to the
/// start so that long runs do not accumulate rounding in `t`.
pub fn run_steps(
    engine: &Engine,
    state: &mut TrajectoryState,
    n_steps: usize,
    rng: &mut RngStream,
    mut visit: impl FnMut(usize, &TrajectoryState, &StepRecord) -> Result<()>,
) -> Result<()> {
    let t0 = state.t;
    for k in 0..n_steps {
        let record = engine.step(state, rng)?;
        state.t = t0 + (k + 1) as f64 * engine.dt();
        visit(k, state, &record)?;
    }
    Ok(())
}
