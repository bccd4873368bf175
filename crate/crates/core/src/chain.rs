//! The discrete Markov chain of sequential indirect observations, single and
//! multichannel, with exact and first-order transition kernels, trajectory
//! sampling under arbitrary waiting laws, and iterated transition operators.
//!
//! The chain's interaction scale and the random waiting time are deliberately
//! separated: heavy-tailed waiting laws change *when* measurements happen but
//! never the transition kernel itself, which always uses the kernel step `h`.
//! The waiting time only advances the trajectory clock.

use crate::ctrw::{sample_waiting, WaitingLaw};
use crate::error::{Error, Result};
use crate::linalg::{C_I, ComplexMatrix};
use crate::qstate::{
    clip_and_normalize, partial_trace_probes, projector_pair, DensityMatrix, MAX_LIFTED_DIM,
};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Outcomes with probability below this threshold are dropped and the
/// distribution renormalized, avoiding division blow-ups in near-zero
/// branches.
pub const PROBABILITY_FLOOR: f64 = 1e-14;

/// How a channel's probe is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// Projectors aligned with the vacuum basis; jump-type statistics.
    Counting,
    /// Projectors rotated by an angle away from the vacuum basis;
    /// diffusion-type statistics.
    Diffusive,
}

/// One observation channel: coupling operator plus detection angle.
#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub c: ComplexMatrix,
    pub phi: f64,
}

impl ChannelSpec {
    pub fn counting(c: ComplexMatrix) -> Self {
        Self { c, phi: 0.0 }
    }

    pub fn rotated(c: ComplexMatrix, phi: f64) -> Self {
        Self { c, phi }
    }

    pub fn mode(&self) -> ChannelMode {
        if (self.phi.sin() * self.phi.cos()).abs() < 1e-12 {
            ChannelMode::Counting
        } else {
            ChannelMode::Diffusive
        }
    }

    fn validate(&self, atom_dim: usize) -> Result<()> {
        if self.c.dim() != atom_dim {
            return Err(Error::Shape(format!(
                "channel coupling has dimension {}, atom has {}",
                self.c.dim(),
                atom_dim
            )));
        }
        if self.mode() == ChannelMode::Counting && self.phi.cos().abs() < 0.5 {
            // phi = pi/2 mod pi swaps the projector labels; the counting
            // formulas assume the vacuum-aligned orientation.
            return Err(Error::InvalidInput(
                "diagonal channel with swapped projector orientation; use phi = 0 mod pi".into(),
            ));
        }
        Ok(())
    }
}

/// Atom Hamiltonian, optional probe block, and the observation channels.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub channels: Vec<ChannelSpec>,
}

impl HamiltonianSpec {
    pub fn new(a: ComplexMatrix, channels: Vec<ChannelSpec>) -> Result<Self> {
        let b = ComplexMatrix::zeros(a.dim());
        Self::with_probe_block(a, b, channels)
    }

    /// For a single channel the free Hamiltonian is the block matrix
    /// diag(A, B); the probe block is only meaningful there.
    pub fn with_probe_block(
        a: ComplexMatrix,
        b: ComplexMatrix,
        channels: Vec<ChannelSpec>,
    ) -> Result<Self> {
        let scale = a.max_abs().max(1.0);
        if a.hermiticity_error() > 1e-10 * scale {
            return Err(Error::NotHermitian { deviation: a.hermiticity_error(), tolerance: 1e-10 });
        }
        if b.dim() != a.dim() {
            return Err(Error::Shape("probe block must match the atom dimension".into()));
        }
        if b.hermiticity_error() > 1e-10 * b.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation: b.hermiticity_error(), tolerance: 1e-10 });
        }
        if channels.is_empty() {
            return Err(Error::InvalidInput("need at least one observation channel".into()));
        }
        if channels.len() > 1 && b.max_abs() > 0.0 {
            return Err(Error::Unsupported(
                "probe block is only defined for a single channel".into(),
            ));
        }
        for ch in &channels {
            ch.validate(a.dim())?;
        }
        let lifted = a.dim() << channels.len();
        if lifted > MAX_LIFTED_DIM {
            return Err(Error::Sizing { requested: lifted, max: MAX_LIFTED_DIM });
        }
        Ok(Self { a, b, channels })
    }

    pub fn atom_dim(&self) -> usize {
        self.a.dim()
    }

    pub fn probes(&self) -> usize {
        self.channels.len()
    }
}

/// Whether the interaction is enhanced by 1/sqrt(t). The scaled form is the
/// one with a nontrivial measurement limit; the unscaled form exhibits the
/// quantum Zeno freeze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionScaling {
    SqrtInverse,
    Unscaled,
}

/// Which transition kernel backs an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepKernel {
    /// Exact conjugation on the lifted space; the oracle.
    #[default]
    Exact,
    /// The first-order outcome formulas; fast, no lifted space.
    Asymptotic,
}

/// One possible measurement outcome of a chain step.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Probe word (i_1 .. i_K).
    pub word: Vec<u8>,
    pub probability: f64,
    pub state: DensityMatrix,
}

/// Full outcome distribution of one step.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<Outcome>,
}

impl OutcomeDistribution {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|o| o.probability).sum()
    }

    /// Sample an outcome index from a uniform draw.
    pub fn sample(&self, u: f64) -> &Outcome {
        let mut acc = 0.0;
        for o in &self.outcomes {
            acc += o.probability;
            if u < acc {
                return o;
            }
        }
        self.outcomes.last().expect("outcome distribution is never empty")
    }

    /// Expectation of a state functional under the distribution.
    pub fn expectation(&self, f: impl Fn(&DensityMatrix) -> f64) -> f64 {
        self.outcomes.iter().map(|o| o.probability * f(&o.state)).sum()
    }
}

/// Unvalidated outcome branch used by the dynamic-programming backup, which
/// evaluates the kernel on virtual (Hermitian, unit-trace, possibly
/// non-positive) states where probabilities can leave [0, 1].
#[derive(Debug, Clone)]
pub struct RawOutcome {
    pub word: Vec<u8>,
    pub weight: f64,
    pub state: ComplexMatrix,
}

/// Precomputed one-step evolution for a fixed spec, step size and scaling.
/// `step_exact` and friends are one-shot wrappers around this; hot loops
/// (trajectories, iterated transition operators) reuse the cache.
pub struct ChainKernel {
    spec: HamiltonianSpec,
    t: f64,
    kernel: StepKernel,
    /// Exact path: evolution unitary on the lifted space.
    evolution: Option<ComplexMatrix>,
    /// Exact path: per-word lifted projectors.
    word_projectors: Vec<(Vec<u8>, ComplexMatrix)>,
}

impl ChainKernel {
    pub fn new(
        spec: &HamiltonianSpec,
        t: f64,
        kernel: StepKernel,
        scaling: InteractionScaling,
    ) -> Result<Self> {
        if t <= 0.0 {
            return Err(Error::InvalidInput("step duration must be positive".into()));
        }
        let (evolution, word_projectors) = match kernel {
            StepKernel::Exact => {
                let h = lifted_hamiltonian(spec, t, scaling)?;
                let u = h.hermitian_function(|w| (-C_I * Complex64::new(t * w, 0.0)).exp())?;
                (Some(u), build_word_projectors(spec))
            }
            StepKernel::Asymptotic => {
                if scaling == InteractionScaling::Unscaled {
                    return Err(Error::Unsupported(
                        "the first-order kernel is derived for the scaled interaction".into(),
                    ));
                }
                (None, Vec::new())
            }
        };
        Ok(Self { spec: spec.clone(), t, kernel, evolution, word_projectors })
    }

    pub fn step(&self) -> f64 {
        self.t
    }

    /// Raw outcome branches on an arbitrary (Hermitian, unit-trace) matrix.
    pub fn outcomes_raw(&self, rho: &ComplexMatrix) -> Result<Vec<RawOutcome>> {
        match self.kernel {
            StepKernel::Exact => self.outcomes_raw_exact(rho),
            StepKernel::Asymptotic => outcomes_raw_asymptotic(&self.spec, rho, self.t),
        }
    }

    fn outcomes_raw_exact(&self, rho: &ComplexMatrix) -> Result<Vec<RawOutcome>> {
        let probes = self.spec.probes();
        let omega = crate::qstate::vacuum_projector();
        let mut lifted = rho.clone();
        for _ in 0..probes {
            lifted = lifted.kron(&omega);
        }
        let u = self.evolution.as_ref().expect("exact kernel carries the evolution");
        let dressed = u.matmul(&lifted).matmul(&u.adjoint());
        let mut out = Vec::with_capacity(self.word_projectors.len());
        for (word, projector) in &self.word_projectors {
            let projected = projector.matmul(&dressed).matmul(projector);
            let reduced = partial_trace_probes(&projected, probes)?;
            let weight = reduced.trace().re;
            let state = if weight.abs() > 1e-12 {
                reduced.scale_re(1.0 / weight)
            } else {
                rho.clone()
            };
            let weight = if weight.abs() > 1e-12 { weight } else { 0.0 };
            out.push(RawOutcome { word: word.clone(), weight, state });
        }
        Ok(out)
    }

    /// Validated outcome distribution on a density matrix.
    pub fn outcomes(&self, rho: &DensityMatrix) -> Result<OutcomeDistribution> {
        let raw = self.outcomes_raw(rho.matrix())?;
        let mut outcomes = Vec::new();
        let mut kept_mass = 0.0;
        for branch in raw {
            if branch.weight < 0.0 {
                return Err(Error::StepSize(format!(
                    "outcome probability {} is negative; reduce the step",
                    branch.weight
                )));
            }
            if branch.weight < PROBABILITY_FLOOR {
                continue;
            }
            kept_mass += branch.weight;
            outcomes.push((branch.word, branch.weight, branch.state));
        }
        if kept_mass < 1e-6 {
            return Err(Error::Numerical(
                "all outcome probabilities underflowed; the step cannot be resolved".into(),
            ));
        }
        let outcomes = outcomes
            .into_iter()
            .map(|(word, p, m)| {
                let state = clip_and_normalize(&m)?;
                Ok(Outcome { word, probability: p / kept_mass, state })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OutcomeDistribution { outcomes })
    }

    /// The non-selective (averaged over outcomes) one-step map.
    pub fn nonselective(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let raw = self.outcomes_raw(rho)?;
        let mut acc = ComplexMatrix::zeros(rho.dim());
        for branch in raw {
            acc = &acc + &branch.state.scale_re(branch.weight);
        }
        Ok(acc)
    }
}

/// The full Hamiltonian on the lifted space: free part plus one excitation
/// exchange term per channel, optionally enhanced by 1/sqrt(t).
pub fn lifted_hamiltonian(
    spec: &HamiltonianSpec,
    t: f64,
    scaling: InteractionScaling,
) -> Result<ComplexMatrix> {
    let probes = spec.probes();
    let n = spec.atom_dim();
    let lifted_dim = n << probes;
    if lifted_dim > MAX_LIFTED_DIM {
        return Err(Error::Sizing { requested: lifted_dim, max: MAX_LIFTED_DIM });
    }
    let id2 = ComplexMatrix::identity(2);
    let lower = ComplexMatrix::from_real_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let upper = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let scale = match scaling {
        InteractionScaling::SqrtInverse => 1.0 / t.sqrt(),
        InteractionScaling::Unscaled => 1.0,
    };

    // Free part. For one channel: diag(A, B) in probe blocks. For several
    // channels the atom Hamiltonian acts identically on every probe sector.
    let mut h = if probes == 1 {
        let p0 = crate::qstate::vacuum_projector();
        let p1 = &id2 - &p0;
        &spec.a.kron(&p0) + &spec.b.kron(&p1)
    } else {
        let mut probe_identity = ComplexMatrix::identity(1);
        for _ in 0..probes {
            probe_identity = probe_identity.kron(&id2);
        }
        spec.a.kron(&probe_identity)
    };

    for (j, channel) in spec.channels.iter().enumerate() {
        // i * scale * (C_j on the lowering probe j) - h.c.
        let mut term_lower = channel.c.clone();
        let mut term_upper = channel.c.adjoint();
        for k in 0..probes {
            if k == j {
                term_lower = term_lower.kron(&lower);
                term_upper = term_upper.kron(&upper);
            } else {
                term_lower = term_lower.kron(&id2);
                term_upper = term_upper.kron(&id2);
            }
        }
        let interaction =
            (&term_lower.scale(C_I) - &term_upper.scale(C_I)).scale_re(scale);
        h = &h + &interaction;
    }
    Ok(h)
}

fn build_word_projectors(spec: &HamiltonianSpec) -> Vec<(Vec<u8>, ComplexMatrix)> {
    let probes = spec.probes();
    let n = spec.atom_dim();
    let pairs: Vec<_> = spec.channels.iter().map(|ch| projector_pair(ch.phi)).collect();
    let mut out = Vec::with_capacity(1 << probes);
    for word_index in 0..(1usize << probes) {
        let word: Vec<u8> = (0..probes)
            .map(|j| ((word_index >> (probes - 1 - j)) & 1) as u8)
            .collect();
        let mut projector = ComplexMatrix::identity(n);
        for (j, &bit) in word.iter().enumerate() {
            let p = if bit == 0 { &pairs[j].p0 } else { &pairs[j].p1 };
            projector = projector.kron(p);
        }
        out.push((word, projector));
    }
    out
}

/// First-order outcome branches. Covers a single channel (counting or
/// rotated) and all-counting multichannel configurations; closed-form
/// first-order expansions for mixed multichannel reads are not available,
/// so those configurations must use the exact kernel.
fn outcomes_raw_asymptotic(
    spec: &HamiltonianSpec,
    rho: &ComplexMatrix,
    t: f64,
) -> Result<Vec<RawOutcome>> {
    let probes = spec.probes();
    let all_counting = spec.channels.iter().all(|ch| ch.mode() == ChannelMode::Counting);
    if !all_counting && probes > 1 {
        return Err(Error::Unsupported(
            "first-order kernel covers a single channel or all-counting multichannel".into(),
        ));
    }

    let a = &spec.a;
    let i_comm = a.commutator(rho).scale(C_I * Complex64::new(t, 0.0));

    if all_counting {
        // No-click word plus one word per single click; multi-click words
        // carry O(t^2) probability and are dropped.
        let mut drift = &rho.clone() - &i_comm;
        let mut p0 = 1.0;
        let mut branches = Vec::new();
        for (j, channel) in spec.channels.iter().enumerate() {
            let cc = channel.c.adjoint().matmul(&channel.c);
            let intensity = cc.matmul(rho).trace().re;
            drift = &drift - &cc.anticommutator(rho).scale_re(0.5 * t);
            drift = &drift + &rho.scale_re(t * intensity);
            p0 -= t * intensity;
            if intensity.abs() > PROBABILITY_FLOOR {
                let jump = channel.c.matmul(rho).matmul(&channel.c.adjoint());
                let mut word = vec![0u8; probes];
                word[j] = 1;
                branches.push(RawOutcome {
                    word,
                    weight: t * intensity,
                    state: jump.scale_re(1.0 / jump.trace().re),
                });
            }
        }
        let mut out = vec![RawOutcome { word: vec![0u8; probes], weight: p0, state: drift }];
        out.append(&mut branches);
        Ok(out)
    } else {
        // Single rotated channel: the first-order expansions of the two
        // normalized states and probabilities.
        let channel = &spec.channels[0];
        let phi = channel.phi;
        let (s, c) = phi.sin_cos();
        let (s2, c2) = (s * s, c * c);
        let sc = s * c;
        let tan = s / c;
        let cot = c / s;

        let c_op = &channel.c;
        let c_adj = c_op.adjoint();
        let cc = c_adj.matmul(c_op);
        let big_t = cc.matmul(rho).trace().re;
        let sandwich = c_op.matmul(rho).matmul(&c_adj);
        let flux = &rho.matmul(&c_adj) + &c_op.matmul(rho);
        let omega = flux.trace().re;
        let centered = &flux - &rho.scale_re(omega);

        let common = &(&-(&a.commutator(rho).scale(C_I)) - &cc.anticommutator(rho).scale_re(0.5))
            + &rho.scale_re(big_t);
        let tilted = &(&(&sandwich - &flux.scale_re(omega)) - &rho.scale_re(big_t))
            + &rho.scale_re(omega * omega);

        let sqrt_t = t.sqrt();
        let p1 = c2 * (1.0 - t * big_t) + sqrt_t * sc * omega + t * big_t * s2;
        let p2 = s2 * (1.0 - t * big_t) - sqrt_t * sc * omega + t * big_t * c2;
        if p1 < 0.0 || p2 < 0.0 {
            return Err(Error::StepSize(format!(
                "first-order probabilities ({p1:.3e}, {p2:.3e}) left [0,1]; reduce the step"
            )));
        }

        let b1 = &common + &tilted.scale_re(tan * tan);
        let b2 = &common + &tilted.scale_re(cot * cot);
        let state1 = &(&rho.clone() + &centered.scale_re(sqrt_t * tan)) + &b1.scale_re(t);
        let state2 = &(&rho.clone() - &centered.scale_re(sqrt_t * cot)) + &b2.scale_re(t);

        Ok(vec![
            RawOutcome { word: vec![0], weight: p1, state: state1 },
            RawOutcome { word: vec![1], weight: p2, state: state2 },
        ])
    }
}

/// Exact one-step outcome distribution: lift, conjugate with the scaled
/// Hamiltonian, project on every probe word, reduce and normalize.
pub fn step_exact(
    rho: &DensityMatrix,
    spec: &HamiltonianSpec,
    t: f64,
) -> Result<OutcomeDistribution> {
    ChainKernel::new(spec, t, StepKernel::Exact, InteractionScaling::SqrtInverse)?.outcomes(rho)
}

/// First-order outcome distribution without building the lifted space.
pub fn step_asymptotic(
    rho: &DensityMatrix,
    spec: &HamiltonianSpec,
    t: f64,
) -> Result<OutcomeDistribution> {
    ChainKernel::new(spec, t, StepKernel::Asymptotic, InteractionScaling::SqrtInverse)?
        .outcomes(rho)
}

/// The transition operator U_t f(rho) = sum_j p_j f(rho_j), exact kernel.
pub fn transition_operator(
    f: impl Fn(&DensityMatrix) -> f64,
    rho: &DensityMatrix,
    spec: &HamiltonianSpec,
    t: f64,
) -> Result<f64> {
    Ok(step_exact(rho, spec, t)?.expectation(f))
}

/// Time-stamped record of one simulated measurement trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Outcome words; entry k leads from states[k] to states[k+1].
    pub outcomes: Vec<Vec<u8>>,
    pub seed: u64,
}

impl TrajectoryRecord {
    /// State in force at clock time `t` (the state after the last
    /// measurement not later than `t`).
    pub fn state_at(&self, t: f64) -> &DensityMatrix {
        let idx = self.times.partition_point(|&s| s <= t);
        &self.states[idx.saturating_sub(1)]
    }

    pub fn steps(&self) -> usize {
        self.outcomes.len()
    }

    /// CSV with columns: step, time, outcome_word, then flattened re/im
    /// state entries (row major).
    pub fn to_csv(&self) -> String {
        let dim = self.states[0].dim();
        let mut header = String::from("step,time,outcome_word");
        for i in 0..dim {
            for j in 0..dim {
                header.push_str(&format!(",re_{i}_{j},im_{i}_{j}"));
            }
        }
        let mut out = header;
        out.push('\n');
        for (k, (time, state)) in self.times.iter().zip(&self.states).enumerate() {
            let word = if k == 0 {
                String::new()
            } else {
                self.outcomes[k - 1].iter().map(|b| b.to_string()).collect()
            };
            out.push_str(&format!("{k},{time}"));
            out.push(',');
            out.push_str(&word);
            for i in 0..dim {
                for j in 0..dim {
                    let e = state.matrix()[(i, j)];
                    out.push_str(&format!(",{},{}", e.re, e.im));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let states: Vec<serde_json::Value> = self
            .states
            .iter()
            .map(|s| {
                let dim = s.dim();
                let re: Vec<Vec<f64>> = (0..dim)
                    .map(|i| (0..dim).map(|j| s.matrix()[(i, j)].re).collect())
                    .collect();
                let im: Vec<Vec<f64>> = (0..dim)
                    .map(|i| (0..dim).map(|j| s.matrix()[(i, j)].im).collect())
                    .collect();
                serde_json::json!({ "re": re, "im": im })
            })
            .collect();
        let outcomes: Vec<String> = self
            .outcomes
            .iter()
            .map(|w| w.iter().map(|b| b.to_string()).collect())
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "seed": self.seed,
            "times": self.times,
            "outcomes": outcomes,
            "states": states,
        }))?)
    }
}

/// Trajectory sampling controls.
#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub horizon: f64,
    pub seed: u64,
    pub kernel: StepKernel,
    /// Kernel step; defaults to the waiting law's scale parameter. The
    /// fractional-limit experiments set it independently of the waiting
    /// scale to match the standard subordinator normalization.
    pub kernel_step: Option<f64>,
}

impl TrajectoryConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self { horizon, seed, kernel: StepKernel::Exact, kernel_step: None }
    }

    pub fn with_kernel(mut self, kernel: StepKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_kernel_step(mut self, h: f64) -> Self {
        self.kernel_step = Some(h);
        self
    }
}

/// Simulate one trajectory: waiting times advance the clock, the kernel step
/// stays fixed at the chain's scale parameter.
pub fn sample_trajectory(
    rho0: &DensityMatrix,
    spec: &HamiltonianSpec,
    waiting: &WaitingLaw,
    config: &TrajectoryConfig,
) -> Result<TrajectoryRecord> {
    if config.horizon <= 0.0 {
        return Err(Error::InvalidInput("trajectory horizon must be positive".into()));
    }
    waiting.validate()?;
    let h = config.kernel_step.unwrap_or_else(|| waiting.scale_param());
    let kernel = ChainKernel::new(spec, h, config.kernel, InteractionScaling::SqrtInverse)?;
    let mut rng = StdRng::seed_from_u64(config.seed);

    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    let mut outcomes = Vec::new();
    let mut clock = 0.0;
    // Tolerate one representation ulp at the horizon so that "exactly n
    // steps" configurations are not cut short by accumulated rounding.
    let cutoff = config.horizon * (1.0 + 1e-12);
    loop {
        let wait = sample_waiting(waiting, &mut rng);
        clock += wait;
        if clock > cutoff {
            break;
        }
        let dist = kernel.outcomes(states.last().unwrap())?;
        let u: f64 = rng.random();
        let picked = dist.sample(u);
        times.push(clock);
        states.push(picked.state.clone());
        outcomes.push(picked.word.clone());
    }
    Ok(TrajectoryRecord { times, states, outcomes, seed: config.seed })
}

/// (U_h)^n f for an affine observable f(rho) = offset + Re tr(B rho),
/// computed by iterating the non-selective map. Works for any channel
/// configuration and either interaction scaling.
pub fn iterated_affine_expectation(
    observable: &ComplexMatrix,
    offset: f64,
    rho0: &DensityMatrix,
    spec: &HamiltonianSpec,
    h: f64,
    n_steps: usize,
    scaling: InteractionScaling,
) -> Result<f64> {
    let kernel = ChainKernel::new(spec, h, StepKernel::Exact, scaling)?;
    let mut state = rho0.matrix().clone();
    for _ in 0..n_steps {
        state = kernel.nonselective(&state)?;
    }
    Ok(offset + observable.matmul(&state).trace().re)
}

/// Iterated transition expectations on a single counting channel whose jump
/// target is state independent (rank-one coupling): the chain collapses onto
/// the no-jump orbit plus a fixed post-jump orbit, and the expectations
/// solve a discrete renewal recursion in O(n^2) total rather than by
/// expanding the exponential outcome tree. The post-jump table is shared by
/// every start state, so evaluating many initial states costs O(n) each.
pub struct RenewalSolver<'a> {
    f: &'a dyn Fn(&DensityMatrix) -> f64,
    chain: ChainKernel,
    n_steps: usize,
    /// None when the coupling vanishes (pure drift chain).
    post_jump: Option<PostJumpTable>,
}

struct PostJumpTable {
    /// W[m] = E[f after m steps | start at the jump target].
    w: Vec<f64>,
}

impl<'a> RenewalSolver<'a> {
    pub fn new(
        f: &'a dyn Fn(&DensityMatrix) -> f64,
        spec: &HamiltonianSpec,
        h: f64,
        n_steps: usize,
        kernel: StepKernel,
    ) -> Result<Self> {
        if spec.channels.len() != 1 || spec.channels[0].mode() != ChannelMode::Counting {
            return Err(Error::Unsupported(
                "iterated expectations need a single counting channel".into(),
            ));
        }
        let c = &spec.channels[0].c;
        let gram = c.adjoint().matmul(c);
        let (eigs, _) = gram.eigh()?;
        let top = eigs[eigs.len() - 1];
        let chain = ChainKernel::new(spec, h, kernel, InteractionScaling::SqrtInverse)?;
        if top <= 0.0 {
            return Ok(Self { f, chain, n_steps, post_jump: None });
        }
        if eigs[eigs.len() - 2].abs() > 1e-10 * top {
            return Err(Error::Unsupported(
                "iterated expectations need a rank-one coupling (state-independent jump target)"
                    .into(),
            ));
        }
        // Jump target |u><u| from C = u v*: C C* is proportional to it.
        let target = clip_and_normalize(&c.matmul(&c.adjoint()))?;
        let mut solver = Self { f, chain, n_steps, post_jump: None };
        let (qb, fb, sb) = solver.orbit(&target)?;
        let mut w = vec![0.0; n_steps + 1];
        w[0] = fb[0];
        for m in 1..=n_steps {
            let mut acc = sb[m] * fb[m];
            for k in 0..m {
                acc += sb[k] * qb[k] * w[m - 1 - k];
            }
            w[m] = acc;
        }
        solver.post_jump = Some(PostJumpTable { w });
        Ok(solver)
    }

    /// Orbit data along the no-jump branch: jump probabilities, f values,
    /// survival products.
    fn orbit(&self, from: &DensityMatrix) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n_steps = self.n_steps;
        let mut jump_prob = Vec::with_capacity(n_steps);
        let mut f_vals = Vec::with_capacity(n_steps + 1);
        let mut survival = Vec::with_capacity(n_steps + 1);
        survival.push(1.0);
        let mut state = from.clone();
        for k in 0..n_steps {
            f_vals.push((self.f)(&state));
            let dist = self.chain.outcomes(&state)?;
            let mut q = 0.0;
            let mut next = state.clone();
            for o in &dist.outcomes {
                if o.word[0] == 1 {
                    q = o.probability;
                } else {
                    next = o.state.clone();
                }
            }
            jump_prob.push(q);
            survival.push(survival[k] * (1.0 - q));
            state = next;
        }
        f_vals.push((self.f)(&state));
        Ok((jump_prob, f_vals, survival))
    }

    /// E[f after m steps | start rho0] for m = 0..n.
    pub fn expectations(&self, rho0: &DensityMatrix) -> Result<Vec<f64>> {
        let (qa, fa, sa) = self.orbit(rho0)?;
        match &self.post_jump {
            None => Ok(fa),
            Some(table) => {
                let mut out = Vec::with_capacity(self.n_steps + 1);
                for n in 0..=self.n_steps {
                    let mut acc = sa[n] * fa[n];
                    for k in 0..n {
                        acc += sa[k] * qa[k] * table.w[n - 1 - k];
                    }
                    out.push(acc);
                }
                Ok(out)
            }
        }
    }

    /// E[f after the full n steps | start rho0]; O(n) given the shared
    /// post-jump table.
    pub fn expectation(&self, rho0: &DensityMatrix) -> Result<f64> {
        let (qa, fa, sa) = self.orbit(rho0)?;
        match &self.post_jump {
            None => Ok(fa[self.n_steps]),
            Some(table) => {
                let n = self.n_steps;
                let mut acc = sa[n] * fa[n];
                for k in 0..n {
                    acc += sa[k] * qa[k] * table.w[n - 1 - k];
                }
                Ok(acc)
            }
        }
    }
}

/// E[f after m steps] for every m = 0..n; see [`RenewalSolver`].
pub fn renewal_expectations(
    f: &dyn Fn(&DensityMatrix) -> f64,
    rho0: &DensityMatrix,
    spec: &HamiltonianSpec,
    h: f64,
    n_steps: usize,
    kernel: StepKernel,
) -> Result<Vec<f64>> {
    RenewalSolver::new(f, spec, h, n_steps, kernel)?.expectations(rho0)
}

/// (U_h)^n f via [`RenewalSolver`].
pub fn iterated_chain_expectation(
    f: &dyn Fn(&DensityMatrix) -> f64,
    rho0: &DensityMatrix,
    spec: &HamiltonianSpec,
    h: f64,
    n_steps: usize,
    kernel: StepKernel,
) -> Result<f64> {
    RenewalSolver::new(f, spec, h, n_steps, kernel)?.expectation(rho0)
}

/// The continuous-time chain semigroup with exponential waiting of mean
/// `lambda`: a Poisson mixture over the iterated kernel.
pub fn continuous_chain_expectation(
    f: &dyn Fn(&DensityMatrix) -> f64,
    rho0: &DensityMatrix,
    spec: &HamiltonianSpec,
    lambda: f64,
    s: f64,
    kernel: StepKernel,
) -> Result<f64> {
    if lambda <= 0.0 || s <= 0.0 {
        return Err(Error::InvalidInput("lambda and s must be positive".into()));
    }
    let mu = s / lambda;
    let k_max = (mu + 12.0 * mu.sqrt() + 25.0).ceil() as usize;
    let values = renewal_expectations(f, rho0, spec, lambda, k_max, kernel)?;

    // Poisson weights built outward from the mode; starting the recursion at
    // exp(-mu) underflows already for mu around 750.
    let mode = (mu.floor() as usize).min(k_max);
    let mut weights = vec![0.0; k_max + 1];
    weights[mode] = 1.0;
    for k in mode + 1..=k_max {
        weights[k] = weights[k - 1] * mu / k as f64;
    }
    for k in (0..mode).rev() {
        weights[k] = weights[k + 1] * (k + 1) as f64 / mu;
    }
    let total: f64 = weights.iter().sum();
    let acc: f64 = weights.iter().zip(&values).map(|(w, v)| w * v).sum();
    // Normalizing also absorbs the truncated Poisson tail.
    Ok(acc / total)
}
