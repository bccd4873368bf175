//! Trajectory integrators for the filtering SDEs: counting (jump),
//! diffusive, mixed multichannel, pure-state, and the linear non-normalized
//! equation with its measure-change link back to the nonlinear one.
//!
//! Jumps are realized by thinning against the instantaneous intensity
//! tr(C*C rho); weak order 1 (Euler-Maruyama) throughout. Projection
//! (symmetrize, clip, renormalize) is applied after every step by default
//! and can be switched off to verify that positivity is a property of the
//! dynamics rather than of the projection.

use crate::chain::{ChannelMode, ChannelSpec};
use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::linalg::{C_I, ComplexMatrix};
use crate::qstate::{clip_and_normalize, DensityMatrix, PureState};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Integrator scheme for the drift part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Fourth-order drift, Euler diffusion; used by the positivity study.
    DriftRk4DiffusionEuler,
}

/// Integration controls.
#[derive(Debug, Clone)]
pub struct SdeConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub projection: bool,
}

impl SdeConfig {
    pub fn new(dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::InvalidInput("step size must be positive".into()));
        }
        Ok(Self { dt, scheme: Scheme::EulerMaruyama, projection: true })
    }

    pub fn without_projection(mut self) -> Self {
        self.projection = false;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// Noise for one mixed Euler step: a uniform per counting channel (thinning)
/// and a Gaussian increment per diffusive channel.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub uniforms: Vec<f64>,
    pub gaussians: Vec<f64>,
}

impl StepNoise {
    pub fn draw(spec: &GeneratorSpec, dt: f64, rng: &mut StdRng) -> Self {
        let normal = Normal::new(0.0, dt.sqrt()).expect("positive dt");
        let mut uniforms = Vec::new();
        let mut gaussians = Vec::new();
        for ch in &spec.channels {
            match ch.mode() {
                ChannelMode::Counting => uniforms.push(rng.random::<f64>()),
                ChannelMode::Diffusive => gaussians.push(normal.sample(rng)),
            }
        }
        Self { uniforms, gaussians }
    }
}

/// Counting drift: -i[A,rho] - {C*C,rho}/2 + tr(C*C rho) rho.
pub fn counting_drift(rho: &ComplexMatrix, a: &ComplexMatrix, c: &ComplexMatrix) -> ComplexMatrix {
    let cc = c.adjoint().matmul(c);
    let intensity = cc.matmul(rho).trace().re;
    let mut out = -&a.commutator(rho).scale(C_I);
    out = &out - &cc.anticommutator(rho).scale_re(0.5);
    &out + &rho.scale_re(intensity)
}

/// Diffusive drift: -i[A,rho] - {C*C,rho}/2 + C rho C*.
pub fn diffusive_drift(rho: &ComplexMatrix, a: &ComplexMatrix, c: &ComplexMatrix) -> ComplexMatrix {
    let cc = c.adjoint().matmul(c);
    let mut out = -&a.commutator(rho).scale(C_I);
    out = &out - &cc.anticommutator(rho).scale_re(0.5);
    &out + &c.matmul(rho).matmul(&c.adjoint())
}

/// Diffusion coefficient: rho C* + C rho - tr(rho C* + C rho) rho.
pub fn diffusion_coefficient(rho: &ComplexMatrix, c: &ComplexMatrix) -> ComplexMatrix {
    let flux = &rho.matmul(&c.adjoint()) + &c.matmul(rho);
    let omega = flux.trace().re;
    &flux - &rho.scale_re(omega)
}

/// Numerical projection back onto the state space: symmetrize, clip negative
/// eigenvalues at zero, renormalize the trace. A no-op on valid states.
pub fn project_to_state(m: &ComplexMatrix) -> Result<DensityMatrix> {
    clip_and_normalize(m)
}

/// Raw Euler increment of the mixed equation, jumps decided by thinning.
/// Returns the post-step matrix without projection.
pub fn mixed_step_raw(
    state: &ComplexMatrix,
    spec: &GeneratorSpec,
    dt: f64,
    noise: &StepNoise,
) -> Result<ComplexMatrix> {
    let mut drift = -&spec.a.commutator(state).scale(C_I);
    let mut jump_part = ComplexMatrix::zeros(state.dim());
    let mut diffusion_part = ComplexMatrix::zeros(state.dim());
    let mut uniform_iter = noise.uniforms.iter();
    let mut gaussian_iter = noise.gaussians.iter();
    for ch in &spec.channels {
        let c = &ch.c;
        let c_adj = c.adjoint();
        let cc = c_adj.matmul(c);
        match ch.mode() {
            ChannelMode::Counting => {
                let intensity = cc.matmul(state).trace().re;
                drift = &drift - &cc.anticommutator(state).scale_re(0.5);
                drift = &drift + &state.scale_re(intensity);
                let p_jump = dt * intensity;
                if p_jump >= 1.0 {
                    return Err(Error::StepSize(format!(
                        "jump probability {p_jump:.3} per step reached 1; reduce dt"
                    )));
                }
                let u = uniform_iter
                    .next()
                    .ok_or_else(|| Error::InvalidInput("missing thinning uniform".into()))?;
                if *u < p_jump && intensity > 1e-14 {
                    let target = c.matmul(state).matmul(&c_adj);
                    let target = target.scale_re(1.0 / target.trace().re);
                    jump_part = &jump_part + &(&target - state);
                }
            }
            ChannelMode::Diffusive => {
                drift = &drift - &cc.anticommutator(state).scale_re(0.5);
                drift = &drift + &c.matmul(state).matmul(&c_adj);
                let dw = gaussian_iter
                    .next()
                    .ok_or_else(|| Error::InvalidInput("missing Gaussian increment".into()))?;
                diffusion_part =
                    &diffusion_part + &diffusion_coefficient(state, c).scale_re(*dw);
            }
        }
    }
    Ok(&(&(state + &drift.scale_re(dt)) + &diffusion_part) + &jump_part)
}

/// One step of the counting (jump) equation: with probability dt tr(C*C rho)
/// jump to C rho C*/tr, otherwise Euler along the counting drift.
pub fn step_counting(
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    rng: &mut StdRng,
) -> Result<DensityMatrix> {
    let spec = GeneratorSpec::new(a.clone(), vec![ChannelSpec::counting(c.clone())])?;
    let noise = StepNoise { uniforms: vec![rng.random::<f64>()], gaussians: Vec::new() };
    let raw = mixed_step_raw(rho.matrix(), &spec, dt, &noise)?;
    project_to_state(&raw)
}

/// One Euler-Maruyama step of the diffusive equation with the given Wiener
/// increment.
pub fn step_diffusive(
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dw: f64,
) -> Result<DensityMatrix> {
    let raw = step_diffusive_raw(rho.matrix(), a, c, dt, dw);
    project_to_state(&raw)
}

/// Euler step of the diffusive equation without projection.
pub fn step_diffusive_raw(
    state: &ComplexMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dw: f64,
) -> ComplexMatrix {
    let drift = diffusive_drift(state, a, c);
    let diffusion = diffusion_coefficient(state, c);
    &(state + &drift.scale_re(dt)) + &diffusion.scale_re(dw)
}

/// Milstein step of the diffusive equation (adds the second-order noise
/// term (grad_B B)(dW^2 - dt)/2 that Euler drops). Used where two
/// discretizations driven by the same path must agree to O(dt), as in the
/// linear/nonlinear equivalence study; Euler's missing term would dominate
/// that comparison at order sqrt(dt).
pub fn step_diffusive_milstein_raw(
    state: &ComplexMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dw: f64,
) -> ComplexMatrix {
    let euler = step_diffusive_raw(state, a, c, dt, dw);
    let b = diffusion_coefficient(state, c);
    let flux_b = &b.matmul(&c.adjoint()) + &c.matmul(&b);
    let omega = (&state.matmul(&c.adjoint()) + &c.matmul(state)).trace().re;
    let grad = &(&flux_b - &state.scale_re(flux_b.trace().re)) - &b.scale_re(omega);
    &euler + &grad.scale_re(0.5 * (dw * dw - dt))
}

/// Milstein step of the linear equation, matching
/// [`step_diffusive_milstein_raw`] at second order.
pub fn step_linear_milstein(
    xi: &ComplexMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dy: f64,
) -> Result<LinearStep> {
    let trace = xi.trace().re;
    if trace <= 0.0 {
        return Err(Error::Numerical(
            "non-normalized state lost positive trace; path discarded".into(),
        ));
    }
    let drift = diffusive_drift(xi, a, c);
    let flux = &xi.matmul(&c.adjoint()) + &c.matmul(xi);
    let implied_dw = dy - flux.trace().re / trace * dt;
    // Second iterate of the linear noise map: xi C*^2 + 2 C xi C* + C^2 xi.
    let second = &(&xi.matmul(&c.adjoint().matmul(&c.adjoint()))
        + &c.matmul(xi).matmul(&c.adjoint()).scale_re(2.0))
        + &c.matmul(c).matmul(xi);
    let next = &(&(xi + &drift.scale_re(dt)) + &flux.scale_re(dy))
        + &second.scale_re(0.5 * (dy * dy - dt));
    let next_trace = next.trace().re;
    if next_trace <= 0.0 {
        return Err(Error::Numerical(
            "non-normalized state lost positive trace; path discarded".into(),
        ));
    }
    let rho = clip_and_normalize(&next)?;
    Ok(LinearStep { xi: next, rho, implied_dw })
}

/// One step of the mixed multichannel equation with projection.
pub fn step_mixed(
    rho: &DensityMatrix,
    spec: &GeneratorSpec,
    dt: f64,
    noise: &StepNoise,
) -> Result<DensityMatrix> {
    let raw = mixed_step_raw(rho.matrix(), spec, dt, noise)?;
    project_to_state(&raw)
}

/// One Euler-Maruyama step of the pure-state filtering equation; the state
/// is renormalized after the step. Hermitian couplings reduce to the
/// simplified form automatically.
pub fn step_pure(
    psi: &PureState,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dw: f64,
) -> Result<PureState> {
    let alpha = psi.expectation(&(&c.clone() + &c.adjoint())).re * 0.5;
    let n = c.dim();
    let identity = ComplexMatrix::identity(n);
    // Drift operator: -iA - C*C/2 + alpha C - alpha^2/2.
    let f_op = &(&(-&a.scale(C_I)) - &c.adjoint().matmul(c).scale_re(0.5))
        + &(&c.scale_re(alpha) - &identity.scale_re(0.5 * alpha * alpha));
    // Diffusion operator: C - alpha.
    let g_op = &c.clone() - &identity.scale_re(alpha);
    let amps = psi.amplitudes();
    let drift = f_op.apply(amps);
    let diffusion = g_op.apply(amps);
    let next: Vec<Complex64> = amps
        .iter()
        .zip(drift.iter().zip(&diffusion))
        .map(|(&x, (&d, &g))| x + d * Complex64::new(dt, 0.0) + g * Complex64::new(dw, 0.0))
        .collect();
    PureState::normalized(next)
}

/// Result of one linear (non-normalized) step.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub xi: ComplexMatrix,
    pub rho: DensityMatrix,
    /// The innovation increment dW = dY - tr(xi C* + C xi)/tr(xi) dt that
    /// drives the pathwise-equivalent nonlinear equation.
    pub implied_dw: f64,
}

/// One Euler step of the linear filtering equation for non-normalized
/// states, with the normalized state and the measure-change increment.
pub fn step_linear(
    xi: &ComplexMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    dy: f64,
) -> Result<LinearStep> {
    let trace = xi.trace().re;
    if trace <= 0.0 {
        return Err(Error::Numerical(
            "non-normalized state lost positive trace; path discarded".into(),
        ));
    }
    let drift = diffusive_drift(xi, a, c);
    let flux = &xi.matmul(&c.adjoint()) + &c.matmul(xi);
    let implied_dw = dy - flux.trace().re / trace * dt;
    let next = &(xi + &drift.scale_re(dt)) + &flux.scale_re(dy);
    let next_trace = next.trace().re;
    if next_trace <= 0.0 {
        return Err(Error::Numerical(
            "non-normalized state lost positive trace; path discarded".into(),
        ));
    }
    let rho = clip_and_normalize(&next)?;
    Ok(LinearStep { xi: next, rho, implied_dw })
}

/// Drift-only integration of the counting equation with RK4 and no
/// projection, tracking the minimum eigenvalue along the way.
pub fn integrate_counting_drift_rk4(
    rho0: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    dt: f64,
    horizon: f64,
) -> Result<(ComplexMatrix, f64)> {
    let steps = (horizon / dt).round().max(1.0) as usize;
    let mut state = rho0.matrix().clone();
    let mut min_eig = state.symmetrize().min_eigenvalue()?;
    for _ in 0..steps {
        let k1 = counting_drift(&state, a, c);
        let k2 = counting_drift(&(&state + &k1.scale_re(dt / 2.0)), a, c);
        let k3 = counting_drift(&(&state + &k2.scale_re(dt / 2.0)), a, c);
        let k4 = counting_drift(&(&state + &k3.scale_re(dt)), a, c);
        let incr = &(&k1 + &k2.scale_re(2.0)) + &(&k3.scale_re(2.0) + &k4);
        state = &state + &incr.scale_re(dt / 6.0);
        min_eig = min_eig.min(state.symmetrize().min_eigenvalue()?);
    }
    Ok((state, min_eig))
}

/// Ensemble summary: per checkpoint and observable, the sample mean and
/// standard error over the paths.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// means[time_index][observable_index], likewise for standard errors.
    pub means: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
    pub n_paths: usize,
}

impl EnsembleSummary {
    /// CSV with columns (t, observable, mean, stderr, n_paths).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,observable,mean,stderr,n_paths\n");
        for (ti, t) in self.times.iter().enumerate() {
            for (oi, name) in self.observable_names.iter().enumerate() {
                out.push_str(&format!(
                    "{t},{name},{},{},{}\n",
                    self.means[ti][oi], self.standard_errors[ti][oi], self.n_paths
                ));
            }
        }
        out
    }
}

/// Run a parallel ensemble of mixed-equation paths and collect means and
/// standard errors of the observables at the checkpoints. Deterministic for
/// a fixed base seed regardless of thread count: path i uses seed
/// base_seed + i and the reduction runs in path order.
pub fn ensemble_mean(
    rho0: &DensityMatrix,
    spec: &GeneratorSpec,
    config: &SdeConfig,
    checkpoints: &[f64],
    observables: &[(String, ComplexMatrix)],
    n_paths: usize,
    base_seed: u64,
) -> Result<EnsembleSummary> {
    if checkpoints.is_empty() || n_paths < 2 {
        return Err(Error::InvalidInput("need checkpoints and at least two paths".into()));
    }
    let dt = config.dt;
    let horizon = *checkpoints.last().unwrap();
    let n_steps = (horizon / dt).ceil() as usize;
    // Map checkpoints to step indices (state after k steps is at time k dt).
    let checkpoint_steps: Vec<usize> =
        checkpoints.iter().map(|&t| ((t / dt).round() as usize).min(n_steps)).collect();

    let per_path: Result<Vec<Vec<Vec<f64>>>> = (0..n_paths)
        .into_par_iter()
        .map(|path_index| {
            let mut rng = StdRng::seed_from_u64(base_seed.wrapping_add(path_index as u64));
            let mut state = rho0.matrix().clone();
            let mut recorded = Vec::with_capacity(checkpoints.len());
            let mut next_checkpoint = 0usize;
            for step in 0..=n_steps {
                while next_checkpoint < checkpoint_steps.len()
                    && checkpoint_steps[next_checkpoint] == step
                {
                    recorded.push(
                        observables
                            .iter()
                            .map(|(_, b)| b.matmul(&state).trace().re)
                            .collect::<Vec<f64>>(),
                    );
                    next_checkpoint += 1;
                }
                if step == n_steps {
                    break;
                }
                let noise = StepNoise::draw(spec, dt, &mut rng);
                let raw = mixed_step_raw(&state, spec, dt, &noise)?;
                state = if config.projection {
                    project_to_state(&raw)?.into_matrix()
                } else {
                    // Keep the raw chain anchored to the trace-one slice
                    // (exact for the scheme anyway); eigenvalue clipping is
                    // what the projection flag adds and what would bias the
                    // ensemble mean.
                    raw.symmetrize().scale_re(1.0 / raw.trace().re)
                };
            }
            Ok(recorded)
        })
        .collect();
    let per_path = per_path?;

    let mut means = vec![vec![0.0; observables.len()]; checkpoints.len()];
    let mut sq = vec![vec![0.0; observables.len()]; checkpoints.len()];
    for path in &per_path {
        for (ti, values) in path.iter().enumerate() {
            for (oi, v) in values.iter().enumerate() {
                means[ti][oi] += v;
                sq[ti][oi] += v * v;
            }
        }
    }
    let n = n_paths as f64;
    let mut standard_errors = vec![vec![0.0; observables.len()]; checkpoints.len()];
    for ti in 0..checkpoints.len() {
        for oi in 0..observables.len() {
            means[ti][oi] /= n;
            let var = (sq[ti][oi] / n - means[ti][oi] * means[ti][oi]).max(0.0) * n / (n - 1.0);
            standard_errors[ti][oi] = (var / n).sqrt();
        }
    }
    Ok(EnsembleSummary {
        times: checkpoints.to_vec(),
        observable_names: observables.iter().map(|(n, _)| n.clone()).collect(),
        means,
        standard_errors,
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli;
    use crate::qstate::trace_distance;
    use crate::stats::{ks_two_sample_p_value, ks_two_sample_statistic, mean_se};

    fn qubit_spec_counting() -> GeneratorSpec {
        GeneratorSpec::new(
            pauli::sigma_x().scale_re(0.5),
            vec![ChannelSpec::counting(pauli::lower())],
        )
        .unwrap()
    }

    #[test]
    fn counting_step_without_coupling_is_unitary_euler() {
        let a = pauli::sigma_x().scale_re(0.5);
        let c = ComplexMatrix::zeros(2);
        let rho = DensityMatrix::basis_state(2, 0);
        let mut rng = StdRng::seed_from_u64(1);
        let dt = 1e-4;
        let next = step_counting(&rho, &a, &c, dt, &mut rng).unwrap();
        let expected = rho.matrix() - &a.commutator(rho.matrix()).scale(C_I).scale_re(dt);
        assert!(next.matrix().dist_max(&expected) < 1e-8);
    }

    #[test]
    fn counting_jump_lands_on_target() {
        // From |0><0| with C = |1><0| a jump lands exactly at |1><1|.
        let a = ComplexMatrix::zeros(2);
        let c = pauli::lower();
        let rho = DensityMatrix::basis_state(2, 0);
        // Large dt so the jump happens quickly with thinning.
        let dt = 0.5;
        let mut rng = StdRng::seed_from_u64(2);
        let mut jumped = false;
        let mut state = rho;
        for _ in 0..64 {
            state = step_counting(&state, &a, &c, dt, &mut rng).unwrap();
            if state.expectation(&pauli::sigma_z()) < -0.9 {
                jumped = true;
                break;
            }
        }
        assert!(jumped, "no jump observed");
        let one = DensityMatrix::basis_state(2, 1);
        assert!(trace_distance(&state, &one) < 1e-9);
    }

    #[test]
    fn counting_step_size_guard() {
        let a = ComplexMatrix::zeros(2);
        let c = pauli::lower().scale_re(3.0);
        let rho = DensityMatrix::basis_state(2, 0);
        let mut rng = StdRng::seed_from_u64(3);
        assert!(matches!(
            step_counting(&rho, &a, &c, 0.2, &mut rng),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn diffusive_raw_increment_is_traceless() {
        // tr(drift) = 0 and tr(diffusion coefficient) = 0 on states.
        let mut rng = StdRng::seed_from_u64(4);
        let a = pauli::sigma_x().scale_re(0.4);
        let c = pauli::lower();
        for _ in 0..20 {
            let g = {
                let mut m = ComplexMatrix::zeros(2);
                for i in 0..2 {
                    for j in 0..2 {
                        m[(i, j)] = Complex64::new(
                            rng.random::<f64>() - 0.5,
                            rng.random::<f64>() - 0.5,
                        );
                    }
                }
                let p = m.matmul(&m.adjoint());
                p.scale_re(1.0 / p.trace().re)
            };
            assert!(diffusive_drift(&g, &a, &c).trace().norm() < 1e-12);
            assert!(counting_drift(&g, &a, &c).trace().norm() < 1e-12);
            assert!(diffusion_coefficient(&g, &c).trace().norm() < 1e-12);
        }
    }

    #[test]
    fn project_to_state_examples() {
        // Valid state unchanged.
        let rho = DensityMatrix::basis_state(2, 0);
        let out = project_to_state(rho.matrix()).unwrap();
        assert!(out.matrix().dist_max(rho.matrix()) < 1e-14);
        // diag(1.05, -0.05) -> diag(1, 0).
        let m = ComplexMatrix::from_real_rows(&[vec![1.05, 0.0], vec![0.0, -0.05]]).unwrap();
        let out = project_to_state(&m).unwrap();
        assert!((out.matrix()[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(out.matrix()[(1, 1)].norm() < 1e-12);
        // Perturbation of size eps moves the output by O(eps).
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10 {
            let eps = 1e-6;
            let mut noise = ComplexMatrix::zeros(2);
            for i in 0..2 {
                for j in 0..2 {
                    noise[(i, j)] =
                        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
            let noise = noise.symmetrize().scale_re(eps);
            let perturbed = &rho.matrix().clone() + &noise;
            let out = project_to_state(&perturbed).unwrap();
            assert!(trace_distance(&out, &rho) < 2.0 * eps * 4.0);
        }
        // Total clipping failure.
        let m =
            ComplexMatrix::from_real_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(project_to_state(&m), Err(Error::DegenerateState)));
    }

    #[test]
    fn counting_ensemble_matches_master_equation() {
        let spec = qubit_spec_counting();
        let rho = DensityMatrix::basis_state(2, 0);
        let config = SdeConfig::new(1e-3).unwrap();
        let checkpoints = [0.25, 0.5, 0.75, 1.0];
        let observables = vec![("sz".to_string(), pauli::sigma_z())];
        let summary = ensemble_mean(
            &rho, &spec, &config, &checkpoints, &observables, 4000, 1234,
        )
        .unwrap();
        let reference =
            crate::lindblad::evolve_state(&rho, &spec.a, &spec.channels, &checkpoints, 1e-4)
                .unwrap();
        for (ti, state) in reference.iter().enumerate() {
            let exact = state.expectation(&pauli::sigma_z());
            let (mean, se) = (summary.means[ti][0], summary.standard_errors[ti][0]);
            assert!(
                (mean - exact).abs() < 3.0 * se + 5e-3,
                "t={}: mean {mean}, exact {exact}, se {se}",
                checkpoints[ti]
            );
        }
    }

    #[test]
    fn diffusive_ensemble_matches_master_equation() {
        let spec = GeneratorSpec::new(
            pauli::sigma_x().scale_re(0.5),
            vec![ChannelSpec::rotated(pauli::lower(), std::f64::consts::FRAC_PI_4)],
        )
        .unwrap();
        let rho = DensityMatrix::basis_state(2, 0);
        let config = SdeConfig::new(1e-3).unwrap().without_projection();
        let checkpoints = [0.5, 1.0];
        let observables = vec![("sz".to_string(), pauli::sigma_z())];
        let summary =
            ensemble_mean(&rho, &spec, &config, &checkpoints, &observables, 4000, 77).unwrap();
        let reference =
            crate::lindblad::evolve_state(&rho, &spec.a, &spec.channels, &checkpoints, 1e-4)
                .unwrap();
        for (ti, state) in reference.iter().enumerate() {
            let exact = state.expectation(&pauli::sigma_z());
            let (mean, se) = (summary.means[ti][0], summary.standard_errors[ti][0]);
            assert!(
                (mean - exact).abs() < 3.0 * se + 5e-3,
                "t={}: mean {mean}, exact {exact}",
                checkpoints[ti]
            );
        }
    }

    #[test]
    fn ensemble_is_thread_count_invariant() {
        let spec = qubit_spec_counting();
        let rho = DensityMatrix::basis_state(2, 0);
        let config = SdeConfig::new(1e-2).unwrap();
        let observables = vec![("sz".to_string(), pauli::sigma_z())];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                ensemble_mean(&rho, &spec, &config, &[0.5], &observables, 200, 9).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.means[0][0].to_bits(), b.means[0][0].to_bits());
    }

    #[test]
    fn mixed_single_counting_channel_matches_step_counting_in_distribution() {
        // KS test between tr(sigma_z rho_t) samples from step_mixed with one
        // counting channel and from the dedicated counting integrator.
        let spec = qubit_spec_counting();
        let rho = DensityMatrix::basis_state(2, 0);
        let dt = 1e-2;
        let n_steps = 50;
        let n_paths = 4000;
        let mut from_mixed = Vec::with_capacity(n_paths);
        let mut from_counting = Vec::with_capacity(n_paths);
        for path in 0..n_paths {
            let mut rng = StdRng::seed_from_u64(10_000 + path as u64);
            let mut state = rho.clone();
            for _ in 0..n_steps {
                let noise = StepNoise::draw(&spec, dt, &mut rng);
                state = step_mixed(&state, &spec, dt, &noise).unwrap();
            }
            from_mixed.push(state.expectation(&pauli::sigma_z()));

            let mut rng = StdRng::seed_from_u64(50_000 + path as u64);
            let mut state = rho.clone();
            for _ in 0..n_steps {
                state =
                    step_counting(&state, &spec.a, &spec.channels[0].c, dt, &mut rng).unwrap();
            }
            from_counting.push(state.expectation(&pauli::sigma_z()));
        }
        let d = ks_two_sample_statistic(&from_mixed, &from_counting);
        let p = ks_two_sample_p_value(d, n_paths, n_paths);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn mixed_without_channels_is_unitary_flow() {
        let spec = GeneratorSpec::new(
            pauli::sigma_x().scale_re(0.5),
            vec![ChannelSpec::counting(ComplexMatrix::zeros(2))],
        )
        .unwrap();
        let rho = DensityMatrix::basis_state(2, 0);
        let dt = 1e-4;
        let mut state = rho.clone();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let noise = StepNoise::draw(&spec, dt, &mut rng);
            state = step_mixed(&state, &spec, dt, &noise).unwrap();
        }
        let expected = crate::qstate::conjugate_by_evolution(
            rho.matrix(),
            &spec.a,
            dt * 1000.0,
        )
        .unwrap();
        assert!(state.matrix().dist_max(&expected) < 1e-3);
    }

    #[test]
    fn two_equal_diffusive_channels_double_the_rate() {
        // Projection off: the raw Euler chain is the one whose ensemble mean
        // is weakly consistent; eigenvalue clipping would bias it. The step
        // is kept small because the two-noise Euler bias grows in dt.
        let c = pauli::lower().scale_re(0.5);
        let spec = GeneratorSpec::new(
            ComplexMatrix::zeros(2),
            vec![
                ChannelSpec::rotated(c.clone(), 0.6),
                ChannelSpec::rotated(c.clone(), std::f64::consts::FRAC_PI_4),
            ],
        )
        .unwrap();
        let rho = DensityMatrix::basis_state(2, 0);
        let config = SdeConfig::new(2e-4).unwrap().without_projection();
        let observables = vec![("sz".to_string(), pauli::sigma_z())];
        let summary =
            ensemble_mean(&rho, &spec, &config, &[1.0], &observables, 4000, 22).unwrap();
        // Doubled-rate master equation oracle.
        let doubled = GeneratorSpec::new(
            ComplexMatrix::zeros(2),
            vec![ChannelSpec::counting(c.scale_re(2f64.sqrt()))],
        )
        .unwrap();
        let reference =
            crate::lindblad::evolve_state(&rho, &doubled.a, &doubled.channels, &[1.0], 1e-4)
                .unwrap();
        let exact = reference[0].expectation(&pauli::sigma_z());
        let (mean, se) = (summary.means[0][0], summary.standard_errors[0][0]);
        assert!((mean - exact).abs() < 3.0 * se + 8e-3, "mean {mean}, exact {exact}");
    }

    #[test]
    fn pure_state_free_euler_preserves_norm_to_second_order() {
        let a = pauli::sigma_x().scale_re(0.5);
        let c = ComplexMatrix::zeros(2);
        let psi = PureState::basis(2, 0);
        let dt = 1e-4;
        // Norm drift of the unnormalized Euler update is O(dt^2).
        let alpha = 0.0;
        let f_op = -&a.scale(C_I).scale_re(1.0 + alpha * 0.0);
        let drift = f_op.apply(psi.amplitudes());
        let updated: Vec<Complex64> = psi
            .amplitudes()
            .iter()
            .zip(&drift)
            .map(|(&x, &d)| x + d * Complex64::new(dt, 0.0))
            .collect();
        let norm: f64 = updated.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < dt * dt * 10.0);
        // The stepper itself renormalizes.
        let next = step_pure(&psi, &a, &c, dt, 0.0).unwrap();
        let norm: f64 = next.amplitudes().iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_and_matrix_integrators_stay_close() {
        // |psi><psi| propagated by the vector equation tracks the matrix
        // equation driven by the same Wiener path within O(dt) over a unit
        // horizon, improving linearly under refinement.
        let a = pauli::sigma_x().scale_re(0.5);
        let c = pauli::sigma_z().scale_re(0.6); // Hermitian coupling
        let horizon = 1.0;
        let mut sups = Vec::new();
        let dts: [f64; 3] = [2e-3, 1e-3, 5e-4];
        for &dt in &dts {
            let n = (horizon / dt).round() as usize;
            let mut rng = StdRng::seed_from_u64(33);
            let normal = Normal::new(0.0, dt.sqrt()).unwrap();
            let mut psi = PureState::basis(2, 0);
            let mut rho = psi.to_density();
            let mut sup: f64 = 0.0;
            for _ in 0..n {
                let dw = normal.sample(&mut rng);
                psi = step_pure(&psi, &a, &c, dt, dw).unwrap();
                rho = step_diffusive(&rho, &a, &c, dt, dw).unwrap();
                sup = sup.max(trace_distance(&psi.to_density(), &rho));
            }
            sups.push(sup);
        }
        assert!(sups[2] < sups[0], "trace distances {sups:?}");
        assert!(sups[2] < 0.05, "final deviation too large: {sups:?}");
    }

    #[test]
    fn purity_preserved_from_pure_start() {
        // Matrix integrator from a pure state under weak monitoring: the
        // median purity loss shrinks with dt and stays within the Euler
        // budget. The per-step loss scales like |C|^2 sqrt(dt), so the
        // tolerance pins down a weak-coupling configuration.
        let a = pauli::sigma_x().scale_re(0.5);
        let c = pauli::sigma_z().scale_re(0.05);
        let horizon = 1.0;
        let mut losses = Vec::new();
        for &dt in &[1e-3f64, 1e-4] {
            let n = (horizon / dt).round() as usize;
            let mut worst_paths = Vec::new();
            for path in 0..40 {
                let mut rng = StdRng::seed_from_u64(100 + path);
                let normal = Normal::new(0.0, dt.sqrt()).unwrap();
                let mut rho = PureState::basis(2, 0).to_density();
                let mut min_purity: f64 = 1.0;
                for _ in 0..n {
                    let dw = normal.sample(&mut rng);
                    rho = step_diffusive(&rho, &a, &c, dt, dw).unwrap();
                    min_purity = min_purity.min(rho.purity());
                }
                worst_paths.push(1.0 - min_purity);
            }
            losses.push(crate::stats::median(&worst_paths));
        }
        assert!(losses[1] < losses[0], "purity losses {losses:?}");
        assert!(losses[1] <= 1e-4, "purity loss at dt=1e-4: {}", losses[1]);
    }

    #[test]
    fn linear_unitary_case_keeps_trace() {
        let a = pauli::sigma_x().scale_re(0.5);
        let c = ComplexMatrix::zeros(2);
        let mut xi = DensityMatrix::basis_state(2, 0).matrix().clone();
        for _ in 0..100 {
            let out = step_linear(&xi, &a, &c, 1e-3, 0.0).unwrap();
            xi = out.xi;
        }
        assert!((xi.trace().re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_nonlinear_pathwise_equivalence() {
        // Integrate the linear equation driven by dY, rebuild dW through the
        // measure-change link, drive the nonlinear equation with it: the sup
        // trace distance over a unit horizon is O(dt). All step sizes see
        // the same Brownian path, coarsened from the finest resolution.
        let a = pauli::sigma_x().scale_re(0.4);
        let c = pauli::lower().scale_re(0.7);
        let horizon = 1.0;
        let dts: [f64; 3] = [1e-2, 1e-3, 1e-4];
        let fine_dt = dts[dts.len() - 1];
        let n_fine = (horizon / fine_dt).round() as usize;
        let mut rng = StdRng::seed_from_u64(55);
        let normal = Normal::new(0.0, fine_dt.sqrt()).unwrap();
        let fine_increments: Vec<f64> = (0..n_fine).map(|_| normal.sample(&mut rng)).collect();

        let mut sups = Vec::new();
        for &dt in &dts {
            let stride = (dt / fine_dt).round() as usize;
            let n = n_fine / stride;
            let rho0 = DensityMatrix::basis_state(2, 0);
            let mut xi = rho0.matrix().clone();
            let mut rho = rho0.matrix().clone();
            let mut sup: f64 = 0.0;
            for k in 0..n {
                let dy: f64 = fine_increments[k * stride..(k + 1) * stride].iter().sum();
                let out = step_linear_milstein(&xi, &a, &c, dt, dy).unwrap();
                rho = step_diffusive_milstein_raw(&rho, &a, &c, dt, out.implied_dw);
                xi = out.xi;
                let normalized = xi.scale_re(1.0 / xi.trace().re);
                sup = sup.max(
                    crate::qstate::trace_distance_matrices(&normalized, &rho),
                );
            }
            sups.push(sup.max(1e-300));
        }
        let slope = crate::stats::log_log_slope(&dts.to_vec(), &sups);
        assert!(slope >= 0.8, "pathwise equivalence order {slope}, sups {sups:?}");
    }

    #[test]
    fn linear_trace_is_a_martingale() {
        // E[tr xi_t] stays 1 + O(dt) with Wiener driving noise.
        let a = pauli::sigma_x().scale_re(0.4);
        let c = pauli::lower().scale_re(0.7);
        let dt = 1e-3f64;
        let n = 1000;
        let mut finals = Vec::new();
        for path in 0..2000 {
            let mut rng = StdRng::seed_from_u64(900 + path);
            let normal = Normal::new(0.0, dt.sqrt()).unwrap();
            let mut xi = DensityMatrix::basis_state(2, 0).matrix().clone();
            let mut alive = true;
            for _ in 0..n {
                match step_linear(&xi, &a, &c, dt, normal.sample(&mut rng)) {
                    Ok(out) => xi = out.xi,
                    Err(_) => {
                        alive = false;
                        break;
                    }
                }
            }
            if alive {
                finals.push(xi.trace().re);
            }
        }
        assert!(finals.len() > 1900, "too many discarded paths");
        let (mean, se) = mean_se(&finals);
        assert!((mean - 1.0).abs() < 3.0 * se + 10.0 * dt, "mean {mean}, se {se}");
    }

    #[test]
    fn drift_only_positivity_from_boundary() {
        // RK4 on the counting drift from rank-deficient states stays
        // positive within tolerance and improves under refinement.
        let a = pauli::sigma_x().scale_re(0.5);
        let c = pauli::lower();
        let mut rng = StdRng::seed_from_u64(66);
        let mut starts = Vec::new();
        for _ in 0..10 {
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            let v = vec![
                Complex64::new(theta.cos(), 0.0),
                Complex64::from_polar(theta.sin(), phase),
            ];
            starts.push(PureState::normalized(v).unwrap().to_density());
        }
        let mut worst_by_dt = Vec::new();
        for &dt in &[2e-3f64, 1e-3] {
            let mut worst: f64 = 0.0;
            for rho in &starts {
                let (_, min_eig) =
                    integrate_counting_drift_rk4(rho, &a, &c, dt, 1.0).unwrap();
                worst = worst.max((-min_eig).max(0.0));
            }
            worst_by_dt.push(worst);
        }
        assert!(worst_by_dt[1] <= worst_by_dt[0] + 1e-12, "violations {worst_by_dt:?}");
        assert!(worst_by_dt[1] < 1e-6, "violations {worst_by_dt:?}");
    }
}
