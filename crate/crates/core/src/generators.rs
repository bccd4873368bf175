//! Limit generators of the scaled measurement chains (counting, diffusive,
//! mixed multichannel) evaluated on smooth polynomial test functions, plus
//! the empirical-generator residual and semigroup reference machinery that
//! measures how fast the discrete chains converge.

use crate::chain::{
    transition_operator, ChannelMode, ChannelSpec, HamiltonianSpec, StepKernel,
};
use crate::error::{Error, Result};
use crate::linalg::{C_I, ComplexMatrix};
use crate::qstate::DensityMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Intensity below which the jump term of the counting generator is dropped:
/// the jump rate vanishes and the limit is well defined without it.
pub const JUMP_INTENSITY_FLOOR: f64 = 1e-14;

/// One monomial `coeff * prod_i z_i^{exps[i]}` in the trace coordinates
/// `z_i = tr(B_i rho)`.
#[derive(Debug, Clone)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u8>,
}

/// Smooth polynomial test function f(rho) = g(z_1, ..., z_m) in trace
/// coordinates `z_i = tr(B_i rho)`, degree at most 3, with exact gradient
/// pairing and Hessian form.
#[derive(Debug, Clone)]
pub struct ObservablePolynomial {
    basis: Vec<ComplexMatrix>,
    terms: Vec<Monomial>,
}

impl ObservablePolynomial {
    pub fn new(basis: Vec<ComplexMatrix>, terms: Vec<Monomial>) -> Result<Self> {
        for b in &basis {
            let scale = b.max_abs().max(1.0);
            if b.hermiticity_error() > 1e-10 * scale {
                return Err(Error::NotHermitian {
                    deviation: b.hermiticity_error(),
                    tolerance: 1e-10 * scale,
                });
            }
        }
        for term in &terms {
            if term.exps.len() != basis.len() {
                return Err(Error::Shape(
                    "monomial exponent vector must match the basis length".into(),
                ));
            }
            let degree: u32 = term.exps.iter().map(|&e| e as u32).sum();
            if degree > 3 {
                return Err(Error::InvalidInput(format!(
                    "polynomial degree {degree} exceeds the supported maximum 3"
                )));
            }
        }
        Ok(Self { basis, terms })
    }

    /// The constant function.
    pub fn constant(value: f64) -> Self {
        Self { basis: Vec::new(), terms: vec![Monomial { coeff: value, exps: Vec::new() }] }
    }

    /// f(rho) = tr(B rho).
    pub fn linear(b: ComplexMatrix) -> Result<Self> {
        Self::new(vec![b], vec![Monomial { coeff: 1.0, exps: vec![1] }])
    }

    /// f(rho) = tr(B rho)^2.
    pub fn quadratic(b: ComplexMatrix) -> Result<Self> {
        Self::new(vec![b], vec![Monomial { coeff: 1.0, exps: vec![2] }])
    }

    /// Affine part, if the polynomial is affine: (offset, observable).
    pub fn as_affine(&self) -> Option<(f64, ComplexMatrix)> {
        let dim = self.basis.first().map(|b| b.dim())?;
        let mut offset = 0.0;
        let mut obs = ComplexMatrix::zeros(dim);
        for term in &self.terms {
            let degree: u32 = term.exps.iter().map(|&e| e as u32).sum();
            match degree {
                0 => offset += term.coeff,
                1 => {
                    let i = term.exps.iter().position(|&e| e == 1).unwrap();
                    obs = &obs + &self.basis[i].scale_re(term.coeff);
                }
                _ => return None,
            }
        }
        Some((offset, obs))
    }

    fn coordinates(&self, rho: &ComplexMatrix) -> Vec<f64> {
        self.basis.iter().map(|b| b.matmul(rho).trace().re).collect()
    }

    pub fn eval(&self, rho: &DensityMatrix) -> f64 {
        self.eval_matrix(rho.matrix())
    }

    /// Evaluation extended algebraically to arbitrary matrices.
    pub fn eval_matrix(&self, rho: &ComplexMatrix) -> f64 {
        let z = self.coordinates(rho);
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.exps
                        .iter()
                        .enumerate()
                        .map(|(i, &e)| z[i].powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Gradient pairing (f'(rho), X) = sum_i dg/dz_i * tr(B_i X).
    pub fn gradient_pairing(&self, rho: &ComplexMatrix, x: &ComplexMatrix) -> f64 {
        let z = self.coordinates(rho);
        let zx: Vec<f64> = self.basis.iter().map(|b| b.matmul(x).trace().re).collect();
        let mut out = 0.0;
        for t in &self.terms {
            for (i, &e) in t.exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut partial = t.coeff * e as f64 * z[i].powi(e as i32 - 1);
                for (j, &ej) in t.exps.iter().enumerate() {
                    if j != i {
                        partial *= z[j].powi(ej as i32);
                    }
                }
                out += partial * zx[i];
            }
        }
        out
    }

    /// Hessian form [X f''(rho) X] = sum_ij d2g/dz_i dz_j tr(B_i X) tr(B_j X).
    pub fn hessian_form(&self, rho: &ComplexMatrix, x: &ComplexMatrix) -> f64 {
        let z = self.coordinates(rho);
        let zx: Vec<f64> = self.basis.iter().map(|b| b.matmul(x).trace().re).collect();
        let m = self.basis.len();
        let mut out = 0.0;
        for t in &self.terms {
            for i in 0..m {
                for j in 0..m {
                    let (ei, ej) = (t.exps[i], t.exps[j]);
                    // Second partial of the monomial with respect to z_i, z_j.
                    let factor = if i == j {
                        if ei < 2 {
                            continue;
                        }
                        ei as f64 * (ei - 1) as f64
                    } else {
                        if ei == 0 || ej == 0 {
                            continue;
                        }
                        ei as f64 * ej as f64
                    };
                    let mut partial = t.coeff * factor;
                    for (k, &ek) in t.exps.iter().enumerate() {
                        let mut e = ek as i32;
                        if k == i {
                            e -= 1;
                        }
                        if k == j {
                            e -= 1;
                        }
                        partial *= z[k].powi(e);
                    }
                    out += partial * zx[i] * zx[j];
                }
            }
        }
        out
    }
}

/// Atom Hamiltonian plus channels; the detection mode of each channel
/// (counting or diffusive) is read from its projector angle.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub a: ComplexMatrix,
    pub channels: Vec<ChannelSpec>,
}

impl GeneratorSpec {
    pub fn new(a: ComplexMatrix, channels: Vec<ChannelSpec>) -> Result<Self> {
        // Reuse the chain-side validation.
        let _ = HamiltonianSpec::new(a.clone(), channels.clone())?;
        Ok(Self { a, channels })
    }

    pub fn to_hamiltonian(&self) -> HamiltonianSpec {
        HamiltonianSpec::new(self.a.clone(), self.channels.clone())
            .expect("validated at construction")
    }

    pub fn counting_indices(&self) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, ch)| ch.mode() == ChannelMode::Counting)
            .map(|(i, _)| i)
            .collect()
    }
}

fn counting_terms(
    f: &ObservablePolynomial,
    rho: &ComplexMatrix,
    c: &ComplexMatrix,
) -> f64 {
    let c_adj = c.adjoint();
    let cc = c_adj.matmul(c);
    let intensity = cc.matmul(rho).trace().re;
    let drift = &cc.anticommutator(rho).scale_re(0.5) - &rho.scale_re(intensity);
    let mut out = -f.gradient_pairing(rho, &drift);
    if intensity > JUMP_INTENSITY_FLOOR {
        let jump = c.matmul(rho).matmul(&c_adj).scale_re(1.0 / intensity);
        out += intensity * (f.eval_matrix(&jump) - f.eval_matrix(rho));
    }
    out
}

fn diffusive_terms(
    f: &ObservablePolynomial,
    rho: &ComplexMatrix,
    c: &ComplexMatrix,
) -> f64 {
    let c_adj = c.adjoint();
    let cc = c_adj.matmul(c);
    let flux = &rho.matmul(&c_adj) + &c.matmul(rho);
    let omega = flux.trace().re;
    let centered = &flux - &rho.scale_re(omega);
    let drift = &c.matmul(rho).matmul(&c_adj) - &cc.anticommutator(rho).scale_re(0.5);
    0.5 * f.hessian_form(rho, &centered) + f.gradient_pairing(rho, &drift)
}

/// Counting-observation generator:
/// -(f', i[A,rho] + {C*C,rho}/2 - rho T) + T [f(C rho C*/T) - f(rho)].
pub fn eval_count(
    f: &ObservablePolynomial,
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
) -> f64 {
    let r = rho.matrix();
    let hamiltonian_part = -f.gradient_pairing(r, &a.commutator(r).scale(C_I));
    hamiltonian_part + counting_terms(f, r, c)
}

/// Diffusive-observation generator:
/// [B f'' B]/2 + (f', -i[A,rho] - {C*C,rho}/2 + C rho C*),
/// B = rho C* + C rho - tr(rho C* + C rho) rho. Independent of the detection
/// angle by construction.
pub fn eval_dif(
    f: &ObservablePolynomial,
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
) -> f64 {
    let r = rho.matrix();
    let hamiltonian_part = -f.gradient_pairing(r, &a.commutator(r).scale(C_I));
    hamiltonian_part + diffusive_terms(f, r, c)
}

/// Mixed multichannel generator: counting terms over the counting channels,
/// diffusive terms over the rest, plus the common Hamiltonian pairing.
pub fn eval_mix(f: &ObservablePolynomial, rho: &DensityMatrix, spec: &GeneratorSpec) -> f64 {
    let r = rho.matrix();
    let mut out = -f.gradient_pairing(r, &spec.a.commutator(r).scale(C_I));
    for ch in &spec.channels {
        out += match ch.mode() {
            ChannelMode::Counting => counting_terms(f, r, &ch.c),
            ChannelMode::Diffusive => diffusive_terms(f, r, &ch.c),
        };
    }
    out
}

/// Deterministic probe set over the state space: six pure basis/superposition
/// states plus Dirichlet-random mixed states, fixed by the seed.
pub fn probe_states(dim: usize, count: usize, seed: u64) -> Vec<DensityMatrix> {
    use crate::qstate::PureState;
    use num_complex::Complex64;

    let mut out = Vec::with_capacity(count);
    let mut pure = Vec::new();
    for k in 0..dim.min(2) {
        pure.push(PureState::basis(dim, k).to_density());
    }
    let inv = 1.0 / 2f64.sqrt();
    let mk = |a: Complex64, b: Complex64| {
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[0] = a;
        v[1 % dim] = b;
        PureState::normalized(v).unwrap().to_density()
    };
    if dim >= 2 {
        pure.push(mk(Complex64::new(inv, 0.0), Complex64::new(inv, 0.0)));
        pure.push(mk(Complex64::new(inv, 0.0), Complex64::new(-inv, 0.0)));
        pure.push(mk(Complex64::new(inv, 0.0), Complex64::new(0.0, inv)));
        pure.push(mk(Complex64::new(inv, 0.0), Complex64::new(0.0, -inv)));
    }
    out.extend(pure.into_iter().take(count));

    let mut rng = StdRng::seed_from_u64(seed);
    while out.len() < count {
        // Dirichlet(1,...,1) eigenvalues via normalized exponentials,
        // conjugated by a random unitary (QR-free: Jacobi-style rotations).
        let mut eigs: Vec<f64> = (0..dim)
            .map(|_| -(rng.random::<f64>().clamp(1e-12, 1.0)).ln())
            .collect();
        let total: f64 = eigs.iter().sum();
        for e in &mut eigs {
            *e /= total;
        }
        let mut m = ComplexMatrix::diag(
            &eigs.iter().map(|&w| Complex64::new(w, 0.0)).collect::<Vec<_>>(),
        );
        // Random unitary as a product of complex Givens rotations.
        for p in 0..dim {
            for q in (p + 1)..dim {
                let theta = rng.random::<f64>() * std::f64::consts::PI;
                let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                let mut g = ComplexMatrix::identity(dim);
                g[(p, p)] = Complex64::new(theta.cos(), 0.0);
                g[(q, q)] = Complex64::new(theta.cos(), 0.0);
                g[(p, q)] = Complex64::from_polar(theta.sin(), phase);
                g[(q, p)] = -Complex64::from_polar(theta.sin(), -phase);
                m = g.matmul(&m).matmul(&g.adjoint());
            }
        }
        out.push(crate::qstate::clip_and_normalize(&m).unwrap());
    }
    out
}

/// Max over probe states of |(U_h f - f)/h - L_mix f|.
pub fn empirical_generator_residual(
    f: &ObservablePolynomial,
    spec: &GeneratorSpec,
    h: f64,
    sample_states: &[DensityMatrix],
) -> Result<f64> {
    let hspec = spec.to_hamiltonian();
    let mut worst: f64 = 0.0;
    for rho in sample_states {
        let u_h = transition_operator(|r| f.eval(r), rho, &hspec, h)?;
        let empirical = (u_h - f.eval(rho)) / h;
        let exact = eval_mix(f, rho, spec);
        worst = worst.max((empirical - exact).abs());
    }
    Ok(worst)
}

/// Per-state empirical generator values (U_h f - f)/h.
pub fn empirical_generator_values(
    f: &ObservablePolynomial,
    spec: &GeneratorSpec,
    h: f64,
    sample_states: &[DensityMatrix],
) -> Result<Vec<f64>> {
    let hspec = spec.to_hamiltonian();
    sample_states
        .iter()
        .map(|rho| {
            let u_h = transition_operator(|r| f.eval(r), rho, &hspec, h)?;
            Ok((u_h - f.eval(rho)) / h)
        })
        .collect()
}

/// Internal step used when the semigroup reference falls back to the
/// high-resolution discrete chain.
pub const REFERENCE_CHAIN_STEP: f64 = 1e-5;

/// Reference values of the limit semigroup T_s f over the probe states.
///
/// Affine f: solved through the Heisenberg-picture master equation, exact up
/// to RK4 error. General f: the scaled discrete chain at step
/// [`REFERENCE_CHAIN_STEP`] as a high-resolution proxy, which requires a
/// rank-one counting channel (see [`crate::chain::renewal_expectations`]).
pub fn semigroup_reference(
    f: &ObservablePolynomial,
    spec: &GeneratorSpec,
    s: f64,
    probes: &[DensityMatrix],
) -> Result<Vec<f64>> {
    if s < 0.0 {
        return Err(Error::InvalidInput("time must be nonnegative".into()));
    }
    if s == 0.0 {
        return Ok(probes.iter().map(|rho| f.eval(rho)).collect());
    }
    if let Some((offset, obs)) = f.as_affine() {
        let evolved = crate::lindblad::evolve_observable(&obs, &spec.a, &spec.channels, s, 1e-4);
        return Ok(probes
            .iter()
            .map(|rho| offset + rho.expectation(&evolved))
            .collect());
    }
    let hspec = spec.to_hamiltonian();
    let n = (s / REFERENCE_CHAIN_STEP).round() as usize;
    let eval = |r: &DensityMatrix| f.eval(r);
    let solver =
        crate::chain::RenewalSolver::new(&eval, &hspec, REFERENCE_CHAIN_STEP, n, StepKernel::Exact)?;
    probes.iter().map(|rho| solver.expectation(rho)).collect()
}
