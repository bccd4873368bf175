//! Finite-dimensional quantum state algebra: density matrices, probe lifts,
//! partial traces, exact unitary conjugation and the short-time expansion of
//! the dressed state.
//!
//! Basis convention for an atom of dimension n coupled to K two-level probes:
//! the lifted index is `atom_index * 2^K + w`, where `w` is the binary probe
//! word with channel 1 on the most significant bit. This is exactly the
//! ordering produced by sequential Kronecker products with the atom factor
//! first.

use crate::error::{Error, Result};
use crate::linalg::{C_I, C_ONE, C_ZERO, ComplexMatrix};
use num_complex::Complex64;

/// Validation tolerances for density matrices: one order above the
/// double-precision accumulation noise observed at n <= 8.
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const MIN_EIGENVALUE_TOL: f64 = -1e-10;

/// Guard against accidentally huge probe lifts.
pub const MAX_LIFTED_DIM: usize = 64;

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

impl DensityMatrix {
    /// Validate Hermiticity, unit trace and positivity.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let herm = m.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian: deviation {herm:.3e}"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix trace {} + {}i differs from 1",
                tr.re, tr.im
            )));
        }
        let min_eig = m.symmetrize().min_eigenvalue()?;
        if min_eig < MIN_EIGENVALUE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { m })
    }

    /// Skip validation; for internal construction where validity is implied.
    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self { m }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { m: ComplexMatrix::identity(dim).scale_re(1.0 / dim as f64) }
    }

    /// Basis state |k><k|.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        let mut m = ComplexMatrix::zeros(dim);
        m[(k, k)] = C_ONE;
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    /// Re tr(B rho).
    pub fn expectation(&self, observable: &ComplexMatrix) -> f64 {
        observable.matmul(&self.m).trace().re
    }

    /// tr(rho^2).
    pub fn purity(&self) -> f64 {
        self.m.matmul(&self.m).trace().re
    }
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    v: Vec<Complex64>,
}

impl PureState {
    pub fn new(v: Vec<Complex64>) -> Result<Self> {
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "pure state norm {norm} differs from 1"
            )));
        }
        Ok(Self { v })
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = vec![C_ZERO; dim];
        v[k] = C_ONE;
        Self { v }
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(v: Vec<Complex64>) -> Result<Self> {
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::DegenerateState);
        }
        Ok(Self { v: v.into_iter().map(|c| c / norm).collect() })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.v
    }

    /// |psi><psi|.
    pub fn to_density(&self) -> DensityMatrix {
        let n = self.v.len();
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.v[i] * self.v[j].conj();
            }
        }
        DensityMatrix::new_unchecked(m)
    }

    /// <psi, M psi>.
    pub fn expectation(&self, m: &ComplexMatrix) -> Complex64 {
        let mv = m.apply(&self.v);
        self.v.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Two orthogonal 2x2 projectors parameterized by a rotation angle.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub phi: f64,
    pub p0: ComplexMatrix,
    pub p1: ComplexMatrix,
    /// True when phi is a multiple of pi/2, i.e. the pair is diagonal.
    pub diagonal: bool,
}

/// The rotated projector pair at angle phi (phase fixed to zero):
/// P0 = [[cos^2, sc], [sc, sin^2]], P1 = I - P0 with sc = sin(phi)cos(phi).
pub fn projector_pair(phi: f64) -> ProjectorPair {
    let (s, c) = phi.sin_cos();
    let sc = s * c;
    let p0 = ComplexMatrix::from_real_rows(&[vec![c * c, sc], vec![sc, s * s]]).unwrap();
    let p1 = ComplexMatrix::from_real_rows(&[vec![s * s, -sc], vec![-sc, c * c]]).unwrap();
    ProjectorPair { phi, p0, p1, diagonal: sc.abs() < 1e-12 }
}

/// Vacuum projector |e0><e0| of a two-level probe.
pub fn vacuum_projector() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
}

/// rho x Omega_1 x ... x Omega_K with every probe in its vacuum state.
pub fn tensor_lift(rho: &DensityMatrix, probes: usize) -> Result<ComplexMatrix> {
    if probes == 0 {
        return Err(Error::InvalidInput("tensor_lift needs at least one probe".into()));
    }
    let lifted_dim = rho
        .dim()
        .checked_shl(probes as u32)
        .ok_or(Error::Sizing { requested: usize::MAX, max: MAX_LIFTED_DIM })?;
    if lifted_dim > MAX_LIFTED_DIM {
        return Err(Error::Sizing { requested: lifted_dim, max: MAX_LIFTED_DIM });
    }
    let omega = vacuum_projector();
    let mut out = rho.matrix().clone();
    for _ in 0..probes {
        out = out.kron(&omega);
    }
    Ok(out)
}

/// Partial trace over all K probe factors: (tr_p M)^a_b = sum_w M^{aw}_{bw}.
pub fn partial_trace_probes(m: &ComplexMatrix, probes: usize) -> Result<ComplexMatrix> {
    let block = 1usize << probes;
    if m.dim() % block != 0 {
        return Err(Error::Shape(format!(
            "matrix of dimension {} cannot host {} probes",
            m.dim(),
            probes
        )));
    }
    let n = m.dim() / block;
    let mut out = ComplexMatrix::zeros(n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = C_ZERO;
            for w in 0..block {
                acc += m[(a * block + w, b * block + w)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// Exact conjugation e^{-itH} M e^{itH} via the spectral decomposition of H.
pub fn conjugate_by_evolution(m: &ComplexMatrix, h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    let herm = h.hermiticity_error();
    let scale = h.max_abs().max(1.0);
    if herm > 1e-10 * scale {
        return Err(Error::NotHermitian { deviation: herm, tolerance: 1e-10 * scale });
    }
    let u = h.hermitian_function(|w| (-C_I * Complex64::new(t * w, 0.0)).exp())?;
    Ok(u.matmul(m).matmul(&u.adjoint()))
}

/// The dressed state of one measurement step to first order in t, with the
/// interaction already rescaled by 1/sqrt(t):
/// [[rho - it[A,rho] - t{C*C,rho}/2 , sqrt(t) rho C*], [sqrt(t) C rho, t C rho C*]].
pub fn small_time_lifted_state(
    rho: &DensityMatrix,
    a: &ComplexMatrix,
    c: &ComplexMatrix,
    t: f64,
) -> ComplexMatrix {
    let n = rho.dim();
    let r = rho.matrix();
    let c_adj = c.adjoint();
    let sqrt_t = t.sqrt();

    let top_left = &(r - &a.commutator(r).scale(C_I * Complex64::new(t, 0.0)))
        - &c_adj.matmul(c).anticommutator(r).scale_re(0.5 * t);
    let top_right = r.matmul(&c_adj).scale_re(sqrt_t);
    let bottom_left = c.matmul(r).scale_re(sqrt_t);
    let bottom_right = c.matmul(r).matmul(&c_adj).scale_re(t);

    let mut out = ComplexMatrix::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            out[(2 * i, 2 * j)] = top_left[(i, j)];
            out[(2 * i, 2 * j + 1)] = top_right[(i, j)];
            out[(2 * i + 1, 2 * j)] = bottom_left[(i, j)];
            out[(2 * i + 1, 2 * j + 1)] = bottom_right[(i, j)];
        }
    }
    out
}

/// Numerical enforcement of the state invariants: symmetrize, clip negative
/// eigenvalues at zero, renormalize to unit trace. A no-op (up to roundoff)
/// on matrices that are already valid states.
pub fn clip_and_normalize(m: &ComplexMatrix) -> Result<DensityMatrix> {
    let sym = m.symmetrize();
    let tr = sym.trace().re;
    if tr > 0.0 {
        let candidate = sym.scale_re(1.0 / tr);
        if candidate.min_eigenvalue()? >= 0.0 {
            return Ok(DensityMatrix::new_unchecked(candidate));
        }
    }
    let (vals, vecs) = sym.eigh()?;
    let clipped: Vec<f64> = vals.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 1e-300 {
        return Err(Error::DegenerateState);
    }
    let n = sym.dim();
    let mut out = ComplexMatrix::zeros(n);
    for k in 0..n {
        let w = clipped[k] / total;
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                let add = vecs[(i, k)] * vecs[(j, k)].conj() * Complex64::new(w, 0.0);
                out[(i, j)] += add;
            }
        }
    }
    Ok(DensityMatrix::new_unchecked(out))
}

/// Half the trace norm of rho - sigma.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    trace_distance_matrices(a.matrix(), b.matrix())
}

pub fn trace_distance_matrices(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let diff = (a - b).symmetrize();
    let (vals, _) = diff.eigh().expect("difference of Hermitian matrices is Hermitian");
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_density(dim: usize, rng: &mut StdRng) -> DensityMatrix {
        let mut g = ComplexMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                g[(i, j)] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        let pos = g.matmul(&g.adjoint());
        let tr = pos.trace().re;
        DensityMatrix::new(pos.scale_re(1.0 / tr)).unwrap()
    }

    fn random_hermitian(dim: usize, rng: &mut StdRng) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        m.symmetrize()
    }

    #[test]
    fn density_matrix_validation_rejects_bad_states() {
        // wrong trace
        let m = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(m).is_err());
        // negative eigenvalue
        let m = ComplexMatrix::from_real_rows(&[vec![1.5, 0.0], vec![0.0, -0.5]]).unwrap();
        assert!(DensityMatrix::new(m).is_err());
        // not Hermitian
        let mut m = ComplexMatrix::from_real_rows(&[vec![0.5, 0.1], vec![0.0, 0.5]]).unwrap();
        m[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn lift_single_probe_is_top_left_block() {
        let rho = DensityMatrix::basis_state(2, 0);
        let lifted = tensor_lift(&rho, 1).unwrap();
        assert_eq!(lifted.dim(), 4);
        assert_eq!(lifted[(0, 0)].re, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) != (0, 0) {
                    assert_eq!(lifted[(i, j)], C_ZERO);
                }
            }
        }
        // maximally mixed lift: diag block (I/n, 0)
        let mixed = DensityMatrix::maximally_mixed(2);
        let lifted = tensor_lift(&mixed, 1).unwrap();
        assert!((lifted[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((lifted[(2, 2)].re - 0.5).abs() < 1e-15);
        assert_eq!(lifted[(1, 1)], C_ZERO);
        assert_eq!(lifted[(3, 3)], C_ZERO);
    }

    #[test]
    fn lift_two_probes_places_rho_in_word_00_block() {
        let mut rng = StdRng::seed_from_u64(5);
        let rho = random_density(2, &mut rng);
        let lifted = tensor_lift(&rho, 2).unwrap();
        assert_eq!(lifted.dim(), 8);
        // Direct Kronecker-product oracle.
        let omega = vacuum_projector();
        let oracle = rho.matrix().kron(&omega).kron(&omega);
        assert!(lifted.dist_max(&oracle) < 1e-15);
        // rho sits at (atom*4, atom*4), probe word 00.
        assert!((lifted[(0, 4)] - rho.matrix()[(0, 1)]).norm() < 1e-15);
        assert!((lifted[(4, 4)] - rho.matrix()[(1, 1)]).norm() < 1e-15);
    }

    #[test]
    fn lift_dimension_guard() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(tensor_lift(&rho, 5), Err(Error::Sizing { .. })));
    }

    #[test]
    fn partial_trace_inverts_lift() {
        let mut rng = StdRng::seed_from_u64(9);
        for probes in 1..=3 {
            let rho = random_density(3, &mut rng);
            let lifted = tensor_lift(&rho, probes).unwrap();
            let back = partial_trace_probes(&lifted, probes).unwrap();
            assert!(back.dist_max(rho.matrix()) < 1e-14);
        }
    }

    #[test]
    fn partial_trace_two_dim_block_formula() {
        // K=1, M = [[a,b],[c,d]] blocks -> a + d
        let mut rng = StdRng::seed_from_u64(21);
        let m = random_hermitian(4, &mut rng);
        let traced = partial_trace_probes(&m, 1).unwrap();
        // index-summation oracle: (tr_p M)^i_j = M^{i0}_{j0} + M^{i1}_{j1}
        for i in 0..2 {
            for j in 0..2 {
                let expect = m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)];
                assert!((traced[(i, j)] - expect).norm() < 1e-15);
            }
        }
        // trace preservation
        assert!((traced.trace() - m.trace()).norm() < 1e-14);
    }

    #[test]
    fn conjugation_identity_and_commuting_cases() {
        let mut rng = StdRng::seed_from_u64(2);
        let rho = random_density(3, &mut rng);
        let zero = ComplexMatrix::zeros(3);
        let out = conjugate_by_evolution(rho.matrix(), &zero, 0.7).unwrap();
        assert!(out.dist_max(rho.matrix()) < 1e-14);

        // commuting case: H diagonal, M diagonal
        let h = ComplexMatrix::diag(&[C_ONE, Complex64::new(2.0, 0.0), Complex64::new(-1.0, 0.0)]);
        let m = ComplexMatrix::diag(&[Complex64::new(0.2, 0.0), Complex64::new(0.3, 0.0), Complex64::new(0.5, 0.0)]);
        let out = conjugate_by_evolution(&m, &h, 1.3).unwrap();
        assert!(out.dist_max(&m) < 1e-14);
    }

    #[test]
    fn conjugation_preserves_trace_and_spectrum() {
        let mut rng = StdRng::seed_from_u64(31);
        let m = random_hermitian(4, &mut rng);
        let h = random_hermitian(4, &mut rng);
        let out = conjugate_by_evolution(&m, &h, 0.9).unwrap();
        assert!((out.trace() - m.trace()).norm() < 1e-10);
        let (before, _) = m.eigh().unwrap();
        let (after, _) = out.symmetrize().eigh().unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-10);
        }
    }

    #[test]
    fn conjugation_rejects_non_hermitian_hamiltonian() {
        let m = ComplexMatrix::identity(2);
        assert!(conjugate_by_evolution(&m, &pauli::lower(), 0.1).is_err());
    }

    #[test]
    fn small_time_state_decoupled_probe() {
        let mut rng = StdRng::seed_from_u64(4);
        let rho = random_density(2, &mut rng);
        let a = random_hermitian(2, &mut rng);
        let c = ComplexMatrix::zeros(2);
        let t = 1e-3;
        let out = small_time_lifted_state(&rho, &a, &c, t);
        let expected_tl = rho.matrix()
            - &a.commutator(rho.matrix()).scale(C_I * Complex64::new(t, 0.0));
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[(2 * i, 2 * j)] - expected_tl[(i, j)]).norm() < 1e-15);
                assert!((out[(2 * i, 2 * j + 1)]).norm() < 1e-15);
                assert!((out[(2 * i + 1, 2 * j + 1)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn small_time_state_jump_block_by_hand() {
        // qubit rho=|0><0|, A=0, C=|1><0|: lower-right block is t |1><1|
        let rho = DensityMatrix::basis_state(2, 0);
        let a = ComplexMatrix::zeros(2);
        let c = pauli::lower();
        let t = 0.01;
        let out = small_time_lifted_state(&rho, &a, &c, t);
        // atom index 1, probe 1 -> lifted index 3
        assert!((out[(3, 3)].re - t).abs() < 1e-15);
        assert!((out[(1, 1)]).norm() < 1e-15);
        // top-left keeps rho - t/2 {C*C, rho} = (1-t)|0><0| here (A=0, C*C = |0><0|).
        assert!((out[(0, 0)].re - (1.0 - t)).abs() < 1e-15);
    }

    #[test]
    fn small_time_state_matches_exact_conjugation_at_order_three_halves() {
        // Exact-exponential oracle: the truncation error vs the exact dressed
        // state scales like t^{3/2}; fitted exponent must be at least 1.4.
        let mut rng = StdRng::seed_from_u64(88);
        let rho = random_density(2, &mut rng);
        let a = random_hermitian(2, &mut rng);
        let c_op = pauli::lower();
        let mut ts = Vec::new();
        let mut errs = Vec::new();
        for k in 2..=5 {
            let t = 10f64.powi(-k);
            let approx = small_time_lifted_state(&rho, &a, &c_op, t);
            // Full lifted Hamiltonian with C/sqrt(t) interaction.
            let mut h = ComplexMatrix::zeros(4);
            for i in 0..2 {
                for j in 0..2 {
                    h[(2 * i, 2 * j)] = a[(i, j)];
                    h[(2 * i + 1, 2 * j)] = C_I * c_op[(i, j)] / Complex64::new(t.sqrt(), 0.0);
                    h[(2 * i, 2 * j + 1)] =
                        -C_I * c_op.adjoint()[(i, j)] / Complex64::new(t.sqrt(), 0.0);
                }
            }
            let exact = conjugate_by_evolution(&tensor_lift(&rho, 1).unwrap(), &h, t).unwrap();
            ts.push(t);
            errs.push(exact.dist_max(&approx).max(1e-300));
        }
        let slope = crate::stats::log_log_slope(&ts, &errs);
        assert!(slope >= 1.4, "fitted slope {slope}");
    }

    #[test]
    fn projector_pair_diagonal_and_tilted() {
        let pair = projector_pair(0.0);
        assert!(pair.diagonal);
        assert_eq!(pair.p0[(0, 0)].re, 1.0);
        assert_eq!(pair.p0[(1, 1)].re, 0.0);
        assert_eq!(pair.p1[(1, 1)].re, 1.0);

        let pair = projector_pair(std::f64::consts::FRAC_PI_4);
        assert!(!pair.diagonal);
        for i in 0..2 {
            for j in 0..2 {
                assert!((pair.p0[(i, j)].re.abs() - 0.5).abs() < 1e-15);
                assert!((pair.p1[(i, j)].re.abs() - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projector_pairs_idempotent_orthogonal_complete() {
        let mut rng = StdRng::seed_from_u64(100);
        for _ in 0..100 {
            let phi = (rng.random::<f64>() - 0.5) * 20.0;
            let pair = projector_pair(phi);
            let id = ComplexMatrix::identity(2);
            assert!(pair.p0.matmul(&pair.p0).dist_max(&pair.p0) < 1e-12);
            assert!(pair.p1.matmul(&pair.p1).dist_max(&pair.p1) < 1e-12);
            assert!(pair.p0.matmul(&pair.p1).max_abs() < 1e-12);
            assert!((&pair.p0 + &pair.p1).dist_max(&id) < 1e-12);
        }
    }

    #[test]
    fn pure_state_density_is_valid() {
        let psi = PureState::normalized(vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.3, 0.2),
        ])
        .unwrap();
        let rho = psi.to_density();
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        assert!((rho.purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_distance_basics() {
        let zero = DensityMatrix::basis_state(2, 0);
        let one = DensityMatrix::basis_state(2, 1);
        assert!((trace_distance(&zero, &one) - 1.0).abs() < 1e-14);
        assert!(trace_distance(&zero, &zero) < 1e-15);
    }
}
