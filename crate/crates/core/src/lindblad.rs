//! Deterministic master-equation references: the ensemble-average evolution
//! shared by all the unravellings, integrated with classic RK4 on the matrix
//! ODE, in both the state (Schroedinger) and observable (Heisenberg) picture.

use crate::chain::ChannelSpec;
use crate::error::Result;
use crate::linalg::{C_I, ComplexMatrix};
use crate::qstate::DensityMatrix;

/// drho/dt = -i[A, rho] + sum_j (C_j rho C_j* - {C_j* C_j, rho}/2).
pub fn lindblad_rhs(a: &ComplexMatrix, channels: &[ChannelSpec], rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = -&a.commutator(rho).scale(C_I);
    for ch in channels {
        let c_adj = ch.c.adjoint();
        let sandwich = ch.c.matmul(rho).matmul(&c_adj);
        let cc = c_adj.matmul(&ch.c);
        out = &(&out + &sandwich) - &cc.anticommutator(rho).scale_re(0.5);
    }
    out
}

/// Heisenberg-picture adjoint: dB/dt = i[A, B] + sum_j (C_j* B C_j - {C_j* C_j, B}/2).
pub fn adjoint_rhs(a: &ComplexMatrix, channels: &[ChannelSpec], b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = a.commutator(b).scale(C_I);
    for ch in channels {
        let c_adj = ch.c.adjoint();
        let sandwich = c_adj.matmul(b).matmul(&ch.c);
        let cc = c_adj.matmul(&ch.c);
        out = &(&out + &sandwich) - &cc.anticommutator(b).scale_re(0.5);
    }
    out
}

fn rk4(
    rhs: impl Fn(&ComplexMatrix) -> ComplexMatrix,
    state: &ComplexMatrix,
    dt: f64,
) -> ComplexMatrix {
    let k1 = rhs(state);
    let k2 = rhs(&(state + &k1.scale_re(dt / 2.0)));
    let k3 = rhs(&(state + &k2.scale_re(dt / 2.0)));
    let k4 = rhs(&(state + &k3.scale_re(dt)));
    let incr = &(&k1 + &k2.scale_re(2.0)) + &(&k3.scale_re(2.0) + &k4);
    state + &incr.scale_re(dt / 6.0)
}

/// Integrate the master equation, returning the state at each checkpoint.
/// The internal step is `dt` subdivided to land exactly on checkpoints.
pub fn evolve_state(
    rho0: &DensityMatrix,
    a: &ComplexMatrix,
    channels: &[ChannelSpec],
    checkpoints: &[f64],
    dt: f64,
) -> Result<Vec<DensityMatrix>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut state = rho0.matrix().clone();
    let mut now = 0.0;
    for &target in checkpoints {
        let span = target - now;
        if span < 0.0 {
            return Err(crate::error::Error::InvalidInput(
                "checkpoints must be nondecreasing".into(),
            ));
        }
        if span > 0.0 {
            let steps = (span / dt).ceil().max(1.0) as usize;
            let step = span / steps as f64;
            for _ in 0..steps {
                state = rk4(|m| lindblad_rhs(a, channels, m), &state, step);
            }
            now = target;
        }
        out.push(crate::qstate::clip_and_normalize(&state)?);
    }
    Ok(out)
}

/// Integrate the Heisenberg equation for an observable up to time `s`.
pub fn evolve_observable(
    b: &ComplexMatrix,
    a: &ComplexMatrix,
    channels: &[ChannelSpec],
    s: f64,
    dt: f64,
) -> ComplexMatrix {
    let mut obs = b.clone();
    if s <= 0.0 {
        return obs;
    }
    let steps = (s / dt).ceil().max(1.0) as usize;
    let step = s / steps as f64;
    for _ in 0..steps {
        obs = rk4(|m| adjoint_rhs(a, channels, m), &obs, step);
    }
    obs
}
