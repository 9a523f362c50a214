//! Integration of the conjugated random evolution equation
//!
//! ```text
//! du/dt + A u = z(theta_t w) u + G(theta_t w, u),      G(w, u) = e^{-z(w)} F(e^{z(w)} u),
//! ```
//!
//! and the transform back to the original frame `v = e^{z(theta_t w)} u`.
//! The scheme is exponential Euler with the stiff diagonal part handled
//! exactly:
//!
//! ```text
//! u_{n+1} = e^{(-A + z_n) dt} u_n + dt phi1(-A dt) G(z_n, u_n),
//! ```
//!
//! `z_n` evaluated at the left endpoint (the càdlàg representative), so jumps
//! in `z` are stepped over, never differentiated.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::NoiseScenario;
use crate::ou::{OuPath, TAIL_MARGIN};
use crate::spectral::Spectrum;
use crate::state::StateVec;

/// State norm beyond which integration aborts (a user-supplied nonlinearity
/// may violate its declared Lipschitz constant).
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Nonlinearity presets. Each carries an exact Lipschitz constant for
/// `F: D(A^sigma) -> H` (certifiable, which arbitrary user code would not
/// be), satisfies `F(0) = 0`, and is C1.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Zero,
    /// `F(u) = eps u`, commutes with the projectors.
    LinearDiagonal { eps: f64 },
    /// `F(u) = eps u_from e_to` (0-based mode indices).
    CrossCouple { eps: f64, from: usize, to: usize },
    /// `F_k(u) = eps tanh(u_k)` componentwise.
    Saturating { eps: f64 },
}

impl Nonlinearity {
    pub fn eval(&self, u: &StateVec) -> StateVec {
        match *self {
            Nonlinearity::Zero => StateVec::zeros(u.len()),
            Nonlinearity::LinearDiagonal { eps } => u.scaled(eps),
            Nonlinearity::CrossCouple { eps, from, to } => {
                let mut out = StateVec::zeros(u.len());
                out[to] = eps * u[from];
                out
            }
            Nonlinearity::Saturating { eps } => {
                StateVec::new(u.iter().map(|x| eps * x.tanh()).collect())
            }
        }
    }

    /// Directional derivative `D_u F(u)[h]`.
    pub fn deriv_apply(&self, u: &StateVec, h: &StateVec) -> StateVec {
        match *self {
            Nonlinearity::Zero => StateVec::zeros(h.len()),
            Nonlinearity::LinearDiagonal { eps } => h.scaled(eps),
            Nonlinearity::CrossCouple { eps, from, to } => {
                let mut out = StateVec::zeros(h.len());
                out[to] = eps * h[from];
                out
            }
            Nonlinearity::Saturating { eps } => StateVec::new(
                u.iter()
                    .zip(h.iter())
                    .map(|(x, hh)| eps / x.cosh().powi(2) * hh)
                    .collect(),
            ),
        }
    }

    /// Exact Lipschitz constant of `F: D(A^sigma) -> H` for the given
    /// spectrum (the `H -> sigma` norm gap contributes `lambda^{-sigma}` of
    /// the mode where the sup is attained).
    pub fn lipschitz(&self, spec: &Spectrum) -> f64 {
        let l1 = spec.lambdas()[0];
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::LinearDiagonal { eps } => eps.abs() * l1.powf(-spec.sigma()),
            Nonlinearity::CrossCouple { eps, from, .. } => {
                eps.abs() * spec.lambdas()[from].powf(-spec.sigma())
            }
            Nonlinearity::Saturating { eps } => eps.abs() * l1.powf(-spec.sigma()),
        }
    }

    pub fn validate(&self, spec: &Spectrum) -> Result<()> {
        if let Nonlinearity::CrossCouple { from, to, .. } = *self {
            if from >= spec.count() || to >= spec.count() {
                return Err(Error::Config(format!(
                    "cross-couple modes ({from}, {to}) exceed cutoff K = {}",
                    spec.count()
                )));
            }
        }
        Ok(())
    }
}

/// `G(z, u) = e^{-z} F(e^{z} u)`; has the same Lipschitz constant as `F`.
pub fn conjugated_g(nl: &Nonlinearity, z: f64, u: &StateVec) -> StateVec {
    let ez = z.exp();
    nl.eval(&u.scaled(ez)).scaled(1.0 / ez)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// States of the conjugated equation (`u`).
    Conjugated,
    /// States of the original equation (`v = e^{z} u`).
    Original,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub frame: Frame,
}

impl Trajectory {
    pub fn sup_sigma_distance(&self, other: &Trajectory, spec: &Spectrum) -> f64 {
        debug_assert_eq!(self.times.len(), other.times.len());
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| spec.sigma_norm(&a.sub(b)))
            .fold(0.0, f64::max)
    }
}

#[inline]
fn phi1(m: f64) -> f64 {
    if m == 0.0 {
        1.0
    } else {
        m.exp_m1() / m
    }
}

/// Exponential-Euler integration of the conjugated equation over `[0, t_final]`.
/// Deterministic given the OU path; exact on the linear diagonal part.
pub fn integrate_with_ou(
    ou: &OuPath,
    spec: &Spectrum,
    nl: &Nonlinearity,
    x: &StateVec,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && t_final > 0.0) {
        return Err(Error::Config(format!(
            "need positive horizon and step, got T = {t_final}, dt = {dt}"
        )));
    }
    if x.len() != spec.count() {
        return Err(Error::Contract(format!(
            "state has {} coefficients, spectrum {}",
            x.len(),
            spec.count()
        )));
    }
    nl.validate(spec)?;
    let (_, hi) = ou.window();
    if t_final > hi + 1e-12 {
        return Err(Error::range("integration window", (0.0, t_final), ou.window()));
    }

    let n_steps = (t_final / dt).round() as usize;
    let k = spec.count();
    let decay: Vec<f64> = spec.lambdas().iter().map(|l| (-l * dt).exp()).collect();
    let phi: Vec<f64> = spec.lambdas().iter().map(|l| dt * phi1(-l * dt)).collect();

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut u = x.clone();
    times.push(0.0);
    states.push(u.clone());

    for n in 0..n_steps {
        let t = n as f64 * dt;
        let z = ou.value(t);
        let g = conjugated_g(nl, z, &u);
        let ezdt = (z * dt).exp();
        let mut next = StateVec::zeros(k);
        for j in 0..k {
            next[j] = decay[j] * ezdt * u[j] + phi[j] * g[j];
        }
        let norm = spec.sigma_norm(&next);
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Divergence { step: n + 1, norm });
        }
        u = next;
        times.push((n + 1) as f64 * dt);
        states.push(u.clone());
    }

    Ok(Trajectory {
        times,
        states,
        frame: Frame::Conjugated,
    })
}

/// Convenience wrapper that sweeps the OU path itself.
pub fn integrate(
    scenario: &NoiseScenario,
    spec: &Spectrum,
    nl: &Nonlinearity,
    x: &StateVec,
    t_final: f64,
    dt: f64,
    tail: f64,
) -> Result<Trajectory> {
    let ou = OuPath::from_scenario(scenario, 0.0_f64.min(scenario.t_min + tail + TAIL_MARGIN), t_final, tail)?;
    integrate_with_ou(&ou, spec, nl, x, t_final, dt)
}

/// Flip a conjugated trajectory to the original frame by the pointwise
/// multiplier `e^{z(theta_t w)}`.
pub fn to_original(traj: &Trajectory, ou: &OuPath) -> Result<Trajectory> {
    if traj.frame != Frame::Conjugated {
        return Err(Error::Contract("trajectory is already in the original frame".into()));
    }
    Ok(Trajectory {
        times: traj.times.clone(),
        states: traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, u)| u.scaled(ou.value(t).exp()))
            .collect(),
        frame: Frame::Original,
    })
}

/// Inverse of [`to_original`].
pub fn to_conjugated(traj: &Trajectory, ou: &OuPath) -> Result<Trajectory> {
    if traj.frame != Frame::Original {
        return Err(Error::Contract("trajectory is already in the conjugated frame".into()));
    }
    Ok(Trajectory {
        times: traj.times.clone(),
        states: traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, v)| v.scaled((-ou.value(t)).exp()))
            .collect(),
        frame: Frame::Conjugated,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolutionConvergenceRow {
    pub alpha: f64,
    pub median_sup_error: f64,
    pub frac_below_eps: f64,
    pub eps: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SolutionConvergeParams {
    pub alphas: Vec<f64>,
    pub n_seeds: usize,
    pub seed0: u64,
    pub t_final: f64,
    pub dt: f64,
    pub mesh: f64,
    pub tail: f64,
    pub eps: f64,
    pub x: StateVec,
}

/// Coupled solution-convergence experiment: per alpha, the median over seeds
/// of `sup_{[0,T]} || . ||_sigma` distance to the Brownian solution, in both
/// the conjugated and the original frame. Returns `(conjugated, original)`
/// tables. Seeds whose integration diverges contribute `+inf` (which the
/// median tolerates).
pub fn solution_convergence(
    spec: &Spectrum,
    nl: &Nonlinearity,
    params: &SolutionConvergeParams,
) -> Result<(Vec<SolutionConvergenceRow>, Vec<SolutionConvergenceRow>)> {
    for &a in &params.alphas {
        if !(a > 1.0 && a <= 2.0) {
            return Err(Error::Config(format!("alpha must lie in (1, 2], got {a}")));
        }
    }
    let t = params.t_final;
    let t_min = -(params.tail + TAIL_MARGIN + params.mesh);

    let per_seed: Vec<Vec<(f64, f64)>> = (0..params.n_seeds)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, f64)>> {
            let seed = params.seed0 + i as u64;
            let reference = NoiseScenario::generate(2.0, seed, t_min, t, params.mesh)?;
            let z_ref = OuPath::from_scenario(&reference, 0.0, t, params.tail)?;
            let u_ref = integrate_with_ou(&z_ref, spec, nl, &params.x, t, params.dt)?;
            let v_ref = to_original(&u_ref, &z_ref)?;
            params
                .alphas
                .iter()
                .map(|&alpha| {
                    if alpha == 2.0 {
                        return Ok((0.0, 0.0)); // identical scenario under coupling
                    }
                    let sc = NoiseScenario::generate(alpha, seed, t_min, t, params.mesh)?;
                    let z = OuPath::from_scenario(&sc, 0.0, t, params.tail)?;
                    match integrate_with_ou(&z, spec, nl, &params.x, t, params.dt) {
                        Ok(u) => {
                            let v = to_original(&u, &z)?;
                            Ok((
                                u.sup_sigma_distance(&u_ref, spec),
                                v.sup_sigma_distance(&v_ref, spec),
                            ))
                        }
                        Err(Error::Divergence { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let build = |pick: &dyn Fn(&(f64, f64)) -> f64| {
        params
            .alphas
            .iter()
            .enumerate()
            .map(|(j, &alpha)| {
                let mut sups: Vec<f64> = per_seed.iter().map(|row| pick(&row[j])).collect();
                sups.sort_by(f64::total_cmp);
                let below = sups.iter().filter(|&&d| d < params.eps).count();
                SolutionConvergenceRow {
                    alpha,
                    median_sup_error: sups[sups.len() / 2],
                    frac_below_eps: below as f64 / sups.len() as f64,
                    eps: params.eps,
                    n: params.n_seeds,
                }
            })
            .collect::<Vec<_>>()
    };
    Ok((build(&|p| p.0), build(&|p| p.1)))
}
