//! The diagonal operator `A`, its spectral projectors `P`/`Q`, semigroup
//! actions with the dichotomy estimates, the spectral gap check, and the
//! Henry-type series bound.
//!
//! Everything is held in eigenbasis form: `A e_k = lambda_k e_k` with
//! `0 < lambda_1 <= lambda_2 <= ...`, `P` projects onto the first `N` modes
//! and `Q = I - P`. The dichotomy estimates are then exact componentwise
//! computations, and the fractional power `A^sigma` never materializes a
//! singular kernel.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::state::StateVec;

/// Which spectral block an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// The low-mode projector `P = P_N`.
    P,
    /// The high-mode projector `Q = I - P`.
    Q,
    Full,
}

/// `sigma^sigma` with the continuity convention `0^0 = 1`.
#[inline]
pub fn sigma_pow_sigma(sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        sigma.powf(sigma)
    }
}

/// Eigenvalues of `A` up to the Galerkin cutoff, the split index `N`, and the
/// fractional exponent `sigma` of the state space `D(A^sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    lambdas: Vec<f64>,
    split: usize,
    sigma: f64,
    sigma_weights: Vec<f64>,
}

impl Spectrum {
    pub fn new(lambdas: Vec<f64>, split: usize, sigma: f64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Config("spectrum needs at least one eigenvalue".into()));
        }
        if !(lambdas[0] > 0.0) || !lambdas.iter().all(|l| l.is_finite()) {
            return Err(Error::Config("eigenvalues must be positive and finite".into()));
        }
        if !lambdas.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Config("eigenvalues must be nondecreasing".into()));
        }
        if split == 0 || split >= lambdas.len() {
            return Err(Error::Config(format!(
                "split index N = {split} must satisfy 1 <= N < K = {}",
                lambdas.len()
            )));
        }
        if !(lambdas[split - 1] < lambdas[split]) {
            return Err(Error::Config(format!(
                "need a strict gap lambda_N < lambda_N+1 at N = {split}"
            )));
        }
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::Config(format!("sigma must lie in [0, 1), got {sigma}")));
        }
        let sigma_weights = lambdas.iter().map(|l| l.powf(sigma)).collect();
        Ok(Self {
            lambdas,
            split,
            sigma,
            sigma_weights,
        })
    }

    /// The family `lambda_k = k^power`, `k = 1..=count`.
    pub fn power_family(power: f64, count: usize, split: usize, sigma: f64) -> Result<Self> {
        if !(power > 0.0) {
            return Err(Error::Config(format!("power must be positive, got {power}")));
        }
        let lambdas = (1..=count).map(|k| (k as f64).powf(power)).collect();
        Self::new(lambdas, split, sigma)
    }

    pub fn count(&self) -> usize {
        self.lambdas.len()
    }

    /// Split index `N` (number of `P` modes).
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `lambda_N`, the top of the `P` block.
    pub fn lambda_low(&self) -> f64 {
        self.lambdas[self.split - 1]
    }

    /// `lambda_{N+1}`, the bottom of the `Q` block.
    pub fn lambda_high(&self) -> f64 {
        self.lambdas[self.split]
    }

    /// Precomputed `lambda_k^sigma`.
    pub fn sigma_weights(&self) -> &[f64] {
        &self.sigma_weights
    }

    /// `||u||_sigma = (sum lambda_k^{2 sigma} u_k^2)^{1/2}`.
    pub fn sigma_norm(&self, v: &StateVec) -> f64 {
        debug_assert_eq!(v.len(), self.count());
        v.coeffs()
            .iter()
            .zip(&self.sigma_weights)
            .map(|(u, w)| (w * u).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn zero_state(&self) -> StateVec {
        StateVec::zeros(self.count())
    }

    /// Whether mode `k` (0-based) belongs to the given block.
    #[inline]
    pub fn in_part(&self, k: usize, part: Part) -> bool {
        match part {
            Part::P => k < self.split,
            Part::Q => k >= self.split,
            Part::Full => true,
        }
    }

    pub fn project(&self, part: Part, v: &StateVec) -> StateVec {
        let mut out = StateVec::zeros(v.len());
        for k in 0..v.len() {
            if self.in_part(k, part) {
                out[k] = v[k];
            }
        }
        out
    }

    /// `A^power e^{-A t}` restricted to a block, applied componentwise:
    /// `v_k -> lambda_k^power e^{-lambda_k t} v_k`. Exact for the diagonal
    /// operator. The `Q` semigroup is forward-only: `t < 0` is rejected.
    pub fn semigroup_apply(&self, t: f64, v: &StateVec, part: Part, power: f64) -> Result<StateVec> {
        if part == Part::Q && t < 0.0 {
            return Err(Error::Contract(
                "backward evolution of the Q block is not defined".into(),
            ));
        }
        let mut out = StateVec::zeros(v.len());
        for k in 0..v.len() {
            if self.in_part(k, part) {
                out[k] = self.lambdas[k].powf(power) * (-self.lambdas[k] * t).exp() * v[k];
            }
        }
        Ok(out)
    }

    /// Spectral gap check: the split admits a contraction with target `mu`
    /// for a nonlinearity with Lipschitz constant `lipschitz` iff
    ///
    /// ```text
    /// lambda_{N+1} - lambda_N >=
    ///     (2 L / mu) (lambda_N^s + s^s Gamma(1-s) (lambda_{N+1}-lambda_N)^s + lambda_{N+1}^s)
    /// ```
    ///
    /// with `s = sigma` and the convention `s^s = 1` at `s = 0`.
    pub fn check_gap(&self, lipschitz: f64, mu: f64) -> Result<GapReport> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Domain(format!("mu must lie in (0, 1), got {mu}")));
        }
        if !(lipschitz >= 0.0) {
            return Err(Error::Domain(format!(
                "Lipschitz constant must be nonnegative, got {lipschitz}"
            )));
        }
        let s = self.sigma;
        let (lo, hi) = (self.lambda_low(), self.lambda_high());
        let gap = hi - lo;
        let rhs = (2.0 * lipschitz / mu)
            * (lo.powf(s) + sigma_pow_sigma(s) * gamma(1.0 - s) * gap.powf(s) + hi.powf(s));
        let beta = lo + (2.0 / mu) * lipschitz * lo.powf(s);
        let satisfied = gap >= rhs;
        let contraction_bound = if lipschitz == 0.0 {
            0.0
        } else if beta > lo && beta < hi {
            lipschitz
                * (lo.powf(s) / (beta - lo)
                    + sigma_pow_sigma(s) * gamma(1.0 - s) / (hi - beta).powf(1.0 - s)
                    + hi.powf(s) / (hi - beta))
        } else {
            f64::INFINITY
        };
        Ok(GapReport {
            lhs: gap,
            rhs,
            satisfied,
            beta,
            margin: gap - rhs,
            contraction_bound,
            lipschitz,
            mu,
        })
    }

    /// Constants `(M, kappa)` with `||A^sigma e^{-At}|| <= M t^{-sigma} e^{-kappa t}`.
    /// For `sigma = 0` the diagonal form gives the sharp pair `(1, lambda_1)`.
    /// For `sigma > 0` that pair is false at large `t` (the left side tends to
    /// `lambda_1^sigma e^{-lambda_1 t}`, the right side decays faster), so half
    /// the decay rate is ceded: `lambda^s e^{-lambda t} <= (2s/(e t))^s e^{-lambda_1 t / 2}`
    /// and `(2s/e)^s <= 1` on `(0, 1)`.
    pub fn semigroup_constants(&self) -> (f64, f64) {
        if self.sigma == 0.0 {
            (1.0, self.lambdas[0])
        } else {
            (1.0, self.lambdas[0] / 2.0)
        }
    }
}

/// Outcome of the spectral gap check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    /// `lambda_{N+1} - lambda_N`
    pub lhs: f64,
    /// Right-hand side of the gap condition.
    pub rhs: f64,
    pub satisfied: bool,
    /// `beta = lambda_N + (2/mu) L lambda_N^sigma`; lies in
    /// `(lambda_N, lambda_{N+1})` whenever the condition holds and `L > 0`.
    pub beta: f64,
    pub margin: f64,
    /// The contraction constant of the Lyapunov-Perron map in the
    /// beta-weighted norm; `<= mu` whenever `satisfied`.
    pub contraction_bound: f64,
    pub lipschitz: f64,
    pub mu: f64,
}

/// `E_sigma(x) = sum_{n >= 0} x^{n (1-sigma)} / Gamma(n (1-sigma) + 1)`,
/// summed to relative tolerance 1e-12. `E_0` is the exponential.
pub fn e_sigma_series(sigma: f64, x: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::Domain(format!("sigma must lie in [0, 1), got {sigma}")));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("series argument must be >= 0, got {x}")));
    }
    if sigma == 0.0 {
        return Ok(x.exp());
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let step = 1.0 - sigma;
    let lx = x.ln();
    let mut sum = 1.0; // n = 0 term
    let mut peaked = false;
    let mut prev = f64::INFINITY;
    for n in 1..200_000u64 {
        let e = n as f64 * step;
        let term = (e * lx - ln_gamma(e + 1.0)).exp();
        sum += term;
        if term < prev {
            peaked = true;
        }
        if peaked && term <= 1e-12 * sum {
            break;
        }
        prev = term;
        if !sum.is_finite() {
            break;
        }
    }
    Ok(sum)
}

/// Right-hand side of the Henry-type a-priori bound at the final time:
///
/// ```text
/// e^{kappa t} ||u(t)||_sigma <= e^{kappa T} M e^{n} ||x||_sigma E_sigma(theta T),
/// theta = [M L e^{n} Gamma(1 - sigma)]^{1/(1-sigma)},   n = int_0^T |z| dr.
/// ```
///
/// `z_abs_integral` is `n`; it enters exponentiated, which is the form the
/// Gronwall step actually uses (`e^{int_s^t z} <= e^{n}`).
pub fn apriori_bound(
    sigma: f64,
    lipschitz: f64,
    x_norm: f64,
    t_final: f64,
    z_abs_integral: f64,
    big_m: f64,
    kappa: f64,
) -> Result<f64> {
    if sigma >= 1.0 {
        return Err(Error::Domain(format!(
            "a-priori bound needs sigma < 1 (exponent 1/(1-sigma)), got {sigma}"
        )));
    }
    for (name, v) in [
        ("lipschitz", lipschitz),
        ("x_norm", x_norm),
        ("t_final", t_final),
        ("z_abs_integral", z_abs_integral),
        ("kappa", kappa),
    ] {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
        }
    }
    if !(big_m >= 1.0) {
        return Err(Error::Domain(format!("M must be >= 1, got {big_m}")));
    }
    let n_exp = z_abs_integral.exp();
    let theta = (big_m * lipschitz * n_exp * gamma(1.0 - sigma)).powf(1.0 / (1.0 - sigma));
    Ok((kappa * t_final).exp() * big_m * n_exp * x_norm * e_sigma_series(sigma, theta * t_final)?)
}
