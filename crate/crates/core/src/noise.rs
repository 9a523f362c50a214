//! Coupled sample paths of the Brownian motion `W`, the `alpha/2`-stable
//! subordinator `S`, and the subordinated process `L_t = W(S_t)`.
//!
//! All randomness flows through counter-mode ChaCha streams derived from one
//! seed, so a scenario is a pure function of `(alpha, seed, horizon, mesh)`
//! and the Brownian path is bit-identical across alphas generated from the
//! same seed. That coupling is what every alpha -> 2 convergence experiment
//! in this crate relies on.
//!
//! Two-sided paths are glued from two independent one-sided increment streams
//! at 0; the negative-time subordinator is mirrored (`S(-t) = -S'(t-)`), which
//! keeps it nondecreasing with `S(0) = 0` and makes the shift well defined for
//! negative times.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::path::{uniform_grid, CadlagPath, PathKind};

// Stream ids of the per-seed ChaCha generators.
const STREAM_BM_POS: u64 = 0;
const STREAM_BM_NEG: u64 = 1;
const STREAM_SUB_POS: u64 = 2;
const STREAM_SUB_NEG: u64 = 3;
const STREAM_BRIDGE: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `C(alpha) = 2^{-(1 - alpha/2)} * alpha / Gamma(1 - alpha/2)`, the constant
/// in the intensity measure `C(alpha) dx / |x|^{1 + alpha/2}` of the driving
/// Poisson random measure. This is the normalization under which the
/// subordinated Brownian motion is standard alpha-stable
/// (`E exp(iu L_t) = exp(-t |u|^alpha)`).
///
/// Writing `s = 1 - alpha/2`, `s Gamma(s) -> 1` gives
/// `C(alpha) = 2^{-s} (alpha/2) * 2s / (s Gamma(s)) ~ alpha (2-alpha)/2`, so
/// [`intensity_ratio`] tends to 1 as `alpha -> 2`.
pub fn levy_intensity_constant(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Domain(format!(
            "levy_intensity_constant requires alpha in (0, 2), got {alpha}"
        )));
    }
    Ok(2f64.powf(alpha / 2.0 - 1.0) * alpha / gamma(1.0 - alpha / 2.0))
}

/// `C(alpha) / (2 - alpha)`, which tends to 1 as `alpha -> 2` and quantifies
/// the degeneration rate of the jump intensity at the Gaussian endpoint.
pub fn intensity_ratio(alpha: f64) -> Result<f64> {
    Ok(levy_intensity_constant(alpha)? / (2.0 - alpha))
}

#[inline]
fn clamp_open01(u: f64) -> f64 {
    u.clamp(1e-15, 1.0 - 1e-15)
}

/// Standard positive `a`-stable variate (`a` in (0,1), totally skewed), with
/// Laplace transform `E exp(-l S) = exp(-l^a)`. Chambers-Mallows-Stuck in
/// Kanter's form; exact, no series truncation.
pub fn sample_positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    debug_assert!(a > 0.0 && a < 1.0);
    let u = clamp_open01(rng.random::<f64>()) * PI;
    let w = -clamp_open01(rng.random::<f64>()).ln();
    let s1 = (a * u).sin() / u.sin().powf(1.0 / a);
    let s2 = (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a);
    s1 * s2
}

fn two_sided_cumulative(
    t_min: f64,
    t_max: f64,
    mesh: f64,
    mut draw_pos: impl FnMut() -> f64,
    mut draw_neg: impl FnMut() -> f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let times = uniform_grid(t_min, t_max, mesh)?;
    let origin = times.iter().position(|&t| t == 0.0).expect("grid contains 0");
    let mut values = vec![0.0; times.len()];
    for i in origin..times.len() - 1 {
        values[i + 1] = values[i] + draw_pos();
    }
    for i in (0..origin).rev() {
        values[i] = values[i + 1] - draw_neg();
    }
    Ok((times, values))
}

/// Two-sided `alpha/2`-stable subordinator path on `[t_min, t_max]`, anchored
/// at `S(0) = 0`. Each mesh increment is `mesh^{2/alpha}` times a standard
/// positive `alpha/2`-stable variate.
pub fn sample_subordinator(
    alpha: f64,
    t_min: f64,
    t_max: f64,
    mesh: f64,
    seed: u64,
) -> Result<CadlagPath> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Domain(format!(
            "subordinator requires alpha in (1, 2), got {alpha}"
        )));
    }
    if !(mesh > 0.0) {
        return Err(Error::Config(format!("mesh must be positive, got {mesh}")));
    }
    let a = alpha / 2.0;
    let scale = mesh.powf(2.0 / alpha);
    let mut pos = stream_rng(seed, STREAM_SUB_POS);
    let mut neg = stream_rng(seed, STREAM_SUB_NEG);
    let (times, values) = two_sided_cumulative(
        t_min,
        t_max,
        mesh,
        || scale * sample_positive_stable(a, &mut pos),
        || scale * sample_positive_stable(a, &mut neg),
    )?;
    CadlagPath::new(times, values, PathKind::PiecewiseConstant)
}

/// Two-sided Brownian path on `[t_min, t_max]`, piecewise linear, `W(0) = 0`.
pub fn sample_brownian(t_min: f64, t_max: f64, mesh: f64, seed: u64) -> Result<CadlagPath> {
    if !(mesh > 0.0) {
        return Err(Error::Config(format!("mesh must be positive, got {mesh}")));
    }
    let sd = mesh.sqrt();
    let mut pos = stream_rng(seed, STREAM_BM_POS);
    let mut neg = stream_rng(seed, STREAM_BM_NEG);
    let (times, values) = two_sided_cumulative(
        t_min,
        t_max,
        mesh,
        || sd * pos.sample::<f64, _>(StandardNormal),
        || sd * neg.sample::<f64, _>(StandardNormal),
    )?;
    CadlagPath::new(times, values, PathKind::PiecewiseLinear)
}

/// Compose `W` after `S` without refinement: the subordinated path
/// `L(t) = W(S(t))` sampled on the grid of `S`. Fails with a range error when
/// the subordinator leaves the stored Brownian domain (no generator is
/// available here to extend it; use [`NoiseScenario::generate`] for that).
pub fn subordinate(brownian: &CadlagPath, subordinator: &CadlagPath) -> Result<CadlagPath> {
    let (wlo, whi) = brownian.horizon();
    let n = subordinator.len();
    let (smin, smax) = (subordinator.value(0), subordinator.value(n - 1));
    if smin < wlo || smax > whi {
        return Err(Error::range(
            "subordinated evaluation of Brownian path",
            (smin, smax),
            (wlo, whi),
        ));
    }
    let times: Vec<f64> = (0..n).map(|i| subordinator.time(i)).collect();
    let values: Vec<f64> = (0..n)
        .map(|i| brownian.value_at(subordinator.value(i)))
        .collect();
    CadlagPath::new(times, values, PathKind::PiecewiseConstant)
}

/// Brownian samples refined at the subordinator targets.
///
/// Interior targets are filled in by Brownian bridges between the two
/// bracketing known points; targets beyond either end extend the path by
/// independent scaled increments. Draw order is fixed (left extension
/// outward, interior left to right, right extension outward) so the result
/// is a pure function of the inputs and the stream.
fn refine_brownian_at(
    times: &[f64],
    values: &[f64],
    targets: &[f64],
    rng: &mut ChaCha12Rng,
) -> (Vec<f64>, Vec<f64>) {
    let lo = times[0];
    let hi = times[times.len() - 1];
    let normal = |rng: &mut ChaCha12Rng| rng.sample::<f64, _>(StandardNormal);

    let mut left: Vec<(f64, f64)> = Vec::new();
    {
        let mut anchor_t = lo;
        let mut anchor_v = values[0];
        for &p in targets.iter().rev().filter(|&&p| p < lo) {
            let v = anchor_v + (anchor_t - p).sqrt() * normal(rng);
            left.push((p, v));
            anchor_t = p;
            anchor_v = v;
        }
        left.reverse();
    }

    let mut merged_t: Vec<f64> = left.iter().map(|&(t, _)| t).collect();
    let mut merged_v: Vec<f64> = left.iter().map(|&(_, v)| v).collect();

    let interior: Vec<f64> = targets
        .iter()
        .copied()
        .filter(|&p| p >= lo && p <= hi)
        .collect();
    let mut k = 0usize;
    for i in 0..times.len() {
        merged_t.push(times[i]);
        merged_v.push(values[i]);
        if i + 1 == times.len() {
            break;
        }
        let (seg_hi, seg_hv) = (times[i + 1], values[i + 1]);
        let mut anchor_t = times[i];
        let mut anchor_v = values[i];
        while k < interior.len() && interior[k] <= seg_hi {
            let p = interior[k];
            k += 1;
            if p <= anchor_t || p >= seg_hi {
                continue; // already a grid point
            }
            let span = seg_hi - anchor_t;
            let mean = anchor_v + (seg_hv - anchor_v) * (p - anchor_t) / span;
            let var = (p - anchor_t) * (seg_hi - p) / span;
            let v = mean + var.sqrt() * normal(rng);
            merged_t.push(p);
            merged_v.push(v);
            anchor_t = p;
            anchor_v = v;
        }
    }

    let mut anchor_t = hi;
    let mut anchor_v = values[values.len() - 1];
    for &p in targets.iter().filter(|&&p| p > hi) {
        let v = anchor_v + (p - anchor_t).sqrt() * normal(rng);
        merged_t.push(p);
        merged_v.push(v);
        anchor_t = p;
        anchor_v = v;
    }

    (merged_t, merged_v)
}

/// One noise realization: the Brownian path, the subordinator (absent for
/// `alpha = 2`, where the time change is the identity), and the subordinated
/// path, all coupled through a single seed.
#[derive(Debug, Clone)]
pub struct NoiseScenario {
    pub alpha: f64,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub mesh: f64,
    pub brownian: CadlagPath,
    pub subordinator: Option<CadlagPath>,
    pub subordinated: CadlagPath,
}

impl NoiseScenario {
    pub fn generate(alpha: f64, seed: u64, t_min: f64, t_max: f64, mesh: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (1, 2], got {alpha}"
            )));
        }
        let brownian = sample_brownian(t_min, t_max, mesh, seed)?;
        if alpha == 2.0 {
            return Ok(Self {
                alpha,
                seed,
                t_min,
                t_max,
                mesh,
                subordinated: brownian.clone(),
                brownian,
                subordinator: None,
            });
        }

        let subordinator = sample_subordinator(alpha, t_min, t_max, mesh, seed)?;
        let n = subordinator.len();
        // Subordinator values are nondecreasing, so they are already sorted.
        let mut targets: Vec<f64> = (0..n).map(|i| subordinator.value(i)).collect();
        targets.dedup();

        let w_times: Vec<f64> = (0..brownian.len()).map(|i| brownian.time(i)).collect();
        let w_values: Vec<f64> = (0..brownian.len()).map(|i| brownian.value(i)).collect();
        let mut bridge = stream_rng(seed, STREAM_BRIDGE);
        let (rt, rv) = refine_brownian_at(&w_times, &w_values, &targets, &mut bridge);
        let refined = CadlagPath::new(rt, rv, PathKind::PiecewiseLinear)?;

        let subordinated = subordinate(&refined, &subordinator)?;
        Ok(Self {
            alpha,
            seed,
            t_min,
            t_max,
            mesh,
            brownian,
            subordinator: Some(subordinator),
            subordinated,
        })
    }

    /// Deterministic scenario with identically-zero noise (`alpha = 2`,
    /// `W = 0`). Useful wherever a closed form with `z = 0` is wanted.
    pub fn zero(t_min: f64, t_max: f64, mesh: f64) -> Result<Self> {
        let w = CadlagPath::zero(t_min, t_max, mesh)?;
        Ok(Self {
            alpha: 2.0,
            seed: 0,
            t_min,
            t_max,
            mesh,
            brownian: w.clone(),
            subordinator: None,
            subordinated: w,
        })
    }

    /// The path driving the conjugated equation: `L` for `alpha < 2`, `W`
    /// itself for `alpha = 2`.
    pub fn driving_path(&self) -> &CadlagPath {
        &self.subordinated
    }
}
