//! Distances between càdlàg paths (uniform metric and certified upper bounds
//! on the Skorokhod J1 metric) and the weighted history norm used by the
//! Lyapunov-Perron solver.
//!
//! Exact J1 is an infimum over all increasing time changes; the artifact
//! ships upper bounds only: the identity plus piecewise-linear time changes
//! whose knots align jump times of one path to jump times of the other,
//! enumerated up to a search budget. Upper bounds suffice for the
//! convergence-trend experiments in which the metric appears.

use crate::error::{Error, Result};
use crate::manifold::HistoryFn;
use crate::path::CadlagPath;
use crate::spectral::Spectrum;

/// Evaluation set for a sup over `[lo, hi]`: both grids, both jump sets, and
/// the window ends.
fn probe_times(p1: &CadlagPath, p2: &CadlagPath, lo: f64, hi: f64) -> Vec<f64> {
    let mut ts = vec![lo, hi];
    ts.extend(p1.grid_times_in(lo, hi));
    ts.extend(p2.grid_times_in(lo, hi));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn check_window(p1: &CadlagPath, p2: &CadlagPath, lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::Config(format!("empty window [{lo}, {hi}]")));
    }
    for p in [p1, p2] {
        let (plo, phi) = p.horizon();
        if lo < plo || hi > phi {
            return Err(Error::range("distance window", (lo, hi), (plo, phi)));
        }
    }
    Ok(())
}

/// `sup_{[lo, hi]} |p1(t) - p2(t)|`, attained on the union of grids and jump
/// points of the two piecewise paths (left limits included).
pub fn uniform_distance(p1: &CadlagPath, p2: &CadlagPath, lo: f64, hi: f64) -> Result<f64> {
    check_window(p1, p2, lo, hi)?;
    let mut d: f64 = 0.0;
    for t in probe_times(p1, p2, lo, hi) {
        d = d.max((p1.value_at(t) - p2.value_at(t)).abs());
        if t > lo {
            d = d.max((p1.left_limit_at(t) - p2.left_limit_at(t)).abs());
        }
    }
    Ok(d)
}

/// Outcome of the J1 upper-bound search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathDistanceReport {
    pub d_uniform: f64,
    /// Best value of `sup |p1 - p2 . lam| + sup |log slope(lam)|` found; an
    /// upper bound on the true J1 infimum. Never exceeds `d_uniform` (the
    /// identity time change is always a candidate).
    pub d_j1_upper: f64,
    /// Knots `(t, lam(t))` of the optimizing time change.
    pub lambda_used: Vec<(f64, f64)>,
    pub budget_exhausted: bool,
}

/// A piecewise-linear increasing time change of `[lo, hi]` onto itself.
#[derive(Debug, Clone)]
struct TimeChange {
    knots: Vec<(f64, f64)>,
}

impl TimeChange {
    fn identity(lo: f64, hi: f64) -> Self {
        Self {
            knots: vec![(lo, lo), (hi, hi)],
        }
    }

    fn from_matching(lo: f64, hi: f64, pairs: &[(f64, f64)]) -> Option<Self> {
        let mut knots = Vec::with_capacity(pairs.len() + 2);
        knots.push((lo, lo));
        knots.extend_from_slice(pairs);
        knots.push((hi, hi));
        // strictly increasing in both coordinates
        if knots.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1) {
            Some(Self { knots })
        } else {
            None
        }
    }

    fn apply(&self, t: f64) -> f64 {
        let i = self
            .knots
            .partition_point(|&(a, _)| a <= t)
            .clamp(1, self.knots.len() - 1)
            - 1;
        let (a0, b0) = self.knots[i];
        let (a1, b1) = self.knots[i + 1];
        if t >= a1 {
            return b1;
        }
        b0 + (b1 - b0) * (t - a0) / (a1 - a0)
    }

    fn inverse_apply(&self, s: f64) -> f64 {
        let i = self
            .knots
            .partition_point(|&(_, b)| b <= s)
            .clamp(1, self.knots.len() - 1)
            - 1;
        let (a0, b0) = self.knots[i];
        let (a1, b1) = self.knots[i + 1];
        if s >= b1 {
            return a1;
        }
        a0 + (a1 - a0) * (s - b0) / (b1 - b0)
    }

    /// `sup_{s != t} |log (lam(s) - lam(t)) / (s - t)|`: attained on segments.
    fn max_log_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| (((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).ln()).abs())
            .fold(0.0, f64::max)
    }
}

fn j1_objective(p1: &CadlagPath, p2: &CadlagPath, lo: f64, hi: f64, lam: &TimeChange) -> f64 {
    // sup |p1(t) - p2(lam(t))| over p1's probe times and the pullbacks of
    // p2's probe times, with left limits at both
    let mut ts = vec![lo, hi];
    ts.extend(p1.grid_times_in(lo, hi));
    for s in p2.grid_times_in(lo, hi) {
        ts.push(lam.inverse_apply(s));
    }
    ts.retain(|&t| (lo..=hi).contains(&t));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut sup: f64 = 0.0;
    for &t in &ts {
        sup = sup.max((p1.value_at(t) - p2.value_at(lam.apply(t))).abs());
        if t > lo {
            sup = sup.max((p1.left_limit_at(t) - p2.left_limit_at(lam.apply(t))).abs());
        }
    }
    sup + lam.max_log_slope()
}

/// Enumerate order-preserving matchings between the two jump sets, nearest
/// pairs first, up to `budget` candidates.
fn enumerate_matchings(jumps1: &[f64], jumps2: &[f64], budget: usize) -> (Vec<Vec<(f64, f64)>>, bool) {
    let mut out = Vec::new();
    let mut exhausted = false;
    // depth-first over (i, j) pairing decisions: match, skip left, skip right
    fn rec(
        i: usize,
        j: usize,
        jumps1: &[f64],
        jumps2: &[f64],
        current: &mut Vec<(f64, f64)>,
        out: &mut Vec<Vec<(f64, f64)>>,
        budget: usize,
        exhausted: &mut bool,
    ) {
        if out.len() >= budget {
            *exhausted = true;
            return;
        }
        if i >= jumps1.len() || j >= jumps2.len() {
            if !current.is_empty() {
                out.push(current.clone());
            }
            return;
        }
        current.push((jumps1[i], jumps2[j]));
        rec(i + 1, j + 1, jumps1, jumps2, current, out, budget, exhausted);
        current.pop();
        rec(i + 1, j, jumps1, jumps2, current, out, budget, exhausted);
        rec(i, j + 1, jumps1, jumps2, current, out, budget, exhausted);
    }
    let mut current = Vec::new();
    rec(0, 0, jumps1, jumps2, &mut current, &mut out, budget, &mut exhausted);
    (out, exhausted)
}

/// Best-found value of the J1 objective over the candidate time changes.
pub fn j1_distance_upper(
    p1: &CadlagPath,
    p2: &CadlagPath,
    lo: f64,
    hi: f64,
    budget: usize,
) -> Result<PathDistanceReport> {
    check_window(p1, p2, lo, hi)?;
    let d_uniform = uniform_distance(p1, p2, lo, hi)?;

    let identity = TimeChange::identity(lo, hi);
    let mut best = (d_uniform, identity); // identity objective = d_uniform + 0

    let jumps1 = p1.jump_times_in(lo, hi - f64::EPSILON * hi.abs().max(1.0));
    let jumps2 = p2.jump_times_in(lo, hi - f64::EPSILON * hi.abs().max(1.0));
    let (matchings, budget_exhausted) = enumerate_matchings(&jumps1, &jumps2, budget);
    for pairs in matchings {
        if let Some(lam) = TimeChange::from_matching(lo, hi, &pairs) {
            let value = j1_objective(p1, p2, lo, hi, &lam);
            if value < best.0 {
                best = (value, lam);
            }
        }
    }

    Ok(PathDistanceReport {
        d_uniform,
        d_j1_upper: best.0,
        lambda_used: best.1.knots,
        budget_exhausted,
    })
}

/// `max_i e^{beta s_i - int_0^{s_i} z} ||phi(s_i)||_sigma` over the history
/// grid: the norm of the weighted backward space.
pub fn weighted_history_norm(h: &HistoryFn, spec: &Spectrum) -> Result<f64> {
    if h.z_integral.len() != h.grid.len() {
        return Err(Error::Contract(
            "history weight path does not match its grid".into(),
        ));
    }
    Ok(h
        .grid
        .iter()
        .zip(&h.states)
        .zip(&h.z_integral)
        .map(|((&s, u), &zi)| (h.beta * s - zi).exp() * spec.sigma_norm(u))
        .fold(0.0, f64::max))
}
