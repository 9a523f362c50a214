//! Two-sided càdlàg sample paths on a finite grid.
//!
//! A path is stored as raw `(times, values)` samples plus an evaluation base
//! `(base_time, base_value)`. The logical path is
//!
//! ```text
//! f(t) = raw(base_time + t) - base_value,      base_value = raw(base_time),
//! ```
//!
//! so that `shift` composes exactly: shifting by `s` and then by `t` produces
//! the same struct as shifting once by `t + s`, and the shifted path is always
//! zero at the origin. Piecewise-constant paths evaluate right-continuously
//! (value at the largest grid point `<= t`); piecewise-linear paths
//! interpolate.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PathKind {
    /// Right-continuous step function; jumps sit at grid points.
    PiecewiseConstant,
    /// Continuous, linear between grid points.
    PiecewiseLinear,
}

impl PathKind {
    pub fn label(&self) -> &'static str {
        match self {
            PathKind::PiecewiseConstant => "piecewise-constant",
            PathKind::PiecewiseLinear => "piecewise-linear",
        }
    }
}

#[derive(Debug)]
struct PathData {
    times: Vec<f64>,
    values: Vec<f64>,
    kind: PathKind,
}

/// A càdlàg path on a two-sided grid containing 0.
#[derive(Debug, Clone)]
pub struct CadlagPath {
    data: Arc<PathData>,
    base_time: f64,
    base_value: f64,
}

impl CadlagPath {
    /// Build a path from raw samples. `times` must be strictly increasing,
    /// finite and contain 0; `values` must match in length.
    pub fn new(times: Vec<f64>, values: Vec<f64>, kind: PathKind) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Config(format!(
                "path has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Config("path needs at least two grid points".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("path times must be strictly increasing".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("path samples must be finite".into()));
        }
        if !times.iter().any(|&t| t == 0.0) {
            return Err(Error::Config("path grid must contain 0".into()));
        }
        Ok(Self {
            data: Arc::new(PathData { times, values, kind }),
            base_time: 0.0,
            base_value: 0.0,
        })
    }

    /// Identically-zero path on a uniform grid (mesh-spaced, two-sided).
    pub fn zero(t_min: f64, t_max: f64, mesh: f64) -> Result<Self> {
        let times = uniform_grid(t_min, t_max, mesh)?;
        let values = vec![0.0; times.len()];
        Self::new(times, values, PathKind::PiecewiseLinear)
    }

    pub fn kind(&self) -> PathKind {
        self.data.kind
    }

    pub fn len(&self) -> usize {
        self.data.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Logical horizon `(lo, hi)`.
    pub fn horizon(&self) -> (f64, f64) {
        (
            self.data.times[0] - self.base_time,
            self.data.times[self.len() - 1] - self.base_time,
        )
    }

    /// Logical time of grid point `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.data.times[i] - self.base_time
    }

    /// Logical value at grid point `i` (the right-continuous value).
    pub fn value(&self, i: usize) -> f64 {
        self.data.values[i] - self.base_value
    }

    /// Largest grid index with `time(i) <= t`. Panics outside the horizon.
    pub fn index_at(&self, t: f64) -> usize {
        let raw = self.base_time + t;
        let times = &self.data.times;
        assert!(
            raw >= times[0] && raw <= times[times.len() - 1],
            "time {t} outside path horizon {:?}",
            self.horizon()
        );
        // partition_point returns the first index with times[i] > raw.
        times.partition_point(|&x| x <= raw) - 1
    }

    /// Evaluate the path at `t`. Panics outside the horizon; use
    /// [`CadlagPath::try_value_at`] for a checked variant.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.index_at(t);
        let raw = self.base_time + t;
        let d = &self.data;
        let v = match d.kind {
            PathKind::PiecewiseConstant => d.values[i],
            PathKind::PiecewiseLinear => {
                if i + 1 == d.times.len() || d.times[i] == raw {
                    d.values[i]
                } else {
                    let w = (raw - d.times[i]) / (d.times[i + 1] - d.times[i]);
                    d.values[i] + w * (d.values[i + 1] - d.values[i])
                }
            }
        };
        v - self.base_value
    }

    pub fn try_value_at(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.horizon();
        if t < lo || t > hi {
            return Err(Error::range("path evaluation", (t, t), (lo, hi)));
        }
        Ok(self.value_at(t))
    }

    /// Left limit at `t`. Differs from `value_at` only at jumps of a
    /// piecewise-constant path.
    pub fn left_limit_at(&self, t: f64) -> f64 {
        let d = &self.data;
        if d.kind == PathKind::PiecewiseLinear {
            return self.value_at(t);
        }
        let i = self.index_at(t);
        let raw = self.base_time + t;
        if d.times[i] == raw && i > 0 {
            d.values[i - 1] - self.base_value
        } else {
            d.values[i] - self.base_value
        }
    }

    /// Slope of segment `[time(i), time(i+1))`; zero for step paths.
    pub fn segment_slope(&self, i: usize) -> f64 {
        match self.data.kind {
            PathKind::PiecewiseConstant => 0.0,
            PathKind::PiecewiseLinear => {
                let d = &self.data;
                (d.values[i + 1] - d.values[i]) / (d.times[i + 1] - d.times[i])
            }
        }
    }

    /// Jump times (logical) in the half-open window `(lo, hi]`.
    pub fn jump_times_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        if self.data.kind == PathKind::PiecewiseLinear {
            return Vec::new();
        }
        let d = &self.data;
        (1..d.times.len())
            .filter(|&i| d.values[i] != d.values[i - 1])
            .map(|i| d.times[i] - self.base_time)
            .filter(|&t| t > lo && t <= hi)
            .collect()
    }

    /// Grid times (logical) in the closed window `[lo, hi]`.
    pub fn grid_times_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.data
            .times
            .iter()
            .map(|&t| t - self.base_time)
            .filter(|&t| t >= lo && t <= hi)
            .collect()
    }

    /// The shift `(theta_t f)(s) = f(t + s) - f(t)`. O(1): only the base moves.
    ///
    /// Because evaluation always goes through the raw samples, the cocycle
    /// identity `theta_{t+s} = theta_t . theta_s` holds exactly, not just up
    /// to rounding.
    pub fn shift(&self, t: f64) -> Result<Self> {
        let (lo, hi) = self.horizon();
        if t < lo || t > hi {
            return Err(Error::range("shift origin", (t, t), (lo, hi)));
        }
        let raw = self.base_time + t;
        let base_value = {
            // raw-coordinate evaluation of the unshifted data
            let probe = CadlagPath {
                data: self.data.clone(),
                base_time: 0.0,
                base_value: 0.0,
            };
            probe.value_at(raw)
        };
        Ok(Self {
            data: self.data.clone(),
            base_time: raw,
            base_value,
        })
    }

    /// Serialize to CSV: one `#`-comment header recording the metadata, then
    /// `t,value` rows over the logical grid.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &PathMeta) -> Result<()> {
        writeln!(
            w,
            "# kind={} alpha={} seed={} mesh={}",
            self.data.kind.label(),
            meta.alpha,
            meta.seed,
            meta.mesh
        )?;
        writeln!(w, "t,value")?;
        for i in 0..self.len() {
            writeln!(w, "{},{}", self.time(i), self.value(i))?;
        }
        Ok(())
    }
}

/// Metadata recorded in the CSV header comment.
#[derive(Debug, Clone, Copy)]
pub struct PathMeta {
    pub alpha: f64,
    pub seed: u64,
    pub mesh: f64,
}

/// Uniform grid `i * mesh` covering `[t_min, t_max]`, always containing 0.
pub fn uniform_grid(t_min: f64, t_max: f64, mesh: f64) -> Result<Vec<f64>> {
    if !(mesh > 0.0) || !mesh.is_finite() {
        return Err(Error::Config(format!("mesh must be positive, got {mesh}")));
    }
    if !(t_min <= 0.0 && t_max >= 0.0 && t_min < t_max) {
        return Err(Error::Config(format!(
            "horizon [{t_min}, {t_max}] must contain 0"
        )));
    }
    let n_neg = (-t_min / mesh).ceil() as i64;
    let n_pos = (t_max / mesh).ceil() as i64;
    Ok((-n_neg..=n_pos).map(|i| i as f64 * mesh).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn step_path() -> CadlagPath {
        // 0 on [-1, 0.5), 1 on [0.5, 2]
        CadlagPath::new(
            vec![-1.0, 0.0, 0.5, 2.0],
            vec![0.0, 0.0, 1.0, 1.0],
            PathKind::PiecewiseConstant,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(CadlagPath::new(vec![0.0, 0.0], vec![1.0, 2.0], PathKind::PiecewiseLinear).is_err());
        assert!(CadlagPath::new(vec![1.0, 2.0], vec![0.0, 0.0], PathKind::PiecewiseLinear).is_err());
        assert!(CadlagPath::new(vec![0.0], vec![0.0], PathKind::PiecewiseLinear).is_err());
    }

    #[test]
    fn step_evaluation_is_right_continuous() {
        let p = step_path();
        assert_eq!(p.value_at(0.499), 0.0);
        assert_eq!(p.value_at(0.5), 1.0);
        assert_eq!(p.left_limit_at(0.5), 0.0);
        assert_eq!(p.value_at(2.0), 1.0);
    }

    #[test]
    fn linear_interpolates() {
        let p = CadlagPath::new(
            vec![-1.0, 0.0, 1.0],
            vec![-2.0, 0.0, 4.0],
            PathKind::PiecewiseLinear,
        )
        .unwrap();
        assert_abs_diff_eq!(p.value_at(0.5), 2.0);
        assert_abs_diff_eq!(p.value_at(-0.25), -0.5);
    }

    #[test]
    fn shift_zero_is_identity() {
        let p = step_path();
        let q = p.shift(0.0).unwrap();
        for t in [-1.0, -0.3, 0.0, 0.5, 1.7] {
            assert_eq!(p.value_at(t), q.value_at(t));
        }
    }

    #[test]
    fn shift_anchors_at_zero_and_negates() {
        let p = CadlagPath::new(
            vec![-1.0, 0.0, 1.0, 2.0],
            vec![3.0, 0.0, 5.0, -1.0],
            PathKind::PiecewiseLinear,
        )
        .unwrap();
        let t = 1.0;
        let q = p.shift(t).unwrap();
        assert_eq!(q.value_at(0.0), 0.0);
        // (theta_t p)(-t) = -p(t), exactly
        assert_eq!(q.value_at(-t), -p.value_at(t));
        assert_eq!(q.value_at(0.5), p.value_at(1.5) - p.value_at(1.0));
    }

    #[test]
    fn shift_cocycle_is_exact() {
        let p = CadlagPath::new(
            vec![-2.0, -1.0, 0.0, 0.75, 1.5, 3.0],
            vec![0.3, -0.4, 0.0, 2.0, -1.0, 0.25],
            PathKind::PiecewiseLinear,
        )
        .unwrap();
        let (s, t) = (0.75, -1.25);
        let once = p.shift(s + t).unwrap();
        let twice = p.shift(s).unwrap().shift(t).unwrap();
        for u in [-0.5, 0.0, 0.25, 1.0] {
            assert_eq!(once.value_at(u), twice.value_at(u), "at u = {u}");
        }
    }

    #[test]
    fn shift_outside_horizon_is_range_error() {
        let p = step_path();
        assert!(matches!(p.shift(5.0), Err(Error::Range { .. })));
    }

    #[test]
    fn csv_round_trip_format() {
        let p = step_path();
        let mut buf = Vec::new();
        p.write_csv(
            &mut buf,
            &PathMeta {
                alpha: 1.5,
                seed: 7,
                mesh: 0.5,
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "# kind=piecewise-constant alpha=1.5 seed=7 mesh=0.5"
        );
        assert_eq!(lines.next().unwrap(), "t,value");
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn uniform_grid_contains_zero() {
        let g = uniform_grid(-1.0, 2.0, 0.25).unwrap();
        assert!(g.contains(&0.0));
        assert_eq!(g[0], -1.0);
        assert_eq!(*g.last().unwrap(), 2.0);
    }
}
