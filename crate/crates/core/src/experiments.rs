//! Reproducible experiment runners behind the CLI: a flat TOML config turns
//! into CSV tables, gnuplot-ready data files, SVG charts, and a
//! `manifest.json` recording the config hash, code version, seeds and wall
//! time. Identical config and version produce byte-identical CSVs; wall time
//! lives only in the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    integrate_with_ou, solution_convergence, to_original, Nonlinearity, SolutionConvergeParams,
};
use crate::error::{Error, Result};
use crate::manifold::{
    manifold_convergence, xi_probe_set, ManifoldConvergeParams, ManifoldGraph, SolverParams,
};
use crate::metrics::{j1_distance_upper, uniform_distance};
use crate::noise::{intensity_ratio, levy_intensity_constant, sample_positive_stable, NoiseScenario};
use crate::ou::{ou_convergence_table, OuConvergeParams, OuPath, TAIL_MARGIN};
use crate::path::PathKind;
use crate::spectral::Spectrum;
use crate::state::StateVec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NoiseStats,
    OuConverge,
    CheckGap,
    Integrate,
    SolveManifold,
    DPsiCheck,
    TrackDefect,
    ConvergeSolutions,
    ConvergeManifolds,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::NoiseStats => "noise-stats",
            ExperimentKind::OuConverge => "ou-converge",
            ExperimentKind::CheckGap => "check-gap",
            ExperimentKind::Integrate => "integrate",
            ExperimentKind::SolveManifold => "solve-manifold",
            ExperimentKind::DPsiCheck => "d-psi-check",
            ExperimentKind::TrackDefect => "track-defect",
            ExperimentKind::ConvergeSolutions => "converge-solutions",
            ExperimentKind::ConvergeManifolds => "converge-manifolds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub out_dir: String,
    /// 0 = rayon default.
    pub threads: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::CheckGap,
            out_dir: "out".into(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSection {
    /// "power" (`lambda_k = k^power`) or "explicit".
    pub family: String,
    pub power: f64,
    pub count: usize,
    pub split: usize,
    pub sigma: f64,
    pub eigenvalues: Vec<f64>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            family: "power".into(),
            power: 2.0,
            count: 8,
            split: 2,
            sigma: 0.0,
            eigenvalues: Vec::new(),
        }
    }
}

impl SpectrumSection {
    pub fn build(&self) -> Result<Spectrum> {
        match self.family.as_str() {
            "power" => Spectrum::power_family(self.power, self.count, self.split, self.sigma),
            "explicit" => Spectrum::new(self.eigenvalues.clone(), self.split, self.sigma),
            other => Err(Error::Config(format!(
                "spectrum.family must be \"power\" or \"explicit\", got \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearitySection {
    /// "zero" | "linear-diagonal" | "cross-couple" | "saturating".
    pub preset: String,
    pub eps: f64,
    /// 1-based mode indices for "cross-couple".
    pub from: usize,
    pub to: usize,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self {
            preset: "saturating".into(),
            eps: 0.05,
            from: 1,
            to: 3,
        }
    }
}

impl NonlinearitySection {
    pub fn build(&self) -> Result<Nonlinearity> {
        match self.preset.as_str() {
            "zero" => Ok(Nonlinearity::Zero),
            "linear-diagonal" => Ok(Nonlinearity::LinearDiagonal { eps: self.eps }),
            "cross-couple" => {
                if self.from == 0 || self.to == 0 {
                    return Err(Error::Config(
                        "nonlinearity.from / nonlinearity.to are 1-based".into(),
                    ));
                }
                Ok(Nonlinearity::CrossCouple {
                    eps: self.eps,
                    from: self.from - 1,
                    to: self.to - 1,
                })
            }
            "saturating" => Ok(Nonlinearity::Saturating { eps: self.eps }),
            other => Err(Error::Config(format!(
                "nonlinearity.preset \"{other}\" is not one of zero | linear-diagonal | \
                 cross-couple | saturating"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub seeds: usize,
    pub mesh: f64,
    /// 0 = derive from the experiment's needs.
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            alphas: vec![1.5, 1.9, 1.99, 2.0],
            seed: 42,
            seeds: 100,
            mesh: 1.0 / 1024.0,
            t_min: 0.0,
            t_max: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub mu: f64,
    /// < 0 = use the preset's certified constant.
    pub lipschitz: f64,
    pub t_minus: f64,
    pub fine_step: f64,
    pub steps_per_level: usize,
    pub max_step: f64,
    pub tol_fp: f64,
    pub max_iters: usize,
    pub ou_tail: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = SolverParams::default();
        Self {
            mu: p.mu,
            lipschitz: -1.0,
            t_minus: p.t_minus,
            fine_step: p.fine_step,
            steps_per_level: p.steps_per_level,
            max_step: p.max_step,
            tol_fp: p.tol_fp,
            max_iters: p.max_iters,
            ou_tail: p.ou_tail,
        }
    }
}

impl SolverSection {
    pub fn params(&self) -> SolverParams {
        SolverParams {
            mu: self.mu,
            t_minus: self.t_minus,
            fine_step: self.fine_step,
            steps_per_level: self.steps_per_level,
            max_step: self.max_step,
            tol_fp: self.tol_fp,
            max_iters: self.max_iters,
            ou_tail: self.ou_tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub t_final: f64,
    pub dt: f64,
    pub p_moment: f64,
    pub eps_threshold: f64,
    pub anchor_step: f64,
    pub xi_count: usize,
    pub xi_scale: f64,
    /// Explicit initial state (length K); empty = built-in default.
    pub x: Vec<f64>,
    /// solve-manifold: per-axis grid resolution and range.
    pub grid_points: usize,
    pub xi_min: f64,
    pub xi_max: f64,
    pub j1_budget: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            dt: 1.0 / 1024.0,
            p_moment: 1.0,
            eps_threshold: 0.1,
            anchor_step: 0.125,
            xi_count: 3,
            xi_scale: 0.5,
            x: Vec::new(),
            grid_points: 9,
            xi_min: -1.0,
            xi_max: 1.0,
            j1_budget: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub emit_plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { emit_plots: true }
    }
}

/// Full experiment configuration; every field has a default, and a config
/// round-trips parse -> serialize -> parse to the identical structure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub spectrum: SpectrumSection,
    pub nonlinearity: NonlinearitySection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &a) in self.noise.alphas.iter().enumerate() {
            if !(a > 1.0 && a <= 2.0) {
                return Err(Error::Config(format!(
                    "noise.alphas[{i}] = {a} outside (1, 2]"
                )));
            }
        }
        if !(self.noise.mesh > 0.0) {
            return Err(Error::Config(format!(
                "noise.mesh = {} must be positive",
                self.noise.mesh
            )));
        }
        if self.noise.seeds == 0 {
            return Err(Error::Config("noise.seeds must be at least 1".into()));
        }
        if !(self.solver.mu > 0.0 && self.solver.mu < 1.0) {
            return Err(Error::Config(format!(
                "solver.mu = {} outside (0, 1)",
                self.solver.mu
            )));
        }
        if !(self.run.dt > 0.0 && self.run.t_final > 0.0) {
            return Err(Error::Config(format!(
                "run.dt = {} and run.t_final = {} must be positive",
                self.run.dt, self.run.t_final
            )));
        }
        let spec = self.spectrum.build()?;
        let nl = self.nonlinearity.build()?;
        nl.validate(&spec)?;
        if !self.run.x.is_empty() && self.run.x.len() != self.spectrum.count {
            return Err(Error::Config(format!(
                "run.x has {} entries but spectrum.count = {}",
                self.run.x.len(),
                self.spectrum.count
            )));
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        let digest = h.finalize();
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn lipschitz(&self, spec: &Spectrum, nl: &Nonlinearity) -> f64 {
        if self.solver.lipschitz >= 0.0 {
            self.solver.lipschitz
        } else {
            nl.lipschitz(spec)
        }
    }

    fn initial_state(&self, spec: &Spectrum) -> StateVec {
        if !self.run.x.is_empty() {
            return StateVec::new(self.run.x.clone());
        }
        let mut x = StateVec::zeros(spec.count());
        for k in 0..spec.count() {
            x[k] = if k % 2 == 0 { 0.5 } else { -0.5 } / (k + 1) as f64;
        }
        x
    }

    /// Backward horizon the manifold experiments need (gap must hold).
    fn manifold_t_min(&self, spec: &Spectrum, nl: &Nonlinearity) -> Result<f64> {
        let gap = spec.check_gap(self.lipschitz(spec, nl), self.solver.mu)?;
        if !gap.satisfied {
            return Err(Error::GapViolation(format!(
                "lambda_{{N+1}} - lambda_N = {:.6} < required {:.6} (L = {:.4}, mu = {})",
                gap.lhs, gap.rhs, gap.lipschitz, gap.mu
            )));
        }
        let t_minus = if self.solver.t_minus > 0.0 {
            self.solver.t_minus
        } else {
            40.0 / (spec.lambda_high() - gap.beta)
        };
        Ok(-(t_minus + self.solver.ou_tail + TAIL_MARGIN + 1.0))
    }
}

/// Simple column table; all experiment outputs funnel through this for
/// deterministic CSV emission.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("table has no column \"{name}\"")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Axes of a plot: one x column, one or more y series.
#[derive(Debug, Clone)]
pub struct AxesSpec {
    pub x: String,
    pub y: Vec<String>,
}

/// Write a gnuplot-compatible data file and (for nonempty tables) an SVG
/// line chart. Returns the emitted file names.
pub fn emit_plot_data(table: &Table, axes: &AxesSpec, base: &Path) -> Result<Vec<PathBuf>> {
    let xs = table.column(&axes.x)?;
    let series: Vec<Vec<f64>> = axes
        .y
        .iter()
        .map(|name| table.column(name))
        .collect::<Result<_>>()?;

    let mut dat = String::new();
    let _ = writeln!(dat, "# {} {}", axes.x, axes.y.join(" "));
    for name in &axes.y {
        let vals = table.column(name)?;
        let monotone = vals.windows(2).all(|w| w[1] <= w[0]);
        let _ = writeln!(dat, "# monotone-nonincreasing {name}: {monotone}");
    }
    for (i, &x) in xs.iter().enumerate() {
        let _ = write!(dat, "{x}");
        for s in &series {
            let _ = write!(dat, " {}", s[i]);
        }
        dat.push('\n');
    }
    let dat_path = base.with_extension("dat");
    fs::write(&dat_path, dat)?;

    if xs.is_empty() {
        eprintln!("warning: empty table, no chart for {}", base.display());
        return Ok(vec![dat_path]);
    }

    let svg_path = base.with_extension("svg");
    fs::write(&svg_path, render_svg(&xs, &series, &axes.y, &axes.x))?;
    Ok(vec![dat_path, svg_path])
}

fn render_svg(xs: &[f64], series: &[Vec<f64>], names: &[String], x_label: &str) -> String {
    let (w, h, ml, mb) = (640.0, 420.0, 70.0, 50.0);
    let (x_lo, x_hi) = xs
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let mut y_lo = f64::MAX;
    let mut y_hi = f64::MIN;
    for s in series {
        for &v in s {
            if v.is_finite() {
                y_lo = y_lo.min(v);
                y_hi = y_hi.max(v);
            }
        }
    }
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if y_hi == y_lo {
        y_hi = y_lo + 1.0;
    }
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |x: f64| ml + (x - x_lo) / x_span * (w - ml - 20.0);
    let py = |y: f64| (h - mb) - (y - y_lo) / (y_hi - y_lo) * (h - mb - 20.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\"><rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>"
    );
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\
         <line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{0}\" stroke=\"black\"/>",
        h - mb,
        w - 20.0
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>",
        (ml + w - 20.0) / 2.0,
        h - 12.0
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">{x_lo:.4}</text>\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{x_hi:.4}</text>\
         <text x=\"4\" y=\"30\" font-size=\"11\">{y_hi:.3e}</text>\
         <text x=\"4\" y=\"{}\" font-size=\"11\">{y_lo:.3e}</text>",
        ml,
        h - mb + 16.0,
        w - 20.0,
        h - mb + 16.0,
        h - mb
    );
    for (si, s) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(s)
            .filter(|(_, &v)| v.is_finite())
            .map(|(&x, &v)| format!("{:.2},{:.2}", px(x), py(v)))
            .collect();
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        for p in &pts {
            let mut it = p.split(',');
            let (cx, cy) = (it.next().unwrap(), it.next().unwrap());
            let _ = write!(svg, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - 180.0,
            30.0 + 16.0 * si as f64,
            names[si]
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Run manifest: reproducibility metadata written alongside the tables.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

struct Emitter {
    dir: PathBuf,
    outputs: Vec<String>,
    metrics: BTreeMap<String, f64>,
    emit_plots: bool,
}

impl Emitter {
    fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.dir.join(format!("{name}.csv"));
        fs::write(&path, table.to_csv())?;
        self.outputs.push(format!("{name}.csv"));
        Ok(())
    }

    fn plot(&mut self, name: &str, table: &Table, axes: &AxesSpec) -> Result<()> {
        if !self.emit_plots {
            return Ok(());
        }
        for p in emit_plot_data(table, axes, &self.dir.join(name))? {
            self.outputs
                .push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
        Ok(())
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }
}

/// Execute a validated configuration, writing all artifacts into its
/// `out_dir`. Deterministic: rerunning the same config and version yields
/// byte-identical CSV and dat files.
pub fn run(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let start = Instant::now();
    let dir = PathBuf::from(&config.experiment.out_dir);
    fs::create_dir_all(&dir)?;
    let mut em = Emitter {
        dir: dir.clone(),
        outputs: Vec::new(),
        metrics: BTreeMap::new(),
        emit_plots: config.output.emit_plots,
    };

    let body = |em: &mut Emitter| -> Result<()> {
        match config.experiment.kind {
            ExperimentKind::NoiseStats => run_noise_stats(config, em),
            ExperimentKind::OuConverge => run_ou_converge(config, em),
            ExperimentKind::CheckGap => run_check_gap(config, em),
            ExperimentKind::Integrate => run_integrate(config, em),
            ExperimentKind::SolveManifold => run_solve_manifold(config, em),
            ExperimentKind::DPsiCheck => run_dpsi_check(config, em),
            ExperimentKind::TrackDefect => run_track_defect(config, em),
            ExperimentKind::ConvergeSolutions => run_converge_solutions(config, em),
            ExperimentKind::ConvergeManifolds => run_converge_manifolds(config, em),
        }
    };

    if config.experiment.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.experiment.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| body(&mut em))?;
    } else {
        body(&mut em)?;
    }

    let manifest = Manifest {
        experiment: config.experiment.kind.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config.sha256(),
        seeds: (0..config.noise.seeds as u64)
            .map(|i| config.noise.seed + i)
            .collect(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs: em.outputs.clone(),
        metrics: em.metrics.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

fn run_noise_stats(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    use rand::SeedableRng;
    let mut intensity = Table::new(&["alpha", "c_alpha", "ratio_to_degeneration"]);
    let mut probes: Vec<f64> = config
        .noise
        .alphas
        .iter()
        .copied()
        .filter(|&a| a < 2.0)
        .collect();
    probes.push(1.999);
    for &alpha in &probes {
        intensity.push(vec![
            alpha,
            levy_intensity_constant(alpha)?,
            intensity_ratio(alpha)?,
        ]);
    }
    em.write_table("intensity", &intensity)?;

    // Empirical Laplace transform of unit-mesh increments against the stable
    // exponent e^{-l^{alpha/2}}.
    let mut laplace = Table::new(&["alpha", "lambda", "empirical", "target", "stderr"]);
    let n = 100_000usize;
    for &alpha in config.noise.alphas.iter().filter(|&&a| a < 2.0) {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(config.noise.seed);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_positive_stable(alpha / 2.0, &mut rng))
            .collect();
        for lambda in [0.5, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|&s| (-lambda * s).exp()).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            laplace.push(vec![
                alpha,
                lambda,
                mean,
                (-lambda.powf(alpha / 2.0)).exp(),
                (var / n as f64).sqrt(),
            ]);
        }
    }
    em.write_table("laplace", &laplace)?;

    // J1 versus uniform distance of the coupled paths on [0, 1]
    let mut coupling = Table::new(&["alpha", "seed", "d_uniform", "d_j1_upper"]);
    for &alpha in config.noise.alphas.iter().filter(|&&a| a < 2.0) {
        for i in 0..config.noise.seeds.min(10) as u64 {
            let sc = NoiseScenario::generate(
                alpha,
                config.noise.seed + i,
                -0.25,
                1.0,
                config.noise.mesh,
            )?;
            let rep = j1_distance_upper(
                &sc.subordinated,
                &sc.brownian,
                0.0,
                1.0,
                config.run.j1_budget,
            )?;
            coupling.push(vec![
                alpha,
                (config.noise.seed + i) as f64,
                rep.d_uniform,
                rep.d_j1_upper,
            ]);
        }
    }
    em.write_table("coupling", &coupling)?;
    Ok(())
}

fn run_ou_converge(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let rows = ou_convergence_table(&OuConvergeParams {
        alphas: config.noise.alphas.clone(),
        p: config.run.p_moment,
        t_window: config.run.t_final,
        n_seeds: config.noise.seeds,
        seed0: config.noise.seed,
        mesh: config.noise.mesh,
        tail: config.solver.ou_tail,
    })?;
    let mut table = Table::new(&["alpha", "p", "T", "n", "estimate", "stderr"]);
    for r in &rows {
        table.push(vec![
            r.alpha,
            r.p,
            r.t_window,
            r.n as f64,
            r.estimate,
            r.stderr,
        ]);
    }
    em.write_table("ou_convergence", &table)?;
    em.plot(
        "ou_convergence",
        &table,
        &AxesSpec {
            x: "alpha".into(),
            y: vec!["estimate".into()],
        },
    )?;
    Ok(())
}

fn run_check_gap(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let nl = config.nonlinearity.build()?;
    let report = spec.check_gap(config.lipschitz(&spec, &nl), config.solver.mu)?;
    fs::write(
        em.dir.join("gap_report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    em.outputs.push("gap_report.json".into());
    em.metric("margin", report.margin);
    em.metric("beta", report.beta);
    if !report.satisfied {
        return Err(Error::GapViolation(format!(
            "lambda_{{N+1}} - lambda_N = {:.6} < required {:.6} (L = {:.4}, mu = {})",
            report.lhs, report.rhs, report.lipschitz, report.mu
        )));
    }
    Ok(())
}

fn run_integrate(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let nl = config.nonlinearity.build()?;
    let alpha = config.noise.alphas[0];
    let tail = config.solver.ou_tail;
    let (t_min, t_max) = if config.noise.t_min < 0.0 {
        (config.noise.t_min, config.noise.t_max)
    } else {
        (-(tail + TAIL_MARGIN + 1.0), config.run.t_final)
    };
    let sc = NoiseScenario::generate(alpha, config.noise.seed, t_min, t_max, config.noise.mesh)?;
    let ou = OuPath::from_scenario(&sc, 0.0, config.run.t_final, tail)?;
    let x = config.initial_state(&spec);
    let traj = integrate_with_ou(&ou, &spec, &nl, &x, config.run.t_final, config.run.dt)?;
    let original = to_original(&traj, &ou)?;

    let mut long = Table::new(&["t", "k", "coeff"]);
    let mut summary = Table::new(&["t", "norm_sigma"]);
    for (i, &t) in traj.times.iter().enumerate() {
        for k in 0..spec.count() {
            long.push(vec![t, (k + 1) as f64, traj.states[i][k]]);
        }
        summary.push(vec![t, spec.sigma_norm(&traj.states[i])]);
    }
    em.write_table("trajectory", &long)?;
    em.write_table("trajectory_norms", &summary)?;
    let mut orig_summary = Table::new(&["t", "norm_sigma"]);
    for (i, &t) in original.times.iter().enumerate() {
        orig_summary.push(vec![t, spec.sigma_norm(&original.states[i])]);
    }
    em.write_table("trajectory_norms_original", &orig_summary)?;
    Ok(())
}

fn build_graph(
    config: &ExperimentConfig,
    alpha: f64,
    seed: u64,
    t_max: f64,
) -> Result<ManifoldGraph> {
    let spec = config.spectrum.build()?;
    let nl = config.nonlinearity.build()?;
    let t_min = if config.noise.t_min < 0.0 {
        config.noise.t_min
    } else {
        config.manifold_t_min(&spec, &nl)?
    };
    let sc = NoiseScenario::generate(alpha, seed, t_min, t_max, config.noise.mesh)?;
    ManifoldGraph::new(sc, spec, nl, config.solver.params())
}

fn run_solve_manifold(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let graph = build_graph(
        config,
        config.noise.alphas[0],
        config.noise.seed,
        2.0 * config.noise.mesh,
    )?;
    let n = spec.split();
    let k = spec.count();
    let cols: Vec<String> = (1..=n)
        .map(|j| format!("xi_{j}"))
        .chain((n + 1..=k).map(|j| format!("psi_{j}")))
        .collect();
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut table = Table::new(&col_refs);

    // Cartesian grid over the P block, capped to keep the row count sane.
    let g = config.run.grid_points.max(2);
    let total = g.pow(n as u32);
    if total > 100_000 {
        return Err(Error::Config(format!(
            "run.grid_points = {g} over N = {n} axes gives {total} rows; reduce the grid"
        )));
    }
    let coord = |i: usize| {
        config.run.xi_min + (config.run.xi_max - config.run.xi_min) * i as f64 / (g - 1) as f64
    };
    for idx in 0..total {
        let mut xi = StateVec::zeros(k);
        let mut rem = idx;
        for j in 0..n {
            xi[j] = coord(rem % g);
            rem /= g;
        }
        let psi = graph.psi(&xi)?;
        let mut row = Vec::with_capacity(k);
        for j in 0..n {
            row.push(xi[j]);
        }
        for j in n..k {
            row.push(psi[j]);
        }
        table.push(row);
    }
    em.write_table("manifold_graph", &table)?;
    em.metric("beta", graph.beta());
    em.metric("t_minus", graph.t_minus());
    Ok(())
}

fn run_dpsi_check(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let graph = build_graph(
        config,
        config.noise.alphas[0],
        config.noise.seed,
        2.0 * config.noise.mesh,
    )?;
    let xis = xi_probe_set(
        &spec,
        config.run.xi_count,
        config.run.xi_scale,
        config.noise.seed,
    );
    let mut table = Table::new(&["xi_index", "rel_error"]);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, xi) in xis.iter().enumerate() {
        let d = graph.d_psi(xi)?;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..spec.split() {
            let mut plus = xi.clone();
            plus[j] += h;
            let mut minus = xi.clone();
            minus[j] -= h;
            let fd = graph
                .psi(&plus)?
                .sub(&graph.psi(&minus)?)
                .scaled(0.5 / h);
            err = err.max(spec.sigma_norm(&fd.sub(&d.cols[j])));
            scale = scale.max(spec.sigma_norm(&d.cols[j]));
        }
        let rel = err / scale.max(1e-12);
        worst = worst.max(rel);
        table.push(vec![i as f64, rel]);
    }
    em.write_table("dpsi_check", &table)?;
    em.metric("worst_rel_error", worst);
    Ok(())
}

fn run_track_defect(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let graph = build_graph(
        config,
        config.noise.alphas[0],
        config.noise.seed,
        config.run.t_final,
    )?;
    let x = config.initial_state(&spec);
    let series = graph.tracking_defect(
        &x,
        config.run.t_final,
        config.run.anchor_step,
        config.run.dt,
    )?;
    let mut table = Table::new(&["t", "defect", "log_defect"]);
    for (&t, &d) in series.times.iter().zip(&series.defects) {
        table.push(vec![t, d, d.ln()]);
    }
    em.write_table("defect", &table)?;
    em.metric("log_slope", series.log_slope);
    em.metric("beta", graph.beta());
    Ok(())
}

fn run_converge_solutions(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let nl = config.nonlinearity.build()?;
    let (conj, orig) = solution_convergence(
        &spec,
        &nl,
        &SolutionConvergeParams {
            alphas: config.noise.alphas.clone(),
            n_seeds: config.noise.seeds,
            seed0: config.noise.seed,
            t_final: config.run.t_final,
            dt: config.run.dt,
            mesh: config.noise.mesh,
            tail: config.solver.ou_tail,
            eps: config.run.eps_threshold,
            x: config.initial_state(&spec),
        },
    )?;
    for (name, rows) in [("solutions_conjugated", conj), ("solutions_original", orig)] {
        let mut table = Table::new(&["alpha", "median_sup_error", "frac_below_eps", "eps", "n"]);
        for r in &rows {
            table.push(vec![
                r.alpha,
                r.median_sup_error,
                r.frac_below_eps,
                r.eps,
                r.n as f64,
            ]);
        }
        em.write_table(name, &table)?;
        em.plot(
            name,
            &table,
            &AxesSpec {
                x: "alpha".into(),
                y: vec!["median_sup_error".into()],
            },
        )?;
    }
    Ok(())
}

fn run_converge_manifolds(config: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let spec = config.spectrum.build()?;
    let nl = config.nonlinearity.build()?;
    let rows = manifold_convergence(
        &spec,
        &nl,
        &ManifoldConvergeParams {
            alphas: config.noise.alphas.clone(),
            n_seeds: config.noise.seeds,
            seed0: config.noise.seed,
            mesh: config.noise.mesh,
            solver: config.solver.params(),
            xi_count: config.run.xi_count,
            xi_scale: config.run.xi_scale,
            xi_seed: config.noise.seed,
        },
    )?;
    let mut table = Table::new(&[
        "alpha",
        "median_psi_diff",
        "median_dpsi_diff",
        "median_transformed_diff",
        "n",
    ]);
    for r in &rows {
        table.push(vec![
            r.alpha,
            r.median_psi_diff,
            r.median_dpsi_diff,
            r.median_transformed_diff,
            r.n as f64,
        ]);
    }
    em.write_table("manifold_convergence", &table)?;
    em.plot(
        "manifold_convergence",
        &table,
        &AxesSpec {
            x: "alpha".into(),
            y: vec![
                "median_psi_diff".into(),
                "median_dpsi_diff".into(),
                "median_transformed_diff".into(),
            ],
        },
    )?;
    Ok(())
}

/// Distances of two independent random step paths: used by the acceptance
/// suite and the Python bindings.
pub fn step_pair_distances(seed: u64, budget: usize) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mk = |rng: &mut rand_chacha::ChaCha12Rng| -> Result<crate::path::CadlagPath> {
        let jump = 0.1 + 0.8 * rng.random::<f64>();
        let height = 2.0 * rng.random::<f64>() - 1.0;
        let mut times = vec![0.0, jump, 1.0];
        times.dedup();
        let values = times
            .iter()
            .map(|&t| if t >= jump { height } else { 0.0 })
            .collect();
        crate::path::CadlagPath::new(times, values, PathKind::PiecewiseConstant)
    };
    let a = mk(&mut rng)?;
    let b = mk(&mut rng)?;
    let d_u = uniform_distance(&a, &b, 0.0, 1.0)?;
    let rep = j1_distance_upper(&a, &b, 0.0, 1.0, budget)?;
    Ok((d_u, rep.d_j1_upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_identically() {
        let config = ExperimentConfig::default();
        let text = config.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(text, back.to_toml());
    }

    #[test]
    fn config_defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_alpha_names_the_field() {
        let mut config = ExperimentConfig::default();
        config.noise.alphas = vec![1.5, 2.5];
        let err = config.validate().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("noise.alphas[1]"), "message was: {msg}");
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let config = ExperimentConfig::from_toml(
            "[experiment]\nkind = \"ou-converge\"\n[noise]\nseeds = 7\n",
        )
        .unwrap();
        assert_eq!(config.experiment.kind, ExperimentKind::OuConverge);
        assert_eq!(config.noise.seeds, 7);
        assert_eq!(config.solver.mu, 0.9);
    }

    #[test]
    fn table_csv_and_missing_column() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1.0, 2.5]);
        assert_eq!(t.to_csv(), "a,b\n1,2.5\n");
        assert!(matches!(t.column("c"), Err(Error::Config(_))));
    }

    #[test]
    fn plot_emission_and_empty_table_warning() {
        let dir = std::env::temp_dir().join(format!("lm-plot-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut t = Table::new(&["alpha", "v"]);
        let axes = AxesSpec {
            x: "alpha".into(),
            y: vec!["v".into()],
        };
        // empty: dat only
        let files = emit_plot_data(&t, &axes, &dir.join("empty")).unwrap();
        assert_eq!(files.len(), 1);
        // three rows: dat carries the monotone annotation, svg exists
        t.push(vec![1.5, 3.0]);
        t.push(vec![1.9, 2.0]);
        t.push(vec![1.99, 1.0]);
        let files = emit_plot_data(&t, &axes, &dir.join("three")).unwrap();
        assert_eq!(files.len(), 2);
        let dat = fs::read_to_string(dir.join("three.dat")).unwrap();
        assert!(dat.contains("# monotone-nonincreasing v: true"));
        assert!(fs::read_to_string(dir.join("three.svg"))
            .unwrap()
            .contains("polyline"));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn check_gap_run_writes_report_and_margin() {
        let dir = std::env::temp_dir().join(format!("lm-gap-{}", std::process::id()));
        let mut config = ExperimentConfig::default();
        config.experiment.kind = ExperimentKind::CheckGap;
        config.experiment.out_dir = dir.to_string_lossy().into_owned();
        config.spectrum.count = 4;
        config.spectrum.split = 2;
        config.solver.lipschitz = 0.5;
        let manifest = run(&config).unwrap();
        assert!((manifest.metrics["margin"] - 5.0 / 3.0).abs() < 1e-12);
        assert!(manifest.outputs.contains(&"gap_report.json".to_string()));

        // the N = 1 variant violates the gap
        config.spectrum.split = 1;
        let err = run(&config).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn runs_are_byte_identical() {
        let base = std::env::temp_dir().join(format!("lm-det-{}", std::process::id()));
        let mut config = ExperimentConfig::default();
        config.experiment.kind = ExperimentKind::OuConverge;
        config.noise.alphas = vec![1.8, 2.0];
        config.noise.seeds = 4;
        config.noise.mesh = 1.0 / 64.0;
        config.solver.ou_tail = 10.0;
        config.run.t_final = 0.5;
        let mut outputs = Vec::new();
        for tag in ["a", "b"] {
            let dir = base.join(tag);
            config.experiment.out_dir = dir.to_string_lossy().into_owned();
            run(&config).unwrap();
            outputs.push(fs::read(dir.join("ou_convergence.csv")).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn threaded_run_matches_serial() {
        let base = std::env::temp_dir().join(format!("lm-thr-{}", std::process::id()));
        let mut config = ExperimentConfig::default();
        config.experiment.kind = ExperimentKind::OuConverge;
        config.noise.alphas = vec![1.7];
        config.noise.seeds = 6;
        config.noise.mesh = 1.0 / 64.0;
        config.solver.ou_tail = 10.0;
        config.run.t_final = 0.5;
        let mut outputs = Vec::new();
        for (tag, threads) in [("one", 1), ("many", 4)] {
            let dir = base.join(tag);
            config.experiment.threads = threads;
            config.experiment.out_dir = dir.to_string_lossy().into_owned();
            run(&config).unwrap();
            outputs.push(fs::read(dir.join("ou_convergence.csv")).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        fs::remove_dir_all(&base).ok();
    }
}
