//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `cargo test --test acceptance -- --nocapture` to see them all).
//! Tolerances and budgets are pinned in code; the tests serialize on a mutex
//! so the printed wall times are honest on any machine.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use levy_manifold::dynamics::{
    integrate_with_ou, solution_convergence, Nonlinearity, SolutionConvergeParams,
};
use levy_manifold::manifold::{
    manifold_convergence, xi_probe_set, ManifoldConvergeParams, ManifoldGraph, SolverParams,
};
use levy_manifold::metrics::j1_distance_upper;
use levy_manifold::noise::{intensity_ratio, sample_positive_stable, NoiseScenario};
use levy_manifold::ou::{ou_convergence_table, OuConvergeParams, OuPath};
use levy_manifold::path::{CadlagPath, PathKind};
use levy_manifold::spectral::Spectrum;
use levy_manifold::state::StateVec;
use levy_manifold::Part;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

static GATE: Mutex<()> = Mutex::new(());

struct Criterion {
    id: u32,
    name: &'static str,
    started: Instant,
    budget: Duration,
}

impl Criterion {
    fn start(id: u32, name: &'static str, budget_secs: u64) -> (Self, std::sync::MutexGuard<'static, ()>) {
        let guard = GATE.lock().unwrap_or_else(|e| e.into_inner());
        (
            Self {
                id,
                name,
                started: Instant::now(),
                budget: Duration::from_secs(budget_secs),
            },
            guard,
        )
    }

    fn finish(self, pass: bool, detail: String) {
        let elapsed = self.started.elapsed();
        let within = elapsed <= self.budget;
        println!(
            "criterion {:02} [{}] {}: {} ({:.2?} of {:?} budget)",
            self.id,
            if pass && within { "PASS" } else { "FAIL" },
            self.name,
            detail,
            elapsed,
            self.budget,
        );
        assert!(pass, "criterion {} failed: {detail}", self.id);
        assert!(
            within,
            "criterion {} exceeded its runtime budget: {elapsed:.2?} > {:?}",
            self.id, self.budget
        );
    }
}

fn squares(count: usize, split: usize) -> Spectrum {
    Spectrum::power_family(2.0, count, split, 0.0).unwrap()
}

#[test]
fn criterion_01_gap_arithmetic() {
    let (c, _g) = Criterion::start(1, "spectral gap arithmetic", 1);
    let pass_report = squares(4, 2).check_gap(0.5, 0.9).unwrap();
    let fail_report = squares(4, 1).check_gap(0.5, 0.9).unwrap();
    let tol = 1e-12;
    let ok = pass_report.satisfied
        && (pass_report.margin - 5.0 / 3.0).abs() < tol
        && (pass_report.beta - (4.0 + 1.0 / 0.9)).abs() < tol
        && pass_report.beta > 4.0
        && pass_report.beta < 9.0
        && !fail_report.satisfied
        && (fail_report.lhs - 3.0).abs() < tol
        && (fail_report.rhs - 10.0 / 3.0).abs() < tol;
    c.finish(
        ok,
        format!(
            "N=2 margin {:.12} (want 5/3), beta {:.9}; N=1 lhs {} < rhs {:.6}",
            pass_report.margin, pass_report.beta, fail_report.lhs, fail_report.rhs
        ),
    );
}

#[test]
fn criterion_02_closed_form_manifold() {
    let (c, _g) = Criterion::start(2, "closed-form manifold", 5);
    let sc = NoiseScenario::zero(-60.0, 1.0, 0.125).unwrap();
    let spec = squares(4, 2);
    let nl = Nonlinearity::CrossCouple {
        eps: 0.1,
        from: 0,
        to: 2,
    };
    let params = SolverParams {
        t_minus: 10.0,
        tol_fp: 1e-10,
        ..SolverParams::default()
    };
    let graph = ManifoldGraph::new(sc, spec, nl, params).unwrap();
    let xi1 = 1.0;
    let mut xi = StateVec::zeros(4);
    xi[0] = xi1;
    let psi = graph.psi(&xi).unwrap();
    let d = graph.d_psi(&xi).unwrap();
    let err_psi = (psi[2] - 0.0125 * xi1).abs();
    let err_dpsi = (d.cols[0][2] - 0.0125).abs();
    let ok = err_psi < 1e-6 && err_dpsi < 1e-6;
    c.finish(
        ok,
        format!("psi_3 error {err_psi:.3e}, dpsi_3/dxi_1 error {err_dpsi:.3e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_03_contraction_certificate() {
    let (c, _g) = Criterion::start(3, "contraction certificate", 60);
    let spec = squares(6, 2);
    let nl = Nonlinearity::Saturating { eps: 0.3 };
    let params = SolverParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let mut worst_contraction: f64 = 0.0;
    let mut worst_iters = 0usize;
    for seed in 0..20u64 {
        let alpha = if seed % 2 == 0 { 1.9 } else { 2.0 };
        let sc = NoiseScenario::generate(alpha, seed, -60.0, 0.25, 1.0 / 1024.0).unwrap();
        let graph = ManifoldGraph::new(sc, spec.clone(), nl.clone(), params.clone()).unwrap();
        let mut xi = StateVec::zeros(6);
        for j in 0..2 {
            xi[j] = 2.0 * rng.random::<f64>() - 1.0;
        }
        let sol = graph.lp_solve(&xi).unwrap();
        worst_contraction = worst_contraction.max(sol.contraction);
        worst_iters = worst_iters.max(sol.iterations);
    }
    let gate = params.mu + 0.05;
    let ok = worst_contraction <= gate && worst_iters <= 60;
    c.finish(
        ok,
        format!(
            "20 scenarios: worst contraction {worst_contraction:.4} (gate {gate}), \
             worst iterations {worst_iters} (gate 60)"
        ),
    );
}

#[test]
fn criterion_04_graph_lipschitz_bound() {
    let (c, _g) = Criterion::start(4, "graph Lipschitz bound", 60);
    let spec = squares(6, 2);
    let nl = Nonlinearity::Saturating { eps: 0.3 };
    let params = SolverParams::default();
    let bound = params.mu / (2.0 * (1.0 - params.mu)) + 1e-6;
    let mut worst: f64 = 0.0;
    for seed in [5u64, 6] {
        let sc = NoiseScenario::generate(1.9, seed, -60.0, 0.25, 1.0 / 1024.0).unwrap();
        let graph = ManifoldGraph::new(sc, spec.clone(), nl.clone(), params.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(404 + seed);
        for _ in 0..100 {
            let mut xi1 = StateVec::zeros(6);
            let mut xi2 = StateVec::zeros(6);
            for j in 0..2 {
                xi1[j] = 2.0 * rng.random::<f64>() - 1.0;
                xi2[j] = 2.0 * rng.random::<f64>() - 1.0;
            }
            let dxi = spec.sigma_norm(&xi1.sub(&xi2));
            if dxi < 1e-9 {
                continue;
            }
            let dpsi = spec.sigma_norm(
                &graph.psi(&xi1).unwrap().sub(&graph.psi(&xi2).unwrap()),
            );
            worst = worst.max(dpsi / dxi);
        }
    }
    c.finish(
        worst <= bound,
        format!("worst empirical ratio {worst:.6} vs mu/(2(1-mu)) + 1e-6 = {bound:.6}"),
    );
}

#[test]
fn criterion_05_derivative_check() {
    let (c, _g) = Criterion::start(5, "derivative vs finite differences", 60);
    let spec = squares(6, 2);
    let nl = Nonlinearity::Saturating { eps: 0.3 };
    let params = SolverParams::default();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    for seed in 0..20u64 {
        let alpha = [1.9, 2.0][(seed % 2) as usize];
        let sc = NoiseScenario::generate(alpha, 100 + seed, -60.0, 0.25, 1.0 / 1024.0).unwrap();
        let graph = ManifoldGraph::new(sc, spec.clone(), nl.clone(), params.clone()).unwrap();
        let mut xi = StateVec::zeros(6);
        for j in 0..2 {
            xi[j] = 2.0 * rng.random::<f64>() - 1.0;
        }
        let d = graph.d_psi(&xi).unwrap();
        for j in 0..2 {
            let mut plus = xi.clone();
            plus[j] += h;
            let mut minus = xi.clone();
            minus[j] -= h;
            let fd = graph
                .psi(&plus)
                .unwrap()
                .sub(&graph.psi(&minus).unwrap())
                .scaled(0.5 / h);
            let err = spec.sigma_norm(&fd.sub(&d.cols[j]));
            let scale = spec.sigma_norm(&d.cols[j]).max(1e-8);
            worst = worst.max(err / scale);
        }
    }
    c.finish(worst < 1e-4, format!("worst relative error {worst:.3e} (tol 1e-4)"));
}

#[test]
fn criterion_06_invariance_and_attraction() {
    let (c, _g) = Criterion::start(6, "invariance and exponential attraction", 120);
    let spec = squares(4, 2);
    let nl = Nonlinearity::Saturating { eps: 0.3 };
    let params = SolverParams::default();

    // invariance: start on the graph, defect < 1e-3 (1 + ||x||) on [0, 1]
    // with dt = 1e-3
    let sc = NoiseScenario::generate(1.9, 2, -60.0, 1.25, 1.0 / 1024.0).unwrap();
    let graph = ManifoldGraph::new(sc, spec.clone(), nl.clone(), params.clone()).unwrap();
    let xi = StateVec::new(vec![0.5, -0.3, 0.0, 0.0]);
    let on_graph = xi.add(&graph.psi(&xi).unwrap());
    let series = graph
        .tracking_defect(&on_graph, 1.0, 0.125, 1e-3)
        .unwrap();
    let tol = 1e-3 * (1.0 + spec.sigma_norm(&on_graph));
    let max_defect = series.defects.iter().cloned().fold(0.0f64, f64::max);
    let invariance_ok = max_defect < tol;

    // attraction: off-graph starts, log-slope gate in >= 18 of 20 seeds
    let mut passes = 0;
    let mut beta = 0.0;
    for seed in 0..20u64 {
        let sc = NoiseScenario::generate(1.9, 200 + seed, -60.0, 3.25, 1.0 / 1024.0).unwrap();
        let graph = ManifoldGraph::new(sc, spec.clone(), nl.clone(), params.clone()).unwrap();
        beta = graph.beta();
        let x = StateVec::new(vec![0.5, -0.3, 2.0, 1.0]);
        let series = graph.tracking_defect(&x, 3.0, 0.25, 1.0 / 4096.0).unwrap();
        if series.log_slope <= -beta / 2.0 + 0.2 * beta {
            passes += 1;
        }
    }
    let ok = invariance_ok && passes >= 18;
    c.finish(
        ok,
        format!(
            "on-graph max defect {max_defect:.3e} (tol {tol:.3e}); \
             slope gate -beta/2 + 0.2 beta = {:.3} met in {passes}/20 seeds (need 18)",
            -beta / 2.0 + 0.2 * beta
        ),
    );
}

#[test]
fn criterion_07_ou_convergence_trend() {
    let (c, _g) = Criterion::start(7, "OU convergence trend", 180);
    let rows = ou_convergence_table(&OuConvergeParams {
        alphas: vec![1.5, 1.9, 1.99],
        p: 1.0,
        t_window: 1.0,
        n_seeds: 200,
        seed0: 7000,
        mesh: 1.0 / 1024.0,
        tail: 40.0,
    })
    .unwrap();
    let e: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let ok = e[0] > e[1] && e[1] > e[2] && e[2] < e[0] / 5.0;
    c.finish(
        ok,
        format!(
            "estimates {:.4} > {:.4} > {:.4}, final/first = {:.3} (need < 0.2)",
            e[0],
            e[1],
            e[2],
            e[2] / e[0]
        ),
    );
}

#[test]
fn criterion_08_solution_convergence_trend() {
    let (c, _g) = Criterion::start(8, "solution convergence trend", 300);
    let spec = squares(8, 2);
    let nl = Nonlinearity::Saturating { eps: 0.25 };
    let mut x = StateVec::zeros(8);
    for k in 0..8 {
        x[k] = if k % 2 == 0 { 0.5 } else { -0.5 } / (k + 1) as f64;
    }
    let (conj, orig) = solution_convergence(
        &spec,
        &nl,
        &SolutionConvergeParams {
            alphas: vec![1.5, 1.9, 1.99, 2.0],
            n_seeds: 100,
            seed0: 8000,
            t_final: 1.0,
            dt: 1.0 / 1024.0,
            mesh: 1.0 / 1024.0,
            tail: 40.0,
            eps: 0.1,
            x,
        },
    )
    .unwrap();
    let cm: Vec<f64> = conj.iter().map(|r| r.median_sup_error).collect();
    let om: Vec<f64> = orig.iter().map(|r| r.median_sup_error).collect();
    let ok = cm[0] > cm[1]
        && cm[1] > cm[2]
        && cm[3] == 0.0
        && om[0] > om[1]
        && om[1] > om[2]
        && om[3] == 0.0;
    c.finish(
        ok,
        format!(
            "conjugated medians {:.4} > {:.4} > {:.4}, alpha=2 row {}; \
             original medians {:.4} > {:.4} > {:.4}, alpha=2 row {}",
            cm[0], cm[1], cm[2], cm[3], om[0], om[1], om[2], om[3]
        ),
    );
}

#[test]
fn criterion_09_manifold_convergence_trend() {
    let (c, _g) = Criterion::start(9, "manifold convergence trend", 900);
    let spec = squares(8, 2);
    let nl = Nonlinearity::Saturating { eps: 0.05 };
    let rows = manifold_convergence(
        &spec,
        &nl,
        &ManifoldConvergeParams {
            alphas: vec![1.5, 1.9, 1.99, 2.0],
            n_seeds: 50,
            seed0: 9000,
            mesh: 1.0 / 1024.0,
            solver: SolverParams::default(),
            xi_count: 3,
            xi_scale: 0.5,
            xi_seed: 99,
        },
    )
    .unwrap();
    let psi: Vec<f64> = rows.iter().map(|r| r.median_psi_diff).collect();
    let dpsi: Vec<f64> = rows.iter().map(|r| r.median_dpsi_diff).collect();
    let tr: Vec<f64> = rows.iter().map(|r| r.median_transformed_diff).collect();
    let dec = |v: &[f64]| v[0] > v[1] && v[1] > v[2] && v[3] == 0.0;
    let ok = dec(&psi) && dec(&dpsi) && dec(&tr);
    c.finish(
        ok,
        format!(
            "psi {:.3e} > {:.3e} > {:.3e} (2: {}); dpsi {:.3e} > {:.3e} > {:.3e} (2: {}); \
             transformed {:.3e} > {:.3e} > {:.3e} (2: {})",
            psi[0], psi[1], psi[2], psi[3], dpsi[0], dpsi[1], dpsi[2], dpsi[3], tr[0], tr[1],
            tr[2], tr[3]
        ),
    );
}

#[test]
fn criterion_10_noise_layer_statistics() {
    let (c, _g) = Criterion::start(10, "noise-layer statistics", 60);
    // Laplace transform of unit increments within 3 standard errors
    let n = 100_000usize;
    let mut worst_sigmas: f64 = 0.0;
    for alpha in [1.5, 1.9] {
        let mut rng = ChaCha12Rng::seed_from_u64(1010);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_positive_stable(alpha / 2.0, &mut rng))
            .collect();
        for lambda in [0.5f64, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|&s| (-lambda * s).exp()).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let target = (-lambda.powf(alpha / 2.0)).exp();
            worst_sigmas = worst_sigmas.max((mean - target).abs() / se);
        }
    }
    // intensity-constant degeneration: C(alpha)/(2 - alpha) -> 1
    // (the factor-2 variant printed in the source text contradicts its own
    // formula; C(1) = 1/sqrt(2 pi) pins the constant and this ratio)
    let ratio = intensity_ratio(1.999).unwrap();
    let ratio_ok = (ratio - 1.0).abs() < 1e-2;
    let ok = worst_sigmas <= 3.0 && ratio_ok;
    c.finish(
        ok,
        format!(
            "Laplace worst deviation {worst_sigmas:.2} sigma (gate 3); \
             C(1.999)/(2-1.999) = {ratio:.6} (within 1e-2 of 1: {ratio_ok})"
        ),
    );
}

#[test]
fn criterion_11_semigroup_dichotomy_suite() {
    let (c, _g) = Criterion::start(11, "semigroup dichotomy estimates", 1);
    let mut ok = true;
    let mut detail = String::new();
    for &sigma in &[0.0, 0.5] {
        let spec = Spectrum::power_family(2.0, 6, 2, sigma).unwrap();
        let (lo, hi) = (spec.lambda_low(), spec.lambda_high());
        let mut rng = ChaCha12Rng::seed_from_u64(1111);
        for _ in 0..1000 {
            let mut v = StateVec::new((0..6).map(|_| rng.random::<f64>() - 0.5).collect());
            v = v.scaled(1.0 / v.norm_h());
            let t: f64 = 3.0 * rng.random::<f64>() - 1.5;
            let p = spec.semigroup_apply(t, &v, Part::P, sigma).unwrap();
            ok &= p.norm_h() <= lo.powf(sigma) * (lo * t.abs()).exp() * (1.0 + 1e-12);
            let t = t.abs().max(1e-3);
            let q0 = spec.semigroup_apply(t, &v, Part::Q, 0.0).unwrap();
            ok &= q0.norm_h() <= (-hi * t).exp() * (1.0 + 1e-12);
            let qs = spec.semigroup_apply(t, &v, Part::Q, sigma).unwrap();
            let bound = ((sigma / t).powf(sigma) + hi.powf(sigma)) * (-hi * t).exp();
            ok &= qs.norm_h() <= bound * (1.0 + 1e-12);
        }
        // equality cases on eigenvectors
        let t = 0.8;
        let p = spec
            .semigroup_apply(-t, &StateVec::basis(6, 1), Part::P, sigma)
            .unwrap();
        let p_exact = lo.powf(sigma) * (lo * t).exp();
        ok &= (p.norm_h() - p_exact).abs() <= 1e-12 * p_exact;
        let q = spec
            .semigroup_apply(t, &StateVec::basis(6, 2), Part::Q, sigma)
            .unwrap();
        let q_exact = hi.powf(sigma) * (-hi * t).exp();
        ok &= (q.norm_h() - q_exact).abs() <= 1e-12 * q_exact;
        detail.push_str(&format!("sigma={sigma}: 1000 probes + equality cases; "));
    }
    c.finish(ok, detail);
}

#[test]
fn criterion_12_metrics_suite() {
    let (c, _g) = Criterion::start(12, "path metrics", 10);
    // d_j1_upper <= d_uniform on 100 random step-path pairs
    let mut dominated = true;
    for seed in 0..100u64 {
        let (d_u, d_j1) = levy_manifold::experiments::step_pair_distances(seed, 256).unwrap();
        dominated &= d_j1 <= d_u + 1e-14;
    }

    // shifted-step example: steps at 0.5 vs 0.51 on [0, 1]
    let step = |at: f64| {
        CadlagPath::new(
            vec![0.0, at, 1.0],
            vec![0.0, 1.0, 1.0],
            PathKind::PiecewiseConstant,
        )
        .unwrap()
    };
    let rep = j1_distance_upper(&step(0.5), &step(0.51), 0.0, 1.0, 256).unwrap();
    // Any time change aligning the jumps is pinned on both sides of the knot:
    // the pair quotients (0, 0.5) and (0.5, 1) force
    // max(|ln 1.02|, |ln 0.98|) = |ln 0.98| = 0.020203; misaligned changes
    // cost the full step height instead. The stated 0.02 gate is therefore
    // 1.015% below the optimum of the published objective; see the report
    // value printed here.
    let value_ok = rep.d_j1_upper <= 0.02;
    let ok = dominated && rep.d_uniform == 1.0 && value_ok;
    c.finish(
        ok,
        format!(
            "identity domination on 100 pairs: {dominated}; shifted-step report {:.6} \
             (gate 0.02, attainable optimum |ln 0.98| = {:.6}), d_U = {}",
            rep.d_j1_upper,
            (0.49f64 / 0.5).ln().abs(),
            rep.d_uniform
        ),
    );
}
