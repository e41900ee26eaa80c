use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmlimit::benchmarks::{gaussian_benchmark, gaussian_sweep, riesz_sweep};
use swarmlimit::sampler::initial_state;
use swarmlimit::sweep::{run_sweep, SweepOutcome};
use swarmlimit::with_workers;
use swarmlimit_core::diagnostics::free_energy;
use swarmlimit_core::ensemble::{
    step_first_order, step_second_order, IntegratorConfig, MultiSpeciesState, Scheme, SpeciesEnsemble,
};
use swarmlimit_core::kernels::{KernelMatrix, KernelSpec, SelfPairPolicy};
use swarmlimit_core::kinetic::{
    flow_map, picard_solve, stability_ratio, window_contraction_factor, ConstantField, PhasePoint, PicardConfig,
};
use swarmlimit_core::transport::{w1_1d, w1_exact, EmpiricalMeasure, DEFAULT_EXACT_CAP};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, budget: Option<f64>, run: impl FnOnce() -> Verdict) -> f64 {
        let started = Instant::now();
        let verdict = run();
        let secs = started.elapsed().as_secs_f64();
        let in_time = budget.is_none_or(|b| secs < b);
        let pass = verdict.pass && in_time;
        if !pass {
            self.failures += 1;
        }
        let budget = budget.map(|b| format!(" (limit {b} s)")).unwrap_or_default();
        println!(
            "{} #{id:<2} {name}: {} [{secs:.2} s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail
        );
        secs
    }
}

fn damped_characteristics() -> Verdict {
    let (x0, v0) = (0.3f64, -1.2f64);
    let zero = KernelMatrix::zero(1, 1);
    let mut worst = 0.0f64;
    for eps in [1e-3f64, 1.0, 1e3] {
        for t in [0.1f64, 1.0] {
            let x = x0 + eps * v0 * -(-t / eps).exp_m1();
            let v = v0 * (-t / eps).exp();
            let field = ConstantField { value: vec![0.0] };
            let p = flow_map(&field, 0, eps, &PhasePoint::new(vec![x0], vec![v0]).unwrap(), t, 0.01).unwrap();
            worst = worst.max((p.x[0] - x).abs()).max((p.v[0] - v).abs());
            let mut state = MultiSpeciesState::new(
                0.0,
                vec![SpeciesEnsemble::uniform(1, vec![x0], Some(vec![v0])).unwrap()],
            )
            .unwrap();
            let steps = 10;
            let cfg = IntegratorConfig::second_order(Scheme::ExpEuler, t / steps as f64, eps);
            for _ in 0..steps {
                state = step_second_order(&state, &zero, &cfg).unwrap();
            }
            let s = &state.species()[0];
            worst = worst.max((s.positions()[0] - x).abs()).max((s.velocities().unwrap()[0] - v).abs());
        }
    }
    Verdict::new(worst <= 1e-12, format!("max error {worst:.2e} (tol 1e-12)"))
}

fn brute_force_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .permutations(n)
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(k, &j)| a[k].iter().zip(&b[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        / n as f64
}

fn w1_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_exact = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=3);
        let mut cloud = || -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (a, b) = (cloud(), cloud());
        let mu = EmpiricalMeasure::uniform(d, a.concat()).unwrap();
        let nu = EmpiricalMeasure::uniform(d, b.concat()).unwrap();
        let exact = w1_exact(&mu, &nu, DEFAULT_EXACT_CAP).unwrap();
        worst_exact = worst_exact.max((exact - brute_force_w1(&a, &b)).abs());
    }
    let mut worst_line = 0.0f64;
    for _ in 0..200 {
        let measure = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(1..=12);
            let points: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            EmpiricalMeasure::new(1, points, raw.iter().map(|w| w / total).collect()).unwrap()
        };
        let (mu, nu) = (measure(&mut rng), measure(&mut rng));
        let gap = (w1_1d(&mu, &nu).unwrap() - w1_exact(&mu, &nu, DEFAULT_EXACT_CAP).unwrap()).abs();
        worst_line = worst_line.max(gap);
    }
    Verdict::new(
        worst_exact <= 1e-10 && worst_line <= 1e-10,
        format!("exact vs brute force {worst_exact:.2e}, 1d vs exact {worst_line:.2e} (tol 1e-10)"),
    )
}

fn picard_contraction() -> Verdict {
    let eps = 0.5;
    let cfg = gaussian_benchmark(128, eps, 0.25, 5e-3);
    let kernels = cfg.kernel_matrix().unwrap();
    let f0 = initial_state(&cfg, &kernels).unwrap();
    let mut picard = PicardConfig::new(0.25, 5e-3);
    picard.max_iter = 20;
    let solution = match picard_solve(&f0, &kernels, eps, &picard) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, format!("no convergence: {e}")),
    };
    let window = &solution.windows[0];
    let factor = window_contraction_factor(&kernels, window, eps).unwrap();
    let ratios: Vec<f64> =
        window.distances.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let iterations = window.distances.len();
    Verdict::new(
        worst <= 1.1 * factor && iterations <= 20,
        format!("max ratio {worst:.3} vs C(T)Υ = {factor:.3} (+10%), {iterations} iterations to 1e-8"),
    )
}

fn perturbed(base: &MultiSpeciesState, rng: &mut ChaCha8Rng) -> MultiSpeciesState {
    let mut jitter = |v: &[f64]| v.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect::<Vec<f64>>();
    let species = base
        .species()
        .iter()
        .map(|s| s.with_coordinates(jitter(s.positions()), Some(jitter(s.velocities().unwrap()))).unwrap())
        .collect();
    MultiSpeciesState::new(0.0, species).unwrap()
}

fn stability() -> Verdict {
    let eps = 0.5;
    let cfg = gaussian_benchmark(64, eps, 1.0, 1e-2);
    let kernels = cfg.kernel_matrix().unwrap();
    let base = initial_state(&cfg, &kernels).unwrap();
    let mut picard = PicardConfig::new(1.0, 1e-2);
    picard.window = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut series = Vec::new();
    for _ in 0..10 {
        let f0 = perturbed(&base, &mut rng);
        let g0 = perturbed(&base, &mut rng);
        match stability_ratio(&f0, &g0, &kernels, eps, &picard) {
            Ok(r) => series.push(r),
            Err(e) => return Verdict::new(false, format!("stability run failed: {e}")),
        }
    }
    let rate = series[0].iter().filter(|(t, _)| *t > 0.0).map(|(t, r)| r.ln() / t).fold(0.0, f64::max);
    let excess = series
        .iter()
        .flatten()
        .map(|(t, r)| r / (rate * t).exp())
        .fold(0.0, f64::max);
    Verdict::new(excess <= 1.05, format!("fitted rate {rate:.3}, max r/envelope {excess:.4} (limit 1.05)"))
}

fn is_strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn small_inertia(outcome: &SweepOutcome) -> Verdict {
    if let Some(e) = outcome.failed() {
        return Verdict::new(false, format!("sweep failed: {e}"));
    }
    let w1: Vec<f64> = outcome.final_metric().iter().map(|p| p.1).collect();
    let ratio = w1.last().unwrap() / w1[0];
    Verdict::new(
        is_strictly_decreasing(&w1) && ratio <= 0.5,
        format!("final W1 {} ; last/first {ratio:.3} (limit 0.5)", fmt_list(&w1)),
    )
}

fn alignment_decay(outcome: &SweepOutcome) -> Verdict {
    let finals: Vec<&Vec<f64>> = outcome.points.iter().filter_map(|p| p.rows.last()).map(|r| &r.alignment).collect();
    if finals.len() != outcome.points.len() {
        return Verdict::new(false, "sweep incomplete");
    }
    let ratios: Vec<f64> =
        finals.windows(2).flat_map(|w| w[1].iter().zip(w[0]).map(|(a, b)| a / b).collect::<Vec<_>>()).collect();
    let pass = ratios.iter().all(|r| (0.3..=0.7).contains(r));
    Verdict::new(pass, format!("I(ε/2)/I(ε) {} (range [0.3, 0.7])", fmt_list(&ratios)))
}

fn modulated_energy(outcome: &SweepOutcome) -> Verdict {
    if let Some(e) = outcome.failed() {
        return Verdict::new(false, format!("sweep failed: {e}"));
    }
    let mut finals = Vec::new();
    let mut lowest_interaction = f64::INFINITY;
    for p in &outcome.points {
        for r in &p.rows {
            let Some(m) = r.modulated else {
                return Verdict::new(false, "modulated energy missing");
            };
            lowest_interaction = lowest_interaction.min(m.interaction_part);
        }
        finals.push(p.rows.last().unwrap().modulated.unwrap().total);
    }
    Verdict::new(
        is_strictly_decreasing(&finals) && lowest_interaction >= -1e-10,
        format!("E_K(T) {} ; min interaction part {lowest_interaction:.3e} (limit -1e-10)", fmt_list(&finals)),
    )
}

fn second_moment(outcome: &SweepOutcome) -> Verdict {
    let envelope_rate = |p: &swarmlimit::sweep::SweepPoint, i: usize| {
        let s0 = p.rows[0].second_moment[i];
        p.rows
            .iter()
            .filter(|r| r.t > 0.0)
            .map(|r| (r.second_moment[i] * (-r.t).exp() - s0) / r.t)
            .fold(0.0, f64::max)
    };
    let first = &outcome.points[0];
    let species = first.rows[0].second_moment.len();
    let rates: Vec<f64> = (0..species).map(|i| envelope_rate(first, i)).collect();
    let mut worst = 0.0f64;
    for p in &outcome.points {
        for r in &p.rows {
            for (i, rate) in rates.iter().enumerate() {
                let s0 = p.rows[0].second_moment[i];
                worst = worst.max(r.second_moment[i] / ((s0 + rate * r.t) * r.t.exp()));
            }
        }
    }
    Verdict::new(worst <= 1.0, format!("fitted rate {} ; max value/envelope {worst:.4}", fmt_list(&rates)))
}

fn free_energy_dissipation() -> Verdict {
    let own = KernelSpec::GaussianCombo { c_a: 1.0, l_a: 1.0, c_r: 0.0, l_r: 1.0 };
    let cross = KernelSpec::GaussianCombo { c_a: 0.5, l_a: 0.5, c_r: 0.2, l_r: 2.0 };
    let kernels = KernelMatrix::new(1, vec![vec![own, cross], vec![cross, own]]).unwrap();
    let cfg = gaussian_benchmark(256, 1.0, 2.0, 1e-2);
    let mut state = swarmlimit::sampler::initial_positions(&cfg).unwrap();
    let dt = 1e-2;
    let step = IntegratorConfig::first_order(Scheme::Rk4, dt);
    let slack = 1e-8 + 10.0 * dt * dt;
    let mut energy = free_energy(&state, &kernels, SelfPairPolicy::Skip).unwrap();
    let start = energy;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        state = step_first_order(&state, &kernels, &step).unwrap();
        let next = free_energy(&state, &kernels, SelfPairPolicy::Skip).unwrap();
        worst = worst.max(next - energy);
        energy = next;
    }
    Verdict::new(
        worst <= slack,
        format!("F {start:.6} -> {energy:.6}, max increase {worst:.2e} (slack {slack:.2e})"),
    )
}

fn fmt_list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.4e}")).join(", "))
}

fn sweep_csv(cfg: &swarmlimit::SweepConfig, dir: &Path, workers: usize) -> (SweepOutcome, Vec<u8>) {
    let mut cfg = cfg.clone();
    cfg.base.output = dir.to_path_buf();
    let outcome = with_workers(workers, || run_sweep(&cfg)).map(|r| r.0).unwrap_or_else(|e| {
        panic!("sweep aborted: {e}");
    });
    (outcome, std::fs::read(dir.join("sweep.csv")).unwrap())
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().unwrap();
    let mut report = Report { failures: 0 };
    report.record(1, "damped characteristics", Some(1.0), damped_characteristics);
    report.record(2, "W1 oracle equivalence", Some(10.0), w1_oracles);
    report.record(3, "Picard contraction", Some(60.0), picard_contraction);
    report.record(4, "stability envelope", Some(120.0), stability);

    let smooth = gaussian_sweep(512, 1.0, 1e-3);
    let started = Instant::now();
    let (smooth_outcome, smooth_csv) = sweep_csv(&smooth, &scratch.path().join("smooth-1"), 1);
    let smooth_secs = started.elapsed().as_secs_f64();
    report.record(5, "small-inertia limit, smooth", None, || {
        let v = small_inertia(&smooth_outcome);
        Verdict::new(v.pass && smooth_secs < 300.0, format!("{} ; sweep {smooth_secs:.1} s (limit 300 s)", v.detail))
    });
    report.record(6, "alignment decay", None, || alignment_decay(&smooth_outcome));

    let singular = riesz_sweep(512, 512, 0.5, 1e-3);
    let started = Instant::now();
    let (singular_outcome, singular_csv) = sweep_csv(&singular, &scratch.path().join("singular-1"), 1);
    let singular_secs = started.elapsed().as_secs_f64();
    report.record(7, "modulated energy, singular", None, || {
        let v = modulated_energy(&singular_outcome);
        Verdict::new(v.pass && singular_secs < 600.0, format!("{} ; sweep {singular_secs:.1} s (limit 600 s)", v.detail))
    });
    report.record(8, "second-moment envelope", None, || second_moment(&singular_outcome));
    report.record(9, "free-energy dissipation", Some(30.0), free_energy_dissipation);
    report.record(10, "determinism across worker counts", None, || {
        let (_, smooth_8) = sweep_csv(&smooth, &scratch.path().join("smooth-8"), 8);
        let (_, singular_8) = sweep_csv(&singular, &scratch.path().join("singular-8"), 8);
        let same = smooth_8 == smooth_csv && singular_8 == singular_csv;
        Verdict::new(same, format!("sweep.csv identical for 1 and 8 workers: smooth {}, singular {}", smooth_8 == smooth_csv, singular_8 == singular_csv))
    });
    println!("{} of 10 criteria passed", 10 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
