use proptest::prelude::*;
use swarmlimit_core::diagnostics::{free_energy, grid_free_energy};
use swarmlimit_core::ensemble::{
    step_first_order, step_second_order, support_radius, IntegratorConfig, MultiSpeciesState, Scheme, SpeciesEnsemble,
};
use swarmlimit_core::kernels::{kernel_bounds, KernelMatrix, KernelSpec, SelfPairPolicy};
use swarmlimit_core::kinetic::{flow_map, FnField, PhasePoint};
use swarmlimit_core::macroscopic::{grid_solve_1d, macro_particle_solve, total_mass, DensityGrid1D};
use swarmlimit_core::transport::{w1_to_cell_density, EmpiricalMeasure, Mollifier};

fn gaussian(c_a: f64) -> KernelSpec {
    KernelSpec::GaussianCombo { c_a, l_a: 1.0, c_r: 0.0, l_r: 1.0 }
}

fn line(points: Vec<f64>, velocities: Option<Vec<f64>>) -> MultiSpeciesState {
    MultiSpeciesState::new(0.0, vec![SpeciesEnsemble::uniform(1, points, velocities).unwrap()]).unwrap()
}

fn spread(m: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..m).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / m as f64).collect()
}

/// Relative separation and relative velocity at `t = 1`.
fn second_order_end(scheme: Scheme, dt: f64) -> (f64, f64) {
    let kernels = KernelMatrix::uniform(1, 1, KernelSpec::Quadratic { a: 1.0 }).unwrap();
    let mut state = line(vec![0.0, 1.0], Some(vec![0.3, -0.2]));
    let cfg = IntegratorConfig::second_order(scheme, dt, 0.5);
    let steps = (1.0 / dt).round() as usize;
    for _ in 0..steps {
        state = step_second_order(&state, &kernels, &cfg).unwrap();
    }
    let s = &state.species()[0];
    let v = s.velocities().unwrap();
    (s.positions()[1] - s.positions()[0], v[1] - v[0])
}

fn gap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn observed_order(scheme: Scheme, dt: f64) -> f64 {
    let a = second_order_end(scheme, dt);
    let b = second_order_end(scheme, dt / 2.0);
    let c = second_order_end(scheme, dt / 4.0);
    (gap(a, b) / gap(b, c)).log2()
}

#[test]
fn richardson_orders_on_two_particle_benchmark() {
    let exp_euler = observed_order(Scheme::ExpEuler, 0.02);
    let rk4 = observed_order(Scheme::Rk4, 0.05);
    assert!(exp_euler >= 1.0, "exp-euler order {exp_euler}");
    assert!(rk4 >= 3.9, "rk4 order {rk4}");
}

#[test]
fn rk4_and_exp_euler_agree_to_first_order() {
    let diff = |dt: f64| gap(second_order_end(Scheme::Rk4, dt), second_order_end(Scheme::ExpEuler, dt));
    let ratio = diff(0.01) / diff(0.005);
    assert!(ratio > 1.8, "gap ratio {ratio}");
}

#[test]
fn center_of_mass_is_conserved() {
    let kernels = KernelMatrix::uniform(1, 1, KernelSpec::GaussianCombo { c_a: 1.0, l_a: 0.5, c_r: 0.4, l_r: 2.0 }).unwrap();
    let points: Vec<f64> = (0..64).map(|k| ((k * 37) % 64) as f64 / 16.0 - 2.0 + 0.01 * k as f64).collect();
    let mut state = line(points, None);
    let c0: f64 = state.species()[0].positions().iter().sum();
    let cfg = IntegratorConfig::first_order(Scheme::Rk4, 0.01);
    for _ in 0..100 {
        state = step_first_order(&state, &kernels, &cfg).unwrap();
    }
    let c1: f64 = state.species()[0].positions().iter().sum();
    assert!((c1 - c0).abs() < 1e-10, "drift {}", c1 - c0);
}

#[test]
fn support_grows_at_most_linearly() {
    let kernels = KernelMatrix::new(
        1,
        vec![
            vec![gaussian(-0.5), gaussian(0.3)],
            vec![KernelSpec::GaussianCombo { c_a: 0.0, l_a: 1.0, c_r: 0.4, l_r: 0.5 }, gaussian(0.2)],
        ],
    )
    .unwrap();
    let bounds = kernel_bounds(&kernels, 50.0).unwrap();
    let mut state = MultiSpeciesState::new(
        0.0,
        vec![
            SpeciesEnsemble::uniform(1, spread(40, -1.0, 0.2), None).unwrap(),
            SpeciesEnsemble::uniform(1, spread(30, -0.3, 1.0), None).unwrap(),
        ],
    )
    .unwrap();
    let r0 = support_radius(&state);
    let dt = 0.01;
    let cfg = IntegratorConfig::first_order(Scheme::Rk4, dt);
    for n in 1..=200 {
        state = step_first_order(&state, &kernels, &cfg).unwrap();
        let t = n as f64 * dt;
        assert!(support_radius(&state) <= r0 + bounds.xi * t + 1e-12, "t = {t}");
    }
}

#[test]
fn particle_free_energy_decreases() {
    let kernels = KernelMatrix::new(
        1,
        vec![vec![gaussian(1.0), gaussian(0.5)], vec![gaussian(0.5), gaussian(0.8)]],
    )
    .unwrap();
    let rho0 = MultiSpeciesState::new(
        0.0,
        vec![
            SpeciesEnsemble::uniform(1, spread(50, -2.0, 0.5), None).unwrap(),
            SpeciesEnsemble::uniform(1, spread(50, -0.5, 2.0), None).unwrap(),
        ],
    )
    .unwrap();
    let dt = 0.01;
    let states = macro_particle_solve(&rho0, &kernels, 2.0, dt, Scheme::Rk4).unwrap();
    let energies: Vec<f64> =
        states.iter().map(|s| free_energy(s, &kernels, SelfPairPolicy::Skip).unwrap()).collect();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + dt * dt, "{} -> {}", w[0], w[1]);
    }
    assert!(energies.last().unwrap() < &energies[0]);
}

fn bump_grid(cells: usize, x_min: f64, dx: f64) -> DensityGrid1D {
    let raw: Vec<f64> = (0..cells)
        .map(|c| {
            let x = x_min + (c as f64 + 0.5) * dx;
            (-(x - 0.3) * (x - 0.3) / 0.2).exp() + 0.5 * (-(x + 0.6) * (x + 0.6) / 0.1).exp()
        })
        .collect();
    let mass: f64 = raw.iter().sum::<f64>() * dx;
    DensityGrid1D::new(0.0, x_min, dx, vec![raw.iter().map(|v| v / mass).collect()]).unwrap()
}

#[test]
fn grid_free_energy_decreases_and_mass_is_kept() {
    let kernels = KernelMatrix::uniform(1, 1, gaussian(1.0)).unwrap();
    let rho0 = bump_grid(200, -4.0, 0.04);
    let dt = 0.005;
    let frames = grid_solve_1d(&rho0, &kernels, 1.0, dt, 10).unwrap();
    let energies: Vec<f64> = frames.iter().map(|f| grid_free_energy(&f.rho, &kernels).unwrap()).collect();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + 10.0 * dt * dt, "{} -> {}", w[0], w[1]);
    }
    for f in &frames {
        assert!((total_mass(&f.rho) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn particle_and_grid_references_agree() {
    let kernels = KernelMatrix::uniform(1, 1, gaussian(1.0)).unwrap();
    let m = 200;
    let (x_min, cells) = (-3.0, 300);
    let dx = 6.0 / cells as f64;
    let rho0 = line(spread(m, -1.0, 1.0), None);
    let moll = Mollifier::with_scale(0.5 / dx, 1).unwrap();
    let grid0 = DensityGrid1D::from_state(&rho0, &moll, x_min, dx, cells).unwrap();
    let dt = 0.005;
    let particles = macro_particle_solve(&rho0, &kernels, 1.0, dt, Scheme::Rk4).unwrap();
    let frames = grid_solve_1d(&grid0, &kernels, 1.0, dt, 1).unwrap();
    let last = frames.last().unwrap();
    let mu = EmpiricalMeasure::from_positions(&particles.last().unwrap().species()[0]);
    let w1 = w1_to_cell_density(&mu, x_min, dx, &last.rho.values[0]).unwrap();
    assert!(w1 <= 5.0 * (dx + 1.0 / m as f64), "w1 {w1}");
}

fn sine_flow(p: &PhasePoint, t: f64) -> PhasePoint {
    let field = FnField {
        dim: 1,
        f: |_s: usize, _t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = x[0].sin();
            Ok(())
        },
    };
    flow_map(&field, 0, 0.5, p, t, 0.01).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flow_is_lipschitz_in_initial_data(
        x1 in -2.0f64..2.0, v1 in -2.0f64..2.0, x2 in -2.0f64..2.0, v2 in -2.0f64..2.0,
    ) {
        let p1 = PhasePoint::new(vec![x1], vec![v1]).unwrap();
        let p2 = PhasePoint::new(vec![x2], vec![v2]).unwrap();
        prop_assume!(p1.distance(&p2) > 1e-9);
        let t = 1.0;
        let moved = sine_flow(&p1, t).distance(&sine_flow(&p2, t));
        // unit Lipschitz field and ε = 0.5: the linearized flow grows at most like e^{(Lip + 1) t / ε}
        prop_assert!(moved <= p1.distance(&p2) * (2.0 * 2.0 * t).exp());
    }
}

