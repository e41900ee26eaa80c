use super::*;
use proptest::prelude::*;
use rand::Rng;

// Reference values of the unnormalized bump integral exp(-1/(1-|x|^2)) over
// the unit ball, evaluated independently at 30 digits.
const BUMP_MASS_1D: f64 = 0.443_993_816_168_079_4;
const BUMP_MASS_2D: f64 = 0.466_512_393_178_330_04;
const BUMP_MASS_3D: f64 = 0.441_088_887_276_604_4;
const BUMP_NORMALIZATION_1D: f64 = 2.252_283_621_043_581;
// Average of the normalized 1-D bump over [-0.05, 0.05].
const BUMP_CENTRAL_CELL: f64 = 0.827_877_847_672_259_7;

fn line(points: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(1, points.to_vec()).unwrap()
}

/// Minimum over all permutations of the mean matched distance.
pub(crate) fn brute_force_w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut c = vec![0usize; n];
    let cost = |p: &[usize]| (0..n).map(|i| euclid(a.point(i), b.point(p[i]))).sum::<f64>() / n as f64;
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn random_cloud(rng: &mut impl Rng, n: usize, d: usize) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn random_weighted(rng: &mut impl Rng, n: usize, d: usize) -> EmpiricalMeasure {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - rest;
    EmpiricalMeasure::new(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(), w).unwrap()
}

#[test]
fn w1_1d_examples() {
    assert_eq!(w1_1d(&line(&[0.0]), &line(&[1.0])).unwrap(), 1.0);
    let mu = line(&[0.3, -0.2, 5.0]);
    assert_eq!(w1_1d(&mu, &mu).unwrap(), 0.0);
    assert_eq!(w1_1d(&line(&[0.0, 2.0]), &line(&[1.0, 3.0])).unwrap(), 1.0);
    let planar = EmpiricalMeasure::dirac(&[0.0, 0.0]);
    assert_eq!(w1_1d(&planar, &planar), Err(Error::DimensionMismatch { expected: 1, got: 2 }));
}

#[test]
fn w1_exact_examples() {
    let a = EmpiricalMeasure::dirac(&[0.0, 0.0]);
    let b = EmpiricalMeasure::dirac(&[3.0, 4.0]);
    assert_eq!(w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap(), 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu = random_cloud(&mut rng, 6, 2);
    assert!(w1_exact(&mu, &mu, DEFAULT_EXACT_CAP).unwrap().abs() < 1e-14);
    assert_eq!(w1_exact(&mu, &mu, 10), Err(Error::SizeCap { size: 12, cap: 10 }));
}

#[test]
fn w1_exact_matches_three_point_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let a = random_cloud(&mut rng, 3, 2);
        let b = random_cloud(&mut rng, 3, 2);
        let exact = w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap();
        assert!((exact - brute_force_w1(&a, &b)).abs() < 1e-10);
    }
}

#[test]
fn w1_exact_matches_brute_force_up_to_eight_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..60 {
        let n = 2 + case % 7;
        let d = 1 + case % 3;
        let a = random_cloud(&mut rng, n, d);
        let b = random_cloud(&mut rng, n, d);
        let exact = w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap();
        let brute = brute_force_w1(&a, &b);
        assert!((exact - brute).abs() < 1e-10, "case {case}: {exact} vs {brute}");
    }
}

#[test]
fn w1_exact_agrees_with_1d_on_weighted_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let a = random_weighted(&mut rng, 1 + case % 13, 1);
        let b = random_weighted(&mut rng, 1 + (case * 7) % 11, 1);
        let exact = w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap();
        let oned = w1_1d(&a, &b).unwrap();
        assert!((exact - oned).abs() < 1e-10, "case {case}: {exact} vs {oned}");
    }
}

#[test]
fn w1_exact_handles_larger_degenerate_instances() {
    // Lattice points with many equal costs.
    let pts: Vec<f64> = (0..300).map(|k| (k % 17) as f64).collect();
    let shifted: Vec<f64> = (0..300).map(|k| (k % 13) as f64 + 0.5).collect();
    let a = line(&pts);
    let b = line(&shifted);
    let exact = w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap();
    assert!((exact - w1_1d(&a, &b).unwrap()).abs() < 1e-10);
}

#[test]
fn translation_moves_by_shift_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = random_cloud(&mut rng, 9, 1);
    let shifted = mu.translate(&[0.7]);
    for value in [
        w1_1d(&mu, &shifted).unwrap(),
        w1_exact(&mu, &shifted, DEFAULT_EXACT_CAP).unwrap(),
        w1_sliced(&mu, &shifted, 3, 0).unwrap(),
    ] {
        assert!((value - 0.7).abs() < 1e-12);
    }
    let planar = random_cloud(&mut rng, 7, 2);
    let moved = planar.translate(&[0.3, -0.4]);
    assert!((w1_exact(&planar, &moved, DEFAULT_EXACT_CAP).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn sliced_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_cloud(&mut rng, 5, 1);
    let b = random_cloud(&mut rng, 4, 1);
    assert_eq!(w1_sliced(&a, &b, 17, 3).unwrap(), w1_1d(&a, &b).unwrap());
    let p = EmpiricalMeasure::dirac(&[0.0, 0.0]);
    let q = EmpiricalMeasure::dirac(&[3.0, 4.0]);
    let estimate = w1_sliced(&p, &q, 1_000_000, 42).unwrap();
    let expected = 2.0 / std::f64::consts::PI * 5.0;
    assert!((estimate - expected).abs() < 3e-3 * expected, "{estimate}");
    let c = random_cloud(&mut rng, 6, 3);
    assert_eq!(w1_sliced(&c, &c, 10, 1).unwrap(), 0.0);
    assert_eq!(w1_sliced(&c, &c, 10, 1).unwrap(), w1_sliced(&c, &c, 10, 1).unwrap());
    assert!(w1_sliced(&c, &c, 0, 1).is_err());
}

#[test]
fn multispecies_sums_species_distances() {
    let f = vec![line(&[0.0]), line(&[0.0])];
    let g = vec![line(&[1.0]), line(&[0.5])];
    assert_eq!(w1_multispecies(&f, &g, W1Method::OneD).unwrap(), 1.5);
    assert_eq!(w1_multispecies(&f, &f, W1Method::default()).unwrap(), 0.0);
    assert_eq!(
        w1_multispecies(&f, &g[..1], W1Method::OneD),
        Err(Error::SpeciesCountMismatch { left: 2, right: 1 })
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f: Vec<_> = (0..2).map(|_| random_cloud(&mut rng, 3, 2)).collect();
    let g: Vec<_> = (0..2).map(|_| random_cloud(&mut rng, 3, 2)).collect();
    let brute: f64 = f.iter().zip(&g).map(|(a, b)| brute_force_w1(a, b)).sum();
    assert!((w1_multispecies(&f, &g, W1Method::default()).unwrap() - brute).abs() < 1e-10);
}

#[test]
fn weights_must_be_normalized() {
    assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5 + 1e-9]).is_err());
}

#[test]
fn moment_examples() {
    assert_eq!(moment(&line(&[0.0, 2.0]), 1), 1.0);
    let a = EmpiricalMeasure::dirac(&[1.5, -2.0]);
    assert!((moment(&a, 2) - 6.25).abs() < 1e-15);
    let pts = [0.25, -1.5, 3.0, 0.125, -0.75];
    let mu = line(&pts);
    let direct: f64 = pts.iter().map(|x| x.abs() * 0.2).sum();
    assert_eq!(moment(&mu, 1), direct);
}

#[test]
fn w1_to_cell_density_examples() {
    let uniform = [1.0];
    assert!((w1_to_cell_density(&line(&[0.5]), 0.0, 1.0, &uniform).unwrap() - 0.25).abs() < 1e-15);
    assert!((w1_to_cell_density(&line(&[2.0]), 0.0, 1.0, &uniform).unwrap() - 1.5).abs() < 1e-15);
    assert!((w1_to_cell_density(&line(&[-1.0]), 0.0, 1.0, &uniform).unwrap() - 1.5).abs() < 1e-15);
    // a two-cell density against its own cell masses placed at fine sub-points
    let values = [0.25, 0.75, 1.0];
    let dx = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..2.0)).collect();
    let mu = line(&z);
    let fine = 4000;
    let pts: Vec<f64> = (0..3 * fine).map(|k| (k as f64 + 0.5) * dx / fine as f64).collect();
    let w: Vec<f64> = (0..3 * fine).map(|k| values[k / fine] * dx / fine as f64).collect();
    let nu = EmpiricalMeasure::new(1, pts, w).unwrap();
    let exact = w1_to_cell_density(&mu, 0.0, dx, &values).unwrap();
    assert!((exact - w1_1d(&mu, &nu).unwrap()).abs() < 1e-4);
}

#[test]
fn bump_normalization_matches_reference() {
    assert!((bump_mass(1) - BUMP_MASS_1D).abs() < 1e-14);
    assert!((bump_mass(2) - BUMP_MASS_2D).abs() < 1e-14);
    assert!((bump_mass(3) - BUMP_MASS_3D).abs() < 1e-14);
    let m = Mollifier::new(1, 1).unwrap();
    assert!((m.normalization() - BUMP_NORMALIZATION_1D).abs() < 1e-13);
}

#[test]
fn mollified_dirac_examples() {
    let grid = UniformGrid::line(-1.55, 1.55, 31).unwrap();
    let dens = mollify_to_grid(&line(&[0.0]), &Mollifier::new(1, 1).unwrap(), &grid).unwrap();
    assert!((dens[15] - BUMP_CENTRAL_CELL).abs() < 1e-12, "{}", dens[15]);
    let h = grid.width(0);
    assert!((dens.iter().sum::<f64>() * h - 1.0).abs() < 1e-12);

    let grid = UniformGrid::line(-1.0, 1.0, 80).unwrap();
    let dens = mollify_to_grid(&line(&[0.0]), &Mollifier::new(4, 1).unwrap(), &grid).unwrap();
    let h = grid.width(0);
    for (c, v) in dens.iter().enumerate() {
        if grid.center(0, c).abs() > 0.25 + h {
            assert_eq!(*v, 0.0);
        }
    }
    assert!(mollify_to_grid(&line(&[0.9]), &Mollifier::new(4, 1).unwrap(), &grid).is_err());
}

#[test]
fn mollified_mass_is_conserved_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<f64> = (0..40).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mu = EmpiricalMeasure::uniform(2, pts).unwrap();
    let grid = UniformGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![24, 24]).unwrap();
    let dens = mollify_to_grid(&mu, &Mollifier::new(3, 2).unwrap(), &grid).unwrap();
    assert!((dens.iter().sum::<f64>() * grid.cell_volume() - 1.0).abs() < 1e-9);
    assert!(dens.iter().all(|v| *v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_axioms(seed in any::<u64>(), n in 2usize..10, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_weighted(&mut rng, n, d);
        let b = random_weighted(&mut rng, n.max(3) - 1, d);
        let c = random_weighted(&mut rng, n + 1, d);
        let ab = w1_exact(&a, &b, DEFAULT_EXACT_CAP).unwrap();
        let ba = w1_exact(&b, &a, DEFAULT_EXACT_CAP).unwrap();
        let bc = w1_exact(&b, &c, DEFAULT_EXACT_CAP).unwrap();
        let ac = w1_exact(&a, &c, DEFAULT_EXACT_CAP).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab + bc - ac >= -1e-10);
        prop_assert!(w1_exact(&a, &a, DEFAULT_EXACT_CAP).unwrap().abs() < 1e-12);
        prop_assert!(ab > 0.0);
    }

    #[test]
    fn mollified_mass_is_one(seed in any::<u64>(), n in 1u32..8, count in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_weighted(&mut rng, count, 1);
        let grid = UniformGrid::line(-3.5, 3.5, 200).unwrap();
        let dens = mollify_to_grid(&mu, &Mollifier::new(n, 1).unwrap(), &grid).unwrap();
        prop_assert!((dens.iter().sum::<f64>() * grid.width(0) - 1.0).abs() < 1e-9);
    }
}
