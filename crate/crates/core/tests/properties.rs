use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bridgekit::additive::{decompose_to_potentials, extract_additive_functional, localize_functional};
use bridgekit::fixtures;
use bridgekit::fold::reciprocal_by_folding;
use bridgekit::markov::{bridge, ci_residual, conditional_factorize, is_markov, is_reciprocal, transition_density};
use bridgekit::measure::{
    check_conditioning, disintegrate, relative_entropy, superadditivity_check, DensePathMeasure, FiniteMeasure,
};
use bridgekit::solvers::{self, Block, Ipfp, SolveOptions};

const LIMIT: usize = 1 << 16;

fn random_measure(rng: &mut ChaCha8Rng, shape: &[usize], zero_rate: f64) -> FiniteMeasure {
    let len: usize = shape.iter().product();
    let mut w: Vec<f64> = (0..len).map(|_| if rng.gen_bool(zero_rate) { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[len - 1] = 1.0;
    }
    let s: f64 = w.iter().sum();
    FiniteMeasure::new(shape.to_vec(), w.into_iter().map(|x| x / s).collect()).unwrap()
}

/// A probability charging a random subset of the support of `r`.
fn below(rng: &mut ChaCha8Rng, r: &FiniteMeasure, zero_rate: f64) -> FiniteMeasure {
    let mut w: Vec<f64> =
        r.weights().iter().map(|&x| if x > 0.0 && !rng.gen_bool(zero_rate) { rng.gen_range(0.05..1.0) } else { 0.0 }).collect();
    if w.iter().all(|&x| x == 0.0) {
        let i = r.weights().iter().position(|&x| x > 0.0).unwrap();
        w[i] = 1.0;
    }
    let s: f64 = w.iter().sum();
    FiniteMeasure::new(r.shape().to_vec(), w.into_iter().map(|x| x / s).collect()).unwrap()
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=3)).collect()
}

fn random_coords(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..rank).filter(|_| rng.gen_bool(0.5)).collect();
    if c.is_empty() {
        c.push(rng.gen_range(0..rank));
    }
    c
}

fn path_measure(seed: u64, n: usize, k: usize) -> DensePathMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_measure(&mut rng, &vec![n; k], 0.3);
    let r = fixtures::random_chain(seed, n, k, 0.0).unwrap().to_dense(LIMIT).unwrap();
    DensePathMeasure::from_measure(r.space().clone(), r.grid().clone(), m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_keep_mass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(&mut rng);
        let q = random_measure(&mut rng, &shape, 0.3).scaled(rng.gen_range(0.1..5.0));
        let coords = random_coords(&mut rng, shape.len());
        prop_assert!((q.marginal(&coords).unwrap().mass() - q.mass()).abs() <= 1e-12);
    }

    #[test]
    fn disintegration_reconstructs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(&mut rng);
        let q = random_measure(&mut rng, &shape, 0.3);
        let d = disintegrate(&q, &random_coords(&mut rng, shape.len())).unwrap();
        for (a, b) in d.reconstruct().weights().iter().zip(q.weights()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn entropy_chain_rule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<usize> = (0..rng.gen_range(2..=3)).map(|_| rng.gen_range(2..=3)).collect();
        let r = random_measure(&mut rng, &shape, 0.2);
        let p = below(&mut rng, &r, 0.3);
        let phi = random_coords(&mut rng, shape.len());
        let dp = disintegrate(&p, &phi).unwrap();
        let dr = disintegrate(&r, &phi).unwrap();
        let mut rhs = relative_entropy(&dp.pushforward, &dr.pushforward).unwrap();
        for (b, kp) in &dp.kernels {
            let weight = dp.pushforward.get(b);
            if weight > 0.0 {
                rhs += weight * relative_entropy(kp, dr.kernel(b).unwrap()).unwrap();
            }
        }
        prop_assert!((relative_entropy(&p, &r).unwrap() - rhs).abs() <= 1e-9);
    }

    #[test]
    fn gibbs_and_pinsker(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(&mut rng);
        let r = random_measure(&mut rng, &shape, 0.2);
        let p = below(&mut rng, &r, 0.2);
        let h = relative_entropy(&p, &r).unwrap();
        prop_assert!(h >= -1e-15);
        prop_assert!(relative_entropy(&r, &r).unwrap().abs() <= 1e-15);
        // equality only at p = r, quantitatively
        prop_assert!(p.tv_distance(&r).unwrap() <= (h / 2.0).sqrt() + 1e-12);
    }

    #[test]
    fn coupling_entropy_is_superadditive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let r1 = random_measure(&mut rng, &[n1], 0.0);
        let r2 = random_measure(&mut rng, &[n2], 0.0);
        let pi = random_measure(&mut rng, &[n1, n2], 0.4);
        let s = superadditivity_check(&pi, &r1, &r2).unwrap();
        prop_assert!(s.gap >= -1e-10);
        let prod = pi.product_of_marginals().unwrap();
        prop_assert!(superadditivity_check(&prod, &r1, &r2).unwrap().gap.abs() <= 1e-10);
    }

    #[test]
    fn conditioning_equivalence_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<usize> = (0..rng.gen_range(2..=3)).map(|_| rng.gen_range(1..=3)).collect();
        let q = random_measure(&mut rng, &shape, 0.3).scaled(rng.gen_range(0.5..2.0));
        let p = random_measure(&mut rng, &shape, 0.3);
        let phi = random_coords(&mut rng, shape.len());
        let rep = check_conditioning(&p, &q, &phi).unwrap();
        prop_assert!(rep.holds(), "{rep:?}");
    }

    #[test]
    fn markov_measures_are_reciprocal(seed in any::<u64>(), n in 2usize..=3, k in 2usize..=5) {
        let q = fixtures::random_chain(seed, n, k, 0.3).unwrap().to_dense(LIMIT).unwrap();
        prop_assert!(is_markov(&q, 1e-10).unwrap().holds);
        prop_assert!(is_reciprocal(&q, 1e-10).unwrap().holds);
    }

    #[test]
    fn reciprocity_matches_folding(seed in any::<u64>(), n in 2usize..=3, k in 3usize..=5, kind in 0u8..3) {
        let q = match kind {
            0 => fixtures::random_reciprocal(seed, n, k, LIMIT).unwrap(),
            1 => fixtures::random_chain(seed, n, k, 0.4).unwrap().to_dense(LIMIT).unwrap(),
            _ => path_measure(seed, n, k),
        };
        let direct = is_reciprocal(&q, 1e-10).unwrap().holds;
        prop_assert_eq!(direct, reciprocal_by_folding(&q, 1e-10, LIMIT).unwrap());
    }

    #[test]
    fn bridges_of_reciprocal_measures_are_markov(seed in any::<u64>(), n in 2usize..=3, k in 3usize..=5) {
        let q = fixtures::random_reciprocal(seed, n, k, LIMIT).unwrap();
        let ends = q.marginal(&[0, k - 1]).unwrap();
        for a in 0..n {
            for b in 0..n {
                if ends.weights()[a * n + b] > 0.0 {
                    prop_assert!(is_markov(&bridge(&q, a, b).unwrap(), 1e-9).unwrap().holds);
                }
            }
        }
    }

    #[test]
    fn transition_density_reconstructs_pairs(seed in any::<u64>(), n in 2usize..=3, k in 2usize..=4) {
        let r = path_measure(seed, n, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rng.gen_range(0..k);
        let t = (s + rng.gen_range(1..k)) % k;
        let td = transition_density(&r, s, t).unwrap();
        let pair = r.marginal(&[s, t]).unwrap();
        let (rs, rt) = (r.time_marginal(s).unwrap(), r.time_marginal(t).unwrap());
        for x in 0..n {
            for y in 0..n {
                prop_assert!((td.value(x, y) * rs[x] * rt[y] - pair.weights()[x * n + y]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn conditional_factorization_both_ways(seed in any::<u64>(), n in 2usize..=3, k in 3usize..=4) {
        let rc = fixtures::random_chain(seed, n, k, 0.3).unwrap();
        let r = rc.to_dense(LIMIT).unwrap();
        let p = fixtures::random_chain_within(seed ^ 1, &rc).unwrap().to_dense(LIMIT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.gen_range(1..k - 1);
        let (a, c, b): (Vec<usize>, Vec<usize>, Vec<usize>) = ((0..t).collect(), vec![t], (t + 1..k).collect());
        let fac = conditional_factorize(p.measure(), r.measure(), &a, &b, &c).unwrap();
        for ((d, &pw), &rw) in fac.reconstruct().iter().zip(p.weights()).zip(r.weights()) {
            if rw > 0.0 {
                prop_assert!((d - pw / rw).abs() <= 1e-10 * (pw / rw).max(1.0));
            }
        }
        // converse: any α(A, C) β(B, C) tilt of r keeps A ⫫ B | C
        let alpha: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let beta: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let q = r.reweighted(|p| alpha[p[0] * n + p[t]] * beta[p[k - 1] * n + p[t]]).unwrap().normalize().unwrap();
        prop_assert!(ci_residual(q.measure(), &a, &b, &c).unwrap().residual <= 1e-10);
    }

    #[test]
    fn extracted_functionals_are_additive(seed in any::<u64>(), n in 2usize..=3, k in 2usize..=5) {
        let rc = fixtures::random_chain(seed, n, k, 0.3).unwrap();
        let r = rc.to_dense(LIMIT).unwrap();
        let p = fixtures::random_chain_within(seed ^ 7, &rc).unwrap().to_dense(LIMIT).unwrap();
        let a = extract_additive_functional(&p, &r).unwrap();
        prop_assert!(a.check_additivity(&r).is_ok());
        let q = a.tilt(&r).unwrap();
        prop_assert!(is_markov(&q, 1e-9).unwrap().holds);
    }

    #[test]
    fn localized_functional_charges_only_constrained_times(seed in any::<u64>(), n in 2usize..=3, k in 3usize..=5) {
        let rc = fixtures::random_chain(seed, n, k, 0.0).unwrap();
        let r = rc.to_dense(LIMIT).unwrap();
        let spec = fixtures::random_problem(seed, n, k, 2, false, 0.0, LIMIT).unwrap();
        let sol = solvers::solve(&spec, &SolveOptions { limit: LIMIT, ..SolveOptions::default() }).unwrap();
        let r_spec = spec.dense_reference(LIMIT).unwrap();
        let times = spec.times();
        let a = extract_additive_functional(&sol.p, &r_spec).unwrap();
        let loc = localize_functional(&a, &sol.p, &r_spec, &times).unwrap();
        for (flat, path) in r_spec.paths() {
            if r_spec.weights()[flat] == 0.0 {
                continue;
            }
            prop_assert!((loc.functional.total(&path) - a.total(&path)).abs() <= 1e-9);
            for lo in 0..k {
                for hi in lo..k {
                    if !times.iter().any(|&t| lo <= t && t <= hi) {
                        prop_assert_eq!(loc.functional.closed(&path, lo, hi), 0.0);
                    }
                }
            }
        }
        let _ = r;
    }

    #[test]
    fn reconstruction_is_gauge_invariant(seed in any::<u64>(), n in 2usize..=3, k in 2usize..=4) {
        let spec = fixtures::random_problem(seed, n, k, k.min(3), false, 0.0, LIMIT).unwrap();
        let sol = solvers::solve(&spec, &SolveOptions { limit: LIMIT, ..SolveOptions::default() }).unwrap();
        let r = spec.dense_reference(LIMIT).unwrap();
        let pot = decompose_to_potentials(&sol.p, &r, &spec.times(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shifted = pot.clone();
        let m = shifted.f.len();
        let mut total = 0.0;
        for (i, f) in shifted.f.iter_mut().enumerate() {
            let c = if i + 1 < m { rng.gen_range(-3.0..3.0) } else { -total };
            total += c;
            f.iter_mut().for_each(|v| *v += c);
        }
        let (e0, _) = pot.reconstruction_error(&sol.p, &r).unwrap();
        let (e1, _) = shifted.reconstruction_error(&sol.p, &r).unwrap();
        prop_assert!(e0 <= 1e-9 && e1 <= 1e-9, "{e0} {e1}");
    }

    #[test]
    fn fitting_moves_monotonically_toward_the_solution(seed in any::<u64>(), n in 2usize..=3, k in 2usize..=4) {
        let spec = fixtures::random_problem(seed, n, k, k.min(3), seed % 2 == 0 && k >= 2, 0.0, LIMIT).unwrap();
        let r = spec.dense_reference(LIMIT).unwrap();
        let support: Vec<usize> = (0..r.weights().len()).filter(|&i| r.weights()[i] > 0.0).collect();
        let paths: Vec<Vec<usize>> = support.iter().map(|&i| r.path(i)).collect();
        let mut blocks: Vec<Block> = spec
            .constraints()
            .iter()
            .map(|c| Block { categories: paths.iter().map(|p| p[c.index]).collect(), target: c.target.clone() })
            .collect();
        if let Some(pi) = spec.endpoint() {
            blocks.push(Block { categories: paths.iter().map(|p| p[0] * n + p[k - 1]).collect(), target: pi.to_vec() });
        }
        let targets: Vec<Vec<f64>> = blocks.iter().map(|b| b.target.clone()).collect();
        let mut e = Ipfp::new(support.iter().map(|&i| r.weights()[i]).collect(), blocks).unwrap();
        let mut iterates = Vec::new();
        let mut duals = Vec::new();
        for _ in 0..200 {
            e.refresh();
            let z = e.mass();
            iterates.push(e.weights().iter().map(|w| w / z).collect::<Vec<f64>>());
            duals.push(e.dual());
            for b in 0..e.n_blocks() {
                e.update_block(b).unwrap();
                let m = e.marginal(b);
                for (got, want) in m.iter().zip(&targets[b]) {
                    prop_assert!((got - want).abs() <= 1e-12);
                }
            }
        }
        let sol = solvers::solve(&spec, &SolveOptions { limit: LIMIT, ..SolveOptions::default() }).unwrap();
        let star: Vec<f64> = support.iter().map(|&i| sol.p.weights()[i]).collect();
        let h = |p: &[f64], q: &[f64]| -> f64 {
            p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b).ln()).sum()
        };
        for w in duals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "dual decreased: {} -> {}", w[0], w[1]);
        }
        let dist: Vec<f64> = iterates.iter().map(|q| h(&star, q)).collect();
        for w in dist.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "distance to the solution grew: {} -> {}", w[0], w[1]);
        }
    }
}
