use proptest::prelude::*;

use wrdyn::config::ExperimentConfig;
use wrdyn::kernels::{JumpFamily, RepulsionFamily};
use wrdyn::observables::{distinct_tuple_sum, distinct_tuple_sum_brute, Ftilde, Observable, PathMetric};
use wrdyn::rng::Stream;
use wrdyn::sim::{sample_poisson_initial, simulate_path};
use wrdyn::theta::{TestFunction, ThetaFamily};
use wrdyn::{Configuration, Domain, KernelSet, Point};

fn dom() -> Domain {
    Domain::new(1, 10.0).unwrap()
}

fn pts() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0.0..10.0f64).prop_map(|x| [x, 0.0, 0.0]), 0..6)
}

fn cfg() -> impl Strategy<Value = Configuration> {
    (pts(), pts()).prop_map(|(a, b)| Configuration::from_points(&a, &b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_metric_is_a_pseudometric(a in cfg(), b in cfg(), c in cfg()) {
        let m = PathMetric::new(dom());
        let (ab, ba, bc, ac) = (m.distance(&a, &b), m.distance(&b, &a), m.distance(&b, &c), m.distance(&a, &c));
        prop_assert_eq!(m.distance(&a, &a), 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn ftilde_lies_in_unit_interval(g in cfg(), amp in 0.0..2.0f64, center in 0.0..10.0f64, width in 0.2..3.0f64, extra in 0.0..1.0f64) {
        let t0 = TestFunction::new(ThetaFamily::GaussianBump { amp, center: [center, 0.0, 0.0], width }, dom()).unwrap();
        let t1 = TestFunction::new(ThetaFamily::ScaledPsi { amp: amp / 4.0 }, dom()).unwrap();
        let tau = [t0.c + extra, t1.c + extra];
        let f = Ftilde::new([t0, t1], tau).unwrap();
        let v = f.eval(&g);
        prop_assert!(v > 0.0 && v <= 1.0 + 1e-12, "value {}", v);
    }

    #[test]
    fn moved_batch_agrees_with_eval(g in cfg(), ys in prop::collection::vec(0.0..10.0f64, 1..4)) {
        prop_assume!(g.len(0) > 0);
        let t0 = TestFunction::new(ThetaFamily::GaussianBump { amp: 1.0, center: [5.0, 0.0, 0.0], width: 1.0 }, dom()).unwrap();
        let tau = [t0.c, 0.0];
        let f = Ftilde::new([t0, TestFunction::zero(dom())], tau).unwrap();
        let ys: Vec<Point> = ys.into_iter().map(|y| [y, 0.0, 0.0]).collect();
        let got = f.eval_moved_batch(&g, 0, 0, &ys);
        for (y, v) in ys.iter().zip(got) {
            let mut h = g.clone();
            h.types[0][0].pos = *y;
            prop_assert!((v - f.eval(&h)).abs() <= 1e-12 * f.eval(&h).abs().max(1e-300));
        }
    }

    #[test]
    fn distinct_tuple_sum_matches_brute_force(n in 0usize..6, m in 1usize..4, seed in any::<u64>()) {
        let mut rng = Stream::new(seed, 0);
        let u: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.uniform() - 0.3).collect()).collect();
        let (a, b) = (distinct_tuple_sum(&u), distinct_tuple_sum_brute(&u));
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn traces_replay_to_their_final_state(seed in 0u64..1000, sigma in prop::sample::select(vec![0.0, 0.3, 1.0]), height in 0.0..1.5f64) {
        let d = dom();
        let rep = if height > 0.0 { RepulsionFamily::Gaussian { height, width: 0.5 } } else { RepulsionFamily::Zero };
        let ks = KernelSet::symmetric(d, JumpFamily::Gaussian { mass: 1.0, width: 1.0 }, rep).unwrap();
        let mut rng = Stream::new(seed, 0);
        let g0 = sample_poisson_initial([0.4, 0.4], &d, &mut rng);
        let tr = simulate_path(g0.clone(), &ks, 1.0, sigma, seed, 1).unwrap();
        prop_assert!(tr.replay_consistent());
        let end = tr.sample_at(tr.t_end).unwrap();
        prop_assert_eq!(end.point_vec(0), tr.final_configuration().point_vec(0));
        prop_assert_eq!(end.point_vec(1), tr.final_configuration().point_vec(1));
        prop_assert_eq!(tr.sample_at(0.0).unwrap().point_vec(0), g0.point_vec(0));
    }

    #[test]
    fn config_survives_serialization(seed in any::<u64>(), paths in 1usize..5000, kappa in 0.01..2.0f64, sigma in 0.0..=1.0f64, t_end in 0.01..5.0f64) {
        let text = format!(
            "[domain]\nd = 1\nL = 10\n[kernel.a0]\nfamily = top-hat\nmass = 1\nradius = 1\n[initial]\nlaw = poisson\nkappa0 = {kappa}\nkappa1 = {kappa}\n\
             [dynamics]\nsigma = {sigma}\nt_end = {t_end}\n[run]\npaths = {paths}\nseed = {seed}\n"
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        let c2 = ExperimentConfig::parse(&c.serialize()).unwrap();
        prop_assert_eq!(&c, &c2);
        prop_assert_eq!(c2.run.seed, seed);
        prop_assert_eq!(c2.dynamics.sigma, sigma);
    }
}
