use mfglab::measures::wasserstein1_samples;
use mfglab::model::{Drift, InitialLaw};
use mfglab::particle::{bridge_absorption_prob, simulate_nplayer, Profile, SimConfig};
use mfglab::pde::{solve_killed_fp_with, FeedbackPolicy, MeanFieldInput};
use mfglab::{presets, Grids};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_solve_balances_mass(
        rate in 0.0f64..2.0,
        target in -1.0f64..3.0,
        loss in -0.5f64..0.5,
        mean in -0.5f64..0.5,
        sigma in 0.3f64..1.5,
        u in -1.0f64..1.0,
    ) {
        let mut m = presets::weakly_coupled::<f64>();
        m.drift = Drift::OuPull { rate, target, loss, mean };
        m.sigma = sigma;
        let g = Grids::for_model(&m, 0.02, 80, None).unwrap();
        let policy = FeedbackPolicy::constant(&m, g, u);
        let out = solve_killed_fp_with(&m, &policy, g, MeanFieldInput::SelfConsistent).unwrap();
        let f = &out.flow;
        for k in 0..f.rows() {
            prop_assert!((f.survivor_mass[k] + f.loss[k] - 1.0).abs() <= 1e-10 * g.time.steps as f64);
            if k > 0 {
                prop_assert!(f.loss[k] >= f.loss[k - 1] - 1e-12);
            }
        }
        prop_assert!(f.density.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn bridge_probability_is_a_probability(
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
        sigma in 0.1f64..2.0,
        dt in 1e-4f64..0.1,
    ) {
        let p = bridge_absorption_prob(a, b, 0.0, sigma, dt);
        prop_assert!((0.0..=1.0).contains(&p));
        // further from the threshold, less likely to have touched it
        prop_assert!(bridge_absorption_prob(a + 0.1, b, 0.0, sigma, dt) <= p);
    }

    #[test]
    fn simulated_loss_is_monotone_and_seed_deterministic(seed in any::<u64>(), n in 2usize..60) {
        let m = presets::weakly_coupled::<f64>();
        let g = Grids::for_model(&m, 0.05, 20, None).unwrap();
        let policy = FeedbackPolicy::constant(&m, g, -0.5);
        let cfg = SimConfig::new(n, 0.05, seed);
        let a = simulate_nplayer(&m, Profile::Shared(&policy), &cfg).unwrap();
        let b = simulate_nplayer(&m, Profile::Shared(&policy), &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.loss.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(a.tau.iter().all(|t| t.is_infinite() || (*t >= 0.0 && *t < 1.0)));
    }

    #[test]
    fn sample_wasserstein_is_a_metric(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        b in prop::collection::vec(-5.0f64..5.0, 1..40),
        c in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let ab = wasserstein1_samples(&a, &b).unwrap();
        let ba = wasserstein1_samples(&b, &a).unwrap();
        let ac = wasserstein1_samples(&a, &c).unwrap();
        let cb = wasserstein1_samples(&c, &b).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(wasserstein1_samples(&a, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn initial_draws_follow_the_support(seed in any::<u64>(), low in -2.0f64..0.0, width in 0.1f64..3.0) {
        let mut m = presets::brownian::<f64>();
        m.initial = InitialLaw::Uniform { low, high: low + width };
        m.threshold = low - 1.0;
        let xs = m.sample_initial(200, seed).unwrap();
        prop_assert!(xs.iter().all(|x| *x >= low && *x <= low + width));
    }
}
