use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spreadlab_core::contagion::{aggregate_runs, run, EventContext, SimConfig};
use spreadlab_core::events::{EventRecord, Severity};
use spreadlab_core::gateway::{parse_decision, placeholders, render_prompts, Templates};
use spreadlab_core::graph::generate_k_regular;
use spreadlab_core::logistic::{nll, nll_gradient, sigmoid, ExposureDataset, ExposureRow, LinearTraitParams, LogisticParams};
use spreadlab_core::meanfield::{fit_tau, integrate, stability, FitTauOptions, MeanFieldParams, MeanFieldState, DEFAULT_STEP};
use spreadlab_core::metrics::{nrmse, rmse};
use spreadlab_core::policy::{DecisionContext, DecisionPolicy, TablePolicy};
use spreadlab_core::traits::{assign_profiles, enumerate_profiles, ProfileGrouping, TraitProfile};

fn regular_params() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=6, 8usize..=48).prop_map(|(k, n)| if n * k % 2 == 1 { (n + 1, k) } else { (n, k) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_graphs_are_simple_regular_connected((n, k) in regular_params(), seed in any::<u64>()) {
        let g = generate_k_regular(n, k, seed).unwrap();
        prop_assert_eq!(g.edge_count(), n * k / 2);
        for v in 0..n {
            prop_assert_eq!(g.degree(v), k);
            prop_assert!(!g.neighbors(v).contains(&v));
            prop_assert!(g.neighbors(v).windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert!(g.is_connected());
    }

    #[test]
    fn profile_string_roundtrip(i in 0usize..32) {
        let p = TraitProfile::from_index(i).unwrap();
        prop_assert_eq!(p.to_string().parse::<TraitProfile>().unwrap(), p);
        prop_assert_eq!(TraitProfile::from_bits(p.bits()), p);
    }

    #[test]
    fn assignment_is_balanced(n in 1usize..300, seed in any::<u64>()) {
        let counts = assign_profiles(n, seed).counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
    }

    #[test]
    fn runs_are_monotone_and_conserve_agents(
        (n, k) in regular_params(),
        seed in any::<u64>(),
        rate in 0.05f64..1.0,
        t_max in 1usize..20,
    ) {
        let g = generate_k_regular(n, k, seed).unwrap();
        let profiles = assign_profiles(n, seed);
        let grouping = ProfileGrouping::two_groups(enumerate_profiles()[..16].to_vec(), enumerate_profiles()[16..].to_vec());
        let policy = TablePolicy::uniform(rate).unwrap();
        let ev = EventContext { event_id: "e".into(), severity: Severity::Severe };
        if let Ok(r) = run(&g, &profiles.0, &policy, &ev, &SimConfig::new(t_max, "r"), seed) {
            prop_assert_eq!(r.curve.len(), t_max + 1);
            prop_assert_eq!(r.curve[0], 1.0 / n as f64);
            prop_assert!(r.curve.windows(2).all(|w| w[1] >= w[0]));
            let groups = r.group_curves(&grouping);
            for t in 0..=t_max {
                let engaged = (r.curve[t] * n as f64).round() as usize;
                let unengaged = r.engaged_at.iter().filter(|at| at.is_none_or(|a| a > t)).count();
                prop_assert_eq!(engaged + unengaged, n);
                prop_assert!((groups[0][t] + groups[1][t] - r.curve[t]).abs() < 1e-12);
            }
            // Rerun with the same seed is identical.
            let again = run(&g, &profiles.0, &policy, &ev, &SimConfig::new(t_max, "r"), seed).unwrap();
            prop_assert_eq!(&r, &again);
            let agg = aggregate_runs(&[r.clone(), again], None).unwrap();
            prop_assert!(agg.std.iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn trajectories_conserve_mass_and_are_monotone(
        tau1 in 0.0f64..1.0, tau2 in 0.0f64..1.0, k in 1u32..12, a in 0.0f64..=1.0, n in 4usize..1000,
    ) {
        let p = MeanFieldParams::new(tau1, tau2, k as f64).unwrap();
        let traj = integrate(&p, &MeanFieldState::seeded(n, a), 15, DEFAULT_STEP).unwrap();
        for w in traj.states.windows(2) {
            prop_assert!((w[1].mass() - 1.0).abs() < 1e-9);
            prop_assert!(w[1].e >= w[0].e);
            prop_assert!(w[1].u1 <= w[0].u1 && w[1].u2 <= w[0].u2);
        }
    }

    #[test]
    fn swapping_groups_preserves_engagement(
        tau1 in 0.0f64..1.0, tau2 in 0.0f64..1.0, a in 0.0f64..=1.0,
    ) {
        let e0 = 0.01;
        let init = MeanFieldState::new(a * (1.0 - e0), (1.0 - a) * (1.0 - e0), e0);
        let swapped = MeanFieldState::new(init.u2, init.u1, e0);
        let x = integrate(&MeanFieldParams::new(tau1, tau2, 5.0).unwrap(), &init, 15, DEFAULT_STEP).unwrap();
        let y = integrate(&MeanFieldParams::new(tau2, tau1, 5.0).unwrap(), &swapped, 15, DEFAULT_STEP).unwrap();
        for (s, t) in x.states.iter().zip(&y.states) {
            prop_assert!((s.e - t.e).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_rate_matches_unstable_eigenvalue(
        tau1 in 0.001f64..1.0, tau2 in 0.001f64..1.0, k in 1u32..12, a in 0.0f64..=1.0,
    ) {
        let p = MeanFieldParams::new(tau1, tau2, k as f64).unwrap();
        let r = stability(&p, &MeanFieldState::spread_free(a)).unwrap();
        let formula = k as f64 * (tau1 * a + tau2 * (1.0 - a));
        prop_assert!((r.eigenvalues[1] - formula).abs() < 1e-6);
        prop_assert!((r.lambda.unwrap() - formula).abs() < 1e-12);
        for i in 0..2 {
            prop_assert!((r.eigenvalues[i] - r.fd_eigenvalues[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn rmse_symmetric_and_shift_invariant(
        v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..32), c in -5.0f64..5.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let r = rmse(&a, &b).unwrap();
        prop_assert!((r - rmse(&b, &a).unwrap()).abs() < 1e-15);
        let sa: Vec<f64> = a.iter().map(|x| x + c).collect();
        let sb: Vec<f64> = b.iter().map(|x| x + c).collect();
        prop_assert!((rmse(&sa, &sb).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn nrmse_scale_invariant(
        v in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..32), lambda in 0.01f64..100.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let sa: Vec<f64> = a.iter().map(|x| x * lambda).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * lambda).collect();
        let base = nrmse(&a, &b).unwrap();
        prop_assert!((nrmse(&sa, &sb).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn sigmoid_is_bounded_and_symmetric(z in -700.0f64..700.0) {
        let s = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences(
        beta in prop::array::uniform5(-2.0f64..2.0), beta_s in -2.0f64..2.0, intercept in -2.0f64..2.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles = enumerate_profiles();
        let rows = (0..400)
            .map(|i| ExposureRow {
                profile: profiles[i % 32],
                severity: if i % 3 == 0 { Severity::Severe } else { Severity::Peaceful },
                engaged: rand::Rng::random_bool(&mut rng, 0.4),
            })
            .collect();
        let data = ExposureDataset::new(rows);
        let mut params = LogisticParams::Linear(LinearTraitParams { beta_traits: beta, beta_s, intercept });
        let g = nll_gradient(&params, &data).unwrap();
        let theta = params.coefficients();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut t = theta.clone();
            t[i] += h;
            params.set_coefficients(&t);
            let up = nll(&params, &data).unwrap();
            t[i] -= 2.0 * h;
            params.set_coefficients(&t);
            let down = nll(&params, &data).unwrap();
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn rendered_prompts_have_no_placeholders(text in "[ -~]{1,80}", i in 0usize..32) {
        let ev = EventRecord {
            id: "e".into(),
            text: text.replace(['{', '}'], ""),
            disorder_type: String::new(),
            event_type: String::new(),
            sub_event_type: String::new(),
        };
        let b = render_prompts(&Templates::default(), TraitProfile::from_index(i).unwrap(), &ev).unwrap();
        prop_assert!(placeholders(&b.system_text).is_empty());
        prop_assert!(placeholders(&b.content_text).is_empty());
        prop_assert!(b.content_text.contains(&ev.text));
    }

    #[test]
    fn leading_yes_or_no_parses(word in "[yY][eE][sS]|[nN][oO]", rest in "([ ,.!][ -~]{0,40})?") {
        let reply = format!("{word}{rest}");
        prop_assert_eq!(parse_decision(&reply), Some(word.eq_ignore_ascii_case("yes")));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fit_never_worse_than_its_starts(tau1 in 0.0f64..0.5, tau2 in 0.0f64..0.5) {
        let init = MeanFieldState::seeded(128, 0.5);
        let p = MeanFieldParams::new(tau1, tau2, 5.0).unwrap();
        let obs = integrate(&p, &init, 15, DEFAULT_STEP).unwrap().engaged();
        prop_assume!(obs[15] - obs[0] > 1e-6);
        let fit = fit_tau(&obs, &init, 5.0, &FitTauOptions::default()).unwrap();
        for m in &fit.multistart_trace {
            prop_assert!(fit.objective <= m.start_objective);
            prop_assert!(m.objective <= m.start_objective);
        }
    }
}

#[test]
fn table_policy_passes_chi_square() {
    // 10^4 draws per rate, 1 degree of freedom; critical value at alpha = 0.001.
    for (i, p) in [0.0533, 0.25, 0.5, 0.8154, 0.97].into_iter().enumerate() {
        let policy = TablePolicy::uniform(p).unwrap();
        let ctx = DecisionContext {
            profile: TraitProfile::from_index(0).unwrap(),
            severity: Severity::Peaceful,
            agent_id: 0,
            iteration: 1,
            exposure_index: 0,
            event_id: "e",
        };
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let draws = 10_000.0;
        let yes = (0..10_000).filter(|_| policy.decide(&ctx, &mut rng).unwrap().yes).count() as f64;
        let chi2 = (yes - draws * p).powi(2) / (draws * p) + (draws - yes - draws * (1.0 - p)).powi(2) / (draws * (1.0 - p));
        assert!(chi2 < 10.828, "p = {p}: chi2 = {chi2}");
    }
}
