mod common;

use causalbias::autodiff::{gradient, Differentiable};
use causalbias::inference::{importance_posterior, PosteriorKind, Query};
use causalbias::zoo::{builtin, linear, LinearModelParams};
use causalbias::{build_scm, Assignment, Expression as E, ModelParams, VariableId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise(scm: &causalbias::Scm, vals: &[f64]) -> Assignment {
    scm.exogenous().iter().zip(vals).map(|(e, v)| (e.name.clone(), *v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn declaration_order_does_not_matter(seed in any::<u64>(), u in prop::collection::vec(-2.0f64..2.0, 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = common::random_dag(6, 0.5, &mut rng);
        let scm = common::linear_scm(&dag, 0, 1, &mut rng);
        let mut spec = scm.to_spec();
        spec.endogenous.reverse();
        spec.exogenous.reverse();
        let shuffled = spec.build().unwrap();
        let a = scm.evaluate_endogenous(&noise(&scm, &u)).unwrap();
        let b = shuffled.evaluate_endogenous(&noise(&scm, &u)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixing_a_variable_at_its_value_changes_nothing(u in prop::collection::vec(-2.0f64..2.0, 4), pick in 0usize..4) {
        let scm = builtin("lesser-evil", None).unwrap();
        let un = noise(&scm, &u);
        let full = scm.evaluate_endogenous(&un).unwrap();
        let name = scm.endogenous()[pick].name.clone();
        let mut fixed = Assignment::new();
        fixed.insert(name.clone(), full[&name]);
        let part = scm.partial_evaluate(&fixed).unwrap().evaluate(&un).unwrap();
        for (k, v) in &part {
            prop_assert!((v - full[k]).abs() <= 1e-12 * v.abs().max(1.0));
        }
        prop_assert!(!part.contains_key(&name));
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random_expr(&["a", "b"], 4, &mut rng);
        let ids: Vec<VariableId> = vec!["a".into(), "b".into()];
        let point: Assignment = ids.iter().cloned().zip([a, b]).collect();
        let g = gradient(&e, &point, &ids).unwrap();
        for (k, v) in ids.iter().enumerate() {
            let at = |d: f64| {
                let mut p = point.clone();
                *p.get_mut(v).unwrap() += d;
                e.eval_at(&p).unwrap()
            };
            let h = 1e-3;
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-6 * g[k].abs().max(1.0), "{} {} {}", e.to_json(), g[k], fd);
        }
    }

    #[test]
    fn inversion_round_trips(c0 in -3.0f64..3.0, c1 in -2.0f64..2.0, s in 0.2f64..3.0, p in -2.0f64..2.0, u in -3.0f64..3.0, form in 0usize..4) {
        let par = E::var("P");
        let un = E::var("U_V");
        let expr = match form {
            0 => (c0 + c1 * par + s * un).sigmoid(),
            1 => c0 + c1 * par.exp() + s * un,
            2 => (c1 * par + s * un).exp() + c0,
            _ => c0 + c1 * par + s * un.powf(3.0),
        };
        let scm = build_scm(
            vec![
                causalbias::ExogenousDecl { name: "U_P".into(), dist: causalbias::NoiseDistribution::StandardGaussian },
                causalbias::ExogenousDecl { name: "U_V".into(), dist: causalbias::NoiseDistribution::StandardGaussian },
            ],
            vec![
                causalbias::EndogenousDef { name: "P".into(), expr: E::var("U_P") },
                causalbias::EndogenousDef { name: "V".into(), expr: expr.clone() },
            ],
            causalbias::Roles::new("P", "V"),
        ).unwrap();
        let mut env: Assignment = [("P".into(), p), ("U_V".into(), u)].into_iter().collect();
        let target = expr.eval_at(&env).unwrap();
        prop_assume!(form != 0 || (target > 1e-12 && target < 1.0 - 1e-12));
        let parents: Assignment = [("P".into(), p)].into_iter().collect();
        let solved = scm.invert_in_noise("V", target, &parents).unwrap();
        env.insert("U_V".into(), solved);
        let back = expr.eval_at(&env).unwrap();
        prop_assert!((back - target).abs() <= 1e-10 * target.abs().max(1.0));
    }

    #[test]
    fn seeded_sampling_is_reproducible(seed in any::<u64>(), n in 1usize..5000) {
        let scm = builtin("ascvd", None).unwrap();
        let a = scm.sample_observational(n, seed).unwrap();
        let b = scm.sample_observational(n, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weights_sum_to_n(alpha in -2.0f64..2.0, x in -4.0f64..4.0, n in 1usize..3000, seed in any::<u64>()) {
        let scm = linear("confounding", &LinearModelParams::new(alpha, 1.0, 1.0)).unwrap();
        let post = importance_posterior(&scm, &Query::new(x), n, seed).unwrap();
        let PosteriorKind::Particles { weights, .. } = &post.kind else { unreachable!() };
        prop_assert!((weights.sum() - n as f64).abs() <= 1e-9 * n as f64);
        prop_assert!(weights.iter().all(|w| *w >= 0.0));
        prop_assert!(post.diagnostics.n_eff <= n as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn closed_form_bias_vanishes_without_gamma(alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let p = LinearModelParams::new(alpha, beta, 0.0);
        for m in ["confounding", "overcontrol", "selection"] {
            prop_assert_eq!(causalbias::closed_form(m, &p).unwrap().2.abs(), 0.0);
            prop_assert!(builtin(m, Some(&ModelParams::Linear(p))).is_ok());
        }
    }
}
