use coind_core::attribute_space::{build_support, unseen_compositions, AttributeSpace, SupportKind};
use coind_core::composition::{compile, strided_timesteps, CompositionExpr, GuidancePlan};
use coind_core::diagnostics::{entropy_bits, softmax_neg};
use coind_core::diffusion::{checkpoint, Architecture, ConditionVector, NoisePredictor, ScheduleConfig, ScoreNet};
use coind_core::synth_world::{analytic_log_density, analytic_score, WorldConfig};
use ndarray::Array2;
use num_rational::BigRational;
use num_traits::One;
use proptest::prelude::*;

fn space() -> AttributeSpace {
    AttributeSpace::new(vec![4, 3, 5]).unwrap()
}

fn literal() -> impl Strategy<Value = CompositionExpr> {
    let card = space().cardinalities().to_vec();
    (0..card.len())
        .prop_flat_map(move |a| (Just(a), 0..card[a]))
        .prop_map(|(a, v)| CompositionExpr::lit(a, v))
}

fn supported() -> impl Strategy<Value = CompositionExpr> {
    let conjunct = prop_oneof![
        3 => literal(),
        1 => literal().prop_map(CompositionExpr::not),
        1 => ((1u32..=6), literal()).prop_map(|(k, e)| CompositionExpr::weighted(k as f64 / 2.0, e)),
    ];
    prop::collection::vec(conjunct, 1..5).prop_map(CompositionExpr::and)
}

proptest! {
    #[test]
    fn compiled_plans_conserve_mass(expr in supported()) {
        let plan = compile(&expr, &space()).unwrap();
        prop_assert_eq!(plan.coefficient_sum(), BigRational::one());
        prop_assert!(plan.terms().last().unwrap().0.is_null());
    }

    #[test]
    fn plan_json_round_trips(expr in supported()) {
        let plan = compile(&expr, &space()).unwrap();
        let back = GuidancePlan::from_json(&plan.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn printed_expressions_reparse_to_the_same_meaning(expr in supported()) {
        let sp = space();
        let again = CompositionExpr::parse(&expr.to_string()).unwrap();
        prop_assert_eq!(compile(&again, &sp).unwrap(), compile(&expr, &sp).unwrap());
        for c in sp.compositions() {
            prop_assert_eq!(again.satisfied_by(&c), expr.satisfied_by(&c));
        }
    }

    #[test]
    fn strided_timesteps_descend_from_t(total in 2usize..400, frac in 0.0f64..1.0) {
        let steps = 1 + ((total - 1) as f64 * frac) as usize;
        let ts = strided_timesteps(total, steps).unwrap();
        prop_assert_eq!(ts[0], total);
        prop_assert!(*ts.last().unwrap() >= 1);
        prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(ts.len() <= steps);
    }

    #[test]
    fn softmax_is_a_pmf(e in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax_neg(&e);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn entropy_is_bounded_by_cardinality(counts in prop::collection::vec(0usize..50, 1..10)) {
        let h = entropy_bits(&counts);
        prop_assert!(h >= 0.0 && h <= (counts.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn mixture_score_is_the_density_gradient(x in prop::collection::vec(-2.0f64..2.0, 2), t in 1usize..200) {
        let world = WorldConfig::evenly_spaced(AttributeSpace::new(vec![3, 2]).unwrap(), 0.4).unwrap();
        let sup = build_support(world.space.clone(), SupportKind::Uniform).unwrap();
        let weights: Vec<_> = sup.support().collect();
        let sched = ScheduleConfig::default().build().unwrap();
        let noise = Some((t, &sched));
        let s = analytic_score(&world, &weights, &x, noise).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (analytic_log_density(&world, &weights, &up, noise).unwrap()
                - analytic_log_density(&world, &weights, &dn, noise).unwrap()) / (2.0 * h);
            prop_assert!((fd - s[k]).abs() <= 1e-5 * s[k].abs().max(1.0));
        }
    }
}

#[test]
fn supports_partition_the_grid() {
    let sp = AttributeSpace::new(vec![10, 10]).unwrap();
    for kind in [
        SupportKind::Uniform,
        SupportKind::DiagonalPartial,
        SupportKind::NonUniform { a: 1.0 / 38.0, b: 1.0 / 162.0 },
    ] {
        let sup = build_support(sp.clone(), kind).unwrap();
        let total: f64 = sup.support().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(sup.support_len() + unseen_compositions(&sup).len(), 100);
    }
    let orth = build_support(AttributeSpace::new(vec![2, 2]).unwrap(), SupportKind::OrthogonalPartial).unwrap();
    assert_eq!(unseen_compositions(&orth).into_iter().collect::<Vec<_>>(), vec![vec![1, 1]]);
}

#[test]
fn checkpoints_preserve_predictions() {
    let net = ScoreNet::new(Architecture::desk_default(vec![3, 2]), 4).unwrap();
    let sched = ScheduleConfig::default().build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &net, &sched).unwrap();
    let (back, sched_back) = checkpoint::load(&path).unwrap();
    assert_eq!(sched_back, sched);
    let x = Array2::from_shape_fn((4, 2), |(r, k)| r as f64 * 0.3 - k as f64);
    let cond = vec![ConditionVector(vec![Some(2), None]).to_conditioning(); 4];
    let t = [1, 50, 120, 200];
    assert_eq!(net.predict_eps(x.view(), &t, &cond), back.predict_eps(x.view(), &t, &cond));
}
