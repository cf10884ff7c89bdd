use mbw::inference::{constrain, natural_in_domain, unconstrain, Natural};
use mbw::io::{parse_tests_csv, parse_tests_json, tests_to_csv, tests_to_json, CohortTest};
use mbw::model::{end_test_breath_model, outcomes_model, outcomes_standard, CurveParams, EndTestSolver};
use mbw::synthgen::{generate_cohort, CohortSpec};
use mbw::truncation::truncate_at_threshold;
use proptest::prelude::*;

fn curve() -> impl Strategy<Value = [f64; 6]> {
    (0.05..0.95f64, 0.05..0.4f64, 0.05..1.2f64, 40.0..250.0f64, 0.05..0.4f64, 10.0..60.0f64)
        .prop_map(|(a, b, gap, d, e, f)| [a, b, b + gap, d, e, f])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn curves_are_monotone(b in curve(), k in 0.0..80.0f64, dk in 0.01..5.0f64) {
        let p = CurveParams::new(b).unwrap();
        prop_assert!(p.gas(k + dk) < p.gas(k));
        prop_assert!(p.cevgm(k + dk) > p.cevgm(k));
        prop_assert!(p.cevtg(k + dk) > p.cevtg(k));
        prop_assert!(p.gas(k) > 0.0 && p.gas(k) <= 1.0);
    }

    #[test]
    fn solver_lands_on_the_threshold(b in curve(), t in 0.005..0.2f64) {
        let p = CurveParams::new(b).unwrap();
        prop_assume!(p.gas(200.0) < t);
        let theta = end_test_breath_model(&p, t).unwrap();
        prop_assert!((p.gas(theta).ln() - t.ln()).abs() < 1e-9);
        let grid = EndTestSolver::grid(2000).solve(&p, t).unwrap();
        prop_assert!(grid >= theta - 1e-9 && grid - theta <= 1.0 / 2000.0 + 1e-9);
    }

    #[test]
    fn lower_threshold_means_later_end(b in curve(), t in 0.01..0.2f64, f in 0.1..0.9f64) {
        let p = CurveParams::new(b).unwrap();
        prop_assume!(p.gas(200.0) < t * f);
        prop_assert!(end_test_breath_model(&p, t * f).unwrap() > end_test_breath_model(&p, t).unwrap());
    }

    #[test]
    fn transform_round_trips(b in curve(), s in prop::array::uniform3(0.01..2.0f64)) {
        let th: Natural = [b[0], b[1], b[2], b[3], b[4], b[5], s[0], s[1], s[2]];
        prop_assert!(natural_in_domain(&th));
        let back = constrain(&unconstrain(&th));
        for (x, y) in th.iter().zip(back.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn lci_is_cev_over_frc(b in curve(), t in 0.01..0.1f64) {
        let p = CurveParams::new(b).unwrap();
        prop_assume!(p.gas(200.0) < t);
        let o = outcomes_model(&p, t).unwrap();
        for v in [o.at_theta, o.asymptotic] {
            prop_assert!((v.lci * v.frc - v.cev).abs() <= 1e-12 * v.cev);
        }
        prop_assert_eq!(o.asymptotic.frc, b[3]);
    }

    #[test]
    fn truncation_is_a_nested_prefix(seed in 0u64..1000, t in 0.02..0.4f64, f in 0.2..0.95f64) {
        let tests = generate_cohort(&CohortSpec { n_tests: 1, seed, ..CohortSpec::default() }).unwrap();
        let s = &tests[0].series;
        let short = truncate_at_threshold(s, t);
        let shorter = truncate_at_threshold(s, t / f);
        prop_assert!(shorter.len() <= short.len() && short.len() <= s.len());
        prop_assert_eq!(short.gas(), &s.gas()[..short.len()]);
        prop_assert_eq!(shorter.gas(), &short.gas()[..shorter.len()]);
        // the retained prefix still reaches its own end point
        if let Some(o) = outcomes_standard(&short, t).unwrap() {
            let full = outcomes_standard(s, t).unwrap().unwrap();
            prop_assert_eq!(o, full);
            prop_assert_eq!(o.theta as usize + 1, short.len());
        }
    }

    #[test]
    fn cohort_files_round_trip(seed in 0u64..1000, n in 1usize..4) {
        let tests: Vec<CohortTest> = generate_cohort(&CohortSpec { n_tests: n, seed, ..CohortSpec::default() })
            .unwrap()
            .into_iter()
            .map(|t| CohortTest {
                test_id: format!("t{}", t.test_id),
                participant_id: Some(t.test_id as u64 + 7),
                replicate_id: Some(1),
                series: t.series,
                prior: None,
            })
            .collect();
        let csv = parse_tests_csv(&tests_to_csv(&tests)).unwrap();
        let json = parse_tests_json(&tests_to_json(&tests).unwrap()).unwrap();
        for back in [csv, json] {
            prop_assert_eq!(back.len(), tests.len());
            for (a, b) in tests.iter().zip(&back) {
                prop_assert_eq!(&a.test_id, &b.test_id);
                prop_assert_eq!(a.participant_id, b.participant_id);
                prop_assert_eq!(a.series.gas(), b.series.gas());
                prop_assert_eq!(a.series.cevgm(), b.series.cevgm());
                prop_assert_eq!(a.series.cevtg(), b.series.cevtg());
            }
        }
    }
}
