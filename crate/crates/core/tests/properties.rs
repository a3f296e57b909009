mod common;

use common::*;
use proptest::prelude::*;
use taskpower_core::scheduler::min_processors;

fn run(check: Check) -> Result<(), TestCaseError> {
    check.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pmf_algebra_laws(seed in any::<u64>()) {
        run(check_pmf_laws(seed))?;
    }

    #[test]
    fn flow_file_round_trip(seed in any::<u64>()) {
        run(check_round_trip(seed))?;
    }

    #[test]
    fn extractor_conserves_ops(seed in any::<u64>()) {
        run(check_extractor_conservation(seed))?;
    }

    #[test]
    fn min_processors_is_monotone(total in 1.0f64..1e6, deadline in 1.0f64..1e4, extra in 0.0f64..1e4) {
        let p = min_processors(total, deadline).unwrap();
        prop_assert!(p as f64 * deadline >= total);
        prop_assert!((p - 1) as f64 * deadline < total);
        prop_assert!(min_processors(total + extra, deadline).unwrap() >= p);
        prop_assert!(min_processors(total, deadline + extra).unwrap() <= p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_respect_precedence(seed in any::<u64>()) {
        run(check_schedule_invariants(seed))?;
    }

    #[test]
    fn best_assignment_is_locally_optimal(seed in any::<u64>()) {
        run(check_local_optimality(seed))?;
    }

    #[test]
    fn composition_matches_enumeration(seed in any::<u64>()) {
        let root = composition_fixtures(1, seed, 20_000).remove(0);
        run(check_composition_oracle(&root))?;
    }

    #[test]
    fn voltage_search_matches_brute_force(seed in any::<u64>()) {
        let f = voltage_fixtures(1, seed, 6).remove(0);
        run(check_voltage_oracle(&f).map(|_| ()))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn results_are_deterministic(seed in any::<u64>()) {
        run(check_determinism(seed))?;
    }
}
