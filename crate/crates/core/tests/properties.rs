mod props;

use proptest::prelude::*;
use props::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn operation_fuzz_keeps_invariants(s in session()) {
        check_operation_fuzz(s)?;
    }

    #[test]
    fn standbys_stay_quality_ordered(capacity in 1usize..=6, initial in batch(10), later in batch(10)) {
        check_quality_ordering(capacity, initial, later)?;
    }

    #[test]
    fn refill_admission_is_monotone(capacity in 1usize..=6, initial in batch(10), later in batch(10)) {
        check_refill_admission(capacity, initial, later)?;
    }

    #[test]
    fn probe_sort_matches_brute_force(b in batch(16)) {
        check_probe_sort(b)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn equal_quality_fleets_never_switch(
        quality in prop::sample::select(QUALITIES.to_vec()),
        n in 2usize..=6,
        steps in 1u32..200,
        initial in 1u32..12,
    ) {
        check_no_thrash_equal(quality, n, steps, initial)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn expected_max_matches_monte_carlo(r in rates(), seed in any::<u64>()) {
        check_expected_max_mc(r, seed)?;
    }
}
