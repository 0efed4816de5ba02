mod support;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stocktake_core::inventory::{designated_location, reconcile_bin};
use support::*;

fn audit(seed: u64) -> (Warehouse, BTreeMap<String, stocktake_core::BinReconciliation>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_warehouse(&mut rng, 50, 200, 0.2);
    let mut recons = BTreeMap::new();
    let mut problems = Vec::new();
    for (bin, units) in &w.physical {
        let scans = scans_with_repeats(&mut rng, units, 0.2);
        let r = reconcile_bin(&w.reference, bin, &scans).unwrap();
        if project(&r) != oracle_reconcile(&w.rows, bin, &scans) {
            problems.push(format!("{bin}: differs from oracle"));
        }
        problems.extend(conservation_violation(&r, &scans));
        recons.insert(bin.clone(), r);
    }
    problems.extend(symmetry_violation(&recons));
    (w, recons, problems)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_oracle_and_conserves(seed in any::<u64>()) {
        let (_, _, problems) = audit(seed);
        prop_assert!(problems.is_empty(), "{problems:?}");
    }

    #[test]
    fn designated_location_agrees_with_linear_search(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_warehouse(&mut rng, 20, 80, 0.0);
        for row in &w.rows {
            let linear = w
                .reference
                .bins()
                .iter()
                .find(|(_, batches)| batches.values().any(|hus| hus.contains(&row.hu_code)))
                .map(|(b, _)| b);
            prop_assert_eq!(designated_location(&w.reference, &row.hu_code), linear);
        }
        prop_assert_eq!(designated_location(&w.reference, "NEVER-IMPORTED"), None);
    }
}

#[test]
fn perfect_warehouse_is_complete_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_warehouse(&mut rng, 30, 150, 0.0);
    for (bin, units) in &w.physical {
        let r = reconcile_bin(&w.reference, bin, units).unwrap();
        assert!(r.complete && r.surplus.is_empty() && r.shortage_qty() == 0, "{bin}");
    }
}

#[test]
fn misplaced_units_are_missing_at_their_designated_bin() {
    let mut hits = 0;
    for seed in 0..50 {
        let (_, recons, problems) = audit(seed);
        assert!(problems.is_empty(), "seed {seed}: {problems:?}");
        hits += recons.values().map(|r| r.surplus.len()).sum::<usize>();
    }
    assert!(hits > 0, "generator never produced surplus");
}
