use proptest::prelude::*;
use revstress::analytics::{concentration_from_costs, rank_stability};

fn costs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..10.0, 2..40)
}

proptest! {
    #[test]
    fn ipr_is_bounded(k in costs()) {
        let r = concentration_from_costs(&k);
        prop_assert!(r.ipr >= 1.0 - 1e-12);
        prop_assert!(r.ipr <= k.len() as f64 + 1e-9);
        let total: f64 = r.shares.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn scaling_costs_changes_nothing_relative(k in costs(), alpha in 1e-3f64..1e3) {
        let base = concentration_from_costs(&k);
        let scaled: Vec<f64> = k.iter().map(|v| v * alpha).collect();
        let r = concentration_from_costs(&scaled);
        prop_assert!((r.ipr - base.ipr).abs() <= 1e-10 * base.ipr);
        prop_assert_eq!(&r.ranking, &base.ranking);
        for (a, b) in r.standardized.iter().zip(&base.standardized) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn ranking_survives_monotone_transform(k in costs()) {
        let base = concentration_from_costs(&k);
        let transformed: Vec<f64> = k.iter().map(|v| v.sqrt() + 1.0).collect();
        prop_assert_eq!(concentration_from_costs(&transformed).ranking, base.ranking);
    }

    #[test]
    fn ranking_is_descending(k in costs()) {
        let r = concentration_from_costs(&k);
        for pair in r.ranking.windows(2) {
            prop_assert!(k[pair[0]] >= k[pair[1]]);
        }
    }

    #[test]
    fn identical_rankings_are_stable(perm in Just((0..15usize).collect::<Vec<_>>()).prop_shuffle(), copies in 1usize..6) {
        let s = rank_stability(&vec![perm; copies]).unwrap();
        prop_assert_eq!(s.max_abs_change, 0);
        prop_assert_eq!(s.mean_abs_change, 0.0);
    }
}
