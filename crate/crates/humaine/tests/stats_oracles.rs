//! Distribution tails against `statrs`.

use humaine_core::stats::{f_upper_p, normal_cdf, normal_quantile, one_way_anova, t_two_sided_p, welch_t};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

fn t_tail(t: f64, df: f64) -> f64 {
    2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
}

#[test]
fn t_tail_on_a_grid() {
    for df in [1.0, 2.5, 4.0, 9.0, 29.0, 97.3, 500.0] {
        for t in [0.0, 0.3, 1.0, 1.96, 2.5, 4.394, 8.0] {
            let (got, want) = (t_two_sided_p(t, df), t_tail(t, df));
            assert!((got - want).abs() < 1e-9, "t {t} df {df}: {got} vs {want}");
        }
    }
}

#[test]
fn f_tail_on_a_grid() {
    for (d1, d2) in [(1.0, 4.0), (2.0, 6.0), (3.0, 146.0), (5.0, 12.5)] {
        let dist = FisherSnedecor::new(d1, d2).unwrap();
        for f in [0.1, 1.0, 2.7, 13.5, 40.0] {
            let (got, want) = (f_upper_p(f, d1, d2), dist.sf(f));
            assert!((got - want).abs() < 1e-9, "F {f} ({d1}, {d2}): {got} vs {want}");
        }
    }
}

#[test]
fn anova_fixture_p_matches_reference() {
    let a = one_way_anova(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
    assert_eq!(a.f, 13.5);
    let want = FisherSnedecor::new(1.0, 4.0).unwrap().sf(13.5);
    assert!((a.p - want).abs() < 1e-9);
}

proptest! {
    #[test]
    fn normal_cdf_and_quantile(x in -6.0f64..6.0, p in 0.001f64..0.999) {
        let n = Normal::standard();
        prop_assert!((normal_cdf(x) - n.cdf(x)).abs() < 1e-7);
        prop_assert!((normal_quantile(p).unwrap() - n.inverse_cdf(p)).abs() < 1e-6);
    }

    #[test]
    fn welch_p_uses_the_right_tail(
        a in prop::collection::vec(0.0f64..1.0, 3..30),
        b in prop::collection::vec(0.0f64..1.0, 3..30),
    ) {
        let w = welch_t(&a, &b).unwrap();
        prop_assume!(w.t.is_finite() && w.df.is_finite());
        prop_assert!((w.p - t_tail(w.t, w.df)).abs() < 1e-8);
    }
}
