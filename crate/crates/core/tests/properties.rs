use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use strictform_core::arrays::Rectangle;
use strictform_core::markers::{decompose_gap, MarkerSystem};
use strictform_core::measures::{dstar, dstar_measures, EmpiricalMeasure, Truncation};

fn row(symbols: &[u32]) -> Rectangle {
    Rectangle::from_rows(&[symbols.to_vec()]).unwrap()
}

fn word(min: usize, max: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..=3, min..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dstar_is_a_pseudometric(a in word(3, 12), b in word(3, 12), c in word(3, 12)) {
        let t = Truncation::new(1, 3).unwrap();
        let (a, b, c) = (row(&a), row(&b), row(&c));
        let ab = dstar(&a, &b, t).unwrap().value;
        let ba = dstar(&b, &a, t).unwrap().value;
        let bc = dstar(&b, &c, t).unwrap().value;
        let ac = dstar(&a, &c, t).unwrap().value;
        prop_assert_eq!(&ab, &ba);
        prop_assert!(dstar(&a, &a, t).unwrap().value.is_zero());
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn dstar_is_convex_in_mixtures(a in word(2, 10), b in word(2, 10), c in word(2, 10), num in 0u32..=8) {
        let t = Truncation::new(1, 2).unwrap();
        let ma = EmpiricalMeasure::from_rectangle(&row(&a), t).unwrap();
        let mb = EmpiricalMeasure::from_rectangle(&row(&b), t).unwrap();
        let mc = EmpiricalMeasure::from_rectangle(&row(&c), t).unwrap();
        let s = BigRational::new(num.into(), 8.into());
        let rest = BigRational::one() - &s;
        let mix = EmpiricalMeasure::mixture(&[(s.clone(), &ma), (rest.clone(), &mb)]).unwrap();
        let lhs = dstar_measures(&mix, &mc).unwrap();
        let rhs = s * dstar_measures(&ma, &mc).unwrap() + rest * dstar_measures(&mb, &mc).unwrap();
        prop_assert!(lhs <= rhs);
    }

    #[test]
    fn decomposition_keeps_a_third_share(l in 2u64..=40, extra in 0u64..2000) {
        let p = 9 * l * l + extra;
        let d = decompose_gap(p, l).unwrap();
        prop_assert_eq!(d.total(), p);
        prop_assert!(3 * d.min_share() >= p);
    }

    #[test]
    fn built_markers_are_well_formed(columns in 200usize..3000, origin in -50i64..50, l in 2u64..=4, extra in 0u64..30) {
        let gaps = [l, 9 * l * l + extra];
        let m = MarkerSystem::build(columns, origin, &gaps).unwrap();
        let checks = m.check_all();
        prop_assert!(checks.two_gaps && checks.congruent && checks.balanced);
    }
}
