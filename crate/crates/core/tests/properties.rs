//! Property tests over arbitrary measures, observables and models.

use proptest::prelude::*;

use endotree::kernels::{self, PairMeasure};
use endotree::model::{self, PhiTable, RtpModel, Tolerances};
use endotree::Model;

fn validated(name: &str) -> Model {
    let m = model::builtin::<f64>(name).unwrap();
    model::validate(&m, &Tolerances::default()).unwrap().model
}

fn weights4() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, 4)
}

proptest! {
    #[test]
    fn two_point_map_is_bilinear(
        a in weights4(),
        b in weights4(),
        c in weights4(),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let m = validated("ANDOR-NOISE");
        let a = PairMeasure::from_weights(2, a);
        let b = PairMeasure::from_weights(2, b);
        let c = PairMeasure::from_weights(2, c);
        let combined = PairMeasure::from_weights(
            2,
            a.weights
                .iter()
                .zip(&b.weights)
                .map(|(x, y)| alpha * x + beta * y)
                .collect(),
        );
        let lhs = kernels::two_point_map(&m, &combined, &c);
        let via_a = kernels::two_point_map(&m, &a, &c);
        let via_b = kernels::two_point_map(&m, &b, &c);
        for i in 0..4 {
            let rhs = alpha * via_a.weights[i] + beta * via_b.weights[i];
            prop_assert!((lhs.weights[i] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_point_map_marginals_factor(a in weights4(), b in weights4()) {
        // The first marginal of the image is the pushforward of the first
        // marginals, and likewise for the second coordinate.
        let m = validated("XOR");
        let a = PairMeasure::from_weights(2, a);
        let b = PairMeasure::from_weights(2, b);
        let image = kernels::two_point_map(&m, &a, &b);
        let (first, second) = image.marginals();
        let (a0, a1) = a.marginals();
        let (b0, b1) = b.marginals();
        let expect_first = m.pushforward(&a0, &b0);
        let expect_second = m.pushforward(&a1, &b1);
        for i in 0..2 {
            prop_assert!((first[i] - expect_first[i]).abs() <= 1e-12);
            prop_assert!((second[i] - expect_second[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn number_form_is_nonnegative_and_kills_constants(
        f in proptest::collection::vec(-3.0f64..3.0, 2),
        c in -5.0f64..5.0,
        n in 0usize..6,
    ) {
        let m = validated("ANDOR-NOISE");
        prop_assert!(kernels::number_operator_form(&m, &f, n) >= -1e-12);
        prop_assert!(kernels::number_operator_form(&m, &[c, c], n).abs() <= 1e-12);
        // Shifting by a constant leaves the form unchanged.
        let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
        let base = kernels::number_operator_form(&m, &f, n);
        let moved = kernels::number_operator_form(&m, &shifted, n);
        prop_assert!((base - moved).abs() <= 1e-10 * (1.0 + base.abs()));
    }

    #[test]
    fn model_json_round_trips(
        s in 1usize..4,
        e in 1usize..4,
        seed in proptest::num::u64::ANY,
        raw_mu in proptest::collection::vec(0.05f64..1.0, 4),
        raw_nu in proptest::collection::vec(0.05f64..1.0, 4),
    ) {
        // Arbitrary (not necessarily invariant) measures: the file format
        // round-trips the raw data; validation is a separate concern.
        let mut rng = endotree::rng::RngStream::new(seed, 0);
        let table: Vec<usize> = (0..s * s * e).map(|_| rng.next_range(s)).collect();
        let phi = PhiTable::new(s, e, table).unwrap();
        let total_mu: f64 = raw_mu[..s].iter().sum();
        let total_nu: f64 = raw_nu[..e].iter().sum();
        let model = RtpModel::new(
            (0..s).map(|i| format!("s{i}")).collect(),
            (0..e).map(|i| format!("e{i}")).collect(),
            raw_mu[..s].iter().map(|w| w / total_mu).collect(),
            raw_nu[..e].iter().map(|w| w / total_nu).collect(),
            phi,
        )
        .unwrap();
        let (back, notes) = RtpModel::<f64>::from_json(&model.to_json()).unwrap();
        prop_assert!(notes.is_empty());
        prop_assert_eq!(back, model);
    }
}
