use proptest::prelude::*;

use rawgat_core::data::{fix_length, parse_protocol, Label, ProtocolEntry};
use rawgat_core::metrics::eer_from_scores;
use rawgat_core::train::{wce_loss, ClassWeights};
use rawgat_core::{Tape, Tensor};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50i32..50, 1..30).prop_map(|v| v.into_iter().map(|x| x as f64 / 10.0).collect())
}

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_]{1,8}"
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Bona), Just(Label::Spoof)]
}

proptest! {
    #[test]
    fn fix_length_is_idempotent(x in prop::collection::vec(-1.0f64..1.0, 1..200), len in 1usize..400) {
        let once = fix_length(&x, len).unwrap();
        prop_assert_eq!(once.len(), len);
        prop_assert_eq!(fix_length(&once, len).unwrap(), once);
    }

    #[test]
    fn protocol_lines_round_trip(
        rows in prop::collection::vec((token(), token(), prop_oneof![Just("-".to_string()), token()],
                                       prop_oneof![Just("-".to_string()), token()], label()), 1..20)
    ) {
        let entries: Vec<ProtocolEntry> = rows
            .into_iter()
            .map(|(speaker, utterance, system, key, label)| ProtocolEntry { speaker, utterance, system, key, label })
            .collect();
        let text: String = entries.iter().map(|e| format!("{e}\n")).collect();
        prop_assert_eq!(parse_protocol(&text).unwrap(), entries);
    }

    #[test]
    fn eer_ignores_monotone_transforms(bona in scores(), spoof in scores()) {
        let base = eer_from_scores(&bona, &spoof).unwrap().eer;
        let f = |v: &[f64]| v.iter().map(|x| (3.0 * x).exp() + 1.0).collect::<Vec<_>>();
        let moved = eer_from_scores(&f(&bona), &f(&spoof)).unwrap().eer;
        prop_assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn eer_ignores_duplicating_every_trial(bona in scores(), spoof in scores()) {
        let twice = |v: &[f64]| v.iter().chain(v).copied().collect::<Vec<_>>();
        let base = eer_from_scores(&bona, &spoof).unwrap().eer;
        let doubled = eer_from_scores(&twice(&bona), &twice(&spoof)).unwrap().eer;
        prop_assert!((base - doubled).abs() < 1e-12);
    }

    #[test]
    fn eer_of_swapped_and_negated_classes_matches(bona in scores(), spoof in scores()) {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let base = eer_from_scores(&bona, &spoof).unwrap().eer;
        let mirrored = eer_from_scores(&neg(&spoof), &neg(&bona)).unwrap().eer;
        prop_assert!((base - mirrored).abs() < 1e-9, "{} vs {}", base, mirrored);
    }

    #[test]
    fn eer_is_a_rate(bona in scores(), spoof in scores()) {
        let e = eer_from_scores(&bona, &spoof).unwrap().eer;
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn loss_ignores_batch_order(
        items in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, label()), 1..12),
        seed in any::<u64>(),
    ) {
        let loss = |items: &[(f64, f64, Label)]| {
            let tape = Tape::no_grad();
            let z = Tensor::new(&[items.len(), 2], items.iter().flat_map(|&(a, b, _)| [a, b]).collect()).unwrap();
            let labels: Vec<Label> = items.iter().map(|i| i.2).collect();
            wce_loss(&tape.constant(z), &labels, ClassWeights::default()).unwrap().data()[0]
        };
        let mut shuffled = items.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        shuffled.reverse();
        prop_assert!((loss(&items) - loss(&shuffled)).abs() < 1e-12);
    }
}
