use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use roast_core::eval::{confusion_matrix, metrics_from_confusion, ConfusionMatrix};
use roast_core::RoastClass::{self, *};

const FIXTURE_960: [[u64; 4]; 4] = [[194, 6, 7, 33], [2, 172, 45, 21], [0, 3, 230, 7], [2, 10, 35, 193]];
const FIXTURE_1177: [[u64; 4]; 4] = [[200, 5, 54, 21], [9, 283, 8, 0], [8, 41, 247, 4], [4, 5, 45, 243]];

#[test]
fn balanced_fixture_scores() {
    let r = metrics_from_confusion(&ConfusionMatrix::from_table(FIXTURE_960), "fixture 960").unwrap();
    assert_abs_diff_eq!(r.accuracy, 789.0 / 960.0, epsilon = 1e-9);
    assert_eq!(r.confusion.total(), 960);
    let green = r.metrics(Green);
    assert_abs_diff_eq!(green.precision, 194.0 / 198.0, epsilon = 1e-12);
    assert_abs_diff_eq!(green.recall, 194.0 / 240.0, epsilon = 1e-12);
    assert_eq!(green.support, 240);
    let medium = r.metrics(Medium);
    assert_abs_diff_eq!(medium.precision, 230.0 / 317.0, epsilon = 1e-12);
    assert_abs_diff_eq!(medium.recall, 230.0 / 240.0, epsilon = 1e-12);
    assert!(r.zero_division.is_empty());
}

#[test]
fn unbalanced_fixture_scores() {
    let r = metrics_from_confusion(&ConfusionMatrix::from_table(FIXTURE_1177), "fixture 1177").unwrap();
    assert_abs_diff_eq!(r.accuracy, 973.0 / 1177.0, epsilon = 1e-9);
    // Rows are not balanced in this fixture.
    let supports: Vec<u64> = r.per_class.iter().map(|m| m.support).collect();
    assert_eq!(supports, [280, 300, 300, 297]);
    let dark = r.metrics(Dark);
    assert_abs_diff_eq!(dark.precision, 243.0 / 268.0, epsilon = 1e-12);
    assert_abs_diff_eq!(dark.f1, 2.0 * 243.0 / (268.0 + 297.0), epsilon = 1e-12);
}

#[test]
fn a_never_predicted_class_scores_zero_precision() {
    let actual = [Green, Light, Dark, Dark];
    let predicted = [Green, Green, Dark, Dark];
    let r = metrics_from_confusion(&confusion_matrix(&actual, &predicted).unwrap(), "t").unwrap();
    assert_eq!(r.metrics(Light).precision, 0.0);
    assert_eq!(r.metrics(Light).f1, 0.0);
    assert!(r.zero_division.contains(&Light));
    assert!(r.zero_division.contains(&Medium));
}

#[test]
fn report_json_round_trips() {
    let r = metrics_from_confusion(&ConfusionMatrix::from_table(FIXTURE_1177), "fixture 1177").unwrap();
    let back = roast_core::eval::EvaluationReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

fn class() -> impl Strategy<Value = RoastClass> {
    (0usize..4).prop_map(|i| RoastClass::from_index(i).unwrap())
}

fn pairs() -> impl Strategy<Value = Vec<(RoastClass, RoastClass)>> {
    prop::collection::vec((class(), class()), 1..300)
}

proptest! {
    #[test]
    fn weighted_recall_equals_accuracy(p in pairs()) {
        let (a, b): (Vec<_>, Vec<_>) = p.into_iter().unzip();
        let r = metrics_from_confusion(&confusion_matrix(&a, &b).unwrap(), "p").unwrap();
        prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn confusion_ignores_sample_order(p in pairs(), rot in 0usize..300) {
        let (a, b): (Vec<_>, Vec<_>) = p.iter().cloned().unzip();
        let mut q = p.clone();
        let k = rot % q.len();
        q.rotate_left(k);
        q.reverse();
        let (c, d): (Vec<_>, Vec<_>) = q.into_iter().unzip();
        prop_assert_eq!(confusion_matrix(&a, &b).unwrap(), confusion_matrix(&c, &d).unwrap());
    }

    #[test]
    fn matches_naive_counting(p in pairs()) {
        let (a, b): (Vec<_>, Vec<_>) = p.iter().cloned().unzip();
        let r = metrics_from_confusion(&confusion_matrix(&a, &b).unwrap(), "p").unwrap();
        let correct = p.iter().filter(|(x, y)| x == y).count() as f64;
        prop_assert!((r.accuracy - correct / p.len() as f64).abs() < 1e-12);
        for c in RoastClass::ALL {
            let tp = p.iter().filter(|(x, y)| *x == c && *y == c).count() as f64;
            let predicted = p.iter().filter(|(_, y)| *y == c).count() as f64;
            let actual = p.iter().filter(|(x, _)| *x == c).count() as f64;
            let m = r.metrics(c);
            prop_assert_eq!(m.support as f64, actual);
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            prop_assert!((m.precision - precision).abs() < 1e-12);
            prop_assert!((m.recall - recall).abs() < 1e-12);
        }
    }
}
