mod common;

use common::{designated_fixture, designated_map, SegmentsRemaining};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saliency_forge::metrics::*;
use saliency_forge::oracle::{Oracle, StubOracle};
use saliency_forge::superpixels::slic;
use saliency_forge::{normalize_map, AttributionMap, ImageTensor};

fn quarter_steps(kind: MetricKind) -> MetricSpec {
    MetricSpec::new(kind).with_step(0.25)
}

#[test]
fn deletion_fixture_auc_is_one_eighth() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let curve = deletion_curve(&image, &designated_map(&mask, true), &oracle, &quarter_steps(MetricKind::Deletion)).unwrap();
    assert_eq!(
        curve.points(),
        &[(0.0, 1.0), (0.25, 0.0), (0.5, 0.0), (0.75, 0.0), (1.0, 0.0)]
    );
    assert!((curve.auc() - 0.125).abs() < 1e-12);
}

#[test]
fn insertion_fixture_auc_is_seven_eighths() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let curve = insertion_curve(&image, &designated_map(&mask, true), &oracle, &quarter_steps(MetricKind::Insertion)).unwrap();
    assert_eq!(
        curve.points(),
        &[(0.0, 0.0), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0), (1.0, 1.0)]
    );
    assert!((curve.auc() - 0.875).abs() < 1e-12);
}

#[test]
fn constant_oracles_give_flat_curves() {
    let (image, mask) = designated_fixture();
    let map = designated_map(&mask, false);
    let one = StubOracle::constant(1.0);
    let zero = StubOracle::constant(0.0);
    let spec = MetricSpec::new(MetricKind::Deletion);
    assert_eq!(deletion_curve(&image, &map, &one, &spec).unwrap().auc(), 1.0);
    let raw = MetricSpec::new(MetricKind::Insertion).with_score_mode(ScoreMode::Probability);
    assert_eq!(insertion_curve(&image, &map, &zero, &raw).unwrap().auc(), 0.0);
    let irof = MetricSpec::new(MetricKind::Irof).with_segments(9);
    assert_eq!(irof_score(&image, &map, &one, &irof).unwrap(), 0.0);
}

fn random_map(rng: &mut impl Rng, h: usize, w: usize) -> AttributionMap {
    let scores = Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>());
    normalize_map(&AttributionMap::new(scores, "random").unwrap()).unwrap()
}

#[test]
fn insertion_plus_deletion_is_one_within_a_step() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for step in [0.01, 0.05, 0.1] {
        for _ in 0..100 {
            let map = random_map(&mut rng, 10, 10);
            let i = insertion_curve(&image, &map, &oracle, &MetricSpec::new(MetricKind::Insertion).with_step(step)).unwrap();
            let d = deletion_curve(&image, &map, &oracle, &MetricSpec::new(MetricKind::Deletion).with_step(step)).unwrap();
            assert!((i.auc() + d.auc() - 1.0).abs() <= step, "step {step}: {} + {}", i.auc(), d.auc());
        }
    }
}

#[test]
fn aligned_map_beats_anti_aligned_map() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let good = designated_map(&mask, true);
    let bad = designated_map(&mask, false);
    let del = MetricSpec::new(MetricKind::Deletion);
    let ins = MetricSpec::new(MetricKind::Insertion);
    assert!(deletion_curve(&image, &good, &oracle, &del).unwrap().auc() < deletion_curve(&image, &bad, &oracle, &del).unwrap().auc());
    assert!(insertion_curve(&image, &good, &oracle, &ins).unwrap().auc() > insertion_curve(&image, &bad, &oracle, &ins).unwrap().auc());
}

#[test]
fn map_and_reverse_bracket_random_orders() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let spec = MetricSpec::new(MetricKind::Insertion).with_step(0.05);
    let best = insertion_curve(&image, &designated_map(&mask, true), &oracle, &spec).unwrap().auc();
    let worst = insertion_curve(&image, &designated_map(&mask, false), &oracle, &spec).unwrap().auc();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut perm: Vec<usize> = (0..100).collect();
    for _ in 0..50 {
        perm.shuffle(&mut rng);
        let scores = Array2::from_shape_fn((10, 10), |(y, x)| perm[y * 10 + x] as f64 / 99.0);
        let map = AttributionMap::new_normalized(scores, "perm").unwrap();
        let auc = insertion_curve(&image, &map, &oracle, &spec).unwrap().auc();
        assert!(worst <= auc && auc <= best, "{worst} <= {auc} <= {best}");
    }
}

#[test]
fn irof_linear_stub_gives_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let data = Array3::from_shape_fn((3, 12, 12), |(c, y, x)| 0.2 + 0.6 * (((x / 4) * 3 + y / 4 + c) % 5) as f64 / 4.0);
    let image = ImageTensor::new(data, 1).unwrap();
    let spec = MetricSpec::new(MetricKind::Irof).with_segments(9);
    let seg = slic(&image, 9, spec.irof_compactness).unwrap();
    let oracle = SegmentsRemaining {
        labels: seg.labels().clone(),
        baseline: 0.0,
    };
    for _ in 0..5 {
        let map = random_map(&mut rng, 12, 12);
        let curve = irof_curve(&image, &map, &oracle, &spec).unwrap();
        assert!((curve.auc() - 0.5).abs() < 1e-12);
        assert!((curve.aoc() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn irof_rewards_ranking_the_critical_segment_first() {
    let image = ImageTensor::new(Array3::from_elem((1, 12, 12), 0.6), 0).unwrap();
    let spec = MetricSpec::new(MetricKind::Irof).with_segments(4);
    let seg = slic(&image, 4, spec.irof_compactness).unwrap();
    assert_eq!(seg.n_segments(), 4);
    let critical = seg.labels().mapv(|l| l == 2);
    let oracle = StubOracle::segment_critical(critical.clone(), 0.0);
    let first = AttributionMap::new_normalized(critical.mapv(|c| if c { 1.0 } else { 0.0 }), "first").unwrap();
    let last = AttributionMap::new_normalized(critical.mapv(|c| if c { 0.0 } else { 1.0 }), "last").unwrap();
    let aoc_first = irof_score(&image, &first, &oracle, &spec).unwrap();
    let aoc_last = irof_score(&image, &last, &oracle, &spec).unwrap();
    // first: curve 1,0,0,0,0 -> AUC 1/8; last: 1,1,1,1,0 -> AUC 7/8
    assert!((aoc_first - 0.875).abs() < 1e-12);
    assert!((aoc_last - 0.125).abs() < 1e-12);
}

#[test]
fn perturbation_leaves_caller_image_untouched() {
    let (image, mask) = designated_fixture();
    let before = image.clone();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let map = designated_map(&mask, true);
    for kind in MetricKind::ALL {
        evaluate_metric(&image, &map, &oracle, &MetricSpec::new(kind).with_segments(5)).unwrap();
    }
    assert_eq!(image, before);
}

#[test]
fn unnormalized_map_is_rejected() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::constant(0.5);
    let raw = AttributionMap::new(Array2::from_elem((10, 10), 3.0), "raw").unwrap();
    assert!(deletion_curve(&image, &raw, &oracle, &MetricSpec::new(MetricKind::Deletion)).is_err());
    let small = designated_map(&mask.slice(ndarray::s![..5, ..5]).to_owned(), true);
    assert!(deletion_curve(&image, &small, &oracle, &MetricSpec::new(MetricKind::Deletion)).is_err());
}

#[test]
fn baselines_fill_with_expected_values() {
    // A stub that reports the mean pixel value exposes the canvas.
    struct MeanPixel;
    impl Oracle for MeanPixel {
        fn max_batch(&self) -> usize {
            8
        }
        fn predict(&self, images: &[ImageTensor], _: usize) -> saliency_forge::Result<Vec<f64>> {
            Ok(images.iter().map(|im| im.data().mean().unwrap()).collect())
        }
    }
    let image = ImageTensor::new(Array3::from_elem((3, 4, 4), 0.8), 0).unwrap();
    let map = AttributionMap::new_normalized(Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64 / 15.0), "m").unwrap();
    let mut spec = MetricSpec::new(MetricKind::Deletion).with_step(1.0).with_score_mode(ScoreMode::Probability);
    spec.baseline = Baseline::DatasetMean;
    spec.dataset_mean = Some(vec![0.1, 0.2, 0.3]);
    let end = deletion_curve(&image, &map, &MeanPixel, &spec).unwrap().points()[1].1;
    assert!((end - 0.2).abs() < 1e-12);
    spec.baseline = Baseline::UniformNoise;
    let a = deletion_curve(&image, &map, &MeanPixel, &spec).unwrap();
    let b = deletion_curve(&image, &map, &MeanPixel, &spec).unwrap();
    assert_eq!(a, b);
    assert!(a.points()[1].1 < 0.8 && a.points()[1].1 > 0.2);
}

fn case(id: &str, image: &ImageTensor, maps: Vec<(&str, AttributionMap)>) -> EvaluationCase {
    EvaluationCase {
        id: id.into(),
        image: image.clone(),
        maps: maps.into_iter().map(|(m, a)| (m.to_string(), a)).collect(),
    }
}

#[test]
fn single_image_report_has_zero_spread() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let cases = [case("a", &image, vec![("fixture", designated_map(&mask, true))])];
    let (report, _) = evaluate_batch(&cases, &oracle, &[quarter_steps(MetricKind::Deletion)]).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert!((row.mean - 0.125).abs() < 1e-12);
    assert_eq!((row.std, row.n, row.incomplete), (0.0, 1, false));
}

#[test]
fn two_image_report_mean_and_population_std() {
    // Aligned maps under the fraction-remaining stub: the curve falls
    // linearly to 0 once the set is gone, so a set covering 40% (80%) of the
    // image gives a triangle of area 0.2 (0.4).
    let image = ImageTensor::new(Array3::from_elem((1, 10, 10), 0.5), 0).unwrap();
    let map = AttributionMap::new_normalized(
        Array2::from_shape_fn((10, 10), |(y, x)| 1.0 - (y * 10 + x) as f64 / 99.0),
        "m",
    )
    .unwrap();
    let spec = MetricSpec::new(MetricKind::Deletion).with_step(0.1);
    let mut results = Vec::new();
    for (id, size) in [("a", 40), ("b", 80)] {
        let mask = Array2::from_shape_fn((10, 10), |(y, x)| y * 10 + x < size);
        let stub = StubOracle::fraction_remaining(mask, 0.0);
        results.extend(evaluate_case(&case(id, &image, vec![("m", map.clone())]), &stub, &[spec.clone()]));
    }
    let values: Vec<f64> = results.iter().map(|r| r.value.unwrap()).collect();
    assert!((values[0] - 0.2).abs() < 1e-12 && (values[1] - 0.4).abs() < 1e-12, "{values:?}");
    let report = EvaluationReport::from_results(&results);
    assert!((report.rows[0].mean - 0.3).abs() < 1e-12);
    assert!((report.rows[0].std - 0.1).abs() < 1e-12);
    assert_eq!(report.rows[0].n, 2);
}

#[test]
fn report_ignores_dataset_order() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut cases: Vec<EvaluationCase> = (0..12)
        .map(|i| {
            case(
                &format!("img{i}"),
                &image,
                vec![("rand", random_map(&mut rng, 10, 10)), ("fixture", designated_map(&mask, i % 2 == 0))],
            )
        })
        .collect();
    let specs = [MetricSpec::new(MetricKind::Insertion).with_step(0.1), MetricSpec::new(MetricKind::Deletion).with_step(0.1)];
    let (a, _) = evaluate_batch(&cases, &oracle, &specs).unwrap();
    cases.shuffle(&mut rng);
    let (b, _) = evaluate_batch(&cases, &oracle, &specs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert!(a.to_table().contains("± "));
    assert!(a.to_csv().starts_with("method,metric,mean,std,n,incomplete\n"));
}

#[test]
fn failed_images_mark_rows_incomplete() {
    let (image, mask) = designated_fixture();
    let oracle = StubOracle::fraction_remaining(mask.clone(), 0.0);
    let wrong_shape = designated_map(&Array2::from_elem((5, 5), true), true);
    let cases = [
        case("ok", &image, vec![("m", designated_map(&mask, true))]),
        case("bad", &image, vec![("m", wrong_shape)]),
    ];
    let (report, results) = evaluate_batch(&cases, &oracle, &[quarter_steps(MetricKind::Deletion)]).unwrap();
    assert!(report.rows[0].incomplete);
    assert_eq!(report.rows[0].n, 1);
    assert!(results[1].error.is_some());
    assert!(evaluate_batch(&[], &oracle, &[quarter_steps(MetricKind::Deletion)]).is_err());
}

proptest! {
    #[test]
    fn auc_stays_in_unit_interval(seed in any::<u64>(), step in 0.01f64..=1.0) {
        let (image, mask) = designated_fixture();
        let oracle = StubOracle::fraction_remaining(mask, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_map(&mut rng, 10, 10);
        for kind in [MetricKind::Insertion, MetricKind::Deletion] {
            let curve = evaluate_metric(&image, &map, &oracle, &MetricSpec::new(kind).with_step(step)).unwrap().curve;
            prop_assert!((0.0..=1.0).contains(&curve.auc()));
            prop_assert_eq!(curve.points().first().unwrap().0, 0.0);
            prop_assert_eq!(curve.points().last().unwrap().0, 1.0);
        }
    }

    #[test]
    fn trapezoid_is_exact_on_piecewise_linear(knots in proptest::collection::vec(0.0f64..=1.0, 2..12)) {
        let n = knots.len() - 1;
        let points: Vec<(f64, f64)> = knots.iter().enumerate().map(|(i, &s)| (i as f64 / n as f64, s)).collect();
        let curve = PerturbationCurve::from_points(points.clone()).unwrap();
        // closed form for equally spaced knots
        let closed = (knots.iter().sum::<f64>() - (knots[0] + knots[n]) / 2.0) / n as f64;
        prop_assert!((curve.auc() - closed).abs() < 1e-12);
    }
}
