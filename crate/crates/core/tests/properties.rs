use dsrl::data::{average_precision, roc_auc};
use dsrl::graphs::{lshad, LshadParams};
use dsrl::hypernn::f_x_m;
use dsrl::manifold::{geodesic_distance, lift_from_euclidean};
use dsrl::tensor::Tensor;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Hyperbolic law of cosines for two points lifted from the origin's
/// tangent space: `cosh d = cosh a cosh b - sinh a sinh b cos(angle)`.
fn law_of_cosines(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (norm(a), norm(b));
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (ra * rb);
    (ra.cosh() * rb.cosh() - ra.sinh() * rb.sinh() * cos).max(1.0).acosh()
}

/// AP as the mean precision at the rank of each positive, for distinct
/// scores.
fn ap_by_rank(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let (mut tp, mut sum) = (0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1.0;
            sum += tp / (rank + 1) as f64;
        }
    }
    sum / tp
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 3)
}

proptest! {
    #[test]
    fn distance_from_origin_is_the_euclidean_norm(e in vec3()) {
        let d = geodesic_distance(&lift_from_euclidean(&[0.0; 3]), &lift_from_euclidean(&e)).unwrap();
        prop_assert!((d - norm(&e)).abs() <= 1e-10 * (1.0 + norm(&e)));
    }

    #[test]
    fn distance_matches_the_law_of_cosines(a in vec3(), b in vec3()) {
        prop_assume!(norm(&a) > 0.1 && norm(&b) > 0.1);
        let d = geodesic_distance(&lift_from_euclidean(&a), &lift_from_euclidean(&b)).unwrap();
        let expected = law_of_cosines(&a, &b);
        // acosh loses precision near zero, so compare on the cosh scale there.
        prop_assert!((d.cosh() - expected.cosh()).abs() <= 1e-9 * expected.cosh());
    }

    #[test]
    fn distance_is_a_metric(a in vec3(), b in vec3(), c in vec3()) {
        let [pa, pb, pc] = [&a, &b, &c].map(|e| lift_from_euclidean(e));
        let ab = geodesic_distance(&pa, &pb).unwrap();
        prop_assert_eq!(ab, geodesic_distance(&pb, &pa).unwrap());
        prop_assert!(geodesic_distance(&pa, &pa).unwrap() == 0.0);
        let ac = geodesic_distance(&pa, &pc).unwrap();
        let cb = geodesic_distance(&pc, &pb).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
    }

    #[test]
    fn f_x_m_is_time_solved_wx(
        m in prop::collection::vec(-1.0..1.0f64, 12),
        e in vec3(),
    ) {
        let matrix = Tensor::new(3, 4, m).unwrap();
        let x = lift_from_euclidean(&e);
        let vx: f64 = matrix.row(0).iter().zip(x.coords()).map(|(a, b)| a * b).sum();
        prop_assume!(vx.abs() > 1e-6);
        let wx: Vec<f64> = (1..3)
            .map(|r| matrix.row(r).iter().zip(x.coords()).map(|(a, b)| a * b).sum())
            .collect();
        let y = f_x_m(&matrix, &x).unwrap();
        prop_assert_eq!(y.spatial(), &wx[..]);
        prop_assert!((y.time() - (1.0 + wx[0] * wx[0] + wx[1] * wx[1]).sqrt()).abs() <= 1e-12 * y.time());
    }

    #[test]
    fn lshad_lies_strictly_between_its_limits(energy in 0.0..1e6f64, layer in 1usize..6) {
        let p = LshadParams::default();
        let t = lshad(energy, layer, &p);
        let lo = lshad(f64::INFINITY, layer, &p);
        let hi = lshad(0.0, layer, &p);
        prop_assert!(lo <= t && t <= hi && 0.0 < lo && hi < 1.0);
    }

    #[test]
    fn ap_matches_precision_at_each_positive(
        labels in prop::collection::vec(0u8..2, 2..40),
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.contains(&1));
        let n = labels.len();
        // A permutation of distinct scores.
        let scores: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % n as u64) as f64).collect();
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!((ap - ap_by_rank(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn auc_matches_pair_counting(
        pairs in prop::collection::vec((0u8..4, 0u8..2), 2..40),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let mut wins = 0.0;
        for i in (0..labels.len()).filter(|&i| labels[i] == 1) {
            for j in (0..labels.len()).filter(|&j| labels[j] == 0) {
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
        let expected = wins / (pos * (labels.len() - pos)) as f64;
        prop_assert!((roc_auc(&scores, &labels).unwrap() - expected).abs() <= 1e-12);
    }
}
