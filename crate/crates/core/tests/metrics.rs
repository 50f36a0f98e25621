use metroflow::train::{compute_metrics, mae, rmse, wmape};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), 1..300).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_direct_formulas((y, p) in pairs()) {
        prop_assume!(y.iter().sum::<f64>() > 0.0);
        let n = y.len() as f64;
        let sq: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let ab: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        let total: f64 = y.iter().sum();
        let m = compute_metrics(&y, &p).unwrap();
        prop_assert!((m.rmse - (sq / n).sqrt()).abs() <= 1e-10 * m.rmse.max(1.0));
        prop_assert!((m.mae - ab / n).abs() <= 1e-10 * m.mae.max(1.0));
        prop_assert!((m.wmape - ab / total).abs() <= 1e-12);
        prop_assert_eq!(m.rmse, rmse(&y, &p).unwrap());
        prop_assert_eq!(m.mae, mae(&y, &p).unwrap());
        prop_assert_eq!(m.wmape, wmape(&y, &p).unwrap());
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
    }

    #[test]
    fn wmape_is_scale_invariant((y, p) in pairs(), k in 0.1f64..100.0) {
        prop_assume!(y.iter().sum::<f64>() > 0.0);
        let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        let (a, b) = (wmape(&y, &p).unwrap(), wmape(&ys, &ps).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}
