//! Validity indices against direct evaluations of their definitions.

mod common;

use common::{oracle_ch, oracle_dbi, oracle_silhouette};
use loadseg::validity::{calinski_harabasz, davies_bouldin, silhouette};
use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;

fn labeled_points() -> impl Strategy<Value = (Array2<f64>, Vec<i64>)> {
    (4usize..=30, 1usize..=3, 2usize..=5).prop_flat_map(|(n, d, k)| {
        let k = k.min(n - 1);
        (
            prop::collection::vec(-10.0f64..10.0, n * d),
            prop::collection::vec(0..k as i64, n - k),
            Just((n, d, k)),
        )
            .prop_map(|(v, rest, (n, d, k))| {
                // the first k points seed every cluster so none is empty
                let mut labels: Vec<i64> = (0..k as i64).collect();
                labels.extend(rest);
                (Array2::from_shape_vec((n, d), v).unwrap(), labels)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn indices_match_direct_definitions((x, labels) in labeled_points()) {
        prop_assert!((silhouette(x.view(), &labels).unwrap() - oracle_silhouette(&x, &labels)).abs() <= 1e-9);
        prop_assert!((davies_bouldin(x.view(), &labels).unwrap() - oracle_dbi(&x, &labels)).abs() <= 1e-9);
        prop_assert!((calinski_harabasz(x.view(), &labels).unwrap() - oracle_ch(&x, &labels)).abs() <= 1e-9);
    }

    #[test]
    fn duplicating_every_point((x, labels) in labeled_points()) {
        // centroids and mean scatters are unchanged; B and W both double
        let xx = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let ll: Vec<i64> = labels.iter().chain(&labels).copied().collect();
        let (n, k) = (labels.len() as f64, (*labels.iter().max().unwrap() + 1) as f64);
        let dbi = davies_bouldin(x.view(), &labels).unwrap();
        prop_assert!((davies_bouldin(xx.view(), &ll).unwrap() - dbi).abs() <= 1e-9 * dbi.max(1.0));
        let ch = calinski_harabasz(x.view(), &labels).unwrap();
        let expected = ch * (2.0 * n - k) / (n - k);
        prop_assert!((calinski_harabasz(xx.view(), &ll).unwrap() - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn index_ranges((x, labels) in labeled_points()) {
        let s = silhouette(x.view(), &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(davies_bouldin(x.view(), &labels).unwrap() >= 0.0);
        prop_assert!(calinski_harabasz(x.view(), &labels).unwrap() >= 0.0);
    }
}
