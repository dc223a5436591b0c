use gridfed::cost::{bandwidth_reduction, centralized_cost, fl_cost};
use gridfed::dataio::{
    apply_zscore, fit_norm_stats, generate_synthetic, impute_missing, read_csv, write_csv, Dataset, NormStats,
};
use gridfed::metrics::roc_curve;
use gridfed::nn::{forward, MlpParams};
use gridfed::partition::{partition_iid, partition_noniid, partition_proportional, partition_report, ClientShard};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..12, 2usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, n * d),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(prop::bool::weighted(0.2), n * d),
        )
            .prop_map(move |(x, y, m)| {
                let names = (0..d).map(|j| format!("c{j}")).collect();
                Dataset::new(x, y, m, names).unwrap()
            })
    })
}

fn sorted_cover(shards: &[ClientShard]) -> Vec<usize> {
    let mut all: Vec<usize> = shards.iter().flat_map(|s| s.row_indices.iter().copied()).collect();
    all.sort_unstable();
    all
}

fn column_moments(data: &Dataset, j: usize) -> (f64, f64) {
    let n = data.n_rows() as f64;
    let mean = (0..data.n_rows()).map(|i| data.value(i, j)).sum::<f64>() / n;
    let var = (0..data.n_rows()).map(|i| (data.value(i, j) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_lossless(data in dataset_strategy()) {
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn zscore_standardizes_fitted_data(seed in 0u64..1000, n in 10usize..200, d in 2usize..8) {
        let data = generate_synthetic(n, d, 0.2, 0.0, seed).unwrap();
        let stats = fit_norm_stats(&data).unwrap();
        let z = apply_zscore(&data, &stats).unwrap();
        for j in 0..d {
            let (m, s) = column_moments(&z, j);
            prop_assert!(m.abs() <= 1e-9);
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn imputation_preserves_observed_means(seed in 0u64..1000, rate in 0.0f64..0.3) {
        let data = generate_synthetic(60, 5, 0.2, rate, seed).unwrap();
        let stats = fit_norm_stats(&data).unwrap();
        let filled = impute_missing(&data, &stats).unwrap();
        prop_assert_eq!(filled.missing_count(), 0);
        for j in 0..5 {
            let observed: Vec<f64> =
                (0..60).filter(|&i| !data.is_missing(i, j)).map(|i| data.value(i, j)).collect();
            let before = observed.iter().sum::<f64>() / observed.len() as f64;
            let (after, _) = column_moments(&filled, j);
            prop_assert!((after - before).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }

    #[test]
    fn test_set_shift_moves_outputs_by_shift_over_std(seed in 0u64..500, shift in -50.0f64..50.0) {
        let data = generate_synthetic(40, 4, 0.2, 0.0, seed).unwrap();
        let stats = fit_norm_stats(&data).unwrap();
        let shifted_features: Vec<f64> = data.features().iter().map(|x| x + shift).collect();
        let shifted = Dataset::from_rows(shifted_features, data.labels().to_vec(), 4).unwrap();
        let a = apply_zscore(&data, &stats).unwrap();
        let b = apply_zscore(&shifted, &stats).unwrap();
        for (idx, (u, v)) in a.features().iter().zip(b.features()).enumerate() {
            let expect = shift / stats.std[idx % 4];
            prop_assert!((v - u - expect).abs() <= 1e-9 * (1.0 + expect.abs() + u.abs()));
        }
    }

    #[test]
    fn synthetic_positive_count_is_rounded_rate(n in 10usize..3000, rate in 0.01f64..0.99, seed in 0u64..100) {
        let data = generate_synthetic(n, 2, rate, 0.0, seed).unwrap();
        prop_assert_eq!(data.class_counts()[1], (n as f64 * rate).round() as usize);
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive(
        labels in prop::collection::vec(0u8..2, 8..400),
        k in 1usize..5,
        spc in 1usize..3,
        seed in 0u64..1000,
    ) {
        let n = labels.len();
        let all: Vec<usize> = (0..n).collect();
        let iid = partition_iid(n, k, seed).unwrap();
        prop_assert_eq!(sorted_cover(&iid), all.clone());
        let sizes: Vec<usize> = iid.iter().map(ClientShard::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(partition_iid(n, k, seed).unwrap(), iid);

        let skew = partition_noniid(&labels, k, spc, seed).unwrap();
        prop_assert_eq!(sorted_cover(&skew), all.clone());
        prop_assert_eq!(partition_noniid(&labels, k, spc, seed).unwrap(), skew);

        let prop_split = partition_proportional(&labels, k, seed).unwrap();
        prop_assert_eq!(sorted_cover(&prop_split), all);
        let report = partition_report(&prop_split, &labels).unwrap();
        let ones = labels.iter().filter(|&&y| y == 1).count();
        prop_assert_eq!(report.totals(), (n, n - ones, ones));
    }

    #[test]
    fn label_skew_with_one_shard_is_pure(seed in 0u64..1000, pos in 100usize..900) {
        let mut labels = vec![0u8; 1000];
        labels[..pos].iter_mut().for_each(|y| *y = 1);
        let shards = partition_noniid(&labels, 2, 1, seed).unwrap();
        let report = partition_report(&shards, &labels).unwrap();
        let purest = report
            .clients
            .iter()
            .map(|c| c.label0.max(c.label1) as f64 / c.total as f64)
            .fold(0.0, f64::max);
        prop_assert!(purest >= 0.95);
    }

    #[test]
    fn fl_cost_is_linear_in_each_argument(
        r in 1u64..200, k in 1u64..20, p in 1u64..200_000, b in 1u64..9, m in 1u64..50,
    ) {
        let base = fl_cost(r, k, p, b).unwrap();
        prop_assert_eq!(fl_cost(r * m, k, p, b).unwrap(), m * base);
        prop_assert_eq!(fl_cost(r, k * m, p, b).unwrap(), m * base);
        prop_assert_eq!(fl_cost(r, k, p * m, b).unwrap(), m * base);
        prop_assert_eq!(fl_cost(r, k, p, b * m).unwrap(), m * base);
    }

    #[test]
    fn bandwidth_reduction_falls_with_rounds(r in 1u64..500, k in 1u64..10, rows in 1u64..50_000) {
        let p = gridfed::nn::param_count(100) as u64;
        let central = centralized_cost(&[rows], 100, 4).unwrap();
        let now = bandwidth_reduction(fl_cost(r, k, p, 4).unwrap(), central).unwrap();
        let later = bandwidth_reduction(fl_cost(r + 1, k, p, 4).unwrap(), central).unwrap();
        prop_assert!(later < now);
    }

    #[test]
    fn roc_is_monotone_under_heavy_ties(
        pairs in prop::collection::vec((0u8..3, 0u8..2), 2..300),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|&(s, _)| s as f64 / 2.0).collect();
        let truth: Vec<u8> = pairs.iter().map(|&(_, y)| y).collect();
        prop_assume!(truth.contains(&0) && truth.contains(&1));
        let roc = roc_curve(&scores, &truth).unwrap();
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(b3 in prop::array::uniform2(-1e4f64..1e4), x in prop::collection::vec(-1e3f64..1e3, 3)) {
        let mut p = MlpParams::zeros(3);
        p.b3 = b3.to_vec();
        p.w1.iter_mut().enumerate().for_each(|(i, w)| *w = ((i % 7) as f64 - 3.0) * 0.1);
        let out = forward(&p, &x).unwrap();
        let row = out.probs();
        prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn identity_stats_leave_data_untouched() {
    let data = generate_synthetic(20, 3, 0.2, 0.0, 1).unwrap();
    assert_eq!(apply_zscore(&data, &NormStats::identity(3)).unwrap(), data);
}

/// Each client's positive rate stays within 3 binomial standard errors of the
/// global rate. Fixed seeds: this is a statistical bound, not an identity.
#[test]
fn iid_clients_track_global_rate() {
    let n = 5000;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 11 == 0)).collect();
    let rate = labels.iter().filter(|&&y| y == 1).count() as f64 / n as f64;
    for seed in 0..20 {
        for k in 2..6 {
            let report = partition_report(&partition_iid(n, k, seed).unwrap(), &labels).unwrap();
            for c in &report.clients {
                let se = (rate * (1.0 - rate) / c.total as f64).sqrt();
                let client_rate = c.label1 as f64 / c.total as f64;
                assert!((client_rate - rate).abs() < 3.0 * se, "seed {seed} k {k}: {client_rate} vs {rate}");
            }
        }
    }
}
