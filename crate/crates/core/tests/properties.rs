use nnfdk_core::fdk::{filter_1d, ExpBinning};
use nnfdk_core::metrics::seg_metrics;
use nnfdk_core::nnfdk::param_count;
use nnfdk_core::{Filter, Mask, NetworkParams, ProjectionData};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn projections(na: usize, nd: usize) -> impl Strategy<Value = ProjectionData> {
    prop::collection::vec(-1.0f64..1.0, na * nd * nd)
        .prop_map(move |d| ProjectionData::from_vec(na, nd, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filtering_is_linear(
        a in projections(2, 8),
        b in projections(2, 8),
        taps in prop::collection::vec(-1.0f64..1.0, 16),
        alpha in -3.0f64..3.0,
    ) {
        let f = Filter::new(taps).unwrap();
        let mut mix = a.clone();
        for (m, y) in mix.data.iter_mut().zip(&b.data) {
            *m = alpha * *m + y;
        }
        let lhs = filter_1d(&mix, &f).unwrap();
        let (fa, fb) = (filter_1d(&a, &f).unwrap(), filter_1d(&b, &f).unwrap());
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - (alpha * fa.data[i] + fb.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn binning_partitions_taps(log_n in 3u32..11) {
        let n = 1usize << log_n;
        let b = ExpBinning::new(n).unwrap();
        let total: usize = (0..b.n_bins()).map(|e| b.width(e)).sum();
        prop_assert_eq!(total, 2 * n);
        for tap in 0..2 * n {
            prop_assert!(b.bin_of(tap) < b.n_bins());
        }
        for e in 0..b.n_bins() {
            let unit = b.unit_filter(e);
            prop_assert_eq!(unit.taps.iter().filter(|&&t| t != 0.0).count(), b.width(e));
        }
    }

    #[test]
    fn network_json_round_trips(seed in any::<u64>(), hidden in 1usize..6) {
        let b = ExpBinning::new(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NetworkParams::random(b, hidden, 1.0, &mut rng);
        prop_assert_eq!(p.n_params(), param_count(p.n_inputs(), hidden));
        let q = NetworkParams::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(q.to_vector(), p.to_vector());
        let z = vec![0.3; p.n_inputs()];
        prop_assert_eq!(q.eval_scaled(&z).unwrap(), p.eval_scaled(&z).unwrap());
    }

    #[test]
    fn seg_metric_invariants(
        seg in prop::collection::vec(any::<bool>(), 64),
        gold in prop::collection::vec(any::<bool>(), 64),
    ) {
        prop_assume!(gold.iter().any(|&g| g));
        let seg = Mask { n: 4, data: seg };
        let gold = Mask { n: 4, data: gold };
        let m = seg_metrics(&seg, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.dice));
        prop_assert!(m.v_err >= -1.0);
        prop_assert!(m.ml_err >= m.v_err.abs() - 1e-12);
        let own = seg_metrics(&gold, &gold).unwrap();
        prop_assert_eq!((own.v_err, own.ml_err, own.dice), (0.0, 0.0, 1.0));
    }
}
