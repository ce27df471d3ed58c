use deepembed::datastore::{read_dataset_from, write_dataset_to};
use deepembed::simfit::{empirical_match_probability, fit_curve, LabeledDistanceSample};
use deepembed::{ImageRecord, RawKeypoint, SimilarityCurve, CONTEXT_SLOTS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn arb_record(dim: usize) -> impl Strategy<Value = ImageRecord> {
    (any::<u32>(), 1u32..2000, 1u32..2000, 0usize..5).prop_flat_map(move |(img_id, width, height, n_kp)| {
        let kps = prop::collection::vec((0.0f32..1.0, 0.0f32..1.0, prop::collection::vec(any::<u8>(), 128)), n_kp);
        let ctx = prop::collection::vec(-1e6f32..1e6, CONTEXT_SLOTS * dim);
        (kps, ctx).prop_map(move |(kps, contexts)| ImageRecord {
            img_id,
            width,
            height,
            keypoints: kps
                .into_iter()
                .map(|(u, v, d)| RawKeypoint::new(u * width as f32, v * height as f32, &d).unwrap())
                .collect(),
            context_dim: dim,
            contexts,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_roundtrip(records in (1usize..6).prop_flat_map(|dim| prop::collection::vec(arb_record(dim), 0..4))) {
        let mut records = records;
        records.sort_by_key(|r| r.img_id);
        records.dedup_by_key(|r| r.img_id);
        let mut buf = Vec::new();
        write_dataset_to(&records, &mut buf).unwrap();
        let back = read_dataset_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn truncation_is_an_error(record in (1usize..6).prop_flat_map(arb_record), cut in 1usize..64) {
        let mut buf = Vec::new();
        write_dataset_to(std::slice::from_ref(&record), &mut buf).unwrap();
        let keep = buf.len().saturating_sub(cut);
        prop_assert!(read_dataset_from(&mut &buf[..keep]).is_err());
    }
}

#[test]
fn fit_from_labeled_samples() {
    for (scale, p) in [(0.8, 3), (0.4, 5)] {
        let curve = SimilarityCurve { exponent: p, scale };
        let mut rng = ChaCha20Rng::seed_from_u64(p as u64);
        let samples: Vec<_> = (0..40_000)
            .map(|_| {
                let d = rng.random::<f64>() * 2.0 * scale;
                LabeledDistanceSample { distance: d, is_match: rng.random::<f64>() < curve.eval(d) }
            })
            .collect();
        let bins = empirical_match_probability(&samples, 24).unwrap();
        let fit = fit_curve(&bins, p).unwrap();
        assert!((fit.scale - scale).abs() / scale < 0.05, "{scale} {p}: {}", fit.scale);
    }
}
