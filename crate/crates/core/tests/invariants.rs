use persona::eval::{auc, hr_at_k, ndcg_at_k, RankedPrediction};
use persona::harness::wire::{decode_download, decode_upload, download_len, encode_download, encode_upload, upload_len, DownloadMessage, UploadMessage};
use persona::numerics::{clamp, Matrix};
use persona::prototypes::{adjusted_rand_index, kmeans, rand_index};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap()))
}

fn prediction() -> impl Strategy<Value = RankedPrediction> {
    // scores from a small set so ties are common
    (1usize..15).prop_flat_map(|n| {
        (prop::collection::vec(0u32..20, n + 1), prop::collection::vec(0i32..4, n + 1)).prop_map(|(ids, scores)| RankedPrediction {
            positive: ids[0],
            positive_score: scores[0] as f64,
            negatives: ids[1..].to_vec(),
            negative_scores: scores[1..].iter().map(|&s| s as f64).collect(),
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clamp_respects_bound(m in matrix(), bound in 1e-3f64..20.0) {
        let c = clamp(&m, bound);
        for (&v, &orig) in c.data().iter().zip(m.data()) {
            prop_assert!(v.abs() <= bound);
            if orig.abs() <= bound {
                prop_assert_eq!(v, orig);
            }
        }
    }

    #[test]
    fn upload_round_trips(device_id in any::<u32>(), window in prop::collection::vec(any::<u32>(), 0..64)) {
        let msg = UploadMessage { device_id, window };
        let bytes = encode_upload(&msg);
        prop_assert_eq!(bytes.len(), upload_len(msg.window.len()));
        prop_assert_eq!(decode_upload(&bytes).unwrap(), msg);
    }

    #[test]
    fn download_round_trips_f32_values(group in any::<u16>(), layers in prop::collection::vec(matrix(), 1..4)) {
        let layers: Vec<Matrix> = layers.iter().map(|l| l.map(|v| v as f32 as f64)).collect();
        let shapes: Vec<(usize, usize)> = layers.iter().map(Matrix::shape).collect();
        let msg = DownloadMessage { group, layers };
        let bytes = encode_download(&msg).unwrap();
        prop_assert_eq!(bytes.len(), download_len(&shapes));
        prop_assert_eq!(decode_download(&bytes, &shapes).unwrap(), msg);
    }

    #[test]
    fn truncated_frames_are_rejected(window in prop::collection::vec(any::<u32>(), 1..16), cut in 1usize..8) {
        let bytes = encode_upload(&UploadMessage { device_id: 1, window });
        prop_assert!(decode_upload(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn metrics_are_bounded_and_ordered(preds in prop::collection::vec(prediction(), 1..20)) {
        let a = auc(&preds).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let smallest = preds.iter().map(RankedPrediction::candidate_count).min().unwrap();
        let mut prev_hr = 0.0;
        for k in 1..=smallest {
            let hr = hr_at_k(&preds, k).unwrap();
            let ndcg = ndcg_at_k(&preds, k).unwrap();
            prop_assert!(hr >= prev_hr);
            prop_assert!(ndcg <= hr + 1e-12);
            prev_hr = hr;
        }
        for p in &preds {
            prop_assert!((1..=p.candidate_count()).contains(&p.rank()));
        }
    }

    #[test]
    fn kmeans_is_a_total_nonempty_partition(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k.min(points.len());
        let p = kmeans(&points, k, seed, 50).unwrap();
        prop_assert_eq!(p.assignments.len(), points.len());
        let sizes = p.sizes();
        prop_assert_eq!(sizes.len(), k);
        prop_assert!(sizes.iter().all(|&s| s > 0));
        prop_assert_eq!(sizes.iter().sum::<usize>(), points.len());
        prop_assert_eq!(p.assignments, kmeans(&points, k, seed, 50).unwrap().assignments);
    }

    #[test]
    fn agreement_ignores_label_names(labels in prop::collection::vec(0usize..4, 2..40), other in prop::collection::vec(0usize..4, 2..40)) {
        let n = labels.len().min(other.len());
        let (a, b) = (&labels[..n], &other[..n]);
        let renamed: Vec<usize> = a.iter().map(|&l| 3 - l).collect();
        prop_assert!((rand_index(a, &renamed).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(a, b).unwrap() - adjusted_rand_index(&renamed, b).unwrap()).abs() < 1e-12);
        prop_assert!((rand_index(a, b).unwrap() - rand_index(b, a).unwrap()).abs() < 1e-12);
    }
}
