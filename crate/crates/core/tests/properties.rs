use std::collections::HashMap;

use grf_core::dataset::{assign_splits, load_binary, save_binary, FeatureDataset, Split, SplitRatios};
use grf_core::graph::{knn_graph, normalize, KnnMethod, SparseGraph};
use grf_core::metrics::{average_precision_at_k, average_precision_at_k_corpus, majority_vote_hit};
use grf_core::model::{decode, loss_kl, reparameterize};
use grf_core::nn::{Tape, Tensor2};
use grf_core::retrieval::{build_index, rank};
use grf_core::rng::RngStream;
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(-range..range, rows * cols)
        .prop_map(move |v| Tensor2::from_vec(rows, cols, v).unwrap())
}

fn dataset(max_n: usize, max_d: usize) -> impl Strategy<Value = FeatureDataset> {
    (3..max_n, 1..max_d, 1u32..4).prop_flat_map(|(n, d, c)| {
        (
            prop::collection::vec(-100.0f32..100.0, n * d),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(f, mut labels)| {
                // Labels must cover 0..C-1.
                for (i, l) in labels.iter_mut().enumerate().take(c as usize) {
                    *l = i as u32;
                }
                FeatureDataset::new(
                    (0..n).map(|i| format!("x{i}")).collect(),
                    labels,
                    vec![None; n],
                    f,
                    d,
                    vec![],
                )
                .unwrap()
            })
    })
}

/// Random undirected edge sets over `n` nodes.
fn graph() -> impl Strategy<Value = SparseGraph> {
    (2usize..12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n, 0.1f32..2.0), 0..3 * n).prop_map(move |edges| {
            let mut rows: Vec<HashMap<usize, f32>> = vec![HashMap::new(); n];
            for (i, j, w) in edges {
                if i != j {
                    rows[i].insert(j, w);
                }
            }
            let rows = rows
                .into_iter()
                .map(|r| {
                    let mut v: Vec<(usize, f32)> = r.into_iter().collect();
                    v.sort_by_key(|e| e.0);
                    v
                })
                .collect();
            SparseGraph::from_rows(rows).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn decode_is_symmetric_probability(z in (1usize..8, 1usize..5).prop_flat_map(|(n, d)| tensor(n, d, 3.0))) {
        let p = decode(&z, 20_000).unwrap();
        for i in 0..z.rows() {
            for j in 0..z.rows() {
                prop_assert_eq!(p.get(i, j), p.get(j, i));
                prop_assert!(p.get(i, j) > 0.0 && p.get(i, j) < 1.0);
            }
        }
    }

    #[test]
    fn kl_is_non_negative((mu, logvar) in (1usize..6, 1usize..5).prop_flat_map(|(n, d)| (tensor(n, d, 3.0), tensor(n, d, 3.0)))) {
        let kl = loss_kl(&mu, &logvar).unwrap();
        prop_assert!(kl >= 0.0);
        let zero = Tensor2::zeros(mu.rows(), mu.cols());
        prop_assert_eq!(loss_kl(&zero, &zero).unwrap(), 0.0);
        if mu.data().iter().chain(logvar.data()).any(|&v| v.abs() > 1e-3) {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn ap_bounds_and_tail_invariance(
        labels in prop::collection::vec(0u8..3, 1..15),
        tail in prop::collection::vec(0u8..3, 0..5),
        q in 0u8..3,
        k_seed in 0usize..100,
    ) {
        let k = 1 + k_seed % labels.len();
        let ap = average_precision_at_k(&labels, &q, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        // Relevance is counted inside the top k, so AP is 1 exactly when the
        // relevant items form a non-empty prefix of it.
        let all = labels[..k].iter().all(|&l| l == q);
        let hits = labels[..k].iter().filter(|&&l| l == q).count();
        let prefix = hits > 0 && labels[..hits].iter().all(|&l| l == q);
        prop_assert_eq!(ap == 1.0, prefix);
        if all {
            prop_assert_eq!(ap, 1.0);
        }
        let mut longer = labels.clone();
        longer.extend(tail);
        prop_assert_eq!(average_precision_at_k(&longer, &q, k).unwrap(), ap);
        if all {
            prop_assert!(majority_vote_hit(&labels, &q, k).unwrap());
        }
        let corpus = average_precision_at_k_corpus(&labels, &q, k, hits + 2).unwrap();
        prop_assert!(corpus <= ap);
    }

    #[test]
    fn symmetrize_idempotent_and_normalized(g in graph()) {
        let s = g.symmetrize();
        prop_assert!(s.is_symmetric());
        prop_assert_eq!(s.symmetrize(), s.clone());
        let a = normalize(&s).unwrap();
        for i in 0..s.n() {
            prop_assert!(a.get(i, i).unwrap() > 0.0);
            for j in 0..s.n() {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                if let Some(v) = a.get(i, j) {
                    prop_assert!(v > 0.0 && v <= 1.0);
                }
            }
        }
    }

    #[test]
    fn raw_knn_rows_have_k_entries(ds in dataset(30, 6), k_seed in 0usize..100) {
        let k = 1 + k_seed % (ds.n() - 1);
        let g = knn_graph(&ds, k, KnnMethod::Exact, 0).unwrap();
        for i in 0..ds.n() {
            prop_assert_eq!(g.degree(i), k);
            prop_assert!(!g.neighbors(i).contains(&i));
        }
    }

    #[test]
    fn dataset_binary_round_trip(ds in dataset(20, 5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_binary(&ds, &path).unwrap();
        let back = load_binary(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        let bits = |d: &FeatureDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&ds));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_stratify_and_preserve_items(
        sizes in prop::collection::vec(3usize..40, 1..5),
        seed in any::<u64>(),
    ) {
        let labels: Vec<u32> = sizes.iter().enumerate().flat_map(|(c, &s)| vec![c as u32; s]).collect();
        let n = labels.len();
        let ds = FeatureDataset::new(
            (0..n).map(|i| format!("i{i}")).collect(),
            labels,
            vec![None; n],
            (0..n).map(|i| i as f32).collect(),
            1,
            vec![],
        ).unwrap();
        let ratios = SplitRatios::default();
        let out = assign_splits(&ds, ratios, seed).unwrap();
        prop_assert_eq!(out.ids(), ds.ids());
        prop_assert_eq!(out.labels(), ds.labels());
        prop_assert_eq!(out.features(), ds.features());
        for (c, &size) in sizes.iter().enumerate() {
            for (split, r) in [(Split::Train, ratios.train), (Split::Val, ratios.val), (Split::Test, ratios.test)] {
                let count = (0..n).filter(|&i| out.labels()[i] == c as u32 && out.splits()[i] == Some(split)).count();
                prop_assert!((count as f64 - r * size as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn ranking_is_sorted_complete_and_deterministic(n in 2usize..25, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let ds = FeatureDataset::new(
            (0..n).map(|i| format!("r{i:02}")).collect(),
            vec![0; n],
            (0..n).map(|i| Some([Split::Train, Split::Val, Split::Test][i % 3])).collect(),
            // Coarse values make ties likely.
            (0..n * 3).map(|_| rng.below(3) as f32).collect(),
            3,
            vec![],
        ).unwrap();
        let g = knn_graph(&ds, 1, KnnMethod::Exact, 0).unwrap().symmetrize();
        let artifacts = grf_core::model::GraphArtifacts::from_dataset(&ds, g).unwrap();
        let mut config = grf_core::model::ModelConfig::new(3);
        config.d_hidden = 4;
        config.d_latent = 2;
        let ck = grf_core::model::Checkpoint::initial(&config).unwrap();
        let index = build_index(&ck, &ds, &artifacts, grf_core::dataset::SplitFilter::All).unwrap();
        let mu = [rng.normal(), rng.normal()];
        let hits = rank(&index, &mu, n);
        prop_assert_eq!(hits.len(), n);
        for w in hits.windows(2) {
            prop_assert!(w[0].distance >= 0.0);
            prop_assert!(w[0].distance < w[1].distance || (w[0].distance == w[1].distance && w[0].id < w[1].id));
        }
        let mut ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(&rank(&index, &mu, n), &hits);
        let k = 1 + seed as usize % n;
        let top = rank(&index, &mu, k);
        prop_assert_eq!(top.as_slice(), &hits[..k]);
    }

    #[test]
    fn reparameterize_with_unit_variance_adds_eps(
        (mu, seed) in ((1usize..5, 1usize..4).prop_flat_map(|(n, d)| tensor(n, d, 5.0)), any::<u64>()),
    ) {
        let zero = Tensor2::zeros(mu.rows(), mu.cols());
        let z = reparameterize(&mu, &zero, &mut RngStream::new(seed, 1)).unwrap();
        let mut rng = RngStream::new(seed, 1);
        for (i, (&zv, &m)) in z.data().iter().zip(mu.data()).enumerate() {
            let eps = rng.normal();
            prop_assert_eq!(zv - m, (m + eps) - m, "entry {}", i);
        }
    }
}

#[test]
fn masked_softmax_rows_sum_to_one() {
    let mut rng = RngStream::new(8, 0);
    for _ in 0..50 {
        let (r, c) = (1 + rng.below(6), 1 + rng.below(6));
        let logits = Tensor2::from_fn(r, c, |_, _| rng.normal() * 10.0);
        let mut mask: Vec<bool> = (0..r * c).map(|_| rng.uniform() < 0.6).collect();
        for i in 0..r {
            mask[i * c + rng.below(c)] = true;
        }
        let mut t = Tape::new();
        let x = t.constant(logits);
        let y = t.row_softmax_masked(x, std::sync::Arc::new(mask.clone())).unwrap();
        let yv = t.value(y);
        for i in 0..r {
            let s: f64 = (0..c).filter(|&j| mask[i * c + j]).map(|j| yv.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in 0..c {
                if !mask[i * c + j] {
                    assert_eq!(yv.get(i, j), 0.0);
                }
            }
        }
    }
}
