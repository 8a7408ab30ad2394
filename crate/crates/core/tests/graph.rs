use grf_core::dataset::FeatureDataset;
use grf_core::graph::{knn_graph, KdTreeParams, KnnMethod};
use grf_core::rng::RngStream;

fn gaussian(n: usize, d: usize, seed: u64) -> FeatureDataset {
    let mut rng = RngStream::new(seed, 0);
    let features = (0..n * d).map(|_| rng.normal() as f32).collect();
    FeatureDataset::new(
        (0..n).map(|i| format!("p{i}")).collect(),
        vec![0; n],
        vec![None; n],
        features,
        d,
        vec![],
    )
    .unwrap()
}

/// Brute-force neighbor lists, ties to the lower index.
fn brute_force(ds: &FeatureDataset, k: usize) -> Vec<Vec<usize>> {
    (0..ds.n())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..ds.n())
                .filter(|&j| j != i)
                .map(|j| {
                    let s = ds.row(i).iter().zip(ds.row(j)).map(|(&a, &b)| {
                        let t = a as f64 - b as f64;
                        t * t
                    });
                    (s.sum(), j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|e| e.1).collect()
        })
        .collect()
}

#[test]
fn kd_forest_recall_on_64d_gaussian() {
    let ds = gaussian(2000, 64, 11);
    let k = 15;
    let truth = brute_force(&ds, k);
    let params = KdTreeParams {
        trees: 8,
        leaf_size: 8,
        checks: 1500,
    };
    let g = knn_graph(&ds, k, KnnMethod::KdTree(params), 3).unwrap();
    let hits: usize = truth
        .iter()
        .enumerate()
        .map(|(i, t)| t.iter().filter(|j| g.neighbors(i).contains(j)).count())
        .sum();
    let recall = hits as f64 / (k * ds.n()) as f64;
    println!("recall@{k} = {recall:.4}");
    assert!(recall >= 0.90, "recall {recall}");
}

#[test]
fn symmetrized_random_graph_matches_dense_transpose() {
    let ds = gaussian(100, 8, 5);
    let g = knn_graph(&ds, 5, KnnMethod::Exact, 0).unwrap();
    let n = ds.n();
    let mut dense = vec![vec![false; n]; n];
    for (i, row) in dense.iter_mut().enumerate() {
        for &j in g.neighbors(i) {
            row[j] = true;
        }
    }
    let s = g.symmetrize();
    for i in 0..n {
        assert!((5..n).contains(&s.degree(i)));
        for j in 0..n {
            assert_eq!(s.has_edge(i, j), dense[i][j] || dense[j][i], "({i},{j})");
        }
    }
}
