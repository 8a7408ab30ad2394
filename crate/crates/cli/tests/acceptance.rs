//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use grf_core::dataset::{load_binary, save_binary, FeatureDataset, SplitFilter};
use grf_core::graph::{knn_graph, load_graph, save_graph, KdTreeParams, KnnMethod, SparseGraph};
use grf_core::metrics::{average_precision_at_k, majority_vote_hit, EvalReport};
use grf_core::model::{
    decode, loss_adversarial, loss_kl, loss_reconstruction, AdversarialRole, Checkpoint,
    GraphArtifacts, Model, ModelConfig, ReconMode, Variant,
};
use grf_core::nn::Tensor2;
use grf_core::retrieval::RetrievalIndex;
use grf_core::rng::RngStream;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_grf"))
        .args(args)
        .output()
        .expect("spawn grf")
}

fn grf_ok(args: &[&str]) -> Result<String, String> {
    let out = grf(args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`grf {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).expect("read artifact");
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn random_points(n: usize, d: usize, seed: u64) -> FeatureDataset {
    let mut rng = RngStream::new(seed, 99);
    let features = (0..n * d).map(|_| rng.uniform() as f32).collect();
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

// ---------------------------------------------------------------------------
// 1. gradient fidelity

const FD_STEP: f64 = 1e-5;
/// Denominator floor: gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn random_graph(n: usize, rng: &mut RngStream) -> SparseGraph {
    let mut rows: Vec<Vec<(usize, f32)>> = vec![Vec::new(); n];
    for i in 0..n {
        // A ring keeps every node connected; extra chords are random.
        let j = (i + 1) % n;
        rows[i].push((j, 1.0));
        rows[j].push((i, 1.0));
    }
    for i in 0..n {
        for j in i + 2..n {
            if rng.uniform() < 0.25 && !(i == 0 && j == n - 1) {
                rows[i].push((j, 1.0));
                rows[j].push((i, 1.0));
            }
        }
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    SparseGraph::from_rows(rows).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = RngStream::new(2024, 7);
    let n = 10;
    let g = random_graph(n, &mut rng);
    let x = Tensor2::from_fn(n, 8, |_, _| rng.normal());
    let graph = GraphArtifacts::new(x, g).map_err(|e| e.to_string())?;
    let mut config = ModelConfig::new(8).with_variant(Variant::AArvgae);
    config.heads = 2;
    config.d_hidden = 4;
    config.d_latent = 4;
    config.disc_hidden = 6;
    config.seed = 5;
    let model = Model::init(&config).map_err(|e| e.to_string())?;

    let draws = || RngStream::new(77, 3);
    let mut prior = RngStream::new(78, 0);
    let real = Tensor2::from_fn(n, 4, |_, _| prior.normal());
    let fake = model
        .encode(&graph, grf_core::nn::Mode::Eval, &mut draws())
        .map_err(|e| e.to_string())?
        .z;

    let total = |m: &Model| m.objective(&graph, &mut draws()).unwrap().total;
    let disc = |m: &Model| m.discriminator_loss(&real, &fake, &mut draws()).unwrap();

    let grads = model
        .objective_gradients(&graph, &mut draws())
        .map_err(|e| e.to_string())?;
    let (_, disc_grads) = model
        .discriminator_gradients(&real, &fake, &mut draws())
        .map_err(|e| e.to_string())?;

    let mut worst: (f64, String) = (0.0, String::new());
    let mut entries = 0;
    let mut probe = |objective: &dyn Fn(&Model) -> f64, name: &str, analytic: &Tensor2| {
        let mut m = model.clone();
        let base = m.param(name).unwrap().clone();
        for e in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[e] += FD_STEP;
            m.set_param(name, t.clone()).unwrap();
            let plus = objective(&m);
            t.data_mut()[e] -= 2.0 * FD_STEP;
            m.set_param(name, t).unwrap();
            let minus = objective(&m);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic.data()[e], numeric);
            entries += 1;
            if err > worst.0 {
                worst = (err, format!("{name}[{e}]"));
            }
        }
        m.set_param(name, base).unwrap();
    };
    for (name, g) in grads.encoder.iter() {
        probe(&total, name, g);
    }
    for (name, g) in grads.discriminator.iter() {
        probe(&total, name, g);
    }
    for (name, g) in disc_grads.iter() {
        probe(&disc, name, g);
    }
    check(worst.0 < 1e-4, || {
        format!("max relative error {:.3e} at {} (limit 1e-4)", worst.0, worst.1)
    })?;
    Ok(format!(
        "{entries} entries, max relative error {:.3e} at {}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------------------
// 2. loss oracles

fn criterion_2() -> Outcome {
    let zero = Tensor2::zeros(1, 1);
    let kl0 = loss_kl(&zero, &zero).map_err(|e| e.to_string())?;
    check(kl0 == 0.0, || format!("loss_kl(0,0) = {kl0}"))?;
    let kl1 = loss_kl(&Tensor2::scalar(1.0), &zero).map_err(|e| e.to_string())?;
    check((kl1 - 0.5).abs() <= 1e-12, || format!("loss_kl(1,0) = {kl1}"))?;

    // Path 0-1-2-3 plus isolated node 4.
    let g = SparseGraph::from_rows(vec![
        vec![(1, 1.0)],
        vec![(0, 1.0), (2, 1.0)],
        vec![(1, 1.0), (3, 1.0)],
        vec![(2, 1.0)],
        vec![],
    ])
    .unwrap();
    let z = Tensor2::from_vec(
        5,
        2,
        vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, 0.2, -0.6, -0.3],
    )
    .unwrap();
    let pred = decode(&z, 20_000).map_err(|e| e.to_string())?;
    let got = loss_reconstruction(&pred, &g.with_self_loops(), ReconMode::Bce).map_err(|e| e.to_string())?;

    let n = 5usize;
    let edges: HashSet<(usize, usize)> = [(0, 1), (1, 2), (2, 3)]
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .chain((0..n).map(|i| (i, i)))
        .collect();
    let total = (n * n) as f64;
    let pos = edges.len() as f64;
    let pos_weight = (total - pos) / pos;
    let norm = total / (2.0 * (total - pos));
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..2).map(|c| z.get(i, c) * z.get(j, c)).sum();
            let p = 1.0 / (1.0 + (-s).exp());
            sum += if edges.contains(&(i, j)) {
                -pos_weight * p.ln()
            } else {
                -(1.0 - p).ln()
            };
        }
    }
    let want = norm * sum / total;
    check((got - want).abs() <= 1e-12, || {
        format!("reconstruction BCE {got} vs oracle {want}")
    })?;

    let zeros = vec![0.0; 7];
    let d = loss_adversarial(&zeros, &zeros, AdversarialRole::Discriminator);
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    check((d - two_ln2).abs() <= 1e-12, || format!("disc loss at zero logits {d}"))?;

    // Same value through the model with a discriminator forced to zero logits.
    let mut model = Model::init(&ModelConfig::new(3)).map_err(|e| e.to_string())?;
    let (dl, dh) = (model.config().d_latent, model.config().disc_hidden);
    model.set_param("disc.fc2.weight", Tensor2::zeros(dh, 1)).unwrap();
    model.set_param("disc.fc2.bias", Tensor2::zeros(1, 1)).unwrap();
    let mut rng = RngStream::new(1, 0);
    let real = Tensor2::from_fn(6, dl, |_, _| rng.normal());
    let fake = Tensor2::from_fn(6, dl, |_, _| rng.normal());
    let md = model
        .discriminator_loss(&real, &fake, &mut rng)
        .map_err(|e| e.to_string())?;
    check((md - two_ln2).abs() <= 1e-12, || format!("model disc loss {md}"))?;

    Ok(format!(
        "kl(0,0)={kl0} kl(1,0)={kl1} bce |diff|={:.1e} disc={d:.15}",
        (got - want).abs()
    ))
}

// ---------------------------------------------------------------------------
// 3. metric oracles

/// Average precision straight from its definition, recounting the
/// relevant prefix at every rank.
fn ap_oracle(labels: &[u32], q: u32, k: usize) -> f64 {
    let mut sum = 0.0;
    let mut relevant = 0;
    for r in 1..=k {
        if labels[r - 1] == q {
            let prefix = labels[..r].iter().filter(|&&l| l == q).count();
            sum += prefix as f64 / r as f64;
            relevant += 1;
        }
    }
    if relevant == 0 {
        0.0
    } else {
        sum / relevant as f64
    }
}

fn mv_oracle(labels: &[u32], q: u32, k: usize) -> bool {
    let count = |l: u32| labels[..k].iter().filter(|&&x| x == l).count();
    let best = labels[..k].iter().map(|&l| count(l)).max().unwrap_or(0);
    count(q) == best
}

fn criterion_3() -> Outcome {
    let ap = average_precision_at_k(&[1, 0, 1, 0, 0], &1, 5).map_err(|e| e.to_string())?;
    check((ap - 5.0 / 6.0).abs() <= 1e-12, || format!("AP [1,0,1,0,0] = {ap}"))?;
    let all = average_precision_at_k(&[3, 3, 3, 3, 3], &3, 5).unwrap();
    check(all == 1.0, || format!("all relevant AP = {all}"))?;
    let none = average_precision_at_k(&[1, 2, 1, 2, 1], &3, 5).unwrap();
    check(none == 0.0, || format!("none relevant AP = {none}"))?;
    check(majority_vote_hit(&['A', 'A', 'B', 'B'], &'A', 4).unwrap(), || {
        "[A,A,B,B] vs A is not a hit".into()
    })?;

    let mut rng = RngStream::new(3, 0);
    for case in 0..1000 {
        let len = 1 + rng.below(12);
        let classes = 1 + rng.below(4) as u32;
        let labels: Vec<u32> = (0..len).map(|_| rng.below(classes as usize) as u32).collect();
        let q = rng.below(classes as usize + 1) as u32;
        let k = 1 + rng.below(len);
        let got_ap = average_precision_at_k(&labels, &q, k).unwrap();
        let want_ap = ap_oracle(&labels, q, k);
        check(got_ap == want_ap, || {
            format!("case {case}: AP {got_ap} vs oracle {want_ap} for {labels:?} q={q} k={k}")
        })?;
        let got_mv = majority_vote_hit(&labels, &q, k).unwrap();
        check(got_mv == mv_oracle(&labels, q, k), || {
            format!("case {case}: mMV mismatch for {labels:?} q={q} k={k}")
        })?;
    }
    Ok("examples exact, 1000 random patterns agree".into())
}

// ---------------------------------------------------------------------------
// 4. graph construction

fn brute_force(ds: &FeatureDataset, k: usize) -> Vec<Vec<usize>> {
    let n = ds.n();
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s = ds
                        .row(i)
                        .iter()
                        .zip(ds.row(j))
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum::<f64>();
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nn: Vec<usize> = d[..k].iter().map(|x| x.1).collect();
            nn.sort_unstable();
            nn
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let ds = random_points(500, 32, 4);
    for k in [5, 15, 25] {
        let g = knn_graph(&ds, k, KnnMethod::Exact, 0).map_err(|e| e.to_string())?;
        let want = brute_force(&ds, k);
        for (i, w) in want.iter().enumerate() {
            check(g.neighbors(i) == w.as_slice(), || {
                format!("k={k} node {i}: {:?} vs brute force {w:?}", g.neighbors(i))
            })?;
        }
    }

    let big = random_points(5000, 32, 5);
    let k = 25;
    let params = KdTreeParams {
        trees: 8,
        leaf_size: 8,
        checks: 2000,
    };
    let approx = knn_graph(&big, k, KnnMethod::KdTree(params), 0).map_err(|e| e.to_string())?;
    let exact = knn_graph(&big, k, KnnMethod::Exact, 0).map_err(|e| e.to_string())?;
    let mut found = 0;
    for i in 0..big.n() {
        let truth: HashSet<usize> = exact.neighbors(i).iter().copied().collect();
        found += approx.neighbors(i).iter().filter(|j| truth.contains(j)).count();
    }
    let recall = found as f64 / (big.n() * k) as f64;
    check(recall >= 0.90, || format!("kd-forest recall@{k} = {recall:.4} < 0.90"))?;
    Ok(format!(
        "exact matches brute force for k=5,15,25; kd-forest recall@25 = {recall:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 5-7. end-to-end pipeline

struct Run {
    dir: PathBuf,
    train_stdout: String,
}

impl Run {
    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// synth, build-graph, train, embed and evaluate under one seed.
fn pipeline(root: &Path, name: &str, seed: u64, variant: &str) -> Result<Run, String> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let f = |n: &str| dir.join(n);
    let seed = seed.to_string();
    let s = seed.as_str();
    grf_ok(&[
        "--seed", s, "synth", "--classes", "4", "--per-class", "100", "--dim", "64", "--sep",
        "10", "--sigma", "1", "--out", p(&f("data.bin")),
    ])?;
    grf_ok(&[
        "--seed", s, "build-graph", "--dataset", p(&f("data.bin")), "--preset", "bach", "--out",
        p(&f("graph.bin")),
    ])?;
    let train_stdout = grf_ok(&[
        "--seed", s, "train", "--dataset", p(&f("data.bin")), "--graph", p(&f("graph.bin")),
        "--variant", variant, "--epochs", "250", "--out", p(&f("model.ckpt")), "--quiet",
    ])?;
    grf_ok(&[
        "--seed", s, "embed", "--checkpoint", p(&f("model.ckpt")), "--dataset",
        p(&f("data.bin")), "--graph", p(&f("graph.bin")), "--out", p(&f("index.bin")),
    ])?;
    grf_ok(&[
        "--seed", s, "evaluate", "--index", p(&f("index.bin")), "--checkpoint",
        p(&f("model.ckpt")), "--dataset", p(&f("data.bin")), "--graph", p(&f("graph.bin")),
        "--k", "5", "--report", p(&f("report.json")), "--csv", p(&f("report.csv")),
    ])?;
    Ok(Run { dir, train_stdout })
}

fn report(run: &Run) -> Result<EvalReport, String> {
    let text = std::fs::read_to_string(run.file("report.json")).map_err(|e| e.to_string())?;
    EvalReport::from_json(&text).map_err(|e| e.to_string())
}

/// `(epoch, total)` rows of the loss history, checking every value is finite.
fn loss_history(run: &Run) -> Result<Vec<(usize, f64)>, String> {
    let text = std::fs::read_to_string(run.file("model.ckpt.losses.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    check(lines.next() == Some("epoch,recon,kl,gen,disc,total"), || {
        "bad loss header".into()
    })?;
    lines
        .map(|l| {
            let cols: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            if cols.iter().any(|v| !v.is_finite()) {
                return Err(format!("non-finite loss row `{l}`"));
            }
            Ok((cols[0] as usize, cols[5]))
        })
        .collect()
}

fn criterion_5(ours: &Run, gae: &Run) -> Outcome {
    let a = report(ours)?;
    let g = report(gae)?;
    check(a.queries_evaluated == 80 && a.queries_skipped == 0, || {
        format!("{} queries evaluated, {} skipped", a.queries_evaluated, a.queries_skipped)
    })?;
    check(a.map_k >= 0.95, || format!("mAP(5) = {:.4} < 0.95", a.map_k))?;
    check(a.mmv_k >= 0.90, || format!("mMV(5) = {:.4} < 0.90", a.mmv_k))?;
    check(a.map_k >= g.map_k, || {
        format!("A-ARVGAE mAP(5) {:.4} < GAE mAP(5) {:.4}", a.map_k, g.map_k)
    })?;
    Ok(format!(
        "A-ARVGAE mAP(5)={:.4} mMV(5)={:.4}; GAE mAP(5)={:.4}",
        a.map_k, a.mmv_k, g.map_k
    ))
}

fn criterion_6(runs: &[(u64, Run)]) -> Outcome {
    let mut parts = Vec::new();
    for (seed, run) in runs {
        let h = loss_history(run)?;
        check(h.len() == 250, || format!("seed {seed}: {} epochs recorded", h.len()))?;
        let (first, last) = (h[0].1, h[249].1);
        check(last < first, || {
            format!("seed {seed}: loss {first:.4} at epoch 1 but {last:.4} at epoch 250")
        })?;
        check(run.train_stdout.contains("loss"), || format!("seed {seed}: no summary"))?;
        parts.push(format!("s{seed} {first:.3}->{last:.3}"));
    }
    Ok(parts.join(", "))
}

fn criterion_7(a: &Run, b: &Run) -> Outcome {
    let files = [
        "data.bin",
        "graph.bin",
        "model.ckpt",
        "model.ckpt.losses.csv",
        "index.bin",
        "report.json",
        "report.csv",
    ];
    for f in files {
        let (ha, hb) = (sha256(&a.file(f)), sha256(&b.file(f)));
        check(ha == hb, || format!("{f} differs: {ha} vs {hb}"))?;
    }
    Ok(format!(
        "{} artifacts hash-identical (checkpoint {})",
        files.len(),
        &sha256(&a.file("model.ckpt"))[..16]
    ))
}

// ---------------------------------------------------------------------------
// 8. formats

fn corrupt_magic(src: &Path, dst: &Path) {
    let mut bytes = std::fs::read(src).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(dst, bytes).unwrap();
}

fn criterion_8(run: &Run, scratch: &Path) -> Outcome {
    let same_bytes = |a: &Path, b: &Path| std::fs::read(a).unwrap() == std::fs::read(b).unwrap();

    let ds = load_binary(&run.file("data.bin")).map_err(|e| e.to_string())?;
    save_binary(&ds, &scratch.join("data2.bin")).map_err(|e| e.to_string())?;
    check(same_bytes(&run.file("data.bin"), &scratch.join("data2.bin")), || {
        "dataset bytes changed on round trip".into()
    })?;
    check(load_binary(&scratch.join("data2.bin")).unwrap() == ds, || {
        "dataset fields changed on round trip".into()
    })?;

    let g = load_graph(&run.file("graph.bin")).map_err(|e| e.to_string())?;
    save_graph(&g, &scratch.join("graph2.bin")).map_err(|e| e.to_string())?;
    check(same_bytes(&run.file("graph.bin"), &scratch.join("graph2.bin")), || {
        "graph bytes changed on round trip".into()
    })?;

    let ck = Checkpoint::load(&run.file("model.ckpt")).map_err(|e| e.to_string())?;
    let raw = std::fs::read(run.file("model.ckpt")).unwrap();
    check(ck.to_bytes() == raw, || "checkpoint bytes changed on round trip".into())?;
    check(Checkpoint::from_bytes(&raw).unwrap() == ck, || {
        "checkpoint fields changed on round trip".into()
    })?;

    let idx = RetrievalIndex::load(&run.file("index.bin")).map_err(|e| e.to_string())?;
    let raw = std::fs::read(run.file("index.bin")).unwrap();
    check(idx.to_bytes() == raw, || "index bytes changed on round trip".into())?;
    check(idx.subset() == SplitFilter::Train, || "index subset".into())?;

    // Corrupted magic in each format must exit with the data-error code 3.
    let bad = |name: &str| -> String {
        let dst = scratch.join(format!("bad-{name}"));
        corrupt_magic(&run.file(name), &dst);
        p(&dst).to_string()
    };
    let good = |name: &str| p(&run.file(name)).to_string();
    let out = p(&scratch.join("unused")).to_string();
    let cases: [(&str, Vec<String>); 4] = [
        ("dataset", vec!["build-graph".into(), "--dataset".into(), bad("data.bin"), "--out".into(), out.clone()]),
        ("graph", vec![
            "embed".into(), "--checkpoint".into(), good("model.ckpt"), "--dataset".into(), good("data.bin"),
            "--graph".into(), bad("graph.bin"), "--out".into(), out.clone(),
        ]),
        ("checkpoint", vec![
            "embed".into(), "--checkpoint".into(), bad("model.ckpt"), "--dataset".into(), good("data.bin"),
            "--graph".into(), good("graph.bin"), "--out".into(), out.clone(),
        ]),
        ("index", vec![
            "evaluate".into(), "--index".into(), bad("index.bin"), "--checkpoint".into(), good("model.ckpt"),
            "--dataset".into(), good("data.bin"), "--graph".into(), good("graph.bin"), "--report".into(), out,
        ]),
    ];
    for (what, args) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = grf(&args);
        check(o.status.code() == Some(3), || {
            format!("corrupt {what}: exit {:?}, expected 3", o.status.code())
        })?;
        let err = String::from_utf8_lossy(&o.stderr);
        check(err.contains("magic"), || format!("corrupt {what}: stderr `{}`", err.trim()))?;
    }
    Ok("dataset, graph, checkpoint, index bit-exact; corrupt magic exits 3".into())
}

// ---------------------------------------------------------------------------
// 9. ablation wiring

fn criterion_9(scratch: &Path, data: &Path, graph: &Path) -> Outcome {
    let mut rng = RngStream::new(9, 0);
    let n = 12;
    let g = random_graph(n, &mut rng);
    let x = Tensor2::from_fn(n, 6, |_, _| rng.normal());
    let artifacts = GraphArtifacts::new(x, g).map_err(|e| e.to_string())?;
    let mut config = ModelConfig::new(6).with_variant(Variant::Gae);
    config.d_hidden = 5;
    config.d_latent = 3;
    let model = Model::init(&config).map_err(|e| e.to_string())?;
    let t = model
        .term_gradients(&artifacts, &mut RngStream::new(4, 0))
        .map_err(|e| e.to_string())?;
    for (name, gr) in t.kl.iter().chain(t.adversarial.iter()) {
        check(gr.data().iter().all(|&v| v == 0.0), || {
            format!("GAE has a non-zero KL/adversarial gradient in {name}")
        })?;
    }
    check(t.total == t.recon, || "GAE total gradient is not the reconstruction gradient".into())?;
    let recon_norm: f64 = t.recon.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum();
    check(recon_norm > 0.0, || "reconstruction gradient vanished".into())?;

    // The CLI flag reaches the trainer: KL and generator columns stay zero.
    let ck = scratch.join("gae.ckpt");
    grf_ok(&[
        "train", "--dataset", p(data), "--graph", p(graph), "--variant", "gae", "--epochs", "3",
        "--out", p(&ck), "--quiet",
    ])?;
    let loaded = Checkpoint::load(&ck).map_err(|e| e.to_string())?;
    check(loaded.config().variant() == Some(Variant::Gae), || "checkpoint variant".into())?;
    check(loaded.history.iter().all(|h| h.kl == 0.0 && h.gen == 0.0 && h.disc == 0.0), || {
        "GAE run recorded KL, generator or discriminator losses".into()
    })?;

    let inv = |v: Variant| -> HashMap<String, (usize, usize)> {
        let c = ModelConfig::new(64).with_variant(v);
        Model::init(&c).unwrap().inventory().into_iter().collect()
    };
    let ours = inv(Variant::AArvgae);
    let arvga = inv(Variant::Arvga);
    let mut only_ours: Vec<&String> = ours.keys().filter(|k| !arvga.contains_key(*k)).collect();
    let mut only_arvga: Vec<&String> = arvga.keys().filter(|k| !ours.contains_key(*k)).collect();
    only_ours.sort();
    only_arvga.sort();
    check(only_ours.iter().all(|k| k.starts_with("gat.")), || {
        format!("a-arvgae-only tensors outside the attention block: {only_ours:?}")
    })?;
    check(only_arvga == ["gcn_hidden.weight"], || {
        format!("arvga-only tensors: {only_arvga:?}")
    })?;
    for (k, shape) in &ours {
        if let Some(other) = arvga.get(k) {
            check(shape == other, || format!("{k}: shape {shape:?} vs {other:?}"))?;
        }
    }
    Ok(format!(
        "GAE KL/adversarial gradients zero; inventory diff = {} gat.* vs gcn_hidden.weight",
        only_ours.len()
    ))
}

// ---------------------------------------------------------------------------

fn run_timed(id: usize, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
        (o, _) => o,
    };
    let ok = outcome.is_ok();
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id}: {tag} ({detail}) [{took:.1?}]");
    ok
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let mut ok = true;

    ok &= run_timed(1, Some(Duration::from_secs(60)), criterion_1);
    ok &= run_timed(2, None, criterion_2);
    ok &= run_timed(3, None, criterion_3);
    ok &= run_timed(4, Some(Duration::from_secs(30)), criterion_4);

    // Every training run is its own process; run them side by side.
    let start = Instant::now();
    let jobs: Vec<(String, u64, &str)> = [("ours-a", 42, "a-arvgae"), ("ours-b", 42, "a-arvgae"), ("gae", 42, "gae")]
        .into_iter()
        .map(|(n, s, v)| (n.to_string(), s, v))
        .chain((1..=5).map(|s| (format!("seed{s}"), s, "a-arvgae")))
        .collect();
    let runs: Vec<(String, u64, Result<Run, String>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(name, seed, variant)| {
                let handle = scope.spawn(move || pipeline(root, name, *seed, variant));
                (name.clone(), *seed, handle)
            })
            .collect();
        handles
            .into_iter()
            .map(|(n, s, h)| (n, s, h.join().unwrap_or_else(|_| Err("pipeline panicked".into()))))
            .collect()
    });
    println!("(pipeline runs finished in {:.1?})", start.elapsed());
    let mut by_name: HashMap<String, (u64, Result<Run, String>)> =
        runs.into_iter().map(|(n, s, r)| (n, (s, r))).collect();
    let mut take = |n: &str| by_name.remove(n).unwrap();

    let (_, ours_a) = take("ours-a");
    let (_, ours_b) = take("ours-b");
    let (_, gae) = take("gae");
    let seeds: Vec<(u64, Result<Run, String>)> = (1..=5).map(|s| take(&format!("seed{s}"))).collect();

    ok &= run_timed(5, None, || match (&ours_a, &gae) {
        (Ok(a), Ok(g)) => criterion_5(a, g),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });
    ok &= run_timed(6, None, || {
        let mut good = Vec::new();
        for (s, r) in seeds {
            good.push((s, r?));
        }
        criterion_6(&good)
    });
    ok &= run_timed(7, None, || match (&ours_a, &ours_b) {
        (Ok(a), Ok(b)) => criterion_7(a, b),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });
    let scratch = root.join("scratch");
    std::fs::create_dir_all(&scratch).unwrap();
    ok &= run_timed(8, None, || match &ours_a {
        Ok(a) => criterion_8(a, &scratch),
        Err(e) => Err(e.clone()),
    });
    ok &= run_timed(9, None, || match &ours_a {
        Ok(a) => criterion_9(&scratch, &a.file("data.bin"), &a.file("graph.bin")),
        Err(e) => Err(e.clone()),
    });

    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
