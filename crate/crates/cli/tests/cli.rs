use std::path::Path;
use std::process::{Command, Output};

fn grf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grf"))
        .args(args)
        .output()
        .expect("spawn grf")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synth → graph → train → embed pipeline in `dir`.
fn small_pipeline(dir: &Path) {
    let f = |n: &str| dir.join(n);
    let o = grf(&[
        "--seed", "3", "synth", "--classes", "3", "--per-class", "20", "--dim", "8", "--out",
        s(&f("d.bin")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("n=60 d=8 C=3"));
    let o = grf(&["build-graph", "--dataset", s(&f("d.bin")), "--k", "5", "--out", s(&f("g.bin"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = grf(&[
        "--seed", "3", "train", "--dataset", s(&f("d.bin")), "--graph", s(&f("g.bin")), "--epochs",
        "5", "--d-hidden", "8", "--d-latent", "4", "--out", s(&f("m.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch    5/5"));
    let o = grf(&[
        "embed", "--checkpoint", s(&f("m.ckpt")), "--dataset", s(&f("d.bin")), "--graph",
        s(&f("g.bin")), "--out", s(&f("i.bin")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("entries=42"));
}

#[test]
fn help_lists_every_subcommand() {
    let o = grf(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["ingest", "synth", "build-graph", "train", "embed", "query", "evaluate"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    for flag in ["--seed", "--config", "--threads"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(grf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(grf(&["train"]).status.code(), Some(2));
    let o = grf(&["build-graph", "--dataset", "/nonexistent/d.bin", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/d.bin"));
}

#[test]
fn bad_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.bin");
    assert!(grf(&["synth", "--per-class", "10", "--dim", "4", "--out", s(&d)]).status.success());
    let o = grf(&["build-graph", "--dataset", s(&d), "--k", "50", "--out", s(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = grf(&["build-graph", "--dataset", s(&d), "--method", "hnsw", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = grf(&["build-graph", "--dataset", s(&d), "--preset", "camelyon", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"GRFX0000").unwrap();
    let o = grf(&["build-graph", "--dataset", s(&bad), "--out", s(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: "));

    let csv = dir.path().join("ragged.csv");
    std::fs::write(&csv, "id,label,split,f0,f1\na,0,train,1,2\nb,1,test,3\n").unwrap();
    let o = grf(&["ingest", "--csv", s(&csv), "--out", s(&dir.path().join("o.bin"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains('3'), "{}", stderr(&o));
}

#[test]
fn ingest_with_split_then_graph() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let mut text = String::from("id,label,split,f0,f1\n");
    for i in 0..30 {
        let c = i % 2;
        text.push_str(&format!("n{i},{c},,{}.5,{}\n", c * 10 + i % 3, i % 5));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("x.bin");
    let o = grf(&["ingest", "--csv", s(&csv), "--split", "0.7,0.1,0.2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("train=22 val=2 test=6"), "{}", stdout(&o));
    // Datasets may also be read straight from CSV.
    let o = grf(&["build-graph", "--dataset", s(&csv), "--k", "3", "--out", s(&dir.path().join("g"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.bin");
    assert!(grf(&["synth", "--per-class", "20", "--dim", "4", "--out", s(&d)]).status.success());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# graph settings\nk_graph = 7\n").unwrap();
    let g = dir.path().join("g.bin");
    let o = grf(&["--config", s(&cfg), "build-graph", "--dataset", s(&d), "--out", s(&g)]);
    assert!(stdout(&o).contains("k=7"), "{}", stdout(&o));
    let o = grf(&["--config", s(&cfg), "build-graph", "--dataset", s(&d), "--k", "4", "--out", s(&g)]);
    assert!(stdout(&o).contains("k=4"));
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = grf(&["--config", s(&cfg), "build-graph", "--dataset", s(&d), "--out", s(&g)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn query_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let f = |n: &str| dir.path().join(n);

    let mut q = String::from("query_id,f0,f1,f2,f3,f4,f5,f6,f7\n");
    q.push_str("near0,10,0,0,0,0,0,0,0\nnear1,0,10,0,0,0,0,0,0\n");
    std::fs::write(f("q.csv"), q).unwrap();
    let common = |cmd: &str| {
        vec![
            cmd.to_string(), "--index".into(), s(&f("i.bin")).into(), "--checkpoint".into(),
            s(&f("m.ckpt")).into(), "--dataset".into(), s(&f("d.bin")).into(), "--graph".into(),
            s(&f("g.bin")).into(),
        ]
    };
    let mut args = common("query");
    args.extend(["--queries".into(), s(&f("q.csv")).into(), "--k".into(), "3".into()]);
    let o = grf(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "query_id,rank,id,label,distance");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("near0,1,"));

    let mut args = common("evaluate");
    args.extend([
        "--report".into(), s(&f("r.json")).into(), "--csv".into(), s(&f("r.csv")).into(),
        "--relevance".into(), "corpus".into(),
    ]);
    let o = grf(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("map(5)="));
    let json = std::fs::read_to_string(f("r.json")).unwrap();
    assert!(json.contains("\"scope\": \"corpus\""));
    assert!(std::fs::read_to_string(f("r.csv")).unwrap().starts_with("metric,k,value\n"));

    // Wrong query width is a data error.
    std::fs::write(f("q2.csv"), "query_id,f0\nq,1\n").unwrap();
    let mut args = common("query");
    args.extend(["--queries".into(), s(&f("q2.csv")).into()]);
    assert_eq!(grf(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(3));
}

#[test]
fn index_from_another_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let f = |n: &str| dir.path().join(n);
    let o = grf(&[
        "--seed", "4", "train", "--dataset", s(&f("d.bin")), "--graph", s(&f("g.bin")), "--epochs",
        "1", "--d-hidden", "8", "--d-latent", "4", "--quiet", "--out", s(&f("other.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = grf(&[
        "evaluate", "--index", s(&f("i.bin")), "--checkpoint", s(&f("other.ckpt")), "--dataset",
        s(&f("d.bin")), "--graph", s(&f("g.bin")), "--report", s(&f("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("different checkpoint"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_pipeline(a.path());
    small_pipeline(b.path());
    for name in ["d.bin", "g.bin", "m.ckpt", "m.ckpt.losses.csv", "i.bin"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.bin");
    assert!(grf(&["synth", "--per-class", "50", "--dim", "6", "--out", s(&d)]).status.success());
    let g1 = dir.path().join("g1.bin");
    let g4 = dir.path().join("g4.bin");
    for (t, g) in [("1", &g1), ("4", &g4)] {
        let o = grf(&["--threads", t, "build-graph", "--dataset", s(&d), "--method",
            "kdtree:trees=2,checks=40", "--out", s(g)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(g1).unwrap(), std::fs::read(g4).unwrap());
    assert_eq!(grf(&["--threads", "0", "synth", "--out", s(&d)]).status.code(), Some(2));
}
