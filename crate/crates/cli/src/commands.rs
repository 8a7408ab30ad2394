use std::path::{Path, PathBuf};

use grf_core::dataset::{
    assign_splits, load_binary, load_csv, save_binary, synth_clusters, FeatureDataset, SynthParams,
};
use grf_core::graph::{knn_graph, load_graph, save_graph, SparseGraph};
use grf_core::metrics::evaluate;
use grf_core::model::{train_with, Checkpoint, EpochLosses, GraphArtifacts};
use grf_core::retrieval::{build_index, hits_to_csv, RetrievalIndex, Retriever};
use grf_core::{write_atomic, Error, Result};

use crate::config::RunConfig;
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    if let Some(config) = &cli.config {
        require(&[config])?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Parameter("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Ingest { csv, out, split } => {
            require(&[&csv])?;
            let mut ds = load_csv(&csv)?;
            if let Some(ratios) = split {
                ds = assign_splits(&ds, ratios, cfg.seed)?;
            }
            save_binary(&ds, &out)?;
            println!("{}", ds.summary());
        }
        Command::Synth {
            classes,
            per_class,
            dim,
            sep,
            sigma,
            split,
            no_split,
            out,
        } => {
            let mut ds = synth_clusters(&SynthParams {
                n_per_class: per_class,
                classes,
                d: dim,
                separation: sep,
                noise_sigma: sigma,
                seed: cfg.seed,
            })?;
            if !no_split {
                ds = assign_splits(&ds, split, cfg.seed)?;
            }
            save_binary(&ds, &out)?;
            println!("{}", ds.summary());
        }
        Command::BuildGraph {
            dataset,
            k,
            preset,
            method,
            out,
            tsv,
        } => {
            require(&[&dataset])?;
            if let Some(p) = preset {
                cfg.set("preset", &p)?;
            }
            if let Some(k) = k {
                cfg.set("k_graph", &k.to_string())?;
            }
            if let Some(m) = method {
                cfg.set("ann", &m)?;
            }
            let ds = load_dataset(&dataset)?;
            let g = knn_graph(&ds, cfg.k_graph, cfg.ann, cfg.seed)?.symmetrize();
            save_graph(&g, &out)?;
            if let Some(tsv) = tsv {
                g.save_tsv(&tsv)?;
            }
            let (min, max, mean) = g.degree_stats();
            println!(
                "nodes={} k={} edges={} degree min={min} max={max} mean={mean:.3}",
                g.n(),
                cfg.k_graph,
                g.nnz() / 2
            );
        }
        Command::Train {
            dataset,
            graph,
            out,
            model,
            quiet,
        } => {
            require(&[&dataset, &graph])?;
            for (k, v) in model.pairs() {
                cfg.set(k, &v)?;
            }
            let ds = load_dataset(&dataset)?;
            let artifacts = artifacts(&ds, load_graph(&graph)?)?;
            let mut config = cfg.model.clone();
            config.d_in = ds.d();
            let total = config.epochs;
            let ck = train_with(&artifacts, &config, |e| {
                if !quiet && (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == total) {
                    eprintln!(
                        "epoch {:>4}/{total} total={:.6} recon={:.6} kl={:.6} gen={:.6} disc={:.6}",
                        e.epoch, e.total, e.recon, e.kl, e.gen, e.disc
                    );
                }
            })?;
            write_atomic(&losses_path(&out), losses_csv(&ck.history).as_bytes())?;
            ck.save(&out)?;
            match (ck.history.first(), ck.history.last()) {
                (Some(a), Some(b)) => println!(
                    "variant={} epochs={} loss {:.6} -> {:.6}",
                    variant_name(&ck),
                    ck.epoch,
                    a.total,
                    b.total
                ),
                _ => println!("variant={} epochs=0", variant_name(&ck)),
            }
        }
        Command::Embed {
            checkpoint,
            dataset,
            graph,
            subset,
            out,
        } => {
            require(&[&checkpoint, &dataset, &graph])?;
            if let Some(s) = subset {
                cfg.set("subset", &s)?;
            }
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            let artifacts = artifacts(&ds, load_graph(&graph)?)?;
            let index = build_index(&ck, &ds, &artifacts, cfg.subset)?;
            index.save(&out)?;
            println!(
                "entries={} d_latent={} subset={}",
                index.len(),
                index.d_latent(),
                index.subset()
            );
        }
        Command::Query {
            index,
            checkpoint,
            dataset,
            graph,
            queries,
            k,
            k_attach,
            out,
        } => {
            require(&[&index, &checkpoint, &dataset, &graph, &queries])?;
            if let Some(k) = k {
                cfg.set("k_retrieval", &k.to_string())?;
            }
            if let Some(k) = k_attach {
                cfg.set("k_attach", &k.to_string())?;
            }
            let (index, ck, ds, artifacts) = load_stack(&index, &checkpoint, &dataset, &graph)?;
            let retriever = retriever(&index, &ck, &artifacts, &cfg);
            let (ids, vectors) = load_queries(&queries, ds.d())?;
            let mut results = Vec::with_capacity(ids.len());
            let mut failed = 0;
            for (id, r) in ids.into_iter().zip(retriever.query_batch(&vectors, cfg.k_retrieval)) {
                match r {
                    Ok(hits) => results.push((id, hits)),
                    Err(e) => {
                        eprintln!("query {id}: {e}");
                        failed += 1;
                    }
                }
            }
            let csv = hits_to_csv(&results, index.class_names());
            match out {
                Some(path) => write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            if failed > 0 {
                return Err(Error::Parameter(format!("{failed} queries failed")));
            }
        }
        Command::Evaluate {
            index,
            checkpoint,
            dataset,
            graph,
            k,
            k_attach,
            relevance,
            report,
            csv,
        } => {
            require(&[&index, &checkpoint, &dataset, &graph])?;
            if let Some(k) = k {
                cfg.set("k_retrieval", &k.to_string())?;
            }
            if let Some(k) = k_attach {
                cfg.set("k_attach", &k.to_string())?;
            }
            if let Some(r) = relevance {
                cfg.set("relevance", &r)?;
            }
            let (index, ck, ds, artifacts) = load_stack(&index, &checkpoint, &dataset, &graph)?;
            let retriever = retriever(&index, &ck, &artifacts, &cfg);
            let rep = evaluate(&retriever, &ds, cfg.k_retrieval, cfg.relevance)?;
            rep.save_json(&report)?;
            if let Some(csv) = csv {
                rep.save_csv(&csv)?;
            }
            println!(
                "map({k})={:.6} mmv({k})={:.6} queries={} skipped={}",
                rep.map_k,
                rep.mmv_k,
                rep.queries_evaluated,
                rep.queries_skipped,
                k = rep.k
            );
        }
    }
    Ok(())
}

/// Missing inputs are caller mistakes, reported before any work starts.
fn require(paths: &[&PathBuf]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Error::Parameter(format!(
            "input file `{}` does not exist",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn load_dataset(path: &Path) -> Result<FeatureDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_csv(path),
        _ => load_binary(path),
    }
}

fn artifacts(ds: &FeatureDataset, g: SparseGraph) -> Result<GraphArtifacts> {
    if g.n() != ds.n() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, dataset has {} items",
            g.n(),
            ds.n()
        )));
    }
    GraphArtifacts::from_dataset(ds, g)
}

fn load_stack(
    index: &Path,
    checkpoint: &Path,
    dataset: &Path,
    graph: &Path,
) -> Result<(RetrievalIndex, Checkpoint, FeatureDataset, GraphArtifacts)> {
    let index = RetrievalIndex::load(index)?;
    let ck = Checkpoint::load(checkpoint)?;
    if index.checkpoint_hash() != ck.digest() {
        return Err(Error::Format(
            "index was built from a different checkpoint".into(),
        ));
    }
    let ds = load_dataset(dataset)?;
    let artifacts = artifacts(&ds, load_graph(graph)?)?;
    Ok((index, ck, ds, artifacts))
}

fn retriever<'a>(
    index: &'a RetrievalIndex,
    ck: &'a Checkpoint,
    artifacts: &'a GraphArtifacts,
    cfg: &RunConfig,
) -> Retriever<'a> {
    let min_degree = artifacts.graph().degree_stats().0.max(1);
    Retriever {
        index,
        checkpoint: ck,
        graph: artifacts,
        k_attach: cfg.k_attach.unwrap_or(min_degree),
    }
}

/// Reads `query_id,f0..f{d-1}` rows.
fn load_queries(path: &Path, d: usize) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if rec.len() != d + 1 {
            return Err(Error::Dimension(format!(
                "row {row}: expected {} columns (query_id + {d} features), found {}",
                d + 1,
                rec.len()
            )));
        }
        ids.push(rec[0].to_string());
        let v = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("invalid number `{f}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(v);
    }
    Ok((ids, rows))
}

fn losses_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".losses.csv");
    PathBuf::from(s)
}

fn losses_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,recon,kl,gen,disc,total\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch, h.recon, h.kl, h.gen, h.disc, h.total
        ));
    }
    out
}

fn variant_name(ck: &Checkpoint) -> String {
    ck.config()
        .variant()
        .map_or_else(|| "custom".to_string(), |v| v.to_string())
}
