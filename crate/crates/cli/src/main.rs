//! `grf`: ingest features, build the k-NN graph, train the graph
//! autoencoder, embed a retrieval database, query it and score it.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grf_core::dataset::SplitRatios;

#[derive(Parser, Debug)]
#[command(name = "grf", version, about = "Latent-space retrieval over k-NN similarity graphs")]
struct Cli {
    /// Seed for every random stream (splits, ANN forest, init, training) [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value settings file; command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for graph construction and batch queries [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a feature CSV (`id,label,split,f0..`) to the binary dataset format
    Ingest {
        #[arg(long, value_name = "FILE")]
        csv: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Assign stratified train,val,test splits with these ratios,
        /// replacing any splits in the CSV
        #[arg(long, value_name = "TRAIN,VAL,TEST")]
        split: Option<SplitRatios>,
    },
    /// Generate isotropic Gaussian clusters with stratified splits
    Synth {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Distance of each class center from the origin along its own axis
        #[arg(long, default_value_t = 10.0)]
        sep: f64,
        /// Per-coordinate noise standard deviation
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value = "0.7,0.1,0.2", value_name = "TRAIN,VAL,TEST")]
        split: SplitRatios,
        /// Leave every item unassigned
        #[arg(long)]
        no_split: bool,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Build and symmetrize the k-nearest-neighbor graph over all items
    BuildGraph {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Neighbors per node [default: 15; preset breakhis=25, bach=15]
        #[arg(long)]
        k: Option<usize>,
        /// Dataset preset selecting k (breakhis or bach)
        #[arg(long)]
        preset: Option<String>,
        /// auto, exact, or kdtree[:trees=4,leaf=8,checks=N] [default: auto]
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write the edge list as TSV
        #[arg(long, value_name = "FILE")]
        tsv: Option<PathBuf>,
    },
    /// Train a model; writes the checkpoint and `<out>.losses.csv`
    Train {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Suppress per-epoch progress on stderr
        #[arg(long)]
        quiet: bool,
    },
    /// Encode items with a trained checkpoint into a retrieval index
    Embed {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        /// Items to store: train, train+val, test or all [default: train]
        #[arg(long)]
        subset: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Rank index entries for query vectors from a CSV (`query_id,f0..`)
    Query {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        /// Results per query [default: 5]
        #[arg(long)]
        k: Option<usize>,
        /// Graph neighbors linked to each query [default: minimum graph degree]
        #[arg(long)]
        k_attach: Option<usize>,
        /// Write `query_id,rank,id,label,distance` here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Query every test item and report mAP(k) and mMV(k)
    Evaluate {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        /// Cutoff rank [default: 5]
        #[arg(long)]
        k: Option<usize>,
        /// Graph neighbors linked to each query [default: minimum graph degree]
        #[arg(long)]
        k_attach: Option<usize>,
        /// Average-precision normalizer: top-k or corpus [default: top-k]
        #[arg(long)]
        relevance: Option<String>,
        /// JSON report path
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// Optional CSV report path
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

/// Model settings; unset flags fall back to the config file, then defaults.
#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// gae, vgae, arvga or a-arvgae [default: a-arvgae]
    #[arg(long)]
    variant: Option<String>,
    /// [default: 250]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Output width of each attention head [default: 64]
    #[arg(long)]
    d_hidden: Option<usize>,
    /// Attention heads [default: 2]
    #[arg(long)]
    heads: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    d_latent: Option<usize>,
    /// [default: 0.2]
    #[arg(long)]
    dropout: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    disc_hidden: Option<usize>,
    /// Discriminator updates per epoch [default: 5]
    #[arg(long)]
    disc_iters: Option<usize>,
    /// bce or mse [default: bce]
    #[arg(long)]
    recon_loss: Option<String>,
    /// [default: 1]
    #[arg(long)]
    w_recon: Option<f64>,
    /// KL weight, or `auto` for 1/n [default: auto]
    #[arg(long)]
    w_kl: Option<String>,
    /// [default: 1]
    #[arg(long)]
    w_adv: Option<f64>,
}

impl ModelArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("variant", self.variant.clone());
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("d_hidden", self.d_hidden.map(|v| v.to_string()));
        put("heads", self.heads.map(|v| v.to_string()));
        put("d_latent", self.d_latent.map(|v| v.to_string()));
        put("dropout_p", self.dropout.map(|v| v.to_string()));
        put("disc_hidden", self.disc_hidden.map(|v| v.to_string()));
        put("disc_iters", self.disc_iters.map(|v| v.to_string()));
        put("recon_loss", self.recon_loss.clone());
        put("w_recon", self.w_recon.map(|v| v.to_string()));
        put("w_kl", self.w_kl.clone());
        put("w_adv", self.w_adv.map(|v| v.to_string()));
        out
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code())
        }
    }
}
