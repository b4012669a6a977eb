//! The `aitchview` command line: `serve`, `analyze` and `generate`.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use aitchview_core::dataset::{
    generate_synthetic, two_regions_preset, write_dataset, write_placeholder_image,
};
use aitchview_core::load_dataset;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing::info;

use crate::analysis::{Analysis, AnalyzeReport};
use crate::api::router;
use crate::state::AppState;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Parser)]
#[command(name = "aitchview", version, about = "Compositional spatial-omics explorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP/WebSocket server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory relative manifest paths resolve against.
        #[arg(long, env = "AITCHVIEW_DATA_DIR", default_value = ".")]
        data_dir: PathBuf,
        /// Static UI bundle served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Embed and cluster a dataset, writing a JSON report.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with its ground truth.
    Generate {
        #[arg(long, value_enum, default_value_t = Preset::TwoRegions)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    TwoRegions,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            port,
            host,
            data_dir,
            ui_dir,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("invalid listen address {host}:{port}"))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(addr, data_dir, ui_dir))
        }
        Command::Analyze {
            manifest,
            k,
            seed,
            out,
        } => analyze(&manifest, k, seed, out.as_deref()),
        Command::Generate { preset, out, seed } => generate(preset, &out, seed),
    }
}

async fn serve(addr: SocketAddr, data_dir: PathBuf, ui_dir: Option<PathBuf>) -> Result<()> {
    if !data_dir.is_dir() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let app = router(AppState::new(data_dir), ui_dir);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn analyze(manifest: &Path, k: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(manifest)
        .with_context(|| format!("cannot load {}", manifest.display()))?;
    let analysis = Analysis::compute(&dataset)?;
    let clustering = analysis.cluster(k, seed)?;
    let report = AnalyzeReport::new(&dataset, &analysis, &clustering);
    let json = serde_json::to_string(&report)? + "\n";
    match out {
        Some(path) => fs::write(path, json)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

pub fn generate(preset: Preset, out: &Path, seed: u64) -> Result<()> {
    let spec = match preset {
        Preset::TwoRegions => two_regions_preset(seed),
    };
    let (dataset, truth) = generate_synthetic(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_placeholder_image(&out.join(&spec.image_path), spec.width, spec.height)?;
    let manifest = write_dataset(&dataset, out)?;
    let truth_json = serde_json::to_string_pretty(&truth)? + "\n";
    fs::write(out.join(GROUND_TRUTH_FILE), truth_json)?;
    info!(manifest = %manifest.display(), n = dataset.len(), "dataset written");
    Ok(())
}
