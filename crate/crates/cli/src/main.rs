use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use augment_core::annotations::load_coco;
use augment_core::lacs::{write_score_records, HttpClipScorer, ImageTextScorer, MockScorer};
use augment_core::pipeline::{
    self, sweep_ratios, topn_study, write_dataset_heatmaps, Backends, PipelineConfig, SpeMethod,
    TOPN_STUDY_BATCH,
};

#[derive(Parser)]
#[command(name = "augment", version, about = "Few-shot detection data augmentation with generated layouts and images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate layouts, synthesize, score, pick and merge into a dataset.
    Run(RunArgs),
    /// Build one dataset per augmentation ratio.
    Sweep {
        #[command(flatten)]
        args: RunArgs,
        /// Comma-separated ratios; defaults to 1,2,4,8,16.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<usize>>,
    },
    /// Build one dataset per top-n value from a single synthesis run.
    TopnStudy {
        #[command(flatten)]
        args: RunArgs,
        /// Comma-separated top-n values.
        #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
        values: Vec<usize>,
    },
    /// Write per-category box heatmaps of a COCO file.
    Heatmap {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        shots: Option<PathBuf>,
        #[arg(long, default_value = "heatmaps")]
        out: PathBuf,
        /// Grid size as WIDTHxHEIGHT.
        #[arg(long, default_value = "64x64")]
        resolution: String,
        /// Suffix of the written file names.
        #[arg(long, default_value = "boxes")]
        tag: String,
    },
    /// Score the images of a COCO file against their own annotations.
    Score {
        #[arg(long)]
        annotations: PathBuf,
        /// Directory the image file names are relative to.
        #[arg(long)]
        images: PathBuf,
        /// Scorer endpoint URL, or "mock".
        #[arg(long)]
        scorer: String,
        #[arg(long, default_value = "ViT-L/14")]
        scorer_model: String,
        #[arg(long, default_value = "scores")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// COCO annotation file of the base dataset.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// File of annotation ids, one per line, selecting the few-shot split.
    #[arg(long)]
    shots: Option<PathBuf>,
    /// Layout method: llm, gmm1, gmm2 or gtos.
    #[arg(long)]
    spe: Option<SpeMethod>,
    /// Generated layouts per ground-truth layout.
    #[arg(long)]
    alpha: Option<usize>,
    /// Images synthesized per layout.
    #[arg(long)]
    batch: Option<usize>,
    /// Images kept per layout after ranking.
    #[arg(long)]
    top_n: Option<usize>,
    /// OpenAI-compatible completion endpoint.
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    /// Layout-to-image service endpoint.
    #[arg(long)]
    lis_endpoint: Option<String>,
    /// Scorer endpoint URL, or "mock".
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    scorer_model: Option<String>,
    /// Run seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use deterministic mock backends for every model.
    #[arg(long)]
    mock: bool,
    /// Parallel layouts; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_path(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.annotations {
            c.annotations = v.clone();
        }
        if let Some(v) = &self.shots {
            c.shot_list = Some(v.clone());
        }
        if let Some(v) = self.spe {
            c.spe_method = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.batch {
            c.lis_batch = v;
        }
        if let Some(v) = self.top_n {
            c.top_n = v;
        }
        if let Some(v) = &self.llm_endpoint {
            c.llm.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.llm_model {
            c.llm.model = v.clone();
        }
        if let Some(v) = &self.lis_endpoint {
            c.lis.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.scorer {
            c.scorer.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.scorer_model {
            c.scorer.model = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.mock |= self.mock;
        if c.annotations.as_os_str().is_empty() {
            bail!("no annotations given (--annotations or `annotations` in the config file)");
        }
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_resolution(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("resolution {s:?} is not WIDTHxHEIGHT"))?;
    let (w, h) = (w.trim().parse()?, h.trim().parse()?);
    if w == 0 || h == 0 {
        bail!("resolution must be positive");
    }
    Ok((w, h))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(args) => {
            let config = args.config()?;
            let out = pipeline::run(&config)?;
            print_json(&out.summary)?;
        }
        Command::Sweep { args, ratios } => {
            let mut config = args.config()?;
            if ratios.is_some() {
                config.sweep = ratios;
            }
            let report = sweep_ratios(&config, &Backends::from_config(&config)?)?;
            print_json(&report)?;
        }
        Command::TopnStudy { args, values } => {
            let mut config = args.config()?;
            if args.batch.is_none() {
                config.lis_batch = TOPN_STUDY_BATCH;
            }
            config.topn_study = Some(values);
            let report = topn_study(&config, &Backends::from_config(&config)?)?;
            print_json(&report)?;
        }
        Command::Heatmap { annotations, shots, out, resolution, tag } => {
            let set = load_coco(&annotations, shots.as_deref())?;
            let n = write_dataset_heatmaps(&set.layouts, &set.categories, parse_resolution(&resolution)?, &out, &tag)?;
            log::info!("wrote {n} heatmaps to {}", out.display());
        }
        Command::Score { annotations, images, scorer, scorer_model, out } => {
            let scorer: Box<dyn ImageTextScorer> = if scorer == "mock" {
                Box::new(MockScorer::default())
            } else {
                Box::new(HttpClipScorer::new(&scorer, &scorer_model)?)
            };
            let (records, summary) = pipeline::score_dataset(&annotations, &images, scorer.as_ref())?;
            std::fs::create_dir_all(&out)?;
            write_score_records(&out.join("scores.jsonl"), &records)?;
            std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            print_json(&summary)?;
        }
    }
    Ok(())
}
