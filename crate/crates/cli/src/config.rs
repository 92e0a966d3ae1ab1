use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use memdec_core::attention::AttentionKind;
use memdec_core::data::Split;
use memdec_core::decoder::{DecoderConfig, DecoderKind};
use memdec_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "memdec",
    version,
    about = "Train, decode and evaluate memory-decoder caption models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus a per-epoch loss log.
    Train(RunArgs),
    /// Greedy-decode every video of a split into a JSONL dump.
    Generate(RunArgs),
    /// Decode a split and report BLEU@4, CIDEr and mean length.
    Evaluate(RunArgs),
    /// Itemized parameter counts for the memory decoder and the LSTM baseline.
    CountParams(RunArgs),
    /// Per-layer attention weights for one video.
    InspectAttention(RunArgs),
    /// Finite-difference check of every primitive and the full loss.
    GradCheck(RunArgs),
    /// Write the synthetic ten-video corpus and a matching config.
    MakeToyData(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Train(a)
            | Command::Generate(a)
            | Command::Evaluate(a)
            | Command::CountParams(a)
            | Command::InspectAttention(a)
            | Command::GradCheck(a)
            | Command::MakeToyData(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of per-video `.vff` feature files.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    /// JSONL manifest of videos, splits and captions.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Vocabulary TSV; `train` builds it when missing.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint to write (train) or read.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output path: loss log, generation dump, report or toy-data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Channel width.
    #[arg(long)]
    pub n: Option<usize>,
    /// Attention width.
    #[arg(long = "d-a")]
    pub d_a: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda5: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Longest caption to generate.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["soft", "dot"])]
    pub attention: Option<String>,
    #[arg(long, value_parser = ["memory", "lstm"])]
    pub decoder: Option<String>,
    /// Stop training once the epoch loss drops below this value.
    #[arg(long)]
    pub target_loss: Option<f64>,
    /// Split to decode or evaluate.
    #[arg(long, value_parser = ["train", "val", "test"])]
    pub split: Option<String>,
    /// Video id for inspect-attention.
    #[arg(long)]
    pub video: Option<String>,
    /// Raw frame-feature width assumed by count-params.
    #[arg(long)]
    pub q: Option<usize>,
    /// Vocabulary size assumed by count-params.
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<Split>,
    pub video: Option<String>,
    pub q: usize,
    pub vocab_size: usize,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            features_dir: None,
            manifest: None,
            vocab: None,
            checkpoint: None,
            out: None,
            split: None,
            video: None,
            q: 2048,
            vocab_size: 12_596,
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `--config` if given (relative paths inside it resolve against
    /// the file's directory), applies flags on top and validates.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(args)?;
        cfg.decoder.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.features_dir,
            &mut cfg.manifest,
            &mut cfg.vocab,
            &mut cfg.checkpoint,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn apply(&mut self, a: &RunArgs) -> Result<(), CliError> {
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = &a.$flag { $field = v.clone().into(); })*
            };
        }
        set! {
            features_dir => self.features_dir,
            manifest => self.manifest,
            vocab => self.vocab,
            checkpoint => self.checkpoint,
            out => self.out,
            video => self.video,
            n => self.decoder.n,
            d_a => self.decoder.d_a,
            lambda1 => self.decoder.lambda1,
            lambda3 => self.decoder.lambda3,
            lambda5 => self.decoder.lambda5,
            max_len => self.decoder.max_caption_len,
            seed => self.decoder.seed,
            lr => self.train.adam.lr,
            batch_size => self.train.batch_size,
            epochs => self.train.epochs,
            q => self.q,
            vocab_size => self.vocab_size,
        }
        if let Some(t) = a.target_loss {
            self.train.target_loss = Some(t);
        }
        let usage = |e: memdec_core::Error| CliError::Usage(e.to_string());
        if let Some(s) = &a.attention {
            self.decoder.attention = s.parse::<AttentionKind>().map_err(usage)?;
        }
        if let Some(s) = &a.decoder {
            self.decoder.decoder = s.parse::<DecoderKind>().map_err(usage)?;
        }
        if let Some(s) = &a.split {
            self.split = Some(s.parse::<Split>().map_err(usage)?);
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
    }
}
