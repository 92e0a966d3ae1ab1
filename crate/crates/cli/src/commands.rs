use std::fmt::Write as _;
use std::path::Path;

use memdec_core::checks::{gradient_suite, SUITE_EPSILON, SUITE_TOLERANCE};
use memdec_core::data::{build_vocab, load_dataset, read_manifest, Dataset, Split, Vocabulary};
use memdec_core::decoder::{count_params, AuditScope, Decoder, DecoderConfig, DecoderKind, ParamAudit};
use memdec_core::eval::{evaluate_split, greedy_decode, write_generations, GenerationRecord};
use memdec_core::toy::{toy_corpus, toy_decoder_config, toy_train_config, write_toy_corpus, TOY_WIDTH};
use memdec_core::train::{fit, load_checkpoint, write_checkpoint, CheckpointMeta, TrainItem};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(memdec_core::Error::from)?;
    text.push('\n');
    memdec_core::write_file(path, text)?;
    Ok(())
}

fn items(ds: &Dataset, split: Split) -> Vec<TrainItem<'_>> {
    ds.pairs(split)
        .into_iter()
        .map(|(i, j)| TrainItem {
            video: &ds.examples[i].video,
            caption: &ds.examples[i].captions[j].tokens,
        })
        .collect()
}

/// Loads `--vocab`, or builds it from the training captions and writes it
/// there when the file does not exist yet.
fn vocab_for_training(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    let path = cfg.require(&cfg.vocab, "vocab")?;
    if path.exists() {
        return Ok(Vocabulary::load(path)?);
    }
    let manifest = read_manifest(cfg.require(&cfg.manifest, "manifest")?)?;
    let corpus: Vec<&str> = manifest
        .iter()
        .filter(|r| r.split == Split::Train)
        .flat_map(|r| r.captions.iter().map(String::as_str))
        .collect();
    let vocab = build_vocab(&corpus, 1)?;
    vocab.save(path)?;
    println!("built vocabulary of {} tokens -> {}", vocab.len(), path.display());
    Ok(vocab)
}

fn dataset(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Dataset, CliError> {
    let ds = load_dataset(
        cfg.require(&cfg.manifest, "manifest")?,
        cfg.require(&cfg.features_dir, "features-dir")?,
        vocab,
    )?;
    if ds.examples.is_empty() {
        return Err(CliError::Usage("manifest lists no videos".into()));
    }
    Ok(ds)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let checkpoint = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let vocab = vocab_for_training(cfg)?;
    let ds = dataset(cfg, &vocab)?;
    let decoder = Decoder::new(&cfg.decoder, vocab.len(), ds.feature_width().unwrap_or(0))?;
    let train = items(&ds, Split::Train);
    let val = items(&ds, Split::Val);
    if train.is_empty() {
        return Err(CliError::Usage("no training captions in manifest".into()));
    }
    println!(
        "training {:?} decoder: {} captions, {} validation, {} parameters",
        cfg.decoder.decoder,
        train.len(),
        val.len(),
        decoder.layout().total()
    );
    let labels = decoder.head_labels();
    let mut log = String::new();
    let outcome = fit(&decoder, decoder.init_params(), &train, &val, &cfg.train, |s| {
        let mut line = format!("epoch {:>4}  loss {:.6}", s.epoch, s.loss);
        for (l, c) in labels.iter().zip(&s.components) {
            let _ = write!(line, "  {l} {c:.6}");
        }
        if let Some(v) = s.val_loss {
            let _ = write!(line, "  val {v:.6}");
        }
        println!("{line}");
        log.push_str(&serde_json::to_string(s).expect("stats serialize"));
        log.push('\n');
    })?;
    if let Some(out) = &cfg.out {
        memdec_core::write_file(out, &log)?;
    }
    let meta = CheckpointMeta {
        decoder: cfg.decoder.clone(),
        train: cfg.train.clone(),
        epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        seed: cfg.decoder.seed,
        vocab_size: vocab.len(),
        feature_width: decoder.feature_width(),
        adam_step: outcome.state.step,
    };
    write_checkpoint(checkpoint, &meta, &outcome.best_params, &outcome.state)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "finished after {} epochs, final loss {:.6}; checkpoint (epoch {}) -> {}",
        last.epoch,
        last.loss,
        outcome.best_epoch,
        checkpoint.display()
    );
    Ok(())
}

struct Loaded {
    decoder: Decoder,
    params: memdec_core::params::ParamSet,
    vocab: Vocabulary,
    ds: Dataset,
}

fn load_model(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let (decoder, params, _, _) = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let vocab = Vocabulary::load(cfg.require(&cfg.vocab, "vocab")?)?;
    if vocab.len() != decoder.vocab_size() {
        return Err(CliError::Usage(format!(
            "vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            decoder.vocab_size()
        )));
    }
    let ds = dataset(cfg, &vocab)?;
    Ok(Loaded {
        decoder,
        params,
        vocab,
        ds,
    })
}

fn max_len(cfg: &RunConfig, decoder: &Decoder, explicit: bool) -> usize {
    if explicit {
        cfg.decoder.max_caption_len
    } else {
        decoder.config().max_caption_len
    }
}

pub fn generate(cfg: &RunConfig, explicit_max_len: bool) -> Result<(), CliError> {
    let out = cfg.require(&cfg.out, "out")?;
    let m = load_model(cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let examples = m.ds.split(split);
    if examples.is_empty() {
        return Err(CliError::Usage(format!("split `{split}` has no videos")));
    }
    let len = max_len(cfg, &m.decoder, explicit_max_len);
    let mut records = Vec::new();
    for ex in &examples {
        let g = greedy_decode(&m.decoder, &m.params, &ex.video, len)?;
        records.push(GenerationRecord::new(g, &m.vocab));
    }
    write_generations(&records, out)?;
    for r in &records {
        println!("{}\t{}", r.video_id, r.caption);
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, explicit_max_len: bool) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let examples = m.ds.split(split);
    if examples.is_empty() {
        return Err(CliError::Usage(format!("split `{split}` has no videos")));
    }
    let len = max_len(cfg, &m.decoder, explicit_max_len);
    let (report, _) = evaluate_split(&m.decoder, &m.params, &examples, &m.vocab, len)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(memdec_core::Error::from)?
    );
    if let Some(out) = &cfg.out {
        write_json(&report, out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CountReport {
    memory: ModelCount,
    lstm: ModelCount,
}

#[derive(Serialize)]
struct ModelCount {
    core: ParamAudit,
    full_total: usize,
}

fn audit_for(config: &DecoderConfig, kind: DecoderKind, vocab: usize, q: usize) -> Result<ModelCount, CliError> {
    let d = Decoder::new(
        &DecoderConfig {
            decoder: kind,
            ..config.clone()
        },
        vocab,
        q,
    )?;
    Ok(ModelCount {
        core: count_params(d.layout(), AuditScope::DecoderCore),
        full_total: count_params(d.layout(), AuditScope::Full).total,
    })
}

fn print_audit(title: &str, m: &ModelCount) {
    println!("{title}");
    let width = m.core.items.iter().map(|i| i.name.len()).max().unwrap_or(0);
    for item in m.core.items.iter().filter(|i| i.counted) {
        println!(
            "  {:<width$}  {:<12}  {:>10}",
            item.name,
            format!("{:?}", item.shape),
            item.count
        );
    }
    println!("  decoder-core total: {}", m.core.total);
    println!(
        "  full total (with embedding, heads, feature projection): {}",
        m.full_total
    );
}

pub fn count(cfg: &RunConfig) -> Result<(), CliError> {
    let d = &cfg.decoder;
    let memory = audit_for(d, DecoderKind::Memory, cfg.vocab_size, cfg.q)?;
    let lstm = audit_for(d, DecoderKind::Lstm, cfg.vocab_size, cfg.q)?;
    println!(
        "n = {}, d_a = {}, attention = {:?}, vocabulary = {}, frame features q = {}",
        d.n, d.d_a, d.attention, cfg.vocab_size, cfg.q
    );
    print_audit("memory decoder", &memory);
    print_audit("attention LSTM baseline", &lstm);
    let relation = if memory.core.total < lstm.core.total { "<" } else { ">=" };
    println!(
        "decoder-core: memory {} {relation} lstm {} ({:.2}M vs {:.2}M)",
        memory.core.total,
        lstm.core.total,
        memory.core.total as f64 / 1e6,
        lstm.core.total as f64 / 1e6
    );
    if let Some(out) = &cfg.out {
        write_json(&CountReport { memory, lstm }, out)?;
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig, explicit_max_len: bool) -> Result<(), CliError> {
    let video = cfg
        .video
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing required --video".into()))?;
    let m = load_model(cfg)?;
    let ex =
        m.ds.examples
            .iter()
            .find(|e| e.video.id == video)
            .ok_or_else(|| CliError::Usage(format!("video `{video}` is not in the manifest")))?;
    let len = max_len(cfg, &m.decoder, explicit_max_len);
    let record = GenerationRecord::new(greedy_decode(&m.decoder, &m.params, &ex.video, len)?, &m.vocab);
    println!("{}: {}", record.video_id, record.caption);
    let steps = record.attention.visual.first().map_or(0, Vec::len);
    for t in 0..steps {
        let word = record.tokens.get(t).and_then(|&w| m.vocab.token(w)).unwrap_or("<eos>");
        println!("step {} -> {word}", t + 1);
        for (l, layer) in record.attention.memory.iter().enumerate() {
            match &layer[t] {
                Some(w) => println!("  memory layer {}: {}", l + 1, fmt_weights(w)),
                None => println!("  memory layer {}: (cold start)", l + 1),
            }
        }
        for (s, site) in record.attention.visual.iter().enumerate() {
            println!("  visual site {}: {}", s + 1, fmt_weights(&site[t]));
        }
    }
    if let Some(out) = &cfg.out {
        write_json(&record, out)?;
    }
    Ok(())
}

fn fmt_weights(w: &[f64]) -> String {
    w.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

pub fn grad_check(cfg: &RunConfig) -> Result<(), CliError> {
    let suite = gradient_suite(cfg.decoder.seed)?;
    println!("epsilon {SUITE_EPSILON:e}, tolerance {SUITE_TOLERANCE:e}");
    let mut failed = Vec::new();
    for e in &suite {
        let status = if e.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<20} {:>6} checked  max rel err {:.3e}  {status}",
            e.name, e.report.checked, e.report.max_rel_error
        );
        if !e.passed() {
            failed.push(e.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", suite.len());
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient checks failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn make_toy(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.require(&cfg.out, "out")?;
    let seed = cfg.decoder.seed;
    let corpus = toy_corpus(seed);
    write_toy_corpus(&corpus, dir)?;
    let config = RunConfig {
        features_dir: Some("features".into()),
        manifest: Some("manifest.jsonl".into()),
        vocab: Some("vocab.tsv".into()),
        checkpoint: Some("model.mdck".into()),
        out: None,
        split: Some(Split::Train),
        video: None,
        q: TOY_WIDTH,
        vocab_size: corpus.vocab.len(),
        decoder: toy_decoder_config(seed),
        train: toy_train_config(),
    };
    write_json(&config, &dir.join("config.json"))?;
    println!(
        "wrote {} videos, {} vocabulary entries and config.json to {}",
        corpus.features.len(),
        corpus.vocab.len(),
        dir.display()
    );
    Ok(())
}
