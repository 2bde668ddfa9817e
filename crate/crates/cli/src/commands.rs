use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use nvae::corpus::{
    build_corpus, load_embeddings, preprocess, read_embedding_vocab, read_lines, read_word_set, Corpus,
};
use nvae::eval::{cooc_counts, nmi, npmi_model, purity};
use nvae::formats::{read_entries, read_topics, write_atomic, write_lines, write_theta, write_topics};
use nvae::gibbs::{run_gibbs, GibbsConfig};
use nvae::model::{export_topics, infer_theta, top_words};
use nvae::synth::{synth_corpus, SynthConfig};
use nvae::trainer::{
    load_checkpoint, save_checkpoint, summarize_diagnostics, Checkpoint, LogRecord, TrainConfig,
};

use crate::manifest::RunManifest;
use crate::{
    info, verbosity, CliError, Context, DiagArgs, EvalArgs, GibbsArgs, InferArgs, Metric, ModelArgs, PrepArgs,
    SynthArgs, TopicsArgs, TrainArgs, Verbosity,
};

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::file("io", dir, e.to_string()).at("--out", Some(dir)))
}

fn tokens(path: &Path, flag: &str) -> Result<Vec<Vec<String>>, CliError> {
    Ok(read_lines(path)
        .flag(flag, Some(path))?
        .iter()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    build_corpus(&tokens(path, "--corpus")?, None).flag("--corpus", Some(path))
}

fn lines_bytes(lines: &[String]) -> Vec<u8> {
    lines.iter().flat_map(|l| l.bytes().chain(std::iter::once(b'\n'))).collect()
}

pub fn prep(a: PrepArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("prep", None, json!({ "min_count": a.min_count, "keep_oov": a.keep_oov }));
    let raw = read_lines(&a.corpus).flag("--corpus", Some(&a.corpus))?;
    m.input("corpus", &a.corpus)?;
    let stopwords = match &a.stopwords {
        Some(p) => {
            m.input("stopwords", p)?;
            read_word_set(p).flag("--stopwords", Some(p))?
        }
        None => Default::default(),
    };
    let emb_vocab = match (&a.embeddings, a.keep_oov) {
        (Some(p), false) => {
            m.input("embeddings", p)?;
            Some(read_embedding_vocab(p).flag("--embeddings", Some(p))?)
        }
        _ => None,
    };
    let labels = match &a.labels {
        Some(p) => {
            m.input("labels", p)?;
            Some(read_entries(p).flag("--labels", Some(p))?)
        }
        None => None,
    };
    if let Some(l) = &labels {
        if l.len() != raw.len() {
            return Err(CliError::usage(
                "--labels",
                format!("{} labels for {} corpus lines", l.len(), raw.len()),
            ));
        }
    }
    let pre = preprocess(&raw, &stopwords, a.min_count, emb_vocab.as_ref());
    if pre.docs.is_empty() {
        return Err(CliError::usage("--corpus", "no document survives preprocessing"));
    }
    let kept_labels = labels.map(|l| pre.select(&l)).transpose().flag("--labels", a.labels.as_deref())?;

    out_dir(&a.out)?;
    let corpus_path = a.out.join("corpus.txt");
    let lines: Vec<String> = pre.docs.iter().map(|d| d.join(" ")).collect();
    write_atomic(&corpus_path, &lines_bytes(&lines)).flag("--out", Some(&a.out))?;
    m.output("corpus", &corpus_path)?;
    let kept_path = a.out.join("kept.txt");
    write_lines(&kept_path, &pre.kept).flag("--out", Some(&a.out))?;
    m.output("kept", &kept_path)?;
    if let Some(l) = kept_labels {
        let p = a.out.join("labels.txt");
        write_lines(&p, &l).flag("--out", Some(&a.out))?;
        m.output("labels", &p)?;
    }
    info(&format!("prep: kept {} of {} documents", pre.docs.len(), raw.len()));
    m.finish(&a.out)
}

fn train_config(a: &ModelArgs) -> Result<TrainConfig, CliError> {
    let burn_in = a.burn_in_epochs.unwrap_or(a.epochs / 2);
    if a.topics == 0 {
        return Err(CliError::usage("--topics", "must be at least 1"));
    }
    if burn_in > a.epochs {
        return Err(CliError::usage(
            "--burn-in-epochs",
            format!("{burn_in} exceeds --epochs {}", a.epochs),
        ));
    }
    if !(a.min_tau > 0.0 && a.min_tau <= 1.0) {
        return Err(CliError::usage("--min-tau", format!("{} not in (0, 1]", a.min_tau)));
    }
    if a.batch_size < 2 {
        return Err(CliError::usage("--batch-size", "must be at least 2"));
    }
    if a.layers.contains(&0) {
        return Err(CliError::usage("--layers", "layer widths must be positive"));
    }
    let cfg = TrainConfig {
        topics: a.topics,
        epochs: a.epochs,
        batch_size: a.batch_size,
        burn_in_epochs: burn_in,
        min_temperature: a.min_tau,
        layer_sizes: a.layers.clone(),
        learning_rate: a.learning_rate,
        train_embeddings: a.train_embeddings,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::core(e))?;
    Ok(cfg)
}

struct Inputs {
    corpus: Corpus,
    embeddings: nvae::Embeddings,
}

fn model_inputs(a: &ModelArgs, m: &mut RunManifest) -> Result<Inputs, CliError> {
    let corpus = read_corpus(&a.corpus)?;
    m.input("corpus", &a.corpus)?;
    let loaded = load_embeddings::<f64>(&a.embeddings, &corpus.vocab).flag("--embeddings", Some(&a.embeddings))?;
    m.input("embeddings", &a.embeddings)?;
    if !loaded.missing.is_empty() {
        info(&format!(
            "warning: {} corpus words have no vector in {} (zero rows), e.g. {:?}",
            loaded.missing.len(),
            a.embeddings.display(),
            &loaded.missing[..loaded.missing.len().min(5)]
        ));
    }
    Ok(Inputs {
        corpus,
        embeddings: loaded.embeddings,
    })
}

/// Runs training and returns the checkpoint with its NDJSON log.
fn fit(inputs: &Inputs, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<u8>), CliError> {
    let mut log = Vec::new();
    let debug = verbosity() >= Verbosity::Debug;
    let trained = nvae::trainer::train(&inputs.corpus, &inputs.embeddings, cfg, &mut |r: &LogRecord| {
        let line = r.to_json_line();
        if debug {
            if let LogRecord::Epoch(_) = r {
                eprintln!("{line}");
            }
        }
        log.extend_from_slice(line.as_bytes());
        log.push(b'\n');
        Ok(())
    })
    .map_err(CliError::core)?;
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab: inputs.corpus.vocab.words().to_vec(),
        params: trained.params,
        schedule: trained.schedule,
        adam: trained.adam,
    };
    Ok((ckpt, log))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = train_config(&a.model)?;
    cfg.fc_batchnorm = !a.no_fc_bn;
    cfg.beta_batchnorm = !a.no_beta_bn;
    cfg.diagnostics = a.diagnostics;
    let mut m = RunManifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg).expect("config serializes"));
    let inputs = model_inputs(&a.model, &mut m)?;
    let (ckpt, log) = fit(&inputs, &cfg)?;

    out_dir(&a.out)?;
    let ckpt_path = a.out.join("model.ckpt");
    save_checkpoint(&ckpt_path, &ckpt).flag("--out", Some(&a.out))?;
    m.output("checkpoint", &ckpt_path)?;
    let log_path = a.out.join("metrics.ndjson");
    write_atomic(&log_path, &log).flag("--out", Some(&a.out))?;
    m.output("metrics", &log_path)?;
    info(&format!(
        "train: {} documents, V={}, K={}, {} steps",
        inputs.corpus.len(),
        inputs.corpus.vocab.len(),
        cfg.topics,
        ckpt.schedule.global_step
    ));
    m.finish(&a.out)
}

pub fn diag(a: DiagArgs) -> Result<(), CliError> {
    let base = TrainConfig {
        diagnostics: true,
        ..train_config(&a.model)?
    };
    let mut m = RunManifest::new("diag", Some(base.seed), serde_json::to_value(&base).expect("config serializes"));
    let inputs = model_inputs(&a.model, &mut m)?;
    let mut logs = Vec::new();
    let mut summary = Vec::new();
    for (fc, bn) in [(false, false), (false, true), (true, false), (true, true)] {
        let cfg = TrainConfig {
            fc_batchnorm: fc,
            beta_batchnorm: bn,
            ..base.clone()
        };
        let (_, log) = fit(&inputs, &cfg)?;
        let steps: Vec<_> = std::str::from_utf8(&log)
            .expect("log is UTF-8")
            .lines()
            .filter_map(|l| match serde_json::from_str::<LogRecord>(l) {
                Ok(LogRecord::Step(s)) => Some(s),
                _ => None,
            })
            .collect();
        let s = summarize_diagnostics(&steps)
            .ok_or_else(|| CliError::usage("--epochs", "diagnostics need at least one training step"))?;
        let name = format!("fc-{}_beta-{}", on_off(fc), on_off(bn));
        println!(
            "{name} beta_grad_ratio={} alpha_cv={} fc_grad_median={}",
            s.beta_grad_ratio, s.alpha_cv, s.fc_grad_median
        );
        summary.push(json!({ "fc_batchnorm": fc, "beta_batchnorm": bn, "summary": s }));
        logs.push((name, log));
    }
    out_dir(&a.out)?;
    for (name, log) in &logs {
        let p = a.out.join(format!("{name}.ndjson"));
        write_atomic(&p, log).flag("--out", Some(&a.out))?;
        m.output(name, &p)?;
    }
    let p = a.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_atomic(&p, text.as_bytes()).flag("--out", Some(&a.out))?;
    m.output("summary", &p)?;
    m.finish(&a.out)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn gibbs(a: GibbsArgs) -> Result<(), CliError> {
    let cfg = GibbsConfig {
        topics: a.topics,
        alpha: a.alpha,
        beta_prior: a.beta,
        sweeps: a.sweeps,
        average_after: a.average_after,
        seed: a.seed,
    };
    if cfg.topics == 0 {
        return Err(CliError::usage("--topics", "must be at least 1"));
    }
    let mut m = RunManifest::new("gibbs", Some(a.seed), serde_json::to_value(&cfg).expect("config serializes"));
    let corpus = read_corpus(&a.corpus)?;
    m.input("corpus", &a.corpus)?;
    let est = run_gibbs(&corpus.docs, corpus.vocab.len(), &cfg).map_err(CliError::core)?;
    let topics = top_words(&est.phi, corpus.vocab.words(), a.top_n).flag("--top-n", None)?;

    out_dir(&a.out)?;
    let p = a.out.join("topics.txt");
    write_topics(&p, &topics).flag("--out", Some(&a.out))?;
    m.output("topics", &p)?;
    let p = a.out.join("theta.txt");
    write_theta(&p, &est.theta).flag("--out", Some(&a.out))?;
    m.output("theta", &p)?;
    let p = a.out.join("clusters.txt");
    write_lines(&p, &est.clusters()).flag("--out", Some(&a.out))?;
    m.output("clusters", &p)?;
    m.finish(&a.out)
}

fn checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).flag("--checkpoint", Some(path))
}

pub fn infer(a: InferArgs) -> Result<(), CliError> {
    let ckpt = checkpoint(&a.checkpoint)?;
    let temperature = a.temperature.unwrap_or(ckpt.schedule.temperature);
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CliError::usage("--temperature", format!("{temperature} is not positive")));
    }
    let mut m = RunManifest::new("infer", None, json!({ "temperature": temperature }));
    m.input("checkpoint", &a.checkpoint)?;
    let vocab = nvae::corpus::Vocabulary::from_words(ckpt.vocab.clone()).flag("--checkpoint", Some(&a.checkpoint))?;
    let mut docs = Vec::new();
    let mut unknown = 0;
    for (i, doc) in tokens(&a.corpus, "--corpus")?.iter().enumerate() {
        let (bag, miss) = vocab.encode(doc);
        if bag.is_empty() {
            return Err(CliError::file(
                "input",
                &a.corpus,
                format!("document on line {} has no word from the checkpoint vocabulary", i + 1),
            )
            .at("--corpus", None));
        }
        unknown += miss;
        docs.push(bag);
    }
    m.input("corpus", &a.corpus)?;
    if unknown > 0 {
        info(&format!("infer: skipped {unknown} tokens outside the checkpoint vocabulary"));
    }
    let assigned = infer_theta(&ckpt.params, &docs, temperature).map_err(CliError::core)?;

    out_dir(&a.out)?;
    let p = a.out.join("theta.txt");
    write_theta(&p, &assigned.proportions).flag("--out", Some(&a.out))?;
    m.output("theta", &p)?;
    let p = a.out.join("clusters.txt");
    write_lines(&p, &assigned.clusters).flag("--out", Some(&a.out))?;
    m.output("clusters", &p)?;
    m.finish(&a.out)
}

pub fn topics(a: TopicsArgs) -> Result<(), CliError> {
    let ckpt = checkpoint(&a.checkpoint)?;
    let mut m = RunManifest::new("topics", None, json!({ "top_n": a.top_n }));
    m.input("checkpoint", &a.checkpoint)?;
    let topics = export_topics(&ckpt.params, &ckpt.vocab, a.top_n).flag("--top-n", None)?;
    out_dir(&a.out)?;
    let p = a.out.join("topics.txt");
    write_topics(&p, &topics).flag("--out", Some(&a.out))?;
    m.output("topics", &p)?;
    m.finish(&a.out)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::usage(flag, format!("required for --metric {metric}")))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut report = vec![format!("metric={}", serde_json::to_value(a.metric).expect("metric").as_str().unwrap_or(""))];
    let value = match a.metric {
        Metric::Nmi | Metric::Purity => {
            let name = if matches!(a.metric, Metric::Nmi) { "nmi" } else { "purity" };
            let cp = required(&a.clusters, "--clusters", name)?;
            let lp = required(&a.labels, "--labels", name)?;
            let clusters = read_entries(cp).flag("--clusters", Some(cp))?;
            let labels = read_entries(lp).flag("--labels", Some(lp))?;
            let f = if matches!(a.metric, Metric::Nmi) { nmi::<String, String> } else { purity::<String, String> };
            let v = f(&clusters, &labels).flag("--clusters", Some(cp))?;
            report.push(format!("documents={}", clusters.len()));
            v
        }
        Metric::Npmi => {
            let tp = required(&a.topics, "--topics", "npmi")?;
            let rp = required(&a.reference, "--reference", "npmi")?;
            let topics: Vec<Vec<String>> = read_topics(tp)
                .flag("--topics", Some(tp))?
                .into_iter()
                .map(|t| t.into_iter().take(a.top_n).collect())
                .collect();
            let stats = cooc_counts(&tokens(rp, "--reference")?, a.window).flag("--reference", Some(rp))?;
            let r = npmi_model(&topics, &stats).flag("--topics", Some(tp))?;
            report.push(format!("window={}", a.window));
            report.push(format!("windows={}", stats.window_count));
            for (i, s) in r.per_topic.iter().enumerate() {
                report.push(match s {
                    Some(v) => format!("topic_{i}={v:?}"),
                    None => format!("topic_{i}=undefined"),
                });
            }
            r.mean
        }
    };
    report.insert(1, format!("value={value:?}"));
    println!("{value:?}");
    if let Some(out) = &a.out {
        write_atomic(out, &lines_bytes(&report)).flag("--out", Some(out))?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        topics: a.topics,
        docs_per_topic: a.docs_per_topic,
        doc_length: a.doc_length,
        vocab_per_topic: a.vocab_per_topic,
        embed_dim: a.embed_dim,
        separation: a.separation,
        seed: a.seed,
    };
    let mut m = RunManifest::new("synth", Some(a.seed), serde_json::to_value(&cfg).expect("config serializes"));
    let corpus = synth_corpus(&cfg).map_err(CliError::core)?;
    out_dir(&a.out)?;
    corpus.write(&a.out).flag("--out", Some(&a.out))?;
    for name in ["corpus", "labels", "embeddings"] {
        m.output(name, &a.out.join(format!("{name}.txt")))?;
    }
    m.finish(&a.out)
}
