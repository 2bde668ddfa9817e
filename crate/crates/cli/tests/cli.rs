use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvae"))
        .args(args)
        .env("NVAE_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nvae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn train_without_embeddings_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvae(&["train", "--corpus", "c.txt", "--out", p(dir.path())]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["flag"], "--embeddings");
    assert!(err["message"].as_str().unwrap().contains("--embeddings"));
}

#[test]
fn unreadable_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = nvae(&["topics", "--checkpoint", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["flag"], "--checkpoint");
    assert_eq!(err["file"], p(&missing));
    assert!(!dir.path().join("topics.txt").exists());
}

#[test]
fn eval_identical_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ids.txt");
    fs::write(&f, "0\n0\n1\n2\n1\n").unwrap();
    assert_eq!(ok(&["eval", "--metric", "nmi", "--clusters", p(&f), "--labels", p(&f)]).trim(), "1.0");
    assert_eq!(ok(&["eval", "--metric", "purity", "--clusters", p(&f), "--labels", p(&f)]).trim(), "1.0");
    let short = dir.path().join("short.txt");
    fs::write(&short, "0\n").unwrap();
    let out = nvae(&["eval", "--metric", "nmi", "--clusters", p(&f), "--labels", p(&short)]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "input");
}

#[test]
fn synth_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&["synth", "--docs-per-topic", "40", "--out", p(&d("synth"))]);
    let corpus = d("synth").join("corpus.txt");
    let emb = d("synth").join("embeddings.txt");
    let labels = d("synth").join("labels.txt");
    let model = d("model");
    let train = [
        "train", "--corpus", p(&corpus), "--embeddings", p(&emb), "--topics", "3", "--epochs", "6",
        "--batch-size", "32", "--layers", "16,16", "--seed", "2", "--out", p(&model),
    ];
    ok(&train);
    let ckpt = d("model").join("model.ckpt");
    assert!(ckpt.exists() && d("model").join("metrics.ndjson").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("model").join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    ok(&["topics", "--checkpoint", p(&ckpt), "--out", p(&d("topics"))]);
    let topics = fs::read_to_string(d("topics").join("topics.txt")).unwrap();
    assert_eq!(topics.lines().count(), 3);
    assert!(topics.lines().all(|l| l.split(' ').count() == 15));

    ok(&["infer", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&d("infer"))]);
    let theta = fs::read_to_string(d("infer").join("theta.txt")).unwrap();
    assert_eq!(theta.lines().count(), 120);
    assert!(theta.lines().all(|l| l.split(' ').count() == 3));
    let clusters = d("infer").join("clusters.txt");
    let v: f64 = ok(&["eval", "--metric", "nmi", "--clusters", p(&clusters), "--labels", p(&labels)]).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));
    let v: f64 = ok(&[
        "eval", "--metric", "npmi", "--topics", p(&d("topics").join("topics.txt")), "--reference", p(&corpus),
    ])
    .trim()
    .parse()
    .unwrap();
    assert!((-1.0..=1.0).contains(&v));

    // Same inputs and seed give byte-identical outputs.
    let again = d("again");
    let mut rerun = train;
    rerun[rerun.len() - 1] = p(&again);
    ok(&rerun);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("model.ckpt")).unwrap());
    assert_eq!(
        fs::read(d("model").join("metrics.ndjson")).unwrap(),
        fs::read(again.join("metrics.ndjson")).unwrap()
    );

    ok(&["gibbs", "--corpus", p(&corpus), "--topics", "3", "--sweeps", "30", "--out", p(&d("gibbs"))]);
    assert_eq!(fs::read_to_string(d("gibbs").join("topics.txt")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(d("gibbs").join("clusters.txt")).unwrap().lines().count(), 120);
}

#[test]
fn prep_filters_and_keeps_labels_aligned() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "The cat sat\nthe THE\ncat dog cat\nsat dog\n").unwrap();
    let labels = dir.path().join("labels.txt");
    fs::write(&labels, "a\nb\nc\nd\n").unwrap();
    let stop = dir.path().join("stop.txt");
    fs::write(&stop, "the\n").unwrap();
    let out = dir.path().join("prep");
    ok(&[
        "prep", "--corpus", p(&raw), "--labels", p(&labels), "--stopwords", p(&stop), "--min-count", "2",
        "--out", p(&out),
    ]);
    assert_eq!(fs::read_to_string(out.join("corpus.txt")).unwrap(), "cat sat\ncat dog cat\nsat dog\n");
    assert_eq!(fs::read_to_string(out.join("labels.txt")).unwrap(), "a\nc\nd\n");
    assert_eq!(fs::read_to_string(out.join("kept.txt")).unwrap(), "0\n2\n3\n");
}

#[test]
fn diag_writes_four_logs() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    ok(&["synth", "--docs-per-topic", "10", "--vocab-per-topic", "20", "--out", p(&s)]);
    let out = dir.path().join("diag");
    let stdout = ok(&[
        "diag", "--corpus", p(&s.join("corpus.txt")), "--embeddings", p(&s.join("embeddings.txt")), "--topics", "3",
        "--epochs", "2", "--batch-size", "10", "--layers", "8", "--out", p(&out),
    ]);
    assert_eq!(stdout.lines().count(), 4);
    for name in ["fc-off_beta-off", "fc-off_beta-on", "fc-on_beta-off", "fc-on_beta-on"] {
        let log = fs::read_to_string(out.join(format!("{name}.ndjson"))).unwrap();
        assert!(log.lines().any(|l| l.contains("\"kind\":\"step\"")), "{name}");
    }
    assert!(out.join("summary.json").exists());
}
