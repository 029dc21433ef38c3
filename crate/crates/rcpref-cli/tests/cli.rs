use std::path::Path;
use std::process::{Command, Output};

fn rcpref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcpref")).args(args).output().expect("spawn rcpref")
}

fn ok(args: &[&str]) {
    let o = rcpref(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_losses(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn empty_corpus_gives_empty_jsonl_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    ok(&["gen", "--n", "0", "--out", s(&out)]);
    for f in ["corpus.jsonl", "sft.jsonl", "rm.jsonl", "eval.jsonl"] {
        assert_eq!(std::fs::read_to_string(out.join(f)).unwrap(), "", "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn replay_reproduces_every_output_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["gen", "--n", "120", "--seed", "7", "--out", s(&g)]);
    let a = dir.path().join("a");
    ok(&["augment", "--recipe", "rc", "--input", s(&g.join("corpus.jsonl")), "--out", s(&a)]);
    let t = dir.path().join("t");
    ok(&["train", "--objective", "rc-rm", "--data", s(&g.join("rm.jsonl")), "--rc", s(&a.join("rc.jsonl")), "--epochs", "1", "--out", s(&t)]);

    for (run, name) in [(&g, "g2"), (&a, "a2"), (&t, "t2")] {
        let again = dir.path().join(name);
        ok(&["replay", "--manifest", s(&run.join("manifest.json")), "--threads", "3", "--out", s(&again)]);
        let mut n = 0;
        for entry in std::fs::read_dir(run).unwrap() {
            let f = entry.unwrap().file_name();
            if f == "manifest.json" {
                continue;
            }
            assert_eq!(std::fs::read(run.join(&f)).unwrap(), std::fs::read(again.join(&f)).unwrap(), "{f:?}");
            n += 1;
        }
        assert!(n > 0);
    }
}

#[test]
fn rc_rm_training_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["gen", "--n", "64", "--out", s(&g)]);
    let a = dir.path().join("a");
    ok(&["augment", "--recipe", "rc", "--input", s(&g.join("corpus.jsonl")), "--out", s(&a)]);
    let t = dir.path().join("t");
    ok(&["train", "--objective", "rc-rm", "--data", s(&g.join("rm.jsonl")), "--rc", s(&a.join("rc.jsonl")), "--epochs", "30", "--out", s(&t)]);
    let losses = csv_losses(&t.join("train_log.csv"));
    let k = 5.min(losses.len() / 2);
    let head: f64 = losses[..k].iter().sum::<f64>() / k as f64;
    let tail: f64 = losses[losses.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(tail < head, "loss {head} -> {tail}");
}

#[test]
fn policy_training_and_eval_run() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["gen", "--n", "40", "--out", s(&g)]);
    let t = dir.path().join("t");
    ok(&["train", "--objective", "dpo", "--data", s(&g.join("rm.jsonl")), "--epochs", "1", "--out", s(&t)]);
    let ckpt = std::fs::read_dir(&t)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .unwrap();
    let l = dir.path().join("l");
    ok(&["augment", "--recipe", "eval-length", "--input", s(&g.join("eval.jsonl")), "--out", s(&l)]);
    let e = dir.path().join("e");
    ok(&["eval", "--metric", "length-acc", "--checkpoint", s(&ckpt), "--data", s(&l.join("eval-length.jsonl")), "--out", s(&e)]);
    assert!(e.join("length_acc.json").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = rcpref(&["gen", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = rcpref(&["augment", "--recipe", "rc", "--input", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"not\": \"an example\"}\n").unwrap();
    let o = rcpref(&["augment", "--recipe", "rc", "--input", s(&bad), "--out", s(&dir.path().join("y"))]);
    assert_eq!(o.status.code(), Some(5));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "lambda = -1.0\n").unwrap();
    let o = rcpref(&["gen", "--config", s(&cfg), "--out", s(&dir.path().join("z"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("z").join("manifest.json").exists());
}

#[test]
fn config_file_overrides_defaults_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 3\n[corpus]\nn_examples = 10\n").unwrap();
    let g = dir.path().join("g");
    ok(&["gen", "--config", s(&cfg), "--out", s(&g)]);
    assert_eq!(std::fs::read_to_string(g.join("corpus.jsonl")).unwrap().lines().count(), 10);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(g.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
}
