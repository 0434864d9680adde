use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vidrep::classify::LinearClassifier;
use vidrep::io::{read_codes, read_descriptors, read_model, read_scores, write_descriptors, DescriptorSet};
use vidrep::pq::{pq_decode, PqCode, PqModel};

fn vidrep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidrep"))
        .args(args)
        .current_dir(dir)
        .env("VIDREP_LOG", "warn")
        .env_remove("VIDREP_SEED")
        .env_remove("VIDREP_CONFIG")
        .env_remove("VIDREP_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vidrep(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code plus the `kind` of the JSON error line on stderr.
fn failure(out: &Output) -> (i32, String) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    let code = out.status.code().unwrap();
    assert_eq!(v["error"]["code"], code);
    assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    (code, v["error"]["kind"].as_str().unwrap().to_string())
}

fn small_corpus(dir: &Path) {
    ok(
        dir,
        &["synth", "--events", "2", "--pos", "10", "--neg", "40", "--test-pos", "5", "--test-neg", "20", "--dim", "16", "--seed", "3", "-o", "corpus"],
    );
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["synth", "--events", "3", "--pos", "20", "--neg", "100", "--seed", "7", "-o"];
    ok(tmp.path(), &[&args[..], &["a"]].concat());
    ok(tmp.path(), &[&args[..], &["b"]].concat());
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_env_matches_seed_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ["synth", "--events", "1", "--pos", "5", "--neg", "10", "--test-pos", "2", "--test-neg", "4"];
    ok(tmp.path(), &[&base[..], &["--seed", "11", "-o", "flag"]].concat());
    let out = Command::new(env!("CARGO_BIN_EXE_vidrep"))
        .args(base)
        .args(["-o", "env"])
        .current_dir(tmp.path())
        .env("VIDREP_SEED", "11")
        .env("VIDREP_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    ok(tmp.path(), &[&base[..], &["--seed", "12", "-o", "other"]].concat());
    let flag = tree(&tmp.path().join("flag"));
    assert_eq!(flag, tree(&tmp.path().join("env")));
    assert_ne!(flag, tree(&tmp.path().join("other")));
}

#[test]
fn vlad_encoding_has_k_times_pca_dim() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(dir, &["fit-pca", "--dim", "8", "-o", "pca.vmdl", "corpus/videos"]);
    ok(dir, &["fit-kmeans", "-k", "6", "--pca", "pca.vmdl", "-o", "cb.vmdl", "corpus/videos"]);
    ok(dir, &["encode", "--method", "vlad", "--codebook", "cb.vmdl", "--pca", "pca.vmdl", "corpus/videos", "vlad"]);
    let files: Vec<_> = std::fs::read_dir(dir.join("vlad")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 2 * 10 + 40 + 2 * 5 + 20);
    for f in files {
        let v = read_descriptors(&f).unwrap();
        assert_eq!((v.n_items(), v.dim()), (1, 48));
        let norm: f32 = v.row(0).iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-4);
    }
}

#[test]
fn compressed_prediction_matches_decoded_vectors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(dir, &["fit-pca", "--dim", "8", "-o", "pca.vmdl", "corpus/videos"]);
    ok(dir, &["fit-kmeans", "-k", "4", "--pca", "pca.vmdl", "-o", "cb.vmdl", "corpus/videos"]);
    ok(dir, &["encode", "--method", "vlad", "--knn", "3", "--codebook", "cb.vmdl", "--pca", "pca.vmdl", "corpus/videos", "vlad"]);
    let train = "corpus/labels/event1_train.csv";
    let test = "corpus/labels/event1_test.csv";
    ok(dir, &["train", "--features", "vlad", "--labels", train, "-o", "svm.vmdl"]);
    ok(dir, &["fit-pq", "-b", "4", "-m", "4", "-o", "pq.vmdl", "vlad"]);
    ok(dir, &["pq-encode", "--pq", "pq.vmdl", "-o", "codes.vpqc", "vlad"]);
    ok(dir, &["predict-pq", "--model", "svm.vmdl", "--pq", "pq.vmdl", "--codes", "codes.vpqc", "--ids", test, "-o", "pq.csv"]);

    let pq = PqModel::from_model_file(read_model(dir.join("pq.vmdl")).unwrap()).unwrap();
    let clf = LinearClassifier::from_model_file(read_model(dir.join("svm.vmdl")).unwrap()).unwrap();
    let codes = read_codes(dir.join("codes.vpqc")).unwrap();
    let scores = read_scores(dir.join("pq.csv")).unwrap();
    assert_eq!(scores.entries.len(), 2 * 5 + 20);
    for (id, got) in &scores.entries {
        let row = codes.ids.iter().position(|c| c == id).unwrap();
        let decoded = pq_decode(&pq, &PqCode { indices: codes.codes.get(row) }).unwrap();
        let want = clf.predict(&decoded).unwrap();
        assert!((*got as f64 - want).abs() <= 1e-4 * want.abs().max(1e-3), "{id}: {got} vs {want}");
    }

    let eval = ok(dir, &["eval", "--scores", "pq.csv", "--labels", test]);
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!((0.0..=1.0).contains(&v["map"].as_f64().unwrap()));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    let out = vidrep(dir, &["no-such-command"]);
    assert_eq!(failure(&out).0, 2);
    let out = vidrep(dir, &["encode", "--method", "vlad", "--knn", "0", "corpus/videos", "enc"]);
    assert_eq!(failure(&out).0, 2);
    assert!(!dir.join("enc").exists());
    std::fs::write(dir.join("bad.toml"), "[encode]\nknnn = 3\n").unwrap();
    let out = vidrep(dir, &["--config", "bad.toml", "fit-pca", "-o", "p.vmdl", "corpus/videos"]);
    assert_eq!(failure(&out).0, 2);
    assert!(!dir.join("p.vmdl").exists());
}

#[test]
fn data_errors_exit_3_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    std::fs::create_dir(dir.join("broken")).unwrap();
    std::fs::write(dir.join("broken/x.vdsc"), b"VDSCgarbage").unwrap();
    let out = vidrep(dir, &["fit-pca", "--dim", "4", "-o", "pca.vmdl", "broken"]);
    assert_eq!(failure(&out).0, 3);
    assert!(!dir.join("pca.vmdl").exists());

    // a codebook where a PCA model is expected
    ok(dir, &["fit-kmeans", "-k", "4", "-o", "cb.vmdl", "corpus/videos"]);
    let out = vidrep(dir, &["fit-kmeans", "-k", "4", "--pca", "cb.vmdl", "-o", "cb2.vmdl", "corpus/videos"]);
    assert_eq!(failure(&out).0, 3);
    assert!(!dir.join("cb2.vmdl").exists());
    assert!(std::fs::read_dir(dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().contains(".tmp")));
}

#[test]
fn numeric_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("feat")).unwrap();
    let mut labels = String::from("video_id,label\n");
    for i in 0..6 {
        write_descriptors(dir.join(format!("feat/v{i}.vdsc")), &DescriptorSet::single(vec![0.5, 0.25, 1.0]).unwrap()).unwrap();
        labels.push_str(&format!("v{i},{}\n", i % 2));
    }
    std::fs::write(dir.join("labels.csv"), labels).unwrap();
    let out = vidrep(dir, &["train", "--kernel", "rbf", "--features", "feat", "--labels", "labels.csv", "-o", "m.vmdl"]);
    let (code, kind) = failure(&out);
    assert_eq!(code, 4, "{kind}");
    assert!(!dir.join("m.vmdl").exists());
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    std::fs::write(dir.join("cfg.toml"), "seed = 5\n[pca]\ndim = 6\n[kmeans]\nk = 3\n").unwrap();
    ok(dir, &["--config", "cfg.toml", "fit-pca", "-o", "a.vmdl", "corpus/videos"]);
    ok(dir, &["--config", "cfg.toml", "fit-pca", "--dim", "4", "-o", "b.vmdl", "corpus/videos"]);
    let a = read_model(dir.join("a.vmdl")).unwrap();
    let b = read_model(dir.join("b.vmdl")).unwrap();
    assert_eq!(a.usize_param("output_dim").unwrap(), 6);
    assert_eq!(b.usize_param("output_dim").unwrap(), 4);

    // config seed and an explicit equal seed give the same model; another seed differs
    ok(dir, &["--config", "cfg.toml", "fit-kmeans", "-o", "c1.vmdl", "corpus/videos"]);
    ok(dir, &["fit-kmeans", "-k", "3", "--seed", "5", "-o", "c2.vmdl", "corpus/videos"]);
    ok(dir, &["--config", "cfg.toml", "fit-kmeans", "--seed", "6", "-o", "c3.vmdl", "corpus/videos"]);
    let c1 = std::fs::read(dir.join("c1.vmdl")).unwrap();
    assert_eq!(c1, std::fs::read(dir.join("c2.vmdl")).unwrap());
    assert_ne!(c1, std::fs::read(dir.join("c3.vmdl")).unwrap());
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vidrep(tmp.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth"));
}
