use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eagcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eagcl")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_data(dir: &Path) -> String {
    let data = dir.join("data.tsv");
    let data = data.to_str().unwrap().to_string();
    ok(&eagcl(&[
        "gen-data",
        "--set",
        "users=30",
        "--set",
        "items_a=40",
        "--set",
        "items_b=20",
        "--set",
        "sequences_per_user=2",
        "--out",
        &data,
    ]));
    data
}

const QUICK: [&str; 8] = ["--set", "epochs=2", "--set", "dim=8", "--set", "batch_size=16", "--set", "seed=3"];

#[test]
fn train_then_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let mut metrics = Vec::new();
    for name in ["run1", "run2"] {
        let run = dir.path().join(name);
        let run = run.to_str().unwrap();
        let mut args = vec!["train", "--data", &data, "--out-dir", run];
        args.extend(QUICK);
        ok(&eagcl(&args));
        let trace = fs::read_to_string(Path::new(run).join("loss_trace.csv")).unwrap();
        assert!(trace.starts_with("epoch,batch,L_A,L_B,L_sA,L_sB,joint\n"));
        let printed = ok(&eagcl(&["eval", "--run", run]));
        assert!(printed.contains("popularity"));
        metrics.push(fs::read_to_string(Path::new(run).join("metrics.csv")).unwrap());
    }
    assert!(metrics[0].starts_with("domain,count,RC@10,MRR@10,NDCG@10\n"), "{}", metrics[0]);
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let first = dir.path().join("first");
    let first = first.to_str().unwrap();
    let mut args = vec!["train", "--data", &data, "--out-dir", first];
    args.extend(QUICK);
    ok(&eagcl(&args));

    let second = dir.path().join("second");
    let second = second.to_str().unwrap();
    let ck = Path::new(first).join("checkpoint.txt");
    let ck = ck.to_str().unwrap();
    let mut args = vec!["train", "--data", &data, "--out-dir", second, "--resume", ck];
    args.extend(QUICK);
    args.extend(["--set", "epochs=3"]);
    ok(&eagcl(&args));
    let manifest = fs::read_to_string(Path::new(second).join("manifest.txt")).unwrap();
    assert!(manifest.contains("epochs_run = 1"), "{manifest}");
}

#[test]
fn gradcheck_passes_on_the_toy_batch() {
    let out = eagcl(&["gradcheck"]);
    let text = ok(&out);
    assert!(!text.is_empty());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let out = eagcl(&["gradcheck", "--set", "learning_rate=0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("batch_size"), "{err}");
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let run = dir.path().join("run");
    let out = eagcl(&["train", "--data", missing.to_str().unwrap(), "--out-dir", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(eagcl(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(eagcl(&["--help"]).status.code(), Some(0));
}

#[test]
fn small_ablation_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out_dir = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", &data, "--out-dir", out_dir.to_str().unwrap(), "--seeds", "1"];
    args.extend(["--variants", "EA-GCL (ID),GCL-ALL", "--set", "epochs=1", "--set", "dim=8"]);
    let text = ok(&eagcl(&args));
    assert!(text.contains("EA-GCL (ID)") && text.contains("GCL-ALL"), "{text}");
    assert!(!text.contains("GCL-CL"));
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn timing_writes_one_row_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out_dir = dir.path().join("timing");
    let args = ["timing", "--data", &data, "--out-dir", out_dir.to_str().unwrap(), "--fractions", "0.5,1.0", "--repeats", "1"];
    ok(&eagcl(&args));
    let csv = fs::read_to_string(out_dir.join("timing.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[0].starts_with("0.5,") && rows[1].starts_with("1,") && rows[2].starts_with("r2,"), "{csv}");
}
