use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fuse() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fuse"));
    for var in ["FUSE_MANIFEST", "FUSE_RECORDS", "FUSE_OUTPUT"] {
        cmd.env_remove(var);
    }
    cmd
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path, extra: &str) {
    let spec = format!(
        "m = 4\nn = 16\nn_queries = 3\npsi = [0.85, 0.8, 0.75, 0.7]\neta = [0.8, 0.75, 0.85, 0.7]\nseed = 11\n{extra}"
    );
    fs::write(dir.join("spec.toml"), spec).unwrap();
    let out = fuse()
        .args(["synth", "--spec"])
        .arg(dir.join("spec.toml"))
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_run_eval_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "wrong_answers = 2\n");
    let run = fuse()
        .args(["run", "--methods", "fuse,naive_ensemble,majority_vote"])
        .arg("--manifest")
        .arg(d.join("manifest.toml"))
        .arg("--records")
        .arg(d.join("records.jsonl"))
        .arg("--output")
        .arg(d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let selections = fs::read_to_string(d.join("sel.jsonl")).unwrap();
    assert_eq!(selections.lines().count(), 9);

    // io paths may come from the environment instead of flags
    let eval = fuse()
        .args(["eval", "--report"])
        .arg(d.join("report.json"))
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .env("FUSE_OUTPUT", d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("fuse") && table.contains("majority_vote"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 3);

    let inspect = fuse()
        .args(["inspect", "--query", "q00001"])
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&inspect), 0);
    let dump: serde_json::Value = serde_json::from_slice(&inspect.stdout).unwrap();
    for key in ["mu", "u", "b_hat", "psi", "eta", "tci_trace", "p_hat_histogram"] {
        assert!(dump.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn skipped_method_exits_with_partial_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "");
    let out = fuse()
        .args(["run", "--methods", "naive_ensemble,majority_vote"])
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .env("FUSE_OUTPUT", d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped majority_vote"));
    let selections = fs::read_to_string(d.join("sel.jsonl")).unwrap();
    assert_eq!(selections.lines().count(), 3);
}

#[test]
fn configuration_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "");

    fs::write(d.join("bad.toml"), "clip_delta = -1.0\n").unwrap();
    let bad_config = fuse()
        .args(["run", "--config"])
        .arg(d.join("bad.toml"))
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .env("FUSE_OUTPUT", d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&bad_config), 2);

    let unknown_method = fuse()
        .args(["run", "--methods", "nope"])
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .env("FUSE_OUTPUT", d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&unknown_method), 2);

    fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    let bad_data = fuse()
        .args(["run", "--methods", "fuse"])
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("broken.jsonl"))
        .env("FUSE_OUTPUT", d.join("sel.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&bad_data), 3);

    let unknown_query = fuse()
        .args(["inspect", "--query", "missing"])
        .env("FUSE_MANIFEST", d.join("manifest.toml"))
        .env("FUSE_RECORDS", d.join("records.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&unknown_query), 3);

    fs::write(d.join("rho.toml"), "m = 3\nn = 5\npsi = [0.8, 0.8, 0.8]\neta = [0.8, 0.8, 0.8]\n[dependence]\ngroups = [[0, 1]]\nrho = 1.5\n").unwrap();
    let bad_spec = fuse().args(["synth", "--spec"]).arg(d.join("rho.toml")).arg("--out").arg(d).output().unwrap();
    assert_eq!(code(&bad_spec), 2);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "");
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let path = d.join(format!("sel{workers}.jsonl"));
        let out = fuse()
            .args(["run", "--methods", "fuse,naive_ensemble,dawid_skene,gmm", "--workers", workers])
            .env("FUSE_MANIFEST", d.join("manifest.toml"))
            .env("FUSE_RECORDS", d.join("records.jsonl"))
            .env("FUSE_OUTPUT", &path)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
