use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_matmodal"));
    c.env_remove("MATMODAL_CACHE_DIR").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let o = run(args, cwd);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

#[test]
fn help_on_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--help"],
        vec!["dataset", "--help"],
        vec!["dataset", "synth", "--help"],
        vec!["dataset", "import-cif", "--help"],
        vec!["dataset", "split", "--help"],
        vec!["precompute", "--help"],
        vec!["train", "--help"],
        vec!["train", "align", "--help"],
        vec!["train", "downstream", "--help"],
        vec!["train", "align-fuse", "--help"],
        vec!["eval", "--help"],
        vec!["embed", "--help"],
    ] {
        ok(&args, dir.path());
    }
}

const SMALL: &str = r#"{
  "seed": 3,
  "featurize": {"xrd": {"n_points": 128}},
  "encoder": {"d": 8, "cnn": {"channels": [4, 4], "kernel": 5, "pool": "flatten"},
              "mlp": {"hidden": [16]}, "mpnn": {"node_dim": 8, "rounds": 1, "n_rbf": 8},
              "head_hidden": 8},
  "train": {"epochs": 2, "batch_size": 16}
}"#;

#[test]
fn pipeline_synth_split_precompute_train_eval_embed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.json"), SMALL).unwrap();
    ok(
        &[
            "dataset",
            "synth",
            "--n",
            "60",
            "--seed",
            "1",
            "--out",
            "data.jsonl",
        ],
        d,
    );
    ok(
        &[
            "dataset",
            "split",
            "--in",
            "data.jsonl",
            "--seed",
            "2",
            "--out-prefix",
            "split",
        ],
        d,
    );
    let train: Vec<usize> =
        serde_json::from_str(&fs::read_to_string(d.join("split.train.json")).unwrap()).unwrap();
    let test: Vec<usize> =
        serde_json::from_str(&fs::read_to_string(d.join("split.test.json")).unwrap()).unwrap();
    assert_eq!((train.len(), test.len()), (36, 12));

    ok(
        &[
            "precompute",
            "--in",
            "data.jsonl",
            "--config",
            "run.json",
            "--out",
            "cache",
        ],
        d,
    );
    ok(
        &[
            "train",
            "align-fuse",
            "--config",
            "run.json",
            "--out",
            "fuse",
            "--cache",
            "cache",
        ],
        d,
    );
    for f in ["model.ckpt", "history.json", "run_config.json"] {
        assert!(d.join("fuse").join(f).exists(), "{f}");
    }
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("fuse/run_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["seed"], 3);

    ok(
        &[
            "eval",
            "--checkpoint",
            "fuse/model.ckpt",
            "--split",
            "test",
            "--out",
            "report.json",
            "--cache",
            "cache",
        ],
        d,
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_evaluated"], 12);
    assert!(report["mae_lattice_lengths"].as_f64().unwrap() >= 0.0);

    // Re-running with the echoed config reproduces the metrics exactly.
    ok(
        &[
            "train",
            "align-fuse",
            "--config",
            "fuse/run_config.json",
            "--out",
            "again",
            "--cache",
            "cache",
        ],
        d,
    );
    ok(
        &[
            "eval",
            "--checkpoint",
            "again/model.ckpt",
            "--split",
            "test",
            "--out",
            "report2.json",
            "--cache",
            "cache",
        ],
        d,
    );
    assert_eq!(
        fs::read(d.join("report.json")).unwrap(),
        fs::read(d.join("report2.json")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("fuse/model.ckpt")).unwrap(),
        fs::read(d.join("again/model.ckpt")).unwrap()
    );

    ok(
        &[
            "embed",
            "--checkpoint",
            "fuse/model.ckpt",
            "--in",
            "data.jsonl",
            "--out",
            "emb.jsonl",
            "--pca3",
        ],
        d,
    );
    let lines: Vec<serde_json::Value> = fs::read_to_string(d.join("emb.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 60);
    assert_eq!(lines[0]["embedding"].as_array().unwrap().len(), 8);
    assert_eq!(lines[0]["xyz"].as_array().unwrap().len(), 3);
    assert!(lines[0]["crystal_system"].is_string());

    // Aligned pair, then downstream from it, reading split files.
    let with_split = SMALL.replacen(
        "\"seed\": 3,",
        "\"seed\": 3, \"paths\": {\"split_prefix\": \"split\"},",
        1,
    );
    fs::write(d.join("run2.json"), &with_split).unwrap();
    ok(
        &[
            "train",
            "align",
            "--config",
            "run2.json",
            "--out",
            "align",
            "--cache",
            "cache",
        ],
        d,
    );
    let down = with_split.replacen(
        "\"seed\": 3,",
        "\"seed\": 3, \"init_checkpoint\": \"align/model.ckpt\",",
        1,
    );
    fs::write(d.join("run3.json"), down).unwrap();
    ok(
        &[
            "train",
            "downstream",
            "--config",
            "run3.json",
            "--out",
            "down",
            "--cache",
            "cache",
        ],
        d,
    );
    ok(
        &[
            "eval",
            "--checkpoint",
            "down/model.ckpt",
            "--split",
            "val",
            "--out",
            "r3.json",
            "--cache",
            "cache",
        ],
        d,
    );
}

#[test]
fn stale_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.json"), SMALL).unwrap();
    ok(&["dataset", "synth", "--n", "12", "--out", "data.jsonl"], d);
    // Cache built with the env override and the default featurize config.
    let o = bin()
        .args(["precompute", "--in", "data.jsonl"])
        .env("MATMODAL_CACHE_DIR", d.join("envcache"))
        .current_dir(d)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.join("envcache/manifest.json").exists());
    let o = bin()
        .args(["train", "align-fuse", "--config", "run.json", "--out", "x"])
        .env("MATMODAL_CACHE_DIR", d.join("envcache"))
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("train align-fuse") && err.contains("stale cache"),
        "{err}"
    );
    assert!(err.contains("manifest.json"), "{err}");
}

#[test]
fn errors_name_command_file_and_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("typo.json"), r#"{"train": {"epoch": 3}}"#).unwrap();
    let o = run(
        &["train", "align", "--config", "typo.json", "--out", "x"],
        d,
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("train align") && err.contains("typo.json") && err.contains("epoch"),
        "{err}"
    );

    fs::write(d.join("bad.json"), r#"{"train": {"batch_size": 1}}"#).unwrap();
    let o = run(
        &["train", "downstream", "--config", "bad.json", "--out", "x"],
        d,
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(!o.status.success() && err.contains("batch_size"), "{err}");

    let o = run(&["precompute", "--in", "missing.jsonl", "--out", "c"], d);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        !o.status.success() && err.contains("precompute") && err.contains("missing.jsonl"),
        "{err}"
    );

    fs::write(d.join("ok.json"), "{}").unwrap();
    let o = run(
        &[
            "train", "align", "--config", "ok.json", "--out", "x", "--cache", "nowhere",
        ],
        d,
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(!o.status.success() && err.contains("precompute"), "{err}");
}

#[test]
fn import_cif_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("cifs")).unwrap();
    let nacl = "data_NaCl\n_symmetry_space_group_name_H-M 'P 1'\n_cell_length_a 5.64\n_cell_length_b 5.64\n_cell_length_c 5.64\n\
_cell_angle_alpha 90\n_cell_angle_beta 90\n_cell_angle_gamma 90\nloop_\n_atom_site_label\n_atom_site_type_symbol\n\
_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nNa1 Na 0 0 0\nCl1 Cl 0.5 0.5 0.5\n";
    fs::write(d.join("cifs/nacl.cif"), nacl).unwrap();
    ok(
        &[
            "dataset",
            "import-cif",
            "--dir",
            "cifs",
            "--out",
            "cif.jsonl",
        ],
        d,
    );
    let text = fs::read_to_string(d.join("cif.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("\"nacl\""));

    fs::write(d.join("cifs/broken.cif"), "data_x\n_cell_length_a 1\n").unwrap();
    let o = run(
        &[
            "dataset",
            "import-cif",
            "--dir",
            "cifs",
            "--out",
            "cif.jsonl",
        ],
        d,
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(!o.status.success() && err.contains("broken.cif"), "{err}");
}
