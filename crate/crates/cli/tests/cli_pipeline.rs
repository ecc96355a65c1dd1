mod support;

use maca_core::calib::{read_tensor_file, write_tensor, Tensor, TokenCorpus};
use maca_core::Matrix;
use std::path::Path;
use support::{maca, maca_env, read_csv, read_diag, read_json, snapshot};

const SMALL: &[&str] = &[
    "--out",
    "o",
    "--layers",
    "3",
    "--token-budget",
    "2048",
    "--length-set",
    "8,16,32,64",
];

fn args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(extra.iter().copied()).collect()
}

#[test]
fn hessian_outputs_schema() {
    let dir = tempfile::tempdir().unwrap();
    maca(dir.path(), &args(&["hessian"])).ok();
    let h = dir.path().join("o/hessian/multi");
    for id in ["layer_000", "layer_001", "layer_002"] {
        for mode in ["token_weighted", "sample_normalized"] {
            let t = read_tensor_file(h.join(format!("{id}.{mode}.tensor"))).unwrap();
            assert_eq!(t.dims(), [64, 64]);
            assert_eq!(read_diag(&h.join(format!("{id}.{mode}.diag.csv"))).len(), 64);
        }
        let (header, rows) = read_csv(&h.join(format!("{id}.diag.csv")));
        assert_eq!(header, ["channel", "value", "arm"]);
        assert_eq!(rows.len(), 128);
    }
    let summary = read_json(&h.join("summary.json"));
    assert_eq!(summary["token_budget"], 2048);
    let lengths: u64 = summary["lengths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(lengths, 2048);
    assert!(summary["layers"][0]["max_rel_diag_diff"].as_f64().unwrap() > 0.0);
    assert!(h.join("resolved_config.toml").is_file());
    // Nothing but the published directory is left behind.
    let names: Vec<_> = std::fs::read_dir(dir.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, ["hessian"]);
}

#[test]
fn full_pipeline_is_deterministic_across_workers() {
    let run = |cwd: &Path, workers: &str| {
        let w = ["--workers", workers];
        maca(cwd, &args(&[&w[..], &["--mode", "fixed", "hessian"]].concat())).ok();
        maca(cwd, &args(&[&w[..], &["hessian"]].concat())).ok();
        maca(
            cwd,
            &args(
                &[
                    &w[..],
                    &[
                        "--mode",
                        "fixed",
                        "quantize",
                        "--hessian-mode",
                        "token-weighted",
                        "--name",
                        "base",
                    ],
                ]
                .concat(),
            ),
        )
        .ok();
        maca(cwd, &args(&[&w[..], &["quantize", "--name", "maca"]].concat())).ok();
        maca(
            cwd,
            &args(&[&w[..], &["eval", "--base", "o/quant/base", "--maca", "o/quant/maca"]].concat()),
        )
        .ok();
        maca(cwd, &args(&[&w[..], &["ablate", "--seeds", "3"]].concat())).ok();
        maca(cwd, &args(&[&w[..], &["report"]].concat())).ok();
        snapshot(&cwd.join("o"))
    };
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let first = run(a.path(), "1");
    let again = run(b.path(), "1");
    assert_eq!(first, again);
    let parallel = run(c.path(), "3");
    assert_eq!(first.keys().collect::<Vec<_>>(), parallel.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        if !k.ends_with("resolved_config.toml") {
            assert_eq!(v, &parallel[k], "{} differs with 3 workers", k.display());
        }
    }
    let (header, rows) = read_csv(&a.path().join("o/eval/records.csv"));
    assert_eq!(header, ["layer_id", "eval_length", "error_base", "error_maca", "ratio"]);
    assert_eq!(rows.len(), 3 * 4);
    assert_eq!(rows.iter().filter(|r| r[1] == "all").count(), 3);
    let (header, rows) = read_csv(&a.path().join("o/ablate/ablation.csv"));
    assert_eq!(header, ["arm", "bits", "mean_error", "seed_count", "tokens_per_layer"]);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[4] == "2048" && r[3] == "3"));
    let report = std::fs::read_to_string(a.path().join("o/report/report.txt")).unwrap();
    assert!(report.contains("ablation"));
}

#[test]
fn identity_hessian_equals_rtn_bytes() {
    let dir = tempfile::tempdir().unwrap();
    maca(dir.path(), &args(&["quantize", "--identity-hessian", "--name", "id"])).ok();
    maca(dir.path(), &args(&["quantize", "--method", "rtn", "--name", "rtn"])).ok();
    for id in ["layer_000", "layer_001", "layer_002"] {
        for kind in ["q", "scales"] {
            let a = std::fs::read(dir.path().join(format!("o/quant/id/{id}.{kind}.tensor"))).unwrap();
            let b = std::fs::read(dir.path().join(format!("o/quant/rtn/{id}.{kind}.tensor"))).unwrap();
            assert_eq!(a, b, "{id} {kind}");
        }
    }
}

#[test]
fn grouped_scales_shape() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[source.synthetic]\ndim = 300\nshort_channels = [150, 190]\nlong_channels = [0, 40]\n",
    )
    .unwrap();
    maca(
        dir.path(),
        &args(&[
            "--config",
            "run.toml",
            "--group-size",
            "128",
            "quantize",
            "--method",
            "rtn",
        ]),
    )
    .ok();
    let t = read_tensor_file(dir.path().join("o/quant/rtn/layer_000.scales.tensor")).unwrap();
    assert_eq!(t.dims(), [16, 3]);
    let q = read_tensor_file(dir.path().join("o/quant/rtn/layer_000.q.tensor")).unwrap();
    assert_eq!(q.dims(), [16, 300]);
    let side = read_json(&dir.path().join("o/quant/rtn/layer_000.json"));
    assert_eq!(side["groups"], 3);
    assert_eq!(side["config"]["group_size"], 128);
}

#[test]
fn missing_hessian_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = maca(dir.path(), &args(&["quantize"]));
    assert_eq!(r.code(), 3, "{}", r.stderr());
    assert!(!dir.path().join("o/quant").exists());

    // A directory with only some layers fails without publishing anything.
    maca(
        dir.path(),
        &["--out", "o", "--layers", "1", "--token-budget", "2048", "hessian"],
    )
    .ok();
    let r = maca(dir.path(), &args(&["quantize", "--name", "x"]));
    assert_eq!(r.code(), 3, "{}", r.stderr());
    assert!(r.stderr().contains("layer_001"));
    assert!(!dir.path().join("o/quant/x").exists());
}

#[test]
fn eval_layer_sets_must_match() {
    let dir = tempfile::tempdir().unwrap();
    maca(dir.path(), &args(&["quantize", "--method", "rtn", "--name", "a"])).ok();
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let r = maca(dir.path(), &args(&["eval", "--base", "empty", "--maca", "empty"]));
    assert_eq!(r.code(), 3, "{}", r.stderr());
    let r = maca(dir.path(), &args(&["eval", "--base", "o/quant/a", "--maca", "empty"]));
    assert_eq!(r.code(), 3, "{}", r.stderr());
    assert!(!dir.path().join("o/eval").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[quant]\nbitz = 3\n").unwrap();
    assert_eq!(maca(dir.path(), &["--config", "bad.toml", "hessian"]).code(), 2);
    assert_eq!(maca(dir.path(), &["--bits", "1", "hessian"]).code(), 2);
    assert_eq!(maca(dir.path(), &["--token-budget", "4", "hessian"]).code(), 2);
    assert_eq!(maca(dir.path(), &["frobnicate"]).code(), 2);
    assert_eq!(maca(dir.path(), &["--help"]).code(), 0);
}

#[test]
fn env_overrides_sit_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 4\n[quant]\nbits = 3\n").unwrap();
    let env = [("MACA_BITS", "2"), ("MACA_CONFIG", "run.toml")];
    maca_env(dir.path(), &args(&["quantize", "--method", "rtn"]), &env).ok();
    let cfg = std::fs::read_to_string(dir.path().join("o/quant/rtn/resolved_config.toml")).unwrap();
    let cfg: toml::Value = toml::from_str(&cfg).unwrap();
    assert_eq!(cfg["seed"].as_integer(), Some(4));
    assert_eq!(cfg["quant"]["bits"].as_integer(), Some(2));
    maca_env(dir.path(), &args(&["--bits", "4", "quantize", "--method", "rtn"]), &env).ok();
    let cfg = std::fs::read_to_string(dir.path().join("o/quant/rtn/resolved_config.toml")).unwrap();
    assert!(cfg.contains("bits = 4"));
}

fn write_dump(root: &Path, id: &str, dim: usize, lengths: &[usize], zero: bool) {
    for (sub, seed) in [("calib", 1.0), ("eval", 2.0)] {
        let d = root.join(id).join(sub);
        std::fs::create_dir_all(&d).unwrap();
        for (k, &len) in lengths.iter().enumerate() {
            let data = (0..dim * len)
                .map(|i| {
                    if zero {
                        0.0
                    } else {
                        ((i as f64 + seed) * 0.37 + k as f64).sin()
                    }
                })
                .collect();
            write_tensor(
                d.join(format!("{k:03}.tensor")),
                &Matrix::from_vec(dim, len, data).unwrap(),
            )
            .unwrap();
        }
    }
}

#[test]
fn dump_source_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_dump(&dir.path().join("dump"), "attn_q", 6, &[5, 9, 17], false);
    let toml = "[source]\nkind = \"dump\"\ndump_dir = \"dump\"\n[layers]\nrows = 4\n";
    std::fs::write(dir.path().join("run.toml"), toml).unwrap();
    maca(dir.path(), &["--config", "run.toml", "--out", "o", "hessian"]).ok();
    let t = read_tensor_file(dir.path().join("o/hessian/multi/attn_q.sample_normalized.tensor")).unwrap();
    assert_eq!(t.dims(), [6, 6]);
    maca(dir.path(), &["--config", "run.toml", "--out", "o", "quantize"]).ok();
    let q = read_tensor_file(dir.path().join("o/quant/gptq-multi-sample_normalized/attn_q.q.tensor")).unwrap();
    assert_eq!(q.dims(), [4, 6]);
}

#[test]
fn degenerate_hessian_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write_dump(&dir.path().join("dump"), "dead", 3, &[4], true);
    std::fs::write(
        dir.path().join("run.toml"),
        "[source]\nkind = \"dump\"\ndump_dir = \"dump\"\n",
    )
    .unwrap();
    let r = maca(dir.path(), &["--config", "run.toml", "--out", "o", "hessian"]);
    assert_eq!(r.code(), 4, "{}", r.stderr());
    assert!(r.stderr().contains("dead"));
}

#[test]
fn corpus_source_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let text: Vec<u8> = (0..40_000u32)
        .map(|i| b"the quick brown fox "[(i as usize * 7) % 20])
        .collect();
    TokenCorpus::from_text(&text)
        .write(dir.path().join("corpus.tok"))
        .unwrap();
    std::fs::write(dir.path().join("plain.txt"), &text).unwrap();
    for file in ["corpus.tok", "plain.txt"] {
        let toml = format!("[source]\nkind = \"corpus\"\ncorpus_path = \"{file}\"\ncorpus_dim = 12\n");
        std::fs::write(dir.path().join("run.toml"), toml).unwrap();
        maca(dir.path(), &args(&["--config", "run.toml", "hessian"])).ok();
        maca(dir.path(), &args(&["--config", "run.toml", "quantize"])).ok();
    }
    let t = read_tensor_file(dir.path().join("o/hessian/multi/layer_001.token_weighted.tensor")).unwrap();
    assert_eq!(t.dims(), [12, 12]);
    let tiny = dir.path().join("tiny.txt");
    std::fs::write(&tiny, b"short").unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[source]\nkind = \"corpus\"\ncorpus_path = \"tiny.txt\"\n",
    )
    .unwrap();
    assert_eq!(maca(dir.path(), &args(&["--config", "run.toml", "hessian"])).code(), 3);
}

#[test]
fn weight_files_define_layers() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("weights");
    std::fs::create_dir_all(&w).unwrap();
    for id in ["mlp_up", "mlp_down"] {
        let m = Matrix::from_vec(2, 64, (0..128).map(|i| (i as f64 * 0.1).cos()).collect()).unwrap();
        std::fs::write(w.join(format!("{id}.tensor")), Tensor::from_matrix(&m).encode()).unwrap();
    }
    std::fs::write(dir.path().join("run.toml"), "[layers]\nweights_dir = \"weights\"\n").unwrap();
    maca(
        dir.path(),
        &args(&["--config", "run.toml", "quantize", "--method", "rtn"]),
    )
    .ok();
    let ids: Vec<String> = std::fs::read_dir(dir.path().join("o/quant/rtn"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".q.tensor"))
        .collect();
    let mut ids = ids;
    ids.sort();
    assert_eq!(ids, ["mlp_down.q.tensor", "mlp_up.q.tensor"]);
}
