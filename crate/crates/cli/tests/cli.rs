mod common;

use std::fs;

use common::{run, s, smad, small_corpus};
use image::{GrayImage, Luma};
use serde_json::Value;
use smad_core::classifier::load_model;
use smad_core::dataset::{load_manifest, LoadOptions};

fn read_json(path: &std::path::Path) -> Value {
    serde_json::from_slice(&fs::read(path).expect("read json")).expect("valid json")
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(smad(&["--help"]).status.code(), Some(0));
    assert_eq!(smad(&["--version"]).status.code(), Some(0));
    assert_eq!(smad(&["loo", "--help"]).status.code(), Some(0));
    assert_eq!(smad(&[]).status.code(), Some(1));
    assert_eq!(smad(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        smad(&["eval", "--scores", "a.csv", "--out", "o", "--bogus"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn every_command_documents_its_flags() {
    for cmd in [
        "preprocess",
        "extract",
        "train",
        "score",
        "eval",
        "loo",
        "visualize",
        "serve",
    ] {
        let out = smad(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"), "{cmd}");
    }
}

#[test]
fn visualize_default_gallery() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&dir.path().join("corpus"));
    let image = corpus.parent().unwrap().join("images/bf_0000.png");
    let out = dir.path().join("gallery");
    assert_eq!(
        run(&[
            "visualize",
            "--image",
            s(&image),
            "--out",
            s(&out),
            "--id",
            "face"
        ]),
        0
    );
    for m in ["ELA", "DFT", "DCT2", "SVD", "SRM"] {
        let png = image::open(out.join(format!("face_{m}.png"))).unwrap();
        let side = read_json(&out.join(format!("face_{m}.json")));
        assert_eq!(png.width() as u64, side["width"].as_u64().unwrap(), "{m}");
        assert_eq!(png.height() as u64, side["height"].as_u64().unwrap(), "{m}");
        assert_eq!((png.width(), png.height()), (180, 240));
        let range = side["display_range"].as_array().unwrap();
        assert!(range[0].as_f64().unwrap() <= range[1].as_f64().unwrap());
    }
    let summary = read_json(&out.join("face_visualize.json"));
    let order: Vec<&str> = summary["contact_sheet"]["order"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(order, ["ELA", "DFT", "DCT2", "SVD", "SRM"]);
    let layout = &summary["contact_sheet"]["layout"];
    let sheet = image::open(out.join("face_contact.png")).unwrap();
    let (cols, rows) = (
        layout["columns"].as_u64().unwrap(),
        layout["rows"].as_u64().unwrap(),
    );
    assert_eq!((cols, rows), (5, 1));
    let pad = layout["padding"].as_u64().unwrap();
    let cell_w = layout["tile_width"].as_u64().unwrap() + pad;
    let cell_h =
        layout["tile_height"].as_u64().unwrap() + layout["label_height"].as_u64().unwrap() + pad;
    assert_eq!(sheet.width() as u64, cols * cell_w + pad);
    assert_eq!(sheet.height() as u64, rows * cell_h + pad);
    let pngs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 6);
}

#[test]
fn constant_image_srm_map_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("flat.png");
    GrayImage::from_pixel(300, 400, Luma([137]))
        .save(&image)
        .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "visualize",
            "--image",
            s(&image),
            "--methods",
            "SRM",
            "--out",
            s(&out)
        ]),
        0
    );
    let map = image::open(out.join("flat_SRM.png")).unwrap().to_rgb8();
    assert!(map.pixels().all(|p| p.0 == [0, 0, 0]));
}

#[test]
fn visualize_rejects_unknown_method_and_reports_mapless_ones() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("flat.png");
    GrayImage::from_pixel(90, 120, Luma([10]))
        .save(&image)
        .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "visualize",
            "--image",
            s(&image),
            "--methods",
            "ELA,WAVELET",
            "--out",
            s(&out)
        ]),
        1
    );
    assert!(!out.exists());

    assert_eq!(
        run(&[
            "visualize",
            "--image",
            s(&image),
            "--methods",
            "FUSION_LBP,HOG",
            "--out",
            s(&out)
        ]),
        0
    );
    let summary = read_json(&out.join("flat_visualize.json"));
    assert_eq!(summary["failures"][0]["method"], "FUSION_LBP");
    assert!(out.join("flat_HOG.png").exists());

    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    assert_eq!(
        run(&["visualize", "--image", s(&junk), "--out", s(&out)]),
        2
    );
    assert_eq!(
        run(&[
            "visualize",
            "--image",
            s(&dir.path().join("nope.png")),
            "--out",
            s(&out)
        ]),
        2
    );
}

#[test]
fn loo_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"output_dir": "runs/x"}"#).unwrap();
    let out = smad(&["loo", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    fs::write(
        &cfg,
        r#"{"manifest": "absent.csv", "output_dir": "runs/x"}"#,
    )
    .unwrap();
    assert_eq!(run(&["loo", "--config", s(&cfg)]), 2);

    assert_eq!(
        run(&["loo", "--config", s(&dir.path().join("missing.json"))]),
        1
    );
}

fn loo_config(dir: &std::path::Path, out: &str, features: &[&str]) -> std::path::PathBuf {
    let cfg = dir.join(format!("{out}.json"));
    let body = serde_json::json!({
        "manifest": "corpus/manifest.csv",
        "output_dir": out,
        "features": features,
        "forest": { "n_trees": 15 },
    });
    fs::write(&cfg, body.to_string()).unwrap();
    cfg
}

#[test]
fn loo_run_directory_and_plots_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(&dir.path().join("corpus"));
    let a = loo_config(dir.path(), "run_a", &["LBP81", "HOG"]);
    let b = loo_config(dir.path(), "run_b", &["LBP81", "HOG"]);
    assert_eq!(run(&["loo", "--config", s(&a)]), 0);
    assert_eq!(run(&["loo", "--config", s(&b)]), 0);
    let (ra, rb) = (dir.path().join("run_a"), dir.path().join("run_b"));
    for rel in [
        "report.json",
        "summary.json",
        "eer_matrix.csv",
        "plots/summary.png",
        "plots/det_synth-ghost_LBP81.png",
        "plots/det_synth-smooth_HOG.png",
    ] {
        let x = fs::read(ra.join(rel)).unwrap_or_else(|_| panic!("{rel} missing"));
        assert_eq!(x, fs::read(rb.join(rel)).unwrap(), "{rel}");
    }
    let plots = fs::read_dir(ra.join("plots")).unwrap().count();
    assert_eq!(plots, 3 * 2 + 1);
}

#[test]
fn single_feature_summary_has_one_bar_per_round() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(&dir.path().join("corpus"));
    let cfg = loo_config(dir.path(), "one", &["LBP81"]);
    assert_eq!(run(&["loo", "--config", s(&cfg), "--no-plots"]), 0);
    let summary = read_json(&dir.path().join("one/summary.json"));
    let bars = summary["bars"].as_array().unwrap();
    assert_eq!(bars.len(), 3);
    assert!(bars.iter().all(|b| b["feature"] == "LBP81"));
    assert!(!dir.path().join("one/plots").exists());
}

#[test]
fn train_score_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let model = dir.path().join("models/lbp.json");
    let code = run(&[
        "train",
        "--manifest",
        s(&manifest),
        "--method",
        "LBP81",
        "--out",
        s(&model),
        "--trees",
        "25",
        "--forest-seed",
        "3",
    ]);
    assert_eq!(code, 0);
    let split = dir.path().join("models/lbp.split.json");
    assert!(split.exists());
    let trained = load_model(&model).unwrap();
    assert_eq!(trained.feature_dim, 59);
    assert!(trained.operating_points.is_some());
    assert!(trained.feature_settings.is_some());

    let scores = dir.path().join("scores.csv");
    assert_eq!(
        run(&[
            "score",
            "--model",
            s(&model),
            "--manifest",
            s(&manifest),
            "--split",
            s(&split),
            "--subset",
            "test",
            "--out",
            s(&scores),
        ]),
        0
    );
    let text = fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("id,label,score"));
    let split_json = read_json(&split);
    assert_eq!(
        text.lines().count() - 1,
        split_json["test"].as_array().unwrap().len()
    );

    let eval = dir.path().join("eval");
    assert_eq!(run(&["eval", "--scores", s(&scores), "--out", s(&eval)]), 0);
    let metrics = read_json(&eval.join("metrics.json"));
    let eer = metrics["eer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eer));
    assert!(eval.join("det.csv").exists() && eval.join("det.png").exists());

    let fresh = dir.path().join("models/again.json");
    assert_eq!(
        run(&[
            "train",
            "--manifest",
            s(&manifest),
            "--method",
            "LBP81",
            "--out",
            s(&fresh),
            "--trees",
            "25",
            "--forest-seed",
            "3"
        ]),
        0
    );
    assert_eq!(fs::read(&model).unwrap(), fs::read(&fresh).unwrap());

    let bf_only = dir.path().join("bf.csv");
    fs::write(&bf_only, "id,label,score\na,bonafide,0.1\n").unwrap();
    assert_eq!(
        run(&["eval", "--scores", s(&bf_only), "--out", s(&eval)]),
        2
    );
    assert_eq!(
        run(&[
            "train",
            "--manifest",
            s(&manifest),
            "--method",
            "LBP81",
            "--out",
            s(&fresh),
            "--trees",
            "0"
        ]),
        1
    );
    assert_eq!(
        run(&[
            "train",
            "--manifest",
            s(&manifest),
            "--method",
            "NOPE",
            "--out",
            s(&fresh)
        ]),
        1
    );
}

#[test]
fn extract_and_preprocess_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let feats = dir.path().join("feats");
    assert_eq!(
        run(&[
            "extract",
            "--manifest",
            s(&manifest),
            "--methods",
            "LBP81,SVD,LBP81+FUSION_LBP",
            "--out",
            s(&feats)
        ]),
        0
    );
    let mut rdr = csv::Reader::from_path(feats.join("LBP81+FUSION_LBP.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 3 + 59 + 472);
    assert_eq!(rdr.records().count(), 24 + 3 * 12);

    let pre = dir.path().join("pre");
    assert_eq!(
        run(&["preprocess", "--manifest", s(&manifest), "--out", s(&pre)]),
        0
    );
    let m = load_manifest(&pre.join("manifest.csv"), &LoadOptions::default()).unwrap();
    assert_eq!(m.len(), 60);
    let face = image::open(&m.records[0].path).unwrap();
    assert_eq!((face.width(), face.height()), (180, 240));

    fs::remove_file(dir.path().join("corpus/images/bf_0003.png")).unwrap();
    assert_eq!(
        run(&["preprocess", "--manifest", s(&manifest), "--out", s(&pre)]),
        2
    );
    assert_eq!(
        run(&[
            "preprocess",
            "--manifest",
            s(&manifest),
            "--out",
            s(&pre),
            "--missing",
            "warn"
        ]),
        0
    );
}
