//! Subcommand implementations. Every command writes under a user-chosen
//! path and prints one JSON summary line on stdout.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use smad_core::classifier::{load_model, save_model, train_forest};
use smad_core::dataset::{
    decode_image, load_face, load_manifest, preprocess_face_full, split_train_test, EyeLandmarks,
    LoadOptions, Preprocessed, SampleRecord,
};
use smad_core::features::{extract_preprocessed, extract_tag, VectorTag};
use smad_core::metrics::{
    evaluate_with_curve, operating_points, read_scores_csv, write_scores_csv, LabeledScore,
};
use smad_core::protocol::{run_loo, summarize, LooReport};
use smad_core::{
    DatasetManifest, Error, FeatureConfig, FeatureMethodId, FeatureVector, RunConfig, ScoreSet,
    SplitPair, TrainingSet,
};

use crate::args::*;
use crate::exit::{CliError, CliResult};
use crate::render::{self, DetSeries, MapSidecar};
use crate::server;

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn open_manifest(path: &Path, missing: MissingArg) -> CliResult<DatasetManifest> {
    let opts = LoadOptions {
        missing_files: missing.into(),
    };
    load_manifest(path, &opts).map_err(|e| CliError::from(e).context(path.display()))
}

fn read_split(path: &Path) -> CliResult<SplitPair> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Records in manifest order, optionally restricted to one split side.
fn select<'a>(
    manifest: &'a DatasetManifest,
    split: Option<&Path>,
    subset: Option<Subset>,
) -> CliResult<Vec<&'a SampleRecord>> {
    let Some(path) = split else {
        return Ok(manifest.records.iter().collect());
    };
    let pair = read_split(path)?;
    let ids: HashSet<&str> = match subset.unwrap_or(Subset::Test) {
        Subset::Train => pair.train.iter().map(String::as_str).collect(),
        Subset::Test => pair.test.iter().map(String::as_str).collect(),
    };
    let out: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| ids.contains(r.id.as_str()))
        .collect();
    if out.len() != ids.len() {
        return Err(CliError::data(format!(
            "{}: {} split ids are not in the manifest",
            path.display(),
            ids.len() - out.len()
        )));
    }
    Ok(out)
}

/// Loads each record once and extracts every tag, in parallel over records.
fn extract_records(
    records: &[&SampleRecord],
    tags: &[VectorTag],
    config: &FeatureConfig,
) -> CliResult<Vec<Vec<FeatureVector>>> {
    records
        .par_iter()
        .map(|r| {
            let input = load_face(r).map_err(|e| CliError::from(e).context(&r.id))?;
            tags.iter()
                .map(|t| {
                    extract_tag(&input, t, config).map_err(|e| CliError::from(e).context(&r.id))
                })
                .collect()
        })
        .collect()
}

fn single_tag_vectors(
    records: &[&SampleRecord],
    tag: &VectorTag,
    config: &FeatureConfig,
) -> CliResult<Vec<FeatureVector>> {
    Ok(extract_records(records, std::slice::from_ref(tag), config)?
        .into_iter()
        .map(|mut v| v.remove(0))
        .collect())
}

pub fn preprocess(args: PreprocessArgs) -> CliResult {
    let manifest = open_manifest(&args.manifest, args.missing)?;
    let images = args.out.join("images");
    create_dir(&images)?;
    let results: Vec<(SampleRecord, Result<String, String>)> = manifest
        .records
        .par_iter()
        .map(|r| {
            let rel = PathBuf::from("images").join(format!("{}.png", r.id));
            let out = load_face(r).map_err(|e| e.to_string()).and_then(|p| {
                let img = image::DynamicImage::ImageLuma8(p.face.to_image());
                let png = render::encode_png(&img).map_err(|e| e.to_string())?;
                fs::write(args.out.join(&rel), &png).map_err(|e| e.to_string())?;
                Ok(hex::encode(Sha256::digest(&png)))
            });
            let record = SampleRecord {
                path: rel,
                landmarks: None,
                ..r.clone()
            };
            (record, out)
        })
        .collect();

    let mut kept = Vec::new();
    let mut faces = Vec::new();
    let mut failures = Vec::new();
    for (record, out) in results {
        match out {
            Ok(sha) => {
                faces.push(json!({ "id": record.id, "sha256": sha }));
                kept.push(record);
            }
            Err(reason) => failures.push(json!({ "id": record.id, "reason": reason })),
        }
    }
    write_json(
        &args.out.join("preprocess.json"),
        &json!({ "source": args.manifest, "faces": faces, "failures": failures }),
    )?;
    if !failures.is_empty() {
        for f in &failures {
            eprintln!(
                "{}: {}",
                f["id"].as_str().unwrap_or(""),
                f["reason"].as_str().unwrap_or("")
            );
        }
        return Err(CliError::data(format!(
            "{} image(s) failed to preprocess",
            failures.len()
        )));
    }
    let out_manifest = DatasetManifest::new(kept)?;
    let mut buf = Vec::new();
    out_manifest.write_csv(&mut buf)?;
    write_file(&args.out.join("manifest.csv"), &buf)?;
    print_json(&json!({ "faces": faces.len(), "manifest": args.out.join("manifest.csv") }))
}

pub fn extract(args: ExtractArgs) -> CliResult {
    let manifest = open_manifest(&args.manifest, args.missing)?;
    let records = select(&manifest, args.split.as_deref(), args.subset)?;
    let config = FeatureConfig::from_settings(args.features.settings()?)?;
    let tags: Vec<VectorTag> = if args.methods.is_empty() {
        FeatureMethodId::ALL
            .iter()
            .map(|&m| VectorTag::Single(m))
            .collect()
    } else {
        args.methods.clone()
    };
    let vectors = extract_records(&records, &tags, &config)?;
    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for (t, tag) in tags.iter().enumerate() {
        let dim = vectors.first().map_or(0, |v| v[t].dim());
        let file = args.out.join(format!("{tag}.csv"));
        let mut w = csv::Writer::from_path(&file)
            .map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
        let mut header = vec!["id".to_string(), "label".into(), "tool".into()];
        header.extend((0..dim).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for (r, vs) in records.iter().zip(&vectors) {
            let mut row = vec![
                r.id.clone(),
                r.label.as_str().into(),
                r.tool.as_str().into(),
            ];
            row.extend(vs[t].values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        outputs.push(json!({ "method": tag.to_string(), "dim": dim, "file": file }));
    }
    write_json(
        &args.out.join("features.json"),
        &json!({ "settings": config.settings, "samples": records.len(), "methods": outputs }),
    )?;
    print_json(&json!({ "samples": records.len(), "methods": outputs }))
}

fn split_path(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    model.with_file_name(format!("{stem}.split.json"))
}

fn labeled_scores(
    model: &smad_core::ForestModel,
    records: &[&SampleRecord],
    vectors: &[FeatureVector],
) -> CliResult<Vec<LabeledScore>> {
    records
        .iter()
        .zip(vectors)
        .map(|(r, v)| {
            Ok(LabeledScore {
                id: r.id.clone(),
                label: r.label,
                score: model.predict(&v.values)?,
            })
        })
        .collect()
}

pub fn train(args: TrainArgs) -> CliResult {
    let manifest = open_manifest(&args.manifest, args.missing)?;
    let settings = args.features.settings()?;
    let config = FeatureConfig::from_settings(settings.clone())?;
    let params = args.forest.params()?;
    let split = if args.all {
        None
    } else {
        Some(split_train_test(&manifest, args.ratio, args.seed)?)
    };
    let by_id = |ids: &[String]| -> Vec<&SampleRecord> {
        ids.iter().filter_map(|id| manifest.get(id)).collect()
    };
    let train_records = match &split {
        Some(s) => by_id(&s.train),
        None => manifest.records.iter().collect(),
    };
    let vectors = single_tag_vectors(&train_records, &args.method, &config)?;
    let set = TrainingSet::from_vectors(
        train_records.iter().map(|r| r.id.clone()).collect(),
        vectors,
        train_records.iter().map(|r| r.label).collect(),
    );
    let mut model = train_forest(&set, &params)?;
    model.feature_settings = Some(settings);

    let mut test_metrics = None;
    if let Some(s) = &split {
        let test_records = by_id(&s.test);
        let test_vectors = single_tag_vectors(&test_records, &args.method, &config)?;
        let scores = labeled_scores(&model, &test_records, &test_vectors)?;
        let set = ScoreSet::from_labeled(&scores);
        match (operating_points(&set), evaluate_with_curve(&set)) {
            (Ok(ops), Ok((_, report))) => {
                model.operating_points = Some(ops);
                test_metrics = Some(report);
            }
            (Err(e), _) | (_, Err(e)) => log::warn!("no operating points: {e}"),
        }
        write_json(&split_path(&args.out), s)?;
    }
    save_model(&model, &args.out)?;
    print_json(&json!({
        "model": args.out,
        "method": args.method.to_string(),
        "feature_dim": model.feature_dim,
        "n_train": set.len(),
        "split": split.as_ref().map(|_| split_path(&args.out)),
        "test_metrics": test_metrics,
    }))
}

pub fn score(args: ScoreArgs) -> CliResult {
    let model =
        load_model(&args.model).map_err(|e| CliError::from(e).context(args.model.display()))?;
    let tag = model.method.clone().ok_or_else(|| {
        CliError::data(format!(
            "{}: model does not record its feature method",
            args.model.display()
        ))
    })?;
    let config = FeatureConfig::from_settings(model.feature_settings.clone().unwrap_or_default())?;
    let manifest = open_manifest(&args.manifest, args.missing)?;
    let records = select(&manifest, args.split.as_deref(), args.subset)?;
    let vectors = single_tag_vectors(&records, &tag, &config)?;
    let scores = labeled_scores(&model, &records, &vectors)?;
    let mut buf = Vec::new();
    write_scores_csv(&scores, &mut buf)?;
    write_file(&args.out, &buf)?;
    print_json(&json!({ "scores": args.out, "samples": scores.len(), "method": tag.to_string() }))
}

pub fn eval(args: EvalArgs) -> CliResult {
    let file = fs::File::open(&args.scores)
        .map_err(|e| CliError::data(format!("{}: {e}", args.scores.display())))?;
    let rows =
        read_scores_csv(file).map_err(|e| CliError::from(e).context(args.scores.display()))?;
    let set = ScoreSet::from_labeled(&rows);
    let (curve, report) = evaluate_with_curve(&set)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("metrics.json"), &report)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    write_file(&args.out.join("det.csv"), &buf)?;
    let plot = render::det_plot(
        "DET",
        &[DetSeries {
            label: args.label.clone(),
            curve: &curve,
            eer: report.eer,
        }],
    );
    plot.save(args.out.join("det.png"))?;
    if let Some(path) = &args.annotate_model {
        let mut model = load_model(path).map_err(|e| CliError::from(e).context(path.display()))?;
        model.operating_points = Some(operating_points(&set)?);
        save_model(&model, path)?;
    }
    print_json(&report)
}

fn config_error(path: &Path, e: Error) -> CliError {
    match e {
        Error::Json(_) | Error::Io { .. } | Error::InvalidParam(_) => {
            CliError::usage(format!("config {}: {e}", path.display()))
        }
        other => CliError::from(other),
    }
}

/// DET plots per (round, feature) and the summary bar chart.
pub fn loo_plots(report: &LooReport, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let plots = dir.join("plots");
    create_dir(&plots)?;
    let mut written = Vec::new();
    for round in &report.plan.rounds {
        for feature in &report.plan.features {
            let series: Vec<DetSeries<'_>> = round
                .test_sets
                .iter()
                .filter_map(|t| {
                    let cell =
                        report.cell(round.held_out.as_str(), t.as_str(), &feature.to_string())?;
                    Some(DetSeries {
                        label: t.to_string(),
                        curve: cell.det.as_ref()?,
                        eer: cell.metrics()?.eer,
                    })
                })
                .collect();
            if series.is_empty() {
                continue;
            }
            let title = format!("{} HELD OUT: {feature}", round.held_out);
            let path = plots.join(format!("det_{}_{feature}.png", round.held_out));
            render::det_plot(&title, &series).save(&path)?;
            written.push(path);
        }
    }
    let summary = summarize(report);
    let features: Vec<String> = report.plan.features.iter().map(|f| f.to_string()).collect();
    let rounds: Vec<String> = report
        .plan
        .rounds
        .iter()
        .map(|r| r.held_out.to_string())
        .collect();
    let path = plots.join("summary.png");
    render::summary_chart(&summary, &features, &rounds).save(&path)?;
    written.push(path);
    Ok(written)
}

pub fn loo(args: LooArgs) -> CliResult {
    let config = RunConfig::load(&args.config).map_err(|e| config_error(&args.config, e))?;
    let report = run_loo(&config)?;
    let plots = if args.no_plots {
        Vec::new()
    } else {
        loo_plots(&report, &config.output_dir)?
    };
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter(|c| c.metrics().is_none())
        .map(|c| format!("{}/{}/{}", c.round, c.test_set, c.feature))
        .collect();
    for f in &failed {
        eprintln!("warning: cell {f} failed; see report.json");
    }
    print_json(&json!({
        "output_dir": config.output_dir,
        "cells": report.cells.len(),
        "failed_cells": failed,
        "plots": plots.len(),
    }))
}

#[derive(Debug, Serialize)]
struct ContactSheetInfo {
    file: String,
    order: Vec<String>,
    layout: render::SheetLayout,
}

pub fn visualize(args: VisualizeArgs) -> CliResult {
    let mut methods: Vec<FeatureMethodId> = Vec::new();
    for name in &args.methods {
        let m: FeatureMethodId = name.parse().map_err(CliError::usage)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::usage("no methods given"));
    }
    let landmarks = args.landmarks.as_ref().map(|v| EyeLandmarks {
        left: (v[0], v[1]),
        right: (v[2], v[3]),
    });
    let id = args.id.clone().unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    });
    let config = FeatureConfig::from_settings(args.features.settings()?)?;
    let bytes = fs::read(&args.image)
        .map_err(|e| CliError::data(format!("{}: {e}", args.image.display())))?;
    let decoded =
        decode_image(&bytes).map_err(|e| CliError::from(e).context(args.image.display()))?;
    let input = preprocess_face_full(&decoded, landmarks.as_ref(), &id)?;
    create_dir(&args.out)?;

    let outcomes: Vec<(FeatureMethodId, Result<smad_core::FeatureMap, String>)> = methods
        .par_iter()
        .map(|&m| (m, render_map(&input, m, &config)))
        .collect();

    let mut tiles = Vec::new();
    let mut rendered = Vec::new();
    let mut failures = Vec::new();
    for (m, outcome) in outcomes {
        match outcome {
            Ok(map) => {
                let file = format!("{id}_{}.png", m.name());
                let img = render::map_image(&map);
                img.save(args.out.join(&file))?;
                let sidecar = MapSidecar {
                    id: id.clone(),
                    method: m.name().into(),
                    width: map.width,
                    height: map.height,
                    channels: map.channels,
                    display_range: map.display_range,
                };
                write_json(&args.out.join(format!("{id}_{}.json", m.name())), &sidecar)?;
                rendered.push(json!({ "method": m.name(), "file": file, "display_range": [map.display_range.0, map.display_range.1] }));
                tiles.push((m.name().to_string(), img));
            }
            Err(reason) => {
                eprintln!("{}: {reason}", m.name());
                failures.push(json!({ "method": m.name(), "reason": reason }));
            }
        }
    }
    if tiles.is_empty() {
        return Err(CliError::data("no method produced a map"));
    }
    let (sheet, layout) = render::contact_sheet(&tiles, args.columns);
    let sheet_file = format!("{id}_contact.png");
    sheet.save(args.out.join(&sheet_file))?;
    let contact = ContactSheetInfo {
        file: sheet_file,
        order: tiles.iter().map(|t| t.0.clone()).collect(),
        layout,
    };
    let summary =
        json!({ "id": id, "rendered": rendered, "failures": failures, "contact_sheet": contact });
    write_json(&args.out.join(format!("{id}_visualize.json")), &summary)?;
    print_json(&summary)
}

fn render_map(
    input: &Preprocessed,
    m: FeatureMethodId,
    config: &FeatureConfig,
) -> Result<smad_core::FeatureMap, String> {
    if !m.has_map() {
        return Err("method has no per-pixel map".into());
    }
    extract_preprocessed(input, m, config)
        .map_err(|e| e.to_string())?
        .map
        .ok_or_else(|| "extractor produced no map".into())
}

pub fn serve(args: ServeArgs) -> CliResult {
    let paths = server::collect_model_paths(&args.model, args.models_dir.as_deref())?;
    let models = paths
        .iter()
        .map(|p| server::load_checked(p))
        .collect::<CliResult<Vec<_>>>()?;
    let mut names = BTreeMap::new();
    for m in &models {
        if let Some(prev) = names.insert(m.name.clone(), m.tag.to_string()) {
            return Err(CliError::usage(format!(
                "two models named `{}` ({prev})",
                m.name
            )));
        }
    }
    let state = server::AppState::new(models, args.features.settings()?, args.max_analyses)?;
    server::serve(state, &args.host, args.port, args.max_upload)
}
