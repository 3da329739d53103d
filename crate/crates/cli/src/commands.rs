//! Subcommand implementations. Each one loads its inputs, calls the library
//! and returns the JSON document it reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use layoutspace_core::cluster::{
    kmeans, labeled_metrics, projection_rows, refine_clusters, select_k, tsne_project, write_rows, ClusterModel,
    KMeansConfig, ProjectionResult, RefineOp, SelectKConfig, TsneParams,
};
use layoutspace_core::datastore::{export_embeddings, import_embeddings, synthesize, Dataset, Format, SyntheticSpec};
use layoutspace_core::discovery::{
    assemble_triage_queue, build_similarity_graph, detect_anomalous_clusters, expand_from_seeds, layout_centroids,
    zscore_anomalies, DetectParams, ExpandParams, ExpansionResult, GraphParams, ProvenanceWeights, ReviewState,
    SystemClock, TriageBook, TriageItem, TriageSources,
};
use layoutspace_core::embedding::fingerprint;
use layoutspace_core::metric_learning::{
    classify_layout, default_stages, model_checkpoint, model_from_checkpoint, train_layout_classifier,
    train_metric_head, Checkpoint, ClassifierConfig, LossWeights, TrainConfig,
};
use layoutspace_core::{DistanceMetric, EmbeddingRecord, SplitTag};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{selftest, CliError, CliResult, Command, DatasetArg, Defaults, Output, Paths};

pub fn dispatch(cmd: Command, paths: &Paths, d: &Defaults) -> CliResult<Output> {
    match cmd {
        Command::Import {
            input,
            format,
            dataset_id,
            out,
            out_format,
        } => {
            let data = DatasetArg { dataset: input, format };
            let mut ds = load_dataset(paths, &data)?;
            if let Some(id) = dataset_id {
                ds.dataset_id = id;
            }
            if let Some(out) = out {
                save_dataset(paths, &ds, &out, out_format.as_deref())?;
            }
            Ok(summary_output(&ds))
        }
        Command::Export { data, out, out_format } => {
            let ds = load_dataset(paths, &data)?;
            save_dataset(paths, &ds, &out, out_format.as_deref())?;
            Ok(summary_output(&ds))
        }
        Command::Synth { spec, seed, out, truth } => {
            let mut spec: SyntheticSpec = read_json(&paths.resolve(&spec))?;
            if let Some(s) = seed {
                spec.rng_seed = s;
            }
            let (ds, gt) = synthesize(&spec)?;
            save_dataset(paths, &ds, &out, None)?;
            if let Some(t) = truth {
                let t = paths.resolve(&t);
                gt.write(&t)?;
            }
            let mut o = summary_output(&ds);
            o.json["families"] = json!(gt.family_members().into_iter().map(|(k, v)| (k, v.len())).collect::<std::collections::BTreeMap<_, _>>());
            o.json["outliers"] = json!(gt.outliers().len());
            o.text = format!("{}\nfamilies: {}, outliers: {}", o.text, o.json["families"], o.json["outliers"]);
            Ok(o)
        }
        Command::Train {
            data,
            out,
            epochs,
            batch_size,
            learning_rate,
            weights,
            seed,
            embed_out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let cfg = train_config(d, epochs, batch_size, learning_rate, weights.as_deref(), seed)?;
            let report = train_metric_head(ds.records(), &cfg)?;
            model_checkpoint(&report.model, &cfg)?.write(&paths.resolve(&out))?;
            if let Some(e) = embed_out {
                let embedded = Dataset::from_records(ds.dataset_id.clone(), report.model.embed_records(ds.records())?)?;
                save_dataset(paths, &embedded, &e, None)?;
            }
            let last = report.history.last();
            let json = json!({
                "best_epoch": report.best_epoch,
                "epochs": report.history.len(),
                "initial": report.initial,
                "final": last,
                "classes": report.model.classes,
            });
            let mut text = format!("trained {} epochs, best epoch {}\n", report.history.len(), report.best_epoch);
            text += &format!("initial val silhouette {:.4}, dbi {:.4}", report.initial.silhouette, report.initial.dbi);
            if let Some(l) = last {
                text += &format!("\nfinal val silhouette {:.4}, dbi {:.4}", l.val_silhouette, l.val_dbi);
            }
            Ok(Output::new(json, text))
        }
        Command::Classify {
            data,
            checkpoint,
            predict,
            seed,
        } => {
            let ds = load_dataset(paths, &data)?;
            let records = maybe_embed(paths, checkpoint.as_deref(), ds.records())?;
            let cfg = ClassifierConfig {
                rng_seed: seed.unwrap_or(d.seed),
                ..ClassifierConfig::default()
            };
            let report = train_layout_classifier(&records, &cfg)?;
            let mut json = json!({
                "accuracy": report.accuracy,
                "train_size": report.train_size,
                "test_size": report.test_size,
                "excluded_classes": report.excluded_classes,
            });
            let mut text = format!(
                "accuracy {:.4} ({} train / {} test)",
                report.accuracy, report.train_size, report.test_size
            );
            if let Some(p) = predict {
                let other = load_dataset(paths, &DatasetArg { dataset: p, format: None })?;
                let other = maybe_embed(paths, checkpoint.as_deref(), other.records())?;
                let mut labels = serde_json::Map::new();
                for r in &other {
                    let c = classify_layout(&r.to_f64(), &report.classifier)?;
                    labels.insert(r.sample_id.clone(), json!(c.label));
                }
                text += &format!("\nlabeled {} records", labels.len());
                json["predictions"] = Value::Object(labels);
            }
            Ok(Output::new(json, text))
        }
        Command::Metrics {
            data,
            labels,
            metric,
            split,
            checkpoint,
        } => {
            if labels != "layout" {
                return Err(CliError::Usage(format!("unknown label grouping `{labels}`; use `layout`")));
            }
            let metric = metric_of(metric.as_deref(), d)?;
            let ds = load_dataset(paths, &data)?;
            let mut records: Vec<EmbeddingRecord> =
                ds.records().iter().filter(|r| r.layout_label.is_some()).cloned().collect();
            if let Some(s) = split {
                let tag: SplitTag = serde_json::from_value(json!(s))
                    .map_err(|_| CliError::Usage(format!("unknown split `{s}`")))?;
                records.retain(|r| r.split_tag == Some(tag));
            }
            let mut rows = vec![("input".to_string(), records.clone())];
            for c in &checkpoint {
                let name = c.file_stem().map_or_else(|| c.display().to_string(), |s| s.to_string_lossy().into_owned());
                rows.push((name, maybe_embed(paths, Some(c), &records)?));
            }
            let mut out = Vec::new();
            for (name, recs) in &rows {
                let m = labeled_metrics(recs, metric)?;
                out.push(json!({
                    "configuration": name,
                    "intra_class": m.intra_class_mean,
                    "inter_class": m.inter_class_mean,
                    "silhouette": m.silhouette_mean,
                    "dbi": m.dbi,
                }));
            }
            let text = metrics_table(&out);
            Ok(Output::new(json!({ "metric": metric, "samples": records.len(), "rows": out }), text))
        }
        Command::Cluster {
            data,
            k,
            seed,
            metric,
            n_init,
            projection,
            out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let (records, metric) = match projection {
                Some(p) => {
                    let p: ProjectionResult = read_json(&paths.resolve(&p))?;
                    let metric = match metric {
                        Some(m) => m.parse()?,
                        None => DistanceMetric::Euclidean,
                    };
                    (projected_records(ds.records(), &p)?, metric)
                }
                None => (ds.records().to_vec(), metric_of(metric.as_deref(), d)?),
            };
            let mut cfg = KMeansConfig::new(k, seed.unwrap_or(d.seed)).with_metric(metric);
            if let Some(n) = n_init {
                cfg.n_init = n;
            }
            let model = kmeans(&records, &cfg)?;
            if let Some(o) = out {
                write_json(&paths.resolve(&o), &model)?;
            }
            Ok(model_output(&model))
        }
        Command::SelectK {
            data,
            k_min,
            k_max,
            sample,
            seed,
            metric,
            out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let metric = metric_of(metric.as_deref(), d)?;
            let seed = seed.unwrap_or(d.seed);
            let r = select_k(
                ds.records(),
                &SelectKConfig {
                    k_min,
                    k_max,
                    rng_seed: seed,
                    metric,
                    silhouette_sample: sample,
                },
            )?;
            if let Some(o) = out {
                let model = kmeans(ds.records(), &KMeansConfig::new(r.k, seed).with_metric(metric))?;
                write_json(&paths.resolve(&o), &model)?;
            }
            let mut text = format!("{:>4}  {:>10}\n", "k", "Silhouette");
            for (k, s) in &r.scores {
                let _ = writeln!(text, "{k:>4}  {s:>10.4}");
            }
            let _ = write!(text, "best k = {}", r.k);
            Ok(Output::new(json!({ "k": r.k, "scores": r.scores }), text))
        }
        Command::Tsne {
            data,
            perplexity,
            iterations,
            seed,
            metric,
            out,
            model,
            rows,
        } => {
            let ds = load_dataset(paths, &data)?;
            let base = TsneParams::default();
            let params = TsneParams {
                perplexity: perplexity.unwrap_or(base.perplexity),
                iterations: iterations.unwrap_or(base.iterations),
                rng_seed: seed.unwrap_or(d.seed),
                metric: metric_of(metric.as_deref(), d)?,
                ..base
            };
            let p = tsne_project(ds.records(), &params)?;
            write_json(&paths.resolve(&out), &p)?;
            if let Some(r) = rows {
                let m: ClusterModel = match model {
                    Some(m) => read_json(&paths.resolve(&m))?,
                    None => return Err(CliError::Usage("`--rows` needs `--model`".into())),
                };
                let table = projection_rows(ds.records(), &m, Some(&p))?;
                let path = paths.resolve(&r);
                let file = std::fs::File::create(&path).map_err(|e| CliError::Io(path.clone(), e))?;
                write_rows(&table, std::io::BufWriter::new(file))?;
            }
            let json = json!({
                "method": p.method,
                "samples": p.sample_ids.len(),
                "kl_divergence": p.kl_divergence,
            });
            let text = format!("{} samples, KL divergence {:.4}", p.sample_ids.len(), p.kl_divergence);
            Ok(Output::new(json, text))
        }
        Command::Refine { data, model, op, out } => {
            let ds = load_dataset(paths, &data)?;
            let base: ClusterModel = read_json(&paths.resolve(&model))?;
            let ops = op
                .iter()
                .map(|o| serde_json::from_str::<RefineOp>(o).map_err(|e| CliError::Usage(format!("--op `{o}`: {e}"))))
                .collect::<CliResult<Vec<_>>>()?;
            let next = refine_clusters(&base, ds.records(), &ops)?;
            write_json(&paths.resolve(&out), &next)?;
            Ok(model_output(&next))
        }
        Command::Anomalies {
            data,
            model,
            top,
            min_size,
            distance_quantile,
        } => {
            let ds = load_dataset(paths, &data)?;
            let model: ClusterModel = read_json(&paths.resolve(&model))?;
            let scores = zscore_anomalies(&model, ds.records())?;
            let top: Vec<_> = scores.into_iter().take(top.unwrap_or(d.top)).collect();
            let dp = DetectParams::default();
            let params = DetectParams {
                min_size: min_size.unwrap_or(dp.min_size),
                distance_quantile: distance_quantile.unwrap_or(dp.distance_quantile),
            };
            let layouts = layout_centroids(ds.records(), model.metric)?;
            let detection = if layouts.is_empty() {
                None
            } else {
                Some(detect_anomalous_clusters(&model, &layouts, &params)?)
            };
            let mut text = format!("{:<24} {:>8} {:>8}\n", "sample", "cluster", "z");
            for a in &top {
                let _ = writeln!(text, "{:<24} {:>8} {:>8.3}", a.sample_id, a.cluster_id, a.z);
            }
            match &detection {
                Some(det) => {
                    let _ = write!(text, "anomalous clusters (threshold {:.4}):", det.threshold);
                    for f in &det.flagged {
                        let _ = write!(
                            text,
                            "\n  cluster {} size {} distance {:.4} nearest {}",
                            f.cluster_id, f.size, f.min_distance_to_known_layout, f.nearest_layout
                        );
                    }
                }
                None => text.push_str("no labeled layouts; cluster detection skipped"),
            }
            Ok(Output::new(json!({ "anomalies": top, "detection": detection }), text))
        }
        Command::Graph {
            data,
            k_neighbors,
            min_similarity,
            out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let g = build_similarity_graph(ds.records(), &graph_params(d, k_neighbors, min_similarity))?;
            let edges = g.edges();
            if let Some(o) = out {
                let path = paths.resolve(&o);
                let mut buf = String::new();
                for e in &edges {
                    buf.push_str(&serde_json::to_string(e).unwrap_or_default());
                    buf.push('\n');
                }
                std::fs::write(&path, buf).map_err(|e| CliError::Io(path.clone(), e))?;
            }
            let json = json!({
                "samples": g.len(),
                "edges": edges.len(),
                "params": g.params,
                "snapshot": format!("{:016x}", g.snapshot),
            });
            Ok(Output::new(json, format!("{} samples, {} edges", g.len(), edges.len())))
        }
        Command::Expand {
            data,
            seeds,
            threshold,
            max_hops,
            k_neighbors,
            min_similarity,
            out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let g = build_similarity_graph(ds.records(), &graph_params(d, k_neighbors, min_similarity))?;
            let params = ExpandParams {
                threshold: threshold.unwrap_or(d.threshold),
                max_hops: max_hops.unwrap_or(d.max_hops),
            };
            let r = expand_from_seeds(&g, &seeds, &params)?;
            if let Some(o) = out {
                write_json(&paths.resolve(&o), &r)?;
            }
            let mut text = format!("{:<24} {:>8} {:>5}\n", "candidate", "score", "hops");
            for c in &r.candidates {
                let _ = writeln!(text, "{:<24} {:>8.4} {:>5}", c.sample_id, c.score, c.hops);
            }
            let _ = write!(text, "{} candidates", r.candidates.len());
            Ok(Output::new(to_value(&r), text))
        }
        Command::Queue {
            data,
            model,
            expansion,
            out,
        } => {
            let ds = load_dataset(paths, &data)?;
            let records = ds.records();
            let model: Option<ClusterModel> = model.map(|m| read_json(&paths.resolve(&m))).transpose()?;
            let expansion: Option<ExpansionResult> = expansion.map(|e| read_json(&paths.resolve(&e))).transpose()?;
            let (anomalies, flagged) = match &model {
                Some(m) => {
                    let layouts = layout_centroids(records, m.metric)?;
                    let flagged = if layouts.is_empty() {
                        Vec::new()
                    } else {
                        detect_anomalous_clusters(m, &layouts, &DetectParams::default())?.flagged
                    };
                    (zscore_anomalies(m, records)?, flagged)
                }
                None => (Vec::new(), Vec::new()),
            };
            let queue = assemble_triage_queue(
                &TriageSources {
                    records,
                    model: model.as_ref(),
                    anomalies: &anomalies,
                    flagged: &flagged,
                    expansion: expansion.as_ref(),
                },
                &ProvenanceWeights::default(),
            )?;
            if let Some(o) = out {
                write_json(&paths.resolve(&o), &queue)?;
            }
            let mut text = format!("{:<28} {:<8} {:>8}  {}\n", "item", "kind", "priority", "source");
            for i in &queue {
                let _ = writeln!(
                    text,
                    "{:<28} {:<8} {:>8.4}  {}",
                    i.item_id,
                    to_value(&i.kind).as_str().unwrap_or(""),
                    i.priority,
                    to_value(&i.provenance).as_str().unwrap_or("")
                );
            }
            let _ = write!(text, "{} items", queue.len());
            Ok(Output::new(json!({ "items": queue }), text))
        }
        Command::Verdict {
            queue,
            audit,
            item,
            verdict,
            reviewer,
        } => {
            let queue: Vec<TriageItem> = read_json(&paths.resolve(&queue))?;
            let verdict: ReviewState = verdict.parse()?;
            if reviewer.trim().is_empty() {
                return Err(CliError::Usage("`--reviewer` may not be empty".into()));
            }
            let audit = paths.resolve(&audit);
            if let Some(parent) = audit.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Io(parent.to_path_buf(), e))?;
            }
            let mut book = TriageBook::with_log_file(&audit)?;
            book.load_queue(&queue);
            let (item, entries) = book.record_verdict(&item, verdict, &reviewer, &SystemClock)?;
            let text = format!("{} -> {:?}, {} audit entries", item.item_id, item.review_state, entries.len());
            Ok(Output::new(json!({ "item": item, "audit_entries": entries }), text))
        }
        Command::Serve { bind, token } => {
            let config = layoutspace_service::ServiceConfig {
                bind: bind.unwrap_or_else(|| d.bind.clone()),
                data_dir: paths.data_dir.clone(),
                token: token.or_else(|| d.token.clone()),
                max_page: d.max_page,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(PathBuf::from("<runtime>"), e))?;
            eprintln!("listening on {}", config.bind);
            rt.block_on(layoutspace_service::serve(config))?;
            Ok(Output::new(json!({ "status": "stopped" }), "stopped"))
        }
        Command::Selftest { seed } => Ok(selftest::run(seed)),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn format_of(path: &Path, explicit: Option<&str>) -> CliResult<Format> {
    match explicit {
        Some(f) => Ok(f.parse()?),
        None => Format::from_path(path).ok_or_else(|| {
            CliError::Usage(format!("cannot tell the format of `{}`; pass --format", path.display()))
        }),
    }
}

pub fn load_dataset(paths: &Paths, data: &DatasetArg) -> CliResult<Dataset> {
    let path = paths.resolve(&data.dataset);
    let format = format_of(&path, data.format.as_deref())?;
    Ok(import_embeddings(&path, format)?)
}

fn save_dataset(paths: &Paths, ds: &Dataset, out: &Path, format: Option<&str>) -> CliResult<()> {
    let path = paths.resolve(out);
    let format = format_of(&path, format)?;
    Ok(export_embeddings(ds, &path, format)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(&to_value(v)).unwrap_or_default();
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn metric_of(m: Option<&str>, d: &Defaults) -> CliResult<DistanceMetric> {
    match m {
        Some(s) => Ok(s.parse()?),
        None => Ok(d.metric),
    }
}

fn graph_params(d: &Defaults, k: Option<usize>, min_similarity: Option<f64>) -> GraphParams {
    GraphParams {
        k_neighbors: k.unwrap_or(d.k_neighbors),
        min_similarity: min_similarity.unwrap_or(d.min_similarity),
    }
}

fn train_config(
    d: &Defaults,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weights: Option<&[f64]>,
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig {
        rng_seed: seed.unwrap_or(d.seed),
        metric: d.metric,
        ..TrainConfig::default()
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
        cfg.stages = default_stages(e);
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(w) = weights {
        cfg.weights = LossWeights::new(w[0], w[1], w[2])?;
    }
    Ok(cfg)
}

fn maybe_embed(paths: &Paths, checkpoint: Option<&Path>, records: &[EmbeddingRecord]) -> CliResult<Vec<EmbeddingRecord>> {
    match checkpoint {
        Some(c) => {
            let (model, _) = model_from_checkpoint(&Checkpoint::read(&paths.resolve(c))?)?;
            Ok(model.embed_records(records)?)
        }
        None => Ok(records.to_vec()),
    }
}

/// The dataset's records with their vectors replaced by projected coordinates.
fn projected_records(records: &[EmbeddingRecord], p: &ProjectionResult) -> CliResult<Vec<EmbeddingRecord>> {
    let coords: std::collections::HashMap<&str, [f64; 2]> =
        p.sample_ids.iter().map(String::as_str).zip(p.coordinates.iter().copied()).collect();
    records
        .iter()
        .map(|r| match coords.get(r.sample_id.as_str()) {
            Some([x, y]) => Ok(EmbeddingRecord {
                vector: vec![*x as f32, *y as f32],
                ..r.clone()
            }),
            None => Err(CliError::Usage(format!("projection has no coordinates for `{}`", r.sample_id))),
        })
        .collect()
}

fn summary_output(ds: &Dataset) -> Output {
    let labeled = ds.records().iter().filter(|r| r.layout_label.is_some()).count();
    let json = json!({
        "dataset_id": ds.dataset_id,
        "samples": ds.len(),
        "dimension": ds.dimension,
        "labeled": labeled,
        "fingerprint": format!("{:016x}", fingerprint(ds.records())),
    });
    let text = format!(
        "{}: {} samples, dimension {}, {} labeled",
        ds.dataset_id,
        ds.len(),
        ds.dimension,
        labeled
    );
    Output::new(json, text)
}

fn model_output(m: &ClusterModel) -> Output {
    let clusters: Vec<Value> = m
        .clusters
        .values()
        .map(|c| {
            json!({
                "cluster_id": c.id,
                "size": c.stats.size,
                "mean_distance": c.stats.mean_distance,
                "std_distance": c.stats.std_distance,
            })
        })
        .collect();
    let json = json!({
        "version": m.version,
        "k": m.k(),
        "inertia": m.inertia,
        "iterations": m.iterations,
        "noise": m.noise().len(),
        "clusters": clusters,
        "log": m.log,
    });
    let mut text = format!("model v{}: k = {}, inertia {:.4}, noise {}\n", m.version, m.k(), m.inertia, m.noise().len());
    let _ = write!(text, "{:>8} {:>6} {:>10} {:>10}", "cluster", "size", "mean", "std");
    for c in m.clusters.values() {
        let _ = write!(
            text,
            "\n{:>8} {:>6} {:>10.4} {:>10.4}",
            c.id, c.stats.size, c.stats.mean_distance, c.stats.std_distance
        );
    }
    Output::new(json, text)
}

fn metrics_table(rows: &[Value]) -> String {
    let mut t = format!(
        "{:<20} {:>12} {:>12} {:>12} {:>12}",
        "Configuration", "Intra-class", "Inter-class", "Silhouette", "DBI"
    );
    for r in rows {
        let _ = write!(
            t,
            "\n{:<20} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            r["configuration"].as_str().unwrap_or(""),
            r["intra_class"].as_f64().unwrap_or(f64::NAN),
            r["inter_class"].as_f64().unwrap_or(f64::NAN),
            r["silhouette"].as_f64().unwrap_or(f64::NAN),
            r["dbi"].as_f64().unwrap_or(f64::NAN),
        );
    }
    t
}

