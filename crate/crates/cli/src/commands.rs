use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use goldsel::anchors::{sample_kmeans, sample_random, AnchorSet, Method};
use goldsel::dataset::{load_dataset, Dataset, Format, LoadOptions, PromptTemplate};
use goldsel::duality::{run_demo, DemoParams};
use goldsel::scoring::store::StoreContents;
use goldsel::scoring::{score_dataset, GoldenScoreTable, RunOptions, ScoreStore};
use goldsel::selection::{
    default_edges, export_subset, report, threshold_subset, top_fraction, top_k, Direction, ExportSidecar,
    SubsetManifest, DEFAULT_THRESHOLDS,
};
use serde_json::{json, Value};

use crate::config::{config_error, data_error, embedder, require, BackendSpec, EmbedderChoice, RunConfig};
use crate::{
    AnchorsBuildArgs, AnchorsCommand, Cli, Command, DatasetArgs, DualityArgs, InspectArgs, ReportArgs, ScoreCommand,
    ScoreRunArgs, SelectArgs,
};

pub enum Status {
    Done,
    Interrupted,
}

pub fn run(cli: Cli) -> anyhow::Result<Status> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Anchors(AnchorsCommand::Build(args)) => anchors_build(&mut config, args),
        Command::Score(ScoreCommand::Run(args)) => score_run(&mut config, args),
        Command::Select(args) => select(&mut config, args),
        Command::Report(args) => report_cmd(&mut config, args),
        Command::DualityDemo(args) => duality_demo(args),
        Command::Inspect(args) => inspect(args),
    }
}

/// Write to stdout, ignoring a closed pipe.
fn out(text: &str) {
    let mut stdout = io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush());
}

fn emit(value: &Value) {
    out(&(serde_json::to_string_pretty(value).expect("json value serializes") + "\n"));
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn apply_dataset(config: &mut RunConfig, args: DatasetArgs) {
    if let Some(p) = args.dataset {
        config.dataset.path = Some(p);
    }
    if let Some(f) = args.format {
        config.dataset.format = Some(f.into());
    }
    config.dataset.skip_bad |= args.skip_bad;
    if let Some(t) = args.template {
        config.template = Some(t);
    }
}

fn dataset(config: &RunConfig) -> anyhow::Result<Dataset> {
    let (path, format) = config.dataset_format()?;
    let opts = LoadOptions { skip_bad: config.dataset.skip_bad, id_mode: config.dataset.id_mode };
    Ok(load_dataset(&path, format, &opts)?)
}

fn template(config: &RunConfig) -> anyhow::Result<PromptTemplate> {
    Ok(match &config.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::alpaca(),
    })
}

fn anchors_build(config: &mut RunConfig, args: AnchorsBuildArgs) -> anyhow::Result<Status> {
    apply_dataset(config, args.data);
    let a = &mut config.anchors;
    if let Some(m) = args.method {
        a.method = m.into();
    }
    a.m = args.m.or(a.m);
    a.seed = args.seed.unwrap_or(a.seed);
    a.path = args.out.or(a.path.take());
    if let Some(p) = args.parallelism {
        a.kmeans.parallelism = p;
    }
    if args.feature_hash {
        a.embedder = EmbedderChoice::FeatureHash;
    }
    if let Some(b) = args.backend {
        config.backend = Some(b);
    }

    let m = require(&config.anchors.m, "--m")?;
    let out = require(&config.anchors.path, "--out")?;
    let ds = dataset(config)?;
    let tpl = template(config)?;
    let seed = config.anchors.seed;
    let set = match config.anchors.method {
        Method::Random => sample_random(&ds, m, seed, &tpl)?,
        Method::Kmeans => {
            let emb = embedder(config)?;
            let built = sample_kmeans(&ds, m, seed, emb.as_ref(), &tpl, &config.anchors.kmeans)?;
            let c = &built.clustering;
            log::info!(
                "k-means: {} iterations, converged {}, inertia {:?}",
                c.iterations,
                c.converged,
                c.inertia_history.last()
            );
            built.set
        }
    };
    set.save(&out)?;
    log::info!("wrote {} anchors to {}", set.m(), out.display());
    emit(&json!({
        "anchors": out,
        "method": set.construction().method,
        "seed": seed,
        "m": set.m(),
        "fingerprint": set.fingerprint(),
    }));
    Ok(Status::Done)
}

fn apply_backend_overrides(spec: &mut BackendSpec, args: &ScoreRunArgs) {
    match spec {
        BackendSpec::HashMock { context_budget, .. } => {
            if args.context_budget.is_some() {
                *context_budget = args.context_budget;
            }
        }
        BackendSpec::Table { .. } => {}
        BackendSpec::Http(c) => {
            if let Some(m) = &args.model {
                c.model = m.clone();
            }
            if let Some(v) = &args.api_key_env {
                c.api_key_env = Some(v.clone());
            }
            if let Some(n) = args.context_budget {
                c.context_budget = n;
            }
        }
    }
}

fn score_run(config: &mut RunConfig, args: ScoreRunArgs) -> anyhow::Result<Status> {
    let stop_after = args.stop_after;
    let (fresh, table_out) = (args.fresh, args.table_out.clone());
    if let Some(b) = args.backend.clone() {
        config.backend = Some(b);
    }
    if let Some(spec) = config.backend.as_mut() {
        apply_backend_overrides(spec, &args);
    }
    config.anchors.path = args.anchors.clone().or(config.anchors.path.take());
    config.store = args.store.clone().or(config.store.take());
    let s = &mut config.scoring;
    s.parallelism = args.parallelism.unwrap_or(s.parallelism);
    s.overflow_policy = args.overflow_policy.unwrap_or(s.overflow_policy);
    s.tie_epsilon = args.tie_epsilon.unwrap_or(s.tie_epsilon);
    s.exclude_anchors |= args.exclude_anchors;
    config.outputs.table = table_out.or(config.outputs.table.take());
    apply_dataset(config, args.data);

    if !(config.scoring.tie_epsilon >= 0.0 && config.scoring.tie_epsilon.is_finite()) {
        return Err(config_error("--tie-epsilon must be a non-negative number"));
    }
    if config.scoring.parallelism == 0 {
        return Err(config_error("--parallelism must be at least 1"));
    }
    let spec = require(&config.backend, "--backend")?;
    let anchors_path = require(&config.anchors.path, "--anchors")?;
    let store = require(&config.store, "--store")?;
    log::info!("run config fingerprint {}", config.fingerprint());

    let backend = spec.build()?;
    let ds = dataset(config)?;
    let tpl = template(config)?;
    let anchors = AnchorSet::load(&anchors_path)?;

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("could not install interrupt handler: {e}");
    }
    let options = RunOptions {
        overflow_policy: config.scoring.overflow_policy,
        tie_epsilon: config.scoring.tie_epsilon,
        exclude_anchors: config.scoring.exclude_anchors,
        parallelism: config.scoring.parallelism,
        fresh,
        stop_after,
        cancel: Some(cancel.clone()),
    };
    let summary = score_dataset(backend.as_ref(), &ds, &anchors, &tpl, &store, &options)?;
    if let (Some(table), Some(path)) = (&summary.table, &config.outputs.table) {
        write_file(path, &(table.to_json() + "\n"))?;
        log::info!("wrote golden-score table to {}", path.display());
    }
    emit(&json!({
        "store": store,
        "complete": summary.complete,
        "candidates": summary.candidates,
        "resumed_rows": summary.resumed_rows,
        "new_rows": summary.new_rows,
        "table_fingerprint": summary.table.as_ref().map(|t| &t.run_config_fingerprint),
    }));
    if cancel.load(Ordering::SeqCst) && !summary.complete {
        return Ok(Status::Interrupted);
    }
    Ok(Status::Done)
}

fn read_store(path: &Path) -> anyhow::Result<StoreContents> {
    ScoreStore::read(path)?.ok_or_else(|| data_error(format!("{}: no score store", path.display())))
}

fn complete_table(contents: &StoreContents, path: &Path, tie_epsilon: f64) -> anyhow::Result<GoldenScoreTable> {
    if !contents.is_complete() {
        return Err(data_error(format!(
            "{}: store has {} of {} rows; finish the scoring run first",
            path.display(),
            contents.rows.len(),
            contents.header.candidates
        )));
    }
    Ok(contents.table(tie_epsilon)?)
}

fn store_and_epsilon(config: &mut RunConfig, store: Option<PathBuf>, eps: Option<f64>) -> anyhow::Result<(PathBuf, f64)> {
    config.store = store.or(config.store.take());
    let eps = eps.unwrap_or(config.scoring.tie_epsilon);
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(config_error("--tie-epsilon must be a non-negative number"));
    }
    Ok((require(&config.store, "--store")?, eps))
}

fn select(config: &mut RunConfig, args: SelectArgs) -> anyhow::Result<Status> {
    let (store, eps) = store_and_epsilon(config, args.store, args.tie_epsilon)?;
    apply_dataset(config, args.data);
    config.outputs.subset = args.out.or(config.outputs.subset.take());
    let out = require(&config.outputs.subset, "--out")?;

    let contents = read_store(&store)?;
    let table = complete_table(&contents, &store, eps)?;
    let ds = dataset(config)?;
    if ds.fingerprint() != contents.header.dataset_fingerprint {
        return Err(data_error(format!(
            "dataset fingerprint {} does not match the store's {}",
            ds.fingerprint(),
            contents.header.dataset_fingerprint
        )));
    }
    let manifest: SubsetManifest = match (args.gt, args.le, args.top_frac, args.top_k) {
        (Some(tau), ..) => threshold_subset(&table, tau, Direction::Greater),
        (_, Some(tau), ..) => threshold_subset(&table, tau, Direction::AtMost),
        (_, _, Some(p), _) => top_fraction(&table, p).map_err(|e| config_error(e.to_string()))?,
        (.., Some(k)) => top_k(&table, k),
        _ => return Err(config_error("one of --gt, --le, --top-frac, --top-k is required")),
    };
    let format = args.out_format.map_or_else(|| Format::from_path(&out), Format::from);
    let sidecar = export_subset(&manifest, &ds, &out, format)?;
    emit(&json!({
        "out": out,
        "predicate": sidecar.description,
        "count": manifest.count,
        "source_table_fingerprint": manifest.source_table_fingerprint,
    }));
    Ok(Status::Done)
}

fn report_cmd(config: &mut RunConfig, args: ReportArgs) -> anyhow::Result<Status> {
    let (store, eps) = store_and_epsilon(config, args.store, args.tie_epsilon)?;
    let json_out = args.json_out.or(config.outputs.report.take());
    let contents = read_store(&store)?;
    let table = complete_table(&contents, &store, eps)?;
    let edges = args.edges.unwrap_or_else(default_edges);
    let thresholds = args.thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let rep = report(&table, &edges, &thresholds).map_err(|e| config_error(e.to_string()))?;
    if let Some(path) = &json_out {
        write_file(path, &(rep.to_json() + "\n"))?;
    }
    if let Some(path) = &args.plot_out {
        write_file(path, &rep.plot_data())?;
    }
    if args.json {
        out(&(rep.to_json() + "\n"));
    } else {
        out(&rep.to_text());
    }
    Ok(Status::Done)
}

fn duality_demo(args: DualityArgs) -> anyhow::Result<Status> {
    let params = DemoParams {
        d_in: args.d_in,
        d_out: args.d_out,
        n_ins: args.n_ins,
        n_test: args.n_test,
        seed: args.seed,
        instances: args.instances,
    };
    let rep = run_demo(&params).map_err(|e| config_error(e.to_string()))?;
    emit(&serde_json::to_value(&rep)?);
    Ok(Status::Done)
}

fn inspect(args: InspectArgs) -> anyhow::Result<Status> {
    let path = &args.file;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first: Option<Value> = text.lines().next().and_then(|l| serde_json::from_str(l).ok());
    if first.as_ref().is_some_and(|v| v["kind"] == "header") {
        let c = read_store(path)?;
        emit(&json!({
            "type": "score-store",
            "header": c.header,
            "profile": c.profile.is_some(),
            "rows": c.rows.len(),
            "complete": c.is_complete(),
            "torn_tail": c.torn_tail,
            "checksums": "ok",
        }));
        return Ok(Status::Done);
    }
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| data_error(format!("{}: not a recognised file: {e}", path.display())))?;
    let has = |k: &str| value.get(k).is_some();
    let out = if has("anchors") && has("fingerprint") {
        let set = AnchorSet::load(path)?;
        json!({
            "type": "anchors",
            "construction": set.construction(),
            "m": set.m(),
            "fingerprint": set.fingerprint(),
            "fingerprint_valid": true,
        })
    } else if has("candidate_ids") && has("dataset_fingerprint") {
        let s: ExportSidecar = serde_json::from_value(value).map_err(|e| data_error(e.to_string()))?;
        json!({"type": "export-sidecar", "description": s.description, "count": s.manifest.count,
               "dataset_fingerprint": s.dataset_fingerprint,
               "source_table_fingerprint": s.manifest.source_table_fingerprint})
    } else if has("candidate_ids") {
        let m: SubsetManifest = serde_json::from_value(value).map_err(|e| data_error(e.to_string()))?;
        json!({"type": "manifest", "predicate": m.predicate.to_string(), "count": m.count,
               "source_table_fingerprint": m.source_table_fingerprint})
    } else if has("records") && has("run_config_fingerprint") {
        let t: GoldenScoreTable = serde_json::from_value(value).map_err(|e| data_error(e.to_string()))?;
        json!({"type": "golden-score-table", "records": t.len(), "fingerprint": t.run_config_fingerprint})
    } else if has("bucket_counts") {
        json!({"type": "report", "source_table_fingerprint": value["source_table_fingerprint"],
               "summary": value["summary"]})
    } else if let Ok(cfg) = serde_json::from_value::<RunConfig>(value) {
        json!({"type": "run-config", "fingerprint": cfg.fingerprint()})
    } else {
        return Err(data_error(format!("{}: not a recognised file", path.display())));
    };
    emit(&out);
    Ok(Status::Done)
}
