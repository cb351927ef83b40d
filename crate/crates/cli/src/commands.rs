use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::json;
use wormgraph::data::{load_recording, prepare_recording, save_recording, select_neurons, windowize, RecordingFormat, Selection, Window, WormRecording};
use wormgraph::evaluation::{
    accuracy, accuracy_table, confusion_matrix, confusion_table, pca_project, pca_table, per_step_mse, per_step_table,
    predict_windows, spectrum, RunMetrics, Spread,
};
use wormgraph::models::{check_neuron_count, encode_edges, load_checkpoint, load_connectome_edges, save_checkpoint, weight_correlation, EdgeMode, ModelState, Task};
use wormgraph::parallel::Execution;
use wormgraph::synth::generate_cohort;
use wormgraph::training::{cross_validate, init_seed, run_seed, train, ModelTemplate};

use crate::config::{scheme_for, CliConfig, Manifest};
use crate::error::{CliError, Result};

pub struct Context {
    pub command: &'static str,
    pub config: CliConfig,
    pub out: PathBuf,
    pub force: bool,
    pub resume: bool,
    pub execution: Execution,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(path, e))
    }

    fn manifest(&self) -> String {
        let mut config = self.config.clone();
        config.out = None;
        Manifest::new(self.command, &config).to_json()
    }

    /// Claims the output directory for `files`. Returns `true` when a
    /// resumed run already produced all of them.
    fn begin(&self, files: &[String]) -> Result<bool> {
        let manifest = self.manifest();
        let manifest_path = self.path("manifest.json");
        if self.resume && manifest_path.exists() {
            let previous = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
            if previous != manifest {
                return Err(CliError::usage(format!(
                    "{} was written by a different configuration; rerun with --force to start over",
                    manifest_path.display()
                )));
            }
            return Ok(files.iter().all(|f| self.path(f).exists()));
        }
        if !self.force {
            if let Some(existing) = std::iter::once(&"manifest.json".to_string())
                .chain(files)
                .map(|f| self.path(f))
                .find(|p| p.exists())
            {
                return Err(CliError::Exists(existing));
            }
        }
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        self.write("manifest.json", manifest)?;
        Ok(false)
    }
}

fn is_recording_file(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str());
    let name = path.file_name().and_then(|n| n.to_str());
    matches!(ext, Some("json" | "wrec")) && name != Some("manifest.json")
}

fn recording_paths(config: &CliConfig) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in &config.recordings {
        if entry.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(entry)
                .map_err(|e| CliError::io(entry, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_recording_file(p))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(entry.clone());
        }
    }
    if paths.is_empty() {
        return Err(CliError::usage("no recordings given; set `recordings` in the config or pass --data"));
    }
    Ok(paths)
}

fn load_recordings(config: &CliConfig) -> Result<Vec<WormRecording>> {
    let mut recs: Vec<WormRecording> = Vec::new();
    for path in recording_paths(config)? {
        let rec = load_recording(&path, RecordingFormat::from_path(&path))?;
        let rec = if config.normalize() {
            prepare_recording(&rec, config.neurons.as_deref(), Selection::Keep)?
        } else if let Some(names) = &config.neurons {
            select_neurons(&rec, names, Selection::Keep)?
        } else {
            rec
        };
        if recs.iter().any(|r| r.worm_id == rec.worm_id) {
            return Err(CliError::usage(format!("{}: worm id `{}` appears twice", path.display(), rec.worm_id)));
        }
        recs.push(rec);
    }
    Ok(recs)
}

fn template(config: &CliConfig, recs: &[WormRecording]) -> Result<ModelTemplate> {
    let first = &recs[0];
    let model = config.model_config(first.n_neurons());
    model.validate()?;
    let connectome = if model.edge_mode == EdgeMode::Connectome {
        let path = config
            .connectome
            .as_ref()
            .ok_or_else(|| CliError::usage("edge_mode `connectome` needs a connectome file"))?;
        Some(load_connectome_edges(path, &first.neuron_names, model.include_self_edges)?.weights)
    } else {
        None
    };
    Ok(ModelTemplate { config: model, connectome })
}

fn checkpoint(config: &CliConfig) -> Result<(PathBuf, ModelState)> {
    let path = config
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::usage("no checkpoint given; set `checkpoint` in the config or pass --checkpoint"))?;
    let model = load_checkpoint(&path)?;
    Ok((path, model))
}

fn check_shapes(path: &Path, model: &ModelState, recs: &[WormRecording]) -> Result<()> {
    for rec in recs {
        check_neuron_count(model, rec.n_neurons()).map_err(|e| {
            CliError::usage(format!("checkpoint {} and recording `{}` disagree: {e}", path.display(), rec.worm_id))
        })?;
    }
    Ok(())
}

fn json_line(run: &RunMetrics) -> String {
    serde_json::to_string(run).expect("run metrics serialize")
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

fn spread_table(header: &str, columns: &[(&str, &[Spread])]) -> String {
    let mut out = String::from(header);
    for (name, _) in columns {
        write!(out, "\t{name}_mean\t{name}_std").unwrap();
    }
    out.push('\n');
    let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for s in 0..rows {
        write!(out, "{}", s + 1).unwrap();
        for (_, c) in columns {
            match c.get(s) {
                Some(v) => write!(out, "\t{}\t{}", v.mean, v.std).unwrap(),
                None => out.push_str("\tNA\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

fn matrix_table(names: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("target\\source");
    for n in names {
        write!(out, "\t{n}").unwrap();
    }
    out.push('\n');
    for (name, row) in names.iter().zip(m) {
        out.push_str(name);
        for v in row {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn gen_synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let n = cfg.n_worms.unwrap_or(5);
    if n == 0 {
        return Err(CliError::usage("n_worms must be positive"));
    }
    let (format, ext) = match cfg.format.as_deref() {
        None | Some("json") => (RecordingFormat::Json, "json"),
        Some("text") => (RecordingFormat::Text, "wrec"),
        Some(other) => return Err(CliError::usage(format!("format: expected `json` or `text`, got `{other}`"))),
    };
    let worms = generate_cohort(&cfg.synth, n, cfg.seed.unwrap_or(0))?;
    let files: Vec<String> = worms.iter().map(|w| format!("{}.{ext}", w.worm_id)).collect();
    if ctx.begin(&files)? {
        println!("{}: already complete", ctx.out.display());
        return Ok(());
    }
    for (worm, file) in worms.iter().zip(&files) {
        save_recording(worm, &ctx.path(file), format)?;
    }
    println!("wrote {n} recordings to {}", ctx.out.display());
    Ok(())
}

pub fn train_cmd(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let recs = load_recordings(cfg)?;
    let ids: Vec<String> = recs.iter().map(|r| r.worm_id.clone()).collect();
    let plan = cfg.plan(&ids);
    let tcfg = cfg.train_config();
    let template = template(cfg, &recs)?;
    let fold = cfg.fold.unwrap_or(0);
    let table = if plan.task.scheme().is_some() { "confusion.tsv" } else { "mse.tsv" };
    let files: Vec<String> = ["runs.jsonl", "checkpoint.json", "final_checkpoint.json", "history.tsv", table]
        .map(String::from)
        .to_vec();
    if ctx.begin(&files)? {
        println!("{}: already complete", ctx.out.display());
        return Ok(());
    }
    let model = template.instantiate(init_seed(run_seed(tcfg.seed, 0, fold)))?;
    let outcome = train(model, &plan, &tcfg, &recs, fold)?;
    let m = &outcome.metrics;
    ctx.write("runs.jsonl", json_line(m) + "\n")?;
    save_checkpoint(&outcome.state.best_checkpoint, &ctx.path("checkpoint.json"))?;
    save_checkpoint(&outcome.final_model, &ctx.path("final_checkpoint.json"))?;
    let mut history = String::from("epoch\ttrain_loss\tval_loss\tlr\n");
    for e in &outcome.state.history {
        writeln!(history, "{}\t{}\t{}\t{}", e.epoch, e.train_loss, e.val_loss, e.lr).unwrap();
    }
    ctx.write("history.tsv", history)?;
    match plan.task.scheme() {
        Some(scheme) => {
            let text = match &m.confusion {
                Some(cm) => confusion_table(cm, &scheme.class_names())?,
                None => String::new(),
            };
            ctx.write(table, text)?;
            println!(
                "fold {fold}: train {} validation {} test {} (best epoch {})",
                fmt(m.accuracy_train),
                fmt(m.accuracy_val),
                fmt(m.accuracy_test),
                m.best_epoch
            );
        }
        None => {
            let steps: Vec<Spread> = m
                .per_step_mse
                .iter()
                .flatten()
                .filter_map(|&v| Spread::of(&[v]))
                .collect();
            ctx.write(table, spread_table("step", &[("mse", &steps)]))?;
            println!("fold {fold}: best validation loss {} (epoch {})", m.best_val_loss, m.best_epoch);
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn read_runs(path: &Path) -> Result<Vec<RunMetrics>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
}

pub fn cross_validate_cmd(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let recs = load_recordings(cfg)?;
    let ids: Vec<String> = recs.iter().map(|r| r.worm_id.clone()).collect();
    let plan = cfg.plan(&ids);
    let tcfg = cfg.train_config();
    let template = template(cfg, &recs)?;
    let table = if plan.task.scheme().is_some() { "accuracy.tsv" } else { "mse.tsv" };
    let files: Vec<String> = ["runs.jsonl", "summary.json", table].map(String::from).to_vec();
    if ctx.begin(&files)? {
        println!("{}: already complete", ctx.out.display());
        return Ok(());
    }
    let runs_path = ctx.path("runs.jsonl");
    let completed = if ctx.resume { read_runs(&runs_path)? } else { Vec::new() };
    let file = OpenOptions::new()
        .create(true)
        .append(ctx.resume)
        .write(true)
        .truncate(!ctx.resume)
        .open(&runs_path)
        .map_err(|e| CliError::io(&runs_path, e))?;
    let log = Mutex::new(file);
    let cv = cross_validate(&template, &plan, &tcfg, &recs, ctx.execution, &completed, |run| {
        let mut f = log.lock().expect("run log lock");
        writeln!(f, "{}", json_line(run))
            .and_then(|_| f.flush())
            .map_err(|e| wormgraph::Error::io(&runs_path, e))
    })?;
    drop(log);
    let mut sorted = String::new();
    for run in &cv.runs {
        sorted.push_str(&json_line(run));
        sorted.push('\n');
    }
    ctx.write("runs.jsonl", sorted)?;
    ctx.write("summary.json", pretty(&cv.summary))?;
    let s = &cv.summary;
    if plan.task.scheme().is_some() {
        let rows = [
            ("train".to_string(), s.accuracy_train),
            ("validation".to_string(), s.accuracy_val),
            ("test".to_string(), s.accuracy_test),
            ("generalization".to_string(), s.accuracy_generalization),
        ];
        ctx.write(table, accuracy_table(&rows))?;
        println!(
            "{} runs ({} resumed): test accuracy {}",
            s.runs,
            completed.len(),
            s.accuracy_test.map_or("NA".into(), |a| format!("{:.4} ± {:.4}", a.mean, a.std))
        );
    } else {
        ctx.write(
            table,
            spread_table("step", &[("validation", &s.per_step_mse), ("generalization", &s.generalization_mse)]),
        )?;
        println!("{} runs ({} resumed)", s.runs, completed.len());
    }
    Ok(())
}

fn all_windows(recs: &[WormRecording], window_len: usize) -> Result<Vec<Vec<Window>>> {
    Ok(recs.iter().map(|r| windowize(r, window_len, 0)).collect::<wormgraph::Result<_>>()?)
}

pub fn eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let (path, model) = checkpoint(cfg)?;
    let recs = load_recordings(cfg)?;
    check_shapes(&path, &model, &recs)?;
    let tcfg = cfg.train_config();
    if model.config.task == Task::Predict {
        let files: Vec<String> = ["eval.json", "mse.tsv"].map(String::from).to_vec();
        if ctx.begin(&files)? {
            return Ok(());
        }
        let refs: Vec<&WormRecording> = recs.iter().collect();
        let m = per_step_mse(&model, &refs, tcfg.eval_rollout, cfg.rollout.stride, ctx.execution)?;
        ctx.write("mse.tsv", per_step_table(&m))?;
        ctx.write(
            "eval.json",
            pretty(&json!({ "checkpoint": path, "per_step_mse": m.per_step, "mean_mse": m.mean() })),
        )?;
        println!("mean rollout MSE over {} steps: {}", m.per_step.len(), m.mean());
        return Ok(());
    }
    let scheme = scheme_for(model.config.n_states).ok_or_else(|| {
        CliError::usage(format!("checkpoint {}: no label scheme has {} states", path.display(), model.config.n_states))
    })?;
    let files: Vec<String> = ["eval.json", "confusion.tsv", "accuracy.tsv"].map(String::from).to_vec();
    if ctx.begin(&files)? {
        return Ok(());
    }
    let windows = all_windows(&recs, tcfg.window_len)?;
    let (mut preds, mut targets) = (Vec::new(), Vec::new());
    let mut rows = Vec::new();
    let mut per_worm = serde_json::Map::new();
    for (rec, ws) in recs.iter().zip(&windows) {
        let refs: Vec<&Window> = ws.iter().collect();
        let (p, t) = predict_windows(&model, &refs, scheme)?;
        let acc = accuracy(&p, &t)?;
        per_worm.insert(rec.worm_id.clone(), json!(acc));
        rows.push((rec.worm_id.clone(), acc.and_then(|a| Spread::of(&[a]))));
        preds.extend(p);
        targets.extend(t);
    }
    let overall = accuracy(&preds, &targets)?;
    let cm = confusion_matrix(&preds, &targets, scheme.n_states())?;
    rows.push(("all".into(), overall.and_then(|a| Spread::of(&[a]))));
    ctx.write("accuracy.tsv", accuracy_table(&rows))?;
    ctx.write("confusion.tsv", confusion_table(&cm, &scheme.class_names())?)?;
    ctx.write(
        "eval.json",
        pretty(&json!({ "checkpoint": path, "accuracy": overall, "per_worm": per_worm, "confusion": cm })),
    )?;
    println!("accuracy {}", fmt(overall));
    Ok(())
}

pub fn rollout_cmd(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let (path, model) = checkpoint(cfg)?;
    let recs = load_recordings(cfg)?;
    check_shapes(&path, &model, &recs)?;
    let files: Vec<String> = ["rollout.tsv", "rollout.json"].map(String::from).to_vec();
    if ctx.begin(&files)? {
        return Ok(());
    }
    let refs: Vec<&WormRecording> = recs.iter().collect();
    let m = per_step_mse(&model, &refs, cfg.rollout.steps, cfg.rollout.stride, ctx.execution)?;
    ctx.write("rollout.tsv", per_step_table(&m))?;
    ctx.write(
        "rollout.json",
        pretty(&json!({
            "checkpoint": path,
            "steps": cfg.rollout.steps,
            "stride": cfg.rollout.stride,
            "per_step_mse": m.per_step,
            "per_channel_mse": m.per_channel,
        })),
    )?;
    println!("{}-step rollout MSE: {}", m.per_step.len(), m.per_step.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn pca_cmd(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let recs = load_recordings(cfg)?;
    let k = cfg.pca.components;
    let mut files = vec!["pca.json".to_string()];
    for r in &recs {
        files.push(format!("pca_{}.tsv", r.worm_id));
        files.push(format!("spectrum_{}.tsv", r.worm_id));
    }
    if ctx.begin(&files)? {
        return Ok(());
    }
    let mut summary = serde_json::Map::new();
    for rec in &recs {
        let proj = pca_project(&rec.derivatives.view(), k)?;
        let spec = spectrum(&rec.derivatives.view())?;
        ctx.write(&format!("pca_{}.tsv", rec.worm_id), pca_table(&proj, &rec.labels)?)?;
        let mut table = String::from("component\teigenvalue\texplained\tcumulative\n");
        let mut cumulative = 0.0;
        for (i, (v, e)) in spec.eigenvalues.iter().zip(&spec.explained).enumerate() {
            cumulative += e;
            writeln!(table, "{}\t{v}\t{e}\t{cumulative}", i + 1).unwrap();
        }
        ctx.write(&format!("spectrum_{}.tsv", rec.worm_id), table)?;
        let top: f64 = proj.explained.iter().sum();
        summary.insert(rec.worm_id.clone(), json!({ "explained": proj.explained, "top_k": top }));
        println!("{}: top {k} components explain {:.2}%", rec.worm_id, 100.0 * top);
    }
    ctx.write("pca.json", pretty(&summary))?;
    Ok(())
}

pub fn edges(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let (path, model) = checkpoint(cfg)?;
    if !model.config.infers_edges() {
        return Err(CliError::usage(format!(
            "checkpoint {} has no inferred edges to dump (module {:?}, edge mode {:?})",
            path.display(),
            model.config.module_kind,
            model.config.edge_mode
        )));
    }
    let recs = load_recordings(cfg)?;
    check_shapes(&path, &model, &recs)?;
    let names = recs[0].neuron_names.clone();
    let n = names.len();
    let static_edges = model.config.static_edges();
    let mut files: Vec<String> = if static_edges {
        vec!["edges.tsv".into()]
    } else {
        vec!["edges_mean.tsv".into(), "edges_std.tsv".into()]
    };
    files.push("report.json".into());
    if ctx.begin(&files)? {
        return Ok(());
    }
    let windows = all_windows(&recs, cfg.train_config().window_len)?;
    let mut sum = vec![vec![0.0; n]; n];
    let mut sq = vec![vec![0.0; n]; n];
    let mut count = 0usize;
    for w in windows.iter().flatten() {
        for a in encode_edges(&model, &w.features)? {
            for i in 0..n {
                for j in 0..n {
                    let v = a.weights[[i, j]];
                    sum[i][j] += v;
                    sq[i][j] += v * v;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(CliError::usage("recordings are too short for a single window"));
    }
    let c = count as f64;
    let mean: Vec<Vec<f64>> = sum.iter().map(|r| r.iter().map(|v| v / c).collect()).collect();
    let std: Vec<Vec<f64>> = sq
        .iter()
        .zip(&mean)
        .map(|(r, m)| r.iter().zip(m).map(|(s, m)| (s / c - m * m).max(0.0).sqrt()).collect())
        .collect();
    if static_edges {
        ctx.write("edges.tsv", matrix_table(&names, &mean))?;
    } else {
        ctx.write("edges_mean.tsv", matrix_table(&names, &mean))?;
        ctx.write("edges_std.tsv", matrix_table(&names, &std))?;
    }
    let mut report = json!({
        "checkpoint": path,
        "edge_mode": model.config.edge_mode,
        "matrices": count,
        "neurons": names,
    });
    if let Some(cpath) = &cfg.connectome {
        let conn = load_connectome_edges(cpath, &names, false)?.weights;
        let present: Vec<bool> = (0..n)
            .map(|i| (0..n).any(|j| conn[[i, j]] > 0.0 || conn[[j, i]] > 0.0))
            .collect();
        let (mut inferred, mut structural) = (Vec::new(), Vec::new());
        for i in (0..n).filter(|&i| present[i]) {
            for j in (0..n).filter(|&j| j != i && present[j]) {
                inferred.push(mean[i][j]);
                structural.push(conn[[i, j]]);
            }
        }
        let corr = weight_correlation(&inferred, &structural);
        report["connectome"] = json!(cpath);
        report["shared_pairs"] = json!(inferred.len());
        report["correlation"] = json!(corr);
        println!("correlation with connectome over {} pairs: {}", inferred.len(), fmt(corr));
    }
    ctx.write("report.json", pretty(&report))?;
    println!("{count} adjacency matrices summarized");
    Ok(())
}
