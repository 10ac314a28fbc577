use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use stratfit::graph::GraphSpec;
use stratfit::model::{cross_validate, holdout, CvTable};
use stratfit::{Dataset, StratGraph, StratifiedModel};

use crate::config::RunConfig;
use crate::Failure;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Runs `body` against the `--out` file, or standard output.
fn with_output<F>(cfg: &RunConfig, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Failure>,
{
    match &cfg.out {
        Some(path) => {
            let mut w = create(path)?;
            body(&mut w)?;
            w.flush().map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush().map_err(|e| Failure::Data(format!("standard output: {e}")))
        }
    }
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(format!("writing output: {e}"))
}

fn load_graph(cfg: &RunConfig) -> Result<StratGraph, Failure> {
    let path = cfg.require(&cfg.graph, "graph")?;
    let g = GraphSpec::load(path)?
        .build()
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    for w in g.warnings() {
        warn!("{}: {w}", path.display());
    }
    Ok(g)
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    let ds = Dataset::load(path).map_err(|e| match e {
        stratfit::Error::Io { .. } => Failure::from(e),
        other => Failure::Data(format!("{}: {other}", path.display())),
    })?;
    info!("{}: {} records", path.display(), ds.len());
    Ok(ds)
}

fn load_model(cfg: &RunConfig) -> Result<StratifiedModel, Failure> {
    let path = cfg.require(&cfg.model_in, "model-in")?;
    StratifiedModel::load(path).map_err(|e| match e {
        stratfit::Error::Io { .. } => Failure::from(e),
        other => Failure::Data(format!("{}: {other}", path.display())),
    })
}

/// Refuses data with keys outside the model graph, naming all of them.
fn check_keys(model: &StratifiedModel, data: &Dataset, path: &Path) -> Result<(), Failure> {
    let missing = data.unknown_keys(model.graph())?;
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = missing.iter().take(20).map(|k| k.to_string()).collect();
    let more = if missing.len() > shown.len() {
        format!(" and {} more", missing.len() - shown.len())
    } else {
        String::new()
    };
    Err(Failure::Data(format!(
        "{}: {} stratification key(s) not in the model graph: {}{more}",
        path.display(),
        missing.len(),
        shown.join(", ")
    )))
}

fn template(cfg: &RunConfig, data: &Dataset) -> Result<StratifiedModel, Failure> {
    let graph = load_graph(cfg)?;
    let loss = cfg.loss_model(data.n_features(), data.outcome_dim())?;
    if !loss.kind.uses_features() && data.n_features() > 0 {
        warn!("loss {:?} ignores the {} feature column(s)", loss.kind, data.n_features());
    }
    if !data.has_outcomes() {
        return Err(Failure::Data("data has no outcome column ('y' or 'y:<name>')".into()));
    }
    Ok(StratifiedModel::new(loss, cfg.reg.clone(), graph)?)
}

pub fn fit(cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.require(&cfg.model_out, "model-out")?;
    let data = load_data(cfg.require(&cfg.data, "data")?)?;
    let model = template(cfg, &data)?;
    let res = model.fit(&data, &cfg.fit_options())?;
    res.model.save(out)?;

    let s = &res.report.solver;
    let objective = res.report.objective.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    eprintln!(
        "fit: {} iterations, {}, r={:.3e} s={:.3e} objective={objective} in {:.3} s",
        s.iterations,
        if s.converged { "converged" } else { "NOT converged" },
        s.r_norm,
        s.s_norm,
        s.wall_time_secs
    );
    if s.inner.prox_not_converged + s.inner.cg_not_converged > 0 {
        warn!(
            "{} proximal and {} linear solves stopped at their iteration caps",
            s.inner.prox_not_converged, s.inner.cg_not_converged
        );
    }
    if let Some(path) = &cfg.report {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &res.report).map_err(|e| Failure::Data(e.to_string()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    if s.converged {
        Ok(())
    } else {
        eprintln!(
            "warning: tolerance not reached after {} iterations; best iterate written to {}",
            s.iterations,
            out.display()
        );
        Err(Failure::NotConverged)
    }
}

pub fn predict(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let path = cfg.require(&cfg.data, "data")?;
    let data = load_data(path)?;
    check_keys(&model, &data, path)?;
    let preds = model
        .predict_dataset(&data)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    with_output(cfg, |w| {
        let mut out = csv::Writer::from_writer(w);
        let header = data
            .key_names()
            .iter()
            .map(|n| format!("z:{n}"))
            .chain(model.loss().prediction_columns());
        out.write_record(header).map_err(csv_err)?;
        for (i, p) in preds.iter().enumerate() {
            let values = p.values();
            let row = data.key(i).0.iter().cloned().chain(values.iter().map(|v| v.to_string()));
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Failure::Data(format!("writing output: {e}")))
    })
}

pub fn score(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let path = cfg.require(&cfg.data, "data")?;
    let data = load_data(path)?;
    check_keys(&model, &data, path)?;
    let metric = cfg.metric.unwrap_or(model.loss().kind.default_metric());
    let value = model
        .score(&data, metric)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    with_output(cfg, |w| {
        writeln!(w, "{metric} {value}").map_err(|e| Failure::Data(format!("writing output: {e}")))
    })
}

pub fn cv(cfg: &RunConfig) -> Result<(), Failure> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Failure::Usage("missing --grid (or 'grid' in the config file)".into()))?;
    let data = load_data(cfg.require(&cfg.data, "data")?)?;
    let template = template(cfg, &data)?;
    let table: CvTable = match &cfg.validation {
        Some(vpath) => {
            let val = load_data(vpath)?;
            check_keys(&template, &val, vpath)?;
            holdout(&template, &data, &val, grid, &cfg.fit_options(), cfg.metric)?
        }
        None => cross_validate(&template, &data, grid, &cfg.cv_options())?,
    };
    for f in &table.empty_folds {
        warn!("fold {f} had no validation records");
    }
    if table.rows.iter().any(|r| !r.converged) {
        warn!("some fits stopped at the iteration cap; see the 'converged' column");
    }
    if let Some(best) = table.best_row() {
        eprintln!(
            "cv: best cell laplacian_scale={} regularizer={} {}={}",
            best.cell.laplacian_scale,
            best.cell.reg_label(),
            table.metric,
            best.mean
        );
    }
    with_output(cfg, |w| table.write_csv(w).map_err(Failure::from))
}

pub fn export(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let params = model.params().ok_or_else(|| {
        Failure::Data(format!(
            "{}: model has not been fitted",
            cfg.model_in.as_deref().unwrap_or(Path::new("")).display()
        ))
    })?;
    let g = model.graph();
    let key_names: Vec<String> = if g.key_names().is_empty() {
        (0..g.key_arity()).map(|i| format!("k{i}")).collect()
    } else {
        g.key_names().to_vec()
    };
    with_output(cfg, |w| {
        let mut out = csv::Writer::from_writer(w);
        let header = key_names
            .iter()
            .map(|n| format!("z:{n}"))
            .chain((0..params.cols()).map(|j| format!("theta:{j}")));
        out.write_record(header).map_err(csv_err)?;
        for (k, key) in g.nodes().iter().enumerate() {
            let row = key.0.iter().cloned().chain(params.row(k).iter().map(|v| v.to_string()));
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Failure::Data(format!("writing output: {e}")))
    })
}

pub fn graph(cfg: &RunConfig) -> Result<(), Failure> {
    let g = load_graph(cfg)?;
    let (components, _) = g.components();
    eprintln!(
        "graph: {} nodes, {} edges, {} component(s)",
        g.num_nodes(),
        g.num_edges(),
        components
    );
    let mut text = serde_json::to_string_pretty(&GraphSpec::explicit(&g)).map_err(|e| Failure::Data(e.to_string()))?;
    text.push('\n');
    with_output(cfg, |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("writing output: {e}")))
    })
}
