//! Implementations of the six commands. Each resolves its configuration,
//! pins the worker pool size, does the work, writes artifacts into the
//! output directory, and persists the resolved configuration for
//! provenance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lowfer::model::count_parameters;
use lowfer::verify::{run as run_suites, Suite, SuiteReport};
use lowfer::{
    evaluate, evaluate_per_relation, load_checkpoint, load_dataset, perturb_and_evaluate,
    save_checkpoint, train, Hyperparams, KnowledgeGraph, ModelParams,
};

use crate::config::RunConfig;
use crate::{
    CommonArgs, EvaluateArgs, ParamCountArgs, PerturbArgs, SweepArgs, TrainArgs, VerifyArgs,
};

/// Command failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Usage or configuration problem; exits 2.
    Usage(String),
    /// Runtime or verification failure; exits 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => m,
        }
    }
}

/// Maps library errors onto exit codes: bad inputs and configuration are
/// usage errors; mid-run numerical or consistency failures are runtime
/// failures.
fn classify(err: lowfer::Error) -> CliError {
    use lowfer::Error::*;
    match err {
        Config { .. } | Io { .. } | MalformedTriple { .. } | UnknownLabel { .. }
        | Checkpoint { .. } | Dimension { .. } => CliError::Usage(err.to_string()),
        SvdConvergence { .. } | NonFiniteLoss { .. } | FilterInconsistent { .. } => {
            CliError::Failure(err.to_string())
        }
    }
}

fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(preset) = &common.preset {
        cfg.apply_preset(preset).map_err(CliError::Usage)?;
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(CliError::Usage)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        cfg.threads = threads;
    }
    Ok(cfg)
}

/// Sizes the global worker pool. First call wins; later calls are no-ops,
/// which is fine for one command per process.
fn init_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

fn dataset_dir(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| CliError::Usage("no dataset directory (set --data or the 'data' config key)".into()))
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn persist_config(cfg: &RunConfig) -> Result<(), CliError> {
    write_artifact(&cfg.out, "resolved-config.txt", &cfg.to_flat_text())?;
    Ok(())
}

fn load_graph(dir: &Path) -> Result<KnowledgeGraph, CliError> {
    load_dataset(dir).map_err(classify)
}

/// Rejects a checkpoint whose shape cannot score the dataset.
fn check_dims(
    params: &ModelParams,
    hyper: &Hyperparams,
    n_relations: usize,
    kg: &KnowledgeGraph,
) -> Result<(), CliError> {
    if params.entity.rows() != kg.n_entities() || n_relations != kg.n_relations() {
        return Err(CliError::Usage(format!(
            "checkpoint shape ({} entities, {} relations, entity_dim {}) does not match dataset ({} entities, {} relations)",
            params.entity.rows(),
            n_relations,
            hyper.entity_dim,
            kg.n_entities(),
            kg.n_relations()
        )));
    }
    Ok(())
}

fn pick_split<'a>(kg: &'a KnowledgeGraph, split: &str) -> Result<&'a [lowfer::Triple], CliError> {
    let triples = match split {
        "train" => &kg.train,
        "valid" => &kg.valid,
        "test" => &kg.test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split '{other}' (expected train, valid, or test)"
            )))
        }
    };
    if triples.is_empty() {
        return Err(CliError::Usage(format!("split '{split}' is empty")));
    }
    Ok(triples)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    args.overrides.apply(&mut cfg);
    init_threads(cfg.threads);
    let data = dataset_dir(&cfg, &None)?;
    cfg.data = Some(data.clone());
    let kg = load_graph(&data)?;
    log::info!(
        "training on {} triples ({} entities, {} relations) for {} epochs",
        kg.train.len(),
        kg.n_entities(),
        kg.n_relations(),
        cfg.epochs
    );
    persist_config(&cfg)?;
    let train_config = cfg.train_config();
    let output = train(&kg, &train_config).map_err(classify)?;
    let checkpoint_path = cfg.out.join("checkpoint.lfer");
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", cfg.out.display())))?;
    save_checkpoint(&checkpoint_path, &output.params, &train_config.hyper).map_err(classify)?;
    let history_json = serde_json::to_string_pretty(&output.history)
        .map_err(|e| CliError::Failure(format!("cannot serialize history: {e}")))?;
    write_artifact(&cfg.out, "history.json", &history_json)?;
    let final_loss = output.history.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs; final epoch loss {final_loss:.6}; wrote {} and history.json",
        cfg.epochs,
        checkpoint_path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    init_threads(cfg.threads);
    let data = dataset_dir(&cfg, &None)?;
    cfg.data = Some(data.clone());
    let kg = load_graph(&data)?;
    let (params, hyper, n_relations) = load_checkpoint(&args.checkpoint).map_err(classify)?;
    check_dims(&params, &hyper, n_relations, &kg)?;
    let triples = pick_split(&kg, &args.split)?;
    let filter = kg.filter_index();
    persist_config(&cfg)?;
    let json = if args.per_relation {
        let report = evaluate_per_relation(&params, &hyper, triples, &filter, &kg.vocab)
            .map_err(classify)?;
        serde_json::to_string_pretty(&report)
    } else {
        let report =
            evaluate(&params, &hyper, triples, &filter, kg.n_relations()).map_err(classify)?;
        serde_json::to_string_pretty(&report)
    }
    .map_err(|e| CliError::Failure(format!("cannot serialize report: {e}")))?;
    write_artifact(&cfg.out, "report.json", &json)?;
    println!("{json}");
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let cfg = resolve(&args.common)?;
    init_threads(cfg.threads);
    let suite = Suite::from_token(&args.suite).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown suite '{}' (expected one of: {})",
            args.suite,
            Suite::tokens().join(", ")
        ))
    })?;
    let reports: Vec<SuiteReport> = run_suites(suite, cfg.seed);
    let json = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Failure(format!("cannot serialize reports: {e}")))?;
    persist_config(&cfg)?;
    write_artifact(&cfg.out, "report.json", &json)?;
    println!("{json}");
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.cases.iter().filter(|c| !c.passed).map(|c| {
                format!(
                    "{}/{} (discrepancy {:.3e}, tolerance {:.1e})",
                    r.suite, c.case, c.max_discrepancy, c.tolerance
                )
            })
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "verification failed: {}",
            failed.join("; ")
        )))
    }
}

pub fn cmd_param_count(args: &ParamCountArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    args.overrides.apply(&mut cfg);
    if cfg.rank == 0 || cfg.entity_dim == 0 || cfg.relation_dim == 0 {
        return Err(CliError::Usage(
            "entity_dim, relation_dim, and rank must all be positive".into(),
        ));
    }
    let (n_entities, n_relations) = match (args.entities, args.relations) {
        (Some(e), Some(r)) => (e, r),
        (None, None) => {
            let data = dataset_dir(&cfg, &args.data)?;
            let kg = load_graph(&data)?;
            (kg.n_entities() as u64, kg.n_relations() as u64)
        }
        _ => {
            return Err(CliError::Usage(
                "provide both --entities and --relations, or neither (with --data)".into(),
            ))
        }
    };
    if n_entities == 0 || n_relations == 0 {
        return Err(CliError::Usage("entity and relation counts must be positive".into()));
    }
    let exact = count_parameters(
        n_entities,
        n_relations,
        cfg.entity_dim as u64,
        cfg.relation_dim as u64,
        cfg.rank as u64,
        args.include_reciprocals,
    );
    let rounded = (exact as f64 / 100_000.0).round() / 10.0;
    println!("{exact} ({rounded:.1}M)");
    Ok(())
}

/// One CSV field with separators and line breaks stripped, so failure
/// messages never break the row structure.
fn sanitize_csv(text: &str) -> String {
    text.replace(['\n', '\r'], " ").replace(',', ";")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    args.overrides.apply(&mut cfg);
    init_threads(cfg.threads);
    let data = dataset_dir(&cfg, &None)?;
    cfg.data = Some(data.clone());
    let kg = load_graph(&data)?;
    let ks = if args.ks.is_empty() { vec![cfg.rank] } else { args.ks.clone() };
    let entity_dims = if args.entity_dims.is_empty() {
        vec![cfg.entity_dim]
    } else {
        args.entity_dims.clone()
    };
    let relation_dims = if args.relation_dims.is_empty() {
        vec![cfg.relation_dim]
    } else {
        args.relation_dims.clone()
    };
    if ks.contains(&0) || entity_dims.contains(&0) || relation_dims.contains(&0) {
        return Err(CliError::Usage("grid values must be positive".into()));
    }
    persist_config(&cfg)?;
    let split = pick_split(&kg, "test").or_else(|_| pick_split(&kg, "valid"))?;
    let filter = kg.filter_index();
    let mut csv = String::from(
        "k,entity_dim,relation_dim,param_count,mrr,hits_at_1,hits_at_3,hits_at_10,status\n",
    );
    for &k in &ks {
        for &d_e in &entity_dims {
            for &d_r in &relation_dims {
                let mut point = cfg.clone();
                point.rank = k;
                point.entity_dim = d_e;
                point.relation_dim = d_r;
                let count = count_parameters(
                    kg.n_entities() as u64,
                    kg.n_relations() as u64,
                    d_e as u64,
                    d_r as u64,
                    k as u64,
                    true,
                );
                log::info!("sweep point k={k} entity_dim={d_e} relation_dim={d_r} ({count} parameters)");
                let outcome = train(&kg, &point.train_config())
                    .map_err(classify)
                    .and_then(|out| {
                        evaluate(&out.params, &point.hyperparams(), split, &filter, kg.n_relations())
                            .map_err(classify)
                    });
                match outcome {
                    Ok(report) => {
                        let _ = writeln!(
                            csv,
                            "{k},{d_e},{d_r},{count},{},{},{},{},ok",
                            report.mrr, report.hits_at_1, report.hits_at_3, report.hits_at_10
                        );
                    }
                    Err(err) => {
                        let _ = writeln!(
                            csv,
                            "{k},{d_e},{d_r},{count},,,,,{}",
                            sanitize_csv(err.message())
                        );
                    }
                }
            }
        }
    }
    let path = write_artifact(&cfg.out, "sweep.csv", &csv)?;
    println!("wrote {} ({} grid points)", path.display(), ks.len() * entity_dims.len() * relation_dims.len());
    Ok(())
}

pub fn cmd_perturb(args: &PerturbArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    init_threads(cfg.threads);
    let data = dataset_dir(&cfg, &None)?;
    cfg.data = Some(data.clone());
    let kg = load_graph(&data)?;
    let (params, hyper, n_relations) = load_checkpoint(&args.checkpoint).map_err(classify)?;
    check_dims(&params, &hyper, n_relations, &kg)?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    for &sigma in &args.sigmas {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(CliError::Usage(format!("noise levels must be non-negative, got {sigma}")));
        }
    }
    let triples = pick_split(&kg, "test").or_else(|_| pick_split(&kg, "valid"))?;
    let filter = kg.filter_index();
    persist_config(&cfg)?;
    let mut csv = String::from("sigma,seed,mrr\n");
    for i in 0..args.seeds {
        let seed = cfg.seed + i;
        let points = perturb_and_evaluate(
            &params,
            &hyper,
            triples,
            &filter,
            kg.n_relations(),
            &args.sigmas,
            seed,
        )
        .map_err(classify)?;
        for p in points {
            let _ = writeln!(csv, "{},{seed},{}", p.variance, p.mrr);
        }
    }
    let path = write_artifact(&cfg.out, "perturb.csv", &csv)?;
    println!(
        "wrote {} ({} noise levels x {} seeds)",
        path.display(),
        args.sigmas.len(),
        args.seeds
    );
    Ok(())
}
