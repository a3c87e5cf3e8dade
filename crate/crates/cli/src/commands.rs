use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use macrocause::density::{ConditionalDensity, DensityModel};
use macrocause::designer::{
    execute_plan, learn_observational, merge_by_experiments, plan_experiments, ExperimentPlan, MergeConfig,
    ObservationalModel,
};
use macrocause::learner::{learn, merge_report, LearnConfig, MacroModel};
use macrocause::pipeline::{self, write_json, RunConfig};
use macrocause::subsidiary::{find_subsidiaries, interaction_matrix};
use macrocause::{CausalDataset, DiscreteMlSystem, Error, Mode};
use serde::Serialize;

use crate::exit::{ConfigError, ValidationFailure};
use crate::{Cli, Command, DensitySource, OracleArgs};

const PLAN_FILE: &str = "plan.json";
const OBSERVATIONAL_DIR: &str = "observational";
const RESULTS_DIR: &str = "results";

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.resolved();
    match cli.command {
        Command::Simulate { out, n_per_class } => simulate(with_trials(cfg, n_per_class)?, &out),
        Command::Oracle(args) => oracle(&cfg, &args),
        Command::FitDensity { data, out } => fit_density(&cfg, &data, &out),
        Command::Learn {
            data,
            density,
            out,
            interactive_merge_report,
        } => learn_cmd(&cfg, &data, &density, &out, interactive_merge_report),
        Command::Subsidiary { model, tol, out } => subsidiary(&cfg, &model, tol, out.as_deref()),
        Command::Design {
            data,
            density,
            out,
            per_cell,
            runner_system,
            trials,
        } => design(&cfg, &data, &density, &out, per_cell, runner_system.as_deref(), trials),
        Command::Merge {
            design,
            results,
            out,
            tol,
            min_samples,
        } => merge(&design, results.as_deref(), &out, &MergeConfig { tol, min_samples }),
        Command::ValidateCct {
            n_systems,
            m,
            n,
            k,
            tol,
            out,
        } => validate_cct(&cfg, n_systems, m, n, k, tol, out.as_deref()),
        Command::RunAll { out, n_per_class } => run_all(&with_trials(cfg, n_per_class)?, &out),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(ConfigError("--threads must be at least 1".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --threads {n} ignored");
    Ok(())
}

fn with_trials(mut cfg: RunConfig, n_per_class: Option<usize>) -> Result<RunConfig> {
    if let Some(n) = n_per_class {
        cfg.n_per_class = n;
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_data(dir: &Path) -> Result<CausalDataset> {
    CausalDataset::read_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn load_system(path: &Path) -> Result<DiscreteMlSystem> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.into(),
        detail: e.to_string(),
    })?)
}

/// The density named on the command line, and the learner settings that go
/// with it.
fn density_for(
    src: &DensitySource,
    data: &CausalDataset,
    cfg: &LearnConfig,
) -> Result<(Box<dyn ConditionalDensity>, LearnConfig)> {
    match (&src.density, &src.system) {
        (Some(path), _) => {
            let d = DensityModel::load(path).with_context(|| format!("loading density {}", path.display()))?;
            Ok((Box::new(d), cfg.clone()))
        }
        (None, Some(path)) => {
            let sys = load_system(path)?;
            // Keep the configured seed and cluster budget; the remaining
            // settings follow the exact-density preset.
            let cfg = LearnConfig {
                k_max: cfg.k_max,
                restarts: cfg.restarts,
                seed: cfg.seed,
                ..LearnConfig::exact_density()
            };
            Ok((Box::new(sys.oracle_density(data.mode())), cfg))
        }
        (None, None) => Err(ConfigError("one of --density or --system is required".into()).into()),
    }
}

fn simulate(cfg: RunConfig, out: &Path) -> Result<()> {
    let (data, truth) = pipeline::simulate(&cfg)?;
    data.write_dir(out, Some(cfg.hash()))?;
    truth.write(out)?;
    print_json(&serde_json::json!({
        "out": out,
        "n": data.len(),
        "d_i": data.d_i(),
        "d_j": data.d_j(),
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
    }))
}

fn oracle(cfg: &RunConfig, args: &OracleArgs) -> Result<()> {
    let sys = match &args.system {
        Some(path) => load_system(path)?,
        None => DiscreteMlSystem::random(args.m, args.n, args.k, cfg.seed)?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("system.json"), &sys)?;
    let gt = sys.ground_truth_partitions(args.tol)?;
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "tol": args.tol,
        "partitions": gt,
        "interventional": sys.interventional_table(),
        "observational": sys.observational_table(),
    });
    write_json(&args.out.join("ground_truth.json"), &summary)?;
    if args.samples > 0 {
        let (mode, values) = if args.observational {
            (Mode::Observational, None)
        } else {
            (Mode::Experimental, Some((0..sys.card_i()).collect::<Vec<_>>()))
        };
        let data = sys.sample(args.samples, mode, values.as_deref(), cfg.seed)?;
        data.write_dir(&args.out.join("data"), Some(cfg.hash()))?;
    }
    print_json(&summary["partitions"])
}

fn fit_density(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = read_data(data_dir)?;
    let (model, warnings) = pipeline::fit_density(&data, &cfg.density)?;
    model.save(out)?;
    print_json(&serde_json::json!({
        "out": out,
        "mode": model.mode(),
        "n_train": model.n_train(),
        "bandwidths_i": model.bandwidths_i(),
        "bandwidths_j": model.bandwidths_j(),
        "warnings": warnings,
    }))
}

fn format_divergences(title: &str, m: &[Vec<f64>]) -> String {
    let mut s = format!("{title}\n");
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:9.4}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

fn learn_cmd(cfg: &RunConfig, data_dir: &Path, src: &DensitySource, out: &Path, report: bool) -> Result<()> {
    let data = read_data(data_dir)?;
    let (density, learn_cfg) = density_for(src, &data, &cfg.learn)?;
    let output = learn(&data, density.as_ref(), &learn_cfg)?;
    output.model.save(out)?;
    if report {
        let r = merge_report(&output.pre_merge_tables);
        write_json(&out.join("merge_report.json"), &r)?;
        println!(
            "pre-merge clusters: {} causes, {} effects; merge threshold {}",
            output.pre_merge_tables.n_causes(),
            output.pre_merge_tables.n_effects(),
            learn_cfg.merge_threshold
        );
        print!("{}", format_divergences("cause clusters (symmetrized KL of effect profiles)", &r.cause_divergence));
        print!("{}", format_divergences("effect clusters (symmetrized KL of cause profiles)", &r.effect_divergence));
        for step in &output.model.provenance.merge_log {
            println!(
                "merged {:?} {} into {} at {:.4}",
                step.side, step.absorbed, step.kept, step.divergence
            );
        }
    }
    print_json(&serde_json::json!({
        "out": out,
        "n_causes": output.model.n_causes(),
        "n_effects": output.model.n_effects(),
        "table": output.model.table,
    }))
}

fn subsidiary(cfg: &RunConfig, model_dir: &Path, tol: Option<f64>, out: Option<&Path>) -> Result<()> {
    let model = MacroModel::load(model_dir)?;
    let tol = tol.unwrap_or(cfg.subsidiary_tol);
    let search = find_subsidiaries(&model.table, tol)?;
    let strict: Vec<_> = search.strict().cloned().collect();
    let interactions = interaction_matrix(&strict, &model.table, tol)?;
    let value = serde_json::json!({
        "tol": tol,
        "search": search,
        "strict": strict,
        "non_interacting": interactions,
    });
    match out {
        Some(path) => write_json(path, &value)?,
        None => print_json(&value)?,
    }
    Ok(())
}

fn design(
    cfg: &RunConfig,
    data_dir: &Path,
    src: &DensitySource,
    out: &Path,
    per_cell: usize,
    runner: Option<&Path>,
    trials: usize,
) -> Result<()> {
    let data = read_data(data_dir)?;
    let (density, learn_cfg) = density_for(src, &data, &cfg.learn)?;
    let obs = learn_observational(&data, density.as_ref(), &learn_cfg)?;
    let plan = plan_experiments(&obs, &data, per_cell)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    obs.save(&out.join(OBSERVATIONAL_DIR))?;
    plan.save(&out.join(PLAN_FILE))?;
    if let Some(path) = runner {
        let sys = load_system(path)?;
        let results = execute_plan(&plan, &sys, trials, cfg.seed)?;
        results.write_dir(&out.join(RESULTS_DIR), Some(cfg.hash()))?;
    }
    print_json(&serde_json::json!({
        "out": out,
        "observational_causes": obs.model.n_causes(),
        "observational_effects": obs.model.n_effects(),
        "interventions": plan.interventions.len(),
        "probes": plan.probes.len(),
        "executed": runner.is_some(),
    }))
}

fn merge(design: &Path, results: Option<&Path>, out: &Path, cfg: &MergeConfig) -> Result<()> {
    let obs = ObservationalModel::load(&design.join(OBSERVATIONAL_DIR))?;
    let plan = ExperimentPlan::load(&design.join(PLAN_FILE))?;
    let results_dir = results.map_or_else(|| design.join(RESULTS_DIR), Path::to_path_buf);
    let results = read_data(&results_dir)?;
    let model = merge_by_experiments(&obs, &plan, &results, cfg)?;
    model.save(out)?;
    print_json(&serde_json::json!({
        "out": out,
        "n_causes": model.n_causes(),
        "n_effects": model.n_effects(),
        "table": model.table,
    }))
}

fn validate_cct(cfg: &RunConfig, n_systems: usize, m: usize, n: usize, k: usize, tol: f64, out: Option<&Path>) -> Result<()> {
    let report = pipeline::validate_cct(n_systems, m, n, k, cfg.seed, tol)?;
    match out {
        Some(path) => write_json(path, &report)?,
        None => print_json(&report)?,
    }
    if report.violations() > 0 {
        return Err(ValidationFailure(format!(
            "coarsening violated: {} on I and {} on J among {} feasible systems",
            report.violations_i,
            report.violations_j,
            report.n_systems - report.infeasible
        ))
        .into());
    }
    Ok(())
}

fn run_all(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = pipeline::run_full_pipeline(cfg, out)?;
    let m = &report.metrics;
    print_json(&serde_json::json!({
        "out": out,
        "config_hash": m.config_hash,
        "n_causes": m.n_causes,
        "n_effects": m.n_effects,
        "min_purity": m.evaluation.min_purity(),
        "table_error": m.evaluation.table_error,
        "strict_subsidiaries": m.strict_subsidiaries,
        "warnings": m.warnings,
    }))
}
