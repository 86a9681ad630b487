use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use mdmfed_core::federation::{ClientPopulation, Execution};
use mdmfed_core::inference::{fit, DegeneratePolicy, InferenceConfig};
use mdmfed_core::ingest::{
    build_central_pool, build_clients_with_ids, BinningSpec, CentralPool, RecordTable,
};
use mdmfed_core::json::{fmt_f64, to_string};
use mdmfed_core::metrics::{align_and_score, AlignedNmseReport};
use mdmfed_core::model::{log_likelihood, MdmParams, SampleCountDist};
use mdmfed_core::partition::{
    export_histograms, partition_conditionally_iid, partition_fully_iid, partition_mdm,
    read_plan_clients, write_histograms_csv, SimulatedClient,
};
use mdmfed_core::presets;
use mdmfed_core::sampling::{gen_labelled_federation, RngHandle};
use mdmfed_core::selection::{select_k, select_k_with_validation, SelectionConfig};

use crate::args::*;
use crate::manifest::Manifest;
use crate::UsageError;

pub fn run(cli: &Cli) -> Result<()> {
    let manifest = |name, seed| Manifest::new(name, seed, cli.threads, cli.deterministic);
    let execution = if cli.deterministic {
        Execution::Deterministic
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, manifest("gen-synthetic", Some(a.seed))),
        Command::Ingest(a) => ingest(a, manifest("ingest", None)),
        Command::Infer(a) => infer(a, execution, manifest("infer", Some(a.seed))),
        Command::SelectK(a) => select(a, execution, manifest("select-k", Some(a.seed))),
        Command::Partition(a) => partition(a, manifest("partition", Some(a.seed))),
        Command::ExportHistograms(a) => export(a, manifest("export-histograms", None)),
        Command::Eval(a) => eval(a, manifest("eval", None)),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_population(path: &Path) -> Result<ClientPopulation> {
    ClientPopulation::read_jsonl(open(path)?)
        .with_context(|| format!("reading population {}", path.display()))
}

fn read_params(path: &Path) -> Result<MdmParams> {
    MdmParams::from_json(&read_text(path)?)
        .with_context(|| format!("reading params {}", path.display()))
}

fn write_population(pop: &ClientPopulation, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    pop.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn inference_config(k: usize, f: &FitArgs, execution: Execution) -> InferenceConfig {
    let mut cfg = InferenceConfig::new(k, f.rounds).with_cohorts(f.init_cohort, f.em_cohort);
    cfg.alpha_floor = f.alpha_floor;
    cfg.degenerate_policy = match f.degenerate {
        Degenerate::Skip => DegeneratePolicy::Skip,
        Degenerate::Error => DegeneratePolicy::Error,
    };
    cfg.early_stop = f.early_stop;
    cfg.execution = execution;
    cfg
}

fn gen_synthetic(a: &GenSyntheticArgs, mut m: Manifest) -> Result<()> {
    let truth = match (&a.preset, &a.params) {
        (Some(name), _) => presets::preset(name)?,
        (None, Some(path)) => {
            m.input(path);
            read_params(path)?
        }
        (None, None) => {
            return Err(UsageError("one of --preset or --params is required".into()).into())
        }
    };
    m.output(&a.out);
    for p in [&a.truth_out, &a.labels_out].into_iter().flatten() {
        m.output(p);
    }
    m.check_paths()?;

    let labelled = gen_labelled_federation(&truth, a.clients, RngHandle::new(a.seed))?;
    let labels: Vec<usize> = labelled.iter().map(|(_, z)| *z).collect();
    let pop = ClientPopulation::new(labelled.into_iter().map(|(r, _)| r).collect())?;
    write_population(&pop, &a.out)?;
    if let Some(p) = &a.truth_out {
        write_text(p, &(truth.to_json()? + "\n"))?;
    }
    if let Some(p) = &a.labels_out {
        write_text(
            p,
            &labels.iter().map(|z| format!("{z}\n")).collect::<String>(),
        )?;
    }
    m.config = json!({ "preset": a.preset, "clients": a.clients, "K": truth.k(), "C": truth.c(), "N": truth.max_n() });
    m.write(&a.out)?;
    eprintln!("wrote {} clients to {}", pop.len(), a.out.display());
    Ok(())
}

fn ingest(a: &IngestArgs, mut m: Manifest) -> Result<()> {
    m.input(&a.input);
    m.input(&a.binning);
    for p in [&a.out, &a.pool_out, &a.ids_out].into_iter().flatten() {
        m.output(p);
    }
    m.check_paths()?;

    let spec = BinningSpec::from_json(&read_text(&a.binning)?).context("reading binning spec")?;
    let table = RecordTable::read_csv(open(&a.input)?)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut summary =
        json!({ "rows": table.len(), "categories": spec.num_categories(), "binning": spec });
    if let Some(out) = &a.out {
        let (ids, pop) = build_clients_with_ids(&table, &spec)?;
        write_population(&pop, out)?;
        if let Some(p) = &a.ids_out {
            write_text(
                p,
                &ids.iter().map(|id| format!("{id}\n")).collect::<String>(),
            )?;
        }
        summary["clients"] = json!(pop.len());
        eprintln!("wrote {} clients to {}", pop.len(), out.display());
    } else if a.ids_out.is_some() {
        return Err(UsageError("--ids-out needs --out".into()).into());
    }
    if let Some(p) = &a.pool_out {
        let pool = build_central_pool(&table, &spec)?;
        write_text(p, &(serde_json::to_string(&pool)? + "\n"))?;
        summary["pool_marginal"] = json!(pool.marginal());
    }
    m.config = summary;
    m.write(
        a.out
            .as_ref()
            .or(a.pool_out.as_ref())
            .expect("clap requires one output"),
    )
}

fn infer(a: &InferArgs, execution: Execution, mut m: Manifest) -> Result<()> {
    m.input(&a.input);
    m.output(&a.out);
    for p in [&a.trace, &a.snapshots].into_iter().flatten() {
        m.output(p);
    }
    m.check_paths()?;

    let pop = read_population(&a.input)?;
    let mut cfg = inference_config(a.k, &a.fit, execution);
    cfg.track_log_likelihood = a.trace.is_some();
    let (params, trace) = fit(&pop, &cfg, RngHandle::new(a.seed))?;
    write_text(&a.out, &(params.to_json()? + "\n"))?;
    if let Some(p) = &a.trace {
        let mut csv = String::from("round,log_likelihood\n");
        for s in &trace.snapshots {
            csv.push_str(&format!(
                "{},{}\n",
                s.round,
                s.log_likelihood.map(fmt_f64).unwrap_or_default()
            ));
        }
        write_text(p, &csv)?;
    }
    if let Some(p) = &a.snapshots {
        let mut w = create(p)?;
        for s in &trace.snapshots {
            writeln!(w, "{}", to_string(s)?)?;
        }
        w.flush()?;
    }
    m.config = serde_json::to_value(&cfg)?;
    m.config["rounds_run"] = json!(trace.snapshots.len() - 1);
    m.config["clients"] = json!(pop.len());
    m.write(&a.out)?;
    eprintln!(
        "fitted K = {} over {} rounds",
        params.k(),
        trace.snapshots.len() - 1
    );
    Ok(())
}

fn select(a: &SelectKArgs, execution: Execution, mut m: Manifest) -> Result<()> {
    m.input(&a.input);
    if let Some(v) = &a.validation {
        m.input(v);
    }
    m.output(&a.out);
    if let Some(p) = &a.csv {
        m.output(p);
    }
    m.check_paths()?;

    let pop = read_population(&a.input)?;
    let mut sel =
        SelectionConfig::new(a.candidates.clone(), inference_config(1, &a.fit, execution));
    sel.tie_tolerance = a.tie_tolerance;
    let rng = RngHandle::new(a.seed);
    let report = match (&a.validation, a.val_cohort) {
        (Some(path), _) => select_k_with_validation(&pop, &read_population(path)?, &sel, rng)?,
        (None, Some(size)) => select_k(&pop, &sel, size, rng)?,
        (None, None) => {
            return Err(UsageError("one of --val-cohort or --validation is required".into()).into())
        }
    };
    write_text(&a.out, &(report.to_json()? + "\n"))?;
    if let Some(p) = &a.csv {
        write_text(p, &report.to_csv())?;
    }
    m.config = serde_json::to_value(&sel)?;
    m.config["val_cohort"] = json!(a.val_cohort);
    m.config["chosen_k"] = json!(report.chosen_k);
    m.write(&a.out)?;
    println!("chosen_k={}", report.chosen_k);
    Ok(())
}

fn partition(a: &PartitionArgs, mut m: Manifest) -> Result<()> {
    m.input(&a.pool);
    for p in [&a.params, &a.true_pop].into_iter().flatten() {
        m.input(p);
    }
    m.output(&a.out);
    m.check_paths()?;

    let usage = |msg: &str| -> anyhow::Error { UsageError(msg.into()).into() };
    let pool: CentralPool =
        serde_json::from_str(&read_text(&a.pool)?).context("reading central pool")?;
    let rng = RngHandle::new(a.seed);
    let plan = match a.generator {
        GeneratorArg::Mdm => {
            let params = read_params(
                a.params
                    .as_deref()
                    .ok_or_else(|| usage("mdm partitioning needs --params"))?,
            )?;
            let clients = a
                .clients
                .ok_or_else(|| usage("mdm partitioning needs --clients"))?;
            partition_mdm(&pool, &params, clients, rng)?
        }
        GeneratorArg::FullyIid => {
            let clients = a
                .clients
                .ok_or_else(|| usage("fully-iid partitioning needs --clients"))?;
            let n_dist = match (&a.true_pop, a.n_point) {
                (Some(p), _) => {
                    SampleCountDist::empirical(read_population(p)?.records().iter().map(|r| r.n()))?
                }
                (None, Some(n)) if n > 0 => SampleCountDist::point_mass(n),
                _ => {
                    return Err(usage(
                        "fully-iid partitioning needs --true-pop or a positive --n-point",
                    ))
                }
            };
            partition_fully_iid(&pool, &n_dist, clients, rng)?
        }
        GeneratorArg::ConditionallyIid => {
            if a.clients.is_some() {
                return Err(usage(
                    "conditionally-iid makes one client per true client; drop --clients",
                ));
            }
            let true_pop = read_population(
                a.true_pop
                    .as_deref()
                    .ok_or_else(|| usage("conditionally-iid needs --true-pop"))?,
            )?;
            partition_conditionally_iid(&pool, &true_pop, rng)?
        }
    };
    let mut w = create(&a.out)?;
    plan.write_jsonl(&mut w)?;
    w.flush()?;
    let replaced = plan
        .clients
        .iter()
        .filter(|c| c.replacement.values().any(|&r| r))
        .count();
    m.config = json!({
        "generator": plan.generator,
        "plan_seed": plan.seed,
        "clients": plan.clients.len(),
        "clients_with_replacement": replaced,
    });
    m.write(&a.out)?;
    eprintln!(
        "wrote {} simulated clients to {} ({replaced} needed replacement)",
        plan.clients.len(),
        a.out.display()
    );
    Ok(())
}

fn detect_kind(path: &Path) -> Result<InputKind> {
    for line in open(path)?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            return Ok(if line.contains("\"target_c\"") {
                InputKind::Plan
            } else {
                InputKind::Population
            });
        }
    }
    Err(mdmfed_core::Error::Parse {
        location: path.display().to_string(),
        message: "file is empty".into(),
    }
    .into())
}

fn export(a: &ExportArgs, mut m: Manifest) -> Result<()> {
    m.input(&a.input);
    m.output(&a.out);
    m.check_paths()?;

    let kind = match a.kind {
        Some(k) => k,
        None => detect_kind(&a.input)?,
    };
    let records = match kind {
        InputKind::Population => read_population(&a.input)?.records().to_vec(),
        InputKind::Plan => read_plan_clients(open(&a.input)?)?
            .iter()
            .map(SimulatedClient::histogram)
            .collect::<mdmfed_core::Result<Vec<_>>>()?,
    };
    let rows = export_histograms(&records);
    let mut w = create(&a.out)?;
    write_histograms_csv(&rows, &mut w)?;
    w.flush()?;
    m.config = json!({ "kind": format!("{kind:?}").to_lowercase(), "rows": rows.len() });
    m.write(&a.out)
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    nmse: AlignedNmseReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_log_likelihood_fitted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_log_likelihood_truth: Option<f64>,
}

fn eval(a: &EvalArgs, mut m: Manifest) -> Result<()> {
    m.input(&a.fitted);
    m.input(&a.truth);
    if let Some(d) = &a.data {
        m.input(d);
    }
    if let Some(o) = &a.out {
        m.output(o);
    }
    m.check_paths()?;

    let fitted = read_params(&a.fitted)?;
    let truth = read_params(&a.truth)?;
    let mut report = EvalReport {
        nmse: align_and_score(&fitted, &truth)?,
        mean_log_likelihood_fitted: None,
        mean_log_likelihood_truth: None,
    };
    if let Some(d) = &a.data {
        let pop = read_population(d)?;
        let per = |p: &MdmParams| -> Result<f64> {
            Ok(log_likelihood(pop.records(), p)? / pop.len() as f64)
        };
        report.mean_log_likelihood_fitted = Some(per(&fitted)?);
        report.mean_log_likelihood_truth = Some(per(&truth)?);
    }
    let text = to_string(&report)? + "\n";
    match &a.out {
        Some(o) => {
            write_text(o, &text)?;
            m.config = json!({ "data": a.data });
            m.write(o)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
