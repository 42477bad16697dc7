use std::io::Write;
use std::sync::Arc;

use anyhow::Context;
use convfill::config::RuntimeConfig;
use convfill::eval::{
    bundled_items, compare_report, read_items, run_eval, BackendOnly, EvalOptions, EvalReport, EvalSystem,
    FullRuntime, InfillOnly, Sample,
};

use crate::args::{CompareArgs, EvalCommand, EvalRunArgs, SystemKind};
use crate::{load_config, open, output};

pub fn run(cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Run(a) => eval_run(a),
        EvalCommand::Compare(a) => compare(a),
    }
}

pub fn build_system(cfg: &RuntimeConfig, kind: SystemKind, name: Option<&str>) -> anyhow::Result<Arc<dyn EvalSystem>> {
    let clock = cfg.build_clock();
    let label = |default: &str| name.unwrap_or(default).to_string();
    Ok(match kind {
        SystemKind::Full => {
            let engine = cfg.build_engine(clock.clone())?;
            let label = label(&format!("{}+{}", engine.backend().label(), engine.infill().label()));
            Arc::new(FullRuntime::new(label, engine, clock))
        }
        SystemKind::Backend => {
            let backend = cfg.build_backend()?;
            Arc::new(BackendOnly::new(label(backend.label()), backend, clock))
        }
        SystemKind::Infill => {
            let infill = cfg.build_infill()?;
            Arc::new(InfillOnly::new(label(infill.label()), infill, clock))
        }
    })
}

pub fn evaluate(a: &EvalRunArgs) -> anyhow::Result<EvalReport> {
    let cfg = load_config(a.config.as_deref(), &a.sets)?;
    let items = match &a.items {
        Some(p) => read_items(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => bundled_items(),
    };
    let system = build_system(&cfg, a.system, a.name.as_deref())?;
    let opts = EvalOptions {
        ceiling: std::time::Duration::try_from_secs_f64(a.ceiling).context("--ceiling must be a positive number")?,
        sample: a.sample.map(|size| Sample {
            size,
            seed: a.sample_seed,
        }),
        classifier: cfg.build_classifier()?,
        parallelism: a.parallel.max(1),
    };
    Ok(run_eval(&system, &items, &opts)?)
}

fn eval_run(a: EvalRunArgs) -> anyhow::Result<()> {
    let report = evaluate(&a)?;
    print!("{report}");
    if let Some(p) = &a.out {
        let mut w = output(Some(p))?;
        w.write_all(report.to_json().as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn load_report(p: &std::path::Path) -> anyhow::Result<EvalReport> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    EvalReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
}

fn compare(a: CompareArgs) -> anyhow::Result<()> {
    let delta = compare_report(&load_report(&a.a)?, &load_report(&a.b)?)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&delta)?);
    } else {
        println!("{} -> {}", delta.a, delta.b);
        print!("{delta}");
    }
    Ok(())
}
