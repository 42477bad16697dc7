use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use convfill::adapters::TextGenerator;
use convfill::dataset::{
    filter_entailed, llm_generate, parse_domain, read_jsonl, split_turns, template_generate, write_jsonl,
    ConversationDocument, CorpusStats, DatasetError, FilterOutcome, RejectedExample, SeedBank, TrainingExample,
};
use convfill::Domain;

use crate::args::{FilterArgs, ForgeCommand, GenMode, GenerateArgs, SplitArgs, StatsArgs};
use crate::{load_config, open, output};

pub fn run(cmd: ForgeCommand) -> anyhow::Result<()> {
    match cmd {
        ForgeCommand::Generate(a) => generate(a),
        ForgeCommand::Split(a) => split(a),
        ForgeCommand::Filter(a) => filter(a),
        ForgeCommand::Stats(a) => stats(a),
    }
}

pub fn domains(arg: &str) -> anyhow::Result<Vec<Domain>> {
    if arg == "all" {
        return Ok(Domain::ALL.to_vec());
    }
    arg.split(',').map(|d| Ok(parse_domain(d.trim())?)).collect()
}

struct Job {
    domain: Domain,
    seed: String,
    rng_seed: u64,
}

/// Runs `f` over `jobs` on `workers` threads, one conversation per call,
/// returning results in job order.
fn par_map<T: Send>(
    jobs: &[Job],
    workers: usize,
    f: impl Fn(&Job) -> Result<T, DatasetError> + Sync,
) -> Vec<Result<T, DatasetError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, DatasetError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn generate_documents(a: &GenerateArgs) -> anyhow::Result<(Vec<ConversationDocument>, usize)> {
    let bank = SeedBank::builtin();
    let mut jobs = Vec::new();
    for d in domains(&a.domain)? {
        for i in 0..a.count {
            let k = (a.seed as usize).wrapping_add(i);
            jobs.push(Job {
                domain: d,
                seed: bank.pick(d, k).context("empty seed bank")?.to_string(),
                rng_seed: a.seed.wrapping_add(i as u64),
            });
        }
    }
    let results = match a.mode {
        GenMode::Template => par_map(&jobs, a.jobs, |j| template_generate(j.domain.as_str(), &j.seed, j.rng_seed)),
        GenMode::Llm => {
            let cfg = load_config(a.config.as_deref(), &a.sets)?;
            let generator: Arc<dyn TextGenerator> = cfg.build_text_generator()?;
            par_map(&jobs, a.jobs, |j| llm_generate(j.domain.as_str(), &j.seed, generator.as_ref()))
        }
    };
    let mut docs = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(d) => docs.push(d),
            Err(e) if a.mode == GenMode::Llm => {
                failed += 1;
                tracing::warn!(domain = %job.domain, seed = %job.seed, error = %e, "generation failed");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((docs, failed))
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let (docs, failed) = generate_documents(&a)?;
    let mut out = output(a.out.as_ref())?;
    write_jsonl(&mut out, &docs)?;
    out.flush()?;
    eprintln!("generated {} conversations ({failed} failed)", docs.len());
    Ok(())
}

fn split(a: SplitArgs) -> anyhow::Result<()> {
    let docs: Vec<ConversationDocument> = read_jsonl(open(&a.input)?)?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for d in &docs {
        match split_turns(d) {
            Ok(ex) => examples.extend(ex),
            Err(e) => {
                skipped += 1;
                tracing::warn!(id = %d.id, error = %e, "skipping document");
            }
        }
    }
    let mut out = output(a.out.as_ref())?;
    write_jsonl(&mut out, &examples)?;
    out.flush()?;
    eprintln!("{} examples from {} conversations ({skipped} skipped)", examples.len(), docs.len() - skipped);
    Ok(())
}

fn filter(a: FilterArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.sets)?;
    let Some(gate) = cfg.build_classifier()? else {
        bail!("classifier.kind = \"none\" cannot filter; pick lexical or http");
    };
    let examples: Vec<TrainingExample> = read_jsonl(open(&a.input)?)?;
    let outcome = filter_entailed(examples, gate.as_ref())?;
    let mut out = output(a.out.as_ref())?;
    write_jsonl(&mut out, &outcome.kept)?;
    out.flush()?;
    if let Some(p) = &a.rejected {
        let mut w = output(Some(p))?;
        write_jsonl(&mut w, &outcome.rejected)?;
        w.flush()?;
    }
    eprintln!("kept {}, rejected {}", outcome.kept.len(), outcome.rejected.len());
    Ok(())
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let docs: Vec<ConversationDocument> = read_jsonl(open(&a.docs)?)?;
    let mut s = CorpusStats::of_documents(&docs);
    if let (Some(k), Some(r)) = (&a.kept, &a.rejected) {
        let outcome = FilterOutcome {
            kept: read_jsonl(open(k)?)?,
            rejected: read_jsonl::<RejectedExample>(open(r)?)?,
        };
        s = s.with_filter(&outcome);
    }
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}
