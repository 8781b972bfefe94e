use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::warn;

use vtbench_core::io::{read_jsonl, read_manifest, write_jsonl};
use vtbench_core::matchcore::{toy_train, ToyConfig};
use vtbench_core::parse::{parse_for_task, ParseConfig};
use vtbench_core::report::{aggregate, emit, Format, Section};
use vtbench_core::repurpose::{build_sample, FilterRule, GenOutcome, SourceAnnotation};
use vtbench_core::runner::{
    run_batch, CancelToken, EndpointConfig, HttpChatClient, ResponseRecord,
};
use vtbench_core::scoring::{score_batch, ScoringContext};
use vtbench_core::simscore::RemoteEmbedder;
use vtbench_core::templates::{Placeholders, TemplateCorpus, TemplateFamily, TemplateId};
use vtbench_core::{Execution, Sample, TaskKind};

#[derive(Parser)]
#[command(
    name = "vtbench",
    version,
    about = "Event-level video-language benchmark toolkit"
)]
struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract a structured answer from one free-text response.
    Parse {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        duration: f64,
        /// Response text file; stdin when absent.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Score a response file against a manifest.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sentence-embedding service; a hashed bag-of-words embedder is used otherwise.
        #[arg(long)]
        embedder_url: Option<String>,
        #[arg(long, default_value_t = 4)]
        embedder_in_flight: usize,
    },
    /// Build benchmark samples for one task from source annotations.
    Gen {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        task: TaskKind,
        /// JSON list of filter rules.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an instruction template.
    Render {
        #[arg(long)]
        task: TaskKind,
        #[arg(long, default_value_t = 0)]
        variant: usize,
        #[arg(long, default_value = "bench")]
        family: TemplateFamily,
        /// JSON object of placeholder values.
        #[arg(long)]
        placeholders: Option<PathBuf>,
        /// Template corpus replacing the built-in one.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train matching heads on a synthetic problem; prints step,loss,accuracy.
    Matchdemo {
        #[arg(long = "T", default_value_t = 32)]
        frames: usize,
        #[arg(long = "D", default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Query a chat-completion endpoint for every sample, resuming partial runs.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Endpoint configuration (JSON).
        #[arg(long)]
        endpoint: PathBuf,
        /// Directory of `<sample id>/frame_*.jpg` images.
        #[arg(long)]
        media: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a score file into benchmark tables.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: Format,
        #[arg(long, default_value = "tasks")]
        section: Section,
        /// Row label.
        #[arg(long, default_value = "model")]
        label: String,
    },
}

fn read_text(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .context("reading stdin")?;
            Ok(s)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_score(
    manifest: &Path,
    responses: &Path,
    out: &Path,
    embedder_url: Option<&str>,
    in_flight: usize,
    exec: Execution,
) -> Result<()> {
    let samples = read_manifest(manifest)?;
    let mut by_id = HashMap::new();
    for r in read_jsonl::<ResponseRecord>(responses)? {
        if by_id.insert(r.sample_id.clone(), r.raw_text).is_some() {
            warn!("duplicate response for `{}`; keeping the last", r.sample_id);
        }
    }
    let mut ctx = ScoringContext::default();
    if let Some(url) = embedder_url {
        ctx.embedder = Box::new(RemoteEmbedder::new(url, in_flight)?);
    }
    let records = score_batch(&samples, &by_id, &ctx, exec)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(out, &records)?;
    eprintln!("scored {} samples", records.len());
    Ok(())
}

fn cmd_gen(
    source: &Path,
    task: TaskKind,
    rules: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let anns: Vec<SourceAnnotation> = read_jsonl(source)?;
    let rules: Vec<FilterRule> = match rules {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    for r in &rules {
        r.validate()?;
    }
    let (mut kept, mut dropped, mut failed): (Vec<Sample>, usize, usize) = (Vec::new(), 0, 0);
    for a in &anns {
        match build_sample(a, task, &rules, seed) {
            Ok(GenOutcome::Kept(s)) => kept.push(s),
            Ok(GenOutcome::Dropped(rule)) => {
                log::debug!("{}: dropped by {rule}", a.id);
                dropped += 1;
            }
            Err(e) => {
                warn!("{e}");
                failed += 1;
            }
        }
    }
    write_jsonl(out, &kept)?;
    eprintln!("kept {}, dropped {dropped}, failed {failed}", kept.len());
    Ok(())
}

fn cmd_render(
    task: TaskKind,
    variant: usize,
    family: TemplateFamily,
    placeholders: Option<&Path>,
    corpus: Option<&Path>,
) -> Result<String> {
    let ph: Placeholders = match placeholders {
        Some(p) => read_json(p)?,
        None => Placeholders::default(),
    };
    let id = TemplateId {
        family,
        task,
        variant,
    };
    let owned;
    let corpus = match corpus {
        Some(p) => {
            owned = TemplateCorpus::from_json(&read_text(Some(p))?)?;
            &owned
        }
        None => TemplateCorpus::builtin(),
    };
    Ok(corpus.render_instruction(id, &ph)?)
}

fn cmd_matchdemo(
    frames: usize,
    dim: usize,
    steps: usize,
    seed: u64,
    lr: Option<f64>,
) -> Result<()> {
    let mut cfg = ToyConfig {
        frames,
        dim,
        steps,
        seed,
        ..Default::default()
    };
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    let trace = toy_train(&cfg)?;
    let mut out = io::stdout().lock();
    writeln!(out, "step,loss,accuracy")?;
    for s in &trace.steps {
        writeln!(out, "{},{},{}", s.step, s.loss, s.accuracy)?;
    }
    eprintln!(
        "final loss {:.6}, accuracy {:.4}",
        trace.final_loss, trace.final_accuracy
    );
    Ok(())
}

fn cmd_run(manifest: &Path, endpoint: &Path, media: Option<&Path>, out: &Path) -> Result<()> {
    let samples = read_manifest(manifest)?;
    let cfg: EndpointConfig = read_json(endpoint)?;
    if let Some(m) = media {
        if !m.is_dir() {
            bail!("media directory {} does not exist", m.display());
        }
    }
    let client = HttpChatClient::new(cfg.clone())?;
    let summary = run_batch(&samples, &client, &cfg, media, out, &CancelToken::default())?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.cmd {
        Cmd::Parse {
            task,
            duration,
            input,
        } => {
            let text = read_text(input.as_deref())?;
            let pred = parse_for_task(task, &text, duration, &ParseConfig::default());
            println!("{}", serde_json::to_string(&pred)?);
        }
        Cmd::Score {
            manifest,
            responses,
            out,
            embedder_url,
            embedder_in_flight,
        } => cmd_score(
            &manifest,
            &responses,
            &out,
            embedder_url.as_deref(),
            embedder_in_flight,
            exec,
        )?,
        Cmd::Gen {
            source,
            task,
            rules,
            seed,
            out,
        } => cmd_gen(&source, task, rules.as_deref(), seed, &out)?,
        Cmd::Render {
            task,
            variant,
            family,
            placeholders,
            corpus,
        } => println!(
            "{}",
            cmd_render(
                task,
                variant,
                family,
                placeholders.as_deref(),
                corpus.as_deref()
            )?
        ),
        Cmd::Matchdemo {
            frames,
            dim,
            steps,
            seed,
            lr,
        } => cmd_matchdemo(frames, dim, steps, seed, lr)?,
        Cmd::Run {
            manifest,
            endpoint,
            media,
            out,
        } => cmd_run(&manifest, &endpoint, media.as_deref(), &out)?,
        Cmd::Report {
            scores,
            manifest,
            format,
            section,
            label,
        } => {
            let records = read_jsonl(&scores)?;
            let samples = read_manifest(&manifest)?;
            let report = aggregate(&records, &samples)?;
            print!("{}", emit(&report, section, format, &label));
        }
    }
    Ok(())
}
