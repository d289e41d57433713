use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tweetsim_core::corpus::{self, compute_corpus_stats, IngestOptions, Tweet, UserTimeline};
use tweetsim_core::evaluation::pos::{accuracy, load_silver, train, TrainParams};
use tweetsim_core::evaluation::Evaluator;
use tweetsim_core::experiment::{EventRecord, Experiment, ExperimentConfig, SweepAxis};
use tweetsim_core::profiling::{assemble_profile, build_parts, ProfileVariant};
use tweetsim_core::sampling::{self, SampleManifest, SamplingParams};
use tweetsim_core::workflow::{self, SimulationParams};

#[derive(Parser)]
#[command(name = "tweetsim", version, about = "Persona-grounded tweet simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML, or JSON by extension). Defaults apply when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the corpus root.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Overrides the output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(c) = &self.corpus {
            cfg.corpus = c.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment::from_config(self.load()?)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus, report rejected lines and write per-category statistics.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Maximum fraction of malformed lines per timeline.
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
    },
    /// Build and write one user's profile.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: u64,
    },
    /// Build and persist one user's memory store.
    MemoryBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: u64,
    },
    /// Time-weighted event sampling and extraction for one user.
    ExtractEvents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: u64,
    },
    /// Density-aware user sampling.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Precomputed reduced coordinates (CSV `index,c0,..`) in user id order.
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Simulate the post for one source tweet.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: u64,
        #[arg(long)]
        tweet: u64,
        #[arg(long, default_value = "event")]
        profile: ProfileVariant,
        #[arg(long)]
        no_memory: bool,
        /// Stop after Stage I.
        #[arg(long)]
        no_rewrite: bool,
    },
    /// Score a simulated text against an original, or recompute a lineage file.
    Evaluate {
        #[arg(long, required_unless_present = "lineage")]
        original: Option<String>,
        #[arg(long, required_unless_present = "lineage")]
        simulated: Option<String>,
        #[arg(long, conflicts_with_all = ["original", "simulated"])]
        lineage: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// The memory x profile ablation grid.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one retrieval parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Control versus diagnosed cohort comparison.
    Cohort {
        #[command(flatten)]
        common: Common,
    },
    /// Train a POS tagger model from silver JSONL.
    TrainTagger {
        #[arg(long)]
        silver: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        /// Sentences held out for the reported accuracy.
        #[arg(long, default_value_t = 1500)]
        holdout: usize,
    },
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn find_user(exp: &Experiment, user: u64) -> Result<UserTimeline> {
    corpus::load_corpus(&exp.config.corpus, &IngestOptions::default())?
        .into_iter()
        .map(|(t, _)| t)
        .find(|t| t.user_id == user)
        .ok_or_else(|| anyhow!("user {user} not in corpus"))
}

fn user_dir(exp: &Experiment, user: u64) -> PathBuf {
    exp.config.output.join("users").join(user.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            corpus,
            output,
            tolerance,
        } => {
            let opts = IngestOptions {
                malformed_tolerance: tolerance,
                ..IngestOptions::default()
            };
            let loaded = corpus::load_corpus(&corpus, &opts)?;
            for (t, r) in &loaded {
                info!("user {}: {} of {} lines accepted", t.user_id, r.accepted, r.total_lines);
            }
            let timelines: Vec<UserTimeline> = loaded.iter().map(|(t, _)| t.clone()).collect();
            let stats = compute_corpus_stats(&timelines)?;
            print!("{}", stats.to_csv());
            if let Some(out) = output {
                write(&out.join("stats.csv"), &stats.to_csv())?;
                let reports: Vec<_> = loaded.iter().map(|(t, r)| (t.user_id, r)).collect();
                write(&out.join("ingest_report.json"), &serde_json::to_string_pretty(&reports)?)?;
            }
        }
        Command::Profile { common, user } => {
            let exp = common.experiment()?;
            let tl = find_user(&exp, user)?;
            let scores = exp.score(&tl)?;
            let out = build_parts(
                &tl,
                &scores,
                &exp.taxonomy,
                &tweetsim_core::profiling::Thresholds::uniform(exp.config.threshold),
                &exp.general,
                &exp.config.profiling,
                &exp.gateway,
                &exp.prompts,
            );
            for e in &out.errors {
                log::warn!("{e}");
            }
            let profile = assemble_profile(ProfileVariant::Event, out.parts.clone());
            let dir = user_dir(&exp, user);
            write(&dir.join("parts.json"), &serde_json::to_string_pretty(&out)?)?;
            write(&dir.join("profile.txt"), &profile.to_text())?;
            write(&dir.join("scores.csv"), &scores.to_csv(&exp.taxonomy))?;
            print!("{}", profile.to_text());
        }
        Command::MemoryBuild { common, user } => {
            let exp = common.experiment()?;
            let tl = find_user(&exp, user)?;
            let scores = exp.score(&tl)?;
            let parts = build_parts(
                &tl,
                &scores,
                &exp.taxonomy,
                &tweetsim_core::profiling::Thresholds::uniform(exp.config.threshold),
                &exp.general,
                &exp.config.profiling,
                &exp.gateway,
                &exp.prompts,
            )
            .parts;
            let store = exp.build_memory(&tl, &scores, &parts)?;
            let dir = user_dir(&exp, user).join("memory");
            store.save(&dir)?;
            println!(
                "{} general and {} event nodes written to {}",
                store.general.len(),
                store.event.len(),
                dir.display()
            );
        }
        Command::ExtractEvents { common, user } => {
            let exp = common.experiment()?;
            let tl = find_user(&exp, user)?;
            let scores = exp.score(&tl)?;
            let (events, errors) = exp.sample_events(&tl, &scores);
            for e in &errors {
                log::warn!("{e}");
            }
            if events.is_empty() {
                bail!("{}", tweetsim_core::experiment::NO_EVENTS);
            }
            let path = user_dir(&exp, user).join("events.json");
            write(&path, &serde_json::to_string_pretty(&events)?)?;
            for e in &events {
                println!("{}\t{}\t{}", e.summary.source_tweet_id.unwrap_or(0), e.summary.event_type, e.summary.event_triple);
            }
        }
        Command::Sample {
            common,
            coords,
            m,
            alpha,
            dims,
        } => {
            let exp = common.experiment()?;
            let mut params = exp.config.user_sample.clone().unwrap_or_default();
            params = SamplingParams {
                m: m.unwrap_or(params.m),
                alpha: alpha.unwrap_or(params.alpha),
                dims: dims.unwrap_or(params.dims),
                seed: exp.config.seed,
                ..params
            };
            let users = exp.load_users()?;
            let ids: Vec<u64> = users.iter().map(|u| u.user_id).collect();
            let manifest = match coords {
                Some(path) => {
                    let raw = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let c = sampling::coords_from_csv(&raw)?;
                    if c.len() != ids.len() {
                        bail!("{} coordinate rows for {} users", c.len(), ids.len());
                    }
                    let model = sampling::estimate_density(&c, params.bandwidth)?;
                    let picked = sampling::density_aware_sample(&model, params.m.min(ids.len()), params.alpha, params.seed)?;
                    SampleManifest {
                        seed: params.seed,
                        alpha: params.alpha,
                        dims: c.first().map(Vec::len).unwrap_or(0),
                        bandwidth: model.bandwidth,
                        population: ids.len(),
                        degenerate_reduction: false,
                        user_ids: picked.into_iter().map(|i| ids[i]).collect(),
                    }
                }
                None => {
                    let (prepared, failures) = exp.prepare_all(users);
                    for f in &failures {
                        log::warn!("{f}");
                    }
                    let profiles: Vec<_> = prepared
                        .iter()
                        .map(|u| assemble_profile(ProfileVariant::Event, u.parts.clone()))
                        .collect();
                    let emb = sampling::embed_profiles(&exp.gateway, &profiles)?;
                    let red = sampling::reduce(&emb, params.dims)?;
                    write(&exp.config.output.join("coords.csv"), &sampling::coords_to_csv(&red.coords))?;
                    let pids: Vec<u64> = prepared.iter().map(|u| u.user_id()).collect();
                    sampling::sample_users(&pids, &emb, &params)?
                }
            };
            let path = exp.config.output.join("sample_manifest.json");
            std::fs::create_dir_all(&exp.config.output)?;
            manifest.save(&path)?;
            println!("{} users sampled; manifest at {}", manifest.user_ids.len(), path.display());
        }
        Command::Simulate {
            common,
            user,
            tweet,
            profile,
            no_memory,
            no_rewrite,
        } => {
            let exp = common.experiment()?;
            let tl = find_user(&exp, user)?;
            let source = tl.tweet(tweet).ok_or_else(|| anyhow!("tweet {tweet} not in user {user}'s timeline"))?.clone();
            let prepared = exp.prepare(tl)?;
            let (event, _) = workflow::extract_from_tweet(&source, None, &exp.gateway, &exp.prompts)?;
            let event = event.ok_or_else(|| anyhow!("tweet {tweet} carries no meaningful event"))?;
            let mut store = prepared.store.clone();
            let params = SimulationParams {
                retrieval: exp.config.retrieval.clone(),
                use_memory: !no_memory,
                rewrite: !no_rewrite,
                extra_state_labels: Vec::new(),
            };
            let profile = assemble_profile(profile, prepared.parts.clone());
            let result = workflow::simulate_post(&prepared.timeline, &profile, &mut store, &event, &params, &exp.gateway, &exp.prompts)?;
            let path = result.save(&exp.config.output.join("simulations"), &format!("{}{}", profile.variant, if no_memory { "-nomem" } else { "" }))?;
            println!("{}", result.final_text);
            info!("lineage at {}", path.display());
        }
        Command::Evaluate {
            original,
            simulated,
            lineage,
            common,
        } => {
            let cfg = common.load()?;
            let gateway = tweetsim_core::experiment::build_gateway(&cfg.backend, cfg.seed)?;
            let evaluator = Evaluator {
                mode: cfg.reference_mode,
                ..Evaluator::new(&gateway)
            };
            let out = match lineage {
                Some(path) => {
                    let raw = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let rec: EventRecord = serde_json::from_str(&raw)?;
                    let orig = Tweet::new(rec.source_tweet_id.unwrap_or(0), rec.result.event.event_time, rec.original.clone());
                    let pair = evaluator.evaluate_pair(&orig, &rec.result, &[]);
                    if cfg.reference_mode == tweetsim_core::evaluation::ReferenceMode::GroundTruth && pair != rec.evaluation {
                        log::warn!("recomputed scores differ from the recorded ones");
                    }
                    serde_json::to_string_pretty(&pair)?
                }
                None => {
                    let orig = Tweet::new(0, chrono::Utc::now(), original.unwrap_or_default());
                    let report = evaluator.evaluate_text(&orig, &simulated.unwrap_or_default(), &[], None);
                    serde_json::to_string_pretty(&report)?
                }
            };
            println!("{out}");
        }
        Command::Ablation { common } => {
            let exp = common.experiment()?;
            let users = prepared_users(&exp)?;
            let table = exp.run_ablation(&users)?;
            table.save(&exp.config.output, "ablation")?;
            print!("{}", table.to_markdown());
            report_failures(&table.failures);
        }
        Command::Sweep { common, axis, values } => {
            let exp = common.experiment()?;
            let axis = axis.unwrap_or(exp.config.sweep.axis);
            let values = values.unwrap_or_else(|| exp.config.sweep.values.clone());
            let users = prepared_users(&exp)?;
            let series = exp.run_temporal_sweep(&users, axis, &values)?;
            series.save(&exp.config.output, &format!("sweep_{axis}"))?;
            print!("{}", series.to_markdown());
            report_failures(&series.failures);
        }
        Command::Cohort { common } => {
            let exp = common.experiment()?;
            let users = prepared_users(&exp)?;
            let table = exp.run_cohort_comparison(&users)?;
            table.save(&exp.config.output, "cohort")?;
            print!("{}", table.to_markdown());
            report_failures(&table.failures);
        }
        Command::TrainTagger {
            silver,
            output,
            iterations,
            holdout,
        } => {
            let raw = std::fs::read_to_string(&silver).with_context(|| format!("reading {}", silver.display()))?;
            let mut data = load_silver(&raw)?;
            let held = data.split_off(data.len().saturating_sub(holdout));
            let model = train(
                &data,
                &TrainParams {
                    iterations,
                    ..TrainParams::default()
                },
            );
            if !held.is_empty() {
                println!("held-out accuracy {:.4} on {} sentences", accuracy(&model, &held), held.len());
            }
            model.save(&output)?;
            println!("{} features written to {}", model.feature_count(), output.display());
        }
    }
    Ok(())
}

/// Loads, prepares and (when configured) density-samples the users.
fn prepared_users(exp: &Experiment) -> Result<Vec<tweetsim_core::experiment::PreparedUser>> {
    let users = exp.load_users()?;
    info!("preparing {} users", users.len());
    let (mut prepared, failures) = exp.prepare_all(users);
    report_failures(&failures);
    if let Some(params) = &exp.config.user_sample {
        let (kept, manifest) = exp.sample_prepared(prepared, params)?;
        std::fs::create_dir_all(&exp.config.output)?;
        manifest.save(&exp.config.output.join("sample_manifest.json"))?;
        prepared = kept;
    }
    let events_dir = exp.config.output.join("events");
    for u in &prepared {
        write(&events_dir.join(format!("{}.json", u.user_id())), &serde_json::to_string_pretty(&u.events)?)?;
    }
    Ok(prepared)
}

fn report_failures(failures: &[String]) {
    for f in failures {
        log::warn!("{f}");
    }
    if !failures.is_empty() {
        eprintln!("{} failures; see the JSON report", failures.len());
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
