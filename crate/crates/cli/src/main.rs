use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use prefsim::analytics::{
    clf_bt_bound_check, closed_form_table, draw_prompts, verify_cross_prompt_quality,
    verify_diversity_inequality, verify_oc_bound, BaseDensity, PromptParams,
};
use prefsim::annotate::{
    annotate_dataset, build_pairs, load_records, save_records, AnnotatorSpec, PairingKind,
};
use prefsim::btarena::{fit_arena, read_comparisons_csv, write_scores_csv, ArenaFitOptions};
use prefsim::experiment::{emit_report, run_sweep, ExperimentConfig, ReportKind, RESULTS_FILE};
use prefsim::metrics::{bon_improvement, order_consistency, Reference};
use prefsim::rm::{train_reward_model, ModelHyper, ModelVariant, RewardModel};
use prefsim::rng::RngState;
use prefsim::synth::{gen_world, PromptPrior, SyntheticWorld, WorldConfig};

#[derive(Parser)]
#[command(
    name = "prefsim",
    version,
    about = "Synthetic preference annotation and reward-model experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write it as JSONL.
    GenWorld {
        /// World configuration (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and annotate preference pairs from a world's training prompts.
    Annotate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value = "same-prompt-random")]
        pairing: PairingKind,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        /// sigmoid-beta, bt-logistic, probit, perfect or random.
        #[arg(long, default_value = "sigmoid-beta")]
        annotator: String,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a reward model on an annotated dataset.
    Train {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "bt-mlp")]
        model: ModelVariant,
        /// Hyper-parameters (JSON with `mlp` and `gbt` sections).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a reward model: Best-of-N on test prompts, and order
    /// consistency on an annotated dataset when one is given.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        bon_n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid, resuming from existing results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarize a results CSV over seeds and draw a chart.
    Report {
        /// Results CSV, or a sweep directory containing one.
        #[arg(long)]
        results: PathBuf,
        /// quality-sweep, quantity-sweep or pairing-compare.
        #[arg(long)]
        kind: ReportKind,
        #[arg(long, default_value = "bon_mean")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print closed-form quantities with their reference values.
    Analytics {
        /// Emit CSV rows instead of a table.
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit Bradley-Terry scores to `i,j,outcome` comparisons.
    ArenaFit {
        #[arg(long)]
        input: PathBuf,
        /// Number of players; defaults to the largest index plus one.
        #[arg(long)]
        players: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo checks of the cross-prompt, order-consistency and
    /// classification bounds.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prompt-parameter draws per family.
        #[arg(long, default_value_t = 5)]
        draws: usize,
        #[arg(long, default_value_t = 20_000)]
        n_mc: usize,
        #[arg(long)]
        csv: bool,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn annotator(name: &str, beta: f64) -> Result<AnnotatorSpec> {
    Ok(match name {
        "sigmoid-beta" => AnnotatorSpec::sigmoid_beta(beta)?,
        "bt-logistic" => AnnotatorSpec::bt_logistic(),
        "probit" => AnnotatorSpec::probit(),
        "perfect" => AnnotatorSpec::perfect(),
        "random" => AnnotatorSpec::random(),
        other => bail!("unknown annotator {other:?}"),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenWorld { config, seed, out } => {
            let cfg: WorldConfig = match config {
                Some(p) => read_json(&p)?,
                None => WorldConfig::default(),
            };
            let world = gen_world(&cfg, &mut RngState::new(seed).derive("world").rng())?;
            world.save(&out)?;
            info!("wrote {} items to {}", world.n_items(), out.display());
        }
        Command::Annotate {
            world,
            pairing,
            count,
            annotator: name,
            beta,
            seed,
            out,
        } => {
            let world = SyntheticWorld::load(&world)?;
            let spec = annotator(&name, beta)?;
            let root = RngState::new(seed);
            let pairs = build_pairs(&world, pairing, count, &mut root.derive("pairs").rng())?;
            let data = annotate_dataset(&world, &pairs, &spec, &mut root.derive("labels").rng())?;
            save_records(&data.records, &out)?;
            info!(
                "{} records, accuracy {:.4}, {} ties",
                data.records.len(),
                data.accuracy,
                data.n_tied
            );
        }
        Command::Train {
            world,
            data,
            model,
            config,
            seed,
            out,
        } => {
            let world = SyntheticWorld::load(&world)?;
            let records = load_records(&data)?;
            let hyper: ModelHyper = match config {
                Some(p) => read_json(&p)?,
                None => ModelHyper::default(),
            };
            let rm = train_reward_model(
                &world,
                &records,
                model,
                &hyper,
                &mut RngState::new(seed).derive("train").rng(),
            )?;
            rm.save(&out)?;
            info!("trained {} for {} epochs", model.name(), rm.meta.epochs);
        }
        Command::Eval {
            world,
            model,
            data,
            bon_n,
            seed,
            out,
        } => {
            let world = SyntheticWorld::load(&world)?;
            let rm = RewardModel::load(&model)?;
            let bon = bon_improvement(
                &rm,
                &world,
                bon_n,
                &mut RngState::new(seed).derive("bon").rng(),
            )?;
            let mut report = serde_json::json!({
                "model": rm.variant.name(),
                "bon_n": bon_n,
                "bon_mean": bon.mean_improvement,
                "bon_se": bon.se,
                "bon_oracle": bon.oracle_improvement,
            });
            if let Some(d) = data {
                let records = load_records(&d)?;
                report["oc_golden"] = order_consistency(&rm, &world, &records, Reference::Golden)?
                    .value
                    .into();
                report["oc_annotated"] =
                    order_consistency(&rm, &world, &records, Reference::Annotated)?
                        .value
                        .into();
            }
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        Command::Sweep {
            config,
            seed,
            out,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let s = run_sweep(&cfg, &dir, workers)?;
            println!(
                "{} cells: {} run, {} skipped, {} failed -> {}",
                s.total_cells,
                s.ran,
                s.skipped,
                s.failed,
                s.results_path.display()
            );
        }
        Command::Report {
            results,
            kind,
            metric,
            out,
        } => {
            let path = if results.is_dir() {
                results.join(RESULTS_FILE)
            } else {
                results
            };
            let r = emit_report(&path, kind, &metric, &out)?;
            println!(
                "{} groups -> {}, {}",
                r.rows.len(),
                r.summary_csv.display(),
                r.svg.display()
            );
        }
        Command::Analytics { csv, out } => {
            let rows = closed_form_table()?;
            let mut w = output(out.as_deref())?;
            if csv {
                writeln!(w, "quantity,value,reference,tolerance,verdict,note")?;
                for r in &rows {
                    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(
                        w,
                        "\"{}\",{},{},{},{},\"{}\"",
                        r.quantity,
                        r.value,
                        opt(r.reference),
                        opt(r.tolerance),
                        r.verdict(),
                        r.note.replace('"', "\"\"")
                    )?;
                }
            } else {
                writeln!(
                    w,
                    "{:<44} {:>12} {:>10} {:>9}  note",
                    "quantity", "value", "reference", "verdict"
                )?;
                for r in &rows {
                    let reference = r.reference.map(|v| format!("{v:.4}")).unwrap_or_default();
                    writeln!(
                        w,
                        "{:<44} {:>12.6} {:>10} {:>9}  {}",
                        r.quantity,
                        r.value,
                        reference,
                        r.verdict(),
                        r.note
                    )?;
                }
            }
        }
        Command::ArenaFit {
            input,
            players,
            out,
        } => {
            let f = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let comps = read_comparisons_csv(BufReader::new(f))?;
            let k = match players {
                Some(k) => k,
                None => comps.iter().map(|c| c.i.max(c.j) + 1).max().unwrap_or(0),
            };
            let fit = fit_arena(&comps, k, &ArenaFitOptions::default())?;
            if !fit.capped.is_empty() {
                warn!(
                    "players {:?} never won or never lost; their scores are capped",
                    fit.capped
                );
            }
            if !fit.converged {
                warn!(
                    "fit stopped after {} iterations, gradient norm {:e}",
                    fit.iterations, fit.grad_norm
                );
            }
            write_scores_csv(&fit.scores, output(out.as_deref())?)?;
        }
        Command::Verify {
            seed,
            draws,
            n_mc,
            csv,
        } => return verify(seed, draws, n_mc, csv),
    }
    Ok(true)
}

fn verify(seed: u64, draws: usize, n_mc: usize, csv: bool) -> Result<bool> {
    let root = RngState::new(seed);
    let prior = PromptPrior::default();
    let mut rows: Vec<(String, bool, String)> = Vec::new();
    for family in BaseDensity::ALL {
        for d in 0..draws {
            let tag = format!("{}|{d}", family.name());
            let prompts: Vec<PromptParams> =
                draw_prompts(&prior, 8, &mut root.derive(&format!("prompts|{tag}")).rng())?;
            let div = verify_diversity_inequality(
                family,
                &prompts,
                n_mc,
                &mut root.derive(&format!("div|{tag}")).rng(),
            )?;
            let mc = div.mc.expect("Monte Carlo requested");
            rows.push((
                format!("diversity {} #{d}", family.name()),
                div.holds,
                format!("same {:.4} cross {:.4}", mc.same, mc.cross),
            ));
            let q = verify_cross_prompt_quality(
                family,
                &prompts,
                1.0,
                n_mc.max(10_000),
                &mut root.derive(&format!("q|{tag}")).rng(),
            )?;
            rows.push((
                format!("cross-prompt quality {} #{d}", family.name()),
                q.holds,
                format!(
                    "same {:.4} cross {:.4} se {:.4}",
                    q.mc.same,
                    q.mc.cross,
                    q.mc.gap_se()
                ),
            ));
        }
    }
    for beta in [1.0, 5.0] {
        for eps in [0.05, 0.1] {
            let r = verify_oc_bound(
                beta,
                eps,
                20 * n_mc,
                &mut root.derive(&format!("oc|{beta}|{eps}")).rng(),
            )?;
            let judged = r
                .buckets
                .iter()
                .filter(|b| b.n >= prefsim::analytics::OC_MIN_BUCKET)
                .count();
            rows.push((
                format!("order-consistency bound beta={beta} eps={eps}"),
                r.holds,
                format!("{judged} buckets judged, kappa {:.4}", r.kappa),
            ));
        }
    }
    for d in 0..draws {
        let prompts = draw_prompts(&prior, 6, &mut root.derive(&format!("players|{d}")).rng())?;
        let rewards: Vec<f64> = prompts.iter().map(|p| p.mu).collect();
        let r = clf_bt_bound_check(&rewards)?;
        rows.push((
            format!("classification reward bound #{d}"),
            r.holds,
            format!("min slack {:.4}", r.min_slack),
        ));
    }

    let all = rows.iter().all(|r| r.1);
    let mut w = io::stdout().lock();
    if csv {
        writeln!(w, "check,holds,detail")?;
        for (name, ok, detail) in &rows {
            writeln!(w, "\"{name}\",{ok},\"{detail}\"")?;
        }
    } else {
        for (name, ok, detail) in &rows {
            writeln!(w, "{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" })?;
        }
        writeln!(
            w,
            "{} of {} checks hold",
            rows.iter().filter(|r| r.1).count(),
            rows.len()
        )?;
    }
    Ok(all)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
