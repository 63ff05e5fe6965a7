use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use faultnas_core::controller::Controller;
use faultnas_core::ftt::{evaluate, ftt_train, search, select_rate};
use faultnas_core::harness::checkpoint::{load_model, save_model, Checkpoint, ModelMeta};
use faultnas_core::harness::report::{self, primitive_inspection, random_sample_baseline, write_ndjson, EvalReport, ReportMeta};
use faultnas_core::nn::{ArchSpec, Model, Rollout, SuperNet};
use faultnas_core::{load_dataset, DatasetSplits, FaultModelSpec, ParamStore, Profile, RngStream, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "faultnas", version, about = "Fault-tolerant NAS and fault-injection experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; omitted fields come from the profile preset.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Preset profile (desk or full); overrides the config file's profile.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Directory for reports, logs and checkpoints.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Validate the configuration and print the plan without running it.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Alternate shared-weight FTT and controller updates; emit the argmax architecture.
    Search,
    /// FTT-train the configured model (or a given rollout) and save a checkpoint.
    Train {
        /// Train the derived network of this rollout instead of `[model]`.
        #[arg(long)]
        rollout: Option<Rollout>,
        /// Choose the MiBB rate with the clean-accuracy threshold protocol.
        #[arg(long)]
        select_rate: bool,
    },
    /// Clean and faulty accuracy of a checkpoint under the training fault.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Accuracy over the configured fault-rate grid and seeds.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Regime label recorded in the report.
        #[arg(long, default_value = "trained")]
        regime: String,
    },
    /// FTT-train uniformly sampled architectures as a search baseline.
    SampleBaseline {
        /// Also train this (e.g. searched) rollout for comparison.
        #[arg(long)]
        rollout: Option<Rollout>,
    },
    /// Stacked-primitive ranking and mixed-block weight magnitudes.
    Inspect,
    /// Merge JSON reports into one table (JSON, CSV and Markdown).
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let profile = common.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p, profile).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::preset(profile.unwrap_or(Profile::Desk)),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn plan(cmd: &Command, cfg: &RunConfig) -> String {
    match cmd {
        Command::Search => format!(
            "search: {} epochs, {} cells, B = {}, {} primitives, fault {:?}, alpha_r {}, alpha_l {}",
            cfg.search.epochs,
            cfg.supernet.cells,
            cfg.supernet.space.nodes,
            cfg.supernet.space.primitives.len(),
            cfg.search.fault,
            cfg.search.alpha_r,
            cfg.search.alpha_l
        ),
        Command::Train { rollout, select_rate } => format!(
            "train: {} for {} epochs, fault {:?}, alpha_l {}{}",
            rollout.as_ref().map_or_else(|| format!("{:?}", cfg.model), |r| format!("derived {r}")),
            cfg.train.epochs,
            cfg.train.fault,
            cfg.train.alpha_l,
            if *select_rate { format!(", rate selection over {:?}", cfg.rate_selection.candidates) } else { String::new() }
        ),
        Command::Eval { checkpoint } => format!("eval: {} under {:?}", checkpoint.display(), cfg.train.fault),
        Command::Sweep { checkpoint, .. } => format!(
            "sweep: {} under {} at rates {:?} x seeds {:?}",
            checkpoint.display(),
            cfg.sweep.fault.name(),
            cfg.sweep.rates,
            cfg.sweep.seeds
        ),
        Command::SampleBaseline { rollout } => format!(
            "sample-baseline: {} random rollouts{} under {:?}",
            cfg.baseline.samples,
            if rollout.is_some() { " plus the given rollout" } else { "" },
            cfg.train.fault
        ),
        Command::Inspect => format!(
            "inspect: depth-{} stacks of {:?} under {:?}; mixed-block depth {}",
            cfg.inspect.depth, cfg.inspect.primitives, cfg.inspect.fault, cfg.inspect.mixed_depth
        ),
        Command::Report { inputs } => format!("report: merge {} files", inputs.len()),
    }
}

fn data(cfg: &RunConfig) -> Result<DatasetSplits> {
    Ok(load_dataset(&cfg.dataset)?)
}

fn model_meta(cfg: &RunConfig, arch: ArchSpec, d: &DatasetSplits) -> Result<ModelMeta> {
    let input = d.train.image_shape();
    Ok(ModelMeta { arch, in_channels: input[0], classes: d.train.classes, input, config_hash: Some(cfg.hash()?), seed: cfg.seed })
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Command::Report { inputs } = &cli.cmd {
        if let Some(missing) = inputs.iter().find(|p| !p.is_file()) {
            bail!("report input {} does not exist", missing.display());
        }
        if common.dry_run {
            println!("# plan: {}", plan(&cli.cmd, &RunConfig::preset(Profile::Desk)));
            return Ok(());
        }
        std::fs::create_dir_all(&common.out)?;
        let reports =
            inputs.iter().map(|p| EvalReport::read_json(p).with_context(|| p.display().to_string())).collect::<Result<Vec<_>>>()?;
        let merged = EvalReport::merge(reports)?;
        let paths = merged.write(&common.out, "report")?;
        std::fs::write(common.out.join("report.md"), merged.to_markdown())?;
        print!("{}", merged.to_markdown());
        log::info!("wrote {}", paths[0].display());
        return Ok(());
    }

    let cfg = resolve(common)?;
    if common.dry_run {
        println!("# config hash {}\n{}", cfg.hash()?, cfg.to_toml()?);
        println!("# plan: {}", plan(&cli.cmd, &cfg));
        return Ok(());
    }
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.resolved.toml"), cfg.to_toml()?)?;
    let d = data(&cfg)?;

    match &cli.cmd {
        Command::Search => {
            let [c, _, _] = d.train.image_shape();
            let mut store = ParamStore::new();
            let mut init = RngStream::new(cfg.seed).derive_str("init");
            let net = SuperNet::build(&cfg.supernet, c, d.train.classes, &mut store, &mut init, None)?;
            let mut controller = Controller::new(cfg.search.controller.clone(), cfg.supernet.space.clone(), cfg.seed)?;
            let out = search(&cfg.search, &net, &mut store, &mut controller, &d.train, cfg.seed, Some(&common.out))?;
            write_ndjson(&common.out.join("search.ndjson"), &out.log)?;
            write_json(&common.out.join("search_history.json"), &out.history)?;
            write_json(&common.out.join("controller_tables.json"), &controller.dump_tables()?)?;
            std::fs::write(common.out.join("best_rollout.txt"), format!("{}\n", out.best))?;
            let mut ck = Checkpoint::new(serde_json::json!({ "config_hash": cfg.hash()?, "best": out.best.to_string() }));
            ck.add_store("supernet", &store)?;
            ck.add_store("controller", &controller.store)?;
            ck.write(&common.out.join("search.ckpt"))?;
            println!("{}", out.best);
        }
        Command::Train { rollout, select_rate: select } => {
            let arch = match rollout {
                Some(r) => ArchSpec::Derived { supernet: cfg.supernet.clone(), rollout: r.clone() },
                None => cfg.model.clone(),
            };
            let [c, _, _] = d.train.image_shape();
            let (model, fault) = if *select {
                let sel =
                    select_rate(&arch, &d, &cfg.train, &cfg.eval, &cfg.rate_selection.candidates, cfg.rate_selection.threshold, cfg.seed)?;
                write_json(&common.out.join("rate_selection.json"), &sel.trials)?;
                match (sel.chosen, sel.model) {
                    (Some(rate), Some(m)) => (m, cfg.train.fault.with_rate(rate)),
                    _ => bail!("no candidate rate kept clean accuracy above {}", cfg.rate_selection.threshold),
                }
            } else {
                let mut m = Model::build(&arch, c, d.train.classes, cfg.seed)?;
                let hist = ftt_train(&mut m, &d.train, &cfg.train, cfg.seed)?;
                write_ndjson(&common.out.join("train.ndjson"), &hist)?;
                (m, cfg.train.fault)
            };
            save_model(&common.out.join("model.ckpt"), &model, &model_meta(&cfg, arch, &d)?)?;
            let s = RngStream::new(cfg.seed).derive_str("train-eval");
            let clean = evaluate(&model.arch, &model.store, &d.test, &FaultModelSpec::None, &cfg.eval, &s)?;
            let faulty = evaluate(&model.arch, &model.store, &d.test, &fault, &cfg.eval, &s)?;
            println!("clean {:.2}%  faulty ({} {}) {:.2}%", 100.0 * clean, fault.name(), fault.rate(), 100.0 * faulty);
        }
        Command::Eval { checkpoint } => {
            let (model, _) = load_model(checkpoint)?;
            let rows = report::evaluate_rows(&model, &d, &cfg)?;
            let rep = EvalReport { meta: ReportMeta::new("eval", Some(&cfg))?, rows };
            rep.write(&common.out, "eval")?;
            print!("{}", rep.to_markdown());
        }
        Command::Sweep { checkpoint, regime } => {
            let (model, _) = load_model(checkpoint)?;
            let rows = report::sweep(&model, regime, &d.test, &cfg.sweep.fault, &cfg.sweep.rates, &cfg.sweep.seeds, &cfg.eval)?;
            let rep = EvalReport { meta: ReportMeta::new("sweep", Some(&cfg))?, rows };
            rep.write(&common.out, "sweep")?;
            print!("{}", rep.to_markdown());
        }
        Command::SampleBaseline { rollout } => {
            let rep = random_sample_baseline(&cfg, &d, rollout.as_ref())?;
            rep.write(&common.out, "baseline")?;
            print!("{}", rep.to_markdown());
        }
        Command::Inspect => {
            let rep = primitive_inspection(&cfg, &d)?;
            rep.ranking.write(&common.out, "inspect_ranking")?;
            write_json(&common.out.join("inspect.json"), &rep)?;
            print!("{}", rep.ranking.to_markdown());
            for m in &rep.magnitudes {
                println!("{}: |w| {:.4} ± {:.4} (n = {})", m.kind, m.mean, m.std, m.count);
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
