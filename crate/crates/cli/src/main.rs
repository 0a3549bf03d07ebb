//! `shapeba` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use shapeba::error::Error;
use shapeba::evaluation::report::{load_results, write_ablation, write_reports};
use shapeba::evaluation::{
    compare_loss_options, compare_prior_vs_direct, is_degenerate, lambda_sweep, run_grid, views_ablation, Method, TrialOutput,
    TrialResult, TrialSpec,
};
use shapeba::gradcheck;
use shapeba::harness::pipeline::{persist_trial, trial_dir};
use shapeba::harness::prior::{fit_prior, load_prior, save_prior};
use shapeba::harness::scene::{load_scene, save_scene, scene_dir, synth_scene};
use shapeba::harness::{ExperimentConfig, SceneBundle};
use shapeba::persist::write_atomic;
use shapeba::shape_prior::LinearShapePrior;

#[derive(Parser, Debug)]
#[command(name = "shapeba", version, about = "Photometric bundle adjustment with a shape prior on synthetic sequences")]
struct Cli {
    /// TOML experiment configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scene seed; the initialization seed becomes seed + 1.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for prior.json, scenes/, runs/ and results/.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for independent trials.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Prior,
    Direct,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the linear shape prior and write `prior.json`.
    FitPrior,
    /// Synthesize scenes into `scenes/`.
    Synth {
        /// Number of scenes (default: evaluation.trials).
        #[arg(long)]
        scenes: Option<usize>,
        /// Print the full configuration with defaults and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run the pipeline on persisted scenes.
    Run {
        /// Only this scene id.
        #[arg(long)]
        scene: Option<usize>,
        /// Silhouette weight (default: weights.lambda).
        #[arg(long)]
        lambda: Option<f64>,
        /// Leading frames to use (default: scene.num_frames).
        #[arg(long)]
        views: Option<usize>,
        /// Shape variables: style through the prior, or raw visible points.
        #[arg(long, value_enum, default_value = "prior")]
        method: MethodArg,
    },
    /// Regenerate reports from every `result.json` under `runs/`.
    Eval,
    /// Median errors for each view count in evaluation.view_counts.
    AblateViews,
    /// Combined loss against photometric only, plus the λ sweep on scene 0.
    CompareLosses,
    /// Style through the prior against direct point optimization.
    CompareDirect,
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Re-check the invariants of every persisted artifact.
    Validate,
}

/// Failure with the exit code it maps to.
enum Failure {
    Validation(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Validation(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    jobs: usize,
    force: bool,
}

impl Ctx {
    fn prior_path(&self) -> PathBuf {
        self.out.join("prior.json")
    }

    fn scenes_root(&self) -> PathBuf {
        self.out.join("scenes")
    }

    fn runs_root(&self) -> PathBuf {
        self.out.join("runs")
    }

    fn results_root(&self) -> PathBuf {
        self.out.join("results")
    }

    /// Loads `prior.json`, fitting and saving it first when absent.
    fn prior(&self) -> CliResult<LinearShapePrior<f64>> {
        let path = self.prior_path();
        if path.exists() {
            return Ok(load_prior(&path)?);
        }
        info!("fitting prior ({} shapes, d = {})", self.cfg.prior.training_shapes, self.cfg.prior.dim);
        let prior = fit_prior(&self.cfg)?;
        save_prior(&path, &prior)?;
        Ok(prior)
    }

    /// Scenes `0..n`, loaded when persisted and synthesized otherwise.
    fn scenes(&self, prior: &LinearShapePrior<f64>, n: usize) -> CliResult<Vec<SceneBundle>> {
        (0..n)
            .map(|id| {
                let dir = scene_dir(&self.scenes_root(), id);
                if dir.join("gt.json").exists() {
                    let scene = load_scene(&dir)?;
                    scene.validate(prior)?;
                    Ok(scene)
                } else {
                    let scene = synth_scene(&self.cfg, prior, id)?;
                    save_scene(&dir, &scene)?;
                    Ok(scene)
                }
            })
            .collect()
    }

    fn refuse_existing(&self, scenes: &[SceneBundle], specs: &[TrialSpec]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        for s in scenes {
            for spec in specs {
                let path = trial_dir(&self.runs_root(), spec, s.meta.id).join("result.json");
                if path.exists() {
                    return Err(Error::AlreadyExists(path).into());
                }
            }
        }
        Ok(())
    }

    fn persist(&self, outputs: &[TrialOutput]) -> CliResult<()> {
        for o in outputs {
            let spec = &o.result.spec;
            persist_trial(&trial_dir(&self.runs_root(), spec, o.result.trial), spec, o, true)?;
        }
        Ok(())
    }

    fn run_specs(&self, scenes: &[SceneBundle], prior: &LinearShapePrior<f64>, specs: &[TrialSpec]) -> CliResult<Vec<TrialResult>> {
        self.refuse_existing(scenes, specs)?;
        let outputs = run_grid(scenes, prior, &self.cfg, specs, self.jobs)?;
        self.persist(&outputs)?;
        let results: Vec<TrialResult> = outputs.into_iter().map(|o| o.result).collect();
        let timing: String = results.iter().map(|r| format!("{},{},{:.3}\n", r.trial, r.spec.label(), r.wall_time_s)).collect();
        write_atomic(&self.results_root().join("timings.csv"), format!("trial,spec,wall_time_s\n{timing}").as_bytes())?;
        Ok(results)
    }

    fn reports(&self, results: &[TrialResult]) -> CliResult<()> {
        let e = &self.cfg.evaluation;
        write_reports(&self.results_root(), results, &e.pose_thresholds, &e.style_thresholds)?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.scenes = seed;
        cfg.seeds.init = seed.wrapping_add(1);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary(label: &str, results: &[TrialResult]) {
    let rot: Vec<f64> = results.iter().map(|r| r.fin.mean_rotation()).collect();
    let style: Vec<f64> = results.iter().map(|r| r.fin.style_error).collect();
    println!(
        "{label}: {} trials, median final rotation {:.3}°, median final style error {:.5}",
        results.len(),
        shapeba::evaluation::median(&rot),
        shapeba::evaluation::median(&style)
    );
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Command::Synth { print_config: true, .. } = cli.command {
        print!("{}", load_config(cli)?.to_toml());
        return Ok(());
    }
    if let Command::Gradcheck { instances } = cli.command {
        return gradcheck_cmd(instances, cli.seed.unwrap_or(1));
    }
    let ctx = Ctx { cfg: load_config(cli)?, out: cli.out_dir.clone(), jobs: cli.jobs, force: cli.force };
    let trials = ctx.cfg.evaluation.trials;
    let lambda = ctx.cfg.weights.lambda;
    match &cli.command {
        Command::FitPrior => {
            let path = ctx.prior_path();
            if path.exists() && !ctx.force {
                return Err(Error::AlreadyExists(path).into());
            }
            let prior = fit_prior(&ctx.cfg)?;
            save_prior(&path, &prior)?;
            println!("wrote {} (d = {}, N = {})", path.display(), prior.d, prior.n);
        }
        Command::Synth { scenes, .. } => {
            let prior = ctx.prior()?;
            let n = scenes.unwrap_or(trials);
            for id in 0..n {
                let dir = scene_dir(&ctx.scenes_root(), id);
                if dir.exists() && !ctx.force {
                    return Err(Error::AlreadyExists(dir).into());
                }
                let scene = synth_scene(&ctx.cfg, &prior, id)?;
                save_scene(&dir, &scene)?;
                info!("scene {id}: coverage {:.3}, {} attempts", scene.frames[0].mask.coverage(), scene.meta.attempts);
            }
            ctx.cfg.save(&ctx.out.join("config.toml"))?;
            println!("wrote {n} scenes to {}", ctx.scenes_root().display());
        }
        Command::Run { scene, lambda: l, views, method } => {
            let prior = ctx.prior()?;
            let mut scenes = ctx.scenes(&prior, scene.map_or(trials, |s| s + 1))?;
            if let Some(id) = scene {
                scenes.retain(|s| s.meta.id == *id);
            }
            let views = views.unwrap_or(ctx.cfg.scene.num_frames);
            let l = l.unwrap_or(lambda);
            let spec = match method {
                MethodArg::Prior => TrialSpec::prior(l, views),
                MethodArg::Direct => TrialSpec::direct(l, views),
            };
            let results = ctx.run_specs(&scenes, &prior, std::slice::from_ref(&spec))?;
            ctx.reports(&results)?;
            summary(&spec.label(), &results);
        }
        Command::Eval => {
            let results = load_results(&ctx.runs_root())?;
            if results.is_empty() {
                return Err(Failure::Validation(format!("no result.json under {}", ctx.runs_root().display())));
            }
            ctx.reports(&results)?;
            println!("wrote reports for {} trials to {}", results.len(), ctx.results_root().display());
        }
        Command::AblateViews => {
            let prior = ctx.prior()?;
            let scenes = ctx.scenes(&prior, trials)?;
            let specs: Vec<TrialSpec> = ctx.cfg.evaluation.view_counts.iter().map(|&v| TrialSpec::prior(lambda, v)).collect();
            ctx.refuse_existing(&scenes, &specs)?;
            let (rows, results) = views_ablation(&scenes, &prior, &ctx.cfg, &ctx.cfg.evaluation.view_counts, lambda, ctx.jobs)?;
            write_ablation(&ctx.results_root(), &rows)?;
            for r in &rows {
                println!("L = {:2}: median rotation {:.3}°, median style {:.5}", r.views, r.median_rotation_deg, r.median_style_error);
            }
            persist_results(&ctx, &results)?;
        }
        Command::CompareLosses => {
            let prior = ctx.prior()?;
            let scenes = ctx.scenes(&prior, trials)?;
            let views = ctx.cfg.scene.num_frames;
            ctx.refuse_existing(&scenes, &[TrialSpec::prior(lambda, views), TrialSpec::prior(0.0, views)])?;
            let paired = compare_loss_options(&scenes, &prior, &ctx.cfg, lambda, ctx.jobs)?;
            let better = paired.fraction(|c, p| c.fin.loss.l_cd <= p.fin.loss.l_cd);
            let degenerate = paired.a.iter().zip(&paired.b).filter(|(c, p)| is_degenerate(p, c)).count();
            println!("combined L_CD <= photometric-only on {:.0}% of trials; {degenerate} degenerate photometric-only runs", 100.0 * better);
            let sweep = lambda_sweep(&scenes[0], &prior, &ctx.cfg, &ctx.cfg.evaluation.lambda_sweep, ctx.jobs)?;
            let mut csv = String::from("lambda,final_l_cd,final_l_ph,final_rotation_deg,final_style_error\n");
            for r in &sweep {
                csv += &format!("{:?},{:?},{:?},{:?},{:?}\n", r.spec.lambda, r.fin.loss.l_cd, r.fin.loss.l_ph, r.fin.mean_rotation(), r.fin.style_error);
            }
            write_atomic(&ctx.results_root().join("lambda_sweep.csv"), csv.as_bytes())?;
            let mut all = paired.a;
            all.extend(paired.b);
            persist_results(&ctx, &all)?;
        }
        Command::CompareDirect => {
            let prior = ctx.prior()?;
            let scenes = ctx.scenes(&prior, trials)?;
            let views = ctx.cfg.scene.num_frames;
            ctx.refuse_existing(&scenes, &[TrialSpec::prior(lambda, views), TrialSpec::direct(lambda, views)])?;
            let paired = compare_prior_vs_direct(&scenes, &prior, &ctx.cfg, lambda, ctx.jobs)?;
            let better = paired.fraction(|p, d| p.fin.style_error <= d.fin.style_error);
            println!("prior style error <= direct on {:.0}% of trials", 100.0 * better);
            let mut all = paired.a;
            all.extend(paired.b);
            persist_results(&ctx, &all)?;
        }
        Command::Validate => validate_cmd(&ctx)?,
        Command::Gradcheck { .. } => unreachable!(),
    }
    Ok(())
}

/// Result files of a protocol run plus the reports over everything under `runs/`.
fn persist_results(ctx: &Ctx, results: &[TrialResult]) -> CliResult<()> {
    for r in results {
        let path = trial_dir(&ctx.runs_root(), &r.spec, r.trial).join("result.json");
        shapeba::persist::write_json(&path, r)?;
    }
    let all = load_results(&ctx.runs_root())?;
    ctx.reports(&all)?;
    let mut labels: Vec<String> = results.iter().map(|r| r.spec.label()).collect();
    labels.dedup();
    for label in labels {
        let sel: Vec<TrialResult> = results.iter().filter(|r| r.spec.label() == label).cloned().collect();
        summary(&label, &sel);
    }
    Ok(())
}

fn gradcheck_cmd(instances: usize, seed: u64) -> CliResult<()> {
    let reports = gradcheck::run_all(instances, seed);
    println!("{:<18} {:>9} {:>8} {:>12} {:>10} {:>8}  result", "suite", "instances", "redrawn", "max rel err", "tolerance", "seconds");
    for r in &reports {
        println!(
            "{:<18} {:>9} {:>8} {:>12.3e} {:>10.0e} {:>8.2}  {}",
            r.name,
            r.instances,
            r.redrawn,
            r.max_rel_err,
            r.tolerance,
            r.seconds,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Validation("gradient check failed".into()))
    }
}

fn check_result(r: &TrialResult) -> std::result::Result<(), String> {
    for (name, e) in [("init", &r.init), ("final", &r.fin)] {
        if e.rotation_deg.len() != r.spec.views || e.translation.len() != r.spec.views {
            return Err(format!("{name} error lists do not have {} entries", r.spec.views));
        }
        if e.rotation_deg.iter().chain(&e.translation).chain([&e.style_error]).any(|v| !(*v >= 0.0)) {
            return Err(format!("{name} has a negative or non-finite error"));
        }
    }
    if r.fin.loss.l_total > r.init.loss.l_total * (1.0 + 1e-12) {
        return Err(format!("final loss {} exceeds initial {}", r.fin.loss.l_total, r.init.loss.l_total));
    }
    if r.spec.method == Method::Prior && r.variables < 6 * r.spec.views {
        return Err("variable count below the pose count".into());
    }
    Ok(())
}

fn validate_cmd(ctx: &Ctx) -> CliResult<()> {
    let mut problems: Vec<String> = Vec::new();
    let mut checked = 0usize;
    let prior = if ctx.prior_path().exists() {
        match load_prior(&ctx.prior_path()) {
            Ok(p) => {
                checked += 1;
                Some(p)
            }
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        }
    } else {
        None
    };
    if ctx.scenes_root().exists() {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(ctx.scenes_root())
            .map_err(|e| Failure::Runtime(Error::Io { path: ctx.scenes_root(), source: e }))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            checked += 1;
            match (load_scene(&dir), &prior) {
                (Ok(scene), Some(p)) => {
                    if let Err(e) = scene.validate(p) {
                        problems.push(format!("{}: {e}", dir.display()));
                    }
                }
                (Ok(_), None) => problems.push(format!("{}: no prior.json to check against", dir.display())),
                (Err(e), _) => problems.push(e.to_string()),
            }
        }
    }
    if ctx.runs_root().exists() {
        for path in shapeba::evaluation::report::find_results(&ctx.runs_root())? {
            checked += 1;
            match shapeba::persist::read_json::<TrialResult>(&path) {
                Ok(r) => {
                    if let Err(msg) = check_result(&r) {
                        problems.push(format!("{}: {msg}", path.display()));
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    for p in &problems {
        warn!("{p}");
    }
    println!("checked {checked} artifacts under {}: {} problems", ctx.out.display(), problems.len());
    if checked == 0 {
        return Err(Failure::Validation(format!("nothing to validate under {}", ctx.out.display())));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} invalid artifacts", problems.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

