use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use svomerge_core::config::RunConfig;
use svomerge_core::eval::{
    evaluate_recorded, mean_merge_rate, phi_grid, run_preset_suite, svo_sweep, train_preset, write_metrics_csv,
    MetricsRow, PresetName,
};
use svomerge_core::plot::{
    export_plots, read_trajectories, render_episode, sweep_rows, write_sweep_csv, write_trajectories, SWEEP_FILE,
    TRAJECTORY_FILE,
};
use svomerge_core::qnet::{load_weights, save_weights, Network};
use svomerge_core::trainer::{write_curve_csv, PolicySnapshot};
use svomerge_core::Error;

#[derive(Parser)]
#[command(name = "svomerge", version, about = "Mixed-autonomy highway merge experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile (desk, full, long) used when no config file is given.
    #[arg(long, conflicts_with = "config")]
    profile: Option<String>,
    /// Seed; overrides the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Generate all training episodes before running any update cycle.
    #[arg(long)]
    strict_alg1: bool,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the number of evaluation episodes.
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Override the experiment preset.
    #[arg(long)]
    preset: Option<PresetName>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one preset and evaluate the final policies.
    Train(Common),
    /// Evaluate saved policies.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding policy_g*.bin; defaults to --out.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Train and evaluate sympathetic-cooperative agents over a grid of SVO angles.
    SweepSvo(Common),
    /// Train and evaluate every preset of the suite under every seed.
    Suite(Common),
    /// Render one logged episode as SVG frames.
    Render {
        #[command(flatten)]
        common: Common,
        /// Trajectory log; defaults to trajectories.jsonl under --out.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
    /// Write SVG figures for every log under --out.
    Plot(Common),
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: Option<u64>,
    seeds: &'a [u64],
    version: &'static str,
    config: &'a RunConfig,
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, &c.profile) {
        (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(p)) => RunConfig::profile(p)?,
        (None, None) => RunConfig::default(),
    };
    if c.strict_alg1 {
        cfg.train.strict_two_phase = true;
    }
    if let Some(n) = c.episodes {
        cfg.train.episodes = n;
    }
    if let Some(n) = c.eval_episodes {
        cfg.experiment.eval_episodes = n;
    }
    if let Some(p) = c.preset {
        cfg.experiment.preset = p;
    }
    if let Some(s) = c.seed {
        cfg.experiment.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, command: &str, seed: Option<u64>, cfg: &RunConfig) -> Result<()> {
    let canonical = cfg.to_toml()?;
    let config_hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    let m = Manifest {
        command,
        config_hash,
        seed,
        seeds: &cfg.experiment.seeds,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn save_policies(dir: &Path, prefix: &str, policies: &[Arc<PolicySnapshot>]) -> Result<()> {
    for (g, p) in policies.iter().enumerate() {
        save_weights(&p.weights, &dir.join(format!("{prefix}_g{g}.bin")))?;
    }
    Ok(())
}

fn load_policies(dir: &Path) -> Result<Vec<Network<f32>>> {
    let mut nets = Vec::new();
    loop {
        let path = dir.join(format!("policy_g{}.bin", nets.len()));
        if !path.is_file() {
            break;
        }
        nets.push(load_weights(&path).with_context(|| format!("loading {}", path.display()))?);
    }
    if nets.is_empty() {
        bail!("no policy_g0.bin under {}", dir.display());
    }
    Ok(nets)
}

fn evaluate_and_log(cfg: &RunConfig, nets: &[Network<f32>], seed: u64, out: &Path) -> Result<MetricsRow> {
    let preset = cfg.preset(cfg.experiment.preset)?;
    let (metrics, _, lines) = evaluate_recorded(
        &preset,
        &cfg.scenario,
        nets,
        cfg.experiment.eval_episodes,
        seed,
        cfg.experiment.record_trajectories,
    )?;
    let row = MetricsRow::new(preset.name.as_str(), seed, &metrics);
    write_metrics_csv(std::slice::from_ref(&row), create(&out.join("metrics.csv"))?)?;
    write_trajectories(&lines, create(&out.join(TRAJECTORY_FILE))?)?;
    Ok(row)
}

fn single_seed(cfg: &RunConfig) -> u64 {
    cfg.experiment.seeds[0]
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let seed = single_seed(&cfg);
    fs::create_dir_all(&c.out)?;
    write_manifest(&c.out, "train", Some(seed), &cfg)?;
    let preset = cfg.preset(cfg.experiment.preset)?;
    let mut last: Vec<Arc<PolicySnapshot>> = Vec::new();
    let result = train_preset(&preset, &cfg.scenario, &cfg.train, seed, &mut |ck| {
        last = ck.policies.to_vec();
        eprintln!(
            "episode {:>6}  frame {:>8}  eval merge rate {}",
            ck.episode,
            ck.frame,
            ck.eval_success.map_or("-".into(), |r| format!("{r:.3}"))
        );
        Ok(())
    });
    let out = match result {
        Ok(out) => out,
        Err(e @ Error::Diverged { .. }) => {
            if !last.is_empty() {
                save_policies(&c.out, "diverged", &last)?;
                eprintln!("last checkpoint written to {}/diverged_g*.bin", c.out.display());
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    save_policies(&c.out, "policy", &out.policies)?;
    write_curve_csv(&out.curve, create(&c.out.join("curve.csv"))?)?;
    let nets: Vec<Network<f32>> = out.policies.iter().map(|p| p.weights.clone()).collect();
    let row = evaluate_and_log(&cfg, &nets, seed, &c.out)?;
    println!(
        "{} seed {}: merge rate {:.3}, crash rate {:.3} over {} episodes",
        row.preset,
        seed,
        1.0 - row.f_mf,
        row.f_c,
        row.episodes
    );
    Ok(())
}

fn cmd_evaluate(c: &Common, weights: Option<&Path>) -> Result<()> {
    let cfg = resolve(c)?;
    let seed = single_seed(&cfg);
    let nets = load_policies(weights.unwrap_or(&c.out))?;
    fs::create_dir_all(&c.out)?;
    write_manifest(&c.out, "evaluate", Some(seed), &cfg)?;
    let row = evaluate_and_log(&cfg, &nets, seed, &c.out)?;
    println!("{} seed {}: merge rate {:.3}, crash rate {:.3}", row.preset, seed, 1.0 - row.f_mf, row.f_c);
    Ok(())
}

fn cmd_sweep(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    fs::create_dir_all(&c.out)?;
    write_manifest(&c.out, "sweep-svo", c.seed, &cfg)?;
    let e = &cfg.experiment;
    let result = svo_sweep(
        &phi_grid(e.sweep_points),
        e.xi,
        &cfg.scenario,
        &cfg.train,
        &e.seeds,
        e.eval_episodes,
        |phi, seed, m| eprintln!("phi {phi:.4} seed {seed}: f_C {:.3} f_MF {:.3}", m.f_c, m.f_mf),
    )?;
    write_sweep_csv(&sweep_rows(&result), create(&c.out.join(SWEEP_FILE))?)?;
    fs::write(c.out.join("sweep.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    println!("phi* = {:.6}", result.phi_star);
    Ok(())
}

fn cmd_suite(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    fs::create_dir_all(&c.out)?;
    write_manifest(&c.out, "suite", c.seed, &cfg)?;
    let presets = cfg.experiment.suite.iter().map(|&p| cfg.preset(p)).collect::<Result<Vec<_>, _>>()?;
    let weights = c.out.join("weights");
    fs::create_dir_all(&weights)?;
    let mut save_err = None;
    let rows = run_preset_suite(
        &presets,
        &cfg.scenario,
        &cfg.train,
        &cfg.experiment.seeds,
        cfg.experiment.eval_episodes,
        |row, policies| {
            eprintln!("{} seed {}: merge rate {:.3}", row.preset, row.seed, row.metrics.merge_rate());
            let prefix = format!("{}_s{}", row.preset.as_str().replace('+', "_"), row.seed);
            if let Err(e) = save_policies(&weights, &prefix, policies) {
                save_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = save_err {
        return Err(e);
    }
    let table: Vec<MetricsRow> =
        rows.iter().map(|r| MetricsRow::new(r.preset.as_str(), r.seed, &r.metrics)).collect();
    write_metrics_csv(&table, create(&c.out.join("metrics.csv"))?)?;
    for p in &cfg.experiment.suite {
        if let Some(rate) = mean_merge_rate(&rows, *p) {
            println!("{p:<7} mean merge rate {rate:.3}");
        }
    }
    Ok(())
}

fn cmd_render(c: &Common, log: Option<&Path>, episode: usize) -> Result<()> {
    let cfg = resolve(c)?;
    let log = log.map(Path::to_path_buf).unwrap_or_else(|| c.out.join(TRAJECTORY_FILE));
    let lines = read_trajectories(&log)?;
    let records: Vec<_> = lines
        .into_iter()
        .filter(|l| l.episode == episode && c.preset.is_none_or(|p| l.preset == p.as_str()))
        .map(|l| l.record)
        .collect();
    if records.is_empty() {
        bail!("episode {episode} not found in {}", log.display());
    }
    let frames = render_episode(&records, &cfg.scenario.road)?;
    let dir = c.out.join(format!("frames_ep{episode}"));
    fs::create_dir_all(&dir)?;
    for (k, svg) in frames.iter().enumerate() {
        fs::write(dir.join(format!("frame_{k:03}.svg")), svg)?;
    }
    println!("{} frames written to {}", frames.len(), dir.display());
    Ok(())
}

fn cmd_plot(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    for path in export_plots(&c.out, &cfg.scenario.road)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(c) => cmd_train(&c),
        Command::Evaluate { common, weights } => cmd_evaluate(&common, weights.as_deref()),
        Command::SweepSvo(c) => cmd_sweep(&c),
        Command::Suite(c) => cmd_suite(&c),
        Command::Render { common, log, episode } => cmd_render(&common, log.as_deref(), episode),
        Command::Plot(c) => cmd_plot(&c),
    }
}
