//! Command implementations behind the argument parser. Each returns a typed
//! error that maps onto the exit-code contract: configuration problems exit
//! 2, runtime problems exit 1.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use aeronav_core::agent::load_agent;
use aeronav_core::corruption::{corrupt_state, gaussian_noise, motion_blur, salt_pepper};
use aeronav_core::orchestrator::metrics::write_jsonl;
use aeronav_core::orchestrator::{evaluate, train, RunConfig, TrainingReport};
use aeronav_core::sensing::{make_self_state, render_depth, write_pgm, DepthImage};
use aeronav_core::vehicle::VehicleState;
use aeronav_core::world::{field_to_text, generate_field};

use crate::config::{load_run_config, serialize_config, ConfigError};

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: the operator's inputs are wrong.
    #[error("{0}")]
    Config(String),
    /// Exit 1: the inputs were fine but the run failed.
    #[error("{0}")]
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Reads the optional config file (missing file is a runtime error, bad
/// contents a config error) and applies env/flag overrides.
fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok(load_run_config(path, text.as_deref(), overrides)?)
}

fn fmt_asse(asse: Option<f64>) -> String {
    match asse {
        Some(v) => format!("{v:.2}"),
        None => "-".into(),
    }
}

pub fn cmd_train(
    config: Option<&Path>,
    out: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    fs::create_dir_all(out).map_err(runtime)?;
    // self-describing run dir: config echo + source fingerprint + seeds
    fs::write(out.join("config.ini"), serialize_config(&cfg)).map_err(runtime)?;
    let info = format!(
        "aeronav {}\nsource {}\nmode {:?}\nenv_seeds {:?}\nagent_seed {}\neval_seed {}\n",
        env!("CARGO_PKG_VERSION"),
        env!("SOURCE_HASH"),
        cfg.mode,
        cfg.env_seeds,
        cfg.agent_seed,
        cfg.eval_seed,
    );
    fs::write(out.join("run_info.txt"), info).map_err(runtime)?;

    let report = train(&cfg, out).map_err(runtime)?;
    println!(
        "trained {} env steps ({} learner steps, {} episodes started)",
        report.total_env_steps, report.learner_steps, report.episodes_started
    );
    println!(
        "final eval: SR {:.3}  AER {:.3}  ASSE {}",
        report.final_eval.sr,
        report.final_eval.aer,
        fmt_asse(report.final_eval.asse)
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    config: Option<&Path>,
    episodes: usize,
    seed: u64,
    out: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let agent = load_agent(checkpoint)
        .map_err(|e| CliError::Runtime(format!("cannot load {}: {e}", checkpoint.display())))?;
    // the checkpoint is self-describing; the environment must feed it
    // observations of the shape it was trained on
    if agent.cfg.action_mode != cfg.env.action_mode {
        return Err(CliError::Config(format!(
            "checkpoint was trained with action_mode {:?} but the environment is configured for \
             {:?}; set dynamics.action_mode to match",
            agent.cfg.action_mode, cfg.env.action_mode
        )));
    }
    if (agent.cfg.net.image_h, agent.cfg.net.image_w) != (cfg.env.cam.res_h, cfg.env.cam.res_w) {
        return Err(CliError::Config(format!(
            "checkpoint expects {}x{} depth images but the camera renders {}x{}; set \
             environment.cam_res_h/cam_res_w to match",
            agent.cfg.net.image_h, agent.cfg.net.image_w, cfg.env.cam.res_h, cfg.env.cam.res_w
        )));
    }
    let result = evaluate(&agent.actor_net, &agent.actor, &agent.cfg, &cfg.env, seed, episodes, 0)
        .map_err(runtime)?;

    fs::create_dir_all(out).map_err(runtime)?;
    let mut f = fs::File::create(out.join("metrics.jsonl")).map_err(runtime)?;
    write_jsonl(&mut f, std::slice::from_ref(&result.point)).map_err(runtime)?;
    let mut f = fs::File::create(out.join("episodes.jsonl")).map_err(runtime)?;
    write_jsonl(&mut f, &result.records).map_err(runtime)?;
    let traj_dir = out.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(runtime)?;
    for (i, traj) in result.trajectories.iter().enumerate() {
        let mut f = fs::File::create(traj_dir.join(format!("ep_{i:03}.txt"))).map_err(runtime)?;
        aeronav_core::orchestrator::metrics::write_trajectory(&mut f, traj).map_err(runtime)?;
    }
    println!(
        "{} episodes: SR {:.3}  AER {:.3}  ASSE {}",
        episodes,
        result.point.sr,
        result.point.aer,
        fmt_asse(result.point.asse)
    );
    Ok(())
}

pub fn cmd_gen_env(
    seed: u64,
    config: Option<&Path>,
    out: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let field = generate_field(seed, &cfg.env.field)
        .map_err(|e| CliError::Runtime(format!("field generation failed: {e}")))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(out, field_to_text(&field)).map_err(runtime)?;
    println!("{} cylinders (seed {seed}) -> {}", field.cylinders.len(), out.display());
    Ok(())
}

fn stage_stats(img: &DepthImage) -> (f64, f64, f64) {
    let n = img.len() as f64;
    let mean = img.codes.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = img.codes.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    let extreme = img.codes.iter().filter(|&&c| c == 0 || c == 255).count() as f64 / n;
    (mean, var.sqrt(), extreme)
}

pub fn cmd_inspect_noise(
    config: Option<&Path>,
    seed: u64,
    out: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let noise = cfg.env.noise.clone();
    fs::create_dir_all(out).map_err(runtime)?;

    let field = generate_field(seed, &cfg.env.field)
        .map_err(|e| CliError::Runtime(format!("field generation failed: {e}")))?;
    let pose = VehicleState::at_rest(cfg.env.start, 0.0);
    let clean = render_depth(&field, &pose, &cfg.env.cam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = salt_pepper(&clean, noise.p_sp, &mut rng);
    let gauss = gaussian_noise(&sp, noise.mu_g, noise.sigma_g, &mut rng);
    let blur = motion_blur(&gauss, noise.k_mb, &mut rng);

    let stages: [(&str, &DepthImage); 4] = [
        ("0_clean", &clean),
        ("1_salt_pepper", &sp),
        ("2_gaussian", &gauss),
        ("3_blur", &blur),
    ];
    let mut stats = String::new();
    stats.push_str(&format!("image {}x{}\n", clean.h, clean.w));
    for (name, img) in &stages {
        let mut f = fs::File::create(out.join(format!("{name}.pgm"))).map_err(runtime)?;
        write_pgm(img, &mut f).map_err(runtime)?;
        let (mean, std, extreme) = stage_stats(img);
        stats.push_str(&format!(
            "stage {name} mean {mean:.4} std {std:.4} extreme_fraction {extreme:.6}\n"
        ));
    }

    // measured impulse rate on a mid-gray ensemble, where every impulse is
    // visible as a changed pixel
    let trials = 200;
    let gray = DepthImage::filled(cfg.env.cam.res_h, cfg.env.cam.res_w, 128);
    let mut changed = 0usize;
    for _ in 0..trials {
        let noisy = salt_pepper(&gray, noise.p_sp, &mut rng);
        changed += noisy.codes.iter().zip(&gray.codes).filter(|(a, b)| a != b).count();
    }
    let impulse_fraction = changed as f64 / (trials * gray.len()) as f64;
    stats.push_str(&format!("impulse_fraction {impulse_fraction:.6}\n"));

    // state-noise spread measured the same way: repeated draws on a zeroed
    // state vector
    let zero = make_self_state(&pose, cfg.env.start);
    let draws = 100_000;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..draws {
        let s = corrupt_state(&zero, &noise, &mut rng);
        sum += s.d[0];
        sum2 += s.d[0] * s.d[0];
    }
    let mean = sum / draws as f64;
    let std = (sum2 / draws as f64 - mean * mean).max(0.0).sqrt();
    stats.push_str(&format!("state_noise_mean {mean:.6}\n"));
    stats.push_str(&format!("state_noise_std {std:.6}\n"));
    stats.push_str(&format!("blur_kernel {}\n", noise.k_mb));

    fs::write(out.join("stats.txt"), &stats).map_err(runtime)?;
    print!("{stats}");
    println!("stage images in {}", out.display());
    Ok(())
}

pub fn cmd_report(run: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let path = run.join("report.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let report: TrainingReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("malformed {}: {e}", path.display())))?;

    let out_dir: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| run.to_path_buf());
    fs::create_dir_all(&out_dir).map_err(runtime)?;
    let mut table = String::from("step\tsr\taer\tasse\n");
    for p in &report.curves {
        let asse = p.asse.map_or("nan".into(), |v| v.to_string());
        table.push_str(&format!("{}\t{}\t{}\t{}\n", p.step, p.sr, p.aer, asse));
    }
    let table_path = out_dir.join("curves.tsv");
    let mut f = fs::File::create(&table_path).map_err(runtime)?;
    f.write_all(table.as_bytes()).map_err(runtime)?;

    println!(
        "{} env steps, {} learner steps, {} evaluation points",
        report.total_env_steps,
        report.learner_steps,
        report.curves.len()
    );
    println!(
        "final: SR {:.3}  AER {:.3}  ASSE {}",
        report.final_eval.sr,
        report.final_eval.aer,
        fmt_asse(report.final_eval.asse)
    );
    println!("curves -> {}", table_path.display());
    Ok(())
}
