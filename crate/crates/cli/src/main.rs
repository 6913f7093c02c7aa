use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use msim_core::harness::rollout::save_trajectory;
use msim_core::harness::{
    diag_export, gen_dataset, gen_pinned_dataset, load_dataset, load_trajectory, rollout,
    save_dataset, thread_pool, verify, DatasetRanges, Policy, Scene, TrainConfig, Trainer,
};
use msim_core::mesh::MeshKind;
use msim_core::momentum_gnn::{Model, ModelConfig, Variant, VelocityMode};
use msim_core::neural::Checkpoint;

#[derive(Parser)]
#[command(
    name = "msim",
    version,
    about = "Momentum-conserving simulation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Shell,
    Solid,
}

impl From<Kind> for MeshKind {
    fn from(k: Kind) -> MeshKind {
        match k {
            Kind::Shell => MeshKind::Shell,
            Kind::Solid => MeshKind::Solid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    BasisRank,
    Gradients,
    Conservation,
    Projection,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training set of deformed sheets or cuboids.
    GenData {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Additional snapshots of pinned sheets under a random force field (shells only).
        #[arg(long, default_value_t = 0)]
        pinned: usize,
    },
    /// Self-supervised training on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Passes over the dataset; converted to optimiser steps.
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Optimiser steps; overrides --epochs.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1e-5)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0.2)]
        impulse_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train the per-vertex baseline instead of MomentumGNN.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        no_noise: bool,
        #[arg(long)]
        ckpt: PathBuf,
        /// Continue from the checkpoint at --ckpt.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// JSON-lines metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Roll out a scene with a trained model, the baseline or the reference solver.
    Rollout {
        /// `reference`, `baseline:PATH` or a MomentumGNN checkpoint path.
        #[arg(long)]
        model: String,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        diag: Option<PathBuf>,
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Feed finite-difference velocities forward instead of projected ones.
        #[arg(long)]
        fd_velocity: bool,
    },
    /// Run property suites; exits non-zero if any check fails.
    Verify {
        #[arg(value_enum, required = true)]
        suites: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per gradient check.
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Export per-step diagnostics of a recorded trajectory.
    Diag {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_model(path: &str, want: Variant) -> Result<Model> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {path}"))?;
    let model = Model::from_checkpoint(&ck)?;
    if model.config.variant != want {
        bail!(
            "{path} holds a {:?} model, expected {want:?}",
            model.config.variant
        );
    }
    Ok(model)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            kind,
            count,
            seed,
            out,
            pinned,
        } => {
            let kind = MeshKind::from(kind);
            let ranges = DatasetRanges::for_kind(kind);
            let mut data = gen_dataset(kind, count, seed, &ranges)?;
            if pinned > 0 {
                if kind != MeshKind::Shell {
                    bail!("pinned data is generated for shells only");
                }
                data.extend(gen_pinned_dataset(pinned, seed.wrapping_add(1), &ranges)?);
            }
            save_dataset(&data, &out)?;
            println!(
                "wrote {} samples on {} meshes to {}",
                data.len(),
                data.meshes.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            epochs,
            steps,
            lr,
            layers,
            width,
            batch,
            impulse_scale,
            seed,
            baseline,
            no_noise,
            ckpt,
            resume,
            checkpoint_every,
            log,
        } => {
            let data = load_dataset(&data)?;
            let mut trainer = if resume {
                Trainer::from_checkpoint(&Checkpoint::load(&ckpt)?)?
            } else {
                let kind = data.meshes.first().context("empty dataset")?.kind();
                let mut cfg = TrainConfig::new(ModelConfig {
                    variant: if baseline {
                        Variant::Baseline
                    } else {
                        Variant::Momentum
                    },
                    kind,
                    layers,
                    width,
                    impulse_scale,
                });
                cfg.batch = batch;
                cfg.adam.lr = lr;
                cfg.seed = seed;
                cfg.checkpoint_every = checkpoint_every;
                cfg.steps = steps.unwrap_or(epochs * data.len().div_ceil(batch));
                if no_noise {
                    cfg.noise = None;
                }
                Trainer::new(cfg, &data)?
            };
            let mut sink = log
                .map(|p| File::options().create(true).append(true).open(p))
                .transpose()?
                .map(BufWriter::new);
            let pool = thread_pool(None)?;
            let logs = pool.install(|| {
                trainer.run(
                    &data,
                    Some(&ckpt),
                    sink.as_mut().map(|w| w as &mut dyn Write),
                )
            })?;
            if let Some(w) = sink.as_mut() {
                w.flush()?;
            }
            if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
                println!(
                    "steps {}..{}: loss {:.6e} -> {:.6e} (momentum step {:.6e})",
                    first.step, last.step, first.loss, last.loss, last.momentum_step_loss
                );
            }
            println!("checkpoint {}", ckpt.display());
        }
        Command::Rollout {
            model,
            scene,
            steps,
            diag,
            traj,
            fd_velocity,
        } => {
            let scene = Scene::load(&scene)
                .with_context(|| format!("loading scene {}", scene.display()))?;
            let mode = if fd_velocity {
                VelocityMode::FiniteDifference
            } else {
                VelocityMode::Projected
            };
            let loaded;
            let policy = if model == "reference" {
                Policy::Reference
            } else if let Some(path) = model.strip_prefix("baseline:") {
                loaded = load_model(path, Variant::Baseline)?;
                Policy::Baseline(&loaded)
            } else {
                loaded = load_model(&model, Variant::Momentum)?;
                Policy::Momentum(&loaded, mode)
            };
            let t = rollout(policy, &scene, steps)?;
            if let Some(p) = &diag {
                diag_export(&scene.mesh, &t, p)?;
            }
            if let Some(p) = &traj {
                save_trajectory(&scene.mesh, &t, p)?;
            }
            let last = t.diagnostics.last().expect("initial state");
            println!(
                "{} steps ({}): |p| {:.3e}, |L| {:.3e}, kinetic {:.6e}, elastic {:.6e}, projection fallbacks {}",
                t.n_steps(),
                t.provenance.as_str(),
                last.linear.norm(),
                last.angular.norm(),
                last.kinetic,
                last.elastic,
                t.flagged_steps.len()
            );
        }
        Command::Verify {
            suites,
            seed,
            instances,
        } => {
            let pool = thread_pool(None)?;
            let mut ok = true;
            for s in suites {
                let rep = pool.install(|| match s {
                    Suite::BasisRank => verify::basis_rank(),
                    Suite::Gradients => verify::gradients(instances, seed),
                    Suite::Conservation => verify::conservation(20, 200, seed),
                    Suite::Projection => verify::projection(500, seed),
                })?;
                print!("{rep}");
                ok &= rep.passed();
            }
            return Ok(ok);
        }
        Command::Diag { traj, out } => {
            let (mesh, t) = load_trajectory(&traj)?;
            diag_export(&mesh, &t, &out)?;
            println!("wrote {} rows to {}", t.states.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
