use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::{Dataset, TrainSample};
use super::loss::{physics_loss, sample_loss};
use super::noise::{apply_noise, NoiseConfig};
use crate::integrator::{eval_external, momentum_step, solve_direct, StepConfig};
use crate::momentum_gnn::{
    baseline_forward, edge_features, forward, node_features, FeatureNormalizer, Model, ModelConfig,
    Standardizer, Variant, VelocityMode, EDGE_FEATURES, NODE_FEATURES,
};
use crate::neural::{Adam, AdamConfig, Checkpoint, Tensor};
use crate::{Error, Result, Vec3};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "MSIM_THREADS";

/// Worker pool sized by `threads`, else by `MSIM_THREADS`, else rayon's default.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match threads {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => s.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "{THREADS_ENV} must be a positive integer, got {s:?}"
                ))
            })?,
            Err(_) => 0,
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub noise: Option<NoiseConfig>,
    /// Write a resumable checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> TrainConfig {
        let noise = Some(NoiseConfig::for_kind(model.kind));
        TrainConfig {
            model,
            steps: 2000,
            batch: 8,
            adam: AdamConfig::default(),
            seed: 0,
            noise,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

/// One optimiser step as written to the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub momentum_step_loss: f64,
    /// Samples dropped because the prediction hit a degenerate stencil.
    pub skipped: usize,
}

/// Fits the feature standardisation on clean dataset states.
pub fn fit_normalizer(data: &Dataset) -> Result<FeatureNormalizer> {
    let mut nodes = Vec::with_capacity(data.len());
    let mut edges = Vec::with_capacity(data.len());
    for s in &data.samples {
        let mesh = data.mesh_of(s);
        let f = eval_external(mesh, &s.state, &s.forces);
        let x_m = momentum_step(mesh, &s.state, &f, s.dt);
        nodes.push(node_features(mesh, &s.state, &f));
        edges.push(edge_features(mesh, &x_m)?);
    }
    Ok(FeatureNormalizer {
        node: Standardizer::fit(NODE_FEATURES, &nodes),
        edge: Standardizer::fit(EDGE_FEATURES, &edges),
    })
}

const STREAM_SALT: u64 = 0x6d73_696d_7472_6e31;

/// Batch RNG for `step`, independent of every other step.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    rng.set_stream(step as u64);
    rng
}

/// Model, optimiser and progress of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: usize,
}

impl Trainer {
    /// Random encoder/processor, zeroed decoders, normaliser fitted to `data`.
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Trainer> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if let Some(m) = data.meshes.iter().find(|m| m.kind() != config.model.kind) {
            return Err(Error::InvalidArgument(format!(
                "dataset holds a {} mesh, model expects {}",
                m.kind().as_str(),
                config.model.kind.as_str()
            )));
        }
        let mut model = Model::seeded(config.model.clone(), config.seed)?;
        model.normalizer = fit_normalizer(data)?;
        model.zero_decoders();
        let adam = Adam::new(config.adam, &model.store);
        Ok(Trainer {
            config,
            model,
            adam,
            step: 0,
        })
    }

    /// The samples (noised) used at optimiser step `step`. When the dataset
    /// mixes pinned and pin-free meshes each draw picks either group with
    /// equal probability.
    pub fn batch(&self, data: &Dataset, step: usize) -> Result<Vec<TrainSample>> {
        let mut rng = step_rng(self.config.seed, step);
        let (pinned, free): (Vec<usize>, Vec<usize>) =
            (0..data.len()).partition(|&k| data.mesh_of(&data.samples[k]).has_pins());
        (0..self.config.batch)
            .map(|_| {
                let k = match (pinned.is_empty(), free.is_empty()) {
                    (false, false) => {
                        let group = if rng.random_bool(0.5) { &pinned } else { &free };
                        group[rng.random_range(0..group.len())]
                    }
                    _ => rng.random_range(0..data.len()),
                };
                let mut s = data.samples[k].clone();
                if let Some(noise) = &self.config.noise {
                    s.state = apply_noise(data.mesh_of(&s), &s.state, noise, &mut rng)?;
                }
                Ok(s)
            })
            .collect()
    }

    /// One Adam step on a fresh batch. Per-sample work runs on the current
    /// rayon pool; the reduction is in batch order.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepLog> {
        let batch = self.batch(data, self.step)?;
        let model = &self.model;
        let results: Vec<_> = batch
            .par_iter()
            .map(|s| sample_loss(model, data.mesh_of(s), &s.state, &s.forces, s.dt))
            .collect();
        let mut total: Option<Vec<Tensor>> = None;
        let (mut loss, mut base, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) if !r.loss.is_finite() => {
                    return Err(
                        Error::NonFinite(format!("loss of batch sample {i}")).at_step(self.step)
                    )
                }
                Ok(r) => {
                    loss += r.loss;
                    base += r.momentum_step_loss;
                    used += 1;
                    match &mut total {
                        None => total = Some(r.gradients),
                        Some(t) => {
                            for (a, b) in t.iter_mut().zip(&r.gradients) {
                                a.add_assign(b);
                            }
                        }
                    }
                }
                Err(e)
                    if matches!(
                        e.root(),
                        Error::DegenerateStencil { .. } | Error::Inverted { .. }
                    ) =>
                {
                    skipped += 1
                }
                Err(e) => return Err(e.at_step(self.step)),
            }
        }
        let mut grads = total.ok_or_else(|| {
            Error::NonFinite(format!(
                "every sample of batch {} was degenerate",
                self.step
            ))
        })?;
        let inv = 1.0 / used as f64;
        for g in &mut grads {
            g.scale_assign(inv);
        }
        self.adam
            .update(&mut self.model.store, &grads)
            .map_err(|e| e.at_step(self.step))?;
        let log = StepLog {
            step: self.step,
            loss: loss * inv,
            momentum_step_loss: base * inv,
            skipped,
        };
        self.step += 1;
        Ok(log)
    }

    /// Trains up to `config.steps`, appending one JSON line per step to `log`
    /// and writing `checkpoint` periodically and at the end.
    pub fn run(
        &mut self,
        data: &Dataset,
        checkpoint: Option<&Path>,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<StepLog>> {
        let mut out = Vec::new();
        while self.step < self.config.steps {
            let entry = self.train_step(data)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&entry)?)?;
            }
            out.push(entry);
            let every = self.config.checkpoint_every;
            if let Some(p) = checkpoint {
                if every > 0 && self.step.is_multiple_of(every) && self.step < self.config.steps {
                    self.to_checkpoint()?.save(p)?;
                }
            }
        }
        if let Some(p) = checkpoint {
            self.to_checkpoint()?.save(p)?;
        }
        Ok(out)
    }

    /// Model checkpoint extended with the optimiser moments and progress, so
    /// that a resumed run is bit-identical to an uninterrupted one.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut manifest: serde_json::Value = serde_json::from_str(&self.model.manifest())?;
        manifest["training"] = serde_json::to_value(&self.config)?;
        let mut sections = self.model.store.sections();
        for (k, id) in self.model.store.ids().enumerate() {
            let name = self.model.store.name(id);
            sections.push((format!("adam.first.{name}"), self.adam.first[k].clone()));
            sections.push((format!("adam.second.{name}"), self.adam.second[k].clone()));
        }
        sections.push((
            PROGRESS_SECTION.into(),
            Tensor::row_vector(vec![self.step as f64, self.adam.step as f64]),
        ));
        Ok(Checkpoint {
            manifest: serde_json::to_string(&manifest)?,
            sections,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Trainer> {
        let manifest: serde_json::Value = serde_json::from_str(&ck.manifest)?;
        let config: TrainConfig =
            serde_json::from_value(manifest.get("training").cloned().ok_or_else(|| {
                Error::InvalidArgument("checkpoint has no training state".into())
            })?)?;
        let model = Model::from_checkpoint(ck)?;
        let mut adam = Adam::new(config.adam, &model.store);
        for (k, id) in model.store.ids().enumerate() {
            let name = model.store.name(id);
            for (prefix, slot) in [
                ("adam.first", &mut adam.first[k]),
                ("adam.second", &mut adam.second[k]),
            ] {
                let t = ck.section(&format!("{prefix}.{name}")).ok_or_else(|| {
                    Error::InvalidArgument(format!("checkpoint lacks {prefix}.{name}"))
                })?;
                if t.shape() != slot.shape() {
                    return Err(Error::Shape {
                        op: "optimiser state",
                        lhs: slot.shape(),
                        rhs: t.shape(),
                    });
                }
                *slot = t.clone();
            }
        }
        let progress = ck
            .section(PROGRESS_SECTION)
            .filter(|t| t.len() == 2)
            .ok_or_else(|| Error::InvalidArgument("checkpoint lacks training progress".into()))?;
        adam.step = progress.data()[1] as u64;
        Ok(Trainer {
            config,
            model,
            adam,
            step: progress.data()[0] as usize,
        })
    }
}

const PROGRESS_SECTION: &str = "train.progress";

/// Mean physics loss of `model` over `samples`; degenerate predictions are errors.
pub fn mean_loss(model: &Model, data: &Dataset, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| physics_loss(model, data.mesh_of(s), &s.state, &s.forces, s.dt))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Distances to the implicit-Euler solution of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepError {
    /// `|x_net - x*|_M`.
    pub network: f64,
    /// `|x_m - x*|_M`.
    pub momentum_step: f64,
}

fn mass_norm(masses: &[f64], a: &[Vec3], b: &[Vec3]) -> f64 {
    masses
        .iter()
        .zip(a.iter().zip(b))
        .map(|(m, (x, y))| m * (x - y).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Mass-weighted distance of the network and the bare momentum step to the
/// Newton-converged implicit-Euler positions, per sample.
pub fn single_step_errors(
    model: &Model,
    data: &Dataset,
    samples: &[TrainSample],
) -> Result<Vec<StepError>> {
    samples
        .par_iter()
        .map(|s| {
            let mesh = data.mesh_of(s);
            let cfg = StepConfig::for_mesh(mesh, s.dt);
            let f = eval_external(mesh, &s.state, &s.forces);
            let (target, _) = solve_direct(mesh, &s.state, &f, &cfg)?;
            let pred = match model.config.variant {
                Variant::Momentum => forward(
                    model,
                    mesh,
                    &s.state,
                    &s.forces,
                    s.dt,
                    VelocityMode::FiniteDifference,
                )?,
                Variant::Baseline => baseline_forward(model, mesh, &s.state, &s.forces, s.dt)?,
            };
            let x_m = momentum_step(mesh, &s.state, &f, s.dt);
            Ok(StepError {
                network: mass_norm(mesh.masses(), &pred.state.positions, &target),
                momentum_step: mass_norm(mesh.masses(), &x_m, &target),
            })
        })
        .collect()
}

/// Applies the training noise to `samples` with a dedicated seed, e.g. to build a held-out set.
pub fn noised(
    data: &Dataset,
    samples: &[TrainSample],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.state = apply_noise(data.mesh_of(&s), &s.state, noise, &mut rng)?;
            Ok(s)
        })
        .collect()
}
