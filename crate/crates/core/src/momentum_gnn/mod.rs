//! MomentumGNN: a message-passing network whose outputs are magnitudes of
//! momentum-conserving per-edge impulses, applied layer by layer.
//!
//! The [`Variant::Baseline`] model shares the encoder and processor but decodes
//! an unconstrained per-vertex acceleration after the last layer.

mod features;
mod forward;
mod layered;
mod topology;

pub use features::{
    edge_dihedrals, edge_features, node_features, wrap_angle, FeatureNormalizer, Standardizer,
    EDGE_FEATURES, FEATURE_SCHEMA, NODE_FEATURES,
};
pub use forward::{
    baseline_forward, build_baseline, build_momentum, forward, GraphOutputs, StepInput,
    StepPrediction, VelocityMode,
};
pub use layered::{layer_accelerations, layered_update, LayerMagnitudes};
pub use topology::GraphTopology;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::MeshKind;
use crate::neural::{Checkpoint, Graph, Mlp, ParamStore, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Momentum,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub kind: MeshKind,
    pub layers: usize,
    pub width: usize,
    /// Decoder outputs are multiplied by `impulse_scale * mean mass * mean rest length / dt`
    /// (bend magnitudes by one more mean rest length). The baseline uses it as
    /// `impulse_scale * mean rest length / dt^2` for accelerations.
    pub impulse_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Momentum,
            kind: MeshKind::Shell,
            layers: 4,
            width: 128,
            impulse_scale: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(
                "layers and width must be positive".into(),
            ));
        }
        if !(self.impulse_scale > 0.0 && self.impulse_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "impulse_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-layer networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub edge: Mlp,
    pub vertex: Mlp,
    pub stretch: Option<Mlp>,
    pub bend: Option<Mlp>,
}

/// All learnable parameters plus the structure that uses them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub normalizer: FeatureNormalizer,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub layers: Vec<LayerParams>,
    pub vertex_decoder: Option<Mlp>,
}

/// Number of scalar per-layer geometry inputs to the edge network.
const GEOMETRY_INPUTS: usize = 2;

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    format: String,
    feature_schema: u32,
    config: ModelConfig,
    normalizer: FeatureNormalizer,
}

const MANIFEST_FORMAT: &str = "msim-model";

impl Model {
    /// Randomly initialised model.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Model> {
        config.validate()?;
        let w = config.width;
        let mut store = ParamStore::new();
        let node_encoder = Mlp::new(&mut store, "encoder.node", NODE_FEATURES, w, w, rng);
        let edge_encoder = Mlp::new(&mut store, "encoder.edge", EDGE_FEATURES, w, w, rng);
        let momentum = config.variant == Variant::Momentum;
        let layers = (0..config.layers)
            .map(|l| LayerParams {
                edge: Mlp::new(
                    &mut store,
                    &format!("layer{l}.edge"),
                    3 * w + GEOMETRY_INPUTS,
                    w,
                    w,
                    rng,
                ),
                vertex: Mlp::new(&mut store, &format!("layer{l}.vertex"), 2 * w, w, w, rng),
                stretch: momentum
                    .then(|| Mlp::new(&mut store, &format!("layer{l}.stretch"), w, w, 1, rng)),
                bend: (momentum && config.kind == MeshKind::Shell)
                    .then(|| Mlp::new(&mut store, &format!("layer{l}.bend"), w, w, 1, rng)),
            })
            .collect();
        let vertex_decoder =
            (!momentum).then(|| Mlp::new(&mut store, "decoder.vertex", w, w, 3, rng));
        Ok(Model {
            config,
            store,
            normalizer: FeatureNormalizer::default(),
            node_encoder,
            edge_encoder,
            layers,
            vertex_decoder,
        })
    }

    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Model> {
        Model::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Zeroes the output layer of every decoder so the model starts as the bare momentum step.
    pub fn zero_decoders(&mut self) {
        let mut decoders: Vec<Mlp> = self
            .layers
            .iter()
            .flat_map(|l| l.stretch.iter().chain(l.bend.iter()).cloned())
            .collect();
        decoders.extend(self.vertex_decoder.clone());
        for d in decoders {
            d.zero_output(&mut self.store);
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.store.n_scalars()
    }

    pub fn manifest(&self) -> String {
        serde_json::to_string(&Manifest {
            format: MANIFEST_FORMAT.into(),
            feature_schema: FEATURE_SCHEMA,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
        })
        .expect("manifest serialises")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: self.manifest(),
            sections: self.store.sections(),
        }
    }

    /// Rebuilds the model from a checkpoint; extra sections (e.g. optimiser state) are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let m: Manifest = serde_json::from_str(&ck.manifest)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "not a model checkpoint: {}",
                m.format
            )));
        }
        if m.feature_schema != FEATURE_SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "unsupported feature schema {}",
                m.feature_schema
            )));
        }
        let mut model = Model::seeded(m.config, 0)?;
        model.normalizer = m.normalizer;
        model.store.load_sections(&ck.sections)?;
        Ok(model)
    }

    pub(crate) fn stretch_decoder(&self, layer: usize) -> Result<&Mlp> {
        self.layers
            .get(layer)
            .and_then(|l| l.stretch.as_ref())
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no stretch decoder")))
    }

    /// `f_stretch(max(s_ij, s_ji))` for every mesh edge; `pooled` must already be the max.
    pub fn decode_stretch(&self, g: &mut Graph, layer: usize, pooled: Var) -> Result<Var> {
        self.stretch_decoder(layer)?.forward(g, pooled)
    }

    /// `f_bend` on the pooled latents of the given mesh edges, each of which must be a hinge edge.
    pub fn decode_bend(
        &self,
        g: &mut Graph,
        layer: usize,
        pooled: Var,
        topo: &GraphTopology,
        edges: &std::sync::Arc<[usize]>,
    ) -> Result<Var> {
        let dec = self
            .layers
            .get(layer)
            .and_then(|l| l.bend.as_ref())
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no bend decoder")))?;
        if let Some(&e) = edges.iter().find(|e| !topo.hinge_edge.contains(e)) {
            return Err(Error::InvalidArgument(format!("edge {e} is not a hinge")));
        }
        let rows = g.gather_rows(pooled, edges)?;
        dec.forward(g, rows)
    }
}
