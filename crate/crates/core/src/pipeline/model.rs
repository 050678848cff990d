use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encode::{positional_encode, ExtractorWeights};
use crate::error::{Error, Result};
use crate::geometry::{subdivide, CanonicalMesh, DensificationTable};
use crate::heads::{DecoderConfig, DecoderInit, DecoderWeights};
use crate::nn::{AttentionBlockWeights, MlpWeights, ParamStore, Tensor};
use crate::pipeline::config::ModelConfig;
use crate::real::Real;
use crate::triplane::{AggregatorWeights, FeatureDecoderWeights, TriplaneBranchWeights, VirtualCameraRig};

pub const EXTRACTOR: &str = "encode.extractor";
pub const FUSION: &str = "encode.fusion";
pub const POINT_EMBED: &str = "point.embed";
pub const POINT_BLOCK: &str = "point.block";
pub const COARSE: &str = "coarse";
pub const DENSE: &str = "dense";
pub const TRIPLANE: &str = "triplane";
pub const AGGREGATOR: &str = "aggregator";
pub const FEATURE_DECODER: &str = "feature_decoder";

/// Fixed geometry derived from the config: canonical vertices, their
/// positional encoding and the densification table.
#[derive(Clone, Debug)]
pub struct Template {
    pub mesh: CanonicalMesh,
    pub table: DensificationTable,
    pub rig: VirtualCameraRig,
    vertices: Tensor<f64>,
    encoded: Tensor<f64>,
}

impl Template {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        let mesh = cfg.template.load()?;
        let sub = subdivide(&mesh, cfg.area_threshold, cfg.max_depth)?;
        let vertices = Tensor::from_fn(&[mesh.vertex_count(), 3], |i| mesh.vertices[i / 3][i % 3]);
        let encoded = positional_encode(&vertices, &cfg.positional())?;
        Ok(Self {
            mesh,
            table: sub.table.capped(cfg.dense_cap),
            rig: VirtualCameraRig::default(),
            vertices,
            encoded,
        })
    }

    pub fn coarse_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn dense_count(&self) -> usize {
        self.table.len()
    }

    /// Canonical vertices `V`, `M_C × 3`.
    pub fn vertices<T: Real>(&self) -> Tensor<T> {
        self.vertices.cast()
    }

    /// `γ(V)`.
    pub fn encoded_vertices<T: Real>(&self) -> Tensor<T> {
        self.encoded.cast()
    }
}

/// Every learnable tensor of the model, by name, plus its config.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

fn decoder_cfg(cfg: &ModelConfig, in_dim: usize, offset: f64) -> DecoderConfig {
    DecoderConfig {
        in_dim,
        hidden: cfg.decoder_hidden,
        offset_bound: offset,
        scale_max: cfg.scale_max,
    }
}

pub fn dense_in_dim(cfg: &ModelConfig) -> usize {
    cfg.width + cfg.aggregate_channels
}

impl<T: Real> ModelWeights<T> {
    /// Fresh weights drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let c = config.width;

        ExtractorWeights::<T>::random(&config.extractor(), rng)?.insert_into(&mut store, EXTRACTOR)?;
        MlpWeights::<T>::random(&[4 * config.extractor_width, c, c], rng).insert_into(&mut store, FUSION)?;
        MlpWeights::<T>::random(&[config.positional().out_dim(), c, c], rng).insert_into(&mut store, POINT_EMBED)?;
        for i in 0..config.point_blocks {
            AttentionBlockWeights::<T>::random(c, config.heads, rng)?
                .insert_into(&mut store, &format!("{POINT_BLOCK}{i}"))?;
        }
        let init = DecoderInit {
            scale: 0.5 * config.scale_max,
            ..DecoderInit::default()
        };
        DecoderWeights::<T>::random(&decoder_cfg(config, c, config.coarse_offset), &init, rng)?
            .insert_into(&mut store, COARSE)?;
        DecoderWeights::<T>::random(&decoder_cfg(config, dense_in_dim(config), config.dense_offset), &init, rng)?
            .insert_into(&mut store, DENSE)?;
        TriplaneBranchWeights::<T>::random(
            &config.triplane_layout(),
            c,
            config.triplane_blocks,
            config.heads,
            config.triplane_channels,
            rng,
        )?
        .insert_into(&mut store, TRIPLANE)?;
        AggregatorWeights::<T>::random(
            config.ray_samples,
            config.ray_spacing,
            config.triplane_channels,
            config.aggregate_channels,
            rng,
        )?
        .insert_into(&mut store, AGGREGATOR)?;
        FeatureDecoderWeights::<T>::random(config.aggregate_channels, config.feature_decoder_hidden, rng)
            .mlp
            .insert_into(&mut store, FEATURE_DECODER)?;
        Ok(Self {
            config: config.clone(),
            store,
        })
    }

    /// Checks that `store` holds exactly the tensors `config` calls for,
    /// with the right shapes.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let expected = Self::init(&config, 0)?;
        let want: BTreeSet<&String> = expected.store.names().collect();
        let have: BTreeSet<&String> = store.names().collect();
        if let Some(missing) = want.difference(&have).next() {
            return Err(Error::MissingTensor((*missing).clone()));
        }
        if let Some(extra) = have.difference(&want).next() {
            return Err(Error::UnexpectedTensor((*extra).clone()));
        }
        for (name, t) in expected.store.iter() {
            let got = store.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::dim("checkpoint tensor", got.shape(), t.shape()));
            }
        }
        Ok(Self { config, store })
    }

    pub fn extractor(&self) -> Result<ExtractorWeights<T>> {
        ExtractorWeights::from_store(
            &self.store,
            EXTRACTOR,
            self.config.extractor_patch,
            self.config.extractor_heads,
        )
    }

    pub fn scalar_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }

    /// Whether a named tensor is updated by training; the image backbone
    /// stays frozen.
    pub fn is_trainable(name: &str) -> bool {
        !name.starts_with(EXTRACTOR)
    }
}
