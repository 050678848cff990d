use std::path::Path;

use rand::Rng;

use crate::bundle;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nn::attention::{cross_attention, AttentionBlockWeights};
use crate::nn::layers::{Activation, LinearWeights, MlpVars, MlpWeights};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Number of feature layers handed to the fusion MLP.
pub const FEATURE_LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    ToyExtractor,
    File,
}

impl FeatureSource {
    fn as_str(self) -> &'static str {
        match self {
            FeatureSource::ToyExtractor => "toy_extractor",
            FeatureSource::File => "file",
        }
    }
}

/// Four token grids of identical size, shallow to deep.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatureSet<T> {
    pub layers: Vec<Tensor<T>>,
    pub source: FeatureSource,
}

impl<T: Real> ImageFeatureSet<T> {
    pub fn new(layers: Vec<Tensor<T>>, source: FeatureSource) -> Result<Self> {
        if layers.len() != FEATURE_LAYERS {
            return Err(Error::contract(format!(
                "expected {FEATURE_LAYERS} feature layers, got {}",
                layers.len()
            )));
        }
        let tokens = layers[0].rows();
        for l in &layers {
            if l.rows() != tokens {
                return Err(Error::dim("image_features", layers[0].shape(), l.shape()));
            }
            if let Some(i) = l.first_non_finite() {
                return Err(Error::NonFinite {
                    what: "image features",
                    index: i,
                });
            }
        }
        Ok(Self { layers, source })
    }

    pub fn token_count(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = ParamStore::new();
        for (i, l) in self.layers.iter().enumerate() {
            store.insert(format!("layer{i}"), l.clone())?;
        }
        let meta = vec![("source".to_string(), self.source.as_str().to_string())];
        bundle::save(path, &meta, &store)
    }

    /// Loads a feature file. Whatever produced it, the result is tagged
    /// [`FeatureSource::File`].
    pub fn load(path: &Path) -> Result<Self> {
        let (_, mut store) = bundle::load::<T>(path)?;
        let layers = (0..FEATURE_LAYERS)
            .map(|i| {
                let name = format!("layer{i}");
                store.remove(&name).ok_or(Error::MissingTensor(name))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = store.names().next() {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        Self::new(layers, FeatureSource::File)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub patch: usize,
    pub raw_dim: usize,
    pub heads: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            raw_dim: 64,
            heads: 4,
        }
    }
}

/// Patch embedding followed by four self-attention stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorWeights<T> {
    pub patch: usize,
    pub embed: LinearWeights<T>,
    pub stages: Vec<AttentionBlockWeights<T>>,
}

impl<T: Real> ExtractorWeights<T> {
    pub fn random(cfg: &ExtractorConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.raw_dim % 4 != 0 {
            return Err(Error::contract("extractor width must be a multiple of 4"));
        }
        let embed = LinearWeights::random(cfg.patch * cfg.patch * 3, cfg.raw_dim, 1.0, rng);
        let stages = (0..FEATURE_LAYERS)
            .map(|_| AttentionBlockWeights::random(cfg.raw_dim, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            patch: cfg.patch,
            embed,
            stages,
        })
    }

    pub fn raw_dim(&self) -> usize {
        self.embed.fan_out()
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        self.embed.insert_into(store, &format!("{prefix}.embed"))?;
        for (i, s) in self.stages.iter().enumerate() {
            s.insert_into(store, &format!("{prefix}.stage{i}"))?;
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, patch: usize, heads: usize) -> Result<Self> {
        let embed = LinearWeights::from_store(store, &format!("{prefix}.embed"))?;
        let stages = (0..FEATURE_LAYERS)
            .map(|i| AttentionBlockWeights::from_store(store, &format!("{prefix}.stage{i}"), heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            patch,
            embed,
            stages,
        })
    }
}

/// Splits an image into non-overlapping `patch × patch` tiles, one row per
/// tile in raster order; within a row values run over patch rows, patch
/// columns, then channels.
pub fn patchify<T: Real>(image: &Image, patch: usize) -> Result<Tensor<T>> {
    if patch == 0 || image.width % patch != 0 || image.height % patch != 0 {
        return Err(Error::contract(format!(
            "image {}×{} is not divisible into {patch}-pixel patches",
            image.width, image.height
        )));
    }
    let (pw, ph) = (image.width / patch, image.height / patch);
    let c = image.channels;
    let mut out = Vec::with_capacity(image.data.len());
    for py in 0..ph {
        for px in 0..pw {
            for y in 0..patch {
                for x in 0..patch {
                    for &v in image.pixel(px * patch + x, py * patch + y) {
                        out.push(T::c(v as f64));
                    }
                }
            }
        }
    }
    Tensor::new(&[pw * ph, patch * patch * c], out)
}

/// Fixed 2D sinusoidal position table: the first half of the channels
/// encodes the patch row, the second half the patch column.
pub fn grid_positions<T: Real>(rows: usize, cols: usize, dim: usize) -> Tensor<T> {
    let quarter = dim / 4;
    Tensor::from_fn(&[rows * cols, dim], |i| {
        let (tok, ch) = (i / dim, i % dim);
        let (r, c) = (tok / cols, tok % cols);
        let (coord, k) = if ch < 2 * quarter { (r, ch) } else { (c, ch - 2 * quarter) };
        let freq = 1.0 / 10000f64.powf((k / 2) as f64 / quarter.max(1) as f64);
        let a = coord as f64 * freq;
        T::c(if k % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Patch embedding alone, before position terms.
pub fn embed_patches<T: Real>(image: &Image, w: &ExtractorWeights<T>) -> Result<Tensor<T>> {
    if image.channels != 3 {
        return Err(Error::contract("extractor expects an RGB image"));
    }
    let patches = patchify::<T>(image, w.patch)?;
    w.embed_linear(&patches)
}

impl<T: Real> ExtractorWeights<T> {
    fn embed_linear(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let mlp = MlpWeights {
            layers: vec![self.embed.clone()],
        };
        mlp.eval(patches, Activation::None)
    }
}

pub fn extract_image_features<T: Real>(image: &Image, w: &ExtractorWeights<T>) -> Result<ImageFeatureSet<T>> {
    let mut x = embed_patches(image, w)?;
    let pos = grid_positions::<T>(image.height / w.patch, image.width / w.patch, w.raw_dim());
    x.add_assign(&pos);
    let mut layers = Vec::with_capacity(FEATURE_LAYERS);
    for stage in &w.stages {
        x = cross_attention(&x, &x, stage)?;
        layers.push(x.clone());
    }
    ImageFeatureSet::new(layers, FeatureSource::ToyExtractor)
}

/// Column-wise concatenation of the four layers.
pub fn concat_layers<T: Real>(f: &ImageFeatureSet<T>) -> Result<Tensor<T>> {
    let n = f.token_count();
    let widths: Vec<usize> = f.layers.iter().map(|l| l.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for r in 0..n {
        for l in &f.layers {
            if l.rows() != n {
                return Err(Error::dim("fuse_layers", f.layers[0].shape(), l.shape()));
            }
            out.extend_from_slice(l.row(r));
        }
    }
    Tensor::new(&[n, total], out)
}

/// Multi-layer fusion: concatenate, then a two-layer GELU MLP to the token width.
pub fn fuse_layers<T: Real>(f: &ImageFeatureSet<T>, fusion: &MlpWeights<T>) -> Result<Tensor<T>> {
    let x = concat_layers(f)?;
    check_fusion_width(&x, fusion)?;
    fusion.eval(&x, Activation::Gelu)
}

/// Tape variant of [`fuse_layers`]; the feature set enters as a constant.
pub fn fuse_layers_var<T: Real>(tape: &mut Tape<T>, f: &ImageFeatureSet<T>, fusion: &MlpVars) -> Result<Var> {
    let x = concat_layers(f)?;
    let xv = tape.constant(x);
    fusion.forward(tape, xv, Activation::Gelu)
}

fn check_fusion_width<T: Real>(x: &Tensor<T>, fusion: &MlpWeights<T>) -> Result<()> {
    match fusion.layers.first() {
        Some(l) if l.fan_in() == x.cols() => Ok(()),
        Some(l) => Err(Error::dim("fuse_layers", x.shape(), l.w.shape())),
        None => Err(Error::contract("empty fusion MLP")),
    }
}
