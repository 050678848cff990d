use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encode::{ExtractorConfig, PositionalEncoderConfig};
use crate::error::{Error, Result};
use crate::geometry::{load_mesh, CanonicalMesh};
use crate::triplane::{RayMode, TriplaneLayout};

/// Where the canonical point set comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TemplateSpec {
    Icosphere { subdivisions: usize, radius: f64 },
    Mesh { path: PathBuf },
}

impl TemplateSpec {
    pub fn load(&self) -> Result<CanonicalMesh> {
        match self {
            TemplateSpec::Icosphere { subdivisions, radius } => Ok(CanonicalMesh::icosphere(*subdivisions, *radius)),
            TemplateSpec::Mesh { path } => load_mesh(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub template: TemplateSpec,
    pub image_size: usize,
    pub extractor_patch: usize,
    pub extractor_width: usize,
    pub extractor_heads: usize,
    /// Token width `C_t`.
    pub width: usize,
    /// Point-branch attention blocks `L_A`.
    pub point_blocks: usize,
    /// Triplane-branch attention blocks `L_AT`.
    pub triplane_blocks: usize,
    pub heads: usize,
    /// Positional-encoding frequencies `L`.
    pub pe_frequencies: usize,
    /// Cap on the dense point count `M_D`.
    pub dense_cap: usize,
    /// Subdivision area threshold `λ_area`.
    pub area_threshold: f64,
    pub max_depth: usize,
    /// Samples per ray `K_m`.
    pub ray_samples: usize,
    /// Sample spacing `δ`.
    pub ray_spacing: f64,
    pub ray_mode: RayMode,
    pub triplane_height: usize,
    pub triplane_width: usize,
    /// Scene radius used to normalize triplane coordinates.
    pub triplane_radius: f64,
    pub triplane_channels: usize,
    pub aggregate_channels: usize,
    /// Turns the triplane branch off; the dense decoder then sees zeros.
    pub triplane_enabled: bool,
    /// `ε_OC`.
    pub coarse_offset: f64,
    /// `ε_OD`.
    pub dense_offset: f64,
    pub scale_max: f64,
    pub decoder_hidden: usize,
    pub feature_decoder_hidden: usize,
}

impl ModelConfig {
    /// Sizes from the original full-scale setup. Far too large for a CPU;
    /// kept as documentation and for shape checks.
    pub fn reference() -> Self {
        Self {
            template: TemplateSpec::Mesh {
                path: PathBuf::from("flame_template.obj"),
            },
            image_size: 512,
            extractor_patch: 16,
            extractor_width: 1024,
            extractor_heads: 16,
            width: 1024,
            point_blocks: 6,
            triplane_blocks: 6,
            heads: 16,
            pe_frequencies: 6,
            dense_cap: 10_000,
            area_threshold: 2e-6,
            max_depth: 3,
            ray_samples: 32,
            ray_spacing: 0.01,
            ray_mode: RayMode::Nearest,
            triplane_height: 64,
            triplane_width: 64,
            triplane_radius: 0.5,
            triplane_channels: 32,
            aggregate_channels: 64,
            triplane_enabled: true,
            coarse_offset: 0.15,
            dense_offset: 0.056,
            scale_max: 0.05,
            decoder_hidden: 256,
            feature_decoder_hidden: 64,
        }
    }

    /// Desk-scale model used by the overfit run.
    pub fn toy() -> Self {
        Self {
            template: TemplateSpec::Icosphere {
                subdivisions: 3,
                radius: 0.3,
            },
            image_size: 64,
            extractor_patch: 8,
            extractor_width: 32,
            extractor_heads: 4,
            width: 64,
            point_blocks: 2,
            triplane_blocks: 2,
            heads: 4,
            pe_frequencies: 6,
            dense_cap: 10_000,
            area_threshold: 1e-4,
            max_depth: 1,
            ray_samples: 8,
            ray_spacing: 0.01,
            ray_mode: RayMode::Nearest,
            triplane_height: 16,
            triplane_width: 16,
            triplane_radius: 0.5,
            triplane_channels: 32,
            aggregate_channels: 64,
            triplane_enabled: true,
            coarse_offset: 0.15,
            dense_offset: 0.056,
            scale_max: 0.05,
            decoder_hidden: 64,
            feature_decoder_hidden: 32,
        }
    }

    /// Smallest sensible model, for gradient checks.
    pub fn micro() -> Self {
        Self {
            template: TemplateSpec::Icosphere {
                subdivisions: 1,
                radius: 0.3,
            },
            image_size: 16,
            extractor_patch: 8,
            extractor_width: 8,
            extractor_heads: 2,
            width: 16,
            point_blocks: 1,
            triplane_blocks: 1,
            heads: 2,
            pe_frequencies: 2,
            dense_cap: 60,
            area_threshold: 1e-3,
            max_depth: 1,
            ray_samples: 3,
            ray_spacing: 0.02,
            ray_mode: RayMode::Nearest,
            triplane_height: 4,
            triplane_width: 4,
            triplane_radius: 0.5,
            triplane_channels: 4,
            aggregate_channels: 4,
            triplane_enabled: true,
            coarse_offset: 0.15,
            dense_offset: 0.056,
            scale_max: 0.05,
            decoder_hidden: 8,
            feature_decoder_hidden: 8,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "toy" => Ok(Self::toy()),
            "micro" => Ok(Self::micro()),
            _ => Err(Error::contract(format!("unknown preset `{name}` (reference, toy, micro)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("extractor_patch", self.extractor_patch),
            ("extractor_width", self.extractor_width),
            ("extractor_heads", self.extractor_heads),
            ("width", self.width),
            ("heads", self.heads),
            ("pe_frequencies", self.pe_frequencies),
            ("dense_cap", self.dense_cap),
            ("max_depth", self.max_depth),
            ("ray_samples", self.ray_samples),
            ("triplane_height", self.triplane_height),
            ("triplane_width", self.triplane_width),
            ("triplane_channels", self.triplane_channels),
            ("aggregate_channels", self.aggregate_channels),
            ("decoder_hidden", self.decoder_hidden),
            ("feature_decoder_hidden", self.feature_decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!("config field `{name}` must be positive")));
            }
        }
        for (name, v) in [
            ("area_threshold", self.area_threshold),
            ("ray_spacing", self.ray_spacing),
            ("triplane_radius", self.triplane_radius),
            ("coarse_offset", self.coarse_offset),
            ("dense_offset", self.dense_offset),
            ("scale_max", self.scale_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("config field `{name}` must be positive, got {v}")));
            }
        }
        if self.width % self.heads != 0 || self.extractor_width % self.extractor_heads != 0 {
            return Err(Error::contract("token widths must divide evenly into heads"));
        }
        if self.extractor_width % 4 != 0 {
            return Err(Error::contract("extractor width must be a multiple of 4"));
        }
        if self.image_size % self.extractor_patch != 0 {
            return Err(Error::contract("image size must be a multiple of the patch size"));
        }
        Ok(())
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            patch: self.extractor_patch,
            raw_dim: self.extractor_width,
            heads: self.extractor_heads,
        }
    }

    pub fn positional(&self) -> PositionalEncoderConfig {
        PositionalEncoderConfig {
            frequencies: self.pe_frequencies,
            include_input: false,
        }
    }

    pub fn triplane_layout(&self) -> TriplaneLayout {
        TriplaneLayout {
            height: self.triplane_height,
            width: self.triplane_width,
            r_max: self.triplane_radius,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config, or a `key = value` file whose optional
    /// `preset` key picks the starting point (default `toy`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            return Self::from_json(&text);
        }
        let pairs = parse_key_values(&text, path)?;
        let preset = pairs
            .iter()
            .find(|(k, _, _)| k == "preset")
            .map_or("toy", |(_, v, _)| v.as_str());
        let mut value = serde_json::to_value(Self::preset(preset)?)?;
        let obj = value.as_object_mut().expect("config is an object");
        for (key, raw, line) in &pairs {
            if key == "preset" {
                continue;
            }
            let Some(slot) = obj.get_mut(key) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: format!("unknown config key `{key}`"),
                });
            };
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Loss weights `λ1…λ6` plus the coarse / dense split inside the Gaussian
/// RGB and mask terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub gaussian_rgb: f64,
    pub triplane_rgb: f64,
    pub mask: f64,
    pub triplane_feature: f64,
    pub coarse_stage: f64,
    pub dense_stage: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            perceptual: 1.0,
            gaussian_rgb: 1.0,
            triplane_rgb: 0.1,
            mask: 1.0,
            triplane_feature: 1e-4,
            coarse_stage: 1.0,
            dense_stage: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l1,
            self.perceptual,
            self.gaussian_rgb,
            self.triplane_rgb,
            self.mask,
            self.triplane_feature,
            self.coarse_stage,
            self.dense_stage,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::contract("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Views rendered per step; 0 uses every view of the sample.
    pub views_per_step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub background: [f64; 3],
    pub losses: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            warmup_steps: 500,
            total_steps: 100_000,
            views_per_step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            background: [0.0; 3],
            losses: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Single-scene overfitting with the toy model. The long warmup keeps
    /// the first steps small enough that the loss falls on every step; the
    /// rate keeps climbing well past the point where a scene is fit.
    pub fn overfit() -> Self {
        Self {
            base_lr: 3e-3,
            warmup_steps: 1500,
            total_steps: 2000,
            ..Self::default()
        }
    }
}
