//! JSON run configuration. Every field is optional; command-line flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use evseg_core::affine::AffineParams;
use evseg_core::event::SensorGeometry;
use evseg_core::fit::FitConfig;
use evseg_core::metrics::DrNormalization;
use evseg_core::sim::{presets, Background, DatasetItem, GtMode, Plane, SceneSpec, Sprite, Trajectory};
use evseg_core::voxel::DEFAULT_BINS;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_WINDOW: usize = 200_000;
pub const DEFAULT_SEEDS: [u64; 2] = [0, 1];
/// Darkest value a loaded image maps to, keeping log intensity finite.
const IMAGE_FLOOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sequences: Vec<SequenceConfig>,
    pub gt_mode: GtMode,
    pub n_events: usize,
    pub seeds: Vec<u64>,
    pub fit: FitConfig,
    pub bins: usize,
    pub dr_normalization: DrNormalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sequences: Vec::new(),
            gt_mode: GtMode::default(),
            n_events: DEFAULT_WINDOW,
            seeds: DEFAULT_SEEDS.to_vec(),
            fit: FitConfig::default(),
            bins: DEFAULT_BINS,
            dr_normalization: DrNormalization::default(),
        }
    }
}

/// One simulated sequence. Without images the background and sprites get
/// seeded procedural textures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub name: Option<String>,
    pub width: usize,
    pub height: usize,
    /// Grayscale image; relative paths resolve against the config file.
    pub background_image: Option<PathBuf>,
    /// Background translation over the whole sequence, pixels.
    pub background_flow: [f64; 2],
    /// Full affine background motion; overrides `background_flow`.
    pub background_motion: Option<[f64; 6]>,
    pub sprites: Vec<SpriteConfig>,
    pub contrast_threshold: f64,
    pub dt: f64,
    pub duration: f64,
    pub noise_rate: f64,
    /// Defaults to the sequence index.
    pub seed: Option<u64>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            name: None,
            width: 128,
            height: 128,
            background_image: None,
            background_flow: [6.0, 0.0],
            background_motion: None,
            sprites: vec![SpriteConfig::default()],
            contrast_threshold: 0.5,
            dt: 1e-3,
            duration: 1.0,
            noise_rate: 0.0,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpriteConfig {
    /// Grayscale image, drawn opaque; replaces the procedural texture.
    pub image: Option<PathBuf>,
    /// Side of the procedural square sprite.
    pub size: usize,
    pub flow: [f64; 2],
    pub motion: Option<[f64; 6]>,
    /// Sprite centre at mid-sequence; defaults to the sensor centre.
    pub center: Option<[f64; 2]>,
}

impl Default for SpriteConfig {
    fn default() -> Self {
        Self {
            image: None,
            size: 24,
            flow: [-8.0, 0.0],
            motion: None,
            center: None,
        }
    }
}

impl RunConfig {
    /// Reads and validates `path`; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (i, s) in cfg.sequences.iter_mut().enumerate() {
            if let Some(p) = &mut s.background_image {
                *p = base.join(&*p);
                require_file(p, &format!("sequences[{i}].background_image"))?;
            }
            for (j, sp) in s.sprites.iter_mut().enumerate() {
                if let Some(p) = &mut sp.image {
                    *p = base.join(&*p);
                    require_file(p, &format!("sequences[{i}].sprites[{j}].image"))?;
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.fit.validate().map_err(|e| CliError::Usage(format!("fit: {e}")))?;
        if self.n_events == 0 {
            return Err(CliError::Usage("n_events must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("seeds must not be empty".into()));
        }
        if self.bins == 0 {
            return Err(CliError::Usage("bins must be >= 1".into()));
        }
        if let GtMode::FlowThreshold { tau } = self.gt_mode {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(CliError::Usage(format!("gt_mode.tau must be >= 0, got {tau}")));
            }
        }
        Ok(())
    }

    /// Scene specs for `simulate`. A missing sequence list yields one
    /// default sequence; `seed_base` shifts every sequence's seed.
    pub fn dataset(&self, seed_base: Option<u64>) -> Result<Vec<DatasetItem>, CliError> {
        let defaults = [SequenceConfig::default()];
        let list: &[SequenceConfig] = if self.sequences.is_empty() { &defaults } else { &self.sequences };
        let mut names = std::collections::HashSet::new();
        list.iter()
            .enumerate()
            .map(|(i, s)| {
                let name = s.name.clone().unwrap_or_else(|| format!("seq{i:03}"));
                if !names.insert(name.clone()) {
                    return Err(CliError::Usage(format!("sequences[{i}].name: duplicate name {name:?}")));
                }
                if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                    return Err(CliError::Usage(format!("sequences[{i}].name: {name:?} is not a plain directory name")));
                }
                let seed = match seed_base {
                    Some(b) => b + i as u64,
                    None => s.seed.unwrap_or(i as u64),
                };
                let spec = s.scene(seed).map_err(|e| CliError::Usage(format!("sequences[{i}]: {e}")))?;
                Ok(DatasetItem {
                    name,
                    spec,
                    gt_mode: self.gt_mode,
                })
            })
            .collect()
    }
}

fn require_file(path: &Path, field: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{field}: no such file {}", path.display())))
    }
}

fn motion(flow: [f64; 2], full: Option<[f64; 6]>) -> Trajectory {
    Trajectory(match full {
        Some(a) => AffineParams(a),
        None => AffineParams::translation(flow[0], flow[1]),
    })
}

impl SequenceConfig {
    pub fn scene(&self, seed: u64) -> evseg_core::Result<SceneSpec> {
        let g = SensorGeometry::new(self.width, self.height)?;
        let bg_flow = (self.background_flow[0], self.background_flow[1]);
        let mut spec = presets::global_translation(g, bg_flow, seed);
        if let Some(path) = &self.background_image {
            let image = Plane::load(path, IMAGE_FLOOR)?;
            let origin = (
                (g.width() as f64 - image.width as f64) / 2.0,
                (g.height() as f64 - image.height as f64) / 2.0,
            );
            spec.background = Background {
                image,
                origin,
                motion: spec.background.motion,
            };
        }
        spec.background.motion = motion(self.background_flow, self.background_motion);
        for (j, s) in self.sprites.iter().enumerate() {
            let sprite_seed = seed.wrapping_add(1000 * (j as u64 + 1));
            let flow = (s.flow[0], s.flow[1]);
            let mut sprite = presets::translating_sprite(g, bg_flow, flow, s.size.max(1), sprite_seed)
                .sprites
                .remove(0);
            if let Some(path) = &s.image {
                sprite = Sprite::opaque(Plane::load(path, IMAGE_FLOOR)?, sprite.origin, sprite.motion);
            }
            let center = s.center.unwrap_or([g.width() as f64 / 2.0, g.height() as f64 / 2.0]);
            sprite.origin = (
                center[0] - sprite.image.width as f64 / 2.0 - flow.0 / 2.0,
                center[1] - sprite.image.height as f64 / 2.0 - flow.1 / 2.0,
            );
            sprite.motion = motion(s.flow, s.motion);
            spec.sprites.push(sprite);
        }
        spec.contrast_threshold = self.contrast_threshold;
        spec.dt = self.dt;
        spec.duration = self.duration;
        spec.noise_rate = self.noise_rate;
        spec.validate()?;
        Ok(spec)
    }
}
