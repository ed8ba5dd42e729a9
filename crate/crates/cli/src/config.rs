//! Run configuration: a strict TOML file whose distribution tables use the
//! transformation names of the parameter tables, overridable from flags.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use eot_core::classifier::{Layer, TrainConfig, SHAPE_CLASSES};
use eot_core::eot::{AttackConfig, DEFAULT_LAMBDAS};
use eot_core::renderer3d::{PhysicalConfig, Pose3DConfig, RotationRange};
use eot_core::transform::Interval;
use eot_core::transforms2d::{Dist2DConfig, Translation, DEFAULT_BACKGROUND};

/// File written into every output directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Attack2d,
    Attack3d,
    Eval,
    Render,
    Gradcheck,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Train => "train",
            Mode::Attack2d => "attack2d",
            Mode::Attack3d => "attack3d",
            Mode::Eval => "eval",
            Mode::Render => "render",
            Mode::Gradcheck => "gradcheck",
        };
        f.write_str(s)
    }
}

/// `[min, max]` in the file.
pub type Range = [f64; 2];

fn interval(name: &str, r: Range) -> Result<Interval> {
    let i = Interval::new(r[0], r[1]);
    i.validate(name)?;
    Ok(i)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Idx,
    ColorShapes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dataset: DatasetKind,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Sizes of the generated splits when `dataset = "color_shapes"`.
    pub color_shapes_train: usize,
    pub color_shapes_test: usize,
    /// Attack input (2D image or 3D texture); otherwise examples come from
    /// the test split (`test_indices`) or, in 3D, a generated texture.
    pub image: Option<PathBuf>,
    pub true_class: Option<usize>,
    pub test_indices: Vec<usize>,
    /// Classes of the generated colour-shape textures attacked in 3D when
    /// no `image` is given.
    pub objects: Vec<usize>,
    /// Fixed target class; drawn at random per example when absent.
    pub target: Option<usize>,
    /// OBJ file; the built-in cube when absent.
    pub mesh: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Idx,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            color_shapes_train: 3000,
            color_shapes_test: 300,
            image: None,
            true_class: None,
            test_indices: vec![0],
            objects: vec![0],
            target: None,
            mesh: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    /// Train on `[dist2d]` views of the inputs instead of the raw images.
    pub augment: bool,
    pub augment_probability: f64,
    /// Layer descriptors such as `"conv5x8"`; the default stack when absent.
    pub layers: Option<Vec<String>>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            lr_decay: d.lr_decay,
            augment: false,
            augment_probability: d.augment_probability,
            layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranslationSpec {
    /// `"any"`: anywhere in bounds.
    Named(String),
    /// Pixel offset range applied to both axes.
    Range(Range),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dist2DSection {
    pub scale: Range,
    pub rotation_deg: Range,
    pub lighten_darken: Range,
    pub gaussian_noise_stdev: Range,
    pub translation: TranslationSpec,
    /// `[height, width]`; the image size when absent.
    pub canvas: Option<[usize; 2]>,
    pub background: f64,
}

impl Default for Dist2DSection {
    fn default() -> Self {
        Self {
            scale: [0.9, 1.4],
            rotation_deg: [-22.5, 22.5],
            lighten_darken: [-0.05, 0.05],
            gaussian_noise_stdev: [0.0, 0.1],
            translation: TranslationSpec::Named("any".into()),
            canvas: None,
            background: DEFAULT_BACKGROUND,
        }
    }
}

impl Dist2DSection {
    pub fn to_config(&self, image: (usize, usize)) -> Result<Dist2DConfig> {
        let translation = match &self.translation {
            TranslationSpec::Named(s) if s == "any" => Translation::AnyInBounds,
            TranslationSpec::Named(s) => {
                bail!("dist2d.translation: expected \"any\" or [min, max], got {s:?}")
            }
            TranslationSpec::Range(r) => {
                let i = interval("dist2d.translation", *r)?;
                Translation::Pixels { x: i, y: i }
            }
        };
        let canvas = self.canvas.map(|[h, w]| (h, w)).unwrap_or(image);
        let cfg = Dist2DConfig {
            scale: interval("dist2d.scale", self.scale)?,
            rotation_deg: interval("dist2d.rotation_deg", self.rotation_deg)?,
            brightness: interval("dist2d.lighten_darken", self.lighten_darken)?,
            noise_stdev: interval("dist2d.gaussian_noise_stdev", self.gaussian_noise_stdev)?,
            translation,
            canvas,
            background: self.background,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationSpec {
    /// `"any"`: uniform over all rotations.
    Named(String),
    /// Fixed unit quaternion `[w, x, y, z]`.
    Quaternion([f64; 4]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pose3DSection {
    pub camera_distance: Range,
    pub x_y_translation: Range,
    pub rotation: RotationSpec,
    /// Per-channel range of the solid background colour.
    pub background: Range,
    /// Render size `[height, width]`; the model's input size when absent.
    pub render_size: Option<[usize; 2]>,
}

impl Default for Pose3DSection {
    fn default() -> Self {
        Self {
            camera_distance: [2.5, 3.0],
            x_y_translation: [-0.05, 0.05],
            rotation: RotationSpec::Named("any".into()),
            background: [0.1, 1.0],
            render_size: None,
        }
    }
}

impl Pose3DSection {
    pub fn to_config(&self) -> Result<Pose3DConfig> {
        let rotation = match &self.rotation {
            RotationSpec::Named(s) if s == "any" => RotationRange::Any,
            RotationSpec::Named(s) => {
                bail!("pose3d.rotation: expected \"any\" or [w, x, y, z], got {s:?}")
            }
            RotationSpec::Quaternion(q) => RotationRange::Fixed(*q),
        };
        let bg = interval("pose3d.background", self.background)?;
        let cfg = Pose3DConfig {
            camera_distance: interval("pose3d.camera_distance", self.camera_distance)?,
            translation: interval("pose3d.x_y_translation", self.x_y_translation)?,
            rotation,
            background: [bg; 3],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    pub lighten_darken_additive: Range,
    pub lighten_darken_multiplicative: Range,
    pub per_channel_additive: Range,
    pub per_channel_multiplicative: Range,
    pub gaussian_noise_stdev: Range,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        let d = PhysicalConfig::standard();
        let r = |i: Interval| [i.min, i.max];
        Self {
            lighten_darken_additive: r(d.additive_light),
            lighten_darken_multiplicative: r(d.multiplicative_light),
            per_channel_additive: r(d.per_channel_add),
            per_channel_multiplicative: r(d.per_channel_mul),
            gaussian_noise_stdev: r(d.noise_stdev),
        }
    }
}

impl PhysicalSection {
    pub fn to_config(&self) -> Result<PhysicalConfig> {
        let cfg = PhysicalConfig {
            additive_light: interval(
                "physical.lighten_darken_additive",
                self.lighten_darken_additive,
            )?,
            multiplicative_light: interval(
                "physical.lighten_darken_multiplicative",
                self.lighten_darken_multiplicative,
            )?,
            per_channel_add: interval("physical.per_channel_additive", self.per_channel_additive)?,
            per_channel_mul: interval(
                "physical.per_channel_multiplicative",
                self.per_channel_multiplicative,
            )?,
            noise_stdev: interval("physical.gaussian_noise_stdev", self.gaussian_noise_stdev)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub lambda: f64,
    pub steps: usize,
    /// Defaults to 1e-2 in 2D and 1e-1 in 3D.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub reuse_fraction: f64,
    pub min_new_per_batch: usize,
    pub epsilon_report: Option<f64>,
    /// Defaults to 1000 in 2D and 100 in 3D.
    pub holdout_samples: Option<usize>,
    /// Pick λ from `lambda_candidates` instead of using `lambda`.
    pub lambda_search: bool,
    pub lambda_candidates: Vec<f64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackConfig::default_2d();
        Self {
            lambda: d.lambda,
            steps: d.steps,
            learning_rate: None,
            batch_size: d.batch_size,
            reuse_fraction: d.reuse_fraction,
            min_new_per_batch: d.min_new_per_batch,
            epsilon_report: None,
            holdout_samples: None,
            lambda_search: false,
            lambda_candidates: DEFAULT_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    #[default]
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Output directory of an earlier attack run to re-evaluate.
    pub run: Option<PathBuf>,
    pub kind: EvalKind,
    /// Views per example; the attack's held-out size when absent.
    pub samples: Option<usize>,
    pub montage_views: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            run: None,
            kind: EvalKind::TwoD,
            samples: None,
            montage_views: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    /// Texture to render; a generated colour-shape texture when absent.
    pub texture: Option<PathBuf>,
    pub poses: usize,
    /// Rendered size `[height, width]`; the model's input size, or 64×64
    /// without a model.
    pub size: Option<[usize; 2]>,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            texture: None,
            poses: 8,
            size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            trials: 20,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub data: DataSection,
    pub train: TrainSection,
    pub dist2d: Dist2DSection,
    pub pose3d: Pose3DSection,
    /// Physical-world effects on renderings; off when absent, the standard
    /// ranges for an empty table.
    pub physical: Option<PhysicalSection>,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub render: RenderSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            out: PathBuf::from("out"),
            model: None,
            data: DataSection::default(),
            train: TrainSection::default(),
            dist2d: Dist2DSection::default(),
            pose3d: Pose3DSection::default(),
            physical: None,
            attack: AttackSection::default(),
            eval: EvalSection::default(),
            render: RenderSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub steps: Option<usize>,
    pub lambda: Option<f64>,
}

/// Adds a "did you mean" hint to serde's unknown-field errors.
fn explain(err: toml::de::Error, text: &str) -> anyhow::Error {
    let msg = err.message().to_string();
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let at = line.map(|l| format!(" (line {l})")).unwrap_or_default();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let mut parts = rest.split('`');
        let unknown = parts.next().unwrap_or_default();
        let known: Vec<&str> = parts.skip(1).step_by(2).collect();
        let best = known
            .iter()
            .map(|k| (strsim::jaro_winkler(unknown, k), *k))
            .filter(|(s, _)| *s > 0.8)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        return match best {
            Some((_, k)) => anyhow!("unknown key `{unknown}`{at}; did you mean `{k}`?"),
            None => anyhow!(
                "unknown key `{unknown}`{at}; expected one of {}",
                known.join(", ")
            ),
        };
    }
    anyhow!("{msg}{at}")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| explain(e, text))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies the subcommand and flags, fills mode-dependent defaults and
    /// validates everything the mode needs.
    pub fn resolve(mut self, mode: Mode, o: &Overrides) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                bail!("config is for mode `{m}` but `{mode}` was requested");
            }
        }
        self.mode = Some(mode);
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.model {
            self.model = Some(p.clone());
        }
        if let Some(s) = o.steps {
            self.attack.steps = s;
        }
        if let Some(l) = o.lambda {
            self.attack.lambda = l;
        }
        let three_d =
            mode == Mode::Attack3d || (mode == Mode::Eval && self.eval.kind == EvalKind::ThreeD);
        let base = if three_d {
            AttackConfig::default_3d()
        } else {
            AttackConfig::default_2d()
        };
        self.attack.learning_rate.get_or_insert(base.learning_rate);
        self.attack
            .holdout_samples
            .get_or_insert(base.holdout_samples);
        self.validate()?;
        Ok(self)
    }

    pub fn mode(&self) -> Mode {
        self.mode.expect("resolved config has a mode")
    }

    fn validate(&self) -> Result<()> {
        let mode = self.mode();
        self.attack_config(0)?;
        self.train_config()?;
        self.dist2d.to_config((1, 1))?;
        self.pose3d.to_config()?;
        if let Some(p) = &self.physical {
            p.to_config()?;
        }
        let needs_model = matches!(mode, Mode::Attack2d | Mode::Attack3d | Mode::Eval);
        if needs_model && self.model.is_none() {
            bail!("missing required key `model` for mode {mode}");
        }
        let mut paths: Vec<(&str, &Path)> = Vec::new();
        if let Some(m) = self.model.as_deref().filter(|_| needs_model) {
            if !m.exists() {
                bail!("model: {} does not exist", m.display());
            }
        }
        let d = &self.data;
        let idx_needed = match mode {
            Mode::Train => d.dataset == DatasetKind::Idx,
            Mode::Attack2d => d.image.is_none() && d.dataset == DatasetKind::Idx,
            _ => false,
        };
        let split = |name, p: &Option<PathBuf>| -> Result<Option<(&str, PathBuf)>> {
            Ok(Some((
                name,
                p.clone()
                    .ok_or_else(|| anyhow!("missing required key `data.{name}` for mode {mode}"))?,
            )))
        };
        let mut owned = Vec::new();
        if idx_needed {
            if mode == Mode::Train {
                owned.extend(split("train_images", &d.train_images)?);
                owned.extend(split("train_labels", &d.train_labels)?);
            }
            owned.extend(split("test_images", &d.test_images)?);
            owned.extend(split("test_labels", &d.test_labels)?);
        }
        if let Some(p) = &d.image {
            if matches!(mode, Mode::Attack2d | Mode::Attack3d) {
                paths.push(("data.image", p));
                if d.true_class.is_none() {
                    bail!("missing required key `data.true_class` for data.image");
                }
            }
        }
        if let Some(p) = &d.mesh {
            if matches!(mode, Mode::Attack3d | Mode::Render)
                || (mode == Mode::Eval && self.eval.kind == EvalKind::ThreeD)
            {
                paths.push(("data.mesh", p));
            }
        }
        if mode == Mode::Eval {
            let run = self
                .eval
                .run
                .as_deref()
                .ok_or_else(|| anyhow!("missing required key `eval.run` for mode eval"))?;
            paths.push(("eval.run", run));
        }
        if mode == Mode::Render {
            if let Some(t) = &self.render.texture {
                paths.push(("render.texture", t));
            }
            if self.render.poses == 0 || self.render.size.is_some_and(|s| s.contains(&0)) {
                bail!("render.poses and render.size must be positive");
            }
        }
        if mode == Mode::Attack2d && d.image.is_none() && d.test_indices.is_empty() {
            bail!("data.test_indices must not be empty");
        }
        if mode == Mode::Attack3d && d.image.is_none() && d.objects.is_empty() {
            bail!("data.objects must not be empty");
        }
        if let Some(&c) = d.objects.iter().find(|&&c| c >= SHAPE_CLASSES.len()) {
            bail!(
                "data.objects: class {c} is not a colour-shape class (0..{})",
                SHAPE_CLASSES.len()
            );
        }
        if self.eval.samples == Some(0) {
            bail!("eval.samples must be positive");
        }
        if self.gradcheck.trials == 0
            || self.gradcheck.step.is_nan()
            || self.gradcheck.step <= 0.0
            || self.gradcheck.tolerance.is_nan()
            || self.gradcheck.tolerance <= 0.0
        {
            bail!("gradcheck.trials, step and tolerance must be positive");
        }
        if self.attack.lambda_candidates.is_empty() {
            bail!("attack.lambda_candidates must not be empty");
        }
        if self
            .attack
            .lambda_candidates
            .iter()
            .any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            bail!("attack.lambda_candidates must be non-negative numbers");
        }
        for (name, p) in paths
            .iter()
            .copied()
            .chain(owned.iter().map(|(n, p)| (*n, p.as_path())))
        {
            if !p.exists() {
                bail!("{name}: {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn attack_config(&self, seed: u64) -> Result<AttackConfig> {
        let a = &self.attack;
        let cfg = AttackConfig {
            lambda: a.lambda,
            steps: a.steps,
            learning_rate: a
                .learning_rate
                .unwrap_or(AttackConfig::default_2d().learning_rate),
            batch_size: a.batch_size,
            reuse_fraction: a.reuse_fraction,
            min_new_per_batch: a.min_new_per_batch,
            seed,
            epsilon_report: a.epsilon_report,
            holdout_samples: a
                .holdout_samples
                .unwrap_or(AttackConfig::default_2d().holdout_samples),
        };
        cfg.validate().context("[attack]")?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let layers = t
            .layers
            .as_ref()
            .map(|ls| {
                ls.iter()
                    .map(|s| s.parse::<Layer>().map_err(|e| anyhow!("train.layers: {e}")))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            lr_decay: t.lr_decay,
            seed: self.seed,
            layers,
            augment: None,
            augment_probability: t.augment_probability,
        };
        cfg.validate().context("[train]")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved configuration into the output directory.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests;
