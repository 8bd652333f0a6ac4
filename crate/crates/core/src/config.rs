//! TOML run configuration with dotted-path overrides, and the objects it
//! describes.
//!
//! Every field has a default, so an empty document is a valid configuration
//! (the 128×128, 10 dB, 20-hop block-DCT setup with the residual link on).
//! Unknown keys are rejected. Relative paths resolve against the working
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{BlockDct, LinearCodec, ResidualCompressor, SemanticCodec};
use crate::corpus::synthetic_corpus;
use crate::entropy::{EstimatorTraining, ResidualEstimator};
use crate::error::{Error, Result};
use crate::image::{load_image, ImageFormat, ImageTensor};
use crate::modem::{LdpcCode, QamConstellation, ResidualModem, ShippedCode};
use crate::optim::StepSchedule;
use crate::pipeline::{
    CbrAccounting, ChainConfig, LinkChannel, ResidualLink, Schedule, SweepAxis, SweepSpec,
};
use crate::seed::derive;
use crate::train::{residual_samples, train_stage3, ChainTraining};

/// Environment variable naming the directory searched for configuration
/// files given by bare name (and for `mhsim.toml` when none is given).
pub const CONFIG_DIR_ENV: &str = "MHSIM_CONFIG_DIR";

const TRAIN_LABEL: u64 = 0x0074_7261_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; trial seeds and training seeds derive from it.
    pub seed: u64,
    pub hops: usize,
    /// Semantic-link SNR in dB.
    pub snr_db: f64,
    /// `"all"`, `"none"`, or hop ranges such as `"1-10,21-30"`.
    pub schedule: String,
    pub ms_ssim: bool,
    pub image: ImageSection,
    pub dataset: DatasetSection,
    pub codec: CodecSection,
    pub residual: ResidualSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
    pub train: TrainSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            hops: 20,
            snr_db: 10.0,
            schedule: "all".into(),
            ms_ssim: true,
            image: ImageSection::default(),
            dataset: DatasetSection::default(),
            codec: CodecSection::default(),
            residual: ResidualSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSection {
    pub height: usize,
    pub width: usize,
}

impl Default for ImageSection {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Directory of PNG/PPM images, randomly cropped to the image size. When
    /// absent a synthetic corpus is generated.
    pub dir: Option<PathBuf>,
    /// Synthetic corpus size.
    pub count: usize,
    /// Seed of the synthetic corpus and of the crops.
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            dir: None,
            count: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    BlockDct,
    TrainableLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub kind: CodecKind,
    /// Real code length `L`.
    pub code_len: usize,
    /// Weights of the trainable codec; defaults to `<output.dir>/codec.bin`.
    pub weights: Option<PathBuf>,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            kind: CodecKind::BlockDct,
            code_len: 3072,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualSection {
    pub enabled: bool,
    /// Block-mean size `d`.
    pub block: usize,
    /// Quantizer levels `Q`.
    pub levels: usize,
    /// Quantizer range `[-range, range]`.
    pub range: f64,
    pub mixtures: usize,
    /// Shipped code name (`r12_n96`, `r12_n1024`, `r23_n96`, `r23_n1032`) or
    /// a path to an alist file.
    pub code: String,
    pub qam: usize,
    /// Residual-link SNR; defaults to the semantic-link SNR.
    pub snr_db: Option<f64>,
    pub max_iters: usize,
    /// Trained estimator weights. When absent, an estimator is fitted on
    /// single-hop residuals of the dataset before the run.
    pub estimator: Option<PathBuf>,
    /// Trained compressor weights; identity colour transforms when absent.
    pub compressor: Option<PathBuf>,
}

impl Default for ResidualSection {
    fn default() -> Self {
        Self {
            enabled: true,
            block: 32,
            levels: 129,
            range: 0.5,
            mixtures: 5,
            code: "r12_n1024".into(),
            qam: 16,
            snr_db: None,
            max_iters: crate::modem::DEFAULT_MAX_ITERS,
            estimator: None,
            compressor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub experiment_id: String,
    /// `"snr"`, `"cbr"` or `"hops"`; a single chain of `hops` hops when absent.
    pub axis: Option<String>,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// `"channel_symbols"` or `"payload"`.
    pub accounting: String,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            experiment_id: "run".into(),
            axis: None,
            grid: Vec::new(),
            trials: 20,
            accounting: "channel_symbols".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// File name of the results table inside `dir`.
    pub csv: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: "results.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub hops: usize,
    pub gamma: f64,
    pub realizations: usize,
    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub stage2_steps: usize,
    pub stage2_lr: f64,
    pub stage3_steps: usize,
    pub stage3_lr: f64,
    /// Single-hop channel draws per image for stage 3.
    pub stage3_draws: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            hops: 4,
            gamma: 1.15,
            realizations: 4,
            stage1_steps: 200,
            stage1_lr: 0.01,
            stage2_steps: 50,
            stage2_lr: 0.01,
            stage3_steps: 300,
            stage3_lr: 0.05,
            stage3_draws: 2,
        }
    }
}

fn toml_error(e: toml::de::Error, text: &str) -> Error {
    let (offset, location) = match e.span() {
        Some(span) => {
            let line = text[..span.start].matches('\n').count() + 1;
            (span.start, format!("line {line}: "))
        }
        None => (0, String::new()),
    };
    Error::Parse {
        offset,
        message: format!("{location}{}", e.message()),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(e, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Reads `path`; a bare relative name that does not exist is also looked
    /// up in `$MHSIM_CONFIG_DIR`.
    pub fn load(path: &Path) -> Result<Self> {
        let resolved = resolve(path);
        let text = fs::read_to_string(&resolved).map_err(|e| Error::io(&resolved, e))?;
        Self::from_toml(&text)
    }

    /// Applies `key.path=value` overrides in order. Values are TOML literals;
    /// anything that does not parse as one is taken as a string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut table = toml::Table::try_from(&self).expect("configuration serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut table, key.trim(), value)?;
        }
        let text = toml::to_string(&table).expect("table serializes");
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("after overrides: {}", e.message())))
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = Schedule::parse(&self.schedule)?;
        s.check(self.hops)?;
        Ok(s)
    }

    pub fn accounting(&self) -> Result<CbrAccounting> {
        match self.sweep.accounting.as_str() {
            "channel_symbols" => Ok(CbrAccounting::ChannelSymbols),
            "payload" => Ok(CbrAccounting::Payload),
            other => Err(Error::Config(format!(
                "sweep.accounting: unknown mode {other:?}"
            ))),
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let (axis, grid) = match &self.sweep.axis {
            None => (SweepAxis::Hops, vec![self.hops as f64]),
            Some(name) => {
                let axis = SweepAxis::parse(name)
                    .ok_or_else(|| Error::Config(format!("sweep.axis: unknown axis {name:?}")))?;
                (axis, self.sweep.grid.clone())
            }
        };
        if grid.is_empty() {
            return Err(Error::Config("sweep.grid is empty".into()));
        }
        Ok(SweepSpec {
            experiment_id: self.sweep.experiment_id.clone(),
            axis,
            grid,
            trials: self.sweep.trials,
            seed: self.seed,
            accounting: self.accounting()?,
        })
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(name)
    }

    pub fn codec_weights_path(&self) -> PathBuf {
        self.codec
            .weights
            .clone()
            .unwrap_or_else(|| self.output_path("codec.bin"))
    }

    /// The dataset: images from `dataset.dir` (sorted by name, each randomly
    /// cropped) or the synthetic corpus.
    pub fn images(&self) -> Result<Vec<ImageTensor>> {
        let (h, w) = (self.image.height, self.image.width);
        let Some(dir) = &self.dataset.dir else {
            return synthetic_corpus(self.dataset.count, h, w, self.dataset.seed);
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| ImageFormat::from_path(p).is_some())
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!(
                "no PNG or PPM images in {}",
                dir.display()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.dataset.seed);
        paths
            .iter()
            .map(|p| {
                let img = load_image(p, ImageFormat::from_path(p).expect("filtered"))?;
                if img.height() < h || img.width() < w {
                    return Err(Error::Dimension(format!(
                        "{} is {}x{}, smaller than the {h}x{w} crop",
                        p.display(),
                        img.height(),
                        img.width()
                    )));
                }
                let u0 = rng.random_range(0..=img.height() - h);
                let v0 = rng.random_range(0..=img.width() - w);
                crop(&img, u0, v0, h, w)
            })
            .collect()
    }

    pub fn codec(&self) -> Result<SemanticCodec> {
        let (h, w) = (self.image.height, self.image.width);
        match self.codec.kind {
            CodecKind::BlockDct => Ok(SemanticCodec::BlockDct(BlockDct::new(
                h,
                w,
                self.codec.code_len,
            )?)),
            CodecKind::TrainableLinear => {
                let path = self.codec_weights_path();
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "trainable codec weights {} not found; run training stage 1 first",
                        path.display()
                    )));
                }
                Ok(SemanticCodec::Linear(LinearCodec::load(
                    &path,
                    h,
                    w,
                    self.codec.code_len,
                )?))
            }
        }
    }

    pub fn semantic_link(&self) -> LinkChannel {
        LinkChannel::rayleigh(self.snr_db)
    }

    pub fn residual_link_channel(&self) -> LinkChannel {
        LinkChannel::rayleigh(self.residual.snr_db.unwrap_or(self.snr_db))
    }

    pub fn modem(&self) -> Result<ResidualModem> {
        let code = match ShippedCode::from_name(&self.residual.code) {
            Some(c) => c.load()?,
            None => LdpcCode::load_alist(&self.residual.code)?,
        };
        Ok(ResidualModem::new(
            code,
            QamConstellation::new(self.residual.qam)?,
            self.residual.max_iters,
        ))
    }

    pub fn compressor(&self) -> Result<ResidualCompressor> {
        let r = &self.residual;
        match &r.compressor {
            Some(path) => {
                let rc = ResidualCompressor::load(path)?;
                if rc.block() != r.block || rc.q() != r.levels {
                    return Err(Error::Config(format!(
                        "compressor weights {} are for d={}, Q={}; configuration says d={}, Q={}",
                        path.display(),
                        rc.block(),
                        rc.q(),
                        r.block,
                        r.levels
                    )));
                }
                Ok(rc)
            }
            None => ResidualCompressor::new(r.block, r.levels, r.range),
        }
    }

    pub fn stage3_training(&self) -> EstimatorTraining {
        EstimatorTraining {
            steps: self.train.stage3_steps,
            schedule: StepSchedule {
                base: self.train.stage3_lr,
                every: (self.train.stage3_steps / 3).max(1),
                factor: 0.5,
            },
        }
    }

    pub fn chain_training(&self, stage: u8) -> ChainTraining {
        let t = &self.train;
        let (steps, lr) = match stage {
            1 => (t.stage1_steps, t.stage1_lr),
            _ => (t.stage2_steps, t.stage2_lr),
        };
        ChainTraining {
            hops: t.hops,
            gamma: t.gamma,
            link: self.semantic_link(),
            realizations: t.realizations,
            steps,
            schedule: StepSchedule {
                base: lr,
                every: (steps / 2).max(1),
                factor: 0.5,
            },
            seed: derive(self.seed, &[TRAIN_LABEL, u64::from(stage)]),
        }
    }

    /// Fits a fresh estimator on single-hop residuals of `images`.
    pub fn fit_estimator(
        &self,
        codec: &SemanticCodec,
        compressor: &ResidualCompressor,
        images: &[ImageTensor],
    ) -> Result<(ResidualEstimator, Vec<f64>)> {
        let samples = residual_samples(
            images,
            codec,
            &self.semantic_link(),
            compressor,
            self.train.stage3_draws,
            derive(self.seed, &[TRAIN_LABEL, 3]),
        )?;
        let mut est = ResidualEstimator::initial(self.residual.mixtures, self.residual.levels)?;
        let curve = train_stage3(&mut est, &samples, &self.stage3_training())?;
        Ok((est, curve))
    }

    pub fn estimator(
        &self,
        codec: &SemanticCodec,
        compressor: &ResidualCompressor,
        images: &[ImageTensor],
    ) -> Result<ResidualEstimator> {
        match &self.residual.estimator {
            Some(path) => {
                let est = ResidualEstimator::load(path)?;
                if est.q() != self.residual.levels {
                    return Err(Error::Config(format!(
                        "estimator weights {} are for Q={}, configuration says Q={}",
                        path.display(),
                        est.q(),
                        self.residual.levels
                    )));
                }
                Ok(est)
            }
            None => Ok(self.fit_estimator(codec, compressor, images)?.0),
        }
    }

    /// The full chain description, fitting an estimator when needed.
    pub fn chain(&self, images: &[ImageTensor]) -> Result<ChainConfig> {
        let codec = self.codec()?;
        let residual = if self.residual.enabled {
            let compressor = self.compressor()?;
            let estimator = self.estimator(&codec, &compressor, images)?;
            Some(ResidualLink {
                compressor,
                estimator,
                modem: self.modem()?,
                channel: self.residual_link_channel(),
                fault: None,
            })
        } else {
            None
        };
        Ok(ChainConfig {
            hops: self.hops,
            codec,
            semantic: self.semantic_link(),
            residual,
            schedule: self.schedule()?,
            ms_ssim: self.ms_ssim,
        })
    }
}

fn resolve(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() || path.components().count() > 1 {
        return path.to_path_buf();
    }
    match std::env::var_os(CONFIG_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

/// The configuration file used when none is given: `$MHSIM_CONFIG_DIR/mhsim.toml`
/// if that exists.
pub fn default_config_path() -> Option<PathBuf> {
    let dir = std::env::var_os(CONFIG_DIR_ENV)?;
    let p = Path::new(&dir).join("mhsim.toml");
    p.exists().then_some(p)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key {key:?}")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {p} is not a section")))?;
    }
    t.insert(last.to_owned(), value);
    Ok(())
}

fn crop(img: &ImageTensor, u0: usize, v0: usize, h: usize, w: usize) -> Result<ImageTensor> {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for u in u0..u0 + h {
            for v in v0..v0 + w {
                data.push(img.get(c, u, v));
            }
        }
    }
    ImageTensor::new(h, w, data)
}
