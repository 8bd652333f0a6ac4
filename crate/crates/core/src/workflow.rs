//! File-level operations behind the command-line tool: run an experiment
//! into an output directory, and run one training stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{LinearCodec, LinearInit, ResidualCompressor, SemanticCodec};
use crate::config::{CodecKind, Config};
use crate::error::{Error, Result};
use crate::pipeline::{sweep, write_csv, CsvRow, SCHEMA_VERSION};
use crate::seed::derive;
use crate::train::{train_stage1, train_stage2};

pub const CODEC_FILE: &str = "codec.bin";
pub const COMPRESSOR_FILE: &str = "compressor.bin";
pub const ESTIMATOR_FILE: &str = "estimator.bin";

/// Checks everything that can be checked without simulating: schedule,
/// sweep settings, LDPC code, codec geometry and weight files, dataset.
pub fn validate(cfg: &Config) -> Result<()> {
    cfg.schedule()?;
    cfg.sweep_spec()?;
    cfg.codec()?;
    if cfg.residual.enabled {
        cfg.modem()?;
        cfg.compressor()?;
        if let Some(p) = &cfg.residual.estimator {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "estimator weights {} not found",
                    p.display()
                )));
            }
        }
    }
    if let Some(dir) = &cfg.dataset.dir {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} not found",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub csv: PathBuf,
    pub rows: Vec<CsvRow>,
}

/// Runs the configured sweep (or single chain) and writes the results table.
pub fn run(cfg: &Config) -> Result<RunResult> {
    let images = cfg.images()?;
    let chain = cfg.chain(&images)?;
    let spec = cfg.sweep_spec()?;
    let rows = sweep(&spec, &chain, &images)?;
    create_dir(&cfg.output.dir)?;
    let csv = cfg.output_path(&cfg.output.csv);
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    write_file(&csv, &buf)?;
    Ok(RunResult { csv, rows })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Final-hop statistics per experiment and grid value.
pub fn summarize(rows: &[CsvRow]) -> String {
    let mut last: BTreeMap<(String, u64, u64), &CsvRow> = BTreeMap::new();
    for r in rows {
        let e = last
            .entry((
                r.experiment_id.clone(),
                r.grid_value.to_bits(),
                r.trial_seed,
            ))
            .or_insert(r);
        if r.hop > e.hop {
            *e = r;
        }
    }
    let mut groups: BTreeMap<(String, u64), Vec<&CsvRow>> = BTreeMap::new();
    for ((exp, g, _), r) in last {
        groups.entry((exp, g)).or_default().push(r);
    }
    let mut sorted: Vec<_> = groups.into_iter().collect();
    sorted.sort_by(|a, b| {
        a.0 .0
            .cmp(&b.0 .0)
            .then(f64::from_bits(a.0 .1).total_cmp(&f64::from_bits(b.0 .1)))
    });
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>6} {:>6} {:>16} {:>16} {:>8} {:>8}",
        "experiment", "grid", "trials", "hop", "psnr_recon_dB", "psnr_comp_dB", "msssim", "cbr"
    );
    for ((exp, g), rs) in sorted {
        let (rm, rsd) = mean_std(&rs.iter().map(|r| r.psnr_recon_db).collect::<Vec<_>>());
        let (cm, csd) = mean_std(&rs.iter().map(|r| r.psnr_comp_db).collect::<Vec<_>>());
        let ms: Vec<f64> = rs.iter().filter_map(|r| r.msssim_comp).collect();
        let ms = if ms.is_empty() {
            "-".to_owned()
        } else {
            format!("{:.4}", mean_std(&ms).0)
        };
        let cbr = rs.iter().map(|r| r.cbr).sum::<f64>() / rs.len() as f64;
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>6} {:>6} {:>9.2} ± {:<4.2} {:>9.2} ± {:<4.2} {:>8} {:>8.4}",
            exp,
            f64::from_bits(g),
            rs.len(),
            rs[0].hop,
            rm,
            rsd,
            cm,
            csd,
            ms,
            cbr
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub weights: PathBuf,
    pub curve: PathBuf,
    pub initial: f64,
    pub last: f64,
}

fn curve_csv(initial: f64, steps: &[f64], last: f64) -> String {
    let mut s = format!("# schema_version={SCHEMA_VERSION}\nkind,step,loss\neval,0,{initial}\n");
    for (i, l) in steps.iter().enumerate() {
        let _ = writeln!(s, "train,{i},{l}");
    }
    let _ = writeln!(s, "eval,{},{last}", steps.len());
    s
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} not found at {}",
            path.display()
        )))
    }
}

/// Stage-1 codec weights used by later stages.
fn trained_codec(cfg: &Config, stage: u8) -> Result<SemanticCodec> {
    if cfg.codec.kind == CodecKind::TrainableLinear {
        require(
            &cfg.codec_weights_path(),
            &format!("stage {stage} needs the stage-1 codec weights, which were"),
        )?;
    }
    cfg.codec()
}

/// Runs one training stage on the configured dataset and writes its weights
/// and loss curve into the output directory.
pub fn train(cfg: &Config, stage: u8) -> Result<TrainResult> {
    let (h, w) = (cfg.image.height, cfg.image.width);
    create_dir(&cfg.output.dir)?;
    let curve_path = cfg.output_path(&format!("loss_stage{stage}.csv"));
    let (weights, bytes, initial, steps, last) = match stage {
        1 => {
            if cfg.codec.kind != CodecKind::TrainableLinear {
                return Err(Error::Config(
                    "stage 1 trains codec.kind = \"trainable_linear\" only".into(),
                ));
            }
            let images = cfg.images()?;
            let mut codec = LinearCodec::new(
                h,
                w,
                cfg.codec.code_len,
                LinearInit::Random {
                    seed: derive(cfg.seed, &[1]),
                },
            )?;
            let c = train_stage1(&mut codec, &images, &cfg.chain_training(1))?;
            (
                cfg.output_path(CODEC_FILE),
                codec.to_bytes(),
                c.initial,
                c.steps,
                c.last,
            )
        }
        2 => {
            let codec = trained_codec(cfg, 2)?;
            let images = cfg.images()?;
            let r = &cfg.residual;
            let mut rc = ResidualCompressor::new(r.block, r.levels, r.range)?;
            let c = train_stage2(&codec, &mut rc, &images, &cfg.chain_training(2))?;
            (
                cfg.output_path(COMPRESSOR_FILE),
                rc.to_bytes(),
                c.initial,
                c.steps,
                c.last,
            )
        }
        3 => {
            let codec = trained_codec(cfg, 3)?;
            let rc_path = cfg
                .residual
                .compressor
                .clone()
                .unwrap_or_else(|| cfg.output_path(COMPRESSOR_FILE));
            require(
                &rc_path,
                "stage 3 needs the stage-2 compressor weights, which were",
            )?;
            let mut with_rc = cfg.clone();
            with_rc.residual.compressor = Some(rc_path);
            let rc = with_rc.compressor()?;
            let images = cfg.images()?;
            let (est, curve) = cfg.fit_estimator(&codec, &rc, &images)?;
            let n = curve.len();
            (
                cfg.output_path(ESTIMATOR_FILE),
                est.to_bytes(),
                curve[0],
                curve[..n - 1].to_vec(),
                curve[n - 1],
            )
        }
        s => {
            return Err(Error::Config(format!(
                "training stage must be 1, 2 or 3, got {s}"
            )))
        }
    };
    write_file(&weights, &bytes)?;
    write_file(&curve_path, curve_csv(initial, &steps, last).as_bytes())?;
    Ok(TrainResult {
        weights,
        curve: curve_path,
        initial,
        last,
    })
}
