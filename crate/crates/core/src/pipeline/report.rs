use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{CbrAccounting, HopReport};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One hop of one trial at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment_id: String,
    pub grid_value: f64,
    pub trial_seed: u64,
    pub hop: usize,
    pub psnr_recon_db: f64,
    pub psnr_comp_db: f64,
    pub msssim_recon: Option<f64>,
    pub msssim_comp: Option<f64>,
    pub semantic_reals: usize,
    pub residual_channel_symbols: usize,
    pub residual_payload_bits: usize,
    pub cbr: f64,
    pub frame_status: String,
}

impl CsvRow {
    #[allow(clippy::too_many_arguments)]
    pub fn from_report(
        experiment_id: &str,
        grid_value: f64,
        trial_seed: u64,
        report: &HopReport,
        accounting: CbrAccounting,
        height: usize,
        width: usize,
    ) -> Self {
        Self {
            experiment_id: experiment_id.to_owned(),
            grid_value,
            trial_seed,
            hop: report.hop,
            psnr_recon_db: report.psnr_recon_db,
            psnr_comp_db: report.psnr_comp_db,
            msssim_recon: report.msssim_recon,
            msssim_comp: report.msssim_comp,
            semantic_reals: report.semantic_reals,
            residual_channel_symbols: report.residual_channel_symbols,
            residual_payload_bits: report.residual_payload_bits,
            cbr: report.cbr(accounting, height, width),
            frame_status: report.status.as_str().to_owned(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        offset: e.position().map_or(0, |p| p.byte() as usize),
        message: e.to_string(),
    }
}

/// Writes a `# schema_version=N` line followed by a headed CSV table.
pub fn write_csv<W: Write>(mut out: W, rows: &[CsvRow]) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("writing CSV: {e}"));
    writeln!(out, "# schema_version={SCHEMA_VERSION}").map_err(io)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub(crate) const HEADER: [&str; 13] = [
    "experiment_id",
    "grid_value",
    "trial_seed",
    "hop",
    "psnr_recon_db",
    "psnr_comp_db",
    "msssim_recon",
    "msssim_comp",
    "semantic_reals",
    "residual_channel_symbols",
    "residual_payload_bits",
    "cbr",
    "frame_status",
];

/// Parses a table written by [`write_csv`]; missing or unknown columns are
/// schema errors.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::Config(format!("reading CSV: {e}")))?;
    let version = first
        .trim()
        .strip_prefix("# schema_version=")
        .and_then(|v| v.parse::<u32>().ok());
    if version != Some(SCHEMA_VERSION) {
        return Err(Error::Parse {
            offset: 0,
            message: format!(
                "expected '# schema_version={SCHEMA_VERSION}', found {:?}",
                first.trim()
            ),
        });
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = r.headers().map_err(csv_err)?.clone();
    if let Some(missing) = HEADER.iter().find(|h| !headers.iter().any(|x| x == **h)) {
        return Err(Error::Parse {
            offset: 0,
            message: format!("missing column {missing}"),
        });
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "table has no rows".into(),
        });
    }
    Ok(rows)
}
