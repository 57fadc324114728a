//! CSV and TOML outputs. Every file is written to a sibling temp path and
//! renamed into place so readers never observe a half-written file.

use std::fs;
use std::path::{Path, PathBuf};

use qratio_core::eval::{ema_smooth, EvalCurve};
use qratio_core::trainer::{SweepGrid, SweepRow, EMA_EPSILON};

use crate::{io_err, CliError};

/// Writes `bytes` to `path` via a temp file in the same directory, so the
/// final rename is atomic on any one filesystem.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| io_err(&format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(&format!("renaming to {}", path.display()), e))
}

/// Shortest decimal that round-trips to the same f64.
fn fmt_f64(v: f64) -> String {
    v.to_string()
}

fn csv_bytes(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    writer
        .into_inner()
        .map_err(|e| CliError::Io(format!("flushing csv: {e}")))
}

fn write_record<const N: usize>(
    w: &mut csv::Writer<Vec<u8>>,
    record: [String; N],
) -> Result<(), CliError> {
    w.write_record(&record)
        .map_err(|e| CliError::Io(format!("writing csv record: {e}")))
}

/// One row per run: `ratio,k,lr,seed,final_score,final_reward,diverged`.
/// The seed column is the seed id; the derived run seed is internal.
pub fn results_csv(rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_record(
        &mut w,
        [
            "ratio".into(),
            "k".into(),
            "lr".into(),
            "seed".into(),
            "final_score".into(),
            "final_reward".into(),
            "diverged".into(),
        ],
    )?;
    for r in rows {
        write_record(
            &mut w,
            [
                r.ratio.to_string(),
                r.k.to_string(),
                fmt_f64(r.lr),
                r.seed_id.to_string(),
                fmt_f64(r.final_score),
                fmt_f64(r.final_reward),
                r.diverged.to_string(),
            ],
        )?;
    }
    csv_bytes(w)
}

/// Ratio-by-exponent matrix of seed-averaged final scores.
pub fn heatmap_csv(grid: &SweepGrid) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["ratio".to_string()];
    header.extend(grid.k_values.iter().map(|k| format!("k={k}")));
    w.write_record(&header)
        .map_err(|e| CliError::Io(format!("writing csv record: {e}")))?;
    for (i, ratio) in grid.ratios.iter().enumerate() {
        let mut row = vec![ratio.to_string()];
        row.extend(grid.scores[i].iter().map(|&s| fmt_f64(s)));
        w.write_record(&row)
            .map_err(|e| CliError::Io(format!("writing csv record: {e}")))?;
    }
    csv_bytes(w)
}

/// One row per ratio at its best grid exponent (ties go to the smaller
/// learning rate): `ratio,k,lr,final_score,final_reward`.
pub fn summary_csv(grid: &SweepGrid) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_record(
        &mut w,
        [
            "ratio".into(),
            "k".into(),
            "lr".into(),
            "final_score".into(),
            "final_reward".into(),
        ],
    )?;
    for (i, ratio) in grid.ratios.iter().enumerate() {
        let best = grid.best_k_index[i];
        let k = grid.k_values[best];
        write_record(
            &mut w,
            [
                ratio.to_string(),
                k.to_string(),
                fmt_f64(qratio_core::trainer::lr_for_k(*ratio, k)),
                fmt_f64(grid.scores[i][best]),
                fmt_f64(grid.rewards[i][best]),
            ],
        )?;
    }
    csv_bytes(w)
}

/// Evaluation curve for one run: `env_step,mean_score,mean_reward,ema_score`.
/// The smoothed column is the same series the final score is reduced from.
pub fn curve_csv(curve: &EvalCurve) -> Result<Vec<u8>, CliError> {
    let scores: Vec<f64> = curve.iter().map(|p| p.mean_score).collect();
    let smoothed = ema_smooth(&scores, EMA_EPSILON);
    let mut w = csv::Writer::from_writer(Vec::new());
    write_record(
        &mut w,
        [
            "env_step".into(),
            "mean_score".into(),
            "mean_reward".into(),
            "ema_score".into(),
        ],
    )?;
    for (p, s) in curve.iter().zip(&smoothed) {
        write_record(
            &mut w,
            [
                p.env_step.to_string(),
                fmt_f64(p.mean_score),
                fmt_f64(p.mean_reward),
                fmt_f64(*s),
            ],
        )?;
    }
    csv_bytes(w)
}

/// `curves/<ratio>_<k>_<seed>.csv`, with the ratio's colon swapped for a
/// dash to stay filesystem-friendly.
pub fn curve_path(dir: &Path, row: &SweepRow) -> PathBuf {
    let ratio = row.ratio.to_string().replace(':', "-");
    dir.join("curves")
        .join(format!("{}_{}_{}.csv", ratio, row.k, row.seed_id))
}
