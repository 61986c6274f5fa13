use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpochRecord, TrainingHistory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveFiles {
    pub svg: PathBuf,
    pub csv: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    fold: Option<usize>,
    epoch: usize,
    train_accuracy: f64,
    train_loss: f64,
    val_accuracy: f64,
    val_loss: f64,
}

/// Writes `curves.svg` (one panel per history, accuracy and loss against
/// epoch) and `curves.csv` (the same numbers) into `out_dir`.
pub fn export_curves(histories: &[TrainingHistory], out_dir: &Path) -> Result<CurveFiles> {
    if histories.is_empty() {
        return Err(Error::Data("no training histories to export".into()));
    }
    if let Some(i) = histories.iter().position(|h| h.epochs.is_empty()) {
        return Err(Error::Data(format!("training history {i} has no epochs")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = CurveFiles { svg: out_dir.join("curves.svg"), csv: out_dir.join("curves.csv") };

    let mut writer = csv::Writer::from_path(&files.csv).map_err(|e| csv_error(&files.csv, e))?;
    for h in histories {
        for e in &h.epochs {
            writer
                .serialize(CurveRow {
                    fold: h.fold_index,
                    epoch: e.epoch,
                    train_accuracy: e.train_accuracy,
                    train_loss: e.train_loss,
                    val_accuracy: e.val_accuracy,
                    val_loss: e.val_loss,
                })
                .map_err(|e| csv_error(&files.csv, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(&files.csv, e))?;

    std::fs::write(&files.svg, render_svg(histories)).map_err(|e| Error::io(&files.svg, e))?;
    Ok(files)
}

/// Reads a table written by [`export_curves`], one history per fold.
pub fn read_curves_csv(path: &Path) -> Result<Vec<TrainingHistory>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out: Vec<TrainingHistory> = Vec::new();
    for row in reader.deserialize::<CurveRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        let record = EpochRecord {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_accuracy: r.train_accuracy,
            val_loss: r.val_loss,
            val_accuracy: r.val_accuracy,
        };
        match out.last_mut() {
            Some(h) if h.fold_index == r.fold && h.epochs.last().is_some_and(|e| e.epoch < r.epoch) => {
                h.epochs.push(record)
            }
            _ => out.push(TrainingHistory { fold_index: r.fold, epochs: vec![record] }),
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 240.0;
const PLOT_W: f64 = 300.0;
const PLOT_H: f64 = 170.0;

fn render_svg(histories: &[TrainingHistory]) -> String {
    let height = PANEL_H * histories.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, h) in histories.iter().enumerate() {
        let top = PANEL_H * i as f64;
        let title = match h.fold_index {
            Some(f) => format!("fold {}", f + 1),
            None => "training run".to_string(),
        };
        let _ = writeln!(s, r#"<g class="panel" transform="translate(0,{top})">"#);
        let _ = writeln!(s, r#"<text x="10" y="16" font-weight="bold">{title}</text>"#);
        let acc: Vec<(f64, f64)> = h.epochs.iter().map(|e| (e.train_accuracy, e.val_accuracy)).collect();
        let loss: Vec<(f64, f64)> = h.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect();
        plot(&mut s, 50.0, "accuracy", &acc, Some((0.0, 1.0)));
        plot(&mut s, 400.0, "loss", &loss, None);
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn plot(s: &mut String, left: f64, label: &str, series: &[(f64, f64)], range: Option<(f64, f64)>) {
    let top = 30.0;
    let (lo, hi) = range.unwrap_or_else(|| {
        let finite = series.iter().flat_map(|(a, b)| [*a, *b]).filter(|v| v.is_finite());
        let hi = finite.fold(0.0f64, f64::max);
        (0.0, if hi > 0.0 { hi } else { 1.0 })
    });
    let n = series.len();
    let x = |i: usize| left + if n > 1 { PLOT_W * i as f64 / (n - 1) as f64 } else { PLOT_W / 2.0 };
    let y = |v: f64| top + PLOT_H * (1.0 - ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
    let _ =
        writeln!(s, r##"<rect x="{left}" y="{top}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="#888"/>"##);
    let _ = writeln!(s, r#"<text x="{left}" y="{}">{label} (epochs 1-{n})</text>"#, top + PLOT_H + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi:.2}</text>"#, left - 4.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{lo:.2}</text>"#, left - 4.0, top + PLOT_H);
    for (which, color, name) in [(0, "#1f77b4", "train"), (1, "#ff7f0e", "validation")] {
        let pts: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.1},{:.1}", x(i), y(if which == 0 { p.0 } else { p.1 })))
            .collect();
        if n == 1 {
            let (cx, cy) = pts[0].split_once(',').expect("formatted point");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"><title>{name}</title></circle>"#);
        } else {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{name}</title></polyline>"#,
                pts.join(" ")
            );
        }
        let ly = top + 12.0 + 14.0 * which as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, left + PLOT_W - 70.0);
    }
}
