//! Plot-ready CSV output: training curves, confusion matrix and the
//! per-class metric table.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::PlantClass;
use crate::error::{Error, Result};
use crate::heads::LossReport;
use crate::metrics::{ClassMetrics, ConfusionMatrix, MetricsReport};
use crate::train::EpochRecord;

pub const HISTORY_FILE: &str = "history.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const REPORT_FILE: &str = "report.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::contract(format!("bad number {s:?}")))
    }
}

fn parse(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::contract(format!("bad number {s:?}")))
}

pub fn history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_acc", "val_acc", "l_cls", "l_seg", "l_growth", "l_total"])?;
    for r in history {
        let l = &r.train_loss;
        w.write_record([
            r.epoch.to_string(),
            r.train_acc.to_string(),
            opt(r.val_acc),
            l.l_cls.to_string(),
            l.l_seg.to_string(),
            l.l_growth.to_string(),
            l.l_total.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `(epoch, train_acc, val_acc, losses)`.
pub type HistoryRow = (usize, f64, Option<f64>, LossReport);

/// Rows of a history file.
pub fn parse_history_csv(data: &[u8]) -> Result<Vec<HistoryRow>> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(data).records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::contract(format!("history row has {} fields", rec.len())));
        }
        let epoch = rec[0].parse().map_err(|_| Error::contract("bad epoch"))?;
        let losses =
            LossReport { l_cls: parse(&rec[3])?, l_seg: parse(&rec[4])?, l_growth: parse(&rec[5])?, l_total: parse(&rec[6])? };
        rows.push((epoch, parse(&rec[1])?, parse_opt(&rec[2])?, losses));
    }
    Ok(rows)
}

fn class_name(c: usize) -> String {
    PlantClass::from_index(c).map(|p| p.name().to_string()).unwrap_or_else(|_| format!("class{c}"))
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend((0..cm.classes()).map(class_name));
    w.write_record(&header)?;
    for (c, row) in cm.rows().iter().enumerate() {
        let mut rec = vec![class_name(c)];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn parse_confusion_csv(data: &[u8]) -> Result<ConfusionMatrix> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(data).records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>().map_err(|_| Error::contract(format!("bad count {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    ConfusionMatrix::from_rows(&rows)
}

/// Per-class table followed by accuracy, macro and weighted rows, then the
/// mean IoU when masks were evaluated.
pub fn report_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "precision", "recall", "f1", "support"])?;
    let row = |w: &mut csv::Writer<Vec<u8>>, name: &str, m: &ClassMetrics| {
        w.write_record([name.to_string(), m.precision.to_string(), m.recall.to_string(), m.f1.to_string(), m.support.to_string()])
    };
    for (c, m) in report.per_class.iter().enumerate() {
        row(&mut w, &class_name(c), m)?;
    }
    let total = report.confusion.total().to_string();
    w.write_record(["accuracy", "", "", &report.accuracy.to_string(), &total])?;
    row(&mut w, "macro avg", &report.macro_avg)?;
    row(&mut w, "weighted avg", &report.weighted_avg)?;
    if let Some(miou) = report.mean_iou {
        w.write_record(["mean_iou", "", "", &miou.to_string(), ""])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `history.csv` and, when given, `confusion.csv` and `report.csv`
/// into `dir`. Returns the written paths.
pub fn emit_plot_data(dir: &Path, history: &[EpochRecord], report: Option<&MetricsReport>) -> Result<Vec<PathBuf>> {
    if history.is_empty() {
        return Err(Error::contract("history is empty"));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(HISTORY_FILE);
    write_atomic(&path, &history_csv(history)?)?;
    written.push(path);
    if let Some(report) = report {
        written.extend(emit_metrics(dir, report)?);
    }
    Ok(written)
}

/// Writes `confusion.csv` and `report.csv` into `dir`.
pub fn emit_metrics(dir: &Path, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let confusion = dir.join(CONFUSION_FILE);
    write_atomic(&confusion, &confusion_csv(&report.confusion)?)?;
    let table = dir.join(REPORT_FILE);
    write_atomic(&table, &report_csv(report)?)?;
    Ok(vec![confusion, table])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_acc: 0.1 * epoch as f64,
            val_acc: epoch.is_multiple_of(2).then_some(1.0 / 3.0),
            train_loss: LossReport { l_cls: 1.0 / 7.0, l_seg: 0.25, l_growth: 1e-9, l_total: 0.123456789 },
            val_loss: None,
        }
    }

    #[test]
    fn history_roundtrips() {
        let history: Vec<_> = (1..=3).map(record).collect();
        let rows = parse_history_csv(&history_csv(&history).unwrap()).unwrap();
        assert_eq!(rows.len(), 3);
        for (r, (epoch, acc, val, loss)) in history.iter().zip(rows) {
            assert_eq!((r.epoch, r.train_acc, r.val_acc, r.train_loss), (epoch, acc, val, loss));
        }
        let one = history_csv(&history[..1]).unwrap();
        assert_eq!(String::from_utf8(one).unwrap().lines().count(), 2);
    }

    #[test]
    fn confusion_roundtrips_and_sums() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1, 0, 0], vec![0, 7, 2, 0], vec![0, 0, 4, 0], vec![1, 0, 0, 9]]).unwrap();
        let back = parse_confusion_csv(&confusion_csv(&cm).unwrap()).unwrap();
        assert_eq!(back, cm);
        assert_eq!(back.rows().iter().flatten().sum::<u64>(), 29);
    }

    #[test]
    fn report_layout() {
        let r = MetricsReport::from_pairs(4, &[(0, 0), (1, 1), (2, 1), (3, 3)]).unwrap();
        let text = String::from_utf8(report_csv(&r).unwrap()).unwrap();
        let first: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(first, ["class", "broadleaf", "grass", "soil", "soybean", "accuracy", "macro avg", "weighted avg"]);
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = MetricsReport::from_pairs(4, &[(0, 0), (1, 1)]).unwrap();
        let paths = emit_plot_data(dir.path(), &[record(1)], Some(&r)).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.exists()));
        assert!(emit_plot_data(dir.path(), &[], None).is_err());
    }
}
