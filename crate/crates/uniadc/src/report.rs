//! Metric report emission (JSON and CSV in I-AUC, P-AUC, PRO, Acc, mIoU
//! order) and sweep tables.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};
use uniadc_core::metrics::{MetricReport, MetricResult, SweepRow};

use crate::error::{AppError, AppResult};
use crate::io::write_text;

pub const COLUMNS: [&str; 5] = ["I-AUC", "P-AUC", "PRO", "Acc", "mIoU"];

/// Report of one image class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class: String,
    pub categories: Vec<String>,
    pub report: MetricReport,
}

fn values(r: &MetricReport) -> [&MetricResult; 5] {
    [&r.i_auc, &r.p_auc, &r.pro, &r.acc, &r.miou]
}

fn value_json(m: &MetricResult) -> Value {
    match m {
        Ok(v) => json!(v),
        Err(_) => Value::Null,
    }
}

/// Mean over classes of each metric that is available in at least one
/// class; `None` otherwise.
pub fn class_means(reports: &[ClassReport]) -> [Option<f64>; 5] {
    std::array::from_fn(|i| {
        let present: Vec<f64> = reports
            .iter()
            .filter_map(|r| values(&r.report)[i].as_ref().ok().copied())
            .collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    })
}

pub fn report_json(reports: &[ClassReport]) -> String {
    let classes: Vec<Value> = reports
        .iter()
        .map(|r| {
            let mut obj = Map::new();
            obj.insert("class".into(), json!(r.class));
            let mut absent = Map::new();
            for (name, m) in COLUMNS.iter().zip(values(&r.report)) {
                obj.insert((*name).into(), value_json(m));
                if let Err(e) = m {
                    absent.insert((*name).into(), json!(e.to_string()));
                }
            }
            obj.insert("absent".into(), Value::Object(absent));
            let cats: Vec<Value> = r
                .report
                .per_class
                .iter()
                .map(|c| {
                    let name = r.categories.get(usize::from(c.label) - 1).cloned().unwrap_or_else(|| "other".into());
                    json!({
                        "label": c.label,
                        "name": name,
                        "images": c.images,
                        "acc": value_json(&c.acc),
                        "iou": value_json(&c.iou),
                    })
                })
                .collect();
            obj.insert("categories".into(), Value::Array(cats));
            Value::Object(obj)
        })
        .collect();
    let mut mean = Map::new();
    for (name, v) in COLUMNS.iter().zip(class_means(reports)) {
        mean.insert((*name).into(), v.map_or(Value::Null, |v| json!(v)));
    }
    let doc = json!({
        "columns": COLUMNS,
        "classes": classes,
        "mean": Value::Object(mean),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn report_csv(reports: &[ClassReport]) -> String {
    let mut s = String::from("class");
    for c in COLUMNS {
        write!(s, ",{c}").unwrap();
    }
    s.push('\n');
    for r in reports {
        s.push_str(&r.class);
        for m in values(&r.report) {
            write!(s, ",{}", cell(m.as_ref().ok().copied())).unwrap();
        }
        s.push('\n');
    }
    s.push_str("mean");
    for v in class_means(reports) {
        write!(s, ",{}", cell(v)).unwrap();
    }
    s.push('\n');
    s
}

pub fn write_reports(dir: &Path, reports: &[ClassReport]) -> AppResult<()> {
    write_text(&dir.join("report.json"), &report_json(reports))?;
    write_text(&dir.join("report.csv"), &report_csv(reports))
}

/// One sweep table row with absent values as `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub acc: Option<f64>,
    pub miou: Option<f64>,
}

/// Averages per-class sweeps row by row.
pub fn mean_sweep(per_class: &[Vec<SweepRow>]) -> Vec<SweepPoint> {
    let Some(first) = per_class.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| {
            let mean = |f: fn(&SweepRow) -> &MetricResult| {
                let v: Vec<f64> = per_class.iter().filter_map(|rows| f(&rows[i]).as_ref().ok().copied()).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            SweepPoint {
                tau: first[i].tau,
                acc: mean(|r| &r.acc),
                miou: mean(|r| &r.miou),
            }
        })
        .collect()
}

pub fn points_from_rows(rows: &[SweepRow]) -> Vec<SweepPoint> {
    rows.iter()
        .map(|r| SweepPoint {
            tau: r.tau,
            acc: r.acc.as_ref().ok().copied(),
            miou: r.miou.as_ref().ok().copied(),
        })
        .collect()
}

/// Sweep CSV with header `tau,acc,miou`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "acc", "miou"]).unwrap();
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    for p in points {
        w.write_record([p.tau.to_string(), f(p.acc), f(p.miou)]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn read_sweep_csv(path: &Path) -> AppResult<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
    let parse = |s: &str| -> AppResult<Option<f64>> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| AppError::Format(format!("{s:?}: {e}")))
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| AppError::Format(e.to_string()))?;
        if rec.len() != 3 {
            return Err(AppError::Format(format!("expected 3 columns, found {}", rec.len())));
        }
        out.push(SweepPoint {
            tau: parse(&rec[0])?.ok_or_else(|| AppError::Format("tau is NA".into()))?,
            acc: parse(&rec[1])?,
            miou: parse(&rec[2])?,
        });
    }
    Ok(out)
}
