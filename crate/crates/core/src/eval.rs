//! Voxel-level per-class evaluation and the {filtering, CFAR} ablation grid.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::{DatasetSplit, Frame, OccupancyMask};
use crate::error::{Error, Result};
use crate::unet::train::predict_labels;
use crate::unet::{train, TrainConfig, UNetParams};

pub const CLASSES: usize = 2;
pub const CLASS_NAMES: [&str; CLASSES] = ["background", "object"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; CLASSES],
}

impl ConfusionCounts {
    pub fn add(&mut self, o: &ConfusionCounts) {
        for (a, b) in self.classes.iter_mut().zip(&o.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
            a.tn += b.tn;
        }
    }
}

fn count_labels(pred: &[u8], gt: &[u8]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        for (k, cc) in c.classes.iter_mut().enumerate() {
            let (pk, gk) = (p as usize == k, g as usize == k);
            match (pk, gk) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, true) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    c
}

pub fn confusion(pred: &OccupancyMask, gt: &OccupancyMask) -> Result<ConfusionCounts> {
    if pred.grid != gt.grid || pred.labels.len() != gt.labels.len() {
        return Err(Error::GridMismatch { op: "confusion" });
    }
    Ok(count_labels(&pred.labels, &gt.labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub iou: f64,
    /// Set when some denominator was zero; the affected metrics read 0.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(c: &ClassCounts) -> ClassMetrics {
    let mut undefined = false;
    let recall = ratio(c.tp, c.tp + c.fn_, &mut undefined);
    let precision = ratio(c.tp, c.tp + c.fp, &mut undefined);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, &mut undefined);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, &mut undefined);
    ClassMetrics { recall, precision, f1, iou, undefined }
}

pub fn per_class_metrics(c: &ConfusionCounts) -> [ClassMetrics; CLASSES] {
    c.classes.map(|k| class_metrics(&k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub frames: Vec<(String, ConfusionCounts)>,
    pub total: ConfusionCounts,
}

pub const EVAL_CSV_HEADER: &str = "frame,class,tp,fp,fn,tn,recall,precision,f1,iou,undefined";

impl Evaluation {
    pub fn metrics(&self) -> [ClassMetrics; CLASSES] {
        per_class_metrics(&self.total)
    }

    /// Per-frame rows followed by the aggregate rows under frame id `all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        let rows = self.frames.iter().map(|(id, c)| (id.as_str(), c)).chain([("all", &self.total)]);
        for (id, c) in rows {
            for (k, cc) in c.classes.iter().enumerate() {
                let m = class_metrics(cc);
                let _ = writeln!(
                    s,
                    "{id},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
                    CLASS_NAMES[k], cc.tp, cc.fp, cc.fn_, cc.tn, m.recall, m.precision, m.f1, m.iou, m.undefined as u8
                );
            }
        }
        s
    }
}

/// Micro-averaged evaluation of precomputed label volumes.
pub fn evaluate_predictions(frames: &[Frame], preds: &[Vec<u8>]) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    if frames.len() != preds.len() {
        return Err(Error::Shape { op: "evaluate", axis: "frames", expected: frames.len(), found: preds.len() });
    }
    let mut total = ConfusionCounts::default();
    let mut rows = Vec::with_capacity(frames.len());
    for (f, p) in frames.iter().zip(preds) {
        if p.len() != f.mask.labels.len() {
            return Err(Error::GridMismatch { op: "evaluate" });
        }
        let c = count_labels(p, &f.mask.labels);
        total.add(&c);
        rows.push((f.id.clone(), c));
    }
    Ok(Evaluation { frames: rows, total })
}

pub fn evaluate_dataset(params: &UNetParams, frames: &[Frame]) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let preds = frames
        .par_iter()
        .map(|f| predict_labels(params, f))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(frames, &preds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationConfig {
    pub filter_empty: bool,
    pub cfar: bool,
}

impl AblationConfig {
    /// The four toggle combinations, filtered-with-CFAR first.
    pub fn grid() -> [AblationConfig; 4] {
        [(true, true), (true, false), (false, true), (false, false)].map(|(filter_empty, cfar)| AblationConfig { filter_empty, cfar })
    }

    pub fn id(&self) -> String {
        format!(
            "{}+{}",
            if self.filter_empty { "filtered" } else { "unfiltered" },
            if self.cfar { "cfar" } else { "no-cfar" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    /// Object-class metrics and best validation loss, or the error message.
    pub result: std::result::Result<(ClassMetrics, f64), String>,
}

pub const ABLATION_CSV_HEADER: &str = "config,recall,precision,f1,iou,best_val_loss";

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        match &r.result {
            Ok((m, loss)) => {
                let _ = writeln!(
                    s,
                    "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                    r.config.id(),
                    m.recall,
                    m.precision,
                    m.f1,
                    m.iou,
                    loss
                );
            }
            Err(_) => {
                let _ = writeln!(s, "{},,,,,", r.config.id());
            }
        }
    }
    s
}

/// Trains and evaluates one model per config. `build` turns a config into a
/// train/validation split; the object class is scored on the validation
/// frames. A failing row records its error and the remaining rows still run.
pub fn run_ablation<F>(configs: &[AblationConfig], train_cfg: &TrainConfig, build: F) -> Vec<AblationRow>
where
    F: Fn(&AblationConfig) -> Result<DatasetSplit<Frame>>,
{
    configs
        .iter()
        .map(|c| {
            let result = (|| {
                let split = build(c)?;
                let out = train(&split, train_cfg)?;
                let eval = evaluate_dataset(&out.checkpoint.params, &split.val)?;
                Ok::<_, Error>((eval.metrics()[1], out.best_val_loss()))
            })()
            .map_err(|e| e.to_string());
            AblationRow { config: *c, result }
        })
        .collect()
}
