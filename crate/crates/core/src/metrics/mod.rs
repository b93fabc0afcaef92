//! Segmentation metrics: Dice, HD95, lesion-wise F1, lesion count and
//! volume differences, and per-case reports.

pub mod components;
pub mod distance;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use components::{connected_components, Connectivity};

use crate::error::{Error, Result};
use crate::pipeline::Volume;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub shape: [usize; 3],
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(shape: [usize; 3]) -> Self {
        Mask { shape, data: vec![false; shape.iter().product()] }
    }

    pub fn new(shape: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("{} mask values for {shape:?}", data.len())));
        }
        Ok(Mask { shape, data })
    }

    /// Voxels of a single-channel label volume whose label is in `classes`.
    pub fn from_labels(labels: &Volume, classes: &[u32]) -> Self {
        let n = labels.voxels();
        Mask { shape: labels.shape, data: labels.data[..n].iter().map(|&l| classes.contains(&(l as u32))).collect() }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

fn same_shape(a: &Mask, b: &Mask) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!("mask shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)`; 1 when both masks are empty.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_shape(pred, gt)?;
    let inter = pred.data.iter().zip(&gt.data).filter(|(&p, &g)| p && g).count();
    let total = pred.count() + gt.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Foreground voxels with at least one 6-neighbour in the background.
/// Neighbours outside the grid count as background.
pub fn surface(mask: &Mask) -> Vec<bool> {
    let [d, h, w] = mask.shape;
    let at = |z: isize, y: isize, x: isize| -> bool {
        z >= 0 && y >= 0 && x >= 0 && (z as usize) < d && (y as usize) < h && (x as usize) < w
            && mask.data[(z as usize * h + y as usize) * w + x as usize]
    };
    let mut out = vec![false; mask.data.len()];
    for z in 0..d as isize {
        for y in 0..h as isize {
            for x in 0..w as isize {
                if at(z, y, x) {
                    let n6 = [(z - 1, y, x), (z + 1, y, x), (z, y - 1, x), (z, y + 1, x), (z, y, x - 1), (z, y, x + 1)];
                    out[(z as usize * h + y as usize) * w + x as usize] = n6.iter().any(|&(a, b, c)| !at(a, b, c));
                }
            }
        }
    }
    out
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Symmetric 95th-percentile surface distance in mm; `None` when either
/// mask is empty.
pub fn hd95(pred: &Mask, gt: &Mask, spacing_mm: [f64; 3]) -> Result<Option<f64>> {
    same_shape(pred, gt)?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(None);
    }
    let (sp, sg) = (surface(pred), surface(gt));
    let dp = distance::squared_edt(&sp, pred.shape, spacing_mm);
    let dg = distance::squared_edt(&sg, gt.shape, spacing_mm);
    let mut p_to_g: Vec<f64> = sp.iter().zip(&dg).filter(|(&s, _)| s).map(|(_, &d)| d.sqrt()).collect();
    let mut g_to_p: Vec<f64> = sg.iter().zip(&dp).filter(|(&s, _)| s).map(|(_, &d)| d.sqrt()).collect();
    Ok(Some(percentile(&mut p_to_g, 95.0).max(percentile(&mut g_to_p, 95.0))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LesionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// TP: ground-truth components touched by any predicted voxel; FN: the
/// rest; FP: predicted components touching no ground-truth voxel.
pub fn lesion_counts(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<LesionCounts> {
    same_shape(pred, gt)?;
    let (gl, gn) = connected_components(gt, conn);
    let (pl, pn) = connected_components(pred, conn);
    let mut gt_hit = vec![false; gn + 1];
    let mut pred_hit = vec![false; pn + 1];
    for i in 0..gl.len() {
        if gl[i] > 0 && pl[i] > 0 {
            gt_hit[gl[i] as usize] = true;
            pred_hit[pl[i] as usize] = true;
        }
    }
    let tp = gt_hit[1..].iter().filter(|&&h| h).count();
    let fp = pred_hit[1..].iter().filter(|&&h| !h).count();
    Ok(LesionCounts { tp, fp, fn_: gn - tp })
}

/// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
pub fn lesion_f1(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<f64> {
    let c = lesion_counts(pred, gt, conn)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * c.tp as f64 / denom as f64 })
}

/// Absolute difference in component counts.
pub fn lcd(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<usize> {
    same_shape(pred, gt)?;
    Ok(connected_components(pred, conn).1.abs_diff(connected_components(gt, conn).1))
}

/// Absolute difference in foreground volume, mm³.
pub fn avd(pred: &Mask, gt: &Mask, spacing_mm: [f64; 3]) -> Result<f64> {
    same_shape(pred, gt)?;
    let vox: f64 = spacing_mm.iter().product();
    Ok(pred.count().abs_diff(gt.count()) as f64 * vox)
}

/// Named set of label values evaluated as one binary region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub classes: Vec<u32>,
}

impl Region {
    /// One region per foreground class.
    pub fn per_class(num_classes: usize) -> Vec<Region> {
        (1..num_classes as u32).map(|k| Region { name: format!("class_{k}"), classes: vec![k] }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case: String,
    pub region: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub lesion_f1: f64,
    pub lcd: usize,
    pub avd: f64,
    /// Both masks empty: dice and lesion F1 are 1 by convention.
    pub both_empty: bool,
}

pub fn evaluate_case(case: &str, pred: &Volume, gt: &Volume, regions: &[Region], conn: Connectivity) -> Result<Vec<CaseMetrics>> {
    if pred.shape != gt.shape {
        return Err(Error::shape(format!("prediction {:?} and ground truth {:?} differ", pred.shape, gt.shape)));
    }
    regions
        .iter()
        .map(|r| {
            let p = Mask::from_labels(pred, &r.classes);
            let g = Mask::from_labels(gt, &r.classes);
            Ok(CaseMetrics {
                case: case.to_string(),
                region: r.name.clone(),
                dice: dice(&p, &g)?,
                hd95: hd95(&p, &g, gt.spacing_mm)?,
                lesion_f1: lesion_f1(&p, &g, conn)?,
                lcd: lcd(&p, &g, conn)?,
                avd: avd(&p, &g, gt.spacing_mm)?,
                both_empty: p.is_empty() && g.is_empty(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Summary { mean: None, median: None, n: 0 };
        }
        let mut v = values.to_vec();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Summary { mean: Some(mean), median: Some(percentile(&mut v, 50.0)), n: values.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionSummary {
    pub region: String,
    pub dice: Summary,
    /// Cases with an empty mask are excluded.
    pub hd95: Summary,
    pub lesion_f1: Summary,
    pub lcd: Summary,
    pub avd: Summary,
    pub hd95_missing: usize,
    pub both_empty: usize,
}

/// A case that could not be scored.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseError {
    pub case: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    pub aggregate: Vec<RegionSummary>,
    pub errors: Vec<CaseError>,
}

impl MetricsReport {
    pub fn with_errors(cases: Vec<CaseMetrics>, errors: Vec<CaseError>) -> Self {
        MetricsReport { errors, ..Self::new(cases) }
    }

    pub fn new(cases: Vec<CaseMetrics>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for c in &cases {
            if !names.contains(&c.region) {
                names.push(c.region.clone());
            }
        }
        let aggregate = names
            .into_iter()
            .map(|name| {
                let rows: Vec<&CaseMetrics> = cases.iter().filter(|c| c.region == name).collect();
                let col = |f: &dyn Fn(&CaseMetrics) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
                let hd: Vec<f64> = rows.iter().filter_map(|r| r.hd95).collect();
                RegionSummary {
                    dice: Summary::of(&col(&|r| r.dice)),
                    hd95_missing: rows.len() - hd.len(),
                    hd95: Summary::of(&hd),
                    lesion_f1: Summary::of(&col(&|r| r.lesion_f1)),
                    lcd: Summary::of(&col(&|r| r.lcd as f64)),
                    avd: Summary::of(&col(&|r| r.avd)),
                    both_empty: rows.iter().filter(|r| r.both_empty).count(),
                    region: name,
                }
            })
            .collect();
        MetricsReport { cases, aggregate, errors: Vec::new() }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "case,region,dice,hd95,lesion_f1,lcd,avd,both_empty,error").map_err(io)?;
        for c in &self.cases {
            let hd = c.hd95.map_or_else(String::new, |v| v.to_string());
            writeln!(f, "{},{},{},{},{},{},{},{},", c.case, c.region, c.dice, hd, c.lesion_f1, c.lcd, c.avd, c.both_empty)
                .map_err(io)?;
        }
        for e in &self.errors {
            writeln!(f, "{},,,,,,,,\"{}\"", e.case, e.error.replace('"', "'")).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&serde_json::json!({ "aggregate": self.aggregate, "errors": self.errors }))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
