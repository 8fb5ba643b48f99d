//! Ordering accuracy on depth tuples and aligned point metrics per layer.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::depth_map::MultiLayerDepthMap;
use crate::error::{Error, Result};
use crate::synth::{DepthTuple, DepthTupleSet, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Accuracy cells keyed by `(arity, subset)`. Cells with no tuples are absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TupleReport {
    pub cells: BTreeMap<(usize, Subset), Cell>,
}

impl TupleReport {
    pub fn accuracy(&self, arity: usize, subset: Subset) -> Option<f64> {
        self.cells.get(&(arity, subset)).and_then(Cell::accuracy)
    }

    pub fn cell(&self, arity: usize, subset: Subset) -> Option<Cell> {
        self.cells.get(&(arity, subset)).copied()
    }
}

/// Whether the prediction orders every pair in the tuple as the ground truth
/// does. A referenced layer the prediction lacks makes the tuple incorrect.
pub fn tuple_correct(pred: &MultiLayerDepthMap, tuple: &DepthTuple) -> bool {
    let w = pred.width();
    let depths: Option<Vec<f64>> = tuple
        .entries
        .iter()
        .map(|e| {
            if e.x >= w || e.y >= pred.height() {
                return None;
            }
            pred.layer_depth(e.y * w + e.x, e.layer - 1)
        })
        .collect();
    match depths {
        // entries are stored in ascending ground-truth order
        Some(d) => d.windows(2).all(|p| p[0] < p[1]),
        None => false,
    }
}

pub fn tuple_accuracy(pred: &MultiLayerDepthMap, tuples: &DepthTupleSet) -> TupleReport {
    let mut report = TupleReport::default();
    for t in &tuples.tuples {
        let ok = tuple_correct(pred, t) as usize;
        for subset in [Subset::All, t.subset] {
            let cell = report.cells.entry((t.arity(), subset)).or_default();
            cell.correct += ok;
            cell.total += 1;
        }
    }
    report
}

/// Least-squares `(s, t)` minimizing `sum (s * pred + t - gt)^2` over valid entries.
pub fn align_scale_shift(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::invalid("alignment inputs differ in length"));
    }
    let pts: Vec<(f64, f64)> = pred.iter().zip(gt).zip(valid).filter(|(_, &v)| v).map(|((&p, &g), _)| (p, g)).collect();
    align_pairs(&pts)
}

fn align_pairs(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pts.len() < 2 {
        return Err(Error::Alignment(format!("need at least 2 points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let pm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let gm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let spp: f64 = pts.iter().map(|p| (p.0 - pm) * (p.0 - pm)).sum();
    let spg: f64 = pts.iter().map(|p| (p.0 - pm) * (p.1 - gm)).sum();
    let spread = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if !(spp > 1e-24 * spread.max(1.0).powi(2) * n) {
        return Err(Error::Alignment("predicted depths are (nearly) constant".into()));
    }
    let s = spg / spp;
    Ok((s, gm - s * pm))
}

/// Whether one `(s, t)` is fitted over all layers or one per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Joint,
    PerLayer,
}

/// `(pred, gt)` values of layer `k` at pixels that have it in both maps,
/// and how many pixels have it in only one.
fn layer_pairs(pred: &MultiLayerDepthMap, gt: &MultiLayerDepthMap, k: usize) -> (Vec<(f64, f64)>, usize) {
    let mut pairs = Vec::new();
    let mut missing = 0;
    for p in 0..gt.len() {
        match (pred.layer_depth(p, k), gt.layer_depth(p, k)) {
            (Some(a), Some(b)) => pairs.push((a, b)),
            (None, None) => {}
            _ => missing += 1,
        }
    }
    (pairs, missing)
}

/// Alignment per layer of `gt` (the same pair repeated in joint mode).
pub fn align_maps(pred: &MultiLayerDepthMap, gt: &MultiLayerDepthMap, mode: AlignMode) -> Result<Vec<(f64, f64)>> {
    check_same_size(pred, gt)?;
    let layers = gt.max_layers();
    let per_layer: Vec<Vec<(f64, f64)>> = (0..layers).map(|k| layer_pairs(pred, gt, k).0).collect();
    match mode {
        AlignMode::Joint => {
            let all: Vec<(f64, f64)> = per_layer.concat();
            let st = align_pairs(&all)?;
            Ok(vec![st; layers])
        }
        AlignMode::PerLayer => per_layer.iter().map(|p| align_pairs(p)).collect(),
    }
}

fn check_same_size(a: &MultiLayerDepthMap, b: &MultiLayerDepthMap) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::invalid(format!(
            "maps differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointMetrics {
    pub abs_rel: f64,
    pub rms: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub count: usize,
    /// Points skipped because the ground-truth depth was not positive.
    pub nonpositive_gt: usize,
}

/// AbsRel, RMS and inlier ratios `max(p/g, g/p) < 1.25^i` over matched values.
/// A non-positive prediction is never an inlier.
pub fn point_metrics(pred: &[f64], gt: &[f64]) -> Result<PointMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::invalid("point metrics need equally long inputs"));
    }
    let mut m = PointMetrics::default();
    let (mut abs_rel, mut sq, mut d1, mut d2) = (0.0, 0.0, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        if !(g > 0.0) {
            m.nonpositive_gt += 1;
            continue;
        }
        m.count += 1;
        abs_rel += (p - g).abs() / g;
        sq += (p - g) * (p - g);
        let ratio = if p > 0.0 { (p / g).max(g / p) } else { f64::INFINITY };
        d1 += (ratio < 1.25) as usize;
        d2 += (ratio < 1.25 * 1.25) as usize;
    }
    if m.count > 0 {
        let n = m.count as f64;
        m.abs_rel = abs_rel / n;
        m.rms = (sq / n).sqrt();
        m.delta1 = d1 as f64 / n;
        m.delta2 = d2 as f64 / n;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMetrics {
    /// 1-based.
    pub layer: usize,
    pub scale: f64,
    pub shift: f64,
    pub metrics: PointMetrics,
    /// Pixels where only one of the two maps has this layer.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tuples: Option<TupleReport>,
    pub layers: Vec<LayerMetrics>,
}

/// Aligns `pred` to `gt`, then scores every layer of `gt`; optionally scores tuples.
pub fn evaluate_maps(pred: &MultiLayerDepthMap, gt: &MultiLayerDepthMap, tuples: Option<&DepthTupleSet>, mode: AlignMode) -> Result<EvalReport> {
    let align = align_maps(pred, gt, mode)?;
    let mut layers = Vec::with_capacity(align.len());
    for (k, &(s, t)) in align.iter().enumerate() {
        let (pairs, missing) = layer_pairs(pred, gt, k);
        let p: Vec<f64> = pairs.iter().map(|q| s * q.0 + t).collect();
        let g: Vec<f64> = pairs.iter().map(|q| q.1).collect();
        layers.push(LayerMetrics {
            layer: k + 1,
            scale: s,
            shift: t,
            metrics: point_metrics(&p, &g)?,
            missing,
        });
    }
    Ok(EvalReport {
        tuples: tuples.map(|t| tuple_accuracy(pred, t)),
        layers,
    })
}

fn arity_name(a: usize) -> &'static str {
    match a {
        2 => "P",
        3 => "T",
        4 => "Q",
        _ => "?",
    }
}

impl EvalReport {
    /// One `kind,arity,subset,layer,metric,value` row per number.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,arity,subset,layer,metric,value\n");
        if let Some(t) = &self.tuples {
            for (&(arity, subset), cell) in &t.cells {
                if let Some(acc) = cell.accuracy() {
                    let _ = writeln!(out, "tuple,{arity},{subset},,accuracy,{acc}");
                }
                let _ = writeln!(out, "tuple,{arity},{subset},,count,{}", cell.total);
            }
        }
        for l in &self.layers {
            let m = &l.metrics;
            for (name, v) in [
                ("abs_rel", m.abs_rel),
                ("rms", m.rms),
                ("delta1", m.delta1),
                ("delta2", m.delta2),
                ("count", m.count as f64),
                ("missing", l.missing as f64),
                ("scale", l.scale),
                ("shift", l.shift),
            ] {
                let _ = writeln!(out, "point,,,{},{name},{v}", l.layer);
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.tuples {
            writeln!(f, "{:<6} {:<8} {:>9} {:>8}", "tuple", "subset", "accuracy", "count")?;
            for (&(arity, subset), cell) in &t.cells {
                let acc = cell.accuracy().map(|a| format!("{:.2}%", 100.0 * a)).unwrap_or_else(|| "-".into());
                writeln!(f, "{:<6} {:<8} {:>9} {:>8}", arity_name(arity), subset.to_string(), acc, cell.total)?;
            }
            writeln!(f)?;
        }
        writeln!(
            f,
            "{:<6} {:>9} {:>9} {:>7} {:>7} {:>7} {:>7}",
            "layer", "AbsRel", "RMS", "d1", "d2", "n", "miss"
        )?;
        for l in &self.layers {
            let m = &l.metrics;
            writeln!(
                f,
                "{:<6} {:>9.5} {:>9.5} {:>7.4} {:>7.4} {:>7} {:>7}",
                l.layer, m.abs_rel, m.rms, m.delta1, m.delta2, m.count, l.missing
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_map::DepthUnits;
    use crate::synth::TupleEntry;

    fn quad_map(depths: [f64; 4]) -> MultiLayerDepthMap {
        MultiLayerDepthMap::from_pixels(1, 4, DepthUnits::Raw, depths.iter().map(|&d| vec![d]).collect()).unwrap()
    }

    fn quad() -> DepthTupleSet {
        DepthTupleSet {
            tuples: vec![DepthTuple {
                entries: (0..4).map(|x| TupleEntry { x, y: 0, layer: 1 }).collect(),
                subset: Subset::Layer(1),
            }],
            shortfall: 0,
        }
    }

    #[test]
    fn quadruplet_example() {
        let pred = quad_map([1.1, 1.9, 3.2, 4.0]);
        let r = tuple_accuracy(&pred, &quad());
        assert_eq!(r.accuracy(4, Subset::All), Some(1.0));
        assert_eq!(r.accuracy(4, Subset::Layer(1)), Some(1.0));
        assert_eq!(r.accuracy(4, Subset::Mixed), None);
        let swapped = quad_map([1.1, 3.3, 3.2, 4.0]);
        assert_eq!(tuple_accuracy(&swapped, &quad()).accuracy(4, Subset::All), Some(0.0));
    }

    #[test]
    fn missing_layer_is_incorrect() {
        let pred = MultiLayerDepthMap::from_pixels(1, 4, DepthUnits::Raw, vec![vec![1.0], vec![2.0], vec![], vec![4.0]]).unwrap();
        assert_eq!(tuple_accuracy(&pred, &quad()).accuracy(4, Subset::All), Some(0.0));
    }

    #[test]
    fn alignment_examples() {
        let g = [1.0, 2.0, 4.0, 7.0];
        let v = [true; 4];
        assert_eq!(align_scale_shift(&g, &g, &v).unwrap(), (1.0, 0.0));
        let p: Vec<f64> = g.iter().map(|x| (x - 1.0) / 2.0).collect();
        let (s, t) = align_scale_shift(&p, &g, &v).unwrap();
        assert!((s - 2.0).abs() < 1e-14 && (t - 1.0).abs() < 1e-14);
        assert!(matches!(align_scale_shift(&[1.0, 1.0], &[1.0, 2.0], &[true, true]), Err(Error::Alignment(_))));
        assert!(matches!(align_scale_shift(&[1.0, 2.0], &[1.0, 2.0], &[true, false]), Err(Error::Alignment(_))));
    }

    #[test]
    fn point_metric_examples() {
        let g = [1.0, 2.0, 3.0];
        let m = point_metrics(&g, &g).unwrap();
        assert_eq!((m.abs_rel, m.rms, m.delta1, m.delta2), (0.0, 0.0, 1.0, 1.0));
        let p: Vec<f64> = g.iter().map(|x| 1.25 * x).collect();
        let m = point_metrics(&p, &g).unwrap();
        assert_eq!((m.delta1, m.delta2), (0.0, 1.0));
        let m = point_metrics(&[2.0], &[1.0]).unwrap();
        assert_eq!((m.abs_rel, m.rms), (1.0, 1.0));
        let m = point_metrics(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!((m.count, m.nonpositive_gt), (1, 1));
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let gt = MultiLayerDepthMap::from_pixels(2, 2, DepthUnits::Raw, vec![vec![1.0, 3.0], vec![2.0], vec![1.5, 2.5], vec![]]).unwrap();
        let r = evaluate_maps(&gt, &gt, None, AlignMode::Joint).unwrap();
        for l in &r.layers {
            assert!(l.metrics.abs_rel < 1e-12 && l.metrics.delta1 == 1.0 && l.missing == 0);
        }
        assert!(r.to_csv().starts_with("kind,arity,subset,layer,metric,value\n"));
    }
}
