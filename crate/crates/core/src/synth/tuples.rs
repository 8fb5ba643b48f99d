//! Relative-depth tuples for ordering metrics, and their CSV form.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth_map::MultiLayerDepthMap;
use crate::error::{Error, Result};

/// A point on one ground-truth layer. `layer` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TupleEntry {
    pub x: usize,
    pub y: usize,
    pub layer: usize,
}

/// Which tuples a metric cell covers. Tuples themselves are tagged `Mixed` or `Layer(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    All,
    Mixed,
    Layer(usize),
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subset::All => write!(f, "all"),
            Subset::Mixed => write!(f, "mixed"),
            Subset::Layer(n) => write!(f, "layer{n}"),
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "mixed" => Ok(Subset::Mixed),
            _ => s
                .strip_prefix("layer")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 1)
                .map(Subset::Layer)
                .ok_or_else(|| Error::invalid(format!("unknown subset '{s}'"))),
        }
    }
}

/// Entries are stored nearest first, so the ground-truth order is the storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthTuple {
    pub entries: Vec<TupleEntry>,
    pub subset: Subset,
}

impl DepthTuple {
    pub fn arity(&self) -> usize {
        self.entries.len()
    }

    pub fn tag_for(entries: &[TupleEntry]) -> Subset {
        match entries.first() {
            Some(e) if entries.iter().all(|o| o.layer == e.layer) => Subset::Layer(e.layer),
            _ => Subset::Mixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DepthTupleSet {
    pub tuples: Vec<DepthTuple>,
    /// Requested tuples that could not be drawn.
    pub shortfall: usize,
}

/// What kind of tuples to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layer")]
pub enum SubsetRule {
    /// Any annotated points.
    #[default]
    Any,
    /// At least two distinct layer indices.
    Mixed,
    /// Every point on this 1-based layer.
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TupleRequest {
    pub arity: usize,
    pub count: usize,
    #[serde(default)]
    pub rule: SubsetRule,
}

/// Default minimum separation: 1% of the depth range of `gt`.
pub fn default_eps_sep(gt: &MultiLayerDepthMap) -> f64 {
    let d = gt.all_depths();
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if d.is_empty() {
        0.0
    } else {
        0.01 * (hi - lo)
    }
}

const ATTEMPTS_PER_TUPLE: usize = 200;

/// Draws tuples by rejection: every pair of entries must differ in depth by at
/// least `eps_sep`, and always strictly. Requests that cannot be filled are
/// counted in `shortfall`.
pub fn sample_tuples(gt: &MultiLayerDepthMap, requests: &[TupleRequest], eps_sep: f64, seed: u64) -> Result<DepthTupleSet> {
    let w = gt.width();
    let points: Vec<TupleEntry> = (0..gt.len())
        .flat_map(|p| {
            (1..=gt.layer_count(p)).map(move |layer| TupleEntry {
                x: p % w,
                y: p / w,
                layer,
            })
        })
        .collect();
    let depth = |e: &TupleEntry| gt.layer_depth(e.y * w + e.x, e.layer - 1).expect("entry refers to an existing layer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = DepthTupleSet::default();

    for req in requests {
        if !(2..=4).contains(&req.arity) {
            return Err(Error::invalid(format!("tuple arity must be 2, 3 or 4, got {}", req.arity)));
        }
        let pool: Vec<TupleEntry> = match req.rule {
            SubsetRule::Layer(l) => points.iter().copied().filter(|e| e.layer == l).collect(),
            _ => points.clone(),
        };
        let mut drawn = 0;
        let mut attempts = 0;
        while drawn < req.count && attempts < req.count * ATTEMPTS_PER_TUPLE && !pool.is_empty() {
            attempts += 1;
            let mut entries: Vec<TupleEntry> = (0..req.arity).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            entries.sort_by(|a, b| depth(a).total_cmp(&depth(b)));
            if entries.windows(2).any(|p| {
                let gap = depth(&p[1]) - depth(&p[0]);
                gap <= 0.0 || gap < eps_sep
            }) {
                continue;
            }
            let subset = DepthTuple::tag_for(&entries);
            if req.rule == SubsetRule::Mixed && subset != Subset::Mixed {
                continue;
            }
            set.tuples.push(DepthTuple { entries, subset });
            drawn += 1;
        }
        set.shortfall += req.count - drawn;
    }
    Ok(set)
}

const MAX_ARITY: usize = 4;

pub fn write_tuples_to(set: &DepthTupleSet, mut w: impl Write) -> Result<()> {
    let mut header = vec!["arity".to_string()];
    for i in 1..=MAX_ARITY {
        header.extend([format!("x{i}"), format!("y{i}"), format!("l{i}")]);
    }
    header.push("subset".into());
    writeln!(w, "{}", header.join(","))?;
    for t in &set.tuples {
        let mut row = vec![t.arity().to_string()];
        for i in 0..MAX_ARITY {
            match t.entries.get(i) {
                Some(e) => row.extend([e.x.to_string(), e.y.to_string(), e.layer.to_string()]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        row.push(t.subset.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tuples(set: &DepthTupleSet, path: impl AsRef<Path>) -> Result<()> {
    write_tuples_to(set, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_tuples_from(r: impl std::io::Read) -> Result<DepthTupleSet> {
    let mut set = DepthTupleSet::default();
    let mut offset = 0u64;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let at = offset;
        offset += line.len() as u64 + 1;
        if i == 0 {
            if !line.starts_with("arity,") {
                return Err(Error::format(at, "missing tuple CSV header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::format(at, format!("line {}: {msg}", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 + 3 * MAX_ARITY {
            return Err(bad("wrong column count"));
        }
        let arity: usize = cols[0].parse().map_err(|_| bad("bad arity"))?;
        if !(2..=MAX_ARITY).contains(&arity) {
            return Err(bad("arity out of range"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad entry"));
        let mut entries = Vec::with_capacity(arity);
        for k in 0..arity {
            let c = &cols[1 + 3 * k..4 + 3 * k];
            let layer = num(c[2])?;
            if layer == 0 {
                return Err(bad("layers are 1-based"));
            }
            entries.push(TupleEntry {
                x: num(c[0])?,
                y: num(c[1])?,
                layer,
            });
        }
        let subset: Subset = cols[cols.len() - 1].parse().map_err(|_| bad("bad subset"))?;
        set.tuples.push(DepthTuple { entries, subset });
    }
    Ok(set)
}

pub fn read_tuples(path: impl AsRef<Path>) -> Result<DepthTupleSet> {
    read_tuples_from(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_map::DepthUnits;

    fn gt() -> MultiLayerDepthMap {
        MultiLayerDepthMap::from_pixels(
            2,
            3,
            DepthUnits::Raw,
            vec![vec![1.0, 2.0], vec![1.5], vec![1.0, 3.0, 4.0], vec![2.5], vec![], vec![0.5, 5.0]],
        )
        .unwrap()
    }

    #[test]
    fn tags() {
        let e = |layer| TupleEntry { x: 0, y: 0, layer };
        assert_eq!(DepthTuple::tag_for(&[e(1), e(1), e(1)]), Subset::Layer(1));
        assert_eq!(DepthTuple::tag_for(&[e(1), e(2)]), Subset::Mixed);
    }

    #[test]
    fn sampled_orderings_follow_gt() {
        let gt = gt();
        let set = sample_tuples(&gt, &[TupleRequest { arity: 3, count: 500, rule: SubsetRule::Any }], 0.1, 3).unwrap();
        assert_eq!(set.tuples.len() + set.shortfall, 500);
        for t in &set.tuples {
            let d: Vec<f64> = t.entries.iter().map(|e| gt.layer_depth(e.y * 3 + e.x, e.layer - 1).unwrap()).collect();
            assert!(d.windows(2).all(|p| p[1] - p[0] >= 0.1));
            assert_eq!(t.subset, DepthTuple::tag_for(&t.entries));
        }
    }

    #[test]
    fn layer_rule_restricts_pool() {
        let set = sample_tuples(&gt(), &[TupleRequest { arity: 2, count: 50, rule: SubsetRule::Layer(2) }], 0.0, 1).unwrap();
        assert!(set.tuples.iter().all(|t| t.subset == Subset::Layer(2)));
    }

    #[test]
    fn impossible_request_reports_shortfall() {
        let set = sample_tuples(&gt(), &[TupleRequest { arity: 4, count: 5, rule: SubsetRule::Layer(3) }], 0.0, 1).unwrap();
        assert_eq!(set.shortfall, 5);
    }

    #[test]
    fn csv_round_trip() {
        let set = sample_tuples(
            &gt(),
            &[
                TupleRequest { arity: 2, count: 20, rule: SubsetRule::Any },
                TupleRequest { arity: 4, count: 20, rule: SubsetRule::Mixed },
            ],
            0.0,
            9,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_tuples_to(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("arity,x1,y1,l1,x2,y2,l2,x3,y3,l3,x4,y4,l4,subset\n"));
        let back = read_tuples_from(buf.as_slice()).unwrap();
        assert_eq!(back.tuples, set.tuples);
    }

    #[test]
    fn csv_rejects_zero_layer() {
        let text = "arity,x1,y1,l1,x2,y2,l2,x3,y3,l3,x4,y4,l4,subset\n2,0,0,0,1,1,1,,,,,,,mixed\n";
        assert!(matches!(read_tuples_from(text.as_bytes()), Err(Error::Format { offset: 49, .. })));
    }
}
