//! Splitting a time-ordered query stream into per-iteration batches, plus the
//! separability diagnostics behind it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::coordinate_median;
use crate::linalg::{dot, norm2, sub};
use crate::model::DomainBox;
use crate::rng::{normal_vec, rng_for, uniform_in};
use crate::scalar::Real;

pub const DEFAULT_THRESHOLD_MULTIPLIER: f64 = 6.0;

/// Far points that must agree before a new batch is opened.
pub const MIN_NEW_BATCH: usize = 3;

/// Past this many members a batch center is refreshed every this many joins.
const CENTER_REFRESH: usize = 16;

/// A stream as the defender sees it, with optional ground-truth iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryStream<T> {
    pub points: Vec<Vec<T>>,
    pub iterations: Option<Vec<usize>>,
}

/// Batch of stream positions, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub indices: Vec<usize>,
}

struct Open<T> {
    members: Vec<usize>,
    core: Vec<Vec<T>>,
    center: Vec<T>,
}

impl<T: Real> Open<T> {
    fn new(idx: Vec<usize>, pts: Vec<Vec<T>>) -> Self {
        let center = coordinate_median(&pts).expect("non-empty core");
        Open { members: idx, core: pts, center }
    }

    fn push_core(&mut self, i: usize, p: &[T]) {
        self.members.push(i);
        self.core.push(p.to_vec());
        let n = self.core.len();
        if n <= CENTER_REFRESH || n.is_multiple_of(CENTER_REFRESH) {
            self.center = coordinate_median(&self.core).expect("non-empty core");
        }
    }
}

/// Greedy chronological segmentation.
///
/// A query within `threshold = multiplier · σ · √d` of the current batch's
/// median center joins it. Far queries are held back; once
/// [`MIN_NEW_BATCH`] of them lie within the threshold of each other (and
/// away from every earlier batch center) they open a new batch. Held-back
/// points that never form a cluster are treated as outliers and stay with the
/// batch that was open when they arrived; those seen before the first batch
/// forms join it.
pub fn segment_stream<T: Real>(points: &[Vec<T>], sigma_hint: f64, multiplier: f64) -> Result<Vec<Segment>> {
    let d = points.first().map(Vec::len).ok_or(Error::Empty("query stream"))?;
    if !(sigma_hint > 0.0) {
        return Err(invalid("sigma_hint", "must be > 0"));
    }
    let thr = T::lit(multiplier * sigma_hint * (d as f64).sqrt());
    let dist = |a: &[T], b: &[T]| norm2(&sub(a, b));

    let mut closed: Vec<(Vec<usize>, Vec<T>)> = Vec::new();
    let mut open: Option<Open<T>> = None;
    // held-back far points: (stream index, index of the batch open at arrival)
    let mut pending: Vec<usize> = Vec::new();
    let mut outliers: Vec<(usize, usize)> = Vec::new();

    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        let Some(cur) = open.as_mut() else {
            pending.push(i);
            let near: Vec<usize> = pending.iter().copied().filter(|&j| dist(&points[j], p) <= thr).collect();
            if near.len() >= MIN_NEW_BATCH {
                outliers.extend(pending.iter().filter(|j| !near.contains(j)).map(|&j| (j, 0)));
                pending.clear();
                let pts = near.iter().map(|&j| points[j].clone()).collect();
                open = Some(Open::new(near, pts));
            }
            continue;
        };
        if dist(p, &cur.center) <= thr {
            cur.push_core(i, p);
            continue;
        }
        if closed.iter().any(|(_, c)| dist(p, c) <= thr) {
            outliers.push((i, closed.len()));
            continue;
        }
        pending.push(i);
        let near: Vec<usize> = pending.iter().copied().filter(|&j| dist(&points[j], p) <= thr).collect();
        if near.len() >= MIN_NEW_BATCH {
            let first = near[0];
            let prev = open.take().expect("open batch");
            let batch_no = closed.len();
            for &j in pending.iter().filter(|j| !near.contains(j)) {
                outliers.push((j, if j < first { batch_no } else { batch_no + 1 }));
            }
            pending.clear();
            closed.push((prev.members, prev.center));
            let pts = near.iter().map(|&j| points[j].clone()).collect();
            open = Some(Open::new(near, pts));
        }
    }
    let n_before = closed.len();
    for j in pending {
        outliers.push((j, n_before));
    }
    match open {
        Some(o) => closed.push((o.members, o.center)),
        None => {
            let all: Vec<usize> = outliers.drain(..).map(|(j, _)| j).collect();
            closed.push((all, Vec::new()));
        }
    }
    let mut segs: Vec<Segment> = closed.into_iter().map(|(m, _)| Segment { indices: m }).collect();
    let last = segs.len() - 1;
    for (j, b) in outliers {
        segs[b.min(last)].indices.push(j);
    }
    for s in &mut segs {
        s.indices.sort_unstable();
    }
    Ok(segs)
}

/// Batch label for each stream position.
pub fn labels_from_segments(segments: &[Segment], n: usize) -> Vec<usize> {
    let mut out = vec![usize::MAX; n];
    for (b, s) in segments.iter().enumerate() {
        for &i in &s.indices {
            out[i] = b;
        }
    }
    out
}

/// Fraction of points whose segment index equals their true iteration index.
pub fn assignment_accuracy(segments: &[Segment], truth: &[usize]) -> f64 {
    let labels = labels_from_segments(segments, truth.len());
    let base = truth.iter().copied().min().unwrap_or(0);
    let hits = labels.iter().zip(truth).filter(|(&l, &t)| l == t - base).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Within-group over between-group sum of squares for labelled points.
pub fn ssw_ssb_ratio<T: Real>(points: &[Vec<T>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), got: labels.len() });
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<&Vec<T>>> = Default::default();
    for (p, &l) in points.iter().zip(labels) {
        groups.entry(l).or_default().push(p);
    }
    if groups.len() < 2 {
        return Err(invalid("batches", "need at least two groups"));
    }
    let d = points[0].len();
    let mean_of = |ps: &[&Vec<T>]| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for p in ps {
            m.iter_mut().zip(p.iter()).for_each(|(a, v)| *a += v.as_f64());
        }
        m.iter().map(|v| v / ps.len() as f64).collect()
    };
    let all: Vec<&Vec<T>> = points.iter().collect();
    let grand = mean_of(&all);
    let (mut ssw, mut ssb) = (0.0, 0.0);
    for ps in groups.values() {
        let c = mean_of(ps);
        for p in ps {
            ssw += p.iter().zip(&c).map(|(v, m)| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        ssb += ps.len() as f64 * c.iter().zip(&grand).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(if ssb == 0.0 { f64::INFINITY } else { ssw / ssb })
}

/// Monte Carlo estimate of `E‖⟨g,u⟩u‖² / ‖g‖²` for a random fixed `g`.
pub fn estimate_s_constant(d: usize, n_samples: usize, seed: u64) -> Result<f64> {
    estimate_s_constant_scaled(d, n_samples, seed, 1.0)
}

/// As [`estimate_s_constant`] with `g` multiplied by `scale`.
pub fn estimate_s_constant_scaled(d: usize, n_samples: usize, seed: u64, scale: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "must be >= 1"));
    }
    if n_samples == 0 {
        return Err(Error::Empty("samples"));
    }
    let mut rng = rng_for(seed, 0x5D);
    let g: Vec<f64> = normal_vec::<f64, _>(&mut rng, d).into_iter().map(|v| v * scale).collect();
    let gg = dot(&g, &g);
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let u: Vec<f64> = normal_vec(&mut rng, d);
        let s = dot(&g, &u);
        acc += s * s * dot(&u, &u);
    }
    Ok(acc / n_samples as f64 / gg)
}

/// Parameters of a synthetic attack-like stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSpec {
    pub d: usize,
    pub n_iter: usize,
    pub per_iter: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub p_fake: f64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec { d: 32, n_iter: 10, per_iter: 100, sigma: 0.001, alpha: 0.01, p_fake: 0.0 }
    }
}

/// Centers walk by `±α` per coordinate each iteration; each iteration emits
/// `per_iter` points `c + σu` interleaved with uniform fakes at rate `p_fake`.
/// The walk starts at the box center and is not clipped.
pub fn synthetic_stream(spec: &StreamSpec, seed: u64) -> QueryStream<f64> {
    let mut rng = rng_for(seed, 0x57);
    let domain = DomainBox::default();
    let mut c = vec![domain.center(); spec.d];
    let mut points = Vec::new();
    let mut iters = Vec::new();
    let n_fake = (spec.p_fake * spec.per_iter as f64).floor() as usize;
    for it in 0..spec.n_iter {
        if it > 0 {
            for v in c.iter_mut() {
                *v += if rand::Rng::random::<bool>(&mut rng) { spec.alpha } else { -spec.alpha };
            }
        }
        let mut batch: Vec<Vec<f64>> = (0..spec.per_iter - n_fake)
            .map(|_| c.iter().zip(normal_vec::<f64, _>(&mut rng, spec.d)).map(|(a, u)| a + spec.sigma * u).collect())
            .collect();
        for _ in 0..n_fake {
            batch.push((0..spec.d).map(|_| uniform_in(&mut rng, domain.lo, domain.hi)).collect());
        }
        rand::seq::SliceRandom::shuffle(batch.as_mut_slice(), &mut rng);
        iters.extend(std::iter::repeat_n(it, batch.len()));
        points.extend(batch);
    }
    QueryStream { points, iterations: Some(iters) }
}

#[derive(Serialize, Deserialize)]
struct StreamLine {
    x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
}

/// One JSON object per line: `{"x": [...], "iteration": n}`.
pub fn write_stream<W: Write>(stream: &QueryStream<f64>, mut w: W) -> Result<()> {
    for (i, p) in stream.points.iter().enumerate() {
        let line = StreamLine { x: p.clone(), iteration: stream.iterations.as_ref().map(|v| v[i]) };
        writeln!(w, "{}", serde_json::to_string(&line).map_err(|e| Error::StreamFormat(e.to_string()))?)?;
    }
    Ok(())
}

pub fn read_stream<R: BufRead>(r: R) -> Result<QueryStream<f64>> {
    let mut points = Vec::new();
    let mut iters = Vec::new();
    let mut all_labelled = true;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamLine =
            serde_json::from_str(&line).map_err(|e| Error::StreamFormat(format!("line {}: {e}", n + 1)))?;
        match rec.iteration {
            Some(i) => iters.push(i),
            None => all_labelled = false,
        }
        points.push(rec.x);
    }
    if points.is_empty() {
        return Err(Error::Empty("query stream"));
    }
    Ok(QueryStream { points, iterations: all_labelled.then_some(iters) })
}
