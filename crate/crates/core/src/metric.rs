//! Metric instances over trials, axiom validation, aspect ratio and binning.
//!
//! Trials are identified by 1-based [`TrialId`]s in arrival order. An instance
//! either carries explicit Euclidean contexts (distances are computed on
//! demand) or a distance matrix. Every constructor rescales so that the
//! diameter is at most 1.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// 1-based trial index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialId(u32);

impl TrialId {
    pub const FIRST: TrialId = TrialId(1);

    pub fn new(number: usize) -> Self {
        assert!(number >= 1, "trial ids start at 1");
        TrialId(u32::try_from(number).expect("trial id fits in u32"))
    }

    pub fn from_idx(idx: usize) -> Self {
        Self::new(idx + 1)
    }

    /// The 1-based number.
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// The 0-based position.
    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    pub fn prev(self) -> Option<TrialId> {
        (self.0 > 1).then(|| TrialId(self.0 - 1))
    }
}

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Iterates `1..=n` as trial ids.
pub fn trials(n: usize) -> impl DoubleEndedIterator<Item = TrialId> + Clone {
    (1..=n).map(TrialId::new)
}

/// Source of pairwise trial distances.
///
/// Agents call [`DistanceOracle::begin_trial`] when trial `t` starts so that
/// wrappers can check that only revealed distances are read.
pub trait DistanceOracle<F: Scalar> {
    fn num_trials(&self) -> usize;

    fn dist(&self, s: TrialId, t: TrialId) -> F;

    fn begin_trial(&self, _t: TrialId) {}
}

impl<F: Scalar, D: DistanceOracle<F> + ?Sized> DistanceOracle<F> for &D {
    fn num_trials(&self) -> usize {
        (**self).num_trials()
    }

    fn dist(&self, s: TrialId, t: TrialId) -> F {
        (**self).dist(s, t)
    }

    fn begin_trial(&self, t: TrialId) {
        (**self).begin_trial(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Geometry<F> {
    /// Row-major contexts, `dim` coordinates per trial.
    Points { dim: usize, coords: Vec<F> },
    /// Strict lower triangle: entry for `s < t` (0-based) at `t*(t-1)/2 + s`.
    Lower(Vec<F>),
    /// Full `T x T` matrix, possibly violating the axioms (only for validation).
    Full(Vec<F>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricInstance<F> {
    trials: usize,
    actions: usize,
    geometry: Geometry<F>,
}

impl<F: Scalar> MetricInstance<F> {
    /// Euclidean instance. Contexts are scaled down by the diameter when it exceeds 1.
    pub fn from_points(points: &[Vec<F>], actions: usize) -> Result<Self> {
        check_sizes(points.len(), actions)?;
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(invalid("contexts must share a positive dimension"));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("contexts must be finite"));
        }
        let coords: Vec<F> = points.iter().flatten().copied().collect();
        let mut inst = MetricInstance {
            trials: points.len(),
            actions,
            geometry: Geometry::Points { dim, coords },
        };
        let original = inst.geometry.clone();
        let mut diameter = inst.diameter();
        let mut divisor = diameter;
        // Rounding in the recomputed norms can leave the diameter a few ulps above 1.
        while diameter > F::one() {
            inst.geometry = original.clone();
            if let Geometry::Points { coords, .. } = &mut inst.geometry {
                coords.iter_mut().for_each(|x| *x = *x / divisor);
            }
            diameter = inst.diameter();
            divisor = divisor * (F::one() + F::epsilon() * F::lit(4.0));
        }
        Ok(inst)
    }

    /// Euclidean instance whose contexts are already known to have diameter at most 1.
    pub(crate) fn from_points_unscaled(coords: Vec<F>, dim: usize, actions: usize) -> Self {
        MetricInstance {
            trials: coords.len() / dim,
            actions,
            geometry: Geometry::Points { dim, coords },
        }
    }

    /// Instance from lower-triangle rows: row `t` (1-based) holds `dist(t, 1..=t)`.
    pub fn from_lower_rows(rows: &[Vec<F>], actions: usize) -> Result<Self> {
        check_sizes(rows.len(), actions)?;
        let mut lower = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(invalid(format!("row {} has {} entries", i + 1, row.len())));
            }
            lower.extend_from_slice(&row[..i]);
        }
        let mut inst = MetricInstance {
            trials: rows.len(),
            actions,
            geometry: Geometry::Lower(lower),
        };
        inst.rescale_matrix();
        Ok(inst)
    }

    /// Instance from a full square matrix. Axioms are not enforced here.
    pub fn from_full_matrix(rows: &[Vec<F>], actions: usize) -> Result<Self> {
        check_sizes(rows.len(), actions)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("matrix must be square"));
        }
        let mut inst = MetricInstance {
            trials: n,
            actions,
            geometry: Geometry::Full(rows.iter().flatten().copied().collect()),
        };
        inst.rescale_matrix();
        Ok(inst)
    }

    fn rescale_matrix(&mut self) {
        let max = match &self.geometry {
            Geometry::Lower(v) | Geometry::Full(v) => {
                v.iter().copied().fold(F::zero(), |a, b| a.max(b))
            }
            Geometry::Points { .. } => return,
        };
        if max > F::one() {
            if let Geometry::Lower(v) | Geometry::Full(v) = &mut self.geometry {
                v.iter_mut().for_each(|x| *x = *x / max);
            }
        }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn with_actions(mut self, actions: usize) -> Self {
        self.actions = actions;
        self
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.geometry {
            Geometry::Points { dim, .. } => Some(*dim),
            _ => None,
        }
    }

    /// Context of trial `t`, when the instance is Euclidean.
    pub fn context(&self, t: TrialId) -> Option<&[F]> {
        match &self.geometry {
            Geometry::Points { dim, coords } => Some(&coords[t.idx() * dim..(t.idx() + 1) * dim]),
            _ => None,
        }
    }

    pub fn contexts(&self) -> Option<Vec<Vec<F>>> {
        let dim = self.dim()?;
        match &self.geometry {
            Geometry::Points { coords, .. } => Some(coords.chunks(dim).map(<[F]>::to_vec).collect()),
            _ => None,
        }
    }

    pub fn diameter(&self) -> F {
        let mut max = F::zero();
        for t in trials(self.trials) {
            for s in trials(t.get() - 1) {
                max = max.max(self.dist(s, t));
            }
        }
        max
    }

    /// Sub-instance on `kept` (in the given order), renumbered `1..=kept.len()`.
    pub fn restrict(&self, kept: &[TrialId]) -> Result<Self> {
        check_sizes(kept.len(), self.actions)?;
        let geometry = match &self.geometry {
            Geometry::Points { dim, coords } => Geometry::Points {
                dim: *dim,
                coords: kept
                    .iter()
                    .flat_map(|t| coords[t.idx() * dim..(t.idx() + 1) * dim].iter().copied())
                    .collect(),
            },
            Geometry::Lower(_) => {
                let mut lower = Vec::new();
                for (i, &t) in kept.iter().enumerate() {
                    lower.extend(kept[..i].iter().map(|&s| self.dist(s, t)));
                }
                Geometry::Lower(lower)
            }
            Geometry::Full(_) => {
                let mut full = Vec::with_capacity(kept.len() * kept.len());
                for &s in kept {
                    full.extend(kept.iter().map(|&t| self.dist(s, t)));
                }
                Geometry::Full(full)
            }
        };
        Ok(MetricInstance {
            trials: kept.len(),
            actions: self.actions,
            geometry,
        })
    }

    /// Converts the scalar type (for example to run the same instance in `f32`).
    pub fn cast<G: Scalar>(&self) -> MetricInstance<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::lit(x.to_f64_lossy())).collect();
        let geometry = match &self.geometry {
            Geometry::Points { dim, coords } => Geometry::Points {
                dim: *dim,
                coords: conv(coords),
            },
            Geometry::Lower(v) => Geometry::Lower(conv(v)),
            Geometry::Full(v) => Geometry::Full(conv(v)),
        };
        MetricInstance {
            trials: self.trials,
            actions: self.actions,
            geometry,
        }
    }
}

fn check_sizes(trials: usize, actions: usize) -> Result<()> {
    if trials == 0 {
        return Err(invalid("an instance needs at least one trial"));
    }
    if actions == 0 {
        return Err(invalid("an instance needs at least one action"));
    }
    Ok(())
}

impl<F: Scalar> DistanceOracle<F> for MetricInstance<F> {
    fn num_trials(&self) -> usize {
        self.trials
    }

    fn dist(&self, s: TrialId, t: TrialId) -> F {
        match &self.geometry {
            Geometry::Points { dim, coords } => {
                let a = &coords[s.idx() * dim..(s.idx() + 1) * dim];
                let b = &coords[t.idx() * dim..(t.idx() + 1) * dim];
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .fold(F::zero(), |acc, v| acc + v)
                    .sqrt()
            }
            Geometry::Lower(lower) => {
                let (lo, hi) = if s <= t { (s.idx(), t.idx()) } else { (t.idx(), s.idx()) };
                if lo == hi {
                    F::zero()
                } else {
                    lower[hi * (hi - 1) / 2 + lo]
                }
            }
            Geometry::Full(full) => full[s.idx() * self.trials + t.idx()],
        }
    }
}

/// One failed axiom together with the trials witnessing it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "axiom", rename_all = "snake_case")]
pub enum Violation {
    Range { s: TrialId, t: TrialId, value: f64 },
    Symmetry { s: TrialId, t: TrialId, forward: f64, backward: f64 },
    Diagonal { t: TrialId, value: f64 },
    Triangle { r: TrialId, s: TrialId, t: TrialId, excess: f64 },
    Euclidean { s: TrialId, t: TrialId, dist: f64, norm: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks range, symmetry, zero diagonal and the triangle inequality over all
/// pairs and triples, with slack [`Scalar::axiom_tol`]. Cubic in the number of trials.
pub fn validate_metric<F: Scalar, D: DistanceOracle<F> + ?Sized>(oracle: &D) -> ValidationReport {
    let n = oracle.num_trials();
    let tol = F::axiom_tol();
    let mut violations = Vec::new();
    for s in trials(n) {
        for t in trials(n) {
            let d = oracle.dist(s, t);
            if s == t {
                if d.abs() > tol {
                    violations.push(Violation::Diagonal { t, value: d.to_f64_lossy() });
                }
                continue;
            }
            if !(d >= -tol && d <= F::one() + tol) {
                violations.push(Violation::Range { s, t, value: d.to_f64_lossy() });
            }
            if s < t {
                let back = oracle.dist(t, s);
                if (d - back).abs() > tol {
                    violations.push(Violation::Symmetry {
                        s,
                        t,
                        forward: d.to_f64_lossy(),
                        backward: back.to_f64_lossy(),
                    });
                }
            }
        }
    }
    for r in trials(n) {
        for s in trials(n) {
            let rs = oracle.dist(r, s);
            for t in trials(n) {
                let excess = oracle.dist(r, t) - (rs + oracle.dist(s, t));
                if excess > tol {
                    violations.push(Violation::Triangle { r, s, t, excess: excess.to_f64_lossy() });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Adds Euclidean-consistency checks against explicit contexts.
pub fn validate_instance<F: Scalar>(inst: &MetricInstance<F>) -> ValidationReport {
    let mut report = validate_metric(inst);
    if inst.dim().is_some() {
        for t in trials(inst.trials()) {
            for s in trials(t.get() - 1) {
                let (a, b) = (inst.context(s).unwrap(), inst.context(t).unwrap());
                let norm = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| ((x - y) * (x - y)).to_f64_lossy())
                    .sum::<f64>()
                    .sqrt();
                let dist = inst.dist(s, t).to_f64_lossy();
                if (dist - norm).abs() > F::axiom_tol().to_f64_lossy() {
                    report.violations.push(Violation::Euclidean { s, t, dist, norm });
                }
            }
        }
    }
    report
}

/// Minimum distance over distinct trials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AspectRatio<F> {
    pub delta: F,
    pub witness: (TrialId, TrialId),
}

pub fn aspect_ratio<F: Scalar, D: DistanceOracle<F> + ?Sized>(oracle: &D) -> Result<AspectRatio<F>> {
    let n = oracle.num_trials();
    if n < 2 {
        return Err(invalid("aspect ratio needs two trials"));
    }
    let mut best: Option<AspectRatio<F>> = None;
    for t in trials(n) {
        for s in trials(t.get() - 1) {
            let d = oracle.dist(s, t);
            if d <= F::zero() {
                return Err(Error::ZeroDistancePair(s, t));
            }
            if best.is_none_or(|b| d < b.delta) {
                best = Some(AspectRatio { delta: d, witness: (s, t) });
            }
        }
    }
    Ok(best.expect("at least one pair"))
}

/// Result of sequential binning: kept trials in arrival order and a
/// representative for every trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binning {
    pub kept: Vec<TrialId>,
    pub representative: Vec<TrialId>,
}

impl Binning {
    pub fn rep(&self, t: TrialId) -> TrialId {
        self.representative[t.idx()]
    }
}

/// Maps each trial to the earliest kept trial closer than `epsilon`, keeping it otherwise.
pub fn dedup_bin<F: Scalar, D: DistanceOracle<F> + ?Sized>(oracle: &D, epsilon: F) -> Result<Binning> {
    if !(epsilon > F::zero()) {
        return Err(invalid("binning radius must be positive"));
    }
    let mut kept: Vec<TrialId> = Vec::new();
    let mut representative = Vec::with_capacity(oracle.num_trials());
    for t in trials(oracle.num_trials()) {
        match kept.iter().find(|&&s| oracle.dist(s, t) < epsilon) {
            Some(&s) => representative.push(s),
            None => {
                kept.push(t);
                representative.push(t);
            }
        }
    }
    Ok(Binning { kept, representative })
}

/// Reads either a contexts file (header `trial,x1,...,xd`) or a distance
/// matrix (lower-triangle rows, or full square rows). Matrices that fail
/// [`validate_metric`] are rejected.
pub fn read_metric_csv<F: Scalar, R: Read>(reader: R, actions: usize) -> Result<MetricInstance<F>> {
    let (inst, lines) = parse_metric_rows(reader, actions)?;
    if inst.dim().is_some() {
        return Ok(inst);
    }
    let report = validate_metric(&inst);
    if let Some(v) = report.violations.first() {
        let t = match v {
            Violation::Range { s, t, .. } | Violation::Symmetry { s, t, .. } => (*s).max(*t),
            Violation::Diagonal { t, .. } => *t,
            Violation::Triangle { r, s, t, .. } => (*r).max(*s).max(*t),
            Violation::Euclidean { s, t, .. } => (*s).max(*t),
        };
        return Err(Error::Parse {
            line: lines[t.idx()],
            message: format!("metric axiom violated: {v:?}"),
        });
    }
    Ok(inst)
}

/// Like [`read_metric_csv`] but leaves axiom checking to the caller.
pub fn parse_metric_csv<F: Scalar, R: Read>(reader: R, actions: usize) -> Result<MetricInstance<F>> {
    parse_metric_rows(reader, actions).map(|(inst, _)| inst)
}

fn parse_metric_rows<F: Scalar, R: Read>(reader: R, actions: usize) -> Result<(MetricInstance<F>, Vec<u64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(u64, csv::StringRecord)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((rec.position().map_or(0, |p| p.line()), rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(Error::Parse { line: 1, message: "empty file".into() });
    };
    let lines = rows.iter().map(|(l, _)| *l).collect();
    let inst = if first.get(0) == Some("trial") {
        parse_contexts(&rows, actions)?
    } else {
        parse_matrix(&rows, actions)?
    };
    Ok((inst, lines))
}

fn parse_value<F: Scalar>(field: &str, line: u64) -> Result<F> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(F::lit)
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("cannot parse `{field}` as a number"),
        })
}

fn parse_contexts<F: Scalar>(rows: &[(u64, csv::StringRecord)], actions: usize) -> Result<MetricInstance<F>> {
    let dim = rows[0].1.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Parse { line: rows[0].0, message: "no coordinate columns".into() });
    }
    let mut points = Vec::with_capacity(rows.len() - 1);
    for (i, (line, rec)) in rows[1..].iter().enumerate() {
        let line = *line;
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", dim + 1, rec.len()),
            });
        }
        if rec[0].parse::<usize>().ok() != Some(i + 1) {
            return Err(Error::Parse {
                line,
                message: format!("expected trial {}, found `{}`", i + 1, &rec[0]),
            });
        }
        let p = rec.iter().skip(1).map(|f| parse_value(f, line)).collect::<Result<Vec<F>>>()?;
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Parse { line: rows[0].0, message: "no trials".into() });
    }
    MetricInstance::from_points(&points, actions)
}

fn parse_matrix<F: Scalar>(rows: &[(u64, csv::StringRecord)], actions: usize) -> Result<MetricInstance<F>> {
    let n = rows.len();
    let full = rows.iter().all(|(_, r)| r.len() == n) && n > 1;
    let mut values = Vec::with_capacity(n);
    for (i, (line, rec)) in rows.iter().enumerate() {
        let expected = if full { n } else { i + 1 };
        if rec.len() != expected {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {expected} fields, found {}", rec.len()),
            });
        }
        values.push(rec.iter().map(|f| parse_value(f, *line)).collect::<Result<Vec<F>>>()?);
    }
    if full {
        MetricInstance::from_full_matrix(&values, actions)
    } else {
        MetricInstance::from_lower_rows(&values, actions)
    }
}

/// Writes contexts as `trial,x1,...,xd`, or the lower triangle for matrix instances.
pub fn write_metric_csv<F: Scalar>(inst: &MetricInstance<F>) -> String {
    let mut out = String::new();
    match inst.dim() {
        Some(dim) => {
            out.push_str("trial");
            for k in 1..=dim {
                out.push_str(&format!(",x{k}"));
            }
            out.push('\n');
            for t in trials(inst.trials()) {
                out.push_str(&t.to_string());
                for x in inst.context(t).unwrap() {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
        None => {
            for t in trials(inst.trials()) {
                let row: Vec<String> = trials(t.get()).map(|s| inst.dist(s, t).to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> MetricInstance<f64> {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        MetricInstance::from_points(&pts, 2).unwrap()
    }

    #[test]
    fn single_point_is_valid() {
        assert!(validate_metric(&line(&[0.0])).is_valid());
    }

    #[test]
    fn collinear_points_are_valid() {
        assert!(validate_instance(&line(&[0.0, 0.3, 0.9])).is_valid());
    }

    #[test]
    fn asymmetric_entry_reported() {
        let rows = vec![vec![0.0, 0.9, 0.2], vec![0.5, 0.0, 0.1], vec![0.2, 0.1, 0.0]];
        let inst = MetricInstance::from_full_matrix(&rows, 2).unwrap();
        let report = validate_metric(&inst);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::Symmetry { s, t, .. } if *s == TrialId::new(1) && *t == TrialId::new(2)
        )));
    }

    #[test]
    fn aspect_ratio_examples() {
        let ar = aspect_ratio(&line(&[0.0, 0.3, 0.9])).unwrap();
        assert!((ar.delta - 0.3).abs() < 1e-12);
        let ar = aspect_ratio(&line(&[0.0, 1.0])).unwrap();
        assert_eq!(ar.delta, 1.0);
        assert!(matches!(
            aspect_ratio(&line(&[0.0, 0.3, 0.3])),
            Err(Error::ZeroDistancePair(s, t)) if s.get() == 2 && t.get() == 3
        ));
    }

    #[test]
    fn dedup_examples() {
        let inst = line(&[0.0, 0.05, 0.5]);
        let b = dedup_bin(&inst, 0.1).unwrap();
        assert_eq!(b.kept, vec![TrialId::new(1), TrialId::new(3)]);
        assert_eq!(b.representative, vec![TrialId::new(1), TrialId::new(1), TrialId::new(3)]);

        let b = dedup_bin(&inst, 0.01).unwrap();
        assert_eq!(b.kept.len(), 3);

        let b = dedup_bin(&inst, 1.1).unwrap();
        assert_eq!(b.kept, vec![TrialId::new(1)]);
        assert!(b.representative.iter().all(|&r| r == TrialId::new(1)));

        assert!(dedup_bin(&inst, 0.0).is_err());
    }

    #[test]
    fn large_diameter_is_rescaled() {
        let inst = line(&[0.0, 2.0, 4.0]);
        assert!((inst.dist(TrialId::new(1), TrialId::new(3)) - 1.0).abs() < 1e-15);
        assert!((inst.dist(TrialId::new(1), TrialId::new(2)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lower_triangle_lookup_is_symmetric() {
        let rows = vec![vec![0.0], vec![0.4, 0.0], vec![0.7, 0.3, 0.0]];
        let inst = MetricInstance::from_lower_rows(&rows, 1).unwrap();
        let (a, b, c) = (TrialId::new(1), TrialId::new(2), TrialId::new(3));
        assert_eq!(inst.dist(c, a), 0.7);
        assert_eq!(inst.dist(a, c), 0.7);
        assert_eq!(inst.dist(b, c), 0.3);
        assert_eq!(inst.dist(b, b), 0.0);
        let sub = inst.restrict(&[a, c]).unwrap();
        assert_eq!(sub.dist(TrialId::new(1), TrialId::new(2)), 0.7);
    }

    #[test]
    fn csv_contexts_and_matrix() {
        let text = "trial,x1,x2\n1,0,0\n2,0.3,0.4\n3,0.1,0.1\n";
        let inst: MetricInstance<f64> = read_metric_csv(text.as_bytes(), 2).unwrap();
        assert!((inst.dist(TrialId::new(1), TrialId::new(2)) - 0.5).abs() < 1e-12);
        let again: MetricInstance<f64> = read_metric_csv(write_metric_csv(&inst).as_bytes(), 2).unwrap();
        assert_eq!(again, inst);

        let bad = "0,0.9,0.2\n0.5,0,0.1\n0.2,0.1,0\n";
        match read_metric_csv::<f64, _>(bad.as_bytes(), 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let lower = "0\n0.4,0\n0.7,0.3,0\n";
        let inst: MetricInstance<f64> = read_metric_csv(lower.as_bytes(), 1).unwrap();
        assert_eq!(write_metric_csv(&inst), lower);

        let typo = "trial,x1\n1,0\n2,abc\n";
        assert!(matches!(
            read_metric_csv::<f64, _>(typo.as_bytes(), 1),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
