//! Weighted phone-level Levenshtein distance.
//!
//! The distance between a wake word `w` (length `N`) and a candidate is
//!
//! ```text
//! L = (s·S + d·D + i·I) / N
//! ```
//!
//! where `S`, `D` and `I` are the substitution, deletion and insertion masses
//! of the cheapest edit script turning `w` into the candidate. Under the
//! unweighted and simple models every operation has unit weight, so the
//! masses are plain counts; the advanced model looks per-phone weights up in a
//! [`WeightTable`] and multiplies them by the matching scale factor.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::lexicon::{Phone, PhoneSeq, WakeWordSpec};
use crate::weights::WeightTable;

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("wake word has no phones")]
    EmptyWakeWord,
    #[error("candidate has no pronunciation")]
    NoPronunciation,
    #[error("invalid scale factor {name}={value}: must be finite and non-negative")]
    InvalidScale { name: &'static str, value: f64 },
    #[error("the unweighted model uses unit scales and no weight table")]
    UnweightedScales,
}

/// Per-operation scale factors `s`, `d`, `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactors {
    pub sub: f64,
    pub del: f64,
    pub ins: f64,
}

impl ScaleFactors {
    pub const UNIT: ScaleFactors = ScaleFactors { sub: 1.0, del: 1.0, ins: 1.0 };

    pub fn new(sub: f64, del: f64, ins: f64) -> Result<ScaleFactors, DistanceError> {
        for (name, value) in [("s", sub), ("d", del), ("i", ins)] {
            if !value.is_finite() || value < 0.0 {
                return Err(DistanceError::InvalidScale { name, value });
            }
        }
        Ok(ScaleFactors { sub, del, ins })
    }
}

impl fmt::Display for ScaleFactors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s={} d={} i={}", self.sub, self.del, self.ins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Unweighted,
    Simple,
    Advanced,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Unweighted => "unweighted",
            Variant::Simple => "simple",
            Variant::Advanced => "advanced",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unweighted" => Ok(Variant::Unweighted),
            "simple" => Ok(Variant::Simple),
            "advanced" => Ok(Variant::Advanced),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

/// A distance model: variant, scale factors and (for `Advanced`) the weight table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    variant: Variant,
    scales: ScaleFactors,
    table: Option<Arc<WeightTable>>,
}

impl CostModel {
    pub fn unweighted() -> CostModel {
        CostModel { variant: Variant::Unweighted, scales: ScaleFactors::UNIT, table: None }
    }

    pub fn simple(scales: ScaleFactors) -> CostModel {
        CostModel { variant: Variant::Simple, scales, table: None }
    }

    pub fn advanced(scales: ScaleFactors, table: Arc<WeightTable>) -> CostModel {
        CostModel { variant: Variant::Advanced, scales, table: Some(table) }
    }

    /// Builds a model of the given variant; `table` is required for `Advanced`
    /// and ignored otherwise. `Unweighted` rejects non-unit scales.
    pub fn from_parts(
        variant: Variant,
        scales: ScaleFactors,
        table: Option<Arc<WeightTable>>,
    ) -> Result<CostModel, String> {
        match variant {
            Variant::Unweighted if scales != ScaleFactors::UNIT => Err(DistanceError::UnweightedScales.to_string()),
            Variant::Unweighted => Ok(CostModel::unweighted()),
            Variant::Simple => Ok(CostModel::simple(scales)),
            Variant::Advanced => table
                .map(|t| CostModel::advanced(scales, t))
                .ok_or_else(|| "the advanced model needs a weight table".to_string()),
        }
    }

    /// Same variant and table with different scales. Unweighted models become simple.
    pub fn with_scales(&self, scales: ScaleFactors) -> CostModel {
        match self.variant {
            Variant::Advanced => CostModel { scales, ..self.clone() },
            _ => CostModel::simple(scales),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn scales(&self) -> ScaleFactors {
        self.scales
    }

    pub fn table(&self) -> Option<&WeightTable> {
        self.table.as_deref()
    }

    fn weights(&self) -> Weights<'_> {
        Weights { table: self.table.as_deref() }
    }
}

impl fmt::Display for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.variant, self.scales)
    }
}

/// Per-phone weight lookup. Missing table entries fall back to 1.0 and report it.
#[derive(Clone, Copy)]
pub(crate) struct Weights<'a> {
    table: Option<&'a WeightTable>,
}

impl<'a> Weights<'a> {
    pub(crate) fn new(table: Option<&'a WeightTable>) -> Weights<'a> {
        Weights { table }
    }

    #[inline]
    pub(crate) fn sub(&self, from: Phone, to: Phone) -> (f64, bool) {
        match self.table {
            None => (1.0, false),
            Some(t) => t.substitution_weight(from, to).map_or((1.0, true), |w| (w, false)),
        }
    }

    #[inline]
    pub(crate) fn del(&self, p: Phone) -> (f64, bool) {
        match self.table {
            None => (1.0, false),
            Some(t) => t.deletion_weight(p).map_or((1.0, true), |w| (w, false)),
        }
    }

    #[inline]
    pub(crate) fn ins(&self, p: Phone) -> (f64, bool) {
        match self.table {
            None => (1.0, false),
            Some(t) => t.insertion_weight(p).map_or((1.0, true), |w| (w, false)),
        }
    }
}

/// One step of an edit script from the wake word to the candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match(Phone),
    Substitute(Phone, Phone),
    Delete(Phone),
    Insert(Phone),
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Match(p) => write!(f, "={p}"),
            EditOp::Substitute(p, q) => write!(f, "{p}>{q}"),
            EditOp::Delete(p) => write!(f, "-{p}"),
            EditOp::Insert(q) => write!(f, "+{q}"),
        }
    }
}

/// The result of aligning one candidate pronunciation against a wake word.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBreakdown {
    /// Normalized distance `L`.
    pub distance: f64,
    /// Weighted substitution mass `S`.
    pub sub_mass: f64,
    /// Weighted deletion mass `D`.
    pub del_mass: f64,
    /// Weighted insertion mass `I`.
    pub ins_mass: f64,
    pub sub_count: usize,
    pub del_count: usize,
    pub ins_count: usize,
    /// Wake-word phone count `N`.
    pub wake_len: usize,
    pub alignment: Vec<EditOp>,
    /// Number of weight lookups on the optimal script that fell back to 1.0.
    pub fallback_lookups: usize,
}

impl DistanceBreakdown {
    /// Replays the alignment against `wake`, returning the candidate it produces.
    pub fn replay(&self, wake: &[Phone]) -> Option<Vec<Phone>> {
        let mut src = wake.iter();
        let mut out = Vec::new();
        for op in &self.alignment {
            match *op {
                EditOp::Match(p) => {
                    (src.next()? == &p).then_some(())?;
                    out.push(p);
                }
                EditOp::Substitute(p, q) => {
                    (src.next()? == &p).then_some(())?;
                    out.push(q);
                }
                EditOp::Delete(p) => (src.next()? == &p).then_some(())?,
                EditOp::Insert(q) => out.push(q),
            }
        }
        src.next().is_none().then_some(out)
    }
}

#[derive(Clone, Copy)]
enum Back {
    Start,
    Diag,
    Up,
    Left,
}

/// Aligns `cand` against `wake` under `model` and returns the optimal breakdown.
///
/// Among equal-cost scripts the traceback prefers match/substitute, then
/// delete, then insert at every cell, so the alignment is deterministic.
pub fn align(wake: &[Phone], cand: &[Phone], model: &CostModel) -> Result<DistanceBreakdown, DistanceError> {
    if wake.is_empty() {
        return Err(DistanceError::EmptyWakeWord);
    }
    let weights = model.weights();
    let scales = model.scales;
    let (n, m) = (wake.len(), cand.len());
    let width = m + 1;
    let mut cost = vec![0.0f64; (n + 1) * width];
    let mut back = vec![Back::Start; (n + 1) * width];

    for j in 1..=m {
        cost[j] = cost[j - 1] + scales.ins * weights.ins(cand[j - 1]).0;
        back[j] = Back::Left;
    }
    for i in 1..=n {
        let row = i * width;
        let prev = row - width;
        let del = scales.del * weights.del(wake[i - 1]).0;
        cost[row] = cost[prev] + del;
        back[row] = Back::Up;
        for j in 1..=m {
            let diag_step =
                if wake[i - 1] == cand[j - 1] { 0.0 } else { scales.sub * weights.sub(wake[i - 1], cand[j - 1]).0 };
            let mut best = cost[prev + j - 1] + diag_step;
            let mut dir = Back::Diag;
            let up = cost[prev + j] + del;
            if up < best {
                best = up;
                dir = Back::Up;
            }
            let left = cost[row + j - 1] + scales.ins * weights.ins(cand[j - 1]).0;
            if left < best {
                best = left;
                dir = Back::Left;
            }
            cost[row + j] = best;
            back[row + j] = dir;
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    loop {
        match back[i * width + j] {
            Back::Start => break,
            Back::Diag => {
                let (p, q) = (wake[i - 1], cand[j - 1]);
                ops.push(if p == q { EditOp::Match(p) } else { EditOp::Substitute(p, q) });
                i -= 1;
                j -= 1;
            }
            Back::Up => {
                ops.push(EditOp::Delete(wake[i - 1]));
                i -= 1;
            }
            Back::Left => {
                ops.push(EditOp::Insert(cand[j - 1]));
                j -= 1;
            }
        }
    }
    ops.reverse();

    let mut bd = DistanceBreakdown {
        distance: cost[n * width + m] / n as f64,
        sub_mass: 0.0,
        del_mass: 0.0,
        ins_mass: 0.0,
        sub_count: 0,
        del_count: 0,
        ins_count: 0,
        wake_len: n,
        alignment: Vec::new(),
        fallback_lookups: 0,
    };
    for op in &ops {
        let fell_back = match *op {
            EditOp::Match(_) => false,
            EditOp::Substitute(p, q) => {
                let (w, fb) = weights.sub(p, q);
                bd.sub_count += 1;
                bd.sub_mass += w;
                fb
            }
            EditOp::Delete(p) => {
                let (w, fb) = weights.del(p);
                bd.del_count += 1;
                bd.del_mass += w;
                fb
            }
            EditOp::Insert(q) => {
                let (w, fb) = weights.ins(q);
                bd.ins_count += 1;
                bd.ins_mass += w;
                fb
            }
        };
        bd.fallback_lookups += usize::from(fell_back);
    }
    bd.alignment = ops;
    Ok(bd)
}

/// Distance only, using a rolling row. Produces exactly the `distance` field of [`align`].
pub fn distance(wake: &[Phone], cand: &[Phone], model: &CostModel) -> Result<f64, DistanceError> {
    if wake.is_empty() {
        return Err(DistanceError::EmptyWakeWord);
    }
    let mut row = Vec::with_capacity(cand.len() + 1);
    Ok(distance_with_buffer(wake, cand, model, &mut row))
}

pub(crate) fn distance_with_buffer(wake: &[Phone], cand: &[Phone], model: &CostModel, row: &mut Vec<f64>) -> f64 {
    let weights = model.weights();
    let scales = model.scales;
    let m = cand.len();
    row.clear();
    row.push(0.0);
    for j in 1..=m {
        let v = row[j - 1] + scales.ins * weights.ins(cand[j - 1]).0;
        row.push(v);
    }
    for &p in wake {
        let del = scales.del * weights.del(p).0;
        let mut diag_prev = row[0];
        row[0] += del;
        for j in 1..=m {
            let q = cand[j - 1];
            let diag_step = if p == q { 0.0 } else { scales.sub * weights.sub(p, q).0 };
            let mut best = diag_prev + diag_step;
            let up = row[j] + del;
            if up < best {
                best = up;
            }
            let left = row[j - 1] + scales.ins * weights.ins(q).0;
            if left < best {
                best = left;
            }
            diag_prev = row[j];
            row[j] = best;
        }
    }
    row[m] / wake.len() as f64
}

/// The best match of a candidate's pronunciations against one wake word.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDistance {
    /// 0-based index into the candidate's pronunciation list.
    pub pron_index: usize,
    pub breakdown: DistanceBreakdown,
}

/// Minimum-distance pronunciation of a candidate; ties go to the lowest index.
pub fn distance_to_wakeword(
    wake: &WakeWordSpec,
    prons: &[PhoneSeq],
    model: &CostModel,
) -> Result<CandidateDistance, DistanceError> {
    if prons.is_empty() {
        return Err(DistanceError::NoPronunciation);
    }
    let mut best: Option<CandidateDistance> = None;
    for (idx, pron) in prons.iter().enumerate() {
        let bd = align(&wake.phones, pron, model)?;
        if best.as_ref().is_none_or(|b| bd.distance < b.breakdown.distance) {
            best = Some(CandidateDistance { pron_index: idx, breakdown: bd });
        }
    }
    Ok(best.expect("non-empty"))
}

/// Minimum distance over pronunciations without building alignments.
pub fn min_distance(wake: &[Phone], prons: &[PhoneSeq], model: &CostModel) -> Result<f64, DistanceError> {
    if wake.is_empty() {
        return Err(DistanceError::EmptyWakeWord);
    }
    if prons.is_empty() {
        return Err(DistanceError::NoPronunciation);
    }
    let mut row = Vec::new();
    Ok(prons.iter().map(|p| distance_with_buffer(wake, p, model, &mut row)).fold(f64::INFINITY, f64::min))
}

/// The Pareto-minimal `(S, D, I)` mass triples over all edit scripts between two
/// phone strings.
///
/// Any model with the same weights reaches its optimum at one of these triples,
/// so distances for many scale settings can be read off without re-running the
/// dynamic program.
#[derive(Debug, Clone, PartialEq)]
pub struct EditProfile {
    triples: Vec<[f64; 3]>,
    wake_len: usize,
}

impl EditProfile {
    pub fn compute(wake: &[Phone], cand: &[Phone], table: Option<&WeightTable>) -> Result<EditProfile, DistanceError> {
        if wake.is_empty() {
            return Err(DistanceError::EmptyWakeWord);
        }
        let weights = Weights::new(table);
        let (n, m) = (wake.len(), cand.len());
        let width = m + 1;
        let mut cells: Vec<Vec<[f64; 3]>> = vec![Vec::new(); (n + 1) * width];
        cells[0].push([0.0; 3]);
        let mut scratch = Vec::new();
        for i in 0..=n {
            for j in 0..=m {
                if i == 0 && j == 0 {
                    continue;
                }
                scratch.clear();
                if i > 0 && j > 0 {
                    let (p, q) = (wake[i - 1], cand[j - 1]);
                    let w = if p == q { 0.0 } else { weights.sub(p, q).0 };
                    scratch.extend(cells[(i - 1) * width + j - 1].iter().map(|t| [t[0] + w, t[1], t[2]]));
                }
                if i > 0 {
                    let w = weights.del(wake[i - 1]).0;
                    scratch.extend(cells[(i - 1) * width + j].iter().map(|t| [t[0], t[1] + w, t[2]]));
                }
                if j > 0 {
                    let w = weights.ins(cand[j - 1]).0;
                    scratch.extend(cells[i * width + j - 1].iter().map(|t| [t[0], t[1], t[2] + w]));
                }
                cells[i * width + j] = pareto_front(&mut scratch);
            }
        }
        Ok(EditProfile { triples: std::mem::take(&mut cells[n * width + m]), wake_len: n })
    }

    /// `min over triples of (s·S + d·D + i·I) / N`.
    pub fn distance(&self, scales: ScaleFactors) -> f64 {
        self.triples
            .iter()
            .map(|t| scales.sub * t[0] + scales.del * t[1] + scales.ins * t[2])
            .fold(f64::INFINITY, f64::min)
            / self.wake_len as f64
    }

    pub fn triples(&self) -> &[[f64; 3]] {
        &self.triples
    }
}

fn pareto_front(points: &mut [[f64; 3]]) -> Vec<[f64; 3]> {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    let mut front: Vec<[f64; 3]> = Vec::new();
    for p in points.iter() {
        // sorted lexicographically, so no later point can dominate an earlier one
        let dominated = front.iter().any(|f| f[0] <= p[0] && f[1] <= p[1] && f[2] <= p[2]);
        if !dominated {
            front.push(*p);
        }
    }
    front
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Inventory;

    fn seq(s: &str) -> PhoneSeq {
        PhoneSeq::parse(s, &Inventory::arpabet()).unwrap()
    }

    fn paper_scales() -> ScaleFactors {
        ScaleFactors::new(1.46, 1.30, 0.24).unwrap()
    }

    #[test]
    fn identity_has_zero_distance() {
        let w = seq("AH L EH K S AH");
        for model in [CostModel::unweighted(), CostModel::simple(paper_scales())] {
            let bd = align(&w, &w, &model).unwrap();
            assert_eq!(bd.distance, 0.0);
            assert_eq!((bd.sub_count, bd.del_count, bd.ins_count), (0, 0, 0));
            assert!(bd.alignment.iter().all(|op| matches!(op, EditOp::Match(_))));
        }
    }

    #[test]
    fn single_insertion() {
        let bd = align(&seq("EH K OW"), &seq("G EH K OW"), &CostModel::unweighted()).unwrap();
        assert_eq!(bd.ins_count, 1);
        assert!((bd.distance - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bd.alignment[0], EditOp::Insert(seq("G")[0]));
    }

    #[test]
    fn alexa_vs_a_lesson() {
        let wake = seq("AH L EH K S AH");
        let cand = seq("AH L EH S AH N");
        let bd = align(&wake, &cand, &CostModel::unweighted()).unwrap();
        assert_eq!((bd.sub_count, bd.del_count, bd.ins_count), (0, 1, 1));
        assert!((bd.distance - 2.0 / 6.0).abs() < 1e-12);
        let bd = align(&wake, &cand, &CostModel::simple(paper_scales())).unwrap();
        assert!((bd.distance - (1.30 + 0.24) / 6.0).abs() < 1e-12);
        assert_eq!(bd.replay(&wake).unwrap(), cand.to_vec());
    }

    #[test]
    fn empty_wake_word_is_rejected() {
        assert_eq!(align(&[], &seq("K"), &CostModel::unweighted()), Err(DistanceError::EmptyWakeWord));
        assert_eq!(distance(&[], &seq("K"), &CostModel::unweighted()), Err(DistanceError::EmptyWakeWord));
    }

    #[test]
    fn empty_candidate_is_all_deletions() {
        let bd = align(&seq("EH K OW"), &[], &CostModel::unweighted()).unwrap();
        assert_eq!(bd.del_count, 3);
        assert_eq!(bd.distance, 1.0);
    }

    #[test]
    fn tie_prefers_substitution_then_deletion() {
        // s = d + i makes substitute and delete+insert equally cheap
        let model = CostModel::simple(ScaleFactors::new(1.0, 0.5, 0.5).unwrap());
        let bd = align(&seq("K"), &seq("G"), &model).unwrap();
        assert_eq!(bd.alignment, vec![EditOp::Substitute(seq("K")[0], seq("G")[0])]);
        // with s > d + i the script is delete + insert, in that order after traceback
        let model = CostModel::simple(ScaleFactors::new(2.0, 0.5, 0.5).unwrap());
        let bd = align(&seq("K"), &seq("G"), &model).unwrap();
        assert_eq!(bd.del_count + bd.ins_count, 2);
    }

    #[test]
    fn pronunciation_minimum_and_tie_break() {
        let wake = WakeWordSpec::new("VA3", "Echo", seq("EH K OW"), &[]);
        let r = distance_to_wakeword(&wake, &[seq("G EH K OW"), seq("EH K OW Z")], &CostModel::unweighted()).unwrap();
        assert_eq!(r.pron_index, 0);
        assert!((r.breakdown.distance - 1.0 / 3.0).abs() < 1e-12);

        let tomato = WakeWordSpec::new("X", "tomato", seq("T AH M EY T OW"), &[]);
        let r =
            distance_to_wakeword(&tomato, &[seq("T AH M EY T OW"), seq("T AH M AA T OW")], &CostModel::unweighted())
                .unwrap();
        assert_eq!((r.pron_index, r.breakdown.distance), (0, 0.0));
        assert_eq!(distance_to_wakeword(&tomato, &[], &CostModel::unweighted()), Err(DistanceError::NoPronunciation));
    }

    #[test]
    fn invalid_scales() {
        assert!(ScaleFactors::new(-0.1, 1.0, 1.0).is_err());
        assert!(ScaleFactors::new(1.0, f64::NAN, 1.0).is_err());
        assert!(CostModel::from_parts(Variant::Unweighted, paper_scales(), None).is_err());
        assert!(CostModel::from_parts(Variant::Advanced, paper_scales(), None).is_err());
    }

    #[test]
    fn profile_matches_dp_on_scales() {
        let wake = seq("AH L EH K S AH");
        let cand = seq("AH L EH S AH N");
        let profile = EditProfile::compute(&wake, &cand, None).unwrap();
        for s in [0.0, 0.3, 1.0, 1.46] {
            for d in [0.0, 0.5, 1.3] {
                for i in [0.0, 0.24, 1.0] {
                    let sc = ScaleFactors::new(s, d, i).unwrap();
                    let dp = distance(&wake, &cand, &CostModel::simple(sc)).unwrap();
                    assert!((profile.distance(sc) - dp).abs() < 1e-12, "{sc}");
                }
            }
        }
    }
}
