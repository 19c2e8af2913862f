//! Rank-based search for scale factors.
//!
//! For a wake word, every vocabulary candidate is sorted by distance; the
//! metric for a set of known triggers is the rank of the worst-placed one.
//! [`grid_search`] minimizes the sum of those worst ranks over all wake words.
//!
//! Ties need care: with all scales at zero every candidate has distance 0, so
//! a "ties share the best rank" convention would make the origin optimal for
//! any data. The tuning routines therefore rank ties pessimistically by
//! default ([`TieRank::Max`]); [`rank_of`] itself reports competition ranks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::candidates::{rank_candidates, Candidate, CandidateError, TIE_EPSILON};
use crate::distance::{min_distance, CostModel, DistanceError, EditProfile, ScaleFactors, Variant};
use crate::lexicon::{normalize_label, WakeWordSpec};
use crate::weights::WeightTable;

/// Default rank threshold of the trigger filter (1 % of a 50,000-word vocabulary).
pub const DEFAULT_FILTER_THRESHOLD: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum TuningError {
    #[error("label `{label}` is not in the vocabulary of wake word {wake}")]
    UnknownLabel { wake: String, label: String },
    #[error("unknown wake word `{0}`")]
    UnknownWake(String),
    #[error("no triggers to tune on")]
    NoTriggers,
    #[error("cross-validation needs at least two wake words, got {0}")]
    TooFewFolds(usize),
    #[error("invalid grid axis: {0}")]
    InvalidGrid(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Candidate(#[from] CandidateError),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for TuningError {
    fn from(err: std::io::Error) -> Self {
        TuningError::Io(err.to_string())
    }
}

/// How tied distances are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRank {
    /// Competition ranking: ties share the smallest rank of their class.
    Min,
    /// Ties share the largest rank of their class.
    #[default]
    Max,
}

impl FromStr for TieRank {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(TieRank::Min),
            "max" => Ok(TieRank::Max),
            other => Err(format!("unknown tie ranking `{other}` (min|max)")),
        }
    }
}

impl fmt::Display for TieRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieRank::Min => "min",
            TieRank::Max => "max",
        })
    }
}

/// Rank of distance `target` among `dists` (which include it).
pub fn rank_in(dists: &[f64], target: f64, tie: TieRank) -> usize {
    match tie {
        TieRank::Min => 1 + dists.iter().filter(|&&d| d < target - TIE_EPSILON).count(),
        TieRank::Max => dists.iter().filter(|&&d| d <= target + TIE_EPSILON).count(),
    }
}

/// Competition rank (1-based) of `label` in `vocab` under `model`.
pub fn rank_of(label: &str, vocab: &[Candidate], wake: &WakeWordSpec, model: &CostModel) -> Result<usize, TuningError> {
    rank_of_with(label, vocab, wake, model, TieRank::Min)
}

pub fn rank_of_with(
    label: &str,
    vocab: &[Candidate],
    wake: &WakeWordSpec,
    model: &CostModel,
    tie: TieRank,
) -> Result<usize, TuningError> {
    let label = normalize_label(label);
    let target = vocab
        .iter()
        .position(|c| c.label == label)
        .ok_or_else(|| TuningError::UnknownLabel { wake: wake.id.clone(), label: label.clone() })?;
    let dists = vocab.iter().map(|c| min_distance(&wake.phones, &c.prons, model)).collect::<Result<Vec<_>, _>>()?;
    Ok(rank_in(&dists, dists[target], tie))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Axis, TuningError> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || lo < 0.0 || lo > hi || step <= 0.0 {
            return Err(TuningError::InvalidGrid(format!("lo={lo} hi={hi} step={step}")));
        }
        Ok(Axis { lo, hi, step })
    }

    pub fn fixed(value: f64) -> Result<Axis, TuningError> {
        Axis::new(value, value, 1.0)
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Axis values `lo + k·step`, rounded to ten decimals.
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|k| ((self.lo + k as f64 * self.step) * 1e10).round() / 1e10).collect()
    }
}

impl FromStr for Axis {
    type Err = TuningError;

    /// `lo:hi:step`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| TuningError::InvalidGrid(format!("cannot parse axis `{s}`")))?;
        match parts.as_slice() {
            [lo, hi, step] => Axis::new(*lo, *hi, *step),
            [v] => Axis::fixed(*v),
            _ => Err(TuningError::InvalidGrid(format!("expected lo:hi:step, got `{s}`"))),
        }
    }
}

/// Cartesian grid over `(s, d, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub sub: Axis,
    pub del: Axis,
    pub ins: Axis,
}

impl Grid {
    pub fn uniform(axis: Axis) -> Grid {
        Grid { sub: axis, del: axis, ins: axis }
    }

    /// `[0, 1]` with step 0.05 on every axis: 21³ points.
    pub fn standard() -> Grid {
        Grid::uniform(Axis { lo: 0.0, hi: 1.0, step: 0.05 })
    }

    /// `[0, 1.5]` with step 0.05, wide enough to contain scales above 1.
    pub fn extended() -> Grid {
        Grid::uniform(Axis { lo: 0.0, hi: 1.5, step: 0.05 })
    }

    pub fn single(scales: ScaleFactors) -> Grid {
        Grid {
            sub: Axis { lo: scales.sub, hi: scales.sub, step: 1.0 },
            del: Axis { lo: scales.del, hi: scales.del, step: 1.0 },
            ins: Axis { lo: scales.ins, hi: scales.ins, step: 1.0 },
        }
    }

    /// `standard`, `extended`, or `lo:hi:step` applied to all three axes.
    pub fn preset(name: &str) -> Result<Grid, TuningError> {
        match name {
            "standard" | "default" => Ok(Grid::standard()),
            "extended" => Ok(Grid::extended()),
            other => Ok(Grid::uniform(other.parse()?)),
        }
    }

    pub fn len(&self) -> usize {
        self.sub.len() * self.del.len() * self.ins.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All points in lexicographic `(s, d, i)` order.
    pub fn points(&self) -> Vec<ScaleFactors> {
        let (sv, dv, iv) = (self.sub.values(), self.del.values(), self.ins.values());
        let mut out = Vec::with_capacity(self.len());
        for &s in &sv {
            for &d in &dv {
                for &i in &iv {
                    out.push(ScaleFactors { sub: s, del: d, ins: i });
                }
            }
        }
        out
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ax = |a: &Axis| format!("{}:{}:{}", a.lo, a.hi, a.step);
        write!(f, "s={} d={} i={}", ax(&self.sub), ax(&self.del), ax(&self.ins))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTrigger {
    pub wake_id: String,
    pub trigger_label: String,
    pub times_triggered: Option<u32>,
}

impl LabeledTrigger {
    pub fn new(wake_id: &str, label: &str) -> LabeledTrigger {
        LabeledTrigger { wake_id: wake_id.to_string(), trigger_label: normalize_label(label), times_triggered: None }
    }
}

/// Reads `wake_id  trigger_label  times_triggered` rows; the header line is required.
pub fn parse_triggers<R: BufRead>(reader: R) -> Result<Vec<LabeledTrigger>, TuningError> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, header)) => {
            if !header?.starts_with("wake_id") {
                return Err(TuningError::Format { line: 1, message: "missing header line".into() });
            }
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 2 || cols.len() > 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(TuningError::Format {
                line: lineno,
                message: "expected `wake_id<TAB>trigger_label<TAB>times_triggered`".into(),
            });
        }
        let times_triggered = match cols.get(2) {
            None | Some(&"") | Some(&"-") => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| TuningError::Format { line: lineno, message: format!("bad trigger count `{v}`") })?,
            ),
        };
        out.push(LabeledTrigger {
            wake_id: cols[0].to_string(),
            trigger_label: normalize_label(cols[1]),
            times_triggered,
        });
    }
    Ok(out)
}

struct PreparedWake<'a> {
    wake: &'a WakeWordSpec,
    blocklist: BTreeSet<String>,
    /// Candidate indices into the shared vocabulary that survive the blocklist.
    members: Vec<usize>,
    /// Label to position in `members`.
    by_label: HashMap<&'a str, usize>,
    profiles: Vec<Vec<EditProfile>>,
}

/// Precomputed edit profiles of a vocabulary against a set of wake words.
///
/// Distances for any scale setting are read off the profiles, which keeps a
/// full grid search to one dynamic program per (wake word, pronunciation).
pub struct TuningContext<'a> {
    vocab: &'a [Candidate],
    wakes: Vec<PreparedWake<'a>>,
    table: Option<Arc<WeightTable>>,
    tie: TieRank,
}

impl<'a> TuningContext<'a> {
    /// `blocklists` maps wake id to excluded labels; missing ids exclude nothing.
    /// With a weight table the advanced model is tuned, otherwise the simple one.
    pub fn new(
        vocab: &'a [Candidate],
        wakes: &'a [WakeWordSpec],
        blocklists: &BTreeMap<String, BTreeSet<String>>,
        table: Option<Arc<WeightTable>>,
    ) -> Result<TuningContext<'a>, TuningError> {
        let mut prepared = Vec::with_capacity(wakes.len());
        for wake in wakes {
            let blocklist = blocklists.get(&wake.id).cloned().unwrap_or_default();
            let members: Vec<usize> = (0..vocab.len()).filter(|&i| !blocklist.contains(&vocab[i].label)).collect();
            let by_label = members.iter().enumerate().map(|(pos, &i)| (vocab[i].label.as_str(), pos)).collect();
            let profiles = members
                .par_iter()
                .map(|&i| {
                    if vocab[i].prons.is_empty() {
                        return Err(DistanceError::NoPronunciation);
                    }
                    vocab[i]
                        .prons
                        .iter()
                        .map(|p| EditProfile::compute(&wake.phones, p, table.as_deref()))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            prepared.push(PreparedWake { wake, blocklist, members, by_label, profiles });
        }
        Ok(TuningContext { vocab, wakes: prepared, table, tie: TieRank::default() })
    }

    pub fn with_tie_rank(mut self, tie: TieRank) -> Self {
        self.tie = tie;
        self
    }

    pub fn tie_rank(&self) -> TieRank {
        self.tie
    }

    pub fn variant(&self) -> Variant {
        if self.table.is_some() {
            Variant::Advanced
        } else {
            Variant::Simple
        }
    }

    pub fn wake_ids(&self) -> Vec<&str> {
        self.wakes.iter().map(|w| w.wake.id.as_str()).collect()
    }

    /// The model tuned here, at the given scales.
    pub fn model(&self, scales: ScaleFactors) -> CostModel {
        match &self.table {
            Some(t) => CostModel::advanced(scales, t.clone()),
            None => CostModel::simple(scales),
        }
    }

    fn wake_index(&self, id: &str) -> Result<usize, TuningError> {
        self.wakes.iter().position(|w| w.wake.id == id).ok_or_else(|| TuningError::UnknownWake(id.to_string()))
    }

    /// Resolves triggers to `(wake index, member position)` pairs.
    fn resolve(&self, triggers: &[LabeledTrigger]) -> Result<Vec<(usize, usize)>, TuningError> {
        triggers
            .iter()
            .map(|t| {
                let w = self.wake_index(&t.wake_id)?;
                let pos = self.wakes[w].by_label.get(t.trigger_label.as_str()).copied().ok_or_else(|| {
                    TuningError::UnknownLabel { wake: t.wake_id.clone(), label: t.trigger_label.clone() }
                })?;
                Ok((w, pos))
            })
            .collect()
    }

    fn distances(&self, wake: usize, scales: ScaleFactors) -> Vec<f64> {
        self.wakes[wake]
            .profiles
            .iter()
            .map(|ps| ps.iter().map(|p| p.distance(scales)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Rank of one trigger at one grid point.
    pub fn rank(&self, trigger: &LabeledTrigger, scales: ScaleFactors) -> Result<usize, TuningError> {
        let (w, pos) = self.resolve(std::slice::from_ref(trigger))?[0];
        let dists = self.distances(w, scales);
        Ok(rank_in(&dists, dists[pos], self.tie))
    }

    /// Best rank each trigger reaches anywhere on the grid, in input order.
    pub fn best_achievable_ranks(&self, triggers: &[LabeledTrigger], grid: &Grid) -> Result<Vec<usize>, TuningError> {
        let resolved = self.resolve(triggers)?;
        let wakes_used: BTreeSet<usize> = resolved.iter().map(|r| r.0).collect();
        let points = grid.points();
        let per_point: Vec<Vec<usize>> = points
            .par_iter()
            .map(|&scales| {
                let mut ranks = vec![usize::MAX; resolved.len()];
                for &w in &wakes_used {
                    let dists = self.distances(w, scales);
                    for (slot, &(tw, pos)) in ranks.iter_mut().zip(&resolved) {
                        if tw == w {
                            *slot = rank_in(&dists, dists[pos], self.tie);
                        }
                    }
                }
                ranks
            })
            .collect();
        Ok((0..resolved.len()).map(|t| per_point.iter().map(|r| r[t]).min().unwrap_or(usize::MAX)).collect())
    }

    pub fn best_achievable_rank(&self, trigger: &LabeledTrigger, grid: &Grid) -> Result<usize, TuningError> {
        Ok(self.best_achievable_ranks(std::slice::from_ref(trigger), grid)?[0])
    }

    /// Keeps triggers whose best achievable rank is at most `threshold`, in input order.
    pub fn filter_triggers(
        &self,
        triggers: &[LabeledTrigger],
        grid: &Grid,
        threshold: usize,
    ) -> Result<Vec<LabeledTrigger>, TuningError> {
        let best = self.best_achievable_ranks(triggers, grid)?;
        Ok(triggers.iter().zip(best).filter(|(_, r)| *r <= threshold).map(|(t, _)| t.clone()).collect())
    }

    /// Per-wake worst trigger rank at one grid point.
    pub fn worst_ranks(
        &self,
        triggers: &[LabeledTrigger],
        scales: ScaleFactors,
    ) -> Result<BTreeMap<String, usize>, TuningError> {
        let resolved = self.resolve(triggers)?;
        Ok(self.worst_ranks_resolved(&resolved, scales))
    }

    fn worst_ranks_resolved(&self, resolved: &[(usize, usize)], scales: ScaleFactors) -> BTreeMap<String, usize> {
        let mut by_wake: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(w, pos) in resolved {
            by_wake.entry(w).or_default().push(pos);
        }
        by_wake
            .into_iter()
            .map(|(w, positions)| {
                let dists = self.distances(w, scales);
                let worst = positions.iter().map(|&p| rank_in(&dists, dists[p], self.tie)).max().unwrap_or(0);
                (self.wakes[w].wake.id.clone(), worst)
            })
            .collect()
    }

    /// Evaluates every grid point and returns the one minimizing the summed
    /// per-wake worst rank; ties go to the lexicographically smallest `(s, d, i)`.
    pub fn grid_search(&self, triggers: &[LabeledTrigger], grid: &Grid) -> Result<TuningResult, TuningError> {
        if triggers.is_empty() {
            return Err(TuningError::NoTriggers);
        }
        let resolved = self.resolve(triggers)?;
        let points = grid.points();
        let objectives: Vec<usize> =
            points.par_iter().map(|&scales| self.worst_ranks_resolved(&resolved, scales).values().sum()).collect();
        let (best_idx, &objective) = objectives
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("grid has at least one point");
        let best = points[best_idx];
        Ok(TuningResult {
            best,
            objective,
            per_wake_worst_rank: self.worst_ranks_resolved(&resolved, best),
            grid_points_evaluated: points.len(),
            variant: self.variant(),
            tie: self.tie,
        })
    }

    /// Leave-one-wake-word-out evaluation.
    ///
    /// Each fold tunes on the other wake words' triggers (skipped for the
    /// unweighted variant), ranks the held-out wake word's vocabulary with the
    /// top-`k` tie rule and counts how many held-out triggers land in the list.
    pub fn cross_validate(
        &self,
        triggers: &[LabeledTrigger],
        grid: &Grid,
        variant: Variant,
        k: usize,
        seed: u64,
    ) -> Result<Vec<FoldResult>, TuningError> {
        if self.wakes.len() < 2 {
            return Err(TuningError::TooFewFolds(self.wakes.len()));
        }
        self.resolve(triggers)?;
        let mut folds = Vec::with_capacity(self.wakes.len());
        for held in &self.wakes {
            let id = &held.wake.id;
            let training: Vec<LabeledTrigger> = triggers.iter().filter(|t| &t.wake_id != id).cloned().collect();
            let held_out: BTreeSet<&str> =
                triggers.iter().filter(|t| &t.wake_id == id).map(|t| t.trigger_label.as_str()).collect();
            let (model, tuned) = match variant {
                Variant::Unweighted => (CostModel::unweighted(), None),
                _ => {
                    let result = self.grid_search(&training, grid)?;
                    let model = match (variant, &self.table) {
                        (Variant::Advanced, Some(t)) => CostModel::advanced(result.best, t.clone()),
                        (Variant::Advanced, None) => {
                            return Err(TuningError::InvalidGrid(
                                "advanced cross-validation needs a weight table".into(),
                            ))
                        }
                        _ => CostModel::simple(result.best),
                    };
                    (model, Some(result.best))
                }
            };
            let hits = if held_out.is_empty() {
                0
            } else {
                let ranked = rank_candidates(self.vocab, held.wake, &model, k, seed, &held.blocklist)?;
                ranked.items.iter().filter(|i| held_out.contains(i.candidate.label.as_str())).count()
            };
            folds.push(FoldResult { wake_id: id.clone(), tuned, hits, total: held_out.len() });
        }
        Ok(folds)
    }

    pub fn vocabulary_size(&self, wake_id: &str) -> Result<usize, TuningError> {
        Ok(self.wakes[self.wake_index(wake_id)?].members.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub best: ScaleFactors,
    pub objective: usize,
    pub per_wake_worst_rank: BTreeMap<String, usize>,
    pub grid_points_evaluated: usize,
    pub variant: Variant,
    pub tie: TieRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub wake_id: String,
    /// Scales tuned on the other folds; `None` for the unweighted variant.
    pub tuned: Option<ScaleFactors>,
    pub hits: usize,
    pub total: usize,
}

/// Convenience wrapper: best achievable rank of one trigger against one wake word.
pub fn best_achievable_rank(
    trigger: &LabeledTrigger,
    vocab: &[Candidate],
    wake: &WakeWordSpec,
    grid: &Grid,
    table: Option<Arc<WeightTable>>,
    tie: TieRank,
) -> Result<usize, TuningError> {
    let wakes = std::slice::from_ref(wake);
    let ctx = TuningContext::new(vocab, wakes, &BTreeMap::new(), table)?.with_tie_rank(tie);
    ctx.best_achievable_rank(trigger, grid)
}

/// Full report text for a tuning run.
pub struct TuningReport<'r> {
    pub grid: &'r Grid,
    pub triggers_in: usize,
    pub triggers_retained: usize,
    pub filter_threshold: usize,
    pub result: &'r TuningResult,
    pub folds: Option<(Variant, &'r [FoldResult])>,
}

impl TuningReport<'_> {
    pub fn render(&self) -> String {
        let r = self.result;
        let mut s = String::new();
        let _ = writeln!(s, "variant\t{}", r.variant);
        let _ = writeln!(s, "tie_rank\t{}", r.tie);
        let _ = writeln!(s, "grid\t{}", self.grid);
        let _ = writeln!(s, "grid_points\t{}", r.grid_points_evaluated);
        let _ = writeln!(s, "filter_threshold\t{}", self.filter_threshold);
        let _ = writeln!(s, "triggers_in\t{}", self.triggers_in);
        let _ = writeln!(s, "triggers_retained\t{}", self.triggers_retained);
        let _ = writeln!(s, "best\ts={}\td={}\ti={}", r.best.sub, r.best.del, r.best.ins);
        let _ = writeln!(s, "objective\t{}", r.objective);
        for (wake, rank) in &r.per_wake_worst_rank {
            let _ = writeln!(s, "worst_rank\t{wake}\t{rank}");
        }
        if let Some((variant, folds)) = self.folds {
            let _ = writeln!(s, "loocv\t{variant}");
            for f in folds {
                let scales = f.tuned.map_or("-\t-\t-".to_string(), |t| format!("{}\t{}\t{}", t.sub, t.del, t.ins));
                let _ = writeln!(s, "fold\t{}\t{}\t{}\t{scales}", f.wake_id, f.hits, f.total);
            }
        }
        s
    }
}
