//! Configuration and the end-to-end pipelines behind the `wakeprobe` CLI.
//!
//! Every command returns the files it wants written as `(name, contents)`
//! pairs; [`write_outputs`] puts them under the output directory. All
//! randomness comes from the configured seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::Deserialize;
use thiserror::Error;

use crate::candidates::{
    build_blocklist, dictionary_vocabulary, export_manifest, extract_ngrams, rank_candidates, Candidate, VoiceConfig,
};
use crate::distance::{CostModel, ScaleFactors, Variant};
use crate::harness;
use crate::lexicon::{parse_phone, parse_wake_words, Inventory, PronouncingDictionary, WakeWordSpec};
use crate::tuning::{parse_triggers, Grid, TieRank, TuningContext, TuningReport, DEFAULT_FILTER_THRESHOLD};
use crate::weights::{self, WeightTable};

#[derive(Debug, Error)]
pub enum WorkbenchError {
    /// Usage or configuration problems (exit status 1).
    #[error("{0}")]
    Config(String),
    /// Problems in the data files (exit status 2).
    #[error("{0}")]
    Data(String),
}

impl WorkbenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Config(_) => 1,
            WorkbenchError::Data(_) => 2,
        }
    }
}

fn data_err(path: &Path, err: impl std::fmt::Display) -> WorkbenchError {
    WorkbenchError::Data(format!("{}: {err}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, WorkbenchError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| WorkbenchError::Config(format!("cannot open {}: {e}", path.display())))
}

/// On-disk configuration (TOML). Relative paths resolve against the config file.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub dictionary: Option<PathBuf>,
    pub wake_words: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub voices: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub grid: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_model")]
    pub model: String,
    /// `[s, d, i]` used by `rank` for the simple and advanced models.
    #[serde(default = "default_scales")]
    pub scales: [f64; 3],
    #[serde(default = "default_threshold")]
    pub filter_threshold: usize,
    #[serde(default = "default_tie")]
    pub tie_rank: String,
}

fn default_grid() -> String {
    "standard".into()
}
fn default_k() -> usize {
    100
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_model() -> String {
    "simple".into()
}
fn default_scales() -> [f64; 3] {
    [1.46, 1.30, 0.24]
}
fn default_threshold() -> usize {
    DEFAULT_FILTER_THRESHOLD
}
fn default_tie() -> String {
    "max".into()
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            dictionary: None,
            wake_words: None,
            inventory: None,
            weights: None,
            voices: None,
            grid: default_grid(),
            k: default_k(),
            seed: 0,
            out: default_out(),
            model: default_model(),
            scales: default_scales(),
            filter_threshold: default_threshold(),
            tie_rank: default_tie(),
        }
    }
}

impl WorkbenchConfig {
    pub fn load(path: &Path) -> Result<WorkbenchConfig, WorkbenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorkbenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: WorkbenchConfig =
            toml::from_str(&text).map_err(|e| WorkbenchError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dictionary, &mut cfg.wake_words, &mut cfg.inventory, &mut cfg.weights, &mut cfg.voices]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if cfg.k == 0 {
            return Err(WorkbenchError::Config("k must be at least 1".into()));
        }
        Ok(cfg)
    }
}

/// Loaded resources. Files are read lazily on first use.
pub struct Workbench {
    pub config: WorkbenchConfig,
    inventory: Inventory,
    dict: Option<PronouncingDictionary>,
    wakes: Option<Vec<WakeWordSpec>>,
    table: Option<Option<Arc<WeightTable>>>,
}

impl Workbench {
    pub fn new(config: WorkbenchConfig) -> Result<Workbench, WorkbenchError> {
        let inventory = match &config.inventory {
            Some(path) => Inventory::parse(open(path)?).map_err(|e| data_err(path, e))?,
            None => Inventory::arpabet(),
        };
        Ok(Workbench { config, inventory, dict: None, wakes: None, table: None })
    }

    pub fn dictionary(&mut self) -> Result<&PronouncingDictionary, WorkbenchError> {
        if self.dict.is_none() {
            let path = self
                .config
                .dictionary
                .clone()
                .ok_or_else(|| WorkbenchError::Config("no dictionary configured".into()))?;
            let dict = PronouncingDictionary::load_with_inventory(open(&path)?, self.inventory.clone())
                .map_err(|e| data_err(&path, e))?;
            self.dict = Some(dict);
        }
        Ok(self.dict.as_ref().expect("loaded"))
    }

    pub fn wake_words(&mut self) -> Result<&[WakeWordSpec], WorkbenchError> {
        if self.wakes.is_none() {
            let path = self
                .config
                .wake_words
                .clone()
                .ok_or_else(|| WorkbenchError::Config("no wake-word file configured".into()))?;
            let reader = open(&path)?;
            let wakes = parse_wake_words(reader, self.dictionary()?).map_err(|e| data_err(&path, e))?;
            self.wakes = Some(wakes);
        }
        Ok(self.wakes.as_deref().expect("loaded"))
    }

    pub fn wake(&mut self, id: &str) -> Result<WakeWordSpec, WorkbenchError> {
        self.wake_words()?
            .iter()
            .find(|w| w.id == id)
            .cloned()
            .ok_or_else(|| WorkbenchError::Config(format!("wake word `{id}` is not configured")))
    }

    pub fn weight_table(&mut self) -> Result<Option<Arc<WeightTable>>, WorkbenchError> {
        if self.table.is_none() {
            let table = match &self.config.weights {
                None => None,
                Some(path) => {
                    let t = WeightTable::load(open(path)?, &self.inventory).map_err(|e| data_err(path, e))?;
                    Some(Arc::new(t))
                }
            };
            self.table = Some(table);
        }
        Ok(self.table.clone().flatten())
    }

    pub fn voices(&self) -> Result<VoiceConfig, WorkbenchError> {
        match &self.config.voices {
            None => Ok(VoiceConfig::default()),
            Some(path) => VoiceConfig::parse(open(path)?).map_err(|e| data_err(path, e)),
        }
    }

    pub fn model(&mut self, variant: Option<Variant>) -> Result<CostModel, WorkbenchError> {
        let variant = match variant {
            Some(v) => v,
            None => self.config.model.parse().map_err(WorkbenchError::Config)?,
        };
        let [s, d, i] = self.config.scales;
        let scales = ScaleFactors::new(s, d, i).map_err(|e| WorkbenchError::Config(e.to_string()))?;
        let table = match variant {
            Variant::Advanced => Some(
                self.weight_table()?
                    .ok_or_else(|| WorkbenchError::Config("the advanced model needs `weights` in the config".into()))?,
            ),
            _ => None,
        };
        let scales = if variant == Variant::Unweighted { ScaleFactors::UNIT } else { scales };
        CostModel::from_parts(variant, scales, table).map_err(WorkbenchError::Config)
    }

    fn check_coverage(&mut self, wake: &WakeWordSpec, model: &CostModel) {
        if let Some(t) = model.table() {
            let missing = t.missing_rows(wake.phones.iter().copied());
            if !missing.is_empty() {
                let list: Vec<String> = missing.iter().map(ToString::to_string).collect();
                warn!("weight table lacks rows for {} of {}; using weight 1.0", list.join(" "), wake.id);
            }
        }
    }

    /// Ranks candidates against one wake word and exports the synthesis manifest.
    pub fn rank(
        &mut self,
        wake_id: &str,
        source: &VocabSource,
        variant: Option<Variant>,
    ) -> Result<Outputs, WorkbenchError> {
        let wake = self.wake(wake_id)?;
        let model = self.model(variant)?;
        self.check_coverage(&wake, &model);
        let voices = self.voices()?;
        let (k, seed) = (self.config.k, self.config.seed);
        let dict = self.dictionary()?;
        let blocklist = build_blocklist(&wake, dict);
        let vocabularies: Vec<(String, Vec<Candidate>)> = match source {
            VocabSource::Dictionary => vec![("dict".to_string(), dictionary_vocabulary(dict))],
            VocabSource::Transcripts { path, orders } => {
                let mut out = Vec::new();
                for &n in orders {
                    let (cands, _) = extract_ngrams(open(path)?, n, dict).map_err(|e| data_err(path, e))?;
                    out.push((format!("{n}gram"), cands));
                }
                out
            }
        };
        let mut outputs = Outputs::default();
        for (tag, vocab) in vocabularies {
            let ranked = rank_candidates(&vocab, &wake, &model, k, seed, &blocklist)
                .map_err(|e| WorkbenchError::Data(format!("{wake_id} ({tag}): {e}")))?;
            let mut list = Vec::new();
            ranked.write_tsv(&mut list).expect("in-memory write");
            outputs.push(format!("rank_{wake_id}_{tag}.tsv"), list);
            let manifest = export_manifest(&ranked, &voices);
            let mut text = Vec::new();
            manifest.write_tsv(&mut text).expect("in-memory write");
            outputs.push(format!("manifest_{wake_id}_{tag}.tsv"), text);
        }
        Ok(outputs)
    }

    /// Filters triggers, grid-searches the scales and optionally cross-validates.
    pub fn tune(&mut self, triggers_path: &Path, opts: &TuneOptions) -> Result<Outputs, WorkbenchError> {
        let triggers = parse_triggers(open(triggers_path)?).map_err(|e| data_err(triggers_path, e))?;
        let grid = Grid::preset(opts.grid.as_deref().unwrap_or(&self.config.grid))
            .map_err(|e| WorkbenchError::Config(e.to_string()))?;
        let tie: TieRank = self.config.tie_rank.parse().map_err(WorkbenchError::Config)?;
        let table = if opts.advanced {
            Some(
                self.weight_table()?
                    .ok_or_else(|| WorkbenchError::Config("advanced tuning needs `weights` in the config".into()))?,
            )
        } else {
            None
        };
        let wakes = self.wake_words()?.to_vec();
        let dict = self.dictionary()?;
        let vocab = dictionary_vocabulary(dict);
        let blocklists: BTreeMap<String, BTreeSet<String>> =
            wakes.iter().map(|w| (w.id.clone(), build_blocklist(w, dict))).collect();
        let data = |e: crate::tuning::TuningError| data_err(triggers_path, e);
        let ctx = TuningContext::new(&vocab, &wakes, &blocklists, table).map_err(data)?.with_tie_rank(tie);
        let threshold = opts.filter_threshold.unwrap_or(self.config.filter_threshold);
        let retained = ctx.filter_triggers(&triggers, &grid, threshold).map_err(data)?;
        if retained.is_empty() {
            return Err(WorkbenchError::Data(format!(
                "{}: no triggers left after filtering at rank {threshold}",
                triggers_path.display()
            )));
        }
        let result = ctx.grid_search(&retained, &grid).map_err(data)?;
        let folds = match opts.loocv {
            Some(variant) => Some((
                variant,
                ctx.cross_validate(&retained, &grid, variant, self.config.k, self.config.seed).map_err(data)?,
            )),
            None => None,
        };
        let report = TuningReport {
            grid: &grid,
            triggers_in: triggers.len(),
            triggers_retained: retained.len(),
            filter_threshold: threshold,
            result: &result,
            folds: folds.as_ref().map(|(v, f)| (*v, f.as_slice())),
        };
        let mut outputs = Outputs::default();
        outputs.push("tune_report.txt".into(), report.render().into_bytes());
        Ok(outputs)
    }

    pub fn ngrams(&mut self, transcripts: &Path, n: usize) -> Result<Outputs, WorkbenchError> {
        let dict = self.dictionary()?;
        let (cands, stats) = extract_ngrams(open(transcripts)?, n, dict).map_err(|e| data_err(transcripts, e))?;
        let mut text = format!(
            "# lines={} ngrams={} distinct={} oov_dropped={}\nlabel\tcount\tphones\n",
            stats.lines, stats.total, stats.distinct, stats.oov_dropped
        );
        for c in &cands {
            let prons: Vec<String> = c.prons.iter().map(ToString::to_string).collect();
            text.push_str(&format!("{}\t{}\t{}\n", c.label, c.count, prons.join(" | ")));
        }
        let mut outputs = Outputs::default();
        outputs.push(format!("ngrams_{n}.tsv"), text.into_bytes());
        Ok(outputs)
    }

    pub fn blocklist(&mut self, wake_id: &str) -> Result<Outputs, WorkbenchError> {
        let wake = self.wake(wake_id)?;
        let list = build_blocklist(&wake, self.dictionary()?);
        let mut text = String::new();
        for w in list {
            text.push_str(&w);
            text.push('\n');
        }
        let mut outputs = Outputs::default();
        outputs.push(format!("blocklist_{wake_id}.txt"), text.into_bytes());
        Ok(outputs)
    }

    pub fn weights_build(&mut self, scores_path: &Path, n_voices: u32) -> Result<Outputs, WorkbenchError> {
        let scores = weights::parse_probe_scores(open(scores_path)?, &self.inventory, n_voices)
            .map_err(|e| data_err(scores_path, e))?;
        let wakes = self.wake_words()?;
        let table = weights::build_weight_table(&scores, wakes).map_err(|e| data_err(scores_path, e))?;
        let mut buf = Vec::new();
        table.store(&mut buf).expect("in-memory write");
        let mut outputs = Outputs::default();
        outputs.push("weights.tsv".into(), buf);
        Ok(outputs)
    }

    /// Validates a stored table; returns a one-line description.
    pub fn weights_check(&mut self, path: &Path) -> Result<String, WorkbenchError> {
        let table = WeightTable::load(open(path)?, &self.inventory).map_err(|e| data_err(path, e))?;
        let mut line = format!(
            "ok: {} deletion, {} insertion, {} substitution rows",
            table.deletion().len(),
            table.insertion().len(),
            table.substitution().len()
        );
        if self.config.wake_words.is_some() {
            let wakes = self.wake_words()?.to_vec();
            let missing = table.missing_rows(crate::lexicon::wake_word_phones(&wakes));
            if !missing.is_empty() {
                let list: Vec<String> = missing.iter().map(ToString::to_string).collect();
                line.push_str(&format!("; wake-word phones without rows: {}", list.join(" ")));
            }
        }
        Ok(line)
    }

    pub fn probe_plan(&mut self, phone: &str, n_words: usize, n_voices: u32) -> Result<Outputs, WorkbenchError> {
        let seed = self.config.seed;
        let phone = parse_phone(phone, &self.inventory).map_err(|e| WorkbenchError::Config(e.to_string()))?;
        let dict = self.dictionary()?;
        let mut plan =
            weights::sample_probe_words(dict, phone, n_words, seed).map_err(|e| WorkbenchError::Data(e.to_string()))?;
        plan.n_voices = n_voices;
        let mut buf = Vec::new();
        weights::write_probe_plan(&plan, dict, &mut buf).expect("in-memory write");
        let mut outputs = Outputs::default();
        outputs.push(format!("probe_plan_{phone}.tsv"), buf);
        Ok(outputs)
    }

    pub fn harness(
        &mut self,
        events: &Path,
        verification: &Path,
        adjudication: &Path,
    ) -> Result<Outputs, WorkbenchError> {
        let ev = harness::parse_event_log(open(events)?).map_err(|e| data_err(events, e))?;
        let ver = harness::parse_verifications(open(verification)?).map_err(|e| data_err(verification, e))?;
        let adj = harness::parse_adjudications(open(adjudication)?).map_err(|e| data_err(adjudication, e))?;
        let analyses = harness::analyze(&ev, &ver, &adj).map_err(|e| WorkbenchError::Data(e.to_string()))?;
        if self.config.wake_words.is_some() {
            let known: BTreeSet<String> = self.wake_words()?.iter().map(|w| w.id.clone()).collect();
            for s in harness::unknown_speakers(&analyses, &known) {
                warn!("speaker `{s}` is not a configured wake word; reported in its own row");
            }
        }
        let summary = harness::summarize(&analyses);
        let mut outputs = Outputs::default();
        outputs.push("harness_events.tsv".into(), harness::render_events_tsv(&analyses).into_bytes());
        outputs.push("harness_summary.tsv".into(), summary.render_tsv().into_bytes());
        Ok(outputs)
    }
}

pub enum VocabSource {
    Dictionary,
    Transcripts { path: PathBuf, orders: Vec<usize> },
}

#[derive(Debug, Clone, Default)]
pub struct TuneOptions {
    pub grid: Option<String>,
    pub filter_threshold: Option<usize>,
    pub advanced: bool,
    pub loocv: Option<Variant>,
}

/// Named output files.
#[derive(Debug, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn push(&mut self, name: String, contents: Vec<u8>) {
        self.files.push((name, contents));
    }
}

/// Writes every output under `dir`, optionally prefixed with a timestamp comment.
pub fn write_outputs(outputs: &Outputs, dir: &Path, timestamp: Option<&str>) -> Result<Vec<PathBuf>, WorkbenchError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| WorkbenchError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (name, contents) in &outputs.files {
        let path = dir.join(name);
        let mut bytes = Vec::with_capacity(contents.len() + 40);
        if let Some(ts) = timestamp {
            bytes.extend_from_slice(format!("# generated {ts}\n").as_bytes());
        }
        bytes.extend_from_slice(contents);
        std::fs::write(&path, bytes)
            .map_err(|e| WorkbenchError::Config(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wb.toml");
        std::fs::write(&path, body).unwrap();
        (dir, path)
    }

    #[test]
    fn relative_paths_resolve_against_config() {
        let (dir, path) = write_config("dictionary = \"d.txt\"\nout = \"o\"\n");
        let cfg = WorkbenchConfig::load(&path).unwrap();
        assert_eq!(cfg.dictionary.unwrap(), dir.path().join("d.txt"));
        assert_eq!(cfg.out, dir.path().join("o"));
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.grid, "standard");
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let (_dir, path) = write_config("dictionary = \"d.txt\"\ncolour = 1\n");
        assert_eq!(WorkbenchConfig::load(&path).unwrap_err().exit_code(), 1);
        let (_dir, path) = write_config("k = 0\n");
        assert_eq!(WorkbenchConfig::load(&path).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn advanced_model_requires_weights() {
        let mut bench = Workbench::new(WorkbenchConfig { model: "advanced".into(), ..Default::default() }).unwrap();
        assert!(matches!(bench.model(None), Err(WorkbenchError::Config(_))));
        assert_eq!(bench.model(Some(Variant::Unweighted)).unwrap().variant(), Variant::Unweighted);
    }

    #[test]
    fn timestamp_prefixes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Outputs::default();
        outputs.push("a.tsv".into(), b"x\n".to_vec());
        write_outputs(&outputs, dir.path(), Some("2020-01-01T00:00:00Z")).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.tsv")).unwrap(), "# generated 2020-01-01T00:00:00Z\nx\n");
    }
}
