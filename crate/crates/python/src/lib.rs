//! Python bindings for `wakeprobe-core`.
//!
//! Phone sequences cross the boundary as space-separated ARPAbet strings;
//! stress digits are accepted and stripped.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wakeprobe_core::candidates::{self, CandidateSource};
use wakeprobe_core::distance;
use wakeprobe_core::harness;
use wakeprobe_core::lexicon::{self, Inventory};
use wakeprobe_core::{Candidate, EditOp, ScaleFactors};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn open(path: &str) -> PyResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

fn phones(text: &str) -> PyResult<lexicon::PhoneSeq> {
    lexicon::PhoneSeq::parse(text, &Inventory::arpabet()).map_err(value_err)
}

fn seq_string(seq: &[lexicon::Phone]) -> String {
    seq.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(" ")
}

#[pyclass(frozen, name = "PronouncingDictionary")]
struct PyDictionary {
    inner: lexicon::PronouncingDictionary,
}

#[pymethods]
impl PyDictionary {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = lexicon::PronouncingDictionary::load(open(path)?).map_err(value_err)?;
        Ok(PyDictionary { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = lexicon::PronouncingDictionary::load(text.as_bytes()).map_err(value_err)?;
        Ok(PyDictionary { inner })
    }

    /// Pronunciations of `word` in variant order.
    fn lookup(&self, word: &str) -> Vec<String> {
        self.inner.lookup(word).iter().map(|p| seq_string(&p.phones)).collect()
    }

    /// Every pronunciation of a multi-word phrase, capped at 16 variants.
    fn phrase_phones(&self, words: Vec<String>) -> PyResult<Vec<String>> {
        Ok(self.inner.phrase_phones(&words).map_err(value_err)?.iter().map(|s| seq_string(s)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, word: &str) -> bool {
        self.inner.contains(word)
    }
}

#[pyclass(frozen, name = "WeightTable")]
struct PyWeightTable {
    inner: Arc<wakeprobe_core::WeightTable>,
}

#[pymethods]
impl PyWeightTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let table = wakeprobe_core::WeightTable::load(open(path)?, &Inventory::arpabet()).map_err(value_err)?;
        Ok(PyWeightTable { inner: Arc::new(table) })
    }

    /// All weights 1.0 over the given phones.
    #[staticmethod]
    fn uniform(phones_text: &str) -> PyResult<Self> {
        let seq = phones(phones_text)?;
        Ok(PyWeightTable { inner: Arc::new(wakeprobe_core::WeightTable::uniform(&seq)) })
    }

    fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.inner.store(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ASCII table")
    }

    fn deletion_weight(&self, phone: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.deletion_weight(single(phone)?))
    }

    fn insertion_weight(&self, phone: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.insertion_weight(single(phone)?))
    }

    fn substitution_weight(&self, from: &str, to: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.substitution_weight(single(from)?, single(to)?))
    }
}

fn single(phone: &str) -> PyResult<lexicon::Phone> {
    lexicon::parse_phone(phone, &Inventory::arpabet()).map_err(value_err)
}

#[pyclass(frozen, name = "CostModel")]
struct PyCostModel {
    inner: wakeprobe_core::CostModel,
}

fn scales(s: f64, d: f64, i: f64) -> PyResult<ScaleFactors> {
    ScaleFactors::new(s, d, i).map_err(value_err)
}

#[pymethods]
impl PyCostModel {
    #[staticmethod]
    fn unweighted() -> Self {
        PyCostModel { inner: wakeprobe_core::CostModel::unweighted() }
    }

    #[staticmethod]
    fn simple(s: f64, d: f64, i: f64) -> PyResult<Self> {
        Ok(PyCostModel { inner: wakeprobe_core::CostModel::simple(scales(s, d, i)?) })
    }

    #[staticmethod]
    fn advanced(s: f64, d: f64, i: f64, table: PyRef<'_, PyWeightTable>) -> PyResult<Self> {
        Ok(PyCostModel { inner: wakeprobe_core::CostModel::advanced(scales(s, d, i)?, table.inner.clone()) })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn scales(&self) -> (f64, f64, f64) {
        let s = self.inner.scales();
        (s.sub, s.del, s.ins)
    }

    fn __repr__(&self) -> String {
        format!("CostModel({})", self.inner)
    }
}

#[pyclass(frozen, get_all, name = "Alignment")]
struct PyAlignment {
    distance: f64,
    sub_mass: f64,
    del_mass: f64,
    ins_mass: f64,
    sub_count: usize,
    del_count: usize,
    ins_count: usize,
    wake_len: usize,
    fallback_lookups: usize,
    /// Edit script as `=P`, `P>Q`, `-P`, `+Q` tokens.
    ops: Vec<String>,
}

#[pymethods]
impl PyAlignment {
    fn __repr__(&self) -> String {
        format!("Alignment(distance={}, ops={:?})", self.distance, self.ops)
    }
}

#[pyfunction]
fn align(wake: &str, candidate: &str, model: PyRef<'_, PyCostModel>) -> PyResult<PyAlignment> {
    let bd = distance::align(&phones(wake)?, &phones(candidate)?, &model.inner).map_err(value_err)?;
    Ok(PyAlignment {
        distance: bd.distance,
        sub_mass: bd.sub_mass,
        del_mass: bd.del_mass,
        ins_mass: bd.ins_mass,
        sub_count: bd.sub_count,
        del_count: bd.del_count,
        ins_count: bd.ins_count,
        wake_len: bd.wake_len,
        fallback_lookups: bd.fallback_lookups,
        ops: bd.alignment.iter().map(EditOp::to_string).collect(),
    })
}

#[pyfunction(name = "distance")]
fn distance_py(wake: &str, candidate: &str, model: PyRef<'_, PyCostModel>) -> PyResult<f64> {
    distance::distance(&phones(wake)?, &phones(candidate)?, &model.inner).map_err(value_err)
}

/// Indices chosen by the top-K tie rule.
#[pyfunction]
fn select_top_k(distances: Vec<f64>, k: usize, seed: u64) -> Vec<usize> {
    candidates::select_top_k(&distances, k, seed).indices
}

/// Ranks every dictionary word against a wake word.
///
/// Returns `(rank, label, distance)` tuples; the wake word's blocklist
/// (its text, `blocklist`, and contiguous sub-pronunciations) is applied.
#[pyfunction]
#[pyo3(signature = (dictionary, wake_text, wake_phones, model, k=100, seed=0, blocklist=Vec::new()))]
fn rank_dictionary(
    dictionary: PyRef<'_, PyDictionary>,
    wake_text: &str,
    wake_phones: &str,
    model: PyRef<'_, PyCostModel>,
    k: usize,
    seed: u64,
    blocklist: Vec<String>,
) -> PyResult<Vec<(usize, String, f64)>> {
    let explicit: Vec<&str> = blocklist.iter().map(String::as_str).collect();
    let wake = lexicon::WakeWordSpec::new("wake", wake_text, phones(wake_phones)?, &explicit);
    let vocab = candidates::dictionary_vocabulary(&dictionary.inner);
    let blocked = candidates::build_blocklist(&wake, &dictionary.inner);
    rank_list(&vocab, &wake, &model.inner, k, seed, &blocked)
}

/// Ranks arbitrary `(label, phones)` candidates against a wake word; no blocklist.
#[pyfunction]
#[pyo3(signature = (candidates, wake_phones, model, k=100, seed=0))]
fn rank(
    candidates: Vec<(String, String)>,
    wake_phones: &str,
    model: PyRef<'_, PyCostModel>,
    k: usize,
    seed: u64,
) -> PyResult<Vec<(usize, String, f64)>> {
    let vocab = candidates
        .iter()
        .map(|(label, p)| Ok(Candidate::new(label, vec![phones(p)?], CandidateSource::Dictionary)))
        .collect::<PyResult<Vec<_>>>()?;
    let wake = lexicon::WakeWordSpec::new("wake", "", phones(wake_phones)?, &[]);
    rank_list(&vocab, &wake, &model.inner, k, seed, &BTreeSet::new())
}

fn rank_list(
    vocab: &[Candidate],
    wake: &lexicon::WakeWordSpec,
    model: &wakeprobe_core::CostModel,
    k: usize,
    seed: u64,
    blocked: &BTreeSet<String>,
) -> PyResult<Vec<(usize, String, f64)>> {
    let ranked = candidates::rank_candidates(vocab, wake, model, k, seed, blocked).map_err(value_err)?;
    Ok(ranked.items.into_iter().map(|i| (i.rank, i.candidate.label, i.breakdown.distance)).collect())
}

/// Dictionary-covered `n`-grams of `text` with their counts, in first-seen order.
#[pyfunction]
fn extract_ngrams(text: &str, n: usize, dictionary: PyRef<'_, PyDictionary>) -> PyResult<Vec<(String, usize)>> {
    let (cands, _) = candidates::extract_ngrams(text.as_bytes(), n, &dictionary.inner).map_err(value_err)?;
    Ok(cands.into_iter().map(|c| (c.label, c.count)).collect())
}

#[pyfunction]
fn cohens_kappa(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    harness::cohens_kappa(&a, &b).map_err(value_err)
}

/// `(start, end)` of the replay window around a trigger, in seconds.
#[pyfunction]
fn verification_window(progress_s: f64, media_len_s: f64) -> PyResult<(f64, f64)> {
    let event = harness::TriggerEvent {
        timestamp: DateTime::<Utc>::UNIX_EPOCH,
        media_id: String::new(),
        progress_s,
        speaker_id: String::new(),
    };
    harness::verification_window(&event, media_len_s).map_err(value_err)
}

#[pyfunction]
fn bin_reproducibility(hits: u32) -> PyResult<String> {
    Ok(harness::bin_reproducibility(hits).map_err(value_err)?.to_string())
}

#[pyfunction]
#[pyo3(signature = (led_on_duration_s, voice_response=false, pattern_cloud_signal=false, threshold_s=harness::CLOUD_THRESHOLD_S))]
fn classify_activation(
    led_on_duration_s: f64,
    voice_response: bool,
    pattern_cloud_signal: bool,
    threshold_s: f64,
) -> String {
    let obs = harness::ActivationObservation { led_on_duration_s, voice_response, pattern_cloud_signal };
    harness::classify_activation(&obs, threshold_s).to_string()
}

#[pymodule]
fn wakeprobe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDictionary>()?;
    m.add_class::<PyWeightTable>()?;
    m.add_class::<PyCostModel>()?;
    m.add_class::<PyAlignment>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(distance_py, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(rank_dictionary, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(extract_ngrams, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(verification_window, m)?)?;
    m.add_function(wrap_pyfunction!(bin_reproducibility, m)?)?;
    m.add_function(wrap_pyfunction!(classify_activation, m)?)?;
    Ok(())
}
