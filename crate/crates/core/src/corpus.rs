//! NLI4CT ingestion: instances, clinical trial records, premise resolution,
//! token budgets, prompt rendering and corpus statistics.
//!
//! On-disk layout follows the shared-task release: one JSON object keyed by
//! instance uuid, plus one JSON file per trial (`<trial_id>.json`) whose
//! section-name keys map to arrays of text lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::InterventionKind;
use crate::text;

/// Tokens held back for the prompt template when truncating.
pub const RESERVED_TEMPLATE_TOKENS: usize = 16;
pub const DEFAULT_TOKEN_BUDGET: usize = 4096;

pub const PRIMARY_MARKER: &str = "Primary trial:";
pub const SECONDARY_MARKER: &str = "Secondary trial:";

const PROMPT_TEMPLATE: &str = include_str!("../templates/prompt_v1.txt");
pub const PROMPT_TEMPLATE_VERSION: &str = "prompt_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Entailment,
    Contradiction,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Entailment, Label::Contradiction];

    pub fn flipped(self) -> Label {
        match self {
            Label::Entailment => Label::Contradiction,
            Label::Contradiction => Label::Entailment,
        }
    }

    /// Class index used by the learner: Entailment = 0, Contradiction = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Entailment => 0,
            Label::Contradiction => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Entailment
        } else {
            Label::Contradiction
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "Entailment",
            Label::Contradiction => "Contradiction",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Entailment" => Ok(Label::Entailment),
            "Contradiction" => Ok(Label::Contradiction),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Section {
    Intervention,
    Eligibility,
    Results,
    #[serde(rename = "Adverse Events")]
    AdverseEvents,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::Intervention,
        Section::Eligibility,
        Section::Results,
        Section::AdverseEvents,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Intervention => "Intervention",
            Section::Eligibility => "Eligibility",
            Section::Results => "Results",
            Section::AdverseEvents => "Adverse Events",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Section {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Section::ALL
            .into_iter()
            .find(|sec| sec.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown section `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceType {
    Single,
    Comparison,
}

impl InstanceType {
    pub const ALL: [InstanceType; 2] = [InstanceType::Single, InstanceType::Comparison];

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceType::Single => "Single",
            InstanceType::Comparison => "Comparison",
        }
    }
}

impl fmt::Display for InstanceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalTrialRecord {
    pub trial_id: String,
    /// All four sections are always present, possibly empty.
    pub sections: BTreeMap<Section, Vec<String>>,
}

impl ClinicalTrialRecord {
    pub fn section(&self, section: Section) -> &[String] {
        self.sections.get(&section).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliInstance {
    pub uuid: String,
    pub itype: InstanceType,
    pub section: Section,
    pub primary_id: String,
    pub secondary_id: Option<String>,
    pub statement: String,
    pub label: Option<Label>,
    pub intervention: Option<InterventionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedPair {
    pub uuid: String,
    pub premise: String,
    pub hypothesis: String,
    pub label: Option<Label>,
}

/// A resolved pair together with the instance metadata needed downstream
/// (grouped evaluation, statistics). One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(flatten)]
    pub pair: ResolvedPair,
    pub section: Section,
    pub itype: InstanceType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionKind>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// Sorted by uuid.
    pub instances: Vec<NliInstance>,
    pub trials: BTreeMap<String, ClinicalTrialRecord>,
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    #[serde(rename = "Type")]
    itype: String,
    #[serde(rename = "Section_id")]
    section: String,
    #[serde(rename = "Primary_id")]
    primary_id: String,
    #[serde(rename = "Secondary_id", default)]
    secondary_id: Option<String>,
    #[serde(rename = "Statement")]
    statement: String,
    #[serde(rename = "Label", default)]
    label: Option<String>,
    #[serde(rename = "Intervention", default)]
    intervention: Option<String>,
}

impl RawInstance {
    fn into_instance(self, uuid: String) -> Result<NliInstance> {
        let itype = match self.itype.as_str() {
            "Single" => InstanceType::Single,
            "Comparison" => InstanceType::Comparison,
            other => return Err(Error::instance(uuid, format!("unknown instance type `{other}`"))),
        };
        let section = self
            .section
            .parse::<Section>()
            .map_err(|_| Error::instance(&uuid, format!("unknown section name `{}`", self.section)))?;
        let label = self
            .label
            .map(|l| l.parse::<Label>())
            .transpose()
            .map_err(|e| Error::instance(&uuid, e.to_string()))?;
        let intervention = self
            .intervention
            .map(|k| k.parse::<InterventionKind>())
            .transpose()
            .map_err(|e| Error::instance(&uuid, e.to_string()))?;
        let secondary_id = self.secondary_id.filter(|s| !s.is_empty());
        match (itype, &secondary_id) {
            (InstanceType::Comparison, None) => {
                return Err(Error::instance(uuid, "comparison instance without Secondary_id"))
            }
            (InstanceType::Single, Some(_)) => {
                return Err(Error::instance(uuid, "single instance with a Secondary_id"))
            }
            _ => {}
        }
        if self.primary_id.is_empty() {
            return Err(Error::instance(uuid, "empty Primary_id"));
        }
        Ok(NliInstance {
            uuid,
            itype,
            section,
            primary_id: self.primary_id,
            secondary_id,
            statement: self.statement,
            label,
            intervention,
        })
    }
}

fn read_json_value(path: &Path) -> Result<serde_json::Value> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

/// Parses an instances file (uuid-keyed JSON object).
pub fn load_instances(path: &Path) -> Result<Vec<NliInstance>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))?;
    map.into_iter()
        .map(|(uuid, value)| {
            let raw: RawInstance = serde_json::from_value(value)
                .map_err(|e| Error::instance(&uuid, format!("malformed instance: {e}")))?;
            raw.into_instance(uuid)
        })
        .collect()
}

pub fn load_trial(ctr_dir: &Path, trial_id: &str) -> Result<ClinicalTrialRecord> {
    if trial_id.is_empty() {
        return Err(Error::invalid("empty trial id"));
    }
    let path = ctr_dir.join(format!("{trial_id}.json"));
    if !path.is_file() {
        return Err(Error::MissingTrial {
            trial_id: trial_id.to_string(),
            path,
        });
    }
    let value = read_json_value(&path)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::invalid(format!("{}: expected a JSON object", path.display())))?;
    let mut sections: BTreeMap<Section, Vec<String>> =
        Section::ALL.into_iter().map(|s| (s, Vec::new())).collect();
    for section in Section::ALL {
        if let Some(lines) = obj.get(section.as_str()) {
            let lines: Vec<String> = serde_json::from_value(lines.clone()).map_err(|e| {
                Error::invalid(format!(
                    "{}: section `{section}` must be an array of strings ({e})",
                    path.display()
                ))
            })?;
            sections.insert(section, lines);
        }
    }
    Ok(ClinicalTrialRecord {
        trial_id: trial_id.to_string(),
        sections,
    })
}

/// Loads the instances file and every trial it references.
pub fn load_corpus(instances_path: &Path, ctr_dir: &Path) -> Result<Corpus> {
    let instances = load_instances(instances_path)?;
    let referenced: BTreeSet<&str> = instances
        .iter()
        .flat_map(|i| std::iter::once(i.primary_id.as_str()).chain(i.secondary_id.as_deref()))
        .collect();
    let mut trials = BTreeMap::new();
    for id in referenced {
        trials.insert(id.to_string(), load_trial(ctr_dir, id)?);
    }
    Ok(Corpus { instances, trials })
}

fn lookup<'a>(
    inst: &NliInstance,
    trials: &'a BTreeMap<String, ClinicalTrialRecord>,
    id: &str,
) -> Result<&'a ClinicalTrialRecord> {
    trials
        .get(id)
        .ok_or_else(|| Error::instance(&inst.uuid, format!("trial `{id}` is not loaded")))
}

pub fn resolve_premise(
    inst: &NliInstance,
    trials: &BTreeMap<String, ClinicalTrialRecord>,
) -> Result<ResolvedPair> {
    let primary = lookup(inst, trials, &inst.primary_id)?.section(inst.section);
    let premise = match (inst.itype, &inst.secondary_id) {
        (InstanceType::Single, _) => {
            let premise = primary.join("\n");
            if premise.trim().is_empty() {
                return Err(Error::instance(
                    &inst.uuid,
                    format!("section `{}` is empty in trial `{}`", inst.section, inst.primary_id),
                ));
            }
            premise
        }
        (InstanceType::Comparison, Some(secondary_id)) => {
            let secondary = lookup(inst, trials, secondary_id)?.section(inst.section);
            if primary.is_empty() && secondary.is_empty() {
                return Err(Error::instance(
                    &inst.uuid,
                    format!("section `{}` is empty in both trials", inst.section),
                ));
            }
            format!(
                "{PRIMARY_MARKER}\n{}\n{SECONDARY_MARKER}\n{}",
                primary.join("\n"),
                secondary.join("\n")
            )
        }
        (InstanceType::Comparison, None) => {
            return Err(Error::instance(&inst.uuid, "comparison instance without secondary trial"))
        }
    };
    Ok(ResolvedPair {
        uuid: inst.uuid.clone(),
        premise,
        hypothesis: inst.statement.clone(),
        label: inst.label,
    })
}

pub fn resolve_record(
    inst: &NliInstance,
    trials: &BTreeMap<String, ClinicalTrialRecord>,
) -> Result<PairRecord> {
    Ok(PairRecord {
        pair: resolve_premise(inst, trials)?,
        section: inst.section,
        itype: inst.itype,
        intervention: inst.intervention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverflowMode {
    /// Cut the premise from the end until the pair fits.
    #[default]
    Truncate,
    /// Drop pairs that exceed the budget.
    Remove,
}

impl FromStr for OverflowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "truncate" => Ok(OverflowMode::Truncate),
            "remove" => Ok(OverflowMode::Remove),
            other => Err(Error::invalid(format!("unknown overflow mode `{other}`"))),
        }
    }
}

/// Whitespace-token length of a pair including the template reserve.
pub fn pair_token_count(pair: &ResolvedPair) -> usize {
    text::whitespace_token_count(&pair.premise)
        + text::whitespace_token_count(&pair.hypothesis)
        + RESERVED_TEMPLATE_TOKENS
}

/// Fits a pair into `budget` whitespace tokens (premise + hypothesis +
/// template reserve). Returns `None` when the pair is dropped.
pub fn truncate_pair(
    pair: &ResolvedPair,
    budget: usize,
    mode: OverflowMode,
) -> Result<Option<ResolvedPair>> {
    let hyp_tokens = text::whitespace_token_count(&pair.hypothesis);
    if mode == OverflowMode::Truncate && budget <= hyp_tokens + RESERVED_TEMPLATE_TOKENS {
        return Err(Error::instance(
            &pair.uuid,
            format!(
                "budget {budget} cannot hold the hypothesis ({hyp_tokens} tokens) plus {RESERVED_TEMPLATE_TOKENS} reserved tokens"
            ),
        ));
    }
    if pair_token_count(pair) <= budget {
        return Ok(Some(pair.clone()));
    }
    match mode {
        OverflowMode::Remove => Ok(None),
        OverflowMode::Truncate => {
            let keep = budget - hyp_tokens - RESERVED_TEMPLATE_TOKENS;
            let mut out = pair.clone();
            out.premise = first_tokens(&pair.premise, keep).to_string();
            Ok(Some(out))
        }
    }
}

/// Prefix of `s` holding its first `n` whitespace tokens, original spacing
/// preserved.
fn first_tokens(s: &str, n: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            if in_token {
                seen += 1;
                if seen == n {
                    return &s[..i];
                }
            }
            in_token = false;
        } else {
            in_token = true;
        }
    }
    s
}

/// Renders the instruction prompt. With `include_answer` the gold label is
/// appended as "Yes" (Entailment) or "No" (Contradiction).
pub fn render_prompt(pair: &ResolvedPair, include_answer: bool) -> Result<String> {
    let template = PROMPT_TEMPLATE.trim_end();
    let (head, rest) = template
        .split_once("{premise}")
        .expect("template has a premise slot");
    let (mid, tail) = rest
        .split_once("{hypothesis}")
        .expect("template has a hypothesis slot");
    let mut out = String::with_capacity(template.len() + pair.premise.len() + pair.hypothesis.len());
    out.push_str(head);
    out.push_str(&pair.premise);
    out.push_str(mid);
    out.push_str(&pair.hypothesis);
    out.push_str(tail);
    if include_answer {
        let label = pair
            .label
            .ok_or_else(|| Error::instance(&pair.uuid, "answer requested but the pair has no label"))?;
        out.push(' ');
        out.push_str(match label {
            Label::Entailment => "Yes",
            Label::Contradiction => "No",
        });
    }
    Ok(out)
}

/// Instance counts by (type, section, label); `None` label counts unlabeled
/// instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    counts: BTreeMap<(InstanceType, Section, Option<Label>), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    #[serde(rename = "type")]
    pub itype: String,
    pub section: String,
    pub label: String,
    pub count: usize,
}

impl CorpusStats {
    fn empty() -> Self {
        let mut counts = BTreeMap::new();
        for t in InstanceType::ALL {
            for s in Section::ALL {
                for l in [Some(Label::Entailment), Some(Label::Contradiction), None] {
                    counts.insert((t, s, l), 0);
                }
            }
        }
        CorpusStats { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn count(&self, itype: InstanceType, section: Section, label: Option<Label>) -> usize {
        self.counts[&(itype, section, label)]
    }

    fn sum_where(&self, pred: impl Fn(InstanceType, Section, Option<Label>) -> bool) -> usize {
        self.counts
            .iter()
            .filter(|((t, s, l), _)| pred(*t, *s, *l))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn by_type(&self, itype: InstanceType) -> usize {
        self.sum_where(|t, _, _| t == itype)
    }

    pub fn by_label(&self, label: Label) -> usize {
        self.sum_where(|_, _, l| l == Some(label))
    }

    pub fn by_section(&self, section: Section) -> usize {
        self.sum_where(|_, s, _| s == section)
    }

    pub fn by_type_section(&self, itype: InstanceType, section: Section) -> usize {
        self.sum_where(|t, s, _| t == itype && s == section)
    }

    pub fn by_type_label(&self, itype: InstanceType, label: Label) -> usize {
        self.sum_where(|t, _, l| t == itype && l == Some(label))
    }

    pub fn rows(&self) -> Vec<StatsRow> {
        self.counts
            .iter()
            .map(|((t, s, l), c)| StatsRow {
                itype: t.as_str().to_string(),
                section: s.as_str().to_string(),
                label: l.map_or("Unlabeled", Label::as_str).to_string(),
                count: *c,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }
}

pub fn corpus_stats(instances: &[NliInstance]) -> CorpusStats {
    let mut stats = CorpusStats::empty();
    for inst in instances {
        *stats
            .counts
            .get_mut(&(inst.itype, inst.section, inst.label))
            .expect("all keys pre-populated") += 1;
    }
    stats
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Resolves a corpus location: a directory holding `instances.json` and
/// `ctrs/`, or an instances file whose trials sit in a sibling `ctrs/`.
pub fn corpus_paths(corpus: &Path) -> (PathBuf, PathBuf) {
    if corpus.is_dir() {
        (corpus.join("instances.json"), corpus.join("ctrs"))
    } else {
        let parent = corpus.parent().unwrap_or_else(|| Path::new("."));
        (corpus.to_path_buf(), parent.join("ctrs"))
    }
}
