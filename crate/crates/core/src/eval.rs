//! Prediction scoring: macro F1 with per-group breakdowns, consistency on
//! semantic-preserving interventions and faithfulness on semantic-altering
//! ones.
//!
//! Vacuous metrics (nothing to average over) are `None` and serialize as
//! `null`, never as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Section};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterventionKind {
    Control,
    Contrast,
    Paraphrase,
    Contradiction,
    #[serde(rename = "Numerical_contradiction")]
    NumericalContradiction,
    #[serde(rename = "Numerical_paraphrase")]
    NumericalParaphrase,
    Definitions,
    #[serde(rename = "Text_appended")]
    TextAppended,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 8] = [
        InterventionKind::Control,
        InterventionKind::Contrast,
        InterventionKind::Paraphrase,
        InterventionKind::Contradiction,
        InterventionKind::NumericalContradiction,
        InterventionKind::NumericalParaphrase,
        InterventionKind::Definitions,
        InterventionKind::TextAppended,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::Control => "Control",
            InterventionKind::Contrast => "Contrast",
            InterventionKind::Paraphrase => "Paraphrase",
            InterventionKind::Contradiction => "Contradiction",
            InterventionKind::NumericalContradiction => "Numerical_contradiction",
            InterventionKind::NumericalParaphrase => "Numerical_paraphrase",
            InterventionKind::Definitions => "Definitions",
            InterventionKind::TextAppended => "Text_appended",
        }
    }

    /// Gold label is kept by the edit.
    pub fn is_preserving(self) -> bool {
        matches!(
            self,
            InterventionKind::Paraphrase
                | InterventionKind::NumericalParaphrase
                | InterventionKind::Definitions
                | InterventionKind::TextAppended
        )
    }

    /// Gold label is flipped by the edit.
    pub fn is_altering(self) -> bool {
        matches!(
            self,
            InterventionKind::Contradiction | InterventionKind::NumericalContradiction
        )
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| {
            x.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        };
        let key = norm(s);
        InterventionKind::ALL
            .into_iter()
            .find(|k| norm(k.as_str()) == key || norm(&format!("{k:?}")) == key)
            .ok_or_else(|| Error::invalid(format!("unknown intervention kind `{s}`")))
    }
}

/// Links an intervention instance to the instance it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionLink {
    pub uuid: String,
    pub source_uuid: String,
    pub kind: InterventionKind,
}

pub type LabelMap = BTreeMap<String, Label>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_label: BTreeMap<Label, ClassScore>,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn score_pairs(pairs: impl Iterator<Item = (Label, Label)> + Clone) -> F1Report {
    let mut per_label = BTreeMap::new();
    for class in Label::ALL {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (g, p) in pairs.clone() {
            match (g == class, p == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_label.insert(
            class,
            ClassScore {
                precision,
                recall,
                f1,
                support: tp + fneg,
            },
        );
    }
    let macro_f1 = per_label.values().map(|s| s.f1).sum::<f64>() / Label::ALL.len() as f64;
    F1Report { per_label, macro_f1 }
}

fn check_same_keys(gold: &LabelMap, pred: &LabelMap) -> Result<()> {
    if gold.len() != pred.len() || gold.keys().zip(pred.keys()).any(|(a, b)| a != b) {
        let missing = gold.keys().find(|k| !pred.contains_key(*k));
        let extra = pred.keys().find(|k| !gold.contains_key(*k));
        return Err(Error::invalid(format!(
            "gold and prediction uuid sets differ (first missing prediction: {missing:?}, first unexpected prediction: {extra:?})"
        )));
    }
    Ok(())
}

pub fn macro_f1(gold: &LabelMap, pred: &LabelMap) -> Result<F1Report> {
    check_same_keys(gold, pred)?;
    Ok(score_pairs(gold.iter().map(|(k, g)| (*g, pred[k]))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub n: usize,
    #[serde(flatten)]
    pub scores: F1Report,
}

/// Macro and per-label F1 per group. Instances absent from `groups` are
/// ignored; groups are returned in key order.
pub fn per_group_f1<K: Ord + fmt::Display>(
    gold: &LabelMap,
    pred: &LabelMap,
    groups: &BTreeMap<String, K>,
) -> Result<Vec<GroupScore>> {
    let mut members: BTreeMap<&K, Vec<&str>> = BTreeMap::new();
    for (uuid, key) in groups {
        if !gold.contains_key(uuid) {
            return Err(Error::instance(uuid, "grouped instance has no gold label"));
        }
        if !pred.contains_key(uuid) {
            return Err(Error::instance(uuid, "grouped instance has no prediction"));
        }
        members.entry(key).or_default().push(uuid);
    }
    Ok(members
        .into_iter()
        .map(|(key, uuids)| GroupScore {
            group: key.to_string(),
            n: uuids.len(),
            scores: score_pairs(uuids.iter().map(|u| (gold[*u], pred[*u]))),
        })
        .collect())
}

fn source_prediction<'a>(map: &'a LabelMap, link: &InterventionLink, what: &str) -> Result<&'a Label> {
    map.get(&link.source_uuid).ok_or_else(|| {
        Error::instance(
            &link.uuid,
            format!("source `{}` missing from {what}", link.source_uuid),
        )
    })
}

fn own<'a>(map: &'a LabelMap, link: &InterventionLink, what: &str) -> Result<&'a Label> {
    map.get(&link.uuid)
        .ok_or_else(|| Error::instance(&link.uuid, format!("missing from {what}")))
}

/// Fraction of semantic-preserving interventions predicted with the same
/// label as their source. `None` when there are no such interventions.
pub fn consistency(
    base_pred: &LabelMap,
    intervened_pred: &LabelMap,
    links: &[InterventionLink],
) -> Result<Option<f64>> {
    let mut agree = 0usize;
    for link in links {
        if !link.kind.is_preserving() {
            return Err(Error::instance(
                &link.uuid,
                format!("`{}` is not a semantic-preserving intervention", link.kind),
            ));
        }
        let src = source_prediction(base_pred, link, "base predictions")?;
        let p = own(intervened_pred, link, "intervention predictions")?;
        if src == p {
            agree += 1;
        }
    }
    Ok((!links.is_empty()).then(|| agree as f64 / links.len() as f64))
}

/// Among semantic-altering interventions whose source was predicted
/// correctly, the fraction predicted with the intervention's own (flipped)
/// gold label. `None` when no source was predicted correctly.
pub fn faithfulness(
    base_pred: &LabelMap,
    gold_base: &LabelMap,
    intervened_pred: &LabelMap,
    gold_intervened: &LabelMap,
    links: &[InterventionLink],
) -> Result<Option<f64>> {
    let (mut eligible, mut faithful) = (0usize, 0usize);
    for link in links {
        if !link.kind.is_altering() {
            return Err(Error::instance(
                &link.uuid,
                format!("`{}` is not a semantic-altering intervention", link.kind),
            ));
        }
        let src_gold = source_prediction(gold_base, link, "base gold labels")?;
        let gold = own(gold_intervened, link, "intervention gold labels")?;
        if src_gold == gold {
            return Err(Error::instance(
                &link.uuid,
                "altering intervention keeps its source's gold label",
            ));
        }
        let src_pred = source_prediction(base_pred, link, "base predictions")?;
        let pred = own(intervened_pred, link, "intervention predictions")?;
        if src_pred == src_gold {
            eligible += 1;
            if pred == gold {
                faithful += 1;
            }
        }
    }
    Ok((eligible > 0).then(|| faithful as f64 / eligible as f64))
}

/// Gold annotation for one evaluated instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEntry {
    pub label: Label,
    pub section: Option<Section>,
    pub intervention: Option<InterventionKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub per_label: BTreeMap<Label, ClassScore>,
    pub per_section: Vec<GroupScore>,
    pub per_intervention: Vec<GroupScore>,
    pub consistency: Option<f64>,
    pub faithfulness: Option<f64>,
}

pub fn build_report(
    gold: &BTreeMap<String, GoldEntry>,
    predictions: &LabelMap,
    links: &[InterventionLink],
) -> Result<MetricsReport> {
    let gold_labels: LabelMap = gold.iter().map(|(k, g)| (k.clone(), g.label)).collect();
    let overall = macro_f1(&gold_labels, predictions)?;

    let sections: BTreeMap<String, Section> = gold
        .iter()
        .filter_map(|(k, g)| g.section.map(|s| (k.clone(), s)))
        .collect();
    let mut kinds: BTreeMap<String, InterventionKind> = gold
        .iter()
        .filter_map(|(k, g)| g.intervention.map(|i| (k.clone(), i)))
        .collect();
    for link in links {
        kinds.insert(link.uuid.clone(), link.kind);
    }

    let preserving: Vec<InterventionLink> =
        links.iter().filter(|l| l.kind.is_preserving()).cloned().collect();
    let altering: Vec<InterventionLink> =
        links.iter().filter(|l| l.kind.is_altering()).cloned().collect();

    Ok(MetricsReport {
        macro_f1: overall.macro_f1,
        per_label: overall.per_label,
        per_section: per_group_f1(&gold_labels, predictions, &sections)?,
        per_intervention: per_group_f1(&gold_labels, predictions, &kinds)?,
        consistency: consistency(predictions, predictions, &preserving)?,
        faithfulness: faithfulness(predictions, &gold_labels, predictions, &gold_labels, &altering)?,
    })
}

#[derive(Debug, Serialize)]
struct GroupRow<'a> {
    group_type: &'a str,
    group: &'a str,
    n: usize,
    entailment_f1: f64,
    entailment_support: usize,
    contradiction_f1: f64,
    contradiction_support: usize,
    macro_f1: f64,
}

pub fn group_table_csv(group_type: &str, groups: &[GroupScore]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for g in groups {
        let e = g.scores.per_label[&Label::Entailment];
        let c = g.scores.per_label[&Label::Contradiction];
        w.serialize(GroupRow {
            group_type,
            group: &g.group,
            n: g.n,
            entailment_f1: e.f1,
            entailment_support: e.support,
            contradiction_f1: c.f1,
            contradiction_support: c.support,
            macro_f1: g.scores.macro_f1,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

/// Writes `report.json`, `report_sections.csv` and
/// `report_interventions.csv`; returns the paths written.
pub fn write_report(report: &MetricsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    let sec_path = out_dir.join("report_sections.csv");
    fs::write(&sec_path, group_table_csv("section", &report.per_section))
        .map_err(|e| Error::io(&sec_path, e))?;
    let int_path = out_dir.join("report_interventions.csv");
    fs::write(&int_path, group_table_csv("intervention", &report.per_intervention))
        .map_err(|e| Error::io(&int_path, e))?;
    Ok(vec![json_path, sec_path, int_path])
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionEntry {
    #[serde(rename = "Prediction")]
    prediction: Label,
}

/// Reads a leaderboard-style prediction file:
/// `{"<uuid>": {"Prediction": "Entailment"}, ...}`.
pub fn read_predictions(path: &Path) -> Result<LabelMap> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, PredictionEntry> =
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))?;
    Ok(map.into_iter().map(|(k, v)| (k, v.prediction)).collect())
}

pub fn write_predictions(path: &Path, preds: &LabelMap) -> Result<()> {
    let map: BTreeMap<&String, PredictionEntry> = preds
        .iter()
        .map(|(k, v)| (k, PredictionEntry { prediction: *v }))
        .collect();
    let json = serde_json::to_string_pretty(&map).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Checks that every link's source has a prediction.
pub fn validate_links(preds: &LabelMap, links: &[InterventionLink]) -> Result<()> {
    let known: BTreeSet<&String> = preds.keys().collect();
    for link in links {
        if !known.contains(&link.source_uuid) {
            return Err(Error::instance(
                &link.uuid,
                format!("source `{}` has no base prediction", link.source_uuid),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Contradiction as C, Entailment as E};

    fn labels(xs: &[(&str, Label)]) -> LabelMap {
        xs.iter().map(|(k, l)| (k.to_string(), *l)).collect()
    }

    fn link(uuid: &str, src: &str, kind: InterventionKind) -> InterventionLink {
        InterventionLink {
            uuid: uuid.into(),
            source_uuid: src.into(),
            kind,
        }
    }

    #[test]
    fn worked_macro_f1() {
        let gold = labels(&[("a", E), ("b", E), ("c", C), ("d", C)]);
        let pred = labels(&[("a", E), ("b", C), ("c", C), ("d", C)]);
        let r = macro_f1(&gold, &pred).unwrap();
        assert!((r.per_label[&E].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_label[&C].f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_and_single_class_predictions() {
        let gold = labels(&[("a", E), ("b", E), ("c", C), ("d", C)]);
        assert_eq!(macro_f1(&gold, &gold).unwrap().macro_f1, 1.0);
        let pred = labels(&[("a", C), ("b", C), ("c", C), ("d", C)]);
        let r = macro_f1(&gold, &pred).unwrap();
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_label[&E].f1, 0.0);
    }

    #[test]
    fn uuid_mismatch_is_an_error() {
        let gold = labels(&[("a", E), ("b", C)]);
        let pred = labels(&[("a", E), ("z", C)]);
        assert!(macro_f1(&gold, &pred).is_err());
    }

    #[test]
    fn consistency_counts_agreements() {
        let base = labels(&[("s1", E), ("s2", C), ("s3", E), ("s4", C)]);
        let inter = labels(&[("i1", E), ("i2", C), ("i3", E), ("i4", E)]);
        let links = vec![
            link("i1", "s1", InterventionKind::Paraphrase),
            link("i2", "s2", InterventionKind::Definitions),
            link("i3", "s3", InterventionKind::TextAppended),
            link("i4", "s4", InterventionKind::NumericalParaphrase),
        ];
        assert_eq!(consistency(&base, &inter, &links).unwrap(), Some(0.75));
        assert_eq!(consistency(&base, &inter, &[]).unwrap(), None);
        let bad = vec![link("i1", "s1", InterventionKind::Contradiction)];
        assert!(consistency(&base, &inter, &bad).is_err());
    }

    #[test]
    fn faithfulness_gates_on_correct_sources() {
        let gold_base = labels(&[("s1", E), ("s2", E), ("s3", C)]);
        let base_pred = labels(&[("s1", E), ("s2", E), ("s3", E)]);
        let gold_int = labels(&[("i1", C), ("i2", C), ("i3", E)]);
        let int_pred = labels(&[("i1", C), ("i2", E), ("i3", E)]);
        let links = vec![
            link("i1", "s1", InterventionKind::Contradiction),
            link("i2", "s2", InterventionKind::NumericalContradiction),
            // s3 mispredicted: excluded from the denominator.
            link("i3", "s3", InterventionKind::Contradiction),
        ];
        let f = faithfulness(&base_pred, &gold_base, &int_pred, &gold_int, &links).unwrap();
        assert_eq!(f, Some(0.5));

        let none_correct = labels(&[("s1", C), ("s2", C), ("s3", E)]);
        let f = faithfulness(&none_correct, &gold_base, &int_pred, &gold_int, &links).unwrap();
        assert_eq!(f, None);
    }

    #[test]
    fn faithfulness_rejects_unflipped_gold() {
        let gold_base = labels(&[("s1", E)]);
        let gold_int = labels(&[("i1", E)]);
        let links = vec![link("i1", "s1", InterventionKind::Contradiction)];
        assert!(faithfulness(&gold_base, &gold_base, &gold_int, &gold_int, &links).is_err());
    }

    #[test]
    fn single_group_matches_overall() {
        let gold = labels(&[("a", E), ("b", E), ("c", C), ("d", C)]);
        let pred = labels(&[("a", E), ("b", C), ("c", C), ("d", C)]);
        let groups: BTreeMap<String, Section> =
            gold.keys().map(|k| (k.clone(), Section::Results)).collect();
        let table = per_group_f1(&gold, &pred, &groups).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].scores, macro_f1(&gold, &pred).unwrap());
    }

    #[test]
    fn one_label_group_reports_zero_support() {
        let gold = labels(&[("a", C), ("b", C)]);
        let pred = labels(&[("a", C), ("b", E)]);
        let groups: BTreeMap<String, InterventionKind> = gold
            .keys()
            .map(|k| (k.clone(), InterventionKind::Contradiction))
            .collect();
        let t = per_group_f1(&gold, &pred, &groups).unwrap();
        let e = t[0].scores.per_label[&E];
        assert_eq!((e.support, e.f1), (0, 0.0));
        assert_eq!(t[0].scores.per_label[&C].support, 2);
    }

    #[test]
    fn intervention_kind_parsing() {
        for k in InterventionKind::ALL {
            assert_eq!(k.as_str().parse::<InterventionKind>().unwrap(), k);
        }
        assert_eq!(
            "numerical contradiction".parse::<InterventionKind>().unwrap(),
            InterventionKind::NumericalContradiction
        );
        assert_eq!(
            "TextAppended".parse::<InterventionKind>().unwrap(),
            InterventionKind::TextAppended
        );
        assert!("Negation".parse::<InterventionKind>().is_err());
    }
}
