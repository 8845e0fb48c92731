//! Acronym-expansion perturbations.
//!
//! Short forms found in a hypothesis are expanded in place as `SF (LF)`.
//! Positive mode picks the long form most similar to the hit's context and
//! keeps the label; negative mode picks the least similar one and flips it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::ResolvedPair;
use crate::error::{Error, Result};
use crate::perturb::{LabelAction, PerturbationKind, PerturbedInstance};
use crate::text;

/// Tokens on each side of a hit that form its scoring context.
pub const CONTEXT_WINDOW: usize = 10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcronymInventory {
    entries: BTreeMap<String, Vec<String>>,
    embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

impl AcronymInventory {
    pub fn new(
        entries: BTreeMap<String, Vec<String>>,
        embeddings: Option<BTreeMap<String, Vec<f64>>>,
    ) -> Result<Self> {
        for (sf, lfs) in &entries {
            if sf.is_empty() {
                return Err(Error::invalid("empty short form in inventory"));
            }
            if lfs.is_empty() {
                return Err(Error::invalid(format!("short form `{sf}` has no long forms")));
            }
        }
        if let Some(table) = &embeddings {
            let mut dims = table.values().map(Vec::len);
            if let Some(first) = dims.next() {
                if dims.any(|d| d != first) {
                    return Err(Error::invalid("embedding vectors differ in dimension"));
                }
            }
        }
        Ok(AcronymInventory { entries, embeddings })
    }

    /// Reads `short_form,long_form[,vector]` rows. The optional vector is a
    /// `;`-joined list of floats attached to the long form. Rows with an
    /// empty short form only contribute an embedding (e.g. for context
    /// words).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut table: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            let sf = record.get(0).unwrap_or("");
            let lf = record.get(1).unwrap_or("");
            if lf.is_empty() {
                return Err(Error::invalid(format!("{}: row {} has no long form", path.display(), i + 2)));
            }
            if !sf.is_empty() {
                let lfs = entries.entry(sf.to_string()).or_default();
                if !lfs.iter().any(|x| x == lf) {
                    lfs.push(lf.to_string());
                }
            }
            if let Some(vec) = record.get(2).filter(|v| !v.is_empty()) {
                let parsed = vec
                    .split(';')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| {
                        Error::invalid(format!("{}: row {}: bad vector ({e})", path.display(), i + 2))
                    })?;
                table.insert(lf.to_lowercase(), parsed);
            }
        }
        let embeddings = (!table.is_empty()).then_some(table);
        AcronymInventory::new(entries, embeddings)
    }

    pub fn long_forms(&self, short_form: &str) -> Option<&[String]> {
        self.entries.get(short_form).map(Vec::as_slice)
    }

    pub fn contains(&self, short_form: &str) -> bool {
        self.entries.contains_key(short_form)
    }

    pub fn embeddings(&self) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.embeddings.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortFormHit {
    pub short_form: String,
    /// Offset in characters.
    pub char_offset: usize,
    /// Length in characters.
    pub length: usize,
    pub byte_offset: usize,
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("valid regex"))
}

fn is_candidate(token: &str) -> bool {
    let len = token.chars().count();
    (2..=6).contains(&len) && token.chars().filter(|c| c.is_uppercase()).count() >= 2
}

/// Whole-token inventory short forms in `hypothesis`, left to right.
/// Occurrences already followed by a parenthetical are skipped.
pub fn extract_short_forms(hypothesis: &str, inv: &AcronymInventory) -> Vec<ShortFormHit> {
    token_regex()
        .find_iter(hypothesis)
        .filter(|m| is_candidate(m.as_str()) && inv.contains(m.as_str()))
        .filter(|m| !hypothesis[m.end()..].starts_with(" ("))
        .map(|m| ShortFormHit {
            short_form: m.as_str().to_string(),
            char_offset: hypothesis[..m.start()].chars().count(),
            length: m.as_str().chars().count(),
            byte_offset: m.start(),
        })
        .collect()
}

/// Up to `CONTEXT_WINDOW` whitespace tokens either side of the hit,
/// including the token holding it.
pub fn hit_context(hypothesis: &str, hit: &ShortFormHit) -> String {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in hypothesis.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, hypothesis.len()));
    }
    let Some(center) = spans
        .iter()
        .position(|&(s, e)| s <= hit.byte_offset && hit.byte_offset < e)
    else {
        return String::new();
    };
    let lo = center.saturating_sub(CONTEXT_WINDOW);
    let hi = (center + CONTEXT_WINDOW + 1).min(spans.len());
    spans[lo..hi]
        .iter()
        .map(|&(s, e)| &hypothesis[s..e])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scores how well a long form fits a context; results lie in [-1, 1].
pub trait SimilarityScorer {
    fn score(&self, long_form: &str, context: &str) -> f64;
}

fn cosine_sparse(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity between character-trigram count vectors of the
/// lowercased, space-padded strings.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

impl TrigramCosine {
    pub fn trigrams(s: &str) -> HashMap<String, f64> {
        let norm = s
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        let mut counts = HashMap::new();
        for w in chars.windows(3) {
            *counts.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
        }
        counts
    }
}

impl SimilarityScorer for TrigramCosine {
    fn score(&self, long_form: &str, context: &str) -> f64 {
        cosine_sparse(&Self::trigrams(long_form), &Self::trigrams(context))
    }
}

/// Cosine between the long form's vector and the mean vector of the
/// context tokens found in the table. Missing vectors score 0.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingScorer<'a> {
    table: &'a BTreeMap<String, Vec<f64>>,
}

impl<'a> EmbeddingScorer<'a> {
    pub fn new(table: &'a BTreeMap<String, Vec<f64>>) -> Self {
        EmbeddingScorer { table }
    }
}

impl SimilarityScorer for EmbeddingScorer<'_> {
    fn score(&self, long_form: &str, context: &str) -> f64 {
        let Some(lf) = self.table.get(&long_form.to_lowercase()) else {
            return 0.0;
        };
        let mut mean = vec![0.0; lf.len()];
        let mut n = 0usize;
        for tok in text::normalized_tokens(context) {
            if let Some(v) = self.table.get(&tok) {
                mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
                n += 1;
            }
        }
        if n == 0 {
            return 0.0;
        }
        let dot: f64 = lf.iter().zip(&mean).map(|(a, b)| a * b).sum();
        let na = lf.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

/// Candidates by descending score; ties ordered lexicographically.
pub fn rank_long_forms(
    short_form: &str,
    context: &str,
    candidates: &[String],
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<(String, f64)>> {
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no long-form candidates for `{short_form}`")));
    }
    let mut ranked: Vec<(String, f64)> = candidates
        .iter()
        .map(|lf| (lf.clone(), scorer.score(lf, context).clamp(-1.0, 1.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcronymMode {
    Positive,
    Negative,
}

impl FromStr for AcronymMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(AcronymMode::Positive),
            "negative" => Ok(AcronymMode::Negative),
            other => Err(Error::invalid(format!("unknown acronym mode `{other}`"))),
        }
    }
}

/// The long form chosen for one hit, or `None` when the mode has nothing
/// distinct to offer (negative mode with a single candidate).
fn choose(ranked: &[(String, f64)], mode: AcronymMode) -> Option<&str> {
    let top = ranked.first()?.0.as_str();
    match mode {
        AcronymMode::Positive => Some(top),
        AcronymMode::Negative => ranked
            .iter()
            .rev()
            .map(|(lf, _)| lf.as_str())
            .find(|lf| *lf != top),
    }
}

/// Expands every short form in the pair's hypothesis, producing at most one
/// perturbed instance.
pub fn perturb_acronyms(
    pair: &ResolvedPair,
    inv: &AcronymInventory,
    mode: AcronymMode,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<PerturbedInstance>> {
    let label = pair
        .label
        .ok_or_else(|| Error::instance(&pair.uuid, "cannot perturb an unlabeled instance"))?;
    let hyp = &pair.hypothesis;
    let mut out = String::with_capacity(hyp.len() + 32);
    let mut cursor = 0;
    let mut expanded = 0;
    for hit in extract_short_forms(hyp, inv) {
        let candidates = inv.long_forms(&hit.short_form).unwrap_or(&[]);
        let ranked = rank_long_forms(&hit.short_form, &hit_context(hyp, &hit), candidates, scorer)?;
        let Some(lf) = choose(&ranked, mode) else {
            continue;
        };
        let end = hit.byte_offset + hit.short_form.len();
        out.push_str(&hyp[cursor..end]);
        out.push_str(" (");
        out.push_str(lf);
        out.push(')');
        cursor = end;
        expanded += 1;
    }
    if expanded == 0 {
        return Ok(Vec::new());
    }
    out.push_str(&hyp[cursor..]);
    let (kind, action) = match mode {
        AcronymMode::Positive => (PerturbationKind::AcronymPositive, LabelAction::Preserve),
        AcronymMode::Negative => (PerturbationKind::AcronymNegative, LabelAction::Flip),
    };
    Ok(vec![PerturbedInstance::derive(&pair.uuid, label, kind, action, out)])
}

/// One candidate line of the human-review sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub source_uuid: String,
    pub short_form: String,
    pub char_offset: usize,
    pub rank: usize,
    pub long_form: String,
    pub score: f64,
    pub context: String,
    pub approved: String,
}

/// Every ranked candidate for every hit, for manual sign-off. The
/// `approved` column is left blank.
pub fn review_rows(
    pair: &ResolvedPair,
    inv: &AcronymInventory,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<ReviewRow>> {
    let mut rows = Vec::new();
    for hit in extract_short_forms(&pair.hypothesis, inv) {
        let context = hit_context(&pair.hypothesis, &hit);
        let candidates = inv.long_forms(&hit.short_form).unwrap_or(&[]);
        for (rank, (lf, score)) in rank_long_forms(&hit.short_form, &context, candidates, scorer)?
            .into_iter()
            .enumerate()
        {
            rows.push(ReviewRow {
                source_uuid: pair.uuid.clone(),
                short_form: hit.short_form.clone(),
                char_offset: hit.char_offset,
                rank: rank + 1,
                long_form: lf,
                score,
                context: context.clone(),
                approved: String::new(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn inventory(entries: &[(&str, &[&str])]) -> AcronymInventory {
        AcronymInventory::new(
            entries
                .iter()
                .map(|(sf, lfs)| (sf.to_string(), lfs.iter().map(|s| s.to_string()).collect()))
                .collect(),
            None,
        )
        .unwrap()
    }

    fn pair(hyp: &str, label: Label) -> ResolvedPair {
        ResolvedPair {
            uuid: "src".into(),
            premise: "premise".into(),
            hypothesis: hyp.into(),
            label: Some(label),
        }
    }

    /// Independent character scan: positions where `sf` starts and is not
    /// flanked by letters or digits.
    fn scan_offsets(text: &str, sf: &str) -> Vec<usize> {
        let chars: Vec<char> = text.chars().collect();
        let pat: Vec<char> = sf.chars().collect();
        (0..chars.len().saturating_sub(pat.len() - 1))
            .filter(|&i| chars[i..i + pat.len()] == pat[..])
            .filter(|&i| i == 0 || !chars[i - 1].is_alphanumeric())
            .filter(|&i| i + pat.len() == chars.len() || !chars[i + pat.len()].is_alphanumeric())
            .collect()
    }

    #[test]
    fn hits_match_character_scan() {
        let inv = inventory(&[("ER", &["estrogen receptor"]), ("PR", &["progesterone receptor"])]);
        let text = "Patients with ER+ and PR- tumors";
        let hits = extract_short_forms(text, &inv);
        assert_eq!(hits.len(), 2);
        assert_eq!((hits[0].short_form.as_str(), hits[0].char_offset), ("ER", 14));
        assert_eq!((hits[1].short_form.as_str(), hits[1].char_offset), ("PR", 22));
        assert_eq!(scan_offsets(text, "ER"), vec![14]);
        assert_eq!(scan_offsets(text, "PR"), vec![22]);
    }

    #[test]
    fn no_hits_on_plain_text() {
        let inv = inventory(&[("ER", &["estrogen receptor"])]);
        assert!(extract_short_forms("", &inv).is_empty());
        assert!(extract_short_forms("the patient was treated", &inv).is_empty());
        // Not whole tokens.
        assert!(extract_short_forms("HERA and PERT", &inv).is_empty());
    }

    #[test]
    fn char_offsets_count_characters_not_bytes() {
        let inv = inventory(&[("ER", &["estrogen receptor"])]);
        let hits = extract_short_forms("µ≥ ER", &inv);
        assert_eq!(hits[0].char_offset, 3);
        assert_eq!(hits[0].byte_offset, "µ≥ ".len());
    }

    #[test]
    fn trigram_ranking_prefers_context_match() {
        let cands = vec!["emergency room".to_string(), "estrogen receptor".to_string()];
        let ranked =
            rank_long_forms("ER", "estrogen receptor positive tumors", &cands, &TrigramCosine).unwrap();
        assert_eq!(ranked[0].0, "estrogen receptor");
        assert!(ranked.iter().all(|(_, s)| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn ranking_edge_cases() {
        assert!(rank_long_forms("ER", "ctx", &[], &TrigramCosine).is_err());
        let one = vec!["zzz".to_string()];
        assert_eq!(rank_long_forms("ER", "ctx", &one, &TrigramCosine).unwrap()[0].0, "zzz");
        struct Flat;
        impl SimilarityScorer for Flat {
            fn score(&self, _: &str, _: &str) -> f64 {
                0.25
            }
        }
        let cands = vec!["b form".to_string(), "a form".to_string()];
        let ranked = rank_long_forms("X", "", &cands, &Flat).unwrap();
        assert_eq!(ranked[0], ("a form".to_string(), 0.25));
        assert_eq!(ranked[1], ("b form".to_string(), 0.25));
    }

    #[test]
    fn positive_and_negative_modes() {
        // "ER status was assessed" shares no trigram with either candidate,
        // so the lexicographic tie-break decides the order.
        let ctx = "ER status was assessed";
        let er = TrigramCosine.score("estrogen receptor", ctx);
        let xr = TrigramCosine.score("extraction ratio", ctx);
        assert_eq!((er, xr), (0.0, 0.0));
        let inv = inventory(&[("ER", &["extraction ratio", "estrogen receptor"])]);
        let p = pair(ctx, Label::Entailment);
        let pos = perturb_acronyms(&p, &inv, AcronymMode::Positive, &TrigramCosine).unwrap();
        assert_eq!(pos[0].hypothesis, "ER (estrogen receptor) status was assessed");
        assert_eq!(pos[0].label, Label::Entailment);
        assert_eq!(pos[0].label_action, LabelAction::Preserve);
        let neg = perturb_acronyms(&p, &inv, AcronymMode::Negative, &TrigramCosine).unwrap();
        assert_eq!(neg[0].hypothesis, "ER (extraction ratio) status was assessed");
        assert_eq!(neg[0].label, Label::Contradiction);
        assert_eq!(neg[0].new_uuid, "src_acr_neg");
    }

    #[test]
    fn context_decides_between_senses() {
        let inv = inventory(&[("ER", &["emergency room", "estrogen receptor"])]);
        let p = pair("ER positive status means the tumor expresses the receptor for estrogen", Label::Entailment);
        let pos = perturb_acronyms(&p, &inv, AcronymMode::Positive, &TrigramCosine).unwrap();
        assert!(pos[0].hypothesis.starts_with("ER (estrogen receptor) positive"));
    }

    #[test]
    fn negative_skips_single_candidate_hits() {
        let inv = inventory(&[("ER", &["estrogen receptor"]), ("PR", &["partial response", "progesterone receptor"])]);
        let only_er = pair("ER status", Label::Entailment);
        assert!(perturb_acronyms(&only_er, &inv, AcronymMode::Negative, &TrigramCosine)
            .unwrap()
            .is_empty());
        let both = pair("ER and PR status", Label::Entailment);
        let neg = perturb_acronyms(&both, &inv, AcronymMode::Negative, &TrigramCosine).unwrap();
        assert_eq!(neg.len(), 1);
        assert!(neg[0].hypothesis.starts_with("ER and PR ("));
    }

    #[test]
    fn no_short_forms_no_output() {
        let inv = inventory(&[("ER", &["estrogen receptor"])]);
        let p = pair("the dose was fixed", Label::Contradiction);
        assert!(perturb_acronyms(&p, &inv, AcronymMode::Positive, &TrigramCosine).unwrap().is_empty());
    }

    #[test]
    fn unlabeled_instance_is_rejected() {
        let inv = inventory(&[("ER", &["estrogen receptor"])]);
        let mut p = pair("ER status", Label::Entailment);
        p.label = None;
        assert!(perturb_acronyms(&p, &inv, AcronymMode::Positive, &TrigramCosine).is_err());
    }

    #[test]
    fn context_window_is_bounded() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let mut text = words[..15].join(" ");
        text.push_str(" ER ");
        text.push_str(&words[15..].join(" "));
        let inv = inventory(&[("ER", &["estrogen receptor"])]);
        let hit = &extract_short_forms(&text, &inv)[0];
        let ctx = hit_context(&text, hit);
        assert_eq!(ctx.split_whitespace().count(), 21);
        assert!(ctx.starts_with("w5 ") && ctx.ends_with(" w24"));
    }

    #[test]
    fn embedding_scorer_uses_table() {
        let table = BTreeMap::from([
            ("estrogen receptor".to_string(), vec![1.0, 0.0]),
            ("emergency room".to_string(), vec![0.0, 1.0]),
            ("tumor".to_string(), vec![0.9, 0.1]),
        ]);
        let s = EmbeddingScorer::new(&table);
        assert!(s.score("estrogen receptor", "ER tumor") > s.score("emergency room", "ER tumor"));
        assert_eq!(s.score("unknown", "ER tumor"), 0.0);
        assert_eq!(s.score("estrogen receptor", "nothing here"), 0.0);
    }

    #[test]
    fn inventory_validation() {
        let entries = BTreeMap::from([("ER".to_string(), vec![])]);
        assert!(AcronymInventory::new(entries, None).is_err());
        let table = BTreeMap::from([("a".to_string(), vec![1.0]), ("b".to_string(), vec![1.0, 2.0])]);
        assert!(AcronymInventory::new(BTreeMap::new(), Some(table)).is_err());
    }
}
