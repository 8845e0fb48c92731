//! Numerical perturbations: shifting entity values and flipping comparator
//! words. Both edits flip the gold label and are emitted as separate
//! instances.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::corpus::ResolvedPair;
use crate::error::{Error, Result};
use crate::perturb::{LabelAction, PerturbationKind, PerturbedInstance};
use crate::text::fnv1a64;

const DEFAULT_LEXICON: &str = include_str!("../../data/comparators_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Age,
    Dosage,
    LabValue,
    Duration,
    Date,
}

impl EntityKind {
    /// Values of these kinds must stay positive after a shift.
    fn requires_positive(self) -> bool {
        matches!(self, EntityKind::Age | EntityKind::Dosage | EntityKind::Duration)
    }
}

/// A numeric entity in a hypothesis. `start..end` is a character range
/// covering the number only, never its unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
    pub value: f64,
    #[serde(default)]
    pub unit: Option<String>,
}

/// One line of an external span file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpan {
    pub uuid: String,
    #[serde(flatten)]
    pub span: EntitySpan,
}

/// Groups external spans by instance uuid.
pub fn load_external_spans(path: &Path) -> Result<BTreeMap<String, Vec<EntitySpan>>> {
    let mut out: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
    for ext in crate::corpus::read_jsonl::<ExternalSpan>(path)? {
        out.entry(ext.uuid).or_default().push(ext.span);
    }
    Ok(out)
}

fn char_to_byte(text: &str, char_idx: usize) -> Option<usize> {
    if char_idx == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(char_idx).map(|(b, _)| b)
}

fn validate_external(text: &str, spans: &[EntitySpan]) -> Result<()> {
    let n_chars = text.chars().count();
    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for s in spans {
        if s.start >= s.end || s.end > n_chars {
            return Err(Error::invalid(format!(
                "external span {}..{} out of range for a {n_chars}-character hypothesis",
                s.start, s.end
            )));
        }
        let (b0, b1) = (char_to_byte(text, s.start).unwrap(), char_to_byte(text, s.end).unwrap());
        let surface = &text[b0..b1];
        match surface.trim().parse::<f64>() {
            Ok(v) if (v - s.value).abs() <= 1e-9 * v.abs().max(1.0) => {}
            _ => {
                return Err(Error::invalid(format!(
                    "external span `{surface}` does not parse to {}",
                    s.value
                )))
            }
        }
        ranges.push((s.start, s.end));
    }
    ranges.sort_unstable();
    if ranges.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::invalid("external spans overlap"));
    }
    Ok(())
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"))
}

fn unit_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^ ?(%|[\p{L}µ×][\p{L}\p{N}µ/^²³×\-]*)").expect("valid regex")
    })
}

fn range_joiner_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:-|–|to|and|or)\s*$").expect("valid regex"))
}

const DOSAGE_UNITS: &[&str] = &[
    "mg", "g", "mcg", "µg", "ug", "ng", "ml", "iu", "units", "unit", "gy", "mg/m2", "mg/m²",
    "mg/kg", "mg/day", "mg/d", "g/m2", "g/m²", "µg/kg", "mcg/kg", "ml/kg", "auc",
];
const LAB_UNITS: &[&str] = &[
    "%", "mmol/l", "µmol/l", "umol/l", "mg/dl", "g/dl", "g/l", "ng/ml", "pg/ml", "u/l", "iu/l",
    "cells/mm3", "cells/µl", "x10^9/l", "×10^9/l", "mmhg", "bpm", "kg/m2", "kg/m²",
];
const TIME_UNITS: &[&str] = &[
    "day", "days", "week", "weeks", "wk", "wks", "month", "months", "mo", "year", "years", "yr",
    "yrs", "hour", "hours", "hr", "hrs", "h", "minute", "minutes", "min", "mins", "cycle", "cycles",
];
const AGE_UNITS: &[&str] = &["year-old", "years-old", "yo", "y/o"];
const AGE_CUES: &[&str] = &["aged", "age", "ages", "ageing"];
const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec",
];

struct RawNumber {
    byte_start: usize,
    byte_end: usize,
    value: f64,
    unit: Option<String>,
}

fn lower_words_before(text: &str, byte: usize, n: usize) -> Vec<String> {
    text[..byte]
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .rev()
        .take(n)
        .map(str::to_lowercase)
        .collect()
}

fn classify(text: &str, num: &RawNumber) -> Option<EntityKind> {
    let unit = num.unit.as_deref().map(str::to_lowercase);
    let before = lower_words_before(text, num.byte_start, 3);
    let age_cue = before.iter().any(|w| AGE_CUES.contains(&w.as_str()));
    let after = text[num.byte_end..].to_lowercase();
    match unit.as_deref() {
        Some(u) if AGE_UNITS.contains(&u) => Some(EntityKind::Age),
        Some(u) if TIME_UNITS.contains(&u) => {
            let tail = after.trim_start_matches(|c: char| c.is_alphanumeric() || c == ' ');
            let old = after.contains(" old") && (after.find(" old") < after.find([',', '.']));
            let year_like = u.starts_with('y');
            if year_like && (age_cue || old || tail.starts_with("of age") || after.contains("of age") && after.find("of age") < Some(20)) {
                Some(EntityKind::Age)
            } else {
                Some(EntityKind::Duration)
            }
        }
        Some(u) if DOSAGE_UNITS.contains(&u) => Some(EntityKind::Dosage),
        Some(u) if LAB_UNITS.contains(&u) => Some(EntityKind::LabValue),
        _ => {
            let integral = num.value.fract() == 0.0;
            if age_cue && before.first().is_some_and(|w| AGE_CUES.contains(&w.as_str())) {
                Some(EntityKind::Age)
            } else if integral
                && (((1900.0..2100.0).contains(&num.value) && text[num.byte_start..num.byte_end].len() == 4)
                    || before.first().is_some_and(|w| MONTHS.contains(&w.as_str())))
            {
                Some(EntityKind::Date)
            } else {
                None
            }
        }
    }
}

/// Built-in number-plus-context patterns. Spans cover the digits only.
fn pattern_entities(text: &str) -> Vec<EntitySpan> {
    let mut raw: Vec<RawNumber> = Vec::new();
    for m in number_regex().find_iter(text) {
        let prev = text[..m.start()].chars().next_back();
        if prev.is_some_and(|c| c.is_alphanumeric() || c == '.' || c == '_') {
            continue;
        }
        let rest = &text[m.end()..];
        let unit = unit_regex().captures(rest).map(|c| {
            c[1].trim_end_matches(['-', '.']).to_string()
        });
        // A letter glued to the number that is not a known unit makes this
        // part of an identifier (e.g. "3a").
        if rest.starts_with(|c: char| c.is_alphabetic()) {
            let u = unit.as_deref().unwrap_or("").to_lowercase();
            let known = [DOSAGE_UNITS, LAB_UNITS, TIME_UNITS, AGE_UNITS]
                .iter()
                .any(|set| set.contains(&u.as_str()));
            if !known {
                continue;
            }
        }
        let Ok(value) = m.as_str().parse::<f64>() else {
            continue;
        };
        raw.push(RawNumber {
            byte_start: m.start(),
            byte_end: m.end(),
            value,
            unit,
        });
    }
    // Ranges such as "18 to 65 years": the first bound takes the unit of
    // the second.
    for i in (0..raw.len().saturating_sub(1)).rev() {
        let known_unit = |u: &Option<String>| {
            u.as_deref().is_some_and(|u| {
                let u = u.to_lowercase();
                [DOSAGE_UNITS, LAB_UNITS, TIME_UNITS, AGE_UNITS]
                    .iter()
                    .any(|set| set.contains(&u.as_str()))
            })
        };
        if !known_unit(&raw[i].unit) {
            let between = &text[raw[i].byte_end..raw[i + 1].byte_start];
            if range_joiner_regex().is_match(between) && known_unit(&raw[i + 1].unit) {
                raw[i].unit = raw[i + 1].unit.clone();
            }
        }
    }
    // Age cues carry over to the upper bound of a range.
    let mut out = Vec::new();
    let mut prev_kind: Option<(EntityKind, usize)> = None;
    for num in &raw {
        let mut kind = classify(text, num);
        if let (Some(EntityKind::Duration), Some((EntityKind::Age, prev_end))) = (kind, prev_kind) {
            if range_joiner_regex().is_match(&text[prev_end..num.byte_start]) {
                kind = Some(EntityKind::Age);
            }
        }
        prev_kind = kind.map(|k| (k, num.byte_end));
        if let Some(kind) = kind {
            out.push(EntitySpan {
                kind,
                start: text[..num.byte_start].chars().count(),
                end: text[..num.byte_end].chars().count(),
                value: num.value,
                unit: num.unit.clone(),
            });
        }
    }
    out
}

/// Entities in `hypothesis`. External spans, when supplied, are validated
/// and returned verbatim; otherwise the built-in patterns are applied.
pub fn detect_entities(hypothesis: &str, external: Option<&[EntitySpan]>) -> Result<Vec<EntitySpan>> {
    match external {
        Some(spans) => {
            validate_external(hypothesis, spans)?;
            Ok(spans.to_vec())
        }
        None => Ok(pattern_entities(hypothesis)),
    }
}

#[derive(Debug, Clone)]
pub struct ComparatorLexicon {
    pairs: Vec<(String, String)>,
    antonyms: BTreeMap<String, String>,
    matcher: Regex,
}

impl PartialEq for ComparatorLexicon {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs
    }
}

impl ComparatorLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut antonyms = BTreeMap::new();
        for (a, b) in &pairs {
            for p in [a, b] {
                if p.is_empty() || *p != p.to_lowercase() || p.split(' ').any(str::is_empty) {
                    return Err(Error::invalid(format!(
                        "comparator phrase `{p}` must be lowercase with single spaces"
                    )));
                }
            }
            if a == b {
                return Err(Error::invalid(format!("comparator `{a}` paired with itself")));
            }
            for (from, to) in [(a, b), (b, a)] {
                if antonyms.insert(from.clone(), to.clone()).is_some() {
                    return Err(Error::invalid(format!("comparator `{from}` appears in two pairs")));
                }
            }
        }
        let mut phrases: Vec<&String> = antonyms.keys().collect();
        phrases.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));
        let alternation = phrases
            .iter()
            .map(|p| regex::escape(p))
            .collect::<Vec<_>>()
            .join("|");
        let pattern = if alternation.is_empty() {
            // Matches nothing.
            r"[^\s\S]".to_string()
        } else {
            format!(r"(?i)\b(?:{alternation})\b")
        };
        let matcher = Regex::new(&pattern).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(ComparatorLexicon {
            pairs,
            antonyms,
            matcher,
        })
    }

    /// Parses `phrase|antonym` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once('|')
                .ok_or_else(|| Error::invalid(format!("lexicon line {}: expected `a|b`", i + 1)))?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        ComparatorLexicon::new(pairs)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn antonym(&self, phrase: &str) -> Option<&str> {
        self.antonyms.get(&phrase.to_lowercase()).map(String::as_str)
    }
}

impl Default for ComparatorLexicon {
    fn default() -> Self {
        ComparatorLexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

fn match_case(template: &str, replacement: &str) -> String {
    let letters: Vec<char> = template.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

/// Replaces every whole-word lexicon phrase by its antonym in one pass,
/// longest phrase first, keeping the case pattern of the match.
pub fn flip_comparators(hypothesis: &str, lex: &ComparatorLexicon) -> (String, usize) {
    let mut count = 0;
    let out = lex
        .matcher
        .replace_all(hypothesis, |caps: &Captures| {
            let found = &caps[0];
            match lex.antonym(found) {
                Some(anto) => {
                    count += 1;
                    match_case(found, anto)
                }
                None => found.to_string(),
            }
        })
        .into_owned();
    (out, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaPolicy {
    /// Shift by a percentage of the value.
    AddPercent(f64),
    /// Shift by a fixed amount.
    AddAbsolute(f64),
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::AddPercent(10.0)
    }
}

impl fmt::Display for DeltaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaPolicy::AddPercent(p) => write!(f, "percent:{p}"),
            DeltaPolicy::AddAbsolute(k) => write!(f, "abs:{k}"),
        }
    }
}

impl FromStr for DeltaPolicy {
    type Err = Error;

    /// `percent:<p>` or `abs:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, amount) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("delta policy `{s}`: expected percent:<p> or abs:<k>")))?;
        let amount: f64 = amount
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("delta policy `{s}`: bad amount")))?;
        if !amount.is_finite() || amount == 0.0 {
            return Err(Error::invalid(format!("delta policy `{s}`: amount must be finite and nonzero")));
        }
        match kind.trim() {
            "percent" | "pct" => Ok(DeltaPolicy::AddPercent(amount)),
            "abs" | "absolute" => Ok(DeltaPolicy::AddAbsolute(amount)),
            other => Err(Error::invalid(format!("unknown delta policy kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NumericOptions {
    pub policy: DeltaPolicy,
    /// Draw the direction (add or subtract) per instance from `seed`.
    pub randomize_sign: bool,
    pub seed: u64,
}

fn decimals(surface: &str) -> usize {
    surface.split_once('.').map_or(0, |(_, frac)| frac.len())
}

fn decimals_of(x: f64) -> usize {
    let s = format!("{}", x.abs());
    decimals(&s)
}

/// New surface text for one entity, or `None` when the shift is rejected.
pub fn shift_value(
    kind: EntityKind,
    surface: &str,
    value: f64,
    policy: DeltaPolicy,
    sign: f64,
) -> Option<String> {
    if kind == EntityKind::Date {
        let years = match policy {
            DeltaPolicy::AddAbsolute(k) => (sign * k).round(),
            DeltaPolicy::AddPercent(p) => sign * p.signum(),
        };
        let years = if years == 0.0 { sign } else { years };
        return Some(format!("{}", (value + years) as i64));
    }
    let (raw, places) = match policy {
        DeltaPolicy::AddPercent(p) => (value * (1.0 + sign * p / 100.0), decimals(surface)),
        DeltaPolicy::AddAbsolute(k) => (value + sign * k, decimals(surface).max(decimals_of(k))),
    };
    let unit = 10f64.powi(-(places as i32));
    let mut shifted = (raw / unit).round() * unit;
    if (shifted - value).abs() < unit / 2.0 {
        // Rounding swallowed the shift; move one unit in the last place.
        let dir = if raw >= value { 1.0 } else { -1.0 };
        shifted = value + dir * unit;
    }
    if kind.requires_positive() && shifted <= 0.0 {
        return None;
    }
    Some(format!("{:.*}", places, shifted))
}

/// Value-shifted and comparator-flipped variants of one labeled pair.
pub fn perturb_numeric_instance(
    pair: &ResolvedPair,
    lex: &ComparatorLexicon,
    opts: &NumericOptions,
    external_spans: Option<&[EntitySpan]>,
) -> Result<Vec<PerturbedInstance>> {
    let label = pair
        .label
        .ok_or_else(|| Error::instance(&pair.uuid, "cannot perturb an unlabeled instance"))?;
    let hyp = &pair.hypothesis;
    let mut entities = detect_entities(hyp, external_spans)
        .map_err(|e| Error::instance(&pair.uuid, e.to_string()))?;
    entities.sort_by_key(|e| e.start);

    let sign = if opts.randomize_sign {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ fnv1a64(pair.uuid.as_bytes()));
        if rng.gen_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    } else {
        1.0
    };

    let mut out = Vec::new();
    let mut rewritten = String::with_capacity(hyp.len() + 8);
    let mut cursor = 0;
    let mut changed = 0;
    for ent in &entities {
        let b0 = char_to_byte(hyp, ent.start).expect("validated span");
        let b1 = char_to_byte(hyp, ent.end).expect("validated span");
        let surface = hyp[b0..b1].trim();
        let Some(new_surface) = shift_value(ent.kind, surface, ent.value, opts.policy, sign) else {
            log::debug!("{}: skipping {:?} entity `{surface}`", pair.uuid, ent.kind);
            continue;
        };
        rewritten.push_str(&hyp[cursor..b0]);
        rewritten.push_str(&new_surface);
        cursor = b1;
        changed += 1;
    }
    rewritten.push_str(&hyp[cursor..]);
    if changed > 0 && rewritten != *hyp {
        out.push(PerturbedInstance::derive(
            &pair.uuid,
            label,
            PerturbationKind::NumericValue,
            LabelAction::Flip,
            rewritten,
        ));
    }

    let (flipped, flips) = flip_comparators(hyp, lex);
    if flips > 0 && flipped != *hyp {
        out.push(PerturbedInstance::derive(
            &pair.uuid,
            label,
            PerturbationKind::NumericComparator,
            LabelAction::Flip,
            flipped,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn pair(hyp: &str, label: Label) -> ResolvedPair {
        ResolvedPair {
            uuid: "n1".into(),
            premise: "p".into(),
            hypothesis: hyp.into(),
            label: Some(label),
        }
    }

    fn abs5() -> NumericOptions {
        NumericOptions {
            policy: DeltaPolicy::AddAbsolute(5.0),
            ..NumericOptions::default()
        }
    }

    fn surface<'a>(text: &'a str, span: &EntitySpan) -> &'a str {
        let b0 = char_to_byte(text, span.start).unwrap();
        let b1 = char_to_byte(text, span.end).unwrap();
        &text[b0..b1]
    }

    #[test]
    fn age_range_detected() {
        let text = "patients aged 18 to 65 years";
        let ents = detect_entities(text, None).unwrap();
        assert_eq!(ents.len(), 2);
        assert!(ents.iter().all(|e| e.kind == EntityKind::Age));
        assert_eq!((surface(text, &ents[0]), ents[0].value), ("18", 18.0));
        assert_eq!((surface(text, &ents[1]), ents[1].value), ("65", 65.0));
    }

    #[test]
    fn dosage_detected() {
        let text = "received 50 mg daily";
        let ents = detect_entities(text, None).unwrap();
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].kind, EntityKind::Dosage);
        assert_eq!(ents[0].value, 50.0);
        assert_eq!(ents[0].unit.as_deref(), Some("mg"));
        assert_eq!(surface(text, &ents[0]), "50");
    }

    #[test]
    fn other_kinds_detected() {
        let kinds = |t: &str| detect_entities(t, None).unwrap().into_iter().map(|e| e.kind).collect::<Vec<_>>();
        assert_eq!(kinds("treated for 12 weeks"), vec![EntityKind::Duration]);
        assert_eq!(kinds("hemoglobin of 11.5 g/dL at baseline"), vec![EntityKind::LabValue]);
        assert_eq!(kinds("a response rate of 24.8%"), vec![EntityKind::LabValue]);
        assert_eq!(kinds("enrolled in March 2012"), vec![EntityKind::Date]);
        assert_eq!(kinds("women 50 years of age or older"), vec![EntityKind::Age]);
        assert_eq!(kinds("a 45 year-old woman"), vec![EntityKind::Age]);
        assert_eq!(kinds("dosed 50mg twice"), vec![EntityKind::Dosage]);
        assert!(kinds("no numeric content here").is_empty());
        assert!(kinds("HER2 and NCT00001234 cohort 3a").is_empty());
    }

    #[test]
    fn external_spans_returned_verbatim_and_validated() {
        let text = "received 50 mg daily";
        let span = EntitySpan {
            kind: EntityKind::LabValue,
            start: 9,
            end: 11,
            value: 50.0,
            unit: None,
        };
        assert_eq!(detect_entities(text, Some(std::slice::from_ref(&span))).unwrap(), vec![span.clone()]);
        let oob = EntitySpan { end: 40, ..span.clone() };
        assert!(detect_entities(text, Some(&[oob])).is_err());
        let wrong = EntitySpan { value: 51.0, ..span.clone() };
        assert!(detect_entities(text, Some(&[wrong])).is_err());
        let overlap = EntitySpan { start: 10, end: 11, value: 0.0, ..span.clone() };
        assert!(detect_entities(text, Some(&[span, overlap])).is_err());
    }

    #[test]
    fn comparator_examples() {
        let lex = ComparatorLexicon::default();
        assert_eq!(flip_comparators("a lower dose", &lex), ("a higher dose".to_string(), 1));
        assert_eq!(
            flip_comparators("more than a week", &lex),
            ("less than a week".to_string(), 1)
        );
        assert_eq!(
            flip_comparators("the dose was fixed", &lex),
            ("the dose was fixed".to_string(), 0)
        );
        assert_eq!(
            flip_comparators("Lower doses, at least 3, MORE often", &lex),
            ("Higher doses, at most 3, LESS often".to_string(), 3)
        );
        // Whole words only.
        assert_eq!(flip_comparators("slowerly mores", &lex).1, 0);
    }

    #[test]
    fn default_lexicon_has_twelve_pairs() {
        assert_eq!(ComparatorLexicon::default().pairs().len(), 12);
    }

    #[test]
    fn lexicon_validation() {
        let p = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert!(ComparatorLexicon::new(vec![p("Lower", "higher")]).is_err());
        assert!(ComparatorLexicon::new(vec![p("lower", "higher"), p("higher", "less")]).is_err());
        assert!(ComparatorLexicon::new(vec![p("same", "same")]).is_err());
        assert!(ComparatorLexicon::parse("lower higher").is_err());
        let empty = ComparatorLexicon::new(vec![]).unwrap();
        assert_eq!(flip_comparators("lower", &empty).1, 0);
    }

    #[test]
    fn value_shift_examples() {
        let lex = ComparatorLexicon::default();
        let out = perturb_numeric_instance(&pair("received 50 mg daily", Label::Entailment), &lex, &abs5(), None)
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].hypothesis, "received 55 mg daily");
        assert_eq!(out[0].label, Label::Contradiction);
        assert_eq!(out[0].kind, PerturbationKind::NumericValue);
        assert_eq!(
            shift_value(EntityKind::Duration, "20", 20.0, DeltaPolicy::AddAbsolute(5.0), 1.0).as_deref(),
            Some("25")
        );
    }

    #[test]
    fn percent_shift_keeps_precision() {
        let p = DeltaPolicy::AddPercent(10.0);
        assert_eq!(shift_value(EntityKind::LabValue, "11.5", 11.5, p, 1.0).as_deref(), Some("12.7"));
        assert_eq!(shift_value(EntityKind::Dosage, "50", 50.0, p, 1.0).as_deref(), Some("55"));
        // 10% of 2 rounds away; bumped by one unit instead.
        assert_eq!(shift_value(EntityKind::Dosage, "2", 2.0, p, 1.0).as_deref(), Some("3"));
        assert_eq!(shift_value(EntityKind::Date, "2012", 2012.0, p, 1.0).as_deref(), Some("2013"));
    }

    #[test]
    fn non_positive_results_are_skipped() {
        let opts = NumericOptions {
            policy: DeltaPolicy::AddAbsolute(-10.0),
            ..NumericOptions::default()
        };
        let lex = ComparatorLexicon::default();
        let out = perturb_numeric_instance(&pair("received 5 mg daily", Label::Entailment), &lex, &opts, None)
            .unwrap();
        assert!(out.is_empty());
        let out = perturb_numeric_instance(
            &pair("received 5 mg daily, a lower dose", Label::Entailment),
            &lex,
            &opts,
            None,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, PerturbationKind::NumericComparator);
    }

    #[test]
    fn both_variants_emitted_separately() {
        let lex = ComparatorLexicon::default();
        let out = perturb_numeric_instance(
            &pair("a lower dose of 50 mg", Label::Contradiction),
            &lex,
            &abs5(),
            None,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].hypothesis, "a lower dose of 55 mg");
        assert_eq!(out[1].hypothesis, "a higher dose of 50 mg");
        assert!(out.iter().all(|p| p.label == Label::Entailment && p.label_action == LabelAction::Flip));
    }

    #[test]
    fn nothing_to_perturb() {
        let lex = ComparatorLexicon::default();
        let out = perturb_numeric_instance(&pair("the dose was fixed", Label::Entailment), &lex, &abs5(), None)
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn random_sign_is_seeded() {
        let lex = ComparatorLexicon::default();
        let opts = NumericOptions {
            policy: DeltaPolicy::AddAbsolute(5.0),
            randomize_sign: true,
            seed: 42,
        };
        let p = pair("received 50 mg daily", Label::Entailment);
        let a = perturb_numeric_instance(&p, &lex, &opts, None).unwrap();
        let b = perturb_numeric_instance(&p, &lex, &opts, None).unwrap();
        assert_eq!(a, b);
        assert!(["received 55 mg daily", "received 45 mg daily"].contains(&a[0].hypothesis.as_str()));
    }

    #[test]
    fn delta_policy_parsing() {
        assert_eq!("percent:10".parse::<DeltaPolicy>().unwrap(), DeltaPolicy::AddPercent(10.0));
        assert_eq!("abs:-2.5".parse::<DeltaPolicy>().unwrap(), DeltaPolicy::AddAbsolute(-2.5));
        assert!("abs:0".parse::<DeltaPolicy>().is_err());
        assert!("times:2".parse::<DeltaPolicy>().is_err());
    }
}
