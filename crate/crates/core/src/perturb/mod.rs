//! Label-aware data perturbations derived from hypotheses.

pub mod acronym;
pub mod numeric;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbationKind {
    AcronymPositive,
    AcronymNegative,
    NumericValue,
    NumericComparator,
}

impl PerturbationKind {
    fn uuid_suffix(self) -> &'static str {
        match self {
            PerturbationKind::AcronymPositive => "acr_pos",
            PerturbationKind::AcronymNegative => "acr_neg",
            PerturbationKind::NumericValue => "num_val",
            PerturbationKind::NumericComparator => "num_cmp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelAction {
    Preserve,
    Flip,
}

impl LabelAction {
    pub fn apply(self, label: Label) -> Label {
        match self {
            LabelAction::Preserve => label,
            LabelAction::Flip => label.flipped(),
        }
    }
}

/// A hypothesis rewritten from a source instance. The premise is the
/// source's premise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    pub new_uuid: String,
    pub source_uuid: String,
    pub kind: PerturbationKind,
    pub label_action: LabelAction,
    pub hypothesis: String,
    pub label: Label,
}

impl PerturbedInstance {
    pub(crate) fn derive(
        source_uuid: &str,
        source_label: Label,
        kind: PerturbationKind,
        action: LabelAction,
        hypothesis: String,
    ) -> Self {
        PerturbedInstance {
            new_uuid: format!("{source_uuid}_{}", kind.uuid_suffix()),
            source_uuid: source_uuid.to_string(),
            kind,
            label_action: action,
            hypothesis,
            label: action.apply(source_label),
        }
    }
}
