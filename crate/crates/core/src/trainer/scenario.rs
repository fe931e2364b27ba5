use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Granularity, Language};
use crate::model::HeadSet;
use crate::preprocess::PoolKey;

/// The five training setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Slovene documents only; Croatian is zero-shot.
    #[serde(rename = "SL_STL_ZERO_HR")]
    SlStlZeroHr,
    /// All three Slovene levels; Croatian is zero-shot.
    #[serde(rename = "SL_MTL_ZERO_HR")]
    SlMtlZeroHr,
    /// Croatian documents only.
    #[serde(rename = "HR_STL")]
    HrStl,
    /// Croatian + Slovene documents on the document head, Slovene paragraphs
    /// and sentences on their own heads.
    #[serde(rename = "SLHR_MTL")]
    SlhrMtl,
    /// Croatian + Slovene documents, document head only.
    #[serde(rename = "SLHR_STL")]
    SlhrStl,
}

const SL_DOC: PoolKey = PoolKey::new(Language::Sl, Granularity::Document);
const HR_DOC: PoolKey = PoolKey::new(Language::Hr, Granularity::Document);
const SL_PARA: PoolKey = PoolKey::new(Language::Sl, Granularity::Paragraph);
const SL_SENT: PoolKey = PoolKey::new(Language::Sl, Granularity::Sentence);

impl Scenario {
    pub const ALL: [Scenario; 5] = [Self::SlStlZeroHr, Self::SlMtlZeroHr, Self::HrStl, Self::SlhrMtl, Self::SlhrStl];

    pub fn name(self) -> &'static str {
        match self {
            Self::SlStlZeroHr => "SL_STL_ZERO_HR",
            Self::SlMtlZeroHr => "SL_MTL_ZERO_HR",
            Self::HrStl => "HR_STL",
            Self::SlhrMtl => "SLHR_MTL",
            Self::SlhrStl => "SLHR_STL",
        }
    }

    pub fn is_multi_task(self) -> bool {
        matches!(self, Self::SlMtlZeroHr | Self::SlhrMtl)
    }

    pub fn is_zero_shot(self) -> bool {
        matches!(self, Self::SlStlZeroHr | Self::SlMtlZeroHr)
    }

    pub fn head_set(self) -> HeadSet {
        if self.is_multi_task() {
            HeadSet::MultiTask
        } else {
            HeadSet::SingleTask
        }
    }

    pub fn tasks(self) -> &'static [Granularity] {
        self.head_set().tasks()
    }

    /// Corpus pools whose train parts feed `task`'s head.
    pub fn sources(self, task: Granularity) -> &'static [PoolKey] {
        match (self, task) {
            (Self::SlStlZeroHr | Self::SlMtlZeroHr, Granularity::Document) => &[SL_DOC],
            (Self::HrStl, Granularity::Document) => &[HR_DOC],
            (Self::SlhrMtl | Self::SlhrStl, Granularity::Document) => &[HR_DOC, SL_DOC],
            (Self::SlMtlZeroHr | Self::SlhrMtl, Granularity::Paragraph) => &[SL_PARA],
            (Self::SlMtlZeroHr | Self::SlhrMtl, Granularity::Sentence) => &[SL_SENT],
            _ => &[],
        }
    }

    /// Multi-task runs use fewer epochs than single-task runs.
    pub fn default_epochs(self) -> usize {
        if self.is_multi_task() {
            3
        } else {
            5
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario `{0}`; valid names: SL_STL_ZERO_HR, SL_MTL_ZERO_HR, HR_STL, SLHR_MTL, SLHR_STL")]
pub struct UnknownScenario(pub String);

impl FromStr for Scenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}
