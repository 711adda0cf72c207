//! Session data model, synthetic cohort generator, partitioners and JSONL I/O.

mod io;
mod partition;
mod synth;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use partition::{
    filter_sessions, partition_iid, partition_noniid, split_train_val, DatasetSplit, PartyDataset,
    MAX_KEYPRESSES, MIN_KEYPRESSES, MIN_SESSIONS_PER_USER,
};
pub use synth::{default_cohort, generate_synthetic, GeneratorConfig, GroupParams, UserProfile};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{ViewKind, ViewSequence};
use crate::error::{Error, Result};

/// HDRS scores at or above this value are labelled positive.
pub const HDRS_POSITIVE_THRESHOLD: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "bd1")]
    BipolarI,
    #[serde(rename = "bd2")]
    BipolarII,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Normal, Group::BipolarI, Group::BipolarII];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Normal => "normal",
            Group::BipolarI => "bd1",
            Group::BipolarII => "bd2",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Group::Normal),
            "bd1" => Ok(Group::BipolarI),
            "bd2" => Ok(Group::BipolarII),
            other => Err(Error::Data(format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_class_index(c: usize) -> Option<Label> {
        match c {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }
}

/// Positive iff `hdrs >= 8`.
pub fn label_for_hdrs(hdrs: u32) -> Label {
    if hdrs >= HDRS_POSITIVE_THRESHOLD {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// One phone-usage session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSample {
    /// Position in the corpus it was generated or loaded from.
    pub id: usize,
    pub user_id: u32,
    pub group: Group,
    pub hdrs: u32,
    pub label: Label,
    pub alphanumeric: ViewSequence,
    pub special: ViewSequence,
    pub accelerometer: ViewSequence,
}

impl SessionSample {
    /// Alphanumeric plus special keypresses.
    pub fn keypress_count(&self) -> usize {
        self.alphanumeric.len() + self.special.len()
    }

    pub fn views(&self) -> [&ViewSequence; 3] {
        [&self.alphanumeric, &self.special, &self.accelerometer]
    }

    pub fn class_index(&self) -> usize {
        self.label.class_index()
    }

    pub fn validate(&self) -> Result<()> {
        for (seq, kind) in self.views().into_iter().zip(ViewKind::ALL) {
            if seq.view() != kind {
                return Err(Error::Data(format!(
                    "session {}: view {:?} stored in the {:?} slot",
                    self.id,
                    seq.view(),
                    kind
                )));
            }
            if seq.is_empty() {
                return Err(Error::Data(format!(
                    "session {}: {:?} view is empty",
                    self.id, kind
                )));
            }
        }
        if label_for_hdrs(self.hdrs) != self.label {
            return Err(Error::Data(format!(
                "session {}: label {:?} inconsistent with HDRS {}",
                self.id, self.label, self.hdrs
            )));
        }
        Ok(())
    }
}
