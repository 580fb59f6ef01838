//! Recordings, labeled windows, the synthetic cohort generator and the
//! on-disk dataset format.

mod format;
mod split;
mod synth;
mod timeline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{batch_tensor, labels_of, split_by_time, SplitFractions, Splits};
pub use synth::{
    generate_cohort, generate_recording, prepare_cohort, window_recording, CohortConfig, Mechanism, SubjectProfile,
    SyntheticSpec,
};
pub use timeline::{
    label_events, label_timeline, lead_seizures, normalize, segment_windows, window_count, window_starts,
    InclusionRule, LabeledInterval, TimelineParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureEvent {
    pub onset_s: f64,
    pub offset_s: f64,
}

/// Continuous multichannel recording for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject: u32,
    pub fs: f64,
    pub channels: usize,
    /// `channels x n` samples, row-major.
    pub samples: Vec<f32>,
    /// Sorted, non-overlapping seizures.
    pub events: Vec<SeizureEvent>,
}

impl Recording {
    pub fn samples_per_channel(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples_per_channel() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples.len() % self.channels != 0 || !(self.fs > 0.0) {
            return Err(Error::Data(format!("recording {} has an inconsistent shape", self.subject)));
        }
        let dur = self.duration_s();
        let mut prev_end = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.onset_s >= prev_end && e.onset_s < e.offset_s && e.offset_s <= dur) {
                return Err(Error::Data(format!(
                    "recording {}: event {i} [{}, {}] is unsorted, overlapping or outside [0, {dur}]",
                    self.subject, e.onset_s, e.offset_s
                )));
            }
            prev_end = e.offset_s;
        }
        Ok(())
    }
}

/// Brain state of a window. The numeric value is the class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum StateLabel {
    Interictal = 0,
    Preictal = 1,
}

impl StateLabel {
    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(c: u8) -> Result<Self> {
        match c {
            0 => Ok(StateLabel::Interictal),
            1 => Ok(StateLabel::Preictal),
            other => Err(Error::Data(format!("unknown label {other}"))),
        }
    }
}

/// A normalized `channels x len` window with its label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub subject: u32,
    pub label: StateLabel,
    pub start_s: f64,
    pub channels: usize,
    pub len: usize,
    pub window: Vec<f64>,
}

/// All windows of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject: u32,
    pub samples: Vec<WindowedSample>,
}

impl SubjectDataset {
    pub fn count(&self, label: StateLabel) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }
}
