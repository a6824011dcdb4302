//! Emotion categories, their canonical order, and the polarity partition.
//!
//! The classifier's output index i always refers to `emotions[i]`, and
//! the polarity partition drives the aggregation of emotion
//! probabilities into a two-way positive/negative vector. Immutable
//! after construction; safe to share across threads.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Two-way emotional valence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// Index in a polar probability vector: positive 0, negative 1.
    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

/// One emotion category: its canonical index and a short name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emotion {
    pub index: usize,
    pub name: String,
}

#[derive(Serialize, Deserialize)]
struct EmotionEntry {
    name: String,
    polarity: Polarity,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyConfig {
    emotions: Vec<EmotionEntry>,
}

/// Ordered emotion categories with a polarity per category.
#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    emotions: Vec<Emotion>,
    polarity: Vec<Polarity>,
}

impl Taxonomy {
    /// Build from (name, polarity) pairs in canonical order.
    pub fn new<I, S>(entries: I) -> Result<Taxonomy>
    where
        I: IntoIterator<Item = (S, Polarity)>,
        S: Into<String>,
    {
        let mut emotions = Vec::new();
        let mut polarity = Vec::new();
        let mut seen = HashSet::new();
        for (index, (name, pol)) in entries.into_iter().enumerate() {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::InvalidTaxonomy("empty emotion name".into()));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidTaxonomy(format!("duplicate emotion \"{name}\"")));
            }
            emotions.push(Emotion { index, name });
            polarity.push(pol);
        }
        if emotions.is_empty() {
            return Err(Error::InvalidTaxonomy("no emotions listed".into()));
        }
        for p in [Polarity::Positive, Polarity::Negative] {
            if !polarity.contains(&p) {
                return Err(Error::InvalidTaxonomy(format!(
                    "no {} emotion in taxonomy",
                    match p {
                        Polarity::Positive => "positive",
                        Polarity::Negative => "negative",
                    }
                )));
            }
        }
        Ok(Taxonomy { emotions, polarity })
    }

    /// The Mikel wheel: eight emotions, the first four positive and the
    /// last four negative.
    pub fn mikel_default() -> Taxonomy {
        use Polarity::*;
        Taxonomy::new([
            ("excitement", Positive),
            ("amusement", Positive),
            ("contentment", Positive),
            ("awe", Positive),
            ("sad", Negative),
            ("fear", Negative),
            ("disgust", Negative),
            ("anger", Negative),
        ])
        .expect("mikel default is valid")
    }

    /// The six EmotionROI categories in dataset order. The polarity
    /// assignment (joy and surprise positive, the rest negative) is by
    /// semantic valence.
    pub fn emotionroi_default() -> Taxonomy {
        use Polarity::*;
        Taxonomy::new([
            ("anger", Negative),
            ("disgust", Negative),
            ("fear", Negative),
            ("joy", Positive),
            ("sad", Negative),
            ("surprise", Positive),
        ])
        .expect("emotionroi default is valid")
    }

    /// Number of emotion categories C.
    pub fn count(&self) -> usize {
        self.emotions.len()
    }

    pub fn emotions(&self) -> &[Emotion] {
        &self.emotions
    }

    pub fn name_of(&self, index: usize) -> Result<&str> {
        self.emotions
            .get(index)
            .map(|e| e.name.as_str())
            .ok_or(Error::UnknownEmotionIndex {
                index,
                count: self.count(),
            })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.emotions.iter().position(|e| e.name == name)
    }

    /// Polarity of emotion `index`.
    pub fn polarity_of(&self, index: usize) -> Result<Polarity> {
        self.polarity
            .get(index)
            .copied()
            .ok_or(Error::UnknownEmotionIndex {
                index,
                count: self.count(),
            })
    }

    /// Order-preserving split of [0, C) into (positive, negative) index
    /// sets. The sets are disjoint and cover every index.
    pub fn partition_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, p) in self.polarity.iter().enumerate() {
            match p {
                Polarity::Positive => pos.push(i),
                Polarity::Negative => neg.push(i),
            }
        }
        (pos, neg)
    }

    /// Parse the JSON config form:
    /// `{"emotions":[{"name":"joy","polarity":"positive"}, ...]}`.
    /// Array order is the canonical index order.
    pub fn load(config: &str) -> Result<Taxonomy> {
        let parsed: TaxonomyConfig = serde_json::from_str(config)
            .map_err(|e| Error::InvalidTaxonomy(format!("parse error: {e}")))?;
        Taxonomy::new(parsed.emotions.into_iter().map(|e| (e.name, e.polarity)))
    }

    /// Serialize to the same JSON config form `load` accepts.
    pub fn serialize(&self) -> String {
        let cfg = TaxonomyConfig {
            emotions: self
                .emotions
                .iter()
                .zip(&self.polarity)
                .map(|(e, p)| EmotionEntry {
                    name: e.name.clone(),
                    polarity: *p,
                })
                .collect(),
        };
        serde_json::to_string(&cfg).expect("taxonomy serializes")
    }

    /// 64-bit digest of the canonical serialization; stored in model
    /// files to catch taxonomy mismatches at load time.
    pub fn digest(&self) -> u64 {
        let hash = Sha256::digest(self.serialize().as_bytes());
        u64::from_le_bytes(hash[..8].try_into().expect("sha256 is long enough"))
    }
}
