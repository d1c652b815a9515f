//! Banks of short pattern segments (horns, sirens, vocal chops, ...) and
//! their train/valid/test split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::spectral::wav::read_wav_at;
use crate::spectral::Waveform;

/// Train : valid : test proportions of every pattern's segments.
pub const SPLIT_RATIO: (usize, usize, usize) = (5, 1, 4);

/// Segment durations the bank is meant to hold, in seconds.
pub const SEGMENT_SECONDS: (f64, f64) = (4.0, 8.0);

/// Fewer segments than this per pattern leaves the 5:1:4 split degenerate.
pub const MIN_SEGMENTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternSplit {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn get(&self, split: PatternSplit) -> &[T] {
        match split {
            PatternSplit::Train => &self.train,
            PatternSplit::Valid => &self.valid,
            PatternSplit::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split sizes for `n` items: each part gets the floor of its share, and
/// leftover items go to the largest fractional remainders (ties to the
/// earlier part).
pub fn split_sizes(n: usize, ratio: (usize, usize, usize)) -> [usize; 3] {
    let weights = [ratio.0, ratio.1, ratio.2];
    let total: usize = weights.iter().sum();
    if total == 0 {
        return [n, 0, 0];
    }
    let mut sizes = weights.map(|w| n * w / total);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((n * weights[i]) % total));
    let short = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    sizes
}

/// Shuffle and cut `items` into disjoint train/valid/test parts.
pub fn split_patterns<T>(mut items: Vec<T>, ratio: (usize, usize, usize), rng: &mut Rng) -> Splits<T> {
    if items.len() < MIN_SEGMENTS {
        log::warn!("only {} segments to split; the {ratio:?} ratio will be coarse", items.len());
    }
    items.shuffle(rng);
    let [a, b, _] = split_sizes(items.len(), ratio);
    let mut rest = items.split_off(a);
    let test = rest.split_off(b);
    Splits {
        train: items,
        valid: rest,
        test,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// File stem, unique within its pattern.
    pub name: String,
    pub audio: Waveform,
}

/// Pattern name to its split segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatternBank {
    patterns: BTreeMap<String, Splits<Segment>>,
}

/// Pattern names are compared with case and punctuation folded, so
/// `Vocal Chops`, `vocal_chops` and `vocal-chops` all match.
pub fn normalize_pattern(name: &str) -> String {
    name.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

pub fn is_vocal_chops(name: &str) -> bool {
    normalize_pattern(name) == "vocalchops"
}

impl PatternBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pattern: impl Into<String>, splits: Splits<Segment>) {
        self.patterns.insert(pattern.into(), splits);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.patterns.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn splits(&self, pattern: &str) -> Result<&Splits<Segment>> {
        let key = normalize_pattern(pattern);
        self.patterns
            .iter()
            .find(|(name, _)| normalize_pattern(name) == key)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Data(format!("no pattern named {pattern:?}")))
    }

    pub fn segments(&self, pattern: &str, split: PatternSplit) -> Result<&[Segment]> {
        Ok(self.splits(pattern)?.get(split))
    }

    /// Split names per pattern, for manifests.
    pub fn split_names(&self) -> BTreeMap<String, Splits<String>> {
        self.patterns
            .iter()
            .map(|(p, s)| {
                let names = |v: &[Segment]| v.iter().map(|seg| seg.name.clone()).collect();
                (
                    p.clone(),
                    Splits {
                        train: names(&s.train),
                        valid: names(&s.valid),
                        test: names(&s.test),
                    },
                )
            })
            .collect()
    }

    /// Loads one sub-directory per pattern, each holding WAV segments, and
    /// splits every pattern with its own stream derived from `seed`.
    pub fn load_dir(dir: impl AsRef<Path>, sample_rate: u32, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let mut bank = Self::new();
        for pattern_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
            let pattern = file_name(&pattern_dir);
            let mut segments = Vec::new();
            for path in sorted_entries(&pattern_dir)? {
                if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let audio = read_wav_at(&path, sample_rate)?;
                let secs = audio.duration_secs();
                if !(SEGMENT_SECONDS.0..=SEGMENT_SECONDS.1).contains(&secs) {
                    log::warn!("{}: {secs:.2} s segment is outside 4-8 s", path.display());
                }
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                segments.push(Segment { name, audio });
            }
            let mut rng = crate::seed::rng(seed, &[crate::seed::tag_str("split"), crate::seed::tag_str(&pattern)]);
            bank.insert(pattern, split_patterns(segments, SPLIT_RATIO, &mut rng));
        }
        Ok(bank)
    }
}

pub(crate) fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_splits() {
        assert_eq!(split_sizes(10, SPLIT_RATIO), [5, 1, 4]);
        assert_eq!(split_sizes(100, SPLIT_RATIO), [50, 10, 40]);
        assert_eq!(split_sizes(0, SPLIT_RATIO), [0, 0, 0]);
        assert_eq!(split_sizes(3, SPLIT_RATIO).iter().sum::<usize>(), 3);
    }

    #[test]
    fn split_is_seeded() {
        let items: Vec<u32> = (0..20).collect();
        let a = split_patterns(items.clone(), SPLIT_RATIO, &mut crate::seed::rng(1, &[]));
        let b = split_patterns(items, SPLIT_RATIO, &mut crate::seed::rng(1, &[]));
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (10, 2, 8));
    }

    #[test]
    fn pattern_names_fold() {
        assert!(is_vocal_chops("Vocal Chops"));
        assert!(is_vocal_chops("vocal_chops"));
        assert!(!is_vocal_chops("horns"));
    }
}
