//! Feature videos, class-disjoint corpora and training-triplet sampling.

mod io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub(crate) use io::fmt_real;
pub use io::{load_corpus, load_feature_file, save_corpus, save_feature_file};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::proposals;

/// Half-open range of timesteps `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::param(format!("empty segment [{start}, {end})")));
        }
        Ok(Segment { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub id: String,
    pub class_label: String,
    /// `L×d`, one row per timestep.
    pub frames: Matrix,
    pub annotations: Vec<Segment>,
}

impl VideoFeatures {
    pub fn new(
        id: impl Into<String>,
        class_label: impl Into<String>,
        frames: Matrix,
        annotations: Vec<Segment>,
    ) -> Result<Self> {
        let v = VideoFeatures {
            id: id.into(),
            class_label: class_label.into(),
            frames,
            annotations,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rows() == 0 || self.frames.cols() == 0 {
            return Err(Error::param(format!("video `{}` has no frames", self.id)));
        }
        for seg in &self.annotations {
            if seg.is_empty() || seg.end > self.len() {
                return Err(Error::param(format!(
                    "video `{}`: annotation {seg} outside [0, {}]",
                    self.id,
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// Number of timesteps `L`.
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn clip(&self, seg: Segment) -> Matrix {
        self.frames.slice_rows(seg.start..seg.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::param(format!("unknown split `{other}`"))),
        }
    }
}

/// Videos plus a class → split assignment. Splits never share a class.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoFeatures>,
    pub splits: BTreeMap<String, Split>,
}

impl Corpus {
    pub fn new(videos: Vec<VideoFeatures>, splits: BTreeMap<String, Split>) -> Result<Self> {
        let corpus = Corpus { videos, splits };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for v in &self.videos {
            v.validate()?;
            if !self.splits.contains_key(&v.class_label) {
                return Err(Error::param(format!(
                    "class `{}` of video `{}` has no split",
                    v.class_label, v.id
                )));
            }
            match dim {
                None => dim = Some(v.feature_dim()),
                Some(d) if d != v.feature_dim() => {
                    return Err(Error::param(format!(
                        "video `{}` has feature dim {}, expected {d}",
                        v.id,
                        v.feature_dim()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(VideoFeatures::feature_dim)
    }

    pub fn split_of(&self, class_label: &str) -> Option<Split> {
        self.splits.get(class_label).copied()
    }

    pub fn classes(&self, split: Split) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    /// Indices of the videos whose class is assigned to `split`.
    pub fn video_indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len())
            .filter(|&i| self.split_of(&self.videos[i].class_label) == Some(split))
            .collect()
    }

    /// Video indices grouped by class label, restricted to `split`.
    pub fn by_class(&self, split: Split) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for i in self.video_indices(split) {
            map.entry(self.videos[i].class_label.as_str())
                .or_default()
                .push(i);
        }
        map
    }

    /// Stable 64-bit FNV-1a fingerprint of every label, annotation and
    /// feature bit.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for (class, split) in &self.splits {
            h.write(class.as_bytes());
            h.write(split.to_string().as_bytes());
        }
        for v in &self.videos {
            h.write(v.id.as_bytes());
            h.write(v.class_label.as_bytes());
            for s in &v.annotations {
                h.write(&(s.start as u64).to_le_bytes());
                h.write(&(s.end as u64).to_le_bytes());
            }
            h.write(&(v.frames.rows() as u64).to_le_bytes());
            for x in v.frames.as_slice() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.0
    }
}

pub(crate) struct Fnv(pub u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// `round(num / den)` for non-negative integers, halves rounded up.
pub(crate) fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Brings a sequence to exactly `t` rows.
///
/// Longer sequences keep `t` equidistant rows `round(i·(L−1)/(t−1))`;
/// shorter ones are copied and zero-padded. Returns the number of real rows.
pub fn resample_or_pad(frames: &Matrix, t: usize) -> (Matrix, usize) {
    let l = frames.rows();
    assert!(l >= 1 && t >= 1, "resample_or_pad needs L >= 1 and T >= 1");
    if l > t {
        let idx: Vec<usize> = if t == 1 {
            vec![0]
        } else {
            (0..t).map(|i| round_div(i * (l - 1), t - 1)).collect()
        };
        (frames.gather_rows(&idx), t)
    } else {
        let mut out = Matrix::zeros(t, frames.cols());
        out.as_mut_slice()[..frames.len()].copy_from_slice(frames.as_slice());
        (out, l)
    }
}

/// Query clip plus the positive and negative videos it is trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    /// Resampled query clip, `T×d`.
    pub query: Matrix,
    /// Corpus index and segment the query was cut from.
    pub query_video: usize,
    pub query_segment: Segment,
    /// Corpus index of a different video of the query's class.
    pub positive: usize,
    /// Corpus index of a video of another class.
    pub negative: usize,
}

/// Draws one training triplet from the train split.
///
/// Only annotated videos take part, since positives and negatives are later
/// represented by their best-overlapping proposal.
pub fn sample_triplet<R: Rng + ?Sized>(corpus: &Corpus, t: usize, rng: &mut R) -> Result<Triplet> {
    let groups: BTreeMap<&str, Vec<usize>> = corpus
        .by_class(Split::Train)
        .into_iter()
        .map(|(c, vids)| {
            let annotated: Vec<usize> = vids
                .into_iter()
                .filter(|&i| !corpus.videos[i].annotations.is_empty())
                .collect();
            (c, annotated)
        })
        .filter(|(_, v)| !v.is_empty())
        .collect();
    if groups.len() < 2 {
        return Err(Error::Sampling(format!(
            "train split needs at least 2 classes with annotated videos, found {}",
            groups.len()
        )));
    }
    let query_classes: Vec<&str> = groups
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(c, _)| *c)
        .collect();
    if query_classes.is_empty() {
        return Err(Error::Sampling("no train class has two annotated videos".into()));
    }
    let query_pool: Vec<usize> = query_classes
        .iter()
        .flat_map(|c| groups[c].iter().copied())
        .collect();
    let query_video = query_pool[rng.random_range(0..query_pool.len())];
    let class = corpus.videos[query_video].class_label.as_str();
    let source = &corpus.videos[query_video];
    let query_segment = source.annotations[rng.random_range(0..source.annotations.len())];
    let (query, _) = resample_or_pad(&source.clip(query_segment), t);

    let same: Vec<usize> = groups[class]
        .iter()
        .copied()
        .filter(|&i| i != query_video)
        .collect();
    let positive = same[rng.random_range(0..same.len())];
    let others: Vec<usize> = groups
        .iter()
        .filter(|(c, _)| **c != class)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    let negative = others[rng.random_range(0..others.len())];

    Ok(Triplet {
        query,
        query_video,
        query_segment,
        positive,
        negative,
    })
}

/// Features of the proposal that best overlaps a video's first annotation,
/// resampled to `t` rows. This is how positives and negatives enter a
/// forward pass.
pub fn best_proposal_features(
    video: &VideoFeatures,
    settings: &proposals::ProposalSettings,
    t: usize,
) -> Result<(Segment, Matrix)> {
    let gt = *video
        .annotations
        .first()
        .ok_or_else(|| Error::Sampling(format!("video `{}` has no annotation", video.id)))?;
    let candidates = proposals::generate(video, settings)?;
    let best = proposals::best_by_tiou(&candidates, gt)?;
    let (feat, _) = resample_or_pad(&video.clip(best.segment), t);
    Ok((best.segment, feat))
}
