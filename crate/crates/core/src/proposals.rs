//! Candidate segments in reference videos and temporal IoU.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{Segment, VideoFeatures};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub segment: Segment,
    pub source_video: String,
}

/// Real-valued interval `[start, end)`, used for refined predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

impl From<Segment> for Interval {
    fn from(s: Segment) -> Self {
        Interval::new(s.start as f64, s.end as f64)
    }
}

impl From<&Proposal> for Interval {
    fn from(p: &Proposal) -> Self {
        p.segment.into()
    }
}

/// Temporal intersection over union; 0 for disjoint or empty intervals.
pub fn tiou(a: impl Into<Interval>, b: impl Into<Interval>) -> f64 {
    let (a, b) = (a.into(), b.into());
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// How reference videos are cut into candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSettings {
    /// Window lengths as fractions of the video length.
    pub window_fractions: Vec<f64>,
    /// Step between window starts as a fraction of the window length.
    pub stride_fraction: f64,
}

impl Default for ProposalSettings {
    fn default() -> Self {
        ProposalSettings {
            window_fractions: vec![0.25, 0.5, 0.75, 1.0],
            stride_fraction: 0.25,
        }
    }
}

impl ProposalSettings {
    pub fn window_lengths(&self, video_length: usize) -> Vec<usize> {
        let mut lengths: Vec<usize> = self
            .window_fractions
            .iter()
            .map(|f| ((f * video_length as f64).round() as usize).max(1))
            .collect();
        lengths.sort_unstable();
        lengths.dedup();
        lengths
    }
}

/// Multi-scale sliding windows, sorted by start then length.
///
/// Each window length `w` that fits the video starts at every multiple of
/// `max(1, round(w · stride_fraction))` that keeps the window inside.
pub fn sliding_window_proposals(
    video_id: &str,
    video_length: usize,
    window_lengths: &[usize],
    stride_fraction: f64,
) -> Result<Vec<Proposal>> {
    if window_lengths.is_empty() {
        return Err(Error::param("no proposal window lengths given"));
    }
    if window_lengths.contains(&0) {
        return Err(Error::param("proposal window lengths must be positive"));
    }
    if !(stride_fraction > 0.0 && stride_fraction <= 1.0) {
        return Err(Error::param("stride_fraction must lie in (0, 1]"));
    }
    let mut segments = Vec::new();
    for &w in window_lengths {
        if w > video_length {
            continue;
        }
        let step = ((w as f64 * stride_fraction).round() as usize).max(1);
        let mut start = 0;
        while start + w <= video_length {
            segments.push(Segment {
                start,
                end: start + w,
            });
            start += step;
        }
    }
    segments.sort_by_key(|s| (s.start, s.len()));
    segments.dedup();
    Ok(segments
        .into_iter()
        .map(|segment| Proposal {
            segment,
            source_video: video_id.to_owned(),
        })
        .collect())
}

/// Sliding-window proposals for a whole video.
pub fn generate(video: &VideoFeatures, settings: &ProposalSettings) -> Result<Vec<Proposal>> {
    sliding_window_proposals(
        &video.id,
        video.len(),
        &settings.window_lengths(video.len()),
        settings.stride_fraction,
    )
}

/// Highest tIoU with `gt`; ties go to the earliest start, then the shortest.
pub fn best_by_tiou(candidates: &[Proposal], gt: Segment) -> Result<&Proposal> {
    let mut best: Option<(&Proposal, f64)> = None;
    for p in candidates {
        let score = tiou(p.segment, gt);
        let better = match best {
            None => true,
            Some((b, bs)) => {
                score > bs
                    || (score == bs
                        && (p.segment.start, p.segment.len()) < (b.segment.start, b.segment.len()))
            }
        };
        if better {
            best = Some((p, score));
        }
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| Error::param("best_by_tiou needs at least one candidate"))
}

pub fn write_proposal_file(proposals: &[Proposal], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in proposals {
        let _ = writeln!(out, "{} {} {}", p.source_video, p.segment.start, p.segment.end);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_proposal_file(path: impl AsRef<Path>) -> Result<Vec<Proposal>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Format {
            path: path.display().to_string(),
            line: i + 1,
            msg: msg.to_owned(),
        };
        let [id, s, e] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(err("expected `video_id start end`"));
        };
        let start: usize = s.parse().map_err(|_| err("bad start"))?;
        let end: usize = e.parse().map_err(|_| err("bad end"))?;
        let segment = Segment::new(start, end).map_err(|_| err("empty segment"))?;
        out.push(Proposal {
            segment,
            source_video: id.to_owned(),
        });
    }
    Ok(out)
}
