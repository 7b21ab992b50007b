//! Test-time retrieval (proposal selection and refinement), the mAP@1
//! metric and the two training-free baselines.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::Rng;

use crate::dataset::{fmt_real, resample_or_pad, round_div, Corpus, Fnv, Segment, Split, VideoFeatures};
use crate::error::{Error, Result};
use crate::graphs::AdjacencySet;
use crate::model::{forward_batch, Mode, ModelParams};
use crate::numeric::{Matrix, Tape};
use crate::proposals::{self, tiou, Interval, Proposal, ProposalSettings};

pub const DEFAULT_THRESHOLDS: [f64; 8] = [0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Score and raw offsets `(T_c, T_l)` of one (query, proposal) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub offsets: (f64, f64),
}

/// Anything that can score every proposal of a reference video against a
/// query clip.
pub trait PairScorer {
    fn score(
        &self,
        query: &Matrix,
        reference: &VideoFeatures,
        proposals: &[Proposal],
    ) -> Result<Vec<PairScore>>;
}

/// The trained network in evaluation mode.
pub struct NetworkScorer<'a> {
    pub model: &'a ModelParams,
    pub adj: &'a AdjacencySet,
}

impl PairScorer for NetworkScorer<'_> {
    fn score(
        &self,
        query: &Matrix,
        reference: &VideoFeatures,
        proposals: &[Proposal],
    ) -> Result<Vec<PairScore>> {
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.adj.timesteps();
        let (q, _) = resample_or_pad(query, t);
        let clips: Vec<Matrix> = proposals
            .iter()
            .map(|p| resample_or_pad(&reference.clip(p.segment), t).0)
            .collect();
        let queries = vec![&q; clips.len()];
        let refs: Vec<&Matrix> = clips.iter().collect();
        let mut tape = Tape::new();
        let out = forward_batch(&mut tape, self.model, self.adj, &queries, &refs, Mode::Eval)?;
        let (s, o) = (tape.value(out.scores), tape.value(out.offsets));
        Ok((0..proposals.len())
            .map(|i| PairScore {
                score: s.get(i, 0),
                offsets: (o.get(i, 0), o.get(i, 1)),
            })
            .collect())
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_proposal(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::param("cannot select from an empty proposal list"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Eval(format!("non-finite proposal score {bad}")));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Applies offsets to a proposal without clamping:
/// `len' = e^{−T_l}·len`, `loc' = loc − T_c·len'`.
pub fn decode_offsets(proposal: Segment, t_c: f64, t_l: f64) -> Result<Interval> {
    if !t_c.is_finite() || !t_l.is_finite() {
        return Err(Error::Eval(format!("non-finite offsets ({t_c}, {t_l})")));
    }
    let p = Interval::from(proposal);
    let len = (-t_l).exp() * p.len();
    let loc = p.center() - t_c * len;
    Ok(Interval::new(loc - len / 2.0, loc + len / 2.0))
}

/// Clamps to `[0, video_len]` and widens anything shorter than one
/// timestep to length 1 around its midpoint.
pub fn clamp_to_video(seg: Interval, video_len: usize) -> Interval {
    let l = video_len as f64;
    let s = seg.start.clamp(0.0, l);
    let e = seg.end.clamp(0.0, l);
    if e - s >= 1.0 || l < 1.0 {
        return Interval::new(s, e);
    }
    let c = ((s + e) / 2.0).clamp(0.5, l - 0.5);
    Interval::new(c - 0.5, c + 0.5)
}

/// Decoded and clamped prediction for a selected proposal.
pub fn refine(proposal: Segment, offsets: (f64, f64), video_len: usize) -> Result<Interval> {
    Ok(clamp_to_video(
        decode_offsets(proposal, offsets.0, offsets.1)?,
        video_len,
    ))
}

/// Uniformly random proposal.
pub fn chance_baseline<'p, R: Rng + ?Sized>(proposals: &'p [Proposal], rng: &mut R) -> Result<&'p Proposal> {
    if proposals.is_empty() {
        return Err(Error::param("chance baseline needs at least one proposal"));
    }
    Ok(&proposals[rng.random_range(0..proposals.len())])
}

/// Scales every row to unit L2 norm (zero rows stay zero).
pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Training-free localization by mean frame distance along a warped
/// diagonal.
///
/// For every segment `[s, s+ℓ)` with `ℓ` in `lengths` the cost is
/// `(1/m)·Σ_i ‖q_i − r_{s+round(i(ℓ−1)/(m−1))}‖²` (column `s` alone when
/// `m = 1`). Returns the cheapest segment and its cost; ties go to the
/// earliest start, then the shortest.
pub fn frame_level_baseline(
    hq: &Matrix,
    hr: &Matrix,
    lengths: RangeInclusive<usize>,
) -> Result<(Segment, f64)> {
    let (m, l) = (hq.rows(), hr.rows());
    if m == 0 || l == 0 {
        return Err(Error::param(
            "frame-level baseline needs non-empty query and reference",
        ));
    }
    if hq.cols() != hr.cols() {
        return Err(Error::Shape {
            op: "frame_level_baseline",
            left: hq.shape(),
            right: hr.shape(),
        });
    }
    let lo = (*lengths.start()).max(1);
    let hi = (*lengths.end()).min(l);
    if lo > hi {
        return Err(Error::param(format!(
            "no segment length in {lengths:?} fits a {l}-frame reference"
        )));
    }
    let mut dist = Matrix::zeros(m, l);
    for i in 0..m {
        for j in 0..l {
            dist.set(i, j, squared_distance(hq.row(i), hr.row(j)));
        }
    }
    let mut best: Option<(Segment, f64)> = None;
    for s in 0..l {
        for len in lo..=hi.min(l - s) {
            let total: f64 = (0..m)
                .map(|i| {
                    let off = if m == 1 {
                        0
                    } else {
                        round_div(i * (len - 1), m - 1)
                    };
                    dist.get(i, s + off)
                })
                .sum();
            let cost = total / m as f64;
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((
                    Segment {
                        start: s,
                        end: s + len,
                    },
                    cost,
                ));
            }
        }
    }
    Ok(best.expect("lo <= hi guarantees a candidate"))
}

/// Default search range for a query of `m` frames in an `l`-frame video:
/// `[⌈m/2⌉, min(l, 2m)]`.
pub fn default_length_range(m: usize, l: usize) -> RangeInclusive<usize> {
    let hi = l.min(2 * m).max(1);
    m.div_ceil(2).clamp(1, hi)..=hi
}

/// What a retrieval method returns for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieval {
    /// Chosen proposal, if the method works on proposals.
    pub selected_index: Option<usize>,
    pub segment: Interval,
    pub score: f64,
}

/// A query → segment method evaluated under the shared pair protocol.
pub trait Retriever {
    fn retrieve(
        &mut self,
        query: &Matrix,
        reference: &VideoFeatures,
        proposals: &[Proposal],
    ) -> Result<Retrieval>;
}

/// Proposal selection followed by offset refinement.
pub struct Refining<S>(pub S);

impl<S: PairScorer> Retriever for Refining<S> {
    fn retrieve(
        &mut self,
        query: &Matrix,
        reference: &VideoFeatures,
        proposals: &[Proposal],
    ) -> Result<Retrieval> {
        let scores = self.0.score(query, reference, proposals)?;
        let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let m = select_proposal(&raw)?;
        Ok(Retrieval {
            selected_index: Some(m),
            segment: refine(proposals[m].segment, scores[m].offsets, reference.len())?,
            score: raw[m],
        })
    }
}

/// Random proposal, no refinement.
pub struct ChanceRetriever<R>(pub R);

impl<R: Rng> Retriever for ChanceRetriever<R> {
    fn retrieve(
        &mut self,
        _query: &Matrix,
        _reference: &VideoFeatures,
        proposals: &[Proposal],
    ) -> Result<Retrieval> {
        let pick = chance_baseline(proposals, &mut self.0)?;
        let index = proposals
            .iter()
            .position(|p| std::ptr::eq(p, pick))
            .expect("pick comes from the slice");
        Ok(Retrieval {
            selected_index: Some(index),
            segment: pick.segment.into(),
            score: 0.0,
        })
    }
}

/// Frame-level baseline on row-normalized raw features.
pub struct FrameRetriever;

impl Retriever for FrameRetriever {
    fn retrieve(
        &mut self,
        query: &Matrix,
        reference: &VideoFeatures,
        _proposals: &[Proposal],
    ) -> Result<Retrieval> {
        let range = default_length_range(query.rows(), reference.len());
        let (seg, cost) =
            frame_level_baseline(&normalize_rows(query), &normalize_rows(&reference.frames), range)?;
        Ok(Retrieval {
            selected_index: None,
            segment: seg.into(),
            score: -cost,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub reference_id: String,
    pub selected_index: Option<usize>,
    pub s_pred: f64,
    pub e_pred: f64,
    pub tiou: f64,
    pub score: f64,
    /// One flag per report threshold: `tiou > threshold`.
    pub hits: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportMeta {
    pub config_hash: u64,
    pub seed: Option<u64>,
    pub corpus_fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// mAP@1 per threshold.
    pub map: Vec<f64>,
    pub results: Vec<QueryResult>,
    pub meta: ReportMeta,
}

impl EvalReport {
    /// mAP@1 at `threshold`, if it is one of the report's thresholds.
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| *t == threshold)
            .map(|i| self.map[i])
    }

    /// `threshold,map`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("threshold,map\n");
        for (t, m) in self.thresholds.iter().zip(&self.map) {
            let _ = write!(out, "{t},");
            fmt_real(&mut out, *m);
            out.push('\n');
        }
        out
    }

    /// `query_id,reference_id,selected_index,s_pred,e_pred,tiou,score`;
    /// methods without proposals leave `selected_index` empty.
    pub fn details_csv(&self) -> String {
        let mut out = String::from("query_id,reference_id,selected_index,s_pred,e_pred,tiou,score\n");
        for r in &self.results {
            let _ = write!(out, "{},{},", r.query_id, r.reference_id);
            if let Some(i) = r.selected_index {
                let _ = write!(out, "{i}");
            }
            for v in [r.s_pred, r.e_pred, r.tiou, r.score] {
                out.push(',');
                fmt_real(&mut out, v);
            }
            out.push('\n');
        }
        out
    }
}

/// Fraction of tIoUs strictly above each threshold.
pub fn map_at_thresholds(tious: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if tious.is_empty() {
        return Err(Error::Eval("no queries to evaluate".into()));
    }
    Ok(thresholds
        .iter()
        .map(|th| tious.iter().filter(|t| **t > *th).count() as f64 / tious.len() as f64)
        .collect())
}

/// Evaluation pairs: within each class of `split`, every annotated video
/// queries the next annotated video of the same class (cyclically).
/// Classes with a single annotated video are skipped with a warning.
pub fn query_pairs(corpus: &Corpus, split: Split) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (class, videos) in corpus.by_class(split) {
        let annotated: Vec<usize> = videos
            .into_iter()
            .filter(|&i| !corpus.videos[i].annotations.is_empty())
            .collect();
        if annotated.len() < 2 {
            log::warn!("class `{class}` has fewer than two annotated videos; skipped");
            continue;
        }
        for (k, &q) in annotated.iter().enumerate() {
            pairs.push((q, annotated[(k + 1) % annotated.len()]));
        }
    }
    pairs
}

/// Runs `retriever` over the test-split pairs. The query is the first
/// annotated clip of the query video; the reference's first annotation is
/// the ground truth. Metadata other than the corpus fingerprint is left
/// for the caller.
pub fn evaluate(
    corpus: &Corpus,
    retriever: &mut dyn Retriever,
    settings: &ProposalSettings,
    thresholds: &[f64],
) -> Result<EvalReport> {
    if thresholds.is_empty() {
        return Err(Error::param("at least one tIoU threshold is required"));
    }
    let mut results = Vec::new();
    for (qi, ri) in query_pairs(corpus, Split::Test) {
        let (qv, rv) = (&corpus.videos[qi], &corpus.videos[ri]);
        let query = qv.clip(qv.annotations[0]);
        let gt = rv.annotations[0];
        let candidates = proposals::generate(rv, settings)?;
        let r = retriever.retrieve(&query, rv, &candidates)?;
        let iou = tiou(r.segment, gt);
        results.push(QueryResult {
            query_id: qv.id.clone(),
            reference_id: rv.id.clone(),
            selected_index: r.selected_index,
            s_pred: r.segment.start,
            e_pred: r.segment.end,
            tiou: iou,
            score: r.score,
            hits: thresholds.iter().map(|th| iou > *th).collect(),
        });
    }
    results.sort_by(|a, b| (&a.query_id, &a.reference_id).cmp(&(&b.query_id, &b.reference_id)));
    let tious: Vec<f64> = results.iter().map(|r| r.tiou).collect();
    let map = map_at_thresholds(&tious, thresholds)
        .map_err(|_| Error::Eval("test split has no class with two annotated videos".into()))?;
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        map,
        results,
        meta: ReportMeta {
            corpus_fingerprint: corpus.fingerprint(),
            ..ReportMeta::default()
        },
    })
}

/// Evaluates a trained model; the config hash covers the architecture,
/// the graph strides, `T` and the proposal settings.
pub fn evaluate_model(
    corpus: &Corpus,
    model: &ModelParams,
    adj: &AdjacencySet,
    settings: &ProposalSettings,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let mut retriever = Refining(NetworkScorer { model, adj });
    let mut report = evaluate(corpus, &mut retriever, settings, thresholds)?;
    let mut h = Fnv::default();
    h.write(
        format!(
            "{:?}|{:?}|{}|{:?}",
            model.config,
            adj.strides(),
            adj.timesteps(),
            settings
        )
        .as_bytes(),
    );
    report.meta.config_hash = h.0;
    Ok(report)
}
