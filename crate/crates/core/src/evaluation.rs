//! Top-k extraction with non-maximum suppression, `R@n, IoU=m`, the
//! prediction dump, and parameter counting.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::EvalConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput, ScoreMap};
use crate::params::ParamStore;
use crate::proposal::{temporal_iou, CandidateGrid, MomentSpan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub span: MomentSpan,
}

/// Descending score; ties go to the earlier start, then the shorter span.
fn rank_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.span.start.total_cmp(&b.span.start))
        .then(a.span.length().total_cmp(&b.span.length()))
}

/// Greedy NMS over the valid blocks of `map`: a candidate is dropped when
/// its IoU with any kept span exceeds `nms_threshold`.
pub fn topk_predictions(map: &ScoreMap, grid: &CandidateGrid, k: usize, nms_threshold: f64) -> Vec<Prediction> {
    let cands: Vec<Prediction> = grid
        .valid_rows()
        .iter()
        .map(|&row| {
            let (i, j) = grid.block_of_row(row);
            Prediction {
                score: map.scores[[i, j]],
                span: grid.span(i, j).expect("valid blocks have i <= j"),
            }
        })
        .collect();
    suppress(cands, k, nms_threshold)
}

/// Greedy suppression over arbitrary candidates in rank order.
pub fn suppress(mut cands: Vec<Prediction>, k: usize, nms_threshold: f64) -> Vec<Prediction> {
    cands.sort_by(rank_order);
    let mut kept: Vec<Prediction> = Vec::with_capacity(k);
    for c in cands {
        if kept.len() == k {
            break;
        }
        if kept.iter().all(|p| temporal_iou(&p.span, &c.span) <= nms_threshold) {
            kept.push(c);
        }
    }
    kept
}

/// Slack on the IoU threshold. Clip-aligned spans often hit a threshold
/// exactly (IoU 1/2 from `[a, 2b]` against `[b, 2b]`), and the division must
/// not round such ties below it.
pub const IOU_SLACK: f64 = 1e-9;

/// Fraction of samples with a top-`n` span reaching IoU `>= m`.
pub fn recall_at(predictions: &[Vec<Prediction>], gts: &[MomentSpan], n: usize, m: f64) -> f64 {
    assert_eq!(predictions.len(), gts.len());
    if gts.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(gts)
        .filter(|(preds, gt)| preds.iter().take(n).any(|p| temporal_iou(&p.span, gt) >= m - IOU_SLACK))
        .count();
    hits as f64 / gts.len() as f64
}

/// `R@n, IoU=m` for every configured pair, ranks outer, thresholds inner.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub entries: Vec<(usize, f64, f64)>,
}

impl MetricTable {
    pub fn compute(predictions: &[Vec<Prediction>], gts: &[MomentSpan], config: &EvalConfig) -> Self {
        let mut entries = Vec::new();
        for &n in &config.ranks {
            for &m in &config.iou_thresholds {
                entries.push((n, m, recall_at(predictions, gts, n, m)));
            }
        }
        Self { entries }
    }

    pub fn get(&self, n: usize, m: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|(en, em, _)| *en == n && *em == m)
            .map(|e| e.2)
    }

    /// One `R@n,IoU=m rate` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, m, rate) in &self.entries {
            let _ = writeln!(out, "R@{n},IoU={m} {rate:.6}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePredictions {
    pub video_id: String,
    pub gt: MomentSpan,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub table: MetricTable,
    pub samples: Vec<SamplePredictions>,
}

/// Top-k spans for one sample of `data`.
pub fn predict_sample(model: &Model, data: &Dataset, index: usize, k: usize, nms_threshold: f64) -> Result<Vec<Prediction>> {
    let s = data
        .samples
        .get(index)
        .ok_or_else(|| Error::Validation(format!("sample {index} out of range 0..{}", data.len())))?;
    let words = data.query_vectors(&s.tokens);
    let map = model.predict(&ModelInput {
        clips: s.video.view(),
        words: words.view(),
        len: s.tokens.len(),
    })?;
    let grid = model.net.grid.with_duration(s.duration)?;
    Ok(topk_predictions(&map, &grid, k, nms_threshold))
}

/// Evaluation-mode pass over every sample.
pub fn evaluate(model: &Model, data: &Dataset, config: &EvalConfig) -> Result<Evaluation> {
    config.validate()?;
    let k = config.ranks.iter().copied().max().unwrap_or(1);
    let samples: Vec<SamplePredictions> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = &data.samples[i];
            Ok(SamplePredictions {
                video_id: s.video_id.clone(),
                gt: s.gt_span,
                predictions: predict_sample(model, data, i, k, config.nms_threshold)?,
            })
        })
        .collect::<Result<_>>()?;
    let preds: Vec<_> = samples.iter().map(|s| s.predictions.clone()).collect();
    let gts: Vec<_> = samples.iter().map(|s| s.gt).collect();
    Ok(Evaluation {
        table: MetricTable::compute(&preds, &gts, config),
        samples,
    })
}

/// One line per kept prediction, `video_id k score start end`, with `k`
/// counting from 1 within each sample and six decimals throughout.
pub fn write_dump(samples: &[SamplePredictions]) -> String {
    let mut out = String::new();
    for s in samples {
        for (k, p) in s.predictions.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {:.6} {:.6} {:.6}",
                s.video_id,
                k + 1,
                p.score,
                p.span.start,
                p.span.end
            );
        }
    }
    out
}

/// Parses a dump back into per-sample lists; a line with `k = 1` starts a
/// new sample.
pub fn parse_dump(text: &str) -> Result<Vec<(String, Vec<Prediction>)>> {
    let mut out: Vec<(String, Vec<Prediction>)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("prediction dump line {}: {msg}", no + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad("expected `video_id k score start end`"));
        }
        let k: usize = f[1].parse().map_err(|_| bad("rank is not an integer"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed number"));
        let (score, start, end) = (num(f[2])?, num(f[3])?, num(f[4])?);
        let span = MomentSpan::new(start, end).map_err(|e| bad(&e.to_string()))?;
        match out.last_mut() {
            Some((id, preds)) if k != 1 && id == f[0] && preds.len() + 1 == k => {
                preds.push(Prediction { score, span })
            }
            _ if k == 1 => out.push((f[0].to_string(), vec![Prediction { score, span }])),
            _ => return Err(bad("ranks must run 1, 2, ... within a sample")),
        }
    }
    Ok(out)
}

/// Number of learnable scalars.
pub fn param_count(params: &ParamStore) -> usize {
    params.len()
}

/// Counts grouped by the first two segments of each array name, in
/// creation order.
pub fn param_breakdown(params: &ParamStore) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for info in params.layout().infos() {
        let key: String = info.name.split('.').take(2).collect::<Vec<_>>().join(".");
        match out.last_mut() {
            Some((k, n)) if *k == key => *n += info.len(),
            _ => out.push((key, info.len())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamBuilder;
    use crate::proposal::{build_grid, Scheme};
    use crate::testutil::rng;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn span(a: f64, b: f64) -> MomentSpan {
        MomentSpan::new(a, b).unwrap()
    }

    fn pred(score: f64, a: f64, b: f64) -> Prediction {
        Prediction { score, span: span(a, b) }
    }

    fn map_from(scores: Array2<f64>) -> ScoreMap {
        let logits = scores.clone();
        ScoreMap { scores, logits }
    }

    #[test]
    fn single_block_is_returned_for_any_threshold() {
        let grid = build_grid(1, 3.0, Scheme::Sparse).unwrap();
        let map = map_from(Array2::from_elem((1, 1), 0.2));
        for th in [0.0, 0.5, 1.0] {
            assert_eq!(topk_predictions(&map, &grid, 5, th), vec![pred(0.2, 0.0, 3.0)]);
        }
    }

    #[test]
    fn hand_traced_suppression() {
        // T = 4 dense grid, tau = 1. Scores on five blocks, others zero.
        let grid = build_grid(4, 4.0, Scheme::Dense).unwrap();
        let mut s = Array2::zeros((4, 4));
        s[[0, 1]] = 0.9; // [0,2]
        s[[0, 2]] = 0.8; // [0,3]: IoU with [0,2] = 2/3 -> dropped
        s[[1, 2]] = 0.7; // [1,3]: IoU with [0,2] = 1/3 -> kept
        s[[2, 3]] = 0.6; // [2,4]: IoU [0,2] 0, [1,3] 1/3 -> kept
        s[[3, 3]] = 0.5; // [3,4]: IoU [2,4] 1/2 -> dropped at 0.49
        let got = topk_predictions(&map_from(s), &grid, 5, 0.49);
        let spans: Vec<_> = got.iter().map(|p| (p.span.start, p.span.end)).collect();
        // remaining zero-score blocks in tie order: (0,0) [0,1] IoU with [0,2] = 1/2 dropped,
        // (1,1) [1,2] IoU with [1,3] = 1/2 dropped, (0,3) [0,4] IoU [0,2] = 1/2 dropped,
        // (1,3) [1,4] IoU [1,3] = 2/3 dropped, (2,2) [2,3] dropped, then nothing fits
        assert_eq!(spans, vec![(0.0, 2.0), (1.0, 3.0), (2.0, 4.0)]);
    }

    #[test]
    fn identical_spans_keep_the_higher_score() {
        let got = suppress(vec![pred(0.8, 1.0, 3.0), pred(0.9, 1.0, 3.0)], 5, 0.5);
        assert_eq!(got, vec![pred(0.9, 1.0, 3.0)]);
    }

    #[test]
    fn ties_prefer_earlier_then_shorter() {
        let grid = build_grid(3, 3.0, Scheme::Dense).unwrap();
        let got = topk_predictions(&map_from(Array2::from_elem((3, 3), 0.5)), &grid, 6, 1.0);
        let spans: Vec<_> = got.iter().map(|p| (p.span.start, p.span.end)).collect();
        assert_eq!(spans, vec![(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (1.0, 2.0), (1.0, 3.0), (2.0, 3.0)]);
    }

    #[test]
    fn recall_fixtures() {
        let gts = vec![span(0.0, 2.0), span(1.0, 3.0), span(0.0, 4.0), span(5.0, 6.0)];
        let exact: Vec<_> = gts.iter().map(|g| vec![Prediction { score: 1.0, span: *g }]).collect();
        for m in [0.1, 0.5, 1.0] {
            assert_eq!(recall_at(&exact, &gts, 1, m), 1.0);
        }
        let far: Vec<_> = gts.iter().map(|_| vec![pred(1.0, 10.0, 11.0)]).collect();
        assert_eq!(recall_at(&far, &gts, 1, 0.1), 0.0);
        // hits on samples 0 and 2 only
        let mixed = vec![
            vec![pred(0.9, 0.0, 2.0)],
            vec![pred(0.9, 2.5, 3.0)],
            vec![pred(0.9, 0.0, 3.0)],
            vec![pred(0.9, 4.0, 4.5)],
        ];
        assert_eq!(recall_at(&mixed, &gts, 1, 0.5), 0.5);
    }

    #[test]
    fn exact_half_overlap_on_the_grid_counts() {
        let grid = build_grid(8, 9.918339614151895, Scheme::Dense).unwrap();
        let gt = grid.span(1, 3).unwrap();
        let wide = grid.span(1, 6).unwrap();
        assert!(temporal_iou(&wide, &gt) < 0.5, "rounding no longer exercised");
        let preds = vec![vec![Prediction { score: 1.0, span: wide }]];
        assert_eq!(recall_at(&preds, &[gt], 1, 0.5), 1.0);
    }

    #[test]
    fn dump_round_trips() {
        let samples = vec![
            SamplePredictions {
                video_id: "v1".into(),
                gt: span(0.0, 1.0),
                predictions: vec![pred(0.75, 0.0, 1.5), pred(0.5, 2.0, 3.0)],
            },
            SamplePredictions {
                video_id: "v1".into(),
                gt: span(0.0, 1.0),
                predictions: vec![pred(0.25, 1.0, 2.0)],
            },
        ];
        let text = write_dump(&samples);
        assert_eq!(text.lines().next().unwrap(), "v1 1 0.750000 0.000000 1.500000");
        let back = parse_dump(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, samples[0].predictions);
        assert!(parse_dump("v1 2 0.5 0 1\n").is_err());
        assert!(parse_dump("v1 1 x 0 1\n").is_err());
    }

    #[test]
    fn affine_layer_counts_twenty() {
        let mut b = ParamBuilder::new(rng(0));
        crate::nn::Linear::new(&mut b, "fc", 4, 4);
        let mut p = b.finish();
        assert_eq!(param_count(&p), 20);
        p.fill(3.0);
        assert_eq!(param_count(&p), 20);
        assert_eq!(param_breakdown(&p), vec![("fc.weight".to_string(), 16), ("fc.bias".to_string(), 4)]);
    }

    fn random_preds(seed: u64, samples: usize) -> (Vec<Vec<Prediction>>, Vec<MomentSpan>) {
        let mut r = rng(seed);
        let s = |r: &mut rand_chacha::ChaCha8Rng| {
            let a: f64 = r.random_range(0.0..9.0);
            span(a, a + r.random_range(0.1..4.0))
        };
        let gts = (0..samples).map(|_| s(&mut r)).collect();
        let preds = (0..samples)
            .map(|_| (0..5).map(|k| Prediction { score: 1.0 - k as f64 * 0.1, span: s(&mut r) }).collect())
            .collect();
        (preds, gts)
    }

    proptest! {
        #[test]
        fn recall_monotone(seed in 0u64..1000) {
            let (preds, gts) = random_preds(seed, 20);
            let ms = [0.1, 0.3, 0.5, 0.7, 0.9];
            for n in 1..5 {
                for w in ms.windows(2) {
                    prop_assert!(recall_at(&preds, &gts, n, w[1]) <= recall_at(&preds, &gts, n, w[0]));
                }
                for &m in &ms {
                    prop_assert!(recall_at(&preds, &gts, n, m) <= recall_at(&preds, &gts, n + 1, m));
                }
            }
        }

        #[test]
        fn nms_output_is_pairwise_separated(seed in 0u64..1000, th in 0.1f64..0.9) {
            let grid = build_grid(8, 8.0, Scheme::Sparse).unwrap();
            let mut r = rng(seed);
            let s = Array2::from_shape_fn((8, 8), |_| r.random_range(0.0..1.0));
            let got = topk_predictions(&map_from(s), &grid, 5, th);
            for a in 0..got.len() {
                for b in a + 1..got.len() {
                    prop_assert!(temporal_iou(&got[a].span, &got[b].span) <= th);
                }
            }
        }

        #[test]
        fn positive_rescaling_changes_nothing(seed in 0u64..1000, c in 0.01f64..100.0) {
            let grid = build_grid(8, 8.0, Scheme::Sparse).unwrap();
            let mut r = rng(seed);
            let s = Array2::from_shape_fn((8, 8), |_| r.random_range(0.0..1.0));
            let a = topk_predictions(&map_from(s.clone()), &grid, 5, 0.49);
            let b = topk_predictions(&map_from(s * c), &grid, 5, 0.49);
            let spans = |v: &[Prediction]| v.iter().map(|p| p.span).collect::<Vec<_>>();
            prop_assert_eq!(spans(&a), spans(&b));
        }
    }
}
