//! Retrieval metrics in both directions and per-region attention scores.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::embedding::similarity_matrix;
use crate::error::{Error, Result};
use crate::gcn::ReasonedRegions;
use crate::model::Model;
use crate::numerics::{dot, norm, Matrix};
use crate::regions::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    TextToVideo,
    VideoToText,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::TextToVideo => "t2v",
            Direction::VideoToText => "v2t",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub med_r: f64,
    pub mean_r: f64,
    pub sum_of_recalls: f64,
}

impl RetrievalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.r1),
            5 => Some(self.r5),
            10 => Some(self.r10),
            _ => None,
        }
    }
}

/// 1-based rank of `target` when row `scores` is sorted by descending value,
/// ties going to the lower index.
fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(g, &s)| s > t || (s == t && g < target))
        .count()
}

/// For every query row of `s`, the best rank among its ground-truth
/// gallery columns.
pub fn rank_queries(s: &Matrix, ground_truth: &[Vec<usize>]) -> Result<Vec<usize>> {
    if ground_truth.len() != s.rows() {
        return Err(Error::Shape {
            op: "rank_queries",
            left: s.shape(),
            right: (ground_truth.len(), 1),
        });
    }
    (0..s.rows())
        .into_par_iter()
        .map(|q| {
            let gt = &ground_truth[q];
            if gt.is_empty() {
                return Err(Error::Config(format!("query {q} has no ground-truth item")));
            }
            if let Some(&g) = gt.iter().find(|&&g| g >= s.cols()) {
                return Err(Error::Config(format!(
                    "query {q} names gallery item {g} but the gallery has {}",
                    s.cols()
                )));
            }
            Ok(gt
                .iter()
                .map(|&g| rank_of(s.row(q), g))
                .min()
                .expect("non-empty"))
        })
        .collect()
}

pub fn report(ranks: &[usize], direction: Direction) -> Result<RetrievalReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("report"));
    }
    let q = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / q;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let med_r = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    let mean_r = ranks.iter().sum::<usize>() as f64 / q;
    let (r1, r5, r10) = (recall(1), recall(5), recall(10));
    Ok(RetrievalReport {
        direction,
        r1,
        r5,
        r10,
        med_r,
        mean_r,
        sum_of_recalls: r1 + r5 + r10,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// Normalized score per region, indexed by region.
    pub region_scores: Vec<f64>,
    /// 0-based rank per region, indexed by region.
    pub region_ranks: Vec<usize>,
}

/// Ranks regions by cosine similarity to the frame feature and scores rank
/// `r` as `(n − r)²`, normalized to sum to one.
pub fn attention_map(z: &ReasonedRegions) -> Result<AttentionMap> {
    let n = z.z.rows();
    if n == 0 {
        return Err(Error::EmptyInput("attention_map"));
    }
    let frame_norm = norm(&z.frame_feature);
    if frame_norm == 0.0 || !frame_norm.is_finite() {
        return Err(Error::Degenerate("frame feature has zero norm".into()));
    }
    let sims: Vec<f64> = (0..n)
        .map(|i| {
            let row = z.z.row(i);
            let rn = norm(row);
            if rn == 0.0 {
                0.0
            } else {
                dot(row, &z.frame_feature) / (rn * frame_norm)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut region_ranks = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        region_ranks[i] = r;
    }
    let total = (n * (n + 1) * (2 * n + 1) / 6) as f64;
    let region_scores = region_ranks
        .iter()
        .map(|&r| ((n - r) * (n - r)) as f64 / total)
        .collect();
    Ok(AttentionMap {
        region_scores,
        region_ranks,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub text_to_video: RetrievalReport,
    pub video_to_text: RetrievalReport,
    /// Videos on rows, captions on columns.
    pub similarity: Matrix,
}

impl Evaluation {
    pub fn reports(&self) -> [&RetrievalReport; 2] {
        [&self.text_to_video, &self.video_to_text]
    }

    /// Sum of recalls over both directions.
    pub fn total_recall(&self) -> f64 {
        self.text_to_video.sum_of_recalls + self.video_to_text.sum_of_recalls
    }
}

/// Encodes a whole split and reports retrieval in both directions.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let videos = ds
        .videos
        .par_iter()
        .map(|v| model.encode_video(v))
        .collect::<Result<Vec<_>>>()?;
    let texts = ds
        .captions
        .par_iter()
        .map(|c| model.encode_text(&c.token_ids))
        .collect::<Result<Vec<_>>>()?;
    let similarity = similarity_matrix(&videos, &texts)?;

    let t2v_truth: Vec<Vec<usize>> = ds.captions.iter().map(|c| vec![c.video_id]).collect();
    let mut v2t_truth = vec![Vec::new(); ds.videos.len()];
    for (j, c) in ds.captions.iter().enumerate() {
        v2t_truth[c.video_id].push(j);
    }
    let t2v = rank_queries(&similarity.transpose(), &t2v_truth)?;
    let v2t = rank_queries(&similarity, &v2t_truth)?;
    Ok(Evaluation {
        text_to_video: report(&t2v, Direction::TextToVideo)?,
        video_to_text: report(&v2t, Direction::VideoToText)?,
        similarity,
    })
}

pub fn write_reports_csv<'a, W: Write>(
    reports: impl IntoIterator<Item = &'a RetrievalReport>,
    mut w: W,
) -> Result<()> {
    writeln!(w, "direction,r1,r5,r10,medr,meanr,sumr")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.direction, r.r1, r.r5, r.r10, r.med_r, r.mean_r, r.sum_of_recalls
        )?;
    }
    Ok(())
}

/// One line of the attention export.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub video_id: usize,
    pub frame_index: usize,
    pub region_index: usize,
    pub rank: usize,
    pub score: f64,
}

/// Attention rows for every region of every frame of the first
/// `max_videos` videos.
pub fn attention_rows(model: &Model, ds: &Dataset, max_videos: usize) -> Result<Vec<AttentionRow>> {
    let per_video = ds
        .videos
        .par_iter()
        .take(max_videos)
        .map(|v| {
            let mut rows = Vec::new();
            for f in &v.frames {
                let map = attention_map(&model.reason_frame(&f.features)?)?;
                for (region_index, (&rank, &score)) in
                    map.region_ranks.iter().zip(&map.region_scores).enumerate()
                {
                    rows.push(AttentionRow {
                        video_id: v.video_id,
                        frame_index: f.frame_index,
                        region_index,
                        rank,
                        score,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

pub fn write_attention_csv<W: Write>(rows: &[AttentionRow], mut w: W) -> Result<()> {
    writeln!(w, "video_id,frame_index,region_index,rank,score")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.video_id, r.frame_index, r.region_index, r.rank, r.score
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn diag(g: usize) -> Vec<Vec<usize>> {
        (0..g).map(|i| vec![i]).collect()
    }

    #[test]
    fn perfect_and_worst_ranks() {
        let mut s = Matrix::filled(5, 5, 0.1);
        for i in 0..5 {
            s[(i, i)] = 0.9;
        }
        assert_eq!(rank_queries(&s, &diag(5)).unwrap(), vec![1; 5]);
        let s = Matrix::from_rows(&[[0.9, 0.8, 0.7, 0.6, 0.5]]);
        assert_eq!(rank_queries(&s, &[vec![4]]).unwrap(), vec![5]);
    }

    #[test]
    fn ties_favour_the_lower_index() {
        let s = Matrix::from_rows(&[[0.5, 0.5, 0.5]]);
        assert_eq!(rank_queries(&s, &[vec![2]]).unwrap(), vec![3]);
        assert_eq!(rank_queries(&s, &[vec![0]]).unwrap(), vec![1]);
    }

    #[test]
    fn several_positives_use_the_best() {
        let s = Matrix::from_rows(&[[0.9, 0.1, 0.5, 0.7]]);
        assert_eq!(rank_queries(&s, &[vec![1, 2]]).unwrap(), vec![3]);
    }

    #[test]
    fn missing_ground_truth_is_a_config_error() {
        let s = Matrix::zeros(2, 2);
        assert!(matches!(
            rank_queries(&s, &[vec![0], vec![]]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_hand_case() {
        let r = report(&[1, 2, 3, 1], Direction::TextToVideo).unwrap();
        assert_eq!(r.r1, 50.0);
        assert_eq!(r.med_r, 1.5);
        assert_eq!(r.mean_r, 1.75);
        assert_eq!(r.r5, 100.0);
        let p = report(&[1; 7], Direction::VideoToText).unwrap();
        assert_eq!(
            (p.r1, p.r5, p.r10, p.sum_of_recalls),
            (100.0, 100.0, 100.0, 300.0)
        );
        assert_eq!(
            report(&[3, 1, 2], Direction::TextToVideo).unwrap().med_r,
            2.0
        );
    }

    fn frame(z: Matrix) -> ReasonedRegions {
        let frame_feature = z.mean_rows().unwrap().into_vec();
        ReasonedRegions { z, frame_feature }
    }

    #[test]
    fn attention_scores_by_rank() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.9]]);
        let m = attention_map(&frame(z)).unwrap();
        let mut by_rank = vec![0.0; 4];
        for (r, s) in m.region_ranks.iter().zip(&m.region_scores) {
            by_rank[*r] = *s;
        }
        assert_eq!(
            by_rank,
            vec![16.0 / 30.0, 9.0 / 30.0, 4.0 / 30.0, 1.0 / 30.0]
        );
        // the mean (0.75, 0.725) sits at about 44 degrees
        assert_eq!(m.region_ranks, vec![2, 0, 3, 1]);
    }

    #[test]
    fn singleton_and_zero_frame() {
        let m = attention_map(&frame(Matrix::from_rows(&[[2.0, 1.0]]))).unwrap();
        assert_eq!(m.region_scores, vec![1.0]);
        let zero = ReasonedRegions {
            z: Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]),
            frame_feature: vec![0.0, 0.0],
        };
        assert!(matches!(attention_map(&zero), Err(Error::Degenerate(_))));
    }

    fn brute_force_rank(row: &[f64], gt: &[usize]) -> usize {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps lower indices first among equal scores
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        idx.iter().position(|g| gt.contains(g)).unwrap() + 1
    }

    proptest! {
        #[test]
        fn ranks_match_a_full_sort(seed in any::<u64>(), q in 1usize..20, g in 1usize..20) {
            let mut rng = Rng::new(seed);
            // coarse values make ties common
            let s = Matrix::from_vec(q, g, (0..q * g).map(|_| rng.index(5) as f64 / 4.0).collect()).unwrap();
            let gt: Vec<Vec<usize>> = (0..q).map(|_| {
                let k = 1 + rng.index(g.min(3));
                (0..k).map(|_| rng.index(g)).collect()
            }).collect();
            let ranks = rank_queries(&s, &gt).unwrap();
            for i in 0..q {
                prop_assert_eq!(ranks[i], brute_force_rank(s.row(i), &gt[i]));
            }
            let r = report(&ranks, Direction::TextToVideo).unwrap();
            prop_assert!(r.r1 <= r.r5 && r.r5 <= r.r10 && r.r10 <= 100.0);
            prop_assert!(r.med_r >= 1.0 && r.mean_r >= 1.0);
            prop_assert!(r.med_r <= g as f64 && r.mean_r <= g as f64);
        }

        #[test]
        fn attention_sums_to_one(seed in any::<u64>(), n in 1usize..40, d in 1usize..6) {
            let mut rng = Rng::new(seed);
            let z = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform(0.1, 1.0)).collect()).unwrap();
            let m = attention_map(&frame(z)).unwrap();
            let total: f64 = m.region_scores.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let mut ranks = m.region_ranks.clone();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn csv_exports() {
        let r = report(&[1, 2, 3, 1], Direction::TextToVideo).unwrap();
        let mut buf = Vec::new();
        write_reports_csv([&r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "direction,r1,r5,r10,medr,meanr,sumr\nt2v,50,100,100,1.5,1.75,250\n"
        );
        let rows = [AttentionRow {
            video_id: 1,
            frame_index: 2,
            region_index: 3,
            rank: 0,
            score: 0.5,
        }];
        let mut buf = Vec::new();
        write_attention_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "video_id,frame_index,region_index,rank,score\n1,2,3,0,0.5\n"
        );
    }
}
