//! Normalization ablation: the same training run repeated for every
//! normalization kind, each evaluated on a held-out split.

use std::io::Write;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::eval::{evaluate, Evaluation};
use crate::graph::Normalization;
use crate::regions::Dataset;
use crate::trainer::{prepare, train, EpochLog};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub kind: Normalization,
    pub evaluation: Evaluation,
    pub log: Vec<EpochLog>,
}

/// Trains and evaluates once per kind in [`Normalization::ALL`] order.
/// `none` bypasses the reasoning layer.
pub fn ablate(
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let test = prepare(test, cfg.frames);
    Normalization::ALL
        .iter()
        .map(|&kind| {
            let run_cfg = TrainConfig {
                normalization: kind,
                ..cfg.clone()
            };
            let out = train(train_set, val, &run_cfg)?;
            Ok(AblationRow {
                kind,
                evaluation: evaluate(&out.last.model, &test)?,
                log: out.log,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "kind,t2v_r1,t2v_r5,t2v_r10,t2v_medr,t2v_meanr,v2t_r1,v2t_r5,v2t_r10,v2t_medr,v2t_meanr,sumr"
    )?;
    for row in rows {
        let (t, v) = (&row.evaluation.text_to_video, &row.evaluation.video_to_text);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.kind,
            t.r1,
            t.r5,
            t.r10,
            t.med_r,
            t.mean_r,
            v.r1,
            v.r5,
            v.r10,
            v.med_r,
            v.mean_r,
            row.evaluation.total_recall()
        )?;
    }
    Ok(())
}
