//! Whole-pipeline behaviour on small synthetic data.

use visern::config::TrainConfig;
use visern::eval::evaluate;
use visern::model::Model;
use visern::regions::synth::{synth_dataset, synth_vocab, SynthConfig};
use visern::regions::{load_split, save_split, write_vocab, Dataset, Split, SplitFiles};
use visern::trainer::{model_config, train, Checkpoint};

fn data(seed: u64, pairs: usize, split: Split) -> Dataset {
    let cfg = SynthConfig {
        seed,
        num_pairs: pairs,
        frames: 2,
        n: 4,
        d: 16,
        vocab_size: 40,
        num_topics: 8,
        caption_len: 4,
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, split).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 15,
        batch_size: 16,
        lr: 3e-3,
        common_dim: 16,
        word_dim: 12,
        ..TrainConfig::default()
    }
}

#[test]
fn random_weights_rank_at_chance() {
    let q = 100;
    let ds = data(3, q, Split::Test);
    let mut means = Vec::new();
    for seed in 0..20 {
        let model = Model::init(model_config(&small_config(), 16, 40), seed).unwrap();
        let ev = evaluate(&model, &ds).unwrap();
        for r in ev.reports() {
            assert!(
                (q as f64 / 2.0 - 15.0..=q as f64 / 2.0 + 15.0).contains(&r.mean_r),
                "seed {seed} {}: mean rank {}",
                r.direction,
                r.mean_r
            );
            means.push(r.mean_r);
        }
    }
    let average = means.iter().sum::<f64>() / means.len() as f64;
    assert!((average - 50.5).abs() < 5.0, "{average}");
}

#[test]
fn training_beats_the_untrained_model_on_its_own_split() {
    let (tr, va) = (data(5, 64, Split::Train), data(5, 32, Split::Val));
    let cfg = small_config();
    let out = train(&tr, &va, &cfg).unwrap();
    let untrained = Model::init(model_config(&cfg, 16, 40), cfg.seed).unwrap();
    let before = evaluate(&untrained, &tr).unwrap().total_recall();
    let after = evaluate(&out.last.model, &tr).unwrap().total_recall();
    assert!(after > before, "{after} <= {before}");
    assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
}

#[test]
fn saved_artifacts_reload_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, va) = (data(9, 24, Split::Train), data(9, 12, Split::Val));
    save_split(dir.path(), &tr).unwrap();
    save_split(dir.path(), &va).unwrap();
    let vocab = std::fs::File::create(SplitFiles::new(dir.path(), Split::Train).vocab).unwrap();
    write_vocab(&synth_vocab(40), vocab).unwrap();
    let tr2 = load_split(dir.path(), Split::Train).unwrap();
    let va2 = load_split(dir.path(), Split::Val).unwrap();

    let cfg = TrainConfig {
        max_epochs: 3,
        ..small_config()
    };
    let out = train(&tr2, &va2, &cfg).unwrap();
    let path = dir.path().join("ck.vsck");
    out.best.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.best);
    assert_eq!(
        evaluate(&back.model, &va2).unwrap(),
        evaluate(&out.best.model, &va2).unwrap()
    );
    // Features pass through f32 on disk, so the reloaded split is close but not equal.
    let a = out.best.model.encode_video(&tr.videos[0]).unwrap();
    let b = back.model.encode_video(&tr2.videos[0]).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-5));
}
