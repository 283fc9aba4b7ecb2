mod common;

use duplex_core::graph::Graph;
use duplex_core::kv::KvMap;
use duplex_core::training::{
    batch_loss, joint_loss, multitask_loss, parse_metrics_log, prepare_targets, train, Batch, Objective,
    TrainConfig, Trainer,
};
use duplex_core::vocab::{EOS, PAD};
use duplex_core::{ModelConfig, Tensor};

#[test]
fn uniform_logits_give_log_vocab() {
    let t = prepare_targets(&[5, 6, 7], &[8], 1).unwrap();
    let v = 9;
    let ps = duplex_core::ParamStore::new();
    let mut g = Graph::new(&ps);
    let logits = g.constant(Tensor::zeros(&[2 * t.len(), v]));
    let (_, parts) = joint_loss(&mut g, logits, &[0], &[t.len()], std::slice::from_ref(&t)).unwrap();
    assert!((parts.loss - (v as f64).ln()).abs() < 1e-12);
    // 4 recognition targets, 2 translation targets (DELAY and PAD masked).
    assert_eq!((parts.rec_count, parts.tr_count), (4.0, 2.0));
}

#[test]
fn confident_correct_logits_give_zero_loss() {
    let t = prepare_targets(&[5, 6], &[7, 8], 0).unwrap();
    let v = 9;
    let mut data = vec![0.0; 2 * t.len() * v];
    for (r, &tok) in t.rec_tgt.iter().chain(&t.tr_tgt).enumerate() {
        data[r * v + tok as usize] = 60.0;
    }
    let ps = duplex_core::ParamStore::new();
    let mut g = Graph::new(&ps);
    let logits = g.constant(Tensor::matrix(2 * t.len(), v, data).unwrap());
    let (_, parts) = joint_loss(&mut g, logits, &[0], &[t.len()], &[t]).unwrap();
    assert!(parts.loss < 1e-20);
}

#[test]
fn joint_loss_decomposes_over_streams() {
    let corpus = common::small_corpus(4, 3);
    let model = common::model(&corpus, 32, 0.3, 2, 1);
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let batch = Batch::new(&utts, 2).unwrap();
    let mut g = Graph::new(model.params());
    let (_, p) = batch_loss(&model, &mut g, &batch).unwrap();
    let recombined = (p.rec_loss * p.rec_count + p.tr_loss * p.tr_count) / (p.rec_count + p.tr_count);
    assert!((p.loss - recombined).abs() < 1e-12);
    let all_masked = prepare_targets(&[5], &[6], 0).map(|mut t| {
        t.rec_mask.iter_mut().for_each(|m| *m = 0.0);
        t.tr_mask.iter_mut().for_each(|m| *m = 0.0);
        t
    });
    let ps = duplex_core::ParamStore::new();
    let mut g = Graph::new(&ps);
    let logits = g.constant(Tensor::zeros(&[4, 9]));
    assert!(joint_loss(&mut g, logits, &[0], &[2], &[all_masked.unwrap()]).is_err());
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let corpus = common::small_corpus(5, 4);
    let model = common::model(&corpus, 32, 0.3, 2, 2);
    let fwd: Vec<_> = corpus.utterances.iter().collect();
    let rev: Vec<_> = corpus.utterances.iter().rev().collect();
    assert!((common::loss_of(&model, &fwd) - common::loss_of(&model, &rev)).abs() < 1e-12);
}

#[test]
fn packed_batch_matches_single_items() {
    // Items of different lengths share one packed forward; padding and block
    // offsets must leave every item's loss as if it were alone.
    let corpus = common::small_corpus(6, 14);
    let model = common::model(&corpus, 32, 0.3, 2, 5);
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let parts = |items: &[&duplex_core::Utterance]| {
        let batch = Batch::new(items, 2).unwrap();
        let mut g = Graph::new(model.params());
        batch_loss(&model, &mut g, &batch).unwrap().1
    };
    let whole = parts(&utts);
    let (mut rec, mut tr, mut n_rec, mut n_tr) = (0.0, 0.0, 0.0, 0.0);
    for u in &utts {
        let p = parts(&[u]);
        rec += p.rec_loss * p.rec_count;
        tr += p.tr_loss * p.tr_count;
        n_rec += p.rec_count;
        n_tr += p.tr_count;
    }
    assert_eq!((whole.rec_count, whole.tr_count), (n_rec, n_tr));
    assert!((whole.rec_loss - rec / n_rec).abs() < 1e-10);
    assert!((whole.tr_loss - tr / n_tr).abs() < 1e-10);
}

#[test]
fn masked_targets_get_no_embedding_gradient() {
    // A token appearing only as a masked (PAD) target must not receive
    // gradient through the output layer; its embedding row is untouched
    // because it never appears as an input either.
    let corpus = common::small_corpus(3, 5);
    let model = common::model(&corpus, 32, 0.3, 2, 3);
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let batch = Batch::new(&utts, 2).unwrap();
    let mut g = Graph::new(model.params());
    let (loss, _) = batch_loss(&model, &mut g, &batch).unwrap();
    let grads = g.backward(loss).unwrap();
    let emb = grads.get(model.params().id("decoder.embedding").unwrap());
    assert!(emb.row(PAD as usize).iter().all(|&x| x == 0.0));
    assert!(emb.row(EOS as usize).iter().all(|&x| x == 0.0), "EOS is a target, never an input");
}

#[test]
fn training_reduces_loss_on_copy_task() {
    let corpus = common::small_corpus(50, 6);
    let cfg = TrainConfig { steps: 200, warmup_steps: 50, batch_size: 10, seed: 3, ..TrainConfig::default() };
    let model_cfg = ModelConfig { vocab_size: corpus.vocab.len(), ..ModelConfig::toy(0) };
    let mut t = Trainer::from_scratch(model_cfg, cfg).unwrap();
    let mut losses = Vec::new();
    t.run(&corpus.utterances, |_, r| {
        losses.push(r.loss);
        Ok(())
    })
    .unwrap();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "loss {head} → {tail}");
}

fn short_run(steps: u64, seed: u64) -> (TrainConfig, ModelConfig) {
    let cfg = TrainConfig { steps, warmup_steps: 10, batch_size: 4, seed, checkpoint_every: 3, ..TrainConfig::default() };
    let corpus_vocab = common::small_corpus(1, 7).vocab.len();
    let model_cfg = ModelConfig { d_model: 32, d_ff: 64, vocab_size: corpus_vocab, ..ModelConfig::toy(0) };
    (cfg, model_cfg)
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let corpus = common::small_corpus(12, 7);
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let (cfg, model_cfg) = short_run(5, 11);
        let mut t = Trainer::from_scratch(model_cfg, cfg).unwrap();
        let out = dir.path().join(format!("run{run}"));
        let res = train(&mut t, &corpus.utterances, Some(&corpus.utterances[..4]), Some(&out)).unwrap();
        assert_eq!(res.checkpoints.len(), 2, "steps 3 and 5");
        assert!(out.join("best.ckpt").exists());
        bytes.push(std::fs::read(res.checkpoints.last().unwrap()).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn resume_reproduces_uninterrupted_trajectory() {
    let corpus = common::small_corpus(12, 8);
    let dir = tempfile::tempdir().unwrap();
    let (cfg, model_cfg) = short_run(6, 5);
    let mut full = Trainer::from_scratch(model_cfg.clone(), cfg.clone()).unwrap();
    let straight = train(&mut full, &corpus.utterances, None, Some(&dir.path().join("a"))).unwrap();

    let mut first = Trainer::from_scratch(model_cfg, TrainConfig { steps: 3, ..cfg }).unwrap();
    train(&mut first, &corpus.utterances, None, Some(&dir.path().join("b"))).unwrap();
    let ckpt = dir.path().join("b").join("checkpoint-000003.ckpt");
    let mut resumed = Trainer::resume(&ckpt, &KvMap::parse("steps=6").unwrap()).unwrap();
    assert_eq!(resumed.step_count(), 3);
    let rest = train(&mut resumed, &corpus.utterances, None, Some(&dir.path().join("b"))).unwrap();
    for (a, b) in straight.reports[3..].iter().zip(&rest.reports) {
        assert_eq!(a.step, b.step);
        assert!((a.loss - b.loss).abs() < 1e-6);
    }
    assert_eq!(resumed.model().params(), full.model().params());
    let log = std::fs::read_to_string(dir.path().join("b").join("metrics.log")).unwrap();
    let steps: Vec<u64> = parse_metrics_log(&log).unwrap().iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn lambda_zero_matches_multitask_reference() {
    let corpus = common::small_corpus(16, 9);
    let (cfg, mut model_cfg) = short_run(8, 2);
    model_cfg.lambda_cross = 0.0;
    let trajectory = |objective| {
        let mut t = Trainer::from_scratch(model_cfg.clone(), cfg.clone()).unwrap().with_objective(objective);
        let mut losses = Vec::new();
        t.run(&corpus.utterances, |_, r| {
            losses.push(r.loss);
            Ok(())
        })
        .unwrap();
        losses
    };
    let a = trajectory(Objective::Interactive);
    let b = trajectory(Objective::MultiTaskReference);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn multitask_reference_differs_when_interacting() {
    let corpus = common::small_corpus(4, 10);
    let model = common::model(&corpus, 32, 0.5, 1, 4);
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let batch = Batch::new(&utts, 1).unwrap();
    let mut g = Graph::new(model.params());
    let (_, a) = batch_loss(&model, &mut g, &batch).unwrap();
    let mut g = Graph::new(model.params());
    let (_, b) = multitask_loss(&model, &mut g, &batch).unwrap();
    assert!((a.loss - b.loss).abs() > 1e-6);
}

#[test]
fn divergence_is_reported() {
    let corpus = common::small_corpus(8, 11);
    let (cfg, model_cfg) = short_run(3, 1);
    let mut model = duplex_core::Model::new(model_cfg, 1).unwrap();
    let id = model.params().id("decoder.output.b").unwrap();
    model.params_mut().get_mut(id).data_mut()[7] = f64::NAN;
    let mut t = Trainer::new(model, cfg).unwrap();
    let err = t.run(&corpus.utterances, |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, duplex_core::Error::Diverged { step: 1, .. }), "{err}");
}
