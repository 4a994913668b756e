use pathagg::kg::GraphBuilder;
use pathagg::lm::{lm_entity_distribution, predict, train, LmConfig, LmParams, TrainConfig};
use pathagg::walk::{CorpusMeta, TokenCorpus, TokenVocab};
use rand_chacha::ChaCha8Rng;

fn small(vocab: usize, seed: u64) -> LmConfig {
    LmConfig {
        layers: 1,
        heads: 2,
        model_dim: 8,
        ff_dim: 16,
        context_len: 8,
        vocab_size: vocab,
        dropout: 0.0,
        seed,
    }
}

fn loss_at(p: &LmParams<f64>, toks: &[u32], b: usize, t: usize) -> f64 {
    p.loss(toks, b, t).unwrap()
}

#[test]
fn gradients_match_central_differences_for_every_tensor() {
    // Perturb the init so layer-norm gains and biases are not at special points.
    let mut p = LmParams::<f64>::init(&small(12, 42)).unwrap();
    for (i, x) in p.data.iter_mut().enumerate() {
        *x += 0.05 * (((i * 7919) % 101) as f64 / 101.0 - 0.5);
    }
    let toks: Vec<u32> = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3]
        .iter()
        .map(|&x| x % 12)
        .collect();
    let (_, grad) = p.loss_and_grad::<ChaCha8Rng>(&toks, 2, 8, None).unwrap();
    let h = 1e-5;
    let mut checked = 0;
    for (name, range, _, _, _) in p.layout.tensors(&p.config) {
        let len = range.len();
        let picks: Vec<usize> = (0..len.min(20))
            .map(|k| range.start + (k * 37) % len)
            .collect();
        let mut worst = 0.0f64;
        for &i in &picks {
            let mut plus = p.clone();
            plus.data[i] += h;
            let mut minus = p.clone();
            minus.data[i] -= h;
            let fd = (loss_at(&plus, &toks, 2, 8) - loss_at(&minus, &toks, 2, 8)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
        assert!(worst <= 1e-4, "{name}: worst relative error {worst:e}");
    }
    assert!(checked >= 20);
}

#[test]
fn initial_loss_is_close_to_log_vocab() {
    let v = 300;
    let cfg = LmConfig {
        layers: 2,
        heads: 4,
        model_dim: 64,
        ff_dim: 256,
        context_len: 32,
        vocab_size: v,
        dropout: 0.0,
        seed: 3,
    };
    let p = LmParams::<f32>::init(&cfg).unwrap();
    let toks: Vec<u32> = (0..4 * 32).map(|i| ((i * 131 + 7) % v) as u32).collect();
    let loss = p.loss(&toks, 4, 32).unwrap();
    let want = (v as f64).ln();
    assert!((loss - want).abs() / want < 0.05, "{loss} vs {want}");
}

fn corpus_of(tokens: Vec<u32>, t: usize, entities: usize, relations: usize) -> TokenCorpus {
    TokenCorpus::from_tokens(
        CorpusMeta {
            vocab_hash: String::new(),
            entities,
            relations,
            t_chunk: t,
            seed: 0,
            l_max: 1,
            walks: 0,
        },
        tokens,
    )
    .unwrap()
}

#[test]
fn repeated_token_chunk_is_memorised() {
    let cfg = small(12, 0);
    let corpus = corpus_of(vec![5; 8], 8, 7, 2);
    let tc = TrainConfig {
        batch_size: 1,
        learning_rate: 1e-2,
        steps: 200,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let (p, _, _) = train(LmParams::<f32>::init(&cfg).unwrap(), &corpus, &tc, |_| {}).unwrap();
    let loss = p.loss(&[5; 8], 1, 8).unwrap();
    assert!(loss < 0.01, "loss {loss}");
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let cfg = small(12, 9);
    let p0 = LmParams::<f32>::init(&cfg).unwrap();
    let corpus = corpus_of((0..16).map(|i| i % 12).collect(), 8, 7, 2);
    let tc = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let (p, _, log) = train(p0.clone(), &corpus, &tc, |_| {}).unwrap();
    assert_eq!(p, p0);
    assert!(log.is_empty());
}

#[test]
fn training_is_bitwise_deterministic() {
    let mut cfg = small(12, 4);
    cfg.dropout = 0.1;
    let corpus = corpus_of((0..64).map(|i| (i * 5 % 12) as u32).collect(), 8, 7, 2);
    let tc = TrainConfig {
        batch_size: 3,
        steps: 25,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || train(LmParams::<f32>::init(&cfg).unwrap(), &corpus, &tc, |_| {}).unwrap();
    let (a, _, la) = run();
    let (b, _, lb) = run();
    assert_eq!(a, b);
    assert_eq!(
        la.last().unwrap().loss.to_bits(),
        lb.last().unwrap().loss.to_bits()
    );
}

#[test]
fn untrained_entity_distribution_is_near_uniform() {
    let mut b = GraphBuilder::new();
    for i in 0..20 {
        b.add(&format!("e{i}"), "r", &format!("e{}", (i + 1) % 20));
    }
    let g = b.build();
    let vocab = TokenVocab::for_graph(&g);
    let p = LmParams::<f32>::init(&LmConfig::desk(vocab.size())).unwrap();
    let r = g.relation_id("r").unwrap();
    for e in 0..20 {
        let d = lm_entity_distribution(&p, &vocab, pathagg::EntityId(e), r).unwrap();
        assert_eq!(d.len(), 20);
        assert!((d.total() - 1.0).abs() < 1e-9);
        let max = d.probs.iter().cloned().fold(0.0, f64::max);
        let min = d.probs.iter().cloned().fold(1.0, f64::min);
        assert!(max / min < 3.0);
    }
}

#[test]
fn deterministic_graph_is_memorised() {
    // Two entities, each pointing at the other.
    let mut b = GraphBuilder::new();
    b.add("a", "r", "b");
    b.add("b", "r", "a");
    let g = b.build();
    let vocab = TokenVocab::for_graph(&g);
    let (a, bb) = (g.entity_id("a").unwrap(), g.entity_id("b").unwrap());
    let r = g.relation_id("r").unwrap();
    let sent = |h, t| {
        vec![
            vocab.entity(h),
            vocab.relation(r),
            vocab.entity(t),
            vocab.period(),
            vocab.eos(),
        ]
    };
    let mut toks = Vec::new();
    for _ in 0..8 {
        toks.extend(sent(a, bb));
        toks.extend(sent(bb, a));
    }
    // One sentence per chunk, so both prompts are seen at position 0.
    let corpus = corpus_of(toks, 5, 2, 1);
    let cfg = small(vocab.size(), 1);
    let tc = TrainConfig {
        batch_size: 4,
        learning_rate: 1e-2,
        steps: 500,
        ..TrainConfig::default()
    };
    let (p, _, _) = train(LmParams::<f32>::init(&cfg).unwrap(), &corpus, &tc, |_| {}).unwrap();
    let d = lm_entity_distribution(&p, &vocab, a, r).unwrap();
    assert!(d.prob(bb) > 0.9, "{:?}", d.probs);
    assert_eq!(predict(&p, &vocab, a, r).unwrap(), bb);
    assert_eq!(predict(&p, &vocab, bb, r).unwrap(), a);
}

#[test]
fn argmax_ignores_constant_logit_shift() {
    // Shifting every entity logit by the same amount is what changing the
    // output bias uniformly would do; emulate it by comparing softmax inputs.
    let mut b = GraphBuilder::new();
    b.add("x", "r", "y");
    b.add("y", "r", "z");
    let g = b.build();
    let vocab = TokenVocab::for_graph(&g);
    let p = LmParams::<f64>::init(&small(vocab.size(), 2)).unwrap();
    let x = g.entity_id("x").unwrap();
    let r = g.relation_id("r").unwrap();
    let logits = p
        .last_logits(&[vocab.entity(x), vocab.relation(r)])
        .unwrap();
    let block = &logits[vocab.entity_block()];
    let shifted: Vec<f64> = block.iter().map(|v| v + 123.0).collect();
    assert_eq!(
        pathagg::dist::argmax(block),
        pathagg::dist::argmax(&shifted)
    );
    assert_eq!(
        predict(&p, &vocab, x, r).unwrap().index(),
        pathagg::dist::argmax(block)
    );
}
