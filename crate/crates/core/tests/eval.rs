use dcp_core::baselines::{random_compress, selfinfo_compress, Identity, RandomDeletion};
use dcp_core::corpus::{make_synthetic_corpus, PromptRecord};
use dcp_core::eval::{aggregate, evaluate, EvalReport, EvalSettings};
use dcp_core::scoring::{IdfRetention, NgramLm};
use dcp_core::tokenizer::{build_vocabulary, tokenize, TokenId, Vocabulary};

struct Fixture {
    records: Vec<PromptRecord>,
    vocab: Vocabulary,
    lm: NgramLm,
    idf: IdfRetention,
}

fn fixture(n: usize) -> Fixture {
    let records = make_synthetic_corpus(11, n, 0.5).unwrap();
    let vocab = build_vocabulary(&records, 8192).unwrap();
    let lm = NgramLm::fit_records(&records, &vocab, 2, 0.1).unwrap();
    let docs: Vec<Vec<TokenId>> = records.iter().map(|r| tokenize(&r.text, &vocab).into_ids()).collect();
    Fixture {
        idf: IdfRetention::fit(&docs),
        records,
        vocab,
        lm,
    }
}

fn run(f: &Fixture, compressor: &dyn dcp_core::baselines::Compressor) -> EvalReport {
    let settings = EvalSettings {
        n_gen: 16,
        generator: "bigram".into(),
        retention: Some(&f.idf),
    };
    evaluate(compressor, &f.records, &f.vocab, &f.lm, &settings).unwrap()
}

#[test]
fn identity_scores_perfectly() {
    let f = fixture(30);
    let rep = run(&f, &Identity);
    for r in &rep.rows {
        assert_eq!((r.rouge1, r.rouge2, r.rouge_l, r.token_f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.retention, Some(1.0));
        assert_eq!(r.rho, 1.0);
        assert!(r.em.is_some());
    }
}

#[test]
fn gentler_random_deletion_scores_higher() {
    let f = fixture(60);
    let harsh = run(&f, &RandomDeletion { rho: 0.1, seed: 1 });
    let mild = run(&f, &RandomDeletion { rho: 0.9, seed: 1 });
    assert!(mild.mean.retention.unwrap() > harsh.mean.retention.unwrap());
    assert!(mild.mean.rouge1 > harsh.mean.rouge1);
    assert!(mild.mean.rouge_l > harsh.mean.rouge_l);
    assert!(mild.mean.inv_rho < harsh.mean.inv_rho);
}

#[test]
fn aggregate_matches_recomputed_means() {
    let f = fixture(25);
    let rep = run(&f, &RandomDeletion { rho: 0.5, seed: 4 });
    assert_eq!(rep.mean, aggregate(&rep.rows));
    let n = rep.rows.len() as f64;
    let r2 = rep.rows.iter().map(|r| r.rouge2).sum::<f64>() / n;
    let toks = rep.rows.iter().map(|r| r.tokens as f64).sum::<f64>() / n;
    assert!((rep.mean.rouge2 - r2).abs() < 1e-12);
    assert!((rep.mean.tokens - toks).abs() < 1e-12);
}

#[test]
fn selfinfo_keeps_more_keys_than_random() {
    let f = fixture(120);
    let (mut si_keys, mut rnd_keys, mut kept) = (0usize, 0usize, 0usize);
    for (i, rec) in f.records.iter().enumerate() {
        let seq = tokenize(&rec.text, &f.vocab);
        let mask = rec.filler_mask.as_ref().unwrap();
        let si = selfinfo_compress(&seq, &f.lm, 0.5).unwrap();
        let rnd = random_compress(&seq, 0.5, i as u64).unwrap();
        assert_eq!(si.compressed.len(), rnd.compressed.len());
        kept += si.compressed.len();
        si_keys += si.kept_positions.iter().filter(|&&p| !mask[p]).count();
        rnd_keys += rnd.kept_positions.iter().filter(|&&p| !mask[p]).count();
    }
    let (si, rnd) = (si_keys as f64 / kept as f64, rnd_keys as f64 / kept as f64);
    assert!(si > rnd, "selfinfo {si:.3} vs random {rnd:.3}");
}

#[test]
fn matched_random_comparison_counts() {
    use dcp_core::eval::compare_with_random;
    use dcp_core::nn::TransformerConfig;
    use dcp_core::policy::{Actor, Critic};
    use dcp_core::reward::RewardConfig;
    use dcp_core::trainer::{CurriculumSchedule, EpisodeMode, Rollout, Scorers};

    let f = fixture(20);
    let cfg = TransformerConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        ..TransformerConfig::reference(f.vocab.size())
    };
    let (actor, critic) = (Actor::reference(cfg, 1).unwrap(), Critic::reference(cfg, 2).unwrap());
    let schedule = CurriculumSchedule::default();
    let reward = RewardConfig::default();
    let rollout = Rollout {
        actor: &actor,
        critic: &critic,
        schedule: &schedule,
        reward: &reward,
        scorers: Scorers {
            retention: &f.idf,
            lm: &f.lm,
            n_gen: 8,
        },
        discount: 1.0,
    };
    let prompts: Vec<_> = f.records.iter().map(|r| tokenize(&r.text, &f.vocab)).collect();
    let masks: Vec<Vec<bool>> = f.records.iter().map(|r| r.filler_mask.clone().unwrap()).collect();
    let c = compare_with_random(&rollout, &prompts, &masks, 3, EpisodeMode::Sample(3), 9).unwrap();
    assert_eq!(c.prompts, 20);
    assert!(c.mean_rho > 0.0 && c.mean_rho <= 1.0);
    // Fillers are half of every prompt up to rounding.
    assert!((c.chance_precision - 0.5).abs() < 0.01);
    assert!((0.0..=1.0).contains(&c.filler_precision));
    assert_eq!(c, compare_with_random(&rollout, &prompts, &masks, 3, EpisodeMode::Sample(3), 9).unwrap());
    assert!(compare_with_random(&rollout, &prompts[..3], &masks, 3, EpisodeMode::Greedy, 9).is_err());
}
