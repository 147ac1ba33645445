use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rolerel::embedding::{
    build_vocabulary, pair_loss_and_gradients, train_skipgram, EmbeddingConfig, NegativeSampler,
    UNIT_NORM_TOLERANCE,
};
use rolerel::synthetic::clique_corpus;

/// Loss written out directly from the definition, for finite differences.
fn reference_loss(center: &[f64], context: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    -sig(dot(context, center)).ln()
        - negatives
            .iter()
            .map(|n| sig(-dot(n, center)).ln())
            .sum::<f64>()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-0.8..0.8)).collect()
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = [2, 5, 30][case % 3];
        let k = [1, 5][case % 2];
        let center = random_vec(&mut rng, d);
        let context = random_vec(&mut rng, d);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut rng, d)).collect();
        let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = pair_loss_and_gradients(&center, &context, &neg_refs).unwrap();
        assert!((g.loss - reference_loss(&center, &context, &negs)).abs() < 1e-12);
        assert!(g.loss >= 0.0);

        // Vector 0 = center, 1 = context, 2.. = negatives.
        for which in 0..(2 + k) {
            for i in 0..d {
                let mut c = center.clone();
                let mut x = context.clone();
                let mut n = negs.clone();
                let bump = |c: &mut Vec<f64>,
                            x: &mut Vec<f64>,
                            n: &mut Vec<Vec<f64>>,
                            delta: f64| match which {
                    0 => c[i] += delta,
                    1 => x[i] += delta,
                    j => n[j - 2][i] += delta,
                };
                bump(&mut c, &mut x, &mut n, eps);
                let plus = reference_loss(&c, &x, &n);
                bump(&mut c, &mut x, &mut n, -2.0 * eps);
                let minus = reference_loss(&c, &x, &n);
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = match which {
                    0 => g.center[i],
                    1 => g.context[i],
                    j => g.negatives[j - 2][i],
                };
                let e = rel_err(analytic, numeric);
                worst = worst.max(e);
                assert!(
                    e < 1e-4,
                    "case {case} vector {which} component {i}: {analytic} vs {numeric}"
                );
            }
        }
    }
    eprintln!("worst relative gradient error: {worst:e}");
}

#[test]
fn sampler_matches_powered_unigram() {
    let corpus: Vec<Vec<String>> = vec![(1..=20)
        .flat_map(|i| std::iter::repeat_n(format!("w{i}"), i))
        .collect()];
    let vocab = build_vocabulary(&corpus, 1).unwrap();
    let sampler = NegativeSampler::new(&vocab, 0.75).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut observed = vec![0u64; vocab.len()];
    for _ in 0..draws {
        observed[sampler.sample(&mut rng)] += 1;
    }
    let weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c as f64).powf(0.75))
        .collect();
    let total: f64 = weights.iter().sum();
    let chi2: f64 = observed
        .iter()
        .zip(&weights)
        .map(|(&o, w)| {
            let e = draws as f64 * w / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((vocab.len() - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn sixteen_to_one_ratio_is_eight() {
    let mut words = vec!["a".to_string(); 16];
    words.push("b".into());
    let vocab = build_vocabulary(&[words], 1).unwrap();
    let sampler = NegativeSampler::new(&vocab, 0.75).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200_000;
    let a = (0..n).filter(|_| sampler.sample(&mut rng) == 0).count() as f64;
    let ratio = a / (n as f64 - a);
    // Expected 8; the standard error of the ratio here is about 0.09.
    assert!((ratio - 8.0).abs() < 0.4, "ratio {ratio}");

    let vocab = build_vocabulary(&[vec!["a".into(), "b".into()]], 1).unwrap();
    let sampler = NegativeSampler::new(&vocab, 0.75).unwrap();
    let a = (0..n).filter(|_| sampler.sample(&mut rng) == 0).count() as f64;
    assert!((a / n as f64 - 0.5).abs() < 0.01);
}

fn cliques() -> Vec<Vec<String>> {
    clique_corpus(&[&["a", "b", "c"], &["x", "y", "z"]], 500, 3)
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = EmbeddingConfig {
        epochs: 3,
        ..Default::default()
    };
    let m1 = train_skipgram(&cliques(), &cfg).unwrap();
    let m2 = train_skipgram(&cliques(), &cfg).unwrap();
    let bits = |m: &rolerel::EmbeddingModel| {
        (0..m.vocab().len())
            .flat_map(|i| m.vector(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .chain(m.output_vectors().unwrap().iter().map(|x| x.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&m1), bits(&m2));
    let m3 = train_skipgram(&cliques(), &EmbeddingConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(bits(&m1), bits(&m3));
}

#[test]
fn cliques_separate_and_loss_falls() {
    let model = train_skipgram(&cliques(), &EmbeddingConfig::default()).unwrap();
    let losses = &model.stats().epoch_mean_loss;
    assert_eq!(losses.len(), 20);
    assert!(
        losses.last().unwrap() < losses.first().unwrap(),
        "{losses:?}"
    );

    let model = model.finalize();
    assert!(model.max_norm_deviation() < UNIT_NORM_TOLERANCE);
    let cos = |u: &str, v: &str| {
        let (p, q) = (model.word_vector(u).unwrap(), model.word_vector(v).unwrap());
        p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>()
    };
    assert!(cos("a", "b") > cos("a", "x"));
    assert!(cos("y", "z") > cos("y", "c"));
}

#[test]
fn initial_vectors_are_small_and_outputs_zero() {
    let cfg = EmbeddingConfig {
        dim: 10,
        epochs: 1,
        lr_initial: 1e-12,
        lr_final: 1e-13,
        ..Default::default()
    };
    let model = train_skipgram(&cliques(), &cfg).unwrap();
    for i in 0..model.vocab().len() {
        assert!(model.vector(i).iter().all(|x| x.abs() <= 0.05 + 1e-9));
    }
    // Outputs start at zero and barely move at this learning rate.
    assert!(model
        .output_vectors()
        .unwrap()
        .iter()
        .all(|x| x.abs() < 1e-9));
}

#[test]
fn loss_decreases_on_natural_text() {
    let text = [
        "the trustee holds the notes for the holders",
        "the issuer pays interest on the notes",
        "an affiliate of the issuer guarantees the notes",
        "the trustee may act on behalf of the holders",
        "the issuer and its affiliate entered into an agreement",
    ];
    let corpus: Vec<Vec<String>> = text
        .iter()
        .cycle()
        .take(200)
        .map(|s| rolerel::tokenize(s))
        .collect();
    let model = train_skipgram(
        &corpus,
        &EmbeddingConfig {
            dim: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let l = &model.stats().epoch_mean_loss;
    assert!(l[l.len() - 1] < l[0], "{l:?}");
}
