//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits with status 1 if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rolerel::corpus::write_triples;
use rolerel::embedding::{pair_loss_and_gradients, NegativeSampler, UNIT_NORM_TOLERANCE};
use rolerel::eval::{ndcg_from_gains, run_protocol, Protocol};
use rolerel::synthetic::{clique_corpus, role_triples, SyntheticRoles};
use rolerel::{
    build_corpus, build_vocabulary, context_vector, ndcg, train_forest, train_skipgram,
    EmbeddingConfig, EmbeddingModel, ForestConfig, GainMap, RelevanceLabel, Role, RunConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradients() -> Outcome {
    fn loss(c: &[f64], x: &[f64], n: &[Vec<f64>]) -> f64 {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        -sig(dot(x, c)).ln() - n.iter().map(|v| sig(-dot(v, c)).ln()).sum::<f64>()
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = [2, 5, 30][case % 3];
        let k = [1, 5][case % 2];
        let mut draw = || -> Vec<f64> { (0..d).map(|_| rng.random_range(-0.8..0.8)).collect() };
        let mut vs: Vec<Vec<f64>> = (0..2 + k).map(|_| draw()).collect();
        let negs: Vec<&[f64]> = vs[2..].iter().map(Vec::as_slice).collect();
        let g = pair_loss_and_gradients(&vs[0], &vs[1], &negs).map_err(|e| e.to_string())?;
        let analytic: Vec<Vec<f64>> = [g.center.clone(), g.context.clone()]
            .into_iter()
            .chain(g.negatives.iter().cloned())
            .collect();
        for w in 0..vs.len() {
            for i in 0..d {
                vs[w][i] += eps;
                let plus = loss(&vs[0], &vs[1], &vs[2..]);
                vs[w][i] -= 2.0 * eps;
                let minus = loss(&vs[0], &vs[1], &vs[2..]);
                vs[w][i] += eps;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[w][i];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!("100 cases, worst relative error {worst:.1e}"))
}

fn unit_norm() -> Outcome {
    let corpus = build_corpus(
        &role_triples(&SyntheticRoles {
            triples_per_role: 50,
            ..Default::default()
        })
        .unwrap(),
    );
    let mut worst: f64 = 0.0;
    for (seed, dim) in [(1, 30), (2, 7), (3, 30)] {
        let cfg = EmbeddingConfig {
            dim,
            epochs: 2,
            seed,
            ..Default::default()
        };
        let m = train_skipgram(&corpus, &cfg)
            .map_err(|e| e.to_string())?
            .finalize();
        worst = worst.max(m.max_norm_deviation());
    }
    ensure(worst < 1e-6, || format!("max norm deviation {worst:e}"))?;
    Ok(format!(
        "max |norm - 1| = {worst:.1e} over 3 models (also checked in 7, 8, 9)"
    ))
}

fn sampler() -> Outcome {
    let corpus = vec![(1..=20)
        .flat_map(|i| std::iter::repeat_n(format!("w{i}"), i))
        .collect::<Vec<_>>()];
    let vocab = build_vocabulary(&corpus, 1).map_err(|e| e.to_string())?;
    let s = NegativeSampler::new(&vocab, 0.75).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut obs = vec![0u64; vocab.len()];
    for _ in 0..draws {
        obs[s.sample(&mut rng)] += 1;
    }
    let w: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c as f64).powf(0.75))
        .collect();
    let total: f64 = w.iter().sum();
    let chi2: f64 = obs
        .iter()
        .zip(&w)
        .map(|(&o, wi)| {
            let e = draws as f64 * wi / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
    ensure(p > 0.01, || format!("chi2 {chi2:.2}, p {p:.4}"))?;
    Ok(format!("chi2 {chi2:.2} on 19 dof, p = {p:.3}"))
}

fn cfv_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n_words, dim) = (50, 30);
    let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let vectors: Vec<f64> = (0..n_words * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let m = EmbeddingModel::from_vectors(words, dim, vectors)
        .map_err(|e| e.to_string())?
        .finalize();
    let join = |c: &[Vec<String>]| c.iter().map(|s| s.join(" ")).collect::<Vec<_>>();
    let mut oov = 0;
    for case in 0..1200 {
        let ctx: Vec<Vec<String>> = (0..rng.random_range(1..=3))
            .map(|_| {
                (0..rng.random_range(1..12))
                    .map(|_| {
                        if rng.random_bool(0.15) {
                            format!("oov{}", rng.random_range(0..9))
                        } else {
                            format!("w{}", rng.random_range(0..n_words))
                        }
                    })
                    .collect()
            })
            .collect();
        let base = context_vector(&join(&ctx), &m);
        let mut shuffled = ctx.clone();
        shuffled.iter_mut().for_each(|s| s.shuffle(&mut rng));
        shuffled.shuffle(&mut rng);
        ensure(context_vector(&join(&shuffled), &m) == base, || {
            format!("case {case}: order changed the vector")
        })?;
        let times = rng.random_range(2..6);
        let repeated: Vec<String> = std::iter::repeat_n(join(&ctx), times).flatten().collect();
        ensure(context_vector(&repeated, &m) == base, || {
            format!("case {case}: repetition changed the vector")
        })?;
        if base.oov {
            oov += 1;
            ensure(base.is_zero(), || {
                format!("case {case}: unknown context is not zero")
            })?;
        } else {
            let norm = dot(&base.values, &base.values).sqrt();
            ensure((norm - 1.0).abs() < 1e-6, || {
                format!("case {case}: norm {norm}")
            })?;
        }
    }
    let all_oov = context_vector(&["only unknown words", "99"], &m);
    ensure(all_oov.oov && all_oov.values == vec![0.0; dim], || {
        "all-unknown context is not zero".into()
    })?;
    Ok(format!(
        "1200 random contexts ({oov} fully unknown) plus explicit all-unknown case"
    ))
}

fn ndcg_oracle() -> Outcome {
    fn dcg(g: &[f64]) -> f64 {
        g.iter()
            .enumerate()
            .map(|(i, x)| (2f64.powf(*x) - 1.0) / (i as f64 + 2.0).log2())
            .sum()
    }
    fn best(g: &mut Vec<f64>, k: usize, acc: &mut f64) {
        if k == g.len() {
            *acc = acc.max(dcg(g));
            return;
        }
        for i in k..g.len() {
            g.swap(k, i);
            best(g, k + 1, acc);
            g.swap(k, i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.random_range(1..=6);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let mut ideal = 0.0;
        best(&mut g.clone(), 0, &mut ideal);
        let got = ndcg_from_gains(&g, None);
        if ideal > 0.0 {
            let want = dcg(&g) / ideal;
            ensure((got.value - want).abs() < 1e-12, || {
                format!("case {case}: {} vs {want}", got.value)
            })?;
        } else {
            ensure(got.degenerate && got.value == 1.0, || {
                format!("case {case}: zero-gain ranking")
            })?;
        }
        let mut sorted = g.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        ensure(ndcg_from_gains(&sorted, None).value == 1.0, || {
            format!("case {case}: perfect ranking")
        })?;
    }
    let two = ndcg(
        &[RelevanceLabel::Irrelevant, RelevanceLabel::HighlyRelevant],
        &GainMap::default(),
        None,
    )
    .value;
    ensure((two - 0.6309).abs() < 1e-4, || {
        format!("two-item example {two}")
    })?;
    Ok(format!(
        "200 rankings match brute force; two-item example {two:.4}"
    ))
}

fn forest_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut data = Vec::new();
    for (cx, cy) in [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)] {
        for _ in 0..50 {
            let p = vec![
                cx + rng.random_range(-0.2..0.2),
                cy + rng.random_range(-0.2..0.2),
            ];
            data.push((p, cx != cy));
        }
    }
    let role = Role::new("issuer").map_err(|e| e.to_string())?;
    let cfg = ForestConfig {
        features_per_split: Some(2),
        ..Default::default()
    };
    let clf = train_forest(role.clone(), &data, &cfg).map_err(|e| e.to_string())?;
    let json = clf.to_json().map_err(|e| e.to_string())?;
    let again = train_forest(role, &data, &cfg)
        .map_err(|e| e.to_string())?
        .to_json()
        .map_err(|e| e.to_string())?;
    ensure(json == again, || "same seed gave different bytes".into())?;

    let parsed: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let trees = parsed["trees"].as_array().ok_or("no trees array")?;
    let walk = |nodes: &serde_json::Value, x: &[f64]| {
        let mut i = 0;
        loop {
            let n = &nodes[i];
            if let Some(p) = n.get("p") {
                return p.as_f64().unwrap();
            }
            let f = n["f"].as_u64().unwrap() as usize;
            i = if x[f] <= n["t"].as_f64().unwrap() {
                n["l"].as_u64()
            } else {
                n["r"].as_u64()
            }
            .unwrap() as usize;
        }
    };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = [rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)];
        let mean = trees.iter().map(|t| walk(t, &x)).sum::<f64>() / trees.len() as f64;
        worst = worst.max((clf.predict_proba(&x).map_err(|e| e.to_string())? - mean).abs());
    }
    ensure(worst < 1e-12, || format!("traversal mismatch {worst:e}"))?;
    let correct = data
        .iter()
        .filter(|(x, y)| (clf.predict_proba(x).unwrap() >= 0.5) == *y)
        .count();
    let acc = correct as f64 / data.len() as f64;
    ensure(acc >= 0.95, || format!("XOR training accuracy {acc}"))?;
    Ok(format!(
        "traversal diff {worst:.1e}, byte-identical reruns, XOR accuracy {acc:.3}"
    ))
}

fn synthetic_experiment() -> Outcome {
    let labeled = role_triples(&SyntheticRoles::default()).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let emb = train_skipgram(&build_corpus(&labeled), &cfg.embedding_config())
        .map_err(|e| e.to_string())?
        .finalize();
    ensure(emb.max_norm_deviation() < UNIT_NORM_TOLERANCE, || {
        "embedding not unit norm".into()
    })?;
    let protocol = Protocol {
        fractions: vec![0.1, 0.5, 0.9],
        forest: cfg.forest_config(),
        split_seed: cfg.split_seed(),
        threshold: cfg.threshold,
        gains: cfg.gains,
    };
    let runs = run_protocol(&labeled, Arc::new(emb), &protocol).map_err(|e| e.to_string())?;
    let (mut min_f1, mut min_ndcg) = (f64::INFINITY, f64::INFINITY);
    let mut cells = 0;
    for run in &runs {
        ensure(run.skipped_roles.is_empty(), || {
            format!("fraction {}: skipped roles", run.fraction)
        })?;
        for r in &run.evaluation.roles {
            cells += 1;
            min_f1 = min_f1.min(r.f1);
            min_ndcg = min_ndcg.min(r.ndcg);
            ensure(r.f1 >= 0.90 && r.ndcg >= 0.90, || {
                format!(
                    "{} at {}: F1 {:.4}, NDCG {:.4}",
                    r.role, run.fraction, r.f1, r.ndcg
                )
            })?;
        }
    }
    ensure(cells == 9, || format!("expected 9 cells, got {cells}"))?;
    Ok(format!(
        "9 cells, min F1 {min_f1:.4}, min NDCG {min_ndcg:.4}"
    ))
}

fn cliques() -> Outcome {
    let groups: [&[&str]; 2] = [&["a", "b", "c"], &["x", "y", "z"]];
    let corpus = clique_corpus(&groups, 500, 2017);
    let m = train_skipgram(&corpus, &EmbeddingConfig::default())
        .map_err(|e| e.to_string())?
        .finalize();
    ensure(m.max_norm_deviation() < UNIT_NORM_TOLERANCE, || {
        "embedding not unit norm".into()
    })?;
    for group in groups {
        for w in group {
            let nn = m
                .nearest_neighbors(w, group.len() - 1)
                .map_err(|e| e.to_string())?;
            ensure(nn.iter().all(|(n, _)| group.contains(&n.as_str())), || {
                format!("{w}: {nn:?}")
            })?;
        }
    }
    Ok("every word's top-2 neighbors are in its own clique".into())
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn reproducible_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let labeled = tmp.path().join("labeled.jsonl");
    let triples = role_triples(&SyntheticRoles::default()).map_err(|e| e.to_string())?;
    write_triples(
        fs::File::create(&labeled).map_err(|e| e.to_string())?,
        &triples,
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_rolerel"))
            .args(["--seed", "42", "--threads", "1", "--out"])
            .arg(&out)
            .arg("pipeline")
            .arg("--labeled")
            .arg(&labeled)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        outputs.push(files_under(&out));
    }
    let emb = EmbeddingModel::read_text(&outputs[0][Path::new("embeddings.txt")][..])
        .map_err(|e| e.to_string())?;
    ensure(emb.max_norm_deviation() < UNIT_NORM_TOLERANCE, || {
        "written embedding not unit norm".into()
    })?;
    let names: Vec<_> = outputs[0].keys().collect();
    ensure(outputs[0].keys().eq(outputs[1].keys()), || {
        "different file sets".into()
    })?;
    for (name, bytes) in &outputs[0] {
        ensure(&outputs[1][name] == bytes, || {
            format!("{} differs", name.display())
        })?;
    }
    Ok(format!(
        "{} files byte-identical across two runs",
        names.len()
    ))
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .unwrap();
    let criteria: [Criterion; 9] = [
        ("gradient check", gradients, Duration::from_secs(5)),
        ("unit-norm vectors", unit_norm, Duration::from_secs(60)),
        (
            "negative sampling distribution",
            sampler,
            Duration::from_secs(2),
        ),
        (
            "context vector properties",
            cfv_properties,
            Duration::from_secs(5),
        ),
        ("NDCG oracle", ndcg_oracle, Duration::from_secs(2)),
        (
            "forest oracle and determinism",
            forest_oracle,
            Duration::from_secs(30),
        ),
        (
            "synthetic roles experiment",
            synthetic_experiment,
            Duration::from_secs(180),
        ),
        ("clique neighbors", cliques, Duration::from_secs(60)),
        (
            "pipeline reproducibility",
            reproducible_pipeline,
            Duration::from_secs(300),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|msg| {
            if took <= *limit {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {took:.2?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(msg) => println!("PASS {} {name}: {msg} ({took:.2?})", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} ({took:.2?})", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
