mod common;

use common::*;
use hierbench_core::data::{ClientDataset, Sample};
use hierbench_core::eval::{evaluate, EvalConfig};
use hierbench_core::grammar::{check_syntax, GrammarSpec};
use hierbench_core::model::*;
use hierbench_core::synth::{generate_corpus, reference_vocab, SynthConfig};

#[test]
fn gradient_matches_central_differences() {
    let v = paren_vocab();
    for seed in 0..5 {
        for width in [0, 1, 2] {
            let model = ToyModel::gaussian(v.clone(), width, 1.0, seed);
            let data = random_dataset(&v, "d", 12, seed);
            let grad = gradient(&model, &data).unwrap();
            let h = 1e-5;
            for i in 0..model.params().len() {
                let mut plus = model.params().values().to_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (cross_entropy(&model.with_values(plus).unwrap(), &data).unwrap()
                    - cross_entropy(&model.with_values(minus).unwrap(), &data).unwrap())
                    / (2.0 * h);
                if fd.abs() < 1e-7 && grad[i].abs() < 1e-7 {
                    continue;
                }
                assert!(rel_err(grad[i], fd) < 1e-4, "seed {seed} width {width} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }
}

/// Gradient descent driven by finite-difference gradients.
fn fd_trajectory(model: &ToyModel, data: &ClientDataset, epochs: usize, lr: f64) -> Vec<f64> {
    let mut values = model.params().values().to_vec();
    let loss = |vals: &[f64]| cross_entropy(&model.with_values(vals.to_vec()).unwrap(), data).unwrap();
    let mut out = vec![loss(&values)];
    for _ in 0..epochs {
        let h = 1e-5;
        let grad: Vec<f64> = (0..values.len())
            .map(|i| {
                let mut p = values.clone();
                let mut m = values.clone();
                p[i] += h;
                m[i] -= h;
                (loss(&p) - loss(&m)) / (2.0 * h)
            })
            .collect();
        values.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
        out.push(loss(&values));
    }
    out
}

#[test]
fn loss_trajectory_matches_finite_difference_reference() {
    let vocab = reference_vocab();
    let corpus = generate_corpus(&vocab, &SynthConfig { samples_per_repo: 3, ..SynthConfig::default() }, 7).unwrap();
    let samples: Vec<Sample> = corpus.iter().flat_map(|d| d.samples().iter().cloned()).take(10).collect();
    let data = ClientDataset::new("fixed", samples).unwrap();
    assert_eq!(data.len(), 10);
    let model = ToyModel::gaussian(std::sync::Arc::new(vocab), 2, 0.1, 7);
    let (_, losses) = train_local_traced(&model, &data, &TrainConfig { epochs: 5, lr: 0.5 }).unwrap();
    let reference = fd_trajectory(&model, &data, 5, 0.5);
    assert_eq!(losses.len(), 6);
    for (a, b) in losses.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn conditionals_stay_normalized_after_training() {
    let v = two_pair_vocab();
    let model = ToyModel::gaussian(v.clone(), 2, 2.0, 3);
    let data = random_dataset(&v, "d", 30, 3);
    let trained = train_local(&model, &data, &TrainConfig { epochs: 20, lr: 3.0 }).unwrap();
    for ctx in 0..trained.contexts().len() {
        let total: f64 = trained.probs(ctx).iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

/// Independent validity oracle: delete innermost matched pairs until none
/// remain, and measure nesting with a plain counter.
fn oracle_valid(seq: &[usize], pairs: &[(usize, usize)], eos: usize, max_depth: usize) -> bool {
    let Some((&last, body)) = seq.split_last() else { return false };
    if last != eos || body.contains(&eos) {
        return false;
    }
    let mut s: Vec<usize> = body.to_vec();
    loop {
        let hit = s.windows(2).position(|w| pairs.iter().any(|&(o, c)| w[0] == o && w[1] == c));
        match hit {
            Some(i) => {
                s.drain(i..i + 2);
            }
            None => break,
        }
    }
    if !s.is_empty() {
        return false;
    }
    let mut depth = 0usize;
    let mut deepest = 0;
    for t in body {
        if pairs.iter().any(|&(o, _)| o == *t) {
            depth += 1;
            deepest = deepest.max(depth);
        } else {
            depth -= 1;
        }
    }
    deepest <= max_depth
}

#[test]
fn check_syntax_agrees_with_oracle_on_all_short_sequences() {
    let v = two_pair_vocab();
    let pairs = [(0, 1), (2, 3)];
    for max_depth in 1..=4 {
        let grammar = GrammarSpec::from_bracket_vocab(&v, max_depth).unwrap();
        let mut seq = Vec::new();
        let mut checked = 0u64;
        for len in 0..=8u32 {
            for code in 0..5u64.pow(len) {
                seq.clear();
                let mut c = code;
                for _ in 0..len {
                    seq.push((c % 5) as usize);
                    c /= 5;
                }
                assert_eq!(
                    check_syntax(&seq, &grammar),
                    oracle_valid(&seq, &pairs, v.eos(), max_depth),
                    "{:?} depth {max_depth}",
                    v.decode(&seq)
                );
                checked += 1;
            }
        }
        assert_eq!(checked, (0..=8).map(|l| 5u64.pow(l)).sum::<u64>());
    }
}

#[test]
fn uniform_model_syntax_matches_enumerated_mass() {
    let v = paren_vocab();
    let grammar = GrammarSpec::from_bracket_vocab(&v, 6).unwrap();
    // A generation is valid iff it is a balanced body of at most 5 tokens
    // followed by eos; each such sequence of length L has mass 3^-L.
    let mut mass = 0.0;
    for len in 0..=5u32 {
        for code in 0..2u32.pow(len) {
            let mut seq: Vec<usize> = (0..len).map(|b| ((code >> b) & 1) as usize).collect();
            seq.push(v.eos());
            if oracle_valid(&seq, &[(0, 1)], v.eos(), 6) {
                mass += 3f64.powi(-(len as i32 + 1));
            }
        }
    }
    let model = ToyModel::uniform(v.clone(), 2);
    let eval_set = ClientDataset::new("e", vec![Sample::new(vec![], vec![v.eos()])]).unwrap();
    let cfg = EvalConfig {
        n_samples: 10_000,
        strategy: SamplingStrategy::Temperature { temperature: 1.0, candidates: 1 },
        max_len: 6,
        seed: 99,
    };
    let report = evaluate(&model, &eval_set, &grammar, &cfg).unwrap();
    assert_eq!(report.n_generated, 10_000);
    assert!((report.syntax_accuracy - mass).abs() < 0.02, "{} vs {mass}", report.syntax_accuracy);
}

fn first_two_tokens(model: &ToyModel, strategy: &SamplingStrategy, seeds: std::ops::Range<u64>) -> Vec<f64> {
    let v = model.vocab().len();
    let mut counts = vec![0.0; v * v + v];
    let n = seeds.end - seeds.start;
    for seed in seeds {
        let out = generate(model, &[0], strategy, 2, seed).unwrap();
        let idx = if out.len() == 2 { out[0] * v + out[1] } else { v * v + out[0] };
        counts[idx] += 1.0;
    }
    counts.iter().map(|c| c / n as f64).collect()
}

#[test]
fn top_k_with_full_vocab_matches_temperature_sampling() {
    let v = paren_vocab();
    let model = ToyModel::gaussian(v, 1, 1.0, 12);
    let t = 0.8;
    let full = first_two_tokens(&model, &SamplingStrategy::TopK { k: 3, temperature: t }, 0..10_000);
    let plain = first_two_tokens(&model, &SamplingStrategy::Temperature { temperature: t, candidates: 1 }, 10_000..20_000);
    let tv: f64 = full.iter().zip(&plain).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn generation_is_identical_across_thread_counts() {
    let v = two_pair_vocab();
    let model = ToyModel::gaussian(v.clone(), 2, 1.0, 1);
    let grammar = GrammarSpec::from_bracket_vocab(&v, 3).unwrap();
    let eval_set = random_dataset(&v, "e", 40, 2);
    let cfg = EvalConfig {
        n_samples: 16,
        strategy: SamplingStrategy::Nucleus { p: 0.9, temperature: 1.2 },
        max_len: 10,
        seed: 5,
    };
    let one = in_pool(1, || evaluate(&model, &eval_set, &grammar, &cfg).unwrap());
    let many = in_pool(4, || evaluate(&model, &eval_set, &grammar, &cfg).unwrap());
    assert_eq!(one, many);
    let a = in_pool(1, || generate(&model, &[0, 2], &SamplingStrategy::Temperature { temperature: 1.0, candidates: 4 }, 8, 3));
    let b = in_pool(3, || generate(&model, &[0, 2], &SamplingStrategy::Temperature { temperature: 1.0, candidates: 4 }, 8, 3));
    assert_eq!(a.unwrap(), b.unwrap());
}

#[test]
fn one_hot_model_forces_every_strategy() {
    let v = paren_vocab();
    // Width 1: after `(` emit `)`, after `)` emit eos.
    let mut values = vec![0.0; 4 * 3];
    values[1] = 40.0;
    values[3 + 2] = 40.0;
    values[6 + 2] = 40.0;
    values[9] = 40.0;
    let model = ToyModel::uniform(v.clone(), 1).with_values(values).unwrap();
    for strategy in [
        SamplingStrategy::Greedy,
        SamplingStrategy::Temperature { temperature: 1.0, candidates: 3 },
        SamplingStrategy::TopK { k: 2, temperature: 1.0 },
        SamplingStrategy::Nucleus { p: 0.5, temperature: 1.0 },
        SamplingStrategy::Beam { width: 3 },
    ] {
        assert_eq!(v.decode(&generate(&model, &[0], &strategy, 5, 8).unwrap()), ") <eos>");
    }
}
