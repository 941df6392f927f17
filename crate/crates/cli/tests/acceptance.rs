//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p hierbench-cli --test acceptance`

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hierbench_core::data::ClientDataset;
use hierbench_core::eval::{evaluate, EvalConfig};
use hierbench_core::fed::{aggregate, score, AggregationMetric, FLConfig, ZeroScoreFallback};
use hierbench_core::hierarchy::{run_flat_fl, run_hierarchy, HierarchyConfig};
use hierbench_core::merge::{merge_dare, merge_weighted, MergeConfig, MergeMethod};
use hierbench_core::model::{SamplingStrategy, ToyModel, Vocab};
use hierbench_core::pardecode::*;
use hierbench_core::partition::{partition_dirichlet, partition_groups};
use hierbench_core::rng::CounterRng;
use hierbench_core::synth::{generate_corpus, reference_grammar, reference_vocab, SynthConfig};
use hierbench_core::trueput::*;
use num_rational::Ratio;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failures listed in the decisions ledger as unattainable.
    known_red: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, known_red: false }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn brackets() -> Arc<Vocab> {
    Arc::new(Vocab::brackets(&[("(", ")"), ("[", "]")]).unwrap())
}

fn fedavg() -> Outcome {
    let v = brackets();
    let mut worst: f64 = 0.0;
    for set in 0..20u64 {
        let mut rng = CounterRng::stream(set, &[1]);
        let n = 2 + rng.next_below(6) as usize;
        let models: Vec<ToyModel> = (0..n).map(|i| ToyModel::gaussian(v.clone(), 2, 1.0, set * 100 + i as u64)).collect();
        let sizes: Vec<usize> = (0..n).map(|_| 1 + rng.next_below(200) as usize).collect();
        let metric = AggregationMetric::sample_ratio();
        let scores: Vec<f64> = models.iter().zip(&sizes).map(|(m, &s)| score(&metric, m, s).unwrap()).collect();
        let got = aggregate(&models, &scores).unwrap();
        let total: usize = sizes.iter().sum();
        let want: Vec<f64> = (0..models[0].params().len())
            .map(|j| models.iter().zip(&sizes).map(|(m, &s)| s as f64 / total as f64 * m.params().values()[j]).sum())
            .collect();
        worst = worst.max(max_abs_diff(got.params().values(), &want));
    }
    Outcome::new(worst <= 1e-12, format!("max deviation {worst:.2e} over 20 sets"))
}

fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn unbiased_pass_at_k() -> Outcome {
    let triples: Vec<(usize, usize, usize)> =
        (1..=12).flat_map(|n| (0..=n).flat_map(move |c| (1..=n).map(move |k| (n, c, k)))).collect();
    let results: Vec<(bool, f64)> = triples
        .par_iter()
        .map(|&(n, c, k)| {
            let pass_mask = (1u32 << c) - 1;
            let (mut hit, mut total) = (0u64, 0u64);
            for subset in 0u32..(1 << n) {
                if subset.count_ones() as usize == k {
                    total += 1;
                    hit += u64::from(subset & pass_mask != 0);
                }
            }
            let exact = Ratio::new(hit, total);
            let formula = Ratio::from_integer(1) - Ratio::new(binom((n - c) as u64, k as u64), binom(n as u64, k as u64));
            let est = pass_at_k_unbiased(PassStats { n, c }, k).unwrap();
            let exact_ok = exact == formula && (est - hit as f64 / total as f64).abs() < 1e-12;

            let mut rng = CounterRng::stream(7, &[n as u64, c as u64, k as u64]);
            let draws = 100_000;
            let hits = (0..draws).filter(|_| rng.sample_without_replacement(n, k).iter().any(|&i| i < c)).count();
            (exact_ok, (hits as f64 / draws as f64 - est).abs())
        })
        .collect();
    let exact = results.iter().all(|r| r.0);
    let mc = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Outcome::new(exact && mc <= 0.01, format!("{} triples, rational match {exact}, max MC gap {mc:.4}", triples.len()))
}

fn optimal_k_brute_force() -> Outcome {
    let mut rng = CounterRng::new(5);
    let mut mismatches = 0;
    for _ in 0..50 {
        let p = rng.next_f64();
        let latency = match rng.next_below(3) {
            0 => LatencyModel::constant(0.1 + rng.next_f64()),
            1 => LatencyModel::linear(rng.next_f64(), 0.05 + rng.next_f64()),
            _ => LatencyModel::batched(0.1 + rng.next_f64(), rng.next_f64() * 0.2, 1 + rng.next_below(8) as usize),
        };
        let profile = TrueputProfile::new(p, latency, 1 + rng.next_below(40) as usize).unwrap();
        let best = optimal_k(&profile).unwrap();
        let values: Vec<f64> =
            (1..=profile.k_max).map(|k| (1.0 - (1.0 - p).powi(k as i32)) / profile.latency.latency(k)).collect();
        let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied_first = values.iter().position(|&t| t >= top - 1e-12 * top.abs()).unwrap() + 1;
        let ok = (best.trueput - top).abs() <= 1e-12 * top.abs().max(1.0) && best.k >= tied_first && values[best.k - 1] >= top - 1e-12;
        mismatches += usize::from(!ok);
    }
    let ks: Vec<usize> = [1, 2, 4, 8]
        .iter()
        .map(|&b| optimal_k(&TrueputProfile::new(0.3, LatencyModel::batched(1.0, 0.0, b), 64).unwrap()).unwrap().k)
        .collect();
    let monotone = ks.windows(2).all(|w| w[0] <= w[1]);
    Outcome::new(mismatches == 0 && monotone, format!("{mismatches}/50 mismatches, k* by capacity {ks:?}"))
}

struct Reference {
    vocab: Arc<Vocab>,
    clients: Vec<ClientDataset>,
    groups: Vec<Vec<usize>>,
    isolated: Vec<usize>,
    test: ClientDataset,
}

fn reference(seed: u64) -> Reference {
    let vocab = Arc::new(reference_vocab());
    let corpus = generate_corpus(&vocab, &SynthConfig { samples_per_repo: 100, ..Default::default() }, seed).unwrap();
    let held = generate_corpus(&vocab, &SynthConfig { samples_per_repo: 25, ..Default::default() }, seed + 1000).unwrap();
    let test = ClientDataset::pooled("test", &held).unwrap();
    let clients = partition_dirichlet(&corpus, 0.5, 40, seed).unwrap().clients;
    let assignment = partition_groups(40, 4, 4, seed).unwrap();
    Reference { vocab, clients, groups: assignment.groups, isolated: assignment.isolated, test }
}

fn fl_config(seed: u64) -> FLConfig {
    FLConfig {
        rounds: 10,
        participation: 1.0,
        epochs_per_round: 5,
        lr: 2.0,
        metric: AggregationMetric::sample_ratio(),
        seed,
        zero_score_fallback: ZeroScoreFallback::Uniform,
        snapshot: None,
    }
}

fn hierarchy_config(r: &Reference, seed: u64) -> HierarchyConfig {
    HierarchyConfig {
        groups: r.groups.clone(),
        isolated: r.isolated.clone(),
        fl: fl_config(seed),
        local_epochs: None,
        merge: MergeConfig {
            method: MergeMethod::WeightedAverage,
            base: None,
            metric: AggregationMetric::sample_ratio(),
            seed,
            zero_score_fallback: ZeroScoreFallback::Uniform,
        },
        init: ToyModel::uniform(r.vocab.clone(), 3),
        outer_rounds: 1,
        audit_eval: None,
    }
}

fn communication_ledger() -> Outcome {
    let r = reference(42);
    let cfg = hierarchy_config(&r, 42);
    let hier = run_hierarchy(&r.clients, &cfg).unwrap().ledger.central_transfers;
    let flat = run_flat_fl(&r.clients, &cfg.init, &cfg.fl).unwrap().ledger.central_transfers;
    Outcome::new(hier == 8 && flat == 400, format!("central transfers {hier} hierarchical vs {flat} flat"))
}

fn dare_unbiasedness() -> Outcome {
    let v = Arc::new(Vocab::new((0..9_999).map(|i| format!("t{i}")).chain(["<eos>".to_string()])).unwrap());
    let base = ToyModel::gaussian(v.clone(), 0, 0.1, 0);
    let models = vec![ToyModel::gaussian(v.clone(), 0, 1.0, 1), ToyModel::gaussian(v, 0, 1.0, 2)];
    let scores = [0.25, 0.75];
    let cfg = |drop_rate: f64, seed: u64| MergeConfig {
        method: MergeMethod::Dare { drop_rate },
        base: Some(base.clone()),
        metric: AggregationMetric::sample_ratio(),
        seed,
        zero_score_fallback: ZeroScoreFallback::Error,
    };
    let target = merge_weighted(&models, &scores).unwrap();
    let exact = (0..5).all(|s| merge_dare(&models, &scores, &cfg(0.0, s)).unwrap().params() == target.params());

    let runs: Vec<Vec<f64>> = (0..200u64)
        .into_par_iter()
        .map(|s| merge_dare(&models, &scores, &cfg(0.5, s)).unwrap().params().values().to_vec())
        .collect();
    let n = runs.len() as f64;
    let (mut over3, mut worst) = (0usize, 0.0f64);
    for (j, want) in target.params().values().iter().enumerate() {
        let mean = runs.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (runs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = (mean - want).abs() / (sd / n.sqrt());
        over3 += usize::from(z > 3.0);
        worst = worst.max(z);
    }
    let calibrated = over3 <= 60 && worst < 5.5;
    let literal = over3 == 0;
    let detail = format!(
        "drop 0 exact {exact}; {over3}/10000 elements beyond 3 SE, max z {worst:.2}; \
         calibrated check (<=60 beyond 3 SE, max z < 5.5) {}",
        if calibrated { "holds" } else { "fails" }
    );
    Outcome { pass: exact && literal, detail, known_red: exact && calibrated && !literal }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 }
}

fn hierarchy_ordering() -> Outcome {
    let accs: Vec<[f64; 3]> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let r = reference(seed);
            let grammar = reference_grammar(&r.vocab, 3).unwrap();
            let eval = EvalConfig {
                n_samples: 2,
                strategy: SamplingStrategy::Temperature { temperature: 1.0, candidates: 1 },
                max_len: 12,
                seed,
            };
            let acc = |m: &ToyModel| evaluate(m, &r.test, &grammar, &eval).unwrap().syntax_accuracy;
            let cfg = hierarchy_config(&r, seed);
            let hier = run_hierarchy(&r.clients, &cfg).unwrap().model;
            let merge_only = HierarchyConfig {
                groups: vec![],
                isolated: (0..r.clients.len()).filter(|&c| !r.clients[c].is_empty()).collect(),
                ..cfg.clone()
            };
            let merged = run_hierarchy(&r.clients, &merge_only).unwrap().model;
            [acc(&hier), acc(&merged), acc(&cfg.init)]
        })
        .collect();
    let med: Vec<f64> = (0..3).map(|i| median(accs.iter().map(|a| a[i]).collect())).collect();
    Outcome::new(
        med[0] >= med[1] && med[1] >= med[2],
        format!("median syntax accuracy hierarchy {:.3}, merge only {:.3}, init {:.3}", med[0], med[1], med[2]),
    )
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Target, prompts and served traffic for the decoding criteria.
fn decode_setup(seed: u64) -> (ToyModel, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let target = ToyModel::gaussian(brackets(), 3, 1.5, seed);
    let mut rng = CounterRng::stream(seed, &[77]);
    let prompts: Vec<Vec<usize>> = (0..100).map(|_| (0..3).map(|_| rng.next_below(4) as usize).collect()).collect();
    let served = serve_greedy(&target, &prompts, 40).unwrap();
    (target, prompts, served)
}

fn speedup_peak() -> Outcome {
    let sizes: Vec<usize> = (1..=128).collect();
    let per_seed: Vec<Vec<DecodeStats>> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let (target, prompts, served) = decode_setup(seed);
            let mut heads = DraftHeads::uniform(brackets(), 1, 6).unwrap();
            for _ in 0..500 {
                heads = online_kl_update_batch(&heads, &target, &served, 0.1, KlDirection::DraftFirst).unwrap().0;
            }
            sizes.iter().map(|&s| simulate_decode(&target, &heads, &prompts, s, 32, 40).unwrap().stats).collect()
        })
        .collect();
    let pooled = |f: fn(&DecodeStats) -> f64| -> Vec<f64> {
        (0..sizes.len()).map(|i| per_seed.iter().map(|s| f(&s[i])).sum::<f64>() / per_seed.len() as f64).collect()
    };
    let accepted = pooled(|s| s.mean_accepted_per_step);
    let speedup = pooled(|s| s.speedup);
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let rho = spearman(&xs, &accepted);
    let peak = (0..sizes.len()).max_by(|&a, &b| speedup[a].total_cmp(&speedup[b]).then(b.cmp(&a))).unwrap();
    let interior = peak > 0 && peak + 1 < sizes.len();
    Outcome::new(
        interior && rho > 0.9,
        format!("peak speedup {:.2} at tree size {}, Spearman rho of accepted tokens per step {rho:.3}", speedup[peak], sizes[peak]),
    )
}

fn online_kl() -> Outcome {
    let vocab = Arc::new(Vocab::new(["a", "b", "c", "<eos>"]).unwrap());
    let target = ToyModel::gaussian(vocab.clone(), 2, 1.0, 3);
    let mut rng = CounterRng::new(8);
    let prompts: Vec<Vec<usize>> = (0..6).map(|_| (0..2).map(|_| rng.next_below(3) as usize).collect()).collect();
    let served = serve_greedy(&target, &prompts, 6).unwrap();
    let mut worst_rel: f64 = 0.0;
    for direction in [KlDirection::DraftFirst, KlDirection::TargetFirst] {
        let heads = DraftHeads::gaussian(vocab.clone(), 1, 3, 0.7, 0).unwrap();
        let (_, grads) = kl_gradient(&heads, &target, &served, direction).unwrap();
        let values = heads.values();
        let h = 1e-5;
        for d in 0..values.len() {
            for i in 0..values[d].len() {
                let at = |delta: f64| {
                    let mut v = values.clone();
                    v[d][i] += delta;
                    kl_gradient(&heads.with_values(v).unwrap(), &target, &served, direction).unwrap().0.total
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                worst_rel = worst_rel.max((fd - grads[d][i]).abs() / grads[d][i].abs().max(1e-2));
            }
        }
    }

    let monotone: Vec<usize> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let (target, _, served) = decode_setup(seed);
            let mut heads = DraftHeads::gaussian(brackets(), 1, 4, 0.5, seed).unwrap();
            let mut trace = Vec::with_capacity(500);
            for _ in 0..500 {
                let (next, kl) = online_kl_update_batch(&heads, &target, &served, 0.1, KlDirection::DraftFirst).unwrap();
                heads = next;
                trace.push(kl.total);
            }
            let smooth: Vec<f64> = trace.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
            smooth.windows(2).filter(|w| w[1] > w[0]).count()
        })
        .collect();
    let passing = monotone.iter().filter(|&&v| v == 0).count();

    let (target, _, served) = decode_setup(0);
    let exact = DraftHeads::from_target(&target, 4).unwrap();
    let zero = kl_gradient(&exact, &target, &served, KlDirection::DraftFirst).unwrap().0.total;

    Outcome::new(
        worst_rel <= 1e-4 && passing >= 4 && zero == 0.0,
        format!("max relative FD error {worst_rel:.1e}; {passing}/5 smoothed trajectories nonincreasing; KL at target {zero}"),
    )
}

fn decoding_soundness() -> Outcome {
    let (target, prompts, _) = decode_setup(11);
    let reference: Vec<Vec<usize>> = prompts.iter().map(|p| greedy_decode(&target, p, 40).unwrap()).collect();
    let mut mismatched = 0;
    for (seed, size) in [(0, 1), (1, 5), (2, 17), (3, 64), (4, 128)] {
        let heads = DraftHeads::gaussian(brackets(), 1, 4, 1.0, seed).unwrap();
        let run = simulate_decode(&target, &heads, &prompts, size, 16, 40).unwrap();
        mismatched += run.outputs.iter().zip(&reference).filter(|(a, b)| a != b).count();
    }
    Outcome::new(mismatched == 0, format!("{mismatched} mismatched outputs over 100 prompts at 5 tree sizes"))
}

const PIPELINE: &str = r#"
seed = 42
[data.synth]
samples_per_repo = 40
eval_samples_per_repo = 10
[partition]
n_clients = 16
groups = 2
isolated = 2
[fl]
rounds = 4
epochs = 2
[trueput]
grid = [
    { kind = "greedy" },
    { kind = "top_k", k = 3, temperature = 0.8 },
    { kind = "temperature", temperature = 0.7, candidates = 4 },
]
[decode]
tree_sizes = [1, 4, 16, 32, 64]
learn_steps = 50
n_prompts = 30
"#;

fn data_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "tsv")) {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = tmp.path().join("pipeline.toml");
    std::fs::write(&config, PIPELINE).unwrap();
    let pipelines: [&[&str]; 4] = [&["run", "--mode", "all"], &["partition"], &["trueput"], &["decode"]];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (i, args) in pipelines.iter().enumerate() {
        let dirs = ["a", "b"].map(|tag| tmp.path().join(format!("{i}-{tag}")));
        for dir in &dirs {
            let status = Command::new(env!("CARGO_BIN_EXE_hierbench"))
                .env_remove("HIERBENCH_OUT")
                .args(*args)
                .arg(&config)
                .arg("--out")
                .arg(dir)
                .output()
                .unwrap();
            if !status.status.success() {
                return Outcome::new(false, format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        let files = data_files(&dirs[0]);
        if files != data_files(&dirs[1]) {
            differing.push(format!("{args:?} file sets"));
            continue;
        }
        for f in files {
            compared += 1;
            if std::fs::read(dirs[0].join(&f)).unwrap() != std::fs::read(dirs[1].join(&f)).unwrap() {
                differing.push(f.display().to_string());
            }
        }
    }
    Outcome::new(
        differing.is_empty() && compared > 0,
        format!("{compared} data files compared across 4 pipelines, {} differ {differing:?}", differing.len()),
    )
}

type Criterion = (u32, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, Duration::from_secs(1), fedavg),
        (2, Duration::from_secs(30), unbiased_pass_at_k),
        (3, Duration::from_secs(5), optimal_k_brute_force),
        (4, Duration::from_secs(10), communication_ledger),
        (5, Duration::from_secs(10), dare_unbiasedness),
        (6, Duration::from_secs(300), hierarchy_ordering),
        (7, Duration::from_secs(120), speedup_peak),
        (8, Duration::from_secs(60), online_kl),
        (9, Duration::from_secs(30), decoding_soundness),
        (10, Duration::from_secs(300), end_to_end_determinism),
    ];
    let mut unexpected = 0;
    for (id, budget, run) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if elapsed > budget {
            outcome.pass = false;
            outcome.known_red = false;
            outcome.detail.push_str(&format!("; over the {budget:?} budget"));
        }
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        let note = if outcome.known_red { " [known red, see decisions ledger]" } else { "" };
        println!("criterion {id}: {verdict} ({}, {:.2}s){note}", outcome.detail, elapsed.as_secs_f64());
        if !outcome.pass && !outcome.known_red {
            unexpected += 1;
        }
    }
    if unexpected == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
