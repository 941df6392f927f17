#![allow(dead_code)]

use std::sync::Arc;

use hierbench_core::data::{ClientDataset, Sample};
use hierbench_core::model::Vocab;
use hierbench_core::rng::CounterRng;

pub fn paren_vocab() -> Arc<Vocab> {
    Arc::new(Vocab::brackets(&[("(", ")")]).unwrap())
}

pub fn two_pair_vocab() -> Arc<Vocab> {
    Arc::new(Vocab::brackets(&[("(", ")"), ("[", "]")]).unwrap())
}

pub fn dataset(vocab: &Vocab, tag: &str, rows: &[(&str, &str)]) -> ClientDataset {
    let samples = rows
        .iter()
        .map(|(p, c)| Sample::new(vocab.encode(p).unwrap(), vocab.encode(c).unwrap()))
        .collect();
    ClientDataset::new(tag, samples).unwrap()
}

/// Random samples: a prompt of non-eos tokens and a completion that ends
/// with eos.
pub fn random_dataset(vocab: &Vocab, tag: &str, n: usize, seed: u64) -> ClientDataset {
    let mut rng = CounterRng::stream(seed, &[0xda7a]);
    let body = (vocab.len() - 1) as u64;
    let samples = (0..n)
        .map(|_| {
            let lp = rng.next_below(4) as usize;
            let lc = rng.next_below(4) as usize;
            let prompt = (0..lp).map(|_| rng.next_below(body) as usize).collect();
            let mut completion: Vec<usize> = (0..lc).map(|_| rng.next_below(body) as usize).collect();
            completion.push(vocab.eos());
            Sample::new(prompt, completion)
        })
        .collect();
    ClientDataset::new(tag, samples).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with an absolute floor for near-zero entries.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(got.abs()).max(1e-6)
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}
