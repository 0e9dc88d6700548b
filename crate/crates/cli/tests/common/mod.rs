#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superfilter::scoring::write_scores;
use superfilter::{Dataset, DatasetFormat, InstructionSample, ScoredSample};

const VERBS: [&str; 8] = ["write", "generate", "rewrite", "explain", "describe", "list", "create", "summarize"];
const NOUNS: [&str; 8] = ["story", "sentence", "list", "poem", "essay", "paragraph", "code", "recipe"];
const WORDS: [&str; 12] = [
    "the", "cat", "sat", "on", "mat", "a", "dog", "ran", "far", "quickly", "green", "river",
];

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superfilter"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn sample(i: usize, rng: &mut ChaCha8Rng) -> InstructionSample {
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
    let len = rng.gen_range(3..12);
    let response: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    let input = i.is_multiple_of(4).then(|| format!("context {}", i % 7));
    InstructionSample::new(
        format!("{i:06}"),
        format!("Please {verb} a {noun} about item {}.", i % 13),
        input,
        response.join(" "),
    )
}

pub fn dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset::new((0..n).map(|i| sample(i, &mut rng)).collect(), "synthetic").unwrap()
}

pub fn write_dataset(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    dataset(n, seed).write(&path, DatasetFormat::from_path(&path)).unwrap();
    path
}

pub fn scores_from_ifds(ifds: &[f64], scorer: &str) -> Vec<ScoredSample> {
    ifds.iter()
        .enumerate()
        .map(|(i, &ifd)| ScoredSample::from_perplexities(format!("{i:06}"), ifd * 20.0, 20.0, 5, scorer).unwrap())
        .collect()
}

pub fn random_ifds(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.05..1.4)).collect()
}

pub fn write_score_file(dir: &Path, name: &str, ifds: &[f64], scorer: &str) -> PathBuf {
    let path = dir.join(name);
    write_scores(&path, None, &scores_from_ifds(ifds, scorer)).unwrap();
    path
}

pub fn ids_of(path: &Path) -> BTreeSet<String> {
    superfilter::load_dataset(path, DatasetFormat::from_path(path))
        .unwrap()
        .samples
        .into_iter()
        .map(|s| s.id)
        .collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
