//! Seeded synthetic paired corpus for offline demos and the desk-scale
//! experiment suite. Human and GPT samples share content words; the GPT side
//! carries the verbose-marker style the detectors key on.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Corpus, CorpusError, Label, TextSample};
use crate::provenance::derive_seed;

const TOPICS: [&str; 15] = [
    "garden", "kitchen", "engine", "violin", "harbor", "orchard", "workshop", "bridge", "bakery",
    "meadow", "cellar", "rooftop", "canal", "library", "market",
];
const VERBS: [&str; 15] = [
    "clean", "repair", "paint", "organize", "inspect", "water", "tune", "measure", "sharpen",
    "label", "sweep", "oil", "sort", "patch", "dust",
];
const OBJECTS: [&str; 15] = [
    "tools", "shelves", "valves", "strings", "planks", "crates", "filters", "seams", "hinges",
    "wires", "buckets", "frames", "panels", "ropes", "tiles",
];
const EXTRAS: [&str; 8] = [
    "early", "slowly", "carefully", "twice", "daily", "gently", "often", "first",
];

fn human_text(tpl: usize, v: &str, o: &str, o2: &str, t: &str, e: &str) -> String {
    match tpl {
        0 => format!("you should {v} the {o} in the {t} {e}"),
        1 => format!("just {v} the {o} then check the {o2} in the {t}"),
        2 => format!("we {v} the {o} {e} and then sort the {o2}"),
        _ => format!("try to {v} the {o} near the {t} it really helps"),
    }
}

fn gpt_text(tpl: usize, v: &str, o: &str, o2: &str, t: &str, e: &str) -> String {
    match tpl {
        0 => format!(
            "it is crucial to thoroughly {v} the {o} in the {t} to ensure a comprehensive outcome"
        ),
        1 => format!(
            "furthermore one must diligently {v} the {o} and subsequently organize the {o2} in the {t}"
        ),
        2 => format!("it is essential to {v} the {o} {e} moreover ensure the {o2} remain optimal"),
        _ => format!("in order to achieve optimal results carefully {v} the {o} adjacent to the {t}"),
    }
}

/// Generate `n_per_class` HUMAN samples and their linked GPT counterparts.
pub fn gen_paired_corpus(n_per_class: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "synth_corpus"));
    let mut human = Vec::with_capacity(n_per_class);
    let mut gpt = Vec::with_capacity(n_per_class);
    for i in 0..n_per_class {
        let tpl = rng.gen_range(0..4usize);
        let v = VERBS[rng.gen_range(0..VERBS.len())];
        let o = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let o2 = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let t = TOPICS[rng.gen_range(0..TOPICS.len())];
        let e = EXTRAS[rng.gen_range(0..EXTRAS.len())];
        let hid = format!("h{i:04}");
        human.push(TextSample {
            id: hid.clone(),
            text: human_text(tpl, v, o, o2, t, e),
            label: Label::Human,
            source_id: None,
        });
        gpt.push(TextSample {
            id: format!("g{i:04}"),
            text: gpt_text(tpl, v, o, o2, t, e),
            label: Label::Gpt,
            source_id: Some(hid),
        });
    }
    human.extend(gpt);
    Corpus::from_samples(human).expect("synthetic corpus is valid")
}

/// Every distinct whitespace token in the corpus, sorted.
pub fn corpus_vocab(corpus: &Corpus) -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    for s in corpus.samples() {
        for tok in s.text.split_whitespace() {
            vocab.insert(tok.to_string());
        }
    }
    vocab
}

/// Write a GloVe-format text file with a deterministic pseudo-random vector
/// per corpus token. Stands in for pretrained vectors in offline runs.
pub fn write_toy_glove(
    corpus: &Corpus,
    dim: usize,
    seed: u64,
    path: &Path,
) -> Result<usize, CorpusError> {
    let vocab = corpus_vocab(corpus);
    let mut f = std::fs::File::create(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for tok in &vocab {
        let tok_seed = derive_seed(seed, &format!("glove:{tok}"));
        let mut rng = ChaCha20Rng::seed_from_u64(tok_seed);
        let mut line = tok.clone();
        for _ in 0..dim {
            let v: f32 = rng.gen_range(-0.5..0.5);
            line.push_str(&format!(" {v:.6}"));
        }
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(vocab.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_links_every_gpt_sample() {
        let c = gen_paired_corpus(20, 1);
        assert_eq!(c.class_counts()[&Label::Human], 20);
        assert_eq!(c.class_counts()[&Label::Gpt], 20);
        for s in c.samples().iter().filter(|s| s.label == Label::Gpt) {
            let sid = s.source_id.as_ref().unwrap();
            assert!(c.get(sid).is_some(), "source {sid} resolves");
        }
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(
            gen_paired_corpus(10, 5).to_jsonl(),
            gen_paired_corpus(10, 5).to_jsonl()
        );
    }

    #[test]
    fn toy_glove_covers_vocab() {
        let c = gen_paired_corpus(8, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("glove.txt");
        let n = write_toy_glove(&c, below_dim(), 2, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), n);
        let first = body.lines().next().unwrap();
        assert_eq!(first.split_whitespace().count(), below_dim() + 1);
    }

    fn below_dim() -> usize {
        16
    }
}
