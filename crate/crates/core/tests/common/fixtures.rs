//! Seeded synthetic corpora with vocabulary-disjoint topics.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ragmark::corpus::Document;
use ragmark::embed::HashingEmbedder;

pub const LOCAL_DIM: usize = 64;

const CANDIDATES: [(&str, &[&str]); 3] = [
    (
        "astronomy",
        &[
            "planet", "orbit", "comet", "telescope", "galaxy", "nebula", "asteroid", "lunar",
            "crater", "solar", "meteor", "cosmic", "eclipse", "quasar", "pulsar",
        ],
    ),
    (
        "baking",
        &[
            "flour", "butter", "oven", "dough", "pastry", "sugar", "whisk", "yeast", "crust",
            "simmer", "garlic", "onion", "sauce", "knead", "batter",
        ],
    ),
    (
        "sailing",
        &[
            "harbor", "anchor", "vessel", "mast", "rudder", "tide", "keel", "captain", "deck",
            "voyage", "compass", "stern", "breeze", "hull", "sailor",
        ],
    ),
];

/// Words kept out of topic buckets so that fixed phrases ("What about",
/// "I do not know") never look like topic text.
const RESERVED: [&str; 6] = ["what", "about", "i", "do", "not", "know"];

/// `per_topic` words per topic whose hash buckets at [`LOCAL_DIM`] are
/// disjoint from every other topic's and from the reserved words.
pub fn topic_vocabularies(per_topic: usize) -> Vec<(String, Vec<String>)> {
    let embedder = HashingEmbedder::<f64>::new(LOCAL_DIM).unwrap();
    let mut taken: HashSet<usize> = RESERVED.iter().map(|w| embedder.bucket(w)).collect();
    let mut out = Vec::new();
    for (topic, words) in CANDIDATES {
        let mut chosen = Vec::new();
        let mut own = HashSet::new();
        for w in words {
            if chosen.len() == per_topic {
                break;
            }
            let b = embedder.bucket(w);
            if !taken.contains(&b) {
                own.insert(b);
                chosen.push((*w).to_owned());
            }
        }
        assert_eq!(chosen.len(), per_topic, "not enough collision-free words for {topic}");
        taken.extend(own);
        out.push((topic.to_owned(), chosen));
    }
    out
}

pub fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], words: usize) -> String {
    let picked: Vec<&str> = (0..words).map(|_| vocab.choose(rng).unwrap().as_str()).collect();
    let mut text = picked.join(" ");
    text[..1].make_ascii_uppercase();
    text.push('.');
    text
}

/// One document per topic: `sentences` sentences of `words` words, grouped
/// into paragraphs of `per_paragraph` sentences.
pub fn topic_corpus(seed: u64, sentences: usize, words: usize, per_paragraph: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    topic_vocabularies(6)
        .into_iter()
        .map(|(topic, vocab)| {
            let all: Vec<String> = (0..sentences).map(|_| sentence(&mut rng, &vocab, words)).collect();
            let body = all
                .chunks(per_paragraph)
                .map(|c| c.join(" "))
                .collect::<Vec<_>>()
                .join("\n\n");
            Document::new(topic, body)
        })
        .collect()
}
