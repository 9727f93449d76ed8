//! Small generated corpora with a known answer, for tests and smoke runs.
//!
//! Every sentence is one or two clauses of the form "the <noun> was
//! <opinion>"; the noun names the aspect and the opinion word fixes its
//! polarity, so the labels are fully determined by the text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledSample;
use crate::labels::Polarity;
use crate::segment;

const NOUNS: [&[&str]; 2] = [&["food", "pasta", "pizza"], &["service", "waiter", "staff"]];
const OPINIONS: [&[&str]; 3] = [&["awful", "bland", "rude"], &["okay", "average", "ordinary"], &["great", "tasty", "friendly"]];
const JOINERS: [&str; 3] = [", but", ", and", ", while"];

#[derive(Clone, Debug)]
pub struct Corpus {
    pub aspects: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

fn clause<R: Rng>(rng: &mut R, aspect: usize, polarity: Polarity) -> String {
    format!(
        "the {} was {}",
        NOUNS[aspect].choose(rng).expect("non-empty"),
        OPINIONS[polarity.index()].choose(rng).expect("non-empty")
    )
}

fn polarity<R: Rng>(rng: &mut R) -> Polarity {
    Polarity::ALL[rng.gen_range(0..3)]
}

/// `n` sentences over the aspects `food` and `service`. A `two_aspect`
/// fraction of them has one clause per aspect (two EDUs, both labelled,
/// polarities drawn independently); the rest have a single clause.
pub fn clause_corpus(n: usize, two_aspect: f64, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (text, labels) = if rng.gen::<f64>() < two_aspect {
            let first = rng.gen_range(0..2);
            let (p1, p2) = (polarity(&mut rng), polarity(&mut rng));
            let text = format!(
                "{}{} {}",
                clause(&mut rng, first, p1),
                JOINERS.choose(&mut rng).expect("non-empty"),
                clause(&mut rng, 1 - first, p2)
            );
            let mut labels = vec![(first, p1), (1 - first, p2)];
            labels.sort_by_key(|&(a, _)| a);
            (text, labels)
        } else {
            let a = rng.gen_range(0..2);
            let p = polarity(&mut rng);
            (clause(&mut rng, a, p), vec![(a, p)])
        };
        let sentence = segment::heuristic_segment(&text).expect("generated text is non-empty");
        samples.push(LabeledSample { sentence, labels });
    }
    Corpus {
        aspects: vec!["food".into(), "service".into()],
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure() {
        let c = clause_corpus(200, 0.5, 3);
        assert_eq!(c.samples.len(), 200);
        for s in &c.samples {
            assert_eq!(s.sentence.edus.len(), s.labels.len());
            s.validate(2, 16).unwrap();
        }
        let two = c.samples.iter().filter(|s| s.labels.len() == 2).count();
        assert!((60..140).contains(&two));
        let all_two = clause_corpus(20, 1.0, 3);
        assert!(all_two.samples.iter().all(|s| s.sentence.edus.len() == 2));
    }

    #[test]
    fn deterministic() {
        let a = clause_corpus(10, 0.5, 1);
        let b = clause_corpus(10, 0.5, 1);
        assert_eq!(a.samples, b.samples);
    }
}
