//! Synthetic inputs shared by the benchmarks.

use weakdap_core::weaklabel::Instance;
use weakdap_core::{LabelId, LabelSpace};

const WORDS: [&[&str]; 7] = [
    &["okay", "fine", "sure", "noted", "alright"],
    &["furious", "outraged", "livid", "annoyed", "mad"],
    &["gross", "revolting", "nasty", "vile", "yuck"],
    &["scared", "afraid", "terrified", "nervous", "worried"],
    &["delighted", "glad", "thrilled", "wonderful", "joyful"],
    &["miserable", "unhappy", "gloomy", "down", "heartbroken"],
    &["astonished", "shocked", "amazed", "stunned", "unexpected"],
];

const FILLER: [&str; 8] = ["i", "am", "really", "today", "about", "the", "news", "honestly"];

pub fn label_space() -> LabelSpace {
    LabelSpace::emotion()
}

/// `n` labelled sentences cycling through the seven emotion classes.
pub fn toy_instances(n: usize) -> Vec<(Instance, LabelId)> {
    (0..n)
        .map(|i| {
            let label = i % WORDS.len();
            let kw = WORDS[label][(i / WORDS.len()) % WORDS[label].len()];
            let text = format!(
                "{} {} {kw} {} {}",
                FILLER[i % 8],
                FILLER[(i / 3) % 8],
                FILLER[(i / 5) % 8],
                FILLER[(i / 7) % 8]
            );
            (Instance::utterance(text), LabelId(label))
        })
        .collect()
}

/// `n` probability vectors over `k` classes, from peaked to nearly flat.
pub fn prob_vectors(n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let sharp = 0.5 + 8.0 * ((i * 7919) % 1000) as f64 / 1000.0;
            let raw: Vec<f64> = (0..k)
                .map(|j| (-sharp * ((i + j * 31) % (k + 3)) as f64 / k as f64).exp())
                .collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_sum_to_one() {
        for p in prob_vectors(50, 7) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn every_label_appears() {
        let data = toy_instances(70);
        for l in 0..7 {
            assert_eq!(data.iter().filter(|(_, y)| y.0 == l).count(), 10);
        }
    }
}
