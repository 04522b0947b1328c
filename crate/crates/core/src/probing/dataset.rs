//! Toy preference data over an integer vocabulary.
//!
//! The vocabulary is split into three prompt groups of `G` tokens and `L`
//! response slots of `k` tokens. A prompt picks one token per group. The chosen
//! token at slot `l` is a fixed function of the prompt's group `l mod 3`, except
//! for a fraction `NOISE` of positions which take a random slot token. The
//! rejected response copies the chosen one and swaps half its positions to
//! another token of the same slot, so chosen and rejected stay close in the
//! model's feature space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PreferencePair;
use crate::rng::SeededRng;

pub const PROMPT_GROUPS: usize = 3;
const NOISE: f64 = 0.3;
const SWAP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "L")]
    pub length: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { vocab: 42, length: 6, n_train: 160, n_test: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyExample {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
}

impl ToyExample {
    pub fn preference_pair(&self, beta: f64) -> Result<PreferencePair> {
        PreferencePair::new(self.prompt.clone(), self.chosen.clone(), self.rejected.clone(), beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPreferenceDataset {
    pub vocab: usize,
    pub train: Vec<ToyExample>,
    pub test: Vec<ToyExample>,
    /// Tokens allowed at each response position.
    pub slots: Vec<Vec<usize>>,
}

impl ToyPreferenceDataset {
    pub fn response_len(&self) -> usize {
        self.slots.len()
    }
}

/// Swap `count` distinct positions of `y` to a different token of the same slot.
pub(crate) fn swap_within_slots(y: &[usize], slots: &[Vec<usize>], count: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut out = y.to_vec();
    for q in rng.choose_distinct(y.len(), count) {
        let opts: Vec<usize> = slots[q].iter().copied().filter(|&t| t != y[q]).collect();
        out[q] = opts[rng.index(opts.len())];
    }
    out
}

pub fn gen_toy_dataset(config: &ToyConfig) -> Result<ToyPreferenceDataset> {
    let (v, l) = (config.vocab, config.length);
    if v < 8 || l < 2 {
        return Err(Error::InvalidConfig(format!("need V >= 8 and L >= 2, got V = {v}, L = {l}")));
    }
    let k = ((0.6 * v as f64 / l as f64).floor() as usize).max(2);
    let g = v.saturating_sub(l * k) / PROMPT_GROUPS;
    let prompt_space = g.pow(PROMPT_GROUPS as u32);
    let needed = config.n_train + config.n_test;
    if g < 2 || needed > prompt_space {
        return Err(Error::ScenarioConstruction(format!(
            "{needed} distinct prompts requested but V = {v}, L = {l} only allow {prompt_space}"
        )));
    }
    let base = g * PROMPT_GROUPS;
    let slots: Vec<Vec<usize>> = (0..l).map(|q| (base + q * k..base + (q + 1) * k).collect()).collect();

    let mut rng = SeededRng::new(config.seed);
    let rule: Vec<Vec<usize>> = (0..l).map(|_| (0..g).map(|_| rng.index(k)).collect()).collect();
    let n_swap = ((SWAP_FRACTION * l as f64).round() as usize).max(1);
    let mut examples = Vec::with_capacity(needed);
    for code in rng.choose_distinct(prompt_space, needed) {
        let groups: Vec<usize> = (0..PROMPT_GROUPS).map(|j| code / g.pow(j as u32) % g).collect();
        let prompt: Vec<usize> = groups.iter().enumerate().map(|(j, &gj)| j * g + gj).collect();
        let chosen: Vec<usize> = (0..l)
            .map(|q| {
                if rng.bernoulli(NOISE) {
                    slots[q][rng.index(k)]
                } else {
                    slots[q][rule[q][groups[q % PROMPT_GROUPS]]]
                }
            })
            .collect();
        let rejected = swap_within_slots(&chosen, &slots, n_swap, &mut rng);
        examples.push(ToyExample { prompt, chosen, rejected });
    }
    let test = examples.split_off(config.n_train);
    Ok(ToyPreferenceDataset { vocab: v, train: examples, test, slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = ToyConfig::default();
        let a = gen_toy_dataset(&cfg).unwrap();
        assert_eq!(a, gen_toy_dataset(&cfg).unwrap());
        assert_eq!((a.train.len(), a.test.len()), (160, 32));
        let train: HashSet<_> = a.train.iter().map(|e| e.prompt.clone()).collect();
        let test: HashSet<_> = a.test.iter().map(|e| e.prompt.clone()).collect();
        assert_eq!(train.len(), 160);
        assert_eq!(test.len(), 32);
        assert!(train.is_disjoint(&test));
        for e in a.train.iter().chain(&a.test) {
            assert_ne!(e.chosen, e.rejected);
            assert_eq!(e.chosen.iter().zip(&e.rejected).filter(|(x, y)| x != y).count(), 3);
            assert!(e.prompt.iter().chain(&e.chosen).chain(&e.rejected).all(|&t| t < 42));
            for (q, &t) in e.chosen.iter().enumerate() {
                assert!(a.slots[q].contains(&t));
            }
        }
    }

    #[test]
    fn infeasible_configs() {
        let too_many = ToyConfig { n_train: 200, n_test: 20, ..Default::default() };
        assert!(matches!(gen_toy_dataset(&too_many), Err(Error::ScenarioConstruction(_))));
        let tiny = ToyConfig { vocab: 6, ..Default::default() };
        assert!(matches!(gen_toy_dataset(&tiny), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn other_sizes_generalise() {
        let cfg = ToyConfig { vocab: 64, length: 8, n_train: 40, n_test: 10, seed: 3 };
        let d = gen_toy_dataset(&cfg).unwrap();
        assert_eq!(d.response_len(), 8);
        assert!(d.train.iter().all(|e| e.chosen.len() == 8 && e.prompt.len() == 3));
    }
}
