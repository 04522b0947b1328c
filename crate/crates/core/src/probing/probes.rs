//! Probe responses tracked during training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{swap_within_slots, ToyPreferenceDataset};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Chosen,
    Rejected,
    PerturbedChosen,
    PerturbedRejected,
    OtherTrainChosen,
    TestChosen,
    PermutedChosen,
    RandomTokens,
}

impl ResponseType {
    pub const ALL: [ResponseType; 8] = [
        Self::Chosen,
        Self::Rejected,
        Self::PerturbedChosen,
        Self::PerturbedRejected,
        Self::OtherTrainChosen,
        Self::TestChosen,
        Self::PermutedChosen,
        Self::RandomTokens,
    ];

    /// Types that never receive a direct gradient from their own probe's example.
    pub const INDIRECT: [ResponseType; 6] = [
        Self::PerturbedChosen,
        Self::PerturbedRejected,
        Self::OtherTrainChosen,
        Self::TestChosen,
        Self::PermutedChosen,
        Self::RandomTokens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Chosen => "chosen",
            Self::Rejected => "rejected",
            Self::PerturbedChosen => "perturbed_chosen",
            Self::PerturbedRejected => "perturbed_rejected",
            Self::OtherTrainChosen => "other_train_chosen",
            Self::TestChosen => "test_chosen",
            Self::PermutedChosen => "permuted_chosen",
            Self::RandomTokens => "random_tokens",
        }
    }
}

impl fmt::Display for ResponseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResponseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown response type '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub id: usize,
    /// Index of the probed example in the training split.
    pub train_index: usize,
    /// Index of the training example that supplied `other_train_chosen`.
    pub other_index: usize,
    pub prompt: Vec<usize>,
    pub responses: Vec<(ResponseType, Vec<usize>)>,
}

impl Probe {
    pub fn response(&self, t: ResponseType) -> &[usize] {
        &self.responses.iter().find(|(r, _)| *r == t).expect("every type is populated").1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
    pub perturb_k: usize,
}

pub fn build_probe_set(
    dataset: &ToyPreferenceDataset,
    n_probes: usize,
    perturb_k: usize,
    seed: u64,
) -> Result<ProbeSet> {
    let n_train = dataset.train.len();
    if n_probes > n_train {
        return Err(Error::InvalidConfig(format!("{n_probes} probes requested from {n_train} training examples")));
    }
    if perturb_k >= dataset.response_len() {
        return Err(Error::InvalidConfig(format!(
            "perturb_k = {perturb_k} must be below the response length {}",
            dataset.response_len()
        )));
    }
    if n_train < 2 || dataset.test.is_empty() {
        return Err(Error::InvalidConfig("probing needs two training examples and one test example".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut probes = Vec::with_capacity(n_probes);
    for (id, u) in rng.choose_distinct(n_train, n_probes).into_iter().enumerate() {
        let ex = &dataset.train[u];
        let other_index = (u + 1 + rng.index(n_train - 1)) % n_train;
        let test = &dataset.test[rng.index(dataset.test.len())];
        let mut permuted = ex.chosen.clone();
        rng.shuffle(&mut permuted);
        let random: Vec<usize> = (0..ex.chosen.len()).map(|_| rng.index(dataset.vocab)).collect();
        let responses = vec![
            (ResponseType::Chosen, ex.chosen.clone()),
            (ResponseType::Rejected, ex.rejected.clone()),
            (ResponseType::PerturbedChosen, swap_within_slots(&ex.chosen, &dataset.slots, perturb_k, &mut rng)),
            (ResponseType::PerturbedRejected, swap_within_slots(&ex.rejected, &dataset.slots, perturb_k, &mut rng)),
            (ResponseType::OtherTrainChosen, dataset.train[other_index].chosen.clone()),
            (ResponseType::TestChosen, test.chosen.clone()),
            (ResponseType::PermutedChosen, permuted),
            (ResponseType::RandomTokens, random),
        ];
        probes.push(Probe { id, train_index: u, other_index, prompt: ex.prompt.clone(), responses });
    }
    Ok(ProbeSet { probes, perturb_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probing::dataset::{gen_toy_dataset, ToyConfig};

    #[test]
    fn probe_taxonomy() {
        let d = gen_toy_dataset(&ToyConfig::default()).unwrap();
        let set = build_probe_set(&d, 16, 1, 5).unwrap();
        assert_eq!(set, build_probe_set(&d, 16, 1, 5).unwrap());
        assert_eq!(set.probes.len(), 16);
        for p in &set.probes {
            assert_eq!(p.responses.len(), 8);
            let chosen = p.response(ResponseType::Chosen);
            let mut a = chosen.to_vec();
            let mut b = p.response(ResponseType::PermutedChosen).to_vec();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
            assert_ne!(p.other_index, p.train_index);
            assert_ne!(d.train[p.other_index].prompt, p.prompt);
            assert_eq!(p.response(ResponseType::RandomTokens).len(), chosen.len());
            let diff = chosen.iter().zip(p.response(ResponseType::PerturbedChosen)).filter(|(x, y)| x != y).count();
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn bad_probe_configs() {
        let d = gen_toy_dataset(&ToyConfig::default()).unwrap();
        assert!(matches!(build_probe_set(&d, 16, 6, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_probe_set(&d, 161, 1, 0), Err(Error::InvalidConfig(_))));
        assert_eq!("random_tokens".parse::<ResponseType>().unwrap(), ResponseType::RandomTokens);
    }
}
