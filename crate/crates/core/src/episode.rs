//! N-way K-shot episode sampling.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, SampleRecord, SplitSide, SplitSpec};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Episode shape. `n_query` defaults to a single query image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub ways: usize,
    pub shots: usize,
    pub n_query: usize,
}

impl EpisodeShape {
    pub fn new(ways: usize, shots: usize) -> Self {
        Self {
            ways,
            shots,
            n_query: 1,
        }
    }
}

/// One few-shot task.
///
/// `support` is grouped by roster class: entries `i*K..(i+1)*K` are the shots
/// for `class_roster[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub shape: EpisodeShape,
    pub class_roster: Vec<ClassId>,
    pub support: Vec<SampleRecord>,
    pub query: Vec<SampleRecord>,
}

impl Episode {
    pub fn support_for(&self, roster_index: usize) -> &[SampleRecord] {
        let k = self.shape.shots;
        &self.support[roster_index * k..(roster_index + 1) * k]
    }
}

/// Samples an episode from one side of the split.
///
/// Samples are drawn without replacement within the episode. A sample is
/// eligible for class `c` when `c` is among its image-level labels.
pub fn sample_episode(
    records: &[SampleRecord],
    split: &SplitSpec,
    side: SplitSide,
    shape: EpisodeShape,
    seed: u64,
) -> Result<Episode> {
    let EpisodeShape {
        ways,
        shots,
        n_query,
    } = shape;
    if ways == 0 || shots == 0 {
        return Err(Error::Config("ways and shots must be at least 1".into()));
    }
    let side_classes = split.side(side);
    let eligible = |c: ClassId| -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.labels.contains(&c))
            .map(|(i, _)| i)
            .collect()
    };

    let mut candidates = Vec::new();
    let mut first_short = None;
    for &c in side_classes {
        if eligible(c).len() >= shots + n_query {
            candidates.push(c);
        } else if first_short.is_none() {
            first_short = Some(c);
        }
    }
    if candidates.len() < ways {
        let class = first_short.unwrap_or(0);
        return Err(Error::Sampling {
            class,
            message: format!(
                "{side} split has {} classes with at least {} samples, need {ways}",
                candidates.len(),
                shots + n_query
            ),
        });
    }

    let mut rng = rng_from_seed(seed);
    let class_roster: Vec<ClassId> = index::sample(&mut rng, candidates.len(), ways)
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    let mut used = BTreeSet::new();
    let mut support = Vec::with_capacity(ways * shots);
    for &c in &class_roster {
        let pool: Vec<usize> = eligible(c).into_iter().filter(|i| !used.contains(i)).collect();
        if pool.len() < shots {
            return Err(Error::Sampling {
                class: c,
                message: format!("only {} unused samples for {shots} shots", pool.len()),
            });
        }
        for j in index::sample(&mut rng, pool.len(), shots) {
            used.insert(pool[j]);
            support.push(records[pool[j]].clone());
        }
    }

    let mut query = Vec::with_capacity(n_query);
    for q in 0..n_query {
        let c = class_roster[q % ways];
        let pool: Vec<usize> = eligible(c).into_iter().filter(|i| !used.contains(i)).collect();
        if pool.is_empty() {
            return Err(Error::Sampling {
                class: c,
                message: "no unused sample left for the query set".into(),
            });
        }
        let pick = pool[index::sample(&mut rng, pool.len(), 1).index(0)];
        used.insert(pick);
        query.push(records[pick].clone());
    }

    Ok(Episode {
        shape,
        class_roster,
        support,
        query,
    })
}
