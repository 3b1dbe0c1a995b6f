//! Train/validation/test partitioning that keeps class-duration and
//! performer shares of each set close to the corpus-wide shares.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NoteAnnotation, TrackMetadata, N_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, valid: usize, test: usize) -> Self {
        SplitSizes { train, valid, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    fn as_array(&self) -> [usize; 3] {
        [self.train, self.valid, self.test]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn sets(&self) -> [&[String]; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

/// Per-track balancing features: seconds per class, then seconds per performer.
struct Features {
    rows: Vec<Vec<f64>>,
    width: usize,
}

impl Features {
    fn build(tracks: &[(TrackMetadata, Vec<NoteAnnotation>)]) -> Self {
        let performers: BTreeMap<&str, usize> = tracks
            .iter()
            .map(|(m, _)| m.performer.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        let width = N_CLASSES + performers.len();
        let rows = tracks
            .iter()
            .map(|(meta, notes)| {
                let mut row = vec![0.0; width];
                for n in notes {
                    row[n.ipt.index()] += n.duration();
                }
                row[N_CLASSES + performers[meta.performer.as_str()]] += meta.audio_length.max(0.0);
                row
            })
            .collect();
        Features { rows, width }
    }

    fn aggregate(&self, members: &[usize]) -> Vec<f64> {
        let mut agg = vec![0.0; self.width];
        for &i in members {
            for (a, v) in agg.iter_mut().zip(&self.rows[i]) {
                *a += v;
            }
        }
        agg
    }
}

/// Normalizes the class block and the performer block separately.
fn shares(agg: &[f64]) -> Vec<f64> {
    let mut out = agg.to_vec();
    for block in [0..N_CLASSES, N_CLASSES..agg.len()] {
        let total: f64 = agg[block.clone()].iter().sum();
        for i in block {
            out[i] = if total > 0.0 { agg[i] / total } else { 0.0 };
        }
    }
    out
}

/// (max, sum) of relative share deviations of each non-empty set from the corpus.
fn objective(set_aggs: &[Vec<f64>; 3], sizes: [usize; 3], corpus: &[f64]) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut total = 0.0;
    for (agg, &size) in set_aggs.iter().zip(&sizes) {
        if size == 0 {
            continue;
        }
        let s = shares(agg);
        for (share, &reference) in s.iter().zip(corpus) {
            if reference > 0.0 {
                let dev = (share - reference).abs() / reference;
                worst = worst.max(dev);
                total += dev;
            }
        }
    }
    (worst, total)
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    const EPS: f64 = 1e-12;
    a.0 < b.0 - EPS || ((a.0 - b.0).abs() <= EPS && a.1 < b.1 - EPS)
}

/// Greedy swap-based balancing from a seeded random start. Deterministic for a
/// fixed seed; set lists are returned sorted by audio id.
pub fn split_corpus(
    tracks: &[(TrackMetadata, Vec<NoteAnnotation>)],
    sizes: SplitSizes,
    seed: u64,
) -> Result<CorpusSplit> {
    if sizes.total() != tracks.len() {
        return Err(Error::Validation(format!(
            "split sizes {}+{}+{} = {} do not match the corpus size {}",
            sizes.train,
            sizes.valid,
            sizes.test,
            sizes.total(),
            tracks.len()
        )));
    }
    let features = Features::build(tracks);
    let corpus = shares(&features.aggregate(&(0..tracks.len()).collect::<Vec<_>>()));

    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size_arr = sizes.as_array();
    let mut sets: [Vec<usize>; 3] = Default::default();
    let mut cursor = 0;
    for (set, &n) in sets.iter_mut().zip(&size_arr) {
        set.extend_from_slice(&order[cursor..cursor + n]);
        cursor += n;
    }

    let mut aggs: [Vec<f64>; 3] = std::array::from_fn(|k| features.aggregate(&sets[k]));
    let mut current = objective(&aggs, size_arr, &corpus);
    for _ in 0..10 * tracks.len().max(1) {
        let mut best: Option<((f64, f64), usize, usize, usize, usize)> = None;
        for a in 0..3 {
            for b in a + 1..3 {
                for (ia, &ta) in sets[a].iter().enumerate() {
                    for (ib, &tb) in sets[b].iter().enumerate() {
                        let mut trial = aggs.clone();
                        for f in 0..features.width {
                            let delta = features.rows[tb][f] - features.rows[ta][f];
                            trial[a][f] += delta;
                            trial[b][f] -= delta;
                        }
                        let score = objective(&trial, size_arr, &corpus);
                        let reference = best.map_or(current, |b| b.0);
                        if better(score, reference) {
                            best = Some((score, a, ia, b, ib));
                        }
                    }
                }
            }
        }
        let Some((score, a, ia, b, ib)) = best else {
            break;
        };
        let ta = sets[a][ia];
        sets[a][ia] = sets[b][ib];
        sets[b][ib] = ta;
        aggs[a] = features.aggregate(&sets[a]);
        aggs[b] = features.aggregate(&sets[b]);
        current = score;
    }

    let ids = |set: &[usize]| {
        let mut v: Vec<String> = set.iter().map(|&i| tracks[i].0.audio_id.clone()).collect();
        v.sort();
        v
    };
    Ok(CorpusSplit {
        train: ids(&sets[0]),
        valid: ids(&sets[1]),
        test: ids(&sets[2]),
    })
}

/// Largest relative share deviation of any set from the corpus for an existing split.
pub fn split_deviation(
    tracks: &[(TrackMetadata, Vec<NoteAnnotation>)],
    split: &CorpusSplit,
) -> Result<f64> {
    let features = Features::build(tracks);
    let corpus = shares(&features.aggregate(&(0..tracks.len()).collect::<Vec<_>>()));
    let index_of = |id: &String| {
        tracks
            .iter()
            .position(|(m, _)| &m.audio_id == id)
            .ok_or_else(|| Error::Validation(format!("unknown audio_id {id:?} in split")))
    };
    let mut sets: [Vec<usize>; 3] = Default::default();
    for (k, ids) in split.sets().into_iter().enumerate() {
        sets[k] = ids.iter().map(index_of).collect::<Result<_>>()?;
    }
    let aggs: [Vec<f64>; 3] = std::array::from_fn(|k| features.aggregate(&sets[k]));
    let sizes = [sets[0].len(), sets[1].len(), sets[2].len()];
    Ok(objective(&aggs, sizes, &corpus).0)
}
