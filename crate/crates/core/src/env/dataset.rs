use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::expert::{scripted_expert, Demonstration, ExpertConfig};
use super::map::{NavMap, Point};
use crate::autodiff::Tensor;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"MARSDEMO";
pub const DATASET_VERSION: u32 = 1;

/// Per-dimension affine statistics for observations and actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub obs_mean: Point,
    pub obs_std: Point,
    pub act_mean: Point,
    pub act_std: Point,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            obs_mean: [0.0; 2],
            obs_std: [1.0; 2],
            act_mean: [0.0; 2],
            act_std: [1.0; 2],
        }
    }

    pub fn fit(demos: &[Demonstration]) -> Self {
        let obs = demos.iter().flat_map(|d| d.observations().iter().copied());
        let act = demos.iter().flat_map(|d| d.actions.iter().copied());
        let (obs_mean, obs_std) = moments(obs);
        let (act_mean, act_std) = moments(act);
        Self {
            obs_mean,
            obs_std,
            act_mean,
            act_std,
        }
    }

    pub fn obs(&self, p: Point) -> Point {
        affine(p, self.obs_mean, self.obs_std)
    }

    pub fn action(&self, a: Point) -> Point {
        affine(a, self.act_mean, self.act_std)
    }

    pub fn action_raw(&self, a: Point) -> Point {
        [
            a[0] * self.act_std[0] + self.act_mean[0],
            a[1] * self.act_std[1] + self.act_mean[1],
        ]
    }

    pub fn obs_raw(&self, p: Point) -> Point {
        [
            p[0] * self.obs_std[0] + self.obs_mean[0],
            p[1] * self.obs_std[1] + self.obs_mean[1],
        ]
    }

    /// Tensors stored next to a policy checkpoint.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        [
            ("norm.obs_mean", self.obs_mean),
            ("norm.obs_std", self.obs_std),
            ("norm.act_mean", self.act_mean),
            ("norm.act_std", self.act_std),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), Tensor::from_parts(vec![2], v.to_vec())))
        .collect()
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| -> Result<Point> {
            let t = tensors
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Malformed {
                    what: "checkpoint",
                    detail: format!("missing tensor {name}"),
                })?;
            match t.data() {
                [a, b] => Ok([*a, *b]),
                _ => Err(Error::Malformed {
                    what: "checkpoint",
                    detail: format!("tensor {name} has shape {:?}", t.shape()),
                }),
            }
        };
        Ok(Self {
            obs_mean: get("norm.obs_mean")?,
            obs_std: get("norm.obs_std")?,
            act_mean: get("norm.act_mean")?,
            act_std: get("norm.act_std")?,
        })
    }
}

fn affine(x: Point, mean: Point, std: Point) -> Point {
    [(x[0] - mean[0]) / std[0], (x[1] - mean[1]) / std[1]]
}

/// Mean and population standard deviation; a degenerate spread maps to 1.
fn moments(points: impl Iterator<Item = Point> + Clone) -> (Point, Point) {
    let n = points.clone().count().max(1) as f64;
    let mut mean = [0.0; 2];
    for p in points.clone() {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean = [mean[0] / n, mean[1] / n];
    let mut var = [0.0; 2];
    for p in points {
        var[0] += (p[0] - mean[0]).powi(2);
        var[1] += (p[1] - mean[1]).powi(2);
    }
    let std = |v: f64| {
        let s = (v / n).sqrt();
        if s > 1e-12 {
            s
        } else {
            1.0
        }
    };
    (mean, [std(var[0]), std(var[1])])
}

/// Flattened normalized training pairs, one row per demonstration step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPairs {
    /// `[N, H*2]`: the `H` actions before the step.
    pub histories: Tensor,
    /// `[N, H*2]`: the step's action and the `H - 1` after it.
    pub targets: Tensor,
    /// `[N, 2]`
    pub observations: Tensor,
    /// `(demo, step)` of every row.
    pub origin: Vec<(usize, usize)>,
}

impl ChunkPairs {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }
}

/// Demonstrations plus the normalization fitted to them.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    demos: Vec<Demonstration>,
    norm: Normalizer,
}

impl DemoDataset {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self> {
        if demos.is_empty() || demos.iter().any(|d| d.is_empty() || d.positions.len() != d.len() + 1) {
            return Err(Error::Config(
                "dataset needs non-empty, well-formed demonstrations".into(),
            ));
        }
        let norm = Normalizer::fit(&demos);
        Ok(Self { demos, norm })
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn num_steps(&self) -> usize {
        self.demos.iter().map(Demonstration::len).sum()
    }

    /// Per-passage demonstration counts.
    pub fn mode_counts(&self, passages: usize) -> Vec<usize> {
        let mut counts = vec![0; passages];
        for d in &self.demos {
            if d.mode < passages {
                counts[d.mode] += 1;
            }
        }
        counts
    }

    /// History/target pairs for chunk length `horizon`. Histories reaching
    /// before the episode are padded with the normalized zero action, the
    /// value used at the start of a rollout; targets running past the end
    /// repeat the last action.
    pub fn chunk_pairs(&self, horizon: usize) -> ChunkPairs {
        let n = self.num_steps();
        let width = horizon * 2;
        let mut hist = Vec::with_capacity(n * width);
        let mut next = Vec::with_capacity(n * width);
        let mut obs = Vec::with_capacity(n * 2);
        let mut origin = Vec::with_capacity(n);
        for (di, d) in self.demos.iter().enumerate() {
            let acts: Vec<Point> = d.actions.iter().map(|&a| self.norm.action(a)).collect();
            let last = *acts.last().expect("non-empty demo");
            for t in 0..acts.len() {
                for k in 0..horizon {
                    let a = if t + k >= horizon {
                        acts[t + k - horizon]
                    } else {
                        [0.0, 0.0]
                    };
                    hist.extend(a);
                }
                for k in 0..horizon {
                    next.extend(*acts.get(t + k).unwrap_or(&last));
                }
                obs.extend(self.norm.obs(d.positions[t]));
                origin.push((di, t));
            }
        }
        ChunkPairs {
            histories: Tensor::from_parts(vec![n, width], hist),
            targets: Tensor::from_parts(vec![n, width], next),
            observations: Tensor::from_parts(vec![n, 2], obs),
            origin,
        }
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.demos.len() as u32);
        for d in &self.demos {
            w.u32(d.mode as u32);
            w.u32(d.actions.len() as u32);
            for p in &d.positions {
                w.f64s(p);
            }
            for a in &d.actions {
                w.f64s(a);
            }
        }
        w.into_inner()
    }

    /// SHA-256 of the serialized demonstrations, order-sensitive.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.encode_payload()).into()
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut w = Writer::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u64(payload.len() as u64);
        w.bytes(&payload);
        w.bytes(&Sha256::digest(&payload));
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.expect_magic(DATASET_MAGIC)?;
        r.expect_version(DATASET_VERSION)?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        let stored = r.take(32)?;
        r.finish()?;
        if Sha256::digest(payload).as_slice() != stored {
            return Err(Error::HashMismatch);
        }

        let mut p = Reader::new(payload, "dataset");
        let count = p.u32()? as usize;
        let mut demos = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let mode = p.u32()? as usize;
            let steps = p.u32()? as usize;
            let positions = points(p.f64s(2 * (steps + 1))?);
            let actions = points(p.f64s(2 * steps)?);
            demos.push(Demonstration {
                positions,
                actions,
                mode,
            });
        }
        p.finish()?;
        Self::new(demos).map_err(|e| Error::Malformed {
            what: "dataset",
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn points(flat: Vec<f64>) -> Vec<Point> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

pub fn save_dataset(dataset: &DemoDataset, path: &Path) -> Result<()> {
    dataset.save(path)
}

pub fn load_dataset(path: &Path) -> Result<DemoDataset> {
    DemoDataset::load(path)
}

/// `count` expert demonstrations with uniformly drawn passages.
pub fn generate_dataset<R: Rng + ?Sized>(
    map: &NavMap,
    count: usize,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> Result<DemoDataset> {
    let demos = (0..count)
        .map(|_| scripted_expert(map, None, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    DemoDataset::new(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::default_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DemoDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        generate_dataset(&default_map(), 6, &ExpertConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = small();
        let back = DemoDataset::decode(&d.encode()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.content_hash(), d.content_hash());
    }

    #[test]
    fn failures_are_distinguished() {
        let d = small();
        let bytes = d.encode();

        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(DemoDataset::decode(&flipped), Err(Error::HashMismatch)));

        let mut version = bytes.clone();
        version[8] = 9;
        assert!(matches!(
            DemoDataset::decode(&version),
            Err(Error::VersionMismatch { .. })
        ));

        assert!(matches!(
            DemoDataset::decode(&bytes[..bytes.len() - 5]),
            Err(Error::Truncated(_))
        ));

        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(DemoDataset::decode(&magic), Err(Error::BadMagic(_))));
    }

    #[test]
    fn chunk_pairs_pad_and_align() {
        let d = small();
        let h = 4;
        let pairs = d.chunk_pairs(h);
        assert_eq!(pairs.len(), d.num_steps());
        let norm = d.normalizer();
        let demo = &d.demos()[0];
        // first row: empty history, target = first four actions
        assert!(pairs.histories.data()[..8].iter().all(|&v| v == 0.0));
        for k in 0..h {
            let a = norm.action(demo.actions[k]);
            assert_eq!(&pairs.targets.data()[2 * k..2 * k + 2], &a);
        }
        // row t = 5: history is actions 1..5
        let row = 5 * 8;
        for k in 0..h {
            let a = norm.action(demo.actions[1 + k]);
            assert_eq!(&pairs.histories.data()[row + 2 * k..row + 2 * k + 2], &a);
        }
        // last row of demo 0 repeats the final action
        let t = demo.len() - 1;
        let last = norm.action(demo.actions[t]);
        for k in 0..h {
            assert_eq!(&pairs.targets.data()[t * 8 + 2 * k..t * 8 + 2 * k + 2], &last);
        }
    }
}
