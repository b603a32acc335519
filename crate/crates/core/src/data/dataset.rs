use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{read_motions, write_motions};
use super::{synth_pair, Concept, ConceptSpec, DataError, HolisticLabel, MotionSequence, CHANNELS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MOTIONS_FILE: &str = "motions.dmg1";
pub const LABELS_FILE: &str = "labels.jsonl";

/// Token list with PAD at id 0 followed by the concepts in declaration order.
pub fn vocabulary() -> Vec<String> {
    std::iter::once("PAD")
        .chain(Concept::ALL.iter().map(|c| c.name()))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_held_out: usize,
    pub len: usize,
    pub held_out: Vec<HolisticLabel>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_test: 800,
            n_held_out: 200,
            len: super::DEFAULT_LEN,
            held_out: vec![
                HolisticLabel {
                    path: Concept::Zigzag,
                    gesture: Concept::WaveLeft,
                },
                HolisticLabel {
                    path: Concept::Circle,
                    gesture: Concept::RaiseBoth,
                },
            ],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub len: usize,
    pub channels: usize,
    pub counts: SplitCounts,
    pub vocabulary: Vec<String>,
    pub held_out_pairs: Vec<HolisticLabel>,
    /// Per-channel statistics over the train split.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl DatasetManifest {
    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            mean: self.norm_mean.clone(),
            std: self.norm_std.clone(),
        }
    }
}

/// Per-channel z-normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(motions: impl IntoIterator<Item = &'a MotionSequence>) -> Self {
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let mut n = 0usize;
        for m in motions {
            for t in 0..m.len() {
                for (ch, &v) in m.frame(t).iter().enumerate() {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            n += m.len();
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }

    /// Normalised frames as f32, row-major `L x 6`.
    pub fn normalize(&self, m: &MotionSequence) -> Vec<f32> {
        m.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| ((v - self.mean[i % CHANNELS]) / self.std[i % CHANNELS]) as f32)
            .collect()
    }

    pub fn denormalize(&self, len: usize, data: &[f32]) -> Result<MotionSequence, DataError> {
        let raw = data
            .iter()
            .enumerate()
            .map(|(i, &v)| v as f64 * self.std[i % CHANNELS] + self.mean[i % CHANNELS])
            .collect();
        MotionSequence::from_data(len, raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    pub path: ConceptSpec,
    pub gesture: ConceptSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    pub id: usize,
    pub motion: MotionSequence,
    pub label: HolisticLabel,
    pub split: Split,
    pub params: PairParams,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: usize,
    path: Concept,
    gesture: Concept,
    split: Split,
    params: PairParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<MotionSample>,
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 40) | index as u64);
    rng
}

fn draw(label: HolisticLabel, rng: &mut ChaCha8Rng, len: usize) -> Result<(MotionSequence, PairParams), DataError> {
    let params = PairParams {
        path: ConceptSpec::sample(label.path, rng),
        gesture: ConceptSpec::sample(label.gesture, rng),
    };
    Ok((synth_pair(&params.path, &params.gesture, len)?, params))
}

impl Dataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self, DataError> {
        if config.len < 8 {
            return Err(DataError::TooShort(config.len));
        }
        let grid = HolisticLabel::grid();
        for h in &config.held_out {
            if !grid.contains(h) {
                return Err(DataError::HeldOut(h.path.to_string(), h.gesture.to_string()));
            }
        }
        if config.held_out.len() < 2 {
            return Err(DataError::Format("at least two held-out pairs are required".into()));
        }
        let seen: Vec<HolisticLabel> = grid.into_iter().filter(|l| !config.held_out.contains(l)).collect();

        let mut samples = Vec::with_capacity(config.n_train + config.n_test + config.n_held_out);
        for (split, n) in [(Split::Train, config.n_train), (Split::Test, config.n_test)] {
            for i in 0..n {
                let mut rng = sample_rng(config.seed, split, i);
                let label = *seen.choose(&mut rng).expect("non-empty pair list");
                let (motion, params) = draw(label, &mut rng, config.len)?;
                samples.push(MotionSample {
                    id: samples.len(),
                    motion,
                    label,
                    split,
                    params,
                });
            }
        }
        for i in 0..config.n_held_out {
            let mut rng = sample_rng(config.seed, Split::HeldOut, i);
            let label = config.held_out[i % config.held_out.len()];
            let (motion, params) = draw(label, &mut rng, config.len)?;
            samples.push(MotionSample {
                id: samples.len(),
                motion,
                label,
                split: Split::HeldOut,
                params,
            });
        }

        let norm = Normalizer::fit(samples.iter().filter(|s| s.split == Split::Train).map(|s| &s.motion));
        let manifest = DatasetManifest {
            seed: config.seed,
            len: config.len,
            channels: CHANNELS,
            counts: SplitCounts {
                train: config.n_train,
                test: config.n_test,
                held_out: config.n_held_out,
            },
            vocabulary: vocabulary(),
            held_out_pairs: config.held_out.clone(),
            norm_mean: norm.mean,
            norm_std: norm.std,
        };
        Ok(Self { manifest, samples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &MotionSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn normalizer(&self) -> Normalizer {
        self.manifest.normalizer()
    }

    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        let motions: Vec<MotionSequence> = self.samples.iter().map(|s| s.motion.clone()).collect();
        write_motions(&dir.join(MOTIONS_FILE), &motions)?;
        let mut labels = Vec::new();
        for s in &self.samples {
            let rec = LabelRecord {
                id: s.id,
                path: s.label.path,
                gesture: s.label.gesture,
                split: s.split,
                params: s.params.clone(),
            };
            serde_json::to_writer(&mut labels, &rec)?;
            labels.write_all(b"\n")?;
        }
        fs::write(dir.join(LABELS_FILE), labels)?;
        Ok(())
    }

    /// Load a dataset directory. Motions come back at f32 precision.
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let motions = read_motions(&dir.join(MOTIONS_FILE))?;
        let reader = BufReader::new(fs::File::open(dir.join(LABELS_FILE))?);
        let mut samples = Vec::with_capacity(motions.len());
        for (line, motion) in reader.lines().zip(motions) {
            let rec: LabelRecord = serde_json::from_str(&line?)?;
            samples.push(MotionSample {
                id: rec.id,
                motion,
                label: HolisticLabel::new(rec.path, rec.gesture)?,
                split: rec.split,
                params: rec.params,
            });
        }
        let c = manifest.counts;
        if samples.len() != c.train + c.test + c.held_out {
            return Err(DataError::Format(format!(
                "labels and motions disagree with manifest counts ({} samples)",
                samples.len()
            )));
        }
        Ok(Self { manifest, samples })
    }
}

/// SHA-256 over the manifest, motion and label files, hex encoded.
pub fn dataset_hash(dir: &Path) -> Result<String, DataError> {
    let mut h = Sha256::new();
    for f in [MANIFEST_FILE, MOTIONS_FILE, LABELS_FILE] {
        h.update(fs::read(dir.join(f))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
