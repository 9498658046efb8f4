use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::context::{dedup_contexts, extract_contexts, ContextSample, SampleSource};
use super::level::LevelGrid;
use crate::affordance::{AffordanceVector, Tag, TAG_COUNT};
use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::{CHANNELS, CONTEXT_PX};

/// All levels of one game.
#[derive(Debug, Clone)]
pub struct GameLevels {
    pub game_id: String,
    pub levels: Vec<LevelGrid>,
}

/// Deduplicated training samples plus per-label loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ContextSample>,
    pub label_weights: [f64; TAG_COUNT],
    pub tag_order: Vec<String>,
}

/// JSON written next to a `TCDS` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub label_weights: Vec<f64>,
    pub tag_order: Vec<String>,
    pub sample_count: usize,
    pub games: Vec<String>,
}

/// Smoothed inverse document frequency per label, treating each sample as a
/// document and each positive label as a term:
/// `w_i = ln(N / (1 + df_i)) + 1`, then divided by the mean weight.
pub fn compute_label_weights(samples: &[ContextSample]) -> Result<[f64; TAG_COUNT]> {
    let mut df = [0usize; TAG_COUNT];
    for s in samples {
        for t in s.center_affordance.tags() {
            df[t.index()] += 1;
        }
    }
    if df.iter().all(|&d| d == 0) {
        return Err(Error::Weighting("no sample carries any affordance label".into()));
    }
    Ok(idf_weights(samples.len(), &df))
}

pub(crate) fn idf_weights(n: usize, df: &[usize; TAG_COUNT]) -> [f64; TAG_COUNT] {
    let mut w = [0.0; TAG_COUNT];
    for (wi, &d) in w.iter_mut().zip(df) {
        *wi = (n as f64 / (1.0 + d as f64)).ln() + 1.0;
    }
    let mean = w.iter().sum::<f64>() / TAG_COUNT as f64;
    w.iter_mut().for_each(|v| *v /= mean);
    w
}

/// Extracts, deduplicates (per game) and weights contexts from every level.
pub fn build_dataset(games: &[GameLevels]) -> Result<Dataset> {
    if games.iter().all(|g| g.levels.is_empty()) {
        return Err(Error::Ingestion("no levels to build a dataset from".into()));
    }
    let mut samples = Vec::new();
    for game in games {
        let mut contexts = Vec::new();
        for level in &game.levels {
            contexts.extend(extract_contexts(level));
        }
        samples.extend(dedup_contexts(contexts));
    }
    let label_weights = compute_label_weights(&samples)?;
    Ok(Dataset {
        samples,
        label_weights,
        tag_order: Tag::order(),
    })
}

const MAGIC: &[u8; 4] = b"TCDS";
const VERSION: u16 = 1;

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct game ids in first-seen order.
    pub fn games(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.source.game_id) {
                out.push(s.source.game_id.clone());
            }
        }
        out
    }

    /// Sample indices grouped by game id.
    pub fn indices_by_game(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            out.entry(s.source.game_id.clone()).or_default().push(i);
        }
        out
    }

    /// A new dataset over a subset of samples with weights recomputed.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples: Vec<ContextSample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let label_weights = compute_label_weights(&samples)?;
        Ok(Dataset {
            samples,
            label_weights,
            tag_order: self.tag_order.clone(),
        })
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            label_weights: self.label_weights.to_vec(),
            tag_order: self.tag_order.clone(),
            sample_count: self.samples.len(),
            games: self.games(),
        }
    }

    /// Binary `TCDS` encoding (little-endian):
    ///
    /// ```text
    /// magic b"TCDS", version u16, count u64
    /// per sample: game str, level str, x u32, y u32,
    ///             48·48·3 f32 pixels, 13 u8 flags
    /// ```
    /// where `str` is a `u16` byte length followed by UTF-8.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u64(self.samples.len() as u64);
        for s in &self.samples {
            w.str(&s.source.game_id)?;
            w.str(&s.source.level_id)?;
            w.u32(s.source.x as u32);
            w.u32(s.source.y as u32);
            w.f32s(&s.pixels);
            w.bytes(&s.center_affordance.flags());
        }
        Ok(w.into_bytes())
    }

    /// Decodes a `TCDS` blob. Dedup keys are not stored; decoded samples get
    /// a key derived from their provenance, which is unique per sample.
    pub fn decode(bytes: &[u8], sidecar: &DatasetSidecar) -> Result<Dataset> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version("TCDS", VERSION)?;
        let count = r.u64("sample count")? as usize;
        let px = CONTEXT_PX * CONTEXT_PX * CHANNELS;
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let game_id = r.str("game id")?;
            let level_id = r.str("level id")?;
            let x = r.u32("x")? as usize;
            let y = r.u32("y")? as usize;
            let pixels = r.f32s(px, "pixels")?;
            let flags: [u8; TAG_COUNT] = r.take(TAG_COUNT, "affordance flags")?.try_into().expect("13 bytes");
            let center_affordance = AffordanceVector::from_flags(&flags)?;
            let dedup_key = format!("{game_id}\0{level_id}\0{x}\0{y}").into_bytes();
            samples.push(ContextSample {
                pixels,
                center_affordance,
                dedup_key,
                source: SampleSource { game_id, level_id, x, y },
            });
        }
        r.finish("TCDS")?;
        if sidecar.sample_count != samples.len() || sidecar.label_weights.len() != TAG_COUNT {
            return Err(Error::Format(format!(
                "sidecar describes {} samples and {} weights, file has {} samples",
                sidecar.sample_count,
                sidecar.label_weights.len(),
                samples.len()
            )));
        }
        if sidecar.tag_order != Tag::order() {
            return Err(Error::Format(format!("unsupported tag order {:?}", sidecar.tag_order)));
        }
        let mut label_weights = [0.0; TAG_COUNT];
        label_weights.copy_from_slice(&sidecar.label_weights);
        Ok(Dataset {
            samples,
            label_weights,
            tag_order: sidecar.tag_order.clone(),
        })
    }

    /// Writes `<path>` and its JSON sidecar `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)?;
        write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&self.sidecar())?)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let sc = sidecar_path(path);
        let sidecar: DatasetSidecar = serde_json::from_slice(&read_file(&sc)?)?;
        Dataset::decode(&read_file(path)?, &sidecar)
    }
}

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
