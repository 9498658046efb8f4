use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tilembed::corpus::{build_dataset, list_games, load_game, Dataset, GameLevels};
use tilembed::levelgen::{
    build_store, embed_level, generate, generate_symmetric, load_generator, save_generator, sequences_for,
    train_generator, write_outputs, EmbeddedLevel, GeneratedLevel, Traversal,
};
use tilembed::metrics::{
    crossfold, expressive_range, leniency_of, linearity_of, write_expressive_range, CrossfoldConfig,
    ExpressiveRangePoint, FoldReport, MetricsReport,
};
use tilembed::nnindex::NnIndex;
use tilembed::xae::{self, train, Autoencoder};
use tilembed::{write_atomic, AffordanceVector, Error, Result};

use crate::config::PipelineConfig;
use crate::manifest::Run;

/// Where every artifact lives under the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset.tcds")
    }

    pub fn autoencoder(&self) -> PathBuf {
        self.out.join("autoencoder.tcwt")
    }

    pub fn crossfold_dir(&self) -> PathBuf {
        self.out.join("crossfold")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.out.join("embeddings")
    }

    pub fn index(&self) -> PathBuf {
        self.out.join("index.tcnn")
    }

    pub fn generator(&self, mode: Traversal) -> PathBuf {
        self.out.join(format!("generator-{}.tcwt", mode_name(mode)))
    }

    pub fn generated_dir(&self, mode: Traversal) -> PathBuf {
        self.out.join("generated").join(mode_name(mode))
    }
}

pub fn mode_name(mode: Traversal) -> &'static str {
    match mode {
        Traversal::Row => "row",
        Traversal::Symmetric => "symmetric",
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn write_json<T: Serialize>(run: &mut Run, path: PathBuf, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    run.output(path);
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn load_corpus(cfg: &PipelineConfig, run: &mut Run) -> Result<Vec<GameLevels>> {
    let root = &cfg.corpus.root;
    require(root, "corpus root")?;
    let games = if cfg.corpus.games.is_empty() {
        list_games(root)?
    } else {
        cfg.corpus.games.clone()
    };
    if games.is_empty() {
        return Err(Error::Ingestion(format!("no games under {}", root.display())));
    }
    let mut out = Vec::new();
    for g in games {
        let dir = root.join(&g);
        require(&dir.join("legend.json"), "legend")?;
        run.input(dir);
        out.push(load_game(root, &g)?.1);
    }
    Ok(out)
}

fn load_dataset(layout: &Layout, run: &mut Run) -> Result<Dataset> {
    let path = layout.dataset();
    require(&path, "dataset (run `ingest` first)")?;
    run.input(&path);
    Dataset::load(&path)
}

fn load_autoencoder(layout: &Layout, run: &mut Run) -> Result<Autoencoder<f32>> {
    let path = layout.autoencoder();
    require(&path, "autoencoder (run `train-ae` first)")?;
    run.input(&path);
    Ok(xae::load(&path)?.0)
}

pub fn ingest(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut run = Run::new("ingest", cfg, json!({}));
    let games = load_corpus(cfg, &mut run)?;
    let dataset = build_dataset(&games)?;
    info!("ingested {} samples from {} games", dataset.len(), games.len());
    let path = layout.dataset();
    dataset.save(&path)?;
    run.output(sidecar(&path));
    run.output(path);
    run.finish(&layout.out)?;
    Ok(())
}

pub fn train_ae(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut run = Run::new("train-ae", cfg, json!({}));
    let dataset = load_dataset(layout, &mut run)?;
    let (model, report) = train(Autoencoder::new(&cfg.autoencoder)?, &dataset, &cfg.training)?;
    let path = layout.autoencoder();
    xae::save(&path, &model, &dataset.label_weights, cfg.training.seed)?;
    run.output(&path);
    run.output(sidecar(&path));
    write_json(&mut run, layout.out.join("train-ae.report.json"), &report)?;
    run.finish(&layout.out)?;
    Ok(())
}

pub fn crossfold_cmd(cfg: &PipelineConfig, layout: &Layout, hold_out: Option<&str>) -> Result<()> {
    let mut run = Run::new("crossfold", cfg, json!({ "hold_out": hold_out }));
    let dataset = load_dataset(layout, &mut run)?;
    let games = tilembed::metrics::annotated_games(&dataset);
    let folds: Vec<usize> = match hold_out {
        Some(g) => vec![games
            .iter()
            .position(|x| x == g)
            .ok_or_else(|| Error::Config(format!("hold-out game {g:?} is not an annotated game in the dataset")))?],
        None => (0..games.len()).collect(),
    };
    let fold_cfg = CrossfoldConfig {
        autoencoder: cfg.autoencoder.clone(),
        training: cfg.training.clone(),
        threshold: cfg.metrics.threshold,
        alphas: cfg.metrics.alphas.clone(),
    };
    let dir = layout.crossfold_dir();
    for fold in folds {
        let (report, _) = crossfold(&dataset, fold, &fold_cfg)?;
        info!(
            "held out {}: EMR {:.3} (baseline {:.3})",
            report.held_out, report.model.emr, report.mfl.emr
        );
        write_json(&mut run, dir.join(format!("{}.json", report.held_out)), &report)?;
    }
    run.finish(&dir)?;
    Ok(())
}

/// One entry of `embeddings/index.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub game_id: String,
    pub level_id: String,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// Relative to the embeddings directory.
    pub file: PathBuf,
}

pub fn embed(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut run = Run::new("embed", cfg, json!({}));
    let ae = load_autoencoder(layout, &mut run)?;
    let games = load_corpus(cfg, &mut run)?;
    let dir = layout.embeddings_dir();
    let mut entries = Vec::new();
    for game in &games {
        for level in &game.levels {
            let e = embed_level(&ae, level)?;
            let file = PathBuf::from(&e.game_id).join(format!("{}.emb", e.level_id));
            let bytes: Vec<u8> = e.cells.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_atomic(&dir.join(&file), &bytes)?;
            run.output(dir.join(&file));
            entries.push(EmbeddingEntry {
                game_id: e.game_id,
                level_id: e.level_id,
                width: e.width,
                height: e.height,
                dim: e.dim,
                file,
            });
        }
    }
    info!("embedded {} levels", entries.len());
    write_json(&mut run, dir.join("index.json"), &entries)?;
    run.finish(&dir)?;
    Ok(())
}

fn load_embeddings(layout: &Layout, run: &mut Run) -> Result<Vec<EmbeddedLevel>> {
    let dir = layout.embeddings_dir();
    let index = dir.join("index.json");
    require(&index, "embedding index (run `embed` first)")?;
    run.input(&index);
    let text = std::fs::read(&index).map_err(|e| Error::Io {
        path: index.clone(),
        source: e,
    })?;
    let entries: Vec<EmbeddingEntry> = serde_json::from_slice(&text)?;
    entries
        .into_iter()
        .map(|en| {
            let path = dir.join(&en.file);
            let bytes = std::fs::read(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            if bytes.len() != en.width * en.height * en.dim * 4 {
                return Err(Error::Format(format!(
                    "{} holds {} bytes, expected {}x{}x{} f32",
                    path.display(),
                    bytes.len(),
                    en.height,
                    en.width,
                    en.dim
                )));
            }
            Ok(EmbeddedLevel {
                game_id: en.game_id,
                level_id: en.level_id,
                width: en.width,
                height: en.height,
                dim: en.dim,
                cells: bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            })
        })
        .collect()
}

pub fn index(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut run = Run::new("index", cfg, json!({}));
    let dataset = load_dataset(layout, &mut run)?;
    let ae = load_autoencoder(layout, &mut run)?;
    let store = build_store(&ae, &dataset.samples)?;
    let index = NnIndex::build(store, cfg.index)?;
    let path = layout.index();
    index.save(&path)?;
    run.output(path);
    run.finish(&layout.out)?;
    Ok(())
}

pub fn train_gen(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mode = cfg.generate.mode;
    let mut run = Run::new("train-gen", cfg, json!({ "mode": mode }));
    let levels = load_embeddings(layout, &mut run)?;
    let seqs = sequences_for(mode, &levels);
    let (model, report) = train_generator(&seqs, &cfg.generator, &cfg.generator_training)?;
    let path = layout.generator(mode);
    save_generator(&path, &model)?;
    run.output(&path);
    run.output(sidecar(&path));
    write_json(
        &mut run,
        layout.out.join(format!("train-gen-{}.report.json", mode_name(mode))),
        &report,
    )?;
    run.finish(&layout.out)?;
    Ok(())
}

fn find_level<'a>(levels: &'a [EmbeddedLevel], key: &str) -> Result<&'a EmbeddedLevel> {
    let (game, level) = key
        .split_once('/')
        .ok_or_else(|| Error::Config(format!("seed_level {key:?} must be written game/level")))?;
    levels
        .iter()
        .find(|l| l.game_id == game && l.level_id == level)
        .ok_or_else(|| Error::Config(format!("seed level {key:?} was not embedded")))
}

pub fn generate_cmd(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mode = cfg.generate.mode;
    let mut run = Run::new("generate", cfg, json!({ "mode": mode }));
    let gpath = layout.generator(mode);
    require(&gpath, "generator (run `train-gen` first)")?;
    run.input(&gpath);
    let gen = load_generator(&gpath)?;
    let ipath = layout.index();
    require(&ipath, "index (run `index` first)")?;
    run.input(&ipath);
    let index = NnIndex::load(&ipath)?;
    let needs_levels = cfg.generate.seed_level.is_some() || mode == Traversal::Symmetric;
    let levels = if needs_levels {
        load_embeddings(layout, &mut run)?
    } else {
        Vec::new()
    };
    let dir = layout.generated_dir(mode);
    for i in 0..cfg.generate.count {
        let mut gc = cfg.generate.config(cfg.seed, i);
        let generated: GeneratedLevel = match mode {
            Traversal::Row => {
                let seed = cfg.generate.seed_level.as_deref().map(|k| find_level(&levels, k)).transpose()?;
                if let Some(s) = seed {
                    gc.width = s.width;
                }
                generate(&gen, &index, &gc, seed)?
            }
            Traversal::Symmetric => {
                let source = match cfg.generate.seed_level.as_deref() {
                    Some(k) => find_level(&levels, k)?,
                    None => levels
                        .get(i % levels.len().max(1))
                        .ok_or_else(|| Error::Config("symmetric generation needs embedded levels".into()))?,
                };
                gc.width = source.width;
                gc.height = source.height;
                if source.width % 2 != 0 {
                    return Err(Error::Config(format!(
                        "symmetric generation needs an even width; {}/{} is {} wide",
                        source.game_id, source.level_id, source.width
                    )));
                }
                let left = source.columns(0, source.width / 2)?;
                generate_symmetric(&gen, &index, &gc, &left)?
            }
        };
        let name = format!("{}_{i:03}", mode_name(mode));
        write_outputs(&dir, &name, &generated, &index.store)?;
        for ext in ["png", "tiles.txt", "emb", "aff.json"] {
            run.output(dir.join(format!("{name}.{ext}")));
        }
    }
    info!("generated {} levels into {}", cfg.generate.count, dir.display());
    run.finish(&dir)?;
    Ok(())
}

/// Expressive range of the generated levels of one mode, and of the corpus.
pub fn eval_levels(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mode = cfg.generate.mode;
    let mut run = Run::new("eval-levels", cfg, json!({ "mode": mode }));
    let dir = layout.generated_dir(mode);
    require(&dir, "generated level directory (run `generate` first)")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".aff.json"))
        .collect();
    files.sort();
    let mut points = Vec::new();
    for f in files {
        let text = std::fs::read(&f).map_err(|e| Error::Io {
            path: f.clone(),
            source: e,
        })?;
        let grid: Vec<Vec<AffordanceVector>> = serde_json::from_slice(&text)?;
        let (h, w) = (grid.len(), grid.first().map_or(0, Vec::len));
        let cells: Vec<AffordanceVector> = grid.into_iter().flatten().collect();
        let name = f.file_name().unwrap().to_string_lossy().trim_end_matches(".aff.json").to_string();
        points.push(ExpressiveRangePoint {
            level_id: name,
            linearity: linearity_of(w, h, &cells, cfg.metrics.linearity),
            leniency: leniency_of(&cells),
        });
        run.input(f);
    }
    let path = layout.out.join(format!("expressive_range_{}.csv", mode_name(mode)));
    write_expressive_range(&path, &points)?;
    run.output(path);

    if cfg.corpus.root.exists() {
        let games = load_corpus(cfg, &mut run)?;
        let levels: Vec<_> = games.into_iter().flat_map(|g| g.levels).collect();
        let mut corpus = expressive_range(&levels, cfg.metrics.linearity);
        for (p, l) in corpus.iter_mut().zip(&levels) {
            p.level_id = format!("{}/{}", l.game_id, l.level_id);
        }
        let path = layout.out.join("expressive_range_corpus.csv");
        write_expressive_range(&path, &corpus)?;
        run.output(path);
    }
    run.finish(&layout.out)?;
    Ok(())
}

fn mean_report(reports: &[&MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let mut alpha_scores = BTreeMap::new();
    for k in reports[0].alpha_scores.keys() {
        alpha_scores.insert(k.clone(), avg(&|r| r.alpha_scores.get(k).copied().unwrap_or(0.0)));
    }
    MetricsReport {
        emr: avg(&|r| r.emr),
        example_precision: avg(&|r| r.example_precision),
        example_recall: avg(&|r| r.example_recall),
        example_accuracy: avg(&|r| r.example_accuracy),
        label_precision: avg(&|r| r.label_precision),
        label_recall: avg(&|r| r.label_recall),
        label_accuracy: avg(&|r| r.label_accuracy),
        alpha_scores,
        rows: reports.iter().map(|r| r.rows).sum(),
        threshold: reports[0].threshold,
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    folds: Vec<(String, MetricsReport)>,
    mean: MetricsReport,
    mfl_baseline: MetricsReport,
}

fn markdown_row(name: &str, r: &MetricsReport) -> String {
    let mut cells = vec![
        name.to_string(),
        format!("{:.2}", r.emr),
        format!("{:.2}", r.example_precision),
        format!("{:.2}", r.example_recall),
        format!("{:.2}", r.example_accuracy),
        format!("{:.2}", r.label_precision),
        format!("{:.2}", r.label_recall),
        format!("{:.2}", r.label_accuracy),
    ];
    cells.extend(r.alpha_scores.values().map(|v| format!("{v:.2}")));
    format!("| {} |\n", cells.join(" | "))
}

/// Collects the cross-fold reports into one table, with the mean over
/// folds and the mean baseline.
pub fn report(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut run = Run::new("report", cfg, json!({}));
    let dir = layout.crossfold_dir();
    require(&dir, "cross-fold directory (run `crossfold` first)")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    files.sort();
    let mut folds: Vec<FoldReport> = Vec::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Error::Io {
            path: f.clone(),
            source: e,
        })?;
        folds.push(serde_json::from_slice(&bytes)?);
        run.input(f);
    }
    if folds.is_empty() {
        return Err(Error::Format(format!("no fold reports in {}", dir.display())));
    }
    let models: Vec<&MetricsReport> = folds.iter().map(|f| &f.model).collect();
    let baselines: Vec<&MetricsReport> = folds.iter().map(|f| &f.mfl).collect();
    let summary = Summary {
        folds: folds.iter().map(|f| (f.held_out.clone(), f.model.clone())).collect(),
        mean: mean_report(&models),
        mfl_baseline: mean_report(&baselines),
    };
    write_json(&mut run, layout.out.join("report.json"), &summary)?;

    let mut md = String::from("| Test Data | EMR | Ex. Prec | Ex. Recall | Ex. Acc | Label Prec | Label Recall | Label Acc |");
    for k in summary.mean.alpha_scores.keys() {
        md.push_str(&format!(" {k} |"));
    }
    md.push('\n');
    md.push_str(&"|---".repeat(8 + summary.mean.alpha_scores.len()));
    md.push_str("|\n");
    for (name, r) in &summary.folds {
        md.push_str(&markdown_row(name, r));
    }
    md.push_str(&markdown_row("Mean", &summary.mean));
    md.push_str(&markdown_row("MFL Baseline", &summary.mfl_baseline));
    let path = layout.out.join("report.md");
    write_atomic(&path, md.as_bytes())?;
    run.output(path);
    run.finish(&layout.out)?;
    Ok(())
}
