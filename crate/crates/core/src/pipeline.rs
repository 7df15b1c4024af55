//! End-to-end run: panel to regimes, shocks, network, nulls and country
//! statistics, with a manifest of output digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cluster::{final_fit, null_silhouette, select_k, KMeansConfig, NullConfig, SelectionConfig};
use crate::embed::{embed_growth, DEFAULT_VARIANCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::io::{sha256_file, sha256_hex, to_sorted_json, write_labels_csv};
use crate::panel::{compute_growth, filter_complete, load_panel_path, Panel};
use crate::propagation::{build_network, network_null, spatial_decay, EdgeCountMode, MeanMode, NetworkConfig, NetworkNullConfig};
use crate::regimes::{detect_shocks, regime_trajectories, PercentileMethod};
use crate::robustness::{initial_level_subsample, threshold_sweep};
use crate::rng::RNG_NAME;
use crate::stats::{
    decompose_growth, industrialization_analysis, read_industrialization, regime_country_table,
    within_country_dispersion, write_dispersion_csv, write_heatmap_csv, DecompositionMode,
};
use crate::synth::{generate, SynthConfig};
use crate::zonal::{aggregate_zones, read_raster_path, read_zones_path};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Long-format level panel (CSV or JSON).
    pub panel: Option<PathBuf>,
    /// Raster description; used with `zones` instead of `panel`.
    pub raster: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    /// Synthetic-panel config; used instead of `panel`.
    pub synth: Option<PathBuf>,
    /// `country_code,years_since_industrialization` table.
    pub industrialization: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub pca_threshold: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub seeds: usize,
    pub n_init: usize,
    pub final_n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub shock_lower_pct: f64,
    pub shock_upper_pct: f64,
    pub percentile_method: PercentileMethod,
    pub tau_max: usize,
    pub alpha: f64,
    pub min_members: usize,
    pub overlap_means: bool,
    pub edge_count_mode: EdgeCountMode,
    pub silhouette_null_perms: usize,
    pub network_null_perms: usize,
    /// Also run the entity x year decomposition with year effects.
    pub panel_decomposition: bool,
    /// PCA thresholds for the robustness sweep (empty = skip).
    pub threshold_sweep: Vec<f64>,
    /// Re-cluster the upper half by initial level and report agreement.
    pub income_subsample: bool,
    pub master_seed: u64,
    /// Free-form notes; ignored by the pipeline.
    #[serde(rename = "_comment", skip_serializing)]
    pub comment: Value,
}

impl Default for RunConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            panel: None,
            raster: None,
            zones: None,
            synth: None,
            industrialization: None,
            out_dir: PathBuf::from("regime-kit-out"),
            pca_threshold: DEFAULT_VARIANCE_THRESHOLD,
            k_min: 3,
            k_max: 20,
            seeds: 20,
            n_init: km.n_init,
            final_n_init: 20,
            max_iter: km.max_iter,
            tol: km.tol,
            shock_lower_pct: 2.0,
            shock_upper_pct: 98.0,
            percentile_method: PercentileMethod::Linear,
            tau_max: 3,
            alpha: 0.05,
            min_members: 0,
            overlap_means: false,
            edge_count_mode: EdgeCountMode::Ordered,
            silhouette_null_perms: 50,
            network_null_perms: 10_000,
            panel_decomposition: false,
            threshold_sweep: Vec::new(),
            income_subsample: false,
            master_seed: 0,
            comment: Value::Null,
        }
    }
}

fn field_notes() -> Value {
    json!({
        "pca_threshold": "smallest number of components whose cumulative explained variance reaches this share",
        "k_min": "smallest k in the silhouette search",
        "k_max": "largest k in the silhouette search (clipped to N - 1)",
        "seeds": "independent seeds per k during selection",
        "n_init": "k-means++ initialisations per fit during selection",
        "final_n_init": "initialisations for the refit at k* from the best seed",
        "max_iter": "Lloyd iteration cap",
        "tol": "convergence tolerance on the largest centroid shift",
        "shock_lower_pct": "deviation percentile at or below which a year is a negative shock",
        "shock_upper_pct": "deviation percentile at or above which a year is a positive shock",
        "percentile_method": "linear interpolation between order statistics, or nearest-rank",
        "tau_max": "largest lag tested in the propagation network",
        "alpha": "two-sided significance level; threshold is z(1 - alpha/2) / sqrt(n)",
        "min_members": "regimes with fewer members are left out of the network",
        "overlap_means": "centre lagged correlations on overlap-window means instead of full-series means",
        "edge_count_mode": "ordered pair-lag edges, or unordered pairs with any significant lag",
        "silhouette_null_perms": "within-trajectory time permutations for the silhouette null",
        "network_null_perms": "within-series time permutations for the network null",
        "master_seed": "root of every derived random stream",
    })
}

impl RunConfig {
    /// Read a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.panel);
        resolve(&mut cfg.raster);
        resolve(&mut cfg.zones);
        resolve(&mut cfg.synth);
        resolve(&mut cfg.industrialization);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [self.panel.is_some(), self.raster.is_some() || self.zones.is_some(), self.synth.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::InvalidInput(
                "exactly one input source is required: panel, raster + zones, or synth".into(),
            ));
        }
        if self.raster.is_some() != self.zones.is_some() {
            return Err(Error::InvalidInput("raster and zones must be given together".into()));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!("pca_threshold {} outside (0, 1]", self.pca_threshold)));
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::InvalidInput(format!("invalid k range {}..{}", self.k_min, self.k_max)));
        }
        if self.seeds == 0 || self.n_init == 0 || self.final_n_init == 0 {
            return Err(Error::InvalidInput("seeds, n_init and final_n_init must be positive".into()));
        }
        if !(0.0 < self.shock_lower_pct && self.shock_lower_pct < self.shock_upper_pct && self.shock_upper_pct < 100.0) {
            return Err(Error::InvalidInput("shock percentiles must satisfy 0 < lower < upper < 100".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.silhouette_null_perms == 0 || self.network_null_perms == 0 {
            return Err(Error::InvalidInput("permutation counts must be positive".into()));
        }
        if self.threshold_sweep.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidInput("sweep thresholds must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// The config as written next to the outputs, with a note per field.
    pub fn echo(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        v.as_object_mut()
            .expect("struct serialises to an object")
            .insert("_comment".into(), field_notes());
        Ok(v)
    }

    fn kmeans(&self, n_init: usize) -> KMeansConfig {
        KMeansConfig {
            n_init,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            k_min: self.k_min,
            k_max: self.k_max,
            n_seeds: self.seeds,
            kmeans: self.kmeans(self.n_init),
            master_seed: self.master_seed,
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            tau_max: self.tau_max,
            alpha: self.alpha,
            min_members: self.min_members,
            mean_mode: if self.overlap_means {
                MeanMode::Overlap
            } else {
                MeanMode::FullSeries
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub master_seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub stages: Vec<StageTiming>,
    /// Output file name -> sha256 (config echo and manifest excluded).
    pub outputs: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
}

/// A stage failure; the partial manifest has already been written.
#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}' failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: Error,
}

struct Runner {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl Runner {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.out_dir.join(name), bytes)?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn emit_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.emit(name, to_sorted_json(value)?.as_bytes())
    }

    fn emit_csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.emit(name, &buf)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.manifest
            .summary
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn write_manifest(&self) -> Result<()> {
        std::fs::write(self.out_dir.join("manifest.json"), to_sorted_json(&self.manifest)?)?;
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> std::result::Result<T, PipelineError> {
        log::info!("stage {name}");
        let start = Instant::now();
        let out = f(self);
        self.manifest.stages.push(StageTiming {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out.map_err(|e| {
            self.manifest.status = "failed".into();
            self.manifest.failed_stage = Some(name.to_string());
            self.manifest.error = Some(e.to_string());
            if let Err(w) = self.write_manifest() {
                log::error!("could not write partial manifest: {w}");
            }
            PipelineError {
                stage: name.to_string(),
                source: e,
            }
        })
    }
}

/// Run every stage in order and write all outputs plus `manifest.json`
/// into `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<Manifest, PipelineError> {
    let config_err = |e: Error| PipelineError {
        stage: "config".into(),
        source: e,
    };
    cfg.validate().map_err(config_err)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| config_err(e.into()))?;
    let mut r = Runner {
        out_dir: cfg.out_dir.clone(),
        manifest: Manifest {
            tool: "regime-kit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_NAME.into(),
            master_seed: cfg.master_seed,
            status: "running".into(),
            failed_stage: None,
            error: None,
            stages: Vec::new(),
            outputs: BTreeMap::new(),
            inputs: BTreeMap::new(),
            summary: BTreeMap::new(),
        },
    };
    let echo = cfg.echo().and_then(|v| to_sorted_json(&v)).map_err(config_err)?;
    std::fs::write(cfg.out_dir.join("config.json"), echo).map_err(|e| config_err(e.into()))?;

    let panel: Panel<f64> = r.stage("ingest", |r| {
        if let Some(p) = &cfg.panel {
            r.input(p)?;
            return load_panel_path(p);
        }
        let panel = if let Some(s) = &cfg.synth {
            r.input(s)?;
            let sc: SynthConfig = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(s)?))?;
            let (panel, truth) = generate::<f64>(&sc)?;
            r.emit_json("synth_truth.json", &truth)?;
            panel
        } else {
            let (rp, zp) = (cfg.raster.as_ref().expect("validated"), cfg.zones.as_ref().expect("validated"));
            r.input(rp)?;
            r.input(zp)?;
            let raster = read_raster_path::<f64>(rp)?;
            let zonal = aggregate_zones(&raster, &read_zones_path(zp)?)?;
            r.note("zero_coverage_zones", &zonal.zero_coverage);
            r.note("overlapping_cells", zonal.overlapping_cells);
            zonal.to_panel()?
        };
        r.emit_csv("panel.csv", |b| panel.write_csv(b))?;
        Ok(panel)
    })?;

    let gm = r.stage("growth", |r| {
        let (gm, report) = filter_complete(&compute_growth(&panel))?;
        r.note("n_entities_input", report.n_input);
        r.emit_json("completeness.json", &report)?;
        Ok(gm)
    })?;

    let (gm, scores) = r.stage("embed", |r| {
        let (std, emb) = embed_growth(&gm, cfg.pca_threshold)?;
        if !std.dropped_flat.is_empty() {
            log::warn!("{} flat trajectories excluded from clustering", std.dropped_flat.len());
        }
        r.note("n_components", emb.n_components());
        r.note("n_clustered", std.source_rows.len());
        r.emit_json("embedding.json", &emb)?;
        Ok((gm.select_rows(&std.source_rows), emb.scores))
    })?;

    let selection = r.stage("select_k", |r| {
        let mut sel = cfg.selection();
        let n = scores.nrows();
        if n < 3 {
            return Err(Error::InvalidInput(format!("{n} trajectories are too few to cluster")));
        }
        if sel.k_max > n - 1 {
            log::warn!("k_max {} exceeds N - 1; clipped to {}", sel.k_max, n - 1);
            sel.k_max = n - 1;
            sel.k_min = sel.k_min.min(sel.k_max);
        }
        let rep = select_k(scores.view(), &sel)?;
        r.note("k_star", rep.k_star);
        r.note("best_seed", rep.best_seed);
        r.emit_json("k_selection.json", &rep)?;
        Ok(rep)
    })?;

    let clustering = r.stage("final_fit", |r| {
        let c = final_fit(scores.view(), selection.k_star, selection.best_seed, &cfg.kmeans(cfg.final_n_init))?;
        r.note("silhouette", c.silhouette);
        r.note("cluster_sizes", c.cluster_sizes());
        r.emit_json("clustering.json", &c)?;
        r.emit_csv("labels.csv", |b| write_labels_csv(b, &gm.entities, &c.labels))?;
        Ok(c)
    })?;
    let labels = &clustering.labels;

    let rt = r.stage("regimes", |r| {
        let rt = regime_trajectories(&gm, labels)?;
        r.emit_csv("trajectories.csv", |b| rt.write_trajectories_csv(b))?;
        r.emit_csv("regime_stats.csv", |b| rt.write_stats_csv(b))?;
        Ok(rt)
    })?;

    r.stage("shocks", |r| {
        let shocks = detect_shocks(&rt, cfg.shock_lower_pct, cfg.shock_upper_pct, cfg.percentile_method)?;
        r.note("n_shocks", shocks.shocks.len());
        r.emit_csv("shocks.csv", |b| shocks.write_csv(b))
    })?;

    let net_cfg = cfg.network();
    r.stage("network", |r| {
        let net = build_network(&rt, &net_cfg)?;
        r.note("n_edges", net.edges.len());
        r.emit_json("network.json", &net)?;
        if gm.entities.iter().any(|e| e.location.is_some()) {
            let sd = spatial_decay(&net, &gm.entities, labels)?;
            r.emit_csv("spatial_decay.csv", |b| sd.write_csv(b))?;
        } else {
            log::warn!("no coordinates in the panel; spatial decay skipped");
        }
        Ok(())
    })?;

    r.stage("silhouette_null", |r| {
        let observed = clustering
            .silhouette
            .ok_or_else(|| Error::Degenerate("final clustering has no silhouette".into()))?;
        let ncfg = NullConfig {
            n_permutations: cfg.silhouette_null_perms,
            variance_threshold: cfg.pca_threshold,
            kmeans: cfg.kmeans(cfg.n_init),
            master_seed: cfg.master_seed,
        };
        let rep = null_silhouette(gm.g.view(), selection.k_star, observed, &ncfg)?;
        r.note("silhouette_null_z", rep.z_score);
        r.emit_json("silhouette_null.json", &rep)
    })?;

    r.stage("network_null", |r| {
        let ncfg = NetworkNullConfig {
            n_permutations: cfg.network_null_perms,
            master_seed: cfg.master_seed,
            count_mode: cfg.edge_count_mode,
        };
        let rep = network_null(&rt, &net_cfg, &ncfg)?;
        r.note("network_null_p", rep.p_value);
        r.emit_json("network_null.json", &rep)
    })?;

    r.stage("si", |r| {
        let disp = within_country_dispersion(&gm)?;
        let timing = match &cfg.industrialization {
            Some(p) => {
                r.input(p)?;
                Some(read_industrialization(std::io::BufReader::new(std::fs::File::open(p)?))?)
            }
            None => None,
        };
        r.emit_csv("dispersion.csv", |b| write_dispersion_csv(b, &disp, timing.as_ref()))?;
        if let Some(t) = &timing {
            let ia = industrialization_analysis(&disp, t)?;
            r.emit_json("spearman.json", &ia)?;
        }
        let mut decomp = vec![decompose_growth(&gm, labels, DecompositionMode::EntityMean)?];
        if cfg.panel_decomposition {
            decomp.push(decompose_growth(&gm, labels, DecompositionMode::EntityYear)?);
        }
        r.note("partial_eta_squared", decomp[0].partial_eta_squared);
        r.emit_json("variance_decomposition.json", &decomp)?;
        let heat = regime_country_table(&gm, labels)?;
        r.emit_csv("heatmap.csv", |b| write_heatmap_csv(b, &heat))
    })?;

    if !cfg.threshold_sweep.is_empty() || cfg.income_subsample {
        r.stage("robustness", |r| {
            let mut out = serde_json::Map::new();
            if !cfg.threshold_sweep.is_empty() {
                let sweep = threshold_sweep(&gm, &cfg.threshold_sweep, &cfg.selection(), &cfg.kmeans(cfg.final_n_init))?;
                out.insert("threshold_sweep".into(), serde_json::to_value(&sweep)?);
            }
            if cfg.income_subsample {
                let panel_rows: Vec<usize> = {
                    let ids: BTreeMap<&str, usize> = panel
                        .entities()
                        .iter()
                        .enumerate()
                        .map(|(i, e)| (e.entity_id.as_str(), i))
                        .collect();
                    gm.entities.iter().map(|e| ids[e.entity_id.as_str()]).collect()
                };
                let initial: Vec<f64> = panel_rows.iter().map(|&i| panel.values()[[i, 0]]).collect();
                let sub = initial_level_subsample(
                    &gm,
                    &initial,
                    labels,
                    selection.k_star,
                    cfg.pca_threshold,
                    &cfg.selection(),
                    &cfg.kmeans(cfg.final_n_init),
                )?;
                out.insert("initial_level_subsample".into(), serde_json::to_value(&sub)?);
            }
            r.emit_json("robustness.json", &Value::Object(out))
        })?;
    }

    r.manifest.status = "ok".into();
    r.write_manifest().map_err(|e| PipelineError {
        stage: "manifest".into(),
        source: e,
    })?;
    Ok(r.manifest)
}
