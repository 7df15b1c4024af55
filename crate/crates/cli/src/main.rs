use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use regime_kit::cluster::{final_fit, null_silhouette, select_k, KMeansConfig, NullConfig, SelectionConfig};
use regime_kit::embed::embed_growth;
use regime_kit::io::{read_labels_csv, write_labels_csv, write_sorted_json};
use regime_kit::panel::{compute_growth, filter_complete, load_panel_path};
use regime_kit::pipeline::{run_pipeline, PipelineError, RunConfig};
use regime_kit::propagation::{
    build_network, network_null, spatial_decay, EdgeCountMode, MeanMode, NetworkConfig, NetworkNullConfig,
};
use regime_kit::regimes::{detect_shocks, regime_trajectories, PercentileMethod};
use regime_kit::robustness::threshold_sweep;
use regime_kit::stats::{
    decompose_growth, industrialization_analysis, read_industrialization, regime_country_table,
    within_country_dispersion, write_dispersion_csv, write_heatmap_csv, DecompositionMode,
};
use regime_kit::synth::{generate, SynthConfig};
use regime_kit::zonal::{aggregate_zones, read_raster_path, read_zones_path};
use regime_kit::{Error, GrowthMatrix, Panel};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "regime-kit", version, about = "Growth regimes, shocks and propagation networks for entity panels")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "REGIME_KIT_THREADS")]
    threads: Option<usize>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a long-format panel and write it as CSV or JSON.
    Ingest {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sum raster cells into polygon zones.
    Zonal {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coverage and overlap diagnostics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Standardise trajectories and fit PCA.
    Embed {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value_t = 0.80)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Re-cluster at each threshold and report pairwise ARI.
        #[arg(long, value_delimiter = ',')]
        threshold_sweep: Vec<f64>,
        /// Where to write the sweep report.
        #[arg(long, default_value = "threshold_sweep.json")]
        sweep_out: PathBuf,
        #[command(flatten)]
        sel: SelectArgs,
    },
    /// Select k, refit and run the silhouette permutation null.
    Cluster {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value_t = 0.80)]
        threshold: f64,
        #[command(flatten)]
        sel: SelectArgs,
        #[arg(long, default_value_t = 50)]
        null_perms: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Regime mean trajectories, volatility and shock years.
    Regimes {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        lower_pct: f64,
        #[arg(long, default_value_t = 98.0)]
        upper_pct: f64,
        #[arg(long, default_value = "linear")]
        percentile_method: PercentileMethod,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Lagged-correlation network, roles, null and spatial decay.
    Network {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 3)]
        tau_max: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        min_members: usize,
        #[arg(long, default_value_t = 10_000)]
        null_perms: usize,
        #[arg(long)]
        overlap_means: bool,
        #[arg(long, default_value = "ordered")]
        edge_count_mode: EdgeCountMode,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Within-country dispersion, industrialization correlation and the
    /// country-versus-regime decomposition.
    Si {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        industrialization: Option<PathBuf>,
        /// Also fit the entity x year model with year effects.
        #[arg(long)]
        panel_mode: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic panel with planted regimes.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Full pipeline from a JSON config; flags override config values.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long)]
        raster: Option<PathBuf>,
        #[arg(long)]
        zones: Option<PathBuf>,
        #[arg(long)]
        industrialization: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        master_seed: Option<u64>,
        #[arg(long)]
        null_perms: Option<usize>,
        #[arg(long)]
        network_null_perms: Option<usize>,
    },
}

#[derive(Args, Clone, Copy)]
struct SelectArgs {
    #[arg(long, default_value_t = 3)]
    k_min: usize,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    #[arg(long, default_value_t = 20)]
    final_n_init: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
}

impl SelectArgs {
    fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            k_min: self.k_min,
            k_max: self.k_max,
            n_seeds: self.seeds,
            kmeans: KMeansConfig::default().with_n_init(self.n_init),
            master_seed: self.master_seed,
        }
    }

    fn final_kmeans(&self) -> KMeansConfig {
        KMeansConfig::default().with_n_init(self.final_n_init)
    }
}

fn growth(panel: &Panel) -> anyhow::Result<GrowthMatrix> {
    let (gm, report) = filter_complete(&compute_growth(panel))?;
    if !report.dropped_ids.is_empty() {
        log::warn!(
            "{} of {} entities have incomplete trajectories and are excluded",
            report.dropped_ids.len(),
            report.n_input
        );
    }
    Ok(gm)
}

/// Complete trajectories of the labelled entities, aligned with their labels.
fn labelled_growth(panel_path: &Path, labels_path: &Path) -> anyhow::Result<(GrowthMatrix, Vec<usize>)> {
    let panel = load_panel_path::<f64>(panel_path)?;
    let gm = growth(&panel)?;
    let file = std::fs::File::open(labels_path).with_context(|| format!("opening {}", labels_path.display()))?;
    let table: HashMap<String, usize> = read_labels_csv(file)?.into_iter().collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, e) in gm.entities.iter().enumerate() {
        match table.get(&e.entity_id) {
            Some(&l) => {
                rows.push(i);
                labels.push(l);
            }
            None => log::warn!("entity '{}' has no label; skipped", e.entity_id),
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no labelled entity has a complete trajectory".into()).into());
    }
    Ok((gm.select_rows(&rows), labels))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_with<F>(path: &Path, f: F) -> anyhow::Result<()>
where
    F: FnOnce(std::io::BufWriter<std::fs::File>) -> regime_kit::Result<()>,
{
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(std::io::BufWriter::new(file))?;
    Ok(())
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Ingest { panel, out } => {
            let p = load_panel_path::<f64>(&panel)?;
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
                write_sorted_json(&out, &p)?;
            } else {
                write_with(&out, |w| p.write_csv(w))?;
            }
            println!(
                "{} entities x {} years ({}..{}), {} missing cells",
                p.n_entities(),
                p.n_years(),
                p.years()[0],
                p.years()[p.n_years() - 1],
                p.n_missing()
            );
        }
        Command::Zonal {
            raster,
            zones,
            out,
            report,
        } => {
            let r = read_raster_path::<f64>(&raster)?;
            let z = read_zones_path(&zones)?;
            let zp = aggregate_zones(&r, &z)?;
            write_with(&out, |w| zp.to_panel()?.write_csv(w))?;
            if let Some(rp) = report {
                write_sorted_json(
                    &rp,
                    &serde_json::json!({
                        "zone_ids": zp.zone_ids,
                        "cell_counts": zp.cell_counts,
                        "zero_coverage": zp.zero_coverage,
                        "overlapping_cells": zp.overlapping_cells,
                    }),
                )?;
            }
        }
        Command::Embed {
            panel,
            threshold,
            out,
            threshold_sweep: sweep,
            sweep_out,
            sel,
        } => {
            let gm = growth(&load_panel_path::<f64>(&panel)?)?;
            let (_, emb) = embed_growth(&gm, threshold)?;
            write_sorted_json(&out, &emb)?;
            println!("{} components explain {:.4} of the variance", emb.n_components(), emb.cumulative_ratio());
            if !sweep.is_empty() {
                let rep = threshold_sweep(&gm, &sweep, &sel.selection(), &sel.final_kmeans())?;
                write_sorted_json(&sweep_out, &rep)?;
                println!("threshold sweep: minimum pairwise ARI {:.4}", rep.min_ari);
            }
        }
        Command::Cluster {
            panel,
            threshold,
            sel,
            null_perms,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let gm = growth(&load_panel_path::<f64>(&panel)?)?;
            let (std, emb) = embed_growth(&gm, threshold)?;
            let gm = gm.select_rows(&std.source_rows);
            let rep = select_k(emb.scores.view(), &sel.selection())?;
            let c = final_fit(emb.scores.view(), rep.k_star, rep.best_seed, &sel.final_kmeans())?;
            write_sorted_json(&out_dir.join("k_selection.json"), &rep)?;
            write_sorted_json(&out_dir.join("clustering.json"), &c)?;
            write_with(&out_dir.join("labels.csv"), |w| write_labels_csv(w, &gm.entities, &c.labels))?;
            let observed = c
                .silhouette
                .ok_or_else(|| Error::Degenerate("final clustering has no silhouette".into()))?;
            let ncfg = NullConfig {
                n_permutations: null_perms,
                variance_threshold: threshold,
                kmeans: sel.selection().kmeans,
                master_seed: sel.master_seed,
            };
            let null = null_silhouette(gm.g.view(), rep.k_star, observed, &ncfg)?;
            write_sorted_json(&out_dir.join("silhouette_null.json"), &null)?;
            println!(
                "k* = {} (silhouette {:.4}); null mean {:.4} sd {:.4}",
                rep.k_star, observed, null.null_mean, null.null_sd
            );
        }
        Command::Regimes {
            panel,
            labels,
            lower_pct,
            upper_pct,
            percentile_method,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let (gm, labels) = labelled_growth(&panel, &labels)?;
            let rt = regime_trajectories(&gm, &labels)?;
            let shocks = detect_shocks(&rt, lower_pct, upper_pct, percentile_method)?;
            write_with(&out_dir.join("trajectories.csv"), |w| rt.write_trajectories_csv(w))?;
            write_with(&out_dir.join("regime_stats.csv"), |w| rt.write_stats_csv(w))?;
            write_with(&out_dir.join("shocks.csv"), |w| shocks.write_csv(w))?;
        }
        Command::Network {
            panel,
            labels,
            tau_max,
            alpha,
            min_members,
            null_perms,
            overlap_means,
            edge_count_mode,
            master_seed,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let (gm, labels) = labelled_growth(&panel, &labels)?;
            let rt = regime_trajectories(&gm, &labels)?;
            let cfg = NetworkConfig {
                tau_max,
                alpha,
                min_members,
                mean_mode: if overlap_means {
                    MeanMode::Overlap
                } else {
                    MeanMode::FullSeries
                },
            };
            let net = build_network(&rt, &cfg)?;
            write_sorted_json(&out_dir.join("network.json"), &net)?;
            if gm.entities.iter().any(|e| e.location.is_some()) {
                let sd = spatial_decay(&net, &gm.entities, &labels)?;
                write_with(&out_dir.join("spatial_decay.csv"), |w| sd.write_csv(w))?;
            }
            let null = network_null(
                &rt,
                &cfg,
                &NetworkNullConfig {
                    n_permutations: null_perms,
                    master_seed,
                    count_mode: edge_count_mode,
                },
            )?;
            write_sorted_json(&out_dir.join("network_null.json"), &null)?;
            println!(
                "{} edges; null mean {:.2} sd {:.2}; p = {:.4}",
                null.observed, null.null_mean, null.null_sd, null.p_value
            );
        }
        Command::Si {
            panel,
            labels,
            industrialization,
            panel_mode,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let (gm, labels) = labelled_growth(&panel, &labels)?;
            let disp = within_country_dispersion(&gm)?;
            let timing = match &industrialization {
                Some(p) => Some(read_industrialization(std::fs::File::open(p)?)?),
                None => None,
            };
            write_with(&out_dir.join("dispersion.csv"), |w| write_dispersion_csv(w, &disp, timing.as_ref()))?;
            if let Some(t) = &timing {
                write_sorted_json(&out_dir.join("spearman.json"), &industrialization_analysis(&disp, t)?)?;
            }
            let mut decomp = vec![decompose_growth(&gm, &labels, DecompositionMode::EntityMean)?];
            if panel_mode {
                decomp.push(decompose_growth(&gm, &labels, DecompositionMode::EntityYear)?);
            }
            write_sorted_json(&out_dir.join("variance_decomposition.json"), &decomp)?;
            let heat = regime_country_table(&gm, &labels)?;
            write_with(&out_dir.join("heatmap.csv"), |w| write_heatmap_csv(w, &heat))?;
        }
        Command::Synth { config, out, truth } => {
            let file = std::fs::File::open(&config).with_context(|| format!("opening {}", config.display()))?;
            let cfg: SynthConfig = serde_json::from_reader(std::io::BufReader::new(file)).map_err(Error::from)?;
            let (panel, t) = generate::<f64>(&cfg)?;
            write_with(&out, |w| panel.write_csv(w))?;
            if let Some(tp) = truth {
                write_sorted_json(&tp, &t)?;
            }
        }
        Command::Run {
            config,
            panel,
            synth,
            raster,
            zones,
            industrialization,
            out_dir,
            master_seed,
            null_perms,
            network_null_perms,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if panel.is_some() || synth.is_some() || raster.is_some() {
                cfg.panel = panel;
                cfg.synth = synth;
                cfg.raster = raster;
                cfg.zones = zones;
            }
            cfg.industrialization = industrialization.or(cfg.industrialization);
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if let Some(s) = master_seed {
                cfg.master_seed = s;
            }
            if let Some(n) = null_perms {
                cfg.silhouette_null_perms = n;
            }
            if let Some(n) = network_null_perms {
                cfg.network_null_perms = n;
            }
            let m = run_pipeline(&cfg)?;
            println!(
                "k* = {}; {} outputs written to {}",
                m.summary.get("k_star").map(|v| v.to_string()).unwrap_or_default(),
                m.outputs.len(),
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return if e.source.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        }
    }
    EXIT_INPUT
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = (|| -> anyhow::Result<()> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                bail!(Error::InvalidInput("--threads must be at least 1".into()));
            }
            builder = builder.num_threads(n);
        }
        let pool = builder.build().context("building the thread pool")?;
        pool.install(|| execute(cli.command))
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
