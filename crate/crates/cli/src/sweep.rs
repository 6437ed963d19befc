//! Cartesian hyperparameter sweeps: one artifact subdirectory per grid
//! point, processed by a worker pool, summarized into one CSV.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use whlab_core::autoencoder::{checkpoint, train};
use whlab_core::evaluate::{bler_curve, curve_to_csv, threshold_snr};
use whlab_core::fmt::format_sig;
use whlab_core::powermodel::model_power;
use whlab_core::rng::derive_seed;

use crate::config::{Config, ConfigError, SWEEPABLE_KEYS};
use crate::{write_atomic, CliError};

struct Point {
    index: usize,
    name: String,
    varied: Vec<(String, String)>,
    pairs: BTreeMap<String, String>,
}

struct Row {
    index: usize,
    name: String,
    varied: Vec<(String, String)>,
    threshold_db: Option<f64>,
    ops: u64,
    params: u64,
    ee_bit_per_joule: f64,
}

/// Expands comma-separated values of the sweepable keys into the cartesian
/// product of grid points.
fn expand(base: &Config, master_seed: u64) -> Result<Vec<Point>, ConfigError> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for &key in SWEEPABLE_KEYS {
        if let Some(raw) = base.pairs().get(key) {
            if raw.contains(',') {
                let values: Vec<String> =
                    raw.split(',').map(|v| v.trim().to_string()).collect();
                if values.iter().any(String::is_empty) {
                    return Err(ConfigError(format!("empty value in sweep list {key}")));
                }
                axes.push((key.to_string(), values));
            }
        }
    }
    // Any non-sweepable key holding a list is a config error.
    for (key, value) in base.pairs() {
        if value.contains(',') && !SWEEPABLE_KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!(
                "key {key} does not support sweep lists"
            )));
        }
    }

    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        let mut grown = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for value in values {
                let mut next = combo.clone();
                next.push((key.clone(), value.clone()));
                grown.push(next);
            }
        }
        combos = grown;
    }

    Ok(combos
        .into_iter()
        .enumerate()
        .map(|(index, varied)| {
            let mut pairs = base.pairs().clone();
            for (key, value) in &varied {
                pairs.insert(key.clone(), value.clone());
            }
            // Per-point seed stream derived from the master seed.
            pairs.insert(
                "seed".to_string(),
                derive_seed(master_seed, index as u64).to_string(),
            );
            let name = if varied.is_empty() {
                "point0".to_string()
            } else {
                varied
                    .iter()
                    .map(|(key, value)| {
                        let short = key.rsplit('.').next().unwrap_or(key);
                        format!("{short}{}", value.replace('.', "p"))
                    })
                    .collect::<Vec<_>>()
                    .join("_")
            };
            Point {
                index,
                name,
                varied,
                pairs,
            }
        })
        .collect())
}

fn run_point(point: &Point, root: &Path) -> Result<Row, CliError> {
    let cfg = Config::from_pairs(point.pairs.clone())?;
    let dir = root.join(&point.name);
    std::fs::create_dir_all(&dir)?;

    let model_cfg = cfg.model_config()?;
    let tcfg = cfg.train_config()?;
    let (mut model, log) = train(&model_cfg, &tcfg)?;
    write_atomic(&dir.join("checkpoint.txt"), &checkpoint::save_string(&model))?;
    write_atomic(&dir.join("train_log.csv"), &log.to_csv())?;

    let seed = cfg.seed()?;
    let grid = cfg.snr_grid()?;
    let stop = cfg.stop_rule()?;
    let metadata = BTreeMap::from([
        ("model".to_string(), point.name.clone()),
        ("n".to_string(), model.cfg.n.to_string()),
        ("k".to_string(), model.cfg.k.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    let curve = bler_curve(&mut model, &grid, &stop, seed, metadata)?;
    write_atomic(&dir.join("bler.csv"), &curve_to_csv(&curve))?;

    // An unbracketed target is data (the grid missed the crossing), not an
    // error that should abort the sweep.
    let threshold_db = threshold_snr(&curve, cfg.target_bler()?).ok();

    let power = model_power(&model_cfg, cfg.converter_kind()?, &cfg.power_config()?)?;
    write_atomic(&dir.join("power.csv"), &power.to_csv())?;
    write_atomic(&dir.join("resolved.cfg"), &cfg.resolved_echo("sweep-point"))?;

    let complexity = whlab_core::powermodel::model_complexity(&model_cfg)?;
    Ok(Row {
        index: point.index,
        name: point.name.clone(),
        varied: point.varied.clone(),
        threshold_db,
        ops: complexity.total_ops,
        params: complexity.total_params,
        ee_bit_per_joule: power.ee_bit_per_joule,
    })
}

pub fn run_sweep(config_path: &Path, jobs: usize, out_dir: &Path) -> Result<(), CliError> {
    let base = Config::from_file(config_path)?;
    let master_seed: u64 = base
        .raw("seed")
        .unwrap_or("1")
        .parse()
        .map_err(|_| ConfigError("bad value for seed".to_string()))?;
    let points = expand(&base, master_seed)?;
    std::fs::create_dir_all(out_dir)?;

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Row>> = Mutex::new(Vec::with_capacity(points.len()));
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let jobs = jobs.max(1).min(points.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= points.len() || failure.lock().unwrap().is_some() {
                    return;
                }
                match run_point(&points[idx], out_dir) {
                    Ok(row) => rows.lock().unwrap().push(row),
                    Err(e) => {
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        return;
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|r| r.index);

    let varied_keys: Vec<String> = rows
        .first()
        .map(|r| r.varied.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut summary = String::from("point");
    for key in &varied_keys {
        summary.push(',');
        summary.push_str(key);
    }
    summary.push_str(",threshold_snr_db,ops,params,ee_bit_per_joule\n");
    for row in &rows {
        summary.push_str(&row.name);
        for (_, value) in &row.varied {
            summary.push(',');
            summary.push_str(value);
        }
        let th = match row.threshold_db {
            Some(v) => format_sig(v, 12),
            None => "nan".to_string(),
        };
        summary.push_str(&format!(
            ",{th},{},{},{}\n",
            row.ops,
            row.params,
            format_sig(row.ee_bit_per_joule, 12)
        ));
    }
    write_atomic(&out_dir.join("summary.csv"), &summary)?;
    write_atomic(&out_dir.join("resolved.cfg"), &base.raw_echo("sweep"))?;
    Ok(())
}
