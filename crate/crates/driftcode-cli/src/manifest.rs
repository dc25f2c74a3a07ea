//! Sweep manifests: a scheme file, a list of operating points, and an
//! output CSV. Completed points are identified by a configuration hash in
//! a JSON sidecar and skipped on resume; every row is regenerable from the
//! sidecar entry and its seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use driftcode::error::Error;
use driftcode::eval::{config_hash, AirEstimate, FerStats, ResultRow, CSV_HEADER};
use driftcode::pipeline::{DecodeMode, Scheme, SchemeFile};
use driftcode::seeds;

#[derive(Clone, Debug, Deserialize)]
pub struct Manifest {
    /// Scheme file path, relative to the manifest.
    pub config: PathBuf,
    /// Output CSV path, relative to the manifest.
    pub out: PathBuf,
    pub master_seed: u64,
    #[serde(default = "default_max_frames")]
    pub max_frames: u64,
    #[serde(default = "default_target_errors")]
    pub target_errors: u64,
    /// Frames per AIR point.
    #[serde(default = "default_air_frames")]
    pub frames: u64,
    pub sweep: Vec<SweepPoint>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_max_frames() -> u64 {
    100_000
}
fn default_target_errors() -> u64 {
    100
}
fn default_air_frames() -> u64 {
    2_000
}

/// One operating point: `p` sets `p_i = p_d = p` (the scheme file's `p_s`
/// is kept); reads/mode/turbo override the scheme file when present.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<DecodeMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turbo: Option<usize>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        if m.sweep.is_empty() {
            return Err(Error::Config("manifest sweep is empty".into()));
        }
        m.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(m)
    }

    fn out_path(&self) -> PathBuf {
        self.base_dir.join(&self.out)
    }

    fn sidecar_path(&self) -> PathBuf {
        let mut p = self.out_path().into_os_string();
        p.push(".sidecar.json");
        PathBuf::from(p)
    }

    /// Scheme file with one sweep point's overrides applied.
    fn point_file(&self, point: &SweepPoint) -> Result<SchemeFile, Error> {
        let mut file = SchemeFile::read(&self.base_dir.join(&self.config))?;
        file.channel.p_i = point.p;
        file.channel.p_d = point.p;
        if let Some(reads) = point.reads {
            file.decoder.reads = reads;
        }
        if let Some(mode) = point.mode {
            file.decoder.mode = mode;
        }
        if let Some(turbo) = point.turbo {
            file.decoder.turbo = turbo;
        }
        Ok(file)
    }
}

/// Result of one sweep point.
pub enum PointResult {
    Fer(FerStats),
    Air(AirEstimate),
}

/// Sidecar entry: everything needed to regenerate one CSV row.
#[derive(Serialize, Deserialize)]
struct SidecarEntry {
    kind: String,
    seed: u64,
    scheme: SchemeFile,
    point: SweepPoint,
}

/// Runs every sweep point not already present in the sidecar, appending a
/// CSV row (and flushing) after each. `kind` distinguishes FER and AIR
/// rows in the hash so the two sweeps can share an output file.
pub fn run_sweep(
    manifest: &Manifest,
    kind: &str,
    mut eval: impl FnMut(&Scheme, u64) -> Result<PointResult, Error>,
) -> Result<(), Error> {
    let out_path = manifest.out_path();
    if let Some(dir) = out_path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let sidecar_path = manifest.sidecar_path();
    let mut sidecar: BTreeMap<String, SidecarEntry> = match std::fs::read(&sidecar_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("sidecar {}: {e}", sidecar_path.display())))?,
        Err(_) => BTreeMap::new(),
    };

    let mut csv = std::fs::OpenOptions::new().create(true).append(true).open(&out_path)?;
    if csv.metadata()?.len() == 0 {
        writeln!(csv, "{CSV_HEADER}")?;
        csv.flush()?;
    }

    for (index, point) in manifest.sweep.iter().enumerate() {
        let seed = seeds::derive(manifest.master_seed, index as u64);
        let file = manifest.point_file(point)?;
        let entry = SidecarEntry {
            kind: kind.to_string(),
            seed,
            scheme: file.clone(),
            point: point.clone(),
        };
        let hash = config_hash(&entry);
        if sidecar.contains_key(&hash) {
            eprintln!("skip {kind} point {index} (p = {}): already in sidecar", point.p);
            continue;
        }
        let config = file.resolve(&manifest.base_dir)?;
        let (reads, mode, turbo) = (config.reads, config.mode, config.turbo);
        let (p_i, p_d, p_s) = (config.channel.p_i, config.channel.p_d, config.channel.p_s);
        let scheme = Scheme::build(config)?;
        eprintln!(
            "run {kind} point {index}: p = {} M = {reads} mode = {mode} turbo = {turbo}",
            point.p
        );
        let row = match eval(&scheme, seed)? {
            PointResult::Fer(stats) => {
                let (ci_lo, ci_hi) = stats.ci95();
                ResultRow {
                    p_i,
                    p_d,
                    p_s,
                    reads,
                    mode,
                    turbo,
                    frames: stats.frames,
                    errors: stats.errors,
                    fer: Some(stats.fer()),
                    ci_lo: Some(ci_lo),
                    ci_hi: Some(ci_hi),
                    air: None,
                    air_se: None,
                    seed,
                }
            }
            PointResult::Air(air) => ResultRow {
                p_i,
                p_d,
                p_s,
                reads,
                mode,
                turbo,
                frames: air.frames_used,
                errors: air.undecodable,
                fer: None,
                ci_lo: None,
                ci_hi: None,
                air: Some(air.bits_per_channel_symbol),
                air_se: Some(air.std_error),
                seed,
            },
        };
        writeln!(csv, "{}", row.to_csv_line())?;
        csv.flush()?;
        sidecar.insert(hash, entry);
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).expect("serializes"))?;
    }
    Ok(())
}
