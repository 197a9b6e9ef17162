//! Random network instances: geometry, path loss, Rayleigh fading and the
//! JSON Lines dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::Rng as _;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const DATASET_VERSION: u32 = 1;

/// Maximum number of receiver redraws before placement gives up.
pub const PLACEMENT_RETRIES: usize = 100;

/// Path-loss distances below this value are clamped (far-field model).
pub const MIN_PATHLOSS_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub area_side: f64,
    pub rx_dist_min: f64,
    pub rx_dist_max: f64,
    pub d_pairs: usize,
    pub m_channels: usize,
}

impl GeometryConfig {
    pub fn new(d_pairs: usize, m_channels: usize) -> Self {
        Self {
            area_side: 100.0,
            rx_dist_min: 2.0,
            rx_dist_max: 10.0,
            d_pairs,
            m_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rx_dist_min > 0.0
            && self.rx_dist_min <= self.rx_dist_max
            && self.rx_dist_max < self.area_side;
        if !ok {
            return Err(Error::Config(format!(
                "need 0 < rx_dist_min <= rx_dist_max < area_side, got {} / {} / {}",
                self.rx_dist_min, self.rx_dist_max, self.area_side
            )));
        }
        if self.d_pairs == 0 || self.m_channels == 0 {
            return Err(Error::Config(format!(
                "d_pairs and m_channels must be positive, got D={} M={}",
                self.d_pairs, self.m_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingConfig {
    pub pathloss_intercept_db: f64,
    pub pathloss_exponent_db_per_decade: f64,
    pub noise_power: f64,
    pub p_max: f64,
    pub rayleigh: bool,
}

impl Default for FadingConfig {
    fn default() -> Self {
        Self {
            pathloss_intercept_db: 38.46,
            pathloss_exponent_db_per_decade: 20.0,
            noise_power: 1e-10,
            p_max: 1.0,
            rayleigh: true,
        }
    }
}

impl FadingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::Config(format!(
                "noise_power must be positive, got {}",
                self.noise_power
            )));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::Config(format!(
                "p_max must be positive, got {}",
                self.p_max
            )));
        }
        Ok(())
    }

    /// Path loss in dB at distance `d` meters.
    pub fn pathloss_db(&self, d: f64) -> f64 {
        self.pathloss_intercept_db
            + self.pathloss_exponent_db_per_decade * d.max(MIN_PATHLOSS_DISTANCE).log10()
    }

    /// Linear large-scale power gain at distance `d`.
    pub fn pathloss_gain(&self, d: f64) -> f64 {
        10f64.powf(-self.pathloss_db(d) / 10.0)
    }
}

/// One channel realization of a D-pair, M-channel network.
///
/// `gains` is stored flat with index `(rx * D + tx) * M + m`, i.e. the
/// power gain from transmitter `tx` to receiver `rx` on channel `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub d_pairs: usize,
    pub m_channels: usize,
    pub tx_pos: Vec<[f64; 2]>,
    pub rx_pos: Vec<[f64; 2]>,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub noise_power: f64,
    pub p_max: f64,
    pub seed: u64,
}

impl NetworkInstance {
    #[inline]
    pub fn gain(&self, rx: usize, tx: usize, m: usize) -> f64 {
        self.gains[(rx * self.d_pairs + tx) * self.m_channels + m]
    }

    #[inline]
    pub fn gain_mut(&mut self, rx: usize, tx: usize, m: usize) -> &mut f64 {
        &mut self.gains[(rx * self.d_pairs + tx) * self.m_channels + m]
    }

    /// Channel amplitude |h|.
    #[inline]
    pub fn amp(&self, rx: usize, tx: usize, m: usize) -> f64 {
        self.gain(rx, tx, m).sqrt()
    }

    /// Midpoint of pair `i`'s transmitter and receiver.
    pub fn pair_midpoint(&self, i: usize) -> [f64; 2] {
        let (t, r) = (self.tx_pos[i], self.rx_pos[i]);
        [(t[0] + r[0]) / 2.0, (t[1] + r[1]) / 2.0]
    }

    /// Build an instance from explicit gains; positions default to the origin.
    ///
    /// `gains[rx][tx][m]` nested as in the dataset file.
    pub fn from_gains(
        gains: &[Vec<Vec<f64>>],
        weights: Vec<f64>,
        noise_power: f64,
        p_max: f64,
    ) -> Result<Self> {
        let d = gains.len();
        let m = gains.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let flat = flatten_gains(gains, d, m).map_err(Error::Validation)?;
        let inst = Self {
            d_pairs: d,
            m_channels: m,
            tx_pos: vec![[0.0; 2]; d],
            rx_pos: vec![[0.0; 2]; d],
            gains: flat,
            weights,
            noise_power,
            p_max,
            seed: 0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.d_pairs, self.m_channels);
        if d == 0 || m == 0 {
            return Err(Error::Validation(format!("empty instance D={d} M={m}")));
        }
        if self.gains.len() != d * d * m {
            return Err(Error::Validation(format!(
                "gain tensor has {} entries, expected D*D*M = {}",
                self.gains.len(),
                d * d * m
            )));
        }
        if self.weights.len() != d || self.tx_pos.len() != d || self.rx_pos.len() != d {
            return Err(Error::Validation(format!(
                "per-pair arrays must have length D={d}"
            )));
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Validation("gains must be finite and >= 0".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Validation("weights must be positive".into()));
        }
        if !(self.noise_power > 0.0 && self.p_max > 0.0) {
            return Err(Error::Validation(
                "noise_power and p_max must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Copy of the instance with pairs relabeled: new pair `k` is old pair `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let (d, m) = (self.d_pairs, self.m_channels);
        assert_eq!(perm.len(), d);
        let mut out = self.clone();
        for a in 0..d {
            out.tx_pos[a] = self.tx_pos[perm[a]];
            out.rx_pos[a] = self.rx_pos[perm[a]];
            out.weights[a] = self.weights[perm[a]];
            for b in 0..d {
                for ch in 0..m {
                    *out.gain_mut(a, b, ch) = self.gain(perm[a], perm[b], ch);
                }
            }
        }
        out
    }

    fn nested_gains(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.d_pairs)
            .map(|i| {
                (0..self.d_pairs)
                    .map(|j| (0..self.m_channels).map(|m| self.gain(i, j, m)).collect())
                    .collect()
            })
            .collect()
    }
}

fn flatten_gains(
    nested: &[Vec<Vec<f64>>],
    d: usize,
    m: usize,
) -> std::result::Result<Vec<f64>, String> {
    if nested.len() != d {
        return Err(format!("gains has {} rows, expected D={d}", nested.len()));
    }
    let mut flat = Vec::with_capacity(d * d * m);
    for (i, row) in nested.iter().enumerate() {
        if row.len() != d {
            return Err(format!("gains[{i}] has {} entries, expected D={d}", row.len()));
        }
        for (j, cell) in row.iter().enumerate() {
            if cell.len() != m {
                return Err(format!(
                    "gains[{i}][{j}] has {} channels, expected M={m}",
                    cell.len()
                ));
            }
            flat.extend_from_slice(cell);
        }
    }
    Ok(flat)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Draw one network realization. Deterministic in `(geometry, fading, seed)`.
pub fn sample_instance(
    geometry: &GeometryConfig,
    fading: &FadingConfig,
    seed: u64,
) -> Result<NetworkInstance> {
    geometry.validate()?;
    fading.validate()?;
    let (d, m) = (geometry.d_pairs, geometry.m_channels);
    let side = geometry.area_side;
    let mut rng = rng_from_seed(seed);

    let tx_pos: Vec<[f64; 2]> = (0..d)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side])
        .collect();

    let mut rx_pos = Vec::with_capacity(d);
    for (i, t) in tx_pos.iter().enumerate() {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let r = rng.gen_range(geometry.rx_dist_min..=geometry.rx_dist_max);
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let p = [t[0] + r * theta.cos(), t[1] + r * theta.sin()];
            if (0.0..=side).contains(&p[0]) && (0.0..=side).contains(&p[1]) {
                placed = Some(p);
                break;
            }
        }
        rx_pos.push(placed.ok_or(Error::Placement {
            pair: i,
            attempts: PLACEMENT_RETRIES,
        })?);
    }

    let mut gains = Vec::with_capacity(d * d * m);
    for rx in &rx_pos {
        for tx in &tx_pos {
            let pl = fading.pathloss_gain(dist(*tx, *rx));
            for _ in 0..m {
                let fade: f64 = if fading.rayleigh {
                    rng.sample(Exp1)
                } else {
                    1.0
                };
                // Exp1 can return exactly 0; keep every gain strictly positive.
                gains.push(pl * fade.max(f64::MIN_POSITIVE));
            }
        }
    }

    Ok(NetworkInstance {
        d_pairs: d,
        m_channels: m,
        tx_pos,
        rx_pos,
        gains,
        weights: vec![1.0; d],
        noise_power: fading.noise_power,
        p_max: fading.p_max,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<NetworkInstance>,
    pub geometry: GeometryConfig,
    pub fading: FadingConfig,
    pub master_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Split off the trailing `n` instances.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let at = self.instances.len().saturating_sub(n);
        let tail = self.instances.split_off(at);
        let rest = Dataset {
            instances: tail,
            ..self.clone()
        };
        (self, rest)
    }
}

/// Generate `n` instances whose seeds are derived from `(master_seed, index)`.
pub fn generate_dataset(
    geometry: &GeometryConfig,
    fading: &FadingConfig,
    n: usize,
    master_seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let instances = (0..n as u64)
        .map(|k| sample_instance(geometry, fading, derive_seed(master_seed, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        instances,
        geometry: *geometry,
        fading: *fading,
        master_seed,
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    version: u32,
    geometry: GeometryConfig,
    fading: FadingConfig,
    master_seed: u64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct InstanceLine {
    seed: u64,
    tx: Vec<[f64; 2]>,
    rx: Vec<[f64; 2]>,
    gains: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Write a dataset as JSON Lines (gzip-compressed when the path ends in `.gz`).
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out: Box<dyn Write> = if is_gzip(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    let header = HeaderLine {
        version: DATASET_VERSION,
        geometry: ds.geometry,
        fading: ds.fading,
        master_seed: ds.master_seed,
        n: ds.instances.len(),
    };
    write_json_line(&mut out, &header, path)?;
    for inst in &ds.instances {
        let line = InstanceLine {
            seed: inst.seed,
            tx: inst.tx_pos.clone(),
            rx: inst.rx_pos.clone(),
            gains: inst.nested_gains(),
            weights: inst.weights.clone(),
        };
        write_json_line(&mut out, &line, path)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_json_line<T: Serialize>(out: &mut dyn Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Read a dataset written by [`save_dataset`]. Any defect fails the whole load.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = BufReader::new(reader).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: HeaderLine =
        serde_json::from_str(&first).map_err(|e| parse_err(1, format!("header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported version {}", header.version),
        ));
    }
    header.geometry.validate()?;
    header.fading.validate()?;
    let (d, m) = (header.geometry.d_pairs, header.geometry.m_channels);

    let mut instances = Vec::with_capacity(header.n);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceLine =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let gains = flatten_gains(&rec.gains, d, m).map_err(|msg| {
            Error::Validation(format!("{}:{lineno}: {msg}", path.display()))
        })?;
        let inst = NetworkInstance {
            d_pairs: d,
            m_channels: m,
            tx_pos: rec.tx,
            rx_pos: rec.rx,
            gains,
            weights: rec.weights,
            noise_power: header.fading.noise_power,
            p_max: header.fading.p_max,
            seed: rec.seed,
        };
        inst.validate().map_err(|e| {
            Error::Validation(format!("{}:{lineno}: {e}", path.display()))
        })?;
        instances.push(inst);
    }
    if instances.len() != header.n {
        return Err(parse_err(
            instances.len() + 2,
            format!(
                "truncated: header declares {} instances, found {}",
                header.n,
                instances.len()
            ),
        ));
    }
    Ok(Dataset {
        instances,
        geometry: header.geometry,
        fading: header.fading,
        master_seed: header.master_seed,
    })
}
