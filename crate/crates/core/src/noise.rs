//! Gaussian noise banks and driving paths.
//!
//! A [`NoiseBank`] holds standard-normal increments for the idiosyncratic
//! noise (indexed `(i, j, k, dim)`) and for the common noise (indexed
//! `(j, k, dim)`). Increments are stored unscaled; call sites multiply by
//! `sqrt(T/p)` so one bank serves every intensity pair `(sigma, epsilon)`.
//!
//! Each particle/realization draws from its own ChaCha8 stream, so a bank
//! is bit-identical whatever the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::grid::TimeGrid;

const COMMON_STREAM_BIT: u64 = 1 << 63;

/// Cache file magic: ASCII `TFPNOISE` read as a little-endian u64.
pub const NOISE_MAGIC: u64 = u64::from_le_bytes(*b"TFPNOISE");
pub const NOISE_VERSION: u64 = 1;
const NOISE_HEADER_WORDS: usize = 7;

/// Dimensions of a bank: `M` particles, `N` common realizations, `p` steps, `d` state dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BankShape {
    pub particles: usize,
    pub realizations: usize,
    pub steps: usize,
    pub dim: usize,
}

impl BankShape {
    pub fn new(particles: usize, realizations: usize, steps: usize, dim: usize) -> Result<Self> {
        if particles == 0 || realizations == 0 || steps == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "noise bank counts must be positive (M={particles}, N={realizations}, p={steps}, d={dim})"
            )));
        }
        let shape = Self { particles, realizations, steps, dim };
        shape.idio_len().ok_or_else(|| Error::invalid("noise bank too large"))?;
        Ok(shape)
    }

    fn idio_len(&self) -> Option<usize> {
        self.particles.checked_mul(self.realizations)?.checked_mul(self.steps)?.checked_mul(self.dim)
    }

    fn common_len(&self) -> Option<usize> {
        self.realizations.checked_mul(self.steps)?.checked_mul(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    seed: u64,
    shape: BankShape,
    idio: Vec<f64>,
    common: Vec<f64>,
    fingerprint: u64,
}

/// Standard-normal increments for `M * N` particles and `N` common paths.
pub fn sample_noise_bank(
    seed: u64,
    particles: usize,
    realizations: usize,
    steps: usize,
    dim: usize,
) -> Result<NoiseBank> {
    let shape = BankShape::new(particles, realizations, steps, dim)?;
    let row = steps * dim;
    let mut idio = vec![0.0; shape.idio_len().unwrap()];
    idio.par_chunks_mut(row).enumerate().for_each(|(flat, chunk)| {
        let (i, j) = (flat / realizations, flat % realizations);
        fill_stream(seed, ((i as u64) << 32) | j as u64, chunk);
    });
    let mut common = vec![0.0; shape.common_len().unwrap()];
    common.par_chunks_mut(row).enumerate().for_each(|(j, chunk)| {
        fill_stream(seed, COMMON_STREAM_BIT | j as u64, chunk);
    });
    Ok(NoiseBank::assemble(seed, shape, idio, common))
}

fn fill_stream(seed: u64, stream: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

impl NoiseBank {
    /// Bank from explicit increments, mainly for tests and hand-built scenarios.
    pub fn from_parts(seed: u64, shape: BankShape, idio: Vec<f64>, common: Vec<f64>) -> Result<Self> {
        let shape = BankShape::new(shape.particles, shape.realizations, shape.steps, shape.dim)?;
        if idio.len() != shape.idio_len().unwrap() || common.len() != shape.common_len().unwrap() {
            return Err(Error::shape(format!(
                "increment arrays have lengths ({}, {}) but shape {:?} needs ({}, {})",
                idio.len(),
                common.len(),
                shape,
                shape.idio_len().unwrap(),
                shape.common_len().unwrap()
            )));
        }
        if idio.iter().chain(&common).any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise increments must be finite"));
        }
        Ok(Self::assemble(seed, shape, idio, common))
    }

    fn assemble(seed: u64, shape: BankShape, idio: Vec<f64>, common: Vec<f64>) -> Self {
        let mut fp = Fingerprinter::new("noise-bank");
        fp.u64(seed)
            .u64(shape.particles as u64)
            .u64(shape.realizations as u64)
            .u64(shape.steps as u64)
            .u64(shape.dim as u64)
            .f64s(&idio)
            .f64s(&common);
        let fingerprint = fp.finish();
        Self { seed, shape, idio, common, fingerprint }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> BankShape {
        self.shape
    }

    pub fn particles(&self) -> usize {
        self.shape.particles
    }

    pub fn realizations(&self) -> usize {
        self.shape.realizations
    }

    pub fn steps(&self) -> usize {
        self.shape.steps
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    /// Content hash; equal banks have equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Common increments of realization `j`, `p * d` values in `(k, dim)` order.
    pub fn common(&self, j: usize) -> &[f64] {
        let row = self.shape.steps * self.shape.dim;
        &self.common[j * row..(j + 1) * row]
    }

    /// Idiosyncratic increments of particle `i` in realization `j`.
    pub fn idio(&self, i: usize, j: usize) -> &[f64] {
        let row = self.shape.steps * self.shape.dim;
        let flat = i * self.shape.realizations + j;
        &self.idio[flat * row..(flat + 1) * row]
    }

    pub fn all_idio(&self) -> &[f64] {
        &self.idio
    }

    pub fn all_common(&self) -> &[f64] {
        &self.common
    }

    /// Checks that the bank matches a time grid.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if grid.steps() != self.shape.steps {
            return Err(Error::shape(format!(
                "grid has {} steps but the noise bank has {}",
                grid.steps(),
                self.shape.steps
            )));
        }
        Ok(())
    }

    /// Serializes to the binary cache layout: a little-endian u64 header
    /// `(magic, version, seed, M, N, p, d)` followed by raw little-endian f64
    /// values, idiosyncratic increments first, then common ones.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (NOISE_HEADER_WORDS + self.idio.len() + self.common.len()));
        for word in [
            NOISE_MAGIC,
            NOISE_VERSION,
            self.seed,
            self.shape.particles as u64,
            self.shape.realizations as u64,
            self.shape.steps as u64,
            self.shape.dim as u64,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for v in self.idio.iter().chain(&self.common) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary cache layout written by [`NoiseBank::encode`].
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut reader = WordReader::new(bytes);
        let magic = reader.u64()?;
        if magic != NOISE_MAGIC {
            return Err(Error::CorruptCache(format!("bad noise bank magic {magic:#018x}")));
        }
        let version = reader.u64()?;
        if version != NOISE_VERSION {
            return Err(Error::CorruptCache(format!("unsupported noise bank version {version}")));
        }
        let seed = reader.u64()?;
        let mut dims = [0usize; 4];
        for slot in dims.iter_mut() {
            *slot =
                usize::try_from(reader.u64()?).map_err(|_| Error::CorruptCache("dimension overflows usize".into()))?;
        }
        let shape =
            BankShape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::CorruptCache(e.to_string()))?;
        let idio_len = shape.idio_len().unwrap();
        let common_len = shape.common_len().unwrap();
        let expected = idio_len
            .checked_add(common_len)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::CorruptCache("payload size overflows".into()))?;
        if reader.remaining() != expected {
            return Err(Error::CorruptCache(format!("payload has {} bytes, expected {expected}", reader.remaining())));
        }
        let idio = reader.f64s(idio_len)?;
        let common = reader.f64s(common_len)?;
        NoiseBank::from_parts(seed, shape, idio, common).map_err(|e| Error::CorruptCache(e.to_string()))
    }
}

/// Little-endian word cursor shared by the binary cache decoders.
pub(crate) struct WordReader<'a> {
    bytes: &'a [u8],
}

impl<'a> WordReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len()
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        if self.bytes.len() < 8 {
            return Err(Error::CorruptCache("truncated header".into()));
        }
        let (head, tail) = self.bytes.split_at(8);
        self.bytes = tail;
        Ok(u64::from_le_bytes(head.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.u64().map(f64::from_bits)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| Error::CorruptCache("length overflow".into()))?;
        if self.bytes.len() < bytes {
            return Err(Error::CorruptCache("truncated payload".into()));
        }
        let (head, tail) = self.bytes.split_at(bytes);
        self.bytes = tail;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// A path sampled at the grid nodes, `values[k]` being a `d`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    dim: usize,
    values: Vec<f64>,
}

impl DrivingPath {
    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) || values.len() < 2 * dim {
            return Err(Error::shape("path needs at least two nodes of dimension d"));
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(Error::invalid("driving paths start at the origin"));
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Brownian path at the nodes built from standard-normal increments:
/// `W_{t_k} = sqrt(T/p) * (Δ_1 + ... + Δ_k)`.
pub fn brownian_nodes(increments: &[f64], dim: usize, grid: &TimeGrid) -> Result<DrivingPath> {
    let p = grid.steps();
    if dim == 0 || increments.len() != p * dim {
        return Err(Error::shape(format!(
            "expected {} increments ({p} steps of dimension {dim}), got {}",
            p * dim,
            increments.len()
        )));
    }
    let scale = grid.dt().sqrt();
    let mut values = vec![0.0; (p + 1) * dim];
    for k in 0..p {
        for c in 0..dim {
            values[(k + 1) * dim + c] = values[k * dim + c] + scale * increments[k * dim + c];
        }
    }
    Ok(DrivingPath { dim, values })
}

/// Piecewise-affine interpolation of a node path; exact at the nodes.
pub fn interpolate_linear(path: &DrivingPath, grid: &TimeGrid, t: f64) -> Result<Vec<f64>> {
    let p = grid.steps();
    if path.steps() != p {
        return Err(Error::shape("path and grid disagree on the step count"));
    }
    if !(0.0..=grid.horizon()).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, {}]", grid.horizon())));
    }
    let nearest = (t / grid.dt()).round() as usize;
    if nearest <= p && grid.node(nearest) == t {
        return Ok(path.at(nearest).to_vec());
    }
    let cell = grid.cell(t);
    let frac = (t - grid.node(cell)) / grid.dt();
    let (lo, hi) = (path.at(cell), path.at(cell + 1));
    Ok(lo.iter().zip(hi).map(|(a, b)| a + frac * (b - a)).collect())
}

/// Adds the drift `(1/eps) * ∫_0^t h_s ds` of a piecewise-constant `h`
/// (`p * d` values, one `d`-vector per cell) to a node path.
pub fn shift_path(path: &DrivingPath, h: &[f64], epsilon: f64, grid: &TimeGrid) -> Result<DrivingPath> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("shift intensity must be positive, got {epsilon}")));
    }
    let (p, dim) = (grid.steps(), path.dim());
    if path.steps() != p || h.len() != p * dim {
        return Err(Error::shape("shift needs one d-vector of drift per grid cell"));
    }
    let rate = grid.dt() / epsilon;
    let mut values = path.values.clone();
    let mut drift = vec![0.0; dim];
    for k in 0..p {
        for c in 0..dim {
            drift[c] += rate * h[k * dim + c];
            values[(k + 1) * dim + c] += drift[c];
        }
    }
    Ok(DrivingPath { dim, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_is_deterministic_in_seed() {
        let a = sample_noise_bank(7, 1, 1, 2, 1).unwrap();
        let b = sample_noise_bank(7, 1, 1, 2, 1).unwrap();
        assert_eq!(a, b);
        let c = sample_noise_bank(8, 1, 1, 2, 1).unwrap();
        assert!(a.all_common().iter().zip(c.all_common()).any(|(x, y)| x != y));
    }

    #[test]
    fn bank_rejects_zero_counts() {
        assert!(sample_noise_bank(1, 0, 1, 1, 1).is_err());
        assert!(sample_noise_bank(1, 1, 0, 1, 1).is_err());
        assert!(sample_noise_bank(1, 1, 1, 0, 1).is_err());
        assert!(sample_noise_bank(1, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn streams_do_not_depend_on_bank_size() {
        let small = sample_noise_bank(3, 2, 3, 4, 2).unwrap();
        let large = sample_noise_bank(3, 5, 9, 4, 2).unwrap();
        assert_eq!(small.common(2), large.common(2));
        assert_eq!(small.idio(1, 2), large.idio(1, 2));
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let d = 1;
        let bank = sample_noise_bank(11, 1, 10_000, 10, d).unwrap();
        let vals = bank.all_common();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 4.0 / ((1e5 * d as f64).sqrt()), "mean {mean}");
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let bank = sample_noise_bank(5, 2, 3, 4, 2).unwrap();
        let bytes = bank.encode();
        assert_eq!(NoiseBank::decode(&bytes).unwrap(), bank);
        assert!(NoiseBank::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(NoiseBank::decode(&bad), Err(Error::CorruptCache(_))));
        let mut nan = bytes;
        let at = 8 * NOISE_HEADER_WORDS;
        nan[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(NoiseBank::decode(&nan).is_err());
    }

    #[test]
    fn brownian_nodes_examples() {
        let grid = TimeGrid::unit(3).unwrap();
        let zero = brownian_nodes(&[0.0; 3], 1, &grid).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));

        let one = TimeGrid::unit(1).unwrap();
        let path = brownian_nodes(&[1.0], 1, &one).unwrap();
        assert_eq!(path.values(), &[0.0, 1.0]);

        assert!(brownian_nodes(&[1.0, 2.0], 1, &grid).is_err());
    }

    #[test]
    fn terminal_variance_matches_horizon() {
        let grid = TimeGrid::unit(4).unwrap();
        let bank = sample_noise_bank(21, 1, 100_000, 4, 1).unwrap();
        let terminal: Vec<f64> =
            (0..bank.realizations()).map(|j| brownian_nodes(bank.common(j), 1, &grid).unwrap().at(4)[0]).collect();
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
        let var = terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / terminal.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn interpolation_examples() {
        let grid = TimeGrid::unit(1).unwrap();
        let path = DrivingPath::from_values(1, vec![0.0, 1.0]).unwrap();
        assert_eq!(interpolate_linear(&path, &grid, 0.5).unwrap(), vec![0.5]);

        let grid = TimeGrid::unit(2).unwrap();
        let (a, b) = (0.3, -1.1);
        let path = DrivingPath::from_values(1, vec![0.0, a, b]).unwrap();
        let v = interpolate_linear(&path, &grid, 0.75).unwrap()[0];
        assert!((v - (a + 0.5 * (b - a))).abs() < 1e-15);
        assert!(interpolate_linear(&path, &grid, 1.5).is_err());
        assert!(interpolate_linear(&path, &grid, -0.1).is_err());
    }

    #[test]
    fn interpolation_is_bitwise_exact_at_nodes() {
        let grid = TimeGrid::new(0.7, 7).unwrap();
        let bank = sample_noise_bank(2, 1, 1, 7, 2).unwrap();
        let path = brownian_nodes(bank.common(0), 2, &grid).unwrap();
        for k in 0..=7 {
            assert_eq!(interpolate_linear(&path, &grid, grid.node(k)).unwrap(), path.at(k));
        }
    }

    #[test]
    fn shift_examples() {
        let grid = TimeGrid::unit(1).unwrap();
        let path = DrivingPath::from_values(1, vec![0.0, 0.0]).unwrap();
        assert_eq!(shift_path(&path, &[2.0], 1.0, &grid).unwrap().values(), &[0.0, 2.0]);
        assert_eq!(shift_path(&path, &[0.0], 1.0, &grid).unwrap(), path);
        assert!(shift_path(&path, &[1.0], 0.0, &grid).is_err());

        let grid = TimeGrid::unit(2).unwrap();
        let path = DrivingPath::from_values(1, vec![0.0; 3]).unwrap();
        assert_eq!(shift_path(&path, &[1.0, 1.0], 0.5, &grid).unwrap().values(), &[0.0, 1.0, 2.0]);
    }
}
