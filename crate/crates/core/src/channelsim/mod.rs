//! Synthetic multipath scene: deterministic position-to-paths mapping,
//! channel assembly as a sum of rank-one path terms, unitary beamspace
//! transform, and channel normalization.
//!
//! The scene stands in for a full ray tracer: the base station sits at the
//! origin, a fixed seeded ring of virtual scatterers provides NLOS paths,
//! and every path parameter is a pure function of (position, scene seed).
//! Path phases evolve on a spatial scale of `radius / 2` rather than the
//! carrier wavelength so the position-to-channel map stays learnable from
//! desk-scale sample counts.

pub mod cmat;

pub use cmat::CMat;

use crate::error::{Error, Result};
use crate::rng::mix;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

/// UE position in meters; the base station is at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Position {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Position { x1, x2, x3 }
    }

    pub fn range(&self) -> f64 {
        (self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3).sqrt()
    }

    pub fn dist(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (
            self.x1 - other.x1,
            self.x2 - other.x2,
            self.x3 - other.x3,
        );
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Antenna array layout. UPA response is the Kronecker product of the
/// azimuth and elevation uniform linear arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrayGeometry {
    Ula(usize),
    Upa(usize, usize),
}

impl ArrayGeometry {
    pub fn elements(&self) -> usize {
        match *self {
            ArrayGeometry::Ula(n) => n,
            ArrayGeometry::Upa(a, b) => a * b,
        }
    }
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
}

/// All paths behind one channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub los_index: usize,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn los(&self) -> &Path {
        &self.paths[self.los_index]
    }
}

/// Spatial-domain channel, receive-by-transmit.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix(pub CMat);

/// Beamspace image of a [`ChannelMatrix`] under the unitary DFT transform.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamspaceChannel(pub CMat);

impl BeamspaceChannel {
    pub fn n_r(&self) -> usize {
        self.0.rows()
    }

    pub fn n_t(&self) -> usize {
        self.0.cols()
    }
}

/// Channel normalization applied before storage or training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Frobenius norm scaled to `sqrt(n_t * n_r)`.
    Frobenius,
    /// Largest entry magnitude scaled to 1 (visualization).
    Peak,
}

const N_SCATTERERS: usize = 16;

/// Angular half-width of the served sector.
pub const SECTOR_HALF_ANGLE: f64 = PI / 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub tx_geometry: ArrayGeometry,
    pub rx_geometry: ArrayGeometry,
    /// Scene radius in meters; positions must lie within it.
    pub radius_m: f64,
    pub l_max: usize,
    pub wavelength_m: f64,
    /// LOS-to-NLOS amplitude dominance factor (> 1).
    pub k_rician: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        // 28 GHz, 32x1 ULA at the BS, 4x1 ULA at the UE, 100 m cell.
        SceneConfig {
            tx_geometry: ArrayGeometry::Ula(32),
            rx_geometry: ArrayGeometry::Ula(4),
            radius_m: 100.0,
            l_max: 6,
            wavelength_m: 0.0107,
            k_rician: 4.0,
            seed: 1,
        }
    }
}

impl SceneConfig {
    pub fn n_t(&self) -> usize {
        self.tx_geometry.elements()
    }

    pub fn n_r(&self) -> usize {
        self.rx_geometry.elements()
    }

    pub fn validate(&self) -> Result<()> {
        for n in [self.n_t(), self.n_r()] {
            if n == 0 || !n.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "antenna counts must be powers of two, got {n}"
                )));
            }
        }
        if self.k_rician <= 1.0 {
            return Err(Error::InvalidArgument(
                "k_rician must exceed 1".to_string(),
            ));
        }
        if self.l_max < 3 {
            return Err(Error::InvalidArgument("l_max must be at least 3".to_string()));
        }
        if self.radius_m <= 0.0 || self.wavelength_m <= 0.0 {
            return Err(Error::InvalidArgument(
                "radius and wavelength must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Spatial scale of path-phase evolution; see the module docs. Path
    /// phases wrap a handful of times across the scene, slow enough that a
    /// thousand-sample dataset resolves the phase field.
    fn phase_scale(&self) -> f64 {
        self.radius_m / 2.0
    }

    /// Stable digest of every field, stored in dataset files.
    pub fn content_hash(&self) -> u64 {
        let mut h = mix(self.seed);
        let mut feed = |v: u64| h = mix(h ^ v);
        match self.tx_geometry {
            ArrayGeometry::Ula(n) => feed(n as u64),
            ArrayGeometry::Upa(a, b) => feed(0x8000_0000_0000_0000 | ((a as u64) << 32) | b as u64),
        }
        match self.rx_geometry {
            ArrayGeometry::Ula(n) => feed(n as u64),
            ArrayGeometry::Upa(a, b) => feed(0x8000_0000_0000_0000 | ((a as u64) << 32) | b as u64),
        }
        feed(self.radius_m.to_bits());
        feed(self.l_max as u64);
        feed(self.wavelength_m.to_bits());
        feed(self.k_rician.to_bits());
        h
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on PI through rounding
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Unit float in [0, 1) from a hash value.
fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Clone, Copy)]
struct Scatterer {
    x: f64,
    y: f64,
    z: f64,
    reflectivity: f64,
    phase_offset: f64,
}

fn scatterers(cfg: &SceneConfig) -> Vec<Scatterer> {
    (0..N_SCATTERERS)
        .map(|s| {
            let u = |k: u64| unit_from_hash(mix(cfg.seed ^ mix(s as u64 * 8 + k)));
            let bearing = (2.0 * u(1) - 1.0) * (SECTOR_HALF_ANGLE + 0.26);
            let radius = cfg.radius_m * (0.35 + 0.4 * u(2));
            Scatterer {
                x: radius * bearing.cos(),
                y: radius * bearing.sin(),
                z: 3.0 + 12.0 * u(3),
                reflectivity: 0.08 + 0.22 * u(4),
                phase_offset: 2.0 * PI * u(5),
            }
        })
        .collect()
}

fn position_hash(pos: &Position, seed: u64) -> u64 {
    let mut h = mix(seed ^ 0x70_61_74_68);
    for v in [pos.x1, pos.x2, pos.x3] {
        h = mix(h ^ v.to_bits());
    }
    h
}

/// Deterministic position-to-paths mapping for the synthetic scene.
///
/// The LOS path follows base-station/UE geometry; NLOS paths bounce off the
/// nearest of the scene's fixed virtual scatterers. The number of paths is
/// drawn from the position hash in `[3, l_max]`. NLOS amplitudes are capped
/// at `los_amplitude / k_rician` so the LOS path strictly dominates.
pub fn sample_paths(pos: &Position, cfg: &SceneConfig) -> Result<PathSet> {
    if pos.range() > cfg.radius_m || pos.x3 <= 0.0 {
        return Err(Error::OutsideScene(pos.x1, pos.x2, pos.x3));
    }
    let d_los = pos.range().max(1.0);
    let rho = (pos.x1 * pos.x1 + pos.x2 * pos.x2).sqrt();

    let amp_scale = cfg.wavelength_m / (4.0 * PI);
    let los_amp = amp_scale / d_los * cfg.radius_m;
    let los_phase = 2.0 * PI * d_los / cfg.phase_scale();
    let los = Path {
        gain: Complex64::from_polar(los_amp, wrap_angle(los_phase)),
        aod_az: wrap_angle(pos.x2.atan2(pos.x1)),
        aod_el: wrap_angle(pos.x3.atan2(rho)),
        aoa_az: wrap_angle((-pos.x2).atan2(-pos.x1)),
        aoa_el: wrap_angle((-pos.x3).atan2(rho)),
    };

    let h = position_hash(pos, cfg.seed);
    let n_paths = 3 + (h % (cfg.l_max as u64 - 2)) as usize;

    // nearest scatterers to the UE keep the NLOS geometry spatially coherent
    let all = scatterers(cfg);
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| {
        let da = dist_to(pos, &all[a]);
        let db = dist_to(pos, &all[b]);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });

    let mut paths = vec![los];
    for &si in order.iter().take(n_paths - 1) {
        let s = &all[si];
        let d1 = (s.x * s.x + s.y * s.y + s.z * s.z).sqrt();
        let d2 = dist_to(pos, s);
        let total = d1 + d2;
        // margin absorbs the ulp-level error of from_polar + norm round-trips
        let cap = los_amp / cfg.k_rician * (1.0 - 1e-12);
        let amp = (los_amp * s.reflectivity * d_los / total).min(cap);
        let phase = s.phase_offset + 2.0 * PI * total / cfg.phase_scale();
        paths.push(Path {
            gain: Complex64::from_polar(amp, wrap_angle(phase)),
            aod_az: wrap_angle(s.y.atan2(s.x)),
            aod_el: wrap_angle(s.z.atan2((s.x * s.x + s.y * s.y).sqrt())),
            aoa_az: wrap_angle((s.y - pos.x2).atan2(s.x - pos.x1)),
            aoa_el: wrap_angle((s.z - pos.x3).atan2(horiz_dist(pos, s))),
        });
    }
    Ok(PathSet {
        paths,
        los_index: 0,
    })
}

fn dist_to(pos: &Position, s: &Scatterer) -> f64 {
    let (dx, dy, dz) = (s.x - pos.x1, s.y - pos.x2, s.z - pos.x3);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn horiz_dist(pos: &Position, s: &Scatterer) -> f64 {
    let (dx, dy) = (s.x - pos.x1, s.y - pos.x2);
    (dx * dx + dy * dy).sqrt()
}

/// Array response vector; unit norm. ULA element `k` has phase
/// `2π (d/λ) k sin(az)` with half-wavelength spacing; UPA is the Kronecker
/// product of the azimuth and elevation ULAs.
pub fn steering_vector(az: f64, el: f64, geometry: ArrayGeometry) -> Vec<Complex64> {
    match geometry {
        ArrayGeometry::Ula(n) => ula_steering(az, n),
        ArrayGeometry::Upa(na, nb) => {
            let a = ula_steering(az, na);
            let b = ula_steering(el, nb);
            kron_vec(&a, &b)
        }
    }
}

fn ula_steering(angle: f64, n: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| Complex64::from_polar(scale, PI * k as f64 * angle.sin()))
        .collect()
}

fn kron_vec(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &av in a {
        for &bv in b {
            out.push(av * bv);
        }
    }
    out
}

/// Channel as the finite sum of rank-one path terms
/// `gain * a_r(aoa) a_t(aod)^H`.
pub fn assemble_channel(paths: &PathSet, cfg: &SceneConfig) -> ChannelMatrix {
    let mut h = CMat::zeros(cfg.n_r(), cfg.n_t());
    for p in &paths.paths {
        let a_r = steering_vector(p.aoa_az, p.aoa_el, cfg.rx_geometry);
        let a_t = steering_vector(p.aod_az, p.aod_el, cfg.tx_geometry);
        h.add_assign(&CMat::outer(p.gain, &a_r, &a_t));
    }
    ChannelMatrix(h)
}

/// Unitary DFT-grid matrix for the geometry: a plain DFT for a ULA and the
/// Kronecker product of per-axis DFTs for a UPA. `A[k][m] = e^{+j2πkm/n}/√n`.
pub fn dft_matrix(geometry: ArrayGeometry) -> CMat {
    match geometry {
        ArrayGeometry::Ula(n) => dft_ula(n),
        ArrayGeometry::Upa(na, nb) => kron_mat(&dft_ula(na), &dft_ula(nb)),
    }
}

fn dft_ula(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    let mut a = CMat::zeros(n, n);
    for k in 0..n {
        for m in 0..n {
            let phase = 2.0 * PI * (k * m) as f64 / n as f64;
            a.set(k, m, Complex64::from_polar(scale, phase));
        }
    }
    a
}

fn kron_mat(x: &CMat, y: &CMat) -> CMat {
    let (rx, cx, ry, cy) = (x.rows(), x.cols(), y.rows(), y.cols());
    let mut out = CMat::zeros(rx * ry, cx * cy);
    for i1 in 0..rx {
        for j1 in 0..cx {
            let v = x.get(i1, j1);
            for i2 in 0..ry {
                for j2 in 0..cy {
                    out.set(i1 * ry + i2, j1 * cy + j2, v * y.get(i2, j2));
                }
            }
        }
    }
    out
}

/// `H_v = A_r^H H A_t` with unitary DFT matrices on both sides.
pub fn to_beamspace(h: &ChannelMatrix, rx: ArrayGeometry, tx: ArrayGeometry) -> BeamspaceChannel {
    let a_r = dft_matrix(rx);
    let a_t = dft_matrix(tx);
    let hv = a_r
        .hermitian()
        .matmul(&h.0)
        .and_then(|m| m.matmul(&a_t))
        .expect("square DFT factors match channel dims");
    BeamspaceChannel(hv)
}

/// Inverse of [`to_beamspace`]: `H = A_r H_v A_t^H`.
pub fn from_beamspace(hv: &BeamspaceChannel, rx: ArrayGeometry, tx: ArrayGeometry) -> ChannelMatrix {
    let a_r = dft_matrix(rx);
    let a_t = dft_matrix(tx);
    let h = a_r
        .matmul(&hv.0)
        .and_then(|m| m.matmul(&a_t.hermitian()))
        .expect("square DFT factors match channel dims");
    ChannelMatrix(h)
}

/// Rescale a beamspace channel to the requested normalization.
pub fn normalize(hv: &BeamspaceChannel, mode: NormMode) -> Result<BeamspaceChannel> {
    let scale = match mode {
        NormMode::Frobenius => {
            let norm = hv.0.frob_norm();
            if norm == 0.0 {
                return Err(Error::InvalidArgument("cannot normalize zero matrix".into()));
            }
            ((hv.n_t() * hv.n_r()) as f64).sqrt() / norm
        }
        NormMode::Peak => {
            let peak = hv.0.max_abs();
            if peak == 0.0 {
                return Err(Error::InvalidArgument("cannot normalize zero matrix".into()));
            }
            1.0 / peak
        }
    };
    Ok(BeamspaceChannel(hv.0.scale(Complex64::new(scale, 0.0))))
}

/// Full pipeline from position to normalized beamspace channel.
pub fn channel_at(pos: &Position, cfg: &SceneConfig, mode: NormMode) -> Result<BeamspaceChannel> {
    let paths = sample_paths(pos, cfg)?;
    let h = assemble_channel(&paths, cfg);
    let hv = to_beamspace(&h, cfg.rx_geometry, cfg.tx_geometry);
    normalize(&hv, mode)
}

/// Uniform position inside the served sector: bearing over the sector,
/// area-uniform range in [0.05 R, R], height in [1, 2] m.
pub fn sample_position(cfg: &SceneConfig, rng: &mut impl Rng) -> Position {
    let bearing = rng.gen_range(-SECTOR_HALF_ANGLE..SECTOR_HALF_ANGLE);
    let u: f64 = rng.gen_range(0.0025..1.0);
    let height = rng.gen_range(1.0..2.0);
    // keep the full 3-d range inside the scene radius
    let r_max = (cfg.radius_m * cfg.radius_m - height * height).sqrt();
    let r = r_max * u.sqrt();
    Position::new(r * bearing.cos(), r * bearing.sin(), height)
}
