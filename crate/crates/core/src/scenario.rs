//! Multicell geometry, user drops and channel generation.
//!
//! Base stations sit at the centers of hexagonal cells. Users are dropped
//! uniformly inside their serving hexagon, subject to a minimum distance to
//! every base station. Large-scale gains follow a log-distance model anchored
//! at the free-space loss of a reference distance, with lognormal shadowing
//! drawn independently per link. Small-scale fading is i.i.d. Rayleigh.
//!
//! Channels are divided by the thermal noise power so the receiver noise is
//! exactly `CN(0, I)` in every downstream formula.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{db_to_linear, Error, Result, C64};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
const MAX_DROP_ATTEMPTS: usize = 1_000_000;
const DUMP_FORMAT: &str = "qcomp-scenario";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Terrain categories of the Erceg suburban pathloss model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerrainCategory {
    /// Hilly, moderate-to-heavy tree density.
    A,
    /// Intermediate.
    B,
    /// Flat, light tree density.
    C,
}

/// Log-distance pathloss parameters.
///
/// The exponent is `a - b * bs_height + c / bs_height`, and the intercept is
/// the free-space loss at `reference_distance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossParams {
    /// Reference distance in meters.
    pub reference_distance: f64,
    /// Base station height in meters.
    pub bs_height: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PathlossParams {
    pub fn erceg(category: TerrainCategory, bs_height: f64) -> Self {
        let (a, b, c) = match category {
            TerrainCategory::A => (4.6, 0.0075, 12.6),
            TerrainCategory::B => (4.0, 0.0065, 17.1),
            TerrainCategory::C => (3.6, 0.005, 20.0),
        };
        Self {
            reference_distance: 100.0,
            bs_height,
            a,
            b,
            c,
        }
    }

    /// Pathloss exponent.
    pub fn exponent(&self) -> f64 {
        self.a - self.b * self.bs_height + self.c / self.bs_height
    }
}

impl Default for PathlossParams {
    fn default() -> Self {
        Self::erceg(TerrainCategory::B, 30.0)
    }
}

/// Network geometry and radio parameters for one Monte-Carlo drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_cells: usize,
    pub n_users_per_cell: usize,
    pub n_bs_antennas: usize,
    /// Distance between adjacent base stations, meters.
    pub inter_site_distance: f64,
    /// Minimum distance between any user and any base station, meters.
    pub min_user_bs_distance: f64,
    /// Hz.
    pub carrier_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// dB.
    pub noise_figure: f64,
    /// Standard deviation of the lognormal shadowing, dB.
    pub shadowing_std: f64,
    pub pathloss: PathlossParams,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_cells: 2,
            n_users_per_cell: 2,
            n_bs_antennas: 16,
            inter_site_distance: 2000.0,
            min_user_bs_distance: 100.0,
            carrier_frequency: 2.4e9,
            bandwidth: 10e6,
            noise_figure: 5.0,
            shadowing_std: 8.7,
            pathloss: PathlossParams::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.n_cells, 1 | 2 | 7) {
            return Err(Error::Config(format!(
                "n_cells must be 1, 2 or 7, got {}",
                self.n_cells
            )));
        }
        if self.n_users_per_cell == 0 || self.n_bs_antennas == 0 {
            return Err(Error::Config("user and antenna counts must be at least 1".into()));
        }
        if !(self.min_user_bs_distance >= 0.0) || !(self.inter_site_distance > 2.0 * self.min_user_bs_distance) {
            return Err(Error::Config(format!(
                "inter_site_distance ({}) must exceed twice min_user_bs_distance ({})",
                self.inter_site_distance, self.min_user_bs_distance
            )));
        }
        let positive = [
            ("carrier_frequency", self.carrier_frequency),
            ("bandwidth", self.bandwidth),
            ("pathloss.reference_distance", self.pathloss.reference_distance),
            ("pathloss.bs_height", self.pathloss.bs_height),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.shadowing_std >= 0.0 && self.noise_figure.is_finite()) {
            return Err(Error::Config(
                "shadowing_std must be nonnegative and noise_figure finite".into(),
            ));
        }
        Ok(())
    }

    pub fn n_users_total(&self) -> usize {
        self.n_cells * self.n_users_per_cell
    }

    /// Receiver noise power over the bandwidth including the noise figure.
    pub fn noise_power_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth.log10() + self.noise_figure
    }

    pub fn noise_power_mw(&self) -> f64 {
        db_to_linear(self.noise_power_dbm())
    }

    /// Converts a power on the unit-noise scale to dBm.
    pub fn to_dbm(&self, unit_noise_power: f64) -> f64 {
        self.noise_power_dbm() + 10.0 * unit_noise_power.log10()
    }
}

/// Base station positions for the supported layouts.
///
/// Two cells sit side by side on the x axis; seven cells form a center cell
/// with a ring of six neighbors at 60 degree spacing.
pub fn generate_layout(config: &NetworkConfig) -> Result<Vec<Point>> {
    let d = config.inter_site_distance;
    match config.n_cells {
        1 => Ok(vec![Point::ORIGIN]),
        2 => Ok(vec![Point::ORIGIN, Point::new(d, 0.0)]),
        7 => {
            let mut layout = vec![Point::ORIGIN];
            layout.extend((0..6).map(|k| {
                let theta = std::f64::consts::FRAC_PI_3 * k as f64;
                Point::new(d * theta.cos(), d * theta.sin())
            }));
            Ok(layout)
        }
        n => Err(Error::Config(format!("unsupported number of cells: {n}"))),
    }
}

/// Whether `p` (relative to the cell center) lies in a hexagon whose flat
/// sides face the neighbors at angles 0, 60, ..., 300 degrees.
fn in_hexagon(dx: f64, dy: f64, apothem: f64) -> bool {
    (0..3).all(|k| {
        let theta = std::f64::consts::FRAC_PI_3 * k as f64;
        (dx * theta.cos() + dy * theta.sin()).abs() <= apothem
    })
}

/// Drops `n_users_per_cell` users uniformly inside each serving hexagon by
/// rejection sampling, keeping at least `min_user_bs_distance` from every base
/// station.
pub fn drop_users<R: Rng + ?Sized>(layout: &[Point], config: &NetworkConfig, rng: &mut R) -> Result<Vec<Vec<Point>>> {
    let apothem = config.inter_site_distance / 2.0;
    let circumradius = config.inter_site_distance / 3f64.sqrt();
    let mut users = Vec::with_capacity(layout.len());
    for (cell, center) in layout.iter().enumerate() {
        let mut cell_users = Vec::with_capacity(config.n_users_per_cell);
        for _ in 0..config.n_users_per_cell {
            let mut placed = None;
            for _ in 0..MAX_DROP_ATTEMPTS {
                let dx = rng.random_range(-apothem..=apothem);
                let dy = rng.random_range(-circumradius..=circumradius);
                if !in_hexagon(dx, dy, apothem) {
                    continue;
                }
                let p = Point::new(center.x + dx, center.y + dy);
                if layout.iter().all(|bs| bs.distance(&p) >= config.min_user_bs_distance) {
                    placed = Some(p);
                    break;
                }
            }
            let p = placed.ok_or_else(|| {
                Error::Generation(format!(
                    "could not place a user in cell {cell} after {MAX_DROP_ATTEMPTS} attempts"
                ))
            })?;
            cell_users.push(p);
        }
        users.push(cell_users);
    }
    Ok(users)
}

pub fn free_space_loss_db(distance: f64, carrier_frequency: f64) -> f64 {
    let wavelength = SPEED_OF_LIGHT / carrier_frequency;
    20.0 * (4.0 * std::f64::consts::PI * distance / wavelength).log10()
}

/// Large-scale channel gain in dB (negative pathloss plus shadowing).
///
/// Distances below the reference distance are clamped to it.
pub fn channel_gain_db(distance: f64, config: &NetworkConfig, shadow_db: f64) -> f64 {
    let d0 = config.pathloss.reference_distance;
    let d = distance.max(d0);
    let pl0 = free_space_loss_db(d0, config.carrier_frequency);
    -(pl0 + 10.0 * config.pathloss.exponent() * (d / d0).log10()) + shadow_db
}

/// One Rayleigh-faded link: `sqrt(gain) * g` with `g ~ CN(0, I)`.
///
/// Entries are drawn sequentially, so a shorter array is a prefix of a longer
/// one drawn from the same stream.
pub fn rayleigh_link<R: Rng + ?Sized>(gain: f64, n_antennas: usize, rng: &mut R) -> DVector<C64> {
    let amp = (gain / 2.0).sqrt();
    DVector::from_iterator(
        n_antennas,
        (0..n_antennas).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(amp * re, amp * im)
        }),
    )
}

/// Geometry plus noise-normalized channels for one drop.
///
/// `channels[i]` is `H_i = [H_{i,1}, ..., H_{i,Nc}]`, the `N_b x (N_c N_u)`
/// matrix of channels from every user to base station `i`. Column
/// `j * N_u + u` is `h_{i,j,u}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkScenario {
    pub config: NetworkConfig,
    pub bs_positions: Vec<Point>,
    pub user_positions: Vec<Vec<Point>>,
    channels: Vec<DMatrix<C64>>,
}

/// Generates a full scenario from `rng`.
///
/// Geometry, shadowing and fading use independent substreams, and fading is
/// drawn per link, so changing `n_bs_antennas` keeps the drop and shadowing
/// and extends each link's fading vector.
pub fn generate_channels<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<NetworkScenario> {
    config.validate()?;
    let geometry_seed = rng.next_u64();
    let shadow_seed = rng.next_u64();
    let fading_seed = rng.next_u64();

    let layout = generate_layout(config)?;
    let users = drop_users(&layout, config, &mut ChaCha8Rng::seed_from_u64(geometry_seed))?;

    let mut shadow_rng = ChaCha8Rng::seed_from_u64(shadow_seed);
    let shadow = Normal::new(0.0, config.shadowing_std).map_err(|e| Error::Config(format!("shadowing: {e}")))?;
    let noise_mw = config.noise_power_mw();
    let (nc, nu, nb) = (config.n_cells, config.n_users_per_cell, config.n_bs_antennas);

    let mut channels = Vec::with_capacity(nc);
    for (i, bs) in layout.iter().enumerate() {
        let mut h_i = DMatrix::<C64>::zeros(nb, nc * nu);
        for (j, cell_users) in users.iter().enumerate() {
            for (u, user) in cell_users.iter().enumerate() {
                let link = (i * nc + j) * nu + u;
                let shadow_db = shadow.sample(&mut shadow_rng);
                let gain_db = channel_gain_db(bs.distance(user), config, shadow_db);
                let mut fading_rng = ChaCha8Rng::seed_from_u64(fading_seed);
                fading_rng.set_stream(link as u64);
                let h = rayleigh_link(db_to_linear(gain_db) / noise_mw, nb, &mut fading_rng);
                h_i.set_column(j * nu + u, &h);
            }
        }
        channels.push(h_i);
    }

    Ok(NetworkScenario {
        config: config.clone(),
        bs_positions: layout,
        user_positions: users,
        channels,
    })
}

impl NetworkScenario {
    /// Deterministic scenario for `config.seed`.
    pub fn generate(config: &NetworkConfig) -> Result<Self> {
        generate_channels(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
    }

    /// Builds a scenario from explicit per-BS channel matrices
    /// (`N_b x (N_c N_u)` each), with placeholder geometry.
    pub fn from_channels(n_users_per_cell: usize, channels: Vec<DMatrix<C64>>) -> Result<Self> {
        let nc = channels.len();
        if nc == 0 || n_users_per_cell == 0 {
            return Err(Error::Dimension("need at least one cell and one user".into()));
        }
        let nb = channels[0].nrows();
        for (i, h) in channels.iter().enumerate() {
            if h.nrows() != nb || h.ncols() != nc * n_users_per_cell {
                return Err(Error::Dimension(format!(
                    "channel matrix of BS {i} is {}x{}, expected {nb}x{}",
                    h.nrows(),
                    h.ncols(),
                    nc * n_users_per_cell
                )));
            }
            if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite channel entry at BS {i}")));
            }
        }
        let config = NetworkConfig {
            n_cells: nc,
            n_users_per_cell,
            n_bs_antennas: nb,
            ..NetworkConfig::default()
        };
        Ok(Self {
            config,
            bs_positions: vec![Point::ORIGIN; nc],
            user_positions: vec![vec![Point::ORIGIN; n_users_per_cell]; nc],
            channels,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.channels.len()
    }

    pub fn n_users_per_cell(&self) -> usize {
        self.config.n_users_per_cell
    }

    pub fn n_users_total(&self) -> usize {
        self.n_cells() * self.n_users_per_cell()
    }

    pub fn n_bs_antennas(&self) -> usize {
        self.channels[0].nrows()
    }

    /// Flat index of user `u` in cell `cell`.
    pub fn user_index(&self, cell: usize, user: usize) -> usize {
        cell * self.n_users_per_cell() + user
    }

    /// `(cell, user)` of a flat index.
    pub fn user_of(&self, index: usize) -> (usize, usize) {
        (index / self.n_users_per_cell(), index % self.n_users_per_cell())
    }

    /// `H_i`: channels from every user to base station `bs`.
    pub fn bs_channels(&self, bs: usize) -> &DMatrix<C64> {
        &self.channels[bs]
    }

    /// `H_{i,j}`: channels from the users of cell `cell` to base station `bs`.
    pub fn channel(&self, bs: usize, cell: usize) -> DMatrixView<'_, C64> {
        let nu = self.n_users_per_cell();
        self.channels[bs].columns(cell * nu, nu)
    }

    /// `h_{i,j,u}`.
    pub fn h(&self, bs: usize, cell: usize, user: usize) -> DVectorView<'_, C64> {
        self.channels[bs].column(self.user_index(cell, user))
    }

    pub fn to_json(&self) -> Result<String> {
        let dump = ScenarioDump {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            config: self.config.clone(),
            bs_positions: self.bs_positions.clone(),
            user_positions: self.user_positions.clone(),
            channels: self
                .channels
                .iter()
                .map(|h| ChannelDump {
                    rows: h.nrows(),
                    cols: h.ncols(),
                    re: h.iter().map(|v| v.re).collect(),
                    im: h.iter().map(|v| v.im).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let dump: ScenarioDump = serde_json::from_str(json)?;
        if dump.format != DUMP_FORMAT || dump.version != DUMP_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported scenario dump {} v{}",
                dump.format, dump.version
            )));
        }
        let channels = dump
            .channels
            .into_iter()
            .map(|c| {
                if c.re.len() != c.rows * c.cols || c.im.len() != c.rows * c.cols {
                    return Err(Error::Dimension("channel payload length".into()));
                }
                Ok(DMatrix::from_iterator(
                    c.rows,
                    c.cols,
                    c.re.iter().zip(&c.im).map(|(&re, &im)| C64::new(re, im)),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scenario = Self::from_channels(dump.config.n_users_per_cell, channels)?;
        if scenario.n_cells() != dump.config.n_cells || scenario.n_bs_antennas() != dump.config.n_bs_antennas {
            return Err(Error::Dimension("dump config disagrees with channel shapes".into()));
        }
        scenario.config = dump.config;
        scenario.bs_positions = dump.bs_positions;
        scenario.user_positions = dump.user_positions;
        Ok(scenario)
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioDump {
    format: String,
    version: u32,
    config: NetworkConfig,
    bs_positions: Vec<Point>,
    user_positions: Vec<Vec<Point>>,
    channels: Vec<ChannelDump>,
}

/// Column-major real and imaginary parts of one `H_i`.
#[derive(Serialize, Deserialize)]
struct ChannelDump {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn config(n_cells: usize) -> NetworkConfig {
        NetworkConfig {
            n_cells,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn layouts() {
        assert_eq!(generate_layout(&config(1)).unwrap(), vec![Point::ORIGIN]);
        assert_eq!(
            generate_layout(&config(2)).unwrap(),
            vec![Point::ORIGIN, Point::new(2000.0, 0.0)]
        );
        let seven = generate_layout(&config(7)).unwrap();
        assert_eq!(seven.len(), 7);
        for k in 1..7 {
            assert!((seven[0].distance(&seven[k]) - 2000.0).abs() < 1e-9);
            // ring neighbours are adjacent to each other as well
            let next = if k == 6 { 1 } else { k + 1 };
            assert!((seven[k].distance(&seven[next]) - 2000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unsupported_cell_count() {
        assert!(matches!(generate_layout(&config(3)), Err(Error::Config(_))));
        assert!(config(4).validate().is_err());
        let bad = NetworkConfig {
            min_user_bs_distance: 1000.0,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_power_is_minus_99_dbm() {
        assert!((NetworkConfig::default().noise_power_dbm() + 99.0).abs() < 1e-12);
    }

    #[test]
    fn min_distance_holds_over_many_drops() {
        let cfg = NetworkConfig {
            n_cells: 7,
            n_users_per_cell: 100,
            ..NetworkConfig::default()
        };
        let layout = generate_layout(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut min = f64::INFINITY;
        let mut drops = 0;
        let mut served_by_nearest = 0;
        while drops < 10_000 {
            let users = drop_users(&layout, &cfg, &mut rng).unwrap();
            for (cell, cell_users) in users.iter().enumerate() {
                for p in cell_users {
                    drops += 1;
                    let dists: Vec<f64> = layout.iter().map(|b| b.distance(p)).collect();
                    min = dists.iter().copied().fold(min, f64::min);
                    let nearest = (0..layout.len())
                        .min_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                        .unwrap();
                    if nearest == cell {
                        served_by_nearest += 1;
                    }
                }
            }
        }
        assert!(min >= 100.0);
        assert!(served_by_nearest as f64 >= 0.99 * drops as f64);
    }

    #[test]
    fn thin_annulus_when_min_distance_near_inradius() {
        let cfg = NetworkConfig {
            n_cells: 1,
            n_users_per_cell: 500,
            min_user_bs_distance: 990.0,
            ..NetworkConfig::default()
        };
        let layout = generate_layout(&cfg).unwrap();
        let users = drop_users(&layout, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let circumradius = 2000.0 / 3f64.sqrt();
        for p in &users[0] {
            let d = p.distance(&Point::ORIGIN);
            assert!((990.0..=circumradius + 1e-9).contains(&d), "{d}");
        }
    }

    #[test]
    fn drops_are_deterministic() {
        let cfg = config(7);
        let layout = generate_layout(&cfg).unwrap();
        let a = drop_users(&layout, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = drop_users(&layout, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gain_anchor_and_slope() {
        let cfg = NetworkConfig::default();
        let pl0 = free_space_loss_db(100.0, 2.4e9);
        assert!((channel_gain_db(100.0, &cfg, 0.0) + pl0).abs() < 1e-12);
        let slope = channel_gain_db(400.0, &cfg, 0.0) - channel_gain_db(200.0, &cfg, 0.0);
        let expected = -10.0 * cfg.pathloss.exponent() * 2f64.log10();
        assert!((slope - expected).abs() < 1e-12);
        // clamped below the reference distance
        assert_eq!(channel_gain_db(10.0, &cfg, 0.0), channel_gain_db(100.0, &cfg, 0.0));
        assert_eq!(channel_gain_db(100.0, &cfg, 3.5), -pl0 + 3.5);
    }

    #[test]
    fn category_b_exponent() {
        let p = PathlossParams::default();
        assert!((p.exponent() - (4.0 - 0.0065 * 30.0 + 17.1 / 30.0)).abs() < 1e-15);
    }

    #[test]
    fn shadowing_std_matches_config() {
        let cfg = NetworkConfig {
            n_cells: 7,
            n_users_per_cell: 10,
            n_bs_antennas: 1,
            ..NetworkConfig::default()
        };
        // recover the shadowing samples from the large-scale gains
        let mut samples = Vec::new();
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let _ = rng.next_u64();
            let mut shadow_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let normal = Normal::new(0.0, cfg.shadowing_std).unwrap();
            samples.extend((0..cfg.n_cells * cfg.n_users_total()).map(|_| normal.sample(&mut shadow_rng)));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 8.7).abs() < 0.05 * 8.7, "{std}");
    }

    #[test]
    fn unit_gain_link_variance() {
        let cfg = NetworkConfig::default();
        let noise = cfg.noise_power_mw();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = rayleigh_link(db_to_linear(0.0) / noise, 200_000, &mut rng);
        let var = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len() as f64;
        assert!((var * noise - 1.0).abs() < 0.01, "{}", var * noise);
    }

    #[test]
    fn link_power_matches_large_scale_gain() {
        // Monte-Carlo oracle: E|h|^2 = g / sigma^2 for the configured geometry.
        let cfg = NetworkConfig::default();
        let g = db_to_linear(channel_gain_db(500.0, &cfg, 0.0)) / cfg.noise_power_mw();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = rayleigh_link(g, 100_000, &mut rng);
        let mean = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len() as f64;
        assert!((mean / g - 1.0).abs() < 0.02);
    }

    #[test]
    fn generation_is_deterministic_and_finite() {
        let cfg = NetworkConfig {
            n_cells: 7,
            n_users_per_cell: 3,
            n_bs_antennas: 4,
            seed: 42,
            ..NetworkConfig::default()
        };
        let a = NetworkScenario::generate(&cfg).unwrap();
        let b = NetworkScenario::generate(&cfg).unwrap();
        assert_eq!(a, b);
        for i in 0..7 {
            assert_eq!(a.bs_channels(i).shape(), (4, 21));
            assert!(a.bs_channels(i).iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        }
        assert_eq!(a.h(2, 5, 1), a.bs_channels(2).column(16));
        assert_eq!(a.channel(3, 4).column(2), a.h(3, 4, 2));
    }

    #[test]
    fn more_antennas_extend_the_same_drop() {
        let small = NetworkConfig {
            n_bs_antennas: 4,
            seed: 8,
            ..NetworkConfig::default()
        };
        let large = NetworkConfig {
            n_bs_antennas: 9,
            ..small.clone()
        };
        let a = NetworkScenario::generate(&small).unwrap();
        let b = NetworkScenario::generate(&large).unwrap();
        assert_eq!(a.user_positions, b.user_positions);
        for i in 0..2 {
            assert_eq!(a.bs_channels(i), &b.bs_channels(i).rows(0, 4).into_owned());
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = NetworkConfig {
            seed: 2,
            n_bs_antennas: 3,
            ..NetworkConfig::default()
        };
        let s = NetworkScenario::generate(&cfg).unwrap();
        let back = NetworkScenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        assert!(NetworkScenario::from_json("{\"format\":\"x\"}").is_err());
    }
}
