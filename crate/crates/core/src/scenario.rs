//! Scenario configuration, deployment geometry and seeded random streams.
//!
//! Everything physical about a run lives in [`ScenarioConfig`]. Powers are
//! configured in dBm and converted to watts once; all arithmetic downstream
//! works in linear units.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid_arg, Error, Result};

/// Thermal noise floor at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Users are spread over `[0, STRIP_SPACINGS * spacing]` along x.
pub const STRIP_SPACINGS: f64 = 5.0;

/// Convert a power level in dBm to watts.
pub fn dbm_to_watt(level: f64) -> Result<f64> {
    if !level.is_finite() {
        return Err(invalid_arg(format!("power level {level} dBm is not finite")));
    }
    Ok(10f64.powf((level - 30.0) / 10.0))
}

/// Convert watts to dBm.
pub fn watt_to_dbm(watt: f64) -> Result<f64> {
    if !(watt.is_finite() && watt > 0.0) {
        return Err(invalid_arg(format!("power {watt} W must be positive and finite")));
    }
    Ok(10.0 * watt.log10() + 30.0)
}

/// Noise power in dBm over `bandwidth_hz`.
pub fn noise_power_dbm(bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
        return Err(invalid_arg(format!("bandwidth {bandwidth_hz} Hz must be positive")));
    }
    Ok(THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10())
}

/// Noise power in watts over `bandwidth_hz`.
pub fn noise_power_watt(bandwidth_hz: f64) -> Result<f64> {
    dbm_to_watt(noise_power_dbm(bandwidth_hz)?)
}

/// Physical and topological constants of one deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// BS transmit antennas.
    pub m_antennas: usize,
    /// Elements per surface.
    pub n_elements: usize,
    pub v_surfaces: usize,
    /// Service regions; always `v_surfaces + 1`.
    pub i_regions: usize,
    pub users_per_region: Vec<usize>,
    pub bandwidth_hz: f64,
    pub carrier_ghz: f64,
    pub bs_power_budget_dbm: f64,
    pub element_power_dbm: f64,
    /// Linear Rician factor.
    pub rician_factor: f64,
    /// Inter-surface distance in metres.
    pub surface_spacing_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            m_antennas: 5,
            n_elements: 16,
            v_surfaces: 2,
            i_regions: 3,
            users_per_region: vec![2, 2, 6],
            bandwidth_hz: 1e8,
            carrier_ghz: 28.0,
            bs_power_budget_dbm: 33.0,
            element_power_dbm: 17.0,
            rician_factor: 3.0,
            surface_spacing_m: 10.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_antennas", self.m_antennas),
            ("n_elements", self.n_elements),
            ("v_surfaces", self.v_surfaces),
            ("i_regions", self.i_regions),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.i_regions != self.v_surfaces + 1 {
            return Err(Error::Config(format!(
                "i_regions ({}) must equal v_surfaces + 1 ({})",
                self.i_regions,
                self.v_surfaces + 1
            )));
        }
        if self.users_per_region.len() != self.i_regions {
            return Err(Error::Config(format!(
                "users_per_region has {} entries, expected {}",
                self.users_per_region.len(),
                self.i_regions
            )));
        }
        if self.users_per_region.contains(&0) {
            return Err(Error::Config("every region needs at least one user".into()));
        }
        for (name, value) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_ghz", self.carrier_ghz),
            ("surface_spacing_m", self.surface_spacing_m),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.rician_factor.is_finite() && self.rician_factor >= 0.0) {
            return Err(Error::Config(format!(
                "rician_factor must be non-negative, got {}",
                self.rician_factor
            )));
        }
        for (name, value) in [
            ("bs_power_budget_dbm", self.bs_power_budget_dbm),
            ("element_power_dbm", self.element_power_dbm),
        ] {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn total_users(&self) -> usize {
        self.users_per_region.iter().sum()
    }

    pub fn p_max_watt(&self) -> f64 {
        dbm_to_watt(self.bs_power_budget_dbm).expect("validated power budget")
    }

    pub fn element_power_watt(&self) -> f64 {
        dbm_to_watt(self.element_power_dbm).expect("validated element power")
    }

    pub fn noise_watt(&self) -> f64 {
        noise_power_watt(self.bandwidth_hz).expect("validated bandwidth")
    }

    /// Width of the user strip along x.
    pub fn strip_width_m(&self) -> f64 {
        STRIP_SPACINGS.max((self.v_surfaces + 1) as f64) * self.surface_spacing_m
    }

    /// Half-open x-interval `[lo, hi)` of region `i` (0-based); the last
    /// region runs to the strip edge.
    pub fn region_bounds(&self, region: usize) -> (f64, f64) {
        let lo = region as f64 * self.surface_spacing_m;
        let hi = if region + 1 == self.i_regions {
            self.strip_width_m()
        } else {
            (region + 1) as f64 * self.surface_spacing_m
        };
        (lo, hi)
    }

    /// Region (0-based) containing x-coordinate `x`.
    pub fn region_of_x(&self, x: f64) -> usize {
        let idx = (x / self.surface_spacing_m).floor();
        if idx < 0.0 {
            0
        } else {
            (idx as usize).min(self.i_regions - 1)
        }
    }

    /// Split `total` users over the regions in proportion to region width,
    /// largest remainder first, with at least one user per region.
    pub fn apportion_users(&self, total: usize) -> Result<Vec<usize>> {
        if total < self.i_regions {
            return Err(invalid_arg(format!(
                "{total} users cannot cover {} regions",
                self.i_regions
            )));
        }
        let width = self.strip_width_m();
        let shares: Vec<f64> = (0..self.i_regions)
            .map(|i| {
                let (lo, hi) = self.region_bounds(i);
                total as f64 * (hi - lo) / width
            })
            .collect();
        let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.i_regions).collect();
        order.sort_by(|&a, &b| {
            let ra = shares[a] - shares[a].floor();
            let rb = shares[b] - shares[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let left = total - counts.iter().sum::<usize>();
        for &i in order.iter().cycle().take(left) {
            counts[i] += 1;
        }
        // every region keeps at least one user, taken from the fullest region
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let fullest = (0..counts.len()).max_by_key(|&i| (counts[i], usize::MAX - i)).unwrap();
            counts[fullest] -= 1;
            counts[empty] += 1;
        }
        Ok(counts)
    }

    /// Set one field from a string value, as given by `--key=value`.
    pub fn set_field(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut value = serde_json::to_value(&*self)?;
        let map = value.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        let parsed: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), parsed);
        let updated: ScenarioConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))?;
        *self = updated;
        Ok(())
    }
}

/// A configuration file: every [`ScenarioConfig`] field plus `master_seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub config: ScenarioConfig,
    pub master_seed: u64,
}

impl ConfigFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        let map = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("configuration must be a JSON object".into()))?;
        let seed = map
            .remove("master_seed")
            .ok_or_else(|| Error::Config("missing key `master_seed`".into()))?;
        let master_seed = seed
            .as_u64()
            .ok_or_else(|| Error::Config("`master_seed` must be an unsigned integer".into()))?;
        let config: ScenarioConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self { config, master_seed })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<Value> {
        let mut value = serde_json::to_value(&self.config)?;
        value
            .as_object_mut()
            .expect("object")
            .insert("master_seed".into(), Value::from(self.master_seed));
        Ok(value)
    }
}

/// Named random substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Channel,
    Exploration,
    Replay,
    WeightInit,
    UserPlacement,
    /// Fixed on-off masks for pinned policies.
    Layout,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Channel => 1,
            Stream::Exploration => 2,
            Stream::Replay => 3,
            Stream::WeightInit => 4,
            Stream::UserPlacement => 5,
            Stream::Layout => 6,
        }
    }
}

/// Deterministic substream factory keyed by a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    pub master_seed: u64,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream(&self, which: Stream) -> ChaCha8Rng {
        self.indexed(which, 0)
    }

    /// Independent substream for the `index`-th consumer of `which`.
    pub fn indexed(&self, which: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream((which.id() << 32) | index);
        rng
    }
}

/// A point in the deployment plane, metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Identifies the `k`-th user of region `region` (both 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId {
    pub region: usize,
    pub k: usize,
}

/// Node positions of one deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_position: Point,
    pub surface_positions: Vec<Point>,
    /// Users grouped by region.
    pub user_positions: Vec<Vec<Point>>,
}

impl Geometry {
    /// Surface `v` (0-based) sits at `(v * spacing, spacing)`.
    pub fn surface_layout(config: &ScenarioConfig) -> Vec<Point> {
        let s = config.surface_spacing_m;
        (0..config.v_surfaces)
            .map(|v| Point::new(v as f64 * s, s))
            .collect()
    }

    /// Build a geometry from explicit user positions, grouping them by region.
    pub fn with_users(config: &ScenarioConfig, users: &[Point]) -> Self {
        let mut user_positions = vec![Vec::new(); config.i_regions];
        for p in users {
            user_positions[config.region_of_x(p.x)].push(*p);
        }
        Self {
            bs_position: Point::new(0.0, 0.0),
            surface_positions: Self::surface_layout(config),
            user_positions,
        }
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.user_positions
            .iter()
            .enumerate()
            .flat_map(|(region, users)| (0..users.len()).map(move |k| UserId { region, k }))
            .collect()
    }

    pub fn user(&self, id: UserId) -> Point {
        self.user_positions[id.region][id.k]
    }

    pub fn total_users(&self) -> usize {
        self.user_positions.iter().map(Vec::len).sum()
    }

    pub fn region_counts(&self) -> Vec<usize> {
        self.user_positions.iter().map(Vec::len).collect()
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1_000_000;

/// Drop users uniformly over the strip and redraw whole placements until
/// every region holds its configured number of users.
pub fn sample_user_positions<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> Result<Geometry> {
    config.validate()?;
    let width = config.strip_width_m();
    let height = config.surface_spacing_m;
    let total = config.total_users();
    let mut users = Vec::with_capacity(total);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        users.clear();
        users.extend((0..total).map(|_| Point::new(rng.gen::<f64>() * width, rng.gen::<f64>() * height)));
        let geometry = Geometry::with_users(config, &users);
        if geometry.region_counts() == config.users_per_region {
            return Ok(geometry);
        }
    }
    Err(invalid_arg(format!(
        "no placement matched users_per_region {:?} after {MAX_PLACEMENT_ATTEMPTS} draws",
        config.users_per_region
    )))
}
