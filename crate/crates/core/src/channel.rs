//! Multi-hop path enumeration, Rician link sampling and the effective
//! BS-to-user channel.
//!
//! Surface and user indices are 0-based in code. A path is an ascending
//! tuple of surface indices; the signal leaves the BS, hits the first surface,
//! penetrates every intermediate surface and is finally either transmitted
//! or reflected at the last one depending on which side the user lies.

use std::f64::consts::PI;
use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid_arg, Error, Result};
use crate::scenario::{Geometry, Point, ScenarioConfig, UserId};
use crate::starris::ThetaPair;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type CRow = RowDVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Every ascending chain of surfaces, grouped by hop count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathTable {
    pub paths: Vec<Vec<usize>>,
}

impl PathTable {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Paths with exactly `hops` surfaces.
    pub fn with_hops(&self, hops: usize) -> impl Iterator<Item = &Vec<usize>> {
        self.paths.iter().filter(move |p| p.len() == hops)
    }
}

/// All non-empty strictly increasing tuples over `0..v_surfaces`, shortest
/// first and lexicographic within a length.
pub fn enumerate_paths(v_surfaces: usize) -> Result<PathTable> {
    if v_surfaces == 0 {
        return Err(invalid_arg("at least one surface is needed to form a path"));
    }
    fn extend(v: usize, len: usize, start: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for s in start..v {
            prefix.push(s);
            extend(v, len, s + 1, prefix, out);
            prefix.pop();
        }
    }
    let mut paths = Vec::with_capacity((1usize << v_surfaces.min(30)) - 1);
    for len in 1..=v_surfaces {
        extend(v_surfaces, len, 0, &mut Vec::with_capacity(len), &mut paths);
    }
    Ok(PathTable { paths })
}

/// Distance-based pathloss in dB. Distances under 1 m are clamped to 1 m.
pub fn pathloss_db(carrier_ghz: f64, distance_m: f64) -> Result<f64> {
    if !(carrier_ghz.is_finite() && carrier_ghz > 0.0) {
        return Err(invalid_arg(format!("carrier {carrier_ghz} GHz must be positive")));
    }
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(invalid_arg(format!("distance {distance_m} m must be positive")));
    }
    let d = if distance_m < 1.0 {
        warn!("link distance {distance_m} m below 1 m, clamping pathloss distance");
        1.0
    } else {
        distance_m
    };
    Ok(32.4 + 20.0 * carrier_ghz.log10() + 21.0 * d.log10())
}

/// Half-wavelength uniform linear array response along the x-axis.
pub fn steering_vector(len: usize, cos_angle: f64) -> CVector {
    CVector::from_iterator(
        len,
        (0..len).map(|i| Complex64::from_polar(1.0, PI * i as f64 * cos_angle)),
    )
}

/// One Rician link between two linear arrays.
///
/// `cos_rx`/`cos_tx` are direction cosines against the x-axis seen from the
/// receiving and transmitting array. A single-antenna end is a 1-element
/// array, whose response is 1 regardless of angle.
#[derive(Clone, Copy, Debug)]
pub struct LinkSpec {
    pub rx_len: usize,
    pub tx_len: usize,
    pub cos_rx: f64,
    pub cos_tx: f64,
    pub distance_m: f64,
}

impl LinkSpec {
    pub fn between(rx: Point, rx_len: usize, tx: Point, tx_len: usize) -> Result<Self> {
        let distance_m = rx.distance(&tx);
        if distance_m <= 0.0 {
            return Err(invalid_arg(format!(
                "co-located nodes at ({}, {}) form a zero-length link",
                rx.x, rx.y
            )));
        }
        Ok(Self {
            rx_len,
            tx_len,
            cos_rx: (tx.x - rx.x) / distance_m,
            cos_tx: (rx.x - tx.x) / distance_m,
            distance_m,
        })
    }
}

/// Sample `rx_len x tx_len` Rician coefficients scaled by the link pathloss.
pub fn sample_link<R: Rng>(
    link: &LinkSpec,
    carrier_ghz: f64,
    rician_factor: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let pl_db = pathloss_db(carrier_ghz, link.distance_m)?;
    let scale = 10f64.powf(-pl_db / 20.0);
    let (los_w, nlos_w) = if rician_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        (
            (rician_factor / (rician_factor + 1.0)).sqrt(),
            (1.0 / (rician_factor + 1.0)).sqrt(),
        )
    };
    let a_rx = steering_vector(link.rx_len, link.cos_rx);
    let a_tx = steering_vector(link.tx_len, link.cos_tx);
    let los = &a_rx * a_tx.adjoint();
    let nlos = CMatrix::from_fn(link.rx_len, link.tx_len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    Ok((los * Complex64::from(los_w) + nlos * Complex64::from(nlos_w)) * Complex64::from(scale))
}

/// One sampled set of every channel in the deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub m_antennas: usize,
    pub n_elements: usize,
    pub v_surfaces: usize,
    /// Users in region-major order, matching [`Geometry::user_ids`].
    pub users: Vec<UserId>,
    /// BS to user, length M per user.
    pub direct: Vec<CVector>,
    /// Surface to user on the transmission side, `[surface][user]`, length N.
    pub transmit_link: Vec<Vec<CVector>>,
    /// Surface to user on the reflection side, `[surface][user]`, length N.
    pub reflect_link: Vec<Vec<CVector>>,
    /// BS to surface, N x M (rows are surface elements).
    pub bs_to_surface: Vec<CMatrix>,
    /// Surface `v` to surface `v' > v`, N x N, in lexicographic pair order.
    pub surface_to_surface: Vec<CMatrix>,
}

fn pair_index(v_surfaces: usize, from: usize, to: usize) -> usize {
    debug_assert!(from < to && to < v_surfaces);
    // pairs (0,1),(0,2),..,(0,V-1),(1,2),...
    from * (2 * v_surfaces - from - 1) / 2 + (to - from - 1)
}

impl ChannelRealization {
    /// Inter-surface channel from `from` to `to` (requires `from < to`).
    pub fn hop(&self, from: usize, to: usize) -> &CMatrix {
        &self.surface_to_surface[pair_index(self.v_surfaces, from, to)]
    }

    pub fn user_index(&self, id: UserId) -> Option<usize> {
        self.users.iter().position(|u| *u == id)
    }

    fn check(&self) -> Result<()> {
        let (m, n, v) = (self.m_antennas, self.n_elements, self.v_surfaces);
        let k = self.users.len();
        let ok = self.direct.len() == k
            && self.direct.iter().all(|d| d.len() == m)
            && self.transmit_link.len() == v
            && self.reflect_link.len() == v
            && self
                .transmit_link
                .iter()
                .chain(&self.reflect_link)
                .all(|per_user| per_user.len() == k && per_user.iter().all(|g| g.len() == n))
            && self.bs_to_surface.len() == v
            && self.bs_to_surface.iter().all(|p| p.shape() == (n, m))
            && self.surface_to_surface.len() == v * v.saturating_sub(1) / 2
            && self.surface_to_surface.iter().all(|p| p.shape() == (n, n));
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("channel realization has inconsistent shapes".into()))
        }
    }

    /// Little-endian dump: a `u32` header `[M, N, V, users]`, then every
    /// coefficient as an `f32` (re, im) pair in row-major order: direct
    /// links, transmit links, reflect links, BS-to-surface matrices and
    /// inter-surface matrices.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        self.check()?;
        out.write_all(b"CHRL")?;
        for dim in [self.m_antennas, self.n_elements, self.v_surfaces, self.users.len()] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for u in &self.users {
            out.write_all(&(u.region as u32).to_le_bytes())?;
            out.write_all(&(u.k as u32).to_le_bytes())?;
        }
        let mut put = |z: &Complex64| -> std::io::Result<()> {
            out.write_all(&(z.re as f32).to_le_bytes())?;
            out.write_all(&(z.im as f32).to_le_bytes())
        };
        for d in &self.direct {
            d.iter().try_for_each(&mut put)?;
        }
        for links in [&self.transmit_link, &self.reflect_link] {
            for g in links.iter().flatten() {
                g.iter().try_for_each(&mut put)?;
            }
        }
        for mat in self.bs_to_surface.iter().chain(&self.surface_to_surface) {
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    put(&mat[(r, c)])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"CHRL" {
            return Err(Error::InvalidArgument("not a channel dump".into()));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |input: &mut R| -> Result<usize> {
            input.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word) as usize)
        };
        let (m, n, v, k) = (
            next_u32(&mut input)?,
            next_u32(&mut input)?,
            next_u32(&mut input)?,
            next_u32(&mut input)?,
        );
        let mut users = Vec::with_capacity(k);
        for _ in 0..k {
            let region = next_u32(&mut input)?;
            let kk = next_u32(&mut input)?;
            users.push(UserId { region, k: kk });
        }
        let get = |input: &mut R| -> Result<Complex64> {
            let mut buf = [0u8; 8];
            input.read_exact(&mut buf)?;
            let re = f32::from_le_bytes(buf[..4].try_into().unwrap());
            let im = f32::from_le_bytes(buf[4..].try_into().unwrap());
            Ok(Complex64::new(re as f64, im as f64))
        };
        let vector = |len: usize, input: &mut R| -> Result<CVector> {
            let vals = (0..len).map(|_| get(input)).collect::<Result<Vec<_>>>()?;
            Ok(CVector::from_vec(vals))
        };
        let direct = (0..k).map(|_| vector(m, &mut input)).collect::<Result<Vec<_>>>()?;
        let links = |input: &mut R| -> Result<Vec<Vec<CVector>>> {
            (0..v)
                .map(|_| (0..k).map(|_| vector(n, input)).collect())
                .collect()
        };
        let transmit_link = links(&mut input)?;
        let reflect_link = links(&mut input)?;
        let matrix = |rows: usize, cols: usize, input: &mut R| -> Result<CMatrix> {
            let vals = (0..rows * cols).map(|_| get(input)).collect::<Result<Vec<_>>>()?;
            Ok(CMatrix::from_row_slice(rows, cols, &vals))
        };
        let bs_to_surface = (0..v).map(|_| matrix(n, m, &mut input)).collect::<Result<Vec<_>>>()?;
        let surface_to_surface = (0..v * v.saturating_sub(1) / 2)
            .map(|_| matrix(n, n, &mut input))
            .collect::<Result<Vec<_>>>()?;
        let real = Self {
            m_antennas: m,
            n_elements: n,
            v_surfaces: v,
            users,
            direct,
            transmit_link,
            reflect_link,
            bs_to_surface,
            surface_to_surface,
        };
        real.check()?;
        Ok(real)
    }
}

/// Draw every link of the deployment.
///
/// Transmit-side and reflect-side surface-to-user links are sampled as
/// independent links over the same geometry.
pub fn sample_channel<R: Rng>(
    geometry: &Geometry,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    config.validate()?;
    let (m, n, v) = (config.m_antennas, config.n_elements, config.v_surfaces);
    if geometry.surface_positions.len() != v {
        return Err(Error::Dimension(format!(
            "geometry has {} surfaces, config {v}",
            geometry.surface_positions.len()
        )));
    }
    let (carrier, kf) = (config.carrier_ghz, config.rician_factor);
    let users = geometry.user_ids();
    let bs = geometry.bs_position;

    let mut direct = Vec::with_capacity(users.len());
    for &u in &users {
        let link = LinkSpec::between(geometry.user(u), 1, bs, m)?;
        // single receive antenna: keep the BS-side response as a column
        direct.push(sample_link(&link, carrier, kf, rng)?.row(0).transpose());
    }
    let mut transmit_link = Vec::with_capacity(v);
    let mut reflect_link = Vec::with_capacity(v);
    for &sp in &geometry.surface_positions {
        let mut t = Vec::with_capacity(users.len());
        let mut r = Vec::with_capacity(users.len());
        for &u in &users {
            let link = LinkSpec::between(geometry.user(u), 1, sp, n)?;
            t.push(sample_link(&link, carrier, kf, rng)?.row(0).transpose());
            r.push(sample_link(&link, carrier, kf, rng)?.row(0).transpose());
        }
        transmit_link.push(t);
        reflect_link.push(r);
    }
    let bs_to_surface = geometry
        .surface_positions
        .iter()
        .map(|&sp| sample_link(&LinkSpec::between(sp, n, bs, m)?, carrier, kf, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut surface_to_surface = Vec::with_capacity(v * v.saturating_sub(1) / 2);
    for from in 0..v {
        for to in from + 1..v {
            let link = LinkSpec::between(
                geometry.surface_positions[to],
                n,
                geometry.surface_positions[from],
                n,
            )?;
            surface_to_surface.push(sample_link(&link, carrier, kf, rng)?);
        }
    }
    let real = ChannelRealization {
        m_antennas: m,
        n_elements: n,
        v_surfaces: v,
        users,
        direct,
        transmit_link,
        reflect_link,
        bs_to_surface,
        surface_to_surface,
    };
    real.check()?;
    Ok(real)
}

/// Row-scale `x` by a diagonal, i.e. `diag(d) * x`.
fn scale_rows(diag: &[Complex64], x: &CMatrix) -> CMatrix {
    let mut out = x.clone();
    for (r, d) in diag.iter().enumerate() {
        for c in 0..out.ncols() {
            out[(r, c)] *= d;
        }
    }
    out
}

/// Cascaded channel from the BS up to (not including) the last surface of
/// `path`, an N x M matrix. Later hops multiply from the left; every
/// intermediate surface contributes its transmission coefficients.
pub fn cascade_product(path: &[usize], realization: &ChannelRealization, thetas: &[ThetaPair]) -> Result<CMatrix> {
    let first = *path
        .first()
        .ok_or_else(|| invalid_arg("empty path"))?;
    if path.iter().any(|&s| s >= realization.v_surfaces || s >= thetas.len()) {
        return Err(Error::Dimension(format!("path {path:?} exceeds the surface count")));
    }
    let mut acc = realization.bs_to_surface[first].clone();
    for w in path.windows(2) {
        let (from, to) = (w[0], w[1]);
        if from >= to {
            return Err(invalid_arg(format!("path {path:?} is not ascending")));
        }
        if thetas[from].transmit.len() != acc.nrows() {
            return Err(Error::Dimension("coefficient length differs from N".into()));
        }
        acc = realization.hop(from, to) * scale_rows(&thetas[from].transmit, &acc);
    }
    Ok(acc)
}

/// Composite channel rows for every user.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveChannel {
    /// One 1 x M row per user, in [`ChannelRealization::users`] order.
    pub omega: Vec<CRow>,
}

fn final_hop(
    user_idx: usize,
    region: usize,
    path: &[usize],
    cascade: &CMatrix,
    realization: &ChannelRealization,
    thetas: &[ThetaPair],
) -> CRow {
    let last = *path.last().expect("non-empty path");
    let (link, coeffs) = if last < region {
        (&realization.transmit_link[last][user_idx], &thetas[last].transmit)
    } else {
        (&realization.reflect_link[last][user_idx], &thetas[last].reflect)
    };
    // link^H * diag(coeffs) as a row vector
    let row = CRow::from_iterator(link.len(), link.iter().zip(coeffs).map(|(g, t)| g.conj() * t));
    row * cascade
}

/// Effective channel of a single user.
pub fn effective_channel(
    user: UserId,
    realization: &ChannelRealization,
    thetas: &[ThetaPair],
    paths: &PathTable,
) -> Result<CRow> {
    let idx = realization
        .user_index(user)
        .ok_or_else(|| invalid_arg(format!("unknown user {user:?}")))?;
    let mut omega = realization.direct[idx].adjoint();
    for path in &paths.paths {
        let cascade = cascade_product(path, realization, thetas)?;
        omega += final_hop(idx, user.region, path, &cascade, realization, thetas);
    }
    Ok(omega)
}

/// Effective channels of all users, sharing each path's cascade.
pub fn effective_channels(
    realization: &ChannelRealization,
    thetas: &[ThetaPair],
    paths: &PathTable,
) -> Result<EffectiveChannel> {
    if thetas.len() != realization.v_surfaces {
        return Err(Error::Dimension(format!(
            "{} coefficient sets for {} surfaces",
            thetas.len(),
            realization.v_surfaces
        )));
    }
    let mut omega: Vec<CRow> = realization.direct.iter().map(|d| d.adjoint()).collect();
    for path in &paths.paths {
        // a switched-off surface anywhere on the path kills it
        let dead = path[..path.len() - 1]
                .iter()
                .any(|&s| thetas[s].transmit.iter().all(|t| *t == ZERO))
            || {
                let last = *path.last().unwrap();
                thetas[last].transmit.iter().all(|t| *t == ZERO)
                    && thetas[last].reflect.iter().all(|t| *t == ZERO)
            };
        if dead {
            continue;
        }
        let cascade = cascade_product(path, realization, thetas)?;
        for (idx, user) in realization.users.iter().enumerate() {
            omega[idx] += final_hop(idx, user.region, path, &cascade, realization, thetas);
        }
    }
    Ok(EffectiveChannel { omega })
}
