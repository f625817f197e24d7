use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{first_order_acceleration, rhs, simulate, OdeOptions, SystemSpec};
use crate::error::{Error, Result};

/// Observations `(Y, Z)`: `M` trajectories with `L` snapshots each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub times: Vec<f64>,
    pub noise_sigma: f64,
    /// `Y[m][l]` has length `2dN`.
    #[serde(rename = "Y")]
    pub y: Vec<Vec<Vec<f64>>>,
    /// `Z[m][l]` has length `dN`.
    #[serde(rename = "Z")]
    pub z: Vec<Vec<Vec<f64>>>,
}

impl TrajectoryDataset {
    pub fn dn(&self) -> usize {
        self.d * self.n
    }

    pub fn n_snapshots(&self) -> usize {
        self.m * self.l
    }

    /// Total number of scalar observations `dNML`.
    pub fn len(&self) -> usize {
        self.dn() * self.n_snapshots()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshots in storage order (trajectory outer, time inner).
    pub fn snapshots(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.y.iter().zip(&self.z).flat_map(|(ys, zs)| ys.iter().zip(zs).map(|(y, z)| (y.as_slice(), z.as_slice())))
    }

    pub fn positions(&self, m: usize, l: usize) -> &[f64] {
        &self.y[m][l][..self.dn()]
    }

    pub fn velocities(&self, m: usize, l: usize) -> &[f64] {
        &self.y[m][l][self.dn()..]
    }

    /// Concatenated `Z` in storage order.
    pub fn stacked_z(&self) -> Vec<f64> {
        self.snapshots().flat_map(|(_, z)| z.iter().copied()).collect()
    }

    /// Concatenated velocity halves of `Y` in storage order.
    pub fn stacked_v(&self) -> Vec<f64> {
        let dn = self.dn();
        self.snapshots().flat_map(|(y, _)| y[dn..].iter().copied()).collect()
    }

    /// Keeps the first `m` trajectories.
    pub fn take_trajectories(&self, m: usize) -> Self {
        let m = m.min(self.m);
        Self { m, y: self.y[..m].to_vec(), z: self.z[..m].to_vec(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let dn = self.dn();
        if self.times.len() != self.l {
            return Err(Error::Shape(format!("{} times for L = {}", self.times.len(), self.l)));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if self.y.len() != self.m || self.z.len() != self.m {
            return Err(Error::Shape("outer length of Y/Z must be M".into()));
        }
        for (ys, zs) in self.y.iter().zip(&self.z) {
            if ys.len() != self.l || zs.len() != self.l {
                return Err(Error::Shape("inner length of Y/Z must be L".into()));
            }
            for (y, z) in ys.iter().zip(zs) {
                if y.len() != 2 * dn || z.len() != dn {
                    return Err(Error::Shape(format!(
                        "snapshot lengths {}/{} (expected {}/{})",
                        y.len(),
                        z.len(),
                        2 * dn,
                        dn
                    )));
                }
                if y.iter().chain(z).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite value in dataset".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let ds: Self = serde_json::from_reader(r)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Simulates `m` trajectories from i.i.d. initial conditions and records `l`
/// equidistant snapshots on `[0, T]` with Gaussian noise of standard
/// deviation `sigma` added to every acceleration component.
///
/// For first-order systems the velocity half of `Y` holds `ẋ` and `Z` holds
/// `ẍ`, obtained by differentiating the right-hand side along the flow.
pub fn generate_dataset(
    spec: &SystemSpec,
    m: usize,
    l: usize,
    sigma: f64,
    seed: u64,
    opts: &OdeOptions,
) -> Result<TrajectoryDataset> {
    if m == 0 || l == 0 {
        return Err(Error::InvalidArgument("M and L must be >= 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    spec.validate()?;
    let times = spec.observation_times(l);
    let mut ic_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut ys = Vec::with_capacity(m);
    let mut zs = Vec::with_capacity(m);
    for _ in 0..m {
        let y0 = spec.sample_initial_state(&mut ic_rng);
        let traj = simulate(spec, &spec.phi_e, &spec.phi_a, &y0, &times, opts)?;
        let mut yt = Vec::with_capacity(l);
        let mut zt = Vec::with_capacity(l);
        for state in traj.states {
            let (y, mut z) = if spec.is_first_order() {
                let v = rhs(spec, &spec.phi_e, &spec.phi_a, &state)?;
                let a = first_order_acceleration(spec, &spec.phi_e, &state, &v)?;
                let mut y = state;
                y.extend_from_slice(&v);
                (y, a)
            } else {
                let z = rhs(spec, &spec.phi_e, &spec.phi_a, &state)?;
                (state, z)
            };
            if sigma > 0.0 {
                for zi in z.iter_mut() {
                    *zi += noise.sample(&mut noise_rng);
                }
            }
            yt.push(y);
            zt.push(z);
        }
        ys.push(yt);
        zs.push(zt);
    }
    Ok(TrajectoryDataset { d: spec.d, n: spec.n, m, l, times, noise_sigma: sigma, y: ys, z: zs })
}

/// Builds a single-trajectory dataset from position frames (each of length
/// `dN`): centered moving average of width `window`, then central differences
/// for velocity and acceleration. Frames without a full averaging window or
/// difference stencil are dropped, so `L = frames - (window - 1) - 2`.
pub fn preprocess_frames(frames: &[Vec<f64>], d: usize, window: usize, dt: f64) -> Result<TrajectoryDataset> {
    if window == 0 || d == 0 {
        return Err(Error::InvalidArgument("window and d must be positive".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if frames.len() < window + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least window + 2 = {} frames, got {}",
            window + 2,
            frames.len()
        )));
    }
    let dn = frames[0].len();
    if dn == 0 || !dn.is_multiple_of(d) || frames.iter().any(|f| f.len() != dn) {
        return Err(Error::Shape("frames must share a length divisible by d".into()));
    }
    let n_smooth = frames.len() - window + 1;
    let smoothed: Vec<Vec<f64>> = (0..n_smooth)
        .map(|s| {
            let mut acc = vec![0.0; dn];
            for f in &frames[s..s + window] {
                for (a, v) in acc.iter_mut().zip(f) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / window as f64).collect()
        })
        .collect();

    let l = n_smooth - 2;
    let mut y = Vec::with_capacity(l);
    let mut z = Vec::with_capacity(l);
    for t in 1..=l {
        let (prev, cur, next) = (&smoothed[t - 1], &smoothed[t], &smoothed[t + 1]);
        let mut state = cur.clone();
        state.extend(prev.iter().zip(next).map(|(p, q)| (q - p) / (2.0 * dt)));
        let acc: Vec<f64> = (0..dn).map(|k| (next[k] - 2.0 * cur[k] + prev[k]) / (dt * dt)).collect();
        y.push(state);
        z.push(acc);
    }
    let times = (0..l).map(|k| k as f64 * dt).collect();
    Ok(TrajectoryDataset { d, n: dn / d, m: 1, l, times, noise_sigma: 0.0, y: vec![y], z: vec![z] })
}

/// Reads one frame per CSV row. A non-numeric first row is treated as a
/// header. With `normalize`, each spatial axis is min-max scaled to `[0, 1]`
/// over all agents and frames.
pub fn read_frames_csv<R: Read>(reader: R, d: usize, normalize: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut frames = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => frames.push(v),
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::InvalidArgument(format!("row {row}: {e}"))),
        }
    }
    if frames.is_empty() {
        return Err(Error::Empty("no frames in CSV"));
    }
    let width = frames[0].len();
    if d == 0 || width % d != 0 || frames.iter().any(|f| f.len() != width) {
        return Err(Error::Shape(format!("rows must have equal width divisible by d = {d}")));
    }
    if normalize {
        for k in 0..d {
            let vals = frames.iter().flat_map(|f| f.iter().skip(k).step_by(d));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let span = hi - lo;
            for f in frames.iter_mut() {
                for v in f.iter_mut().skip(k).step_by(d) {
                    *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
                }
            }
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin_system;

    #[test]
    fn noiseless_dataset_matches_rhs() {
        let cs = builtin_system("CS").unwrap();
        let ds = generate_dataset(&cs, 2, 3, 0.0, 1, &OdeOptions::default()).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.n_snapshots(), 6);
        for (y, z) in ds.snapshots() {
            let r = rhs(&cs, &cs.phi_e, &cs.phi_a, y).unwrap();
            let err = r.iter().zip(z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-6);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let fm = builtin_system("FM").unwrap();
        let a = generate_dataset(&fm, 2, 3, 0.1, 42, &OdeOptions::default()).unwrap();
        let b = generate_dataset(&fm, 2, 3, 0.1, 42, &OdeOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut sa = Vec::new();
        let mut sb = Vec::new();
        a.to_writer(&mut sa).unwrap();
        b.to_writer(&mut sb).unwrap();
        assert_eq!(sa, sb);
        let back = TrajectoryDataset::from_reader(sa.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn noise_has_requested_std() {
        let ad = builtin_system("AD").unwrap();
        let clean = generate_dataset(&ad, 20, 10, 0.0, 3, &OdeOptions::default()).unwrap();
        let noisy = generate_dataset(&ad, 20, 10, 0.1, 3, &OdeOptions::default()).unwrap();
        let diffs: Vec<f64> = clean.stacked_z().iter().zip(noisy.stacked_z()).map(|(a, b)| b - a).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn preprocess_quadratic_and_linear() {
        let dt = 0.1;
        let quad: Vec<Vec<f64>> = (0..20).map(|k| vec![(k as f64 * dt).powi(2)]).collect();
        let ds = preprocess_frames(&quad, 1, 1, dt).unwrap();
        assert_eq!(ds.l, 18);
        for z in &ds.z[0] {
            assert!((z[0] - 2.0).abs() < 1e-9);
        }
        let lin: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64 * dt, 2.0]).collect();
        let ds = preprocess_frames(&lin, 1, 4, dt).unwrap();
        assert_eq!(ds.l, 20 - 3 - 2);
        for (y, z) in ds.y[0].iter().zip(&ds.z[0]) {
            assert!((y[2] - 1.0).abs() < 1e-12 && y[3].abs() < 1e-12);
            assert!(z[0].abs() < 1e-10 && z[1].abs() < 1e-12);
        }
        assert!(preprocess_frames(&lin[..5], 1, 4, dt).is_err());
    }

    #[test]
    fn csv_header_and_normalization() {
        let text = "a,b,c,d\n0,10,2,20\n4,30,2,10\n";
        let frames = read_frames_csv(text.as_bytes(), 2, true).unwrap();
        assert_eq!(frames, vec![vec![0.0, 0.0, 0.5, 0.5], vec![1.0, 1.0, 0.5, 0.0]]);
    }
}
