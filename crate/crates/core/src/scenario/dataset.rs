//! Sampled transition datasets and their CSV cache format.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::polytope::InputPolytope;
use crate::error::{Error, Result};
use crate::systems::rng::{key, Domain};
use crate::systems::{SafetySpec, System};

/// `N` base points, optional inputs, and `N_hat` successors per point.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    n: usize,
    m: usize,
    n_hat: usize,
    base_points: Vec<f64>,
    inputs: Vec<f64>,
    successors: Vec<f64>,
    in_initial: Vec<bool>,
    in_unsafe: Vec<bool>,
    seed: u64,
}

impl TransitionDataset {
    /// Assembles a dataset from flat row-major buffers and tags membership against `spec`.
    pub fn from_parts(
        spec: &SafetySpec,
        m: usize,
        n_hat: usize,
        base_points: Vec<f64>,
        inputs: Vec<f64>,
        successors: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let n = spec.dim();
        if n_hat == 0 {
            return Err(Error::Argument("N_hat must be at least 1".into()));
        }
        if base_points.is_empty() || base_points.len() % n != 0 {
            return Err(Error::Data(format!(
                "{} base-point values do not form points of dimension {n}",
                base_points.len()
            )));
        }
        let count = base_points.len() / n;
        if inputs.len() != count * m {
            return Err(Error::Data(format!(
                "expected {} input values, found {}",
                count * m,
                inputs.len()
            )));
        }
        if successors.len() != count * n_hat * n {
            return Err(Error::Data(format!(
                "expected {} successor values, found {}",
                count * n_hat * n,
                successors.len()
            )));
        }
        let mut data = TransitionDataset {
            n,
            m,
            n_hat,
            base_points,
            inputs,
            successors,
            in_initial: Vec::new(),
            in_unsafe: Vec::new(),
            seed,
        };
        for i in 0..count {
            if !spec.state.contains(data.point(i)) {
                return Err(Error::Data(format!(
                    "base point {i} lies outside the state set"
                )));
            }
        }
        data.in_initial = (0..count)
            .map(|i| spec.initial.contains(data.point(i)))
            .collect();
        data.in_unsafe = (0..count)
            .map(|i| spec.unsafe_set.contains(data.point(i)))
            .collect();
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.in_initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn n_hat(&self) -> usize {
        self.n_hat
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.base_points[i * self.n..(i + 1) * self.n]
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.m..(i + 1) * self.m]
    }

    pub fn successor(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n_hat + j) * self.n;
        &self.successors[start..start + self.n]
    }

    /// All successors of base point `i`, `N_hat * n` values.
    pub fn successors_of(&self, i: usize) -> &[f64] {
        let stride = self.n_hat * self.n;
        &self.successors[i * stride..(i + 1) * stride]
    }

    pub fn in_initial(&self, i: usize) -> bool {
        self.in_initial[i]
    }

    pub fn in_unsafe(&self, i: usize) -> bool {
        self.in_unsafe[i]
    }

    /// SHA-256 over the sampled values; two datasets with equal digests hold identical samples.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.n, self.m, self.n_hat, self.len()] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(self.seed.to_le_bytes());
        for buf in [&self.base_points, &self.inputs, &self.successors] {
            for v in buf.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Writes the cache CSV: one line per `(i, j)` with header `i,j,x_*,u_*,xp_*`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        let mut line = String::from("i,j");
        for k in 1..=self.n {
            write!(line, ",x_{k}").unwrap();
        }
        for k in 1..=self.m {
            write!(line, ",u_{k}").unwrap();
        }
        for k in 1..=self.n {
            write!(line, ",xp_{k}").unwrap();
        }
        let io_err = |e| Error::io(format!("writing {}", path.display()), e);
        writeln!(w, "{line}").map_err(io_err)?;
        for i in 0..self.len() {
            for j in 0..self.n_hat {
                line.clear();
                write!(line, "{i},{j}").unwrap();
                for v in self
                    .point(i)
                    .iter()
                    .chain(self.input(i))
                    .chain(self.successor(i, j))
                {
                    write!(line, ",{v}").unwrap();
                }
                writeln!(w, "{line}").map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Reads a cache CSV written by [`TransitionDataset::write_csv`].
    pub fn read_csv(path: &Path, spec: &SafetySpec, m: usize, seed: u64) -> Result<Self> {
        let n = spec.dim();
        let file =
            File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(file));
        let width = 2 + 2 * n + m;
        if reader.headers()?.len() != width {
            return Err(Error::Data(format!(
                "{}: header has {} columns, expected {width}",
                path.display(),
                reader.headers()?.len()
            )));
        }
        let mut base_points = Vec::new();
        let mut inputs = Vec::new();
        let mut successors = Vec::new();
        let mut n_hat: Option<usize> = None;
        let mut count = 0usize;
        let mut next_j = 0usize;
        let ragged = |n_hat: &mut Option<usize>, seen: usize, sample: usize| match *n_hat {
            None => {
                *n_hat = Some(seen);
                Ok(())
            }
            Some(h) if h == seen => Ok(()),
            Some(h) => Err(Error::Data(format!(
                "{}: sample {sample} has {seen} successors, earlier samples have {h}",
                path.display()
            ))),
        };
        for (line_no, record) in reader.records().enumerate() {
            let record = record?;
            let bad = |what: &str| {
                Error::Data(format!("{} record {}: {what}", path.display(), line_no + 1))
            };
            if record.len() != width {
                return Err(bad("wrong number of fields"));
            }
            let i: usize = record[0].parse().map_err(|_| bad("bad sample index"))?;
            let j: usize = record[1].parse().map_err(|_| bad("bad successor index"))?;
            let values = record
                .iter()
                .skip(2)
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            if j == 0 {
                if i != count {
                    return Err(bad("records out of order"));
                }
                if count > 0 {
                    ragged(&mut n_hat, next_j, count - 1)?;
                }
                base_points.extend_from_slice(&values[..n]);
                inputs.extend_from_slice(&values[n..n + m]);
                count += 1;
            } else if i + 1 != count || j != next_j {
                return Err(bad("records out of order"));
            }
            successors.extend_from_slice(&values[n + m..]);
            next_j = j + 1;
        }
        if count == 0 {
            return Err(Error::Data(format!("{} holds no samples", path.display())));
        }
        ragged(&mut n_hat, next_j, count - 1)?;
        let n_hat = n_hat.unwrap_or(next_j);
        Self::from_parts(spec, m, n_hat, base_points, inputs, successors, seed)
    }
}

/// Identity of a dataset request; equal fingerprints mean a cached dataset can be reused.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetKey {
    pub system: String,
    pub spec: SafetySpec,
    pub inputs: Option<InputPolytope>,
    pub n_samples: usize,
    pub n_hat: usize,
    pub seed: u64,
}

impl DatasetKey {
    pub fn fingerprint(&self) -> String {
        let mut text = format!("system={}\n", self.system);
        text.push_str(&self.spec.canonical_text());
        if let Some(u) = &self.inputs {
            writeln!(text, "input_a={:?}\ninput_b={:?}", u.a(), u.b()).unwrap();
        }
        writeln!(
            text,
            "N={}\nN_hat={}\nseed={}",
            self.n_samples, self.n_hat, self.seed
        )
        .unwrap();
        hex(&Sha256::digest(text.as_bytes()))
    }

    /// Path of the sidecar file that stores the fingerprint next to a cache CSV.
    pub fn meta_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn write_meta(&self, csv: &Path) -> Result<()> {
        let path = Self::meta_path(csv);
        std::fs::write(&path, format!("fingerprint={}\n", self.fingerprint()))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// True when the sidecar next to `csv` names this key's fingerprint.
    pub fn matches_meta(&self, csv: &Path) -> bool {
        let Ok(file) = File::open(Self::meta_path(csv)) else {
            return false;
        };
        let want = format!("fingerprint={}", self.fingerprint());
        BufReader::new(file)
            .lines()
            .map_while(|l| l.ok())
            .any(|l| l.trim() == want)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

/// Samples `n_samples` base points uniformly over the state set (and inputs
/// uniformly over `inputs`), then draws `n_hat` successors for each.
///
/// Every draw has its own stream address derived from `seed`, so the result
/// does not depend on the number of worker threads.
pub fn collect_dataset(
    system: &dyn System,
    spec: &SafetySpec,
    inputs: Option<&InputPolytope>,
    n_samples: usize,
    n_hat: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    let n = spec.dim();
    let m = system.input_dim();
    if n_samples == 0 || n_hat == 0 {
        return Err(Error::Argument(
            "N and N_hat must both be at least 1".into(),
        ));
    }
    if system.state_dim() != n {
        return Err(Error::Config(format!(
            "system state dimension {} does not match the specification dimension {n}",
            system.state_dim()
        )));
    }
    match (m, inputs) {
        (0, None) => {}
        (0, Some(_)) => {
            return Err(Error::Config(
                "input set given for an autonomous system".into(),
            ))
        }
        (_, None) => {
            return Err(Error::Config(format!(
                "system has {m} inputs but no input set was given"
            )))
        }
        (_, Some(u)) if u.dim() != m => {
            return Err(Error::Config(format!(
                "input set has dimension {}, system expects {m}",
                u.dim()
            )))
        }
        _ => {}
    }

    let mut base_points = vec![0.0; n_samples * n];
    // Autonomous systems still get a one-slot scratch per sample so the chunks zip up.
    let mut input_values = vec![0.0; n_samples * m.max(1)];
    let mut successors = vec![0.0; n_samples * n_hat * n];
    base_points
        .par_chunks_mut(n)
        .zip(input_values.par_chunks_mut(m.max(1)))
        .zip(successors.par_chunks_mut(n_hat * n))
        .enumerate()
        .try_for_each(|(i, ((x, u), succ))| -> Result<()> {
            let mut rng = key(seed, Domain::BasePoint, i as u64).stream();
            spec.state.sample_into(&mut rng, x);
            let u: &[f64] = match inputs {
                Some(poly) => {
                    let mut rng = key(seed, Domain::Input, i as u64).stream();
                    poly.sample_into(&mut rng, u)?;
                    u
                }
                None => &[],
            };
            for (j, out) in succ.chunks_mut(n).enumerate() {
                let noise = key(seed, Domain::Successor, (i * n_hat + j) as u64);
                let next = system.step(x, u, noise).map_err(|e| Error::Simulation {
                    i,
                    j,
                    source: Box::new(e),
                })?;
                if next.len() != n {
                    return Err(Error::Simulation {
                        i,
                        j,
                        source: Box::new(Error::Data(format!(
                            "successor has {} components, expected {n}",
                            next.len()
                        ))),
                    });
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "successor ({i}, {j}) is not finite: {next:?}"
                    )));
                }
                out.copy_from_slice(&next);
            }
            Ok(())
        })?;
    if m == 0 {
        input_values.clear();
    }
    TransitionDataset::from_parts(spec, m, n_hat, base_points, input_values, successors, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{
        builtin_system, Aabb, AffineSystem, BuiltinKind, BuiltinSystem, NoiseKey, Region,
    };

    fn rooms_spec() -> SafetySpec {
        let cube = |lo: f64, hi: f64| Region::single(Aabb::from_intervals(&[(lo, hi); 3]).unwrap());
        SafetySpec::new(cube(17.0, 30.0), cube(17.0, 18.0), cube(29.0, 30.0), 3).unwrap()
    }

    fn heater_spec() -> SafetySpec {
        let iv = |lo: f64, hi: f64| Region::single(Aabb::from_intervals(&[(lo, hi)]).unwrap());
        SafetySpec::new(iv(1.0, 50.0), iv(19.5, 20.0), iv(46.0, 50.0), 9).unwrap()
    }

    #[test]
    fn shape_and_replay() {
        let sys = builtin_system("three_rooms").unwrap();
        let spec = rooms_spec();
        let a = collect_dataset(sys.as_ref(), &spec, None, 2, 3, 11).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.n_hat(), 3);
        assert_eq!(a.successors.len(), 2 * 3 * 3);
        let b = collect_dataset(sys.as_ref(), &spec, None, 2, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = collect_dataset(sys.as_ref(), &spec, None, 2, 3, 12).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn base_points_stay_in_state_set() {
        let sys = builtin_system("three_rooms").unwrap();
        let data = collect_dataset(sys.as_ref(), &rooms_spec(), None, 2000, 1, 5).unwrap();
        for i in 0..data.len() {
            assert!(data.point(i).iter().all(|&v| (17.0..=30.0).contains(&v)));
        }
    }

    #[test]
    fn prefix_is_stable_across_sizes() {
        let sys = builtin_system("three_rooms").unwrap();
        let small = collect_dataset(sys.as_ref(), &rooms_spec(), None, 5, 2, 9).unwrap();
        let large = collect_dataset(sys.as_ref(), &rooms_spec(), None, 50, 2, 9).unwrap();
        for i in 0..5 {
            assert_eq!(small.point(i), large.point(i));
            assert_eq!(small.successors_of(i), large.successors_of(i));
        }
    }

    #[test]
    fn successor_mean_matches_noiseless_step() {
        let sys = BuiltinSystem::new(BuiltinKind::ThreeRooms);
        let spec = rooms_spec();
        let data = collect_dataset(&sys, &spec, None, 1, 10_000, 3).unwrap();
        let x = data.point(0);
        let drift = sys.drift(x, &[]);
        for k in 0..3 {
            let mean: f64 = (0..data.n_hat())
                .map(|j| data.successor(0, j)[k])
                .sum::<f64>()
                / data.n_hat() as f64;
            let tol = 4.0 * sys.noise_std()[k] / (data.n_hat() as f64).sqrt();
            assert!(
                (mean - drift[k]).abs() <= tol,
                "dim {k}: {mean} vs {}",
                drift[k]
            );
        }
    }

    #[test]
    fn successors_use_addressed_noise() {
        let sys = builtin_system("three_rooms").unwrap();
        let data = collect_dataset(sys.as_ref(), &rooms_spec(), None, 3, 4, 21).unwrap();
        let noise: NoiseKey = key(21, Domain::Successor, (2 * 4 + 1) as u64);
        assert_eq!(
            sys.step(data.point(2), &[], noise).unwrap(),
            data.successor(2, 1)
        );
    }

    #[test]
    fn inputs_drawn_from_polytope() {
        let sys = builtin_system("heater").unwrap();
        let u = InputPolytope::from_box(&[0.0], &[1.0]).unwrap();
        let data = collect_dataset(sys.as_ref(), &heater_spec(), Some(&u), 500, 2, 4).unwrap();
        assert!((0..500).all(|i| (0.0..=1.0).contains(&data.input(i)[0])));
        let mean = (0..500).map(|i| data.input(i)[0]).sum::<f64>() / 500.0;
        assert!((mean - 0.5).abs() < 0.05);
        assert!(collect_dataset(sys.as_ref(), &heater_spec(), None, 5, 1, 4).is_err());
    }

    #[test]
    fn membership_flags() {
        let sys = builtin_system("three_rooms").unwrap();
        let spec = rooms_spec();
        let data = collect_dataset(sys.as_ref(), &spec, None, 3000, 1, 8).unwrap();
        for i in 0..data.len() {
            assert_eq!(data.in_initial(i), spec.initial.contains(data.point(i)));
            assert_eq!(data.in_unsafe(i), spec.unsafe_set.contains(data.point(i)));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let sys = builtin_system("heater").unwrap();
        let spec = heater_spec();
        let u = InputPolytope::from_box(&[0.0], &[1.0]).unwrap();
        let data = collect_dataset(sys.as_ref(), &spec, Some(&u), 7, 3, 2).unwrap();
        data.write_csv(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("i,j,x_1,u_1,xp_1\n"));
        let back = TransitionDataset::read_csv(&path, &spec, 1, 2).unwrap();
        assert_eq!(back, data);

        let single = collect_dataset(sys.as_ref(), &spec, Some(&u), 1, 1, 2).unwrap();
        single.write_csv(&path).unwrap();
        assert_eq!(
            TransitionDataset::read_csv(&path, &spec, 1, 2).unwrap(),
            single
        );
    }

    #[test]
    fn fingerprint_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let key = DatasetKey {
            system: "builtin:three_rooms".into(),
            spec: rooms_spec(),
            inputs: None,
            n_samples: 10,
            n_hat: 2,
            seed: 1,
        };
        assert!(!key.matches_meta(&path));
        key.write_meta(&path).unwrap();
        assert!(key.matches_meta(&path));
        let other = DatasetKey {
            seed: 2,
            ..key.clone()
        };
        assert_ne!(other.fingerprint(), key.fingerprint());
        assert!(!other.matches_meta(&path));
    }

    #[test]
    fn failing_simulator_reports_indices() {
        let sys = AffineSystem::scalar(f64::MAX, 0.0);
        let spec = SafetySpec::new(
            Region::single(Aabb::from_intervals(&[(1.0, 2.0)]).unwrap()),
            Region::single(Aabb::from_intervals(&[(1.0, 1.1)]).unwrap()),
            Region::single(Aabb::from_intervals(&[(1.9, 2.0)]).unwrap()),
            1,
        )
        .unwrap();
        let err = collect_dataset(&sys, &spec, None, 2, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        let spec3 = rooms_spec();
        let err = collect_dataset(&sys, &spec3, None, 2, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
