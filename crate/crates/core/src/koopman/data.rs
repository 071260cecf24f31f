use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bank::Normalization;
use super::rng::{stream_rng, trajectory_stream};
use super::KoopmanError;
use crate::dynamics::{fmt17, Plant};

/// Provenance of a training set, persisted with the fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_traj: usize,
    pub n_steps: usize,
    #[serde(rename = "T")]
    pub step: f64,
    pub data_seed: u64,
    #[serde(default = "one")]
    pub u_scale: f64,
    #[serde(default)]
    pub freeze_anomaly: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            n_traj: 0,
            n_steps: 0,
            step: 1.0,
            data_seed: 0,
            u_scale: 1.0,
            freeze_anomaly: false,
        }
    }
}

/// A rollout that hit the plant's singularity guard and was cut short.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub trajectory: usize,
    pub step: usize,
    pub reason: String,
}

/// Snapshot triples in normalized units: column `j` of `Y` is one plant step
/// from column `j` of `X` under column `j` of `U`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingData {
    pub x: Vec<[f64; 6]>,
    pub u: Vec<[f64; 3]>,
    pub y: Vec<[f64; 6]>,
    /// `(trajectory, step)` of every column.
    pub origin: Vec<(u32, u32)>,
    pub meta: TrainingMeta,
    pub truncations: Vec<Truncation>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Builds a data set from raw columns (used for synthetic systems).
    pub fn from_columns(x: Vec<[f64; 6]>, u: Vec<[f64; 3]>, y: Vec<[f64; 6]>) -> Result<Self, KoopmanError> {
        if x.len() != u.len() || x.len() != y.len() {
            return Err(KoopmanError::Data(format!(
                "column counts differ: X {}, U {}, Y {}",
                x.len(),
                u.len(),
                y.len()
            )));
        }
        let origin = (0..x.len() as u32).map(|k| (0, k)).collect();
        Ok(Self {
            x,
            u,
            y,
            origin,
            meta: TrainingMeta::default(),
            truncations: Vec::new(),
        })
    }

    /// CSV with header `traj,k,x,y,z,vx,vy,vz,ux,uy,uz,nx,ny,nz,nvx,nvy,nvz`
    /// (`n*` is the successor state), 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * 300 + 200);
        let m = &self.meta;
        let _ = writeln!(
            out,
            "# n_traj={} n_steps={} T={} data_seed={} u_scale={} freeze_anomaly={}",
            m.n_traj,
            m.n_steps,
            fmt17(m.step),
            m.data_seed,
            fmt17(m.u_scale),
            m.freeze_anomaly
        );
        out.push_str("traj,k,x,y,z,vx,vy,vz,ux,uy,uz,nx,ny,nz,nvx,nvy,nvz\n");
        for j in 0..self.len() {
            let (tr, k) = self.origin[j];
            let _ = write!(out, "{tr},{k}");
            for v in self.x[j].iter().chain(&self.u[j]).chain(&self.y[j]) {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, KoopmanError> {
        let reader = BufReader::new(reader);
        let mut data = TrainingData::default();
        let mut saw_header = false;
        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| KoopmanError::Data(e.to_string()))?;
            if let Some(meta) = line.strip_prefix("# ") {
                data.meta = parse_meta(meta)?;
                continue;
            }
            if !saw_header {
                if line != "traj,k,x,y,z,vx,vy,vz,ux,uy,uz,nx,ny,nz,nvx,nvy,nvz" {
                    return Err(KoopmanError::Data(format!("unexpected header {line:?}")));
                }
                saw_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 17 {
                return Err(KoopmanError::Data(format!("line {}: expected 17 fields", line_no + 1)));
            }
            let bad = |e: &dyn std::fmt::Display| KoopmanError::Data(format!("line {}: {e}", line_no + 1));
            let tr: u32 = f[0].parse().map_err(|e| bad(&e))?;
            let k: u32 = f[1].parse().map_err(|e| bad(&e))?;
            let mut v = [0.0; 15];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = f[2 + i].parse().map_err(|e| bad(&e))?;
            }
            data.origin.push((tr, k));
            data.x.push(std::array::from_fn(|i| v[i]));
            data.u.push(std::array::from_fn(|i| v[6 + i]));
            data.y.push(std::array::from_fn(|i| v[9 + i]));
        }
        if !saw_header {
            return Err(KoopmanError::Data("missing CSV header".into()));
        }
        Ok(data)
    }
}

fn parse_meta(text: &str) -> Result<TrainingMeta, KoopmanError> {
    let mut meta = TrainingMeta::default();
    for kv in text.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| KoopmanError::Data(format!("bad metadata entry {kv:?}")))?;
        let err = |_| KoopmanError::Data(format!("bad metadata value {kv:?}"));
        match k {
            "n_traj" => meta.n_traj = v.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            "n_steps" => meta.n_steps = v.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            "T" => meta.step = v.parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            "data_seed" => meta.data_seed = v.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            "u_scale" => meta.u_scale = v.parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            "freeze_anomaly" => {
                meta.freeze_anomaly = v.parse().map_err(|e: std::str::ParseBoolError| err(e.to_string()))?
            }
            _ => {}
        }
    }
    Ok(meta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSpec {
    pub n_traj: usize,
    pub n_steps: usize,
    pub step: f64,
    pub seed: u64,
    pub u_scale: f64,
}

struct Segment {
    x: Vec<[f64; 6]>,
    u: Vec<[f64; 3]>,
    y: Vec<[f64; 6]>,
    truncation: Option<Truncation>,
}

/// Samples `n_traj` initial states from `U[−1,1]⁶` and controls from
/// `U[−1,1]³ · u_scale` (normalized units) and rolls the plant forward
/// `n_steps` from the mission epoch. Trajectory `i` draws from its own
/// substream, so the result does not depend on scheduling.
pub fn generate_training_data(
    plant: &Plant,
    normalization: &Normalization,
    spec: &TrainingSpec,
) -> Result<TrainingData, KoopmanError> {
    if spec.n_traj == 0 || spec.n_steps == 0 {
        return Err(KoopmanError::Config("n_traj and n_steps must be at least 1".into()));
    }
    if !(spec.step > 0.0 && spec.step.is_finite()) {
        return Err(KoopmanError::Config(format!("step must be positive, got {}", spec.step)));
    }
    let one = |i: usize| -> Segment {
        let mut rng = stream_rng(spec.seed, trajectory_stream(i));
        let mut s: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut seg = Segment {
            x: Vec::with_capacity(spec.n_steps),
            u: Vec::with_capacity(spec.n_steps),
            y: Vec::with_capacity(spec.n_steps),
            truncation: None,
        };
        for k in 0..spec.n_steps {
            let un: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0) * spec.u_scale);
            let phys = normalization.denormalize(&s).to_vector();
            let u = normalization.denormalize_control(&un).to_vector();
            match plant.step(&phys, &u, spec.step * k as f64, spec.step) {
                Ok(next) => {
                    let next = normalization.normalize(&crate::dynamics::RelativeState::from_vector(&next));
                    seg.x.push(s);
                    seg.u.push(un);
                    seg.y.push(next);
                    s = next;
                }
                Err(e) => {
                    seg.truncation = Some(Truncation {
                        trajectory: i,
                        step: k,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
        seg
    };

    #[cfg(feature = "parallel")]
    let segments: Vec<Segment> = {
        use rayon::prelude::*;
        (0..spec.n_traj).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let segments: Vec<Segment> = (0..spec.n_traj).map(one).collect();

    let total: usize = segments.iter().map(|s| s.x.len()).sum();
    let mut data = TrainingData {
        x: Vec::with_capacity(total),
        u: Vec::with_capacity(total),
        y: Vec::with_capacity(total),
        origin: Vec::with_capacity(total),
        meta: TrainingMeta {
            n_traj: spec.n_traj,
            n_steps: spec.n_steps,
            step: spec.step,
            data_seed: spec.seed,
            u_scale: spec.u_scale,
            freeze_anomaly: plant.clock.freeze_anomaly,
        },
        truncations: Vec::new(),
    };
    for (i, seg) in segments.into_iter().enumerate() {
        for k in 0..seg.x.len() {
            data.origin.push((i as u32, k as u32));
        }
        data.x.extend(seg.x);
        data.u.extend(seg.u);
        data.y.extend(seg.y);
        if let Some(t) = seg.truncation {
            log::warn!("training trajectory {} truncated at step {}: {}", t.trajectory, t.step, t.reason);
            data.truncations.push(t);
        }
    }
    Ok(data)
}

/// Checks that column `j` is one plant step of its predecessor.
pub fn spot_check(
    data: &TrainingData,
    plant: &Plant,
    normalization: &Normalization,
    j: usize,
) -> Result<f64, KoopmanError> {
    let phys = normalization.denormalize(&data.x[j]).to_vector();
    let u: Vector3<f64> = normalization.denormalize_control(&data.u[j]).to_vector();
    let t = data.meta.step * data.origin[j].1 as f64;
    let next = plant.step(&phys, &u, t, data.meta.step)?;
    let expect = Vector6::from(normalization.normalize(&crate::dynamics::RelativeState::from_vector(&next)));
    Ok((expect - Vector6::from(data.y[j])).amax())
}
