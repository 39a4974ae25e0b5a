use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::body::BodyTrajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Simulation,
    External,
}

/// Timestamped positions of one marker (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub source: TrajectorySource,
    pub marker: String,
    pub t: Vec<f64>,
    pub pos: Vec<[f64; 3]>,
}

impl TrajectoryRecord {
    pub fn new(source: TrajectorySource, marker: &str, t: Vec<f64>, pos: Vec<[f64; 3]>) -> Result<Self> {
        let r = Self {
            source,
            marker: marker.into(),
            t,
            pos,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.pos.len() || self.t.is_empty() {
            return Err(Error::Dimension(format!(
                "marker {}: {} times for {} positions",
                self.marker,
                self.t.len(),
                self.pos.len()
            )));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "marker {}: timestamps must increase strictly",
                self.marker
            )));
        }
        Ok(())
    }

    /// Torso CoM path of a simulated run.
    pub fn com_of(traj: &BodyTrajectory) -> Result<Self> {
        Self::new(
            TrajectorySource::Simulation,
            "com",
            traj.samples.iter().map(|s| s.t).collect(),
            traj.samples.iter().map(|s| s.torso.p).collect(),
        )
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,marker_id,x,y,z")?;
        for (t, p) in self.t.iter().zip(&self.pos) {
            writeln!(w, "{t},{},{},{},{}", self.marker, p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct MarkerRow {
    t: f64,
    marker_id: String,
    x: f64,
    y: f64,
    z: f64,
}

/// Reads `t,marker_id,x,y,z` rows into one record per marker.
pub fn read_external_csv<R: Read>(r: R) -> Result<BTreeMap<String, TrajectoryRecord>> {
    let mut out: BTreeMap<String, TrajectoryRecord> = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    for row in reader.deserialize() {
        let row: MarkerRow = row.map_err(|e| Error::Parse(e.to_string()))?;
        let rec = out.entry(row.marker_id.clone()).or_insert_with(|| TrajectoryRecord {
            source: TrajectorySource::External,
            marker: row.marker_id,
            t: vec![],
            pos: vec![],
        });
        rec.t.push(row.t);
        rec.pos.push([row.x, row.y, row.z]);
    }
    for rec in out.values() {
        rec.validate()?;
    }
    Ok(out)
}

/// Simulation and external positions on the simulation time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedPair {
    pub t: Vec<f64>,
    pub sim: Vec<[f64; 3]>,
    pub external: Vec<[f64; 3]>,
}

impl AlignedPair {
    /// One coordinate of both series.
    pub fn axis(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.sim.iter().map(|p| p[k]).collect(),
            self.external.iter().map(|p| p[k]).collect(),
        )
    }
}

/// Interpolates `external` linearly onto the simulation samples inside the
/// overlap of both time ranges.
pub fn time_align(external: &TrajectoryRecord, sim: &TrajectoryRecord) -> Result<AlignedPair> {
    external.validate()?;
    sim.validate()?;
    let (e0, e1) = (external.t[0], *external.t.last().expect("validated"));
    let mut out = AlignedPair {
        t: vec![],
        sim: vec![],
        external: vec![],
    };
    let mut j = 0;
    for (t, p) in sim.t.iter().zip(&sim.pos) {
        if *t < e0 || *t > e1 {
            continue;
        }
        while j + 1 < external.t.len() && external.t[j + 1] < *t {
            j += 1;
        }
        let q = if j + 1 == external.t.len() || external.t[j] == *t {
            external.pos[j]
        } else {
            let (ta, tb) = (external.t[j], external.t[j + 1]);
            let s = (t - ta) / (tb - ta);
            let (a, b) = (external.pos[j], external.pos[j + 1]);
            std::array::from_fn(|k| a[k] + s * (b[k] - a[k]))
        };
        out.t.push(*t);
        out.sim.push(*p);
        out.external.push(q);
    }
    if out.t.is_empty() {
        return Err(Error::InvalidArgument(
            "external and simulated time ranges do not overlap".into(),
        ));
    }
    Ok(out)
}

/// Error metrics of `measured` against `reference` (e = measured - reference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percent of the reference range; `None` for a flat reference.
    pub nrmse: Option<f64>,
    pub avg_error: f64,
    pub error_pct: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn compute_metrics(reference: &[f64], measured: &[f64]) -> Result<Metrics> {
    if reference.len() != measured.len() || reference.is_empty() {
        return Err(Error::Dimension(format!(
            "metric series lengths {} and {}",
            reference.len(),
            measured.len()
        )));
    }
    let n = reference.len() as f64;
    let e: Vec<f64> = measured.iter().zip(reference).map(|(m, r)| m - r).collect();
    let rmse = (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
    let avg_error = (e.iter().sum::<f64>() / n).abs();
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let (nrmse, error_pct, accuracy) = if range > 0.0 {
        let pct = avg_error / range * 100.0;
        (Some(rmse / range * 100.0), Some(pct), Some(100.0 - pct))
    } else if avg_error == 0.0 && rmse == 0.0 {
        (None, Some(0.0), Some(100.0))
    } else {
        (None, None, None)
    };
    Ok(Metrics {
        rmse,
        mae,
        nrmse,
        avg_error,
        error_pct,
        accuracy,
    })
}
