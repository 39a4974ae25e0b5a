//! Minimal deterministic SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::body::BodyTrajectory;
use crate::error::{Error, Result};
use crate::mpc::Telemetry;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

/// Line plot with axes, ticks and a legend. `None` when there is nothing
/// finite to draw.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Option<String> {
    let finite = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite();
    let all: Vec<&(f64, f64)> = series.iter().flat_map(|s| s.points.iter()).filter(finite).collect();
    if all.is_empty() {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 * y0.abs().max(1e-12) {
        y0 -= 0.5 * y0.abs().max(1e-6);
        y1 += 0.5 * y1.abs().max(1e-6);
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (80.0, 150.0, 40.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        ml + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 5.0,
            ml - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut path = String::new();
        for p in ser.points.iter().filter(finite) {
            let cmd = if path.is_empty() { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(p.0), sy(p.1));
        }
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.trim_end()
            );
        }
        let ly = mt + 14.0 + 18.0 * i as f64;
        let lx = ml + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Torso height against its reference.
pub fn height_plot(traj: &BodyTrajectory, reference: f64) -> Option<String> {
    let pts: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.t, s.torso.p[2])).collect();
    let refs = pts.iter().map(|p| (p.0, reference)).collect();
    line_plot(
        "Height tracking",
        "time (s)",
        "p_z (m)",
        &[Series::new("simulated", pts), Series::new("reference", refs)],
    )
}

pub fn velocity_plot(traj: &BodyTrajectory) -> Option<String> {
    let axis = |k: usize| traj.samples.iter().map(|s| (s.t, s.torso.v[k])).collect();
    line_plot(
        "Torso velocity",
        "time (s)",
        "velocity (m/s)",
        &[Series::new("v_x", axis(0)), Series::new("v_y", axis(1))],
    )
}

pub fn path_plot(traj: &BodyTrajectory) -> Option<String> {
    let pts = traj.samples.iter().map(|s| (s.torso.p[0], s.torso.p[1])).collect();
    line_plot("CoM path", "x (m)", "y (m)", &[Series::new("CoM", pts)])
}

pub fn cost_plot(telemetry: &Telemetry) -> Option<String> {
    let pts = telemetry.rows.iter().map(|r| (r.t, r.cost)).collect();
    line_plot("Tracking cost", "time (s)", "cost", &[Series::new("cost", pts)])
}

pub fn force_plot(telemetry: &Telemetry) -> Option<String> {
    let series: Vec<Series> = (0..4)
        .map(|i| {
            Series::new(
                &format!("f_z leg {}", i + 1),
                telemetry.rows.iter().map(|r| (r.t, r.u[3 * i + 2])).collect(),
            )
        })
        .collect();
    line_plot("Vertical force commands", "time (s)", "force (N)", &series)
}

/// Numeric CSV columns by header name; non-numeric cells become NaN.
pub fn read_columns<R: std::io::Read>(r: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(rec.get(k).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN));
        }
    }
    Ok(headers.into_iter().zip(cols).collect())
}

fn pairs(cols: &BTreeMap<String, Vec<f64>>, x: &str, y: &str) -> Option<Vec<(f64, f64)>> {
    Some(cols.get(x)?.iter().copied().zip(cols.get(y)?.iter().copied()).collect())
}

/// Renders every figure the files in `dir` support: `trajectory.csv`,
/// `telemetry.csv` and `costs.csv`. Returns the names of the files written.
pub fn plot_directory(dir: &Path, reference_height: f64) -> Result<Vec<String>> {
    let mut figures: Vec<(&str, Option<String>)> = Vec::new();
    let open = |name: &str| -> Result<Option<BTreeMap<String, Vec<f64>>>> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        read_columns(std::fs::File::open(path)?).map(Some)
    };
    if let Some(c) = open("trajectory.csv")? {
        let height = pairs(&c, "t", "pz").unwrap_or_default();
        let refs = height.iter().map(|p| (p.0, reference_height)).collect();
        figures.push((
            "height.svg",
            line_plot(
                "Height tracking",
                "time (s)",
                "p_z (m)",
                &[Series::new("simulated", height), Series::new("reference", refs)],
            ),
        ));
        let vel: Vec<Series> = ["vx", "vy"]
            .iter()
            .filter_map(|k| pairs(&c, "t", k).map(|p| Series::new(k, p)))
            .collect();
        figures.push(("velocity.svg", line_plot("Torso velocity", "time (s)", "velocity (m/s)", &vel)));
        let path = pairs(&c, "px", "py").unwrap_or_default();
        figures.push(("path.svg", line_plot("CoM path", "x (m)", "y (m)", &[Series::new("CoM", path)])));
    }
    if let Some(c) = open("telemetry.csv")? {
        let cost = pairs(&c, "t", "cost").unwrap_or_default();
        figures.push(("cost.svg", line_plot("Tracking cost", "time (s)", "cost", &[Series::new("cost", cost)])));
        let forces: Vec<Series> = (1..=4)
            .filter_map(|k| pairs(&c, "t", &format!("fz{k}")).map(|p| Series::new(&format!("f_z leg {k}"), p)))
            .collect();
        figures.push(("forces.svg", line_plot("Vertical force commands", "time (s)", "force (N)", &forces)));
    }
    if let Some(c) = open("costs.csv")? {
        let series: Vec<Series> = c
            .keys()
            .filter(|k| k.as_str() != "t")
            .filter_map(|k| pairs(&c, "t", k).map(|p| Series::new(k, p)))
            .collect();
        figures.push(("perturbation_costs.svg", line_plot("MPC cost under perturbations", "time (s)", "cost", &series)));
    }
    let mut written = Vec::new();
    for (name, svg) in figures {
        if let Some(svg) = svg {
            std::fs::write(dir.join(name), svg)?;
            written.push(name.to_string());
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_deterministic_and_skip_empty_data() {
        let s = [Series::new("a", vec![(0.0, 1.0), (1.0, 2.0)])];
        let a = line_plot("t", "x", "y", &s).unwrap();
        assert_eq!(a, line_plot("t", "x", "y", &s).unwrap());
        assert!(a.starts_with("<svg") && a.contains("<path"));
        assert!(line_plot("t", "x", "y", &[Series::new("a", vec![])]).is_none());
        assert!(cost_plot(&Telemetry::default()).is_none());
    }

    #[test]
    fn directory_plots_skip_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_directory(dir.path(), 0.04).unwrap().is_empty());
        std::fs::write(dir.path().join("telemetry.csv"), "t,cost,fz1\n0,1,5\n1,0.5,5.2\n").unwrap();
        let written = plot_directory(dir.path(), 0.04).unwrap();
        assert_eq!(written, vec!["cost.svg", "forces.svg"]);
        let cols = read_columns("a,b\n1,x\n".as_bytes()).unwrap();
        assert!(cols["b"][0].is_nan());
    }
}
