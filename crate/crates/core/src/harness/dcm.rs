use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mpc::Feasibility;

/// Feasibility of the applied input per tick, for each leg and in total.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DcmGrid {
    pub t: Vec<f64>,
    pub legs: Vec<[bool; 4]>,
    pub total: Vec<bool>,
}

impl DcmGrid {
    pub fn push(&mut self, t: f64, f: Feasibility) {
        self.t.push(t);
        self.legs.push(f.legs);
        self.total.push(f.total);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Red cells in the Total row.
    pub fn infeasible_count(&self) -> usize {
        self.total.iter().filter(|f| !**f).count()
    }

    pub fn all_feasible(&self) -> bool {
        self.total.iter().all(|f| *f) && self.legs.iter().flatten().all(|f| *f)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty constraint map".into()));
        }
        writeln!(w, "t,leg1,leg2,leg3,leg4,total")?;
        for k in 0..self.len() {
            write!(w, "{}", self.t[k])?;
            for f in self.legs[k] {
                write!(w, ",{}", f as u8)?;
            }
            writeln!(w, ",{}", self.total[k] as u8)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut grid = Self::default();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        for row in reader.deserialize() {
            let (t, l1, l2, l3, l4, total): (f64, u8, u8, u8, u8, u8) =
                row.map_err(|e| Error::Parse(e.to_string()))?;
            let flag = |v: u8| match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Parse(format!("bad feasibility flag {v}"))),
            };
            let legs = [flag(l1)?, flag(l2)?, flag(l3)?, flag(l4)?];
            grid.push(t, Feasibility { legs, total: flag(total)? });
        }
        Ok(grid)
    }

    /// Heat map: one column per tick, rows Leg1..Leg4 and Total.
    pub fn to_svg(&self) -> Result<String> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty constraint map".into()));
        }
        let (left, top, cell_h) = (60.0, 30.0, 24.0);
        let width = 800.0;
        let cell_w = width / self.len() as f64;
        let height = top + 5.0 * cell_h + 40.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
            left + width + 20.0
        );
        let _ = writeln!(s, r#"<text x="{left}" y="18">Dynamic constraint map</text>"#);
        let labels = ["Leg1", "Leg2", "Leg3", "Leg4", "Total"];
        for (row, label) in labels.iter().enumerate() {
            let y = top + row as f64 * cell_h;
            let _ = writeln!(s, r#"<text x="4" y="{:.1}">{label}</text>"#, y + cell_h * 0.7);
            // merge runs of equal cells to keep the file small
            let value = |k: usize| if row < 4 { self.legs[k][row] } else { self.total[k] };
            let mut k = 0;
            while k < self.len() {
                let v = value(k);
                let mut end = k + 1;
                while end < self.len() && value(end) == v {
                    end += 1;
                }
                let color = if v { "#2ca02c" } else { "#d62728" };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{y:.1}" width="{:.3}" height="{cell_h}" fill="{color}"/>"#,
                    left + k as f64 * cell_w,
                    (end - k) as f64 * cell_w
                );
                k = end;
            }
        }
        let t0 = self.t[0];
        let t1 = *self.t.last().expect("non-empty");
        let base = top + 5.0 * cell_h + 16.0;
        let _ = writeln!(s, r#"<text x="{left}" y="{base}">{t0:.2} s</text>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{base}" text-anchor="end">{t1:.2} s</text>"#,
            left + width
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{base}" text-anchor="middle">time (s); green feasible, red infeasible</text>"#,
            left + width / 2.0
        );
        s.push_str("</svg>\n");
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_counts() {
        let mut g = DcmGrid::default();
        g.push(0.0, Feasibility { legs: [true; 4], total: true });
        g.push(0.033, Feasibility { legs: [true; 4], total: false });
        assert_eq!(g.infeasible_count(), 1);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,leg1,leg2,leg3,leg4,total\n0,1,1,1,1,1\n"));
        assert_eq!(DcmGrid::read_csv(&buf[..]).unwrap(), g);
        let svg = g.to_svg().unwrap();
        assert!(svg.contains("#d62728"));
        assert!(DcmGrid::default().to_svg().is_err());
    }
}
