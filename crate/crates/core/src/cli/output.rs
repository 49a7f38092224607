//! Result files: sweep CSV, JSON meshes, domain CSV and the SVG domain map.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dependability::RedundancyMode;
use crate::error::{Result, SimError};
use crate::experiment::{
    load_index, load_point, pb0_index, Cell, MeshPoint, ReliabilityMesh, WorkingDomainMap, LOAD_POINTS, PB0_AXIS,
};
use crate::metrics::{t_quantile, RunStats};
use crate::transport::Protocol;

/// One line of the sweep CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub clusters: u32,
    pub redundancy: u32,
    pub pb0: f64,
    pub mode: RedundancyMode,
    pub protocol: Protocol,
    pub str_mean: f64,
    /// `None` when fewer than two runs were made.
    pub str_ci99: Option<f64>,
    pub pdr_mean: f64,
    pub fsr_mean: f64,
    pub runs: usize,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 11] = [
    "clusters", "redundancy", "pb0", "mode", "protocol", "str_mean", "str_ci99", "pdr_mean", "fsr_mean", "runs", "seed",
];

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

impl ResultRow {
    pub fn from_point(p: &MeshPoint) -> Self {
        Self {
            clusters: p.cell.load.clusters,
            redundancy: p.cell.load.redundancy,
            pb0: p.cell.pb0,
            mode: p.mode,
            protocol: p.protocol,
            str_mean: p.str.mean,
            str_ci99: p.str.ci_half_width,
            pdr_mean: p.pdr_mean,
            fsr_mean: p.fsr_mean,
            runs: p.str.n,
            seed: p.seed,
        }
    }

    fn sort_key(&self) -> (u32, u32, usize, RedundancyMode, Protocol) {
        (
            self.clusters,
            self.redundancy,
            pb0_index(self.pb0).unwrap_or(usize::MAX),
            self.mode,
            self.protocol,
        )
    }

    fn fields(&self) -> [String; 11] {
        [
            self.clusters.to_string(),
            self.redundancy.to_string(),
            fixed(self.pb0),
            self.mode.to_string(),
            self.protocol.to_string(),
            fixed(self.str_mean),
            self.str_ci99.map(fixed).unwrap_or_default(),
            fixed(self.pdr_mean),
            fixed(self.fsr_mean),
            self.runs.to_string(),
            self.seed.to_string(),
        ]
    }

    /// Rebuilds a mesh point; the standard deviation is recovered from the
    /// interval half-width.
    pub fn to_point(&self) -> Result<MeshPoint> {
        let bad = |what: &str| SimError::Input(format!("row {:?}: {what}", self.fields()));
        let l = load_index(self.redundancy, self.clusters).ok_or_else(|| bad("load not on the axis"))?;
        let p = pb0_index(self.pb0).ok_or_else(|| bad("pb0 not on the axis"))?;
        let stddev = match (self.str_ci99, self.runs) {
            (Some(ci), n) if n >= 2 => ci * (n as f64).sqrt() / t_quantile(n - 1),
            _ => 0.0,
        };
        Ok(MeshPoint {
            cell: Cell {
                load_index: l,
                pb0_index: p,
                load: load_point(l),
                pb0: PB0_AXIS[p],
            },
            mode: self.mode,
            protocol: self.protocol,
            str: RunStats {
                n: self.runs,
                mean: self.str_mean,
                stddev,
                ci_half_width: self.str_ci99,
            },
            pdr_mean: self.pdr_mean,
            fsr_mean: self.fsr_mean,
            seed: self.seed,
        })
    }
}

/// Writes the header and rows sorted by (clusters, redundancy, pb0, mode, protocol).
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(ResultRow::sort_key);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &sorted {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(SimError::Input(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| SimError::Input(format!("`{}` in column {} is not a number", field(i), CSV_HEADER[i])))
        };
        let int = |i: usize| -> Result<u64> {
            field(i)
                .parse()
                .map_err(|_| SimError::Input(format!("`{}` in column {} is not an integer", field(i), CSV_HEADER[i])))
        };
        rows.push(ResultRow {
            clusters: int(0)? as u32,
            redundancy: int(1)? as u32,
            pb0: num(2)?,
            mode: field(3).parse().map_err(|e| SimError::Input(format!("{e}")))?,
            protocol: field(4).parse().map_err(|e| SimError::Input(format!("{e}")))?,
            str_mean: num(5)?,
            str_ci99: if field(6).is_empty() { None } else { Some(num(6)?) },
            pdr_mean: num(7)?,
            fsr_mean: num(8)?,
            runs: int(9)? as usize,
            seed: int(10)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub meshes: Vec<ReliabilityMesh>,
}

pub fn write_mesh_json<W: Write>(meshes: &[ReliabilityMesh], mut out: W) -> Result<()> {
    let file = MeshFile { meshes: meshes.to_vec() };
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_mesh_json<R: Read>(input: R) -> Result<Vec<ReliabilityMesh>> {
    let file: MeshFile = serde_json::from_reader(input)?;
    Ok(file.meshes)
}

/// Fixed fill color of each protocol on the domain map.
pub fn protocol_color(p: Protocol) -> &'static str {
    match p {
        Protocol::Bbr => "#1f77b4",
        Protocol::Copa => "#ff7f0e",
        Protocol::Cubic => "#2ca02c",
        Protocol::Eaatp => "#d62728",
        Protocol::Indigo => "#9467bd",
        Protocol::Verus => "#8c564b",
    }
}

pub const BLANK_COLOR: &str = "#ffffff";
pub const MISSING_COLOR: &str = "#d9d9d9";

pub fn write_domain_csv<W: Write>(map: &WorkingDomainMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "clusters", "redundancy", "pb0", "best_protocol", "best_mode", "best_str", "threshold", "modes",
    ])?;
    for c in &map.cells {
        let load = load_point(c.load_index);
        w.write_record([
            load.clusters.to_string(),
            load.redundancy.to_string(),
            fixed(PB0_AXIS[c.pb0_index]),
            c.best.map(|p| p.to_string()).unwrap_or_default(),
            c.best_mode.map(|m| m.to_string()).unwrap_or_default(),
            fixed(c.best_str),
            fixed(map.threshold),
            map.selection.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const CELL_W: usize = 8;
const CELL_H: usize = 28;
const LEFT: usize = 70;
const TOP: usize = 30;

/// Load on the horizontal axis, Pb0 rising upwards. Every cell carries its
/// indices and protocol as data attributes.
pub fn domain_svg(map: &WorkingDomainMap) -> String {
    let grid_w = LOAD_POINTS * CELL_W;
    let grid_h = PB0_AXIS.len() * CELL_H;
    let legend_y = TOP + grid_h + 40;
    let width = LEFT + grid_w + 20;
    let height = legend_y + 30;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        "<desc>working domain, minimum STR {:.6}, modes {}{}</desc>",
        map.threshold,
        map.selection,
        if map.partial { ", partial" } else { "" }
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="{BLANK_COLOR}"/>"#);
    for l in 0..LOAD_POINTS {
        for p in 0..PB0_AXIS.len() {
            let x = LEFT + l * CELL_W;
            let y = TOP + (PB0_AXIS.len() - 1 - p) * CELL_H;
            let (fill, label) = match map.get(l, p) {
                None => (MISSING_COLOR, "missing".to_string()),
                Some(c) => match c.best {
                    Some(proto) => (protocol_color(proto), proto.to_string()),
                    None => (BLANK_COLOR, "blank".to_string()),
                },
            };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" data-load="{l}" data-pb0="{p}" data-protocol="{label}"/>"#
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{grid_w}" height="{grid_h}" fill="none" stroke="#000"/>"##
    );
    for (p, pb0) in PB0_AXIS.iter().enumerate() {
        let y = TOP + (PB0_AXIS.len() - 1 - p) * CELL_H + CELL_H / 2 + 4;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{pb0}</text>"#, LEFT - 6);
    }
    for l in (0..LOAD_POINTS).step_by(crate::scenario::CLUSTER_DOMAIN.len()) {
        let x = LEFT + l * CELL_W;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}">{}</text>"#,
            TOP + grid_h + 14,
            load_point(l).label()
        );
    }
    let _ = writeln!(s, r#"<text x="4" y="{}">Pb0</text>"#, TOP - 10);
    let mut x = LEFT;
    let mut legend: Vec<(&str, String)> = Protocol::ALL.iter().map(|p| (protocol_color(*p), p.to_string())).collect();
    legend.push((BLANK_COLOR, format!("STR < {:.2}", map.threshold)));
    if map.partial {
        legend.push((MISSING_COLOR, "not computed".to_string()));
    }
    for (color, label) in legend {
        let _ = writeln!(
            s,
            r##"<rect x="{x}" y="{}" width="12" height="12" fill="{color}" stroke="#000" data-legend="{label}"/>"##,
            legend_y - 10
        );
        let _ = writeln!(s, r#"<text x="{}" y="{legend_y}">{label}</text>"#, x + 16);
        x += 16 + 8 * label.len() + 14;
    }
    s.push_str("</svg>\n");
    s
}

/// Cell fills of a rendered map keyed by (load index, Pb0 index).
pub fn svg_cell_labels(svg: &str) -> Vec<((usize, usize), String)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let start = line.find(&format!("{name}=\""))? + name.len() + 2;
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter_map(|line| {
            let l = attr(line, "data-load")?.parse().ok()?;
            let p = attr(line, "data-pb0")?.parse().ok()?;
            Some(((l, p), attr(line, "data-protocol")?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{reliability_mesh, working_domain, ModeSelection};
    use crate::metrics::aggregate;

    fn row(clusters: u32, redundancy: u32, pb0: f64, protocol: Protocol, mean: f64) -> ResultRow {
        let stats = aggregate(&[mean - 0.01, mean, mean + 0.01]);
        ResultRow {
            clusters,
            redundancy,
            pb0,
            mode: RedundancyMode::None,
            protocol,
            str_mean: stats.mean,
            str_ci99: stats.ci_half_width,
            pdr_mean: 0.9,
            fsr_mean: 0.01,
            runs: stats.n,
            seed: 4,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn csv_is_sorted_fixed_and_round_trips() {
        let rows = vec![
            row(16, 1, 0.1, Protocol::Eaatp, 0.75),
            row(8, 2, 0.001, Protocol::Cubic, 0.8),
            row(8, 1, 0.1, Protocol::Verus, 0.7),
            row(8, 1, 0.001, Protocol::Bbr, 0.9),
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "8,1,0.001000,none,BBR,0.900000,0.057301,0.900000,0.010000,3,4");
        assert!(lines[2].starts_with("8,1,0.100000,none,Verus"));
        assert!(lines[4].starts_with("16,1,"));

        let back = read_csv(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        let p = back[0].to_point().unwrap();
        assert!((p.str.stddev - 0.01).abs() < 1e-5);
    }

    #[test]
    fn mesh_json_round_trips() {
        let rows = [row(8, 1, 0.001, Protocol::Bbr, 0.9), row(8, 1, 0.002, Protocol::Bbr, 0.8)];
        let pts: Vec<_> = rows.iter().map(|r| r.to_point().unwrap()).collect();
        let meshes = reliability_mesh(&pts);
        let mut buf = Vec::new();
        write_mesh_json(&meshes, &mut buf).unwrap();
        assert_eq!(read_mesh_json(buf.as_slice()).unwrap(), meshes);
    }

    #[test]
    fn svg_colors_follow_the_map() {
        let rows = [
            row(8, 1, 0.001, Protocol::Bbr, 0.9),
            row(8, 1, 0.001, Protocol::Copa, 0.95),
            row(8, 1, 0.002, Protocol::Bbr, 0.5),
        ];
        let pts: Vec<_> = rows.iter().map(|r| r.to_point().unwrap()).collect();
        let map = working_domain(&reliability_mesh(&pts), 0.7, ModeSelection::BestAcrossModes);
        let svg = domain_svg(&map);
        assert_eq!(svg, domain_svg(&map));
        let labels = svg_cell_labels(&svg);
        assert_eq!(labels.len(), 900);
        let get = |k| labels.iter().find(|(key, _)| *key == k).unwrap().1.clone();
        assert_eq!(get((0, 0)), "Copa");
        assert_eq!(get((0, 1)), "blank");
        assert_eq!(get((5, 5)), "missing");
        for p in Protocol::ALL {
            assert!(svg.contains(&format!("data-legend=\"{p}\"")));
        }
    }

    #[test]
    fn all_blank_map_is_white() {
        let pts: Vec<_> = [row(8, 1, 0.001, Protocol::Bbr, 0.3)]
            .iter()
            .map(|r| r.to_point().unwrap())
            .collect();
        let map = working_domain(&reliability_mesh(&pts), 0.7, ModeSelection::BestAcrossModes);
        let svg = domain_svg(&map);
        assert!(svg_cell_labels(&svg).iter().all(|(_, l)| l == "blank" || l == "missing"));
        let mut buf = Vec::new();
        write_domain_csv(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "8,1,0.001000,,,0.300000,0.700000,best-across-modes");
    }
}
