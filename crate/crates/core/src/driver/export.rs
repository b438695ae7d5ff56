//! OBJ meshes and CSV/JSON reports. Every float is written with 17
//! significant digits so that files parse back to identical bits.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;

use super::run::RunReport;
use crate::error::{Error, Result};
use crate::fields::{GridField, VectorField};

pub const CSV_HEADER: &str =
    "q,delta_q,lambda_q,Lambda_q,deficit_before,deficit_after,c1_increment,c2_estimate,wall_ms";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Triangle mesh of a surface `u: R^2 -> R^3`: one vertex per node in
/// flat-index order, two triangles per grid cell, 1-based indices.
pub fn mesh_obj(u: &VectorField) -> Result<String> {
    let d = u.domain();
    if d.dim() != 2 || u.dim() != 3 {
        return Err(Error::Dimension(format!(
            "mesh export needs u: R^2 -> R^3, got R^{} -> R^{}",
            d.dim(),
            u.dim()
        )));
    }
    let (p0, p1) = (d.points()[0], d.points()[1]);
    let mut out = String::with_capacity(d.len() * 80);
    let (x, y, z) = (u.comp(0), u.comp(1), u.comp(2));
    for i in 0..d.len() {
        let _ = writeln!(out, "v {} {} {}", num(x[i]), num(y[i]), num(z[i]));
    }
    for i in 0..p0 - 1 {
        for j in 0..p1 - 1 {
            let a = i * p1 + j + 1;
            let (b, c, e) = (a + 1, a + p1, a + p1 + 1);
            let _ = writeln!(out, "f {a} {c} {b}");
            let _ = writeln!(out, "f {b} {c} {e}");
        }
    }
    Ok(out)
}

pub fn export_mesh(u: &VectorField, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, mesh_obj(u)?)?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based vertex indices.
    pub triangles: Vec<[usize; 3]>,
}

/// Reads the subset of OBJ that [`mesh_obj`] writes.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut mesh = ObjMesh::default();
    let bad = |line: &str| Error::Io(format!("malformed OBJ line '{line}'"));
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let v: Vec<f64> = parts
                    .map(|s| s.parse::<f64>().map_err(|_| bad(line)))
                    .collect::<Result<_>>()?;
                let v: [f64; 3] = v.try_into().map_err(|_| bad(line))?;
                mesh.vertices.push(v);
            }
            Some("f") => {
                let f: Vec<usize> = parts
                    .map(|s| match s.parse::<usize>() {
                        Ok(k) if k >= 1 => Ok(k - 1),
                        _ => Err(bad(line)),
                    })
                    .collect::<Result<_>>()?;
                let f: [usize; 3] = f.try_into().map_err(|_| bad(line))?;
                mesh.triangles.push(f);
            }
            None => {}
            Some(_) => return Err(bad(line)),
        }
    }
    if let Some(t) = mesh
        .triangles
        .iter()
        .find(|t| t.iter().any(|&k| k >= mesh.vertices.len()))
    {
        return Err(Error::Io(format!(
            "triangle {t:?} references a missing vertex"
        )));
    }
    Ok(mesh)
}

pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (s, p) in report.stages.iter().zip(&report.plan) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.q,
            num(p.delta),
            num(p.lambda),
            num(p.big_lambda),
            num(s.deficit_before),
            num(s.deficit_after),
            num(s.c1_increment),
            num(s.c2_estimate),
            s.wall_ms.map(|w| w.to_string()).unwrap_or_default()
        );
    }
    out
}

/// Compact layout (the trait defaults) with floats printed as `{:.16e}`.
struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

pub fn report_from_json(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| Error::Io(e.to_string()))
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn export_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(report))?;
    std::fs::write(dir.join("report.json"), to_json(report)?)?;
    Ok(())
}
