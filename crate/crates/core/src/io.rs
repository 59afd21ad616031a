//! Snapshot, ledger and manifest files.
//!
//! Snapshots come in two forms with identical content: legacy VTK ASCII
//! structured points (`.vtk`) and a little-endian binary twin (`.chb`).
//! Both round-trip exactly; the ASCII writer prints shortest round-trip
//! decimal representations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsLedger;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::stepper::SimState;

const MAGIC: &[u8; 8] = b"CHBSNAP1";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotField {
    pub name: String,
    /// 1 for scalars, 2 for planar vectors (interleaved).
    pub components: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub fields: Vec<SnapshotField>,
}

impl Snapshot {
    /// Fields `phi`, `mu` (physical, `μ̃ + h`), `mu_tilde`, `sigma`, `h`, `p`, `v`.
    pub fn from_state(grid: &Grid, state: &SimState) -> Self {
        let scalar = |name: &str, v: &[f64]| SnapshotField { name: name.into(), components: 1, values: v.to_vec() };
        Snapshot {
            t: state.t,
            step: state.step,
            nx: grid.nx(),
            ny: grid.ny(),
            lx: grid.lx(),
            ly: grid.ly(),
            fields: vec![
                scalar("phi", state.phi.values()),
                scalar("mu", &state.physical_mu()),
                scalar("mu_tilde", state.mu.values()),
                scalar("sigma", state.sigma.values()),
                scalar("h", state.h.values()),
                scalar("p", state.p.values()),
                SnapshotField { name: "v".into(), components: 2, values: state.v.values().to_vec() },
            ],
        }
    }

    pub fn field(&self, name: &str) -> Option<&SnapshotField> {
        self.fields.iter().find(|f| f.name == name)
    }

    fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    fn check(&self) -> Result<()> {
        for f in &self.fields {
            if f.components == 0 || f.components > 2 || f.values.len() != f.components * self.node_count() {
                return Err(Error::Format(format!("field {} has {} values for {} nodes", f.name, f.values.len(), self.node_count())));
            }
        }
        Ok(())
    }
}

pub fn write_vtk(path: &Path, snap: &Snapshot) -> Result<()> {
    snap.check()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "chb t={:?} step={} lx={:?} ly={:?}", snap.t, snap.step, snap.lx, snap.ly)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", snap.nx + 1, snap.ny + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {:?} {:?} 1", snap.lx / snap.nx as f64, snap.ly / snap.ny as f64)?;
    writeln!(w, "POINT_DATA {}", snap.node_count())?;
    for f in &snap.fields {
        if f.components == 1 {
            writeln!(w, "SCALARS {} double 1", f.name)?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in &f.values {
                writeln!(w, "{v:?}")?;
            }
        } else {
            writeln!(w, "VECTORS {} double", f.name)?;
            for c in f.values.chunks(2) {
                writeln!(w, "{:?} {:?} 0", c[0], c[1])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_vtk(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path)?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with("# vtk DataFile")) {
        return Err(bad("missing vtk header"));
    }
    let title = lines.next().ok_or_else(|| bad("missing title"))?;
    let mut t = None;
    let mut step = None;
    let mut lx = None;
    let mut ly = None;
    for kv in title.split_whitespace().skip(1) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed title"))?;
        match k {
            "t" => t = v.parse().ok(),
            "step" => step = v.parse().ok(),
            "lx" => lx = v.parse().ok(),
            "ly" => ly = v.parse().ok(),
            _ => {}
        }
    }
    let (mut nx, mut ny, mut count) = (None, None, None);
    let mut fields = Vec::new();
    let mut tokens = lines.flat_map(|l| l.split_whitespace());
    while let Some(tok) = tokens.next() {
        match tok {
            "ASCII" | "DATASET" | "STRUCTURED_POINTS" | "ORIGIN" | "SPACING" | "LOOKUP_TABLE" | "default" => {}
            "DIMENSIONS" => {
                let mut d = || tokens.next().and_then(|s| s.parse::<usize>().ok());
                let (a, b) = (d(), d());
                let _ = d();
                nx = a.map(|a| a - 1);
                ny = b.map(|b| b - 1);
            }
            "POINT_DATA" => count = tokens.next().and_then(|s| s.parse::<usize>().ok()),
            "SCALARS" | "VECTORS" => {
                let components = if tok == "SCALARS" { 1 } else { 2 };
                let name = tokens.next().ok_or_else(|| bad("field without name"))?.to_string();
                let _ty = tokens.next();
                let n = count.ok_or_else(|| bad("field before POINT_DATA"))?;
                if components == 1 {
                    // component count, then the lookup table clause
                    let _ = tokens.next();
                    let _ = tokens.next();
                    let _ = tokens.next();
                }
                let per_node = if components == 1 { 1 } else { 3 };
                let mut values = Vec::with_capacity(n * components);
                for i in 0..n * per_node {
                    let s = tokens.next().ok_or_else(|| bad("truncated field"))?;
                    let v: f64 = s.parse().map_err(|_| bad("bad number"))?;
                    if per_node == 1 || i % 3 < 2 {
                        values.push(v);
                    }
                }
                fields.push(SnapshotField { name, components, values });
            }
            _ => {
                // numbers of ORIGIN/SPACING
                if tok.parse::<f64>().is_err() {
                    return Err(bad(&format!("unexpected token {tok}")));
                }
            }
        }
    }
    let snap = Snapshot {
        t: t.ok_or_else(|| bad("missing time"))?,
        step: step.ok_or_else(|| bad("missing step"))?,
        nx: nx.ok_or_else(|| bad("missing dimensions"))?,
        ny: ny.ok_or_else(|| bad("missing dimensions"))?,
        lx: lx.ok_or_else(|| bad("missing lx"))?,
        ly: ly.ok_or_else(|| bad("missing ly"))?,
        fields,
    };
    snap.check()?;
    Ok(snap)
}

pub fn write_binary(path: &Path, snap: &Snapshot) -> Result<()> {
    snap.check()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&snap.t.to_le_bytes())?;
    for n in [snap.step, snap.nx, snap.ny] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&snap.lx.to_le_bytes())?;
    w.write_all(&snap.ly.to_le_bytes())?;
    w.write_all(&(snap.fields.len() as u32).to_le_bytes())?;
    for f in &snap.fields {
        w.write_all(&(f.name.len() as u32).to_le_bytes())?;
        w.write_all(f.name.as_bytes())?;
        w.write_all(&(f.components as u32).to_le_bytes())?;
        w.write_all(&(f.values.len() as u64).to_le_bytes())?;
        for v in &f.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated binary snapshot".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_binary(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format(format!("{}: not a binary snapshot", path.display())));
    }
    let t = c.f64()?;
    let step = c.u64()? as usize;
    let nx = c.u64()? as usize;
    let ny = c.u64()? as usize;
    let lx = c.f64()?;
    let ly = c.f64()?;
    let nf = c.u32()? as usize;
    let mut fields = Vec::with_capacity(nf.min(64));
    for _ in 0..nf {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format("field name is not UTF-8".into()))?;
        let components = c.u32()? as usize;
        let n = c.u64()? as usize;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Format("field too large".into()))?)?;
        let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        fields.push(SnapshotField { name, components, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after snapshot".into()));
    }
    let snap = Snapshot { t, step, nx, ny, lx, ly, fields };
    snap.check()?;
    Ok(snap)
}

pub fn write_ledger(path: &Path, ledger: &DiagnosticsLedger) -> Result<()> {
    fs::write(path, ledger.to_csv())?;
    Ok(())
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone)]
pub struct Manifest<'a> {
    pub config_text: &'a str,
    pub seed: u64,
    pub steps: usize,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub status: &'a str,
}

pub fn write_manifest(path: &Path, m: &Manifest<'_>) -> Result<()> {
    let doc = serde_json::json!({
        "program": "chb",
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": sha256_hex(m.config_text),
        "config": m.config_text,
        "seed": m.seed,
        "steps": m.steps,
        "status": m.status,
        "files": m.files,
        "warnings": m.warnings,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes the snapshots of one run into a directory it owns.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    vtk: bool,
    binary: bool,
    files: Vec<String>,
}

impl RunWriter {
    pub fn create(dir: &Path, vtk: bool, binary: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), vtk, binary, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn snapshot(&mut self, grid: &Grid, state: &SimState) -> Result<()> {
        let snap = Snapshot::from_state(grid, state);
        if self.vtk {
            let name = format!("snapshot_{:06}.vtk", state.step);
            write_vtk(&self.dir.join(&name), &snap)?;
            self.files.push(name);
        }
        if self.binary {
            let name = format!("snapshot_{:06}.chb", state.step);
            write_binary(&self.dir.join(&name), &snap)?;
            self.files.push(name);
        }
        Ok(())
    }

    pub fn ledger(&mut self, ledger: &DiagnosticsLedger) -> Result<()> {
        write_ledger(&self.dir.join("ledger.csv"), ledger)?;
        self.files.push("ledger.csv".into());
        Ok(())
    }

    pub fn manifest(&self, config_text: &str, seed: u64, steps: usize, warnings: Vec<String>, status: &str) -> Result<()> {
        let m = Manifest { config_text, seed, steps, files: self.files.clone(), warnings, status };
        write_manifest(&self.dir.join("manifest.json"), &m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        let n = 3 * 2;
        Snapshot {
            t: 0.1 + 0.2,
            step: 3,
            nx: 2,
            ny: 1,
            lx: 1.0 / 3.0,
            ly: 0.7,
            fields: vec![
                SnapshotField { name: "phi".into(), components: 1, values: (0..n).map(|i| (i as f64).sin() / 7.0).collect() },
                SnapshotField { name: "v".into(), components: 2, values: (0..2 * n).map(|i| -1e-300 * i as f64 + 1e-17).collect() },
            ],
        }
    }

    #[test]
    fn vtk_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.vtk");
        let s = sample();
        write_vtk(&p, &s).unwrap();
        let r = read_vtk(&p).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.chb");
        let s = sample();
        write_binary(&p, &s).unwrap();
        assert_eq!(read_binary(&p).unwrap(), s);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_binary(&p), Err(Error::Format(_))));
    }

    #[test]
    fn sha256_of_empty_text() {
        assert_eq!(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
