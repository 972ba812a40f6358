//! On-disk formats: JSON-lines traces, binary field dumps with a text header,
//! CSV tables and the sha256 manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, Domain, Point};
use crate::grid::Grid;
use crate::hierarchy::{orders_upto, Tower};
use crate::sim::{Event, EventTrace, TraceStats};

pub const SCHEMA_VERSION: u32 = 1;

/// First record of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub domain: Domain,
    pub sigma: f64,
    pub t_end: f64,
    pub master_seed: u64,
    pub n_paths: usize,
    /// Kernels, derived constants and anything else the writer wants kept.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "lowercase")]
enum Record {
    Header(TraceHeader),
    Path { path: u64, seed: u64, sigma: f64, t_end: f64, n_events: usize, stats: TraceStats, initial: Configuration },
    Event { t: f64, ty: u8, idx: u32, id: u64, from: Point, to: Point },
}

fn open_writer(path: &Path, gzip: bool) -> Result<Box<dyn Write>> {
    let f = BufWriter::new(File::create(path)?);
    Ok(if gzip { Box::new(GzEncoder::new(f, Compression::default())) } else { Box::new(f) })
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = f.read(&mut magic)?;
    let f = File::open(path)?;
    Ok(if n == 2 && magic == [0x1f, 0x8b] { Box::new(BufReader::new(GzDecoder::new(f))) } else { Box::new(BufReader::new(f)) })
}

/// Header record, then per path a path record followed by its events.
pub fn write_traces(path: &Path, header: &TraceHeader, traces: &[EventTrace], gzip: bool) -> Result<()> {
    let mut w = open_writer(path, gzip)?;
    let line = |w: &mut Box<dyn Write>, r: &Record| -> Result<()> {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&mut w, &Record::Header(header.clone()))?;
    for tr in traces {
        line(
            &mut w,
            &Record::Path {
                path: tr.path,
                seed: tr.seed,
                sigma: tr.sigma,
                t_end: tr.t_end,
                n_events: tr.events.len(),
                stats: tr.stats.clone(),
                initial: tr.initial.clone(),
            },
        )?;
        for e in &tr.events {
            line(&mut w, &Record::Event { t: e.t, ty: e.ty, idx: e.idx, id: e.id, from: e.from, to: e.to })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<(TraceHeader, Vec<EventTrace>)> {
    let r = open_reader(path)?;
    let mut header = None;
    let mut out: Vec<EventTrace> = Vec::new();
    let mut expect = 0usize;
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), k + 1)))?;
        match rec {
            Record::Header(h) => {
                if header.is_some() || k != 0 {
                    return Err(Error::Format("header must be the first and only header record".into()));
                }
                if h.schema_version != SCHEMA_VERSION {
                    return Err(Error::Format(format!("schema version {} (expected {SCHEMA_VERSION})", h.schema_version)));
                }
                header = Some(h);
            }
            Record::Path { path, seed, sigma, t_end, n_events, stats, initial } => {
                if expect != 0 {
                    return Err(Error::Format(format!("line {}: previous path is missing {expect} events", k + 1)));
                }
                expect = n_events;
                out.push(EventTrace { initial, events: Vec::with_capacity(n_events), t_end, seed, path, sigma, stats });
            }
            Record::Event { t, ty, idx, id, from, to } => {
                let Some(tr) = out.last_mut().filter(|_| expect > 0) else {
                    return Err(Error::Format(format!("line {}: unexpected event record", k + 1)));
                };
                tr.events.push(Event { t, ty, idx, id, from, to });
                expect -= 1;
            }
        }
    }
    let header = header.ok_or_else(|| Error::Format("missing header record".into()))?;
    if expect != 0 || out.len() != header.n_paths {
        return Err(Error::Format("trace file is truncated".into()));
    }
    Ok((header, out))
}

/// Text header of a field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    /// "correlation" or "quasi-observable".
    pub kind: String,
    pub grid: Grid,
    pub max_order: usize,
    pub theta: f64,
    pub t: f64,
    pub sigma: f64,
}

impl FieldHeader {
    fn to_text(&self) -> String {
        let orders: Vec<String> = orders_upto(self.max_order).iter().map(|(a, b)| format!("{a},{b}")).collect();
        format!(
            "# wrdyn field v{SCHEMA_VERSION}\nkind {}\nd {}\nn {}\nL {:?}\nmax_order {}\norders {}\ntheta {:?}\nt {:?}\nsigma {:?}\nencoding f64-le\n",
            self.kind,
            self.grid.d,
            self.grid.n,
            self.grid.l,
            self.max_order,
            orders.join(" "),
            self.theta,
            self.t,
            self.sigma
        )
    }

    fn from_text(s: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for line in s.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').ok_or_else(|| Error::Format(format!("bad header line '{line}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Format(format!("field header missing '{k}'")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        if get("encoding")? != "f64-le" {
            return Err(Error::Format("unsupported encoding".into()));
        }
        Ok(FieldHeader {
            kind: get("kind")?,
            grid: Grid { d: int("d")?, n: int("n")?, l: num("L")? },
            max_order: int("max_order")?,
            theta: num("theta")?,
            t: num("t")?,
            sigma: num("sigma")?,
        })
    }
}

/// Writes `<stem>.bin` (orders concatenated, little-endian f64) and `<stem>.hdr`.
pub fn write_field(dir: &Path, stem: &str, header: &FieldHeader, tower: &Tower) -> Result<(PathBuf, PathBuf)> {
    if tower.max_order != header.max_order || tower.grid != header.grid {
        return Err(Error::Invalid("field header does not describe the tower".into()));
    }
    let bin = dir.join(format!("{stem}.bin"));
    let hdr = dir.join(format!("{stem}.hdr"));
    let mut w = BufWriter::new(File::create(&bin)?);
    for v in tower.data.iter().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    std::fs::write(&hdr, header.to_text())?;
    Ok((bin, hdr))
}

pub fn read_field(dir: &Path, stem: &str) -> Result<(FieldHeader, Tower)> {
    let header = FieldHeader::from_text(&std::fs::read_to_string(dir.join(format!("{stem}.hdr")))?)?;
    let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
    let mut t = Tower::zeros(header.grid, header.max_order);
    let total: usize = t.data.iter().map(Vec::len).sum();
    if bytes.len() != 8 * total {
        return Err(Error::Format(format!("field dump has {} bytes, expected {}", bytes.len(), 8 * total)));
    }
    let mut it = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for v in t.data.iter_mut().flatten() {
        *v = it.next().unwrap();
    }
    Ok((header, t))
}

/// A table with a schema comment line, a header row and data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        Csv { schema: schema.to_string(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        let r: Vec<String> = row.into_iter().collect();
        assert_eq!(r.len(), self.columns.len(), "row width does not match {}", self.schema);
        self.rows.push(r);
    }

    pub fn to_text(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
        format!("# schema: {} v{SCHEMA_VERSION}\n{body}", self.schema)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Csv> {
        let (first, body) = text.split_once('\n').ok_or_else(|| Error::Format("missing schema line".into()))?;
        let schema = first
            .strip_prefix("# schema: ")
            .and_then(|s| s.rsplit_once(" v"))
            .map(|(s, _)| s.to_string())
            .ok_or_else(|| Error::Format("missing schema line".into()))?;
        let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let bad = |e: csv::Error| Error::Format(e.to_string());
        let columns: Vec<String> = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(bad)?.iter().map(String::from).collect());
        }
        Ok(Csv { schema, columns, rows })
    }

    pub fn read(path: &Path) -> Result<Csv> {
        Csv::parse(&std::fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

/// Shortest round-trip decimal.
pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub const MANIFEST: &str = "manifest.sha256";
pub const SIDECAR_LOG: &str = "run.log";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// `<sha256>  <bytes>  <relative path>` for every artifact except the
/// manifest and the timestamp sidecar, sorted by path.
pub fn write_manifest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    for e in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let e = e.map_err(|e| Error::Format(e.to_string()))?;
        if e.file_type().is_file() {
            let rel = e.path().strip_prefix(dir).unwrap().to_path_buf();
            if rel != Path::new(MANIFEST) && rel != Path::new(SIDECAR_LOG) {
                files.push(rel);
            }
        }
    }
    files.sort();
    let mut s = String::new();
    for rel in files {
        let p = dir.join(&rel);
        let size = std::fs::metadata(&p)?.len();
        s.push_str(&format!("{}  {}  {}\n", sha256_file(&p)?, size, rel.to_string_lossy().replace('\\', "/")));
    }
    std::fs::write(dir.join(MANIFEST), &s)?;
    Ok(s)
}

/// Paths whose hash no longer matches the manifest.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let mut parts = line.splitn(3, "  ");
        let (Some(hash), Some(_), Some(rel)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("bad manifest line '{line}'")));
        };
        let p = dir.join(rel);
        if !p.exists() || sha256_file(&p)? != hash {
            bad.push(rel.to_string());
        }
    }
    Ok(bad)
}

/// Appends a timestamped line to the sidecar log.
pub fn log_line(dir: &Path, msg: &str) -> Result<()> {
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join(SIDECAR_LOG))?;
    writeln!(f, "{now:.3} {msg}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{JumpFamily, KernelSet, RepulsionFamily};
    use crate::sim::{batch_simulate, InitialLaw};

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("wrdyn-io-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn traces_round_trip_plain_and_gzip() {
        let dom = Domain::new(1, 10.0).unwrap();
        let ks = KernelSet::symmetric(dom, JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, RepulsionFamily::Gaussian { height: 0.5, width: 0.5 }).unwrap();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 5, 1.0, 0.2, 9, 1).unwrap();
        let h = TraceHeader { schema_version: SCHEMA_VERSION, domain: dom, sigma: 0.2, t_end: 1.0, master_seed: 9, n_paths: 5, meta: serde_json::json!({"k": 1}) };
        let d = tmp("traces");
        for gz in [false, true] {
            let p = d.join(if gz { "t.jsonl.gz" } else { "t.jsonl" });
            write_traces(&p, &h, &tr, gz).unwrap();
            let (h2, tr2) = read_traces(&p).unwrap();
            assert_eq!(h2, h);
            assert_eq!(tr2, tr);
        }
    }

    #[test]
    fn field_round_trip() {
        let dom = Domain::new(1, 10.0).unwrap();
        let g = Grid::new(&dom, 8);
        let mut t = Tower::zeros(g, 2);
        t.set_fn((1, 1), |p| p[0][0] * 0.1 + p[1][0]).unwrap();
        let h = FieldHeader { kind: "correlation".into(), grid: g, max_order: 2, theta: -0.5, t: 0.1, sigma: 0.0 };
        let d = tmp("field");
        write_field(&d, "k", &h, &t).unwrap();
        let (h2, t2) = read_field(&d, "k").unwrap();
        assert_eq!(h2, h);
        assert_eq!(t2, t);
    }

    #[test]
    fn csv_and_manifest() {
        let mut c = Csv::new("demo", &["a", "b"]);
        c.push([fmt(0.1), fmt(2.0)]);
        assert_eq!(Csv::parse(&c.to_text()).unwrap(), c);
        let d = tmp("manifest");
        c.write(&d.join("x.csv")).unwrap();
        log_line(&d, "hello").unwrap();
        let m = write_manifest(&d).unwrap();
        assert_eq!(m.lines().count(), 1);
        assert!(verify_manifest(&d).unwrap().is_empty());
        std::fs::write(d.join("x.csv"), "changed").unwrap();
        assert_eq!(verify_manifest(&d).unwrap(), vec!["x.csv".to_string()]);
    }
}
