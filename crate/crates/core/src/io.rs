//! File formats and reproducibility plumbing: θ JSON, sample-batch binary,
//! chaos-family JSON, CSV/SVG writers, run manifests, and seed derivation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::{ChaosElement, ChaosFamily};
use crate::circulant::ThetaField;
use crate::error::{Error, Result};
use crate::field::SampleBatch;
use crate::grid::Grid;
use crate::torus::{LatticePoint, TorusGeometry};

/// Locale-independent numeric formatting with 17 significant digits.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a CSV file with a header row; cells are already formatted.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---- theta JSON ----

#[derive(Serialize, Deserialize)]
struct ThetaJson {
    p: usize,
    /// One representative per orbit: [i, j, value].
    entries: Vec<(i64, i64, f64)>,
}

/// Store one representative per s-orbit; the loader symmetrizes.
pub fn save_theta<P: AsRef<Path>>(path: P, theta: &ThetaField) -> Result<()> {
    let geom = *theta.geometry();
    let p = geom.p();
    let mut entries = Vec::new();
    for i in 0..p {
        for j in 0..p {
            let pt = LatticePoint { i, j };
            let v = theta.values().get(i, j);
            if v != 0.0 && pt <= geom.neg(pt) {
                entries.push((i as i64, j as i64, v));
            }
        }
    }
    let doc = ThetaJson { p, entries };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Load, symmetrize, and validate a θ grid.
pub fn load_theta<P: AsRef<Path>>(path: P) -> Result<ThetaField> {
    let text = std::fs::read_to_string(path)?;
    let doc: ThetaJson = serde_json::from_str(&text)?;
    let geom = TorusGeometry::new(doc.p)?;
    ThetaField::from_entries(geom, &doc.entries)
}

// ---- sample batch binary ----

const BATCH_MAGIC: &[u8; 4] = b"GMRF";
const BATCH_VERSION: u32 = 1;

/// Layout: magic "GMRF", version u32, p u32, n u32, then n·p² little-endian
/// f64 row-major per replicate, then the 8-byte seed.
pub fn save_batch<P: AsRef<Path>>(path: P, batch: &SampleBatch) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(BATCH_MAGIC)?;
    file.write_all(&BATCH_VERSION.to_le_bytes())?;
    file.write_all(&(batch.geometry.p() as u32).to_le_bytes())?;
    file.write_all(&(batch.n as u32).to_le_bytes())?;
    for field in &batch.fields {
        for &v in field.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.write_all(&batch.seed.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn load_batch<P: AsRef<Path>>(path: P) -> Result<SampleBatch> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::InvalidArgument("not a GMRF batch file".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != BATCH_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported batch version {version}"
        )));
    }
    file.read_exact(&mut u32buf)?;
    let p = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let geometry = TorusGeometry::new(p)?;
    let mut fields = Vec::with_capacity(n);
    let mut f64buf = [0u8; 8];
    for _ in 0..n {
        let mut data = Vec::with_capacity(p * p);
        for _ in 0..p * p {
            file.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        fields.push(Grid::from_vec(p, data));
    }
    file.read_exact(&mut f64buf)?;
    let seed = u64::from_le_bytes(f64buf);
    Ok(SampleBatch {
        geometry,
        n,
        fields,
        seed,
        params_digest: None,
    })
}

// ---- chaos family JSON ----

#[derive(Serialize, Deserialize)]
struct FamilyJson {
    elements: Vec<ChaosElement>,
}

pub fn save_chaos_family<P: AsRef<Path>>(path: P, family: &ChaosFamily) -> Result<()> {
    let doc = FamilyJson {
        elements: family.elements.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Load and re-validate element symmetry and the shared dimension.
pub fn load_chaos_family<P: AsRef<Path>>(path: P) -> Result<ChaosFamily> {
    let text = std::fs::read_to_string(path)?;
    let doc: FamilyJson = serde_json::from_str(&text)?;
    let elements = doc
        .elements
        .into_iter()
        .map(|e| ChaosElement::new(e.pairs, e.constant))
        .collect::<Result<Vec<_>>>()?;
    ChaosFamily::new(elements)
}

// ---- digests, manifests, seeds ----

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

pub fn sha256_file<P: AsRef<Path>>(path: P) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sub-stream seeds derived by hashing (master seed, purpose tag, index).
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

/// Run manifest: the full configuration plus digests of every output, so a
/// run can be replayed and checked bit-for-bit.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// path (as written) → sha256 hex digest.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_output<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let digest = sha256_file(&path)?;
        self.outputs
            .insert(path.as_ref().to_string_lossy().into_owned(), digest);
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

// ---- SVG line charts ----

/// Minimal SVG polyline chart; one polyline per series, with axis labels.
pub fn write_svg_chart<P: AsRef<Path>>(
    path: P,
    title: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<()> {
    let (w, h, ml, mb, mt, mr) = (640.0, 420.0, 60.0, 40.0, 30.0, 20.0);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("no data to plot".into()));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mb - mt);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#333\"/>\n",
        h - mb,
        w - mr
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"#333\"/>\n",
        h - mb
    ));
    for (tick, value) in [(0.0, x0), (0.5, 0.5 * (x0 + x1)), (1.0, x1)] {
        let x = ml + tick * (w - ml - mr);
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{value:.4}</text>\n",
            h - mb + 14.0
        ));
    }
    for (tick, value) in [(0.0, y0), (0.5, 0.5 * (y0 + y1)), (1.0, y1)] {
        let y = h - mb - tick * (h - mb - mt);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{value:.4}</text>\n",
            ml - 6.0
        ));
    }
    for (sidx, (label, data)) in series.iter().enumerate() {
        let color = colors[sidx % colors.len()];
        let points: Vec<String> = data
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            w - mr - 150.0,
            mt + 14.0 * (sidx as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circulant::tests::random_theta;
    use crate::field::{sample, GmrfParams};

    #[test]
    fn fmt_g17_has_17_significant_digits() {
        let s = fmt_g17(std::f64::consts::PI);
        assert!(s.starts_with("3.1415926535897931"), "{s}");
        // Round-trips exactly.
        let back: f64 = s.parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn theta_roundtrip() {
        let dir = std::env::temp_dir().join("gmrf-io-theta");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("theta.json");
        let theta = random_theta(TorusGeometry::new(6).unwrap(), 0.8, 5);
        save_theta(&path, &theta).unwrap();
        let back = load_theta(&path).unwrap();
        assert_eq!(back.values(), theta.values());
    }

    #[test]
    fn theta_loader_rejects_conflicts() {
        let dir = std::env::temp_dir().join("gmrf-io-theta-bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(
            &path,
            r#"{"p": 5, "entries": [[0, 1, 0.5], [0, -1, 0.25]]}"#,
        )
        .unwrap();
        assert!(load_theta(&path).is_err());
    }

    #[test]
    fn batch_roundtrip() {
        let dir = std::env::temp_dir().join("gmrf-io-batch");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("batch.bin");
        let theta = random_theta(TorusGeometry::new(4).unwrap(), 0.6, 9);
        let params = GmrfParams::new(theta, 1.0).unwrap();
        let batch = sample(&params, 7, 123).unwrap();
        save_batch(&path, &batch).unwrap();
        let back = load_batch(&path).unwrap();
        assert_eq!(back.n, 7);
        assert_eq!(back.seed, 123);
        for (a, b) in back.fields.iter().zip(&batch.fields) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn derive_seed_is_stable_and_separates_tags() {
        let a = derive_seed(42, "risk-rep", 0);
        let b = derive_seed(42, "risk-rep", 1);
        let c = derive_seed(42, "tails", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, "risk-rep", 0));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = std::env::temp_dir().join("gmrf-io-manifest");
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("data.csv");
        std::fs::write(&out, "a,b\n1,2\n").unwrap();
        let mut manifest = Manifest::new("dims", serde_json::json!({"p": 9}));
        manifest.record_output(&out).unwrap();
        let mpath = dir.join("dims.manifest.json");
        manifest.save(&mpath).unwrap();
        let back = Manifest::load(&mpath).unwrap();
        assert_eq!(back.command, "dims");
        assert_eq!(back.outputs.len(), 1);
        let digest = back.outputs.values().next().unwrap();
        assert_eq!(digest, &sha256_file(&out).unwrap());
    }

    #[test]
    fn svg_chart_writes_polyline() {
        let dir = std::env::temp_dir().join("gmrf-io-svg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chart.svg");
        write_svg_chart(
            &path,
            "risk",
            &[("loss", vec![(1.0, 2.0), (2.0, 1.5), (3.0, 1.8)])],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("<polyline"));
        assert!(text.contains("</svg>"));
    }
}
