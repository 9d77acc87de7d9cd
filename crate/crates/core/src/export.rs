//! CSV and JSON writers. Numbers use the shortest decimal form that reads
//! back to the same double; every file starts with a provenance comment.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lensopt::OptResult;
use crate::raytracer::{ChannelMatrix, SpotMap};
use crate::sigproc::{CapacityReport, SymbolReport};
use crate::scene::Unit;
use crate::sweeps::{CapacityRow, SweepResult};

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Reproducibility header shared by all outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub rays_per_led: usize,
    pub scene_digest: String,
}

impl Provenance {
    pub fn of(h: &ChannelMatrix) -> Self {
        Provenance { seed: h.seed, rays_per_led: h.n_rays_per_led, scene_digest: h.scene_digest.clone() }
    }

    pub fn comment(&self) -> String {
        format!("# seed={} rays_per_led={} scene_digest={}\n", self.seed, self.rays_per_led, self.scene_digest)
    }
}

fn csv_text(meta: &Provenance, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut buf = meta.comment().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
        for r in rows {
            w.write_record(&r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// One row per LED, one column per PD: entry (j, m) is h_{m,j}.
pub fn matrix_csv(h: &ChannelMatrix) -> Result<String> {
    let mut header = vec!["led".to_string()];
    header.extend((0..h.n_rx).map(|m| m.to_string()));
    let rows = (0..h.n_tx).map(|j| {
        let mut r = vec![j.to_string()];
        r.extend((0..h.n_rx).map(|m| num(h.get(m, j))));
        r
    });
    csv_text(&Provenance::of(h), &header, rows)
}

/// Inverse of `matrix_csv` for the gains; metadata is read from the header
/// comment when present.
pub fn read_matrix_csv(text: &str) -> Result<ChannelMatrix> {
    let bad = |m: String| Error::InvalidInput(format!("matrix csv: {m}"));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let n_rx = rdr.headers().map_err(|e| bad(e.to_string()))?.len().saturating_sub(1);
    let mut by_led: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals = rec.iter().skip(1).map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string()))).collect::<Result<Vec<_>>>()?;
        if vals.len() != n_rx {
            return Err(bad("ragged row".into()));
        }
        by_led.push(vals);
    }
    let rows: Vec<Vec<f64>> = (0..n_rx).map(|m| by_led.iter().map(|r| r[m]).collect()).collect();
    let mut h = ChannelMatrix::from_rows(&rows)?;
    if let Some(line) = text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        for kv in line.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => h.seed = v.parse().unwrap_or(0),
                Some(("rays_per_led", v)) => h.n_rays_per_led = v.parse().unwrap_or(0),
                Some(("scene_digest", v)) => h.scene_digest = v.to_string(),
                _ => {}
            }
        }
    }
    Ok(h)
}

/// Spot hits, at most `limit_per_source` rows for each source.
pub fn spots_csv(spots: &SpotMap, meta: &Provenance, limit_per_source: usize) -> Result<String> {
    let header: Vec<String> = ["source_index", "x_mm", "y_mm", "weight"].map(String::from).to_vec();
    let mut written = vec![0usize; spots.n_sources];
    let mut rows = Vec::new();
    for hit in &spots.hits {
        if written[hit.source] < limit_per_source {
            written[hit.source] += 1;
            rows.push(vec![hit.source.to_string(), num(hit.x), num(hit.y), num(hit.weight)]);
        }
    }
    csv_text(meta, &header, rows)
}

pub fn optimizer_trace_csv(result: &OptResult, meta: &Provenance) -> Result<String> {
    let header: Vec<String> = [
        "iteration",
        "alpha_convex_front",
        "alpha_convex_back",
        "alpha_concave_front",
        "alpha_concave_back",
        "kappa",
    ]
    .map(String::from)
    .to_vec();
    let rows = result.trace.iter().map(|t| {
        let mut r = vec![t.iteration.to_string()];
        r.extend(t.params.to_array().iter().map(|&a| num(a)));
        r.push(num(t.kappa));
        r
    });
    csv_text(meta, &header, rows)
}

/// One row per sweep step, or per step and mode for capacity sweeps. The
/// `sweep` column names the motion, e.g. `translate-x-rx`.
pub fn sweep_csv(results: &[SweepResult], meta: &Provenance) -> Result<String> {
    let n_tx = results
        .iter()
        .flat_map(|s| &s.records)
        .flat_map(|r| r.reports.first())
        .map(|r| r.capacity.len())
        .next()
        .unwrap_or(0);
    let mut header: Vec<String> =
        ["sweep", "offset", "kappa", "square_kappa", "dominance", "loss_fraction", "mode", "mean_capacity"]
            .map(String::from)
            .to_vec();
    header.extend((0..n_tx).map(|j| format!("c{j}")));
    header.push("error".into());
    let mut rows = Vec::new();
    for result in results {
        let label = sweep_label(result);
        for rec in &result.records {
            let base = vec![
                label.clone(),
                num(rec.offset),
                opt(rec.kappa),
                opt(rec.square_kappa),
                opt(rec.dominance),
                num(rec.loss_fraction),
            ];
            let err = rec.error.clone().unwrap_or_default();
            if rec.reports.is_empty() {
                let mut r = base.clone();
                r.extend(std::iter::repeat_n(String::new(), 2 + n_tx));
                r.push(err.clone());
                rows.push(r);
            }
            for rep in &rec.reports {
                let mut r = base.clone();
                r.push(rep.mode.to_string());
                r.push(num(rep.mean()));
                r.extend(rep.capacity.iter().map(|&c| num(c)));
                r.extend(std::iter::repeat_n(String::new(), n_tx - rep.capacity.len().min(n_tx)));
                r.push(err.clone());
                rows.push(r);
            }
        }
    }
    csv_text(meta, &header, rows)
}

pub fn sweep_label(result: &SweepResult) -> String {
    let unit = match result.spec.target {
        Unit::Transmitter => "tx",
        Unit::Receiver => "rx",
    };
    format!("{}-{unit}", result.spec.motion.name())
}

/// One row per offset and mode with the per-channel capacities.
pub fn capacity_csv(rows: &[CapacityRow], meta: &Provenance) -> Result<String> {
    let n_tx = rows.first().map_or(0, |r| r.capacity.len());
    let mut header: Vec<String> = vec!["offset".into(), "mode".into()];
    header.extend((0..n_tx).map(|j| format!("c{j}")));
    let out = rows.iter().map(|r| {
        let mut v = vec![r.offset.to_string(), r.mode.to_string()];
        v.extend(r.capacity.iter().map(|&c| num(c)));
        v
    });
    csv_text(meta, &header, out)
}

/// One row per mode and channel. `ideal` holds the ideal-cancellation
/// report of the same mode.
pub fn ber_csv(entries: &[(SymbolReport, CapacityReport)], meta: &Provenance) -> Result<String> {
    let header: Vec<String> =
        ["channel", "mode", "n_symbols", "bit_errors", "ber", "realized_sinr", "ideal_sinr"].map(String::from).to_vec();
    let rows = entries.iter().flat_map(|(report, ideal)| {
        (0..report.ber.len()).map(move |j| {
            vec![
                j.to_string(),
                ideal.mode.to_string(),
                report.n_symbols.to_string(),
                report.bit_errors[j].to_string(),
                num(report.ber[j]),
                num(report.realized_sinr[j]),
                num(ideal.sinr[j]),
            ]
        })
    });
    csv_text(meta, &header, rows)
}

/// Pretty JSON with the provenance fields merged into a top-level object.
pub fn json_with_provenance(value: serde_json::Value, meta: &Provenance) -> String {
    let mut v = value;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("seed".into(), meta.seed.into());
        map.insert("rays_per_led".into(), meta.rays_per_led.into());
        map.insert("scene_digest".into(), meta.scene_digest.clone().into());
    }
    let mut s = serde_json::to_string_pretty(&v).expect("json value serializes");
    let _ = writeln!(s);
    s
}
