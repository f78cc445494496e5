use std::io::{Read, Write};

use serde_json::{json, Value};

use super::{AutocorrelationTable, Scope, Summary, UnitAutocorrelationRow};
use crate::error::{Error, Result};
use crate::gazetteer::PlaceRow;
use crate::spatial::{Cluster, Direction, LocalMoranResult};
use crate::tensor_io::ActivationMatrix;

const CLUSTER_HEADER: [&str; 8] = [
    "geoname_id",
    "latitude",
    "longitude",
    "unit_id",
    "value",
    "local_i",
    "p_value",
    "cluster",
];

const MORAN_HEADER: [&str; 11] = [
    "unit_id",
    "layer",
    "kind",
    "scope",
    "moran_i",
    "expected_i",
    "p_value",
    "direction",
    "n_permutations",
    "significant",
    "rank",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    GeoJson,
}

/// One place of one unit's local cluster map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMapRecord {
    pub geoname_id: u64,
    pub latitude: f64,
    pub longitude: f64,
    pub unit_id: usize,
    pub value: f64,
    pub local_i: f64,
    pub p_value: f64,
    pub cluster: Cluster,
}

/// Joins places, a unit's activations and its local result, site by site.
pub fn cluster_records(
    places: &[PlaceRow],
    unit_id: usize,
    values: &[f64],
    local: &LocalMoranResult,
) -> Result<Vec<ClusterMapRecord>> {
    if values.len() != places.len() || local.local_i.len() != places.len() {
        return Err(Error::Dimension {
            expected: places.len(),
            got: values.len().min(local.local_i.len()),
        });
    }
    Ok(places
        .iter()
        .enumerate()
        .map(|(i, p)| ClusterMapRecord {
            geoname_id: p.geoname_id,
            latitude: p.latitude,
            longitude: p.longitude,
            unit_id,
            value: values[i],
            local_i: local.local_i[i],
            p_value: local.p_values[i],
            cluster: local.clusters[i],
        })
        .collect())
}

impl AutocorrelationTable {
    /// Cluster map records of every unit with a local result, unit by unit.
    pub fn cluster_map(&self, m: &ActivationMatrix) -> Result<Vec<ClusterMapRecord>> {
        let mut out = Vec::new();
        for (&unit, local) in &self.local {
            out.extend(cluster_records(&self.places, unit, &m.column(unit), local)?);
        }
        Ok(out)
    }
}

pub fn export_results<W: Write>(
    records: &[ClusterMapRecord],
    format: ExportFormat,
    mut sink: W,
) -> Result<()> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(sink);
            w.write_record(CLUSTER_HEADER)?;
            for r in records {
                w.write_record([
                    r.geoname_id.to_string(),
                    r.latitude.to_string(),
                    r.longitude.to_string(),
                    r.unit_id.to_string(),
                    r.value.to_string(),
                    r.local_i.to_string(),
                    r.p_value.to_string(),
                    r.cluster.to_string(),
                ])?;
            }
            w.flush()?;
        }
        ExportFormat::GeoJson => {
            let features: Vec<Value> = records
                .iter()
                .map(|r| {
                    json!({
                        "type": "Feature",
                        "geometry": { "type": "Point", "coordinates": [r.longitude, r.latitude] },
                        "properties": {
                            "geoname_id": r.geoname_id,
                            "unit_id": r.unit_id,
                            "value": r.value,
                            "local_i": r.local_i,
                            "p_value": r.p_value,
                            "cluster": r.cluster.as_str(),
                        }
                    })
                })
                .collect();
            let doc = json!({ "type": "FeatureCollection", "features": features });
            serde_json::to_writer_pretty(&mut sink, &doc)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value {raw:?} in column {}", idx + 1),
    })
}

fn optional<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<Option<T>> {
    if rec.get(idx).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(rec, idx, line).map(Some)
    }
}

fn check_header<R: Read>(r: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = r.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header {}",
            expected.join(",")
        )));
    }
    Ok(())
}

pub fn read_cluster_csv<R: Read>(source: R) -> Result<Vec<ClusterMapRecord>> {
    let mut r = csv::Reader::from_reader(source);
    check_header(&mut r, &CLUSTER_HEADER)?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let cluster: String = field(&rec, 7, line)?;
        out.push(ClusterMapRecord {
            geoname_id: field(&rec, 0, line)?,
            latitude: field(&rec, 1, line)?,
            longitude: field(&rec, 2, line)?,
            unit_id: field(&rec, 3, line)?,
            value: field(&rec, 4, line)?,
            local_i: field(&rec, 5, line)?,
            p_value: field(&rec, 6, line)?,
            cluster: cluster.parse()?,
        });
    }
    Ok(out)
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_moran_csv<W: Write>(rows: &[UnitAutocorrelationRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(MORAN_HEADER)?;
    for r in rows {
        w.write_record([
            r.unit_id.to_string(),
            r.layer.to_string(),
            r.kind.as_str().to_string(),
            r.scope.to_string(),
            opt_str(r.moran_i),
            r.expected_i.to_string(),
            opt_str(r.p_value),
            r.direction
                .map(|d| d.as_str().to_string())
                .unwrap_or_default(),
            r.n_permutations.to_string(),
            r.significant.to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_moran_csv<R: Read>(source: R) -> Result<Vec<UnitAutocorrelationRow>> {
    let mut r = csv::Reader::from_reader(source);
    check_header(&mut r, &MORAN_HEADER)?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let kind: String = field(&rec, 2, line)?;
        let scope: String = field(&rec, 3, line)?;
        let direction = match rec.get(7).unwrap_or("") {
            "" => None,
            "positive" => Some(Direction::Positive),
            "negative" => Some(Direction::Negative),
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("bad direction {other:?}"),
                })
            }
        };
        out.push(UnitAutocorrelationRow {
            unit_id: field(&rec, 0, line)?,
            layer: field(&rec, 1, line)?,
            kind: kind.parse()?,
            scope: scope.parse::<Scope>()?,
            moran_i: optional(&rec, 4, line)?,
            expected_i: field(&rec, 5, line)?,
            p_value: optional(&rec, 6, line)?,
            direction,
            n_permutations: field(&rec, 8, line)?,
            significant: field(&rec, 9, line)?,
            rank: field(&rec, 10, line)?,
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(summary: &Summary, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record([
        "layer",
        "kind",
        "n_units",
        "significant_any",
        "pct_any",
        "significant_all",
        "pct_all",
        "dead_fraction",
    ])?;
    for g in &summary.groups {
        w.write_record([
            g.layer.to_string(),
            g.kind.as_str().to_string(),
            g.n_units.to_string(),
            g.significant_any.to_string(),
            format!("{:.2}", g.pct_any()),
            g.significant_all.to_string(),
            format!("{:.2}", g.pct_all()),
            opt_str(summary.dead_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
