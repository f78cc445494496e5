//! GeoNames ingestion: dump parsing, admin-code lookup, study-region filters
//! and disambiguated prompt construction.
//!
//! Prompts take the form `"<placename>, <qualifier>"` where the qualifier is
//! the UK constituent country (admin1), the Italian province (admin2) or the
//! US state (admin1).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GEONAMES_COLUMNS: usize = 19;

/// US states making up the US4 study area.
pub const US4_STATES: [&str; 4] = ["NY", "NJ", "CT", "PA"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "UK")]
    Uk,
    #[serde(rename = "IT")]
    It,
    #[serde(rename = "US4")]
    Us4,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Uk, Region::It, Region::Us4];

    pub fn from_country_code(cc: &str) -> Option<Region> {
        match cc {
            "GB" => Some(Region::Uk),
            "IT" => Some(Region::It),
            "US" => Some(Region::Us4),
            _ => None,
        }
    }

    pub fn country_code(self) -> &'static str {
        match self {
            Region::Uk => "GB",
            Region::It => "IT",
            Region::Us4 => "US",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Uk => "UK",
            Region::It => "IT",
            Region::Us4 => "US4",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UK" | "GB" => Ok(Region::Uk),
            "IT" => Ok(Region::It),
            "US4" => Ok(Region::Us4),
            _ => Err(Error::invalid(format!(
                "unknown region {s:?} (expected uk, it or us4)"
            ))),
        }
    }
}

/// One row of a GeoNames country dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub geoname_id: u64,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub feature_class: Option<char>,
    pub feature_code: String,
    pub country_code: String,
    pub admin1_code: String,
    pub admin2_code: String,
    pub population: u64,
    /// Derived from `country_code`; `None` outside the three study countries.
    pub region: Option<Region>,
}

fn parse_place_line(line: &str, line_no: usize) -> Result<PlaceRecord> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != GEONAMES_COLUMNS {
        return Err(err(format!(
            "expected {GEONAMES_COLUMNS} tab-separated columns, found {}",
            cols.len()
        )));
    }
    let geoname_id = cols[0]
        .parse::<u64>()
        .map_err(|_| err(format!("invalid geonameid {:?}", cols[0])))?;
    let latitude = cols[4]
        .parse::<f64>()
        .map_err(|_| err(format!("invalid latitude {:?}", cols[4])))?;
    let longitude = cols[5]
        .parse::<f64>()
        .map_err(|_| err(format!("invalid longitude {:?}", cols[5])))?;
    if !(-90.0..=90.0).contains(&latitude) {
        return Err(err(format!("latitude {latitude} out of range")));
    }
    if !(-180.0..=180.0).contains(&longitude) {
        return Err(err(format!("longitude {longitude} out of range")));
    }
    let mut class_chars = cols[6].chars();
    let feature_class = class_chars.next();
    if class_chars.next().is_some() {
        return Err(err(format!(
            "feature class {:?} is not a single character",
            cols[6]
        )));
    }
    let population = if cols[14].is_empty() {
        0
    } else {
        cols[14]
            .parse::<u64>()
            .map_err(|_| err(format!("invalid population {:?}", cols[14])))?
    };
    let country_code = cols[8].to_string();
    Ok(PlaceRecord {
        geoname_id,
        name: cols[1].to_string(),
        latitude,
        longitude,
        feature_class,
        feature_code: cols[7].to_string(),
        region: Region::from_country_code(&country_code),
        country_code,
        admin1_code: cols[10].to_string(),
        admin2_code: cols[11].to_string(),
        population,
    })
}

/// Splits a stream into 1-based numbered UTF-8 lines, skipping blank ones.
fn numbered_lines<R: Read>(mut reader: R) -> Result<Vec<(usize, String)>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("invalid UTF-8: {e}"),
        })?;
        out.push((idx + 1, text.to_string()));
    }
    Ok(out)
}

/// Parses a GeoNames country dump (e.g. `GB.txt`). Lines are parsed in
/// parallel; output order follows input order.
pub fn parse_geonames<R: Read>(reader: R) -> Result<Vec<PlaceRecord>> {
    numbered_lines(reader)?
        .par_iter()
        .map(|(no, line)| parse_place_line(line, *no))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdminLevel {
    Admin1,
    Admin2,
}

impl AdminLevel {
    fn label(self) -> &'static str {
        match self {
            AdminLevel::Admin1 => "admin1",
            AdminLevel::Admin2 => "admin2",
        }
    }
}

/// Full admin code (e.g. `"GB.ENG"`, `"IT.20.VR"`) to display name.
#[derive(Debug, Clone)]
pub struct AdminIndex {
    pub level: AdminLevel,
    entries: HashMap<String, String>,
}

impl AdminIndex {
    pub fn empty(level: AdminLevel) -> Self {
        AdminIndex {
            level,
            entries: HashMap::new(),
        }
    }

    pub fn get(&self, code: &str) -> Option<&str> {
        self.entries.get(code).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads `admin1CodesASCII.txt` / `admin2Codes.txt`
/// (`code<TAB>name<TAB>asciiname<TAB>geonameid`).
pub fn load_admin_index<R: BufRead>(reader: R, level: AdminLevel) -> Result<AdminIndex> {
    let mut entries = HashMap::new();
    for (no, line) in numbered_lines(reader)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: no,
                message: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        }
        if entries
            .insert(cols[0].to_string(), cols[1].to_string())
            .is_some()
        {
            return Err(Error::DuplicateCode {
                code: cols[0].to_string(),
                line: no,
            });
        }
    }
    Ok(AdminIndex { level, entries })
}

fn passes(place: &PlaceRecord, region: Region) -> bool {
    if place.feature_class != Some('P') || place.country_code != region.country_code() {
        return false;
    }
    match region {
        Region::Uk => place.population > 0,
        Region::It => place.population > 500,
        Region::Us4 => place.population > 0 && US4_STATES.contains(&place.admin1_code.as_str()),
    }
}

/// Keeps populated places (`P`) of one study region above its population
/// threshold, preserving input order.
pub fn filter_places(places: &[PlaceRecord], region: Region) -> Vec<PlaceRecord> {
    places
        .iter()
        .filter(|p| passes(p, region))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub geoname_id: u64,
    pub prompt_text: String,
    pub region: Region,
}

fn qualifier<'a>(
    place: &PlaceRecord,
    admin1: &'a AdminIndex,
    admin2: &'a AdminIndex,
) -> Result<&'a str> {
    let region = place.region.ok_or_else(|| {
        Error::invalid(format!(
            "place {} has country code {:?} outside the study regions",
            place.geoname_id, place.country_code
        ))
    })?;
    let (index, code) = match region {
        Region::Uk | Region::Us4 => (
            admin1,
            format!("{}.{}", place.country_code, place.admin1_code),
        ),
        Region::It => (
            admin2,
            format!(
                "{}.{}.{}",
                place.country_code, place.admin1_code, place.admin2_code
            ),
        ),
    };
    index.get(&code).ok_or(Error::UnresolvedAdmin {
        geoname_id: place.geoname_id,
        code,
        level: index.level.label(),
    })
}

/// Builds one prompt per place, in order. UK and US places are qualified by
/// their admin1 name, Italian places by their admin2 (province) name.
pub fn build_prompts(
    places: &[PlaceRecord],
    admin1: &AdminIndex,
    admin2: &AdminIndex,
) -> Result<Vec<PromptRecord>> {
    if admin1.level != AdminLevel::Admin1 || admin2.level != AdminLevel::Admin2 {
        return Err(Error::invalid("admin indices passed at the wrong level"));
    }
    places
        .iter()
        .map(|place| {
            let q = qualifier(place, admin1, admin2)?;
            Ok(PromptRecord {
                geoname_id: place.geoname_id,
                prompt_text: format!("{}, {}", place.name, q),
                region: place.region.expect("checked by qualifier"),
            })
        })
        .collect()
}

/// One row of the places table shipped alongside activation files. Row
/// `row_index` of an activation matrix belongs to this place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceRow {
    pub row_index: usize,
    pub geoname_id: u64,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub region: Region,
    pub prompt: String,
}

impl PlaceRow {
    /// The admin region named in the prompt (text after the last `", "`).
    pub fn qualifier(&self) -> &str {
        self.prompt.rsplit_once(", ").map_or("", |(_, q)| q)
    }
}

pub fn places_table(places: &[PlaceRecord], prompts: &[PromptRecord]) -> Result<Vec<PlaceRow>> {
    if places.len() != prompts.len() {
        return Err(Error::Dimension {
            expected: places.len(),
            got: prompts.len(),
        });
    }
    places
        .iter()
        .zip(prompts)
        .enumerate()
        .map(|(i, (place, prompt))| {
            if place.geoname_id != prompt.geoname_id {
                return Err(Error::invalid(format!(
                    "row {i}: prompt bound to {} but place is {}",
                    prompt.geoname_id, place.geoname_id
                )));
            }
            Ok(PlaceRow {
                row_index: i,
                geoname_id: place.geoname_id,
                name: place.name.clone(),
                latitude: place.latitude,
                longitude: place.longitude,
                region: prompt.region,
                prompt: prompt.prompt_text.clone(),
            })
        })
        .collect()
}

pub fn write_places_csv<W: Write>(rows: &[PlaceRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "row_index",
            "geoname_id",
            "name",
            "latitude",
            "longitude",
            "region",
            "prompt",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a places table and checks that `row_index` runs 0, 1, 2, ...
pub fn read_places_csv<R: Read>(source: R) -> Result<Vec<PlaceRow>> {
    let mut r = csv::Reader::from_reader(source);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<PlaceRow>().enumerate() {
        let row = rec?;
        if row.row_index != i {
            return Err(Error::Format(format!(
                "places table row {i} has row_index {}",
                row.row_index
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
