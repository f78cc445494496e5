//! Per-unit spatial analysis, summary statistics and result export.
//!
//! Global Moran's I is computed separately inside each study region, with
//! weights built from that region's places only. Local Moran's I is computed
//! once over all regions combined so that a cluster is judged against every
//! activation of the layer.

mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use export::{
    cluster_records, export_results, read_cluster_csv, read_moran_csv, write_moran_csv,
    write_summary_csv, ClusterMapRecord, ExportFormat,
};

use crate::error::{Error, Result};
use crate::gazetteer::{PlaceRow, Region};
use crate::rng;
use crate::spatial::{
    global_moran, jitter_duplicates, knn_weights, local_moran, Direction, LocalMoranResult,
    SignificanceRule, SpatialWeights, DEFAULT_KNN_K, DEFAULT_PERMUTATIONS,
};
use crate::tensor_io::ActivationMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Neuron,
    SaeFeature,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Neuron => "neuron",
            UnitKind::SaeFeature => "sae_feature",
        }
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neuron" => Ok(UnitKind::Neuron),
            "sae_feature" | "sae-feature" => Ok(UnitKind::SaeFeature),
            _ => Err(Error::invalid(format!("unknown unit kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Region(Region),
    Combined,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Region(r) => write!(f, "{r}"),
            Scope::Combined => f.write_str("combined"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "combined" {
            Ok(Scope::Combined)
        } else {
            s.parse().map(Scope::Region)
        }
    }
}

/// Global Moran's I of one unit within one scope. `moran_i` and `p_value`
/// are `None` when the unit is constant within the scope.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAutocorrelationRow {
    pub unit_id: usize,
    pub layer: u32,
    pub kind: UnitKind,
    pub scope: Scope,
    pub moran_i: Option<f64>,
    pub expected_i: f64,
    pub p_value: Option<f64>,
    pub direction: Option<Direction>,
    pub n_permutations: usize,
    pub significant: bool,
    /// Rank of the unit by its highest regional I (1 = highest).
    pub rank: usize,
}

impl UnitAutocorrelationRow {
    fn passes(&self, rule: &SignificanceRule) -> bool {
        match (self.moran_i, self.p_value) {
            (Some(i), Some(p)) => rule.passes(i, p),
            _ => false,
        }
    }
}

/// Which units get local Moran's I on the combined weights.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalSelection {
    Flagged,
    All,
    Units(Vec<usize>),
    None,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub knn_k: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub rule: SignificanceRule,
    pub kind: UnitKind,
    pub local: LocalSelection,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            knn_k: DEFAULT_KNN_K,
            n_perm: DEFAULT_PERMUTATIONS,
            seed: 0,
            rule: SignificanceRule::default(),
            kind: UnitKind::Neuron,
            local: LocalSelection::Flagged,
        }
    }
}

/// How the combined-scope neighbour graph was built.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourProvenance {
    pub knn_k: usize,
    pub sites_per_region: Vec<(Region, usize)>,
    pub total_links: usize,
    /// Links joining places of different regions.
    pub cross_region_links: usize,
    /// Places moved apart because they shared coordinates.
    pub jittered_sites: usize,
}

impl fmt::Display for NeighbourProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regions: Vec<String> = self
            .sites_per_region
            .iter()
            .map(|(r, n)| format!("{r}={n}"))
            .collect();
        write!(
            f,
            "knn k={} haversine; sites {}; combined links {} ({} cross-region); jittered sites {}",
            self.knn_k,
            regions.join(" "),
            self.total_links,
            self.cross_region_links,
            self.jittered_sites
        )
    }
}

#[derive(Debug, Clone)]
pub struct AutocorrelationTable {
    /// Ordered by unit, then scope.
    pub rows: Vec<UnitAutocorrelationRow>,
    pub flagged: BTreeSet<usize>,
    /// Local results on the combined weights, keyed by unit.
    pub local: BTreeMap<usize, LocalMoranResult>,
    /// Places in matrix-row order.
    pub places: Vec<PlaceRow>,
    pub provenance: NeighbourProvenance,
}

/// Places bound to matrix rows: by geoname id when the matrix carries a
/// binding, otherwise by `row_index`.
fn bind_places(m: &ActivationMatrix, places: &[PlaceRow]) -> Result<Vec<PlaceRow>> {
    match m.row_binding() {
        Some(ids) => {
            let by_id: HashMap<u64, &PlaceRow> = places.iter().map(|p| (p.geoname_id, p)).collect();
            ids.iter()
                .map(|id| {
                    by_id.get(id).map(|p| (*p).clone()).ok_or_else(|| {
                        Error::invalid(format!("matrix row bound to unknown place {id}"))
                    })
                })
                .collect()
        }
        None => {
            if places.len() != m.n_rows() {
                return Err(Error::invalid(format!(
                    "{} matrix rows but {} places",
                    m.n_rows(),
                    places.len()
                )));
            }
            Ok(places.to_vec())
        }
    }
}

struct ScopeWeights {
    region: Region,
    rows: Vec<usize>,
    weights: SpatialWeights,
}

fn count_cross_links(w: &SpatialWeights, places: &[PlaceRow]) -> (usize, usize) {
    let mut total = 0;
    let mut cross = 0;
    for i in 0..w.n() {
        for &j in w.neighbors(i) {
            total += 1;
            cross += usize::from(places[i].region != places[j].region);
        }
    }
    (total, cross)
}

/// Runs global Moran's I per region for every unit, flags units passing the
/// significance rule in at least one region, and computes local Moran's I
/// on the combined weights for the selected units.
pub fn per_unit_autocorrelation(
    m: &ActivationMatrix,
    places: &[PlaceRow],
    cfg: &AnalysisConfig,
) -> Result<AutocorrelationTable> {
    let bound = bind_places(m, places)?;
    let ids: Vec<u64> = bound.iter().map(|p| p.geoname_id).collect();
    let raw: Vec<(f64, f64)> = bound.iter().map(|p| (p.latitude, p.longitude)).collect();
    let coords = jitter_duplicates(&raw, &ids)?;
    let jittered_sites = raw.iter().zip(&coords).filter(|(a, b)| a != b).count();

    let mut scopes = Vec::new();
    for region in Region::ALL {
        let rows: Vec<usize> = (0..bound.len())
            .filter(|&i| bound[i].region == region)
            .collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() <= cfg.knn_k {
            return Err(Error::invalid(format!(
                "region {region} has {} places, need more than knn_k={}",
                rows.len(),
                cfg.knn_k
            )));
        }
        let sub: Vec<(f64, f64)> = rows.iter().map(|&i| coords[i]).collect();
        let weights = knn_weights(&sub, cfg.knn_k)?;
        scopes.push(ScopeWeights {
            region,
            rows,
            weights,
        });
    }
    if scopes.is_empty() {
        return Err(Error::Empty("places"));
    }
    let combined = knn_weights(&coords, cfg.knn_k)?;
    let (total_links, cross_region_links) = count_cross_links(&combined, &bound);
    let provenance = NeighbourProvenance {
        knn_k: cfg.knn_k,
        sites_per_region: scopes.iter().map(|s| (s.region, s.rows.len())).collect(),
        total_links,
        cross_region_links,
        jittered_sites,
    };

    let layer = m.layer();
    let per_unit: Vec<Vec<UnitAutocorrelationRow>> = (0..m.n_cols())
        .into_par_iter()
        .map(|unit| {
            let column = m.column(unit);
            let unit_seed = cfg.seed ^ unit as u64;
            scopes
                .iter()
                .enumerate()
                .map(|(s, scope)| {
                    let x: Vec<f64> = scope.rows.iter().map(|&i| column[i]).collect();
                    let n = x.len() as f64;
                    let mut row = UnitAutocorrelationRow {
                        unit_id: unit,
                        layer,
                        kind: cfg.kind,
                        scope: Scope::Region(scope.region),
                        moran_i: None,
                        expected_i: -1.0 / (n - 1.0),
                        p_value: None,
                        direction: None,
                        n_permutations: cfg.n_perm,
                        significant: false,
                        rank: 0,
                    };
                    match global_moran(
                        &x,
                        &scope.weights,
                        cfg.n_perm,
                        rng::child_seed(unit_seed, s as u64),
                    ) {
                        Ok(r) => {
                            row.moran_i = Some(r.i);
                            row.p_value = Some(r.p_value);
                            row.direction = Some(r.direction);
                            row.significant = cfg.rule.passes(r.i, r.p_value);
                            Ok(row)
                        }
                        Err(Error::ZeroVariance) => Ok(row),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<UnitAutocorrelationRow> = per_unit.into_iter().flatten().collect();
    assign_ranks(&mut rows);

    let flagged: BTreeSet<usize> = rows
        .iter()
        .filter(|r| r.significant)
        .map(|r| r.unit_id)
        .collect();
    let local_units: Vec<usize> = match &cfg.local {
        LocalSelection::Flagged => flagged.iter().copied().collect(),
        LocalSelection::All => (0..m.n_cols()).collect(),
        LocalSelection::Units(u) => {
            if let Some(bad) = u.iter().find(|&&u| u >= m.n_cols()) {
                return Err(Error::invalid(format!("unit {bad} out of range")));
            }
            u.clone()
        }
        LocalSelection::None => Vec::new(),
    };
    let mut local = BTreeMap::new();
    for unit in local_units {
        let x = m.column(unit);
        match local_moran(
            &x,
            &combined,
            cfg.n_perm,
            rng::child_seed(cfg.seed, unit as u64),
            cfg.rule.p_threshold,
        ) {
            Ok(r) => {
                local.insert(unit, r);
            }
            Err(Error::ZeroVariance) => {}
            Err(e) => return Err(e),
        }
    }

    Ok(AutocorrelationTable {
        rows,
        flagged,
        local,
        places: bound,
        provenance,
    })
}

/// Ranks units by their highest regional I, descending; units without any
/// defined I come last. Ties go to the lower unit id.
pub fn assign_ranks(rows: &mut [UnitAutocorrelationRow]) {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows.iter() {
        let v = r.moran_i.unwrap_or(f64::NEG_INFINITY);
        best.entry(r.unit_id)
            .and_modify(|b| *b = b.max(v))
            .or_insert(v);
    }
    let mut order: Vec<(usize, f64)> = best.into_iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let rank: HashMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(r, (u, _))| (*u, r + 1))
        .collect();
    for r in rows.iter_mut() {
        r.rank = rank[&r.unit_id];
    }
}

/// Re-evaluates the significance flags of every row under `rule`.
pub fn apply_rule(rows: &mut [UnitAutocorrelationRow], rule: &SignificanceRule) {
    for r in rows.iter_mut() {
        r.significant = r.passes(rule);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryGroup {
    pub layer: u32,
    pub kind: UnitKind,
    pub n_units: usize,
    /// Units significant in at least one region.
    pub significant_any: usize,
    /// Units significant in every region they were tested in.
    pub significant_all: usize,
}

impl SummaryGroup {
    pub fn pct_any(&self) -> f64 {
        percent(self.significant_any, self.n_units)
    }

    pub fn pct_all(&self) -> f64 {
        percent(self.significant_all, self.n_units)
    }
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub groups: Vec<SummaryGroup>,
    pub dead_fraction: Option<f64>,
}

impl Summary {
    /// Totals over every group (e.g. all layers of a run).
    pub fn total(&self) -> (usize, usize, usize) {
        self.groups.iter().fold((0, 0, 0), |(n, a, l), g| {
            (n + g.n_units, a + g.significant_any, l + g.significant_all)
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(
                f,
                "layer {} {}: {} of {} units significant in at least one region ({:.2}%), {} in all regions ({:.2}%)",
                g.layer,
                g.kind.as_str(),
                g.significant_any,
                g.n_units,
                g.pct_any(),
                g.significant_all,
                g.pct_all()
            )?;
        }
        if self.groups.len() > 1 {
            let (n, any, all) = self.total();
            writeln!(
                f,
                "total: {any} of {n} units significant in at least one region ({:.2}%), {all} in all regions ({:.2}%)",
                percent(any, n),
                percent(all, n)
            )?;
        }
        if let Some(d) = self.dead_fraction {
            writeln!(f, "dead features: {:.2}%", 100.0 * d)?;
        }
        Ok(())
    }
}

/// Counts significant units per (layer, kind).
pub fn summarize(rows: &[UnitAutocorrelationRow], dead_fraction: Option<f64>) -> Summary {
    // (layer, kind) -> unit -> (any, all)
    let mut units: BTreeMap<(u32, UnitKind), BTreeMap<usize, (bool, bool)>> = BTreeMap::new();
    for r in rows {
        let e = units
            .entry((r.layer, r.kind))
            .or_default()
            .entry(r.unit_id)
            .or_insert((false, true));
        e.0 |= r.significant;
        e.1 &= r.significant;
    }
    let groups = units
        .into_iter()
        .map(|((layer, kind), u)| SummaryGroup {
            layer,
            kind,
            n_units: u.len(),
            significant_any: u.values().filter(|(any, _)| *any).count(),
            significant_all: u.values().filter(|(_, all)| *all).count(),
        })
        .collect();
    Summary {
        groups,
        dead_fraction,
    }
}
