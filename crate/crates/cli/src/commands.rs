use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geomi::gazetteer::{
    build_prompts, filter_places, load_admin_index, parse_geonames, places_table, read_places_csv,
    write_places_csv, AdminIndex, AdminLevel, PlaceRow, Region,
};
use geomi::report::{
    apply_rule, export_results, per_unit_autocorrelation, read_moran_csv, summarize,
    write_moran_csv, write_summary_csv, AnalysisConfig, ExportFormat, LocalSelection, UnitKind,
};
use geomi::sae::{
    dead_feature_stats, encode_matrix, read_model, sweep_and_select, write_model, SaeConfig,
};
use geomi::spatial::{SignificanceRule, DEFAULT_KNN_K, DEFAULT_PERMUTATIONS, MIN_PERMUTATIONS};
use geomi::tensor_io::{
    generate_synthetic, read_activations, write_activations, ActivationMatrix, Signal,
};

use crate::config::{input_path, Settings};
use crate::manifest::Manifest;
use crate::{
    IngestArgs, MoranArgs, PromptsArgs, ReportArgs, SaeEncodeArgs, SaeTrainArgs, SynthArgs,
    UsageError,
};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn input(settings: &Settings, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    settings.require(flag, key).map(input_path)
}

fn load_places(path: &Path) -> Result<Vec<PlaceRow>> {
    read_places_csv(open(path)?).with_context(|| format!("reading places {}", path.display()))
}

fn load_matrix(path: &Path) -> Result<ActivationMatrix> {
    read_activations(open(path)?).with_context(|| format!("reading activations {}", path.display()))
}

fn load_admin(path: Option<PathBuf>, level: AdminLevel) -> Result<AdminIndex> {
    match path {
        Some(p) => {
            load_admin_index(open(&p)?, level).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(AdminIndex::empty(level)),
    }
}

pub fn ingest(a: IngestArgs, s: &Settings) -> Result<()> {
    let dumps: Vec<PathBuf> = s
        .list(a.geonames, "geonames")?
        .into_iter()
        .map(input_path)
        .collect();
    if dumps.is_empty() {
        return Err(usage("missing --geonames"));
    }
    let admin1 = input(s, a.admin1, "admin1")?;
    let admin2 = s.opt(a.admin2, "admin2")?.map(input_path);
    let out: PathBuf = s.require(a.out, "out")?;
    let names = s.list(a.region, "region")?;
    let regions: Vec<Region> = if names.is_empty() {
        Region::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|r| {
                r.parse()
                    .map_err(|_| usage(format!("unknown region {r:?}")))
            })
            .collect::<Result<_>>()?
    };

    let mut records = Vec::new();
    for d in &dumps {
        records
            .extend(parse_geonames(open(d)?).with_context(|| format!("parsing {}", d.display()))?);
    }
    let a1 = load_admin(Some(admin1.clone()), AdminLevel::Admin1)?;
    let a2 = load_admin(admin2.clone(), AdminLevel::Admin2)?;

    let mut manifest = Manifest::new("ingest");
    for (i, d) in dumps.iter().enumerate() {
        manifest.input(&format!("geonames.{i}"), d)?;
    }
    manifest.input("admin1", &admin1)?;
    if let Some(p) = &admin2 {
        manifest.input("admin2", p)?;
    }

    let mut kept = Vec::new();
    for &region in &regions {
        let places = filter_places(&records, region);
        eprintln!("{region}: {} places", places.len());
        manifest.set(&format!("count.{region}"), places.len());
        kept.extend(places);
    }
    let prompts = build_prompts(&kept, &a1, &a2)?;
    let table = places_table(&kept, &prompts)?;
    write_places_csv(&table, create(&out)?)?;
    manifest.set(
        "regions",
        regions
            .iter()
            .map(|r| r.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.output("places", &out)?;
    manifest.write(&out)
}

pub fn prompts(a: PromptsArgs, s: &Settings) -> Result<()> {
    let places_path = input(s, a.places, "places")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let places = load_places(&places_path)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&out)?);
    w.write_record(["row_index", "geoname_id", "prompt"])?;
    for p in &places {
        w.write_record([
            p.row_index.to_string(),
            p.geoname_id.to_string(),
            p.prompt.clone(),
        ])?;
    }
    w.flush()?;
    drop(w);
    let mut manifest = Manifest::new("prompts");
    manifest.input("places", &places_path)?;
    manifest.output("prompts", &out)?;
    manifest.write(&out)
}

pub fn synth(a: SynthArgs, s: &Settings) -> Result<()> {
    let places_path = input(s, a.places, "places")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let kind: String = s.require(a.signal, "signal")?;
    let units = s.get(a.units, "units", 50usize)?;
    let noise_sd = s.get(a.noise_sd, "noise_sd", 0.2f64)?;
    let layer = s.get(a.layer, "layer", 0u32)?;
    let seed = s.get(a.seed, "seed", 0u64)?;
    let signal = match kind.as_str() {
        "lat-gradient" => Signal::LatGradient,
        "iid-noise" => Signal::IidNoise,
        "region-block" => Signal::RegionBlock {
            qualifier: s.require(a.block, "block")?,
        },
        "mixture" => Signal::Mixture {
            fraction: s.get(a.fraction, "fraction", 0.1f64)?,
        },
        other => return Err(usage(format!("unknown signal {other:?}"))),
    };

    let places = load_places(&places_path)?;
    let synth = generate_synthetic(&places, &signal, units, noise_sd, seed)?;
    let matrix = synth.matrix.with_layer(layer);
    let mut w = create(&out)?;
    write_activations(&matrix, &mut w)?;
    w.flush()?;
    drop(w);

    let mut manifest = Manifest::new("synth");
    manifest.input("places", &places_path)?;
    manifest.set("signal", &kind);
    match &signal {
        Signal::RegionBlock { qualifier } => manifest.set("block", qualifier),
        Signal::Mixture { fraction } => manifest.set("fraction", fraction),
        _ => {}
    }
    manifest.set("units", units);
    manifest.set("noise_sd", noise_sd);
    manifest.set("layer", layer);
    manifest.set("seed", seed);
    let signal_units: Vec<String> = synth.signal_units.iter().map(|u| u.to_string()).collect();
    manifest.set("signal_units", signal_units.join(","));
    manifest.output("activations", &out)?;
    manifest.write(&out)
}

fn parse_local(spec: &str) -> Result<LocalSelection> {
    Ok(match spec {
        "flagged" => LocalSelection::Flagged,
        "all" => LocalSelection::All,
        "none" => LocalSelection::None,
        list => LocalSelection::Units(
            list.split(',')
                .map(|u| {
                    u.trim()
                        .parse()
                        .map_err(|_| usage(format!("bad --local value {list:?}")))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn rule(s: &Settings, p: Option<f64>, i: Option<f64>) -> Result<SignificanceRule> {
    let d = SignificanceRule::default();
    let p = s.get(p, "p_threshold", d.p_threshold)?;
    let i = s.get(i, "i_threshold", d.i_threshold)?;
    SignificanceRule::new(p, i).map_err(|e| usage(e.to_string()))
}

pub fn moran(a: MoranArgs, s: &Settings) -> Result<()> {
    let acts_path = input(s, a.activations, "activations")?;
    let places_path = input(s, a.places, "places")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let knn_k = s.get(a.knn_k, "knn_k", DEFAULT_KNN_K)?;
    let n_perm = s.get(a.n_perm, "n_perm", DEFAULT_PERMUTATIONS)?;
    let seed = s.get(a.seed, "seed", 0u64)?;
    let rule = rule(s, a.p_threshold, a.i_threshold)?;
    let kind: UnitKind = s
        .get(a.kind, "kind", "neuron".to_string())?
        .parse()
        .map_err(|e: geomi::Error| usage(e.to_string()))?;
    let local_spec = s.get(a.local, "local", "flagged".to_string())?;
    let clusters: Option<PathBuf> = s.opt(a.clusters, "clusters")?;
    let geojson: Option<PathBuf> = s.opt(a.geojson, "geojson")?;
    if knn_k == 0 {
        return Err(usage("--knn-k must be at least 1"));
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(usage(format!(
            "--n-perm must be at least {MIN_PERMUTATIONS}"
        )));
    }

    let matrix = load_matrix(&acts_path)?;
    let places = load_places(&places_path)?;
    let cfg = AnalysisConfig {
        knn_k,
        n_perm,
        seed,
        rule,
        kind,
        local: parse_local(&local_spec)?,
    };
    let table = per_unit_autocorrelation(&matrix, &places, &cfg)?;
    if table.rows.iter().all(|r| r.moran_i.is_none()) {
        return Err(geomi::Error::ZeroVariance).context("every unit is constant in every region");
    }

    let mut w = create(&out)?;
    write_moran_csv(&table.rows, &mut w)?;
    w.flush()?;
    drop(w);
    if clusters.is_some() || geojson.is_some() {
        let records = table.cluster_map(&matrix)?;
        if let Some(p) = &clusters {
            export_results(&records, ExportFormat::Csv, create(p)?)?;
        }
        if let Some(p) = &geojson {
            export_results(&records, ExportFormat::GeoJson, create(p)?)?;
        }
    }

    print!("{}", summarize(&table.rows, None));
    eprintln!("{}", table.provenance);

    let mut manifest = Manifest::new("moran");
    manifest.input("activations", &acts_path)?;
    manifest.input("places", &places_path)?;
    manifest.set("layer", matrix.layer());
    manifest.set("kind", kind.as_str());
    manifest.set("knn_k", knn_k);
    manifest.set("n_perm", n_perm);
    manifest.set("seed", seed);
    manifest.set("p_threshold", rule.p_threshold);
    manifest.set("i_threshold", rule.i_threshold);
    manifest.set("local", &local_spec);
    manifest.set("neighbours", &table.provenance);
    manifest.set("significant_units", table.flagged.len());
    manifest.output("moran", &out)?;
    if let Some(p) = &clusters {
        manifest.output("clusters", p)?;
    }
    if let Some(p) = &geojson {
        manifest.output("geojson", p)?;
    }
    manifest.write(&out)
}

pub fn sae_train(a: SaeTrainArgs, s: &Settings) -> Result<()> {
    let acts_path = input(s, a.activations, "activations")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let losses: Option<PathBuf> = s.opt(a.losses, "losses")?;
    let d = SaeConfig::default();
    let ks = s.list(a.k, "k")?;
    let ks = if ks.is_empty() { vec![d.k] } else { ks };
    let matrix = load_matrix(&acts_path)?;
    let base = SaeConfig {
        input_dim: matrix.n_cols(),
        expansion: s.get(a.expansion, "expansion", d.expansion)?,
        k: ks[0],
        epochs: s.get(a.epochs, "epochs", d.epochs)?,
        batch_size: s.get(a.batch_size, "batch_size", d.batch_size)?,
        learning_rate: s.get(a.learning_rate, "learning_rate", d.learning_rate)?,
        seed: s.get(a.seed, "seed", d.seed)?,
    };
    for &k in &ks {
        SaeConfig { k, ..base.clone() }
            .validate()
            .map_err(|e| usage(e.to_string()))?;
    }

    let (model, reports) = sweep_and_select(&matrix, &ks, &base)?;
    let mut w = create(&out)?;
    write_model(&model, &mut w)?;
    w.flush()?;
    drop(w);

    let mut manifest = Manifest::new("sae-train");
    manifest.input("activations", &acts_path)?;
    manifest.set("input_dim", base.input_dim);
    manifest.set("expansion", base.expansion);
    manifest.set("epochs", base.epochs);
    manifest.set("batch_size", base.batch_size);
    manifest.set("learning_rate", base.learning_rate);
    manifest.set("seed", base.seed);
    for r in &reports {
        eprintln!(
            "k={}: final loss {:.6e}, dead {:.2}%, {:.1}s",
            r.k,
            r.final_loss,
            100.0 * r.dead_fraction,
            r.wall_clock_seconds
        );
        manifest.set(&format!("k.{}.final_loss", r.k), r.final_loss);
        manifest.set(&format!("k.{}.dead_fraction", r.k), r.dead_fraction);
    }
    manifest.set("selected_k", model.k());
    manifest.output("model", &out)?;
    if let Some(p) = &losses {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(create(p)?);
        w.write_record(["k", "epoch", "loss"])?;
        for r in &reports {
            for (e, l) in r.epoch_losses.iter().enumerate() {
                w.write_record([r.k.to_string(), (e + 1).to_string(), l.to_string()])?;
            }
        }
        w.flush()?;
        drop(w);
        manifest.output("losses", p)?;
    }
    manifest.write(&out)
}

pub fn sae_encode(a: SaeEncodeArgs, s: &Settings) -> Result<()> {
    let model_path = input(s, a.model, "model")?;
    let acts_path = input(s, a.activations, "activations")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let model = read_model(open(&model_path)?)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let matrix = load_matrix(&acts_path)?;
    let features = encode_matrix(&model, &matrix)?;
    let dead = dead_feature_stats(&model, &matrix)?;
    let mut w = create(&out)?;
    write_activations(&features, &mut w)?;
    w.flush()?;
    drop(w);
    eprintln!("{} features, dead {:.2}%", model.latent_dim(), 100.0 * dead);

    let mut manifest = Manifest::new("sae-encode");
    manifest.input("model", &model_path)?;
    manifest.input("activations", &acts_path)?;
    manifest.set("latent_dim", model.latent_dim());
    manifest.set("k", model.k());
    manifest.set("dead_fraction", dead);
    manifest.output("features", &out)?;
    manifest.write(&out)
}

pub fn report(a: ReportArgs, s: &Settings) -> Result<()> {
    let tables: Vec<PathBuf> = s
        .list(a.moran, "moran")?
        .into_iter()
        .map(input_path)
        .collect();
    if tables.is_empty() {
        return Err(usage("missing --moran"));
    }
    let out: PathBuf = s.require(a.out, "out")?;
    let dead_fraction: Option<f64> = s.opt(a.dead_fraction, "dead_fraction")?;
    let p: Option<f64> = s.opt(a.p_threshold, "p_threshold")?;
    let i: Option<f64> = s.opt(a.i_threshold, "i_threshold")?;

    let mut rows = Vec::new();
    for t in &tables {
        rows.extend(read_moran_csv(open(t)?).with_context(|| format!("reading {}", t.display()))?);
    }
    let mut manifest = Manifest::new("report");
    for (n, t) in tables.iter().enumerate() {
        manifest.input(&format!("moran.{n}"), t)?;
    }
    if p.is_some() || i.is_some() {
        let r = rule(s, p, i)?;
        apply_rule(&mut rows, &r);
        manifest.set("p_threshold", r.p_threshold);
        manifest.set("i_threshold", r.i_threshold);
    }
    let summary = summarize(&rows, dead_fraction);
    write_summary_csv(&summary, create(&out)?)?;
    print!("{summary}");
    if let Some(d) = dead_fraction {
        manifest.set("dead_fraction", d);
    }
    manifest.output("summary", &out)?;
    manifest.write(&out)
}
