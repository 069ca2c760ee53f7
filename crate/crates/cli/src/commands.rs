use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use gnngeo::baselines::{
    corr_slg_geolocate, mlp_geo_predict, mlp_geo_train, slg_geolocate, BaselineError, MlpGeoConfig,
    PathIndex,
};
use gnngeo::eval::{cdf, errors_km, parse_predictions, write_predictions, Coord, ErrorStats};
use gnngeo::measurement::{
    parse_landmarks, parse_traceroutes, synth_network, write_landmarks, write_traceroutes,
    GroundTruth, LandmarkRecord, MeasurementError, Region, SynthConfig,
};
use gnngeo::model::{Aggregator, Decoder, ModelConfig, ModelError, ModelInput};
use gnngeo::pipeline::{preprocess as build_bundle, GraphBundle};
use gnngeo::training::{
    grid_search, predict_coords, split, Checkpoint, GridCell, GridSpec, LabelSet, Split, SplitSpec,
    TargetSpace, TrainConfig, TrainError, CHECKPOINT_VERSION,
};
use serde::Serialize;

use crate::{config, Failure};

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Data)
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Usage)
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
) -> Result<(), Failure> {
    let path = dir.join(name);
    let write = || -> anyhow::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write()
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Usage)
}

fn data_in(path: &Path) -> impl FnOnce(MeasurementError) -> Failure + '_ {
    move |e| Failure::Data(anyhow!("{}: {e}", path.display()))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Divergence { .. } | TrainError::Model(ModelError::Numeric(_)) => {
            Failure::Numeric(e.into())
        }
        TrainError::Config(_) | TrainError::Model(ModelError::Config(_)) => Failure::Usage(e.into()),
        _ => Failure::Data(e.into()),
    }
}

fn baseline_failure(e: BaselineError) -> Failure {
    match e {
        BaselineError::Divergence(_) | BaselineError::Numeric(_) => Failure::Numeric(e.into()),
        BaselineError::Config(_) => Failure::Usage(e.into()),
        _ => Failure::Data(e.into()),
    }
}

fn load_bundle(path: &Path) -> Result<GraphBundle, Failure> {
    GraphBundle::load(open(path)?)
        .with_context(|| format!("{}", path.display()))
        .map_err(Failure::Data)
}

/// One address per line; blank lines, `#` comments and an `ip` header are
/// skipped.
fn read_ip_list(path: &Path) -> Result<Vec<Ipv4Addr>, Failure> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(Failure::Data)?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') || (i == 0 && s == "ip") {
            continue;
        }
        let ip = s.parse().map_err(|_| {
            Failure::Data(anyhow!("{} line {}: invalid ip {s:?}", path.display(), i + 1))
        })?;
        out.push(ip);
    }
    Ok(out)
}

/// Bundle targets followed by held-out test landmarks, without repeats.
fn default_targets(bundle: &GraphBundle, test: &[Ipv4Addr]) -> Vec<Ipv4Addr> {
    let mut seen = BTreeSet::new();
    bundle
        .targets
        .iter()
        .chain(test)
        .copied()
        .filter(|ip| seen.insert(*ip))
        .collect()
}

fn requested(
    bundle: &GraphBundle,
    file: Option<&Path>,
    test: &[Ipv4Addr],
) -> Result<Vec<Ipv4Addr>, Failure> {
    let ips = match file {
        Some(p) => read_ip_list(p)?,
        None => default_targets(bundle, test),
    };
    if ips.is_empty() {
        return Err(Failure::Data(anyhow!("no targets to geolocate")));
    }
    Ok(ips)
}

fn write_rows(dir: &Path, rows: &[(Ipv4Addr, Coord)]) -> Result<(), Failure> {
    write_file(dir, "predictions.csv", |w| Ok(write_predictions(w, rows)?))
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Output directory.
    #[arg(short = 'o', long)]
    output: PathBuf,
    /// key=value file of flag values; flags on the command line win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_landmarks)]
    n_landmarks: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_routers)]
    n_routers: usize,
    /// Probes per destination.
    #[arg(long, default_value_t = SynthConfig::default().repetitions)]
    repetitions: u32,
    #[arg(long, default_value_t = SynthConfig::default().prop_speed_km_per_ms)]
    prop_speed_km_per_ms: f64,
    #[arg(long, default_value_t = SynthConfig::default().per_hop_noise_ms)]
    per_hop_noise_ms: f64,
    #[arg(long, default_value_t = SynthConfig::default().rule_violation_fraction)]
    rule_violation_fraction: f64,
    #[arg(long, default_value_t = SynthConfig::default().anonymity_prob)]
    anonymity_prob: f64,
    #[arg(long, default_value_t = SynthConfig::default().extra_edges)]
    extra_edges: usize,
    #[arg(long, default_value_t = SynthConfig::default().region.lat_min)]
    lat_min: f64,
    #[arg(long, default_value_t = SynthConfig::default().region.lat_max)]
    lat_max: f64,
    #[arg(long, default_value_t = SynthConfig::default().region.lon_min)]
    lon_min: f64,
    #[arg(long, default_value_t = SynthConfig::default().region.lon_max)]
    lon_max: f64,
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        n_landmarks: a.n_landmarks,
        n_routers: a.n_routers,
        region: Region {
            lat_min: a.lat_min,
            lat_max: a.lat_max,
            lon_min: a.lon_min,
            lon_max: a.lon_max,
        },
        repetitions: a.repetitions,
        prop_speed_km_per_ms: a.prop_speed_km_per_ms,
        per_hop_noise_ms: a.per_hop_noise_ms,
        rule_violation_fraction: a.rule_violation_fraction,
        anonymity_prob: a.anonymity_prob,
        extra_edges: a.extra_edges,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
    out_dir(&a.output)?;
    config::echo(&a.output, "synth", &a)?;
    let out = synth_network(&cfg).map_err(|e| Failure::Usage(e.into()))?;

    let dir = &a.output;
    write_file(dir, "traceroutes.jsonl", |w| Ok(write_traceroutes(w, &out.traceroutes)?))?;
    write_file(dir, "landmarks.csv", |w| Ok(write_landmarks(w, &out.landmarks)?))?;
    write_file(dir, "truth.csv", |w| Ok(out.truth.write_csv(w)?))?;
    write_file(dir, "probe.csv", |w| Ok(write_landmarks(w, &[out.probe])?))?;
    println!(
        "landmarks {} routers {} traceroutes {}",
        out.landmarks.len(),
        a.n_routers,
        out.traceroutes.len()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PreprocessArgs {
    /// JSON-lines traceroute records.
    #[arg(long)]
    traceroutes: PathBuf,
    /// ip,lat,lon rows of known locations.
    #[arg(long)]
    landmarks: PathBuf,
    /// ip,lat,lon row of the probing host.
    #[arg(long)]
    probe: PathBuf,
    /// Addresses to locate, one per line.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Seed of the delay binning.
    #[arg(long, default_value_t = 0)]
    bin_seed: u64,
    #[arg(short = 'o', long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

pub fn preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    out_dir(&a.output)?;
    config::echo(&a.output, "preprocess", &a)?;
    let records = parse_traceroutes(open(&a.traceroutes)?).map_err(data_in(&a.traceroutes))?;
    if records.is_empty() {
        return Err(Failure::Data(anyhow!(
            "{}: no traceroute records",
            a.traceroutes.display()
        )));
    }
    let landmarks = parse_landmarks(open(&a.landmarks)?).map_err(data_in(&a.landmarks))?;
    let probe = match parse_landmarks(open(&a.probe)?).map_err(data_in(&a.probe))?[..] {
        [p] => p,
        ref rows => {
            return Err(Failure::Data(anyhow!(
                "{}: expected one probe row, found {}",
                a.probe.display(),
                rows.len()
            )))
        }
    };
    let targets: BTreeSet<Ipv4Addr> = match &a.targets {
        Some(p) => read_ip_list(p)?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    let bundle = build_bundle(&records, &landmarks, &targets, &probe, a.bin_seed)
        .map_err(|e| Failure::Data(e.into()))?;

    let dir = &a.output;
    write_file(dir, "graph.json", |w| Ok(bundle.save(w)?))?;
    write_file(dir, "nodes.csv", |w| Ok(bundle.graph.write_nodes_csv(w)?))?;
    write_file(dir, "edges.csv", |w| Ok(bundle.graph.write_edges_csv(w)?))?;
    println!("nodes {}", bundle.graph.num_nodes());
    println!("edges {}", bundle.graph.num_edges());
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TargetSpaceArg {
    /// Min-max scaled to the training box.
    Scaled,
    /// Raw degrees.
    Raw,
}

impl From<TargetSpaceArg> for TargetSpace {
    fn from(t: TargetSpaceArg) -> Self {
        match t {
            TargetSpaceArg::Scaled => TargetSpace::Scaled,
            TargetSpaceArg::Raw => TargetSpace::Raw,
        }
    }
}

/// List-valued flags take comma-separated candidates; more than one
/// candidate anywhere runs a grid search scored on validation error.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Graph bundle written by `preprocess`.
    #[arg(long)]
    graph: PathBuf,
    #[arg(short = 'o', long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Seeds both the landmark split and model initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SplitSpec::default().train)]
    train_frac: f64,
    #[arg(long, default_value_t = SplitSpec::default().val)]
    val_frac: f64,
    /// Node embedding width.
    #[arg(long, value_delimiter = ',', default_values_t = [ModelConfig::default().g])]
    g: Vec<usize>,
    /// Edge embedding width.
    #[arg(long, value_delimiter = ',', default_values_t = [ModelConfig::default().k])]
    k: Vec<usize>,
    /// Edge network hidden width; 2K when omitted.
    #[arg(long, value_delimiter = ',')]
    edge_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [ModelConfig::default().layers])]
    layers: Vec<usize>,
    /// mean, sum or max.
    #[arg(long, value_delimiter = ',', default_values_t = [ModelConfig::default().aggregator])]
    aggregator: Vec<Aggregator>,
    #[arg(long, value_delimiter = ',', default_values_t = [TrainConfig::default().lr])]
    lr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [TrainConfig::default().weight_decay])]
    weight_decay: Vec<f64>,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    patience: usize,
    /// vanilla, vanilla_bn, sigmoid or bn_sigmoid.
    #[arg(long, default_value_t = ModelConfig::default().decoder)]
    decoder: Decoder,
    #[arg(long, value_enum, default_value_t = TargetSpaceArg::Scaled)]
    target_space: TargetSpaceArg,
}

#[derive(Serialize)]
struct GridFile<'a> {
    best: usize,
    cells: &'a [GridCell],
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let base = TrainConfig {
        lr: a.lr[0],
        weight_decay: a.weight_decay[0],
        max_epochs: a.max_epochs,
        patience: a.patience,
        target_space: a.target_space.into(),
        model: ModelConfig {
            g: a.g[0],
            k: a.k[0],
            layers: a.layers[0],
            aggregator: a.aggregator[0],
            edge_hidden: a.edge_hidden.first().copied().unwrap_or(2 * a.k[0]),
            decoder: a.decoder,
            seed: a.seed,
        },
    };
    let grid = GridSpec {
        g: a.g.clone(),
        layers: a.layers.clone(),
        aggregator: a.aggregator.clone(),
        lr: a.lr.clone(),
        weight_decay: a.weight_decay.clone(),
        k: a.k.clone(),
        edge_hidden: a.edge_hidden.clone(),
    };
    for cell in grid.cells(&base) {
        cell.validate().map_err(train_failure)?;
    }
    out_dir(&a.output)?;
    config::echo(&a.output, "train", &a)?;

    let bundle = load_bundle(&a.graph)?;
    let index = bundle.graph.ip_index();
    let known: HashMap<Ipv4Addr, Coord> = bundle
        .landmarks
        .iter()
        .filter(|l| index.contains_key(&l.ip))
        .map(|l| (l.ip, l.coord()))
        .collect();
    let mut ips: Vec<Ipv4Addr> = known.keys().copied().collect();
    ips.sort_unstable();
    let spec = SplitSpec {
        train: a.train_frac,
        val: a.val_frac,
        seed: a.seed,
    };
    let parts = split(&ips, &spec).map_err(train_failure)?;
    let rows = |set: &[Ipv4Addr]| -> Vec<(Ipv4Addr, Coord)> { set.iter().map(|ip| (*ip, known[ip])).collect() };
    let labels = LabelSet::from_ips(
        &bundle.graph,
        bundle.probe.coord(),
        &rows(&parts.train),
        &rows(&parts.val),
    )
    .map_err(train_failure)?;
    let input = ModelInput::from(&bundle.graph);
    let result = grid_search(&input, &labels, &base, &grid).map_err(train_failure)?;
    let report = &result.outcome.report;

    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: report.config.model,
        params: result.outcome.params.clone(),
        transform: result.outcome.transform,
        node_ips: bundle.graph.nodes.iter().map(|n| n.ip).collect(),
        test_ips: parts.test.clone(),
    };
    let dir = &a.output;
    write_file(dir, "checkpoint.json", |w| Ok(checkpoint.save(w)?))?;
    write_file(dir, "report.json", |w| Ok(report.write_json(w)?))?;
    write_file(dir, "split.csv", |w| Ok(parts.write_csv(w)?))?;
    if result.cells.len() > 1 {
        write_file(dir, "grid.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &GridFile { best: result.best, cells: &result.cells })?;
            Ok(writeln!(w)?)
        })?;
    }
    println!(
        "best_epoch {} best_val_km {:.3} epochs_run {} stop_reason {}",
        report.best_epoch,
        report.best_val_km,
        report.epochs_run,
        serde_json::to_string(&report.stop_reason).unwrap_or_default().trim_matches('"')
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GeolocateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Addresses to locate, one per line. Defaults to the graph's targets
    /// plus the held-out test landmarks.
    #[arg(long, conflicts_with = "all_nodes")]
    targets: Option<PathBuf>,
    /// Predict every node, routers included.
    #[arg(long)]
    all_nodes: bool,
    #[arg(short = 'o', long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

pub fn geolocate(a: GeolocateArgs) -> Result<(), Failure> {
    out_dir(&a.output)?;
    config::echo(&a.output, "geolocate", &a)?;
    let bundle = load_bundle(&a.graph)?;
    let ck = Checkpoint::load(open(&a.checkpoint)?)
        .with_context(|| format!("{}", a.checkpoint.display()))
        .map_err(Failure::Data)?;
    let node_ips: Vec<Ipv4Addr> = bundle.graph.nodes.iter().map(|n| n.ip).collect();
    if ck.node_ips != node_ips {
        return Err(Failure::Data(anyhow!(
            "{} was trained on a different graph than {}",
            a.checkpoint.display(),
            a.graph.display()
        )));
    }
    let ips = if a.all_nodes {
        node_ips
    } else {
        requested(&bundle, a.targets.as_deref(), &ck.test_ips)?
    };
    let index = bundle.graph.ip_index();
    let missing: Vec<String> = ips
        .iter()
        .filter(|ip| !index.contains_key(ip))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Data(anyhow!("not in the graph: {}", missing.join(", "))));
    }

    let input = ModelInput::from(&bundle.graph);
    let coords = predict_coords(&input, &ck.params, &ck.model, &ck.transform).map_err(train_failure)?;
    let rows: Vec<(Ipv4Addr, Coord)> = ips.iter().map(|ip| (*ip, coords[index[ip]])).collect();
    write_rows(&a.output, &rows)?;
    println!("predicted {}", rows.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Slg,
    CorrSlg,
    MlpGeo,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    graph: PathBuf,
    /// split.csv written by `train`.
    #[arg(long)]
    split: PathBuf,
    /// Addresses to locate, one per line. Defaults to the graph's targets
    /// plus the test landmarks of the split.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Corr-SLG correlation threshold of group A.
    #[arg(long, allow_hyphen_values = true)]
    ca: Option<f64>,
    /// Corr-SLG correlation threshold of group B.
    #[arg(long, allow_hyphen_values = true)]
    cb: Option<f64>,
    /// MLP-Geo input value marking a router on the path.
    #[arg(long, default_value_t = MlpGeoConfig::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = MlpGeoConfig::default().hidden)]
    hidden: usize,
    #[arg(long, default_value_t = MlpGeoConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = MlpGeoConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = MlpGeoConfig::default().seed)]
    seed: u64,
    #[arg(short = 'o', long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

pub fn baseline(a: BaselineArgs) -> Result<(), Failure> {
    let thresholds = match (a.method, a.ca, a.cb) {
        (Method::CorrSlg, Some(ca), Some(cb)) => Some((ca, cb)),
        (Method::CorrSlg, _, _) => {
            return Err(Failure::Usage(anyhow!("corr-slg needs both --ca and --cb")))
        }
        _ => None,
    };
    out_dir(&a.output)?;
    config::echo(&a.output, "baseline", &a)?;
    let bundle = load_bundle(&a.graph)?;
    let parts = Split::read_csv(open(&a.split)?)
        .with_context(|| format!("{}", a.split.display()))
        .map_err(Failure::Data)?;
    let by_ip: HashMap<Ipv4Addr, LandmarkRecord> = bundle.landmarks.iter().map(|l| (l.ip, *l)).collect();
    let records = |set: &[Ipv4Addr]| -> Result<Vec<LandmarkRecord>, Failure> {
        set.iter()
            .map(|ip| {
                by_ip
                    .get(ip)
                    .copied()
                    .ok_or_else(|| Failure::Data(anyhow!("{ip} in the split is not a landmark")))
            })
            .collect()
    };
    let train = records(&parts.train)?;
    let mut known = train.clone();
    known.extend(records(&parts.val)?);
    let targets = requested(&bundle, a.targets.as_deref(), &parts.test)?;
    let index = PathIndex::new(bundle.probe.ip, &bundle.completed_paths, &bundle.graph);

    let coords = match a.method {
        Method::Slg => targets
            .iter()
            .map(|t| slg_geolocate(*t, &known, &index))
            .collect::<Result<Vec<_>, _>>(),
        Method::CorrSlg => {
            let (ca, cb) = thresholds.expect("checked above");
            corr_slg_geolocate(&targets, &known, &index, ca, cb)
        }
        Method::MlpGeo => {
            let cfg = MlpGeoConfig {
                hidden: a.hidden,
                lr: a.lr,
                epochs: a.epochs,
                beta: a.beta,
                seed: a.seed,
            };
            let labels: Vec<(Ipv4Addr, Coord)> = train.iter().map(|l| (l.ip, l.coord())).collect();
            mlp_geo_train(&index, &labels, &cfg).and_then(|m| mlp_geo_predict(&m, &index, &targets))
        }
    }
    .map_err(baseline_failure)?;
    let rows: Vec<(Ipv4Addr, Coord)> = targets.into_iter().zip(coords).collect();
    write_rows(&a.output, &rows)?;
    println!("predicted {}", rows.len());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// ip,lat,lon predictions.
    #[arg(long)]
    predictions: PathBuf,
    /// ip,lat,lon ground truth.
    #[arg(long)]
    truth: PathBuf,
    #[arg(short = 'o', long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    out_dir(&a.output)?;
    config::echo(&a.output, "evaluate", &a)?;
    let preds = parse_predictions(open(&a.predictions)?)
        .with_context(|| format!("{}", a.predictions.display()))
        .map_err(Failure::Data)?;
    let truth = GroundTruth::parse(open(&a.truth)?).map_err(data_in(&a.truth))?;
    let missing: Vec<String> = preds
        .iter()
        .filter(|(ip, _)| truth.get(*ip).is_none())
        .map(|(ip, _)| ip.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no ground truth in {} for: {}",
            a.truth.display(),
            missing.join(", ")
        )));
    }
    let pred: Vec<Coord> = preds.iter().map(|(_, c)| *c).collect();
    let real: Vec<Coord> = preds.iter().filter_map(|(ip, _)| truth.get(*ip)).collect();
    let errors = errors_km(&pred, &real).map_err(|e| Failure::Data(e.into()))?;
    let stats = ErrorStats::from_errors(&errors).map_err(|e| Failure::Data(e.into()))?;
    let series = cdf(&errors).map_err(|e| Failure::Data(e.into()))?;
    write_file(&a.output, "metrics.json", |w| Ok(stats.write_json(w)?))?;
    write_file(&a.output, "cdf.csv", |w| Ok(series.write_csv(w)?))?;
    println!(
        "n {} average_km {:.3} median_km {:.3} max_km {:.3}",
        stats.n, stats.average_km, stats.median_km, stats.max_km
    );
    Ok(())
}
