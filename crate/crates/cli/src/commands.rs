//! The pipeline behind each subcommand, usable without the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nnfdk_core::baselines::{sirt_plus_with, SirtWeights};
use nnfdk_core::fdk::{fdk, hann_filter, ramlak_filter};
use nnfdk_core::io::{self, ArrayMeta};
use nnfdk_core::metrics::{self, Label, SegMetrics, Segmentation};
use nnfdk_core::nnfdk::reconstruct as nn_reconstruct;
use nnfdk_core::phantoms::{add_noise, generate_spec_with, rasterize, simulate_data, PhantomSpec};
use nnfdk_core::training::{self, build_sets, roi_mask, Dataset, SampleBudget, TrainHistory};
use nnfdk_core::{
    ConeBeamGeometry, ExpBinning, NetworkParams, OpCounts, ProjectionData, Projector, Volume,
};
use serde::Serialize;

use crate::config::{Config, Method};
use crate::error::CliError;
use crate::output::write_slice_png;

pub type Result<T> = std::result::Result<T, CliError>;

pub const GROUND_TRUTH: &str = "ground_truth";
pub const CLEAN: &str = "clean";
pub const NOISY: &str = "noisy";
pub const SPEC_FILE: &str = "spec.json";
pub const GEOMETRY_FILE: &str = "geometry.json";

/// Seeds for the independent random streams of one run.
fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x6e6f_6973_6500_0001
}

fn sampling_seed(seed: u64) -> u64 {
    seed ^ 0x7361_6d70_6c65_0002
}

fn init_seed(seed: u64) -> u64 {
    seed ^ 0x696e_6974_0000_0003
}

fn meta_for(config: &Config, meta: ArrayMeta) -> ArrayMeta {
    meta.with_config(config.hash(), config.to_json())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(nnfdk_core::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub struct Generated {
    pub spec: PhantomSpec,
    pub geometry: ConeBeamGeometry,
    pub ground_truth: Volume,
    pub clean: ProjectionData,
    /// Equal to `clean` when no photon count is configured.
    pub noisy: ProjectionData,
}

pub fn generate(config: &Config) -> Result<Generated> {
    config.validate()?;
    let geometry = config.geometry.build()?;
    let p = &config.phantom;
    let spec = generate_spec_with(p.family, config.seed, p.mu, geometry.phys_size());
    let ground_truth = rasterize(&spec, geometry.n_voxels);
    let clean = simulate_data(&spec, &geometry, p.oversample)?;
    let noisy = match p.i0 {
        Some(i0) => add_noise(&clean, i0, noise_seed(config.seed))?,
        None => clean.clone(),
    };
    Ok(Generated {
        spec,
        geometry,
        ground_truth,
        clean,
        noisy,
    })
}

pub fn cmd_generate(config: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let g = generate(config)?;
    fs::create_dir_all(out_dir)?;
    let n = g.geometry.n_voxels;
    let proj_meta = || {
        meta_for(
            config,
            ArrayMeta::projections(g.geometry.n_angles, g.geometry.n_detector)
                .with_geometry(&g.geometry),
        )
    };
    let files = vec![
        out_dir.join(SPEC_FILE),
        out_dir.join(GEOMETRY_FILE),
        out_dir.join(GROUND_TRUTH),
        out_dir.join(CLEAN),
        out_dir.join(NOISY),
    ];
    write_json(&files[0], &g.spec)?;
    write_json(&files[1], &g.geometry)?;
    io::write_array(
        &files[2],
        &g.ground_truth.data,
        &meta_for(config, ArrayMeta::volume(n).with_geometry(&g.geometry)),
    )?;
    io::write_array(&files[3], &g.clean.data, &proj_meta())?;
    io::write_array(&files[4], &g.noisy.data, &proj_meta())?;
    Ok(files)
}

/// Counts of projector work done by one reconstruction.
#[derive(Debug, Clone, Serialize)]
pub struct OpsReport {
    pub method: String,
    pub forward_projections: usize,
    pub backprojections: usize,
    pub filter_passes: usize,
    pub projector_calls: usize,
    /// Work spent on SIRT weights, outside the iterations.
    pub setup_projector_calls: usize,
    pub seconds: f64,
}

impl OpsReport {
    fn new(method: Method, ops: OpCounts, setup: usize, seconds: f64) -> Self {
        Self {
            method: method.name().into(),
            forward_projections: ops.forward,
            backprojections: ops.back,
            filter_passes: ops.filter,
            projector_calls: ops.projector_calls(),
            setup_projector_calls: setup,
            seconds,
        }
    }
}

pub struct Reconstruction {
    pub volume: Volume,
    pub ops: OpsReport,
    pub residuals: Vec<(usize, f64)>,
}

pub fn reconstruct(
    config: &Config,
    method: Method,
    projector: &Projector,
    projections: &ProjectionData,
    network: Option<&NetworkParams>,
) -> Result<Reconstruction> {
    let g = projector.geometry();
    let start = Instant::now();
    let mut setup = 0;
    let mut residuals = Vec::new();
    let mut before = projector.counts();
    let volume = match method {
        Method::FdkRamLak => fdk(
            projector,
            projections,
            &ramlak_filter(g.n_detector, g.pixel_size)?,
        )?,
        Method::FdkHann => fdk(
            projector,
            projections,
            &hann_filter(g.n_detector, g.pixel_size)?,
        )?,
        Method::SirtPlus => {
            let weights = SirtWeights::compute(projector)?;
            setup = projector.counts().since(&before).projector_calls();
            before = projector.counts();
            let r = sirt_plus_with(
                projector,
                projections,
                &weights,
                config.reconstruct.sirt_iterations,
                config.reconstruct.record_every,
            )?;
            residuals = r.residuals;
            r.volume
        }
        Method::NnFdk => {
            let net =
                network.ok_or_else(|| CliError::Usage("nn-fdk needs a network file".into()))?;
            nn_reconstruct(net, projector, projections)?
        }
    };
    let ops = OpsReport::new(
        method,
        projector.counts().since(&before),
        setup,
        start.elapsed().as_secs_f64(),
    );
    Ok(Reconstruction {
        volume,
        ops,
        residuals,
    })
}

fn geometry_of(meta: &ArrayMeta, base: &Path) -> Result<ConeBeamGeometry> {
    meta.geometry
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{} carries no geometry", base.display())))
}

pub fn read_network(path: &Path) -> Result<NetworkParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("network {}: {e}", path.display())))?;
    Ok(NetworkParams::from_json(&text)?)
}

pub fn cmd_reconstruct(
    config: &Config,
    input: &Path,
    network: Option<&Path>,
    output: &Path,
) -> Result<OpsReport> {
    let (projections, meta) = io::read_projections(input)?;
    let geometry = geometry_of(&meta, input)?;
    let projector = Projector::new(geometry.clone())?;
    let method = config.reconstruct.method;
    let net = match (method, network) {
        (Method::NnFdk, Some(path)) => Some(read_network(path)?),
        (Method::NnFdk, None) => return Err(CliError::Usage("nn-fdk needs --network".into())),
        _ => None,
    };
    let r = reconstruct(config, method, &projector, &projections, net.as_ref())?;
    io::write_array(
        output,
        &r.volume.data,
        &meta_for(
            config,
            ArrayMeta::volume(geometry.n_voxels).with_geometry(&geometry),
        ),
    )?;
    write_json(&output.with_extension("ops.json"), &r.ops)?;
    if !r.residuals.is_empty() {
        let mut text = String::from("iteration\tresidual\n");
        for (it, res) in &r.residuals {
            text.push_str(&format!("{it}\t{res:e}\n"));
        }
        fs::write(output.with_extension("residuals.tsv"), text)?;
    }
    Ok(r.ops)
}

/// Reads the noisy projections and ground truth written by `generate`.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, ConeBeamGeometry)> {
    let (projections, meta) = io::read_projections(&dir.join(NOISY))?;
    let geometry = geometry_of(&meta, &dir.join(NOISY))?;
    let (hq, _) = io::read_volume(&dir.join(GROUND_TRUTH))?;
    hq.check_geometry(&geometry)?;
    Ok((Dataset { projections, hq }, geometry))
}

pub fn train_network(
    config: &Config,
    projector: &Projector,
    train_sets: &[Dataset],
    val_sets: &[Dataset],
) -> Result<(NetworkParams, TrainHistory)> {
    let t = &config.train;
    let binning = ExpBinning::new(projector.geometry().n_detector)?;
    let budget = SampleBudget {
        n_train: t.n_train,
        n_val: t.n_val,
        seed: sampling_seed(config.seed),
    };
    let data = build_sets(projector, train_sets, val_sets, budget, &binning)?;
    Ok(training::train(
        &data,
        &t.lma,
        t.n_hidden,
        init_seed(config.seed),
    )?)
}

pub fn cmd_train(
    config: &Config,
    train_dirs: &[PathBuf],
    val_dirs: &[PathBuf],
    output: &Path,
) -> Result<TrainHistory> {
    if train_dirs.is_empty() {
        return Err(CliError::Usage(
            "train needs at least one --data directory".into(),
        ));
    }
    let mut geometry: Option<ConeBeamGeometry> = None;
    let mut load = |dirs: &[PathBuf]| -> Result<Vec<Dataset>> {
        dirs.iter()
            .map(|d| {
                let (ds, g) = load_dataset(d)?;
                match &geometry {
                    Some(first) if *first != g => Err(CliError::Usage(format!(
                        "{} was generated with a different geometry",
                        d.display()
                    ))),
                    Some(_) => Ok(ds),
                    None => {
                        geometry = Some(g);
                        Ok(ds)
                    }
                }
            })
            .collect()
    };
    let train_sets = load(train_dirs)?;
    let val_sets = load(val_dirs)?;
    let projector = Projector::new(geometry.expect("at least one dataset"))?;
    let (params, history) = train_network(config, &projector, &train_sets, &val_sets)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(output, params.to_json()? + "\n")?;
    fs::write(output.with_extension("history.tsv"), history.to_delimited())?;
    Ok(history)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub name: String,
    pub tse: f64,
    pub ssim: f64,
    pub seg: Vec<(Label, SegMetrics)>,
}

pub const SEG_CLASSES: [Label; 3] = [Label::Shell, Label::EmptySpace, Label::Kernel];

/// Tab-separated header: `name tse ssim` and, with segmentation, `v_err
/// ml_err dice` per class in shell, empty_space, kernel order.
pub fn metrics_header(with_seg: bool) -> String {
    let mut cols = vec!["name".to_string(), "tse".into(), "ssim".into()];
    if with_seg {
        for l in SEG_CLASSES {
            for m in ["v_err", "ml_err", "dice"] {
                cols.push(format!("{}_{m}", l.name()));
            }
        }
    }
    cols.join("\t")
}

impl MetricsRow {
    pub fn to_line(&self) -> String {
        let mut cols = vec![
            self.name.clone(),
            format!("{:e}", self.tse),
            format!("{:.6}", self.ssim),
        ];
        for (_, m) in &self.seg {
            cols.extend([
                format!("{:.6}", m.v_err),
                format!("{:.6}", m.ml_err),
                format!("{:.6}", m.dice),
            ]);
        }
        cols.join("\t")
    }
}

pub fn evaluate(
    config: &Config,
    name: &str,
    recon: &Volume,
    hq: &Volume,
    gold: Option<&Segmentation>,
) -> Result<MetricsRow> {
    let roi = roi_mask(hq)?;
    let mut row = MetricsRow {
        name: name.into(),
        tse: metrics::tse(recon, hq, &roi)?,
        ssim: metrics::ssim(recon, hq, &roi)?,
        seg: Vec::new(),
    };
    if let Some(gold) = gold {
        let seg = metrics::segment(recon, &config.segment)?;
        for l in SEG_CLASSES {
            row.seg
                .push((l, metrics::seg_metrics(&seg.mask(l), &gold.mask(l))?));
        }
    }
    Ok(row)
}

fn labels_from_volume(v: &Volume) -> Result<Segmentation> {
    let labels = v
        .data
        .iter()
        .map(|&x| match x.round() as i64 {
            0 => Ok(Label::Background),
            1 => Ok(Label::Shell),
            2 => Ok(Label::EmptySpace),
            3 => Ok(Label::Kernel),
            _ => Err(CliError::Usage(format!("{x} is not a segmentation label"))),
        })
        .collect::<Result<_>>()?;
    Ok(Segmentation { n: v.n, labels })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recon".into())
}

pub fn cmd_evaluate(
    config: &Config,
    hq_path: &Path,
    recons: &[PathBuf],
    gold_seg: Option<&Path>,
    out_dir: &Path,
    png: bool,
) -> Result<Vec<MetricsRow>> {
    let (hq, _) = io::read_volume(hq_path)?;
    let gold = gold_seg
        .map(|p| {
            io::read_volume(p)
                .map_err(CliError::from)
                .and_then(|(v, _)| labels_from_volume(&v))
        })
        .transpose()?;
    fs::create_dir_all(out_dir)?;
    let (lo, hi) = hq
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let mut rows = Vec::new();
    let mut table = metrics_header(gold.is_some()) + "\n";
    for path in recons {
        let (recon, _) = io::read_volume(path)?;
        if recon.n != hq.n {
            return Err(nnfdk_core::Error::ShapeMismatch {
                expected: format!("{0}³ volume", hq.n),
                actual: format!("{0}³ volume", recon.n),
            }
            .into());
        }
        let name = stem(path);
        let row = evaluate(config, &name, &recon, &hq, gold.as_ref())?;
        table.push_str(&row.to_line());
        table.push('\n');
        if png {
            let n = recon.n;
            write_slice_png(
                &out_dir.join(format!("{name}_z.png")),
                recon.slice_z(n / 2),
                n,
                n,
                lo,
                hi,
            )?;
            write_slice_png(
                &out_dir.join(format!("{name}_x.png")),
                &recon.slice_x(n / 2),
                n,
                n,
                lo,
                hi,
            )?;
        }
        rows.push(row);
    }
    fs::write(out_dir.join("metrics.tsv"), table)?;
    Ok(rows)
}

pub fn cmd_segment(config: &Config, input: &Path, output: &Path) -> Result<Segmentation> {
    let (volume, meta) = io::read_volume(input)?;
    let seg = metrics::segment(&volume, &config.segment)?;
    let mut out_meta = ArrayMeta::new("labels", vec![volume.n; 3], "label");
    if let Some(g) = &meta.geometry {
        out_meta = out_meta.with_geometry(g);
    }
    io::write_array(output, &seg.to_volume().data, &meta_for(config, out_meta))?;
    Ok(seg)
}
