//! `sonovox`: staged driver for the synthetic ultrasound segmentation pipeline.
//!
//! Every stage reads and writes inside the `--out` directory:
//! `sim/` (RF frames, LiDAR clouds, generator boxes), `spherical/`,
//! `dataset/` (intensity volumes, masks, manifest), `model/`, and the
//! `boxes.csv`, `eval.csv` and `ablation.csv` reports.

mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sonovox_core::annotate::{write_boxes, BoxRecord};
use sonovox_core::beamform::Method;
use sonovox_core::config::PipelineConfig;
use sonovox_core::cvol;
use sonovox_core::dataset::{read_dataset, write_mask, ManifestEntry, MANIFEST_NAME};
use sonovox_core::eval::{ablation_to_csv, evaluate_dataset, CLASS_NAMES};
use sonovox_core::pipeline;
use sonovox_core::scene::{read_cloud, write_cloud, LabeledBox};
use sonovox_core::unet::train::log_to_csv;
use sonovox_core::unet::{train, Checkpoint};
use sonovox_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sonovox", version, about = "Synthetic 3D ultrasound segmentation pipeline")]
struct Cli {
    /// Pipeline settings file; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Working directory shared by all stages.
    #[arg(long, global = true, value_name = "DIR", default_value = "sonovox-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Skip CA-CFAR gating.
    #[arg(long, global = true)]
    no_cfar: bool,
    /// Keep frames without any object voxel.
    #[arg(long, global = true)]
    no_filter_empty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Das,
    Mvdr,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random scenes to two-sensor RF frames and LiDAR clouds.
    Simulate {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// RF frames to spherical intensity volumes.
    Beamform,
    /// CFAR, range compensation, Cartesian resampling and sensor merge.
    Process,
    /// LiDAR clouds to boxes and occupancy masks.
    Annotate,
    /// Trains the U-Net on the dataset directory.
    Train,
    /// Per-class metrics of the trained model on the validation frames.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Score every frame instead of the validation split.
        #[arg(long)]
        all: bool,
    },
    /// The 2 x 2 {empty-frame filtering, CFAR} grid, built in memory.
    Ablate {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// PGM views of a CVOL file.
    Render {
        input: PathBuf,
        /// Also write one image per height (or elevation) index.
        #[arg(long)]
        slices: bool,
    },
    /// Prints the effective configuration.
    Config,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.method {
        cfg.method = match m {
            MethodArg::Das => Method::Das,
            MethodArg::Mvdr => Method::Mvdr,
        };
    }
    if cli.no_cfar {
        cfg.cfar = false;
    }
    if cli.no_filter_empty {
        cfg.filter_empty = false;
    }
    match &cli.command {
        Command::Simulate { frames: Some(n) } | Command::Ablate { frames: Some(n) } => cfg.frames = *n,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

const SENSORS: [&str; 2] = ["left", "right"];
const FRAME_LIST: &str = "frames.txt";

fn frame_ids(out: &Path) -> Result<Vec<String>> {
    let path = out.join("sim").join(FRAME_LIST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("{}: {e} (run `simulate` first)", path.display())))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = out.join("sim");
    std::fs::create_dir_all(&dir)?;
    let mut ids = String::new();
    let mut truth = Vec::new();
    for i in 0..cfg.frames {
        let sim = pipeline::simulate_frame(cfg, i)?;
        for (name, rf) in SENSORS.iter().zip(&sim.rf) {
            cvol::write_rf(&dir.join(format!("{}.{name}.rf.cvol", sim.id)), rf)?;
        }
        write_cloud(&dir.join(format!("{}.cloud.csv", sim.id)), &sim.cloud)?;
        truth.extend(sim.scene.boxes.iter().map(|b| BoxRecord { frame_id: sim.id.clone(), labeled: b.clone() }));
        ids.push_str(&sim.id);
        ids.push('\n');
    }
    std::fs::write(dir.join(FRAME_LIST), ids)?;
    write_boxes(&dir.join("truth.csv"), &truth)?;
    std::fs::write(out.join("config.cfg"), cfg.dump())?;
    println!("simulate: {} frames -> {}", cfg.frames, dir.display());
    Ok(())
}

fn beamform(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ids = frame_ids(out)?;
    let dir = out.join("spherical");
    std::fs::create_dir_all(&dir)?;
    for id in &ids {
        for name in SENSORS {
            let rf = cvol::read_rf(&out.join("sim").join(format!("{id}.{name}.rf.cvol")))?;
            let v = pipeline::beamform_rf(cfg, &rf)?;
            cvol::write_spherical(&dir.join(format!("{id}.{name}.sph.cvol")), &v)?;
        }
    }
    let [p, r, t] = cfg.spherical_grid().shape();
    println!("beamform: {} frames, {} volumes {p}x{r}x{t} -> {}", ids.len(), cfg.method, dir.display());
    Ok(())
}

fn process(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ids = frame_ids(out)?;
    let dir = out.join("dataset");
    std::fs::create_dir_all(&dir)?;
    for id in &ids {
        let read = |name: &str| cvol::read_spherical(&out.join("spherical").join(format!("{id}.{name}.sph.cvol")));
        let vol = pipeline::process_volumes(cfg, &[read(SENSORS[0])?, read(SENSORS[1])?])?;
        cvol::write_volume(&dir.join(format!("{id}.intensity.cvol")), &vol)?;
    }
    println!("process: {} frames (cfar {}) -> {}", ids.len(), if cfg.cfar { "on" } else { "off" }, dir.display());
    Ok(())
}

fn annotate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ids = frame_ids(out)?;
    let dir = out.join("dataset");
    std::fs::create_dir_all(&dir)?;
    let mut records = Vec::new();
    let mut manifest = Vec::new();
    for id in &ids {
        let cloud = read_cloud(&out.join("sim").join(format!("{id}.cloud.csv")))?;
        let (boxes, mask) = pipeline::annotate_cloud(cfg, &cloud);
        let e = ManifestEntry {
            frame_id: id.clone(),
            intensity_path: PathBuf::from(format!("{id}.intensity.cvol")),
            mask_path: PathBuf::from(format!("{id}.mask.cvol")),
        };
        write_mask(&dir.join(&e.mask_path), &mask)?;
        manifest.push(e);
        records.extend(boxes.into_iter().map(|bbox| BoxRecord {
            frame_id: id.clone(),
            labeled: LabeledBox { bbox, class: "vehicle".to_string() },
        }));
    }
    std::fs::write(dir.join(MANIFEST_NAME), sonovox_core::dataset::manifest_to_string(&manifest))?;
    write_boxes(&out.join("boxes.csv"), &records)?;
    println!("annotate: {} frames, {} boxes -> {}", ids.len(), records.len(), dir.display());
    Ok(())
}

fn load_split(cfg: &PipelineConfig, out: &Path) -> Result<sonovox_core::dataset::DatasetSplit<sonovox_core::dataset::Frame>> {
    let frames = read_dataset(&out.join("dataset"))?;
    pipeline::prepare_split(cfg, frames, cfg.filter_empty)
}

fn train_cmd(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let split = load_split(cfg, out)?;
    let dir = out.join("model");
    std::fs::create_dir_all(&dir)?;
    let result = train(&split, &cfg.train_config())?;
    result.checkpoint.save(&dir.join("model.cckp"))?;
    std::fs::write(dir.join("train_log.csv"), log_to_csv(&result.log))?;
    let mut sets = String::from("frame_id,set\n");
    for (set, frames) in [("train", &split.train), ("val", &split.val)] {
        for f in frames.iter() {
            sets.push_str(&format!("{},{set}\n", f.id));
        }
    }
    std::fs::write(dir.join("split.csv"), sets)?;
    println!(
        "train: {} train / {} val frames, {} steps, best val loss {:.4} -> {}",
        split.train.len(),
        split.val.len(),
        result.steps,
        result.best_val_loss(),
        dir.display()
    );
    Ok(())
}

fn eval_cmd(cfg: &PipelineConfig, out: &Path, model: Option<&Path>, all: bool) -> Result<()> {
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| out.join("model").join("model.cckp"));
    let ckpt = Checkpoint::load(&path)?;
    let split = load_split(cfg, out)?;
    let frames = if all { [split.train, split.val].concat() } else { split.val };
    let eval = evaluate_dataset(&ckpt.params, &frames)?;
    std::fs::write(out.join("eval.csv"), eval.to_csv())?;
    for (name, m) in CLASS_NAMES.iter().zip(eval.metrics()) {
        println!(
            "{name}: recall {:.4} precision {:.4} f1 {:.4} iou {:.4}{}",
            m.recall,
            m.precision,
            m.f1,
            m.iou,
            if m.undefined { " (undefined terms read 0)" } else { "" }
        );
    }
    Ok(())
}

fn ablate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let rows = pipeline::ablation(cfg)?;
    let csv = ablation_to_csv(&rows);
    std::fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    for r in &rows {
        if let Err(e) = &r.result {
            eprintln!("ablate: {} failed: {e}", r.config.id());
        }
    }
    Ok(())
}

fn set_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SONOVOX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config { field: "SONOVOX_THREADS".into(), reason: format!("expected a positive integer, found {raw:?}") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Format(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    set_threads()?;
    if let Command::Render { input, slices } = &cli.command {
        let written = render::render_file(input, &cli.out.join("render"), *slices)?;
        println!("render: {} images -> {}", written.len(), cli.out.join("render").display());
        return Ok(());
    }
    let cfg = effective_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate { .. } => simulate(&cfg, out),
        Command::Beamform => beamform(&cfg, out),
        Command::Process => process(&cfg, out),
        Command::Annotate => annotate(&cfg, out),
        Command::Train => train_cmd(&cfg, out),
        Command::Eval { model, all } => eval_cmd(&cfg, out, model.as_deref(), *all),
        Command::Ablate { .. } => ablate(&cfg, out),
        Command::Config => {
            print!("{}", cfg.dump());
            Ok(())
        }
        Command::Render { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
