//! Command-line front end: cost-volume demo, gradient checks, toy descent
//! traces, pseudo-GT filtering, evaluation and flow visualization.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pyraflow::cost_volume::{cost_volume, CvMode, SearchRange};
use pyraflow::diagnostics::{
    epe, error_histogram, evaluate, moving_average, write_histogram_csv, write_trace_csv, TraceRow, WelfordState,
    DEFAULT_BIN_EDGES,
};
use pyraflow::distill::{make_pseudo_gt, DistillConfig};
use pyraflow::gradcheck::{run_suite, Suite};
use pyraflow::grid::{build_pyramid, upsample_flow, FlowField};
use pyraflow::io::{
    colorize_flow, load_scene_spec, read_flow, read_image_png, write_flo, write_kitti_png, write_valid_png,
};
use pyraflow::toy::{coarse_to_fine_wta, descent_batch, gen_scene, Distance, Sampling, SceneFamily, SolveConfig};
use pyraflow::{Error, Result};

#[derive(Parser)]
#[command(name = "pyraflow", version, about = "Pyramid optical-flow operators and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Warp,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Corr,
    Sad,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Coarse-to-fine WTA on a toy scene; prints a cost-volume slice at the
    /// first object pixel. Exit 0 when sampling recovers the object or
    /// warping loses it, 1 otherwise.
    CvDemo {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Search radius at the finest level.
        #[arg(long, default_value_t = 8)]
        delta: usize,
        /// Search radius at coarser levels.
        #[arg(long, default_value_t = 4)]
        coarse_delta: usize,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = DistanceArg::Sad)]
        distance: DistanceArg,
        /// `family:seed` preset or a JSON scene file.
        #[arg(long, default_value = "small-object:0")]
        scene: String,
        /// Directory for the WTA flow (.flo and color PNG).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Finite-difference checks of every analytic gradient.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to these suites.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Scale the analytic gradient of a suite by 1.01 (must fail).
        #[arg(long = "perturb")]
        perturb: Vec<String>,
    },
    /// Two-level descent over seeds 0..K; writes `iter,ncc,beta_eff,sigma2`.
    ToyRun {
        #[arg(long, value_enum)]
        stop_gradient: Switch,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value = "conflict")]
        scene: String,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Trailing moving-average window over iterations.
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filters teacher flow into pseudo ground truth.
    DistillFilter {
        /// Teacher flow 1->2.
        #[arg(long)]
        teacher: PathBuf,
        /// Teacher flow 2->1.
        #[arg(long)]
        backward: PathBuf,
        #[arg(long)]
        image1: PathBuf,
        #[arg(long)]
        image2: PathBuf,
        /// Confidence map as a grayscale PNG scaled to [0, 1].
        #[arg(long)]
        confidence: PathBuf,
        /// Sparse ground truth (flow file with validity).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// `.png` writes KITTI format; otherwise `.flo` plus `<stem>_valid.png`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DistillConfig::default().photo_thresh)]
        photo_thresh: f64,
        #[arg(long, default_value_t = DistillConfig::default().conf_min)]
        conf_min: f64,
        #[arg(long, default_value_t = DistillConfig::default().gt_dist_max)]
        gt_dist_max: f64,
        #[arg(long, default_value_t = DistillConfig::default().erosion_radius)]
        erosion_radius: usize,
    },
    /// EPE and Fl-all of a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the magnitude-binned histogram CSV here.
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Comma-separated bin edges; `inf` allowed.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<f64>>,
    },
    /// Color-wheel visualization of a flow file.
    Viz {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Magnitude at full saturation; defaults to the largest valid magnitude.
        #[arg(long)]
        max_mag: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    pyraflow::init_threads();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::CvDemo { mode, delta, coarse_delta, levels, distance, scene, out_dir } => {
            cv_demo(mode, delta, coarse_delta, levels, distance, &scene, out_dir.as_deref())
        }
        Command::GradCheck { instances, seed, suites, perturb } => grad_check(instances, seed, &suites, &perturb),
        Command::ToyRun { stop_gradient, seeds, scene, iterations, step, window, out } => {
            toy_run(matches!(stop_gradient, Switch::On), seeds, &scene, iterations, step, window, out.as_deref())
        }
        Command::DistillFilter {
            teacher,
            backward,
            image1,
            image2,
            confidence,
            gt,
            out,
            photo_thresh,
            conf_min,
            gt_dist_max,
            erosion_radius,
        } => {
            let cfg = DistillConfig { photo_thresh, conf_min, gt_dist_max, erosion_radius, ..DistillConfig::default() };
            distill_filter(&teacher, &backward, &image1, &image2, &confidence, gt.as_deref(), &out, &cfg)
        }
        Command::Eval { pred, gt, histogram, bins } => eval(&pred, &gt, histogram.as_deref(), bins),
        Command::Viz { flow, out, max_mag } => viz(&flow, &out, max_mag),
    }
}

fn cv_demo(
    mode: ModeArg,
    delta: usize,
    coarse_delta: usize,
    levels: usize,
    distance: DistanceArg,
    scene: &str,
    out_dir: Option<&Path>,
) -> Result<bool> {
    let scene = gen_scene(&load_scene_spec(scene)?)?;
    let sampling = match mode {
        ModeArg::Warp => Sampling::Warp,
        ModeArg::Sample => Sampling::Sample,
    };
    let mut deltas = vec![coarse_delta; levels];
    if let Some(d) = deltas.first_mut() {
        *d = delta;
    }
    let cfg = SolveConfig {
        n_levels: levels,
        deltas,
        mode: sampling,
        distance: match distance {
            DistanceArg::Corr => Distance::Corr,
            DistanceArg::Sad => Distance::Sad,
        },
        ..SolveConfig::default()
    };
    let flow = coarse_to_fine_wta(&scene.i1, &scene.i2, &cfg)?;

    // finest-level volume against the upsampled coarser WTA flow
    let init = if levels > 1 {
        let coarse_cfg = SolveConfig { n_levels: levels - 1, deltas: cfg.deltas[1..].to_vec(), ..cfg.clone() };
        let p1 = build_pyramid(&scene.i1, 2)?;
        let p2 = build_pyramid(&scene.i2, 2)?;
        let coarse = coarse_to_fine_wta(&p1.levels[1], &p2.levels[1], &coarse_cfg)?;
        upsample_flow(&coarse, Some((scene.i1.height(), scene.i1.width())))
    } else {
        FlowField::zeros(scene.i1.height(), scene.i1.width())
    };
    let cv_mode = CvMode::from_parts(sampling == Sampling::Warp, cfg.distance == Distance::Sad);
    let r = SearchRange::new(delta);
    let cv = cost_volume(cv_mode, &scene.i1, &scene.i2, &init, r)?;
    let w = scene.i1.width();
    let first_object = scene.object_mask.iter().position(|&m| m);
    let mut out = io::stdout().lock();
    if let Some(i) = first_object {
        let (x, y) = (i % w, i / w);
        writeln!(out, "cost slice at object pixel ({x}, {y}), rows dv = -{delta}..{delta}, cols du = -{delta}..{delta}")?;
        for dv in -(delta as i64)..=delta as i64 {
            let row: Vec<String> =
                (-(delta as i64)..=delta as i64).map(|du| format!("{:.4}", cv.get(x, y, du, dv))).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_flo(dir.join("wta_flow.flo"), &flow)?;
        colorize_flow(&flow, max_magnitude(&flow))?.save(dir.join("wta_flow.png")).map_err(Error::from)?;
    }
    let Some(_) = first_object else {
        writeln!(out, "scene has no object pixels; nothing to assert")?;
        return Ok(true);
    };
    let object_epe = epe(&flow, &scene.gt_flow, &scene.object_mask)?;
    let all_epe = epe(&flow, &scene.gt_flow, &vec![true; flow.len()])?;
    let (ok, claim) = match sampling {
        Sampling::Sample => (object_epe == 0.0, "object recovered (EPE = 0)"),
        Sampling::Warp => (object_epe >= 1.0, "object lost (EPE >= 1)"),
    };
    writeln!(out, "object_epe {object_epe}")?;
    writeln!(out, "image_epe {all_epe}")?;
    writeln!(out, "{}: {claim}", if ok { "PASS" } else { "FAIL" })?;
    Ok(ok)
}

fn parse_suites(names: &[String]) -> Result<Vec<Suite>> {
    names
        .iter()
        .map(|n| {
            Suite::parse(n).ok_or_else(|| {
                let known: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown suite '{n}' (known: {})", known.join(", ")))
            })
        })
        .collect()
}

fn grad_check(instances: usize, seed: u64, suites: &[String], perturb: &[String]) -> Result<bool> {
    let selected = if suites.is_empty() { Suite::ALL.to_vec() } else { parse_suites(suites)? };
    let perturbed = parse_suites(perturb)?;
    let mut all_ok = true;
    let mut out = io::stdout().lock();
    for s in selected {
        let r = run_suite(s, instances, seed, perturbed.contains(&s))?;
        all_ok &= r.passed();
        writeln!(
            out,
            "{:<17} {} instances={} failures={} max_rel_err={:.3e}",
            s.name(),
            if r.passed() { "ok  " } else { "FAIL" },
            r.instances,
            r.failures,
            r.max_rel_err
        )?;
    }
    Ok(all_ok)
}

fn toy_run(
    stop: bool,
    seeds: u64,
    scene: &str,
    iterations: usize,
    step: f64,
    window: usize,
    out: Option<&Path>,
) -> Result<bool> {
    let family = SceneFamily::parse(scene).ok_or_else(|| Error::Config(format!("unknown scene family '{scene}'")))?;
    if seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let cfg = SolveConfig { stop_gradient: stop, iterations, step, ..SolveConfig::default() };
    let runs = descent_batch(family, seeds, &cfg, true)?;
    let n = seeds as f64;
    let mut ncc = Vec::with_capacity(iterations);
    let mut beta = Vec::with_capacity(iterations);
    let mut sigma2 = Vec::with_capacity(iterations);
    for it in 0..iterations {
        ncc.push(Some(runs.iter().map(|r| r.trace.steps[it].ncc).sum::<f64>() / n));
        let betas: Vec<f64> = runs.iter().filter_map(|r| r.trace.steps[it].beta_eff).collect();
        beta.push((!betas.is_empty()).then(|| betas.iter().sum::<f64>() / betas.len() as f64));
        let mut state = WelfordState::new(runs[0].trace.updates[it].len());
        for r in &runs {
            state.update(&r.trace.updates[it])?;
        }
        sigma2.push((seeds > 1).then(|| state.mean_variance()));
    }
    let (ncc, beta, sigma2) = (moving_average(&ncc, window), moving_average(&beta, window), moving_average(&sigma2, window));
    let rows: Vec<TraceRow> =
        (0..iterations).map(|i| TraceRow { iter: i, ncc: ncc[i], beta_eff: beta[i], sigma2: sigma2[i] }).collect();
    match out {
        Some(p) => write_trace_csv(&rows, BufWriter::new(File::create(p)?))?,
        None => write_trace_csv(&rows, io::stdout().lock())?,
    }
    let mean_ncc = runs.iter().map(|r| r.trace.mean_ncc()).sum::<f64>() / n;
    let mut losses: Vec<f64> = runs.iter().map(|r| r.final_loss()).collect();
    losses.sort_by(f64::total_cmp);
    let mid = losses.len() / 2;
    let median = if losses.len().is_multiple_of(2) { (losses[mid - 1] + losses[mid]) / 2.0 } else { losses[mid] };
    eprintln!("mean_ncc {mean_ncc:.4} median_final_loss {median:.4}");
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn distill_filter(
    teacher: &Path,
    backward: &Path,
    image1: &Path,
    image2: &Path,
    confidence: &Path,
    gt: Option<&Path>,
    out: &Path,
    cfg: &DistillConfig,
) -> Result<bool> {
    let f12 = read_flow(teacher)?;
    let f21 = read_flow(backward)?;
    let i1 = read_image_png(image1)?;
    let i2 = read_image_png(image2)?;
    let conf_img = read_image_png(confidence)?;
    if conf_img.channels() != 1 {
        return Err(Error::Config("confidence map must be a grayscale PNG".into()));
    }
    let gt = gt.map(read_flow).transpose()?;
    let pseudo = make_pseudo_gt(&f12, &f21, &i1, &i2, conf_img.data(), gt.as_ref(), cfg)?;
    let kept = pseudo.valid.iter().filter(|&&v| v).count();
    if out.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        write_kitti_png(out, &pseudo.to_flow())?;
    } else {
        write_flo(out, &pseudo.flow)?;
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pseudo_gt");
        let mask_path = out.with_file_name(format!("{stem}_valid.png"));
        write_valid_png(mask_path, &pseudo.valid, pseudo.flow.height(), pseudo.flow.width())?;
    }
    println!("kept {kept} of {} pixels", pseudo.valid.len());
    Ok(true)
}

fn eval(pred: &Path, gt: &Path, histogram: Option<&Path>, bins: Option<Vec<f64>>) -> Result<bool> {
    let pred = read_flow(pred)?;
    let gt = read_flow(gt)?;
    let report = evaluate(&pred, &gt)?;
    println!("epe {}", report.epe);
    println!("fl_all {}", report.fl_all);
    println!("n_valid {}", report.n_valid);
    if let Some(path) = histogram {
        let edges = bins.unwrap_or_else(|| DEFAULT_BIN_EDGES.to_vec());
        let h = error_histogram(&pred, &gt, &gt.valid_or_all(), &edges)?;
        write_histogram_csv(&h, BufWriter::new(File::create(path)?))?;
    }
    Ok(true)
}

fn max_magnitude(flow: &FlowField) -> f64 {
    let valid = flow.valid_or_all();
    let m = flow
        .data()
        .chunks_exact(2)
        .zip(valid)
        .filter(|(p, v)| *v && p[0].is_finite() && p[1].is_finite())
        .map(|(p, _)| p[0].hypot(p[1]))
        .fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn viz(flow: &Path, out: &Path, max_mag: Option<f64>) -> Result<bool> {
    let flow = read_flow(flow)?;
    let m = max_mag.unwrap_or_else(|| max_magnitude(&flow));
    colorize_flow(&flow, m)?.save(out)?;
    Ok(true)
}
