use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::info;
use stm_core::formats::{load_sphs, read_idx_images, read_off, read_pnm, save_sphs, save_sphs_labels, write_pgm, Sphs};
use stm_core::healpix::{neighbors, pix2vec, vec_to_ang, Direction};
use stm_core::projection::{
    depth_channels, equirect_resample, normalize_mesh, project_digit, raycast_depth, render_projection, render_views,
    EquirectImage, RenderConfig, Sampling,
};
use stm_core::transformer::gather;
use stm_core::{GridLevel, Level, StmError, TransformerGrid};

use crate::batch::{project_batch, ProjectionKind};
use crate::bench::bench_gather;
use crate::eval::{eval_cls, eval_seg, seg_csv, seg_table, SegSource};
use crate::train::{train_smnist, TrainConfig};
use crate::{
    BenchCmd, Cli, CliError, CliResult, Command, EvalCmd, GridCmd, ProjectCmd, RenderArgs, StmCmd, TrainCmd,
};

pub(crate) fn dispatch(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let level = |default: u32| Level::new(cli.level.unwrap_or(default)).map_err(CliError::from);
    match cli.command {
        Command::Grid(cmd) => grid(cmd, level(4)?),
        Command::Project(cmd) => project(cmd, level(5)?),
        Command::Stm(StmCmd::Gather { input, out, channel }) => stm_gather(&input, out.as_deref(), channel),
        Command::Train(TrainCmd::Smnist(a)) => {
            let cfg = TrainConfig {
                level: level(4)?,
                model_config: a.model_config,
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                momentum: a.momentum,
                weight_decay: a.weight_decay,
                seed: cli.seed,
                limit_train: a.limit_train,
                limit_test: a.limit_test,
                ..TrainConfig::new(a.data_dir, a.out_dir)
            };
            let r = train_smnist(&cfg)?;
            println!("parameters {}", r.param_count);
            for split in ["train", "test"] {
                if let Some(m) = r.last(split) {
                    println!("{split} loss {:.4} accuracy {:.4}", m.loss, m.accuracy);
                }
            }
            println!("metrics {}\ncheckpoint {}\nseconds {:.1}", r.csv_path.display(), r.checkpoint_path.display(), r.seconds);
            Ok(())
        }
        Command::Eval(cmd) => eval(cmd),
        Command::Bench(BenchCmd::Gather { channels, iterations }) => {
            println!("{}", bench_gather(level(5)?, channels, iterations, cli.seed)?);
            Ok(())
        }
    }
}

fn grid(cmd: GridCmd, level: Level) -> CliResult {
    let g = GridLevel::cached(level);
    match cmd {
        GridCmd::Info => {
            let t = TransformerGrid::cached(level);
            let n = level.n_pixels();
            println!("level {level}\nnside {}\npixels {n}", level.nside());
            println!("pixel area {:.6e} sr", 4.0 * std::f64::consts::PI / n as f64);
            println!("pixels with 7 neighbours {}", g.seven_neighbor_count());
            println!("empty patch slots {}", t.missing_count());
        }
        GridCmd::Neighbors { pix } => {
            let nb = neighbors(level, pix)?;
            let (theta, phi) = vec_to_ang(pix2vec(level, pix)?);
            println!("pixel {pix} theta {theta:.6} phi {phi:.6}");
            for (d, p) in Direction::ALL.iter().zip(nb) {
                if p < 0 {
                    println!("{d:?} -");
                } else {
                    println!("{d:?} {p}");
                }
            }
        }
        GridCmd::Dump { out } => {
            let mut w: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            writeln!(w, "pix,x,y,z,theta,phi,base")?;
            for (p, v) in g.centers().iter().enumerate() {
                let (theta, phi) = vec_to_ang(*v);
                writeln!(w, "{p},{:.12},{:.12},{:.12},{theta:.12},{phi:.12},{}", v[0], v[1], v[2], g.base_region(p))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn render_config(a: &RenderArgs) -> RenderConfig {
    RenderConfig { resolution: a.res, distance: a.distance, fov_deg: a.fov }
}

fn check_render_config(cfg: &RenderConfig) -> CliResult {
    if !(cfg.distance > 1.0 && cfg.distance.is_finite()) {
        return Err(CliError::Usage("--distance must exceed 1 so the camera sits outside the unit ball".into()));
    }
    if !(cfg.fov_deg > 0.0 && cfg.fov_deg < 180.0) {
        return Err(CliError::Usage("--fov must lie in (0, 180) degrees".into()));
    }
    Ok(())
}

fn project(cmd: ProjectCmd, level: Level) -> CliResult {
    match cmd {
        ProjectCmd::Depth { mesh, out } => {
            let m = normalize_mesh(&read_off(&mesh)?.mesh)?;
            let sig = depth_channels(&m, level)?;
            save_sphs(&out, &sig.cast())?;
            println!("{}: level {level}, 6 channels", out.display());
        }
        ProjectCmd::Render { mesh, out, render, dump_views } => {
            let cfg = render_config(&render);
            check_render_config(&cfg)?;
            let m = normalize_mesh(&read_off(&mesh)?.mesh)?;
            let cast = raycast_depth(&m, level)?;
            let views = render_views(&m, &cfg)?;
            let (sig, stats) = render_projection(&m, &cast, &views)?;
            if let Some(dir) = dump_views {
                fs::create_dir_all(&dir)?;
                for (r, v) in views.views.iter().enumerate() {
                    let mut w = BufWriter::new(File::create(dir.join(format!("view{r:02}.pgm")))?);
                    write_pgm(&mut w, v.resolution, v.resolution, &v.gray)?;
                    w.flush()?;
                }
            }
            save_sphs(&out, &sig.cast())?;
            println!(
                "{}: level {level}, 1 channel, {} hits, {} misses, {} shaded directly",
                out.display(),
                stats.hits,
                stats.misses,
                stats.fallbacks
            );
        }
        ProjectCmd::Equirect { img, out, mode, labels } => {
            let mode: Sampling = mode.parse()?;
            let im = read_pnm(&img)?;
            if labels && (mode != Sampling::Nearest || im.channels != 1) {
                return Err(CliError::Usage("--labels needs --mode nearest and a single-channel PGM".into()));
            }
            let scale = if labels { 1.0 } else { 1.0 / 255.0 };
            let data = im.data.iter().map(|&b| b as f32 * scale).collect();
            let eq = EquirectImage::new(im.width, im.height, im.channels, data)?;
            let sig = equirect_resample(&eq, level, mode);
            if labels {
                let l: Vec<u8> = sig.data().iter().map(|&v| v as u8).collect();
                save_sphs_labels(&out, level, &l)?;
            } else {
                save_sphs(&out, &sig)?;
            }
            println!("{}: level {level}, {} channel(s)", out.display(), im.channels);
        }
        ProjectCmd::Digit { idx, index, out } => {
            let imgs = read_idx_images(&idx)?;
            if index >= imgs.len() {
                return Err(StmError::Index(format!("digit {index} of {}", imgs.len())).into());
            }
            save_sphs(&out, &project_digit(imgs.image(index), level)?)?;
            println!("{}: digit {index} at level {level}", out.display());
        }
        ProjectCmd::Batch { mesh_dir, out_dir, kind, force, render } => {
            let kind: ProjectionKind = kind.parse()?;
            let cfg = render_config(&render);
            check_render_config(&cfg)?;
            let r = project_batch(&mesh_dir, &out_dir, level, kind, &cfg, force)?;
            println!("written {} skipped {} failed {}", r.written.len(), r.skipped.len(), r.failed.len());
            for (p, e) in &r.failed {
                eprintln!("{}: {e}", p.display());
            }
            if !r.failed.is_empty() {
                let total = r.written.len() + r.skipped.len() + r.failed.len();
                return Err(CliError::Partial { failed: r.failed.len(), total });
            }
        }
    }
    Ok(())
}

fn stm_gather(input: &Path, out: Option<&Path>, channel: usize) -> CliResult {
    let Sphs::F32(sig) = load_sphs(input)? else {
        return Err(StmError::Contract("gather needs a signal, not labels".into()).into());
    };
    if channel >= sig.channels() {
        return Err(CliError::Usage(format!("--channel {channel} but the signal has {}", sig.channels())));
    }
    let t = gather(&sig, &TransformerGrid::cached(sig.level()))?;
    let (h, w, c) = t.shape();
    println!("patches {h} x {w} x {c}");
    if let Some(out) = out {
        let vals: Vec<f32> = t.data().iter().skip(channel).step_by(c).copied().collect();
        let (lo, hi) = vals.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let scaled: Vec<f32> = vals.iter().map(|v| (v - lo) / span).collect();
        let mut f = BufWriter::new(File::create(out)?);
        write_pgm(&mut f, w, h, &scaled)?;
        f.flush()?;
        info!("channel {channel} range [{lo}, {hi}] written to {}", out.display());
    }
    Ok(())
}

fn eval(cmd: EvalCmd) -> CliResult {
    match cmd {
        EvalCmd::Cls { config, checkpoint, images, labels, limit } => {
            let r = eval_cls(&config, &checkpoint, &images, &labels, limit)?;
            println!("samples {}\nloss {:.4}\naccuracy {:.4}", r.samples, r.loss, r.accuracy);
        }
        EvalCmd::Seg { labels_dir, predictions_dir, signals_dir, config, checkpoint, classes, csv } => {
            let source = match (&predictions_dir, &signals_dir, &config, &checkpoint) {
                (Some(p), None, None, None) => SegSource::Predictions(p),
                (None, Some(s), Some(c), Some(k)) => SegSource::Model { signals: s, config: c, checkpoint: k },
                _ => {
                    return Err(CliError::Usage(
                        "give either --predictions-dir or --signals-dir with --config and --checkpoint".into(),
                    ))
                }
            };
            let r = eval_seg(&labels_dir, source, classes)?;
            println!("{} file pairs\n{}", r.files, seg_table(&r.report));
            if let Some(p) = csv {
                fs::write(p, seg_csv(&r.report))?;
            }
        }
    }
    Ok(())
}
