use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tfus_core::acoustic::build_medium;
use tfus_core::config::RunConfig;
use tfus_core::eval::{read_report_csv, summarize, write_report_csv, CaseComparison};
use tfus_core::phantom::{make_shell_phantom, perturb_to_sct};
use tfus_core::pipeline::{choose_pose, compare_batch, compare_case, extract, plan, simulate_extracted};
use tfus_core::transducer::check_tilt;
use tfus_core::volume::{read_volume, write_volume};
use tfus_core::{Error, Result, ResultExt, Stage, Volume, WorldPoint};

use crate::{manifest, Cli, Command, Pose};

/// Output directory plus the files written so far, for the manifest.
struct Run<'a> {
    out_dir: &'a Path,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn load(&mut self, path: &Path) -> Result<Volume> {
        let v = read_volume(path).stage(Stage::Load)?;
        self.inputs.push(path.to_path_buf());
        Ok(v)
    }

    fn volume(&mut self, name: &str, vol: &Volume) -> Result<()> {
        let p = self.out_dir.join(name);
        write_volume(vol, &p)?;
        self.outputs.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let p = self.out_dir.join(name);
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = BufWriter::new(f);
        write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&p, e))?;
        self.outputs.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
        self.text(name, |w| w.write_all(text.as_bytes()))
    }
}

fn grid_centre(v: &Volume) -> WorldPoint {
    let d = v.dims();
    v.grid().index_to_world([0, 1, 2].map(|a| (d[a] as f64 - 1.0) / 2.0))
}

fn resolve_target(v: &Volume, target: Option<WorldPoint>) -> Result<WorldPoint> {
    let t = target.unwrap_or_else(|| grid_centre(v));
    if !v.grid().contains(&t) {
        return Err(Error::outside("target", &t).at(Stage::Plan));
    }
    Ok(t)
}

/// Explicit tilt if either angle is given, otherwise the configured pose or optimizer.
fn resolve_tilt(pose: &Pose, ct_skull: &Volume, target: &WorldPoint, cfg: &RunConfig) -> Result<(f64, f64)> {
    if pose.tilt_x.is_some() || pose.tilt_y.is_some() {
        let t = (pose.tilt_x.unwrap_or(0.0), pose.tilt_y.unwrap_or(0.0));
        check_tilt(t.0, t.1).stage(Stage::Plan)?;
        return Ok(t);
    }
    choose_pose(ct_skull, target, &cfg.pipeline)
}

#[derive(Serialize)]
struct PlanOut<'a> {
    target: WorldPoint,
    tilt_x: f64,
    tilt_y: f64,
    nae: usize,
    sdr: f64,
    st_mean: f64,
    active: &'a [bool],
}

#[derive(Serialize)]
struct SimulationOut {
    target: WorldPoint,
    tilt_x: f64,
    tilt_y: f64,
    max_rms: f64,
    argmax: WorldPoint,
    focal_shift: f64,
    points_per_wavelength: f64,
    steps: usize,
    dt: f64,
}

#[derive(Serialize)]
struct CohortEntry {
    case_id: String,
    rct: String,
    sct: String,
    target: WorldPoint,
}

fn compare_line(rows: &[CaseComparison]) -> String {
    let s = summarize(rows);
    format!(
        "cases={} overlap={:.3} deficit={:.1}% focal_shift rCT={:.2} sCT={:.2} mm",
        s.cases,
        s.overlap_fraction.mean,
        s.pressure_deficit_pct.mean,
        s.focal_shift_rct.mean,
        s.focal_shift_sct.mean
    )
}

pub fn dispatch(cli: &Cli, cfg: RunConfig) -> Result<()> {
    let out_dir = cli.global.out_dir.as_path();
    let mut run = Run { out_dir, inputs: Vec::new(), outputs: Vec::new() };
    let p = &cfg.pipeline;
    let needs_out = !matches!(cli.command, Command::Serve { .. } | Command::Config { .. });
    if needs_out {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }

    let line = match &cli.command {
        Command::Extract { ct } => {
            let ct = run.load(ct)?;
            let ex = extract(&ct, &p.skull)?;
            run.volume("skull_mask.vol", &ex.skull.mask)?;
            run.volume("ct_skull.nii", &ex.ct_skull)?;
            format!(
                "skull voxels={} threshold={} HU dilation={} mm",
                ex.skull.voxel_count(),
                p.skull.threshold_hu,
                p.skull.dilation_mm
            )
        }
        Command::Phantom { cohort: false } => {
            let ph = &cfg.phantom;
            let rct = make_shell_phantom(&ph.shell, ph.dims, ph.spacing_mm).stage(Stage::Phantom)?;
            let sct = perturb_to_sct(&rct, &cfg.perturbation).stage(Stage::Phantom)?;
            run.volume("rct.nii", &rct)?;
            run.volume("sct.nii", &sct)?;
            format!("phantom {:?} at {:?} mm, sCT seed {}", ph.dims, ph.spacing_mm, cfg.perturbation.rng_seed)
        }
        Command::Phantom { cohort: true } => {
            let mut index = Vec::new();
            for i in 0..cfg.cohort.cases {
                let c = cfg.cohort.make_case(i).stage(Stage::Phantom)?;
                let (r, s) = (format!("{}_rct.nii", c.case_id), format!("{}_sct.nii", c.case_id));
                run.volume(&r, &c.rct)?;
                run.volume(&s, &c.sct)?;
                index.push(CohortEntry { case_id: c.case_id, rct: r, sct: s, target: c.target });
            }
            run.json("cohort.json", &index)?;
            format!("cohort of {} cases, seed {}", cfg.cohort.cases, cfg.cohort.seed)
        }
        Command::Plan { ct, pose } => {
            let ct = run.load(ct)?;
            let target = resolve_target(&ct, pose.target)?;
            let ex = extract(&ct, &p.skull)?;
            let tilt = resolve_tilt(pose, &ex.ct_skull, &target, &cfg)?;
            let (_, summary) = plan(&ex.ct_skull, &target, tilt, p)?;
            run.text("elements.csv", |w| summary.write_element_csv(w))?;
            run.json(
                "plan.json",
                &PlanOut {
                    target,
                    tilt_x: tilt.0,
                    tilt_y: tilt.1,
                    nae: summary.nae,
                    sdr: summary.sdr,
                    st_mean: summary.st_mean,
                    active: &summary.activity(),
                },
            )?;
            format!(
                "NAE={} SDR={:.3} ST={:.3} mm tilt=({}, {})",
                summary.nae, summary.sdr, summary.st_mean, tilt.0, tilt.1
            )
        }
        Command::Map { ct } => {
            let ct = run.load(ct)?;
            let ex = extract(&ct, &p.skull)?;
            let m = build_medium(&ex.ct_skull, &p.acoustic, p.simulation.f0).stage(Stage::Map)?;
            run.volume("sound_speed.vol", &m.sound_speed)?;
            run.volume("density.vol", &m.density)?;
            run.volume("alpha0.vol", &m.alpha0)?;
            let (cmin, cmax) = m.sound_speed.min_max();
            format!("sound speed {cmin:.1}..{cmax:.1} m/s, b={}, f0={} Hz", m.b, m.f0)
        }
        Command::Simulate { ct, pose } => {
            let ct = run.load(ct)?;
            let target = resolve_target(&ct, pose.target)?;
            let ex = extract(&ct, &p.skull)?;
            let tilt = resolve_tilt(pose, &ex.ct_skull, &target, &cfg)?;
            let (array, _) = plan(&ex.ct_skull, &target, tilt, p)?;
            let r = simulate_extracted(&ex, &array, p, &|_| {})?;
            run.volume("rms.vol", &r.rms)?;
            run.json(
                "simulation.json",
                &SimulationOut {
                    target,
                    tilt_x: tilt.0,
                    tilt_y: tilt.1,
                    max_rms: r.max_rms,
                    argmax: r.argmax,
                    focal_shift: r.focal_shift,
                    points_per_wavelength: r.points_per_wavelength,
                    steps: r.steps,
                    dt: r.dt,
                },
            )?;
            format!("max_rms={:.3} Pa focal_shift={:.3} mm steps={}", r.max_rms, r.focal_shift, r.steps)
        }
        Command::Compare { rct, sct, target, case_id, cohort } => {
            let rows = if *cohort {
                compare_batch(cfg.cohort.cases, |i| cfg.cohort.make_case(i), p)?
            } else {
                let (rct, sct) = (rct.as_ref().expect("clap"), sct.as_ref().expect("clap"));
                let rct = run.load(rct)?;
                let sct = run.load(sct)?;
                let target = resolve_target(&rct, *target)?;
                vec![compare_case(case_id, &rct, &sct, &target, p)?.comparison]
            };
            run.text("report.csv", |w| write_report_csv(&rows, w)).stage(Stage::Report)?;
            run.json("summary.json", &summarize(&rows))?;
            compare_line(&rows)
        }
        Command::Report { csv } => {
            let f = fs::File::open(csv).map_err(|e| Error::io(csv, e)).stage(Stage::Report)?;
            let rows = read_report_csv(BufReader::new(f), csv).stage(Stage::Report)?;
            run.inputs.push(csv.clone());
            run.json("summary.json", &summarize(&rows))?;
            compare_line(&rows)
        }
        Command::Serve { bind } => {
            let mut cfg = cfg.clone();
            if let Some(b) = bind {
                cfg.server.bind = b.clone();
            }
            let addr = cfg.server.bind.clone();
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            eprintln!("serving on http://{addr}");
            return rt.block_on(tfus_server::serve(cfg)).map_err(|e| Error::io(addr, e));
        }
        Command::Config { .. } => unreachable!("handled before dispatch"),
    };
    manifest::write(out_dir, cli.command.name(), &cfg, &run.inputs, &run.outputs)?;
    println!("{line}");
    Ok(())
}
