//! Particle tracking demo driver.
//!
//! Runs the simulation on a simulated communicator and prints one JSON
//! line of statistics per Runge-Kutta stage. Optionally writes
//! partition-independent mesh snapshots of the forest and of a sparse
//! subsampled forest.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;
use quadforest::comm::SimComm;
use quadforest::forest_io::save_forest;
use quadforest::particles::{SimConfig, Simulation};
use quadforest::pertree::count_pertree;

#[derive(Parser, Debug, Clone)]
#[command(name = "particles", about = "adaptive particle tracking demo")]
struct Args {
    /// Configuration preset to start from.
    #[arg(long, default_value = "small")]
    preset: String,
    /// Requested particle count.
    #[arg(long)]
    particles: Option<u64>,
    /// Per-element particle capacity.
    #[arg(long)]
    elem_max: Option<u64>,
    /// Refinement window as min:max.
    #[arg(long)]
    levels: Option<String>,
    /// Runge-Kutta order (1-4).
    #[arg(long)]
    rk: Option<u8>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Number of simulated ranks.
    #[arg(long, default_value_t = 8)]
    ranks: usize,
    /// Trees per axis, as kx,ky,kz.
    #[arg(long)]
    brick: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write mesh snapshots every this many steps (0 = never).
    #[arg(long, default_value_t = 0)]
    snapshot_every: u64,
    /// Keep every n-th particle in the sparse snapshot.
    #[arg(long, default_value_t = 64)]
    subsample: u64,
    /// Element level for subsampled particles in the sparse snapshot.
    #[arg(long, default_value_t = 8)]
    snap_level: u8,
    /// Output directory for snapshots.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable the per-stage invariant checks.
    #[arg(long)]
    no_strict: bool,
    /// Print wall-clock timings (not deterministic) to stderr.
    #[arg(long)]
    timings: bool,
}

fn config_from(args: &Args) -> Result<SimConfig> {
    let mut cfg = match args.preset.as_str() {
        "small" => SimConfig::small(),
        other => bail!("unknown preset '{other}' (available: small)"),
    };
    if let Some(v) = args.particles {
        cfg.particles = v;
    }
    if let Some(v) = args.elem_max {
        cfg.elem_max = v;
    }
    if let Some(s) = &args.levels {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("--levels expects min:max"))?;
        cfg.min_level = lo.parse()?;
        cfg.max_level = hi.parse()?;
    }
    if let Some(v) = args.rk {
        cfg.rk_order = v;
    }
    if let Some(v) = args.dt {
        cfg.dt = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(s) = &args.brick {
        let parts: Vec<u32> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
        if parts.len() != 3 {
            bail!("--brick expects kx,ky,kz");
        }
        cfg.brick = [parts[0], parts[1], parts[2]];
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.strict = !args.no_strict;
    Ok(cfg)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = config_from(&args)?;
    if args.ranks == 0 {
        bail!("--ranks must be at least 1");
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    println!("{}", serde_json::json!({ "config": &cfg, "ranks": args.ranks }));

    let started = std::time::Instant::now();
    let run_args = args.clone();
    let run_cfg = cfg.clone();
    SimComm::run(args.ranks, move |comm| {
        let mut sim = Simulation::new(comm, run_cfg.clone());
        if comm.rank() == 0 {
            println!(
                "{}",
                serde_json::json!({
                    "event": "init",
                    "particles": sim.total_particles,
                    "elements": sim.forest.global_num_elements(),
                })
            );
        }
        for step in 0..sim.cfg.steps {
            let stage_stats = sim.step(comm);
            if comm.rank() == 0 {
                for s in &stage_stats {
                    println!("{}", serde_json::to_string(s).unwrap());
                }
            }
            let snap_due = run_args.snapshot_every > 0
                && (step + 1) % run_args.snapshot_every == 0;
            if snap_due {
                if let Some(dir) = &run_args.out {
                    let mesh = dir.join(format!("mesh_{:04}.frst", step + 1));
                    save_forest(comm, &sim.forest, &mesh).expect("snapshot write");
                    let (sparse, pertree, selected) =
                        sim.snapshot(comm, run_args.subsample, run_args.snap_level);
                    let sparse_path = dir.join(format!("sparse_{:04}.frst", step + 1));
                    save_forest(comm, &sparse, &sparse_path).expect("snapshot write");
                    let full_pertree = count_pertree(&sim.forest, comm);
                    if comm.rank() == 0 {
                        println!(
                            "{}",
                            serde_json::json!({
                                "event": "snapshot",
                                "step": step + 1,
                                "selected": selected,
                                "sparse_elements": *pertree.last().unwrap(),
                                "mesh_elements": *full_pertree.last().unwrap(),
                            })
                        );
                    }
                }
            }
        }
        if comm.rank() == 0 {
            println!(
                "{}",
                serde_json::json!({
                    "event": "done",
                    "particles": sim.total_particles,
                    "exits": sim.total_exits,
                    "elements": sim.forest.global_num_elements(),
                })
            );
        }
    });
    if args.timings {
        eprintln!("wall time: {:.3}s", started.elapsed().as_secs_f64());
    }
    Ok(())
}
