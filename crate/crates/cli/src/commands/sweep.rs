use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mll_core::io::write_json;
use mll_core::metrics::{borda_count, cosine_scores, verification_accuracy_kfold, BordaTable, Pair, PairProtocol};
use mll_core::rng::derive_seed;
use mll_core::trainer::{run_toy, ToyDataset, ToyGenerator, TrainConfig};
use mll_core::{MarginSpec, SeededStream};
use serde::Serialize;

use crate::args::{Cli, SweepArgs};
use crate::config::{read_text, threads_from_env, SweepGrid, SweepMode, ToyProtocol, ToySweep};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct TrainedConfig {
    pub name: String,
    pub loss: String,
    pub seed: u64,
    pub train_accuracy: f64,
    /// Mean k-fold verification accuracy per benchmark, in percent.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub table: BordaTable,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<TrainedConfig>,
}

/// Alternating genuine and impostor pairs over a class-major dataset, so
/// every contiguous fold of two or more pairs holds both kinds.
pub fn toy_pairs(set: &ToyDataset, count: usize, folds: usize, rng: &mut SeededStream) -> mll_core::Result<PairProtocol> {
    let classes = set.num_classes();
    let per_class = set.len() / classes;
    if per_class < 2 {
        return Err(mll_core::Error::InvalidArgument("toy protocols need per_class >= 2".into()));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let pair = if i % 2 == 0 {
            let k = rng.below(classes);
            let a = rng.below(per_class);
            let b = (a + 1 + rng.below(per_class - 1)) % per_class;
            Pair {
                a: k * per_class + a,
                b: k * per_class + b,
                genuine: true,
            }
        } else {
            let ka = rng.below(classes);
            let kb = (ka + 1 + rng.below(classes - 1)) % classes;
            Pair {
                a: ka * per_class + rng.below(per_class),
                b: kb * per_class + rng.below(per_class),
                genuine: false,
            }
        };
        pairs.push(pair);
    }
    PairProtocol::contiguous(pairs, folds)
}

struct Benchmark {
    set: ToyDataset,
    protocol: PairProtocol,
}

fn build_benchmarks(toy: &ToySweep, generator: &ToyGenerator) -> mll_core::Result<Vec<Benchmark>> {
    toy.protocols
        .iter()
        .enumerate()
        .map(|(b, p): (usize, &ToyProtocol)| {
            let mut rng = SeededStream::split(toy.dataset.seed, 1 + b as u64);
            let set = generator.sample(p.per_class, p.std_factor, &mut rng)?;
            let protocol = toy_pairs(&set, p.pairs, p.folds, &mut rng)?;
            Ok(Benchmark { set, protocol })
        })
        .collect()
}

fn train_one(
    name: &str,
    spec: &MarginSpec,
    seed: u64,
    toy: &ToySweep,
    train_cfg: &TrainConfig,
    train_set: &ToyDataset,
    benchmarks: &[Benchmark],
) -> mll_core::Result<TrainedConfig> {
    let mut cfg = train_cfg.clone();
    cfg.seed = seed;
    let run = run_toy(train_set, &toy.model, spec, &cfg)?;
    let mut accuracy = Vec::with_capacity(benchmarks.len());
    for bench in benchmarks {
        let emb = run.outcome.model.forward(&bench.set.points)?;
        let scores = cosine_scores(&emb, &bench.protocol)?;
        let v = verification_accuracy_kfold(&scores, bench.protocol.num_folds)?;
        accuracy.push(100.0 * v.mean_accuracy);
    }
    Ok(TrainedConfig {
        name: name.to_string(),
        loss: spec.label(),
        seed,
        train_accuracy: run.outcome.final_accuracy,
        accuracy,
    })
}

/// Runs `jobs` on up to `threads` workers; results come back in job order.
fn parallel_map<T: Send>(
    jobs: usize,
    threads: usize,
    f: impl Fn(usize) -> mll_core::Result<T> + Sync,
) -> mll_core::Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<mll_core::Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

/// Seed of config `i` is `derive_seed(base, i)`, with `i` counted over all
/// groups in file order.
pub fn train_grid(grid: &SweepGrid, cli: &Cli, iterations: Option<usize>, threads: usize) -> CliResult<Vec<TrainedConfig>> {
    let toy = grid.toy.as_ref().expect("training mode has a [toy] table");
    let mut train_cfg = match (cli.profile, &toy.train) {
        (Some(p), _) => p.train_config(),
        (None, Some(t)) => t.clone(),
        (None, None) => TrainConfig::toy(),
    };
    if let Some(n) = iterations {
        train_cfg.total_iterations = n;
    }
    train_cfg.validate()?;
    let base = cli.seed.unwrap_or(toy.seed);

    let mut rng = SeededStream::new(toy.dataset.seed);
    let generator = ToyGenerator::new(&toy.dataset, &mut rng)?;
    let train_set = generator.sample(toy.dataset.per_class, 1.0, &mut rng)?;
    let benchmarks = build_benchmarks(toy, &generator)?;

    let entries: Vec<_> = grid.entries().collect();
    for e in &entries {
        e.spec.as_ref().unwrap().validate()?;
    }
    let runs = parallel_map(entries.len(), threads, |i| {
        let e = entries[i];
        train_one(
            &e.name,
            e.spec.as_ref().unwrap(),
            derive_seed(base, i as u64),
            toy,
            &train_cfg,
            &train_set,
            &benchmarks,
        )
    })?;
    Ok(runs)
}

pub fn tabulate(grid: &SweepGrid, accuracy: Vec<Vec<f64>>) -> CliResult<BordaTable> {
    let mut configs = Vec::new();
    let mut groups = Vec::new();
    for g in &grid.groups {
        let start = configs.len();
        configs.extend(g.configs.iter().map(|e| e.name.clone()));
        groups.push((start, configs.len()));
    }
    Ok(borda_count(configs, grid.benchmarks.clone(), accuracy, &groups)?)
}

pub fn execute(cli: &Cli, args: &SweepArgs) -> CliResult<SweepOutcome> {
    let origin = args.grid.display().to_string();
    let grid = SweepGrid::from_toml(&read_text(&args.grid)?, &origin)?;
    let threads = threads_from_env()?;
    let (accuracy, runs) = match grid.mode(&origin)? {
        SweepMode::Ingest => {
            if args.iterations.is_some() {
                return Err(CliError::Usage("--iterations applies to training grids only".into()));
            }
            (grid.entries().map(|e| e.accuracy.clone().unwrap()).collect(), Vec::new())
        }
        SweepMode::Train => {
            let runs = train_grid(&grid, cli, args.iterations, threads)?;
            (runs.iter().map(|r| r.accuracy.clone()).collect(), runs)
        }
    };
    let table = tabulate(&grid, accuracy)?;

    for (g, &sel) in grid.groups.iter().zip(&table.selected) {
        say!("{}: selected {:?} (BC sum {})", g.name, table.configs[sel], table.bc_sum[sel]);
    }
    let out = cli.out.clone().unwrap_or_else(|| "sweep".into());
    fs::create_dir_all(&out).map_err(|e| mll_core::Error::io(&out, e))?;
    write_json(&out.join("borda.json"), &table)?;
    let csv_path = out.join("borda.csv");
    let file = fs::File::create(&csv_path).map_err(|e| mll_core::Error::io(&csv_path, e))?;
    table.write_csv(file)?;
    if !runs.is_empty() {
        write_json(&out.join("runs.json"), &runs)?;
    }
    Ok(SweepOutcome { table, runs })
}
