mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use args::*;
use clap::Parser;
use ranp::harness::data::{gen_synth, Dataset, SynthTask, TaskKind};
use ranp::harness::train::{train, TrainConfig};
use ranp::netgraph::{bundled, init_params};
use ranp::refine::refine;
use ranp::resources::{profile, Reduction, ResourceProfile};
use ranp::{
    DependencyMap, ImportanceMap, MaskSet, NetSpec, ParamSet, PruneConfig, PruneMode, Pruner, RanpError, ResourceKind,
    SearchConfig,
};
use ranp_cli::record::{read_runs, RunRecord, FULL_MODE};
use ranp_cli::slim::{self, SlimHeader};
use ranp_cli::{report, table};
use serde::Serialize;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e.chain().any(|c| matches!(c.downcast_ref::<RanpError>(), Some(RanpError::Infeasible(_))));
            ExitCode::from(if infeasible { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Resources(a) => cmd_resources(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Search(a) => cmd_search(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Train(a) => cmd_train(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// A network with weights, and its provenance when read from a slim file.
struct Network {
    spec: NetSpec,
    params: ParamSet,
    slim: Option<SlimHeader>,
}

fn read_net(net: &str) -> Result<(NetSpec, Option<slim::SlimFile>)> {
    let path = Path::new(net);
    if path.is_file() {
        let bytes = fs::read(path).with_context(|| format!("reading {net}"))?;
        if slim::is_slim(&bytes) {
            let file = slim::decode(&bytes).with_context(|| format!("reading {net}"))?;
            return Ok((file.spec.clone(), Some(file)));
        }
        let doc = String::from_utf8(bytes).with_context(|| format!("{net} is not a JSON config"))?;
        return Ok((NetSpec::parse(&doc).with_context(|| format!("parsing {net}"))?, None));
    }
    match bundled(net) {
        Some(doc) => Ok((NetSpec::parse(doc)?, None)),
        None => bail!("`{net}` is neither a file nor a bundled network (mini-unet3d, mini-cls3d)"),
    }
}

fn load(args: &NetArgs) -> Result<Network> {
    let (spec, file) = read_net(&args.net)?;
    Ok(match file {
        Some(f) => Network { spec, params: f.params, slim: Some(f.header) },
        None => {
            let params = init_params(&spec, args.init.into(), args.seed);
            Network { spec, params, slim: None }
        }
    })
}

fn task_kind(spec: &NetSpec, data: &DataArgs) -> TaskKind {
    match data.task {
        Some(t) => t.into(),
        None if spec.layers[spec.head()].output_spatial() == 1 => TaskKind::Classification,
        None => TaskKind::Segmentation,
    }
}

/// Training set (seeded by `seed`, also used for pruning) and evaluation set.
fn datasets(spec: &NetSpec, data: &DataArgs, seed: u64) -> Result<(Dataset, Dataset)> {
    let [channels, d, h, w] = spec.input_shape;
    if channels != 1 {
        bail!("synthetic tasks produce single-channel volumes; the network expects {channels} channels");
    }
    if data.batch_size == 0 || data.samples < data.batch_size || data.eval_samples == 0 {
        bail!("need --batch-size >= 1, --samples >= --batch-size and --eval-samples >= 1");
    }
    let kind = task_kind(spec, data);
    let make = |samples, seed| {
        let shape = [d, h, w];
        gen_synth(&match kind {
            TaskKind::Segmentation => SynthTask::segmentation(shape, spec.classes, samples, seed),
            TaskKind::Classification => SynthTask::classification(shape, spec.classes, samples, seed),
        })
    };
    Ok((make(data.samples, seed), make(data.eval_samples, seed.wrapping_add(1000))))
}

fn resolve_mode(sel: &SelectArgs) -> Result<PruneMode> {
    let implied = sel.resource.map(|r| match ResourceKind::from(r) {
        ResourceKind::Flops => PruneMode::RanpF,
        ResourceKind::Memory => PruneMode::RanpM,
    });
    match (sel.mode.map(PruneMode::from), implied) {
        (Some(m), Some(r)) if m != r => {
            bail!("--resource selects {} but --mode is {}", r.name(), m.name())
        }
        (Some(m), _) | (None, Some(m)) => Ok(m),
        (None, None) => Ok(PruneMode::RanpF),
    }
}

fn build_pruner(net: &Network, sel: &SelectArgs, seed: u64) -> Result<Pruner> {
    let mode = resolve_mode(sel)?;
    let (train_set, _) = datasets(&net.spec, &sel.data, seed)?;
    let mut batches = train_set.batches(sel.data.batch_size);
    if let Some(n) = sel.prune_batches {
        if n == 0 || n > batches.len() {
            bail!("--prune-batches must be in 1..={} for this pruning set", batches.len());
        }
        batches.truncate(n);
    }
    let loss = TrainConfig::for_task(train_set.task.kind).loss;
    let cfg = PruneConfig {
        lambda: sel.lambda,
        importance: sel.importance.into(),
        aggregator: sel.agg.into(),
        seed,
        ..PruneConfig::new(mode)
    };
    log::info!("scoring {} with {} batches", mode.name(), batches.len());
    Ok(Pruner::new(&net.spec, &net.params, &batches, &loss, cfg)?)
}

fn search_config(delta: f64) -> SearchConfig {
    SearchConfig { delta, ..SearchConfig::default() }
}

/// Sparsity from `--sparsity` or `--auto`, the bisection iterations, and feasible masks.
fn choose_masks(pruner: &Pruner, sp: &SparsityArgs) -> Result<(f64, Option<usize>, MaskSet)> {
    let (kappa, iterations) = if sp.auto {
        let found = pruner.search(search_config(sp.delta))?;
        (found.kappa, Some(found.iterations))
    } else if let Some(k) = sp.sparsity {
        (k, None)
    } else {
        bail!("give --sparsity or --auto");
    };
    let masks = pruner.masks_at(kappa)?;
    masks.ensure_feasible()?;
    Ok((kappa, iterations, masks))
}

fn to_u64(v: u128) -> Result<u64> {
    u64::try_from(v).context("FLOPs count exceeds 64 bits")
}

fn run_record(prof: &ResourceProfile, mode: &str, sparsity: f64, seed: u64) -> Result<RunRecord> {
    Ok(RunRecord {
        mode: mode.into(),
        sparsity,
        seed,
        params: prof.total_params,
        flops: to_u64(prof.total_flops)?,
        mem: prof.total_mem,
        metric_name: None,
        metric: None,
    })
}

#[derive(Serialize)]
struct LayerRow {
    id: String,
    protected: bool,
    neurons: usize,
    retained: usize,
    flops: u64,
    flops_full: u64,
    mem: u64,
    mem_full: u64,
}

fn layer_rows(masks: &MaskSet, masked: &ResourceProfile, full: &ResourceProfile) -> Result<Vec<LayerRow>> {
    masks
        .layers
        .iter()
        .map(|m| {
            let (a, b) = (masked.get(&m.id).context("layer profile")?, full.get(&m.id).context("layer profile")?);
            Ok(LayerRow {
                id: m.id.clone(),
                protected: m.protected,
                neurons: m.keep.len(),
                retained: m.retained(),
                flops: to_u64(a.flops)?,
                flops_full: to_u64(b.flops)?,
                mem: a.mem,
                mem_full: b.mem,
            })
        })
        .collect()
}

fn layer_table(rows: &[LayerRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}{}", r.id, if r.protected { " *" } else { "" }),
                format!("{}/{}", r.retained, r.neurons),
                r.flops.to_string(),
                r.flops_full.to_string(),
                r.mem.to_string(),
                r.mem_full.to_string(),
            ]
        })
        .collect();
    table::render(&["layer", "kept", "flops", "flops_full", "mem", "mem_full"], &body)
}

fn layer_csv(rows: &[LayerRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn reduction_lines(red: &Reduction) -> String {
    format!(
        "reduction: params {:.2}%, flops {:.2}%, memory {:.2}%\n",
        red.params_pct, red.flops_pct, red.mem_pct
    )
}

fn kind_name(kind: ranp::netgraph::LayerKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_resources(a: ResourcesArgs) -> Result<()> {
    let (spec, _) = read_net(&a.net)?;
    let masks = match &a.masks {
        Some(p) => Some(MaskSet::from_json(&spec, &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    let full = profile(&spec, None)?;
    let prof = profile(&spec, masks.as_ref())?;
    let red = masks.is_some().then(|| prof.reduction_against(&full));
    let out = match a.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                profile: &'a ResourceProfile,
                reduction: Option<Reduction>,
            }
            json(&Doc { profile: &prof, reduction: red })?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["layer", "kind", "in_channels", "out_channels", "flops", "mem", "params"])?;
            for l in &prof.layers {
                w.write_record([
                    l.id.clone(),
                    kind_name(l.kind),
                    l.in_channels.to_string(),
                    l.out_channels.to_string(),
                    l.flops.to_string(),
                    l.mem.to_string(),
                    l.params.to_string(),
                ])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
        Format::Table => {
            let body: Vec<Vec<String>> = prof
                .layers
                .iter()
                .map(|l| {
                    vec![
                        l.id.clone(),
                        kind_name(l.kind),
                        l.in_channels.to_string(),
                        l.out_channels.to_string(),
                        l.flops.to_string(),
                        l.mem.to_string(),
                        l.params.to_string(),
                    ]
                })
                .collect();
            let mut s = table::render(&["layer", "kind", "in", "out", "flops", "mem", "params"], &body);
            s += &format!(
                "total: {} FLOPs, {} activations ({:.3} MB), {} params ({:.3} MB)\n",
                prof.total_flops,
                prof.total_mem,
                prof.mem_mb(),
                prof.total_params,
                prof.params_mb()
            );
            if let Some(r) = &red {
                s += &reduction_lines(r);
            }
            s
        }
    };
    print!("{out}");
    Ok(())
}

#[derive(Serialize)]
struct PruneReport {
    #[serde(flatten)]
    run: RunRecord,
    achieved_sparsity: f64,
    search_iterations: Option<usize>,
    lambda: f64,
    importance: ranp::ImportanceMode,
    aggregator: ranp::Aggregator,
    prune_batches: Option<usize>,
    reduction: Reduction,
    layers: Vec<LayerRow>,
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let net = load(&a.net)?;
    let pruner = build_pruner(&net, &a.select, a.net.seed)?;
    let (kappa, iterations, masks) = choose_masks(&pruner, &a.sparsity)?;
    let full = profile(&net.spec, None)?;
    let prof = profile(&net.spec, Some(&masks))?;
    let report = PruneReport {
        run: run_record(&prof, pruner.cfg.mode.name(), kappa, a.net.seed)?,
        achieved_sparsity: masks.sparsity_achieved(),
        search_iterations: iterations,
        lambda: pruner.cfg.lambda,
        importance: pruner.cfg.importance,
        aggregator: pruner.cfg.aggregator,
        prune_batches: a.select.prune_batches,
        reduction: prof.reduction_against(&full),
        layers: layer_rows(&masks, &prof, &full)?,
    };

    write(&a.out, "masks.json", masks.to_json() + "\n")?;
    let stages: [(&str, &ImportanceMap); 3] =
        [("raw", &pruner.raw), ("weighted", &pruner.weighted), ("reweighted", &pruner.reweighted)];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "layer", "neuron", "score"])?;
    for (name, imp) in stages {
        write(&a.out, &format!("importance-{name}.json"), imp.to_json() + "\n")?;
        for (_, layer, u, s) in imp.csv_rows() {
            w.write_record([name, layer, &u.to_string(), &s.to_string()])?;
        }
    }
    write(&a.out, "importance.csv", w.into_inner()?)?;
    write(&a.out, "report.json", json(&report)?)?;

    let out = match a.format {
        Format::Json => json(&report)?,
        Format::Csv => layer_csv(&report.layers)?,
        Format::Table => {
            format!(
                "mode {} at sparsity {:.4} (achieved {:.4})\n",
                report.run.mode, kappa, report.achieved_sparsity
            ) + &layer_table(&report.layers)
                + &reduction_lines(&report.reduction)
        }
    };
    print!("{out}");
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let net = load(&a.net)?;
    let pruner = build_pruner(&net, &a.select, a.net.seed)?;
    let found = pruner.search(search_config(a.delta))?;
    let masks = pruner.masks_at(found.kappa)?;
    masks.ensure_feasible()?;
    let full = profile(&net.spec, None)?;
    let layers = layer_rows(&masks, &profile(&net.spec, Some(&masks))?, &full)?;
    if let Some(dir) = &a.out {
        write(dir, "masks.json", masks.to_json() + "\n")?;
    }
    let out = match a.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                mode: &'a str,
                kappa: f64,
                iterations: usize,
                layers: &'a [LayerRow],
            }
            json(&Doc { mode: pruner.cfg.mode.name(), kappa: found.kappa, iterations: found.iterations, layers: &layers })?
        }
        Format::Csv => layer_csv(&layers)?,
        Format::Table => {
            format!("max feasible sparsity {:.6} ({} bisection steps)\n", found.kappa, found.iterations)
                + &layer_table(&layers)
        }
    };
    print!("{out}");
    Ok(())
}

/// Masks from `--masks` or from pruning, refined into a slim network.
fn pruned_network(
    net: &Network,
    masks: Option<&Path>,
    sel: &SelectArgs,
    sp: &SparsityArgs,
    seed: u64,
) -> Result<(Network, MaskSet)> {
    let (mode, sparsity, masks) = match masks {
        Some(p) => {
            let doc = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let m = MaskSet::from_json(&net.spec, &doc)?;
            m.ensure_feasible()?;
            let label = sel.mode.map_or("masked", |m| PruneMode::from(m).name());
            (label.to_string(), m.sparsity_achieved(), m)
        }
        None => {
            let pruner = build_pruner(net, sel, seed)?;
            let (kappa, _, m) = choose_masks(&pruner, sp)?;
            (pruner.cfg.mode.name().to_string(), kappa, m)
        }
    };
    let built = refine(&net.spec, &net.params, &masks, &DependencyMap::build(&net.spec))?;
    let header = SlimHeader { mode, sparsity, seed, net: built.spec.to_config() };
    Ok((Network { spec: built.spec, params: built.params, slim: Some(header) }, masks))
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let net = load(&a.net)?;
    let (slim_net, _) = pruned_network(&net, a.masks.as_deref(), &a.select, &a.sparsity, a.net.seed)?;
    let header = slim_net.slim.as_ref().expect("refined network has a header");
    write(&a.out, "slim.bin", slim::encode(header, &slim_net.params))?;
    write(&a.out, "slim.json", slim_net.spec.to_json() + "\n")?;
    let full = profile(&net.spec, None)?;
    let prof = profile(&slim_net.spec, None)?;
    let record = run_record(&prof, &header.mode, header.sparsity, header.seed)?;
    let out = match a.format {
        Format::Json => json(&record)?,
        Format::Csv => report::to_csv(&report::build(&[run_record(&full, FULL_MODE, 0.0, header.seed)?, record])?)?,
        Format::Table => {
            format!("slim network: {} params, {} FLOPs, {} activations\n", prof.total_params, prof.total_flops, prof.total_mem)
                + &reduction_lines(&prof.reduction_against(&full))
        }
    };
    print!("{out}");
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    loss: f64,
    train_metric: f64,
    eval_metric: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = load(&a.net)?;
    let prune = a.sparsity.auto || a.sparsity.sparsity.is_some();
    let net = match (&base.slim, prune) {
        (Some(_), true) => bail!("{} is already a slim network; drop --sparsity/--auto", a.net.net),
        (Some(_), false) => base,
        (None, true) => pruned_network(&base, None, &a.select, &a.sparsity, a.net.seed)?.0,
        (None, false) => {
            let header =
                SlimHeader { mode: FULL_MODE.into(), sparsity: 0.0, seed: a.net.seed, net: base.spec.to_config() };
            Network { slim: Some(header), ..base }
        }
    };
    let header = net.slim.clone().expect("network has a header");
    let (train_set, eval_set) = datasets(&net.spec, &a.select.data, a.net.seed)?;
    let kind = train_set.task.kind;
    let mut cfg = TrainConfig { epochs: a.epochs, batch_size: a.select.data.batch_size, seed: a.net.seed, ..TrainConfig::for_task(kind) };
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
    }
    log::info!("training {} for {} epochs", header.mode, cfg.epochs);
    let outcome = train(&net.spec, &net.params, &train_set, Some(&eval_set), &cfg)?;
    let history: Vec<HistoryRow> = outcome
        .history
        .iter()
        .map(|h| HistoryRow { epoch: h.epoch, loss: h.loss, train_metric: h.train_metric, eval_metric: h.eval_metric })
        .collect();
    if let Some(p) = &a.metrics_out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        for row in &history {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    let mut record = run_record(&profile(&net.spec, None)?, &header.mode, header.sparsity, header.seed)?;
    record.metric_name = Some(match kind {
        TaskKind::Segmentation => "miou".into(),
        TaskKind::Classification => "top1".into(),
    });
    record.metric = history.last().and_then(|h| h.eval_metric);
    write(&a.out, "run.json", json(&record)?)?;
    write(&a.out, "trained.bin", slim::encode(&header, &outcome.params))?;

    let out = match a.format {
        Format::Json => json(&record)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &history {
                w.serialize(row)?;
            }
            String::from_utf8(w.into_inner()?)?
        }
        Format::Table => {
            let body: Vec<Vec<String>> = history
                .iter()
                .map(|h| {
                    vec![
                        h.epoch.to_string(),
                        format!("{:.6}", h.loss),
                        format!("{:.4}", h.train_metric),
                        h.eval_metric.map_or("-".into(), |m| format!("{m:.4}")),
                    ]
                })
                .collect();
            table::render(&["epoch", "loss", "train", "eval"], &body)
        }
    };
    print!("{out}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for p in &a.runs {
        runs.extend(read_runs(p)?);
    }
    let rows = report::build(&runs)?;
    let out = match a.format {
        Format::Json => json(&rows)?,
        Format::Csv => report::to_csv(&rows)?,
        Format::Table => report::to_table(&rows),
    };
    match &a.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{out}"),
    }
    Ok(())
}
