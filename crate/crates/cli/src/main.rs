//! Command-line front end: `gen`, `train`, `eval`, `probe`, `attn`, `count`.
//!
//! Every flag is `--<key> <value>` for a key of the flat configuration
//! format; `--config <file>` loads a file first and flags override it.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use cpvt_core::harness::{
    all_keys, evaluate, export_attention, generate_dataset, train, AttnFormat, Dataset, Experiment,
    CHECKPOINT_FILE,
};
use cpvt_core::model::{load_checkpoint, parse_kv_lines, DynModel, ModelConfig};
use cpvt_core::nn::Padding;
use cpvt_core::verify::{
    conv_expansion_probe, fixed_peg_comparison, permutation_probe, position_leakage_probe,
    shifted_ordering_comparison, toroidal_gap_config, translation_probe, ComparisonSetup, Content, LeakageSetup,
    PermutationSubject, ProbeReport, TranslationSubject,
};
use cpvt_core::{Error, Result};

const CLI_KEYS: &[&str] = &[
    "attn_dir",
    "checkpoint",
    "data_dir",
    "eval_image_size",
    "format",
    "layer",
    "name",
    "preset",
    "resize_pe",
    "sample",
    "trials",
];

const PROBES: &[&str] = &[
    "conv_expansion",
    "translation",
    "permutation",
    "position_leakage",
    "fixed_peg_comparison",
    "shifted_ordering",
];

/// Settings that only the command line uses.
#[derive(Debug, Default)]
struct CliOptions {
    attn_dir: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    eval_image_size: Option<usize>,
    format: Option<AttnFormat>,
    layer: Option<usize>,
    name: Option<String>,
    resize_pe: bool,
    sample: usize,
    trials: Option<usize>,
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config {
            field: key.into(),
            reason: format!("invalid value `{value}`"),
        })
}

impl CliOptions {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "attn_dir" => self.attn_dir = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "data_dir" => self.data_dir = Some(value.into()),
            "eval_image_size" => self.eval_image_size = Some(parse_num(key, value)?),
            "format" => self.format = Some(value.parse()?),
            "layer" => self.layer = Some(parse_num(key, value)?),
            "name" => self.name = Some(value.to_string()),
            "resize_pe" => self.resize_pe = parse_num(key, value)?,
            "sample" => self.sample = parse_num(key, value)?,
            "trials" => self.trials = Some(parse_num(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn keys() -> Vec<&'static str> {
    let mut k = all_keys();
    k.extend_from_slice(CLI_KEYS);
    k.sort_unstable();
    k
}

fn command() -> Command {
    let with_keys = |cmd: Command| {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value configuration file"),
        );
        keys().into_iter().fold(cmd, |c, k| {
            let mut arg = Arg::new(k).long(k).value_name("VALUE").help(format!("sets `{k}`"));
            if k.contains('_') {
                let dashed: &'static str = Box::leak(k.replace('_', "-").into_boxed_str());
                arg = arg.alias(dashed);
            }
            c.arg(arg)
        })
    };
    Command::new("cpvt")
        .about("Vision transformers with conditional positional encodings")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(Command::new("gen").about("Generate synthetic train and test sets into data_dir")))
        .subcommand(with_keys(Command::new("train").about("Train a model and write checkpoints to out_dir")))
        .subcommand(with_keys(Command::new("eval").about("Top-1 accuracy of a checkpoint on the test set")))
        .subcommand(with_keys(
            Command::new("probe").about(format!("Run a verification probe: {}", PROBES.join(", "))),
        ))
        .subcommand(with_keys(Command::new("attn").about("Export attention maps of one test image")))
        .subcommand(with_keys(Command::new("count").about("Parameter and multiply-accumulate counts")))
}

fn rank(key: &str) -> u8 {
    match key {
        "preset" => 0,
        "scheme" => 1,
        _ => 2,
    }
}

fn load_settings(m: &ArgMatches) -> Result<(Experiment, CliOptions)> {
    let mut pairs = Vec::new();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        pairs.extend(parse_kv_lines(&text)?);
    }
    for k in keys() {
        if let Some(v) = m.get_one::<String>(k) {
            pairs.push((k.to_string(), v.clone()));
        }
    }
    pairs.sort_by_key(|(k, _)| rank(k));
    let mut exp = Experiment::default();
    let mut cli = CliOptions::default();
    for (k, v) in &pairs {
        if k == "preset" {
            let size = exp.run.model.image_size;
            exp.run.model = ModelConfig::preset_named(v)?;
            if v == "toy" {
                exp.run.model.image_size = size;
            }
        } else if !cli.set(k, v)? && !exp.set(k, v)? {
            return Err(Error::Config {
                field: k.clone(),
                reason: "unknown key".into(),
            });
        }
    }
    Ok((exp, cli))
}

fn datasets(exp: &Experiment, cli: &CliOptions) -> Result<(Dataset, Dataset)> {
    if let Some(dir) = &cli.data_dir {
        let (tr, te) = (dir.join("train.bin"), dir.join("test.bin"));
        if tr.exists() && te.exists() {
            return Ok((Dataset::load(&tr)?, Dataset::load(&te)?));
        }
    }
    generate(exp)
}

fn generate(exp: &Experiment) -> Result<(Dataset, Dataset)> {
    let (train_set, _) = generate_dataset(&exp.task(exp.train_placement), exp.n_train, 0)?;
    let (_, test_set) = generate_dataset(&exp.task(exp.test_placement), 0, exp.n_test)?;
    Ok((train_set, test_set))
}

fn checkpoint_path(exp: &Experiment, cli: &CliOptions) -> Result<PathBuf> {
    cli.checkpoint
        .clone()
        .or_else(|| exp.run.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE)))
        .ok_or_else(|| Error::Config {
            field: "checkpoint".into(),
            reason: "set checkpoint or out_dir".into(),
        })
}

fn test_set_for(model: &DynModel, exp: &Experiment, cli: &CliOptions) -> Result<Dataset> {
    match cli.eval_image_size {
        Some(size) if size != model.config().image_size => {
            let mut task = exp.task(exp.test_placement);
            task.image_size = size;
            Ok(generate_dataset(&task, 0, exp.n_test)?.1)
        }
        _ => Ok(datasets(exp, cli)?.1),
    }
}

fn run_gen(exp: &Experiment, cli: &CliOptions) -> Result<bool> {
    exp.validate()?;
    let dir = cli.data_dir.clone().ok_or_else(|| Error::Config {
        field: "data_dir".into(),
        reason: "gen needs an output directory".into(),
    })?;
    let (tr, te) = generate(exp)?;
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    tr.save(&dir.join("train.bin"))?;
    te.save(&dir.join("test.bin"))?;
    println!("train={} test={} dir={}", tr.len(), te.len(), dir.display());
    Ok(true)
}

fn run_train(exp: &Experiment, cli: &CliOptions) -> Result<bool> {
    exp.validate()?;
    let (tr, te) = datasets(exp, cli)?;
    let out = train(&exp.run, &tr, &te)?;
    for m in &out.metrics {
        println!("{m}");
    }
    println!("checksum={:016x}", out.model.checksum());
    Ok(true)
}

fn run_eval(exp: &Experiment, cli: &CliOptions) -> Result<bool> {
    let model = load_checkpoint(&checkpoint_path(exp, cli)?)?;
    let mut exp = exp.clone();
    exp.run.model.image_size = model.config().image_size;
    exp.run.model.classes = model.config().classes;
    exp.run.model.patch = model.config().patch;
    let data = test_set_for(&model, &exp, cli)?;
    let acc = evaluate(&model, &data, cli.resize_pe)?;
    println!("accuracy={acc:.4} images={} image_size={}", data.len(), data.image_size());
    Ok(true)
}

fn run_attn(exp: &Experiment, cli: &CliOptions) -> Result<bool> {
    let model = load_checkpoint(&checkpoint_path(exp, cli)?)?;
    let mut exp = exp.clone();
    exp.run.model.image_size = model.config().image_size;
    exp.run.model.classes = model.config().classes;
    exp.run.model.patch = model.config().patch;
    let data = test_set_for(&model, &exp, cli)?;
    if cli.sample >= data.len() {
        return Err(Error::Input(format!("sample {} out of range for {} images", cli.sample, data.len())));
    }
    let (image, _) = data.batch::<f32>(&[cli.sample]);
    let dir = cli
        .attn_dir
        .clone()
        .or_else(|| exp.run.out_dir.as_ref().map(|d| d.join("attn")))
        .unwrap_or_else(|| PathBuf::from("attn"));
    let layer = cli.layer.unwrap_or(model.config().depth.min(2).saturating_sub(1));
    let paths = export_attention(&model, &image, layer, &dir, cli.format.unwrap_or(AttnFormat::Csv))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(true)
}

fn run_count(exp: &Experiment) -> Result<bool> {
    let c = DynModel::build(&exp.run.model, exp.run.seed)?;
    let c = match &c {
        DynModel::F32(m) => m.count_params_flops(),
        DynModel::F64(m) => m.count_params_flops(),
    };
    println!("params={}", c.params);
    println!("PEG={}", c.peg_params);
    println!("pos_table={}", c.pos_table_params);
    println!("flops={}", c.flops);
    println!("peg_flops={}", c.peg_flops);
    Ok(true)
}

fn probe_reports(name: &str, exp: &Experiment, cli: &CliOptions) -> Result<Vec<ProbeReport>> {
    let seed = exp.run.seed;
    Ok(match name {
        "conv_expansion" => vec![conv_expansion_probe(cli.trials.unwrap_or(50), seed)?],
        "translation" => {
            let peg = TranslationSubject::Peg {
                grid: (8, 8),
                dim: 8,
                kernel: 3,
                layers: 1,
            };
            let mut out = Vec::new();
            for shift in [(1, 0), (0, 1), (1, 1), (-2, 1)] {
                out.push(translation_probe(&peg, shift, Padding::Circular, Content::FullSupport, seed)?);
                out.push(translation_probe(&peg, shift, Padding::Zero, Content::MarginRespecting, seed)?);
            }
            let model = TranslationSubject::Model(toroidal_gap_config(&ModelConfig::toy()));
            out.push(translation_probe(&model, (1, 2), Padding::Circular, Content::FullSupport, seed)?);
            out
        }
        "permutation" => {
            let trials = cli.trials.unwrap_or(20);
            vec![
                permutation_probe(
                    &PermutationSubject::PlainStack {
                        dim: 16,
                        heads: 2,
                        depth: 2,
                        tokens: 9,
                    },
                    trials,
                    seed,
                )?,
                permutation_probe(
                    &PermutationSubject::PegStack {
                        dim: 16,
                        heads: 2,
                        depth: 2,
                        grid: (4, 4),
                        kernel: 3,
                        padding: Padding::Zero,
                    },
                    trials,
                    seed,
                )?,
            ]
        }
        "position_leakage" => vec![position_leakage_probe(&LeakageSetup::default(), seed)?],
        "fixed_peg_comparison" | "shifted_ordering" => {
            let mut setup = ComparisonSetup::default();
            setup.seeds = vec![seed, seed + 1, seed + 2];
            if name == "fixed_peg_comparison" {
                vec![fixed_peg_comparison(&setup)?]
            } else {
                vec![shifted_ordering_comparison(&setup)?]
            }
        }
        other => {
            return Err(Error::Config {
                field: "name".into(),
                reason: format!("unknown probe `{other}`; expected one of {}", PROBES.join(", ")),
            })
        }
    })
}

fn run_probe(exp: &Experiment, cli: &CliOptions) -> Result<bool> {
    let name = cli.name.as_deref().ok_or_else(|| Error::Config {
        field: "name".into(),
        reason: format!("probe needs a name: {}", PROBES.join(", ")),
    })?;
    let reports = probe_reports(name, exp, cli)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn dispatch(sub: &str, m: &ArgMatches) -> Result<bool> {
    let (exp, cli) = load_settings(m)?;
    match sub {
        "gen" => run_gen(&exp, &cli),
        "train" => run_train(&exp, &cli),
        "eval" => run_eval(&exp, &cli),
        "attn" => run_attn(&exp, &cli),
        "count" => run_count(&exp),
        _ => run_probe(&exp, &cli),
    }
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Config { .. }) || matches!(e, Error::Input(msg) if msg.starts_with("line "))
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some((sub, m)) = matches.subcommand() else {
        return ExitCode::from(2);
    };
    match dispatch(sub, m) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage(&e) {
                eprintln!("\n{}", command().render_usage());
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

