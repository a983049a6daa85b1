use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hnode_anc::attack::{run_attack, AttackConfig, AttackVariant};
use hnode_anc::data::{read_dump, write_dump, ActivationSet};
use hnode_anc::defense::{run_defense, CancelMode};
use hnode_anc::pipeline::{identify_stage, probe_stage, run_pipeline, RunConfig};
use hnode_anc::synth::{generate, mean_pool_view, SynthSpec, REDUNDANT_ALPHA_ATK};
use hnode_anc::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "hnode-anc", version, about = "Hallucination-node probing, attacks and cancellation defenses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic activation dump and its ground-truth manifest.
    GenSynth(GenSynthArgs),
    /// Per-layer probe sweep.
    Sweep(StageArgs),
    /// Defender and attacker H-Node sets.
    Identify(StageArgs),
    /// Run one attack on the evaluation split.
    Attack(StageArgs),
    /// Attack, then defend single-pass and iteratively.
    Defend(StageArgs),
    /// All phases, writing the full report.
    Pipeline(StageArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Recovery,
    Redundant,
}

impl Fixture {
    fn spec(self) -> SynthSpec {
        match self {
            Fixture::Recovery => SynthSpec::recovery_fixture(),
            Fixture::Redundant => SynthSpec::redundant_fixture(),
        }
    }
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Start from a named fixture; other flags override it.
    #[arg(long, value_enum, default_value = "recovery")]
    fixture: Fixture,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    planted: Option<usize>,
    /// Per-dim signal strength in noise units.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tokens averaged into the mean-pooled companion dump (0 skips it).
    #[arg(long, default_value_t = 4)]
    mean_pool_tokens: usize,
}

#[derive(Args)]
struct StageArgs {
    /// Activation dump (binary or JSON text).
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    input: Option<PathBuf>,
    /// Mean-pooled dump of the same samples, for the pooling comparison.
    #[arg(long)]
    mean_pool: Option<PathBuf>,
    /// Generate a bundled synthetic fixture instead of reading a dump.
    #[arg(long, value_enum)]
    synth: Option<Fixture>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct RunArgs {
    /// H-Nodes per side.
    #[arg(long, default_value_t = 50)]
    nodes: usize,
    #[arg(long, default_value_t = 0.9)]
    alpha_def: f64,
    /// Attack strength; defaults to 1.0, or the fixture's value with --synth.
    #[arg(long)]
    alpha_atk: Option<f64>,
    /// Confidence gate of the defense.
    #[arg(long, default_value_t = 0.45)]
    tau: f64,
    /// Grounded baseline percentile.
    #[arg(long, default_value_t = 80.0)]
    percentile: f64,
    #[arg(long, value_enum, default_value = "fourier")]
    variant: AttackVariant,
    #[arg(long, default_value_t = 8)]
    fourier_k: usize,
    #[arg(long, default_value_t = 42)]
    defender_seed: u64,
    #[arg(long, default_value_t = 99)]
    attacker_seed: u64,
    #[arg(long, default_value_t = 15)]
    max_passes: usize,
    #[arg(long, default_value_t = 1e-4)]
    stop_eps: f64,
    /// Disable the iterative defense.
    #[arg(long)]
    no_dynamic: bool,
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: CancelMode,
    /// L2 penalty of the logistic probes.
    #[arg(long, default_value_t = 1.0)]
    l2_lambda: f64,
}

impl StageArgs {
    fn config(&self) -> RunConfig {
        let source = match (&self.input, self.synth) {
            (Some(path), _) => path.display().to_string(),
            (None, Some(Fixture::Recovery)) => "synthetic:recovery".into(),
            (None, Some(Fixture::Redundant)) => "synthetic:redundant".into(),
            (None, None) => String::new(),
        };
        let fixture_alpha = match self.synth {
            Some(Fixture::Redundant) => REDUNDANT_ALPHA_ATK,
            _ => 1.0,
        };
        let r = &self.run;
        RunConfig {
            source,
            nodes: r.nodes,
            alpha_def: r.alpha_def,
            alpha_atk: r.alpha_atk.unwrap_or(fixture_alpha),
            tau: r.tau,
            percentile: r.percentile,
            variant: r.variant,
            fourier_k: r.fourier_k,
            defender_seed: r.defender_seed,
            attacker_seed: r.attacker_seed,
            max_passes: r.max_passes,
            stop_eps: r.stop_eps,
            dynamic: !r.no_dynamic,
            mode: r.mode,
            l2_lambda: r.l2_lambda,
            ..RunConfig::default()
        }
    }

    fn load(&self) -> Result<(ActivationSet, Option<ActivationSet>), Failure> {
        if let Some(fixture) = self.synth {
            let spec = fixture.spec();
            let (set, _) = generate(&spec).map_err(|e| Failure::stage("synth", e))?;
            let mean = mean_pool_view(&spec, &set, 4).map_err(|e| Failure::stage("synth", e))?;
            return Ok((set, Some(mean)));
        }
        let path = self.input.as_ref().expect("clap requires --input without --synth");
        let set = read_dump(path).map_err(|e| Failure::load(path, e))?;
        let mean = match &self.mean_pool {
            Some(p) => Some(read_dump(p).map_err(|e| Failure::load(p, e))?),
            None => None,
        };
        Ok((set, mean))
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn stage(stage: &str, err: Error) -> Self {
        let code = if err.is_input_error() { EXIT_INPUT } else { EXIT_NUMERIC };
        Failure {
            code,
            message: format!("{stage}: {err}"),
        }
    }

    /// Io errors already carry the path; everything else gets it prefixed.
    fn load(path: &Path, err: Error) -> Self {
        let mut failure = Failure::stage("load", err);
        if !failure.message.contains(&*path.to_string_lossy()) {
            failure.message = format!("load: {}: {}", path.display(), &failure.message["load: ".len()..]);
        }
        failure
    }

    fn usage(err: Error) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: format!("invalid flags: {err}"),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::stage("write", Error::Io { path, source: e }))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write(dir, name, &(text + "\n"))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::stage(
            "write",
            Error::Io {
                path: dir.to_path_buf(),
                source: e,
            },
        )
    })
}

fn gen_synth(args: &GenSynthArgs) -> Result<(), Failure> {
    let mut spec = args.fixture.spec();
    let base = spec.clone();
    if let Some(v) = args.hidden_dim {
        spec.hidden_dim = v;
    }
    if let Some(v) = args.layers {
        spec.num_layers = v;
        spec.profile = hnode_anc::synth::LayerProfile::peaked(v, v / 2);
    }
    if let Some(v) = args.samples {
        spec.num_samples = v;
    }
    if args.planted.is_some() || args.delta.is_some() {
        let (count, delta) = match base.planting {
            hnode_anc::synth::Planting::Random { count, delta } => (count, delta),
            hnode_anc::synth::Planting::Explicit(ref pairs) => (pairs.len(), 1.0),
        };
        spec.planting = hnode_anc::synth::Planting::Random {
            count: args.planted.unwrap_or(count),
            delta: args.delta.unwrap_or(delta),
        };
    }
    if let Some(v) = args.sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate().map_err(Failure::usage)?;
    prepare_out(&args.out)?;
    let (set, manifest) = generate(&spec).map_err(|e| Failure::stage("synth", e))?;
    let dump = |name: &str, set: &ActivationSet| {
        write_dump(set, args.out.join(name)).map_err(|e| Failure::stage("write", e))
    };
    dump("activations.hnd", &set)?;
    if args.mean_pool_tokens > 0 {
        let mean = mean_pool_view(&spec, &set, args.mean_pool_tokens).map_err(|e| Failure::stage("synth", e))?;
        dump("activations_mean_pool.hnd", &mean)?;
    }
    write_json(&args.out, "manifest.json", &manifest)
}

fn run(command: &Command) -> Result<(), Failure> {
    let args = match command {
        Command::GenSynth(args) => return gen_synth(args),
        Command::Sweep(a) | Command::Identify(a) | Command::Attack(a) | Command::Defend(a) | Command::Pipeline(a) => a,
    };
    // Flags are checked before anything is read or computed.
    let cfg = args.config();
    cfg.validate().map_err(Failure::usage)?;
    let (set, mean_pool) = args.load()?;
    prepare_out(&args.out)?;
    let out = &args.out;

    if let Command::Pipeline(_) = command {
        let result = run_pipeline(&set, mean_pool.as_ref(), &cfg).map_err(|e| Failure::stage("pipeline", e))?;
        let json = result.report.to_json().map_err(|e| Failure::stage("report", e))?;
        write(out, "report.json", &(json + "\n"))?;
        write(out, "report.txt", &result.report.to_table())?;
        write(out, "trace.csv", &result.trace_csv())?;
        write_json(out, "nodes_defender.json", &result.defender_nodes)?;
        write_json(out, "nodes_attacker.json", &result.attacker_nodes)?;
        write_json(out, "sweep.json", &result.probes.defender.report)?;
        return Ok(());
    }

    let probes = probe_stage(&set, mean_pool.as_ref(), &cfg).map_err(|e| Failure::stage("probe", e))?;
    if let Command::Sweep(_) = command {
        return write_json(out, "sweep.json", &probes.defender.report);
    }
    let (defender, attacker) = identify_stage(&set, &probes, &cfg).map_err(|e| Failure::stage("identify", e))?;
    if let Command::Identify(_) = command {
        write_json(out, "nodes_defender.json", &defender)?;
        return write_json(out, "nodes_attacker.json", &attacker);
    }
    let attack_cfg = AttackConfig::prepare(
        &set,
        &probes.split.attacker_idx,
        probes.attacker_probe(),
        attacker,
        cfg.variant,
        cfg.alpha_atk,
        cfg.fourier_k,
    )
    .map_err(|e| Failure::stage("attack", e))?;
    let eval = &probes.split.eval_idx;
    let attack = run_attack(&set, &attack_cfg, probes.attacker_probe(), probes.defender_probe(), eval)
        .map_err(|e| Failure::stage("attack", e))?;
    if let Command::Attack(_) = command {
        return write_json(out, "attack.json", &attack.metrics);
    }
    let defense = run_defense(
        &attack.attacked,
        &cfg.defense(),
        &defender,
        probes.defender_probe(),
        probes.attacker_probe(),
        &set,
        eval,
    )
    .map_err(|e| Failure::stage("defend", e))?;
    write(out, "trace.csv", &defense.trace.to_csv())?;
    write_json(out, "defense.json", &defense.trace)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
