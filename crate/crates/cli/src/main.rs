use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use latent_ckks::{keygen, keygen_mock, power_of_two_steps, Backend, CkksContext, CkksParams, Encryptor, KeySet, PublicKeySet, Wire};
use latent_he::bench::{bench_geometries, GEOMETRIES};
use latent_he::graph::InputShape;
use latent_he::metrics::{self, ScoreMatrix, DEFAULT_THRESHOLD};
use latent_he::presets::{bench_graph, resnet20_latent, ResnetConfig};
use latent_he::protocol::{self, ClientBound, ServerBound};
use latent_he::runtime::{ClientContext, InferRequest, LocalRefresh, NoRefresh, RefreshOracle, ServerContext};
use latent_he::{bundle, packed, Error, LatentTensor, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const SECRET_FILE: &str = "secret.key";
const PUBLIC_FILE: &str = "public.key";

#[derive(Parser)]
#[command(name = "latent-he", version, about = "Encrypted CNN inference on compressed image latents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key set; writes secret.key and public.key into --out.
    Keygen(KeygenArgs),
    /// Encrypt a latent file into an inference request.
    Encrypt(EncryptArgs),
    /// Run a model on an encrypted request.
    Infer(InferArgs),
    /// Decrypt logits and print per-class probabilities.
    Finalize(FinalizeArgs),
    /// Time encrypted inference across latent geometries.
    Bench(BenchArgs),
    /// AUROC and F1 from score and label CSV files.
    Eval(EvalArgs),
    /// Write a shipped model graph as a weight bundle.
    ExportPreset(ExportPresetArgs),
    /// Write a random latent with values in [-1, 1].
    RandomLatent(RandomLatentArgs),
    /// Least-squares cubic fit of the logistic function.
    FitSigmoid(FitSigmoidArgs),
    /// Train a model (training component).
    Train(TrainArgs),
    /// Encode images to latents (training component).
    MakeLatents(MakeLatentsArgs),
}

#[derive(Args)]
struct KeygenArgs {
    /// Parameter preset: default, deep or test.
    #[arg(long, default_value = "default")]
    params: String,
    #[arg(long)]
    out: PathBuf,
    /// Generate exactly the rotations this model needs instead of all powers of two.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Noise-free mock keys for fast functional runs.
    #[arg(long)]
    mock: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EncryptArgs {
    /// Public key set.
    #[arg(long = "pub")]
    public: PathBuf,
    #[arg(long)]
    latent: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    request: PathBuf,
    /// Public key set.
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Require mock keys.
    #[arg(long)]
    mock: bool,
    /// Write the per-layer trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Client key set used for local refreshes when the plan needs them.
    #[arg(long)]
    secret: Option<PathBuf>,
}

#[derive(Args)]
struct FinalizeArgs {
    #[arg(long)]
    secret: PathBuf,
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, default_value_t = 14)]
    classes: usize,
    /// Class names, comma separated.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bundle to time at its own geometry; the fixed timing graph is used otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated HxWxC shapes.
    #[arg(long, value_delimiter = ',')]
    geometries: Vec<String>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportPresetArgs {
    #[arg(long)]
    out: PathBuf,
    /// Add squeeze-and-excitation stages to every block.
    #[arg(long)]
    se: bool,
    #[arg(long, default_value_t = 20)]
    seed: u64,
}

#[derive(Args)]
struct RandomLatentArgs {
    /// HxWxC.
    #[arg(long, default_value = "32x32x4")]
    shape: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitSigmoidArgs {
    /// lo,hi
    #[arg(long, default_value = "-5,5", allow_hyphen_values = true)]
    range: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeLatentsArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    factor: u32,
    #[arg(long)]
    out: PathBuf,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_shape(s: &str) -> Result<InputShape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(format!("shape {s:?} is not HxWxC")))?;
    match dims[..] {
        [height, width, channels] if height > 0 && width > 0 && channels > 0 => Ok(InputShape {
            height,
            width,
            channels,
        }),
        _ => Err(invalid(format!("shape {s:?} is not HxWxC"))),
    }
}

fn read_wire<T: Wire>(path: &Path) -> Result<T> {
    Ok(T::from_bytes(&std::fs::read(path)?)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| invalid(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn keygen_cmd(a: KeygenArgs) -> Result<()> {
    let params = CkksParams::preset(&a.params)?;
    let steps = match &a.model {
        Some(path) => bundle::read(path)?.rotation_steps(params.slot_count())?,
        None => power_of_two_steps(params.slot_count()),
    };
    let keys = if a.mock {
        keygen_mock(&params, &steps)?
    } else {
        keygen(&CkksContext::new(&params)?, &steps, a.seed)?
    };
    std::fs::create_dir_all(&a.out)?;
    write_bytes(&a.out.join(SECRET_FILE), &keys.to_bytes())?;
    write_bytes(&a.out.join(PUBLIC_FILE), &keys.public_keys().to_bytes())?;
    println!(
        "{} keys: N={}, {} levels, {} rotation keys ({})",
        if a.mock { "mock" } else { "real" },
        params.ring_degree,
        params.max_level(),
        keys.rotation_key_count(),
        params.security_note
    );
    Ok(())
}

fn encrypt_cmd(a: EncryptArgs) -> Result<()> {
    let keys: PublicKeySet = read_wire(&a.public)?;
    let latent = LatentTensor::read(&a.latent)?;
    let ctx = Arc::new(CkksContext::new(keys.params())?);
    let enc = Encryptor::new(ctx, &keys)?;
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let req = InferRequest {
        fingerprint: latent_ckks::params_id(keys.params()),
        tensor: packed::pack(&enc, &latent, &mut rng)?,
    };
    let mut w = BufWriter::new(File::create(&a.out)?);
    protocol::send_to_server(&mut w, &ServerBound::InferRequest(req))?;
    w.flush()?;
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let graph = bundle::read(&a.model)?;
    let keys: PublicKeySet = read_wire(&a.keys)?;
    if a.mock && keys.backend() != Backend::Mock {
        return Err(invalid("--mock needs keys generated with keygen --mock"));
    }
    let server = ServerContext::new(&graph, keys)?;
    let req = match protocol::recv_at_server(&mut BufReader::new(File::open(&a.request)?))? {
        ServerBound::InferRequest(req) => req,
        other => return Err(invalid(format!("{} holds message type {}", a.request.display(), other.message_type()))),
    };
    let refreshes = server.graph.refresh_points.len();
    let client = match &a.secret {
        Some(path) => Some(ClientContext::new(read_wire::<KeySet>(path)?, graph.input)?),
        None if refreshes > 0 => {
            return Err(Error::Plan(format!(
                "the plan needs {refreshes} refreshes for this modulus chain; pass --secret for local refresh or use a deeper chain"
            )))
        }
        None => None,
    };
    let (logits, trace) = match &client {
        Some(c) => {
            let mut oracle = LocalRefresh {
                client: c,
                rng: ChaCha20Rng::from_entropy(),
            };
            server.infer(&req, &mut oracle as &mut dyn RefreshOracle)?
        }
        None => server.infer(&req, &mut NoRefresh)?,
    };
    let mut w = BufWriter::new(File::create(&a.out)?);
    protocol::send_to_client(&mut w, &ClientBound::Logits(logits))?;
    w.flush()?;
    if let Some(path) = &a.trace {
        write_json(path, &trace)?;
    }
    println!(
        "{}: {} layers, {} refreshes, {:.1} ms",
        server.graph.name,
        trace.layers.len(),
        trace.refresh_count,
        trace.total_micros as f64 / 1e3
    );
    Ok(())
}

fn finalize_cmd(a: FinalizeArgs) -> Result<()> {
    let keys: KeySet = read_wire(&a.secret)?;
    let logits = match protocol::recv_at_client(&mut BufReader::new(File::open(&a.logits)?))? {
        ClientBound::Logits(ct) => ct,
        ClientBound::RefreshRequest(_) => return Err(invalid(format!("{} holds no logits", a.logits.display()))),
    };
    if !a.names.is_empty() && a.names.len() != a.classes {
        return Err(invalid(format!("{} names given for {} classes", a.names.len(), a.classes)));
    }
    let client = ClientContext::new(
        keys,
        InputShape {
            height: 1,
            width: 1,
            channels: 1,
        },
    )?;
    for (k, p) in client.finalize(&logits, a.classes)?.iter().enumerate() {
        match a.names.get(k) {
            Some(name) => println!("{name}\t{p:.6}"),
            None => println!("class{k}\t{p:.6}"),
        }
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let backend = if a.mock { Backend::Mock } else { Backend::Real };
    let model = a.model.as_deref().map(bundle::read).transpose()?;
    let geometries = if !a.geometries.is_empty() {
        a.geometries.iter().map(|g| parse_shape(g)).collect::<Result<Vec<_>>>()?
    } else if let Some(g) = &model {
        vec![g.input]
    } else {
        GEOMETRIES.to_vec()
    };
    if let Some(g) = &model {
        if geometries.iter().any(|s| *s != g.input) {
            return Err(invalid(format!(
                "model {} only accepts {}x{}x{} latents",
                g.name, g.input.height, g.input.width, g.input.channels
            )));
        }
    }
    let report = bench_geometries(&geometries, backend, a.reps, |shape| match &model {
        Some(g) => g.clone(),
        None => bench_graph(shape, 5),
    })?;
    println!("{report}");
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let sm = ScoreMatrix::read_csv(&a.scores, &a.labels)?;
    let report = metrics::report(&sm, a.threshold)?;
    println!("{report}");
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn export_preset_cmd(a: ExportPresetArgs) -> Result<()> {
    let g = resnet20_latent(&ResnetConfig {
        se: a.se,
        seed: a.seed,
        ..ResnetConfig::default()
    });
    bundle::write(&a.out, &g)?;
    println!("{}: {} layers", g.name, g.layers.len());
    Ok(())
}

fn random_latent_cmd(a: RandomLatentArgs) -> Result<()> {
    let shape = parse_shape(&a.shape)?;
    let latent = latent_he::bench::random_latent(shape, &mut ChaCha20Rng::seed_from_u64(a.seed));
    latent.write(&a.out)
}

fn fit_sigmoid_cmd(a: FitSigmoidArgs) -> Result<()> {
    let bounds: Vec<f64> = a
        .range
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(format!("range {:?} is not lo,hi", a.range)))?;
    let [lo, hi] = bounds[..] else {
        return Err(invalid(format!("range {:?} is not lo,hi", a.range)));
    };
    if !(lo < hi) {
        return Err(invalid("range must have lo < hi"));
    }
    let k = latent_he::SigmoidCoeffs::least_squares(lo, hi);
    println!("alpha {:.9e}\nbeta {:.9e}\ngamma {:.9e}\nd {:.9e}", k.alpha, k.beta, k.gamma, k.d);
    Ok(())
}

fn not_built(what: &str) -> Result<()> {
    Err(invalid(format!("{what} belongs to the training component, which is not part of this build")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen(a) => keygen_cmd(a),
        Command::Encrypt(a) => encrypt_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Finalize(a) => finalize_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::ExportPreset(a) => export_preset_cmd(a),
        Command::RandomLatent(a) => random_latent_cmd(a),
        Command::FitSigmoid(a) => fit_sigmoid_cmd(a),
        Command::Train(_) => not_built("train"),
        Command::MakeLatents(_) => not_built("make-latents"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
