use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::{AttendMode, Cli, CliError, Command, Format, Method, RankFlags};
use crate::analysis::{
    profile_corpus, synth_matrices_with_rng, write_corpus, CorpusManifest, SynthSpec, MANIFEST_JSON,
};
use crate::attention::{gradient_check, multi_head_attention, AttentionConfig, AttentionInput, KernelMode};
use crate::bench::{budget_from_env, scaling_sweep, SweepConfig};
use crate::error::Error;
use crate::io::{format_csv, read_matrix, write_matrix};
use crate::linalg::{
    alternating_lowrank_with_rng, energy_ratio, exact_svd, reorthogonalize, select_rank, truncate_svd, LowRankFactors,
    RankPolicy, RankSource,
};
use crate::matrix::Matrix;
use crate::model::{
    decompose_input, load_layer, make_sinusoidal, save_layer, EncoderLayer, PeMode, PositionalEncoding,
};
use crate::scalar::Dtype;

type CmdResult = Result<(), CliError>;

const POLICY_USAGE: &str = "use one of --rank N (N >= 1), --fraction F (0 < F <= 1), --entropy-scale S (S > 0)";

pub(super) fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Profile { manifest, bins, buckets } => profile(cli, manifest, *bins, buckets.as_deref()),
        Command::Decompose { input, rank, method, reorthogonalize, inner_iters } => {
            decompose(cli, input, rank, *method, *reorthogonalize, *inner_iters)
        }
        Command::Attend { x, weights_dir, mode, compare, rank } => attend(cli, x, weights_dir, *mode, *compare, rank),
        Command::Bench { lengths, rank, dims, repeats, inner_iters, parallel } => {
            bench(cli, lengths, *rank, dims, *repeats, *inner_iters, *parallel)
        }
        Command::Gradcheck { sizes, trials } => gradcheck(cli, sizes, *trials),
        Command::Synth { count, length, dim, intrinsic_rank, noise, layer, heads } => {
            let spec = SynthSpec {
                count: *count,
                length: *length,
                dim: *dim,
                intrinsic_rank: *intrinsic_rank,
                noise_level: *noise,
                seed: cli.seed,
            };
            synth(cli, &spec, layer.as_deref(), *heads)
        }
    }
}

/// Write `text` to `--output` when given, else stdout.
fn emit_text(cli: &Cli, text: &str) -> CmdResult {
    match &cli.output {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e).into()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Flatten a JSON document into `key,value` lines with dotted keys.
fn json_to_kv_csv(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::Array(items) => {
                for (i, v) in items.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, out);
                }
            }
            Value::String(s) => out.push_str(&format!("{prefix},{s}\n")),
            other => out.push_str(&format!("{prefix},{other}\n")),
        }
    }
    let mut out = String::from("key,value\n");
    walk("", value, &mut out);
    out
}

fn emit_summary(cli: &Cli, value: &Value) -> CmdResult {
    match cli.format {
        Format::Json => emit_text(cli, &to_json(value)?),
        Format::Csv => emit_text(cli, &json_to_kv_csv(value)),
    }
}

fn rank_policy(flags: &RankFlags, default: RankPolicy) -> Result<RankPolicy, CliError> {
    let policy = flags.policy().unwrap_or(default);
    policy.validate().map_err(|e| CliError::Usage(format!("{e}\n{POLICY_USAGE}")))?;
    Ok(policy)
}

fn parse_buckets(text: &str) -> Result<Vec<[usize; 2]>, CliError> {
    text.split(',')
        .map(|part| {
            let bad = || CliError::Usage(format!("bucket `{part}` is not of the form LO-HI"));
            let (lo, hi) = part.trim().split_once('-').ok_or_else(bad)?;
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(CliError::Usage(format!("bucket `{part}` has LO > HI")));
            }
            Ok([lo, hi])
        })
        .collect()
}

fn profile(cli: &Cli, manifest_path: &Path, bins: usize, buckets: Option<&str>) -> CmdResult {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let mut manifest = CorpusManifest::load(manifest_path)?;
    if let Some(text) = buckets {
        manifest.bins = parse_buckets(text)?;
    }
    let report = profile_corpus(&manifest, bins)?;
    match cli.format {
        Format::Json => emit_text(cli, &to_json(&report)?)?,
        Format::Csv => emit_text(cli, &report.histogram_csv())?,
    }
    if report.errors.is_empty() {
        return Ok(());
    }
    for e in &report.errors {
        eprintln!("atp: {}: {}", e.path.display(), e.message);
    }
    Err(CliError::Partial(format!(
        "{} of {} entries failed",
        report.errors.len(),
        report.errors.len() + report.records.len()
    )))
}

fn decompose(
    cli: &Cli,
    input: &Path,
    flags: &RankFlags,
    method: Method,
    orthonormalize: bool,
    inner_iters: usize,
) -> CmdResult {
    let policy = rank_policy(flags, RankPolicy::Entropy(1.0))?;
    if inner_iters == 0 {
        return Err(CliError::Usage("--inner-iters must be positive".into()));
    }
    let x: Matrix = read_matrix(input)?;
    let (l, d) = x.shape();
    if let RankPolicy::Fixed(r) = policy {
        if r > l.min(d) {
            return Err(CliError::Usage(format!("rank {r} exceeds min(L, d) = {}\n{POLICY_USAGE}", l.min(d))));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let factors: LowRankFactors = match method {
        Method::Exact => {
            let svd = exact_svd(&x)?;
            let r = select_rank(RankSource::Spectrum(&svd.singular_values), &policy, l, d);
            truncate_svd(&svd, r)?
        }
        Method::Alternating => {
            let r = if policy.needs_spectrum() {
                let svd = exact_svd(&x)?;
                select_rank(RankSource::Spectrum(&svd.singular_values), &policy, l, d)
            } else {
                select_rank(RankSource::Spectrum(&[]), &policy, l, d)
            };
            let f = alternating_lowrank_with_rng(&x, r, inner_iters, &mut rng)?;
            if orthonormalize {
                reorthogonalize(&f)?
            } else {
                f
            }
        }
    };

    let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dtype = Dtype::from(cli.precision);
    write_matrix(&factors.u, dir.join("U.matx"), dtype)?;
    write_matrix(&factors.xp, dir.join("Xp.matx"), dtype)?;
    let summary = json!({
        "rank": factors.rank(),
        "length": l,
        "dim": d,
        "method": factors.method,
        "orthonormal": factors.orthonormal,
        "policy": policy,
        "residual": factors.reconstruct().relative_frobenius_error(&x)?,
        "energy_ratio": energy_ratio(&x, &factors).unwrap_or(f64::NAN),
        "orthonormality_defect": factors.u.orthonormality_defect(),
    });
    let text = to_json(&summary)?;
    let path = dir.join("factors.json");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    match cli.format {
        Format::Json => print!("{text}"),
        Format::Csv => print!("{}", json_to_kv_csv(&summary)),
    }
    Ok(())
}

fn discrepancy(a: &Matrix, b: &Matrix) -> Result<Value, CliError> {
    Ok(json!({
        "max_abs": a.max_abs_diff(b)?,
        "relative_frobenius": a.relative_frobenius_error(b)?,
    }))
}

fn attend(
    cli: &Cli,
    x_path: &Path,
    weights_dir: &Path,
    mode: AttendMode,
    compare: bool,
    flags: &RankFlags,
) -> CmdResult {
    let (layer, pe) = load_layer(weights_dir)?;
    let policy = rank_policy(flags, layer.rank_policy)?;
    let x: Matrix = read_matrix(x_path)?;
    let expected = layer.model_dim();
    if x.cols() != expected {
        return Err(Error::ShapeMismatch(format!(
            "X ({}x{}) vs Wq ({}x{}): widths differ",
            x.rows(),
            x.cols(),
            layer.attn_weights.wq.rows(),
            layer.attn_weights.wq.cols()
        ))
        .into());
    }
    let (output, comparison) = attend_modes(&x, &layer, &pe, &policy, mode, compare, cli.seed)?;

    if let Some(path) = &cli.output {
        write_matrix(&output, path, Dtype::from(cli.precision))?;
    }
    match comparison {
        Some(cmp) => {
            let text = match cli.format {
                Format::Json => to_json(&cmp)?,
                Format::Csv => json_to_kv_csv(&cmp),
            };
            print!("{text}");
        }
        None if cli.output.is_none() => print!("{}", format_csv(&output)),
        None => {}
    }
    Ok(())
}

/// Output of `mode`, plus pairwise discrepancies of all three modes when
/// `compare` is set. One decomposition serves both factorized modes.
fn attend_modes(
    x: &Matrix,
    layer: &EncoderLayer,
    pe: &PositionalEncoding,
    policy: &RankPolicy,
    mode: AttendMode,
    compare: bool,
    seed: u64,
) -> Result<(Matrix, Option<Value>), CliError> {
    let x = if pe.mode == PeMode::AbsoluteSinusoidal {
        x.add(&make_sinusoidal(x.rows(), x.cols(), pe.base)?)?
    } else {
        x.clone()
    };
    let config =
        AttentionConfig { rope: pe.mode == PeMode::Rotary, rope_base: pe.base, keep_scores: false, ..layer.config };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needs_factors = compare || mode != AttendMode::Standard;
    let factors =
        if needs_factors { Some(decompose_input(&x, policy, layer.inner_iters, true, &mut rng)?) } else { None };
    let run = |kernel: KernelMode| -> Result<Matrix, CliError> {
        let input = match (kernel, &factors) {
            (KernelMode::Standard, _) | (_, None) => AttentionInput::Dense(&x),
            (_, Some(f)) => AttentionInput::Factors(f),
        };
        Ok(multi_head_attention(input, &layer.attn_weights, &config, kernel)?.output)
    };
    let kernel = |m: AttendMode| match m {
        AttendMode::Standard => KernelMode::Standard,
        AttendMode::Lowrank => KernelMode::LowRank,
        AttendMode::Oracle => KernelMode::DenseTaylor,
    };
    if !compare {
        return Ok((run(kernel(mode))?, None));
    }
    let lowrank = run(KernelMode::LowRank)?;
    let oracle = run(KernelMode::DenseTaylor)?;
    let standard = run(KernelMode::Standard)?;
    let rank = factors.as_ref().map_or(0, |f| f.rank());
    let cmp = json!({
        "rank": rank,
        "length": x.rows(),
        "lowrank_vs_oracle": discrepancy(&lowrank, &oracle)?,
        "lowrank_vs_standard": discrepancy(&lowrank, &standard)?,
        "oracle_vs_standard": discrepancy(&oracle, &standard)?,
    });
    let output = match mode {
        AttendMode::Standard => standard,
        AttendMode::Lowrank => lowrank,
        AttendMode::Oracle => oracle,
    };
    Ok((output, Some(cmp)))
}

fn bench(
    cli: &Cli,
    lengths: &[usize],
    rank: usize,
    dims: &[usize],
    repeats: usize,
    inner_iters: usize,
    parallel: bool,
) -> CmdResult {
    let &[d, d_prime] = dims else {
        return Err(CliError::Usage(format!("--dims takes two values d,d' (got {})", dims.len())));
    };
    let budget_bytes = budget_from_env().map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = SweepConfig {
        lengths: lengths.to_vec(),
        r: rank,
        d,
        hidden: d_prime,
        inner_iters,
        repeats,
        seed: cli.seed,
        precision: cli.precision.into(),
        budget_bytes,
        parallel,
    };
    let report = scaling_sweep(&cfg).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    match cli.format {
        Format::Json => emit_text(cli, &to_json(&report)?)?,
        Format::Csv => emit_text(cli, &report.to_csv())?,
    }
    let mismatched: Vec<String> = report
        .runs
        .iter()
        .filter(|r| !r.matches_prediction())
        .map(|r| format!("{} L={}", r.mode.name(), r.length))
        .collect();
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("instrumented counts differ from prediction: {}", mismatched.join(", "))))
    }
}

fn parse_sizes(text: &str) -> Result<Vec<(usize, usize, usize)>, CliError> {
    text.split(',')
        .map(|part| {
            let bad = || CliError::Usage(format!("size `{part}` is not of the form LxRxH"));
            let fields: Vec<usize> =
                part.trim().split('x').map(|f| f.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
            match fields[..] {
                [l, r, h] if l > 0 && r > 0 && h > 0 && r <= l => Ok((l, r, h)),
                _ => Err(bad()),
            }
        })
        .collect()
}

fn gradcheck(cli: &Cli, sizes: &str, trials: usize) -> CmdResult {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let sizes = parse_sizes(sizes)?;
    let report = gradient_check(&sizes, trials, cli.seed)?;
    emit_summary(cli, &serde_json::to_value(&report).map_err(Error::from)?)?;
    eprintln!("worst relative error {:e} (tolerance {:e})", report.worst_relative_error, report.tolerance);
    if report.passed() {
        return Ok(());
    }
    let at = report.worst.as_ref().map_or_else(String::new, |(cfg, wrt)| format!(" at {cfg:?} w.r.t. {wrt:?}"));
    Err(CliError::CheckFailed(format!(
        "worst relative error {:e} exceeds {:e}{at}",
        report.worst_relative_error, report.tolerance
    )))
}

fn synth(cli: &Cli, spec: &SynthSpec, layer_dir: Option<&Path>, heads: usize) -> CmdResult {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("corpus"));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let matrices = synth_matrices_with_rng(spec, &mut rng)?;
    write_corpus(&matrices, spec.length, &dir)?;
    let mut summary = json!({
        "manifest": dir.join(MANIFEST_JSON),
        "count": spec.count,
        "length": spec.length,
        "dim": spec.dim,
    });
    if let Some(layer_dir) = layer_dir {
        if heads == 0 || !spec.dim.is_multiple_of(heads) {
            return Err(CliError::Usage(format!("--heads {heads} must divide dim {}", spec.dim)));
        }
        let layer = EncoderLayer::random(
            spec.dim,
            spec.dim,
            2 * spec.dim,
            heads,
            RankPolicy::Entropy(1.0),
            AttentionConfig::default(),
            &mut rng,
        )?;
        save_layer(layer_dir, &layer, &PositionalEncoding::new(PeMode::None))?;
        summary["layer"] = json!(layer_dir);
    }
    let text = match cli.format {
        Format::Json => to_json(&summary)?,
        Format::Csv => json_to_kv_csv(&summary),
    };
    print!("{text}");
    Ok(())
}
