use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use aitpr_core::decoder::verify::{check_decoder_gradients, TOLERANCE};
use aitpr_core::decoder::{Decoder, DecoderConfig, DecoderError, FusionMode, ModelDims};
use aitpr_core::metrics::{evaluate, tokenize};
use aitpr_core::scene::{Dataset, SceneError, SynthConfig};
use aitpr_core::training::{
    load_checkpoint, save_checkpoint, CheckpointError, TrainConfig, TrainError, Trainer,
};

use crate::manifest::{unix_now, RunManifest};
use crate::{EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// A check ran and failed.
    Verification(String),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Verification(m) | CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptyDataset => CliError::Usage(e.to_string()),
            TrainError::Diverged { .. } => CliError::Verification(e.to_string()),
            TrainError::Decoder(DecoderError::Variant(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Directory that holds `path`, for sibling outputs.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn variant_number(v: &str) -> u8 {
    v.parse().expect("clap restricts the variant to 1, 2 or 3")
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let started = unix_now();
    let seed = args.seed.unwrap_or(0);
    let config = SynthConfig {
        dim: args.dim,
        noise_sigma: args.noise,
        ..SynthConfig::default()
    };
    let data = Dataset::synthesize(args.scenes as usize, seed, &config)?;
    data.save(&args.out)?;
    let manifest = RunManifest::new(
        "synth",
        serde_json::json!({ "scenes": args.scenes, "synth": config }),
        seed,
        started,
        &[
            args.out.join("vocab.txt"),
            args.out.join("features"),
            args.out.join("captions"),
        ],
    );
    manifest.write(&args.out).map_err(|e| io(&args.out, e))?;
    println!("wrote {} scenes to {}", data.len(), args.out.display());
    Ok(())
}

fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let started = unix_now();
    let data = Dataset::load(&args.data)?;
    if data.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no scenes",
            args.data.display()
        )));
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let variant = args.variant.as_deref().map(variant_number);
            if variant.is_some_and(|v| v != ckpt.config.variant)
                || args.fusion.is_some_and(|f| f != ckpt.config.fusion)
            {
                return Err(CliError::Usage(
                    "--variant/--fusion differ from the checkpoint being resumed".into(),
                ));
            }
            let mut t = Trainer::resume(&data, ckpt)?;
            if let Some(e) = args.epochs {
                t.set_epochs(e);
            }
            t
        }
        None => {
            let mut config = match &args.config {
                Some(p) => read_train_config(p)?,
                None => TrainConfig::default(),
            };
            if let Some(v) = &args.variant {
                config.variant = variant_number(v);
            }
            if let Some(f) = args.fusion {
                config.fusion = f;
            }
            if let Some(s) = args.seed {
                config.seed = s;
            }
            if let Some(e) = args.epochs {
                config.epochs = e;
            }
            Trainer::new(&data, config)?
        }
    };

    let out_dir = parent_dir(&args.out);
    fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
    let result = trainer.run();
    let ckpt = match &result {
        Err(TrainError::Diverged { last_good, .. }) => (**last_good).clone(),
        _ => trainer.checkpoint(),
    };
    save_checkpoint(&ckpt, &args.out)?;

    let trace_path = out_dir.join("loss_trace.csv");
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in ckpt.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&trace_path, csv).map_err(|e| io(&trace_path, e))?;

    let config = serde_json::to_value(&ckpt.config).expect("config serializes");
    RunManifest::new(
        "train",
        config,
        ckpt.config.seed,
        started,
        &[args.out.clone(), trace_path],
    )
    .write(&out_dir)
    .map_err(|e| io(&out_dir, e))?;
    result?;
    match ckpt.loss_trace.last() {
        Some(l) => println!("epoch {} loss {l:.6}", ckpt.epoch),
        None => println!("no epochs run"),
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let started = unix_now();
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = Dataset::load(&args.data)?;
    if data.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no scenes",
            args.data.display()
        )));
    }
    if data.vocab.content_tokens() != ckpt.vocab.as_slice() {
        return Err(CliError::Io(
            "compatibility error: dataset vocabulary differs from the checkpoint vocabulary".into(),
        ));
    }
    if data.samples[0].features.dim() != ckpt.config.feature_dim {
        return Err(CliError::Io(format!(
            "compatibility error: features have dim {} but the checkpoint expects {}",
            data.samples[0].features.dim(),
            ckpt.config.feature_dim
        )));
    }
    if args.max_len < 2 {
        return Err(CliError::Usage("--max-len must be at least 2".into()));
    }

    let decoder_config = ckpt
        .config
        .decoder_config()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let decoder = Decoder::new(&ckpt.params, decoder_config);
    let mut ids = Vec::new();
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    let mut lines = String::new();
    for s in &data.samples {
        let seq = decoder
            .generate_caption(&s.features, args.max_len)
            .map_err(|e| CliError::Io(format!("{}: {e}", s.name)))?;
        let text = data.vocab.decode(&seq);
        lines.push_str(&format!("{}\t{text}\n", s.name));
        ids.push(s.name.clone());
        cands.push(tokenize(&text));
        refs.push(
            s.references
                .iter()
                .map(|r| tokenize(&data.vocab.decode(r)))
                .collect(),
        );
    }
    let report = evaluate(&ids, &cands, &refs).map_err(|e| CliError::Usage(e.to_string()))?;

    let out_dir = parent_dir(&args.report);
    fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(&args.report, json).map_err(|e| io(&args.report, e))?;
    let captions = args
        .captions
        .clone()
        .unwrap_or_else(|| out_dir.join("captions.txt"));
    fs::write(&captions, lines).map_err(|e| io(&captions, e))?;

    let config = serde_json::json!({
        "checkpoint": args.ckpt.display().to_string(),
        "data": args.data.display().to_string(),
        "max_len": args.max_len,
        "train": ckpt.config,
    });
    RunManifest::new(
        "eval",
        config,
        ckpt.config.seed,
        started,
        &[args.report.clone(), captions],
    )
    .write(&out_dir)
    .map_err(|e| io(&out_dir, e))?;
    println!(
        "BLEU-1 {:.4} BLEU-4 {:.4} ROUGE-L {:.4} CIDEr-D {:.4}",
        report.bleu1, report.bleu4, report.rouge_l, report.cider_d
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Parses `D=16,d=6,e=5,V=12[,att=..]`.
pub fn parse_dims(spec: &str) -> Result<ModelDims> {
    let (mut feature, mut hidden, mut embed, mut vocab, mut att) = (None, None, None, None, None);
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("expected key=value in --dims, got {part:?}"))
        })?;
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("--dims {k} must be a positive integer")))?;
        let slot = match k.trim() {
            "D" => &mut feature,
            "d" => &mut hidden,
            "e" => &mut embed,
            "V" => &mut vocab,
            "att" => &mut att,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown --dims key {other:?}; use D, d, e, V, att"
                )))
            }
        };
        *slot = Some(n);
    }
    let need = |v: Option<usize>, k: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--dims is missing {k}")))
    };
    let hidden = need(hidden, "d")?;
    let vocab = need(vocab, "V")?;
    if vocab < 5 {
        return Err(CliError::Usage(
            "--dims V must be at least 5 (4 reserved tokens plus one word)".into(),
        ));
    }
    Ok(ModelDims {
        feature: need(feature, "D")?,
        hidden,
        embed: need(embed, "e")?,
        attention: att.unwrap_or(hidden),
        vocab,
    })
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let dims = parse_dims(&args.dims)?;
    let modes = match args.fusion {
        Some(f) => vec![f],
        None => vec![FusionMode::Early, FusionMode::Late],
    };
    let variants: Vec<u8> = match &args.variant {
        Some(v) => vec![variant_number(v)],
        None => vec![1, 2, 3],
    };
    let mut failed = Vec::new();
    for &mode in &modes {
        for &v in &variants {
            let config = DecoderConfig::new(mode, v).expect("variant already validated");
            let report = check_decoder_gradients(dims, config, args.seed, args.eps, args.corrupt_gradient)
                .map_err(|e| match e {
                    DecoderError::TooLarge { params, limit } => CliError::Usage(format!(
                        "refusing: these dims give an estimated {params} parameters, finite differences are limited to fewer than {limit}"
                    )),
                    other => CliError::Io(other.to_string()),
                })?;
            println!(
                "{mode} variant {v}: max relative error {:.3e}",
                report.max_error()
            );
            for (name, err) in &report.groups {
                println!("  {name:<8} {err:.3e}");
            }
            if !report.passed() {
                failed.push(format!("{mode}/{v}"));
            }
        }
    }
    if failed.is_empty() {
        println!("all gradients within {TOLERANCE:e}");
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn dims_parsing() {
        let d = parse_dims("D=16,d=6,e=5,V=12").unwrap();
        assert_eq!(
            d,
            ModelDims {
                feature: 16,
                hidden: 6,
                embed: 5,
                attention: 6,
                vocab: 12
            }
        );
        let d = parse_dims(" V=9 , att=3,D=8,e=2,d=4").unwrap();
        assert_eq!(d.attention, 3);
        for bad in [
            "D=16,d=6,e=5",
            "D=16,d=6,e=5,V=12,x=1",
            "D=0,d=6,e=5,V=12",
            "D16",
            "D=a,d=1,e=1,V=9",
            "D=4,d=4,e=4,V=4",
        ] {
            assert!(matches!(parse_dims(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn parent_of_bare_file_is_cwd() {
        assert_eq!(parent_dir(Path::new("model.ckpt")), PathBuf::from("."));
        assert_eq!(
            parent_dir(Path::new("runs/a/model.ckpt")),
            PathBuf::from("runs/a")
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Verification(String::new()).exit_code(), 1);
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Io(String::new()).exit_code(), 3);
    }

    #[test]
    fn config_file_keys() {
        let v: Value = serde_json::to_value(TrainConfig::default()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "epochs",
            "learning_rate",
            "batch_size",
            "seed",
            "fusion",
            "variant",
            "grad_clip",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
    }
}
