//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Built with `harness = false` so the lines always print.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aitpr_core::decoder::verify::{check_decoder_gradients, DEFAULT_DIMS, DEFAULT_EPS, TOLERANCE};
use aitpr_core::decoder::{
    Decoder, DecoderConfig, DecoderState, FusionMode, ModelDims, ModelParams, Param, Session,
    StepTrace,
};
use aitpr_core::graph::Graph;
use aitpr_core::metrics::{bleu_all, cider_d, evaluate, rouge_l, rouge_l_corpus, tokenize};
use aitpr_core::scene::{Dataset, RegionFeatureSet, SynthConfig, TokenId, BOS, EOS};
use aitpr_core::tensor::Tensor;
use aitpr_core::tpr::{bind, generate_roles, unbind, FillerSet};
use aitpr_core::training::{write_checkpoint, TrainConfig, Trainer};

// Pinned tolerances and budgets.
const TPR_CASES: usize = 100;
const TPR_TOL: f64 = 1e-8;
const TPR_BUDGET: Duration = Duration::from_secs(5);
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ATTEND_CALLS: usize = 1000;
const ATTEND_TOL: f64 = 1e-12;
const OVERFIT_SCENES: usize = 50;
const OVERFIT_LOSS: f64 = 0.05;
const OVERFIT_EXACT: f64 = 0.90;
const OVERFIT_BLEU4: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const METRIC_TOL: f64 = 1e-6;
const MAX_LEN: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tpr_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..TPR_CASES {
        let n = rng.random_range(1..=32);
        let d_m = rng.random_range(n..=64);
        let d_f = rng.random_range(1..=16);
        let roles = generate_roles(n, d_m, case as u64).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d_f).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let fillers = FillerSet::from_rows(&rows).unwrap();
        let s = bind(&fillers, &roles).unwrap();
        for (i, f) in rows.iter().enumerate() {
            let got = unbind(&s, roles.role(i)).unwrap();
            for (a, b) in got.iter().zip(f) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= TPR_TOL && elapsed < TPR_BUDGET,
        format!(
            "{TPR_CASES} cases, max error {worst:.2e} (tol {TPR_TOL:.0e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn all_configs() -> Vec<DecoderConfig> {
    [FusionMode::Early, FusionMode::Late]
        .into_iter()
        .flat_map(|m| (1..=3).map(move |v| DecoderConfig::new(m, v).unwrap()))
        .collect()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for cfg in all_configs() {
        let r = check_decoder_gradients(DEFAULT_DIMS, cfg, 0, DEFAULT_EPS, false).unwrap();
        worst = worst.max(r.max_error());
        parts.push(format!(
            "{}/{}={:.1e}",
            cfg.mode,
            cfg.flags.number().unwrap(),
            r.max_error()
        ));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= TOLERANCE && elapsed < GRAD_BUDGET,
        format!(
            "{} (tol {TOLERANCE:.0e}), {:.1}s",
            parts.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_rows(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn attention_normalization() -> Outcome {
    let dims = ModelDims {
        feature: 12,
        hidden: 8,
        embed: 6,
        attention: 7,
        vocab: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for mode in [FusionMode::Early, FusionMode::Late] {
        for call in 0..ATTEND_CALLS {
            let params = ModelParams::init_uniform(dims, call as u64, 1.0);
            let dec = Decoder::new(&params, DecoderConfig::new(mode, 1).unwrap());
            let k1 = rng.random_range(1..=8);
            let k2 = rng.random_range(if mode == FusionMode::Early { 1 } else { 0 }..=8);
            let feats = RegionFeatureSet::new(
                random_rows(&mut rng, k1, dims.feature),
                random_rows(&mut rng, k2, dims.feature),
            )
            .unwrap();
            let h = Tensor::row(
                (0..dims.hidden)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            );
            let (a, _) = dec.attend(&h, &feats).unwrap();
            worst = worst.max((a.alpha.sum() - 1.0).abs());
            if let Some(ap) = &a.alpha_prime {
                worst = worst.max((ap.sum() - 1.0).abs());
            }
        }
    }
    outcome(
        worst <= ATTEND_TOL,
        format!(
            "{ATTEND_CALLS} calls per mode, max |sum - 1| = {worst:.1e} (tol {ATTEND_TOL:.0e})"
        ),
    )
}

/// Intermediates of one step from a given incoming state.
fn step_from(
    params: &ModelParams,
    config: DecoderConfig,
    feats: &RegionFeatureSet,
    state: &DecoderState,
    token: TokenId,
) -> (Tensor, Tensor, Tensor, Tensor, Tensor, Tensor) {
    let mut graph = Graph::new();
    let mut s = Session::new(&mut graph, params, config);
    let ctx = s.image(feats).unwrap();
    let st = s.load_state(state);
    let v = s.step(st, &ctx, token).unwrap();
    let val = |x| s.value(x).clone();
    (
        val(v.p_raw),
        val(v.p),
        val(v.q_raw),
        val(v.q),
        val(v.gate),
        val(v.attention.v_hat),
    )
}

fn incoming_states(
    dec: &Decoder,
    feats: &RegionFeatureSet,
    trace: &[StepTrace],
) -> Vec<DecoderState> {
    let mut states = vec![dec.init_state(feats.v_bar()).unwrap()];
    for (k, tr) in trace.iter().enumerate() {
        states.push(DecoderState {
            h: tr.h.clone(),
            c: tr.c.clone(),
            embed_sum: tr.embed_sum.clone(),
            t: k + 1,
        });
    }
    states
}

fn ablation_fidelity() -> Outcome {
    let dims = ModelDims {
        feature: 16,
        hidden: 10,
        embed: 8,
        attention: 6,
        vocab: 14,
    };
    let params = ModelParams::init_uniform(dims, 303, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let feats =
        RegionFeatureSet::new(random_rows(&mut rng, 3, 16), random_rows(&mut rng, 2, 16)).unwrap();
    let target: Vec<TokenId> = [BOS, 5, 9, 4, 12, 7, EOS].to_vec();
    let mut problems = Vec::new();

    for mode in [FusionMode::Early, FusionMode::Late] {
        // Variant 1 against the components composed with no corrections.
        let dec = Decoder::new(&params, DecoderConfig::new(mode, 1).unwrap());
        let (_, trace) = dec.teacher_forced_trace(&feats, &target).unwrap();
        let vx = dec.compose_vx(&feats).unwrap();
        let mut state = dec.init_state(feats.v_bar()).unwrap();
        for (k, tr) in trace.iter().enumerate() {
            let emb = Tensor::row(params.get(Param::Embedding).row_slice(target[k]).to_vec());
            let absorbed = state.absorb(&emb);
            let (_, q) = dec.attend(&state.h, &feats).unwrap();
            let gate = dec.tpr_gate(&absorbed, &vx).unwrap();
            let (logits, next) = dec.cell_step(&emb, &q, &gate, &absorbed).unwrap();
            if tr.p != emb
                || tr.q != q
                || tr.gate != gate
                || tr.logits != logits
                || tr.h != next.h
                || tr.c != next.c
            {
                problems.push(format!("{mode} v1 step {k} differs from bypassed pipeline"));
            }
            state = next;
        }

        // Variant 3 vs 2 from the same incoming state at every step.
        let v2 = DecoderConfig::new(mode, 2).unwrap();
        let v3 = DecoderConfig::new(mode, 3).unwrap();
        let dec2 = Decoder::new(&params, v2);
        let (_, trace2) = dec2.teacher_forced_trace(&feats, &target).unwrap();
        for (k, st) in incoming_states(&dec2, &feats, &trace2)
            .iter()
            .take(trace2.len())
            .enumerate()
        {
            let a = step_from(&params, v2, &feats, st, target[k]);
            let b = step_from(&params, v3, &feats, st, target[k]);
            if a.1 != trace2[k].p || a.3 != trace2[k].q {
                problems.push(format!("{mode} v2 step {k} replay mismatch"));
            }
            let shared = a.0 == b.0 && a.2 == b.2 && a.3 == b.3 && a.4 == b.4 && a.5 == b.5;
            if !shared {
                problems.push(format!(
                    "{mode} step {k}: non-p values differ between v2 and v3"
                ));
            }
            if a.1 == b.1 {
                problems.push(format!("{mode} step {k}: p identical between v2 and v3"));
            }
        }
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!(
            "{} steps x 2 modes: v1 bit-identical to bypass; v2/v3 differ only in p",
            target.len() - 1
        )
    } else {
        problems.join("; ")
    };
    outcome(pass, detail)
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        learning_rate: 1e-2,
        batch_size: 5,
        seed: 404,
        fusion: FusionMode::Late,
        variant: 3,
        feature_dim: 64,
        hidden_dim: 64,
        embed_dim: 32,
        attention_dim: 32,
        grad_clip: 5.0,
    }
}

type Scored = (Vec<String>, Vec<Vec<String>>, Vec<Vec<Vec<String>>>);

/// Greedy captions and references for every sample, as token strings.
fn decode_all(params: &ModelParams, config: DecoderConfig, data: &Dataset) -> (Scored, usize) {
    let dec = Decoder::new(params, config);
    let (mut ids, mut cands, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    let mut exact = 0;
    for s in &data.samples {
        let seq = dec.generate_caption(&s.features, MAX_LEN).unwrap();
        if &seq == s.target() {
            exact += 1;
        }
        ids.push(s.name.clone());
        cands.push(tokenize(&data.vocab.decode(&seq)));
        refs.push(
            s.references
                .iter()
                .map(|r| tokenize(&data.vocab.decode(r)))
                .collect(),
        );
    }
    ((ids, cands, refs), exact)
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let data = Dataset::synthesize(OVERFIT_SCENES, 2024, &SynthConfig::default()).unwrap();
    let cfg = overfit_config();
    let mut trainer = Trainer::new(&data, cfg.clone()).unwrap();
    trainer.run().unwrap();
    let loss = *trainer.loss_trace().last().unwrap();
    let ((_, cands, refs), exact) =
        decode_all(trainer.params(), cfg.decoder_config().unwrap(), &data);
    let bleu4 = bleu_all(&cands, &refs).unwrap()[3];
    let elapsed = start.elapsed();
    let frac = exact as f64 / data.len() as f64;
    outcome(
        loss < OVERFIT_LOSS && frac >= OVERFIT_EXACT && bleu4 >= OVERFIT_BLEU4 && elapsed < OVERFIT_BUDGET,
        format!(
            "final loss {loss:.4} (< {OVERFIT_LOSS}), exact {exact}/{} (>= {:.0}%), BLEU-4 {bleu4:.4} (>= {OVERFIT_BLEU4}), {:.1}s",
            data.len(),
            OVERFIT_EXACT * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut worst = 0.0f64;
    for ((c, r), e) in [
        (common::shapes(), &common::SHAPES),
        (common::cat(), &common::CAT),
        (common::repeats(), &common::REPEATS),
    ] {
        let b = bleu_all(&c, &r).unwrap();
        for (got, want) in b.iter().zip(&e.bleu) {
            worst = worst.max((got - want).abs());
        }
        for (i, (ci, ri)) in c.iter().zip(&r).enumerate() {
            worst = worst.max((rouge_l(ci, ri) - e.rouge_per[i]).abs());
        }
        let cd = cider_d(&c, &r).unwrap();
        worst = worst.max((cd.score - e.cider).abs());
        for (g, w) in cd.per_image.iter().zip(e.cider_per) {
            worst = worst.max((g - w).abs());
        }
    }
    let (c, _) = common::shapes();
    let same: Vec<Vec<Vec<String>>> = c.iter().map(|x| vec![x.clone()]).collect();
    let b4 = bleu_all(&c, &same).unwrap()[3];
    let rl = rouge_l_corpus(&c, &same).unwrap();
    outcome(
        worst <= METRIC_TOL && b4 == 1.0 && rl == 1.0,
        format!("3 micro-corpora, max deviation {worst:.1e} (tol {METRIC_TOL:.0e}); identical corpus BLEU-4 {b4}, ROUGE-L {rl}"),
    )
}

fn train_and_eval(data: &Dataset, cfg: &TrainConfig) -> (Vec<u8>, String) {
    let mut t = Trainer::new(data, cfg.clone()).unwrap();
    t.run().unwrap();
    let ((ids, cands, refs), _) = decode_all(t.params(), cfg.decoder_config().unwrap(), data);
    let report = evaluate(&ids, &cands, &refs).unwrap();
    (
        write_checkpoint(&t.checkpoint()),
        serde_json::to_string_pretty(&report).unwrap(),
    )
}

fn determinism() -> Outcome {
    let synth = SynthConfig {
        dim: 32,
        ..SynthConfig::default()
    };
    let data = Dataset::synthesize(12, 505, &synth).unwrap();
    let cfg = TrainConfig {
        epochs: 8,
        feature_dim: 32,
        hidden_dim: 24,
        embed_dim: 16,
        attention_dim: 16,
        fusion: FusionMode::Early,
        variant: 2,
        seed: 505,
        ..overfit_config()
    };
    let (c1, r1) = train_and_eval(&data, &cfg);
    let (c2, r2) = train_and_eval(&data, &cfg);
    outcome(
        c1 == c2 && r1 == r2,
        format!(
            "checkpoints {} bytes identical: {}, reports identical: {}",
            c1.len(),
            c1 == c2,
            r1 == r2
        ),
    )
}

/// Trains every variant x fusion pair on one split and scores a held-out
/// split. Logged only.
fn variant_ordering() -> Outcome {
    let synth = SynthConfig {
        dim: 32,
        ..SynthConfig::default()
    };
    let train_set = Dataset::synthesize(60, 606, &synth).unwrap();
    let test_set = Dataset::synthesize(30, 607, &synth).unwrap();
    let mut rows = Vec::new();
    for cfg in all_configs() {
        let tc = TrainConfig {
            epochs: 25,
            feature_dim: 32,
            hidden_dim: 32,
            embed_dim: 16,
            attention_dim: 16,
            fusion: cfg.mode,
            variant: cfg.flags.number().unwrap(),
            seed: 606,
            ..overfit_config()
        };
        let mut t = Trainer::new(&train_set, tc).unwrap();
        t.run().unwrap();
        let ((ids, cands, refs), _) = decode_all(t.params(), cfg, &test_set);
        let r = evaluate(&ids, &cands, &refs).unwrap();
        rows.push((
            format!("{}/{}", cfg.mode, cfg.flags.number().unwrap()),
            r.bleu4,
            r.cider_d,
        ));
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .map(|r| r.0.clone())
        .unwrap();
    let table: Vec<String> = rows
        .iter()
        .map(|(n, b, c)| format!("{n}: BLEU-4 {b:.4} CIDEr-D {c:.4}"))
        .collect();
    outcome(
        true,
        format!(
            "non-binding; held-out {}; best CIDEr-D {best}",
            table.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("tpr-round-trip", tpr_round_trip),
        ("gradient-suite", gradient_suite),
        ("attention-normalization", attention_normalization),
        ("ablation-fidelity", ablation_fidelity),
        ("overfit", overfit),
        ("metric-oracles", metric_oracles),
        ("determinism", determinism),
        ("variant-ordering-report", variant_ordering),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
