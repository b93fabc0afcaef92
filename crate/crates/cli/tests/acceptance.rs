//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use lka3d_core::analysis::{blur_probe, count_increases, erf_map, erf_radius};
use lka3d_core::blocks::{Ctx, Mode};
use lka3d_core::inference::{logits_to_labels, sliding_window, WindowSpec};
use lka3d_core::metrics::{dice, Mask};
use lka3d_core::network::{count_flops, count_params, Model, ModelConfig, Variant, FLOP_CONVENTION};
use lka3d_core::pipeline::{prepare_input, synth_case, SyntheticSpec, Volume};
use lka3d_core::selftest::{block_gradient_error, composition_errors, metrics_oracle, primitive_gradient_errors, sliding_window_errors, worked_examples};
use lka3d_core::training::{block_means, Case, TrainConfig, TrainOptions, Trainer};
use lka3d_core::Tensor;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn composition() -> Outcome {
    let t0 = Instant::now();
    let (e64, e32, sides) = composition_errors(50, 12, 0, false).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    check(
        e64 < 1e-12 && e32 < 1e-5 && sides.len() == 50 && sides.iter().all(|&s| s == 23) && secs < 60.0,
        format!("50 pairs: f64 {e64:.2e}, f32 {e32:.2e}, support {:?}, {secs:.1}s", sides.iter().min().zip(sides.iter().max())),
    )
}

fn gradients() -> Outcome {
    let prims = primitive_gradient_errors(5, 60, 0).map_err(err)?;
    let block = block_gradient_error(5, 60, 0).map_err(err)?;
    let (worst, name) = prims.iter().map(|(n, e)| (*e, n.as_str())).fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    check(
        prims.iter().all(|(_, e)| *e < 1e-6) && block < 1e-5,
        format!("{} primitives × 5 instances, worst {name} {worst:.2e}; LKA block {block:.2e}", prims.len()),
    )
}

fn accounting() -> Outcome {
    let e = Model::<f32>::build(&ModelConfig::new(Variant::LkaE, 4, 2), 0).map_err(err)?;
    let ed = Model::<f32>::build(&ModelConfig::new(Variant::LkaEd, 4, 2), 0).map_err(err)?;
    let (pe, ped) = (count_params(&e) as f64, count_params(&ed) as f64);
    let fe = count_flops(&e, [4, 128, 128, 128]).map_err(err)?.total_gflops;
    let fed = count_flops(&ed, [4, 128, 128, 128]).map_err(err)?.total_gflops;
    let within = |v: f64, target: f64| (v / target - 1.0).abs() <= 0.10;
    check(
        within(pe, 33.7e6) && within(ped, 32.9e6) && fed < fe,
        format!(
            "params LKA-E {:.2}M ({:+.1}%), LKA-ED {:.2}M ({:+.1}%); GFLOPs at 4×128³ LKA-E {fe:.1}, LKA-ED {fed:.1}; convention: {FLOP_CONVENTION}",
            pe / 1e6,
            (pe / 33.7e6 - 1.0) * 100.0,
            ped / 1e6,
            (ped / 32.9e6 - 1.0) * 100.0
        ),
    )
}

fn shapes() -> Outcome {
    let mut notes = Vec::new();
    for v in [Variant::LkaE, Variant::LkaEd] {
        let model = Model::<f32>::build(&ModelConfig::new(v, 4, 2), 1).map_err(err)?;
        for s in [[64, 64, 64], [96, 64, 64]] {
            let n = 4 * s.iter().product::<usize>();
            let x = Tensor::from_vec(vec![1, 4, s[0], s[1], s[2]], (0..n).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect()).map_err(err)?;
            let mut ctx = Ctx::new(&model.params, Mode::Eval, false);
            let out = model.arch.forward(&mut ctx, &x).map_err(err)?;
            if out.logits.shape() != [1, 2, s[0], s[1], s[2]] {
                return Err(format!("{} on {s:?}: logits {:?}", v.name(), out.logits.shape()));
            }
            let mut expect = s;
            for (i, f) in out.encoder.iter().enumerate() {
                if i > 0 {
                    expect = expect.map(|d| d / 2);
                }
                if f.shape()[2..] != expect {
                    return Err(format!("{} on {s:?}: stage {} has {:?}, expected {expect:?}", v.name(), i + 1, &f.shape()[2..]));
                }
            }
            notes.push(format!("{} {s:?}→{:?}", v.name(), &out.encoder.last().unwrap().shape()[2..]));
        }
    }
    Ok(notes.join(", "))
}

fn sliding() -> Outcome {
    let t0 = Instant::now();
    let (tiled, single) = sliding_window_errors(160, 64, 0).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    check(tiled < 1e-5 && single < 1e-6 && secs < 120.0, format!("160³ with 64³ windows {tiled:.2e}, single window {single:.2e}, {secs:.1}s"))
}

fn metrics() -> Outcome {
    let r = metrics_oracle(1000, 0).map_err(err)?;
    let [d, f1, h] = worked_examples().map_err(err)?;
    let mism = r.dice_mismatches + r.lcd_mismatches + r.avd_mismatches + r.hd95_presence_mismatches;
    check(
        mism == 0 && r.hd95_max_abs_err < 1e-9 && d == 2.0 / 3.0 && f1 == 2.0 / 3.0 && h == 3.0,
        format!(
            "{} pairs: dice/lcd/avd/hd95-presence mismatches {}/{}/{}/{}, hd95 max err {:.1e}; worked dice {d}, lesion F1 {f1}, hd95 {h}",
            r.pairs, r.dice_mismatches, r.lcd_mismatches, r.avd_mismatches, r.hd95_presence_mismatches, r.hd95_max_abs_err
        ),
    )
}

fn synthetic(seeds: impl Iterator<Item = u64>) -> Result<Vec<(Volume, Volume)>, String> {
    seeds
        .map(|seed| synth_case(&SyntheticSpec { seed, ..Default::default() }).map(|(img, lbl)| (prepare_input(&img), lbl)).map_err(err))
        .collect()
}

struct Trained {
    variant: Variant,
    model: Model<f32>,
    steps: usize,
    dice: f64,
    blocks: Vec<f64>,
    seconds: f64,
}

fn train_desk(variant: Variant, train: &[Case], held_out: &[(Volume, Volume)]) -> Result<Trained, String> {
    let t0 = Instant::now();
    let cfg = ModelConfig { stage_channels: vec![8, 16, 32, 64, 80, 80], ..ModelConfig::new(variant, 2, 2) };
    let model = Model::<f32>::build(&cfg, 0).map_err(err)?;
    let tc = TrainConfig { lr: Some(2e-3), epochs: usize::MAX, max_steps: Some(300), crop_size: [32; 3], ..Default::default() };
    let mut trainer = Trainer::new(model, &tc).map_err(err)?;
    trainer.run(train, &TrainOptions::default(), |_| {}).map_err(err)?;
    let losses: Vec<f64> = trainer.history.iter().map(|r| r.loss).collect();
    let spec = WindowSpec::cubic(32);
    let mut total = 0.0;
    for (img, lbl) in held_out {
        let pred = logits_to_labels(&sliding_window(&trainer.model, img, &spec).map_err(err)?);
        total += dice(&Mask::from_labels(&pred, &[1]), &Mask::from_labels(lbl, &[1])).map_err(err)?;
    }
    Ok(Trained {
        variant,
        steps: losses.len(),
        model: trainer.model,
        dice: total / held_out.len() as f64,
        blocks: block_means(&losses, 20),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn desk_training(models: &[Trained]) -> Outcome {
    let total: f64 = models.iter().map(|m| m.seconds).sum();
    let mut ok = total < 1800.0;
    let mut parts = Vec::new();
    for m in models {
        let monotone = m.blocks.windows(2).all(|w| w[1] <= w[0]);
        ok &= monotone && m.dice > 0.80 && m.steps == 300;
        parts.push(format!(
            "{}: {} steps, held-out dice {:.3}, 20-step means {:.3}→{:.3} {}, {:.0}s",
            m.variant.name(),
            m.steps,
            m.dice,
            m.blocks.first().unwrap_or(&f64::NAN),
            m.blocks.last().unwrap_or(&f64::NAN),
            if monotone { "monotone" } else { "NOT monotone" },
            m.seconds
        ));
    }
    check(ok, format!("{}; total {total:.0}s", parts.join("; ")))
}

fn erf_mean(variant: Variant, seeds: std::ops::Range<u64>) -> Result<Vec<f64>, String> {
    seeds
        .map(|s| {
            let model = Model::<f32>::build(&ModelConfig::new(variant, 2, 2), s).map_err(err)?;
            let (img, _) = synth_case(&SyntheticSpec { seed: 1000 + s, ..Default::default() }).map_err(err)?;
            let map = erf_map(&model, 1, &[prepare_input(&img)]).map_err(err)?;
            erf_radius(&map, 0.01).map_err(err)
        })
        .collect()
}

fn erf() -> Outcome {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let lka = erf_mean(Variant::LkaE, 0..20)?;
    let plain = erf_mean(Variant::PlainUnet, 0..20)?;
    let deterministic = erf_mean(Variant::LkaE, 0..3)? == lka[..3] && erf_mean(Variant::PlainUnet, 0..3)? == plain[..3];
    let (ml, mp) = (mean(&lka), mean(&plain));
    check(ml > mp && deterministic, format!("stage-1 radius at 0.01 over 20 seeds: LKA-E {ml:.2}, plain_unet {mp:.2}; repeat runs identical: {deterministic}"))
}

fn blur(models: &[Trained], held_out: &[(Volume, Volume)]) -> Outcome {
    let cases: Vec<(String, Volume)> = held_out.iter().enumerate().map(|(i, (img, _))| (format!("h{i}"), img.clone())).collect();
    let sigmas = [0.0, 0.5, 1.0, 2.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for m in models {
        let r = blur_probe(&m.model, &cases, &sigmas, &WindowSpec::cubic(32), 1).map_err(err)?;
        let identity = r.rows.iter().filter(|row| row.sigma == 0.0).all(|row| row.dice == 1.0 && row.hd95 == Some(0.0));
        let medians: Vec<f64> = sigmas.iter().map(|&s| r.median_dice(s).unwrap_or(f64::NAN)).collect();
        let inversions = count_increases(&medians);
        ok &= identity && inversions <= 1;
        parts.push(format!(
            "{}: σ=0 identity {identity}, median dice {:?}, inversions {inversions}",
            m.variant.name(),
            medians.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ));
    }
    check(ok, parts.join("; "))
}

fn selftest_cli() -> Outcome {
    let t0 = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_lka3d")).arg("selftest").output().map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    let code = out.status.code();
    check(code == Some(0) && secs <= 120.0, format!("`lka3d selftest` exit {code:?} in {secs:.1}s"))
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {n:>2} ({name}): {detail}");
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "kernel composition", &composition());
    all &= report(2, "gradient checks", &gradients());
    all &= report(3, "accounting", &accounting());
    all &= report(4, "shapes", &shapes());
    all &= report(5, "sliding window", &sliding());
    all &= report(6, "metrics oracle", &metrics());

    let data = synthetic(0..32).and_then(|train| Ok((train, synthetic(1000..1008)?)));
    let (models, held_out, outcome7) = match data {
        Ok((train, held_out)) => {
            let cases: Vec<Case> = train.into_iter().map(|(image, labels)| Case { image, labels }).collect();
            let mut models = Vec::new();
            let mut failure = None;
            for v in [Variant::PlainUnet, Variant::LkaE] {
                match train_desk(v, &cases, &held_out) {
                    Ok(m) => models.push(m),
                    Err(e) => failure = Some(format!("{}: {e}", v.name())),
                }
            }
            let o = match failure {
                Some(e) => Err(e),
                None => desk_training(&models),
            };
            (models, held_out, o)
        }
        Err(e) => (Vec::new(), Vec::new(), Err(e)),
    };
    all &= report(7, "desk-scale training", &outcome7);
    all &= report(8, "ERF", &erf());
    let outcome9 = if models.len() == 2 { blur(&models, &held_out) } else { Err("needs both trained models".into()) };
    all &= report(9, "blur probe", &outcome9);
    all &= report(10, "selftest budget", &selftest_cli());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
