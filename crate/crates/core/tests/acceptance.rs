//! Acceptance criteria 1 to 9. Prints one PASS/FAIL line per check and
//! exits non-zero if any check fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::gradient::{check, failures, Case, OPS, TOL_F32, TOL_F64};
use mvitac::cli::{load_checkpoint, load_dataset};
use mvitac::config::{Profile, RunConfig};
use mvitac::data::{
    augment_traced, load_grasp_dataset, save_png, synth_generate, AugmentationConfig, Image, Normalization,
    PairAugmentation, PairedDataset, Split, SynthSpec, Task,
};
use mvitac::loss::{combined_loss, info_nce_value, LossWeights};
use mvitac::model::{Checkpoint, MViTacModel, Modality, ModelConfig};
use mvitac::rng::{derive_seed, rng_from};
use mvitac::tensor::{Tape, Tensor, Var};
use mvitac::train::{linear_probe, probe_features, retrieval_eval, ProbeConfig, ProbeInput, Pretrainer, TrainConfig};
use rand::Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn mvitac(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvitac")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn criterion_1(r: &mut Report) {
    let uniform = Tensor::from_vec(vec![8, 4], vec![0.5f64; 32]).unwrap();
    let l = info_nce_value(&uniform, &uniform, 0.07).unwrap();
    r.line("1 uniform N=8", (l - 8f64.ln()).abs() <= 1e-4, format!("{l:.6} vs ln 8 = 2.0794 ± 1e-4"));

    let mut eye = vec![0.0f64; 64];
    (0..8).for_each(|i| eye[i * 8 + i] = 1.0);
    let eye = Tensor::from_vec(vec![8, 8], eye).unwrap();
    let l = info_nce_value(&eye, &eye, 1.0).unwrap();
    let want = (std::f64::consts::E + 7.0).ln() - 1.0;
    r.line("1 orthonormal τ=1", (l - want).abs() <= 1e-4, format!("{l:.6} vs ln(e+7)−1 = {want:.4} ± 1e-4"));
    let l = info_nce_value(&eye, &eye, 0.07).unwrap();
    r.line("1 orthonormal τ=0.07", l < 1e-5, format!("{l:.3e} < 1e-5"));
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let bad64 = failures::<f64>(&OPS, TOL_F64);
    let bad32 = failures::<f32>(&OPS, TOL_F32);
    r.line("2 ops+losses 64-bit", bad64.is_empty(), format!("{} cases, failing {bad64:?}, tol 1e-5", OPS.len()));
    r.line("2 ops+losses 32-bit", bad32.is_empty(), format!("{} cases, failing {bad32:?}, tol 1e-3", OPS.len()));
    let (e64, n) = check::<f64>(Case::TwoSampleStep);
    let (e32, _) = check::<f32>(Case::TwoSampleStep);
    r.line("2 end-to-end 64-bit", e64 < TOL_F64, format!("max rel {e64:.2e} over {n} coordinates, tol 1e-5"));
    r.line("2 end-to-end 32-bit", e32 < TOL_F32, format!("max rel {e32:.2e}, tol 1e-3"));
    let secs = t.elapsed().as_secs_f64();
    r.line("2 runtime", secs < 60.0, format!("{secs:.1}s < 60s"));
}

fn criterion_3(r: &mut Report) {
    let mut model = MViTacModel::<f32>::init(ModelConfig::desk(3, 3)).unwrap();
    for q in model.query_params_mut() {
        q.data_mut().iter_mut().for_each(|v| *v += 0.1);
    }
    let gaps = |m: &MViTacModel<f32>| -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for modality in [Modality::Visual, Modality::Tactile] {
            let b = m.branch(modality);
            let pairs = [
                ("encoder", b.query_encoder.params(), b.momentum_encoder.params()),
                ("intra head", b.intra_head_q.params(), b.intra_head_k.params()),
                ("inter head", b.inter_head_q.params(), b.inter_head_k.params()),
            ];
            for (name, q, k) in pairs {
                let d = q
                    .iter()
                    .zip(k)
                    .flat_map(|(a, b)| a.data().iter().zip(b.data()))
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                out.push((format!("{} {name}", modality.name()), d));
            }
        }
        out
    };
    let before = gaps(&model);
    for _ in 0..10 {
        model.momentum_update(0.9).unwrap();
    }
    let after = gaps(&model);
    let want = 0.9f64.powi(10);
    let worst = before
        .iter()
        .zip(&after)
        .map(|((_, b), (_, a))| ((a / b) - want).abs() / want)
        .fold(0.0, f64::max);
    r.line(
        "3 momentum law",
        worst < 1e-5,
        format!("{} groups (2 encoders, 4 key heads), ratio 0.9^10 = {want:.4}, worst rel dev {worst:.2e} < 1e-5", before.len()),
    );
}

fn criterion_4(r: &mut Report) {
    let mut rng = rng_from(4);
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut v: Vec<f64> = (0..6 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        for row in v.chunks_mut(5) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        Tensor::from_vec(vec![6, 5], v).unwrap()
    };
    let zs: Vec<Tensor<f64>> = (0..8).map(|_| unit(&mut rng)).collect();
    let mut t = Tape::<f64>::new();
    let v: Vec<Var> = zs.iter().map(|z| t.constant(z)).collect();
    let set = mvitac::model::EmbeddingSet {
        vv_q: v[0],
        vv_k: v[1],
        tt_q: v[2],
        tt_k: v[3],
        vt_q: v[4],
        vt_k: v[5],
        tv_q: v[6],
        tv_k: v[7],
    };
    let (l, b) = combined_loss(&mut t, &set, &LossWeights { tau: 0.07, lambda_inter: 0.0 }).unwrap();
    let l = t.value(l).item();
    r.line("4 λ=0 identity", l == b.l_vv + b.l_tt, format!("l_mm {l} == l_vv + l_tt {}", b.l_vv + b.l_tt));

    let noise = PairedDataset {
        samples: (0..64)
            .map(|i| {
                let mut img = || Image::new(3, 32, 32, (0..3072).map(|_| rng.random::<f32>()).collect()).unwrap();
                mvitac::data::PairedSample {
                    stem: format!("r{i}"),
                    visual: img(),
                    tactile: img(),
                    labels: Default::default(),
                    split: Split::Train,
                }
            })
            .collect(),
        skipped: 0,
    };
    let aug = PairAugmentation::resolve(&AugmentationConfig::desk(), &noise).unwrap();
    let trainer_cfg = TrainConfig::default();
    let mut tr = Pretrainer::new(MViTacModel::init(ModelConfig::desk(3, 0)).unwrap(), &noise, aug, trainer_cfg).unwrap();
    let batch = tr.batcher().epoch(1).remove(0);
    let first = tr.train_step(1, &batch).unwrap().l_mm;
    let want = 4.0 * 64f64.ln();
    r.line(
        "4 first-step l_mm",
        (first - want).abs() <= 0.15 * want,
        format!("{first:.3} vs (2+2λ)·ln 64 = {want:.3} ± 15%"),
    );
}

fn read_eval(path: &Path) -> Vec<(String, String, f64)> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    rd.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string(), r[2].parse().unwrap())
        })
        .collect()
}

fn epoch_means(run: &Path) -> Vec<f64> {
    let mut rd = csv::Reader::from_path(run.join("epochs.csv")).unwrap();
    let col = rd.headers().unwrap().iter().position(|h| h == "l_mm").unwrap();
    rd.records().map(|r| r.unwrap()[col].parse().unwrap()).collect()
}

/// Synthetic pipeline through the binary; returns the data and run directories.
fn criteria_5_and_6(r: &mut Report, root: &Path) {
    let t = Instant::now();
    let data = root.join("synth");
    let run = root.join("lambda1");
    let ok = |o: &std::process::Output| o.status.success();
    let s = mvitac(&["synth", "--classes", "4", "--per-class", "128", "--size", "32", "--out", p(&data)]);
    let pt = mvitac(&[
        "pretrain", "--data", p(&data), "--out", p(&run), "--epochs", "30", "--batch-size", "64", "--tau", "0.07",
        "--lambda-inter", "1", "--momentum", "0.99",
    ]);
    let ckpt = run.join("final.ckpt");
    let pr_t = mvitac(&["probe", "--checkpoint", p(&ckpt), "--data", p(&data), "--task", "category", "--modality", "tactile"]);
    let pr_b = mvitac(&["probe", "--checkpoint", p(&ckpt), "--data", p(&data), "--task", "category", "--modality", "both"]);
    let secs = t.elapsed().as_secs_f64();
    let all_ok = [&s, &pt, &pr_t, &pr_b].iter().all(|o| ok(o));
    r.line("5 pipeline exit codes", all_ok, "synth, pretrain, probe ×2 exit 0".into());
    if !all_ok {
        for o in [&s, &pt, &pr_t, &pr_b] {
            eprintln!("{}", String::from_utf8_lossy(&o.stderr));
        }
        return;
    }
    let rows = read_eval(&run.join("eval.csv"));
    let acc = |m: &str| rows.iter().find(|x| x.1 == m).map(|x| x.2).unwrap();
    let (tac, both) = (acc("tactile"), acc("both"));
    r.line("5 tactile probe", tac >= 0.80, format!("test accuracy {tac:.4} ≥ 0.80 (chance 0.25)"));
    r.line("5 tactile+visual probe", both >= 0.90, format!("test accuracy {both:.4} ≥ 0.90 (chance 0.25)"));
    r.line("5 both ≥ tactile", both >= tac, format!("{both:.4} ≥ {tac:.4}"));
    let means = epoch_means(&run);
    let ratio = means[29] / means[0];
    r.line("5 loss decrease", ratio < 0.7, format!("epoch-30/epoch-1 l_mm {:.3}/{:.3} = {ratio:.3} < 0.7", means[29], means[0]));
    r.line("5 runtime", secs < 900.0, format!("{secs:.0}s < 15 min"));

    let run0 = root.join("lambda0");
    let pt0 = mvitac(&[
        "pretrain", "--data", p(&data), "--out", p(&run0), "--epochs", "30", "--batch-size", "64", "--lambda-inter", "0",
    ]);
    if !ok(&pt0) {
        r.line("6 λ=0 pretrain", false, String::from_utf8_lossy(&pt0.stderr).into_owned());
        return;
    }
    let (ds, _) = load_dataset(&data).unwrap();
    let test = PairedDataset {
        samples: ds.split(Split::Test).samples.into_iter().take(100).collect(),
        skipped: 0,
    };
    let retrieval = |c: &Path| {
        let (model, pre) = load_checkpoint(c, &ds).unwrap();
        retrieval_eval(&model, &test, &pre, 1).unwrap().accuracy
    };
    let (r1, r0) = (retrieval(&ckpt), retrieval(&run0.join("final.ckpt")));
    r.line("6 ablation ranking", r1 > r0, format!("k=1 retrieval λ=1 {r1:.3} > λ=0 {r0:.3} on {} pairs", test.len()));
    r.line("6 above 5× chance", r1 > 0.05, format!("{r1:.3} > 5 × 0.01"));
}

fn criterion_7(r: &mut Report, root: &Path) {
    let ds = synth_generate(&SynthSpec { samples_per_class: 8, ..SynthSpec::default() }).unwrap();
    let cfg = AugmentationConfig { normalization: Normalization::Identity, ..AugmentationConfig::desk() };
    let (mut flips, mut grays) = (0, 0);
    for i in 0..10_000u64 {
        let (_, tr) = augment_traced(&ds.samples[(i % 32) as usize].visual, &cfg, derive_seed(70, i)).unwrap();
        flips += tr.flipped as usize;
        grays += tr.grayscale as usize;
    }
    let (fr, gr) = (flips as f64 / 1e4, grays as f64 / 1e4);
    r.line("7 flip rate", (fr - 0.5).abs() <= 0.02, format!("{fr:.4} within 0.5 ± 0.02 over 10000 draws"));
    r.line("7 grayscale rate", (gr - 0.2).abs() <= 0.02, format!("{gr:.4} within 0.2 ± 0.02 over 10000 draws"));
    let grasp_cfg = AugmentationConfig { grasp_mode: true, ..cfg };
    let g = (0..10_000u64)
        .filter(|&i| augment_traced(&ds.samples[0].tactile, &grasp_cfg, derive_seed(71, i)).unwrap().1.grayscale)
        .count();
    r.line("7 grasp grayscale", g == 0, format!("{g} grayscale draws of 10000 in grasp mode"));

    let groot = root.join("grasp");
    for i in 0..4 {
        let d = groot.join(format!("g{i}"));
        std::fs::create_dir_all(&d).unwrap();
        for f in ["rgb_during.png", "tac_left_during.png", "tac_right_during.png"] {
            save_png(&Image::filled(3, 8, 8, 0.25 * i as f32), &d.join(f)).unwrap();
        }
        std::fs::write(d.join("label.txt"), "1").unwrap();
    }
    let gds = load_grasp_dataset(&groot).unwrap();
    let six = gds.samples.iter().all(|s| s.tactile.channels == 6);
    r.line("7 grasp stacking", six, format!("{} attempts, tactile channels 6", gds.len()));

    let aug = PairAugmentation::resolve(&AugmentationConfig::desk(), &ds).unwrap();
    let model = MViTacModel::init(ModelConfig::desk(3, 7)).unwrap();
    let (x, _) = probe_features(&model, &ds, &aug, ProbeInput::Tactile, Task::Category).unwrap();
    let view = mvitac::data::eval_view(&ds.samples[0].tactile, &aug.tactile).unwrap();
    let direct = model.encode(Modality::Tactile, &mvitac::data::stack_images(&[&view]).unwrap()).unwrap();
    let bypass = x.shape()[1] == model.config().tactile.backbone_dim && x.row(0) == direct.row(0);
    r.line("7 head bypass", bypass, format!("probe features are the {}-d backbone output", x.shape()[1]));
    let out = linear_probe(
        &model,
        &ds.split(Split::Train),
        &ds.split(Split::Test),
        &aug,
        Task::Category,
        4,
        &ProbeConfig { epochs: 2, ..ProbeConfig::default() },
    )
    .unwrap();
    r.line(
        "7 frozen encoder",
        out.encoder_digest_before == out.encoder_digest_after,
        format!("sha256 {}… unchanged", &out.encoder_digest_before[..12]),
    );
}

fn criterion_8(r: &mut Report, root: &Path) {
    let data = root.join("det");
    assert!(mvitac(&["synth", "--classes", "2", "--per-class", "16", "--out", p(&data)]).status.success());
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| root.join(format!("det_{n}"))).collect();
    for run in &runs {
        let o = mvitac(&["pretrain", "--data", p(&data), "--out", p(run), "--epochs", "2", "--batch-size", "8"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    let same = read(&runs[0]) == read(&runs[1]);
    r.line("8 metrics determinism", same, "two seeded runs, metrics.csv byte-identical".into());

    let ckpt = Checkpoint::load(&runs[0].join("final.ckpt")).unwrap();
    let model = ckpt.to_model().unwrap();
    let again = Checkpoint::from_bytes(&Checkpoint::from_model(&model, 0, Default::default(), None).to_bytes())
        .unwrap()
        .to_model()
        .unwrap();
    let bits = |m: &MViTacModel<f32>| -> Vec<u32> {
        m.named_params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
    };
    r.line("8 checkpoint bits", bits(&model) == bits(&again), format!("{} parameters bit-identical", bits(&model).len()));
    let (ds, _) = load_dataset(&data).unwrap();
    let pre = ckpt.header.preprocess.as_ref().unwrap();
    let views = ds.samples.iter().take(8).map(|s| mvitac::data::eval_view(&s.visual, &pre.visual).unwrap()).collect::<Vec<_>>();
    let x = mvitac::data::stack_images::<f32>(&views.iter().collect::<Vec<_>>()).unwrap();
    let (a, b) = (model.embed_inter(Modality::Visual, &x).unwrap(), again.embed_inter(Modality::Visual, &x).unwrap());
    let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    r.line("8 embeddings after round trip", diff == 0.0, format!("max abs diff {diff} on a batch of 8"));
}

fn criterion_9(r: &mut Report) {
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let readme = std::fs::read_to_string(repo.join("README.md")).unwrap_or_default();
    let numbers = ["74.9", "91.8", "84.1", "60.3", "56.3", "73.1"];
    let missing: Vec<&str> = numbers.iter().copied().filter(|n| !readme.contains(n)).collect();
    r.line("9 reference numbers documented", missing.is_empty(), format!("README missing {missing:?}"));
    let paper = RunConfig::load(&repo.join("configs/paper_scale.toml"), Profile::PaperScale)
        .and_then(RunConfig::resolve)
        .map(|c| c == RunConfig::for_profile(Profile::PaperScale).resolve().unwrap());
    r.line("9 full-scale config", matches!(paper, Ok(true)), "configs/paper_scale.toml loads and resolves".into());
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut r = Report { failed: 0 };
    let t = Instant::now();
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criteria_5_and_6(&mut r, root.path());
    criterion_7(&mut r, root.path());
    criterion_8(&mut r, root.path());
    criterion_9(&mut r);
    println!("acceptance: {} failing check(s), {:.0}s", r.failed, t.elapsed().as_secs_f64());
    if r.failed > 0 {
        std::process::exit(1);
    }
}
