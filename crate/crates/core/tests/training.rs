use bfr_core::degradation::{degrade, sample_params};
use bfr_core::net::{Ablation, Ablations, ModelConfig, Phase, RestorationModel};
use bfr_core::synth::face_set;
use bfr_core::training::*;
use bfr_core::{Error, Image8, Tensor};
use std::collections::BTreeMap;

fn pairs(n: usize) -> Vec<(Image8, Image8)> {
    face_set(16, n, 40)
        .into_iter()
        .enumerate()
        .map(|(i, hq)| {
            let lq = degrade(&hq, &sample_params(i as u64)).unwrap();
            (hq, lq)
        })
        .collect()
}

fn config(phase1: usize, phase2: usize, abl: Ablations) -> TrainConfig {
    TrainConfig {
        phase1_iters: phase1,
        phase2_iters: phase2,
        batch_size: 2,
        lr0: 1e-3,
        cosine_tail_iters: 0,
        seed: 9,
        ablation: abl,
        ..TrainConfig::default()
    }
}

fn trainer(cfg: TrainConfig) -> Trainer {
    let mcfg = ModelConfig::micro();
    let model = RestorationModel::new(mcfg.clone(), cfg.ablation.clone(), 1).unwrap();
    let data = TrainData::from_pairs(&pairs(4), &mcfg).unwrap();
    Trainer::new(model, data, cfg).unwrap()
}

fn snapshot(t: &Trainer) -> BTreeMap<String, Tensor<f32>> {
    t.model().params().iter().map(|(n, p)| (n.to_string(), p.value.clone())).collect()
}

fn changed(a: &BTreeMap<String, Tensor<f32>>, b: &BTreeMap<String, Tensor<f32>>, prefix: &str) -> Vec<bool> {
    a.iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, v)| v.data().iter().map(|x| x.to_bits()).ne(b[n].data().iter().map(|x| x.to_bits())))
        .collect()
}

#[test]
fn phase_one_leaves_the_denoiser_untouched() {
    let mut t = trainer(config(100, 0, Ablations::none()));
    let before = snapshot(&t);
    t.run(None).unwrap();
    let after = snapshot(&t);
    let den = changed(&before, &after, "denoiser.");
    assert!(!den.is_empty() && den.iter().all(|c| !c));
    // Conditioning modules are trainable (weight decay alone moves them).
    assert!(changed(&before, &after, "sdrm.").iter().all(|&c| c));
}

#[test]
fn phase_two_trains_the_decoder_only() {
    let mut t = trainer(config(1, 30, Ablations::none()));
    t.step().unwrap();
    let before = snapshot(&t);
    t.run(None).unwrap();
    let after = snapshot(&t);
    assert!(changed(&before, &after, "denoiser.encoder.").iter().all(|c| !c));
    assert!(changed(&before, &after, "denoiser.middle.").iter().all(|c| !c));
    let dec = changed(&before, &after, "denoiser.decoder.");
    assert!(!dec.is_empty() && dec.iter().all(|&c| c));
}

#[test]
fn freeze_ablations_in_phase_two() {
    let run = |flag: Ablation| {
        let mut t = trainer(config(1, 10, [flag].into_iter().collect()));
        t.step().unwrap();
        let before = snapshot(&t);
        t.run(None).unwrap();
        let after = snapshot(&t);
        (
            changed(&before, &after, "denoiser.encoder.").iter().any(|&c| c),
            changed(&before, &after, "denoiser.decoder.").iter().any(|&c| c),
        )
    };
    assert_eq!(run(Ablation::FreezeAll), (false, false));
    assert_eq!(run(Ablation::UnfreezeAll), (true, true));
    assert_eq!(run(Ablation::UnfreezeEncoder), (true, false));
}

#[test]
fn phase_assignment() {
    let cfg = config(3, 2, Ablations::none());
    let phases: Vec<Phase> = (0..5).map(|i| cfg.phase_at(i)).collect();
    assert_eq!(phases, [Phase::One, Phase::One, Phase::One, Phase::Two, Phase::Two]);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(config(2, 3, Ablations::none()));
    let ckpt = t.run(None).unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_checkpoint(&a, &ckpt).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.meta, ckpt.meta);
}

#[test]
fn truncated_checkpoints_are_format_errors() {
    let mut t = trainer(config(1, 1, Ablations::none()));
    let bytes = t.run(None).unwrap().to_bytes().unwrap();
    for cut in [0, 4, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Format { .. }) => {}
            other => panic!("cut at {cut}: {:?}", other.map(|_| ())),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing.bin")), Err(Error::Io { .. })));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = config(3, 5, Ablations::none());
    let mut full = trainer(cfg.clone());
    let whole = full.run(None).unwrap();

    let mut first = trainer(cfg);
    for _ in 0..4 {
        first.step().unwrap();
    }
    let mid = Checkpoint::from_bytes(&first.checkpoint().to_bytes().unwrap()).unwrap();
    let data = TrainData::from_pairs(&pairs(4), &ModelConfig::micro()).unwrap();
    let mut second = Trainer::resume(&mid, data).unwrap();
    assert_eq!(second.iter(), 4);
    let resumed = second.run(None).unwrap();
    assert_eq!(resumed.to_bytes().unwrap(), whole.to_bytes().unwrap());

    let tail: Vec<f32> = full.history()[4..].iter().map(|r| r.loss).collect();
    let again: Vec<f32> = second.history().iter().map(|r| r.loss).collect();
    assert_eq!(tail, again);
}

#[test]
fn loss_csv_is_deterministic_and_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..config(2, 3, Ablations::none())
    };
    let mut a = trainer(cfg.clone());
    a.run(Some(dir.path())).unwrap();
    let mut b = trainer(cfg);
    b.run(None).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv, b.loss_csv());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LOSS_CSV_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("0,1,"));
    assert!(lines[5].starts_with("4,2,"));
    assert!(dir.path().join("final.bin").exists());
    assert!(dir.path().join("ckpt_0000002.bin").exists());
    assert!(dir.path().join("ckpt_0000004.bin").exists());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let mcfg = ModelConfig::micro();
    let cfg = config(2, 2, Ablations::none());
    let mut model = RestorationModel::new(mcfg.clone(), Ablations::none(), 1).unwrap();
    model.params_mut().value_mut("denoiser.decoder.out.bias").unwrap().data_mut()[0] = f32::NAN;
    let data = TrainData::from_pairs(&pairs(2), &mcfg).unwrap();
    let mut t = Trainer::new(model, data, cfg).unwrap();
    match t.run(Some(dir.path())) {
        Err(Error::NonFiniteLoss { iter }) => assert_eq!(iter, 0),
        other => panic!("expected NaN abort, got {:?}", other.map(|_| ())),
    }
    let diag = load_checkpoint(&dir.path().join("diagnostic.bin")).unwrap();
    assert!(diag.meta.diagnostic.is_some());
    assert!(!dir.path().join("final.bin").exists());
}

#[test]
fn training_rejects_bad_configs() {
    let mcfg = ModelConfig::micro();
    let data = || TrainData::from_pairs(&pairs(1), &mcfg).unwrap();
    let model = || RestorationModel::new(mcfg.clone(), Ablations::none(), 1).unwrap();
    let bad = TrainConfig {
        lr0: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(Trainer::new(model(), data(), bad), Err(Error::Config(_))));
    let mismatched = config(1, 1, [Ablation::FreezeAll].into_iter().collect());
    assert!(Trainer::new(model(), data(), mismatched).is_err());
    let wrong_size = vec![(Image8::filled(8, 8, [0; 3]), Image8::filled(8, 8, [0; 3]))];
    assert!(TrainData::from_pairs(&wrong_size, &mcfg).is_err());
}
