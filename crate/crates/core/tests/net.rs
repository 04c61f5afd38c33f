use bfr_core::diffusion::EpsilonModel;
use bfr_core::net::*;
use bfr_core::{Graph, Graph64, ParamStore, Tensor32, Tensor64, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Add N(0, std²) noise to every parameter whose name starts with `prefix`.
fn perturb(store: &mut ParamStore<f64>, prefix: &str, std: f64, seed: u64) {
    let mut r = rng(seed);
    for (name, p) in store.iter_mut() {
        if name.starts_with(prefix) {
            let noise = Tensor64::randn(p.value.shape().to_vec(), std, &mut r);
            for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
}

fn zero(store: &mut ParamStore<f64>, prefix: &str) {
    for (name, p) in store.iter_mut() {
        if name.starts_with(prefix) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn model(cfg: &ModelConfig, abl: Ablations) -> RestorationModel<f64> {
    RestorationModel::new(cfg.clone(), abl, 5).unwrap()
}

fn inputs(cfg: &ModelConfig, n: usize, seed: u64) -> (Tensor64, Tensor64) {
    let mut r = rng(seed);
    let z = Tensor64::randn(cfg.latent_shape(n).to_vec(), 1.0, &mut r);
    let s = cfg.image_size;
    let x = Tensor64::uniform(vec![n, 3, s, s], 1.0, &mut r);
    (z, x)
}

#[test]
fn codec_round_trip_is_bit_exact_on_random_images() {
    let mut r = rng(1);
    for i in 0..100 {
        let f = [1, 2, 4, 8][i % 4];
        let (h, w) = (f * r.random_range(1..5), f * r.random_range(1..5));
        let x = Tensor32::uniform(vec![3, h, w], 1.0, &mut r);
        let z = latent_encode(&x, f).unwrap();
        assert_eq!(z.shape(), [3 * f * f, h / f, w / f]);
        assert_eq!(latent_decode(&z, f).unwrap(), x);
        // Pure rearrangement: same multiset of values.
        let sorted = |t: &Tensor32| {
            let mut v = t.data().to_vec();
            v.sort_by(f32::total_cmp);
            v
        };
        assert_eq!(sorted(&x), sorted(&z));
    }
}

#[test]
fn codec_channel_layout() {
    // 1 channel of 4×4, f = 2: latent channel dy·2 + dx holds x[2i+dy, 2j+dx].
    let x = Tensor32::new(vec![1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
    let z = latent_encode(&x, 2).unwrap();
    assert_eq!(z.shape(), [1, 4, 2, 2]);
    for dy in 0..2 {
        for dx in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let got = z.data()[(dy * 2 + dx) * 4 + i * 2 + j];
                    assert_eq!(got, ((2 * i + dy) * 4 + 2 * j + dx) as f32);
                }
            }
        }
    }
    assert!(latent_encode(&Tensor32::zeros(vec![3, 6, 8]), 4).is_err());
}

#[test]
fn sinusoid_table_values() {
    let t = sinusoid_table::<f64>(&[0, 7], 8).unwrap();
    assert_eq!(t.shape(), [2, 8]);
    assert_eq!(&t.data()[..8], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    for i in 0..4 {
        let w = 10000f64.powf(-(i as f64) / 4.0);
        assert!((t.data()[8 + i] - (7.0 * w).sin()).abs() < 1e-12);
        assert!((t.data()[12 + i] - (7.0 * w).cos()).abs() < 1e-12);
    }
}

#[test]
fn transformer_block_is_identity_at_init() {
    for cfg in [ModelConfig::micro(), ModelConfig::default()] {
        let m = model(&cfg, Ablations::none());
        let mut g = Graph::new();
        let side = cfg.latent_size();
        let x = Tensor64::randn(vec![2, cfg.base_channels, side, side], 1.0, &mut rng(2));
        let mut net = Net::new(m.params(), &mut g);
        let emb = net.time_embed("sdrm.time_embed", &[3, 900], cfg.time_dim).unwrap();
        let xv = net.g.constant(x.clone());
        for k in 0..num_taps(cfg.levels) {
            let y = net.transformer_block(&format!("mfem.block{k}"), xv, emb, cfg.heads).unwrap();
            assert_eq!(net.g.value(y), &x);
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = ModelConfig::micro();
    let mut m = model(&cfg, Ablations::none());
    perturb(m.params_mut(), "mfem.block0", 0.5, 3);
    let mut g = Graph::new();
    let mut net = Net::new(m.params(), &mut g);
    let emb = net.time_embed("sdrm.time_embed", &[10], cfg.time_dim).unwrap();
    let x = net.g.constant(Tensor64::randn(vec![1, 8, 4, 4], 1.0, &mut rng(4)));
    let (_, attn) = net.transformer_block_traced("mfem.block0", x, emb, 2).unwrap();
    let a = net.g.value(attn);
    assert_eq!(a.shape(), [1, 2, 4, 4]);
    for row in a.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn layer_norm(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) / (var + 1e-5).sqrt()).collect()
}

/// `y = x·W + b` with `W` stored `[in, out]`.
fn linear(x: &[f64], w: &Tensor64, b: &Tensor64) -> Vec<f64> {
    let out = w.shape()[1];
    (0..out)
        .map(|o| b.data()[o] + x.iter().enumerate().map(|(i, v)| v * w.data()[i * out + o]).sum::<f64>())
        .collect()
}

/// 1×1 conv on a single pixel, `W: [out, in, 1, 1]`.
fn pointwise(x: &[f64], w: &Tensor64, b: &Tensor64) -> Vec<f64> {
    let cin = w.shape()[1];
    (0..w.shape()[0])
        .map(|o| b.data()[o] + (0..cin).map(|i| w.data()[o * cin + i] * x[i]).sum::<f64>())
        .collect()
}

/// Depthwise 3×3 on a 1×1 map with zero padding: only the centre tap.
fn depthwise_centre(x: &[f64], w: &Tensor64, b: &Tensor64) -> Vec<f64> {
    (0..x.len()).map(|c| w.data()[c * 9 + 4] * x[c] + b.data()[c]).collect()
}

#[test]
fn transformer_block_matches_hand_rolled_single_head() {
    let (c, td) = (2usize, 3usize);
    let mut r = rng(6);
    let mut store = ParamStore::<f64>::new();
    let mut put = |name: &str, shape: &[usize]| {
        store.insert(format!("b.{name}"), Tensor64::randn(shape.to_vec(), 0.7, &mut r)).unwrap();
    };
    put("affine.l1.weight", &[td, td]);
    put("affine.l1.bias", &[td]);
    put("affine.l2.weight", &[td, 6 * c]);
    put("affine.l2.bias", &[6 * c]);
    put("qkv.weight", &[3 * c, c, 1, 1]);
    put("qkv.bias", &[3 * c]);
    put("qkv_dw.weight", &[3 * c, 1, 3, 3]);
    put("qkv_dw.bias", &[3 * c]);
    put("proj.weight", &[c, c, 1, 1]);
    put("proj.bias", &[c]);
    put("ffn_in.weight", &[6 * c, c, 1, 1]);
    put("ffn_in.bias", &[6 * c]);
    put("ffn_dw.weight", &[4 * c, 1, 3, 3]);
    put("ffn_dw.bias", &[4 * c]);
    put("ffn_out.weight", &[c, 2 * c, 1, 1]);
    put("ffn_out.bias", &[c]);
    store.insert("b.alpha", Tensor64::from_f64(vec![1, 1, 1], &[0.6]).unwrap()).unwrap();
    let p = |n: &str| store.value(&format!("b.{n}")).unwrap().clone();

    let x = [0.9, -0.4];
    let emb = [0.3, -1.2, 0.5];
    let mut g: Graph64 = Graph::new();
    let (xv, ev): (Var, Var) = (
        g.constant(Tensor64::from_f64(vec![1, c, 1, 1], &x).unwrap()),
        g.constant(Tensor64::from_f64(vec![1, td], &emb).unwrap()),
    );
    let mut net = Net::new(&store, &mut g);
    let (y, _) = net.transformer_block_traced("b", xv, ev, 1).unwrap();
    let got = g.value(y).data().to_vec();

    let e: Vec<f64> = emb.iter().map(|&v| silu(v)).collect();
    let e: Vec<f64> = linear(&e, &p("affine.l1.weight"), &p("affine.l1.bias")).into_iter().map(silu).collect();
    let m = linear(&e, &p("affine.l2.weight"), &p("affine.l2.bias"));
    let (a1, b1, g1, a2, b2, g2) = (&m[0..2], &m[2..4], &m[4..6], &m[6..8], &m[8..10], &m[10..12]);
    let ln = layer_norm(&x);
    let f2: Vec<f64> = (0..c).map(|i| a1[i] * (1.0 + ln[i]) + b1[i]).collect();
    let qkv = pointwise(&f2, &p("qkv.weight"), &p("qkv.bias"));
    let qkv = depthwise_centre(&qkv, &p("qkv_dw.weight"), &p("qkv_dw.bias"));
    let (q, k, v) = (&qkv[0..2], &qkv[2..4], &qkv[4..6]);
    let mut o = vec![0.0; c];
    for i in 0..c {
        let s: Vec<f64> = (0..c).map(|j| q[i] * k[j] / 0.6).collect();
        let mx = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
        o[i] = (0..c).map(|j| (s[j] - mx).exp() / z * v[j]).sum();
    }
    let o = pointwise(&o, &p("proj.weight"), &p("proj.bias"));
    let f3: Vec<f64> = (0..c).map(|i| x[i] + g1[i] * o[i]).collect();
    let ln = layer_norm(&f3);
    let f4: Vec<f64> = (0..c).map(|i| a2[i] * (1.0 + ln[i]) + b2[i]).collect();
    let hidden = pointwise(&f4, &p("ffn_in.weight"), &p("ffn_in.bias"));
    let front = depthwise_centre(&hidden[..4 * c], &p("ffn_dw.weight"), &p("ffn_dw.bias"));
    let gate: Vec<f64> = (0..2 * c)
        .map(|i| gelu(front[i]) * front[2 * c + i] * gelu(hidden[4 * c + i]))
        .collect();
    let ffn = pointwise(&gate, &p("ffn_out.weight"), &p("ffn_out.bias"));
    for i in 0..c {
        let want = f3[i] + g2[i] * ffn[i];
        assert!((got[i] - want).abs() < 1e-12, "channel {i}: {} vs {want}", got[i]);
    }
}

#[test]
fn sdrm_output_shape_and_noise_conv() {
    let cfg = ModelConfig::micro();
    let abl = Ablations::none();
    let mut m = model(&cfg, abl.clone());
    let (z1, x) = inputs(&cfg, 2, 7);
    let z2 = Tensor64::randn(z1.shape().to_vec(), 1.0, &mut rng(8));
    let run = |m: &RestorationModel<f64>, z: &Tensor64| {
        let mut g = Graph::new();
        let (zv, xv) = (g.constant(z.clone()), g.constant(x.clone()));
        let mut net = Net::new(m.params(), &mut g);
        let emb = net.time_embed("sdrm.time_embed", &[1, 2], cfg.time_dim).unwrap();
        let f = net.sdrm(&cfg, &abl, xv, zv, emb).unwrap();
        g.value(f).clone()
    };
    let a = run(&m, &z1);
    assert_eq!(a.shape(), [2, cfg.base_channels, 4, 4]);
    assert_ne!(a, run(&m, &z2));
    zero(m.params_mut(), "sdrm.noise");
    assert_eq!(run(&m, &z1), run(&m, &z2));
}

fn mfem_outputs(m: &RestorationModel<f64>, t: usize, side: usize) -> Vec<Tensor64> {
    let cfg = m.config().clone();
    let mut g = Graph::new();
    let f1 = g.constant(Tensor64::randn(vec![1, cfg.base_channels, side, side], 1.0, &mut rng(9)));
    let mut net = Net::new(m.params(), &mut g);
    let emb = net.time_embed("sdrm.time_embed", &[t], cfg.time_dim).unwrap();
    let outs = net.mfem(&cfg, m.ablations(), f1, emb).unwrap();
    outs.iter().map(|&v| g.value(v).clone()).collect()
}

#[test]
fn mfem_emits_one_feature_per_block_at_unet_resolutions() {
    let cfg = ModelConfig {
        base_channels: 8,
        ..ModelConfig::default()
    };
    let m = model(&cfg, Ablations::none());
    let outs = mfem_outputs(&m, 5, 16);
    let sides: Vec<usize> = outs.iter().map(|o| o.shape()[2]).collect();
    assert_eq!(sides, [16, 8, 4, 4, 4, 8, 16]);
    assert!(outs.iter().all(|o| o.shape()[1] == 8));
}

#[test]
fn mfem_depends_on_t_once_modulation_is_trained() {
    let cfg = ModelConfig::micro();
    let mut m = model(&cfg, Ablations::none());
    perturb(m.params_mut(), "mfem.block", 0.3, 10);
    assert_ne!(mfem_outputs(&m, 10, 4), mfem_outputs(&m, 800, 4));

    let abl: Ablations = [Ablation::MfemNoTime].into_iter().collect();
    let mut m = model(&cfg, abl);
    perturb(m.params_mut(), "mfem.block", 0.3, 10);
    assert_eq!(mfem_outputs(&m, 10, 4), mfem_outputs(&m, 800, 4));
}

fn prompt(m: &RestorationModel<f64>, t: usize) -> (Tensor64, Option<Tensor64>) {
    let cfg = m.config().clone();
    let mut g = Graph::new();
    let mut net = Net::new(m.params(), &mut g);
    let emb = net.time_embed("sdrm.time_embed", &[t], cfg.time_dim).unwrap();
    let (p, w) = net.ttpm_traced(&cfg, m.ablations(), emb).unwrap();
    (g.value(p).clone(), w.map(|w| g.value(w).clone()))
}

#[test]
fn prompt_is_t_independent_at_init_and_t_dependent_after_training() {
    let cfg = ModelConfig::micro();
    let mut m = model(&cfg, Ablations::none());
    let (p0, w) = prompt(&m, 0);
    assert_eq!(p0.shape(), [1, cfg.prompt_len, cfg.prompt_dim]);
    assert_eq!(p0, prompt(&m, 999).0);
    // Attention over a single time token is exactly 1.
    assert!(w.unwrap().data().iter().all(|&v| v == 1.0));

    perturb(m.params_mut(), "ttpm.attn.out", 0.5, 11);
    assert_ne!(prompt(&m, 0).0, prompt(&m, 999).0);
}

#[test]
fn fixed_prompt_returns_p() {
    let cfg = ModelConfig::micro();
    let m = model(&cfg, [Ablation::FixedPrompt].into_iter().collect());
    let (p, w) = prompt(&m, 3);
    assert!(w.is_none());
    assert_eq!(p.data(), m.params().value("ttpm.P").unwrap().data());
}

#[test]
fn denoiser_output_is_zero_at_init() {
    for cfg in [ModelConfig::micro(), ModelConfig::default()] {
        let m = model(&cfg, Ablations::none());
        let (z, x) = inputs(&cfg, 2, 12);
        let eps = m.predict_eps(&z, &[0, 999], &x).unwrap();
        assert_eq!(eps.shape(), z.shape());
        assert!(eps.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn shapes_across_factors_and_depths() {
    for f in [2, 4] {
        for levels in [2, 3] {
            let cfg = ModelConfig {
                image_size: 16,
                latent_factor: f,
                base_channels: 8,
                levels,
                heads: 2,
                time_dim: 8,
                prompt_len: 2,
                prompt_dim: 4,
                timesteps: 1000,
            };
            let mut m = model(&cfg, Ablations::none());
            perturb(m.params_mut(), "denoiser.decoder.out", 0.1, 13);
            let (z, x) = inputs(&cfg, 1, 14);
            let eps = m.predict_eps(&z, &[500], &x).unwrap();
            assert_eq!(eps.shape(), [1, 3 * f * f, 16 / f, 16 / f], "f={f} levels={levels}");
            assert!(eps.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn zeroed_taps_disconnect_the_lq_image() {
    let cfg = ModelConfig::micro();
    let mut m = model(&cfg, Ablations::none());
    perturb(m.params_mut(), "denoiser", 0.2, 15);
    let (z, x1) = inputs(&cfg, 1, 16);
    let x2 = Tensor64::uniform(x1.shape().to_vec(), 1.0, &mut rng(17));
    let a = m.predict_eps(&z, &[300], &x1).unwrap();
    assert_ne!(a, m.predict_eps(&z, &[300], &x2).unwrap());
    zero(m.params_mut(), "mfem.tap");
    let a = m.predict_eps(&z, &[300], &x1).unwrap();
    assert_eq!(a, m.predict_eps(&z, &[300], &x2).unwrap());
}

#[test]
fn every_ablation_builds_and_runs() {
    let cfg = ModelConfig::micro();
    for flag in [
        Ablation::PixelUnshuffleSdrm,
        Ablation::NoNoiseZt,
        Ablation::ResblockMfem,
        Ablation::MfemNoTime,
        Ablation::TtpmNoTime,
        Ablation::FixedPrompt,
        Ablation::NoPretrained,
        Ablation::FreezeAll,
        Ablation::UnfreezeAll,
        Ablation::UnfreezeEncoder,
    ] {
        let mut m = model(&cfg, [flag].into_iter().collect());
        perturb(m.params_mut(), "", 0.1, 18);
        let (z, x) = inputs(&cfg, 1, 19);
        let eps = m.predict_eps(&z, &[42], &x).unwrap();
        assert!(eps.data().iter().all(|v| v.is_finite()), "{flag}");
        let has = |n: &str| m.params().contains(n);
        match flag {
            Ablation::PixelUnshuffleSdrm => assert!(has("sdrm.unshuffle.weight") && !has("sdrm.enc0.weight")),
            Ablation::NoNoiseZt => assert!(!has("sdrm.noise.weight")),
            Ablation::ResblockMfem => assert!(has("mfem.block0.conv1.weight") && !has("mfem.block0.qkv.weight")),
            Ablation::TtpmNoTime => assert!(!has("ttpm.attn.q.weight") && has("ttpm.mlp.l1.weight")),
            Ablation::FixedPrompt => assert!(!has("ttpm.mlp.l1.weight")),
            _ => {}
        }
    }
}

#[test]
fn no_noise_zt_ignores_the_latent_in_sdrm() {
    let cfg = ModelConfig::micro();
    let abl: Ablations = [Ablation::NoNoiseZt].into_iter().collect();
    let m = model(&cfg, abl.clone());
    let (z1, x) = inputs(&cfg, 1, 20);
    let z2 = Tensor64::randn(z1.shape().to_vec(), 1.0, &mut rng(21));
    let run = |z: &Tensor64| {
        let mut g = Graph::new();
        let (zv, xv) = (g.constant(z.clone()), g.constant(x.clone()));
        let mut net = Net::new(m.params(), &mut g);
        let emb = net.time_embed("sdrm.time_embed", &[1], cfg.time_dim).unwrap();
        let f = net.sdrm(&cfg, &abl, xv, zv, emb).unwrap();
        g.value(f).clone()
    };
    assert_eq!(run(&z1), run(&z2));
}

#[test]
fn model_input_errors() {
    let cfg = ModelConfig::micro();
    let m = model(&cfg, Ablations::none());
    let (z, x) = inputs(&cfg, 1, 22);
    assert!(matches!(m.predict_eps(&z, &[1000], &x), Err(bfr_core::Error::Usage(_))));
    let bad_x = Tensor64::zeros(vec![1, 3, 8, 8]);
    assert!(matches!(m.predict_eps(&z, &[1], &bad_x), Err(bfr_core::Error::Dimension(_))));
    let bad_z = Tensor64::zeros(vec![1, 48, 2, 2]);
    assert!(matches!(m.predict_eps(&bad_z, &[1], &x), Err(bfr_core::Error::Dimension(_))));
    let conflicting: Ablations = [Ablation::FreezeAll, Ablation::UnfreezeAll].into_iter().collect();
    assert!(RestorationModel::<f64>::new(cfg.clone(), conflicting, 0).is_err());
    let reloaded = RestorationModel::from_params(cfg.clone(), Ablations::none(), m.params().clone()).unwrap();
    assert_eq!(reloaded.params().len(), m.params().len());
    let other = ModelConfig { base_channels: 4, ..cfg };
    assert!(RestorationModel::from_params(other, Ablations::none(), m.params().clone()).is_err());
}
