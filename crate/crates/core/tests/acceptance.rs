//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure. Runs under `cargo test` with its own harness.

mod common;

use std::path::Path;
use std::time::Instant;

use common::*;
use lic::codec::{decode, encode, infill, make_linear_codec, CodecSpec, MlpCodec};
use lic::container::Tensor;
use lic::flow_prior::{flow_loss, flow_loss_and_grad, velocity, FlowMlp, GaussianPrior, VelocityModel};
use lic::geometry::{
    make_trajectory, render_points, unproject, warp_video, CameraIntrinsics, CameraTrajectory, PointCloud,
    RigidTransform, TrajectoryKind, EPS_Z,
};
use lic::latent_mask::{
    binary_downsample_mask, latent_mask_training_free, latent_mask_training_free_with, mask_encoder_forward,
    mask_loss, mask_loss_and_grad, train_mask_encoder, MaskActivation, MaskEncoder, MaskPair,
};
use lic::metrics::masked_psnr;
use lic::nn::{relative_error, TrainingConfig};
use lic::solver::{
    data_consistency, sample_latent_posterior, solve_latent_inpaint, solve_pixel_dds, ConsistencyBackend,
    ConsistencyProblem, MaskSource, SolverConfig,
};
use lic::synthdata::{gen_moving_shapes, Background, Layer, SceneSpec, Shape, Texture};
use lic::tensor::{DepthMap, Latent, LatentMask, PixelMask, Plane, Video};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn c01_cg_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst50, mut worst5) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = 4096;
        let h: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let w = normal(&mut r, n);
        let z0 = normal(&mut r, n);
        let exact: Vec<f64> = (0..n).map(|i| (z0[i] + h[i] * w[i]) / (1.0 + h[i] * h[i])).collect();
        let p = ConsistencyProblem { h: &h, w: &w, z0: &z0 };
        worst50 = worst50.max(rel_l2(&p.solve_cg(1.0, 50, 0.0).map_err(|e| e.to_string())?.x, &exact));
        worst5 = worst5.max(rel_l2(&p.solve_cg(1.0, 5, 0.0).map_err(|e| e.to_string())?.x, &exact));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst50 <= 1e-6 && worst5 <= 1e-2 && secs < 5.0,
        format!("max rel L2 K=50 {worst50:.2e}, K=5 {worst5:.2e}, {secs:.2} s"),
    )
}

fn c02_prox_descent() -> Outcome {
    let mut r = rng(2);
    let mut failures = 0;
    for i in 0..1000 {
        let n = r.random_range(1..200);
        let h: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let w = normal(&mut r, n);
        let z0 = normal(&mut r, n);
        let cfg = SolverConfig {
            gamma: 10f64.powf(r.random_range(-2.0..2.0)),
            cg_iters: r.random_range(1..8),
            backend: if i % 2 == 0 { ConsistencyBackend::Cg } else { ConsistencyBackend::ClosedForm },
            ..SolverConfig::default()
        };
        let p = ConsistencyProblem { h: &h, w: &w, z0: &z0 };
        let z = data_consistency(&p, &cfg).map_err(|e| e.to_string())?;
        if p.objective(&z, cfg.gamma) > p.objective(&z0, cfg.gamma) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures}/1000 instances increased the objective"))
}

fn c03_gaussian_posterior() -> Outcome {
    let start = Instant::now();
    let d = 16;
    let mut r = rng(3);
    let mean: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..d).map(|_| r.random_range(0.25..2.0)).collect();
    let h: Vec<f64> = (0..d).map(|i| if i % 4 == 0 { 0.0 } else { r.random_range(0.25..1.0) }).collect();
    let w = normal(&mut r, d);
    // Large γ makes the conjugate mean approach w/h, the fixed point the
    // repeated prox drives observed coordinates to; h = 0 coordinates follow
    // the prior exactly.
    let gamma = 1e12;
    let model = VelocityModel::GaussianAnalytic(GaussianPrior::new(mean.clone(), var.clone()).map_err(|e| e.to_string())?);
    let runs = 256;
    let mut samples = vec![vec![0.0; runs]; d];
    for s in 0..runs {
        let cfg = SolverConfig {
            alpha: 1.0,
            gamma,
            cg_iters: d,
            steps: 100,
            seed: 1000 + s as u64,
            ..SolverConfig::default()
        };
        let (z, _) = sample_latent_posterior(&model, &h, &w, &cfg).map_err(|e| e.to_string())?;
        for i in 0..d {
            samples[i][s] = z[i];
        }
    }
    let mut worst = 0.0f64;
    for i in 0..d {
        let post = (mean[i] / var[i] + gamma * h[i] * w[i]) / (1.0 / var[i] + gamma * h[i] * h[i]);
        let m = samples[i].iter().sum::<f64>() / runs as f64;
        let sd = (samples[i].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
        let se = sd / (runs as f64).sqrt();
        worst = worst.max((m - post).abs() / (3.0 * se + 1e-8));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1.0 && secs < 120.0,
        format!("worst |mean − posterior| / (3 SE + 1e-8) = {worst:.3}, {secs:.2} s"),
    )
}

fn c04_velocity_monte_carlo() -> Outcome {
    let (mu, var) = (3.0f64, 0.5f64);
    let prior = GaussianPrior::new(vec![mu], vec![var]).map_err(|e| e.to_string())?;
    let model = VelocityModel::GaussianAnalytic(prior);
    let mut r = rng(4);
    let n = 100_000;
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 0.75] {
        let mut xt = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for _ in 0..n {
            let x0 = mu + var.sqrt() * r.sample::<f64, _>(StandardNormal);
            let x1: f64 = r.sample(StandardNormal);
            xt.push((1.0 - t) * x0 + t * x1);
            target.push(x1 - x0);
        }
        let mx = xt.iter().sum::<f64>() / n as f64;
        let my = target.iter().sum::<f64>() / n as f64;
        let sxy: f64 = xt.iter().zip(&target).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = xt.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let sd = (sxx / n as f64).sqrt();
        for z in [mx - sd, mx, mx + sd] {
            let mc = my + slope * (z - mx);
            let v = velocity(&model, &[z], t).map_err(|e| e.to_string())?[0];
            worst = worst.max((v - mc).abs() / mc.abs());
        }
    }
    check(worst <= 0.01, format!("max relative deviation {:.3}%", worst * 100.0))
}

fn c05_codec_identities() -> Outcome {
    let mut worst_ed = 0.0f64;
    let mut worst_de = 0.0f64;
    let mut worst_gram = 0.0f64;
    let mut r = rng(5);
    for (rt, rs, c) in [(2, 4, 12), (1, 2, 12), (2, 2, 5), (2, 4, 96)] {
        let spec = make_linear_codec::<f64>(rt, rs, c).map_err(|e| e.to_string())?;
        worst_gram = worst_gram.max(spec.gram_error().unwrap());
        let x = random_video(&mut r, 4, 8, 8);
        let dims = spec.latent_dims(4, 8, 8).unwrap();
        let z = Latent::from_vec(dims, normal(&mut r, dims.len())).unwrap();
        let ed = encode(&spec, &decode(&spec, &z).unwrap()).unwrap();
        worst_ed = worst_ed.max(ed.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let de = decode(&spec, &encode(&spec, &x).unwrap()).unwrap();
        let dede = decode(&spec, &encode(&spec, &de).unwrap()).unwrap();
        worst_de = worst_de.max(de.data().iter().zip(dede.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(
        worst_ed <= 1e-6 && worst_de <= 1e-6 && worst_gram <= 1e-9,
        format!("E∘D {worst_ed:.1e}, D∘E idempotence {worst_de:.1e}, Gram {worst_gram:.1e}"),
    )
}

/// Top-left nearest neighbor per block, AND over each frame group.
fn brute_binary(m: &PixelMask, rt: usize, rs: usize, c: usize) -> Vec<f64> {
    let (f, h, w) = m.dims();
    let (lf, lh, lw) = (f / rt, h / rs, w / rs);
    let mut out = vec![0.0; c * lf * lh * lw];
    for ch in 0..c {
        for t in 0..lf {
            for y in 0..lh {
                for x in 0..lw {
                    let mut all = true;
                    for dt in 0..rt {
                        all &= m.get(t * rt + dt, y * rs, x * rs);
                    }
                    out[((ch * lf + t) * lh + y) * lw + x] = if all { 1.0 } else { 0.0 };
                }
            }
        }
    }
    out
}

fn c06_mask_invariants() -> Outcome {
    let mut r = rng(6);
    let spec = linear_codec();
    let mut ones_ok = true;
    let mut range_ok = true;
    for s in 0..10 {
        let x = if s % 2 == 0 { random_video(&mut r, 8, 16, 16) } else { scene(s, 3).0 };
        let h = latent_mask_training_free(&x, &PixelMask::ones(8, 16, 16), &spec).unwrap();
        ones_ok &= h.values().iter().all(|&v| v == 1.0);
        let m = random_mask(&mut r, 8, 16, 16, 0.7);
        for act in [MaskActivation::Exponential, MaskActivation::Gaussian, MaskActivation::Rational] {
            let h = latent_mask_training_free_with(&x, &m, &spec, act).unwrap();
            range_ok &= h.values().iter().all(|v| (0.0..=1.0).contains(v));
        }
        let b = binary_downsample_mask(&m, &spec).unwrap();
        range_ok &= b.values().iter().all(|v| (0.0..=1.0).contains(v));
        let enc = MaskEncoder::<f64>::init(2, 4, 12, s);
        let p = mask_encoder_forward(&enc, &x.masked(&m).unwrap(), &m).unwrap();
        range_ok &= p.values().iter().all(|v| (0.0..=1.0).contains(v));
    }
    let mut binary_cases = 0;
    let mut binary_ok = true;
    for (rt, rs) in [(1, 1), (1, 2), (2, 2), (2, 4), (4, 4), (8, 16), (4, 8)] {
        let spec = make_linear_codec::<f64>(rt, rs, 3).unwrap();
        for _ in 0..20 {
            let f = rt * r.random_range(1..=8 / rt);
            let h = rs * r.random_range(1..=16 / rs);
            let w = rs * r.random_range(1..=16 / rs);
            let p = r.random_range(0.3..0.95);
            let m = random_mask(&mut r, f, h, w, p);
            let got = binary_downsample_mask(&m, &spec).unwrap();
            binary_ok &= got.values() == brute_binary(&m, rt, rs, 3).as_slice();
            binary_cases += 1;
        }
    }
    check(
        ones_ok && range_ok && binary_ok,
        format!("ones→1 {ones_ok}, range {range_ok}, binary brute force {binary_ok} on {binary_cases} grids"),
    )
}

/// Masked-region PSNR of `D(h ⊙ E(infill(m ⊙ x)))` against `x`.
fn reconstruction_psnr(x: &Video<f64>, m: &PixelMask, h: &LatentMask<f64>, spec: &CodecSpec<f64>) -> f64 {
    let w = encode(spec, &infill(&x.masked(m).unwrap(), m).unwrap()).unwrap();
    let rec = decode(spec, &h.apply(&w).unwrap()).unwrap();
    masked_psnr(&rec, x, m).unwrap().db()
}

fn c07_mask_ablation() -> Outcome {
    let spec = linear_codec();
    let (mut cont, mut bin) = (0.0, 0.0);
    let fixtures = 12;
    for s in 0..fixtures {
        let (x, d) = fast_scene(700 + s, 1.5);
        let kind = TrajectoryKind::ALL[s as usize % 6];
        let mag = match kind {
            TrajectoryKind::ZoomIn | TrajectoryKind::ZoomOut => 2.0,
            TrajectoryKind::PanUp | TrajectoryKind::PanDown => 1.2,
            _ => 0.5,
        };
        let m = reproject_mask(&x, &d, kind, mag);
        cont += reconstruction_psnr(&x, &m, &latent_mask_training_free(&x, &m, &spec).unwrap(), &spec);
        bin += reconstruction_psnr(&x, &m, &binary_downsample_mask(&m, &spec).unwrap(), &spec);
    }
    let (cont, bin) = (cont / fixtures as f64, bin / fixtures as f64);

    let build = |seeds: std::ops::Range<u64>| -> Vec<(Video<f64>, PixelMask)> {
        let pool = lic::synthdata::TrajectorySpec::default_pool();
        let mut out = Vec::new();
        for s in seeds {
            let (x, d) = scene(s, 3);
            for t in &pool {
                let m = reproject_mask(&x, &d, t.kind, t.magnitude);
                out.push((x.clone(), m));
            }
        }
        out
    };
    let train: Vec<MaskPair<f64>> = build(0..20).iter().map(|(x, m)| mask_pair(x, m, &spec)).collect();
    let trained = train_mask_encoder(&train, 2, 4, 0.2, &MaskEncoder::<f64>::default_training())
        .map_err(|e| e.to_string())?
        .encoder;
    let held = build(5000..5010);
    let (mut enc_psnr, mut free_psnr) = (0.0, 0.0);
    for (x, m) in &held {
        let p = mask_encoder_forward(&trained, &x.masked(m).unwrap(), m).unwrap();
        enc_psnr += reconstruction_psnr(x, m, &p, &spec);
        free_psnr += reconstruction_psnr(x, m, &latent_mask_training_free(x, m, &spec).unwrap(), &spec);
    }
    let (enc_psnr, free_psnr) = (enc_psnr / held.len() as f64, free_psnr / held.len() as f64);
    check(
        cont - bin >= 0.5 && enc_psnr >= free_psnr,
        format!(
            "fast motion: continuous {cont:.2} dB vs binary {bin:.2} dB (Δ {:.2}); held-out: encoder {enc_psnr:.2} dB vs training-free {free_psnr:.2} dB",
            cont - bin
        ),
    )
}

fn c08_alpha_sweep() -> Outcome {
    let spec = linear_codec();
    let videos: Vec<Video<f64>> = (0..300).map(|s| scene(10_000 + s, 3).0).collect();
    let prior = GaussianPrior::fit(&latents(&spec, &videos)).map_err(|e| e.to_string())?;
    let model = VelocityModel::GaussianAnalytic(prior);
    let (x, _) = scene(42, 3);
    let m = PixelMask::ones(FRAMES, SIZE, SIZE);
    let source = MaskSource::TrainingFree {
        x_src: &x,
        activation: MaskActivation::Exponential,
    };
    let mut psnrs = Vec::new();
    for alpha in [0.0, 0.3, 0.6, 1.0] {
        let cfg = SolverConfig {
            alpha,
            seed: 11,
            ..SolverConfig::default()
        };
        let out = solve_latent_inpaint(&x, &m, &source, &model, &spec, &cfg).map_err(|e| e.to_string())?;
        psnrs.push(masked_psnr(&out.video, &x, &m).unwrap().db());
    }
    let monotone = psnrs.windows(2).all(|p| p[1] >= p[0]);
    check(
        psnrs[2] - psnrs[0] >= 5.0 && monotone,
        format!(
            "PSNR at α = 0, 0.3, 0.6, 1: {:.2}, {:.2}, {:.2}, {:.2} dB",
            psnrs[0], psnrs[1], psnrs[2], psnrs[3]
        ),
    )
}

fn c09_pixel_vs_latent_cost() -> Outcome {
    let spec = linear_codec();
    let (f, s) = (16, 32);
    let x = gen_moving_shapes::<f64>(&SceneSpec::random(9, 3, f, s, s), f, s, s).unwrap().0;
    let mut r = rng(9);
    let m = random_mask(&mut r, f, s, s, 0.8);
    let y = x.masked(&m).unwrap();
    let dims = spec.latent_dims(f, s, s).unwrap();
    let model = VelocityModel::GaussianAnalytic(GaussianPrior::new(vec![0.0; dims.len()], vec![1.0; dims.len()]).unwrap());
    let source = MaskSource::TrainingFree {
        x_src: &x,
        activation: MaskActivation::Exponential,
    };
    let cfg = SolverConfig::default();
    let trials = 5;
    let mut lines = Vec::new();
    let mut ok = true;
    for trial in 0..trials {
        let lat = solve_latent_inpaint(&y, &m, &source, &model, &spec, &cfg).map_err(|e| e.to_string())?;
        let pix = solve_pixel_dds(&y, &m, &model, &spec, &cfg).map_err(|e| e.to_string())?;
        let (a, b) = (lat.timing.per_consistency_step_ms, pix.timing.per_consistency_step_ms);
        ok &= b > a && pix.timing.encode_decode_share > 0.0;
        lines.push(format!("#{trial} latent {a:.4} ms, pixel {b:.4} ms (codec share {:.2})", pix.timing.encode_decode_share));
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    cli_fixture(dir);
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let code = lic::cli::run([
        "lic", "ablate", "--sweep", "dds", "--trials", "3", "--video", &p("video.bt"), "--depth", &p("depth.bt"),
        "--traj", &p("traj.json"), "--codec", &p("codec"), "--flow", &p("flow"), "--out", &p("ablate"),
    ]);
    if code != 0 {
        return Err(format!("ablate exited with {code}"));
    }
    let report: lic::metrics::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ablate/report.json")).unwrap()).unwrap();
    for pair in report.entries.chunks(2) {
        let (lat, pix) = (&pair[0].timing, &pair[1].timing);
        ok &= pix.per_consistency_step_ms > lat.per_consistency_step_ms && pix.encode_decode_share > 0.0;
    }
    let csv = std::fs::read_to_string(dir.join("ablate/ablation.csv")).unwrap();
    ok &= csv.lines().next().unwrap().contains("encode_decode_share") && csv.lines().count() == 7;
    lines.push(format!("CLI ablate report: {} runs, pixel slower in every pair {ok}", report.entries.len()));
    check(ok, lines.join("; "))
}

fn grad_check(
    params: &[f64],
    analytic: &[f64],
    seed: u64,
    mut loss_at: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut r = rng(seed);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in sample(&mut r, params.len(), 64.min(params.len())) {
        let mut p = params.to_vec();
        p[i] = params[i] + eps;
        let up = loss_at(&p);
        p[i] = params[i] - eps;
        let down = loss_at(&p);
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], fd, 1e-7));
    }
    worst
}

fn c10_gradients() -> Outcome {
    let mut r = rng(10);

    let flow = FlowMlp::<f64>::init(8, 24, 1);
    let x0 = Array2::from_shape_vec((6, 8), normal(&mut r, 48)).unwrap();
    let x1 = Array2::from_shape_vec((6, 8), normal(&mut r, 48)).unwrap();
    let t: Vec<f64> = (0..6).map(|_| r.random::<f64>()).collect();
    let (_, g) = flow_loss_and_grad(&flow, &x0, &x1, &t);
    let params = flow.net.flatten();
    let mut probe = flow.clone();
    let flow_err = grad_check(&params, &g, 101, |p| {
        probe.net.load_flat(p).unwrap();
        flow_loss(&probe, &x0, &x1, &t)
    });

    let codec = MlpCodec::<f64>::init(24, 6, 2);
    let patches = Array2::from_shape_fn((10, 24), |_| r.random::<f64>());
    let (_, g) = lic::codec::codec_loss_and_grad(&codec, &patches);
    let params = codec.flatten();
    let mut probe = codec.clone();
    let codec_err = grad_check(&params, &g, 102, |p| {
        probe.load_flat(p).unwrap();
        lic::codec::codec_loss(&probe, &patches)
    });

    let enc = MaskEncoder::<f64>::init(2, 2, 4, 3);
    let x = random_video(&mut r, 4, 8, 8);
    let m = random_mask(&mut r, 4, 8, 8, 0.6);
    let dims = lic::tensor::LatentDims {
        channels: 4,
        frames: 2,
        height: 4,
        width: 4,
    };
    let target = LatentMask::new(Latent::from_vec(dims, (0..dims.len()).map(|_| r.random::<f64>()).collect()).unwrap()).unwrap();
    let pair = MaskPair {
        y: x.masked(&m).unwrap(),
        m,
        h: target,
    };
    let (_, g) = mask_loss_and_grad(&enc, &pair, 0.2).unwrap();
    let params = enc.net.flatten();
    let mut probe = enc.clone();
    let mask_err = grad_check(&params, &g, 103, |p| {
        probe.net.load_flat(p).unwrap();
        mask_loss(&probe, &pair, 0.2).unwrap()
    });

    check(
        flow_err <= 1e-4 && codec_err <= 1e-4 && mask_err <= 1e-4,
        format!("max relative error: flow {flow_err:.1e}, codec {codec_err:.1e}, mask encoder {mask_err:.1e}"),
    )
}

/// Brute-force render: per pixel, the smallest camera depth among points
/// landing on it; ties keep the earliest point.
fn brute_zbuffer(
    cloud: &PointCloud<f64>,
    tf: &RigidTransform<f64>,
    k: &CameraIntrinsics<f64>,
    h: usize,
    w: usize,
) -> Vec<Option<(usize, f64)>> {
    let mut out = vec![None; h * w];
    for py in 0..h {
        for px in 0..w {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in cloud.points.iter().enumerate() {
                let q = tf.apply(*p);
                if q[2] <= EPS_Z {
                    continue;
                }
                let u = (k.fx * q[0] / q[2] + k.cx).round();
                let v = (k.fy * q[1] / q[2] + k.cy).round();
                if u == px as f64 && v == py as f64 && best.is_none_or(|(_, z)| q[2] < z) {
                    best = Some((i, q[2]));
                }
            }
            out[py * w + px] = best;
        }
    }
    out
}

fn c11_geometry() -> Outcome {
    let mut r = rng(11);

    let (f, h, w) = (4, 12, 10);
    let x = random_video(&mut r, f, h, w);
    let d = DepthMap::from_vec(f, h, w, (0..f * h * w).map(|_| r.random_range(0.5..9.0)).collect()).unwrap();
    let k = CameraIntrinsics::centered(12.0, h, w);
    let (y, m) = warp_video(&x, &d, &CameraTrajectory::identity(k, f)).unwrap();
    let roundtrip = y == x && m.count_known() == f * h * w;

    let (size, marker_depth, dz) = (32, 4.0, 1.5);
    let scene = SceneSpec {
        seed: 0,
        background: Background {
            texture: Texture::Flat,
            color: [0.1, 0.1, 0.1],
            color2: [0.1, 0.1, 0.1],
            cell: 1,
            depth: 20.0,
        },
        layers: vec![Layer {
            depth: marker_depth,
            shape: Shape::Rect {
                half_width: 4.0,
                half_height: 3.0,
            },
            color: [0.9, 0.2, 0.2],
            start: [16.0, 16.0],
            velocity: [0.0, 0.0],
        }],
    };
    let (xs, ds) = gen_moving_shapes::<f64>(&scene, 2, size, size).unwrap();
    let k = CameraIntrinsics::centered(size as f64, size, size);
    let traj = make_trajectory(TrajectoryKind::ZoomIn, dz, 2, k, 10.0).unwrap();
    let (warped, _) = warp_video(&xs, &ds, &traj).unwrap();
    let extent = |v: &Video<f64>, t: usize| -> (f64, f64) {
        let (mut xs_, mut ys_) = (Vec::new(), Vec::new());
        for yy in 0..size {
            for xx in 0..size {
                if v.get(t, yy, xx, 0) > 0.5 {
                    xs_.push(xx as f64);
                    ys_.push(yy as f64);
                }
            }
        }
        let span = |s: &[f64]| s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
        (span(&xs_), span(&ys_))
    };
    let (w0, h0) = extent(&xs, 0);
    let (w1, h1) = extent(&warped, 1);
    let mag = marker_depth / (marker_depth - dz);
    let zoom_err = (w1 - w0 * mag).abs().max((h1 - h0 * mag).abs());

    let mut zbuf_ok = true;
    for case in 0..30 {
        let (hh, ww) = (r.random_range(4..=32), r.random_range(4..=32));
        let k = CameraIntrinsics::centered(r.random_range(8.0..40.0), hh, ww);
        let frame = lic::tensor::Frame {
            height: hh,
            width: ww,
            rgb: (0..hh * ww * 3).map(|_| r.random::<f64>()).collect(),
        };
        let depth = Plane {
            height: hh,
            width: ww,
            values: (0..hh * ww).map(|_| r.random_range(0.5..6.0)).collect(),
        };
        let cloud = unproject(&frame, &depth, &k).unwrap();
        let tf = RigidTransform::rotation_y(r.random_range(-0.3..0.3))
            .compose(&RigidTransform::rotation_x(r.random_range(-0.3..0.3)))
            .compose(&RigidTransform::from_translation([
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                if case % 3 == 0 { -0.5 } else { r.random_range(-1.0..2.0) },
            ]));
        let got = render_points(&cloud, &tf, &k, hh, ww);
        for (pix, want) in brute_zbuffer(&cloud, &tf, &k, hh, ww).into_iter().enumerate() {
            let same = match want {
                None => !got.mask.values[pix] && got.source.values[pix].is_none(),
                Some((i, z)) => {
                    got.mask.values[pix]
                        && got.source.values[pix] == Some(i)
                        && got.depth.values[pix] == z
                        && got.frame.pixel(pix % ww, pix / ww) == cloud.colors[i]
                }
            };
            zbuf_ok &= same;
        }
    }
    check(
        roundtrip && zoom_err <= 1.0 && zbuf_ok,
        format!(
            "identity roundtrip {roundtrip}; zoom extent {w0}×{h0} → {w1}×{h1} px, expected ×{mag:.3} (error {zoom_err:.2} px); z-buffer brute force {zbuf_ok}"
        ),
    )
}

fn solve_once(dir: &Path, out: &Path) -> i32 {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    lic::cli::run([
        "lic".to_string(),
        "solve".into(),
        "--video".into(),
        p("video.bt"),
        "--depth".into(),
        p("depth.bt"),
        "--traj".into(),
        p("traj.json"),
        "--codec".into(),
        p("codec"),
        "--flow".into(),
        p("flow"),
        "--seed".into(),
        "5".into(),
        "--steps".into(),
        "20".into(),
        "--out".into(),
        out.to_string_lossy().into_owned(),
    ])
}

/// Writes a source clip, depth, trajectory and checkpoints into `dir`.
fn cli_fixture(dir: &Path) {
    let spec = linear_codec();
    let (x, d) = scene(12, 3);
    Tensor::from_video(&x).write(&dir.join("video.bt")).unwrap();
    Tensor::from_depth(&d).write(&dir.join("depth.bt")).unwrap();
    let traj = serde_json::json!({
        "kind": "arc_left", "magnitude": 0.3, "frames": FRAMES,
        "intrinsics": {"fx": 16.0, "fy": 16.0, "cx": 8.0, "cy": 8.0}
    });
    std::fs::write(dir.join("traj.json"), traj.to_string()).unwrap();
    lic::checkpoint::save_codec(&dir.join("codec"), &spec).unwrap();
    lic::checkpoint::save_flow(&dir.join("flow"), &train_small_flow(&spec)).unwrap();
}

fn c12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    cli_fixture(dir);

    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    if solve_once(dir, &a) != 0 || solve_once(dir, &b) != 0 {
        return Err("solve exited nonzero".into());
    }
    let files = ["measurement.bt", "mask.bt", "output.bt", "latent.bt", "h.bt"];
    let identical = files
        .iter()
        .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());

    let mut r = rng(12);
    let mut bit_exact = true;
    for _ in 0..20 {
        let dims: Vec<usize> = (0..r.random_range(1..5)).map(|_| r.random_range(1..6)).collect();
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect();
        let t = Tensor::new(dims.clone(), data.clone()).unwrap();
        let path = dir.join("rt.bt");
        t.write(&path).unwrap();
        let back = Tensor::read(&path).unwrap();
        bit_exact &= back.dims == dims && back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    check(
        identical && bit_exact,
        format!("solve outputs byte-identical {identical}; container roundtrip bit-exact {bit_exact}"),
    )
}

fn train_small_flow(spec: &CodecSpec<f64>) -> VelocityModel<f64> {
    let videos: Vec<Video<f64>> = (0..16).map(|s| scene(s, 3).0).collect();
    let cfg = TrainingConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainingConfig::default()
    };
    VelocityModel::Mlp(lic::flow_prior::train_flow(&latents(spec, &videos), 32, &cfg).unwrap().model)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("01 cg_oracle", c01_cg_oracle),
        ("02 prox_descent", c02_prox_descent),
        ("03 gaussian_posterior", c03_gaussian_posterior),
        ("04 velocity_monte_carlo", c04_velocity_monte_carlo),
        ("05 codec_identities", c05_codec_identities),
        ("06 mask_invariants", c06_mask_invariants),
        ("07 mask_ablation", c07_mask_ablation),
        ("08 alpha_sweep", c08_alpha_sweep),
        ("09 pixel_vs_latent_cost", c09_pixel_vs_latent_cost),
        ("10 gradients", c10_gradients),
        ("11 geometry", c11_geometry),
        ("12 determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !args.is_empty() && !args.iter().any(|a| name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {name}: PASS ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1} s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
