//! Acceptance suite. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails. Criteria run one after another so each
//! runtime is measured without contention.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsdm_core::diffeo::{integrate_svf, jacobian_determinant, warp_image, DeformationField};
use lsdm_core::emma::{descriptorize, emma_align, EmmaConfig};
use lsdm_core::eval::{evaluate, note, summarize, te};
use lsdm_core::grid::{gaussian_smooth, ScalarField, Vec2Field};
use lsdm_core::io::{decode_lsdf, encode_lsdf, parse_annotations, read_field, read_tracklets, write_field, write_tracklets};
use lsdm_core::motion::{estimate_pair, EnergyModel, MotionConfig};
use lsdm_core::tracker::{correlate, FeatureMap, TrackPoint, Tracklet};
use lsdm_core::Error;

struct Outcome {
    ok: bool,
    detail: String,
}

fn line(text: &str) {
    // Written past the test harness capture so the lines always reach the log.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn run(n: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let mut o = f();
    let took = t0.elapsed();
    if let Some(b) = budget {
        if took > b {
            o.ok = false;
            o.detail.push_str(&format!("; over budget {:.0}s", b.as_secs_f64()));
        }
    }
    let tag = if o.ok { "PASS" } else { "FAIL" };
    line(&format!("criterion {n:>2} {tag}  {name}: {} [{:.1}s]", o.detail, took.as_secs_f64()));
    o.ok
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn texture(w: usize, h: usize, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = ScalarField::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let s = gaussian_smooth(&raw, 2.0);
    let (lo, hi) = s.min_max();
    s.map(|v| (v - lo) / (hi - lo))
}

fn smooth_velocity(w: usize, h: usize, max: f64, sigma: f64, seed: u64) -> Vec2Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Vec2Field::from_fn(w, h, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let s = gaussian_smooth(&raw, sigma);
    s.scaled(max / s.max_magnitude())
}

fn interior_mean(a: &Vec2Field, b: &Vec2Field, margin: usize) -> f64 {
    let (w, h) = a.dims();
    let mut sum = 0.0;
    let mut n = 0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (p, q) = a.get(x, y);
            let (r, s) = b.get(x, y);
            sum += (p - r).hypot(q - s);
            n += 1;
        }
    }
    sum / n as f64
}

fn criterion_1() -> Outcome {
    let zero = integrate_svf(&Vec2Field::zeros(40, 30), 7).unwrap();
    let identity_exact = zero.displacement.u.data().iter().chain(zero.displacement.v.data()).all(|&d| d == 0.0);

    // Forward Euler with step 1e-3 on dx/dt = (a, b) over unit time.
    let (a, b) = (1.3, -0.7);
    let (mut ox, mut oy) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        ox += 1e-3 * a;
        oy += 1e-3 * b;
    }
    let phi = integrate_svf(&Vec2Field::constant(64, 64, a, b), 7).unwrap();
    let mut worst: f64 = 0.0;
    for y in 8..56 {
        for x in 8..56 {
            let (u, v) = phi.displacement.get(x, y);
            worst = worst.max((u - ox).hypot(v - oy));
        }
    }

    let v = smooth_velocity(64, 64, 3.0, 6.0, 17);
    let s6 = integrate_svf(&v, 6).unwrap();
    let s8 = integrate_svf(&v, 8).unwrap();
    let gap = interior_mean(&s6.displacement, &s8.displacement, 0);
    outcome(
        identity_exact && worst < 1e-3 && gap < 1e-3,
        format!("zero->identity exact={identity_exact}, constant worst {worst:.2e} px, S6 vs S8 mean {gap:.2e} px"),
    )
}

fn criterion_2() -> Outcome {
    let cfg = MotionConfig::default();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let f = texture(16, 16, 1000 + seed);
        let m = texture(16, 16, 2000 + seed);
        let v = smooth_velocity(16, 16, 1.5, 1.5, 3000 + seed);
        let model = EnergyModel::new(&f, &m, &cfg);
        let (_, g) = model.evaluate_with_gradient(&v);
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..2 {
            for i in 0..256 {
                let mut plus = v.clone();
                let mut minus = v.clone();
                let (p, q) = if c == 0 { (&mut plus.u, &mut minus.u) } else { (&mut plus.v, &mut minus.v) };
                p.data_mut()[i] += h;
                q.data_mut()[i] -= h;
                let fd = (model.evaluate(&plus).total - model.evaluate(&minus).total) / (2.0 * h);
                let an = if c == 0 { g.u.data()[i] } else { g.v.data()[i] };
                num += (fd - an).powi(2);
                den += fd * fd;
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    outcome(worst < 1e-3, format!("worst relative error {worst:.2e} over 20 instances"))
}

fn criterion_3() -> Outcome {
    let n = 96;
    let fixed = texture(n, n, 5);
    let w = smooth_velocity(n, n, 1.0, 10.0, 6);
    // Scale the velocity so the deformation itself peaks at 3 px.
    let peak = integrate_svf(&w, 7).unwrap().displacement.max_magnitude();
    let w = w.scaled(3.0 / peak);
    let truth = integrate_svf(&w, 7).unwrap();
    let moving = warp_image(&fixed, &integrate_svf(&w.scaled(-1.0), 7).unwrap()).unwrap();
    let (_, phi, _) = estimate_pair(&fixed, &moving, &MotionConfig::default()).unwrap();
    let err = interior_mean(&phi.displacement, &truth.displacement, 12);
    let frac = jacobian_determinant(&phi).positive_fraction(12);
    outcome(
        err < 0.25 && frac >= 0.999,
        format!(
            "max truth {:.2} px, interior mean error {err:.4} px, det(J)>0 on {:.3}%",
            truth.displacement.max_magnitude(),
            frac * 100.0
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DeformationField {
    DeformationField::from_displacement(Vec2Field::from_fn(w, h, |_, _| {
        (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
    }))
}

/// Plain nested-loop version of the alignment, including its own seed selection.
fn emma_oracle(phi_l: &DeformationField, phi_s: &DeformationField, k: usize, iters: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows = |phi: &DeformationField| -> Vec<Vec<f64>> {
        let (w, h) = phi.dims();
        let mut out = Vec::new();
        for by in 0..h.div_ceil(4) {
            for bx in 0..w.div_ceil(4) {
                let mut d = vec![0.0; 32];
                for j in 0..4 {
                    for i in 0..4 {
                        let (u, v) = phi.displacement.get((bx * 4 + i).min(w - 1), (by * 4 + j).min(h - 1));
                        d[j * 4 + i] = u;
                        d[16 + j * 4 + i] = v;
                    }
                }
                out.push(d);
            }
        }
        out
    };
    let xl = rows(phi_l);
    let xs = rows(phi_s);
    let (n, d) = (xl.len(), xl[0].len());
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let mut best = (usize::MAX, -1.0);
        for r in 0..n {
            if chosen.contains(&r) {
                continue;
            }
            let m = chosen.iter().map(|&c| dist(&xs[r], &xs[c])).fold(f64::INFINITY, f64::min);
            if m > best.1 {
                best = (r, m);
            }
        }
        chosen.push(best.0);
    }
    let mut mu: Vec<Vec<f64>> = chosen.iter().map(|&r| xs[r].clone()).collect();

    let posterior = |mu: &[Vec<f64>]| -> Vec<Vec<f64>> {
        xl.iter()
            .map(|x| {
                let s: Vec<f64> = mu.iter().map(|m| x.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
                let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect()
    };
    let means = |z: &[Vec<f64>], x: &[Vec<f64>], prev: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                let mass: f64 = z.iter().map(|r| r[i]).sum();
                if mass < 1e-12 {
                    prev[i].clone()
                } else {
                    (0..d).map(|t| z.iter().zip(x).map(|(r, xr)| r[i] * xr[t]).sum::<f64>() / mass).collect()
                }
            })
            .collect()
    };
    let rebuild = |z: &[Vec<f64>], mu: &[Vec<f64>]| -> Vec<Vec<f64>> {
        z.iter().map(|r| (0..d).map(|t| r.iter().zip(mu).map(|(a, m)| a * m[t]).sum()).collect()).collect()
    };
    let mut z = Vec::new();
    let mut rl = Vec::new();
    for _ in 0..iters {
        z = posterior(&mu);
        mu = means(&z, &xl, &mu);
        rl = rebuild(&z, &mu);
    }
    let rs = rebuild(&z, &means(&z, &rl, &mu));
    let plus = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(p, q)| p.iter().zip(q).map(|(x, y)| x + y).collect()).collect()
    };
    (plus(&xl, &rl), plus(&xs, &rs))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_step = f64::INFINITY;
    let mut worst_row: f64 = 0.0;
    for pair in 0..50u64 {
        let phi_l = random_field(&mut rng, 24, 20);
        let phi_s = random_field(&mut rng, 24, 20);
        let cfg = EmmaConfig { k: 8, iterations: 10, seed: pair, ..Default::default() };
        let out = emma_align(&phi_l, &phi_s, &cfg).unwrap();
        for w in out.trace.elbo.windows(2) {
            worst_step = worst_step.min(w[1] - w[0]);
        }
        let z = &out.responsibilities.z;
        for r in 0..z.rows() {
            worst_row = worst_row.max((z.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }

    let mut worst_oracle: f64 = 0.0;
    for case in 0..3u64 {
        let phi_l = random_field(&mut rng, 20, 16);
        let phi_s = random_field(&mut rng, 20, 16);
        let cfg = EmmaConfig { k: 6, iterations: 5, seed: case, ..Default::default() };
        let out = emma_align(&phi_l, &phi_s, &cfg).unwrap();
        let (ol, os) = emma_oracle(&phi_l, &phi_s, 6, 5, case);
        let (dl, _) = descriptorize(&out.phi_l, 4).unwrap();
        let (ds, _) = descriptorize(&out.phi_s, 4).unwrap();
        for r in 0..dl.rows() {
            for t in 0..dl.cols() {
                worst_oracle = worst_oracle.max((dl.get(r, t) - ol[r][t]).abs());
                worst_oracle = worst_oracle.max((ds.get(r, t) - os[r][t]).abs());
            }
        }
    }
    outcome(
        worst_step >= -1e-8 && worst_row <= 1e-6 && worst_oracle < 1e-6,
        format!("min ELBO step {worst_step:.2e}, row-sum error {worst_row:.1e}, oracle gap {worst_oracle:.1e}"),
    )
}

fn brute_ncc(e: &FeatureMap, s: &FeatureMap) -> Vec<f64> {
    let (ew, eh) = e.dims();
    let (sw, sh) = s.dims();
    let (rw, rh) = (sw - ew + 1, sh - eh + 1);
    let mut out = vec![0.0; rw * rh];
    for j in 0..rh {
        for i in 0..rw {
            let mut acc = 0.0;
            for (ec, sc) in e.channels.iter().zip(&s.channels) {
                let a: Vec<f64> = (0..eh).flat_map(|y| (0..ew).map(move |x| (x, y))).map(|(x, y)| ec.get(x, y)).collect();
                let b: Vec<f64> = (0..eh).flat_map(|y| (0..ew).map(move |x| (x, y))).map(|(x, y)| sc.get(i + x, j + y)).collect();
                let ma = a.iter().sum::<f64>() / a.len() as f64;
                let mb = b.iter().sum::<f64>() / b.len() as f64;
                let num: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
                let va: f64 = a.iter().map(|p| (p - ma) * (p - ma)).sum();
                let vb: f64 = b.iter().map(|q| (q - mb) * (q - mb)).sum();
                acc += num / (va * vb).sqrt();
            }
            out[j * rw + i] = acc / e.channel_count() as f64;
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sw = rng.random_range(6..=32);
        let sh = rng.random_range(6..=32);
        let ew = rng.random_range(2..=sw - 1);
        let eh = rng.random_range(2..=sh - 1);
        let channels = rng.random_range(1..=3);
        let mut field = |w: usize, h: usize| ScalarField::new(w, h, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let e = FeatureMap::new((0..channels).map(|_| field(ew, eh)).collect()).unwrap();
        let s = FeatureMap::new((0..channels).map(|_| field(sw, sh)).collect()).unwrap();
        let fast = correlate(&e, &s).unwrap();
        for (a, b) in fast.scores.data().iter().zip(brute_ncc(&e, &s)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 1e-6, format!("worst gap {worst:.2e} over 100 instances"))
}

fn lsdm(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lsdm")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("lsdm {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs `track` + `eval` and returns the pooled TE and NoTE means.
fn track_and_eval(frames: &Path, annot: &Path, work: &Path, tag: &str, extra: &[&str]) -> Result<(f64, f64), String> {
    let tracks = work.join(format!("{tag}.csv"));
    let report = work.join(format!("{tag}_report.csv"));
    let mut args = vec!["track", "--seq", p(frames), "--annot", p(annot), "--out", p(&tracks)];
    args.extend_from_slice(extra);
    lsdm(&args)?;
    lsdm(&["eval", "--pred", p(&tracks), "--annot", p(annot), "--report", p(&report)])?;
    let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let mean_of = |scope: &str| -> Result<f64, String> {
        text.lines()
            .find(|l| l.split(',').next() == Some(scope))
            .and_then(|l| l.split(',').nth(1))
            .and_then(|v| v.parse().ok())
            .ok_or(format!("no {scope} row in report"))
    };
    Ok((mean_of("pooled")?, mean_of("note_pooled")?))
}

fn synth(dir: &Path, motion: &str) -> Result<(), String> {
    lsdm(&["synth", "--out", p(dir), "--motion", motion, "--frames", "100", "--seed", "0"])
}

fn criterion_6(work: &Path) -> Outcome {
    let body = || -> Result<Outcome, String> {
        let tr = work.join("translation");
        let svf = work.join("svf");
        synth(&tr, "translation")?;
        synth(&svf, "svf")?;
        let (t_te, t_note) = track_and_eval(&tr.join("frames"), &tr.join("annotations.txt"), work, "tr_full", &[])?;
        let (s_te, s_note) = track_and_eval(&svf.join("frames"), &svf.join("annotations.txt"), work, "svf_full", &[])?;
        let (w0_te, _) =
            track_and_eval(&svf.join("frames"), &svf.join("annotations.txt"), work, "svf_w0", &["--prior-weight", "0"])?;
        Ok(outcome(
            t_te < 1.0 && s_te < 1.5 && s_te <= w0_te,
            format!(
                "translation TE {t_te:.4} (NoTE {t_note:.2}), svf TE {s_te:.4} (NoTE {s_note:.2}), svf w=0 TE {w0_te:.4}"
            ),
        ))
    };
    body().unwrap_or_else(|e| outcome(false, e))
}

fn criterion_7(work: &Path) -> Outcome {
    let body = || -> Result<Outcome, String> {
        let svf = work.join("svf7");
        synth(&svf, "svf")?;
        let frames = svf.join("frames");
        let annot = svf.join("annotations.txt");
        let (n1, _) = track_and_eval(&frames, &annot, work, "svf_n1", &["--emma-iters", "1"])?;
        let (n5, _) = track_and_eval(&frames, &annot, work, "svf_n5", &["--emma-iters", "5"])?;
        Ok(outcome(n5 <= n1, format!("N=1 TE {n1:.4}, N=5 TE {n5:.4}")))
    };
    body().unwrap_or_else(|e| outcome(false, e))
}

fn criterion_8() -> Outcome {
    let mut ok = te((2.0, 3.0), (2.0, 3.0)) == 0.0
        && te((0.0, 0.0), (3.0, 4.0)) == 5.0
        && te((1.5, 0.0), (0.0, 0.0)) == 1.5
        && note((7.0, 7.0), (7.0, 7.0)) == 0.0
        && note((10.0, 10.0), (13.0, 14.0)) == 5.0;
    let s = summarize(&[5.0]).unwrap();
    ok &= (s.mean, s.std, s.p95, s.min, s.max, s.n) == (5.0, 0.0, 5.0, 5.0, 5.0, 1);
    let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
    // Squared deviations from 22 sum to 7610; over n - 1 = 4 that is 1902.5.
    ok &= s.mean == 22.0 && s.std == 1902.5f64.sqrt() && (s.std - 43.62).abs() < 5e-3;
    ok &= (s.p95, s.min, s.max) == (100.0, 1.0, 100.0);
    for c in [0.1, 0.7, 3.3, 12.25] {
        let s = summarize(&[c; 11]).unwrap();
        ok &= (s.mean, s.std, s.p95) == (c, 0.0, c);
    }
    ok &= matches!(summarize(&[]), Err(Error::EmptyInput));

    let set = parse_annotations("1 1 10 10\n1 4 13 14\n1 9 10 12.5\n2 1 50 50\n2 2 50.5 50\n2 7 48.25 47\n").unwrap();
    let frozen: Vec<Tracklet> = set
        .landmarks
        .iter()
        .map(|(&id, list)| Tracklet {
            landmark_id: id,
            points: (0..10).map(|frame| TrackPoint { frame, x: list[0].x, y: list[0].y, out_of_view: false }).collect(),
        })
        .collect();
    let r = evaluate(&frozen, &set).unwrap();
    let bitwise = |a: &lsdm_core::eval::EvalSummary, b: &lsdm_core::eval::EvalSummary| {
        [a.mean, a.std, a.p95, a.min, a.max].map(f64::to_bits) == [b.mean, b.std, b.p95, b.min, b.max].map(f64::to_bits)
            && a.n == b.n
    };
    ok &= bitwise(&r.pooled, &r.pooled_note) && r.landmarks.iter().all(|l| bitwise(&l.te, &l.note));
    outcome(ok, "hand examples exact, frozen TE equals NoTE bitwise".into())
}

fn criterion_9(work: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut problems = Vec::new();

    let tracklets: Vec<Tracklet> = (1..=3)
        .map(|id| Tracklet {
            landmark_id: id,
            points: (0..40)
                .map(|frame| TrackPoint {
                    frame,
                    x: rng.random_range(0.0..500.0),
                    y: rng.random_range(0.0..500.0),
                    out_of_view: false,
                })
                .collect(),
        })
        .collect();
    let mut buf = Vec::new();
    write_tracklets(&mut buf, "seq", &tracklets).unwrap();
    let back = read_tracklets(buf.as_slice()).unwrap();
    let close = back.len() == 3
        && back.iter().zip(&tracklets).all(|((name, b), a)| {
            name == "seq"
                && b.landmark_id == a.landmark_id
                && b.points.iter().zip(&a.points).all(|(q, p)| {
                    q.frame == p.frame && (q.x - p.x).abs() < 1e-4 && (q.y - p.y).abs() < 1e-4
                })
        });
    if !close {
        problems.push("tracklet round-trip");
    }
    let mut empty = Vec::new();
    write_tracklets(&mut empty, "seq", &[]).unwrap();
    if String::from_utf8(empty).unwrap() != "sequence,landmark_id,frame,x,y\n" {
        problems.push("empty tracklet file");
    }
    let first_frame = String::from_utf8(buf).unwrap().lines().nth(1).map(|l| l.split(',').nth(2) == Some("1"));
    if first_frame != Some(true) {
        problems.push("1-based frames");
    }

    let field = DeformationField::from_displacement(Vec2Field::from_fn(37, 23, |_, _| {
        (rng.random_range(-9.0..9.0f32) as f64, rng.random_range(-9.0..9.0f32) as f64)
    }));
    let path = work.join("field.lsdf");
    write_field(&path, &field).unwrap();
    let back = read_field(&path).unwrap();
    let bits = |f: &DeformationField| -> Vec<u64> {
        f.displacement.u.data().iter().chain(f.displacement.v.data()).map(|v| v.to_bits()).collect()
    };
    if back.dims() != field.dims() || bits(&back) != bits(&field) {
        problems.push("LSDF round-trip");
    }
    let mut bytes = fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    if !matches!(decode_lsdf(&bad), Err(Error::BadMagic(_))) {
        problems.push("LSDF bad magic");
    }
    let one = encode_lsdf(&[&field.displacement.u]).unwrap();
    bytes.truncate(one.len());
    bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
    if !matches!(decode_lsdf(&bytes), Err(Error::TruncatedFile { .. })) {
        problems.push("LSDF truncated");
    }

    let parsed = parse_annotations("1 1 100.5 200.25\n").unwrap();
    let a = parsed.landmarks[&1][0];
    if (a.frame, a.x, a.y) != (0, 100.5, 200.25) {
        problems.push("annotation parse");
    }
    if !matches!(parse_annotations("1 0 5 5\n"), Err(Error::Parse { line: 1, .. })) {
        problems.push("annotation frame 0");
    }
    if !parse_annotations("# only\n\n  # comments\n").unwrap().is_empty() {
        problems.push("comment-only annotations");
    }
    if !matches!(parse_annotations("1 5 1 1\n1 3 1 1\n"), Err(Error::NonMonotoneFrames { landmark: 1, line: 2 })) {
        problems.push("non-monotone frames");
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() { "tracklets, fields and annotations round-trip".into() } else { problems.join(", ") },
    )
}

/// Each subdirectory of `LSDM_CLUST_DIR` holding `frames/` and
/// `annotations.txt` is tracked and scored.
fn criterion_10(root: &Path, work: &Path) -> Outcome {
    let mut seqs: Vec<_> = match fs::read_dir(root) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("frames").is_dir() && d.join("annotations.txt").is_file())
            .collect(),
        Err(e) => return outcome(false, format!("cannot read {}: {e}", root.display())),
    };
    seqs.sort();
    if seqs.is_empty() {
        return outcome(false, format!("no sequences under {}", root.display()));
    }
    let mut better = 0;
    let mut notes = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        match track_and_eval(&s.join("frames"), &s.join("annotations.txt"), work, &format!("clust{i}"), &[]) {
            Ok((te, nte)) => {
                if te < nte {
                    better += 1;
                }
                notes.push(format!("{} TE {te:.3}/NoTE {nte:.3}", s.file_name().unwrap().to_string_lossy()));
            }
            Err(e) => return outcome(false, e),
        }
    }
    outcome(better >= 1, notes.join("; "))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let secs = Duration::from_secs;
    let results = [
        run(1, "SVF integration", Some(secs(10)), criterion_1),
        run(2, "energy gradient", Some(secs(30)), criterion_2),
        run(3, "registration recovery", Some(secs(120)), criterion_3),
        run(4, "alignment monotonicity", Some(secs(60)), criterion_4),
        run(5, "correlation oracle", Some(secs(30)), criterion_5),
        run(6, "synthetic tracking", Some(secs(600)), || criterion_6(w)),
        run(7, "alignment iterations", Some(secs(900)), || criterion_7(w)),
        run(8, "metrics exactness", None, criterion_8),
        run(9, "I/O round-trips", None, || criterion_9(w)),
        match std::env::var_os("LSDM_CLUST_DIR") {
            Some(dir) => run(10, "real sequences", None, || criterion_10(Path::new(&dir), w)),
            None => {
                line("criterion 10 PASS  real sequences: skipped, LSDM_CLUST_DIR not set");
                true
            }
        },
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
