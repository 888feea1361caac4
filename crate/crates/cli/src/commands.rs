//! Subcommand bodies. Each returns the lines it wants printed on stdout.

use num_complex::Complex64;
use serde_json::{json, Value};
use wtlab::dynamics::{advance, hamiltonian, integrate, momentum, IntegratorConfig, Rk4};
use wtlab::ensemble::{
    factorization_error, intensity_moment, ks_uniformity, pair_cumulant, phase_harmonic, run_ensemble_with, Divergence,
    IntensityLaw, RpaSampler, StatsLayout,
};
use wtlab::kinetics::{
    evolve_spectrum, evolve_with, kinetic_coeffs, pdf_step, steady_pdf_with_flux, KineticCoeffs, PdfGrid1D,
    SpectrumState,
};
use wtlab::modegrid::TriadTable;
use wtlab::perturb::{log_log_slope, ExpansionResult};
use wtlab::record::{mode_label, write_tensor, write_trajectory, write_trajectory_csv};
use wtlab::zspdf::{Closure, JointPdfGrid, ZsOperator};

use crate::config::{ClosureMode, DivergenceMode, RunConfig};
use crate::output::{num, RunDir};
use crate::CliError;

fn integrator(cfg: &RunConfig, tbl: &TriadTable) -> Result<IntegratorConfig, CliError> {
    let ic = IntegratorConfig::new(cfg.dynamics.h, cfg.dynamics.epsilon)?;
    ic.validate_for(tbl)?;
    Ok(ic)
}

fn labels(tbl: &TriadTable) -> Vec<String> {
    (0..tbl.mode_count()).map(|i| mode_label(tbl.modes(), i)).collect()
}

pub fn triads(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    dir.csv_with("triads.csv", |buf| tbl.write_csv(buf))?;
    Ok(vec![format!("triads={} modes={}", tbl.len(), tbl.mode_count())])
}

pub fn simulate(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    let ic = integrator(cfg, &tbl)?;
    let sampler = RpaSampler::new(cfg.law(&tbl), cfg.ensemble.seed)?;
    let mut state = sampler.sample_initial(0);
    let rms0 = state.rms();
    let mut stepper = Rk4::new(&tbl, ic.epsilon);
    let mut frames = Vec::new();
    for t in cfg.snapshots() {
        advance(&mut stepper, &mut state, ic.h, t, rms0)?;
        frames.push(state.clone());
    }
    dir.csv_with("trajectory.csv", |buf| write_trajectory_csv(buf, tbl.modes(), &frames))?;
    let mut bin = Vec::new();
    write_trajectory(&mut bin, tbl.modes(), &dir.config, &frames)?;
    dir.bytes("trajectory.wtlb", &bin)?;

    let h0 = hamiltonian(&frames[0], &tbl, ic.epsilon);
    let p0 = momentum(&frames[0], tbl.modes());
    let pscale = frames[0].a.iter().map(|z| z.norm_sqr()).sum::<f64>() * tbl.modes().k_max();
    let mut header = vec!["t".to_string(), "H".to_string(), "rel_dH".to_string()];
    header.extend((0..p0.len()).map(|c| format!("P_{c}")));
    header.push("rel_dP".to_string());
    let mut worst = (0.0f64, 0.0f64);
    let rows: Vec<Vec<String>> = frames
        .iter()
        .map(|f| {
            let h = hamiltonian(f, &tbl, ic.epsilon);
            let p = momentum(f, tbl.modes());
            let dh = if h0 != 0.0 { ((h - h0) / h0).abs() } else { (h - h0).abs() };
            let dp = p.iter().zip(&p0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / pscale.max(f64::MIN_POSITIVE);
            worst = (worst.0.max(dh), worst.1.max(dp));
            let mut r = vec![num(f.t), num(h), num(dh)];
            r.extend(p.iter().map(|&x| num(x)));
            r.push(num(dp));
            r
        })
        .collect();
    dir.csv("conservation.csv", &header, &rows)?;
    Ok(vec![format!("frames={} max_rel_dH={:e} max_rel_dP={:e}", frames.len(), worst.0, worst.1)])
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn expand_check(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    let x = &cfg.expand;
    let amp2 = x.amplitude * x.amplitude;
    let sampler = RpaSampler::new(IntensityLaw::Deterministic(vec![amp2; tbl.mode_count()]), cfg.ensemble.seed)?;
    let a0 = sampler.sample_initial(0);
    let exp = ExpansionResult::compute(&a0.a, &tbl, x.t)?;
    let mut res = Vec::with_capacity(x.epsilons.len());
    for &eps in &x.epsilons {
        let ic = IntegratorConfig::new(x.h, eps)?;
        ic.validate_for(&tbl).map_err(|_| crate::config_error("expand.h", "violates h·ω_max ≤ 0.5"))?;
        let a = integrate(&a0, &tbl, &ic, x.t)?.a;
        let approx = exp.evaluate(eps);
        res.push(norm(&a.iter().zip(&approx).map(|(p, q)| p - q).collect::<Vec<_>>()));
    }
    let slope = log_log_slope(&x.epsilons, &res);
    let rows: Vec<Vec<String>> = x.epsilons.iter().zip(&res).map(|(e, r)| vec![num(*e), num(*r)]).collect();
    dir.csv("expand.csv", &["epsilon".into(), "residual".into()], &rows)?;
    dir.json(
        "summary.json",
        json!({ "slope": slope, "epsilons": x.epsilons, "residuals": res }),
    )?;
    Ok(vec![format!("slope={slope:.4}")])
}

pub fn stats(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    let ic = integrator(cfg, &tbl)?;
    let sampler = RpaSampler::new(cfg.law(&tbl), cfg.ensemble.seed)?;
    let mut layout = StatsLayout::for_sampler(&sampler, cfg.snapshots());
    layout.joint_tuples = cfg
        .ensemble
        .joint_tuples
        .iter()
        .map(|t| t.iter().map(|m| m.locate(tbl.modes(), "ensemble.joint_tuples")).collect())
        .collect::<Result<_, _>>()?;
    let policy = match cfg.ensemble.divergence {
        DivergenceMode::Abort => Divergence::Abort,
        DivergenceMode::Exclude => Divergence::Exclude,
    };
    let acc = run_ensemble_with(&sampler, &tbl, &ic, &layout, cfg.ensemble.members, policy)?;
    let labels = labels(&tbl);
    let n = tbl.mode_count();

    let mut header = vec!["t".to_string(), "mode".to_string()];
    for mu in 1..=3 {
        header.extend([format!("psi{mu}_re"), format!("psi{mu}_im"), format!("psi{mu}_err")]);
    }
    header.extend(["n", "n_err", "s2", "s2_err", "ks_p"].map(String::from));
    let mut rows = Vec::new();
    let mut pair_rows = Vec::new();
    let mut snaps = Vec::new();
    for (k, snap) in acc.snapshots.iter().enumerate() {
        let mut max_psi = [0.0f64; 3];
        let mut ks_pass = 0usize;
        for j in 0..n {
            let mut r = vec![num(snap.t), labels[j].clone()];
            for mu in 1..=3 {
                let e = phase_harmonic(&acc, k, j, mu)?;
                max_psi[mu - 1] = max_psi[mu - 1].max(e.value.norm());
                r.extend([num(e.value.re), num(e.value.im), num(e.stderr)]);
            }
            for p in 1..=2 {
                let e = intensity_moment(&acc, k, j, p)?;
                r.extend([num(e.value), num(e.stderr)]);
            }
            let p = ks_uniformity(&acc, k, j).ok();
            if p.is_some_and(|p| p > 0.01) {
                ks_pass += 1;
            }
            r.push(p.map_or_else(String::new, num));
            rows.push(r);
            for j2 in j + 1..n {
                let c = pair_cumulant(&acc, k, j, j2)?;
                pair_rows.push(vec![num(snap.t), labels[j].clone(), labels[j2].clone(), num(c.value), num(c.stderr)]);
            }
        }
        let factor: Vec<Value> = (0..layout.joint_tuples.len())
            .map(|tup| {
                match factorization_error(&acc, k, tup, cfg.ensemble.factor_bins, 200, cfg.ensemble.seed) {
                    Ok(r) => json!({ "tuple": tup, "error": r.error, "null_q95": r.null_q95, "null_mean": r.null_mean }),
                    Err(e) => json!({ "tuple": tup, "unavailable": e.to_string() }),
                }
            })
            .collect();
        snaps.push(json!({
            "t": snap.t,
            "max_abs_psi": max_psi,
            "ks_pass_fraction": ks_pass as f64 / n as f64,
            "factorization": factor,
        }));
    }
    dir.csv("stats.csv", &header, &rows)?;
    dir.csv(
        "pairs.csv",
        &["t", "mode1", "mode2", "cumulant", "stderr"].map(String::from),
        &pair_rows,
    )?;
    dir.json("summary.json", json!({ "members": acc.members(), "excluded": acc.excluded, "snapshots": snaps }))?;
    Ok(vec![format!(
        "members={} excluded={} snapshots={}",
        acc.members(),
        acc.excluded.len(),
        acc.snapshots.len()
    )])
}

pub fn kinetics(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    let k = &cfg.kinetics;
    let (t_b, t_end, s_max) = (k.t_b.expect("resolved"), k.t_end.expect("resolved"), k.s_max.expect("resolved"));
    let eps = cfg.dynamics.epsilon;
    let n0 = SpectrumState::new(0.0, cfg.spectrum(&tbl))?;
    let traj = evolve_spectrum(&n0, &tbl, eps, t_b, t_end, k.dt)?;
    let labels = labels(&tbl);
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("n_{l}")));
    header.push("energy".into());
    let rows: Vec<Vec<String>> = traj
        .iter()
        .map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.n.iter().map(|&x| num(x)));
            r.push(num(s.energy(&tbl)));
            r
        })
        .collect();
    dir.csv("spectrum.csv", &header, &rows)?;

    let last = traj.last().expect("trajectory has the initial state");
    let c = kinetic_coeffs(&last.n, &tbl, eps, t_b)?;
    let crow: Vec<Vec<String>> = (0..tbl.mode_count())
        .map(|j| vec![labels[j].clone(), num(tbl.omega()[j]), num(last.n[j]), num(c.eta[j]), num(c.gamma[j])])
        .collect();
    dir.csv("coeffs.csv", &["mode", "omega", "n", "eta", "gamma"].map(String::from), &crow)?;

    let j = k.pdf_mode.expect("resolved").locate(tbl.modes(), "kinetics.pdf_mode")?;
    let (eta, gamma) = (c.eta[j], c.gamma[j]);
    let mut lines = vec![format!("steps={} nonlinear_time={}", traj.len() - 1, num(c.nonlinear_time()))];
    if !(eta > 0.0 && gamma > 0.0) {
        lines.push(format!("pdf skipped: eta={} gamma={} for mode {}", num(eta), num(gamma), labels[j]));
        dir.json("summary.json", json!({ "pdf": Value::Null, "negative_gamma_modes": c.negative_gamma_modes() }))?;
        return Ok(lines);
    }
    let nbar = eta / gamma;
    let mut g = PdfGrid1D::delta_like(j, 0.5 * nbar.min(0.5 * s_max), s_max, k.cells)?;
    let exact = PdfGrid1D::exponential(j, nbar, s_max, k.cells)?;
    let dt = 0.5 * g.cfl_limit(eta, gamma);
    let steps = (k.relax / gamma / dt).ceil() as usize;
    for _ in 0..steps {
        g = pdf_step(&g, eta, gamma, dt)?;
    }
    let flux_curve = if k.flux != 0.0 {
        Some(steady_pdf_with_flux(nbar, eta, k.flux, k.s0, s_max)?)
    } else {
        None
    };
    let mut header = ["s", "p_relaxed", "p_exponential"].map(String::from).to_vec();
    if flux_curve.is_some() {
        header.push("p_flux".into());
    }
    let prow: Vec<Vec<String>> = (0..g.cells())
        .map(|i| {
            let s = g.center(i);
            let mut r = vec![num(s), num(g.p[i]), num(exact.p[i])];
            if let Some(f) = &flux_curve {
                r.push(if s >= k.s0 { num(f.eval(s)) } else { String::new() });
            }
            r
        })
        .collect();
    dir.csv("pdf.csv", &header, &prow)?;
    let l1 = g.l1_distance(&exact.p);
    dir.json(
        "summary.json",
        json!({
            "pdf": { "mode": labels[j], "eta": eta, "gamma": gamma, "n": nbar, "steps": steps, "dt": dt, "l1_to_exponential": l1, "outflux": g.outflux },
            "negative_gamma_modes": c.negative_gamma_modes(),
        }),
    )?;
    lines.push(format!("pdf_l1={l1:e}"));
    Ok(lines)
}

pub fn zs_pdf(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<String>, CliError> {
    let tbl = cfg.table()?;
    let z = &cfg.zspdf;
    let eps = cfg.dynamics.epsilon;
    let t_b = cfg.kinetics.t_b.expect("resolved");
    let modes = cfg.zspdf_modes(&tbl)?;
    let s_max = z.s_max.expect("resolved");
    let grid = match (z.temperature, &z.n) {
        (Some(temp), _) => JointPdfGrid::thermodynamic(modes.clone(), z.cells, s_max, &tbl, temp)?,
        (None, Some(n)) => JointPdfGrid::exponential_product(modes.clone(), z.cells, s_max, n)?,
        (None, None) => unreachable!("resolve fills zspdf.n"),
    };
    let spectrum = cfg.spectrum(&tbl);
    let (closure, ktbl) = match z.closure {
        ClosureMode::Drop => (Closure::Drop, tbl.cluster(&modes)),
        ClosureMode::MeanField => (Closure::MeanField(spectrum.clone()), tbl.clone()),
    };
    let op = ZsOperator::new(&grid, &tbl, eps, t_b, &closure)?;
    if op.channel_count() == 0 {
        return Err(crate::config_error("zspdf.modes", "no triad acts on the participating modes"));
    }
    // kinetic reference: participating modes evolve, outside modes held fixed
    let inside = |j: usize| modes.contains(&j);
    let coeffs = |_: f64, n: &[f64]| -> wtlab::Result<KineticCoeffs> {
        let mut c = kinetic_coeffs(n, &ktbl, eps, t_b)?;
        for j in 0..n.len() {
            if !inside(j) {
                c.eta[j] = 0.0;
                c.gamma[j] = 0.0;
            }
        }
        Ok(c)
    };
    let mut nk = spectrum.clone();
    for (a, &j) in modes.iter().enumerate() {
        nk[j] = grid.mean(a);
    }
    let t_end = match z.t_end {
        Some(t) => t,
        None => {
            let c = coeffs(0.0, &nk)?;
            let nl = c.nonlinear_time();
            if !nl.is_finite() {
                return Err(crate::config_error("zspdf.t_end", "no kinetic time scale; set it explicitly"));
            }
            0.5 * nl
        }
    };
    let dt = z.dt.unwrap_or(0.9 * op.cfl_limit());
    let mut kin = SpectrumState::new(0.0, nk)?;
    let mut cur = grid.clone();
    let mut frames = vec![(cur.clone(), kin.clone())];
    for f in 1..=z.frames {
        let target = t_end * f as f64 / z.frames as f64;
        cur = op.evolve(&cur, target, dt, usize::MAX)?.pop().expect("evolve returns frames");
        kin = evolve_with(&kin, target, cfg.kinetics.dt, coeffs)?
            .pop()
            .expect("evolve returns states");
        frames.push((cur.clone(), kin.clone()));
    }

    let labels: Vec<String> = modes.iter().map(|&j| mode_label(tbl.modes(), j)).collect();
    let mut mrows = Vec::new();
    for (g, _) in &frames {
        for (a, l) in labels.iter().enumerate() {
            for (i, p) in g.marginal(a).iter().enumerate() {
                mrows.push(vec![num(g.t), l.clone(), num((i as f64 + 0.5) * g.ds), num(*p)]);
            }
        }
    }
    dir.csv("marginals.csv", &["t", "mode", "s", "p"].map(String::from), &mrows)?;

    let d = modes.len();
    let mut header = vec!["t".to_string(), "mass".to_string()];
    header.extend(labels.iter().map(|l| format!("mean_{l}")));
    header.extend(labels.iter().map(|l| format!("kinetic_{l}")));
    for a in 0..d {
        for b in a + 1..d {
            header.push(format!("cov_{}_{}", labels[a], labels[b]));
        }
    }
    let mut worst = 0.0f64;
    let rows: Vec<Vec<String>> = frames
        .iter()
        .map(|(g, s)| {
            let mut r = vec![num(g.t), num(g.mass())];
            r.extend((0..d).map(|a| num(g.mean(a))));
            r.extend(modes.iter().map(|&j| num(s.n[j])));
            for (a, &j) in modes.iter().enumerate() {
                worst = worst.max((g.mean(a) - s.n[j]).abs() / s.n[j].abs().max(f64::MIN_POSITIVE));
            }
            for a in 0..d {
                for b in a + 1..d {
                    r.push(num(g.covariance(a, b)));
                }
            }
            r
        })
        .collect();
    dir.csv("moments.csv", &header, &rows)?;
    let mut bin = Vec::new();
    write_tensor(&mut bin, tbl.modes(), &dir.config, &cur)?;
    dir.bytes("tensor.wtlb", &bin)?;
    dir.json(
        "summary.json",
        json!({
            "t_end": t_end,
            "dt": dt,
            "cfl_limit": op.cfl_limit(),
            "channels": op.channel_count(),
            "final_mass": cur.mass(),
            "max_rel_mean_deviation_from_kinetics": worst,
        }),
    )?;
    Ok(vec![format!("t_end={} max_rel_dev={worst:e}", num(t_end))])
}
