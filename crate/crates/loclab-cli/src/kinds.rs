//! Per-kind task executors and summary builders. One task is one
//! (cell, realization) pair; it returns the result rows for that pair.
//! Executors are pure functions of (knobs, seed), which is what makes
//! the runner's output independent of scheduling.

use std::collections::BTreeMap;

use loclab::geometry::{dist, Cube};
use loclab::metrics::{
    decay_fit_with_config, dynamical_moment, local_norms, localization_center,
    unit_cover_centers, DecayFitConfig,
};
use loclab::msa::{
    derive_scales, free_site_tune, good_box_check, initial_scale_check, InitialScaleConfig,
    TuneOutcome,
};
use loclab::operator::{assemble, build_grid, DiscreteHamiltonian};
use loclab::point_process::{sample_poisson, sample_thinned};
use loclab::potential::{PotentialField, SingleSiteSpec};
use loclab::spectral::eigen_window;
use loclab::stats::{fit_line, poisson_gof, wilson_interval};

use crate::rows::{format_f64, ResultRow, SummaryRow};
use crate::spec::{ExperimentSpec, Kind};

/// Typed access to the resolved knob map of a cell.
pub struct Knobs<'a>(pub &'a BTreeMap<String, f64>);

impl Knobs<'_> {
    pub fn get(&self, name: &str) -> Result<f64, String> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| format!("parameter '{name}' is not resolved"))
    }

    pub fn get_usize(&self, name: &str) -> Result<usize, String> {
        let v = self.get(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(format!(
                "parameter '{name}' must be a small nonnegative integer, got {v}"
            ));
        }
        Ok(v as usize)
    }
}

type Metrics = Vec<(String, f64, String)>;

fn lerr(e: loclab::Error) -> String {
    e.to_string()
}

fn bool01(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Execute one (cell, realization) task.
pub fn run_task(
    kind: Kind,
    id: &str,
    cell: &BTreeMap<String, f64>,
    resolved: &BTreeMap<String, f64>,
    realization: u64,
    seed: u64,
) -> Result<Vec<ResultRow>, String> {
    let knobs = Knobs(resolved);
    let metrics = match kind {
        Kind::SamplerStats => sampler_stats(&knobs, seed)?,
        Kind::InitialScale => initial_scale(&knobs, seed)?,
        Kind::GoodBoxSweep | Kind::DensitySweep => good_box(&knobs, seed)?,
        Kind::LocalizationProfile => localization_profile(&knobs, seed)?,
        Kind::DynamicalMoment => dynamical(&knobs, seed)?,
        Kind::Stability => stability(&knobs, seed)?,
        Kind::FreeSiteDemo => free_site_demo(&knobs, seed)?,
    };
    Ok(metrics
        .into_iter()
        .map(|(metric, value, flags)| {
            debug_assert!(value.is_finite(), "metric {metric} is not finite");
            ResultRow {
                id: id.to_string(),
                cell: cell.clone(),
                realization,
                seed,
                metric,
                value,
                flags,
            }
        })
        .collect())
}

fn box_and_grid(
    knobs: &Knobs,
) -> Result<(usize, Cube, loclab::operator::Grid), String> {
    let dim = knobs.get_usize("dim")?;
    let side = knobs.get("side")?;
    let h = knobs.get("h")?;
    let cube = Cube::centered(dim, side).map_err(lerr)?;
    let grid = build_grid(&cube, h).map_err(lerr)?;
    Ok((dim, cube, grid))
}

fn sampled_hamiltonian(knobs: &Knobs, seed: u64) -> Result<DiscreteHamiltonian, String> {
    let (dim, cube, grid) = box_and_grid(knobs)?;
    let density = knobs.get("density")?;
    let site = SingleSiteSpec::default();
    if density == 0.0 {
        return assemble(&grid, |_| 0.0).map_err(lerr);
    }
    let config = sample_poisson(&cube, density, seed).map_err(lerr)?;
    let field = PotentialField::new(&config, &site);
    assemble(&grid, |x| field.eval(&x[..dim])).map_err(lerr)
}

fn sampler_stats(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let dim = knobs.get_usize("dim")?;
    let side = knobs.get("side")?;
    let density = knobs.get("density")?;
    let thinned = knobs.get("thinned")? != 0.0;
    let cube = Cube::centered(dim, side).map_err(lerr)?;
    let count = if thinned {
        let cfg = sample_thinned(&cube, density, seed).map_err(lerr)?;
        let marks = cfg.marks().expect("thinned configurations carry marks");
        marks.iter().filter(|&&m| m == 1).count()
    } else {
        sample_poisson(&cube, density, seed).map_err(lerr)?.len()
    };
    Ok(vec![("count".to_string(), count as f64, String::new())])
}

fn good_box(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let energy = knobs.get("energy")?;
    let c = knobs.get("c")?;
    let eps = knobs.get("eps_slack")?;
    let ham = sampled_hamiltonian(knobs, seed)?;
    let report = good_box_check(&ham, energy, c, eps).map_err(lerr)?;
    let worst = report.pairs.iter().map(|p| p.norm).fold(0.0, f64::max);
    let mut out = vec![(
        "verdict".to_string(),
        bool01(report.verdict),
        if report.resonance {
            "resonance".to_string()
        } else {
            String::new()
        },
    )];
    if report.resolvent_norm.is_finite() {
        out.push(("resolvent_norm".to_string(), report.resolvent_norm, String::new()));
        out.push(("worst_offdiag".to_string(), worst, String::new()));
    }
    Ok(out)
}

fn initial_scale(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let (_, cube, grid) = box_and_grid(knobs)?;
    let dim = knobs.get_usize("dim")?;
    let density = knobs.get("density")?;
    let side = knobs.get("side")?;
    let eps = knobs.get("eps_slack")?;
    let params = derive_scales(density, side, dim, eps).map_err(lerr)?;
    let energy = knobs.get("energy_fraction")? * params.e0;
    let config = sample_poisson(&cube, density, seed).map_err(lerr)?;
    let cfg = InitialScaleConfig {
        upper_factor: knobs.get("upper_factor")?,
        resolvent_prefactor: knobs.get("prefactor")?,
        c: knobs.get("c")?,
        probe_cell: 1.0,
        attenuation_seed: seed,
    };
    let site = SingleSiteSpec::default();
    let report =
        initial_scale_check(&config, &params, &site, &grid, energy, &cfg).map_err(lerr)?;
    let mut out = vec![(
        "cell_event".to_string(),
        bool01(report.cell_event.holds),
        if report.cell_event.holds {
            String::new()
        } else {
            "short_circuit".to_string()
        },
    )];
    if let Some(gamma) = &report.gamma {
        out.push(("gamma_norm".to_string(), gamma.gamma_norm, String::new()));
        out.push((
            "hypothesis".to_string(),
            bool01(gamma.hypothesis_holds),
            String::new(),
        ));
        out.push((
            "average_inf".to_string(),
            report.average_infimum.unwrap_or(0.0),
            String::new(),
        ));
        match report.resolvent_norm {
            Some(r) => out.push(("resolvent_norm".to_string(), r, String::new())),
            None => out.push(("resonant".to_string(), 1.0, "resonance".to_string())),
        }
        out.push((
            "bounds_hold".to_string(),
            bool01(report.bounds_hold == Some(true)),
            String::new(),
        ));
        if let Some(att) = &report.attenuated {
            out.push((
                "attenuated_ok".to_string(),
                bool01(att.bounds_hold),
                String::new(),
            ));
        }
    }
    Ok(out)
}

fn localization_profile(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let dim = knobs.get_usize("dim")?;
    let states = knobs.get_usize("states")?;
    let ham = sampled_hamiltonian(knobs, seed)?;
    let grid = ham.grid().clone();
    let (_, ghi) = ham.band().gershgorin_bounds();
    let win = eigen_window(&ham, (0.0, ghi + 1.0)).map_err(lerr)?;
    let k = states.min(win.len());
    let mut out = Vec::new();
    let centers = unit_cover_centers(grid.cube());
    for s in 0..k {
        let phi = &win.eigenvectors[s];
        out.push((format!("s{s}.lambda"), win.eigenvalues[s], String::new()));
        let center = localization_center(phi, &grid).map_err(lerr)?;
        match decay_fit_with_config(phi, &grid, &center, &DecayFitConfig::whole_box()) {
            Ok(fit) => {
                out.push((format!("s{s}.decay_m"), fit.m, String::new()));
                out.push((format!("s{s}.decay_r2"), fit.r_squared, String::new()));
            }
            Err(e) => out.push((format!("s{s}.decay_m"), 0.0, format!("fit_error={e}"))),
        }
        let norms = local_norms(phi, &grid, &centers).map_err(lerr)?;
        for (c, n) in centers.iter().zip(&norms) {
            let tag: Vec<String> = c.iter().map(|v| format_f64(*v)).collect();
            let r = dist(c, &center, dim);
            out.push((
                format!("s{s}.profile@{}", tag.join("_")),
                *n,
                format!("r={}", format_f64(r)),
            ));
        }
    }
    Ok(out)
}

fn dynamical(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let e0 = knobs.get("e0")?;
    let p = knobs.get("p")?;
    let t_min = knobs.get("t_min")?;
    let t_max = knobs.get("t_max")?;
    let t_points = knobs.get_usize("t_points")?;
    if !(t_min > 0.0) || t_max < t_min || t_points < 2 {
        return Err(format!(
            "time grid needs 0 < t_min <= t_max and t_points >= 2, \
             got [{t_min}, {t_max}] with {t_points} points"
        ));
    }
    let times: Vec<f64> = (0..t_points)
        .map(|i| t_min * (t_max / t_min).powf(i as f64 / (t_points - 1) as f64))
        .collect();
    let ham = sampled_hamiltonian(knobs, seed)?;
    let dm = dynamical_moment(&ham, e0, p, &times).map_err(lerr)?;
    let mut out = vec![
        (
            "sup".to_string(),
            dm.sup,
            if dm.window_empty {
                "window_empty".to_string()
            } else {
                String::new()
            },
        ),
        ("states".to_string(), dm.states as f64, String::new()),
    ];
    for (t, m) in &dm.trajectory {
        out.push((format!("moment@{}", format_f64(*t)), *m, String::new()));
    }
    Ok(out)
}

fn stability(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let (dim, cube, grid) = box_and_grid(knobs)?;
    let density = knobs.get("density")?;
    let delta = knobs.get("delta")?;
    let window = (knobs.get("window_lo")?, knobs.get("window_hi")?);
    let perturbations = knobs.get_usize("perturbations")?;
    let _ = dim;
    let config = sample_poisson(&cube, density, seed).map_err(lerr)?;
    let site = SingleSiteSpec::default();
    let report =
        loclab::msa::eigenvalue_stability(&config, &site, &grid, &[delta], window, perturbations, seed)
            .map_err(lerr)?;
    let r = &report.per_delta[0];
    Ok(vec![
        ("max_shift".to_string(), r.max_shift, String::new()),
        ("sup_bound".to_string(), r.sup_bound, String::new()),
        ("crossings".to_string(), r.crossings as f64, String::new()),
        ("base_count".to_string(), r.base_count as f64, String::new()),
    ])
}

fn free_site_demo(knobs: &Knobs, seed: u64) -> Result<Metrics, String> {
    let (dim, cube, grid) = box_and_grid(knobs)?;
    if dim != 1 {
        return Err("free-site-demo is one-dimensional".to_string());
    }
    let side = knobs.get("side")?;
    if side < 12.0 {
        return Err(format!("demo geometry needs side >= 12, got {side}"));
    }
    let density = knobs.get("density")?;
    let n_free = knobs.get_usize("n_free")?;
    if !(3..=10).contains(&n_free) {
        return Err(format!("demo wants 3..=10 free sites, got {n_free}"));
    }
    let c = knobs.get("c")?;
    let eps = knobs.get("eps_slack")?;
    let site = SingleSiteSpec::default();

    // Engineered resonance: a wall of bumps at half-unit spacing with a gap
    // in the middle. The gap hosts one bound state below the wall; probing
    // just above it makes the all-off box fail. The first three free sites
    // tile the gap, so switching them all on fills the well and lifts the
    // spectrum clear of the probe energy; any further sites are decoys on
    // top of the wall that never change the verdict.
    let gap_half = 3.0;
    let mut wall = Vec::new();
    let mut w = cube.lo(0) + 0.5;
    while w <= cube.hi(0) - 0.5 + 1e-9 {
        if w.abs() >= gap_half {
            wall.push(w);
        }
        w += 0.5;
    }
    let mut positions = vec![-1.5, 0.0, 1.5];
    for i in 3..n_free {
        let decoy = gap_half + 2.0 + (i - 3) as f64;
        if decoy > cube.hi(0) - 0.5 {
            return Err(format!("side {side} too small for {n_free} free sites"));
        }
        positions.push(decoy);
    }
    let noise = if density > 0.0 {
        Some(sample_poisson(&cube, density, seed).map_err(lerr)?)
    } else {
        None
    };
    let noise_field = noise.as_ref().map(|cfg| PotentialField::new(cfg, &site));
    let build = |assign: &[bool]| -> loclab::Result<DiscreteHamiltonian> {
        assemble(&grid, |x| {
            let mut v: f64 = wall.iter().map(|w| site.eval(&[x[0] - w], 1)).sum();
            if let Some(f) = &noise_field {
                v += f.eval(&x[..1]);
            }
            for (on, xi) in assign.iter().zip(&positions) {
                if *on {
                    v += site.eval(&[x[0] - xi], 1);
                }
            }
            v
        })
    };
    // Probe a hair above the well level: resonant until a switch moves it.
    let base = build(&vec![false; n_free]).map_err(lerr)?;
    let (_, ghi) = base.band().gershgorin_bounds();
    let bottom = eigen_window(&base, (0.0, ghi + 1.0)).map_err(lerr)?;
    let energy = bottom.eigenvalues[0] + 1e-7;
    let outcome = free_site_tune(n_free, |a| build(a), energy, c, eps).map_err(lerr)?;
    let mut out = vec![("energy".to_string(), energy, String::new())];
    match outcome {
        TuneOutcome::Found { assignment, tried } => {
            let code: f64 = assignment
                .iter()
                .enumerate()
                .map(|(i, &b)| if b { (1u64 << i) as f64 } else { 0.0 })
                .sum();
            out.push(("found".to_string(), 1.0, String::new()));
            out.push(("tried".to_string(), tried as f64, String::new()));
            out.push(("assignment_code".to_string(), code, String::new()));
        }
        TuneOutcome::Exhausted { tried, .. } => {
            out.push(("found".to_string(), 0.0, String::new()));
            out.push(("tried".to_string(), tried as f64, String::new()));
        }
    }
    Ok(out)
}

/// Per-cell summary lines for `summary.csv`. Columns are fixed per kind;
/// every row begins with the grid coordinates.
pub fn summarize(
    spec: &ExperimentSpec,
    cells: &[BTreeMap<String, f64>],
    rows: &[ResultRow],
) -> Vec<SummaryRow> {
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let cell_rows: Vec<&ResultRow> = rows.iter().filter(|r| &r.cell == cell).collect();
        let knobs = spec.resolve(cell);
        let mut columns: Vec<(String, String)> = cell
            .iter()
            .map(|(k, v)| (k.clone(), format_f64(*v)))
            .collect();
        let metric = |name: &str| -> Vec<f64> {
            cell_rows
                .iter()
                .filter(|r| r.metric == name)
                .map(|r| r.value)
                .collect()
        };
        match spec.kind {
            Kind::SamplerStats => {
                let counts: Vec<u64> = metric("count").iter().map(|&v| v as u64).collect();
                let lambda = knobs["density"] * knobs["side"].powi(knobs["dim"] as i32);
                let n = counts.len();
                let mean = counts.iter().sum::<u64>() as f64 / n.max(1) as f64;
                columns.push(("n".into(), n.to_string()));
                columns.push(("mean_count".into(), format_f64(mean)));
                columns.push(("lambda".into(), format_f64(lambda)));
                if n >= 10 {
                    let gof = poisson_gof(&counts, lambda, knobs["significance"]);
                    columns.push(("chi2".into(), format_f64(gof.statistic)));
                    columns.push(("dof".into(), gof.dof.to_string()));
                    columns.push(("critical".into(), format_f64(gof.critical)));
                    columns.push(("p_value".into(), format_f64(gof.p_value)));
                    columns.push(("passed".into(), format_f64(bool01(gof.passed))));
                } else {
                    for name in ["chi2", "dof", "critical", "p_value", "passed"] {
                        columns.push((name.into(), String::new()));
                    }
                }
            }
            Kind::GoodBoxSweep | Kind::DensitySweep => {
                let verdicts = metric("verdict");
                let n = verdicts.len() as u64;
                let successes = verdicts.iter().filter(|&&v| v == 1.0).count() as u64;
                let (lo, hi) = wilson_interval(successes, n.max(1), 0.95);
                let dim = knobs["dim"];
                let eps = knobs["eps_slack"];
                let reference = 1.0 - knobs["side"].powf(-(0.375 * dim - eps));
                columns.push(("n".into(), n.to_string()));
                columns.push(("successes".into(), successes.to_string()));
                columns.push((
                    "point".into(),
                    format_f64(successes as f64 / n.max(1) as f64),
                ));
                columns.push(("wilson_lo".into(), format_f64(lo)));
                columns.push(("wilson_hi".into(), format_f64(hi)));
                columns.push(("reference".into(), format_f64(reference)));
                columns.push(("dim".into(), format_f64(dim)));
                columns.push(("eps_slack".into(), format_f64(eps)));
            }
            Kind::InitialScale => {
                let events = metric("cell_event");
                let bounds = metric("bounds_hold");
                let n = events.len();
                let rate = |v: &[f64]| {
                    if v.is_empty() {
                        0.0
                    } else {
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                };
                // Cell-event reference 1 - rho * L0^{-(p-d)} at the default
                // probability exponent p = d + 2.
                let reference =
                    (1.0 - knobs["density"] * knobs["side"].powi(-2)).max(0.0);
                columns.push(("n".into(), n.to_string()));
                columns.push(("cell_event_rate".into(), format_f64(rate(&events))));
                columns.push(("bounds_rate".into(), format_f64(rate(&bounds))));
                columns.push(("cell_event_reference".into(), format_f64(reference)));
            }
            Kind::LocalizationProfile => {
                let mut fits = 0usize;
                let mut passes = 0usize;
                for r in &cell_rows {
                    if r.metric.ends_with(".decay_m") {
                        let r2 = cell_rows
                            .iter()
                            .find(|q| {
                                q.realization == r.realization
                                    && q.metric
                                        == r.metric.replace(".decay_m", ".decay_r2")
                            })
                            .map_or(0.0, |q| q.value);
                        fits += 1;
                        if r.value > 0.0 && r2 >= 0.9 && r.flags.is_empty() {
                            passes += 1;
                        }
                    }
                }
                columns.push(("fits".into(), fits.to_string()));
                columns.push((
                    "pass_fraction".into(),
                    format_f64(passes as f64 / fits.max(1) as f64),
                ));
            }
            Kind::DynamicalMoment => {
                let sups = metric("sup");
                let n = sups.len();
                let max = sups.iter().copied().fold(0.0f64, f64::max);
                let mean = sups.iter().sum::<f64>() / n.max(1) as f64;
                columns.push(("n".into(), n.to_string()));
                columns.push(("sup_mean".into(), format_f64(mean)));
                columns.push(("sup_max".into(), format_f64(max)));
            }
            Kind::Stability => {
                let shifts = metric("max_shift");
                let bounds = metric("sup_bound");
                let crossings = metric("crossings");
                columns.push(("n".into(), shifts.len().to_string()));
                columns.push((
                    "max_shift_max".into(),
                    format_f64(shifts.iter().copied().fold(0.0f64, f64::max)),
                ));
                columns.push((
                    "sup_bound_max".into(),
                    format_f64(bounds.iter().copied().fold(0.0f64, f64::max)),
                ));
                columns.push((
                    "crossings".into(),
                    format_f64(crossings.iter().sum::<f64>()),
                ));
            }
            Kind::FreeSiteDemo => {
                let found = metric("found");
                let tried = metric("tried");
                let n = found.len();
                columns.push(("n".into(), n.to_string()));
                columns.push((
                    "found_rate".into(),
                    format_f64(found.iter().sum::<f64>() / n.max(1) as f64),
                ));
                columns.push((
                    "tried_mean".into(),
                    format_f64(tried.iter().sum::<f64>() / tried.len().max(1) as f64),
                ));
            }
        }
        out.push(SummaryRow { columns });
    }
    out
}

/// Pooled log-log fit of max shift against delta, used by the stability
/// plot annotation.
pub fn stability_loglog(rows: &[ResultRow]) -> Option<loclab::stats::LineFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in rows {
        if r.metric == "max_shift" && r.value > 0.0 {
            if let Some(delta) = r.cell.get("delta") {
                if *delta > 0.0 {
                    xs.push(delta.ln());
                    ys.push(r.value.ln());
                }
            }
        }
    }
    if xs.len() >= 2 {
        Some(fit_line(&xs, &ys))
    } else {
        None
    }
}
