//! Experiment spec files: a flat TOML format with an `[experiment]`
//! section, an optional `[grid]` of parameter value lists, and an
//! optional `[constants]` table. Every parameter name must be known to
//! the experiment kind, and the task count must fit the budget.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SamplerStats,
    InitialScale,
    GoodBoxSweep,
    LocalizationProfile,
    DynamicalMoment,
    Stability,
    DensitySweep,
    FreeSiteDemo,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::SamplerStats,
        Kind::InitialScale,
        Kind::GoodBoxSweep,
        Kind::LocalizationProfile,
        Kind::DynamicalMoment,
        Kind::Stability,
        Kind::DensitySweep,
        Kind::FreeSiteDemo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::SamplerStats => "sampler-stats",
            Kind::InitialScale => "initial-scale",
            Kind::GoodBoxSweep => "good-box-sweep",
            Kind::LocalizationProfile => "localization-profile",
            Kind::DynamicalMoment => "dynamical-moment",
            Kind::Stability => "stability",
            Kind::DensitySweep => "density-sweep",
            Kind::FreeSiteDemo => "free-site-demo",
        }
    }

    /// Parameter schema of the kind. Optional knobs carry their default.
    pub fn knobs(&self) -> &'static [Knob] {
        use Knob as K;
        const SAMPLER: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::opt("thinned", 0.0),
            K::opt("significance", 0.01),
        ];
        const INITIAL: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::req("h"),
            K::opt("eps_slack", loclab::msa::DEFAULT_EPS_SLACK),
            K::opt("upper_factor", loclab::msa::DEFAULT_CELL_UPPER_FACTOR),
            K::opt("energy_fraction", 0.5),
            K::opt("c", loclab::msa::DEFAULT_OFFDIAG_C),
            K::opt("prefactor", loclab::msa::DEFAULT_RESOLVENT_PREFACTOR),
        ];
        const SWEEP: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::req("h"),
            K::req("energy"),
            K::opt("c", loclab::msa::DEFAULT_OFFDIAG_C),
            K::opt("eps_slack", loclab::msa::DEFAULT_EPS_SLACK),
        ];
        const PROFILE: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::req("h"),
            K::opt("states", 5.0),
        ];
        const MOMENT: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::req("h"),
            K::req("e0"),
            K::opt("p", 2.0),
            K::opt("t_min", 1.0),
            K::opt("t_max", 1000.0),
            K::opt("t_points", 40.0),
        ];
        const STABILITY: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("density"),
            K::req("h"),
            K::req("delta"),
            K::opt("window_lo", 0.0),
            K::req("window_hi"),
            K::opt("perturbations", 4.0),
        ];
        const FREE_SITE: &[Knob] = &[
            K::req("dim"),
            K::req("side"),
            K::req("h"),
            K::opt("density", 0.0),
            K::opt("n_free", 3.0),
            K::opt("c", loclab::msa::DEFAULT_OFFDIAG_C),
            K::opt("eps_slack", loclab::msa::DEFAULT_EPS_SLACK),
        ];
        match self {
            Kind::SamplerStats => SAMPLER,
            Kind::InitialScale => INITIAL,
            Kind::GoodBoxSweep | Kind::DensitySweep => SWEEP,
            Kind::LocalizationProfile => PROFILE,
            Kind::DynamicalMoment => MOMENT,
            Kind::Stability => STABILITY,
            Kind::FreeSiteDemo => FREE_SITE,
        }
    }

    fn from_name(s: &str) -> Option<Kind> {
        Kind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Knob {
    pub name: &'static str,
    pub default: Option<f64>,
}

impl Knob {
    const fn req(name: &'static str) -> Self {
        Knob {
            name,
            default: None,
        }
    }

    const fn opt(name: &'static str, default: f64) -> Self {
        Knob {
            name,
            default: Some(default),
        }
    }
}

/// Raw TOML shape of a spec file.
#[derive(Debug, Deserialize)]
struct RawSpec {
    experiment: RawExperiment,
    #[serde(default)]
    grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    constants: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
struct RawExperiment {
    kind: String,
    id: Option<String>,
    master_seed: u64,
    realizations: u64,
    output: Option<String>,
    budget: Option<u64>,
}

/// A parsed and resolved experiment description.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub id: String,
    pub master_seed: u64,
    pub realizations: u64,
    pub output: Option<String>,
    pub budget: u64,
    /// Grid axes in name order; the cell enumeration is the cartesian
    /// product with the rightmost axis fastest.
    pub grid: BTreeMap<String, Vec<f64>>,
    pub constants: BTreeMap<String, f64>,
}

impl ExperimentSpec {
    pub fn parse(text: &str, fallback_id: &str) -> Result<Self, CliError> {
        let raw: RawSpec = toml::from_str(text)
            .map_err(|e| CliError::Spec(format!("spec does not parse: {e}")))?;
        let kind = Kind::from_name(&raw.experiment.kind).ok_or_else(|| {
            CliError::Spec(format!(
                "unknown experiment kind '{}' (known: {})",
                raw.experiment.kind,
                Kind::ALL.map(|k| k.name()).join(", ")
            ))
        })?;
        let id = raw
            .experiment
            .id
            .unwrap_or_else(|| fallback_id.to_string());
        Ok(ExperimentSpec {
            kind,
            id,
            master_seed: raw.experiment.master_seed,
            realizations: raw.experiment.realizations,
            output: raw.experiment.output,
            budget: raw.experiment.budget.unwrap_or(DEFAULT_BUDGET),
            grid: raw.grid,
            constants: raw.constants,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Spec(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Spec(format!("{} is not UTF-8: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment");
        let spec = Self::parse(text, stem)?;
        Ok((spec, bytes))
    }

    /// Schema problems, empty when the spec is well formed. Budget is
    /// reported separately so `validate` can list it without refusing.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let knobs = self.kind.knobs();
        let known: Vec<&str> = knobs.iter().map(|k| k.name).collect();
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            problems.push(format!(
                "id '{}' must be nonempty and use only [A-Za-z0-9_-]",
                self.id
            ));
        }
        for name in self.grid.keys() {
            if !known.contains(&name.as_str()) {
                problems.push(format!(
                    "unknown grid parameter '{name}' for kind '{}' (known: {})",
                    self.kind,
                    known.join(", ")
                ));
            }
            if self.constants.contains_key(name) {
                problems.push(format!(
                    "parameter '{name}' appears in both [grid] and [constants]"
                ));
            }
        }
        for name in self.constants.keys() {
            if !known.contains(&name.as_str()) {
                problems.push(format!(
                    "unknown constant '{name}' for kind '{}' (known: {})",
                    self.kind,
                    known.join(", ")
                ));
            }
        }
        for knob in knobs {
            if knob.default.is_none()
                && !self.grid.contains_key(knob.name)
                && !self.constants.contains_key(knob.name)
            {
                problems.push(format!(
                    "required parameter '{}' for kind '{}' is missing",
                    knob.name, self.kind
                ));
            }
        }
        problems
    }

    /// Number of grid cells: the product of the axis lengths. An axis
    /// with an empty value list yields zero cells; no grid section yields
    /// one cell.
    pub fn cells(&self) -> u128 {
        self.grid
            .values()
            .map(|v| v.len() as u128)
            .product::<u128>()
    }

    pub fn tasks(&self) -> u128 {
        self.cells() * self.realizations as u128
    }

    pub fn within_budget(&self, budget: u64) -> bool {
        self.tasks() <= budget as u128
    }

    /// Cell coordinate maps in enumeration order (axes sorted by name,
    /// rightmost axis fastest).
    pub fn enumerate_cells(&self) -> Vec<BTreeMap<String, f64>> {
        let mut cells: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
        for (name, values) in &self.grid {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for cell in &cells {
                for &v in values {
                    let mut c = cell.clone();
                    c.insert(name.clone(), v);
                    next.push(c);
                }
            }
            cells = next;
        }
        if self.grid.values().any(|v| v.is_empty()) {
            cells.clear();
        }
        cells
    }

    /// Full knob map for one cell: defaults, overridden by constants,
    /// overridden by the cell's grid coordinates.
    pub fn resolve(&self, cell: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for knob in self.kind.knobs() {
            if let Some(d) = knob.default {
                map.insert(knob.name.to_string(), d);
            }
        }
        for (k, v) in &self.constants {
            map.insert(k.clone(), *v);
        }
        for (k, v) in cell {
            map.insert(k.clone(), *v);
        }
        map
    }
}

/// Outcome of `validate`: never an error, problems are listed.
#[derive(Debug)]
pub struct ValidationReport {
    pub id: String,
    pub kind: Option<Kind>,
    pub problems: Vec<String>,
    pub cells: u128,
    pub realizations: u64,
    pub tasks: u128,
    pub budget: u64,
    pub within_budget: bool,
    /// Derived scale lines, one per (density, side) cell, for kinds that
    /// resolve a scale ladder.
    pub scales: Vec<String>,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "spec '{}' kind {}\n",
            self.id,
            self.kind.map_or("?".into(), |k| k.name().to_string())
        ));
        out.push_str(&format!(
            "cells {} x realizations {} = {} tasks (budget {}): {}\n",
            self.cells,
            self.realizations,
            self.tasks,
            self.budget,
            if self.within_budget {
                "within budget"
            } else {
                "EXCEEDS BUDGET"
            }
        ));
        for line in &self.scales {
            out.push_str(line);
            out.push('\n');
        }
        if self.problems.is_empty() {
            out.push_str("ok: no problems found\n");
        } else {
            for p in &self.problems {
                out.push_str(&format!("problem: {p}\n"));
            }
        }
        out
    }
}

/// Validate without executing. Unreadable or unparseable files come back
/// as a report with the failure listed, not as an error.
pub fn validate(path: &Path, budget_override: Option<u64>) -> ValidationReport {
    let (spec, _) = match ExperimentSpec::load(path) {
        Ok(pair) => pair,
        Err(e) => {
            return ValidationReport {
                id: path.display().to_string(),
                kind: None,
                problems: vec![e.to_string()],
                cells: 0,
                realizations: 0,
                tasks: 0,
                budget: budget_override.unwrap_or(DEFAULT_BUDGET),
                within_budget: true,
                scales: Vec::new(),
            };
        }
    };
    let budget = budget_override.unwrap_or(spec.budget);
    let mut scales = Vec::new();
    for cell in spec.enumerate_cells() {
        let knobs = spec.resolve(&cell);
        let (Some(&density), Some(&side), Some(&dim)) = (
            knobs.get("density"),
            knobs.get("side"),
            knobs.get("dim"),
        ) else {
            continue;
        };
        let eps = knobs
            .get("eps_slack")
            .copied()
            .unwrap_or(loclab::msa::DEFAULT_EPS_SLACK);
        match loclab::msa::derive_scales(density, side, dim as usize, eps) {
            Ok(p) => scales.push(format!(
                "scales at density={density} side={side}: ell0={:.6} E0={:.6e} K={:.6}",
                p.ell0, p.e0, p.k_radius
            )),
            Err(e) => scales.push(format!(
                "scales at density={density} side={side}: not derivable ({e})"
            )),
        }
    }
    ValidationReport {
        id: spec.id.clone(),
        kind: Some(spec.kind),
        problems: spec.problems(),
        cells: spec.cells(),
        realizations: spec.realizations,
        tasks: spec.tasks(),
        budget,
        within_budget: spec.within_budget(budget),
        scales,
    }
}
