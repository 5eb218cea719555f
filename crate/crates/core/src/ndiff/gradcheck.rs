//! Central finite-difference checks of tape gradients.

use serde::Serialize;

use super::{NdError, ParamStore, Rng, Session, Var};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    /// Relative error bound the bulk of components must meet.
    pub rel: f64,
    /// Bound on the single worst component.
    pub max: f64,
    pub min_fraction: f64,
    /// Magnitude below which relative error falls back to absolute error.
    pub floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-4,
            max: 1e-3,
            min_fraction: 0.95,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub components: usize,
    pub within_tolerance: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Up to five components with the largest relative error.
    pub worst: Vec<Mismatch>,
}

impl CheckResult {
    pub fn fraction(&self) -> f64 {
        if self.components == 0 {
            1.0
        } else {
            self.within_tolerance as f64 / self.components as f64
        }
    }

    /// Pools several evaluation points into one verdict.
    pub fn merge(name: &str, parts: Vec<CheckResult>, tol: &Tolerance) -> CheckResult {
        let components = parts.iter().map(|p| p.components).sum();
        let within = parts.iter().map(|p| p.within_tolerance).sum();
        let max_rel = parts.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
        let mut worst: Vec<Mismatch> = parts.into_iter().flat_map(|p| p.worst).collect();
        worst.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
        worst.truncate(5);
        let mut r = CheckResult {
            name: name.to_string(),
            components,
            within_tolerance: within,
            max_rel_error: max_rel,
            passed: false,
            worst,
        };
        r.passed = r.fraction() >= tol.min_fraction && r.max_rel_error < tol.max;
        r
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares tape gradients of the scalar built by `objective` against central
/// differences for every component of `store` (or a random sample of at most
/// `max_components`).
pub fn check_params<F>(
    name: &str,
    store: &ParamStore,
    objective: F,
    tol: &Tolerance,
    max_components: Option<(usize, &mut Rng)>,
    fault: Option<&'static str>,
) -> Result<CheckResult, NdError>
where
    F: Fn(&mut Session) -> Result<Var, NdError>,
{
    let mut s = Session::new(store);
    if let Some(op) = fault {
        s.tape.inject_fault(op);
    }
    let loss = objective(&mut s)?;
    let grads = s.param_grads(loss)?;

    let mut coords: Vec<(usize, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).numel()).map(move |k| (id.index(), k)))
        .collect();
    if let Some((limit, rng)) = max_components {
        if coords.len() > limit {
            rng.shuffle(&mut coords);
            coords.truncate(limit);
            coords.sort_unstable();
        }
    }

    let eval = |perturbed: &ParamStore| -> Result<f64, NdError> {
        let mut s = Session::new(perturbed);
        let l = objective(&mut s)?;
        Ok(s.tape.value(l).data()[0])
    };

    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    let mut within = 0;
    let mut max_rel: f64 = 0.0;
    let mut worst = Vec::new();
    for &(p, k) in &coords {
        let id = ids[p];
        let orig = store.get(id).data()[k];
        work.get_mut(id).data_mut()[k] = orig + tol.step;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = orig - tol.step;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * tol.step);
        let analytic = grads[p].data()[k];
        let rel = relative_error(analytic, numeric, tol.floor);
        if rel < tol.rel {
            within += 1;
        }
        max_rel = max_rel.max(rel);
        worst.push(Mismatch {
            param: store.name(id).to_string(),
            index: k,
            analytic,
            numeric,
            rel_error: rel,
        });
    }
    worst.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    worst.truncate(5);
    let mut r = CheckResult {
        name: name.to_string(),
        components: coords.len(),
        within_tolerance: within,
        max_rel_error: max_rel,
        passed: false,
        worst,
    };
    r.passed = r.fraction() >= tol.min_fraction && r.max_rel_error < tol.max;
    Ok(r)
}
