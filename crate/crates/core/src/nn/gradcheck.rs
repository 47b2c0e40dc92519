use rand::Rng;

use super::{NnError, ParamStore, Tape, Var};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`
/// so that coordinates with vanishing gradients compare in absolute terms.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst: Option<CoordinateError>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `backward()` against central differences `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `loss_fn` must rebuild the whole graph from the store it is given and be
/// deterministic. Tensors with at most `per_param` entries are checked
/// exhaustively; larger ones check their largest-gradient entry plus random
/// others.
pub fn finite_diff_gradcheck<L>(
    store: &ParamStore<f64>,
    loss_fn: L,
    h: f64,
    per_param: usize,
    rng: &mut impl Rng,
) -> Result<GradcheckReport, NnError>
where
    L: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss)?;
    let grads = tape.param_grads(store);

    let eval = |s: &ParamStore<f64>| -> Result<f64, NnError> {
        let mut t = Tape::new();
        let l = loss_fn(s, &mut t)?;
        Ok(t.scalar(l))
    };

    let mut probe = store.clone();
    let mut report = GradcheckReport::default();
    for id in store.ids() {
        let g = grads.get(id);
        let n = g.len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let largest = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, _)| k)
                .unwrap_or(0);
            std::iter::once(largest)
                .chain((1..per_param).map(|_| rng.random_range(0..n)))
                .collect()
        };
        for k in coords {
            let original = store.get(id).as_slice().expect("standard layout")[k];
            probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = original + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = original - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = g.as_slice().expect("standard layout")[k];
            let rel_err = relative_error(analytic, numeric);
            report.checked += 1;
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                report.worst = Some(CoordinateError {
                    param: store.name(id).to_string(),
                    index: k,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
