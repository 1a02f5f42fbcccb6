use super::{AutogradError, Tape, Tensor, Var};

/// Outcome of a central finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(parameter, entry)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
}

fn evaluate<F, E>(params: &[Tensor<f64>], f: &F) -> Result<f64, E>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var, E>,
    E: From<AutogradError>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p, false))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != [1, 1] {
        return Err(AutogradError::Contract(format!("checked function must be scalar, got {:?}", v.shape())).into());
    }
    Ok(v.data()[0])
}

/// Compares the tape's gradient of `f` against central differences with
/// step `step`, over every entry of every tensor in `params`.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
/// `f` must be deterministic; two evaluations at the unperturbed point that
/// disagree are reported as a contract violation.
pub fn finite_difference_check<F, E>(
    params: &mut [Tensor<f64>],
    step: f64,
    floor: f64,
    f: F,
) -> Result<GradCheck, E>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var, E>,
    E: From<AutogradError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|p| tape.param(p, true))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(params.iter())
            .map(|(v, p)| match tape.grad(*v) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; p.len()],
            })
            .collect()
    };

    let base = evaluate(params, &f)?;
    if evaluate(params, &f)? != base {
        return Err(AutogradError::Contract("checked function is not deterministic".into()).into());
    }

    let mut report = GradCheck { max_rel_err: 0.0, worst: None, entries: 0 };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            params[pi].data_mut()[ei] = orig + step;
            let plus = evaluate(params, &f);
            params[pi].data_mut()[ei] = orig - step;
            let minus = evaluate(params, &f);
            params[pi].data_mut()[ei] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
