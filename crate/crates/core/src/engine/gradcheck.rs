use crate::engine::graph::{BackwardMode, Graph, Selector};
use crate::engine::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Human-readable coordinate with the largest error, e.g. `input[3]`.
    pub worst: String,
    pub checked: usize,
    pub passed: bool,
}

/// Checks the gradient of `⟨output, projection⟩` with respect to every input
/// coordinate and every parameter entry.
///
/// Relative error is `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_difference_check(
    graph: &Graph,
    x: &Tensor,
    projection: &Tensor,
    h: f32,
    tolerance: f64,
) -> Result<GradCheckReport> {
    assert!(h > 0.0, "step must be positive");
    let acts = graph.forward(x)?;
    let analytic = acts.backward(Selector::Upstream(projection), BackwardMode::Standard)?;
    drop(acts);

    let objective = |g: &Graph, x: &Tensor| -> Result<f64> {
        let out = g.predict(x)?;
        Ok(out
            .data()
            .iter()
            .zip(projection.data())
            .map(|(&o, &p)| o as f64 * p as f64)
            .sum())
    };

    let mut worst = (0.0f64, String::from("none"));
    let mut checked = 0;
    let mut record = |label: String, a: f32, num: f64| {
        let a = a as f64;
        let err = (a - num).abs() / 1f64.max(a.abs()).max(num.abs());
        if err > worst.0 || checked == 0 {
            worst = (err, label);
        }
        checked += 1;
    };

    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = objective(graph, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = objective(graph, &probe)?;
        probe.data_mut()[i] = orig;
        record(
            format!("input[{i}]"),
            analytic.input.data()[i],
            (up - down) / (2.0 * h as f64),
        );
    }

    let mut g = graph.clone();
    for p in 0..graph.params().len() {
        for i in 0..graph.params()[p].value.len() {
            let orig = g.params()[p].value.data()[i];
            g.params_mut()[p].value.data_mut()[i] = orig + h;
            let up = objective(&g, x)?;
            g.params_mut()[p].value.data_mut()[i] = orig - h;
            let down = objective(&g, x)?;
            g.params_mut()[p].value.data_mut()[i] = orig;
            record(
                format!("{}[{i}]", graph.params()[p].name),
                analytic.params[p].data()[i],
                (up - down) / (2.0 * h as f64),
            );
        }
    }

    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
        passed: worst.0 <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::models::{build, Architecture, ModelSpec};

    fn check(arch: Architecture, hidden: usize) -> GradCheckReport {
        let mut spec = ModelSpec::default_for(arch);
        spec.hidden = hidden;
        spec.depth = 2;
        spec.kernel = 3;
        spec.dense = 6;
        let model = build(&spec, Task::Classification { n_classes: 3 }, 5, 3, 4).unwrap();
        let x = Tensor::from_fn(&[2, 5, 3], |i| ((i * 7919) % 23) as f32 / 11.0 - 1.0);
        let proj = Tensor::from_fn(&[2, 3], |i| [0.7, -1.3, 0.4, 1.1, -0.2, 0.9][i]);
        finite_difference_check(model.graph(), &x, &proj, 1e-3, 1e-3).unwrap()
    }

    #[test]
    fn small_mlp() {
        let r = check(Architecture::Mlp, 6);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn small_conv_net() {
        let r = check(Architecture::TempCnn, 4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn recurrent_cells() {
        for arch in [Architecture::Rnn, Architecture::Lstm, Architecture::Gru] {
            let r = check(arch, 4);
            assert!(r.passed, "{arch}: {r:?}");
        }
    }
}
