//! Assemble a graph by hand, compare reverse-mode gradients with central
//! finite differences, and show where guided backpropagation differs.

use roar_eo::engine::{finite_difference_check, BackwardMode, GraphBuilder, Selector, Tensor};

fn main() -> roar_eo::Result<()> {
    let (t, c) = (6, 3);
    let mut g = GraphBuilder::new(&[t, c]);
    let x = g.input();
    let w = g.param("conv", Tensor::from_fn(&[3, c, 4], |i| ((i * 7 % 11) as f32 - 5.0) / 10.0));
    let h = g.conv1d(x, w, None, 1, 1)?;
    let h = g.tanh(h)?;
    let h = g.flatten(h)?;
    let v = g.param("head", Tensor::from_fn(&[t * 4, 2], |i| ((i * 5 % 13) as f32 - 6.0) / 20.0));
    let y = g.matmul(h, v)?;
    let graph = g.finish(y)?;

    let input = Tensor::from_fn(&[2, t, c], |i| (i as f32 * 0.37).sin());
    let projection = Tensor::from_fn(&[2, 2], |i| 1.0 - i as f32 * 0.5);
    let report = finite_difference_check(&graph, &input, &projection, 1e-3, 1e-3)?;
    println!(
        "checked {} coordinates, max relative error {:.2e} at {} -> {}",
        report.checked,
        report.max_rel_error,
        report.worst,
        if report.passed { "pass" } else { "FAIL" }
    );

    // f(x) = -ReLU(x): guided backprop zeroes the negative upstream signal
    let mut g = GraphBuilder::new(&[1]);
    let x = g.input();
    let r = g.relu(x)?;
    let y = g.scale(r, -1.0)?;
    let graph = g.finish(y)?;
    let acts = graph.forward(&Tensor::new(vec![1, 1], vec![2.0])?)?;
    let std = acts.input_gradient(Selector::Columns(&[0]), BackwardMode::Standard)?;
    let guided = acts.input_gradient(Selector::Columns(&[0]), BackwardMode::Guided)?;
    println!("d(-relu)/dx at 2: standard {}, guided {}", std.data()[0], guided.data()[0]);
    Ok(())
}
