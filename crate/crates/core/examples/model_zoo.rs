//! Build every architecture, then rebuild each for a shrunken input the way
//! a deletion cycle does.

use roar_eo::data::Task;
use roar_eo::engine::Tensor;
use roar_eo::models::{build, resize_for_input, Architecture, ModelSpec};

fn main() -> roar_eo::Result<()> {
    let head = Task::Classification { n_classes: 3 };
    for arch in Architecture::ALL {
        let spec = ModelSpec::default_for(arch);
        let full = build(&spec, head, 12, 8, 0)?;
        let small = resize_for_input(&spec, head, 3, 2, 1)?;
        let y = small.predict(&Tensor::zeros(&[4, 3, 2]))?;
        println!(
            "{:>8}: {:>7} params on 12x8, {:>6} on 3x2, output {:?} {}",
            arch.name(),
            full.graph().n_parameters(),
            small.graph().n_parameters(),
            y.shape(),
            small.adjustments().join("; ")
        );
    }
    Ok(())
}
