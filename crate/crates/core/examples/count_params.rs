//! Prints the trainable parameter count of every conditioning method for the
//! paper and desk presets.
//!
//!     cargo run --example count_params

use ctxbert::model::{count_parameters, ConcatMode, ContextualBert, MethodKind, ModelConfig};

fn main() -> ctxbert::Result<()> {
    for preset in ["paper", "desk"] {
        println!("{preset}");
        for method in MethodKind::ALL {
            let config = ModelConfig::preset(preset, method)?;
            let mut literal = config.clone();
            literal.c_mode = ConcatMode::Literal;
            // Enumerating the built model must agree with the closed form.
            let built = ContextualBert::<f32>::zeroed(config.clone())?.parameter_count();
            assert_eq!(built, count_parameters(&config));
            println!(
                "  {:<6} {:>9}   literal concat {:>9}",
                method.to_string(),
                built,
                count_parameters(&literal)
            );
        }
    }
    Ok(())
}
