//! Prints the MNIST default configuration as JSON, ready to edit and pass to
//! `airfl run --config`.

fn main() {
    println!("{}", airfl::ExperimentConfig::mnist_defaults().to_json());
}
