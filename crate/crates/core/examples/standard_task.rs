//! Print the standard synthetic task configuration as JSON.

fn main() {
    let cfg = duc_core::shift_sim::TaskConfig::standard();
    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
}
