//! Regenerates the bundled synthetic geography under `data/`.
//!
//! Usage: `cargo run -p monge-forge --example gen_synthetic_data [out_dir]`

use monge_forge::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data".to_string());
    std::fs::create_dir_all(&out)?;
    let land = synth::synthetic_land();
    let land_path = format!("{out}/land_synthetic.csv");
    synth::write_land_csv(&land_path, &land)?;
    let pop = synth::synthetic_population(&land, 0);
    let pop_path = format!("{out}/population_synthetic.csv");
    synth::write_population_csv(&pop_path, &pop)?;
    println!("wrote {} land cells to {land_path}", land.len());
    println!("wrote {} weighted points to {pop_path}", pop.len());
    Ok(())
}
