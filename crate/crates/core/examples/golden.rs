//! Regenerates `data/golden/quartic_hbar0.1.csv`.
use qtorus::chart::ChartOptions;
use qtorus::expr::{parse, ParamEnv};
use qtorus::oracle::{eigenlevels, Grid1D};
use qtorus::spectra::{fmt17, quantize, QuantizationConfig, System};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = System {
        name: "quartic".into(),
        h0: parse("p^2/2 + q^2/2 + lambda*q^4")?,
        m: None,
        env: ParamEnv::from_pairs(&[("lambda", 0.1)]),
        window: (0.0, 2.0),
        chart: ChartOptions::default(),
        period: None,
    };
    let (chart, corr) = system.build(2)?;
    let table = quantize(&system.name, &chart, &corr, &QuantizationConfig::new(0.1, 2))?;
    let v = |q: f64| 0.5 * q * q + 0.1 * q.powi(4);
    let grid = eigenlevels(&v, 0.1, Grid1D::new(-8.0, 8.0, 512)?, table.rows.len())?;
    let mut out = String::new();
    out.push_str("# system=quartic H=p^2/2+q^2/2+lambda*q^4 lambda=0.1\n");
    out.push_str("# hbar=0.1 window=[0,2] order=2 mu=maslov chart=default\n");
    out.push_str("# grid=sinc-DVR q in [-8,8] n=512\n");
    out.push_str("N,E2,grid\n");
    for (r, e) in table.rows.iter().zip(&grid.levels) {
        out.push_str(&format!("{},{},{}\n", r.n, fmt17(r.energies[1]), fmt17(*e)));
    }
    std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/data/golden/quartic_hbar0.1.csv"), out)?;
    Ok(())
}
