//! Per-client uplink cost by rank, for the DistilBERT layout and for a
//! custom layout given as `m n matrices reference_total`.

use hetlora::cli::{comm_table, distilbert_table, render_table};

fn main() -> hetlora::Result<()> {
    print!("{}", render_table(&distilbert_table()));
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if let [m, n, k, total] = args[..] {
        println!();
        let rows = comm_table(m, n, k, &[16, 8, 4], &[(0.25, 16), (0.75, 4)], total as u64)?;
        print!("{}", render_table(&rows));
    }
    Ok(())
}
