//! Loads the switching-cost table from CSV and shows the ceiling bucketing.

use nightjar::cost_model::PrefillCostTable;

fn main() -> nightjar::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reference_prefill_7b.csv");
    let table = PrefillCostTable::from_csv_path(path)?;
    assert_eq!(table, PrefillCostTable::reference_7b());

    println!("lengths {:?}, batches {:?}", table.length_buckets(), table.batch_buckets());
    for (skip, batch) in [(0, 32), (1, 1), (128, 32), (200, 40), (256, 64), (511, 33), (4096, 256)] {
        println!("skip {skip:>5}  B {batch:>4}  ->  {:>7.2} ms", table.cost_ms(skip, batch));
    }
    Ok(())
}
