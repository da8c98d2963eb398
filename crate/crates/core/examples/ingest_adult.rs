//! UCI Adult preprocessing on an inline sample.
//!
//! `cargo run --example ingest_adult`

use nadpvi::experiment::ingest_adult_text;

const SAMPLE: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, >50K
52, ?, 209642, HS-grad, 9, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 45, United-States, >50K
";

fn main() -> nadpvi::Result<()> {
    let d = ingest_adult_text(SAMPLE, None)?;
    let m = &d.manifest;
    println!(
        "{} features, {} rows kept, {} dropped",
        m.feature_count,
        d.train.len(),
        m.dropped_train_rows
    );
    println!("dropped columns: {:?}", m.dropped_columns);
    for (name, v) in m.features.iter().zip(&d.train[0].x) {
        println!("{name:<40} {v:.3}");
    }
    Ok(())
}
