//! Reading and writing MOTChallenge text files.
//!
//! cargo run --example mot_io

use transtrack::io::{parse_mot, parse_mot_with, write_results, MotKind, ParseOptions};

const GT: &str = "\
1,1,100,50,30,60,1,1,1.0
1,2,200,80,25,55,1,1,0.2
1,3,10,10,5,5,0,7,1.0
2,1,104,50,30,60,1,1,1.0
2,2,205,80,25,55,1,1,0.9
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // class-7 and conf-0 rows follow the benchmark conventions
    let all = parse_mot(GT.as_bytes(), MotKind::Gt)?;
    println!("kept {} gt boxes over {} frames", all.iter().map(|f| f.entries.len()).sum::<usize>(), all.len());
    let visible = parse_mot_with(GT.as_bytes(), MotKind::Gt, &ParseOptions { min_visibility: 0.5, ..ParseOptions::default() })?;
    println!("with visibility >= 0.5: {}", visible.iter().map(|f| f.entries.len()).sum::<usize>());

    let text = write_results(&all)?;
    print!("\nas a result file:\n{text}");
    let back = parse_mot(text.as_bytes(), MotKind::Result)?;
    println!("round trip equal: {}", back.iter().zip(&all).all(|(a, b)| a.entries.iter().zip(&b.entries).all(|(x, y)| x.id == y.id && x.bbox == y.bbox)));

    match parse_mot("1,1,10,10,abc,5,1,1,1\n".as_bytes(), MotKind::Gt) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("\nmalformed input: {e}"),
    }
    Ok(())
}
