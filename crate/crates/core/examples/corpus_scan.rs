// Counting captions with negation words, and those where a noun follows the
// negation, across several text shards.

use std::error::Error;
use std::fs;

use partial_mlr::corpuscan::{
    classify_caption, scan_corpus, tokenize, InputFormat, NegationLexicon, NounList,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let lexicon = NegationLexicon::default();
    let nouns = NounList::default();
    for caption in ["I'm not getting any younger Magnet", "a photo of a dog", "Nothing to see", "no psychometrics"] {
        let tokens = tokenize(caption);
        println!("{caption:?} -> {:?}", classify_caption(&tokens, &lexicon, &nouns));
    }

    let dir = tempfile::tempdir()?;
    let a = dir.path().join("shard-a.txt");
    let b = dir.path().join("shard-b.tsv");
    fs::write(&a, "A dog on a beach\nThis is not a cat\n\nNo parking sign\n")?;
    fs::write(&b, "id\tcaption\n1\tsunset over the lake\n2\tdon't feed the birds\n")?;

    let txt = scan_corpus(std::slice::from_ref(&a), &lexicon, &nouns, 1, InputFormat::Txt)?;
    let tsv = scan_corpus(&[b], &lexicon, &nouns, 1, InputFormat::Tsv { col: 1 })?;
    println!("txt shard: {}", txt.stats.summary());
    println!("tsv shard: {}", tsv.stats.summary());

    // a missing shard is reported, the rest is still counted
    let report = scan_corpus(&[a, dir.path().join("missing.txt")], &lexicon, &nouns, 2, InputFormat::Txt)?;
    println!("with a missing shard: {} ({} error)", report.stats.summary(), report.errors.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
