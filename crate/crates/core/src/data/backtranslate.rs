use std::collections::HashMap;

use super::corpus::Preprocessor;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::search::beam_search;
use crate::tensor::Real;
use crate::vision::FeatureStore;

/// Images for a multimodal reverse model: the feature store and the
/// line-number index into it.
#[derive(Clone, Copy)]
pub struct ImageLookup<'a, T> {
    pub features: &'a FeatureStore<T>,
    pub index: &'a HashMap<usize, String>,
}

/// Translates target-language lines back into the source language with a
/// reverse model. Output has exactly one line per input line; lines that
/// tokenize to nothing stay empty.
pub fn back_translate<T: Real, S: AsRef<str>>(
    reverse: &Model<T>,
    preprocessor: &Preprocessor,
    lines: &[S],
    images: Option<ImageLookup<'_, T>>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let ids = preprocessor.encode_source(line.as_ref());
        if ids.is_empty() {
            out.push(String::new());
            continue;
        }
        let image = match (reverse.is_multimodal(), images) {
            (false, _) => None,
            (true, None) => return Err(Error::Input("multimodal reverse model needs image features".into())),
            (true, Some(lookup)) => {
                let id = lookup
                    .index
                    .get(&(i + 1))
                    .ok_or_else(|| Error::Input(format!("line {} has no image in the index", i + 1)))?;
                Some(lookup.features.get(id).ok_or_else(|| Error::Feature {
                    image_id: id.clone(),
                    detail: format!("referenced by line {} but not in the feature file", i + 1),
                })?)
            }
        };
        let hyp = beam_search(reverse, &ids, image, beam, max_len)?;
        out.push(preprocessor.decode_target(&hyp.tokens));
    }
    Ok(out)
}
