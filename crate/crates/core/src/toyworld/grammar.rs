//! Caption grammar and tokenizer.
//!
//! The scene grammar is bijective: every scene renders to exactly one
//! caption and parses back to the same scene. All other task instructions
//! (edits, transformations, subject placement) draw from the same fixed
//! vocabulary so one tokenizer covers the whole curriculum.

use crate::error::{Error, Result};

use super::{Obj, Scene, CELL_NAMES, COLOR_NAMES, SHAPES};

pub const BOS: usize = 0;
pub const EOS: usize = 1;

/// Every word any generator can emit, one per line in the vocab file.
/// Indices are stable; the tokenizer is just this list.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v = vec!["<bos>", "<eos>"];
    v.extend([
        "a", "big", "small", "circle", "square", "triangle", "at", "the", "top", "middle",
        "bottom", "left", "center", "right", "on", "background", "and", "subject", "first",
        "second", "reconstruct", "image", "remove", "add", "replace", "with", "make", "keep",
        "same", "scene", "move", "everything", "up", "down", "zoom", "in", "out", "turn",
    ]);
    v.extend(COLOR_NAMES);
    v
}

pub struct Tokenizer {
    words: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl Tokenizer {
    pub fn new() -> Self {
        let words: Vec<String> = vocabulary().iter().map(|s| s.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn encode(&self, caption: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        let mut unknown = Vec::new();
        for word in caption.split_whitespace() {
            match self.index.get(word) {
                Some(&id) => ids.push(id),
                None => unknown.push(word.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Tokenizer(unknown));
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&i| self.words.get(i))
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Plain-text vocab file: one token per line, index = line number.
    pub fn write_vocab(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.words.join("\n"))?;
        Ok(())
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

fn obj_phrase(obj: &Obj) -> String {
    format!(
        "a {} {} {} at the {}",
        if obj.big { "big" } else { "small" },
        COLOR_NAMES[obj.color],
        obj.shape.name(),
        CELL_NAMES[obj.cell],
    )
}

/// Canonical scene caption, e.g.
/// "a big red circle at the top left on a white background".
pub fn scene_caption(scene: &Scene) -> String {
    let objs: Vec<String> = scene.objects.iter().map(obj_phrase).collect();
    format!("{} on a {} background", objs.join(" and "), COLOR_NAMES[scene.bg])
}

/// Inverse of [`scene_caption`] over the scene grammar.
pub fn parse_caption(caption: &str) -> Result<Scene> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    let mut pos = 0;
    let mut objects = Vec::new();

    let fail = |what: &str, at: usize| {
        Error::contract(format!("caption parse: expected {what} at word {at}"))
    };

    loop {
        // "a <size> <color> <shape> at the <cell..>"
        if words.get(pos) != Some(&"a") {
            return Err(fail("'a'", pos));
        }
        let big = match words.get(pos + 1) {
            Some(&"big") => true,
            Some(&"small") => false,
            _ => return Err(fail("size word", pos + 1)),
        };
        let color = COLOR_NAMES
            .iter()
            .position(|c| Some(c) == words.get(pos + 2).map(|w| w))
            .ok_or_else(|| fail("color word", pos + 2))?;
        let shape = SHAPES
            .into_iter()
            .find(|s| Some(s.name()) == words.get(pos + 3).copied())
            .ok_or_else(|| fail("shape word", pos + 3))?;
        if words.get(pos + 4) != Some(&"at") || words.get(pos + 5) != Some(&"the") {
            return Err(fail("'at the'", pos + 4));
        }
        pos += 6;
        // Cell names are one or two words; try two first.
        let cell = if pos + 1 < words.len()
            && CELL_NAMES.contains(&format!("{} {}", words[pos], words[pos + 1]).as_str())
        {
            let name = format!("{} {}", words[pos], words[pos + 1]);
            pos += 2;
            CELL_NAMES.iter().position(|c| *c == name).unwrap()
        } else if words.get(pos) == Some(&"center") {
            pos += 1;
            CELL_NAMES.iter().position(|c| *c == "center").unwrap()
        } else {
            return Err(fail("cell name", pos));
        };
        objects.push(Obj { shape, color, cell, big });

        match words.get(pos) {
            Some(&"and") => {
                pos += 1;
                continue;
            }
            Some(&"on") => break,
            _ => return Err(fail("'and' or 'on'", pos)),
        }
    }

    if words.get(pos) != Some(&"on") || words.get(pos + 1) != Some(&"a") {
        return Err(fail("'on a'", pos));
    }
    let bg = COLOR_NAMES
        .iter()
        .position(|c| Some(c) == words.get(pos + 2).map(|w| w))
        .ok_or_else(|| fail("background color", pos + 2))?;
    if words.get(pos + 3) != Some(&"background") || pos + 4 != words.len() {
        return Err(fail("'background' terminator", pos + 3));
    }
    Ok(Scene { bg, objects })
}
