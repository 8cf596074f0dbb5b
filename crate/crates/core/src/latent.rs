//! Walking and doing arithmetic in caption-embedding space.
//!
//! Arithmetic is accumulated in f64 and never renormalized. Expressions use
//! this grammar (whitespace between tokens is ignored):
//!
//! ```text
//! expr   := string (sign term)*
//! term   := [number '*'] string
//! sign   := '+' | '-'
//! string := '"' { char | '\"' | '\\' } '"'
//! number := decimal float, e.g. 0.5, 2, 1e-1
//! ```
//!
//! `"angry face" - "neutral face" + 0.5*"cat face"` is
//! `e(angry face) - 1 * e(neutral face) + 0.5 * e(cat face)`.

use crate::data::CategoricalImage;
use crate::embeddings::Resolver;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::tensor::Tensor;

/// `steps` points from `a` to `b` inclusive. Point `k` is
/// `((steps-1-k) * a + k * b) / (steps-1)` so both ends are exact and
/// reversing the arguments reverses the list exactly.
pub fn interpolate(a: &[f32], b: &[f32], steps: usize) -> Result<Vec<Vec<f32>>> {
    if steps < 2 {
        return Err(Error::Usage(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if a.len() != b.len() {
        return Err(Error::dim("interpolate", &[a.len()], &[b.len()]));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| {
            let (wa, wb) = ((steps - 1 - k) as f64 / last, k as f64 / last);
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (wa * x as f64 + wb * y as f64) as f32)
                .collect()
        })
        .collect())
}

fn generate_all(model: &Generator, embeddings: &[Vec<f32>], noise: &[f32]) -> Result<Vec<CategoricalImage>> {
    let cfg = model.config();
    if noise.len() != cfg.noise_dim {
        return Err(Error::dim("noise", &[noise.len()], &[cfg.noise_dim]));
    }
    let b = embeddings.len();
    let mut flat = Vec::with_capacity(b * cfg.embed_dim);
    for e in embeddings {
        if e.len() != cfg.embed_dim {
            return Err(Error::dim("embedding", &[e.len()], &[cfg.embed_dim]));
        }
        flat.extend_from_slice(e);
    }
    let noise = Tensor::new([b, cfg.noise_dim], noise.repeat(b))?;
    let probs = model.generate_batch(&Tensor::new([b, cfg.embed_dim], flat)?, &noise)?;
    let n = cfg.output_size;
    let per = n * n * cfg.channels_out;
    probs
        .data()
        .chunks(per)
        .map(|c| CategoricalImage::decode(&Tensor::new([n, n, cfg.channels_out], c.to_vec())?))
        .collect()
}

/// Decoded generations along the segment from `a` to `b` with fixed noise.
pub fn walk(model: &Generator, a: &[f32], b: &[f32], steps: usize, noise: &[f32]) -> Result<Vec<CategoricalImage>> {
    generate_all(model, &interpolate(a, b, steps)?, noise)
}

/// `pos - neg`, kept in f64 so that adding `neg` back returns `pos`.
pub fn feature_vector(pos: &[f32], neg: &[f32]) -> Result<Vec<f64>> {
    if pos.len() != neg.len() {
        return Err(Error::dim("feature_vector", &[pos.len()], &[neg.len()]));
    }
    Ok(pos.iter().zip(neg).map(|(&p, &n)| p as f64 - n as f64).collect())
}

/// `base + sum_i weight_i * v_i`, accumulated left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct ArithmeticExpr {
    pub base: Vec<f32>,
    pub terms: Vec<(Vec<f32>, f64)>,
}

impl ArithmeticExpr {
    pub fn new(base: Vec<f32>) -> Self {
        ArithmeticExpr { base, terms: Vec::new() }
    }

    pub fn add(mut self, v: Vec<f32>, weight: f64) -> Self {
        self.terms.push((v, weight));
        self
    }

    pub fn result(&self) -> Result<Vec<f32>> {
        let mut acc: Vec<f64> = self.base.iter().map(|&v| v as f64).collect();
        for (v, w) in &self.terms {
            if v.len() != acc.len() {
                return Err(Error::dim("arithmetic term", &[v.len()], &[acc.len()]));
            }
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += w * x as f64;
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}

pub fn apply_expr(expr: &ArithmeticExpr, model: &Generator, noise: &[f32]) -> Result<CategoricalImage> {
    Ok(generate_all(model, &[expr.result()?], noise)?.remove(0))
}

/// A parsed expression whose prompts are not yet embedded.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptExpr {
    pub base: String,
    pub terms: Vec<(String, f64)>,
}

impl PromptExpr {
    pub fn prompts(&self) -> Vec<&str> {
        std::iter::once(self.base.as_str())
            .chain(self.terms.iter().map(|(p, _)| p.as_str()))
            .collect()
    }

    pub fn resolve(&self, resolver: &Resolver) -> Result<ArithmeticExpr> {
        let mut vecs = resolver.resolve_all(&self.prompts())?.into_iter();
        let base = vecs.next().expect("base is always present");
        Ok(ArithmeticExpr {
            base,
            terms: vecs.zip(&self.terms).map(|(v, (_, w))| (v, *w)).collect(),
        })
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, what: &str) -> Error {
        Error::Usage(format!("expression error at column {}: {what} in {:?}", self.pos + 1, self.src))
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn string(&mut self) -> Result<String> {
        self.skip_ws();
        if self.peek() != Some('"') {
            return Err(self.err("expected a quoted prompt"));
        }
        self.pos += 1;
        let mut out = String::new();
        loop {
            let c = self.peek().ok_or_else(|| self.err("unterminated string"))?;
            self.pos += c.len_utf8();
            match c {
                '"' => break,
                '\\' => {
                    let e = self.peek().ok_or_else(|| self.err("unterminated escape"))?;
                    if e != '"' && e != '\\' {
                        return Err(self.err("only \\\" and \\\\ escapes are allowed"));
                    }
                    self.pos += 1;
                    out.push(e);
                }
                c => out.push(c),
            }
        }
        if out.trim().is_empty() {
            return Err(self.err("empty prompt"));
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<(String, f64)> {
        self.skip_ws();
        if self.peek() == Some('"') {
            return Ok((self.string()?, 1.0));
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) {
            self.pos += 1;
        }
        let w: f64 = self.src[start..self.pos]
            .parse()
            .map_err(|_| self.err("expected a weight or a quoted prompt"))?;
        if !w.is_finite() {
            return Err(self.err("weight must be finite"));
        }
        self.skip_ws();
        if self.peek() != Some('*') {
            return Err(self.err("expected '*' after weight"));
        }
        self.pos += 1;
        Ok((self.string()?, w))
    }
}

pub fn parse_expr(src: &str) -> Result<PromptExpr> {
    let mut p = Parser { src, pos: 0 };
    let base = p.string()?;
    let mut terms = Vec::new();
    loop {
        p.skip_ws();
        let sign = match p.peek() {
            None => break,
            Some('+') => 1.0,
            Some('-') => -1.0,
            Some(_) => return Err(p.err("expected '+' or '-'")),
        };
        p.pos += 1;
        let (prompt, w) = p.term()?;
        terms.push((prompt, sign * w));
    }
    Ok(PromptExpr { base, terms })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::{Conditioning, ModelConfig};

    #[test]
    fn interpolation_examples() {
        let a = vec![0.0, 1.0];
        let b = vec![2.0, 5.0];
        assert_eq!(interpolate(&a, &b, 2).unwrap(), vec![a.clone(), b.clone()]);
        assert_eq!(interpolate(&a, &b, 3).unwrap()[1], vec![1.0, 3.0]);
        assert!(interpolate(&a, &b, 1).unwrap_err().is_usage());
    }

    #[test]
    fn feature_vector_examples() {
        let a = vec![0.3f32, -1.7, 2.0];
        let b = vec![0.1f32, 0.2, -0.9];
        assert!(feature_vector(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        let f = feature_vector(&a, &b).unwrap();
        let back: Vec<f32> = f.iter().zip(&b).map(|(d, &y)| (d + y as f64) as f32).collect();
        assert_eq!(back, a);
    }

    #[test]
    fn parse_grammar() {
        let e = parse_expr(r#""angry face" - "neutral face" + "cat face""#).unwrap();
        assert_eq!(e.base, "angry face");
        assert_eq!(e.terms, vec![("neutral face".into(), -1.0), ("cat face".into(), 1.0)]);
        let e = parse_expr(r#" "a"+0.5*"b" -2 * "c \"q\"" + 1e-1*"d""#).unwrap();
        assert_eq!(
            e.terms,
            vec![("b".into(), 0.5), ("c \"q\"".into(), -2.0), ("d".into(), 0.1)]
        );
        for bad in [r#""a" +"#, r#""a" * "b""#, r#"a + "b""#, r#""a" + 2 "b""#, r#""unterminated"#, r#""""#, r#""a" "b""#] {
            assert!(parse_expr(bad).unwrap_err().is_usage(), "{bad}");
        }
    }

    fn model() -> Generator {
        Generator::build(ModelConfig::new(2, 4, 3, 1, Conditioning::Film, 4), 3).unwrap()
    }

    fn emb(seed: u32) -> Vec<f32> {
        (0..384u32).map(|i| ((i * 7 + seed * 13) % 23) as f32 / 11.0 - 1.0).collect()
    }

    #[test]
    fn expressions_that_cancel_generate_the_base() {
        let m = model();
        let noise = [0.0; 2];
        let base = apply_expr(&ArithmeticExpr::new(emb(1)), &m, &noise).unwrap();
        let zero = ArithmeticExpr::new(emb(1)).add(emb(2), 0.0).add(emb(3), 0.0);
        assert_eq!(apply_expr(&zero, &m, &noise).unwrap(), base);
        let cancel = ArithmeticExpr::new(emb(1)).add(emb(2), 1.0).add(emb(2), -1.0);
        assert_eq!(cancel.result().unwrap(), emb(1));
        assert_eq!(apply_expr(&cancel, &m, &noise).unwrap(), base);
    }

    #[test]
    fn walk_endpoints_match_direct_generation() {
        let m = model();
        let noise = [0.3, -0.2];
        let frames = walk(&m, &emb(1), &emb(2), 4, &noise).unwrap();
        assert_eq!(frames.len(), 4);
        assert_eq!(frames[0], m.generate_image(&emb(1), &noise).unwrap());
        assert_eq!(frames[3], m.generate_image(&emb(2), &noise).unwrap());
        assert_eq!(frames, walk(&m, &emb(1), &emb(2), 4, &noise).unwrap());
    }

    fn vec384() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-4f32..4.0, 384)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn interpolation_reverses_and_stays_on_the_segment(a in vec384(), b in vec384(), steps in 2usize..12) {
            let fwd = interpolate(&a, &b, steps).unwrap();
            let mut rev = interpolate(&b, &a, steps).unwrap();
            rev.reverse();
            prop_assert_eq!(&fwd, &rev);
            prop_assert_eq!(&fwd[0], &a);
            prop_assert_eq!(&fwd[steps - 1], &b);
            for (k, p) in fwd.iter().enumerate() {
                let t = k as f64 / (steps - 1) as f64;
                for i in 0..384 {
                    let expect = a[i] as f64 + t * (b[i] as f64 - a[i] as f64);
                    prop_assert!((p[i] as f64 - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
                }
            }
        }

        #[test]
        fn feature_vectors_invert_and_are_symmetric(a in vec384(), b in vec384()) {
            let f = feature_vector(&a, &b).unwrap();
            let back: Vec<f32> = f.iter().zip(&b).map(|(d, &y)| (d + y as f64) as f32).collect();
            prop_assert_eq!(&back, &a);
            let r = feature_vector(&b, &a).unwrap();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert_eq!(norm(&f), norm(&r));
            let expr = ArithmeticExpr::new(b.clone()).add(a.clone(), 1.0).add(b.clone(), -1.0);
            prop_assert_eq!(expr.result().unwrap(), a);
        }
    }
}
