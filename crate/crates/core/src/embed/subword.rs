//! Character n-gram enumeration and the bucket hash for subword vectors.

/// FNV-1a over UTF-8 bytes. Fixed so saved models hash identically on
/// every platform.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

pub fn bucket_of(ngram: &str, bucket_count: usize) -> usize {
    (fnv1a_64(ngram.as_bytes()) % bucket_count as u64) as usize
}

/// Enumerate the character n-grams of a boundary-wrapped token.
///
/// The token is wrapped as `<token>`, then every n-gram of length
/// `nmin..=nmax` is listed by length and position. The whole wrapped token is
/// appended once at the end unless the enumeration already produced it.
pub fn subword_ngrams(token: &str, nmin: usize, nmax: usize) -> Vec<String> {
    assert!(!token.is_empty(), "subword_ngrams on empty token");
    assert!(nmin >= 1 && nmin <= nmax, "bad n-gram range {nmin}..{nmax}");
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let w = wrapped.len();
    let mut grams = Vec::new();
    let mut has_whole = false;
    for n in nmin..=nmax {
        if n > w {
            break;
        }
        for start in 0..=w - n {
            let gram: String = wrapped[start..start + n].iter().collect();
            if n == w {
                has_whole = true;
            }
            grams.push(gram);
        }
    }
    if !has_whole {
        grams.push(wrapped.iter().collect());
    }
    grams
}
