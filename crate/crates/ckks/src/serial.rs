//! Binary format for ciphertexts and keys.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HEFL"
//! 4       2     format version (u16 LE, currently 1)
//! 6       1     object kind (1 ciphertext, 2 public key, 3 secret key)
//! 7       8     parameter fingerprint (see CkksParams::fingerprint)
//! 15      1     level (index of the highest active prime)
//! 16      8     scale (f64 LE; 0 for keys)
//! 24      8     value bound (f64 LE; 0 for keys)
//! 32      8     noise estimate in bits (f64 LE; 0 for keys)
//! 40      1     polynomial count
//! 41      ...   residues: for each polynomial, for each prime 0..=level,
//!               N little-endian u64 words (NTT form)
//! ```

use crate::ciphertext::Ciphertext;
use crate::context::CkksContext;
use crate::error::{CkksError, Result};
use crate::keys::{PublicKey, SecretKey};
use crate::poly::{Domain, RnsPoly};

pub const MAGIC: &[u8; 4] = b"HEFL";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ObjectKind {
    Ciphertext = 1,
    PublicKey = 2,
    SecretKey = 3,
}

impl ObjectKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ObjectKind::Ciphertext),
            2 => Some(ObjectKind::PublicKey),
            3 => Some(ObjectKind::SecretKey),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub kind: ObjectKind,
    pub fingerprint: [u8; 8],
    pub level: usize,
    pub scale: f64,
    pub value_bound: f64,
    pub noise_bits: f64,
    pub poly_count: usize,
}

fn write(ctx: &CkksContext, header: &Header, polys: &[&RnsPoly]) -> Vec<u8> {
    let n = ctx.params().ring_dim();
    let mut out = Vec::with_capacity(HEADER_LEN + polys.len() * (header.level + 1) * n * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(header.kind as u8);
    out.extend_from_slice(&header.fingerprint);
    out.push(header.level as u8);
    out.extend_from_slice(&header.scale.to_le_bytes());
    out.extend_from_slice(&header.value_bound.to_le_bytes());
    out.extend_from_slice(&header.noise_bits.to_le_bytes());
    out.push(polys.len() as u8);
    for p in polys {
        for r in p.residues() {
            for &x in r {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(CkksError::Parse {
                offset: self.buf.len(),
                message: format!("truncated while reading {what} (need {len} bytes at {})", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn parse_error(&self, offset: usize, message: impl Into<String>) -> CkksError {
        CkksError::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// Parses and checks the header against the context's parameter set.
pub fn read_header(ctx: &CkksContext, buf: &[u8]) -> Result<Header> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.parse_error(0, "bad magic"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(r.parse_error(4, format!("unsupported version {version}")));
    }
    let kind_byte = r.u8("kind")?;
    let kind =
        ObjectKind::from_byte(kind_byte).ok_or_else(|| r.parse_error(6, format!("unknown object kind {kind_byte}")))?;
    let fingerprint: [u8; 8] = r.take(8, "fingerprint")?.try_into().expect("8 bytes");
    if fingerprint != ctx.params().fingerprint() {
        return Err(r.parse_error(7, "parameter fingerprint does not match this context"));
    }
    let level = r.u8("level")? as usize;
    if level >= ctx.params().level_count() {
        return Err(r.parse_error(15, format!("level {level} outside the chain")));
    }
    let scale = r.f64("scale")?;
    let value_bound = r.f64("value bound")?;
    let noise_bits = r.f64("noise estimate")?;
    let poly_count = r.u8("polynomial count")? as usize;
    Ok(Header {
        kind,
        fingerprint,
        level,
        scale,
        value_bound,
        noise_bits,
        poly_count,
    })
}

fn read_polys(ctx: &CkksContext, buf: &[u8], header: &Header) -> Result<Vec<RnsPoly>> {
    let n = ctx.params().ring_dim();
    let moduli = ctx.moduli();
    let mut r = Reader { buf, pos: HEADER_LEN };
    let mut polys = Vec::with_capacity(header.poly_count);
    for _ in 0..header.poly_count {
        let mut residues = Vec::with_capacity(header.level + 1);
        for &q in &moduli[..=header.level] {
            let start = r.pos;
            let bytes = r.take(n * 8, "residues")?;
            let words: Vec<u64> = bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if let Some(i) = words.iter().position(|&x| x >= q) {
                return Err(r.parse_error(start + 8 * i, format!("residue not reduced mod {q}")));
            }
            residues.push(words);
        }
        polys.push(RnsPoly::from_residues(residues, Domain::Ntt));
    }
    if r.pos != buf.len() {
        return Err(r.parse_error(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(polys)
}

fn expect_shape(header: &Header, kind: ObjectKind, polys: usize) -> Result<()> {
    if header.kind != kind {
        return Err(CkksError::Parse {
            offset: 6,
            message: format!("expected {kind:?}, found {:?}", header.kind),
        });
    }
    if header.poly_count != polys {
        return Err(CkksError::Parse {
            offset: 40,
            message: format!("expected {polys} polynomials, found {}", header.poly_count),
        });
    }
    Ok(())
}

impl CkksContext {
    pub fn serialize_ciphertext(&self, ct: &Ciphertext) -> Vec<u8> {
        let header = Header {
            kind: ObjectKind::Ciphertext,
            fingerprint: self.params().fingerprint(),
            level: ct.level(),
            scale: ct.scale,
            value_bound: ct.value_bound,
            noise_bits: ct.noise_bits,
            poly_count: 2,
        };
        write(self, &header, &[&ct.c0, &ct.c1])
    }

    pub fn deserialize_ciphertext(&self, buf: &[u8]) -> Result<Ciphertext> {
        let header = read_header(self, buf)?;
        expect_shape(&header, ObjectKind::Ciphertext, 2)?;
        if header.level > self.params().max_data_level() {
            return Err(CkksError::Parse {
                offset: 15,
                message: format!("ciphertext level {} above the data levels", header.level),
            });
        }
        if !(header.scale.is_finite() && header.scale > 0.0) {
            return Err(CkksError::Parse {
                offset: 16,
                message: "scale is not positive".into(),
            });
        }
        let mut polys = read_polys(self, buf, &header)?;
        let c1 = polys.pop().expect("two polys");
        let c0 = polys.pop().expect("two polys");
        Ok(Ciphertext {
            c0,
            c1,
            scale: header.scale,
            value_bound: header.value_bound,
            noise_bits: header.noise_bits,
        })
    }

    pub fn serialize_public_key(&self, pk: &PublicKey) -> Vec<u8> {
        let header = self.key_header(ObjectKind::PublicKey, 2);
        write(self, &header, &[&pk.b, &pk.a])
    }

    pub fn deserialize_public_key(&self, buf: &[u8]) -> Result<PublicKey> {
        let header = read_header(self, buf)?;
        expect_shape(&header, ObjectKind::PublicKey, 2)?;
        self.expect_key_level(&header)?;
        let mut polys = read_polys(self, buf, &header)?;
        let a = polys.pop().expect("two polys");
        let b = polys.pop().expect("two polys");
        Ok(PublicKey::from_ntt(b, a, self.moduli()))
    }

    pub fn serialize_secret_key(&self, sk: &SecretKey) -> Vec<u8> {
        let header = self.key_header(ObjectKind::SecretKey, 1);
        write(self, &header, &[&sk.poly])
    }

    pub fn deserialize_secret_key(&self, buf: &[u8]) -> Result<SecretKey> {
        let header = read_header(self, buf)?;
        expect_shape(&header, ObjectKind::SecretKey, 1)?;
        self.expect_key_level(&header)?;
        let poly = read_polys(self, buf, &header)?.pop().expect("one poly");
        let sk = SecretKey::from_ntt(poly, self.moduli());
        if sk.ternary(self).iter().any(|x| !(-1..=1).contains(x)) {
            return Err(CkksError::Parse {
                offset: HEADER_LEN,
                message: "secret key is not ternary".into(),
            });
        }
        Ok(sk)
    }

    fn key_header(&self, kind: ObjectKind, poly_count: usize) -> Header {
        Header {
            kind,
            fingerprint: self.params().fingerprint(),
            level: self.params().key_level(),
            scale: 0.0,
            value_bound: 0.0,
            noise_bits: 0.0,
            poly_count,
        }
    }

    fn expect_key_level(&self, header: &Header) -> Result<()> {
        if header.level != self.params().key_level() {
            return Err(CkksError::Parse {
                offset: 15,
                message: format!("key level {} is not the full chain", header.level),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::CkksParams;

    #[test]
    fn ciphertext_roundtrip_is_bit_identical() {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (_, pk) = ctx.keygen(1);
        let ct = ctx.encrypt_values(&[0.25, -0.5], &pk, 9).unwrap();
        let bytes = ctx.serialize_ciphertext(&ct);
        assert_eq!(&bytes[..4], b"HEFL");
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 2 * 1024 * 8);
        let back = ctx.deserialize_ciphertext(&bytes).unwrap();
        assert_eq!(back, ct);
        assert_eq!(ctx.serialize_ciphertext(&back), bytes);
    }

    #[test]
    fn keys_roundtrip() {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (sk, pk) = ctx.keygen(1);
        let pk2 = ctx.deserialize_public_key(&ctx.serialize_public_key(&pk)).unwrap();
        let sk2 = ctx.deserialize_secret_key(&ctx.serialize_secret_key(&sk)).unwrap();
        assert_eq!(pk, pk2);
        assert_eq!(sk, sk2);
    }

    #[test]
    fn truncated_buffer_reports_offset() {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (_, pk) = ctx.keygen(1);
        let bytes = ctx.serialize_ciphertext(&ctx.encrypt_values(&[1.0], &pk, 2).unwrap());
        let cut = &bytes[..bytes.len() - 3];
        match ctx.deserialize_ciphertext(cut) {
            Err(CkksError::Parse { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            ctx.deserialize_ciphertext(&bytes[..10]),
            Err(CkksError::Parse { .. })
        ));
    }

    #[test]
    fn wrong_parameter_set_is_rejected() {
        let small = CkksContext::new(CkksParams::test_small()).unwrap();
        let other = CkksContext::new(
            CkksParams::generate(1024, &[40, 30, 40], 29.0, crate::params::SecurityProfile::Custom).unwrap(),
        )
        .unwrap();
        let (_, pk) = small.keygen(1);
        let bytes = small.serialize_ciphertext(&small.encrypt_values(&[1.0], &pk, 2).unwrap());
        assert!(matches!(
            other.deserialize_ciphertext(&bytes),
            Err(CkksError::Parse { offset: 7, .. })
        ));
    }

    #[test]
    fn kind_confusion_is_rejected() {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (sk, _) = ctx.keygen(1);
        let bytes = ctx.serialize_secret_key(&sk);
        assert!(ctx.deserialize_public_key(&bytes).is_err());
        assert!(ctx.deserialize_ciphertext(&bytes).is_err());
    }
}
