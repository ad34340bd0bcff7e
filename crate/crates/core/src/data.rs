//! Record types carried by dataflows, and the canonical encoding used for routing.
//!
//! Keys and values are ordered by their native `Ord`, which for the supported types coincides
//! with the byte order of their canonical encoding: unsigned integers big-endian, signed
//! integers big-endian with the sign bit flipped, strings as their UTF-8 bytes, and composites
//! lexicographically by field.

use std::fmt::Debug;
use std::hash::{Hash, Hasher};

/// Signed multiplicity change of a record.
pub type Diff = i64;

/// Bound for anything carried on a dataflow edge or stored in a batch.
pub trait Data: Clone + Ord + Hash + Debug + Send + Sync + 'static {}
impl<T: Clone + Ord + Hash + Debug + Send + Sync + 'static> Data for T {}

/// A fixed, platform-independent byte encoding.
pub trait Encode {
    fn encode(&self, out: &mut Vec<u8>);
}

/// Worker-routing hash: FNV-1a over the canonical encoding.
pub fn route_hash<T: Encode + ?Sized>(value: &T) -> u64 {
    let mut bytes = Vec::with_capacity(16);
    value.encode(&mut bytes);
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(&bytes);
    hasher.finish()
}

/// Data that can be routed between workers by key.
pub trait ExchangeData: Data + Encode {}
impl<T: Data + Encode> ExchangeData for T {}

macro_rules! encode_unsigned {
    ($($t:ty),*) => {$(
        impl Encode for $t {
            fn encode(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
        }
    )*};
}
encode_unsigned!(u8, u16, u32, u64, u128);

macro_rules! encode_signed {
    ($($t:ty => $u:ty),*) => {$(
        impl Encode for $t {
            fn encode(&self, out: &mut Vec<u8>) {
                let flipped = (*self as $u) ^ (1 << (<$u>::BITS - 1));
                out.extend_from_slice(&flipped.to_be_bytes());
            }
        }
    )*};
}
encode_signed!(i8 => u8, i16 => u16, i32 => u32, i64 => u64);

impl Encode for usize {
    fn encode(&self, out: &mut Vec<u8>) {
        (*self as u64).encode(out)
    }
}

impl Encode for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Encode for () {
    fn encode(&self, _out: &mut Vec<u8>) {}
}

impl Encode for str {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.as_bytes());
        out.push(0);
    }
}

impl Encode for String {
    fn encode(&self, out: &mut Vec<u8>) {
        self.as_str().encode(out)
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(x) => {
                out.push(1);
                x.encode(out);
            }
        }
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        for x in self.iter() {
            x.encode(out);
        }
    }
}

impl<T: Encode + ?Sized> Encode for &T {
    fn encode(&self, out: &mut Vec<u8>) {
        (**self).encode(out)
    }
}

macro_rules! encode_tuple {
    ($($name:ident)+) => {
        #[allow(non_snake_case)]
        impl<$($name: Encode),+> Encode for ($($name,)+) {
            fn encode(&self, out: &mut Vec<u8>) {
                let ($($name,)+) = self;
                $($name.encode(out);)+
            }
        }
    };
}
encode_tuple!(A);
encode_tuple!(A B);
encode_tuple!(A B C);
encode_tuple!(A B C D);
encode_tuple!(A B C D E);

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes<T: Encode>(x: T) -> Vec<u8> {
        let mut out = Vec::new();
        x.encode(&mut out);
        out
    }

    #[test]
    fn encoding_order_matches_native_order() {
        let ints = [-5i64, -1, 0, 3, i64::MAX];
        for w in ints.windows(2) {
            assert!(bytes(w[0]) < bytes(w[1]));
        }
        assert!(bytes((1u64, 9u64)) < bytes((2u64, 0u64)));
        assert!(bytes("ab".to_string()) < bytes("b".to_string()));
    }

    #[test]
    fn route_hash_is_fnv1a() {
        // FNV-1a of the empty input is the offset basis.
        assert_eq!(route_hash(&()), 0xcbf29ce484222325);
        assert_eq!(route_hash(&7u64), route_hash(&7u64));
        assert_ne!(route_hash(&7u64), route_hash(&8u64));
    }
}
